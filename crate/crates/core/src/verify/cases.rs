//! Fuzz case construction: seeds from history or synthesis, then
//! single-operation mutants over funds and inputs.

use rand::Rng;
use serde::Serialize;

use crate::analysis::CandidateEntry;
use crate::chain::{ChainStore, TransactionRecord};
use crate::ir::abi::{abi_of, encode_call, keccak256, split_selector, decode_args, Value};
use crate::ir::{IrError, ParamType};
use crate::types::{Address, TxHash, Word};

/// Stand-in for an attacker-controlled account in address mutants.
pub const ATTACKER: Address = Address([
    0xa7, 0x7a, 0xc4, 0xe5, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0xa7, 0x7a,
]);

/// Hard cap on mutants derived from one seed.
pub const MAX_MUTANTS_PER_SEED: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Limits {
    pub txs_per_entry: usize,
    pub fund_fuzz: bool,
    pub input_fuzz: bool,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { txs_per_entry: 300, fund_fuzz: true, input_fuzz: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Seed {
    Historical { hash: TxHash },
    /// Built from the ABI, borrowing the victim transaction's environment.
    Synthesized { from: TxHash },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FundScale {
    Zero,
    Half,
    Double,
    TenX,
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum Mutation {
    Fund {
        scale: FundScale,
        #[serde(with = "crate::types::word_hex")]
        value: Word,
    },
    Input { index: usize, value: Value },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Lineage {
    pub seed: Seed,
    pub mutations: Vec<Mutation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FuzzCase {
    pub tx: TransactionRecord,
    pub lineage: Lineage,
    /// Random draws consumed while producing this case.
    pub rng_draws: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum CaseError {
    #[error("entry contract {0} is not known")]
    UnknownContract(Address),
    #[error(transparent)]
    Ir(#[from] IrError),
}

fn derived_hash(parts: &[&[u8]]) -> TxHash {
    TxHash(keccak256(&parts.concat()))
}

fn random_word(rng: &mut impl Rng) -> Word {
    Word::from_big_endian(&rng.gen::<[u8; 32]>())
}

fn default_arg(ty: ParamType, tx_o: &TransactionRecord) -> Value {
    match ty {
        ParamType::Uint256 | ParamType::Bool => Value::Word(Word::zero()),
        ParamType::Address => Value::address(tx_o.sender),
        ParamType::Bytes => Value::Bytes(Vec::new()),
    }
}

/// Builds the case list for one entry function against one victim
/// transaction. `history` holds transactions to the entry contract, newest
/// first; only those calling the entry function become seeds.
pub fn build_candidate_list(
    fun: &CandidateEntry,
    tx_o: &TransactionRecord,
    history: &[TransactionRecord],
    store: &ChainStore,
    limits: Limits,
    rng: &mut impl Rng,
) -> Result<Vec<FuzzCase>, CaseError> {
    let entry = &fun.entry_fn;
    let contract = store.contract(entry.contract).ok_or(CaseError::UnknownContract(entry.contract))?;
    let def = contract.ir.function(&entry.function).ok_or_else(|| IrError::UnknownFunction(entry.function.clone()))?;
    let abi = abi_of(&contract.ir, &entry.function)?;
    let receive = def.is_receive();
    let calls_entry = |tx: &TransactionRecord| match split_selector(&tx.calldata) {
        Ok((sel, _)) => !receive && sel == abi.selector,
        Err(_) => receive && tx.calldata.is_empty(),
    };

    let mut seeds: Vec<FuzzCase> = history
        .iter()
        .filter(|tx| tx.to == Some(entry.contract) && calls_entry(tx))
        .take(limits.txs_per_entry)
        .map(|tx| FuzzCase {
            tx: tx.clone(),
            lineage: Lineage { seed: Seed::Historical { hash: tx.hash }, mutations: vec![] },
            rng_draws: 0,
        })
        .collect();
    if seeds.is_empty() {
        let args: Vec<Value> = abi.params.iter().map(|t| default_arg(*t, tx_o)).collect();
        let calldata = if receive { Vec::new() } else { encode_call(abi.selector, &abi.params, &args).expect("default args match") };
        seeds.push(FuzzCase {
            tx: TransactionRecord {
                hash: derived_hash(&[b"synth", &tx_o.hash.0, entry.to_string().as_bytes()]),
                sender: tx_o.sender,
                to: Some(entry.contract),
                value: Word::zero(),
                calldata,
                block_number: tx_o.block_number,
                timestamp: tx_o.timestamp,
            },
            lineage: Lineage { seed: Seed::Synthesized { from: tx_o.hash }, mutations: vec![] },
            rng_draws: 0,
        });
    }

    let mut known: Vec<Address> = store.contracts().map(|c| c.address()).collect();
    known.sort();
    let mut out = Vec::new();
    for seed in seeds {
        let mut mutants = Vec::new();
        if abi.payable && limits.fund_fuzz {
            fund_mutants(&seed, rng, &mut mutants);
        }
        if !abi.params.is_empty() && limits.input_fuzz {
            if let Ok((_, body)) = split_selector(&seed.tx.calldata) {
                // Historical calldata that does not decode is kept as a seed only.
                if let Ok(args) = decode_args(&abi.params, body) {
                    input_mutants(&seed, &abi.params, &args, tx_o, &known, rng, &mut mutants);
                }
            }
        }
        mutants.truncate(MAX_MUTANTS_PER_SEED);
        out.push(seed);
        out.extend(mutants);
    }
    Ok(out)
}

fn mutant(seed: &FuzzCase, m: Mutation, draws: u32, idx: usize, tx: TransactionRecord) -> FuzzCase {
    let hash = derived_hash(&[&seed.tx.hash.0, &(idx as u64).to_be_bytes()]);
    FuzzCase {
        tx: TransactionRecord { hash, ..tx },
        lineage: Lineage { seed: seed.lineage.seed.clone(), mutations: vec![m] },
        rng_draws: draws,
    }
}

fn fund_mutants(seed: &FuzzCase, rng: &mut impl Rng, out: &mut Vec<FuzzCase>) {
    let v = seed.tx.value;
    let scales = [
        (FundScale::Zero, Word::zero()),
        (FundScale::Half, v / 2),
        (FundScale::Double, v.saturating_mul(Word::from(2))),
        (FundScale::TenX, v.saturating_mul(Word::from(10))),
        (FundScale::Random, random_word(rng)),
    ];
    for (scale, value) in scales {
        let draws = u32::from(scale == FundScale::Random);
        let tx = TransactionRecord { value, ..seed.tx.clone() };
        let idx = out.len();
        out.push(mutant(seed, Mutation::Fund { scale, value }, draws, idx, tx));
    }
}

fn input_mutants(
    seed: &FuzzCase,
    types: &[ParamType],
    args: &[Value],
    tx_o: &TransactionRecord,
    known: &[Address],
    rng: &mut impl Rng,
    out: &mut Vec<FuzzCase>,
) {
    let (selector, _) = split_selector(&seed.tx.calldata).expect("checked by caller");
    for (index, ty) in types.iter().enumerate() {
        let mut draws = Vec::new();
        match ty {
            ParamType::Uint256 => {
                draws.push((Value::Word(Word::zero()), 0));
                draws.push((Value::Word(Word::one()), 0));
                draws.push((Value::Word(Word::MAX), 0));
                draws.push((Value::Word(random_word(rng)), 1));
            }
            ParamType::Address => {
                draws.push((Value::address(tx_o.sender), 0));
                draws.push((Value::address(Address::ZERO), 0));
                draws.push((Value::address(ATTACKER), 0));
                if !known.is_empty() {
                    draws.push((Value::address(known[rng.gen_range(0..known.len())]), 1));
                }
            }
            ParamType::Bool => {
                let flipped = args[index].word().is_some_and(|w| w.is_zero());
                draws.push((Value::bool(flipped), 0));
            }
            ParamType::Bytes => {
                draws.push((Value::Bytes(Vec::new()), 0));
                let len = rng.gen_range(1..=64);
                draws.push((Value::Bytes((0..len).map(|_| rng.gen()).collect()), 2));
            }
        }
        for (value, n) in draws {
            let mut new_args = args.to_vec();
            new_args[index] = value.clone();
            let calldata = encode_call(selector, types, &new_args).expect("types preserved");
            let tx = TransactionRecord { calldata, ..seed.tx.clone() };
            let idx = out.len();
            out.push(mutant(seed, Mutation::Input { index, value }, n, idx, tx));
        }
    }
}
