//! Expression language used inside function bodies.
//!
//! Expressions are written as prefix S-expressions, e.g.
//! `(== msg.sender (sload owner))` or `(/ (* share (sload balance)) (sload totalToken))`.
//! Bare atoms (`msg.sender`, `42`, `0x1f`, `amount`) are valid expressions too.

use std::fmt;

use crate::types::{parse_word, Word};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    fn from_symbol(s: &str) -> Option<Self> {
        Some(match s {
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            "/" => BinOp::Div,
            "%" => BinOp::Rem,
            "<" => BinOp::Lt,
            "<=" => BinOp::Le,
            ">" => BinOp::Gt,
            ">=" => BinOp::Ge,
            "==" => BinOp::Eq,
            "!=" => BinOp::Ne,
            "and" | "&&" => BinOp::And,
            "or" | "||" => BinOp::Or,
            _ => return None,
        })
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Lit(Word),
    /// A local or a parameter.
    Var(String),
    Sender,
    Value,
    SelfAddr,
    Timestamp,
    BlockNumber,
    /// Storage read of a state variable, with a key for address-keyed maps.
    Sload { var: String, key: Option<Box<Expr>> },
    Not(Box<Expr>),
    Len(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("expression `{src}`: {msg}")]
pub struct ExprError {
    pub src: String,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn tokenize(src: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in src.chars() {
        match c {
            '(' | ')' => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn read_sexp(tokens: &[String], pos: &mut usize) -> Result<Sexp, String> {
    let tok = tokens.get(*pos).ok_or("unexpected end of input")?;
    *pos += 1;
    match tok.as_str() {
        "(" => {
            let mut items = Vec::new();
            loop {
                match tokens.get(*pos).map(String::as_str) {
                    None => return Err("unbalanced `(`".into()),
                    Some(")") => {
                        *pos += 1;
                        return Ok(Sexp::List(items));
                    }
                    Some(_) => items.push(read_sexp(tokens, pos)?),
                }
            }
        }
        ")" => Err("unexpected `)`".into()),
        atom => Ok(Sexp::Atom(atom.to_string())),
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn lower(s: &Sexp) -> Result<Expr, String> {
    match s {
        Sexp::Atom(a) => lower_atom(a),
        Sexp::List(items) => {
            let (head, args) = match items.split_first() {
                Some((Sexp::Atom(h), rest)) => (h.as_str(), rest),
                Some(_) => return Err("list head must be an operator".into()),
                None => return Err("empty list".into()),
            };
            let arity = |n: usize| -> Result<(), String> {
                if args.len() == n {
                    Ok(())
                } else {
                    Err(format!("`{head}` expects {n} operand(s), got {}", args.len()))
                }
            };
            match head {
                "sload" => {
                    let var = match args.first() {
                        Some(Sexp::Atom(v)) if is_ident(v) => v.clone(),
                        _ => return Err("`sload` expects a state variable name".into()),
                    };
                    let key = match args.len() {
                        1 => None,
                        2 => Some(Box::new(lower(&args[1])?)),
                        n => return Err(format!("`sload` expects 1 or 2 operands, got {n}")),
                    };
                    Ok(Expr::Sload { var, key })
                }
                "not" | "!" => {
                    arity(1)?;
                    Ok(Expr::Not(Box::new(lower(&args[0])?)))
                }
                "len" => {
                    arity(1)?;
                    Ok(Expr::Len(Box::new(lower(&args[0])?)))
                }
                op => {
                    let op = BinOp::from_symbol(op).ok_or_else(|| format!("unknown operator `{op}`"))?;
                    if args.len() < 2 {
                        return Err(format!("`{}` expects at least 2 operands", op.symbol()));
                    }
                    // n-ary forms fold left: (+ a b c) == (+ (+ a b) c)
                    let mut acc = lower(&args[0])?;
                    for a in &args[1..] {
                        acc = Expr::Bin(op, Box::new(acc), Box::new(lower(a)?));
                    }
                    Ok(acc)
                }
            }
        }
    }
}

fn lower_atom(a: &str) -> Result<Expr, String> {
    Ok(match a {
        "msg.sender" => Expr::Sender,
        "msg.value" => Expr::Value,
        "this" => Expr::SelfAddr,
        "block.timestamp" => Expr::Timestamp,
        "block.number" => Expr::BlockNumber,
        "true" => Expr::Lit(Word::one()),
        "false" => Expr::Lit(Word::zero()),
        "max" => Expr::Lit(Word::MAX),
        a if a.starts_with(|c: char| c.is_ascii_digit()) => {
            Expr::Lit(parse_word(a).map_err(|e| e.to_string())?)
        }
        a if is_ident(a) => Expr::Var(a.to_string()),
        a => return Err(format!("invalid atom `{a}`")),
    })
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        let err = |msg: String| ExprError { src: src.to_string(), msg };
        let tokens = tokenize(src);
        if tokens.is_empty() {
            return Err(err("empty expression".into()));
        }
        let mut pos = 0;
        let sexp = read_sexp(&tokens, &mut pos).map_err(err)?;
        if pos != tokens.len() {
            return Err(err("trailing tokens".into()));
        }
        lower(&sexp).map_err(err)
    }

    /// Visits every sub-expression, outermost first.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Sload { key: Some(k), .. } => k.walk(f),
            Expr::Not(e) | Expr::Len(e) => e.walk(f),
            Expr::Bin(_, a, b) => {
                a.walk(f);
                b.walk(f);
            }
            _ => {}
        }
    }

    /// State variables read by this expression, in evaluation order.
    pub fn state_reads(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let Expr::Sload { var, .. } = e {
                out.push(var.as_str());
            }
        });
        out
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(w) => write!(f, "{w}"),
            Expr::Var(v) => f.write_str(v),
            Expr::Sender => f.write_str("msg.sender"),
            Expr::Value => f.write_str("msg.value"),
            Expr::SelfAddr => f.write_str("this"),
            Expr::Timestamp => f.write_str("block.timestamp"),
            Expr::BlockNumber => f.write_str("block.number"),
            Expr::Sload { var, key: None } => write!(f, "(sload {var})"),
            Expr::Sload { var, key: Some(k) } => write!(f, "(sload {var} {k})"),
            Expr::Not(e) => write!(f, "(not {e})"),
            Expr::Len(e) => write!(f, "(len {e})"),
            Expr::Bin(op, a, b) => write!(f, "({} {a} {b})", op.symbol()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_forms() {
        let e = Expr::parse("(/ (* share (sload balance)) (sload totalToken))").unwrap();
        assert_eq!(e.state_reads(), vec!["balance", "totalToken"]);
        assert_eq!(e.to_string(), "(/ (* share (sload balance)) (sload totalToken))");
    }

    #[test]
    fn atoms() {
        assert_eq!(Expr::parse("msg.sender").unwrap(), Expr::Sender);
        assert_eq!(Expr::parse("0x10").unwrap(), Expr::Lit(Word::from(16)));
        assert_eq!(Expr::parse(" amount ").unwrap(), Expr::Var("amount".into()));
        assert_eq!(Expr::parse("(sload allowed msg.sender)").unwrap(), Expr::Sload {
            var: "allowed".into(),
            key: Some(Box::new(Expr::Sender))
        });
    }

    #[test]
    fn nary_folds_left() {
        let e = Expr::parse("(+ 1 2 3)").unwrap();
        assert_eq!(e.to_string(), "(+ (+ 1 2) 3)");
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["", "(", ")", "(+ 1)", "(foo 1 2)", "(sload)", "1 2", "a-b", "(not 1 2)"] {
            assert!(Expr::parse(bad).is_err(), "accepted `{bad}`");
        }
    }
}
