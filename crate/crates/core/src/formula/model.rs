use super::lexer::{Cursor, Tok};
use super::FormulaError;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Basis dimension used when a smooth does not set `k`.
pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ByVar {
    Single(String),
    Product(String, String),
}

impl ByVar {
    pub fn names(&self) -> Vec<&str> {
        match self {
            ByVar::Single(a) => vec![a],
            ByVar::Product(a, b) => vec![a, b],
        }
    }
}

impl fmt::Display for ByVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ByVar::Single(a) => f.write_str(a),
            ByVar::Product(a, b) => write!(f, "{a}*{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TermSpec {
    Linear(String),
    /// `a:b`, the product of two covariates (a factor expands to dummies).
    Interaction(String, String),
    Smooth {
        var: String,
        by: Option<ByVar>,
        k: usize,
    },
    Tensor {
        vars: Vec<String>,
        by: Option<ByVar>,
        k: Vec<usize>,
    },
}

impl TermSpec {
    /// Label used in term maps and reports, e.g. `s(tz_latency):z.tz*LL`.
    pub fn label(&self) -> String {
        match self {
            TermSpec::Linear(v) => v.clone(),
            TermSpec::Interaction(a, b) => format!("{a}:{b}"),
            TermSpec::Smooth { var, by, .. } => match by {
                Some(b) => format!("s({var}):{b}"),
                None => format!("s({var})"),
            },
            TermSpec::Tensor { vars, by, .. } => match by {
                Some(b) => format!("te({}):{b}", vars.join(",")),
                None => format!("te({})", vars.join(",")),
            },
        }
    }

    /// Every covariate name the term reads.
    pub fn variables(&self) -> Vec<&str> {
        let mut out: Vec<&str> = match self {
            TermSpec::Linear(v) => vec![v],
            TermSpec::Interaction(a, b) => vec![a, b],
            TermSpec::Smooth { var, .. } => vec![var],
            TermSpec::Tensor { vars, .. } => vars.iter().map(|s| s.as_str()).collect(),
        };
        if let TermSpec::Smooth { by: Some(b), .. } | TermSpec::Tensor { by: Some(b), .. } = self {
            out.extend(b.names());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub terms: Vec<TermSpec>,
    pub offset_col: String,
}

pub fn parse_model_formula(text: &str) -> Result<ModelSpec, FormulaError> {
    let mut cur = Cursor::new(text)?;
    let (response, _) = cur.ident("response name")?;
    cur.expect(&Tok::Tilde, "`~`")?;
    let mut terms = Vec::new();
    loop {
        if let Tok::Num(v) = *cur.peek() {
            if v == 1.0 {
                cur.bump();
            } else {
                return Err(cur.error("a model term"));
            }
        } else {
            terms.push(parse_term(&mut cur)?);
        }
        if !cur.eat(&Tok::Plus) {
            break;
        }
    }
    cur.finish()?;
    Ok(ModelSpec {
        response,
        terms,
        offset_col: "offset".to_string(),
    })
}

fn parse_term(cur: &mut Cursor) -> Result<TermSpec, FormulaError> {
    let (name, _) = cur.ident("a model term")?;
    if *cur.peek() == Tok::LParen && (name == "s" || name == "te") {
        cur.bump();
        let mut vars = Vec::new();
        let mut by = None;
        let mut k: Option<Vec<usize>> = None;
        loop {
            if matches!(cur.peek_at(1), Tok::Eq) {
                let (arg, arg_pos) = cur.ident("argument name")?;
                cur.bump();
                match arg.as_str() {
                    "by" => by = Some(parse_by(cur)?),
                    "k" => k = Some(parse_k(cur)?),
                    _ => {
                        return Err(FormulaError::Syntax {
                            position: arg_pos,
                            expected: "`by` or `k`".into(),
                            found: format!("identifier `{arg}`"),
                        })
                    }
                }
            } else {
                vars.push(cur.ident("smooth covariate")?.0);
            }
            if !cur.eat(&Tok::Comma) {
                break;
            }
        }
        let close = cur.pos();
        cur.expect(&Tok::RParen, "`)`")?;
        if vars.is_empty() {
            return Err(FormulaError::Syntax {
                position: close,
                expected: "a smooth covariate".into(),
                found: "`)`".into(),
            });
        }
        if name == "s" {
            if vars.len() != 1 {
                return Err(FormulaError::Invalid(format!(
                    "s() takes one covariate, got {}; use te() for tensor products",
                    vars.len()
                )));
            }
            let k = match k.as_deref() {
                None => DEFAULT_K,
                Some([k]) => *k,
                Some(_) => return Err(FormulaError::Invalid("s() takes a single k".into())),
            };
            Ok(TermSpec::Smooth {
                var: vars.remove(0),
                by,
                k,
            })
        } else {
            if vars.len() < 2 {
                return Err(FormulaError::Invalid("te() needs at least two covariates".into()));
            }
            let k = match k {
                None => vec![DEFAULT_K; vars.len()],
                Some(k) if k.len() == 1 => vec![k[0]; vars.len()],
                Some(k) if k.len() == vars.len() => k,
                Some(k) => {
                    return Err(FormulaError::Invalid(format!(
                        "te() has {} margins but {} basis dimensions",
                        vars.len(),
                        k.len()
                    )))
                }
            };
            Ok(TermSpec::Tensor { vars, by, k })
        }
    } else if cur.eat(&Tok::Colon) {
        let (other, _) = cur.ident("covariate name")?;
        Ok(TermSpec::Interaction(name, other))
    } else {
        Ok(TermSpec::Linear(name))
    }
}

fn parse_by(cur: &mut Cursor) -> Result<ByVar, FormulaError> {
    let (a, _) = cur.ident("by variable")?;
    if *cur.peek() != Tok::Star {
        return Ok(ByVar::Single(a));
    }
    cur.bump();
    let (b, _) = cur.ident("by variable")?;
    if *cur.peek() == Tok::Star {
        return Err(FormulaError::InvalidByProduct { position: cur.pos() });
    }
    Ok(ByVar::Product(a, b))
}

fn parse_k(cur: &mut Cursor) -> Result<Vec<usize>, FormulaError> {
    let int = |cur: &mut Cursor| -> Result<usize, FormulaError> {
        let pos = cur.pos();
        let v = cur.number("an integer basis dimension")?;
        if v.fract() != 0.0 || v < 1.0 {
            return Err(FormulaError::Syntax {
                position: pos,
                expected: "a positive integer".into(),
                found: format!("number `{v}`"),
            });
        }
        Ok(v as usize)
    };
    if matches!(cur.peek(), Tok::Ident(s) if s == "c") {
        cur.bump();
        cur.expect(&Tok::LParen, "`(`")?;
        let mut ks = vec![int(cur)?];
        while cur.eat(&Tok::Comma) {
            ks.push(int(cur)?);
        }
        cur.expect(&Tok::RParen, "`)`")?;
        Ok(ks)
    } else {
        Ok(vec![int(cur)?])
    }
}

impl fmt::Display for TermSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TermSpec::Linear(v) => f.write_str(v),
            TermSpec::Interaction(a, b) => write!(f, "{a}:{b}"),
            TermSpec::Smooth { var, by, k } => {
                write!(f, "s({var}")?;
                if let Some(b) = by {
                    write!(f, ", by = {b}")?;
                }
                write!(f, ", k = {k})")
            }
            TermSpec::Tensor { vars, by, k } => {
                write!(f, "te({}", vars.join(", "))?;
                if let Some(b) = by {
                    write!(f, ", by = {b}")?;
                }
                let ks: Vec<String> = k.iter().map(|k| k.to_string()).collect();
                write!(f, ", k = c({}))", ks.join(", "))
            }
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ~ ", self.response)?;
        if self.terms.is_empty() {
            return f.write_str("1");
        }
        let t: Vec<String> = self.terms.iter().map(|t| t.to_string()).collect();
        f.write_str(&t.join(" + "))
    }
}
