//! Parsers for the three formula mini-languages: data transformation
//! (`Surv(time, status) ~ ... | specials`), model terms (`s()`, `te()`, ...)
//! and simulator hazard expressions.
//!
//! On a transformation or hazard right-hand side `|` binds loosest: everything
//! before the first `|` is the ordinary part, everything after it is a
//! `+`-separated list of specials.

mod hazard;
mod lexer;
mod model;
mod transform;

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub use hazard::{default_f0, dgamma, dnorm, parse_hazard_expression, BinOp, CumuNode, Expr, Func, HazardExpr, PartialEffect};
pub use model::{parse_model_formula, ByVar, ModelSpec, TermSpec, DEFAULT_K};
pub use transform::{
    parse_transform_formula, Component, ConcurrentTerm, CumulativeTerm, KeepCovariates, TransformSpec,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormulaError {
    #[error("syntax error at position {position}: expected {expected}, found {found}")]
    Syntax {
        position: usize,
        expected: String,
        found: String,
    },
    #[error("tz_var `{0}` is used by more than one special")]
    DuplicateTzVar(String),
    #[error("unknown special `{0}` (expected `concurrent` or `cumulative`)")]
    UnknownSpecial(String),
    #[error("invalid `by` product at position {position}: at most two factors are allowed")]
    InvalidByProduct { position: usize },
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("unknown builtin partial effect `{0}` (expected f_wce, f_dlnm or f_elra)")]
    UnknownBuiltinPartialEffect(String),
    #[error("invalid formula: {0}")]
    Invalid(String),
}

impl FormulaError {
    /// Byte offset for syntax-type errors.
    pub fn position(&self) -> Option<usize> {
        match self {
            FormulaError::Syntax { position, .. } | FormulaError::InvalidByProduct { position } => Some(*position),
            _ => None,
        }
    }
}

/// Window of exposure times that may affect the hazard in an interval
/// `(tstart, tend]`.
///
/// * `Default`: `tstart >= tz`
/// * `Lagged(lag)`: `tstart >= tz + lag`
/// * `Window(lag, lead)`: `tstart >= tz + lag` and `tend <= tz + lag + lead`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LagLeadSpec {
    #[default]
    Default,
    Lagged {
        lag: f64,
    },
    Window {
        lag: f64,
        lead: f64,
    },
}

const WINDOW_EPS: f64 = 1e-9;

impl LagLeadSpec {
    pub fn lagged(lag: f64) -> Result<Self, FormulaError> {
        if !(lag >= 0.0 && lag.is_finite()) {
            return Err(FormulaError::Invalid(format!("lag must be finite and >= 0, got {lag}")));
        }
        Ok(LagLeadSpec::Lagged { lag })
    }

    pub fn window(lag: f64, lead: f64) -> Result<Self, FormulaError> {
        if !(lag >= 0.0 && lag.is_finite()) {
            return Err(FormulaError::Invalid(format!("lag must be finite and >= 0, got {lag}")));
        }
        if !(lead > 0.0) {
            return Err(FormulaError::Invalid(format!("lead must be > 0, got {lead}")));
        }
        Ok(LagLeadSpec::Window { lag, lead })
    }

    /// Whether exposure at `tz` is inside the window of interval `(tstart, tend]`.
    pub fn contains(&self, tstart: f64, tend: f64, tz: f64) -> bool {
        match *self {
            LagLeadSpec::Default => tstart >= tz - WINDOW_EPS,
            LagLeadSpec::Lagged { lag } => tstart >= tz + lag - WINDOW_EPS,
            LagLeadSpec::Window { lag, lead } => {
                tstart >= tz + lag - WINDOW_EPS && tend <= tz + lag + lead + WINDOW_EPS
            }
        }
    }
}

impl fmt::Display for LagLeadSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LagLeadSpec::Default => f.write_str("default"),
            LagLeadSpec::Lagged { lag } => write!(f, "lagged({lag})"),
            LagLeadSpec::Window { lag, lead } => write!(f, "window({lag}, {lead})"),
        }
    }
}

/// `default` | `lagged(lag)` | `window(lag, lead)`, arguments optionally named.
fn parse_laglead(cur: &mut lexer::Cursor) -> Result<LagLeadSpec, FormulaError> {
    let (name, pos) = cur.ident("a lag-lead specification (default, lagged, window)")?;
    match name.as_str() {
        "default" => {
            if cur.eat(&lexer::Tok::LParen) {
                cur.expect(&lexer::Tok::RParen, "`)`")?;
            }
            Ok(LagLeadSpec::Default)
        }
        "lagged" | "window" => {
            cur.expect(&lexer::Tok::LParen, "`(`")?;
            let mut lag = None;
            let mut lead = None;
            let mut positional = 0;
            loop {
                if *cur.peek() == lexer::Tok::RParen {
                    break;
                }
                let named = match (cur.peek().clone(), cur.peek_at(1).clone()) {
                    (lexer::Tok::Ident(n), lexer::Tok::Eq) if n == "lag" || n == "lead" => {
                        cur.bump();
                        cur.bump();
                        Some(n)
                    }
                    _ => None,
                };
                let v = cur.number("a number")?;
                match named.as_deref() {
                    Some("lag") => lag = Some(v),
                    Some("lead") => lead = Some(v),
                    _ => {
                        match positional {
                            0 => lag = Some(v),
                            1 if name == "window" => lead = Some(v),
                            _ => return Err(cur.error("`)`")),
                        }
                        positional += 1;
                    }
                }
                if !cur.eat(&lexer::Tok::Comma) {
                    break;
                }
            }
            let close = cur.pos();
            cur.expect(&lexer::Tok::RParen, "`)`")?;
            let lag = lag.unwrap_or(0.0);
            if name == "lagged" {
                LagLeadSpec::lagged(lag)
            } else {
                let lead = lead.ok_or_else(|| FormulaError::Syntax {
                    position: close,
                    expected: "window(lag, lead)".into(),
                    found: "missing lead".into(),
                })?;
                LagLeadSpec::window(lag, lead)
            }
        }
        _ => Err(FormulaError::Syntax {
            position: pos,
            expected: "a lag-lead specification (default, lagged, window)".into(),
            found: format!("`{name}`"),
        }),
    }
}
