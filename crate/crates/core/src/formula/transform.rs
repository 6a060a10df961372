use super::lexer::{Cursor, Tok};
use super::{parse_laglead, FormulaError, LagLeadSpec};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KeepCovariates {
    All,
    Names(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcurrentTerm {
    pub covariates: Vec<String>,
    pub tz_var: String,
}

/// One argument of `cumulative(...)`: a column name, optionally wrapped in
/// `latency()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub latency: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeTerm {
    pub components: Vec<Component>,
    pub tz_var: String,
    pub ll: LagLeadSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub time_col: String,
    pub status_col: String,
    pub keep: KeepCovariates,
    pub concurrent: Vec<ConcurrentTerm>,
    pub cumulative: Vec<CumulativeTerm>,
}

impl TransformSpec {
    pub fn tz_vars(&self) -> Vec<&str> {
        self.concurrent
            .iter()
            .map(|c| c.tz_var.as_str())
            .chain(self.cumulative.iter().map(|c| c.tz_var.as_str()))
            .collect()
    }
}

/// Parse `Surv(<time>, <status>) ~ <rhs> [| special + special ...]`.
pub fn parse_transform_formula(text: &str) -> Result<TransformSpec, FormulaError> {
    let mut cur = Cursor::new(text)?;
    let (surv, pos) = cur.ident("`Surv(`")?;
    if surv != "Surv" {
        return Err(FormulaError::Syntax {
            position: pos,
            expected: "`Surv(`".into(),
            found: format!("identifier `{surv}`"),
        });
    }
    cur.expect(&Tok::LParen, "`(`")?;
    let (time_col, _) = cur.ident("time column name")?;
    cur.expect(&Tok::Comma, "`,`")?;
    let (status_col, status_pos) = cur.ident("status column name")?;
    cur.expect(&Tok::RParen, "`)`")?;
    if time_col == status_col {
        return Err(FormulaError::Syntax {
            position: status_pos,
            expected: "a status column different from the time column".into(),
            found: format!("identifier `{status_col}`"),
        });
    }
    cur.expect(&Tok::Tilde, "`~`")?;

    let keep = if cur.eat(&Tok::Dot) {
        KeepCovariates::All
    } else {
        let mut names = Vec::new();
        if matches!(cur.peek(), Tok::Ident(_)) {
            names.push(cur.ident("covariate name")?.0);
            while cur.eat(&Tok::Plus) {
                names.push(cur.ident("covariate name")?.0);
            }
        }
        KeepCovariates::Names(names)
    };

    let mut spec = TransformSpec {
        time_col,
        status_col,
        keep,
        concurrent: Vec::new(),
        cumulative: Vec::new(),
    };

    if cur.eat(&Tok::Pipe) {
        loop {
            parse_special(&mut cur, &mut spec)?;
            if !cur.eat(&Tok::Plus) {
                break;
            }
        }
    }
    cur.finish()?;

    let mut seen = HashSet::new();
    for tz in spec.tz_vars() {
        if !seen.insert(tz.to_string()) {
            return Err(FormulaError::DuplicateTzVar(tz.to_string()));
        }
    }
    Ok(spec)
}

fn parse_special(cur: &mut Cursor, spec: &mut TransformSpec) -> Result<(), FormulaError> {
    let (name, _) = cur.ident("`concurrent(` or `cumulative(`")?;
    if name != "concurrent" && name != "cumulative" {
        return Err(FormulaError::UnknownSpecial(name));
    }
    cur.expect(&Tok::LParen, "`(`")?;
    let mut components: Vec<Component> = Vec::new();
    let mut tz_var: Option<String> = None;
    let mut ll: Option<LagLeadSpec> = None;
    loop {
        let is_named = matches!(cur.peek_at(1), Tok::Eq);
        if is_named {
            let (arg, arg_pos) = cur.ident("argument name")?;
            cur.bump();
            match arg.as_str() {
                "tz_var" => tz_var = Some(cur.name_or_string("tz_var name")?),
                "ll_fun" if name == "cumulative" => ll = Some(parse_laglead(cur)?),
                _ => {
                    return Err(FormulaError::Syntax {
                        position: arg_pos,
                        expected: "`tz_var` or `ll_fun`".into(),
                        found: format!("identifier `{arg}`"),
                    })
                }
            }
        } else {
            let (comp, _) = cur.ident("column name")?;
            if comp == "latency" && *cur.peek() == Tok::LParen && name == "cumulative" {
                cur.bump();
                let (inner, _) = cur.ident("exposure time variable")?;
                cur.expect(&Tok::RParen, "`)`")?;
                components.push(Component {
                    name: inner,
                    latency: true,
                });
            } else {
                components.push(Component {
                    name: comp,
                    latency: false,
                });
            }
        }
        if !cur.eat(&Tok::Comma) {
            break;
        }
    }
    let close = cur.pos();
    cur.expect(&Tok::RParen, "`)`")?;

    let tz_var = tz_var.ok_or_else(|| FormulaError::Syntax {
        position: close,
        expected: format!("`tz_var = ...` inside {name}()"),
        found: "no tz_var".into(),
    })?;
    if components.is_empty() {
        return Err(FormulaError::Invalid(format!("{name}() needs at least one covariate")));
    }

    if name == "concurrent" {
        spec.concurrent.push(ConcurrentTerm {
            covariates: components.into_iter().map(|c| c.name).collect(),
            tz_var,
        });
    } else {
        for c in &components {
            if c.latency && c.name != tz_var {
                return Err(FormulaError::Invalid(format!(
                    "latency({}) must reference the term's tz_var `{tz_var}`",
                    c.name
                )));
            }
        }
        let n_time = components.iter().filter(|c| c.name == spec.time_col).count();
        if n_time > 1 {
            return Err(FormulaError::Invalid(format!(
                "follow-up time `{}` appears more than once in cumulative()",
                spec.time_col
            )));
        }
        spec.cumulative.push(CumulativeTerm {
            components,
            tz_var,
            ll: ll.unwrap_or_default(),
        });
    }
    Ok(())
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Surv({}, {}) ~ ", self.time_col, self.status_col)?;
        match &self.keep {
            KeepCovariates::All => f.write_str(".")?,
            KeepCovariates::Names(n) => f.write_str(&n.join(" + "))?,
        }
        let mut specials = Vec::new();
        for c in &self.concurrent {
            specials.push(format!("concurrent({}, tz_var = \"{}\")", c.covariates.join(", "), c.tz_var));
        }
        for c in &self.cumulative {
            let comps: Vec<String> = c
                .components
                .iter()
                .map(|c| {
                    if c.latency {
                        format!("latency({})", c.name)
                    } else {
                        c.name.clone()
                    }
                })
                .collect();
            specials.push(format!(
                "cumulative({}, tz_var = \"{}\", ll_fun = {})",
                comps.join(", "),
                c.tz_var,
                c.ll
            ));
        }
        if !specials.is_empty() {
            write!(f, " | {}", specials.join(" + "))?;
        }
        Ok(())
    }
}
