use super::lexer::{Cursor, Tok};
use super::{parse_laglead, FormulaError, LagLeadSpec};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Func {
    Sqrt,
    Log,
    Exp,
    /// `dnorm(x, mean = 0, sd = 1)`
    Dnorm,
    /// `dgamma(x, shape, rate = 1)`
    Dgamma,
    /// Baseline log-hazard shape, `dgamma(t, 8, 2) * 6` unless rebound.
    F0,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "log" => Func::Log,
            "exp" => Func::Exp,
            "dnorm" => Func::Dnorm,
            "dgamma" => Func::Dgamma,
            "f0" => Func::F0,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Log => "log",
            Func::Exp => "exp",
            Func::Dnorm => "dnorm",
            Func::Dgamma => "dgamma",
            Func::F0 => "f0",
        }
    }

    fn arity(self) -> (usize, usize) {
        match self {
            Func::Sqrt | Func::Log | Func::Exp | Func::F0 => (1, 1),
            Func::Dnorm => (1, 3),
            Func::Dgamma => (2, 3),
        }
    }
}

pub fn dnorm(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
}

pub fn dgamma(x: f64, shape: f64, rate: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    if x == 0.0 {
        return if shape < 1.0 {
            f64::INFINITY
        } else if shape == 1.0 {
            rate
        } else {
            0.0
        };
    }
    (shape * rate.ln() + (shape - 1.0) * x.ln() - rate * x - ln_gamma(shape)).exp()
}

/// Default baseline used by `f0(t)`.
pub fn default_f0(t: f64) -> f64 {
    dgamma(t, 8.0, 2.0) * 6.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    /// Evaluate with variable lookup and an optional replacement for `f0`.
    pub fn eval<L>(&self, lookup: &L, f0: Option<&dyn Fn(f64) -> f64>) -> f64
    where
        L: Fn(&str) -> f64,
    {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(name) => lookup(name),
            Expr::Neg(e) => -e.eval(lookup, f0),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(lookup, f0), b.eval(lookup, f0));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(func, args) => {
                let v: Vec<f64> = args.iter().map(|a| a.eval(lookup, f0)).collect();
                match func {
                    Func::Sqrt => v[0].sqrt(),
                    Func::Log => v[0].ln(),
                    Func::Exp => v[0].exp(),
                    Func::Dnorm => dnorm(v[0], v.get(1).copied().unwrap_or(0.0), v.get(2).copied().unwrap_or(1.0)),
                    Func::Dgamma => dgamma(v[0], v[1], v.get(2).copied().unwrap_or(1.0)),
                    Func::F0 => match f0 {
                        Some(f) => f(v[0]),
                        None => default_f0(v[0]),
                    },
                }
            }
        }
    }

    pub fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Neg(e) => e.collect_vars(out),
            Expr::Bin(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    /// Operands of the top-level chain of `+`/`-`.
    pub fn additive_terms(&self) -> Vec<&Expr> {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, a, b) => {
                let mut v = a.additive_terms();
                v.push(b);
                v
            }
            e => vec![e],
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if *v < 0.0 => write!(f, "({v})"),
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(v) => f.write_str(v),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, args) => {
                let a: Vec<String> = args.iter().map(|a| a.to_string()).collect();
                write!(f, "{}({})", func.name(), a.join(", "))
            }
        }
    }
}

/// Builtin partial effects h(t, tz, z) usable inside `fcumu()`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartialEffect {
    Wce,
    Dlnm,
    Elra,
}

impl PartialEffect {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "f_wce" => Some(PartialEffect::Wce),
            "f_dlnm" => Some(PartialEffect::Dlnm),
            "f_elra" => Some(PartialEffect::Elra),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PartialEffect::Wce => "f_wce",
            PartialEffect::Dlnm => "f_dlnm",
            PartialEffect::Elra => "f_elra",
        }
    }
}

/// `fcumu(t, tz, z, f_xyz = f_wce, ll_fun = window(0, 12))`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumuNode {
    pub time_var: String,
    pub tz_var: String,
    pub z_var: String,
    pub effect: PartialEffect,
    pub ll: LagLeadSpec,
}

impl fmt::Display for CumuNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "fcumu({}, {}, {}, f_xyz = {}, ll_fun = {})",
            self.time_var,
            self.tz_var,
            self.z_var,
            self.effect.name(),
            self.ll
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardExpr {
    pub linear: Expr,
    pub cumulative: Vec<CumuNode>,
}

impl HazardExpr {
    /// Variables read by the ordinary (non-cumulative) part, including `t`.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut s = BTreeSet::new();
        self.linear.collect_vars(&mut s);
        s
    }
}

impl fmt::Display for HazardExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "~ {}", self.linear)?;
        if !self.cumulative.is_empty() {
            let c: Vec<String> = self.cumulative.iter().map(|c| c.to_string()).collect();
            write!(f, " | {}", c.join(" + "))?;
        }
        Ok(())
    }
}

pub fn parse_hazard_expression(text: &str) -> Result<HazardExpr, FormulaError> {
    let mut cur = Cursor::new(text)?;
    cur.expect(&Tok::Tilde, "`~`")?;
    let linear = parse_sum(&mut cur)?;
    let mut cumulative = Vec::new();
    if cur.eat(&Tok::Pipe) {
        loop {
            cumulative.push(parse_fcumu(&mut cur)?);
            if !cur.eat(&Tok::Plus) {
                break;
            }
        }
    }
    cur.finish()?;
    Ok(HazardExpr { linear, cumulative })
}

fn parse_sum(cur: &mut Cursor) -> Result<Expr, FormulaError> {
    let mut lhs = parse_product(cur)?;
    loop {
        let op = match cur.peek() {
            Tok::Plus => BinOp::Add,
            Tok::Minus => BinOp::Sub,
            _ => break,
        };
        cur.bump();
        let rhs = parse_product(cur)?;
        lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
    }
    Ok(lhs)
}

fn parse_product(cur: &mut Cursor) -> Result<Expr, FormulaError> {
    let mut lhs = parse_unary(cur)?;
    loop {
        let op = match cur.peek() {
            Tok::Star => BinOp::Mul,
            Tok::Slash => BinOp::Div,
            _ => break,
        };
        cur.bump();
        let rhs = parse_unary(cur)?;
        lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
    }
    Ok(lhs)
}

fn parse_unary(cur: &mut Cursor) -> Result<Expr, FormulaError> {
    if cur.eat(&Tok::Minus) {
        let inner = parse_unary(cur)?;
        return Ok(match inner {
            Expr::Num(v) if v >= 0.0 => Expr::Num(-v),
            e => Expr::Neg(Box::new(e)),
        });
    }
    parse_power(cur)
}

fn parse_power(cur: &mut Cursor) -> Result<Expr, FormulaError> {
    let base = parse_primary(cur)?;
    if cur.eat(&Tok::Caret) {
        let exp = parse_unary(cur)?;
        return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
    }
    Ok(base)
}

fn parse_primary(cur: &mut Cursor) -> Result<Expr, FormulaError> {
    match cur.peek().clone() {
        Tok::Num(v) => {
            cur.bump();
            Ok(Expr::Num(v))
        }
        Tok::LParen => {
            cur.bump();
            let e = parse_sum(cur)?;
            cur.expect(&Tok::RParen, "`)`")?;
            Ok(e)
        }
        Tok::Ident(name) => {
            cur.bump();
            if *cur.peek() != Tok::LParen {
                return Ok(Expr::Var(name));
            }
            let func = Func::from_name(&name).ok_or(FormulaError::UnknownFunction(name.clone()))?;
            cur.bump();
            let (lo, hi) = func.arity();
            let mut args = Vec::new();
            // too many: first surplus argument; too few: the closing paren
            let mut surplus = None;
            if *cur.peek() != Tok::RParen {
                loop {
                    if args.len() == hi {
                        surplus.get_or_insert(cur.pos());
                    }
                    args.push(parse_sum(cur)?);
                    if !cur.eat(&Tok::Comma) {
                        break;
                    }
                }
            }
            if args.len() < lo || args.len() > hi {
                return Err(FormulaError::Syntax {
                    position: surplus.unwrap_or_else(|| cur.pos()),
                    expected: format!("{name}() with {lo}..={hi} arguments"),
                    found: format!("{} arguments", args.len()),
                });
            }
            cur.expect(&Tok::RParen, "`)` or `,`")?;
            Ok(Expr::Call(func, args))
        }
        _ => Err(cur.error("a number, variable, function call or `(`")),
    }
}

fn parse_fcumu(cur: &mut Cursor) -> Result<CumuNode, FormulaError> {
    let (name, pos) = cur.ident("`fcumu(`")?;
    if name != "fcumu" {
        return Err(FormulaError::Syntax {
            position: pos,
            expected: "`fcumu(`".into(),
            found: format!("identifier `{name}`"),
        });
    }
    cur.expect(&Tok::LParen, "`(`")?;
    let mut vars = Vec::new();
    let mut effect = None;
    let mut ll = None;
    loop {
        if matches!(cur.peek_at(1), Tok::Eq) {
            let (arg, arg_pos) = cur.ident("argument name")?;
            cur.bump();
            match arg.as_str() {
                "f_xyz" => {
                    let f = cur.name_or_string("builtin partial effect")?;
                    effect = Some(PartialEffect::from_name(&f).ok_or(FormulaError::UnknownBuiltinPartialEffect(f))?);
                }
                "ll_fun" => ll = Some(parse_laglead(cur)?),
                _ => {
                    return Err(FormulaError::Syntax {
                        position: arg_pos,
                        expected: "`f_xyz` or `ll_fun`".into(),
                        found: format!("identifier `{arg}`"),
                    })
                }
            }
        } else {
            vars.push(cur.ident("variable name")?.0);
        }
        if !cur.eat(&Tok::Comma) {
            break;
        }
    }
    let close = cur.pos();
    cur.expect(&Tok::RParen, "`)`")?;
    if vars.len() != 3 {
        return Err(FormulaError::Syntax {
            position: close,
            expected: "fcumu(t, tz, z, ...) with three variables".into(),
            found: format!("{} variables", vars.len()),
        });
    }
    let effect = effect.ok_or_else(|| FormulaError::Syntax {
        position: close,
        expected: "`f_xyz = <builtin>`".into(),
        found: "`)`".into(),
    })?;
    let z_var = vars.pop().unwrap();
    let tz_var = vars.pop().unwrap();
    let time_var = vars.pop().unwrap();
    Ok(CumuNode {
        time_var,
        tz_var,
        z_var,
        effect,
        ll: ll.unwrap_or_default(),
    })
}
