//! Column-oriented tables shared by the transformation, fitting and
//! prediction layers.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::fmt;

/// A single scalar cell, used when callers specify covariate values by hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Str(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(v) => write!(f, "{v}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Num(v)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}

/// Categorical column. Levels are kept in order of first appearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub levels: Vec<String>,
    pub codes: Vec<usize>,
}

impl Factor {
    pub fn from_strings<S: AsRef<str>>(values: &[S]) -> Self {
        let mut levels: Vec<String> = Vec::new();
        let mut codes = Vec::with_capacity(values.len());
        for v in values {
            let v = v.as_ref();
            let code = match levels.iter().position(|l| l == v) {
                Some(c) => c,
                None => {
                    levels.push(v.to_string());
                    levels.len() - 1
                }
            };
            codes.push(code);
        }
        Factor { levels, codes }
    }

    /// Same codes but with an explicit level set (used when new data must
    /// share the training levels).
    pub fn with_levels<S: AsRef<str>>(values: &[S], levels: &[String]) -> Option<Self> {
        let codes = values
            .iter()
            .map(|v| levels.iter().position(|l| l == v.as_ref()))
            .collect::<Option<Vec<_>>>()?;
        Some(Factor {
            levels: levels.to_vec(),
            codes,
        })
    }

    pub fn label(&self, row: usize) -> &str {
        &self.levels[self.codes[row]]
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Column {
    Numeric(Vec<f64>),
    Categorical(Factor),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Column::Numeric(_))
    }

    pub fn as_numeric(&self) -> Option<&[f64]> {
        match self {
            Column::Numeric(v) => Some(v),
            Column::Categorical(_) => None,
        }
    }

    pub fn value(&self, row: usize) -> Value {
        match self {
            Column::Numeric(v) => Value::Num(v[row]),
            Column::Categorical(f) => Value::Str(f.label(row).to_string()),
        }
    }

    /// Gather rows by index, keeping the level set of categorical columns.
    pub fn take(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Column::Categorical(f) => Column::Categorical(Factor {
                levels: f.levels.clone(),
                codes: rows.iter().map(|&r| f.codes[r]).collect(),
            }),
        }
    }

    /// Parse raw text cells: numeric if every non-empty cell parses as f64.
    pub fn parse(cells: &[String]) -> Column {
        let parsed: Option<Vec<f64>> = cells.iter().map(|c| c.trim().parse::<f64>().ok()).collect();
        match parsed {
            Some(v) => Column::Numeric(v),
            None => Column::Categorical(Factor::from_strings(cells)),
        }
    }

    /// Mean for numeric columns, mode for categorical ones (ties go to the
    /// level seen first in data order).
    pub fn summary(&self, rows: &[usize]) -> Value {
        match self {
            Column::Numeric(v) => {
                let s: f64 = rows.iter().map(|&r| v[r]).sum();
                Value::Num(s / rows.len() as f64)
            }
            Column::Categorical(f) => {
                let mut counts = vec![0usize; f.levels.len()];
                let mut first_seen = vec![usize::MAX; f.levels.len()];
                for (pos, &r) in rows.iter().enumerate() {
                    let c = f.codes[r];
                    counts[c] += 1;
                    if first_seen[c] == usize::MAX {
                        first_seen[c] = pos;
                    }
                }
                let best = (0..counts.len())
                    .filter(|&c| counts[c] > 0)
                    .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(first_seen[b].cmp(&first_seen[a])))
                    .unwrap_or(0);
                Value::Str(f.levels[best].clone())
            }
        }
    }

    /// Format one cell for CSV output.
    pub fn format_cell(&self, row: usize) -> String {
        match self {
            Column::Numeric(v) => format_f64(v[row]),
            Column::Categorical(f) => f.label(row).to_string(),
        }
    }
}

/// Shortest round-trip float formatting; keeps outputs byte-stable.
pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Ordered collection of equally long named columns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    columns: IndexMap<String, Column>,
    nrows: usize,
}

impl Frame {
    pub fn new(nrows: usize) -> Self {
        Frame {
            columns: IndexMap::new(),
            nrows,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    /// Insert or replace a column. Panics when the length does not match,
    /// which always indicates a construction bug in the caller.
    pub fn insert(&mut self, name: impl Into<String>, col: Column) {
        if self.columns.is_empty() && self.nrows == 0 {
            self.nrows = col.len();
        }
        assert_eq!(col.len(), self.nrows, "column length mismatch");
        self.columns.insert(name.into(), col);
    }

    pub fn get(&self, name: &str) -> Option<&Column> {
        self.columns.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Column> {
        self.columns.shift_remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Column)> {
        self.columns.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn numeric(&self, name: &str) -> Option<&[f64]> {
        self.get(name).and_then(|c| c.as_numeric())
    }

    pub fn take(&self, rows: &[usize]) -> Frame {
        let mut out = Frame::new(rows.len());
        for (name, col) in &self.columns {
            out.columns.insert(name.clone(), col.take(rows));
        }
        out
    }

    pub fn select(&self, names: &[String]) -> Frame {
        let mut out = Frame::new(self.nrows);
        for n in names {
            if let Some(c) = self.columns.get(n) {
                out.columns.insert(n.clone(), c.clone());
            }
        }
        out
    }
}
