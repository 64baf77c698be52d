//! Mixed-type table encoding.
//!
//! Continuous and discrete columns are min-max scaled to `[0,1]`. Ordinal
//! columns are mapped to their declared rank and then treated as discrete.
//! Categorical columns become one-hot blocks. Decoding inverts each step:
//! argmax for categorical blocks, rounding for discrete and ordinal columns.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor2;
use crate::error::{shape, validation, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Discrete,
    Ordinal,
    Categorical,
}

impl ColumnKind {
    pub fn is_labelled(self) -> bool {
        matches!(self, ColumnKind::Ordinal | ColumnKind::Categorical)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Declared levels, in order, for ordinal and categorical columns.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
}

impl ColumnSpec {
    pub fn continuous(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Continuous,
            labels: Vec::new(),
        }
    }

    pub fn discrete(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Discrete,
            labels: Vec::new(),
        }
    }

    pub fn categorical(name: &str, labels: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn ordinal(name: &str, labels: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Ordinal,
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub columns: Vec<ColumnSpec>,
}

impl TableSchema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let s = Self { columns };
        s.validate()?;
        Ok(s)
    }

    /// All-continuous schema with the given column names.
    pub fn continuous(names: &[&str]) -> Self {
        Self {
            columns: names.iter().map(|n| ColumnSpec::continuous(n)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for (i, c) in self.columns.iter().enumerate() {
            if let Some(j) = seen.insert(c.name.as_str(), i) {
                return Err(validation(format!(
                    "column name '{}' used by columns {j} and {i}",
                    c.name
                )));
            }
            if c.kind.is_labelled() {
                if c.labels.is_empty() {
                    return Err(validation(format!(
                        "column '{}' declares no labels",
                        c.name
                    )));
                }
                let mut l = c.labels.clone();
                l.sort();
                l.dedup();
                if l.len() != c.labels.len() {
                    return Err(validation(format!("column '{}' repeats a label", c.name)));
                }
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Column {
    Numeric(Vec<f64>),
    Labels(Vec<String>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Labels(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// In-memory column-major table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub names: Vec<String>,
    pub columns: Vec<Column>,
}

impl Table {
    pub fn new(names: Vec<String>, columns: Vec<Column>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(shape(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        if let Some(first) = columns.first() {
            if let Some((i, c)) = columns
                .iter()
                .enumerate()
                .find(|(_, c)| c.len() != first.len())
            {
                return Err(shape(format!(
                    "column {i} has {} rows, column 0 has {}",
                    c.len(),
                    first.len()
                )));
            }
        }
        Ok(Self { names, columns })
    }

    /// Numeric table from a row-major matrix.
    pub fn from_matrix(names: &[&str], m: &Tensor2) -> Result<Self> {
        if names.len() != m.cols() {
            return Err(shape(format!(
                "{} names for {} columns",
                names.len(),
                m.cols()
            )));
        }
        Self::new(
            names.iter().map(|s| s.to_string()).collect(),
            (0..m.cols())
                .map(|j| Column::Numeric(m.column(j)))
                .collect(),
        )
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Column::len)
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    /// All-numeric table as a row-major matrix.
    pub fn to_matrix(&self) -> Result<Tensor2> {
        let n = self.n_rows();
        let mut out = Tensor2::zeros(n, self.n_cols());
        for (j, c) in self.columns.iter().enumerate() {
            match c {
                Column::Numeric(v) => v.iter().enumerate().for_each(|(i, x)| out.set(i, j, *x)),
                Column::Labels(_) => {
                    return Err(validation(format!(
                        "column '{}' is not numeric",
                        self.names[j]
                    )))
                }
            }
        }
        Ok(out)
    }

    /// Rows selected by index.
    pub fn select_rows(&self, idx: &[usize]) -> Table {
        Table {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| match c {
                    Column::Numeric(v) => Column::Numeric(idx.iter().map(|&i| v[i]).collect()),
                    Column::Labels(v) => {
                        Column::Labels(idx.iter().map(|&i| v[i].clone()).collect())
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedColumn {
    /// Continuous (`round = false`) or discrete (`round = true`) column.
    Scaled {
        min: f64,
        max: f64,
        round: bool,
    },
    /// Label rank scaled by the observed rank range.
    Ordinal {
        labels: Vec<String>,
        min: f64,
        max: f64,
    },
    OneHot {
        labels: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnLayout {
    pub name: String,
    pub range: Range<usize>,
    pub fitted: FittedColumn,
}

/// Per-column statistics captured by [`fit`]; immutable afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTransformer {
    pub schema: TableSchema,
    pub layout: Vec<ColumnLayout>,
    pub width: usize,
}

impl FittedTransformer {
    /// Encoded column ranges of the categorical one-hot blocks.
    pub fn softmax_blocks(&self) -> Vec<Range<usize>> {
        self.layout
            .iter()
            .filter(|c| matches!(c.fitted, FittedColumn::OneHot { .. }))
            .map(|c| c.range.clone())
            .collect()
    }

    /// Encoded range of the named column.
    pub fn column_range(&self, name: &str) -> Option<Range<usize>> {
        self.layout
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.range.clone())
    }
}

/// Transformer restricted to the columns at `columns`, re-packed from offset 0.
pub fn subset(tr: &FittedTransformer, columns: &[usize]) -> Result<FittedTransformer> {
    let mut specs = Vec::with_capacity(columns.len());
    let mut layout = Vec::with_capacity(columns.len());
    let mut offset = 0;
    for &c in columns {
        let lay = tr
            .layout
            .get(c)
            .ok_or_else(|| validation(format!("column index {c} out of range")))?;
        let w = lay.range.len();
        specs.push(tr.schema.columns[c].clone());
        layout.push(ColumnLayout {
            name: lay.name.clone(),
            range: offset..offset + w,
            fitted: lay.fitted.clone(),
        });
        offset += w;
    }
    Ok(FittedTransformer {
        schema: TableSchema::new(specs)?,
        layout,
        width: offset,
    })
}

/// Result of [`encode`]: the `[0,1]` matrix and the number of values clamped
/// into the fitted range.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub matrix: Tensor2,
    pub clamped: usize,
}

fn check_conforms(schema: &TableSchema, table: &Table) -> Result<()> {
    if schema.columns.len() != table.n_cols() {
        return Err(shape(format!(
            "schema declares {} columns, table has {}",
            schema.columns.len(),
            table.n_cols()
        )));
    }
    for (spec, (name, col)) in schema
        .columns
        .iter()
        .zip(table.names.iter().zip(&table.columns))
    {
        if &spec.name != name {
            return Err(validation(format!(
                "schema column '{}' does not match table column '{name}'",
                spec.name
            )));
        }
        match (spec.kind.is_labelled(), col) {
            (true, Column::Labels(_)) => {}
            (false, Column::Numeric(v)) => {
                if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                    return Err(validation(format!(
                        "column '{name}' row {i}: missing or non-finite value"
                    )));
                }
                if spec.kind == ColumnKind::Discrete {
                    if let Some(i) = v.iter().position(|x| x.fract() != 0.0) {
                        return Err(validation(format!(
                            "column '{name}' row {i}: discrete value {} is not an integer",
                            v[i]
                        )));
                    }
                }
            }
            (true, _) => return Err(validation(format!("column '{name}' should hold labels"))),
            (false, _) => return Err(validation(format!("column '{name}' should be numeric"))),
        }
    }
    Ok(())
}

fn label_rank(labels: &[String], col: &str, value: &str) -> Result<usize> {
    labels
        .iter()
        .position(|l| l == value)
        .ok_or_else(|| validation(format!("column '{col}': unseen label '{value}'")))
}

fn min_max(v: impl Iterator<Item = f64>) -> (f64, f64) {
    v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    })
}

pub fn fit(schema: &TableSchema, table: &Table) -> Result<FittedTransformer> {
    schema.validate()?;
    check_conforms(schema, table)?;
    if table.n_rows() == 0 {
        return Err(validation("cannot fit a transformer on an empty table"));
    }
    let mut layout = Vec::with_capacity(schema.columns.len());
    let mut offset = 0;
    for (spec, col) in schema.columns.iter().zip(&table.columns) {
        let (fitted, width) = match (spec.kind, col) {
            (ColumnKind::Continuous | ColumnKind::Discrete, Column::Numeric(v)) => {
                let (min, max) = min_max(v.iter().copied());
                (
                    FittedColumn::Scaled {
                        min,
                        max,
                        round: spec.kind == ColumnKind::Discrete,
                    },
                    1,
                )
            }
            (ColumnKind::Ordinal, Column::Labels(v)) => {
                let ranks = v
                    .iter()
                    .map(|s| label_rank(&spec.labels, &spec.name, s).map(|r| r as f64))
                    .collect::<Result<Vec<_>>>()?;
                let (min, max) = min_max(ranks.into_iter());
                (
                    FittedColumn::Ordinal {
                        labels: spec.labels.clone(),
                        min,
                        max,
                    },
                    1,
                )
            }
            (ColumnKind::Categorical, Column::Labels(_)) => (
                FittedColumn::OneHot {
                    labels: spec.labels.clone(),
                },
                spec.labels.len(),
            ),
            _ => unreachable!("checked by check_conforms"),
        };
        layout.push(ColumnLayout {
            name: spec.name.clone(),
            range: offset..offset + width,
            fitted,
        });
        offset += width;
    }
    Ok(FittedTransformer {
        schema: schema.clone(),
        layout,
        width: offset,
    })
}

fn scale(x: f64, min: f64, max: f64) -> f64 {
    if max > min {
        (x - min) / (max - min)
    } else {
        0.0
    }
}

fn unscale(u: f64, min: f64, max: f64) -> f64 {
    if max > min {
        u * (max - min) + min
    } else {
        min
    }
}

pub fn encode(tr: &FittedTransformer, table: &Table) -> Result<EncodedMatrix> {
    check_conforms(&tr.schema, table)?;
    let n = table.n_rows();
    let mut m = Tensor2::zeros(n, tr.width);
    let mut clamped = 0;
    for (lay, col) in tr.layout.iter().zip(&table.columns) {
        let at = lay.range.start;
        match (&lay.fitted, col) {
            (FittedColumn::Scaled { min, max, .. }, Column::Numeric(v)) => {
                for (i, &x) in v.iter().enumerate() {
                    let c = x.clamp(*min, *max);
                    if c != x {
                        clamped += 1;
                    }
                    m.set(i, at, scale(c, *min, *max));
                }
            }
            (FittedColumn::Ordinal { labels, min, max }, Column::Labels(v)) => {
                for (i, s) in v.iter().enumerate() {
                    let r = label_rank(labels, &lay.name, s)? as f64;
                    let c = r.clamp(*min, *max);
                    if c != r {
                        clamped += 1;
                    }
                    m.set(i, at, scale(c, *min, *max));
                }
            }
            (FittedColumn::OneHot { labels }, Column::Labels(v)) => {
                for (i, s) in v.iter().enumerate() {
                    let k = label_rank(labels, &lay.name, s)?;
                    m.set(i, at + k, 1.0);
                }
            }
            _ => {
                return Err(validation(format!(
                    "column '{}' has the wrong type",
                    lay.name
                )))
            }
        }
    }
    Ok(EncodedMatrix { matrix: m, clamped })
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = k;
        }
    }
    best
}

/// Maps encoded rows (or raw generator output) back to a table.
pub fn decode(tr: &FittedTransformer, matrix: &Tensor2) -> Result<Table> {
    if matrix.cols() != tr.width {
        return Err(shape(format!(
            "matrix has {} columns, layout needs {}",
            matrix.cols(),
            tr.width
        )));
    }
    let mut columns = Vec::with_capacity(tr.layout.len());
    for lay in &tr.layout {
        let at = lay.range.start;
        let col = match &lay.fitted {
            FittedColumn::Scaled { min, max, round } => Column::Numeric(
                matrix
                    .iter_rows()
                    .map(|r| {
                        let x = unscale(r[at], *min, *max);
                        if *round {
                            x.round().clamp(*min, *max)
                        } else {
                            x
                        }
                    })
                    .collect(),
            ),
            FittedColumn::Ordinal { labels, min, max } => Column::Labels(
                matrix
                    .iter_rows()
                    .map(|r| {
                        let k = unscale(r[at], *min, *max).round().clamp(*min, *max);
                        labels[k as usize].clone()
                    })
                    .collect(),
            ),
            FittedColumn::OneHot { labels } => Column::Labels(
                matrix
                    .iter_rows()
                    .map(|r| labels[argmax(&r[lay.range.clone()])].clone())
                    .collect(),
            ),
        };
        columns.push(col);
    }
    Table::new(tr.layout.iter().map(|l| l.name.clone()).collect(), columns)
}
