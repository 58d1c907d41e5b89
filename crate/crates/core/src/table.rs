//! Dense feature matrix passed between aggregation, training and evaluation.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoardKey, ComponentKey, PinKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Pin,
    Component,
    Board,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Pin => "pin",
            Level::Component => "component",
            Level::Board => "board",
        }
    }
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pin" => Ok(Level::Pin),
            "component" => Ok(Level::Component),
            "board" => Ok(Level::Board),
            other => Err(Error::Config(format!(
                "unknown level {other:?}; expected one of pin, component, board"
            ))),
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Row identities of a table; homogeneous by construction.
#[derive(Debug, Clone, PartialEq)]
pub enum RowKeys {
    Pin(Vec<PinKey>),
    Component(Vec<ComponentKey>),
    Board(Vec<BoardKey>),
}

impl RowKeys {
    pub fn len(&self) -> usize {
        match self {
            RowKeys::Pin(k) => k.len(),
            RowKeys::Component(k) => k.len(),
            RowKeys::Board(k) => k.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn level(&self) -> Level {
        match self {
            RowKeys::Pin(_) => Level::Pin,
            RowKeys::Component(_) => Level::Component,
            RowKeys::Board(_) => Level::Board,
        }
    }

    /// Board of row `i`.
    pub fn board(&self, i: usize) -> BoardKey {
        match self {
            RowKeys::Pin(k) => k[i].board(),
            RowKeys::Component(k) => k[i].board(),
            RowKeys::Board(k) => k[i],
        }
    }

    fn select(&self, rows: &[usize]) -> RowKeys {
        match self {
            RowKeys::Pin(k) => RowKeys::Pin(rows.iter().map(|&i| k[i].clone()).collect()),
            RowKeys::Component(k) => {
                RowKeys::Component(rows.iter().map(|&i| k[i].clone()).collect())
            }
            RowKeys::Board(k) => RowKeys::Board(rows.iter().map(|&i| k[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    column_names: Vec<String>,
    values: Vec<f64>,
    row_keys: RowKeys,
    target: Option<Vec<u8>>,
    /// Component whose label a board-level table predicts.
    target_component: Option<String>,
}

impl FeatureTable {
    /// Builds a table from row-major `values`, checking shape, finiteness and
    /// column-name uniqueness.
    pub fn new(column_names: Vec<String>, values: Vec<f64>, row_keys: RowKeys) -> Result<Self> {
        let width = column_names.len();
        let rows = row_keys.len();
        if values.len() != rows * width {
            return Err(Error::Data(format!(
                "table shape mismatch: {} values for {rows} rows x {width} columns",
                values.len()
            )));
        }
        let mut seen = HashSet::with_capacity(width);
        for name in &column_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Data(format!("duplicate column name {name:?}")));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos / width.max(1), pos % width.max(1));
            return Err(Error::Data(format!(
                "non-finite value in row {r}, column {:?}",
                column_names[c]
            )));
        }
        Ok(FeatureTable {
            column_names,
            values,
            row_keys,
            target: None,
            target_component: None,
        })
    }

    pub fn with_target(mut self, target: Vec<u8>) -> Result<Self> {
        if target.len() != self.n_rows() {
            return Err(Error::Data(format!(
                "target has {} entries for {} rows",
                target.len(),
                self.n_rows()
            )));
        }
        if let Some(bad) = target.iter().find(|&&t| t > 1) {
            return Err(Error::Data(format!("target value {bad} is not 0/1")));
        }
        self.target = Some(target);
        Ok(self)
    }

    pub fn with_target_component(mut self, component_id: impl Into<String>) -> Self {
        self.target_component = Some(component_id.into());
        self
    }

    pub fn n_rows(&self) -> usize {
        self.row_keys.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn level(&self) -> Level {
        self.row_keys.level()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_cols();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols() + col]
    }

    pub fn row_keys(&self) -> &RowKeys {
        &self.row_keys
    }

    pub fn target(&self) -> Option<&[u8]> {
        self.target.as_deref()
    }

    pub fn target_component(&self) -> Option<&str> {
        self.target_component.as_deref()
    }

    pub fn positives(&self) -> usize {
        self.target
            .as_ref()
            .map_or(0, |t| t.iter().filter(|&&y| y == 1).count())
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureTable {
        let w = self.n_cols();
        let mut values = Vec::with_capacity(rows.len() * w);
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        FeatureTable {
            column_names: self.column_names.clone(),
            values,
            row_keys: self.row_keys.select(rows),
            target: self
                .target
                .as_ref()
                .map(|t| rows.iter().map(|&i| t[i]).collect()),
            target_component: self.target_component.clone(),
        }
    }

    /// Subset of columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> FeatureTable {
        let mut values = Vec::with_capacity(self.n_rows() * cols.len());
        for r in 0..self.n_rows() {
            let row = self.row(r);
            values.extend(cols.iter().map(|&c| row[c]));
        }
        FeatureTable {
            column_names: cols.iter().map(|&c| self.column_names[c].clone()).collect(),
            values,
            row_keys: self.row_keys.clone(),
            target: self.target.clone(),
            target_component: self.target_component.clone(),
        }
    }

    /// Appends columns given row-major `extra` values (`rows x names.len()`).
    pub fn append_columns(&self, names: &[String], extra: &[f64]) -> Result<FeatureTable> {
        let add = names.len();
        if extra.len() != self.n_rows() * add {
            return Err(Error::Data("appended column block has the wrong shape".into()));
        }
        let mut column_names = self.column_names.clone();
        column_names.extend(names.iter().cloned());
        let w = self.n_cols();
        let mut values = Vec::with_capacity(self.n_rows() * (w + add));
        for r in 0..self.n_rows() {
            values.extend_from_slice(self.row(r));
            values.extend_from_slice(&extra[r * add..(r + 1) * add]);
        }
        let mut out = FeatureTable::new(column_names, values, self.row_keys.clone())?;
        out.target = self.target.clone();
        out.target_component = self.target_component.clone();
        Ok(out)
    }

    /// Column-major copy of the feature matrix.
    pub fn to_columns(&self) -> Vec<Vec<f64>> {
        let (n, w) = (self.n_rows(), self.n_cols());
        let mut cols = vec![Vec::with_capacity(n); w];
        for r in 0..n {
            for (c, &v) in self.row(r).iter().enumerate() {
                cols[c].push(v);
            }
        }
        cols
    }

    /// Writes the table as CSV: key columns prefixed `__key_`, then features,
    /// then `__target__` when a target is attached.
    pub fn write_csv(&self, out: impl Write) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(out);
        let key_cols: &[&str] = match self.level() {
            Level::Pin => &["panel_id", "figure_id", "component_id", "pin_number"],
            Level::Component => &["panel_id", "figure_id", "component_id"],
            Level::Board => &["panel_id", "figure_id"],
        };
        let mut header: Vec<String> = key_cols.iter().map(|k| format!("__key_{k}")).collect();
        header.extend(self.column_names.iter().map(|c| csv_field(c)));
        if self.target.is_some() {
            header.push("__target__".into());
        }
        writeln!(w, "{}", header.join(","))?;
        for r in 0..self.n_rows() {
            match &self.row_keys {
                RowKeys::Pin(k) => {
                    let k = &k[r];
                    write!(
                        w,
                        "{},{},{},{}",
                        k.panel_id,
                        k.figure_id,
                        csv_field(&k.component_id),
                        k.pin_number
                    )?
                }
                RowKeys::Component(k) => {
                    let k = &k[r];
                    write!(w, "{},{},{}", k.panel_id, k.figure_id, csv_field(&k.component_id))?
                }
                RowKeys::Board(k) => write!(w, "{},{}", k[r].panel_id, k[r].figure_id)?,
            }
            for v in self.row(r) {
                write!(w, ",{v}")?;
            }
            if let Some(t) = &self.target {
                write!(w, ",{}", t[r])?;
            }
            writeln!(w)?;
        }
        w.flush()
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file).map_err(|e| Error::io(path, e))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
