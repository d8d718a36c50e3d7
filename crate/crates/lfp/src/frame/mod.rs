//! Columnar frame model.
//!
//! A [`Frame`] is an ordered collection of equal-length named [`Column`]s.
//! Columns carry a dtype, a value vector, and a null mask. Frames are
//! immutable: every kernel in [`ops`](crate::frame::ops) returns a new frame
//! and leaves its inputs untouched.

pub mod csv;
pub mod expr;
pub mod ops;

use std::collections::BTreeSet;
use std::rc::Rc;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};

use crate::error::{Error, Result};

/// Column type tag. `Category` columns store u32 dictionary indices; the
/// dictionary itself lives in the column data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dtype {
    Int64,
    Float64,
    Bool,
    Text,
    Date,
    Category,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::Int64 => "int64",
            Dtype::Float64 => "float64",
            Dtype::Bool => "bool",
            Dtype::Text => "text",
            Dtype::Date => "date",
            Dtype::Category => "category",
        }
    }

    pub fn parse(s: &str) -> Option<Dtype> {
        match s {
            "int64" => Some(Dtype::Int64),
            "float64" => Some(Dtype::Float64),
            "bool" => Some(Dtype::Bool),
            "text" => Some(Dtype::Text),
            "date" => Some(Dtype::Date),
            "category" => Some(Dtype::Category),
            _ => None,
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, Dtype::Int64 | Dtype::Float64)
    }
}

impl std::fmt::Display for Dtype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A single cell value. Dates are seconds since the Unix epoch; category
/// cells surface as `Text`.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Null,
    Int(i64),
    Float(f64),
    Bool(bool),
    Text(String),
    Date(i64),
}

impl Scalar {
    pub fn is_null(&self) -> bool {
        matches!(self, Scalar::Null)
    }

    pub fn dtype(&self) -> Option<Dtype> {
        match self {
            Scalar::Null => None,
            Scalar::Int(_) => Some(Dtype::Int64),
            Scalar::Float(_) => Some(Dtype::Float64),
            Scalar::Bool(_) => Some(Dtype::Bool),
            Scalar::Text(_) => Some(Dtype::Text),
            Scalar::Date(_) => Some(Dtype::Date),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Int(v) => Some(*v as f64),
            Scalar::Float(v) => Some(*v),
            _ => None,
        }
    }

    /// Display form used by print rendering and canonical serialization.
    pub fn render(&self) -> String {
        match self {
            Scalar::Null => "null".to_string(),
            Scalar::Int(v) => v.to_string(),
            Scalar::Float(v) => format!("{v:?}"),
            Scalar::Bool(v) => if *v { "True" } else { "False" }.to_string(),
            Scalar::Text(v) => v.clone(),
            Scalar::Date(v) => render_date(*v),
        }
    }
}

/// Parse an ISO-8601 date or datetime; the time separator may be `T` or a
/// single space.
pub fn parse_date(s: &str) -> Option<i64> {
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(d.and_hms_opt(0, 0, 0)?.and_utc().timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

pub fn render_date(secs: i64) -> String {
    let dt = chrono::DateTime::from_timestamp(secs, 0)
        .map(|d| d.naive_utc())
        .unwrap_or_default();
    if dt.hour() == 0 && dt.minute() == 0 && dt.second() == 0 {
        dt.format("%Y-%m-%d").to_string()
    } else {
        dt.format("%Y-%m-%dT%H:%M:%S").to_string()
    }
}

/// Day of week for an epoch-seconds date, Monday = 0 .. Sunday = 6.
pub fn day_of_week(secs: i64) -> i64 {
    let dt = chrono::DateTime::from_timestamp(secs, 0)
        .map(|d| d.naive_utc())
        .unwrap_or_default();
    dt.weekday().num_days_from_monday() as i64
}

/// Typed value storage for one column.
#[derive(Debug, Clone)]
pub enum ColumnData {
    Int64(Vec<i64>),
    Float64(Vec<f64>),
    Bool(Vec<bool>),
    Text(Vec<String>),
    Date(Vec<i64>),
    Category { dict: Rc<Vec<String>>, codes: Vec<u32> },
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Int64(v) => v.len(),
            ColumnData::Float64(v) => v.len(),
            ColumnData::Bool(v) => v.len(),
            ColumnData::Text(v) => v.len(),
            ColumnData::Date(v) => v.len(),
            ColumnData::Category { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            ColumnData::Int64(_) => Dtype::Int64,
            ColumnData::Float64(_) => Dtype::Float64,
            ColumnData::Bool(_) => Dtype::Bool,
            ColumnData::Text(_) => Dtype::Text,
            ColumnData::Date(_) => Dtype::Date,
            ColumnData::Category { .. } => Dtype::Category,
        }
    }
}

/// A named, nullable, typed column. `nulls[i]` marks row `i` as null; the
/// value slot under a null is an unspecified placeholder.
#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
    pub nulls: Vec<bool>,
}

impl Column {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn null_count(&self) -> u64 {
        self.nulls.iter().filter(|n| **n).count() as u64
    }

    pub fn get(&self, i: usize) -> Scalar {
        if self.nulls[i] {
            return Scalar::Null;
        }
        match &self.data {
            ColumnData::Int64(v) => Scalar::Int(v[i]),
            ColumnData::Float64(v) => Scalar::Float(v[i]),
            ColumnData::Bool(v) => Scalar::Bool(v[i]),
            ColumnData::Text(v) => Scalar::Text(v[i].clone()),
            ColumnData::Date(v) => Scalar::Date(v[i]),
            ColumnData::Category { dict, codes } => Scalar::Text(dict[codes[i] as usize].clone()),
        }
    }

    /// Row gather: new column with the rows at `idx`, in that order.
    pub fn take(&self, idx: &[usize]) -> Column {
        let nulls = idx.iter().map(|&i| self.nulls[i]).collect();
        let data = match &self.data {
            ColumnData::Int64(v) => ColumnData::Int64(idx.iter().map(|&i| v[i]).collect()),
            ColumnData::Float64(v) => ColumnData::Float64(idx.iter().map(|&i| v[i]).collect()),
            ColumnData::Bool(v) => ColumnData::Bool(idx.iter().map(|&i| v[i]).collect()),
            ColumnData::Text(v) => ColumnData::Text(idx.iter().map(|&i| v[i].clone()).collect()),
            ColumnData::Date(v) => ColumnData::Date(idx.iter().map(|&i| v[i]).collect()),
            ColumnData::Category { dict, codes } => ColumnData::Category {
                dict: dict.clone(),
                codes: idx.iter().map(|&i| codes[i]).collect(),
            },
        };
        Column {
            name: self.name.clone(),
            data,
            nulls,
        }
    }

    /// Estimated resident bytes: null mask plus value storage. Text counts
    /// byte length plus a length word per row; category counts 4 bytes per
    /// row plus the dictionary.
    pub fn resident_bytes(&self) -> u64 {
        let n = self.len() as u64;
        let data = match &self.data {
            ColumnData::Int64(_) | ColumnData::Float64(_) | ColumnData::Date(_) => 8 * n,
            ColumnData::Bool(_) => n,
            ColumnData::Text(v) => v.iter().map(|s| s.len() as u64 + 8).sum(),
            ColumnData::Category { dict, codes } => {
                4 * codes.len() as u64 + dict.iter().map(|s| s.len() as u64 + 8).sum::<u64>()
            }
        };
        n + data
    }

    pub fn renamed(&self, name: &str) -> Column {
        Column {
            name: name.to_string(),
            data: self.data.clone(),
            nulls: self.nulls.clone(),
        }
    }
}

/// Incremental column construction with dtype checking. `Int` values are
/// promoted into `Float64` columns; everything else must match the dtype.
pub struct ColumnBuilder {
    name: String,
    data: ColumnData,
    nulls: Vec<bool>,
    dict_index: std::collections::HashMap<String, u32>,
}

impl ColumnBuilder {
    pub fn new(name: &str, dtype: Dtype) -> ColumnBuilder {
        let data = match dtype {
            Dtype::Int64 => ColumnData::Int64(Vec::new()),
            Dtype::Float64 => ColumnData::Float64(Vec::new()),
            Dtype::Bool => ColumnData::Bool(Vec::new()),
            Dtype::Text => ColumnData::Text(Vec::new()),
            Dtype::Date => ColumnData::Date(Vec::new()),
            Dtype::Category => ColumnData::Category {
                dict: Rc::new(Vec::new()),
                codes: Vec::new(),
            },
        };
        ColumnBuilder {
            name: name.to_string(),
            data,
            nulls: Vec::new(),
            dict_index: std::collections::HashMap::new(),
        }
    }

    pub fn push(&mut self, value: Scalar) -> Result<()> {
        if value.is_null() {
            self.push_null();
            return Ok(());
        }
        let mismatch = |b: &ColumnBuilder, v: &Scalar| {
            Error::TypeMismatch(format!(
                "cannot store {} in {} column {}",
                v.dtype().map(|d| d.name()).unwrap_or("null"),
                b.data.dtype().name(),
                b.name
            ))
        };
        match (&mut self.data, &value) {
            (ColumnData::Int64(v), Scalar::Int(x)) => v.push(*x),
            (ColumnData::Float64(v), Scalar::Float(x)) => v.push(*x),
            (ColumnData::Float64(v), Scalar::Int(x)) => v.push(*x as f64),
            (ColumnData::Bool(v), Scalar::Bool(x)) => v.push(*x),
            (ColumnData::Text(v), Scalar::Text(x)) => v.push(x.clone()),
            (ColumnData::Date(v), Scalar::Date(x)) => v.push(*x),
            (ColumnData::Category { dict, codes }, Scalar::Text(x)) => {
                let code = match self.dict_index.get(x.as_str()) {
                    Some(c) => *c,
                    None => {
                        let c = dict.len() as u32;
                        Rc::make_mut(dict).push(x.clone());
                        self.dict_index.insert(x.clone(), c);
                        c
                    }
                };
                codes.push(code);
            }
            _ => return Err(mismatch(self, &value)),
        }
        self.nulls.push(false);
        Ok(())
    }

    pub fn push_null(&mut self) {
        match &mut self.data {
            ColumnData::Int64(v) => v.push(0),
            ColumnData::Float64(v) => v.push(0.0),
            ColumnData::Bool(v) => v.push(false),
            ColumnData::Text(v) => v.push(String::new()),
            ColumnData::Date(v) => v.push(0),
            ColumnData::Category { codes, .. } => codes.push(0),
        }
        self.nulls.push(true);
    }

    pub fn len(&self) -> usize {
        self.nulls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nulls.is_empty()
    }

    pub fn finish(self) -> Column {
        Column {
            name: self.name,
            data: self.data,
            nulls: self.nulls,
        }
    }
}

/// An immutable table: uniquely named, equal-length columns plus an explicit
/// row count (so zero-column frames still know their length).
#[derive(Debug, Clone)]
pub struct Frame {
    columns: Vec<Column>,
    rows: usize,
}

impl Frame {
    pub fn new(columns: Vec<Column>) -> Result<Frame> {
        let rows = columns.first().map(|c| c.len()).unwrap_or(0);
        let mut seen = BTreeSet::new();
        for c in &columns {
            if c.len() != rows {
                return Err(Error::Internal(format!(
                    "column {} has {} rows, expected {}",
                    c.name,
                    c.len(),
                    rows
                )));
            }
            if !seen.insert(c.name.clone()) {
                return Err(Error::DuplicateColumn(c.name.clone()));
            }
        }
        Ok(Frame { columns, rows })
    }

    pub fn new_empty(rows: usize) -> Frame {
        Frame {
            columns: Vec::new(),
            rows,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn col(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn has_col(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c.name == name)
    }

    pub fn take(&self, idx: &[usize]) -> Frame {
        Frame {
            columns: self.columns.iter().map(|c| c.take(idx)).collect(),
            rows: idx.len(),
        }
    }

    pub fn head_rows(&self, n: usize) -> Frame {
        let n = n.min(self.rows);
        let idx: Vec<usize> = (0..n).collect();
        self.take(&idx)
    }

    pub fn resident_bytes(&self) -> u64 {
        self.columns.iter().map(|c| c.resident_bytes()).sum()
    }

    /// Row-wise concatenation. Schemas (names and dtypes) must match; a
    /// category column falls back to text so chunks with different
    /// dictionaries can be stitched together.
    pub fn concat(frames: &[Frame]) -> Result<Frame> {
        let Some(first) = frames.first() else {
            return Ok(Frame::new_empty(0));
        };
        let names = first.column_names();
        let mut out: Vec<ColumnBuilder> = first
            .columns
            .iter()
            .map(|c| {
                let dt = match c.dtype() {
                    Dtype::Category => Dtype::Text,
                    d => d,
                };
                ColumnBuilder::new(&c.name, dt)
            })
            .collect();
        let mut rows = 0usize;
        for f in frames {
            if f.column_names() != names {
                return Err(Error::Internal("concat schema mismatch".to_string()));
            }
            rows += f.rows();
            for (bi, c) in f.columns.iter().enumerate() {
                for i in 0..c.len() {
                    out[bi].push(c.get(i))?;
                }
            }
        }
        let cols: Vec<Column> = out.into_iter().map(|b| b.finish()).collect();
        if cols.is_empty() {
            Ok(Frame::new_empty(rows))
        } else {
            Frame::new(cols)
        }
    }
}
