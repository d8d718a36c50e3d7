//! CSV ingestion. Dtypes are resolved per column as: explicit override >
//! date-parse request > whole-file inference (int64, then float64, then
//! bool, then text). Empty cells are null everywhere and never influence
//! inference; an all-null column infers text.
//!
//! Readers fetch only the requested columns (`usecols`), always emitted in
//! header order, and report how many columns they actually parsed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};
use crate::frame::{parse_date, Column, ColumnBuilder, Dtype, Frame, Scalar};

/// How to read one file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReadOptions {
    /// Columns to fetch; `None` fetches everything. Output order is header
    /// order regardless of list order.
    pub usecols: Option<Vec<String>>,
    /// Explicit dtypes (including `category`). Entries for unfetched columns
    /// are ignored; entries for columns missing from the header are errors.
    pub dtypes: BTreeMap<String, Dtype>,
    /// Columns parsed as dates.
    pub parse_dates: BTreeSet<String>,
}

#[derive(Debug, Clone)]
struct ColPlan {
    name: String,
    src_index: usize,
    target: Dtype,
    explicit: bool,
}

#[derive(Debug, Clone)]
struct ReadPlan {
    cols: Vec<ColPlan>,
}

fn open_reader(path: &str) -> Result<csv::Reader<File>> {
    if !Path::new(path).exists() {
        return Err(Error::MissingFile {
            path: path.to_string(),
        });
    }
    csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &str, e: csv::Error) -> Error {
    let line = match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, .. } => {
            pos.as_ref().map(|p| p.line()).unwrap_or(0)
        }
        csv::ErrorKind::Utf8 { pos, .. } => pos.as_ref().map(|p| p.line()).unwrap_or(0),
        _ => 0,
    };
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::MissingFile {
            path: path.to_string(),
        },
        _ => Error::MalformedCsv {
            line,
            msg: e.to_string(),
        },
    }
}

/// Header of `path`, in file order. Duplicate names are rejected.
pub fn read_header(path: &str) -> Result<Vec<String>> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?;
    let names: Vec<String> = headers.iter().map(|s| s.to_string()).collect();
    let mut seen = BTreeSet::new();
    for n in &names {
        if !seen.insert(n.clone()) {
            return Err(Error::DuplicateColumn(n.clone()));
        }
    }
    Ok(names)
}

fn resolve_fetch(header: &[String], opts: &ReadOptions) -> Result<Vec<usize>> {
    if let Some(usecols) = &opts.usecols {
        for c in usecols {
            if !header.contains(c) {
                return Err(Error::UnknownColumn(c.clone()));
            }
        }
        Ok(header
            .iter()
            .enumerate()
            .filter(|(_, n)| usecols.contains(n))
            .map(|(i, _)| i)
            .collect())
    } else {
        Ok((0..header.len()).collect())
    }
}

#[derive(Debug, Clone, Copy)]
struct InferState {
    saw_value: bool,
    could_int: bool,
    could_float: bool,
    could_bool: bool,
}

impl InferState {
    fn new() -> InferState {
        InferState {
            saw_value: false,
            could_int: true,
            could_float: true,
            could_bool: true,
        }
    }

    fn feed(&mut self, raw: &str) {
        if raw.is_empty() {
            return;
        }
        self.saw_value = true;
        let t = raw.trim();
        if self.could_int && t.parse::<i64>().is_err() {
            self.could_int = false;
        }
        if self.could_float && t.parse::<f64>().is_err() {
            self.could_float = false;
        }
        if self.could_bool && !matches!(t, "true" | "True" | "false" | "False") {
            self.could_bool = false;
        }
    }

    fn dtype(&self) -> Dtype {
        if !self.saw_value {
            Dtype::Text
        } else if self.could_int {
            Dtype::Int64
        } else if self.could_float {
            Dtype::Float64
        } else if self.could_bool {
            Dtype::Bool
        } else {
            Dtype::Text
        }
    }
}

fn build_plan(path: &str, opts: &ReadOptions) -> Result<ReadPlan> {
    let header = read_header(path)?;
    for name in opts.dtypes.keys().chain(opts.parse_dates.iter()) {
        if !header.contains(name) {
            return Err(Error::UnknownColumn(name.clone()));
        }
    }
    let fetch = resolve_fetch(&header, opts)?;

    let needs_inference: Vec<usize> = fetch
        .iter()
        .copied()
        .filter(|&i| {
            !opts.dtypes.contains_key(&header[i]) && !opts.parse_dates.contains(&header[i])
        })
        .collect();
    let mut inferred: BTreeMap<usize, Dtype> = BTreeMap::new();
    if !needs_inference.is_empty() {
        let mut states: Vec<InferState> = needs_inference.iter().map(|_| InferState::new()).collect();
        let mut rdr = open_reader(path)?;
        let mut record = csv::StringRecord::new();
        loop {
            match rdr.read_record(&mut record) {
                Ok(false) => break,
                Ok(true) => {
                    for (si, &ci) in needs_inference.iter().enumerate() {
                        states[si].feed(record.get(ci).unwrap_or(""));
                    }
                }
                Err(e) => return Err(csv_error(path, e)),
            }
        }
        for (si, &ci) in needs_inference.iter().enumerate() {
            inferred.insert(ci, states[si].dtype());
        }
    }

    let cols = fetch
        .iter()
        .map(|&i| {
            let name = header[i].clone();
            let (target, explicit) = if let Some(dt) = opts.dtypes.get(&name) {
                (*dt, true)
            } else if opts.parse_dates.contains(&name) {
                (Dtype::Date, true)
            } else {
                (inferred[&i], false)
            };
            ColPlan {
                name,
                src_index: i,
                target,
                explicit,
            }
        })
        .collect();
    Ok(ReadPlan { cols })
}

fn parse_cell(raw: &str, plan: &ColPlan, row: u64) -> Result<Scalar> {
    if raw.is_empty() {
        return Ok(Scalar::Null);
    }
    let fail = || Error::TypeCoercion {
        column: plan.name.clone(),
        row,
        value: raw.to_string(),
        dtype: plan.target.name().to_string(),
    };
    let t = raw.trim();
    Ok(match plan.target {
        Dtype::Int64 => Scalar::Int(t.parse::<i64>().map_err(|_| fail())?),
        Dtype::Float64 => Scalar::Float(t.parse::<f64>().map_err(|_| fail())?),
        Dtype::Bool => match t {
            "true" | "True" => Scalar::Bool(true),
            "false" | "False" => Scalar::Bool(false),
            _ => return Err(fail()),
        },
        Dtype::Date => Scalar::Date(parse_date(t).ok_or_else(fail)?),
        Dtype::Text | Dtype::Category => Scalar::Text(raw.to_string()),
    })
}

fn builders_for(plan: &ReadPlan) -> Vec<ColumnBuilder> {
    plan.cols
        .iter()
        .map(|c| ColumnBuilder::new(&c.name, c.target))
        .collect()
}

fn push_record(
    plan: &ReadPlan,
    builders: &mut [ColumnBuilder],
    record: &csv::StringRecord,
    row: u64,
) -> Result<()> {
    for (b, c) in builders.iter_mut().zip(plan.cols.iter()) {
        let raw = record.get(c.src_index).unwrap_or("");
        let v = parse_cell(raw, c, row);
        match v {
            Ok(v) => b.push(v)?,
            Err(e) => {
                // inferred dtypes were established over the whole file, so a
                // parse failure there is an internal inconsistency
                if c.explicit {
                    return Err(e);
                }
                return Err(Error::Internal(format!(
                    "inference disagreed with cell at row {row} of column {}",
                    c.name
                )));
            }
        }
    }
    Ok(())
}

/// Eager whole-file read. Returns the frame and the number of columns parsed.
pub fn read_csv(path: &str, opts: &ReadOptions) -> Result<(Frame, u64)> {
    let plan = build_plan(path, opts)?;
    let mut builders = builders_for(&plan);
    let mut rdr = open_reader(path)?;
    let mut record = csv::StringRecord::new();
    let mut row = 0u64;
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                push_record(&plan, &mut builders, &record, row)?;
                row += 1;
            }
            Err(e) => return Err(csv_error(path, e)),
        }
    }
    let parsed = plan.cols.len() as u64;
    let columns: Vec<Column> = builders.into_iter().map(|b| b.finish()).collect();
    let frame = if columns.is_empty() {
        Frame::new_empty(row as usize)
    } else {
        Frame::new(columns)?
    };
    Ok((frame, parsed))
}

/// Incremental reader for the streaming backend: yields frames of at most
/// `chunk_rows` rows until the file is exhausted.
pub struct CsvChunks {
    path: String,
    plan: ReadPlan,
    records: csv::StringRecordsIntoIter<File>,
    chunk_rows: usize,
    row: u64,
    done: bool,
}

impl CsvChunks {
    pub fn next_chunk(&mut self) -> Result<Option<Frame>> {
        if self.done {
            return Ok(None);
        }
        let mut builders = builders_for(&self.plan);
        let mut n = 0usize;
        while n < self.chunk_rows {
            match self.records.next() {
                None => {
                    self.done = true;
                    break;
                }
                Some(Err(e)) => return Err(csv_error(&self.path, e)),
                Some(Ok(record)) => {
                    push_record(&self.plan, &mut builders, &record, self.row)?;
                    self.row += 1;
                    n += 1;
                }
            }
        }
        if n == 0 {
            return Ok(None);
        }
        let columns: Vec<Column> = builders.into_iter().map(|b| b.finish()).collect();
        Ok(Some(if columns.is_empty() {
            Frame::new_empty(n)
        } else {
            Frame::new(columns)?
        }))
    }
}

/// Open a chunked read. The inference pass (when needed) streams the file
/// once up front; chunks then re-stream it. Returns the reader and the
/// number of columns it will parse.
pub fn open_chunks(path: &str, opts: &ReadOptions, chunk_rows: usize) -> Result<(CsvChunks, u64)> {
    let plan = build_plan(path, opts)?;
    let rdr = open_reader(path)?;
    let parsed = plan.cols.len() as u64;
    Ok((
        CsvChunks {
            path: path.to_string(),
            plan,
            records: rdr.into_records(),
            chunk_rows: chunk_rows.max(1),
            row: 0,
            done: false,
        },
        parsed,
    ))
}
