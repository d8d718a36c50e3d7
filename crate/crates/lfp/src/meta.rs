//! Dataset metadata sidecars: schema, row counts, distinct/null statistics,
//! and the category-candidate rule. A scan makes one full streaming pass and
//! writes `<path>.lfpmeta` atomically; lookups return the record only while
//! the file's modified time still matches.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::time::UNIX_EPOCH;

use crate::error::{Error, Result};
use crate::frame::csv::{open_chunks, ReadOptions};
use crate::frame::Dtype;

/// Distinct values stop being counted past this many; the sidecar records
/// the `many` marker instead.
pub const DISTINCT_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DistinctCount {
    Exact(u64),
    Many,
}

impl std::fmt::Display for DistinctCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DistinctCount::Exact(n) => write!(f, "{n}"),
            DistinctCount::Many => write!(f, "many"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMeta {
    pub name: String,
    pub dtype: Dtype,
    pub distinct: DistinctCount,
    pub nulls: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetMeta {
    pub path: String,
    /// seconds.nanos of the source file at scan completion
    pub modified: (u64, u32),
    pub row_count: u64,
    pub approx_row_bytes: u64,
    pub columns: Vec<ColumnMeta>,
}

pub fn sidecar_path(path: &str) -> String {
    format!("{path}.lfpmeta")
}

fn file_mtime(path: &str) -> Result<(u64, u32)> {
    let md = fs::metadata(path).map_err(|_| Error::MissingFile {
        path: path.to_string(),
    })?;
    let t = md.modified()?;
    let d = t.duration_since(UNIX_EPOCH).unwrap_or_default();
    Ok((d.as_secs(), d.subsec_nanos()))
}

/// Full pass over the file: exact row count, per-column null counts, and
/// distinct counts capped at [`DISTINCT_CAP`]. Writes the sidecar.
pub fn scan(path: &str) -> Result<DatasetMeta> {
    let size = fs::metadata(path)
        .map_err(|_| Error::MissingFile {
            path: path.to_string(),
        })?
        .len();
    let (mut chunks, _) = open_chunks(path, &ReadOptions::default(), 8192)?;
    let mut names: Vec<String> = Vec::new();
    let mut dtypes: Vec<Dtype> = Vec::new();
    let mut distinct: Vec<Option<BTreeSet<String>>> = Vec::new();
    let mut nulls: Vec<u64> = Vec::new();
    let mut rows = 0u64;
    let mut header_bytes = 0u64;
    while let Some(chunk) = chunks.next_chunk()? {
        if names.is_empty() {
            for c in chunk.columns() {
                names.push(c.name.clone());
                dtypes.push(c.dtype());
                distinct.push(Some(BTreeSet::new()));
                nulls.push(0);
            }
            header_bytes = (names.iter().map(|n| n.len() as u64).sum::<u64>()
                + names.len() as u64)
                .max(1);
        }
        rows += chunk.rows() as u64;
        for (i, c) in chunk.columns().iter().enumerate() {
            nulls[i] += c.null_count();
            if let Some(set) = distinct[i].as_mut() {
                for r in 0..c.len() {
                    let v = c.get(r);
                    if !v.is_null() {
                        set.insert(v.render());
                        if set.len() > DISTINCT_CAP {
                            distinct[i] = None;
                            break;
                        }
                    }
                }
            }
        }
    }
    if names.is_empty() {
        // empty-but-headered file: chunks never produced, read the header
        for name in crate::frame::csv::read_header(path)? {
            names.push(name);
            dtypes.push(Dtype::Text);
            distinct.push(Some(BTreeSet::new()));
            nulls.push(0);
        }
    }
    let columns = names
        .iter()
        .enumerate()
        .map(|(i, n)| ColumnMeta {
            name: n.clone(),
            dtype: dtypes[i],
            distinct: match &distinct[i] {
                Some(set) => DistinctCount::Exact(set.len() as u64),
                None => DistinctCount::Many,
            },
            nulls: nulls[i],
        })
        .collect();
    let meta = DatasetMeta {
        path: path.to_string(),
        modified: file_mtime(path)?,
        row_count: rows,
        approx_row_bytes: if rows == 0 {
            0
        } else {
            size.saturating_sub(header_bytes) / rows
        },
        columns,
    };
    write_sidecar(&meta)?;
    Ok(meta)
}

/// Serve the stored record iff the file hasn't changed since the scan.
pub fn lookup(path: &str) -> Option<DatasetMeta> {
    let meta = read_sidecar(path).ok()??;
    let current = file_mtime(path).ok()?;
    if meta.modified == current {
        Some(meta)
    } else {
        None
    }
}

/// Text columns with few distinct values that the program never writes:
/// safe and worthwhile to load dictionary-encoded.
pub fn category_candidates(m: &DatasetMeta, readonly: &BTreeSet<String>) -> BTreeSet<String> {
    let threshold = (m.row_count / 10).min(1024);
    m.columns
        .iter()
        .filter(|c| {
            c.dtype == Dtype::Text
                && readonly.contains(&c.name)
                && matches!(c.distinct, DistinctCount::Exact(d) if d <= threshold)
        })
        .map(|c| c.name.clone())
        .collect()
}

pub fn render_sidecar(meta: &DatasetMeta) -> String {
    let mut s = String::new();
    s.push_str(&format!("path={}\n", meta.path));
    s.push_str(&format!("mtime={}.{}\n", meta.modified.0, meta.modified.1));
    s.push_str(&format!("rows={}\n", meta.row_count));
    s.push_str(&format!("row_bytes={}\n", meta.approx_row_bytes));
    for c in &meta.columns {
        s.push_str(&format!(
            "col={}|{}|{}|{}\n",
            c.name, c.dtype, c.distinct, c.nulls
        ));
    }
    s
}

/// Atomic write: temp file in the same directory, then rename over.
pub fn write_sidecar(meta: &DatasetMeta) -> Result<()> {
    let target = sidecar_path(&meta.path);
    let tmp = format!("{target}.tmp{}", std::process::id());
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(render_sidecar(meta).as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, &target)?;
    Ok(())
}

/// Parse the sidecar if present; `Ok(None)` when never scanned.
pub fn read_sidecar(path: &str) -> Result<Option<DatasetMeta>> {
    let target = sidecar_path(path);
    let text = match fs::read_to_string(&target) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    let mut columns = Vec::new();
    for line in text.lines() {
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Internal(format!("bad sidecar line: {line}")));
        };
        if k == "col" {
            let parts: Vec<&str> = v.split('|').collect();
            if parts.len() != 4 {
                return Err(Error::Internal(format!("bad sidecar column: {v}")));
            }
            columns.push(ColumnMeta {
                name: parts[0].to_string(),
                dtype: Dtype::parse(parts[1])
                    .ok_or_else(|| Error::Internal(format!("bad sidecar dtype: {}", parts[1])))?,
                distinct: if parts[2] == "many" {
                    DistinctCount::Many
                } else {
                    DistinctCount::Exact(parts[2].parse().map_err(|_| {
                        Error::Internal(format!("bad sidecar distinct: {}", parts[2]))
                    })?)
                },
                nulls: parts[3]
                    .parse()
                    .map_err(|_| Error::Internal(format!("bad sidecar nulls: {}", parts[3])))?,
            });
        } else {
            fields.insert(k, v);
        }
    }
    let get = |k: &str| -> Result<&str> {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| Error::Internal(format!("sidecar missing {k}")))
    };
    let (secs, nanos) = get("mtime")?
        .split_once('.')
        .ok_or_else(|| Error::Internal("bad sidecar mtime".to_string()))?;
    Ok(Some(DatasetMeta {
        path: get("path")?.to_string(),
        modified: (
            secs.parse()
                .map_err(|_| Error::Internal("bad sidecar mtime".to_string()))?,
            nanos
                .parse()
                .map_err(|_| Error::Internal("bad sidecar mtime".to_string()))?,
        ),
        row_count: get("rows")?
            .parse()
            .map_err(|_| Error::Internal("bad sidecar rows".to_string()))?,
        approx_row_bytes: get("row_bytes")?
            .parse()
            .map_err(|_| Error::Internal("bad sidecar row_bytes".to_string()))?,
        columns,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_file(dir: &tempfile::TempDir, name: &str, content: &str) -> String {
        let path = dir.path().join(name);
        fs::write(&path, content).unwrap();
        path.to_string_lossy().to_string()
    }

    #[test]
    fn scan_counts_rows_nulls_and_distincts() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("id,kind,v\n");
        for i in 0..1000 {
            let kind = ["a", "b", "c"][i % 3];
            if i % 10 == 0 {
                body.push_str(&format!("{i},{kind},\n"));
            } else {
                body.push_str(&format!("{i},{kind},{}\n", i * 2));
            }
        }
        let p = write_file(&dir, "d.csv", &body);
        let m = scan(&p).unwrap();
        assert_eq!(m.row_count, 1000);
        let kind = m.columns.iter().find(|c| c.name == "kind").unwrap();
        assert_eq!(kind.distinct, DistinctCount::Exact(3));
        assert_eq!(kind.dtype, Dtype::Text);
        let v = m.columns.iter().find(|c| c.name == "v").unwrap();
        assert_eq!(v.nulls, 100);
    }

    #[test]
    fn empty_but_headered_file_scans_to_zero_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "e.csv", "a,b\n");
        let m = scan(&p).unwrap();
        assert_eq!(m.row_count, 0);
        assert_eq!(m.columns.len(), 2);
        for c in &m.columns {
            assert_eq!(c.distinct, DistinctCount::Exact(0));
        }
    }

    #[test]
    fn all_unique_column_hits_the_many_marker() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("id\n");
        for i in 0..(DISTINCT_CAP + 10) {
            body.push_str(&format!("u{i}\n"));
        }
        let p = write_file(&dir, "u.csv", &body);
        let m = scan(&p).unwrap();
        assert_eq!(m.columns[0].distinct, DistinctCount::Many);
    }

    #[test]
    fn lookup_honors_modified_time() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "d.csv", "a\n1\n2\n");
        assert!(lookup(&p).is_none(), "never scanned");
        scan(&p).unwrap();
        assert!(lookup(&p).is_some(), "fresh scan");
        // rewrite the file with a different timestamp
        std::thread::sleep(std::time::Duration::from_millis(20));
        fs::write(&p, "a\n1\n2\n3\n").unwrap();
        assert!(lookup(&p).is_none(), "stale after update");
    }

    #[test]
    fn sidecar_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "d.csv", "a,word\n1,x\n2,y\n");
        let m = scan(&p).unwrap();
        let back = read_sidecar(&p).unwrap().unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn category_rule_needs_text_few_distincts_and_readonly() {
        let meta = DatasetMeta {
            path: "x.csv".to_string(),
            modified: (0, 0),
            row_count: 1000,
            approx_row_bytes: 20,
            columns: vec![
                ColumnMeta {
                    name: "kind".to_string(),
                    dtype: Dtype::Text,
                    distinct: DistinctCount::Exact(3),
                    nulls: 0,
                },
                ColumnMeta {
                    name: "note".to_string(),
                    dtype: Dtype::Text,
                    distinct: DistinctCount::Exact(3),
                    nulls: 0,
                },
                ColumnMeta {
                    name: "n".to_string(),
                    dtype: Dtype::Int64,
                    distinct: DistinctCount::Exact(3),
                    nulls: 0,
                },
                ColumnMeta {
                    name: "id".to_string(),
                    dtype: Dtype::Text,
                    distinct: DistinctCount::Many,
                    nulls: 0,
                },
            ],
        };
        let readonly: BTreeSet<String> =
            ["kind", "n", "id"].iter().map(|s| s.to_string()).collect();
        let cands = category_candidates(&meta, &readonly);
        assert!(cands.contains("kind"));
        assert!(!cands.contains("note"), "written columns excluded");
        assert!(!cands.contains("n"), "non-text excluded");
        assert!(!cands.contains("id"), "many-distinct excluded");
    }

    #[test]
    fn threshold_scales_with_row_count() {
        let mut meta = DatasetMeta {
            path: "x.csv".to_string(),
            modified: (0, 0),
            row_count: 50,
            approx_row_bytes: 8,
            columns: vec![ColumnMeta {
                name: "k".to_string(),
                dtype: Dtype::Text,
                distinct: DistinctCount::Exact(20),
                nulls: 0,
            }],
        };
        let readonly: BTreeSet<String> = ["k".to_string()].into_iter().collect();
        // 20 distinct over 50 rows: above rows/10, rejected
        assert!(category_candidates(&meta, &readonly).is_empty());
        meta.row_count = 10_000;
        assert!(category_candidates(&meta, &readonly).contains("k"));
    }
}
