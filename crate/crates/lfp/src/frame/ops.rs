//! Eager kernels. Every kernel is a pure function from frames to a new
//! frame (or scalar); inputs are never mutated.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::frame::expr::{self, AggOp, AggState, Expr};
use crate::frame::{Column, ColumnBuilder, ColumnData, Dtype, Frame, Scalar};

/// Join kind for [`merge`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinKind {
    Inner,
    Left,
    Right,
    Outer,
}

impl JoinKind {
    pub fn name(self) -> &'static str {
        match self {
            JoinKind::Inner => "inner",
            JoinKind::Left => "left",
            JoinKind::Right => "right",
            JoinKind::Outer => "outer",
        }
    }

    pub fn parse(s: &str) -> Option<JoinKind> {
        match s {
            "inner" => Some(JoinKind::Inner),
            "left" => Some(JoinKind::Left),
            "right" => Some(JoinKind::Right),
            "outer" => Some(JoinKind::Outer),
            _ => None,
        }
    }
}

/// Hashable, equality-normalized key cell for grouping, joining, and
/// deduplication. Floats are compared by normalized bits (-0.0 folds to 0.0,
/// all NaNs fold together); nulls equal each other.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum KeyVal {
    Null,
    Int(i64),
    FloatBits(u64),
    Bool(bool),
    Text(String),
    Date(i64),
}

pub fn key_of(s: &Scalar) -> KeyVal {
    match s {
        Scalar::Null => KeyVal::Null,
        Scalar::Int(v) => KeyVal::Int(*v),
        Scalar::Float(v) => {
            let norm = if *v == 0.0 {
                0.0f64
            } else if v.is_nan() {
                f64::NAN
            } else {
                *v
            };
            KeyVal::FloatBits(norm.to_bits())
        }
        Scalar::Bool(v) => KeyVal::Bool(*v),
        Scalar::Text(v) => KeyVal::Text(v.clone()),
        Scalar::Date(v) => KeyVal::Date(*v),
    }
}

pub fn row_key(f: &Frame, cols: &[usize], row: usize) -> Vec<KeyVal> {
    cols.iter()
        .map(|&c| key_of(&f.columns()[c].get(row)))
        .collect()
}

fn col_indices(f: &Frame, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            f.columns()
                .iter()
                .position(|c| &c.name == n)
                .ok_or_else(|| Error::UnknownColumn(n.clone()))
        })
        .collect()
}

/// Keep the rows where `pred` holds. Null predicate cells drop the row.
pub fn filter_rows(f: &Frame, pred: &Expr, subresults: &[Scalar]) -> Result<Frame> {
    let mask = expr::eval_mask(f, pred, subresults)?;
    let idx: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, keep)| keep.then_some(i))
        .collect();
    Ok(f.take(&idx))
}

/// Single-column frame for `df['c']`.
pub fn get_column(f: &Frame, name: &str) -> Result<Frame> {
    Frame::new(vec![f.col(name)?.clone()])
}

/// Column subset in the order given.
pub fn project(f: &Frame, names: &[String]) -> Result<Frame> {
    let idx = col_indices(f, names)?;
    Frame::new(idx.iter().map(|&i| f.columns()[i].clone()).collect())
}

/// Evaluate an expression as a one-column frame (series). The column keeps
/// its name when the expression is a plain column ref, otherwise `value`.
pub fn eval_series(f: &Frame, e: &Expr, subresults: &[Scalar]) -> Result<Frame> {
    let name = match e {
        Expr::Col(c) => c.clone(),
        _ => "value".to_string(),
    };
    let out = expr::eval(f, e, subresults)?;
    Frame::new(vec![out.into_column(&name, f.rows())?])
}

/// Add or overwrite column `name` with `expr` evaluated over `f`.
pub fn set_column(f: &Frame, name: &str, e: &Expr, subresults: &[Scalar]) -> Result<Frame> {
    let out = expr::eval(f, e, subresults)?;
    let new_col = out.into_column(name, f.rows())?;
    let mut cols: Vec<Column> = Vec::with_capacity(f.columns().len() + 1);
    let mut replaced = false;
    for c in f.columns() {
        if c.name == name {
            cols.push(new_col.clone());
            replaced = true;
        } else {
            cols.push(c.clone());
        }
    }
    if !replaced {
        cols.push(new_col);
    }
    Frame::new(cols)
}

/// Drop columns by name. Missing names are ignored, so upstream operations
/// that stop producing a column never invalidate a drop below them.
pub fn drop_columns(f: &Frame, names: &[String]) -> Result<Frame> {
    let keep: Vec<Column> = f
        .columns()
        .iter()
        .filter(|c| !names.contains(&c.name))
        .cloned()
        .collect();
    if keep.is_empty() {
        Ok(Frame::new_empty(f.rows()))
    } else {
        Frame::new(keep)
    }
}

/// Rename columns through an old -> new mapping. Every old name must exist,
/// and the result must still have unique names.
pub fn rename(f: &Frame, map: &[(String, String)]) -> Result<Frame> {
    for (old, _) in map {
        f.col(old)?;
    }
    let cols: Vec<Column> = f
        .columns()
        .iter()
        .map(|c| {
            match map.iter().find(|(old, _)| old == &c.name) {
                Some((_, new)) => c.renamed(new),
                None => c.clone(),
            }
        })
        .collect();
    Frame::new(cols)
}

fn cast_scalar(v: Scalar, to: Dtype, column: &str, row: usize) -> Result<Scalar> {
    if v.is_null() {
        return Ok(Scalar::Null);
    }
    let fail = |val: &Scalar| Error::TypeCoercion {
        column: column.to_string(),
        row: row as u64,
        value: val.render(),
        dtype: to.name().to_string(),
    };
    Ok(match (v, to) {
        (v @ Scalar::Int(_), Dtype::Int64) => v,
        (Scalar::Float(x), Dtype::Int64) => Scalar::Int(x.trunc() as i64),
        (Scalar::Bool(x), Dtype::Int64) => Scalar::Int(x as i64),
        (Scalar::Date(x), Dtype::Int64) => Scalar::Int(x),
        (Scalar::Text(x), Dtype::Int64) => match x.trim().parse::<i64>() {
            Ok(n) => Scalar::Int(n),
            Err(_) => return Err(fail(&Scalar::Text(x))),
        },
        (Scalar::Int(x), Dtype::Float64) => Scalar::Float(x as f64),
        (v @ Scalar::Float(_), Dtype::Float64) => v,
        (Scalar::Bool(x), Dtype::Float64) => Scalar::Float(x as i64 as f64),
        (Scalar::Text(x), Dtype::Float64) => match x.trim().parse::<f64>() {
            Ok(n) => Scalar::Float(n),
            Err(_) => return Err(fail(&Scalar::Text(x))),
        },
        (v @ Scalar::Bool(_), Dtype::Bool) => v,
        (Scalar::Text(x), Dtype::Bool) => match x.as_str() {
            "true" | "True" => Scalar::Bool(true),
            "false" | "False" => Scalar::Bool(false),
            _ => return Err(fail(&Scalar::Text(x))),
        },
        (v, Dtype::Text) | (v, Dtype::Category) => Scalar::Text(v.render()),
        (v @ Scalar::Date(_), Dtype::Date) => v,
        (Scalar::Int(x), Dtype::Date) => Scalar::Date(x),
        (Scalar::Text(x), Dtype::Date) => match crate::frame::parse_date(&x) {
            Some(d) => Scalar::Date(d),
            None => return Err(fail(&Scalar::Text(x))),
        },
        (v, to) => {
            return Err(Error::TypeMismatch(format!(
                "cannot cast {} column {} to {}",
                v.dtype().map(|d| d.name()).unwrap_or("null"),
                column,
                to.name()
            )))
        }
    })
}

/// Cast the named columns to new dtypes.
pub fn astype(f: &Frame, map: &[(String, Dtype)]) -> Result<Frame> {
    for (name, _) in map {
        f.col(name)?;
    }
    let cols: Vec<Column> = f
        .columns()
        .iter()
        .map(|c| {
            let Some((_, to)) = map.iter().find(|(n, _)| n == &c.name) else {
                return Ok(c.clone());
            };
            let mut b = ColumnBuilder::new(&c.name, *to);
            for i in 0..c.len() {
                b.push(cast_scalar(c.get(i), *to, &c.name, i)?)?;
            }
            Ok(b.finish())
        })
        .collect::<Result<_>>()?;
    Frame::new(cols)
}

fn fill_value_for(c: &Column, value: &Scalar) -> Option<Scalar> {
    match (c.dtype(), value) {
        (Dtype::Int64, Scalar::Int(_)) => Some(value.clone()),
        (Dtype::Int64, Scalar::Float(x)) => Some(Scalar::Int(x.trunc() as i64)),
        (Dtype::Float64, Scalar::Int(x)) => Some(Scalar::Float(*x as f64)),
        (Dtype::Float64, Scalar::Float(_)) => Some(value.clone()),
        (Dtype::Bool, Scalar::Bool(_)) => Some(value.clone()),
        (Dtype::Text, Scalar::Text(_)) | (Dtype::Category, Scalar::Text(_)) => Some(value.clone()),
        (Dtype::Date, Scalar::Date(_)) => Some(value.clone()),
        (Dtype::Date, Scalar::Text(x)) => crate::frame::parse_date(x).map(Scalar::Date),
        _ => None,
    }
}

/// Replace nulls with `value` in every column whose dtype accepts it;
/// incompatible columns pass through unchanged.
pub fn fillna(f: &Frame, value: &Scalar) -> Result<Frame> {
    let cols: Vec<Column> = f
        .columns()
        .iter()
        .map(|c| {
            let Some(fill) = fill_value_for(c, value) else {
                return Ok(c.clone());
            };
            if c.null_count() == 0 {
                return Ok(c.clone());
            }
            let mut b = ColumnBuilder::new(&c.name, c.dtype());
            for i in 0..c.len() {
                let v = c.get(i);
                b.push(if v.is_null() { fill.clone() } else { v })?;
            }
            Ok(b.finish())
        })
        .collect::<Result<_>>()?;
    Frame::new(cols)
}

/// Round float columns to `decimals` places, ties to even.
pub fn round_frame(f: &Frame, decimals: i32) -> Result<Frame> {
    let p = 10f64.powi(decimals);
    let cols: Vec<Column> = f
        .columns()
        .iter()
        .map(|c| match &c.data {
            ColumnData::Float64(v) => Column {
                name: c.name.clone(),
                data: ColumnData::Float64(v.iter().map(|x| (x * p).round_ties_even() / p).collect()),
                nulls: c.nulls.clone(),
            },
            _ => c.clone(),
        })
        .collect();
    Frame::new(cols)
}

/// Absolute value on numeric columns; other columns pass through.
pub fn abs_frame(f: &Frame) -> Result<Frame> {
    let cols: Vec<Column> = f
        .columns()
        .iter()
        .map(|c| match &c.data {
            ColumnData::Int64(v) => Column {
                name: c.name.clone(),
                data: ColumnData::Int64(v.iter().map(|x| x.wrapping_abs()).collect()),
                nulls: c.nulls.clone(),
            },
            ColumnData::Float64(v) => Column {
                name: c.name.clone(),
                data: ColumnData::Float64(v.iter().map(|x| x.abs()).collect()),
                nulls: c.nulls.clone(),
            },
            _ => c.clone(),
        })
        .collect();
    Frame::new(cols)
}

/// Keep the first row for each key tuple. `subset = None` keys on all
/// columns. Null key cells equal each other here (unlike comparisons).
pub fn drop_duplicates(f: &Frame, subset: Option<&[String]>) -> Result<Frame> {
    let key_cols: Vec<usize> = match subset {
        Some(names) => col_indices(f, names)?,
        None => (0..f.columns().len()).collect(),
    };
    let mut seen: HashSet<Vec<KeyVal>> = HashSet::new();
    let mut idx = Vec::new();
    for i in 0..f.rows() {
        if seen.insert(row_key(f, &key_cols, i)) {
            idx.push(i);
        }
    }
    Ok(f.take(&idx))
}

/// Stable multi-key sort; nulls sort last under both orders.
pub fn sort_values(f: &Frame, by: &[String], ascending: bool) -> Result<Frame> {
    if by.is_empty() {
        return Err(Error::EmptyKeyList);
    }
    let key_cols = col_indices(f, by)?;
    let mut idx: Vec<usize> = (0..f.rows()).collect();
    idx.sort_by(|&a, &b| compare_rows(f, &key_cols, a, b, ascending));
    Ok(f.take(&idx))
}

pub fn compare_rows(
    f: &Frame,
    key_cols: &[usize],
    a: usize,
    b: usize,
    ascending: bool,
) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    for &c in key_cols {
        let va = f.columns()[c].get(a);
        let vb = f.columns()[c].get(b);
        let ord = match (va.is_null(), vb.is_null()) {
            (true, true) => Ordering::Equal,
            (true, false) => return Ordering::Greater,
            (false, true) => return Ordering::Less,
            (false, false) => {
                let o = expr::ordering_of(&va, &vb).unwrap_or(Ordering::Equal);
                if ascending {
                    o
                } else {
                    o.reverse()
                }
            }
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    Ordering::Equal
}

pub fn head(f: &Frame, n: usize) -> Result<Frame> {
    Ok(f.head_rows(n))
}

/// Split `column` (text; `;`-separated list cells) into one row per element.
/// Null or empty cells keep one row with a null element.
pub fn explode(f: &Frame, column: &str) -> Result<Frame> {
    let col = f.col(column)?;
    match col.dtype() {
        Dtype::Text | Dtype::Category => {}
        other => {
            return Err(Error::TypeMismatch(format!(
                "explode needs a text column, {column} is {}",
                other.name()
            )))
        }
    }
    let mut idx: Vec<usize> = Vec::new();
    let mut parts = ColumnBuilder::new(column, Dtype::Text);
    for i in 0..f.rows() {
        match col.get(i) {
            Scalar::Text(s) if !s.is_empty() => {
                for part in s.split(';') {
                    idx.push(i);
                    parts.push(Scalar::Text(part.to_string()))?;
                }
            }
            _ => {
                idx.push(i);
                parts.push_null();
            }
        }
    }
    let exploded = parts.finish();
    let cols: Vec<Column> = f
        .columns()
        .iter()
        .map(|c| {
            if c.name == column {
                exploded.clone()
            } else {
                c.take(&idx)
            }
        })
        .collect();
    Frame::new(cols)
}

fn key_compatible(a: Dtype, b: Dtype) -> bool {
    let norm = |d: Dtype| match d {
        Dtype::Category => Dtype::Text,
        other => other,
    };
    norm(a) == norm(b)
}

/// Build-side index for hash joins: key tuple -> row indices in input order.
pub fn build_join_index(f: &Frame, on: &[String]) -> Result<HashMap<Vec<KeyVal>, Vec<usize>>> {
    let key_cols = col_indices(f, on)?;
    let mut index: HashMap<Vec<KeyVal>, Vec<usize>> = HashMap::new();
    for i in 0..f.rows() {
        let key = row_key(f, &key_cols, i);
        if key.iter().any(|k| matches!(k, KeyVal::Null)) {
            continue;
        }
        index.entry(key).or_default().push(i);
    }
    Ok(index)
}

/// Output column plan for a merge: left columns keep their order (collisions
/// with right non-key columns get `_x`), right non-key columns follow
/// (collisions get `_y`).
pub fn merge_column_plan(
    left_names: &[String],
    right_names: &[String],
    on: &[String],
) -> (Vec<(String, String)>, Vec<(String, String)>) {
    let collisions: Vec<&String> = left_names
        .iter()
        .filter(|n| right_names.contains(n) && !on.contains(n))
        .collect();
    let left_plan = left_names
        .iter()
        .map(|n| {
            let out = if collisions.contains(&n) {
                format!("{n}_x")
            } else {
                n.clone()
            };
            (n.clone(), out)
        })
        .collect();
    let right_plan = right_names
        .iter()
        .filter(|n| !on.contains(n))
        .map(|n| {
            let out = if collisions.contains(&n) {
                format!("{n}_y")
            } else {
                n.clone()
            };
            (n.clone(), out)
        })
        .collect();
    (left_plan, right_plan)
}

/// Hash join on equal key columns. Row order: left-major (matches in right
/// order per left row); right/outer append unmatched right rows in right
/// order. Null keys never match.
pub fn merge(left: &Frame, right: &Frame, on: &[String], how: JoinKind) -> Result<Frame> {
    if on.is_empty() {
        return Err(Error::EmptyKeyList);
    }
    for k in on {
        let l = left.col(k)?;
        let r = right.col(k)?;
        if !key_compatible(l.dtype(), r.dtype()) {
            return Err(Error::TypeMismatch(format!(
                "merge key {k} has dtype {} on the left and {} on the right",
                l.dtype().name(),
                r.dtype().name()
            )));
        }
    }
    let index = build_join_index(right, on)?;
    let left_keys = col_indices(left, on)?;

    let mut pairs: Vec<(Option<usize>, Option<usize>)> = Vec::new();
    let mut right_matched = vec![false; right.rows()];
    for i in 0..left.rows() {
        let key = row_key(left, &left_keys, i);
        let hit = if key.iter().any(|k| matches!(k, KeyVal::Null)) {
            None
        } else {
            index.get(&key)
        };
        match hit {
            Some(rows) => {
                for &r in rows {
                    right_matched[r] = true;
                    pairs.push((Some(i), Some(r)));
                }
            }
            None => {
                if matches!(how, JoinKind::Left | JoinKind::Outer) {
                    pairs.push((Some(i), None));
                }
            }
        }
    }
    if matches!(how, JoinKind::Right | JoinKind::Outer) {
        // matched pairs come out in left-major order; unmatched right rows
        // follow in right order
        for (r, matched) in right_matched.iter().enumerate() {
            if !matched {
                pairs.push((None, Some(r)));
            }
        }
    }

    emit_join(left, right, on, &pairs)
}

fn emit_join(
    left: &Frame,
    right: &Frame,
    on: &[String],
    pairs: &[(Option<usize>, Option<usize>)],
) -> Result<Frame> {
    let (left_plan, right_plan) = merge_column_plan(
        &left.column_names(),
        &right.column_names(),
        on,
    );
    let mut builders: Vec<(ColumnBuilder, bool, String)> = Vec::new();
    for (src, out) in &left_plan {
        let dt = left.col(src)?.dtype();
        builders.push((ColumnBuilder::new(out, dt), true, src.clone()));
    }
    for (src, out) in &right_plan {
        let dt = right.col(src)?.dtype();
        builders.push((ColumnBuilder::new(out, dt), false, src.clone()));
    }
    for &(l, r) in pairs {
        for (b, from_left, src) in builders.iter_mut() {
            let v = if *from_left {
                match l {
                    Some(i) => left.col(src)?.get(i),
                    None => {
                        if on.contains(src) {
                            match r {
                                Some(j) => right.col(src)?.get(j),
                                None => Scalar::Null,
                            }
                        } else {
                            Scalar::Null
                        }
                    }
                }
            } else {
                match r {
                    Some(j) => right.col(src)?.get(j),
                    None => Scalar::Null,
                }
            };
            b.push(v)?;
        }
    }
    Frame::new(builders.into_iter().map(|(b, _, _)| b.finish()).collect())
}

/// Group by `keys` and aggregate `col` with `op`. Rows with a null key are
/// excluded; output has one row per group, sorted ascending by key tuple.
pub fn groupby_agg(f: &Frame, keys: &[String], col: &str, op: AggOp) -> Result<Frame> {
    if keys.is_empty() {
        return Err(Error::EmptyKeyList);
    }
    let key_cols = col_indices(f, keys)?;
    let agg_col = f.col(col)?;
    let mut groups: HashMap<Vec<KeyVal>, (Vec<Scalar>, AggState)> = HashMap::new();
    let mut order: Vec<Vec<KeyVal>> = Vec::new();
    for i in 0..f.rows() {
        let key = row_key(f, &key_cols, i);
        if key.iter().any(|k| matches!(k, KeyVal::Null)) {
            continue;
        }
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            let scalars = key_cols.iter().map(|&c| f.columns()[c].get(i)).collect();
            (scalars, AggState::new(op))
        });
        entry.1.push(&agg_col.get(i))?;
    }
    let mut rows: Vec<(Vec<Scalar>, AggState)> = order
        .into_iter()
        .map(|k| groups.remove(&k).expect("group recorded"))
        .collect();
    rows.sort_by(|a, b| {
        for (x, y) in a.0.iter().zip(b.0.iter()) {
            match expr::ordering_of(x, y).unwrap_or(std::cmp::Ordering::Equal) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        std::cmp::Ordering::Equal
    });

    let agg_dtype = match agg_col.dtype() {
        Dtype::Category => Dtype::Text,
        d => d,
    };
    let mut key_builders: Vec<ColumnBuilder> = key_cols
        .iter()
        .zip(keys.iter())
        .map(|(&c, name)| ColumnBuilder::new(name, f.columns()[c].dtype()))
        .collect();
    let out_dtype = result_dtype(op, agg_dtype);
    let mut agg_builder = ColumnBuilder::new(col, out_dtype);
    for (key_scalars, state) in &rows {
        for (b, v) in key_builders.iter_mut().zip(key_scalars.iter()) {
            b.push(v.clone())?;
        }
        agg_builder.push(state.finish(Some(agg_dtype))?)?;
    }
    let mut cols: Vec<Column> = key_builders.into_iter().map(|b| b.finish()).collect();
    cols.push(agg_builder.finish());
    Frame::new(cols)
}

pub fn result_dtype(op: AggOp, input: Dtype) -> Dtype {
    match op {
        AggOp::Count => Dtype::Int64,
        AggOp::Mean => Dtype::Float64,
        AggOp::Sum => {
            if input == Dtype::Float64 {
                Dtype::Float64
            } else {
                Dtype::Int64
            }
        }
        AggOp::Max | AggOp::Min => input,
    }
}

/// Whole-column aggregate to a scalar. `col = None` requires a one-column
/// frame (series position).
pub fn agg_scalar(f: &Frame, col: Option<&str>, op: AggOp) -> Result<Scalar> {
    let column = match col {
        Some(name) => f.col(name)?,
        None => match f.columns() {
            [only] => only,
            cols => {
                return Err(Error::TypeMismatch(format!(
                    "aggregate over a {}-column frame needs an explicit column",
                    cols.len()
                )))
            }
        },
    };
    let dt = match column.dtype() {
        Dtype::Category => Dtype::Text,
        d => d,
    };
    let mut state = AggState::new(op);
    for i in 0..column.len() {
        state.push(&column.get(i))?;
    }
    state.finish(Some(dt))
}
