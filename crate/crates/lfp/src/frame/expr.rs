//! Row expressions over one frame: column refs, literals, arithmetic,
//! comparisons, boolean connectives, day-of-week extraction, aggregate
//! subexpressions, and references to scalar results of other task-graph
//! nodes (`SubResult`).
//!
//! Comparisons involving null evaluate to false. Arithmetic involving null
//! yields null. Integer arithmetic wraps; `/` always produces float64.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::frame::{day_of_week, parse_date, Column, ColumnBuilder, Dtype, Frame, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Gt,
    Ge,
    Lt,
    Le,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinOp::Gt | BinOp::Ge | BinOp::Lt | BinOp::Le | BinOp::Eq | BinOp::Ne
        )
    }

    pub fn is_connective(self) -> bool {
        matches!(self, BinOp::And | BinOp::Or)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&",
            BinOp::Or => "|",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggOp {
    Sum,
    Mean,
    Max,
    Min,
    Count,
}

impl AggOp {
    pub fn name(self) -> &'static str {
        match self {
            AggOp::Sum => "sum",
            AggOp::Mean => "mean",
            AggOp::Max => "max",
            AggOp::Min => "min",
            AggOp::Count => "count",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(Scalar),
    Col(String),
    /// Scalar result of the owning node's extra source at this index.
    SubResult(usize),
    Bin {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Not(Box<Expr>),
    Neg(Box<Expr>),
    DayOfWeek(Box<Expr>),
    /// Aggregate over the input frame, e.g. the `max` in `a > a.max() * 0.1`.
    Agg {
        op: AggOp,
        arg: Box<Expr>,
    },
}

impl Expr {
    pub fn col(name: &str) -> Expr {
        Expr::Col(name.to_string())
    }

    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Bin {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn used_columns(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_columns(&mut out);
        out
    }

    fn collect_columns(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Col(c) => {
                out.insert(c.clone());
            }
            Expr::Bin { lhs, rhs, .. } => {
                lhs.collect_columns(out);
                rhs.collect_columns(out);
            }
            Expr::Not(e) | Expr::Neg(e) | Expr::DayOfWeek(e) => e.collect_columns(out),
            Expr::Agg { arg, .. } => arg.collect_columns(out),
            Expr::Lit(_) | Expr::SubResult(_) => {}
        }
    }

    pub fn contains_agg(&self) -> bool {
        match self {
            Expr::Agg { .. } => true,
            Expr::Bin { lhs, rhs, .. } => lhs.contains_agg() || rhs.contains_agg(),
            Expr::Not(e) | Expr::Neg(e) | Expr::DayOfWeek(e) => e.contains_agg(),
            Expr::Lit(_) | Expr::Col(_) | Expr::SubResult(_) => false,
        }
    }

    /// Top-level operator, used by the row-selection classifier.
    pub fn top_binop(&self) -> Option<BinOp> {
        match self {
            Expr::Bin { op, .. } => Some(*op),
            _ => None,
        }
    }

    /// Replace column references through `map` (old name -> new name).
    pub fn rename_columns(&self, map: &dyn Fn(&str) -> Option<String>) -> Expr {
        match self {
            Expr::Col(c) => match map(c) {
                Some(n) => Expr::Col(n),
                None => Expr::Col(c.clone()),
            },
            Expr::Bin { op, lhs, rhs } => Expr::Bin {
                op: *op,
                lhs: Box::new(lhs.rename_columns(map)),
                rhs: Box::new(rhs.rename_columns(map)),
            },
            Expr::Not(e) => Expr::Not(Box::new(e.rename_columns(map))),
            Expr::Neg(e) => Expr::Neg(Box::new(e.rename_columns(map))),
            Expr::DayOfWeek(e) => Expr::DayOfWeek(Box::new(e.rename_columns(map))),
            Expr::Agg { op, arg } => Expr::Agg {
                op: *op,
                arg: Box::new(arg.rename_columns(map)),
            },
            Expr::Lit(_) | Expr::SubResult(_) => self.clone(),
        }
    }

    /// Renumber `SubResult` references, used when predicates from different
    /// nodes are combined and their scalar source lists are concatenated.
    pub fn remap_subresults(&self, map: &dyn Fn(usize) -> usize) -> Expr {
        match self {
            Expr::SubResult(i) => Expr::SubResult(map(*i)),
            Expr::Bin { op, lhs, rhs } => Expr::Bin {
                op: *op,
                lhs: Box::new(lhs.remap_subresults(map)),
                rhs: Box::new(rhs.remap_subresults(map)),
            },
            Expr::Not(e) => Expr::Not(Box::new(e.remap_subresults(map))),
            Expr::Neg(e) => Expr::Neg(Box::new(e.remap_subresults(map))),
            Expr::DayOfWeek(e) => Expr::DayOfWeek(Box::new(e.remap_subresults(map))),
            Expr::Agg { op, arg } => Expr::Agg {
                op: *op,
                arg: Box::new(arg.remap_subresults(map)),
            },
            Expr::Lit(_) | Expr::Col(_) => self.clone(),
        }
    }

    /// Compact display used in DOT labels and graph dumps.
    pub fn display(&self) -> String {
        match self {
            Expr::Lit(s) => match s {
                Scalar::Text(t) => format!("'{t}'"),
                other => other.render(),
            },
            Expr::Col(c) => c.clone(),
            Expr::SubResult(i) => format!("$src{i}"),
            Expr::Bin { op, lhs, rhs } => {
                format!("({} {} {})", lhs.display(), op.symbol(), rhs.display())
            }
            Expr::Not(e) => format!("!{}", e.display()),
            Expr::Neg(e) => format!("-{}", e.display()),
            Expr::DayOfWeek(e) => format!("{}.dt.dayofweek", e.display()),
            Expr::Agg { op, arg } => format!("{}.{}()", arg.display(), op.name()),
        }
    }
}

/// Result of vectorized evaluation: a column (one value per row) or a
/// broadcast scalar.
#[derive(Debug, Clone)]
pub enum EvalOut {
    Col(Column),
    Scalar(Scalar),
}

impl EvalOut {
    pub fn get(&self, i: usize) -> Scalar {
        match self {
            EvalOut::Col(c) => c.get(i),
            EvalOut::Scalar(s) => s.clone(),
        }
    }

    /// Materialize as a column of `rows` values named `name`.
    pub fn into_column(self, name: &str, rows: usize) -> Result<Column> {
        match self {
            EvalOut::Col(c) => Ok(c.renamed(name)),
            EvalOut::Scalar(s) => {
                let dt = s.dtype().unwrap_or(Dtype::Int64);
                let mut b = ColumnBuilder::new(name, dt);
                for _ in 0..rows {
                    b.push(s.clone())?;
                }
                Ok(b.finish())
            }
        }
    }
}

fn numeric_pair(a: &Scalar, b: &Scalar) -> Option<(f64, f64)> {
    Some((a.as_f64()?, b.as_f64()?))
}

/// Scalar arithmetic. Null propagates.
pub fn arith_scalars(op: BinOp, a: &Scalar, b: &Scalar) -> Result<Scalar> {
    if a.is_null() || b.is_null() {
        return Ok(Scalar::Null);
    }
    let fail = || {
        Error::TypeMismatch(format!(
            "cannot apply {} to {} and {}",
            op.symbol(),
            a.dtype().map(|d| d.name()).unwrap_or("null"),
            b.dtype().map(|d| d.name()).unwrap_or("null"),
        ))
    };
    match op {
        BinOp::Add | BinOp::Sub | BinOp::Mul => match (a, b) {
            (Scalar::Int(x), Scalar::Int(y)) => Ok(Scalar::Int(match op {
                BinOp::Add => x.wrapping_add(*y),
                BinOp::Sub => x.wrapping_sub(*y),
                _ => x.wrapping_mul(*y),
            })),
            _ => {
                let (x, y) = numeric_pair(a, b).ok_or_else(fail)?;
                Ok(Scalar::Float(match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    _ => x * y,
                }))
            }
        },
        BinOp::Div => {
            let (x, y) = numeric_pair(a, b).ok_or_else(fail)?;
            Ok(Scalar::Float(x / y))
        }
        _ => Err(Error::Internal(format!(
            "arith_scalars called with {}",
            op.symbol()
        ))),
    }
}

/// Scalar comparison. Any null operand compares false.
pub fn compare_scalars(op: BinOp, a: &Scalar, b: &Scalar) -> Result<bool> {
    if a.is_null() || b.is_null() {
        return Ok(false);
    }
    let ord = ordering_of(a, b)?;
    Ok(match op {
        BinOp::Gt => ord == std::cmp::Ordering::Greater,
        BinOp::Ge => ord != std::cmp::Ordering::Less,
        BinOp::Lt => ord == std::cmp::Ordering::Less,
        BinOp::Le => ord != std::cmp::Ordering::Greater,
        BinOp::Eq => ord == std::cmp::Ordering::Equal,
        BinOp::Ne => ord != std::cmp::Ordering::Equal,
        _ => {
            return Err(Error::Internal(format!(
                "compare_scalars called with {}",
                op.symbol()
            )))
        }
    })
}

/// Total order over non-null scalars of compatible types. Numeric types
/// compare via f64; a date and an ISO-formatted text literal compare as
/// dates; floats use IEEE total ordering.
pub fn ordering_of(a: &Scalar, b: &Scalar) -> Result<std::cmp::Ordering> {
    use Scalar::*;
    let fail = || {
        Error::TypeMismatch(format!(
            "cannot compare {} with {}",
            a.dtype().map(|d| d.name()).unwrap_or("null"),
            b.dtype().map(|d| d.name()).unwrap_or("null"),
        ))
    };
    match (a, b) {
        (Int(x), Int(y)) => Ok(x.cmp(y)),
        (Float(x), Float(y)) => Ok(x.total_cmp(y)),
        (Int(x), Float(y)) => Ok((*x as f64).total_cmp(y)),
        (Float(x), Int(y)) => Ok(x.total_cmp(&(*y as f64))),
        (Bool(x), Bool(y)) => Ok(x.cmp(y)),
        (Text(x), Text(y)) => Ok(x.cmp(y)),
        (Date(x), Date(y)) => Ok(x.cmp(y)),
        (Date(x), Text(y)) => match parse_date(y) {
            Some(d) => Ok(x.cmp(&d)),
            None => Err(fail()),
        },
        (Text(x), Date(y)) => match parse_date(x) {
            Some(d) => Ok(d.cmp(y)),
            None => Err(fail()),
        },
        _ => Err(fail()),
    }
}

fn truthy(s: &Scalar) -> bool {
    matches!(s, Scalar::Bool(true))
}

/// Aggregate a sequence of scalars with null skipping. `sum` over nothing is
/// 0 (int) / 0.0 (float); `mean`/`max`/`min` over nothing is null; `count`
/// counts non-null values.
pub fn aggregate(op: AggOp, values: impl Iterator<Item = Scalar>, dtype: Option<Dtype>) -> Result<Scalar> {
    let mut acc = AggState::new(op);
    for v in values {
        acc.push(&v)?;
    }
    acc.finish(dtype)
}

/// Incremental aggregate accumulator, shared by the eager kernels and the
/// streaming group-by.
#[derive(Debug, Clone)]
pub struct AggState {
    op: AggOp,
    count: u64,
    int_sum: i64,
    float_sum: f64,
    saw_float: bool,
    best: Option<Scalar>,
}

impl AggState {
    pub fn new(op: AggOp) -> AggState {
        AggState {
            op,
            count: 0,
            int_sum: 0,
            float_sum: 0.0,
            saw_float: false,
            best: None,
        }
    }

    pub fn push(&mut self, v: &Scalar) -> Result<()> {
        if v.is_null() {
            return Ok(());
        }
        self.count += 1;
        match self.op {
            AggOp::Count => {}
            AggOp::Sum | AggOp::Mean => match v {
                Scalar::Int(x) => {
                    self.int_sum = self.int_sum.wrapping_add(*x);
                    self.float_sum += *x as f64;
                }
                Scalar::Float(x) => {
                    self.saw_float = true;
                    self.float_sum += *x;
                }
                other => {
                    return Err(Error::TypeMismatch(format!(
                        "cannot {} over {}",
                        self.op.name(),
                        other.dtype().map(|d| d.name()).unwrap_or("null")
                    )))
                }
            },
            AggOp::Max | AggOp::Min => {
                let keep = match &self.best {
                    None => true,
                    Some(b) => {
                        let ord = ordering_of(v, b)?;
                        if self.op == AggOp::Max {
                            ord == std::cmp::Ordering::Greater
                        } else {
                            ord == std::cmp::Ordering::Less
                        }
                    }
                };
                if keep {
                    self.best = Some(v.clone());
                }
            }
        }
        Ok(())
    }

    /// Rough in-memory footprint, used for stream budget accounting.
    pub fn state_bytes(&self) -> u64 {
        40 + match &self.best {
            Some(Scalar::Text(t)) => t.len() as u64,
            _ => 0,
        }
    }

    pub fn finish(&self, input_dtype: Option<Dtype>) -> Result<Scalar> {
        Ok(match self.op {
            AggOp::Count => Scalar::Int(self.count as i64),
            AggOp::Sum => {
                if self.saw_float || input_dtype == Some(Dtype::Float64) {
                    Scalar::Float(self.float_sum)
                } else {
                    Scalar::Int(self.int_sum)
                }
            }
            AggOp::Mean => {
                if self.count == 0 {
                    Scalar::Null
                } else {
                    Scalar::Float(self.float_sum / self.count as f64)
                }
            }
            AggOp::Max | AggOp::Min => self.best.clone().unwrap_or(Scalar::Null),
        })
    }
}

/// Vectorized expression evaluation over `frame`. `subresults` supplies the
/// scalar values for `Expr::SubResult` references.
pub fn eval(frame: &Frame, expr: &Expr, subresults: &[Scalar]) -> Result<EvalOut> {
    match expr {
        Expr::Lit(s) => Ok(EvalOut::Scalar(s.clone())),
        Expr::Col(name) => Ok(EvalOut::Col(frame.col(name)?.clone())),
        Expr::SubResult(i) => subresults
            .get(*i)
            .cloned()
            .map(EvalOut::Scalar)
            .ok_or_else(|| Error::Internal(format!("missing subresult {i}"))),
        Expr::Agg { op, arg } => {
            let inner = eval(frame, arg, subresults)?;
            let (iter, dtype): (Box<dyn Iterator<Item = Scalar>>, Option<Dtype>) = match &inner {
                EvalOut::Col(c) => {
                    let col = c.clone();
                    let dt = col.dtype();
                    (
                        Box::new((0..col.len()).map(move |i| col.get(i))),
                        Some(match dt {
                            Dtype::Category => Dtype::Text,
                            d => d,
                        }),
                    )
                }
                EvalOut::Scalar(s) => {
                    let s = s.clone();
                    let dt = s.dtype();
                    (Box::new((0..frame.rows()).map(move |_| s.clone())), dt)
                }
            };
            Ok(EvalOut::Scalar(aggregate(*op, iter, dtype)?))
        }
        Expr::Not(e) => {
            let inner = eval(frame, e, subresults)?;
            if let EvalOut::Scalar(s) = &inner {
                return Ok(EvalOut::Scalar(Scalar::Bool(!truthy(s))));
            }
            map_rows(frame.rows(), &[inner], |vals| {
                Ok(Scalar::Bool(!truthy(&vals[0])))
            })
        }
        Expr::Neg(e) => {
            let inner = eval(frame, e, subresults)?;
            if let EvalOut::Scalar(s) = &inner {
                return Ok(EvalOut::Scalar(neg_scalar(s)?));
            }
            map_rows(frame.rows(), &[inner], |vals| neg_scalar(&vals[0]))
        }
        Expr::DayOfWeek(e) => {
            let inner = eval(frame, e, subresults)?;
            if let EvalOut::Scalar(s) = &inner {
                return Ok(EvalOut::Scalar(dow_scalar(s)?));
            }
            map_rows(frame.rows(), &[inner], |vals| dow_scalar(&vals[0]))
        }
        Expr::Bin { op, lhs, rhs } => {
            let l = eval(frame, lhs, subresults)?;
            let r = eval(frame, rhs, subresults)?;
            if let (EvalOut::Scalar(a), EvalOut::Scalar(b)) = (&l, &r) {
                return Ok(EvalOut::Scalar(apply_scalar_bin(*op, a, b)?));
            }
            map_rows(frame.rows(), &[l, r], |vals| {
                apply_scalar_bin(*op, &vals[0], &vals[1])
            })
        }
    }
}

fn neg_scalar(v: &Scalar) -> Result<Scalar> {
    match v {
        Scalar::Null => Ok(Scalar::Null),
        Scalar::Int(x) => Ok(Scalar::Int(x.wrapping_neg())),
        Scalar::Float(x) => Ok(Scalar::Float(-x)),
        other => Err(Error::TypeMismatch(format!(
            "cannot negate {}",
            other.dtype().map(|d| d.name()).unwrap_or("null")
        ))),
    }
}

fn dow_scalar(v: &Scalar) -> Result<Scalar> {
    match v {
        Scalar::Null => Ok(Scalar::Null),
        Scalar::Date(d) => Ok(Scalar::Int(day_of_week(*d))),
        other => Err(Error::TypeMismatch(format!(
            "dt.dayofweek needs a date column, got {}",
            other.dtype().map(|d| d.name()).unwrap_or("null")
        ))),
    }
}

pub fn apply_scalar_bin(op: BinOp, a: &Scalar, b: &Scalar) -> Result<Scalar> {
    if op.is_comparison() {
        return Ok(Scalar::Bool(compare_scalars(op, a, b)?));
    }
    match op {
        BinOp::And | BinOp::Or => {
            let x = truthy(a);
            let y = truthy(b);
            Ok(Scalar::Bool(if op == BinOp::And { x && y } else { x || y }))
        }
        _ => arith_scalars(op, a, b),
    }
}

fn map_rows(
    rows: usize,
    inputs: &[EvalOut],
    f: impl Fn(&[Scalar]) -> Result<Scalar>,
) -> Result<EvalOut> {
    let mut out: Option<ColumnBuilder> = None;
    let mut vals: Vec<Scalar> = Vec::with_capacity(inputs.len());
    for i in 0..rows {
        vals.clear();
        for input in inputs {
            vals.push(input.get(i));
        }
        let v = f(&vals)?;
        if out.is_none() {
            let dt = v.dtype().unwrap_or(Dtype::Int64);
            out = Some(ColumnBuilder::new("value", dt));
        }
        let b = out.as_mut().unwrap();
        if b.push(v.clone()).is_err() {
            // dtype settled too eagerly (e.g. first row null typed int, later
            // float): rebuild wider.
            let prev = std::mem::replace(b, ColumnBuilder::new("value", Dtype::Float64));
            let done = prev.finish();
            for j in 0..done.len() {
                b.push(done.get(j))?;
            }
            b.push(v)?;
        }
    }
    match out {
        Some(b) => Ok(EvalOut::Col(b.finish())),
        None => Ok(EvalOut::Col(ColumnBuilder::new("value", Dtype::Int64).finish())),
    }
}

/// Evaluate a predicate to a row mask. A scalar predicate broadcasts; nulls
/// count as false.
pub fn eval_mask(frame: &Frame, pred: &Expr, subresults: &[Scalar]) -> Result<Vec<bool>> {
    let out = eval(frame, pred, subresults)?;
    match out {
        EvalOut::Scalar(s) => Ok(vec![truthy(&s); frame.rows()]),
        EvalOut::Col(c) => {
            if c.dtype() != Dtype::Bool {
                // a zero-row mask never settles on bool; it selects nothing
                if c.len() == 0 {
                    return Ok(Vec::new());
                }
                return Err(Error::TypeMismatch(format!(
                    "predicate evaluated to {}, expected bool",
                    c.dtype().name()
                )));
            }
            Ok((0..c.len()).map(|i| truthy(&c.get(i))).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> Frame {
        let mut a = ColumnBuilder::new("a", Dtype::Int64);
        let mut b = ColumnBuilder::new("b", Dtype::Float64);
        for (x, y) in [(1, 0.5), (2, 1.5), (3, 2.5)] {
            a.push(Scalar::Int(x)).unwrap();
            b.push(Scalar::Float(y)).unwrap();
        }
        a.push_null();
        b.push(Scalar::Float(9.0)).unwrap();
        Frame::new(vec![a.finish(), b.finish()]).unwrap()
    }

    #[test]
    fn comparison_with_null_is_false() {
        let f = frame();
        let mask = eval_mask(&f, &Expr::bin(BinOp::Gt, Expr::col("a"), Expr::Lit(Scalar::Int(0))), &[]).unwrap();
        assert_eq!(mask, vec![true, true, true, false]);
        let ne = eval_mask(&f, &Expr::bin(BinOp::Ne, Expr::col("a"), Expr::Lit(Scalar::Int(1))), &[]).unwrap();
        assert_eq!(ne, vec![false, true, true, false]);
    }

    #[test]
    fn arithmetic_null_propagates() {
        let f = frame();
        let out = eval(&f, &Expr::bin(BinOp::Add, Expr::col("a"), Expr::Lit(Scalar::Int(10))), &[]).unwrap();
        match out {
            EvalOut::Col(c) => {
                assert_eq!(c.get(0), Scalar::Int(11));
                assert_eq!(c.get(3), Scalar::Null);
            }
            _ => panic!("expected column"),
        }
    }

    #[test]
    fn int_division_yields_float() {
        let out = arith_scalars(BinOp::Div, &Scalar::Int(3), &Scalar::Int(2)).unwrap();
        assert_eq!(out, Scalar::Float(1.5));
        let inf = arith_scalars(BinOp::Div, &Scalar::Int(1), &Scalar::Int(0)).unwrap();
        assert_eq!(inf, Scalar::Float(f64::INFINITY));
    }

    #[test]
    fn aggregate_skips_nulls() {
        let f = frame();
        let sum = eval(&f, &Expr::Agg { op: AggOp::Sum, arg: Box::new(Expr::col("a")) }, &[]).unwrap();
        match sum {
            EvalOut::Scalar(Scalar::Int(6)) => {}
            other => panic!("unexpected {other:?}"),
        }
        let count = eval(&f, &Expr::Agg { op: AggOp::Count, arg: Box::new(Expr::col("a")) }, &[]).unwrap();
        match count {
            EvalOut::Scalar(Scalar::Int(3)) => {}
            other => panic!("unexpected {other:?}"),
        }
        let mean = eval(&f, &Expr::Agg { op: AggOp::Mean, arg: Box::new(Expr::col("a")) }, &[]).unwrap();
        match mean {
            EvalOut::Scalar(Scalar::Float(v)) => assert!((v - 2.0).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_aggregates() {
        assert_eq!(aggregate(AggOp::Sum, std::iter::empty(), Some(Dtype::Int64)).unwrap(), Scalar::Int(0));
        assert_eq!(aggregate(AggOp::Sum, std::iter::empty(), Some(Dtype::Float64)).unwrap(), Scalar::Float(0.0));
        assert_eq!(aggregate(AggOp::Mean, std::iter::empty(), Some(Dtype::Int64)).unwrap(), Scalar::Null);
        assert_eq!(aggregate(AggOp::Max, std::iter::empty(), Some(Dtype::Int64)).unwrap(), Scalar::Null);
    }

    #[test]
    fn agg_subexpression_sees_whole_input() {
        let f = frame();
        // a > max(a) * 0.9 keeps only the max row (3; the null row fails).
        let pred = Expr::bin(
            BinOp::Gt,
            Expr::col("a"),
            Expr::bin(
                BinOp::Mul,
                Expr::Agg { op: AggOp::Max, arg: Box::new(Expr::col("a")) },
                Expr::Lit(Scalar::Float(0.9)),
            ),
        );
        assert!(pred.contains_agg());
        let mask = eval_mask(&f, &pred, &[]).unwrap();
        assert_eq!(mask, vec![false, false, true, false]);
    }

    #[test]
    fn rename_columns_rewrites_refs() {
        let pred = Expr::bin(BinOp::Gt, Expr::col("new"), Expr::Lit(Scalar::Int(0)));
        let rewritten = pred.rename_columns(&|c| (c == "new").then(|| "old".to_string()));
        assert_eq!(rewritten.used_columns().into_iter().collect::<Vec<_>>(), vec!["old".to_string()]);
    }

    #[test]
    fn date_vs_text_literal_comparison() {
        let d = Scalar::Date(parse_date("2015-06-01").unwrap());
        assert!(compare_scalars(BinOp::Gt, &d, &Scalar::Text("2015-01-01".to_string())).unwrap());
        assert!(compare_scalars(BinOp::Lt, &d, &Scalar::Text("2016-01-01".to_string())).unwrap());
    }
}
