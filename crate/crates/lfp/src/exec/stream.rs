//! Out-of-core streaming backend. Nodes push fixed-size row chunks to their
//! consumers; only blocking state (group tables, join builds, sort buffers,
//! dedup keys, materialized shared results) may hold memory, and a budget on
//! that state turns overflow into a hard error instead of an OOM. Sorts that
//! outgrow their buffer spill sorted runs to disk and merge them back.
//!
//! Row order and values match the in-memory backend exactly; the one visible
//! difference is that category columns stitched from chunks degrade to text,
//! which the canonical form already treats as equal.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Seek, Write};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::frame::csv;
use crate::frame::expr::{self, AggOp, AggState, EvalOut, Expr};
use crate::frame::ops::{self, JoinKind, KeyVal};
use crate::frame::{ColumnBuilder, Dtype, Frame, Scalar};
use crate::graph::{Action, Graph, Value};

use super::{render_print, render_value, resolve_read_opts, Session};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    More,
    Stop,
}

type Sink<'s> = dyn FnMut(Frame) -> Result<Flow> + 's;

pub fn run_stream(
    session: &mut Session,
    g: &Graph,
    roots: &[u32],
) -> Result<BTreeMap<u32, Value>> {
    let order = super::exec_order(g, roots);
    let mut consumers: BTreeMap<u32, usize> = BTreeMap::new();
    for &uid in &order {
        if g.node(uid).result.is_some() {
            continue;
        }
        for &s in &g.node(uid).sources {
            *consumers.entry(s).or_insert(0) += 1;
        }
    }
    for &r in roots {
        *consumers.entry(r).or_insert(0) += 1;
    }
    let multi: BTreeSet<u32> = consumers
        .iter()
        .filter(|&(_, &c)| c > 1)
        .map(|(&u, _)| u)
        .collect();

    let mut ex = StreamExec {
        g,
        chunk_rows: session.backend.chunk_rows,
        budget: session.backend.mem_budget,
        blocking: 0,
        mat: BTreeMap::new(),
        multi,
        session,
    };
    let mut out: BTreeMap<u32, Value> = BTreeMap::new();
    for &r in roots {
        let v = ex.ensure(r)?;
        out.insert(r, v);
    }
    // persist-marked nodes were materialized on the way; surface them for
    // the session's write-back
    for &uid in &order {
        if g.node(uid).persist && !out.contains_key(&uid) {
            let v = ex.ensure(uid)?;
            out.insert(uid, v);
        }
    }
    Ok(out)
}

struct StreamExec<'a> {
    g: &'a Graph,
    chunk_rows: usize,
    budget: Option<u64>,
    /// bytes currently held by blocking state
    blocking: u64,
    mat: BTreeMap<u32, Value>,
    /// nodes with more than one consumer this run
    multi: BTreeSet<u32>,
    session: &'a mut Session,
}

impl<'a> StreamExec<'a> {
    /// Shared or persisted nodes must exist whole. Shared reads are the
    /// exception: re-streaming the file costs time, not memory.
    fn mat_required(&self, uid: u32) -> bool {
        let node = self.g.node(uid);
        if node.persist {
            return true;
        }
        if matches!(node.action, Action::Read { .. }) {
            return false;
        }
        self.multi.contains(&uid)
    }

    fn charge(&mut self, uid: u32, what: &'static str, bytes: u64) -> Result<()> {
        self.blocking = self.blocking.saturating_add(bytes);
        self.session.stats.note_resident(self.blocking);
        if let Some(b) = self.budget {
            if self.blocking > b {
                return Err(Error::MemoryBudget {
                    uid,
                    what,
                    state_bytes: self.blocking,
                    budget: b,
                });
            }
        }
        Ok(())
    }

    /// Materialize one node's value.
    fn ensure(&mut self, uid: u32) -> Result<Value> {
        if let Some(v) = self.mat.get(&uid) {
            return Ok(v.clone());
        }
        if let Some(v) = self.g.node(uid).result.clone() {
            self.mat.insert(uid, v.clone());
            return Ok(v);
        }
        let v = match &self.g.node(uid).action {
            Action::AggScalar { .. } | Action::ScalarExpr { .. } => self.eval_scalar(uid)?,
            Action::Print { .. } => self.eval_print(uid)?,
            Action::Opaque { name } => {
                return Err(
                    Error::Internal(format!("opaque node {name} cannot be executed"))
                        .at_node(uid, "opaque"),
                )
            }
            _ => {
                let mut chunks: Vec<Frame> = Vec::new();
                self.stream_fresh(uid, &mut |c| {
                    chunks.push(c);
                    Ok(Flow::More)
                })?;
                let f = concat_widen(&chunks)?;
                self.charge(uid, "materialized result", f.resident_bytes())?;
                Value::Frame(Rc::new(f))
            }
        };
        self.mat.insert(uid, v.clone());
        Ok(v)
    }

    fn ensure_frame(&mut self, uid: u32) -> Result<Rc<Frame>> {
        match self.ensure(uid)? {
            Value::Frame(f) => Ok(f),
            _ => Err(Error::Internal("expected a frame value".to_string())),
        }
    }

    fn scalar_tail(&mut self, uid: u32, from: usize) -> Result<Vec<Scalar>> {
        let srcs: Vec<u32> = self.g.node(uid).sources[from..].to_vec();
        let mut out = Vec::with_capacity(srcs.len());
        for s in srcs {
            let v = self.ensure(s)?;
            out.push(v.as_scalar()?.clone());
        }
        Ok(out)
    }

    /// Push `uid`'s chunks into `sink`, replaying materialized or cached
    /// values and otherwise streaming fresh.
    fn stream_node(&mut self, uid: u32, sink: &mut Sink) -> Result<()> {
        if let Some(v) = self.mat.get(&uid).cloned() {
            return replay(v.as_frame()?, self.chunk_rows, sink);
        }
        if let Some(v) = self.g.node(uid).result.clone() {
            return replay(v.as_frame()?, self.chunk_rows, sink);
        }
        if self.mat_required(uid) {
            let v = self.ensure(uid)?;
            return replay(v.as_frame()?, self.chunk_rows, sink);
        }
        self.stream_fresh(uid, sink)
    }

    fn stream_fresh(&mut self, uid: u32, sink: &mut Sink) -> Result<()> {
        let mut rows_in = 0u64;
        let mut rows_out = 0u64;
        let r = self.dispatch(uid, sink, &mut rows_in, &mut rows_out);
        let st = self.session.stats.node(uid);
        st.executions += 1;
        st.rows_in += rows_in;
        st.rows_out += rows_out;
        r.map_err(|e| e.at_node(uid, self.g.node(uid).action.name()))
    }

    /// Row-local operator: one output chunk per input chunk.
    fn stream_map(
        &mut self,
        src: u32,
        sink: &mut Sink,
        rows_in: &mut u64,
        rows_out: &mut u64,
        f: impl Fn(&Frame) -> Result<Frame>,
    ) -> Result<()> {
        self.stream_node(src, &mut |chunk| {
            *rows_in += chunk.rows() as u64;
            let out = f(&chunk)?;
            *rows_out += out.rows() as u64;
            sink(out)
        })
    }

    fn dispatch(
        &mut self,
        uid: u32,
        sink: &mut Sink,
        rows_in: &mut u64,
        rows_out: &mut u64,
    ) -> Result<()> {
        let g = self.g;
        let node = g.node(uid);
        let src0 = node.sources.first().copied();
        match &node.action {
            Action::Read { path, opts } => {
                let ropts =
                    resolve_read_opts(path, opts, self.session.use_meta, &self.session.written_cols);
                let (mut chunks, parsed) = csv::open_chunks(path, &ropts, self.chunk_rows)?;
                self.session.stats.columns_parsed.insert(uid, parsed);
                let mut any = false;
                while let Some(c) = chunks.next_chunk()? {
                    any = true;
                    *rows_out += c.rows() as u64;
                    if let Flow::Stop = sink(c)? {
                        return Ok(());
                    }
                }
                if !any {
                    // header-only file: deliver one empty chunk so every
                    // consumer still sees the schema
                    let (f, _) = csv::read_csv(path, &ropts)?;
                    sink(f)?;
                }
                Ok(())
            }
            Action::Filter { pred } => {
                let src = src0.unwrap();
                let tails = self.scalar_tail(uid, 1)?;
                let pred = self.resolve_aggs(src, pred.clone(), &tails)?;
                self.stream_map(src, sink, rows_in, rows_out, move |c| {
                    ops::filter_rows(c, &pred, &tails)
                })
            }
            Action::SetCol { col, expr } => {
                let src = src0.unwrap();
                let tails = self.scalar_tail(uid, 1)?;
                let e = self.resolve_aggs(src, expr.clone(), &tails)?;
                let col = col.clone();
                self.stream_map(src, sink, rows_in, rows_out, move |c| {
                    ops::set_column(c, &col, &e, &tails)
                })
            }
            Action::GetCols { cols } => {
                let cols = cols.clone();
                self.stream_map(src0.unwrap(), sink, rows_in, rows_out, move |c| {
                    ops::project(c, &cols)
                })
            }
            Action::GetCol { col } => {
                let col = col.clone();
                self.stream_map(src0.unwrap(), sink, rows_in, rows_out, move |c| {
                    ops::get_column(c, &col)
                })
            }
            Action::DropCols { cols } => {
                let cols = cols.clone();
                self.stream_map(src0.unwrap(), sink, rows_in, rows_out, move |c| {
                    ops::drop_columns(c, &cols)
                })
            }
            Action::Rename { map } => {
                let map = map.clone();
                self.stream_map(src0.unwrap(), sink, rows_in, rows_out, move |c| {
                    ops::rename(c, &map)
                })
            }
            Action::Astype { map } => {
                let map = map.clone();
                self.stream_map(src0.unwrap(), sink, rows_in, rows_out, move |c| {
                    ops::astype(c, &map)
                })
            }
            Action::Fillna { value } => {
                let value = value.clone();
                self.stream_map(src0.unwrap(), sink, rows_in, rows_out, move |c| {
                    ops::fillna(c, &value)
                })
            }
            Action::Round { decimals } => {
                let d = *decimals;
                self.stream_map(src0.unwrap(), sink, rows_in, rows_out, move |c| {
                    ops::round_frame(c, d)
                })
            }
            Action::Abs => {
                self.stream_map(src0.unwrap(), sink, rows_in, rows_out, ops::abs_frame)
            }
            Action::Explode { col } => {
                let col = col.clone();
                self.stream_map(src0.unwrap(), sink, rows_in, rows_out, move |c| {
                    ops::explode(c, &col)
                })
            }
            Action::Head { n } => {
                let mut remaining = *n;
                self.stream_node(src0.unwrap(), &mut |chunk| {
                    *rows_in += chunk.rows() as u64;
                    let take = remaining.min(chunk.rows());
                    let out = chunk.head_rows(take);
                    remaining -= take;
                    *rows_out += out.rows() as u64;
                    let fl = sink(out)?;
                    if remaining == 0 || fl == Flow::Stop {
                        Ok(Flow::Stop)
                    } else {
                        Ok(Flow::More)
                    }
                })
            }
            Action::DropDuplicates { subset } => {
                let subset = subset.clone();
                let mut seen: HashSet<Vec<KeyVal>> = HashSet::new();
                let mut seen_bytes = 0u64;
                let base = self.blocking;
                let budget = self.budget;
                self.stream_node(src0.unwrap(), &mut |chunk| {
                    *rows_in += chunk.rows() as u64;
                    let names = chunk.column_names();
                    let cols: Vec<usize> = match &subset {
                        Some(list) => list
                            .iter()
                            .map(|n| {
                                names.iter().position(|x| x == n).ok_or_else(|| {
                                    Error::UnknownColumn(n.clone())
                                })
                            })
                            .collect::<Result<_>>()?,
                        None => (0..names.len()).collect(),
                    };
                    let mut kept: Vec<usize> = Vec::new();
                    for i in 0..chunk.rows() {
                        let key = ops::row_key(&chunk, &cols, i);
                        if seen.insert(key.clone()) {
                            seen_bytes += key_bytes(&key);
                            kept.push(i);
                        }
                    }
                    if let Some(b) = budget {
                        let total = base.saturating_add(seen_bytes);
                        if total > b {
                            return Err(Error::MemoryBudget {
                                uid,
                                what: "distinct-key set",
                                state_bytes: total,
                                budget: b,
                            });
                        }
                    }
                    let out = chunk.take(&kept);
                    *rows_out += out.rows() as u64;
                    sink(out)
                })?;
                self.session.stats.note_resident(base.saturating_add(seen_bytes));
                Ok(())
            }
            Action::GroupByAgg { keys, col, op } => {
                if keys.is_empty() {
                    return Err(Error::EmptyKeyList);
                }
                let mut gs = GroupState::new(keys.clone(), col.clone(), *op);
                let base = self.blocking;
                let budget = self.budget;
                self.stream_node(src0.unwrap(), &mut |chunk| {
                    *rows_in += chunk.rows() as u64;
                    gs.push_chunk(&chunk)?;
                    if let Some(b) = budget {
                        let total = base.saturating_add(gs.bytes);
                        if total > b {
                            return Err(Error::MemoryBudget {
                                uid,
                                what: "group-by state",
                                state_bytes: total,
                                budget: b,
                            });
                        }
                    }
                    Ok(Flow::More)
                })?;
                self.session.stats.note_resident(base.saturating_add(gs.bytes));
                let f = gs.finish()?;
                *rows_out += f.rows() as u64;
                replay(&f, self.chunk_rows, sink)
            }
            Action::SortValues { by, ascending } => {
                self.stream_sort(uid, src0.unwrap(), by.clone(), *ascending, sink, rows_in, rows_out)
            }
            Action::Merge { on, how } => {
                let left = node.sources[0];
                let right_uid = node.sources[1];
                match how {
                    JoinKind::Inner | JoinKind::Left => {
                        let right = self.ensure_frame(right_uid)?;
                        *rows_in += right.rows() as u64;
                        let on = on.clone();
                        let how = *how;
                        self.stream_map(left, sink, rows_in, rows_out, move |c| {
                            ops::merge(c, &right, &on, how)
                        })
                    }
                    JoinKind::Right | JoinKind::Outer => {
                        // unmatched right rows trail the output; that needs
                        // both sides whole
                        let lf = self.ensure_frame(left)?;
                        let rf = self.ensure_frame(right_uid)?;
                        *rows_in += lf.rows() as u64 + rf.rows() as u64;
                        let f = ops::merge(&lf, &rf, on, *how)?;
                        *rows_out += f.rows() as u64;
                        replay(&f, self.chunk_rows, sink)
                    }
                }
            }
            Action::AggScalar { .. }
            | Action::ScalarExpr { .. }
            | Action::Print { .. }
            | Action::Opaque { .. } => Err(Error::Internal(format!(
                "node {uid} is not frame-valued",
            ))),
        }
    }

    /// Inline aggregates (`a > a.mean()`) see the whole input, so each one
    /// is folded over its own pass of the source and replaced by a literal
    /// before the chunk pipeline runs.
    fn resolve_aggs(&mut self, src: u32, mut e: Expr, tails: &[Scalar]) -> Result<Expr> {
        while let Some((op, arg)) = find_innermost_agg(&e) {
            let mut st = AggState::new(op);
            let mut dt: Option<Dtype> = None;
            let tails = tails.to_vec();
            self.stream_node(src, &mut |chunk| {
                match expr::eval(&chunk, &arg, &tails)? {
                    EvalOut::Col(c) => {
                        dt = Some(match c.dtype() {
                            Dtype::Category => Dtype::Text,
                            d => d,
                        });
                        for i in 0..c.len() {
                            st.push(&c.get(i))?;
                        }
                    }
                    EvalOut::Scalar(s) => {
                        if dt.is_none() {
                            dt = s.dtype();
                        }
                        for _ in 0..chunk.rows() {
                            st.push(&s)?;
                        }
                    }
                }
                Ok(Flow::More)
            })?;
            let lit = Expr::Lit(st.finish(dt)?);
            e = replace_agg(&e, op, &arg, &lit);
        }
        Ok(e)
    }

    fn eval_scalar(&mut self, uid: u32) -> Result<Value> {
        let g = self.g;
        let node = g.node(uid);
        match &node.action {
            Action::AggScalar { col, op } => {
                let src = node.sources[0];
                let col = col.clone();
                let op = *op;
                let mut st = AggState::new(op);
                let mut dt: Option<Dtype> = None;
                let mut rows_in = 0u64;
                self.stream_node(src, &mut |chunk| {
                    rows_in += chunk.rows() as u64;
                    let column = match &col {
                        Some(name) => chunk.col(name)?,
                        None => match chunk.columns() {
                            [only] => only,
                            cols => {
                                return Err(Error::TypeMismatch(format!(
                                    "aggregate over a {}-column frame needs an explicit column",
                                    cols.len()
                                )))
                            }
                        },
                    };
                    dt = Some(match column.dtype() {
                        Dtype::Category => Dtype::Text,
                        d => d,
                    });
                    for i in 0..column.len() {
                        st.push(&column.get(i))?;
                    }
                    Ok(Flow::More)
                })
                .map_err(|e| e.at_node(uid, "agg"))?;
                let s = st.finish(dt)?;
                let stats = self.session.stats.node(uid);
                stats.executions += 1;
                stats.rows_in += rows_in;
                Ok(Value::Scalar(s))
            }
            Action::ScalarExpr { expr } => {
                let tails = self.scalar_tail(uid, 0)?;
                let out = expr::eval(&Frame::new_empty(0), expr, &tails)
                    .map_err(|e| e.at_node(uid, "scalar"))?;
                self.session.stats.node(uid).executions += 1;
                match out {
                    EvalOut::Scalar(s) => Ok(Value::Scalar(s)),
                    EvalOut::Col(_) => Err(Error::Internal(
                        "scalar expression produced a column".to_string(),
                    )),
                }
            }
            _ => Err(Error::Internal(format!("node {uid} is not scalar-valued"))),
        }
    }

    fn eval_print(&mut self, uid: u32) -> Result<Value> {
        let node = self.g.node(uid);
        let Action::Print { pieces, values } = &node.action else {
            return Err(Error::Internal(format!("node {uid} is not a print")));
        };
        let pieces = pieces.clone();
        let nvals = *values;
        let sources = node.sources.clone();
        for &s in &sources {
            self.ensure(s)?;
        }
        let mut slots = Vec::with_capacity(nvals);
        for &s in &sources[..nvals] {
            slots.push(self.mat.get(&s).cloned().ok_or(Error::UnresolvedUid(s))?);
        }
        let mat = &self.mat;
        let text = render_print(&pieces, &slots, &|esc| mat.get(&esc).map(render_value))?;
        self.session.stats.node(uid).executions += 1;
        Ok(Value::Text(Rc::new(text)))
    }

    /// Sort with bounded memory: buffer chunks up to a fraction of the
    /// budget, spill each full buffer as a sorted run, then merge the runs
    /// back in key order. Small inputs sort in memory.
    #[allow(clippy::too_many_arguments)]
    fn stream_sort(
        &mut self,
        uid: u32,
        src: u32,
        by: Vec<String>,
        ascending: bool,
        sink: &mut Sink,
        rows_in: &mut u64,
        rows_out: &mut u64,
    ) -> Result<()> {
        let run_limit = self
            .budget
            .map(|b| (b / 4).max(1 << 20))
            .unwrap_or(u64::MAX);
        let mut buffer: Vec<Frame> = Vec::new();
        let mut buffered = 0u64;
        let mut runs: Vec<SpillRun> = Vec::new();
        self.stream_node(src, &mut |chunk| {
            *rows_in += chunk.rows() as u64;
            buffered += chunk.resident_bytes();
            buffer.push(chunk);
            if buffered > run_limit {
                runs.push(spill_run(&std::mem::take(&mut buffer), &by, ascending)?);
                buffered = 0;
            }
            Ok(Flow::More)
        })?;

        if runs.is_empty() {
            let f = ops::sort_values(&concat_widen(&buffer)?, &by, ascending)?;
            drop(buffer);
            self.charge(uid, "sort buffer", f.resident_bytes())?;
            *rows_out += f.rows() as u64;
            let r = replay(&f, self.chunk_rows, sink);
            self.release(f.resident_bytes());
            return r;
        }
        if !buffer.is_empty() {
            runs.push(spill_run(&std::mem::take(&mut buffer), &by, ascending)?);
        }
        self.session.stats.note_resident(self.blocking.saturating_add(run_limit));

        // unify run schemas (a run of all-int rows may sit beside a float
        // run) and resolve key positions
        let mut schema: Vec<(String, Dtype)> = runs[0].schema.clone();
        for run in &runs[1..] {
            for (i, (name, dt)) in run.schema.iter().enumerate() {
                if schema[i].0 != *name {
                    return Err(Error::Internal("sort run schema mismatch".to_string()));
                }
                if *dt == Dtype::Float64 && schema[i].1 == Dtype::Int64 {
                    schema[i].1 = Dtype::Float64;
                }
            }
        }
        let by_idx: Vec<usize> = by
            .iter()
            .map(|n| {
                schema
                    .iter()
                    .position(|(s, _)| s == n)
                    .ok_or_else(|| Error::UnknownColumn(n.clone()))
            })
            .collect::<Result<_>>()?;

        let mut cursors: Vec<RunCursor> = Vec::with_capacity(runs.len());
        for run in runs {
            cursors.push(RunCursor::open(run, &schema)?);
        }

        let new_builders = |schema: &[(String, Dtype)]| -> Vec<ColumnBuilder> {
            schema
                .iter()
                .map(|(n, d)| ColumnBuilder::new(n, *d))
                .collect()
        };
        let mut builders = new_builders(&schema);
        let mut count = 0usize;
        let mut emitted = false;
        let mut stopped = false;
        loop {
            let mut best: Option<usize> = None;
            for (i, c) in cursors.iter().enumerate() {
                let Some(row) = &c.current else { continue };
                match best {
                    None => best = Some(i),
                    Some(j) => {
                        let other = cursors[j].current.as_ref().expect("cursor has a row");
                        // strict less keeps the earlier run on ties, which
                        // preserves the stable order of the full sort
                        if cmp_rows(row, other, &by_idx, ascending) == std::cmp::Ordering::Less {
                            best = Some(i);
                        }
                    }
                }
            }
            let Some(i) = best else { break };
            let row = cursors[i].take_row(&schema)?;
            for (b, v) in builders.iter_mut().zip(row) {
                b.push(v)?;
            }
            count += 1;
            if count == self.chunk_rows {
                let f = finish_builders(std::mem::replace(&mut builders, new_builders(&schema)))?;
                count = 0;
                emitted = true;
                *rows_out += f.rows() as u64;
                if let Flow::Stop = sink(f)? {
                    stopped = true;
                    break;
                }
            }
        }
        if !stopped && (count > 0 || !emitted) {
            let f = finish_builders(builders)?;
            *rows_out += f.rows() as u64;
            sink(f)?;
        }
        Ok(())
    }

    fn release(&mut self, bytes: u64) {
        self.blocking = self.blocking.saturating_sub(bytes);
    }
}

fn finish_builders(builders: Vec<ColumnBuilder>) -> Result<Frame> {
    Frame::new(builders.into_iter().map(|b| b.finish()).collect())
}

/// Deliver a materialized frame in chunk-sized slices. An empty frame still
/// yields one (schema-bearing) chunk.
fn replay(f: &Frame, chunk_rows: usize, sink: &mut Sink) -> Result<()> {
    if f.rows() == 0 {
        sink(f.clone())?;
        return Ok(());
    }
    if f.rows() <= chunk_rows {
        sink(f.clone())?;
        return Ok(());
    }
    let mut start = 0;
    while start < f.rows() {
        let end = (start + chunk_rows).min(f.rows());
        let idx: Vec<usize> = (start..end).collect();
        if let Flow::Stop = sink(f.take(&idx))? {
            break;
        }
        start = end;
    }
    Ok(())
}

/// Concatenate chunks, widening a column to float when some chunks settled
/// on int and others on float (the whole-frame evaluator widens the same
/// way).
pub fn concat_widen(chunks: &[Frame]) -> Result<Frame> {
    if chunks.is_empty() {
        return Ok(Frame::new_empty(0));
    }
    if chunks.len() == 1 {
        return Ok(chunks[0].clone());
    }
    let names = chunks[0].column_names();
    let mut widen: Vec<(String, Dtype)> = Vec::new();
    for n in &names {
        let mut saw_int = false;
        let mut saw_float = false;
        for c in chunks {
            if let Ok(col) = c.col(n) {
                match col.dtype() {
                    Dtype::Int64 => saw_int = true,
                    Dtype::Float64 => saw_float = true,
                    _ => {}
                }
            }
        }
        if saw_int && saw_float {
            widen.push((n.clone(), Dtype::Float64));
        }
    }
    if widen.is_empty() {
        return Frame::concat(chunks);
    }
    let adjusted: Vec<Frame> = chunks
        .iter()
        .map(|c| ops::astype(c, &widen))
        .collect::<Result<_>>()?;
    Frame::concat(&adjusted)
}

fn key_bytes(key: &[KeyVal]) -> u64 {
    24 + key
        .iter()
        .map(|k| match k {
            KeyVal::Text(t) => 24 + t.len() as u64,
            _ => 16,
        })
        .sum::<u64>()
}

/// Innermost aggregate subexpression (its argument is aggregate-free).
fn find_innermost_agg(e: &Expr) -> Option<(AggOp, Expr)> {
    match e {
        Expr::Agg { op, arg } => match find_innermost_agg(arg) {
            Some(inner) => Some(inner),
            None => Some((*op, (**arg).clone())),
        },
        Expr::Bin { lhs, rhs, .. } => {
            find_innermost_agg(lhs).or_else(|| find_innermost_agg(rhs))
        }
        Expr::Not(x) | Expr::Neg(x) | Expr::DayOfWeek(x) => find_innermost_agg(x),
        Expr::Lit(_) | Expr::Col(_) | Expr::SubResult(_) => None,
    }
}

/// Replace every `arg.op()` occurrence with `lit`.
fn replace_agg(e: &Expr, op: AggOp, arg: &Expr, lit: &Expr) -> Expr {
    match e {
        Expr::Agg { op: o, arg: a } if *o == op && **a == *arg => lit.clone(),
        Expr::Agg { op: o, arg: a } => Expr::Agg {
            op: *o,
            arg: Box::new(replace_agg(a, op, arg, lit)),
        },
        Expr::Bin { op: o, lhs, rhs } => Expr::Bin {
            op: *o,
            lhs: Box::new(replace_agg(lhs, op, arg, lit)),
            rhs: Box::new(replace_agg(rhs, op, arg, lit)),
        },
        Expr::Not(x) => Expr::Not(Box::new(replace_agg(x, op, arg, lit))),
        Expr::Neg(x) => Expr::Neg(Box::new(replace_agg(x, op, arg, lit))),
        Expr::DayOfWeek(x) => Expr::DayOfWeek(Box::new(replace_agg(x, op, arg, lit))),
        Expr::Lit(_) | Expr::Col(_) | Expr::SubResult(_) => e.clone(),
    }
}

/// Incremental group-by, accumulating the same per-group state the
/// in-memory kernel builds in one pass.
struct GroupState {
    keys: Vec<String>,
    col: String,
    op: AggOp,
    groups: HashMap<Vec<KeyVal>, (Vec<Scalar>, AggState)>,
    key_dtypes: Option<Vec<Dtype>>,
    agg_dtype: Option<Dtype>,
    bytes: u64,
}

impl GroupState {
    fn new(keys: Vec<String>, col: String, op: AggOp) -> GroupState {
        GroupState {
            keys,
            col,
            op,
            groups: HashMap::new(),
            key_dtypes: None,
            agg_dtype: None,
            bytes: 0,
        }
    }

    fn push_chunk(&mut self, f: &Frame) -> Result<()> {
        let names = f.column_names();
        let key_cols: Vec<usize> = self
            .keys
            .iter()
            .map(|n| {
                names
                    .iter()
                    .position(|x| x == n)
                    .ok_or_else(|| Error::UnknownColumn(n.clone()))
            })
            .collect::<Result<_>>()?;
        let agg_col = f.col(&self.col)?;
        if self.key_dtypes.is_none() {
            self.key_dtypes = Some(
                key_cols
                    .iter()
                    .map(|&c| f.columns()[c].dtype())
                    .collect(),
            );
        }
        if self.agg_dtype.is_none() {
            self.agg_dtype = Some(match agg_col.dtype() {
                Dtype::Category => Dtype::Text,
                d => d,
            });
        }
        let op = self.op;
        let mut added = 0u64;
        for i in 0..f.rows() {
            let key = ops::row_key(f, &key_cols, i);
            if key.iter().any(|k| matches!(k, KeyVal::Null)) {
                continue;
            }
            let entry = match self.groups.entry(key) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(v) => {
                    added += key_bytes(v.key()) + 64;
                    let scalars: Vec<Scalar> =
                        key_cols.iter().map(|&c| f.columns()[c].get(i)).collect();
                    v.insert((scalars, AggState::new(op)))
                }
            };
            let before = entry.1.state_bytes();
            entry.1.push(&agg_col.get(i))?;
            added += entry.1.state_bytes().saturating_sub(before);
        }
        self.bytes += added;
        Ok(())
    }

    fn finish(self) -> Result<Frame> {
        let key_dtypes = self
            .key_dtypes
            .ok_or_else(|| Error::Internal("group-by saw no input".to_string()))?;
        let agg_dtype = self.agg_dtype.expect("set with key dtypes");
        let mut rows: Vec<(Vec<Scalar>, AggState)> = self.groups.into_values().collect();
        rows.sort_by(|a, b| {
            for (x, y) in a.0.iter().zip(b.0.iter()) {
                match expr::ordering_of(x, y).unwrap_or(std::cmp::Ordering::Equal) {
                    std::cmp::Ordering::Equal => continue,
                    other => return other,
                }
            }
            std::cmp::Ordering::Equal
        });
        let mut key_builders: Vec<ColumnBuilder> = self
            .keys
            .iter()
            .zip(key_dtypes.iter())
            .map(|(name, dt)| ColumnBuilder::new(name, *dt))
            .collect();
        let mut agg_builder =
            ColumnBuilder::new(&self.col, ops::result_dtype(self.op, agg_dtype));
        for (key_scalars, state) in &rows {
            for (b, v) in key_builders.iter_mut().zip(key_scalars.iter()) {
                b.push(v.clone())?;
            }
            agg_builder.push(state.finish(Some(agg_dtype))?)?;
        }
        let mut cols: Vec<crate::frame::Column> =
            key_builders.into_iter().map(|b| b.finish()).collect();
        cols.push(agg_builder.finish());
        Frame::new(cols)
    }
}

/// One sorted run on disk: rows as escaped, unit-separated text lines.
struct SpillRun {
    file: std::fs::File,
    schema: Vec<(String, Dtype)>,
}

const FIELD_SEP: char = '\u{1f}';

fn spill_run(chunks: &[Frame], by: &[String], ascending: bool) -> Result<SpillRun> {
    let sorted = ops::sort_values(&concat_widen(chunks)?, by, ascending)?;
    let schema: Vec<(String, Dtype)> = sorted
        .columns()
        .iter()
        .map(|c| {
            let dt = match c.dtype() {
                Dtype::Category => Dtype::Text,
                d => d,
            };
            (c.name.clone(), dt)
        })
        .collect();
    let file = tempfile::tempfile()?;
    let mut w = BufWriter::new(file);
    let mut line = String::new();
    for i in 0..sorted.rows() {
        line.clear();
        for (ci, c) in sorted.columns().iter().enumerate() {
            if ci > 0 {
                line.push(FIELD_SEP);
            }
            write_cell(&c.get(i), &mut line);
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    let mut file = w
        .into_inner()
        .map_err(|e| Error::Internal(format!("sort spill flush failed: {e}")))?;
    file.seek(std::io::SeekFrom::Start(0))?;
    Ok(SpillRun { file, schema })
}

fn write_cell(v: &Scalar, out: &mut String) {
    match v {
        Scalar::Null => out.push_str("\\0"),
        Scalar::Int(x) => out.push_str(&x.to_string()),
        Scalar::Float(x) => out.push_str(&format!("{x:?}")),
        Scalar::Bool(x) => out.push_str(if *x { "true" } else { "false" }),
        Scalar::Date(x) => out.push_str(&x.to_string()),
        Scalar::Text(t) => {
            for ch in t.chars() {
                match ch {
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    FIELD_SEP => out.push_str("\\s"),
                    other => out.push(other),
                }
            }
        }
    }
}

fn parse_cell(text: &str, dt: Dtype) -> Result<Scalar> {
    if text == "\\0" {
        return Ok(Scalar::Null);
    }
    let bad = |what: &str| Error::Internal(format!("sort spill cell {text:?} is not {what}"));
    Ok(match dt {
        Dtype::Int64 => Scalar::Int(text.parse().map_err(|_| bad("an int"))?),
        Dtype::Float64 => Scalar::Float(text.parse().map_err(|_| bad("a float"))?),
        Dtype::Bool => Scalar::Bool(text.parse().map_err(|_| bad("a bool"))?),
        Dtype::Date => Scalar::Date(text.parse().map_err(|_| bad("a date"))?),
        Dtype::Text | Dtype::Category => {
            let mut s = String::with_capacity(text.len());
            let mut chars = text.chars();
            while let Some(ch) = chars.next() {
                if ch != '\\' {
                    s.push(ch);
                    continue;
                }
                match chars.next() {
                    Some('\\') => s.push('\\'),
                    Some('n') => s.push('\n'),
                    Some('s') => s.push(FIELD_SEP),
                    other => {
                        return Err(Error::Internal(format!(
                            "sort spill escape \\{} is unknown",
                            other.map(String::from).unwrap_or_default()
                        )))
                    }
                }
            }
            Scalar::Text(s)
        }
    })
}

struct RunCursor {
    lines: std::io::Lines<BufReader<std::fs::File>>,
    current: Option<Vec<Scalar>>,
}

impl RunCursor {
    fn open(run: SpillRun, schema: &[(String, Dtype)]) -> Result<RunCursor> {
        let mut c = RunCursor {
            lines: BufReader::new(run.file).lines(),
            current: None,
        };
        c.advance(schema)?;
        Ok(c)
    }

    fn advance(&mut self, schema: &[(String, Dtype)]) -> Result<()> {
        self.current = match self.lines.next() {
            None => None,
            Some(line) => {
                let line = line?;
                let mut row = Vec::with_capacity(schema.len());
                for (cell, (_, dt)) in line.split(FIELD_SEP).zip(schema.iter()) {
                    row.push(parse_cell(cell, *dt)?);
                }
                if row.len() != schema.len() {
                    return Err(Error::Internal("sort spill row is short".to_string()));
                }
                Some(row)
            }
        };
        Ok(())
    }

    fn take_row(&mut self, schema: &[(String, Dtype)]) -> Result<Vec<Scalar>> {
        let row = self.current.take().expect("cursor has a row");
        self.advance(schema)?;
        Ok(row)
    }
}

/// Key comparison matching the in-memory sort: nulls always order last,
/// descending flips only the non-null comparisons.
fn cmp_rows(a: &[Scalar], b: &[Scalar], by_idx: &[usize], ascending: bool) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    for &c in by_idx {
        let (va, vb) = (&a[c], &b[c]);
        let ord = match (va.is_null(), vb.is_null()) {
            (true, true) => Ordering::Equal,
            (true, false) => return Ordering::Greater,
            (false, true) => return Ordering::Less,
            (false, false) => {
                let o = expr::ordering_of(va, vb).unwrap_or(Ordering::Equal);
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
