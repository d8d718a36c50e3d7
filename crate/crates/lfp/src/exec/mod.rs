//! Task-graph execution. A `Session` owns the pristine graph that script
//! bindings point into; every `compute` optimizes and runs a clone, so
//! optimizer rewrites never corrupt the bindings. Results flow back only for
//! persist-marked nodes the optimizer left untouched.

pub mod stream;

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::frame::csv::ReadOptions;
use crate::frame::{expr, ops, Frame, Scalar};
use crate::graph::{Action, Graph, PrintPiece, Value};
use crate::meta;
use crate::optimize::{optimize, OptFlags, OptReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Eager,
    Stream,
}

#[derive(Debug, Clone)]
pub struct Backend {
    pub kind: BackendKind,
    pub chunk_rows: usize,
    pub mem_budget: Option<u64>,
}

impl Default for Backend {
    fn default() -> Backend {
        Backend {
            kind: BackendKind::Eager,
            chunk_rows: 65_536,
            mem_budget: None,
        }
    }
}

impl Backend {
    pub fn eager() -> Backend {
        Backend::default()
    }

    pub fn stream(chunk_rows: usize, mem_budget: Option<u64>) -> Backend {
        Backend {
            kind: BackendKind::Stream,
            chunk_rows: chunk_rows.max(1),
            mem_budget,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct NodeStats {
    pub executions: u64,
    pub rows_in: u64,
    pub rows_out: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ExecStats {
    pub nodes: BTreeMap<u32, NodeStats>,
    /// columns actually parsed per read node
    pub columns_parsed: BTreeMap<u32, u64>,
    pub peak_resident_bytes: u64,
    /// most result slots simultaneously held during any compute
    pub peak_live_results: usize,
    pub computes: u64,
    pub opt: OptReport,
}

impl ExecStats {
    pub fn node(&mut self, uid: u32) -> &mut NodeStats {
        self.nodes.entry(uid).or_default()
    }

    pub fn note_resident(&mut self, bytes: u64) {
        self.peak_resident_bytes = self.peak_resident_bytes.max(bytes);
    }

    pub fn executions(&self, uid: u32) -> u64 {
        self.nodes.get(&uid).map(|n| n.executions).unwrap_or(0)
    }

    pub fn dump(&self, g: &Graph) -> String {
        let mut s = String::new();
        s.push_str(&format!("computes={}\n", self.computes));
        s.push_str(&format!(
            "peak_resident_bytes={}\n",
            self.peak_resident_bytes
        ));
        s.push_str(&format!("peak_live_results={}\n", self.peak_live_results));
        s.push_str(&format!("opt: {}\n", self.opt));
        for (uid, n) in &self.nodes {
            let name = if (*uid as usize) < g.len() {
                g.node(*uid).action.name()
            } else {
                "(synthesized)"
            };
            s.push_str(&format!(
                "node {uid} {name}: executions={} rows_in={} rows_out={}",
                n.executions, n.rows_in, n.rows_out
            ));
            if let Some(c) = self.columns_parsed.get(uid) {
                s.push_str(&format!(" columns_parsed={c}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Fixed-width table rendering: up to ten rows, then an elision line and a
/// shape footer. Shared by every backend and the reference interpreter.
pub fn render_frame(f: &Frame) -> String {
    const SHOW: usize = 10;
    let names = f.column_names();
    if names.is_empty() {
        return format!("[{} rows x 0 columns]\n", f.rows());
    }
    let shown = f.rows().min(SHOW);
    let mut cells: Vec<Vec<String>> = Vec::with_capacity(shown);
    for r in 0..shown {
        cells.push(f.columns().iter().map(|c| c.get(r).render()).collect());
    }
    let mut widths: Vec<usize> = names.iter().map(|n| n.len()).collect();
    for row in &cells {
        for (i, v) in row.iter().enumerate() {
            widths[i] = widths[i].max(v.len());
        }
    }
    let mut out = String::new();
    let mut line = String::new();
    for (i, n) in names.iter().enumerate() {
        if i > 0 {
            line.push_str("  ");
        }
        line.push_str(&format!("{:>w$}", n, w = widths[i]));
    }
    out.push_str(line.trim_end());
    out.push('\n');
    for row in &cells {
        let mut line = String::new();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(&format!("{:>w$}", v, w = widths[i]));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    if f.rows() > SHOW {
        out.push_str("...\n");
        out.push_str(&format!("[{} rows x {} columns]\n", f.rows(), names.len()));
    }
    out
}

pub fn render_value(v: &Value) -> String {
    match v {
        Value::Frame(f) => render_frame(f),
        Value::Scalar(s) => s.render(),
        Value::Text(t) => t.as_str().to_string(),
    }
}

/// Replace `$_#<uid>$_#` escapes with the rendered value of that node.
fn substitute_escapes(text: &str, lookup: &dyn Fn(u32) -> Option<String>) -> Result<String> {
    const MARK: &str = "$_#";
    if !text.contains(MARK) {
        return Ok(text.to_string());
    }
    let mut out = String::new();
    let mut rest = text;
    while let Some(start) = rest.find(MARK) {
        out.push_str(&rest[..start]);
        let after = &rest[start + MARK.len()..];
        match after.find(MARK) {
            Some(end) if after[..end].chars().all(|c| c.is_ascii_digit()) && end > 0 => {
                let uid: u32 = after[..end]
                    .parse()
                    .map_err(|_| Error::Internal("escape uid overflow".to_string()))?;
                match lookup(uid) {
                    Some(rendered) => out.push_str(&rendered),
                    None => return Err(Error::UnresolvedUid(uid)),
                }
                rest = &after[end + MARK.len()..];
            }
            _ => {
                // not a well-formed escape: keep the marker as literal text
                out.push_str(MARK);
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Render a print node's pieces given its slot values and an escape lookup.
pub fn render_print(
    pieces: &[PrintPiece],
    slots: &[Value],
    lookup: &dyn Fn(u32) -> Option<String>,
) -> Result<String> {
    let mut out = String::new();
    for p in pieces {
        match p {
            PrintPiece::Text(t) => out.push_str(&substitute_escapes(t, lookup)?),
            PrintPiece::Slot(i) => {
                let v = slots
                    .get(*i)
                    .ok_or_else(|| Error::Internal(format!("print slot {i} out of range")))?;
                out.push_str(&render_value(v));
            }
        }
    }
    if !out.ends_with('\n') {
        out.push('\n');
    }
    Ok(out)
}

/// Merge metadata-derived dtypes under the script's explicit ones, turning
/// qualifying text columns into categories. Explicit dtypes and parse_dates
/// always win; fresh metadata spares the inference pass.
pub fn resolve_read_opts(
    path: &str,
    opts: &ReadOptions,
    use_meta: bool,
    written_cols: &BTreeSet<String>,
) -> ReadOptions {
    let mut out = opts.clone();
    if !use_meta {
        return out;
    }
    let Some(m) = meta::lookup(path) else {
        return out;
    };
    let readonly: BTreeSet<String> = m
        .columns
        .iter()
        .map(|c| c.name.clone())
        .filter(|n| !written_cols.contains(n))
        .collect();
    let cats = meta::category_candidates(&m, &readonly);
    for c in &m.columns {
        if out.dtypes.contains_key(&c.name) || out.parse_dates.contains(&c.name) {
            continue;
        }
        let dt = if cats.contains(&c.name) {
            crate::frame::Dtype::Category
        } else {
            c.dtype
        };
        out.dtypes.insert(c.name.clone(), dt);
    }
    out
}

fn value_bytes(v: &Value) -> u64 {
    match v {
        Value::Frame(f) => f.resident_bytes(),
        Value::Scalar(_) => 16,
        Value::Text(t) => t.len() as u64,
    }
}

/// One live task-graph session: the pristine graph, persisted results, the
/// pending print chain, and accumulated statistics.
pub struct Session {
    pub graph: Graph,
    pub backend: Backend,
    pub flags: OptFlags,
    pub stats: ExecStats,
    pub use_meta: bool,
    /// column names the program ever writes; read-only complement feeds the
    /// category rule
    pub written_cols: BTreeSet<String>,
    /// pre/post graph dumps per compute when capture is on
    pub explain: Option<Vec<String>>,
    persisted: BTreeMap<u32, Value>,
    pending_prints: Vec<u32>,
    emitted_prints: BTreeSet<u32>,
    output: String,
}

impl Session {
    pub fn new(backend: Backend, flags: OptFlags) -> Session {
        Session {
            graph: Graph::new(),
            backend,
            flags,
            stats: ExecStats::default(),
            use_meta: false,
            written_cols: BTreeSet::new(),
            explain: None,
            persisted: BTreeMap::new(),
            pending_prints: Vec::new(),
            emitted_prints: BTreeSet::new(),
            output: String::new(),
        }
    }

    pub fn add(&mut self, action: Action, sources: Vec<u32>) -> Result<u32> {
        self.graph.add(action, sources)
    }

    /// Append a print to the pending chain. The trailing source edge to the
    /// previous pending print keeps emission in program order.
    pub fn enqueue_print(&mut self, pieces: Vec<PrintPiece>, values: Vec<u32>) -> Result<u32> {
        let nvals = values.len();
        let mut sources = values;
        if let Some(&prev) = self.pending_prints.last() {
            sources.push(prev);
        }
        let uid = self.graph.add(
            Action::Print {
                pieces,
                values: nvals,
            },
            sources,
        )?;
        self.pending_prints.push(uid);
        Ok(uid)
    }

    pub fn pending_print_count(&self) -> usize {
        self.pending_prints.len()
    }

    pub fn take_output(&mut self) -> String {
        std::mem::take(&mut self.output)
    }

    /// Append already-rendered text (external call output) to the session's
    /// stdout stream.
    pub fn push_output(&mut self, text: &str) {
        self.output.push_str(text);
    }

    pub fn persisted_uids(&self) -> Vec<u32> {
        self.persisted.keys().copied().collect()
    }

    /// Drop persisted results that no hinted node still reaches.
    pub fn discard_persisted(&mut self, hints: &[u32]) {
        let keep = self.graph.reachable(hints);
        self.persisted.retain(|uid, _| keep.contains(uid));
    }

    /// Emit every pending print (computing them if needed), oldest first.
    pub fn flush(&mut self) -> Result<()> {
        let Some(&last) = self.pending_prints.last() else {
            return Ok(());
        };
        self.compute(last, &[])?;
        Ok(())
    }

    /// Force one node's value. Runs the optimizer and the chosen backend
    /// over a clone of the session graph; drains the pending print chain;
    /// persists shareable results for later computes.
    pub fn compute(&mut self, target: u32, hints: &[u32]) -> Result<Value> {
        if let Some(v) = self.persisted.get(&target) {
            if self.pending_prints.is_empty() {
                return Ok(v.clone());
            }
        }
        self.stats.computes += 1;

        let mut g = self.graph.clone();
        for (uid, v) in &self.persisted {
            g.node_mut(*uid).result = Some(v.clone());
        }
        let mut roots: Vec<u32> = Vec::new();
        roots.push(target);
        for &p in &self.pending_prints {
            if !roots.contains(&p) {
                roots.push(p);
            }
        }
        if self.explain.is_some() {
            let dot = g.to_dot(&roots, &format!("pre_compute_{}", self.stats.computes));
            self.explain.as_mut().unwrap().push(dot);
        }
        let outcome = optimize(&mut g, &mut roots, hints, self.flags)?;
        self.stats.opt.add(&outcome.report);
        if self.explain.is_some() {
            let dot = g.to_dot(&roots, &format!("post_compute_{}", self.stats.computes));
            self.explain.as_mut().unwrap().push(dot);
        }

        let values = match self.backend.kind {
            BackendKind::Eager => self.run_eager(&g, &roots)?,
            BackendKind::Stream => stream::run_stream(self, &g, &roots)?,
        };

        // keep results the optimizer didn't touch for the bindings hinted
        // to outlive this compute; sharing within one compute is handled by
        // the executor and never cached across computes
        let from_hints = g.reachable(hints);
        for uid in g.uids() {
            let node = g.node(uid);
            if node.persist
                && from_hints.contains(&uid)
                && !outcome.dirty.contains(&uid)
                && (uid as usize) < self.graph.len()
                && !self.persisted.contains_key(&uid)
                && !matches!(node.action, Action::Print { .. } | Action::Opaque { .. })
            {
                if let Some(v) = values.get(&uid) {
                    self.persisted.insert(uid, v.clone());
                }
            }
        }

        // drain the print chain in program order
        let pending = std::mem::take(&mut self.pending_prints);
        for uid in pending {
            if self.emitted_prints.contains(&uid) {
                continue;
            }
            let v = values
                .get(&uid)
                .ok_or(Error::UnresolvedUid(uid))?
                .clone();
            match v {
                Value::Text(t) => self.output.push_str(&t),
                other => self.output.push_str(&render_value(&other)),
            }
            self.emitted_prints.insert(uid);
        }

        values
            .get(&roots[0])
            .cloned()
            .ok_or(Error::UnresolvedUid(roots[0]))
    }

    /// Topological in-memory evaluation with in-degree refcounting: a
    /// non-persisted result is cleared the moment its last consumer ran.
    fn run_eager(&mut self, g: &Graph, roots: &[u32]) -> Result<BTreeMap<u32, Value>> {
        let order = exec_order(g, roots);
        let mut refcount: BTreeMap<u32, usize> = BTreeMap::new();
        for &uid in &order {
            if g.node(uid).result.is_some() {
                continue;
            }
            for &s in &g.node(uid).sources {
                *refcount.entry(s).or_insert(0) += 1;
            }
        }
        for &r in roots {
            *refcount.entry(r).or_insert(0) += 1;
        }

        let mut live: BTreeMap<u32, Value> = BTreeMap::new();
        for &uid in &order {
            let cached = g.node(uid).result.clone();
            let v = if let Some(v) = cached {
                v
            } else {
                let v = self
                    .eval_eager(g, uid, &live)
                    .map_err(|e| e.at_node(uid, g.node(uid).action.name()))?;
                let mut rows_in = 0u64;
                for &s in &g.node(uid).sources {
                    if let Some(Value::Frame(f)) = live.get(&s) {
                        rows_in += f.rows() as u64;
                    }
                }
                let st = self.stats.node(uid);
                st.executions += 1;
                st.rows_in += rows_in;
                st.rows_out += match &v {
                    Value::Frame(f) => f.rows() as u64,
                    _ => 0,
                };
                v
            };
            live.insert(uid, v);

            // release sources this node consumed; roots carry an extra
            // count so targets, prints and persisted values survive
            if g.node(uid).result.is_none() {
                for &s in &g.node(uid).sources.clone() {
                    if let Some(rc) = refcount.get_mut(&s) {
                        *rc -= 1;
                        if *rc == 0 && !g.node(s).persist {
                            live.remove(&s);
                        }
                    }
                }
            }
            let resident: u64 = live.values().map(value_bytes).sum::<u64>()
                + self.persisted.values().map(value_bytes).sum::<u64>();
            self.stats.note_resident(resident);
            self.stats.peak_live_results = self.stats.peak_live_results.max(live.len());
        }
        Ok(live)
    }

    fn eval_eager(
        &mut self,
        g: &Graph,
        uid: u32,
        live: &BTreeMap<u32, Value>,
    ) -> Result<Value> {
        let node = g.node(uid);
        let frame_in = |i: usize| -> Result<&Frame> {
            let s = node.sources[i];
            live.get(&s).ok_or(Error::UnresolvedUid(s))?.as_frame()
        };
        let scalar_tail = |from: usize| -> Result<Vec<Scalar>> {
            node.sources[from..]
                .iter()
                .map(|s| {
                    live.get(s)
                        .ok_or(Error::UnresolvedUid(*s))?
                        .as_scalar()
                        .cloned()
                })
                .collect()
        };
        let frame = |f: Frame| Ok(Value::Frame(Rc::new(f)));
        match &node.action {
            Action::Read { path, opts } => {
                let ropts = resolve_read_opts(path, opts, self.use_meta, &self.written_cols);
                let (f, parsed) = crate::frame::csv::read_csv(path, &ropts)?;
                self.stats.columns_parsed.insert(uid, parsed);
                frame(f)
            }
            Action::Filter { pred } => {
                let tails = scalar_tail(1)?;
                frame(ops::filter_rows(frame_in(0)?, pred, &tails)?)
            }
            Action::GetCols { cols } => frame(ops::project(frame_in(0)?, cols)?),
            Action::GetCol { col } => frame(ops::get_column(frame_in(0)?, col)?),
            Action::SetCol { col, expr } => {
                let tails = scalar_tail(1)?;
                frame(ops::set_column(frame_in(0)?, col, expr, &tails)?)
            }
            Action::DropCols { cols } => frame(ops::drop_columns(frame_in(0)?, cols)?),
            Action::Rename { map } => frame(ops::rename(frame_in(0)?, map)?),
            Action::Astype { map } => frame(ops::astype(frame_in(0)?, map)?),
            Action::Fillna { value } => frame(ops::fillna(frame_in(0)?, value)?),
            Action::Round { decimals } => frame(ops::round_frame(frame_in(0)?, *decimals)?),
            Action::Abs => frame(ops::abs_frame(frame_in(0)?)?),
            Action::DropDuplicates { subset } => {
                frame(ops::drop_duplicates(frame_in(0)?, subset.as_deref())?)
            }
            Action::SortValues { by, ascending } => {
                frame(ops::sort_values(frame_in(0)?, by, *ascending)?)
            }
            Action::Head { n } => frame(ops::head(frame_in(0)?, *n)?),
            Action::Explode { col } => frame(ops::explode(frame_in(0)?, col)?),
            Action::Merge { on, how } => {
                frame(ops::merge(frame_in(0)?, frame_in(1)?, on, *how)?)
            }
            Action::GroupByAgg { keys, col, op } => {
                frame(ops::groupby_agg(frame_in(0)?, keys, col, *op)?)
            }
            Action::AggScalar { col, op } => Ok(Value::Scalar(ops::agg_scalar(
                frame_in(0)?,
                col.as_deref(),
                *op,
            )?)),
            Action::ScalarExpr { expr } => {
                let tails = scalar_tail(0)?;
                match expr::eval(&Frame::new_empty(0), expr, &tails)? {
                    expr::EvalOut::Scalar(s) => Ok(Value::Scalar(s)),
                    expr::EvalOut::Col(_) => {
                        Err(Error::Internal("scalar expression produced a column".into()))
                    }
                }
            }
            Action::Print { pieces, values } => {
                let slots: Vec<Value> = node.sources[..*values]
                    .iter()
                    .map(|s| live.get(s).cloned().ok_or(Error::UnresolvedUid(*s)))
                    .collect::<Result<_>>()?;
                let text = render_print(pieces, &slots, &|esc| {
                    live.get(&esc).map(render_value)
                })?;
                Ok(Value::Text(Rc::new(text)))
            }
            Action::Opaque { name } => Err(Error::Internal(format!(
                "opaque node {name} cannot be executed"
            ))),
        }
    }
}

/// Producers-before-consumers order over the nodes the roots need, not
/// descending past cached results.
pub fn exec_order(g: &Graph, roots: &[u32]) -> Vec<u32> {
    let mut order = Vec::new();
    let mut seen = BTreeSet::new();
    let mut stack: Vec<(u32, bool)> = roots.iter().rev().map(|&r| (r, false)).collect();
    while let Some((uid, expanded)) = stack.pop() {
        if expanded {
            order.push(uid);
            continue;
        }
        if !seen.insert(uid) {
            continue;
        }
        stack.push((uid, true));
        if g.node(uid).result.is_none() {
            for &s in g.node(uid).sources.iter().rev() {
                if !seen.contains(&s) {
                    stack.push((s, false));
                }
            }
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::expr::{AggOp, BinOp, Expr};
    use crate::frame::Dtype;
    use std::io::Write;

    fn write_csv(dir: &tempfile::TempDir, name: &str, content: &str) -> String {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path.to_string_lossy().to_string()
    }

    fn read_node(s: &mut Session, path: &str) -> u32 {
        s.add(
            Action::Read {
                path: path.to_string(),
                opts: ReadOptions::default(),
            },
            vec![],
        )
        .unwrap()
    }

    fn gt(col: &str, v: i64) -> Expr {
        Expr::bin(BinOp::Gt, Expr::col(col), Expr::Lit(Scalar::Int(v)))
    }

    #[test]
    fn computes_a_simple_pipeline() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(&dir, "d.csv", "a,b\n1,10\n5,20\n9,30\n");
        let mut s = Session::new(Backend::eager(), OptFlags::all());
        let r = read_node(&mut s, &p);
        let f = s.add(Action::Filter { pred: gt("a", 2) }, vec![r]).unwrap();
        let g = s
            .add(
                Action::AggScalar {
                    col: Some("b".to_string()),
                    op: AggOp::Sum,
                },
                vec![f],
            )
            .unwrap();
        let v = s.compute(g, &[]).unwrap();
        assert_eq!(v.as_scalar().unwrap(), &Scalar::Int(50));
    }

    #[test]
    fn diamond_results_clear_after_last_consumer() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(&dir, "d.csv", "a,b\n1,10\n5,20\n9,30\n");
        let mut s = Session::new(Backend::eager(), OptFlags::none());
        let r = read_node(&mut s, &p);
        let f1 = s.add(Action::Filter { pred: gt("a", 2) }, vec![r]).unwrap();
        let f2 = s.add(Action::Filter { pred: gt("b", 15) }, vec![r]).unwrap();
        let m = s
            .add(
                Action::Merge {
                    on: vec!["a".to_string()],
                    how: ops::JoinKind::Inner,
                },
                vec![f1, f2],
            )
            .unwrap();
        let v = s.compute(m, &[]).unwrap();
        assert_eq!(v.as_frame().unwrap().rows(), 2);
        // read + one filter + other filter; the read slot is released
        // before the merge holds all three, so at most 3 live at once
        assert!(s.stats.peak_live_results <= 3, "read slot was not cleared");
        assert_eq!(s.stats.executions(r), 1);
    }

    #[test]
    fn print_chain_emits_in_order_on_flush() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(&dir, "d.csv", "a\n1\n2\n");
        let mut s = Session::new(Backend::eager(), OptFlags::all());
        let r = read_node(&mut s, &p);
        let sum = s
            .add(
                Action::AggScalar {
                    col: Some("a".to_string()),
                    op: AggOp::Sum,
                },
                vec![r],
            )
            .unwrap();
        let max = s
            .add(
                Action::AggScalar {
                    col: Some("a".to_string()),
                    op: AggOp::Max,
                },
                vec![r],
            )
            .unwrap();
        s.enqueue_print(
            vec![PrintPiece::Text("sum ".into()), PrintPiece::Slot(0)],
            vec![sum],
        )
        .unwrap();
        s.enqueue_print(
            vec![PrintPiece::Text("max ".into()), PrintPiece::Slot(0)],
            vec![max],
        )
        .unwrap();
        s.enqueue_print(vec![PrintPiece::Text("done".into())], vec![])
            .unwrap();
        assert_eq!(s.take_output(), "");
        s.flush().unwrap();
        assert_eq!(s.take_output(), "sum 3\nmax 2\ndone\n");
        // second flush is a no-op
        s.flush().unwrap();
        assert_eq!(s.take_output(), "");
    }

    #[test]
    fn forced_compute_drains_earlier_prints_first() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(&dir, "d.csv", "a\n1\n2\n3\n");
        let mut s = Session::new(Backend::eager(), OptFlags::all());
        let r = read_node(&mut s, &p);
        s.enqueue_print(vec![PrintPiece::Text("first".into())], vec![])
            .unwrap();
        let cnt = s
            .add(
                Action::AggScalar {
                    col: Some("a".to_string()),
                    op: AggOp::Count,
                },
                vec![r],
            )
            .unwrap();
        let v = s.compute(cnt, &[]).unwrap();
        assert_eq!(v.as_scalar().unwrap(), &Scalar::Int(3));
        assert_eq!(s.take_output(), "first\n");
    }

    #[test]
    fn escape_sequences_substitute_rendered_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(&dir, "d.csv", "a\n10\n15\n");
        let mut s = Session::new(Backend::eager(), OptFlags::all());
        let r = read_node(&mut s, &p);
        let mean = s
            .add(
                Action::AggScalar {
                    col: Some("a".to_string()),
                    op: AggOp::Mean,
                },
                vec![r],
            )
            .unwrap();
        s.enqueue_print(
            vec![PrintPiece::Text(format!(
                "Average fare: $_#{mean}$_# (node $_#{mean}$_#)"
            ))],
            vec![mean],
        )
        .unwrap();
        s.flush().unwrap();
        assert_eq!(s.take_output(), "Average fare: 12.5 (node 12.5)\n");
    }

    #[test]
    fn malformed_escapes_stay_literal() {
        let got = substitute_escapes("a $_#x$_# b $_# c", &|_| None).unwrap();
        assert_eq!(got, "a $_#x$_# b $_# c");
        let err = substitute_escapes("$_#99$_#", &|_| None).unwrap_err();
        assert!(matches!(err, Error::UnresolvedUid(99)));
    }

    #[test]
    fn persist_hints_reuse_shared_subgraph_across_computes() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(&dir, "d.csv", "a,b\n1,10\n5,20\n9,30\n");
        let mut s = Session::new(Backend::eager(), OptFlags::all());
        let r = read_node(&mut s, &p);
        let f = s.add(Action::Filter { pred: gt("a", 0) }, vec![r]).unwrap();
        let sum = s
            .add(
                Action::AggScalar {
                    col: Some("b".to_string()),
                    op: AggOp::Sum,
                },
                vec![f],
            )
            .unwrap();
        let max = s
            .add(
                Action::AggScalar {
                    col: Some("b".to_string()),
                    op: AggOp::Max,
                },
                vec![f],
            )
            .unwrap();
        // hint that the filter chain stays live: it persists
        let v1 = s.compute(sum, &[f]).unwrap();
        assert_eq!(v1.as_scalar().unwrap(), &Scalar::Int(60));
        assert_eq!(s.stats.executions(f), 1);
        let v2 = s.compute(max, &[]).unwrap();
        assert_eq!(v2.as_scalar().unwrap(), &Scalar::Int(30));
        assert_eq!(s.stats.executions(f), 1, "filter ran once, then reused");
        assert_eq!(s.stats.executions(r), 1, "read ran once, then reused");

        s.discard_persisted(&[]);
        assert!(s.persisted_uids().is_empty());
    }

    #[test]
    fn without_hints_shared_subgraph_runs_twice() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(&dir, "d.csv", "a,b\n1,10\n5,20\n");
        let mut s = Session::new(Backend::eager(), OptFlags::all());
        let r = read_node(&mut s, &p);
        let f = s.add(Action::Filter { pred: gt("a", 0) }, vec![r]).unwrap();
        let sum = s
            .add(
                Action::AggScalar {
                    col: Some("b".to_string()),
                    op: AggOp::Sum,
                },
                vec![f],
            )
            .unwrap();
        let max = s
            .add(
                Action::AggScalar {
                    col: Some("b".to_string()),
                    op: AggOp::Max,
                },
                vec![f],
            )
            .unwrap();
        s.compute(sum, &[]).unwrap();
        s.compute(max, &[]).unwrap();
        assert_eq!(s.stats.executions(f), 2);
    }

    #[test]
    fn no_opt_and_full_opt_agree() {
        let dir = tempfile::tempdir().unwrap();
        let body = "a,b,c\n1,2,x\n4,5,y\n7,8,x\n2,9,z\n";
        let p = write_csv(&dir, "d.csv", body);
        let build = |s: &mut Session| {
            let r = read_node(s, &p);
            let set = s
                .add(
                    Action::SetCol {
                        col: "d".to_string(),
                        expr: Expr::bin(BinOp::Add, Expr::col("a"), Expr::col("b")),
                    },
                    vec![r],
                )
                .unwrap();
            let f = s
                .add(Action::Filter { pred: gt("a", 1) }, vec![set])
                .unwrap();
            s.add(
                Action::GroupByAgg {
                    keys: vec!["c".to_string()],
                    col: "d".to_string(),
                    op: AggOp::Sum,
                },
                vec![f],
            )
            .unwrap()
        };
        let mut s1 = Session::new(Backend::eager(), OptFlags::none());
        let t1 = build(&mut s1);
        let v1 = s1.compute(t1, &[]).unwrap();
        let mut s2 = Session::new(Backend::eager(), OptFlags::all());
        let t2 = build(&mut s2);
        let v2 = s2.compute(t2, &[]).unwrap();
        assert_eq!(
            crate::canon::canonical_text(v1.as_frame().unwrap()),
            crate::canon::canonical_text(v2.as_frame().unwrap())
        );
    }

    #[test]
    fn category_metadata_is_dtype_transparent() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("kind,v\n");
        for i in 0..200 {
            body.push_str(&format!("{},{}\n", ["aa", "bb", "cc"][i % 3], i));
        }
        let p = write_csv(&dir, "d.csv", &body);
        crate::meta::scan(&p).unwrap();

        let run = |use_meta: bool| {
            let mut s = Session::new(Backend::eager(), OptFlags::all());
            s.use_meta = use_meta;
            let r = read_node(&mut s, &p);
            let g = s
                .add(
                    Action::GroupByAgg {
                        keys: vec!["kind".to_string()],
                        col: "v".to_string(),
                        op: AggOp::Sum,
                    },
                    vec![r],
                )
                .unwrap();
            let v = s.compute(g, &[]).unwrap();
            crate::canon::canonical_text(v.as_frame().unwrap())
        };
        assert_eq!(run(false), run(true));

        // and the encoded read really is a category column
        let opts = resolve_read_opts(&p, &ReadOptions::default(), true, &BTreeSet::new());
        assert_eq!(opts.dtypes.get("kind"), Some(&Dtype::Category));
        let (f, _) = crate::frame::csv::read_csv(&p, &opts).unwrap();
        assert_eq!(f.col("kind").unwrap().dtype(), Dtype::Category);
    }
}
