//! Task-graph optimization: filter pushdown (with shared-consumer fusion and
//! disjunction prefilters), compound movement for filters blocked by column
//! writers, adjacent-filter merging, dead-writer elimination, and reuse
//! (persist) marking.
//!
//! Every pass runs on a per-compute clone of the session graph. Moves are
//! value-preserving at every root: when a move relocates the node holding a
//! root's value, the root uid is remapped to the new holder. Nodes whose
//! values change are recorded in a dirty set so their results are never
//! written back to the session graph.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::frame::expr::{BinOp, Expr};
use crate::graph::{Action, AttrSet, Graph};

/// Which passes run. Script-level rewrites are separate; these are the
/// graph-level passes applied at compute time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OptFlags {
    pub pushdown: bool,
    pub xpushdown: bool,
    pub dce: bool,
    pub persist: bool,
}

impl OptFlags {
    pub fn all() -> OptFlags {
        OptFlags {
            pushdown: true,
            xpushdown: true,
            dce: true,
            persist: true,
        }
    }

    pub fn none() -> OptFlags {
        OptFlags {
            pushdown: false,
            xpushdown: false,
            dce: false,
            persist: false,
        }
    }
}

impl Default for OptFlags {
    fn default() -> OptFlags {
        OptFlags::all()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OptReport {
    pub filter_swaps: usize,
    pub filters_fused: usize,
    pub disjunctions_pushed: usize,
    pub compounds_formed: usize,
    pub compound_hops: usize,
    pub filters_merged: usize,
    pub nodes_bypassed: usize,
    pub persist_marks: usize,
}

impl OptReport {
    pub fn add(&mut self, other: &OptReport) {
        self.filter_swaps += other.filter_swaps;
        self.filters_fused += other.filters_fused;
        self.disjunctions_pushed += other.disjunctions_pushed;
        self.compounds_formed += other.compounds_formed;
        self.compound_hops += other.compound_hops;
        self.filters_merged += other.filters_merged;
        self.nodes_bypassed += other.nodes_bypassed;
        self.persist_marks += other.persist_marks;
    }
}

impl std::fmt::Display for OptReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "swaps={} fused={} disjunctions={} compounds={} hops={} merged={} bypassed={} persisted={}",
            self.filter_swaps,
            self.filters_fused,
            self.disjunctions_pushed,
            self.compounds_formed,
            self.compound_hops,
            self.filters_merged,
            self.nodes_bypassed,
            self.persist_marks
        )
    }
}

/// Result of one optimize call: counters plus the set of nodes whose values
/// were changed by moves (excluded from persist write-back).
#[derive(Debug, Clone, Default)]
pub struct OptOutcome {
    pub report: OptReport,
    pub dirty: BTreeSet<u32>,
}

/// A filter the pushdown passes may relocate: a plain row selection whose
/// top-level operator is a comparison or connective, with no aggregate
/// subexpression, no top-level negation, and no cached result.
pub fn is_movable_filter(g: &Graph, uid: u32) -> bool {
    let n = g.node(uid);
    if n.result.is_some() {
        return false;
    }
    match &n.action {
        Action::Filter { pred } => {
            let top_ok = matches!(
                pred.top_binop(),
                Some(
                    BinOp::Gt
                        | BinOp::Ge
                        | BinOp::Lt
                        | BinOp::Le
                        | BinOp::Eq
                        | BinOp::Ne
                        | BinOp::And
                        | BinOp::Or
                )
            );
            top_ok && !pred.contains_agg()
        }
        _ => false,
    }
}

/// Nodes no filter may pass: structure-changing operations, scalar sinks,
/// expressions that need the complete input, and anything with a cached
/// result (a materialization point whose value must stay fixed).
pub fn is_blocking(g: &Graph, uid: u32) -> bool {
    let n = g.node(uid);
    if n.result.is_some() {
        return true;
    }
    match &n.action {
        Action::Read { .. }
        | Action::Explode { .. }
        | Action::Merge { .. }
        | Action::GroupByAgg { .. }
        | Action::AggScalar { .. }
        | Action::ScalarExpr { .. }
        | Action::Head { .. }
        | Action::Print { .. }
        | Action::Opaque { .. } => true,
        Action::SetCol { expr, .. } => expr.contains_agg(),
        Action::Filter { pred } => pred.contains_agg(),
        _ => false,
    }
}

/// Row-wise 1:1 column writers that can join a compound unit.
fn is_row_wise_member(g: &Graph, uid: u32) -> bool {
    let n = g.node(uid);
    if n.result.is_some() {
        return false;
    }
    match &n.action {
        Action::SetCol { expr, .. } => !expr.contains_agg(),
        Action::Astype { .. }
        | Action::Fillna { .. }
        | Action::Round { .. }
        | Action::Abs
        | Action::DropCols { .. }
        | Action::GetCols { .. }
        | Action::GetCol { .. } => true,
        _ => false,
    }
}

/// Can a filter with `pred` move below `u`? Returns the predicate to use on
/// the other side (rewritten through a rename's inverse mapping), or `None`
/// when the swap is unsafe. Filter-past-filter returns `None`; adjacent
/// filters are handled by merging instead.
fn pass_filter(g: &Graph, pred: &Expr, u: u32) -> Option<Expr> {
    if is_blocking(g, u) {
        return None;
    }
    match &g.node(u).action {
        Action::Filter { .. } => None,
        Action::Rename { map } => {
            let inverse = |c: &str| {
                map.iter()
                    .find(|(_, new)| new == c)
                    .map(|(old, _)| old.clone())
            };
            Some(pred.rename_columns(&inverse))
        }
        Action::DropDuplicates { subset } => match subset {
            // keyed on every column: any predicate over those columns is
            // uniform within a key group
            None => Some(pred.clone()),
            Some(keys) => {
                if pred.used_columns().iter().all(|c| keys.contains(c)) {
                    Some(pred.clone())
                } else {
                    None
                }
            }
        },
        Action::SortValues { .. } => Some(pred.clone()),
        _ => {
            let used = AttrSet::Cols(pred.used_columns());
            if g.modified_attrs(u).intersects(&used) {
                None
            } else {
                Some(pred.clone())
            }
        }
    }
}

fn iteration_cap(g: &Graph) -> usize {
    g.len() * g.len() + 64
}

struct Ctx<'a> {
    exec_roots: &'a mut Vec<u32>,
    hints: &'a [u32],
    report: &'a mut OptReport,
    dirty: &'a mut BTreeSet<u32>,
}

impl Ctx<'_> {
    fn protected(&self, uid: u32) -> bool {
        self.exec_roots.contains(&uid) || self.hints.contains(&uid)
    }

    fn all_roots(&self) -> Vec<u32> {
        let mut v = self.exec_roots.clone();
        v.extend_from_slice(self.hints);
        v
    }

    /// Remap exec roots whose value moved from `from` to `to`. Hint roots are
    /// never moved (callers check), so they need no remapping.
    fn remap_root(&mut self, from: u32, to: u32) {
        for r in self.exec_roots.iter_mut() {
            if *r == from {
                *r = to;
            }
        }
    }
}

/// Move movable filters toward the reads: single-consumer swaps, fusion of
/// identical filters sharing a node, and disjunction prefilters when a
/// shared node's consumers are all filters with different predicates.
fn run_pushdown(g: &mut Graph, ctx: &mut Ctx) -> Result<()> {
    let cap = iteration_cap(g);
    let mut steps = 0usize;
    'outer: loop {
        steps += 1;
        if steps > cap {
            return Err(Error::Internal(
                "filter pushdown failed to settle".to_string(),
            ));
        }
        let order = g.post_dfs(&ctx.all_roots());
        for &f in &order {
            if !is_movable_filter(g, f) || ctx.hints.contains(&f) {
                continue;
            }
            let u = g.node(f).sources[0];
            if ctx.protected(u) {
                continue;
            }
            let cons = g.consumers(u);
            if cons.len() >= 2 {
                let all_filters = cons
                    .iter()
                    .all(|&c| is_movable_filter(g, c) && !ctx.hints.contains(&c));
                if all_filters && shared_consumer_push(g, u, &cons, ctx)? {
                    continue 'outer;
                }
                continue;
            }
            if cons != vec![f] {
                continue;
            }
            let Action::Filter { pred } = g.node(f).action.clone() else {
                continue;
            };
            let Some(new_pred) = pass_filter(g, &pred, u) else {
                continue;
            };
            let s = g.node(u).sources[0];
            g.replace_source(f, u);
            ctx.remap_root(f, u);
            g.node_mut(f).sources[0] = s;
            g.node_mut(f).action = Action::Filter { pred: new_pred };
            g.node_mut(u).sources[0] = f;
            ctx.dirty.insert(f);
            ctx.dirty.insert(u);
            ctx.report.filter_swaps += 1;
            continue 'outer;
        }
        break;
    }
    Ok(())
}

/// `u` has two or more consumers, all movable filters. Identical predicates:
/// push one copy below `u` and splice the duplicates out. Different
/// predicates: push their disjunction below `u` as a prefilter and keep the
/// originals (rows failing every branch predicate fail its own too).
fn shared_consumer_push(g: &mut Graph, u: u32, cons: &[u32], ctx: &mut Ctx) -> Result<bool> {
    if is_blocking(g, u) || g.node(u).sources.is_empty() {
        return Ok(false);
    }
    let pred_of = |g: &Graph, c: u32| match &g.node(c).action {
        Action::Filter { pred } => pred.clone(),
        _ => unreachable!("consumer checked as filter"),
    };
    let first_pred = pred_of(g, cons[0]);
    let first_tail = g.node(cons[0]).sources[1..].to_vec();
    let identical = cons.iter().all(|&c| {
        pred_of(g, c) == first_pred && g.node(c).sources[1..] == first_tail[..]
    });

    if identical {
        let Some(new_pred) = pass_filter(g, &first_pred, u) else {
            return Ok(false);
        };
        let s = g.node(u).sources[0];
        for &c in cons {
            g.replace_source(c, u);
            ctx.remap_root(c, u);
            ctx.dirty.insert(c);
        }
        let keeper = cons[0];
        g.node_mut(keeper).sources[0] = s;
        g.node_mut(keeper).action = Action::Filter { pred: new_pred };
        g.node_mut(u).sources[0] = keeper;
        ctx.dirty.insert(u);
        ctx.report.filters_fused += cons.len() - 1;
        return Ok(true);
    }

    // build OR of all consumer predicates, concatenating their scalar tails
    let mut tail: Vec<u32> = Vec::new();
    let mut disj: Option<Expr> = None;
    for &c in cons {
        let off = tail.len();
        let p = pred_of(g, c).remap_subresults(&|i| i + off);
        tail.extend_from_slice(&g.node(c).sources[1..]);
        disj = Some(match disj {
            None => p,
            Some(d) => Expr::bin(BinOp::Or, d, p),
        });
    }
    let disj = disj.expect("at least two consumers");
    let Some(pushed) = pass_filter(g, &disj, u) else {
        return Ok(false);
    };
    if chain_already_filters(g, u, &pushed, &tail) {
        return Ok(false);
    }
    let s = g.node(u).sources[0];
    let mut srcs = vec![s];
    srcs.extend_from_slice(&tail);
    let nf = g.add(Action::Filter { pred: pushed }, srcs)?;
    g.node_mut(u).sources[0] = nf;
    ctx.dirty.insert(u);
    ctx.report.disjunctions_pushed += 1;
    Ok(true)
}

/// Idempotence guard for disjunction prefilters: walk the single-source
/// chain below `u`, applying the same per-node predicate rewrites a pushed
/// filter would undergo, and report whether an equal filter already sits on
/// the chain.
fn chain_already_filters(g: &Graph, u: u32, pred: &Expr, tail: &[u32]) -> bool {
    let mut p = pred.clone();
    let mut v = match g.node(u).sources.first() {
        Some(&v) => v,
        None => return false,
    };
    for _ in 0..g.len() {
        let n = g.node(v);
        if let Action::Filter { pred: q } = &n.action {
            if *q == p && n.sources[1..] == *tail {
                return true;
            }
        }
        match pass_filter(g, &p, v) {
            Some(p2) => p = p2,
            None => return false,
        }
        match n.sources.first() {
            Some(&next) => v = next,
            None => return false,
        }
    }
    false
}

/// For filters stuck on a column writer by an attribute conflict: bundle the
/// filter with the writer chain it conflicts with and move the whole unit
/// further down, absorbing additional conflicting row-wise writers along the
/// way. Ends by merging adjacent movable filters into conjunctions.
fn run_pushdown_extended(g: &mut Graph, ctx: &mut Ctx) -> Result<()> {
    let cap = iteration_cap(g);
    let mut steps = 0usize;
    let order = g.post_dfs(&ctx.all_roots());
    for &f in &order {
        if !is_movable_filter(g, f) || ctx.hints.contains(&f) {
            continue;
        }
        let u = g.node(f).sources[0];
        if !is_row_wise_member(g, u) || ctx.protected(u) {
            continue;
        }
        if g.consumers(u) != vec![f] {
            continue;
        }
        let Action::Filter { pred } = g.node(f).action.clone() else {
            continue;
        };
        if pass_filter(g, &pred, u).is_some() {
            // plain pushdown territory; nothing compound to do
            continue;
        }
        // unit members in execution order (bottom first)
        let mut members = vec![u, f];
        let mut formed = false;
        loop {
            steps += 1;
            if steps > cap {
                return Err(Error::Internal(
                    "compound movement failed to settle".to_string(),
                ));
            }
            let bottom = members[0];
            let Some(&v) = g.node(bottom).sources.first() else {
                break;
            };
            if is_blocking(g, v)
                || ctx.protected(v)
                || matches!(g.node(v).action, Action::Rename { .. })
                || g.consumers(v) != vec![bottom]
            {
                break;
            }
            let mut used_c = AttrSet::empty();
            let mut mod_c = AttrSet::empty();
            for &m in &members {
                used_c = used_c.union(&g.used_attrs(m));
                mod_c = mod_c.union(&g.modified_attrs(m));
            }
            let uv = g.used_attrs(v);
            let mv = g.modified_attrs(v);
            let conflict = mv.intersects(&used_c)
                || uv.intersects(&mod_c)
                || mv.intersects(&mod_c);

            // units containing filters may pass a dedup only when every
            // member predicate is keyed on the dedup keys
            let dedup_ok = match &g.node(v).action {
                Action::DropDuplicates { subset } => match subset {
                    None => true,
                    Some(keys) => members.iter().all(|&m| match &g.node(m).action {
                        Action::Filter { pred } => {
                            pred.used_columns().iter().all(|c| keys.contains(c))
                        }
                        _ => true,
                    }),
                },
                _ => true,
            };

            if !conflict && dedup_ok {
                let s = g.node(v).sources[0];
                let top = *members.last().expect("unit is nonempty");
                g.replace_source(top, v);
                ctx.remap_root(top, v);
                g.node_mut(bottom).sources[0] = s;
                g.node_mut(v).sources[0] = top;
                for &m in &members {
                    ctx.dirty.insert(m);
                }
                ctx.dirty.insert(v);
                ctx.report.compound_hops += 1;
                if !formed {
                    formed = true;
                    ctx.report.compounds_formed += 1;
                }
                continue;
            }
            let absorbable = is_row_wise_member(g, v) || is_movable_filter(g, v);
            if conflict && absorbable {
                members.insert(0, v);
                if !formed {
                    formed = true;
                    ctx.report.compounds_formed += 1;
                }
                continue;
            }
            break;
        }
    }
    merge_adjacent_filters(g, ctx)
}

/// Fold directly adjacent movable filters into one conjunction pass,
/// mutating the lower node and splicing the upper out.
fn merge_adjacent_filters(g: &mut Graph, ctx: &mut Ctx) -> Result<()> {
    let cap = iteration_cap(g);
    let mut steps = 0usize;
    'outer: loop {
        steps += 1;
        if steps > cap {
            return Err(Error::Internal(
                "filter merging failed to settle".to_string(),
            ));
        }
        let order = g.post_dfs(&ctx.all_roots());
        for &up in &order {
            if !is_movable_filter(g, up) || ctx.hints.contains(&up) {
                continue;
            }
            let low = g.node(up).sources[0];
            if !is_movable_filter(g, low) || ctx.protected(low) {
                continue;
            }
            if g.consumers(low) != vec![up] {
                continue;
            }
            let (Action::Filter { pred: pl }, Action::Filter { pred: pu }) =
                (g.node(low).action.clone(), g.node(up).action.clone())
            else {
                continue;
            };
            let low_src = g.node(low).sources[0];
            let low_tail = g.node(low).sources[1..].to_vec();
            let up_tail = g.node(up).sources[1..].to_vec();
            let off = low_tail.len();
            let combined = Expr::bin(BinOp::And, pl, pu.remap_subresults(&|i| i + off));
            g.replace_source(up, low);
            ctx.remap_root(up, low);
            let mut srcs = vec![low_src];
            srcs.extend_from_slice(&low_tail);
            srcs.extend_from_slice(&up_tail);
            g.node_mut(low).sources = srcs;
            g.node_mut(low).action = Action::Filter { pred: combined };
            ctx.dirty.insert(low);
            ctx.dirty.insert(up);
            ctx.report.filters_merged += 1;
            continue 'outer;
        }
        break;
    }
    Ok(())
}

fn attr_minus(l: &AttrSet, col: &str) -> AttrSet {
    match l {
        AttrSet::All => AttrSet::All,
        AttrSet::Cols(c) => AttrSet::Cols(c.iter().filter(|x| *x != col).cloned().collect()),
    }
}

/// Column demands flowing from roots toward reads. A writer whose written
/// columns are all dead gets the as-if-bypassed demand (pass-through), so a
/// single solve is consistent with removing every dead writer at once.
fn solve_demands(g: &Graph, roots: &[u32]) -> BTreeMap<u32, AttrSet> {
    let mut demand: BTreeMap<u32, AttrSet> = BTreeMap::new();
    for &r in roots {
        demand.insert(r, AttrSet::All);
    }
    let order = g.post_dfs(roots);
    for &uid in order.iter().rev() {
        let l = demand.get(&uid).cloned().unwrap_or_else(AttrSet::empty);
        let n = g.node(uid);
        let push = |demand: &mut BTreeMap<u32, AttrSet>, s: u32, a: AttrSet| {
            let e = demand.entry(s).or_insert_with(AttrSet::empty);
            *e = e.union(&a);
        };
        let tail_all = |demand: &mut BTreeMap<u32, AttrSet>, from: usize| {
            for &s in &n.sources[from.min(n.sources.len())..] {
                let e = demand.entry(s).or_insert_with(AttrSet::empty);
                *e = e.union(&AttrSet::All);
            }
        };
        match &n.action {
            Action::Read { .. } => {}
            Action::Filter { pred } => {
                push(
                    &mut demand,
                    n.sources[0],
                    l.union(&AttrSet::Cols(pred.used_columns())),
                );
                tail_all(&mut demand, 1);
            }
            Action::GetCols { cols } => {
                push(&mut demand, n.sources[0], AttrSet::from(cols.iter().cloned()));
            }
            Action::GetCol { col } => {
                push(
                    &mut demand,
                    n.sources[0],
                    AttrSet::from(std::iter::once(col.clone())),
                );
            }
            Action::SetCol { col, expr } => {
                if l.contains(col) {
                    let d = attr_minus(&l, col).union(&AttrSet::Cols(expr.used_columns()));
                    push(&mut demand, n.sources[0], d);
                    tail_all(&mut demand, 1);
                } else {
                    push(&mut demand, n.sources[0], l.clone());
                }
            }
            Action::DropCols { .. } => {
                push(&mut demand, n.sources[0], l.clone());
            }
            Action::Rename { map } => {
                let any_live = map.iter().any(|(_, new)| l.contains(new));
                if any_live {
                    let mapped = match &l {
                        AttrSet::All => AttrSet::All,
                        AttrSet::Cols(c) => AttrSet::Cols(
                            c.iter()
                                .map(|name| {
                                    map.iter()
                                        .find(|(_, new)| new == name)
                                        .map(|(old, _)| old.clone())
                                        .unwrap_or_else(|| name.clone())
                                })
                                .collect(),
                        ),
                    };
                    let olds = AttrSet::from(map.iter().map(|(old, _)| old.clone()));
                    push(&mut demand, n.sources[0], mapped.union(&olds));
                } else {
                    push(&mut demand, n.sources[0], l.clone());
                }
            }
            Action::Astype { map } => {
                let any_live = map.iter().any(|(c, _)| l.contains(c));
                if any_live {
                    let cols = AttrSet::from(map.iter().map(|(c, _)| c.clone()));
                    push(&mut demand, n.sources[0], l.union(&cols));
                } else {
                    push(&mut demand, n.sources[0], l.clone());
                }
            }
            Action::Fillna { .. } | Action::Round { .. } | Action::Abs | Action::Head { .. } => {
                push(&mut demand, n.sources[0], l.clone());
            }
            Action::DropDuplicates { .. } => {
                let d = l.union(&g.used_attrs(uid));
                push(&mut demand, n.sources[0], d);
            }
            Action::SortValues { by, .. } => {
                push(
                    &mut demand,
                    n.sources[0],
                    l.union(&AttrSet::from(by.iter().cloned())),
                );
            }
            Action::Explode { col } => {
                push(
                    &mut demand,
                    n.sources[0],
                    l.union(&AttrSet::from(std::iter::once(col.clone()))),
                );
            }
            Action::Merge { on, .. } => {
                let (dl, dr) = merge_demands(g, uid, on, &l);
                push(&mut demand, n.sources[0], dl);
                push(&mut demand, n.sources[1], dr);
            }
            Action::GroupByAgg { keys, col, .. } => {
                push(
                    &mut demand,
                    n.sources[0],
                    AttrSet::from(keys.iter().cloned().chain(std::iter::once(col.clone()))),
                );
            }
            Action::AggScalar { .. } => {
                let d = g.used_attrs(uid);
                push(&mut demand, n.sources[0], d);
            }
            Action::ScalarExpr { .. } | Action::Print { .. } | Action::Opaque { .. } => {
                tail_all(&mut demand, 0);
            }
        }
    }
    demand
}

/// Demands a merge places on its two sides. Suffix-stripped when both
/// schemas are known; collision columns stay demanded on both sides so the
/// output naming plan cannot change under writer elimination.
fn merge_demands(g: &Graph, uid: u32, on: &[String], l: &AttrSet) -> (AttrSet, AttrSet) {
    let n = g.node(uid);
    let (Some(ls), Some(rs)) = (g.schema_of(n.sources[0]), g.schema_of(n.sources[1])) else {
        return (AttrSet::All, AttrSet::All);
    };
    if matches!(l, AttrSet::All) {
        return (AttrSet::All, AttrSet::All);
    }
    let collisions: BTreeSet<String> = ls
        .intersection(&rs)
        .filter(|c| !on.contains(*c))
        .cloned()
        .collect();
    let mut dl: BTreeSet<String> = on.iter().cloned().collect();
    let mut dr = dl.clone();
    dl.extend(collisions.iter().cloned());
    dr.extend(collisions.iter().cloned());
    if let AttrSet::Cols(cols) = l {
        for name in cols {
            if let Some(base) = name.strip_suffix("_x") {
                if collisions.contains(base) {
                    dl.insert(base.to_string());
                }
            }
            if let Some(base) = name.strip_suffix("_y") {
                if collisions.contains(base) {
                    dr.insert(base.to_string());
                }
            }
            if ls.contains(name) {
                dl.insert(name.clone());
            }
            if rs.contains(name) {
                dr.insert(name.clone());
            }
        }
    }
    (AttrSet::Cols(dl), AttrSet::Cols(dr))
}

/// Splice out writers none of whose written columns are demanded: dead
/// set_column, rename with no live renamed column, astype with no live cast
/// column. Consumers are rewired to the writer's input.
fn run_dce(g: &mut Graph, roots: &[u32], ctx: &mut Ctx) -> Result<()> {
    for _ in 0..g.len() + 1 {
        let demand = solve_demands(g, roots);
        let order = g.post_dfs(roots);
        let mut changed = false;
        for &uid in &order {
            if roots.contains(&uid) {
                continue;
            }
            let l = demand.get(&uid).cloned().unwrap_or_else(AttrSet::empty);
            let dead = match &g.node(uid).action {
                Action::SetCol { col, .. } => !l.contains(col),
                Action::Rename { map } => map.iter().all(|(_, new)| !l.contains(new)),
                Action::Astype { map } => map.iter().all(|(c, _)| !l.contains(c)),
                _ => false,
            };
            if dead {
                let src = g.node(uid).sources[0];
                g.replace_source(uid, src);
                ctx.report.nodes_bypassed += 1;
                changed = true;
            }
        }
        if !changed {
            return Ok(());
        }
    }
    Err(Error::Internal(
        "dead-writer elimination failed to settle".to_string(),
    ))
}

/// Mark nodes whose results should outlive this compute: nodes reachable
/// from two or more of this round's result roots, and nodes on the path of
/// both a result root and a frame the program still holds live. Nodes whose
/// values were changed by moves are never marked.
pub fn mark_persist(
    g: &mut Graph,
    exec_roots: &[u32],
    hints: &[u32],
    dirty: &BTreeSet<u32>,
    report: &mut OptReport,
) {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &r in exec_roots {
        for uid in g.reachable(&[r]) {
            *counts.entry(uid).or_insert(0) += 1;
        }
    }
    let from_exec = g.reachable(exec_roots);
    let from_hints = g.reachable(hints);
    let uids: Vec<u32> = g.uids().collect();
    for uid in uids {
        if dirty.contains(&uid) {
            continue;
        }
        let shared = counts.get(&uid).copied().unwrap_or(0) >= 2;
        let bridging = from_exec.contains(&uid) && from_hints.contains(&uid);
        if shared || bridging {
            if !g.node(uid).persist {
                g.node_mut(uid).persist = true;
                report.persist_marks += 1;
            }
        }
    }
}

/// Run the enabled passes over `g`. `exec_roots` are the values this compute
/// must produce (target plus pending prints) and are remapped in place when
/// moves relocate them; `hints` are session bindings that stay live after
/// this compute and are never moved.
pub fn optimize(
    g: &mut Graph,
    exec_roots: &mut Vec<u32>,
    hints: &[u32],
    flags: OptFlags,
) -> Result<OptOutcome> {
    let mut outcome = OptOutcome::default();
    let mut ctx = Ctx {
        exec_roots,
        hints,
        report: &mut outcome.report,
        dirty: &mut outcome.dirty,
    };
    if flags.pushdown {
        run_pushdown(g, &mut ctx)?;
    }
    if flags.xpushdown {
        run_pushdown_extended(g, &mut ctx)?;
    }
    if flags.dce {
        let roots_all = ctx.all_roots();
        run_dce(g, &roots_all, &mut ctx)?;
    }
    if flags.persist {
        mark_persist(
            g,
            ctx.exec_roots,
            ctx.hints,
            ctx.dirty,
            ctx.report,
        );
    }
    Ok(outcome)
}
