//! Source-to-source rewrites driven by the liveness analysis: narrowing
//! reads to the columns a program actually uses, cancelling fetches whose
//! only consumer is a later drop, and inserting the lazy-print directive
//! plus compute() wrappers that make deferred output safe.
//!
//! Every pass rebuilds the statement tree while replaying the same pre-order
//! numbering the analysis used, so per-statement facts line up without any
//! side table.

use std::collections::{BTreeMap, BTreeSet};

use crate::dataflow::{self, LivenessFact};
use crate::error::{Error, Result};
use crate::frame::csv;
use crate::frame::ops::merge_column_plan;
use crate::interp::ExtRegistry;
use crate::script::ast::{
    Index, PrintArg, ScriptProgram, SExpr, Span, Stmt, StmtId, StmtKind,
};

/// Literal string and string-list bindings visible at a program point, used
/// to resolve read paths and usecols references during rewriting. Bindings
/// assigned under a condition are treated as unknown afterwards.
#[derive(Debug, Clone, Default)]
struct Defs {
    strs: BTreeMap<String, String>,
    lists: BTreeMap<String, Vec<String>>,
}

impl Defs {
    fn record(&mut self, var: &str, expr: &SExpr) {
        self.strs.remove(var);
        self.lists.remove(var);
        match expr {
            SExpr::Str(s) => {
                self.strs.insert(var.to_string(), s.clone());
            }
            SExpr::List(_) => {
                if let Some(l) = expr.as_str_list() {
                    self.lists.insert(var.to_string(), l);
                }
            }
            _ => {}
        }
    }

    fn poison(&mut self, assigned: &BTreeSet<String>) {
        for v in assigned {
            self.strs.remove(v);
            self.lists.remove(v);
        }
    }

    fn resolve_str(&self, e: &SExpr) -> Option<String> {
        match e {
            SExpr::Str(s) => Some(s.clone()),
            SExpr::Var(v) => self.strs.get(v).cloned(),
            _ => None,
        }
    }

    fn resolve_list(&self, e: &SExpr) -> Option<Vec<String>> {
        match e {
            SExpr::List(_) => e.as_str_list(),
            SExpr::Str(s) => Some(vec![s.clone()]),
            SExpr::Var(v) => self.lists.get(v).cloned(),
            _ => None,
        }
    }
}

/// Variables assigned anywhere in a statement list (including nested
/// blocks); these lose their literal bindings across a branch.
fn assigned_vars(stmts: &[Stmt], out: &mut BTreeSet<String>) {
    for s in stmts {
        match &s.kind {
            StmtKind::Assign { var, .. } | StmtKind::SetColumn { var, .. } => {
                out.insert(var.clone());
            }
            StmtKind::If {
                then_body,
                else_body,
                ..
            } => {
                assigned_vars(then_body, out);
                assigned_vars(else_body, out);
            }
            StmtKind::While { body, .. } => assigned_vars(body, out),
            _ => {}
        }
    }
}

fn all_names(p: &ScriptProgram) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    p.walk(&mut |_, s| match &s.kind {
        StmtKind::Assign { var, .. } | StmtKind::SetColumn { var, .. } => {
            names.insert(var.clone());
        }
        _ => {}
    });
    names
}

fn is_read_call(e: &SExpr) -> bool {
    matches!(e, SExpr::FreeCall { name, .. } if name == "read_csv")
}

/// Narrow every read to the columns live after it, unless the whole frame
/// escapes (a live wildcard). The column list is materialized as a separate
/// `SO_columns_<k>` assignment so the narrowed read stays readable.
pub fn rewrite_column_selection(p: &ScriptProgram, facts: &LivenessFact) -> ScriptProgram {
    let mut pass = ColSel {
        facts,
        defs: Defs::default(),
        used_names: all_names(p),
        next_so: 0,
    };
    let mut next = 0;
    ScriptProgram {
        body: pass.block(&p.body, &mut next),
    }
}

struct ColSel<'a> {
    facts: &'a LivenessFact,
    defs: Defs,
    used_names: BTreeSet<String>,
    next_so: usize,
}

impl<'a> ColSel<'a> {
    fn block(&mut self, stmts: &[Stmt], next: &mut StmtId) -> Vec<Stmt> {
        let mut out = Vec::new();
        for s in stmts {
            let id = *next;
            *next += 1;
            match &s.kind {
                StmtKind::Assign { var, expr } if is_read_call(expr) => {
                    match self.narrowed(id, var, expr) {
                        Some((so_stmt, new_expr)) => {
                            if let Some(so) = so_stmt {
                                if let StmtKind::Assign { var: sv, expr: se } = &so.kind {
                                    self.defs.record(sv, se);
                                }
                                out.push(so);
                            }
                            out.push(Stmt {
                                kind: StmtKind::Assign {
                                    var: var.clone(),
                                    expr: new_expr,
                                },
                                span: s.span,
                            });
                        }
                        None => out.push(s.clone()),
                    }
                    self.defs.record(var, expr);
                }
                StmtKind::Assign { var, expr } => {
                    out.push(s.clone());
                    self.defs.record(var, expr);
                }
                StmtKind::If {
                    cond,
                    then_body,
                    else_body,
                } => {
                    let saved = self.defs.clone();
                    let new_then = self.block(then_body, next);
                    self.defs = saved.clone();
                    let new_else = self.block(else_body, next);
                    self.defs = saved;
                    let mut touched = BTreeSet::new();
                    assigned_vars(then_body, &mut touched);
                    assigned_vars(else_body, &mut touched);
                    self.defs.poison(&touched);
                    out.push(Stmt {
                        kind: StmtKind::If {
                            cond: cond.clone(),
                            then_body: new_then,
                            else_body: new_else,
                        },
                        span: s.span,
                    });
                }
                StmtKind::While { cond, body } => {
                    let mut touched = BTreeSet::new();
                    assigned_vars(body, &mut touched);
                    // the loop may rebind before any iteration's read
                    self.defs.poison(&touched);
                    let new_body = self.block(body, next);
                    self.defs.poison(&touched);
                    out.push(Stmt {
                        kind: StmtKind::While {
                            cond: cond.clone(),
                            body: new_body,
                        },
                        span: s.span,
                    });
                }
                _ => out.push(s.clone()),
            }
        }
        out
    }

    /// Returns the optional list assignment plus the rewritten read, or None
    /// when the read stays untouched.
    fn narrowed(&mut self, id: StmtId, var: &str, expr: &SExpr) -> Option<(Option<Stmt>, SExpr)> {
        let SExpr::FreeCall { name, args, kwargs } = expr else {
            return None;
        };
        let live = self.facts.stmt_out.get(&id)?;
        if live.has_tau(var) {
            return None;
        }
        let frame_live = live.frame(var)?;
        if frame_live.cols.is_empty() {
            // nothing downstream reads it; leave the dead read alone
            return None;
        }
        let existing = SExpr::kwarg(kwargs, "usecols");
        let base_list: Vec<String> = match existing {
            Some(u) => self.defs.resolve_list(u)?,
            None => {
                let path = self.defs.resolve_str(args.first()?)?;
                csv::read_header(&path).ok()?
            }
        };
        let new_list: Vec<String> = base_list
            .iter()
            .filter(|c| frame_live.cols.contains(*c))
            .cloned()
            .collect();
        if new_list == base_list {
            return None;
        }
        let so_name = self.fresh_so_name();
        let so_stmt = Stmt {
            kind: StmtKind::Assign {
                var: so_name.clone(),
                expr: SExpr::List(new_list.into_iter().map(SExpr::Str).collect()),
            },
            span: Span::default(),
        };
        let mut new_kwargs = kwargs.clone();
        match new_kwargs.iter_mut().find(|(k, _)| k == "usecols") {
            Some((_, v)) => *v = SExpr::Var(so_name),
            None => new_kwargs.push(("usecols".to_string(), SExpr::Var(so_name))),
        }
        Some((
            Some(so_stmt),
            SExpr::FreeCall {
                name: name.clone(),
                args: args.clone(),
                kwargs: new_kwargs,
            },
        ))
    }

    fn fresh_so_name(&mut self) -> String {
        loop {
            let name = format!("SO_columns_{}", self.next_so);
            self.next_so += 1;
            if !self.used_names.contains(&name) {
                self.used_names.insert(name.clone());
                return name;
            }
        }
    }
}

/// Forward schema tracking: the exact column list of each frame variable
/// where it can be known, `None` where it cannot. Used to turn drops into
/// precise projections for analysis and to prune them afterwards.
#[derive(Debug, Clone, Default)]
struct SchemaEnv {
    frames: BTreeMap<String, Option<Vec<String>>>,
    defs: Defs,
}

impl SchemaEnv {
    fn poison(&mut self, assigned: &BTreeSet<String>) {
        for v in assigned {
            self.frames.insert(v.clone(), None);
        }
        self.defs.poison(assigned);
    }

    fn join(&mut self, other: &SchemaEnv) {
        let keys: BTreeSet<String> = self
            .frames
            .keys()
            .chain(other.frames.keys())
            .cloned()
            .collect();
        for k in keys {
            let a = self.frames.get(&k).cloned().flatten();
            let b = other.frames.get(&k).cloned().flatten();
            self.frames.insert(k, if a == b { a } else { None });
        }
    }
}

fn minus<'v>(list: &'v [String], remove: &BTreeSet<String>) -> Vec<String> {
    list.iter()
        .filter(|c| !remove.contains(*c))
        .cloned()
        .collect()
}

/// Column list an expression evaluates to, when statically certain.
fn expr_schema(e: &SExpr, env: &SchemaEnv) -> Option<Vec<String>> {
    match e {
        SExpr::Var(v) => env.frames.get(v).cloned().flatten(),
        SExpr::FreeCall { name, args, kwargs } if name == "read_csv" => {
            let path = env.defs.resolve_str(args.first()?)?;
            let header = csv::read_header(&path).ok()?;
            match SExpr::kwarg(kwargs, "usecols") {
                Some(u) => {
                    let want = env.defs.resolve_list(u)?;
                    // fetch order is header order regardless of list order
                    Some(header.into_iter().filter(|c| want.contains(c)).collect())
                }
                None => Some(header),
            }
        }
        SExpr::Index { base, index } => {
            let b = expr_schema(base, env)?;
            match index {
                Index::Pred(_) => Some(b),
                Index::Col(c) => b.contains(c).then(|| vec![c.clone()]),
                Index::Cols(cs) => cs.iter().all(|c| b.contains(c)).then(|| cs.clone()),
            }
        }
        SExpr::Attr { base, name } => {
            let b = expr_schema(base, env)?;
            b.contains(name).then(|| vec![name.clone()])
        }
        // computed series take the synthetic column name
        SExpr::DtDayOfWeek(_) | SExpr::Bin { .. } | SExpr::Not(_) | SExpr::Neg(_) => {
            Some(vec!["value".to_string()])
        }
        SExpr::Method {
            base,
            name,
            args,
            kwargs,
        } => match name.as_str() {
            "head" | "sort_values" | "fillna" | "round" | "abs" | "drop_duplicates"
            | "compute" | "astype" | "explode" => expr_schema(base, env),
            "drop" => {
                let b = expr_schema(base, env)?;
                let dropped: BTreeSet<String> = env
                    .defs
                    .resolve_list(SExpr::kwarg(kwargs, "columns").or_else(|| args.first())?)?
                    .into_iter()
                    .collect();
                Some(minus(&b, &dropped))
            }
            "rename" => {
                let b = expr_schema(base, env)?;
                let SExpr::Dict(entries) = SExpr::kwarg(kwargs, "columns").or_else(|| args.first())?
                else {
                    return None;
                };
                let map: Vec<(String, String)> = entries
                    .iter()
                    .filter_map(|(old, v)| match v {
                        SExpr::Str(new) => Some((old.clone(), new.clone())),
                        _ => None,
                    })
                    .collect();
                if map.len() != entries.len() || map.iter().any(|(old, _)| !b.contains(old)) {
                    return None;
                }
                Some(
                    b.into_iter()
                        .map(|c| match map.iter().find(|(old, _)| old == &c) {
                            Some((_, new)) => new.clone(),
                            None => c,
                        })
                        .collect(),
                )
            }
            "merge" => {
                let l = expr_schema(base, env)?;
                let r = expr_schema(args.first()?, env)?;
                let on = env.defs.resolve_list(SExpr::kwarg(kwargs, "on")?)?;
                if !on.iter().all(|k| l.contains(k) && r.contains(k)) {
                    return None;
                }
                let (lp, rp) = merge_column_plan(&l, &r, &on);
                Some(
                    lp.into_iter()
                        .map(|(_, out)| out)
                        .chain(rp.into_iter().map(|(_, out)| out))
                        .collect(),
                )
            }
            "sum" | "mean" | "max" | "min" | "count" => {
                // grouped aggregate output: keys then the aggregated column
                let SExpr::Index {
                    base: gb,
                    index: Index::Col(c),
                } = &**base
                else {
                    return None;
                };
                let SExpr::Method {
                    name: gname, args, ..
                } = &**gb
                else {
                    return None;
                };
                if gname != "groupby" {
                    return None;
                }
                let mut keys = env.defs.resolve_list(args.first()?)?;
                keys.push(c.clone());
                Some(keys)
            }
            _ => None,
        },
        _ => None,
    }
}

/// Whether an expression is frame-valued, reusing the analysis' notion.
fn frame_valued_with(frames: &BTreeSet<String>, e: &SExpr) -> bool {
    // mirror of the liveness classifier: frames flow through chains
    match e {
        SExpr::FreeCall { name, .. } => name == "read_csv",
        SExpr::Var(v) => frames.contains(v),
        SExpr::Index { base, .. } | SExpr::Attr { base, .. } | SExpr::DtDayOfWeek(base) => {
            frame_valued_with(frames, base)
        }
        SExpr::Method { base, name, .. } => match name.as_str() {
            "sum" | "mean" | "max" | "min" | "count" => {
                matches!(&**base, SExpr::Index { base: gb, .. }
                    if matches!(&**gb, SExpr::Method { name, .. } if name == "groupby"))
            }
            _ => frame_valued_with(frames, base),
        },
        SExpr::Bin { lhs, rhs, .. } => {
            frame_valued_with(frames, lhs) || frame_valued_with(frames, rhs)
        }
        SExpr::Not(inner) | SExpr::Neg(inner) => frame_valued_with(frames, inner),
        _ => false,
    }
}

enum DropMode<'a> {
    /// Replace each drop whose input schema is known with the equivalent
    /// projection, so liveness sees exactly which columns survive.
    Exact,
    /// Narrow reads by the removable sets and prune drop lists to columns
    /// that still exist.
    Finalize {
        remove: &'a BTreeMap<StmtId, Vec<String>>,
    },
}

struct DropPass<'a> {
    mode: DropMode<'a>,
    env: SchemaEnv,
    /// reads seen while building the exact program: id -> (var, fetch set)
    reads: BTreeMap<StmtId, (String, Vec<String>)>,
    dropped_names: BTreeSet<String>,
}

impl<'a> DropPass<'a> {
    fn block(&mut self, stmts: &[Stmt], next: &mut StmtId) -> Vec<Stmt> {
        let mut out = Vec::new();
        for s in stmts {
            let id = *next;
            *next += 1;
            let kind = match &s.kind {
                StmtKind::Assign { var, expr } => {
                    let mut new_expr = self.map_expr(expr);
                    if is_read_call(&new_expr) {
                        if let Some(fetch) = expr_schema(&new_expr, &self.env) {
                            match &self.mode {
                                DropMode::Exact => {
                                    self.reads.insert(id, (var.clone(), fetch));
                                }
                                DropMode::Finalize { remove } => {
                                    if let Some(gone) = remove.get(&id) {
                                        new_expr = narrow_read(&new_expr, &fetch, gone);
                                    }
                                }
                            }
                        }
                    }
                    let schema = expr_schema(&new_expr, &self.env);
                    if frame_valued_with(&self.frame_names(), expr) {
                        self.env.frames.insert(var.clone(), schema);
                    } else {
                        self.env.frames.remove(var);
                    }
                    self.env.defs.record(var, &new_expr);
                    StmtKind::Assign {
                        var: var.clone(),
                        expr: new_expr,
                    }
                }
                StmtKind::SetColumn { var, col, expr } => {
                    if let Some(Some(schema)) = self.env.frames.get_mut(var) {
                        if !schema.contains(col) {
                            schema.push(col.clone());
                        }
                    }
                    StmtKind::SetColumn {
                        var: var.clone(),
                        col: col.clone(),
                        expr: expr.clone(),
                    }
                }
                StmtKind::If {
                    cond,
                    then_body,
                    else_body,
                } => {
                    let entry = self.env.clone();
                    let new_then = self.block(then_body, next);
                    let after_then = std::mem::replace(&mut self.env, entry.clone());
                    let new_else = self.block(else_body, next);
                    self.env.join(&after_then);
                    StmtKind::If {
                        cond: cond.clone(),
                        then_body: new_then,
                        else_body: new_else,
                    }
                }
                StmtKind::While { cond, body } => {
                    let mut touched = BTreeSet::new();
                    assigned_vars(body, &mut touched);
                    self.env.poison(&touched);
                    let new_body = self.block(body, next);
                    self.env.poison(&touched);
                    StmtKind::While {
                        cond: cond.clone(),
                        body: new_body,
                    }
                }
                other => other.clone(),
            };
            out.push(Stmt { kind, span: s.span });
        }
        out
    }

    fn frame_names(&self) -> BTreeSet<String> {
        self.env.frames.keys().cloned().collect()
    }

    fn map_expr(&mut self, e: &SExpr) -> SExpr {
        match e {
            SExpr::Method {
                base,
                name,
                args,
                kwargs,
            } if name == "drop" => {
                let new_base = self.map_expr(base);
                let cols_expr = SExpr::kwarg(kwargs, "columns").or_else(|| args.first());
                let dropped = cols_expr.and_then(|c| self.env.defs.resolve_list(c));
                let schema = expr_schema(&new_base, &self.env);
                match (schema, dropped) {
                    (Some(s), Some(d)) => {
                        let dset: BTreeSet<String> = d.iter().cloned().collect();
                        self.dropped_names.extend(d.iter().cloned());
                        match &self.mode {
                            DropMode::Exact => SExpr::Index {
                                base: Box::new(new_base),
                                index: Index::Cols(minus(&s, &dset)),
                            },
                            DropMode::Finalize { .. } => {
                                let kept: Vec<String> =
                                    d.into_iter().filter(|c| s.contains(c)).collect();
                                if kept.is_empty() {
                                    new_base
                                } else {
                                    rebuilt_drop(new_base, name, args, kwargs, kept)
                                }
                            }
                        }
                    }
                    _ => SExpr::Method {
                        base: Box::new(new_base),
                        name: name.clone(),
                        args: args.clone(),
                        kwargs: kwargs.clone(),
                    },
                }
            }
            SExpr::Method {
                base,
                name,
                args,
                kwargs,
            } => SExpr::Method {
                base: Box::new(self.map_expr(base)),
                name: name.clone(),
                args: args.iter().map(|a| self.map_expr(a)).collect(),
                kwargs: kwargs
                    .iter()
                    .map(|(k, v)| (k.clone(), self.map_expr(v)))
                    .collect(),
            },
            SExpr::Index { base, index } => SExpr::Index {
                base: Box::new(self.map_expr(base)),
                index: index.clone(),
            },
            SExpr::Attr { base, name } => SExpr::Attr {
                base: Box::new(self.map_expr(base)),
                name: name.clone(),
            },
            SExpr::DtDayOfWeek(base) => SExpr::DtDayOfWeek(Box::new(self.map_expr(base))),
            SExpr::Bin { op, lhs, rhs } => SExpr::Bin {
                op: *op,
                lhs: Box::new(self.map_expr(lhs)),
                rhs: Box::new(self.map_expr(rhs)),
            },
            SExpr::Not(inner) => SExpr::Not(Box::new(self.map_expr(inner))),
            SExpr::Neg(inner) => SExpr::Neg(Box::new(self.map_expr(inner))),
            other => other.clone(),
        }
    }
}

/// Replace or prune a drop call's column list.
fn rebuilt_drop(
    base: SExpr,
    name: &str,
    args: &[SExpr],
    kwargs: &[(String, SExpr)],
    kept: Vec<String>,
) -> SExpr {
    let list = SExpr::List(kept.into_iter().map(SExpr::Str).collect());
    let mut new_args = args.to_vec();
    let mut new_kwargs = kwargs.to_vec();
    match new_kwargs.iter_mut().find(|(k, _)| k == "columns") {
        Some((_, v)) => *v = list,
        None => {
            if let Some(first) = new_args.first_mut() {
                *first = list;
            } else {
                new_kwargs.push(("columns".to_string(), list));
            }
        }
    }
    SExpr::Method {
        base: Box::new(base),
        name: name.to_string(),
        args: new_args,
        kwargs: new_kwargs,
    }
}

/// Intersect a read's fetch set down by the removable columns, keeping
/// header order. Adds a usecols kwarg when the read had none.
fn narrow_read(e: &SExpr, fetch: &[String], gone: &[String]) -> SExpr {
    let SExpr::FreeCall { name, args, kwargs } = e else {
        return e.clone();
    };
    let keep: Vec<String> = fetch.iter().filter(|c| !gone.contains(c)).cloned().collect();
    let list = SExpr::List(keep.into_iter().map(SExpr::Str).collect());
    let mut new_kwargs = kwargs.clone();
    match new_kwargs.iter_mut().find(|(k, _)| k == "usecols") {
        Some((_, v)) => *v = list,
        None => new_kwargs.push(("usecols".to_string(), list)),
    }
    SExpr::FreeCall {
        name: name.clone(),
        args: args.clone(),
        kwargs: new_kwargs,
    }
}

/// Stop fetching columns whose only consumer is a later `drop`, and prune
/// the drops themselves (removing a call outright once its list empties).
///
/// Liveness alone cannot see this: a whole-frame use downstream of a drop
/// pulls the wildcard through it, reviving the dropped columns. Solving a
/// variant program with each drop replaced by its equivalent projection
/// bounds the wildcard exactly, and the gap between the fetch set and that
/// solution is the set of columns only the drop ever touches.
pub fn rewrite_dropped_columns(p: &ScriptProgram, _facts: &LivenessFact) -> ScriptProgram {
    let mut has_drop = false;
    p.walk(&mut |_, s| {
        if stmt_mentions_drop(s) {
            has_drop = true;
        }
    });
    if !has_drop {
        return p.clone();
    }

    let mut exact = DropPass {
        mode: DropMode::Exact,
        env: SchemaEnv::default(),
        reads: BTreeMap::new(),
        dropped_names: BTreeSet::new(),
    };
    let mut next = 0;
    let exact_prog = ScriptProgram {
        body: exact.block(&p.body, &mut next),
    };
    if exact.dropped_names.is_empty() {
        return p.clone();
    }
    let cfg = dataflow::build_cfg(&exact_prog);
    let facts = dataflow::solve_liveness(&exact_prog, &cfg);

    let mut remove: BTreeMap<StmtId, Vec<String>> = BTreeMap::new();
    for (id, (var, fetch)) in &exact.reads {
        let Some(live) = facts.stmt_out.get(id) else {
            continue;
        };
        if live.has_tau(var) {
            continue;
        }
        let live_cols: BTreeSet<String> = live
            .frame(var)
            .map(|f| f.cols.iter().cloned().collect())
            .unwrap_or_default();
        let gone: Vec<String> = fetch
            .iter()
            .filter(|c| exact.dropped_names.contains(*c) && !live_cols.contains(*c))
            .cloned()
            .collect();
        if !gone.is_empty() {
            remove.insert(*id, gone);
        }
    }
    if remove.is_empty() {
        return p.clone();
    }

    let mut fin = DropPass {
        mode: DropMode::Finalize { remove: &remove },
        env: SchemaEnv::default(),
        reads: BTreeMap::new(),
        dropped_names: BTreeSet::new(),
    };
    let mut next = 0;
    ScriptProgram {
        body: fin.block(&p.body, &mut next),
    }
}

fn stmt_mentions_drop(s: &Stmt) -> bool {
    fn expr_has_drop(e: &SExpr) -> bool {
        match e {
            SExpr::Method { base, name, args, kwargs } => {
                name == "drop"
                    || expr_has_drop(base)
                    || args.iter().any(expr_has_drop)
                    || kwargs.iter().any(|(_, v)| expr_has_drop(v))
            }
            SExpr::Index { base, index } => {
                expr_has_drop(base)
                    || matches!(index, Index::Pred(p) if expr_has_drop(p))
            }
            SExpr::Attr { base, .. } | SExpr::DtDayOfWeek(base) => expr_has_drop(base),
            SExpr::Bin { lhs, rhs, .. } => expr_has_drop(lhs) || expr_has_drop(rhs),
            SExpr::Not(inner) | SExpr::Neg(inner) => expr_has_drop(inner),
            SExpr::List(items) => items.iter().any(expr_has_drop),
            SExpr::Dict(entries) => entries.iter().any(|(_, v)| expr_has_drop(v)),
            _ => false,
        }
    }
    match &s.kind {
        StmtKind::Assign { expr, .. } | StmtKind::SetColumn { expr, .. } => expr_has_drop(expr),
        StmtKind::Print(PrintArg::Expr(e)) => expr_has_drop(e),
        StmtKind::ExtCall { args, .. } => args.iter().any(expr_has_drop),
        StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => expr_has_drop(cond),
        _ => false,
    }
}

/// Turn prints lazy: the override directive goes on top, frame arguments of
/// external calls get compute() wrappers carrying the frames still live at
/// that point, and a final flush drains whatever is left.
pub fn rewrite_lazy_io(
    p: &ScriptProgram,
    live_frames: &BTreeMap<StmtId, BTreeSet<String>>,
    registry: &ExtRegistry,
) -> Result<ScriptProgram> {
    let mut unknown = None;
    p.walk(&mut |_, s| {
        if let StmtKind::ExtCall { module, func, .. } = &s.kind {
            if !registry.contains(module) && unknown.is_none() {
                unknown = Some(format!("{module}.{func}"));
            }
        }
    });
    if let Some(name) = unknown {
        return Err(Error::UnknownExternal(name));
    }

    let frames = dataflow::frame_vars(p);
    let mut next = 0;
    let mut body = lazy_block(&p.body, &mut next, &frames, live_frames);

    let already_lazy = matches!(p.body.first(), Some(s) if s.kind == StmtKind::EnableLazyPrint);
    if !already_lazy {
        body.insert(
            0,
            Stmt {
                kind: StmtKind::EnableLazyPrint,
                span: Span::default(),
            },
        );
    }
    let mut has_print = false;
    p.walk(&mut |_, s| {
        if matches!(s.kind, StmtKind::Print(_)) {
            has_print = true;
        }
    });
    let ends_with_flush = matches!(body.last(), Some(s) if s.kind == StmtKind::Flush);
    if has_print && !ends_with_flush {
        body.push(Stmt {
            kind: StmtKind::Flush,
            span: Span::default(),
        });
    }
    Ok(ScriptProgram { body })
}

fn lazy_block(
    stmts: &[Stmt],
    next: &mut StmtId,
    frames: &BTreeSet<String>,
    live_frames: &BTreeMap<StmtId, BTreeSet<String>>,
) -> Vec<Stmt> {
    let mut out = Vec::new();
    for s in stmts {
        let id = *next;
        *next += 1;
        let kind = match &s.kind {
            StmtKind::ExtCall { module, func, args } => {
                let live: Vec<String> = live_frames
                    .get(&id)
                    .map(|fs| fs.iter().cloned().collect())
                    .unwrap_or_default();
                let new_args = args
                    .iter()
                    .map(|a| wrap_compute(a, frames, &live))
                    .collect();
                StmtKind::ExtCall {
                    module: module.clone(),
                    func: func.clone(),
                    args: new_args,
                }
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => StmtKind::If {
                cond: cond.clone(),
                then_body: lazy_block(then_body, next, frames, live_frames),
                else_body: lazy_block(else_body, next, frames, live_frames),
            },
            StmtKind::While { cond, body } => StmtKind::While {
                cond: cond.clone(),
                body: lazy_block(body, next, frames, live_frames),
            },
            other => other.clone(),
        };
        out.push(Stmt { kind, span: s.span });
    }
    out
}

fn wrap_compute(arg: &SExpr, frames: &BTreeSet<String>, live: &[String]) -> SExpr {
    if !frame_valued_with(frames, arg) {
        return arg.clone();
    }
    if matches!(arg, SExpr::Method { name, .. } if name == "compute") {
        return arg.clone();
    }
    SExpr::Method {
        base: Box::new(arg.clone()),
        name: "compute".to_string(),
        args: Vec::new(),
        kwargs: vec![(
            "live_df".to_string(),
            SExpr::List(live.iter().cloned().map(SExpr::Var).collect()),
        )],
    }
}

/// The standard pipeline behind `rewrite`: narrow reads, cancel drop-only
/// fetches, then make output lazy.
pub fn rewrite_all(p: &ScriptProgram, registry: &ExtRegistry) -> Result<ScriptProgram> {
    let cfg = dataflow::build_cfg(p);
    let facts = dataflow::solve_liveness(p, &cfg);
    let p = rewrite_column_selection(p, &facts);

    let cfg = dataflow::build_cfg(&p);
    let facts = dataflow::solve_liveness(&p, &cfg);
    let p = rewrite_dropped_columns(&p, &facts);

    let cfg = dataflow::build_cfg(&p);
    let facts = dataflow::solve_liveness(&p, &cfg);
    let live = dataflow::solve_live_frames(&facts);
    rewrite_lazy_io(&p, &live, registry)
}
