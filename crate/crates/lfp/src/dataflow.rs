//! Backward dataflow over script control-flow graphs: live attribute
//! analysis (which frame columns may still be read on some path to exit) and
//! its frame-granularity projection. Results drive the column-selection and
//! dropped-column rewrites and the live-frame hints at forced computes.
//!
//! The whole-frame wildcard is written `τ` in discussion and `*` in dumps: a
//! frame's entry with `tau` set subsumes every column of that frame.

use std::collections::{BTreeMap, BTreeSet};

use crate::script::ast::*;

/// One live attribute: a column of a frame variable, or the whole frame.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct AttrRef {
    pub frame: String,
    /// `None` is the whole-frame wildcard.
    pub col: Option<String>,
}

impl std::fmt::Display for AttrRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.col {
            Some(c) => write!(f, "{}.{}", self.frame, c),
            None => write!(f, "{}.*", self.frame),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrameLive {
    pub tau: bool,
    pub cols: BTreeSet<String>,
}

/// Set of live attributes, normalized: a frame entry exists only when
/// something of it is live, and `tau` clears the column list it subsumes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LiveSet {
    pub frames: BTreeMap<String, FrameLive>,
}

impl LiveSet {
    pub fn add_tau(&mut self, frame: &str) {
        let e = self.frames.entry(frame.to_string()).or_default();
        e.tau = true;
        e.cols.clear();
    }

    pub fn add_col(&mut self, frame: &str, col: &str) {
        let e = self.frames.entry(frame.to_string()).or_default();
        if !e.tau {
            e.cols.insert(col.to_string());
        }
    }

    pub fn add(&mut self, a: &AttrRef) {
        match &a.col {
            Some(c) => self.add_col(&a.frame, c),
            None => self.add_tau(&a.frame),
        }
    }

    pub fn contains(&self, frame: &str, col: &str) -> bool {
        self.frames
            .get(frame)
            .map(|e| e.tau || e.cols.contains(col))
            .unwrap_or(false)
    }

    pub fn has_tau(&self, frame: &str) -> bool {
        self.frames.get(frame).map(|e| e.tau).unwrap_or(false)
    }

    pub fn frame(&self, frame: &str) -> Option<&FrameLive> {
        self.frames.get(frame)
    }

    pub fn live_frames(&self) -> BTreeSet<String> {
        self.frames.keys().cloned().collect()
    }

    pub fn union_with(&mut self, other: &LiveSet) {
        for (f, e) in &other.frames {
            if e.tau {
                self.add_tau(f);
            } else {
                for c in &e.cols {
                    self.add_col(f, c);
                }
            }
        }
    }

    pub fn remove_frame(&mut self, frame: &str) -> Option<FrameLive> {
        self.frames.remove(frame)
    }

    pub fn remove_col(&mut self, frame: &str, col: &str) {
        if let Some(e) = self.frames.get_mut(frame) {
            if !e.tau {
                e.cols.remove(col);
                if e.cols.is_empty() {
                    self.frames.remove(frame);
                }
            }
        }
    }

    /// Set difference under wildcard semantics: removing a whole-frame kill
    /// drops the frame's entry; removing columns leaves `tau` untouched.
    pub fn minus(&self, kill: &LiveSet) -> LiveSet {
        let mut out = self.clone();
        for (f, k) in &kill.frames {
            if k.tau {
                out.frames.remove(f);
            } else {
                for c in &k.cols {
                    out.remove_col(f, c);
                }
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn attrs(&self) -> Vec<AttrRef> {
        let mut out = Vec::new();
        for (f, e) in &self.frames {
            if e.tau {
                out.push(AttrRef {
                    frame: f.clone(),
                    col: None,
                });
            }
            for c in &e.cols {
                out.push(AttrRef {
                    frame: f.clone(),
                    col: Some(c.clone()),
                });
            }
        }
        out
    }
}

impl std::fmt::Display for LiveSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let attrs = self.attrs();
        if attrs.is_empty() {
            return write!(f, "-");
        }
        for (i, a) in attrs.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

/// Frame-typed variables, inferred flow-insensitively: anything assigned a
/// read, a frame-producing chain, or an alias of another frame, plus every
/// column-assignment target.
pub fn frame_vars(p: &ScriptProgram) -> BTreeSet<String> {
    let mut frames: BTreeSet<String> = BTreeSet::new();
    loop {
        let before = frames.len();
        p.walk(&mut |_, s| match &s.kind {
            StmtKind::Assign { var, expr } => {
                if frame_valued(expr, &frames) {
                    frames.insert(var.clone());
                }
            }
            StmtKind::SetColumn { var, .. } => {
                frames.insert(var.clone());
            }
            _ => {}
        });
        if frames.len() == before {
            return frames;
        }
    }
}

/// Whether an expression produces a frame (or series, which we model as a
/// single-column frame) rather than a scalar.
fn frame_valued(e: &SExpr, frames: &BTreeSet<String>) -> bool {
    match e {
        SExpr::FreeCall { name, .. } => name == "read_csv",
        SExpr::Var(v) => frames.contains(v),
        SExpr::Index { base, .. } => frame_valued(base, frames),
        SExpr::Attr { base, .. } => frame_valued(base, frames),
        SExpr::DtDayOfWeek(base) => frame_valued(base, frames),
        SExpr::Method { base, name, .. } => match name.as_str() {
            // aggregation over a grouping keeps frame shape; over a series
            // it collapses to a scalar
            "sum" | "mean" | "max" | "min" | "count" => is_grouped(base),
            "groupby" | "head" | "sort_values" | "astype" | "fillna" | "rename" | "drop"
            | "drop_duplicates" | "round" | "abs" | "explode" | "merge" | "compute" => {
                frame_valued(base, frames)
            }
            _ => frame_valued(base, frames),
        },
        SExpr::Bin { lhs, rhs, .. } => frame_valued(lhs, frames) || frame_valued(rhs, frames),
        SExpr::Not(inner) | SExpr::Neg(inner) => frame_valued(inner, frames),
        _ => false,
    }
}

fn is_grouped(e: &SExpr) -> bool {
    match e {
        SExpr::Index { base, .. } => is_grouped(base),
        SExpr::Method { name, .. } => name == "groupby",
        _ => false,
    }
}

/// The frame variable whose columns flow to this expression's result
/// unchanged in name: access chains of filters, projections, row-wise
/// transforms. `None` once a rename, merge, or grouping obscures names.
fn identity_root(e: &SExpr, frames: &BTreeSet<String>) -> Option<String> {
    match e {
        SExpr::Var(v) if frames.contains(v) => Some(v.clone()),
        SExpr::Index { base, .. } => identity_root(base, frames),
        SExpr::Method { base, name, .. } => match name.as_str() {
            "head" | "sort_values" | "astype" | "fillna" | "drop" | "drop_duplicates"
            | "round" | "abs" | "explode" | "compute" => identity_root(base, frames),
            _ => None,
        },
        _ => None,
    }
}

/// Every frame variable mentioned anywhere inside the expression.
fn mentioned_frames(e: &SExpr, frames: &BTreeSet<String>, out: &mut BTreeSet<String>) {
    match e {
        SExpr::Var(v) => {
            if frames.contains(v) {
                out.insert(v.clone());
            }
        }
        SExpr::Attr { base, .. } | SExpr::DtDayOfWeek(base) => mentioned_frames(base, frames, out),
        SExpr::Index { base, index } => {
            mentioned_frames(base, frames, out);
            if let Index::Pred(p) = index {
                mentioned_frames(p, frames, out);
            }
        }
        SExpr::Method { base, args, kwargs, name } => {
            mentioned_frames(base, frames, out);
            if name != "compute" {
                for a in args {
                    mentioned_frames(a, frames, out);
                }
                for (_, v) in kwargs {
                    mentioned_frames(v, frames, out);
                }
            }
        }
        SExpr::FreeCall { args, kwargs, .. } => {
            for a in args {
                mentioned_frames(a, frames, out);
            }
            for (_, v) in kwargs {
                mentioned_frames(v, frames, out);
            }
        }
        SExpr::Bin { lhs, rhs, .. } => {
            mentioned_frames(lhs, frames, out);
            mentioned_frames(rhs, frames, out);
        }
        SExpr::Not(inner) | SExpr::Neg(inner) => mentioned_frames(inner, frames, out),
        SExpr::List(items) => {
            for i in items {
                mentioned_frames(i, frames, out);
            }
        }
        SExpr::Dict(entries) => {
            for (_, v) in entries {
                mentioned_frames(v, frames, out);
            }
        }
        _ => {}
    }
}

/// Attribute named columns of a derived frame to its root, degrading to the
/// whole-frame wildcard of every mentioned frame when names don't survive
/// the chain.
fn attach_cols(base: &SExpr, cols: &[String], frames: &BTreeSet<String>, out: &mut LiveSet) {
    match identity_root(base, frames) {
        Some(root) => {
            for c in cols {
                out.add_col(&root, c);
            }
        }
        None => {
            let mut mentioned = BTreeSet::new();
            mentioned_frames(base, frames, &mut mentioned);
            for f in mentioned {
                out.add_tau(&f);
            }
        }
    }
}

fn str_list_arg(e: Option<&SExpr>) -> Vec<String> {
    e.and_then(|e| e.as_str_list()).unwrap_or_default()
}

/// Columns an expression reads, attributed to frame variables. Mentioning a
/// column generates it (weak liveness); bare frame operands generate
/// nothing here because assignment lineage or whole-frame consumers cover
/// them.
fn value_uses(e: &SExpr, frames: &BTreeSet<String>, out: &mut LiveSet) {
    // groupby aggregation chain: base.groupby([keys])['c'].agg()
    if let SExpr::Method { base, name, .. } = e {
        if matches!(name.as_str(), "sum" | "mean" | "max" | "min" | "count") {
            if let SExpr::Index {
                base: gb,
                index: Index::Col(c),
            } = base.as_ref()
            {
                if let SExpr::Method {
                    base: src,
                    name: gname,
                    args,
                    ..
                } = gb.as_ref()
                {
                    if gname == "groupby" {
                        let mut keys = str_list_arg(args.first());
                        keys.push(c.clone());
                        attach_cols(src, &keys, frames, out);
                        value_uses(src, frames, out);
                        return;
                    }
                }
            }
        }
    }
    match e {
        SExpr::Attr { base, name } => {
            attach_cols(base, &[name.clone()], frames, out);
            value_uses(base, frames, out);
        }
        SExpr::DtDayOfWeek(base) => value_uses(base, frames, out),
        SExpr::Index { base, index } => {
            match index {
                Index::Pred(p) => value_uses(p, frames, out),
                Index::Col(c) => attach_cols(base, &[c.clone()], frames, out),
                Index::Cols(cs) => attach_cols(base, cs, frames, out),
            }
            value_uses(base, frames, out);
        }
        SExpr::Method {
            base,
            name,
            args,
            kwargs,
        } => {
            match name.as_str() {
                "sort_values" => {
                    let by = str_list_arg(SExpr::kwarg(kwargs, "by").or(args.first()));
                    attach_cols(base, &by, frames, out);
                }
                "drop_duplicates" => {
                    let subset = str_list_arg(SExpr::kwarg(kwargs, "subset"));
                    attach_cols(base, &subset, frames, out);
                }
                "explode" => {
                    if let Some(SExpr::Str(c)) = args.first() {
                        attach_cols(base, &[c.clone()], frames, out);
                    }
                }
                "astype" => {
                    if let Some(SExpr::Dict(entries)) = args.first() {
                        let cols: Vec<String> = entries.iter().map(|(k, _)| k.clone()).collect();
                        attach_cols(base, &cols, frames, out);
                    }
                }
                "rename" => {
                    if let Some(SExpr::Dict(entries)) = SExpr::kwarg(kwargs, "columns") {
                        let olds: Vec<String> = entries.iter().map(|(k, _)| k.clone()).collect();
                        attach_cols(base, &olds, frames, out);
                    }
                }
                "drop" => {
                    let cols = str_list_arg(SExpr::kwarg(kwargs, "columns"));
                    attach_cols(base, &cols, frames, out);
                }
                "merge" => {
                    let on = str_list_arg(SExpr::kwarg(kwargs, "on"));
                    attach_cols(base, &on, frames, out);
                    if let Some(other) = args.first() {
                        attach_cols(other, &on, frames, out);
                        value_uses(other, frames, out);
                    }
                }
                "head" | "round" | "abs" | "fillna" | "compute" | "groupby" | "sum" | "mean"
                | "max" | "min" | "count" => {}
                _ => {
                    // unknown method: assume it may touch everything it sees
                    let mut mentioned = BTreeSet::new();
                    mentioned_frames(e, frames, &mut mentioned);
                    for f in mentioned {
                        out.add_tau(&f);
                    }
                }
            }
            value_uses(base, frames, out);
        }
        SExpr::Bin { lhs, rhs, .. } => {
            value_uses(lhs, frames, out);
            value_uses(rhs, frames, out);
        }
        SExpr::Not(inner) | SExpr::Neg(inner) => value_uses(inner, frames, out),
        SExpr::List(items) => {
            for i in items {
                value_uses(i, frames, out);
            }
        }
        SExpr::Dict(entries) => {
            for (_, v) in entries {
                value_uses(v, frames, out);
            }
        }
        SExpr::FreeCall { name, args, .. } => {
            if name != "read_csv" {
                let mut mentioned = BTreeSet::new();
                for a in args {
                    mentioned_frames(a, frames, &mut mentioned);
                }
                for f in mentioned {
                    out.add_tau(&f);
                }
            }
        }
        SExpr::Var(_) | SExpr::Int(_) | SExpr::Float(_) | SExpr::Str(_) | SExpr::Bool(_)
        | SExpr::Null => {}
    }
}

/// Uses when the whole result of a frame-valued expression is consumed
/// (printed, passed outside): everything `value_uses` reads, plus the
/// columns that make up the result itself.
fn whole_uses(e: &SExpr, frames: &BTreeSet<String>, out: &mut LiveSet) {
    if !frame_valued(e, frames) {
        value_uses(e, frames, out);
        return;
    }
    match e {
        SExpr::Var(v) => out.add_tau(v),
        SExpr::Index { base, index } => match index {
            Index::Pred(p) => {
                value_uses(p, frames, out);
                whole_uses(base, frames, out);
            }
            Index::Col(c) => {
                attach_cols(base, &[c.clone()], frames, out);
                value_uses(base, frames, out);
            }
            Index::Cols(cs) => {
                attach_cols(base, cs, frames, out);
                value_uses(base, frames, out);
            }
        },
        SExpr::Attr { base, name } => {
            attach_cols(base, &[name.clone()], frames, out);
            value_uses(base, frames, out);
        }
        SExpr::DtDayOfWeek(base) => whole_uses(base, frames, out),
        SExpr::Method { base, name, .. } => match name.as_str() {
            "sum" | "mean" | "max" | "min" | "count" if is_grouped(base) => {
                // grouped aggregate: result columns are keys plus the
                // aggregated column, all generated by value_uses
                value_uses(e, frames, out);
            }
            "head" | "sort_values" | "astype" | "fillna" | "round" | "abs"
            | "drop_duplicates" | "compute" | "drop" | "explode" => {
                value_uses(e, frames, out);
                whole_uses(base, frames, out);
            }
            _ => {
                // rename/merge/unknown: column names of the result are not
                // the input's names; take every mentioned frame wholly
                value_uses(e, frames, out);
                let mut mentioned = BTreeSet::new();
                mentioned_frames(e, frames, &mut mentioned);
                for f in mentioned {
                    out.add_tau(&f);
                }
            }
        },
        _ => {
            value_uses(e, frames, out);
        }
    }
}

/// How a frame assignment's remaining liveness maps back onto its sources.
#[derive(Debug, Clone)]
enum Lineage {
    None,
    /// columns keep their names on this root
    Identity(String),
    /// result is exactly these columns of the root
    Project(String, Vec<String>),
    /// new-name side of a rename; unlisted columns keep their names
    Rename(String, Vec<(String, String)>),
    /// merge of two roots with suffixed collisions
    Merge(String, String),
    /// names don't survive: any liveness makes these roots wholly live
    Tau(Vec<String>),
}

fn lineage_of(e: &SExpr, frames: &BTreeSet<String>) -> Lineage {
    if !frame_valued(e, frames) {
        return Lineage::None;
    }
    let tau_fallback = |e: &SExpr| {
        let mut mentioned = BTreeSet::new();
        mentioned_frames(e, frames, &mut mentioned);
        if mentioned.is_empty() {
            Lineage::None
        } else {
            Lineage::Tau(mentioned.into_iter().collect())
        }
    };
    match e {
        SExpr::Var(v) if frames.contains(v) => Lineage::Identity(v.clone()),
        SExpr::FreeCall { name, .. } if name == "read_csv" => Lineage::None,
        SExpr::Index { base, index } => match index {
            Index::Pred(_) => lineage_of(base, frames),
            Index::Col(c) => match identity_root(base, frames) {
                Some(root) => Lineage::Project(root, vec![c.clone()]),
                None => tau_fallback(e),
            },
            Index::Cols(cs) => match identity_root(base, frames) {
                Some(root) => Lineage::Project(root, cs.clone()),
                None => tau_fallback(e),
            },
        },
        SExpr::Attr { base, name } => match identity_root(base, frames) {
            Some(root) => Lineage::Project(root, vec![name.clone()]),
            None => tau_fallback(e),
        },
        SExpr::DtDayOfWeek(base) => lineage_of(base, frames),
        SExpr::Method {
            base,
            name,
            args,
            kwargs,
        } => match name.as_str() {
            "sum" | "mean" | "max" | "min" | "count" => Lineage::None, // grouped chains are fully generated
            "head" | "sort_values" | "astype" | "fillna" | "round" | "abs"
            | "drop_duplicates" | "explode" | "drop" | "compute" => lineage_of(base, frames),
            "rename" => match identity_root(base, frames) {
                Some(root) => {
                    let map = match SExpr::kwarg(kwargs, "columns") {
                        Some(SExpr::Dict(entries)) => entries
                            .iter()
                            .filter_map(|(old, new)| match new {
                                SExpr::Str(n) => Some((old.clone(), n.clone())),
                                _ => None,
                            })
                            .collect(),
                        _ => Vec::new(),
                    };
                    Lineage::Rename(root, map)
                }
                None => tau_fallback(e),
            },
            "merge" => {
                let left = identity_root(base, frames);
                let right = args.first().and_then(|a| identity_root(a, frames));
                match (left, right) {
                    (Some(l), Some(r)) => Lineage::Merge(l, r),
                    _ => tau_fallback(e),
                }
            }
            "groupby" => Lineage::None,
            _ => tau_fallback(e),
        },
        SExpr::Bin { .. } | SExpr::Not(_) | SExpr::Neg(_) => Lineage::None, // series arithmetic: operand columns are generated
        _ => Lineage::None,
    }
}

fn apply_lineage(lineage: &Lineage, lv: &FrameLive, out: &mut LiveSet) {
    if !lv.tau && lv.cols.is_empty() {
        return;
    }
    match lineage {
        Lineage::None => {}
        Lineage::Identity(r) => {
            if lv.tau {
                out.add_tau(r);
            }
            for c in &lv.cols {
                out.add_col(r, c);
            }
        }
        Lineage::Project(r, cols) => {
            if lv.tau {
                for c in cols {
                    out.add_col(r, c);
                }
            }
            for c in &lv.cols {
                out.add_col(r, c);
            }
        }
        Lineage::Rename(r, map) => {
            if lv.tau {
                out.add_tau(r);
            }
            for c in &lv.cols {
                match map.iter().find(|(_, new)| new == c) {
                    Some((old, _)) => out.add_col(r, old),
                    None => out.add_col(r, c),
                }
            }
        }
        Lineage::Merge(l, r) => {
            if lv.tau {
                out.add_tau(l);
                out.add_tau(r);
            }
            for c in &lv.cols {
                if let Some(stem) = c.strip_suffix("_x") {
                    out.add_col(l, stem);
                }
                if let Some(stem) = c.strip_suffix("_y") {
                    out.add_col(r, stem);
                }
                out.add_col(l, c);
                out.add_col(r, c);
            }
        }
        Lineage::Tau(roots) => {
            for root in roots {
                out.add_tau(root);
            }
        }
    }
}

/// Backward transfer of one statement: from liveness after it to liveness
/// before it.
pub fn stmt_transfer(s: &Stmt, frames: &BTreeSet<String>, out_set: &LiveSet) -> LiveSet {
    match &s.kind {
        StmtKind::Assign { var, expr } => {
            let lv = out_set.frame(var).cloned().unwrap_or_default();
            let mut in_set = out_set.clone();
            in_set.remove_frame(var);
            value_uses(expr, frames, &mut in_set);
            apply_lineage(&lineage_of(expr, frames), &lv, &mut in_set);
            in_set
        }
        StmtKind::SetColumn { var, col, expr } => {
            let mut in_set = out_set.clone();
            in_set.remove_col(var, col);
            value_uses(expr, frames, &mut in_set);
            in_set
        }
        StmtKind::Print(arg) => {
            let mut in_set = out_set.clone();
            match arg {
                // previews contribute nothing: narrowing under a bare
                // head-print is the accepted trade
                PrintArg::Expr(SExpr::Method { name, .. }) if name == "head" => {}
                PrintArg::Expr(e) => whole_uses(e, frames, &mut in_set),
                PrintArg::FString(pieces) => {
                    for p in pieces {
                        if let FPiece::Var(v) = p {
                            if frames.contains(v) {
                                in_set.add_tau(v);
                            }
                        }
                    }
                }
            }
            in_set
        }
        StmtKind::ExtCall { args, .. } => {
            let mut in_set = out_set.clone();
            for a in args {
                whole_uses(a, frames, &mut in_set);
            }
            in_set
        }
        StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => {
            let mut in_set = out_set.clone();
            whole_uses(cond, frames, &mut in_set);
            in_set
        }
        StmtKind::Flush | StmtKind::EnableLazyPrint => out_set.clone(),
    }
}

/// Attributes a statement writes (whole frame for assignments, one column
/// for column stores).
pub fn stmt_kill(s: &Stmt) -> LiveSet {
    let mut k = LiveSet::default();
    match &s.kind {
        StmtKind::Assign { var, .. } => k.add_tau(var),
        StmtKind::SetColumn { var, col, .. } => k.add_col(var, col),
        _ => {}
    }
    k
}

#[derive(Debug, Clone, Default)]
pub struct Block {
    pub id: usize,
    /// statement ids (program pre-order) in execution order
    pub stmts: Vec<StmtId>,
    pub succs: Vec<usize>,
    pub preds: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Cfg {
    pub blocks: Vec<Block>,
    pub entry: usize,
    pub exit: usize,
}

struct CfgBuilder {
    blocks: Vec<Block>,
}

impl CfgBuilder {
    fn new_block(&mut self) -> usize {
        let id = self.blocks.len();
        self.blocks.push(Block {
            id,
            ..Block::default()
        });
        id
    }

    fn edge(&mut self, from: usize, to: usize) {
        if !self.blocks[from].succs.contains(&to) {
            self.blocks[from].succs.push(to);
        }
        if !self.blocks[to].preds.contains(&from) {
            self.blocks[to].preds.push(from);
        }
    }

    /// Lay out a statement sequence starting in `cur`; returns the block
    /// where control ends up.
    fn seq(&mut self, stmts: &[Stmt], next_id: &mut StmtId, mut cur: usize) -> usize {
        for s in stmts {
            let id = *next_id;
            *next_id += 1;
            match &s.kind {
                StmtKind::If {
                    then_body,
                    else_body,
                    ..
                } => {
                    self.blocks[cur].stmts.push(id);
                    let then_start = self.new_block();
                    self.edge(cur, then_start);
                    let then_end = self.seq(then_body, next_id, then_start);
                    if else_body.is_empty() {
                        let join = self.new_block();
                        self.edge(cur, join);
                        self.edge(then_end, join);
                        cur = join;
                    } else {
                        let else_start = self.new_block();
                        self.edge(cur, else_start);
                        let else_end = self.seq(else_body, next_id, else_start);
                        let join = self.new_block();
                        self.edge(then_end, join);
                        self.edge(else_end, join);
                        cur = join;
                    }
                }
                StmtKind::While { body, .. } => {
                    let header = self.new_block();
                    self.edge(cur, header);
                    self.blocks[header].stmts.push(id);
                    let body_start = self.new_block();
                    self.edge(header, body_start);
                    let body_end = self.seq(body, next_id, body_start);
                    self.edge(body_end, header);
                    let after = self.new_block();
                    self.edge(header, after);
                    cur = after;
                }
                _ => {
                    self.blocks[cur].stmts.push(id);
                }
            }
        }
        cur
    }
}

/// Build the control-flow graph: a synthetic empty entry, maximal basic
/// blocks, branch diamonds for if/else, back edges for while, and a single
/// (possibly shared with the final join) empty exit block.
pub fn build_cfg(p: &ScriptProgram) -> Cfg {
    let mut b = CfgBuilder { blocks: Vec::new() };
    let entry = b.new_block();
    let mut next_id = 0;
    let first = b.new_block();
    b.edge(entry, first);
    let last = b.seq(&p.body, &mut next_id, first);
    let exit = if b.blocks[last].stmts.is_empty() && last != entry {
        last
    } else {
        let e = b.new_block();
        b.edge(last, e);
        e
    };
    Cfg {
        blocks: b.blocks,
        entry,
        exit,
    }
}

/// Statements in pre-order, indexed by the same ids the CFG uses.
pub fn collect_stmts(p: &ScriptProgram) -> Vec<&Stmt> {
    let mut out = Vec::new();
    p.walk(&mut |_, s| out.push(s));
    out
}

#[derive(Debug, Clone)]
pub struct LivenessFact {
    pub block_in: Vec<LiveSet>,
    pub block_out: Vec<LiveSet>,
    pub block_gen: Vec<LiveSet>,
    pub block_kill: Vec<LiveSet>,
    /// liveness before each statement
    pub stmt_in: BTreeMap<StmtId, LiveSet>,
    /// liveness after each statement
    pub stmt_out: BTreeMap<StmtId, LiveSet>,
    pub iterations: usize,
    pub frames: BTreeSet<String>,
}

fn block_transfer(
    block: &Block,
    stmts: &[&Stmt],
    frames: &BTreeSet<String>,
    out_set: &LiveSet,
) -> LiveSet {
    let mut live = out_set.clone();
    for &id in block.stmts.iter().rev() {
        live = stmt_transfer(stmts[id], frames, &live);
    }
    live
}

/// Round-robin backward fixpoint. Per-statement facts are derived from the
/// block solution afterwards; Gen is recovered as In − (Out − Kill), which
/// the transfer functions guarantee is exact.
pub fn solve_liveness(p: &ScriptProgram, cfg: &Cfg) -> LivenessFact {
    let frames = frame_vars(p);
    let stmts = collect_stmts(p);
    let n = cfg.blocks.len();
    let mut block_in = vec![LiveSet::default(); n];
    let mut block_out = vec![LiveSet::default(); n];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut changed = false;
        for b in (0..n).rev() {
            let mut out_set = LiveSet::default();
            for &s in &cfg.blocks[b].succs {
                out_set.union_with(&block_in[s]);
            }
            let in_set = block_transfer(&cfg.blocks[b], &stmts, &frames, &out_set);
            if out_set != block_out[b] || in_set != block_in[b] {
                changed = true;
                block_out[b] = out_set;
                block_in[b] = in_set;
            }
        }
        if !changed {
            break;
        }
        // |blocks| passes move information at most one block per pass, plus
        // slack for the initial population and the final stable check
        assert!(
            iterations <= n * (attr_count(p) + 2) + 2,
            "liveness failed to converge"
        );
    }

    let mut stmt_in = BTreeMap::new();
    let mut stmt_out = BTreeMap::new();
    let mut block_gen = Vec::with_capacity(n);
    let mut block_kill = Vec::with_capacity(n);
    for b in 0..n {
        let mut live = block_out[b].clone();
        for &id in cfg.blocks[b].stmts.iter().rev() {
            stmt_out.insert(id, live.clone());
            live = stmt_transfer(stmts[id], &frames, &live);
            stmt_in.insert(id, live.clone());
        }
        let mut kill = LiveSet::default();
        for &id in &cfg.blocks[b].stmts {
            kill.union_with(&stmt_kill(stmts[id]));
        }
        block_gen.push(block_in[b].minus(&block_out[b].minus(&kill)));
        block_kill.push(kill);
    }
    LivenessFact {
        block_in,
        block_out,
        block_gen,
        block_kill,
        stmt_in,
        stmt_out,
        iterations,
        frames,
    }
}

/// Count of distinct attributes mentioned anywhere, an upper bound on the
/// lattice height per frame entry.
fn attr_count(p: &ScriptProgram) -> usize {
    let frames = frame_vars(p);
    let mut acc = LiveSet::default();
    p.walk(&mut |_, s| {
        acc.union_with(&stmt_transfer(s, &frames, &LiveSet::default()));
        acc.union_with(&stmt_kill(s));
    });
    acc.attrs().len() + frames.len() + 1
}

/// Local block summary: attributes the block reads before writing (the
/// out-independent part of its transfer) and attributes it writes.
pub fn gen_kill(block: &Block, stmts: &[&Stmt], frames: &BTreeSet<String>) -> (LiveSet, LiveSet) {
    let gen = block_transfer(block, stmts, frames, &LiveSet::default());
    let mut kill = LiveSet::default();
    for &id in &block.stmts {
        kill.union_with(&stmt_kill(stmts[id]));
    }
    (gen, kill)
}

/// Frame variables live after each statement: the frame-granularity
/// projection of the attribute analysis.
pub fn solve_live_frames(facts: &LivenessFact) -> BTreeMap<StmtId, BTreeSet<String>> {
    facts
        .stmt_out
        .iter()
        .map(|(id, live)| {
            let fs: BTreeSet<String> = live
                .live_frames()
                .into_iter()
                .filter(|f| facts.frames.contains(f))
                .collect();
            (*id, fs)
        })
        .collect()
}

/// Line-oriented dump of the per-block facts for golden tests.
pub fn dump_facts(cfg: &Cfg, facts: &LivenessFact) -> String {
    let mut out = String::new();
    for b in &cfg.blocks {
        let succs: Vec<String> = b.succs.iter().map(|s| s.to_string()).collect();
        let preds: Vec<String> = b.preds.iter().map(|s| s.to_string()).collect();
        let stmts: Vec<String> = b.stmts.iter().map(|s| s.to_string()).collect();
        out.push_str(&format!(
            "block {}: preds=[{}] succs=[{}] stmts=[{}]\n",
            b.id,
            preds.join(","),
            succs.join(","),
            stmts.join(",")
        ));
        out.push_str(&format!("  gen:  {}\n", facts.block_gen[b.id]));
        out.push_str(&format!("  kill: {}\n", facts.block_kill[b.id]));
        out.push_str(&format!("  in:   {}\n", facts.block_in[b.id]));
        out.push_str(&format!("  out:  {}\n", facts.block_out[b.id]));
        for &id in &b.stmts {
            out.push_str(&format!(
                "  stmt {id}: in={} out={}\n",
                facts.stmt_in[&id], facts.stmt_out[&id]
            ));
        }
    }
    out
}
