//! Shared test support: CSV fixture builders, a seeded random program
//! generator with per-variable schema tracking, and helpers that run a
//! program through the engine in a chosen configuration.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use lfp::cli::{apply_rewrites, PassSet};
use lfp::exec::{Backend, Session};
use lfp::frame::expr::BinOp;
use lfp::interp::{self, ExtRegistry};
use lfp::optimize::OptFlags;
use lfp::script::ast::{
    FPiece, Index, PrintArg, ScriptProgram, SExpr, Span, Stmt, StmtKind,
};
use lfp::script::emit::emit;
use lfp::script::parse::parse;
use lfp::Result;

pub fn write_file(dir: &Path, name: &str, content: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path.to_string_lossy().into_owned()
}

/// One engine configuration: backend, graph passes, source rewrites, and
/// whether reads consult metadata sidecars.
#[derive(Clone, Copy)]
pub struct RunConfig {
    pub stream: bool,
    pub chunk_rows: usize,
    pub mem_budget: Option<u64>,
    pub rewrites: bool,
    pub flags: OptFlags,
    pub use_meta: bool,
}

impl RunConfig {
    pub fn no_opt_eager() -> RunConfig {
        RunConfig {
            stream: false,
            chunk_rows: 0,
            mem_budget: None,
            rewrites: false,
            flags: OptFlags::none(),
            use_meta: false,
        }
    }

    pub fn full_opt_eager() -> RunConfig {
        RunConfig {
            stream: false,
            chunk_rows: 0,
            mem_budget: None,
            rewrites: true,
            flags: OptFlags::all(),
            use_meta: false,
        }
    }

    pub fn full_opt_stream(chunk_rows: usize) -> RunConfig {
        RunConfig {
            stream: true,
            chunk_rows,
            mem_budget: None,
            rewrites: true,
            flags: OptFlags::all(),
            use_meta: false,
        }
    }

    pub fn with_meta(mut self) -> RunConfig {
        self.use_meta = true;
        self
    }
}

/// Run a program under `cfg`, returning its stdout and the finished session
/// for statistics inspection.
pub fn run_config(p: &ScriptProgram, cfg: RunConfig) -> Result<(String, Session)> {
    let program = if cfg.rewrites {
        apply_rewrites(p, &PassSet::all(), &ExtRegistry::default())?
    } else {
        p.clone()
    };
    let backend = if cfg.stream {
        Backend::stream(cfg.chunk_rows, cfg.mem_budget)
    } else {
        Backend::eager()
    };
    let mut session = Session::new(backend, cfg.flags);
    session.use_meta = cfg.use_meta;
    interp::run_program(&program, &mut session)?;
    let out = session.take_output();
    Ok((out, session))
}

// ---------------------------------------------------------------------------
// random program generation

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ty {
    Int,
    Float,
    Text,
    Date,
    Bool,
}

#[derive(Debug, Clone)]
struct FrameInfo {
    name: String,
    cols: Vec<(String, Ty)>,
}

impl FrameInfo {
    fn ty_of(&self, col: &str) -> Option<Ty> {
        self.cols.iter().find(|(c, _)| c == col).map(|(_, t)| *t)
    }

    fn cols_of(&self, ty: Ty) -> Vec<String> {
        self.cols
            .iter()
            .filter(|(_, t)| *t == ty)
            .map(|(c, _)| c.clone())
            .collect()
    }

    fn numeric_cols(&self) -> Vec<(String, Ty)> {
        self.cols
            .iter()
            .filter(|(_, t)| matches!(t, Ty::Int | Ty::Float))
            .cloned()
            .collect()
    }
}

/// What the generated program must contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quota {
    /// at least one print somewhere
    Mixed,
    /// at least three prints and one external call
    PrintsAndExt,
}

pub struct Generated {
    pub program: ScriptProgram,
    pub source: String,
    pub prints: usize,
    pub ext_calls: usize,
    /// every CSV file the program reads
    pub files: Vec<String>,
}

fn sp() -> Span {
    Span::default()
}

fn stmt(kind: StmtKind) -> Stmt {
    Stmt { kind, span: sp() }
}

fn var(name: &str) -> SExpr {
    SExpr::Var(name.to_string())
}

fn s(text: &str) -> SExpr {
    SExpr::Str(text.to_string())
}

fn attr(base: SExpr, name: &str) -> SExpr {
    SExpr::Attr {
        base: Box::new(base),
        name: name.to_string(),
    }
}

fn method(base: SExpr, name: &str, args: Vec<SExpr>, kwargs: Vec<(String, SExpr)>) -> SExpr {
    SExpr::Method {
        base: Box::new(base),
        name: name.to_string(),
        args,
        kwargs,
    }
}

fn bin(op: BinOp, lhs: SExpr, rhs: SExpr) -> SExpr {
    SExpr::Bin {
        op,
        lhs: Box::new(lhs),
        rhs: Box::new(rhs),
    }
}

fn str_list(items: &[String]) -> SExpr {
    SExpr::List(items.iter().map(|c| s(c)).collect())
}

struct Gen {
    rng: ChaCha8Rng,
    stmts: Vec<Stmt>,
    count: usize,
    /// statement budget for the random section; quota statements fill the
    /// gap up to MAX_STMTS afterwards
    cap: usize,
    frames: Vec<FrameInfo>,
    scalars: Vec<(String, Ty)>,
    next_id: usize,
    prints: usize,
    ext_calls: usize,
    files: Vec<String>,
    used_cols: BTreeSet<String>,
}

const MAX_STMTS: usize = 12;
const GROUPS: [&str; 5] = ["ash", "briar", "cedar", "dune", "elm"];
const TAGS: [&str; 6] = ["red", "red;blue", "green", "blue;green;red", "amber", "solo"];

impl Gen {
    fn fresh(&mut self, prefix: &str) -> String {
        let n = self.next_id;
        self.next_id += 1;
        format!("{prefix}{n}")
    }

    fn fresh_col(&mut self) -> String {
        loop {
            let c = self.fresh("c");
            if self.used_cols.insert(c.clone()) {
                return c;
            }
        }
    }

    fn push(&mut self, kind: StmtKind) {
        self.stmts.push(stmt(kind));
        self.count += 1;
    }

    /// Write a fixture CSV and return (path, schema). Every file carries the
    /// shared merge keys `k` (int) and `g` (text), a `tag` list column, a
    /// timestamp, and a few numeric value columns.
    fn make_file(&mut self, dir: &Path, seed_tag: u64) -> (String, Vec<(String, Ty)>) {
        let idx = self.files.len();
        let n_floats = self.rng.gen_range(1..=2);
        let n_ints = self.rng.gen_range(1..=2);
        let mut cols: Vec<(String, Ty)> = vec![
            ("k".to_string(), Ty::Int),
            ("g".to_string(), Ty::Text),
            ("tag".to_string(), Ty::Text),
            ("ts".to_string(), Ty::Date),
        ];
        for i in 0..n_floats {
            cols.push((format!("f{i}"), Ty::Float));
        }
        for i in 0..n_ints {
            cols.push((format!("i{i}"), Ty::Int));
        }
        let rows = self.rng.gen_range(30..=160);
        let mut body = String::new();
        let header: Vec<&str> = cols.iter().map(|(c, _)| c.as_str()).collect();
        body.push_str(&header.join(","));
        body.push('\n');
        for r in 0..rows {
            let mut cells: Vec<String> = Vec::with_capacity(cols.len());
            for (name, ty) in &cols {
                let cell = match (name.as_str(), ty) {
                    ("k", _) => self.rng.gen_range(0..8).to_string(),
                    ("g", _) => GROUPS[self.rng.gen_range(0..GROUPS.len())].to_string(),
                    ("tag", _) => TAGS[self.rng.gen_range(0..TAGS.len())].to_string(),
                    ("ts", _) => format!(
                        "2020-01-{:02} {:02}:00:00",
                        self.rng.gen_range(1..=28),
                        self.rng.gen_range(0..24)
                    ),
                    (_, Ty::Float) => {
                        if self.rng.gen_bool(0.08) {
                            String::new()
                        } else {
                            format!("{:.1}", self.rng.gen_range(-40..400) as f64 / 4.0)
                        }
                    }
                    (_, Ty::Int) => {
                        if self.rng.gen_bool(0.08) {
                            String::new()
                        } else {
                            self.rng.gen_range(-20..60).to_string()
                        }
                    }
                    _ => String::new(),
                };
                cells.push(cell);
            }
            body.push_str(&cells.join(","));
            body.push('\n');
            let _ = r;
        }
        let path = write_file(dir, &format!("gen_{seed_tag}_{idx}.csv"), &body);
        self.files.push(path.clone());
        (path, cols)
    }

    fn add_read(&mut self, dir: &Path, seed_tag: u64) {
        let (path, mut cols) = self.make_file(dir, seed_tag);
        let parse_ts = self.rng.gen_bool(0.7);
        if !parse_ts {
            for (c, t) in cols.iter_mut() {
                if c == "ts" {
                    *t = Ty::Text;
                }
            }
        }
        let name = self.fresh("df");
        let mut kwargs = Vec::new();
        if parse_ts {
            kwargs.push(("parse_dates".to_string(), str_list(&["ts".to_string()])));
        }
        self.push(StmtKind::Assign {
            var: name.clone(),
            expr: SExpr::FreeCall {
                name: "read_csv".to_string(),
                args: vec![s(&path)],
                kwargs,
            },
        });
        for (c, _) in &cols {
            self.used_cols.insert(c.clone());
        }
        self.frames.push(FrameInfo { name, cols });
    }

    fn frame_idx(&mut self) -> usize {
        self.rng.gen_range(0..self.frames.len())
    }

    /// A numeric literal matching `ty`, in the range fixture values use.
    /// Negative values take the parser's shape: a negated positive literal.
    fn lit_for(&mut self, ty: Ty) -> SExpr {
        match ty {
            Ty::Int => {
                let v = self.rng.gen_range(-5..40i64);
                if v < 0 {
                    SExpr::Neg(Box::new(SExpr::Int(-v)))
                } else {
                    SExpr::Int(v)
                }
            }
            _ => {
                let v = self.rng.gen_range(-20..160) as f64 / 2.0;
                if v < 0.0 {
                    SExpr::Neg(Box::new(SExpr::Float(-v)))
                } else {
                    SExpr::Float(v)
                }
            }
        }
    }

    fn cmp_op(&mut self) -> BinOp {
        *[
            BinOp::Gt,
            BinOp::Ge,
            BinOp::Lt,
            BinOp::Le,
            BinOp::Eq,
            BinOp::Ne,
        ]
        .choose(&mut self.rng)
        .unwrap()
    }

    /// Predicate over one frame's columns: comparison, conjunction, bool
    /// column, occasionally an inline aggregate bound.
    fn predicate(&mut self, fi: usize) -> Option<SExpr> {
        let f = self.frames[fi].clone();
        let nums = f.numeric_cols();
        if nums.is_empty() {
            return None;
        }
        let (c1, t1) = nums[self.rng.gen_range(0..nums.len())].clone();
        let base = var(&f.name);
        let simple = {
            let op = self.cmp_op();
            let lit = self.lit_for(t1);
            bin(op, attr(base.clone(), &c1), lit)
        };
        let choice = self.rng.gen_range(0..10);
        Some(match choice {
            0..=4 => simple,
            5 | 6 => {
                let (c2, t2) = nums[self.rng.gen_range(0..nums.len())].clone();
                let op2 = self.cmp_op();
                let lit2 = self.lit_for(t2);
                let rhs = bin(op2, attr(base.clone(), &c2), lit2);
                let conn = if self.rng.gen_bool(0.5) {
                    BinOp::And
                } else {
                    BinOp::Or
                };
                bin(conn, simple, rhs)
            }
            7 => {
                let bools = f.cols_of(Ty::Bool);
                match bools.first() {
                    Some(b) => attr(base, b),
                    None => simple,
                }
            }
            _ => {
                // column against a fraction of its own mean
                let agg = method(attr(base.clone(), &c1), "mean", vec![], vec![]);
                bin(
                    BinOp::Gt,
                    attr(base, &c1),
                    bin(BinOp::Mul, agg, SExpr::Float(0.5)),
                )
            }
        })
    }

    fn assign_frame(&mut self, expr: SExpr, cols: Vec<(String, Ty)>, reuse: Option<String>) {
        let name = match reuse {
            Some(n) => n,
            None => self.fresh("t"),
        };
        self.push(StmtKind::Assign {
            var: name.clone(),
            expr,
        });
        match self.frames.iter_mut().find(|f| f.name == name) {
            Some(f) => f.cols = cols,
            None => self.frames.push(FrameInfo { name, cols }),
        }
    }

    fn target_name(&mut self, fi: usize) -> Option<String> {
        if self.rng.gen_bool(0.3) {
            Some(self.frames[fi].name.clone())
        } else {
            None
        }
    }

    /// One random frame-producing statement; returns false when the chosen
    /// op has no valid inputs this time.
    fn frame_op(&mut self) -> bool {
        let fi = self.frame_idx();
        let f = self.frames[fi].clone();
        let base = var(&f.name);
        match self.rng.gen_range(0..16) {
            0 => {
                // filter
                let Some(pred) = self.predicate(fi) else {
                    return false;
                };
                let reuse = self.target_name(fi);
                self.assign_frame(
                    SExpr::Index {
                        base: Box::new(base),
                        index: Index::Pred(Box::new(pred)),
                    },
                    f.cols.clone(),
                    reuse,
                );
                true
            }
            1 => {
                // set_column: arithmetic, dayofweek, comparison, or centering
                let nums = f.numeric_cols();
                if nums.is_empty() {
                    return false;
                }
                let (c1, t1) = nums[self.rng.gen_range(0..nums.len())].clone();
                let col_ref = attr(base.clone(), &c1);
                let (expr, ty) = match self.rng.gen_range(0..5) {
                    0 => {
                        let dates = f.cols_of(Ty::Date);
                        match dates.first() {
                            Some(d) => (
                                SExpr::DtDayOfWeek(Box::new(attr(base.clone(), d))),
                                Ty::Int,
                            ),
                            None => (
                                bin(BinOp::Add, col_ref, self.lit_for(t1)),
                                t1,
                            ),
                        }
                    }
                    1 => {
                        let op = self.cmp_op();
                        let lit = self.lit_for(t1);
                        (bin(op, col_ref, lit), Ty::Bool)
                    }
                    2 => {
                        let agg = method(col_ref.clone(), "mean", vec![], vec![]);
                        (bin(BinOp::Sub, col_ref, agg), Ty::Float)
                    }
                    3 => {
                        let (c2, t2) = nums[self.rng.gen_range(0..nums.len())].clone();
                        let out_ty = if t1 == Ty::Float || t2 == Ty::Float {
                            Ty::Float
                        } else {
                            Ty::Int
                        };
                        let op = *[BinOp::Add, BinOp::Sub, BinOp::Mul]
                            .choose(&mut self.rng)
                            .unwrap();
                        (bin(op, col_ref, attr(base.clone(), &c2)), out_ty)
                    }
                    _ => {
                        let lit = self.lit_for(t1);
                        let op = *[BinOp::Add, BinOp::Sub, BinOp::Mul]
                            .choose(&mut self.rng)
                            .unwrap();
                        (bin(op, col_ref, lit), t1)
                    }
                };
                let col = if self.rng.gen_bool(0.3) && !f.cols.is_empty() {
                    // overwrite a numeric column
                    match nums.choose(&mut self.rng) {
                        Some((c, _)) => c.clone(),
                        None => self.fresh_col(),
                    }
                } else {
                    self.fresh_col()
                };
                self.push(StmtKind::SetColumn {
                    var: f.name.clone(),
                    col: col.clone(),
                    expr,
                });
                let fi_mut = self.frames.iter_mut().find(|x| x.name == f.name).unwrap();
                match fi_mut.cols.iter_mut().find(|(c, _)| c == &col) {
                    Some((_, t)) => *t = ty,
                    None => fi_mut.cols.push((col, ty)),
                }
                true
            }
            2 => {
                // column subset
                if f.cols.len() < 2 {
                    return false;
                }
                let keep = self.rng.gen_range(1..f.cols.len());
                let mut chosen = f.cols.clone();
                chosen.shuffle(&mut self.rng);
                chosen.truncate(keep);
                // keep original order
                let ordered: Vec<(String, Ty)> = f
                    .cols
                    .iter()
                    .filter(|(c, _)| chosen.iter().any(|(n, _)| n == c))
                    .cloned()
                    .collect();
                let names: Vec<String> = ordered.iter().map(|(c, _)| c.clone()).collect();
                let reuse = self.target_name(fi);
                self.assign_frame(
                    SExpr::Index {
                        base: Box::new(base),
                        index: Index::Cols(names),
                    },
                    ordered,
                    reuse,
                );
                true
            }
            3 => {
                // drop 1-2 columns, never below one survivor
                if f.cols.len() < 3 {
                    return false;
                }
                let n = self.rng.gen_range(1..=2.min(f.cols.len() - 1));
                let mut pool = f.cols.clone();
                pool.shuffle(&mut self.rng);
                let dropped: Vec<String> = pool[..n].iter().map(|(c, _)| c.clone()).collect();
                let kept: Vec<(String, Ty)> = f
                    .cols
                    .iter()
                    .filter(|(c, _)| !dropped.contains(c))
                    .cloned()
                    .collect();
                let reuse = self.target_name(fi);
                self.assign_frame(
                    method(
                        base,
                        "drop",
                        vec![],
                        vec![("columns".to_string(), str_list(&dropped))],
                    ),
                    kept,
                    reuse,
                );
                true
            }
            4 => {
                // rename one column
                let (old, ty) = f.cols[self.rng.gen_range(0..f.cols.len())].clone();
                let new = self.fresh_col();
                let cols: Vec<(String, Ty)> = f
                    .cols
                    .iter()
                    .map(|(c, t)| {
                        if c == &old {
                            (new.clone(), ty)
                        } else {
                            (c.clone(), *t)
                        }
                    })
                    .collect();
                let reuse = self.target_name(fi);
                self.assign_frame(
                    method(
                        base,
                        "rename",
                        vec![],
                        vec![(
                            "columns".to_string(),
                            SExpr::Dict(vec![(old, s(&new))]),
                        )],
                    ),
                    cols,
                    reuse,
                );
                true
            }
            5 => {
                // widen an int column
                let ints: Vec<String> = f
                    .cols
                    .iter()
                    .filter(|(c, t)| *t == Ty::Int && c != "k")
                    .map(|(c, _)| c.clone())
                    .collect();
                let Some(c) = ints.choose(&mut self.rng).cloned() else {
                    return false;
                };
                let cols: Vec<(String, Ty)> = f
                    .cols
                    .iter()
                    .map(|(n, t)| {
                        if n == &c {
                            (n.clone(), Ty::Float)
                        } else {
                            (n.clone(), *t)
                        }
                    })
                    .collect();
                let reuse = self.target_name(fi);
                self.assign_frame(
                    method(
                        base,
                        "astype",
                        vec![SExpr::Dict(vec![(c, s("float64"))])],
                        vec![],
                    ),
                    cols,
                    reuse,
                );
                true
            }
            6 => {
                let value = if self.rng.gen_bool(0.5) {
                    SExpr::Int(0)
                } else {
                    SExpr::Float(1.5)
                };
                let reuse = self.target_name(fi);
                self.assign_frame(
                    method(base, "fillna", vec![value], vec![]),
                    f.cols.clone(),
                    reuse,
                );
                true
            }
            7 => {
                let d = self.rng.gen_range(0..3);
                let reuse = self.target_name(fi);
                self.assign_frame(
                    method(base, "round", vec![SExpr::Int(d)], vec![]),
                    f.cols.clone(),
                    reuse,
                );
                true
            }
            8 => {
                let reuse = self.target_name(fi);
                self.assign_frame(method(base, "abs", vec![], vec![]), f.cols.clone(), reuse);
                true
            }
            9 => {
                let kwargs = if self.rng.gen_bool(0.5) {
                    let keyish: Vec<String> = f
                        .cols
                        .iter()
                        .filter(|(c, _)| c == "g" || c == "k" || c == "tag")
                        .map(|(c, _)| c.clone())
                        .collect();
                    if keyish.is_empty() {
                        vec![]
                    } else {
                        vec![("subset".to_string(), str_list(&keyish[..1]))]
                    }
                } else {
                    vec![]
                };
                let reuse = self.target_name(fi);
                self.assign_frame(
                    method(base, "drop_duplicates", vec![], kwargs),
                    f.cols.clone(),
                    reuse,
                );
                true
            }
            10 => {
                // sort by 1-2 sortable columns
                let sortable: Vec<String> = f
                    .cols
                    .iter()
                    .filter(|(_, t)| matches!(t, Ty::Int | Ty::Float | Ty::Text | Ty::Date))
                    .map(|(c, _)| c.clone())
                    .collect();
                if sortable.is_empty() {
                    return false;
                }
                let n = self.rng.gen_range(1..=2.min(sortable.len()));
                let mut by = sortable;
                by.shuffle(&mut self.rng);
                by.truncate(n);
                let asc = self.rng.gen_bool(0.5);
                let kwargs = if asc {
                    vec![]
                } else {
                    vec![("ascending".to_string(), SExpr::Bool(false))]
                };
                let reuse = self.target_name(fi);
                self.assign_frame(
                    method(base, "sort_values", vec![str_list(&by)], kwargs),
                    f.cols.clone(),
                    reuse,
                );
                true
            }
            11 => {
                let n = self.rng.gen_range(1..=8);
                let reuse = self.target_name(fi);
                self.assign_frame(
                    method(base, "head", vec![SExpr::Int(n)], vec![]),
                    f.cols.clone(),
                    reuse,
                );
                true
            }
            12 => {
                // explode the tag list column when it survived this far
                if f.ty_of("tag") != Some(Ty::Text) {
                    return false;
                }
                let reuse = self.target_name(fi);
                self.assign_frame(
                    method(base, "explode", vec![s("tag")], vec![]),
                    f.cols.clone(),
                    reuse,
                );
                true
            }
            13 => {
                // merge on a shared key present in both frames
                let fj = self.frame_idx();
                let other = self.frames[fj].clone();
                let key = ["k", "g"]
                    .iter()
                    .find(|k| {
                        f.ty_of(k).is_some()
                            && f.ty_of(k) == other.ty_of(k)
                            && matches!(f.ty_of(k), Some(Ty::Int) | Some(Ty::Text))
                    })
                    .map(|k| k.to_string());
                let Some(key) = key else {
                    return false;
                };
                let how = *["inner", "left", "right", "outer"]
                    .choose(&mut self.rng)
                    .unwrap();
                let cols = merge_schema(&f.cols, &other.cols, &key);
                self.assign_frame(
                    method(
                        base,
                        "merge",
                        vec![var(&other.name)],
                        vec![
                            ("on".to_string(), str_list(&[key])),
                            ("how".to_string(), s(how)),
                        ],
                    ),
                    cols,
                    None,
                );
                true
            }
            14 => {
                // grouped aggregate
                let keys: Vec<String> = f
                    .cols
                    .iter()
                    .filter(|(c, t)| {
                        (c == "g" || c == "k" || c == "tag") && matches!(t, Ty::Int | Ty::Text)
                    })
                    .map(|(c, _)| c.clone())
                    .collect();
                let nums: Vec<(String, Ty)> = f
                    .numeric_cols()
                    .into_iter()
                    .filter(|(c, _)| !keys.contains(c))
                    .collect();
                let (Some(key), false) = (keys.choose(&mut self.rng).cloned(), nums.is_empty())
                else {
                    return false;
                };
                let (vc, vt) = nums[self.rng.gen_range(0..nums.len())].clone();
                let (op, out_ty) = self.agg_op(vt);
                let gb = method(base, "groupby", vec![str_list(&[key.clone()])], vec![]);
                let picked = SExpr::Index {
                    base: Box::new(gb),
                    index: Index::Col(vc.clone()),
                };
                let key_ty = f.ty_of(&key).unwrap();
                self.assign_frame(
                    method(picked, op, vec![], vec![]),
                    vec![(key, key_ty), (vc, out_ty)],
                    None,
                );
                true
            }
            _ => {
                // single-column frame
                let (c, t) = f.cols[self.rng.gen_range(0..f.cols.len())].clone();
                let reuse = self.target_name(fi);
                self.assign_frame(
                    SExpr::Index {
                        base: Box::new(base),
                        index: Index::Col(c.clone()),
                    },
                    vec![(c, t)],
                    reuse,
                );
                true
            }
        }
    }

    fn agg_op(&mut self, input: Ty) -> (&'static str, Ty) {
        match self.rng.gen_range(0..5) {
            0 => ("sum", input),
            1 => ("mean", Ty::Float),
            2 => ("max", input),
            3 => ("min", input),
            _ => ("count", Ty::Int),
        }
    }

    fn scalar_op(&mut self) -> bool {
        if self.rng.gen_bool(0.5) || self.scalars.is_empty() {
            // aggregate a numeric column
            let fi = self.frame_idx();
            let f = self.frames[fi].clone();
            let nums = f.numeric_cols();
            if nums.is_empty() {
                return false;
            }
            let (c, t) = nums[self.rng.gen_range(0..nums.len())].clone();
            let (op, ty) = self.agg_op(t);
            let name = self.fresh("s");
            self.push(StmtKind::Assign {
                var: name.clone(),
                expr: method(attr(var(&f.name), &c), op, vec![], vec![]),
            });
            self.scalars.push((name, ty));
        } else {
            // arithmetic over an existing scalar
            let (src, ty) = self.scalars[self.rng.gen_range(0..self.scalars.len())].clone();
            // lit_for matches the source type, so the result keeps it
            let lit = self.lit_for(ty);
            let op = *[BinOp::Add, BinOp::Sub, BinOp::Mul]
                .choose(&mut self.rng)
                .unwrap();
            let name = self.fresh("s");
            self.push(StmtKind::Assign {
                var: name.clone(),
                expr: bin(op, var(&src), lit),
            });
            self.scalars.push((name, ty));
        }
        true
    }

    fn print_stmt(&mut self) {
        let arg = match self.rng.gen_range(0..6) {
            0 | 1 => {
                let fi = self.frame_idx();
                PrintArg::Expr(var(&self.frames[fi].name))
            }
            2 if !self.scalars.is_empty() => {
                let (sv, _) = self.scalars[self.rng.gen_range(0..self.scalars.len())].clone();
                PrintArg::Expr(var(&sv))
            }
            3 => {
                let mut pieces = vec![FPiece::Text("value of ".to_string())];
                if let Some((sv, _)) = self.scalars.last() {
                    pieces.push(FPiece::Var(sv.clone()));
                } else {
                    let fi = self.frame_idx();
                    pieces.push(FPiece::Var(self.frames[fi].name.clone()));
                }
                pieces.push(FPiece::Text(" here".to_string()));
                PrintArg::FString(pieces)
            }
            4 => {
                let fi = self.frame_idx();
                PrintArg::FString(vec![
                    FPiece::Text("frame ".to_string()),
                    FPiece::Var(self.frames[fi].name.clone()),
                ])
            }
            _ => PrintArg::Expr(s("checkpoint")),
        };
        self.push(StmtKind::Print(arg));
        self.prints += 1;
    }

    fn ext_stmt(&mut self) {
        let func = *["save", "plot", "log"].choose(&mut self.rng).unwrap();
        let mut args: Vec<SExpr> = Vec::new();
        match self.rng.gen_range(0..3) {
            0 => {
                let fi = self.frame_idx();
                args.push(var(&self.frames[fi].name));
            }
            1 if !self.scalars.is_empty() => {
                let (sv, _) = self.scalars[self.rng.gen_range(0..self.scalars.len())].clone();
                args.push(var(&sv));
            }
            _ => args.push(s("note")),
        }
        if self.rng.gen_bool(0.4) {
            args.push(s("out.bin"));
        }
        self.push(StmtKind::ExtCall {
            module: "ext".to_string(),
            func: func.to_string(),
            args,
        });
        self.ext_calls += 1;
    }

    /// `i = 0; while i < n: i = i + 1; <one op>` in three statements plus
    /// the body op.
    fn loop_stmt(&mut self) -> bool {
        if self.count + 4 > self.cap {
            return false;
        }
        let iv = self.fresh("i");
        self.push(StmtKind::Assign {
            var: iv.clone(),
            expr: SExpr::Int(0),
        });
        let n = self.rng.gen_range(1..=3);
        let body_print = self.rng.gen_bool(0.5);
        let mut body = vec![stmt(StmtKind::Assign {
            var: iv.clone(),
            expr: bin(BinOp::Add, var(&iv), SExpr::Int(1)),
        })];
        if body_print {
            body.push(stmt(StmtKind::Print(PrintArg::FString(vec![
                FPiece::Text("step ".to_string()),
                FPiece::Var(iv.clone()),
            ]))));
            self.prints += 1;
        }
        let body_len = body.len();
        self.stmts.push(stmt(StmtKind::While {
            cond: bin(BinOp::Lt, var(&iv), SExpr::Int(n)),
            body,
        }));
        self.count += 1 + body_len;
        self.scalars.push((iv, Ty::Int));
        true
    }

    fn if_stmt(&mut self) -> bool {
        if self.count + 3 > self.cap || self.scalars.is_empty() {
            return false;
        }
        let (sv, ty) = self.scalars[self.rng.gen_range(0..self.scalars.len())].clone();
        let lit = self.lit_for(ty);
        let cond = bin(self.cmp_op(), var(&sv), lit);
        let then_body = vec![stmt(StmtKind::Print(PrintArg::FString(vec![
            FPiece::Text("hi ".to_string()),
            FPiece::Var(sv.clone()),
        ])))];
        let else_body = if self.rng.gen_bool(0.5) {
            vec![stmt(StmtKind::Print(PrintArg::Expr(s("lo"))))]
        } else {
            vec![]
        };
        self.prints += 1 + usize::from(!else_body.is_empty());
        let extra = then_body.len() + else_body.len();
        self.stmts.push(stmt(StmtKind::If {
            cond,
            then_body,
            else_body,
        }));
        self.count += 1 + extra;
        true
    }
}

fn merge_schema(
    left: &[(String, Ty)],
    right: &[(String, Ty)],
    key: &str,
) -> Vec<(String, Ty)> {
    let rnames: BTreeSet<&str> = right.iter().map(|(c, _)| c.as_str()).collect();
    let lnames: BTreeSet<&str> = left.iter().map(|(c, _)| c.as_str()).collect();
    let mut out: Vec<(String, Ty)> = Vec::new();
    for (c, t) in left {
        if c == key {
            out.push((c.clone(), *t));
        } else if rnames.contains(c.as_str()) {
            out.push((format!("{c}_x"), *t));
        } else {
            out.push((c.clone(), *t));
        }
    }
    for (c, t) in right {
        if c == key {
            continue;
        }
        if lnames.contains(c.as_str()) {
            out.push((format!("{c}_y"), *t));
        } else {
            out.push((c.clone(), *t));
        }
    }
    out
}

/// Generate one random program with its fixture files under `dir`.
pub fn gen_program(seed: u64, dir: &Path, quota: Quota) -> Generated {
    let reserve = match quota {
        Quota::Mixed => 1,
        Quota::PrintsAndExt => 4,
    };
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        stmts: Vec::new(),
        count: 0,
        cap: MAX_STMTS - reserve,
        frames: Vec::new(),
        scalars: Vec::new(),
        next_id: 0,
        prints: 0,
        ext_calls: 0,
        files: Vec::new(),
        used_cols: BTreeSet::new(),
    };
    let reads = if g.rng.gen_bool(0.35) { 2 } else { 1 };
    for _ in 0..reads {
        g.add_read(dir, seed);
    }
    while g.count < g.cap {
        let done = match g.rng.gen_range(0..12) {
            0..=5 => g.frame_op(),
            6 | 7 => g.scalar_op(),
            8 => {
                g.print_stmt();
                true
            }
            9 => {
                g.ext_stmt();
                true
            }
            10 => g.loop_stmt(),
            _ => g.if_stmt(),
        };
        if !done {
            // fall back to something always available
            g.print_stmt();
        }
    }
    match quota {
        Quota::Mixed => {
            if g.prints == 0 {
                g.print_stmt();
            }
        }
        Quota::PrintsAndExt => {
            while g.prints < 3 && g.count < MAX_STMTS {
                g.print_stmt();
            }
            if g.ext_calls == 0 {
                g.ext_stmt();
            }
        }
    }
    assert!(g.count <= MAX_STMTS, "generator overshot (seed {seed})");
    let program = ScriptProgram { body: g.stmts };
    let source = emit(&program);
    // the emitted text must parse back to the same tree
    let reparsed = parse(&source).unwrap_or_else(|e| {
        panic!("generated program does not reparse (seed {seed}): {e}\n{source}")
    });
    assert_eq!(reparsed, program, "emit/parse disagreement (seed {seed})");
    Generated {
        program,
        source,
        prints: g.prints,
        ext_calls: g.ext_calls,
        files: g.files,
    }
}

/// Large deterministic numeric CSV: a bounded key column `k`, a unique `id`
/// column, and float columns. Returns total bytes written.
pub fn write_numeric_csv(path: &str, rows: usize, keys: u64, floats: usize) -> u64 {
    use std::io::Write;
    let f = std::fs::File::create(path).unwrap();
    let mut w = std::io::BufWriter::with_capacity(1 << 20, f);
    let mut header = String::from("k,id");
    for i in 0..floats {
        let _ = write!(header, ",f{i}");
    }
    header.push('\n');
    w.write_all(header.as_bytes()).unwrap();
    let mut state = 0x2545f4914f6cdd1du64;
    let mut line = String::with_capacity(64);
    for row in 0..rows {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        line.clear();
        let _ = write!(line, "{},{row}", state % keys);
        let mut v = state;
        for _ in 0..floats {
            v = v.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let _ = write!(line, ",{}.{}", (v >> 33) % 500, (v >> 20) % 100);
        }
        line.push('\n');
        w.write_all(line.as_bytes()).unwrap();
    }
    w.flush().unwrap();
    std::fs::metadata(path).unwrap().len()
}
