//! Script interpreter. Statements walk once, building task-graph nodes for
//! every frame and scalar expression; nothing runs until a print (in eager
//! print mode), a condition, an external call argument, an explicit
//! `.compute()`, or `flush()` forces a value out of the session.
//!
//! Bindings are symbolic: a variable holds a node id, a string, or a list of
//! strings. Rebinding a variable never touches nodes already built, so loops
//! grow chains of scalar nodes and conditions always re-evaluate fresh ones.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::exec::{render_frame, Session};
use crate::frame::csv::{self, ReadOptions};
use crate::frame::expr::{AggOp, Expr};
use crate::frame::{Dtype, Scalar};
use crate::frame::ops::JoinKind;
use crate::graph::{Action, PrintPiece, Value};
use crate::script::ast::{
    FPiece, Index, PrintArg, ScriptProgram, SExpr, Span, Stmt, StmtKind,
};

/// External modules the interpreter is allowed to call out to. Calls to
/// anything else are rejected before any argument is computed.
#[derive(Debug, Clone)]
pub struct ExtRegistry {
    modules: BTreeSet<String>,
}

impl Default for ExtRegistry {
    fn default() -> ExtRegistry {
        ExtRegistry {
            modules: std::iter::once("ext".to_string()).collect(),
        }
    }
}

impl ExtRegistry {
    pub fn with_modules<I: IntoIterator<Item = String>>(modules: I) -> ExtRegistry {
        ExtRegistry {
            modules: modules.into_iter().collect(),
        }
    }

    pub fn contains(&self, module: &str) -> bool {
        self.modules.contains(module)
    }
}

/// What a variable is bound to between statements.
#[derive(Debug, Clone)]
enum Binding {
    /// A task-graph node (frame- or scalar-valued).
    Node(u32),
    Str(String),
    StrList(Vec<String>),
}

/// How an expression will be lowered, decided syntactically (with the
/// environment consulted for variable references).
#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Frame,
    Scalar,
    Str,
    StrList,
    Dict,
}

/// Run a parsed program against a session using the default externals.
pub fn run_program(p: &ScriptProgram, session: &mut Session) -> Result<()> {
    run_with_registry(p, session, &ExtRegistry::default())
}

pub fn run_with_registry(
    p: &ScriptProgram,
    session: &mut Session,
    registry: &ExtRegistry,
) -> Result<()> {
    session.written_cols = written_columns(p);
    let mut it = Interp {
        session,
        registry,
        env: BTreeMap::new(),
        forced: BTreeMap::new(),
        lazy_print: false,
        span: Span::default(),
    };
    it.block(&p.body)?;
    it.session.flush()?;
    it.session.discard_persisted(&[]);
    Ok(())
}

/// Columns any statement in the program assigns with `v['c'] = ...`. These
/// are unsafe for metadata-driven dtype substitution, since the stored scan
/// describes the file, not the rewritten column.
pub fn written_columns(p: &ScriptProgram) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    p.walk(&mut |_, s| {
        if let StmtKind::SetColumn { col, .. } = &s.kind {
            out.insert(col.clone());
        }
    });
    out
}

/// Deterministic rendering of an external call, shared with the reference
/// interpreter: a `[module.func]` tag, then each argument (frames on their
/// own lines, scalars and text inline), ending in a newline.
pub fn render_ext(module: &str, func: &str, vals: &[Value]) -> String {
    let mut out = format!("[{module}.{func}]");
    for v in vals {
        match v {
            Value::Frame(f) => {
                out.push('\n');
                out.push_str(&render_frame(f));
            }
            Value::Scalar(s) => {
                out.push(' ');
                out.push_str(&s.render());
            }
            Value::Text(t) => {
                out.push(' ');
                out.push_str(t);
            }
        }
    }
    if !out.ends_with('\n') {
        out.push('\n');
    }
    out
}

pub fn render_str_list(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("'{s}'")).collect();
    format!("[{}]", quoted.join(", "))
}

fn truthy(s: &Scalar) -> bool {
    match s {
        Scalar::Null => false,
        Scalar::Int(v) => *v != 0,
        Scalar::Float(v) => *v != 0.0,
        Scalar::Bool(b) => *b,
        Scalar::Text(t) => !t.is_empty(),
        Scalar::Date(_) => true,
    }
}

fn agg_op_of(name: &str) -> Option<AggOp> {
    match name {
        "sum" => Some(AggOp::Sum),
        "mean" => Some(AggOp::Mean),
        "max" => Some(AggOp::Max),
        "min" => Some(AggOp::Min),
        "count" => Some(AggOp::Count),
        _ => None,
    }
}

struct Interp<'a> {
    session: &'a mut Session,
    registry: &'a ExtRegistry,
    env: BTreeMap<String, Binding>,
    /// Values already computed this run, keyed by node id. Nodes are
    /// immutable once added, so a cached value never goes stale.
    forced: BTreeMap<u32, Value>,
    lazy_print: bool,
    span: Span,
}

impl<'a> Interp<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Syntax {
            line: self.span.line,
            col: self.span.col,
            msg: msg.into(),
        }
    }

    fn block(&mut self, stmts: &[Stmt]) -> Result<()> {
        for s in stmts {
            self.stmt(s)?;
        }
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt) -> Result<()> {
        self.span = s.span;
        match &s.kind {
            StmtKind::Assign { var, expr } => {
                let b = self.eval(expr)?;
                self.env.insert(var.clone(), b);
            }
            StmtKind::SetColumn { var, col, expr } => {
                let base = self.frame_var(var)?;
                let mut tails = Vec::new();
                let ex = self.col_expr(expr, Some(var), &mut tails)?;
                let mut sources = vec![base];
                sources.extend(tails);
                let uid = self.session.add(
                    Action::SetCol {
                        col: col.clone(),
                        expr: ex,
                    },
                    sources,
                )?;
                self.env.insert(var.clone(), Binding::Node(uid));
            }
            StmtKind::Print(arg) => {
                let (pieces, values) = self.print_parts(arg)?;
                self.session.enqueue_print(pieces, values)?;
                if !self.lazy_print {
                    self.session.flush()?;
                }
            }
            StmtKind::ExtCall { module, func, args } => {
                if !self.registry.contains(module) {
                    return Err(Error::UnknownExternal(format!("{module}.{func}")));
                }
                // an external call is a synchronization point: everything
                // printed before it must reach stdout before its output.
                // Forcing an argument drains pending prints inside its own
                // compute; the flush afterward covers calls whose arguments
                // force nothing.
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.ext_arg(a)?);
                }
                self.session.flush()?;
                let text = render_ext(module, func, &vals);
                self.session.push_output(&text);
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                if self.cond(cond)? {
                    self.block(then_body)?;
                } else {
                    self.block(else_body)?;
                }
            }
            StmtKind::While { cond, body } => {
                while self.cond(cond)? {
                    self.block(body)?;
                }
            }
            StmtKind::Flush => self.session.flush()?,
            StmtKind::EnableLazyPrint => self.lazy_print = true,
        }
        Ok(())
    }

    /// Evaluate a condition, forcing whatever it needs.
    fn cond(&mut self, e: &SExpr) -> Result<bool> {
        match self.kind_of(e)? {
            Kind::Str => Ok(!self.eval_str(e)?.is_empty()),
            Kind::StrList => Ok(!self.eval_str_list(e)?.is_empty()),
            Kind::Scalar => {
                let uid = self.scalar_node(e)?;
                let v = self.force(uid, &[])?;
                Ok(truthy(v.as_scalar()?))
            }
            Kind::Frame => Err(self.err("condition is a frame, not a scalar")),
            Kind::Dict => Err(self.err("condition is a dict, not a scalar")),
        }
    }

    /// Compute a node's value, reusing anything forced earlier this run.
    fn force(&mut self, uid: u32, hints: &[u32]) -> Result<Value> {
        if let Some(v) = self.forced.get(&uid) {
            return Ok(v.clone());
        }
        let v = self.session.compute(uid, hints)?;
        self.forced.insert(uid, v.clone());
        Ok(v)
    }

    fn ext_arg(&mut self, e: &SExpr) -> Result<Value> {
        match self.kind_of(e)? {
            Kind::Str => Ok(Value::Text(std::rc::Rc::new(self.eval_str(e)?))),
            Kind::StrList => Ok(Value::Text(std::rc::Rc::new(render_str_list(
                &self.eval_str_list(e)?,
            )))),
            Kind::Frame => {
                let uid = self.frame_node(e)?;
                self.force(uid, &[])
            }
            Kind::Scalar => {
                let uid = self.scalar_node(e)?;
                self.force(uid, &[])
            }
            Kind::Dict => Err(self.err("dict cannot be passed to an external call")),
        }
    }

    fn print_parts(&mut self, arg: &PrintArg) -> Result<(Vec<PrintPiece>, Vec<u32>)> {
        let mut pieces = Vec::new();
        let mut values = Vec::new();
        match arg {
            PrintArg::Expr(e) => match self.kind_of(e)? {
                Kind::Str => pieces.push(PrintPiece::Text(self.eval_str(e)?)),
                Kind::StrList => {
                    pieces.push(PrintPiece::Text(render_str_list(&self.eval_str_list(e)?)))
                }
                Kind::Frame => {
                    values.push(self.frame_node(e)?);
                    pieces.push(PrintPiece::Slot(0));
                }
                Kind::Scalar => {
                    values.push(self.scalar_node(e)?);
                    pieces.push(PrintPiece::Slot(0));
                }
                Kind::Dict => return Err(self.err("cannot print a dict")),
            },
            PrintArg::FString(fp) => {
                for p in fp {
                    match p {
                        FPiece::Text(t) => pieces.push(PrintPiece::Text(t.clone())),
                        FPiece::Var(v) => match self.lookup(v)?.clone() {
                            Binding::Str(s) => pieces.push(PrintPiece::Text(s)),
                            Binding::StrList(l) => {
                                pieces.push(PrintPiece::Text(render_str_list(&l)))
                            }
                            Binding::Node(uid) => {
                                // interpolations ride along as escape markers
                                // resolved when the print node runs
                                pieces.push(PrintPiece::Text(format!("$_#{uid}$_#")));
                                values.push(uid);
                            }
                        },
                    }
                }
            }
        }
        Ok((pieces, values))
    }

    fn lookup(&self, v: &str) -> Result<&Binding> {
        self.env
            .get(v)
            .ok_or_else(|| self.err(format!("name '{v}' is not defined")))
    }

    fn frame_var(&self, v: &str) -> Result<u32> {
        match self.lookup(v)? {
            Binding::Node(uid) if !self.session.graph.node(*uid).action.is_scalar_valued() => {
                Ok(*uid)
            }
            Binding::Node(_) => Err(self.err(format!("'{v}' is a scalar, not a frame"))),
            _ => Err(self.err(format!("'{v}' is not a frame"))),
        }
    }

    fn kind_of(&self, e: &SExpr) -> Result<Kind> {
        Ok(match e {
            SExpr::Int(_) | SExpr::Float(_) | SExpr::Bool(_) | SExpr::Null => Kind::Scalar,
            SExpr::Str(_) => Kind::Str,
            SExpr::List(_) => Kind::StrList,
            SExpr::Dict(_) => Kind::Dict,
            SExpr::Var(v) => match self.lookup(v)? {
                Binding::Str(_) => Kind::Str,
                Binding::StrList(_) => Kind::StrList,
                Binding::Node(uid) => {
                    if self.session.graph.node(*uid).action.is_scalar_valued() {
                        Kind::Scalar
                    } else {
                        Kind::Frame
                    }
                }
            },
            SExpr::Attr { .. } | SExpr::DtDayOfWeek(_) | SExpr::Index { .. } => Kind::Frame,
            SExpr::FreeCall { name, .. } if name == "read_csv" => Kind::Frame,
            SExpr::FreeCall { name, .. } => {
                return Err(self.err(format!("unknown function '{name}'")))
            }
            SExpr::Method { base, name, .. } => {
                if agg_op_of(name).is_some() {
                    // groupby chains aggregate into frames; everything else
                    // aggregates into a scalar
                    if self.groupby_parts(base)?.is_some() {
                        Kind::Frame
                    } else {
                        Kind::Scalar
                    }
                } else if name == "compute" {
                    self.kind_of(base)?
                } else {
                    Kind::Frame
                }
            }
            SExpr::Bin { lhs, rhs, .. } => {
                if self.kind_of(lhs)? == Kind::Frame || self.kind_of(rhs)? == Kind::Frame {
                    Kind::Frame
                } else {
                    Kind::Scalar
                }
            }
            SExpr::Not(inner) | SExpr::Neg(inner) => self.kind_of(inner)?,
        })
    }

    fn eval(&mut self, e: &SExpr) -> Result<Binding> {
        Ok(match self.kind_of(e)? {
            Kind::Str => Binding::Str(self.eval_str(e)?),
            Kind::StrList => Binding::StrList(self.eval_str_list(e)?),
            Kind::Scalar => Binding::Node(self.scalar_node(e)?),
            Kind::Frame => Binding::Node(self.frame_node(e)?),
            Kind::Dict => return Err(self.err("a dict is not a value")),
        })
    }

    fn eval_str(&self, e: &SExpr) -> Result<String> {
        match e {
            SExpr::Str(s) => Ok(s.clone()),
            SExpr::Var(v) => match self.lookup(v)? {
                Binding::Str(s) => Ok(s.clone()),
                _ => Err(self.err(format!("'{v}' is not a string"))),
            },
            _ => Err(self.err("expected a string")),
        }
    }

    fn eval_str_list(&self, e: &SExpr) -> Result<Vec<String>> {
        match e {
            SExpr::Str(s) => Ok(vec![s.clone()]),
            SExpr::List(_) => e
                .as_str_list()
                .ok_or_else(|| self.err("expected a list of strings")),
            SExpr::Var(v) => match self.lookup(v)? {
                Binding::StrList(l) => Ok(l.clone()),
                Binding::Str(s) => Ok(vec![s.clone()]),
                _ => Err(self.err(format!("'{v}' is not a list of strings"))),
            },
            _ => Err(self.err("expected a list of strings")),
        }
    }

    fn lit_scalar(&self, e: &SExpr) -> Result<Scalar> {
        match e {
            SExpr::Int(v) => Ok(Scalar::Int(*v)),
            SExpr::Float(v) => Ok(Scalar::Float(*v)),
            SExpr::Bool(v) => Ok(Scalar::Bool(*v)),
            SExpr::Null => Ok(Scalar::Null),
            SExpr::Str(s) => Ok(Scalar::Text(s.clone())),
            SExpr::Neg(inner) => match self.lit_scalar(inner)? {
                Scalar::Int(v) => Ok(Scalar::Int(-v)),
                Scalar::Float(v) => Ok(Scalar::Float(-v)),
                _ => Err(self.err("cannot negate a non-numeric literal")),
            },
            _ => Err(self.err("expected a literal")),
        }
    }

    fn lit_int(&self, e: &SExpr) -> Result<i64> {
        match self.lit_scalar(e)? {
            Scalar::Int(v) => Ok(v),
            _ => Err(self.err("expected an integer literal")),
        }
    }

    fn lit_bool(&self, e: &SExpr) -> Result<bool> {
        match e {
            SExpr::Bool(b) => Ok(*b),
            _ => Err(self.err("expected a boolean literal")),
        }
    }

    fn dtype_map(&self, e: &SExpr) -> Result<Vec<(String, Dtype)>> {
        let SExpr::Dict(entries) = e else {
            return Err(self.err("expected a dict of column dtypes"));
        };
        entries
            .iter()
            .map(|(col, v)| {
                let SExpr::Str(name) = v else {
                    return Err(self.err(format!("dtype for '{col}' must be a string")));
                };
                Dtype::parse(name)
                    .map(|d| (col.clone(), d))
                    .ok_or_else(|| self.err(format!("unknown dtype '{name}'")))
            })
            .collect()
    }

    /// The frame variable a column expression may reference, if the binding
    /// exists and is frame-valued.
    fn is_frame_binding(&self, v: &str) -> bool {
        matches!(self.env.get(v), Some(Binding::Node(uid))
            if !self.session.graph.node(*uid).action.is_scalar_valued())
    }

    fn collect_frame_vars(&self, e: &SExpr, out: &mut BTreeSet<String>) {
        match e {
            SExpr::Var(v) => {
                if self.is_frame_binding(v) {
                    out.insert(v.clone());
                }
            }
            SExpr::Attr { base, .. } | SExpr::DtDayOfWeek(base) => {
                self.collect_frame_vars(base, out)
            }
            SExpr::Index { base, index } => {
                self.collect_frame_vars(base, out);
                if let Index::Pred(p) = index {
                    self.collect_frame_vars(p, out);
                }
            }
            SExpr::Method {
                base, args, kwargs, ..
            } => {
                self.collect_frame_vars(base, out);
                for a in args {
                    self.collect_frame_vars(a, out);
                }
                for (_, v) in kwargs {
                    self.collect_frame_vars(v, out);
                }
            }
            SExpr::Bin { lhs, rhs, .. } => {
                self.collect_frame_vars(lhs, out);
                self.collect_frame_vars(rhs, out);
            }
            SExpr::Not(inner) | SExpr::Neg(inner) => self.collect_frame_vars(inner, out),
            SExpr::List(items) => {
                for i in items {
                    self.collect_frame_vars(i, out);
                }
            }
            _ => {}
        }
    }

    /// Lower a frame-valued expression to a node.
    fn frame_node(&mut self, e: &SExpr) -> Result<u32> {
        match e {
            SExpr::Var(v) => self.frame_var(v),
            SExpr::FreeCall { name, args, kwargs } if name == "read_csv" => {
                self.read_node(args, kwargs)
            }
            SExpr::Index { base, index } => {
                let src = self.frame_node(base)?;
                match index {
                    Index::Col(c) => self
                        .session
                        .add(Action::GetCol { col: c.clone() }, vec![src]),
                    Index::Cols(cs) => self
                        .session
                        .add(Action::GetCols { cols: cs.clone() }, vec![src]),
                    Index::Pred(p) => {
                        let fv = base.base_var().map(str::to_string);
                        let mut tails = Vec::new();
                        let pred = self.col_expr(p, fv.as_deref(), &mut tails)?;
                        let mut sources = vec![src];
                        sources.extend(tails);
                        self.session.add(Action::Filter { pred }, sources)
                    }
                }
            }
            SExpr::Attr { base, name } => {
                let src = self.frame_node(base)?;
                self.session
                    .add(Action::GetCol { col: name.clone() }, vec![src])
            }
            SExpr::Method {
                base,
                name,
                args,
                kwargs,
            } => self.method_node(base, name, args, kwargs),
            // computed series: evaluate over the frame, then project it out
            SExpr::DtDayOfWeek(_) | SExpr::Bin { .. } | SExpr::Not(_) | SExpr::Neg(_) => {
                self.series_node(e)
            }
            _ => Err(self.err("expected a frame expression")),
        }
    }

    /// Lower a computed series (`df.a * 2`, `df.d.dt.dayofweek`) by setting
    /// a synthetic `value` column and projecting it, which is how the eager
    /// kernels name computed series too.
    fn series_node(&mut self, e: &SExpr) -> Result<u32> {
        let mut vars = BTreeSet::new();
        self.collect_frame_vars(e, &mut vars);
        if vars.len() != 1 {
            return Err(self.err(format!(
                "series expression must reference exactly one frame, found {}",
                vars.len()
            )));
        }
        let fv = vars.into_iter().next().unwrap();
        let src = self.frame_var(&fv)?;
        let mut tails = Vec::new();
        let ex = self.col_expr(e, Some(&fv), &mut tails)?;
        if let Expr::Col(c) = &ex {
            return self.session.add(Action::GetCol { col: c.clone() }, vec![src]);
        }
        let mut sources = vec![src];
        sources.extend(tails);
        let set = self.session.add(
            Action::SetCol {
                col: "value".to_string(),
                expr: ex,
            },
            sources,
        )?;
        self.session.add(
            Action::GetCol {
                col: "value".to_string(),
            },
            vec![set],
        )
    }

    fn read_node(&mut self, args: &[SExpr], kwargs: &[(String, SExpr)]) -> Result<u32> {
        let path = args
            .first()
            .ok_or_else(|| self.err("read_csv needs a path"))
            .and_then(|a| self.eval_str(a))?;
        let mut opts = ReadOptions::default();
        if let Some(u) = SExpr::kwarg(kwargs, "usecols") {
            opts.usecols = Some(self.eval_str_list(u)?);
        }
        if let Some(d) = SExpr::kwarg(kwargs, "dtype") {
            opts.dtypes = self.dtype_map(d)?.into_iter().collect();
        }
        if let Some(p) = SExpr::kwarg(kwargs, "parse_dates") {
            opts.parse_dates = self.eval_str_list(p)?.into_iter().collect();
        }
        let uid = self.session.add(Action::Read { path, opts }, vec![])?;
        // a schema hint lets column analysis see through the read; best
        // effort, the file may not exist until run time
        if let Action::Read { path, .. } = &self.session.graph.node(uid).action {
            let path = path.clone();
            if let Ok(header) = csv::read_header(&path) {
                self.session.graph.node_mut(uid).schema_hint =
                    Some(header.into_iter().collect());
            }
        }
        Ok(uid)
    }

    /// `df.groupby(keys)['col']` chains, the frame-valued aggregate form.
    fn groupby_parts<'e>(
        &self,
        e: &'e SExpr,
    ) -> Result<Option<(&'e SExpr, Vec<String>, String)>> {
        let SExpr::Index {
            base,
            index: Index::Col(c),
        } = e
        else {
            return Ok(None);
        };
        let SExpr::Method {
            base: f,
            name,
            args,
            ..
        } = &**base
        else {
            return Ok(None);
        };
        if name != "groupby" {
            return Ok(None);
        }
        let keys = args
            .first()
            .ok_or_else(|| self.err("groupby needs keys"))
            .and_then(|a| self.eval_str_list(a))?;
        Ok(Some((f, keys, c.clone())))
    }

    fn method_node(
        &mut self,
        base: &SExpr,
        name: &str,
        args: &[SExpr],
        kwargs: &[(String, SExpr)],
    ) -> Result<u32> {
        if let Some(op) = agg_op_of(name) {
            let Some((f, keys, col)) = self.groupby_parts(base)? else {
                return Err(self.err(format!(
                    "aggregate '{name}' used in frame position without groupby"
                )));
            };
            let src = self.frame_node(f)?;
            return self
                .session
                .add(Action::GroupByAgg { keys, col, op }, vec![src]);
        }
        match name {
            "compute" => {
                let uid = match self.kind_of(base)? {
                    Kind::Frame => self.frame_node(base)?,
                    Kind::Scalar => self.scalar_node(base)?,
                    _ => return Err(self.err("compute() needs a frame or scalar")),
                };
                let hints = match SExpr::kwarg(kwargs, "live_df") {
                    Some(h) => self.hint_uids(h)?,
                    None => Vec::new(),
                };
                self.force(uid, &hints)?;
                Ok(uid)
            }
            "head" => {
                let n = args
                    .first()
                    .ok_or_else(|| self.err("head needs a row count"))
                    .and_then(|a| self.lit_int(a))?;
                if n < 0 {
                    return Err(self.err("head count must be non-negative"));
                }
                let src = self.frame_node(base)?;
                self.session.add(Action::Head { n: n as usize }, vec![src])
            }
            "sort_values" => {
                let by_expr = args
                    .first()
                    .or_else(|| SExpr::kwarg(kwargs, "by"))
                    .ok_or_else(|| self.err("sort_values needs columns"))?;
                let by = self.eval_str_list(by_expr)?;
                let ascending = match SExpr::kwarg(kwargs, "ascending") {
                    Some(a) => self.lit_bool(a)?,
                    None => true,
                };
                let src = self.frame_node(base)?;
                self.session
                    .add(Action::SortValues { by, ascending }, vec![src])
            }
            "astype" => {
                let map = args
                    .first()
                    .ok_or_else(|| self.err("astype needs a dtype dict"))
                    .and_then(|a| self.dtype_map(a))?;
                let src = self.frame_node(base)?;
                self.session.add(Action::Astype { map }, vec![src])
            }
            "fillna" => {
                let value = args
                    .first()
                    .ok_or_else(|| self.err("fillna needs a value"))
                    .and_then(|a| self.lit_scalar(a))?;
                let src = self.frame_node(base)?;
                self.session.add(Action::Fillna { value }, vec![src])
            }
            "rename" => {
                let dict = SExpr::kwarg(kwargs, "columns")
                    .or_else(|| args.first())
                    .ok_or_else(|| self.err("rename needs columns="))?;
                let SExpr::Dict(entries) = dict else {
                    return Err(self.err("rename needs a dict of old to new names"));
                };
                let map = entries
                    .iter()
                    .map(|(old, v)| match v {
                        SExpr::Str(new) => Ok((old.clone(), new.clone())),
                        _ => Err(self.err("rename targets must be strings")),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let src = self.frame_node(base)?;
                self.session.add(Action::Rename { map }, vec![src])
            }
            "drop" => {
                let cols_expr = SExpr::kwarg(kwargs, "columns")
                    .or_else(|| args.first())
                    .ok_or_else(|| self.err("drop needs columns="))?;
                let cols = self.eval_str_list(cols_expr)?;
                let src = self.frame_node(base)?;
                self.session.add(Action::DropCols { cols }, vec![src])
            }
            "drop_duplicates" => {
                let subset = match SExpr::kwarg(kwargs, "subset").or_else(|| args.first()) {
                    Some(s) => Some(self.eval_str_list(s)?),
                    None => None,
                };
                let src = self.frame_node(base)?;
                self.session
                    .add(Action::DropDuplicates { subset }, vec![src])
            }
            "round" => {
                let decimals = match args.first() {
                    Some(a) => self.lit_int(a)?,
                    None => 0,
                };
                let src = self.frame_node(base)?;
                self.session.add(
                    Action::Round {
                        decimals: decimals as i32,
                    },
                    vec![src],
                )
            }
            "abs" => {
                let src = self.frame_node(base)?;
                self.session.add(Action::Abs, vec![src])
            }
            "explode" => {
                let col = args
                    .first()
                    .ok_or_else(|| self.err("explode needs a column"))
                    .and_then(|a| self.eval_str(a))?;
                let src = self.frame_node(base)?;
                self.session.add(Action::Explode { col }, vec![src])
            }
            "merge" => {
                let right_expr = args
                    .first()
                    .ok_or_else(|| self.err("merge needs a right frame"))?;
                let on = SExpr::kwarg(kwargs, "on")
                    .ok_or_else(|| self.err("merge needs on="))
                    .and_then(|o| self.eval_str_list(o))?;
                let how = match SExpr::kwarg(kwargs, "how") {
                    Some(h) => {
                        let s = self.eval_str(h)?;
                        JoinKind::parse(&s)
                            .ok_or_else(|| self.err(format!("unknown join kind '{s}'")))?
                    }
                    None => JoinKind::Inner,
                };
                let left = self.frame_node(base)?;
                let right = self.frame_node(right_expr)?;
                self.session
                    .add(Action::Merge { on, how }, vec![left, right])
            }
            _ => Err(self.err(format!("unknown method '{name}'"))),
        }
    }

    fn hint_uids(&mut self, e: &SExpr) -> Result<Vec<u32>> {
        let items: Vec<&SExpr> = match e {
            SExpr::List(items) => items.iter().collect(),
            other => vec![other],
        };
        items
            .into_iter()
            .map(|i| match i {
                SExpr::Var(v) => self.frame_var(v),
                _ => Err(self.err("live_df entries must be frame variables")),
            })
            .collect()
    }

    /// Lower a scalar-valued expression to a node, collapsing the common
    /// case of a bare aggregate or variable to the node itself.
    fn scalar_node(&mut self, e: &SExpr) -> Result<u32> {
        let mut tails = Vec::new();
        let ex = self.scalar_expr(e, &mut tails)?;
        if ex == Expr::SubResult(0) && tails.len() == 1 {
            return Ok(tails[0]);
        }
        self.session.add(Action::ScalarExpr { expr: ex }, tails)
    }

    /// Scalar expressions reference other scalar nodes through `SubResult`
    /// tails; aggregates lower to dedicated nodes over their frames.
    fn scalar_expr(&mut self, e: &SExpr, tails: &mut Vec<u32>) -> Result<Expr> {
        match e {
            SExpr::Int(_) | SExpr::Float(_) | SExpr::Bool(_) | SExpr::Null | SExpr::Str(_) => {
                Ok(Expr::Lit(self.lit_scalar(e)?))
            }
            SExpr::Neg(inner) => Ok(Expr::Neg(Box::new(self.scalar_expr(inner, tails)?))),
            SExpr::Not(inner) => Ok(Expr::Not(Box::new(self.scalar_expr(inner, tails)?))),
            SExpr::Bin { op, lhs, rhs } => Ok(Expr::Bin {
                op: *op,
                lhs: Box::new(self.scalar_expr(lhs, tails)?),
                rhs: Box::new(self.scalar_expr(rhs, tails)?),
            }),
            SExpr::Var(v) => match self.lookup(v)? {
                Binding::Str(s) => Ok(Expr::Lit(Scalar::Text(s.clone()))),
                Binding::StrList(_) => Err(self.err(format!("'{v}' is a list, not a scalar"))),
                Binding::Node(uid) => {
                    let uid = *uid;
                    if self.session.graph.node(uid).action.is_scalar_valued() {
                        tails.push(uid);
                        Ok(Expr::SubResult(tails.len() - 1))
                    } else {
                        Err(self.err(format!("'{v}' is a frame, not a scalar")))
                    }
                }
            },
            SExpr::Method {
                base,
                name,
                kwargs,
                ..
            } => {
                if name == "compute" {
                    let uid = self.scalar_node(base)?;
                    let hints = match SExpr::kwarg(kwargs, "live_df") {
                        Some(h) => self.hint_uids(h)?,
                        None => Vec::new(),
                    };
                    self.force(uid, &hints)?;
                    tails.push(uid);
                    return Ok(Expr::SubResult(tails.len() - 1));
                }
                let Some(op) = agg_op_of(name) else {
                    return Err(self.err(format!("'{name}' is not a scalar method")));
                };
                let (src, col) = self.agg_source(base)?;
                let uid = self.session.add(Action::AggScalar { col, op }, vec![src])?;
                tails.push(uid);
                Ok(Expr::SubResult(tails.len() - 1))
            }
            _ => Err(self.err("expected a scalar expression")),
        }
    }

    /// The frame and optional column an aggregate runs over: `df.a.sum()`
    /// aggregates column `a`; a series or computed series aggregates its
    /// single column.
    fn agg_source(&mut self, base: &SExpr) -> Result<(u32, Option<String>)> {
        match base {
            SExpr::Attr { base: f, name } if self.kind_of(f)? == Kind::Frame => {
                Ok((self.frame_node(f)?, Some(name.clone())))
            }
            SExpr::Index {
                base: f,
                index: Index::Col(c),
            } => Ok((self.frame_node(f)?, Some(c.clone()))),
            other if self.kind_of(other)? == Kind::Frame => Ok((self.frame_node(other)?, None)),
            _ => Err(self.err("aggregate over a non-frame expression")),
        }
    }

    /// Lower an expression evaluated per row against `frame_var`'s frame:
    /// column refs become `Col`, aggregates over the same frame inline, and
    /// scalars from elsewhere ride in as extra sources.
    fn col_expr(
        &mut self,
        e: &SExpr,
        frame_var: Option<&str>,
        tails: &mut Vec<u32>,
    ) -> Result<Expr> {
        match e {
            SExpr::Int(_) | SExpr::Float(_) | SExpr::Bool(_) | SExpr::Null | SExpr::Str(_) => {
                Ok(Expr::Lit(self.lit_scalar(e)?))
            }
            SExpr::Attr { base, name } => match (&**base, frame_var) {
                (SExpr::Var(v), Some(fv)) if v == fv => Ok(Expr::Col(name.clone())),
                (SExpr::Var(v), _) if self.is_frame_binding(v) => Err(self.err(format!(
                    "expression references frame '{v}', expected the filtered frame"
                ))),
                _ => Err(self.err("column access on a non-frame expression")),
            },
            SExpr::Index {
                base,
                index: Index::Col(c),
            } => match (&**base, frame_var) {
                (SExpr::Var(v), Some(fv)) if v == fv => Ok(Expr::Col(c.clone())),
                (SExpr::Var(v), _) if self.is_frame_binding(v) => Err(self.err(format!(
                    "expression references frame '{v}', expected the filtered frame"
                ))),
                _ => Err(self.err("column access on a non-frame expression")),
            },
            SExpr::DtDayOfWeek(inner) => Ok(Expr::DayOfWeek(Box::new(
                self.col_expr(inner, frame_var, tails)?,
            ))),
            SExpr::Bin { op, lhs, rhs } => Ok(Expr::Bin {
                op: *op,
                lhs: Box::new(self.col_expr(lhs, frame_var, tails)?),
                rhs: Box::new(self.col_expr(rhs, frame_var, tails)?),
            }),
            SExpr::Not(inner) => Ok(Expr::Not(Box::new(self.col_expr(inner, frame_var, tails)?))),
            SExpr::Neg(inner) => Ok(Expr::Neg(Box::new(self.col_expr(inner, frame_var, tails)?))),
            SExpr::Var(v) => match self.lookup(v)? {
                Binding::Str(s) => Ok(Expr::Lit(Scalar::Text(s.clone()))),
                Binding::StrList(_) => Err(self.err(format!("'{v}' is a list, not a value"))),
                Binding::Node(uid) => {
                    let uid = *uid;
                    if self.session.graph.node(uid).action.is_scalar_valued() {
                        tails.push(uid);
                        Ok(Expr::SubResult(tails.len() - 1))
                    } else {
                        Err(self.err(format!("frame '{v}' cannot appear inside an expression")))
                    }
                }
            },
            SExpr::Method { base, name, .. } => {
                let Some(op) = agg_op_of(name) else {
                    return Err(self.err(format!("'{name}' is not valid inside an expression")));
                };
                // same-frame aggregates stay inline so the whole predicate
                // remains one pushable expression; aggregates over other
                // frames become scalar feeder nodes
                let same_frame = matches!((base.base_var(), frame_var), (Some(b), Some(f)) if b == f);
                if same_frame {
                    let arg = self.col_expr(base, frame_var, tails)?;
                    Ok(Expr::Agg {
                        op,
                        arg: Box::new(arg),
                    })
                } else {
                    let (src, col) = self.agg_source(base)?;
                    let uid = self.session.add(Action::AggScalar { col, op }, vec![src])?;
                    tails.push(uid);
                    Ok(Expr::SubResult(tails.len() - 1))
                }
            }
            _ => Err(self.err("unsupported expression form")),
        }
    }
}
