//! Reference interpreter: runs a script statement by statement against
//! in-memory frames, with no task graph, no optimizer, no laziness, and no
//! metadata store. It shares the frame kernels and the render functions
//! with the engine, so its stdout is the behavioral baseline the lazy
//! engine must reproduce byte for byte.

use std::collections::BTreeSet;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::exec::render_frame;
use crate::frame::csv::{self, ReadOptions};
use crate::frame::expr::{self, AggOp, Expr};
use crate::frame::ops::{self, JoinKind};
use crate::frame::{Dtype, Frame, Scalar};
use crate::interp::{render_ext, render_str_list, ExtRegistry};
use crate::graph::Value;
use crate::script::ast::{
    FPiece, Index, PrintArg, ScriptProgram, SExpr, Span, Stmt, StmtKind,
};

#[derive(Debug, Clone)]
enum RVal {
    Frame(Rc<Frame>),
    Scalar(Scalar),
    Str(String),
    StrList(Vec<String>),
}

/// Run a program and return everything it printed.
pub fn run_program(p: &ScriptProgram) -> Result<String> {
    run_with_registry(p, &ExtRegistry::default())
}

pub fn run_with_registry(p: &ScriptProgram, registry: &ExtRegistry) -> Result<String> {
    let mut it = Ref {
        registry,
        env: std::collections::BTreeMap::new(),
        out: String::new(),
        span: Span::default(),
    };
    it.block(&p.body)?;
    Ok(it.out)
}

struct Ref<'a> {
    registry: &'a ExtRegistry,
    env: std::collections::BTreeMap<String, RVal>,
    out: String,
    span: Span,
}

impl<'a> Ref<'a> {
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
                let v = self.eval(expr)?;
                self.env.insert(var.clone(), v);
            }
            StmtKind::SetColumn { var, col, expr } => {
                let f = self.frame_var(var)?;
                let mut tails = Vec::new();
                let ex = self.col_expr(expr, Some(var), &mut tails)?;
                let out = ops::set_column(&f, col, &ex, &tails)?;
                self.env.insert(var.clone(), RVal::Frame(Rc::new(out)));
            }
            StmtKind::Print(arg) => {
                let mut text = String::new();
                match arg {
                    PrintArg::Expr(e) => match self.eval(e)? {
                        RVal::Str(s) => text.push_str(&s),
                        RVal::StrList(l) => text.push_str(&render_str_list(&l)),
                        RVal::Frame(f) => text.push_str(&render_frame(&f)),
                        RVal::Scalar(s) => text.push_str(&s.render()),
                    },
                    PrintArg::FString(fp) => {
                        for p in fp {
                            match p {
                                FPiece::Text(t) => text.push_str(t),
                                FPiece::Var(v) => match self.lookup(v)?.clone() {
                                    RVal::Str(s) => text.push_str(&s),
                                    RVal::StrList(l) => text.push_str(&render_str_list(&l)),
                                    RVal::Frame(f) => text.push_str(&render_frame(&f)),
                                    RVal::Scalar(s) => text.push_str(&s.render()),
                                },
                            }
                        }
                    }
                }
                if !text.ends_with('\n') {
                    text.push('\n');
                }
                self.out.push_str(&text);
            }
            StmtKind::ExtCall { module, func, args } => {
                if !self.registry.contains(module) {
                    return Err(Error::UnknownExternal(format!("{module}.{func}")));
                }
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(match self.eval(a)? {
                        RVal::Frame(f) => Value::Frame(f),
                        RVal::Scalar(s) => Value::Scalar(s),
                        RVal::Str(s) => Value::Text(Rc::new(s)),
                        RVal::StrList(l) => Value::Text(Rc::new(render_str_list(&l))),
                    });
                }
                self.out.push_str(&render_ext(module, func, &vals));
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
            // prints are already eager here
            StmtKind::Flush | StmtKind::EnableLazyPrint => {}
        }
        Ok(())
    }

    fn cond(&mut self, e: &SExpr) -> Result<bool> {
        match self.eval(e)? {
            RVal::Scalar(s) => Ok(match s {
                Scalar::Null => false,
                Scalar::Int(v) => v != 0,
                Scalar::Float(v) => v != 0.0,
                Scalar::Bool(b) => b,
                Scalar::Text(t) => !t.is_empty(),
                Scalar::Date(_) => true,
            }),
            RVal::Str(s) => Ok(!s.is_empty()),
            RVal::StrList(l) => Ok(!l.is_empty()),
            RVal::Frame(_) => Err(self.err("condition is a frame, not a scalar")),
        }
    }

    fn lookup(&self, v: &str) -> Result<&RVal> {
        self.env
            .get(v)
            .ok_or_else(|| self.err(format!("name '{v}' is not defined")))
    }

    fn frame_var(&self, v: &str) -> Result<Rc<Frame>> {
        match self.lookup(v)? {
            RVal::Frame(f) => Ok(f.clone()),
            _ => Err(self.err(format!("'{v}' is not a frame"))),
        }
    }

    fn is_frame_binding(&self, v: &str) -> bool {
        matches!(self.env.get(v), Some(RVal::Frame(_)))
    }

    /// Same classification the lazy interpreter uses; the two must agree on
    /// how every expression is lowered.
    fn is_frame_kind(&self, e: &SExpr) -> Result<bool> {
        Ok(match e {
            SExpr::Attr { .. } | SExpr::DtDayOfWeek(_) | SExpr::Index { .. } => true,
            SExpr::Var(v) => self.is_frame_binding(v),
            SExpr::FreeCall { name, .. } => name == "read_csv",
            SExpr::Method { base, name, .. } => {
                if agg_op_of(name).is_some() {
                    self.groupby_parts(base)?.is_some()
                } else if name == "compute" {
                    self.is_frame_kind(base)?
                } else {
                    true
                }
            }
            SExpr::Bin { lhs, rhs, .. } => {
                self.is_frame_kind(lhs)? || self.is_frame_kind(rhs)?
            }
            SExpr::Not(inner) | SExpr::Neg(inner) => self.is_frame_kind(inner)?,
            _ => false,
        })
    }

    fn eval(&mut self, e: &SExpr) -> Result<RVal> {
        match e {
            SExpr::Str(s) => Ok(RVal::Str(s.clone())),
            SExpr::List(_) => Ok(RVal::StrList(self.eval_str_list(e)?)),
            SExpr::Dict(_) => Err(self.err("a dict is not a value")),
            SExpr::Var(v) => Ok(self.lookup(v)?.clone()),
            SExpr::Int(_) | SExpr::Float(_) | SExpr::Bool(_) | SExpr::Null => {
                Ok(RVal::Scalar(self.lit_scalar(e)?))
            }
            _ => {
                if self.is_frame_kind(e)? {
                    Ok(RVal::Frame(Rc::new(self.frame_value(e)?)))
                } else {
                    Ok(RVal::Scalar(self.scalar_value(e)?))
                }
            }
        }
    }

    fn eval_str(&self, e: &SExpr) -> Result<String> {
        match e {
            SExpr::Str(s) => Ok(s.clone()),
            SExpr::Var(v) => match self.lookup(v)? {
                RVal::Str(s) => Ok(s.clone()),
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
                RVal::StrList(l) => Ok(l.clone()),
                RVal::Str(s) => Ok(vec![s.clone()]),
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

    fn frame_value(&mut self, e: &SExpr) -> Result<Frame> {
        match e {
            SExpr::Var(v) => Ok((*self.frame_var(v)?).clone()),
            SExpr::FreeCall { name, args, kwargs } if name == "read_csv" => {
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
                Ok(csv::read_csv(&path, &opts)?.0)
            }
            SExpr::Index { base, index } => {
                let f = self.frame_value(base)?;
                match index {
                    Index::Col(c) => ops::get_column(&f, c),
                    Index::Cols(cs) => ops::project(&f, cs),
                    Index::Pred(p) => {
                        let fv = base.base_var().map(str::to_string);
                        let mut tails = Vec::new();
                        let pred = self.col_expr(p, fv.as_deref(), &mut tails)?;
                        ops::filter_rows(&f, &pred, &tails)
                    }
                }
            }
            SExpr::Attr { base, name } => {
                let f = self.frame_value(base)?;
                ops::get_column(&f, name)
            }
            SExpr::Method {
                base,
                name,
                args,
                kwargs,
            } => self.method_value(base, name, args, kwargs),
            SExpr::DtDayOfWeek(_) | SExpr::Bin { .. } | SExpr::Not(_) | SExpr::Neg(_) => {
                self.series_value(e)
            }
            _ => Err(self.err("expected a frame expression")),
        }
    }

    fn series_value(&mut self, e: &SExpr) -> Result<Frame> {
        let mut vars = BTreeSet::new();
        collect_frame_vars(self, e, &mut vars);
        if vars.len() != 1 {
            return Err(self.err(format!(
                "series expression must reference exactly one frame, found {}",
                vars.len()
            )));
        }
        let fv = vars.into_iter().next().unwrap();
        let f = self.frame_var(&fv)?;
        let mut tails = Vec::new();
        let ex = self.col_expr(e, Some(&fv), &mut tails)?;
        ops::eval_series(&f, &ex, &tails)
    }

    fn method_value(
        &mut self,
        base: &SExpr,
        name: &str,
        args: &[SExpr],
        kwargs: &[(String, SExpr)],
    ) -> Result<Frame> {
        if let Some(op) = agg_op_of(name) {
            let Some((fe, keys, col)) = self.groupby_parts(base)? else {
                return Err(self.err(format!(
                    "aggregate '{name}' used in frame position without groupby"
                )));
            };
            let f = self.frame_value(fe)?;
            return ops::groupby_agg(&f, &keys, &col, op);
        }
        match name {
            // laziness directives mean nothing here
            "compute" => self.frame_value(base),
            "head" => {
                let n = args
                    .first()
                    .ok_or_else(|| self.err("head needs a row count"))
                    .and_then(|a| self.lit_int(a))?;
                if n < 0 {
                    return Err(self.err("head count must be non-negative"));
                }
                ops::head(&self.frame_value(base)?, n as usize)
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
                ops::sort_values(&self.frame_value(base)?, &by, ascending)
            }
            "astype" => {
                let map = args
                    .first()
                    .ok_or_else(|| self.err("astype needs a dtype dict"))
                    .and_then(|a| self.dtype_map(a))?;
                ops::astype(&self.frame_value(base)?, &map)
            }
            "fillna" => {
                let value = args
                    .first()
                    .ok_or_else(|| self.err("fillna needs a value"))
                    .and_then(|a| self.lit_scalar(a))?;
                ops::fillna(&self.frame_value(base)?, &value)
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
                ops::rename(&self.frame_value(base)?, &map)
            }
            "drop" => {
                let cols_expr = SExpr::kwarg(kwargs, "columns")
                    .or_else(|| args.first())
                    .ok_or_else(|| self.err("drop needs columns="))?;
                let cols = self.eval_str_list(cols_expr)?;
                ops::drop_columns(&self.frame_value(base)?, &cols)
            }
            "drop_duplicates" => {
                let subset = match SExpr::kwarg(kwargs, "subset").or_else(|| args.first()) {
                    Some(s) => Some(self.eval_str_list(s)?),
                    None => None,
                };
                ops::drop_duplicates(&self.frame_value(base)?, subset.as_deref())
            }
            "round" => {
                let decimals = match args.first() {
                    Some(a) => self.lit_int(a)?,
                    None => 0,
                };
                ops::round_frame(&self.frame_value(base)?, decimals as i32)
            }
            "abs" => ops::abs_frame(&self.frame_value(base)?),
            "explode" => {
                let col = args
                    .first()
                    .ok_or_else(|| self.err("explode needs a column"))
                    .and_then(|a| self.eval_str(a))?;
                ops::explode(&self.frame_value(base)?, &col)
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
                let left = self.frame_value(base)?;
                let right = self.frame_value(right_expr)?;
                ops::merge(&left, &right, &on, how)
            }
            _ => Err(self.err(format!("unknown method '{name}'"))),
        }
    }

    /// Scalar expressions evaluate through the same expression engine the
    /// executor uses, over an empty frame.
    fn scalar_value(&mut self, e: &SExpr) -> Result<Scalar> {
        let mut tails = Vec::new();
        let ex = self.scalar_expr(e, &mut tails)?;
        match expr::eval(&Frame::new_empty(0), &ex, &tails)? {
            expr::EvalOut::Scalar(s) => Ok(s),
            expr::EvalOut::Col(_) => {
                Err(self.err("scalar expression produced a column"))
            }
        }
    }

    fn scalar_expr(&mut self, e: &SExpr, tails: &mut Vec<Scalar>) -> Result<Expr> {
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
                RVal::Str(s) => Ok(Expr::Lit(Scalar::Text(s.clone()))),
                RVal::StrList(_) => Err(self.err(format!("'{v}' is a list, not a scalar"))),
                RVal::Scalar(s) => {
                    tails.push(s.clone());
                    Ok(Expr::SubResult(tails.len() - 1))
                }
                RVal::Frame(_) => Err(self.err(format!("'{v}' is a frame, not a scalar"))),
            },
            SExpr::Method { base, name, .. } => {
                if name == "compute" {
                    return self.scalar_expr(base, tails);
                }
                let Some(op) = agg_op_of(name) else {
                    return Err(self.err(format!("'{name}' is not a scalar method")));
                };
                let (f, col) = self.agg_source(base)?;
                let s = ops::agg_scalar(&f, col.as_deref(), op)?;
                tails.push(s);
                Ok(Expr::SubResult(tails.len() - 1))
            }
            _ => Err(self.err("expected a scalar expression")),
        }
    }

    fn agg_source(&mut self, base: &SExpr) -> Result<(Frame, Option<String>)> {
        match base {
            SExpr::Attr { base: f, name } if self.is_frame_kind(f)? => {
                Ok((self.frame_value(f)?, Some(name.clone())))
            }
            SExpr::Index {
                base: f,
                index: Index::Col(c),
            } => Ok((self.frame_value(f)?, Some(c.clone()))),
            other if self.is_frame_kind(other)? => Ok((self.frame_value(other)?, None)),
            _ => Err(self.err("aggregate over a non-frame expression")),
        }
    }

    /// Mirror of the lazy interpreter's lowering, with scalars resolved in
    /// place instead of riding on extra graph sources.
    fn col_expr(
        &mut self,
        e: &SExpr,
        frame_var: Option<&str>,
        tails: &mut Vec<Scalar>,
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
                RVal::Str(s) => Ok(Expr::Lit(Scalar::Text(s.clone()))),
                RVal::StrList(_) => Err(self.err(format!("'{v}' is a list, not a value"))),
                RVal::Scalar(s) => {
                    tails.push(s.clone());
                    Ok(Expr::SubResult(tails.len() - 1))
                }
                RVal::Frame(_) => {
                    Err(self.err(format!("frame '{v}' cannot appear inside an expression")))
                }
            },
            SExpr::Method { base, name, .. } => {
                let Some(op) = agg_op_of(name) else {
                    return Err(self.err(format!("'{name}' is not valid inside an expression")));
                };
                let same_frame = matches!((base.base_var(), frame_var), (Some(b), Some(f)) if b == f);
                if same_frame {
                    let arg = self.col_expr(base, frame_var, tails)?;
                    Ok(Expr::Agg {
                        op,
                        arg: Box::new(arg),
                    })
                } else {
                    let (f, col) = self.agg_source(base)?;
                    let s = ops::agg_scalar(&f, col.as_deref(), op)?;
                    tails.push(s);
                    Ok(Expr::SubResult(tails.len() - 1))
                }
            }
            _ => Err(self.err("unsupported expression form")),
        }
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

fn collect_frame_vars(r: &Ref<'_>, e: &SExpr, out: &mut BTreeSet<String>) {
    match e {
        SExpr::Var(v) => {
            if r.is_frame_binding(v) {
                out.insert(v.clone());
            }
        }
        SExpr::Attr { base, .. } | SExpr::DtDayOfWeek(base) => collect_frame_vars(r, base, out),
        SExpr::Index { base, index } => {
            collect_frame_vars(r, base, out);
            if let Index::Pred(p) = index {
                collect_frame_vars(r, p, out);
            }
        }
        SExpr::Method {
            base, args, kwargs, ..
        } => {
            collect_frame_vars(r, base, out);
            for a in args {
                collect_frame_vars(r, a, out);
            }
            for (_, v) in kwargs {
                collect_frame_vars(r, v, out);
            }
        }
        SExpr::Bin { lhs, rhs, .. } => {
            collect_frame_vars(r, lhs, out);
            collect_frame_vars(r, rhs, out);
        }
        SExpr::Not(inner) | SExpr::Neg(inner) => collect_frame_vars(r, inner, out),
        SExpr::List(items) => {
            for i in items {
                collect_frame_vars(r, i, out);
            }
        }
        _ => {}
    }
}
