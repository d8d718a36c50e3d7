//! Script AST. Statements carry source spans for diagnostics; spans are
//! ignored by equality so parse/emit round trips compare structurally.

use crate::frame::expr::BinOp;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32) -> Span {
        Span { line, col }
    }
}

#[derive(Debug, Clone)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

impl PartialEq for Stmt {
    fn eq(&self, other: &Stmt) -> bool {
        self.kind == other.kind
    }
}

impl Eq for Stmt {}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    /// `v = expr`
    Assign { var: String, expr: SExpr },
    /// `v['c'] = expr`
    SetColumn { var: String, col: String, expr: SExpr },
    /// `print(expr)` or `print(f'...')`
    Print(PrintArg),
    /// `module.func(args)` call of an external, non-lazy function
    ExtCall {
        module: String,
        func: String,
        args: Vec<SExpr>,
    },
    If {
        cond: SExpr,
        then_body: Vec<Stmt>,
        else_body: Vec<Stmt>,
    },
    While { cond: SExpr, body: Vec<Stmt> },
    /// `flush()`: process every pending lazy print
    Flush,
    /// `enable_lazy_print()`: defer prints into the task graph
    EnableLazyPrint,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PrintArg {
    Expr(SExpr),
    FString(Vec<FPiece>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FPiece {
    Text(String),
    Var(String),
}

/// The subscript forms of `base[...]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Index {
    /// `df[df.a > 0]`
    Pred(Box<SExpr>),
    /// `df['a']`
    Col(String),
    /// `df[['a', 'b']]`
    Cols(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SExpr {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    Null,
    List(Vec<SExpr>),
    /// `{'a': 'int64', ...}`; keys are string literals
    Dict(Vec<(String, SExpr)>),
    Var(String),
    /// `base.name` column access
    Attr { base: Box<SExpr>, name: String },
    /// `base.dt.dayofweek`
    DtDayOfWeek(Box<SExpr>),
    Index { base: Box<SExpr>, index: Index },
    /// `base.name(args, k=v, ...)`
    Method {
        base: Box<SExpr>,
        name: String,
        args: Vec<SExpr>,
        kwargs: Vec<(String, SExpr)>,
    },
    /// `name(args, k=v, ...)` with no receiver (read_csv)
    FreeCall {
        name: String,
        args: Vec<SExpr>,
        kwargs: Vec<(String, SExpr)>,
    },
    Bin {
        op: BinOp,
        lhs: Box<SExpr>,
        rhs: Box<SExpr>,
    },
    /// `~expr`
    Not(Box<SExpr>),
    /// `-expr`
    Neg(Box<SExpr>),
}

impl SExpr {
    pub fn bin(op: BinOp, lhs: SExpr, rhs: SExpr) -> SExpr {
        SExpr::Bin {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn attr(base: SExpr, name: &str) -> SExpr {
        SExpr::Attr {
            base: Box::new(base),
            name: name.to_string(),
        }
    }

    /// The variable at the head of an access chain, if the expression is a
    /// plain variable or a chain of attribute/index/method accesses on one.
    pub fn base_var(&self) -> Option<&str> {
        match self {
            SExpr::Var(v) => Some(v),
            SExpr::Attr { base, .. }
            | SExpr::DtDayOfWeek(base)
            | SExpr::Method { base, .. } => base.base_var(),
            SExpr::Index { base, .. } => base.base_var(),
            _ => None,
        }
    }

    /// Extract the kwarg with the given name.
    pub fn kwarg<'a>(kwargs: &'a [(String, SExpr)], name: &str) -> Option<&'a SExpr> {
        kwargs.iter().find(|(k, _)| k == name).map(|(_, v)| v)
    }

    /// A list of string literals (e.g. a usecols argument).
    pub fn as_str_list(&self) -> Option<Vec<String>> {
        match self {
            SExpr::List(items) => items
                .iter()
                .map(|e| match e {
                    SExpr::Str(s) => Some(s.clone()),
                    _ => None,
                })
                .collect(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScriptProgram {
    pub body: Vec<Stmt>,
}

pub type StmtId = usize;

impl ScriptProgram {
    /// Visit every statement in source order (pre-order through nesting),
    /// assigning stable ids. The CFG builder and the rewriters both rely on
    /// this numbering to address the same statements.
    pub fn walk<'a, F: FnMut(StmtId, &'a Stmt)>(&'a self, f: &mut F) {
        let mut next = 0;
        walk_stmts(&self.body, &mut next, f);
    }

    pub fn statement_count(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |_, _| n += 1);
        n
    }
}

fn walk_stmts<'a, F: FnMut(StmtId, &'a Stmt)>(stmts: &'a [Stmt], next: &mut StmtId, f: &mut F) {
    for s in stmts {
        let id = *next;
        *next += 1;
        f(id, s);
        match &s.kind {
            StmtKind::If {
                then_body,
                else_body,
                ..
            } => {
                walk_stmts(then_body, next, f);
                walk_stmts(else_body, next, f);
            }
            StmtKind::While { body, .. } => {
                walk_stmts(body, next, f);
            }
            _ => {}
        }
    }
}
