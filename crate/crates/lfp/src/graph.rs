//! Task graph: the lazy execution plan. Nodes live in an arena indexed by
//! uid; `sources` point at producers. The graph is append-only; optimizer
//! passes rewire `sources` and add nodes, and execution walks a per-compute
//! clone so cached results on the session graph stay valid.

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::frame::csv::ReadOptions;
use crate::frame::expr::{AggOp, Expr};
use crate::frame::ops::JoinKind;
use crate::frame::{Dtype, Frame, Scalar};

/// Set of column names a node reads or writes; `All` when not statically
/// known (or when the node touches the whole row).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttrSet {
    All,
    Cols(BTreeSet<String>),
}

impl AttrSet {
    pub fn empty() -> AttrSet {
        AttrSet::Cols(BTreeSet::new())
    }

    pub fn from<I: IntoIterator<Item = String>>(iter: I) -> AttrSet {
        AttrSet::Cols(iter.into_iter().collect())
    }

    pub fn is_empty(&self) -> bool {
        match self {
            AttrSet::All => false,
            AttrSet::Cols(c) => c.is_empty(),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        match self {
            AttrSet::All => true,
            AttrSet::Cols(c) => c.contains(name),
        }
    }

    pub fn union(&self, other: &AttrSet) -> AttrSet {
        match (self, other) {
            (AttrSet::All, _) | (_, AttrSet::All) => AttrSet::All,
            (AttrSet::Cols(a), AttrSet::Cols(b)) => {
                AttrSet::Cols(a.iter().chain(b.iter()).cloned().collect())
            }
        }
    }

    pub fn intersects(&self, other: &AttrSet) -> bool {
        match (self, other) {
            (AttrSet::All, o) => !o.is_empty(),
            (s, AttrSet::All) => !s.is_empty(),
            (AttrSet::Cols(a), AttrSet::Cols(b)) => a.iter().any(|x| b.contains(x)),
        }
    }
}

impl std::fmt::Display for AttrSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttrSet::All => f.write_str("*"),
            AttrSet::Cols(c) => {
                let v: Vec<&str> = c.iter().map(|s| s.as_str()).collect();
                write!(f, "{{{}}}", v.join(","))
            }
        }
    }
}

/// One piece of a print statement: literal text or the rendered value of the
/// node at `sources[index]`.
#[derive(Debug, Clone, PartialEq)]
pub enum PrintPiece {
    Text(String),
    Slot(usize),
}

/// What a node does. Frame-valued unless noted.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Read { path: String, opts: ReadOptions },
    Filter { pred: Expr },
    /// Column projection, `df[['a', 'b']]`.
    GetCols { cols: Vec<String> },
    /// Single-column projection (series position), `df['a']`.
    GetCol { col: String },
    SetCol { col: String, expr: Expr },
    DropCols { cols: Vec<String> },
    Rename { map: Vec<(String, String)> },
    Astype { map: Vec<(String, Dtype)> },
    Fillna { value: Scalar },
    Round { decimals: i32 },
    Abs,
    DropDuplicates { subset: Option<Vec<String>> },
    SortValues { by: Vec<String>, ascending: bool },
    Head { n: usize },
    Explode { col: String },
    /// sources[0] is the left side, sources[1] the right.
    Merge { on: Vec<String>, how: JoinKind },
    GroupByAgg { keys: Vec<String>, col: String, op: AggOp },
    /// Scalar-valued: aggregate a whole column (or the single column when
    /// `col` is `None`).
    AggScalar { col: Option<String>, op: AggOp },
    /// Scalar-valued arithmetic over other scalar nodes; `SubResult(i)` in
    /// the expression refers to `sources[i]`.
    ScalarExpr { expr: Expr },
    /// Deferred print. `values` leading sources feed the slots; one optional
    /// trailing source chains to the previous pending print.
    Print { pieces: Vec<PrintPiece>, values: usize },
    /// Unknown effect; blocks every optimization around it.
    Opaque { name: String },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Read { .. } => "read_csv",
            Action::Filter { .. } => "filter",
            Action::GetCols { .. } => "select",
            Action::GetCol { .. } => "column",
            Action::SetCol { .. } => "set_column",
            Action::DropCols { .. } => "drop",
            Action::Rename { .. } => "rename",
            Action::Astype { .. } => "astype",
            Action::Fillna { .. } => "fillna",
            Action::Round { .. } => "round",
            Action::Abs => "abs",
            Action::DropDuplicates { .. } => "drop_duplicates",
            Action::SortValues { .. } => "sort_values",
            Action::Head { .. } => "head",
            Action::Explode { .. } => "explode",
            Action::Merge { .. } => "merge",
            Action::GroupByAgg { .. } => "groupby",
            Action::AggScalar { .. } => "agg",
            Action::ScalarExpr { .. } => "scalar",
            Action::Print { .. } => "print",
            Action::Opaque { .. } => "opaque",
        }
    }

    /// Label used in graph dumps and DOT output.
    pub fn display(&self) -> String {
        fn list(v: &[String]) -> String {
            v.join(",")
        }
        match self {
            Action::Read { path, opts } => {
                let mut s = format!("read_csv({path}");
                if let Some(u) = &opts.usecols {
                    s.push_str(&format!(", usecols=[{}]", list(u)));
                }
                if !opts.dtypes.is_empty() {
                    let d: Vec<String> = opts
                        .dtypes
                        .iter()
                        .map(|(k, v)| format!("{k}:{}", v.name()))
                        .collect();
                    s.push_str(&format!(", dtype={{{}}}", d.join(",")));
                }
                if !opts.parse_dates.is_empty() {
                    let d: Vec<&str> = opts.parse_dates.iter().map(|s| s.as_str()).collect();
                    s.push_str(&format!(", parse_dates=[{}]", d.join(",")));
                }
                s.push(')');
                s
            }
            Action::Filter { pred } => format!("filter {}", pred.display()),
            Action::GetCols { cols } => format!("select [{}]", list(cols)),
            Action::GetCol { col } => format!("column {col}"),
            Action::SetCol { col, expr } => format!("set {col} = {}", expr.display()),
            Action::DropCols { cols } => format!("drop [{}]", list(cols)),
            Action::Rename { map } => {
                let m: Vec<String> = map.iter().map(|(a, b)| format!("{a}->{b}")).collect();
                format!("rename {{{}}}", m.join(","))
            }
            Action::Astype { map } => {
                let m: Vec<String> = map
                    .iter()
                    .map(|(a, b)| format!("{a}:{}", b.name()))
                    .collect();
                format!("astype {{{}}}", m.join(","))
            }
            Action::Fillna { value } => format!("fillna({})", value.render()),
            Action::Round { decimals } => format!("round({decimals})"),
            Action::Abs => "abs()".to_string(),
            Action::DropDuplicates { subset } => match subset {
                Some(s) => format!("drop_duplicates([{}])", list(s)),
                None => "drop_duplicates()".to_string(),
            },
            Action::SortValues { by, ascending } => format!(
                "sort_values([{}], {})",
                list(by),
                if *ascending { "asc" } else { "desc" }
            ),
            Action::Head { n } => format!("head({n})"),
            Action::Explode { col } => format!("explode({col})"),
            Action::Merge { on, how } => format!("merge on [{}] {}", list(on), how.name()),
            Action::GroupByAgg { keys, col, op } => {
                format!("groupby([{}]).{col}.{}()", list(keys), op.name())
            }
            Action::AggScalar { col, op } => match col {
                Some(c) => format!("{c}.{}()", op.name()),
                None => format!("{}()", op.name()),
            },
            Action::ScalarExpr { expr } => format!("scalar {}", expr.display()),
            Action::Print { pieces, .. } => {
                let mut s = String::from("print ");
                for p in pieces {
                    match p {
                        PrintPiece::Text(t) => s.push_str(&format!("{t:?}")),
                        PrintPiece::Slot(i) => s.push_str(&format!("${i}")),
                    }
                }
                s
            }
            Action::Opaque { name } => format!("opaque {name}"),
        }
    }

    pub fn is_scalar_valued(&self) -> bool {
        matches!(self, Action::AggScalar { .. } | Action::ScalarExpr { .. })
    }
}

/// A computed node value.
#[derive(Debug, Clone)]
pub enum Value {
    Frame(Rc<Frame>),
    Scalar(Scalar),
    /// Rendered output of a print node.
    Text(Rc<String>),
}

impl Value {
    pub fn as_frame(&self) -> Result<&Frame> {
        match self {
            Value::Frame(f) => Ok(f),
            _ => Err(Error::Internal("expected a frame value".to_string())),
        }
    }

    pub fn as_scalar(&self) -> Result<&Scalar> {
        match self {
            Value::Scalar(s) => Ok(s),
            _ => Err(Error::Internal("expected a scalar value".to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskNode {
    pub uid: u32,
    pub action: Action,
    pub sources: Vec<u32>,
    /// Read nodes: header columns, resolved at build time when available.
    pub schema_hint: Option<BTreeSet<String>>,
    pub persist: bool,
    pub result: Option<Value>,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<TaskNode>,
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add(&mut self, action: Action, sources: Vec<u32>) -> Result<u32> {
        for &s in &sources {
            if s as usize >= self.nodes.len() {
                return Err(Error::UnresolvedUid(s));
            }
        }
        let uid = self.nodes.len() as u32;
        self.nodes.push(TaskNode {
            uid,
            action,
            sources,
            schema_hint: None,
            persist: false,
            result: None,
        });
        Ok(uid)
    }

    pub fn node(&self, uid: u32) -> &TaskNode {
        &self.nodes[uid as usize]
    }

    pub fn node_mut(&mut self, uid: u32) -> &mut TaskNode {
        &mut self.nodes[uid as usize]
    }

    pub fn uids(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.nodes.len()).map(|i| i as u32)
    }

    /// Nodes that list `uid` as a source, in uid order.
    pub fn consumers(&self, uid: u32) -> Vec<u32> {
        self.nodes
            .iter()
            .filter(|n| n.sources.contains(&uid))
            .map(|n| n.uid)
            .collect()
    }

    /// Replace `old` with `new` in every source list.
    pub fn replace_source(&mut self, old: u32, new: u32) {
        for n in &mut self.nodes {
            for s in &mut n.sources {
                if *s == old {
                    *s = new;
                }
            }
        }
    }

    /// Post-order DFS from `roots`: every producer appears before all of its
    /// consumers. Shared nodes appear once.
    pub fn post_dfs(&self, roots: &[u32]) -> Vec<u32> {
        let mut order = Vec::new();
        let mut state: BTreeMap<u32, u8> = BTreeMap::new(); // 1 in progress, 2 done
        let mut stack: Vec<(u32, usize)> = Vec::new();
        for &r in roots {
            if state.contains_key(&r) {
                continue;
            }
            stack.push((r, 0));
            state.insert(r, 1);
            while let Some(&mut (uid, ref mut next)) = stack.last_mut() {
                let srcs = &self.nodes[uid as usize].sources;
                if *next < srcs.len() {
                    let s = srcs[*next];
                    *next += 1;
                    if !state.contains_key(&s) {
                        state.insert(s, 1);
                        stack.push((s, 0));
                    }
                } else {
                    state.insert(uid, 2);
                    order.push(uid);
                    stack.pop();
                }
            }
        }
        order
    }

    pub fn reachable(&self, roots: &[u32]) -> BTreeSet<u32> {
        self.post_dfs(roots).into_iter().collect()
    }

    /// Output schema (column name set) of `uid`, when statically known.
    pub fn schema_of(&self, uid: u32) -> Option<BTreeSet<String>> {
        let n = self.node(uid);
        let src = |i: usize| -> Option<BTreeSet<String>> {
            n.sources.get(i).and_then(|&s| self.schema_of(s))
        };
        match &n.action {
            Action::Read { opts, .. } => match &opts.usecols {
                Some(u) => Some(u.iter().cloned().collect()),
                None => n.schema_hint.clone(),
            },
            Action::Filter { .. }
            | Action::DropDuplicates { .. }
            | Action::SortValues { .. }
            | Action::Head { .. }
            | Action::Fillna { .. }
            | Action::Round { .. }
            | Action::Abs
            | Action::Astype { .. }
            | Action::Explode { .. } => src(0),
            Action::GetCols { cols } => Some(cols.iter().cloned().collect()),
            Action::GetCol { col } => Some(std::iter::once(col.clone()).collect()),
            Action::SetCol { col, .. } => src(0).map(|mut s| {
                s.insert(col.clone());
                s
            }),
            Action::DropCols { cols } => src(0).map(|s| {
                s.into_iter().filter(|c| !cols.contains(c)).collect()
            }),
            Action::Rename { map } => src(0).map(|s| {
                s.into_iter()
                    .map(|c| {
                        map.iter()
                            .find(|(old, _)| old == &c)
                            .map(|(_, new)| new.clone())
                            .unwrap_or(c)
                    })
                    .collect()
            }),
            Action::Merge { on, .. } => {
                let l = src(0)?;
                let r = src(1)?;
                let mut lv: Vec<String> = l.iter().cloned().collect();
                let mut rv: Vec<String> = r.iter().cloned().collect();
                lv.sort();
                rv.sort();
                let (lp, rp) = crate::frame::ops::merge_column_plan(&lv, &rv, on);
                Some(
                    lp.into_iter()
                        .map(|(_, out)| out)
                        .chain(rp.into_iter().map(|(_, out)| out))
                        .collect(),
                )
            }
            Action::GroupByAgg { keys, col, .. } => Some(
                keys.iter()
                    .cloned()
                    .chain(std::iter::once(col.clone()))
                    .collect(),
            ),
            Action::AggScalar { .. }
            | Action::ScalarExpr { .. }
            | Action::Print { .. }
            | Action::Opaque { .. } => None,
        }
    }

    /// Columns of the node's frame input(s) that it reads.
    pub fn used_attrs(&self, uid: u32) -> AttrSet {
        let n = self.node(uid);
        let schema_or_all = |i: usize| -> AttrSet {
            match n.sources.get(i).and_then(|&s| self.schema_of(s)) {
                Some(s) => AttrSet::Cols(s),
                None => AttrSet::All,
            }
        };
        match &n.action {
            Action::Read { .. } | Action::ScalarExpr { .. } => AttrSet::empty(),
            Action::Filter { pred } => AttrSet::Cols(pred.used_columns()),
            Action::GetCols { cols } => AttrSet::from(cols.iter().cloned()),
            Action::GetCol { col } => AttrSet::from(std::iter::once(col.clone())),
            Action::SetCol { expr, .. } => AttrSet::Cols(expr.used_columns()),
            Action::DropCols { .. } | Action::Head { .. } => AttrSet::empty(),
            Action::Rename { map } => AttrSet::from(map.iter().map(|(old, _)| old.clone())),
            Action::Astype { map } => AttrSet::from(map.iter().map(|(c, _)| c.clone())),
            Action::Fillna { .. } | Action::Round { .. } | Action::Abs => schema_or_all(0),
            Action::DropDuplicates { subset } => match subset {
                Some(s) => AttrSet::from(s.iter().cloned()),
                None => schema_or_all(0),
            },
            Action::SortValues { by, .. } => AttrSet::from(by.iter().cloned()),
            Action::Explode { col } => AttrSet::from(std::iter::once(col.clone())),
            Action::Merge { .. } | Action::Print { .. } | Action::Opaque { .. } => AttrSet::All,
            Action::GroupByAgg { keys, col, .. } => {
                AttrSet::from(keys.iter().cloned().chain(std::iter::once(col.clone())))
            }
            Action::AggScalar { col, op: _ } => match col {
                Some(c) => AttrSet::from(std::iter::once(c.clone())),
                None => schema_or_all(0),
            },
        }
    }

    /// Columns the node writes, removes, or invalidates for consumers.
    pub fn modified_attrs(&self, uid: u32) -> AttrSet {
        let n = self.node(uid);
        let schema_or_all = |i: usize| -> AttrSet {
            match n.sources.get(i).and_then(|&s| self.schema_of(s)) {
                Some(s) => AttrSet::Cols(s),
                None => AttrSet::All,
            }
        };
        match &n.action {
            Action::Read { opts, .. } => match &opts.usecols {
                Some(u) => AttrSet::from(u.iter().cloned()),
                None => match &n.schema_hint {
                    Some(h) => AttrSet::Cols(h.clone()),
                    None => AttrSet::All,
                },
            },
            Action::Filter { .. }
            | Action::DropDuplicates { .. }
            | Action::SortValues { .. }
            | Action::Head { .. }
            | Action::AggScalar { .. }
            | Action::ScalarExpr { .. }
            | Action::Print { .. } => AttrSet::empty(),
            Action::GetCols { cols } => match schema_or_all(0) {
                AttrSet::All => AttrSet::All,
                AttrSet::Cols(s) => {
                    AttrSet::Cols(s.into_iter().filter(|c| !cols.contains(c)).collect())
                }
            },
            Action::GetCol { col } => match schema_or_all(0) {
                AttrSet::All => AttrSet::All,
                AttrSet::Cols(s) => {
                    AttrSet::Cols(s.into_iter().filter(|c| c != col).collect())
                }
            },
            Action::SetCol { col, .. } => AttrSet::from(std::iter::once(col.clone())),
            Action::DropCols { cols } => AttrSet::from(cols.iter().cloned()),
            Action::Rename { map } => AttrSet::from(
                map.iter()
                    .flat_map(|(old, new)| [old.clone(), new.clone()]),
            ),
            Action::Astype { map } => AttrSet::from(map.iter().map(|(c, _)| c.clone())),
            Action::Fillna { .. } | Action::Round { .. } | Action::Abs => schema_or_all(0),
            Action::Explode { col } => AttrSet::from(std::iter::once(col.clone())),
            Action::Merge { .. } | Action::GroupByAgg { .. } | Action::Opaque { .. } => {
                AttrSet::All
            }
        }
    }

    /// Text dump, one node per line, producers first. Used by `--explain`.
    pub fn dump(&self, roots: &[u32]) -> String {
        let mut out = String::new();
        for uid in self.post_dfs(roots) {
            let n = self.node(uid);
            let srcs: Vec<String> = n.sources.iter().map(|s| format!("#{s}")).collect();
            out.push_str(&format!(
                "#{uid} {}{}{}\n",
                n.action.display(),
                if srcs.is_empty() {
                    String::new()
                } else {
                    format!("  <- {}", srcs.join(", "))
                },
                if n.persist { "  [persist]" } else { "" }
            ));
        }
        out
    }

    /// Graphviz rendering of the subgraph reachable from `roots`.
    pub fn to_dot(&self, roots: &[u32], title: &str) -> String {
        let mut out = String::from("digraph task_graph {\n");
        out.push_str(&format!("  label={:?};\n  rankdir=BT;\n", title));
        let live = self.reachable(roots);
        for &uid in &live {
            let n = self.node(uid);
            let label = format!("#{uid} {}", n.action.display()).replace('"', "'");
            let extra = if n.persist { ", peripheries=2" } else { "" };
            let shape = match n.action {
                Action::Read { .. } => "cylinder",
                Action::Print { .. } => "note",
                _ => "box",
            };
            out.push_str(&format!(
                "  n{uid} [shape={shape}, label=\"{label}\"{extra}];\n"
            ));
        }
        for &uid in &live {
            for &s in &self.node(uid).sources {
                out.push_str(&format!("  n{s} -> n{uid};\n"));
            }
        }
        out.push_str("}\n");
        out
    }
}
