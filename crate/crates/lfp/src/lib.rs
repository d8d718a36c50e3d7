//! Lazy dataframe engine with a small scripting front end.
//!
//! Programs build a task graph instead of executing eagerly; the graph is
//! optimized (predicate pushdown, dead-operation elimination, reuse marking,
//! deferred prints) and then run by an in-memory or streaming backend.
//! A companion static analysis of the script computes which columns each
//! statement can still touch and feeds source-to-source rewrites that narrow
//! reads, prune drops, and defer prints.

pub mod canon;
pub mod cli;
pub mod dataflow;
pub mod error;
pub mod exec;
pub mod frame;
pub mod graph;
pub mod interp;
pub mod meta;
pub mod optimize;
pub mod reference;
pub mod script;

pub use error::{Error, Result};

