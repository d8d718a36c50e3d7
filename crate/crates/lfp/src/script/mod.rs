//! Script front end: AST, lexer, parser, canonical emitter, and the
//! source-to-source rewrite passes.

pub mod ast;
pub mod emit;
pub mod lex;
pub mod parse;
pub mod rewrite;
