//! Canonical pretty-printer: 4-space indents, one statement per line,
//! single-quoted strings, deterministic parenthesization. Emitting a parsed
//! program and reparsing it yields the same AST, and re-emitting yields the
//! same bytes.

use crate::frame::expr::BinOp;
use crate::script::ast::*;

pub fn emit(p: &ScriptProgram) -> String {
    let mut out = String::new();
    emit_stmts(&p.body, 0, &mut out);
    out
}

fn emit_stmts(stmts: &[Stmt], depth: usize, out: &mut String) {
    for s in stmts {
        emit_stmt(s, depth, out);
    }
}

fn indent(depth: usize, out: &mut String) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn emit_stmt(s: &Stmt, depth: usize, out: &mut String) {
    indent(depth, out);
    match &s.kind {
        StmtKind::Assign { var, expr } => {
            out.push_str(var);
            out.push_str(" = ");
            emit_expr(expr, 0, out);
            out.push('\n');
        }
        StmtKind::SetColumn { var, col, expr } => {
            out.push_str(var);
            out.push('[');
            emit_str(col, out);
            out.push_str("] = ");
            emit_expr(expr, 0, out);
            out.push('\n');
        }
        StmtKind::Print(arg) => {
            out.push_str("print(");
            match arg {
                PrintArg::Expr(e) => emit_expr(e, 0, out),
                PrintArg::FString(pieces) => emit_fstring(pieces, out),
            }
            out.push_str(")\n");
        }
        StmtKind::ExtCall { module, func, args } => {
            out.push_str(module);
            out.push('.');
            out.push_str(func);
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                emit_expr(a, 0, out);
            }
            out.push_str(")\n");
        }
        StmtKind::If {
            cond,
            then_body,
            else_body,
        } => {
            out.push_str("if ");
            emit_expr(cond, 0, out);
            out.push_str(":\n");
            emit_stmts(then_body, depth + 1, out);
            if !else_body.is_empty() {
                indent(depth, out);
                out.push_str("else:\n");
                emit_stmts(else_body, depth + 1, out);
            }
        }
        StmtKind::While { cond, body } => {
            out.push_str("while ");
            emit_expr(cond, 0, out);
            out.push_str(":\n");
            emit_stmts(body, depth + 1, out);
        }
        StmtKind::Flush => out.push_str("flush()\n"),
        StmtKind::EnableLazyPrint => out.push_str("enable_lazy_print()\n"),
    }
}

fn emit_str(s: &str, out: &mut String) {
    out.push('\'');
    for c in s.chars() {
        match c {
            '\'' => out.push_str("\\'"),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('\'');
}

fn emit_fstring(pieces: &[FPiece], out: &mut String) {
    out.push_str("f'");
    for p in pieces {
        match p {
            FPiece::Text(t) => {
                for c in t.chars() {
                    match c {
                        '\'' => out.push_str("\\'"),
                        '\\' => out.push_str("\\\\"),
                        '\n' => out.push_str("\\n"),
                        '\t' => out.push_str("\\t"),
                        c => out.push(c),
                    }
                }
            }
            FPiece::Var(v) => {
                out.push('{');
                out.push_str(v);
                out.push('}');
            }
        }
    }
    out.push('\'');
}

fn prec_of(op: BinOp) -> u8 {
    match op {
        BinOp::Or => 1,
        BinOp::And => 2,
        BinOp::Gt | BinOp::Ge | BinOp::Lt | BinOp::Le | BinOp::Eq | BinOp::Ne => 3,
        BinOp::Add | BinOp::Sub => 4,
        BinOp::Mul | BinOp::Div => 5,
    }
}

fn expr_prec(e: &SExpr) -> u8 {
    match e {
        SExpr::Bin { op, .. } => prec_of(*op),
        SExpr::Not(_) | SExpr::Neg(_) => 6,
        _ => 7,
    }
}

/// `min_prec` is the binding strength of the context; children that bind at
/// least that tightly print bare. Comparison operands of `&`/`|` always get
/// parentheses for readability, matching the conventional predicate style.
fn emit_expr(e: &SExpr, min_prec: u8, out: &mut String) {
    match e {
        SExpr::Int(v) => out.push_str(&v.to_string()),
        SExpr::Float(v) => out.push_str(&format!("{v:?}")),
        SExpr::Str(s) => emit_str(s, out),
        SExpr::Bool(true) => out.push_str("True"),
        SExpr::Bool(false) => out.push_str("False"),
        SExpr::Null => out.push_str("None"),
        SExpr::Var(v) => out.push_str(v),
        SExpr::List(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                emit_expr(item, 0, out);
            }
            out.push(']');
        }
        SExpr::Dict(entries) => {
            out.push('{');
            for (i, (k, v)) in entries.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                emit_str(k, out);
                out.push_str(": ");
                emit_expr(v, 0, out);
            }
            out.push('}');
        }
        SExpr::Attr { base, name } => {
            emit_expr(base, 7, out);
            out.push('.');
            out.push_str(name);
        }
        SExpr::DtDayOfWeek(base) => {
            emit_expr(base, 7, out);
            out.push_str(".dt.dayofweek");
        }
        SExpr::Index { base, index } => {
            emit_expr(base, 7, out);
            out.push('[');
            match index {
                Index::Col(c) => emit_str(c, out),
                Index::Cols(cols) => {
                    out.push('[');
                    for (i, c) in cols.iter().enumerate() {
                        if i > 0 {
                            out.push_str(", ");
                        }
                        emit_str(c, out);
                    }
                    out.push(']');
                }
                Index::Pred(p) => emit_expr(p, 0, out),
            }
            out.push(']');
        }
        SExpr::Method {
            base,
            name,
            args,
            kwargs,
        } => {
            emit_expr(base, 7, out);
            out.push('.');
            out.push_str(name);
            emit_call_args(args, kwargs, out);
        }
        SExpr::FreeCall { name, args, kwargs } => {
            out.push_str(name);
            emit_call_args(args, kwargs, out);
        }
        SExpr::Bin { op, lhs, rhs } => {
            let prec = prec_of(*op);
            let wrap = prec < min_prec;
            if wrap {
                out.push('(');
            }
            let connective = matches!(op, BinOp::And | BinOp::Or);
            emit_operand(lhs, prec, connective, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            emit_operand(rhs, prec + 1, connective, out);
            if wrap {
                out.push(')');
            }
        }
        SExpr::Not(inner) => {
            let wrap = 6 < min_prec;
            if wrap {
                out.push('(');
            }
            out.push('~');
            emit_expr(inner, 6, out);
            if wrap {
                out.push(')');
            }
        }
        SExpr::Neg(inner) => {
            let wrap = 6 < min_prec;
            if wrap {
                out.push('(');
            }
            out.push('-');
            emit_expr(inner, 6, out);
            if wrap {
                out.push(')');
            }
        }
    }
}

fn emit_operand(e: &SExpr, min_prec: u8, parent_is_connective: bool, out: &mut String) {
    if parent_is_connective && expr_prec(e) == 3 {
        out.push('(');
        emit_expr(e, 0, out);
        out.push(')');
    } else {
        emit_expr(e, min_prec, out);
    }
}

fn emit_call_args(args: &[SExpr], kwargs: &[(String, SExpr)], out: &mut String) {
    out.push('(');
    let mut first = true;
    for a in args {
        if !first {
            out.push_str(", ");
        }
        first = false;
        emit_expr(a, 0, out);
    }
    for (k, v) in kwargs {
        if !first {
            out.push_str(", ");
        }
        first = false;
        out.push_str(k);
        out.push('=');
        emit_expr(v, 0, out);
    }
    out.push(')');
}
