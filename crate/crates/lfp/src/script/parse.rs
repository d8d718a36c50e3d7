//! Recursive-descent parser for the script grammar. Precedence, loosest to
//! tightest: `|`, `&`, comparisons, additive, multiplicative, unary, postfix.
//! Connectives bind looser than comparisons, so `df.a > 0 & df.b < 5` reads
//! as the conjunction of the two comparisons.

use crate::error::{Error, Result};
use crate::frame::expr::BinOp;
use crate::script::ast::*;
use crate::script::lex::{lex, Tok, Token};

pub fn parse(src: &str) -> Result<ScriptProgram> {
    let tokens = lex(src)?;
    let mut p = Parser { tokens, pos: 0 };
    let body = p.statements_until(&Tok::Eof)?;
    p.expect(&Tok::Eof)?;
    Ok(ScriptProgram { body })
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, off: usize) -> &Tok {
        let i = (self.pos + off).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn here(&self) -> (u32, u32) {
        let t = &self.tokens[self.pos];
        (t.line, t.col)
    }

    fn span(&self) -> Span {
        let (line, col) = self.here();
        Span::new(line, col)
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        let (line, col) = self.here();
        Error::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn expect(&mut self, tok: &Tok) -> Result<()> {
        if self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.err(format!(
                "expected {}, found {}",
                tok.describe(),
                self.peek().describe()
            )))
        }
    }

    fn accept(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn name(&mut self) -> Result<String> {
        match self.peek().clone() {
            Tok::Name(n) => {
                self.bump();
                Ok(n)
            }
            other => Err(self.err(format!("expected a name, found {}", other.describe()))),
        }
    }

    fn str_lit(&mut self) -> Result<String> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.bump();
                Ok(s)
            }
            other => Err(self.err(format!(
                "expected a string literal, found {}",
                other.describe()
            ))),
        }
    }

    fn statements_until(&mut self, end: &Tok) -> Result<Vec<Stmt>> {
        let mut out = Vec::new();
        while self.peek() != end {
            out.push(self.statement()?);
        }
        Ok(out)
    }

    fn block(&mut self) -> Result<Vec<Stmt>> {
        self.expect(&Tok::Colon)?;
        self.expect(&Tok::Newline)?;
        self.expect(&Tok::Indent)?;
        let body = self.statements_until(&Tok::Dedent)?;
        self.expect(&Tok::Dedent)?;
        if body.is_empty() {
            return Err(self.err("empty block"));
        }
        Ok(body)
    }

    fn statement(&mut self) -> Result<Stmt> {
        let span = self.span();
        let kind = match self.peek().clone() {
            Tok::Name(n) if n == "if" => {
                self.bump();
                let cond = self.expr()?;
                let then_body = self.block()?;
                let else_body = if matches!(self.peek(), Tok::Name(k) if k == "else") {
                    self.bump();
                    self.block()?
                } else {
                    Vec::new()
                };
                StmtKind::If {
                    cond,
                    then_body,
                    else_body,
                }
            }
            Tok::Name(n) if n == "while" => {
                self.bump();
                let cond = self.expr()?;
                let body = self.block()?;
                StmtKind::While { cond, body }
            }
            Tok::Name(n) if n == "print" => {
                self.bump();
                self.expect(&Tok::LParen)?;
                let arg = if let Tok::FString(pieces) = self.peek().clone() {
                    self.bump();
                    PrintArg::FString(pieces)
                } else {
                    PrintArg::Expr(self.expr()?)
                };
                self.expect(&Tok::RParen)?;
                self.expect(&Tok::Newline)?;
                StmtKind::Print(arg)
            }
            Tok::Name(n) if n == "flush" => {
                self.bump();
                self.expect(&Tok::LParen)?;
                self.expect(&Tok::RParen)?;
                self.expect(&Tok::Newline)?;
                StmtKind::Flush
            }
            Tok::Name(n) if n == "enable_lazy_print" => {
                self.bump();
                self.expect(&Tok::LParen)?;
                self.expect(&Tok::RParen)?;
                self.expect(&Tok::Newline)?;
                StmtKind::EnableLazyPrint
            }
            Tok::Name(var) => {
                self.bump();
                match self.peek().clone() {
                    Tok::Assign => {
                        self.bump();
                        let expr = self.expr()?;
                        self.expect(&Tok::Newline)?;
                        StmtKind::Assign { var, expr }
                    }
                    Tok::LBracket => {
                        self.bump();
                        let col = self.str_lit()?;
                        self.expect(&Tok::RBracket)?;
                        self.expect(&Tok::Assign)?;
                        let expr = self.expr()?;
                        self.expect(&Tok::Newline)?;
                        StmtKind::SetColumn { var, col, expr }
                    }
                    Tok::Dot => {
                        self.bump();
                        let func = self.name()?;
                        self.expect(&Tok::LParen)?;
                        let (args, kwargs) = self.call_args()?;
                        if !kwargs.is_empty() {
                            return Err(self.err("external calls take positional arguments only"));
                        }
                        self.expect(&Tok::Newline)?;
                        StmtKind::ExtCall {
                            module: var,
                            func,
                            args,
                        }
                    }
                    other => {
                        return Err(self.err(format!(
                            "expected '=', '[' or '.' after '{var}', found {}",
                            other.describe()
                        )))
                    }
                }
            }
            other => {
                return Err(self.err(format!(
                    "expected a statement, found {}",
                    other.describe()
                )))
            }
        };
        Ok(Stmt { kind, span })
    }

    /// Arguments up to the closing paren: positional first, then kwargs.
    fn call_args(&mut self) -> Result<(Vec<SExpr>, Vec<(String, SExpr)>)> {
        let mut args = Vec::new();
        let mut kwargs: Vec<(String, SExpr)> = Vec::new();
        if self.accept(&Tok::RParen) {
            return Ok((args, kwargs));
        }
        loop {
            let is_kwarg = matches!(self.peek(), Tok::Name(_))
                && matches!(self.peek_at(1), Tok::Assign);
            if is_kwarg {
                let key = self.name()?;
                self.expect(&Tok::Assign)?;
                let value = self.expr()?;
                kwargs.push((key, value));
            } else {
                if !kwargs.is_empty() {
                    return Err(self.err("positional argument after keyword argument"));
                }
                args.push(self.expr()?);
            }
            if self.accept(&Tok::Comma) {
                continue;
            }
            self.expect(&Tok::RParen)?;
            return Ok((args, kwargs));
        }
    }

    fn expr(&mut self) -> Result<SExpr> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<SExpr> {
        let mut lhs = self.and_expr()?;
        while self.accept(&Tok::Pipe) {
            let rhs = self.and_expr()?;
            lhs = SExpr::bin(BinOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<SExpr> {
        let mut lhs = self.cmp_expr()?;
        while self.accept(&Tok::Amp) {
            let rhs = self.cmp_expr()?;
            lhs = SExpr::bin(BinOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn cmp_expr(&mut self) -> Result<SExpr> {
        let mut lhs = self.add_expr()?;
        loop {
            let op = match self.peek() {
                Tok::EqEq => BinOp::Eq,
                Tok::Ne => BinOp::Ne,
                Tok::Lt => BinOp::Lt,
                Tok::Le => BinOp::Le,
                Tok::Gt => BinOp::Gt,
                Tok::Ge => BinOp::Ge,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.add_expr()?;
            lhs = SExpr::bin(op, lhs, rhs);
        }
    }

    fn add_expr(&mut self) -> Result<SExpr> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.mul_expr()?;
            lhs = SExpr::bin(op, lhs, rhs);
        }
    }

    fn mul_expr(&mut self) -> Result<SExpr> {
        let mut lhs = self.unary_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary_expr()?;
            lhs = SExpr::bin(op, lhs, rhs);
        }
    }

    fn unary_expr(&mut self) -> Result<SExpr> {
        if self.accept(&Tok::Tilde) {
            return Ok(SExpr::Not(Box::new(self.unary_expr()?)));
        }
        if self.accept(&Tok::Minus) {
            return Ok(SExpr::Neg(Box::new(self.unary_expr()?)));
        }
        self.postfix_expr()
    }

    fn postfix_expr(&mut self) -> Result<SExpr> {
        let mut e = self.atom()?;
        loop {
            match self.peek() {
                Tok::Dot => {
                    self.bump();
                    let name = self.name()?;
                    if name == "dt" {
                        self.expect(&Tok::Dot)?;
                        let accessor = self.name()?;
                        if accessor != "dayofweek" {
                            return Err(
                                self.err(format!("unknown datetime accessor '{accessor}'"))
                            );
                        }
                        e = SExpr::DtDayOfWeek(Box::new(e));
                    } else if self.accept(&Tok::LParen) {
                        let (args, kwargs) = self.call_args()?;
                        e = SExpr::Method {
                            base: Box::new(e),
                            name,
                            args,
                            kwargs,
                        };
                    } else {
                        e = SExpr::Attr {
                            base: Box::new(e),
                            name,
                        };
                    }
                }
                Tok::LBracket => {
                    self.bump();
                    let index = self.index()?;
                    self.expect(&Tok::RBracket)?;
                    e = SExpr::Index {
                        base: Box::new(e),
                        index,
                    };
                }
                _ => return Ok(e),
            }
        }
    }

    fn index(&mut self) -> Result<Index> {
        match self.peek().clone() {
            Tok::Str(s) if matches!(self.peek_at(1), Tok::RBracket) => {
                self.bump();
                Ok(Index::Col(s))
            }
            Tok::LBracket => {
                self.bump();
                let mut cols = Vec::new();
                if !self.accept(&Tok::RBracket) {
                    loop {
                        cols.push(self.str_lit()?);
                        if self.accept(&Tok::Comma) {
                            continue;
                        }
                        self.expect(&Tok::RBracket)?;
                        break;
                    }
                }
                Ok(Index::Cols(cols))
            }
            _ => Ok(Index::Pred(Box::new(self.expr()?))),
        }
    }

    fn atom(&mut self) -> Result<SExpr> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(SExpr::Int(v))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(SExpr::Float(v))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(SExpr::Str(s))
            }
            Tok::Name(n) if n == "True" => {
                self.bump();
                Ok(SExpr::Bool(true))
            }
            Tok::Name(n) if n == "False" => {
                self.bump();
                Ok(SExpr::Bool(false))
            }
            Tok::Name(n) if n == "None" => {
                self.bump();
                Ok(SExpr::Null)
            }
            Tok::Name(n) => {
                self.bump();
                if self.accept(&Tok::LParen) {
                    let (args, kwargs) = self.call_args()?;
                    Ok(SExpr::FreeCall {
                        name: n,
                        args,
                        kwargs,
                    })
                } else {
                    Ok(SExpr::Var(n))
                }
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(&Tok::RParen)?;
                Ok(e)
            }
            Tok::LBracket => {
                self.bump();
                let mut items = Vec::new();
                if !self.accept(&Tok::RBracket) {
                    loop {
                        items.push(self.expr()?);
                        if self.accept(&Tok::Comma) {
                            continue;
                        }
                        self.expect(&Tok::RBracket)?;
                        break;
                    }
                }
                Ok(SExpr::List(items))
            }
            Tok::LBrace => {
                self.bump();
                let mut entries = Vec::new();
                if !self.accept(&Tok::RBrace) {
                    loop {
                        let key = self.str_lit()?;
                        self.expect(&Tok::Colon)?;
                        let value = self.expr()?;
                        entries.push((key, value));
                        if self.accept(&Tok::Comma) {
                            continue;
                        }
                        self.expect(&Tok::RBrace)?;
                        break;
                    }
                }
                Ok(SExpr::Dict(entries))
            }
            other => Err(self.err(format!(
                "expected an expression, found {}",
                other.describe()
            ))),
        }
    }
}
