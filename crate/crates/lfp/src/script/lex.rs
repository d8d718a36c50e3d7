//! Line/indentation-aware lexer. Indentation deltas become Indent/Dedent
//! tokens so the parser can treat blocks structurally.

use crate::error::{Error, Result};
use crate::script::ast::FPiece;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Name(String),
    Int(i64),
    Float(f64),
    Str(String),
    FString(Vec<FPiece>),
    Assign,
    EqEq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
    Amp,
    Pipe,
    Tilde,
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Dot,
    Newline,
    Indent,
    Dedent,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Name(n) => format!("'{n}'"),
            Tok::Int(v) => format!("'{v}'"),
            Tok::Float(v) => format!("'{v:?}'"),
            Tok::Str(_) => "string literal".to_string(),
            Tok::FString(_) => "f-string".to_string(),
            Tok::Assign => "'='".to_string(),
            Tok::EqEq => "'=='".to_string(),
            Tok::Ne => "'!='".to_string(),
            Tok::Lt => "'<'".to_string(),
            Tok::Le => "'<='".to_string(),
            Tok::Gt => "'>'".to_string(),
            Tok::Ge => "'>='".to_string(),
            Tok::Plus => "'+'".to_string(),
            Tok::Minus => "'-'".to_string(),
            Tok::Star => "'*'".to_string(),
            Tok::Slash => "'/'".to_string(),
            Tok::Amp => "'&'".to_string(),
            Tok::Pipe => "'|'".to_string(),
            Tok::Tilde => "'~'".to_string(),
            Tok::LParen => "'('".to_string(),
            Tok::RParen => "')'".to_string(),
            Tok::LBracket => "'['".to_string(),
            Tok::RBracket => "']'".to_string(),
            Tok::LBrace => "'{'".to_string(),
            Tok::RBrace => "'}'".to_string(),
            Tok::Comma => "','".to_string(),
            Tok::Colon => "':'".to_string(),
            Tok::Dot => "'.'".to_string(),
            Tok::Newline => "end of line".to_string(),
            Tok::Indent => "indent".to_string(),
            Tok::Dedent => "dedent".to_string(),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub line: u32,
    pub col: u32,
}

fn err(line: u32, col: u32, msg: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        col,
        msg: msg.into(),
    }
}

struct Lexer<'a> {
    chars: Vec<char>,
    pos: usize,
    line: u32,
    col: u32,
    src: std::marker::PhantomData<&'a str>,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Lexer<'a> {
        Lexer {
            chars: src.chars().collect(),
            pos: 0,
            line: 1,
            col: 1,
            src: std::marker::PhantomData,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek2(&self) -> Option<char> {
        self.chars.get(self.pos + 1).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn string_body(&mut self, quote: char) -> Result<String> {
        let (sl, sc) = (self.line, self.col);
        let mut out = String::new();
        loop {
            match self.bump() {
                None | Some('\n') => return Err(err(sl, sc, "unterminated string literal")),
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('\\') => out.push('\\'),
                    Some('\'') => out.push('\''),
                    Some('"') => out.push('"'),
                    other => {
                        return Err(err(
                            self.line,
                            self.col,
                            format!("unsupported escape {:?}", other.unwrap_or(' ')),
                        ))
                    }
                },
                Some(c) if c == quote => return Ok(out),
                Some(c) => out.push(c),
            }
        }
    }

    fn fstring_body(&mut self, quote: char) -> Result<Vec<FPiece>> {
        let (sl, sc) = (self.line, self.col);
        let mut pieces = Vec::new();
        let mut text = String::new();
        loop {
            match self.bump() {
                None | Some('\n') => return Err(err(sl, sc, "unterminated f-string")),
                Some('\\') => match self.bump() {
                    Some('n') => text.push('\n'),
                    Some('t') => text.push('\t'),
                    Some('\\') => text.push('\\'),
                    Some('\'') => text.push('\''),
                    Some('"') => text.push('"'),
                    other => {
                        return Err(err(
                            self.line,
                            self.col,
                            format!("unsupported escape {:?}", other.unwrap_or(' ')),
                        ))
                    }
                },
                Some('{') => {
                    if !text.is_empty() {
                        pieces.push(FPiece::Text(std::mem::take(&mut text)));
                    }
                    let mut name = String::new();
                    loop {
                        match self.bump() {
                            Some('}') => break,
                            Some(c) if c.is_alphanumeric() || c == '_' => name.push(c),
                            _ => {
                                return Err(err(
                                    self.line,
                                    self.col,
                                    "expected a variable name inside {...}",
                                ))
                            }
                        }
                    }
                    if name.is_empty() {
                        return Err(err(self.line, self.col, "empty {} in f-string"));
                    }
                    pieces.push(FPiece::Var(name));
                }
                Some(c) if c == quote => {
                    if !text.is_empty() {
                        pieces.push(FPiece::Text(text));
                    }
                    return Ok(pieces);
                }
                Some(c) => text.push(c),
            }
        }
    }

    fn number(&mut self) -> Result<Tok> {
        let (sl, sc) = (self.line, self.col);
        let mut s = String::new();
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            s.push(self.bump().unwrap());
        }
        let mut is_float = false;
        if self.peek() == Some('.') && matches!(self.peek2(), Some(c) if c.is_ascii_digit()) {
            is_float = true;
            s.push(self.bump().unwrap());
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                s.push(self.bump().unwrap());
            }
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let mut k = self.pos + 1;
            let sign = matches!(self.chars.get(k), Some('+' | '-'));
            if sign {
                k += 1;
            }
            if matches!(self.chars.get(k), Some(c) if c.is_ascii_digit()) {
                is_float = true;
                s.push(self.bump().unwrap());
                if sign {
                    s.push(self.bump().unwrap());
                }
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    s.push(self.bump().unwrap());
                }
            }
        }
        if is_float {
            s.parse::<f64>()
                .map(Tok::Float)
                .map_err(|_| err(sl, sc, format!("bad float literal '{s}'")))
        } else {
            s.parse::<i64>()
                .map(Tok::Int)
                .map_err(|_| err(sl, sc, format!("integer literal '{s}' out of range")))
        }
    }
}

pub fn lex(src: &str) -> Result<Vec<Token>> {
    let mut lx = Lexer::new(src);
    let mut out: Vec<Token> = Vec::new();
    let mut indents: Vec<usize> = vec![0];

    loop {
        // start of a logical line: measure indentation
        let indent_line = lx.line;
        let mut width = 0usize;
        loop {
            match lx.peek() {
                Some(' ') => {
                    lx.bump();
                    width += 1;
                }
                Some('\t') => {
                    return Err(err(lx.line, lx.col, "tabs are not allowed in indentation"))
                }
                _ => break,
            }
        }
        match lx.peek() {
            None => break,
            Some('\n') => {
                lx.bump();
                continue;
            }
            Some('#') => {
                while !matches!(lx.peek(), None | Some('\n')) {
                    lx.bump();
                }
                continue;
            }
            _ => {}
        }
        let current = *indents.last().unwrap();
        if width > current {
            indents.push(width);
            out.push(Token {
                tok: Tok::Indent,
                line: indent_line,
                col: 1,
            });
        } else {
            while width < *indents.last().unwrap() {
                indents.pop();
                out.push(Token {
                    tok: Tok::Dedent,
                    line: indent_line,
                    col: 1,
                });
            }
            if width != *indents.last().unwrap() {
                return Err(err(indent_line, 1, "inconsistent indentation"));
            }
        }

        // tokens until end of line
        loop {
            match lx.peek() {
                None | Some('\n') => break,
                Some(' ') => {
                    lx.bump();
                    continue;
                }
                Some('#') => {
                    while !matches!(lx.peek(), None | Some('\n')) {
                        lx.bump();
                    }
                    break;
                }
                _ => {}
            }
            let (line, col) = (lx.line, lx.col);
            let c = lx.peek().unwrap();
            let tok = match c {
                '"' | '\'' => {
                    lx.bump();
                    Tok::Str(lx.string_body(c)?)
                }
                'f' if matches!(lx.peek2(), Some('"' | '\'')) => {
                    lx.bump();
                    let quote = lx.bump().unwrap();
                    Tok::FString(lx.fstring_body(quote)?)
                }
                c if c.is_ascii_digit() => lx.number()?,
                c if c.is_alphabetic() || c == '_' => {
                    let mut name = String::new();
                    while matches!(lx.peek(), Some(c) if c.is_alphanumeric() || c == '_') {
                        name.push(lx.bump().unwrap());
                    }
                    Tok::Name(name)
                }
                '=' => {
                    lx.bump();
                    if lx.peek() == Some('=') {
                        lx.bump();
                        Tok::EqEq
                    } else {
                        Tok::Assign
                    }
                }
                '!' => {
                    lx.bump();
                    if lx.peek() == Some('=') {
                        lx.bump();
                        Tok::Ne
                    } else {
                        return Err(err(line, col, "expected '=' after '!'"));
                    }
                }
                '<' => {
                    lx.bump();
                    if lx.peek() == Some('=') {
                        lx.bump();
                        Tok::Le
                    } else {
                        Tok::Lt
                    }
                }
                '>' => {
                    lx.bump();
                    if lx.peek() == Some('=') {
                        lx.bump();
                        Tok::Ge
                    } else {
                        Tok::Gt
                    }
                }
                '+' => {
                    lx.bump();
                    Tok::Plus
                }
                '-' => {
                    lx.bump();
                    Tok::Minus
                }
                '*' => {
                    lx.bump();
                    Tok::Star
                }
                '/' => {
                    lx.bump();
                    Tok::Slash
                }
                '&' => {
                    lx.bump();
                    Tok::Amp
                }
                '|' => {
                    lx.bump();
                    Tok::Pipe
                }
                '~' => {
                    lx.bump();
                    Tok::Tilde
                }
                '(' => {
                    lx.bump();
                    Tok::LParen
                }
                ')' => {
                    lx.bump();
                    Tok::RParen
                }
                '[' => {
                    lx.bump();
                    Tok::LBracket
                }
                ']' => {
                    lx.bump();
                    Tok::RBracket
                }
                '{' => {
                    lx.bump();
                    Tok::LBrace
                }
                '}' => {
                    lx.bump();
                    Tok::RBrace
                }
                ',' => {
                    lx.bump();
                    Tok::Comma
                }
                ':' => {
                    lx.bump();
                    Tok::Colon
                }
                '.' => {
                    lx.bump();
                    Tok::Dot
                }
                other => return Err(err(line, col, format!("unexpected character {other:?}"))),
            };
            out.push(Token { tok, line, col });
        }
        if matches!(out.last().map(|t| &t.tok), Some(Tok::Newline) | None) {
            // the line produced no tokens (defensive; handled above)
        } else {
            out.push(Token {
                tok: Tok::Newline,
                line: lx.line,
                col: lx.col,
            });
        }
        if lx.peek() == Some('\n') {
            lx.bump();
        }
    }

    let end = lx.line;
    while indents.len() > 1 {
        indents.pop();
        out.push(Token {
            tok: Tok::Dedent,
            line: end,
            col: 1,
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        line: end,
        col: 1,
    });
    Ok(out)
}
