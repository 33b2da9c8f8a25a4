//! Tokenizer for the supported C subset.
//!
//! Comments and preprocessor directives are kept as tokens so callers can
//! decide whether to surface them.

use super::FrontendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokKind {
    Ident,
    Number,
    Char,
    Str,
    Punct,
    LineComment,
    BlockComment,
    Directive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokKind,
    pub start: usize,
    pub end: usize,
    pub line: u32,
    pub col: u32,
    pub end_line: u32,
}

impl Token {
    pub fn text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.start..self.end]
    }

    pub fn is_comment(&self) -> bool {
        matches!(self.kind, TokKind::LineComment | TokKind::BlockComment)
    }
}

/// Result of lexing: tokens plus non-fatal diagnostics.
#[derive(Debug, Clone, Default)]
pub struct Lexed {
    pub tokens: Vec<Token>,
    pub unterminated_comment: bool,
}

const PUNCTS: &[&str] = &[
    "...", "<<=", ">>=", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "+=", "-=", "*=", "/=",
    "%=", "&=", "|=", "^=", "##", "{", "}", "[", "]", "(", ")", ";", ":", ",", ".", "?", "~", "!", "+", "-", "*", "/",
    "%", "<", ">", "=", "&", "|", "^", "#",
];

struct Cursor<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    line: u32,
    line_start: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self, k: usize) -> Option<u8> {
        self.bytes.get(self.pos + k).copied()
    }

    fn bump(&mut self) {
        if self.bytes[self.pos] == b'\n' {
            self.line += 1;
            self.line_start = self.pos + 1;
        }
        self.pos += 1;
    }

    fn col(&self) -> u32 {
        (self.src[self.line_start..self.pos].chars().count() + 1) as u32
    }

    fn at_line_start(&self) -> bool {
        self.bytes[self.line_start..self.pos].iter().all(|b| *b == b' ' || *b == b'\t')
    }

    fn error(&self, message: &str) -> FrontendError {
        let end = self.src[self.pos..].char_indices().nth(1).map(|(i, _)| self.pos + i).unwrap_or(self.src.len());
        FrontendError::Syntax {
            line: self.line,
            column: self.col(),
            token: self.src[self.pos..end].to_string(),
            message: message.to_string(),
        }
    }
}

/// Tokenize `src`. Fails on unterminated string/char literals and on
/// characters outside the subset's alphabet.
pub fn lex(src: &str) -> Result<Lexed, FrontendError> {
    let mut c = Cursor { src, bytes: src.as_bytes(), pos: 0, line: 1, line_start: 0 };
    let mut out = Lexed::default();
    while c.pos < c.bytes.len() {
        let b = c.bytes[c.pos];
        if b.is_ascii_whitespace() {
            c.bump();
            continue;
        }
        let (start, line, col) = (c.pos, c.line, c.col());
        let kind = if b == b'/' && c.peek(1) == Some(b'/') {
            while c.pos < c.bytes.len() && c.bytes[c.pos] != b'\n' {
                c.bump();
            }
            TokKind::LineComment
        } else if b == b'/' && c.peek(1) == Some(b'*') {
            c.bump();
            c.bump();
            loop {
                if c.pos >= c.bytes.len() {
                    out.unterminated_comment = true;
                    break;
                }
                if c.bytes[c.pos] == b'*' && c.peek(1) == Some(b'/') {
                    c.bump();
                    c.bump();
                    break;
                }
                c.bump();
            }
            TokKind::BlockComment
        } else if b == b'#' && c.at_line_start() {
            lex_directive(&mut c)?;
            TokKind::Directive
        } else if b.is_ascii_alphabetic() || b == b'_' {
            while c.pos < c.bytes.len() && (c.bytes[c.pos].is_ascii_alphanumeric() || c.bytes[c.pos] == b'_') {
                c.bump();
            }
            let word = &src[start..c.pos];
            match c.peek(0) {
                Some(q @ (b'"' | b'\'')) if matches!(word, "L" | "u" | "U" | "u8") => {
                    lex_quoted(&mut c, q)?;
                    if q == b'"' {
                        TokKind::Str
                    } else {
                        TokKind::Char
                    }
                }
                _ => TokKind::Ident,
            }
        } else if b.is_ascii_digit() || (b == b'.' && c.peek(1).is_some_and(|d| d.is_ascii_digit())) {
            lex_number(&mut c);
            TokKind::Number
        } else if b == b'"' {
            lex_quoted(&mut c, b'"')?;
            TokKind::Str
        } else if b == b'\'' {
            lex_quoted(&mut c, b'\'')?;
            TokKind::Char
        } else if let Some(p) = PUNCTS.iter().find(|p| src[c.pos..].starts_with(**p)) {
            for _ in 0..p.len() {
                c.bump();
            }
            TokKind::Punct
        } else if b == b'\\' && c.peek(1) == Some(b'\n') {
            // stray line continuation outside a directive
            c.bump();
            c.bump();
            continue;
        } else {
            return Err(c.error("unexpected character"));
        };
        out.tokens.push(Token { kind, start, end: c.pos, line, col, end_line: c.line });
    }
    Ok(out)
}

fn lex_number(c: &mut Cursor<'_>) {
    let mut prev = 0u8;
    while let Some(b) = c.peek(0) {
        let exp_sign = (b == b'+' || b == b'-') && matches!(prev, b'e' | b'E' | b'p' | b'P');
        if b.is_ascii_alphanumeric() || b == b'_' || b == b'.' || exp_sign {
            prev = b;
            c.bump();
        } else {
            break;
        }
    }
}

fn lex_quoted(c: &mut Cursor<'_>, quote: u8) -> Result<(), FrontendError> {
    let open = (c.pos, c.line, c.line_start);
    c.bump();
    loop {
        match c.peek(0) {
            None | Some(b'\n') => {
                c.pos = open.0;
                c.line = open.1;
                c.line_start = open.2;
                return Err(c.error(if quote == b'"' {
                    "unterminated string literal"
                } else {
                    "unterminated character literal"
                }));
            }
            Some(b'\\') => {
                c.bump();
                if c.pos < c.bytes.len() {
                    c.bump();
                }
            }
            Some(q) if q == quote => {
                c.bump();
                return Ok(());
            }
            Some(_) => c.bump(),
        }
    }
}

/// Consume a directive up to end of line, honoring backslash continuations
/// and stopping before a trailing comment.
fn lex_directive(c: &mut Cursor<'_>) -> Result<(), FrontendError> {
    while let Some(b) = c.peek(0) {
        match b {
            b'\n' => break,
            b'\\' if c.peek(1) == Some(b'\n') => {
                c.bump();
                c.bump();
            }
            b'/' if matches!(c.peek(1), Some(b'/') | Some(b'*')) => break,
            b'"' => lex_quoted(c, b'"')?,
            _ => c.bump(),
        }
    }
    Ok(())
}
