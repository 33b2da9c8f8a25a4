//! C-subset frontend: source units, tokenizer, parser and comment stripping.

pub mod ast;
pub mod lexer;
mod parser;

pub use ast::{AstKind, AstNode, Span};
pub use parser::parse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrontendError {
    #[error("syntax error at {line}:{column} near `{token}`: {message}")]
    Syntax { line: u32, column: u32, token: String, message: String },
    #[error("unsupported construct at {line}:{column} (`{construct}`): {message}")]
    Unsupported { line: u32, column: u32, construct: String, message: String },
    #[error("source unit is empty")]
    EmptyUnit,
}

/// A unit of C source. Newlines are normalized to LF on construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceUnit {
    pub id: String,
    pub text: String,
    pub path: Option<String>,
}

impl SourceUnit {
    pub fn new(id: impl Into<String>, text: impl AsRef<str>) -> Self {
        let text = text.as_ref().replace("\r\n", "\n").replace('\r', "\n");
        SourceUnit { id: id.into(), text, path: None }
    }

    pub fn with_path(mut self, path: impl Into<String>) -> Self {
        self.path = Some(path.into());
        self
    }

    /// Same id and path, different text.
    pub fn with_text(&self, text: impl AsRef<str>) -> Self {
        SourceUnit { text: SourceUnit::new("", text).text, ..self.clone() }
    }

    pub fn line_count(&self) -> usize {
        self.text.lines().count()
    }
}

/// Outcome of comment stripping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stripped {
    pub unit: SourceUnit,
    /// A block comment ran to end of text.
    pub unterminated_comment: bool,
}

/// Replace every comment byte except newlines with a space.
pub fn strip_comments(unit: &SourceUnit) -> SourceUnit {
    strip_comments_report(unit).unit
}

pub fn strip_comments_report(unit: &SourceUnit) -> Stripped {
    let (text, unterminated_comment) = strip_str(&unit.text);
    Stripped { unit: unit.with_text(text), unterminated_comment }
}

/// Comment stripping on raw text; the flag reports an unterminated block comment.
///
/// String and character literals are respected; an unterminated literal is
/// copied verbatim to end of line.
pub fn strip_str(text: &str) -> (String, bool) {
    let b = text.as_bytes();
    let mut out = b.to_vec();
    let mut i = 0;
    let mut unterminated = false;
    let blank = |out: &mut Vec<u8>, from: usize, to: usize| {
        for x in &mut out[from..to] {
            if *x != b'\n' {
                *x = b' ';
            }
        }
    };
    while i < b.len() {
        match b[i] {
            b'"' | b'\'' => {
                let q = b[i];
                i += 1;
                while i < b.len() && b[i] != q && b[i] != b'\n' {
                    i += if b[i] == b'\\' { 2 } else { 1 };
                }
                i += 1;
            }
            b'/' if b.get(i + 1) == Some(&b'/') => {
                let s = i;
                while i < b.len() && b[i] != b'\n' {
                    i += 1;
                }
                blank(&mut out, s, i);
            }
            b'/' if b.get(i + 1) == Some(&b'*') => {
                let s = i;
                i += 2;
                loop {
                    if i >= b.len() {
                        unterminated = true;
                        break;
                    }
                    if b[i] == b'*' && b.get(i + 1) == Some(&b'/') {
                        i += 2;
                        break;
                    }
                    i += 1;
                }
                let e = i.min(b.len());
                blank(&mut out, s, e);
            }
            _ => i += 1,
        }
    }
    // Only whole comments (ASCII-delimited) were blanked, so UTF-8 stays valid.
    (String::from_utf8(out).expect("blanking comments preserves UTF-8"), unterminated)
}
