//! Tokenizer for the kernel DSL.

use std::fmt;

use crate::ast::Span;
use crate::error::{Diagnostic, DiagnosticKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    // keywords
    Kernel,
    Struct,
    Svm,
    IntTy,
    ByteTy,
    If,
    Else,
    For,
    ParallelFor,
    WindowFor,
    In,
    // punctuation
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Dot,
    DotDot,
    Arrow,
    Amp,
    Assign,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    Ne,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tok::Ident(s) => return write!(f, "{s}"),
            Tok::Int(v) => return write!(f, "{v}"),
            Tok::Kernel => "kernel",
            Tok::Struct => "struct",
            Tok::Svm => "svm",
            Tok::IntTy => "int",
            Tok::ByteTy => "byte",
            Tok::If => "if",
            Tok::Else => "else",
            Tok::For => "for",
            Tok::ParallelFor => "parallel_for",
            Tok::WindowFor => "window_for",
            Tok::In => "in",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::Comma => ",",
            Tok::Semi => ";",
            Tok::Dot => ".",
            Tok::DotDot => "..",
            Tok::Arrow => "->",
            Tok::Amp => "&",
            Tok::Assign => "=",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Percent => "%",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            Tok::EqEq => "==",
            Tok::Ne => "!=",
            Tok::Eof => "end of input",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, Diagnostic> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);

    while i < chars.len() {
        let c = chars[i];
        let span = Span { line, col };
        let bump = |n: usize, i: &mut usize, col: &mut u32| {
            *i += n;
            *col += n as u32;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => bump(1, &mut i, &mut col),
            '/' if chars.get(i + 1) == Some(&'/') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                col += (i - start) as u32;
                let value = if let Some(hex) = text.strip_prefix("0x") {
                    i64::from_str_radix(hex, 16).ok()
                } else {
                    text.parse::<i64>().ok()
                };
                let value = value.ok_or_else(|| {
                    Diagnostic::new(DiagnosticKind::Syntax, span, format!("malformed number `{text}`"))
                })?;
                out.push(Token { tok: Tok::Int(value), span });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                col += (i - start) as u32;
                let tok = match text.as_str() {
                    "kernel" => Tok::Kernel,
                    "struct" => Tok::Struct,
                    "svm" => Tok::Svm,
                    "int" => Tok::IntTy,
                    "byte" => Tok::ByteTy,
                    "if" => Tok::If,
                    "else" => Tok::Else,
                    "for" => Tok::For,
                    "parallel_for" => Tok::ParallelFor,
                    "window_for" => Tok::WindowFor,
                    "in" => Tok::In,
                    _ => Tok::Ident(text),
                };
                out.push(Token { tok, span });
            }
            _ => {
                let next = chars.get(i + 1).copied();
                let (tok, len) = match (c, next) {
                    ('.', Some('.')) => (Tok::DotDot, 2),
                    ('-', Some('>')) => (Tok::Arrow, 2),
                    ('<', Some('=')) => (Tok::Le, 2),
                    ('>', Some('=')) => (Tok::Ge, 2),
                    ('=', Some('=')) => (Tok::EqEq, 2),
                    ('!', Some('=')) => (Tok::Ne, 2),
                    ('(', _) => (Tok::LParen, 1),
                    (')', _) => (Tok::RParen, 1),
                    ('{', _) => (Tok::LBrace, 1),
                    ('}', _) => (Tok::RBrace, 1),
                    ('[', _) => (Tok::LBracket, 1),
                    (']', _) => (Tok::RBracket, 1),
                    (',', _) => (Tok::Comma, 1),
                    (';', _) => (Tok::Semi, 1),
                    ('.', _) => (Tok::Dot, 1),
                    ('&', _) => (Tok::Amp, 1),
                    ('=', _) => (Tok::Assign, 1),
                    ('+', _) => (Tok::Plus, 1),
                    ('-', _) => (Tok::Minus, 1),
                    ('*', _) => (Tok::Star, 1),
                    ('/', _) => (Tok::Slash, 1),
                    ('%', _) => (Tok::Percent, 1),
                    ('<', _) => (Tok::Lt, 1),
                    ('>', _) => (Tok::Gt, 1),
                    _ => {
                        return Err(Diagnostic::new(
                            DiagnosticKind::Syntax,
                            span,
                            format!("unexpected character `{c}`"),
                        ))
                    }
                };
                out.push(Token { tok, span });
                bump(len, &mut i, &mut col);
            }
        }
    }
    out.push(Token { tok: Tok::Eof, span: Span { line, col } });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_and_spans() {
        let toks = tokenize("int x = a->b;\n  y .. 0x10").unwrap();
        let kinds: Vec<_> = toks.iter().map(|t| t.tok.clone()).collect();
        assert_eq!(
            kinds,
            vec![
                Tok::IntTy,
                Tok::Ident("x".into()),
                Tok::Assign,
                Tok::Ident("a".into()),
                Tok::Arrow,
                Tok::Ident("b".into()),
                Tok::Semi,
                Tok::Ident("y".into()),
                Tok::DotDot,
                Tok::Int(16),
                Tok::Eof
            ]
        );
        assert_eq!(toks[7].span, Span { line: 2, col: 3 });
    }

    #[test]
    fn bad_character_is_reported_with_position() {
        let err = tokenize("int x = $;").unwrap_err();
        assert_eq!(err.span, Span { line: 1, col: 9 });
        assert!(err.message.contains('$'));
    }
}
