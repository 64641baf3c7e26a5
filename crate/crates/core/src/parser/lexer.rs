use std::fmt;

use crate::parser::ParseError;
use crate::span::{FileId, Span};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Keyword(Keyword),
    Str(String),
    Int(u32),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Semi,
    Colon,
    Dot,
    DotDot,
    Comma,
    Bar,
    Star,
    Eof,
}

macro_rules! keywords {
    ($($variant:ident => $text:literal),* $(,)?) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq)]
        pub enum Keyword { $($variant),* }

        impl Keyword {
            pub fn from_str(s: &str) -> Option<Keyword> {
                match s { $($text => Some(Keyword::$variant),)* _ => None }
            }

            pub fn as_str(self) -> &'static str {
                match self { $(Keyword::$variant => $text),* }
            }
        }
    };
}

keywords! {
    System => "system",
    Style => "style",
    AllowSkip => "allow-skip",
    PortType => "porttype",
    ComponentType => "componenttype",
    ConnectorType => "connectortype",
    Port => "port",
    Many => "many",
    Role => "role",
    Accepts => "accepts",
    Fill => "fill",
    Component => "component",
    Connector => "connector",
    Impl => "impl",
    Replicas => "replicas",
    Layer => "layer",
    Stateless => "stateless",
    Seed => "seed",
    Site => "site",
    Attach => "attach",
    To => "to",
    Pipeline => "pipeline",
    Input => "input",
    Output => "output",
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Keyword(k) => format!("`{}`", k.as_str()),
            Tok::Str(_) => "string".to_string(),
            Tok::Int(n) => format!("integer `{n}`"),
            Tok::Eof => "end of input".to_string(),
            other => format!("`{other}`"),
        }
    }
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tok::Ident(s) => s.as_str(),
            Tok::Keyword(k) => k.as_str(),
            Tok::Str(_) => "\"…\"",
            Tok::Int(_) => "integer",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::Semi => ";",
            Tok::Colon => ":",
            Tok::Dot => ".",
            Tok::DotDot => "..",
            Tok::Comma => ",",
            Tok::Bar => "|",
            Tok::Star => "*",
            Tok::Eof => "<eof>",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

pub fn tokenize(file: FileId, src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < src.len() {
        let c = src[i..].chars().next().unwrap();
        let start = i;
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        if c == '#' {
            while i < src.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let single = |tok| (tok, 1);
        let (tok, len) = match c {
            '{' => single(Tok::LBrace),
            '}' => single(Tok::RBrace),
            '(' => single(Tok::LParen),
            ')' => single(Tok::RParen),
            ';' => single(Tok::Semi),
            ':' => single(Tok::Colon),
            ',' => single(Tok::Comma),
            '|' => single(Tok::Bar),
            '*' => single(Tok::Star),
            '.' if bytes.get(i + 1) == Some(&b'.') => (Tok::DotDot, 2),
            '.' => single(Tok::Dot),
            '"' => lex_string(file, src, i)?,
            c if c.is_ascii_digit() => {
                let end = src[i..]
                    .find(|c: char| !c.is_ascii_digit())
                    .map_or(src.len(), |n| i + n);
                let value = src[i..end].parse::<u32>().map_err(|_| {
                    ParseError::syntax(
                        Span::new(file, i, end),
                        vec![],
                        src[i..end].to_string(),
                        "integer literal out of range",
                    )
                })?;
                (Tok::Int(value), end - i)
            }
            c if is_ident_start(c) => {
                let end = src[i..]
                    .find(|c: char| !is_ident_continue(c))
                    .map_or(src.len(), |n| i + n);
                let word = &src[i..end];
                let tok = match Keyword::from_str(word) {
                    Some(k) => Tok::Keyword(k),
                    None => Tok::Ident(word.to_string()),
                };
                (tok, end - i)
            }
            other => {
                return Err(ParseError::syntax(
                    Span::new(file, i, i + other.len_utf8()),
                    vec![],
                    format!("`{other}`"),
                    format!("unexpected character `{other}`"),
                ))
            }
        };
        i += len;
        out.push(Token {
            tok,
            span: Span::new(file, start, i),
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        span: Span::new(file, src.len(), src.len()),
    });
    Ok(out)
}

fn lex_string(file: FileId, src: &str, start: usize) -> Result<(Tok, usize), ParseError> {
    let mut value = String::new();
    let mut chars = src[start + 1..].char_indices();
    while let Some((off, c)) = chars.next() {
        match c {
            '"' => return Ok((Tok::Str(value), off + 2)),
            '\n' => break,
            '\\' => {
                let Some((eoff, e)) = chars.next() else { break };
                let decoded = match e {
                    'n' => '\n',
                    't' => '\t',
                    'r' => '\r',
                    '0' => '\0',
                    '\\' => '\\',
                    '"' => '"',
                    _ => {
                        let at = start + 1 + off;
                        return Err(ParseError::syntax(
                            Span::new(file, at, start + 1 + eoff + e.len_utf8()),
                            vec![],
                            format!("`\\{e}`"),
                            format!("unknown escape `\\{e}`"),
                        ));
                    }
                };
                value.push(decoded);
            }
            c => value.push(c),
        }
    }
    Err(ParseError::syntax(
        Span::new(file, start, start + 1),
        vec!["`\"`".to_string()],
        "end of line".to_string(),
        "unterminated string literal",
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(src: &str) -> Vec<Tok> {
        tokenize(0, src)
            .unwrap()
            .into_iter()
            .map(|t| t.tok)
            .collect()
    }

    #[test]
    fn identifiers_may_contain_hyphens() {
        assert_eq!(
            toks("style pipes-and-filters"),
            [
                Tok::Keyword(Keyword::Style),
                Tok::Ident("pipes-and-filters".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn ranges_and_comments() {
        assert_eq!(
            toks("fill 1..* # trailing\n;"),
            [
                Tok::Keyword(Keyword::Fill),
                Tok::Int(1),
                Tok::DotDot,
                Tok::Star,
                Tok::Semi,
                Tok::Eof
            ]
        );
    }

    #[test]
    fn string_escapes() {
        assert_eq!(toks(r#""0\n\"q\"""#)[0], Tok::Str("0\n\"q\"".into()));
        assert!(tokenize(0, "\"open").is_err());
        assert!(tokenize(0, r#""\q""#).is_err());
    }

    #[test]
    fn stray_character_is_an_error() {
        let err = tokenize(0, "system S { @ }").unwrap_err();
        assert_eq!((err.span.start, err.span.end), (11, 12));
    }
}
