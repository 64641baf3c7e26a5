//! Recursive-descent parser.
//!
//! Grammar:
//!
//! ```text
//! system    ::= "system" IDENT ("style" IDENT "allow-skip"?)? "{" item* "}"
//! item      ::= typedef | inst | conn | attach | pipeline | iodecl
//! typedef   ::= "porttype" IDENT ";"
//!             | "componenttype" IDENT "{" portdecl* "}"
//!             | "connectortype" IDENT "{" roledecl* "}"
//! portdecl  ::= "port" IDENT ":" IDENT "many"? ";"
//! roledecl  ::= "role" IDENT "accepts" IDENT ("," IDENT)* "fill" INT ".." (INT | "*") ";"
//! inst      ::= "component" IDENT ":" IDENT attr* ";"
//! attr      ::= "impl" STRING | "replicas" INT | "layer" INT | "stateless"
//!             | "seed" STRING | "site" STRING
//! conn      ::= "connector" IDENT ":" IDENT ";"
//! attach    ::= "attach" IDENT "." IDENT "to" IDENT "." IDENT ";"
//! pipeline  ::= "pipeline" IDENT ":" "input" ("|" IDENT "(" ")")* "|" "output" ";"
//! iodecl    ::= ("input" | "output") STRING ";"
//! ```
//!
//! A library file is a bare sequence of `typedef`s.

use crate::model::ExternalStream;
use crate::parser::ast::*;
use crate::parser::lexer::{tokenize, Keyword, Tok, Token};
use crate::parser::ParseError;
use crate::span::{FileId, Span};

pub const MAX_INPUT: usize = 1 << 20;

pub fn parse(text: &str) -> Result<SystemAst, ParseError> {
    parse_file(0, text)
}

pub fn parse_file(file: FileId, text: &str) -> Result<SystemAst, ParseError> {
    let mut p = Parser::new(file, text)?;
    let ast = p.system()?;
    p.expect(Tok::Eof)?;
    Ok(ast)
}

pub fn parse_library(file: FileId, text: &str) -> Result<LibraryAst, ParseError> {
    let mut p = Parser::new(file, text)?;
    let mut items = Vec::new();
    loop {
        match p.peek() {
            Tok::Eof => break,
            Tok::Keyword(Keyword::PortType | Keyword::ComponentType | Keyword::ConnectorType) => {
                items.push(p.typedef()?)
            }
            _ => return Err(p.unexpected(&["`porttype`", "`componenttype`", "`connectortype`"])),
        }
    }
    Ok(LibraryAst { items })
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

fn kw(k: Keyword) -> Tok {
    Tok::Keyword(k)
}

fn expect_name(tok: &Tok) -> String {
    match tok {
        Tok::Keyword(k) => format!("`{}`", k.as_str()),
        Tok::Ident(_) => "identifier".to_string(),
        Tok::Str(_) => "string".to_string(),
        Tok::Int(_) => "integer".to_string(),
        Tok::Eof => "end of input".to_string(),
        other => format!("`{other}`"),
    }
}

impl Parser {
    fn new(file: FileId, text: &str) -> Result<Self, ParseError> {
        if text.len() > MAX_INPUT {
            return Err(ParseError::oversize(file, text.len()));
        }
        Ok(Parser {
            tokens: tokenize(file, text)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn current(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn prev_span(&self) -> Span {
        self.tokens[self.pos.saturating_sub(1)].span
    }

    fn unexpected(&self, expected: &[&str]) -> ParseError {
        let t = self.current();
        let expected: Vec<String> = expected.iter().map(|s| s.to_string()).collect();
        let message = format!(
            "expected {}, found {}",
            join_expected(&expected),
            t.tok.describe()
        );
        ParseError::syntax(t.span, expected, t.tok.describe(), message)
    }

    fn eat(&mut self, tok: Tok) -> bool {
        if *self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<Span, ParseError> {
        if *self.peek() == tok {
            Ok(self.bump().span)
        } else {
            Err(self.unexpected(&[&expect_name(&tok)]))
        }
    }

    fn ident(&mut self) -> Result<Ident, ParseError> {
        match self.peek() {
            Tok::Ident(_) => {
                let t = self.bump();
                let Tok::Ident(text) = t.tok else {
                    unreachable!()
                };
                Ok(Ident { text, span: t.span })
            }
            _ => Err(self.unexpected(&["identifier"])),
        }
    }

    fn string(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Tok::Str(_) => {
                let Tok::Str(s) = self.bump().tok else {
                    unreachable!()
                };
                Ok(s)
            }
            _ => Err(self.unexpected(&["string"])),
        }
    }

    fn int(&mut self) -> Result<u32, ParseError> {
        match *self.peek() {
            Tok::Int(n) => {
                self.bump();
                Ok(n)
            }
            _ => Err(self.unexpected(&["integer"])),
        }
    }

    fn system(&mut self) -> Result<SystemAst, ParseError> {
        let start = self.expect(kw(Keyword::System))?;
        let name = self.ident()?;
        let mut style = None;
        let mut allow_skip = false;
        if self.eat(kw(Keyword::Style)) {
            style = Some(self.ident()?);
            allow_skip = self.eat(kw(Keyword::AllowSkip));
        }
        self.expect(Tok::LBrace)?;
        let mut items = Vec::new();
        loop {
            let item = match self.peek() {
                Tok::RBrace => break,
                Tok::Keyword(
                    Keyword::PortType | Keyword::ComponentType | Keyword::ConnectorType,
                ) => Item::Type(self.typedef()?),
                Tok::Keyword(Keyword::Component) => Item::Component(self.component()?),
                Tok::Keyword(Keyword::Connector) => Item::Connector(self.connector()?),
                Tok::Keyword(Keyword::Attach) => Item::Attach(self.attach()?),
                Tok::Keyword(Keyword::Pipeline) => Item::Pipeline(self.pipeline()?),
                Tok::Keyword(Keyword::Input | Keyword::Output) => Item::Io(self.iodecl()?),
                _ => {
                    return Err(self.unexpected(&[
                        "`}`",
                        "`porttype`",
                        "`componenttype`",
                        "`connectortype`",
                        "`component`",
                        "`connector`",
                        "`attach`",
                        "`pipeline`",
                        "`input`",
                        "`output`",
                    ]))
                }
            };
            items.push(item);
        }
        let end = self.expect(Tok::RBrace)?;
        Ok(SystemAst {
            name,
            style,
            allow_skip,
            items,
            span: start.to(end),
        })
    }

    fn typedef(&mut self) -> Result<TypeDef, ParseError> {
        let start = self.current().span;
        match self.bump().tok {
            Tok::Keyword(Keyword::PortType) => {
                let name = self.ident()?;
                let end = self.expect(Tok::Semi)?;
                Ok(TypeDef::Port {
                    name,
                    span: start.to(end),
                })
            }
            Tok::Keyword(Keyword::ComponentType) => {
                let name = self.ident()?;
                self.expect(Tok::LBrace)?;
                let mut ports = Vec::new();
                while *self.peek() != Tok::RBrace {
                    if *self.peek() != kw(Keyword::Port) {
                        return Err(self.unexpected(&["`port`", "`}`"]));
                    }
                    ports.push(self.port_decl()?);
                }
                let end = self.expect(Tok::RBrace)?;
                Ok(TypeDef::Component(ComponentTypeDecl {
                    name,
                    ports,
                    span: start.to(end),
                }))
            }
            Tok::Keyword(Keyword::ConnectorType) => {
                let name = self.ident()?;
                self.expect(Tok::LBrace)?;
                let mut roles = Vec::new();
                while *self.peek() != Tok::RBrace {
                    if *self.peek() != kw(Keyword::Role) {
                        return Err(self.unexpected(&["`role`", "`}`"]));
                    }
                    roles.push(self.role_decl()?);
                }
                let end = self.expect(Tok::RBrace)?;
                Ok(TypeDef::Connector(ConnectorTypeDecl {
                    name,
                    roles,
                    span: start.to(end),
                }))
            }
            _ => unreachable!("typedef called on non-typedef token"),
        }
    }

    fn port_decl(&mut self) -> Result<PortDecl, ParseError> {
        let start = self.expect(kw(Keyword::Port))?;
        let name = self.ident()?;
        self.expect(Tok::Colon)?;
        let port_type = self.ident()?;
        let many = self.eat(kw(Keyword::Many));
        let end = if many {
            self.expect(Tok::Semi)?
        } else if *self.peek() == Tok::Semi {
            self.bump().span
        } else {
            return Err(self.unexpected(&["`many`", "`;`"]));
        };
        Ok(PortDecl {
            name,
            port_type,
            many,
            span: start.to(end),
        })
    }

    fn role_decl(&mut self) -> Result<RoleDecl, ParseError> {
        let start = self.expect(kw(Keyword::Role))?;
        let name = self.ident()?;
        self.expect(kw(Keyword::Accepts))?;
        let mut accepts = vec![self.ident()?];
        loop {
            match self.peek() {
                Tok::Comma => {
                    self.bump();
                    accepts.push(self.ident()?);
                }
                Tok::Keyword(Keyword::Fill) => break,
                _ => return Err(self.unexpected(&["`,`", "`fill`"])),
            }
        }
        self.expect(kw(Keyword::Fill))?;
        let min = self.int()?;
        self.expect(Tok::DotDot)?;
        let max = match self.peek() {
            Tok::Star => {
                self.bump();
                None
            }
            Tok::Int(_) => Some(self.int()?),
            _ => return Err(self.unexpected(&["integer", "`*`"])),
        };
        let end = self.expect(Tok::Semi)?;
        Ok(RoleDecl {
            name,
            accepts,
            min,
            max,
            span: start.to(end),
        })
    }

    fn component(&mut self) -> Result<ComponentDecl, ParseError> {
        let start = self.expect(kw(Keyword::Component))?;
        let name = self.ident()?;
        self.expect(Tok::Colon)?;
        let type_name = self.ident()?;
        let mut attrs = Vec::new();
        loop {
            let at = self.current().span;
            let kind = match self.peek() {
                Tok::Semi => break,
                Tok::Keyword(Keyword::Impl) => {
                    self.bump();
                    AttrKind::Impl(self.string()?)
                }
                Tok::Keyword(Keyword::Replicas) => {
                    self.bump();
                    AttrKind::Replicas(self.int()?)
                }
                Tok::Keyword(Keyword::Layer) => {
                    self.bump();
                    AttrKind::Layer(self.int()?)
                }
                Tok::Keyword(Keyword::Stateless) => {
                    self.bump();
                    AttrKind::Stateless
                }
                Tok::Keyword(Keyword::Seed) => {
                    self.bump();
                    AttrKind::Seed(self.string()?)
                }
                Tok::Keyword(Keyword::Site) => {
                    self.bump();
                    AttrKind::Site(self.string()?)
                }
                _ => {
                    return Err(self.unexpected(&[
                        "`impl`",
                        "`replicas`",
                        "`layer`",
                        "`stateless`",
                        "`seed`",
                        "`site`",
                        "`;`",
                    ]))
                }
            };
            attrs.push(Attr {
                kind,
                span: at.to(self.prev_span()),
            });
        }
        let end = self.expect(Tok::Semi)?;
        Ok(ComponentDecl {
            name,
            type_name,
            attrs,
            span: start.to(end),
        })
    }

    fn connector(&mut self) -> Result<ConnectorDecl, ParseError> {
        let start = self.expect(kw(Keyword::Connector))?;
        let name = self.ident()?;
        self.expect(Tok::Colon)?;
        let type_name = self.ident()?;
        let end = self.expect(Tok::Semi)?;
        Ok(ConnectorDecl {
            name,
            type_name,
            span: start.to(end),
        })
    }

    fn attach(&mut self) -> Result<AttachDecl, ParseError> {
        let start = self.expect(kw(Keyword::Attach))?;
        let instance = self.ident()?;
        self.expect(Tok::Dot)?;
        let port = self.ident()?;
        self.expect(kw(Keyword::To))?;
        let connector = self.ident()?;
        self.expect(Tok::Dot)?;
        let role = self.ident()?;
        let end = self.expect(Tok::Semi)?;
        Ok(AttachDecl {
            instance,
            port,
            connector,
            role,
            span: start.to(end),
        })
    }

    fn pipeline(&mut self) -> Result<PipelineDecl, ParseError> {
        let start = self.expect(kw(Keyword::Pipeline))?;
        let name = self.ident()?;
        self.expect(Tok::Colon)?;
        self.expect(kw(Keyword::Input))?;
        let mut stages = Vec::new();
        loop {
            self.expect(Tok::Bar)?;
            match self.peek() {
                Tok::Keyword(Keyword::Output) => {
                    self.bump();
                    break;
                }
                Tok::Ident(_) => {
                    let stage = self.ident()?;
                    self.expect(Tok::LParen)?;
                    if *self.peek() != Tok::RParen {
                        let mut err = self.unexpected(&["`)`"]);
                        err.message = "pipeline stages take no arguments; expected `)`".to_string();
                        return Err(err);
                    }
                    self.bump();
                    stages.push(stage);
                }
                _ => return Err(self.unexpected(&["identifier", "`output`"])),
            }
        }
        let end = self.expect(Tok::Semi)?;
        Ok(PipelineDecl {
            name,
            stages,
            span: start.to(end),
        })
    }

    fn iodecl(&mut self) -> Result<IoDecl, ParseError> {
        let first = self.bump();
        let stream = match first.tok {
            Tok::Keyword(Keyword::Input) => ExternalStream::Input,
            _ => ExternalStream::Output,
        };
        let path = self.string()?;
        let end = self.expect(Tok::Semi)?;
        Ok(IoDecl {
            stream,
            path,
            span: first.span.to(end),
        })
    }
}

fn join_expected(expected: &[String]) -> String {
    match expected {
        [] => "something else".to_string(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} or {}", init.join(", "), last),
    }
}
