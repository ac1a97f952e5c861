use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::AgentId;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Term {
    Int(i64),
    /// Bare lowercase identifier, e.g. `delete`.
    Atom(String),
    Str(String),
}

impl Term {
    pub fn atom(s: impl Into<String>) -> Self {
        Term::Atom(s.into())
    }

    pub fn str(s: impl Into<String>) -> Self {
        Term::Str(s.into())
    }

    /// Text of an atom or string term.
    pub fn as_text(&self) -> Option<&str> {
        match self {
            Term::Atom(s) | Term::Str(s) => Some(s),
            Term::Int(_) => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Term::Int(i) => Some(*i),
            _ => None,
        }
    }
}

impl From<i64> for Term {
    fn from(v: i64) -> Self {
        Term::Int(v)
    }
}

fn is_atom(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Int(i) => write!(f, "{i}"),
            Term::Atom(a) => f.write_str(a),
            Term::Str(s) => {
                f.write_str("\"")?;
                for ch in s.chars() {
                    match ch {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        '\r' => f.write_str("\\r")?,
                        '\t' => f.write_str("\\t")?,
                        '|' => f.write_str("\\u007c")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
        }
    }
}

/// A belief or message content: `functor(arg, ...)[source(agent)]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub functor: String,
    pub args: Vec<Term>,
    pub source: Option<AgentId>,
}

impl Literal {
    pub fn new(functor: impl Into<String>, args: Vec<Term>) -> Self {
        Self {
            functor: functor.into(),
            args,
            source: None,
        }
    }

    pub fn with_source(mut self, source: AgentId) -> Self {
        self.source = Some(source);
        self
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn parse(text: &str) -> Result<Self, LiteralError> {
        let mut p = Parser::new(text);
        let (functor, args) = p.structure(false)?;
        let args = args
            .into_iter()
            .map(|a| a.ok_or_else(|| p.error("wildcard in a ground literal")))
            .collect::<Result<_, _>>()?;
        let source = p.annotation()?;
        p.end()?;
        Ok(Self {
            functor,
            args,
            source,
        })
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.functor)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{a}")?;
            }
            f.write_str(")")?;
        }
        if let Some(src) = &self.source {
            write!(f, "[source({src})]")?;
        }
        Ok(())
    }
}

/// Query pattern for `ask_one`: functor and arity must match, `None` args are wildcards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub functor: String,
    pub args: Vec<Option<Term>>,
}

impl Pattern {
    pub fn new(functor: impl Into<String>, args: Vec<Option<Term>>) -> Self {
        Self {
            functor: functor.into(),
            args,
        }
    }

    /// Parses `functor(arg, _, ...)`.
    pub fn parse(text: &str) -> Result<Self, LiteralError> {
        let mut p = Parser::new(text);
        let (functor, args) = p.structure(true)?;
        p.end()?;
        Ok(Self { functor, args })
    }

    pub fn matches(&self, lit: &Literal) -> bool {
        self.functor == lit.functor
            && self.args.len() == lit.args.len()
            && self
                .args
                .iter()
                .zip(&lit.args)
                .all(|(p, a)| p.as_ref().is_none_or(|p| p == a))
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.functor)?;
        if !self.args.is_empty() {
            let args: Vec<String> = self
                .args
                .iter()
                .map(|a| a.as_ref().map_or_else(|| "_".to_string(), ToString::to_string))
                .collect();
            write!(f, "({})", args.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("literal parse error at byte {pos}: {message}")]
pub struct LiteralError {
    pub pos: usize,
    pub message: String,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn error(&self, message: &str) -> LiteralError {
        LiteralError {
            pos: self.pos,
            message: message.to_string(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn expect(&mut self, want: char) -> Result<(), LiteralError> {
        self.skip_ws();
        match self.bump() {
            Some(c) if c == want => Ok(()),
            _ => Err(self.error(&format!("expected `{want}`"))),
        }
    }

    fn ident(&mut self) -> Result<String, LiteralError> {
        self.skip_ws();
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_')
        {
            self.bump();
        }
        let s = &self.src[start..self.pos];
        if s.is_empty() {
            return Err(self.error("expected identifier"));
        }
        Ok(s.to_string())
    }

    fn structure(&mut self, allow_wildcards: bool) -> Result<(String, Vec<Option<Term>>), LiteralError> {
        let functor = self.ident()?;
        if !is_atom(&functor) {
            return Err(self.error("functor must start with a lowercase letter"));
        }
        let mut args = Vec::new();
        self.skip_ws();
        if self.peek() == Some('(') {
            self.bump();
            loop {
                args.push(self.term(allow_wildcards)?);
                self.skip_ws();
                match self.bump() {
                    Some(',') => continue,
                    Some(')') => break,
                    _ => return Err(self.error("expected `,` or `)`")),
                }
            }
        }
        Ok((functor, args))
    }

    fn term(&mut self, allow_wildcards: bool) -> Result<Option<Term>, LiteralError> {
        self.skip_ws();
        match self.peek() {
            Some('"') => {
                self.bump();
                let mut s = String::new();
                loop {
                    match self.bump() {
                        None => return Err(self.error("unterminated string")),
                        Some('"') => break,
                        Some('\\') => match self.bump() {
                            Some('n') => s.push('\n'),
                            Some('r') => s.push('\r'),
                            Some('t') => s.push('\t'),
                            Some('"') => s.push('"'),
                            Some('\\') => s.push('\\'),
                            Some('u') => {
                                let hex = self.src.get(self.pos..self.pos + 4);
                                let ch = hex
                                    .and_then(|h| u32::from_str_radix(h, 16).ok())
                                    .and_then(char::from_u32)
                                    .ok_or_else(|| self.error("bad \\u escape"))?;
                                self.pos += 4;
                                s.push(ch);
                            }
                            _ => return Err(self.error("bad escape")),
                        },
                        Some(c) => s.push(c),
                    }
                }
                Ok(Some(Term::Str(s)))
            }
            Some(c) if c == '-' || c.is_ascii_digit() => {
                let start = self.pos;
                self.bump();
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.bump();
                }
                self.src[start..self.pos]
                    .parse()
                    .map(|i| Some(Term::Int(i)))
                    .map_err(|_| self.error("bad integer"))
            }
            _ => {
                let id = self.ident()?;
                if id == "_" {
                    if allow_wildcards {
                        return Ok(None);
                    }
                    return Err(self.error("wildcard not allowed here"));
                }
                if !is_atom(&id) {
                    return Err(self.error("atoms start with a lowercase letter"));
                }
                Ok(Some(Term::Atom(id)))
            }
        }
    }

    fn annotation(&mut self) -> Result<Option<AgentId>, LiteralError> {
        self.skip_ws();
        if self.peek() != Some('[') {
            return Ok(None);
        }
        self.bump();
        if self.ident()? != "source" {
            return Err(self.error("only source(..) annotations are supported"));
        }
        self.expect('(')?;
        let agent = self.ident()?;
        self.expect(')')?;
        self.expect(']')?;
        Ok(Some(AgentId::new(agent)))
    }

    fn end(&mut self) -> Result<(), LiteralError> {
        self.skip_ws();
        if self.pos == self.src.len() {
            Ok(())
        } else {
            Err(self.error("trailing input"))
        }
    }
}
