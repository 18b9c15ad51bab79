//! Parser for the one-line query form
//! `SELECT (AVG|SUM) ( IDENT ) FROM PATH PRECISION NUMBER [CONFIDENCE NUMBER]`.
//!
//! Keywords are case-insensitive. Error positions are byte offsets into the input.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CONFIDENCE: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Aggregate {
    Avg,
    Sum,
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregate::Avg => "AVG",
            Aggregate::Sum => "SUM",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub aggregate: Aggregate,
    pub column: String,
    pub dataset: PathBuf,
    pub precision: f64,
    pub confidence: f64,
}

impl FromStr for Query {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_query(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok<'a> {
    Word(&'a str),
    LParen,
    RParen,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    /// Next token and its start offset; `None` at end of input.
    fn next(&mut self) -> Option<(usize, Tok<'a>)> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.src[start..];
        let c = rest.chars().next()?;
        match c {
            '(' => {
                self.pos += 1;
                Some((start, Tok::LParen))
            }
            ')' => {
                self.pos += 1;
                Some((start, Tok::RParen))
            }
            _ => {
                let len = rest
                    .find(|ch: char| ch.is_whitespace() || ch == '(' || ch == ')')
                    .unwrap_or(rest.len());
                self.pos += len;
                Some((start, Tok::Word(&rest[..len])))
            }
        }
    }

    fn syntax(&self, position: usize, message: impl Into<String>) -> Error {
        Error::Syntax {
            position,
            message: message.into(),
        }
    }

    fn expect_word(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.next() {
            Some((p, Tok::Word(w))) => Ok((p, w)),
            Some((p, _)) => Err(self.syntax(p, format!("expected {what}"))),
            None => Err(self.syntax(self.src.len(), format!("expected {what}, found end of input"))),
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        let (p, w) = self.expect_word(kw)?;
        if w.eq_ignore_ascii_case(kw) {
            Ok(())
        } else {
            Err(self.syntax(p, format!("expected {kw}, found '{w}'")))
        }
    }

    fn expect(&mut self, tok: Tok<'static>, what: &str) -> Result<()> {
        match self.next() {
            Some((_, t)) if t == tok => Ok(()),
            Some((p, _)) => Err(self.syntax(p, format!("expected {what}"))),
            None => Err(self.syntax(self.src.len(), format!("expected {what}, found end of input"))),
        }
    }

    fn number(&mut self, what: &str) -> Result<(usize, f64)> {
        let (p, w) = self.expect_word(what)?;
        w.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .map(|x| (p, x))
            .ok_or_else(|| self.syntax(p, format!("expected a number for {what}, found '{w}'")))
    }
}

pub fn parse_query(text: &str) -> Result<Query> {
    let mut lx = Lexer { src: text, pos: 0 };
    lx.expect_keyword("SELECT")?;
    let (p, agg) = lx.expect_word("AVG or SUM")?;
    let aggregate = if agg.eq_ignore_ascii_case("AVG") {
        Aggregate::Avg
    } else if agg.eq_ignore_ascii_case("SUM") {
        Aggregate::Sum
    } else {
        return Err(lx.syntax(p, format!("unsupported aggregate '{agg}'")));
    };
    lx.expect(Tok::LParen, "'('")?;
    let (p, column) = lx.expect_word("a column name")?;
    let ident = column.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
        && column.chars().all(|c| c.is_alphanumeric() || c == '_');
    if !ident {
        return Err(lx.syntax(p, format!("invalid column name '{column}'")));
    }
    lx.expect(Tok::RParen, "')'")?;
    lx.expect_keyword("FROM")?;
    let (_, path) = lx.expect_word("a dataset path")?;
    lx.expect_keyword("PRECISION")?;
    let (p, precision) = lx.number("PRECISION")?;
    if precision <= 0.0 {
        return Err(lx.syntax(p, format!("precision must be positive, got {precision}")));
    }
    let mut confidence = DEFAULT_CONFIDENCE;
    if let Some((p, tok)) = lx.next() {
        match tok {
            Tok::Word(w) if w.eq_ignore_ascii_case("CONFIDENCE") => {
                let (p, b) = lx.number("CONFIDENCE")?;
                if !(b > 0.0 && b < 1.0) {
                    return Err(lx.syntax(p, format!("confidence must lie in (0, 1), got {b}")));
                }
                confidence = b;
            }
            _ => return Err(lx.syntax(p, "expected CONFIDENCE or end of query")),
        }
    }
    if let Some((p, _)) = lx.next() {
        return Err(lx.syntax(p, "unexpected trailing input"));
    }
    Ok(Query {
        aggregate,
        column: column.to_string(),
        dataset: PathBuf::from(path),
        precision,
        confidence,
    })
}
