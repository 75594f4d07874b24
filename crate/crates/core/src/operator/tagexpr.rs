//! Boolean tag expressions: `expr := term | expr AND expr | expr OR expr | (expr)`.
//! AND binds tighter than OR; both are left-associative.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::ids::is_valid_label;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TagExpr {
    Term(String),
    And(Box<TagExpr>, Box<TagExpr>),
    Or(Box<TagExpr>, Box<TagExpr>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed tag expression at token {position}: {message}")]
pub struct MalformedTagExpression {
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Open,
    Close,
    And,
    Or,
    Term(String),
}

fn lex(input: &str) -> Vec<Tok> {
    let mut out = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<Tok>| {
        if !word.is_empty() {
            out.push(match word.as_str() {
                "AND" => Tok::And,
                "OR" => Tok::Or,
                _ => Tok::Term(core::mem::take(word)),
            });
            word.clear();
        }
    };
    for c in input.chars() {
        match c {
            '(' | ')' => {
                flush(&mut word, &mut out);
                out.push(if c == '(' { Tok::Open } else { Tok::Close });
            }
            c if c.is_whitespace() => flush(&mut word, &mut out),
            c => word.push(c),
        }
    }
    flush(&mut word, &mut out);
    out
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn err(&self, message: &str) -> MalformedTagExpression {
        MalformedTagExpression { position: self.pos, message: message.to_string() }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn or(&mut self) -> Result<TagExpr, MalformedTagExpression> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            let rhs = self.and()?;
            lhs = TagExpr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<TagExpr, MalformedTagExpression> {
        let mut lhs = self.atom()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            let rhs = self.atom()?;
            lhs = TagExpr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Result<TagExpr, MalformedTagExpression> {
        match self.toks.get(self.pos).cloned() {
            Some(Tok::Term(t)) => {
                if !is_valid_label(&t) {
                    return Err(self.err("term is not a valid label"));
                }
                self.pos += 1;
                Ok(TagExpr::Term(t))
            }
            Some(Tok::Open) => {
                self.pos += 1;
                let e = self.or()?;
                if self.peek() != Some(&Tok::Close) {
                    return Err(self.err("expected ')'"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(_) => Err(self.err("expected a label or '('")),
            None => Err(self.err("unexpected end of expression")),
        }
    }
}

impl TagExpr {
    pub fn parse(input: &str) -> Result<TagExpr, MalformedTagExpression> {
        let mut p = Parser { toks: lex(input), pos: 0 };
        let e = p.or()?;
        if p.pos != p.toks.len() {
            return Err(p.err("trailing tokens"));
        }
        Ok(e)
    }

    pub fn term(label: &str) -> TagExpr {
        TagExpr::Term(label.to_string())
    }

    pub fn and(a: TagExpr, b: TagExpr) -> TagExpr {
        TagExpr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: TagExpr, b: TagExpr) -> TagExpr {
        TagExpr::Or(Box::new(a), Box::new(b))
    }

    pub fn eval(&self, labels: &BTreeSet<String>) -> bool {
        match self {
            TagExpr::Term(t) => labels.contains(t),
            TagExpr::And(a, b) => a.eval(labels) && b.eval(labels),
            TagExpr::Or(a, b) => a.eval(labels) || b.eval(labels),
        }
    }

    pub fn terms(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_terms(&mut out);
        out
    }

    fn collect_terms<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            TagExpr::Term(t) => {
                out.insert(t);
            }
            TagExpr::And(a, b) | TagExpr::Or(a, b) => {
                a.collect_terms(out);
                b.collect_terms(out);
            }
        }
    }

    fn prec(&self) -> u8 {
        match self {
            TagExpr::Or(..) => 1,
            TagExpr::And(..) => 2,
            TagExpr::Term(_) => 3,
        }
    }

    fn write_child(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.prec() < min_prec {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

/// Renders with the fewest parentheses that re-parse to the same tree.
impl fmt::Display for TagExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TagExpr::Term(t) => f.write_str(t),
            TagExpr::And(a, b) => {
                a.write_child(f, 2)?;
                f.write_str(" AND ")?;
                b.write_child(f, 3)
            }
            TagExpr::Or(a, b) => {
                a.write_child(f, 1)?;
                f.write_str(" OR ")?;
                b.write_child(f, 2)
            }
        }
    }
}

impl serde::Serialize for TagExpr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for TagExpr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <String as serde::Deserialize>::deserialize(d)?;
        TagExpr::parse(&s).map_err(serde::de::Error::custom)
    }
}
