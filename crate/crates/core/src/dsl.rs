//! Controlled-English auxiliary-line descriptions.
//!
//! ```text
//! program   := stmt ((";" | NEWLINE) stmt)*
//! connect   := "connect" L L
//! midpoint  := "take" "midpoint" L "of" L L
//! perp      := "drop" "perpendicular" "from" L "to" L L "at" L
//! parallel  := "draw" "parallel" "to" L L "through" L "to" L
//! frame     := "establish" "frame" "at" L
//! intersect := "mark" "intersection" L "of" L L "and" L L
//! ```
//!
//! Keywords are case-insensitive; labels are exam-style (`A`, `B1`). Blank
//! statements between separators are skipped.

use std::collections::BTreeSet;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::scene::{PointLabel, Renaming};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DslError {
    #[error("empty input")]
    EmptyInput,
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("cannot serialize an empty program")]
    EmptyProgram,
    #[error("unbalanced [AUX] markers at byte {offset}")]
    UnbalancedMarkers { offset: usize },
    #[error("nested [AUX] marker at byte {offset}")]
    NestedMarkers { offset: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Verb {
    Connect,
    TakeMidpoint,
    DropPerpendicular,
    DrawParallel,
    EstablishFrame,
    MarkIntersection,
}

/// One construction step.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AuxStatement {
    Connect {
        a: PointLabel,
        b: PointLabel,
    },
    TakeMidpoint {
        mid: PointLabel,
        a: PointLabel,
        b: PointLabel,
    },
    /// Perpendicular from `from` to line `a`-`b`, meeting it at `foot`.
    DropPerpendicular {
        from: PointLabel,
        a: PointLabel,
        b: PointLabel,
        foot: PointLabel,
    },
    /// Line through `through` parallel to `a`-`b`, drawn up to `to`.
    DrawParallel {
        a: PointLabel,
        b: PointLabel,
        through: PointLabel,
        to: PointLabel,
    },
    EstablishFrame {
        origin: PointLabel,
    },
    /// `point` is where `a`-`b` meets `c`-`d`.
    MarkIntersection {
        point: PointLabel,
        a: PointLabel,
        b: PointLabel,
        c: PointLabel,
        d: PointLabel,
    },
}

impl AuxStatement {
    pub fn verb(&self) -> Verb {
        match self {
            AuxStatement::Connect { .. } => Verb::Connect,
            AuxStatement::TakeMidpoint { .. } => Verb::TakeMidpoint,
            AuxStatement::DropPerpendicular { .. } => Verb::DropPerpendicular,
            AuxStatement::DrawParallel { .. } => Verb::DrawParallel,
            AuxStatement::EstablishFrame { .. } => Verb::EstablishFrame,
            AuxStatement::MarkIntersection { .. } => Verb::MarkIntersection,
        }
    }

    /// The label this statement may introduce as a new point, if any.
    pub fn introduced(&self) -> Option<&PointLabel> {
        match self {
            AuxStatement::TakeMidpoint { mid, .. } => Some(mid),
            AuxStatement::DropPerpendicular { foot, .. } => Some(foot),
            AuxStatement::DrawParallel { to, .. } => Some(to),
            AuxStatement::MarkIntersection { point, .. } => Some(point),
            AuxStatement::Connect { .. } | AuxStatement::EstablishFrame { .. } => None,
        }
    }

    /// Labels that must already exist when the statement is applied.
    pub fn required(&self) -> Vec<&PointLabel> {
        match self {
            AuxStatement::Connect { a, b } => vec![a, b],
            AuxStatement::TakeMidpoint { a, b, .. } => vec![a, b],
            AuxStatement::DropPerpendicular { from, a, b, .. } => vec![from, a, b],
            AuxStatement::DrawParallel { a, b, through, .. } => vec![a, b, through],
            AuxStatement::EstablishFrame { origin } => vec![origin],
            AuxStatement::MarkIntersection { a, b, c, d, .. } => vec![a, b, c, d],
        }
    }

    pub fn labels(&self) -> Vec<&PointLabel> {
        let mut v = self.required();
        if let Some(l) = self.introduced() {
            v.push(l);
        }
        v
    }

    /// Replaces every occurrence of `from` with `to`.
    pub fn replace_label(&self, from: &PointLabel, to: &PointLabel) -> AuxStatement {
        self.map_labels(|l| if l == from { to.clone() } else { l.clone() })
    }

    /// Applies a label renaming to every slot at once.
    pub fn rename(&self, map: &Renaming) -> AuxStatement {
        self.map_labels(|l| map.get(l).cloned().unwrap_or_else(|| l.clone()))
    }

    fn map_labels(&self, r: impl Fn(&PointLabel) -> PointLabel) -> AuxStatement {
        match self {
            AuxStatement::Connect { a, b } => AuxStatement::Connect { a: r(a), b: r(b) },
            AuxStatement::TakeMidpoint { mid, a, b } => AuxStatement::TakeMidpoint {
                mid: r(mid),
                a: r(a),
                b: r(b),
            },
            AuxStatement::DropPerpendicular { from, a, b, foot } => AuxStatement::DropPerpendicular {
                from: r(from),
                a: r(a),
                b: r(b),
                foot: r(foot),
            },
            AuxStatement::DrawParallel { a, b, through, to } => AuxStatement::DrawParallel {
                a: r(a),
                b: r(b),
                through: r(through),
                to: r(to),
            },
            AuxStatement::EstablishFrame { origin } => AuxStatement::EstablishFrame { origin: r(origin) },
            AuxStatement::MarkIntersection { point, a, b, c, d } => AuxStatement::MarkIntersection {
                point: r(point),
                a: r(a),
                b: r(b),
                c: r(c),
                d: r(d),
            },
        }
    }

    /// Structural sanity: no segment from a point to itself, no point defined
    /// in terms of itself.
    pub fn check(&self) -> Result<(), String> {
        let distinct = |ls: &[&PointLabel]| {
            let set: BTreeSet<_> = ls.iter().collect();
            set.len() == ls.len()
        };
        let ok = match self {
            AuxStatement::Connect { a, b } => a != b,
            AuxStatement::TakeMidpoint { mid, a, b } => distinct(&[mid, a, b]),
            AuxStatement::DropPerpendicular { from, a, b, foot } => a != b && from != foot && from != a && from != b,
            AuxStatement::DrawParallel { a, b, through, to } => {
                distinct(&[a, b, through]) && distinct(&[a, b, to]) && through != to
            }
            AuxStatement::EstablishFrame { .. } => true,
            AuxStatement::MarkIntersection { point, a, b, c, d } => {
                distinct(&[point, a, b]) && distinct(&[point, c, d]) && {
                    let s1: BTreeSet<_> = [a, b].into_iter().collect();
                    let s2: BTreeSet<_> = [c, d].into_iter().collect();
                    s1 != s2
                }
            }
        };
        if ok {
            Ok(())
        } else {
            Err(format!("degenerate statement `{self}`"))
        }
    }
}

impl fmt::Display for AuxStatement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuxStatement::Connect { a, b } => write!(f, "Connect {a} {b}"),
            AuxStatement::TakeMidpoint { mid, a, b } => write!(f, "Take midpoint {mid} of {a} {b}"),
            AuxStatement::DropPerpendicular { from, a, b, foot } => {
                write!(f, "Drop perpendicular from {from} to {a} {b} at {foot}")
            }
            AuxStatement::DrawParallel { a, b, through, to } => {
                write!(f, "Draw parallel to {a} {b} through {through} to {to}")
            }
            AuxStatement::EstablishFrame { origin } => write!(f, "Establish frame at {origin}"),
            AuxStatement::MarkIntersection { point, a, b, c, d } => {
                write!(f, "Mark intersection {point} of {a} {b} and {c} {d}")
            }
        }
    }
}

/// Parsed auxiliary-line description. Equality is AST equality: the source
/// text is carried along but ignored by `==`.
#[derive(Debug, Clone, Default, Eq)]
pub struct AuxProgram {
    pub statements: Vec<AuxStatement>,
    pub source_text: String,
}

impl PartialEq for AuxProgram {
    fn eq(&self, other: &Self) -> bool {
        self.statements == other.statements
    }
}

impl AuxProgram {
    pub fn new(statements: Vec<AuxStatement>) -> Self {
        let source_text = join(&statements);
        AuxProgram {
            statements,
            source_text,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn rename(&self, map: &Renaming) -> AuxProgram {
        AuxProgram::new(self.statements.iter().map(|s| s.rename(map)).collect())
    }

    pub fn labels(&self) -> BTreeSet<PointLabel> {
        self.statements
            .iter()
            .flat_map(|s| s.labels().into_iter().cloned())
            .collect()
    }
}

impl fmt::Display for AuxProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&join(&self.statements))
    }
}

fn join(statements: &[AuxStatement]) -> String {
    statements.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("; ")
}

impl Serialize for AuxProgram {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&join(&self.statements))
    }
}

impl<'de> Deserialize<'de> for AuxProgram {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.trim().is_empty() {
            return Ok(AuxProgram::default());
        }
        parse_aux(&s).map_err(D::Error::custom)
    }
}

impl Serialize for AuxStatement {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AuxStatement {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let mut p = parse_aux(&s).map_err(D::Error::custom)?;
        if p.statements.len() != 1 {
            return Err(D::Error::custom(format!(
                "expected one statement, got {}",
                p.statements.len()
            )));
        }
        Ok(p.statements.remove(0))
    }
}

#[derive(Debug, Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    offset: usize,
}

struct Cursor<'a> {
    tokens: Vec<Token<'a>>,
    pos: usize,
    end: usize,
}

impl<'a> Cursor<'a> {
    fn next(&mut self, what: &str) -> Result<Token<'a>, DslError> {
        match self.tokens.get(self.pos) {
            Some(t) => {
                self.pos += 1;
                Ok(*t)
            }
            None => Err(DslError::Parse {
                offset: self.end,
                message: format!("expected {what}, found end of statement"),
            }),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), DslError> {
        let t = self.next(&format!("`{kw}`"))?;
        if t.text.eq_ignore_ascii_case(kw) {
            Ok(())
        } else {
            Err(DslError::Parse {
                offset: t.offset,
                message: format!("expected `{kw}`, found `{}`", t.text),
            })
        }
    }

    fn label(&mut self) -> Result<PointLabel, DslError> {
        let t = self.next("a point label")?;
        PointLabel::new(t.text).map_err(|_| DslError::Parse {
            offset: t.offset,
            message: format!("expected a point label, found `{}`", t.text),
        })
    }

    fn finish(&self) -> Result<(), DslError> {
        match self.tokens.get(self.pos) {
            None => Ok(()),
            Some(t) => Err(DslError::Parse {
                offset: t.offset,
                message: format!("unexpected trailing token `{}`", t.text),
            }),
        }
    }
}

fn tokenize(text: &str, base: usize) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token {
                    text: &text[s..i],
                    offset: base + s,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &text[s..],
            offset: base + s,
        });
    }
    out
}

fn parse_statement(text: &str, base: usize) -> Result<AuxStatement, DslError> {
    let tokens = tokenize(text, base);
    let mut c = Cursor {
        tokens,
        pos: 0,
        end: base + text.trim_end().len(),
    };
    let verb = c.next("a verb")?;
    let stmt = match verb.text.to_ascii_lowercase().as_str() {
        "connect" => AuxStatement::Connect {
            a: c.label()?,
            b: c.label()?,
        },
        "take" => {
            c.keyword("midpoint")?;
            let mid = c.label()?;
            c.keyword("of")?;
            AuxStatement::TakeMidpoint {
                mid,
                a: c.label()?,
                b: c.label()?,
            }
        }
        "drop" => {
            c.keyword("perpendicular")?;
            c.keyword("from")?;
            let from = c.label()?;
            c.keyword("to")?;
            let (a, b) = (c.label()?, c.label()?);
            c.keyword("at")?;
            AuxStatement::DropPerpendicular {
                from,
                a,
                b,
                foot: c.label()?,
            }
        }
        "draw" => {
            c.keyword("parallel")?;
            c.keyword("to")?;
            let (a, b) = (c.label()?, c.label()?);
            c.keyword("through")?;
            let through = c.label()?;
            c.keyword("to")?;
            AuxStatement::DrawParallel {
                a,
                b,
                through,
                to: c.label()?,
            }
        }
        "establish" => {
            c.keyword("frame")?;
            c.keyword("at")?;
            AuxStatement::EstablishFrame { origin: c.label()? }
        }
        "mark" => {
            c.keyword("intersection")?;
            let point = c.label()?;
            c.keyword("of")?;
            let (a, b) = (c.label()?, c.label()?);
            c.keyword("and")?;
            AuxStatement::MarkIntersection {
                point,
                a,
                b,
                c: c.label()?,
                d: c.label()?,
            }
        }
        other => {
            return Err(DslError::Parse {
                offset: verb.offset,
                message: format!("unknown verb `{other}`"),
            })
        }
    };
    c.finish()?;
    stmt.check().map_err(|message| DslError::Parse {
        offset: verb.offset,
        message,
    })?;
    Ok(stmt)
}

/// Parses a `;`/newline separated list of construction statements.
pub fn parse_aux(text: &str) -> Result<AuxProgram, DslError> {
    if text.trim().is_empty() {
        return Err(DslError::EmptyInput);
    }
    let mut statements = Vec::new();
    let mut start = 0;
    for (i, ch) in text.char_indices().chain(std::iter::once((text.len(), ';'))) {
        if ch == ';' || ch == '\n' {
            let piece = &text[start..i];
            if !piece.trim().is_empty() {
                statements.push(parse_statement(piece, start)?);
            }
            start = i + 1;
        }
    }
    if statements.is_empty() {
        return Err(DslError::EmptyInput);
    }
    Ok(AuxProgram {
        statements,
        source_text: text.to_string(),
    })
}

/// Canonical text form; `parse_aux` of the result gives back the same AST.
pub fn serialize_aux(p: &AuxProgram) -> Result<String, DslError> {
    if p.statements.is_empty() {
        return Err(DslError::EmptyProgram);
    }
    Ok(join(&p.statements))
}

pub const AUX_OPEN: &str = "[AUX]";
pub const AUX_CLOSE: &str = "[/AUX]";

/// Contents of every flat `[AUX]...[/AUX]` span, in order.
pub fn extract_aux_spans(solution_text: &str) -> Result<Vec<String>, DslError> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    let mut i = 0;
    while i < solution_text.len() {
        let rest = &solution_text[i..];
        if rest.starts_with(AUX_OPEN) {
            if open.is_some() {
                return Err(DslError::NestedMarkers { offset: i });
            }
            open = Some(i);
            i += AUX_OPEN.len();
        } else if rest.starts_with(AUX_CLOSE) {
            match open.take() {
                Some(o) => spans.push(solution_text[o + AUX_OPEN.len()..i].to_string()),
                None => return Err(DslError::UnbalancedMarkers { offset: i }),
            }
            i += AUX_CLOSE.len();
        } else {
            i += rest.chars().next().map_or(1, char::len_utf8);
        }
    }
    match open {
        Some(o) => Err(DslError::UnbalancedMarkers { offset: o }),
        None => Ok(spans),
    }
}

/// Wraps a description in aux markers.
pub fn wrap_aux(description: &str) -> String {
    format!("{AUX_OPEN}{description}{AUX_CLOSE}")
}
