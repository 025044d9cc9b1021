//! Deterministic consistency judge.
//!
//! Scores an auxiliary-line description against a reference diagram by
//! comparing the relations the description induces on the original scene with
//! the structure the reference adds on top of it. Also hosts the binary answer
//! reward, the weighted composite reward and the one-line judge format.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{AuxProgram, AuxStatement};
use crate::scene::{diagram_delta, PointLabel, Relation, RelationKind, Scene, SceneError, SegRef};

/// Penalty per extraneous induced relation, in units of one matched relation.
pub const EXTRANEOUS_PENALTY: f64 = 0.5;

/// Default weight of the auxiliary-line reward in the composite reward.
pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("statement {index} (`{statement}`) uses unresolvable label {label}")]
    UnresolvableLabel {
        label: PointLabel,
        index: usize,
        statement: String,
    },
    #[error("{name} = {value} is outside [0, 1]")]
    Range { name: &'static str, value: f64 },
    #[error("malformed judge line: {0}")]
    Format(String),
}

/// Score restricted to quarters of the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Score(u8);

impl Score {
    pub const ZERO: Score = Score(0);
    pub const ONE: Score = Score(4);
    pub const ALL: [Score; 5] = [Score(0), Score(1), Score(2), Score(3), Score(4)];

    pub fn from_quarters(q: u8) -> Option<Score> {
        (q <= 4).then_some(Score(q))
    }

    pub fn quarters(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 4.0
    }

    /// Exact quarter values only.
    pub fn from_value(v: f64) -> Option<Score> {
        let q = v * 4.0;
        if (0.0..=4.0).contains(&q) && q.fract() == 0.0 {
            Some(Score(q as u8))
        } else {
            None
        }
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.0 {
            0 => "0",
            1 => "0.25",
            2 => "0.5",
            3 => "0.75",
            _ => "1",
        })
    }
}

impl Serialize for Score {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Score::from_value(v).ok_or_else(|| serde::de::Error::custom(format!("score {v} is not a quarter in [0,1]")))
    }
}

/// Judge output: one-line rationale plus quantized score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRecord {
    pub rationale: String,
    pub score: Score,
}

impl JudgeRecord {
    pub fn value(&self) -> f64 {
        self.score.value()
    }
}

/// Raw counts behind a [`JudgeRecord`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreBreakdown {
    pub expected: BTreeSet<Relation>,
    pub induced: BTreeSet<Relation>,
    pub matched: usize,
    pub extraneous: usize,
}

/// Relations produced by applying `d` to `original`, in canonical form.
///
/// Labels must be points of `original` or be introduced by an earlier (or the
/// same) statement in its point-introducing slot.
pub fn induced_relations(d: &AuxProgram, original: &Scene) -> Result<BTreeSet<Relation>, OracleError> {
    let mut known: BTreeSet<PointLabel> = original.point_set();
    let mut out = BTreeSet::new();
    for (index, stmt) in d.statements.iter().enumerate() {
        for l in stmt.required() {
            if !known.contains(l) {
                return Err(OracleError::UnresolvableLabel {
                    label: l.clone(),
                    index,
                    statement: stmt.to_string(),
                });
            }
        }
        if let Some(l) = stmt.introduced() {
            known.insert(l.clone());
        }
        for rel in statement_relations(stmt) {
            out.insert(rel.canonicalize()?);
        }
    }
    Ok(out)
}

fn statement_relations(stmt: &AuxStatement) -> Vec<Relation> {
    let seg = SegRef::new;
    match stmt {
        AuxStatement::Connect { a, b } => vec![Relation::Segment(seg(a, b))],
        AuxStatement::TakeMidpoint { mid, a, b } => vec![
            Relation::Midpoint {
                mid: mid.clone(),
                a: a.clone(),
                b: b.clone(),
            },
            Relation::Collinear(vec![a.clone(), mid.clone(), b.clone()]),
        ],
        AuxStatement::DropPerpendicular { from, a, b, foot } => vec![
            Relation::Segment(seg(from, foot)),
            Relation::Perpendicular(seg(from, foot), seg(a, b)),
        ],
        AuxStatement::DrawParallel { a, b, through, to } => vec![
            Relation::Segment(seg(through, to)),
            Relation::Parallel(seg(a, b), seg(through, to)),
        ],
        AuxStatement::EstablishFrame { origin } => vec![Relation::CoordFrameDeclared(origin.clone())],
        AuxStatement::MarkIntersection { point, a, b, c, d } => vec![
            Relation::Intersection {
                point: point.clone(),
                first: seg(a, b),
                second: seg(c, d),
            },
            Relation::Collinear(vec![a.clone(), point.clone(), b.clone()]),
            Relation::Collinear(vec![c.clone(), point.clone(), d.clone()]),
        ],
    }
}

/// Points `d` adds to `original`, in statement order.
pub fn introduced_points(d: &AuxProgram, original: &Scene) -> Vec<PointLabel> {
    let mut out: Vec<PointLabel> = Vec::new();
    for stmt in &d.statements {
        if let Some(l) = stmt.introduced() {
            if !original.has_point(l) && !out.contains(l) {
                out.push(l.clone());
            }
        }
    }
    out
}

/// The reference diagram `d` describes: `original` plus everything `d` adds.
pub fn apply_program(d: &AuxProgram, original: &Scene) -> Result<Scene, OracleError> {
    let rels = induced_relations(d, original)?;
    let mut out = original.clone();
    for p in introduced_points(d, original) {
        out.add_point(p);
    }
    let existing = original.relation_set();
    for r in rels {
        if !existing.contains(&r) {
            out.add_relation(r)?;
        }
    }
    Ok(out)
}

/// Counts matched and extraneous relations without quantizing.
pub fn score_breakdown(original: &Scene, d: &AuxProgram, reference: &Scene) -> Result<ScoreBreakdown, OracleError> {
    let expected = diagram_delta(original, reference)?.added_relations;
    let base = original.relation_set();
    let induced: BTreeSet<Relation> = induced_relations(d, original)?
        .into_iter()
        .filter(|r| !base.contains(r))
        .collect();
    let matched = induced.intersection(&expected).count();
    let extraneous = induced.len() - matched;
    Ok(ScoreBreakdown {
        expected,
        induced,
        matched,
        extraneous,
    })
}

/// `max(0, matched - 0.5 * extraneous) / expected`, rounded to the nearest
/// quarter with ties going down. Exact integer arithmetic.
pub fn quantize(matched: usize, extraneous: usize, expected: usize) -> Score {
    if expected == 0 {
        return if matched + extraneous == 0 {
            Score::ONE
        } else {
            Score::ZERO
        };
    }
    // Work in half-relation units: raw = half / (2 * expected).
    let half = (2 * matched).saturating_sub(extraneous) as u64;
    let n = expected as u64;
    // quarters = 4 * half / (2n) = 2 * half / n; round half down:
    // q = ceil(2*half/n - 1/2) = ceil((4*half - n) / (2n)).
    let num = 4 * half;
    let q = if num <= n { 0 } else { (num - n).div_ceil(2 * n) };
    Score(q.min(4) as u8)
}

fn kind_list(rels: impl Iterator<Item = RelationKind>) -> String {
    let kinds: BTreeSet<RelationKind> = rels.collect();
    kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")
}

/// Judges `d` applied to `original` against `reference`.
pub fn consistency_score(original: &Scene, d: &AuxProgram, reference: &Scene) -> Result<JudgeRecord, OracleError> {
    let b = score_breakdown(original, d, reference)?;
    let score = quantize(b.matched, b.extraneous, b.expected.len());
    let rationale = if b.expected.is_empty() {
        if b.induced.is_empty() {
            "no auxiliary structure expected and none given".to_string()
        } else {
            format!(
                "no auxiliary structure expected but {} relations added",
                b.induced.len()
            )
        }
    } else {
        let mut parts = vec![format!("matched {} of {} relations", b.matched, b.expected.len())];
        if b.matched > 0 {
            let kinds = kind_list(b.induced.intersection(&b.expected).map(Relation::kind));
            parts[0].push_str(&format!(" ({kinds})"));
        }
        if b.matched < b.expected.len() {
            let kinds = kind_list(b.expected.difference(&b.induced).map(Relation::kind));
            parts.push(format!("missing {kinds}"));
        }
        if b.extraneous > 0 {
            let kinds = kind_list(b.induced.difference(&b.expected).map(Relation::kind));
            parts.push(format!("{} extraneous ({kinds})", b.extraneous));
        }
        parts.join("; ")
    };
    Ok(JudgeRecord { rationale, score })
}

/// Whitespace-collapsed, trimmed answer with `\frac{a}{b}` and `a / b` both
/// written `a/b`. Purely syntactic.
pub fn normalize_answer(s: &str) -> String {
    let mut text = s.to_string();
    for macro_name in ["\\dfrac", "\\tfrac", "\\frac"] {
        while let Some(pos) = text.find(macro_name) {
            let after = pos + macro_name.len();
            let Some((num, rest)) = braced(&text[after..]) else {
                break;
            };
            let Some((den, rest2)) = braced(rest) else { break };
            let consumed = text.len() - after - rest2.len();
            let wrap = |x: &str| {
                if x.chars().any(|c| "+-*/ ".contains(c)) {
                    format!("({x})")
                } else {
                    x.to_string()
                }
            };
            let replacement = format!("{}/{}", wrap(num), wrap(den));
            text.replace_range(pos..after + consumed, &replacement);
        }
    }
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.replace(" /", "/").replace("/ ", "/")
}

/// Splits `{inner}rest` into `(inner, rest)`, honouring nested braces.
fn braced(s: &str) -> Option<(&str, &str)> {
    let s = s.trim_start();
    if !s.starts_with('{') {
        return None;
    }
    let mut depth = 0usize;
    for (i, ch) in s.char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((&s[1..i], &s[i + 1..]));
                }
            }
            _ => {}
        }
    }
    None
}

/// 1.0 iff the normalized answers are identical.
pub fn answer_reward(predicted: &str, gold: &str) -> f64 {
    if normalize_answer(predicted) == normalize_answer(gold) {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBundle {
    pub r_aux: f64,
    pub r_ans: f64,
    pub alpha: f64,
    pub r: f64,
}

fn unit(name: &'static str, value: f64) -> Result<f64, OracleError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(OracleError::Range { name, value })
    }
}

/// `r = alpha * r_aux + (1 - alpha) * r_ans`.
pub fn composite_reward(r_aux: f64, r_ans: f64, alpha: f64) -> Result<RewardBundle, OracleError> {
    let r_aux = unit("r_aux", r_aux)?;
    let r_ans = unit("r_ans", r_ans)?;
    let alpha = unit("alpha", alpha)?;
    Ok(RewardBundle {
        r_aux,
        r_ans,
        alpha,
        r: alpha * r_aux + (1.0 - alpha) * r_ans,
    })
}

const SCORE_MARK: &str = ". Score: ";

/// `<rationale>. Score: <s>.`
pub fn format_judge_line(rec: &JudgeRecord) -> Result<String, OracleError> {
    if rec.rationale.contains(['\n', '\r']) {
        return Err(OracleError::Format("rationale must be a single line".into()));
    }
    Ok(format!("{}{SCORE_MARK}{}.", rec.rationale, rec.score))
}

pub fn parse_judge_line(s: &str) -> Result<JudgeRecord, OracleError> {
    let bad = |why: &str| OracleError::Format(format!("{why}: {s:?}"));
    if s.contains(['\n', '\r']) {
        return Err(bad("more than one line"));
    }
    let body = s.strip_suffix('.').ok_or_else(|| bad("missing final period"))?;
    let at = body.rfind(SCORE_MARK).ok_or_else(|| bad("missing `. Score: `"))?;
    let value = &body[at + SCORE_MARK.len()..];
    if value.is_empty() || !value.chars().all(|c| c.is_ascii_digit() || c == '.') {
        return Err(bad("score is not a number"));
    }
    let v: f64 = value.parse().map_err(|_| bad("score is not a number"))?;
    let score = Score::from_value(v).ok_or_else(|| bad("score is not one of 0, 0.25, 0.5, 0.75, 1"))?;
    Ok(JudgeRecord {
        rationale: body[..at].to_string(),
        score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_aux;
    use crate::scene::{label, Relation};

    fn square() -> Scene {
        let mut s = Scene::with_points(&["A", "B", "C", "D"]).unwrap();
        for (a, b) in [("A", "B"), ("B", "C"), ("C", "D"), ("A", "D")] {
            s.add_segment(a, b).unwrap();
        }
        s
    }

    #[test]
    fn midpoint_rule() {
        let got = induced_relations(&parse_aux("take midpoint M of A B").unwrap(), &square()).unwrap();
        let want: BTreeSet<Relation> = [Relation::midpoint("M", "A", "B"), Relation::collinear(&["A", "B", "M"])]
            .into_iter()
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn empty_program_induces_nothing() {
        assert!(induced_relations(&AuxProgram::default(), &square()).unwrap().is_empty());
    }

    #[test]
    fn unresolvable_label() {
        let err = induced_relations(&parse_aux("connect A Z").unwrap(), &square()).unwrap_err();
        assert!(matches!(err, OracleError::UnresolvableLabel { ref label, index: 0, .. } if label.as_str() == "Z"));
        // Introduced labels resolve only after their statement.
        assert!(induced_relations(&parse_aux("connect C M; take midpoint M of A B").unwrap(), &square()).is_err());
        assert!(induced_relations(&parse_aux("take midpoint M of A B; connect C M").unwrap(), &square()).is_ok());
    }

    #[test]
    fn other_rules() {
        let s = square();
        let r = induced_relations(&parse_aux("mark intersection O of A C and B D").unwrap(), &s).unwrap();
        assert_eq!(r.len(), 3);
        assert!(r.contains(&Relation::collinear(&["A", "C", "O"])));
        let r = induced_relations(&parse_aux("drop perpendicular from C to A B at H").unwrap(), &s).unwrap();
        assert!(r.contains(&Relation::Perpendicular(
            SegRef(label("A"), label("B")),
            SegRef(label("C"), label("H"))
        )));
        let r = induced_relations(&parse_aux("draw parallel to A B through C to Q").unwrap(), &s).unwrap();
        assert!(r.contains(&Relation::segment("C", "Q")));
        let r = induced_relations(&parse_aux("establish frame at A").unwrap(), &s).unwrap();
        assert_eq!(r.into_iter().next(), Some(Relation::CoordFrameDeclared(label("A"))));
    }

    #[test]
    fn quantization_rounds_half_down() {
        // raw = matched/expected when there is nothing extraneous
        assert_eq!(quantize(1, 0, 2), Score(2));
        assert_eq!(quantize(7, 0, 8), Score(3)); // 0.875 -> tie -> 0.75
        assert_eq!(quantize(1, 0, 8), Score(0)); // 0.125 -> tie -> 0
        assert_eq!(quantize(3, 0, 8), Score(1)); // 0.375 -> tie -> 0.25
        assert_eq!(quantize(8, 0, 9), Score(4)); // 0.889 -> 1
        assert_eq!(quantize(2, 1, 2), Score(3)); // 0.75
        assert_eq!(quantize(1, 3, 2), Score(0));
        assert_eq!(quantize(0, 0, 0), Score::ONE);
        assert_eq!(quantize(0, 1, 0), Score::ZERO);
    }

    #[test]
    fn quantization_matches_float_formula() {
        for n in 1..=12usize {
            for m in 0..=n {
                for e in 0..=6usize {
                    let raw = ((m as f64 - EXTRANEOUS_PENALTY * e as f64).max(0.0)) / n as f64;
                    let scaled = raw * 4.0;
                    let floor = scaled.floor();
                    let q = if scaled - floor > 0.5 + 1e-12 {
                        floor + 1.0
                    } else {
                        floor
                    };
                    assert_eq!(quantize(m, e, n).value(), q / 4.0, "m={m} e={e} n={n}");
                }
            }
        }
    }

    #[test]
    fn scores_gold_empty_and_partial() {
        let original = square();
        let gold = parse_aux("take midpoint M of A B; connect C M").unwrap();
        let reference = apply_program(&gold, &original).unwrap();
        assert_eq!(
            consistency_score(&original, &gold, &reference).unwrap().score,
            Score::ONE
        );
        let empty = consistency_score(&original, &AuxProgram::default(), &reference).unwrap();
        assert_eq!(empty.score, Score::ZERO);

        // Reference with exactly two new relations; description matches one.
        let mut two = original.clone();
        two.add_relation(Relation::segment("A", "C")).unwrap();
        two.add_relation(Relation::segment("B", "D")).unwrap();
        let half = consistency_score(&original, &parse_aux("connect A C").unwrap(), &two).unwrap();
        assert_eq!(half.score.value(), 0.5);
        assert!(half.rationale.starts_with("matched 1 of 2 relations"));
    }

    #[test]
    fn empty_expected_delta() {
        let s = square();
        assert_eq!(
            consistency_score(&s, &AuxProgram::default(), &s).unwrap().score,
            Score::ONE
        );
        assert_eq!(
            consistency_score(&s, &parse_aux("connect A C").unwrap(), &s)
                .unwrap()
                .score,
            Score::ZERO
        );
    }

    #[test]
    fn answers() {
        assert_eq!(answer_reward("√3/3", "√3/3"), 1.0);
        assert_eq!(answer_reward("1/2", "0.5"), 0.0);
        assert_eq!(answer_reward("  2  ", "2"), 1.0);
        assert_eq!(answer_reward("\\frac{1}{2}", "1 / 2"), 1.0);
        assert_eq!(answer_reward("\\dfrac{\\sqrt{3}}{3}", "\\sqrt{3}/3"), 1.0);
        assert_eq!(answer_reward("\\frac{1+x}{2}", "(1+x)/2"), 1.0);
        assert_eq!(answer_reward("2  √2", "2 √2"), 1.0);
    }

    #[test]
    fn composite() {
        assert_eq!(composite_reward(1.0, 1.0, 0.1).unwrap().r, 1.0);
        assert_eq!(composite_reward(1.0, 0.0, 0.1).unwrap().r, 0.1);
        assert_eq!(composite_reward(0.0, 1.0, 0.1).unwrap().r, 0.9);
        assert!((composite_reward(0.5, 1.0, 0.1).unwrap().r - 0.95).abs() < 1e-12);
        assert!(matches!(
            composite_reward(1.5, 0.0, 0.1),
            Err(OracleError::Range { name: "r_aux", .. })
        ));
        assert!(composite_reward(0.5, 0.0, -0.1).is_err());
        assert!(composite_reward(f64::NAN, 0.0, 0.1).is_err());
    }

    #[test]
    fn judge_lines() {
        let rec = JudgeRecord {
            rationale: "matched 2 of 2 relations".into(),
            score: Score::ONE,
        };
        assert_eq!(format_judge_line(&rec).unwrap(), "matched 2 of 2 relations. Score: 1.");
        assert_eq!(parse_judge_line("x. Score: 0.75.").unwrap().score.value(), 0.75);
        assert_eq!(parse_judge_line("x. Score: 0.50.").unwrap().score.value(), 0.5);
        assert!(matches!(parse_judge_line("no score here"), Err(OracleError::Format(_))));
        assert!(parse_judge_line("x. Score: 0.3.").is_err());
        assert!(parse_judge_line("x. Score: 1").is_err());
        assert!(parse_judge_line("x. Score: -1.").is_err());
        let multi = JudgeRecord {
            rationale: "a\nb".into(),
            score: Score::ZERO,
        };
        assert!(format_judge_line(&multi).is_err());
        // Rationale may itself contain the marker text.
        let tricky = parse_judge_line("a. Score: 1. b. Score: 0.25.").unwrap();
        assert_eq!(tricky.rationale, "a. Score: 1. b");
        assert_eq!(tricky.score, Score(1));
    }
}
