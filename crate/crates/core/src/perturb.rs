//! Rule-based negatives for the consistency judge.
//!
//! Each [`PerturbationKind`] rewrites a gold description into one that is
//! still well-formed but disagrees with the gold construction. Candidates that
//! the oracle would still score 1.0 are rejected and resampled.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ProblemRecord, SceneStore};
use crate::dsl::{parse_aux, AuxProgram, AuxStatement, DslError};
use crate::oracle::{
    apply_program, consistency_score, format_judge_line, induced_relations, parse_judge_line, JudgeRecord, OracleError,
    Score,
};
use crate::scene::{PointLabel, Relation, Scene, SegRef};
use crate::seed::{derive_seed, rng_for};

/// Resampling budget before a kind is declared not applicable.
pub const MAX_ATTEMPTS: u64 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerturbError {
    #[error("{kind} not applicable: {reason}")]
    NotPerturbable { kind: PerturbationKind, reason: String },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error("record {id}: scene {reference} not found")]
    MissingScene { id: u64, reference: String },
    #[error("per_gold_negatives must be at least 1")]
    NoNegatives,
    #[error("triplet json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PerturbationKind {
    PartialDeletion,
    IntersectionAlteration,
    IncorrectConnection,
    AddIrrelevantLines,
    UnrelatedAux,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 5] = [
        PerturbationKind::PartialDeletion,
        PerturbationKind::IntersectionAlteration,
        PerturbationKind::IncorrectConnection,
        PerturbationKind::AddIrrelevantLines,
        PerturbationKind::UnrelatedAux,
    ];
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Everything a template needs to know about the gold construction.
struct GoldContext<'a> {
    gold: &'a AuxProgram,
    scene: &'a Scene,
    reference: Scene,
    /// Labels touched by relations the gold adds to the scene.
    delta_points: BTreeSet<PointLabel>,
    gold_relations: BTreeSet<Relation>,
    used: BTreeSet<PointLabel>,
}

impl<'a> GoldContext<'a> {
    fn new(gold: &'a AuxProgram, scene: &'a Scene) -> Result<Self, PerturbError> {
        let reference = apply_program(gold, scene)?;
        let base = scene.relation_set();
        let gold_relations = induced_relations(gold, scene)?;
        let delta_points = gold_relations
            .iter()
            .filter(|r| !base.contains(r))
            .flat_map(|r| r.labels().into_iter().cloned())
            .collect();
        let mut used = scene.point_set();
        used.extend(gold.labels());
        Ok(GoldContext {
            gold,
            scene,
            reference,
            delta_points,
            gold_relations,
            used,
        })
    }

    fn fresh_label(&self, rng: &mut ChaCha8Rng, avoid: &BTreeSet<PointLabel>) -> Option<PointLabel> {
        let pool: Vec<PointLabel> = ('A'..='Z')
            .filter_map(|c| PointLabel::new(&c.to_string()).ok())
            .filter(|l| !self.used.contains(l) && !avoid.contains(l))
            .collect();
        pool.choose(rng).cloned()
    }

    fn unconnected_pairs(&self, labels: &[PointLabel]) -> Vec<(PointLabel, PointLabel)> {
        let base = self.scene.relation_set();
        let mut out = Vec::new();
        for (i, a) in labels.iter().enumerate() {
            for b in &labels[i + 1..] {
                let seg = Relation::Segment(SegRef::new(a, b));
                if !base.contains(&seg) && !self.gold_relations.contains(&seg) {
                    out.push((a.clone(), b.clone()));
                }
            }
        }
        out
    }
}

fn not_perturbable(kind: PerturbationKind, reason: impl Into<String>) -> PerturbError {
    PerturbError::NotPerturbable {
        kind,
        reason: reason.into(),
    }
}

/// Statement indices removed when `index` is deleted: the statement itself and,
/// transitively, every later statement that needs a label it introduced.
fn deletion_closure(gold: &AuxProgram, scene: &Scene, index: usize) -> BTreeSet<usize> {
    let mut removed = BTreeSet::from([index]);
    let mut lost: BTreeSet<PointLabel> = BTreeSet::new();
    if let Some(l) = gold.statements[index].introduced() {
        if !scene.has_point(l) {
            lost.insert(l.clone());
        }
    }
    for (j, stmt) in gold.statements.iter().enumerate().skip(index + 1) {
        let reintroduced = gold.statements[..j]
            .iter()
            .enumerate()
            .any(|(k, s)| !removed.contains(&k) && s.introduced().is_some_and(|l| lost.contains(l)));
        if !reintroduced && stmt.required().iter().any(|l| lost.contains(*l)) {
            removed.insert(j);
            if let Some(l) = stmt.introduced() {
                if !scene.has_point(l) {
                    lost.insert(l.clone());
                }
            }
        }
    }
    removed
}

fn partial_deletion(ctx: &GoldContext, rng: &mut ChaCha8Rng) -> Result<AuxProgram, PerturbError> {
    let kind = PerturbationKind::PartialDeletion;
    let n = ctx.gold.len();
    if n < 2 {
        return Err(not_perturbable(kind, "needs at least two statements"));
    }
    let options: Vec<BTreeSet<usize>> = (0..n)
        .map(|i| deletion_closure(ctx.gold, ctx.scene, i))
        .filter(|removed| removed.len() < n)
        .collect();
    let removed = options
        .choose(rng)
        .ok_or_else(|| not_perturbable(kind, "every deletion empties the program"))?;
    Ok(AuxProgram::new(
        ctx.gold
            .statements
            .iter()
            .enumerate()
            .filter(|(i, _)| !removed.contains(i))
            .map(|(_, s)| s.clone())
            .collect(),
    ))
}

/// Replaces the label in required slot `slot` of `stmt`.
fn replace_required(stmt: &AuxStatement, slot: usize, to: &PointLabel) -> AuxStatement {
    let from = stmt.required()[slot].clone();
    stmt.replace_label(&from, to)
}

fn intersection_alteration(ctx: &GoldContext, rng: &mut ChaCha8Rng) -> Result<AuxProgram, PerturbError> {
    let kind = PerturbationKind::IntersectionAlteration;
    let sites: Vec<usize> = ctx
        .gold
        .statements
        .iter()
        .enumerate()
        .filter(|(_, s)| s.introduced().is_some_and(|l| !ctx.scene.has_point(l)))
        .map(|(i, _)| i)
        .collect();
    let &site = sites
        .choose(rng)
        .ok_or_else(|| not_perturbable(kind, "no constructed point to alter"))?;
    let stmt = &ctx.gold.statements[site];
    let mut statements = ctx.gold.statements.clone();
    if rng.gen_bool(0.5) {
        // Rename the constructed point everywhere it is used.
        let old = stmt.introduced().expect("site introduces a point").clone();
        let new = ctx
            .fresh_label(rng, &BTreeSet::new())
            .ok_or_else(|| not_perturbable(kind, "no fresh label left"))?;
        for s in statements.iter_mut().skip(site) {
            *s = s.replace_label(&old, &new);
        }
    } else {
        // Move one of the defining lines to a different scene point.
        let slots = stmt.required().len();
        let slot = rng.gen_range(0..slots);
        let in_stmt: BTreeSet<&PointLabel> = stmt.labels().into_iter().collect();
        let choices: Vec<&PointLabel> = ctx.scene.points.iter().filter(|p| !in_stmt.contains(p)).collect();
        let &to = choices
            .choose(rng)
            .ok_or_else(|| not_perturbable(kind, "no spare scene point"))?;
        statements[site] = replace_required(stmt, slot, to);
    }
    Ok(AuxProgram::new(statements))
}

fn incorrect_connection(ctx: &GoldContext, rng: &mut ChaCha8Rng) -> Result<AuxProgram, PerturbError> {
    let kind = PerturbationKind::IncorrectConnection;
    let sites: Vec<(usize, usize)> = ctx
        .gold
        .statements
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.required().len()).map(move |slot| (i, slot)))
        .collect();
    let &(site, slot) = sites
        .choose(rng)
        .ok_or_else(|| not_perturbable(kind, "no endpoint to swap"))?;
    let stmt = &ctx.gold.statements[site];
    let in_stmt: BTreeSet<&PointLabel> = stmt.labels().into_iter().collect();
    let choices: Vec<&PointLabel> = ctx.scene.points.iter().filter(|p| !in_stmt.contains(p)).collect();
    let &to = choices
        .choose(rng)
        .ok_or_else(|| not_perturbable(kind, "no scene label outside the statement"))?;
    let mut statements = ctx.gold.statements.clone();
    statements[site] = replace_required(stmt, slot, to);
    Ok(AuxProgram::new(statements))
}

fn add_irrelevant_lines(ctx: &GoldContext, rng: &mut ChaCha8Rng, attempt: u64) -> Result<AuxProgram, PerturbError> {
    let kind = PerturbationKind::AddIrrelevantLines;
    let mut pairs = ctx.unconnected_pairs(&ctx.scene.points);
    if pairs.is_empty() {
        return Err(not_perturbable(kind, "every scene pair is already connected"));
    }
    pairs.shuffle(rng);
    let count = (1 + rng.gen_range(0..2) + attempt as usize).min(pairs.len());
    let mut statements = ctx.gold.statements.clone();
    statements.extend(
        pairs
            .into_iter()
            .take(count)
            .map(|(a, b)| AuxStatement::Connect { a, b }),
    );
    Ok(AuxProgram::new(statements))
}

fn unrelated_aux(ctx: &GoldContext, rng: &mut ChaCha8Rng) -> Result<AuxProgram, PerturbError> {
    let kind = PerturbationKind::UnrelatedAux;
    let spare: Vec<PointLabel> = ctx
        .scene
        .points
        .iter()
        .filter(|p| !ctx.delta_points.contains(p))
        .cloned()
        .collect();
    if spare.len() < 2 {
        return Err(not_perturbable(
            kind,
            "fewer than two points outside the gold construction",
        ));
    }
    let mut pool: Vec<AuxStatement> = ctx
        .unconnected_pairs(&spare)
        .into_iter()
        .map(|(a, b)| AuxStatement::Connect { a, b })
        .collect();
    if pool.is_empty() {
        // Every spare pair is an existing edge: split edges at fresh points instead.
        let mut taken = BTreeSet::new();
        for (i, a) in spare.iter().enumerate() {
            for b in &spare[i + 1..] {
                if let Some(mid) = ctx.fresh_label(rng, &taken) {
                    taken.insert(mid.clone());
                    pool.push(AuxStatement::TakeMidpoint {
                        mid,
                        a: a.clone(),
                        b: b.clone(),
                    });
                }
            }
        }
    }
    if pool.is_empty() {
        return Err(not_perturbable(kind, "no unrelated construction available"));
    }
    pool.shuffle(rng);
    let count = rng.gen_range(1..=ctx.gold.len().max(1)).min(pool.len());
    Ok(AuxProgram::new(pool.into_iter().take(count).collect()))
}

/// Produces a geometrically inconsistent variant of `gold` on `scene`.
///
/// Deterministic in `(gold, scene, kind, seed)`. The result always differs
/// from `gold`, resolves on `scene`, and scores strictly below 1.0 against the
/// diagram `gold` describes.
pub fn perturb(
    gold: &AuxProgram,
    scene: &Scene,
    kind: PerturbationKind,
    seed: u64,
) -> Result<AuxProgram, PerturbError> {
    if gold.is_empty() {
        return Err(not_perturbable(kind, "gold description is empty"));
    }
    let ctx = GoldContext::new(gold, scene)?;
    let mut last_reason = String::from("no candidate produced");
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng_for(seed, attempt);
        let candidate = match kind {
            PerturbationKind::PartialDeletion => partial_deletion(&ctx, &mut rng)?,
            PerturbationKind::IntersectionAlteration => intersection_alteration(&ctx, &mut rng)?,
            PerturbationKind::IncorrectConnection => incorrect_connection(&ctx, &mut rng)?,
            PerturbationKind::AddIrrelevantLines => add_irrelevant_lines(&ctx, &mut rng, attempt)?,
            PerturbationKind::UnrelatedAux => unrelated_aux(&ctx, &mut rng)?,
        };
        if candidate == *gold {
            last_reason = "candidate equals gold".into();
            continue;
        }
        if let Some(bad) = candidate.statements.iter().find_map(|s| s.check().err()) {
            last_reason = bad;
            continue;
        }
        match consistency_score(scene, &candidate, &ctx.reference) {
            Ok(judge) if judge.score < Score::ONE => return Ok(candidate),
            Ok(_) => last_reason = "candidate still scores 1".into(),
            Err(e) => last_reason = e.to_string(),
        }
    }
    Err(not_perturbable(
        kind,
        format!("{MAX_ATTEMPTS} attempts rejected, last: {last_reason}"),
    ))
}

/// `<I, d, I+, y>` with the oracle's verdict as target.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionTriplet {
    pub record_id: u64,
    /// `None` for the gold description.
    pub perturbation: Option<PerturbationKind>,
    pub original: Scene,
    pub description: AuxProgram,
    pub reference: Scene,
    pub judge_target: JudgeRecord,
}

#[derive(Serialize, Deserialize)]
struct TripletDoc {
    record_id: u64,
    perturbation: Option<PerturbationKind>,
    original: Scene,
    description: AuxProgram,
    reference: Scene,
    judge: String,
}

impl SupervisionTriplet {
    pub fn is_gold(&self) -> bool {
        self.perturbation.is_none()
    }

    /// One JSONL line; scenes inlined in sorted form, judge in line grammar.
    pub fn to_json_line(&self) -> Result<String, PerturbError> {
        let doc = TripletDoc {
            record_id: self.record_id,
            perturbation: self.perturbation,
            original: self.original.sorted(),
            description: self.description.clone(),
            reference: self.reference.sorted(),
            judge: format_judge_line(&self.judge_target)?,
        };
        serde_json::to_string(&doc).map_err(|e| PerturbError::Json(e.to_string()))
    }

    pub fn from_json_line(line: &str) -> Result<Self, PerturbError> {
        let doc: TripletDoc = serde_json::from_str(line).map_err(|e| PerturbError::Json(e.to_string()))?;
        Ok(SupervisionTriplet {
            record_id: doc.record_id,
            perturbation: doc.perturbation,
            original: doc.original,
            description: doc.description,
            reference: doc.reference,
            judge_target: parse_judge_line(&doc.judge)?,
        })
    }
}

/// A template that could not be applied to a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedNegative {
    pub record_id: u64,
    pub kind: PerturbationKind,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SupervisionSet {
    pub triplets: Vec<SupervisionTriplet>,
    pub skipped: Vec<SkippedNegative>,
}

impl SupervisionSet {
    pub fn to_jsonl(&self) -> Result<String, PerturbError> {
        let mut out = String::new();
        for t in &self.triplets {
            out.push_str(&t.to_json_line()?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Held-out split by record: `round(test_fraction * records)` records,
    /// chosen by seed, go to the second half with all their triplets.
    pub fn split_by_record(&self, test_fraction: f64, seed: u64) -> (SupervisionSet, SupervisionSet) {
        let mut ids: Vec<u64> = Vec::new();
        for t in &self.triplets {
            if !ids.contains(&t.record_id) {
                ids.push(t.record_id);
            }
        }
        ids.shuffle(&mut rng_for(seed, SPLIT_STREAM));
        let n_test = (test_fraction.clamp(0.0, 1.0) * ids.len() as f64).round() as usize;
        let test_ids: BTreeSet<u64> = ids[..n_test].iter().copied().collect();
        let part = |held: bool| SupervisionSet {
            triplets: self
                .triplets
                .iter()
                .filter(|t| test_ids.contains(&t.record_id) == held)
                .cloned()
                .collect(),
            skipped: self
                .skipped
                .iter()
                .filter(|s| test_ids.contains(&s.record_id) == held)
                .cloned()
                .collect(),
        };
        (part(false), part(true))
    }
}

const SPLIT_STREAM: u64 = 0x5917;

fn record_triplets(
    record: &ProblemRecord,
    scenes: &SceneStore,
    per_gold_negatives: usize,
    seed: u64,
) -> Result<(Vec<SupervisionTriplet>, Vec<SkippedNegative>), PerturbError> {
    let lookup = |r: &str| {
        scenes.get(r).ok_or_else(|| PerturbError::MissingScene {
            id: record.id,
            reference: r.to_string(),
        })
    };
    let original = lookup(&record.original_diagram_ref)?;
    let reference = lookup(&record.aux_diagram_ref)?;
    let gold = parse_aux(&record.aux_description)?;

    let make = |description: AuxProgram, perturbation| -> Result<SupervisionTriplet, PerturbError> {
        let judge_target = consistency_score(original, &description, reference)?;
        Ok(SupervisionTriplet {
            record_id: record.id,
            perturbation,
            original: original.sorted(),
            description,
            reference: reference.sorted(),
            judge_target,
        })
    };

    let mut triplets = vec![make(gold.clone(), None)?];
    let mut skipped = Vec::new();
    for j in 0..per_gold_negatives {
        let kind = PerturbationKind::ALL[j % PerturbationKind::ALL.len()];
        match perturb(&gold, original, kind, derive_seed(seed, j as u64)) {
            Ok(neg) => triplets.push(make(neg, Some(kind))?),
            Err(PerturbError::NotPerturbable { kind, reason }) => {
                log::info!("record {}: skipping {kind}: {reason}", record.id);
                skipped.push(SkippedNegative {
                    record_id: record.id,
                    kind,
                    reason,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok((triplets, skipped))
}

/// One gold triplet plus `per_gold_negatives` perturbed ones per record,
/// cycling through all five kinds. Records are processed in parallel with
/// per-record seeds; output order follows input order.
pub fn build_supervision_set(
    golds: &[ProblemRecord],
    scenes: &SceneStore,
    per_gold_negatives: usize,
    seed: u64,
) -> Result<SupervisionSet, PerturbError> {
    if per_gold_negatives == 0 {
        return Err(PerturbError::NoNegatives);
    }
    let parts: Vec<_> = golds
        .par_iter()
        .enumerate()
        .map(|(i, r)| record_triplets(r, scenes, per_gold_negatives, derive_seed(seed, i as u64)))
        .collect::<Result<_, _>>()?;
    let mut set = SupervisionSet::default();
    for (t, s) in parts {
        set.triplets.extend(t);
        set.skipped.extend(s);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::label;

    fn scene() -> Scene {
        let mut s = Scene::with_points(&["A", "B", "C", "P", "Q"]).unwrap();
        for (a, b) in [("A", "B"), ("B", "C"), ("A", "C")] {
            s.add_segment(a, b).unwrap();
        }
        s
    }

    fn gold() -> AuxProgram {
        parse_aux("take midpoint M of A B; connect C M").unwrap()
    }

    fn triplet(record_id: u64) -> SupervisionTriplet {
        let s = scene();
        SupervisionTriplet {
            record_id,
            perturbation: None,
            original: s.clone(),
            description: gold(),
            reference: s,
            judge_target: JudgeRecord {
                rationale: "x".into(),
                score: Score::ONE,
            },
        }
    }

    #[test]
    fn split_keeps_records_whole() {
        let set = SupervisionSet {
            triplets: (0..20u64).flat_map(|r| [triplet(r), triplet(r)]).collect(),
            skipped: vec![],
        };
        let (train, test) = set.split_by_record(0.1, 3);
        assert_eq!(test.triplets.len(), 4);
        assert_eq!(train.triplets.len() + test.triplets.len(), 40);
        let held: BTreeSet<u64> = test.triplets.iter().map(|t| t.record_id).collect();
        assert!(train.triplets.iter().all(|t| !held.contains(&t.record_id)));
        assert_eq!(set.split_by_record(0.1, 3), (train, test));
    }

    #[test]
    fn partial_deletion_keeps_a_subset() {
        let g = gold();
        for seed in 0..20 {
            let out = perturb(&g, &scene(), PerturbationKind::PartialDeletion, seed).unwrap();
            assert_eq!(out.len(), 1);
            assert!(g.statements.contains(&out.statements[0]));
            let sub = induced_relations(&out, &scene()).unwrap();
            let all = induced_relations(&g, &scene()).unwrap();
            assert!(sub.is_subset(&all) && sub.len() < all.len());
        }
    }

    #[test]
    fn partial_deletion_needs_two_statements() {
        let one = parse_aux("connect A P").unwrap();
        assert!(matches!(
            perturb(&one, &scene(), PerturbationKind::PartialDeletion, 0),
            Err(PerturbError::NotPerturbable { .. })
        ));
    }

    #[test]
    fn unrelated_aux_avoids_gold_points() {
        // Gold adds Midpoint(M,A,B), Collinear(A,M,B), Segment(C,M): touches A, B, C, M.
        for seed in 0..20 {
            let out = perturb(&gold(), &scene(), PerturbationKind::UnrelatedAux, seed).unwrap();
            let allowed: BTreeSet<PointLabel> = [label("P"), label("Q")].into_iter().collect();
            assert!(out.labels().is_subset(&allowed), "{out}");
        }
    }

    #[test]
    fn incorrect_connection_swaps_one_label() {
        let g = gold();
        for seed in 0..20 {
            let out = perturb(&g, &scene(), PerturbationKind::IncorrectConnection, seed).unwrap();
            assert_eq!(out.len(), g.len());
            let diffs: Vec<_> = g
                .statements
                .iter()
                .zip(&out.statements)
                .filter(|(a, b)| a != b)
                .collect();
            assert_eq!(diffs.len(), 1);
            let (before, after) = diffs[0];
            let changed = before
                .labels()
                .iter()
                .zip(after.labels())
                .filter(|(x, y)| **x != *y)
                .count();
            assert_eq!(changed, 1);
        }
    }

    #[test]
    fn add_irrelevant_lines_appends_connects() {
        let g = gold();
        let out = perturb(&g, &scene(), PerturbationKind::AddIrrelevantLines, 3).unwrap();
        assert!(out.len() > g.len());
        assert_eq!(&out.statements[..g.len()], &g.statements[..]);
        assert!(out.statements[g.len()..]
            .iter()
            .all(|s| matches!(s, AuxStatement::Connect { .. })));
    }

    #[test]
    fn every_kind_drops_the_score_and_is_deterministic() {
        let g = gold();
        let reference = apply_program(&g, &scene()).unwrap();
        for kind in PerturbationKind::ALL {
            for seed in 0..10 {
                let a = perturb(&g, &scene(), kind, seed).unwrap();
                let b = perturb(&g, &scene(), kind, seed).unwrap();
                assert_eq!(a, b);
                assert_ne!(a, g);
                let s = consistency_score(&scene(), &a, &reference).unwrap();
                assert!(s.score < Score::ONE, "{kind}: {a}");
            }
        }
    }

    #[test]
    fn deletion_closure_drops_dependents() {
        let g = gold();
        assert_eq!(deletion_closure(&g, &scene(), 0), BTreeSet::from([0, 1]));
        assert_eq!(deletion_closure(&g, &scene(), 1), BTreeSet::from([1]));
    }
}
