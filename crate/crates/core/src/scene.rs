//! Symbolic diagram model.
//!
//! A [`Scene`] is a purely declarative picture of a geometry diagram: labeled
//! points, drawn segments and a set of declared relations. There are no
//! coordinates anywhere in this module; two scenes are compared through their
//! canonical relation sets only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::report::ValidationReport;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid point label {0:?}")]
    InvalidLabel(String),
    #[error("arity error: {0}")]
    Arity(String),
    #[error("invalid scene: {0}")]
    InvalidScene(ValidationReport),
    #[error("scene json: {0}")]
    Json(String),
}

/// Exam-style point label: one uppercase letter, optionally followed by one digit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PointLabel(String);

impl PointLabel {
    pub fn new(s: &str) -> Result<Self, SceneError> {
        let b = s.as_bytes();
        let ok = match b.len() {
            1 => b[0].is_ascii_uppercase(),
            2 => b[0].is_ascii_uppercase() && b[1].is_ascii_digit(),
            _ => false,
        };
        if ok {
            Ok(PointLabel(s.to_string()))
        } else {
            Err(SceneError::InvalidLabel(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PointLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for PointLabel {
    type Err = SceneError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PointLabel::new(s)
    }
}

impl Serialize for PointLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for PointLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        PointLabel::new(&s).map_err(D::Error::custom)
    }
}

/// Parses a label, panicking on malformed input. Intended for literals.
pub fn label(s: &str) -> PointLabel {
    PointLabel::new(s).unwrap_or_else(|e| panic!("{e}"))
}

/// Label bijection used for renaming tests and label-equivariance checks.
pub type Renaming = BTreeMap<PointLabel, PointLabel>;

fn rename_label(l: &PointLabel, map: &Renaming) -> PointLabel {
    map.get(l).cloned().unwrap_or_else(|| l.clone())
}

/// A segment reference. Endpoint order is only normalized by [`SegRef::canonical`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegRef(pub PointLabel, pub PointLabel);

impl SegRef {
    pub fn new(a: &PointLabel, b: &PointLabel) -> Self {
        SegRef(a.clone(), b.clone())
    }

    pub fn canonical(&self) -> Result<SegRef, SceneError> {
        if self.0 == self.1 {
            return Err(SceneError::Arity(format!("degenerate segment {}{}", self.0, self.1)));
        }
        Ok(if self.0 <= self.1 {
            self.clone()
        } else {
            SegRef(self.1.clone(), self.0.clone())
        })
    }

    pub fn is_canonical(&self) -> bool {
        self.0 < self.1
    }

    pub fn contains(&self, l: &PointLabel) -> bool {
        &self.0 == l || &self.1 == l
    }

    fn rename(&self, map: &Renaming) -> SegRef {
        SegRef(rename_label(&self.0, map), rename_label(&self.1, map))
    }
}

impl fmt::Display for SegRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.0, self.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelationKind {
    Segment,
    Midpoint,
    Perpendicular,
    Parallel,
    Collinear,
    AngleBisector,
    Intersection,
    CoordFrameDeclared,
}

impl RelationKind {
    pub const ALL: [RelationKind; 8] = [
        RelationKind::Segment,
        RelationKind::Midpoint,
        RelationKind::Perpendicular,
        RelationKind::Parallel,
        RelationKind::Collinear,
        RelationKind::AngleBisector,
        RelationKind::Intersection,
        RelationKind::CoordFrameDeclared,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelationKind::Segment => "Segment",
            RelationKind::Midpoint => "Midpoint",
            RelationKind::Perpendicular => "Perpendicular",
            RelationKind::Parallel => "Parallel",
            RelationKind::Collinear => "Collinear",
            RelationKind::AngleBisector => "AngleBisector",
            RelationKind::Intersection => "Intersection",
            RelationKind::CoordFrameDeclared => "CoordFrameDeclared",
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A declared geometric relation over point labels.
///
/// Values may be held in non-canonical form (for instance straight out of a
/// JSON document); [`Relation::canonicalize`] produces the normal form used by
/// every set comparison.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    Segment(SegRef),
    /// `mid` is the midpoint of `a`-`b`.
    Midpoint {
        mid: PointLabel,
        a: PointLabel,
        b: PointLabel,
    },
    Perpendicular(SegRef, SegRef),
    Parallel(SegRef, SegRef),
    Collinear(Vec<PointLabel>),
    /// `bisector` bisects the angle `angle[0]-angle[1]-angle[2]` (vertex in the middle).
    AngleBisector {
        bisector: SegRef,
        angle: [PointLabel; 3],
    },
    /// `point` lies on both segments.
    Intersection {
        point: PointLabel,
        first: SegRef,
        second: SegRef,
    },
    CoordFrameDeclared(PointLabel),
}

impl Relation {
    pub fn segment(a: &str, b: &str) -> Relation {
        Relation::Segment(SegRef(label(a), label(b)))
    }

    pub fn midpoint(m: &str, a: &str, b: &str) -> Relation {
        Relation::Midpoint {
            mid: label(m),
            a: label(a),
            b: label(b),
        }
    }

    pub fn collinear(pts: &[&str]) -> Relation {
        Relation::Collinear(pts.iter().map(|p| label(p)).collect())
    }

    pub fn kind(&self) -> RelationKind {
        match self {
            Relation::Segment(_) => RelationKind::Segment,
            Relation::Midpoint { .. } => RelationKind::Midpoint,
            Relation::Perpendicular(..) => RelationKind::Perpendicular,
            Relation::Parallel(..) => RelationKind::Parallel,
            Relation::Collinear(_) => RelationKind::Collinear,
            Relation::AngleBisector { .. } => RelationKind::AngleBisector,
            Relation::Intersection { .. } => RelationKind::Intersection,
            Relation::CoordFrameDeclared(_) => RelationKind::CoordFrameDeclared,
        }
    }

    /// Every label mentioned by the relation, in argument order.
    pub fn labels(&self) -> Vec<&PointLabel> {
        match self {
            Relation::Segment(s) => vec![&s.0, &s.1],
            Relation::Midpoint { mid, a, b } => vec![mid, a, b],
            Relation::Perpendicular(x, y) | Relation::Parallel(x, y) => {
                vec![&x.0, &x.1, &y.0, &y.1]
            }
            Relation::Collinear(pts) => pts.iter().collect(),
            Relation::AngleBisector { bisector, angle } => {
                vec![&bisector.0, &bisector.1, &angle[0], &angle[1], &angle[2]]
            }
            Relation::Intersection { point, first, second } => vec![point, &first.0, &first.1, &second.0, &second.1],
            Relation::CoordFrameDeclared(o) => vec![o],
        }
    }

    /// Normal form: symmetric slots sorted, segment endpoints sorted.
    /// Idempotent. Fails on degenerate argument lists.
    pub fn canonicalize(&self) -> Result<Relation, SceneError> {
        let distinct = |ls: &[&PointLabel], what: &str| -> Result<(), SceneError> {
            let set: BTreeSet<_> = ls.iter().collect();
            if set.len() != ls.len() {
                Err(SceneError::Arity(format!("{what}: repeated label")))
            } else {
                Ok(())
            }
        };
        let sorted_pair = |x: &SegRef, y: &SegRef, what: &str| -> Result<(SegRef, SegRef), SceneError> {
            let (x, y) = (x.canonical()?, y.canonical()?);
            if x == y {
                return Err(SceneError::Arity(format!("{what}: identical segments {x}")));
            }
            Ok(if x <= y { (x, y) } else { (y, x) })
        };
        Ok(match self {
            Relation::Segment(s) => Relation::Segment(s.canonical()?),
            Relation::Midpoint { mid, a, b } => {
                distinct(&[mid, a, b], "Midpoint")?;
                let (a, b) = if a <= b { (a, b) } else { (b, a) };
                Relation::Midpoint {
                    mid: mid.clone(),
                    a: a.clone(),
                    b: b.clone(),
                }
            }
            Relation::Perpendicular(x, y) => {
                let (x, y) = sorted_pair(x, y, "Perpendicular")?;
                Relation::Perpendicular(x, y)
            }
            Relation::Parallel(x, y) => {
                let (x, y) = sorted_pair(x, y, "Parallel")?;
                Relation::Parallel(x, y)
            }
            Relation::Collinear(pts) => {
                if pts.len() < 3 {
                    return Err(SceneError::Arity(format!(
                        "Collinear needs at least 3 labels, got {}",
                        pts.len()
                    )));
                }
                let refs: Vec<&PointLabel> = pts.iter().collect();
                distinct(&refs, "Collinear")?;
                let mut pts = pts.clone();
                pts.sort();
                Relation::Collinear(pts)
            }
            Relation::AngleBisector { bisector, angle } => {
                let bisector = bisector.canonical()?;
                distinct(&[&angle[0], &angle[1], &angle[2]], "AngleBisector angle")?;
                if !bisector.contains(&angle[1]) {
                    return Err(SceneError::Arity(format!(
                        "AngleBisector: bisector {bisector} does not start at vertex {}",
                        angle[1]
                    )));
                }
                let (p, q) = if angle[0] <= angle[2] {
                    (&angle[0], &angle[2])
                } else {
                    (&angle[2], &angle[0])
                };
                Relation::AngleBisector {
                    bisector,
                    angle: [p.clone(), angle[1].clone(), q.clone()],
                }
            }
            Relation::Intersection { point, first, second } => {
                let (first, second) = sorted_pair(first, second, "Intersection")?;
                Relation::Intersection {
                    point: point.clone(),
                    first,
                    second,
                }
            }
            Relation::CoordFrameDeclared(o) => Relation::CoordFrameDeclared(o.clone()),
        })
    }

    /// Applies a label map to every argument. Unmapped labels are kept.
    pub fn rename(&self, map: &Renaming) -> Relation {
        match self {
            Relation::Segment(s) => Relation::Segment(s.rename(map)),
            Relation::Midpoint { mid, a, b } => Relation::Midpoint {
                mid: rename_label(mid, map),
                a: rename_label(a, map),
                b: rename_label(b, map),
            },
            Relation::Perpendicular(x, y) => Relation::Perpendicular(x.rename(map), y.rename(map)),
            Relation::Parallel(x, y) => Relation::Parallel(x.rename(map), y.rename(map)),
            Relation::Collinear(pts) => Relation::Collinear(pts.iter().map(|p| rename_label(p, map)).collect()),
            Relation::AngleBisector { bisector, angle } => Relation::AngleBisector {
                bisector: bisector.rename(map),
                angle: [
                    rename_label(&angle[0], map),
                    rename_label(&angle[1], map),
                    rename_label(&angle[2], map),
                ],
            },
            Relation::Intersection { point, first, second } => Relation::Intersection {
                point: rename_label(point, map),
                first: first.rename(map),
                second: second.rename(map),
            },
            Relation::CoordFrameDeclared(o) => Relation::CoordFrameDeclared(rename_label(o, map)),
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Relation::Segment(s) => write!(f, "Seg({},{})", s.0, s.1),
            Relation::Midpoint { mid, a, b } => write!(f, "Midpoint({mid},{a},{b})"),
            Relation::Perpendicular(x, y) => write!(f, "Perpendicular({x},{y})"),
            Relation::Parallel(x, y) => write!(f, "Parallel({x},{y})"),
            Relation::Collinear(p) => {
                let s: Vec<&str> = p.iter().map(|l| l.as_str()).collect();
                write!(f, "Collinear({})", s.join(","))
            }
            Relation::AngleBisector { bisector, angle } => {
                write!(f, "AngleBisector({bisector},{}{}{})", angle[0], angle[1], angle[2])
            }
            Relation::Intersection { point, first, second } => write!(f, "Intersection({point},{first},{second})"),
            Relation::CoordFrameDeclared(o) => write!(f, "CoordFrameDeclared({o})"),
        }
    }
}

/// JSON argument: a bare label or a grouped tuple (segment or angle triple).
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Arg {
    Label(PointLabel),
    Group(Vec<PointLabel>),
}

#[derive(Serialize, Deserialize)]
struct RawRelation {
    kind: RelationKind,
    args: Vec<Arg>,
}

fn seg_arg(s: &SegRef) -> Arg {
    Arg::Group(vec![s.0.clone(), s.1.clone()])
}

impl Serialize for Relation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let args = match self {
            Relation::Segment(x) => vec![Arg::Label(x.0.clone()), Arg::Label(x.1.clone())],
            Relation::Midpoint { mid, a, b } => {
                vec![Arg::Label(mid.clone()), Arg::Label(a.clone()), Arg::Label(b.clone())]
            }
            Relation::Perpendicular(x, y) | Relation::Parallel(x, y) => {
                vec![seg_arg(x), seg_arg(y)]
            }
            Relation::Collinear(p) => p.iter().cloned().map(Arg::Label).collect(),
            Relation::AngleBisector { bisector, angle } => {
                vec![seg_arg(bisector), Arg::Group(angle.to_vec())]
            }
            Relation::Intersection { point, first, second } => {
                vec![Arg::Label(point.clone()), seg_arg(first), seg_arg(second)]
            }
            Relation::CoordFrameDeclared(o) => vec![Arg::Label(o.clone())],
        };
        RawRelation {
            kind: self.kind(),
            args,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Relation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawRelation::deserialize(d)?;
        let arity = |msg: &str| D::Error::custom(format!("{} {}", raw.kind, msg));
        let lab = |a: &Arg| match a {
            Arg::Label(l) => Ok(l.clone()),
            Arg::Group(_) => Err(arity("expects a label here")),
        };
        let group = |a: &Arg, n: usize| match a {
            Arg::Group(g) if g.len() == n => Ok(g.clone()),
            _ => Err(arity(&format!("expects a {n}-label group here"))),
        };
        let seg = |a: &Arg| group(a, 2).map(|g| SegRef(g[0].clone(), g[1].clone()));
        let args = &raw.args;
        let want = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(arity(&format!("takes {n} args, got {}", args.len())))
            }
        };
        Ok(match raw.kind {
            RelationKind::Segment => {
                want(2)?;
                Relation::Segment(SegRef(lab(&args[0])?, lab(&args[1])?))
            }
            RelationKind::Midpoint => {
                want(3)?;
                Relation::Midpoint {
                    mid: lab(&args[0])?,
                    a: lab(&args[1])?,
                    b: lab(&args[2])?,
                }
            }
            RelationKind::Perpendicular => {
                want(2)?;
                Relation::Perpendicular(seg(&args[0])?, seg(&args[1])?)
            }
            RelationKind::Parallel => {
                want(2)?;
                Relation::Parallel(seg(&args[0])?, seg(&args[1])?)
            }
            RelationKind::Collinear => {
                if args.len() < 3 {
                    return Err(arity("takes at least 3 args"));
                }
                Relation::Collinear(args.iter().map(&lab).collect::<Result<_, _>>()?)
            }
            RelationKind::AngleBisector => {
                want(2)?;
                let g = group(&args[1], 3)?;
                Relation::AngleBisector {
                    bisector: seg(&args[0])?,
                    angle: [g[0].clone(), g[1].clone(), g[2].clone()],
                }
            }
            RelationKind::Intersection => {
                want(3)?;
                Relation::Intersection {
                    point: lab(&args[0])?,
                    first: seg(&args[1])?,
                    second: seg(&args[2])?,
                }
            }
            RelationKind::CoordFrameDeclared => {
                want(1)?;
                Relation::CoordFrameDeclared(lab(&args[0])?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordFrame {
    pub origin: PointLabel,
    #[serde(default)]
    pub axis_hints: Vec<PointLabel>,
}

/// A symbolic diagram.
///
/// Fields are kept as declared so that malformed input can be reported by
/// [`validate_scene`]; use [`Scene::relation_set`] for set semantics.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub points: Vec<PointLabel>,
    pub segments: Vec<SegRef>,
    pub relations: Vec<Relation>,
    pub frame: Option<CoordFrame>,
}

impl Scene {
    pub fn with_points(labels: &[&str]) -> Result<Scene, SceneError> {
        Ok(Scene {
            points: labels.iter().map(|l| PointLabel::new(l)).collect::<Result<_, _>>()?,
            ..Scene::default()
        })
    }

    pub fn has_point(&self, l: &PointLabel) -> bool {
        self.points.contains(l)
    }

    pub fn add_point(&mut self, l: PointLabel) {
        if !self.points.contains(&l) {
            self.points.push(l);
        }
    }

    /// Adds a canonical segment if not already present.
    pub fn add_segment(&mut self, a: &str, b: &str) -> Result<(), SceneError> {
        let s = SegRef(PointLabel::new(a)?, PointLabel::new(b)?).canonical()?;
        if !self.segments.contains(&s) {
            self.segments.push(s);
        }
        Ok(())
    }

    /// Adds the canonical form of `rel` if not already present.
    pub fn add_relation(&mut self, rel: Relation) -> Result<(), SceneError> {
        let rel = rel.canonicalize()?;
        if !self.relations.contains(&rel) {
            self.relations.push(rel);
        }
        Ok(())
    }

    pub fn point_set(&self) -> BTreeSet<PointLabel> {
        self.points.iter().cloned().collect()
    }

    /// Canonical relation set: declared relations, one `Segment` relation per
    /// drawn segment, and `CoordFrameDeclared` for a declared frame.
    /// Entries that fail to canonicalize are kept verbatim; validate first
    /// when that matters.
    pub fn relation_set(&self) -> BTreeSet<Relation> {
        let mut out = BTreeSet::new();
        for s in &self.segments {
            out.insert(Relation::Segment(s.canonical().unwrap_or_else(|_| s.clone())));
        }
        for r in &self.relations {
            out.insert(r.canonicalize().unwrap_or_else(|_| r.clone()));
        }
        if let Some(frame) = &self.frame {
            out.insert(Relation::CoordFrameDeclared(frame.origin.clone()));
        }
        out
    }

    /// Same scene with every list sorted and every entry in canonical form.
    /// Duplicates are kept so that invalid scenes stay invalid.
    pub fn sorted(&self) -> Scene {
        let mut points = self.points.clone();
        points.sort();
        let mut segments: Vec<SegRef> = self
            .segments
            .iter()
            .map(|s| s.canonical().unwrap_or_else(|_| s.clone()))
            .collect();
        segments.sort();
        let mut relations: Vec<Relation> = self
            .relations
            .iter()
            .map(|r| r.canonicalize().unwrap_or_else(|_| r.clone()))
            .collect();
        relations.sort();
        Scene {
            points,
            segments,
            relations,
            frame: self.frame.clone(),
        }
    }

    /// Deterministic sorted JSON document.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.sorted()).expect("scene serialization is infallible")
    }

    pub fn from_json(s: &str) -> Result<Scene, SceneError> {
        serde_json::from_str(s).map_err(|e| SceneError::Json(e.to_string()))
    }

    pub fn rename(&self, map: &Renaming) -> Scene {
        Scene {
            points: self.points.iter().map(|p| rename_label(p, map)).collect(),
            segments: self.segments.iter().map(|s| s.rename(map)).collect(),
            relations: self.relations.iter().map(|r| r.rename(map)).collect(),
            frame: self.frame.as_ref().map(|f| CoordFrame {
                origin: rename_label(&f.origin, map),
                axis_hints: f.axis_hints.iter().map(|p| rename_label(p, map)).collect(),
            }),
        }
    }

    pub fn ensure_valid(&self) -> Result<(), SceneError> {
        let report = validate_scene(self);
        if report.is_empty() {
            Ok(())
        } else {
            Err(SceneError::InvalidScene(report))
        }
    }
}

/// Relations and points present in `reference` but not in `original`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagramDelta {
    pub added_points: BTreeSet<PointLabel>,
    pub added_relations: BTreeSet<Relation>,
}

impl DiagramDelta {
    pub fn is_empty(&self) -> bool {
        self.added_points.is_empty() && self.added_relations.is_empty()
    }
}

/// One-directional set difference `reference \ original` over canonical forms.
pub fn diagram_delta(original: &Scene, reference: &Scene) -> Result<DiagramDelta, SceneError> {
    original.ensure_valid()?;
    reference.ensure_valid()?;
    let orig_rel = original.relation_set();
    let orig_pts = original.point_set();
    Ok(DiagramDelta {
        added_points: reference
            .point_set()
            .into_iter()
            .filter(|p| !orig_pts.contains(p))
            .collect(),
        added_relations: reference
            .relation_set()
            .into_iter()
            .filter(|r| !orig_rel.contains(r))
            .collect(),
    })
}

/// Lists every invariant violation of `s`. Empty iff the scene is valid.
///
/// Codes: `DUPLICATE_POINT`, `UNKNOWN_LABEL`, `DEGENERATE_SEGMENT`,
/// `DUPLICATE_SEGMENT`, `ARITY`, `DUPLICATE_RELATION`, `FRAME_AXIS_DUPLICATE`,
/// `FRAME_AXIS_COUNT`.
pub fn validate_scene(s: &Scene) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut points = BTreeSet::new();
    for p in &s.points {
        if !points.insert(p) {
            report.push("DUPLICATE_POINT", p.as_str());
        }
    }
    let mut unknown = BTreeSet::new();
    let check = |l: &PointLabel, unknown: &mut BTreeSet<PointLabel>| {
        if !points.contains(l) {
            unknown.insert(l.clone());
        }
    };

    let mut seen_segments = BTreeSet::new();
    for seg in &s.segments {
        check(&seg.0, &mut unknown);
        check(&seg.1, &mut unknown);
        match seg.canonical() {
            Ok(c) => {
                if !seen_segments.insert(c.clone()) {
                    report.push("DUPLICATE_SEGMENT", c.to_string());
                }
            }
            Err(_) => report.push("DEGENERATE_SEGMENT", seg.to_string()),
        }
    }

    let mut seen_relations = BTreeSet::new();
    for rel in &s.relations {
        for l in rel.labels() {
            check(l, &mut unknown);
        }
        match rel.canonicalize() {
            Ok(c) => {
                if !seen_relations.insert(c.clone()) {
                    report.push("DUPLICATE_RELATION", c.to_string());
                }
            }
            Err(e) => report.push("ARITY", format!("{rel}: {e}")),
        }
    }

    if let Some(frame) = &s.frame {
        check(&frame.origin, &mut unknown);
        let mut hints = BTreeSet::new();
        for h in &frame.axis_hints {
            check(h, &mut unknown);
            if !hints.insert(h) {
                report.push("FRAME_AXIS_DUPLICATE", h.as_str());
            }
        }
        if frame.axis_hints.len() > 3 {
            report.push("FRAME_AXIS_COUNT", frame.axis_hints.len().to_string());
        }
    }

    for l in unknown {
        report.push("UNKNOWN_LABEL", l.as_str());
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Scene {
        let mut s = Scene::with_points(&["A", "B", "C", "D"]).unwrap();
        s.add_relation(Relation::segment("A", "B")).unwrap();
        s
    }

    #[test]
    fn labels_follow_exam_style() {
        assert!(PointLabel::new("A").is_ok());
        assert!(PointLabel::new("B1").is_ok());
        assert!(PointLabel::new("a").is_err());
        assert!(PointLabel::new("AB").is_err());
        assert!(PointLabel::new("A12").is_err());
        assert!(PointLabel::new("").is_err());
    }

    #[test]
    fn canonical_segment_and_symmetric_slots() {
        assert_eq!(
            Relation::segment("B", "A").canonicalize().unwrap(),
            Relation::segment("A", "B")
        );
        let par = Relation::Parallel(SegRef(label("C"), label("D")), SegRef(label("A"), label("B")));
        assert_eq!(
            par.canonicalize().unwrap(),
            Relation::Parallel(SegRef(label("A"), label("B")), SegRef(label("C"), label("D")))
        );
        assert_eq!(
            Relation::midpoint("M", "B", "A").canonicalize().unwrap(),
            Relation::midpoint("M", "A", "B")
        );
    }

    #[test]
    fn canonicalize_rejects_malformed() {
        assert!(Relation::segment("A", "A").canonicalize().is_err());
        assert!(Relation::collinear(&["A", "B"]).canonicalize().is_err());
        assert!(Relation::collinear(&["A", "B", "A"]).canonicalize().is_err());
        assert!(Relation::midpoint("A", "A", "B").canonicalize().is_err());
        let same = Relation::Perpendicular(SegRef(label("A"), label("B")), SegRef(label("B"), label("A")));
        assert!(matches!(same.canonicalize(), Err(SceneError::Arity(_))));
        let off_vertex = Relation::AngleBisector {
            bisector: SegRef(label("C"), label("D")),
            angle: [label("B"), label("A"), label("C")],
        };
        assert!(off_vertex.canonicalize().is_err());
    }

    #[test]
    fn delta_of_self_is_empty() {
        let s = base();
        assert!(diagram_delta(&s, &s).unwrap().is_empty());
    }

    #[test]
    fn delta_lists_added_structure() {
        let original = base();
        let mut reference = base();
        reference.add_point(label("M"));
        reference.add_relation(Relation::midpoint("M", "A", "B")).unwrap();
        reference.add_relation(Relation::segment("C", "M")).unwrap();
        let d = diagram_delta(&original, &reference).unwrap();
        assert_eq!(d.added_points, [label("M")].into_iter().collect());
        let want: BTreeSet<Relation> = [Relation::midpoint("M", "A", "B"), Relation::segment("C", "M")]
            .into_iter()
            .collect();
        assert_eq!(d.added_relations, want);
    }

    #[test]
    fn delta_is_one_directional() {
        let mut original = base();
        original.add_relation(Relation::segment("C", "D")).unwrap();
        let reference = base();
        let d = diagram_delta(&original, &reference).unwrap();
        assert!(d.added_relations.is_empty());
    }

    #[test]
    fn delta_rejects_invalid_scene() {
        let mut bad = base();
        bad.segments.push(SegRef(label("A"), label("X")));
        assert!(matches!(diagram_delta(&bad, &base()), Err(SceneError::InvalidScene(_))));
    }

    #[test]
    fn validation_codes() {
        assert!(validate_scene(&base()).is_empty());

        let mut unknown = base();
        unknown.segments.push(SegRef(label("A"), label("X")));
        assert!(validate_scene(&unknown).contains("UNKNOWN_LABEL", "X"));

        let mut dup = base();
        dup.segments.push(SegRef(label("A"), label("C")));
        dup.segments.push(SegRef(label("C"), label("A")));
        assert!(validate_scene(&dup).has_code("DUPLICATE_SEGMENT"));

        let mut dup_rel = base();
        dup_rel.relations.push(Relation::segment("B", "A"));
        assert!(validate_scene(&dup_rel).has_code("DUPLICATE_RELATION"));

        let mut frame = base();
        frame.frame = Some(CoordFrame {
            origin: label("Z"),
            axis_hints: vec![label("A"), label("A")],
        });
        let r = validate_scene(&frame);
        assert!(r.contains("UNKNOWN_LABEL", "Z"));
        assert!(r.has_code("FRAME_AXIS_DUPLICATE"));
    }

    #[test]
    fn json_document_shape() {
        let mut s = base();
        s.add_point(label("M"));
        s.add_segment("C", "A").unwrap();
        s.add_relation(Relation::midpoint("M", "B", "A")).unwrap();
        assert_eq!(
            s.to_json(),
            r#"{"points":["A","B","C","D","M"],"segments":[["A","C"]],"relations":[{"kind":"Segment","args":["A","B"]},{"kind":"Midpoint","args":["M","A","B"]}],"frame":null}"#
        );
    }

    #[test]
    fn json_rejects_bad_arity() {
        let doc =
            r#"{"points":["A","B"],"segments":[],"relations":[{"kind":"Midpoint","args":["A","B"]}],"frame":null}"#;
        assert!(Scene::from_json(doc).is_err());
        let doc = r#"{"points":["a"],"segments":[],"relations":[],"frame":null}"#;
        assert!(Scene::from_json(doc).is_err());
    }

    #[test]
    fn frame_declares_relation() {
        let mut s = base();
        s.frame = Some(CoordFrame {
            origin: label("A"),
            axis_hints: vec![label("B"), label("D")],
        });
        assert!(s.relation_set().contains(&Relation::CoordFrameDeclared(label("A"))));
    }
}
