//! Synthetic auxiliary-line tasks and a tabular softmax policy over them.
//!
//! Each task offers a fixed-size menu of candidate construction statements and
//! answer options. A trajectory emits some statements, one answer, then STOP.
//! The policy keeps one logit per `(step, difficulty, action)`, so
//! log-probabilities and their gradients are exact closed forms.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{wrap_aux, AuxProgram, AuxStatement};
use crate::oracle::{
    answer_reward, apply_program, composite_reward, consistency_score, induced_relations, OracleError, RewardBundle,
    Score,
};
use crate::scene::{label, PointLabel, Relation, Scene};
use crate::seed::{derive_seed, rng};

pub const NUM_CANDIDATES: usize = 8;
pub const NUM_ANSWERS: usize = 10;
pub const STOP: usize = NUM_CANDIDATES + NUM_ANSWERS;
pub const NUM_ACTIONS: usize = STOP + 1;
pub const MAX_STEPS: usize = 16;
pub const NUM_PARAMS: usize = MAX_STEPS * 2 * NUM_ACTIONS;

/// Menu slots holding the gold statements, per difficulty, in gold order.
const EASY_AUX_SLOTS: [usize; 1] = [5];
const HARD_AUX_SLOTS: [usize; 2] = [1, 6];
const EASY_ANSWER_SLOT: usize = 7;
const HARD_ANSWER_SLOT: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("step {step}: action {action} is not legal")]
    IllegalAction { step: usize, action: usize },
    #[error("trajectory longer than {MAX_STEPS} steps")]
    TooLong,
    #[error("task generation failed: {0}")]
    Generation(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Hard,
}

impl Difficulty {
    /// Hard iff the construction takes two or more statements.
    pub fn of(aux: &AuxProgram) -> Difficulty {
        if aux.len() >= 2 {
            Difficulty::Hard
        } else {
            Difficulty::Easy
        }
    }

    pub fn index(self) -> usize {
        match self {
            Difficulty::Easy => 0,
            Difficulty::Hard => 1,
        }
    }

    fn aux_slots(self) -> &'static [usize] {
        match self {
            Difficulty::Easy => &EASY_AUX_SLOTS,
            Difficulty::Hard => &HARD_AUX_SLOTS,
        }
    }

    fn answer_slot(self) -> usize {
        match self {
            Difficulty::Easy => EASY_ANSWER_SLOT,
            Difficulty::Hard => HARD_ANSWER_SLOT,
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Statement(usize),
    Answer(usize),
    Stop,
}

impl Action {
    pub fn from_id(id: usize) -> Option<Action> {
        match id {
            i if i < NUM_CANDIDATES => Some(Action::Statement(i)),
            i if i < STOP => Some(Action::Answer(i - NUM_CANDIDATES)),
            STOP => Some(Action::Stop),
            _ => None,
        }
    }

    pub fn id(self) -> usize {
        match self {
            Action::Statement(i) => i,
            Action::Answer(i) => NUM_CANDIDATES + i,
            Action::Stop => STOP,
        }
    }
}

/// One problem instance: original scene, question, gold construction and
/// answer, plus the action menu the policy chooses from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: u64,
    pub scene: Scene,
    pub question: String,
    pub gold_aux: AuxProgram,
    pub gold_reference: Scene,
    pub gold_answer: String,
    pub difficulty: Difficulty,
    pub candidates: Vec<AuxStatement>,
    pub answer_options: Vec<String>,
}

impl Task {
    /// Gold action sequence: statements, answer, STOP.
    pub fn gold_actions(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.difficulty.aux_slots().to_vec();
        out.push(Action::Answer(self.difficulty.answer_slot()).id());
        out.push(STOP);
        out
    }

    /// Legal actions after `prefix`: unused candidates whose labels resolve,
    /// any answer, STOP; only STOP once an answer was given.
    pub fn legal_actions(&self, prefix: &[usize]) -> Vec<usize> {
        let answered = prefix
            .iter()
            .any(|&a| matches!(Action::from_id(a), Some(Action::Answer(_))));
        if answered {
            return vec![STOP];
        }
        let mut known: BTreeSet<&PointLabel> = self.scene.points.iter().collect();
        let mut used = [false; NUM_CANDIDATES];
        for &a in prefix {
            if let Some(Action::Statement(i)) = Action::from_id(a) {
                used[i] = true;
                if let Some(l) = self.candidates[i].introduced() {
                    known.insert(l);
                }
            }
        }
        let mut out: Vec<usize> = (0..NUM_CANDIDATES)
            .filter(|&i| !used[i] && self.candidates[i].required().iter().all(|l| known.contains(l)))
            .collect();
        out.extend(NUM_CANDIDATES..STOP);
        out.push(STOP);
        out
    }

    /// Legal set at every step of `actions`; fails on the first illegal action.
    pub fn replay(&self, actions: &[usize]) -> Result<Vec<Vec<usize>>, EnvError> {
        if actions.len() > MAX_STEPS {
            return Err(EnvError::TooLong);
        }
        let mut legal = Vec::with_capacity(actions.len());
        for (step, &a) in actions.iter().enumerate() {
            let l = self.legal_actions(&actions[..step]);
            if !l.contains(&a) {
                return Err(EnvError::IllegalAction { step, action: a });
            }
            legal.push(l);
        }
        Ok(legal)
    }

    /// Emitted statements (in order) and the chosen answer, if any.
    pub fn decode(&self, actions: &[usize]) -> (AuxProgram, String) {
        let mut statements = Vec::new();
        let mut answer = String::new();
        for &a in actions {
            match Action::from_id(a) {
                Some(Action::Statement(i)) => statements.push(self.candidates[i].clone()),
                Some(Action::Answer(i)) => answer = self.answer_options[i].clone(),
                _ => {}
            }
        }
        (AuxProgram::new(statements), answer)
    }

    /// Composite reward of a decoded solution.
    pub fn reward(&self, aux: &AuxProgram, answer: &str, alpha: f64) -> Result<RewardBundle, OracleError> {
        let r_aux = consistency_score(&self.scene, aux, &self.gold_reference)?.value();
        composite_reward(r_aux, answer_reward(answer, &self.gold_answer), alpha)
    }

    /// Replays `actions` as a trajectory with all log-prob vectors zeroed.
    pub fn trajectory(&self, actions: &[usize]) -> Result<Trajectory, EnvError> {
        let legal = self.replay(actions)?;
        let (decoded_aux, decoded_answer) = self.decode(actions);
        let t = actions.len();
        Ok(Trajectory {
            task_id: self.id,
            difficulty: self.difficulty,
            actions: actions.to_vec(),
            legal,
            logp_current: vec![0.0; t],
            logp_old: vec![0.0; t],
            logp_ref: vec![0.0; t],
            decoded_aux,
            decoded_answer,
            reward: None,
        })
    }

    pub fn gold_trajectory(&self) -> Trajectory {
        self.trajectory(&self.gold_actions())
            .expect("gold actions are legal by construction")
    }
}

/// One sampled solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: u64,
    pub difficulty: Difficulty,
    pub actions: Vec<usize>,
    /// Legal action set at each step.
    pub legal: Vec<Vec<usize>>,
    pub logp_current: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
    pub decoded_aux: AuxProgram,
    pub decoded_answer: String,
    pub reward: Option<RewardBundle>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Solution text with the construction wrapped in aux markers.
    pub fn solution_text(&self) -> String {
        let mut out = String::new();
        if !self.decoded_aux.is_empty() {
            out.push_str(&wrap_aux(&self.decoded_aux.to_string()));
            out.push('\n');
        }
        out.push_str("Final Answer: ");
        out.push_str(&self.decoded_answer);
        out
    }
}

/// Tabular softmax policy: one logit per `(step, difficulty, action)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub theta: Vec<f64>,
}

impl Default for Policy {
    fn default() -> Self {
        Policy::zeros()
    }
}

pub fn bucket(step: usize, difficulty: Difficulty) -> usize {
    (step * 2 + difficulty.index()) * NUM_ACTIONS
}

impl Policy {
    pub fn zeros() -> Policy {
        Policy {
            theta: vec![0.0; NUM_PARAMS],
        }
    }

    /// Independent `N(0, scale^2)` logits.
    pub fn random(seed: u64, scale: f64) -> Policy {
        let mut r = rng(seed);
        let normal = Normal::new(0.0, scale.max(0.0)).expect("finite scale");
        Policy {
            theta: (0..NUM_PARAMS).map(|_| normal.sample(&mut r)).collect(),
        }
    }

    /// Puts `margin` on the gold action of every `(step, difficulty)` bucket.
    pub fn saturated(margin: f64, solve: &[Difficulty]) -> Policy {
        let mut p = Policy::zeros();
        for &d in solve {
            let mut actions: Vec<usize> = d.aux_slots().to_vec();
            actions.push(Action::Answer(d.answer_slot()).id());
            actions.push(STOP);
            for (step, a) in actions.into_iter().enumerate() {
                p.theta[bucket(step, d) + a] = margin;
            }
        }
        p
    }

    pub fn logits(&self, step: usize, difficulty: Difficulty) -> &[f64] {
        let b = bucket(step, difficulty);
        &self.theta[b..b + NUM_ACTIONS]
    }

    /// Log-probabilities over `legal`, in the same order.
    pub fn log_probs(&self, step: usize, difficulty: Difficulty, legal: &[usize]) -> Vec<f64> {
        let logits = self.logits(step, difficulty);
        let max = legal.iter().map(|&a| logits[a]).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + legal.iter().map(|&a| (logits[a] - max).exp()).sum::<f64>().ln();
        legal.iter().map(|&a| logits[a] - lse).collect()
    }

    /// Per-step log-probabilities of `traj` under this policy.
    pub fn step_logps(&self, traj: &Trajectory) -> Result<Vec<f64>, EnvError> {
        traj.actions
            .iter()
            .enumerate()
            .map(|(step, &a)| {
                let legal = &traj.legal[step];
                let pos = legal
                    .iter()
                    .position(|&x| x == a)
                    .ok_or(EnvError::IllegalAction { step, action: a })?;
                Ok(self.log_probs(step, traj.difficulty, legal)[pos])
            })
            .collect()
    }

    /// Adds `sum_t weights[t] * grad log pi(a_t)` into `out`.
    pub fn accumulate_grad(&self, traj: &Trajectory, weights: &[f64], out: &mut [f64]) -> Result<(), EnvError> {
        for (step, &a) in traj.actions.iter().enumerate() {
            let w = weights[step];
            let legal = &traj.legal[step];
            if !legal.contains(&a) {
                return Err(EnvError::IllegalAction { step, action: a });
            }
            if w == 0.0 {
                continue;
            }
            let b = bucket(step, traj.difficulty);
            let lp = self.log_probs(step, traj.difficulty, legal);
            for (&x, l) in legal.iter().zip(lp) {
                out[b + x] -= w * l.exp();
            }
            out[b + a] += w;
        }
        Ok(())
    }
}

/// Index layout of a flattened [`Policy`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub num_params: usize,
    pub max_steps: usize,
    pub difficulties: Vec<Difficulty>,
    pub num_candidates: usize,
    pub num_answers: usize,
    pub num_actions: usize,
    pub index: String,
}

impl Default for CheckpointManifest {
    fn default() -> Self {
        CheckpointManifest {
            num_params: NUM_PARAMS,
            max_steps: MAX_STEPS,
            difficulties: vec![Difficulty::Easy, Difficulty::Hard],
            num_candidates: NUM_CANDIDATES,
            num_answers: NUM_ANSWERS,
            num_actions: NUM_ACTIONS,
            index: "(step * 2 + difficulty) * num_actions + action; actions: candidates, answers, stop".into(),
        }
    }
}

/// Flat parameter array plus its manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub manifest: CheckpointManifest,
    pub theta: Vec<f64>,
}

impl PolicyCheckpoint {
    pub fn new(policy: &Policy) -> Self {
        PolicyCheckpoint {
            manifest: CheckpointManifest::default(),
            theta: policy.theta.clone(),
        }
    }

    pub fn into_policy(self) -> Result<Policy, String> {
        if self.manifest != CheckpointManifest::default() {
            return Err("checkpoint layout does not match this build".into());
        }
        if self.theta.len() != NUM_PARAMS {
            return Err(format!("expected {NUM_PARAMS} parameters, found {}", self.theta.len()));
        }
        if self.theta.iter().any(|x| !x.is_finite()) {
            return Err("checkpoint holds non-finite parameters".into());
        }
        Ok(Policy { theta: self.theta })
    }
}

/// Samples from `policy` at temperature 1. All three log-prob vectors hold
/// the sampling policy's values; the trainer overwrites `logp_ref`.
pub fn sample_trajectory(policy: &Policy, task: &Task, rng_seed: u64) -> Trajectory {
    sample_trajectory_at(policy, task, rng_seed, 1.0)
}

/// Samples from `softmax(logits / temperature)`. Recorded log-probs are
/// those of the untempered policy.
pub fn sample_trajectory_at(policy: &Policy, task: &Task, rng_seed: u64, temperature: f64) -> Trajectory {
    let mut r = rng(rng_seed);
    let mut actions = Vec::new();
    let mut legal_sets = Vec::new();
    let mut logps = Vec::new();
    for step in 0..MAX_STEPS {
        let legal = task.legal_actions(&actions);
        let lp = policy.log_probs(step, task.difficulty, &legal);
        let pick = if temperature == 1.0 {
            sample_index(&lp, &mut r)
        } else {
            let scaled: Vec<f64> = lp.iter().map(|l| l / temperature).collect();
            let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + scaled.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            let tempered: Vec<f64> = scaled.iter().map(|l| l - lse).collect();
            sample_index(&tempered, &mut r)
        };
        let a = legal[pick];
        actions.push(a);
        logps.push(lp[pick]);
        legal_sets.push(legal);
        if a == STOP {
            break;
        }
    }
    let (decoded_aux, decoded_answer) = task.decode(&actions);
    Trajectory {
        task_id: task.id,
        difficulty: task.difficulty,
        actions,
        legal: legal_sets,
        logp_current: logps.clone(),
        logp_old: logps.clone(),
        logp_ref: logps,
        decoded_aux,
        decoded_answer,
        reward: None,
    }
}

fn sample_index(logps: &[f64], r: &mut ChaCha8Rng) -> usize {
    let u: f64 = r.gen();
    let mut acc = 0.0;
    for (i, lp) in logps.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    logps.len() - 1
}

/// Sequence log-probability and its exact gradient in `theta`.
pub fn logp_and_grad(policy: &Policy, traj: &Trajectory) -> Result<(f64, Vec<f64>), EnvError> {
    let logp = policy.step_logps(traj)?.iter().sum();
    let mut grad = vec![0.0; NUM_PARAMS];
    policy.accumulate_grad(traj, &vec![1.0; traj.len()], &mut grad)?;
    Ok((logp, grad))
}

// ---------------------------------------------------------------------------
// Task generation

struct Solid {
    describe: fn(u32) -> String,
    points: &'static [&'static str],
    edges: &'static [(&'static str, &'static str)],
    faces: &'static [&'static str],
}

const CUBE_EDGES: &[(&str, &str)] = &[
    ("A", "B"),
    ("B", "C"),
    ("C", "D"),
    ("A", "D"),
    ("A1", "B1"),
    ("B1", "C1"),
    ("C1", "D1"),
    ("A1", "D1"),
    ("A", "A1"),
    ("B", "B1"),
    ("C", "C1"),
    ("D", "D1"),
];
const CUBE_POINTS: &[&str] = &["A", "B", "C", "D", "A1", "B1", "C1", "D1"];
const CUBE_FACES: &[&str] = &["ABCD", "A1B1C1D1", "ABB1A1", "BCC1B1", "CDD1C1", "ADD1A1"];

const SOLIDS: &[Solid] = &[
    Solid {
        describe: |k| format!("cube ABCD-A1B1C1D1 with edge length {k}"),
        points: CUBE_POINTS,
        edges: CUBE_EDGES,
        faces: CUBE_FACES,
    },
    Solid {
        describe: |k| {
            format!(
                "regular frustum ABCD-A1B1C1D1 with lower base edge {} and upper base edge {k}",
                2 * k
            )
        },
        points: CUBE_POINTS,
        edges: CUBE_EDGES,
        faces: CUBE_FACES,
    },
    Solid {
        describe: |k| {
            format!("pyramid P-ABCD whose base ABCD is a square of side {k} and PA is perpendicular to the base")
        },
        points: &["P", "A", "B", "C", "D"],
        edges: &[
            ("A", "B"),
            ("B", "C"),
            ("C", "D"),
            ("A", "D"),
            ("P", "A"),
            ("P", "B"),
            ("P", "C"),
            ("P", "D"),
        ],
        faces: &["ABCD", "PAB", "PBC", "PCD", "PAD"],
    },
    Solid {
        describe: |k| format!("right triangular prism ABC-A1B1C1 with AB = BC = {k} and AB perpendicular to BC"),
        points: &["A", "B", "C", "A1", "B1", "C1"],
        edges: &[
            ("A", "B"),
            ("B", "C"),
            ("A", "C"),
            ("A1", "B1"),
            ("B1", "C1"),
            ("A1", "C1"),
            ("A", "A1"),
            ("B", "B1"),
            ("C", "C1"),
        ],
        faces: &["ABC", "A1B1C1", "ABB1A1", "BCC1B1", "ACC1A1"],
    },
];

const FRESH: &[&str] = &["M", "N", "E", "F", "G", "H", "O", "Q", "K", "T"];

/// Values in (0, 1], for sines and cosines.
const RATIO_ANSWERS: &[&str] = &[
    "1/2",
    "1/3",
    "2/3",
    "3/4",
    "√2/2",
    "√3/2",
    "√3/3",
    "√6/3",
    "√6/6",
    "√5/5",
    "2√5/5",
    "√10/10",
    "3√10/10",
    "√15/5",
    "√30/6",
    "4/5",
    "3/5",
];

const LENGTH_ANSWERS: &[&str] = &[
    "1/2", "2/3", "4/3", "3/2", "√2", "√3", "2√2", "2√3", "√6", "√6/2", "√3/3", "2√5/5", "3√2/2", "4√3/3", "2", "3",
    "8/3", "9/2",
];

/// Question templates; `true` marks trigonometric quantities.
const QUANTITIES: &[(&str, bool)] = &[
    ("the cosine of the angle between line {1}{2} and plane {f}", true),
    ("the sine of the angle between line {1}{2} and plane {f}", true),
    ("the distance from point {1} to plane {f}", false),
    ("the cosine of the dihedral angle along edge {1}{2}", true),
    ("the distance between skew lines {1}{2} and {3}{4}", false),
    ("the volume of the tetrahedron {1}{2}{3}{4}", false),
];

struct Builder<'a> {
    solid: &'a Solid,
    scene: Scene,
    r: ChaCha8Rng,
}

impl Builder<'_> {
    fn labels(&self) -> Vec<PointLabel> {
        self.solid.points.iter().map(|p| label(p)).collect()
    }

    fn is_edge(&self, a: &PointLabel, b: &PointLabel) -> bool {
        self.solid
            .edges
            .iter()
            .any(|(x, y)| (*x == a.as_str() && *y == b.as_str()) || (*x == b.as_str() && *y == a.as_str()))
    }

    fn edge(&mut self) -> (PointLabel, PointLabel) {
        let (a, b) = *self.solid.edges.choose(&mut self.r).expect("solid has edges");
        (label(a), label(b))
    }

    fn non_edge(&mut self) -> (PointLabel, PointLabel) {
        let pts = self.labels();
        loop {
            let a = pts.choose(&mut self.r).unwrap().clone();
            let b = pts.choose(&mut self.r).unwrap().clone();
            if a != b && !self.is_edge(&a, &b) {
                return (a, b);
            }
        }
    }

    fn point_except(&mut self, avoid: &[&PointLabel]) -> PointLabel {
        let pts: Vec<PointLabel> = self.labels().into_iter().filter(|p| !avoid.contains(&p)).collect();
        pts.choose(&mut self.r).expect("enough points").clone()
    }

    fn fresh(&mut self, avoid: &BTreeSet<PointLabel>) -> PointLabel {
        let pool: Vec<&str> = FRESH
            .iter()
            .copied()
            .filter(|f| !self.solid.points.contains(f) && !avoid.contains(&label(f)))
            .collect();
        label(pool.choose(&mut self.r).expect("fresh labels available"))
    }

    /// A single self-contained statement.
    fn simple_statement(&mut self, avoid: &BTreeSet<PointLabel>) -> AuxStatement {
        match self.r.gen_range(0..6) {
            0 => {
                let (a, b) = self.non_edge();
                AuxStatement::Connect { a, b }
            }
            1 => {
                let (a, b) = self.edge();
                AuxStatement::TakeMidpoint {
                    mid: self.fresh(avoid),
                    a,
                    b,
                }
            }
            2 => {
                let (a, b) = self.edge();
                let from = self.point_except(&[&a, &b]);
                AuxStatement::DropPerpendicular {
                    from,
                    a,
                    b,
                    foot: self.fresh(avoid),
                }
            }
            3 => {
                let (a, b) = self.edge();
                let through = self.point_except(&[&a, &b]);
                AuxStatement::DrawParallel {
                    a,
                    b,
                    through,
                    to: self.fresh(avoid),
                }
            }
            4 => AuxStatement::EstablishFrame {
                origin: self.point_except(&[]),
            },
            _ => {
                let (a, b) = self.non_edge();
                let (c, d) = loop {
                    let (c, d) = self.non_edge();
                    if ![&a, &b].contains(&&c) && ![&a, &b].contains(&&d) {
                        break (c, d);
                    }
                };
                AuxStatement::MarkIntersection {
                    point: self.fresh(avoid),
                    a,
                    b,
                    c,
                    d,
                }
            }
        }
    }

    fn gold(&mut self, difficulty: Difficulty) -> Vec<AuxStatement> {
        let none = BTreeSet::new();
        let first = self.simple_statement(&none);
        if difficulty == Difficulty::Easy {
            return vec![first];
        }
        let second = match first.introduced().cloned() {
            // Tie the second step to the constructed point.
            Some(p) => {
                let in_first: Vec<&PointLabel> = first.required();
                let z = self.point_except(&in_first);
                AuxStatement::Connect { a: z, b: p }
            }
            None => {
                let avoid: BTreeSet<PointLabel> = first.labels().into_iter().cloned().collect();
                loop {
                    let s = self.simple_statement(&avoid);
                    if s != first && !matches!(s, AuxStatement::EstablishFrame { .. }) {
                        break s;
                    }
                }
            }
        };
        vec![first, second]
    }

    fn distractor(&mut self, gold: &AuxProgram, gold_labels: &BTreeSet<PointLabel>) -> AuxStatement {
        let fresh: Vec<PointLabel> = gold
            .statements
            .iter()
            .filter_map(|s| s.introduced().cloned())
            .filter(|l| !self.scene.has_point(l))
            .collect();
        if !fresh.is_empty() && self.r.gen_bool(0.3) {
            let target = fresh.choose(&mut self.r).unwrap().clone();
            let z = self.point_except(&[]);
            return AuxStatement::Connect { a: z, b: target };
        }
        self.simple_statement(gold_labels)
    }
}

fn make_task(id: u64, difficulty: Difficulty, seed: u64) -> Result<Task, EnvError> {
    let mut r = rng(seed);
    let solid = SOLIDS.choose(&mut r).unwrap();
    let mut scene = Scene::with_points(solid.points).expect("static labels");
    for (a, b) in solid.edges {
        scene.add_segment(a, b).expect("static edges");
    }
    let scene = scene.sorted();
    let mut b = Builder {
        solid,
        scene: scene.clone(),
        r,
    };

    let gold_aux = AuxProgram::new(b.gold(difficulty));
    let gold_reference = apply_program(&gold_aux, &scene)?.sorted();
    if consistency_score(&scene, &gold_aux, &gold_reference)?.score != Score::ONE {
        return Err(EnvError::Generation(format!("gold `{gold_aux}` does not self-score 1")));
    }
    let expected: BTreeSet<Relation> = {
        let base = scene.relation_set();
        gold_reference
            .relation_set()
            .into_iter()
            .filter(|r| !base.contains(r))
            .collect()
    };
    if expected.is_empty() {
        return Err(EnvError::Generation(format!("gold `{gold_aux}` adds nothing")));
    }

    // Candidate menu: gold at the difficulty's slots, distractors elsewhere.
    let gold_labels = gold_aux.labels();
    let mut distractors: Vec<AuxStatement> = Vec::new();
    let mut guard = 0;
    while distractors.len() < NUM_CANDIDATES - gold_aux.len() {
        guard += 1;
        if guard > 10_000 {
            return Err(EnvError::Generation("could not fill candidate menu".into()));
        }
        let d = b.distractor(&gold_aux, &gold_labels);
        if d.check().is_err() || gold_aux.statements.contains(&d) || distractors.contains(&d) {
            continue;
        }
        // Must add at least one relation that is neither in the scene nor gold.
        let mut with_gold = gold_aux.statements.clone();
        with_gold.push(d.clone());
        let Ok(induced) = induced_relations(&AuxProgram::new(with_gold), &scene) else {
            continue;
        };
        let Ok(own) = induced_relations(&AuxProgram::new(vec![d.clone()]), &gold_reference) else {
            continue;
        };
        let base = scene.relation_set();
        if own.iter().all(|r| base.contains(r) || expected.contains(r)) || induced.is_empty() {
            continue;
        }
        distractors.push(d);
    }
    distractors.shuffle(&mut b.r);
    let mut candidates: Vec<Option<AuxStatement>> = vec![None; NUM_CANDIDATES];
    for (slot, stmt) in difficulty.aux_slots().iter().zip(&gold_aux.statements) {
        candidates[*slot] = Some(stmt.clone());
    }
    let mut rest = distractors.into_iter();
    let candidates: Vec<AuxStatement> = candidates
        .into_iter()
        .map(|c| c.unwrap_or_else(|| rest.next().expect("enough distractors")))
        .collect();

    let k = b.r.gen_range(1..=12);
    let pts = b.labels();
    let pick: Vec<String> = pts.choose_multiple(&mut b.r, 4).map(|p| p.to_string()).collect();
    let face = solid.faces.choose(&mut b.r).unwrap();
    let (template, ratio) = *QUANTITIES.choose(&mut b.r).unwrap();
    let quantity = template
        .replace("{1}", &pick[0])
        .replace("{2}", &pick[1])
        .replace("{3}", &pick[2])
        .replace("{4}", &pick[3])
        .replace("{f}", face);
    let question = format!("In the {}, find {}.", (solid.describe)(k), quantity);

    let mut pool: Vec<&str> = if ratio { RATIO_ANSWERS } else { LENGTH_ANSWERS }.to_vec();
    pool.shuffle(&mut b.r);
    let gold_answer = pool[0].to_string();
    let mut others: Vec<String> = pool[1..NUM_ANSWERS].iter().map(|s| s.to_string()).collect();
    others.shuffle(&mut b.r);
    let mut answer_options = Vec::with_capacity(NUM_ANSWERS);
    let mut others = others.into_iter();
    for slot in 0..NUM_ANSWERS {
        if slot == difficulty.answer_slot() {
            answer_options.push(gold_answer.clone());
        } else {
            answer_options.push(others.next().unwrap());
        }
    }

    Ok(Task {
        id,
        scene,
        question,
        gold_aux,
        gold_reference,
        gold_answer,
        difficulty,
        candidates,
        answer_options,
    })
}

/// Tasks with the given difficulty sequence; questions are pairwise distinct.
pub fn generate_tasks_with(difficulties: &[Difficulty], seed: u64) -> Result<Vec<Task>, EnvError> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(difficulties.len());
    for (i, &d) in difficulties.iter().enumerate() {
        let mut attempt = 0u64;
        let task = loop {
            let s = derive_seed(derive_seed(seed, i as u64), attempt);
            attempt += 1;
            if attempt > 1000 {
                return Err(EnvError::Generation(format!("task {i}: no unique question")));
            }
            match make_task(i as u64 + 1, d, s) {
                Ok(t) if !seen.contains(&t.question) => break t,
                Ok(_) | Err(EnvError::Generation(_)) => continue,
                Err(e) => return Err(e),
            }
        };
        seen.insert(task.question.clone());
        out.push(task);
    }
    Ok(out)
}

/// `count` tasks alternating Easy/Hard. Deterministic in `seed`.
pub fn generate_tasks(count: usize, seed: u64) -> Result<Vec<Task>, EnvError> {
    let ds: Vec<Difficulty> = (0..count)
        .map(|i| if i % 2 == 0 { Difficulty::Easy } else { Difficulty::Hard })
        .collect();
    generate_tasks_with(&ds, seed)
}

/// Seed of the `g`-th sample for task `task_index` in a sampling round.
pub fn sample_seed(seed: u64, round: u64, task_index: u64, g: u64) -> u64 {
    derive_seed(derive_seed(derive_seed(seed, round), task_index), g)
}
