//! Supervised warm start and group-relative policy optimization on the
//! tabular policy.
//!
//! The surrogate uses one probability ratio per trajectory,
//! `rho_i = exp(sum_t logp_current - sum_t logp_old)`, and subtracts the
//! mean per-token low-variance KL after the clipped minimum. A per-token
//! ratio variant would replace `rho_i` with `exp(logp_current_t - logp_old_t)`
//! inside a token mean; it is not implemented.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{sample_seed, sample_trajectory, EnvError, Policy, Task, Trajectory, NUM_PARAMS};
use crate::oracle::{OracleError, DEFAULT_ALPHA};
use crate::seed::{derive_seed, rng};

const INIT_STREAM: u64 = 0x1417;
const SHUFFLE_STREAM: u64 = 0x5407;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrpoError {
    #[error("group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("task {0}: trajectory does not decode to the gold solution")]
    NotGold(u64),
    #[error("no tasks to train on")]
    NoTasks,
    #[error("non-finite {what} at iteration {iteration}")]
    NumericFailure { what: &'static str, iteration: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub std_floor: f64,
    /// Full-batch gradient steps of the supervised stage.
    pub sft_steps: usize,
    pub sft_learning_rate: f64,
    /// Tasks sampled per GRPO iteration.
    pub tasks_per_iteration: usize,
    /// Gradient steps on each sampled batch before resampling.
    pub inner_steps: usize,
    /// Standard deviation of the initial logits.
    pub init_scale: f64,
    /// Step halvings tried before an update is skipped.
    pub max_halvings: u32,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip_eps: 0.2,
            kl_coef: 0.01,
            alpha: DEFAULT_ALPHA,
            learning_rate: 2.0,
            epochs: 6,
            seed: 0,
            std_floor: 1e-8,
            sft_steps: 20,
            sft_learning_rate: 2.0,
            tasks_per_iteration: 8,
            inner_steps: 2,
            init_scale: 0.01,
            max_halvings: 40,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::Config(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps.is_finite()) {
            return bad("clip_eps must be positive");
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return bad("kl_coef must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be non-negative");
        }
        if !(self.sft_learning_rate >= 0.0 && self.sft_learning_rate.is_finite()) {
            return bad("sft_learning_rate must be non-negative");
        }
        if !(self.std_floor > 0.0 && self.std_floor.is_finite()) {
            return bad("std_floor must be positive");
        }
        if self.tasks_per_iteration == 0 {
            return bad("tasks_per_iteration must be at least 1");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be non-negative");
        }
        Ok(())
    }
}

/// `(r_i - mean) / max(std, floor)` with population std; all zeros when the
/// std is below the floor.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < std_floor {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std.max(std_floor)).collect())
}

/// `u - ln u - 1` with `u = exp(logp_ref - logp_current)`.
pub fn kl_low_var(logp_current: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_current;
    (d.exp_m1() - d).max(0.0)
}

/// Mean per-token KL of a trajectory under `policy`.
pub fn trajectory_kl(policy: &Policy, traj: &Trajectory) -> Result<f64, GrpoError> {
    if traj.is_empty() {
        return Ok(0.0);
    }
    let lc = policy.step_logps(traj)?;
    Ok(lc
        .iter()
        .zip(&traj.logp_ref)
        .map(|(c, r)| kl_low_var(*c, *r))
        .sum::<f64>()
        / traj.len() as f64)
}

/// One task's G trajectories from the old policy and their advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBatch {
    pub task: Task,
    pub trajectories: Vec<Trajectory>,
    pub advantages: Vec<f64>,
}

impl GroupBatch {
    /// Samples `cfg.group_size` trajectories from `old`, records reference
    /// log-probs and rewards, and normalizes advantages.
    pub fn sample(
        task: &Task,
        old: &Policy,
        reference: &Policy,
        cfg: &GrpoConfig,
        round: u64,
    ) -> Result<GroupBatch, GrpoError> {
        let mut trajectories = Vec::with_capacity(cfg.group_size);
        for g in 0..cfg.group_size {
            let mut t = sample_trajectory(old, task, sample_seed(cfg.seed, round, task.id, g as u64));
            t.logp_ref = reference.step_logps(&t)?;
            t.reward = Some(task.reward(&t.decoded_aux, &t.decoded_answer, cfg.alpha)?);
            trajectories.push(t);
        }
        let rewards: Vec<f64> = trajectories.iter().map(|t| t.reward.map_or(0.0, |r| r.r)).collect();
        let advantages = group_advantages(&rewards, cfg.std_floor)?;
        Ok(GroupBatch {
            task: task.clone(),
            trajectories,
            advantages,
        })
    }
}

/// Objective of one group under `policy` and its exact gradient.
///
/// The clipped term contributes `A * rho * grad(sum logp)` when the unclipped
/// product is the smaller one and nothing otherwise.
pub fn grpo_objective(policy: &Policy, batch: &GroupBatch, cfg: &GrpoConfig) -> Result<(f64, Vec<f64>), GrpoError> {
    let mut grad = vec![0.0; NUM_PARAMS];
    let value = accumulate_objective(policy, batch, cfg, Some(&mut grad))?;
    Ok((value, grad))
}

fn accumulate_objective(
    policy: &Policy,
    batch: &GroupBatch,
    cfg: &GrpoConfig,
    mut grad: Option<&mut [f64]>,
) -> Result<f64, GrpoError> {
    let g = batch.trajectories.len() as f64;
    let mut total = 0.0;
    for (traj, &a) in batch.trajectories.iter().zip(&batch.advantages) {
        let lc = policy.step_logps(traj)?;
        let log_ratio: f64 = lc.iter().sum::<f64>() - traj.logp_old.iter().sum::<f64>();
        let rho = log_ratio.exp();
        let unclipped = rho * a;
        let clipped = rho.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a;
        let surrogate = unclipped.min(clipped);
        let t = traj.len().max(1) as f64;
        let kl: f64 = lc
            .iter()
            .zip(&traj.logp_ref)
            .map(|(c, r)| kl_low_var(*c, *r))
            .sum::<f64>()
            / t;
        total += surrogate - cfg.kl_coef * kl;

        if let Some(out) = grad.as_deref_mut() {
            let active = if unclipped <= clipped { a * rho } else { 0.0 };
            let weights: Vec<f64> = lc
                .iter()
                .zip(&traj.logp_ref)
                .map(|(c, r)| (active - cfg.kl_coef * (1.0 - (r - c).exp()) / t) / g)
                .collect();
            policy.accumulate_grad(traj, &weights, out)?;
        }
    }
    Ok(total / g)
}

/// Mean over groups; groups are reduced in order.
fn batch_objective(
    policy: &Policy,
    groups: &[GroupBatch],
    cfg: &GrpoConfig,
    with_grad: bool,
) -> Result<(f64, Vec<f64>), GrpoError> {
    let parts: Vec<(f64, Vec<f64>)> = groups
        .par_iter()
        .map(|b| {
            if with_grad {
                grpo_objective(policy, b, cfg)
            } else {
                accumulate_objective(policy, b, cfg, None).map(|v| (v, Vec::new()))
            }
        })
        .collect::<Result<_, _>>()?;
    let n = groups.len().max(1) as f64;
    let mut grad = if with_grad { vec![0.0; NUM_PARAMS] } else { Vec::new() };
    let mut value = 0.0;
    for (v, g) in parts {
        value += v / n;
        for (o, x) in grad.iter_mut().zip(g) {
            *o += x / n;
        }
    }
    Ok((value, grad))
}

/// Mean negative log-likelihood over all gold action tokens and its gradient.
pub fn sft_loss(policy: &Policy, gold: &[(Task, Trajectory)]) -> Result<(f64, Vec<f64>), GrpoError> {
    let mut grad = vec![0.0; NUM_PARAMS];
    let tokens: usize = gold.iter().map(|(_, t)| t.len()).sum();
    if tokens == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / tokens as f64;
    let mut nll = 0.0;
    for (task, traj) in gold {
        if traj.decoded_aux != task.gold_aux || traj.decoded_answer != task.gold_answer {
            return Err(GrpoError::NotGold(task.id));
        }
        nll -= policy.step_logps(traj)?.iter().sum::<f64>();
        policy.accumulate_grad(traj, &vec![-scale; traj.len()], &mut grad)?;
    }
    Ok((nll * scale, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Sft,
    Grpo,
}

/// One log line. SFT records leave the reward fields null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub stage: Stage,
    pub iteration: usize,
    pub epoch: usize,
    pub mean_reward: Option<f64>,
    pub mean_r_aux: Option<f64>,
    pub mean_r_ans: Option<f64>,
    pub kl: f64,
    pub objective: f64,
    pub solve_rate: Option<f64>,
    pub step_size: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<IterationRecord>,
}

impl TrainingLog {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn grpo(&self) -> impl Iterator<Item = &IterationRecord> {
        self.records.iter().filter(|r| r.stage == Stage::Grpo)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub log: TrainingLog,
    pub policy: Policy,
    /// Frozen reference: the policy after the supervised stage.
    pub reference: Policy,
}

pub fn initial_policy(cfg: &GrpoConfig) -> Policy {
    Policy::random(derive_seed(cfg.seed, INIT_STREAM), cfg.init_scale)
}

/// Supervised stage only: `cfg.sft_steps` full-batch descent steps from
/// `policy` on the gold trajectories of `tasks`.
pub fn run_sft(policy: &mut Policy, tasks: &[Task], cfg: &GrpoConfig, log: &mut TrainingLog) -> Result<(), GrpoError> {
    let gold: Vec<(Task, Trajectory)> = tasks.iter().map(|t| (t.clone(), t.gold_trajectory())).collect();
    for it in 0..cfg.sft_steps {
        let (loss, grad) = sft_loss(policy, &gold)?;
        if !loss.is_finite() {
            return Err(GrpoError::NumericFailure {
                what: "sft loss",
                iteration: it,
            });
        }
        for (p, g) in policy.theta.iter_mut().zip(&grad) {
            *p -= cfg.sft_learning_rate * g;
        }
        log.records.push(IterationRecord {
            stage: Stage::Sft,
            iteration: it,
            epoch: it,
            mean_reward: None,
            mean_r_aux: None,
            mean_r_ans: None,
            kl: 0.0,
            objective: -loss,
            solve_rate: None,
            step_size: cfg.sft_learning_rate,
        });
    }
    Ok(())
}

/// Ascent step with halving: the first of `lr, lr/2, ...` that does not
/// lower the batch objective is taken; otherwise the parameters stay put.
fn ascend(
    policy: &mut Policy,
    groups: &[GroupBatch],
    cfg: &GrpoConfig,
    iteration: usize,
) -> Result<(f64, f64), GrpoError> {
    let (base, grad) = batch_objective(policy, groups, cfg, true)?;
    if !base.is_finite() {
        return Err(GrpoError::NumericFailure {
            what: "objective",
            iteration,
        });
    }
    let mut step = cfg.learning_rate;
    for _ in 0..=cfg.max_halvings {
        let candidate = Policy {
            theta: policy.theta.iter().zip(&grad).map(|(p, g)| p + step * g).collect(),
        };
        let (value, _) = batch_objective(&candidate, groups, cfg, false)?;
        if value.is_finite() && value >= base {
            *policy = candidate;
            return Ok((value, step));
        }
        step *= 0.5;
    }
    Ok((base, 0.0))
}

/// Optional supervised stage followed by `cfg.epochs` passes of GRPO over
/// `tasks`. Deterministic in `cfg.seed`.
pub fn train(tasks: &[Task], cfg: &GrpoConfig, sft_first: bool) -> Result<TrainingOutcome, GrpoError> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(GrpoError::NoTasks);
    }
    let mut log = TrainingLog::default();
    let mut policy = initial_policy(cfg);
    if sft_first {
        run_sft(&mut policy, tasks, cfg, &mut log)?;
    }
    let reference = policy.clone();

    let mut iteration = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..tasks.len()).collect();
        order.shuffle(&mut rng(derive_seed(
            derive_seed(cfg.seed, SHUFFLE_STREAM),
            epoch as u64,
        )));
        for chunk in order.chunks(cfg.tasks_per_iteration) {
            let old = policy.clone();
            let groups: Vec<GroupBatch> = chunk
                .par_iter()
                .map(|&i| GroupBatch::sample(&tasks[i], &old, &reference, cfg, iteration as u64))
                .collect::<Result<_, _>>()?;

            let mut objective = 0.0;
            let mut step_size = 0.0;
            for _ in 0..cfg.inner_steps.max(1) {
                let (v, s) = ascend(&mut policy, &groups, cfg, iteration)?;
                objective = v;
                step_size = s;
            }

            let trajs: Vec<&Trajectory> = groups.iter().flat_map(|g| &g.trajectories).collect();
            let n = trajs.len() as f64;
            let mean = |f: fn(&crate::oracle::RewardBundle) -> f64| {
                trajs.iter().map(|t| t.reward.as_ref().map_or(0.0, f)).sum::<f64>() / n
            };
            let mut kl = 0.0;
            for t in &trajs {
                kl += trajectory_kl(&policy, t)? / n;
            }
            log.records.push(IterationRecord {
                stage: Stage::Grpo,
                iteration,
                epoch,
                mean_reward: Some(mean(|r| r.r)),
                mean_r_aux: Some(mean(|r| r.r_aux)),
                mean_r_ans: Some(mean(|r| r.r_ans)),
                kl,
                objective,
                solve_rate: Some(mean(|r| if r.r_ans == 1.0 { 1.0 } else { 0.0 })),
                step_size,
            });
            iteration += 1;
        }
    }
    Ok(TrainingOutcome { log, policy, reference })
}
