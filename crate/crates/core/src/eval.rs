//! Pass@k and the Easy / Hard / Average report.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{sample_seed, sample_trajectory_at, Difficulty, Policy, Task};
use crate::oracle::answer_reward;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("pass@k needs 0 <= c <= n and 1 <= k <= n, got n={n} c={c} k={k}")]
    Range { n: u64, c: u64, k: u64 },
    #[error("samples_per_task must be at least 1")]
    NoSamples,
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
}

/// Unbiased `1 - C(n-c, k) / C(n, k)` as a running product.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, EvalError> {
    if c > n || k == 0 || k > n {
        return Err(EvalError::Range { n, c, k });
    }
    if k == 1 {
        return Ok(c as f64 / n as f64);
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut miss = 1.0;
    for i in 0..k {
        miss *= (n - c - i) as f64 / (n - i) as f64;
    }
    Ok(1.0 - miss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub samples_per_task: u64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples_per_task: 8,
            temperature: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEval {
    pub task_id: u64,
    pub difficulty: Difficulty,
    pub n: u64,
    pub c: u64,
}

/// Percentages; `pass_at_5` is absent when fewer than five samples were drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub tasks: usize,
    pub pass_at_1: f64,
    pub pass_at_5: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub samples_per_task: u64,
    pub per_task: Vec<TaskEval>,
    pub easy: SplitScore,
    pub hard: SplitScore,
    pub average: SplitScore,
}

fn split(rows: &[&TaskEval], n: u64) -> SplitScore {
    let mean = |k: u64| -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let s: f64 = rows
            .iter()
            .map(|r| pass_at_k(r.n, r.c, k).expect("counts are in range"))
            .sum();
        100.0 * s / rows.len() as f64
    };
    SplitScore {
        tasks: rows.len(),
        pass_at_1: mean(1),
        pass_at_5: (n >= 5).then(|| mean(5)),
    }
}

pub fn aggregate(per_task: Vec<TaskEval>, samples_per_task: u64) -> EvalResult {
    let of = |d: Difficulty| -> Vec<&TaskEval> { per_task.iter().filter(|t| t.difficulty == d).collect() };
    let all: Vec<&TaskEval> = per_task.iter().collect();
    EvalResult {
        samples_per_task,
        easy: split(&of(Difficulty::Easy), samples_per_task),
        hard: split(&of(Difficulty::Hard), samples_per_task),
        average: split(&all, samples_per_task),
        per_task,
    }
}

/// Samples `samples_per_task` solutions per task at temperature 1 and counts
/// correct answers.
pub fn evaluate(policy: &Policy, tasks: &[Task], samples_per_task: u64, seed: u64) -> Result<EvalResult, EvalError> {
    evaluate_with(
        policy,
        tasks,
        &EvalConfig {
            samples_per_task,
            temperature: 1.0,
            seed,
        },
    )
}

pub fn evaluate_with(policy: &Policy, tasks: &[Task], cfg: &EvalConfig) -> Result<EvalResult, EvalError> {
    if cfg.samples_per_task == 0 {
        return Err(EvalError::NoSamples);
    }
    if !(cfg.temperature > 0.0 && cfg.temperature.is_finite()) {
        return Err(EvalError::Temperature(cfg.temperature));
    }
    let per_task: Vec<TaskEval> = tasks
        .par_iter()
        .map(|t| {
            let c = (0..cfg.samples_per_task)
                .filter(|&g| {
                    let traj =
                        sample_trajectory_at(policy, t, sample_seed(cfg.seed, u64::MAX, t.id, g), cfg.temperature);
                    answer_reward(&traj.decoded_answer, &t.gold_answer) == 1.0
                })
                .count() as u64;
            TaskEval {
                task_id: t.id,
                difficulty: t.difficulty,
                n: cfg.samples_per_task,
                c,
            }
        })
        .collect();
    Ok(aggregate(per_task, cfg.samples_per_task))
}

/// Aligned plain-text table: one row per split, Pass@1 and Pass@5 columns.
pub fn render_table(r: &EvalResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<8} {:>5} {:>8} {:>8}", "Split", "Tasks", "Pass@1", "Pass@5");
    for (name, s) in [("Easy", &r.easy), ("Hard", &r.hard), ("Average", &r.average)] {
        let p5 = s.pass_at_5.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        let _ = writeln!(out, "{:<8} {:>5} {:>8.2} {:>8}", name, s.tasks, s.pass_at_1, p5);
    }
    out
}
