mod common;

use auxline::env::{logp_and_grad, Task, Trajectory};
use auxline::grpo::{grpo_objective, sft_loss};
use common::*;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

#[test]
fn logp_gradient_matches_finite_differences() {
    let tasks = fd_tasks();
    for seed in 0..100 {
        let (policy, traj) = random_pair(seed, &tasks);
        let (_, grad) = logp_and_grad(&policy, &traj).unwrap();
        let fd = central_diff(&policy.theta, H, |th| {
            logp_and_grad(&theta_policy(th), &traj).unwrap().0
        });
        assert!(rel_err(&grad, &fd) < TOL, "seed {seed}: {}", rel_err(&grad, &fd));
    }
}

#[test]
fn sft_gradient_matches_finite_differences() {
    let tasks = fd_tasks();
    let gold: Vec<(Task, Trajectory)> = tasks.iter().map(|t| (t.clone(), t.gold_trajectory())).collect();
    for seed in 0..100 {
        let (policy, _) = random_pair(seed, &tasks);
        let k = 1 + seed as usize % gold.len();
        let subset = &gold[..k];
        let (_, grad) = sft_loss(&policy, subset).unwrap();
        let fd = central_diff(&policy.theta, H, |th| sft_loss(&theta_policy(th), subset).unwrap().0);
        assert!(rel_err(&grad, &fd) < TOL, "seed {seed}");
    }
}

#[test]
fn grpo_gradient_matches_finite_differences() {
    let tasks = fd_tasks();
    for seed in 0..100 {
        let (policy, batch, cfg) = random_group_point(seed, &tasks, 1e-3);
        let (_, grad) = grpo_objective(&policy, &batch, &cfg).unwrap();
        let fd = central_diff(&policy.theta, H, |th| {
            grpo_objective(&theta_policy(th), &batch, &cfg).unwrap().0
        });
        assert!(rel_err(&grad, &fd) < TOL, "seed {seed}: {}", rel_err(&grad, &fd));
    }
}
