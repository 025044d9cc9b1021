#![allow(dead_code)]

use std::collections::BTreeSet;

use auxline::dsl::{AuxProgram, AuxStatement};
use auxline::env::{generate_tasks, sample_trajectory, Policy, Task, Trajectory, NUM_PARAMS};
use auxline::grpo::{group_advantages, GroupBatch, GrpoConfig};
use auxline::scene::{label, PointLabel, Relation, Renaming, Scene, SegRef};
use auxline::seed::rng;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn universe() -> Vec<PointLabel> {
    let mut out = Vec::new();
    for c in 'A'..='Z' {
        out.push(label(&c.to_string()));
        out.push(label(&format!("{c}1")));
    }
    out
}

fn pick(r: &mut ChaCha8Rng, pool: &[PointLabel], n: usize) -> Vec<PointLabel> {
    pool.choose_multiple(r, n).cloned().collect()
}

pub fn random_statement(r: &mut ChaCha8Rng, pool: &[PointLabel]) -> AuxStatement {
    loop {
        let l = pick(r, pool, 5);
        let s = match r.gen_range(0..6) {
            0 => AuxStatement::Connect {
                a: l[0].clone(),
                b: l[1].clone(),
            },
            1 => AuxStatement::TakeMidpoint {
                mid: l[0].clone(),
                a: l[1].clone(),
                b: l[2].clone(),
            },
            2 => AuxStatement::DropPerpendicular {
                from: l[0].clone(),
                a: l[1].clone(),
                b: l[2].clone(),
                foot: l[3].clone(),
            },
            3 => AuxStatement::DrawParallel {
                a: l[0].clone(),
                b: l[1].clone(),
                through: l[2].clone(),
                to: l[3].clone(),
            },
            4 => AuxStatement::EstablishFrame { origin: l[0].clone() },
            _ => AuxStatement::MarkIntersection {
                point: l[0].clone(),
                a: l[1].clone(),
                b: l[2].clone(),
                c: l[3].clone(),
                d: l[4].clone(),
            },
        };
        if s.check().is_ok() {
            return s;
        }
    }
}

pub fn random_program(seed: u64) -> AuxProgram {
    let mut r = rng(seed);
    let pool = universe();
    let n = r.gen_range(1..=6);
    AuxProgram::new((0..n).map(|_| random_statement(&mut r, &pool)).collect())
}

fn seg(r: &mut ChaCha8Rng, pts: &[PointLabel]) -> SegRef {
    let l = pick(r, pts, 2);
    SegRef(l[0].clone(), l[1].clone())
}

pub fn random_relation(r: &mut ChaCha8Rng, pts: &[PointLabel]) -> Relation {
    let l = pick(r, pts, 4);
    match r.gen_range(0..8) {
        0 => Relation::Segment(seg(r, pts)),
        1 => Relation::Midpoint {
            mid: l[0].clone(),
            a: l[1].clone(),
            b: l[2].clone(),
        },
        2 => Relation::Perpendicular(seg(r, pts), seg(r, pts)),
        3 => Relation::Parallel(seg(r, pts), seg(r, pts)),
        4 => Relation::Collinear(l[..3].to_vec()),
        5 => Relation::AngleBisector {
            bisector: SegRef(l[1].clone(), l[3].clone()),
            angle: [l[0].clone(), l[1].clone(), l[2].clone()],
        },
        6 => Relation::Intersection {
            point: l[0].clone(),
            first: seg(r, pts),
            second: seg(r, pts),
        },
        _ => Relation::CoordFrameDeclared(l[0].clone()),
    }
}

/// A valid scene on 4..10 points.
pub fn random_scene(seed: u64) -> Scene {
    let mut r = rng(seed);
    let n = r.gen_range(4..=10);
    let pts = pick(&mut r, &universe(), n);
    let mut s = Scene {
        points: pts.clone(),
        ..Scene::default()
    };
    for _ in 0..r.gen_range(0..8) {
        let e = seg(&mut r, &pts);
        let _ = s.add_segment(e.0.as_str(), e.1.as_str());
    }
    for _ in 0..r.gen_range(0..6) {
        let rel = random_relation(&mut r, &pts);
        let _ = s.add_relation(rel);
    }
    s
}

/// Random bijection from `labels` into the label universe.
pub fn random_bijection(seed: u64, labels: &BTreeSet<PointLabel>) -> Renaming {
    let mut r = rng(seed);
    let mut targets = universe();
    targets.shuffle(&mut r);
    labels.iter().cloned().zip(targets).collect()
}

/// Central differences of `f` at `theta` for every coordinate.
pub fn central_diff(theta: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max |a - b| / max(max |a|, max |b|, 1e-8)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(1e-8, f64::max);
    diff / scale
}

pub fn fd_tasks() -> Vec<Task> {
    generate_tasks(6, 31).unwrap()
}

/// Random trajectory from a random policy.
pub fn random_pair(seed: u64, tasks: &[Task]) -> (Policy, Trajectory) {
    let mut r = rng(seed);
    let task = tasks.choose(&mut r).unwrap();
    let sampler = Policy::random(seed ^ 1, 1.0);
    let traj = sample_trajectory(&sampler, task, seed);
    (Policy::random(seed ^ 2, 1.5), traj)
}

/// A group whose ratios stay at least `margin` (in ratio units) away from
/// both clip edges under the current policy.
pub fn random_group_point(seed: u64, tasks: &[Task], margin: f64) -> (Policy, GroupBatch, GrpoConfig) {
    let cfg = GrpoConfig {
        kl_coef: 0.05,
        ..GrpoConfig::default()
    };
    for attempt in 0.. {
        let s = seed.wrapping_mul(1000).wrapping_add(attempt);
        let mut r = rng(s);
        let task = tasks.choose(&mut r).unwrap();
        let old = Policy::random(s ^ 11, 0.8);
        let reference = Policy::random(s ^ 12, 0.8);
        let mut current = old.clone();
        for x in current.theta.iter_mut() {
            *x += r.gen_range(-0.15..0.15);
        }
        let mut batch = GroupBatch::sample(task, &old, &reference, &cfg, s).unwrap();
        if batch.advantages.iter().all(|a| *a == 0.0) {
            // Degenerate group: give it a spread so every branch is exercised.
            let rewards: Vec<f64> = (0..cfg.group_size).map(|_| r.gen()).collect();
            batch.advantages = group_advantages(&rewards, cfg.std_floor).unwrap();
        }
        let clear = batch.trajectories.iter().all(|t| {
            let lc: f64 = current.step_logps(t).unwrap().iter().sum();
            let rho = (lc - t.logp_old.iter().sum::<f64>()).exp();
            (rho - (1.0 - cfg.clip_eps)).abs() > margin && (rho - (1.0 + cfg.clip_eps)).abs() > margin
        });
        if clear {
            return (current, batch, cfg);
        }
    }
    unreachable!()
}

pub fn theta_policy(theta: &[f64]) -> Policy {
    assert_eq!(theta.len(), NUM_PARAMS);
    Policy { theta: theta.to_vec() }
}
