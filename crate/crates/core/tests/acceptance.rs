//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use auxline::corpus::{ingest, read_records, read_scene_store, validate_corpus, DEFAULT_CUE_VERBS, SCENES_FILE};
use auxline::dsl::{parse_aux, serialize_aux, AuxProgram};
use auxline::env::{generate_tasks, Policy, Task, Trajectory};
use auxline::eval::{evaluate, pass_at_k};
use auxline::grpo::{group_advantages, grpo_objective, initial_policy, kl_low_var, sft_loss, train, GrpoConfig};
use auxline::oracle::{composite_reward, consistency_score, format_judge_line, parse_judge_line, JudgeRecord, Score};
use auxline::perturb::build_supervision_set;
use auxline::scene::Scene;
use auxline::seed::rng;
use common::*;
use rand::Rng;

const SEED: u64 = 7;
const FD_H: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Option<Duration>, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/corpus")
}

fn grpo_math() -> Outcome {
    let mut r = rng(SEED);
    for g in 0..1000 {
        let n = r.gen_range(2..=16);
        let rewards: Vec<f64> = if g % 10 == 0 {
            vec![r.gen(); n]
        } else {
            (0..n).map(|_| r.gen()).collect()
        };
        let a = group_advantages(&rewards, 1e-8).map_err(|e| e.to_string())?;
        let m = a.iter().sum::<f64>() / n as f64;
        let sd = (a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        ensure(m.abs() < 1e-9, || format!("group {g}: mean {m:e}"))?;
        ensure(a.iter().all(|x| *x == 0.0) || (sd - 1.0).abs() < 1e-6, || {
            format!("group {g}: std {sd}")
        })?;
    }
    for i in 0..10_000 {
        let c: f64 = -r.gen_range(0.0..20.0);
        let rf: f64 = if i % 100 == 0 { c } else { -r.gen_range(0.0..20.0) };
        let k = kl_low_var(c, rf);
        ensure(k >= 0.0, || format!("kl({c}, {rf}) = {k}"))?;
        ensure((k == 0.0) == (c == rf), || format!("kl({c}, {rf}) = {k}"))?;
    }
    let tasks = fd_tasks();
    let gold: Vec<(Task, Trajectory)> = tasks.iter().map(|t| (t.clone(), t.gold_trajectory())).collect();
    let mut worst_grpo = 0.0f64;
    let mut worst_sft = 0.0f64;
    for seed in 0..100 {
        let (policy, batch, cfg) = random_group_point(seed, &tasks, 1e-3);
        let (_, grad) = grpo_objective(&policy, &batch, &cfg).map_err(|e| e.to_string())?;
        let fd = central_diff(&policy.theta, FD_H, |th| {
            grpo_objective(&theta_policy(th), &batch, &cfg).unwrap().0
        });
        worst_grpo = worst_grpo.max(rel_err(&grad, &fd));

        let (p, _) = random_pair(seed, &tasks);
        let subset = &gold[..1 + seed as usize % gold.len()];
        let (_, grad) = sft_loss(&p, subset).map_err(|e| e.to_string())?;
        let fd = central_diff(&p.theta, FD_H, |th| sft_loss(&theta_policy(th), subset).unwrap().0);
        worst_sft = worst_sft.max(rel_err(&grad, &fd));
    }
    ensure(worst_grpo < FD_TOL && worst_sft < FD_TOL, || {
        format!("finite-difference rel err grpo {worst_grpo:e} sft {worst_sft:e}")
    })?;
    Ok(format!(
        "1000 groups, 10000 KL pairs, fd rel err grpo {worst_grpo:.1e} sft {worst_sft:.1e}"
    ))
}

fn composite() -> Outcome {
    let cfg = GrpoConfig::default();
    let a = composite_reward(1.0, 0.0, cfg.alpha).map_err(|e| e.to_string())?.r;
    let b = composite_reward(0.0, 1.0, cfg.alpha).map_err(|e| e.to_string())?.r;
    ensure(a == 0.1 && b == 0.9, || format!("(1,0) -> {a}, (0,1) -> {b}"))?;
    Ok(format!("alpha {}: (1,0) -> {a}, (0,1) -> {b}", cfg.alpha))
}

fn separation() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    ingest(&fixtures(), dir.path(), &DEFAULT_CUE_VERBS).map_err(|e| e.to_string())?;
    let records = read_records(&dir.path().join("records.jsonl")).map_err(|e| e.to_string())?;
    let scenes = read_scene_store(&dir.path().join(SCENES_FILE)).map_err(|e| e.to_string())?;
    let set = build_supervision_set(&records, &scenes, 5, SEED).map_err(|e| e.to_string())?;
    let (mut golds, mut negatives) = (0, 0);
    for t in &set.triplets {
        let j = consistency_score(&t.original, &t.description, &t.reference).map_err(|e| e.to_string())?;
        ensure(j == t.judge_target, || {
            format!("record {}: stored target differs from rescore", t.record_id)
        })?;
        if t.is_gold() {
            golds += 1;
            ensure(j.value() == 1.0, || {
                format!("record {}: gold scored {}", t.record_id, j.value())
            })?;
        } else {
            negatives += 1;
            ensure(j.value() < 1.0, || {
                format!("record {} {:?}: negative scored 1", t.record_id, t.perturbation)
            })?;
        }
    }
    ensure(set.triplets.len() >= 200, || {
        format!("only {} triplets", set.triplets.len())
    })?;
    Ok(format!("{golds} golds at 1.0, {negatives} negatives strictly below"))
}

/// Pass@k by counting the k-subsets of n samples that contain a correct one.
fn enumerate_pass_at_k(n: u32, c: u32, k: u32) -> f64 {
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() == k {
            total += 1;
            if mask & ((1 << c) - 1) != 0 {
                hit += 1;
            }
        }
    }
    hit as f64 / total as f64
}

fn pass_at_k_exact() -> Outcome {
    let mut cases = 0;
    for n in 1..=8u32 {
        for c in 0..=n {
            for k in 1..=n {
                let v = pass_at_k(n as u64, c as u64, k as u64).map_err(|e| e.to_string())?;
                let e = enumerate_pass_at_k(n, c, k);
                ensure((v - e).abs() < 1e-12, || format!("n {n} c {c} k {k}: {v} vs {e}"))?;
                cases += 1;
            }
            let p1 = pass_at_k(n as u64, c as u64, 1).map_err(|e| e.to_string())?;
            ensure(p1 == c as f64 / n as f64, || format!("pass@1 n {n} c {c} = {p1}"))?;
        }
    }
    Ok(format!("{cases} (n, c, k) cases match enumeration"))
}

fn end_to_end() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    pool.install(|| {
        let tasks = generate_tasks(40, SEED).map_err(|e| e.to_string())?;
        let cfg = GrpoConfig {
            seed: SEED,
            ..GrpoConfig::default()
        };
        let out = train(&tasks, &cfg, true).map_err(|e| e.to_string())?;
        let score = |p: &Policy| {
            evaluate(p, &tasks, 8, SEED)
                .map(|r| r.average.pass_at_1)
                .map_err(|e| e.to_string())
        };
        let init = score(&initial_policy(&cfg))?;
        let sft = score(&out.reference)?;
        let full = score(&out.policy)?;
        let line = format!("Pass@1 init {init:.1}%  SFT {sft:.1}%  SFT+GRPO {full:.1}%");
        ensure(init < 15.0 && full >= 90.0 && full - sft >= 10.0, || line.clone())?;
        Ok(line)
    })
}

fn reward_ordering() -> Outcome {
    let tasks = generate_tasks(40, SEED).map_err(|e| e.to_string())?;
    let alpha = GrpoConfig::default().alpha;
    let mut checked = 0;
    for t in &tasks {
        let wrong_answer = t
            .answer_options
            .iter()
            .find(|a| **a != t.gold_answer)
            .ok_or("no wrong answer")?;
        let r = |aux: &AuxProgram, ans: &str| t.reward(aux, ans, alpha).map(|b| b.r).map_err(|e| e.to_string());
        let best = r(&t.gold_aux, &t.gold_answer)?;
        let no_aux = r(&AuxProgram::default(), &t.gold_answer)?;
        ensure(best > no_aux, || format!("task {}: {best} <= {no_aux}", t.id))?;
        // Distractors the policy may emit as its first statement.
        let first = t.legal_actions(&[]);
        let distractors = t
            .candidates
            .iter()
            .enumerate()
            .filter(|(i, c)| first.contains(i) && !t.gold_aux.statements.contains(c));
        for (_, c) in distractors {
            let wrong = r(&AuxProgram::new(vec![c.clone()]), wrong_answer)?;
            ensure(no_aux > wrong, || {
                format!("task {}: no aux {no_aux} <= wrong aux {wrong}", t.id)
            })?;
            checked += 1;
        }
    }
    Ok(format!("{} tasks, {checked} wrong-aux programs", tasks.len()))
}

fn dir_contents(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = fs::read(&p).map_err(|e| e.to_string())?;
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), bytes);
            }
        }
    }
    Ok(out)
}

fn pipeline_once(out: &Path) -> Result<(usize, usize, usize), String> {
    let m = ingest(&fixtures(), out, &DEFAULT_CUE_VERBS).map_err(|e| e.to_string())?;
    let records = read_records(&out.join("records.jsonl")).map_err(|e| e.to_string())?;
    let scenes = read_scene_store(&out.join(SCENES_FILE)).map_err(|e| e.to_string())?;
    let findings = validate_corpus(&records, Some(&scenes));
    ensure(findings.is_empty(), || {
        format!("{} validation findings", findings.len())
    })?;
    let set = build_supervision_set(&records, &scenes, 5, SEED).map_err(|e| e.to_string())?;
    fs::write(
        out.join("supervision.jsonl"),
        set.to_jsonl().map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    Ok((m.splits.easy, m.splits.hard, set.triplets.len()))
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (easy, hard, n) = pipeline_once(a.path())?;
    pipeline_once(b.path())?;
    ensure((easy, hard) == (150, 152), || format!("split {easy}/{hard}"))?;
    let (fa, fb) = (dir_contents(a.path())?, dir_contents(b.path())?);
    ensure(fa == fb, || {
        let diff: Vec<_> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
        format!("outputs differ: {diff:?}")
    })?;
    Ok(format!(
        "{} files identical, split {easy}/{hard}, {n} triplets, 0 findings",
        fa.len()
    ))
}

fn round_trips() -> Outcome {
    for seed in 0..1000 {
        let p = random_program(seed);
        let text = serialize_aux(&p).map_err(|e| e.to_string())?;
        ensure(parse_aux(&text).as_ref() == Ok(&p), || {
            format!("program {seed}: {text}")
        })?;
    }
    for q in 0..=4 {
        let rec = JudgeRecord {
            rationale: format!("matched {q} of 4 relations"),
            score: Score::from_quarters(q).ok_or("score")?,
        };
        let line = format_judge_line(&rec).map_err(|e| e.to_string())?;
        ensure(parse_judge_line(&line).as_ref() == Ok(&rec), || line.clone())?;
    }
    for seed in 0..1000 {
        let s = random_scene(seed);
        let json = s.to_json();
        let back = Scene::from_json(&json).map_err(|e| e.to_string())?;
        ensure(back == s.sorted() && back.to_json() == json, || format!("scene {seed}"))?;
    }
    Ok("1000 programs, 5 judge scores, 1000 scenes".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("grpo math suite", Some(Duration::from_secs(10)), grpo_math),
        ("composite reward", None, composite),
        (
            "oracle/perturbation separation",
            Some(Duration::from_secs(5)),
            separation,
        ),
        ("pass@k correctness", None, pass_at_k_exact),
        ("end-to-end learning", Some(Duration::from_secs(120)), end_to_end),
        ("reward ordering", None, reward_ordering),
        ("pipeline determinism", None, determinism),
        ("round-trips", None, round_trips),
    ];
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let took = t0.elapsed();
        let res = match (res, budget) {
            (Ok(_), Some(b)) if took > *b => Err(format!("took {took:.2?}, budget {b:?}")),
            (r, _) => r,
        };
        let (tag, detail) = match &res {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if res.is_err() {
            failed += 1;
        }
        println!("{tag} [{}] {name}: {detail} ({took:.2?})", i + 1);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
