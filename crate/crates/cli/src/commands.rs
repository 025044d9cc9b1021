use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use auxline::corpus::{self, read_jsonl, read_records, read_scene_store, to_jsonl, validate_corpus, Manifest};
use auxline::env::{generate_tasks, PolicyCheckpoint, Task};
use auxline::eval::{evaluate_with, render_table, EvalConfig, EvalResult};
use auxline::grpo::{initial_policy, train, GrpoConfig, IterationRecord, TrainingOutcome};
use auxline::oracle::{consistency_score, format_judge_line};
use auxline::perturb::{build_supervision_set, SupervisionTriplet};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{data, CliError};
use crate::{Command, Format};

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// Writes `config.toml` into the run directory without clobbering an input.
pub fn snapshot_config(cfg: &RunConfig, input: Option<&Path>) -> Result<(), CliError> {
    let target = cfg.out.join("config.toml");
    let text = cfg.to_toml();
    if let Some(input) = input {
        if same_file(input, &target) {
            if read(input)? == text {
                return Ok(());
            }
            return Err(CliError::Config(format!(
                "{} is the input config; choose another --out to snapshot the overridden settings",
                input.display()
            )));
        }
    }
    write(&target, text)
}

fn emit<T: Serialize>(format: Format, value: &T, text: String) {
    match format {
        Format::Json => println!("{}", serde_json::to_string(value).expect("summary serializes")),
        Format::Text => print!("{text}"),
    }
}

pub fn dispatch(command: &Command, cfg: &RunConfig, format: Format) -> Result<(), CliError> {
    match command {
        Command::Ingest { .. } => ingest(cfg, format),
        Command::Perturb { .. } => perturb(cfg, format),
        Command::Score { .. } => score(cfg, format),
        Command::Sft { .. } => run_training(cfg, format, true, true),
        Command::Train { .. } => run_training(cfg, format, cfg.train.sft_first, false),
        Command::Eval { init, .. } => eval(cfg, format, *init),
        Command::Report => report(cfg, format),
    }
}

fn ingest(cfg: &RunConfig, format: Format) -> Result<(), CliError> {
    let cues: Vec<&str> = cfg.ingest.cue_verbs.iter().map(String::as_str).collect();
    let manifest = corpus::ingest(&cfg.ingest.corpus, &cfg.out, &cues)?;
    let records = read_records(&cfg.out.join("records.jsonl"))?;
    let scenes = read_scene_store(&cfg.out.join(corpus::SCENES_FILE))?;
    let findings = validate_corpus(&records, Some(&scenes));
    let lines: Vec<String> = findings.findings.iter().map(|f| f.to_string()).collect();
    write(
        &cfg.out.join("validation.json"),
        serde_json::to_string_pretty(&lines).expect("list") + "\n",
    )?;
    let text = format!(
        "raw {}  after cue filter {}  after dedup {}\nrecords {} (Easy {}, Hard {})  rejected {}\nvalidation findings {}\n",
        manifest.raw,
        manifest.after_cue_filter,
        manifest.after_dedup,
        manifest.records,
        manifest.splits.easy,
        manifest.splits.hard,
        manifest.rejected,
        lines.len()
    );
    emit(
        format,
        &json!({ "manifest": manifest, "validation_findings": lines }),
        text,
    );
    Ok(())
}

fn perturb(cfg: &RunConfig, format: Format) -> Result<(), CliError> {
    let records = read_records(&cfg.in_run(&cfg.perturb.records, "records.jsonl"))?;
    let scenes = read_scene_store(&cfg.in_run(&cfg.perturb.scenes, corpus::SCENES_FILE))?;
    let set = build_supervision_set(&records, &scenes, cfg.perturb.per_gold_negatives, cfg.seed)?;
    write(&cfg.out.join("supervision.jsonl"), set.to_jsonl()?)?;
    write(&cfg.out.join("skipped.jsonl"), to_jsonl(&set.skipped))?;
    let (train, test) = set.split_by_record(cfg.perturb.test_fraction, cfg.seed);
    write(&cfg.out.join("supervision_train.jsonl"), train.to_jsonl()?)?;
    write(&cfg.out.join("supervision_test.jsonl"), test.to_jsonl()?)?;

    let mut by_kind: BTreeMap<String, usize> = BTreeMap::new();
    for t in &set.triplets {
        let k = t.perturbation.map_or_else(|| "gold".to_string(), |k| k.to_string());
        *by_kind.entry(k).or_default() += 1;
    }
    let mut text = format!(
        "triplets {}  skipped {}  train/test {}/{}\n",
        set.triplets.len(),
        set.skipped.len(),
        train.triplets.len(),
        test.triplets.len()
    );
    for (k, n) in &by_kind {
        text.push_str(&format!("  {k:<24} {n}\n"));
    }
    emit(
        format,
        &json!({
            "triplets": set.triplets.len(),
            "skipped": set.skipped.len(),
            "train": train.triplets.len(),
            "test": test.triplets.len(),
            "by_kind": by_kind,
        }),
        text,
    );
    Ok(())
}

fn score(cfg: &RunConfig, format: Format) -> Result<(), CliError> {
    let path = cfg.in_run(&cfg.score.triplets, "supervision.jsonl");
    let text = read(&path)?;
    let mut lines = String::new();
    let (mut total, mut agree, mut sum) = (0usize, 0usize, 0.0);
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let t =
            SupervisionTriplet::from_json_line(line).map_err(|e| data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let judged = consistency_score(&t.original, &t.description, &t.reference).map_err(data)?;
        lines.push_str(&format_judge_line(&judged).map_err(data)?);
        lines.push('\n');
        total += 1;
        sum += judged.value();
        if judged == t.judge_target {
            agree += 1;
        }
    }
    write(&cfg.out.join("judge_lines.txt"), lines)?;
    let mean = if total == 0 { 0.0 } else { sum / total as f64 };
    emit(
        format,
        &json!({ "triplets": total, "agree_with_target": agree, "mean_score": mean }),
        format!("triplets {total}  agree with target {agree}  mean score {mean:.4}\n"),
    );
    Ok(())
}

fn load_tasks(cfg: &RunConfig, prefer_run_dir: bool) -> Result<(Vec<Task>, Option<PathBuf>), CliError> {
    let run_file = cfg.out.join("tasks.jsonl");
    let path = if !cfg.tasks.file.as_os_str().is_empty() {
        Some(cfg.tasks.file.clone())
    } else if prefer_run_dir && run_file.is_file() {
        Some(run_file)
    } else {
        None
    };
    match path {
        Some(p) => Ok((read_jsonl(&p)?, Some(p))),
        None => Ok((generate_tasks(cfg.tasks.count, cfg.seed)?, None)),
    }
}

fn write_tasks(cfg: &RunConfig, tasks: &[Task], source: Option<&Path>) -> Result<(), CliError> {
    let target = cfg.out.join("tasks.jsonl");
    if source.is_some_and(|s| same_file(s, &target)) {
        return Ok(());
    }
    write(&target, to_jsonl(tasks))
}

fn checkpoint_json(policy: &auxline::env::Policy) -> String {
    serde_json::to_string(&PolicyCheckpoint::new(policy)).expect("checkpoint serializes") + "\n"
}

fn run_training(cfg: &RunConfig, format: Format, sft_first: bool, sft_only: bool) -> Result<(), CliError> {
    let (tasks, source) = load_tasks(cfg, false)?;
    let grpo = if sft_only {
        GrpoConfig {
            epochs: 0,
            ..cfg.grpo.clone()
        }
    } else {
        cfg.grpo.clone()
    };
    let TrainingOutcome { log, policy, reference } = train(&tasks, &grpo, sft_first)?;
    write_tasks(cfg, &tasks, source.as_deref())?;
    write(&cfg.out.join("policy.json"), checkpoint_json(&policy))?;
    write(&cfg.out.join("reference.json"), checkpoint_json(&reference))?;
    write(&cfg.out.join("training_log.jsonl"), log.to_jsonl())?;

    let last: Option<&IterationRecord> = log.records.last();
    let text = match last {
        Some(r) => format!(
            "tasks {}  iterations {}  last: stage {:?} objective {:.4} kl {:.4} mean reward {} solve rate {}\n",
            tasks.len(),
            log.records.len(),
            r.stage,
            r.objective,
            r.kl,
            r.mean_reward.map_or("-".into(), |v| format!("{v:.4}")),
            r.solve_rate.map_or("-".into(), |v| format!("{v:.4}")),
        ),
        None => format!("tasks {}  iterations 0\n", tasks.len()),
    };
    emit(
        format,
        &json!({ "tasks": tasks.len(), "iterations": log.records.len(), "last": last }),
        text,
    );
    Ok(())
}

fn eval(cfg: &RunConfig, format: Format, init: bool) -> Result<(), CliError> {
    let (tasks, _) = load_tasks(cfg, true)?;
    let policy = if init {
        initial_policy(&cfg.grpo)
    } else {
        let path = cfg.in_run(&cfg.eval.policy, "policy.json");
        let ckpt: PolicyCheckpoint =
            serde_json::from_str(&read(&path)?).map_err(|e| data(format!("{}: {e}", path.display())))?;
        ckpt.into_policy()
            .map_err(|e| data(format!("{}: {e}", path.display())))?
    };
    let result = evaluate_with(
        &policy,
        &tasks,
        &EvalConfig {
            samples_per_task: cfg.eval.samples_per_task,
            temperature: cfg.eval.temperature,
            seed: cfg.seed,
        },
    )?;
    let table = render_table(&result);
    let name = if init { "eval_init" } else { "eval" };
    write(
        &cfg.out.join(format!("{name}.json")),
        serde_json::to_string_pretty(&result).expect("result") + "\n",
    )?;
    write(&cfg.out.join(format!("{name}.txt")), &table)?;
    emit(format, &result, table);
    Ok(())
}

#[derive(Serialize)]
struct Report {
    eval: Option<EvalResult>,
    eval_init: Option<EvalResult>,
    last_sft: Option<IterationRecord>,
    last_grpo: Option<IterationRecord>,
    manifest: Option<Manifest>,
    supervision_triplets: Option<usize>,
}

fn optional<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<Option<T>, CliError> {
    if !path.is_file() {
        return Ok(None);
    }
    serde_json::from_str(&read(path)?)
        .map(Some)
        .map_err(|e| data(format!("{}: {e}", path.display())))
}

fn report(cfg: &RunConfig, format: Format) -> Result<(), CliError> {
    let out = &cfg.out;
    let log_path = out.join("training_log.jsonl");
    let log: Vec<IterationRecord> = if log_path.is_file() {
        read_jsonl(&log_path)?
    } else {
        Vec::new()
    };
    let last_of = |stage| log.iter().rev().find(|r| r.stage == stage).cloned();
    let supervision = out.join("supervision.jsonl");
    let r = Report {
        eval: optional(&out.join("eval.json"))?,
        eval_init: optional(&out.join("eval_init.json"))?,
        last_sft: last_of(auxline::grpo::Stage::Sft),
        last_grpo: last_of(auxline::grpo::Stage::Grpo),
        manifest: optional(&out.join("manifest.json"))?,
        supervision_triplets: if supervision.is_file() {
            Some(read(&supervision)?.lines().filter(|l| !l.trim().is_empty()).count())
        } else {
            None
        },
    };
    if r.eval.is_none() && r.manifest.is_none() && log.is_empty() && r.supervision_triplets.is_none() {
        return Err(data(format!("{}: nothing to report", out.display())));
    }

    let mut text = String::new();
    if let Some(m) = &r.manifest {
        text.push_str(&format!(
            "corpus: {} records (Easy {}, Hard {}), {} rejected\n",
            m.records, m.splits.easy, m.splits.hard, m.rejected
        ));
    }
    if let Some(n) = r.supervision_triplets {
        text.push_str(&format!("supervision: {n} triplets\n"));
    }
    if let Some(s) = &r.last_sft {
        text.push_str(&format!(
            "sft: {} steps, final loss {:.4}\n",
            s.iteration + 1,
            -s.objective
        ));
    }
    if let Some(g) = &r.last_grpo {
        text.push_str(&format!(
            "grpo: {} iterations, final mean reward {:.4}, kl {:.4}\n",
            g.iteration + 1,
            g.mean_reward.unwrap_or(0.0),
            g.kl
        ));
    }
    if let Some(e) = &r.eval_init {
        text.push_str("\ninitial policy\n");
        text.push_str(&render_table(e));
    }
    if let Some(e) = &r.eval {
        text.push_str("\ntrained policy\n");
        text.push_str(&render_table(e));
    }
    write(&out.join("report.txt"), &text)?;
    write(
        &out.join("report.json"),
        serde_json::to_string_pretty(&r).expect("report") + "\n",
    )?;
    emit(format, &r, text);
    Ok(())
}
