//! Fixture-corpus pipeline: cue-verb filter, dedup, record extraction,
//! SFT examples and corpus validation.
//!
//! A fixture corpus is a directory of `*.txt` problems, the png files they
//! list, and `scenes.jsonl` mapping diagram file names to symbolic scenes.
//! Problem files are split into sections by `### NAME` header lines:
//!
//! ```text
//! ### SOURCE
//! exam-2019-07
//! ### QUESTION
//! In the cube ABCD-A1B1C1D1 ...
//! ### SOLUTION
//! Connect A C ...
//! ### ANSWER
//! √3/3
//! ### AUX
//! Connect A C
//! ### DIAGRAMS
//! p001_a.png
//! p001_b.png
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{parse_aux, wrap_aux};
use crate::env::{generate_tasks_with, Difficulty, EnvError, Task};
use crate::oracle::{consistency_score, Score};
use crate::report::ValidationReport;
use crate::scene::Scene;

pub const DEFAULT_CUE_VERBS: [&str; 4] = ["connect", "construct", "draw", "establish"];
pub const SCENES_FILE: &str = "scenes.jsonl";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("cue verb list is empty")]
    NoCueVerbs,
    #[error(transparent)]
    Env(#[from] EnvError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Diagram file name to symbolic scene.
pub type SceneStore = BTreeMap<String, Scene>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawProblem {
    pub source_exam: String,
    pub source_path: String,
    pub question_text: String,
    pub solution_text: String,
    pub answer_text: Option<String>,
    pub aux_text: Option<String>,
    pub diagrams: Vec<String>,
    /// Listed diagrams that exist on disk.
    pub diagram_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub id: u64,
    pub problem_description: String,
    pub final_answer: String,
    pub aux_description: String,
    pub original_diagram_ref: String,
    pub aux_diagram_ref: String,
    pub difficulty: Difficulty,
}

pub fn original_ref(id: u64) -> String {
    format!("{id}.png")
}

pub fn aux_ref(id: u64) -> String {
    format!("{id}_auxiliary.png")
}

/// A raw problem that could not become a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub source_path: String,
    pub findings: Vec<String>,
}

/// Source diagrams behind an emitted record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub id: u64,
    pub original_source: String,
    pub aux_source: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildOutput {
    pub records: Vec<ProblemRecord>,
    pub rejects: Vec<Reject>,
    pub provenance: Vec<Provenance>,
}

/// Parses one fixture file. Diagram existence is not checked here.
pub fn parse_fixture(text: &str, path: &str) -> Result<RawProblem, CorpusError> {
    let mut sections: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        if let Some(name) = line.strip_prefix("### ") {
            let name = name.trim().to_ascii_uppercase();
            if !matches!(
                name.as_str(),
                "SOURCE" | "QUESTION" | "SOLUTION" | "ANSWER" | "AUX" | "DIAGRAMS"
            ) {
                return Err(CorpusError::Format {
                    path: path.into(),
                    message: format!("unknown section `{name}`"),
                });
            }
            if sections.contains_key(&name) {
                return Err(CorpusError::Format {
                    path: path.into(),
                    message: format!("repeated section `{name}`"),
                });
            }
            sections.insert(name.clone(), Vec::new());
            current = Some(name);
        } else if let Some(c) = &current {
            sections.get_mut(c).expect("section exists").push(line);
        } else if !line.trim().is_empty() {
            return Err(CorpusError::Format {
                path: path.into(),
                message: "text before the first section".into(),
            });
        }
    }
    let body = |name: &str| -> Option<String> {
        sections
            .get(name)
            .map(|lines| lines.join("\n").trim().to_string())
            .filter(|s| !s.is_empty())
    };
    let diagrams: Vec<String> = sections
        .get("DIAGRAMS")
        .map(|lines| {
            lines
                .iter()
                .map(|l| l.trim())
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect()
        })
        .unwrap_or_default();
    Ok(RawProblem {
        source_exam: body("SOURCE").unwrap_or_default(),
        source_path: path.into(),
        question_text: body("QUESTION").unwrap_or_default(),
        solution_text: body("SOLUTION").unwrap_or_default(),
        answer_text: body("ANSWER"),
        aux_text: body("AUX"),
        diagrams,
        diagram_count: 0,
    })
}

/// Loads every `*.txt` fixture in `dir` in file-name order and counts the
/// listed diagrams that exist next to it.
pub fn load_fixtures(dir: &Path) -> Result<Vec<RawProblem>, CorpusError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    paths
        .par_iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let mut raw = parse_fixture(&text, &name)?;
            raw.diagram_count = raw.diagrams.iter().filter(|d| dir.join(d).is_file()).count();
            Ok(raw)
        })
        .collect()
}

/// Cue verb present in the solution (whole word, any case) and at least
/// two diagrams.
pub fn cue_verb_filter(raw: &RawProblem, cue_verbs: &[&str]) -> Result<bool, CorpusError> {
    if cue_verbs.is_empty() {
        return Err(CorpusError::NoCueVerbs);
    }
    let cues: Vec<String> = cue_verbs.iter().map(|c| c.to_lowercase()).collect();
    let has_cue = raw
        .solution_text
        .split(|c: char| !c.is_alphanumeric())
        .any(|w| cues.iter().any(|c| w.to_lowercase() == *c));
    Ok(has_cue && raw.diagram_count >= 2)
}

pub fn dedup_key(question: &str) -> String {
    question.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Keeps the first problem for each whitespace-normalized question.
pub fn dedup(raws: Vec<RawProblem>) -> Vec<RawProblem> {
    let mut seen = HashSet::new();
    raws.into_iter()
        .filter(|r| seen.insert(dedup_key(&r.question_text)))
        .collect()
}

fn extract(raw: &RawProblem) -> Result<(String, String, String, Difficulty), Vec<String>> {
    let mut findings = Vec::new();
    if raw.question_text.is_empty() {
        findings.push("MISSING_FIELD(problem_description)".to_string());
    }
    let answer = raw.answer_text.clone().unwrap_or_default();
    if answer.is_empty() {
        findings.push("MISSING_FIELD(final_answer)".to_string());
    }
    let mut difficulty = Difficulty::Easy;
    let aux = match &raw.aux_text {
        None => {
            findings.push("MISSING_FIELD(aux_description)".to_string());
            String::new()
        }
        Some(text) => match parse_aux(text) {
            Ok(p) => {
                difficulty = Difficulty::of(&p);
                p.to_string()
            }
            Err(e) => {
                findings.push(format!("UNPARSEABLE_AUX({e})"));
                String::new()
            }
        },
    };
    if raw.diagrams.len() < 2 {
        findings.push("MISSING_FIELD(diagrams)".to_string());
    }
    if findings.is_empty() {
        Ok((raw.question_text.clone(), answer, aux, difficulty))
    } else {
        Err(findings)
    }
}

/// Extracts records with sequential ids; failures go to `rejects`.
pub fn build_records(raws: &[RawProblem]) -> BuildOutput {
    let extracted: Vec<_> = raws.par_iter().map(extract).collect();
    let mut out = BuildOutput::default();
    for (raw, ex) in raws.iter().zip(extracted) {
        match ex {
            Ok((problem_description, final_answer, aux_description, difficulty)) => {
                let id = out.records.len() as u64 + 1;
                out.records.push(ProblemRecord {
                    id,
                    problem_description,
                    final_answer,
                    aux_description,
                    original_diagram_ref: original_ref(id),
                    aux_diagram_ref: aux_ref(id),
                    difficulty,
                });
                out.provenance.push(Provenance {
                    id,
                    original_source: raw.diagrams[0].clone(),
                    aux_source: raw.diagrams[1].clone(),
                });
            }
            Err(findings) => out.rejects.push(Reject {
                source_path: raw.source_path.clone(),
                findings,
            }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftExample {
    pub id: u64,
    pub prompt: String,
    pub target: String,
}

pub fn sft_prompt(problem: &str) -> String {
    format!(
        "Solve the following solid geometry problem. Put every auxiliary construction \
         between {} and {}, then state the result after \"Final Answer:\".\n\n{problem}",
        crate::dsl::AUX_OPEN,
        crate::dsl::AUX_CLOSE
    )
}

pub fn sft_target(aux_description: &str, final_answer: &str) -> String {
    format!("{}\nFinal Answer: {final_answer}", wrap_aux(aux_description))
}

pub fn build_sft_examples(records: &[ProblemRecord]) -> Vec<SftExample> {
    records
        .iter()
        .map(|r| SftExample {
            id: r.id,
            prompt: sft_prompt(&r.problem_description),
            target: sft_target(&r.aux_description, &r.final_answer),
        })
        .collect()
}

/// Completeness, id uniqueness, aux parseability, naming and, when scenes are
/// given, that every gold description scores 1.0 against its own pair.
pub fn validate_corpus(records: &[ProblemRecord], scenes: Option<&SceneStore>) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut ids = BTreeSet::new();
    for r in records {
        let subject = r.id.to_string();
        if !ids.insert(r.id) {
            report.push("DUPLICATE_ID", subject.clone());
        }
        for (name, value) in [
            ("problem_description", &r.problem_description),
            ("final_answer", &r.final_answer),
            ("aux_description", &r.aux_description),
            ("original_diagram_ref", &r.original_diagram_ref),
            ("aux_diagram_ref", &r.aux_diagram_ref),
        ] {
            if value.trim().is_empty() {
                report.push("MISSING_FIELD", format!("{subject}:{name}"));
            }
        }
        if r.original_diagram_ref != original_ref(r.id) || r.aux_diagram_ref != aux_ref(r.id) {
            report.push("BAD_DIAGRAM_REF", subject.clone());
        }
        let aux = match parse_aux(&r.aux_description) {
            Ok(p) => p,
            Err(_) => {
                if !r.aux_description.trim().is_empty() {
                    report.push("UNPARSEABLE_AUX", subject.clone());
                }
                continue;
            }
        };
        if Difficulty::of(&aux) != r.difficulty {
            report.push("DIFFICULTY_MISMATCH", subject.clone());
        }
        if let Some(store) = scenes {
            let pair = (store.get(&r.original_diagram_ref), store.get(&r.aux_diagram_ref));
            let consistent = match pair {
                (Some(o), Some(a)) => matches!(consistency_score(o, &aux, a), Ok(j) if j.score == Score::ONE),
                _ => false,
            };
            if !consistent {
                report.push("SEMANTIC_INCONSISTENCY", subject);
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub easy: usize,
    pub hard: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub raw: usize,
    pub after_cue_filter: usize,
    pub after_dedup: usize,
    pub records: usize,
    pub rejected: usize,
    pub splits: SplitCounts,
}

pub fn split_counts(records: &[ProblemRecord]) -> SplitCounts {
    let hard = records.iter().filter(|r| r.difficulty == Difficulty::Hard).count();
    SplitCounts {
        easy: records.len() - hard,
        hard,
    }
}

#[derive(Serialize, Deserialize)]
struct SceneLine {
    diagram: String,
    scene: Scene,
}

pub fn read_scene_store(path: &Path) -> Result<SceneStore, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut store = SceneStore::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let entry: SceneLine = serde_json::from_str(line).map_err(|source| CorpusError::Json {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        store.insert(entry.diagram, entry.scene);
    }
    Ok(store)
}

pub fn scene_store_jsonl(store: &SceneStore) -> String {
    store
        .iter()
        .map(|(diagram, scene)| {
            let line = SceneLine {
                diagram: diagram.clone(),
                scene: scene.sorted(),
            };
            serde_json::to_string(&line).expect("scene serializes") + "\n"
        })
        .collect()
}

/// Serializes items one JSON document per line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|x| serde_json::to_string(x).expect("record serializes") + "\n")
        .collect()
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| CorpusError::Json {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

pub fn read_records(path: &Path) -> Result<Vec<ProblemRecord>, CorpusError> {
    read_jsonl(path)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CorpusError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Runs the full pipeline from `corpus_dir` into `out_dir`, writing
/// `records.jsonl`, `rejects.jsonl`, `sft.jsonl`, `scenes.jsonl`,
/// `manifest.json` and the renamed diagrams under `diagrams/`.
pub fn ingest(corpus_dir: &Path, out_dir: &Path, cue_verbs: &[&str]) -> Result<Manifest, CorpusError> {
    let raws = load_fixtures(corpus_dir)?;
    let raw = raws.len();
    let mut kept = Vec::new();
    for r in raws {
        if cue_verb_filter(&r, cue_verbs)? {
            kept.push(r);
        }
    }
    let after_cue_filter = kept.len();
    let kept = dedup(kept);
    let after_dedup = kept.len();
    let built = build_records(&kept);

    let scenes_path = corpus_dir.join(SCENES_FILE);
    let source_scenes = if scenes_path.is_file() {
        Some(read_scene_store(&scenes_path)?)
    } else {
        None
    };

    fs::create_dir_all(out_dir.join("diagrams")).map_err(io_err(out_dir))?;
    let mut scenes = SceneStore::new();
    for (rec, prov) in built.records.iter().zip(&built.provenance) {
        for (source, target) in [
            (&prov.original_source, &rec.original_diagram_ref),
            (&prov.aux_source, &rec.aux_diagram_ref),
        ] {
            let from = corpus_dir.join(source);
            let to = out_dir.join("diagrams").join(target);
            fs::copy(&from, &to).map_err(io_err(&from))?;
            if let Some(scene) = source_scenes.as_ref().and_then(|s| s.get(source)) {
                scenes.insert(target.clone(), scene.clone());
            }
        }
    }

    let manifest = Manifest {
        raw,
        after_cue_filter,
        after_dedup,
        records: built.records.len(),
        rejected: built.rejects.len(),
        splits: split_counts(&built.records),
    };
    write(&out_dir.join("records.jsonl"), to_jsonl(&built.records))?;
    write(&out_dir.join("rejects.jsonl"), to_jsonl(&built.rejects))?;
    write(
        &out_dir.join("sft.jsonl"),
        to_jsonl(&build_sft_examples(&built.records)),
    )?;
    write(&out_dir.join(SCENES_FILE), scene_store_jsonl(&scenes))?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write(&out_dir.join("manifest.json"), json)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Fixture synthesis

/// 1x1 transparent PNG used as a diagram placeholder.
pub const PLACEHOLDER_PNG: [u8; 67] = [
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00, 0x00,
    0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1f, 0x15, 0xc4, 0x89, 0x00, 0x00, 0x00, 0x0a, 0x49,
    0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x00, 0x01, 0x00, 0x00, 0x05, 0x00, 0x01, 0x0d, 0x0a, 0x2d, 0xb4, 0x00, 0x00,
    0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82,
];

/// Counts of the noise files mixed into a synthesized corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureNoise {
    pub duplicates: usize,
    pub no_cue: usize,
    pub single_diagram: usize,
    pub missing_answer: usize,
    pub unparseable_aux: usize,
}

impl Default for FixtureNoise {
    fn default() -> Self {
        FixtureNoise {
            duplicates: 6,
            no_cue: 5,
            single_diagram: 5,
            missing_answer: 4,
            unparseable_aux: 3,
        }
    }
}

struct FixtureText<'a> {
    source: String,
    question: &'a str,
    solution: String,
    answer: Option<&'a str>,
    aux: String,
    diagrams: Vec<String>,
}

impl FixtureText<'_> {
    fn render(&self) -> String {
        let mut s = format!(
            "### SOURCE\n{}\n### QUESTION\n{}\n### SOLUTION\n{}\n",
            self.source, self.question, self.solution
        );
        if let Some(a) = self.answer {
            s.push_str(&format!("### ANSWER\n{a}\n"));
        }
        s.push_str(&format!("### AUX\n{}\n### DIAGRAMS\n", self.aux));
        for d in &self.diagrams {
            s.push_str(d);
            s.push('\n');
        }
        s
    }
}

fn solution_for(task: &Task) -> String {
    format!(
        "As shown in the second figure, construct the auxiliary elements: {}. \
         Working in the completed figure, the required value is {}.",
        task.gold_aux, task.gold_answer
    )
}

/// Writes a synthetic corpus of `easy + hard` valid problems plus noise
/// files into `dir`. Valid problems come first (`pNNN.txt`) so ingestion
/// assigns record id `N` to `pNNN`; noise files (`qNNN.txt`) follow.
pub fn write_fixture_corpus(
    dir: &Path,
    easy: usize,
    hard: usize,
    noise: FixtureNoise,
    seed: u64,
) -> Result<(), CorpusError> {
    let mut ds = Vec::with_capacity(easy + hard);
    let (mut e, mut h) = (0, 0);
    while e < easy || h < hard {
        if e < easy {
            ds.push(Difficulty::Easy);
            e += 1;
        }
        if h < hard {
            ds.push(Difficulty::Hard);
            h += 1;
        }
    }
    let extra = noise.no_cue + noise.single_diagram + noise.missing_answer + noise.unparseable_aux;
    ds.extend(std::iter::repeat_n(Difficulty::Easy, extra));
    let tasks = generate_tasks_with(&ds, seed)?;
    let (valid, spare) = tasks.split_at(easy + hard);

    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut scenes = SceneStore::new();
    let mut files: Vec<(String, String)> = Vec::new();
    let mut pngs: Vec<String> = Vec::new();

    for (i, t) in valid.iter().enumerate() {
        let n = i + 1;
        let (a, b) = (format!("p{n:03}_a.png"), format!("p{n:03}_b.png"));
        scenes.insert(a.clone(), t.scene.clone());
        scenes.insert(b.clone(), t.gold_reference.clone());
        let text = FixtureText {
            source: format!("exam-{:02}", n % 37 + 1),
            question: &t.question,
            solution: solution_for(t),
            answer: Some(&t.gold_answer),
            aux: t.gold_aux.to_string(),
            diagrams: vec![a.clone(), b.clone()],
        };
        files.push((format!("p{n:03}.txt"), text.render()));
        pngs.extend([a, b]);
    }

    let mut q = 0;
    let mut next = |files: &mut Vec<(String, String)>, text: FixtureText| {
        q += 1;
        files.push((format!("q{q:03}.txt"), text.render()));
    };
    for k in 0..noise.duplicates {
        // Same question, reworded solution, no new diagrams needed.
        let t = &valid[(k * 37) % valid.len().max(1)];
        let n = t.id;
        next(
            &mut files,
            FixtureText {
                source: "exam-dup".into(),
                question: &format!("  {}  ", t.question.replace(", ", ",  ")),
                solution: format!("Draw the construction: {}. The value is {}.", t.gold_aux, t.gold_answer),
                answer: Some(&t.gold_answer),
                aux: t.gold_aux.to_string(),
                diagrams: vec![format!("p{n:03}_a.png"), format!("p{n:03}_b.png")],
            },
        );
    }
    let mut spare = spare.iter();
    for _ in 0..noise.no_cue {
        let t = spare.next().expect("spare task");
        let (a, b) = (format!("q_nc{}_a.png", t.id), format!("q_nc{}_b.png", t.id));
        pngs.extend([a.clone(), b.clone()]);
        next(
            &mut files,
            FixtureText {
                source: "exam-nc".into(),
                question: &t.question,
                solution: format!("By symmetry the required value equals {}.", t.gold_answer),
                answer: Some(&t.gold_answer),
                aux: t.gold_aux.to_string(),
                diagrams: vec![a, b],
            },
        );
    }
    for _ in 0..noise.single_diagram {
        let t = spare.next().expect("spare task");
        let a = format!("q_sd{}_a.png", t.id);
        pngs.push(a.clone());
        next(
            &mut files,
            FixtureText {
                source: "exam-sd".into(),
                question: &t.question,
                solution: solution_for(t),
                answer: Some(&t.gold_answer),
                aux: t.gold_aux.to_string(),
                // The second listed diagram is absent on disk.
                diagrams: vec![a, format!("q_sd{}_b.png", t.id)],
            },
        );
    }
    for _ in 0..noise.missing_answer {
        let t = spare.next().expect("spare task");
        let (a, b) = (format!("q_ma{}_a.png", t.id), format!("q_ma{}_b.png", t.id));
        pngs.extend([a.clone(), b.clone()]);
        next(
            &mut files,
            FixtureText {
                source: "exam-ma".into(),
                question: &t.question,
                solution: solution_for(t),
                answer: None,
                aux: t.gold_aux.to_string(),
                diagrams: vec![a, b],
            },
        );
    }
    for _ in 0..noise.unparseable_aux {
        let t = spare.next().expect("spare task");
        let (a, b) = (format!("q_ua{}_a.png", t.id), format!("q_ua{}_b.png", t.id));
        pngs.extend([a.clone(), b.clone()]);
        next(
            &mut files,
            FixtureText {
                source: "exam-ua".into(),
                question: &t.question,
                solution: solution_for(t),
                answer: Some(&t.gold_answer),
                aux: "Connect the two midpoints and extend".into(),
                diagrams: vec![a, b],
            },
        );
    }

    for (name, text) in files {
        write(&dir.join(name), text)?;
    }
    for p in pngs {
        write(&dir.join(p), PLACEHOLDER_PNG)?;
    }
    write(&dir.join(SCENES_FILE), scene_store_jsonl(&scenes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(solution: &str, diagrams: usize) -> RawProblem {
        RawProblem {
            source_exam: "e".into(),
            source_path: "x.txt".into(),
            question_text: "Find the angle.".into(),
            solution_text: solution.into(),
            answer_text: Some("1/2".into()),
            aux_text: Some("Connect C M".into()),
            diagrams: vec!["a.png".into(), "b.png".into()],
            diagram_count: diagrams,
        }
    }

    #[test]
    fn cue_filter() {
        let cues = &DEFAULT_CUE_VERBS;
        assert!(cue_verb_filter(&raw("Connect C and M, then ...", 2), cues).unwrap());
        assert!(!cue_verb_filter(&raw("Connect C and M", 1), cues).unwrap());
        assert!(!cue_verb_filter(&raw("By symmetry the answer follows.", 2), cues).unwrap());
        assert!(cue_verb_filter(&raw("we DRAW a line", 2), cues).unwrap());
        // Whole words only.
        assert!(!cue_verb_filter(&raw("the connectivity argument", 2), cues).unwrap());
        assert!(matches!(
            cue_verb_filter(&raw("x", 2), &[]),
            Err(CorpusError::NoCueVerbs)
        ));
    }

    #[test]
    fn dedup_keeps_first() {
        let mut p1 = raw("Connect A B", 2);
        p1.source_path = "1".into();
        let mut copy = p1.clone();
        copy.source_path = "copy".into();
        copy.solution_text = "Draw something else".into();
        copy.question_text = "Find   the\nangle. ".into();
        let mut p2 = raw("Connect A B", 2);
        p2.question_text = "Find the distance.".into();
        let out = dedup(vec![p1.clone(), copy, p2.clone()]);
        assert_eq!(out, vec![p1.clone(), p2.clone()]);
        assert_eq!(dedup(out.clone()), out);
    }

    #[test]
    fn records_and_rejects() {
        let good = raw("Connect C M", 2);
        let mut no_answer = raw("Connect C M", 2);
        no_answer.answer_text = None;
        let mut bad_aux = raw("Connect C M", 2);
        bad_aux.aux_text = Some("join everything".into());
        let out = build_records(&[good, no_answer, bad_aux]);
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!(
            (r.id, r.original_diagram_ref.as_str(), r.aux_diagram_ref.as_str()),
            (1, "1.png", "1_auxiliary.png")
        );
        assert_eq!(out.rejects.len(), 2);
        assert_eq!(out.rejects[0].findings, vec!["MISSING_FIELD(final_answer)"]);
        assert!(out.rejects[1].findings[0].starts_with("UNPARSEABLE_AUX"));
        assert!(validate_corpus(&out.records, None).is_empty());
    }

    #[test]
    fn sft_round_trip() {
        let out = build_records(&[raw("Connect C M", 2)]);
        let ex = build_sft_examples(&out.records);
        assert!(ex[0].target.contains("[AUX]Connect C M[/AUX]"));
        assert!(ex[0].target.ends_with("Final Answer: 1/2"));
        assert_eq!(
            crate::dsl::extract_aux_spans(&ex[0].target).unwrap(),
            vec![out.records[0].aux_description.clone()]
        );
        assert!(build_sft_examples(&[]).is_empty());
    }

    #[test]
    fn validation_codes() {
        let mut recs = build_records(&[raw("Connect C M", 2), raw("Connect C M", 2)]).records;
        recs[1].id = 1;
        let rep = validate_corpus(&recs, None);
        assert!(rep.contains("DUPLICATE_ID", "1"));
        assert!(rep.has_code("BAD_DIAGRAM_REF"));
        recs[0].difficulty = Difficulty::Hard;
        assert!(validate_corpus(&recs, None).contains("DIFFICULTY_MISMATCH", "1"));
    }

    #[test]
    fn semantic_inconsistency() {
        let rec = build_records(&[raw("Connect C M", 2)]).records;
        let original = Scene::with_points(&["C", "M"]).unwrap();
        let mut store = SceneStore::new();
        store.insert("1.png".into(), original.clone());
        store.insert("1_auxiliary.png".into(), original.clone());
        assert!(validate_corpus(&rec, Some(&store)).contains("SEMANTIC_INCONSISTENCY", "1"));
        let mut reference = original;
        reference.add_segment("C", "M").unwrap();
        store.insert("1_auxiliary.png".into(), reference);
        assert!(validate_corpus(&rec, Some(&store)).is_empty());
    }

    #[test]
    fn fixture_parsing() {
        let text = "### SOURCE\nexam\n### QUESTION\nQ?\n\n### SOLUTION\nConnect A B\n### AUX\nConnect A B\n### DIAGRAMS\na.png\n\nb.png\n";
        let r = parse_fixture(text, "f.txt").unwrap();
        assert_eq!(r.question_text, "Q?");
        assert_eq!(r.answer_text, None);
        assert_eq!(r.diagrams, vec!["a.png", "b.png"]);
        assert!(parse_fixture("### NOTES\nx\n", "f").is_err());
        assert!(parse_fixture("stray\n### QUESTION\nx\n", "f").is_err());
    }
}
