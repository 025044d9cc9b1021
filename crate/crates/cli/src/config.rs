use std::fs;
use std::path::{Path, PathBuf};

use auxline::corpus::DEFAULT_CUE_VERBS;
use auxline::grpo::GrpoConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Resolved run configuration. `grpo.seed` always equals the global seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub ingest: IngestSection,
    pub perturb: PerturbSection,
    pub score: ScoreSection,
    pub tasks: TaskSection,
    pub train: TrainSection,
    pub grpo: GrpoConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            out: PathBuf::from("run"),
            ingest: IngestSection::default(),
            perturb: PerturbSection::default(),
            score: ScoreSection::default(),
            tasks: TaskSection::default(),
            train: TrainSection::default(),
            grpo: GrpoConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub corpus: PathBuf,
    pub cue_verbs: Vec<String>,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            corpus: PathBuf::from("fixtures/corpus"),
            cue_verbs: DEFAULT_CUE_VERBS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Empty paths mean "inside the run directory".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbSection {
    pub records: PathBuf,
    pub scenes: PathBuf,
    pub per_gold_negatives: usize,
    /// Share of records held out as the judge test split.
    pub test_fraction: f64,
}

impl Default for PerturbSection {
    fn default() -> Self {
        PerturbSection {
            records: PathBuf::new(),
            scenes: PathBuf::new(),
            per_gold_negatives: 5,
            test_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    pub triplets: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub count: usize,
    /// Existing task file; generated from the seed when empty.
    pub file: PathBuf,
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection {
            count: 40,
            file: PathBuf::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Run the supervised stage before GRPO.
    pub sft_first: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { sft_first: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub samples_per_task: u64,
    pub temperature: f64,
    /// Checkpoint to evaluate; `policy.json` in the run directory when empty.
    pub policy: PathBuf,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            samples_per_task: 8,
            temperature: 1.0,
            policy: PathBuf::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Path inside the run directory unless `p` is set.
    pub fn in_run(&self, p: &Path, default_name: &str) -> PathBuf {
        if p.as_os_str().is_empty() {
            self.out.join(default_name)
        } else {
            p.to_path_buf()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.grpo.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.ingest.cue_verbs.is_empty() {
            return Err(CliError::Config("ingest.cue_verbs must not be empty".into()));
        }
        if self.perturb.per_gold_negatives == 0 {
            return Err(CliError::Config("perturb.per_gold_negatives must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.perturb.test_fraction) {
            return Err(CliError::Config("perturb.test_fraction must lie in [0, 1]".into()));
        }
        if self.tasks.count == 0 {
            return Err(CliError::Config("tasks.count must be at least 1".into()));
        }
        if self.eval.samples_per_task == 0 {
            return Err(CliError::Config("eval.samples_per_task must be at least 1".into()));
        }
        if !(self.eval.temperature > 0.0 && self.eval.temperature.is_finite()) {
            return Err(CliError::Config("eval.temperature must be positive".into()));
        }
        Ok(())
    }
}
