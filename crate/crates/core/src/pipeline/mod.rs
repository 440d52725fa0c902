//! Experiment orchestration: data preparation, the baseline / sweep /
//! perturbation / FCG commands, and their persisted outputs.

mod commands;
mod config;
mod report;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    Backend, BackendError, CacheStats, CachedBackend, MockModel, RemoteBackend, RemoteConfig, ResponseCache,
};
use crate::evaluation::{batch_from_outcomes, evaluate_demonstrations, EvalError, SampleOutcome};
use crate::fcg::FcgError;
use crate::metrics::{evaluate, FairnessReport, MetricsError, METRIC_NAMES};
use crate::prompt::{PromptTemplate, TemplateError};
use crate::strategies::{DemonstrationSet, StrategyError};
use crate::tabular::{
    extract_balanced, load_dataset, split_dataset, DataError, DatasetSchema, DatasetSplit, SampleRecord,
};

pub use commands::{
    cmd_baseline, cmd_fcg, cmd_perturbation, cmd_report, cmd_split, cmd_strategy_sweep, FcgMode,
    PERTURBATION_CONDITIONS,
};
pub use config::{
    is_builtin, BackendConfig, BackendKind, DataConfig, ExperimentConfig, FcgSection, GridPoint, LoadedConfig,
    NamedStrategy, PerturbationConfig, StrategiesConfig, DEFAULT_SEEDS,
};
pub use report::{render_tables, subgroup_block};

/// Abstention rate above which a warning is logged.
pub const ABSTAIN_WARN: f64 = 0.10;
/// Abstention rate above which a condition fails.
pub const ABSTAIN_FAIL: f64 = 0.50;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Fcg(#[from] FcgError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("contamination: record ids {0:?} appear both in the evaluation set and in training or demonstrations")]
    Contamination(Vec<u64>),
    #[error("{condition}: {rate:.1}% of answers could not be parsed")]
    Abstention { condition: String, rate: f64 },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl PipelineError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

/// Loaded data, split and template for one config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
    pub schema: DatasetSchema,
    pub template: PromptTemplate,
    pub split: DatasetSplit,
    /// Balanced extraction from the dev split.
    pub dev: Vec<SampleRecord>,
    /// Balanced extraction from the test split.
    pub test: Vec<SampleRecord>,
}

impl Experiment {
    pub fn prepare(loaded: &LoadedConfig) -> Result<Self, PipelineError> {
        let config = loaded.config.clone();
        let base = &loaded.base_dir;
        config.validate(base)?;

        let schema = if is_builtin(&config.data.schema) {
            DatasetSchema::builtin(&config.data.schema).expect("built-in schema")
        } else {
            DatasetSchema::from_path(&base.join(&config.data.schema))?
        };
        let template_ref = match (&config.data.template, is_builtin(&config.data.schema)) {
            (Some(t), _) => t.clone(),
            (None, true) => config.data.schema.clone(),
            (None, false) => {
                return Err(PipelineError::Config(
                    "data.template is required with a custom schema".into(),
                ))
            }
        };
        let template = if is_builtin(&template_ref) {
            PromptTemplate::builtin(&template_ref, &schema)?
        } else {
            PromptTemplate::from_path(&base.join(&template_ref), &schema)?
        };

        let records = load_dataset(&base.join(&config.data.path), &schema)?;
        let split = split_dataset(&records, config.data.split_seed, config.data.split_ratio)?;
        let dev = extract_balanced(&split.dev, config.data.dev_size, config.data.sample_seed)?;
        let test = extract_balanced(&split.test, config.data.test_size, config.data.sample_seed)?;
        let exp = Experiment {
            config_hash: config.hash(),
            out_dir: base.join(&config.output_dir),
            base_dir: base.clone(),
            config,
            schema,
            template,
            split,
            dev,
            test,
        };
        exp.check_disjoint()?;
        Ok(exp)
    }

    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        Experiment::prepare(&ExperimentConfig::load(path)?)
    }

    /// Hard check that training records never share ids with dev or test.
    pub fn check_disjoint(&self) -> Result<(), PipelineError> {
        let train: HashSet<u64> = self.split.train.iter().map(|r| r.id).collect();
        let mut shared: Vec<u64> = self
            .dev
            .iter()
            .chain(&self.test)
            .map(|r| r.id)
            .filter(|id| train.contains(id))
            .collect();
        shared.sort_unstable();
        shared.dedup();
        if shared.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Contamination(shared))
        }
    }

    pub fn guard_demonstrations(&self, demos: &DemonstrationSet) -> Result<(), PipelineError> {
        let test: HashSet<u64> = self.test.iter().map(|r| r.id).collect();
        let shared: Vec<u64> = demos.ids().into_iter().filter(|id| test.contains(id)).collect();
        if shared.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Contamination(shared))
        }
    }

    pub fn backend(&self) -> Result<CachedBackend<Box<dyn Backend>>, PipelineError> {
        let cfg = &self.config.backend;
        let inner: Box<dyn Backend> = match cfg.kind {
            BackendKind::Mock => {
                let mut params = cfg.mock.clone();
                if let Some(max) = cfg.max_prompt_chars {
                    params.max_prompt_chars = max;
                }
                Box::new(MockModel::fit(&self.split.train, &self.template, params)?)
            }
            BackendKind::Remote => {
                let mut remote = RemoteConfig::from_env()?;
                remote.system_split = cfg.system_split;
                remote.requests_per_minute = cfg.requests_per_minute;
                if let Some(max) = cfg.max_prompt_chars {
                    remote.max_prompt_chars = max;
                }
                Box::new(RemoteBackend::new(remote))
            }
        };
        let cache = match &cfg.cache_dir {
            Some(dir) => ResponseCache::on_disk(self.base_dir.join(dir))?,
            None => ResponseCache::in_memory(),
        };
        Ok(CachedBackend::new(inner, cache))
    }

    pub fn command_dir(&self, command: &str) -> PathBuf {
        self.out_dir.join(command)
    }

    /// Evaluate one demonstration set (or zero-shot) on the test records.
    pub fn run_condition<B: Backend>(
        &self,
        backend: &CachedBackend<B>,
        condition: &str,
        seed: Option<u64>,
        demos: Option<&DemonstrationSet>,
    ) -> Result<ConditionResult, PipelineError> {
        if let Some(d) = demos {
            self.guard_demonstrations(d)?;
        }
        let before = backend.stats();
        let records = demos.map(DemonstrationSet::records).unwrap_or(&[]);
        let eval = evaluate_demonstrations(
            backend,
            &self.template,
            records,
            &self.test,
            self.config.backend.max_in_flight,
        )?;
        let after = backend.stats();
        let report = evaluate(&eval.batch)?;
        let rate = report.abstention_rate();
        if rate > ABSTAIN_FAIL {
            return Err(PipelineError::Abstention {
                condition: condition.to_string(),
                rate: rate * 100.0,
            });
        }
        if rate > ABSTAIN_WARN {
            log::warn!("{condition}: {:.1}% abstentions", rate * 100.0);
        }
        Ok(ConditionResult {
            condition: condition.to_string(),
            seed,
            demo_ids: demos.map(DemonstrationSet::ids).unwrap_or_default(),
            r_z: demos.map(DemonstrationSet::r_z),
            r_y: demos.map(DemonstrationSet::r_y),
            report,
            cache: CacheStats {
                hits: after.hits - before.hits,
                misses: after.misses - before.misses,
            },
            outcomes: eval.outcomes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: String,
    pub seed: Option<u64>,
    pub demo_ids: Vec<u64>,
    pub r_z: Option<f64>,
    pub r_y: Option<f64>,
    pub report: FairnessReport,
    pub cache: CacheStats,
    #[serde(skip)]
    pub outcomes: Vec<SampleOutcome>,
}

/// Mean and standard error of each metric across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub condition: String,
    pub n: usize,
    pub seeds: Vec<u64>,
    pub mean: BTreeMap<String, f64>,
    /// `None` when fewer than two seeds make the spread undefined.
    pub stderr: BTreeMap<String, Option<f64>>,
}

/// Sample mean and standard error (n − 1 denominator).
pub fn mean_stderr(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

impl Aggregate {
    pub fn from_runs(condition: &str, runs: &[&ConditionResult]) -> Aggregate {
        let mut mean = BTreeMap::new();
        let mut stderr = BTreeMap::new();
        for name in METRIC_NAMES {
            let values: Vec<f64> = runs.iter().filter_map(|r| r.report.metric(name)).collect();
            let (m, se) = mean_stderr(&values);
            mean.insert(name.to_string(), m);
            stderr.insert(name.to_string(), se);
        }
        Aggregate {
            condition: condition.to_string(),
            n: runs.len(),
            seeds: runs.iter().filter_map(|r| r.seed).collect(),
            mean,
            stderr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub condition: String,
    pub seed: Option<u64>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub command: String,
    pub config_hash: String,
    pub runs: Vec<ConditionResult>,
    pub aggregates: Vec<Aggregate>,
    pub failures: Vec<Failure>,
}

impl RunResult {
    pub fn new(command: &str, config_hash: &str) -> Self {
        RunResult {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            runs: Vec::new(),
            aggregates: Vec::new(),
            failures: Vec::new(),
        }
    }

    /// Aggregate the seeded runs of every condition, in first-seen order.
    pub fn aggregate(&mut self) {
        let mut order: Vec<&str> = Vec::new();
        for r in &self.runs {
            if r.seed.is_some() && !order.contains(&r.condition.as_str()) {
                order.push(&r.condition);
            }
        }
        self.aggregates = order
            .iter()
            .map(|c| {
                let runs: Vec<&ConditionResult> = self
                    .runs
                    .iter()
                    .filter(|r| r.condition == *c && r.seed.is_some())
                    .collect();
                Aggregate::from_runs(c, &runs)
            })
            .collect();
    }

    pub fn run(&self, condition: &str) -> Option<&ConditionResult> {
        self.runs.iter().find(|r| r.condition == condition)
    }

    pub fn cache_totals(&self) -> CacheStats {
        self.runs.iter().fold(CacheStats::default(), |acc, r| CacheStats {
            hits: acc.hits + r.cache.hits,
            misses: acc.misses + r.cache.misses,
        })
    }

    pub fn summary_lines(&self) -> Vec<SummaryLine> {
        let mut lines: Vec<SummaryLine> = self
            .runs
            .iter()
            .map(|r| {
                SummaryLine::Run(Box::new(RunSummary {
                    command: self.command.clone(),
                    config_hash: self.config_hash.clone(),
                    condition: r.condition.clone(),
                    seed: r.seed,
                    demo_ids: r.demo_ids.clone(),
                    r_z: r.r_z,
                    r_y: r.r_y,
                    abstention_rate: r.report.abstention_rate(),
                    cache: r.cache,
                    metrics: r.report.clone(),
                }))
            })
            .collect();
        lines.extend(self.aggregates.iter().cloned().map(SummaryLine::Aggregate));
        lines.extend(self.failures.iter().cloned().map(SummaryLine::Failure));
        lines
    }

    /// Write `results.jsonl`, `summary.jsonl` and `tables.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        let results: Vec<ResultLine> = self
            .runs
            .iter()
            .flat_map(|r| {
                r.outcomes.iter().map(|o| ResultLine {
                    condition: r.condition.clone(),
                    seed: r.seed,
                    outcome: o.clone(),
                })
            })
            .collect();
        write_jsonl(&dir.join("results.jsonl"), &results)?;
        let summary = self.summary_lines();
        write_jsonl(&dir.join("summary.jsonl"), &summary)?;
        let tables = render_tables(&self.command, &summary);
        let path = dir.join("tables.txt");
        fs::write(&path, tables).map_err(|e| PipelineError::io(&path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub config_hash: String,
    pub condition: String,
    pub seed: Option<u64>,
    pub demo_ids: Vec<u64>,
    pub r_z: Option<f64>,
    pub r_y: Option<f64>,
    pub abstention_rate: f64,
    pub cache: CacheStats,
    pub metrics: FairnessReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SummaryLine {
    Run(Box<RunSummary>),
    Aggregate(Aggregate),
    Failure(Failure),
}

/// One scored query of one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultLine {
    pub condition: String,
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub outcome: SampleOutcome,
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let file = fs::File::create(path).map_err(|e| PipelineError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| PipelineError::io(path, e))?;
        writeln!(w, "{line}").map_err(|e| PipelineError::io(path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    BufReader::new(file)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| {
            let l = l.map_err(|e| PipelineError::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| PipelineError::io(path, e))
        })
        .collect()
}

/// Condition name and seed.
pub type ConditionKey = (String, Option<u64>);

/// Recompute every condition's report from a persisted `results.jsonl`.
pub fn reconstruct_reports(path: &Path) -> Result<Vec<(ConditionKey, FairnessReport)>, PipelineError> {
    let lines: Vec<ResultLine> = read_jsonl(path)?;
    let mut groups: Vec<(ConditionKey, Vec<SampleOutcome>)> = Vec::new();
    for line in lines {
        let key = (line.condition, line.seed);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(line.outcome),
            None => groups.push((key, vec![line.outcome])),
        }
    }
    groups
        .into_iter()
        .map(|(k, outcomes)| Ok((k, evaluate(&batch_from_outcomes(&outcomes)?)?)))
        .collect()
}
