use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::backend::MockParams;
use crate::fcg::FcgConfig;
use crate::strategies::StrategySpec;
use crate::tabular::SplitRatio;

pub const DEFAULT_SEEDS: [u64; 5] = [25, 35, 42, 45, 55];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub strategies: StrategiesConfig,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    #[serde(default)]
    pub fcg: FcgSection,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// CSV file, relative to the config file.
    pub path: PathBuf,
    /// Built-in schema name (`adult`, `credit`) or a schema file path.
    pub schema: String,
    /// Built-in template name or a template file path. Defaults to the schema name.
    #[serde(default)]
    pub template: Option<String>,
    #[serde(default = "default_seed")]
    pub split_seed: u64,
    #[serde(default)]
    pub split_ratio: SplitRatio,
    /// Seed of the balanced dev/test extraction.
    #[serde(default = "default_seed")]
    pub sample_seed: u64,
    #[serde(default = "default_dev")]
    pub dev_size: usize,
    #[serde(default = "default_test")]
    pub test_size: usize,
}

fn default_seed() -> u64 {
    42
}

fn default_dev() -> usize {
    60
}

fn default_test() -> usize {
    512
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub max_in_flight: usize,
    /// Persistent response cache directory, relative to the config file.
    pub cache_dir: Option<PathBuf>,
    pub requests_per_minute: Option<u32>,
    pub system_split: bool,
    pub max_prompt_chars: Option<usize>,
    pub mock: MockParams,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            max_in_flight: crate::backend::DEFAULT_MAX_IN_FLIGHT,
            cache_dir: None,
            requests_per_minute: None,
            system_split: false,
            max_prompt_chars: None,
            mock: MockParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedStrategy {
    pub name: String,
    pub r_z: f64,
    pub r_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategiesConfig {
    pub k: usize,
    pub seeds: Vec<u64>,
    pub specs: Vec<NamedStrategy>,
}

impl Default for StrategiesConfig {
    fn default() -> Self {
        let named = |name: &str, r_z, r_y| NamedStrategy {
            name: name.into(),
            r_z,
            r_y,
        };
        StrategiesConfig {
            k: 8,
            seeds: DEFAULT_SEEDS.to_vec(),
            specs: vec![named("S1", 0.5, 0.5), named("S2", 1.0, 0.5), named("S3", 1.0, 1.0)],
        }
    }
}

impl StrategiesConfig {
    pub fn spec(&self, s: &NamedStrategy, seed: u64) -> StrategySpec {
        StrategySpec {
            r_z: s.r_z,
            r_y: s.r_y,
            k: self.k,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    pub seed: u64,
    pub k: usize,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig { seed: 55, k: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub k: usize,
    pub r_z: f64,
    pub r_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, serde_json::Value>")]
pub struct FcgSection {
    #[serde(flatten)]
    pub params: FcgConfig,
    /// Conditions evaluated with the top-ranked candidates.
    pub grid: Vec<GridPoint>,
    /// Reuse exported tables instead of rerunning the search.
    pub load_tables: Option<PathBuf>,
}

impl Default for FcgSection {
    fn default() -> Self {
        let mut grid = Vec::new();
        for k in [8, 4] {
            for (r_z, r_y) in [(0.5, 0.5), (0.0, 0.5), (1.0, 0.5), (1.0, 1.0), (1.0, 0.0)] {
                grid.push(GridPoint { k, r_z, r_y });
            }
        }
        FcgSection {
            params: FcgConfig::default(),
            grid,
            load_tables: None,
        }
    }
}

impl TryFrom<BTreeMap<String, serde_json::Value>> for FcgSection {
    type Error = String;

    fn try_from(mut map: BTreeMap<String, serde_json::Value>) -> Result<Self, String> {
        let mut section = FcgSection::default();
        if let Some(grid) = map.remove("grid") {
            section.grid = serde_json::from_value(grid).map_err(|e| format!("fcg.grid: {e}"))?;
        }
        if let Some(path) = map.remove("load_tables") {
            section.load_tables = serde_json::from_value(path).map_err(|e| format!("fcg.load_tables: {e}"))?;
        }
        let rest = serde_json::Value::Object(map.into_iter().collect());
        section.params = serde_json::from_value(rest).map_err(|e| format!("fcg: {e}"))?;
        Ok(section)
    }
}

/// Paths resolved against the config file's directory.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<LoadedConfig, PipelineError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let config = ExperimentConfig::from_toml_str(&text)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, base_dir })
    }

    /// Stable content hash: sha256 over the canonical JSON form, leaving out
    /// the output directory.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        let json = serde_json::to_string(&value).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Replace every selection seed with `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.strategies.seeds = vec![seed];
        self.perturbation.seed = seed;
        self.fcg.params.seed = seed;
    }

    pub fn validate(&self, base_dir: &Path) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let data = base_dir.join(&self.data.path);
        if !data.is_file() {
            return bad(format!("data file {} does not exist", data.display()));
        }
        for reference in [Some(&self.data.schema), self.data.template.as_ref()]
            .into_iter()
            .flatten()
        {
            if !is_builtin(reference) && !base_dir.join(reference).is_file() {
                return bad(format!("{reference:?} is neither built-in nor an existing file"));
            }
        }
        if self.strategies.seeds.is_empty() {
            return bad("strategies.seeds must not be empty".into());
        }
        if self.backend.max_in_flight == 0 {
            return bad("backend.max_in_flight must be at least 1".into());
        }
        let mut needs_even = Vec::new();
        for s in &self.strategies.specs {
            if [s.r_z, s.r_y].contains(&0.5) {
                needs_even.push((s.name.clone(), self.strategies.k));
            }
        }
        for g in &self.fcg.grid {
            if [g.r_z, g.r_y].contains(&0.5) {
                needs_even.push((format!("fcg grid r_z={} r_y={}", g.r_z, g.r_y), g.k));
            }
        }
        needs_even.push(("perturbation".into(), self.perturbation.k));
        if let Some((name, k)) = needs_even.into_iter().find(|(_, k)| k % 2 != 0) {
            return bad(format!("{name}: K={k} must be even for a 0.5 ratio"));
        }
        self.fcg
            .params
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }
}

pub fn is_builtin(name: &str) -> bool {
    matches!(name, "adult" | "credit")
}
