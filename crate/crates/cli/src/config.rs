//! Run configuration: a TOML file plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use radar_core::oracle::OracleConfig;
use radar_core::policy::{OptimizerKind, TrainConfig};
use radar_core::{CostModel, DraftConfig, MdpConfig, PrefixRule};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draft: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bench_out: Option<PathBuf>,
    /// Directory for per-method histogram CSVs written by `bench`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histograms: Option<PathBuf>,
}

/// Discounting and step penalty; `t_max` and `k` come from `[draft]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MdpSection {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for MdpSection {
    fn default() -> Self {
        let d = MdpConfig::default();
        Self { alpha: d.alpha, gamma: d.gamma }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden_size: usize,
    pub optimizer: OptimizerKind,
    pub baseline: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self { epochs: d.epochs, batch: d.batch, lr: d.lr, hidden_size: d.hidden_size, optimizer: d.optimizer, baseline: d.baseline }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub max_tokens: usize,
    pub measure_wall_time: bool,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self { max_tokens: 64, measure_wall_time: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    /// Fixed depths to compare against; 0 is vanilla decoding.
    pub baselines: Vec<usize>,
    pub max_tokens: usize,
    pub measure_wall_time: bool,
    /// Use only the first `n` tokens of each eval document as its prompt.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<usize>,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self { baselines: (0..=8).collect(), max_tokens: 256, measure_wall_time: false, prompt_tokens: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub lossless_runs: usize,
    pub dist_instances: usize,
    pub dist_trials: usize,
    pub grad_batch: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        let d = OracleConfig::default();
        Self { lossless_runs: d.lossless_runs, dist_instances: d.dist_instances, dist_trials: d.dist_trials, grad_batch: d.grad_batch }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed for every stochastic step.
    pub seed: u64,
    pub workers: usize,
    pub paths: Paths,
    pub draft: DraftConfig,
    pub mdp: MdpSection,
    pub cost: CostModel,
    pub prefix: PrefixRule,
    pub train: TrainSection,
    pub generate: GenerateSection,
    pub bench: BenchSection,
    pub oracles: OracleSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            paths: Paths::default(),
            draft: DraftConfig::default(),
            mdp: MdpSection::default(),
            cost: CostModel::default(),
            prefix: PrefixRule::default(),
            train: TrainSection::default(),
            generate: GenerateSection::default(),
            bench: BenchSection::default(),
            oracles: OracleSection::default(),
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl RunConfig {
    pub fn mdp(&self) -> MdpConfig {
        MdpConfig { alpha: self.mdp.alpha, gamma: self.mdp.gamma, t_max: self.draft.t_max, k: self.draft.k }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch: t.batch,
            lr: t.lr,
            seed: self.seed,
            hidden_size: t.hidden_size,
            optimizer: t.optimizer,
            baseline: t.baseline,
        }
    }

    pub fn oracle_config(&self) -> OracleConfig {
        let o = &self.oracles;
        OracleConfig {
            lossless_runs: o.lossless_runs,
            dist_instances: o.dist_instances,
            dist_trials: o.dist_trials,
            grad_batch: o.grad_batch,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |e: radar_core::Error| ConfigError(e.to_string());
        self.draft.validate().map_err(err)?;
        self.mdp().validate().map_err(err)?;
        self.cost.validate().map_err(err)?;
        self.prefix.validate().map_err(err)?;
        self.train_config().validate().map_err(err)?;
        if self.workers == 0 {
            return Err(ConfigError("workers must be >= 1".into()));
        }
        if let Some(d) = self.bench.baselines.iter().find(|&&d| d > self.draft.t_max) {
            return Err(ConfigError(format!("bench baseline depth {d} exceeds draft.t_max {}", self.draft.t_max)));
        }
        if self.bench.prompt_tokens == Some(0) {
            return Err(ConfigError("bench.prompt_tokens must be >= 1".into()));
        }
        Ok(())
    }

    /// Resolves relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [
            &mut p.target,
            &mut p.draft,
            &mut p.corpus,
            &mut p.eval_corpus,
            &mut p.dataset,
            &mut p.checkpoint,
            &mut p.bench_out,
            &mut p.histograms,
        ]
        .into_iter()
        .flatten()
        {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError(format!("cannot serialize config: {e}")))
    }
}

/// Parses `value` as a TOML literal, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.into())),
        Err(_) => toml::Value::String(value.into()),
    }
}

/// Sets a dotted key such as `draft.t_max` in a TOML table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| ConfigError(format!("override key {key:?}: {part} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

/// Loads the file (if any), applies overrides in order, and validates.
/// Relative paths resolve against the config file's directory.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let (mut table, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
            let table: toml::Table = text.parse().map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
            (table, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (toml::Table::new(), PathBuf::new()),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError(format!("invalid config: {e}")))?;
    cfg.resolve_paths(&base);
    cfg.validate()?;
    Ok(cfg)
}
