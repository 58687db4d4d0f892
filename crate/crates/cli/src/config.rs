//! The TOML run configuration shared by every subcommand.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use cfs_core::baselines::{BaselineSpec, ExtraTreesConfig};
use cfs_core::env::{FactorOrder, RewardMode};
use cfs_core::eval::LatencySimConfig;
use cfs_core::policy::TrainParams;
use cfs_core::synth::GenConfig;
use cfs_core::{CfsError, EnvParams};
use serde::{Deserialize, Serialize};

/// Cost weight per unit of factor cost. The default `lambda` is 0.9 of it.
pub const LAMBDA_UNIT: f64 = 5e-4;

#[derive(Debug)]
pub struct CliError {
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        CliError { kind: kind.into(), message: message.into() }
    }

    /// `error[kind]: message` on a single line.
    pub fn line(&self) -> String {
        let msg: Vec<&str> = self.message.split_whitespace().collect();
        format!("error[{}]: {}", self.kind, msg.join(" "))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl std::error::Error for CliError {}

impl From<CfsError> for CliError {
    fn from(e: CfsError) -> Self {
        CliError::new(e.kind(), e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentSection {
    pub lambda: f64,
    pub beta: f64,
    pub r_c: f64,
    pub gamma: f64,
    pub reward_mode: RewardMode,
    pub factor_order: FactorOrder,
}

impl Default for EnvironmentSection {
    fn default() -> Self {
        EnvironmentSection {
            lambda: 0.9 * LAMBDA_UNIT,
            beta: 0.05,
            r_c: 1.0,
            gamma: 1.0,
            reward_mode: RewardMode::Shaped,
            factor_order: FactorOrder::AscendingIndex,
        }
    }
}

impl EnvironmentSection {
    pub fn params(&self) -> EnvParams {
        EnvParams {
            lambda: self.lambda,
            beta: self.beta,
            r_c: self.r_c,
            gamma: self.gamma,
            reward_mode: self.reward_mode,
            factor_order: self.factor_order,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselinesSection {
    /// Method strings such as `norm:0.1`, `lasso:0.05`, `tree`, `ftest:8`.
    pub methods: Vec<String>,
    pub tree: ExtraTreesConfig,
}

impl Default for BaselinesSection {
    fn default() -> Self {
        BaselinesSection {
            methods: ["norm:0.1", "lasso:0.05", "tree", "ftest:8"].map(String::from).to_vec(),
            tree: ExtraTreesConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// Leading share of the page views used for training and fitting.
    pub train_fraction: f64,
    pub latency: LatencySimConfig,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection { train_fraction: 0.5, latency: LatencySimConfig::default() }
    }
}

/// Default artifact locations, used when a flag is omitted. Relative
/// paths resolve against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub masks_dir: PathBuf,
    pub oracle: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            dataset: "run/dataset.bin".into(),
            checkpoint: "run/policy.ckpt".into(),
            masks_dir: "run/masks".into(),
            oracle: "run/oracle.txt".into(),
            report_dir: "run/report".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, replaces the generation, training and tree seeds.
    pub seed: Option<u64>,
    pub generation: GenConfig,
    pub environment: EnvironmentSection,
    pub training: TrainParams,
    pub baselines: BaselinesSection,
    pub evaluation: EvaluationSection,
    pub paths: PathsSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::new("io", format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Parses and fully validates a configuration.
    pub fn parse(text: &str, path: &Path) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let (line, key) = e.span().map_or((None, None), |s| locate(text, s.start));
            let at = line.map_or_else(String::new, |l| format!(":{l}"));
            let key = key.map_or_else(String::new, |k| format!(" key `{k}`:"));
            CliError::new("config", format!("{}{at}:{key} {}", path.display(), e.message()))
        })?;
        cfg.validate().map_err(|(key, msg)| {
            let at = find_key_line(text, key).map_or_else(String::new, |l| format!(":{l}"));
            CliError::new("config", format!("{}{at}: key `{key}`: {msg}", path.display()))
        })?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if seed.is_some() {
            self.seed = seed;
        }
        if let Some(s) = self.seed {
            self.generation.seed = s;
            self.training.seed = s;
            self.baselines.tree.seed = s;
        }
        self
    }

    pub fn baseline_specs(&self) -> Vec<BaselineSpec> {
        self.baselines.methods.iter().map(|m| m.parse().expect("validated")).collect()
    }

    fn validate(&self) -> Result<(), (&'static str, String)> {
        let msg = |e: CfsError| match e {
            CfsError::Config(m) => m,
            other => other.to_string(),
        };
        self.generation.validate().map_err(|e| ("generation", msg(e)))?;
        self.environment.params().validate().map_err(|e| ("environment", msg(e)))?;
        self.training.validate().map_err(|e| ("training", msg(e)))?;
        for m in &self.baselines.methods {
            let spec: BaselineSpec = m.parse().map_err(|e| ("baselines.methods", msg(e)))?;
            spec.validate(self.generation.p).map_err(|e| ("baselines.methods", msg(e)))?;
        }
        if self.baselines.tree.n_trees == 0 {
            return Err(("baselines.tree", "n_trees must be > 0".into()));
        }
        let f = self.evaluation.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(("evaluation.train_fraction", format!("{f} must lie in (0, 1)")));
        }
        self.evaluation.latency.validate().map_err(|e| ("evaluation.latency", msg(e)))
    }
}

/// 1-based line of a byte offset, plus the dotted key written on that line.
fn locate(text: &str, offset: usize) -> (Option<usize>, Option<String>) {
    let offset = offset.min(text.len());
    let line_no = text[..offset].matches('\n').count() + 1;
    let mut section = String::new();
    for line in text.lines().take(line_no - 1) {
        if let Some(h) = header(line) {
            section = h;
        }
    }
    let line = text.lines().nth(line_no - 1).unwrap_or("");
    if let Some(h) = header(line) {
        return (Some(line_no), Some(h));
    }
    let key = line.split_once('=').map(|(k, _)| k.trim().to_string()).filter(|k| !k.is_empty());
    let key = key.map(|k| if section.is_empty() { k } else { format!("{section}.{k}") });
    (Some(line_no), key.or((!section.is_empty()).then_some(section)))
}

fn header(line: &str) -> Option<String> {
    let t = line.trim();
    let inner = t.strip_prefix('[')?.split(']').next()?;
    Some(inner.trim_start_matches('[').trim().to_string())
}

/// Line of the section header (for keys like `environment`) or of the
/// dotted key's last component inside its section.
fn find_key_line(text: &str, key: &str) -> Option<usize> {
    let (section, leaf) = match key.rsplit_once('.') {
        Some((s, l)) => (s, Some(l)),
        None => (key, None),
    };
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(h) = header(line) {
            current = h;
            if leaf.is_none() && current == section {
                return Some(i + 1);
            }
            continue;
        }
        if let (Some(l), Some((k, _))) = (leaf, line.split_once('=')) {
            if current == section && k.trim() == l {
                return Some(i + 1);
            }
        }
    }
    None
}
