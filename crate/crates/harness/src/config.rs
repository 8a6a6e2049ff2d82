//! Experiment files: one `key = value` per line, values in JSON where they
//! are not bare words. Search settings start from the arm's preset and are
//! then overridden by explicit keys.

use nas_core::data::{DatasetKind, DatasetSpec};
use nas_core::eval::RetrainConfig;
use nas_core::regularize::{AdmmConfig, ProximityConfig};
use nas_core::schedule::ScheduleKind;
use nas_core::search::{RampIndexing, RegularizerConfig, SearchConfig};
use nas_core::space::{ActivationMode, OpKind};
use serde_json::Value;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("key {key:?}: {msg}")]
    BadValue { key: String, msg: String },
    #[error("unknown arm {0:?}")]
    UnknownArm(String),
    #[error(transparent)]
    Invalid(#[from] nas_core::Error),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

type Result<T> = std::result::Result<T, ConfigError>;

/// Ablation arms. Each one modifies plain first-order DARTS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    Darts,
    Cs10,
    Fimt,
    Pr,
    Prime,
    Crb,
    FimtCrb,
    PrimeCrb,
    Admm,
    AdmmFimt,
    AdmmFimtCrb,
}

impl Arm {
    pub const ALL: [Arm; 11] = [
        Arm::Darts,
        Arm::Cs10,
        Arm::Fimt,
        Arm::Pr,
        Arm::Prime,
        Arm::Crb,
        Arm::FimtCrb,
        Arm::PrimeCrb,
        Arm::Admm,
        Arm::AdmmFimt,
        Arm::AdmmFimtCrb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Darts => "darts",
            Arm::Cs10 => "cs10",
            Arm::Fimt => "fimt",
            Arm::Pr => "pr",
            Arm::Prime => "prime",
            Arm::Crb => "crb",
            Arm::FimtCrb => "fimt+crb",
            Arm::PrimeCrb => "prime+crb",
            Arm::Admm => "admm",
            Arm::AdmmFimt => "admm+fimt",
            Arm::AdmmFimtCrb => "admm+fimt+crb",
        }
    }

    /// Row label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Arm::Darts => "DARTS",
            Arm::Cs10 => "+CS10",
            Arm::Fimt => "+FIMT",
            Arm::Pr => "+PR",
            Arm::Prime => "DARTS-PRIME",
            Arm::Crb => "+CRB",
            Arm::FimtCrb => "+FIMT+CRB",
            Arm::PrimeCrb => "DARTS-PRIME+CRB",
            Arm::Admm => "+ADMM",
            Arm::AdmmFimt => "+ADMM+FIMT",
            Arm::AdmmFimtCrb => "+ADMM+FIMT+CRB",
        }
    }

    /// File-system friendly name.
    pub fn slug(self) -> String {
        self.name().replace('+', "_")
    }

    fn schedule(self) -> &'static str {
        match self {
            Arm::Cs10 => "constant",
            Arm::Fimt | Arm::Prime | Arm::FimtCrb | Arm::PrimeCrb | Arm::AdmmFimt | Arm::AdmmFimtCrb => "dynamic",
            _ => "alternating",
        }
    }

    fn regularizer(self) -> &'static str {
        match self {
            Arm::Pr | Arm::Prime | Arm::PrimeCrb => "proximity",
            Arm::Admm | Arm::AdmmFimt | Arm::AdmmFimtCrb => "admm",
            _ => "none",
        }
    }

    fn crb(self) -> bool {
        matches!(self, Arm::Crb | Arm::FimtCrb | Arm::PrimeCrb | Arm::AdmmFimtCrb)
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s || a.label().to_ascii_lowercase() == s)
            .ok_or(ConfigError::UnknownArm(s))
    }
}

/// Search keys are kept raw and resolved per arm.
const SEARCH_KEYS: &[&str] = &[
    "space.num_input_nodes",
    "space.num_states",
    "space.operators",
    "space.state_width",
    "space.num_cell_types",
    "space.cells",
    "space.activation",
    "schedule.kind",
    "schedule.k",
    "schedule.h0",
    "schedule.h_inc",
    "schedule.r",
    "schedule.lambda",
    "regularizer.kind",
    "regularizer.rho_p",
    "regularizer.squared",
    "regularizer.kink_epsilon",
    "regularizer.rho_a",
    "regularizer.decay",
    "regularizer.period",
    "search.epochs",
    "search.batch_size",
    "search.ramp",
    "search.w_lr",
    "search.w_lr_min",
    "search.w_momentum",
    "search.w_weight_decay",
    "search.w_grad_clip",
    "search.alpha_lr",
    "search.alpha_lr_min",
    "search.alpha_beta1",
    "search.alpha_beta2",
    "search.alpha_eps",
    "search.alpha_weight_decay",
    "search.alpha_cosine",
];

const GLOBAL_KEYS: &[&str] = &[
    "arm",
    "arms",
    "seeds",
    "output_dir",
    "threads",
    "dataset.kind",
    "dataset.size",
    "dataset.test_size",
    "dataset.noise",
    "dataset.classes",
    "dataset.seed",
    "retrain.epochs",
    "retrain.batch_size",
    "retrain.lr",
    "retrain.lr_min",
    "retrain.momentum",
    "retrain.weight_decay",
    "retrain.grad_clip",
    "extended.every",
    "baseline.random_genotypes",
    "baseline.seed",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Extra held-out points generated with the search data and split off for testing.
    pub test_size: usize,
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
    /// Seed is replaced by the trial seed.
    pub retrain: RetrainConfig,
    pub extended_every: Option<usize>,
    pub random_genotypes: usize,
    pub baseline_seed: u64,
    search: Vec<(String, Value)>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            test_size: 1000,
            arms: vec![Arm::Prime],
            seeds: vec![101, 102, 103, 104],
            output_dir: PathBuf::from("runs"),
            threads: None,
            retrain: RetrainConfig::default(),
            extended_every: None,
            random_genotypes: 0,
            baseline_seed: 7,
            search: Vec::new(),
        }
    }
}

fn bad(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::BadValue { key: key.to_string(), msg: msg.into() }
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    v.as_f64().ok_or_else(|| bad(key, format!("expected a number, got {v}")))
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    v.as_u64().map(|x| x as usize).ok_or_else(|| bad(key, format!("expected a non-negative integer, got {v}")))
}

fn as_u64(key: &str, v: &Value) -> Result<u64> {
    v.as_u64().ok_or_else(|| bad(key, format!("expected a non-negative integer, got {v}")))
}

/// A positive number, or `null` for no clipping.
fn as_clip(key: &str, v: &Value) -> Result<Option<f64>> {
    if v.is_null() {
        return Ok(None);
    }
    match as_f64(key, v)? {
        c if c > 0.0 => Ok(Some(c)),
        c => Err(bad(key, format!("expected a positive bound or null, got {c}"))),
    }
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| bad(key, format!("expected true or false, got {v}")))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| bad(key, format!("expected a string, got {v}")))
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Search settings while keys are being applied.
struct Draft {
    config: SearchConfig,
    schedule: String,
    k: usize,
    regularizer: String,
    prox: ProximityConfig,
    admm: AdmmConfig,
    operators_set: bool,
}

impl Draft {
    fn new(arm: Arm) -> Self {
        let mut config = SearchConfig::default();
        if arm.crb() {
            config.space.activation = ActivationMode::Crb;
        }
        Self {
            config,
            schedule: arm.schedule().to_string(),
            k: 10,
            regularizer: arm.regularizer().to_string(),
            prox: ProximityConfig::default(),
            admm: AdmmConfig::default(),
            operators_set: false,
        }
    }

    fn apply(&mut self, key: &str, v: &Value) -> Result<()> {
        let c = &mut self.config;
        match key {
            "space.num_input_nodes" => c.space.num_input_nodes = as_usize(key, v)?,
            "space.num_states" => c.space.num_states = as_usize(key, v)?,
            "space.operators" => {
                let list = v.as_array().ok_or_else(|| bad(key, "expected a JSON list of operator names"))?;
                c.space.operators =
                    list.iter().map(|o| as_str(key, o)?.parse::<OpKind>().map_err(|e| bad(key, e.to_string()))).collect::<Result<_>>()?;
                self.operators_set = true;
            }
            "space.state_width" => c.space.state_width = as_usize(key, v)?,
            "space.num_cell_types" => c.space.num_cell_types = as_usize(key, v)?,
            "space.cells" => c.space.cells = as_usize(key, v)?,
            "space.activation" => {
                c.space.activation = as_str(key, v)?.parse().map_err(|e: nas_core::Error| bad(key, e.to_string()))?
            }
            "schedule.kind" => self.schedule = as_str(key, v)?.to_string(),
            "schedule.k" => self.k = as_usize(key, v)?,
            "schedule.h0" => c.scheduler.h0 = as_f64(key, v)?,
            "schedule.h_inc" => c.scheduler.h_inc = as_f64(key, v)?,
            "schedule.r" => c.scheduler.r = as_usize(key, v)?,
            "schedule.lambda" => c.scheduler.lambda = as_f64(key, v)?,
            "regularizer.kind" => self.regularizer = as_str(key, v)?.to_string(),
            "regularizer.rho_p" => self.prox.rho = as_f64(key, v)?,
            "regularizer.squared" => self.prox.squared = as_bool(key, v)?,
            "regularizer.kink_epsilon" => self.prox.kink_epsilon = as_f64(key, v)?,
            "regularizer.rho_a" => self.admm.rho = as_f64(key, v)?,
            "regularizer.decay" => self.admm.decay = as_f64(key, v)?,
            "regularizer.period" => self.admm.period = as_usize(key, v)?,
            "search.epochs" => c.epochs = as_usize(key, v)?,
            "search.batch_size" => c.batch_size = as_usize(key, v)?,
            "search.ramp" => {
                c.ramp = match as_str(key, v)? {
                    "auto" => RampIndexing::Auto,
                    "alpha_steps" => RampIndexing::AlphaSteps,
                    "epochs" => RampIndexing::Epochs,
                    other => return Err(bad(key, format!("unknown ramp indexing {other:?}"))),
                }
            }
            "search.w_lr" => c.w_opt.lr = as_f64(key, v)?,
            "search.w_lr_min" => c.w_opt.lr_min = as_f64(key, v)?,
            "search.w_momentum" => c.w_opt.momentum = as_f64(key, v)?,
            "search.w_weight_decay" => c.w_opt.weight_decay = as_f64(key, v)?,
            "search.w_grad_clip" => c.w_opt.grad_clip = as_clip(key, v)?,
            "search.alpha_lr" => c.alpha_opt.lr = as_f64(key, v)?,
            "search.alpha_lr_min" => c.alpha_opt.lr_min = as_f64(key, v)?,
            "search.alpha_beta1" => c.alpha_opt.beta1 = as_f64(key, v)?,
            "search.alpha_beta2" => c.alpha_opt.beta2 = as_f64(key, v)?,
            "search.alpha_eps" => c.alpha_opt.eps = as_f64(key, v)?,
            "search.alpha_weight_decay" => c.alpha_opt.weight_decay = as_f64(key, v)?,
            "search.alpha_cosine" => c.alpha_opt.cosine = as_bool(key, v)?,
            _ => unreachable!("search key list out of sync: {key}"),
        }
        Ok(())
    }

    fn finish(mut self, seed: u64) -> Result<SearchConfig> {
        let c = &mut self.config;
        c.seed = seed;
        c.scheduler.kind = match self.schedule.as_str() {
            "alternating" => ScheduleKind::Alternating,
            "constant" => ScheduleKind::Constant(self.k),
            "dynamic" => ScheduleKind::DynamicFimt,
            other => return Err(bad("schedule.kind", format!("unknown schedule {other:?}"))),
        };
        if let ScheduleKind::Constant(k) = c.scheduler.kind {
            c.scheduler.r = k;
        }
        c.regularizer = match self.regularizer.as_str() {
            "none" => RegularizerConfig::None,
            "proximity" => RegularizerConfig::Proximity(self.prox),
            "admm" => RegularizerConfig::Admm(self.admm),
            other => return Err(bad("regularizer.kind", format!("unknown regularizer {other:?}"))),
        };
        // CRB has no `none` operator; drop it from the default list.
        if c.space.activation == ActivationMode::Crb && !self.operators_set {
            c.space.operators.retain(|o| *o != OpKind::None);
        }
        c.validate()?;
        Ok(self.config)
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line, msg: format!("expected `key = value`, got {t:?}") })?;
            let key = k.trim().to_string();
            let value = parse_value(v.trim());
            if !seen.insert(key.clone()) {
                return Err(ConfigError::DuplicateKey { line, key });
            }
            if SEARCH_KEYS.contains(&key.as_str()) {
                cfg.search.push((key, value));
            } else if GLOBAL_KEYS.contains(&key.as_str()) {
                cfg.apply_global(&key, &value)?;
            } else {
                return Err(ConfigError::UnknownKey { line, key });
            }
        }
        if seen.contains("arm") && seen.contains("arms") {
            return Err(bad("arms", "give either `arm` or `arms`, not both"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    fn apply_global(&mut self, key: &str, v: &Value) -> Result<()> {
        match key {
            "arm" => self.arms = vec![as_str(key, v)?.parse()?],
            "arms" => {
                let list = v.as_array().ok_or_else(|| bad(key, "expected a JSON list of arm names"))?;
                self.arms = list.iter().map(|a| as_str(key, a)?.parse()).collect::<Result<_>>()?;
            }
            "seeds" => {
                let list = v.as_array().ok_or_else(|| bad(key, "expected a JSON list of seeds"))?;
                self.seeds = list.iter().map(|s| as_u64(key, s)).collect::<Result<_>>()?;
            }
            "output_dir" => self.output_dir = PathBuf::from(as_str(key, v)?),
            "threads" => self.threads = Some(as_usize(key, v)?),
            "dataset.kind" => {
                self.dataset.kind = as_str(key, v)?.parse::<DatasetKind>().map_err(|e| bad(key, e.to_string()))?
            }
            "dataset.size" => self.dataset.size = as_usize(key, v)?,
            "dataset.test_size" => self.test_size = as_usize(key, v)?,
            "dataset.noise" => self.dataset.noise = as_f64(key, v)?,
            "dataset.classes" => self.dataset.classes = as_usize(key, v)?,
            "dataset.seed" => self.dataset.seed = as_u64(key, v)?,
            "retrain.epochs" => self.retrain.epochs = as_usize(key, v)?,
            "retrain.batch_size" => self.retrain.batch_size = as_usize(key, v)?,
            "retrain.lr" => self.retrain.lr = as_f64(key, v)?,
            "retrain.lr_min" => self.retrain.lr_min = as_f64(key, v)?,
            "retrain.momentum" => self.retrain.momentum = as_f64(key, v)?,
            "retrain.weight_decay" => self.retrain.weight_decay = as_f64(key, v)?,
            "retrain.grad_clip" => self.retrain.grad_clip = as_clip(key, v)?,
            "extended.every" => self.extended_every = Some(as_usize(key, v)?),
            "baseline.random_genotypes" => self.random_genotypes = as_usize(key, v)?,
            "baseline.seed" => self.baseline_seed = as_u64(key, v)?,
            _ => unreachable!("global key list out of sync: {key}"),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(bad("arms", "no arms given"));
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds", "no seeds given"));
        }
        if self.test_size == 0 {
            return Err(bad("dataset.test_size", "must be >= 1"));
        }
        if self.threads == Some(0) {
            return Err(bad("threads", "must be >= 1"));
        }
        if self.extended_every == Some(0) {
            return Err(bad("extended.every", "must be >= 1"));
        }
        if self.retrain.epochs == 0 || self.retrain.batch_size == 0 {
            return Err(bad("retrain", "epochs and batch_size must be >= 1"));
        }
        for &arm in &self.arms {
            self.search_config(arm, self.seeds[0])?;
        }
        Ok(())
    }

    /// Search settings for one trial: the arm's preset, then explicit keys.
    pub fn search_config(&self, arm: Arm, seed: u64) -> Result<SearchConfig> {
        let mut d = Draft::new(arm);
        d.config.space.input_dim = 2;
        d.config.space.num_classes = self.dataset.classes;
        for (k, v) in &self.search {
            d.apply(k, v)?;
        }
        d.finish(seed)
    }

    pub fn retrain_config(&self, seed: u64) -> RetrainConfig {
        RetrainConfig { seed, ..self.retrain }
    }

    /// Explicit search keys in file order.
    pub fn search_overrides(&self) -> &[(String, Value)] {
        &self.search
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arms_parse_by_name_and_label() {
        for a in Arm::ALL {
            assert_eq!(a.name().parse::<Arm>().unwrap(), a);
            assert_eq!(a.label().parse::<Arm>().unwrap(), a);
        }
        assert!("darts-prime-2".parse::<Arm>().is_err());
    }

    #[test]
    fn presets() {
        let cfg = ExperimentConfig::default();
        let prime = cfg.search_config(Arm::Prime, 101).unwrap();
        assert_eq!(prime.scheduler.kind, ScheduleKind::DynamicFimt);
        assert_eq!(prime.scheduler.r, 10);
        assert!(matches!(prime.regularizer, RegularizerConfig::Proximity(p) if p.rho == 0.1));
        let cs = cfg.search_config(Arm::Cs10, 101).unwrap();
        assert_eq!(cs.scheduler.kind, ScheduleKind::Constant(10));
        let crb = cfg.search_config(Arm::AdmmFimtCrb, 101).unwrap();
        assert_eq!(crb.space.activation, ActivationMode::Crb);
        assert!(!crb.space.operators.contains(&OpKind::None));
        assert!(matches!(crb.regularizer, RegularizerConfig::Admm(_)));
    }

    #[test]
    fn explicit_keys_override_presets() {
        let text = "arm = prime\nschedule.kind = alternating\nregularizer.kind = none\nseeds = [5]\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let a = cfg.search_config(Arm::Prime, 5).unwrap();
        let b = ExperimentConfig::default().search_config(Arm::Darts, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_file() {
        let text = r#"
# toy run
arms = ["darts", "+CS10", "DARTS-PRIME"]
seeds = [1, 2]
output_dir = out/dir
dataset.kind = blobs
dataset.classes = 3
dataset.noise = 0.5
space.operators = ["none", "skip", "affine_relu"]
search.epochs = 3
regularizer.rho_p = 0.5
retrain.epochs = 4
"#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.arms, vec![Arm::Darts, Arm::Cs10, Arm::Prime]);
        assert_eq!(cfg.output_dir, PathBuf::from("out/dir"));
        let s = cfg.search_config(Arm::Prime, 1).unwrap();
        assert_eq!(s.space.num_classes, 3);
        assert_eq!(s.space.operators.len(), 3);
        assert_eq!(s.epochs, 3);
        assert!(matches!(s.regularizer, RegularizerConfig::Proximity(p) if p.rho == 0.5));
        assert_eq!(cfg.retrain_config(9).epochs, 4);
        assert_eq!(cfg.retrain_config(9).seed, 9);
    }

    #[test]
    fn errors_carry_context() {
        assert!(matches!(ExperimentConfig::parse("nonsense"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(ExperimentConfig::parse("\nfoo = 1"), Err(ConfigError::UnknownKey { line: 2, .. })));
        assert!(matches!(ExperimentConfig::parse("seeds = [1]\nseeds = [2]"), Err(ConfigError::DuplicateKey { .. })));
        assert!(matches!(ExperimentConfig::parse("search.epochs = -1"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(ExperimentConfig::parse("arm = nope"), Err(ConfigError::UnknownArm(_))));
        // CRB with an explicit `none` operator is rejected by the search space.
        let crb_none = "arm = crb\nspace.operators = [\"none\", \"skip\"]";
        assert!(matches!(ExperimentConfig::parse(crb_none), Err(ConfigError::Invalid(_))));
    }
}
