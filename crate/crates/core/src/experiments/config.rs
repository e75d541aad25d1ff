use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqmodel::MAX_ORDER;
use crate::signal::{DEFAULT_SAMPLE_RATE_HZ, DEFAULT_STEP, DEFAULT_WINDOW};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// A directory written by `ingest` or `synth`.
    Corpus {
        dir: PathBuf,
        #[serde(default = "default_rate")]
        sample_rate_hz: f64,
    },
    /// Sessions generated on the fly.
    Synth { sessions: usize, synth: SynthConfig },
}

fn default_rate() -> f64 {
    DEFAULT_SAMPLE_RATE_HZ
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureOptions {
    pub window: usize,
    pub step: usize,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        FeatureOptions {
            window: DEFAULT_WINDOW,
            step: DEFAULT_STEP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub normalize_scores: bool,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        TrainingOptions {
            tol: crate::hmm::DEFAULT_TOL,
            max_iter: crate::hmm::DEFAULT_MAX_ITER,
            normalize_scores: false,
        }
    }
}

/// Every (N, M) pair in the inclusive ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplexityGrid {
    pub states_min: usize,
    pub states_max: usize,
    pub mixtures_min: usize,
    pub mixtures_max: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub repetitions: usize,
}

impl Default for ComplexityGrid {
    fn default() -> Self {
        ComplexityGrid {
            states_min: 3,
            states_max: 25,
            mixtures_min: 1,
            mixtures_max: 7,
            train_per_class: 650,
            test_per_class: 650,
            repetitions: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SizeSweep {
    pub sizes: Vec<usize>,
    pub test_per_class: usize,
    pub repetitions: usize,
    pub states: usize,
    pub mixtures: usize,
}

impl Default for SizeSweep {
    fn default() -> Self {
        SizeSweep {
            sizes: (1..=10).map(|k| 65 * k).collect(),
            test_per_class: 650,
            repetitions: 30,
            states: 13,
            mixtures: 5,
        }
    }
}

/// Session-level cross-validation evaluating several context orders on
/// the same fold-internal bank. Order 0 is the bank alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldProtocol {
    pub orders: Vec<usize>,
    pub folds: usize,
    pub states: usize,
    pub mixtures: usize,
}

impl FoldProtocol {
    fn with_orders(orders: Vec<usize>) -> Self {
        FoldProtocol {
            orders,
            folds: 5,
            states: 13,
            mixtures: 5,
        }
    }
}

impl Default for FoldProtocol {
    fn default() -> Self {
        FoldProtocol::with_orders(vec![0, 1])
    }
}

fn default_orders() -> FoldProtocol {
    FoldProtocol::with_orders((0..=MAX_ORDER).collect())
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses one per core.
    #[serde(default)]
    pub workers: usize,
    pub data: DataSource,
    #[serde(default)]
    pub features: FeatureOptions,
    #[serde(default)]
    pub training: TrainingOptions,
    #[serde(default)]
    pub complexity: ComplexityGrid,
    #[serde(default)]
    pub training_size: SizeSweep,
    #[serde(default = "default_orders")]
    pub orders: FoldProtocol,
    #[serde(default)]
    pub crossval: FoldProtocol,
}

impl ExperimentConfig {
    pub fn new(data: DataSource) -> Self {
        ExperimentConfig {
            base_seed: 0,
            output_dir: default_output(),
            workers: 0,
            data,
            features: FeatureOptions::default(),
            training: TrainingOptions::default(),
            complexity: ComplexityGrid::default(),
            training_size: SizeSweep::default(),
            orders: default_orders(),
            crossval: FoldProtocol::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match &self.data {
            DataSource::Corpus { sample_rate_hz, .. } if !(*sample_rate_hz > 0.0) => {
                return Err(Error::invalid("corpus sample rate must be positive"))
            }
            DataSource::Synth { sessions, synth } => {
                if *sessions == 0 {
                    return Err(Error::invalid("synthetic data source needs at least one session"));
                }
                synth.validate()?;
            }
            _ => {}
        }
        if self.features.window < 2 || self.features.step == 0 {
            return Err(Error::invalid("feature window must be >= 2 and step >= 1"));
        }
        if !(self.training.tol > 0.0) || self.training.max_iter == 0 {
            return Err(Error::invalid("training tolerance and iteration cap must be positive"));
        }
        let g = &self.complexity;
        if g.states_min == 0 || g.states_min > g.states_max || g.mixtures_min == 0 || g.mixtures_min > g.mixtures_max {
            return Err(Error::invalid("complexity grid bounds must satisfy 1 <= min <= max"));
        }
        if g.repetitions == 0 || g.train_per_class == 0 || g.test_per_class == 0 {
            return Err(Error::invalid("complexity repetitions and per-class sizes must be positive"));
        }
        let s = &self.training_size;
        if s.sizes.is_empty() || s.sizes.contains(&0) || s.test_per_class == 0 {
            return Err(Error::invalid("training sizes must be a non-empty list of positive counts"));
        }
        if s.repetitions == 0 || s.states == 0 || s.mixtures == 0 {
            return Err(Error::invalid("training-size repetitions, states and mixtures must be positive"));
        }
        for (name, p) in [("orders", &self.orders), ("crossval", &self.crossval)] {
            if p.folds < 2 {
                return Err(Error::invalid(format!("{name}: fold count must be >= 2, got {}", p.folds)));
            }
            if p.orders.is_empty() {
                return Err(Error::invalid(format!("{name}: order list is empty")));
            }
            if let Some(o) = p.orders.iter().find(|o| **o > MAX_ORDER) {
                return Err(Error::invalid(format!("{name}: order {o} exceeds the maximum of {MAX_ORDER}")));
            }
            if p.states == 0 || p.mixtures == 0 {
                return Err(Error::invalid(format!("{name}: states and mixtures must be positive")));
            }
        }
        Ok(())
    }
}
