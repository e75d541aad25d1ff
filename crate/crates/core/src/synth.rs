//! Synthetic eating sessions with exact ground truth.
//!
//! Each session is a label sequence drawn from a first-order chain; every
//! gesture is rendered by stretching its label's motif over a sampled
//! duration and adding i.i.d. Gaussian noise. Gestures are contiguous, so
//! segments tile the session.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::derive_seed;
use crate::signal::{GestureLabel, GestureSegment, SensorSample, SensorSeries, AXES, DEFAULT_SAMPLE_RATE_HZ};

const LABELS: usize = GestureLabel::COUNT;

/// `offset + amplitude * sin(2π · cycles · u + phase)` with `u` in `[0, 1)`
/// across the gesture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisMotif {
    pub offset: f64,
    pub amplitude: f64,
    pub cycles: f64,
    pub phase: f64,
}

impl AxisMotif {
    pub fn eval(&self, u: f64) -> f64 {
        self.offset + self.amplitude * (TAU * self.cycles * u + self.phase).sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motif {
    pub axes: [AxisMotif; AXES],
}

/// Inclusive duration range in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DurationRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
    pub noise_std: f64,
    /// Scales every motif; 0 makes all labels render identically.
    pub separability: f64,
    pub gestures_per_session: usize,
    /// Per label, canonical order.
    pub durations: [DurationRange; LABELS],
    /// Distribution of the first label of a session.
    pub initial: [f64; LABELS],
    /// Row-stochastic label chain, `transitions[from][to]`.
    pub transitions: [[f64; LABELS]; LABELS],
    /// Per-label motifs; `None` selects the built-in sinusoid bundles.
    #[serde(default)]
    pub motifs: Option<[Motif; LABELS]>,
}

fn default_rate() -> f64 {
    DEFAULT_SAMPLE_RATE_HZ
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            noise_std: 0.5,
            separability: 1.0,
            gestures_per_session: 40,
            durations: [DurationRange { min: 20, max: 60 }; LABELS],
            initial: [1.0 / LABELS as f64; LABELS],
            transitions: [[1.0 / LABELS as f64; LABELS]; LABELS],
            motifs: None,
        }
    }
}

/// Built-in motif for `label`: a distinct offset, frequency and phase per
/// axis so every pair of labels differs on every axis.
pub fn default_motif(label: GestureLabel) -> Motif {
    let g = label.index();
    Motif {
        axes: std::array::from_fn(|a| AxisMotif {
            offset: 0.5 * ((g + a) % LABELS) as f64 - 1.0,
            amplitude: 1.0,
            cycles: 0.5 + 0.5 * ((g + 2 * a) % 4) as f64,
            phase: TAU * ((3 * g + a) % LABELS) as f64 / LABELS as f64,
        }),
    }
}

fn stochastic(v: &[f64]) -> bool {
    v.iter().all(|p| p.is_finite() && *p >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() < 1e-9
}

impl SynthConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: SynthConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise standard deviation must be >= 0"));
        }
        if !self.separability.is_finite() {
            return Err(Error::invalid("separability must be finite"));
        }
        if self.gestures_per_session == 0 {
            return Err(Error::invalid("sessions need at least one gesture"));
        }
        for (label, d) in GestureLabel::ALL.iter().zip(&self.durations) {
            if d.min < 2 || d.min > d.max {
                return Err(Error::invalid(format!(
                    "{label} duration range [{}, {}] must satisfy 2 <= min <= max",
                    d.min, d.max
                )));
            }
        }
        if !stochastic(&self.initial) {
            return Err(Error::invalid("initial label distribution is not stochastic"));
        }
        for (label, row) in GestureLabel::ALL.iter().zip(&self.transitions) {
            if !stochastic(row) {
                return Err(Error::invalid(format!("label transition row {label} is not stochastic")));
            }
        }
        Ok(())
    }

    pub fn motif(&self, label: GestureLabel) -> Motif {
        match &self.motifs {
            Some(m) => m[label.index()],
            None => default_motif(label),
        }
    }

    /// Stationary distribution of the label chain by power iteration.
    pub fn stationary(&self) -> [f64; LABELS] {
        let mut p = [1.0 / LABELS as f64; LABELS];
        for _ in 0..10_000 {
            let mut next = [0.0; LABELS];
            for (i, row) in self.transitions.iter().enumerate() {
                for (j, a) in row.iter().enumerate() {
                    next[j] += p[i] * a;
                }
            }
            let delta: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
            p = next;
            if delta < 1e-15 {
                break;
            }
        }
        p
    }
}

fn sample_categorical(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random::<f64>() * p.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn generate_session(config: &SynthConfig, index: usize) -> Result<(SensorSeries, Vec<GestureSegment>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[index as u64]));
    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut samples = Vec::new();
    let mut segments = Vec::with_capacity(config.gestures_per_session);
    let mut label = GestureLabel::ALL[sample_categorical(&config.initial, &mut rng)];
    for k in 0..config.gestures_per_session {
        if k > 0 {
            label = GestureLabel::ALL[sample_categorical(&config.transitions[label.index()], &mut rng)];
        }
        let range = config.durations[label.index()];
        let len = rng.random_range(range.min..=range.max);
        let motif = config.motif(label);
        let start = samples.len();
        for i in 0..len {
            let u = (i as f64 + 0.5) / len as f64;
            let axes = std::array::from_fn(|a| {
                config.separability * motif.axes[a].eval(u) + noise.sample(&mut rng)
            });
            samples.push(SensorSample::from_axes(axes));
        }
        segments.push(GestureSegment::new(start, samples.len(), label));
    }
    let series = SensorSeries::new(format!("synth-{index:04}"), config.sample_rate_hz, samples)?;
    Ok((series, segments))
}

/// Renders `sessions` sessions. Each session draws from its own seed
/// derived from `config.seed`, so the output does not depend on thread
/// scheduling.
pub fn generate_corpus(config: &SynthConfig, sessions: usize) -> Result<Vec<(SensorSeries, Vec<GestureSegment>)>> {
    config.validate()?;
    (0..sessions)
        .into_par_iter()
        .map(|i| generate_session(config, i))
        .collect()
}
