//! One HMM per gesture type; a gesture is assigned to the model that gives
//! it the highest forward log-likelihood.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{baum_welch, forward_log_likelihood, init_hmm, BaumWelchOptions, GestureHmm};
use crate::math::{argmax, derive_seed};
use crate::signal::{
    apply_zscore, fit_zscore, FeatureSequence, GestureLabel, ZScoreStats, DEFAULT_STEP, DEFAULT_WINDOW,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    pub window: usize,
    pub step: usize,
    pub states: usize,
    pub mixtures: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    /// Divide each score by the gesture's window count.
    #[serde(default)]
    pub normalize_scores: bool,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            window: DEFAULT_WINDOW,
            step: DEFAULT_STEP,
            states: 13,
            mixtures: 5,
            seed: 0,
            tol: crate::hmm::DEFAULT_TOL,
            max_iter: crate::hmm::DEFAULT_MAX_ITER,
            normalize_scores: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub sequences: usize,
    pub windows: usize,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub final_log_likelihood: f64,
    /// States initialized from all windows because their temporal slice
    /// was empty.
    pub fallback_states: Vec<usize>,
    /// Iteration and sequence of a numerical failure that stopped training
    /// early.
    pub failure: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModel {
    pub label: GestureLabel,
    pub hmm: GestureHmm,
    pub training: TrainingMeta,
}

/// The five per-gesture models plus the shared normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmBank {
    pub config: BankConfig,
    pub zscore: ZScoreStats,
    /// In canonical label order.
    pub models: Vec<LabelModel>,
}

/// Per-label log-likelihoods in canonical label order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector(pub [f64; GestureLabel::COUNT]);

impl ScoreVector {
    pub fn get(&self, label: GestureLabel) -> f64 {
        self.0[label.index()]
    }

    /// Highest-scoring label; ties go to the earlier label.
    pub fn best(&self) -> GestureLabel {
        GestureLabel::ALL[argmax(&self.0)]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl AsRef<[f64]> for ScoreVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Fits z-score statistics on all training windows, then one HMM per label.
/// Training sequences must not be normalized yet.
pub fn train_bank<'a, I>(train: I, config: &BankConfig) -> Result<HmmBank>
where
    I: IntoIterator<Item = (&'a FeatureSequence, GestureLabel)>,
{
    let mut by_label: Vec<Vec<&FeatureSequence>> = vec![Vec::new(); GestureLabel::COUNT];
    for (seq, label) in train {
        if seq.is_empty() {
            return Err(Error::invalid(format!("empty {label} training sequence")));
        }
        by_label[label.index()].push(seq);
    }
    if let Some(missing) = GestureLabel::ALL.iter().find(|l| by_label[l.index()].is_empty()) {
        return Err(Error::invalid(format!("no training sequences for label {missing}")));
    }
    let zscore = fit_zscore(by_label.iter().flatten().flat_map(|s| s.windows.iter()))?;
    let models = GestureLabel::ALL
        .par_iter()
        .map(|&label| {
            let seqs: Vec<FeatureSequence> = by_label[label.index()]
                .iter()
                .map(|s| apply_zscore(&zscore, s))
                .collect();
            train_label(label, &seqs, config)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HmmBank {
        config: *config,
        zscore,
        models,
    })
}

fn train_label(label: GestureLabel, seqs: &[FeatureSequence], config: &BankConfig) -> Result<LabelModel> {
    let seed = derive_seed(config.seed, &[label.index() as u64]);
    let (init, init_report) = init_hmm(config.states, config.mixtures, seqs, seed)?;
    let opts = BaumWelchOptions {
        tol: config.tol,
        max_iter: config.max_iter,
    };
    let (hmm, report) = baum_welch(&init, seqs, &opts)?;
    Ok(LabelModel {
        label,
        hmm,
        training: TrainingMeta {
            sequences: seqs.len(),
            windows: seqs.iter().map(FeatureSequence::len).sum(),
            seed,
            iterations: report.iterations,
            converged: report.converged,
            final_log_likelihood: report.final_log_likelihood(),
            fallback_states: init_report.fallback_states,
            failure: report.failure.map(|f| (f.iteration, f.sequence)),
        },
    })
}

/// Log-likelihood of an unnormalized gesture under each label's model.
pub fn score(bank: &HmmBank, gesture: &FeatureSequence) -> Result<ScoreVector> {
    if gesture.is_empty() {
        return Err(Error::invalid("cannot score an empty feature sequence"));
    }
    let z = apply_zscore(&bank.zscore, gesture);
    let mut out = [0.0; GestureLabel::COUNT];
    for (slot, model) in out.iter_mut().zip(&bank.models) {
        let ll = forward_log_likelihood(&model.hmm, &z.windows)?;
        *slot = if bank.config.normalize_scores {
            ll / z.len() as f64
        } else {
            ll
        };
    }
    Ok(ScoreVector(out))
}

pub fn classify(bank: &HmmBank, gesture: &FeatureSequence) -> Result<GestureLabel> {
    Ok(score(bank, gesture)?.best())
}
