//! Eating-gesture recognition from 6-axis wrist motion with a two-level
//! hidden Markov architecture.
//!
//! * [`signal`]: session files, causal Gaussian smoothing, windowed
//!   features, z-scoring.
//! * [`gmm`]: diagonal Gaussian mixtures fitted by EM.
//! * [`hmm`]: left-to-right-with-skip HMMs, Baum-Welch, forward, Viterbi.
//! * [`classifier`]: the per-gesture model bank.
//! * [`seqmodel`]: order-n gesture context model and session decoding.
//! * [`synth`]: synthetic sessions with known ground truth.
//! * [`experiments`]: sweeps, order comparison and cross-validation tables.

pub mod classifier;
pub mod error;
pub mod experiments;
pub mod gmm;
pub mod hmm;
pub mod math;
pub mod model_file;
pub mod seqmodel;
pub mod signal;
pub mod synth;

pub use classifier::{classify, score, train_bank, BankConfig, HmmBank, ScoreVector};
pub use error::{Error, Result};
pub use gmm::{gmm_fit, GaussianMixture, GmmOptions};
pub use hmm::{baum_welch, forward_log_likelihood, viterbi, GestureHmm};
pub use model_file::ModelFile;
pub use seqmodel::{decode_session, fit_sequence_model, SequenceModel};
pub use signal::{FeatureSequence, FeatureVector, GestureLabel, GestureSegment, SensorSample, SensorSeries};
pub use synth::{generate_corpus, SynthConfig};
