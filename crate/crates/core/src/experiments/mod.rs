//! Experiment protocols over a corpus: the (N, M) complexity grid, the
//! training-size curve, context-order comparison and session-level
//! cross-validation. Each produces a raw table with one row per cell and
//! repetition or fold, plus an aggregated table.
//!
//! Every cell derives its own seeds from the base seed and its coordinates,
//! so tables do not depend on the worker count or scheduling.

mod config;
mod table;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::classifier::{score, train_bank, BankConfig, HmmBank, ScoreVector};
use crate::error::{Error, Result};
use crate::math::derive_seed;
use crate::seqmodel::{decode_session, fit_sequence_model};
use crate::signal::{
    extract_features, gaussian_smooth, read_corpus_dir, FeatureSequence, GestureLabel, GestureSegment, SensorSeries,
};
use crate::synth::generate_corpus;

pub use config::{
    ComplexityGrid, DataSource, ExperimentConfig, FeatureOptions, FoldProtocol, SizeSweep, TrainingOptions,
};
pub use table::{
    CellKey, ExperimentResult, Prediction, ResultRow, SummaryRow, Tally, WrittenTables, PREDICTION_HEADER,
    RAW_HEADER, SUMMARY_HEADER, TIMING_HEADER,
};

const LABELS: usize = GestureLabel::COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    Complexity,
    TrainingSize,
    Orders,
    Crossval,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [
        Experiment::Complexity,
        Experiment::TrainingSize,
        Experiment::Orders,
        Experiment::Crossval,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Experiment::Complexity => "complexity",
            Experiment::TrainingSize => "training_size",
            Experiment::Orders => "orders",
            Experiment::Crossval => "crossval",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.id() == s)
            .ok_or_else(|| Error::invalid(format!("unknown experiment {s:?}")))
    }
}

/// One annotated gesture with its raw (not yet normalized) features.
#[derive(Debug, Clone, PartialEq)]
pub struct Gesture {
    pub session: usize,
    pub position: usize,
    pub label: GestureLabel,
    pub features: FeatureSequence,
}

/// Gestures of a corpus in session order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub session_ids: Vec<String>,
    pub gestures: Vec<Gesture>,
    /// Gesture indices of each session in temporal order.
    pub sessions: Vec<Vec<usize>>,
}

impl Dataset {
    /// Smooths each session and extracts features for every segment.
    pub fn from_corpus(corpus: &[(SensorSeries, Vec<GestureSegment>)], features: &FeatureOptions) -> Result<Self> {
        let per_session: Vec<Vec<FeatureSequence>> = corpus
            .par_iter()
            .map(|(series, segments)| {
                let smooth = gaussian_smooth(series)?;
                segments
                    .iter()
                    .map(|seg| extract_features(&smooth, seg, features.window, features.step))
                    .collect()
            })
            .collect::<Result<_>>()?;
        let mut data = Dataset {
            session_ids: corpus.iter().map(|(s, _)| s.session_id.clone()).collect(),
            gestures: Vec::new(),
            sessions: Vec::with_capacity(corpus.len()),
        };
        for (s, ((_, segments), feats)) in corpus.iter().zip(per_session).enumerate() {
            let mut idx = Vec::with_capacity(segments.len());
            for (position, (seg, features)) in segments.iter().zip(feats).enumerate() {
                idx.push(data.gestures.len());
                data.gestures.push(Gesture {
                    session: s,
                    position,
                    label: seg.label,
                    features,
                });
            }
            data.sessions.push(idx);
        }
        Ok(data)
    }

    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let corpus = match &config.data {
            DataSource::Corpus { dir, sample_rate_hz } => read_corpus_dir(dir, *sample_rate_hz)?,
            DataSource::Synth { sessions, synth } => generate_corpus(synth, *sessions)?,
        };
        Dataset::from_corpus(&corpus, &config.features)
    }

    pub fn label_counts(&self) -> [usize; LABELS] {
        let mut c = [0; LABELS];
        for g in &self.gestures {
            c[g.label.index()] += 1;
        }
        c
    }

    fn by_label(&self) -> [Vec<usize>; LABELS] {
        let mut out: [Vec<usize>; LABELS] = Default::default();
        for (i, g) in self.gestures.iter().enumerate() {
            out[g.label.index()].push(i);
        }
        out
    }

    fn prediction(&self, gesture: usize, predicted: GestureLabel) -> Prediction {
        let g = &self.gestures[gesture];
        Prediction {
            session: self.session_ids[g.session].clone(),
            position: g.position,
            truth: g.label,
            predicted,
        }
    }
}

fn format_counts(counts: &[usize; LABELS]) -> String {
    GestureLabel::ALL
        .iter()
        .map(|l| format!("{l}={}", counts[l.index()]))
        .collect::<Vec<_>>()
        .join(", ")
}

fn require_per_label(data: &Dataset, needed: usize, what: &str) -> Result<()> {
    let counts = data.label_counts();
    if counts.iter().any(|c| *c < needed) {
        return Err(Error::invalid(format!(
            "{what} needs {needed} gestures per label, corpus has {}",
            format_counts(&counts)
        )));
    }
    Ok(())
}

/// Disjoint seeded draws of `sizes[k]` gestures per label, in that order.
fn sample_per_label(pools: &[Vec<usize>; LABELS], sizes: &[usize], seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vec::new(); sizes.len()];
    for pool in pools {
        let mut p = pool.clone();
        p.shuffle(&mut rng);
        let mut rest = &p[..];
        for (slot, &n) in out.iter_mut().zip(sizes) {
            let (take, tail) = rest.split_at(n);
            slot.extend_from_slice(take);
            rest = tail;
        }
    }
    out
}

/// Session-level fold assignment: a seeded permutation of sessions dealt
/// round-robin, so fold sizes differ by at most one.
pub fn assign_folds(sessions: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::invalid(format!("fold count must be >= 2, got {folds}")));
    }
    if sessions < folds {
        return Err(Error::invalid(format!("{sessions} sessions cannot fill {folds} folds")));
    }
    let mut order: Vec<usize> = (0..sessions).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; sessions];
    for (k, s) in order.into_iter().enumerate() {
        fold[s] = k % folds;
    }
    Ok(fold)
}

fn bank_config(config: &ExperimentConfig, states: usize, mixtures: usize, seed: u64) -> BankConfig {
    BankConfig {
        window: config.features.window,
        step: config.features.step,
        states,
        mixtures,
        seed,
        tol: config.training.tol,
        max_iter: config.training.max_iter,
        normalize_scores: config.training.normalize_scores,
    }
}

fn train_on(data: &Dataset, train: &[usize], config: &BankConfig) -> Result<HmmBank> {
    train_bank(
        train.iter().map(|&i| (&data.gestures[i].features, data.gestures[i].label)),
        config,
    )
}

fn classify_all(data: &Dataset, bank: &HmmBank, test: &[usize]) -> Result<Vec<Prediction>> {
    test.iter()
        .map(|&i| Ok(data.prediction(i, score(bank, &data.gestures[i].features)?.best())))
        .collect()
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

/// Runs `experiment` on an already loaded dataset with the configured
/// worker count.
pub fn run(experiment: Experiment, config: &ExperimentConfig, data: &Dataset) -> Result<ExperimentResult> {
    config.validate()?;
    let pool = thread_pool(config.workers)?;
    let rows = pool.install(|| match experiment {
        Experiment::Complexity => complexity_rows(config, data),
        Experiment::TrainingSize => training_size_rows(config, data),
        Experiment::Orders => fold_rows(Experiment::Orders, &config.orders, config, data),
        Experiment::Crossval => fold_rows(Experiment::Crossval, &config.crossval, config, data),
    })?;
    Ok(ExperimentResult { experiment, rows })
}

pub fn sweep_complexity(config: &ExperimentConfig, data: &Dataset) -> Result<ExperimentResult> {
    run(Experiment::Complexity, config, data)
}

pub fn sweep_training_size(config: &ExperimentConfig, data: &Dataset) -> Result<ExperimentResult> {
    run(Experiment::TrainingSize, config, data)
}

pub fn compare_orders(config: &ExperimentConfig, data: &Dataset) -> Result<ExperimentResult> {
    run(Experiment::Orders, config, data)
}

pub fn crossval(config: &ExperimentConfig, data: &Dataset) -> Result<ExperimentResult> {
    run(Experiment::Crossval, config, data)
}

fn complexity_rows(config: &ExperimentConfig, data: &Dataset) -> Result<Vec<ResultRow>> {
    let g = &config.complexity;
    require_per_label(data, g.train_per_class + g.test_per_class, "complexity sweep")?;
    let pools = data.by_label();
    let tag = Experiment::Complexity.tag();
    let mut jobs = Vec::new();
    for states in g.states_min..=g.states_max {
        for mixtures in g.mixtures_min..=g.mixtures_max {
            for rep in 0..g.repetitions {
                jobs.push((states, mixtures, rep));
            }
        }
    }
    jobs.par_iter()
        .map(|&(states, mixtures, rep)| {
            let started = Instant::now();
            let coords = [tag, states as u64, mixtures as u64, rep as u64];
            let seed = derive_seed(config.base_seed, &coords);
            let split = sample_per_label(&pools, &[g.train_per_class, g.test_per_class], derive_seed(seed, &[0]));
            let bank = train_on(data, &split[0], &bank_config(config, states, mixtures, derive_seed(seed, &[1])))?;
            let predictions = classify_all(data, &bank, &split[1])?;
            Ok(ResultRow {
                key: CellKey {
                    states,
                    mixtures,
                    train_per_class: Some(g.train_per_class),
                    order: 0,
                },
                fold: None,
                repetition: Some(rep),
                seed,
                predictions,
                wall_seconds: started.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

fn training_size_rows(config: &ExperimentConfig, data: &Dataset) -> Result<Vec<ResultRow>> {
    let s = &config.training_size;
    let largest = *s.sizes.iter().max().expect("validated non-empty");
    require_per_label(data, largest + s.test_per_class, "training-size sweep")?;
    let tag = Experiment::TrainingSize.tag();
    // one held-out test set shared by every size and repetition
    let split_seed = derive_seed(config.base_seed, &[tag]);
    let all = data.by_label();
    let test = sample_per_label(&all, &[s.test_per_class], split_seed).remove(0);
    let mut pools: [Vec<usize>; LABELS] = Default::default();
    for (label, pool) in all.iter().enumerate() {
        pools[label] = pool.iter().copied().filter(|i| !test.contains(i)).collect();
    }
    let jobs: Vec<(usize, usize)> = s
        .sizes
        .iter()
        .flat_map(|&n| (0..s.repetitions).map(move |r| (n, r)))
        .collect();
    jobs.par_iter()
        .map(|&(size, rep)| {
            let started = Instant::now();
            let seed = derive_seed(config.base_seed, &[tag, size as u64, rep as u64]);
            let train = sample_per_label(&pools, &[size], derive_seed(seed, &[0])).remove(0);
            let bank = train_on(data, &train, &bank_config(config, s.states, s.mixtures, derive_seed(seed, &[1])))?;
            let predictions = classify_all(data, &bank, &test)?;
            Ok(ResultRow {
                key: CellKey {
                    states: s.states,
                    mixtures: s.mixtures,
                    train_per_class: Some(size),
                    order: 0,
                },
                fold: None,
                repetition: Some(rep),
                seed,
                predictions,
                wall_seconds: started.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

fn fold_rows(
    experiment: Experiment,
    protocol: &FoldProtocol,
    config: &ExperimentConfig,
    data: &Dataset,
) -> Result<Vec<ResultRow>> {
    let tag = experiment.tag();
    let fold_of = assign_folds(data.sessions.len(), protocol.folds, derive_seed(config.base_seed, &[tag]))?;
    let per_fold: Vec<Vec<ResultRow>> = (0..protocol.folds)
        .into_par_iter()
        .map(|fold| run_fold(experiment, protocol, config, data, &fold_of, fold))
        .collect::<Result<_>>()?;
    // order-major so rows of one order are adjacent
    let mut rows = Vec::new();
    for k in 0..protocol.orders.len() {
        rows.extend(per_fold.iter().map(|f| f[k].clone()));
    }
    Ok(rows)
}

fn run_fold(
    experiment: Experiment,
    protocol: &FoldProtocol,
    config: &ExperimentConfig,
    data: &Dataset,
    fold_of: &[usize],
    fold: usize,
) -> Result<Vec<ResultRow>> {
    let started = Instant::now();
    let seed = derive_seed(config.base_seed, &[experiment.tag(), fold as u64]);
    let (test_sessions, train_sessions): (Vec<usize>, Vec<usize>) =
        (0..data.sessions.len()).partition(|&s| fold_of[s] == fold);
    let train: Vec<usize> = train_sessions.iter().flat_map(|&s| data.sessions[s].iter().copied()).collect();
    let bank = train_on(
        data,
        &train,
        &bank_config(config, protocol.states, protocol.mixtures, derive_seed(seed, &[1])),
    )
    .map_err(|e| Error::invalid(format!("fold {fold}: {e}")))?;
    let session_scores = |s: usize| -> Result<Vec<ScoreVector>> {
        data.sessions[s]
            .iter()
            .map(|&i| score(&bank, &data.gestures[i].features))
            .collect()
    };
    let test_scores: Vec<Vec<ScoreVector>> = test_sessions.iter().map(|&s| session_scores(s)).collect::<Result<_>>()?;
    let needs_context = protocol.orders.iter().any(|o| *o > 0);
    let (train_labels, train_scored) = if needs_context {
        let mut labels = Vec::with_capacity(train_sessions.len());
        let mut scored = Vec::with_capacity(train.len());
        for &s in &train_sessions {
            let scores = session_scores(s)?;
            let l: Vec<GestureLabel> = data.sessions[s].iter().map(|&i| data.gestures[i].label).collect();
            scored.extend(scores.into_iter().zip(l.iter().copied()));
            labels.push(l);
        }
        (labels, scored)
    } else {
        (Vec::new(), Vec::new())
    };
    let shared = started.elapsed().as_secs_f64();

    protocol
        .orders
        .iter()
        .map(|&order| {
            let started = Instant::now();
            let mut predictions = Vec::new();
            if order == 0 {
                for (&s, scores) in test_sessions.iter().zip(&test_scores) {
                    for (&i, sv) in data.sessions[s].iter().zip(scores) {
                        predictions.push(data.prediction(i, sv.best()));
                    }
                }
            } else {
                let (model, _) = fit_sequence_model(&train_labels, &train_scored, order, derive_seed(seed, &[2, order as u64]))
                    .map_err(|e| Error::invalid(format!("fold {fold}, order {order}: {e}")))?;
                for (&s, scores) in test_sessions.iter().zip(&test_scores) {
                    let decoded = decode_session(&model, scores)?;
                    for (&i, l) in data.sessions[s].iter().zip(decoded) {
                        predictions.push(data.prediction(i, l));
                    }
                }
            }
            Ok(ResultRow {
                key: CellKey {
                    states: protocol.states,
                    mixtures: protocol.mixtures,
                    train_per_class: None,
                    order,
                },
                fold: Some(fold),
                repetition: None,
                seed,
                predictions,
                wall_seconds: shared + started.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{DurationRange, SynthConfig};

    fn synth_config(sessions: usize, gestures: usize) -> ExperimentConfig {
        let synth = SynthConfig {
            seed: 3,
            noise_std: 0.3,
            gestures_per_session: gestures,
            durations: [DurationRange { min: 15, max: 30 }; LABELS],
            ..SynthConfig::default()
        };
        let mut c = ExperimentConfig::new(DataSource::Synth { sessions, synth });
        c.base_seed = 11;
        c.workers = 2;
        c.complexity = ComplexityGrid {
            states_min: 2,
            states_max: 2,
            mixtures_min: 1,
            mixtures_max: 1,
            train_per_class: 4,
            test_per_class: 4,
            repetitions: 1,
        };
        c.training_size = SizeSweep {
            sizes: vec![3, 5],
            test_per_class: 4,
            repetitions: 2,
            states: 2,
            mixtures: 1,
        };
        c.orders = FoldProtocol {
            orders: vec![0, 1, 2],
            folds: 3,
            states: 2,
            mixtures: 1,
        };
        c.crossval = FoldProtocol {
            folds: 5,
            states: 2,
            mixtures: 1,
            ..FoldProtocol::default()
        };
        c
    }

    #[test]
    fn folds_partition_sessions() {
        let f = assign_folds(10, 5, 9).unwrap();
        for k in 0..5 {
            assert_eq!(f.iter().filter(|x| **x == k).count(), 2);
        }
        assert_eq!(f, assign_folds(10, 5, 9).unwrap());
        assert!(assign_folds(3, 5, 0).is_err());
        assert!(assign_folds(10, 1, 0).is_err());
    }

    #[test]
    fn disjoint_per_label_samples() {
        let pools: [Vec<usize>; LABELS] = std::array::from_fn(|l| (l * 100..l * 100 + 10).collect());
        let split = sample_per_label(&pools, &[6, 4], 5);
        assert_eq!(split[0].len(), 30);
        assert_eq!(split[1].len(), 20);
        assert!(split[0].iter().all(|i| !split[1].contains(i)));
        for l in 0..LABELS {
            assert_eq!(split[0].iter().filter(|i| **i / 100 == l).count(), 6);
        }
    }

    #[test]
    fn dataset_keeps_session_order() {
        let c = synth_config(3, 8);
        let data = Dataset::load(&c).unwrap();
        assert_eq!(data.sessions.len(), 3);
        assert_eq!(data.gestures.len(), 24);
        for (s, idx) in data.sessions.iter().enumerate() {
            for (p, &i) in idx.iter().enumerate() {
                assert_eq!((data.gestures[i].session, data.gestures[i].position), (s, p));
            }
        }
    }

    #[test]
    fn single_cell_grid_gives_one_summary_row() {
        let c = synth_config(4, 30);
        let data = Dataset::load(&c).unwrap();
        let r = sweep_complexity(&c, &data).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.summarize().len(), 1);
        assert_eq!(r.rows[0].predictions.len(), 20);
        let summary = r.summary_csv().unwrap();
        assert_eq!(summary.lines().count(), 2);
        assert!(summary.starts_with(&SUMMARY_HEADER.join(",")));
    }

    #[test]
    fn insufficient_gestures_report_counts() {
        let mut c = synth_config(2, 10);
        c.complexity.train_per_class = 50;
        let data = Dataset::load(&c).unwrap();
        let err = sweep_complexity(&c, &data).unwrap_err().to_string();
        assert!(err.contains("rest=") && err.contains("other="), "{err}");
    }

    #[test]
    fn training_size_reuses_one_test_set() {
        let c = synth_config(6, 30);
        let data = Dataset::load(&c).unwrap();
        let r = sweep_training_size(&c, &data).unwrap();
        assert_eq!(r.rows.len(), 4);
        let test_of = |row: &ResultRow| {
            let mut v: Vec<_> = row.predictions.iter().map(|p| (p.session.clone(), p.position)).collect();
            v.sort();
            v
        };
        assert!(r.rows.iter().all(|row| test_of(row) == test_of(&r.rows[0])));
        assert_eq!(r.summarize().len(), 2);
    }

    #[test]
    fn crossval_tests_every_gesture_once_per_order() {
        let c = synth_config(10, 12);
        let data = Dataset::load(&c).unwrap();
        let r = crossval(&c, &data).unwrap();
        assert_eq!(r.rows.len(), 10);
        for order in [0, 1] {
            let mut seen: Vec<_> = r
                .rows
                .iter()
                .filter(|row| row.key.order == order)
                .flat_map(|row| row.predictions.iter().map(|p| (p.session.clone(), p.position)))
                .collect();
            seen.sort();
            let n = seen.len();
            seen.dedup();
            assert_eq!((n, seen.len()), (120, 120));
        }
        for row in &r.rows {
            let sessions: std::collections::BTreeSet<_> = row.predictions.iter().map(|p| &p.session).collect();
            assert_eq!(sessions.len(), 2);
        }
        // pooled accuracy is the gesture-weighted mean of fold accuracies
        for s in r.summarize() {
            let rows: Vec<_> = r.rows.iter().filter(|row| row.key == s.key).collect();
            let weighted: f64 = rows.iter().map(|row| row.tally().accuracy() * row.tally().total as f64).sum::<f64>()
                / rows.iter().map(|row| row.tally().total as f64).sum::<f64>();
            assert!((weighted - s.tally.accuracy()).abs() < 1e-12);
        }
    }

    #[test]
    fn tables_identical_across_worker_counts() {
        let mut c = synth_config(6, 12);
        let data = Dataset::load(&c).unwrap();
        let a = compare_orders(&c, &data).unwrap();
        c.workers = 1;
        let b = compare_orders(&c, &data).unwrap();
        assert_eq!(a.raw_csv().unwrap(), b.raw_csv().unwrap());
        assert_eq!(a.summary_csv().unwrap(), b.summary_csv().unwrap());
        assert_eq!(a.predictions_csv().unwrap(), b.predictions_csv().unwrap());
    }

    #[test]
    fn excessive_order_rejected() {
        let mut c = synth_config(4, 5);
        c.orders.orders = vec![0, 7];
        assert!(c.validate().is_err());
        c.orders.orders = vec![1];
        c.crossval.folds = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_toml_round_trip() {
        let c = synth_config(4, 5);
        let text = c.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
        let minimal = "[data]\nkind = \"corpus\"\ndir = \"corpus\"\n";
        let m = ExperimentConfig::from_toml_str(minimal).unwrap();
        assert_eq!(m.complexity.states_max, 25);
        assert_eq!(m.training_size.sizes.first(), Some(&65));
        assert_eq!(m.orders.orders, (0..=6).collect::<Vec<_>>());
        assert!(ExperimentConfig::from_toml_str("bogus = 1\n[data]\nkind = \"corpus\"\ndir = \"x\"\n").is_err());
    }
}
