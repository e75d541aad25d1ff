use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::signal::GestureLabel;

use super::Experiment;

const LABELS: usize = GestureLabel::COUNT;

pub const RAW_HEADER: [&str; 16] = [
    "experiment",
    "states",
    "mixtures",
    "train_per_class",
    "order",
    "fold",
    "repetition",
    "seed",
    "test_gestures",
    "correct",
    "accuracy",
    "acc_rest",
    "acc_utensiling",
    "acc_bite",
    "acc_drink",
    "acc_other",
];

pub const SUMMARY_HEADER: [&str; 16] = [
    "experiment",
    "states",
    "mixtures",
    "train_per_class",
    "order",
    "cells",
    "test_gestures",
    "correct",
    "accuracy_mean",
    "accuracy_std",
    "accuracy_pooled",
    "acc_rest",
    "acc_utensiling",
    "acc_bite",
    "acc_drink",
    "acc_other",
];

pub const TIMING_HEADER: [&str; 8] = [
    "experiment",
    "states",
    "mixtures",
    "train_per_class",
    "order",
    "fold",
    "repetition",
    "wall_seconds",
];

pub const PREDICTION_HEADER: [&str; 11] = [
    "experiment",
    "states",
    "mixtures",
    "train_per_class",
    "order",
    "fold",
    "repetition",
    "session",
    "position",
    "true_label",
    "predicted",
];

/// One classified test gesture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub session: String,
    pub position: usize,
    pub truth: GestureLabel,
    pub predicted: GestureLabel,
}

/// Correct and total counts, overall and per true label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
    pub per_label: [(usize, usize); LABELS],
}

impl Tally {
    pub fn from_predictions<'a, I: IntoIterator<Item = &'a Prediction>>(predictions: I) -> Self {
        let mut t = Tally::default();
        for p in predictions {
            let hit = usize::from(p.truth == p.predicted);
            t.correct += hit;
            t.total += 1;
            let slot = &mut t.per_label[p.truth.index()];
            slot.0 += hit;
            slot.1 += 1;
        }
        t
    }

    pub fn add(&mut self, other: &Tally) {
        self.correct += other.correct;
        self.total += other.total;
        for (a, b) in self.per_label.iter_mut().zip(&other.per_label) {
            a.0 += b.0;
            a.1 += b.1;
        }
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.correct, self.total)
    }

    pub fn label_accuracy(&self, label: GestureLabel) -> f64 {
        let (c, n) = self.per_label[label.index()];
        ratio(c, n)
    }
}

fn ratio(c: usize, n: usize) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        c as f64 / n as f64
    }
}

/// Parameters identifying a cell. Fields that do not apply to an
/// experiment are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellKey {
    pub states: usize,
    pub mixtures: usize,
    pub train_per_class: Option<usize>,
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub key: CellKey,
    pub fold: Option<usize>,
    pub repetition: Option<usize>,
    pub seed: u64,
    pub predictions: Vec<Prediction>,
    pub wall_seconds: f64,
}

impl ResultRow {
    pub fn tally(&self) -> Tally {
        Tally::from_predictions(&self.predictions)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub key: CellKey,
    pub cells: usize,
    pub tally: Tally,
    pub accuracy_mean: f64,
    /// Sample standard deviation across cells; NaN for a single cell.
    pub accuracy_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub experiment: Experiment,
    pub rows: Vec<ResultRow>,
}

/// Paths written by [`ExperimentResult::write`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrittenTables {
    pub raw: PathBuf,
    pub summary: PathBuf,
    pub timing: PathBuf,
    pub predictions: Option<PathBuf>,
}

fn float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

fn opt(v: Option<usize>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn key_fields(exp: Experiment, k: &CellKey) -> Vec<String> {
    vec![
        exp.id().to_string(),
        k.states.to_string(),
        k.mixtures.to_string(),
        opt(k.train_per_class),
        k.order.to_string(),
    ]
}

fn to_csv<const H: usize>(header: [&str; H], rows: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

impl ExperimentResult {
    /// Aggregates rows sharing a cell key, in order of first appearance.
    pub fn summarize(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<CellKey> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&r.key) {
                keys.push(r.key);
            }
        }
        keys.into_iter()
            .map(|key| {
                let group: Vec<&ResultRow> = self.rows.iter().filter(|r| r.key == key).collect();
                let mut tally = Tally::default();
                let accs: Vec<f64> = group
                    .iter()
                    .map(|r| {
                        let t = r.tally();
                        tally.add(&t);
                        t.accuracy()
                    })
                    .collect();
                let n = accs.len() as f64;
                let mean = accs.iter().sum::<f64>() / n;
                let std = if accs.len() > 1 {
                    (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    f64::NAN
                };
                SummaryRow {
                    key,
                    cells: group.len(),
                    tally,
                    accuracy_mean: mean,
                    accuracy_std: std,
                }
            })
            .collect()
    }

    pub fn raw_csv(&self) -> Result<String> {
        let exp = self.experiment;
        to_csv(
            RAW_HEADER,
            self.rows.iter().map(|r| {
                let t = r.tally();
                let mut f = key_fields(exp, &r.key);
                f.extend([
                    opt(r.fold),
                    opt(r.repetition),
                    r.seed.to_string(),
                    t.total.to_string(),
                    t.correct.to_string(),
                    float(t.accuracy()),
                ]);
                f.extend(GestureLabel::ALL.map(|l| float(t.label_accuracy(l))));
                f
            }),
        )
    }

    pub fn summary_csv(&self) -> Result<String> {
        let exp = self.experiment;
        to_csv(
            SUMMARY_HEADER,
            self.summarize().iter().map(|s| {
                let mut f = key_fields(exp, &s.key);
                f.extend([
                    s.cells.to_string(),
                    s.tally.total.to_string(),
                    s.tally.correct.to_string(),
                    float(s.accuracy_mean),
                    float(s.accuracy_std),
                    float(s.tally.accuracy()),
                ]);
                f.extend(GestureLabel::ALL.map(|l| float(s.tally.label_accuracy(l))));
                f
            }),
        )
    }

    pub fn timing_csv(&self) -> Result<String> {
        let exp = self.experiment;
        to_csv(
            TIMING_HEADER,
            self.rows.iter().map(|r| {
                let mut f = key_fields(exp, &r.key);
                f.extend([opt(r.fold), opt(r.repetition), format!("{:.3}", r.wall_seconds)]);
                f
            }),
        )
    }

    pub fn predictions_csv(&self) -> Result<String> {
        let exp = self.experiment;
        to_csv(
            PREDICTION_HEADER,
            self.rows.iter().flat_map(|r| {
                r.predictions.iter().map(move |p| {
                    let mut f = key_fields(exp, &r.key);
                    f.extend([
                        opt(r.fold),
                        opt(r.repetition),
                        p.session.clone(),
                        p.position.to_string(),
                        p.truth.to_string(),
                        p.predicted.to_string(),
                    ]);
                    f
                })
            }),
        )
    }

    /// Writes `<id>_raw.csv`, `<id>_summary.csv`, `<id>_timing.csv` and,
    /// on request, `<id>_predictions.csv` into `dir`.
    pub fn write(&self, dir: &Path, with_predictions: bool) -> Result<WrittenTables> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let id = self.experiment.id();
        let put = |suffix: &str, text: String| -> Result<PathBuf> {
            let path = dir.join(format!("{id}_{suffix}.csv"));
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        };
        Ok(WrittenTables {
            raw: put("raw", self.raw_csv()?)?,
            summary: put("summary", self.summary_csv()?)?,
            timing: put("timing", self.timing_csv()?)?,
            predictions: if with_predictions {
                Some(put("predictions", self.predictions_csv()?)?)
            } else {
                None
            },
        })
    }
}
