//! Session recordings, causal Gaussian smoothing, windowed features and
//! z-score normalization.

mod import;
mod io;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use import::{import_dataset, AnnotationLayout, ImportAdapter, ImportSummary, SeriesLayout};
pub use io::{
    load_session, parse_segments, parse_series, read_corpus_dir, write_corpus_dir, write_segments,
    write_series, CorpusMeta, SEGMENTS_SUFFIX, SERIES_SUFFIX,
};

/// Number of motion axes per sample.
pub const AXES: usize = 6;
/// Features per window: mean, standard deviation and slope for each axis.
pub const FEATURE_DIM: usize = 3 * AXES;

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 15.0;
/// Feature window length in samples (0.6 s at 15 Hz).
pub const DEFAULT_WINDOW: usize = 9;
/// Step between feature windows: a 9 sample window with 4 samples shared.
pub const DEFAULT_STEP: usize = 5;

/// Smoothing window width in seconds.
const SMOOTH_WIDTH_S: f64 = 1.0;
/// Standard deviation of the smoothing Gaussian in seconds.
const SMOOTH_SIGMA_S: f64 = 2.0 / 3.0;

/// One 6-axis wrist motion reading: accelerometer x/y/z followed by
/// gyroscope yaw/pitch/roll.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SensorSample {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl SensorSample {
    pub fn from_axes(a: [f64; AXES]) -> Self {
        SensorSample {
            x: a[0],
            y: a[1],
            z: a[2],
            yaw: a[3],
            pitch: a[4],
            roll: a[5],
        }
    }

    pub fn axes(&self) -> [f64; AXES] {
        [self.x, self.y, self.z, self.yaw, self.pitch, self.roll]
    }

    pub fn is_finite(&self) -> bool {
        self.axes().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorSeries {
    pub session_id: String,
    pub sample_rate_hz: f64,
    pub samples: Vec<SensorSample>,
}

impl SensorSeries {
    pub fn new(
        session_id: impl Into<String>,
        sample_rate_hz: f64,
        samples: Vec<SensorSample>,
    ) -> Result<Self> {
        let series = SensorSeries {
            session_id: session_id.into(),
            sample_rate_hz,
            samples,
        };
        series.validate()?;
        Ok(series)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::invalid(format!(
                "session {}: sample rate must be positive, got {}",
                self.session_id, self.sample_rate_hz
            )));
        }
        if self.samples.is_empty() {
            return Err(Error::invalid(format!(
                "session {} has no samples",
                self.session_id
            )));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!(
                "session {}: sample {i} is not finite",
                self.session_id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Gesture types in canonical order. The order is used for tie-breaking,
/// score vectors and serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GestureLabel {
    Rest,
    Utensiling,
    Bite,
    Drink,
    Other,
}

impl GestureLabel {
    pub const COUNT: usize = 5;
    pub const ALL: [GestureLabel; 5] = [
        GestureLabel::Rest,
        GestureLabel::Utensiling,
        GestureLabel::Bite,
        GestureLabel::Drink,
        GestureLabel::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn token(self) -> &'static str {
        match self {
            GestureLabel::Rest => "rest",
            GestureLabel::Utensiling => "utensiling",
            GestureLabel::Bite => "bite",
            GestureLabel::Drink => "drink",
            GestureLabel::Other => "other",
        }
    }

    /// Single-letter code (R, U, B, D, O).
    pub fn code(self) -> char {
        match self {
            GestureLabel::Rest => 'R',
            GestureLabel::Utensiling => 'U',
            GestureLabel::Bite => 'B',
            GestureLabel::Drink => 'D',
            GestureLabel::Other => 'O',
        }
    }
}

impl fmt::Display for GestureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for GestureLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.token() == s)
            .ok_or_else(|| Error::invalid(format!("unknown gesture label {s:?}")))
    }
}

/// A labeled half-open span `[start, end)` of sample indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GestureSegment {
    pub start: usize,
    pub end: usize,
    pub label: GestureLabel,
}

impl GestureSegment {
    pub fn new(start: usize, end: usize, label: GestureLabel) -> Self {
        GestureSegment { start, end, label }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Checks bounds, ordering and non-overlap of one session's segments.
pub fn validate_segments(segments: &[GestureSegment], series_len: usize) -> Result<()> {
    let mut prev_end = 0;
    for (i, seg) in segments.iter().enumerate() {
        if seg.end < seg.start {
            return Err(Error::invalid(format!(
                "segment {i} [{}, {}): end before start",
                seg.start, seg.end
            )));
        }
        if seg.end == seg.start {
            return Err(Error::invalid(format!(
                "segment {i} [{}, {}) is empty",
                seg.start, seg.end
            )));
        }
        if seg.end > series_len {
            return Err(Error::invalid(format!(
                "segment {i} [{}, {}) exceeds series length {series_len}",
                seg.start, seg.end
            )));
        }
        if i > 0 && seg.start < prev_end {
            return Err(Error::invalid(format!(
                "segment {i} [{}, {}) overlaps or precedes the previous segment ending at {prev_end}",
                seg.start, seg.end
            )));
        }
        prev_end = seg.end;
    }
    Ok(())
}

/// Window features laid out as `[6 means | 6 standard deviations | 6 slopes]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn mean(&self, axis: usize) -> f64 {
        self.0[axis]
    }

    pub fn std(&self, axis: usize) -> f64 {
        self.0[AXES + axis]
    }

    pub fn slope(&self, axis: usize) -> f64 {
        self.0[2 * AXES + axis]
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub label: Option<GestureLabel>,
    pub windows: Vec<FeatureVector>,
}

impl AsRef<[FeatureVector]> for FeatureSequence {
    fn as_ref(&self) -> &[FeatureVector] {
        &self.windows
    }
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

fn raw_smoothing_weights(sample_rate_hz: f64) -> Vec<f64> {
    let width = ((SMOOTH_WIDTH_S * sample_rate_hz).round() as usize).max(1);
    let sigma = SMOOTH_SIGMA_S * sample_rate_hz;
    (0..width)
        .map(|lag| {
            let lag = lag as f64;
            (-lag * lag / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

/// Normalized causal smoothing weights for lags `0..W`, lag 0 being the
/// current sample.
pub fn smoothing_weights(sample_rate_hz: f64) -> Vec<f64> {
    let raw = raw_smoothing_weights(sample_rate_hz);
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Causal Gaussian-weighted moving average applied per axis. Near the
/// start of the session the window is truncated and renormalized.
pub fn gaussian_smooth(series: &SensorSeries) -> Result<SensorSeries> {
    series.validate()?;
    let weights = raw_smoothing_weights(series.sample_rate_hz);
    let samples = &series.samples;
    let smoothed = (0..samples.len())
        .map(|t| {
            let avail = weights.len().min(t + 1);
            let norm: f64 = weights[..avail].iter().sum();
            let mut acc = [0.0; AXES];
            for (lag, w) in weights[..avail].iter().enumerate() {
                let s = samples[t - lag].axes();
                for (a, v) in acc.iter_mut().zip(s) {
                    *a += w * v;
                }
            }
            for a in acc.iter_mut() {
                *a /= norm;
            }
            SensorSample::from_axes(acc)
        })
        .collect();
    Ok(SensorSeries {
        session_id: series.session_id.clone(),
        sample_rate_hz: series.sample_rate_hz,
        samples: smoothed,
    })
}

/// Number of windows `extract_features` emits for a segment of `len`
/// samples.
pub fn window_count(len: usize, w1: usize, w2: usize) -> usize {
    if len < w1 {
        1
    } else {
        1 + (len - w1) / w2
    }
}

fn window_features(window: &[SensorSample]) -> FeatureVector {
    let n = window.len();
    let mut out = [0.0; FEATURE_DIM];
    for axis in 0..AXES {
        let values = window.iter().map(|s| s.axes()[axis]);
        let mean = values.clone().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let first = window[0].axes()[axis];
        let last = window[n - 1].axes()[axis];
        out[axis] = mean;
        out[AXES + axis] = std;
        out[2 * AXES + axis] = (last - first) / n as f64;
    }
    FeatureVector(out)
}

/// Sliding-window mean, standard deviation and slope over one gesture
/// segment of an already smoothed series.
pub fn extract_features(
    series: &SensorSeries,
    segment: &GestureSegment,
    w1: usize,
    w2: usize,
) -> Result<FeatureSequence> {
    if w1 < 2 {
        return Err(Error::invalid(format!("window length must be >= 2, got {w1}")));
    }
    if w2 == 0 || w2 > w1 {
        return Err(Error::invalid(format!(
            "window step must be in 1..={w1}, got {w2}"
        )));
    }
    if segment.is_empty() {
        return Err(Error::invalid(format!(
            "empty segment [{}, {})",
            segment.start, segment.end
        )));
    }
    if segment.end > series.len() {
        return Err(Error::invalid(format!(
            "segment [{}, {}) exceeds series length {}",
            segment.start,
            segment.end,
            series.len()
        )));
    }
    let span = &series.samples[segment.start..segment.end];
    let windows = if span.len() < w1 {
        vec![window_features(span)]
    } else {
        (0..window_count(span.len(), w1, w2))
            .map(|k| window_features(&span[k * w2..k * w2 + w1]))
            .collect()
    };
    Ok(FeatureSequence {
        label: Some(segment.label),
        windows,
    })
}

/// Per-feature mean and sample standard deviation of the training windows.
/// Stored deviations are raw; zeros are replaced by 1 when applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreStats {
    pub mean: [f64; FEATURE_DIM],
    pub std: [f64; FEATURE_DIM],
}

impl ZScoreStats {
    pub fn identity() -> Self {
        ZScoreStats {
            mean: [0.0; FEATURE_DIM],
            std: [1.0; FEATURE_DIM],
        }
    }

    fn effective_std(&self, f: usize) -> f64 {
        if self.std[f] == 0.0 {
            1.0
        } else {
            self.std[f]
        }
    }

    pub fn apply_vector(&self, v: &FeatureVector) -> FeatureVector {
        let mut out = v.0;
        for (f, x) in out.iter_mut().enumerate() {
            *x = (*x - self.mean[f]) / self.effective_std(f);
        }
        FeatureVector(out)
    }

    pub fn invert_vector(&self, v: &FeatureVector) -> FeatureVector {
        let mut out = v.0;
        for (f, x) in out.iter_mut().enumerate() {
            *x = *x * self.effective_std(f) + self.mean[f];
        }
        FeatureVector(out)
    }
}

pub fn fit_zscore<'a, I>(training_windows: I) -> Result<ZScoreStats>
where
    I: IntoIterator<Item = &'a FeatureVector>,
{
    let windows: Vec<&FeatureVector> = training_windows.into_iter().collect();
    if windows.len() < 2 {
        return Err(Error::invalid(format!(
            "z-score needs at least 2 training windows, got {}",
            windows.len()
        )));
    }
    let n = windows.len() as f64;
    let mut mean = [0.0; FEATURE_DIM];
    for w in &windows {
        for (m, v) in mean.iter_mut().zip(w.0) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut std = [0.0; FEATURE_DIM];
    for w in &windows {
        for f in 0..FEATURE_DIM {
            std[f] += (w.0[f] - mean[f]).powi(2);
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / (n - 1.0)).sqrt());
    Ok(ZScoreStats { mean, std })
}

pub fn apply_zscore(stats: &ZScoreStats, sequence: &FeatureSequence) -> FeatureSequence {
    FeatureSequence {
        label: sequence.label,
        windows: sequence
            .windows
            .iter()
            .map(|w| stats.apply_vector(w))
            .collect(),
    }
}
