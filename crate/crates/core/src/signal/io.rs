use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{validate_segments, GestureLabel, GestureSegment, SensorSample, SensorSeries, AXES};
use crate::error::{Error, Result};

pub const SERIES_SUFFIX: &str = ".series.csv";
pub const SEGMENTS_SUFFIX: &str = ".segments.csv";
const CORPUS_META: &str = "corpus.toml";

/// Optional `corpus.toml` sidecar in a corpus directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub sample_rate_hz: f64,
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses a session file body: one `x,y,z,yaw,pitch,roll` row per sample.
/// `path` is used only for error messages.
pub fn parse_series(
    text: &str,
    path: &Path,
    session_id: &str,
    sample_rate_hz: f64,
) -> Result<SensorSeries> {
    let mut samples = Vec::new();
    for (line, row) in data_lines(text) {
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() != AXES {
            return Err(parse_error(
                path,
                line,
                format!("expected {AXES} columns, found {}", fields.len()),
            ));
        }
        let mut axes = [0.0; AXES];
        for (slot, field) in axes.iter_mut().zip(&fields) {
            *slot = field
                .parse::<f64>()
                .map_err(|_| parse_error(path, line, format!("non-numeric field {field:?}")))?;
            if !slot.is_finite() {
                return Err(parse_error(path, line, format!("non-finite field {field:?}")));
            }
        }
        samples.push(SensorSample::from_axes(axes));
    }
    SensorSeries::new(session_id, sample_rate_hz, samples)
}

/// Parses `start,end,label` rows and validates them against the series
/// length.
pub fn parse_segments(text: &str, path: &Path, series_len: usize) -> Result<Vec<GestureSegment>> {
    let mut segments = Vec::new();
    for (line, row) in data_lines(text) {
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_error(
                path,
                line,
                format!("expected 3 columns, found {}", fields.len()),
            ));
        }
        let index = |f: &str| {
            f.parse::<usize>()
                .map_err(|_| parse_error(path, line, format!("invalid sample index {f:?}")))
        };
        let start = index(fields[0])?;
        let end = index(fields[1])?;
        let label: GestureLabel = fields[2].parse().map_err(|e: Error| {
            Error::invalid(format!("{}:{line}: {e}", path.display()))
        })?;
        segments.push(GestureSegment::new(start, end, label));
    }
    validate_segments(&segments, series_len)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    Ok(segments)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn session_id_of(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.strip_suffix(SERIES_SUFFIX)
        .map(str::to_string)
        .unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
}

pub fn load_session(
    series_path: &Path,
    annotation_path: &Path,
    sample_rate_hz: f64,
) -> Result<(SensorSeries, Vec<GestureSegment>)> {
    let series = parse_series(
        &read(series_path)?,
        series_path,
        &session_id_of(series_path),
        sample_rate_hz,
    )?;
    let segments = parse_segments(&read(annotation_path)?, annotation_path, series.len())?;
    Ok((series, segments))
}

pub fn write_series(path: &Path, series: &SensorSeries) -> Result<()> {
    let mut out = String::from("# x,y,z,yaw,pitch,roll\n");
    for s in &series.samples {
        let a = s.axes();
        let _ = writeln!(out, "{},{},{},{},{},{}", a[0], a[1], a[2], a[3], a[4], a[5]);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_segments(path: &Path, segments: &[GestureSegment]) -> Result<()> {
    let mut out = String::new();
    for s in segments {
        let _ = writeln!(out, "{},{},{}", s.start, s.end, s.label);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes sessions as `<id>.series.csv` / `<id>.segments.csv` pairs plus a
/// `corpus.toml` declaring the sample rate.
pub fn write_corpus_dir(dir: &Path, sessions: &[(SensorSeries, Vec<GestureSegment>)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if let Some((first, _)) = sessions.first() {
        let meta = CorpusMeta {
            sample_rate_hz: first.sample_rate_hz,
        };
        let path = dir.join(CORPUS_META);
        let text = toml::to_string(&meta).map_err(|e| Error::invalid(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    for (series, segments) in sessions {
        write_series(&dir.join(format!("{}{SERIES_SUFFIX}", series.session_id)), series)?;
        write_segments(
            &dir.join(format!("{}{SEGMENTS_SUFFIX}", series.session_id)),
            segments,
        )?;
    }
    Ok(())
}

/// Loads every session pair from a corpus directory, sorted by session id.
/// The sample rate comes from `corpus.toml` when present, else
/// `default_rate_hz`.
pub fn read_corpus_dir(
    dir: &Path,
    default_rate_hz: f64,
) -> Result<Vec<(SensorSeries, Vec<GestureSegment>)>> {
    let meta_path = dir.join(CORPUS_META);
    let rate = if meta_path.exists() {
        toml::from_str::<CorpusMeta>(&read(&meta_path)?)?.sample_rate_hz
    } else {
        default_rate_hz
    };
    let mut series_files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .is_some_and(|n| n.to_string_lossy().ends_with(SERIES_SUFFIX))
        })
        .collect();
    series_files.sort();
    if series_files.is_empty() {
        return Err(Error::invalid(format!(
            "no *{SERIES_SUFFIX} files in {}",
            dir.display()
        )));
    }
    series_files
        .iter()
        .map(|p| {
            let id = session_id_of(p);
            load_session(p, &dir.join(format!("{id}{SEGMENTS_SUFFIX}")), rate)
        })
        .collect()
}
