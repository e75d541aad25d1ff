//! Configuration-driven conversion of an external dataset layout into the
//! session/segment file pair used by the rest of the toolkit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::{write_corpus_dir, SEGMENTS_SUFFIX, SERIES_SUFFIX};
use super::{validate_segments, GestureLabel, GestureSegment, SensorSample, SensorSeries, AXES};
use crate::error::{Error, Result};

/// How to read one recording file. An empty delimiter splits on whitespace.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesLayout {
    pub suffix: String,
    #[serde(default)]
    pub delimiter: String,
    #[serde(default)]
    pub skip_lines: usize,
    #[serde(default = "default_comment")]
    pub comment_prefix: String,
    /// Source column for x, y, z, yaw, pitch, roll.
    pub columns: [usize; AXES],
    #[serde(default = "unit_scale")]
    pub scale: [f64; AXES],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationLayout {
    pub suffix: String,
    #[serde(default)]
    pub delimiter: String,
    #[serde(default)]
    pub skip_lines: usize,
    #[serde(default = "default_comment")]
    pub comment_prefix: String,
    pub start_column: usize,
    pub end_column: usize,
    pub label_column: usize,
    /// 1 when source indices count from one.
    #[serde(default)]
    pub index_base: usize,
    #[serde(default)]
    pub end_inclusive: bool,
    /// Source label token to gesture label.
    pub labels: BTreeMap<String, GestureLabel>,
    /// Drop rows whose token is not in `labels` instead of failing.
    #[serde(default)]
    pub ignore_unmapped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportAdapter {
    pub sample_rate_hz: f64,
    pub series: SeriesLayout,
    pub annotations: AnnotationLayout,
}

fn default_comment() -> String {
    "#".into()
}

fn unit_scale() -> [f64; AXES] {
    [1.0; AXES]
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportSummary {
    pub sessions: usize,
    pub segments: usize,
    pub skipped_rows: usize,
}

impl ImportAdapter {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

fn split<'a>(line: &'a str, delimiter: &str) -> Vec<&'a str> {
    if delimiter.is_empty() {
        line.split_whitespace().collect()
    } else {
        line.split(delimiter).map(str::trim).collect()
    }
}

fn rows<'a>(
    text: &'a str,
    skip: usize,
    comment: &'a str,
) -> impl Iterator<Item = (usize, &'a str)> + 'a {
    text.lines()
        .enumerate()
        .skip(skip)
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(move |(_, l)| !l.is_empty() && (comment.is_empty() || !l.starts_with(comment)))
}

fn field<'a>(fields: &[&'a str], col: usize, path: &Path, line: usize) -> Result<&'a str> {
    fields.get(col).copied().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("missing column {col} (row has {})", fields.len()),
    })
}

fn parse_num<T: std::str::FromStr>(s: &str, path: &Path, line: usize) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("non-numeric field {s:?}"),
    })
}

impl SeriesLayout {
    fn read(&self, path: &Path, id: &str, rate: f64) -> Result<SensorSeries> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut samples = Vec::new();
        for (line, row) in rows(&text, self.skip_lines, &self.comment_prefix) {
            let fields = split(row, &self.delimiter);
            let mut axes = [0.0; AXES];
            for (a, slot) in axes.iter_mut().enumerate() {
                let v: f64 = parse_num(field(&fields, self.columns[a], path, line)?, path, line)?;
                *slot = v * self.scale[a];
            }
            samples.push(SensorSample::from_axes(axes));
        }
        SensorSeries::new(id, rate, samples)
    }
}

impl AnnotationLayout {
    fn read(&self, path: &Path, series_len: usize) -> Result<(Vec<GestureSegment>, usize)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut segments = Vec::new();
        let mut skipped = 0;
        for (line, row) in rows(&text, self.skip_lines, &self.comment_prefix) {
            let fields = split(row, &self.delimiter);
            let token = field(&fields, self.label_column, path, line)?;
            let Some(&label) = self.labels.get(token) else {
                if self.ignore_unmapped {
                    skipped += 1;
                    continue;
                }
                return Err(Error::invalid(format!(
                    "{}:{line}: unmapped label token {token:?}",
                    path.display()
                )));
            };
            let raw_start: usize = parse_num(field(&fields, self.start_column, path, line)?, path, line)?;
            let raw_end: usize = parse_num(field(&fields, self.end_column, path, line)?, path, line)?;
            let start = raw_start.checked_sub(self.index_base).ok_or_else(|| {
                Error::invalid(format!("{}:{line}: index below base", path.display()))
            })?;
            let end = (raw_end + usize::from(self.end_inclusive))
                .checked_sub(self.index_base)
                .ok_or_else(|| Error::invalid(format!("{}:{line}: index below base", path.display())))?;
            segments.push(GestureSegment::new(start, end, label));
        }
        segments.sort_by_key(|s| (s.start, s.end));
        validate_segments(&segments, series_len)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        Ok((segments, skipped))
    }
}

/// Converts every recording under `input` that has a matching annotation
/// file and writes the result as a corpus directory at `output`.
pub fn import_dataset(adapter: &ImportAdapter, input: &Path, output: &Path) -> Result<ImportSummary> {
    if adapter.series.suffix == SERIES_SUFFIX && input == output {
        return Err(Error::invalid("import would overwrite its own input"));
    }
    let mut recordings: Vec<(String, PathBuf)> = fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let name = p.file_name()?.to_string_lossy().into_owned();
            let id = name.strip_suffix(&adapter.series.suffix)?.to_string();
            (!id.is_empty()).then_some((id, p))
        })
        .collect();
    recordings.sort();

    let mut summary = ImportSummary::default();
    let mut sessions = Vec::new();
    for (id, series_path) in recordings {
        let ann_path = input.join(format!("{id}{}", adapter.annotations.suffix));
        if ann_path == series_path || !ann_path.exists() {
            continue;
        }
        let series = adapter.series.read(&series_path, &id, adapter.sample_rate_hz)?;
        let (segments, skipped) = adapter.annotations.read(&ann_path, series.len())?;
        summary.sessions += 1;
        summary.segments += segments.len();
        summary.skipped_rows += skipped;
        sessions.push((series, segments));
    }
    if sessions.is_empty() {
        return Err(Error::invalid(format!(
            "no recording/annotation pairs found in {} (suffixes {:?}, {:?})",
            input.display(),
            adapter.series.suffix,
            adapter.annotations.suffix
        )));
    }
    debug_assert!(SEGMENTS_SUFFIX != SERIES_SUFFIX);
    write_corpus_dir(output, &sessions)?;
    Ok(summary)
}
