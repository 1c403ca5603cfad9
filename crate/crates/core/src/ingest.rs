//! Metric loading, missing-value handling, feature selection and
//! min-max normalization on a uniform 1-minute grid.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Missing cells are encoded as NaN until `handle_missing` runs.
pub const MISSING: f64 = f64::NAN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    /// Missing value means "nothing happened" and is replaced with zero.
    ErrorLike,
    /// Missing value indicates a monitoring gap; the whole row is dropped.
    UtilizationLike,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricColumn {
    pub name: String,
    pub category: Category,
    #[serde(default)]
    pub is_qos: bool,
}

/// Schema config file: declares every metric column plus an allowlist of
/// columns that feature selection must keep regardless of statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schema {
    pub metrics: Vec<MetricColumn>,
    #[serde(default)]
    pub allowlist: Vec<String>,
}

impl Schema {
    pub fn load(path: &Path) -> Result<Schema> {
        let text = std::fs::read_to_string(path)?;
        let schema: Schema = serde_json::from_str(&text)?;
        let mut seen = std::collections::BTreeSet::new();
        for m in &schema.metrics {
            if !seen.insert(m.name.clone()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate metric `{}` in schema",
                    m.name
                )));
            }
        }
        Ok(schema)
    }

    pub fn qos_names(&self) -> Vec<String> {
        self.metrics
            .iter()
            .filter(|m| m.is_qos)
            .map(|m| m.name.clone())
            .collect()
    }
}

/// Uniformly sampled multivariate metric time series. Timestamps are epoch
/// minutes with a constant step of 1; values are row-major (rows =
/// timestamps, cols = metrics) with NaN marking missing cells.
#[derive(Debug, Clone)]
pub struct MetricFrame {
    pub timestamps: Vec<i64>,
    pub columns: Vec<MetricColumn>,
    values: Vec<f64>,
}

impl MetricFrame {
    pub fn new(timestamps: Vec<i64>, columns: Vec<MetricColumn>, values: Vec<f64>) -> MetricFrame {
        assert_eq!(timestamps.len() * columns.len(), values.len());
        MetricFrame {
            timestamps,
            columns,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.columns.len() + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        let c = self.columns.len();
        self.values[row * c + col] = v;
    }

    /// Contiguous row-major block for rows [start, end).
    pub fn rows_flat(&self, start: usize, end: usize) -> &[f64] {
        let c = self.n_cols();
        &self.values[start * c..end * c]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.columns.len();
        &self.values[row * c..(row + 1) * c]
    }

    pub fn col_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column_values(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|r| self.get(r, col)).collect()
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }

    /// Keep only the named columns, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<MetricFrame> {
        let mut idx = Vec::with_capacity(names.len());
        let mut columns = Vec::with_capacity(names.len());
        for n in names {
            let i = self
                .col_index(n)
                .ok_or_else(|| Error::MissingColumn(n.clone()))?;
            idx.push(i);
            columns.push(self.columns[i].clone());
        }
        let mut values = Vec::with_capacity(self.n_rows() * idx.len());
        for r in 0..self.n_rows() {
            for &i in &idx {
                values.push(self.get(r, i));
            }
        }
        Ok(MetricFrame::new(self.timestamps.clone(), columns, values))
    }

    /// Rows in [start, end) of the frame, as a new frame.
    pub fn slice_rows(&self, start: usize, end: usize) -> MetricFrame {
        let c = self.columns.len();
        MetricFrame::new(
            self.timestamps[start..end].to_vec(),
            self.columns.clone(),
            self.values[start * c..end * c].to_vec(),
        )
    }
}

/// Per-metric min/max recorded on the training split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub per_metric: BTreeMap<String, (f64, f64)>,
    pub epsilon: f64,
}

pub const DEFAULT_EPSILON: f64 = 1e-9;

fn parse_timestamp_secs(tok: &str, row: usize) -> Result<i64> {
    let secs: i64 = tok.trim().parse().map_err(|_| Error::ParseError {
        row,
        msg: format!("bad timestamp `{tok}`"),
    })?;
    if secs % 60 != 0 {
        return Err(Error::ParseError {
            row,
            msg: format!("timestamp {secs} not minute-aligned"),
        });
    }
    Ok(secs / 60)
}

/// Regularize parsed rows onto the 1-minute grid: sort, reject duplicates,
/// fill whole-minute gaps with all-missing rows.
fn to_grid(
    mut rows: Vec<(i64, Vec<f64>)>,
    columns: Vec<MetricColumn>,
) -> Result<MetricFrame> {
    if rows.is_empty() {
        return Err(Error::EmptyFrame);
    }
    rows.sort_by_key(|(t, _)| *t);
    for i in 1..rows.len() {
        if rows[i].0 == rows[i - 1].0 {
            return Err(Error::ParseError {
                row: i + 1,
                msg: format!("duplicate timestamp {}", rows[i].0 * 60),
            });
        }
    }
    let n_cols = columns.len();
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut prev: Option<i64> = None;
    for (i, (t, vals)) in rows.into_iter().enumerate() {
        if let Some(p) = prev {
            let gap = t - p;
            if gap < 1 {
                return Err(Error::NonUniformGrid {
                    row: i + 1,
                    gap_minutes: gap,
                });
            }
            for missing_t in (p + 1)..t {
                timestamps.push(missing_t);
                values.extend(std::iter::repeat(MISSING).take(n_cols));
            }
        }
        timestamps.push(t);
        values.extend(vals);
        prev = Some(t);
    }
    Ok(MetricFrame::new(timestamps, columns, values))
}

/// Load a metric CSV or JSONL file onto the 1-minute grid.
///
/// CSV: header row with a leading `timestamp` column (epoch seconds,
/// minute-aligned); empty cell = missing. JSONL: one
/// `{"timestamp": secs, "values": {name: number|null}}` object per line.
pub fn load_metric_frame(path: &Path, schema: &Schema) -> Result<MetricFrame> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if ext.eq_ignore_ascii_case("jsonl") {
        load_jsonl(path, schema)
    } else {
        load_csv(path, schema)
    }
}

fn load_csv(path: &Path, schema: &Schema) -> Result<MetricFrame> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or(Error::EmptyFrame)?
        .map_err(Error::Io)?;
    let names: Vec<&str> = header.split(',').map(|s| s.trim()).collect();
    if names.first() != Some(&"timestamp") {
        return Err(Error::MissingColumn("timestamp".into()));
    }
    // Map declared schema columns onto CSV positions.
    let mut col_pos = Vec::new();
    let mut columns = Vec::new();
    for name in &names[1..] {
        let decl = schema
            .metrics
            .iter()
            .find(|m| m.name == *name)
            .ok_or_else(|| Error::UnknownColumn((*name).into()))?;
        columns.push(decl.clone());
    }
    for m in &schema.metrics {
        match names[1..].iter().position(|n| *n == m.name) {
            Some(p) => col_pos.push(p),
            None => return Err(Error::MissingColumn(m.name.clone())),
        }
    }
    // Re-order to schema declaration order.
    let ordered: Vec<MetricColumn> = schema.metrics.clone();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row_no = i + 2;
        let line = line.map_err(Error::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split(',').collect();
        if toks.len() != names.len() {
            return Err(Error::ParseError {
                row: row_no,
                msg: format!("expected {} fields, got {}", names.len(), toks.len()),
            });
        }
        let t = parse_timestamp_secs(toks[0], row_no)?;
        let mut vals = vec![MISSING; columns.len()];
        for (j, &p) in col_pos.iter().enumerate() {
            let tok = toks[p + 1].trim();
            vals[j] = if tok.is_empty() {
                MISSING
            } else {
                tok.parse().map_err(|_| Error::ParseError {
                    row: row_no,
                    msg: format!("bad number `{tok}`"),
                })?
            };
        }
        rows.push((t, vals));
    }
    to_grid(rows, ordered)
}

#[derive(Deserialize)]
struct JsonlRow {
    timestamp: i64,
    values: BTreeMap<String, Option<f64>>,
}

fn load_jsonl(path: &Path, schema: &Schema) -> Result<MetricFrame> {
    let file = std::fs::File::open(path)?;
    let columns = schema.metrics.clone();
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let row_no = i + 1;
        let line = line.map_err(Error::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRow = serde_json::from_str(&line).map_err(|e| Error::ParseError {
            row: row_no,
            msg: e.to_string(),
        })?;
        if rec.timestamp % 60 != 0 {
            return Err(Error::ParseError {
                row: row_no,
                msg: format!("timestamp {} not minute-aligned", rec.timestamp),
            });
        }
        for name in rec.values.keys() {
            if !columns.iter().any(|c| c.name == *name) {
                return Err(Error::UnknownColumn(name.clone()));
            }
        }
        let vals: Vec<f64> = columns
            .iter()
            .map(|c| rec.values.get(&c.name).copied().flatten().unwrap_or(MISSING))
            .collect();
        rows.push((rec.timestamp / 60, vals));
    }
    to_grid(rows, columns)
}

/// Apply the per-category missing-value policy. Error-like gaps become 0;
/// rows with a utilization-like gap are dropped. Returns the cleaned frame
/// and the number of dropped rows.
pub fn handle_missing(frame: &MetricFrame) -> Result<(MetricFrame, usize)> {
    let n_cols = frame.n_cols();
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut dropped = 0usize;
    for r in 0..frame.n_rows() {
        let row = frame.row(r);
        let drop_row = frame
            .columns
            .iter()
            .zip(row)
            .any(|(c, v)| v.is_nan() && c.category == Category::UtilizationLike);
        if drop_row {
            dropped += 1;
            continue;
        }
        timestamps.push(frame.timestamps[r]);
        for (c, v) in frame.columns.iter().zip(row) {
            values.push(if v.is_nan() {
                debug_assert_eq!(c.category, Category::ErrorLike);
                0.0
            } else {
                *v
            });
        }
    }
    if timestamps.is_empty() {
        return Err(Error::AllRowsDropped);
    }
    let _ = n_cols;
    Ok((
        MetricFrame::new(timestamps, frame.columns.clone(), values),
        dropped,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub var_floor: f64,
    pub corr_ceiling: f64,
    #[serde(default)]
    pub allowlist: Vec<String>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            var_floor: 1e-12,
            corr_ceiling: 0.99,
            allowlist: Vec::new(),
        }
    }
}

fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Average ranks (ties share the mean rank), 1-based.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).unwrap());
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = rank;
        }
        i = j + 1;
    }
    out
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Variance and correlation based feature pruning. QoS and allowlisted
/// columns always survive; among highly correlated non-QoS pairs the later
/// column (declared order) is dropped.
pub fn select_features(frame: &MetricFrame, cfg: &SelectionConfig) -> MetricFrame {
    let n = frame.n_cols();
    let protected: Vec<bool> = frame
        .columns
        .iter()
        .map(|c| c.is_qos || cfg.allowlist.contains(&c.name))
        .collect();
    let cols: Vec<Vec<f64>> = (0..n).map(|c| frame.column_values(c)).collect();
    let mut keep = vec![true; n];
    for c in 0..n {
        if !protected[c] && variance(&cols[c]) < cfg.var_floor {
            keep[c] = false;
        }
    }
    for i in 0..n {
        if !keep[i] || frame.columns[i].is_qos {
            continue;
        }
        for j in (i + 1)..n {
            if !keep[j] || frame.columns[j].is_qos || protected[j] {
                continue;
            }
            if pearson(&cols[i], &cols[j]).abs() >= cfg.corr_ceiling
                && spearman(&cols[i], &cols[j]).abs() >= cfg.corr_ceiling
            {
                keep[j] = false;
            }
        }
    }
    let names: Vec<String> = frame
        .columns
        .iter()
        .enumerate()
        .filter(|(i, _)| keep[*i])
        .map(|(_, c)| c.name.clone())
        .collect();
    frame.select_columns(&names).expect("kept columns exist")
}

/// Record per-metric min/max. Call on the training split only.
pub fn fit_normalizer(frame: &MetricFrame) -> Result<NormalizationStats> {
    if frame.n_rows() == 0 {
        return Err(Error::EmptyFrame);
    }
    let mut per_metric = BTreeMap::new();
    for (c, col) in frame.columns.iter().enumerate() {
        let vals = frame.column_values(c);
        let mn = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        per_metric.insert(col.name.clone(), (mn, mx));
    }
    Ok(NormalizationStats {
        per_metric,
        epsilon: DEFAULT_EPSILON,
    })
}

/// Map a single raw value into normalized units, with the inference-time
/// clamp to [0, 1].
pub fn normalize_value(raw: f64, min: f64, max: f64, epsilon: f64) -> f64 {
    ((raw - min) / (max - min + epsilon)).clamp(0.0, 1.0)
}

/// Min-max normalize each cell using training-split stats, clamping values
/// from unseen ranges to [0, 1]. Not idempotent: re-normalizing an already
/// normalized frame rescales it again.
pub fn normalize(frame: &MetricFrame, stats: &NormalizationStats) -> Result<MetricFrame> {
    let mut out = frame.clone();
    for (c, col) in frame.columns.iter().enumerate() {
        let &(mn, mx) = stats
            .per_metric
            .get(&col.name)
            .ok_or_else(|| Error::UnknownMetric(col.name.clone()))?;
        for r in 0..frame.n_rows() {
            out.set(r, c, normalize_value(frame.get(r, c), mn, mx, stats.epsilon));
        }
    }
    Ok(out)
}

/// A rolling window anchored at the timestamp of its last row; covers frame
/// rows [start, end) with end - start = w.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    pub anchor_ts: i64,
    pub start: usize,
    pub end: usize,
}

/// Enumerate rolling windows of length `w` with the given stride, in
/// ascending anchor order.
pub fn window(frame: &MetricFrame, w: usize, stride: usize) -> Result<Vec<WindowRef>> {
    assert!(w >= 1 && stride >= 1);
    let n = frame.n_rows();
    if n < w {
        return Err(Error::FrameTooShort { have: n, need: w });
    }
    let mut out = Vec::with_capacity((n - w) / stride + 1);
    let mut i = w - 1;
    while i < n {
        out.push(WindowRef {
            anchor_ts: frame.timestamps[i],
            start: i + 1 - w,
            end: i + 1,
        });
        i += stride;
    }
    Ok(out)
}
