//! Proxy-label generation for extreme events: percentile exceedance windows
//! gated by fired alerts.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::MetricFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    High,
    Medium,
    Low,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlertRecord {
    /// Epoch minutes.
    pub timestamp: i64,
    pub monitor: String,
    pub severity: Severity,
    pub service: String,
}

/// Proxy-label window parameters: window length w', percentile T,
/// exceedance fraction alpha, minimum alert count k.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LabelParams {
    pub w_prime: usize,
    pub percentile: f64,
    pub alpha: f64,
    pub k: usize,
}

impl Default for LabelParams {
    fn default() -> Self {
        LabelParams {
            w_prime: 10,
            percentile: 95.0,
            alpha: 0.5,
            k: 1,
        }
    }
}

/// Per-QoS-metric boolean extreme-event timeline on the source frame's grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProxyLabelSeries {
    pub metric: String,
    pub timestamps: Vec<i64>,
    pub labels: Vec<bool>,
    pub params: LabelParams,
}

impl ProxyLabelSeries {
    pub fn fraction_true(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|&&b| b).count() as f64 / self.labels.len() as f64
    }
}

#[derive(Deserialize)]
struct RawAlert {
    timestamp: i64,
    monitor: String,
    severity: String,
    service: String,
}

/// Load an alert JSONL file (epoch seconds, minute-aligned truncation),
/// sorted by timestamp.
pub fn load_alerts(path: &Path) -> Result<Vec<AlertRecord>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let row = i + 1;
        let line = line.map_err(Error::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawAlert = serde_json::from_str(&line).map_err(|e| Error::ParseError {
            row,
            msg: e.to_string(),
        })?;
        let severity = match raw.severity.as_str() {
            "high" => Severity::High,
            "medium" => Severity::Medium,
            "low" => Severity::Low,
            other => return Err(Error::UnknownSeverity(other.into())),
        };
        out.push(AlertRecord {
            timestamp: raw.timestamp.div_euclid(60),
            monitor: raw.monitor,
            severity,
            service: raw.service,
        });
    }
    out.sort_by_key(|a| a.timestamp);
    Ok(out)
}

/// Nearest-rank percentile: the ceil(T/100 * n)-th smallest value.
pub fn percentile_value(series: &[f64], t: f64) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    assert!(t > 0.0 && t < 100.0, "percentile must be in (0,100)");
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let rank = ((t / 100.0) * n as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// Nearest-rank percentile over an already-sorted ascending slice.
pub fn percentile_of_sorted(sorted: &[f64], t: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptySeries);
    }
    let n = sorted.len();
    let rank = ((t / 100.0) * n as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// Slide w'-length windows (stride 1) over a QoS metric's raw values; a
/// window qualifies when at least alpha*w' samples exceed tau and at least k
/// alerts fall inside [t, t+w'). Each timestamp covered by any qualifying
/// window is labeled true.
pub fn generate_proxy_labels(
    raw: &MetricFrame,
    qos: &[String],
    alerts: &[AlertRecord],
    params: &LabelParams,
    tau: &BTreeMap<String, f64>,
) -> Result<Vec<ProxyLabelSeries>> {
    let n = raw.n_rows();
    let wp = params.w_prime;
    let alert_minutes: Vec<i64> = {
        let mut m: Vec<i64> = alerts.iter().map(|a| a.timestamp).collect();
        m.sort_unstable();
        m
    };
    let alerts_in = |lo: i64, hi: i64| -> usize {
        // count alerts with lo <= t < hi
        let a = alert_minutes.partition_point(|&t| t < lo);
        let b = alert_minutes.partition_point(|&t| t < hi);
        b - a
    };
    let mut out = Vec::with_capacity(qos.len());
    for name in qos {
        let col = raw
            .col_index(name)
            .ok_or_else(|| Error::MissingQosMetric(name.clone()))?;
        let t = *tau
            .get(name)
            .ok_or_else(|| Error::MissingQosMetric(name.clone()))?;
        let vals = raw.column_values(col);
        let mut labels = vec![false; n];
        if n >= wp && wp >= 1 {
            // prefix sums of exceedance counts
            let mut prefix = vec![0usize; n + 1];
            for i in 0..n {
                prefix[i + 1] = prefix[i] + usize::from(vals[i] > t);
            }
            let need = params.alpha * wp as f64;
            for s in 0..=(n - wp) {
                let exceed = prefix[s + wp] - prefix[s];
                if (exceed as f64) + 1e-12 < need {
                    continue;
                }
                let lo = raw.timestamps[s];
                if alerts_in(lo, lo + wp as i64) < params.k {
                    continue;
                }
                for l in labels.iter_mut().skip(s).take(wp) {
                    *l = true;
                }
            }
        }
        out.push(ProxyLabelSeries {
            metric: name.clone(),
            timestamps: raw.timestamps.clone(),
            labels,
            params: *params,
        });
    }
    Ok(out)
}

/// Label at an exact grid timestamp.
pub fn label_at(series: &ProxyLabelSeries, t: i64) -> Result<bool> {
    match series.timestamps.binary_search(&t) {
        Ok(i) => Ok(series.labels[i]),
        Err(_) => Err(Error::OutOfRange(t)),
    }
}
