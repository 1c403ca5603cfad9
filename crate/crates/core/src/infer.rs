//! Inference: mixture tail probability of an SLA-threshold crossing,
//! Youden's J threshold calibration, rolling scoring, and sustained-run
//! outage detection.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{seeded_rng, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::ingest::{normalize_value, MetricFrame};
use crate::model::{classifier_head, encode_batch, mdn_head, MixtureParams, Mode, ModelConfig};
use crate::train::Checkpoint;

/// Decision-time knobs: SLA percentile, per-metric raw thresholds, the
/// calibrated probability threshold, and the sustain requirement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionConfig {
    pub percentile: f64,
    pub tau_raw: BTreeMap<String, f64>,
    pub theta: f64,
    pub sustain: usize,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        DecisionConfig {
            percentile: 95.0,
            tau_raw: BTreeMap::new(),
            theta: 0.5,
            sustain: 15,
        }
    }
}

/// One sustained exceedance run for a metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageEvent {
    pub metric: String,
    /// First minute of the run.
    pub start_ts: i64,
    /// Minute of the sustain-th consecutive exceedance.
    pub flagged_ts: i64,
    pub peak_prob: f64,
}

/// Standard normal CDF via erfc; absolute error well below 1e-12.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Upper tail mass of the mixture beyond `tau` (in the mixture's units):
/// sum_c alpha_c (1 - Phi((tau - mu_c)/sigma_c)).
pub fn outage_probability(mix: &MixtureParams, tau: f64) -> Result<f64> {
    mix.validate()?;
    let mut p = 0.0;
    for c in 0..mix.alpha.len() {
        let z = (tau - mix.mu[c]) / mix.sigma[c];
        p += mix.alpha[c] * 0.5 * libm::erfc(z / std::f64::consts::SQRT_2);
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Youden's J threshold: candidates are 0, 1, and midpoints between
/// consecutive distinct sorted scores; prediction is score > theta. Returns
/// the smallest candidate maximizing J = TPR - FPR, with J.
pub fn youden_threshold(probs: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut distinct: Vec<f64> = probs.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let mut candidates = vec![0.0, 1.0];
    for w in distinct.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best = (f64::NEG_INFINITY, 0.0);
    for &theta in &candidates {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (&p, &l) in probs.iter().zip(labels) {
            if p > theta {
                if l {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let j = tp as f64 / pos as f64 - fp as f64 / neg as f64;
        if j > best.0 + 1e-15 {
            best = (j, theta);
        }
    }
    Ok((best.1, best.0))
}

/// Post-training model bundle: checkpoint plus materialized parameters.
pub struct ModelBundle {
    pub checkpoint: Checkpoint,
    pub store: ParamStore,
}

impl ModelBundle {
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<ModelBundle> {
        let store = ckpt.to_store()?;
        Ok(ModelBundle {
            checkpoint: ckpt,
            store,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.checkpoint.config
    }

    /// Map a raw-unit QoS threshold into the normalized space the mixtures
    /// live in.
    pub fn tau_normalized(&self, metric: &str, tau_raw: f64) -> Result<f64> {
        let &(mn, mx) = self
            .checkpoint
            .stats
            .per_metric
            .get(metric)
            .ok_or_else(|| Error::UnknownMetric(metric.to_string()))?;
        Ok(normalize_value(tau_raw, mn, mx, self.checkpoint.stats.epsilon))
    }

    /// Re-derive the raw tau for any percentile from the stored sorted
    /// training values. No retraining involved.
    pub fn tau_for_percentile(&self, metric: &str, t: f64) -> Result<f64> {
        let sorted = self
            .checkpoint
            .train_qos_sorted
            .get(metric)
            .ok_or_else(|| Error::UnknownMetric(metric.to_string()))?;
        crate::labeling::percentile_of_sorted(sorted, t)
    }
}

/// Per-anchor forecasts for every QoS metric.
#[derive(Debug, Clone)]
pub struct StepForecast {
    pub anchor_ts: i64,
    pub mixtures: Vec<MixtureParams>,
    pub clf_probs: Vec<f64>,
}

fn mixtures_from_tape(
    tape: &Tape,
    mdn: &crate::model::MdnVars,
    row: usize,
    c: usize,
) -> MixtureParams {
    let la = tape.value(mdn.log_alpha);
    let mu = tape.value(mdn.mu);
    let sg = tape.value(mdn.sigma);
    MixtureParams {
        alpha: (0..c).map(|k| la[[row, k]].exp()).collect(),
        mu: (0..c).map(|k| mu[[row, k]]).collect(),
        sigma: (0..c).map(|k| sg[[row, k]]).collect(),
    }
}

/// Forecast mixtures and classifier probabilities for a batch of windows in
/// eval mode. `windows` are (anchor_ts, w x |M|) normalized views.
pub fn forecast_batch(
    bundle: &ModelBundle,
    windows: &[(i64, ndarray::ArrayView2<f64>)],
) -> Result<Vec<StepForecast>> {
    let cfg = bundle.config();
    let mut rng = seeded_rng(cfg.seed, 98); // unused: eval mode only
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(256) {
        let views: Vec<_> = chunk.iter().map(|(_, v)| *v).collect();
        let mut tape = Tape::new();
        let h = encode_batch(&mut tape, &bundle.store, cfg, &views, Mode::Eval, &mut rng)?;
        let mut per_metric_mdn = Vec::new();
        let mut per_metric_clf = Vec::new();
        for q in &cfg.qos {
            per_metric_mdn.push(mdn_head(&mut tape, &bundle.store, cfg, q, h)?);
            per_metric_clf.push(classifier_head(&mut tape, &bundle.store, cfg, q, h)?);
        }
        for (row, (ts, _)) in chunk.iter().enumerate() {
            let mixtures = per_metric_mdn
                .iter()
                .map(|m| mixtures_from_tape(&tape, m, row, cfg.components))
                .collect();
            let clf_probs = per_metric_clf
                .iter()
                .map(|&p| tape.value(p)[[row, 0]])
                .collect();
            out.push(StepForecast {
                anchor_ts: *ts,
                mixtures,
                clf_probs,
            });
        }
    }
    Ok(out)
}

/// Per-metric outage probability series on the anchor grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbSeries {
    pub metric: String,
    pub timestamps: Vec<i64>,
    pub probs: Vec<f64>,
}

/// Batch scoring: one score per rolling window anchor per QoS metric. The
/// frame must already be normalized with the bundle's stats.
pub fn score_frame(bundle: &ModelBundle, frame: &MetricFrame) -> Result<Vec<ProbSeries>> {
    let cfg = bundle.config();
    let wins = crate::ingest::window(frame, cfg.window, 1)?;
    let views: Vec<(i64, ndarray::ArrayView2<f64>)> = wins
        .iter()
        .map(|w| (w.anchor_ts, window_view(frame, w.start, w.end)))
        .collect();
    let forecasts = forecast_batch(bundle, &views)?;
    probs_from_forecasts(bundle, &forecasts, None)
}

pub fn window_view(frame: &MetricFrame, start: usize, end: usize) -> ndarray::ArrayView2<'_, f64> {
    let c = frame.n_cols();
    ndarray::ArrayView2::from_shape((end - start, c), frame.rows_flat(start, end)).unwrap()
}

/// Convert forecasts to Eq.-4 probabilities against tau. `percentile_override`
/// re-derives tau from the stored training values instead of the default.
pub fn probs_from_forecasts(
    bundle: &ModelBundle,
    forecasts: &[StepForecast],
    percentile_override: Option<f64>,
) -> Result<Vec<ProbSeries>> {
    let cfg = bundle.config();
    let mut out = Vec::with_capacity(cfg.qos.len());
    for (qi, q) in cfg.qos.iter().enumerate() {
        let tau_raw = match percentile_override {
            Some(t) => bundle.tau_for_percentile(q, t)?,
            None => *bundle
                .checkpoint
                .tau_raw
                .get(q)
                .ok_or_else(|| Error::UnknownMetric(q.clone()))?,
        };
        let tau_n = bundle.tau_normalized(q, tau_raw)?;
        let mut timestamps = Vec::with_capacity(forecasts.len());
        let mut probs = Vec::with_capacity(forecasts.len());
        for f in forecasts {
            timestamps.push(f.anchor_ts);
            probs.push(outage_probability(&f.mixtures[qi], tau_n)?);
        }
        out.push(ProbSeries {
            metric: q.clone(),
            timestamps,
            probs,
        });
    }
    Ok(out)
}

/// Incremental scorer: push normalized rows one at a time; emits a forecast
/// once the buffer holds a full window. Bit-identical to batch scoring.
pub struct StreamScorer<'a> {
    bundle: &'a ModelBundle,
    buffer: VecDeque<Vec<f64>>,
}

impl<'a> StreamScorer<'a> {
    pub fn new(bundle: &'a ModelBundle) -> StreamScorer<'a> {
        StreamScorer {
            bundle,
            buffer: VecDeque::new(),
        }
    }

    pub fn push(&mut self, ts: i64, row: &[f64]) -> Result<Option<StepForecast>> {
        let cfg = self.bundle.config();
        self.buffer.push_back(row.to_vec());
        if self.buffer.len() > cfg.window {
            self.buffer.pop_front();
        }
        if self.buffer.len() < cfg.window {
            return Ok(None);
        }
        let mut x = Array2::zeros((cfg.window, cfg.n_metrics));
        for (i, r) in self.buffer.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                x[[i, j]] = v;
            }
        }
        let fc = forecast_batch(self.bundle, &[(ts, x.view())])?;
        Ok(Some(fc.into_iter().next().unwrap()))
    }
}

/// Run-length detection: an event is emitted the minute probability has been
/// above theta for `sustain` consecutive minutes; the run stays one event
/// until probability drops back to or below theta.
pub fn detect(series: &[ProbSeries], cfg: &DecisionConfig) -> Vec<OutageEvent> {
    let mut events = Vec::new();
    for s in series {
        let mut run_start: Option<usize> = None;
        let mut run_len = 0usize;
        let mut peak = 0.0f64;
        let mut fired = false;
        for (i, &p) in s.probs.iter().enumerate() {
            if p > cfg.theta {
                if run_start.is_none() {
                    run_start = Some(i);
                    run_len = 0;
                    peak = p;
                    fired = false;
                }
                run_len += 1;
                peak = peak.max(p);
                if run_len == cfg.sustain && !fired {
                    fired = true;
                    events.push(OutageEvent {
                        metric: s.metric.clone(),
                        start_ts: s.timestamps[run_start.unwrap()],
                        flagged_ts: s.timestamps[i],
                        peak_prob: peak,
                    });
                }
            } else {
                // close the run; patch the recorded peak
                if fired {
                    if let Some(ev) = events.last_mut() {
                        ev.peak_prob = ev.peak_prob.max(peak);
                    }
                }
                run_start = None;
                run_len = 0;
                peak = 0.0;
                fired = false;
            }
        }
        if fired {
            if let Some(ev) = events.last_mut() {
                ev.peak_prob = ev.peak_prob.max(peak);
            }
        }
    }
    events.sort_by_key(|e| (e.flagged_ts, e.metric.clone()));
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mix1(mu: f64, sigma: f64) -> MixtureParams {
        MixtureParams {
            alpha: vec![1.0],
            mu: vec![mu],
            sigma: vec![sigma],
        }
    }

    #[test]
    fn tail_probability_symmetry() {
        let m = mix1(0.5, 0.1);
        assert_abs_diff_eq!(outage_probability(&m, 0.5).unwrap(), 0.5, epsilon = 1e-12);
        let m2 = MixtureParams {
            alpha: vec![0.5, 0.5],
            mu: vec![0.4, 0.6],
            sigma: vec![0.1, 0.1],
        };
        // components straddle tau symmetrically
        assert_abs_diff_eq!(outage_probability(&m2, 0.5).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn tail_probability_limits() {
        let m = mix1(0.0, 1.0);
        assert!(outage_probability(&m, -11.0).unwrap() > 1.0 - 1e-9);
        assert!(outage_probability(&m, 11.0).unwrap() < 1e-9);
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(normal_cdf(1.0), 0.8413447460685429, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_cdf(-1.959963984540054), 0.025, epsilon = 1e-12);
    }

    #[test]
    fn youden_perfect_separation() {
        let (theta, j) = youden_threshold(
            &[0.1, 0.2, 0.8, 0.9],
            &[false, false, true, true],
        )
        .unwrap();
        assert_abs_diff_eq!(theta, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(j, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn youden_tie_breaks_small() {
        let (theta, j) = youden_threshold(
            &[0.1, 0.6, 0.4, 0.9],
            &[false, false, true, true],
        )
        .unwrap();
        assert_abs_diff_eq!(theta, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(j, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn youden_single_class() {
        assert!(matches!(
            youden_threshold(&[0.1, 0.9], &[true, true]),
            Err(Error::SingleClass)
        ));
    }

    fn series(probs: Vec<f64>) -> ProbSeries {
        ProbSeries {
            metric: "q".into(),
            timestamps: (0..probs.len() as i64).collect(),
            probs,
        }
    }

    #[test]
    fn detect_run_length_rule() {
        let cfg = DecisionConfig {
            theta: 0.5,
            sustain: 3,
            ..DecisionConfig::default()
        };
        let evs = detect(&[series(vec![0.1, 0.9, 0.9, 0.9, 0.1])], &cfg);
        assert_eq!(evs.len(), 1);
        assert_eq!(evs[0].start_ts, 1);
        assert_eq!(evs[0].flagged_ts, 3);
        assert_abs_diff_eq!(evs[0].peak_prob, 0.9);
    }

    #[test]
    fn detect_no_events_below_threshold() {
        let cfg = DecisionConfig {
            theta: 0.5,
            sustain: 3,
            ..DecisionConfig::default()
        };
        assert!(detect(&[series(vec![0.4, 0.5, 0.3])], &cfg).is_empty());
    }

    #[test]
    fn detect_two_separated_runs() {
        let cfg = DecisionConfig {
            theta: 0.5,
            sustain: 2,
            ..DecisionConfig::default()
        };
        let evs = detect(&[series(vec![0.9, 0.9, 0.1, 0.8, 0.8, 0.8])], &cfg);
        assert_eq!(evs.len(), 2);
        assert_eq!(evs[0].flagged_ts, 1);
        assert_eq!(evs[1].flagged_ts, 4);
        // one event per sustained run, even though the second run is longer
    }

    #[test]
    fn detect_is_causal() {
        let cfg = DecisionConfig {
            theta: 0.5,
            sustain: 4,
            ..DecisionConfig::default()
        };
        let evs = detect(&[series(vec![0.9; 10])], &cfg);
        assert_eq!(evs.len(), 1);
        assert_eq!(evs[0].flagged_ts, evs[0].start_ts + 3);
    }
}
