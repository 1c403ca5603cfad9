//! Evaluation harness: average precision, precision/recall/F1 at a
//! threshold, multi-percentile F1 without retraining, and MTTD-reduction
//! accounting against ground-truth outages.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::{detect, probs_from_forecasts, youden_threshold, DecisionConfig, ModelBundle, OutageEvent, StepForecast};
use crate::labeling::ProxyLabelSeries;

/// Ground-truth outage timeline: impact start B, baseline detection C,
/// end D. Invariant B < C <= D.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthOutage {
    pub impact_start: i64,
    pub baseline_detection: i64,
    pub end: i64,
    pub metrics: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrfResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True when a zero denominator forced a 0 by convention.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc_pr: f64,
    pub prf_at_theta: PrfResult,
    /// F1 per SLA percentile, recomputed from cached mixtures.
    pub f1_per_percentile: BTreeMap<String, f64>,
    /// Per-outage MTTD reduction; None = outage not predicted ('-').
    pub mttd_reduction: Vec<Option<f64>>,
    pub false_positive_runs: usize,
}

/// Average precision over the descending-score ranking, with tied scores
/// entering as one group: AP = sum_n (R_n - R_{n-1}) * P_n.
pub fn auc_pr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let total_pos = labels.iter().filter(|&&l| l).count();
    if total_pos == 0 || total_pos == labels.len() {
        return Err(Error::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        for k in i..=j {
            seen += 1;
            if labels[idx[k]] {
                tp += 1;
            }
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

/// Precision/recall/F1 with prediction = score > theta. Zero denominators
/// yield 0 with the degenerate flag set.
pub fn prf_at(scores: &[f64], labels: &[bool], theta: f64) -> PrfResult {
    assert!(!scores.is_empty());
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > theta, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let mut degenerate = false;
    let precision = if tp + fp == 0 {
        degenerate = true;
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        degenerate = true;
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        degenerate = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    PrfResult {
        precision,
        recall,
        f1,
        degenerate,
    }
}

/// Bookkeeping proving the mixtures were computed once per dataset,
/// regardless of how many percentiles are evaluated.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdSweepStats {
    pub train_forecast_passes: usize,
    pub test_forecast_passes: usize,
}

/// Evaluate F1 at several SLA percentiles from cached mixtures: for each T,
/// tau is re-derived from stored training values, theta* is recalibrated on
/// training scores via Youden, and F1 is computed on test scores. No
/// re-encoding happens per T.
pub fn f1_over_thresholds(
    bundle: &ModelBundle,
    train_forecasts: &[StepForecast],
    train_labels: &[ProxyLabelSeries],
    test_forecasts: &[StepForecast],
    test_labels: &[ProxyLabelSeries],
    percentiles: &[f64],
) -> Result<(BTreeMap<String, f64>, ThresholdSweepStats)> {
    let cfg = bundle.config();
    let mut out = BTreeMap::new();
    for &t in percentiles {
        let train_series = probs_from_forecasts(bundle, train_forecasts, Some(t))?;
        let test_series = probs_from_forecasts(bundle, test_forecasts, Some(t))?;
        // pool scores/labels across QoS metrics
        let (tr_scores, tr_labels) = pool(cfg, &train_series, train_labels)?;
        let (te_scores, te_labels) = pool(cfg, &test_series, test_labels)?;
        let (theta, _) = youden_threshold(&tr_scores, &tr_labels)?;
        let prf = prf_at(&te_scores, &te_labels, theta);
        out.insert(format!("{t}"), prf.f1);
    }
    Ok((
        out,
        ThresholdSweepStats {
            train_forecast_passes: 1,
            test_forecast_passes: 1,
        },
    ))
}

/// Align probability series with proxy labels at the matching timestamps and
/// pool across metrics.
pub fn pool(
    cfg: &crate::model::ModelConfig,
    series: &[crate::infer::ProbSeries],
    labels: &[ProxyLabelSeries],
) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut scores = Vec::new();
    let mut labs = Vec::new();
    for q in &cfg.qos {
        let s = series
            .iter()
            .find(|s| s.metric == *q)
            .ok_or_else(|| Error::MissingQosMetric(q.clone()))?;
        let l = labels
            .iter()
            .find(|l| l.metric == *q)
            .ok_or_else(|| Error::MissingQosMetric(q.clone()))?;
        // The target of the forecast anchored at ts is ts + gamma.
        for (ts, p) in s.timestamps.iter().zip(&s.probs) {
            let target = ts + cfg.gamma as i64;
            if let Ok(lab) = crate::labeling::label_at(l, target) {
                scores.push(*p);
                labs.push(lab);
            }
        }
    }
    Ok((scores, labs))
}

/// Per-outage MTTD reduction plus false-positive run count. Each truth
/// outage matches the earliest unconsumed event flagged inside
/// [B, C + grace]; reduction = (C - flagged)/(C - B). Events matching no
/// truth outage are false positives (unit = sustained run).
pub fn mttd_reduction(
    events: &[OutageEvent],
    truth: &[GroundTruthOutage],
    grace: i64,
) -> (Vec<Option<f64>>, usize) {
    let mut consumed = vec![false; events.len()];
    let mut reductions = Vec::with_capacity(truth.len());
    for t in truth {
        debug_assert!(t.impact_start < t.baseline_detection);
        let mut found = None;
        for (i, e) in events.iter().enumerate() {
            if consumed[i] {
                continue;
            }
            if e.flagged_ts >= t.impact_start && e.flagged_ts <= t.baseline_detection + grace {
                found = Some(i);
                break;
            }
        }
        match found {
            Some(i) => {
                consumed[i] = true;
                let b = t.impact_start as f64;
                let c = t.baseline_detection as f64;
                reductions.push(Some((c - events[i].flagged_ts as f64) / (c - b)));
            }
            None => reductions.push(None),
        }
    }
    let fp = consumed.iter().filter(|&&c| !c).count();
    (reductions, fp)
}

/// Full test-set report at the bundle's calibrated threshold.
pub fn evaluate(
    bundle: &ModelBundle,
    train_forecasts: &[StepForecast],
    train_labels: &[ProxyLabelSeries],
    test_forecasts: &[StepForecast],
    test_labels: &[ProxyLabelSeries],
    truth: &[GroundTruthOutage],
    percentiles: &[f64],
    sustain: usize,
) -> Result<EvalReport> {
    let cfg = bundle.config();
    let theta = bundle.checkpoint.theta.ok_or(Error::InvalidConfig(
        "checkpoint not calibrated (run calibrate first)".into(),
    ))?;
    let test_series = probs_from_forecasts(bundle, test_forecasts, None)?;
    let (scores, labels) = pool(cfg, &test_series, test_labels)?;
    let auc = auc_pr(&scores, &labels)?;
    let prf = prf_at(&scores, &labels, theta);
    let (f1_map, _) = f1_over_thresholds(
        bundle,
        train_forecasts,
        train_labels,
        test_forecasts,
        test_labels,
        percentiles,
    )?;
    let dc = DecisionConfig {
        percentile: bundle.checkpoint.label_params.percentile,
        tau_raw: bundle.checkpoint.tau_raw.clone(),
        theta,
        sustain,
    };
    let events = detect(&test_series, &dc);
    let (reductions, fp) = mttd_reduction(&events, truth, 0);
    Ok(EvalReport {
        auc_pr: auc,
        prf_at_theta: prf,
        f1_per_percentile: f1_map,
        mttd_reduction: reductions,
        false_positive_runs: fp,
    })
}
