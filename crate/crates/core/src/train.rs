//! Supervised sample construction at horizon t+gamma, chronological splits
//! with a leakage guard, the end-to-end training loop, and checkpoint I/O.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{seeded_rng, AdamHyper, AdamState, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::ingest::{MetricFrame, NormalizationStats};
use crate::labeling::{label_at, LabelParams, ProxyLabelSeries};
use crate::model::{multitask_loss, BatchLoss, Mode, ModelConfig};

/// One supervised sample: input window rows [start, end) of the normalized
/// frame, targets gamma minutes past the anchor.
#[derive(Debug, Clone)]
pub struct WindowedSample {
    pub anchor_ts: i64,
    pub target_ts: i64,
    pub start: usize,
    pub end: usize,
    /// Normalized value at t+gamma, one per QoS metric.
    pub y_true: Vec<f64>,
    /// Proxy label at t+gamma, one per QoS metric.
    pub label: Vec<bool>,
}

/// All samples share one normalized frame; windows are row ranges into it.
pub struct Dataset {
    pub frame: MetricFrame,
    pub qos_cols: Vec<usize>,
    pub samples: Vec<WindowedSample>,
}

/// Build one sample per window anchor whose t+gamma target is in range.
/// Count = floor((n - w - gamma)/stride) + 1.
pub fn build_dataset(
    frame: MetricFrame,
    labels: &[ProxyLabelSeries],
    qos: &[String],
    w: usize,
    gamma: usize,
    stride: usize,
) -> Result<Dataset> {
    let n = frame.n_rows();
    if n < w + gamma {
        return Err(Error::FrameTooShort {
            have: n,
            need: w + gamma,
        });
    }
    let qos_cols: Vec<usize> = qos
        .iter()
        .map(|q| {
            frame
                .col_index(q)
                .ok_or_else(|| Error::MissingQosMetric(q.clone()))
        })
        .collect::<Result<_>>()?;
    let label_for: Vec<&ProxyLabelSeries> = qos
        .iter()
        .map(|q| {
            labels
                .iter()
                .find(|s| s.metric == *q)
                .ok_or_else(|| Error::MissingQosMetric(q.clone()))
        })
        .collect::<Result<_>>()?;
    let mut samples = Vec::new();
    let mut i = w - 1; // anchor row index
    while i + gamma < n {
        let target = i + gamma;
        let y_true: Vec<f64> = qos_cols.iter().map(|&c| frame.get(target, c)).collect();
        let label: Vec<bool> = label_for
            .iter()
            .map(|s| label_at(s, frame.timestamps[target]))
            .collect::<Result<_>>()?;
        samples.push(WindowedSample {
            anchor_ts: frame.timestamps[i],
            target_ts: frame.timestamps[target],
            start: i + 1 - w,
            end: i + 1,
            y_true,
            label,
        });
        i += stride;
    }
    Ok(Dataset {
        frame,
        qos_cols,
        samples,
    })
}

/// Chronological split into contiguous train/val/test segments. Any train or
/// val sample whose target falls at or past the first test anchor is dropped
/// (its window would straddle the test period).
pub fn split_chronological(
    samples: &[WindowedSample],
    train_frac: f64,
    val_frac: f64,
) -> Result<(Vec<WindowedSample>, Vec<WindowedSample>, Vec<WindowedSample>)> {
    assert!(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac <= 1.0);
    let n = samples.len();
    let n_train = (n as f64 * train_frac).floor() as usize;
    let n_val = (n as f64 * val_frac).floor() as usize;
    if n_train == 0 {
        return Err(Error::EmptySplit("train".into()));
    }
    if n_val == 0 {
        return Err(Error::EmptySplit("val".into()));
    }
    if n_train + n_val >= n {
        return Err(Error::EmptySplit("test".into()));
    }
    let test: Vec<_> = samples[n_train + n_val..].to_vec();
    let test_start = test[0].anchor_ts;
    let guard = |s: &&WindowedSample| s.target_ts < test_start;
    let train: Vec<_> = samples[..n_train].iter().filter(guard).cloned().collect();
    let val: Vec<_> = samples[n_train..n_train + n_val]
        .iter()
        .filter(guard)
        .cloned()
        .collect();
    if train.is_empty() {
        return Err(Error::EmptySplit("train (after leakage guard)".into()));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("val (after leakage guard)".into()));
    }
    Ok((train, val, test))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_total: f64,
    pub val_nll: f64,
    pub val_total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    /// Not serialized: runs must be byte-identical given a seed.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 50,
            batch_size: 64,
            patience: 5,
        }
    }
}

fn batch_views<'a>(
    ds: &'a Dataset,
    idxs: &[usize],
    cfg: &ModelConfig,
) -> (Vec<ndarray::ArrayView2<'a, f64>>, Array2<f64>, Array2<f64>) {
    let nq = cfg.qos.len();
    let mut y = Array2::zeros((idxs.len(), nq));
    let mut lab = Array2::zeros((idxs.len(), nq));
    let mut views = Vec::with_capacity(idxs.len());
    for (bi, &i) in idxs.iter().enumerate() {
        let s = &ds.samples[i];
        views.push(frame_window_view(&ds.frame, s.start, s.end));
        for q in 0..nq {
            y[[bi, q]] = s.y_true[q];
            lab[[bi, q]] = f64::from(s.label[q]);
        }
    }
    (views, y, lab)
}

fn frame_window_view(frame: &MetricFrame, start: usize, end: usize) -> ndarray::ArrayView2<'_, f64> {
    let c = frame.n_cols();
    ndarray::ArrayView2::from_shape((end - start, c), frame.rows_flat(start, end)).unwrap()
}

fn eval_split(
    store: &ParamStore,
    cfg: &ModelConfig,
    ds: &Dataset,
    split: &[WindowedSample],
    batch_size: usize,
) -> Result<(f64, f64)> {
    // mean (nll, total) over fixed-order batches, eval mode
    let pos: BTreeMap<i64, usize> = ds
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.anchor_ts, i))
        .collect();
    let idxs: Vec<usize> = split.iter().map(|s| pos[&s.anchor_ts]).collect();
    let mut rng = seeded_rng(cfg.seed, 99); // unused in eval mode
    let mut nll_sum = 0.0;
    let mut total_sum = 0.0;
    let mut count = 0.0;
    for chunk in idxs.chunks(batch_size) {
        let (views, y, lab) = batch_views(ds, chunk, cfg);
        let mut tape = Tape::new();
        let loss: BatchLoss =
            multitask_loss(&mut tape, store, cfg, &views, &y, &lab, Mode::Eval, &mut rng)?;
        let wsize = chunk.len() as f64;
        nll_sum += tape.scalar(loss.nll) * wsize;
        total_sum += tape.scalar(loss.total) * wsize;
        count += wsize;
    }
    Ok((nll_sum / count, total_sum / count))
}

/// Mini-batch Adam on the multi-task loss with early stopping on validation
/// total loss. Deterministic given `cfg.seed`.
pub fn train(
    cfg: &ModelConfig,
    ds: &Dataset,
    train_set: &[WindowedSample],
    val_set: &[WindowedSample],
    opts: &TrainOptions,
) -> Result<(ParamStore, TrainReport)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptySplit("train/val".into()));
    }
    let t0 = std::time::Instant::now();
    let mut store = crate::model::init_params(cfg)?;
    let mut adam = AdamState::new(&store, AdamHyper::default());
    let mut dropout_rng = seeded_rng(cfg.seed, 2);
    let mut shuffle_rng = seeded_rng(cfg.seed, 3);

    // map split samples back to dataset indices once
    let pos: BTreeMap<i64, usize> = ds
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.anchor_ts, i))
        .collect();
    let train_idx: Vec<usize> = train_set.iter().map(|s| pos[&s.anchor_ts]).collect();
    let val_refs: Vec<WindowedSample> = val_set.to_vec();

    let mut best: Option<(f64, ParamStore, usize)> = None;
    let mut since_best = 0usize;
    let mut epochs = Vec::new();
    for epoch in 0..opts.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut shuffle_rng);
        let mut train_loss_sum = 0.0;
        let mut seen = 0.0;
        for (b, chunk) in order.chunks(opts.batch_size).enumerate() {
            let (views, y, lab) = batch_views(ds, chunk, cfg);
            let mut tape = Tape::new();
            let loss = multitask_loss(
                &mut tape,
                &store,
                cfg,
                &views,
                &y,
                &lab,
                Mode::Train,
                &mut dropout_rng,
            )?;
            let total = tape.scalar(loss.total);
            if !total.is_finite() {
                return Err(Error::DivergedLoss { epoch, batch: b });
            }
            train_loss_sum += total * chunk.len() as f64;
            seen += chunk.len() as f64;
            tape.backward(loss.total)?;
            store.zero_grads();
            tape.accumulate_param_grads(&mut store);
            adam.step(&mut store);
        }
        let (val_nll, val_total) = eval_split(&store, cfg, ds, &val_refs, opts.batch_size)?;
        if !val_total.is_finite() {
            return Err(Error::DivergedLoss { epoch, batch: 0 });
        }
        epochs.push(EpochStats {
            train_total: train_loss_sum / seen,
            val_nll,
            val_total,
        });
        let improved = best.as_ref().map_or(true, |(b, _, _)| val_total < *b);
        if improved {
            best = Some((val_total, store.clone(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= opts.patience {
                break;
            }
        }
    }
    let (_, best_store, best_epoch) = best.unwrap();
    Ok((
        best_store,
        TrainReport {
            epochs,
            best_epoch,
            wall_time_secs: t0.elapsed().as_secs_f64(),
        },
    ))
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Self-contained model bundle: parameters plus everything inference needs
/// (normalizer, label params, thresholds, raw training QoS values for
/// re-deriving percentile thresholds).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    /// Final selected column order the model was trained on.
    pub metric_names: Vec<String>,
    pub stats: NormalizationStats,
    pub label_params: LabelParams,
    /// Raw-unit percentile threshold per QoS metric at the default T.
    pub tau_raw: BTreeMap<String, f64>,
    /// Sorted raw training values per QoS metric; lets tau be re-derived for
    /// any percentile without retraining.
    pub train_qos_sorted: BTreeMap<String, Vec<f64>>,
    /// Calibrated probability threshold (Youden) and its J statistic.
    pub theta: Option<f64>,
    pub youden_j: Option<f64>,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn to_store(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for t in &self.params {
            if t.shape[0] * t.shape[1] != t.data.len() {
                return Err(Error::CorruptFile(format!(
                    "tensor `{}` shape/data mismatch",
                    t.name
                )));
            }
            store.add(
                &t.name,
                Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone()).unwrap(),
            );
        }
        Ok(store)
    }

    pub fn from_store(store: &ParamStore) -> Vec<NamedTensor> {
        store
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: [p.value.dim().0, p.value.dim().1],
                data: p.value.iter().copied().collect(),
            })
            .collect()
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let json = serde_json::to_string(ckpt)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::CorruptFile(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::CorruptFile("missing version".into()))? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::CorruptFile(e.to_string()))
}
