//! Command-line pipeline: generate, prepare, train, calibrate, predict,
//! evaluate, ablate. All file timestamps are epoch seconds; in-memory
//! timelines are epoch minutes.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, GroundTruthOutage};
use crate::infer::{
    detect, forecast_batch, probs_from_forecasts, window_view, DecisionConfig, ModelBundle,
    ProbSeries, StepForecast, StreamScorer,
};
use crate::ingest::{
    self, fit_normalizer, handle_missing, load_metric_frame, normalize, select_features,
    MetricFrame, Schema, SelectionConfig,
};
use crate::labeling::{
    generate_proxy_labels, load_alerts, percentile_value, AlertRecord, LabelParams,
    ProxyLabelSeries, Severity,
};
use crate::model::{EncoderKind, LossKind, ModelConfig};
use crate::synth::{self, ScenarioConfig};
use crate::train::{
    build_dataset, load_checkpoint, save_checkpoint, split_chronological, train, Checkpoint,
    Dataset, TrainOptions, WindowedSample,
};

pub const TRAIN_FRAC: f64 = 0.7;
pub const VAL_FRAC: f64 = 0.15;

pub fn log(level: &str, msg: &str) {
    let want = std::env::var("OW_LOG").unwrap_or_default();
    let show = match want.as_str() {
        "debug" => true,
        "info" => level != "debug",
        _ => false,
    };
    if show {
        eprintln!("[{level}] {msg}");
    }
}

#[derive(Parser, Debug)]
#[command(name = "outagewatch", version, about = "QoS outage forecasting pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossArg {
    Evl,
    Bce,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EncoderArg {
    Bilstm,
    Lstm,
}

/// Model/training knobs shared by train and ablate. Flags win over the
/// `--config` JSON file, which wins over built-in defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelFlags {
    /// JSON file with ModelConfig fields (all optional).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Forecast horizon in minutes.
    #[arg(long)]
    pub gamma: Option<usize>,
    /// Input window length in minutes.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long, value_enum)]
    pub encoder: Option<EncoderArg>,
    /// Multi-task weight on the classifier loss.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Window stride when building the training dataset.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
}

/// The optional `--config` file: ModelConfig fields plus training options,
/// everything defaulted.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FileConfig {
    pub window: Option<usize>,
    pub gamma: Option<usize>,
    pub encoder: Option<EncoderKind>,
    pub hidden_per_direction: Option<usize>,
    pub dropout_p: Option<f64>,
    pub components: Option<usize>,
    pub mdn_hidden: Option<Vec<usize>>,
    pub clf_hidden: Option<Vec<usize>>,
    pub loss: Option<LossKind>,
    pub delta: Option<f64>,
    pub lambda: Option<f64>,
    pub nll_weight: Option<f64>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub patience: Option<usize>,
    pub stride: Option<usize>,
}

impl ModelFlags {
    pub fn resolve(&self, n_metrics: usize, qos: Vec<String>) -> Result<(ModelConfig, TrainOptions, usize)> {
        let file: FileConfig = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::InvalidConfig(format!("bad config file: {e}")))?
            }
            None => FileConfig::default(),
        };
        let mut cfg = ModelConfig {
            n_metrics,
            qos,
            window: file.window.unwrap_or(60),
            gamma: file.gamma.unwrap_or(10),
            encoder: file.encoder.unwrap_or(EncoderKind::Bilstm),
            hidden_per_direction: file.hidden_per_direction.unwrap_or(64),
            dropout_p: file.dropout_p.unwrap_or(0.2),
            components: file.components.unwrap_or(3),
            mdn_hidden: file.mdn_hidden.unwrap_or_else(|| vec![200, 200]),
            clf_hidden: file.clf_hidden.unwrap_or_else(|| vec![20]),
            loss: file.loss.unwrap_or(LossKind::Evl),
            delta: file.delta.unwrap_or(2.0),
            lambda: file.lambda.unwrap_or(1.0),
            nll_weight: file.nll_weight.unwrap_or(1.0),
            seed: file.seed.unwrap_or(0),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(g) = self.gamma {
            cfg.gamma = g;
        }
        if let Some(w) = self.window {
            cfg.window = w;
        }
        if let Some(l) = self.loss {
            cfg.loss = match l {
                LossArg::Evl => LossKind::Evl,
                LossArg::Bce => LossKind::Bce,
            };
        }
        if let Some(e) = self.encoder {
            cfg.encoder = match e {
                EncoderArg::Bilstm => EncoderKind::Bilstm,
                EncoderArg::Lstm => EncoderKind::Lstm,
            };
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(h) = self.hidden {
            cfg.hidden_per_direction = h;
        }
        cfg.validate()?;
        let mut opts = TrainOptions::default();
        if let Some(e) = file.epochs {
            opts.epochs = e;
        }
        if let Some(b) = file.batch_size {
            opts.batch_size = b;
        }
        if let Some(p) = file.patience {
            opts.patience = p;
        }
        if let Some(e) = self.epochs {
            opts.epochs = e;
        }
        if let Some(b) = self.batch_size {
            opts.batch_size = b;
        }
        let stride = self.stride.or(file.stride).unwrap_or(1);
        Ok((cfg, opts, stride))
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic scenario: metrics CSV, alerts JSONL, ground truth
    /// JSON, and a matching schema JSON.
    Generate {
        /// ScenarioConfig JSON.
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Scale fault magnitudes until proxy-label density lands in [4%, 8%].
        #[arg(long)]
        tune: bool,
    },
    /// Ingest data, fit thresholds on the training slice, and write proxy
    /// labels plus a density summary.
    Prepare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        alerts: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus a training report.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        alerts: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long, default_value = "checkpoint.json")]
        out: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Calibrate the decision threshold (Youden's J on training scores) and
    /// update the checkpoint in place.
    Calibrate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        alerts: PathBuf,
        #[arg(long)]
        schema: PathBuf,
    },
    /// Score data with a calibrated checkpoint: probability JSONL + sustained
    /// outage events JSON.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// SLA percentile override; re-derives tau without retraining.
        #[arg(long = "threshold-T")]
        threshold_t: Option<f64>,
        /// Consecutive exceedances required to flag an outage.
        #[arg(long)]
        sustain: Option<usize>,
        /// Feed rows one at a time through the incremental scorer.
        #[arg(long)]
        stream: bool,
    },
    /// Full test-split report: AUC-PR, F1 at the calibrated threshold,
    /// per-percentile F1, MTTD reductions, false-positive runs.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        alerts: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
        #[arg(long)]
        sustain: Option<usize>,
    },
    /// Train the encoder x loss x gamma x variant grid on a scenario and
    /// emit a CSV of test AUC-PR / F1 per cell.
    Ablate {
        /// ScenarioConfig JSON.
        scenario: PathBuf,
        #[arg(long, default_value = "ablation.csv")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "bilstm,lstm")]
        encoders: Vec<EncoderArg>,
        #[arg(long, value_delimiter = ',', default_value = "evl,bce")]
        losses: Vec<LossArg>,
        #[arg(long, value_delimiter = ',', default_value = "10")]
        gammas: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        seeds: Vec<u64>,
        #[command(flatten)]
        model: ModelFlags,
    },
}

/// Map an error to the documented process exit code: 2 usage/input,
/// 3 numeric failure, 4 calibration failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::DivergedLoss { .. } | Error::DomainError(_) => 3,
        Error::SingleClass => 4,
        _ => 2,
    }
}

// ---------------------------------------------------------------------------
// file I/O helpers (external timestamps are epoch seconds)

pub fn write_metrics_csv(frame: &MetricFrame, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("timestamp");
    for c in &frame.columns {
        out.push(',');
        out.push_str(&c.name);
    }
    out.push('\n');
    for r in 0..frame.n_rows() {
        out.push_str(&(frame.timestamps[r] * 60).to_string());
        for v in frame.row(r) {
            out.push(',');
            if v.is_nan() {
                // empty cell = missing
            } else {
                out.push_str(&format!("{v}"));
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_alerts_jsonl(alerts: &[AlertRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for a in alerts {
        let sev = match a.severity {
            Severity::High => "high",
            Severity::Medium => "medium",
            Severity::Low => "low",
        };
        out.push_str(&serde_json::to_string(&serde_json::json!({
            "timestamp": a.timestamp * 60,
            "monitor": a.monitor,
            "severity": sev,
            "service": a.service,
        }))?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    impact_start: i64,
    baseline_detection: i64,
    end: i64,
    metrics: Vec<String>,
}

pub fn write_truth(truth: &[GroundTruthOutage], path: &Path) -> Result<()> {
    let rows: Vec<TruthFile> = truth
        .iter()
        .map(|t| TruthFile {
            impact_start: t.impact_start * 60,
            baseline_detection: t.baseline_detection * 60,
            end: t.end * 60,
            metrics: t.metrics.clone(),
        })
        .collect();
    std::fs::write(path, serde_json::to_string_pretty(&rows)?)?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<Vec<GroundTruthOutage>> {
    let text = std::fs::read_to_string(path)?;
    let rows: Vec<TruthFile> =
        serde_json::from_str(&text).map_err(|e| Error::CorruptFile(e.to_string()))?;
    Ok(rows
        .into_iter()
        .map(|t| GroundTruthOutage {
            impact_start: t.impact_start.div_euclid(60),
            baseline_detection: t.baseline_detection.div_euclid(60),
            end: t.end.div_euclid(60),
            metrics: t.metrics,
        })
        .collect())
}

pub fn write_schema(frame: &MetricFrame, path: &Path) -> Result<()> {
    let schema = Schema {
        metrics: frame.columns.clone(),
        allowlist: vec![],
    };
    std::fs::write(path, serde_json::to_string_pretty(&schema)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// shared pipeline stages

/// Ingested data plus training-slice label machinery; produced fresh for
/// `train`, reconstructed from a checkpoint for downstream commands.
pub struct Prepared {
    /// Selected columns, raw units.
    pub raw: MetricFrame,
    /// Selected columns, normalized.
    pub frame: MetricFrame,
    pub qos: Vec<String>,
    pub labels: Vec<ProxyLabelSeries>,
    pub tau_raw: BTreeMap<String, f64>,
    pub train_qos_sorted: BTreeMap<String, Vec<f64>>,
    pub stats: ingest::NormalizationStats,
}

/// Full fit: missing handling, feature selection and normalization fitted on
/// the chronological training slice, label thresholds from raw training
/// values.
pub fn prepare_fit(
    data: &Path,
    alerts_path: &Path,
    schema_path: &Path,
    label_params: &LabelParams,
) -> Result<Prepared> {
    let schema = Schema::load(schema_path)?;
    let frame = load_metric_frame(data, &schema)?;
    let (frame, dropped) = handle_missing(&frame)?;
    log("debug", &format!("dropped {dropped} rows with missing values"));
    let n_train = ((frame.n_rows() as f64) * TRAIN_FRAC).floor() as usize;
    if n_train == 0 {
        return Err(Error::EmptyFrame);
    }
    let train_slice = frame.slice_rows(0, n_train);
    let sel_cfg = SelectionConfig {
        allowlist: schema.allowlist.clone(),
        ..SelectionConfig::default()
    };
    let selected_train = select_features(&train_slice, &sel_cfg);
    let names: Vec<String> = selected_train.columns.iter().map(|c| c.name.clone()).collect();
    let raw = frame.select_columns(&names)?;
    let qos = schema.qos_names();

    let mut tau_raw = BTreeMap::new();
    let mut train_qos_sorted = BTreeMap::new();
    for q in &qos {
        let col = selected_train
            .col_index(q)
            .ok_or_else(|| Error::MissingQosMetric(q.clone()))?;
        let mut vals = selected_train.column_values(col);
        tau_raw.insert(q.clone(), percentile_value(&vals, label_params.percentile)?);
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        train_qos_sorted.insert(q.clone(), vals);
    }
    let alerts = load_alerts(alerts_path)?;
    let labels = generate_proxy_labels(&raw, &qos, &alerts, label_params, &tau_raw)?;

    let stats = fit_normalizer(&selected_train)?;
    let norm = normalize(&raw, &stats)?;
    Ok(Prepared {
        raw,
        frame: norm,
        qos,
        labels,
        tau_raw,
        train_qos_sorted,
        stats,
    })
}

/// Replay ingest against a checkpoint's fitted state: same columns, same
/// normalizer, same label thresholds.
pub fn prepare_apply(
    data: &Path,
    alerts_path: Option<&Path>,
    schema_path: &Path,
    ckpt: &Checkpoint,
) -> Result<Prepared> {
    let schema = Schema::load(schema_path)?;
    let frame = load_metric_frame(data, &schema)?;
    let (frame, _) = handle_missing(&frame)?;
    let raw = frame.select_columns(&ckpt.metric_names)?;
    let qos = ckpt.config.qos.clone();
    let labels = match alerts_path {
        Some(p) => {
            let alerts = load_alerts(p)?;
            generate_proxy_labels(&raw, &qos, &alerts, &ckpt.label_params, &ckpt.tau_raw)?
        }
        None => vec![],
    };
    let norm = normalize(&raw, &ckpt.stats)?;
    Ok(Prepared {
        raw,
        frame: norm,
        qos,
        labels,
        tau_raw: ckpt.tau_raw.clone(),
        train_qos_sorted: ckpt.train_qos_sorted.clone(),
        stats: ckpt.stats.clone(),
    })
}

pub fn forecast_samples(
    bundle: &ModelBundle,
    ds: &Dataset,
    samples: &[WindowedSample],
) -> Result<Vec<StepForecast>> {
    let views: Vec<(i64, ndarray::ArrayView2<f64>)> = samples
        .iter()
        .map(|s| (s.anchor_ts, window_view(&ds.frame, s.start, s.end)))
        .collect();
    forecast_batch(bundle, &views)
}

/// Probability series taken straight from the classifier head (used by the
/// classifier-only ablation variant).
pub fn clf_prob_series(cfg: &ModelConfig, forecasts: &[StepForecast]) -> Vec<ProbSeries> {
    cfg.qos
        .iter()
        .enumerate()
        .map(|(qi, q)| ProbSeries {
            metric: q.clone(),
            timestamps: forecasts.iter().map(|f| f.anchor_ts).collect(),
            probs: forecasts.iter().map(|f| f.clf_probs[qi]).collect(),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// commands

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            config,
            out,
            seed,
            tune,
        } => cmd_generate(&config, &out, seed, tune),
        Command::Prepare {
            data,
            alerts,
            schema,
            out,
        } => cmd_prepare(&data, &alerts, &schema, &out),
        Command::Train {
            data,
            alerts,
            schema,
            out,
            model,
        } => cmd_train(&data, &alerts, &schema, &out, &model),
        Command::Calibrate {
            checkpoint,
            data,
            alerts,
            schema,
        } => cmd_calibrate(&checkpoint, &data, &alerts, &schema),
        Command::Predict {
            checkpoint,
            data,
            schema,
            out,
            threshold_t,
            sustain,
            stream,
        } => cmd_predict(&checkpoint, &data, &schema, &out, threshold_t, sustain, stream),
        Command::Evaluate {
            checkpoint,
            data,
            alerts,
            schema,
            truth,
            out,
            sustain,
        } => cmd_evaluate(&checkpoint, &data, &alerts, &schema, &truth, &out, sustain),
        Command::Ablate {
            scenario,
            out,
            encoders,
            losses,
            gammas,
            seeds,
            model,
        } => cmd_ablate(&scenario, &out, &encoders, &losses, &gammas, &seeds, &model),
    }
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("bad scenario: {e}")))
}

pub fn cmd_generate(config: &Path, out: &Path, seed: Option<u64>, tune: bool) -> Result<()> {
    let mut cfg = load_scenario(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let params = LabelParams::default();
    if tune {
        cfg = synth::make_label_regime(&cfg, &params, TRAIN_FRAC)?;
    }
    let scen = synth::generate(&cfg)?;
    std::fs::create_dir_all(out)?;
    write_metrics_csv(&scen.frame, &out.join("metrics.csv"))?;
    write_alerts_jsonl(&scen.alerts, &out.join("alerts.jsonl"))?;
    write_truth(&scen.truth, &out.join("truth.json"))?;
    write_schema(&scen.frame, &out.join("schema.json"))?;
    let density = synth::label_density(&scen, &params, TRAIN_FRAC)?;
    println!(
        "generated {} minutes x {} metrics, {} alerts, {} outages, train label density {:.4}",
        scen.frame.n_rows(),
        scen.frame.n_cols(),
        scen.alerts.len(),
        scen.truth.len(),
        density
    );
    Ok(())
}

pub fn cmd_prepare(data: &Path, alerts: &Path, schema: &Path, out: &Path) -> Result<()> {
    let params = LabelParams::default();
    let prep = prepare_fit(data, alerts, schema, &params)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(
        out.join("labels.json"),
        serde_json::to_string_pretty(&prep.labels)?,
    )?;
    std::fs::write(
        out.join("tau.json"),
        serde_json::to_string_pretty(&prep.tau_raw)?,
    )?;
    for l in &prep.labels {
        println!("{}: label density {:.4}", l.metric, l.fraction_true());
    }
    Ok(())
}

pub fn cmd_train(
    data: &Path,
    alerts: &Path,
    schema: &Path,
    out: &Path,
    flags: &ModelFlags,
) -> Result<()> {
    let params = LabelParams::default();
    let prep = prepare_fit(data, alerts, schema, &params)?;
    let (cfg, opts, stride) = flags.resolve(prep.frame.n_cols(), prep.qos.clone())?;
    let names: Vec<String> = prep.frame.columns.iter().map(|c| c.name.clone()).collect();
    let ds = build_dataset(
        prep.frame.clone(),
        &prep.labels,
        &cfg.qos,
        cfg.window,
        cfg.gamma,
        stride,
    )?;
    let (train_set, val_set, _) = split_chronological(&ds.samples, TRAIN_FRAC, VAL_FRAC)?;
    log(
        "info",
        &format!(
            "training on {} samples, validating on {}",
            train_set.len(),
            val_set.len()
        ),
    );
    let (store, report) = train(&cfg, &ds, &train_set, &val_set, &opts)?;
    let ckpt = Checkpoint {
        version: 1,
        config: cfg,
        metric_names: names,
        stats: prep.stats,
        label_params: params,
        tau_raw: prep.tau_raw,
        train_qos_sorted: prep.train_qos_sorted,
        theta: None,
        youden_j: None,
        params: Checkpoint::from_store(&store),
    };
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    save_checkpoint(&ckpt, out)?;
    let report_path = out.with_extension("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    println!(
        "trained {} epochs (best {}), checkpoint -> {}",
        report.epochs.len(),
        report.best_epoch,
        out.display()
    );
    Ok(())
}

/// Score the training+validation portion of `data` and fit theta* by
/// Youden's J; rewrites the checkpoint.
pub fn cmd_calibrate(checkpoint: &Path, data: &Path, alerts: &Path, schema: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let prep = prepare_apply(data, Some(alerts), schema, &ckpt)?;
    let bundle = ModelBundle::from_checkpoint(ckpt)?;
    let cfg = bundle.config().clone();
    let ds = build_dataset(
        prep.frame.clone(),
        &prep.labels,
        &cfg.qos,
        cfg.window,
        cfg.gamma,
        1,
    )?;
    // calibrate strictly on the pre-test portion
    let n_cal = ((ds.samples.len() as f64) * (TRAIN_FRAC + VAL_FRAC)).floor() as usize;
    let cal = &ds.samples[..n_cal.max(1)];
    let forecasts = forecast_samples(&bundle, &ds, cal)?;
    let series = probs_from_forecasts(&bundle, &forecasts, None)?;
    let (scores, labels) = eval::pool(&cfg, &series, &prep.labels)?;
    let (theta, j) = crate::infer::youden_threshold(&scores, &labels)?;
    let mut ckpt = bundle.checkpoint;
    ckpt.theta = Some(theta);
    ckpt.youden_j = Some(j);
    save_checkpoint(&ckpt, checkpoint)?;
    println!("calibrated theta*={theta:.6} (J={j:.6})");
    Ok(())
}

pub fn cmd_predict(
    checkpoint: &Path,
    data: &Path,
    schema: &Path,
    out: &Path,
    threshold_t: Option<f64>,
    sustain: Option<usize>,
    stream: bool,
) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let theta = ckpt.theta.ok_or(Error::InvalidConfig(
        "checkpoint not calibrated (run calibrate first)".into(),
    ))?;
    let prep = prepare_apply(data, None, schema, &ckpt)?;
    let bundle = ModelBundle::from_checkpoint(ckpt)?;
    let cfg = bundle.config().clone();

    let forecasts = if stream {
        let mut scorer = StreamScorer::new(&bundle);
        let mut acc = Vec::new();
        for r in 0..prep.frame.n_rows() {
            if let Some(f) = scorer.push(prep.frame.timestamps[r], prep.frame.row(r))? {
                acc.push(f);
            }
        }
        acc
    } else {
        let wins = ingest::window(&prep.frame, cfg.window, 1)?;
        let views: Vec<(i64, ndarray::ArrayView2<f64>)> = wins
            .iter()
            .map(|w| (w.anchor_ts, window_view(&prep.frame, w.start, w.end)))
            .collect();
        forecast_batch(&bundle, &views)?
    };
    let series = probs_from_forecasts(&bundle, &forecasts, threshold_t)?;

    std::fs::create_dir_all(out)?;
    let mut scores = std::fs::File::create(out.join("scores.jsonl"))?;
    for s in &series {
        for (ts, p) in s.timestamps.iter().zip(&s.probs) {
            writeln!(
                scores,
                "{}",
                serde_json::json!({"metric": s.metric, "timestamp": ts * 60, "prob": p})
            )?;
        }
    }
    let dc = DecisionConfig {
        percentile: threshold_t.unwrap_or(bundle.checkpoint.label_params.percentile),
        tau_raw: bundle.checkpoint.tau_raw.clone(),
        theta,
        sustain: sustain.unwrap_or(15),
    };
    let events = detect(&series, &dc);
    #[derive(Serialize)]
    struct EventFile {
        metric: String,
        start_ts: i64,
        flagged_ts: i64,
        peak_prob: f64,
    }
    let rows: Vec<EventFile> = events
        .iter()
        .map(|e| EventFile {
            metric: e.metric.clone(),
            start_ts: e.start_ts * 60,
            flagged_ts: e.flagged_ts * 60,
            peak_prob: e.peak_prob,
        })
        .collect();
    std::fs::write(out.join("events.json"), serde_json::to_string_pretty(&rows)?)?;
    println!("{} window scores, {} events", forecasts.len(), events.len());
    Ok(())
}

pub fn cmd_evaluate(
    checkpoint: &Path,
    data: &Path,
    alerts: &Path,
    schema: &Path,
    truth: &Path,
    out: &Path,
    sustain: Option<usize>,
) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let prep = prepare_apply(data, Some(alerts), schema, &ckpt)?;
    let bundle = ModelBundle::from_checkpoint(ckpt)?;
    let cfg = bundle.config().clone();
    let truth = read_truth(truth)?;
    let ds = build_dataset(
        prep.frame.clone(),
        &prep.labels,
        &cfg.qos,
        cfg.window,
        cfg.gamma,
        1,
    )?;
    let (train_set, val_set, test_set) = split_chronological(&ds.samples, TRAIN_FRAC, VAL_FRAC)?;
    let mut cal: Vec<WindowedSample> = train_set;
    cal.extend(val_set);
    let train_forecasts = forecast_samples(&bundle, &ds, &cal)?;
    let test_forecasts = forecast_samples(&bundle, &ds, &test_set)?;
    let report = eval::evaluate(
        &bundle,
        &train_forecasts,
        &prep.labels,
        &test_forecasts,
        &prep.labels,
        &truth,
        &[95.0, 97.0, 99.0],
        sustain.unwrap_or(15),
    )?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
    let mttd: Vec<String> = report
        .mttd_reduction
        .iter()
        .map(|r| match r {
            Some(v) => format!("{v:.3}"),
            None => "-".into(),
        })
        .collect();
    println!(
        "auc_pr={:.4} f1@theta*={:.4} mttd=[{}] fp_runs={}",
        report.auc_pr,
        report.prf_at_theta.f1,
        mttd.join(", "),
        report.false_positive_runs
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    MdnOnly,
    ClfOnly,
}

impl Variant {
    fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::MdnOnly => "mdn_only",
            Variant::ClfOnly => "clf_only",
        }
    }
}

/// One ablation cell: train on the scenario, calibrate on the pre-test
/// scores, report test AUC-PR and F1.
pub fn run_cell(
    scen: &synth::Scenario,
    prep: &Prepared,
    base: &ModelConfig,
    opts: &TrainOptions,
    stride: usize,
    variant: Variant,
) -> Result<(f64, f64)> {
    let mut cfg = base.clone();
    match variant {
        Variant::Full => {}
        Variant::MdnOnly => cfg.lambda = 0.0,
        Variant::ClfOnly => cfg.nll_weight = 0.0,
    }
    let _ = scen;
    let ds = build_dataset(
        prep.frame.clone(),
        &prep.labels,
        &cfg.qos,
        cfg.window,
        cfg.gamma,
        stride,
    )?;
    let (train_set, val_set, test_set) = split_chronological(&ds.samples, TRAIN_FRAC, VAL_FRAC)?;
    let (store, _) = train(&cfg, &ds, &train_set, &val_set, &opts.clone())?;
    let ckpt = Checkpoint {
        version: 1,
        config: cfg.clone(),
        metric_names: prep.frame.columns.iter().map(|c| c.name.clone()).collect(),
        stats: prep.stats.clone(),
        label_params: LabelParams::default(),
        tau_raw: prep.tau_raw.clone(),
        train_qos_sorted: prep.train_qos_sorted.clone(),
        theta: None,
        youden_j: None,
        params: Checkpoint::from_store(&store),
    };
    let bundle = ModelBundle::from_checkpoint(ckpt)?;
    let mut cal = train_set;
    cal.extend(val_set);
    let cal_fc = forecast_samples(&bundle, &ds, &cal)?;
    let test_fc = forecast_samples(&bundle, &ds, &test_set)?;
    let (cal_series, test_series) = if variant == Variant::ClfOnly {
        (
            clf_prob_series(&cfg, &cal_fc),
            clf_prob_series(&cfg, &test_fc),
        )
    } else {
        (
            probs_from_forecasts(&bundle, &cal_fc, None)?,
            probs_from_forecasts(&bundle, &test_fc, None)?,
        )
    };
    let (cal_scores, cal_labels) = eval::pool(&cfg, &cal_series, &prep.labels)?;
    let (te_scores, te_labels) = eval::pool(&cfg, &test_series, &prep.labels)?;
    let (theta, _) = crate::infer::youden_threshold(&cal_scores, &cal_labels)?;
    let auc = eval::auc_pr(&te_scores, &te_labels)?;
    let f1 = eval::prf_at(&te_scores, &te_labels, theta).f1;
    Ok((auc, f1))
}

pub fn cmd_ablate(
    scenario: &Path,
    out: &Path,
    encoders: &[EncoderArg],
    losses: &[LossArg],
    gammas: &[usize],
    seeds: &[u64],
    flags: &ModelFlags,
) -> Result<()> {
    let scen_cfg = load_scenario(scenario)?;
    let scen = synth::generate(&scen_cfg)?;

    // write scenario files to a temp layout once, then reuse the prepared data
    let tmp = tempdir_path(out)?;
    write_metrics_csv(&scen.frame, &tmp.join("metrics.csv"))?;
    write_alerts_jsonl(&scen.alerts, &tmp.join("alerts.jsonl"))?;
    write_schema(&scen.frame, &tmp.join("schema.json"))?;
    let params = LabelParams::default();
    let prep = prepare_fit(
        &tmp.join("metrics.csv"),
        &tmp.join("alerts.jsonl"),
        &tmp.join("schema.json"),
        &params,
    )?;

    let (base, opts, stride) = flags.resolve(prep.frame.n_cols(), prep.qos.clone())?;
    let mut csv = String::from("encoder,loss,gamma,variant,seed,auc_pr,f1\n");
    for &enc in encoders {
        for &loss in losses {
            for &gamma in gammas {
                for variant in [Variant::Full, Variant::MdnOnly, Variant::ClfOnly] {
                    for &seed in seeds {
                        let mut cfg = base.clone();
                        cfg.encoder = match enc {
                            EncoderArg::Bilstm => EncoderKind::Bilstm,
                            EncoderArg::Lstm => EncoderKind::Lstm,
                        };
                        cfg.loss = match loss {
                            LossArg::Evl => LossKind::Evl,
                            LossArg::Bce => LossKind::Bce,
                        };
                        cfg.gamma = gamma;
                        cfg.seed = seed;
                        let (auc, f1) = run_cell(&scen, &prep, &cfg, &opts, stride, variant)?;
                        let row = format!(
                            "{},{},{},{},{},{auc:.6},{f1:.6}\n",
                            match enc {
                                EncoderArg::Bilstm => "bilstm",
                                EncoderArg::Lstm => "lstm",
                            },
                            match loss {
                                LossArg::Evl => "evl",
                                LossArg::Bce => "bce",
                            },
                            gamma,
                            variant.name(),
                            seed,
                        );
                        log("info", row.trim_end());
                        csv.push_str(&row);
                    }
                }
            }
        }
    }
    std::fs::remove_dir_all(&tmp).ok();
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(out, &csv)?;
    println!("{}", csv.trim_end());
    Ok(())
}

fn tempdir_path(near: &Path) -> Result<PathBuf> {
    let base = near
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let dir = base.join(format!(".ablate-work-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
