//! Python bindings for the outagewatch core library.
//!
//! The module mirrors the CLI pipeline (generate / train / calibrate /
//! predict) at file level and additionally exposes the pure numeric
//! operations (mixture tail probability, losses, threshold calibration)
//! for direct use from Python.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use outagewatch::cli;
use outagewatch::infer::{
    detect, forecast_batch, probs_from_forecasts, window_view, youden_threshold, DecisionConfig,
    ModelBundle,
};
use outagewatch::model::{self, MixtureParams};
use outagewatch::train::load_checkpoint;
use outagewatch::{eval, ingest};

fn err(e: outagewatch::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn mixture(alpha: Vec<f64>, mu: Vec<f64>, sigma: Vec<f64>) -> PyResult<MixtureParams> {
    let mix = MixtureParams { alpha, mu, sigma };
    mix.validate().map_err(err)?;
    Ok(mix)
}

/// P(y > tau) under the Gaussian mixture (alpha, mu, sigma).
#[pyfunction]
fn outage_probability(alpha: Vec<f64>, mu: Vec<f64>, sigma: Vec<f64>, tau: f64) -> PyResult<f64> {
    let mix = mixture(alpha, mu, sigma)?;
    outagewatch::infer::outage_probability(&mix, tau).map_err(err)
}

/// Negative log-likelihood of `y` under the Gaussian mixture.
#[pyfunction]
fn nll_loss(alpha: Vec<f64>, mu: Vec<f64>, sigma: Vec<f64>, y: f64) -> PyResult<f64> {
    let mix = mixture(alpha, mu, sigma)?;
    model::nll_loss(&mix, y).map_err(err)
}

/// Extreme value loss with class weights taken from the batch proportions.
#[pyfunction]
#[pyo3(signature = (p_hat, labels, delta = 2.0))]
fn evl_loss(p_hat: Vec<f64>, labels: Vec<f64>, delta: f64) -> PyResult<f64> {
    model::evl_loss(&p_hat, &labels, delta).map_err(err)
}

/// Extreme value loss with explicit class weights beta0 (extreme term)
/// and beta1 (normal term).
#[pyfunction]
fn evl_loss_weighted(
    p_hat: Vec<f64>,
    labels: Vec<f64>,
    delta: f64,
    beta0: f64,
    beta1: f64,
) -> f64 {
    model::evl_loss_weighted(&p_hat, &labels, delta, beta0, beta1)
}

/// Mean binary cross-entropy.
#[pyfunction]
fn bce_loss(p_hat: Vec<f64>, labels: Vec<f64>) -> PyResult<f64> {
    model::bce_loss(&p_hat, &labels).map_err(err)
}

/// Threshold maximizing Youden's J; returns (theta, J).
#[pyfunction]
fn youden(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<(f64, f64)> {
    youden_threshold(&scores, &labels).map_err(err)
}

/// Area under the precision-recall curve (average precision).
#[pyfunction]
fn auc_pr(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    eval::auc_pr(&scores, &labels).map_err(err)
}

/// Render a synthetic scenario (metrics.csv, alerts.jsonl, truth.json,
/// schema.json) into `out` from a scenario config JSON file.
#[pyfunction]
#[pyo3(signature = (config, out, seed = None, tune = false))]
fn generate(config: PathBuf, out: PathBuf, seed: Option<u64>, tune: bool) -> PyResult<()> {
    cli::cmd_generate(&config, &out, seed, tune).map_err(err)
}

/// Train a model on a scenario directory and write a checkpoint.
/// `config` is an optional JSON file with model/training fields.
#[pyfunction]
#[pyo3(signature = (data, alerts, schema, out, config = None, seed = None, gamma = None,
                    window = None, epochs = None, batch_size = None, stride = None,
                    hidden = None))]
#[allow(clippy::too_many_arguments)]
fn train(
    data: PathBuf,
    alerts: PathBuf,
    schema: PathBuf,
    out: PathBuf,
    config: Option<PathBuf>,
    seed: Option<u64>,
    gamma: Option<usize>,
    window: Option<usize>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    stride: Option<usize>,
    hidden: Option<usize>,
) -> PyResult<()> {
    let flags = cli::ModelFlags {
        config,
        seed,
        gamma,
        window,
        epochs,
        batch_size,
        stride,
        hidden,
        ..Default::default()
    };
    cli::cmd_train(&data, &alerts, &schema, &out, &flags).map_err(err)
}

/// Fit the decision threshold theta* by Youden's J on the pre-test split
/// and rewrite the checkpoint in place.
#[pyfunction]
fn calibrate(checkpoint: PathBuf, data: PathBuf, alerts: PathBuf, schema: PathBuf) -> PyResult<()> {
    cli::cmd_calibrate(&checkpoint, &data, &alerts, &schema).map_err(err)
}

/// A trained, calibrated model loaded from a checkpoint.
#[pyclass]
struct Model {
    bundle: ModelBundle,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Model> {
        let ckpt = load_checkpoint(&path).map_err(err)?;
        let bundle = ModelBundle::from_checkpoint(ckpt).map_err(err)?;
        Ok(Model { bundle })
    }

    #[getter]
    fn window(&self) -> usize {
        self.bundle.config().window
    }

    #[getter]
    fn gamma(&self) -> usize {
        self.bundle.config().gamma
    }

    #[getter]
    fn qos(&self) -> Vec<String> {
        self.bundle.config().qos.clone()
    }

    #[getter]
    fn theta(&self) -> Option<f64> {
        self.bundle.checkpoint.theta
    }

    /// Score a metrics file: returns per-QoS-metric
    /// {"metric", "timestamps", "probs"} dicts of outage tail probabilities
    /// plus the sustained outage events flagged at the model's theta*.
    #[pyo3(signature = (data, schema, threshold_t = None, sustain = 15))]
    fn predict<'py>(
        &self,
        py: Python<'py>,
        data: PathBuf,
        schema: PathBuf,
        threshold_t: Option<f64>,
        sustain: usize,
    ) -> PyResult<(Vec<Bound<'py, PyDict>>, Vec<Bound<'py, PyDict>>)> {
        let theta = self.bundle.checkpoint.theta.ok_or_else(|| {
            PyValueError::new_err("checkpoint not calibrated (run calibrate first)")
        })?;
        let prep =
            cli::prepare_apply(&data, None, &schema, &self.bundle.checkpoint).map_err(err)?;
        let cfg = self.bundle.config();
        let wins = ingest::window(&prep.frame, cfg.window, 1).map_err(err)?;
        let views: Vec<_> = wins
            .iter()
            .map(|w| (w.anchor_ts, window_view(&prep.frame, w.start, w.end)))
            .collect();
        let forecasts = forecast_batch(&self.bundle, &views).map_err(err)?;
        let series = probs_from_forecasts(&self.bundle, &forecasts, threshold_t).map_err(err)?;
        let dc = DecisionConfig {
            percentile: threshold_t.unwrap_or(self.bundle.checkpoint.label_params.percentile),
            tau_raw: self.bundle.checkpoint.tau_raw.clone(),
            theta,
            sustain,
        };
        let events = detect(&series, &dc);
        let mut score_dicts = Vec::new();
        for s in &series {
            let d = PyDict::new(py);
            d.set_item("metric", &s.metric)?;
            d.set_item(
                "timestamps",
                s.timestamps.iter().map(|t| t * 60).collect::<Vec<_>>(),
            )?;
            d.set_item("probs", &s.probs)?;
            score_dicts.push(d);
        }
        let mut event_dicts = Vec::new();
        for e in &events {
            let d = PyDict::new(py);
            d.set_item("metric", &e.metric)?;
            d.set_item("start_ts", e.start_ts * 60)?;
            d.set_item("flagged_ts", e.flagged_ts * 60)?;
            d.set_item("peak_prob", e.peak_prob)?;
            event_dicts.push(d);
        }
        Ok((score_dicts, event_dicts))
    }
}

#[pymodule]
fn outagewatch_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(outage_probability, m)?)?;
    m.add_function(wrap_pyfunction!(nll_loss, m)?)?;
    m.add_function(wrap_pyfunction!(evl_loss, m)?)?;
    m.add_function(wrap_pyfunction!(evl_loss_weighted, m)?)?;
    m.add_function(wrap_pyfunction!(bce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(youden, m)?)?;
    m.add_function(wrap_pyfunction!(auc_pr, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
