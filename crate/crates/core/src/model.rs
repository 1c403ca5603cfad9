//! The forecasting network: a shared (Bi)LSTM metric encoder feeding
//! per-QoS-metric mixture-density heads and extreme-event classifier heads,
//! with the NLL / EVL / BCE losses used to train them.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

pub const SIGMA_FLOOR: f64 = 1e-4;
pub const PROB_CLAMP: f64 = 1e-7;
const LN_2PI: f64 = 1.837877066409345483560659472811; // ln(2*pi)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Bilstm,
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Evl,
    Bce,
}

fn default_window() -> usize {
    60
}
fn default_gamma() -> usize {
    10
}
fn default_hidden() -> usize {
    64
}
fn default_dropout() -> f64 {
    0.2
}
fn default_components() -> usize {
    3
}
fn default_mdn_hidden() -> Vec<usize> {
    vec![200, 200]
}
fn default_clf_hidden() -> Vec<usize> {
    vec![20]
}
fn default_delta() -> f64 {
    2.0
}
fn default_one() -> f64 {
    1.0
}
fn default_encoder() -> EncoderKind {
    EncoderKind::Bilstm
}
fn default_loss() -> LossKind {
    LossKind::Evl
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_metrics: usize,
    pub qos: Vec<String>,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_gamma")]
    pub gamma: usize,
    #[serde(default = "default_encoder")]
    pub encoder: EncoderKind,
    #[serde(default = "default_hidden")]
    pub hidden_per_direction: usize,
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default = "default_mdn_hidden")]
    pub mdn_hidden: Vec<usize>,
    #[serde(default = "default_clf_hidden")]
    pub clf_hidden: Vec<usize>,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Multi-task weight on the classifier loss term.
    #[serde(default = "default_one")]
    pub lambda: f64,
    /// Weight on the NLL term; 0 trains the classifier alone.
    #[serde(default = "default_one")]
    pub nll_weight: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components < 1 {
            return Err(Error::InvalidConfig("components must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidConfig("dropout_p must be in [0,1)".into()));
        }
        if self.loss == LossKind::Evl && self.delta < 2.0 {
            return Err(Error::InvalidConfig(
                "delta must be >= 2 with the EVL loss".into(),
            ));
        }
        if self.gamma < 1 || self.window < 1 {
            return Err(Error::InvalidConfig("gamma and window must be >= 1".into()));
        }
        if self.qos.is_empty() {
            return Err(Error::InvalidConfig("at least one QoS metric".into()));
        }
        Ok(())
    }

    /// Width of the encoder output vector.
    pub fn encoding_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::Bilstm => 2 * self.hidden_per_direction,
            EncoderKind::Lstm => self.hidden_per_direction,
        }
    }
}

/// Per-QoS-metric mixture: alpha on the simplex, component means, and
/// standard deviations floored at SIGMA_FLOOR.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureParams {
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl MixtureParams {
    pub fn validate(&self) -> Result<()> {
        let c = self.alpha.len();
        if c == 0 || self.mu.len() != c || self.sigma.len() != c {
            return Err(Error::InvalidMixture("component count mismatch".into()));
        }
        let s: f64 = self.alpha.iter().sum();
        if (s - 1.0).abs() > 1e-9 || self.alpha.iter().any(|&a| a < 0.0) {
            return Err(Error::InvalidMixture("alpha not on the simplex".into()));
        }
        if self.sigma.iter().any(|&s| s < SIGMA_FLOOR) {
            return Err(Error::InvalidMixture("sigma below floor".into()));
        }
        Ok(())
    }
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() * 2.0 * s - s)
}

fn lstm_dir_params(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, input: usize, hidden: usize) {
    store.add(&format!("{prefix}.w_x"), xavier(rng, input, 4 * hidden));
    store.add(&format!("{prefix}.w_h"), xavier(rng, hidden, 4 * hidden));
    // forget-gate bias starts at 1
    let mut b = Array2::zeros((1, 4 * hidden));
    b.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
    store.add(&format!("{prefix}.b"), b);
}

fn mlp_params(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    input: usize,
    hidden: &[usize],
    output: usize,
) {
    let mut d = input;
    for (l, &h) in hidden.iter().enumerate() {
        store.add(&format!("{prefix}.l{l}.w"), xavier(rng, d, h));
        store.add(&format!("{prefix}.l{l}.b"), Array2::zeros((1, h)));
        d = h;
    }
    store.add(&format!("{prefix}.out.w"), xavier(rng, d, output));
    store.add(&format!("{prefix}.out.b"), Array2::zeros((1, output)));
}

/// Build all learnable tensors for the configured model, deterministically
/// from the config seed.
pub fn init_params(cfg: &ModelConfig) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = crate::autodiff::seeded_rng(cfg.seed, 1);
    let mut store = ParamStore::new();
    let h = cfg.hidden_per_direction;
    lstm_dir_params(&mut store, &mut rng, "enc.fwd", cfg.n_metrics, h);
    if cfg.encoder == EncoderKind::Bilstm {
        lstm_dir_params(&mut store, &mut rng, "enc.bwd", cfg.n_metrics, h);
    }
    let enc = cfg.encoding_dim();
    for q in &cfg.qos {
        mlp_params(
            &mut store,
            &mut rng,
            &format!("mdn.{q}"),
            enc,
            &cfg.mdn_hidden,
            3 * cfg.components,
        );
        mlp_params(&mut store, &mut rng, &format!("clf.{q}"), enc, &cfg.clf_hidden, 1);
    }
    Ok(store)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One LSTM direction over a batched sequence; `xs` holds one (B x |M|)
/// constant per timestep in scan order. Returns the final hidden state.
fn lstm_scan(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    xs: &[Var],
    batch: usize,
    hidden: usize,
) -> Result<Var> {
    let w_x = tape.param(store, store.index_of(&format!("{prefix}.w_x")).unwrap());
    let w_h = tape.param(store, store.index_of(&format!("{prefix}.w_h")).unwrap());
    let b = tape.param(store, store.index_of(&format!("{prefix}.b")).unwrap());
    let mut h = tape.constant(Array2::zeros((batch, hidden)));
    let mut c = tape.constant(Array2::zeros((batch, hidden)));
    for &x in xs {
        let xg = tape.matmul(x, w_x)?;
        let hg = tape.matmul(h, w_h)?;
        let sum = tape.add(xg, hg)?;
        let gates = tape.add(sum, b)?;
        let i_g = tape.slice_cols(gates, 0, hidden);
        let f_g = tape.slice_cols(gates, hidden, 2 * hidden);
        let g_g = tape.slice_cols(gates, 2 * hidden, 3 * hidden);
        let o_g = tape.slice_cols(gates, 3 * hidden, 4 * hidden);
        let i = tape.sigmoid(i_g);
        let f = tape.sigmoid(f_g);
        let g = tape.tanh(g_g);
        let o = tape.sigmoid(o_g);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        c = tape.add(fc, ig)?;
        let ct = tape.tanh(c);
        h = tape.mul(o, ct)?;
    }
    Ok(h)
}

/// Encode a batch of windows. Each element of `batch` is a (w x |M|) view;
/// rows are timesteps. Output is (B x encoding_dim).
pub fn encode_batch(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    batch: &[ArrayView2<f64>],
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    for x in batch {
        if x.dim() != (cfg.window, cfg.n_metrics) {
            return Err(Error::ShapeMismatch(format!(
                "window {:?}, expected ({}, {})",
                x.dim(),
                cfg.window,
                cfg.n_metrics
            )));
        }
    }
    // one constant per timestep, rows = batch entries
    let mut steps = Vec::with_capacity(cfg.window);
    for t in 0..cfg.window {
        let mut m = Array2::zeros((b, cfg.n_metrics));
        for (i, x) in batch.iter().enumerate() {
            m.row_mut(i).assign(&x.row(t));
        }
        steps.push(tape.constant(m));
    }
    let hid = cfg.hidden_per_direction;
    let fwd = lstm_scan(tape, store, "enc.fwd", &steps, b, hid)?;
    let h = match cfg.encoder {
        EncoderKind::Lstm => fwd,
        EncoderKind::Bilstm => {
            let rev: Vec<Var> = steps.iter().rev().copied().collect();
            let bwd = lstm_scan(tape, store, "enc.bwd", &rev, b, hid)?;
            tape.concat_cols(fwd, bwd)?
        }
    };
    Ok(tape.dropout(h, cfg.dropout_p, mode == Mode::Train, rng))
}

fn mlp_forward(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    n_hidden: usize,
    h: Var,
) -> Result<Var> {
    let mut cur = h;
    for l in 0..n_hidden {
        let w = tape.param(store, store.index_of(&format!("{prefix}.l{l}.w")).unwrap());
        let b = tape.param(store, store.index_of(&format!("{prefix}.l{l}.b")).unwrap());
        let mm = tape.matmul(cur, w)?;
        let z = tape.add(mm, b)?;
        cur = tape.relu(z);
    }
    let w = tape.param(store, store.index_of(&format!("{prefix}.out.w")).unwrap());
    let b = tape.param(store, store.index_of(&format!("{prefix}.out.b")).unwrap());
    let mm = tape.matmul(cur, w)?;
    tape.add(mm, b)
}

/// MDN head outputs on the tape: row-wise log alpha (B x C), mu (B x C), and
/// sigma (B x C, softplus + floor).
pub struct MdnVars {
    pub log_alpha: Var,
    pub mu: Var,
    pub sigma: Var,
}

pub fn mdn_head(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    metric: &str,
    h: Var,
) -> Result<MdnVars> {
    let c = cfg.components;
    let raw = mlp_forward(tape, store, &format!("mdn.{metric}"), cfg.mdn_hidden.len(), h)?;
    let alpha_raw = tape.slice_cols(raw, 0, c);
    let mu = tape.slice_cols(raw, c, 2 * c);
    let sigma_raw = tape.slice_cols(raw, 2 * c, 3 * c);
    let log_alpha = tape.log_softmax_rows(alpha_raw);
    let sp = tape.softplus(sigma_raw);
    let sigma = tape.add_scalar(sp, SIGMA_FLOOR);
    Ok(MdnVars { log_alpha, mu, sigma })
}

/// Classifier head: ReLU hidden layers, sigmoid output clamped to
/// [PROB_CLAMP, 1-PROB_CLAMP]. Shape (B x 1).
pub fn classifier_head(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    metric: &str,
    h: Var,
) -> Result<Var> {
    let logits = mlp_forward(tape, store, &format!("clf.{metric}"), cfg.clf_hidden.len(), h)?;
    let p = tape.sigmoid(logits);
    Ok(tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP))
}

/// Batch-mean mixture NLL on the tape: -logsumexp_c(log a_c - log s_c
/// - 0.5 ln 2pi - (y-mu_c)^2 / (2 s_c^2)). `y` is a (B x 1) constant.
pub fn nll_loss_var(tape: &mut Tape, mdn: &MdnVars, y: Var) -> Result<Var> {
    let diff = tape.sub(y, mdn.mu)?; // broadcast col -> (B x C)
    let d2 = tape.mul(diff, diff)?;
    let s2 = tape.mul(mdn.sigma, mdn.sigma)?;
    let s2x2 = tape.scale(s2, 2.0);
    let quad = tape.div(d2, s2x2)?;
    let log_sigma = tape.log(mdn.sigma)?;
    let a = tape.sub(mdn.log_alpha, log_sigma)?;
    let b = tape.add_scalar(a, -0.5 * LN_2PI);
    let logp_terms = tape.sub(b, quad)?;
    let ll = tape.logsumexp_rows(logp_terms);
    let mean = tape.mean_all(ll);
    Ok(tape.neg(mean))
}

/// Extreme Value Loss on the tape. beta0/beta1 come from the current batch's
/// label proportions; a batch with one class absent zeroes that class's
/// weight (the term vanishes anyway).
pub fn evl_loss_var(tape: &mut Tape, p_hat: Var, labels: &[f64], delta: f64) -> Result<Var> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let pos = labels.iter().sum::<f64>();
    let beta1 = pos / n as f64; // proportion of extreme events
    let beta0 = 1.0 - beta1; // proportion of normal events
    let y = tape.constant(Array2::from_shape_vec((n, 1), labels.to_vec()).unwrap());
    let one_minus_y = tape.constant(Array2::from_shape_vec(
        (n, 1),
        labels.iter().map(|&l| 1.0 - l).collect(),
    )
    .unwrap());

    // beta0 * (1 - p/delta)^delta * y * log p
    let pd = tape.scale(p_hat, -1.0 / delta);
    let b1m = tape.add_scalar(pd, 1.0);
    let bracket_pos = tape.pow_const(b1m, delta);
    let log_p = tape.log(p_hat)?;
    let t1a = tape.mul(bracket_pos, y)?;
    let t1b = tape.mul(t1a, log_p)?;
    let t1 = tape.scale(t1b, beta0);

    // beta1 * (1 - (1-p)/delta)^delta * (1-y) * log(1-p)
    let neg_p = tape.scale(p_hat, 1.0 / delta);
    let q = tape.add_scalar(neg_p, 1.0 - 1.0 / delta); // 1 - (1-p)/delta
    let bracket_neg = tape.pow_const(q, delta);
    let one_minus_p = {
        let np = tape.scale(p_hat, -1.0);
        tape.add_scalar(np, 1.0)
    };
    let log_1mp = tape.log(one_minus_p)?;
    let t2a = tape.mul(bracket_neg, one_minus_y)?;
    let t2b = tape.mul(t2a, log_1mp)?;
    let t2 = tape.scale(t2b, beta1);

    let s = tape.add(t1, t2)?;
    let mean = tape.mean_all(s);
    Ok(tape.neg(mean))
}

/// Mean binary cross-entropy on the tape.
pub fn bce_loss_var(tape: &mut Tape, p_hat: Var, labels: &[f64]) -> Result<Var> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let y = tape.constant(Array2::from_shape_vec((n, 1), labels.to_vec()).unwrap());
    let one_minus_y = tape.constant(Array2::from_shape_vec(
        (n, 1),
        labels.iter().map(|&l| 1.0 - l).collect(),
    )
    .unwrap());
    let log_p = tape.log(p_hat)?;
    let np = tape.scale(p_hat, -1.0);
    let one_minus_p = tape.add_scalar(np, 1.0);
    let log_1mp = tape.log(one_minus_p)?;
    let t1 = tape.mul(y, log_p)?;
    let t2 = tape.mul(one_minus_y, log_1mp)?;
    let s = tape.add(t1, t2)?;
    let mean = tape.mean_all(s);
    Ok(tape.neg(mean))
}

/// Full multi-task forward + loss over a batch. Returns the total loss var
/// plus the NLL and classifier parts for reporting.
pub struct BatchLoss {
    pub total: Var,
    pub nll: Var,
    pub clf: Var,
}

#[allow(clippy::too_many_arguments)]
pub fn multitask_loss(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    batch: &[ArrayView2<f64>],
    y_true: &Array2<f64>,    // (B x n_qos), normalized target values
    labels: &Array2<f64>,    // (B x n_qos), 0/1 proxy labels
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<BatchLoss> {
    let h = encode_batch(tape, store, cfg, batch, mode, rng)?;
    let n = batch.len();
    let nq = cfg.qos.len() as f64;
    let mut nll_sum: Option<Var> = None;
    let mut clf_sum: Option<Var> = None;
    for (qi, q) in cfg.qos.iter().enumerate() {
        let mdn = mdn_head(tape, store, cfg, q, h)?;
        let yv = tape.constant(Array2::from_shape_vec(
            (n, 1),
            (0..n).map(|i| y_true[[i, qi]]).collect(),
        )
        .unwrap());
        let nll = nll_loss_var(tape, &mdn, yv)?;
        nll_sum = Some(match nll_sum {
            None => nll,
            Some(acc) => tape.add(acc, nll)?,
        });
        let p = classifier_head(tape, store, cfg, q, h)?;
        let lab: Vec<f64> = (0..n).map(|i| labels[[i, qi]]).collect();
        let cl = match cfg.loss {
            LossKind::Evl => evl_loss_var(tape, p, &lab, cfg.delta)?,
            LossKind::Bce => bce_loss_var(tape, p, &lab)?,
        };
        clf_sum = Some(match clf_sum {
            None => cl,
            Some(acc) => tape.add(acc, cl)?,
        });
    }
    let nll_mean = tape.scale(nll_sum.unwrap(), 1.0 / nq);
    let clf_mean = tape.scale(clf_sum.unwrap(), 1.0 / nq);
    let a = tape.scale(nll_mean, cfg.nll_weight);
    let b = tape.scale(clf_mean, cfg.lambda);
    let total = tape.add(a, b)?;
    Ok(BatchLoss {
        total,
        nll: nll_mean,
        clf: clf_mean,
    })
}

// ---------------------------------------------------------------------------
// Pure (tape-free) loss evaluations, used by inference and as a second route
// in tests.

/// Mixture NLL of a single observation, logsumexp-stabilized.
pub fn nll_loss(mix: &MixtureParams, y: f64) -> Result<f64> {
    mix.validate()?;
    let mut terms: Vec<f64> = Vec::with_capacity(mix.alpha.len());
    for c in 0..mix.alpha.len() {
        let a = mix.alpha[c];
        if a == 0.0 {
            continue;
        }
        let s = mix.sigma[c];
        let z = (y - mix.mu[c]) / s;
        terms.push(a.ln() - s.ln() - 0.5 * LN_2PI - 0.5 * z * z);
    }
    let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln();
    Ok(-lse)
}

/// Scalar EVL over a batch, mirroring `evl_loss_var`.
pub fn evl_loss(p_hat: &[f64], labels: &[f64], delta: f64) -> Result<f64> {
    let n = p_hat.len();
    if n == 0 || labels.len() != n {
        return Err(Error::EmptyBatch);
    }
    let pos = labels.iter().sum::<f64>();
    let beta1 = pos / n as f64;
    let beta0 = 1.0 - beta1;
    let mut s = 0.0;
    for (&p, &y) in p_hat.iter().zip(labels) {
        s += beta0 * (1.0 - p / delta).powf(delta) * y * p.ln()
            + beta1 * (1.0 - (1.0 - p) / delta).powf(delta) * (1.0 - y) * (1.0 - p).ln();
    }
    Ok(-s / n as f64)
}

/// EVL with explicit class weights; used in tests for single-sample
/// substitution values and the large-delta limit.
pub fn evl_loss_weighted(p_hat: &[f64], labels: &[f64], delta: f64, beta0: f64, beta1: f64) -> f64 {
    let n = p_hat.len() as f64;
    let mut s = 0.0;
    for (&p, &y) in p_hat.iter().zip(labels) {
        s += beta0 * (1.0 - p / delta).powf(delta) * y * p.ln()
            + beta1 * (1.0 - (1.0 - p) / delta).powf(delta) * (1.0 - y) * (1.0 - p).ln();
    }
    -s / n
}

/// Scalar mean BCE.
pub fn bce_loss(p_hat: &[f64], labels: &[f64]) -> Result<f64> {
    let n = p_hat.len();
    if n == 0 || labels.len() != n {
        return Err(Error::EmptyBatch);
    }
    let mut s = 0.0;
    for (&p, &y) in p_hat.iter().zip(labels) {
        s += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(-s / n as f64)
}
