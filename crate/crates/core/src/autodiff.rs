//! Reverse-mode automatic differentiation over 2-D f64 tensors, plus the
//! Adam optimizer. The tape is rebuilt on every forward pass; backward walks
//! it in reverse and accumulates gradients into parameter leaves.
//!
//! Binary elementwise ops broadcast numpy-style along either axis (a dim of
//! 1 stretches); gradients are reduced back over the stretched axes.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named learnable tensor with its gradient slot.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

/// Ordered collection of parameters; order is stable and defines the
/// flattened layout used by the optimizer and gradient checker.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Array2<f64>) -> usize {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter `{name}`"
        );
        let grad = Array2::zeros(value.raw_dim());
        let idx = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad,
        });
        self.by_name.insert(name.to_string(), idx);
        idx
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
enum UnKind {
    Neg,
    Tanh,
    Sigmoid,
    Relu,
    Softplus,
    Exp,
    Log,
    Scale(f64),
    AddScalar(f64),
    PowConst(f64),
    Clamp(f64, f64),
}

enum Op {
    Leaf { param: Option<usize> },
    MatMul(Var, Var),
    Bin(BinKind, Var, Var),
    Un(UnKind, Var),
    SoftmaxRows(Var),
    LogSumExpRows(Var),
    LogSoftmaxRows(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize, usize),
    Dropout(Var),
    SumAll(Var),
    MeanAll(Var),
}

struct Node {
    value: Array2<f64>,
    grad: Array2<f64>,
    op: Op,
    /// Scaled keep-mask for dropout nodes.
    mask: Option<Array2<f64>>,
}

/// A single-use computation graph. Create, run a forward pass, call
/// `backward`, harvest gradients, drop.
pub struct Tape {
    nodes: Vec<Node>,
}

fn bcast_shape(a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    let d = |x: usize, y: usize| -> Result<usize> {
        if x == y || y == 1 {
            Ok(x)
        } else if x == 1 {
            Ok(y)
        } else {
            Err(Error::ShapeMismatch(format!(
                "cannot broadcast {a:?} with {b:?}"
            )))
        }
    };
    Ok((d(a.0, b.0)?, d(a.1, b.1)?))
}

fn bcast_get(x: &Array2<f64>, i: usize, j: usize) -> f64 {
    let (r, c) = x.dim();
    x[[if r == 1 { 0 } else { i }, if c == 1 { 0 } else { j }]]
}

/// Sum `g` back down to `shape` over any axes that were stretched.
fn reduce_to(g: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut out = g.clone();
    if shape.0 == 1 && g.dim().0 != 1 {
        out = out.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.dim().1 != 1 {
        out = out.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    out
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let grad = Array2::zeros(value.raw_dim());
        self.nodes.push(Node {
            value,
            grad,
            op,
            mask: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].grad
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Constant leaf (no parameter attached).
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf { param: None })
    }

    /// Parameter leaf; after `backward` its gradient can be harvested into
    /// the store with `accumulate_param_grads`.
    pub fn param(&mut self, store: &ParamStore, idx: usize) -> Var {
        self.push(store.get(idx).value.clone(), Op::Leaf { param: Some(idx) })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.nodes[a.0].value.dim();
        let (br, bc) = self.nodes[b.0].value.dim();
        if ac != br {
            return Err(Error::ShapeMismatch(format!(
                "matmul {ar}x{ac} . {br}x{bc}"
            )));
        }
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    fn bin(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var> {
        let sa = self.nodes[a.0].value.dim();
        let sb = self.nodes[b.0].value.dim();
        let (r, c) = bcast_shape(sa, sb)?;
        let mut out = Array2::zeros((r, c));
        {
            let va = &self.nodes[a.0].value;
            let vb = &self.nodes[b.0].value;
            for i in 0..r {
                for j in 0..c {
                    let x = bcast_get(va, i, j);
                    let y = bcast_get(vb, i, j);
                    out[[i, j]] = match kind {
                        BinKind::Add => x + y,
                        BinKind::Sub => x - y,
                        BinKind::Mul => x * y,
                        BinKind::Div => x / y,
                    };
                }
            }
        }
        Ok(self.push(out, Op::Bin(kind, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(BinKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(BinKind::Div, a, b)
    }

    fn un(&mut self, kind: UnKind, a: Var) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        if matches!(kind, UnKind::Log) && va.iter().any(|&x| x <= 0.0) {
            return Err(Error::DomainError("log of non-positive value".into()));
        }
        let out = va.mapv(|x| match kind {
            UnKind::Neg => -x,
            UnKind::Tanh => x.tanh(),
            UnKind::Sigmoid => sigmoid(x),
            UnKind::Relu => x.max(0.0),
            UnKind::Softplus => softplus(x),
            UnKind::Exp => x.exp(),
            UnKind::Log => x.ln(),
            UnKind::Scale(c) => c * x,
            UnKind::AddScalar(c) => x + c,
            UnKind::PowConst(p) => x.powf(p),
            UnKind::Clamp(lo, hi) => x.clamp(lo, hi),
        });
        Ok(self.push(out, Op::Un(kind, a)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.un(UnKind::Neg, a).unwrap()
    }
    pub fn tanh(&mut self, a: Var) -> Var {
        self.un(UnKind::Tanh, a).unwrap()
    }
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.un(UnKind::Sigmoid, a).unwrap()
    }
    pub fn relu(&mut self, a: Var) -> Var {
        self.un(UnKind::Relu, a).unwrap()
    }
    pub fn softplus(&mut self, a: Var) -> Var {
        self.un(UnKind::Softplus, a).unwrap()
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.un(UnKind::Exp, a).unwrap()
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.un(UnKind::Log, a)
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.un(UnKind::Scale(c), a).unwrap()
    }
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.un(UnKind::AddScalar(c), a).unwrap()
    }
    pub fn pow_const(&mut self, a: Var, p: f64) -> Var {
        self.un(UnKind::PowConst(p), a).unwrap()
    }
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.un(UnKind::Clamp(lo, hi), a).unwrap()
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let mut out = v.clone();
        for mut row in out.rows_mut() {
            let mx = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - mx).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Row-wise logsumexp, shape (rows, 1). Shift-stable.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let r = v.dim().0;
        let mut out = Array2::zeros((r, 1));
        for (i, row) in v.rows().into_iter().enumerate() {
            let mx = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let s: f64 = row.iter().map(|&x| (x - mx).exp()).sum();
            out[[i, 0]] = mx + s.ln();
        }
        self.push(out, Op::LogSumExpRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let mut out = v.clone();
        for mut row in out.rows_mut() {
            let mx = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        if va.dim().0 != vb.dim().0 {
            return Err(Error::ShapeMismatch(format!(
                "concat rows {} vs {}",
                va.dim().0,
                vb.dim().0
            )));
        }
        let v = ndarray::concatenate(Axis(1), &[va.view(), vb.view()]).unwrap();
        Ok(self.push(v, Op::ConcatCols(a, b)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.nodes[a.0]
            .value
            .slice(ndarray::s![.., start..end])
            .to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    /// In train mode, zeroes each element with probability p and scales
    /// survivors by 1/(1-p); eval mode is the identity.
    pub fn dropout(&mut self, a: Var, p: f64, train: bool, rng: &mut ChaCha8Rng) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout p must be in [0,1)");
        if !train || p == 0.0 {
            // identity through a scale node keeps the graph uniform
            return self.scale(a, 1.0);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = self.nodes[a.0]
            .value
            .mapv(|_| if rng.random::<f64>() < p { 0.0 } else { keep });
        let v = &self.nodes[a.0].value * &mask;
        let var = self.push(v, Op::Dropout(a));
        self.nodes[var.0].mask = Some(mask);
        var
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len() as f64;
        let s = self.nodes[a.0].value.sum() / n;
        self.push(Array2::from_elem((1, 1), s), Op::MeanAll(a))
    }

    /// Reverse pass from a scalar loss. Gradients accumulate; repeated calls
    /// without re-zeroing add up.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let dim = self.nodes[loss.0].value.dim();
        if dim != (1, 1) {
            return Err(Error::NotScalar(dim.0, dim.1));
        }
        self.nodes[loss.0].grad[[0, 0]] += 1.0;
        for i in (0..=loss.0).rev() {
            // Split borrow: take grad out, write parents, put back.
            let g = std::mem::replace(&mut self.nodes[i].grad, Array2::zeros((0, 0)));
            self.backprop_node(i, &g)?;
            self.nodes[i].grad = g;
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &Array2<f64>) -> Result<()> {
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let ga = g.dot(&self.nodes[b.0].value.t());
                let gb = self.nodes[a.0].value.t().dot(g);
                self.nodes[a.0].grad += &ga;
                self.nodes[b.0].grad += &gb;
            }
            Op::Bin(kind, a, b) => {
                let (kind, a, b) = (*kind, *a, *b);
                let sa = self.nodes[a.0].value.dim();
                let sb = self.nodes[b.0].value.dim();
                let (r, c) = g.dim();
                let mut ga = Array2::zeros((r, c));
                let mut gb = Array2::zeros((r, c));
                {
                    let va = &self.nodes[a.0].value;
                    let vb = &self.nodes[b.0].value;
                    for i in 0..r {
                        for j in 0..c {
                            let gij = g[[i, j]];
                            let x = bcast_get(va, i, j);
                            let y = bcast_get(vb, i, j);
                            match kind {
                                BinKind::Add => {
                                    ga[[i, j]] = gij;
                                    gb[[i, j]] = gij;
                                }
                                BinKind::Sub => {
                                    ga[[i, j]] = gij;
                                    gb[[i, j]] = -gij;
                                }
                                BinKind::Mul => {
                                    ga[[i, j]] = gij * y;
                                    gb[[i, j]] = gij * x;
                                }
                                BinKind::Div => {
                                    ga[[i, j]] = gij / y;
                                    gb[[i, j]] = -gij * x / (y * y);
                                }
                            }
                        }
                    }
                }
                self.nodes[a.0].grad += &reduce_to(&ga, sa);
                self.nodes[b.0].grad += &reduce_to(&gb, sb);
            }
            Op::Un(kind, a) => {
                let (kind, a) = (*kind, *a);
                let x = &self.nodes[a.0].value;
                let y = &self.nodes[i].value;
                let gx = match kind {
                    UnKind::Neg => g.mapv(|v| -v),
                    UnKind::Tanh => g * &y.mapv(|v| 1.0 - v * v),
                    UnKind::Sigmoid => g * &y.mapv(|v| v * (1.0 - v)),
                    UnKind::Relu => {
                        let mut out = g.clone();
                        ndarray::Zip::from(&mut out).and(x).for_each(|o, &xv| {
                            if xv <= 0.0 {
                                *o = 0.0;
                            }
                        });
                        out
                    }
                    UnKind::Softplus => g * &x.mapv(sigmoid),
                    UnKind::Exp => g * y,
                    UnKind::Log => g / x,
                    UnKind::Scale(c) => g.mapv(|v| c * v),
                    UnKind::AddScalar(_) => g.clone(),
                    UnKind::PowConst(p) => g * &x.mapv(|v| p * v.powf(p - 1.0)),
                    UnKind::Clamp(lo, hi) => {
                        let mut out = g.clone();
                        ndarray::Zip::from(&mut out).and(x).for_each(|o, &xv| {
                            if xv <= lo || xv >= hi {
                                *o = 0.0;
                            }
                        });
                        out
                    }
                };
                self.nodes[a.0].grad += &gx;
            }
            Op::SoftmaxRows(a) => {
                let a = *a;
                let y = &self.nodes[i].value;
                let mut gx = g * y;
                for (mut grow, yrow) in gx.rows_mut().into_iter().zip(y.rows()) {
                    // grow currently holds g*y; subtract y * sum(g*y) per row
                    let s: f64 = grow.sum();
                    for (gv, yv) in grow.iter_mut().zip(yrow.iter()) {
                        *gv -= s * yv;
                    }
                }
                self.nodes[a.0].grad += &gx;
            }
            Op::LogSumExpRows(a) => {
                let a = *a;
                let x = &self.nodes[a.0].value;
                let lse = &self.nodes[i].value;
                let mut gx = Array2::zeros(x.raw_dim());
                for ((mut grow, xrow), (gi, li)) in gx
                    .rows_mut()
                    .into_iter()
                    .zip(x.rows())
                    .zip(g.column(0).iter().zip(lse.column(0).iter()))
                {
                    for (gv, xv) in grow.iter_mut().zip(xrow.iter()) {
                        *gv = gi * (xv - li).exp();
                    }
                }
                self.nodes[a.0].grad += &gx;
            }
            Op::LogSoftmaxRows(a) => {
                let a = *a;
                let y = &self.nodes[i].value; // log softmax
                let mut gx = g.clone();
                for (mut grow, yrow) in gx.rows_mut().into_iter().zip(y.rows()) {
                    let s: f64 = grow.sum();
                    for (gv, yv) in grow.iter_mut().zip(yrow.iter()) {
                        *gv -= s * yv.exp();
                    }
                }
                self.nodes[a.0].grad += &gx;
            }
            Op::ConcatCols(a, b) => {
                let (a, b) = (*a, *b);
                let ca = self.nodes[a.0].value.dim().1;
                let ga = g.slice(ndarray::s![.., ..ca]).to_owned();
                let gb = g.slice(ndarray::s![.., ca..]).to_owned();
                self.nodes[a.0].grad += &ga;
                self.nodes[b.0].grad += &gb;
            }
            Op::SliceCols(a, start, end) => {
                let (a, start, end) = (*a, *start, *end);
                let mut ga = self.nodes[a.0]
                    .grad
                    .slice_mut(ndarray::s![.., start..end]);
                ga += g;
            }
            Op::Dropout(a) => {
                let a = *a;
                let mask = self.nodes[i].mask.as_ref().unwrap().clone();
                self.nodes[a.0].grad += &(g * &mask);
            }
            Op::SumAll(a) => {
                let a = *a;
                let gi = g[[0, 0]];
                self.nodes[a.0].grad += gi;
            }
            Op::MeanAll(a) => {
                let a = *a;
                let n = self.nodes[a.0].value.len() as f64;
                self.nodes[a.0].grad += g[[0, 0]] / n;
            }
        }
        Ok(())
    }

    /// Copy (accumulate) parameter-leaf gradients back into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            if let Op::Leaf { param: Some(idx) } = node.op {
                store.get_mut(idx).grad += &node.grad;
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a ParamStore.
pub struct AdamState {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    pub step_count: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(store: &ParamStore, hyper: AdamHyper) -> AdamState {
        AdamState {
            m: store.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect(),
            v: store.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect(),
            step_count: 0,
            hyper,
        }
    }

    /// One in-place update. Gradients are left untouched; callers zero them.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step_count += 1;
        let t = self.step_count as f64;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powf(t);
        let bc2 = 1.0 - h.beta2.powf(t);
        for (idx, p) in store.params.iter_mut().enumerate() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = h.beta1 * *m + (1.0 - h.beta1) * g;
                    *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w -= h.lr * mhat / (vhat.sqrt() + h.eps);
                });
        }
    }
}

#[derive(Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (param name, flat index, analytic, numeric) for entries over tol.
    pub failures: Vec<(String, usize, f64, f64)>,
    pub pass: bool,
}

/// Compare analytic gradients (already populated in `store.grad`) against
/// central finite differences of `f`. The relative-error denominator is
/// floored at 1e-2 so near-zero gradients are judged on absolute error.
pub fn grad_check<F>(
    store: &mut ParamStore,
    mut f: F,
    h: f64,
    tol: f64,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut max_rel = 0.0f64;
    let mut failures = Vec::new();
    for p_idx in 0..store.len() {
        let n = store.get(p_idx).value.len();
        for k in 0..n {
            let orig = store.get(p_idx).value.as_slice().unwrap()[k];
            store.get_mut(p_idx).value.as_slice_mut().unwrap()[k] = orig + h;
            let fp = f(store);
            store.get_mut(p_idx).value.as_slice_mut().unwrap()[k] = orig - h;
            let fm = f(store);
            store.get_mut(p_idx).value.as_slice_mut().unwrap()[k] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = store.get(p_idx).grad.as_slice().unwrap()[k];
            let denom = analytic.abs().max(numeric.abs()).max(1e-2);
            let rel = (analytic - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
            if rel > tol {
                failures.push((store.get(p_idx).name.clone(), k, analytic, numeric));
            }
        }
    }
    GradCheckReport {
        max_rel_err: max_rel,
        failures,
        pass: max_rel <= tol,
    }
}

/// Derive a deterministic per-purpose RNG from a base seed. Purposes are
/// mapped to distinct ChaCha streams so adding a consumer does not disturb
/// the draws of another.
pub fn seeded_rng(seed: u64, purpose: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose.into());
    rng
}
