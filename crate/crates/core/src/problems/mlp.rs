use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::data::Dataset;
use super::HvpOracle;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// Second derivative taken as zero everywhere.
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// `σ'(z)` given `z` and `a = σ(z)`.
    fn d1(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn d2(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => -2.0 * a * (1.0 - a * a),
            Activation::Relu => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    /// `½‖z − y‖²` against one-hot targets, or against the raw label when the
    /// output width is 1.
    Squared,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Self::Tanh),
            "relu" => Ok(Self::Relu),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Tanh => "tanh",
            Self::Relu => "relu",
        })
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_entropy" => Ok(Self::CrossEntropy),
            "squared" => Ok(Self::Squared),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::CrossEntropy => "cross_entropy",
            Self::Squared => "squared",
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: Option<usize>,
}

/// Fully connected network trained on a [`Dataset`] with mean minibatch loss.
///
/// Parameters are laid out layer by layer: the weight matrix (`out × in`,
/// row-major) followed by the bias when enabled.
#[derive(Debug, Clone)]
pub struct MlpProblem {
    widths: Vec<usize>,
    activation: Activation,
    loss: LossKind,
    data: Dataset,
    layers: Vec<Layer>,
    num_params: usize,
}

/// Forward-pass record for one sample. `a[0]` is the input, `a[j+1] = σ(z[j])`
/// for hidden layers and `z[L−1]` holds the logits.
struct Trace {
    a: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
}

impl MlpProblem {
    pub fn new(
        widths: Vec<usize>,
        activation: Activation,
        loss: LossKind,
        data: Dataset,
        bias: bool,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Validation(format!(
                "layer widths {widths:?} need at least two positive entries"
            )));
        }
        if widths[0] != data.num_features() {
            return Err(Error::Dimension(format!(
                "input width {} but data has {} features",
                widths[0],
                data.num_features()
            )));
        }
        let out = *widths.last().unwrap();
        let classes_ok = match loss {
            LossKind::CrossEntropy => out >= data.num_classes() && out >= 2,
            LossKind::Squared => out == 1 || out >= data.num_classes(),
        };
        if !classes_ok {
            return Err(Error::Dimension(format!(
                "output width {out} cannot represent {} classes",
                data.num_classes()
            )));
        }
        let mut layers = Vec::new();
        let mut off = 0;
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w = off;
            off += fan_in * fan_out;
            let b = bias.then(|| {
                let b = off;
                off += fan_out;
                b
            });
            layers.push(Layer {
                fan_in,
                fan_out,
                w,
                b,
            });
        }
        Ok(Self {
            widths,
            activation,
            loss,
            data,
            layers,
            num_params: off,
        })
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn full_batch(&self) -> Vec<usize> {
        (0..self.data.len()).collect()
    }

    /// Named contiguous parameter ranges: `layer{i}.weight` and `layer{i}.bias`.
    pub fn param_blocks(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), l.w..l.w + l.fan_in * l.fan_out));
            if let Some(b) = l.b {
                out.push((format!("layer{i}.bias"), b..b + l.fan_out));
            }
        }
        out
    }

    /// Weights drawn from `N(0, 1/fan_in)`, biases zero.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; self.num_params];
        for l in &self.layers {
            let sd = 1.0 / (l.fan_in as f64).sqrt();
            for x in &mut theta[l.w..l.w + l.fan_in * l.fan_out] {
                *x = sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        theta
    }

    fn check(&self, theta: &[f64], batch: &[usize]) -> Result<()> {
        if theta.len() != self.num_params {
            return Err(Error::Dimension(format!(
                "parameter vector of length {}, model has {}",
                theta.len(),
                self.num_params
            )));
        }
        if batch.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        if let Some(&bad) = batch.iter().find(|&&i| i >= self.data.len()) {
            return Err(Error::Validation(format!(
                "batch index {bad} outside dataset of {} points",
                self.data.len()
            )));
        }
        Ok(())
    }

    fn forward(&self, theta: &[f64], x: &[f64]) -> Trace {
        let depth = self.layers.len();
        let mut a = vec![x.to_vec()];
        let mut z = Vec::with_capacity(depth);
        for (j, l) in self.layers.iter().enumerate() {
            let zj = affine(theta, l, &a[j]);
            if j + 1 < depth {
                a.push(zj.iter().map(|&v| self.activation.apply(v)).collect());
            }
            z.push(zj);
        }
        Trace { a, z }
    }

    /// Loss of one sample and `∂ℓ/∂logits`, plus the softmax when relevant.
    fn output_loss(&self, logits: &[f64], label: usize) -> (f64, Vec<f64>, Vec<f64>) {
        match self.loss {
            LossKind::CrossEntropy => {
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
                let total: f64 = exps.iter().sum();
                let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();
                let loss = total.ln() + m - logits[label];
                let mut delta = probs.clone();
                delta[label] -= 1.0;
                (loss, delta, probs)
            }
            LossKind::Squared => {
                let delta: Vec<f64> = if logits.len() == 1 {
                    vec![logits[0] - label as f64]
                } else {
                    logits
                        .iter()
                        .enumerate()
                        .map(|(c, &v)| v - if c == label { 1.0 } else { 0.0 })
                        .collect()
                };
                let loss = 0.5 * delta.iter().map(|d| d * d).sum::<f64>();
                (loss, delta, Vec::new())
            }
        }
    }

    /// Mean loss over `batch`.
    pub fn loss(&self, theta: &[f64], batch: &[usize]) -> Result<f64> {
        self.check(theta, batch)?;
        let total: f64 = batch
            .iter()
            .map(|&i| {
                let tr = self.forward(theta, self.data.point(i));
                self.output_loss(tr.z.last().unwrap(), self.data.labels()[i])
                    .0
            })
            .sum();
        Ok(total / batch.len() as f64)
    }

    /// Fraction of `batch` whose arg-max logit matches the label.
    pub fn accuracy(&self, theta: &[f64], batch: &[usize]) -> Result<f64> {
        self.check(theta, batch)?;
        let hits = batch
            .iter()
            .filter(|&&i| {
                let tr = self.forward(theta, self.data.point(i));
                let logits = tr.z.last().unwrap();
                let pred = if logits.len() == 1 {
                    usize::from(logits[0] > 0.5)
                } else {
                    argmax(logits)
                };
                pred == self.data.labels()[i]
            })
            .count();
        Ok(hits as f64 / batch.len() as f64)
    }

    /// Mean minibatch loss and its exact gradient by backpropagation.
    pub fn mlp_grad(&self, theta: &[f64], batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check(theta, batch)?;
        let mut grad = vec![0.0; self.num_params];
        let mut total = 0.0;
        for &i in batch {
            let tr = self.forward(theta, self.data.point(i));
            let (loss, mut delta, _) =
                self.output_loss(tr.z.last().unwrap(), self.data.labels()[i]);
            total += loss;
            for j in (0..self.layers.len()).rev() {
                let l = &self.layers[j];
                accumulate_outer(&mut grad, l, &delta, &tr.a[j], 1.0);
                if j > 0 {
                    let ga = affine_t(theta, l, &delta);
                    delta = ga
                        .iter()
                        .zip(&tr.z[j - 1])
                        .zip(&tr.a[j])
                        .map(|((g, &z), &a)| g * self.activation.d1(z, a))
                        .collect();
                }
            }
        }
        let scale = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok((total * scale, grad))
    }

    /// `H(θ)v` for the mean minibatch loss, as the directional derivative of
    /// the backpropagated gradient along `v` (forward-over-reverse).
    pub fn mlp_hvp(&self, theta: &[f64], v: &[f64], batch: &[usize]) -> Result<Vec<f64>> {
        self.check(theta, batch)?;
        if v.len() != self.num_params {
            return Err(Error::Dimension(format!(
                "direction of length {}, model has {}",
                v.len(),
                self.num_params
            )));
        }
        let depth = self.layers.len();
        let mut out = vec![0.0; self.num_params];
        for &i in batch {
            let tr = self.forward(theta, self.data.point(i));

            // Directional derivatives of the forward pass.
            let mut ra = vec![vec![0.0; self.widths[0]]];
            let mut rz = Vec::with_capacity(depth);
            for (j, l) in self.layers.iter().enumerate() {
                let mut r = affine(v, l, &tr.a[j]);
                let from_input = affine_no_bias(theta, l, &ra[j]);
                r.iter_mut().zip(&from_input).for_each(|(x, y)| *x += y);
                if j + 1 < depth {
                    ra.push(
                        r.iter()
                            .zip(&tr.z[j])
                            .zip(&tr.a[j + 1])
                            .map(|((rv, &z), &a)| rv * self.activation.d1(z, a))
                            .collect(),
                    );
                }
                rz.push(r);
            }

            let logits = tr.z.last().unwrap();
            let (_, mut delta, probs) = self.output_loss(logits, self.data.labels()[i]);
            let rz_out = rz.last().unwrap();
            let mut rdelta: Vec<f64> = match self.loss {
                LossKind::CrossEntropy => {
                    let s_rz: f64 = probs.iter().zip(rz_out).map(|(s, r)| s * r).sum();
                    probs
                        .iter()
                        .zip(rz_out)
                        .map(|(s, r)| s * (r - s_rz))
                        .collect()
                }
                LossKind::Squared => rz_out.clone(),
            };

            for j in (0..depth).rev() {
                let l = &self.layers[j];
                accumulate_outer(&mut out, l, &rdelta, &tr.a[j], 1.0);
                accumulate_outer_weights_only(&mut out, l, &delta, &ra[j]);
                if j > 0 {
                    let ga = affine_t(theta, l, &delta);
                    let mut rga = affine_t(v, l, &delta);
                    let from_r = affine_t(theta, l, &rdelta);
                    rga.iter_mut().zip(&from_r).for_each(|(x, y)| *x += y);
                    let (z, a, rzp) = (&tr.z[j - 1], &tr.a[j], &rz[j - 1]);
                    let mut nd = Vec::with_capacity(ga.len());
                    let mut nrd = Vec::with_capacity(ga.len());
                    for u in 0..ga.len() {
                        let d1 = self.activation.d1(z[u], a[u]);
                        let d2 = self.activation.d2(a[u]);
                        nd.push(d1 * ga[u]);
                        nrd.push(d2 * rzp[u] * ga[u] + d1 * rga[u]);
                    }
                    delta = nd;
                    rdelta = nrd;
                }
            }
        }
        let scale = 1.0 / batch.len() as f64;
        out.iter_mut().for_each(|g| *g *= scale);
        Ok(out)
    }
}

/// `W x + b` for layer `l` read from `params`.
fn affine(params: &[f64], l: &Layer, x: &[f64]) -> Vec<f64> {
    let mut z = affine_no_bias(params, l, x);
    if let Some(b) = l.b {
        z.iter_mut()
            .zip(&params[b..b + l.fan_out])
            .for_each(|(zi, bi)| *zi += bi);
    }
    z
}

fn affine_no_bias(params: &[f64], l: &Layer, x: &[f64]) -> Vec<f64> {
    (0..l.fan_out)
        .map(|o| {
            let row = &params[l.w + o * l.fan_in..l.w + (o + 1) * l.fan_in];
            row.iter().zip(x).map(|(w, xi)| w * xi).sum()
        })
        .collect()
}

/// `Wᵀ d` for layer `l`.
fn affine_t(params: &[f64], l: &Layer, d: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; l.fan_in];
    for (o, &dv) in d.iter().enumerate() {
        let row = &params[l.w + o * l.fan_in..l.w + (o + 1) * l.fan_in];
        out.iter_mut().zip(row).for_each(|(y, w)| *y += dv * w);
    }
    out
}

/// Adds `c · d aᵀ` to the weight gradient and `c · d` to the bias gradient.
fn accumulate_outer(grad: &mut [f64], l: &Layer, d: &[f64], a: &[f64], c: f64) {
    for (o, &dv) in d.iter().enumerate() {
        let row = &mut grad[l.w + o * l.fan_in..l.w + (o + 1) * l.fan_in];
        row.iter_mut().zip(a).for_each(|(g, ai)| *g += c * dv * ai);
    }
    if let Some(b) = l.b {
        grad[b..b + l.fan_out]
            .iter_mut()
            .zip(d)
            .for_each(|(g, dv)| *g += c * dv);
    }
}

fn accumulate_outer_weights_only(grad: &mut [f64], l: &Layer, d: &[f64], a: &[f64]) {
    for (o, &dv) in d.iter().enumerate() {
        let row = &mut grad[l.w + o * l.fan_in..l.w + (o + 1) * l.fan_in];
        row.iter_mut().zip(a).for_each(|(g, ai)| *g += dv * ai);
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        })
        .0
}

/// An [`MlpProblem`] restricted to a fixed batch, usable wherever an
/// [`HvpOracle`] is expected.
#[derive(Debug, Clone)]
pub struct MlpOracle<'a> {
    problem: &'a MlpProblem,
    batch: Vec<usize>,
}

impl<'a> MlpOracle<'a> {
    pub fn new(problem: &'a MlpProblem, batch: Vec<usize>) -> Result<Self> {
        problem.check(&vec![0.0; problem.num_params()], &batch)?;
        Ok(Self { problem, batch })
    }

    pub fn batch(&self) -> &[usize] {
        &self.batch
    }
}

impl HvpOracle for MlpOracle<'_> {
    fn dim(&self) -> usize {
        self.problem.num_params()
    }

    fn loss_at(&self, theta: &[f64]) -> Result<f64> {
        self.problem.loss(theta, &self.batch)
    }

    fn grad_at(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.problem.mlp_grad(theta, &self.batch)
    }

    fn hvp_at(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.problem.mlp_hvp(theta, v, &self.batch)
    }
}
