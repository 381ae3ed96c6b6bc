//! Minimal feed-forward network: two tanh hidden layers, linear output,
//! analytic backpropagation, Adam with L2 weight decay, and frozen
//! z-score normalization. Parameters live in one flat vector with a
//! deterministic layout (W1, b1, W2, b2, W3, b3, all row-major), so
//! gradients and optimizer state are plain vectors too.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAX_HIDDEN: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub output: usize,
}

impl NetDims {
    pub fn new(input: usize, hidden1: usize, hidden2: usize, output: usize) -> Self {
        Self {
            input,
            hidden1,
            hidden2,
            output,
        }
    }

    pub fn n_params(&self) -> usize {
        self.hidden1 * self.input
            + self.hidden1
            + self.hidden2 * self.hidden1
            + self.hidden2
            + self.output * self.hidden2
            + self.output
    }
}

/// Flat-vector segment ranges for one network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    pub w3: Range<usize>,
    pub b3: Range<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    dims: NetDims,
    theta: Vec<f64>,
}

impl NetParams {
    pub fn zeros(dims: NetDims) -> Self {
        Self {
            theta: vec![0.0; dims.n_params()],
            dims,
        }
    }

    /// Glorot-style uniform init, biases zero, deterministic per seed.
    pub fn glorot(dims: NetDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(dims);
        let seg = net.segments();
        let layers = [
            (seg.w1, dims.input, dims.hidden1),
            (seg.w2, dims.hidden1, dims.hidden2),
            (seg.w3, dims.hidden2, dims.output),
        ];
        for (range, fan_in, fan_out) in layers {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for i in range {
                net.theta[i] = rng.random_range(-bound..bound);
            }
        }
        net
    }

    pub fn dims(&self) -> NetDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn segments(&self) -> Segments {
        let d = &self.dims;
        let w1 = 0..d.hidden1 * d.input;
        let b1 = w1.end..w1.end + d.hidden1;
        let w2 = b1.end..b1.end + d.hidden2 * d.hidden1;
        let b2 = w2.end..w2.end + d.hidden2;
        let w3 = b2.end..b2.end + d.output * d.hidden2;
        let b3 = w3.end..w3.end + d.output;
        Segments {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }

    /// Evaluate the network into caller-provided buffers. `a1`, `a2` must
    /// have the hidden sizes, `out` the output size.
    pub fn forward_into(&self, x: &[f64], a1: &mut [f64], a2: &mut [f64], out: &mut [f64]) {
        let d = &self.dims;
        debug_assert_eq!(x.len(), d.input);
        let seg = self.segments();
        let th = &self.theta;
        for i in 0..d.hidden1 {
            let mut z = th[seg.b1.start + i];
            let row = seg.w1.start + i * d.input;
            for j in 0..d.input {
                z += th[row + j] * x[j];
            }
            a1[i] = z.tanh();
        }
        for i in 0..d.hidden2 {
            let mut z = th[seg.b2.start + i];
            let row = seg.w2.start + i * d.hidden1;
            for j in 0..d.hidden1 {
                z += th[row + j] * a1[j];
            }
            a2[i] = z.tanh();
        }
        for i in 0..d.output {
            let mut z = th[seg.b3.start + i];
            let row = seg.w3.start + i * d.hidden2;
            for j in 0..d.hidden2 {
                z += th[row + j] * a2[j];
            }
            out[i] = z;
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dims.input {
            return Err(Error::InvalidInput(format!(
                "network expects {} inputs, got {}",
                self.dims.input,
                x.len()
            )));
        }
        let mut a1 = vec![0.0; self.dims.hidden1];
        let mut a2 = vec![0.0; self.dims.hidden2];
        let mut out = vec![0.0; self.dims.output];
        self.forward_into(x, &mut a1, &mut a2, &mut out);
        Ok(out)
    }
}

/// Per-feature z-score statistics. Standard deviations are clamped from
/// below so constant features normalize to zero instead of dividing by
/// zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl Normalizer {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Z-score statistics of the rows (population std, clamped).
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidInput("cannot fit normalizer on no data".into()));
        }
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .map(|s| (s / n).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    /// Scale-only statistics (mean pinned to zero). Used for residual
    /// targets so that a zeroed network denormalizes to exactly zero.
    pub fn fit_scale_only(rows: &[Vec<f64>]) -> Result<Self> {
        let mut n = Self::fit(rows)?;
        let d = n.dim();
        let count = rows.len() as f64;
        for j in 0..d {
            let ms: f64 = rows.iter().map(|r| r[j] * r[j]).sum::<f64>() / count;
            n.std[j] = ms.sqrt().max(STD_FLOOR);
            n.mean[j] = 0.0;
        }
        Ok(n)
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = (x[i] - self.mean[i]) / self.std[i];
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.normalize_into(x, &mut out);
        out
    }

    pub fn denormalize_into(&self, z: &[f64], out: &mut [f64]) {
        for i in 0..z.len() {
            out[i] = z[i] * self.std[i] + self.mean[i];
        }
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; z.len()];
        self.denormalize_into(z, &mut out);
        out
    }
}

/// Training hyper-parameters. Defaults: batch 100, 1000 epochs, Adam at
/// 1e-3 with 1e-3 L2 weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            batch_size: 100,
            epochs: 1000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0)
            || self.weight_decay < 0.0
            || self.batch_size == 0
            || self.epochs == 0
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(Error::InvalidInput("invalid training configuration".into()));
        }
        Ok(())
    }
}

/// Adam optimizer state (first/second moments and step counter).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One Adam update with bias correction, applied in place.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        assert_eq!(theta.len(), grad.len());
        assert_eq!(theta.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Mean squared error over the batch (mean over samples and output
/// dimensions) plus the L2 penalty (weight_decay/2)*||weights||^2.
pub fn batch_loss(
    net: &NetParams,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    weight_decay: f64,
) -> f64 {
    let d = net.dims();
    let n = inputs.len();
    let mut a1 = vec![0.0; d.hidden1];
    let mut a2 = vec![0.0; d.hidden2];
    let mut out = vec![0.0; d.output];
    let mut acc = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        net.forward_into(x, &mut a1, &mut a2, &mut out);
        for (o, tv) in out.iter().zip(t) {
            acc += (o - tv) * (o - tv);
        }
    }
    let mut loss = acc / (n * d.output) as f64;
    if weight_decay > 0.0 {
        let seg = net.segments();
        let th = net.theta();
        let mut w2 = 0.0;
        for r in [seg.w1, seg.w2, seg.w3] {
            for i in r {
                w2 += th[i] * th[i];
            }
        }
        loss += 0.5 * weight_decay * w2;
    }
    loss
}

/// Analytic gradient of [`batch_loss`]: backpropagated data term plus
/// weight_decay * weights (biases excluded). Also returns the data MSE.
pub fn loss_and_gradient(
    net: &NetParams,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    weight_decay: f64,
) -> (f64, Vec<f64>) {
    let d = net.dims();
    assert!(!inputs.is_empty(), "gradient needs a non-empty batch");
    assert_eq!(inputs.len(), targets.len());
    let seg = net.segments();
    let th = net.theta();
    let n = inputs.len();
    let scale = 2.0 / (n * d.output) as f64;

    let mut grad = vec![0.0; net.len()];
    let mut a1 = vec![0.0; d.hidden1];
    let mut a2 = vec![0.0; d.hidden2];
    let mut out = vec![0.0; d.output];
    let mut dy = vec![0.0; d.output];
    let mut dz2 = vec![0.0; d.hidden2];
    let mut dz1 = vec![0.0; d.hidden1];
    let mut mse = 0.0;

    for (x, t) in inputs.iter().zip(targets) {
        net.forward_into(x, &mut a1, &mut a2, &mut out);
        for i in 0..d.output {
            let e = out[i] - t[i];
            mse += e * e;
            dy[i] = scale * e;
        }
        // output layer
        for i in 0..d.output {
            grad[seg.b3.start + i] += dy[i];
            let row = seg.w3.start + i * d.hidden2;
            for j in 0..d.hidden2 {
                grad[row + j] += dy[i] * a2[j];
            }
        }
        // second hidden layer
        for j in 0..d.hidden2 {
            let mut da = 0.0;
            for i in 0..d.output {
                da += th[seg.w3.start + i * d.hidden2 + j] * dy[i];
            }
            dz2[j] = da * (1.0 - a2[j] * a2[j]);
        }
        for i in 0..d.hidden2 {
            grad[seg.b2.start + i] += dz2[i];
            let row = seg.w2.start + i * d.hidden1;
            for j in 0..d.hidden1 {
                grad[row + j] += dz2[i] * a1[j];
            }
        }
        // first hidden layer
        for j in 0..d.hidden1 {
            let mut da = 0.0;
            for i in 0..d.hidden2 {
                da += th[seg.w2.start + i * d.hidden1 + j] * dz2[i];
            }
            dz1[j] = da * (1.0 - a1[j] * a1[j]);
        }
        for i in 0..d.hidden1 {
            grad[seg.b1.start + i] += dz1[i];
            let row = seg.w1.start + i * d.input;
            for j in 0..d.input {
                grad[row + j] += dz1[i] * x[j];
            }
        }
    }

    if weight_decay > 0.0 {
        for r in [seg.w1, seg.w2, seg.w3] {
            for i in r {
                grad[i] += weight_decay * th[i];
            }
        }
    }
    (mse / (n * d.output) as f64, grad)
}

pub fn gradient(
    net: &NetParams,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    weight_decay: f64,
) -> Vec<f64> {
    loss_and_gradient(net, inputs, targets, weight_decay).1
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub net: NetParams,
    /// Mean per-batch data MSE for each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch Adam training with per-epoch reshuffling (seeded). The
/// callback fires after every epoch with the current parameters and that
/// epoch's mean training loss.
pub fn train_with_callback(
    net: NetParams,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &NetParams, f64),
) -> Result<TrainResult> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty dataset".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::InvalidInput(
            "inputs and targets must have equal length".into(),
        ));
    }
    let mut net = net;
    let mut adam = AdamState::new(net.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut batch_in: Vec<Vec<f64>> = Vec::with_capacity(cfg.batch_size);
    let mut batch_tg: Vec<Vec<f64>> = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            batch_in.clear();
            batch_tg.clear();
            for &i in chunk {
                batch_in.push(inputs[i].clone());
                batch_tg.push(targets[i].clone());
            }
            let (loss, grad) = loss_and_gradient(&net, &batch_in, &batch_tg, cfg.weight_decay);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            adam.step(net.theta_mut(), &grad, cfg);
            epoch_loss += loss;
            batches += 1;
        }
        let mean = epoch_loss / batches as f64;
        epoch_losses.push(mean);
        on_epoch(epoch, &net, mean);
    }
    Ok(TrainResult { net, epoch_losses })
}

pub fn train(
    net: NetParams,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    train_with_callback(net, inputs, targets, cfg, |_, _, _| {})
}

/// On-disk form of a trained network together with its frozen
/// normalization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub format_version: u32,
    pub dims: NetDims,
    pub theta: Vec<f64>,
    pub input_normalizer: Normalizer,
    pub target_normalizer: Normalizer,
}

pub const NETWORK_FORMAT_VERSION: u32 = 1;

impl NetworkFile {
    pub fn new(net: &NetParams, input_norm: &Normalizer, target_norm: &Normalizer) -> Self {
        Self {
            format_version: NETWORK_FORMAT_VERSION,
            dims: net.dims(),
            theta: net.theta().to_vec(),
            input_normalizer: input_norm.clone(),
            target_normalizer: target_norm.clone(),
        }
    }

    pub fn into_parts(self) -> Result<(NetParams, Normalizer, Normalizer)> {
        if self.format_version != NETWORK_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported network format version {}",
                self.format_version
            )));
        }
        if self.theta.len() != self.dims.n_params() {
            return Err(Error::Parse("network parameter count mismatch".into()));
        }
        let net = NetParams {
            dims: self.dims,
            theta: self.theta,
        };
        Ok((net, self.input_normalizer, self.target_normalizer))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_dims() -> NetDims {
        NetDims::new(3, 5, 4, 2)
    }

    fn random_batch(
        dims: NetDims,
        n: usize,
        seed: u64,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = (0..n)
            .map(|_| (0..dims.input).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let targets = (0..n)
            .map(|_| (0..dims.output).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        (inputs, targets)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = NetParams::zeros(small_dims());
        let out = net.forward(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn output_bias_passthrough() {
        let mut net = NetParams::zeros(small_dims());
        let seg = net.segments();
        net.theta_mut()[seg.b3.start] = 1.5;
        net.theta_mut()[seg.b3.start + 1] = -0.5;
        let out = net.forward(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(out, vec![1.5, -0.5]);
    }

    #[test]
    fn odd_symmetry_with_zero_biases() {
        // Glorot init leaves biases at zero, so tanh oddness makes the
        // whole map odd.
        let net = NetParams::glorot(small_dims(), 3);
        let x = [0.7, -0.2, 1.3];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let a = net.forward(&x).unwrap();
        let b = net.forward(&neg).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert_relative_eq!(*u, -v, epsilon = 1e-12);
        }
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let net = NetParams::zeros(small_dims());
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20u64 {
            let dims = small_dims();
            let net = NetParams::glorot(dims, seed);
            let (inputs, targets) = random_batch(dims, 8, seed + 1000);
            let wd = if seed % 2 == 0 { 0.0 } else { 1e-3 };
            let (_, analytic) = loss_and_gradient(&net, &inputs, &targets, wd);
            let h = 1e-5;
            let mut fd = vec![0.0; net.len()];
            for i in 0..net.len() {
                let mut up = net.clone();
                up.theta_mut()[i] += h;
                let mut dn = net.clone();
                dn.theta_mut()[i] -= h;
                fd[i] = (batch_loss(&up, &inputs, &targets, wd)
                    - batch_loss(&dn, &inputs, &targets, wd))
                    / (2.0 * h);
            }
            let num: f64 = analytic
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(
                num / den < 1e-5,
                "seed {seed}: gradient relative error {}",
                num / den
            );
        }
    }

    #[test]
    fn gradient_zero_at_perfect_fit() {
        let dims = small_dims();
        let net = NetParams::glorot(dims, 5);
        let (inputs, _) = random_batch(dims, 6, 99);
        let targets: Vec<Vec<f64>> = inputs.iter().map(|x| net.forward(x).unwrap()).collect();
        let g = gradient(&net, &inputs, &targets, 0.0);
        for v in &g {
            assert_relative_eq!(*v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_decay_term_isolated() {
        let dims = small_dims();
        let net = NetParams::glorot(dims, 6);
        let (inputs, _) = random_batch(dims, 6, 100);
        let targets: Vec<Vec<f64>> = inputs.iter().map(|x| net.forward(x).unwrap()).collect();
        let lambda = 0.37;
        let g = gradient(&net, &inputs, &targets, lambda);
        let seg = net.segments();
        for r in [seg.w1.clone(), seg.w2.clone(), seg.w3.clone()] {
            for i in r {
                assert_relative_eq!(g[i], lambda * net.theta()[i], epsilon = 1e-10);
            }
        }
        for r in [seg.b1, seg.b2, seg.b3] {
            for i in r {
                assert_relative_eq!(g[i], 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn adam_first_step_delta() {
        let cfg = TrainConfig::default();
        let mut adam = AdamState::new(2);
        let mut theta = vec![0.0, 0.0];
        adam.step(&mut theta, &[1.0, -1.0], &cfg);
        assert_relative_eq!(theta[0], -0.0009999999900000003, epsilon = 1e-15);
        assert_relative_eq!(theta[1], 0.0009999999900000003, epsilon = 1e-15);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let cfg = TrainConfig::default();
        let mut adam = AdamState::new(3);
        let mut theta = vec![0.5, -0.2, 1.0];
        let orig = theta.clone();
        for _ in 0..10 {
            adam.step(&mut theta, &[0.0, 0.0, 0.0], &cfg);
        }
        assert_eq!(theta, orig);
    }

    #[test]
    fn adam_step_magnitude_bounded() {
        let cfg = TrainConfig::default();
        let bound = cfg.learning_rate / (1.0 - cfg.beta1) * (1.0 + 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut adam = AdamState::new(4);
        let mut theta = vec![0.0; 4];
        for _ in 0..200 {
            let prev = theta.clone();
            let grad: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            adam.step(&mut theta, &grad, &cfg);
            for (a, b) in theta.iter().zip(&prev) {
                assert!((a - b).abs() <= bound);
            }
        }
    }

    #[test]
    fn train_zero_targets() {
        let dims = small_dims();
        let (inputs, _) = random_batch(dims, 200, 7);
        let targets = vec![vec![0.0; dims.output]; 200];
        // Adam needs a long tail to shed its step-size dither on an
        // exactly representable optimum.
        let cfg = TrainConfig {
            epochs: 4000,
            weight_decay: 0.0,
            ..Default::default()
        };
        let result = train(NetParams::glorot(dims, 1), &inputs, &targets, &cfg).unwrap();
        let final_mse = batch_loss(&result.net, &inputs, &targets, 0.0);
        assert!(final_mse < 1e-6, "final MSE {final_mse}");
    }

    #[test]
    fn train_sine_regression() {
        let dims = NetDims::new(1, 20, 20, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inputs: Vec<Vec<f64>> = (0..1000)
            .map(|_| vec![rng.random_range(-3.0..3.0)])
            .collect();
        let targets: Vec<Vec<f64>> = inputs.iter().map(|x| vec![x[0].sin()]).collect();
        let cfg = TrainConfig::default();
        let result = train(NetParams::glorot(dims, 2), &inputs, &targets, &cfg).unwrap();
        let mse = batch_loss(&result.net, &inputs, &targets, 0.0);
        assert!(mse < 1e-3, "sine fit MSE {mse}");

        // Loss settles: after epoch 10, 50-epoch block means may rise at
        // most 5% (single-epoch transients are averaged out).
        let blocks: Vec<f64> = result.epoch_losses[10..]
            .chunks(50)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        for w in blocks.windows(2) {
            assert!(
                w[1] <= w[0] * 1.05,
                "block loss jumped from {} to {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn train_is_deterministic() {
        let dims = small_dims();
        let (inputs, targets) = random_batch(dims, 64, 21);
        let cfg = TrainConfig {
            epochs: 30,
            ..Default::default()
        };
        let a = train(NetParams::glorot(dims, 4), &inputs, &targets, &cfg).unwrap();
        let b = train(NetParams::glorot(dims, 4), &inputs, &targets, &cfg).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn train_aborts_on_nonfinite() {
        let dims = small_dims();
        let inputs = vec![vec![f64::INFINITY; dims.input]; 4];
        let targets = vec![vec![0.0; dims.output]; 4];
        let cfg = TrainConfig {
            epochs: 2,
            ..Default::default()
        };
        assert!(train(NetParams::glorot(dims, 4), &inputs, &targets, &cfg).is_err());
    }

    #[test]
    fn normalizer_constant_feature() {
        let rows = vec![vec![3.0, 1.0], vec![3.0, 2.0], vec![3.0, 3.0]];
        let norm = Normalizer::fit(&rows).unwrap();
        assert_eq!(norm.std[0], STD_FLOOR);
        let z = norm.normalize(&[3.0, 2.0]);
        assert_eq!(z[0], 0.0);
    }

    #[test]
    fn normalizer_standard_normal_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let rows: Vec<Vec<f64>> = (0..10_000)
            .map(|_| vec![rng.sample::<f64, _>(rand_distr::StandardNormal)])
            .collect();
        let norm = Normalizer::fit(&rows).unwrap();
        assert!(norm.mean[0].abs() < 0.05);
        assert!((norm.std[0] - 1.0).abs() < 0.05);
    }

    #[test]
    fn normalizer_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..4).map(|_| rng.random_range(-10.0..10.0)).collect())
            .collect();
        let norm = Normalizer::fit(&rows).unwrap();
        for r in rows.iter().take(20) {
            let back = norm.denormalize(&norm.normalize(r));
            for (a, b) in back.iter().zip(r) {
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn scale_only_normalizer_keeps_zero_fixed() {
        let rows = vec![vec![1.0, -2.0], vec![3.0, 4.0], vec![-1.0, 0.5]];
        let norm = Normalizer::fit_scale_only(&rows).unwrap();
        assert_eq!(norm.mean, vec![0.0, 0.0]);
        let z = norm.denormalize(&[0.0, 0.0]);
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn network_file_round_trip() {
        let dims = NetDims::new(8, 20, 20, 3);
        let net = NetParams::glorot(dims, 77);
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.1; 8]).collect();
        let in_norm = Normalizer::fit(&rows).unwrap();
        let tg_rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.01; 3]).collect();
        let tg_norm = Normalizer::fit_scale_only(&tg_rows).unwrap();
        let file = NetworkFile::new(&net, &in_norm, &tg_norm);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        file.save(&path).unwrap();
        let loaded = NetworkFile::load(&path).unwrap();
        assert_eq!(loaded, file);
        let (net2, in2, tg2) = loaded.into_parts().unwrap();
        assert_eq!(net2, net);
        assert_eq!(in2, in_norm);
        assert_eq!(tg2, tg_norm);
    }
}
