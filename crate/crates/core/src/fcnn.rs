//! Fully connected regression network: rectifier hidden layers, identity
//! output, inverted dropout, plain SGD or Adam, and a finite-difference
//! gradient check harness.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Features;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden_layers: usize,
    /// One entry per hidden layer.
    pub neurons_per_layer: Vec<usize>,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden_layers: 2,
            neurons_per_layer: vec![64, 64],
            dropout_rate: 0.0,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            batch_size: 32,
            epochs: 100,
            seed: 0,
        }
    }
}

/// Dense network parameters. `weights[l]` is row-major `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub config: NetConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_rmse: f64,
    pub val_rmse: Option<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum FcnnError {
    #[error("row arity {got} does not match input size {expected}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("training input contains non-finite values")]
    NonFiniteInput,
    #[error("neurons_per_layer length {got} does not match hidden_layers {expected}")]
    BadConfig { expected: usize, got: usize },
}

impl DenseNet {
    /// Seeded init: weights uniform in +/- sqrt(6/(fan_in+fan_out)), zero
    /// biases.
    pub fn init(input_size: usize, cfg: &NetConfig) -> Result<Self, FcnnError> {
        if cfg.neurons_per_layer.len() != cfg.hidden_layers {
            return Err(FcnnError::BadConfig {
                expected: cfg.hidden_layers,
                got: cfg.neurons_per_layer.len(),
            });
        }
        let mut sizes = vec![input_size];
        sizes.extend_from_slice(&cfg.neurons_per_layer);
        sizes.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Ok(DenseNet {
            sizes,
            weights,
            biases,
            config: cfg.clone(),
        })
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Deterministic evaluation-mode forward pass.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.forward_cached(row, None).0
    }

    pub fn forward(&self, row: &[f64]) -> Result<f64, FcnnError> {
        if row.len() != self.input_size() {
            return Err(FcnnError::ArityMismatch {
                expected: self.input_size(),
                got: row.len(),
            });
        }
        Ok(self.predict_row(row))
    }

    /// Training-mode forward pass with inverted dropout on hidden
    /// activations (kept activations are divided by the keep probability).
    pub fn forward_train(
        &self,
        row: &[f64],
        dropout_rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, FcnnError> {
        if row.len() != self.input_size() {
            return Err(FcnnError::ArityMismatch {
                expected: self.input_size(),
                got: row.len(),
            });
        }
        let masks = self.draw_masks(dropout_rate, rng);
        Ok(self.forward_cached(row, masks.as_deref()).0)
    }

    fn draw_masks(&self, dropout_rate: f64, rng: &mut ChaCha8Rng) -> Option<Vec<Vec<f64>>> {
        if dropout_rate <= 0.0 {
            return None;
        }
        let keep = 1.0 - dropout_rate;
        Some(
            self.sizes[1..self.sizes.len() - 1]
                .iter()
                .map(|&n| {
                    (0..n)
                        .map(|_| {
                            if rng.gen::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect(),
        )
    }

    /// Forward pass returning the prediction and per-layer post-activation
    /// values (masked when dropout masks are supplied).
    fn forward_cached(&self, row: &[f64], masks: Option<&[Vec<f64>]>) -> (f64, Vec<Vec<f64>>) {
        let n_layers = self.weights.len();
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        activations.push(row.to_vec());
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let prev = &activations[l];
            let mut out = vec![0.0; fan_out];
            for o in 0..fan_out {
                let mut z = self.biases[l][o];
                let w = &self.weights[l][o * fan_in..(o + 1) * fan_in];
                for (wi, ai) in w.iter().zip(prev) {
                    z += wi * ai;
                }
                out[o] = if l + 1 < self.sizes.len() - 1 {
                    let a = z.max(0.0);
                    match masks {
                        Some(m) => a * m[l][o],
                        None => a,
                    }
                } else {
                    z
                };
            }
            activations.push(out);
        }
        (activations[n_layers][0], activations)
    }

    /// Smallest |pre-activation| over all hidden units and rows. Finite-
    /// difference gradient checks are only valid when this margin exceeds
    /// the probe step, since perturbation must not cross a ReLU kink.
    pub fn kink_margin(&self, rows: Features<'_>) -> f64 {
        let n_layers = self.weights.len();
        let mut margin = f64::INFINITY;
        for row in rows.iter_rows() {
            let mut prev = row.to_vec();
            for l in 0..n_layers {
                let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
                let mut out = vec![0.0; fan_out];
                for (o, slot) in out.iter_mut().enumerate() {
                    let mut z = self.biases[l][o];
                    let w = &self.weights[l][o * fan_in..(o + 1) * fan_in];
                    for (wi, ai) in w.iter().zip(&prev) {
                        z += wi * ai;
                    }
                    if l + 1 < self.sizes.len() - 1 {
                        margin = margin.min(z.abs());
                        *slot = z.max(0.0);
                    } else {
                        *slot = z;
                    }
                }
                prev = out;
            }
        }
        margin
    }

    /// Backprop of the squared-error term (pred - target)^2 scaled by
    /// `weight`, accumulating into `grads`. Returns the prediction.
    fn accumulate_gradients(
        &self,
        row: &[f64],
        target: f64,
        weight: f64,
        masks: Option<&[Vec<f64>]>,
        grads: &mut Gradients,
    ) -> f64 {
        let (pred, activations) = self.forward_cached(row, masks);
        let n_layers = self.weights.len();
        // dL/dpred for L = weight * (pred - target)^2
        let mut delta = vec![2.0 * weight * (pred - target)];
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let prev = &activations[l];
            let mut delta_prev = vec![0.0; fan_in];
            for (o, &d) in delta.iter().enumerate().take(fan_out) {
                grads.biases[l][o] += d;
                let w_row = &self.weights[l][o * fan_in..(o + 1) * fan_in];
                let g_row = &mut grads.weights[l][o * fan_in..(o + 1) * fan_in];
                for i in 0..fan_in {
                    g_row[i] += d * prev[i];
                    delta_prev[i] += d * w_row[i];
                }
            }
            if l > 0 {
                // Through the rectifier (and mask) of the previous hidden
                // layer: the cached activation is post-ReLU-and-mask, so the
                // local derivative is mask/keep when active, zero otherwise.
                for i in 0..fan_in {
                    let active = activations[l][i] != 0.0;
                    let scale = match masks {
                        Some(m) => m[l - 1][i],
                        None => 1.0,
                    };
                    delta_prev[i] = if active { delta_prev[i] * scale } else { 0.0 };
                }
            }
            delta = delta_prev;
        }
        pred
    }
}

struct Gradients {
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn reset(&mut self) {
        for w in &mut self.weights {
            w.fill(0.0);
        }
        for b in &mut self.biases {
            b.fill(0.0);
        }
    }
}

struct AdamState {
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn rmse_over(net: &DenseNet, x: Features<'_>, y: &[f64]) -> f64 {
    let sse: f64 = x
        .iter_rows()
        .zip(y)
        .map(|(r, &t)| (net.predict_row(r) - t).powi(2))
        .sum();
    (sse / y.len() as f64).sqrt()
}

/// Trains by mini-batch MSE descent. Data is shuffled per epoch under the
/// config seed; the last incomplete batch is used, not dropped. The
/// returned network carries the best-validation-epoch weights when a
/// validation set is given, otherwise the final weights.
pub fn train(
    x: Features<'_>,
    y: &[f64],
    cfg: &NetConfig,
    validation: Option<(Features<'_>, &[f64])>,
) -> Result<(DenseNet, Vec<EpochLoss>), FcnnError> {
    if x.data().iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(FcnnError::NonFiniteInput);
    }
    let mut net = DenseNet::init(x.n_cols(), cfg)?;
    let n = x.n_rows();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..n).collect();
    let mut grads = Gradients::zeros_like(&net);
    let mut adam = AdamState {
        m_w: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
        v_w: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
        m_b: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        v_b: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        t: 0,
    };
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, DenseNet)> = None;

    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            grads.reset();
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                let masks = net.draw_masks(cfg.dropout_rate, &mut rng);
                net.accumulate_gradients(x.row(i), y[i], weight, masks.as_deref(), &mut grads);
            }
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for l in 0..net.weights.len() {
                        for (w, g) in net.weights[l].iter_mut().zip(&grads.weights[l]) {
                            *w -= cfg.learning_rate * g;
                        }
                        for (b, g) in net.biases[l].iter_mut().zip(&grads.biases[l]) {
                            *b -= cfg.learning_rate * g;
                        }
                    }
                }
                Optimizer::Adam => {
                    adam.t += 1;
                    let bc1 = 1.0 - ADAM_BETA1.powi(adam.t as i32);
                    let bc2 = 1.0 - ADAM_BETA2.powi(adam.t as i32);
                    for l in 0..net.weights.len() {
                        adam_update(
                            &mut net.weights[l],
                            &grads.weights[l],
                            &mut adam.m_w[l],
                            &mut adam.v_w[l],
                            cfg.learning_rate,
                            bc1,
                            bc2,
                        );
                        adam_update(
                            &mut net.biases[l],
                            &grads.biases[l],
                            &mut adam.m_b[l],
                            &mut adam.v_b[l],
                            cfg.learning_rate,
                            bc1,
                            bc2,
                        );
                    }
                }
            }
        }
        let train_rmse = rmse_over(&net, x, y);
        if !train_rmse.is_finite() {
            return Err(FcnnError::NonFiniteLoss { epoch });
        }
        let val_rmse = validation.as_ref().map(|(vx, vy)| rmse_over(&net, *vx, vy));
        if let Some(v) = val_rmse {
            if !v.is_finite() {
                return Err(FcnnError::NonFiniteLoss { epoch });
            }
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, net.clone()));
            }
        }
        trace.push(EpochLoss {
            epoch,
            train_rmse,
            val_rmse,
        });
    }
    let final_net = match best {
        Some((_, b)) => b,
        None => net,
    };
    Ok((final_net, trace))
}

fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grads[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grads[i] * grads[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Compares backprop gradients of the summed squared error over `rows`
/// against central finite differences, parameter by parameter, in
/// evaluation mode with dropout disabled. Returns the maximum relative
/// discrepancy.
pub fn gradient_check(net: &DenseNet, rows: Features<'_>, targets: &[f64], epsilon: f64) -> f64 {
    let mut grads = Gradients::zeros_like(net);
    for (i, row) in rows.iter_rows().enumerate() {
        net.accumulate_gradients(row, targets[i], 1.0, None, &mut grads);
    }
    let loss = |net: &DenseNet| -> f64 {
        rows.iter_rows()
            .zip(targets)
            .map(|(r, &t)| (net.predict_row(r) - t).powi(2))
            .sum()
    };
    let mut max_rel = 0.0f64;
    let mut probe = net.clone();
    for l in 0..net.weights.len() {
        for i in 0..net.weights[l].len() {
            let orig = probe.weights[l][i];
            probe.weights[l][i] = orig + epsilon;
            let up = loss(&probe);
            probe.weights[l][i] = orig - epsilon;
            let down = loss(&probe);
            probe.weights[l][i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            max_rel = max_rel.max(rel_err(grads.weights[l][i], numeric));
        }
        for i in 0..net.biases[l].len() {
            let orig = probe.biases[l][i];
            probe.biases[l][i] = orig + epsilon;
            let up = loss(&probe);
            probe.biases[l][i] = orig - epsilon;
            let down = loss(&probe);
            probe.biases[l][i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            max_rel = max_rel.max(rel_err(grads.biases[l][i], numeric));
        }
    }
    max_rel
}

fn rel_err(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / (a.abs() + b.abs()).max(1e-10)
    }
}
