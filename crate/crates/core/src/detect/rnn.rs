//! Random neural network: fixed-point inference, analytic gradient and
//! projected gradient-descent training.
//!
//! Neuron `i` fires at rate `r_i = Σ_j (w⁺_ij + w⁻_ij) + d_i`, where `d_i` is
//! its exit rate. Its activation solves `q_i = λ⁺_i / (r_i + λ⁻_i)` with
//! `λ⁺_i = Λ_i + Σ_j q_j w⁺_ji` and `λ⁻_i = λ_i + Σ_j q_j w⁻_ji`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DetectError, DetectionVerdict, DetectorKind};
use crate::features::FeatureVector;
use crate::rng;

pub const RESIDUAL_TOL: f64 = 1e-9;
/// Residual the solver keeps iterating towards once [`RESIDUAL_TOL`] is met,
/// so gradients are not dominated by solver error.
const POLISH_TOL: f64 = 1e-12;
pub const MAX_ITERATIONS: usize = 100_000;
const MIN_DAMPING: f64 = 1.0 / 64.0;

/// External drive of one input neuron by one feature.
///
/// The feature value `f` is squashed to `u = clamp(f / scale, 0, 1)` and
/// drives the neuron with `Λ = excitatory_gain·u`, `λ = inhibitory_gain·u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputMap {
    pub feature: String,
    pub neuron: usize,
    pub scale: f64,
    pub excitatory_gain: f64,
    #[serde(default)]
    pub inhibitory_gain: f64,
}

/// Serialised as `model.json`. Weight matrices are row-major `n×n`:
/// entry `i*n + j` is the weight from neuron `i` to neuron `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnModel {
    pub n: usize,
    pub w_plus: Vec<f64>,
    pub w_minus: Vec<f64>,
    pub exit_rate: Vec<f64>,
    pub inputs: Vec<InputMap>,
    pub output_neurons: Vec<usize>,
    /// Activation of the first output neuron at or above which the model
    /// alarms.
    pub threshold: f64,
}

impl RnnModel {
    /// Fully connected model without self-loops: `features.len()` input
    /// neurons, then `hidden` hidden neurons, then `outputs` output neurons.
    /// Weights start uniform in `[0, 0.1)`; input gains are half the initial
    /// firing rate so every input starts in `[0, 0.5·r_i]`.
    pub fn fully_connected(features: &[(&str, f64)], hidden: usize, outputs: usize, seed: u64) -> Self {
        let n = features.len() + hidden + outputs;
        let mut rng = rng::stream(seed, "rnn-init", 0);
        let mut w_plus = vec![0.0; n * n];
        let mut w_minus = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    w_plus[i * n + j] = 0.1 * rng.random::<f64>();
                    w_minus[i * n + j] = 0.1 * rng.random::<f64>();
                }
            }
        }
        let mut model = RnnModel {
            n,
            w_plus,
            w_minus,
            exit_rate: vec![1.0; n],
            inputs: Vec::new(),
            output_neurons: (n - outputs..n).collect(),
            threshold: 0.5,
        };
        let rates = model.firing_rates();
        model.inputs = features
            .iter()
            .enumerate()
            .map(|(i, (name, scale))| InputMap {
                feature: name.to_string(),
                neuron: i,
                scale: *scale,
                excitatory_gain: 0.5 * rates[i],
                inhibitory_gain: 0.0,
            })
            .collect();
        model
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        let bad = |m: String| Err(DetectError::InvalidModel(m));
        let n = self.n;
        if n == 0 {
            return bad("n must be >= 1".into());
        }
        if self.w_plus.len() != n * n || self.w_minus.len() != n * n || self.exit_rate.len() != n {
            return bad(format!("weight shapes do not match n={n}"));
        }
        if self.w_plus.iter().chain(&self.w_minus).any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("weights must be finite and >= 0".into());
        }
        if self.exit_rate.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return bad("exit rates must be finite and >= 0".into());
        }
        if let Some(i) = self.firing_rates().iter().position(|r| !(*r > 0.0)) {
            return bad(format!("neuron {i} has zero firing rate"));
        }
        for m in &self.inputs {
            if m.neuron >= n || !(m.scale > 0.0) || !(m.excitatory_gain >= 0.0) || !(m.inhibitory_gain >= 0.0) {
                return bad(format!("bad input map for {}", m.feature));
            }
        }
        if self.output_neurons.is_empty() || self.output_neurons.iter().any(|&o| o >= n) {
            return bad("output neurons must be non-empty and in range".into());
        }
        Ok(())
    }

    pub fn firing_rates(&self) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| {
                let row = i * n..(i + 1) * n;
                self.w_plus[row.clone()].iter().sum::<f64>() + self.w_minus[row].iter().sum::<f64>() + self.exit_rate[i]
            })
            .collect()
    }

    /// External excitatory and inhibitory rates for a feature vector.
    pub fn external_rates(&self, features: &FeatureVector) -> Result<(Vec<f64>, Vec<f64>), DetectError> {
        let mut exc = vec![0.0; self.n];
        let mut inh = vec![0.0; self.n];
        for m in &self.inputs {
            let f = features
                .get(&m.feature)
                .ok_or_else(|| DetectError::InvalidModel(format!("unknown feature {}", m.feature)))?;
            let u = (f / m.scale).clamp(0.0, 1.0);
            exc[m.neuron] += m.excitatory_gain * u;
            inh[m.neuron] += m.inhibitory_gain * u;
        }
        Ok((exc, inh))
    }

    /// Runs the model on a window and reports the first output neuron. Input
    /// that drives a neuron to saturation lies outside anything seen in
    /// training and scores 1.
    pub fn verdict(&self, features: &FeatureVector, ts: f64) -> Result<DetectionVerdict, DetectError> {
        let score = match rnn_fixed_point(self, features) {
            Ok(q) => q[self.output_neurons[0]],
            Err(DetectError::UnstableNetwork { .. }) => 1.0,
            Err(e) => return Err(e),
        };
        Ok(DetectionVerdict {
            ts,
            scope: features.scope,
            detector: DetectorKind::Rnn,
            score,
            threshold: self.threshold,
            alarmed: score >= self.threshold,
            stream: String::new(),
        })
    }
}

/// Solves the activation equations for the inputs derived from `features`.
pub fn rnn_fixed_point(model: &RnnModel, features: &FeatureVector) -> Result<Vec<f64>, DetectError> {
    model.validate()?;
    let (exc, inh) = model.external_rates(features)?;
    solve(model, &model.firing_rates(), &exc, &inh)
}

fn activation(model: &RnnModel, r: &[f64], exc: &[f64], inh: &[f64], q: &[f64], i: usize) -> f64 {
    let n = model.n;
    let mut plus = exc[i];
    let mut minus = inh[i];
    for j in 0..n {
        plus += q[j] * model.w_plus[j * n + i];
        minus += q[j] * model.w_minus[j * n + i];
    }
    plus / (r[i] + minus)
}

/// Damped fixed-point iteration from `q = 0`. The damping factor halves
/// whenever the residual grows. Iteration continues to [`POLISH_TOL`]; if the
/// cap is hit first, an iterate within [`RESIDUAL_TOL`] is still accepted.
fn solve(model: &RnnModel, r: &[f64], exc: &[f64], inh: &[f64]) -> Result<Vec<f64>, DetectError> {
    let n = model.n;
    let mut q = vec![0.0; n];
    let mut target = vec![0.0; n];
    let mut alpha = 1.0f64;
    let mut last_residual = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let mut residual = 0.0f64;
        for i in 0..n {
            target[i] = activation(model, r, exc, inh, &q, i);
            residual = residual.max((target[i] - q[i]).abs());
        }
        if residual <= POLISH_TOL {
            if let Some(i) = target.iter().position(|&v| v >= 1.0) {
                return Err(DetectError::UnstableNetwork { neuron: i, q: target[i] });
            }
            return Ok(q);
        }
        if let Some(i) = target.iter().position(|v| !v.is_finite()) {
            return Err(DetectError::UnstableNetwork { neuron: i, q: target[i] });
        }
        // An overshooting target may be transient; damping decides. An
        // iterate that itself reaches 1 means no solution below 1 exists.
        if residual > last_residual || target.iter().any(|&v| v >= 1.0) {
            alpha = (alpha * 0.5).max(MIN_DAMPING);
        }
        last_residual = residual;
        for i in 0..n {
            q[i] += alpha * (target[i] - q[i]);
        }
        if let Some(i) = q.iter().position(|&v| v >= 1.0) {
            return Err(DetectError::UnstableNetwork { neuron: i, q: q[i] });
        }
    }
    let residual = (0..n).map(|i| (activation(model, r, exc, inh, &q, i) - q[i]).abs()).fold(0.0, f64::max);
    if residual <= RESIDUAL_TOL {
        return Ok(q);
    }
    Err(DetectError::NoConvergence { iterations: MAX_ITERATIONS, residual })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub features: FeatureVector,
    /// Target activation per output neuron, each in `[0, 1]`.
    pub target: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnGradient {
    pub loss: f64,
    pub w_plus: Vec<f64>,
    pub w_minus: Vec<f64>,
}

/// Exact gradient of `E = ½ Σ_o (q_o - y_o)²` with respect to both weight
/// matrices, including the dependence of `r` on the weights.
pub fn rnn_grad(model: &RnnModel, sample: &TrainingSample) -> Result<RnnGradient, DetectError> {
    model.validate()?;
    check_target(model, &sample.target)?;
    let (exc, inh) = model.external_rates(&sample.features)?;
    grad_with_inputs(model, &model.firing_rates(), &exc, &inh, &sample.target)
}

fn check_target(model: &RnnModel, target: &[f64]) -> Result<(), DetectError> {
    if target.len() != model.output_neurons.len() || target.iter().any(|y| !(0.0..=1.0).contains(y)) {
        return Err(DetectError::InvalidDataset(format!(
            "targets must be {} values in [0, 1]",
            model.output_neurons.len()
        )));
    }
    Ok(())
}

fn grad_with_inputs(
    model: &RnnModel,
    r: &[f64],
    exc: &[f64],
    inh: &[f64],
    target: &[f64],
) -> Result<RnnGradient, DetectError> {
    let n = model.n;
    let q = solve(model, r, exc, inh)?;
    let denom: Vec<f64> = (0..n)
        .map(|i| r[i] + inh[i] + (0..n).map(|j| q[j] * model.w_minus[j * n + i]).sum::<f64>())
        .collect();

    let mut err = DVector::zeros(n);
    let mut loss = 0.0;
    for (&o, &y) in model.output_neurons.iter().zip(target) {
        err[o] += q[o] - y;
        loss += 0.5 * (q[o] - y) * (q[o] - y);
    }

    // dq = (I - M)^-1 b with M[i][j] = (w⁺_ji - q_i w⁻_ji) / D_i; the adjoint
    // z solves (I - M)ᵀ z = e.
    let mut a = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(j, i)] -= (model.w_plus[j * n + i] - q[i] * model.w_minus[j * n + i]) / denom[i];
        }
    }
    let z = a
        .lu()
        .solve(&err)
        .ok_or_else(|| DetectError::InvalidModel("singular sensitivity matrix".into()))?;
    let zd: Vec<f64> = (0..n).map(|i| z[i] / denom[i]).collect();

    let mut w_plus = vec![0.0; n * n];
    let mut w_minus = vec![0.0; n * n];
    for u in 0..n {
        for v in 0..n {
            w_plus[u * n + v] = q[u] * (zd[v] - zd[u]);
            w_minus[u * n + v] = -q[u] * (zd[u] + q[v] * zd[v]);
        }
    }
    Ok(RnnGradient { loss, w_plus, w_minus })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub step_size: f64,
    /// Seeds the sample order used when averaging the batch gradient.
    pub seed: u64,
    /// Smallest step tried before giving up, relative to `step_size`.
    pub min_step_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, step_size: 1.0, seed: 0, min_step_ratio: 1e-12 }
    }
}

/// Loss tolerance for accepting a step.
pub const LOSS_TOL: f64 = 1e-12;

/// Full-batch projected gradient descent on the mean sample loss. A step
/// that raises the loss or destabilises the network is halved and retried.
/// Once the step underflows after at least one accepted step, training has
/// converged and stops; underflow before any progress is an error.
/// Weights on the diagonal stay at zero when they start there.
pub fn rnn_train(model: &RnnModel, dataset: &[TrainingSample], config: &TrainConfig) -> Result<RnnModel, DetectError> {
    model.validate()?;
    if dataset.is_empty() {
        return Err(DetectError::InvalidDataset("dataset is empty".into()));
    }
    if !(config.step_size > 0.0) {
        return Err(DetectError::InvalidDataset("step_size must be > 0".into()));
    }
    let mut inputs = Vec::with_capacity(dataset.len());
    for s in dataset {
        check_target(model, &s.target)?;
        inputs.push(model.external_rates(&s.features)?);
    }
    // Summation order is fixed by the seed so results do not depend on how
    // the caller assembled the dataset beyond its contents.
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = rng::stream(config.seed, "rnn-train", 0);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }

    let n = model.n;
    let frozen: Vec<bool> = (0..n * n)
        .map(|k| k / n == k % n && model.w_plus[k] == 0.0 && model.w_minus[k] == 0.0)
        .collect();

    let batch = |m: &RnnModel, with_grad: bool| -> Result<RnnGradient, DetectError> {
        let r = m.firing_rates();
        let mut acc = RnnGradient { loss: 0.0, w_plus: vec![0.0; n * n], w_minus: vec![0.0; n * n] };
        for &i in &order {
            let (exc, inh) = &inputs[i];
            if with_grad {
                let g = grad_with_inputs(m, &r, exc, inh, &dataset[i].target)?;
                acc.loss += g.loss;
                acc.w_plus.iter_mut().zip(&g.w_plus).for_each(|(a, b)| *a += b);
                acc.w_minus.iter_mut().zip(&g.w_minus).for_each(|(a, b)| *a += b);
            } else {
                let q = solve(m, &r, exc, inh)?;
                acc.loss += m
                    .output_neurons
                    .iter()
                    .zip(&dataset[i].target)
                    .map(|(&o, y)| 0.5 * (q[o] - y) * (q[o] - y))
                    .sum::<f64>();
            }
        }
        let scale = 1.0 / dataset.len() as f64;
        acc.loss *= scale;
        acc.w_plus.iter_mut().chain(acc.w_minus.iter_mut()).for_each(|g| *g *= scale);
        Ok(acc)
    };

    let mut current = model.clone();
    let mut step = config.step_size;
    let min_step = config.step_size * config.min_step_ratio;
    let mut accepted = 0usize;
    'epochs: for _ in 0..config.epochs {
        let g = batch(&current, true)?;
        if g.loss == 0.0 || g.w_plus.iter().chain(&g.w_minus).all(|x| *x == 0.0) {
            break;
        }
        loop {
            let mut cand = current.clone();
            for k in 0..n * n {
                if !frozen[k] {
                    cand.w_plus[k] = (cand.w_plus[k] - step * g.w_plus[k]).max(0.0);
                    cand.w_minus[k] = (cand.w_minus[k] - step * g.w_minus[k]).max(0.0);
                }
            }
            match batch(&cand, false) {
                Ok(next) if next.loss <= g.loss + LOSS_TOL => {
                    current = cand;
                    accepted += 1;
                    step = (step * 2.0).min(config.step_size);
                    break;
                }
                Ok(_) | Err(DetectError::UnstableNetwork { .. }) | Err(DetectError::NoConvergence { .. }) => {
                    step *= 0.5;
                    if step < min_step {
                        if accepted == 0 {
                            return Err(DetectError::DivergedTraining);
                        }
                        break 'epochs;
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(current)
}

/// Mean loss of `model` over `dataset`.
pub fn dataset_loss(model: &RnnModel, dataset: &[TrainingSample]) -> Result<f64, DetectError> {
    let mut total = 0.0;
    for s in dataset {
        let q = rnn_fixed_point(model, &s.features)?;
        total += model.output_neurons.iter().zip(&s.target).map(|(&o, y)| 0.5 * (q[o] - y) * (q[o] - y)).sum::<f64>();
    }
    Ok(total / dataset.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Scope;

    fn features_with(rate: f64) -> FeatureVector {
        FeatureVector { total_msg_rate: rate, ..FeatureVector::empty(0.0, 10.0, Scope::Network) }
    }

    fn single(lambda: f64, self_weight: f64) -> RnnModel {
        RnnModel {
            n: 1,
            w_plus: vec![self_weight],
            w_minus: vec![0.0],
            exit_rate: vec![1.0 - self_weight],
            inputs: vec![InputMap {
                feature: "total_msg_rate".into(),
                neuron: 0,
                scale: 1.0,
                excitatory_gain: lambda,
                inhibitory_gain: 0.0,
            }],
            output_neurons: vec![0],
            threshold: 0.5,
        }
    }

    #[test]
    fn single_neuron_closed_form() {
        let q = rnn_fixed_point(&single(0.2, 0.0), &features_with(1.0)).unwrap();
        assert!((q[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn chain_passes_activation_on() {
        let mut m = single(0.2, 0.0);
        m.n = 2;
        // Neuron 0 sends everything to neuron 1: r_0 = 1, r_1 = 1.
        m.w_plus = vec![0.0, 1.0, 0.0, 0.0];
        m.w_minus = vec![0.0; 4];
        m.exit_rate = vec![0.0, 1.0];
        m.output_neurons = vec![1];
        let q = rnn_fixed_point(&m, &features_with(1.0)).unwrap();
        assert!((q[0] - 0.2).abs() < 1e-12);
        assert!((q[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn full_drive_with_self_excitation_is_unstable() {
        // r = 1, Λ = r, w⁺ self = 0.5.
        let err = rnn_fixed_point(&single(1.0, 0.5), &features_with(1.0)).unwrap_err();
        assert!(matches!(err, DetectError::UnstableNetwork { neuron: 0, .. }), "{err}");
    }

    #[test]
    fn zero_gradient_at_optimum() {
        let mut m = single(0.2, 0.0);
        m.w_plus = vec![0.0];
        let sample = TrainingSample { features: features_with(1.0), target: vec![0.2] };
        let g = rnn_grad(&m, &sample).unwrap();
        assert!(g.loss < 1e-24);
        assert!(g.w_plus.iter().chain(&g.w_minus).all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn trained_model_at_zero_error_is_unchanged() {
        let m = single(0.2, 0.0);
        let sample = TrainingSample { features: features_with(1.0), target: vec![0.2] };
        let cfg = TrainConfig { epochs: 10, ..TrainConfig::default() };
        assert_eq!(rnn_train(&m, &[sample], &cfg).unwrap(), m);
    }

    #[test]
    fn model_json_round_trips() {
        let m = RnnModel::fully_connected(&[("total_msg_rate", 10.0)], 2, 2, 1);
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<RnnModel>(&text).unwrap(), m);
    }
}
