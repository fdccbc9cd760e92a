//! Minibatch gradient descent on the weighted cross-entropy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::weighted_cross_entropy;
use super::network::{crop_probs, Network, NetworkConfig, Parameters};
use super::ops::Tensor;
use crate::error::{Error, Result};
use crate::model::{BScan, LabelMap, PixelMask};

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    /// Stochastic gradient descent with heavy-ball momentum (0 is plain SGD).
    Sgd { momentum: f64 },
    /// Adam with bias-corrected moment estimates.
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn sgd() -> Self {
        Optimizer::Sgd { momentum: 0.0 }
    }

    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Learning-rate schedule over the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    /// Half-cosine from the base rate down to `final_fraction` of it at the last step.
    Cosine { final_fraction: f64 },
}

impl Schedule {
    /// Rate multiplier for `step` of `total` steps.
    pub fn factor(self, step: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => 1.0,
            Schedule::Cosine { final_fraction } => {
                let t = if total > 1 { step as f64 / (total - 1) as f64 } else { 0.0 };
                final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub schedule: Schedule,
    pub epochs: usize,
    pub batch_size: usize,
    /// Loss weight of minority-class pixels relative to the others.
    pub minority_weight: f64,
    /// Classes receiving `minority_weight`; `None` picks the two least frequent
    /// classes in the training labels.
    pub minority_classes: Option<Vec<usize>>,
    /// Exclude each sample's ignore mask (all-zero regions) from the loss.
    pub zero_region_mask: bool,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 3e-3,
            optimizer: Optimizer::adam(),
            schedule: Schedule::Cosine { final_fraction: 0.05 },
            epochs: 30,
            batch_size: 2,
            minority_weight: 10.0,
            minority_classes: None,
            zero_region_mask: true,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.minority_weight > 0.0) {
            return Err(Error::Config("minority_weight must be > 0".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        match self.optimizer {
            Optimizer::Sgd { momentum } if !(0.0..1.0).contains(&momentum) => {
                return Err(Error::Config("momentum must be in [0, 1)".into()));
            }
            Optimizer::Adam { beta1, beta2, epsilon }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) =>
            {
                return Err(Error::Config("adam betas must be in [0, 1) and epsilon > 0".into()));
            }
            _ => {}
        }
        if let Schedule::Cosine { final_fraction } = self.schedule {
            if !(0.0..=1.0).contains(&final_fraction) {
                return Err(Error::Config("schedule final_fraction must be in [0, 1]".into()));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One training image with its per-pixel targets.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub image: BScan,
    pub labels: LabelMap,
    /// Pixels to leave out of the loss.
    pub ignore: Option<PixelMask>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Parameters,
    /// Mean minibatch loss of each epoch.
    pub loss_history: Vec<f64>,
    pub class_weights: Vec<f64>,
}

/// Per-class loss weights: `minority_weight` for the minority classes, 1 elsewhere.
pub fn class_weights(samples: &[TrainingSample], num_classes: usize, config: &TrainingConfig) -> Vec<f64> {
    let minority = match &config.minority_classes {
        Some(classes) => classes.clone(),
        None => {
            let mut counts = vec![0usize; num_classes];
            for s in samples {
                for (i, &l) in s.labels.as_slice().iter().enumerate() {
                    let ignored = config.zero_region_mask && s.ignore.as_ref().is_some_and(|m| m.as_slice()[i]);
                    if !ignored {
                        counts[l as usize] += 1;
                    }
                }
            }
            let mut order: Vec<usize> = (0..num_classes).collect();
            order.sort_by_key(|&k| (counts[k], k));
            order.truncate(2.min(num_classes));
            order
        }
    };
    let mut weights = vec![1.0; num_classes];
    for k in minority {
        if k < num_classes {
            weights[k] = config.minority_weight;
        }
    }
    weights
}

/// Loss and parameter gradient for one sample.
pub fn sample_gradient(
    net: &Network,
    params: &Parameters,
    sample: &TrainingSample,
    weights: &[f64],
    use_ignore: bool,
) -> Result<(f64, Parameters)> {
    let (h, w) = (sample.image.height(), sample.image.width());
    if sample.labels.shape() != (h, w) {
        return Err(Error::Shape(format!(
            "labels {}x{} do not match image {h}x{w}",
            sample.labels.height(),
            sample.labels.width()
        )));
    }
    let input = net.padded_input(&sample.image);
    let (probs, cache) = net.forward_tensor(params, &input)?;
    let cropped = crop_probs(&probs, h, w);
    let ignore = if use_ignore { sample.ignore.as_ref() } else { None };
    let out = weighted_cross_entropy(&cropped, &sample.labels, weights, ignore)?;
    let mut grad = Tensor::zeros(probs.channels, probs.height, probs.width);
    for k in 0..probs.channels {
        for r in 0..h {
            let dst = (k * probs.height + r) * probs.width;
            let src = (k * h + r) * w;
            grad.data[dst..dst + w].copy_from_slice(&out.grad_logits[src..src + w]);
        }
    }
    Ok((out.loss, net.backward(params, &cache, &grad)))
}

/// Trains from the config's initialization. Deterministic for fixed seeds:
/// per-sample gradients are computed in parallel but summed in batch order.
pub fn train(dataset: &[TrainingSample], tconfig: &TrainingConfig, nconfig: &NetworkConfig) -> Result<TrainOutcome> {
    tconfig.validate()?;
    let net = Network::new(nconfig.clone())?;
    let params = net.init_params();
    train_from(&net, params, dataset, tconfig)
}

/// Continues training from the given parameters.
pub fn train_from(
    net: &Network,
    mut params: Parameters,
    dataset: &[TrainingSample],
    tconfig: &TrainingConfig,
) -> Result<TrainOutcome> {
    tconfig.validate()?;
    net.check_params(&params)?;
    if dataset.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let weights = class_weights(dataset, net.config().num_classes, tconfig);
    let mut rng = ChaCha8Rng::seed_from_u64(tconfig.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut state = OptimizerState::new(tconfig.optimizer, &params);
    let mut history = Vec::with_capacity(tconfig.epochs);
    let mut step = 0;
    let total_steps = tconfig.epochs * dataset.len().div_ceil(tconfig.batch_size);
    for epoch in 0..tconfig.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(tconfig.batch_size) {
            let results: Vec<Result<(f64, Parameters)>> = batch
                .par_iter()
                .map(|&i| sample_gradient(net, &params, &dataset[i], &weights, tconfig.zero_region_mask))
                .collect();
            let mut grad = params.zeros_like();
            let mut loss = 0.0;
            for r in results {
                let (l, g) = r?;
                loss += l;
                grad.add_scaled(1.0, &g);
            }
            let scale = 1.0 / batch.len() as f64;
            loss *= scale;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            grad.scale(scale);
            let lr = tconfig.learning_rate * tconfig.schedule.factor(step, total_steps);
            state.step(&mut params, &grad, lr);
            if !params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: f64::NAN,
                });
            }
            epoch_loss += loss;
            batches += 1;
            step += 1;
        }
        let mean = epoch_loss / batches as f64;
        log::debug!("epoch {epoch}: loss {mean:.5}");
        history.push(mean);
    }
    Ok(TrainOutcome {
        params,
        loss_history: history,
        class_weights: weights,
    })
}

struct OptimizerState {
    rule: Optimizer,
    first: Parameters,
    second: Parameters,
    steps: i32,
}

impl OptimizerState {
    fn new(rule: Optimizer, params: &Parameters) -> Self {
        OptimizerState {
            rule,
            first: params.zeros_like(),
            second: params.zeros_like(),
            steps: 0,
        }
    }

    fn step(&mut self, params: &mut Parameters, grad: &Parameters, lr: f64) {
        self.steps += 1;
        match self.rule {
            Optimizer::Sgd { momentum } => {
                self.first.scale(momentum);
                self.first.add_scaled(1.0, grad);
                params.add_scaled(-lr, &self.first);
            }
            Optimizer::Adam { beta1, beta2, epsilon } => {
                let c1 = 1.0 - beta1.powi(self.steps);
                let c2 = 1.0 - beta2.powi(self.steps);
                let groups = params.groups.iter_mut().zip(&grad.groups);
                let moments = self.first.groups.iter_mut().zip(self.second.groups.iter_mut());
                for ((p, g), (m, v)) in groups.zip(moments) {
                    for i in 0..p.values.len() {
                        let gi = g.values[i];
                        m.values[i] = beta1 * m.values[i] + (1.0 - beta1) * gi;
                        v.values[i] = beta2 * v.values[i] + (1.0 - beta2) * gi * gi;
                        let m_hat = m.values[i] / c1;
                        let v_hat = v.values[i] / c2;
                        p.values[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
    }
}

/// Fraction of pixels whose argmax label matches `labels`.
pub fn pixel_accuracy(net: &Network, params: &Parameters, samples: &[TrainingSample]) -> Result<f64> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for s in samples {
        let pred = super::loss::predict_labels(&net.forward(params, &s.image)?);
        hit += pred
            .as_slice()
            .iter()
            .zip(s.labels.as_slice())
            .filter(|(a, b)| a == b)
            .count();
        total += pred.as_slice().len();
    }
    Ok(hit as f64 / total.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints() {
        let s = Schedule::Cosine { final_fraction: 0.05 };
        assert_eq!(s.factor(0, 11), 1.0);
        assert!((s.factor(10, 11) - 0.05).abs() < 1e-15);
        assert!((s.factor(5, 11) - 0.525).abs() < 1e-15);
        assert_eq!(s.factor(0, 1), 1.0);
        assert_eq!(Schedule::Constant.factor(7, 11), 1.0);
    }

    #[test]
    fn schedule_parses_from_toml() {
        let cfg: TrainingConfig = toml::from_str("schedule = { kind = \"constant\" }").unwrap();
        assert_eq!(cfg.schedule, Schedule::Constant);
        let bad = TrainingConfig {
            schedule: Schedule::Cosine { final_fraction: 2.0 },
            ..TrainingConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
