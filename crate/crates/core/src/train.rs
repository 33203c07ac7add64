//! Optimization of the denoiser on a scene dataset.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    combine_raw, loss_inputs, weighted_chamfer_with_grad, ChannelSigmaData, LossConfig,
    NoiseDistribution, TrainingDraw,
};
use crate::error::{Error, Result};
use crate::geometry::normalize_layout;
use crate::nn::{DenoiserConfig, DenoiserNet, TrainedDenoiser};
use crate::scene::{rotate_scene, NormalizedLayout, SceneLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_epochs: usize,
    /// Learning rate at epoch 0 as a fraction of the base rate.
    pub warmup_start_factor: f64,
    pub decay_epochs: usize,
    pub min_learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub p_drop: f64,
    pub kappa: f64,
    pub noise: NoiseDistribution,
    pub augmentation: bool,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainingConfig {
    pub fn paper() -> Self {
        let loss = LossConfig::default();
        Self {
            epochs: 3000,
            batch_size: 32,
            learning_rate: 1e-4,
            warmup_epochs: 50,
            warmup_start_factor: 0.01,
            decay_epochs: 2200,
            min_learning_rate: 1e-8,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            p_drop: loss.p_drop,
            kappa: loss.kappa,
            noise: loss.noise,
            augmentation: true,
            validation_fraction: 0.1,
            seed: 0,
        }
    }

    /// Short schedule for toy data on a single core.
    pub fn desk() -> Self {
        Self {
            epochs: 300,
            learning_rate: 1e-3,
            warmup_epochs: 10,
            decay_epochs: 290,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(format!("training config: {m}")));
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be positive");
        }
        if self.warmup_epochs + self.decay_epochs > self.epochs {
            return fail("warmup_epochs + decay_epochs must not exceed epochs");
        }
        let rates = [
            self.learning_rate,
            self.min_learning_rate,
            self.warmup_start_factor,
            self.adam_eps,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return fail("rates must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.weight_decay >= 0.0)
        {
            return fail("invalid optimizer moments or weight decay");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return fail("validation_fraction must lie in (0, 1)");
        }
        LossConfig {
            kappa: self.kappa,
            p_drop: self.p_drop,
            noise: self.noise,
        }
        .validate()
    }

    /// Linear warmup from `warmup_start_factor`, cosine decay, then the floor.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let base = self.learning_rate;
        if epoch < self.warmup_epochs {
            let t = epoch as f64 / self.warmup_epochs as f64;
            return base * (self.warmup_start_factor + (1.0 - self.warmup_start_factor) * t);
        }
        let e = epoch - self.warmup_epochs;
        if e >= self.decay_epochs {
            return self.min_learning_rate;
        }
        let t = e as f64 / self.decay_epochs as f64;
        self.min_learning_rate + 0.5 * (base - self.min_learning_rate) * (1.0 + (PI * t).cos())
    }
}

/// Decoupled-weight-decay Adam with bias correction.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(n: usize, cfg: &TrainingConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            params[i] *= 1.0 - lr * self.weight_decay;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Adds `scale` times the loss gradient of one scene into `grad`; returns the
/// unscaled loss.
pub fn accumulate_scene_gradient(
    net: &DenoiserNet,
    scene: &NormalizedLayout,
    draw: &TrainingDraw,
    sigma_data: &ChannelSigmaData,
    kappa: f64,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let inputs = loss_inputs(scene, draw, sigma_data)?;
    let (raw, cache) = net.forward_train(
        &inputs.x_in,
        &inputs.cond,
        inputs.coeffs.c_noise,
        draw.dropout_seed,
    )?;
    let pred = combine_raw(&inputs, &raw);
    let (loss, d_pred) = weighted_chamfer_with_grad(
        &pred,
        &scene.spatial,
        &scene.categories,
        &inputs.weights,
        kappa,
    )?;
    let d_raw: Vec<_> = d_pred
        .iter()
        .map(|g| std::array::from_fn(|c| scale * g[c] * inputs.coeffs.c_out[c]))
        .collect();
    net.backward(&cache, &d_raw, grad)?;
    Ok(loss)
}

/// Mean loss over a batch with fixed draws and its parameter gradient.
pub fn batch_loss_and_gradient(
    net: &DenoiserNet,
    batch: &[NormalizedLayout],
    draws: &[TrainingDraw],
    sigma_data: &ChannelSigmaData,
    kappa: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() || batch.len() != draws.len() {
        return Err(Error::invalid(
            "batch and draws must be non-empty and of equal length",
        ));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; net.params().len()];
    let mut loss = 0.0;
    for (scene, draw) in batch.iter().zip(draws) {
        loss += accumulate_scene_gradient(net, scene, draw, sigma_data, kappa, scale, &mut grad)?;
    }
    Ok((loss * scale, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    /// Weights of the epoch with the lowest validation loss.
    pub model: TrainedDenoiser,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// The four quarter-turn versions of a scene, normalized.
fn quarter_turns(scene: &SceneLayout) -> Result<Vec<NormalizedLayout>> {
    (0..4)
        .map(|k| Ok(normalize_layout(&rotate_scene(scene, k as f64 * FRAC_PI_2))?.0))
        .collect()
}

fn validation_loss(
    net: &DenoiserNet,
    scenes: &[NormalizedLayout],
    draws: &[TrainingDraw],
    sigma_data: &ChannelSigmaData,
    kappa: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (s, d) in scenes.iter().zip(draws) {
        total += crate::diffusion::scene_loss(net, s, d, sigma_data, kappa)?;
    }
    Ok(total / scenes.len() as f64)
}

/// Trains from scratch; fully determined by the configs and the data order.
pub fn train(
    scenes: &[SceneLayout],
    net_config: DenoiserConfig,
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    net_config.validate()?;
    if scenes.len() < 2 {
        return Err(Error::invalid("training needs at least two scenes"));
    }
    for s in scenes {
        s.validate(net_config.vocab_size, net_config.max_objects)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((cfg.validation_fraction * scenes.len() as f64).round() as usize)
        .clamp(1, scenes.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);

    let train_views: Vec<Vec<NormalizedLayout>> = train_idx
        .iter()
        .map(|&i| {
            if cfg.augmentation {
                quarter_turns(&scenes[i])
            } else {
                Ok(vec![normalize_layout(&scenes[i])?.0])
            }
        })
        .collect::<Result<_>>()?;
    let val: Vec<NormalizedLayout> = val_idx
        .iter()
        .map(|&i| Ok(normalize_layout(&scenes[i])?.0))
        .collect::<Result<_>>()?;
    let canonical: Vec<NormalizedLayout> = train_views.iter().map(|v| v[0].clone()).collect();
    let sigma_data = ChannelSigmaData::from_layouts(&canonical)?;

    let mut net = DenoiserNet::new(net_config, rng.random())?;
    let mut val_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let val_draws: Vec<TrainingDraw> = val
        .iter()
        .map(|s| TrainingDraw {
            dropout_seed: None,
            ..TrainingDraw::sample(s.spatial.len(), cfg.p_drop, &cfg.noise, &mut val_rng)
        })
        .collect();

    let mut opt = AdamW::new(net.params().len(), cfg);
    let mut best = (f64::INFINITY, 0, net.params().to_vec());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut grad = vec![0.0; net.params().len()];
    let mut epoch_order: Vec<usize> = (0..train_views.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        epoch_order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in epoch_order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let views = &train_views[i];
                let scene = &views[rng.random_range(0..views.len())];
                let draw =
                    TrainingDraw::sample(scene.spatial.len(), cfg.p_drop, &cfg.noise, &mut rng);
                let loss = accumulate_scene_gradient(
                    &net,
                    scene,
                    &draw,
                    &sigma_data,
                    cfg.kappa,
                    scale,
                    &mut grad,
                )?;
                epoch_loss += loss;
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged {
                    epoch,
                    detail: "non-finite gradient".into(),
                });
            }
            opt.step(net.params_mut(), &grad, lr);
        }
        let train_loss = epoch_loss / train_views.len() as f64;
        let validation_loss = validation_loss(&net, &val, &val_draws, &sigma_data, cfg.kappa)?;
        if !train_loss.is_finite() || !validation_loss.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                detail: format!("train loss {train_loss}, validation loss {validation_loss}"),
            });
        }
        if validation_loss < best.0 {
            best = (validation_loss, epoch, net.params().to_vec());
        }
        let log = EpochLog {
            epoch,
            learning_rate: lr,
            train_loss,
            validation_loss,
        };
        on_epoch(&log);
        history.push(log);
    }
    let config = net.config().clone();
    Ok(TrainingOutcome {
        model: TrainedDenoiser {
            net: DenoiserNet::from_params(config, best.2)?,
            sigma_data,
        },
        history,
        best_epoch: best.1,
    })
}
