//! Preconditioning, training noise, the semantic Chamfer objective and the
//! weighted training loss.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FloorPlan;
use crate::scene::{NormalizedLayout, Spatial, DIMENSION, POSITION};

/// Fixed data std of the two rotation channels.
pub const ROTATION_SIGMA_DATA: f64 = 0.5;
/// Noise level substituted for `σ = 0` when taking `ln σ`.
pub const C_NOISE_SIGMA_FLOOR: f64 = 0.005;
pub const DEFAULT_KAPPA: f64 = 1e4;
pub const DEFAULT_P_DROP: f64 = 0.2;
/// Spread of the training noise distribution (std of `z` in either reading).
pub const TRAINING_SIGMA_SPREAD: f64 = 0.5;

/// Per-channel data standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 8]", into = "[f64; 8]")]
pub struct ChannelSigmaData([f64; 8]);

impl ChannelSigmaData {
    pub fn new(position: [f64; 3], dimension: [f64; 3]) -> Result<Self> {
        let mut s = [ROTATION_SIGMA_DATA; 8];
        s[POSITION].copy_from_slice(&position);
        s[DIMENSION].copy_from_slice(&dimension);
        Self::try_from(s)
    }

    /// Channel-wise std over every object in a normalized dataset.
    pub fn from_layouts(layouts: &[NormalizedLayout]) -> Result<Self> {
        let rows: Vec<&Spatial> = layouts.iter().flat_map(|l| &l.spatial).collect();
        if rows.len() < 2 {
            return Err(Error::invalid(
                "need at least two objects to estimate sigma_data",
            ));
        }
        let n = rows.len() as f64;
        let std = |c: usize| {
            let mean = rows.iter().map(|x| x[c]).sum::<f64>() / n;
            (rows.iter().map(|x| (x[c] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self::new([std(0), std(1), std(2)], [std(5), std(6), std(7)]).map_err(|_| {
            Error::invalid("training data has a constant position or dimension channel")
        })
    }

    pub fn as_array(&self) -> &[f64; 8] {
        &self.0
    }
}

impl TryFrom<[f64; 8]> for ChannelSigmaData {
    type Error = Error;

    fn try_from(s: [f64; 8]) -> Result<Self> {
        if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(
                "sigma_data entries must be positive and finite",
            ));
        }
        if s[3] != ROTATION_SIGMA_DATA || s[4] != ROTATION_SIGMA_DATA {
            return Err(Error::invalid("rotation sigma_data must equal 0.5"));
        }
        Ok(Self(s))
    }
}

impl From<ChannelSigmaData> for [f64; 8] {
    fn from(s: ChannelSigmaData) -> Self {
        s.0
    }
}

/// Scalar preconditioning factors for a single channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelCoeffs {
    pub c_skip: f64,
    pub c_in: f64,
    pub c_out: f64,
}

impl ChannelCoeffs {
    pub fn new(sigma: f64, sigma_data: f64) -> Self {
        let total = sigma_data * sigma_data + sigma * sigma;
        let root = total.sqrt();
        Self {
            c_skip: sigma_data * sigma_data / total,
            c_in: 1.0 / root,
            c_out: sigma * sigma_data / root,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreconditionCoeffs {
    pub c_skip: [f64; 8],
    pub c_in: [f64; 8],
    pub c_out: [f64; 8],
    pub c_noise: f64,
}

pub fn c_noise(sigma: f64) -> f64 {
    sigma.max(C_NOISE_SIGMA_FLOOR).ln() / 4.0
}

pub fn precondition_coeffs(
    sigma: f64,
    sigma_data: &ChannelSigmaData,
) -> Result<PreconditionCoeffs> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(
            "noise level must be finite and non-negative",
        ));
    }
    let mut out = PreconditionCoeffs {
        c_skip: [0.0; 8],
        c_in: [0.0; 8],
        c_out: [0.0; 8],
        c_noise: c_noise(sigma),
    };
    for (c, &sd) in sigma_data.0.iter().enumerate() {
        let k = ChannelCoeffs::new(sigma, sd);
        out.c_skip[c] = k.c_skip;
        out.c_in[c] = k.c_in;
        out.c_out[c] = k.c_out;
    }
    Ok(out)
}

/// Floor plus optional categories; `None` is the null conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    /// Floor in the normalized frame.
    pub floor: FloorPlan,
    pub categories: Option<Vec<usize>>,
}

/// The raw network `F_θ`.
pub trait RawNetwork {
    /// `dropout_seed` enables train-time dropout with a reproducible mask.
    fn raw_forward(
        &self,
        x_in: &[Spatial],
        cond: &Conditioning,
        c_noise: f64,
        dropout_seed: Option<u64>,
    ) -> Result<Vec<Spatial>>;
}

/// A denoiser `D(x; σ)` with its conditioning already bound.
pub trait Denoiser {
    fn denoise(&self, x: &[Spatial], sigma: f64) -> Result<Vec<Spatial>>;
}

/// A trained model that can be bound to any conditioning.
pub trait LayoutModel: Send + Sync {
    fn bind<'a>(&'a self, cond: &Conditioning) -> Result<Box<dyn Denoiser + 'a>>;
    fn vocab_size(&self) -> usize;
    fn max_objects(&self) -> usize;
}

pub(crate) fn check_shapes(x: &[Spatial], cond: &Conditioning) -> Result<()> {
    if let Some(c) = &cond.categories {
        if c.len() != x.len() {
            return Err(Error::invalid(format!(
                "{} objects but {} categories",
                x.len(),
                c.len()
            )));
        }
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite spatial input"));
    }
    Ok(())
}

fn combine(x: &[Spatial], raw: &[Spatial], k: &PreconditionCoeffs) -> Vec<Spatial> {
    x.iter()
        .zip(raw)
        .map(|(x, f)| std::array::from_fn(|c| k.c_skip[c] * x[c] + k.c_out[c] * f[c]))
        .collect()
}

fn scale_input(x: &[Spatial], k: &PreconditionCoeffs) -> Vec<Spatial> {
    x.iter()
        .map(|x| std::array::from_fn(|c| k.c_in[c] * x[c]))
        .collect()
}

/// `D(x; y, σ) = c_skip x + c_out F(c_in x; y, c_noise)`, channel-wise.
pub fn denoise<N: RawNetwork + ?Sized>(
    net: &N,
    x_noisy: &[Spatial],
    cond: &Conditioning,
    sigma: f64,
    sigma_data: &ChannelSigmaData,
) -> Result<Vec<Spatial>> {
    check_shapes(x_noisy, cond)?;
    let k = precondition_coeffs(sigma, sigma_data)?;
    let raw = net.raw_forward(&scale_input(x_noisy, &k), cond, k.c_noise, None)?;
    Ok(combine(x_noisy, &raw, &k))
}

/// Distribution of training noise levels, `z ~ N(mean, std²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseDistribution {
    /// `σ = |z|`.
    HalfNormal { std: f64 },
    /// `σ = exp(z)`.
    LogNormal { mean: f64, std: f64 },
}

impl Default for NoiseDistribution {
    fn default() -> Self {
        Self::HalfNormal {
            std: TRAINING_SIGMA_SPREAD,
        }
    }
}

impl NoiseDistribution {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::HalfNormal { std } => std > 0.0 && std.is_finite(),
            Self::LogNormal { mean, std } => std > 0.0 && std.is_finite() && mean.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "noise distribution needs a finite positive spread",
            ))
        }
    }

    /// Always positive: a zero draw is replaced by the smallest positive value.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::HalfNormal { std } => {
                let z: f64 = rng.sample(StandardNormal);
                (std * z).abs().max(f64::MIN_POSITIVE)
            }
            Self::LogNormal { mean, std } => {
                LogNormal::new(mean, std).expect("validated").sample(rng)
            }
        }
    }
}

pub fn standard_normal_rows<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Spatial> {
    (0..n)
        .map(|_| std::array::from_fn(|_| rng.sample(StandardNormal)))
        .collect()
}

pub fn perturb<R: Rng + ?Sized>(x: &[Spatial], sigma: f64, rng: &mut R) -> Vec<Spatial> {
    let eps = standard_normal_rows(x.len(), rng);
    add_scaled(x, &eps, sigma)
}

pub(crate) fn add_scaled(x: &[Spatial], eps: &[Spatial], sigma: f64) -> Vec<Spatial> {
    x.iter()
        .zip(eps)
        .map(|(x, e)| std::array::from_fn(|c| x[c] + sigma * e[c]))
        .collect()
}

fn pair_cost(a: &Spatial, b: &Spatial, same: bool, weights: &[f64; 8], kappa: f64) -> f64 {
    let d: f64 = (0..8).map(|c| weights[c] * (a[c] - b[c]).powi(2)).sum();
    if same {
        d
    } else {
        d + kappa
    }
}

/// Index of the smallest value; the first one wins on ties.
fn argmin(values: impl Iterator<Item = f64>) -> (usize, f64) {
    values.enumerate().fold(
        (0, f64::INFINITY),
        |best, (i, v)| if v < best.1 { (i, v) } else { best },
    )
}

/// Sum in ascending order, so the result does not depend on row order.
fn ordered_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

fn check_sets(
    pred: &[Spatial],
    pred_cats: &[usize],
    reference: &[Spatial],
    ref_cats: &[usize],
) -> Result<()> {
    if pred.is_empty() || reference.is_empty() {
        return Err(Error::invalid("Chamfer distance of an empty set"));
    }
    if pred.len() != pred_cats.len() || reference.len() != ref_cats.len() {
        return Err(Error::invalid(
            "spatial values and categories differ in length",
        ));
    }
    if pred.len() != reference.len() {
        return Err(Error::invalid(
            "predicted and reference sets differ in size",
        ));
    }
    Ok(())
}

/// Bidirectional nearest-neighbour loss where cross-category pairs pay `kappa`.
pub fn semantic_chamfer(
    pred: &[Spatial],
    pred_cats: &[usize],
    reference: &[Spatial],
    ref_cats: &[usize],
    kappa: f64,
) -> Result<f64> {
    weighted_semantic_chamfer(pred, pred_cats, reference, ref_cats, &[1.0; 8], kappa)
}

/// As [`semantic_chamfer`] with per-channel weights on the squared distance.
pub fn weighted_semantic_chamfer(
    pred: &[Spatial],
    pred_cats: &[usize],
    reference: &[Spatial],
    ref_cats: &[usize],
    weights: &[f64; 8],
    kappa: f64,
) -> Result<f64> {
    check_sets(pred, pred_cats, reference, ref_cats)?;
    let n = pred.len();
    let cost: Vec<f64> = (0..n * n)
        .map(|ij| {
            let (i, j) = (ij / n, ij % n);
            pair_cost(
                &pred[i],
                &reference[j],
                pred_cats[i] == ref_cats[j],
                weights,
                kappa,
            )
        })
        .collect();
    let forward = ordered_sum(
        (0..n)
            .map(|i| argmin((0..n).map(|j| cost[i * n + j])).1)
            .collect(),
    );
    let backward = ordered_sum(
        (0..n)
            .map(|j| argmin((0..n).map(|i| cost[i * n + j])).1)
            .collect(),
    );
    Ok((forward + backward) * (1.0 / (2 * n) as f64))
}

/// Weighted Chamfer value and its gradient with respect to `pred`, for sets
/// sharing one category list.
pub fn weighted_chamfer_with_grad(
    pred: &[Spatial],
    reference: &[Spatial],
    categories: &[usize],
    weights: &[f64; 8],
    kappa: f64,
) -> Result<(f64, Vec<Spatial>)> {
    check_sets(pred, categories, reference, categories)?;
    let n = pred.len();
    let cost = |i: usize, j: usize| {
        pair_cost(
            &pred[i],
            &reference[j],
            categories[i] == categories[j],
            weights,
            kappa,
        )
    };
    let norm = 1.0 / (2 * n) as f64;
    let (mut forward, mut backward) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut grad = vec![[0.0; 8]; n];
    let pull = |i: usize, j: usize, grad: &mut Vec<Spatial>| {
        for c in 0..8 {
            grad[i][c] += norm * 2.0 * weights[c] * (pred[i][c] - reference[j][c]);
        }
    };
    for i in 0..n {
        let (j, v) = argmin((0..n).map(|j| cost(i, j)));
        forward.push(v);
        pull(i, j, &mut grad);
    }
    for j in 0..n {
        let (i, v) = argmin((0..n).map(|i| cost(i, j)));
        backward.push(v);
        pull(i, j, &mut grad);
    }
    Ok(((ordered_sum(forward) + ordered_sum(backward)) * norm, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kappa: f64,
    pub p_drop: f64,
    pub noise: NoiseDistribution,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kappa: DEFAULT_KAPPA,
            p_drop: DEFAULT_P_DROP,
            noise: NoiseDistribution::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 100.0) || !self.kappa.is_finite() {
            return Err(Error::invalid("kappa must be at least 100"));
        }
        if !(0.0..1.0).contains(&self.p_drop) {
            return Err(Error::invalid("p_drop must lie in [0, 1)"));
        }
        self.noise.validate()
    }
}

/// Every random quantity consumed by the loss of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDraw {
    pub sigma: f64,
    pub eps: Vec<Spatial>,
    pub drop_categories: bool,
    /// `None` evaluates the network without decoder dropout.
    pub dropout_seed: Option<u64>,
}

impl TrainingDraw {
    pub fn sample<R: Rng + ?Sized>(
        n_objects: usize,
        p_drop: f64,
        noise: &NoiseDistribution,
        rng: &mut R,
    ) -> Self {
        let sigma = noise.sample(rng);
        let eps = standard_normal_rows(n_objects, rng);
        let drop_categories = rng.random::<f64>() < p_drop;
        let dropout_seed = Some(rng.random());
        Self {
            sigma,
            eps,
            drop_categories,
            dropout_seed,
        }
    }
}

/// Network inputs and loss weights for one scene under one draw.
pub(crate) struct LossInputs {
    pub x_noisy: Vec<Spatial>,
    pub x_in: Vec<Spatial>,
    pub cond: Conditioning,
    pub coeffs: PreconditionCoeffs,
    pub weights: [f64; 8],
}

pub(crate) fn loss_inputs(
    scene: &NormalizedLayout,
    draw: &TrainingDraw,
    sigma_data: &ChannelSigmaData,
) -> Result<LossInputs> {
    if draw.eps.len() != scene.spatial.len() {
        return Err(Error::invalid("noise draw does not match the scene size"));
    }
    let coeffs = precondition_coeffs(draw.sigma, sigma_data)?;
    let x_noisy = add_scaled(&scene.spatial, &draw.eps, draw.sigma);
    let x_in = scale_input(&x_noisy, &coeffs);
    let weights = std::array::from_fn(|c| 1.0 / (coeffs.c_out[c] * coeffs.c_out[c]));
    let cond = Conditioning {
        floor: scene.floor.clone(),
        categories: (!draw.drop_categories).then(|| scene.categories.clone()),
    };
    Ok(LossInputs {
        x_noisy,
        x_in,
        cond,
        coeffs,
        weights,
    })
}

pub(crate) fn combine_raw(inputs: &LossInputs, raw: &[Spatial]) -> Vec<Spatial> {
    combine(&inputs.x_noisy, raw, &inputs.coeffs)
}

/// Weighted loss of one scene under a fixed draw. Dropout replaces the
/// conditioning only; the loss always compares true categories.
pub fn scene_loss<N: RawNetwork + ?Sized>(
    net: &N,
    scene: &NormalizedLayout,
    draw: &TrainingDraw,
    sigma_data: &ChannelSigmaData,
    kappa: f64,
) -> Result<f64> {
    let inputs = loss_inputs(scene, draw, sigma_data)?;
    let raw = net.raw_forward(
        &inputs.x_in,
        &inputs.cond,
        inputs.coeffs.c_noise,
        draw.dropout_seed,
    )?;
    let pred = combine_raw(&inputs, &raw);
    weighted_semantic_chamfer(
        &pred,
        &scene.categories,
        &scene.spatial,
        &scene.categories,
        &inputs.weights,
        kappa,
    )
}

/// Mean weighted loss over a batch with fresh draws from `rng`.
pub fn training_loss<N: RawNetwork + ?Sized, R: Rng + ?Sized>(
    batch: &[NormalizedLayout],
    net: &N,
    sigma_data: &ChannelSigmaData,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    let mut total = 0.0;
    for scene in batch {
        let draw = TrainingDraw::sample(scene.spatial.len(), cfg.p_drop, &cfg.noise, rng);
        total += scene_loss(net, scene, &draw, sigma_data, cfg.kappa)?;
    }
    Ok(total / batch.len() as f64)
}
