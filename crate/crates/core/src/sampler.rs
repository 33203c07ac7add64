//! Second-order stochastic sampling with inpainting, and the application
//! modes built on it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{standard_normal_rows, Conditioning, Denoiser, LayoutModel};
use crate::error::{Error, Result};
use crate::geometry::metrics::denormalize_object;
use crate::geometry::{normalize_layout, FloorPlan, NormContext, Vec2};
use crate::scene::{
    encode_rotation, SceneLayout, SceneObject, Spatial, DIMENSION, POSITION, ROTATION,
};

/// Smallest dimension, in meters, a sampled object may have.
pub const MIN_DIMENSION_M: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub rho: f64,
    pub s_min: f64,
    pub s_noise: f64,
    pub s_churn: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            sigma_max: 1.0,
            sigma_min: 0.005,
            rho: 7.0,
            s_min: 0.005,
            s_noise: 1.0,
            s_churn: 5.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.steps >= 1
            && self.sigma_min > 0.0
            && self.sigma_max > self.sigma_min
            && self.sigma_max.is_finite()
            && self.rho > 0.0
            && self.s_min >= 0.0
            && self.s_noise >= 0.0
            && self.s_churn >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "sampler config needs steps >= 1, sigma_max > sigma_min > 0, rho > 0 and non-negative churn terms",
            ))
        }
    }

    /// Copy starting at `sigma_max`; a level at or below `sigma_min` gives a
    /// single step from `sigma_min`.
    pub fn starting_at(&self, sigma_max: f64) -> Self {
        if sigma_max <= self.sigma_min {
            Self {
                steps: 1,
                sigma_max: self.sigma_min,
                ..self.clone()
            }
        } else {
            Self {
                sigma_max: sigma_max.min(self.sigma_max),
                ..self.clone()
            }
        }
    }
}

/// Noise levels `t_0 > … > t_{T-1} > t_T = 0`.
pub fn discretize(cfg: &SamplerConfig) -> Result<Vec<f64>> {
    if cfg.steps == 1 && cfg.sigma_max > 0.0 {
        return Ok(vec![cfg.sigma_max, 0.0]);
    }
    cfg.validate()?;
    let inv = 1.0 / cfg.rho;
    let (a, b) = (cfg.sigma_max.powf(inv), cfg.sigma_min.powf(inv));
    let last = (cfg.steps - 1) as f64;
    let mut t: Vec<f64> = (0..cfg.steps)
        .map(|i| (a + i as f64 / last * (b - a)).powf(cfg.rho))
        .collect();
    t[0] = cfg.sigma_max;
    t[cfg.steps - 1] = cfg.sigma_min;
    t.push(0.0);
    Ok(t)
}

pub fn gamma_schedule(cfg: &SamplerConfig, t: &[f64]) -> Vec<f64> {
    let gamma = (cfg.s_churn / cfg.steps as f64).min(2f64.sqrt() - 1.0);
    t[..t.len() - 1]
        .iter()
        .map(|&ti| if ti >= cfg.s_min { gamma } else { 0.0 })
        .collect()
}

/// Retention mask over the `N × 8` state. With `relax_step = Some(T_s)` the
/// mask is applied only while the step index is below `T_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct InpaintMask {
    pub entries: Vec<[bool; 8]>,
    pub relax_step: Option<usize>,
}

impl InpaintMask {
    pub fn none(n: usize) -> Self {
        Self {
            entries: vec![[false; 8]; n],
            relax_step: None,
        }
    }

    /// Whole rows fixed for the first `fixed` objects.
    pub fn leading_rows(n: usize, fixed: usize) -> Self {
        Self {
            entries: (0..n).map(|i| [i < fixed; 8]).collect(),
            relax_step: None,
        }
    }

    /// The given channels fixed for every object.
    pub fn channels(n: usize, channels: &[usize]) -> Self {
        let mut row = [false; 8];
        for &c in channels {
            row[c] = true;
        }
        Self {
            entries: vec![row; n],
            relax_step: None,
        }
    }

    pub fn with_relax_step(mut self, t_s: usize) -> Self {
        self.relax_step = Some(t_s);
        self
    }

    /// Whether the mask is applied after step `i` (and to the initial state
    /// for `i = 0`).
    pub fn active(&self, step: usize) -> bool {
        self.relax_step.is_none_or(|t_s| step < t_s)
    }

    fn is_empty(&self) -> bool {
        self.entries.iter().flatten().all(|m| !m)
    }
}

fn inpaint(x: &mut [Spatial], mask: &InpaintMask, known: &[Spatial], eps: &[Spatial], t: f64) {
    for ((row, m), (k, e)) in x.iter_mut().zip(&mask.entries).zip(known.iter().zip(eps)) {
        for c in 0..8 {
            if m[c] {
                row[c] = if t == 0.0 { k[c] } else { k[c] + t * e[c] };
            }
        }
    }
}

fn check_finite(x: &[Spatial], step: usize) -> Result<()> {
    if x.iter().flatten().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            detail: "non-finite sampler state".into(),
        })
    }
}

/// Runs the stochastic Heun sampler from `x_init`, resetting masked entries
/// to re-noised known values after every step. Rotation vectors that are not
/// masked at the end are renormalized.
pub fn sample<R: Rng + ?Sized>(
    d: &dyn Denoiser,
    cfg: &SamplerConfig,
    x_init: Vec<Spatial>,
    mask: &InpaintMask,
    x_known: &[Spatial],
    rng: &mut R,
) -> Result<Vec<Spatial>> {
    let n = x_init.len();
    if mask.entries.len() != n || x_known.len() != n {
        return Err(Error::invalid(
            "mask, known values and initial state differ in length",
        ));
    }
    let t = discretize(cfg)?;
    if let Some(t_s) = mask.relax_step {
        if t_s > cfg.steps {
            return Err(Error::invalid(format!(
                "relaxation step {t_s} exceeds {} steps",
                cfg.steps
            )));
        }
    }
    let gammas = gamma_schedule(cfg, &t);
    let mut x = x_init;
    let eps0 = standard_normal_rows(n, rng);
    if mask.active(0) {
        inpaint(&mut x, mask, x_known, &eps0, t[0]);
    }
    check_finite(&x, 0)?;
    for i in 0..cfg.steps {
        let (ti, tn) = (t[i], t[i + 1]);
        let t_hat = ti + gammas[i] * ti;
        let mut x_hat = x;
        if gammas[i] > 0.0 {
            let scale = (t_hat * t_hat - ti * ti).sqrt() * cfg.s_noise;
            for (row, e) in x_hat.iter_mut().zip(standard_normal_rows(n, rng)) {
                for c in 0..8 {
                    row[c] += scale * e[c];
                }
            }
        }
        let den = d.denoise(&x_hat, t_hat)?;
        let slope: Vec<Spatial> = x_hat
            .iter()
            .zip(&den)
            .map(|(a, b)| std::array::from_fn(|c| (a[c] - b[c]) / t_hat))
            .collect();
        let mut next: Vec<Spatial> = x_hat
            .iter()
            .zip(&slope)
            .map(|(a, g)| std::array::from_fn(|c| a[c] + (tn - t_hat) * g[c]))
            .collect();
        if tn != 0.0 {
            check_finite(&next, i)?;
            let den2 = d.denoise(&next, tn)?;
            next = x_hat
                .iter()
                .zip(&slope)
                .zip(next.iter().zip(&den2))
                .map(|((a, g), (b, e))| {
                    std::array::from_fn(|c| a[c] + (tn - t_hat) * 0.5 * (g[c] + (b[c] - e[c]) / tn))
                })
                .collect();
        }
        let eps = standard_normal_rows(n, rng);
        if mask.active(i) {
            inpaint(&mut next, mask, x_known, &eps, tn);
        }
        check_finite(&next, i)?;
        x = next;
    }
    let final_mask = mask.active(cfg.steps - 1);
    for (row, m) in x.iter_mut().zip(&mask.entries) {
        if final_mask && (m[3] || m[4]) {
            continue;
        }
        let norm = row[3].hypot(row[4]);
        if norm > 0.0 {
            row[3] /= norm;
            row[4] /= norm;
        } else {
            row[3] = 1.0;
            row[4] = 0.0;
        }
    }
    Ok(x)
}

/// Floor-normalized view of a floor plan.
struct Frame {
    ctx: NormContext,
    floor: FloorPlan,
}

impl Frame {
    fn new(floor: &FloorPlan) -> Result<Self> {
        let ctx = NormContext::for_floor(floor)?;
        Ok(Self {
            floor: floor.map_similarity(|p| ctx.normalize_point(p)),
            ctx,
        })
    }

    fn normalize(&self, o: &SceneObject) -> Spatial {
        let g = self
            .ctx
            .normalize_point(Vec2::new(o.position[0], o.position[2]));
        let inv = 1.0 / self.ctx.scale;
        let [c, s] = encode_rotation(o.theta);
        [
            g.x,
            o.position[1] * inv,
            g.y,
            c,
            s,
            o.dimension[0] * inv,
            o.dimension[1] * inv,
            o.dimension[2] * inv,
        ]
    }

    fn denormalize(&self, x: &Spatial, category: usize) -> Result<SceneObject> {
        let mut o = denormalize_object(x, category, &self.ctx)?;
        for d in &mut o.dimension {
            *d = d.max(MIN_DIMENSION_M);
        }
        Ok(o)
    }

    fn cond(&self, categories: Option<Vec<usize>>) -> Conditioning {
        Conditioning {
            floor: self.floor.clone(),
            categories,
        }
    }
}

fn check_categories(model: &dyn LayoutModel, categories: &[usize]) -> Result<()> {
    if categories.is_empty() {
        return Err(Error::invalid("at least one object category is required"));
    }
    if categories.len() > model.max_objects() {
        return Err(Error::Capacity {
            requested: categories.len(),
            capacity: model.max_objects(),
        });
    }
    if let Some(&c) = categories.iter().find(|&&c| c >= model.vocab_size()) {
        return Err(Error::invalid(format!(
            "category {c} outside the vocabulary"
        )));
    }
    Ok(())
}

fn noise_init<R: Rng + ?Sized>(n: usize, sigma: f64, rng: &mut R) -> Vec<Spatial> {
    standard_normal_rows(n, rng)
        .into_iter()
        .map(|e| e.map(|v| sigma * v))
        .collect()
}

/// Fresh layout for the given categories.
pub fn generate<R: Rng + ?Sized>(
    model: &dyn LayoutModel,
    floor: &FloorPlan,
    categories: &[usize],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SceneLayout> {
    coarse_generate(model, floor, categories, &[], &[], 0, cfg, rng)
}

/// Adds objects to a scene while keeping the existing ones fixed.
pub fn complete<R: Rng + ?Sized>(
    model: &dyn LayoutModel,
    scene: &SceneLayout,
    added: &[usize],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SceneLayout> {
    if scene.objects.is_empty() {
        return Err(Error::invalid(
            "completion needs at least one existing object",
        ));
    }
    let mut categories = scene.categories();
    categories.extend_from_slice(added);
    check_categories(model, &categories)?;
    cfg.validate()?;
    let frame = Frame::new(&scene.floor)?;
    let n = categories.len();
    let k = scene.objects.len();
    let mut known = vec![[0.0; 8]; n];
    for (row, o) in known.iter_mut().zip(&scene.objects) {
        *row = frame.normalize(o);
    }
    let d = model.bind(&frame.cond(Some(categories.clone())))?;
    let x_init = noise_init(n, cfg.sigma_max, rng);
    let x = sample(
        d.as_ref(),
        cfg,
        x_init,
        &InpaintMask::leading_rows(n, k),
        &known,
        rng,
    )?;
    let mut objects = scene.objects.clone();
    for (row, &c) in x[k..].iter().zip(&categories[k..]) {
        objects.push(frame.denormalize(row, c)?);
    }
    Ok(SceneLayout {
        floor: scene.floor.clone(),
        objects,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rearranged {
    pub scene: SceneLayout,
    /// Mean ground-plane displacement per object, floor-normalized units.
    pub distance_moved: f64,
}

fn resample_pose<R: Rng + ?Sized>(
    model: &dyn LayoutModel,
    scene: &SceneLayout,
    sigma_max: f64,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Rearranged> {
    let categories = scene.categories();
    check_categories(model, &categories)?;
    cfg.validate()?;
    let frame = Frame::new(&scene.floor)?;
    let known: Vec<Spatial> = scene.objects.iter().map(|o| frame.normalize(o)).collect();
    let d = model.bind(&frame.cond(Some(categories.clone())))?;
    let local = cfg.starting_at(sigma_max.clamp(cfg.sigma_min, cfg.sigma_max));
    let dims: Vec<usize> = DIMENSION.collect();
    let mask = InpaintMask::channels(known.len(), &dims);
    let x = sample(d.as_ref(), &local, known.clone(), &mask, &known, rng)?;
    let mut objects = Vec::with_capacity(x.len());
    let mut moved = 0.0;
    for ((row, before), o) in x.iter().zip(&known).zip(&scene.objects) {
        let mut out = frame.denormalize(row, o.category)?;
        out.dimension = o.dimension;
        objects.push(out);
        moved += (row[0] - before[0]).hypot(row[2] - before[2]);
    }
    Ok(Rearranged {
        scene: SceneLayout {
            floor: scene.floor.clone(),
            objects,
        },
        distance_moved: moved / x.len() as f64,
    })
}

/// Recovers a clean arrangement of a perturbed scene with dimensions fixed,
/// starting from the noise level `magnitude`.
pub fn rearrange<R: Rng + ?Sized>(
    model: &dyn LayoutModel,
    scene: &SceneLayout,
    magnitude: f64,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Rearranged> {
    if !(magnitude >= 0.0) || !magnitude.is_finite() {
        return Err(Error::invalid(
            "perturbation magnitude must be finite and non-negative",
        ));
    }
    if magnitude == 0.0 {
        return Ok(Rearranged {
            scene: scene.clone(),
            distance_moved: 0.0,
        });
    }
    resample_pose(model, scene, magnitude, cfg, rng)
}

/// Attribute group of an object that a coarse specification may pin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelGroup {
    Position,
    Rotation,
    Dimension,
}

impl ChannelGroup {
    pub fn channels(self) -> std::ops::Range<usize> {
        match self {
            Self::Position => POSITION,
            Self::Rotation => ROTATION,
            Self::Dimension => DIMENSION,
        }
    }
}

/// Generation guided by rough per-object values: the chosen channel groups
/// are held for the first `t_s` steps and then released.
#[allow(clippy::too_many_arguments)]
pub fn coarse_generate<R: Rng + ?Sized>(
    model: &dyn LayoutModel,
    floor: &FloorPlan,
    categories: &[usize],
    rough: &[SceneObject],
    groups: &[ChannelGroup],
    t_s: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SceneLayout> {
    check_categories(model, categories)?;
    cfg.validate()?;
    if t_s > cfg.steps {
        return Err(Error::invalid(format!(
            "t_s = {t_s} exceeds {} steps",
            cfg.steps
        )));
    }
    let n = categories.len();
    let held = !groups.is_empty() && t_s > 0;
    if !groups.is_empty() && rough.len() != n {
        return Err(Error::invalid(
            "rough values must be given for every object",
        ));
    }
    let frame = Frame::new(floor)?;
    let known: Vec<Spatial> = if held {
        rough.iter().map(|o| frame.normalize(o)).collect()
    } else {
        vec![[0.0; 8]; n]
    };
    let mask = if held {
        let channels: Vec<usize> = groups.iter().flat_map(|g| g.channels()).collect();
        InpaintMask::channels(n, &channels).with_relax_step(t_s)
    } else {
        InpaintMask::none(n)
    };
    let d = model.bind(&frame.cond(Some(categories.to_vec())))?;
    let x_init = noise_init(n, cfg.sigma_max, rng);
    let x = sample(d.as_ref(), cfg, x_init, &mask, &known, rng)?;
    let exact = held && mask.active(cfg.steps - 1) && !mask.is_empty();
    let mut objects = Vec::with_capacity(n);
    for (i, (row, &c)) in x.iter().zip(categories).enumerate() {
        let mut o = frame.denormalize(row, c)?;
        if exact {
            for g in groups {
                match g {
                    ChannelGroup::Position => o.position = rough[i].position,
                    ChannelGroup::Rotation => o.theta = rough[i].theta,
                    ChannelGroup::Dimension => o.dimension = rough[i].dimension,
                }
            }
        }
        objects.push(o);
    }
    Ok(SceneLayout {
        floor: floor.clone(),
        objects,
    })
}

/// Swaps in retrieved dimensions (meters) and re-arranges positions and
/// rotations from a noise level matched to the largest normalized mismatch.
pub fn retrieval_refine<R: Rng + ?Sized>(
    model: &dyn LayoutModel,
    layout: &SceneLayout,
    retrieved: &[[f64; 3]],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Rearranged> {
    if retrieved.len() != layout.objects.len() {
        return Err(Error::invalid(
            "one retrieved dimension triple is needed per object",
        ));
    }
    if retrieved
        .iter()
        .flatten()
        .any(|d| !(d.is_finite() && *d > 0.0))
    {
        return Err(Error::invalid("retrieved dimensions must be positive"));
    }
    let scale = NormContext::for_floor(&layout.floor)?.scale;
    let mismatch = layout
        .objects
        .iter()
        .zip(retrieved)
        .flat_map(|(o, r)| (0..3).map(move |k| (o.dimension[k] - r[k]).abs() / scale))
        .fold(0.0, f64::max);
    let mut swapped = layout.clone();
    for (o, r) in swapped.objects.iter_mut().zip(retrieved) {
        o.dimension = *r;
    }
    resample_pose(model, &swapped, mismatch, cfg, rng)
}

/// Normalized spatial rows of a scene, for metrics that work in that frame.
pub fn normalized_rows(scene: &SceneLayout) -> Result<Vec<Spatial>> {
    Ok(normalize_layout(scene)?.0.spatial)
}
