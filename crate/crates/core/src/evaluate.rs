//! Dataset-level evaluation of a trained model in generation, re-arrangement
//! and completion modes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::LayoutModel;
use crate::error::{Error, Result};
use crate::geometry::{
    layout_statistics_divergence, oob_metrics, scene_oob, OobMetrics, Vec2, DEFAULT_OOB_THRESHOLD,
};
use crate::sampler::{complete, generate, rearrange, SamplerConfig};
use crate::scene::{perturb_layout, SceneLayout};

/// Perturbation level of the re-arrangement benchmark, floor-normalized units.
pub const DEFAULT_PERTURBATION: f64 = 0.25;
/// Random placements drawn per scene for the baselines.
pub const BASELINE_DRAWS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Generation,
    Rearrangement,
    Completion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub tau: f64,
    pub perturbation: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: EvalMode::Generation,
            seed: 0,
            sampler: SamplerConfig::default(),
            tau: DEFAULT_OOB_THRESHOLD,
            perturbation: DEFAULT_PERTURBATION,
        }
    }
}

/// Where uniformly random centers are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomRegion {
    /// The floor's axis-aligned bounding box.
    BoundingBox,
    /// The floor polygon itself.
    Interior,
}

/// Keeps categories and dimensions, draws each center uniformly from
/// `region` and each heading uniformly.
pub fn random_placement<R: Rng + ?Sized>(
    scene: &SceneLayout,
    region: RandomRegion,
    rng: &mut R,
) -> SceneLayout {
    let (lo, hi) = scene.floor.bounds();
    let mut out = scene.clone();
    for o in &mut out.objects {
        let p = loop {
            let p = Vec2::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y));
            if region == RandomRegion::BoundingBox || scene.floor.contains(p) {
                break p;
            }
        };
        o.position[0] = p.x;
        o.position[2] = p.y;
        o.theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    /// Mean per-scene OBA with centers uniform over the floor bounding box.
    pub bounding_box_oba_per_scene: f64,
    /// Mean per-scene OBA with centers uniform inside the floor polygon.
    pub interior_oba_per_scene: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RearrangementStats {
    pub messy: OobMetrics,
    pub messy_oba_per_scene: f64,
    /// Mean over scenes of the per-scene distance moved, floor-normalized units.
    pub distance_moved: f64,
    /// Share of scenes whose OBA dropped strictly.
    pub improved_fraction: f64,
    /// Share of scenes whose OBA did not grow.
    pub not_worse_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionStats {
    /// Bounding metrics restricted to the added objects.
    pub added: OobMetrics,
    pub added_oba_per_scene: f64,
    pub added_objects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mode: EvalMode,
    pub seed: u64,
    pub tau: f64,
    pub scenes: usize,
    /// Metrics of the produced scenes.
    pub metrics: OobMetrics,
    pub oba_per_scene: f64,
    /// Metrics of the reference scenes.
    pub reference: OobMetrics,
    pub layout_divergence: Option<f64>,
    pub random_baseline: Option<RandomBaseline>,
    pub rearrangement: Option<RearrangementStats>,
    pub completion: Option<CompletionStats>,
}

/// A report together with the scenes it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvaluationReport,
    /// Model inputs: reference scenes, perturbed scenes or partial scenes.
    pub inputs: Vec<SceneLayout>,
    pub outputs: Vec<SceneLayout>,
}

fn scene_rng(seed: u64, scene: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3 * scene as u64 + purpose);
    rng
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len() as f64;
    v.sum::<f64>() / n
}

fn random_baseline(scenes: &[SceneLayout], seed: u64, tau: f64) -> Result<RandomBaseline> {
    let mut sums = [0.0; 2];
    for (i, s) in scenes.iter().enumerate() {
        let mut rng = scene_rng(seed, i, 2);
        for (sum, region) in sums
            .iter_mut()
            .zip([RandomRegion::BoundingBox, RandomRegion::Interior])
        {
            for _ in 0..BASELINE_DRAWS {
                *sum += scene_oob(&random_placement(s, region, &mut rng), tau)?.scene_oba;
            }
        }
    }
    let n = (scenes.len() * BASELINE_DRAWS) as f64;
    Ok(RandomBaseline {
        bounding_box_oba_per_scene: sums[0] / n,
        interior_oba_per_scene: sums[1] / n,
    })
}

/// Number of objects kept when a scene is cut for completion.
pub fn completion_split(n: usize) -> usize {
    n.div_ceil(2)
}

/// Runs `cfg.mode` over `scenes`. Each scene uses its own random stream, so
/// the result depends only on the model, the scenes and the seed.
pub fn evaluate(
    model: &dyn LayoutModel,
    scenes: &[SceneLayout],
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    if scenes.is_empty() {
        return Err(Error::invalid("evaluation needs at least one scene"));
    }
    cfg.sampler.validate()?;
    let reference = oob_metrics(scenes, cfg.tau)?;
    let mut report = EvaluationReport {
        mode: cfg.mode,
        seed: cfg.seed,
        tau: cfg.tau,
        scenes: scenes.len(),
        metrics: reference,
        oba_per_scene: 0.0,
        reference,
        layout_divergence: None,
        random_baseline: None,
        rearrangement: None,
        completion: None,
    };
    let mut inputs = Vec::with_capacity(scenes.len());
    let mut outputs = Vec::with_capacity(scenes.len());
    match cfg.mode {
        EvalMode::Generation => {
            for (i, s) in scenes.iter().enumerate() {
                let mut rng = scene_rng(cfg.seed, i, 0);
                outputs.push(generate(
                    model,
                    &s.floor,
                    &s.categories(),
                    &cfg.sampler,
                    &mut rng,
                )?);
            }
            inputs = scenes.to_vec();
            report.layout_divergence = Some(layout_statistics_divergence(&outputs, scenes)?);
            report.random_baseline = Some(random_baseline(scenes, cfg.seed, cfg.tau)?);
        }
        EvalMode::Rearrangement => {
            let (mut moved, mut improved, mut not_worse) = (0.0, 0usize, 0usize);
            for (i, s) in scenes.iter().enumerate() {
                let messy = perturb_layout(s, cfg.perturbation, &mut scene_rng(cfg.seed, i, 1))?;
                let out = rearrange(
                    model,
                    &messy,
                    cfg.perturbation,
                    &cfg.sampler,
                    &mut scene_rng(cfg.seed, i, 0),
                )?;
                let before = scene_oob(&messy, cfg.tau)?.scene_oba;
                let after = scene_oob(&out.scene, cfg.tau)?.scene_oba;
                improved += usize::from(after < before);
                not_worse += usize::from(after <= before);
                moved += out.distance_moved;
                inputs.push(messy);
                outputs.push(out.scene);
            }
            let n = scenes.len() as f64;
            let messy = oob_metrics(&inputs, cfg.tau)?;
            report.rearrangement = Some(RearrangementStats {
                messy,
                messy_oba_per_scene: messy.oba / n,
                distance_moved: moved / n,
                improved_fraction: improved as f64 / n,
                not_worse_fraction: not_worse as f64 / n,
            });
        }
        EvalMode::Completion => {
            let mut added_scenes = Vec::with_capacity(scenes.len());
            for (i, s) in scenes.iter().enumerate() {
                let k = completion_split(s.objects.len());
                if k == s.objects.len() {
                    return Err(Error::invalid(format!(
                        "scene {i} has too few objects to complete"
                    )));
                }
                let partial = SceneLayout {
                    floor: s.floor.clone(),
                    objects: s.objects[..k].to_vec(),
                };
                let added: Vec<usize> = s.objects[k..].iter().map(|o| o.category).collect();
                let out = complete(
                    model,
                    &partial,
                    &added,
                    &cfg.sampler,
                    &mut scene_rng(cfg.seed, i, 0),
                )?;
                added_scenes.push(SceneLayout {
                    floor: s.floor.clone(),
                    objects: out.objects[k..].to_vec(),
                });
                inputs.push(partial);
                outputs.push(out);
            }
            let added = oob_metrics(&added_scenes, cfg.tau)?;
            report.completion = Some(CompletionStats {
                added,
                added_oba_per_scene: added.oba / scenes.len() as f64,
                added_objects: added_scenes.iter().map(|s| s.objects.len()).sum(),
            });
        }
    }
    report.metrics = oob_metrics(&outputs, cfg.tau)?;
    report.oba_per_scene = mean(
        outputs
            .iter()
            .map(|s| scene_oob(s, cfg.tau).map_or(f64::NAN, |r| r.scene_oba)),
    );
    Ok(Evaluation {
        report,
        inputs,
        outputs,
    })
}
