//! Self Score Evaluation: ranks candidate category sets by how well the
//! unconditional model reconstructs their conditionally sampled layouts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    semantic_chamfer, standard_normal_rows, Conditioning, LayoutModel, NoiseDistribution,
    DEFAULT_KAPPA,
};
use crate::error::{Error, Result};
use crate::geometry::{normalize_layout, FloorPlan, NormContext};
use crate::sampler::{generate, SamplerConfig};
use crate::scene::augment::corrupt_exactly;
use crate::scene::{corrupt_categories, SceneLayout, Spatial};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SseConfig {
    pub trials: usize,
    pub kappa: f64,
    /// Should match the distribution the model was trained with.
    pub noise: NoiseDistribution,
}

impl Default for SseConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            kappa: DEFAULT_KAPPA,
            noise: NoiseDistribution::default(),
        }
    }
}

/// A category set with a layout sampled conditionally on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub categories: Vec<usize>,
    pub layout: SceneLayout,
}

impl Candidate {
    /// Samples the layout for `categories` with the conditional model.
    pub fn sample<R: Rng + ?Sized>(
        model: &dyn LayoutModel,
        floor: &FloorPlan,
        categories: Vec<usize>,
        cfg: &SamplerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let layout = generate(model, floor, &categories, cfg, rng)?;
        Ok(Self { categories, layout })
    }
}

/// Per-trial losses, one row per candidate. Each trial shares one noise level
/// and one noise matrix across all candidates.
pub fn sse_score_samples<R: Rng + ?Sized>(
    model: &dyn LayoutModel,
    floor: &FloorPlan,
    candidates: &[Candidate],
    cfg: &SseConfig,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates to score"));
    }
    if cfg.trials == 0 {
        return Err(Error::invalid("at least one trial is required"));
    }
    cfg.noise.validate()?;
    let ctx = NormContext::for_floor(floor)?;
    let mut rows = Vec::with_capacity(candidates.len());
    for c in candidates {
        if c.layout.objects.len() != c.categories.len() || c.categories.is_empty() {
            return Err(Error::invalid(
                "candidate layout and categories differ in length",
            ));
        }
        let scene = SceneLayout {
            floor: floor.clone(),
            objects: c.layout.objects.clone(),
        };
        rows.push(normalize_layout(&scene)?.0.spatial);
    }
    let max_n = rows.iter().map(Vec::len).max().unwrap_or(0);
    let cond = Conditioning {
        floor: floor.map_similarity(|p| ctx.normalize_point(p)),
        categories: None,
    };
    let d = model.bind(&cond)?;
    let mut scores = vec![Vec::with_capacity(cfg.trials); candidates.len()];
    for _ in 0..cfg.trials {
        let sigma = cfg.noise.sample(rng);
        let eps = standard_normal_rows(max_n, rng);
        for ((x, c), out) in rows.iter().zip(candidates).zip(&mut scores) {
            let noisy: Vec<Spatial> = x
                .iter()
                .zip(&eps)
                .map(|(r, e)| std::array::from_fn(|k| r[k] + sigma * e[k]))
                .collect();
            let pred = d.denoise(&noisy, sigma)?;
            out.push(semantic_chamfer(
                &pred,
                &c.categories,
                x,
                &c.categories,
                cfg.kappa,
            )?);
        }
    }
    Ok(scores)
}

/// Mean score per candidate; lower means a more plausible layout.
pub fn sse_scores<R: Rng + ?Sized>(
    model: &dyn LayoutModel,
    floor: &FloorPlan,
    candidates: &[Candidate],
    cfg: &SseConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(sse_score_samples(model, floor, candidates, cfg, rng)?
        .iter()
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect())
}

/// Index of the lowest score; the first one wins ties.
pub fn select(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot select from an empty score list"));
    }
    Ok(scores
        .iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |b, (i, &s)| if s < b.1 { (i, s) } else { b },
        )
        .0)
}

/// How many categories of a scene get replaced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corruption {
    None,
    Single,
    Fraction(f64),
    All,
}

impl Corruption {
    pub fn standard_levels() -> Vec<Self> {
        vec![
            Self::None,
            Self::Single,
            Self::Fraction(0.35),
            Self::Fraction(0.5),
            Self::Fraction(0.75),
            Self::All,
        ]
    }

    pub fn apply<R: Rng + ?Sized>(
        &self,
        categories: &[usize],
        vocab_size: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        match *self {
            Self::None => Ok(categories.to_vec()),
            Self::Single => corrupt_exactly(categories, 1, vocab_size, rng),
            Self::Fraction(p) => corrupt_categories(categories, p, vocab_size, rng),
            Self::All => corrupt_exactly(categories, categories.len(), vocab_size, rng),
        }
    }
}

impl std::fmt::Display for Corruption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::None => write!(f, "none"),
            Self::Single => write!(f, "single"),
            Self::Fraction(p) => write!(f, "{p}"),
            Self::All => write!(f, "all"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAccuracy {
    pub level: Corruption,
    /// Accuracy of each repetition.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationConfig {
    pub levels: Vec<Corruption>,
    pub repetitions: usize,
    pub sampler: SamplerConfig,
    pub sse: SseConfig,
    pub seed: u64,
}

/// For every scene and level, pits the true category set against a corrupted
/// one (in random order) and records how often the true set is selected.
pub fn discrimination_experiment(
    model: &dyn LayoutModel,
    scenes: &[SceneLayout],
    cfg: &DiscriminationConfig,
) -> Result<Vec<LevelAccuracy>> {
    if scenes.is_empty() || cfg.repetitions == 0 {
        return Err(Error::invalid("need at least one scene and one repetition"));
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rep_seeds: Vec<u64> = (0..cfg.repetitions).map(|_| seeds.random()).collect();
    let mut out = Vec::with_capacity(cfg.levels.len());
    for (li, level) in cfg.levels.iter().enumerate() {
        let mut accuracies = Vec::with_capacity(cfg.repetitions);
        for &rep_seed in &rep_seeds {
            let mut correct = 0usize;
            for (si, scene) in scenes.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
                rng.set_stream((li * scenes.len() + si) as u64);
                let truth = scene.categories();
                let corrupted = level.apply(&truth, model.vocab_size(), &mut rng)?;
                let truth_first = rng.random::<bool>();
                let sets = if truth_first {
                    [truth, corrupted]
                } else {
                    [corrupted, truth]
                };
                let candidates = sets
                    .into_iter()
                    .map(|c| Candidate::sample(model, &scene.floor, c, &cfg.sampler, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                let scores = sse_scores(model, &scene.floor, &candidates, &cfg.sse, &mut rng)?;
                if (select(&scores)? == 0) == truth_first {
                    correct += 1;
                }
            }
            accuracies.push(correct as f64 / scenes.len() as f64);
        }
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let std = if accuracies.len() > 1 {
            (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        out.push(LevelAccuracy {
            level: *level,
            accuracies,
            mean,
            std,
        });
    }
    Ok(out)
}
