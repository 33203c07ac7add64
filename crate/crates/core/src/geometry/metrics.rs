use serde::{Deserialize, Serialize};

use super::{out_of_bounds_area, NormContext, Vec2};
use crate::error::Result;
use crate::scene::{
    decode_rotation, encode_rotation, NormalizedLayout, SceneLayout, SceneObject, Spatial,
};

/// An object counts as out of bounds once more than this fraction of its
/// footprint lies outside the floor.
pub const DEFAULT_OOB_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OobReport {
    pub per_object_area: Vec<f64>,
    pub per_object_fraction: Vec<f64>,
    pub scene_oba: f64,
    pub flagged: Vec<bool>,
}

pub fn scene_oob(scene: &SceneLayout, tau: f64) -> Result<OobReport> {
    let mut per_object_area = Vec::with_capacity(scene.objects.len());
    let mut per_object_fraction = Vec::with_capacity(scene.objects.len());
    for obj in &scene.objects {
        let fp = obj.footprint()?;
        let a = out_of_bounds_area(&fp, &scene.floor);
        per_object_area.push(a);
        per_object_fraction.push((a / fp.area()).clamp(0.0, 1.0));
    }
    let flagged = per_object_fraction.iter().map(|&f| f > tau).collect();
    Ok(OobReport {
        scene_oba: per_object_area.iter().sum(),
        per_object_area,
        per_object_fraction,
        flagged,
    })
}

/// Dataset-level bounding metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OobMetrics {
    /// Cumulated out-of-bounds footprint area, m².
    pub oba: f64,
    /// Fraction of scenes with at least one flagged object.
    pub obr: f64,
    /// Number of flagged objects.
    pub obn: usize,
}

pub fn oob_metrics(scenes: &[SceneLayout], tau: f64) -> Result<OobMetrics> {
    if scenes.is_empty() {
        return Err(crate::error::Error::invalid("no scenes to evaluate"));
    }
    let mut oba = 0.0;
    let mut flagged_scenes = 0usize;
    let mut obn = 0usize;
    for s in scenes {
        let r = scene_oob(s, tau)?;
        oba += r.scene_oba;
        let n = r.flagged.iter().filter(|&&f| f).count();
        obn += n;
        if n > 0 {
            flagged_scenes += 1;
        }
    }
    Ok(OobMetrics {
        oba,
        obr: flagged_scenes as f64 / scenes.len() as f64,
        obn,
    })
}

/// Centers the floor's bounding box at the origin and divides every length by
/// half its largest side. Rotations are left untouched.
pub fn normalize_layout(scene: &SceneLayout) -> Result<(NormalizedLayout, NormContext)> {
    let ctx = NormContext::for_floor(&scene.floor)?;
    let floor = scene.floor.map_similarity(|p| ctx.normalize_point(p));
    let inv = 1.0 / ctx.scale;
    let spatial = scene
        .objects
        .iter()
        .map(|o| {
            let g = ctx.normalize_point(Vec2::new(o.position[0], o.position[2]));
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
        })
        .collect();
    Ok((
        NormalizedLayout {
            floor,
            spatial,
            categories: scene.categories(),
        },
        ctx,
    ))
}

pub(crate) fn denormalize_object(
    x: &Spatial,
    category: usize,
    ctx: &NormContext,
) -> Result<SceneObject> {
    let g = ctx.denormalize_point(Vec2::new(x[0], x[2]));
    Ok(SceneObject {
        category,
        position: [g.x, x[1] * ctx.scale, g.y],
        theta: decode_rotation([x[3], x[4]])?,
        dimension: [x[5] * ctx.scale, x[6] * ctx.scale, x[7] * ctx.scale],
    })
}

pub fn denormalize_layout(layout: &NormalizedLayout, ctx: &NormContext) -> Result<SceneLayout> {
    let floor = layout.floor.map_similarity(|p| ctx.denormalize_point(p));
    let objects = layout
        .spatial
        .iter()
        .zip(&layout.categories)
        .map(|(x, &c)| denormalize_object(x, c, ctx))
        .collect::<Result<_>>()?;
    Ok(SceneLayout { floor, objects })
}

const DISTANCE_BINS: usize = 20;
const DISTANCE_BIN_WIDTH: f64 = 0.5;
const ANGLE_BINS: usize = 16;

struct LayoutHistograms {
    categories: Vec<f64>,
    distances: Vec<f64>,
    angles: Vec<f64>,
}

fn histograms(scenes: &[SceneLayout], n_categories: usize) -> LayoutHistograms {
    let mut categories = vec![0.0; n_categories];
    let mut distances = vec![0.0; DISTANCE_BINS + 1];
    let mut angles = vec![0.0; ANGLE_BINS];
    for s in scenes {
        for (i, a) in s.objects.iter().enumerate() {
            categories[a.category] += 1.0;
            let th = a.theta.rem_euclid(std::f64::consts::TAU);
            let bin = ((th / std::f64::consts::TAU) * ANGLE_BINS as f64) as usize;
            angles[bin.min(ANGLE_BINS - 1)] += 1.0;
            for b in &s.objects[i + 1..] {
                let d = (a.position[0] - b.position[0]).hypot(a.position[2] - b.position[2]);
                let bin = ((d / DISTANCE_BIN_WIDTH) as usize).min(DISTANCE_BINS);
                distances[bin] += 1.0;
            }
        }
    }
    LayoutHistograms {
        categories,
        distances,
        angles,
    }
}

/// Jensen-Shannon divergence (nats) of two unnormalized histograms.
fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    match (sp > 0.0, sq > 0.0) {
        (false, false) => return 0.0,
        (true, false) | (false, true) => return std::f64::consts::LN_2,
        _ => {}
    }
    let term = |a: f64, m: f64| if a > 0.0 { a * (a / m).ln() } else { 0.0 };
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let (a, b) = (a / sp, b / sq);
            let m = 0.5 * (a + b);
            0.5 * (term(a, m) + term(b, m))
        })
        .sum()
}

/// Symmetric divergence between two layout collections: the sum of
/// Jensen-Shannon divergences over category frequencies, pairwise object
/// center distances (0.5 m bins) and heading angles (16 bins).
pub fn layout_statistics_divergence(a: &[SceneLayout], b: &[SceneLayout]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(crate::error::Error::invalid(
            "divergence needs two non-empty sets",
        ));
    }
    let n_categories = a
        .iter()
        .chain(b)
        .flat_map(|s| s.objects.iter().map(|o| o.category + 1))
        .max()
        .unwrap_or(1);
    let ha = histograms(a, n_categories);
    let hb = histograms(b, n_categories);
    Ok(jensen_shannon(&ha.categories, &hb.categories)
        + jensen_shannon(&ha.distances, &hb.distances)
        + jensen_shannon(&ha.angles, &hb.angles))
}
