use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{decode_rotation, SceneLayout};
use crate::error::{Error, Result};
use crate::geometry::{NormContext, Vec2};

/// Rigid rotation of the whole scene about the floor centroid.
pub fn rotate_scene(scene: &SceneLayout, angle: f64) -> SceneLayout {
    let pivot = scene.floor.centroid();
    let (c, s) = (angle.cos(), angle.sin());
    let turn = |p: Vec2| (p - pivot).rotate(c, s) + pivot;
    SceneLayout {
        floor: scene.floor.map_similarity(turn),
        objects: scene
            .objects
            .iter()
            .map(|o| {
                let g = turn(Vec2::new(o.position[0], o.position[2]));
                let mut o = *o;
                o.position[0] = g.x;
                o.position[2] = g.y;
                o.theta += angle;
                o
            })
            .collect(),
    }
}

/// Adds i.i.d. Gaussian noise of std `noise_std` (floor-normalized units) to
/// the position and rotation channels. Dimensions are left untouched.
pub fn perturb_layout<R: Rng + ?Sized>(
    scene: &SceneLayout,
    noise_std: f64,
    rng: &mut R,
) -> Result<SceneLayout> {
    if !(noise_std >= 0.0) {
        return Err(Error::invalid("noise std must be non-negative"));
    }
    if noise_std == 0.0 {
        return Ok(scene.clone());
    }
    let ctx = NormContext::for_floor(&scene.floor)?;
    let metric_std = noise_std * ctx.scale;
    let mut out = scene.clone();
    for o in &mut out.objects {
        let mut eps = [0.0f64; 5];
        for e in &mut eps {
            *e = rng.sample(StandardNormal);
        }
        for (p, e) in o.position.iter_mut().zip(&eps[..3]) {
            *p += metric_std * e;
        }
        let r = [
            o.theta.cos() + noise_std * eps[3],
            o.theta.sin() + noise_std * eps[4],
        ];
        // a zero vector has no heading; keep the original one
        if let Ok(theta) = decode_rotation(r) {
            o.theta = theta;
        }
    }
    Ok(out)
}

/// Replaces exactly `round(p_rand * N)` entries by uniformly drawn different
/// categories out of `vocab_size`.
pub fn corrupt_categories<R: Rng + ?Sized>(
    categories: &[usize],
    p_rand: f64,
    vocab_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&p_rand) {
        return Err(Error::invalid("p_rand must lie in [0, 1]"));
    }
    let count = (p_rand * categories.len() as f64).round() as usize;
    corrupt_exactly(categories, count, vocab_size, rng)
}

pub(crate) fn corrupt_exactly<R: Rng + ?Sized>(
    categories: &[usize],
    count: usize,
    vocab_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let count = count.min(categories.len());
    if count > 0 && vocab_size < 2 {
        return Err(Error::Unsatisfiable(
            "cannot replace categories with a single-category vocabulary".into(),
        ));
    }
    let mut out = categories.to_vec();
    for i in sample(rng, categories.len(), count) {
        let r = rng.random_range(0..vocab_size - 1);
        out[i] = if r >= categories[i] { r + 1 } else { r };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{oob_metrics, FloorPlan};
    use crate::scene::SceneObject;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, TAU};

    fn square_scene() -> SceneLayout {
        let floor = FloorPlan::new(vec![
            Vec2::new(-2.0, -2.0),
            Vec2::new(2.0, -2.0),
            Vec2::new(2.0, 2.0),
            Vec2::new(-2.0, 2.0),
        ])
        .unwrap();
        SceneLayout {
            floor,
            objects: vec![
                SceneObject {
                    category: 0,
                    position: [1.0, 0.4, 0.0],
                    theta: 0.0,
                    dimension: [0.5, 0.8, 0.4],
                },
                SceneObject {
                    category: 1,
                    position: [-1.7, 0.4, 1.2],
                    theta: 0.3,
                    dimension: [1.5, 0.8, 0.9],
                },
            ],
        }
    }

    #[test]
    fn rotation_identities() {
        let s = square_scene();
        assert_eq!(rotate_scene(&s, 0.0), s);
        let full = rotate_scene(&s, TAU);
        for (a, b) in s.objects.iter().zip(&full.objects) {
            for k in 0..3 {
                assert_abs_diff_eq!(a.position[k], b.position[k], epsilon = 1e-9);
            }
            assert_abs_diff_eq!(a.theta.cos(), b.theta.cos(), epsilon = 1e-9);
            assert_abs_diff_eq!(a.theta.sin(), b.theta.sin(), epsilon = 1e-9);
        }
    }

    #[test]
    fn quarter_turn_moves_x_to_z() {
        let s = square_scene();
        let r = rotate_scene(&s, FRAC_PI_2);
        let o = &r.objects[0];
        assert_abs_diff_eq!(o.position[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o.position[2], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o.theta, FRAC_PI_2);
        assert_eq!(o.dimension, s.objects[0].dimension);
        let (a, b) = (
            oob_metrics(&[s], 0.2).unwrap(),
            oob_metrics(&[r], 0.2).unwrap(),
        );
        assert!((a.oba - b.oba).abs() <= 1e-9 * a.oba.max(1.0));
        assert_eq!(a.obn, b.obn);
    }

    #[test]
    fn rotation_preserves_distances() {
        let s = square_scene();
        let r = rotate_scene(&s, 1.234);
        let dist = |sc: &SceneLayout| {
            let (a, b) = (&sc.objects[0], &sc.objects[1]);
            (a.position[0] - b.position[0]).hypot(a.position[2] - b.position[2])
        };
        assert!((dist(&s) - dist(&r)).abs() <= 1e-9 * dist(&s));
    }

    #[test]
    fn zero_noise_is_identity() {
        let s = square_scene();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(perturb_layout(&s, 0.0, &mut rng).unwrap(), s);
    }

    #[test]
    fn perturbation_statistics() {
        let s = square_scene();
        let scale = 2.0;
        let std = 0.25;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut diffs = Vec::new();
        for _ in 0..5_000 {
            let p = perturb_layout(&s, std, &mut rng).unwrap();
            for (a, b) in s.objects.iter().zip(&p.objects) {
                assert_eq!(a.dimension, b.dimension);
                diffs.push((b.position[0] - a.position[0]) / scale);
            }
        }
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() - std).abs() < 0.02 * std, "std {}", var.sqrt());
    }

    #[test]
    fn perturbation_is_seeded() {
        let s = square_scene();
        let a = perturb_layout(&s, 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = perturb_layout(&s, 0.3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corruption_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = vec![0, 1, 2, 3];
        assert_eq!(corrupt_categories(&c, 0.0, 5, &mut rng).unwrap(), c);
        let all = corrupt_categories(&c, 1.0, 5, &mut rng).unwrap();
        assert!(all.iter().zip(&c).all(|(a, b)| a != b));
        let half = corrupt_categories(&c, 0.5, 5, &mut rng).unwrap();
        assert_eq!(half.iter().zip(&c).filter(|(a, b)| a != b).count(), 2);
        assert!(half.iter().all(|&x| x < 5));
        assert!(matches!(
            corrupt_categories(&[0, 0], 0.5, 1, &mut rng),
            Err(Error::Unsatisfiable(_))
        ));
        assert_eq!(
            corrupt_categories(&[0, 0], 0.0, 1, &mut rng).unwrap(),
            vec![0, 0]
        );
    }
}
