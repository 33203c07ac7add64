use super::{signed_area, FloorPlan, Footprint2D, Vec2};
use crate::error::{Error, Result};

fn point_in_triangle(p: Vec2, a: Vec2, b: Vec2, c: Vec2) -> bool {
    let d1 = (b - a).cross(p - a);
    let d2 = (c - b).cross(p - b);
    let d3 = (a - c).cross(p - c);
    d1 >= 0.0 && d2 >= 0.0 && d3 >= 0.0
}

/// Ear-clipping triangulation of a simple counter-clockwise polygon.
/// Returned triangles index into `vertices` and are counter-clockwise.
pub(super) fn ear_clip(vertices: &[Vec2]) -> Result<Vec<[usize; 3]>> {
    let n = vertices.len();
    let scale = vertices
        .iter()
        .map(|v| v.x.abs().max(v.y.abs()))
        .fold(0.0, f64::max);
    let eps = 1e-14 * scale * scale;

    // collinear vertices carry no area; dropping them keeps the ear test strict
    let mut idx: Vec<usize> = (0..n)
        .filter(|&i| {
            let p = vertices[(i + n - 1) % n];
            let c = vertices[i];
            let q = vertices[(i + 1) % n];
            (c - p).cross(q - c).abs() > eps
        })
        .collect();
    if idx.len() < 3 {
        return Err(Error::invalid("floor plan is degenerate (collinear)"));
    }

    let mut tris = Vec::with_capacity(idx.len() - 2);
    while idx.len() > 3 {
        let m = idx.len();
        let ear = (0..m).find(|&k| {
            let (ip, ic, inx) = (idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]);
            let (p, c, q) = (vertices[ip], vertices[ic], vertices[inx]);
            if (c - p).cross(q - c) <= eps {
                return false;
            }
            idx.iter().all(|&j| {
                if j == ip || j == ic || j == inx {
                    return true;
                }
                let v = vertices[j];
                v == p || v == c || v == q || !point_in_triangle(v, p, c, q)
            })
        });
        let Some(k) = ear else {
            return Err(Error::invalid("floor plan could not be triangulated"));
        };
        let m = idx.len();
        tris.push([idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]]);
        idx.remove(k);
    }
    tris.push([idx[0], idx[1], idx[2]]);
    Ok(tris)
}

/// Triangles of a floor plan's decomposition.
pub fn triangulate(floor: &FloorPlan) -> Vec<[Vec2; 3]> {
    floor.triangles().collect()
}

/// Sutherland-Hodgman clip of `subject` against a convex counter-clockwise
/// polygon `clip`.
pub fn convex_clip(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    let mut output: Vec<Vec2> = subject.to_vec();
    let m = clip.len();
    for e in 0..m {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[e], clip[(e + 1) % m]);
        let edge = b - a;
        let side = |p: Vec2| edge.cross(p - a);
        let input = std::mem::take(&mut output);
        let k = input.len();
        for i in 0..k {
            let cur = input[i];
            let prev = input[(i + k - 1) % k];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    let t = sp / (sp - sc);
                    output.push(prev + (cur - prev) * t);
                }
                output.push(cur);
            } else if sp >= 0.0 {
                let t = sp / (sp - sc);
                output.push(prev + (cur - prev) * t);
            }
        }
    }
    output
}

/// Area of `footprint ∩ floor`, summed over the floor's triangles.
pub fn intersection_area(fp: &Footprint2D, floor: &FloorPlan) -> f64 {
    floor
        .triangles()
        .map(|tri| signed_area(&convex_clip(fp.corners(), &tri)).max(0.0))
        .sum()
}

/// Footprint area lying outside the floor, in `[0, area(fp)]`.
pub fn out_of_bounds_area(fp: &Footprint2D, floor: &FloorPlan) -> f64 {
    let total = fp.area();
    (total - intersection_area(fp, floor)).clamp(0.0, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::footprint;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn l_shape() -> FloorPlan {
        FloorPlan::new(
            [
                (0.0, 0.0),
                (2.0, 0.0),
                (2.0, 1.0),
                (1.0, 1.0),
                (1.0, 2.0),
                (0.0, 2.0),
            ]
            .map(|(x, y)| Vec2::new(x, y))
            .to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn triangulation_covers_area() {
        let f = l_shape();
        let tris = triangulate(&f);
        assert_eq!(tris.len(), 4);
        let total: f64 = tris.iter().map(|t| signed_area(t)).sum();
        assert_abs_diff_eq!(total, 3.0, epsilon = 1e-12);
        assert!(tris.iter().all(|t| signed_area(t) > 0.0));
    }

    #[test]
    fn collinear_vertices_are_tolerated() {
        let f = FloorPlan::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(2.0, 2.0),
            Vec2::new(0.0, 2.0),
        ])
        .unwrap();
        let total: f64 = triangulate(&f).iter().map(|t| signed_area(t)).sum();
        assert_abs_diff_eq!(total, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn contained_box_has_no_oob() {
        let floor = FloorPlan::rectangle(10.0, 10.0).unwrap();
        let fp = footprint([5.0, 0.5, 5.0], [1.0, 0.0], [1.0, 1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(out_of_bounds_area(&fp, &floor), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn box_straddling_wall_is_half_outside() {
        let floor = FloorPlan::rectangle(10.0, 10.0).unwrap();
        let fp = footprint([0.0, 0.5, 5.0], [1.0, 0.0], [2.0, 1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(out_of_bounds_area(&fp, &floor), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn edge_touching_box_counts_zero() {
        let floor = FloorPlan::rectangle(4.0, 4.0).unwrap();
        let fp = footprint([1.0, 0.5, 1.0], [1.0, 0.0], [2.0, 1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(out_of_bounds_area(&fp, &floor), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rotated_box_over_corner_matches_monte_carlo() {
        let floor = l_shape();
        let th = std::f64::consts::FRAC_PI_4;
        // crosses the reflex corner at (1, 1)
        let fp = footprint([1.2, 0.0, 1.2], [th.cos(), th.sin()], [2.0, 1.0, 2.0]).unwrap();
        let exact = out_of_bounds_area(&fp, &floor);

        let n = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = fp.corners();
        let (u, v) = (c[1] - c[0], c[3] - c[0]);
        let mut outside = 0usize;
        for _ in 0..n {
            let p = c[0] + u * rng.random::<f64>() + v * rng.random::<f64>();
            if !floor.contains(p) {
                outside += 1;
            }
        }
        let frac = outside as f64 / n as f64;
        let area = fp.area();
        let estimate = frac * area;
        let sigma = area * (frac * (1.0 - frac) / n as f64).sqrt();
        assert!(exact > 0.0 && exact < area);
        assert!(
            (exact - estimate).abs() <= 3.0 * sigma,
            "exact {exact} vs MC {estimate} ± {sigma}"
        );
    }

    fn random_floor(seed: u64) -> FloorPlan {
        // star-shaped polygon around the origin is always simple
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..10);
        let mut angles: Vec<f64> = (0..n)
            .map(|i| (i as f64 + rng.random_range(0.1..0.9)) * std::f64::consts::TAU / n as f64)
            .collect();
        angles.sort_by(f64::total_cmp);
        let pts = angles
            .iter()
            .map(|&a| {
                let r = rng.random_range(1.0..4.0);
                Vec2::new(r * a.cos(), r * a.sin())
            })
            .collect();
        FloorPlan::new(pts).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn oob_is_bounded(seed in 0u64..10_000, x in -4.0..4.0f64, z in -4.0..4.0f64,
                          th in 0.0..6.3f64, w in 0.1..3.0f64, d in 0.1..3.0f64) {
            let floor = random_floor(seed);
            let fp = footprint([x, 0.0, z], [th.cos(), th.sin()], [w, 1.0, d]).unwrap();
            let oob = out_of_bounds_area(&fp, &floor);
            prop_assert!(oob >= 0.0 && oob <= fp.area());
        }

        #[test]
        fn oob_is_rigid_invariant(seed in 0u64..10_000, x in -3.0..3.0f64, z in -3.0..3.0f64,
                                  th in 0.0..6.3f64, w in 0.1..3.0f64, d in 0.1..3.0f64,
                                  phi in 0.0..6.3f64, tx in -10.0..10.0f64, ty in -10.0..10.0f64) {
            let floor = random_floor(seed);
            let fp = footprint([x, 0.0, z], [th.cos(), th.sin()], [w, 1.0, d]).unwrap();
            let base = out_of_bounds_area(&fp, &floor);

            let (c, s) = (phi.cos(), phi.sin());
            let t = Vec2::new(tx, ty);
            let moved_floor = floor.map_similarity(|p| p.rotate(c, s) + t);
            let centre = Vec2::new(x, z).rotate(c, s) + t;
            let th2 = th + phi;
            let fp2 = footprint([centre.x, 0.0, centre.y], [th2.cos(), th2.sin()], [w, 1.0, d]).unwrap();
            let moved = out_of_bounds_area(&fp2, &moved_floor);
            prop_assert!((base - moved).abs() <= 1e-9 * fp.area().max(1.0),
                "{base} vs {moved}");
        }
    }
}
