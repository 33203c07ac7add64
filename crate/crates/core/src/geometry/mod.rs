//! Ground-plane geometry: floor polygons, object footprints and the
//! out-of-bounds validity metrics.
//!
//! The vertical axis is index 1 of every 3D position/extent; the ground plane
//! is spanned by indices 0 and 2, which map to `Vec2::x` and `Vec2::y` here.

mod clip;
pub(crate) mod metrics;

pub use clip::{convex_clip, intersection_area, out_of_bounds_area, triangulate};
pub use metrics::{
    denormalize_layout, layout_statistics_divergence, normalize_layout, oob_metrics, scene_oob,
    OobMetrics, OobReport, DEFAULT_OOB_THRESHOLD,
};

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Counter-clockwise rotation given `(cos θ, sin θ)`.
    pub fn rotate(self, cos: f64, sin: f64) -> Vec2 {
        Vec2::new(self.x * cos - self.y * sin, self.x * sin + self.y * cos)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2::new(v[0], v[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Signed area of a closed polygon (positive when counter-clockwise).
pub fn signed_area(points: &[Vec2]) -> f64 {
    let n = points.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        acc += points[i].cross(points[(i + 1) % n]);
    }
    0.5 * acc
}

/// Proper or touching intersection test between closed segments `ab` and `cd`.
fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    fn orient(p: Vec2, q: Vec2, r: Vec2) -> f64 {
        (q - p).cross(r - p)
    }
    fn on_segment(p: Vec2, q: Vec2, r: Vec2) -> bool {
        r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    }
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// A simple, counter-clockwise floor polygon in meters.
///
/// The ear-clipping triangulation is computed once at construction and reused
/// by every out-of-bounds query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec2>", into = "Vec<Vec2>")]
pub struct FloorPlan {
    vertices: Vec<Vec2>,
    triangles: Vec<[usize; 3]>,
}

impl FloorPlan {
    /// Validates a counter-clockwise simple polygon.
    pub fn new(vertices: Vec<Vec2>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::invalid("floor plan needs at least 3 vertices"));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("floor plan has non-finite vertices"));
        }
        let n = vertices.len();
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(Error::invalid(format!(
                    "floor plan vertices {i} and {} coincide",
                    (i + 1) % n
                )));
            }
        }
        if signed_area(&vertices) <= 0.0 {
            return Err(Error::invalid(
                "floor plan must be counter-clockwise with positive area",
            ));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                // adjacent edges share an endpoint by construction
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                let (c, d) = (vertices[j], vertices[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return Err(Error::invalid(format!(
                        "floor plan is not simple: edges {i} and {j} intersect"
                    )));
                }
            }
        }
        let triangles = clip::ear_clip(&vertices)?;
        Ok(Self {
            vertices,
            triangles,
        })
    }

    /// Like [`FloorPlan::new`] but accepts either orientation, reversing a
    /// clockwise input while keeping vertex 0 in place.
    pub fn new_any_orientation(mut vertices: Vec<Vec2>) -> Result<Self> {
        if signed_area(&vertices) < 0.0 {
            vertices[1..].reverse();
        }
        Self::new(vertices)
    }

    pub fn rectangle(width: f64, depth: f64) -> Result<Self> {
        Self::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(width, 0.0),
            Vec2::new(width, depth),
            Vec2::new(0.0, depth),
        ])
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn triangles(&self) -> impl Iterator<Item = [Vec2; 3]> + '_ {
        self.triangles.iter().map(|t| {
            [
                self.vertices[t[0]],
                self.vertices[t[1]],
                self.vertices[t[2]],
            ]
        })
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| (b - a).norm()).sum()
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = Vec2::new(lo.x.min(v.x), lo.y.min(v.y));
            hi = Vec2::new(hi.x.max(v.x), hi.y.max(v.y));
        }
        (lo, hi)
    }

    /// Area centroid.
    pub fn centroid(&self) -> Vec2 {
        let n = self.vertices.len();
        let (mut cx, mut cy) = (0.0, 0.0);
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            let w = a.cross(b);
            cx += (a.x + b.x) * w;
            cy += (a.y + b.y) * w;
        }
        let k = 1.0 / (6.0 * self.area());
        Vec2::new(cx * k, cy * k)
    }

    /// Even-odd point-in-polygon test.
    pub fn contains(&self, p: Vec2) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Applies `f` to every vertex; `f` must be an orientation-preserving
    /// similarity so the triangulation stays valid.
    pub fn map_similarity(&self, f: impl Fn(Vec2) -> Vec2) -> FloorPlan {
        FloorPlan {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }
}

impl TryFrom<Vec<Vec2>> for FloorPlan {
    type Error = Error;
    fn try_from(v: Vec<Vec2>) -> Result<Self> {
        FloorPlan::new_any_orientation(v)
    }
}

impl From<FloorPlan> for Vec<Vec2> {
    fn from(f: FloorPlan) -> Self {
        f.vertices
    }
}

/// `count` points evenly spaced by arc length along the floor boundary,
/// starting at vertex 0 and following the polygon orientation.
pub fn sample_contour(floor: &FloorPlan, count: usize) -> Result<Vec<Vec2>> {
    if count < 3 {
        return Err(Error::invalid("contour sampling needs at least 3 points"));
    }
    let perimeter = floor.perimeter();
    if !(perimeter > 0.0) {
        return Err(Error::invalid("degenerate floor plan with zero perimeter"));
    }
    let step = perimeter / count as f64;
    let mut out = Vec::with_capacity(count);
    let mut edges = floor.edges().peekable();
    let (mut a, mut b) = edges.next().expect("at least 3 edges");
    let mut start = 0.0;
    let mut len = (b - a).norm();
    for k in 0..count {
        let s = k as f64 * step;
        while s >= start + len {
            match edges.peek() {
                Some(_) => {
                    start += len;
                    (a, b) = edges.next().expect("peeked");
                    len = (b - a).norm();
                }
                None => break,
            }
        }
        let t = ((s - start) / len).clamp(0.0, 1.0);
        out.push(a + (b - a) * t);
    }
    Ok(out)
}

/// Ground-plane rectangle of an oriented box, corners counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint2D {
    corners: [Vec2; 4],
}

impl Footprint2D {
    /// Checks that the corners form a proper rectangle.
    pub fn from_corners(corners: [Vec2; 4]) -> Result<Self> {
        let side = |i: usize| corners[(i + 1) % 4] - corners[i];
        let (s0, s1, s2, s3) = (side(0), side(1), side(2), side(3));
        let scale = s0.norm().max(s1.norm());
        if !(scale > 0.0) {
            return Err(Error::invalid("degenerate footprint"));
        }
        let tol = 1e-9 * scale;
        let opposite_ok =
            (s0.norm() - s2.norm()).abs() <= tol && (s1.norm() - s3.norm()).abs() <= tol;
        let orthogonal = s0.dot(s1).abs() <= tol * scale;
        if !opposite_ok || !orthogonal {
            return Err(Error::invalid("footprint corners do not form a rectangle"));
        }
        Ok(Self { corners })
    }

    pub fn corners(&self) -> &[Vec2; 4] {
        &self.corners
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.corners).abs()
    }

    pub fn center(&self) -> Vec2 {
        (self.corners[0] + self.corners[2]) * 0.5
    }
}

/// Footprint of a box with center `position`, ground rotation `(cos θ, sin θ)`
/// and extents `dimension` (index 1 vertical).
pub fn footprint(
    position: [f64; 3],
    rotation: [f64; 2],
    dimension: [f64; 3],
) -> Result<Footprint2D> {
    if !(dimension[0] > 0.0 && dimension[2] > 0.0 && dimension[1] > 0.0) {
        return Err(Error::invalid(format!(
            "box dimensions must be positive, got {dimension:?}"
        )));
    }
    let norm = rotation[0].hypot(rotation[1]);
    if !((norm - 1.0).abs() <= 1e-6) {
        return Err(Error::invalid(format!(
            "rotation must be a unit vector, norm is {norm}"
        )));
    }
    let (c, s) = (rotation[0] / norm, rotation[1] / norm);
    let center = Vec2::new(position[0], position[2]);
    let (hx, hz) = (0.5 * dimension[0], 0.5 * dimension[2]);
    let local = [
        Vec2::new(-hx, -hz),
        Vec2::new(hx, -hz),
        Vec2::new(hx, hz),
        Vec2::new(-hx, hz),
    ];
    Ok(Footprint2D {
        corners: local.map(|p| center + p.rotate(c, s)),
    })
}

/// Similarity that maps a floor's bounding box to `[-1, 1]` along its longest
/// side: `normalized = (p - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormContext {
    pub center: Vec2,
    pub scale: f64,
}

impl NormContext {
    pub fn for_floor(floor: &FloorPlan) -> Result<Self> {
        let (lo, hi) = floor.bounds();
        let extent = (hi.x - lo.x).max(hi.y - lo.y);
        if !(extent > 0.0) {
            return Err(Error::invalid("floor plan has zero extent"));
        }
        Ok(Self {
            center: (lo + hi) * 0.5,
            scale: 0.5 * extent,
        })
    }

    pub fn normalize_point(&self, p: Vec2) -> Vec2 {
        (p - self.center) * (1.0 / self.scale)
    }

    pub fn denormalize_point(&self, p: Vec2) -> Vec2 {
        p * self.scale + self.center
    }
}
