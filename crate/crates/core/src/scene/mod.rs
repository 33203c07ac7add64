//! Layout data model: typed oriented boxes on a floor plan, attribute
//! encodings, file formats, the procedural toy dataset and augmentation.

pub(crate) mod augment;
mod io;
mod toy;

pub use augment::{corrupt_categories, perturb_layout, rotate_scene};
pub use io::{
    read_dataset, read_vocabulary, scene_from_json, scene_to_json, write_dataset, write_vocabulary,
    ObjectRecord, SceneRecord,
};
pub use toy::{generate_toy_dataset, CategoryRule, Placement, RulesConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FloorPlan;

/// Spatial attributes of one object: position (3), rotation `(cos θ, sin θ)`
/// (2) and dimension (3), in that order.
pub type Spatial = [f64; 8];

pub const POSITION: std::ops::Range<usize> = 0..3;
pub const ROTATION: std::ops::Range<usize> = 3..5;
pub const DIMENSION: std::ops::Range<usize> = 5..8;

/// Default padding capacity of the denoiser.
pub const DEFAULT_MAX_OBJECTS: usize = 12;

/// Structured view of a [`Spatial`] row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectSpatial {
    pub position: [f64; 3],
    pub rotation: [f64; 2],
    pub dimension: [f64; 3],
}

impl ObjectSpatial {
    pub fn to_array(&self) -> Spatial {
        let [p0, p1, p2] = self.position;
        let [r0, r1] = self.rotation;
        let [d0, d1, d2] = self.dimension;
        [p0, p1, p2, r0, r1, d0, d1, d2]
    }

    pub fn from_array(x: &Spatial) -> Self {
        Self {
            position: [x[0], x[1], x[2]],
            rotation: [x[3], x[4]],
            dimension: [x[5], x[6], x[7]],
        }
    }
}

/// Category index in `[0, k)`; index `k` is reserved for the null condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SemanticCategory(pub usize);

impl SemanticCategory {
    pub fn null(vocab_size: usize) -> Self {
        SemanticCategory(vocab_size)
    }

    /// One-hot over `k + 1` slots (the last one is the null condition).
    pub fn one_hot(self, vocab_size: usize) -> Result<Vec<f64>> {
        if self.0 > vocab_size {
            return Err(Error::invalid(format!(
                "category {} outside vocabulary of size {vocab_size}",
                self.0
            )));
        }
        let mut v = vec![0.0; vocab_size + 1];
        v[self.0] = 1.0;
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct CategoryVocabulary {
    names: Vec<String>,
}

impl CategoryVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::invalid("vocabulary is empty"));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::invalid(format!("duplicate category name {n:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::invalid(format!("unknown category {name:?}")))
    }

    pub fn name(&self, index: usize) -> Result<&str> {
        self.names
            .get(index)
            .map(String::as_str)
            .ok_or_else(|| Error::invalid(format!("category index {index} out of range")))
    }

    pub fn indices<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names.iter().map(|n| self.index(n.as_ref())).collect()
    }
}

impl TryFrom<Vec<String>> for CategoryVocabulary {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CategoryVocabulary> for Vec<String> {
    fn from(v: CategoryVocabulary) -> Self {
        v.names
    }
}

/// One object in metric units, heading stored as an angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    pub category: usize,
    pub position: [f64; 3],
    pub theta: f64,
    pub dimension: [f64; 3],
}

impl SceneObject {
    pub fn rotation(&self) -> [f64; 2] {
        encode_rotation(self.theta)
    }

    pub fn footprint(&self) -> Result<crate::geometry::Footprint2D> {
        crate::geometry::footprint(self.position, self.rotation(), self.dimension)
    }
}

/// Floor plan plus an unordered set of typed boxes, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayout {
    pub floor: FloorPlan,
    pub objects: Vec<SceneObject>,
}

impl SceneLayout {
    pub fn categories(&self) -> Vec<usize> {
        self.objects.iter().map(|o| o.category).collect()
    }

    pub fn validate(&self, vocab_size: usize, max_objects: usize) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::invalid("scene has no objects"));
        }
        if self.objects.len() > max_objects {
            return Err(Error::Capacity {
                requested: self.objects.len(),
                capacity: max_objects,
            });
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.category >= vocab_size {
                return Err(Error::invalid(format!(
                    "object {i}: category {} outside vocabulary",
                    o.category
                )));
            }
            if !o.dimension.iter().all(|&d| d > 0.0 && d.is_finite()) {
                return Err(Error::invalid(format!(
                    "object {i}: non-positive dimension"
                )));
            }
            if !(o.position.iter().all(|p| p.is_finite()) && o.theta.is_finite()) {
                return Err(Error::invalid(format!("object {i}: non-finite attributes")));
            }
        }
        Ok(())
    }
}

/// A layout expressed in the floor-normalized frame the denoiser operates in.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLayout {
    pub floor: FloorPlan,
    pub spatial: Vec<Spatial>,
    pub categories: Vec<usize>,
}

pub fn encode_rotation(theta: f64) -> [f64; 2] {
    [theta.cos(), theta.sin()]
}

/// Angle of a (not necessarily unit) rotation vector.
pub fn decode_rotation(r: [f64; 2]) -> Result<f64> {
    let n = r[0].hypot(r[1]);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::invalid(
            "cannot decode a zero or non-finite rotation vector",
        ));
    }
    Ok((r[1] / n).atan2(r[0] / n))
}

pub const PE_FREQUENCIES: usize = 32;
pub const PE_DIM: usize = 2 * PE_FREQUENCIES;

/// Sinusoidal encoding `[sin(128^{j/31} s) for j in 0..32, cos(...) for j in 0..32]`.
pub fn positional_encoding(s: f64) -> Result<[f64; PE_DIM]> {
    if !s.is_finite() {
        return Err(Error::invalid("positional encoding of a non-finite value"));
    }
    let mut out = [0.0; PE_DIM];
    write_positional_encoding(s, &mut out);
    Ok(out)
}

static PE_WEIGHTS: std::sync::LazyLock<[f64; PE_FREQUENCIES]> = std::sync::LazyLock::new(|| {
    let last = (PE_FREQUENCIES - 1) as f64;
    std::array::from_fn(|j| 128f64.powf(j as f64 / last))
});

pub(crate) fn write_positional_encoding(s: f64, out: &mut [f64]) {
    for (j, &w) in PE_WEIGHTS.iter().enumerate() {
        let (sin, cos) = (w * s).sin_cos();
        out[j] = sin;
        out[PE_FREQUENCIES + j] = cos;
    }
}
