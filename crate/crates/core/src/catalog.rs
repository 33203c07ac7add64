//! Asset catalog and dimension-matched retrieval.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{CategoryVocabulary, RulesConfig, SceneLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Asset {
    pub id: String,
    pub category: String,
    /// Extents in meters.
    pub dimension: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Asset>", into = "Vec<Asset>")]
pub struct AssetCatalog {
    assets: Vec<Asset>,
}

impl AssetCatalog {
    pub fn new(assets: Vec<Asset>) -> Result<Self> {
        let mut ids = HashSet::new();
        for a in &assets {
            if !ids.insert(a.id.as_str()) {
                return Err(Error::invalid(format!("duplicate asset id {:?}", a.id)));
            }
            if !a.dimension.iter().all(|d| d.is_finite() && *d > 0.0) {
                return Err(Error::invalid(format!(
                    "asset {:?} has a non-positive dimension",
                    a.id
                )));
            }
        }
        Ok(Self { assets })
    }

    pub fn assets(&self) -> &[Asset] {
        &self.assets
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    /// A catalog with `per_category` assets per rule, dimensions drawn from
    /// the rule's ranges.
    pub fn synthetic(rules: &RulesConfig, per_category: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut assets = Vec::with_capacity(rules.categories.len() * per_category);
        for rule in &rules.categories {
            for i in 0..per_category {
                let dimension = std::array::from_fn(|k| {
                    let (lo, hi) = (rule.dimension_min[k], rule.dimension_max[k]);
                    if lo < hi {
                        rng.random_range(lo..hi)
                    } else {
                        lo
                    }
                });
                assets.push(Asset {
                    id: format!("{}-{i:03}", rule.name),
                    category: rule.name.clone(),
                    dimension,
                });
            }
        }
        Self::new(assets)
    }
}

impl TryFrom<Vec<Asset>> for AssetCatalog {
    type Error = Error;
    fn try_from(v: Vec<Asset>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AssetCatalog> for Vec<Asset> {
    fn from(c: AssetCatalog) -> Self {
        c.assets
    }
}

/// Same-category asset whose dimensions are closest in Euclidean distance;
/// ties go to the lexicographically smallest id.
pub fn retrieve_asset<'a>(
    catalog: &'a AssetCatalog,
    category: &str,
    dimension: [f64; 3],
) -> Result<&'a Asset> {
    let dist = |a: &Asset| {
        a.dimension
            .iter()
            .zip(&dimension)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
    };
    catalog
        .assets
        .iter()
        .filter(|a| a.category == category)
        .min_by(|a, b| dist(a).total_cmp(&dist(b)).then_with(|| a.id.cmp(&b.id)))
        .ok_or_else(|| Error::Retrieval(format!("no asset of category {category:?}")))
}

/// Retrieves one asset per object of `scene`.
pub fn retrieve_layout<'a>(
    catalog: &'a AssetCatalog,
    vocab: &CategoryVocabulary,
    scene: &SceneLayout,
) -> Result<Vec<&'a Asset>> {
    scene
        .objects
        .iter()
        .map(|o| retrieve_asset(catalog, vocab.name(o.category)?, o.dimension))
        .collect()
}
