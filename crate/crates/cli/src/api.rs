//! Request and response types shared by the HTTP service and the CLI, and the
//! synchronous handlers behind them.

use axum::http::StatusCode;
use layoutdiff::catalog::{retrieve_layout, AssetCatalog};
use layoutdiff::checkpoint::Checkpoint;
use layoutdiff::geometry::{FloorPlan, Vec2};
use layoutdiff::sampler::{
    coarse_generate, complete, generate, rearrange, retrieval_refine, ChannelGroup, SamplerConfig,
};
use layoutdiff::scene::{
    scene_from_json, scene_to_json, ObjectRecord, SceneLayout, SceneObject, SceneRecord,
};
use layoutdiff::sse::{select, sse_scores, Candidate, SseConfig};
use layoutdiff::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A loaded model plus the settings every request runs with.
#[derive(Debug)]
pub struct ServiceState {
    pub checkpoint: Checkpoint,
    pub manifest_digest: String,
    pub catalog: Option<AssetCatalog>,
    pub sampler: SamplerConfig,
    pub sse: SseConfig,
}

impl ServiceState {
    /// `sse` defaults to the noise distribution the checkpoint was trained with.
    pub fn new(
        checkpoint: Checkpoint,
        catalog: Option<AssetCatalog>,
        sampler: SamplerConfig,
        sse: Option<SseConfig>,
    ) -> layoutdiff::Result<Self> {
        sampler.validate()?;
        let sse = sse.unwrap_or_else(|| SseConfig {
            noise: checkpoint.manifest.training.noise,
            ..SseConfig::default()
        });
        Ok(Self {
            manifest_digest: checkpoint.digest()?,
            checkpoint,
            catalog,
            sampler,
            sse,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn bad_request(field: Option<&str>, msg: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                error: msg.into(),
                field: field.map(str::to_owned),
                step: None,
            },
        }
    }

    fn at(mut self, field: &str) -> Self {
        if self.status == StatusCode::BAD_REQUEST && self.body.field.is_none() {
            self.body.field = Some(field.to_owned());
        }
        self
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.body.field {
            Some(field) => write!(f, "{} ({field}): {}", self.status, self.body.error),
            None => write!(f, "{}: {}", self.status, self.body.error),
        }
    }
}

impl std::error::Error for ApiError {}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, step) = match &e {
            Error::InvalidInput(_)
            | Error::Parse { .. }
            | Error::Json(_)
            | Error::Unsatisfiable(_) => (StatusCode::BAD_REQUEST, None),
            Error::Capacity { .. } | Error::Retrieval(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, None)
            }
            Error::Divergence { step, .. } => (StatusCode::INTERNAL_SERVER_ERROR, Some(*step)),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, None),
        };
        Self {
            status,
            body: ErrorBody {
                error: e.to_string(),
                field: None,
                step,
            },
        }
    }
}

pub type ApiResult<T> = Result<T, ApiError>;

trait Field<T> {
    fn field(self, name: &str) -> ApiResult<T>;
}

impl<T> Field<T> for layoutdiff::Result<T> {
    fn field(self, name: &str) -> ApiResult<T> {
        self.map_err(|e| ApiError::from(e).at(name))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub version: String,
    pub manifest_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabResponse {
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub floor: Vec<[f64; 2]>,
    pub categories: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub sampler: Option<SamplerConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompleteRequest {
    pub scene: SceneRecord,
    pub added_categories: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RearrangeRequest {
    pub scene: SceneRecord,
    pub magnitude: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoarseRequest {
    pub floor: Vec<[f64; 2]>,
    pub categories: Vec<String>,
    /// Rough values, one object per category, in the scene object schema.
    pub rough: Vec<ObjectRecord>,
    pub channels: Vec<ChannelGroup>,
    pub t_s: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SseSelectRequest {
    pub floor: Vec<[f64; 2]>,
    pub candidates: Vec<Vec<String>>,
    #[serde(default)]
    pub t_sse: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieveRequest {
    pub scene: SceneRecord,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneResponse {
    pub seed: u64,
    pub scene: SceneRecord,
    /// Mean ground-plane displacement, floor-normalized units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_moved: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub categories: Vec<String>,
    pub score: f64,
    pub scene: SceneRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SseSelectResponse {
    pub seed: u64,
    pub selected: usize,
    pub candidates: Vec<ScoredCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveResponse {
    pub seed: u64,
    pub asset_ids: Vec<String>,
    pub scene: SceneRecord,
    pub distance_moved: f64,
}

fn seeded(seed: Option<u64>) -> (u64, ChaCha8Rng) {
    let seed = seed.unwrap_or_else(rand::random);
    (seed, ChaCha8Rng::seed_from_u64(seed))
}

fn floor(points: &[[f64; 2]]) -> ApiResult<FloorPlan> {
    FloorPlan::new_any_orientation(points.iter().map(|&p| Vec2::from(p)).collect()).field("floor")
}

impl ServiceState {
    fn categories(&self, names: &[String], field: &str) -> ApiResult<Vec<usize>> {
        self.checkpoint.vocabulary.indices(names).field(field)
    }

    fn scene(&self, record: &SceneRecord) -> ApiResult<SceneLayout> {
        let scene = scene_from_json(record, &self.checkpoint.vocabulary).field("scene")?;
        let cfg = self.checkpoint.model.net.config();
        match scene.validate(cfg.vocab_size, cfg.max_objects) {
            Err(e @ Error::Capacity { .. }) => Err(e.into()),
            r => r.field("scene").map(|()| scene),
        }
    }

    fn record(&self, scene: &SceneLayout) -> ApiResult<SceneRecord> {
        Ok(scene_to_json(scene, &self.checkpoint.vocabulary)?)
    }

    pub fn health(&self) -> HealthResponse {
        HealthResponse {
            status: "ok".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            manifest_digest: self.manifest_digest.clone(),
        }
    }

    pub fn vocab(&self) -> VocabResponse {
        VocabResponse {
            categories: self.checkpoint.vocabulary.names().to_vec(),
        }
    }

    pub fn generate(&self, req: GenerateRequest) -> ApiResult<SceneResponse> {
        let floor = floor(&req.floor)?;
        let cats = self.categories(&req.categories, "categories")?;
        let sampler = req.sampler.unwrap_or_else(|| self.sampler.clone());
        sampler.validate().field("sampler")?;
        let (seed, mut rng) = seeded(req.seed);
        let scene = generate(&self.checkpoint.model, &floor, &cats, &sampler, &mut rng)
            .field("categories")?;
        Ok(SceneResponse {
            seed,
            scene: self.record(&scene)?,
            distance_moved: None,
        })
    }

    pub fn complete(&self, req: CompleteRequest) -> ApiResult<SceneResponse> {
        let scene = self.scene(&req.scene)?;
        let added = self.categories(&req.added_categories, "added_categories")?;
        let (seed, mut rng) = seeded(req.seed);
        let out = complete(
            &self.checkpoint.model,
            &scene,
            &added,
            &self.sampler,
            &mut rng,
        )
        .field("scene")?;
        Ok(SceneResponse {
            seed,
            scene: self.record(&out)?,
            distance_moved: None,
        })
    }

    pub fn rearrange(&self, req: RearrangeRequest) -> ApiResult<SceneResponse> {
        let scene = self.scene(&req.scene)?;
        let (seed, mut rng) = seeded(req.seed);
        let out = rearrange(
            &self.checkpoint.model,
            &scene,
            req.magnitude,
            &self.sampler,
            &mut rng,
        )
        .field("magnitude")?;
        Ok(SceneResponse {
            seed,
            scene: self.record(&out.scene)?,
            distance_moved: Some(out.distance_moved),
        })
    }

    pub fn coarse(&self, req: CoarseRequest) -> ApiResult<SceneResponse> {
        let floor = floor(&req.floor)?;
        let cats = self.categories(&req.categories, "categories")?;
        if req.rough.len() != cats.len() {
            return Err(ApiError::bad_request(
                Some("rough"),
                "one rough object is needed per category",
            ));
        }
        let rough = req
            .rough
            .iter()
            .zip(&cats)
            .enumerate()
            .map(|(i, (o, &c))| {
                if self.checkpoint.vocabulary.index(&o.category).ok() != Some(c) {
                    return Err(ApiError::bad_request(
                        Some(&format!("rough[{i}].category")),
                        "rough object category differs from categories",
                    ));
                }
                Ok(SceneObject {
                    category: c,
                    position: o.position,
                    theta: o.theta,
                    dimension: o.dimension,
                })
            })
            .collect::<ApiResult<Vec<_>>>()?;
        let (seed, mut rng) = seeded(req.seed);
        let out = coarse_generate(
            &self.checkpoint.model,
            &floor,
            &cats,
            &rough,
            &req.channels,
            req.t_s,
            &self.sampler,
            &mut rng,
        )
        .field("t_s")?;
        Ok(SceneResponse {
            seed,
            scene: self.record(&out)?,
            distance_moved: None,
        })
    }

    /// Each candidate is sampled from its own stream keyed by its category
    /// names, so scores do not depend on the order of submission.
    pub fn sse_select(&self, req: SseSelectRequest) -> ApiResult<SseSelectResponse> {
        let floor = floor(&req.floor)?;
        if req.candidates.is_empty() {
            return Err(ApiError::bad_request(
                Some("candidates"),
                "at least one candidate is required",
            ));
        }
        let mut cfg = self.sse.clone();
        if let Some(t) = req.t_sse {
            if t == 0 {
                return Err(ApiError::bad_request(
                    Some("t_sse"),
                    "t_sse must be at least 1",
                ));
            }
            cfg.trials = t;
        }
        let (seed, mut rng) = seeded(req.seed);
        let model = &self.checkpoint.model;
        let candidates = req
            .candidates
            .iter()
            .enumerate()
            .map(|(i, names)| {
                let field = format!("candidates[{i}]");
                let cats = self.categories(names, &field)?;
                let mut local = ChaCha8Rng::seed_from_u64(seed);
                local.set_stream(candidate_stream(names));
                Candidate::sample(model, &floor, cats, &self.sampler, &mut local).field(&field)
            })
            .collect::<ApiResult<Vec<_>>>()?;
        let scores = sse_scores(model, &floor, &candidates, &cfg, &mut rng)?;
        Ok(SseSelectResponse {
            seed,
            selected: select(&scores)?,
            candidates: req
                .candidates
                .into_iter()
                .zip(&candidates)
                .zip(&scores)
                .map(|((categories, c), &score)| {
                    Ok(ScoredCandidate {
                        categories,
                        score,
                        scene: self.record(&c.layout)?,
                    })
                })
                .collect::<ApiResult<_>>()?,
        })
    }

    pub fn retrieve(&self, req: RetrieveRequest) -> ApiResult<RetrieveResponse> {
        let catalog = self
            .catalog
            .as_ref()
            .ok_or_else(|| ApiError::from(Error::Retrieval("no asset catalog is loaded".into())))?;
        let scene = self.scene(&req.scene)?;
        let assets = retrieve_layout(catalog, &self.checkpoint.vocabulary, &scene)?;
        let dims: Vec<[f64; 3]> = assets.iter().map(|a| a.dimension).collect();
        let (seed, mut rng) = seeded(req.seed);
        let out = retrieval_refine(
            &self.checkpoint.model,
            &scene,
            &dims,
            &self.sampler,
            &mut rng,
        )?;
        Ok(RetrieveResponse {
            seed,
            asset_ids: assets.iter().map(|a| a.id.clone()).collect(),
            scene: self.record(&out.scene)?,
            distance_moved: out.distance_moved,
        })
    }
}

/// Stream id derived from a candidate's category names.
fn candidate_stream(names: &[String]) -> u64 {
    let mut h = Sha256::new();
    for n in names {
        h.update(n.as_bytes());
        h.update([0x1f]);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("digest has 32 bytes"))
}
