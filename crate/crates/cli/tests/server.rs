use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use layoutdiff::catalog::AssetCatalog;
use layoutdiff::checkpoint::Checkpoint;
use layoutdiff::diffusion::ChannelSigmaData;
use layoutdiff::nn::{DenoiserConfig, DenoiserNet, TrainedDenoiser};
use layoutdiff::sampler::SamplerConfig;
use layoutdiff::scene::{generate_toy_dataset, scene_to_json, RulesConfig};
use layoutdiff::train::TrainingConfig;
use layoutdiff_cli::api::{
    ApiError, ErrorBody, HealthResponse, RetrieveResponse, SceneResponse, ServiceState,
    SseSelectResponse,
};
use layoutdiff_cli::server::router;
use serde_json::{json, Value};
use tower::ServiceExt;

fn state(with_catalog: bool) -> Arc<ServiceState> {
    let rules = RulesConfig::default();
    let vocab = rules.vocabulary().unwrap();
    let cfg = DenoiserConfig {
        token_dim: 32,
        attr_dim: 8,
        n_layers: 1,
        ff_dim: 32,
        floor_points: 16,
        floor_hidden: vec![8],
        floor_feature_dim: 16,
        category_hidden: 8,
        decoder_dims: vec![16, 8],
        max_objects: 6,
        ..DenoiserConfig::desk(vocab.len())
    };
    let model = TrainedDenoiser {
        net: DenoiserNet::new(cfg, 5).unwrap(),
        sigma_data: ChannelSigmaData::new([0.45, 0.08, 0.45], [0.2, 0.15, 0.08]).unwrap(),
    };
    let ck = Checkpoint::new(model, vocab, TrainingConfig::desk(), 0, 1.0).unwrap();
    let catalog = with_catalog.then(|| AssetCatalog::synthetic(&rules, 4, 1).unwrap());
    let sampler = SamplerConfig {
        steps: 6,
        ..Default::default()
    };
    Arc::new(ServiceState::new(ck, catalog, sampler, None).unwrap())
}

async fn call(
    state: &Arc<ServiceState>,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    (
        status,
        resp.into_body()
            .collect()
            .await
            .unwrap()
            .to_bytes()
            .to_vec(),
    )
}

async fn post(state: &Arc<ServiceState>, uri: &str, body: Value) -> (StatusCode, Vec<u8>) {
    call(state, "POST", uri, Some(body)).await
}

fn floor() -> Value {
    json!([[0.0, 0.0], [4.0, 0.0], [4.0, 3.0], [0.0, 3.0]])
}

fn toy_scene(n_min: usize) -> Value {
    let rules = RulesConfig::default();
    let vocab = rules.vocabulary().unwrap();
    let scene = generate_toy_dataset(&rules, 40, 3)
        .unwrap()
        .into_iter()
        .find(|s| s.objects.len() >= n_min && s.objects.len() <= 4)
        .unwrap();
    serde_json::to_value(scene_to_json(&scene, &vocab).unwrap()).unwrap()
}

fn error(body: &[u8]) -> ErrorBody {
    serde_json::from_slice(body).unwrap()
}

#[tokio::test]
async fn health_and_vocab() {
    let s = state(false);
    let (code, body) = call(&s, "GET", "/health", None).await;
    assert_eq!(code, StatusCode::OK);
    let h: HealthResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(h.version, env!("CARGO_PKG_VERSION"));
    assert_eq!(h.manifest_digest, s.checkpoint.digest().unwrap());
    let (_, body) = call(&s, "GET", "/vocab", None).await;
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["categories"], json!(s.checkpoint.vocabulary.names()));
}

#[tokio::test]
async fn generate_is_seeded_and_sized() {
    let s = state(false);
    let req = json!({"floor": floor(), "categories": ["sofa", "table", "chair"], "seed": 7});
    let (code, a) = post(&s, "/generate", req.clone()).await;
    assert_eq!(code, StatusCode::OK);
    let (_, b) = post(&s, "/generate", req).await;
    assert_eq!(a, b);
    let r: SceneResponse = serde_json::from_slice(&a).unwrap();
    assert_eq!(r.seed, 7);
    assert_eq!(r.scene.objects.len(), 3);
    let names: Vec<&str> = r
        .scene
        .objects
        .iter()
        .map(|o| o.category.as_str())
        .collect();
    assert_eq!(names, ["sofa", "table", "chair"]);

    let (code, unseeded) = post(
        &s,
        "/generate",
        json!({"floor": floor(), "categories": ["sofa"]}),
    )
    .await;
    assert_eq!(code, StatusCode::OK);
    let r: SceneResponse = serde_json::from_slice(&unseeded).unwrap();
    let (_, replay) = post(
        &s,
        "/generate",
        json!({"floor": floor(), "categories": ["sofa"], "seed": r.seed}),
    )
    .await;
    assert_eq!(unseeded, replay);
}

#[tokio::test]
async fn complete_echoes_locked_objects() {
    let s = state(false);
    let scene = toy_scene(2);
    let (code, body) = post(
        &s,
        "/complete",
        json!({"scene": scene, "added_categories": ["plant"], "seed": 1}),
    )
    .await;
    assert_eq!(code, StatusCode::OK);
    let r: SceneResponse = serde_json::from_slice(&body).unwrap();
    let given = scene["objects"].as_array().unwrap();
    assert_eq!(r.scene.objects.len(), given.len() + 1);
    for (out, inp) in r.scene.objects.iter().zip(given) {
        assert_eq!(serde_json::to_value(out).unwrap(), *inp);
    }
    assert_eq!(r.scene.objects.last().unwrap().category, "plant");
}

#[tokio::test]
async fn rearrange_holds_dimensions() {
    let s = state(false);
    let scene = toy_scene(2);
    let (code, body) = post(
        &s,
        "/rearrange",
        json!({"scene": scene, "magnitude": 0.25, "seed": 2}),
    )
    .await;
    assert_eq!(code, StatusCode::OK);
    let r: SceneResponse = serde_json::from_slice(&body).unwrap();
    assert!(r.distance_moved.unwrap().is_finite());
    for (out, inp) in r
        .scene
        .objects
        .iter()
        .zip(scene["objects"].as_array().unwrap())
    {
        assert_eq!(
            serde_json::to_value(out.dimension).unwrap(),
            inp["dimension"]
        );
    }
    let (_, body) = post(&s, "/rearrange", json!({"scene": scene, "magnitude": 0.0})).await;
    let r: SceneResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(
        serde_json::to_value(&r.scene.objects).unwrap(),
        scene["objects"]
    );
    assert_eq!(r.distance_moved, Some(0.0));
}

#[tokio::test]
async fn coarse_holds_channels_for_all_steps() {
    let s = state(false);
    let scene = toy_scene(2);
    let objects = scene["objects"].clone();
    let categories: Vec<Value> = objects
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["category"].clone())
        .collect();
    let req = json!({
        "floor": scene["floor"], "categories": categories, "rough": objects,
        "channels": ["position", "rotation"], "t_s": s.sampler.steps, "seed": 4
    });
    let (code, body) = post(&s, "/coarse", req.clone()).await;
    assert_eq!(code, StatusCode::OK);
    let r: SceneResponse = serde_json::from_slice(&body).unwrap();
    for (out, inp) in r.scene.objects.iter().zip(objects.as_array().unwrap()) {
        assert_eq!(serde_json::to_value(out.position).unwrap(), inp["position"]);
        assert_eq!(json!(out.theta), inp["theta"]);
    }
    let mut late = req;
    late["t_s"] = json!(s.sampler.steps + 1);
    let (code, body) = post(&s, "/coarse", late).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert!(error(&body).field.is_some());
}

#[tokio::test]
async fn sse_scores_ignore_submission_order() {
    let s = state(false);
    let sets = [
        json!(["sofa", "table"]),
        json!(["chair", "chair", "table"]),
        json!(["wardrobe"]),
        json!(["plant", "tv_stand"]),
        json!(["bookshelf", "sofa", "chair"]),
    ];
    let ask = |order: Vec<usize>| {
        let s = s.clone();
        let cands: Vec<Value> = order.iter().map(|&i| sets[i].clone()).collect();
        async move {
            let (code, body) = post(
                &s,
                "/sse-select",
                json!({"floor": floor(), "candidates": cands, "t_sse": 8, "seed": 3}),
            )
            .await;
            assert_eq!(code, StatusCode::OK);
            serde_json::from_slice::<SseSelectResponse>(&body).unwrap()
        }
    };
    let a = ask(vec![0, 1, 2, 3, 4]).await;
    let b = ask(vec![3, 1, 4, 0, 2]).await;
    for c in &a.candidates {
        let other = b
            .candidates
            .iter()
            .find(|o| o.categories == c.categories)
            .unwrap();
        assert_eq!(c.score, other.score);
    }
    assert_eq!(
        a.candidates[a.selected].categories,
        b.candidates[b.selected].categories
    );
    let min = a
        .candidates
        .iter()
        .map(|c| c.score)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(a.candidates[a.selected].score, min);
}

#[tokio::test]
async fn retrieve_uses_catalog_dimensions() {
    let s = state(true);
    let scene = toy_scene(2);
    let (code, body) = post(&s, "/retrieve", json!({"scene": scene, "seed": 5})).await;
    assert_eq!(code, StatusCode::OK);
    let r: RetrieveResponse = serde_json::from_slice(&body).unwrap();
    let catalog = s.catalog.as_ref().unwrap();
    for (id, o) in r.asset_ids.iter().zip(&r.scene.objects) {
        let asset = catalog.assets().iter().find(|a| &a.id == id).unwrap();
        assert_eq!(asset.category, o.category);
        assert_eq!(asset.dimension, o.dimension);
    }
    let (code, _) = post(&state(false), "/retrieve", json!({"scene": scene})).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn malformed_requests_name_the_field() {
    let s = state(false);
    let req = Request::builder()
        .method("POST")
        .uri("/generate")
        .body(Body::from("{not json"))
        .unwrap();
    let resp = router(s.clone()).oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);

    let (code, body) = post(&s, "/generate", json!({"floor": floor()})).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert!(error(&body).error.contains("categories"));

    let (code, body) = post(
        &s,
        "/generate",
        json!({"floor": floor(), "categories": ["sofa", 3]}),
    )
    .await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert_eq!(error(&body).field.as_deref(), Some("categories[1]"));

    let (code, body) = post(
        &s,
        "/generate",
        json!({"floor": floor(), "categories": ["unicorn"]}),
    )
    .await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert_eq!(error(&body).field.as_deref(), Some("categories"));

    let (code, body) = post(
        &s,
        "/generate",
        json!({"floor": [[0, 0], [1, 1]], "categories": ["sofa"]}),
    )
    .await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert_eq!(error(&body).field.as_deref(), Some("floor"));

    let (code, body) = post(
        &s,
        "/generate",
        json!({"floor": floor(), "categories": ["sofa"], "sampler": {"steps": 0}}),
    )
    .await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert_eq!(error(&body).field.as_deref(), Some("sampler"));

    let (code, _) = post(
        &s,
        "/rearrange",
        json!({"scene": toy_scene(1), "magnitude": -1.0}),
    )
    .await;
    assert_eq!(code, StatusCode::BAD_REQUEST);

    let (code, _) = post(
        &s,
        "/sse-select",
        json!({"floor": floor(), "candidates": []}),
    )
    .await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn capacity_is_unprocessable() {
    let s = state(false);
    let (code, body) = post(
        &s,
        "/generate",
        json!({"floor": floor(), "categories": vec!["chair"; 7]}),
    )
    .await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(error(&body).error.contains("capacity"));
    let (code, _) = post(
        &s,
        "/complete",
        json!({"scene": toy_scene(2), "added_categories": vec!["chair"; 6]}),
    )
    .await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
}

#[test]
fn divergence_maps_to_server_error_with_step() {
    let e = ApiError::from(layoutdiff::Error::Divergence {
        step: 12,
        detail: "non-finite".into(),
    });
    assert_eq!(e.status, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(e.body.step, Some(12));
}
