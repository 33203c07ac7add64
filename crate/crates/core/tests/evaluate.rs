use layoutdiff::diffusion::ChannelSigmaData;
use layoutdiff::evaluate::{completion_split, evaluate, EvalConfig, EvalMode};
use layoutdiff::geometry::{oob_metrics, scene_oob};
use layoutdiff::nn::{DenoiserConfig, DenoiserNet, TrainedDenoiser};
use layoutdiff::sampler::SamplerConfig;
use layoutdiff::scene::{generate_toy_dataset, RulesConfig, SceneLayout};

fn model() -> TrainedDenoiser {
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
        ..DenoiserConfig::desk(7)
    };
    TrainedDenoiser {
        net: DenoiserNet::new(cfg, 2).unwrap(),
        sigma_data: ChannelSigmaData::new([0.45, 0.08, 0.45], [0.2, 0.15, 0.08]).unwrap(),
    }
}

fn scenes() -> Vec<SceneLayout> {
    generate_toy_dataset(&RulesConfig::default(), 12, 31).unwrap()
}

fn config(mode: EvalMode) -> EvalConfig {
    EvalConfig {
        mode,
        seed: 4,
        sampler: SamplerConfig {
            steps: 6,
            ..Default::default()
        },
        ..EvalConfig::default()
    }
}

fn mean_scene_oba(scenes: &[SceneLayout], tau: f64) -> f64 {
    scenes
        .iter()
        .map(|s| scene_oob(s, tau).unwrap().scene_oba)
        .sum::<f64>()
        / scenes.len() as f64
}

#[test]
fn generation_metrics_match_dumped_scenes() {
    let (m, data) = (model(), scenes());
    let cfg = config(EvalMode::Generation);
    let eval = evaluate(&m, &data, &cfg).unwrap();
    assert_eq!(eval.outputs.len(), data.len());
    assert_eq!(eval.inputs, data);
    for (out, s) in eval.outputs.iter().zip(&data) {
        assert_eq!(out.categories(), s.categories());
        assert_eq!(out.floor, s.floor);
    }
    let r = &eval.report;
    assert_eq!(r.scenes, data.len());
    assert_eq!(r.metrics, oob_metrics(&eval.outputs, cfg.tau).unwrap());
    assert_eq!(r.reference, oob_metrics(&data, cfg.tau).unwrap());
    assert!((r.oba_per_scene - mean_scene_oba(&eval.outputs, cfg.tau)).abs() < 1e-12);
    assert!(r.reference.oba < 1e-9, "toy scenes lie inside their floors");
    let baseline = r.random_baseline.unwrap();
    assert!(baseline.bounding_box_oba_per_scene > baseline.interior_oba_per_scene);
    assert!(r.layout_divergence.unwrap() >= 0.0);

    let again = evaluate(&m, &data, &cfg).unwrap();
    assert_eq!(again.outputs, eval.outputs);
    assert_eq!(again.report, eval.report);
    // Each scene has its own stream, so a subset reproduces its prefix.
    let prefix = evaluate(&m, &data[..5], &cfg).unwrap();
    assert_eq!(prefix.outputs[..], eval.outputs[..5]);
}

#[test]
fn rearrangement_reports_messy_inputs() {
    let (m, data) = (model(), scenes());
    let cfg = config(EvalMode::Rearrangement);
    let eval = evaluate(&m, &data, &cfg).unwrap();
    let stats = eval.report.rearrangement.unwrap();
    assert_eq!(stats.messy, oob_metrics(&eval.inputs, cfg.tau).unwrap());
    assert!((stats.messy_oba_per_scene - mean_scene_oba(&eval.inputs, cfg.tau)).abs() < 1e-12);
    let improved = eval
        .inputs
        .iter()
        .zip(&eval.outputs)
        .filter(|(a, b)| {
            scene_oob(b, cfg.tau).unwrap().scene_oba < scene_oob(a, cfg.tau).unwrap().scene_oba
        })
        .count();
    assert_eq!(stats.improved_fraction, improved as f64 / data.len() as f64);
    assert!(stats.not_worse_fraction >= stats.improved_fraction);
    assert!(stats.distance_moved.is_finite() && stats.distance_moved > 0.0);
    for ((messy, out), s) in eval.inputs.iter().zip(&eval.outputs).zip(&data) {
        for ((a, b), c) in messy.objects.iter().zip(&out.objects).zip(&s.objects) {
            assert_eq!(a.dimension, c.dimension);
            assert_eq!(b.dimension, c.dimension);
            assert_eq!(a.category, c.category);
        }
    }
}

#[test]
fn completion_keeps_the_leading_objects() {
    let (m, data) = (model(), scenes());
    let cfg = config(EvalMode::Completion);
    let eval = evaluate(&m, &data, &cfg).unwrap();
    let mut added = 0;
    for ((partial, out), s) in eval.inputs.iter().zip(&eval.outputs).zip(&data) {
        let k = completion_split(s.objects.len());
        assert_eq!(partial.objects[..], s.objects[..k]);
        assert_eq!(out.objects[..k], s.objects[..k]);
        assert_eq!(out.categories(), s.categories());
        added += s.objects.len() - k;
    }
    let stats = eval.report.completion.unwrap();
    assert_eq!(stats.added_objects, added);
    assert_eq!(
        eval.report.metrics,
        oob_metrics(&eval.outputs, cfg.tau).unwrap()
    );
}

#[test]
fn empty_input_is_rejected() {
    assert!(evaluate(&model(), &[], &config(EvalMode::Generation)).is_err());
}
