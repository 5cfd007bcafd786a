use dma_core::pipeline::{build_labels, build_vocabulary, LabelConfig};
use dma_core::synth::{self, SceneSpec};
use dma_core::trainer::{
    check_gradients, evaluate, model_inputs, train, GradCheckConfig, LossWeights, PointFeatureModel, Supervision,
    Temperatures, TrainConfig, TrainableState, INPUT_DIM,
};

struct Fixture {
    inputs: Vec<[f64; INPUT_DIM]>,
    supervision: Supervision<f64>,
    state: TrainableState<f64>,
    cloud: dma_core::PointCloud,
}

fn fixture(seed: u64) -> Fixture {
    let spec = SceneSpec {
        seed,
        points: 60,
        classes: 4,
        views: 3,
        width: 8,
        height: 8,
        dim: 8,
        ..SceneSpec::default()
    };
    let world = synth::generate::<f64>(&spec).unwrap();
    let vocab = build_vocabulary(&world.view_tags, &world.stoplist, 2).unwrap();
    let labels = build_labels(
        &world.scene,
        &world.bank,
        &world.clip_maps,
        &world.mask_maps,
        &vocab.scene_tags,
        Some(&world.captions),
        &LabelConfig::default(),
    )
    .unwrap();
    let supervision = labels.supervision();
    assert!(supervision.captions.is_some());
    let model = PointFeatureModel::init(8, 8, seed).unwrap();
    Fixture {
        inputs: model_inputs(world.scene.cloud()),
        state: TrainableState::new(model, &supervision),
        supervision,
        cloud: world.scene.cloud().clone(),
    }
}

const TEMPS: Temperatures<f64> = Temperatures { tau1: 0.1, tau2: 0.1 };

fn only(term: &str) -> LossWeights<f64> {
    let mut w = LossWeights::zero();
    match term {
        "tag" => w.tag = 1.0,
        "llm" => w.llm = 1.0,
        "pair" => w.pair = 1.0,
        "text2d" => w.text2d = 1.0,
        _ => w = LossWeights::default(),
    }
    w
}

#[test]
fn every_term_matches_finite_differences() {
    let f = fixture(3);
    for term in ["tag", "llm", "pair", "text2d", "total"] {
        let report = check_gradients(
            &f.state,
            &f.inputs,
            &f.supervision,
            &only(term),
            &TEMPS,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(report.checked, 200);
        assert!(report.passes(1e-4), "{term}: {report:?}");
    }
}

#[test]
fn zero_weights_give_zero_gradient() {
    let f = fixture(1);
    let (parts, grad) = evaluate(&f.state, &f.inputs, &f.supervision, &LossWeights::zero(), &TEMPS, true).unwrap();
    assert_eq!(parts.total, 0.0);
    assert!(grad.unwrap().flat().iter().all(|&g| g == 0.0));
}

#[test]
fn gradient_is_deterministic() {
    let f = fixture(2);
    let w = LossWeights::default();
    let a = evaluate(&f.state, &f.inputs, &f.supervision, &w, &TEMPS, true).unwrap();
    let b = evaluate(&f.state, &f.inputs, &f.supervision, &w, &TEMPS, true).unwrap();
    assert_eq!(a, b);
}

#[test]
fn training_is_seeded_and_zero_steps_is_identity() {
    let f = fixture(4);
    let cfg = TrainConfig {
        iterations: 0,
        seed: 9,
        ..TrainConfig::default()
    };
    let out = train(&f.cloud, &f.supervision, &cfg).unwrap();
    assert_eq!(out.state.model, cfg.init_model(8).unwrap());
    assert_eq!(out.history.len(), 1);

    let cfg = TrainConfig {
        iterations: 20,
        learning_rate: 1e-2,
        ..cfg
    };
    let a = train(&f.cloud, &f.supervision, &cfg).unwrap();
    let b = train(&f.cloud, &f.supervision, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.state, b.state);
    assert!(a.history[20].total < a.history[0].total);
    let other = train(&f.cloud, &f.supervision, &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(other.state.model, a.state.model);
}

#[test]
fn loss_terms_stay_in_bounds() {
    for seed in 0..5 {
        let f = fixture(seed);
        let (p, _) = evaluate(
            &f.state,
            &f.inputs,
            &f.supervision,
            &LossWeights::default(),
            &TEMPS,
            false,
        )
        .unwrap();
        for v in [p.tag, p.text2d] {
            assert!(v.is_finite() && v >= 0.0);
        }
        for v in [p.llm, p.pair] {
            assert!((0.0..=2.0).contains(&v));
        }
    }
}

#[test]
fn bad_supervision_is_rejected() {
    let f = fixture(5);
    let cloud = dma_core::PointCloud::new(f.cloud.points()[..10].to_vec()).unwrap();
    assert!(train(&cloud, &f.supervision, &TrainConfig::default()).is_err());
    let wrong_dim = TrainableState::new(PointFeatureModel::init(8, 4, 0).unwrap(), &f.supervision);
    assert!(evaluate(
        &wrong_dim,
        &f.inputs,
        &f.supervision,
        &LossWeights::default(),
        &TEMPS,
        false
    )
    .is_err());
}
