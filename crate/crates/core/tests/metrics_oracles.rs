use nalgebra::{DMatrix, DVector};
use remix3d::metrics::{
    evaluate_report, frechet_distance, patch_variance, visual_quality, FeatureExtractor, GridSampler, MetricsConfig,
    PerturbedGrid,
};
use remix3d::remix_gan::{GeneratorConfig, GeneratorStack};
use remix3d::renderer::PoseModel;
use remix3d::scene_io::{make_synthetic_scene, SceneKind};
use remix3d::seed::rng_from_seed;
use remix3d::{FeatureGrid, Image};

fn setup() -> (FeatureGrid, PoseModel, MetricsConfig) {
    let grid = make_synthetic_scene(SceneKind::Mixed, 12, 16, 8).unwrap().ground_truth_grid;
    let pose = PoseModel::for_aabb(grid.aabb(), 35.2, 2, 32, 32).unwrap();
    let cfg = MetricsConfig {
        n_views: 4,
        n_seeds: 4,
        samples_per_ray: 48,
        ..Default::default()
    };
    (grid, pose, cfg)
}

#[test]
fn closed_form_distances() {
    let v = |x: f64| DVector::from_element(1, x);
    let c = DMatrix::from_element(1, 1, 2.5);
    assert!((frechet_distance(&v(0.0), &c, &v(1.0), &c).unwrap() - 1.0).abs() < 1e-6);
    let mu = DVector::zeros(2);
    let d = frechet_distance(&mu, &DMatrix::identity(2, 2), &mu, &(DMatrix::identity(2, 2) * 4.0)).unwrap();
    assert!((d - 2.0).abs() < 1e-6);
}

#[test]
fn visual_quality_increases_along_noise_ladder() {
    let (grid, pose, cfg) = setup();
    let ex = FeatureExtractor::random_v1();
    let scores: Vec<f64> = [0.0, 0.05, 0.1]
        .iter()
        .map(|&amplitude| {
            let s = PerturbedGrid { grid: grid.clone(), amplitude };
            visual_quality(&grid, &s, &pose, &ex, &cfg).unwrap()
        })
        .collect();
    assert!(scores[0].abs() < 1e-6, "{scores:?}");
    assert!(scores[0] < scores[1] && scores[1] < scores[2], "{scores:?}");
}

#[test]
fn diversity_two_sample_case() {
    let v = patch_variance(&[Image::filled(4, 4, [0.0; 3]), Image::filled(4, 4, [1.0; 3])]).unwrap();
    assert_eq!(v, 0.25);
}

#[test]
fn report_is_deterministic_and_complete() {
    let (grid, pose, cfg) = setup();
    let gcfg = GeneratorConfig {
        noise_extent: [2; 3],
        width: 4,
        conv_layers: 3,
        ..Default::default()
    };
    let mut rng = rng_from_seed(1);
    let mut stack = GeneratorStack::new(gcfg, *grid.aabb(), &mut rng).unwrap();
    stack.push_stage(&mut rng);
    stack.push_stage(&mut rng);
    let a = evaluate_report(&grid, &stack, &pose, &cfg).unwrap();
    let b = evaluate_report(&grid, &stack, &pose, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.visual_quality >= 0.0 && a.scene_diversity >= 0.0);
    assert_eq!(a.checkpoint_hash, stack.hash());
    assert_eq!(a.extractor, "random-v1");
    let json = serde_json::to_value(&a).unwrap();
    for key in ["visual_quality", "scene_diversity", "n_views", "n_seeds", "extractor", "master_seed", "checkpoint_hash", "config_hash"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    let other = MetricsConfig { master_seed: 5, ..cfg };
    assert_ne!(evaluate_report(&grid, &stack, &pose, &other).unwrap().config_hash, a.config_hash);
    assert!(stack.sample(3).is_ok());
}
