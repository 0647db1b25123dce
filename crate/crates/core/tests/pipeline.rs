mod common;

use art_core::aip::{prune, prune_oracle};
use art_core::data::{generate_synthetic, load_ethucy_text, normalize, SyntheticKind};
use art_core::harness::checkpoint::Checkpoint;
use art_core::harness::config::RunConfig;
use art_core::harness::sweep::evaluate_at;
use art_core::harness::train::evaluate;
use art_core::head::{min_ade_fde, PredictionSet};
use art_core::model::ForwardOptions;
use art_core::tensor::Tensor;
use art_core::ArtError;
use common::*;
use proptest::prelude::*;
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn predictions_follow_agent_relabelling(m in 2usize..7, seed in 0u64..10_000) {
        let model = small_model(true, seed % 7);
        let scene = random_scene(m, 5, 6, seed);
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(permutation_gap(&model, &scene, &perm) <= 1e-9);
    }

    #[test]
    fn predictions_shift_with_the_scene(m in 1usize..6, seed in 0u64..10_000, dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
        let model = small_model(true, seed % 5);
        let scene = random_scene(m, 5, 6, seed);
        let a = model.predict(&scene, ForwardOptions::default(), false).unwrap();
        let b = model.predict(&scene.translated([dx, dy]), ForwardOptions::default(), false).unwrap();
        for (i, (x, y)) in a.predictions.candidates.data().iter().zip(b.predictions.candidates.data()).enumerate() {
            let shift = if i % 2 == 0 { dx } else { dy };
            prop_assert!((x + shift - y).abs() <= 1e-9);
        }
        prop_assert_eq!(a.pruned.kept, b.pruned.kept);
    }

    #[test]
    fn prune_matches_oracle_and_grows_with_p(m in 2usize..10, seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Tensor::new(&[m, m], (0..m * m).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let mut prev = vec![0; m];
        for p in [0.1, 0.3, 0.5, 0.65, 0.75, 0.85, 0.95, 1.0] {
            let g = prune(&w, p).unwrap();
            prop_assert_eq!(&g, &prune_oracle(&w, p).unwrap());
            for i in 0..m {
                prop_assert!(g.k_star[i] >= prev[i]);
                let row: f64 = (0..m).map(|j| g.weights.at(&[i, j])).sum();
                prop_assert!((row - 1.0).abs() < 1e-12);
            }
            prev = g.k_star.clone();
        }
    }

    #[test]
    fn metrics_match_brute_force(m in 1usize..6, k in 1usize..6, t_f in 1usize..9, seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cand = uniform(&[m, k, t_f, 2], 5.0, &mut rng);
        let future = uniform(&[m, t_f, 2], 5.0, &mut rng);
        let (ade, fde) = min_ade_fde(&PredictionSet::new(cand.clone()).unwrap(), &future).unwrap();
        let (ba, bf) = brute_force_metrics(&cand, &future);
        prop_assert!((ade - ba).abs() <= 1e-9 && (fde - bf).abs() <= 1e-9);
    }
}

#[test]
fn normalization_centers_the_last_frame() {
    let scene = random_scene(4, 5, 6, 3);
    let (norm, state) = normalize(&scene);
    let last = norm.last_observed();
    let c = last.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
    assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12);
    let back = state.denormalize(&norm);
    assert!(back.observed().max_abs_diff(scene.observed()) < 1e-12);
}

#[test]
fn full_threshold_equals_dense_graph() {
    let sparse = small_model(true, 2);
    let mut dense = sparse.clone();
    dense.config.aip = false;
    let scenes: Vec<_> = (0..8).map(|s| random_scene(2 + s as usize % 5, 5, 6, s)).collect();
    let row = evaluate_at(&sparse, &scenes, 1.0, 1).unwrap();
    let full = evaluate(&dense, &scenes, ForwardOptions::default(), 1).unwrap();
    assert!((row.min_ade - full.min_ade).abs() <= 1e-12);
    assert!((row.min_fde - full.min_fde).abs() <= 1e-12);
    let low = evaluate_at(&sparse, &scenes, 0.3, 1).unwrap();
    assert!(low.mean_k_star <= row.mean_k_star);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = RunConfig::parse("model.d = 16\nmodel.k = 3\ndata.t_f = 6\n").unwrap();
    let model = art_core::model::ArtModel::new(cfg.model.clone(), 42).unwrap();
    let bytes = Checkpoint::from_model(&model, &cfg).to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    let restored = back.into_model(&cfg).unwrap();
    for (a, b) in model.params.iter().zip(restored.params.iter()) {
        assert_eq!(a.name, b.name);
        let same = a.tensor.data().iter().zip(b.tensor.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "{}", a.name);
    }
    let other = cfg.with("model.heads", "2").unwrap();
    assert!(matches!(
        Checkpoint::from_bytes(&bytes).unwrap().into_model(&other),
        Err(ArtError::Incompatible { .. })
    ));
}

#[test]
fn ethucy_windows_keep_fully_present_agents() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.txt");
    let mut text = String::from("# frame agent x y\n");
    for f in 0..6 {
        text.push_str(&format!("{} 1 {} 0.0\n", f * 10, f as f64 * 0.5));
        if f >= 2 {
            text.push_str(&format!("{} 7 1.0 {}\n", f * 10, f as f64));
        }
    }
    std::fs::write(&path, &text).unwrap();
    let scenes = load_ethucy_text(&path, 2, 2, 1).unwrap();
    assert_eq!(scenes.len(), 3);
    assert_eq!(scenes[0].agent_ids(), &[1]);
    assert_eq!(scenes[2].agent_ids(), &[1, 7]);
    assert_eq!(scenes[2].observed_at(1, 0), [1.0, 2.0]);
    assert_eq!(scenes[2].future_at(0, 1), Some([2.5, 0.0]));

    std::fs::write(&path, "0 1 0.0 0.0\n1 1 oops 0.0\n").unwrap();
    match load_ethucy_text(&path, 1, 0, 1) {
        Err(ArtError::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn synthetic_scenes_are_reproducible() {
    for kind in [SyntheticKind::ConstantVelocity, SyntheticKind::Crossing, SyntheticKind::Group] {
        let a = generate_synthetic(kind, 4, 8, 12, 5).unwrap();
        let b = generate_synthetic(kind, 4, 8, 12, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic(kind, 4, 8, 12, 6).unwrap());
    }
}
