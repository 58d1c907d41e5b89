mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spi_defect::features::{attach_labels_c1, build_pin_table};
use spi_defect::gbdt::{
    feature_importance, load_model, predict, rank_by_importance, save_model,
    select_top_k_features, train, train_with_history, Node, SplitMethod, TrainConfig,
};
use spi_defect::synthgen::{generate, GeneratorConfig};
use spi_defect::EncodingConfig;

use common::{random_dataset, root_split_candidates, table};

#[test]
fn root_split_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut exact_matches = 0;
    for case in 0..100 {
        let (cols, y) = random_dataset(&mut rng, 64, 3);
        let mch = [0.0, 0.5, 1.0][case % 3];
        let cfg = TrainConfig {
            max_depth: 1,
            num_rounds: 1,
            min_child_hessian: mch,
            positive_class_weight: Some(1.0 + (case % 4) as f64),
            ..TrainConfig::default()
        };
        let model = train(&table(&cols, &y), &cfg).unwrap();
        let cands = root_split_candidates(&cols, &y, cfg.positive_class_weight.unwrap(), 1.0, 0.0, mch);
        let best = cands.iter().map(|c| c.gain).fold(f64::NEG_INFINITY, f64::max);
        match model.trees[0].root() {
            Node::Leaf { .. } => assert!(best <= 1e-9, "case {case}: oracle found gain {best}"),
            Node::Split { feature, threshold, gain, .. } => {
                assert!((gain - best).abs() < 1e-9, "case {case}: {gain} vs {best}");
                let first = cands.iter().find(|c| c.gain >= best - 1e-9).unwrap();
                let chosen = cands
                    .iter()
                    .find(|c| c.feature == *feature && c.threshold == *threshold)
                    .expect("trainer split is not an oracle candidate");
                assert!((chosen.gain - best).abs() < 1e-9);
                if first.feature == *feature && first.threshold == *threshold {
                    exact_matches += 1;
                }
            }
        }
    }
    assert!(exact_matches >= 95, "{exact_matches}");
}

#[test]
fn loss_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..20 {
        let (cols, y) = random_dataset(&mut rng, 200, 3);
        let cfg = TrainConfig {
            num_rounds: 50,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let (_, history) = train_with_history(&table(&cols, &y), &cfg).unwrap();
        assert_eq!(history.len(), 51);
        for w in history.windows(2) {
            assert!(w[1] <= w[0], "loss rose from {} to {}", w[0], w[1]);
        }
    }
}

#[test]
fn positive_weight_equals_duplication() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for reps in [2usize, 3, 5] {
        let n = 40;
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
            .collect();
        let y: Vec<u8> = (0..n).map(|r| u8::from(cols[1][r] + 0.3 * rng.random::<f64>() > 0.8)).collect();
        let weighted = train(
            &table(&cols, &y),
            &TrainConfig {
                num_rounds: 1,
                positive_class_weight: Some(reps as f64),
                ..TrainConfig::default()
            },
        )
        .unwrap();

        let mut dup_cols = cols.clone();
        let mut dup_y = y.clone();
        for r in 0..n {
            if y[r] == 1 {
                for _ in 1..reps {
                    for (c, dc) in cols.iter().zip(dup_cols.iter_mut()) {
                        dc.push(c[r]);
                    }
                    dup_y.push(1);
                }
            }
        }
        let duplicated = train(
            &table(&dup_cols, &dup_y),
            &TrainConfig {
                num_rounds: 1,
                positive_class_weight: Some(1.0),
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!((weighted.base_score - duplicated.base_score).abs() < 1e-9);
        match (weighted.trees[0].root(), duplicated.trees[0].root()) {
            (
                Node::Split { feature: fa, threshold: ta, gain: ga, .. },
                Node::Split { feature: fb, threshold: tb, gain: gb, .. },
            ) => {
                assert_eq!((fa, ta), (fb, tb));
                assert!((ga - gb).abs() < 1e-9);
            }
            other => panic!("expected two root splits, got {other:?}"),
        }
    }
}

#[test]
fn saved_model_reproduces_predictions_bit_for_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let n = 2000;
    let cols: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..n).map(|_| rng.random::<f64>() * 100.0 - 50.0).collect())
        .collect();
    let y: Vec<u8> = (0..n).map(|r| u8::from(cols[0][r] * cols[2][r] > 100.0)).collect();
    let t = table(&cols, &y);
    let model = train(&t, &TrainConfig { num_rounds: 30, ..TrainConfig::default() }).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.txt");
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, model);

    let probe_cols: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..10_000).map(|_| rng.random::<f64>() * 120.0 - 60.0).collect())
        .collect();
    let probe = table(&probe_cols, &vec![0; 10_000]);
    let a = predict(&model, &probe).unwrap();
    let b = predict(&back, &probe).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn planted_volume_deviation_ranks_first() {
    let gen = GeneratorConfig {
        seed: 7,
        num_panels: 20,
        planted_signal_strength: 2.0,
        pin_defect_rate: 0.01,
        ..GeneratorConfig::default()
    };
    let (pins, aoi) = generate(&gen).unwrap();
    let pin_table = build_pin_table(&pins, &EncodingConfig::default()).unwrap();
    let (labelled, _) = attach_labels_c1(&pin_table, &aoi).unwrap();
    let cfg = TrainConfig {
        num_rounds: 20,
        ..TrainConfig::default()
    };
    let model = train(&labelled, &cfg).unwrap();
    let imp = feature_importance(&model);
    assert_eq!(imp[rank_by_importance(&imp)[0]].0, "Volume(%)");
    assert!(imp.iter().all(|(_, g)| *g >= 0.0));

    let (reduced, kept) = select_top_k_features(
        &labelled,
        &TrainConfig {
            feature_top_k: Some(1),
            ..cfg.clone()
        },
    )
    .unwrap();
    assert_eq!(kept, vec!["Volume(%)".to_string()]);
    assert_eq!(reduced.n_cols(), 1);

    let hist = train(
        &labelled,
        &TrainConfig {
            split_method: SplitMethod::Histogram,
            ..cfg
        },
    )
    .unwrap();
    let imp = feature_importance(&hist);
    assert_eq!(imp[rank_by_importance(&imp)[0]].0, "Volume(%)");
}
