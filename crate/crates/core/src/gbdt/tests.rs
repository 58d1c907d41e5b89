use super::*;
use crate::model::BoardKey;
use crate::table::RowKeys;

fn table(cols: &[Vec<f64>], target: &[u8]) -> FeatureTable {
    let n = target.len();
    let names = (0..cols.len()).map(|i| format!("f{i}")).collect();
    let mut values = Vec::with_capacity(n * cols.len());
    for r in 0..n {
        values.extend(cols.iter().map(|c| c[r]));
    }
    let keys = (0..n as u32)
        .map(|i| BoardKey {
            panel_id: i,
            figure_id: 1,
        })
        .collect();
    FeatureTable::new(names, values, RowKeys::Board(keys))
        .unwrap()
        .with_target(target.to_vec())
        .unwrap()
}

fn stump() -> TrainConfig {
    TrainConfig {
        max_depth: 1,
        num_rounds: 1,
        min_child_hessian: 0.0,
        ..TrainConfig::default()
    }
}

fn random_table(seed: u64, n: usize, m: usize) -> FeatureTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n).map(|_| (rng.random::<f64>() * 20.0).round()).collect())
        .collect();
    let mut target: Vec<u8> = (0..n)
        .map(|r| u8::from(cols[0][r] + rng.random::<f64>() * 10.0 > 15.0))
        .collect();
    target[0] = 0;
    target[1] = 1;
    table(&cols, &target)
}

#[test]
fn zero_rounds_balanced_predicts_half() {
    let t = table(&[vec![1.0, 2.0, 3.0, 4.0]], &[0, 1, 0, 1]);
    let cfg = TrainConfig {
        num_rounds: 0,
        positive_class_weight: Some(1.0),
        ..TrainConfig::default()
    };
    let m = train(&t, &cfg).unwrap();
    assert_eq!(m.base_score, 0.0);
    assert!(predict(&m, &t).unwrap().iter().all(|&p| p == 0.5));
    assert!(feature_importance(&m).iter().all(|(_, g)| *g == 0.0));
}

#[test]
fn auto_weight_balances_base_score() {
    let t = table(&[vec![1.0, 2.0, 3.0, 4.0, 5.0]], &[0, 0, 0, 0, 1]);
    let m = train(&t, &TrainConfig { num_rounds: 0, ..TrainConfig::default() }).unwrap();
    assert!(m.base_score.abs() < 1e-15);
    let m = train(
        &t,
        &TrainConfig {
            num_rounds: 0,
            positive_class_weight: Some(1.0),
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert!((m.base_score - 0.25f64.ln()).abs() < 1e-15);
}

#[test]
fn leaf_weight_formula() {
    assert!((grow::leaf_weight(-2.0, 4.0, 1.0) - 0.4).abs() < 1e-15);
}

#[test]
fn separable_stump_splits_at_class_boundary() {
    let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
    let y = [0, 0, 0, 1, 1, 1, 1, 1];
    let t = table(&[x], &y);
    let cfg = TrainConfig {
        positive_class_weight: Some(1.0),
        ..stump()
    };
    let m = train(&t, &cfg).unwrap();
    match m.trees[0].root() {
        Node::Split { feature, threshold, .. } => {
            assert_eq!(*feature, 0);
            assert_eq!(*threshold, 3.5);
        }
        other => panic!("expected a split, got {other:?}"),
    }
    let p = predict(&m, &t).unwrap();
    assert!(p[2] < p[3]);
}

#[test]
fn hand_built_tree_scores() {
    let tree = Tree::from_nodes(vec![
        Node::Split {
            feature: 0,
            threshold: 2.0,
            gain: 3.2,
            right: 2,
        },
        Node::Leaf { weight: -1.0 },
        Node::Leaf { weight: 2.0 },
    ])
    .unwrap();
    let model = BoostedModel {
        trees: vec![tree],
        base_score: 0.5,
        learning_rate: 0.5,
        feature_names: vec!["f0".into()],
        config: TrainConfig::default(),
    };
    let t = table(&[vec![1.0, 2.0]], &[0, 1]);
    let p = predict(&model, &t).unwrap();
    let logistic = |s: f64| 1.0 / (1.0 + (-s).exp());
    assert!((p[0] - logistic(0.5 - 0.5)).abs() < 1e-15);
    assert!((p[1] - logistic(0.5 + 1.0)).abs() < 1e-15);
    assert_eq!(feature_importance(&model), vec![("f0".to_string(), 3.2)]);
}

#[test]
fn zero_leaf_tree_changes_nothing() {
    let t = random_table(3, 40, 2);
    let mut m = train(&t, &TrainConfig { num_rounds: 5, ..TrainConfig::default() }).unwrap();
    let before = predict(&m, &t).unwrap();
    m.trees.push(
        Tree::from_nodes(vec![
            Node::Split {
                feature: 1,
                threshold: 7.0,
                gain: 0.0,
                right: 2,
            },
            Node::Leaf { weight: 0.0 },
            Node::Leaf { weight: 0.0 },
        ])
        .unwrap(),
    );
    assert_eq!(before, predict(&m, &t).unwrap());
}

#[test]
fn malformed_trees_rejected() {
    assert!(Tree::from_nodes(vec![]).is_err());
    let bad = vec![
        Node::Split {
            feature: 0,
            threshold: 1.0,
            gain: 0.0,
            right: 1,
        },
        Node::Leaf { weight: 0.0 },
    ];
    assert!(Tree::from_nodes(bad).is_err());
}

#[test]
fn single_class_is_an_error() {
    let t = table(&[vec![1.0, 2.0, 3.0]], &[1, 1, 1]);
    let err = train(&t, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Train(_)), "{err}");
}

#[test]
fn config_validation() {
    for bad in [
        TrainConfig { max_depth: 13, ..TrainConfig::default() },
        TrainConfig { max_depth: 0, ..TrainConfig::default() },
        TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
        TrainConfig { l2_leaf_reg: -1.0, ..TrainConfig::default() },
        TrainConfig { positive_class_weight: Some(0.0), ..TrainConfig::default() },
        TrainConfig { feature_top_k: Some(0), ..TrainConfig::default() },
        TrainConfig { row_subsample: 0.0, ..TrainConfig::default() },
        TrainConfig { max_bins: 1, ..TrainConfig::default() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    assert!(TrainConfig { max_depth: 12, ..TrainConfig::default() }.validate().is_ok());
}

#[test]
fn depth_never_exceeds_limit() {
    for depth in [1, 2, 3, 5] {
        let t = random_table(depth as u64, 200, 3);
        let cfg = TrainConfig {
            max_depth: depth,
            num_rounds: 10,
            min_child_hessian: 0.0,
            ..TrainConfig::default()
        };
        let m = train(&t, &cfg).unwrap();
        assert!(m.trees.iter().all(|tr| tr.depth() <= depth));
        assert!(m.trees.iter().any(|tr| tr.depth() == depth));
    }
}

#[test]
fn column_mismatch_lists_missing_names() {
    let t = random_table(1, 30, 3);
    let m = train(&t, &TrainConfig { num_rounds: 2, ..TrainConfig::default() }).unwrap();
    let narrow = t.select_columns(&[0, 2]);
    let err = predict(&m, &narrow).unwrap_err();
    assert!(matches!(err, Error::ColumnMismatch(_)));
    assert!(err.to_string().contains("f1"), "{err}");
    // Column order in the scored table does not matter.
    let reordered = t.select_columns(&[2, 0, 1]);
    assert_eq!(predict(&m, &t).unwrap(), predict(&m, &reordered).unwrap());
}

#[test]
fn training_is_thread_count_independent() {
    let t = random_table(9, 500, 4);
    let cfg = TrainConfig {
        num_rounds: 15,
        row_subsample: 0.7,
        col_subsample: 0.5,
        seed: 4,
        ..TrainConfig::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(&t, &cfg).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn histogram_matches_exact_on_low_cardinality() {
    let t = random_table(11, 300, 3);
    let exact = train(&t, &TrainConfig { num_rounds: 10, ..TrainConfig::default() }).unwrap();
    let hist = train(
        &t,
        &TrainConfig {
            num_rounds: 10,
            split_method: SplitMethod::Histogram,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let (pe, ph) = (predict(&exact, &t).unwrap(), predict(&hist, &t).unwrap());
    for (a, b) in pe.iter().zip(&ph) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn histogram_mode_learns_continuous_signal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
    let y: Vec<u8> = x.iter().map(|&v| u8::from(v > 0.3)).collect();
    let t = table(&[x], &y);
    let cfg = TrainConfig {
        num_rounds: 20,
        split_method: SplitMethod::Histogram,
        max_bins: 16,
        ..TrainConfig::default()
    };
    let m = train(&t, &cfg).unwrap();
    let p = predict(&m, &t).unwrap();
    let errors = p
        .iter()
        .zip(&y)
        .filter(|(p, y)| (**p >= 0.5) != (**y == 1))
        .count();
    assert!(errors < 100, "{errors} misclassified");
}

#[test]
fn text_round_trip_is_bit_exact() {
    let t = random_table(21, 300, 3);
    let cfg = TrainConfig {
        num_rounds: 12,
        learning_rate: 0.3,
        positive_class_weight: Some(2.5),
        feature_top_k: Some(2),
        seed: 77,
        ..TrainConfig::default()
    };
    let m = train(&t, &cfg).unwrap();
    let text = m.to_text();
    let back = BoostedModel::from_text(&text).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.to_text(), text);
    let (a, b) = (predict(&m, &t).unwrap(), predict(&back, &t).unwrap());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn text_format_errors_carry_line_numbers() {
    let t = random_table(2, 50, 2);
    let text = train(&t, &TrainConfig { num_rounds: 2, ..TrainConfig::default() })
        .unwrap()
        .to_text();
    let err = BoostedModel::from_text(&text.replace("spi-defect-gbdt 1", "other 1")).unwrap_err();
    assert!(matches!(err, Error::ModelFormat { line: 1, .. }), "{err}");
    let truncated: String = text.lines().take(8).collect::<Vec<_>>().join("\n");
    assert!(matches!(
        BoostedModel::from_text(&truncated),
        Err(Error::ModelFormat { .. })
    ));
    let bad_cfg = text.replace("max_depth=6", "max_depht=6");
    let err = BoostedModel::from_text(&bad_cfg).unwrap_err();
    assert!(matches!(err, Error::ModelFormat { line: 2, .. }), "{err}");
}

#[test]
fn top_k_selection() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 400;
    let noise: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
        .collect();
    let signal: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let y: Vec<u8> = signal.iter().map(|&s| u8::from(s > 0.8)).collect();
    let t = table(&[noise[0].clone(), noise[1].clone(), signal, noise[2].clone()], &y);
    let cfg = TrainConfig {
        num_rounds: 10,
        feature_top_k: Some(1),
        ..TrainConfig::default()
    };
    let (reduced, kept) = select_top_k_features(&t, &cfg).unwrap();
    assert_eq!(kept, vec!["f2".to_string()]);
    assert_eq!(reduced.column_names(), &["f2".to_string()]);

    let full = TrainConfig { feature_top_k: Some(4), ..cfg.clone() };
    let (same, kept) = select_top_k_features(&t, &full).unwrap();
    assert_eq!(kept, t.column_names());
    assert_eq!(same.values(), t.values());

    let too_many = TrainConfig { feature_top_k: Some(5), ..cfg.clone() };
    assert!(select_top_k_features(&t, &too_many).is_err());
    let zero = TrainConfig { feature_top_k: Some(0), ..cfg };
    assert!(select_top_k_features(&t, &zero).is_err());
}

#[test]
fn importance_ranking_ties_by_index() {
    let imp = vec![
        ("a".to_string(), 1.0),
        ("b".to_string(), 3.0),
        ("c".to_string(), 1.0),
        ("d".to_string(), 0.0),
    ];
    assert_eq!(rank_by_importance(&imp), vec![1, 0, 2, 3]);
}

#[test]
fn min_child_hessian_blocks_small_children() {
    let x = vec![1.0, 2.0, 3.0, 4.0];
    let t = table(&[x], &[1, 0, 0, 0]);
    let cfg = TrainConfig {
        min_child_hessian: 100.0,
        ..stump()
    };
    let m = train(&t, &cfg).unwrap();
    assert!(matches!(m.trees[0].root(), Node::Leaf { .. }));
}

#[test]
fn midpoint_edges() {
    assert_eq!(grow::midpoint(1.0, 2.0), 1.5);
    let a = 1.0f64;
    let b = f64::from_bits(a.to_bits() + 1);
    let m = grow::midpoint(a, b);
    assert!(a < m && m <= b);
}
