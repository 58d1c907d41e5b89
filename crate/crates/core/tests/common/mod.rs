//! Helpers and independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use spi_defect::features::ClassificationTask;
use spi_defect::{AoiRecord, BoardKey, FeatureTable, OperatorLabel, RepairLabel, RowKeys};

/// Board-keyed table from column vectors, columns named f0, f1, ...
pub fn table(cols: &[Vec<f64>], target: &[u8]) -> FeatureTable {
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

/// One candidate root split found by brute force.
#[derive(Debug, Clone, Copy)]
pub struct OracleSplit {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Every admissible root split of a first boosting round, by enumeration.
/// Gradients are taken at the class-weighted log-odds base score; left and
/// right sums are recomputed from scratch for each threshold.
pub fn root_split_candidates(
    cols: &[Vec<f64>],
    target: &[u8],
    pos_weight: f64,
    lambda: f64,
    gamma: f64,
    min_child_hessian: f64,
) -> Vec<OracleSplit> {
    let w: Vec<f64> = target
        .iter()
        .map(|&y| if y == 1 { pos_weight } else { 1.0 })
        .collect();
    let wpos: f64 = w.iter().zip(target).filter(|(_, &y)| y == 1).map(|(w, _)| w).sum();
    let wneg: f64 = w.iter().zip(target).filter(|(_, &y)| y == 0).map(|(w, _)| w).sum();
    let p = wpos / (wpos + wneg);
    let g: Vec<f64> = w.iter().zip(target).map(|(w, &y)| w * (p - y as f64)).collect();
    let h: Vec<f64> = w.iter().map(|w| w * p * (1.0 - p)).collect();
    let score = |gs: f64, hs: f64| gs * gs / (hs + lambda);
    let (gt, ht): (f64, f64) = (g.iter().sum(), h.iter().sum());
    let mut out = Vec::new();
    for (f, col) in cols.iter().enumerate() {
        let mut uniq = col.clone();
        uniq.sort_by(f64::total_cmp);
        uniq.dedup();
        for pair in uniq.windows(2) {
            let thr = {
                let mid = pair[0] + (pair[1] - pair[0]) / 2.0;
                if mid > pair[0] && mid <= pair[1] {
                    mid
                } else {
                    pair[1]
                }
            };
            let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
            for r in 0..col.len() {
                if col[r] < thr {
                    gl += g[r];
                    hl += h[r];
                } else {
                    gr += g[r];
                    hr += h[r];
                }
            }
            if hl < min_child_hessian || hr < min_child_hessian {
                continue;
            }
            let gain = 0.5 * (score(gl, hl) + score(gr, hr) - score(gt, ht)) - gamma;
            out.push(OracleSplit {
                feature: f,
                threshold: thr,
                gain,
            });
        }
    }
    out
}

/// Pairwise AUC: fraction of positive/negative pairs ordered correctly,
/// ties counting one half.
pub fn mann_whitney(scores: &[f64], targets: &[u8]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(targets).filter(|(_, &y)| y == 1).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(targets).filter(|(_, &y)| y == 0).map(|(s, _)| *s).collect();
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() as f64 * neg.len() as f64)
}

/// Small random dataset with repeated values, both classes present.
pub fn random_dataset(rng: &mut ChaCha8Rng, max_rows: usize, max_cols: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
    let n = rng.random_range(4..=max_rows);
    let m = rng.random_range(1..=max_cols);
    let levels = rng.random_range(2..=12) as f64;
    let cols: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n).map(|_| (rng.random::<f64>() * levels).floor() * 0.5 - 1.0).collect())
        .collect();
    let mut y: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
    y[0] = 0;
    y[1] = 1;
    (cols, y)
}

/// Whether an AOI record lands on a table row, by direct field comparison.
fn aoi_hits(table: &FeatureTable, row: usize, a: &AoiRecord) -> bool {
    match table.row_keys() {
        RowKeys::Pin(k) => {
            let k = &k[row];
            a.panel_id == k.panel_id
                && a.figure_id == k.figure_id
                && a.component_id == k.component_id
                && a.pin_number == Some(k.pin_number)
        }
        RowKeys::Component(k) => {
            let k = &k[row];
            a.panel_id == k.panel_id && a.figure_id == k.figure_id && a.component_id == k.component_id
        }
        RowKeys::Board(k) => {
            let k = &k[row];
            a.panel_id == k.panel_id
                && a.figure_id == k.figure_id
                && Some(a.component_id.as_str()) == table.target_component()
        }
    }
}

/// Nested-loop join: for each task, the kept rows and their targets.
pub fn brute_force_join(task: ClassificationTask, table: &FeatureTable, aoi: &[AoiRecord]) -> (Vec<usize>, Vec<u8>) {
    let mut rows = Vec::new();
    let mut target = Vec::new();
    for r in 0..table.n_rows() {
        let mut matched = false;
        let mut positive = false;
        for a in aoi {
            if !aoi_hits(table, r, a) {
                continue;
            }
            match task {
                ClassificationTask::C1AoiDefect => {
                    matched = true;
                    positive = true;
                }
                ClassificationTask::C2OperatorLabel => {
                    matched = true;
                    positive |= a.operator_label == OperatorLabel::Bad;
                }
                ClassificationTask::C3RepairLabel => {
                    if a.operator_label == OperatorLabel::Bad && a.repair_label.is_some() {
                        matched = true;
                        positive |= a.repair_label == Some(RepairLabel::NotPossibleToRepair);
                    }
                }
            }
        }
        match task {
            ClassificationTask::C1AoiDefect => {
                rows.push(r);
                target.push(u8::from(positive));
            }
            _ if matched => {
                rows.push(r);
                target.push(u8::from(positive));
            }
            _ => {}
        }
    }
    (rows, target)
}

/// Row identity as text, for comparing row sets across tables.
pub fn row_label(table: &FeatureTable, row: usize) -> String {
    match table.row_keys() {
        RowKeys::Pin(k) => k[row].to_string(),
        RowKeys::Component(k) => k[row].to_string(),
        RowKeys::Board(k) => k[row].to_string(),
    }
}
