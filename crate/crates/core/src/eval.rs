//! F1, macro-F1, ROC/AUC, decision thresholds and k-fold cross-validation.

use std::fmt::{self, Write as _};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{kfold_split, Fold};
use crate::gbdt::{self, BoostedModel, TrainConfig};
use crate::table::FeatureTable;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_predictions(predicted: &[bool], target: &[u8]) -> Self {
        let mut c = ConfusionCounts::default();
        for (&p, &y) in predicted.iter().zip(target) {
            match (p, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Counts with the roles of the two classes exchanged.
    pub fn swapped(&self) -> Self {
        ConfusionCounts {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    /// tp / (tp + fn), or 0 when there are no positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// tp / (tp + fp), or 0 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// F1 value plus a flag set when tp + fp + fn = 0 and the value is 0 by
/// convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Score {
    pub value: f64,
    pub degenerate: bool,
}

pub fn f1(c: &ConfusionCounts) -> F1Score {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        F1Score {
            value: 0.0,
            degenerate: true,
        }
    } else {
        F1Score {
            value: (2 * c.tp) as f64 / denom as f64,
            degenerate: false,
        }
    }
}

/// Mean of the positive-class and negative-class F1.
pub fn macro_f1(c: &ConfusionCounts) -> f64 {
    (f1(c).value + f1(&c.swapped()).value) / 2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// (false-positive rate, true-positive rate), from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (x, y) in &self.points {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }
}

/// ROC curve by sweeping thresholds over the distinct scores in descending
/// order. Tied scores move the curve in one step, so ties count one half in
/// the area.
pub fn roc(scores: &[f64], targets: &[u8]) -> Result<RocCurve> {
    if scores.len() != targets.len() {
        return Err(Error::Data(format!(
            "{} scores for {} targets",
            scores.len(),
            targets.len()
        )));
    }
    let p = targets.iter().filter(|&&y| y == 1).count() as u64;
    let n = targets.len() as u64 - p;
    if p == 0 || n == 0 {
        return Err(Error::Data(format!(
            "ROC needs both classes ({p} positive, {n} negative)"
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    // Twice the area in units of one positive-negative pair.
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        let (tp0, fp0) = (tp, fp);
        while i < idx.len() && scores[idx[i]] == s {
            if targets[idx[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += u128::from(fp - fp0) * u128::from(tp + tp0);
        points.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    let auc = area2 as f64 / (2.0 * p as f64 * n as f64);
    Ok(RocCurve { points, auc })
}

/// The distinct score that maximizes F1 when rows scoring at or above it are
/// called positive. Ties go to the lowest such threshold. Inputs without a
/// positive row give the lowest score; empty input gives 0.5.
pub fn threshold_select(scores: &[f64], targets: &[u8]) -> f64 {
    if scores.is_empty() {
        return 0.5;
    }
    let total_pos = targets.iter().filter(|&&y| y == 1).count() as u64;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut best = (f64::NEG_INFINITY, scores[idx[0]]);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if targets[idx[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let value = f1(&ConfusionCounts {
            tp,
            fp,
            tn: 0,
            fn_: total_pos - tp,
        })
        .value;
        // Descending sweep: an equal value at a lower threshold replaces.
        if value >= best.0 {
            best = (value, s);
        }
    }
    best.1
}

/// Where a fold's decision threshold came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdSource {
    /// Max-F1 on an inner holdout carved from the training folds.
    InnerHoldout,
    /// Max-F1 on the training rows themselves (holdout lacked a class).
    InSample,
    /// 0.5, when no training-based choice was possible.
    Default,
}

impl ThresholdSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdSource::InnerHoldout => "inner-holdout",
            ThresholdSource::InSample => "in-sample",
            ThresholdSource::Default => "default",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldMetrics {
    pub fold: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub test_positives: usize,
    pub threshold: f64,
    pub threshold_source: ThresholdSource,
    pub counts: ConfusionCounts,
    pub f1: F1Score,
    pub macro_f1: f64,
    /// Absent when the test fold holds a single class.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub folds: Vec<FoldMetrics>,
    pub pooled_counts: ConfusionCounts,
    pub pooled_f1: F1Score,
    pub pooled_macro_f1: f64,
    /// AUC of all out-of-fold scores taken together.
    pub pooled_auc: Option<f64>,
    pub mean_f1: f64,
    pub mean_macro_f1: f64,
    pub mean_auc: Option<f64>,
}

impl EvalReport {
    fn assemble(folds: Vec<FoldMetrics>, scores: &[f64], target: &[u8]) -> Self {
        let mut pooled = ConfusionCounts::default();
        for f in &folds {
            pooled.add(&f.counts);
        }
        let k = folds.len().max(1) as f64;
        let aucs: Vec<f64> = folds.iter().filter_map(|f| f.auc).collect();
        EvalReport {
            pooled_counts: pooled,
            pooled_f1: f1(&pooled),
            pooled_macro_f1: macro_f1(&pooled),
            pooled_auc: roc(scores, target).ok().map(|r| r.auc),
            mean_f1: folds.iter().map(|f| f.f1.value).sum::<f64>() / k,
            mean_macro_f1: folds.iter().map(|f| f.macro_f1).sum::<f64>() / k,
            mean_auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
            folds,
        }
    }
}

pub(crate) fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

fn write_counts(f: &mut impl fmt::Write, c: &ConfusionCounts) -> fmt::Result {
    writeln!(f, "tp = {}", c.tp)?;
    writeln!(f, "fp = {}", c.fp)?;
    writeln!(f, "tn = {}", c.tn)?;
    writeln!(f, "fn = {}", c.fn_)
}

impl EvalReport {
    /// Writes `[<label>fold i]` sections and a `[<label>pooled]` section.
    pub fn write_sections(&self, f: &mut impl fmt::Write, label: &str) -> fmt::Result {
        for m in &self.folds {
            writeln!(f, "[{label}fold {}]", m.fold)?;
            writeln!(f, "train_rows = {}", m.train_rows)?;
            writeln!(f, "test_rows = {}", m.test_rows)?;
            writeln!(f, "test_positives = {}", m.test_positives)?;
            writeln!(f, "threshold = {:.6}", m.threshold)?;
            writeln!(f, "threshold_source = {}", m.threshold_source.as_str())?;
            write_counts(f, &m.counts)?;
            writeln!(f, "f1 = {:.6}", m.f1.value)?;
            writeln!(f, "f1_degenerate = {}", m.f1.degenerate)?;
            writeln!(f, "macro_f1 = {:.6}", m.macro_f1)?;
            writeln!(f, "auc = {}", opt(m.auc))?;
        }
        writeln!(f, "[{label}pooled]")?;
        write_counts(f, &self.pooled_counts)?;
        writeln!(f, "f1 = {:.6}", self.pooled_f1.value)?;
        writeln!(f, "f1_degenerate = {}", self.pooled_f1.degenerate)?;
        writeln!(f, "macro_f1 = {:.6}", self.pooled_macro_f1)?;
        writeln!(f, "auc = {}", opt(self.pooled_auc))?;
        writeln!(f, "mean_fold_f1 = {:.6}", self.mean_f1)?;
        writeln!(f, "mean_fold_macro_f1 = {:.6}", self.mean_macro_f1)?;
        writeln!(f, "mean_fold_auc = {}", opt(self.mean_auc))
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_sections(f, "")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 5,
            seed: 0,
            stratified: true,
        }
    }
}

/// Everything a cross-validation run produces, indexed like the input table
/// where per-row.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub report: EvalReport,
    /// Out-of-fold probability of every row.
    pub scores: Vec<f64>,
    /// Out-of-fold verdict of every row under its fold's threshold.
    pub predicted: Vec<bool>,
    /// Fold in which each row was scored.
    pub fold_of_row: Vec<usize>,
    /// The model trained for each fold.
    pub models: Vec<BoostedModel>,
    pub roc: Option<RocCurve>,
}

impl CvOutcome {
    /// Gain importance summed over the fold models, per feature name, in
    /// first-seen order.
    pub fn importance(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for m in &self.models {
            for (name, g) in gbdt::feature_importance(m) {
                match out.iter_mut().find(|(n, _)| *n == name) {
                    Some(e) => e.1 += g,
                    None => out.push((name, g)),
                }
            }
        }
        out
    }
}

/// k-fold cross-validation with folds from [`kfold_split`].
pub fn cross_validate(table: &FeatureTable, train: &TrainConfig, cv: &CvConfig) -> Result<CvOutcome> {
    let folds = kfold_split(table, cv.folds, cv.seed, cv.stratified)?;
    cross_validate_folds(table, train, &folds, cv)
}

/// Cross-validation over caller-supplied folds. Each fold trains on its
/// training rows, picks its threshold from those rows only (see
/// [`ThresholdSource`]) and scores its test rows. Folds run in parallel and
/// are reported in index order.
pub fn cross_validate_folds(
    table: &FeatureTable,
    train: &TrainConfig,
    folds: &[Fold],
    cv: &CvConfig,
) -> Result<CvOutcome> {
    let target = table
        .target()
        .ok_or_else(|| Error::Train("cross-validation needs a target".into()))?;
    let per_fold: Vec<(FoldMetrics, BoostedModel, Vec<f64>, Vec<bool>)> = folds
        .par_iter()
        .enumerate()
        .map(|(i, fold)| run_fold(table, train, fold, i, cv))
        .collect::<Result<_>>()?;

    let n = table.n_rows();
    let mut scores = vec![f64::NAN; n];
    let mut predicted = vec![false; n];
    let mut fold_of_row = vec![usize::MAX; n];
    let mut metrics = Vec::with_capacity(folds.len());
    let mut models = Vec::with_capacity(folds.len());
    for (i, (fold, (m, model, s, p))) in folds.iter().zip(per_fold).enumerate() {
        for (j, &r) in fold.test.iter().enumerate() {
            scores[r] = s[j];
            predicted[r] = p[j];
            fold_of_row[r] = i;
        }
        metrics.push(m);
        models.push(model);
    }
    // Rows outside every test fold are left out of the pooled figures.
    let scored: Vec<usize> = (0..n).filter(|&r| fold_of_row[r] != usize::MAX).collect();
    let s: Vec<f64> = scored.iter().map(|&r| scores[r]).collect();
    let y: Vec<u8> = scored.iter().map(|&r| target[r]).collect();
    let roc = roc(&s, &y).ok();
    Ok(CvOutcome {
        report: EvalReport::assemble(metrics, &s, &y),
        scores,
        predicted,
        fold_of_row,
        models,
        roc,
    })
}

fn run_fold(
    table: &FeatureTable,
    train_cfg: &TrainConfig,
    fold: &Fold,
    index: usize,
    cv: &CvConfig,
) -> Result<(FoldMetrics, BoostedModel, Vec<f64>, Vec<bool>)> {
    let mut train_table = table.select_rows(&fold.train);
    let mut test_table = table.select_rows(&fold.test);
    if train_cfg.feature_top_k.is_some() {
        let (reduced, kept) = gbdt::select_top_k_features(&train_table, train_cfg)?;
        train_table = reduced;
        let cols: Vec<usize> = kept
            .iter()
            .map(|k| test_table.column_index(k).expect("kept column exists"))
            .collect();
        test_table = test_table.select_columns(&cols);
    }
    let plain = TrainConfig {
        feature_top_k: None,
        ..train_cfg.clone()
    };
    let (threshold, source) = match inner_threshold(&train_table, &plain, cv, index)? {
        Some(t) => (t, ThresholdSource::InnerHoldout),
        None => (f64::NAN, ThresholdSource::InSample),
    };
    let model = gbdt::train(&train_table, &plain)?;
    let (threshold, source) = if source == ThresholdSource::InSample {
        let in_sample = gbdt::predict(&model, &train_table)?;
        let y = train_table.target().expect("target");
        if y.contains(&0) && y.contains(&1) {
            (threshold_select(&in_sample, y), ThresholdSource::InSample)
        } else {
            (0.5, ThresholdSource::Default)
        }
    } else {
        (threshold, source)
    };
    let scores = gbdt::predict(&model, &test_table)?;
    let predicted: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    let y = test_table.target().expect("target");
    let counts = ConfusionCounts::from_predictions(&predicted, y);
    let metrics = FoldMetrics {
        fold: index,
        train_rows: fold.train.len(),
        test_rows: fold.test.len(),
        test_positives: y.iter().filter(|&&v| v == 1).count(),
        threshold,
        threshold_source: source,
        counts,
        f1: f1(&counts),
        macro_f1: macro_f1(&counts),
        auc: roc(&scores, y).ok().map(|r| r.auc),
    };
    Ok((metrics, model, scores, predicted))
}

/// Threshold from a model trained on part of the training rows and scored on
/// the rest. `None` when no usable holdout exists.
fn inner_threshold(
    train_table: &FeatureTable,
    cfg: &TrainConfig,
    cv: &CvConfig,
    fold: usize,
) -> Result<Option<f64>> {
    let inner_k = cv.folds.saturating_sub(1).max(2);
    let inner_seed = cv.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(fold as u64 + 1));
    let split = kfold_split(train_table, inner_k, inner_seed, cv.stratified)
        .or_else(|_| kfold_split(train_table, inner_k, inner_seed, false));
    let Ok(inner) = split else {
        return Ok(None);
    };
    let holdout = &inner[0];
    let fit = train_table.select_rows(&holdout.train);
    let check = train_table.select_rows(&holdout.test);
    let has_both = |t: &FeatureTable| {
        let y = t.target().expect("target");
        y.contains(&0) && y.contains(&1)
    };
    if !has_both(&fit) || !has_both(&check) {
        return Ok(None);
    }
    let model = gbdt::train(&fit, cfg)?;
    let scores = gbdt::predict(&model, &check)?;
    Ok(Some(threshold_select(&scores, check.target().expect("target"))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use crate::model::BoardKey;
    use crate::table::RowKeys;

    fn counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1(&counts(5, 0, 0, 0)).value, 1.0);
        assert_eq!(f1(&counts(2, 1, 7, 3)).value, 0.5);
        let d = f1(&counts(0, 0, 9, 0));
        assert_eq!((d.value, d.degenerate), (0.0, true));
        assert!(!f1(&counts(0, 1, 0, 0)).degenerate);
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&counts(5, 0, 5, 0)), 1.0);
        // All-positive predictor on 50/50 data: F1 = 2/3 for positives, 0
        // for negatives.
        let c = counts(50, 50, 0, 0);
        assert!((macro_f1(&c) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(macro_f1(&c), macro_f1(&c.swapped()));
        let sym = counts(7, 3, 7, 3);
        assert_eq!(macro_f1(&sym), f1(&sym).value);
    }

    #[test]
    fn roc_examples() {
        let r = roc(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]).unwrap();
        assert_eq!(r.auc, 0.75);
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));

        assert_eq!(roc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap().auc, 1.0);
        let flat = roc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap();
        assert_eq!(flat.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(flat.auc, 0.5);
        assert!(roc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(roc(&[0.1], &[1, 0]).is_err());
    }

    #[test]
    fn roc_csv_has_header_and_points() {
        let r = roc(&[0.9, 0.1], &[1, 0]).unwrap();
        assert_eq!(r.to_csv(), "fpr,tpr\n0,0\n0,1\n1,1\n");
    }

    #[test]
    fn threshold_examples() {
        let t = threshold_select(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]);
        assert_eq!(t, 0.8);
        // Identical scores: the only threshold calls everything positive.
        assert_eq!(threshold_select(&[0.4; 4], &[1, 0, 0, 0]), 0.4);
        // F1 ties resolve to the lowest threshold: calling {0.9} or {0.9,
        // 0.7, 0.6} positive both give F1 = 2/3 here.
        let s = [0.9, 0.8, 0.7, 0.6, 0.5];
        let y = [1, 0, 1, 0, 0];
        let best = threshold_select(&s, &y);
        let f_at = |t: f64| {
            let p: Vec<bool> = s.iter().map(|&v| v >= t).collect();
            f1(&ConfusionCounts::from_predictions(&p, &y)).value
        };
        for &t in &s {
            assert!(f_at(t) <= f_at(best));
            if f_at(t) == f_at(best) {
                assert!(t >= best);
            }
        }
        assert_eq!(threshold_select(&[], &[]), 0.5);
    }

    #[test]
    fn selected_threshold_beats_half_on_random_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        for _ in 0..20 {
            let s: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
            let y: Vec<u8> = (0..1000).map(|_| u8::from(rng.random::<f64>() < 0.3)).collect();
            let t = threshold_select(&s, &y);
            let f = |t: f64| {
                let p: Vec<bool> = s.iter().map(|&v| v >= t).collect();
                f1(&ConfusionCounts::from_predictions(&p, &y)).value
            };
            assert!(f(t) >= f(0.5));
        }
    }

    fn board_table(cols: &[Vec<f64>], target: &[u8]) -> FeatureTable {
        let n = target.len();
        let names = (0..cols.len()).map(|i| format!("f{i}")).collect();
        let values = (0..n).flat_map(|r| cols.iter().map(move |c| c[r])).collect();
        let keys = (0..n as u32)
            .map(|i| BoardKey {
                panel_id: i / 8,
                figure_id: i % 8 + 1,
            })
            .collect();
        FeatureTable::new(names, values, RowKeys::Board(keys))
            .unwrap()
            .with_target(target.to_vec())
            .unwrap()
    }

    #[test]
    fn cross_validation_is_deterministic_and_complete() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 400;
        let x: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let noise: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let y: Vec<u8> = x.iter().map(|&v| u8::from(v + 0.2 * rng.random::<f64>() > 0.9)).collect();
        let t = board_table(&[x, noise], &y);
        let train = TrainConfig {
            num_rounds: 20,
            ..TrainConfig::default()
        };
        let cv = CvConfig {
            folds: 5,
            seed: 9,
            stratified: true,
        };
        let a = cross_validate(&t, &train, &cv).unwrap();
        let b = cross_validate(&t, &train, &cv).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.report.to_string(), b.report.to_string());
        assert_eq!(a.report.folds.len(), 5);
        assert_eq!(a.report.pooled_counts.total(), n as u64);
        assert!(a.fold_of_row.iter().all(|&f| f < 5));
        assert!(a.report.pooled_auc.unwrap() > 0.9);
        assert!(a
            .report
            .folds
            .iter()
            .all(|f| f.threshold_source == ThresholdSource::InnerHoldout));
        // Verdicts are the scores cut at each fold's threshold.
        for r in 0..n {
            let th = a.report.folds[a.fold_of_row[r]].threshold;
            assert_eq!(a.predicted[r], a.scores[r] >= th);
        }
        let text = a.report.to_string();
        assert!(text.contains("[fold 4]") && text.contains("[pooled]"));
        assert!(text.contains("threshold_source = inner-holdout"));
    }

    #[test]
    fn cross_validation_with_top_k() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 240;
        let cols: Vec<Vec<f64>> = (0..4).map(|_| (0..n).map(|_| rng.random()).collect()).collect();
        let y: Vec<u8> = cols[2].iter().map(|&v| u8::from(v > 0.7)).collect();
        let t = board_table(&cols, &y);
        let train = TrainConfig {
            num_rounds: 10,
            feature_top_k: Some(1),
            ..TrainConfig::default()
        };
        let out = cross_validate(&t, &train, &CvConfig::default()).unwrap();
        assert!(out.models.iter().all(|m| m.feature_names == vec!["f2".to_string()]));
        let imp = out.importance();
        assert_eq!(imp.len(), 1);
    }
}
