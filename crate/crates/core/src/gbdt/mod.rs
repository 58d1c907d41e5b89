//! Second-order gradient-boosted decision trees for binary classification.
//!
//! Trees are grown level-wise with exact greedy split search by default:
//! every midpoint between adjacent distinct values inside a node is a
//! candidate. An equal-frequency histogram search is available as a speed
//! option; it is not bit-identical to the exact search on high-cardinality
//! columns.

mod grow;
mod text;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::FeatureTable;

pub use text::{load_model, save_model};

use grow::{Dataset, Grower};

/// Hard ceiling on tree depth.
pub const MAX_DEPTH_CAP: usize = 12;
/// Number of columns kept by feature selection when no explicit k is given.
pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitMethod {
    #[default]
    Exact,
    Histogram,
}

impl SplitMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMethod::Exact => "exact",
            SplitMethod::Histogram => "histogram",
        }
    }
}

impl std::str::FromStr for SplitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(SplitMethod::Exact),
            "histogram" => Ok(SplitMethod::Histogram),
            other => Err(Error::Config(format!(
                "unknown split method {other:?} (expected exact or histogram)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_depth: usize,
    pub num_rounds: usize,
    pub learning_rate: f64,
    pub l2_leaf_reg: f64,
    pub min_split_gain: f64,
    pub min_child_hessian: f64,
    /// Weight of positive rows; `None` means N_neg / N_pos.
    pub positive_class_weight: Option<f64>,
    /// When set, each model is trained on the k columns with the highest
    /// gain importance under a probe model.
    pub feature_top_k: Option<usize>,
    pub split_method: SplitMethod,
    pub max_bins: usize,
    pub row_subsample: f64,
    pub col_subsample: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_depth: 6,
            num_rounds: 100,
            learning_rate: 0.1,
            l2_leaf_reg: 1.0,
            min_split_gain: 0.0,
            min_child_hessian: 1.0,
            positive_class_weight: None,
            feature_top_k: None,
            split_method: SplitMethod::Exact,
            max_bins: 256,
            row_subsample: 1.0,
            col_subsample: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.max_depth == 0 || self.max_depth > MAX_DEPTH_CAP {
            return bad(format!(
                "max_depth must be in 1..={MAX_DEPTH_CAP}, got {}",
                self.max_depth
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, v) in [
            ("l2_leaf_reg", self.l2_leaf_reg),
            ("min_split_gain", self.min_split_gain),
            ("min_child_hessian", self.min_child_hessian),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if let Some(w) = self.positive_class_weight {
            if !(w.is_finite() && w > 0.0) {
                return bad(format!("positive_class_weight must be positive, got {w}"));
            }
        }
        if self.feature_top_k == Some(0) {
            return bad("feature_top_k must be at least 1".into());
        }
        if !(2..=256).contains(&self.max_bins) {
            return bad(format!("max_bins must be in 2..=256, got {}", self.max_bins));
        }
        for (name, v) in [
            ("row_subsample", self.row_subsample),
            ("col_subsample", self.col_subsample),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} must be in (0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

/// One node of a tree stored in preorder. A split's left child is the next
/// node; `right` is the index of its right child.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        right: usize,
    },
    Leaf {
        weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Builds a tree from preorder nodes, checking child links.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        fn check(nodes: &[Node], i: usize) -> std::result::Result<usize, String> {
            match nodes.get(i) {
                None => Err(format!("node {i} is missing")),
                Some(Node::Leaf { .. }) => Ok(i + 1),
                Some(Node::Split { right, .. }) => {
                    let end_left = check(nodes, i + 1)?;
                    if *right != end_left {
                        return Err(format!("node {i}: right child {right}, expected {end_left}"));
                    }
                    check(nodes, *right)
                }
            }
        }
        match check(&nodes, 0) {
            Ok(end) if end == nodes.len() => Ok(Tree { nodes }),
            Ok(end) => Err(Error::Data(format!(
                "tree has {} trailing nodes",
                nodes.len() - end
            ))),
            Err(e) => Err(Error::Data(format!("malformed tree: {e}"))),
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    /// Leaf weight reached by a row whose feature `f` has value `value(f)`.
    pub fn evaluate(&self, value: impl Fn(usize) -> f64) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { weight } => return weight,
                Node::Split {
                    feature,
                    threshold,
                    right,
                    ..
                } => i = if value(feature) < threshold { i + 1 } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> (usize, usize) {
            match nodes[i] {
                Node::Leaf { .. } => (0, i + 1),
                Node::Split { right, .. } => {
                    let (dl, _) = walk(nodes, i + 1);
                    let (dr, end) = walk(nodes, right);
                    (1 + dl.max(dr), end)
                }
            }
        }
        walk(&self.nodes, 0).0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedModel {
    pub trees: Vec<Tree>,
    pub base_score: f64,
    pub learning_rate: f64,
    pub feature_names: Vec<String>,
    pub config: TrainConfig,
}

impl BoostedModel {
    /// Raw log-odds score for a row given in model column order.
    pub fn score_row(&self, row: &[f64]) -> f64 {
        let mut s = self.base_score;
        for t in &self.trees {
            s += self.learning_rate * t.evaluate(|f| row[f]);
        }
        s
    }

    pub fn predict_raw(&self, table: &FeatureTable) -> Result<Vec<f64>> {
        let map = self.column_map(table)?;
        Ok((0..table.n_rows())
            .into_par_iter()
            .map(|r| {
                let row = table.row(r);
                let mut s = self.base_score;
                for t in &self.trees {
                    s += self.learning_rate * t.evaluate(|f| row[map[f]]);
                }
                s
            })
            .collect())
    }

    fn column_map(&self, table: &FeatureTable) -> Result<Vec<usize>> {
        let mut missing = Vec::new();
        let map: Vec<usize> = self
            .feature_names
            .iter()
            .map(|n| {
                table.column_index(n).unwrap_or_else(|| {
                    missing.push(n.as_str());
                    0
                })
            })
            .collect();
        if missing.is_empty() {
            Ok(map)
        } else {
            Err(Error::ColumnMismatch(format!(
                "table lacks {} model column(s): {}",
                missing.len(),
                missing.join(", ")
            )))
        }
    }
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^s) without overflow.
fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

/// Probabilities for every row of `table`, matched to the model by column name.
pub fn predict(model: &BoostedModel, table: &FeatureTable) -> Result<Vec<f64>> {
    Ok(model.predict_raw(table)?.into_iter().map(sigmoid).collect())
}

/// Weighted logistic loss of raw scores.
pub fn logistic_loss(scores: &[f64], target: &[u8], weights: &[f64]) -> f64 {
    scores
        .iter()
        .zip(target)
        .zip(weights)
        .map(|((&s, &y), &w)| w * (softplus(s) - f64::from(y) * s))
        .sum()
}

/// Per-row weights under the configured positive class weight.
pub fn class_weights(target: &[u8], config: &TrainConfig) -> Result<Vec<f64>> {
    let pos = target.iter().filter(|&&y| y == 1).count();
    let neg = target.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Train(format!(
            "target has a single class ({pos} positive, {neg} negative rows)"
        )));
    }
    let wp = config
        .positive_class_weight
        .unwrap_or(neg as f64 / pos as f64);
    Ok(target.iter().map(|&y| if y == 1 { wp } else { 1.0 }).collect())
}

pub fn train(table: &FeatureTable, config: &TrainConfig) -> Result<BoostedModel> {
    train_with_history(table, config).map(|(m, _)| m)
}

/// Trains and also returns the weighted training loss before the first round
/// and after each round.
pub fn train_with_history(
    table: &FeatureTable,
    config: &TrainConfig,
) -> Result<(BoostedModel, Vec<f64>)> {
    config.validate()?;
    let target = table
        .target()
        .ok_or_else(|| Error::Train("table has no target column".into()))?;
    if table.n_cols() == 0 {
        return Err(Error::Train("table has no feature columns".into()));
    }
    let weights = class_weights(target, config)?;
    let (mut wpos, mut wneg) = (0.0, 0.0);
    for (&y, &w) in target.iter().zip(&weights) {
        if y == 1 {
            wpos += w;
        } else {
            wneg += w;
        }
    }
    let base_score = (wpos / wneg).ln();
    let ds = Dataset::new(table.to_columns(), config.split_method, config.max_bins);
    let n = ds.n_rows;
    let mut scores = vec![base_score; n];
    let mut history = Vec::with_capacity(config.num_rounds + 1);
    let mut trees = Vec::with_capacity(config.num_rounds);
    let mut gh = vec![[0.0; 2]; n];
    let mut row_loss = vec![0.0; n];
    let all_features: Vec<usize> = (0..ds.n_cols()).collect();
    let mut grower = Grower::new(&ds, config);

    for round in 0..=config.num_rounds {
        // One pass yields this round's gradients and the loss of the scores
        // left by the previous round.
        gh.par_iter_mut()
            .zip(row_loss.par_iter_mut())
            .enumerate()
            .for_each(|(r, (out, loss))| {
                let s = scores[r];
                let e = (-s.abs()).exp();
                let p = if s >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                let (w, y) = (weights[r], f64::from(target[r]));
                *loss = w * (s.max(0.0) + e.ln_1p() - y * s);
                *out = [w * (p - y), w * p * (1.0 - p)];
            });
        let loss: f64 = row_loss.iter().sum();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                round: round.saturating_sub(1),
            });
        }
        history.push(loss);
        if round == config.num_rounds {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(round as u64);
        let active: Vec<bool> = if config.row_subsample < 1.0 {
            (0..n).map(|_| rng.random::<f64>() < config.row_subsample).collect()
        } else {
            vec![true; n]
        };
        let features = if config.col_subsample < 1.0 {
            let m = ds.n_cols();
            let k = ((m as f64 * config.col_subsample).ceil() as usize).clamp(1, m);
            let mut f = sample(&mut rng, m, k).into_vec();
            f.sort_unstable();
            f
        } else {
            all_features.clone()
        };
        let tree = grower.grow(&gh, &active, &features);
        let lr = config.learning_rate;
        let leaf_value = &grower.leaf_value;
        scores.par_iter_mut().enumerate().for_each(|(r, s)| {
            let w = if active[r] {
                leaf_value[r]
            } else {
                tree.evaluate(|f| ds.cols[f][r])
            };
            *s += lr * w;
        });
        trees.push(tree);
    }
    Ok((
        BoostedModel {
            trees,
            base_score,
            learning_rate: config.learning_rate,
            feature_names: table.column_names().to_vec(),
            config: config.clone(),
        },
        history,
    ))
}

/// Total realized split gain per feature, in model column order.
pub fn feature_importance(model: &BoostedModel) -> Vec<(String, f64)> {
    let mut gain = vec![0.0; model.feature_names.len()];
    for t in &model.trees {
        for node in t.nodes() {
            if let Node::Split { feature, gain: g, .. } = node {
                gain[*feature] += g;
            }
        }
    }
    model.feature_names.iter().cloned().zip(gain).collect()
}

/// Column indices ordered by descending importance, ties by column index.
pub fn rank_by_importance(importance: &[(String, f64)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..importance.len()).collect();
    idx.sort_by(|&a, &b| importance[b].1.total_cmp(&importance[a].1).then(a.cmp(&b)));
    idx
}

/// Keeps the `feature_top_k` most important columns (default
/// [`DEFAULT_TOP_K`]) according to a probe model trained on all columns.
/// Kept columns retain their original order.
pub fn select_top_k_features(
    table: &FeatureTable,
    config: &TrainConfig,
) -> Result<(FeatureTable, Vec<String>)> {
    let k = config.feature_top_k.unwrap_or(DEFAULT_TOP_K);
    if k == 0 {
        return Err(Error::Config("feature_top_k must be at least 1".into()));
    }
    if k > table.n_cols() {
        return Err(Error::Config(format!(
            "feature_top_k {k} exceeds the table width {}",
            table.n_cols()
        )));
    }
    let probe_cfg = TrainConfig {
        feature_top_k: None,
        ..config.clone()
    };
    let probe = train(table, &probe_cfg)?;
    let mut keep: Vec<usize> = rank_by_importance(&feature_importance(&probe))
        .into_iter()
        .take(k)
        .collect();
    keep.sort_unstable();
    let names = keep.iter().map(|&c| table.column_names()[c].clone()).collect();
    Ok((table.select_columns(&keep), names))
}

#[cfg(test)]
mod tests;
