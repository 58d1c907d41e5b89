//! Line-oriented model format.
//!
//! ```text
//! spi-defect-gbdt 1
//! config max_depth=6 num_rounds=100 ...
//! base_score 0.0
//! learning_rate 0.1
//! features 2
//! Volume(%)@pin1
//! Height@pin1
//! trees 1
//! tree 0 3
//! split 0 101.5 12.25 Volume(%)@pin1
//! leaf -0.4
//! leaf 0.3
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so a saved model reloads
//! bit-identically.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{BoostedModel, Node, SplitMethod, Tree, TrainConfig};
use crate::error::{Error, Result};

const MAGIC: &str = "spi-defect-gbdt";
const VERSION: u32 = 1;

impl BoostedModel {
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {VERSION}");
        let _ = writeln!(
            out,
            "config max_depth={} num_rounds={} learning_rate={:?} l2_leaf_reg={:?} \
             min_split_gain={:?} min_child_hessian={:?} positive_class_weight={} \
             feature_top_k={} split_method={} max_bins={} row_subsample={:?} \
             col_subsample={:?} seed={}",
            c.max_depth,
            c.num_rounds,
            c.learning_rate,
            c.l2_leaf_reg,
            c.min_split_gain,
            c.min_child_hessian,
            opt(c.positive_class_weight.map(|w| format!("{w:?}"))),
            c.feature_top_k.map_or_else(|| "none".into(), |k| k.to_string()),
            c.split_method.as_str(),
            c.max_bins,
            c.row_subsample,
            c.col_subsample,
            c.seed,
        );
        let _ = writeln!(out, "base_score {:?}", self.base_score);
        let _ = writeln!(out, "learning_rate {:?}", self.learning_rate);
        let _ = writeln!(out, "features {}", self.feature_names.len());
        for name in &self.feature_names {
            let _ = writeln!(out, "{name}");
        }
        let _ = writeln!(out, "trees {}", self.trees.len());
        for (i, t) in self.trees.iter().enumerate() {
            let _ = writeln!(out, "tree {i} {}", t.nodes().len());
            for node in t.nodes() {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        gain,
                        ..
                    } => {
                        let _ = writeln!(
                            out,
                            "split {feature} {threshold:?} {gain:?} {}",
                            self.feature_names[*feature]
                        );
                    }
                    Node::Leaf { weight } => {
                        let _ = writeln!(out, "leaf {weight:?}");
                    }
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines {
            inner: text.lines().enumerate(),
            line: 0,
        };
        let header = lines.next()?;
        if header != format!("{MAGIC} {VERSION}") {
            return Err(lines.err(format!("expected header {MAGIC:?} {VERSION}, got {header:?}")));
        }
        let config_line = lines.next()?;
        let config = parse_config(config_line).map_err(|m| lines.err(m))?;
        let base_score = lines.keyed("base_score")?;
        let learning_rate = lines.keyed("learning_rate")?;
        let n_features: usize = lines.keyed("features")?;
        let mut feature_names = Vec::with_capacity(n_features);
        for _ in 0..n_features {
            feature_names.push(lines.next()?.to_string());
        }
        let n_trees: usize = lines.keyed("trees")?;
        let mut trees = Vec::with_capacity(n_trees);
        for t in 0..n_trees {
            let head = lines.next()?;
            let parts: Vec<&str> = head.split(' ').collect();
            let n_nodes: usize = match parts.as_slice() {
                ["tree", i, n] if *i == t.to_string() => {
                    n.parse().map_err(|_| lines.err(format!("bad node count {n:?}")))?
                }
                _ => return Err(lines.err(format!("expected \"tree {t} <nodes>\", got {head:?}"))),
            };
            let mut raw = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let l = lines.next()?;
                let node = parse_node(l, n_features).map_err(|m| lines.err(m))?;
                raw.push(node);
            }
            trees.push(link_preorder(raw).map_err(|m| lines.err(m))?);
        }
        if let Some((i, extra)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::ModelFormat {
                line: i + 1,
                message: format!("unexpected trailing content {extra:?}"),
            });
        }
        Ok(BoostedModel {
            trees,
            base_score,
            learning_rate,
            feature_names,
            config,
        })
    }
}

struct Lines<'a, I: Iterator<Item = (usize, &'a str)>> {
    inner: I,
    line: usize,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Lines<'a, I> {
    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(Error::ModelFormat {
                line: self.line + 1,
                message: "unexpected end of model".into(),
            }),
        }
    }

    fn keyed<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let l = self.next()?;
        l.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| self.err(format!("expected \"{key} <value>\", got {l:?}")))
    }

    fn err(&self, message: String) -> Error {
        Error::ModelFormat {
            line: self.line,
            message,
        }
    }
}

fn parse_config(line: &str) -> std::result::Result<TrainConfig, String> {
    let rest = line
        .strip_prefix("config ")
        .ok_or_else(|| format!("expected config line, got {line:?}"))?;
    let mut c = TrainConfig::default();
    fn num<T: FromStr>(k: &str, v: &str) -> std::result::Result<T, String> {
        v.parse().map_err(|_| format!("bad value {v:?} for {k}"))
    }
    for kv in rest.split(' ') {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| format!("bad config entry {kv:?}"))?;
        match k {
            "max_depth" => c.max_depth = num(k, v)?,
            "num_rounds" => c.num_rounds = num(k, v)?,
            "learning_rate" => c.learning_rate = num(k, v)?,
            "l2_leaf_reg" => c.l2_leaf_reg = num(k, v)?,
            "min_split_gain" => c.min_split_gain = num(k, v)?,
            "min_child_hessian" => c.min_child_hessian = num(k, v)?,
            "positive_class_weight" => {
                c.positive_class_weight = if v == "auto" { None } else { Some(num(k, v)?) }
            }
            "feature_top_k" => {
                c.feature_top_k = if v == "none" { None } else { Some(num(k, v)?) }
            }
            "split_method" => c.split_method = SplitMethod::from_str(v).map_err(|e| e.to_string())?,
            "max_bins" => c.max_bins = num(k, v)?,
            "row_subsample" => c.row_subsample = num(k, v)?,
            "col_subsample" => c.col_subsample = num(k, v)?,
            "seed" => c.seed = num(k, v)?,
            other => return Err(format!("unknown config key {other:?}")),
        }
    }
    Ok(c)
}

enum RawNode {
    Split(usize, f64, f64),
    Leaf(f64),
}

fn parse_node(line: &str, n_features: usize) -> std::result::Result<RawNode, String> {
    let mut parts = line.splitn(5, ' ');
    let f = |s: Option<&str>| -> std::result::Result<f64, String> {
        let s = s.ok_or("truncated node line")?;
        s.parse().map_err(|_| format!("bad number {s:?}"))
    };
    match parts.next() {
        Some("leaf") => Ok(RawNode::Leaf(f(parts.next())?)),
        Some("split") => {
            let feat = parts.next().ok_or("truncated split line")?;
            let feat: usize = feat.parse().map_err(|_| format!("bad feature index {feat:?}"))?;
            if feat >= n_features {
                return Err(format!("feature index {feat} out of range"));
            }
            Ok(RawNode::Split(feat, f(parts.next())?, f(parts.next())?))
        }
        _ => Err(format!("expected split or leaf, got {line:?}")),
    }
}

/// Recovers right-child links from a bare preorder listing.
fn link_preorder(raw: Vec<RawNode>) -> std::result::Result<Tree, String> {
    fn walk(raw: &[RawNode], i: usize, out: &mut Vec<Node>) -> std::result::Result<usize, String> {
        match raw.get(i) {
            None => Err("tree listing ends inside a subtree".into()),
            Some(&RawNode::Leaf(weight)) => {
                out.push(Node::Leaf { weight });
                Ok(i + 1)
            }
            Some(&RawNode::Split(feature, threshold, gain)) => {
                out.push(Node::Split {
                    feature,
                    threshold,
                    gain,
                    right: 0,
                });
                let right = walk(raw, i + 1, out)?;
                if let Node::Split { right: r, .. } = &mut out[i] {
                    *r = right;
                }
                walk(raw, right, out)
            }
        }
    }
    let mut nodes = Vec::with_capacity(raw.len());
    let end = walk(&raw, 0, &mut nodes)?;
    if end != raw.len() {
        return Err(format!("{} nodes after the end of the tree", raw.len() - end));
    }
    Ok(Tree { nodes })
}

pub fn save_model(model: &BoostedModel, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<BoostedModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    BoostedModel::from_text(&text)
}
