//! Level-wise tree growth.
//!
//! Both search methods keep the rows of every open node in one contiguous
//! segment. Exact search keeps, per feature, the node segments sorted by
//! value and splits them with a stable partition, so every scan is a
//! sequential pass. Histogram search keeps one row list and builds the
//! histogram of the smaller child only; the larger child's histogram is the
//! parent's minus the sibling's.

use std::ops::Range;

use rayon::prelude::*;

use super::{Node, SplitMethod, Tree, TrainConfig};

/// Training matrix prepared once per model.
pub(crate) struct Dataset {
    pub n_rows: usize,
    pub cols: Vec<Vec<f64>>,
    /// Exact search: each column's rows in ascending value order, the sorted
    /// values, and each row's position in that order.
    sorted: Vec<Vec<u32>>,
    sorted_vals: Vec<Vec<f64>>,
    rank: Vec<Vec<u32>>,
    /// Histogram search: row-major bin codes and per-column cut points.
    codes: Vec<u8>,
    cuts: Vec<Vec<f64>>,
    bin_offsets: Vec<usize>,
}

impl Dataset {
    pub fn new(cols: Vec<Vec<f64>>, method: SplitMethod, max_bins: usize) -> Self {
        let n_rows = cols.first().map_or(0, Vec::len);
        let m = cols.len();
        let mut ds = Dataset {
            n_rows,
            cols,
            sorted: Vec::new(),
            sorted_vals: Vec::new(),
            rank: Vec::new(),
            codes: Vec::new(),
            cuts: Vec::new(),
            bin_offsets: Vec::new(),
        };
        match method {
            SplitMethod::Exact => {
                ds.sorted = ds
                    .cols
                    .par_iter()
                    .map(|c| {
                        let mut rows: Vec<u32> = (0..c.len() as u32).collect();
                        rows.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]));
                        rows
                    })
                    .collect();
                ds.sorted_vals = ds
                    .sorted
                    .par_iter()
                    .zip(&ds.cols)
                    .map(|(rows, c)| rows.iter().map(|&r| c[r as usize]).collect())
                    .collect();
                ds.rank = ds
                    .sorted
                    .par_iter()
                    .map(|rows| {
                        let mut rank = vec![0u32; rows.len()];
                        for (p, &r) in rows.iter().enumerate() {
                            rank[r as usize] = p as u32;
                        }
                        rank
                    })
                    .collect();
            }
            SplitMethod::Histogram => {
                ds.cuts = ds.cols.par_iter().map(|c| cut_points(c, max_bins)).collect();
                let mut codes = vec![0u8; n_rows * m];
                for (f, (col, cuts)) in ds.cols.iter().zip(&ds.cuts).enumerate() {
                    for (r, &v) in col.iter().enumerate() {
                        codes[r * m + f] = cuts.partition_point(|&c| c <= v) as u8;
                    }
                }
                ds.codes = codes;
                let mut off = 0;
                for c in &ds.cuts {
                    ds.bin_offsets.push(off);
                    off += c.len() + 1;
                }
                ds.bin_offsets.push(off);
            }
        }
        ds
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }
}

/// Midpoint between two adjacent distinct values, nudged so that `a` goes
/// left and `b` goes right under the `value < threshold` rule.
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let mid = a + (b - a) / 2.0;
    if mid > a && mid <= b {
        mid
    } else {
        b
    }
}

/// Equal-frequency cut points. Columns with few distinct values get one cut
/// between every adjacent pair, which makes the search identical to exact.
fn cut_points(col: &[f64], max_bins: usize) -> Vec<f64> {
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut uniq = sorted.clone();
    uniq.dedup();
    if uniq.len() <= max_bins {
        return uniq.windows(2).map(|w| midpoint(w[0], w[1])).collect();
    }
    let n = sorted.len();
    let mut cuts: Vec<f64> = Vec::with_capacity(max_bins - 1);
    for i in 1..max_bins {
        let v = sorted[i * n / max_bins - 1];
        let next = match uniq.binary_search_by(|u| u.total_cmp(&v)) {
            Ok(p) if p + 1 < uniq.len() => uniq[p + 1],
            _ => continue,
        };
        let cut = midpoint(v, next);
        if cuts.last().is_none_or(|&c| cut > c) {
            cuts.push(cut);
        }
    }
    cuts
}

pub(crate) fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom > 0.0 {
        -g / denom
    } else {
        0.0
    }
}

fn split_gain(gl: f64, hl: f64, g: f64, h: f64, lambda: f64, gamma: f64) -> f64 {
    let (gr, hr) = (g - gl, h - hl);
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda)) - gamma
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    gain: f64,
    threshold: f64,
}

/// Tracks the best split of one node during a scan. Candidates are compared
/// on GL^2/(HL+l) + GR^2/(HR+l) held as a fraction, so the inner loop needs
/// no division; the gain is computed once for the winner.
struct Best {
    g: f64,
    h: f64,
    lambda: f64,
    gamma: f64,
    mch: f64,
    num: f64,
    den: f64,
    at: Option<(f64, f64, f64)>,
}

impl Best {
    fn new(total: [f64; 2], cfg: &TrainConfig) -> Self {
        let [g, h] = total;
        let lambda = cfg.l2_leaf_reg;
        Best {
            g,
            h,
            lambda,
            gamma: cfg.min_split_gain,
            mch: cfg.min_child_hessian,
            num: g * g / (h + lambda) + 2.0 * cfg.min_split_gain,
            den: 1.0,
            at: None,
        }
    }

    #[inline(always)]
    fn offer(&mut self, gl: f64, hl: f64, threshold: impl FnOnce() -> f64) {
        let hr = self.h - hl;
        if hl < self.mch || hr < self.mch {
            return;
        }
        let (a, b) = (hl + self.lambda, hr + self.lambda);
        let gr = self.g - gl;
        let num = gl * gl * b + gr * gr * a;
        let den = a * b;
        if num * self.den > self.num * den {
            self.num = num;
            self.den = den;
            self.at = Some((gl, hl, threshold()));
        }
    }

    fn finish(self) -> Option<Candidate> {
        let (gl, hl, threshold) = self.at?;
        let gain = split_gain(gl, hl, self.g, self.h, self.lambda, self.gamma);
        (gain > 0.0).then_some(Candidate { gain, threshold })
    }
}

struct Open {
    arena: usize,
    g: f64,
    h: f64,
    seg: Range<usize>,
}

enum Draft {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        left: usize,
        right: usize,
    },
}

/// Per-feature sorted segments for exact search, double-buffered.
#[derive(Default)]
struct ExactColumn {
    rows: Vec<u32>,
    vals: Vec<f64>,
    gh: Vec<[f64; 2]>,
    next_rows: Vec<u32>,
    next_vals: Vec<f64>,
    next_gh: Vec<[f64; 2]>,
}

/// Reusable working memory for growing the trees of one model.
pub(crate) struct Grower<'a> {
    ds: &'a Dataset,
    cfg: &'a TrainConfig,
    exact: Vec<ExactColumn>,
    goes_left: Vec<bool>,
    /// Leaf weight reached by each active row in the last grown tree.
    pub leaf_value: Vec<f64>,
}

impl<'a> Grower<'a> {
    pub fn new(ds: &'a Dataset, cfg: &'a TrainConfig) -> Self {
        let exact = match cfg.split_method {
            SplitMethod::Exact => (0..ds.n_cols()).map(|_| ExactColumn::default()).collect(),
            SplitMethod::Histogram => Vec::new(),
        };
        Grower {
            ds,
            cfg,
            exact,
            goes_left: vec![false; ds.n_rows],
            leaf_value: vec![0.0; ds.n_rows],
        }
    }

    /// Grows one tree on gradient pairs `gh`. Rows with `active[r] == false`
    /// are left out; only `features` (ascending) are searched.
    pub fn grow(&mut self, gh: &[[f64; 2]], active: &[bool], features: &[usize]) -> Tree {
        match self.cfg.split_method {
            SplitMethod::Exact => self.grow_exact(gh, active, features),
            SplitMethod::Histogram => self.grow_hist(gh, active, features),
        }
    }

    fn grow_exact(&mut self, gh: &[[f64; 2]], active: &[bool], features: &[usize]) -> Tree {
        let ds = self.ds;
        let cfg = self.cfg;
        let all_active = active.iter().all(|&a| a);
        self.exact
            .par_iter_mut()
            .enumerate()
            .filter(|(f, _)| features.binary_search(f).is_ok())
            .for_each(|(f, col)| {
                col.rows.clear();
                col.vals.clear();
                col.gh.clear();
                if all_active {
                    col.rows.extend_from_slice(&ds.sorted[f]);
                    col.vals.extend_from_slice(&ds.sorted_vals[f]);
                    // Scattering through the rank table writes in row order,
                    // which is much cheaper than gathering in sorted order.
                    col.gh.resize(ds.n_rows, [0.0; 2]);
                    for (&p, &pair) in ds.rank[f].iter().zip(gh) {
                        col.gh[p as usize] = pair;
                    }
                } else {
                    for (&r, &v) in ds.sorted[f].iter().zip(&ds.sorted_vals[f]) {
                        if active[r as usize] {
                            col.rows.push(r);
                            col.vals.push(v);
                            col.gh.push(gh[r as usize]);
                        }
                    }
                }
                col.next_rows.resize(col.rows.len(), 0);
                col.next_vals.resize(col.rows.len(), 0.0);
                col.next_gh.resize(col.rows.len(), [0.0; 2]);
            });
        let n_active = active.iter().filter(|&&a| a).count();
        let (g0, h0) = sum_active(gh, active);
        let mut arena = vec![Draft::Leaf(0.0)];
        let mut frontier = vec![Open {
            arena: 0,
            g: g0,
            h: h0,
            seg: 0..n_active,
        }];

        for _depth in 0..cfg.max_depth {
            if frontier.is_empty() {
                break;
            }
            let per_feature: Vec<Vec<Option<Candidate>>> = features
                .par_iter()
                .map(|&f| {
                    let col = &self.exact[f];
                    frontier
                        .iter()
                        .map(|o| {
                            scan_sorted(
                                &col.vals[o.seg.clone()],
                                &col.gh[o.seg.clone()],
                                [o.g, o.h],
                                cfg,
                            )
                        })
                        .collect()
                })
                .collect();
            let choices = choose(&per_feature, features, frontier.len());

            // Route rows through the chosen splits. Along the split feature
            // the left child is a prefix of the node's segment.
            let mut next = Vec::new();
            let mut plan: Vec<Option<(Range<usize>, usize, Range<usize>, Range<usize>)>> =
                Vec::with_capacity(frontier.len());
            let mut cursor = 0;
            for (o, choice) in frontier.iter().zip(&choices) {
                let Some((feature, c)) = *choice else {
                    let w = leaf_weight(o.g, o.h, cfg.l2_leaf_reg);
                    arena[o.arena] = Draft::Leaf(w);
                    settle(&mut self.leaf_value, &self.exact[features[0]].rows[o.seg.clone()], w);
                    plan.push(None);
                    continue;
                };
                let col = &self.exact[feature];
                let rows = &col.rows[o.seg.clone()];
                let vals = &col.vals[o.seg.clone()];
                let ghs = &col.gh[o.seg.clone()];
                let n_left = vals.partition_point(|&v| v < c.threshold);
                let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
                for (i, (&r, &[g, h])) in rows.iter().zip(ghs).enumerate() {
                    let left = i < n_left;
                    self.goes_left[r as usize] = left;
                    if left {
                        gl += g;
                        hl += h;
                    } else {
                        gr += g;
                        hr += h;
                    }
                }
                let left_seg = cursor..cursor + n_left;
                let right_seg = cursor + n_left..cursor + rows.len();
                cursor += rows.len();
                let left = arena.len();
                arena.push(Draft::Leaf(0.0));
                arena.push(Draft::Leaf(0.0));
                arena[o.arena] = Draft::Split {
                    feature,
                    threshold: c.threshold,
                    gain: c.gain,
                    left,
                    right: left + 1,
                };
                next.push(Open {
                    arena: left,
                    g: gl,
                    h: hl,
                    seg: left_seg.clone(),
                });
                next.push(Open {
                    arena: left + 1,
                    g: gr,
                    h: hr,
                    seg: right_seg.clone(),
                });
                plan.push(Some((o.seg.clone(), n_left, left_seg, right_seg)));
            }
            if next.is_empty() {
                frontier.clear();
                break;
            }
            let goes_left = &self.goes_left;
            self.exact
                .par_iter_mut()
                .enumerate()
                .filter(|(f, _)| features.binary_search(f).is_ok())
                .for_each(|(_, col)| {
                    for (old, _, left, right) in plan.iter().flatten() {
                        let (mut li, mut ri) = (left.start, right.start);
                        for p in old.clone() {
                            let r = col.rows[p];
                            let dst = if goes_left[r as usize] {
                                li += 1;
                                li - 1
                            } else {
                                ri += 1;
                                ri - 1
                            };
                            col.next_rows[dst] = r;
                            col.next_vals[dst] = col.vals[p];
                            col.next_gh[dst] = col.gh[p];
                        }
                        debug_assert!(li == left.end && ri == right.end);
                    }
                    std::mem::swap(&mut col.rows, &mut col.next_rows);
                    std::mem::swap(&mut col.vals, &mut col.next_vals);
                    std::mem::swap(&mut col.gh, &mut col.next_gh);
                });
            frontier = next;
        }
        for o in &frontier {
            let w = leaf_weight(o.g, o.h, cfg.l2_leaf_reg);
            arena[o.arena] = Draft::Leaf(w);
            settle(&mut self.leaf_value, &self.exact[features[0]].rows[o.seg.clone()], w);
        }
        to_preorder(&arena)
    }

    fn grow_hist(&mut self, gh: &[[f64; 2]], active: &[bool], features: &[usize]) -> Tree {
        let ds = self.ds;
        let cfg = self.cfg;
        let mut order: Vec<u32> = (0..ds.n_rows as u32).filter(|&r| active[r as usize]).collect();
        let (g0, h0) = sum_active(gh, active);
        let mut arena = vec![Draft::Leaf(0.0)];
        let mut frontier = vec![Open {
            arena: 0,
            g: g0,
            h: h0,
            seg: 0..order.len(),
        }];
        let mut hists = vec![build_hist(ds, &order, gh, features)];

        for _depth in 0..cfg.max_depth {
            if frontier.is_empty() {
                break;
            }
            let per_node: Vec<Vec<Option<Candidate>>> = frontier
                .par_iter()
                .zip(&hists)
                .map(|(o, hist)| {
                    features
                        .iter()
                        .map(|&f| scan_hist(ds, hist, f, [o.g, o.h], cfg))
                        .collect()
                })
                .collect();
            // Transpose to feature-major for the shared chooser.
            let per_feature: Vec<Vec<Option<Candidate>>> = (0..features.len())
                .map(|fi| per_node.iter().map(|c| c[fi]).collect())
                .collect();
            let choices = choose(&per_feature, features, frontier.len());

            let mut next = Vec::new();
            // (parent slot, left child slot, build left directly?)
            let mut builds = Vec::new();
            for (s, (o, choice)) in frontier.iter().zip(&choices).enumerate() {
                let Some((feature, c)) = *choice else {
                    let w = leaf_weight(o.g, o.h, cfg.l2_leaf_reg);
                    arena[o.arena] = Draft::Leaf(w);
                    settle(&mut self.leaf_value, &order[o.seg.clone()], w);
                    continue;
                };
                let seg = &mut order[o.seg.clone()];
                let col = &ds.cols[feature];
                let mut left: Vec<u32> = Vec::new();
                let mut right: Vec<u32> = Vec::new();
                for &r in seg.iter() {
                    if col[r as usize] < c.threshold {
                        left.push(r);
                    } else {
                        right.push(r);
                    }
                }
                let sum = |rows: &[u32]| {
                    rows.iter().fold((0.0, 0.0), |(g, h), &r| {
                        (g + gh[r as usize][0], h + gh[r as usize][1])
                    })
                };
                let (gl, hl) = sum(&left);
                let (gr, hr) = sum(&right);
                let n_left = left.len();
                seg[..n_left].copy_from_slice(&left);
                seg[n_left..].copy_from_slice(&right);
                let at = arena.len();
                arena.push(Draft::Leaf(0.0));
                arena.push(Draft::Leaf(0.0));
                arena[o.arena] = Draft::Split {
                    feature,
                    threshold: c.threshold,
                    gain: c.gain,
                    left: at,
                    right: at + 1,
                };
                let mid = o.seg.start + n_left;
                builds.push((s, next.len(), n_left <= right.len()));
                next.push(Open {
                    arena: at,
                    g: gl,
                    h: hl,
                    seg: o.seg.start..mid,
                });
                next.push(Open {
                    arena: at + 1,
                    g: gr,
                    h: hr,
                    seg: mid..o.seg.end,
                });
            }
            let small: Vec<Vec<[f64; 3]>> = builds
                .par_iter()
                .map(|&(_, child, left_smaller)| {
                    let c = if left_smaller { child } else { child + 1 };
                    build_hist(ds, &order[next[c].seg.clone()], gh, features)
                })
                .collect();
            let mut next_hists = Vec::with_capacity(next.len());
            for ((parent, _, left_smaller), small) in builds.into_iter().zip(small) {
                let large: Vec<[f64; 3]> = hists[parent]
                    .iter()
                    .zip(&small)
                    .map(|(p, s)| [p[0] - s[0], p[1] - s[1], p[2] - s[2]])
                    .collect();
                if left_smaller {
                    next_hists.push(small);
                    next_hists.push(large);
                } else {
                    next_hists.push(large);
                    next_hists.push(small);
                }
            }
            frontier = next;
            hists = next_hists;
        }
        for o in &frontier {
            let w = leaf_weight(o.g, o.h, cfg.l2_leaf_reg);
            arena[o.arena] = Draft::Leaf(w);
            settle(&mut self.leaf_value, &order[o.seg.clone()], w);
        }
        to_preorder(&arena)
    }
}

fn settle(leaf_value: &mut [f64], rows: &[u32], w: f64) {
    for &r in rows {
        leaf_value[r as usize] = w;
    }
}

fn sum_active(gh: &[[f64; 2]], active: &[bool]) -> (f64, f64) {
    let (mut g, mut h) = (0.0, 0.0);
    for (p, &a) in gh.iter().zip(active) {
        if a {
            g += p[0];
            h += p[1];
        }
    }
    (g, h)
}

/// Best candidate per node: highest gain, ties to the lowest feature index
/// (features are ascending and only a strictly better gain replaces).
fn choose(
    per_feature: &[Vec<Option<Candidate>>],
    features: &[usize],
    n_nodes: usize,
) -> Vec<Option<(usize, Candidate)>> {
    (0..n_nodes)
        .map(|s| {
            let mut best: Option<(usize, Candidate)> = None;
            for (fi, cands) in per_feature.iter().enumerate() {
                if let Some(c) = cands[s] {
                    if best.is_none_or(|(_, b)| c.gain > b.gain) {
                        best = Some((features[fi], c));
                    }
                }
            }
            best
        })
        .collect()
}

/// Scans one node's rows in ascending value order; every boundary between
/// distinct values is a candidate, and the first best one wins.
fn scan_sorted(
    vals: &[f64],
    ghs: &[[f64; 2]],
    total: [f64; 2],
    cfg: &TrainConfig,
) -> Option<Candidate> {
    let mut best = Best::new(total, cfg);
    let (Some(&first), Some(&last)) = (vals.first(), vals.last()) else {
        return None;
    };
    if first == last {
        return None;
    }
    let (mut gl, mut hl) = (0.0, 0.0);
    let mut prev = first;
    for (&v, &[g, h]) in vals.iter().zip(ghs) {
        if v > prev {
            best.offer(gl, hl, || midpoint(prev, v));
        }
        gl += g;
        hl += h;
        prev = v;
    }
    best.finish()
}

fn build_hist(ds: &Dataset, rows: &[u32], gh: &[[f64; 2]], features: &[usize]) -> Vec<[f64; 3]> {
    let m = ds.n_cols();
    let mut hist = vec![[0.0f64; 3]; ds.bin_offsets[m]];
    let offsets: Vec<usize> = features.iter().map(|&f| ds.bin_offsets[f]).collect();
    for &r in rows {
        let r = r as usize;
        let [g, h] = gh[r];
        let codes = &ds.codes[r * m..(r + 1) * m];
        for (&f, &off) in features.iter().zip(&offsets) {
            let cell = &mut hist[off + codes[f] as usize];
            cell[0] += g;
            cell[1] += h;
            cell[2] += 1.0;
        }
    }
    hist
}

fn scan_hist(
    ds: &Dataset,
    hist: &[[f64; 3]],
    f: usize,
    total: [f64; 2],
    cfg: &TrainConfig,
) -> Option<Candidate> {
    let cuts = &ds.cuts[f];
    let cells = &hist[ds.bin_offsets[f]..ds.bin_offsets[f + 1]];
    let count: f64 = cells.iter().map(|c| c[2]).sum();
    let mut best = Best::new(total, cfg);
    let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0.0);
    for (b, cell) in cells[..cells.len() - 1].iter().enumerate() {
        gl += cell[0];
        hl += cell[1];
        nl += cell[2];
        // An empty bin repeats the previous partition; skipping it keeps the
        // lowest threshold.
        if cell[2] == 0.0 || nl == 0.0 || nl == count {
            continue;
        }
        best.offer(gl, hl, || cuts[b]);
    }
    best.finish()
}

fn to_preorder(arena: &[Draft]) -> Tree {
    fn visit(arena: &[Draft], i: usize, out: &mut Vec<Node>) -> usize {
        let at = out.len();
        match arena[i] {
            Draft::Leaf(weight) => out.push(Node::Leaf { weight }),
            Draft::Split {
                feature,
                threshold,
                gain,
                left,
                right,
            } => {
                out.push(Node::Split {
                    feature,
                    threshold,
                    gain,
                    right: 0,
                });
                visit(arena, left, out);
                let r = visit(arena, right, out);
                if let Node::Split { right, .. } = &mut out[at] {
                    *right = r;
                }
            }
        }
        at
    }
    let mut nodes = Vec::with_capacity(arena.len());
    visit(arena, 0, &mut nodes);
    Tree { nodes }
}
