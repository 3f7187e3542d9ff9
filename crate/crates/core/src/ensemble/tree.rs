//! Exact squared-error CART, grown level by level over presorted columns.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Weighted SSE decrease achieved by the split.
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

/// A regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Tree {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.predict_with(|j| row[j])
    }

    pub(crate) fn predict_with(&self, value: impl Fn(usize) -> f64) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => k = if value(*feature) <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }
}

pub(crate) struct GrowConfig {
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: usize,
}

/// Column-major copy of the training features with each column's row order
/// sorted by value (ties by row index).
pub(crate) struct TrainingData {
    cols: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
}

const NONE: u32 = u32::MAX;
/// Gains within this relative distance count as tied, so rounding noise
/// cannot override the lower-feature, lower-threshold preference.
pub const TIE_RTOL: f64 = 1e-12;

struct Open {
    id: usize,
    depth: usize,
    count: f64,
    mean: f64,
    sse: f64,
    features: Vec<bool>,
    // scan state
    left_count: f64,
    left_sum: f64,
    last: f64,
    best_gain: f64,
    best: Option<(usize, f64)>,
}

impl TrainingData {
    pub fn new(x: &Matrix) -> Self {
        let cols: Vec<Vec<f64>> = (0..x.n_cols()).map(|j| x.column(j)).collect();
        let order = cols
            .iter()
            .map(|c| {
                let mut o: Vec<u32> = (0..c.len() as u32).collect();
                o.sort_by(|&a, &b| c[a as usize].total_cmp(&c[b as usize]).then(a.cmp(&b)));
                o
            })
            .collect();
        TrainingData { cols, order }
    }

    pub fn value(&self, feature: usize, row: usize) -> f64 {
        self.cols[feature][row]
    }

    /// Grows one tree on the rows with nonzero `weights` (a weight counts
    /// repeated draws). Candidate thresholds are midpoints of consecutive
    /// distinct values; ties in gain keep the lower feature index, then the
    /// lower threshold.
    pub fn grow<R: Rng>(&self, y: &[f64], weights: &[u32], cfg: &GrowConfig, rng: &mut R) -> Tree {
        let n = y.len();
        let nf = self.cols.len();
        let msl = cfg.min_samples_leaf as f64;
        let mut node_of = vec![NONE; n];
        let (mut count, mut sum) = (0.0, 0.0);
        for i in 0..n {
            if weights[i] > 0 {
                node_of[i] = 0;
                count += weights[i] as f64;
                sum += weights[i] as f64 * y[i];
            }
        }
        if count == 0.0 {
            return Tree::leaf(0.0);
        }
        let mean = sum / count;
        let sse: f64 = (0..n)
            .filter(|&i| weights[i] > 0)
            .map(|i| weights[i] as f64 * (y[i] - mean).powi(2))
            .sum();
        let mut nodes = vec![Node::Leaf { value: mean }];
        let can_split = |depth: usize, count: f64, sse: f64| {
            cfg.max_depth.is_none_or(|d| depth < d) && count >= 2.0 * msl && sse > 0.0
        };
        let mut open: Vec<Open> = Vec::new();
        if can_split(0, count, sse) {
            open.push(Open::new(0, 0, count, mean, sse));
        }
        let mut slot: Vec<u32> = vec![NONE];

        while !open.is_empty() {
            slot.resize(nodes.len(), NONE);
            slot.fill(NONE);
            for (s, o) in open.iter_mut().enumerate() {
                slot[o.id] = s as u32;
                if cfg.max_features >= nf {
                    o.features = vec![true; nf];
                } else {
                    o.features = vec![false; nf];
                    for f in sample(rng, nf, cfg.max_features) {
                        o.features[f] = true;
                    }
                }
            }
            for f in 0..nf {
                for o in open.iter_mut() {
                    o.left_count = 0.0;
                    o.left_sum = 0.0;
                }
                let col = &self.cols[f];
                for &i in &self.order[f] {
                    let i = i as usize;
                    let w = weights[i];
                    if w == 0 {
                        continue;
                    }
                    let nd = node_of[i];
                    if nd == NONE {
                        continue;
                    }
                    let s = slot[nd as usize];
                    if s == NONE {
                        continue;
                    }
                    let o = &mut open[s as usize];
                    if !o.features[f] {
                        continue;
                    }
                    let v = col[i];
                    if o.left_count > 0.0 && v > o.last {
                        let nl = o.left_count;
                        let nr = o.count - nl;
                        if nl >= msl && nr >= msl {
                            // sums are centered at the node mean, so the
                            // right sum is the negated left sum
                            let gain = o.left_sum * o.left_sum * (1.0 / nl + 1.0 / nr);
                            if gain > o.best_gain * (1.0 + TIE_RTOL) {
                                let mut thr = 0.5 * (o.last + v);
                                if thr >= v {
                                    thr = o.last;
                                }
                                o.best_gain = gain;
                                o.best = Some((f, thr));
                            }
                        }
                    }
                    o.left_count += w as f64;
                    o.left_sum += w as f64 * (y[i] - o.mean);
                    o.last = v;
                }
            }

            // materialize splits
            let mut children: Vec<Option<(usize, usize)>> = vec![None; open.len()];
            for (s, o) in open.iter().enumerate() {
                if let Some((feature, threshold)) = o.best {
                    if o.best_gain > 1e-12 * o.sse {
                        let left = nodes.len();
                        nodes.push(Node::Leaf { value: 0.0 });
                        nodes.push(Node::Leaf { value: 0.0 });
                        nodes[o.id] = Node::Split {
                            feature,
                            threshold,
                            left,
                            right: left + 1,
                            gain: o.best_gain,
                        };
                        children[s] = Some((left, left + 1));
                    }
                }
            }
            let total = nodes.len();
            let mut c_count = vec![0.0; total];
            let mut c_sum = vec![0.0; total];
            for i in 0..n {
                let nd = node_of[i];
                if nd == NONE {
                    continue;
                }
                let s = slot[nd as usize];
                if s == NONE {
                    node_of[i] = NONE;
                    continue;
                }
                match (children[s as usize], open[s as usize].best) {
                    (Some((l, r)), Some((f, thr))) => {
                        let c = if self.cols[f][i] <= thr { l } else { r };
                        node_of[i] = c as u32;
                        c_count[c] += weights[i] as f64;
                        c_sum[c] += weights[i] as f64 * y[i];
                    }
                    _ => node_of[i] = NONE,
                }
            }
            let mut c_sse = vec![0.0; total];
            for i in 0..n {
                let nd = node_of[i];
                if nd != NONE {
                    let c = nd as usize;
                    let m = c_sum[c] / c_count[c];
                    c_sse[c] += weights[i] as f64 * (y[i] - m).powi(2);
                }
            }
            let mut next = Vec::new();
            for (s, o) in open.iter().enumerate() {
                if let Some((l, r)) = children[s] {
                    for c in [l, r] {
                        let m = c_sum[c] / c_count[c];
                        nodes[c] = Node::Leaf { value: m };
                        if can_split(o.depth + 1, c_count[c], c_sse[c]) {
                            next.push(Open::new(c, o.depth + 1, c_count[c], m, c_sse[c]));
                        }
                    }
                }
            }
            // rows in children that will not split further stop here
            if next.len() < 2 * children.iter().flatten().count() {
                let mut keep = vec![false; nodes.len()];
                for o in &next {
                    keep[o.id] = true;
                }
                for nd in node_of.iter_mut() {
                    if *nd != NONE && !keep[*nd as usize] {
                        *nd = NONE;
                    }
                }
            }
            open = next;
        }
        Tree { nodes }
    }
}

impl Open {
    fn new(id: usize, depth: usize, count: f64, mean: f64, sse: f64) -> Self {
        Open {
            id,
            depth,
            count,
            mean,
            sse,
            features: Vec::new(),
            left_count: 0.0,
            left_sum: 0.0,
            last: f64::NEG_INFINITY,
            best_gain: 0.0,
            best: None,
        }
    }
}
