//! Greedy binary-split tree construction.
//!
//! Every feature is 0/1, so a split is fully described by its feature and
//! its children: rows with value 0 go left, rows with value 1 go right. The
//! split scan therefore needs no sorting or binning; for each candidate
//! feature it sums per-row statistics over the rows whose value is 1 and
//! obtains the left side by subtraction from the node total.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::BinaryDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Internal {
        feature: usize,
        /// Rows with feature value 0.
        left: Box<TreeNode>,
        /// Rows with feature value 1.
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
    },
}

impl TreeNode {
    pub fn leaf(value: f64) -> Self {
        TreeNode::Leaf { value }
    }

    pub fn split(feature: usize, left: TreeNode, right: TreeNode) -> Self {
        TreeNode::Internal {
            feature,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Leaf value reached by `x`. The caller guarantees `x` is wide enough.
    pub fn predict(&self, x: &[u8]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Internal {
                    feature,
                    left,
                    right,
                } => node = if x[*feature] == 0 { left } else { right },
            }
        }
    }

    /// Number of internal nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_internal(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.n_internal() + right.n_internal(),
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Internal {
                feature,
                left,
                right,
            } => Some(
                (*feature)
                    .max(left.max_feature().unwrap_or(0))
                    .max(right.max_feature().unwrap_or(0)),
            ),
        }
    }

    pub fn uses_feature(&self, f: usize) -> bool {
        match self {
            TreeNode::Leaf { .. } => false,
            TreeNode::Internal {
                feature,
                left,
                right,
            } => *feature == f || left.uses_feature(f) || right.uses_feature(f),
        }
    }
}

/// Split criterion and leaf rule.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Criterion {
    /// Weighted Gini; per-row stats are `(weight, weight * label)`, leaves
    /// hold the class-1 fraction.
    Gini,
    /// Second-order logistic; per-row stats are `(1, gradient, hessian)`,
    /// leaves hold the Newton step `-G/H` scaled by the learning rate.
    Newton { learning_rate: f64 },
}

/// Children of a gradient split must carry at least this much hessian mass;
/// leaves with near-zero curvature would take unbounded Newton steps.
const MIN_HESSIAN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    count: f64,
    s1: f64,
    s2: f64,
}

impl Stats {
    fn add(&mut self, o: &Stats) {
        self.count += o.count;
        self.s1 += o.s1;
        self.s2 += o.s2;
    }

    fn minus(&self, o: &Stats) -> Stats {
        Stats {
            count: self.count - o.count,
            s1: self.s1 - o.s1,
            s2: self.s2 - o.s2,
        }
    }
}

impl Criterion {
    /// Node score; a split's gain is `score(left) + score(right) - score(parent)`.
    fn score(&self, s: &Stats) -> f64 {
        match self {
            Criterion::Gini => {
                if s.count <= 0.0 {
                    0.0
                } else {
                    let neg = s.count - s.s1;
                    (s.s1 * s.s1 + neg * neg) / s.count
                }
            }
            Criterion::Newton { .. } => {
                if s.s2 <= 0.0 {
                    0.0
                } else {
                    s.s1 * s.s1 / s.s2
                }
            }
        }
    }

    fn leaf_value(&self, s: &Stats) -> f64 {
        match self {
            Criterion::Gini => {
                if s.count <= 0.0 {
                    0.0
                } else {
                    (s.s1 / s.count).clamp(0.0, 1.0)
                }
            }
            Criterion::Newton { learning_rate } => {
                if s.s2 <= 0.0 {
                    0.0
                } else {
                    -learning_rate * s.s1 / s.s2
                }
            }
        }
    }
}

/// Row-major cells plus a column-major copy for per-feature scans.
pub(crate) struct Prepared<'a> {
    cells: &'a [u8],
    columns: Vec<u8>,
    n_rows: usize,
    width: usize,
}

impl<'a> Prepared<'a> {
    pub fn new(data: &'a BinaryDataset) -> Self {
        let n_rows = data.n_rows();
        let width = data.n_features();
        let cells = data.cells();
        let mut columns = vec![0u8; cells.len()];
        for r in 0..n_rows {
            for f in 0..width {
                columns[f * n_rows + r] = cells[r * width + f];
            }
        }
        Prepared {
            cells,
            columns,
            n_rows,
            width,
        }
    }

    fn column(&self, f: usize) -> &[u8] {
        &self.columns[f * self.n_rows..(f + 1) * self.n_rows]
    }

    fn row(&self, r: usize) -> &[u8] {
        &self.cells[r * self.width..(r + 1) * self.width]
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }
}

pub(crate) struct TreeParams {
    pub criterion: Criterion,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Candidate features per split; `None` scans all of them.
    pub max_features: Option<usize>,
}

/// Per-row statistics feeding the criterion.
pub(crate) enum RowTargets<'a> {
    /// Bootstrap multiplicities (or any non-negative weights) with labels.
    Weighted { weights: &'a [f64], labels: &'a [u8] },
    Gradients { grad: &'a [f64], hess: &'a [f64] },
}

struct Builder<'a, 'b> {
    data: &'b Prepared<'a>,
    stats: Vec<Stats>,
    params: &'b TreeParams,
    rng: Option<&'b mut ChaCha8Rng>,
    feature_order: Vec<usize>,
}

const GAIN_EPS: f64 = 1e-10;

pub(crate) fn build_tree(
    data: &Prepared<'_>,
    targets: RowTargets<'_>,
    params: &TreeParams,
    rng: Option<&mut ChaCha8Rng>,
) -> TreeNode {
    let stats: Vec<Stats> = match targets {
        RowTargets::Weighted { weights, labels } => weights
            .iter()
            .zip(labels)
            .map(|(&w, &y)| Stats {
                count: w,
                s1: w * f64::from(y),
                s2: 0.0,
            })
            .collect(),
        RowTargets::Gradients { grad, hess } => grad
            .iter()
            .zip(hess)
            .map(|(&g, &h)| Stats {
                count: 1.0,
                s1: g,
                s2: h,
            })
            .collect(),
    };
    let mut rows: Vec<u32> = (0..data.n_rows() as u32)
        .filter(|&r| stats[r as usize].count > 0.0)
        .collect();
    let mut builder = Builder {
        data,
        stats,
        params,
        rng,
        feature_order: (0..data.width()).collect(),
    };
    builder.grow(&mut rows, 0)
}

impl Builder<'_, '_> {
    fn total(&self, rows: &[u32]) -> Stats {
        let mut t = Stats::default();
        for &r in rows {
            t.add(&self.stats[r as usize]);
        }
        t
    }

    fn right_stats(&self, rows: &[u32], f: usize) -> Stats {
        let col = self.data.column(f);
        let mut s = Stats::default();
        for &r in rows {
            if col[r as usize] == 1 {
                s.add(&self.stats[r as usize]);
            }
        }
        s
    }

    /// All-feature scan in row-major order.
    fn right_stats_all(&self, rows: &[u32]) -> Vec<Stats> {
        let width = self.data.width();
        let mut count = vec![0.0; width];
        let mut s1 = vec![0.0; width];
        let mut s2 = vec![0.0; width];
        for &r in rows {
            let st = &self.stats[r as usize];
            let row = self.data.row(r as usize);
            for f in 0..width {
                let b = f64::from(row[f]);
                count[f] += b * st.count;
                s1[f] += b * st.s1;
                s2[f] += b * st.s2;
            }
        }
        (0..width)
            .map(|f| Stats {
                count: count[f],
                s1: s1[f],
                s2: s2[f],
            })
            .collect()
    }

    fn gain(&self, parent: &Stats, right: &Stats) -> Option<f64> {
        let left = parent.minus(right);
        let min_leaf = self.params.min_samples_leaf as f64;
        if left.count < min_leaf.max(f64::MIN_POSITIVE) || right.count < min_leaf.max(f64::MIN_POSITIVE) {
            return None;
        }
        let c = &self.params.criterion;
        if matches!(c, Criterion::Newton { .. }) && (left.s2 < MIN_HESSIAN || right.s2 < MIN_HESSIAN) {
            return None;
        }
        let gain = c.score(&left) + c.score(right) - c.score(parent);
        (gain > GAIN_EPS * parent.count.max(1.0)).then_some(gain)
    }

    fn best_split(&mut self, rows: &[u32], parent: &Stats) -> Option<usize> {
        let width = self.data.width();
        let mut best: Option<(usize, f64)> = None;
        let mut consider = |f: usize, g: Option<f64>| {
            if let Some(g) = g {
                if best.is_none_or(|(_, bg)| g > bg) {
                    best = Some((f, g));
                }
            }
        };
        let mut rng_slot = self.rng.take();
        match (self.params.max_features, rng_slot.as_deref_mut()) {
            (Some(m), Some(rng)) if m < width => {
                // Visit features in random order until `m` features that are
                // not constant within this node have been evaluated.
                let mut visited = 0;
                let mut evaluated = 0;
                while visited < width && evaluated < m {
                    let j = rng.gen_range(visited..width);
                    self.feature_order.swap(visited, j);
                    let f = self.feature_order[visited];
                    visited += 1;
                    let right = self.right_stats(rows, f);
                    if right.count <= 0.0 || right.count >= parent.count {
                        continue;
                    }
                    evaluated += 1;
                    let g = self.gain(parent, &right);
                    consider(f, g);
                }
            }
            _ => {
                let all = self.right_stats_all(rows);
                for (f, right) in all.iter().enumerate() {
                    let g = self.gain(parent, right);
                    consider(f, g);
                }
            }
        }
        self.rng = rng_slot;
        best.map(|(f, _)| f)
    }

    fn grow(&mut self, rows: &mut [u32], depth: usize) -> TreeNode {
        let parent = self.total(rows);
        let leaf = TreeNode::leaf(self.params.criterion.leaf_value(&parent));
        if self.params.max_depth.is_some_and(|d| depth >= d) {
            return leaf;
        }
        let Some(feature) = self.best_split(rows, &parent) else {
            return leaf;
        };
        let col = self.data.column(feature);
        let mut boundary = 0;
        for i in 0..rows.len() {
            if col[rows[i] as usize] == 0 {
                rows.swap(i, boundary);
                boundary += 1;
            }
        }
        let (l, r) = rows.split_at_mut(boundary);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        TreeNode::split(feature, left, right)
    }
}
