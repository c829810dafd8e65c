//! CART regression tree on weighted squared error.
//!
//! Split candidates are midpoints between consecutive distinct sorted values
//! of each column; ties in risk reduction break toward the lowest column
//! index, then the smallest threshold, so fits are reproducible across
//! platforms. Rows are sorted by (value, subject index) before scanning,
//! which pins the order of tied values.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::RegressionProblem;

#[derive(Debug, Clone)]
enum Node<F> {
    Leaf { value: F },
    Split { col: usize, threshold: F, left: usize, right: usize },
}

/// Fitted regression tree. Prediction routes by `x[col] <= threshold` and is
/// total on all finite inputs.
#[derive(Debug, Clone)]
pub struct TreeModel<F> {
    nodes: Vec<Node<F>>,
    root: usize,
}

impl<F: Scalar> TreeModel<F> {
    pub fn predict(&self, row: &[F]) -> F {
        let mut at = self.root;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split { col, threshold, left, right } => {
                    at = if row[*col] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// The root split `(column, threshold)`, or None for a stump.
    pub fn root_split(&self) -> Option<(usize, F)> {
        match &self.nodes[self.root] {
            Node::Leaf { .. } => None,
            Node::Split { col, threshold, .. } => Some((*col, *threshold)),
        }
    }
}

struct Grower<'a, F, C> {
    features: &'a [F],
    p: usize,
    z: &'a [F],
    w: &'a [F],
    max_depth: usize,
    min_leaf_weight: F,
    choose_columns: C,
    nodes: Vec<Node<F>>,
}

struct BestSplit<F> {
    reduction: F,
    col: usize,
    threshold: F,
}

impl<'a, F: Scalar, C: FnMut() -> Vec<usize>> Grower<'a, F, C> {
    /// Weighted (sum w, sum wz, sum wz²) over the items.
    fn sums(&self, items: &[usize]) -> (F, F, F) {
        let mut sw = F::zero();
        let mut swz = F::zero();
        let mut swzz = F::zero();
        for &i in items {
            let wi = self.w[i];
            let zi = self.z[i];
            sw += wi;
            swz += wi * zi;
            swzz += wi * zi * zi;
        }
        (sw, swz, swzz)
    }

    fn best_split(&mut self, items: &[usize], node_sums: (F, F, F)) -> Option<BestSplit<F>> {
        if items.len() < 2 {
            return None;
        }
        let (sw, swz, swzz) = node_sums;
        let node_sse = swzz - swz * swz / sw;
        let mut best: Option<BestSplit<F>> = None;
        let mut columns = (self.choose_columns)();
        columns.sort_unstable();
        let mut sorted: Vec<usize> = Vec::with_capacity(items.len());
        for col in columns {
            sorted.clear();
            sorted.extend_from_slice(items);
            sorted.sort_unstable_by(|&a, &b| {
                let xa = self.features[a * self.p + col];
                let xb = self.features[b * self.p + col];
                xa.partial_cmp(&xb).unwrap().then(a.cmp(&b))
            });
            let mut left_w = F::zero();
            let mut left_wz = F::zero();
            let mut left_wzz = F::zero();
            for j in 0..sorted.len() - 1 {
                let i = sorted[j];
                left_w += self.w[i];
                left_wz += self.w[i] * self.z[i];
                left_wzz += self.w[i] * self.z[i] * self.z[i];
                let x_here = self.features[i * self.p + col];
                let x_next = self.features[sorted[j + 1] * self.p + col];
                if x_here == x_next {
                    continue;
                }
                let right_w = sw - left_w;
                if left_w < self.min_leaf_weight || right_w < self.min_leaf_weight {
                    continue;
                }
                let right_wz = swz - left_wz;
                let right_wzz = swzz - left_wzz;
                let sse = (left_wzz - left_wz * left_wz / left_w)
                    + (right_wzz - right_wz * right_wz / right_w);
                let reduction = node_sse - sse;
                let better = match &best {
                    None => reduction > F::zero(),
                    Some(b) => reduction > b.reduction,
                };
                if better {
                    let threshold = (x_here + x_next) * F::cst(0.5);
                    best = Some(BestSplit { reduction, col, threshold });
                }
            }
        }
        best
    }

    fn grow(&mut self, items: &[usize], depth: usize) -> usize {
        let sums = self.sums(items);
        let leaf_value = sums.1 / sums.0;
        let split = if depth < self.max_depth {
            self.best_split(items, sums)
        } else {
            None
        };
        match split {
            None => {
                self.nodes.push(Node::Leaf { value: leaf_value });
                self.nodes.len() - 1
            }
            Some(s) => {
                let (mut left_items, mut right_items) = (Vec::new(), Vec::new());
                for &i in items {
                    if self.features[i * self.p + s.col] <= s.threshold {
                        left_items.push(i);
                    } else {
                        right_items.push(i);
                    }
                }
                let left = self.grow(&left_items, depth + 1);
                let right = self.grow(&right_items, depth + 1);
                self.nodes.push(Node::Split { col: s.col, threshold: s.threshold, left, right });
                self.nodes.len() - 1
            }
        }
    }
}

/// Grows a tree over `items` (row indices, repeats allowed for bootstrap
/// resamples). `min_leaf_weight` is absolute; `choose_columns` supplies the
/// candidate columns at each node, called in depth-first order.
pub(super) fn grow_tree<F: Scalar>(
    features: &[F],
    p: usize,
    z: &[F],
    w: &[F],
    items: &[usize],
    max_depth: usize,
    min_leaf_weight: F,
    choose_columns: impl FnMut() -> Vec<usize>,
) -> TreeModel<F> {
    let mut grower = Grower {
        features,
        p,
        z,
        w,
        max_depth,
        min_leaf_weight,
        choose_columns,
        nodes: Vec::new(),
    };
    let root = grower.grow(items, 0);
    TreeModel { nodes: grower.nodes, root }
}

pub fn fit_tree<F: Scalar>(
    problem: &RegressionProblem<F>,
    max_depth: usize,
    min_leaf_weight_fraction: f64,
) -> Result<TreeModel<F>> {
    let n = problem.n();
    if n < 20 {
        return Err(Error::invalid(format!("tree fit needs n >= 20, got n={n}")));
    }
    if !(0.0..0.5).contains(&min_leaf_weight_fraction) {
        return Err(Error::invalid("min_leaf_weight_fraction must lie in [0, 0.5)"));
    }
    let items: Vec<usize> = (0..n).collect();
    let min_leaf_weight = F::cst(min_leaf_weight_fraction) * problem.total_weight();
    Ok(grow_tree(
        problem.features(),
        problem.p(),
        problem.response(),
        problem.weight(),
        &items,
        max_depth,
        min_leaf_weight,
        || (0..problem.p()).collect(),
    ))
}
