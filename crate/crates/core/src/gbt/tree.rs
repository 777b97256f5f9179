//! Regression trees grown to minimise the pinball loss.

use serde::{Deserialize, Serialize};

use super::{empirical_quantile, pinball_loss};
use crate::scalar::{sort_scalars, Scalar};

/// Flattened binary tree. Node `i` is a leaf when `feature[i] < 0`; otherwise
/// samples with `x[feature] <= threshold` go to `left[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Tree<F: Scalar> {
    pub feature: Vec<i32>,
    pub threshold: Vec<F>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<F>,
}

impl<F: Scalar> Tree<F> {
    pub fn leaf(value: F) -> Self {
        Self { feature: vec![-1], threshold: vec![F::zero()], left: vec![0], right: vec![0], value: vec![value] }
    }

    pub fn predict(&self, x: &[F]) -> F {
        let mut i = 0;
        while self.feature[i] >= 0 {
            let f = self.feature[i] as usize;
            i = if x[f] <= self.threshold[i] { self.left[i] } else { self.right[i] } as usize;
        }
        self.value[i]
    }

    pub fn num_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn depth(&self) -> usize {
        fn go<F: Scalar>(t: &Tree<F>, i: usize) -> usize {
            if t.feature[i] < 0 {
                0
            } else {
                1 + go(t, t.left[i] as usize).max(go(t, t.right[i] as usize))
            }
        }
        go(self, 0)
    }

    /// Structural checks used when loading a model.
    pub fn validate(&self, num_features: usize) -> Result<(), String> {
        let n = self.feature.len();
        if n == 0 || [self.threshold.len(), self.left.len(), self.right.len(), self.value.len()] != [n; 4] {
            return Err("tree arrays have inconsistent lengths".into());
        }
        for i in 0..n {
            if self.feature[i] >= 0 {
                if self.feature[i] as usize >= num_features {
                    return Err(format!("node {i} splits on missing feature {}", self.feature[i]));
                }
                let (l, r) = (self.left[i] as usize, self.right[i] as usize);
                if l <= i || r <= i || l >= n || r >= n {
                    return Err(format!("node {i} has invalid children"));
                }
            } else if !self.value[i].is_finite() {
                return Err(format!("leaf {i} is not finite"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

/// Counts and sums over residual ranks, with order-statistic search.
struct Fenwick<F> {
    count: Vec<usize>,
    sum: Vec<F>,
    top: usize,
}

impl<F: Scalar> Fenwick<F> {
    fn new(n: usize) -> Self {
        let top = if n == 0 { 0 } else { 1 << (usize::BITS - 1 - n.leading_zeros()) };
        Self { count: vec![0; n + 1], sum: vec![F::zero(); n + 1], top }
    }

    fn add(&mut self, pos: usize, v: F) {
        let mut i = pos + 1;
        while i < self.count.len() {
            self.count[i] += 1;
            self.sum[i] += v;
            i += i & i.wrapping_neg();
        }
    }

    /// Count and sum over positions `< end`.
    fn prefix(&self, end: usize) -> (usize, F) {
        let (mut c, mut s, mut i) = (0, F::zero(), end);
        while i > 0 {
            c += self.count[i];
            s += self.sum[i];
            i -= i & i.wrapping_neg();
        }
        (c, s)
    }

    /// Position of the `k`-th (1-based) present element, or of the `k`-th
    /// absent one when `complement` is set.
    fn select(&self, k: usize, complement: bool) -> usize {
        let n = self.count.len() - 1;
        let (mut pos, mut rem, mut step) = (0, k, self.top);
        while step > 0 {
            let next = pos + step;
            if next <= n {
                let c = if complement { step - self.count[next] } else { self.count[next] };
                if c < rem {
                    pos = next;
                    rem -= c;
                }
            }
            step >>= 1;
        }
        pos
    }
}

/// 1-based rank of the empirical `q`-quantile in a set of `m` values.
pub(crate) fn quantile_rank(q: f64, m: usize) -> usize {
    ((q * m as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Pinball loss of a set at its own empirical quantile, given the value at the
/// quantile rank `c`, counts/sums strictly below that rank and totals.
fn set_loss<F: Scalar>(q: F, c: F, below: (usize, F), m: usize, total: F) -> F {
    let above_n = F::of_usize(m - below.0 - 1);
    let above_s = total - below.1 - c;
    q * (above_s - c * above_n) + (F::one() - q) * (c * F::of_usize(below.0) - below.1)
}

struct Best<F> {
    gain: F,
    feature: usize,
    threshold: F,
    split_at: usize,
}

/// Fits one tree on `targets` (residuals) for rows `rows` of `x`.
pub fn fit_tree<F: Scalar>(x: &[Vec<F>], targets: &[F], rows: &[usize], q: f64, params: &TreeParams) -> Tree<F> {
    let mut tree = Tree { feature: vec![], threshold: vec![], left: vec![], right: vec![], value: vec![] };
    grow(&mut tree, x, targets, rows.to_vec(), q, params, 0);
    tree
}

fn grow<F: Scalar>(
    tree: &mut Tree<F>,
    x: &[Vec<F>],
    targets: &[F],
    rows: Vec<usize>,
    q: f64,
    params: &TreeParams,
    depth: usize,
) -> usize {
    let id = tree.feature.len();
    let node_values: Vec<F> = rows.iter().map(|&r| targets[r]).collect();
    tree.feature.push(-1);
    tree.threshold.push(F::zero());
    tree.left.push(0);
    tree.right.push(0);
    tree.value.push(empirical_quantile(&node_values, q));
    if depth >= params.max_depth || rows.len() < 2 * params.min_samples_leaf.max(1) {
        return id;
    }
    let Some(best) = best_split(x, targets, &rows, q, params) else {
        return id;
    };
    let mut order = rows.clone();
    order.sort_by(|&a, &b| x[a][best.feature].partial_cmp(&x[b][best.feature]).unwrap().then(a.cmp(&b)));
    let right_rows = order.split_off(best.split_at);
    tree.feature[id] = best.feature as i32;
    tree.threshold[id] = best.threshold;
    let l = grow(tree, x, targets, order, q, params, depth + 1);
    let r = grow(tree, x, targets, right_rows, q, params, depth + 1);
    tree.left[id] = l as u32;
    tree.right[id] = r as u32;
    id
}

fn best_split<F: Scalar>(x: &[Vec<F>], targets: &[F], rows: &[usize], q: f64, params: &TreeParams) -> Option<Best<F>> {
    let n = rows.len();
    let min_leaf = params.min_samples_leaf.max(1);
    let qf = F::of(q);
    // rank residuals within the node
    let mut by_value: Vec<usize> = (0..n).collect();
    by_value.sort_by(|&a, &b| targets[rows[a]].partial_cmp(&targets[rows[b]]).unwrap().then(a.cmp(&b)));
    let mut rank = vec![0; n];
    let sorted_vals: Vec<F> = by_value.iter().map(|&i| targets[rows[i]]).collect();
    for (r, &i) in by_value.iter().enumerate() {
        rank[i] = r;
    }
    let mut prefix_all = vec![F::zero(); n + 1];
    for r in 0..n {
        prefix_all[r + 1] = prefix_all[r] + sorted_vals[r];
    }
    let total = prefix_all[n];
    let parent = {
        let k = quantile_rank(q, n);
        set_loss(qf, sorted_vals[k - 1], (k - 1, prefix_all[k - 1]), n, total)
    };
    let tol = F::of(1e-12) * (F::one() + parent.abs());
    let mut best: Option<Best<F>> = None;
    let num_features = x.first().map_or(0, Vec::len);
    let mut order: Vec<usize> = (0..n).collect();
    for f in 0..num_features {
        order.sort_by(|&a, &b| x[rows[a]][f].partial_cmp(&x[rows[b]][f]).unwrap().then(rows[a].cmp(&rows[b])));
        let mut fw = Fenwick::<F>::new(n);
        let mut left_total = F::zero();
        for split in 1..n {
            let i = order[split - 1];
            fw.add(rank[i], sorted_vals[rank[i]]);
            left_total += sorted_vals[rank[i]];
            let (xl, xr) = (x[rows[i]][f], x[rows[order[split]]][f]);
            if split < min_leaf || n - split < min_leaf || !(xl < xr) {
                continue;
            }
            let (ml, mr) = (split, n - split);
            let kl = quantile_rank(q, ml);
            let pl = fw.select(kl, false);
            let below_l = fw.prefix(pl);
            let loss_l = set_loss(qf, sorted_vals[pl], below_l, ml, left_total);
            let kr = quantile_rank(q, mr);
            let pr = fw.select(kr, true);
            let (cl, sl) = fw.prefix(pr);
            let below_r = (pr - cl, prefix_all[pr] - sl);
            let loss_r = set_loss(qf, sorted_vals[pr], below_r, mr, total - left_total);
            let gain = parent - loss_l - loss_r;
            if gain > tol && best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(Best { gain, feature: f, threshold: (xl + xr) * F::half(), split_at: split });
            }
        }
    }
    best
}

/// Exhaustive reference: pinball loss of a set at its own empirical quantile.
pub fn set_pinball_loss<F: Scalar>(values: &[F], q: f64) -> F {
    let mut v = values.to_vec();
    sort_scalars(&mut v);
    let c = empirical_quantile(&v, q);
    values.iter().map(|&r| pinball_loss(r, c, F::of(q))).sum()
}
