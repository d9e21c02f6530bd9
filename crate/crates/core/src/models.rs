//! Conformity scores and the gradient-boosted quantile regressor behind CQR.

use crate::data::SupervisedDataset;
use crate::error::{Error, Result};
use crate::quantile::order_index;
use crate::splitcp::ConformityScore;

/// `τ (y − ŷ)` above the prediction, `(1 − τ)(ŷ − y)` below.
pub fn pinball_loss(y: f64, y_hat: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::BadParameter(format!("tau = {tau} is not in (0, 1)")));
    }
    Ok(pinball(y, y_hat, tau))
}

fn pinball(y: f64, y_hat: f64, tau: f64) -> f64 {
    if y >= y_hat {
        tau * (y - y_hat)
    } else {
        (1.0 - tau) * (y_hat - y)
    }
}

/// How candidate splits are ranked while growing a tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitRule {
    /// Squared-error fit to the pinball-loss negative gradient.
    #[default]
    Gradient,
    /// Total pinball loss of the two children, each at its own τ-quantile.
    ExactPinball,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub tree_depth: usize,
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    /// Lower and upper quantile levels, normally `(α/2, 1 − α/2)`.
    pub quantile_levels: (f64, f64),
    pub split_rule: SplitRule,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            tree_depth: 3,
            n_rounds: 100,
            learning_rate: 0.1,
            min_leaf: 20,
            quantile_levels: (0.05, 0.95),
            split_rule: SplitRule::default(),
        }
    }
}

impl ModelConfig {
    /// Default hyperparameters with quantile levels `(α/2, 1 − α/2)`.
    pub fn for_alpha(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::BadParameter(format!("alpha = {alpha} is not in (0, 1)")));
        }
        Ok(Self { quantile_levels: (alpha / 2.0, 1.0 - alpha / 2.0), ..Self::default() })
    }

    pub fn with_rule(self, split_rule: SplitRule) -> Self {
        Self { split_rule, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tree_depth == 0 || self.n_rounds == 0 || self.min_leaf == 0 {
            return Err(Error::BadParameter("tree_depth, n_rounds and min_leaf must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::BadParameter(format!("learning_rate = {} is not in (0, 1]", self.learning_rate)));
        }
        let (lo, hi) = self.quantile_levels;
        if !(lo > 0.0 && lo < hi && hi < 1.0) {
            return Err(Error::BadParameter(format!("quantile levels ({lo}, {hi}) must satisfy 0 < lo < hi < 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Split { feature, threshold, left, right } => {
                    at = if x[feature] <= threshold { left } else { right };
                }
                Node::Leaf(v) => return v,
            }
        }
    }
}

/// Boosted regression trees fit to the τ-quantile of the target.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostedQuantileRegressor {
    tau: f64,
    base: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
}

impl BoostedQuantileRegressor {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

fn tau_quantile(values: &mut [f64], tau: f64) -> f64 {
    let k = order_index(values.len(), tau);
    *values.select_nth_unstable_by(k - 1, f64::total_cmp).1
}

const NO_SLOT: usize = usize::MAX;

/// Fenwick tree over residual ranks within one node, tracking counts and sums.
struct RankTree {
    count: Vec<u32>,
    sum: Vec<f64>,
    top_bit: usize,
}

impl RankTree {
    fn new(len: usize) -> Self {
        let top_bit = if len == 0 { 0 } else { 1 << (usize::BITS - 1 - len.leading_zeros()) };
        Self { count: vec![0; len + 1], sum: vec![0.0; len + 1], top_bit }
    }

    fn filled(values: &[f64]) -> Self {
        let mut t = Self::new(values.len());
        for (i, &v) in values.iter().enumerate() {
            t.count[i + 1] += 1;
            t.sum[i + 1] += v;
            let j = (i + 1) + ((i + 1) & (i + 1).wrapping_neg());
            if j <= values.len() {
                t.count[j] += t.count[i + 1];
                t.sum[j] += t.sum[i + 1];
            }
        }
        t
    }

    fn update(&mut self, rank: usize, add: bool, value: f64) {
        let mut i = rank + 1;
        while i < self.count.len() {
            if add {
                self.count[i] += 1;
                self.sum[i] += value;
            } else {
                self.count[i] -= 1;
                self.sum[i] -= value;
            }
            i += i & i.wrapping_neg();
        }
    }

    /// Count and sum of present ranks below `rank`.
    fn below(&self, rank: usize) -> (u32, f64) {
        let (mut c, mut s, mut i) = (0, 0.0, rank);
        while i > 0 {
            c += self.count[i];
            s += self.sum[i];
            i -= i & i.wrapping_neg();
        }
        (c, s)
    }

    /// Rank of the `k`-th smallest present element (`k` is 1-based).
    fn kth(&self, mut k: u32) -> usize {
        let (mut pos, mut step) = (0, self.top_bit);
        while step > 0 {
            let next = pos + step;
            if next < self.count.len() && self.count[next] < k {
                pos = next;
                k -= self.count[next];
            }
            step >>= 1;
        }
        pos
    }

    /// Pinball loss of the present elements at their own inf-form τ-quantile.
    fn loss(&self, sorted: &[f64], present: usize, total: f64, tau: f64) -> f64 {
        if present == 0 {
            return 0.0;
        }
        let k = order_index(present, tau);
        let rank = self.kth(k as u32);
        let q = sorted[rank];
        let (_, below) = self.below(rank);
        let above = total - below - q;
        let l = tau * (above - (present - k) as f64 * q) + (1.0 - tau) * ((k - 1) as f64 * q - below);
        l.max(0.0)
    }
}

struct Grower<'a> {
    xs: &'a [f64],
    dim: usize,
    sorted: &'a [Vec<u32>],
    tau: f64,
    min_leaf: usize,
    rule: SplitRule,
}

impl Grower<'_> {
    fn x(&self, i: usize, f: usize) -> f64 {
        self.xs[i * self.dim + f]
    }

    fn threshold(lo: f64, hi: f64) -> f64 {
        let mid = 0.5 * (lo + hi);
        if mid >= hi {
            lo
        } else {
            mid
        }
    }

    /// Best split for each frontier slot, ties broken towards the lowest
    /// feature and then the lowest threshold.
    fn best_splits(&self, slot_of: &[usize], members: &[Vec<u32>], resid: &[f64]) -> Vec<Option<(usize, f64)>> {
        match self.rule {
            SplitRule::Gradient => self.gradient_splits(slot_of, members, resid),
            SplitRule::ExactPinball => self.pinball_splits(slot_of, members, resid),
        }
    }

    fn gradient_splits(&self, slot_of: &[usize], members: &[Vec<u32>], resid: &[f64]) -> Vec<Option<(usize, f64)>> {
        let k = members.len();
        let grad: Vec<f64> = resid.iter().map(|&r| if r > 0.0 { self.tau } else { self.tau - 1.0 }).collect();
        let totals: Vec<(usize, f64)> =
            members.iter().map(|m| (m.len(), m.iter().map(|&i| grad[i as usize]).sum())).collect();
        let mut best: Vec<(f64, Option<(usize, f64)>)> = vec![(1e-9, None); k];
        let mut count = vec![0usize; k];
        let mut sum = vec![0.0; k];
        let mut last = vec![f64::NAN; k];
        for f in 0..self.dim {
            count.fill(0);
            sum.fill(0.0);
            for &i in &self.sorted[f] {
                let i = i as usize;
                let s = slot_of[i];
                if s == NO_SLOT {
                    continue;
                }
                let xv = self.x(i, f);
                let (n, g) = totals[s];
                let nl = count[s];
                if nl >= self.min_leaf && n - nl >= self.min_leaf && xv > last[s] {
                    let (sl, sr) = (sum[s], g - sum[s]);
                    let gain = sl * sl / nl as f64 + sr * sr / (n - nl) as f64 - g * g / n as f64;
                    if gain > best[s].0 {
                        best[s] = (gain, Some((f, Self::threshold(last[s], xv))));
                    }
                }
                count[s] += 1;
                sum[s] += grad[i];
                last[s] = xv;
            }
        }
        best.into_iter().map(|b| b.1).collect()
    }

    fn pinball_splits(&self, slot_of: &[usize], members: &[Vec<u32>], resid: &[f64]) -> Vec<Option<(usize, f64)>> {
        let k = members.len();
        let mut rank_of = vec![0usize; resid.len()];
        let mut sorted_vals: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut totals = Vec::with_capacity(k);
        let mut best: Vec<(f64, Option<(usize, f64)>)> = Vec::with_capacity(k);
        for m in members {
            let mut order: Vec<u32> = m.clone();
            order.sort_by(|&a, &b| resid[a as usize].total_cmp(&resid[b as usize]).then(a.cmp(&b)));
            for (r, &i) in order.iter().enumerate() {
                rank_of[i as usize] = r;
            }
            let vals: Vec<f64> = order.iter().map(|&i| resid[i as usize]).collect();
            let total: f64 = vals.iter().sum();
            let parent = RankTree::filled(&vals).loss(&vals, vals.len(), total, self.tau);
            best.push((parent - 1e-12 * (1.0 + parent), None));
            totals.push(total);
            sorted_vals.push(vals);
        }
        let mut last = vec![f64::NAN; k];
        for f in 0..self.dim {
            let mut left: Vec<RankTree> = sorted_vals.iter().map(|v| RankTree::new(v.len())).collect();
            let mut right: Vec<RankTree> = sorted_vals.iter().map(|v| RankTree::filled(v)).collect();
            let mut left_sum = vec![0.0; k];
            let mut nl = vec![0usize; k];
            for &i in &self.sorted[f] {
                let i = i as usize;
                let s = slot_of[i];
                if s == NO_SLOT {
                    continue;
                }
                let xv = self.x(i, f);
                let n = sorted_vals[s].len();
                if nl[s] >= self.min_leaf && n - nl[s] >= self.min_leaf && xv > last[s] {
                    let vals = &sorted_vals[s];
                    let loss = left[s].loss(vals, nl[s], left_sum[s], self.tau)
                        + right[s].loss(vals, n - nl[s], totals[s] - left_sum[s], self.tau);
                    if loss < best[s].0 {
                        best[s] = (loss, Some((f, Self::threshold(last[s], xv))));
                    }
                }
                let r = rank_of[i];
                left[s].update(r, true, resid[i]);
                right[s].update(r, false, resid[i]);
                left_sum[s] += resid[i];
                nl[s] += 1;
                last[s] = xv;
            }
        }
        best.into_iter().map(|b| b.1).collect()
    }

    /// Grows one tree on the current residuals and returns it together with
    /// each sample's leaf value.
    fn grow(&self, resid: &[f64], depth: usize) -> (Tree, Vec<f64>) {
        let n = resid.len();
        let mut nodes = vec![Node::Leaf(0.0)];
        let mut slot_of = vec![0usize; n];
        let mut frontier: Vec<usize> = vec![0];
        let mut members: Vec<Vec<u32>> = vec![(0..n as u32).collect()];
        let mut finished: Vec<(usize, Vec<u32>)> = Vec::new();

        for _ in 0..depth {
            let splits = self.best_splits(&slot_of, &members, resid);
            let mut next_frontier = Vec::new();
            let mut next_members = Vec::new();
            for ((node, mem), split) in frontier.into_iter().zip(members).zip(splits) {
                match split {
                    Some((feature, threshold)) => {
                        let left = nodes.len();
                        nodes.push(Node::Leaf(0.0));
                        nodes.push(Node::Leaf(0.0));
                        nodes[node] = Node::Split { feature, threshold, left, right: left + 1 };
                        let (l, r): (Vec<u32>, Vec<u32>) =
                            mem.into_iter().partition(|&i| self.x(i as usize, feature) <= threshold);
                        next_frontier.push(left);
                        next_members.push(l);
                        next_frontier.push(left + 1);
                        next_members.push(r);
                    }
                    None => finished.push((node, mem)),
                }
            }
            frontier = next_frontier;
            members = next_members;
            slot_of.fill(NO_SLOT);
            for (s, mem) in members.iter().enumerate() {
                for &i in mem {
                    slot_of[i as usize] = s;
                }
            }
            if frontier.is_empty() {
                break;
            }
        }
        finished.extend(frontier.into_iter().zip(members));

        let mut step = vec![0.0; n];
        for (node, mem) in finished {
            let mut vals: Vec<f64> = mem.iter().map(|&i| resid[i as usize]).collect();
            let v = tau_quantile(&mut vals, self.tau);
            nodes[node] = Node::Leaf(v);
            for &i in &mem {
                step[i as usize] = v;
            }
        }
        (Tree { nodes }, step)
    }
}

/// Fits one boosted τ-quantile regressor. Also returns the mean training
/// pinball loss before boosting and after each round.
pub fn fit_quantile_regressor(
    train: &SupervisedDataset,
    tau: f64,
    cfg: &ModelConfig,
) -> Result<(BoostedQuantileRegressor, Vec<f64>)> {
    cfg.validate()?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::BadParameter(format!("tau = {tau} is not in (0, 1)")));
    }
    if train.is_empty() {
        return Err(Error::EmptyTraining);
    }
    let n = train.len();
    let dim = train.dim();
    let xs: Vec<f64> = train.rows().flat_map(|(x, _)| x.iter().copied()).collect();
    let ys = train.ys();
    let sorted: Vec<Vec<u32>> = (0..dim)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| xs[a as usize * dim + f].total_cmp(&xs[b as usize * dim + f]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let base = tau_quantile(&mut ys.to_vec(), tau);
    let mut fitted = vec![base; n];
    let mean_loss = |fitted: &[f64]| ys.iter().zip(fitted).map(|(&y, &f)| pinball(y, f, tau)).sum::<f64>() / n as f64;
    let mut losses = vec![mean_loss(&fitted)];
    let grower = Grower { xs: &xs, dim, sorted: &sorted, tau, min_leaf: cfg.min_leaf, rule: cfg.split_rule };
    let mut trees = Vec::with_capacity(cfg.n_rounds);
    let mut resid = vec![0.0; n];
    for _ in 0..cfg.n_rounds {
        for i in 0..n {
            resid[i] = ys[i] - fitted[i];
        }
        let (tree, step) = grower.grow(&resid, cfg.tree_depth);
        for i in 0..n {
            fitted[i] += cfg.learning_rate * step[i];
        }
        trees.push(tree);
        losses.push(mean_loss(&fitted));
    }
    Ok((BoostedQuantileRegressor { tau, base, learning_rate: cfg.learning_rate, trees }, losses))
}

/// Lower and upper conditional-quantile regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileModel {
    pub lo: BoostedQuantileRegressor,
    pub hi: BoostedQuantileRegressor,
}

impl QuantileModel {
    /// Predicted `(lower, upper)` quantiles, swapped if they cross.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        fix_quantile_crossing(self.lo.predict(x), self.hi.predict(x))
    }
}

pub fn fit_quantile_model(train: &SupervisedDataset, cfg: &ModelConfig) -> Result<QuantileModel> {
    let (lo, _) = fit_quantile_regressor(train, cfg.quantile_levels.0, cfg)?;
    let (hi, _) = fit_quantile_regressor(train, cfg.quantile_levels.1, cfg)?;
    Ok(QuantileModel { lo, hi })
}

pub fn fix_quantile_crossing(lo: f64, hi: f64) -> (f64, f64) {
    if lo <= hi {
        (lo, hi)
    } else {
        (hi, lo)
    }
}

/// `max(lo − y, y − hi)` for the crossing-fixed predictions.
pub fn cqr_score(model: &QuantileModel, x: &[f64], y: f64) -> f64 {
    let (lo, hi) = model.predict(x);
    (lo - y).max(y - hi)
}

/// Conformalized quantile regression score.
#[derive(Debug, Clone, PartialEq)]
pub struct CqrScore {
    model: QuantileModel,
}

impl CqrScore {
    pub fn new(model: QuantileModel) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &QuantileModel {
        &self.model
    }
}

impl ConformityScore for CqrScore {
    fn score(&self, x: &[f64], y: f64) -> f64 {
        cqr_score(&self.model, x, y)
    }

    fn interval(&self, x: &[f64], threshold: f64) -> Option<(f64, f64)> {
        let (lo, hi) = self.model.predict(x);
        Some((lo - threshold, hi + threshold))
    }
}

pub fn residual_score(prediction: f64, y: f64) -> f64 {
    (y - prediction).abs()
}

pub fn weighted_residual_score(prediction: f64, scale: f64, y: f64) -> Result<f64> {
    if !(scale > 0.0) {
        return Err(Error::NonpositiveScale(scale));
    }
    Ok((y - prediction).abs() / scale)
}

/// `|y − μ(x)|` for a point predictor `μ`.
#[derive(Debug, Clone)]
pub struct ResidualScore<F> {
    mean: F,
}

impl<F: Fn(&[f64]) -> f64> ResidualScore<F> {
    pub fn new(mean: F) -> Self {
        Self { mean }
    }
}

impl<F: Fn(&[f64]) -> f64> ConformityScore for ResidualScore<F> {
    fn score(&self, x: &[f64], y: f64) -> f64 {
        residual_score((self.mean)(x), y)
    }

    fn interval(&self, x: &[f64], threshold: f64) -> Option<(f64, f64)> {
        let m = (self.mean)(x);
        Some((m - threshold, m + threshold))
    }
}

/// `|y − μ(x)| / ρ(x)`. A nonpositive scale at `x` makes every `y` score
/// `+∞`, so such points are never covered.
#[derive(Debug, Clone)]
pub struct WeightedResidualScore<F, G> {
    mean: F,
    scale: G,
}

impl<F: Fn(&[f64]) -> f64, G: Fn(&[f64]) -> f64> WeightedResidualScore<F, G> {
    pub fn new(mean: F, scale: G) -> Self {
        Self { mean, scale }
    }
}

impl<F: Fn(&[f64]) -> f64, G: Fn(&[f64]) -> f64> ConformityScore for WeightedResidualScore<F, G> {
    fn score(&self, x: &[f64], y: f64) -> f64 {
        weighted_residual_score((self.mean)(x), (self.scale)(x), y).unwrap_or(f64::INFINITY)
    }

    fn interval(&self, x: &[f64], threshold: f64) -> Option<(f64, f64)> {
        let (m, s) = ((self.mean)(x), (self.scale)(x));
        if s > 0.0 {
            Some((m - threshold * s, m + threshold * s))
        } else {
            Some((f64::INFINITY, f64::NEG_INFINITY))
        }
    }
}
