//! Correction factors for split conformal prediction on iid and β-mixing data.
//!
//! The β-mixing calibration and test factors are infima over block plans
//! `(block_len, block_count, slack)` with `2 · block_count · block_len` equal
//! to the usable sample size. Every feasible plan is enumerated: for each
//! slack the plans are the divisor pairs of half the usable size.

use crate::error::{Error, Result};
use crate::mixing::MixingProfile;
use crate::quantile::{empirical_quantile, QuantileLevel};
use crate::rng::{seeded, SimRng};
use crate::splitcp::ConformityScore;

/// Miscoverage level and failure probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceParams {
    pub alpha: f64,
    pub delta_cal: f64,
    pub delta_test: f64,
}

impl ConfidenceParams {
    pub fn new(alpha: f64, delta_cal: f64, delta_test: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("delta_cal", delta_cal), ("delta_test", delta_test)] {
            check_unit(name, v)?;
        }
        Ok(Self { alpha, delta_cal, delta_test })
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::BadParameter(format!("{name} = {v} is not in (0, 1)")))
    }
}

fn check_count(name: &str, n: u64) -> Result<()> {
    if n == 0 {
        Err(Error::BadParameter(format!("{name} must be positive")))
    } else {
        Ok(())
    }
}

/// A blocking of the sample used by the β-mixing concentration bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockPlan {
    pub block_len: u64,
    pub block_count: u64,
    /// Points dropped to make the sample split evenly into blocks.
    pub slack: u64,
    pub achieved_eps: f64,
}

/// Result of a plan search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundEstimate {
    pub eps: f64,
    pub plan: BlockPlan,
    /// The bound is formally true but carries no information.
    pub vacuous: bool,
}

/// Which variance term enters the Bernstein-type bound.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum VarianceVariant {
    /// Indicator variance bounded by 1/4.
    #[default]
    Base,
    /// Indicator variance `α(1 − α)`.
    Alpha(f64),
}

impl VarianceVariant {
    fn base_variance(self) -> Result<f64> {
        match self {
            Self::Base => Ok(0.25),
            Self::Alpha(a) => {
                check_unit("alpha", a)?;
                Ok(a * (1.0 - a))
            }
        }
    }
}

/// Hoeffding radius `sqrt(ln(2/δ) / (2n))`.
pub fn iid_epsilon(n: u64, delta: f64) -> Result<f64> {
    check_count("n", n)?;
    check_unit("delta", delta)?;
    Ok(((2.0 / delta).ln() / (2.0 * n as f64)).sqrt())
}

/// Bernstein radius `sqrt(2α(1 − α) ln(2/δ) / n)`, for `α` in (0, 1/2).
pub fn iid_epsilon_variance(n: u64, delta: f64, alpha: f64) -> Result<f64> {
    check_count("n", n)?;
    check_unit("delta", delta)?;
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::BadParameter(format!("alpha = {alpha} is not in (0, 1/2)")));
    }
    Ok((2.0 * alpha * (1.0 - alpha) * (2.0 / delta).ln() / n as f64).sqrt())
}

/// `(1/γ)(4 sqrt(ln(2(n+1)^d)/n) + 2 sqrt(ln(4/δ)/(2n)))`
pub fn iid_conditional_epsilon(n: u64, delta: f64, gamma: f64, vc_dim: u32) -> Result<f64> {
    check_count("n", n)?;
    check_unit("delta", delta)?;
    check_unit("gamma", gamma)?;
    check_count("vc_dim", vc_dim as u64)?;
    let nf = n as f64;
    let complexity = 2f64.ln() + vc_dim as f64 * (nf + 1.0).ln();
    Ok((4.0 * (complexity / nf).sqrt() + 2.0 * ((4.0 / delta).ln() / (2.0 * nf)).sqrt()) / gamma)
}

/// σ̃ for every block length `1..=max_block`, given `beta[j] = β(j)`.
fn variance_table(beta: &[f64], max_block: usize, base: f64) -> Vec<f64> {
    let mut out = vec![0.0; max_block + 1];
    // weighted = Σ_{j<a} (a − j) β(j), advanced by the running sum of β.
    let (mut weighted, mut running) = (0.0, 0.0);
    for a in 1..=max_block {
        out[a] = (base + 2.0 * weighted / a as f64).sqrt();
        running += beta[a];
        weighted += running;
    }
    out
}

/// `sqrt(base + (2/a) Σ_{j=1}^{a−1} (a − j) β(j))` with `base = 1/4` or `α(1 − α)`.
pub fn variance_proxy(profile: &MixingProfile, block_len: u64, alpha: Option<f64>) -> Result<f64> {
    check_count("block length", block_len)?;
    let variant = alpha.map_or(VarianceVariant::Base, VarianceVariant::Alpha);
    let table = profile.tabulate(block_len);
    Ok(variance_table(&table, block_len as usize, variant.base_variance()?)[block_len as usize])
}

/// Exhaustive argmin over plans. `core` gives the slack-free part of ε (or
/// `None` when the plan is infeasible); the slack term is added on top and is
/// nondecreasing in the slack, so the scan stops once it alone reaches the
/// incumbent.
fn search_plans(
    slacks: std::ops::RangeInclusive<u64>,
    usable: impl Fn(u64) -> u64,
    slack_term: impl Fn(u64) -> f64,
    core: impl Fn(u64, u64, u64) -> Option<f64>,
) -> Option<BlockPlan> {
    let mut best: Option<BlockPlan> = None;
    let consider = |best: &mut Option<BlockPlan>, block_len: u64, block_count: u64, slack: u64, eps: f64| {
        let better = match best {
            None => true,
            Some(b) => {
                eps < b.achieved_eps
                    || (eps == b.achieved_eps
                        && (block_len, block_count, slack) < (b.block_len, b.block_count, b.slack))
            }
        };
        if better {
            *best = Some(BlockPlan { block_len, block_count, slack, achieved_eps: eps });
        }
    };
    for slack in slacks {
        let st = slack_term(slack);
        if best.as_ref().is_some_and(|b| st >= b.achieved_eps) {
            break;
        }
        let total = usable(slack);
        if total == 0 || total % 2 == 1 {
            continue;
        }
        let half = total / 2;
        let mut d = 1;
        while d * d <= half {
            if half.is_multiple_of(d) {
                let e = half / d;
                for (len, count) in [(d, e), (e, d)] {
                    if let Some(c) = core(len, count, slack) {
                        consider(&mut best, len, count, slack, c + st);
                    }
                    if d == e {
                        break;
                    }
                }
            }
            d += 1;
        }
    }
    best
}

fn finish(plan: Option<BlockPlan>, vacuous: impl Fn(f64) -> bool) -> Result<BoundEstimate> {
    let plan = plan.ok_or(Error::NoFeasiblePlan)?;
    Ok(BoundEstimate { eps: plan.achieved_eps, plan, vacuous: vacuous(plan.achieved_eps) })
}

fn default_max_slack(n: u64) -> u64 {
    (n / 4).max(1)
}

/// Calibration factor for β-mixing data, slack up to `⌊n_cal/4⌋`.
pub fn eps_cal_beta(
    n_cal: u64,
    delta_cal: f64,
    profile: &MixingProfile,
    variant: VarianceVariant,
) -> Result<BoundEstimate> {
    eps_cal_beta_with(n_cal, delta_cal, profile, variant, default_max_slack(n_cal))
}

pub fn eps_cal_beta_with(
    n_cal: u64,
    delta_cal: f64,
    profile: &MixingProfile,
    variant: VarianceVariant,
    max_slack: u64,
) -> Result<BoundEstimate> {
    check_count("n_cal", n_cal)?;
    check_unit("delta_cal", delta_cal)?;
    let base = variant.base_variance()?;
    let max_slack = max_slack.clamp(1, n_cal);
    let beta = profile.tabulate(n_cal);
    let sigma = variance_table(&beta, (n_cal as usize).div_ceil(2), base);
    let nf = n_cal as f64;
    let plan = search_plans(
        1..=max_slack,
        |r| n_cal - r + 1,
        |r| (r - 1) as f64 / nf,
        |len, count, r| {
            let budget = delta_cal - 4.0 * (count - 1) as f64 * beta[len as usize] - beta[r as usize];
            if budget <= 0.0 {
                return None;
            }
            let log_term = (4.0 / budget).ln();
            let usable = (n_cal - r + 1) as f64;
            Some(sigma[len as usize] * (4.0 / usable * log_term).sqrt() + log_term / (3.0 * count as f64))
        },
    );
    finish(plan, |e| e > 1.0)
}

/// Test factor for β-mixing data, slack up to `⌊n_test/4⌋`.
pub fn eps_test_beta(
    n_test: u64,
    n_cal: u64,
    delta_test: f64,
    profile: &MixingProfile,
    variant: VarianceVariant,
) -> Result<BoundEstimate> {
    eps_test_beta_with(n_test, n_cal, delta_test, profile, variant, default_max_slack(n_test))
}

pub fn eps_test_beta_with(
    n_test: u64,
    n_cal: u64,
    delta_test: f64,
    profile: &MixingProfile,
    variant: VarianceVariant,
    max_slack: u64,
) -> Result<BoundEstimate> {
    check_count("n_test", n_test)?;
    check_count("n_cal", n_cal)?;
    check_unit("delta_test", delta_test)?;
    let base = variant.base_variance()?;
    let max_slack = max_slack.min(n_test - 1);
    let beta = profile.tabulate(n_test.max(n_cal));
    let beta_gap = beta[n_cal as usize];
    let sigma = variance_table(&beta, (n_test as usize) / 2, base);
    let nf = n_test as f64;
    let plan = search_plans(
        0..=max_slack,
        |s| n_test - s,
        |s| s as f64 / nf,
        |len, count, _| {
            let budget = delta_test - 4.0 * (count - 1) as f64 * beta[len as usize] - beta_gap;
            if budget <= 0.0 {
                return None;
            }
            let log_term = (4.0 / budget).ln();
            Some(sigma[len as usize] * (4.0 / nf * log_term).sqrt() + log_term / (3.0 * count as f64))
        },
    );
    finish(plan, |e| e > 1.0)
}

fn check_family(gamma: f64, vc_dim: u32) -> Result<()> {
    check_unit("gamma", gamma)?;
    check_count("vc_dim", vc_dim as u64)
}

fn uniform_deviation(count: u64, vc_dim: u32) -> f64 {
    let m = count as f64;
    (4.0 * ((2f64.ln() + vc_dim as f64 * (m + 1.0).ln()) / m).sqrt()).max(0.0)
}

/// Calibration factor for set-conditional coverage over a VC family.
pub fn eps_cal_conditional(
    n_cal: u64,
    delta_cal: f64,
    profile: &MixingProfile,
    gamma: f64,
    vc_dim: u32,
) -> Result<BoundEstimate> {
    eps_cal_conditional_with(n_cal, delta_cal, profile, gamma, vc_dim, default_max_slack(n_cal))
}

pub fn eps_cal_conditional_with(
    n_cal: u64,
    delta_cal: f64,
    profile: &MixingProfile,
    gamma: f64,
    vc_dim: u32,
    max_slack: u64,
) -> Result<BoundEstimate> {
    check_count("n_cal", n_cal)?;
    check_unit("delta_cal", delta_cal)?;
    check_family(gamma, vc_dim)?;
    let max_slack = max_slack.clamp(1, n_cal);
    let beta = profile.tabulate(n_cal);
    let nf = n_cal as f64;
    let plan = search_plans(
        1..=max_slack,
        |r| n_cal - r + 1,
        |r| 2.0 * (r - 1) as f64 / nf / gamma,
        |len, count, r| {
            let budget = delta_cal - 16.0 * (count - 1) as f64 * beta[len as usize] - beta[r as usize];
            if budget <= 0.0 {
                return None;
            }
            let m = count as f64;
            Some((uniform_deviation(count, vc_dim) + 2.0 * ((16.0 / budget).ln() / (2.0 * m)).sqrt()) / gamma)
        },
    );
    finish(plan, |e| e >= 1.0)
}

/// Test factor for set-conditional coverage over a VC family.
pub fn eps_test_conditional(
    n_test: u64,
    n_cal: u64,
    delta_test: f64,
    profile: &MixingProfile,
    gamma: f64,
    vc_dim: u32,
) -> Result<BoundEstimate> {
    eps_test_conditional_with(n_test, n_cal, delta_test, profile, gamma, vc_dim, default_max_slack(n_test))
}

pub fn eps_test_conditional_with(
    n_test: u64,
    n_cal: u64,
    delta_test: f64,
    profile: &MixingProfile,
    gamma: f64,
    vc_dim: u32,
    max_slack: u64,
) -> Result<BoundEstimate> {
    check_count("n_test", n_test)?;
    check_count("n_cal", n_cal)?;
    check_unit("delta_test", delta_test)?;
    check_family(gamma, vc_dim)?;
    let max_slack = max_slack.min(n_test - 1);
    let beta = profile.tabulate(n_test.max(n_cal));
    let beta_gap = beta[n_cal as usize];
    let nf = n_test as f64;
    let plan = search_plans(
        0..=max_slack,
        |s| n_test - s,
        |s| 2.0 * s as f64 / nf / gamma,
        |len, count, _| {
            let budget = delta_test - 8.0 * (count - 1) as f64 * beta[len as usize] - beta_gap;
            if budget <= 0.0 {
                return None;
            }
            let m = count as f64;
            Some((uniform_deviation(count, vc_dim) + 2.0 * ((8.0 / budget).ln() / (2.0 * m)).sqrt()) / gamma)
        },
    );
    finish(plan, |e| e >= 1.0)
}

/// Decoupling term between the training window and a test point `gap`
/// steps after its end. `gap = 1` is the conservative choice when the test
/// index is not fixed.
pub fn eps_train(gap: u64, profile: &MixingProfile) -> f64 {
    profile.beta(gap.max(1))
}

/// `ε_cal + ε_train + δ_cal`
pub fn eta_marginal(params: &ConfidenceParams, eps_cal: f64, eps_train: f64) -> f64 {
    eps_cal + eps_train + params.delta_cal
}

/// `ε_cal + ε_test`
pub fn eta_empirical(eps_cal: f64, eps_test: f64) -> f64 {
    eps_cal + eps_test
}

/// Probability with which the empirical-coverage guarantee may fail.
pub fn empirical_failure_budget(params: &ConfidenceParams, two_sided: bool) -> f64 {
    let one = params.delta_cal + params.delta_test;
    if two_sided {
        2.0 * one
    } else {
        one
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Iid,
    BetaMixing,
    Conditional,
}

/// The pieces of a coverage guarantee and the `eta` assembled from them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionFactors {
    pub eps_cal: f64,
    pub eps_test: f64,
    pub eps_train: f64,
    pub eta: f64,
    pub plan_cal: Option<BlockPlan>,
    pub plan_test: Option<BlockPlan>,
    pub regime: Regime,
    /// Whether `eta` includes `δ_cal` (marginal guarantees) or not (empirical).
    pub includes_delta_cal: bool,
    pub delta_cal: f64,
}

impl CorrectionFactors {
    /// Marginal coverage guarantee for a test point `gap` steps after training.
    pub fn marginal(
        params: &ConfidenceParams,
        n_cal: u64,
        profile: &MixingProfile,
        gap: u64,
        variant: VarianceVariant,
    ) -> Result<Self> {
        let cal = eps_cal_beta(n_cal, params.delta_cal, profile, variant)?;
        let train = eps_train(gap, profile);
        Ok(Self {
            eps_cal: cal.eps,
            eps_test: 0.0,
            eps_train: train,
            eta: eta_marginal(params, cal.eps, train),
            plan_cal: Some(cal.plan),
            plan_test: None,
            regime: Regime::BetaMixing,
            includes_delta_cal: true,
            delta_cal: params.delta_cal,
        })
    }

    /// Empirical test-coverage guarantee, holding with probability
    /// `1 − δ_cal − δ_test`.
    pub fn empirical(
        params: &ConfidenceParams,
        n_cal: u64,
        n_test: u64,
        profile: &MixingProfile,
        variant: VarianceVariant,
    ) -> Result<Self> {
        let cal = eps_cal_beta(n_cal, params.delta_cal, profile, variant)?;
        let test = eps_test_beta(n_test, n_cal, params.delta_test, profile, variant)?;
        Ok(Self {
            eps_cal: cal.eps,
            eps_test: test.eps,
            eps_train: 0.0,
            eta: eta_empirical(cal.eps, test.eps),
            plan_cal: Some(cal.plan),
            plan_test: Some(test.plan),
            regime: Regime::BetaMixing,
            includes_delta_cal: false,
            delta_cal: params.delta_cal,
        })
    }

    /// Hoeffding-based marginal guarantee for exchangeable data.
    pub fn iid_marginal(params: &ConfidenceParams, n_cal: u64) -> Result<Self> {
        let eps = iid_epsilon(n_cal, params.delta_cal)?;
        Ok(Self {
            eps_cal: eps,
            eps_test: 0.0,
            eps_train: 0.0,
            eta: eta_marginal(params, eps, 0.0),
            plan_cal: None,
            plan_test: None,
            regime: Regime::Iid,
            includes_delta_cal: true,
            delta_cal: params.delta_cal,
        })
    }

    /// Hoeffding-based empirical guarantee for exchangeable data.
    pub fn iid_empirical(params: &ConfidenceParams, n_cal: u64, n_test: u64) -> Result<Self> {
        let cal = iid_epsilon(n_cal, params.delta_cal)?;
        let test = iid_epsilon(n_test, params.delta_test)?;
        Ok(Self {
            eps_cal: cal,
            eps_test: test,
            eps_train: 0.0,
            eta: eta_empirical(cal, test),
            plan_cal: None,
            plan_test: None,
            regime: Regime::Iid,
            includes_delta_cal: false,
            delta_cal: params.delta_cal,
        })
    }

    /// Empirical set-conditional guarantee over a family with `P(A) >= gamma`.
    pub fn conditional_empirical(
        params: &ConfidenceParams,
        n_cal: u64,
        n_test: u64,
        profile: &MixingProfile,
        gamma: f64,
        vc_dim: u32,
    ) -> Result<Self> {
        let cal = eps_cal_conditional(n_cal, params.delta_cal, profile, gamma, vc_dim)?;
        let test = eps_test_conditional(n_test, n_cal, params.delta_test, profile, gamma, vc_dim)?;
        Ok(Self {
            eps_cal: cal.eps,
            eps_test: test.eps,
            eps_train: 0.0,
            eta: eta_empirical(cal.eps, test.eps),
            plan_cal: Some(cal.plan),
            plan_test: Some(test.plan),
            regime: Regime::Conditional,
            includes_delta_cal: false,
            delta_cal: params.delta_cal,
        })
    }

    /// Rebuilds `eta` from the stored components.
    pub fn recompute_eta(&self) -> f64 {
        let delta = if self.includes_delta_cal { self.delta_cal } else { 0.0 };
        self.eps_cal + self.eps_train + self.eps_test + delta
    }
}

/// Monte Carlo estimate of the population φ-quantile of a fixed score, from
/// `n_mc` fresh draws of `sampler`.
pub fn estimate_population_quantile<S, F>(
    mut sampler: F,
    score: &S,
    phi: QuantileLevel,
    n_mc: usize,
    seed: u64,
) -> Result<f64>
where
    S: ConformityScore + ?Sized,
    F: FnMut(&mut SimRng) -> (Vec<f64>, f64),
{
    if n_mc < 10_000 {
        return Err(Error::BadParameter(format!("n_mc = {n_mc} is below 10000")));
    }
    let mut rng = seeded(seed);
    let scores: Vec<f64> = (0..n_mc)
        .map(|_| {
            let (x, y) = sampler(&mut rng);
            score.score(&x, y)
        })
        .collect();
    empirical_quantile(&scores, phi)
}
