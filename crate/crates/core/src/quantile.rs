//! Empirical quantiles in infimum form.
//!
//! The φ-quantile of `s_1..s_n` is `inf { t : #{i : s_i <= t} / n >= φ }`,
//! which is always one of the order statistics. No interpolation is done and
//! ties are counted by mass.

use crate::error::{Error, Result};

/// A quantile level in the open interval (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(phi: f64) -> Result<Self> {
        if phi > 0.0 && phi < 1.0 {
            Ok(Self(phi))
        } else {
            Err(Error::BadParameter(format!("quantile level {phi} is not in (0, 1)")))
        }
    }

    /// The `1 - alpha` level used for calibration.
    pub fn from_alpha(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Self::new(1.0 - alpha)
        } else {
            Err(Error::BadParameter(format!("alpha {alpha} is not in (0, 1)")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Smallest `k` in `1..=n` with `k / n >= phi`, evaluated with the same
/// floating-point predicate a direct scan would use.
pub(crate) fn order_index(n: usize, phi: f64) -> usize {
    debug_assert!(n > 0);
    let nf = n as f64;
    let mut k = ((phi * nf).ceil() as usize).clamp(1, n);
    while k > 1 && ((k - 1) as f64) / nf >= phi {
        k -= 1;
    }
    while k < n && (k as f64) / nf < phi {
        k += 1;
    }
    k
}

fn kth_smallest(values: &mut [f64], k: usize) -> f64 {
    let (_, v, _) = values.select_nth_unstable_by(k - 1, f64::total_cmp);
    *v
}

pub fn empirical_quantile(scores: &[f64], phi: QuantileLevel) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidData("non-finite score".into()));
    }
    let mut buf = scores.to_vec();
    let k = order_index(buf.len(), phi.value());
    Ok(kth_smallest(&mut buf, k))
}

/// Empirical quantile restricted to the points whose covariate lies in `set`.
pub fn conditional_empirical_quantile<'a, I, F>(
    scores: &[f64],
    covariates: I,
    set: F,
    phi: QuantileLevel,
) -> Result<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
    F: Fn(&[f64]) -> bool,
{
    let mut selected = Vec::new();
    let mut n_cov = 0;
    for (x, &s) in covariates.into_iter().zip(scores) {
        n_cov += 1;
        if set(x) {
            selected.push(s);
        }
    }
    if n_cov != scores.len() {
        return Err(Error::SizeMismatch(format!("{} scores but {} covariates", scores.len(), n_cov)));
    }
    if selected.is_empty() {
        return Err(Error::EmptyConditionSet("<set>".into()));
    }
    empirical_quantile(&selected, phi)
}

/// Quantile of all test scores except the one at `held_out` (zero-based).
pub fn roo_quantile(test_scores: &[f64], held_out: usize, phi: QuantileLevel) -> Result<f64> {
    let n = test_scores.len();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    if held_out >= n {
        return Err(Error::BadParameter(format!("held-out index {held_out} out of range for {n} scores")));
    }
    let rest: Vec<f64> = test_scores.iter().enumerate().filter(|&(j, _)| j != held_out).map(|(_, &s)| s).collect();
    empirical_quantile(&rest, phi)
}

/// All rank-one-out thresholds at once, in `O(n log n)`.
pub(crate) fn roo_quantiles(test_scores: &[f64], phi: QuantileLevel) -> Result<Vec<f64>> {
    let n = test_scores.len();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    if test_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidData("non-finite score".into()));
    }
    let mut sorted = test_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = order_index(n - 1, phi.value());
    Ok(test_scores
        .iter()
        .map(|s| {
            // Removing any copy of a tied value leaves the same multiset, so
            // the first position of the value is enough.
            let p = sorted.partition_point(|v| v.total_cmp(s).is_lt());
            if k - 1 < p {
                sorted[k - 1]
            } else {
                sorted[k]
            }
        })
        .collect())
}
