//! β-mixing coefficient profiles.
//!
//! A [`MixingProfile`] maps a lag `r >= 1` to `β(r) ∈ [0, 1]`, nonincreasing
//! in `r`. Profiles come from exact finite-state Markov computations, numerical
//! integration for the Gaussian AR(1), parametric decay families, or a
//! user-supplied table.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::{normal_cdf, normal_sf};

const STOCHASTIC_TOL: f64 = 1e-12;
const DIRECT_SOLVE_MAX_STATES: usize = 64;

/// Square row-stochastic matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    k: usize,
    data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::NotStochastic("empty matrix".into()));
        }
        let mut data = Vec::with_capacity(k * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::NotStochastic(format!("row {i} has {} entries, expected {k}", row.len())));
            }
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::NotStochastic(format!("row {i} has an entry outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::NotStochastic(format!("row {i} sums to {sum}")));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { k, data })
    }

    pub fn states(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.k + j]
    }

    fn mul(&self, other: &Self) -> Self {
        let k = self.k;
        let mut out = vec![0.0; k * k];
        for i in 0..k {
            for l in 0..k {
                let a = self.data[i * k + l];
                if a == 0.0 {
                    continue;
                }
                for j in 0..k {
                    out[i * k + j] += a * other.data[l * k + j];
                }
            }
        }
        Self { k, data: out }
    }

    fn identity(k: usize) -> Self {
        let mut data = vec![0.0; k * k];
        for i in 0..k {
            data[i * k + i] = 1.0;
        }
        Self { k, data }
    }

    /// Product of two stochastic matrices with rows rescaled to sum to 1.
    /// Without the rescale, row-sum rounding errors double at every squaring
    /// and `β(r)` picks up a floor growing linearly in `r`.
    fn mul_stochastic(&self, other: &Self) -> Self {
        let mut out = self.mul(other);
        let k = self.k;
        for row in out.data.chunks_mut(k) {
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
        }
        out
    }

    /// `P^r` by repeated squaring.
    pub fn power(&self, mut r: u64) -> Self {
        let mut result = Self::identity(self.k);
        let mut base = self.clone();
        while r > 0 {
            if r & 1 == 1 {
                result = result.mul_stochastic(&base);
            }
            r >>= 1;
            if r > 0 {
                base = base.mul_stochastic(&base);
            }
        }
        result
    }

    /// Solves `πP = π`, `Σπ = 1`.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        if self.k <= DIRECT_SOLVE_MAX_STATES {
            self.stationary_direct()
        } else {
            self.stationary_power()
        }
    }

    fn stationary_direct(&self) -> Result<Vec<f64>> {
        let k = self.k;
        // Rows of (Pᵀ - I) with the last equation replaced by Σπ = 1.
        let mut a = vec![0.0; k * k];
        let mut b = vec![0.0; k];
        for i in 0..k {
            for j in 0..k {
                a[i * k + j] = self.get(j, i) - if i == j { 1.0 } else { 0.0 };
            }
        }
        for j in 0..k {
            a[(k - 1) * k + j] = 1.0;
        }
        b[k - 1] = 1.0;

        for col in 0..k {
            let pivot = (col..k)
                .max_by(|&x, &y| a[x * k + col].abs().total_cmp(&a[y * k + col].abs()))
                .expect("nonempty range");
            if a[pivot * k + col].abs() < 1e-12 {
                return Err(Error::NoUniqueStationary);
            }
            if pivot != col {
                for j in 0..k {
                    a.swap(pivot * k + j, col * k + j);
                }
                b.swap(pivot, col);
            }
            let d = a[col * k + col];
            for row in col + 1..k {
                let f = a[row * k + col] / d;
                if f != 0.0 {
                    for j in col..k {
                        a[row * k + j] -= f * a[col * k + j];
                    }
                    b[row] -= f * b[col];
                }
            }
        }
        let mut pi = vec![0.0; k];
        for row in (0..k).rev() {
            let s: f64 = (row + 1..k).map(|j| a[row * k + j] * pi[j]).sum();
            pi[row] = (b[row] - s) / a[row * k + row];
        }
        if pi.iter().any(|&v| v < -1e-10) {
            return Err(Error::NoUniqueStationary);
        }
        Ok(pi.into_iter().map(|v| v.max(0.0)).collect())
    }

    fn stationary_power(&self) -> Result<Vec<f64>> {
        let k = self.k;
        let mut pi = vec![1.0 / k as f64; k];
        for _ in 0..1_000_000 {
            let mut next = vec![0.0; k];
            for i in 0..k {
                for j in 0..k {
                    next[j] += pi[i] * self.get(i, j);
                }
            }
            let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            let norm: f64 = next.iter().sum();
            pi = next;
            if diff <= 1e-14 * norm {
                return Ok(pi);
            }
        }
        Err(Error::NoUniqueStationary)
    }
}

fn tv_beta_from_power(power: &TransitionMatrix, pi: &[f64]) -> f64 {
    let k = power.k;
    let mut beta = 0.0;
    for x in 0..k {
        let row: f64 = (0..k).map(|y| (power.get(x, y) - pi[y]).abs()).sum();
        beta += pi[x] * 0.5 * row;
    }
    beta.clamp(0.0, 1.0)
}

/// `β(r) = Σ_x π(x) · ½ Σ_y |P^r(x, y) − π(y)|` for a finite chain.
pub fn markov_beta(matrix: &TransitionMatrix, r: u64) -> Result<f64> {
    let pi = matrix.stationary()?;
    Ok(tv_beta_from_power(&matrix.power(r), &pi))
}

/// Two-state chain with switch probabilities `p` (0→1) and `q` (1→0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStateChain {
    p: f64,
    q: f64,
}

impl TwoStateChain {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0 && q > 0.0 && q < 1.0) {
            return Err(Error::BadParameter(format!("switch probabilities ({p}, {q}) must be in (0, 1)")));
        }
        Ok(Self { p, q })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn pi(&self) -> [f64; 2] {
        let s = self.p + self.q;
        [self.q / s, self.p / s]
    }

    pub fn matrix(&self) -> TransitionMatrix {
        TransitionMatrix::new(&[vec![1.0 - self.p, self.p], vec![self.q, 1.0 - self.q]]).expect("valid two-state chain")
    }

    /// `2pq |1 − p − q|^r / (p + q)²`
    pub fn beta_closed_form(&self, r: u64) -> f64 {
        let s = self.p + self.q;
        2.0 * self.p * self.q * (1.0 - s).abs().powf(r as f64) / (s * s)
    }
}

/// Quadrature settings for the AR(1) outer integral over the stationary law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    /// Domain is `±half_width` stationary standard deviations.
    pub half_width: f64,
    /// Total node count; a multiple of 8 (composite 8-point Gauss–Legendre).
    pub nodes: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self { half_width: 8.0, nodes: 512 }
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Probability that `N(mean, var)` lands in `[lo, hi]`.
fn normal_mass(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let (a, b) = ((lo - mean) / sd, (hi - mean) / sd);
    if a >= 0.0 {
        normal_sf(a) - normal_sf(b)
    } else if b <= 0.0 {
        normal_cdf(b) - normal_cdf(a)
    } else {
        1.0 - normal_cdf(a) - normal_sf(b)
    }
}

/// Total variation between `N(m1, v1)` and `N(m2, v2)` from the density
/// crossing points. `dv = v1 − v2` is passed separately so nearly equal
/// variances do not cancel.
pub(crate) fn gaussian_tv(m1: f64, v1: f64, m2: f64, v2: f64, dv: f64) -> f64 {
    let (s1, s2) = (v1.sqrt(), v2.sqrt());
    // g(x) = log f1(x) − log f2(x) = a x² + b x + c
    let a = dv / (2.0 * v1 * v2);
    let b = m1 / v1 - m2 / v2;
    let c = m2 * m2 / (2.0 * v2) - m1 * m1 / (2.0 * v1) - 0.5 * (dv / v2).ln_1p();
    let tv = if a == 0.0 {
        if b == 0.0 {
            return 0.0;
        }
        let x0 = -c / b;
        // f1 > f2 on the side where b x + c > 0.
        let (m1_side, m2_side) = if b > 0.0 {
            (normal_mass(m1, s1, x0, f64::INFINITY), normal_mass(m2, s2, x0, f64::INFINITY))
        } else {
            (normal_mass(m1, s1, f64::NEG_INFINITY, x0), normal_mass(m2, s2, f64::NEG_INFINITY, x0))
        };
        m1_side - m2_side
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc <= 0.0 {
            return 0.0;
        }
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        let (mut r1, mut r2) = if q == 0.0 {
            let h = (-c / a).sqrt();
            (-h, h)
        } else {
            (q / a, c / q)
        };
        if r1 > r2 {
            std::mem::swap(&mut r1, &mut r2);
        }
        let inside1 = normal_mass(m1, s1, r1, r2);
        let inside2 = normal_mass(m2, s2, r1, r2);
        if a < 0.0 {
            inside1 - inside2
        } else {
            inside2 - inside1
        }
    };
    tv.clamp(0.0, 1.0)
}

/// β(r) for the stationary Gaussian AR(1) `W_t = λ W_{t−1} + N(0, 1)`.
pub fn ar1_beta(lambda: f64, r: u64, quad: Quadrature) -> Result<f64> {
    if !(lambda.abs() < 1.0) {
        return Err(Error::NonStationaryLambda(lambda));
    }
    if quad.nodes < 8 || !quad.nodes.is_multiple_of(8) || !(quad.half_width > 0.0) {
        return Err(Error::BadParameter(format!("bad quadrature {quad:?}")));
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let one_minus_l2 = 1.0 - lambda * lambda;
    let v_stat = 1.0 / one_minus_l2;
    let lr = lambda.powf(r as f64);
    // Kernel variance (1 − λ^{2r})/(1 − λ²) minus the stationary one.
    let dv = -(lr * lr) / one_minus_l2;
    let v_kernel = v_stat + dv;
    let sd_stat = v_stat.sqrt();

    let panels = quad.nodes / 8;
    let gl = gauss_legendre(8);
    let width = 2.0 * quad.half_width / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = -quad.half_width + p as f64 * width;
        for &(node, w) in &gl {
            let z = lo + 0.5 * width * (node + 1.0);
            let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let x = sd_stat * z;
            total += 0.5 * width * w * density * gaussian_tv(lr * x, v_kernel, 0.0, v_stat, dv);
        }
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Where a profile's coefficients came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Independent,
    ExactMarkov,
    Ar1Numeric { lambda: f64 },
    Geometric { c: f64, rho: f64 },
    Polynomial { b: f64 },
    UserTable,
}

#[derive(Debug, Clone)]
enum Repr {
    Zero,
    Geometric {
        c: f64,
        rho: f64,
    },
    Polynomial {
        b: f64,
    },
    /// `lags` strictly increasing; β(r) is the entry at the largest listed
    /// lag `<= r`, and 1 before the first one.
    Table {
        lags: Vec<u64>,
        betas: Vec<f64>,
    },
    Markov {
        matrix: Arc<TransitionMatrix>,
        pi: Arc<Vec<f64>>,
    },
}

/// Nonincreasing map `r ↦ β(r) ∈ [0, 1]`.
#[derive(Debug, Clone)]
pub struct MixingProfile {
    repr: Repr,
    provenance: Provenance,
}

/// Parametric decay family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParametricKind {
    /// `min(1, c ρ^r)`
    Geometric { c: f64, rho: f64 },
    /// `min(1, r^{−b})`
    Polynomial { b: f64 },
}

pub fn parametric_profile(kind: ParametricKind) -> Result<MixingProfile> {
    match kind {
        ParametricKind::Geometric { c, rho } => {
            if !(c > 0.0 && c.is_finite() && rho > 0.0 && rho < 1.0) {
                return Err(Error::BadParameter(format!(
                    "geometric profile needs c > 0 and ρ in (0, 1), got ({c}, {rho})"
                )));
            }
            Ok(MixingProfile { repr: Repr::Geometric { c, rho }, provenance: Provenance::Geometric { c, rho } })
        }
        ParametricKind::Polynomial { b } => {
            if !(b > 1.0 && b.is_finite()) {
                return Err(Error::BadParameter(format!("polynomial profile needs b > 1, got {b}")));
            }
            Ok(MixingProfile { repr: Repr::Polynomial { b }, provenance: Provenance::Polynomial { b } })
        }
    }
}

impl MixingProfile {
    /// β ≡ 0.
    pub fn independent() -> Self {
        Self { repr: Repr::Zero, provenance: Provenance::Independent }
    }

    /// β ≡ `value`; mostly useful for degenerate checks.
    pub fn constant(value: f64) -> Result<Self> {
        Self::from_table(vec![1], vec![value])
    }

    pub fn markov(matrix: TransitionMatrix) -> Result<Self> {
        let pi = matrix.stationary()?;
        Ok(Self {
            repr: Repr::Markov { matrix: Arc::new(matrix), pi: Arc::new(pi) },
            provenance: Provenance::ExactMarkov,
        })
    }

    /// Numerically integrated AR(1) coefficients for lags `1..=max_lag`.
    /// Tabulation stops early once β drops below 1e-15; later lags reuse the
    /// last value.
    pub fn ar1(lambda: f64, max_lag: u64, quad: Quadrature) -> Result<Self> {
        let mut lags = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        for r in 1..=max_lag.max(1) {
            let b = ar1_beta(lambda, r, quad)?;
            // Quadrature noise must not break monotonicity.
            let b = betas.last().map_or(b, |&prev| b.min(prev));
            lags.push(r);
            betas.push(b);
            if b < 1e-15 {
                break;
            }
        }
        let mut p = Self::from_table(lags, betas)?;
        p.provenance = Provenance::Ar1Numeric { lambda };
        Ok(p)
    }

    pub fn from_table(lags: Vec<u64>, betas: Vec<f64>) -> Result<Self> {
        if lags.is_empty() || lags.len() != betas.len() {
            return Err(Error::BadParameter("profile table must have matching, nonempty columns".into()));
        }
        if lags[0] == 0 {
            return Err(Error::BadParameter("lags start at 1".into()));
        }
        if lags.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::BadParameter("lags must be strictly increasing".into()));
        }
        if betas.iter().any(|b| !(*b >= 0.0 && *b <= 1.0)) {
            return Err(Error::BadParameter("coefficients must lie in [0, 1]".into()));
        }
        if betas.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::BadParameter("coefficients must be nonincreasing in the lag".into()));
        }
        Ok(Self { repr: Repr::Table { lags, betas }, provenance: Provenance::UserTable })
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn beta(&self, r: u64) -> f64 {
        if r == 0 {
            return 1.0;
        }
        match &self.repr {
            Repr::Zero => 0.0,
            Repr::Geometric { c, rho } => (c * rho.powf(r as f64)).min(1.0),
            Repr::Polynomial { b } => (r as f64).powf(-b).min(1.0),
            Repr::Table { lags, betas } => {
                let idx = lags.partition_point(|&l| l <= r);
                if idx == 0 {
                    1.0
                } else {
                    betas[idx - 1]
                }
            }
            Repr::Markov { matrix, pi } => tv_beta_from_power(&matrix.power(r), pi),
        }
    }

    /// `β(0..=max_lag)` with `β(0) = 1`, forced nonincreasing.
    pub fn tabulate(&self, max_lag: u64) -> Vec<f64> {
        let n = max_lag as usize;
        let mut out = Vec::with_capacity(n + 1);
        out.push(1.0);
        match &self.repr {
            // Small chains go through the same repeated squaring as `beta`,
            // so tabulated and pointwise values agree bit for bit.
            Repr::Markov { matrix, .. } if matrix.states() <= 8 => out.extend((1..=max_lag).map(|r| self.beta(r))),
            Repr::Markov { matrix, pi } => {
                let mut power = (**matrix).clone();
                for r in 1..=n {
                    if r > 1 {
                        power = power.mul_stochastic(matrix);
                    }
                    out.push(tv_beta_from_power(&power, pi));
                }
            }
            _ => out.extend((1..=max_lag).map(|r| self.beta(r))),
        }
        for i in 1..out.len() {
            out[i] = out[i].min(out[i - 1]);
        }
        out
    }

    /// True when every coefficient of `self` is at least the one of `other`
    /// over `1..=max_lag`.
    pub fn dominates(&self, other: &Self, max_lag: u64) -> bool {
        self.tabulate(max_lag).iter().zip(other.tabulate(max_lag)).all(|(a, b)| *a >= b)
    }
}

/// Parses the two-column `r,beta` profile format.
///
/// Blank lines and lines starting with `#` are skipped; a first data line
/// that does not parse as numbers is treated as a header.
pub fn parse_profile_table(text: &str) -> Result<MixingProfile> {
    let mut lags = Vec::new();
    let mut betas = Vec::new();
    let mut seen_data = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let (r, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(r), Some(b), None) => (r, b),
            _ => return Err(Error::Parse { line: line_no, msg: "expected two comma-separated columns".into() }),
        };
        let parsed = (r.parse::<u64>(), b.parse::<f64>());
        match parsed {
            (Ok(r), Ok(b)) if b.is_finite() => {
                seen_data = true;
                if let Some(&last) = lags.last() {
                    if r <= last {
                        return Err(Error::Parse { line: line_no, msg: "lags must be strictly increasing".into() });
                    }
                }
                lags.push(r);
                betas.push(b);
            }
            _ if !seen_data && lags.is_empty() && r.parse::<f64>().is_err() => continue,
            _ => return Err(Error::Parse { line: line_no, msg: format!("cannot parse `{line}`") }),
        }
    }
    MixingProfile::from_table(lags, betas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// P^r by r−1 plain multiplications, no squaring.
    fn dense_power(m: &TransitionMatrix, r: u64) -> Vec<Vec<f64>> {
        let k = m.states();
        let mut acc: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| m.get(i, j)).collect()).collect();
        for _ in 1..r {
            let mut next = vec![vec![0.0; k]; k];
            for i in 0..k {
                for j in 0..k {
                    next[i][j] = (0..k).map(|l| acc[i][l] * m.get(l, j)).sum();
                }
            }
            acc = next;
        }
        acc
    }

    fn oracle_two_state_beta(p: f64, q: f64, r: u64) -> f64 {
        let chain = TwoStateChain::new(p, q).unwrap();
        let pr = dense_power(&chain.matrix(), r);
        // π from the 2×2 balance equation π0 p = π1 q.
        let pi = [q / (p + q), p / (p + q)];
        (0..2).map(|x| pi[x] * 0.5 * (0..2).map(|y| (pr[x][y] - pi[y]).abs()).sum::<f64>()).sum()
    }

    #[test]
    fn two_state_examples() {
        let m = TwoStateChain::new(0.5, 0.5).unwrap().matrix();
        for r in [1, 2, 7, 100] {
            assert_eq!(markov_beta(&m, r).unwrap(), 0.0);
        }
        let m = TwoStateChain::new(0.1, 0.1).unwrap().matrix();
        assert!((markov_beta(&m, 1).unwrap() - 0.4).abs() < 1e-14);
        assert!((oracle_two_state_beta(0.1, 0.1, 1) - 0.4).abs() < 1e-14);
        assert!(markov_beta(&m, 64).unwrap() < markov_beta(&m, 1).unwrap());
    }

    #[test]
    fn no_rounding_floor_at_large_lags() {
        let m = TwoStateChain::new(0.2, 0.2).unwrap().matrix();
        for r in [1_000, 100_000, 1 << 40] {
            assert!(markov_beta(&m, r).unwrap() < 1e-15, "r = {r}");
        }
    }

    #[test]
    fn closed_form_agrees_with_oracle() {
        // The closed form is only trusted after checking it against the oracle.
        for &p in &[0.05, 0.3, 0.77] {
            for &q in &[0.1, 0.5, 0.95] {
                let c = TwoStateChain::new(p, q).unwrap();
                for r in 1..=20 {
                    assert!((c.beta_closed_form(r) - oracle_two_state_beta(p, q, r)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn grid_against_dense_oracle() {
        let grid: Vec<f64> = (1..=19).map(|i| i as f64 * 0.05).collect();
        for &p in &grid {
            for &q in &grid {
                let m = TwoStateChain::new(p, q).unwrap().matrix();
                for r in 1..=20 {
                    let got = markov_beta(&m, r).unwrap();
                    let want = oracle_two_state_beta(p, q, r);
                    assert!((got - want).abs() <= 1e-12, "p={p} q={q} r={r}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn general_chain_stationary() {
        let m = TransitionMatrix::new(&[vec![0.5, 0.3, 0.2], vec![0.1, 0.8, 0.1], vec![0.25, 0.25, 0.5]]).unwrap();
        let pi = m.stationary().unwrap();
        for j in 0..3 {
            let next: f64 = (0..3).map(|i| pi[i] * m.get(i, j)).sum();
            assert!((next - pi[j]).abs() < 1e-14);
        }
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let b1 = markov_beta(&m, 1).unwrap();
        let b5 = markov_beta(&m, 5).unwrap();
        assert!(b1 > b5 && b5 > 0.0);
        // Power iteration path agrees with the direct solve.
        let pw = m.stationary_power().unwrap();
        for j in 0..3 {
            assert!((pw[j] - pi[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn matrix_errors() {
        assert!(matches!(TransitionMatrix::new(&[vec![0.5, 0.6], vec![0.5, 0.5]]), Err(Error::NotStochastic(_))));
        assert!(matches!(TransitionMatrix::new(&[vec![1.0]]).map(|_| ()), Ok(())));
        let reducible = TransitionMatrix::new(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(markov_beta(&reducible, 1), Err(Error::NoUniqueStationary));
    }

    #[test]
    fn ar1_basics() {
        let q = Quadrature::default();
        assert_eq!(ar1_beta(0.0, 3, q).unwrap(), 0.0);
        let (b1, b5, b20) = (ar1_beta(0.5, 1, q).unwrap(), ar1_beta(0.5, 5, q).unwrap(), ar1_beta(0.5, 20, q).unwrap());
        assert!(b1 > b5 && b5 > b20 && b20 > 0.0, "{b1} {b5} {b20}");
        assert_eq!(ar1_beta(1.0, 1, q), Err(Error::NonStationaryLambda(1.0)));
    }

    #[test]
    fn gaussian_tv_reference_values() {
        // Equal variances: TV = 2Φ(d/2) − 1.
        let tv = gaussian_tv(1.0, 1.0, 0.0, 1.0, 0.0);
        assert!((tv - (2.0 * normal_cdf(0.5) - 1.0)).abs() < 1e-14);
        // Same mean, variance ratio 4: crossing at ±sqrt(8 ln 2 / 3).
        let x = (8.0 * 2f64.ln() / 3.0).sqrt();
        let want = (2.0 * normal_cdf(x) - 1.0) - (2.0 * normal_cdf(x / 2.0) - 1.0);
        let tv = gaussian_tv(0.0, 1.0, 0.0, 4.0, -3.0);
        assert!((tv - want).abs() < 1e-14, "{tv} vs {want}");
    }

    /// Stratified sampling of x from π, with the TV at each x taken by a
    /// fine-grid integral of |f − g| / 2.
    fn ar1_beta_mc_oracle(lambda: f64, r: u64) -> f64 {
        use crate::rng::{normal_quantile, seeded, uniform_open};
        let v_stat = 1.0 / (1.0 - lambda * lambda);
        let lr = lambda.powi(r as i32);
        let v_ker = (1.0 - lr * lr) / (1.0 - lambda * lambda);
        let pdf =
            |y: f64, m: f64, v: f64| (-(y - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        let strata = 4000;
        let mut rng = seeded(2024);
        let sd = v_stat.sqrt();
        let (lo, hi, cells) = (-12.0 * sd, 12.0 * sd, 3000);
        let h = (hi - lo) / cells as f64;
        let mut acc = 0.0;
        for s in 0..strata {
            let u = (s as f64 + uniform_open(&mut rng)) / strata as f64;
            let x = sd * normal_quantile(u);
            let m = lr * x;
            let mut tv = 0.0;
            for c in 0..cells {
                let y = lo + (c as f64 + 0.5) * h;
                tv += (pdf(y, m, v_ker) - pdf(y, 0.0, v_stat)).abs();
            }
            acc += 0.5 * tv * h;
        }
        acc / strata as f64
    }

    #[test]
    fn ar1_matches_monte_carlo_oracle() {
        let got = ar1_beta(0.9, 1, Quadrature::default()).unwrap();
        let want = ar1_beta_mc_oracle(0.9, 1);
        assert!((got - want).abs() < 1e-3, "{got} vs {want}");
    }

    #[test]
    fn parametric_examples() {
        let g = parametric_profile(ParametricKind::Geometric { c: 1.0, rho: 0.5 }).unwrap();
        assert_eq!(g.beta(3), 0.125);
        let p = parametric_profile(ParametricKind::Polynomial { b: 2.0 }).unwrap();
        assert!((p.beta(10) - 0.01).abs() < 1e-16);
        let clamped = parametric_profile(ParametricKind::Geometric { c: 5.0, rho: 0.5 }).unwrap();
        assert_eq!(clamped.beta(1), 1.0);
        assert!(parametric_profile(ParametricKind::Geometric { c: 1.0, rho: 1.0 }).is_err());
        assert!(parametric_profile(ParametricKind::Polynomial { b: 1.0 }).is_err());
    }

    #[test]
    fn table_format() {
        let p = parse_profile_table("r,beta\n# comment\n1,0.5\n3,0.25\n\n10,0.01\n").unwrap();
        assert_eq!(p.beta(1), 0.5);
        assert_eq!(p.beta(2), 0.5);
        assert_eq!(p.beta(3), 0.25);
        assert_eq!(p.beta(1000), 0.01);
        assert!(matches!(parse_profile_table("1,0.5\n1,0.4\n"), Err(Error::Parse { line: 2, .. })));
        assert!(parse_profile_table("1,0.5\n2,0.6\n").is_err());
        assert!(parse_profile_table("1,1.5\n").is_err());
        assert!(matches!(parse_profile_table("1,abc\n"), Err(Error::Parse { line: 1, .. })));
        let late = parse_profile_table("5,0.2\n").unwrap();
        assert_eq!(late.beta(4), 1.0);
    }

    #[test]
    fn markov_profile_tabulation_matches_pointwise() {
        let chain = TwoStateChain::new(0.2, 0.3).unwrap();
        let prof = MixingProfile::markov(chain.matrix()).unwrap();
        let tab = prof.tabulate(30);
        for r in 1..=30u64 {
            assert!((tab[r as usize] - chain.beta_closed_form(r)).abs() < 1e-12);
            assert!((prof.beta(r) - chain.beta_closed_form(r)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn profiles_are_monotone_and_bounded(c in 0.01f64..10.0, rho in 0.01f64..0.99, b in 1.01f64..5.0,
                                             p in 0.01f64..0.99, q in 0.01f64..0.99) {
            let profiles = [
                parametric_profile(ParametricKind::Geometric { c, rho }).unwrap(),
                parametric_profile(ParametricKind::Polynomial { b }).unwrap(),
                MixingProfile::markov(TwoStateChain::new(p, q).unwrap().matrix()).unwrap(),
            ];
            for prof in &profiles {
                let mut prev = 1.0;
                for r in 1..=60u64 {
                    let v = prof.beta(r);
                    prop_assert!((0.0..=1.0).contains(&v));
                    prop_assert!(v <= prev + 1e-15);
                    prev = v;
                }
            }
        }
    }
}
