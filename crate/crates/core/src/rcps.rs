//! Risk-controlling prediction sets over a nested family of tolerance
//! regions indexed by a finite grid of λ values.

use crate::data::SupervisedDataset;
use crate::error::{Error, Result};
use crate::splitcp::ConformityScore;

/// A set of responses.
pub trait Membership {
    fn contains(&self, y: f64) -> bool;
}

/// Tolerance regions `T_λ(x)`, nested in λ.
pub trait ToleranceRegion {
    type Set<'a>: Membership
    where
        Self: 'a;

    fn region<'a>(&'a self, x: &'a [f64], lambda: f64) -> Self::Set<'a>;
}

/// Loss of a response against a set; must not increase when the set grows.
pub trait Loss {
    fn loss(&self, y: f64, set: &dyn Membership) -> f64;

    /// Uniform bound on the loss, when known.
    fn bound(&self) -> Option<f64> {
        None
    }
}

impl<F: Fn(f64, &dyn Membership) -> f64> Loss for F {
    fn loss(&self, y: f64, set: &dyn Membership) -> f64 {
        self(y, set)
    }
}

/// `1{y ∉ T}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MiscoverageLoss;

impl Loss for MiscoverageLoss {
    fn loss(&self, y: f64, set: &dyn Membership) -> f64 {
        if set.contains(y) {
            0.0
        } else {
            1.0
        }
    }

    fn bound(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// Closed interval; `[-∞, ∞]` is the whole line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalSet {
    pub lo: f64,
    pub hi: f64,
}

impl Membership for IntervalSet {
    fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }
}

/// `T_λ(x) = [μ(x) − λ, μ(x) + λ]`.
#[derive(Debug, Clone)]
pub struct SymmetricIntervals<F> {
    center: F,
}

impl<F: Fn(&[f64]) -> f64> SymmetricIntervals<F> {
    pub fn new(center: F) -> Self {
        Self { center }
    }
}

impl<F: Fn(&[f64]) -> f64> ToleranceRegion for SymmetricIntervals<F> {
    type Set<'a>
        = IntervalSet
    where
        Self: 'a;

    fn region<'a>(&'a self, x: &'a [f64], lambda: f64) -> IntervalSet {
        if lambda == f64::INFINITY {
            return IntervalSet { lo: f64::NEG_INFINITY, hi: f64::INFINITY };
        }
        let c = (self.center)(x);
        IntervalSet { lo: c - lambda, hi: c + lambda }
    }
}

/// `T_λ(x) = {y : s(x, y) <= λ}` for a conformity score.
#[derive(Debug, Clone)]
pub struct ScoreSublevel<S> {
    score: S,
}

impl<S: ConformityScore> ScoreSublevel<S> {
    pub fn new(score: S) -> Self {
        Self { score }
    }
}

pub struct SublevelSet<'a, S> {
    score: &'a S,
    x: &'a [f64],
    lambda: f64,
}

impl<S: ConformityScore> Membership for SublevelSet<'_, S> {
    fn contains(&self, y: f64) -> bool {
        self.score.score(self.x, y) <= self.lambda
    }
}

impl<S: ConformityScore> ToleranceRegion for ScoreSublevel<S> {
    type Set<'a>
        = SublevelSet<'a, S>
    where
        Self: 'a;

    fn region<'a>(&'a self, x: &'a [f64], lambda: f64) -> SublevelSet<'a, S> {
        SublevelSet { score: &self.score, x, lambda }
    }
}

/// Tolerance regions together with the λ grid they are searched over.
#[derive(Debug, Clone)]
pub struct NestedFamily<T> {
    regions: T,
    grid: Vec<f64>,
}

impl<T: ToleranceRegion> NestedFamily<T> {
    /// `grid` must be strictly increasing; `+∞` is allowed as the last value.
    pub fn new(regions: T, grid: Vec<f64>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::BadParameter("λ grid is empty".into()));
        }
        if grid.iter().any(|g| g.is_nan() || *g == f64::NEG_INFINITY) {
            return Err(Error::BadParameter("λ grid contains NaN or −∞".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::BadParameter("λ grid must be strictly increasing".into()));
        }
        Ok(Self { regions, grid })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn regions(&self) -> &T {
        &self.regions
    }

    /// Whether, at every sample, membership never switches off as λ grows.
    pub fn is_nested_on<'a, I>(&self, samples: I) -> bool
    where
        I: IntoIterator<Item = (&'a [f64], f64)>,
    {
        samples.into_iter().all(|(x, y)| {
            let mut inside = false;
            self.grid.iter().all(|&l| {
                let now = self.regions.region(x, l).contains(y);
                let ok = !inside || now;
                inside = now;
                ok
            })
        })
    }
}

fn average_loss<T, L>(family: &NestedFamily<T>, loss: &L, data: &SupervisedDataset, lambda: f64) -> f64
where
    T: ToleranceRegion,
    L: Loss + ?Sized,
{
    let total: f64 = data.rows().map(|(x, y)| loss.loss(y, &family.regions.region(x, lambda))).sum();
    total / data.len() as f64
}

/// Mean calibration loss at a grid value of λ.
pub fn empirical_risk<T, L>(family: &NestedFamily<T>, loss: &L, cal: &SupervisedDataset, lambda: f64) -> Result<f64>
where
    T: ToleranceRegion,
    L: Loss + ?Sized,
{
    if cal.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if !family.grid.contains(&lambda) {
        return Err(Error::LambdaNotInGrid(lambda));
    }
    Ok(average_loss(family, loss, cal, lambda))
}

/// Empirical risk at every grid value.
pub fn risk_curve<T, L>(family: &NestedFamily<T>, loss: &L, cal: &SupervisedDataset) -> Result<Vec<f64>>
where
    T: ToleranceRegion,
    L: Loss + ?Sized,
{
    if cal.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    Ok(family.grid.iter().map(|&l| average_loss(family, loss, cal, l)).collect())
}

/// Smallest grid value above which every grid value has risk below `alpha`.
pub fn threshold_from_risks(grid: &[f64], risks: &[f64], alpha: f64) -> Result<f64> {
    if grid.len() != risks.len() || grid.is_empty() {
        return Err(Error::SizeMismatch(format!("{} grid values, {} risks", grid.len(), risks.len())));
    }
    if risks[risks.len() - 1] >= alpha {
        return Err(Error::NoControllingLambda);
    }
    let idx = risks.iter().rposition(|&r| r >= alpha).unwrap_or(0);
    Ok(grid[idx])
}

/// The empirical threshold `λ̂`.
pub fn rcps_threshold<T, L>(family: &NestedFamily<T>, loss: &L, cal: &SupervisedDataset, alpha: f64) -> Result<f64>
where
    T: ToleranceRegion,
    L: Loss + ?Sized,
{
    threshold_from_risks(&family.grid, &risk_curve(family, loss, cal)?, alpha)
}

/// Mean test loss at `lambda`, which need not be on the grid.
pub fn evaluate_risk<T, L>(family: &NestedFamily<T>, loss: &L, test: &SupervisedDataset, lambda: f64) -> Result<f64>
where
    T: ToleranceRegion,
    L: Loss + ?Sized,
{
    if test.is_empty() {
        return Err(Error::EmptyTest);
    }
    Ok(average_loss(family, loss, test, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ResidualScore;
    use proptest::prelude::*;

    fn data(pairs: &[(f64, f64)]) -> SupervisedDataset {
        SupervisedDataset::from_rows(pairs.iter().map(|&(x, y)| (vec![x], y))).unwrap()
    }

    fn identity_family(grid: Vec<f64>) -> NestedFamily<SymmetricIntervals<impl Fn(&[f64]) -> f64>> {
        NestedFamily::new(SymmetricIntervals::new(|x: &[f64]| x[0]), grid).unwrap()
    }

    /// For each k, checks every strictly larger grid value directly.
    fn scan_oracle(grid: &[f64], risks: &[f64], alpha: f64) -> Option<f64> {
        (0..grid.len())
            .find(|&k| (k + 1..grid.len()).all(|j| risks[j] < alpha) && risks[grid.len() - 1] < alpha)
            .map(|k| grid[k])
    }

    #[test]
    fn threshold_examples() {
        let grid = [1.0, 2.0, 3.0, 4.0];
        let risks = [0.5, 0.3, 0.08, 0.02];
        assert_eq!(threshold_from_risks(&grid, &risks, 0.1).unwrap(), 2.0);
        assert_eq!(scan_oracle(&grid, &risks, 0.1), Some(2.0));
        assert_eq!(threshold_from_risks(&grid, &[0.05, 0.04, 0.0, 0.0], 0.1).unwrap(), 1.0);
        assert_eq!(threshold_from_risks(&grid, &[0.5, 0.4, 0.3, 0.2], 0.1), Err(Error::NoControllingLambda));
    }

    #[test]
    fn risk_examples() {
        let fam = identity_family(vec![0.5, 1.0, f64::INFINITY]);
        let cal = data(&[(0.0, 0.2), (1.0, 1.9), (2.0, 2.0), (3.0, 5.0)]);
        let zero = |_: f64, _: &dyn Membership| 0.0;
        assert_eq!(empirical_risk(&fam, &zero, &cal, 0.5).unwrap(), 0.0);
        assert_eq!(empirical_risk(&fam, &MiscoverageLoss, &cal, f64::INFINITY).unwrap(), 0.0);
        assert_eq!(empirical_risk(&fam, &MiscoverageLoss, &cal, 0.5).unwrap(), 0.5);
        assert_eq!(empirical_risk(&fam, &MiscoverageLoss, &cal, 0.7), Err(Error::LambdaNotInGrid(0.7)));
        assert_eq!(
            empirical_risk(&fam, &MiscoverageLoss, &SupervisedDataset::new(1), 0.5),
            Err(Error::EmptyCalibration)
        );
        assert_eq!(evaluate_risk(&fam, &zero, &cal, 0.3).unwrap(), 0.0);
        assert_eq!(evaluate_risk(&fam, &MiscoverageLoss, &cal, 100.0).unwrap(), 0.0);
        assert_eq!(evaluate_risk(&fam, &MiscoverageLoss, &cal, 0.5).unwrap(), 0.5);
        // Risks are [0.5, 0.25, 0]; only the first grid value reaches 0.3.
        assert_eq!(rcps_threshold(&fam, &MiscoverageLoss, &cal, 0.3).unwrap(), 0.5);
    }

    #[test]
    fn sublevel_family_matches_symmetric() {
        let score = ResidualScore::new(|x: &[f64]| x[0]);
        let grid = vec![0.1, 0.5, 1.0, 2.0];
        let a = NestedFamily::new(ScoreSublevel::new(&score), grid.clone()).unwrap();
        let b = identity_family(grid);
        let cal = data(&[(0.0, 0.3), (1.0, 0.0), (-1.0, 0.9), (2.0, 2.05)]);
        assert_eq!(risk_curve(&a, &MiscoverageLoss, &cal).unwrap(), risk_curve(&b, &MiscoverageLoss, &cal).unwrap());
    }

    #[test]
    fn grid_validation() {
        assert!(NestedFamily::new(SymmetricIntervals::new(|_: &[f64]| 0.0), vec![]).is_err());
        assert!(NestedFamily::new(SymmetricIntervals::new(|_: &[f64]| 0.0), vec![1.0, 1.0]).is_err());
        assert!(NestedFamily::new(SymmetricIntervals::new(|_: &[f64]| 0.0), vec![f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn risk_nonincreasing_and_nested(pairs in prop::collection::vec((-5f64..5.0, -10f64..10.0), 1..60),
                                         steps in prop::collection::vec(0.01f64..1.0, 1..20)) {
            let mut grid = Vec::new();
            let mut acc = 0.0;
            for s in steps {
                acc += s;
                grid.push(acc);
            }
            grid.push(f64::INFINITY);
            let fam = identity_family(grid.clone());
            let cal = data(&pairs);
            prop_assert!(fam.is_nested_on(cal.rows()));
            let risks = risk_curve(&fam, &MiscoverageLoss, &cal).unwrap();
            prop_assert!(risks.windows(2).all(|w| w[1] <= w[0]));
            for alpha in [0.05, 0.2, 0.5] {
                prop_assert_eq!(threshold_from_risks(&grid, &risks, alpha).ok(), scan_oracle(&grid, &risks, alpha));
            }
        }
    }
}
