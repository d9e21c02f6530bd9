//! Split conformal prediction: global, set-conditional and rank-one-out
//! calibration, coverage evaluation, and a sliding-window online loop.

use std::sync::Arc;

use crate::data::{make_lagged_features, SupervisedDataset, TimeSeries};
use crate::error::{Error, Result};
use crate::models::{fit_quantile_model, CqrScore, ModelConfig};
use crate::quantile::{empirical_quantile, roo_quantiles, QuantileLevel};

/// A fitted nonconformity score `s(x, y)`; larger means less conforming.
pub trait ConformityScore {
    fn score(&self, x: &[f64], y: f64) -> f64;

    /// `{y : s(x, y) <= threshold}` as a closed interval, when the score can
    /// be inverted in closed form. An interval with `lo > hi` is empty.
    fn interval(&self, _x: &[f64], _threshold: f64) -> Option<(f64, f64)> {
        None
    }
}

impl<S: ConformityScore + ?Sized> ConformityScore for &S {
    fn score(&self, x: &[f64], y: f64) -> f64 {
        (**self).score(x, y)
    }
    fn interval(&self, x: &[f64], threshold: f64) -> Option<(f64, f64)> {
        (**self).interval(x, threshold)
    }
}

impl<S: ConformityScore + ?Sized> ConformityScore for Arc<S> {
    fn score(&self, x: &[f64], y: f64) -> f64 {
        (**self).score(x, y)
    }
    fn interval(&self, x: &[f64], threshold: f64) -> Option<(f64, f64)> {
        (**self).interval(x, threshold)
    }
}

/// Black-box score from a closure; not invertible.
pub struct FnScore<F>(pub F);

impl<F: Fn(&[f64], f64) -> f64> ConformityScore for FnScore<F> {
    fn score(&self, x: &[f64], y: f64) -> f64 {
        (self.0)(x, y)
    }
}

pub type SetPredicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// Named covariate sets with a declared VC dimension and a lower bound
/// `gamma` on each set's probability.
#[derive(Clone)]
pub struct SetFamily {
    names: Vec<String>,
    sets: Vec<SetPredicate>,
    vc_dim: u32,
    gamma: f64,
}

impl std::fmt::Debug for SetFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SetFamily")
            .field("names", &self.names)
            .field("vc_dim", &self.vc_dim)
            .field("gamma", &self.gamma)
            .finish()
    }
}

impl SetFamily {
    pub fn new(sets: Vec<(String, SetPredicate)>, vc_dim: u32, gamma: f64) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::BadParameter("set family is empty".into()));
        }
        if vc_dim == 0 {
            return Err(Error::BadParameter("vc_dim must be at least 1".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::BadParameter(format!("gamma = {gamma} is not in (0, 1)")));
        }
        let (names, sets) = sets.into_iter().unzip();
        Ok(Self { names, sets, vc_dim, gamma })
    }

    /// The single set containing every covariate.
    pub fn whole_space() -> Self {
        Self::new(vec![("all".into(), Arc::new(|_: &[f64]| true))], 1, 0.5).expect("valid family")
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, set: usize, x: &[f64]) -> bool {
        (self.sets[set])(x)
    }

    pub fn vc_dim(&self) -> u32 {
        self.vc_dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// How thresholds were calibrated.
#[derive(Debug, Clone)]
pub enum Thresholds {
    Global(f64),
    /// One threshold per set of the family, in family order.
    PerSet {
        family: SetFamily,
        thresholds: Vec<f64>,
    },
    /// One threshold per test index, from the other test scores.
    Roo(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct CalibratedPredictor<S> {
    score: S,
    alpha: f64,
    thresholds: Thresholds,
}

fn level(alpha: f64) -> Result<QuantileLevel> {
    QuantileLevel::from_alpha(alpha)
}

fn scores_of<S: ConformityScore>(score: &S, data: &SupervisedDataset) -> Vec<f64> {
    data.rows().map(|(x, y)| score.score(x, y)).collect()
}

/// Global threshold at the `1 − α` empirical quantile of calibration scores
/// (no finite-sample correction).
pub fn calibrate<S: ConformityScore>(score: S, cal: &SupervisedDataset, alpha: f64) -> Result<CalibratedPredictor<S>> {
    let phi = level(alpha)?;
    if cal.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let q = empirical_quantile(&scores_of(&score, cal), phi)?;
    Ok(CalibratedPredictor { score, alpha, thresholds: Thresholds::Global(q) })
}

/// One threshold per set, each from the calibration points inside it.
pub fn conditional_calibrate<S: ConformityScore>(
    score: S,
    cal: &SupervisedDataset,
    alpha: f64,
    family: &SetFamily,
) -> Result<CalibratedPredictor<S>> {
    let phi = level(alpha)?;
    if cal.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let scores = scores_of(&score, cal);
    let mut thresholds = Vec::with_capacity(family.len());
    for set in 0..family.len() {
        let inside: Vec<f64> = (0..cal.len()).filter(|&i| family.contains(set, cal.x(i))).map(|i| scores[i]).collect();
        if inside.is_empty() {
            return Err(Error::EmptyConditionSet(family.name(set).to_string()));
        }
        thresholds.push(empirical_quantile(&inside, phi)?);
    }
    Ok(CalibratedPredictor { score, alpha, thresholds: Thresholds::PerSet { family: family.clone(), thresholds } })
}

/// Rank-one-out calibration: each test index is calibrated on the other
/// test points.
pub fn roo_calibrate<S: ConformityScore>(
    score: S,
    test: &SupervisedDataset,
    alpha: f64,
) -> Result<CalibratedPredictor<S>> {
    let phi = level(alpha)?;
    let thresholds = roo_quantiles(&scores_of(&score, test), phi)?;
    Ok(CalibratedPredictor { score, alpha, thresholds: Thresholds::Roo(thresholds) })
}

impl<S: ConformityScore> CalibratedPredictor<S> {
    pub fn score(&self) -> &S {
        &self.score
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    /// The global threshold, if calibrated in global mode.
    pub fn q_hat(&self) -> Option<f64> {
        match self.thresholds {
            Thresholds::Global(q) => Some(q),
            _ => None,
        }
    }

    fn global(&self) -> Result<f64> {
        self.q_hat().ok_or(Error::WrongMode("global"))
    }

    fn invert(&self, x: &[f64], threshold: f64) -> Result<(f64, f64)> {
        self.score.interval(x, threshold).ok_or(Error::NotInvertible)
    }

    /// `y ∈ C(x)`, i.e. `s(x, y) <= q_hat`.
    pub fn predict_set_membership(&self, x: &[f64], y: f64) -> Result<bool> {
        Ok(self.score.score(x, y) <= self.global()?)
    }

    pub fn predict_interval(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.invert(x, self.global()?)
    }

    fn per_set(&self) -> Result<(&SetFamily, &[f64])> {
        match &self.thresholds {
            Thresholds::PerSet { family, thresholds } => Ok((family, thresholds)),
            _ => Err(Error::WrongMode("per_set")),
        }
    }

    /// Membership in the set-conditional region `C(x; A)`.
    pub fn set_membership(&self, set: usize, x: &[f64], y: f64) -> Result<bool> {
        let (_, t) = self.per_set()?;
        Ok(self.score.score(x, y) <= t[set])
    }

    pub fn set_interval(&self, set: usize, x: &[f64]) -> Result<(f64, f64)> {
        let (_, t) = self.per_set()?;
        self.invert(x, t[set])
    }

    /// Largest threshold among the sets containing `x`; the union of the
    /// nested regions over those sets is the region at this threshold.
    pub fn union_threshold(&self, x: &[f64]) -> Result<Option<f64>> {
        let (family, t) = self.per_set()?;
        Ok((0..family.len()).filter(|&s| family.contains(s, x)).map(|s| t[s]).reduce(f64::max))
    }

    /// Union of the set-conditional regions over sets containing `x`.
    pub fn union_membership(&self, x: &[f64], y: f64) -> Result<bool> {
        Ok(self.union_threshold(x)?.is_some_and(|t| self.score.score(x, y) <= t))
    }

    pub fn union_interval(&self, x: &[f64]) -> Result<Option<(f64, f64)>> {
        match self.union_threshold(x)? {
            Some(t) => self.invert(x, t).map(Some),
            None => Ok(None),
        }
    }

    /// Threshold for test index `i` in rank-one-out mode.
    pub fn roo_threshold(&self, i: usize) -> Result<f64> {
        match &self.thresholds {
            Thresholds::Roo(t) => {
                t.get(i).copied().ok_or_else(|| Error::BadParameter(format!("index {i} out of range")))
            }
            _ => Err(Error::WrongMode("roo")),
        }
    }
}

/// Per-set coverage counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SetCoverage {
    pub name: String,
    pub covered: usize,
    pub total: usize,
}

impl SetCoverage {
    /// `None` when no test point fell in the set.
    pub fn coverage(&self) -> Option<f64> {
        (self.total > 0).then(|| self.covered as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub marginal_coverage: f64,
    pub per_set: Option<Vec<SetCoverage>>,
    pub n_evaluated: usize,
    pub eta_used: Option<f64>,
}

impl CoverageReport {
    /// Smallest coverage among sets with at least one test point.
    pub fn infimum(&self) -> Option<f64> {
        self.per_set.as_ref()?.iter().filter_map(SetCoverage::coverage).reduce(f64::min)
    }
}

/// Fraction of test points with score at or below their threshold.
pub fn evaluate_marginal_coverage<S: ConformityScore>(
    pred: &CalibratedPredictor<S>,
    test: &SupervisedDataset,
) -> Result<CoverageReport> {
    if test.is_empty() {
        return Err(Error::EmptyTest);
    }
    let covered = match &pred.thresholds {
        Thresholds::Global(q) => test.rows().filter(|(x, y)| pred.score.score(x, *y) <= *q).count(),
        Thresholds::Roo(t) => {
            if t.len() != test.len() {
                return Err(Error::SizeMismatch(format!("{} thresholds for {} test points", t.len(), test.len())));
            }
            test.rows().zip(t).filter(|((x, y), q)| pred.score.score(x, *y) <= **q).count()
        }
        Thresholds::PerSet { .. } => return Err(Error::WrongMode("global or roo")),
    };
    Ok(CoverageReport {
        marginal_coverage: covered as f64 / test.len() as f64,
        per_set: None,
        n_evaluated: test.len(),
        eta_used: None,
    })
}

/// Per-set coverage using each set's own threshold. The marginal figure is
/// the union-region coverage over test points that lie in at least one set.
pub fn evaluate_conditional_coverage<S: ConformityScore>(
    pred: &CalibratedPredictor<S>,
    test: &SupervisedDataset,
) -> Result<CoverageReport> {
    let (family, thresholds) = pred.per_set()?;
    let mut per_set: Vec<SetCoverage> =
        family.names().iter().map(|n| SetCoverage { name: n.clone(), covered: 0, total: 0 }).collect();
    let (mut union_covered, mut in_any) = (0, 0);
    for (x, y) in test.rows() {
        let s = pred.score.score(x, y);
        let mut best: Option<f64> = None;
        for (set, cov) in per_set.iter_mut().enumerate() {
            if family.contains(set, x) {
                cov.total += 1;
                if s <= thresholds[set] {
                    cov.covered += 1;
                }
                best = Some(best.map_or(thresholds[set], |b| b.max(thresholds[set])));
            }
        }
        if let Some(t) = best {
            in_any += 1;
            if s <= t {
                union_covered += 1;
            }
        }
    }
    Ok(CoverageReport {
        marginal_coverage: if in_any > 0 { union_covered as f64 / in_any as f64 } else { 0.0 },
        per_set: Some(per_set),
        n_evaluated: in_any,
        eta_used: None,
    })
}

/// One step of the sliding-window loop.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineRecord {
    /// Position of the predicted value in the input series.
    pub index: usize,
    pub timestamp: Option<i64>,
    pub y: f64,
    pub lo: f64,
    pub hi: f64,
    pub covered: bool,
}

/// Sliding-window CQR: at every step the model is trained on the `w_train`
/// rows before the calibration window, calibrated on the `w_cal` rows right
/// before the target, and used to predict the target. The model is refit
/// every `refit_stride` steps; calibration is redone every step.
pub fn online_sliding_cp(
    series: &TimeSeries,
    lag_count: usize,
    w_train: usize,
    w_cal: usize,
    alpha: f64,
    model_config: &ModelConfig,
    refit_stride: usize,
) -> Result<Vec<OnlineRecord>> {
    level(alpha)?;
    if w_train == 0 || w_cal == 0 || refit_stride == 0 {
        return Err(Error::BadParameter("window sizes and refit stride must be positive".into()));
    }
    let needed = lag_count + w_train + w_cal + 1;
    if series.len() < needed {
        return Err(Error::SeriesTooShort { needed, got: series.len() });
    }
    let rows = make_lagged_features(series, lag_count)?;
    let first = w_train + w_cal;
    let mut out = Vec::with_capacity(rows.len() - first);
    let mut model: Option<CqrScore> = None;
    for (step, j) in (first..rows.len()).enumerate() {
        if step % refit_stride == 0 || model.is_none() {
            let train = rows.slice(j - w_cal - w_train..j - w_cal);
            model = Some(CqrScore::new(fit_quantile_model(&train, model_config)?));
        }
        let score = model.as_ref().expect("fitted above");
        let pred = calibrate(score, &rows.slice(j - w_cal..j), alpha)?;
        let (x, y) = (rows.x(j), rows.y(j));
        let (lo, hi) = pred.predict_interval(x)?;
        let index = j + lag_count;
        out.push(OnlineRecord {
            index,
            timestamp: series.timestamps().map(|t| t[index]),
            y,
            lo,
            hi,
            covered: pred.predict_set_membership(x, y)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ResidualScore;
    use proptest::prelude::*;

    fn dataset(ys: &[f64]) -> SupervisedDataset {
        SupervisedDataset::from_rows(ys.iter().enumerate().map(|(i, &y)| (vec![i as f64], y))).unwrap()
    }

    fn identity() -> FnScore<impl Fn(&[f64], f64) -> f64> {
        FnScore(|_: &[f64], y: f64| y)
    }

    /// Smallest calibration score whose empirical CDF reaches 1 − α.
    fn scan_quantile(scores: &[f64], alpha: f64) -> f64 {
        let mut s = scores.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        *s.iter().find(|&&t| s.iter().filter(|&&v| v <= t).count() as f64 / n >= 1.0 - alpha).unwrap()
    }

    #[test]
    fn calibrate_examples() {
        let ys: Vec<f64> = (1..=100).map(f64::from).collect();
        let p = calibrate(identity(), &dataset(&ys), 0.1).unwrap();
        assert_eq!(p.q_hat(), Some(90.0));
        assert_eq!(scan_quantile(&ys, 0.1), 90.0);
        let one = calibrate(identity(), &dataset(&[4.2]), 0.37).unwrap();
        assert_eq!(one.q_hat(), Some(4.2));
        let constant = calibrate(FnScore(|_: &[f64], _| 3.0), &dataset(&[1.0, 2.0, 5.0]), 0.2).unwrap();
        assert_eq!(constant.q_hat(), Some(3.0));
        assert!(matches!(calibrate(identity(), &SupervisedDataset::new(1), 0.1), Err(Error::EmptyCalibration)));
    }

    #[test]
    fn membership_and_intervals() {
        let p = calibrate(identity(), &dataset(&[2.0]), 0.1).unwrap();
        assert!(p.predict_set_membership(&[0.0], 2.0).unwrap());
        assert!(!p.predict_set_membership(&[0.0], 3.0).unwrap());
        assert_eq!(p.predict_interval(&[0.0]), Err(Error::NotInvertible));

        let zero = ResidualScore::new(|_: &[f64]| 0.0);
        let p = calibrate(&zero, &dataset(&[2.0, -2.0]), 0.1).unwrap();
        assert_eq!(p.q_hat(), Some(2.0));
        assert!(p.predict_set_membership(&[0.0], -1.5).unwrap());
        let five = ResidualScore::new(|_: &[f64]| 5.0);
        let p = calibrate(&five, &dataset(&[3.0, 7.0]), 0.1).unwrap();
        assert_eq!(p.predict_interval(&[0.0]).unwrap(), (3.0, 7.0));
    }

    #[test]
    fn conditional_examples() {
        let ys: Vec<f64> = (0..40).map(|i| ((i * 7) % 40) as f64).collect();
        let data = dataset(&ys);
        let whole = conditional_calibrate(identity(), &data, 0.1, &SetFamily::whole_space()).unwrap();
        let global = calibrate(identity(), &data, 0.1).unwrap();
        assert_eq!(whole.union_threshold(&[0.0]).unwrap(), global.q_hat());

        let family = SetFamily::new(
            vec![
                ("low".into(), Arc::new(|x: &[f64]| x[0] < 20.0) as SetPredicate),
                ("high".into(), Arc::new(|x: &[f64]| x[0] >= 20.0)),
            ],
            1,
            0.5,
        )
        .unwrap();
        let p = conditional_calibrate(identity(), &data, 0.1, &family).unwrap();
        let Thresholds::PerSet { thresholds, .. } = p.thresholds() else { panic!() };
        assert_eq!(thresholds[0], scan_quantile(&ys[..20], 0.1));
        assert_eq!(thresholds[1], scan_quantile(&ys[20..], 0.1));

        let empty =
            SetFamily::new(vec![("never".into(), Arc::new(|_: &[f64]| false) as SetPredicate)], 1, 0.5).unwrap();
        assert_eq!(
            conditional_calibrate(identity(), &data, 0.1, &empty).err().unwrap(),
            Error::EmptyConditionSet("never".into())
        );
    }

    #[test]
    fn roo_examples() {
        let p = roo_calibrate(identity(), &dataset(&[1.0, 2.0]), 0.1).unwrap();
        assert_eq!(p.roo_threshold(0).unwrap(), 2.0);
        assert_eq!(p.roo_threshold(1).unwrap(), 1.0);
        let p = roo_calibrate(identity(), &dataset(&[3.0; 5]), 0.2).unwrap();
        assert!((0..5).all(|i| p.roo_threshold(i).unwrap() == 3.0));
        let p = roo_calibrate(identity(), &dataset(&[1.0, 2.0, 3.0, 4.0, 5.0]), 0.25).unwrap();
        assert_eq!(p.roo_threshold(4).unwrap(), 3.0);
        assert!(matches!(roo_calibrate(identity(), &dataset(&[1.0]), 0.1), Err(Error::TooFewPoints(_))));
    }

    #[test]
    fn coverage_evaluators() {
        let p = calibrate(identity(), &dataset(&[10.0]), 0.1).unwrap();
        let r = evaluate_marginal_coverage(&p, &dataset(&[1.0, 2.0, 10.0])).unwrap();
        assert_eq!(r.marginal_coverage, 1.0);
        let r = evaluate_marginal_coverage(&p, &dataset(&[11.0, 12.0])).unwrap();
        assert_eq!(r.marginal_coverage, 0.0);
        let r = evaluate_marginal_coverage(&p, &dataset(&[1.0, 2.0, 3.0, 11.0])).unwrap();
        assert_eq!(r.marginal_coverage, 0.75);
        assert_eq!(evaluate_marginal_coverage(&p, &SupervisedDataset::new(1)).unwrap_err(), Error::EmptyTest);

        let cal = dataset(&[1.0, 2.0, 3.0, 4.0]);
        let test = dataset(&[0.5, 2.5, 5.0, 1.0]);
        let whole = conditional_calibrate(identity(), &cal, 0.25, &SetFamily::whole_space()).unwrap();
        let global = calibrate(identity(), &cal, 0.25).unwrap();
        let c = evaluate_conditional_coverage(&whole, &test).unwrap();
        let m = evaluate_marginal_coverage(&global, &test).unwrap();
        assert_eq!(c.per_set.as_ref().unwrap()[0].coverage(), Some(m.marginal_coverage));
        assert_eq!(c.infimum(), Some(m.marginal_coverage));

        let family = SetFamily::new(
            vec![
                ("first".into(), Arc::new(|x: &[f64]| x[0] == 0.0) as SetPredicate),
                ("rest".into(), Arc::new(|x: &[f64]| x[0] > 0.0)),
                ("none".into(), Arc::new(|x: &[f64]| x[0] > 100.0)),
            ],
            1,
            0.2,
        )
        .unwrap();
        let cal = SupervisedDataset::from_rows([(vec![0.0], 1.0), (vec![1.0], 1.0), (vec![200.0], 0.0)]).unwrap();
        let p = conditional_calibrate(identity(), &cal, 0.1, &family).unwrap();
        let c = evaluate_conditional_coverage(&p, &dataset(&[1.0])).unwrap();
        let sets = c.per_set.unwrap();
        assert_eq!(sets[0].coverage(), Some(1.0));
        assert_eq!(sets[2].coverage(), None);
    }

    #[test]
    fn infimum_over_sets() {
        let r = CoverageReport {
            marginal_coverage: 0.85,
            per_set: Some(vec![
                SetCoverage { name: "a".into(), covered: 9, total: 10 },
                SetCoverage { name: "b".into(), covered: 8, total: 10 },
                SetCoverage { name: "c".into(), covered: 0, total: 0 },
            ]),
            n_evaluated: 20,
            eta_used: None,
        };
        assert_eq!(r.infimum(), Some(0.8));
    }

    #[test]
    fn online_constant_series_and_errors() {
        let cfg = ModelConfig { n_rounds: 5, min_leaf: 5, ..ModelConfig::for_alpha(0.1).unwrap() };
        let series = TimeSeries::new(vec![2.5; 80]).unwrap();
        let recs = online_sliding_cp(&series, 3, 40, 20, 0.1, &cfg, 1).unwrap();
        assert_eq!(recs.len(), 80 - 3 - 60);
        assert!(recs.iter().all(|r| r.covered && r.lo <= 2.5 && 2.5 <= r.hi));
        let short = TimeSeries::new(vec![1.0; 63]).unwrap();
        assert!(matches!(
            online_sliding_cp(&short, 3, 40, 20, 0.1, &cfg, 1),
            Err(Error::SeriesTooShort { needed: 64, got: 63 })
        ));
    }

    proptest! {
        #[test]
        fn calibration_self_consistency(scores in prop::collection::vec(-50i32..50, 1..80), alpha in 0.01f64..0.99) {
            let ys: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
            let p = calibrate(identity(), &dataset(&ys), alpha).unwrap();
            let q = p.q_hat().unwrap();
            let n = ys.len() as f64;
            prop_assert!(ys.iter().filter(|&&s| s <= q).count() as f64 / n >= 1.0 - alpha);
            prop_assert_eq!(q, scan_quantile(&ys, alpha));
        }

        #[test]
        fn residual_duality(mu in -10f64..10.0, q in 0f64..5.0, ys in prop::collection::vec(-20f64..20.0, 1..50)) {
            let score = ResidualScore::new(move |_: &[f64]| mu);
            let p = calibrate(&score, &dataset(&[mu + q]), 0.5).unwrap();
            let (lo, hi) = p.predict_interval(&[0.0]).unwrap();
            for y in ys {
                prop_assert_eq!(p.predict_set_membership(&[0.0], y).unwrap(), lo <= y && y <= hi);
            }
        }
    }
}
