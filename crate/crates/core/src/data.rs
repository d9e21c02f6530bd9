//! Series and supervised-data containers, temporal splits, and lagged
//! feature construction.

use std::ops::Range;

use crate::error::{Error, Result};

/// An ordered sequence of finite observations with optional epoch-second
/// timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
    timestamps: Option<Vec<i64>>,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("value at index {i} is not finite")));
        }
        Ok(Self { values, timestamps: None })
    }

    pub fn with_timestamps(values: Vec<f64>, timestamps: Vec<i64>) -> Result<Self> {
        let mut s = Self::new(values)?;
        if timestamps.len() != s.values.len() {
            return Err(Error::InvalidData(format!("{} timestamps for {} values", timestamps.len(), s.values.len())));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidData(format!("timestamps not strictly increasing at index {}", i + 1)));
        }
        s.timestamps = Some(timestamps);
        Ok(s)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn timestamps(&self) -> Option<&[i64]> {
        self.timestamps.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Rows of `(x, y)` with a common covariate dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedDataset {
    dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl SupervisedDataset {
    pub fn new(dim: usize) -> Self {
        Self { dim, xs: Vec::new(), ys: Vec::new() }
    }

    pub fn from_rows<I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<f64>, f64)>,
    {
        let mut iter = rows.into_iter().peekable();
        let dim = iter.peek().map(|(x, _)| x.len()).unwrap_or(0);
        let mut ds = Self::new(dim);
        for (x, y) in iter {
            ds.push(&x, y)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, x: &[f64], y: f64) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::InvalidData(format!("row has {} covariates, expected {}", x.len(), self.dim)));
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite entry".into()));
        }
        self.xs.extend_from_slice(x);
        self.ys.push(y);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.ys[i]
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = (&[f64], f64)> + '_ {
        (0..self.len()).map(move |i| (self.x(i), self.ys[i]))
    }

    /// Contiguous sub-dataset over a half-open row range.
    pub fn slice(&self, range: Range<usize>) -> Self {
        Self {
            dim: self.dim,
            xs: self.xs[range.start * self.dim..range.end * self.dim].to_vec(),
            ys: self.ys[range].to_vec(),
        }
    }
}

/// A contiguous, temporally ordered train/calibration/test partition of
/// `0..n`. Ranges are zero-based and half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitIndices {
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
}

impl SplitIndices {
    pub fn n(&self) -> usize {
        self.n_train + self.n_cal + self.n_test
    }

    pub fn train(&self) -> Range<usize> {
        0..self.n_train
    }

    pub fn cal(&self) -> Range<usize> {
        self.n_train..self.n_train + self.n_cal
    }

    pub fn test(&self) -> Range<usize> {
        self.n_train + self.n_cal..self.n()
    }

    /// Splits a dataset with exactly `n()` rows into its three parts.
    pub fn apply(&self, data: &SupervisedDataset) -> Result<(SupervisedDataset, SupervisedDataset, SupervisedDataset)> {
        if data.len() != self.n() {
            return Err(Error::SizeMismatch(format!("dataset has {} rows, split covers {}", data.len(), self.n())));
        }
        Ok((data.slice(self.train()), data.slice(self.cal()), data.slice(self.test())))
    }
}

pub fn split_indices(n: usize, n_train: usize, n_cal: usize, n_test: usize) -> Result<SplitIndices> {
    if n_train == 0 || n_cal == 0 || n_test == 0 {
        return Err(Error::SizeMismatch("every part of the split must be nonempty".into()));
    }
    if n_train.checked_add(n_cal).and_then(|s| s.checked_add(n_test)) != Some(n) {
        return Err(Error::SizeMismatch(format!("{n_train} + {n_cal} + {n_test} != {n}")));
    }
    Ok(SplitIndices { n_train, n_cal, n_test })
}

/// Row `t` predicts `v[t]` from the preceding `lag_count` values, oldest first.
pub fn make_lagged_features(series: &TimeSeries, lag_count: usize) -> Result<SupervisedDataset> {
    let v = series.values();
    if v.len() <= lag_count {
        return Err(Error::SeriesTooShort { needed: lag_count, got: v.len() });
    }
    let mut ds = SupervisedDataset::new(lag_count);
    ds.xs.reserve((v.len() - lag_count) * lag_count);
    for t in lag_count..v.len() {
        ds.xs.extend_from_slice(&v[t - lag_count..t]);
        ds.ys.push(v[t]);
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_examples() {
        let s = split_indices(10, 5, 3, 2).unwrap();
        assert_eq!(s.train(), 0..5);
        assert_eq!(s.cal(), 5..8);
        assert_eq!(s.test(), 8..10);

        let s = split_indices(3, 1, 1, 1).unwrap();
        assert_eq!((s.train(), s.cal(), s.test()), (0..1, 1..2, 2..3));

        assert!(matches!(split_indices(10, 5, 3, 3), Err(Error::SizeMismatch(_))));
        assert!(matches!(split_indices(8, 5, 3, 0), Err(Error::SizeMismatch(_))));
    }

    #[test]
    fn lagged_features_window() {
        let s = TimeSeries::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ds = make_lagged_features(&s, 2).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.x(0), &[1.0, 2.0]);
        assert_eq!(ds.y(0), 3.0);
        assert_eq!(ds.x(1), &[2.0, 3.0]);
        assert_eq!(ds.y(1), 4.0);

        let short = TimeSeries::new(vec![5.0]).unwrap();
        assert!(matches!(make_lagged_features(&short, 1), Err(Error::SeriesTooShort { .. })));

        let long = TimeSeries::new((0..1500).map(f64::from).collect()).unwrap();
        let ds = make_lagged_features(&long, 11).unwrap();
        assert_eq!(ds.len(), 1489);
        assert_eq!(ds.dim(), 11);
    }

    #[test]
    fn series_validation() {
        assert!(TimeSeries::new(vec![]).is_err());
        assert!(TimeSeries::new(vec![1.0, f64::NAN]).is_err());
        assert!(TimeSeries::with_timestamps(vec![1.0, 2.0], vec![5, 5]).is_err());
        assert!(TimeSeries::with_timestamps(vec![1.0, 2.0], vec![5]).is_err());
        assert!(TimeSeries::with_timestamps(vec![1.0, 2.0], vec![5, 6]).is_ok());
    }

    proptest! {
        #[test]
        fn lagged_targets_reproduce_series(v in prop::collection::vec(-1e6f64..1e6, 2..200), lag in 1usize..10) {
            prop_assume!(v.len() > lag);
            let s = TimeSeries::new(v.clone()).unwrap();
            let ds = make_lagged_features(&s, lag).unwrap();
            prop_assert_eq!(ds.ys(), &v[lag..]);
        }

        #[test]
        fn split_is_a_partition(a in 1usize..500, b in 1usize..500, c in 1usize..500) {
            let s = split_indices(a + b + c, a, b, c).unwrap();
            let mut seen = vec![0u8; s.n()];
            for r in [s.train(), s.cal(), s.test()] {
                for i in r {
                    seen[i] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&k| k == 1));
            prop_assert!(s.train().end == s.cal().start && s.cal().end == s.test().start);
        }
    }
}
