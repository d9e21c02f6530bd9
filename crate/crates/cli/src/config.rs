//! TOML experiment configuration.
//!
//! A config names one experiment, the shared knobs (seed, replications,
//! alpha, model) and at most one experiment section. Missing fields take
//! desk-scale defaults; [`ExperimentConfig::resolve`] fills the section in so
//! the serialized form written into output headers is complete.

use std::path::PathBuf;

use mixcp::models::{ModelConfig, SplitRule};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    HmmCoverage,
    Ar1Coverage,
    BoundCurves,
    EmpiricalCoverage,
    ConditionalTable,
    Backtest,
    RcpsDemo,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::HmmCoverage => "hmm_coverage",
            Self::Ar1Coverage => "ar1_coverage",
            Self::BoundCurves => "bound_curves",
            Self::EmpiricalCoverage => "empirical_coverage",
            Self::ConditionalTable => "conditional_table",
            Self::Backtest => "backtest",
            Self::RcpsDemo => "rcps_demo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Where to write the CSV. Not part of the recorded header, so the same
    /// experiment written to two places gives identical files.
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hmm: Option<HmmSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ar1: Option<Ar1Section>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empirical: Option<EmpiricalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditional: Option<ConditionalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backtest: Option<BacktestSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rcps: Option<RcpsSection>,
}

fn default_seed() -> u64 {
    20240601
}

fn default_replications() -> usize {
    1000
}

fn default_alpha() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRuleName {
    Gradient,
    ExactPinball,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub tree_depth: usize,
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub split_rule: SplitRuleName,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::default();
        Self {
            tree_depth: d.tree_depth,
            n_rounds: d.n_rounds,
            learning_rate: d.learning_rate,
            min_leaf: d.min_leaf,
            split_rule: SplitRuleName::Gradient,
        }
    }
}

impl ModelSection {
    /// Model hyperparameters with quantile levels `(α/2, 1 − α/2)`.
    pub fn to_model_config(&self, alpha: f64) -> Result<ModelConfig, CliError> {
        let cfg = ModelConfig {
            tree_depth: self.tree_depth,
            n_rounds: self.n_rounds,
            learning_rate: self.learning_rate,
            min_leaf: self.min_leaf,
            quantile_levels: (alpha / 2.0, 1.0 - alpha / 2.0),
            split_rule: match self.split_rule {
                SplitRuleName::Gradient => SplitRule::Gradient,
                SplitRuleName::ExactPinball => SplitRule::ExactPinball,
            },
        };
        cfg.validate().map_err(|e| CliError::Config(format!("[model]: {e}")))?;
        Ok(cfg)
    }
}

/// Train/calibration/test sizes of one split-CP replication on a lagged series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Protocol {
    pub lag_count: usize,
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
}

impl Default for Protocol {
    fn default() -> Self {
        Self { lag_count: 11, n_train: 1000, n_cal: 500, n_test: 1 }
    }
}

impl Protocol {
    fn validate(&self, section: &str) -> Result<(), CliError> {
        if self.lag_count == 0 || self.n_train == 0 || self.n_cal == 0 || self.n_test == 0 {
            return Err(CliError::Config(format!("[{section}]: lag_count and split sizes must be positive")));
        }
        Ok(())
    }

    /// Length of the simulated path needed for one replication.
    pub fn path_len(&self) -> usize {
        self.lag_count + self.n_train + self.n_cal + self.n_test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmmSection {
    /// Probability `1 − p = 1 − q` that the hidden chain keeps its state.
    pub stay_levels: Vec<f64>,
    pub noise_sigma: f64,
    pub lag_count: usize,
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
}

impl Default for HmmSection {
    fn default() -> Self {
        Self {
            stay_levels: vec![0.5, 0.8, 0.9, 0.95, 0.99, 0.995, 0.999],
            noise_sigma: mixcp::processes::DEFAULT_NOISE_SIGMA,
            lag_count: 11,
            n_train: 1000,
            n_cal: 500,
            n_test: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ar1Section {
    pub lambdas: Vec<f64>,
    pub estimator: CoverageEstimator,
    pub lag_count: usize,
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
}

impl Default for Ar1Section {
    fn default() -> Self {
        Self {
            lambdas: vec![0.0, 0.5, 0.8, 0.9, 0.99, 0.999, 0.9999],
            estimator: CoverageEstimator::Conditional,
            lag_count: 11,
            n_train: 1000,
            n_cal: 500,
            n_test: 1,
        }
    }
}

impl HmmSection {
    pub fn protocol(&self) -> Protocol {
        Protocol { lag_count: self.lag_count, n_train: self.n_train, n_cal: self.n_cal, n_test: self.n_test }
    }
}

impl Ar1Section {
    pub fn protocol(&self) -> Protocol {
        Protocol { lag_count: self.lag_count, n_train: self.n_train, n_cal: self.n_cal, n_test: self.n_test }
    }
}

/// How one replication's coverage is measured on AR(1) paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageEstimator {
    /// Fraction of test responses inside their interval.
    Indicator,
    /// Exact conditional probability of the interval under the known
    /// Gaussian transition.
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceName {
    Base,
    Alpha,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSection {
    /// Stay probabilities of symmetric two-state chains; 0.5 is β ≡ 0.
    pub stay_levels: Vec<f64>,
    pub n_cal_grid: Vec<u64>,
    pub delta: f64,
    pub variance: VarianceName,
    /// The test point sits `n_cal + gap_offset` steps after training.
    pub gap_offset: u64,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            stay_levels: vec![0.5, 0.6, 0.8, 0.9, 0.95],
            n_cal_grid: vec![1000, 2000, 5000, 10_000, 20_000, 50_000, 100_000],
            delta: 0.01,
            variance: VarianceName::Base,
            gap_offset: 1,
        }
    }
}

/// Which β profile the floor is computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSource {
    /// The simulated chain's own coefficients.
    Markov,
    Constant {
        value: f64,
    },
    /// `r,beta` table file.
    Table {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmpiricalSection {
    pub stay: f64,
    pub noise_sigma: f64,
    pub lag_count: usize,
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub delta_cal: f64,
    pub delta_test: f64,
    pub variance: VarianceName,
    pub profile: ProfileSource,
}

impl Default for EmpiricalSection {
    fn default() -> Self {
        Self {
            stay: 0.6,
            noise_sigma: mixcp::processes::DEFAULT_NOISE_SIGMA,
            lag_count: 11,
            n_train: 1000,
            n_cal: 3000,
            n_test: 3000,
            delta_cal: 0.005,
            delta_test: 0.005,
            variance: VarianceName::Base,
            profile: ProfileSource::Markov,
        }
    }
}

/// Input series for the conditional table and the backtest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SeriesSource {
    /// Simulated AR(1) values used directly as returns.
    Ar1 { lambda: f64 },
    /// Price file; returns are computed from it. Runs a single replication.
    Csv {
        path: PathBuf,
        #[serde(default)]
        timestamp_column: usize,
        #[serde(default = "default_price_column")]
        price_column: usize,
    },
}

fn default_price_column() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionalSection {
    pub source: SeriesSource,
    pub lag_count: usize,
    pub vol_window: usize,
    /// Fixed volatility threshold; when absent, the median rolling standard
    /// deviation of each series is used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vol_threshold: Option<f64>,
    pub n_train: usize,
    /// Calibration windows all end right before the test block.
    pub cal_sizes: Vec<usize>,
    pub n_test: usize,
}

impl Default for ConditionalSection {
    fn default() -> Self {
        Self {
            source: SeriesSource::Ar1 { lambda: 0.5 },
            lag_count: 11,
            vol_window: 10,
            vol_threshold: None,
            n_train: 1000,
            cal_sizes: vec![500, 5000],
            n_test: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestSection {
    pub source: SeriesSource,
    /// Synthetic sources only: returns are `scale · W_t`, prices their
    /// cumulative product from 100.
    pub scale: f64,
    pub days: u32,
    /// Unix seconds of the first synthetic observation.
    pub start: i64,
    pub interval_secs: i64,
    pub lag_count: usize,
    pub w_train: usize,
    pub w_cal: usize,
    pub refit_stride: usize,
    pub weekdays: Vec<String>,
}

impl Default for BacktestSection {
    fn default() -> Self {
        Self {
            source: SeriesSource::Ar1 { lambda: 0.5 },
            scale: 1e-4,
            days: 7,
            // Monday 2021-01-04 00:00 UTC.
            start: 1_609_718_400,
            interval_secs: 60,
            lag_count: 11,
            w_train: 1000,
            w_cal: 500,
            refit_stride: 50,
            weekdays: ["Mon", "Tue", "Wed", "Thu"].map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RcpsSection {
    pub n_cal: usize,
    pub n_test: usize,
    pub grid_step: f64,
    pub grid_max: f64,
    /// Confidence level of the reference `iid_epsilon` slack.
    pub delta: f64,
}

impl Default for RcpsSection {
    fn default() -> Self {
        Self { n_cal: 5000, n_test: 5000, grid_step: 0.01, grid_max: 5.0, delta: 0.05 }
    }
}

/// Parses a TOML config. The result is not yet resolved.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

fn unit_open(v: f64) -> bool {
    v > 0.0 && v < 1.0
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            seed: default_seed(),
            replications: default_replications(),
            alpha: default_alpha(),
            output: None,
            model: ModelSection::default(),
            hmm: None,
            ar1: None,
            bounds: None,
            empirical: None,
            conditional: None,
            backtest: None,
            rcps: None,
        }
    }

    /// Fills in the experiment's section with defaults, rejects sections that
    /// belong to other experiments, and validates every parameter.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        use ExperimentKind::*;
        let kind = self.experiment;
        let present = [
            ("hmm", self.hmm.is_some(), HmmCoverage),
            ("ar1", self.ar1.is_some(), Ar1Coverage),
            ("bounds", self.bounds.is_some(), BoundCurves),
            ("empirical", self.empirical.is_some(), EmpiricalCoverage),
            ("conditional", self.conditional.is_some(), ConditionalTable),
            ("backtest", self.backtest.is_some(), Backtest),
            ("rcps", self.rcps.is_some(), RcpsDemo),
        ];
        for (name, is_set, owner) in present {
            check(!is_set || owner == kind, || format!("section [{name}] is not used by experiment {}", kind.name()))?;
        }
        match kind {
            HmmCoverage => drop(self.hmm.get_or_insert_with(Default::default)),
            Ar1Coverage => drop(self.ar1.get_or_insert_with(Default::default)),
            BoundCurves => drop(self.bounds.get_or_insert_with(Default::default)),
            EmpiricalCoverage => drop(self.empirical.get_or_insert_with(Default::default)),
            ConditionalTable => drop(self.conditional.get_or_insert_with(Default::default)),
            Backtest => drop(self.backtest.get_or_insert_with(Default::default)),
            RcpsDemo => drop(self.rcps.get_or_insert_with(Default::default)),
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), CliError> {
        check(self.replications > 0, || "replications must be positive".into())?;
        check(unit_open(self.alpha), || format!("alpha = {} is not in (0, 1)", self.alpha))?;
        self.model.to_model_config(self.alpha)?;
        if let Some(s) = &self.hmm {
            s.protocol().validate("hmm")?;
            check(!s.stay_levels.is_empty() && s.stay_levels.iter().all(|&v| unit_open(v)), || {
                "[hmm]: stay_levels must be nonempty and inside (0, 1)".into()
            })?;
            check(s.noise_sigma >= 0.0 && s.noise_sigma.is_finite(), || "[hmm]: noise_sigma must be >= 0".into())?;
        }
        if let Some(s) = &self.ar1 {
            s.protocol().validate("ar1")?;
            check(!s.lambdas.is_empty() && s.lambdas.iter().all(|l| l.abs() < 1.0), || {
                "[ar1]: lambdas must be nonempty and inside (-1, 1)".into()
            })?;
        }
        if let Some(s) = &self.bounds {
            check(!s.stay_levels.is_empty() && s.stay_levels.iter().all(|&v| unit_open(v)), || {
                "[bounds]: stay_levels must be nonempty and inside (0, 1)".into()
            })?;
            check(!s.n_cal_grid.is_empty() && s.n_cal_grid.iter().all(|&n| n > 0), || {
                "[bounds]: n_cal_grid must be nonempty and positive".into()
            })?;
            check(unit_open(s.delta), || "[bounds]: delta must be in (0, 1)".into())?;
        }
        if let Some(s) = &self.empirical {
            check(unit_open(s.stay), || "[empirical]: stay must be in (0, 1)".into())?;
            check(s.noise_sigma >= 0.0 && s.noise_sigma.is_finite(), || {
                "[empirical]: noise_sigma must be >= 0".into()
            })?;
            check(s.lag_count > 0 && s.n_train > 0 && s.n_cal > 0 && s.n_test > 0, || {
                "[empirical]: lag_count and split sizes must be positive".into()
            })?;
            check(unit_open(s.delta_cal) && unit_open(s.delta_test), || {
                "[empirical]: deltas must be in (0, 1)".into()
            })?;
            if let ProfileSource::Constant { value } = s.profile {
                check((0.0..=1.0).contains(&value), || "[empirical]: constant profile must be in [0, 1]".into())?;
            }
        }
        if let Some(s) = &self.conditional {
            check_source(&s.source, "conditional")?;
            check(s.lag_count >= s.vol_window && s.vol_window >= 2, || {
                "[conditional]: need 2 <= vol_window <= lag_count".into()
            })?;
            check(s.n_train > 0 && s.n_test > 0, || "[conditional]: n_train and n_test must be positive".into())?;
            check(!s.cal_sizes.is_empty() && s.cal_sizes.iter().all(|&c| c > 0), || {
                "[conditional]: cal_sizes must be nonempty and positive".into()
            })?;
        }
        if let Some(s) = &self.backtest {
            check_source(&s.source, "backtest")?;
            check(!s.weekdays.is_empty(), || "[backtest]: weekday selection is empty".into())?;
            crate::experiments::parse_weekdays(&s.weekdays)?;
            check(s.scale > 0.0 && s.scale.is_finite(), || "[backtest]: scale must be positive".into())?;
            check(s.days > 0 && s.interval_secs > 0, || "[backtest]: days and interval_secs must be positive".into())?;
            check(s.lag_count > 0 && s.w_train > 0 && s.w_cal > 0 && s.refit_stride > 0, || {
                "[backtest]: lag_count, windows and refit_stride must be positive".into()
            })?;
        }
        if let Some(s) = &self.rcps {
            check(s.n_cal > 0 && s.n_test > 0, || "[rcps]: n_cal and n_test must be positive".into())?;
            check(s.grid_step > 0.0 && s.grid_max > s.grid_step && (s.grid_max / s.grid_step) < 1e6, || {
                "[rcps]: need 0 < grid_step < grid_max with fewer than 1e6 grid points".into()
            })?;
            check(unit_open(s.delta), || "[rcps]: delta must be in (0, 1)".into())?;
        }
        Ok(())
    }

    /// The resolved config as TOML, as recorded in output headers.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn check_source(source: &SeriesSource, section: &str) -> Result<(), CliError> {
    if let SeriesSource::Ar1 { lambda } = source {
        check(lambda.abs() < 1.0, || format!("[{section}]: lambda must be inside (-1, 1)"))?;
    }
    Ok(())
}
