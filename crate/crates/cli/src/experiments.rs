//! The seven experiments. Replication `r` of an experiment with seed `s`
//! always uses the stream `derive_seed(s, r)`, whatever the thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{DateTime, Datelike, NaiveDate, Weekday};
use mixcp::bounds::{
    eps_cal_beta, eps_train, eta_marginal, iid_epsilon, ConfidenceParams, CorrectionFactors, VarianceVariant,
};
use mixcp::ingest::{event_masks, event_set_family, linear_returns, load_price_csv, ColumnSpec, EventMasks};
use mixcp::mixing::{parse_profile_table, MixingProfile, TwoStateChain};
use mixcp::models::{fit_quantile_model, CqrScore, ModelConfig};
use mixcp::processes::{simulate_ar1, simulate_two_state_hmm, Ar1Config, HmmConfig};
use mixcp::rcps::{evaluate_risk, risk_curve, threshold_from_risks, MiscoverageLoss, NestedFamily, SymmetricIntervals};
use mixcp::rng::{derive_seed, normal_cdf, seeded, standard_normal};
use mixcp::splitcp::{
    calibrate, conditional_calibrate, evaluate_conditional_coverage, evaluate_marginal_coverage, online_sliding_cp,
    CalibratedPredictor,
};
use mixcp::{make_lagged_features, split_indices, SupervisedDataset, TimeSeries};
use rayon::prelude::*;

use crate::config::{
    Ar1Section, BacktestSection, BoundsSection, ConditionalSection, CoverageEstimator, EmpiricalSection,
    ExperimentKind, HmmSection, ProfileSource, Protocol, RcpsSection, SeriesSource, VarianceName,
};
use crate::{CliError, ExperimentConfig};

type Result<T> = std::result::Result<T, CliError>;

/// CSV body of one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub body: String,
    /// A coverage floor or bound the experiment needed had no feasible block
    /// plan. The body is still complete; the binary exits with code 3.
    pub infeasible: bool,
}

/// Runs a resolved config.
pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    fn section<T>(s: &Option<T>) -> Result<&T> {
        s.as_ref().ok_or_else(|| CliError::Config("config is not resolved".into()))
    }
    match cfg.experiment {
        ExperimentKind::HmmCoverage => run_hmm_coverage(cfg, section(&cfg.hmm)?),
        ExperimentKind::Ar1Coverage => run_ar1_coverage(cfg, section(&cfg.ar1)?),
        ExperimentKind::BoundCurves => run_bound_curves(cfg, section(&cfg.bounds)?),
        ExperimentKind::EmpiricalCoverage => run_empirical_coverage(cfg, section(&cfg.empirical)?),
        ExperimentKind::ConditionalTable => run_conditional_table(cfg, section(&cfg.conditional)?),
        ExperimentKind::Backtest => run_backtest(cfg, section(&cfg.backtest)?),
        ExperimentKind::RcpsDemo => run_rcps_demo(cfg, section(&cfg.rcps)?),
    }
}

fn replicate<T, F>(cfg: &ExperimentConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    (0..cfg.replications as u64).into_par_iter().map(|r| f(derive_seed(cfg.seed, r))).collect()
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Split CQR on one path: fit on the first block, calibrate on the next.
/// Returns the predictor and the final test block.
fn fit_and_calibrate(
    series: &TimeSeries,
    protocol: Protocol,
    alpha: f64,
    model: &ModelConfig,
) -> Result<(CalibratedPredictor<CqrScore>, SupervisedDataset)> {
    let rows = make_lagged_features(series, protocol.lag_count)?;
    let split = split_indices(rows.len(), protocol.n_train, protocol.n_cal, protocol.n_test)?;
    let (train, cal, test) = split.apply(&rows)?;
    let score = CqrScore::new(fit_quantile_model(&train, model)?);
    Ok((calibrate(score, &cal, alpha)?, test))
}

/// Covered fraction of the test block.
pub fn split_cp_coverage(series: &TimeSeries, protocol: Protocol, alpha: f64, model: &ModelConfig) -> Result<f64> {
    let (pred, test) = fit_and_calibrate(series, protocol, alpha, model)?;
    Ok(evaluate_marginal_coverage(&pred, &test)?.marginal_coverage)
}

/// Mean over the test block of `P(Y ∈ C(X) | X)` for an AR(1) path with
/// unit innovations, where `Y | X ~ N(λ x_last, 1)`. Same expectation as
/// [`split_cp_coverage`], lower variance.
pub fn ar1_conditional_coverage(
    series: &TimeSeries,
    lambda: f64,
    protocol: Protocol,
    alpha: f64,
    model: &ModelConfig,
) -> Result<f64> {
    let (pred, test) = fit_and_calibrate(series, protocol, alpha, model)?;
    let mut total = 0.0;
    for (x, _) in test.rows() {
        let (lo, hi) = pred.predict_interval(x)?;
        let mean = lambda * x[x.len() - 1];
        total += normal_cdf(hi - mean) - normal_cdf(lo - mean);
    }
    Ok(total / test.len() as f64)
}

pub fn run_hmm_coverage(cfg: &ExperimentConfig, s: &HmmSection) -> Result<Report> {
    let model = cfg.model.to_model_config(cfg.alpha)?;
    let protocol = s.protocol();
    let mut body = String::from("stay,coverage,stderr\n");
    for &stay in &s.stay_levels {
        let covs = replicate(cfg, |seed| {
            let hmm = HmmConfig { noise_sigma: s.noise_sigma, ..HmmConfig::symmetric(stay, protocol.path_len(), seed) };
            split_cp_coverage(&simulate_two_state_hmm(&hmm)?, protocol, cfg.alpha, &model)
        })?;
        let (mean, se) = mean_stderr(&covs);
        writeln!(body, "{stay},{mean},{se}").unwrap();
    }
    Ok(Report { body, infeasible: false })
}

pub fn run_ar1_coverage(cfg: &ExperimentConfig, s: &Ar1Section) -> Result<Report> {
    let model = cfg.model.to_model_config(cfg.alpha)?;
    let protocol = s.protocol();
    let mut body = String::from("lambda,coverage,stderr\n");
    for &lambda in &s.lambdas {
        let covs = replicate(cfg, |seed| {
            let path = simulate_ar1(&Ar1Config { lambda, length: protocol.path_len(), seed })?;
            match s.estimator {
                CoverageEstimator::Indicator => split_cp_coverage(&path, protocol, cfg.alpha, &model),
                CoverageEstimator::Conditional => ar1_conditional_coverage(&path, lambda, protocol, cfg.alpha, &model),
            }
        })?;
        let (mean, se) = mean_stderr(&covs);
        writeln!(body, "{lambda},{mean},{se}").unwrap();
    }
    Ok(Report { body, infeasible: false })
}

fn variance(name: VarianceName, alpha: f64) -> VarianceVariant {
    match name {
        VarianceName::Base => VarianceVariant::Base,
        VarianceName::Alpha => VarianceVariant::Alpha(alpha),
    }
}

fn symmetric_chain_profile(stay: f64) -> Result<MixingProfile> {
    let chain = TwoStateChain::new(1.0 - stay, 1.0 - stay)?;
    Ok(MixingProfile::markov(chain.matrix())?)
}

/// Marginal η per stay level and calibration size, next to the iid η.
pub fn run_bound_curves(cfg: &ExperimentConfig, s: &BoundsSection) -> Result<Report> {
    let params = ConfidenceParams::new(cfg.alpha, s.delta, s.delta)?;
    let variant = variance(s.variance, cfg.alpha);
    let mut body = String::from("stay,n_cal,eps_cal,eps_train,eta,iid_eta,block_len,block_count,slack,status\n");
    let mut any_feasible = false;
    for &stay in &s.stay_levels {
        let profile = symmetric_chain_profile(stay)?;
        for &n in &s.n_cal_grid {
            let iid_eta = eta_marginal(&params, iid_epsilon(n, s.delta)?, 0.0);
            let train = eps_train(n + s.gap_offset, &profile);
            match eps_cal_beta(n, s.delta, &profile, variant) {
                Ok(est) => {
                    any_feasible = true;
                    let status = if est.vacuous { "vacuous" } else { "ok" };
                    let p = est.plan;
                    writeln!(
                        body,
                        "{stay},{n},{},{train},{},{iid_eta},{},{},{},{status}",
                        est.eps,
                        eta_marginal(&params, est.eps, train),
                        p.block_len,
                        p.block_count,
                        p.slack
                    )
                    .unwrap();
                }
                Err(mixcp::Error::NoFeasiblePlan) => {
                    writeln!(body, "{stay},{n},,{train},,{iid_eta},,,,no_feasible_plan").unwrap();
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(Report { body, infeasible: !any_feasible })
}

fn load_profile(source: &ProfileSource, stay: f64) -> Result<MixingProfile> {
    Ok(match source {
        ProfileSource::Markov => symmetric_chain_profile(stay)?,
        ProfileSource::Constant { value } => MixingProfile::constant(*value)?,
        ProfileSource::Table { path } => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            parse_profile_table(&text)?
        }
    })
}

/// Test-set coverage per replication against the floor `1 − α − η`.
pub fn run_empirical_coverage(cfg: &ExperimentConfig, s: &EmpiricalSection) -> Result<Report> {
    let model = cfg.model.to_model_config(cfg.alpha)?;
    let params = ConfidenceParams::new(cfg.alpha, s.delta_cal, s.delta_test)?;
    let profile = load_profile(&s.profile, s.stay)?;
    let factors = match CorrectionFactors::empirical(
        &params,
        s.n_cal as u64,
        s.n_test as u64,
        &profile,
        variance(s.variance, cfg.alpha),
    ) {
        Ok(f) => Some(f),
        Err(mixcp::Error::NoFeasiblePlan) => None,
        Err(e) => return Err(e.into()),
    };
    let floor = factors.map(|f| 1.0 - cfg.alpha - f.eta);
    let protocol = Protocol { lag_count: s.lag_count, n_train: s.n_train, n_cal: s.n_cal, n_test: s.n_test };
    let covs = replicate(cfg, |seed| {
        let hmm = HmmConfig { noise_sigma: s.noise_sigma, ..HmmConfig::symmetric(s.stay, protocol.path_len(), seed) };
        split_cp_coverage(&simulate_two_state_hmm(&hmm)?, protocol, cfg.alpha, &model)
    })?;

    let mut body = String::new();
    match factors {
        Some(f) => {
            writeln!(body, "# eps_cal = {}", f.eps_cal).unwrap();
            writeln!(body, "# eps_test = {}", f.eps_test).unwrap();
            writeln!(body, "# eta = {}", f.eta).unwrap();
            writeln!(body, "# floor = {}", floor.unwrap()).unwrap();
        }
        None => body.push_str("# floor = no_feasible_plan\n"),
    }
    body.push_str("replication,coverage,above_floor\n");
    let mut above = 0usize;
    for (r, c) in covs.iter().enumerate() {
        match floor {
            Some(fl) => {
                let ok = *c >= fl;
                above += usize::from(ok);
                writeln!(body, "{r},{c},{ok}").unwrap();
            }
            None => writeln!(body, "{r},{c},").unwrap(),
        }
    }
    match floor {
        Some(_) => writeln!(body, "# fraction_above_floor = {}", above as f64 / covs.len() as f64).unwrap(),
        None => body.push_str("# fraction_above_floor = n/a\n"),
    }
    Ok(Report { body, infeasible: floor.is_none() })
}

/// Reads a price file and turns it into timestamped linear returns.
fn csv_returns(path: &std::path::Path, timestamp_column: usize, price_column: usize) -> Result<TimeSeries> {
    let spec = ColumnSpec { timestamp: timestamp_column, price: price_column, ..ColumnSpec::default() };
    Ok(linear_returns(&load_price_csv(path, &spec)?)?)
}

/// Per-event pooled counts for one calibration size.
#[derive(Debug, Clone, Default)]
struct EventCounts {
    covered: [usize; 4],
    total: [usize; 4],
}

/// Conditional CQR on one return series: one model trained on the first
/// `n_train` rows, one per-event calibration for each size, all evaluated on
/// the final `n_test` rows.
fn conditional_counts(
    returns: &TimeSeries,
    s: &ConditionalSection,
    alpha: f64,
    model: &ModelConfig,
) -> Result<Vec<EventCounts>> {
    let max_cal = *s.cal_sizes.iter().max().expect("validated nonempty");
    let rows = make_lagged_features(returns, s.lag_count)?;
    let needed = s.n_train + max_cal + s.n_test;
    if rows.len() < needed {
        return Err(mixcp::Error::SeriesTooShort { needed: needed + s.lag_count, got: returns.len() }.into());
    }
    let threshold = match s.vol_threshold {
        Some(v) => v,
        None => event_masks(returns, s.vol_window, None)?.vol_threshold,
    };
    // Only per-set coverage is reported, so the family's VC parameters are
    // placeholders.
    let family = event_set_family(s.lag_count, s.vol_window, threshold, 1, 0.5)?;
    let n = rows.len();
    let train = rows.slice(0..s.n_train);
    let test = rows.slice(n - s.n_test..n);
    let score = CqrScore::new(fit_quantile_model(&train, model)?);
    let mut out = Vec::with_capacity(s.cal_sizes.len());
    for &c in &s.cal_sizes {
        let cal = rows.slice(n - s.n_test - c..n - s.n_test);
        let pred = conditional_calibrate(&score, &cal, alpha, &family)?;
        let report = evaluate_conditional_coverage(&pred, &test)?;
        let mut counts = EventCounts::default();
        for (i, set) in report.per_set.expect("conditional report").iter().enumerate() {
            counts.covered[i] = set.covered;
            counts.total[i] = set.total;
        }
        out.push(counts);
    }
    Ok(out)
}

/// Coverage per event and calibration size, pooled over replications.
/// Events with no test points are reported as `absent`.
pub fn run_conditional_table(cfg: &ExperimentConfig, s: &ConditionalSection) -> Result<Report> {
    let model = cfg.model.to_model_config(cfg.alpha)?;
    let max_cal = *s.cal_sizes.iter().max().expect("validated nonempty");
    let (dataset, per_rep) = match &s.source {
        SeriesSource::Ar1 { lambda } => {
            let length = s.lag_count + s.n_train + max_cal + s.n_test;
            let per_rep = replicate(cfg, |seed| {
                let path = simulate_ar1(&Ar1Config { lambda: *lambda, length, seed })?;
                conditional_counts(&path, s, cfg.alpha, &model)
            })?;
            (format!("ar1_{lambda}"), per_rep)
        }
        SeriesSource::Csv { path, timestamp_column, price_column } => {
            let returns = csv_returns(path, *timestamp_column, *price_column)?;
            let name = path.file_stem().map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned());
            (name, vec![conditional_counts(&returns, s, cfg.alpha, &model)?])
        }
    };
    let mut body = format!("dataset,cal_size,{}\n", EventMasks::names().join(","));
    for (k, &c) in s.cal_sizes.iter().enumerate() {
        let mut pooled = EventCounts::default();
        for rep in &per_rep {
            for i in 0..4 {
                pooled.covered[i] += rep[k].covered[i];
                pooled.total[i] += rep[k].total[i];
            }
        }
        body.push_str(&event_row(&dataset, c, &pooled));
    }
    Ok(Report { body, infeasible: false })
}

fn event_row(dataset: &str, cal_size: usize, counts: &EventCounts) -> String {
    let mut row = format!("{dataset},{cal_size}");
    for i in 0..4 {
        if counts.total[i] == 0 {
            row.push_str(",absent");
        } else {
            write!(row, ",{}", counts.covered[i] as f64 / counts.total[i] as f64).unwrap();
        }
    }
    row.push('\n');
    row
}

/// Accepts three-letter or full English weekday names, any case.
pub fn parse_weekdays(names: &[String]) -> Result<Vec<Weekday>> {
    names.iter().map(|n| n.parse::<Weekday>().map_err(|_| CliError::Config(format!("unknown weekday `{n}`")))).collect()
}

/// Synthetic prices: `p_0 = 100`, `p_t = p_{t−1} (1 + scale · W_t)` with
/// `W` an AR(1) path, observed every `interval_secs` from `start`.
fn synthetic_prices(s: &BacktestSection, lambda: f64, seed: u64) -> Result<TimeSeries> {
    // `n` observations, the last one inside the final day.
    let n = (i64::from(s.days) * 86_400 / s.interval_secs) as usize;
    if n < 2 {
        return Err(CliError::Config("backtest needs at least two observations".into()));
    }
    let w = simulate_ar1(&Ar1Config { lambda, length: n - 1, seed })?;
    let mut prices = Vec::with_capacity(n);
    let mut p = 100.0;
    prices.push(p);
    for &v in w.values() {
        p *= 1.0 + s.scale * v;
        prices.push(p);
    }
    let timestamps = (0..n as i64).map(|i| s.start + i * s.interval_secs).collect();
    Ok(TimeSeries::with_timestamps(prices, timestamps)?)
}

/// Online sliding-window CQR, aggregated by UTC calendar day over the
/// selected weekdays. Days without predictions do not appear.
pub fn run_backtest(cfg: &ExperimentConfig, s: &BacktestSection) -> Result<Report> {
    let model = cfg.model.to_model_config(cfg.alpha)?;
    let weekdays = parse_weekdays(&s.weekdays)?;
    let returns = match &s.source {
        SeriesSource::Ar1 { lambda } => linear_returns(&synthetic_prices(s, *lambda, derive_seed(cfg.seed, 0))?)?,
        SeriesSource::Csv { path, timestamp_column, price_column } => {
            csv_returns(path, *timestamp_column, *price_column)?
        }
    };
    let records = online_sliding_cp(&returns, s.lag_count, s.w_train, s.w_cal, cfg.alpha, &model, s.refit_stride)?;
    let mut days: BTreeMap<NaiveDate, (usize, usize)> = BTreeMap::new();
    for rec in &records {
        let ts = rec.timestamp.ok_or_else(|| CliError::Config("backtest input has no timestamps".into()))?;
        let day = DateTime::from_timestamp(ts, 0)
            .ok_or_else(|| CliError::Config(format!("timestamp {ts} is out of range")))?
            .date_naive();
        if weekdays.contains(&day.weekday()) {
            let e = days.entry(day).or_default();
            e.0 += usize::from(rec.covered);
            e.1 += 1;
        }
    }
    let mut body = String::from("date,weekday,points,coverage\n");
    let (mut covered, mut total) = (0, 0);
    for (day, (c, n)) in &days {
        writeln!(body, "{day},{},{n},{}", day.weekday(), *c as f64 / *n as f64).unwrap();
        covered += c;
        total += n;
    }
    if total > 0 {
        writeln!(body, "# overall_coverage = {}", covered as f64 / total as f64).unwrap();
    } else {
        body.push_str("# overall_coverage = n/a\n");
    }
    Ok(Report { body, infeasible: false })
}

fn iid_regression(n: usize, rng: &mut mixcp::rng::SimRng) -> Result<SupervisedDataset> {
    let mut ds = SupervisedDataset::new(1);
    for _ in 0..n {
        let x = standard_normal(rng);
        ds.push(&[x], x + standard_normal(rng))?;
    }
    Ok(ds)
}

/// RCPS with intervals `[x − λ, x + λ]` on `y = x + noise`, iid Gaussian.
pub fn run_rcps_demo(cfg: &ExperimentConfig, s: &RcpsSection) -> Result<Report> {
    let steps = (s.grid_max / s.grid_step).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| i as f64 * s.grid_step).collect();
    let family = NestedFamily::new(SymmetricIntervals::new(|x: &[f64]| x[0]), grid)?;
    let bound = cfg.alpha + iid_epsilon(s.n_cal as u64, s.delta)?;
    let rows = replicate(cfg, |seed| {
        let mut rng = seeded(seed);
        let cal = iid_regression(s.n_cal, &mut rng)?;
        let test = iid_regression(s.n_test, &mut rng)?;
        let risks = risk_curve(&family, &MiscoverageLoss, &cal)?;
        let monotone = risks.windows(2).all(|w| w[1] <= w[0]);
        let lambda = threshold_from_risks(family.grid(), &risks, cfg.alpha)?;
        let test_risk = evaluate_risk(&family, &MiscoverageLoss, &test, lambda)?;
        Ok((lambda, test_risk, monotone))
    })?;
    let mut body = String::from("replication,lambda_hat,test_risk,within_bound,risk_monotone\n");
    let mut within = 0usize;
    for (r, (lambda, risk, monotone)) in rows.iter().enumerate() {
        let ok = *risk <= bound;
        within += usize::from(ok);
        writeln!(body, "{r},{lambda},{risk},{ok},{monotone}").unwrap();
    }
    writeln!(body, "# bound = {bound}").unwrap();
    writeln!(body, "# fraction_within_bound = {}", within as f64 / rows.len() as f64).unwrap();
    Ok(Report { body, infeasible: false })
}
