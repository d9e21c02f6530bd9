//! Price files, linear returns and the trend/volatility event masks.

use std::path::Path;
use std::sync::Arc;

use crate::data::TimeSeries;
use crate::error::{Error, Result};
use crate::quantile::{empirical_quantile, QuantileLevel};
use crate::splitcp::{SetFamily, SetPredicate};

/// Whether the first row of a price file is a header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeaderMode {
    /// Header if the first row does not parse as data.
    #[default]
    Auto,
    Present,
    Absent,
}

/// Which columns hold the epoch-second timestamp and the price.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnSpec {
    pub timestamp: usize,
    pub price: usize,
    pub header: HeaderMode,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self { timestamp: 0, price: 1, header: HeaderMode::Auto }
    }
}

fn field(record: &csv::StringRecord, col: usize, line: u64) -> Result<&str> {
    record.get(col).ok_or_else(|| Error::Parse { line, msg: format!("missing column {col}") })
}

fn parse_row(record: &csv::StringRecord, spec: &ColumnSpec, line: u64) -> Result<(i64, f64)> {
    let ts = field(record, spec.timestamp, line)?;
    let ts: i64 = ts.parse().map_err(|_| Error::Parse { line, msg: format!("bad timestamp `{ts}`") })?;
    let px = field(record, spec.price, line)?;
    let price: f64 = px.parse().map_err(|_| Error::Parse { line, msg: format!("bad price `{px}`") })?;
    if !price.is_finite() {
        return Err(Error::Parse { line, msg: format!("non-finite price `{px}`") });
    }
    Ok((ts, price))
}

/// Parses `timestamp,price` rows from CSV text.
pub fn parse_price_csv(text: &str, spec: &ColumnSpec) -> Result<TimeSeries> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut stamps: Vec<i64> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| Error::Parse { line: e.position().map_or(0, |p| p.line()), msg: e.to_string() })?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let row = parse_row(&record, spec, line);
        if idx == 0 {
            match spec.header {
                HeaderMode::Present => continue,
                HeaderMode::Auto if row.is_err() => continue,
                _ => {}
            }
        }
        let (ts, price) = row?;
        if price <= 0.0 {
            return Err(Error::NonpositivePrice { line });
        }
        if stamps.last().is_some_and(|&prev| ts <= prev) {
            return Err(Error::NonMonotoneTimestamps { line });
        }
        stamps.push(ts);
        values.push(price);
    }
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    TimeSeries::with_timestamps(values, stamps)
}

pub fn load_price_csv(path: impl AsRef<Path>, spec: &ColumnSpec) -> Result<TimeSeries> {
    parse_price_csv(&std::fs::read_to_string(path)?, spec)
}

/// `r_t = p_t / p_{t−1} − 1`, timestamped at `t`.
pub fn linear_returns(prices: &TimeSeries) -> Result<TimeSeries> {
    let p = prices.values();
    if p.len() < 2 {
        return Err(Error::SeriesTooShort { needed: 2, got: p.len() });
    }
    if p.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidData("prices must be positive".into()));
    }
    let r: Vec<f64> = p.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    match prices.timestamps() {
        Some(ts) => TimeSeries::with_timestamps(r, ts[1..].to_vec()),
        None => TimeSeries::new(r),
    }
}

/// Sample standard deviation (n − 1 denominator).
fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventMasks {
    pub uptrend: Vec<bool>,
    pub downtrend: Vec<bool>,
    pub high_vol: Vec<bool>,
    pub low_vol: Vec<bool>,
    pub vol_threshold: f64,
}

impl EventMasks {
    pub fn names() -> [&'static str; 4] {
        ["uptrend", "downtrend", "high_vol", "low_vol"]
    }

    pub fn get(&self, event: usize) -> &[bool] {
        match event {
            0 => &self.uptrend,
            1 => &self.downtrend,
            2 => &self.high_vol,
            _ => &self.low_vol,
        }
    }
}

/// Rolling standard deviation of the `window` returns before each index
/// `t >= window`.
pub fn rolling_vol(returns: &[f64], window: usize) -> Vec<f64> {
    (window..returns.len()).map(|t| sample_std(&returns[t - window..t])).collect()
}

/// Trend masks look at the two previous returns (strict signs, from index 2);
/// volatility masks compare the sample standard deviation of the previous
/// `vol_window` returns with the threshold (from index `vol_window`). The
/// threshold defaults to the median rolling standard deviation.
pub fn event_masks(returns: &TimeSeries, vol_window: usize, vol_threshold: Option<f64>) -> Result<EventMasks> {
    let r = returns.values();
    let n = r.len();
    if vol_window < 2 {
        return Err(Error::BadParameter("vol_window must be at least 2".into()));
    }
    if n <= vol_window {
        return Err(Error::SeriesTooShort { needed: vol_window + 1, got: n });
    }
    let mut uptrend = vec![false; n];
    let mut downtrend = vec![false; n];
    for t in 2..n {
        uptrend[t] = r[t - 1] > 0.0 && r[t - 2] > 0.0;
        downtrend[t] = r[t - 1] < 0.0 && r[t - 2] < 0.0;
    }
    let vols = rolling_vol(r, vol_window);
    let threshold = match vol_threshold {
        Some(v) => v,
        None => empirical_quantile(&vols, QuantileLevel::new(0.5)?)?,
    };
    let mut high_vol = vec![false; n];
    let mut low_vol = vec![false; n];
    for (k, &v) in vols.iter().enumerate() {
        high_vol[vol_window + k] = v > threshold;
        low_vol[vol_window + k] = v <= threshold;
    }
    Ok(EventMasks { uptrend, downtrend, high_vol, low_vol, vol_threshold: threshold })
}

/// The four events as covariate sets over lag vectors (oldest lag first),
/// so that set membership of a lagged row agrees with the masks at its
/// target index. Each event is a half-space intersection or a threshold on
/// a single statistic; the declared VC dimension is `vc_dim`.
pub fn event_set_family(
    lag_count: usize,
    vol_window: usize,
    vol_threshold: f64,
    vc_dim: u32,
    gamma: f64,
) -> Result<SetFamily> {
    if lag_count < vol_window.max(2) {
        return Err(Error::BadParameter(format!("{lag_count} lags cannot cover a window of {vol_window}")));
    }
    let last = lag_count - 1;
    let prev = lag_count - 2;
    let start = lag_count - vol_window;
    let sets: Vec<(String, SetPredicate)> = vec![
        ("uptrend".into(), Arc::new(move |x: &[f64]| x[last] > 0.0 && x[prev] > 0.0)),
        ("downtrend".into(), Arc::new(move |x: &[f64]| x[last] < 0.0 && x[prev] < 0.0)),
        ("high_vol".into(), Arc::new(move |x: &[f64]| sample_std(&x[start..]) > vol_threshold)),
        ("low_vol".into(), Arc::new(move |x: &[f64]| sample_std(&x[start..]) <= vol_threshold)),
    ];
    SetFamily::new(sets, vc_dim, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_lagged_features;
    use proptest::prelude::*;

    fn spec() -> ColumnSpec {
        ColumnSpec::default()
    }

    #[test]
    fn csv_examples() {
        let s = parse_price_csv("0,100\n60,101", &spec()).unwrap();
        assert_eq!(s.values(), &[100.0, 101.0]);
        assert_eq!(s.timestamps().unwrap(), &[0, 60]);
        let s = parse_price_csv("time,price\n0,100\n60,101\n", &spec()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(parse_price_csv("60,100\n0,101\n", &spec()).unwrap_err(), Error::NonMonotoneTimestamps { line: 2 });
        assert_eq!(parse_price_csv("0,100\n0,101\n", &spec()).unwrap_err(), Error::NonMonotoneTimestamps { line: 2 });
        assert_eq!(parse_price_csv("0,100\n60,0\n", &spec()).unwrap_err(), Error::NonpositivePrice { line: 2 });
        assert!(matches!(parse_price_csv("0,100\n60,abc\n", &spec()), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_price_csv("0,100\n60,NaN\n", &spec()), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_price_csv("0,100\n60\n", &spec()), Err(Error::Parse { line: 2, .. })));
        let absent = ColumnSpec { header: HeaderMode::Absent, ..spec() };
        assert!(matches!(parse_price_csv("t,p\n0,1\n", &absent), Err(Error::Parse { line: 1, .. })));
        let cols = ColumnSpec { timestamp: 2, price: 0, header: HeaderMode::Present };
        let s = parse_price_csv("p,x,t\n5,a,10\n6,b,20\n", &cols).unwrap();
        assert_eq!(s.values(), &[5.0, 6.0]);
        assert_eq!(parse_price_csv("", &spec()).unwrap_err(), Error::EmptyInput);
    }

    #[test]
    fn load_from_file() {
        let dir = std::env::temp_dir().join(format!("mixcp-ingest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("prices.csv");
        std::fs::write(&path, "0,100\n60,101\n").unwrap();
        assert_eq!(load_price_csv(&path, &spec()).unwrap().values(), &[100.0, 101.0]);
        assert!(matches!(load_price_csv(dir.join("missing.csv"), &spec()), Err(Error::Io(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn returns_examples() {
        let r = linear_returns(&TimeSeries::new(vec![100.0, 101.0]).unwrap()).unwrap();
        assert!((r.values()[0] - 0.01).abs() < 1e-15);
        let r = linear_returns(&TimeSeries::new(vec![7.0; 5]).unwrap()).unwrap();
        assert!(r.values().iter().all(|&v| v == 0.0));
        let r = linear_returns(&TimeSeries::new(vec![100.0, 50.0]).unwrap()).unwrap();
        assert_eq!(r.values(), &[-0.5]);
        assert!(matches!(linear_returns(&TimeSeries::new(vec![1.0]).unwrap()), Err(Error::SeriesTooShort { .. })));
    }

    #[test]
    fn mask_examples() {
        let mut r = vec![0.1, 0.2, -0.1];
        r.extend((0..20).map(|i| if i % 2 == 0 { 0.05 } else { -0.05 }));
        let m = event_masks(&TimeSeries::new(r).unwrap(), 10, None).unwrap();
        assert!(m.uptrend[2]);
        assert!(!m.uptrend[3]);

        let alt: Vec<f64> = (0..30).map(|i| if i % 2 == 0 { 0.01 } else { -0.01 }).collect();
        let m = event_masks(&TimeSeries::new(alt).unwrap(), 10, None).unwrap();
        assert!(!m.uptrend.iter().any(|&b| b) && !m.downtrend.iter().any(|&b| b));

        let mut zeros = vec![0.0; 12];
        zeros.extend([0.01, 0.02, 0.03]);
        let m = event_masks(&TimeSeries::new(zeros).unwrap(), 10, None).unwrap();
        assert!(m.uptrend[..13].iter().all(|&b| !b) && m.downtrend.iter().all(|&b| !b));
        assert!(m.uptrend[14]);

        assert!(matches!(
            event_masks(&TimeSeries::new(vec![0.0; 10]).unwrap(), 10, None),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn covariate_sets_agree_with_masks() {
        let r: Vec<f64> = (0..300).map(|i| ((i * 37 % 101) as f64 - 50.0) / 1000.0).collect();
        let series = TimeSeries::new(r).unwrap();
        let masks = event_masks(&series, 10, None).unwrap();
        let family = event_set_family(11, 10, masks.vol_threshold, 2, 0.1).unwrap();
        let rows = make_lagged_features(&series, 11).unwrap();
        for j in 0..rows.len() {
            let t = j + 11;
            for e in 0..4 {
                assert_eq!(family.contains(e, rows.x(j)), masks.get(e)[t], "event {e} at {t}");
            }
        }
    }

    proptest! {
        #[test]
        fn returns_round_trip(p0 in 1f64..1000.0, rs in prop::collection::vec(-0.5f64..0.5, 1..100)) {
            let mut prices = vec![p0];
            for r in &rs {
                let last = *prices.last().unwrap();
                prices.push(last * (1.0 + r));
            }
            let ret = linear_returns(&TimeSeries::new(prices.clone()).unwrap()).unwrap();
            let mut rebuilt = p0;
            for (k, r) in ret.values().iter().enumerate() {
                rebuilt *= 1.0 + r;
                prop_assert!((rebuilt - prices[k + 1]).abs() <= 1e-12 * prices[k + 1]);
            }
        }

        #[test]
        fn masks_are_exclusive_and_shift(rs in prop::collection::vec(-0.02f64..0.02, 12..80), shift in 1usize..5) {
            let m = event_masks(&TimeSeries::new(rs.clone()).unwrap(), 10, Some(0.01)).unwrap();
            for t in 0..rs.len() {
                prop_assert!(!(m.uptrend[t] && m.downtrend[t]));
                prop_assert!(!(m.high_vol[t] && m.low_vol[t]));
            }
            let mut shifted = vec![0.0; shift];
            shifted.extend(&rs);
            let ms = event_masks(&TimeSeries::new(shifted).unwrap(), 10, Some(0.01)).unwrap();
            for t in 2..rs.len() {
                prop_assert_eq!(m.uptrend[t], ms.uptrend[t + shift]);
                prop_assert_eq!(m.downtrend[t], ms.downtrend[t + shift]);
            }
            for t in 10..rs.len() {
                prop_assert_eq!(m.high_vol[t], ms.high_vol[t + shift]);
            }
        }
    }
}
