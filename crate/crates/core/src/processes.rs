//! Seeded simulators for the two-state hidden Markov model and the Gaussian
//! AR(1) process, both started from their stationary law.

use std::io::Write;

use crate::data::TimeSeries;
use crate::error::{Error, Result};
use crate::rng::{seeded, standard_normal, uniform_open};

/// Emission noise used when a configuration does not specify one.
pub const DEFAULT_NOISE_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct HmmConfig {
    /// P(W_t = 1 | W_{t-1} = 0)
    pub p: f64,
    /// P(W_t = 0 | W_{t-1} = 1)
    pub q: f64,
    pub noise_sigma: f64,
    pub length: usize,
    pub seed: u64,
}

impl HmmConfig {
    /// Symmetric chain that repeats its state with probability `stay`.
    pub fn symmetric(stay: f64, length: usize, seed: u64) -> Self {
        Self { p: 1.0 - stay, q: 1.0 - stay, noise_sigma: DEFAULT_NOISE_SIGMA, length, seed }
    }

    fn validate(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.p) || !open(self.q) {
            return Err(Error::BadParameter(format!(
                "transition probabilities ({}, {}) must lie in (0, 1)",
                self.p, self.q
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::BadParameter(format!("noise sigma {} must be >= 0", self.noise_sigma)));
        }
        if self.length == 0 {
            return Err(Error::BadParameter("length must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ar1Config {
    pub lambda: f64,
    pub length: usize,
    pub seed: u64,
}

/// Hidden two-state path plus Gaussian emissions.
///
/// Per step the stream consumes one uniform for the state (initial draw from
/// the stationary law, then the transition) and one for the emission noise,
/// even when the noise is zero.
pub fn simulate_two_state_hmm_with_states(cfg: &HmmConfig) -> Result<(Vec<u8>, TimeSeries)> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let pi1 = cfg.p / (cfg.p + cfg.q);
    let mut states = Vec::with_capacity(cfg.length);
    let mut values = Vec::with_capacity(cfg.length);
    let mut w = u8::from(uniform_open(&mut rng) < pi1);
    for t in 0..cfg.length {
        if t > 0 {
            let u = uniform_open(&mut rng);
            w = match w {
                0 => u8::from(u < cfg.p),
                _ => u8::from(u >= cfg.q),
            };
        }
        let noise = standard_normal(&mut rng);
        states.push(w);
        values.push(f64::from(w) + cfg.noise_sigma * noise);
    }
    Ok((states, TimeSeries::new(values)?))
}

pub fn simulate_two_state_hmm(cfg: &HmmConfig) -> Result<TimeSeries> {
    simulate_two_state_hmm_with_states(cfg).map(|(_, s)| s)
}

/// `W_0 ~ N(0, 1/(1-λ²))`, then `W_t = λ W_{t-1} + N(0, 1)`.
pub fn simulate_ar1(cfg: &Ar1Config) -> Result<TimeSeries> {
    if !(cfg.lambda.abs() < 1.0) {
        return Err(Error::NonStationaryLambda(cfg.lambda));
    }
    if cfg.length == 0 {
        return Err(Error::BadParameter("length must be positive".into()));
    }
    let mut rng = seeded(cfg.seed);
    let mut values = Vec::with_capacity(cfg.length);
    let mut w = standard_normal(&mut rng) / (1.0 - cfg.lambda * cfg.lambda).sqrt();
    values.push(w);
    for _ in 1..cfg.length {
        w = cfg.lambda * w + standard_normal(&mut rng);
        values.push(w);
    }
    TimeSeries::new(values)
}

/// One value per line, shortest round-trip formatting.
pub fn write_path<W: Write>(series: &TimeSeries, mut out: W) -> Result<()> {
    for v in series.values() {
        writeln!(out, "{v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn iid_bernoulli_when_noise_free_and_half() {
        let cfg = HmmConfig { p: 0.5, q: 0.5, noise_sigma: 0.0, length: 100_000, seed: 3 };
        let (states, s) = simulate_two_state_hmm_with_states(&cfg).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0 || v == 1.0));
        let ones = states.iter().filter(|&&w| w == 1).count() as f64 / states.len() as f64;
        assert!((ones - 0.5).abs() < 3.0 * (0.25f64 / 1e5).sqrt());
        // Consecutive states are uncorrelated.
        let both = states.windows(2).filter(|w| w[0] == 1 && w[1] == 1).count() as f64 / (states.len() - 1) as f64;
        assert!((both - 0.25).abs() < 0.01);
    }

    #[test]
    fn run_lengths_scale_with_inverse_switch_probability() {
        let cfg = HmmConfig { p: 0.01, q: 0.01, noise_sigma: 0.0, length: 1_000_000, seed: 5 };
        let (states, _) = simulate_two_state_hmm_with_states(&cfg).unwrap();
        let switches = states.windows(2).filter(|w| w[0] != w[1]).count();
        // Interior runs are geometric with mean 1/p = 100.
        let mean_run = (states.len() as f64) / (switches as f64 + 1.0);
        assert!((mean_run - 100.0).abs() < 20.0, "{mean_run}");
    }

    #[test]
    fn hmm_transition_frequencies() {
        let (p, q) = (0.2, 0.35);
        let cfg = HmmConfig { p, q, noise_sigma: 0.1, length: 1_000_000, seed: 9 };
        let (states, _) = simulate_two_state_hmm_with_states(&cfg).unwrap();
        let (mut from0, mut to1, mut from1, mut to0) = (0.0, 0.0, 0.0, 0.0);
        for w in states.windows(2) {
            if w[0] == 0 {
                from0 += 1.0;
                if w[1] == 1 {
                    to1 += 1.0;
                }
            } else {
                from1 += 1.0;
                if w[1] == 0 {
                    to0 += 1.0;
                }
            }
        }
        let (ph, qh) = (to1 / from0, to0 / from1);
        assert!((ph - p).abs() < 3.0 * (p * (1.0 - p) / from0).sqrt(), "{ph}");
        assert!((qh - q).abs() < 3.0 * (q * (1.0 - q) / from1).sqrt(), "{qh}");
    }

    #[test]
    fn seeds_are_deterministic() {
        let cfg = HmmConfig::symmetric(0.9, 1000, 42);
        assert_eq!(simulate_two_state_hmm(&cfg).unwrap(), simulate_two_state_hmm(&cfg).unwrap());
        let a = Ar1Config { lambda: 0.7, length: 1000, seed: 42 };
        assert_eq!(simulate_ar1(&a).unwrap(), simulate_ar1(&a).unwrap());
        let b = Ar1Config { seed: 43, ..a.clone() };
        assert_ne!(simulate_ar1(&a).unwrap(), simulate_ar1(&b).unwrap());
    }

    #[test]
    fn bad_configs() {
        assert!(simulate_two_state_hmm(&HmmConfig { p: 0.0, ..HmmConfig::symmetric(0.5, 10, 0) }).is_err());
        assert!(simulate_two_state_hmm(&HmmConfig { length: 0, ..HmmConfig::symmetric(0.5, 10, 0) }).is_err());
        assert_eq!(simulate_ar1(&Ar1Config { lambda: 1.0, length: 10, seed: 0 }), Err(Error::NonStationaryLambda(1.0)));
    }

    #[test]
    fn ar1_moments() {
        let s = simulate_ar1(&Ar1Config { lambda: 0.0, length: 100_000, seed: 1 }).unwrap();
        let (_, var) = mean_var(s.values());
        assert!((var - 1.0).abs() < 3.0 * (2.0f64 / 1e5).sqrt());

        let s = simulate_ar1(&Ar1Config { lambda: 0.5, length: 100_000, seed: 2 }).unwrap();
        let (_, var) = mean_var(s.values());
        assert!((var / (1.0 / 0.75) - 1.0).abs() < 0.05);

        let s = simulate_ar1(&Ar1Config { lambda: 0.9, length: 100_000, seed: 3 }).unwrap();
        let v = s.values();
        let (m, var) = mean_var(v);
        let cov = v.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / (v.len() - 1) as f64;
        assert!((cov / var - 0.9).abs() < 0.02);
    }

    #[test]
    fn stationary_halves() {
        let check = |v: &[f64], tol_mean: f64| {
            let (a, b) = v.split_at(v.len() / 2);
            let (ma, va) = mean_var(a);
            let (mb, vb) = mean_var(b);
            assert!((ma - mb).abs() < tol_mean, "{ma} vs {mb}");
            assert!((va / vb - 1.0).abs() < 0.1, "{va} vs {vb}");
        };
        let s = simulate_ar1(&Ar1Config { lambda: 0.5, length: 100_000, seed: 4 }).unwrap();
        // sd of a half-mean is about sqrt(var / (n/2) * (1+λ)/(1-λ))
        check(s.values(), 4.0 * (1.333f64 / 5e4 * 3.0).sqrt());
        let s = simulate_two_state_hmm(&HmmConfig::symmetric(0.9, 100_000, 4)).unwrap();
        check(s.values(), 4.0 * (0.26f64 / 5e4 * 19.0).sqrt());
    }

    #[test]
    fn path_dump() {
        let s = TimeSeries::new(vec![1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_path(&s, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1.5\n-2\n");
    }
}
