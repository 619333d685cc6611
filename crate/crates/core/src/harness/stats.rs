//! Ensemble statistics and least-squares fits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First and second moments of a phase-space sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean_x: f64,
    pub var_x: f64,
    pub mean_p: f64,
    pub var_p: f64,
    pub cov_xp: f64,
}

impl Moments {
    /// Sample moments with the `n - 1` normalisation.
    pub fn from_samples(xs: &[f64], ps: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n < 2 || ps.len() != n {
            return Err(Error::invalid("moments need at least two paired samples"));
        }
        let nf = n as f64;
        let mean_x = xs.iter().sum::<f64>() / nf;
        let mean_p = ps.iter().sum::<f64>() / nf;
        let (mut vx, mut vp, mut c) = (0.0, 0.0, 0.0);
        for (x, p) in xs.iter().zip(ps) {
            let dx = x - mean_x;
            let dp = p - mean_p;
            vx += dx * dx;
            vp += dp * dp;
            c += dx * dp;
        }
        let d = nf - 1.0;
        Ok(Self {
            mean_x,
            var_x: vx / d,
            mean_p,
            var_p: vp / d,
            cov_xp: c / d,
        })
    }

    pub fn names() -> [&'static str; 5] {
        ["mean_x", "mean_p", "var_x", "var_p", "cov_xp"]
    }

    pub fn values(&self) -> [f64; 5] {
        [
            self.mean_x,
            self.mean_p,
            self.var_x,
            self.var_p,
            self.cov_xp,
        ]
    }
}

/// A fitted constant and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub value: f64,
    pub stderr: f64,
}

/// Site histogram at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub t: f64,
    pub origin: f64,
    pub spacing: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn mass(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let m = self.mass().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / m).collect()
    }
}

/// Time series of ensemble observables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub var_x: Vec<f64>,
    pub mean_p: Vec<f64>,
    pub var_p: Vec<f64>,
    pub cov_xp: Vec<f64>,
    pub histograms: Vec<Histogram>,
    pub tv_distance: Vec<f64>,
    /// Further per-checkpoint observables, keyed by name.
    #[serde(default)]
    pub series: BTreeMap<String, Vec<f64>>,
    pub fit_results: BTreeMap<String, Fit>,
}

impl EnsembleStats {
    pub fn fit(&self, name: &str) -> Option<Fit> {
        self.fit_results.get(name).copied()
    }

    pub fn set_fit(&mut self, name: &str, value: f64, stderr: f64) {
        self.fit_results
            .insert(name.to_string(), Fit { value, stderr });
    }

    pub fn push_moments(&mut self, t: f64, m: &Moments) {
        self.times.push(t);
        self.mean_x.push(m.mean_x);
        self.var_x.push(m.var_x);
        self.mean_p.push(m.mean_p);
        self.var_p.push(m.var_p);
        self.cov_xp.push(m.cov_xp);
    }

    pub fn moments_at(&self, k: usize) -> Moments {
        Moments {
            mean_x: self.mean_x[k],
            var_x: self.var_x[k],
            mean_p: self.mean_p[k],
            var_p: self.var_p[k],
            cov_xp: self.cov_xp[k],
        }
    }
}

/// Ordinary least squares `y = intercept + slope·t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

pub fn linear_fit(t: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = t.len();
    if n < 3 || y.len() != n {
        return Err(Error::DegenerateSeries(
            "linear fit needs at least three points".into(),
        ));
    }
    let nf = n as f64;
    let tm = t.iter().sum::<f64>() / nf;
    let ym = y.iter().sum::<f64>() / nf;
    let stt: f64 = t.iter().map(|v| (v - tm).powi(2)).sum();
    if !(stt > 0.0) {
        return Err(Error::DegenerateSeries("all abscissae coincide".into()));
    }
    let sty: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let slope = sty / stt;
    let intercept = ym - slope * tm;
    let rss: f64 = t
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr: (rss / (nf - 2.0) / stt).sqrt(),
    })
}

/// Decay rate from a least-squares fit of `ln|ρ|` against `t`.
pub fn fit_decay_rate(series: &[(f64, f64)]) -> Result<Fit> {
    if series.len() < 10 {
        return Err(Error::DegenerateSeries(format!(
            "{} points, need at least 10",
            series.len()
        )));
    }
    if let Some(&(t, v)) = series.iter().find(|e| !(e.1 > 0.0) || !e.1.is_finite()) {
        return Err(Error::DegenerateSeries(format!(
            "nonpositive value {v} at t = {t}"
        )));
    }
    let t: Vec<f64> = series.iter().map(|e| e.0).collect();
    let y: Vec<f64> = series.iter().map(|e| e.1.ln()).collect();
    let f = linear_fit(&t, &y)?;
    Ok(Fit {
        value: -f.slope,
        stderr: f.slope_stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_exponential_rate() {
        let s: Vec<(f64, f64)> = (0..20)
            .map(|k| (0.1 * k as f64, 3.0 * (-0.5 * 0.1 * k as f64).exp()))
            .collect();
        let f = fit_decay_rate(&s).unwrap();
        assert!((f.value - 0.5).abs() < 1e-6);
        assert!(f.stderr < 1e-9);
    }

    #[test]
    fn flat_series_has_zero_rate() {
        let s: Vec<(f64, f64)> = (0..12).map(|k| (k as f64, 0.25)).collect();
        assert!(fit_decay_rate(&s).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn degenerate_series_are_rejected() {
        let short: Vec<(f64, f64)> = (0..5).map(|k| (k as f64, 1.0)).collect();
        assert!(matches!(
            fit_decay_rate(&short),
            Err(Error::DegenerateSeries(_))
        ));
        let mut bad: Vec<(f64, f64)> = (0..12).map(|k| (k as f64, 1.0)).collect();
        bad[4].1 = 0.0;
        assert!(matches!(
            fit_decay_rate(&bad),
            Err(Error::DegenerateSeries(_))
        ));
    }

    #[test]
    fn moments_of_a_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ps = [2.0, 4.0, 6.0, 8.0];
        let m = Moments::from_samples(&xs, &ps).unwrap();
        assert_eq!(m.mean_x, 2.5);
        assert!((m.var_x - 5.0 / 3.0).abs() < 1e-15);
        assert!((m.cov_xp - 10.0 / 3.0).abs() < 1e-15);
        assert!(m.cov_xp.abs() <= (m.var_x * m.var_p).sqrt() + 1e-12);
    }

    #[test]
    fn slope_with_noise_has_a_standard_error() {
        let t: Vec<f64> = (0..50).map(|k| k as f64).collect();
        let y: Vec<f64> = t
            .iter()
            .map(|v| 2.0 * v + if (*v as i64) % 2 == 0 { 0.1 } else { -0.1 })
            .collect();
        let f = linear_fit(&t, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 3.0 * f.slope_stderr + 1e-3);
        assert!(f.slope_stderr > 0.0);
    }
}
