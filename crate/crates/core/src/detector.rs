//! Chi-squared spoofing detector over the GPS residuals of an optimized window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{SolveReport, SolverParams, WindowGraph};

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

const GAMMA_EPS: f64 = 1e-16;
const GAMMA_MAX_ITER: usize = 10_000;

/// Regularized lower incomplete gamma `P(a, x)`.
///
/// Power series below `x < a + 1`, Lentz continued fraction for `Q` above.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..GAMMA_MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * GAMMA_EPS {
                break;
            }
        }
        (sum * log_prefix.exp()).min(1.0)
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..GAMMA_MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < GAMMA_EPS {
                break;
            }
        }
        (1.0 - log_prefix.exp() * h).max(0.0)
    }
}

/// CDF of the central chi-squared distribution with `n` degrees of freedom.
pub fn chi2_cdf(x: f64, n: usize) -> f64 {
    regularized_gamma_p(0.5 * n as f64, 0.5 * x)
}

/// Quantile of the central chi-squared distribution.
///
/// Safeguarded Newton iteration inside the bracket `[0, n + 40√n]`, falling
/// back to bisection whenever a Newton step leaves the bracket.
pub fn chi2_inverse_cdf(p: f64, n: usize) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    if n == 0 {
        return Err(Error::InvalidDegreesOfFreedom(n));
    }
    let nf = n as f64;
    let mut lo = 0.0;
    let mut hi = nf + 40.0 * nf.sqrt();
    while chi2_cdf(hi, n) < p {
        lo = hi;
        hi *= 2.0;
    }
    let a = 0.5 * nf;
    let log_norm = ln_gamma(a) + a * std::f64::consts::LN_2;
    let density = |x: f64| ((a - 1.0) * x.ln() - 0.5 * x - log_norm).exp();

    let mut x = nf.max(1e-3).clamp(lo, hi);
    for _ in 0..200 {
        let f = chi2_cdf(x, n) - p;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let pdf = density(x);
        let mut next = if pdf > 0.0 && pdf.is_finite() {
            x - f / pdf
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.max(1e-300) || hi - lo <= 1e-15 * hi {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Per-trial false-alarm probability.
    pub alpha: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { alpha: 0.001 }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha > 0.0 && self.alpha < 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )))
        }
    }
}

/// `τ = F⁻¹(1 − α; n)`.
pub fn threshold(cfg: &DetectorConfig, n: usize) -> Result<f64> {
    chi2_inverse_cdf(1.0 - cfg.alpha, n)
}

/// Sum of squared information-normalized GPS residuals and their count.
pub fn test_statistic(g: &WindowGraph) -> Result<(f64, usize)> {
    let mut q = 0.0;
    let mut n = 0;
    for f in g.gps_factors() {
        let pose = g
            .pose(f.node)
            .ok_or(Error::NodeNotInWindow { time: f.node })?;
        let e = f.residual(pose)?;
        q += e * e * f.information();
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoGpsFactors);
    }
    Ok((q, n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Authentic,
    SpoofDetected,
}

impl Decision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Decision::Authentic => "authentic",
            Decision::SpoofDetected => "spoof-detected",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub time: usize,
    pub q: f64,
    pub tau: f64,
    pub n: usize,
    pub decision: Decision,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    /// Latched once spoofing is detected; cleared only by a successful authentication.
    pub spoofed: bool,
    pub history: Vec<Trial>,
    pub trials: usize,
}

impl DetectorState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a trial at `time`. The detection latches: once set, every later
    /// call reports [`Decision::SpoofDetected`] regardless of `q`.
    pub fn decide(&mut self, time: usize, q: f64, tau: f64, n: usize) -> Decision {
        if q > tau {
            self.spoofed = true;
        }
        let decision = if self.spoofed {
            Decision::SpoofDetected
        } else {
            Decision::Authentic
        };
        self.trials += 1;
        self.history.push(Trial {
            time,
            q,
            tau,
            n,
            decision,
        });
        decision
    }

    pub fn reset_latch(&mut self) {
        self.spoofed = false;
    }

    pub fn first_detection(&self) -> Option<usize> {
        self.history
            .iter()
            .find(|t| t.decision == Decision::SpoofDetected)
            .map(|t| t.time)
    }
}

/// Removes all GPS factors and re-optimizes on odometry and the anchor alone.
pub fn mitigate(g: &WindowGraph, params: &SolverParams) -> Result<(WindowGraph, SolveReport)> {
    let mut stripped = g.strip_gps();
    let report = stripped.optimize(params)?;
    Ok((stripped, report))
}
