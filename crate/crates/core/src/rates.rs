//! Predicted convergence exponents, log-log slope fits and bootstrap
//! confidence intervals for Monte Carlo curves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Power-law description of a simultaneously diagonalized problem:
/// `sigma_i ~ i^{-1-2 epsilon}`, `a_i ~ i^{-p}`, initial error with Sobolev
/// smoothness `beta`, error measured in the `t`-norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagonalRateParams {
    pub epsilon: f64,
    pub p: f64,
    pub beta: f64,
    pub t: f64,
}

/// Relative tolerance for detecting the logarithmic boundary `1 + 2p = t(1 + 2 epsilon)`.
const BOUNDARY_TOL: f64 = 1e-12;

impl DiagonalRateParams {
    pub fn new(epsilon: f64, p: f64, beta: f64, t: f64) -> Result<Self> {
        let finite = [epsilon, p, beta, t].iter().all(|v| v.is_finite());
        if !finite || !(epsilon > 0.0) || !(p > 0.0) || !(beta >= 0.0) || !(t >= 0.0) {
            return Err(Error::domain(format!(
                "need epsilon > 0, p > 0, beta >= 0, t >= 0 (got {epsilon}, {p}, {beta}, {t})"
            )));
        }
        Ok(Self { epsilon, p, beta, t })
    }

    /// `1 + 2 epsilon`, the decay exponent of `sigma_i`.
    fn sigma_decay(&self) -> f64 {
        1.0 + 2.0 * self.epsilon
    }

    /// `1 + 2 epsilon + 2p`, the decay exponent of `sigma_i a_i^2`.
    fn bstar_b_decay(&self) -> f64 {
        self.sigma_decay() + 2.0 * self.p
    }

    /// `(1 + 2 epsilon) / (1 + 2 epsilon + 2p)`: `sigma_i ~ (sigma_i a_i^2)^omega`.
    pub fn omega(&self) -> f64 {
        self.sigma_decay() / self.bstar_b_decay()
    }

    /// Largest admissible bias index, `(t(1+2e) + 2 beta) / (2(1+2e+2p))`.
    pub fn tau_bar_b(&self) -> f64 {
        (self.t * self.sigma_decay() + 2.0 * self.beta) / (2.0 * self.bstar_b_decay())
    }

    /// Supremum of admissible variance indices, `(t(1+2e) + 2e) / (1+2e+2p)`.
    pub fn tau_bar_v(&self) -> f64 {
        (self.t * self.sigma_decay() + 2.0 * self.epsilon) / self.bstar_b_decay()
    }

    /// Decay exponent of the squared bias, `2 min(tau_bar_b, 1)`.
    pub fn effective_bias_rate(&self) -> f64 {
        2.0 * self.tau_bar_b().min(1.0)
    }

    /// Decay exponent of the variance, `min(tau_bar_v, 1)`.
    pub fn effective_var_rate(&self) -> f64 {
        self.tau_bar_v().min(1.0)
    }

    /// Minimax exponent of spectral-cutoff regression on `n` averaged
    /// samples and whether the `log n` boundary case applies.
    pub fn batch_rate_exponent(&self) -> (f64, bool) {
        let lhs = 1.0 + 2.0 * self.p;
        let rhs = self.t * self.sigma_decay();
        let boundary = (lhs - rhs).abs() <= BOUNDARY_TOL * lhs.max(rhs);
        let exponent = (rhs + 2.0 * self.beta) / (lhs + 2.0 * self.beta);
        (exponent, boundary)
    }

    fn check_theta(theta: f64) -> Result<()> {
        if theta > 0.0 && theta <= 1.0 {
            Ok(())
        } else {
            Err(Error::domain(format!("theta must lie in (0, 1], got {theta}")))
        }
    }

    fn check_interior_regime(&self) -> Result<()> {
        let (b, v) = (self.tau_bar_b(), self.tau_bar_v());
        if b <= 1.0 && v <= 1.0 {
            Ok(())
        } else {
            Err(Error::RegimeNotCovered(format!(
                "minimax tuning needs tau_bar_b, tau_bar_v <= 1 (got {b}, {v})"
            )))
        }
    }

    /// `theta [t(1+2e) + 2e]`, the penalty paid for backing off `tau_bar_v`.
    fn theta_term(&self, theta: f64) -> f64 {
        theta * (self.t * self.sigma_decay() + 2.0 * self.epsilon)
    }

    /// Regularization that balances the averaged 3DVAR bias and variance
    /// bounds after `n` steps with `tau_b = tau_bar_b`, `tau_v = (1-theta) tau_bar_v`.
    pub fn minimax_alpha(&self, theta: f64, n: u64) -> Result<f64> {
        Self::check_theta(theta)?;
        self.check_interior_regime()?;
        if n == 0 {
            return Err(Error::domain("n must be at least 1"));
        }
        let extra = self.theta_term(theta);
        let denom = 1.0 + 2.0 * self.p + 2.0 * self.beta + extra;
        let theta_exp = -(1.0 + 2.0 * self.p + 2.0 * self.epsilon) / denom;
        let n_exp = (2.0 * self.beta - 2.0 * self.epsilon + extra) / denom;
        Ok(theta.powf(theta_exp) * (n as f64).powf(n_exp))
    }

    /// MSE decay exponent of averaged 3DVAR under minimax tuning of alpha.
    ///
    /// With both indices at most one the exponent is
    /// `(t(1+2e) + 2 beta) / (1 + 2p + 2 beta + theta [t(1+2e) + 2e])`; with
    /// both above one it is 1. Mixed regimes are not covered.
    pub fn minimax_threedvar_exponent(&self, theta: f64) -> Result<f64> {
        Self::check_theta(theta)?;
        let (b, v) = (self.tau_bar_b(), self.tau_bar_v());
        if b > 1.0 && v > 1.0 {
            return Ok(1.0);
        }
        self.check_interior_regime()?;
        let num = self.t * self.sigma_decay() + 2.0 * self.beta;
        Ok(num / (1.0 + 2.0 * self.p + 2.0 * self.beta + self.theta_term(theta)))
    }

    /// Reference minimax exponent `2 beta / (1 + 2 beta + 2p)` of the tuned
    /// Kalman filter in the plain norm.
    pub fn kalman_minimax_reference(&self) -> f64 {
        2.0 * self.beta / (1.0 + 2.0 * self.beta + 2.0 * self.p)
    }

    /// Reference exponent `2 beta / (1 + 2 beta + 2p + 2 epsilon)` of tuned
    /// unaveraged 3DVAR (up to a `log n` factor).
    pub fn threedvar_minimax_reference(&self) -> f64 {
        2.0 * self.beta / (1.0 + 2.0 * self.beta + 2.0 * self.p + 2.0 * self.epsilon)
    }

    /// Hilbert-scale indices `(nu, s)` with `nu(1+2e) = 2p`, `s(1+2e) = 2 beta`.
    pub fn general(&self) -> GeneralRateParams {
        GeneralRateParams {
            nu: 2.0 * self.p / self.sigma_decay(),
            s: 2.0 * self.beta / self.sigma_decay(),
            t: self.t,
        }
    }
}

/// Hilbert-scale description of a general (not necessarily diagonal) problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralRateParams {
    pub nu: f64,
    pub s: f64,
    pub t: f64,
}

impl GeneralRateParams {
    /// `(s + t) / (1 + nu)`, decay exponent of the squared averaged bias.
    pub fn bias_exponent(&self) -> f64 {
        (self.s + self.t) / (1.0 + self.nu)
    }
}

/// Least-squares fit of `log value` against `log n` over a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateReport {
    pub predicted_exponent: Option<f64>,
    pub fitted_slope: f64,
    pub intercept: f64,
    pub fit_window: (f64, f64),
    pub slope_stderr: f64,
    pub points: usize,
}

impl RateReport {
    pub fn with_prediction(mut self, exponent: f64) -> Self {
        self.predicted_exponent = Some(exponent);
        self
    }
}

pub const MIN_FIT_POINTS: usize = 5;

/// Ordinary least squares on `(ln n, ln value)` for points inside `window`.
pub fn fit_slope(points: &[(f64, f64)], window: (f64, f64)) -> Result<RateReport> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi >= 10.0 * lo) {
        return Err(Error::domain(format!("fit window must span at least a decade, got [{lo}, {hi}]")));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(n, v) in points.iter().filter(|(n, _)| *n >= lo && *n <= hi) {
        if !(v > 0.0) {
            return Err(Error::domain(format!("log-log fit needs positive values, got {v} at n = {n}")));
        }
        xs.push(n.ln());
        ys.push(v.ln());
    }
    let m = xs.len();
    if m < MIN_FIT_POINTS {
        return Err(Error::InsufficientPoints { needed: MIN_FIT_POINTS, found: m });
    }
    let mf = m as f64;
    let x_mean = xs.iter().sum::<f64>() / mf;
    let y_mean = ys.iter().sum::<f64>() / mf;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let slope_stderr = (sse / (mf - 2.0) / sxx).sqrt();
    Ok(RateReport {
        predicted_exponent: None,
        fitted_slope: slope,
        intercept,
        fit_window: window,
        slope_stderr,
        points: m,
    })
}

/// The last decade `[n_max / 10, n_max]` of a recorded curve.
pub fn last_decade(points: &[(f64, f64)]) -> (f64, f64) {
    let hi = points.iter().map(|p| p.0).fold(0.0, f64::max);
    (hi / 10.0, hi)
}

/// Percentile bootstrap interval of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapCI {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub resamples: usize,
}

/// Sorted bootstrap replicates of the sample mean.
#[derive(Debug, Clone)]
pub struct BootstrapDistribution {
    point: f64,
    replicates: Vec<f64>,
}

impl BootstrapDistribution {
    /// Draws `resamples` with-replacement resamples from a seeded stream.
    pub fn of_mean(samples: &[f64], resamples: usize, seed: u64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::domain("bootstrap needs at least two samples"));
        }
        if resamples == 0 {
            return Err(Error::domain("bootstrap needs at least one resample"));
        }
        let m = samples.len();
        let point = samples.iter().sum::<f64>() / m as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut replicates: Vec<f64> = (0..resamples)
            .map(|_| (0..m).map(|_| samples[rng.random_range(0..m)]).sum::<f64>() / m as f64)
            .collect();
        replicates.sort_by(f64::total_cmp);
        Ok(Self { point, replicates })
    }

    pub fn point(&self) -> f64 {
        self.point
    }

    /// Empirical quantile with linear interpolation between order statistics.
    pub fn quantile(&self, prob: f64) -> f64 {
        let r = &self.replicates;
        let pos = prob.clamp(0.0, 1.0) * (r.len() - 1) as f64;
        let below = pos.floor() as usize;
        let above = pos.ceil() as usize;
        r[below] + (pos - below as f64) * (r[above] - r[below])
    }

    /// Two-sided interval at `level`, widened if needed to contain the
    /// sample mean.
    pub fn ci(&self, level: f64) -> Result<BootstrapCI> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::domain(format!("confidence level must lie in (0, 1), got {level}")));
        }
        let lo = self.quantile((1.0 - level) / 2.0).min(self.point);
        let hi = self.quantile((1.0 + level) / 2.0).max(self.point);
        Ok(BootstrapCI { point: self.point, lo, hi, level, resamples: self.replicates.len() })
    }
}

/// Percentile bootstrap confidence interval of the mean of `samples`.
pub fn bootstrap_ci(samples: &[f64], resamples: usize, level: f64, seed: u64) -> Result<BootstrapCI> {
    BootstrapDistribution::of_mean(samples, resamples, seed)?.ci(level)
}
