//! Rational spectral filter functions of the Tikhonov family.
//!
//! For a spectral value `lambda >= 0` of `B*B`, the `n`-fold Tikhonov
//! contraction is
//!
//! ```text
//! r(n, alpha; lambda) = (alpha / (alpha + lambda))^n
//! q(n, alpha; lambda) = (1 - r(n, alpha; lambda)) / lambda
//! ```
//!
//! with `q(n, alpha; 0) = n / alpha` by continuity. The two are tied by
//! `sum_{k=1..m} r(k, alpha; lambda) = alpha * q(m, alpha; lambda)`, which is
//! what turns the averaged 3DVAR error into a single spectral expression.

use crate::error::{Error, Result};

/// Iteration count and regularization strength of a spectral filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegFilterParams {
    n: u64,
    alpha: f64,
}

impl RegFilterParams {
    pub fn new(n: u64, alpha: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("filter iteration count must be at least 1"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::domain(format!("alpha must be positive and finite, got {alpha}")));
        }
        Ok(Self { n, alpha })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `(alpha / (alpha + lambda))^n`.
    pub fn r(&self, lambda: f64) -> Result<f64> {
        check_lambda(lambda)?;
        Ok(r_unchecked(self.n, self.alpha, lambda))
    }

    /// `(1 - r) / lambda`, equal to `n / alpha` at `lambda = 0`.
    pub fn q(&self, lambda: f64) -> Result<f64> {
        check_lambda(lambda)?;
        Ok(q_unchecked(self.n, self.alpha, lambda))
    }

    /// Upper bound on `lambda^p * r(n, alpha; lambda)` over `[0, big_lambda]`.
    pub fn r_bound(&self, p: f64, big_lambda: f64) -> Result<f64> {
        check_bound_args(p, big_lambda)?;
        let n = self.n as f64;
        if p <= n {
            // 0^0 = 1 covers the p = 0 case
            Ok((self.alpha * p / n).powf(p))
        } else {
            Ok(self.alpha.powf(n) * big_lambda.powf(p - n))
        }
    }

    /// Upper bound on `lambda^p * q(n, alpha; lambda)` over `[0, big_lambda]`.
    pub fn q_bound(&self, p: f64, big_lambda: f64) -> Result<f64> {
        check_bound_args(p, big_lambda)?;
        if p <= 1.0 {
            Ok((self.n as f64 / self.alpha).powf(1.0 - p))
        } else {
            Ok(big_lambda.powf(p - 1.0))
        }
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("spectral value must be nonnegative and finite, got {lambda}")))
    }
}

fn check_bound_args(p: f64, big_lambda: f64) -> Result<()> {
    if !(p >= 0.0 && p.is_finite()) {
        return Err(Error::domain(format!("bound exponent must be nonnegative, got {p}")));
    }
    if !(big_lambda > 0.0 && big_lambda.is_finite()) {
        return Err(Error::domain(format!("spectral bound must be positive, got {big_lambda}")));
    }
    Ok(())
}

/// `-n * ln(1 + lambda/alpha)`, the log of `r`.
#[inline]
fn log_r(n: u64, alpha: f64, lambda: f64) -> f64 {
    -(n as f64) * (lambda / alpha).ln_1p()
}

#[inline]
pub(crate) fn r_unchecked(n: u64, alpha: f64, lambda: f64) -> f64 {
    log_r(n, alpha, lambda).exp()
}

#[inline]
pub(crate) fn q_unchecked(n: u64, alpha: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return n as f64 / alpha;
    }
    // 1 - r = -expm1(log r) keeps all digits when n*lambda/alpha is tiny
    -log_r(n, alpha, lambda).exp_m1() / lambda
}

/// Free-function form of [`RegFilterParams::r`].
pub fn eval_r(params: RegFilterParams, lambda: f64) -> Result<f64> {
    params.r(lambda)
}

/// Free-function form of [`RegFilterParams::q`].
pub fn eval_q(params: RegFilterParams, lambda: f64) -> Result<f64> {
    params.q(lambda)
}

/// Streams `q(j, alpha; lambda)` for `j = 1, 2, ...` using the partial-sum
/// form `q(j) = q(j-1) + r(j) / alpha`, which only adds positive terms.
#[derive(Debug, Clone)]
pub struct QSequence {
    ratio: f64,
    r: f64,
    q: f64,
    inv_alpha: f64,
}

impl QSequence {
    pub fn new(alpha: f64, lambda: f64) -> Self {
        Self {
            ratio: alpha / (alpha + lambda),
            r: 1.0,
            q: 0.0,
            inv_alpha: 1.0 / alpha,
        }
    }
}

impl Iterator for QSequence {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        self.r *= self.ratio;
        self.q += self.r * self.inv_alpha;
        Some(self.q)
    }
}
