//! Closed-form bias and variance of the filters.
//!
//! Everything here is evaluated by spectral calculus on `B*B = Sigma^{1/2}
//! A*A Sigma^{1/2}` and never runs a filter, so it can be checked against
//! simulated trajectories.

use nalgebra::{DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::filters::CONDITION_LIMIT;
use crate::model::{DenseOperator, EigenSequence, OperatorRep, ProblemSpec};
use crate::spectral::{q_unchecked, r_unchecked, QSequence};

/// Squared bias, variance and their sum at step `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasVarReport {
    pub n: u64,
    pub bias_sq: f64,
    pub var: f64,
    pub mse: f64,
}

impl BiasVarReport {
    pub fn new(n: u64, bias_sq: f64, var: f64) -> Self {
        Self { n, bias_sq, var, mse: bias_sq + var }
    }
}

fn diagonal(spec: &ProblemSpec) -> Result<&EigenSequence> {
    match &spec.op {
        OperatorRep::Diagonal(s) => Ok(s),
        OperatorRep::Dense(_) => Err(Error::domain("closed form needs a diagonal operator")),
    }
}

fn check_steps(n: u64) -> Result<()> {
    if n == 0 {
        Err(Error::domain("step count must be at least 1"))
    } else {
        Ok(())
    }
}

/// `||(alpha/n) Sigma^{1/2} q_n(B*B) Sigma^{-1/2} v0||_t^2`, the squared bias
/// of the averaged 3DVAR iterate after `n` steps.
///
/// Dense operators are routed to [`dense_bias_sq_closed`].
pub fn bias_sq_closed(spec: &ProblemSpec, n: u64) -> Result<f64> {
    check_steps(n)?;
    match &spec.op {
        OperatorRep::Diagonal(s) => {
            let scale = spec.alpha / n as f64;
            let v0 = spec.initial_error();
            Ok(s.sigma()
                .iter()
                .zip(s.bstar_b())
                .zip(&v0)
                .map(|((sigma, lambda), v)| {
                    let f = scale * q_unchecked(n, spec.alpha, lambda);
                    weight(*sigma, spec.t) * f * f * v * v
                })
                .sum())
        }
        OperatorRep::Dense(d) => dense_bias_sq_closed_with(spec, d, n),
    }
}

#[inline]
fn weight(sigma: f64, t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else {
        sigma.powf(t)
    }
}

/// [`bias_sq_closed`] at each step of `ns`.
pub fn bias_sq_trajectory(spec: &ProblemSpec, ns: &[u64]) -> Result<Vec<f64>> {
    ns.iter().map(|&n| bias_sq_closed(spec, n)).collect()
}

/// Expected squared t-norm of the averaged 3DVAR noise term,
/// `(gamma^2/n^2) sum_{j<=n} sum_i sigma_i^{t+2} a_i^2 q_j(sigma_i a_i^2)^2`.
pub fn var_closed(spec: &ProblemSpec, n: u64) -> Result<f64> {
    Ok(var_trajectory(spec, &[n])?[0])
}

/// [`var_closed`] at every step of the increasing list `ns`, in
/// `O(max(ns) * N)` total.
pub fn var_trajectory(spec: &ProblemSpec, ns: &[u64]) -> Result<Vec<f64>> {
    let s = diagonal(spec)?;
    if ns.first() == Some(&0) || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("steps must be positive and strictly increasing"));
    }
    let Some(&n_max) = ns.last() else {
        return Ok(Vec::new());
    };
    let g2 = spec.gamma * spec.gamma;
    let mut totals = vec![0.0; ns.len()];
    if g2 == 0.0 {
        return Ok(totals);
    }
    for ((sigma, a), lambda) in s.sigma().iter().zip(s.a()).zip(s.bstar_b()) {
        let w = weight(*sigma, spec.t) * sigma * sigma * a * a;
        let mut acc = 0.0;
        let mut slot = 0;
        for (j, q) in (1..=n_max).zip(QSequence::new(spec.alpha, lambda)) {
            acc += q * q;
            if j == ns[slot] {
                totals[slot] += w * acc;
                slot += 1;
            }
        }
    }
    for (total, &n) in totals.iter_mut().zip(ns) {
        let n = n as f64;
        *total *= g2 / (n * n);
    }
    Ok(totals)
}

/// Bias and variance of the plain (unaveraged) 3DVAR iterate `u_n`.
pub fn plain_threedvar_closed(spec: &ProblemSpec, n: u64) -> Result<BiasVarReport> {
    check_steps(n)?;
    let s = diagonal(spec)?;
    let g2 = spec.gamma * spec.gamma;
    let v0 = spec.initial_error();
    let (mut bias_sq, mut var) = (0.0, 0.0);
    for (((sigma, a), lambda), v) in s.sigma().iter().zip(s.a()).zip(s.bstar_b()).zip(&v0) {
        let w = weight(*sigma, spec.t);
        let b = r_unchecked(n, spec.alpha, lambda) * v;
        bias_sq += w * b * b;
        let k = sigma * a / (lambda + spec.alpha);
        // sum_{k<n} rho^{2k} with rho = alpha/(alpha+lambda)
        let log_rho2 = -2.0 * (lambda / spec.alpha).ln_1p();
        let geometric = if log_rho2 == 0.0 {
            n as f64
        } else {
            (n as f64 * log_rho2).exp_m1() / log_rho2.exp_m1()
        };
        var += w * g2 * k * k * geometric;
    }
    Ok(BiasVarReport::new(n, bias_sq, var))
}

/// Averaged 3DVAR bias, variance and MSE at step `n`.
pub fn averaged_threedvar_closed(spec: &ProblemSpec, n: u64) -> Result<BiasVarReport> {
    Ok(BiasVarReport::new(n, bias_sq_closed(spec, n)?, var_closed(spec, n)?))
}

/// Upper bound on the dimension accepted by [`dense_bias_sq_closed`].
pub const DENSE_DIM_LIMIT: usize = 64;

/// Dense counterpart of [`bias_sq_closed`] through an eigendecomposition of
/// `B*B`.
pub fn dense_bias_sq_closed(spec: &ProblemSpec, n: u64) -> Result<f64> {
    check_steps(n)?;
    match &spec.op {
        OperatorRep::Dense(d) => dense_bias_sq_closed_with(spec, d, n),
        OperatorRep::Diagonal(_) => Err(Error::domain("dense closed form needs a dense operator")),
    }
}

fn dense_bias_sq_closed_with(spec: &ProblemSpec, d: &DenseOperator, n: u64) -> Result<f64> {
    if d.dim() > DENSE_DIM_LIMIT {
        return Err(Error::domain(format!(
            "dense closed form limited to dimension {DENSE_DIM_LIMIT}, got {}",
            d.dim()
        )));
    }
    let vals = d.sigma_eigvals();
    let condition = vals.max() / vals.min();
    if !(condition <= CONDITION_LIMIT) {
        return Err(Error::IllConditioned { condition, limit: CONDITION_LIMIT });
    }
    let vecs = d.sigma_eigvecs();
    let v0 = DVector::from_vec(spec.initial_error());
    // Sigma^{-1/2} v0 in the eigenbasis of Sigma
    let coords = d.sigma_coords(&v0).zip_map(vals, |c, l| c / l.sqrt());
    let w = vecs * coords;

    let b = d.b();
    let eig = SymmetricEigen::new(b.tr_mul(b));
    let scale = spec.alpha / n as f64;
    let filtered = eig
        .eigenvectors
        .tr_mul(&w)
        .zip_map(&eig.eigenvalues, |c, l| c * scale * q_unchecked(n, spec.alpha, l.max(0.0)));
    let z = &eig.eigenvectors * filtered;
    let x = d.sigma_sqrt() * z;
    spec.op.weighted_norm_sq(x.as_slice(), spec.t)
}

/// Scalar Kalman filter started from `m0` with prior variance
/// `C0 = gamma^2 sigma / alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarKalman {
    pub a: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub m0: f64,
    pub u_truth: f64,
}

impl ScalarKalman {
    /// Reads a one-dimensional diagonal spec.
    pub fn from_spec(spec: &ProblemSpec) -> Result<Self> {
        let s = diagonal(spec)?;
        if s.len() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: s.len() });
        }
        Self {
            a: s.a()[0],
            sigma: s.sigma()[0],
            alpha: spec.alpha,
            gamma: spec.gamma,
            m0: spec.u0[0],
            u_truth: spec.u_truth[0],
        }
        .validated()
    }

    /// Parameterizes the prior by its variance `c0` directly.
    pub fn with_prior_variance(a: f64, c0: f64, gamma: f64, m0: f64, u_truth: f64) -> Result<Self> {
        Self { a, sigma: c0, alpha: gamma * gamma, gamma, m0, u_truth }.validated()
    }

    fn validated(self) -> Result<Self> {
        let ok = self.a > 0.0 && self.sigma > 0.0 && self.alpha > 0.0 && self.gamma > 0.0;
        if ok && [self.a, self.sigma, self.alpha, self.gamma, self.m0, self.u_truth].iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::domain("scalar Kalman needs positive finite a, sigma, alpha, gamma"))
        }
    }

    /// `(1 + a^2 sigma k / alpha)^{-1}`, the bias contraction after `k` steps.
    fn bias_factor(&self, k: u64) -> f64 {
        1.0 / (1.0 + self.a * self.a * self.sigma * k as f64 / self.alpha)
    }

    /// `(a + alpha/(a sigma k))^{-1}`, the weight of the averaged noise.
    fn noise_weight(&self, k: u64) -> f64 {
        1.0 / (self.a + self.alpha / (self.a * self.sigma * k as f64))
    }
}

/// Which expression to use for the variance of the averaged Kalman mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AveragedVariance {
    /// Variance of the running mean of the filter's own means: `eta_j`
    /// enters `m_k` with weight `c_k / k`.
    #[default]
    Exact,
    /// `(gamma^2/n^2) sum_j (sum_{k=j..n} c_k)^2`, which treats the mean
    /// noise `etabar_k` as the partial sum `eta_1 + ... + eta_k`. It bounds
    /// the plain variance from above for every `n` but does not describe
    /// the filter.
    PartialSum,
}

impl AveragedVariance {
    fn weight(self, params: &ScalarKalman, k: u64) -> f64 {
        match self {
            AveragedVariance::Exact => params.noise_weight(k) / k as f64,
            AveragedVariance::PartialSum => params.noise_weight(k),
        }
    }
}

/// Bias and variance of the Kalman mean `m_n`, or of its running average
/// when `averaged` is set.
pub fn kalman_closed(params: &ScalarKalman, n: u64, averaged: bool) -> Result<BiasVarReport> {
    kalman_closed_with(params, n, averaged, AveragedVariance::Exact)
}

/// [`kalman_closed`] with a choice of averaged-variance expression.
pub fn kalman_closed_with(params: &ScalarKalman, n: u64, averaged: bool, form: AveragedVariance) -> Result<BiasVarReport> {
    check_steps(n)?;
    let v0 = params.m0 - params.u_truth;
    let g2 = params.gamma * params.gamma;
    let nf = n as f64;
    if !averaged {
        let b = params.bias_factor(n) * v0;
        let c = params.noise_weight(n);
        return Ok(BiasVarReport::new(n, b * b, c * c * g2 / nf));
    }
    let mean_factor = (1..=n).map(|k| params.bias_factor(k)).sum::<f64>() / nf;
    let b = mean_factor * v0;
    // sum_j (sum_{k=j..n} w_k)^2 via running suffix sums
    let mut suffix = 0.0;
    let mut acc = 0.0;
    for k in (1..=n).rev() {
        suffix += form.weight(params, k);
        acc += suffix * suffix;
    }
    Ok(BiasVarReport::new(n, b * b, g2 * acc / (nf * nf)))
}

/// Plain and averaged Kalman reports for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanPair {
    pub plain: BiasVarReport,
    pub averaged: BiasVarReport,
}

/// [`kalman_closed_with`] for every `n` in `1..=n_max` in `O(n_max)`.
pub fn kalman_closed_trajectory(params: &ScalarKalman, n_max: u64, form: AveragedVariance) -> Vec<KalmanPair> {
    let v0 = params.m0 - params.u_truth;
    let g2 = params.gamma * params.gamma;
    let mut out = Vec::with_capacity(n_max as usize);
    let mut bias_sum = 0.0;
    // prefix sums P_k of the weights and running sums of P_0..P_{n-1}
    let (mut p, mut sum_p, mut sum_p2) = (0.0, 0.0, 0.0);
    for n in 1..=n_max {
        let nf = n as f64;
        let factor = params.bias_factor(n);
        let c = params.noise_weight(n);
        sum_p += p;
        sum_p2 += p * p;
        p += form.weight(params, n);
        bias_sum += factor;

        let b_plain = factor * v0;
        let plain = BiasVarReport::new(n, b_plain * b_plain, c * c * g2 / nf);
        let b_avg = bias_sum / nf * v0;
        // sum_{j=1..n} (P_n - P_{j-1})^2
        let spread = (nf * p * p - 2.0 * p * sum_p + sum_p2).max(0.0);
        let averaged = BiasVarReport::new(n, b_avg * b_avg, g2 * spread / (nf * nf));
        out.push(KalmanPair { plain, averaged });
    }
    out
}

/// Spectral cutoff estimate `g_alpha(A*A) A* ybar` with
/// `g_alpha(lambda) = 1/lambda` on `[alpha, inf)` and zero below.
pub fn batch_cutoff_estimate(spec: &ProblemSpec, ybar: &[f64], alpha_cut: f64) -> Result<Vec<f64>> {
    let s = diagonal(spec)?;
    if ybar.len() != s.len() {
        return Err(Error::DimensionMismatch { expected: s.len(), got: ybar.len() });
    }
    Ok(s.a()
        .iter()
        .zip(ybar)
        .map(|(a, y)| if a * a >= alpha_cut { y / a } else { 0.0 })
        .collect())
}

/// Exact risk of the cutoff estimator from the mean of `n` observations.
pub fn batch_risk_closed(spec: &ProblemSpec, n: u64, alpha_cut: f64) -> Result<BiasVarReport> {
    check_steps(n)?;
    let s = diagonal(spec)?;
    let noise = spec.gamma * spec.gamma / n as f64;
    let (mut bias_sq, mut var) = (0.0, 0.0);
    for ((sigma, a), u) in s.sigma().iter().zip(s.a()).zip(&spec.u_truth) {
        let w = weight(*sigma, spec.t);
        if a * a >= alpha_cut {
            var += w / (a * a);
        } else {
            bias_sq += w * u * u;
        }
    }
    Ok(BiasVarReport::new(n, bias_sq, noise * var))
}

/// Risk of the cutoff estimator at its best cutoff level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalCutoff {
    pub alpha_cut: f64,
    pub modes_kept: usize,
    pub report: BiasVarReport,
}

/// Precomputed sums for minimizing the cutoff risk over every level.
///
/// The risk only changes when the cutoff crosses some `a_i^2`, so the
/// candidates are those values plus one level above all of them.
#[derive(Debug, Clone)]
pub struct BatchRiskProfile {
    gamma_sq: f64,
    levels: Vec<f64>,
    // kept[k]: sum of sigma^t / a^2 over the k largest modes
    kept: Vec<f64>,
    // dropped[k]: sum of sigma^t u^2 over the remaining modes
    dropped: Vec<f64>,
}

impl BatchRiskProfile {
    pub fn new(spec: &ProblemSpec) -> Result<Self> {
        let s = diagonal(spec)?;
        let mut modes: Vec<(f64, f64, f64)> = s
            .sigma()
            .iter()
            .zip(s.a())
            .zip(&spec.u_truth)
            .map(|((sigma, a), u)| (a * a, weight(*sigma, spec.t), *u))
            .collect();
        modes.sort_by(|x, y| y.0.total_cmp(&x.0));
        let m = modes.len();
        let mut kept = vec![0.0; m + 1];
        let mut dropped = vec![0.0; m + 1];
        for (k, (a2, w, _)) in modes.iter().enumerate() {
            kept[k + 1] = kept[k] + w / a2;
        }
        for (k, (_, w, u)) in modes.iter().enumerate().rev() {
            dropped[k] = dropped[k + 1] + w * u * u;
        }
        let levels = modes.iter().map(|m| m.0).collect();
        Ok(Self { gamma_sq: spec.gamma * spec.gamma, levels, kept, dropped })
    }

    /// Best cutoff for `n` observations; ties go to the larger cutoff.
    pub fn optimal(&self, n: u64) -> Result<OptimalCutoff> {
        check_steps(n)?;
        let noise = self.gamma_sq / n as f64;
        let mut best: Option<(usize, f64)> = None;
        for k in 0..=self.levels.len() {
            // keeping the k largest modes; ties in a^2 are kept together
            if k > 0 && k < self.levels.len() && self.levels[k] == self.levels[k - 1] {
                continue;
            }
            let risk = self.dropped[k] + noise * self.kept[k];
            if best.is_none_or(|(_, b)| risk < b) {
                best = Some((k, risk));
            }
        }
        let (k, _) = best.expect("profile has at least one candidate");
        let alpha_cut = if k == 0 {
            2.0 * self.levels[0]
        } else {
            self.levels[k - 1]
        };
        let report = BiasVarReport::new(n, self.dropped[k], noise * self.kept[k]);
        Ok(OptimalCutoff { alpha_cut, modes_kept: k, report })
    }
}
