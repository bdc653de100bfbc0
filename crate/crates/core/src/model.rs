//! Inverse-problem instances `y = A u + eta`.
//!
//! Operators come in two representations: a diagonal spectrum where `Sigma`
//! and `A*A` share an eigenbasis, and a small dense pair `(A, Sigma)`.
//! Vectors are plain coefficient slices in either case.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest are clamped before taking
/// fractional powers of a dense `Sigma`.
pub const EIGEN_FLOOR_RATIO: f64 = 1e-14;

/// Largest tolerated asymmetry `max |S_ij - S_ji|` of a dense `Sigma`.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Paired eigenvalues of `Sigma` (`sigma`) and `A` (`a`) on a shared basis.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSequence {
    sigma: Vec<f64>,
    a: Vec<f64>,
}

impl EigenSequence {
    pub fn new(sigma: Vec<f64>, a: Vec<f64>) -> Result<Self> {
        if sigma.is_empty() {
            return Err(Error::domain("spectrum must contain at least one mode"));
        }
        if sigma.len() != a.len() {
            return Err(Error::DimensionMismatch { expected: sigma.len(), got: a.len() });
        }
        if let Some(bad) = sigma.iter().chain(&a).find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::domain(format!("eigenvalues must be positive and finite, got {bad}")));
        }
        Ok(Self { sigma, a })
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    /// Eigenvalues `sigma_i * a_i^2` of `B*B` with `B = A Sigma^{1/2}`.
    pub fn bstar_b(&self) -> impl Iterator<Item = f64> + '_ {
        self.sigma.iter().zip(&self.a).map(|(s, a)| s * a * a)
    }
}

/// Cosine-mode spectrum of `A = (I - d^2/dx^2)^{-1}` on a periodic interval
/// of length `2 pi`, with `Sigma = A^2`: `a_k = 1/(1+k^2)`, `sigma_k = a_k^2`.
///
/// Modes `k = 1..=n_modes`; asymptotically `a_k ~ k^-2`, `sigma_k ~ k^-4`.
pub fn build_diffusion_spectrum(n_modes: usize) -> Result<EigenSequence> {
    if n_modes == 0 {
        return Err(Error::domain("mode count must be at least 1"));
    }
    let a: Vec<f64> = (1..=n_modes).map(|k| 1.0 / (1.0 + (k * k) as f64)).collect();
    let sigma = a.iter().map(|a| a * a).collect();
    EigenSequence::new(sigma, a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevICParams {
    pub beta: f64,
    pub delta: f64,
    pub n_modes: usize,
}

/// Initial coefficients `u0_k = k^(-1/2 - beta - delta)`, `k = 1..=N`.
pub fn build_sobolev_ic(params: SobolevICParams) -> Result<Vec<f64>> {
    let SobolevICParams { beta, delta, n_modes } = params;
    if !(beta >= 0.0) || !(delta > 0.0) || n_modes == 0 {
        return Err(Error::domain(format!(
            "need beta >= 0, delta > 0, N >= 1 (got {beta}, {delta}, {n_modes})"
        )));
    }
    let exponent = -0.5 - beta - delta;
    Ok((1..=n_modes).map(|k| (k as f64).powf(exponent)).collect())
}

/// Dense forward operator `A` and symmetric positive-definite `Sigma`, with
/// the factorizations every filter and oracle needs computed once.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    a: DMatrix<f64>,
    sigma: DMatrix<f64>,
    sigma_eigvals: DVector<f64>,
    sigma_eigvecs: DMatrix<f64>,
    sigma_sqrt: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(a: DMatrix<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = sigma.nrows();
        if d == 0 || !sigma.is_square() {
            return Err(Error::domain("Sigma must be a non-empty square matrix"));
        }
        if a.nrows() != d || a.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: a.ncols() });
        }
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > SYMMETRY_TOL {
            return Err(Error::domain(format!("Sigma is not symmetric (asymmetry {asym:.3e})")));
        }
        let sym = (&sigma + sigma.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::domain("Sigma must be positive definite"));
        }
        let floor = eig.eigenvalues.max() * EIGEN_FLOOR_RATIO;
        let sigma_eigvals = eig.eigenvalues.map(|l| l.max(floor));
        let sigma_eigvecs = eig.eigenvectors;
        let sigma_sqrt = spectral_power(&sigma_eigvecs, &sigma_eigvals, 0.5);
        let b = &a * &sigma_sqrt;
        Ok(Self { a, sigma, sigma_eigvals, sigma_eigvecs, sigma_sqrt, b })
    }

    /// Builds the dense twin of a diagonal spectrum.
    pub fn from_spectrum(spectrum: &EigenSequence) -> Result<Self> {
        let a = DMatrix::from_diagonal(&DVector::from_column_slice(spectrum.a()));
        let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(spectrum.sigma()));
        Self::new(a, sigma)
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_sqrt(&self) -> &DMatrix<f64> {
        &self.sigma_sqrt
    }

    /// `B = A Sigma^{1/2}`.
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// `Sigma^power` from the clamped eigendecomposition.
    pub fn sigma_power(&self, power: f64) -> DMatrix<f64> {
        spectral_power(&self.sigma_eigvecs, &self.sigma_eigvals, power)
    }

    /// Coordinates of `x` in the eigenbasis of `Sigma`.
    pub(crate) fn sigma_coords(&self, x: &DVector<f64>) -> DVector<f64> {
        self.sigma_eigvecs.tr_mul(x)
    }

    pub(crate) fn sigma_eigvals(&self) -> &DVector<f64> {
        &self.sigma_eigvals
    }

    pub(crate) fn sigma_eigvecs(&self) -> &DMatrix<f64> {
        &self.sigma_eigvecs
    }
}

pub(crate) fn spectral_power(vecs: &DMatrix<f64>, vals: &DVector<f64>, power: f64) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(vecs.nrows(), vecs.ncols(), |i, j| vecs[(i, j)] * vals[j].powf(power));
    scaled * vecs.transpose()
}

/// The operator pair a filter runs against.
#[derive(Debug, Clone)]
pub enum OperatorRep {
    Diagonal(EigenSequence),
    Dense(DenseOperator),
}

impl OperatorRep {
    pub fn dim(&self) -> usize {
        match self {
            OperatorRep::Diagonal(s) => s.len(),
            OperatorRep::Dense(d) => d.dim(),
        }
    }

    /// `A x`.
    pub fn apply_a(&self, x: &[f64]) -> Vec<f64> {
        match self {
            OperatorRep::Diagonal(s) => s.a().iter().zip(x).map(|(a, x)| a * x).collect(),
            OperatorRep::Dense(d) => {
                (d.a() * DVector::from_column_slice(x)).as_slice().to_vec()
            }
        }
    }

    /// Squared weighted norm `||Sigma^{t/2} x||^2`.
    pub fn weighted_norm_sq(&self, x: &[f64], t: f64) -> Result<f64> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::domain(format!("norm index t must be nonnegative, got {t}")));
        }
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(self.weighted_norm_sq_unchecked(x, t))
    }

    pub(crate) fn weighted_norm_sq_unchecked(&self, x: &[f64], t: f64) -> f64 {
        match self {
            OperatorRep::Diagonal(s) => {
                if t == 0.0 {
                    x.iter().map(|v| v * v).sum()
                } else {
                    s.sigma().iter().zip(x).map(|(s, v)| s.powf(t) * v * v).sum()
                }
            }
            OperatorRep::Dense(d) => {
                let coords = d.sigma_coords(&DVector::from_column_slice(x));
                d.sigma_eigvals()
                    .iter()
                    .zip(coords.iter())
                    .map(|(l, c)| l.powf(t) * c * c)
                    .sum()
            }
        }
    }
}

/// Free-function form of [`OperatorRep::weighted_norm_sq`].
pub fn weighted_norm_sq(op: &OperatorRep, x: &[f64], t: f64) -> Result<f64> {
    op.weighted_norm_sq(x, t)
}

/// One instance of the inverse problem together with the filter settings.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub op: OperatorRep,
    pub u_truth: Vec<f64>,
    pub u0: Vec<f64>,
    pub gamma: f64,
    pub alpha: f64,
    pub t: f64,
}

impl ProblemSpec {
    pub fn new(
        op: OperatorRep,
        u_truth: Vec<f64>,
        u0: Vec<f64>,
        gamma: f64,
        alpha: f64,
        t: f64,
    ) -> Result<Self> {
        let spec = Self { op, u_truth, u0, gamma, alpha, t };
        spec.validate()?;
        Ok(spec)
    }

    /// Scalar problem `y = a u + eta` with prior weight `sigma`.
    pub fn scalar(a: f64, sigma: f64, u_truth: f64, u0: f64, gamma: f64, alpha: f64) -> Result<Self> {
        let op = OperatorRep::Diagonal(EigenSequence::new(vec![sigma], vec![a])?);
        Self::new(op, vec![u_truth], vec![u0], gamma, alpha, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.op.dim();
        for v in [&self.u_truth, &self.u0] {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: v.len() });
            }
        }
        // gamma = 0 is the noiseless limit used by the bias experiments
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::domain(format!("gamma must be nonnegative, got {}", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::domain(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.t >= 0.0 && self.t.is_finite()) {
            return Err(Error::domain(format!("t must be nonnegative, got {}", self.t)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// `u0 - u_truth`.
    pub fn initial_error(&self) -> Vec<f64> {
        self.u0.iter().zip(&self.u_truth).map(|(a, b)| a - b).collect()
    }

    pub fn with_t(&self, t: f64) -> Self {
        Self { t, ..self.clone() }
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { gamma, ..self.clone() }
    }
}

/// Keyed source of observation noise: `(seed, trial_id)` fixes the whole
/// sequence `eta_1, eta_2, ...`, and each step reads its own disjoint block
/// of the ChaCha keystream so steps can be drawn in any order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    pub seed: u64,
    pub trial_id: u64,
    pub dimension: usize,
}

/// 32-bit words reserved per step; a step may draw up to ~2^39 normals.
const WORDS_PER_STEP: u128 = 1 << 40;

impl NoiseStream {
    pub fn new(seed: u64, trial_id: u64, dimension: usize) -> Self {
        Self { seed, trial_id, dimension }
    }

    /// Fills `out` with i.i.d. `N(0, gamma^2)` draws for `step` (1-based).
    pub fn fill_noise(&self, step: u64, gamma: f64, out: &mut [f64]) -> Result<()> {
        if step == 0 {
            return Err(Error::domain("observation steps are numbered from 1"));
        }
        if out.len() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, got: out.len() });
        }
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(self.trial_id);
        rng.set_word_pos(u128::from(step - 1) * WORDS_PER_STEP);
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = gamma * z;
        }
        Ok(())
    }
}

/// `y_step = A u_truth + eta_step`.
pub fn draw_observation(spec: &ProblemSpec, stream: &NoiseStream, step: u64) -> Result<Vec<f64>> {
    if stream.dimension != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: stream.dimension });
    }
    let mut y = vec![0.0; spec.dim()];
    stream.fill_noise(step, spec.gamma, &mut y)?;
    for (y, signal) in y.iter_mut().zip(spec.op.apply_a(&spec.u_truth)) {
        *y += signal;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn diffusion_spectrum_values() {
        let s = build_diffusion_spectrum(1).unwrap();
        assert_eq!(s.a(), &[0.5]);
        assert_eq!(s.sigma(), &[0.25]);
        let s = build_diffusion_spectrum(2).unwrap();
        assert_relative_eq!(s.a()[1], 0.2);
        assert_relative_eq!(s.sigma()[1], 0.04);
        let s = build_diffusion_spectrum(4096).unwrap();
        for (k, (a, sigma)) in s.a().iter().zip(s.sigma()).enumerate() {
            assert_eq!(*sigma, a * a);
            let k = (k + 1) as f64;
            assert!((0.5..=1.0).contains(&(a * k * k)));
            assert!((0.25..=1.0).contains(&(sigma * k.powi(4))));
        }
        assert!(build_diffusion_spectrum(0).is_err());
    }

    #[test]
    fn sobolev_ic_values() {
        let u = build_sobolev_ic(SobolevICParams { beta: 1.0, delta: 0.01, n_modes: 2 }).unwrap();
        assert_eq!(u[0], 1.0);
        assert_relative_eq!(u[1], 2f64.powf(-1.51), max_relative = 1e-15);
        assert_relative_eq!(u[1], 0.35111, epsilon = 1e-5);
        let u = build_sobolev_ic(SobolevICParams { beta: 0.0, delta: 0.5, n_modes: 4 }).unwrap();
        assert_relative_eq!(u[3], 0.25);
        assert!(build_sobolev_ic(SobolevICParams { beta: 1.0, delta: 0.0, n_modes: 4 }).is_err());
    }

    #[test]
    fn weighted_norm_values() {
        let op = OperatorRep::Diagonal(build_diffusion_spectrum(2).unwrap());
        assert_relative_eq!(op.weighted_norm_sq(&[1.0, 2.0], 0.0).unwrap(), 5.0);
        let one = OperatorRep::Diagonal(build_diffusion_spectrum(1).unwrap());
        assert_relative_eq!(one.weighted_norm_sq(&[2.0], 1.0).unwrap(), 1.0);
        assert_relative_eq!(op.weighted_norm_sq(&[1.0, 1.0], 2.0).unwrap(), 0.0641, max_relative = 1e-14);
        assert!(op.weighted_norm_sq(&[1.0, 1.0], -1.0).is_err());
        assert!(op.weighted_norm_sq(&[1.0], 0.0).is_err());
    }

    #[test]
    fn dense_norm_matches_diagonal() {
        let spec = build_diffusion_spectrum(6).unwrap();
        let dense = OperatorRep::Dense(DenseOperator::from_spectrum(&spec).unwrap());
        let diag = OperatorRep::Diagonal(spec);
        let x = [0.3, -1.0, 2.5, 0.1, -0.7, 4.0];
        for t in [0.0, 0.5, 1.0, 2.0] {
            let a = diag.weighted_norm_sq(&x, t).unwrap();
            let b = dense.weighted_norm_sq(&x, t).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn dense_rejects_bad_sigma() {
        let a = DMatrix::identity(2, 2);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(DenseOperator::new(a.clone(), asym).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(DenseOperator::new(a.clone(), indefinite).is_err());
        assert!(DenseOperator::new(DMatrix::identity(3, 3), DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn observation_is_deterministic_and_noiseless_in_the_limit() {
        let spec = ProblemSpec::scalar(1.0, 1.0, 0.5, 0.0, 1e-30, 1.0).unwrap();
        let stream = NoiseStream::new(7, 3, 1);
        let y = draw_observation(&spec, &stream, 5).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-20);

        let spec = spec.with_gamma(0.1);
        let a = draw_observation(&spec, &stream, 5).unwrap();
        let b = draw_observation(&spec, &stream, 5).unwrap();
        assert_eq!(a, b);
        let other_step = draw_observation(&spec, &stream, 6).unwrap();
        let other_trial = draw_observation(&spec, &NoiseStream::new(7, 4, 1), 5).unwrap();
        assert_ne!(a, other_step);
        assert_ne!(a, other_trial);
    }

    #[test]
    fn observation_moments() {
        let gamma = 0.1;
        let spec = ProblemSpec::scalar(1.0, 1.0, 0.5, 0.0, gamma, 1.0).unwrap();
        let stream = NoiseStream::new(11, 0, 1);
        let draws: Vec<f64> = (1..=100_000)
            .map(|n| draw_observation(&spec, &stream, n).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!(((mean - 0.5) / 0.5).abs() < 0.05);
        assert!(((var - gamma * gamma) / (gamma * gamma)).abs() < 0.05);
    }

    #[test]
    fn noise_coordinates_are_uncorrelated() {
        let gamma = 0.3;
        let stream = NoiseStream::new(5, 9, 4);
        let mut buf = [0.0; 4];
        let (mut s1, mut s2, mut s12) = (0.0, 0.0, 0.0);
        let draws = 10_000;
        for step in 1..=draws {
            stream.fill_noise(step, gamma, &mut buf).unwrap();
            s1 += buf[1];
            s2 += buf[3];
            s12 += buf[1] * buf[3];
        }
        let n = draws as f64;
        let cov = s12 / n - (s1 / n) * (s2 / n);
        assert!(cov.abs() < 5e-2 * gamma * gamma);
    }

    #[test]
    fn spec_validation() {
        let op = OperatorRep::Diagonal(build_diffusion_spectrum(3).unwrap());
        assert!(ProblemSpec::new(op.clone(), vec![0.0; 2], vec![0.0; 3], 0.1, 1.0, 0.0).is_err());
        assert!(ProblemSpec::new(op.clone(), vec![0.0; 3], vec![0.0; 3], 0.1, 0.0, 0.0).is_err());
        assert!(ProblemSpec::new(op.clone(), vec![0.0; 3], vec![0.0; 3], 0.1, 1.0, -1.0).is_err());
        assert!(ProblemSpec::new(op.clone(), vec![0.0; 3], vec![0.0; 3], -0.1, 1.0, 0.0).is_err());
        assert!(ProblemSpec::new(op, vec![0.0; 3], vec![0.0; 3], 0.0, 1.0, 0.0).is_ok());
    }

    #[test]
    fn stream_rejects_mismatch() {
        let spec = ProblemSpec::scalar(1.0, 1.0, 0.5, 0.0, 0.1, 1.0).unwrap();
        assert!(draw_observation(&spec, &NoiseStream::new(1, 0, 2), 1).is_err());
        assert!(draw_observation(&spec, &NoiseStream::new(1, 0, 1), 0).is_err());
    }
}
