//! 3DVAR and Kalman recursions with running iterate averages.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{NoiseStream, OperatorRep, ProblemSpec};

/// Largest condition number accepted for the dense gain systems.
pub const CONDITION_LIMIT: f64 = 1e14;

/// Filter gain: per-mode for diagonal operators, a matrix otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum Gain {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

/// Static 3DVAR gain `(A*A + alpha Sigma^{-1})^{-1} A*`.
///
/// The dense form is evaluated as `Sigma^{1/2} (B*B + alpha I)^{-1} B*`
/// so `Sigma` is never inverted.
pub fn threedvar_gain(spec: &ProblemSpec) -> Result<Gain> {
    let alpha = spec.alpha;
    match &spec.op {
        OperatorRep::Diagonal(s) => Ok(Gain::Diagonal(
            s.sigma()
                .iter()
                .zip(s.a())
                .map(|(sigma, a)| sigma * a / (sigma * a * a + alpha))
                .collect(),
        )),
        OperatorRep::Dense(d) => {
            let b = d.b();
            let btb = b.tr_mul(b);
            let eig = SymmetricEigen::new(btb.clone());
            let condition = (eig.eigenvalues.max() + alpha) / (eig.eigenvalues.min().max(0.0) + alpha);
            if !(condition <= CONDITION_LIMIT) {
                return Err(Error::IllConditioned { condition, limit: CONDITION_LIMIT });
            }
            let system = btb + DMatrix::identity(d.dim(), d.dim()) * alpha;
            let chol = system
                .cholesky()
                .ok_or(Error::IllConditioned { condition, limit: CONDITION_LIMIT })?;
            let inner = chol.solve(&b.transpose());
            Ok(Gain::Dense(d.sigma_sqrt() * inner))
        }
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// 3DVAR iterate `u_n` and its running average over `u_1..u_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreeDVarState {
    pub u: Vec<f64>,
    pub u_bar: Vec<f64>,
    pub n: u64,
}

impl ThreeDVarState {
    pub fn new(u0: Vec<f64>) -> Self {
        let u_bar = vec![0.0; u0.len()];
        Self { u: u0, u_bar, n: 0 }
    }

    /// `u_n = u_{n-1} + K (y_n - A u_{n-1})`, then folds `u_n` into the average.
    pub fn step(&mut self, gain: &Gain, op: &OperatorRep, y: &[f64]) -> Result<()> {
        let d = op.dim();
        check_dim(d, self.u.len())?;
        check_dim(d, y.len())?;
        match (gain, op) {
            (Gain::Diagonal(k), OperatorRep::Diagonal(s)) => {
                check_dim(d, k.len())?;
                for (((u, k), a), y) in self.u.iter_mut().zip(k).zip(s.a()).zip(y) {
                    *u += k * (y - a * *u);
                }
            }
            (Gain::Dense(k), OperatorRep::Dense(dense)) => {
                check_dim(d, k.nrows())?;
                let u = DVector::from_column_slice(&self.u);
                let innovation = DVector::from_column_slice(y) - dense.a() * &u;
                let next = u + k * innovation;
                self.u.copy_from_slice(next.as_slice());
            }
            _ => return Err(Error::domain("gain and operator representations differ")),
        }
        self.n += 1;
        let w = 1.0 / self.n as f64;
        for (bar, u) in self.u_bar.iter_mut().zip(&self.u) {
            *bar += w * (u - *bar);
        }
        Ok(())
    }
}

/// Free-function form of [`ThreeDVarState::step`].
pub fn threedvar_step(
    mut state: ThreeDVarState,
    gain: &Gain,
    y: &[f64],
    op: &OperatorRep,
) -> Result<ThreeDVarState> {
    state.step(gain, op, y)?;
    Ok(state)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// Per-mode variances on the shared eigenbasis.
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

/// Kalman mean, covariance and running average of the means.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub m: Vec<f64>,
    pub cov: Covariance,
    pub m_bar: Vec<f64>,
    pub n: u64,
}

impl KalmanState {
    pub fn new(m0: Vec<f64>, cov: Covariance) -> Self {
        let m_bar = vec![0.0; m0.len()];
        Self { m: m0, cov, m_bar, n: 0 }
    }

    /// Starts from `m_0 = u0` and `C_0 = (gamma^2 / alpha) Sigma`.
    pub fn from_spec(spec: &ProblemSpec) -> Result<Self> {
        if !(spec.gamma > 0.0) {
            return Err(Error::domain("the Kalman prior needs gamma > 0"));
        }
        let scale = spec.gamma * spec.gamma / spec.alpha;
        let cov = match &spec.op {
            OperatorRep::Diagonal(s) => Covariance::Diagonal(s.sigma().iter().map(|v| v * scale).collect()),
            OperatorRep::Dense(d) => Covariance::Dense(d.sigma() * scale),
        };
        Ok(Self::new(spec.u0.clone(), cov))
    }

    /// Gain `C A* (A C A* + gamma^2 I)^{-1}` the next step will apply.
    pub fn gain(&self, spec: &ProblemSpec) -> Result<Gain> {
        let g2 = spec.gamma * spec.gamma;
        match (&self.cov, &spec.op) {
            (Covariance::Diagonal(c), OperatorRep::Diagonal(s)) => Ok(Gain::Diagonal(
                c.iter().zip(s.a()).map(|(c, a)| c * a / (a * a * c + g2)).collect(),
            )),
            (Covariance::Dense(c), OperatorRep::Dense(d)) => dense_kalman_gain(c, d.a(), g2).map(Gain::Dense),
            _ => Err(Error::domain("covariance and operator representations differ")),
        }
    }

    pub fn step(&mut self, y: &[f64], spec: &ProblemSpec) -> Result<()> {
        let d = spec.dim();
        check_dim(d, self.m.len())?;
        check_dim(d, y.len())?;
        let g2 = spec.gamma * spec.gamma;
        let step = self.n + 1;
        match (&mut self.cov, &spec.op) {
            (Covariance::Diagonal(c), OperatorRep::Diagonal(s)) => {
                check_dim(d, c.len())?;
                for (((m, c), a), y) in self.m.iter_mut().zip(c.iter_mut()).zip(s.a()).zip(y) {
                    let innovation_var = a * a * *c + g2;
                    let k = *c * a / innovation_var;
                    *m += k * (y - a * *m);
                    // (1 - k a) c, written without the subtraction
                    *c *= g2 / innovation_var;
                    if !(*c > 0.0 && c.is_finite()) {
                        return Err(Error::NonPositiveCovariance { step });
                    }
                }
            }
            (Covariance::Dense(c), OperatorRep::Dense(op)) => {
                let a = op.a();
                let k = dense_kalman_gain(c, a, g2).map_err(|_| Error::NonPositiveCovariance { step })?;
                let m = DVector::from_column_slice(&self.m);
                let next = &m + &k * (DVector::from_column_slice(y) - a * &m);
                self.m.copy_from_slice(next.as_slice());
                let updated = (DMatrix::identity(d, d) - &k * a) * &*c;
                *c = (&updated + updated.transpose()) * 0.5;
                if c.diagonal().iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(Error::NonPositiveCovariance { step });
                }
            }
            _ => return Err(Error::domain("covariance and operator representations differ")),
        }
        self.n = step;
        let w = 1.0 / self.n as f64;
        for (bar, m) in self.m_bar.iter_mut().zip(&self.m) {
            *bar += w * (m - *bar);
        }
        Ok(())
    }
}

fn dense_kalman_gain(c: &DMatrix<f64>, a: &DMatrix<f64>, g2: f64) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    let ac = a * c;
    let innovation = &ac * a.transpose() + DMatrix::identity(d, d) * g2;
    let chol = innovation
        .cholesky()
        .ok_or(Error::IllConditioned { condition: f64::INFINITY, limit: CONDITION_LIMIT })?;
    // K^T = S^{-1} A C since C and S are symmetric
    Ok(chol.solve(&ac).transpose())
}

/// Free-function form of [`KalmanState::step`].
pub fn kalman_step(mut state: KalmanState, y: &[f64], spec: &ProblemSpec) -> Result<KalmanState> {
    state.step(y, spec)?;
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    ThreeDVar,
    Kalman,
}

/// Squared t-norm errors of the plain and averaged iterate at step `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRecord {
    pub n: u64,
    pub e_plain: f64,
    pub e_avg: f64,
}

/// Sorted step indices in `[1, n_max]`, `per_decade` geometrically spaced
/// points per factor of ten, always ending at `n_max`.
pub fn recording_grid(n_max: u64, per_decade: u32) -> Vec<u64> {
    let mut grid = Vec::new();
    if n_max == 0 {
        return grid;
    }
    let per_decade = per_decade.max(1) as f64;
    let mut i = 0u32;
    loop {
        let n = 10f64.powf(i as f64 / per_decade).round() as u64;
        if n > n_max {
            break;
        }
        if grid.last() != Some(&n) {
            grid.push(n);
        }
        i += 1;
    }
    if grid.last() != Some(&n_max) {
        grid.push(n_max);
    }
    grid
}

/// Runs one filter for `n_steps` observations and records errors in the
/// spec's own norm index.
pub fn run_filter(
    spec: &ProblemSpec,
    stream: &NoiseStream,
    n_steps: u64,
    kind: FilterKind,
    record_at: &[u64],
) -> Result<Vec<ErrorRecord>> {
    let mut out = run_filter_norms(spec, stream, n_steps, kind, record_at, &[spec.t])?;
    Ok(out.pop().unwrap_or_default())
}

/// Like [`run_filter`] but measures every recorded state in each norm of
/// `ts`; the result is indexed like `ts`.
pub fn run_filter_norms(
    spec: &ProblemSpec,
    stream: &NoiseStream,
    n_steps: u64,
    kind: FilterKind,
    record_at: &[u64],
    ts: &[f64],
) -> Result<Vec<Vec<ErrorRecord>>> {
    spec.validate()?;
    check_dim(spec.dim(), stream.dimension)?;
    if n_steps == 0 {
        return Err(Error::domain("n_steps must be at least 1"));
    }
    if record_at.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("record_at must be strictly increasing"));
    }
    if record_at.first().is_some_and(|&n| n == 0) || record_at.last().is_some_and(|&n| n > n_steps) {
        return Err(Error::domain(format!("record_at must lie in [1, {n_steps}]")));
    }
    if let Some(t) = ts.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::domain(format!("norm index t must be nonnegative, got {t}")));
    }

    let d = spec.dim();
    let signal = spec.op.apply_a(&spec.u_truth);
    let mut y = vec![0.0; d];
    let mut diff = vec![0.0; d];
    let mut records: Vec<Vec<ErrorRecord>> = ts.iter().map(|_| Vec::with_capacity(record_at.len())).collect();
    let mut next_record = record_at.iter().peekable();

    let observe = |n: u64, y: &mut [f64]| -> Result<()> {
        if spec.gamma > 0.0 {
            stream.fill_noise(n, spec.gamma, y)?;
            for (y, s) in y.iter_mut().zip(&signal) {
                *y += s;
            }
        } else {
            y.copy_from_slice(&signal);
        }
        Ok(())
    };

    let mut measure = |n: u64, plain: &[f64], avg: &[f64], records: &mut [Vec<ErrorRecord>]| {
        for (t, out) in ts.iter().zip(records.iter_mut()) {
            for ((d, u), truth) in diff.iter_mut().zip(plain).zip(&spec.u_truth) {
                *d = u - truth;
            }
            let e_plain = spec.op.weighted_norm_sq_unchecked(&diff, *t);
            for ((d, u), truth) in diff.iter_mut().zip(avg).zip(&spec.u_truth) {
                *d = u - truth;
            }
            let e_avg = spec.op.weighted_norm_sq_unchecked(&diff, *t);
            out.push(ErrorRecord { n, e_plain, e_avg });
        }
    };

    match kind {
        FilterKind::ThreeDVar => {
            let gain = threedvar_gain(spec)?;
            let mut state = ThreeDVarState::new(spec.u0.clone());
            for n in 1..=n_steps {
                observe(n, &mut y)?;
                state.step(&gain, &spec.op, &y)?;
                if next_record.next_if_eq(&&n).is_some() {
                    measure(n, &state.u, &state.u_bar, &mut records);
                }
            }
        }
        FilterKind::Kalman => {
            let mut state = KalmanState::from_spec(spec)?;
            for n in 1..=n_steps {
                observe(n, &mut y)?;
                state.step(&y, spec)?;
                if next_record.next_if_eq(&&n).is_some() {
                    measure(n, &state.m, &state.m_bar, &mut records);
                }
            }
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_diffusion_spectrum, DenseOperator, EigenSequence};
    use approx::assert_relative_eq;

    fn scalar_spec(gamma: f64) -> ProblemSpec {
        ProblemSpec::scalar(1.0, 1.0, 0.5, 0.0, gamma, 1.0).unwrap()
    }

    #[test]
    fn scalar_gain_values() {
        assert_eq!(threedvar_gain(&scalar_spec(0.1)).unwrap(), Gain::Diagonal(vec![0.5]));
        let strong = ProblemSpec::scalar(1.0, 1.0, 0.5, 0.0, 0.1, 1e300).unwrap();
        let Gain::Diagonal(k) = threedvar_gain(&strong).unwrap() else { panic!() };
        assert!(k[0] < 1e-299);
        let op = OperatorRep::Diagonal(build_diffusion_spectrum(1).unwrap());
        let spec = ProblemSpec::new(op, vec![0.0], vec![0.0], 0.1, 1.0, 0.0).unwrap();
        let Gain::Diagonal(k) = threedvar_gain(&spec).unwrap() else { panic!() };
        assert_relative_eq!(k[0], 0.125 / 1.0625, max_relative = 1e-15);
        assert_relative_eq!(k[0], 0.117647, epsilon = 1e-6);
    }

    #[test]
    fn threedvar_hand_steps() {
        let spec = scalar_spec(0.1);
        let gain = threedvar_gain(&spec).unwrap();
        let s = threedvar_step(ThreeDVarState::new(vec![0.0]), &gain, &[0.6], &spec.op).unwrap();
        assert_relative_eq!(s.u[0], 0.3);
        assert_relative_eq!(s.u_bar[0], 0.3);

        let s1 = threedvar_step(ThreeDVarState::new(vec![0.0]), &gain, &[0.5], &spec.op).unwrap();
        let s2 = threedvar_step(s1.clone(), &gain, &[0.5], &spec.op).unwrap();
        assert_relative_eq!(s1.u[0], 0.25);
        assert_relative_eq!(s2.u[0], 0.375);
        assert_relative_eq!(s2.u_bar[0], 0.3125);
        assert_eq!(s2.n, 2);
    }

    #[test]
    fn zero_gain_freezes_iterate() {
        let spec = scalar_spec(0.1);
        let mut s = ThreeDVarState::new(vec![0.7]);
        for y in [1.0, -3.0, 2.0] {
            s.step(&Gain::Diagonal(vec![0.0]), &spec.op, &[y]).unwrap();
            assert_eq!(s.u, vec![0.7]);
        }
    }

    #[test]
    fn running_average_matches_direct_sum() {
        let spec = scalar_spec(0.3);
        let gain = threedvar_gain(&spec).unwrap();
        let stream = NoiseStream::new(3, 0, 1);
        let mut s = ThreeDVarState::new(vec![0.0]);
        let mut sum = 0.0;
        for n in 1..=5000 {
            let y = crate::model::draw_observation(&spec, &stream, n).unwrap();
            s.step(&gain, &spec.op, &y).unwrap();
            sum += s.u[0];
            assert_relative_eq!(s.u_bar[0], sum / n as f64, max_relative = 1e-10);
        }
    }

    #[test]
    fn kalman_hand_step() {
        let spec = scalar_spec(0.1);
        let mut k = KalmanState::new(vec![0.0], Covariance::Diagonal(vec![1.0]));
        let Gain::Diagonal(g) = k.gain(&spec).unwrap() else { panic!() };
        assert_relative_eq!(g[0], 1.0 / 1.01, max_relative = 1e-14);
        k.step(&[0.6], &spec).unwrap();
        let Covariance::Diagonal(c) = &k.cov else { panic!() };
        assert_relative_eq!(c[0], 1.0 / 101.0, max_relative = 1e-14);
        assert_relative_eq!(k.m[0], 0.594059, epsilon = 1e-6);
        assert_relative_eq!(1.0 / c[0], 1.0 + 100.0, max_relative = 1e-12);
    }

    #[test]
    fn kalman_ignores_uninformative_data() {
        let spec = scalar_spec(1e100);
        let mut k = KalmanState::new(vec![0.2], Covariance::Diagonal(vec![1.0]));
        k.step(&[5.0], &spec).unwrap();
        assert_relative_eq!(k.m[0], 0.2);
        let Covariance::Diagonal(c) = &k.cov else { panic!() };
        assert_relative_eq!(c[0], 1.0);
    }

    #[test]
    fn kalman_information_identity_diagonal() {
        let spec = ProblemSpec::new(
            OperatorRep::Diagonal(build_diffusion_spectrum(16).unwrap()),
            vec![0.1; 16],
            vec![0.0; 16],
            0.05,
            2.0,
            0.0,
        )
        .unwrap();
        let OperatorRep::Diagonal(s) = &spec.op else { unreachable!() };
        let g2 = spec.gamma * spec.gamma;
        let mut state = KalmanState::from_spec(&spec).unwrap();
        let Covariance::Diagonal(c0) = state.cov.clone() else { unreachable!() };
        let stream = NoiseStream::new(1, 0, 16);
        let mut prev = c0.clone();
        for n in 1..=2000u64 {
            let Gain::Diagonal(k) = state.gain(&spec).unwrap() else { unreachable!() };
            let y = crate::model::draw_observation(&spec, &stream, n).unwrap();
            state.step(&y, &spec).unwrap();
            let Covariance::Diagonal(c) = &state.cov else { unreachable!() };
            for i in 0..16 {
                let a = s.a()[i];
                let info = 1.0 / c0[i] + n as f64 * a * a / g2;
                assert_relative_eq!(1.0 / c[i], info, max_relative = 1e-8);
                assert_relative_eq!(k[i], c[i] * a / g2, max_relative = 1e-8);
                assert!(c[i] > 0.0 && c[i] <= prev[i]);
            }
            prev = c.clone();
        }
    }

    #[test]
    fn kalman_requires_noise() {
        assert!(KalmanState::from_spec(&scalar_spec(0.0)).is_err());
    }

    #[test]
    fn grid_shape() {
        let g = recording_grid(10_000, 30);
        assert_eq!(g[0], 1);
        assert_eq!(*g.last().unwrap(), 10_000);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        let last_decade = g.iter().filter(|&&n| n > 1000).count();
        assert_eq!(last_decade, 30);
        assert_eq!(recording_grid(7, 30).last(), Some(&7));
        assert!(recording_grid(0, 30).is_empty());
    }

    #[test]
    fn zero_noise_scalar_trajectory() {
        let spec = scalar_spec(0.0);
        let stream = NoiseStream::new(0, 0, 1);
        let rec = run_filter(&spec, &stream, 2, FilterKind::ThreeDVar, &[2]).unwrap();
        assert_relative_eq!(rec[0].e_avg, 0.03515625, max_relative = 1e-15);
        assert_relative_eq!(rec[0].e_plain, 0.015625, max_relative = 1e-15);
    }

    #[test]
    fn fixed_point_has_zero_error() {
        let spec = ProblemSpec::scalar(1.0, 1.0, 0.5, 0.5, 0.0, 1.0).unwrap();
        let stream = NoiseStream::new(0, 0, 1);
        let grid = recording_grid(100, 10);
        let rec = run_filter(&spec, &stream, 100, FilterKind::ThreeDVar, &grid).unwrap();
        assert!(rec.iter().all(|r| r.e_plain == 0.0 && r.e_avg == 0.0));
    }

    #[test]
    fn run_filter_validates_grid() {
        let spec = scalar_spec(0.1);
        let stream = NoiseStream::new(0, 0, 1);
        assert!(run_filter(&spec, &stream, 10, FilterKind::ThreeDVar, &[0]).is_err());
        assert!(run_filter(&spec, &stream, 10, FilterKind::ThreeDVar, &[11]).is_err());
        assert!(run_filter(&spec, &stream, 10, FilterKind::ThreeDVar, &[3, 3]).is_err());
        assert!(run_filter(&spec, &NoiseStream::new(0, 0, 2), 10, FilterKind::ThreeDVar, &[3]).is_err());
    }

    #[test]
    fn dense_twin_reproduces_diagonal() {
        let spectrum = EigenSequence::new(vec![0.9, 0.3, 0.05, 0.01], vec![1.0, 0.6, 0.2, 0.1]).unwrap();
        let dense = OperatorRep::Dense(DenseOperator::from_spectrum(&spectrum).unwrap());
        let diag = OperatorRep::Diagonal(spectrum);
        let truth = vec![0.4, -0.2, 0.1, 0.3];
        let u0 = vec![0.0, 0.5, -0.5, 1.0];
        let diag_spec = ProblemSpec::new(diag, truth.clone(), u0.clone(), 0.2, 0.7, 0.5).unwrap();
        let dense_spec = ProblemSpec::new(dense, truth, u0, 0.2, 0.7, 0.5).unwrap();
        let stream = NoiseStream::new(42, 1, 4);
        let grid = recording_grid(300, 10);
        for kind in [FilterKind::ThreeDVar, FilterKind::Kalman] {
            let a = run_filter(&diag_spec, &stream, 300, kind, &grid).unwrap();
            let b = run_filter(&dense_spec, &stream, 300, kind, &grid).unwrap();
            for (a, b) in a.iter().zip(&b) {
                assert_relative_eq!(a.e_plain, b.e_plain, max_relative = 1e-10);
                assert_relative_eq!(a.e_avg, b.e_avg, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn dense_gain_condition_guard() {
        let a = DMatrix::from_diagonal(&DVector::from_column_slice(&[1e8, 1.0]));
        let op = DenseOperator::new(a, DMatrix::identity(2, 2)).unwrap();
        let spec = ProblemSpec::new(OperatorRep::Dense(op), vec![0.0; 2], vec![0.0; 2], 0.1, 1e-3, 0.0).unwrap();
        assert!(matches!(threedvar_gain(&spec), Err(Error::IllConditioned { .. })));
    }
}
