//! Runners for the named experiments. Each returns a canonical result table
//! plus fitted slopes, CI coverage summaries and free-text notes.

use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::filters::{recording_grid, run_filter_norms, threedvar_gain, ErrorRecord, FilterKind, Gain};
use crate::model::{build_diffusion_spectrum, build_sobolev_ic, NoiseStream, OperatorRep, ProblemSpec, SobolevICParams};
use crate::oracle::{
    averaged_threedvar_closed, bias_sq_closed, kalman_closed_trajectory, plain_threedvar_closed,
    var_trajectory, AveragedVariance, BatchRiskProfile, ScalarKalman,
};
use crate::output::{ResultRow, ResultTable};
use crate::rates::{bootstrap_ci, fit_slope, DiagonalRateParams, RateReport};

/// Relative slack for the Kalman inequality flags; the two sides coincide
/// exactly at `n = 1` and can differ there by rounding.
pub const INEQUALITY_RTOL: f64 = 1e-12;

/// Slope fitted to one emitted curve.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFit {
    pub t: f64,
    pub series: String,
    pub report: RateReport,
}

/// How often an MC series' confidence band contains its oracle curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub t: f64,
    pub series: String,
    pub oracle: String,
    pub covered: usize,
    pub total: usize,
}

impl Coverage {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.covered as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub table: ResultTable,
    pub fits: Vec<SeriesFit>,
    pub coverage: Vec<Coverage>,
    pub notes: Vec<String>,
}

impl ExperimentOutput {
    pub fn fit(&self, t: f64, series: &str) -> Option<&RateReport> {
        self.fits.iter().find(|f| f.t == t && f.series == series).map(|f| &f.report)
    }

    pub fn coverage_of(&self, t: f64, series: &str) -> Option<&Coverage> {
        self.coverage.iter().find(|c| c.t == t && c.series == series)
    }
}

/// Accumulates rows, fits and coverage before the canonical sort.
struct Builder {
    experiment: &'static str,
    rows: Vec<ResultRow>,
    fits: Vec<SeriesFit>,
    coverage: Vec<Coverage>,
    notes: Vec<String>,
}

impl Builder {
    fn new(kind: ExperimentKind) -> Self {
        Self { experiment: kind.name(), rows: Vec::new(), fits: Vec::new(), coverage: Vec::new(), notes: Vec::new() }
    }

    fn curve(&mut self, t: f64, series: &str, ns: &[u64], values: &[f64], predicted: Option<f64>) {
        for (&n, &v) in ns.iter().zip(values) {
            self.rows.push(ResultRow::point(self.experiment, t, n, series, v).with_prediction(predicted));
        }
    }

    /// Fits the curve just emitted under `series` over `window`, storing a
    /// `slope:<series>` row at `n = window.1`.
    fn fit(&mut self, t: f64, series: &str, ns: &[u64], values: &[f64], window: (f64, f64), predicted: Option<f64>) {
        let points: Vec<(f64, f64)> = ns.iter().zip(values).map(|(&n, &v)| (n as f64, v)).collect();
        match fit_slope(&points, window) {
            Ok(mut report) => {
                report.predicted_exponent = predicted;
                let n_hi = ns.iter().copied().filter(|&n| n as f64 <= window.1).max().unwrap_or(0);
                let se = report.slope_stderr;
                self.rows.push(
                    ResultRow::point(self.experiment, t, n_hi, &format!("slope:{series}"), report.fitted_slope)
                        .with_ci(report.fitted_slope - 1.96 * se, report.fitted_slope + 1.96 * se)
                        .with_prediction(predicted),
                );
                self.fits.push(SeriesFit { t, series: series.to_owned(), report });
            }
            Err(e) => self.notes.push(format!("t = {t}: no slope for {series}: {e}")),
        }
    }

    fn coverage(&mut self, t: f64, series: &str, oracle: &str, ns: &[u64], mc: &[McPoint], truth: &[f64]) {
        let with_ci: Vec<bool> = mc
            .iter()
            .zip(truth)
            .filter_map(|(p, v)| p.ci.map(|(lo, hi)| lo <= *v && *v <= hi))
            .collect();
        if with_ci.is_empty() {
            return;
        }
        let cov = Coverage {
            t,
            series: series.to_owned(),
            oracle: oracle.to_owned(),
            covered: with_ci.iter().filter(|c| **c).count(),
            total: with_ci.len(),
        };
        let n_last = ns.last().copied().unwrap_or(0);
        self.rows.push(ResultRow::point(self.experiment, t, n_last, &format!("coverage:{series}"), cov.fraction()));
        self.coverage.push(cov);
    }

    fn finish(self) -> ExperimentOutput {
        ExperimentOutput { table: ResultTable::new(self.rows), fits: self.fits, coverage: self.coverage, notes: self.notes }
    }
}

/// Trial-mean of one MC quantity at one recorded step.
#[derive(Debug, Clone, Copy, PartialEq)]
struct McPoint {
    mean: f64,
    ci: Option<(f64, f64)>,
}

fn mc_series(
    cfg: &ExperimentConfig,
    series: &str,
    t: f64,
    ns: &[u64],
    per_trial: &[Vec<f64>],
) -> Result<Vec<McPoint>> {
    let tag = fnv1a(series.as_bytes());
    ns.par_iter()
        .enumerate()
        .map(|(i, &n)| {
            let samples: Vec<f64> = per_trial.iter().map(|trial| trial[i]).collect();
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            if samples.len() < 2 {
                return Ok(McPoint { mean, ci: None });
            }
            let seed = mix(&[cfg.seed, tag, t.to_bits(), n]);
            let ci = bootstrap_ci(&samples, cfg.bootstrap_resamples, cfg.confidence, seed)?;
            Ok(McPoint { mean: ci.point, ci: Some((ci.lo, ci.hi)) })
        })
        .collect()
}

fn mc_rows(b: &mut Builder, t: f64, series: &str, ns: &[u64], pts: &[McPoint], predicted: Option<f64>) {
    for (&n, p) in ns.iter().zip(pts) {
        let mut row = ResultRow::point(b.experiment, t, n, series, p.mean).with_prediction(predicted);
        if let Some((lo, hi)) = p.ci {
            row = row.with_ci(lo, hi);
        }
        b.rows.push(row);
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0, |h, p| splitmix64(h ^ p))
}

fn last_decade_window(n_max: u64) -> (f64, f64) {
    (n_max as f64 / 10.0, n_max as f64)
}

fn rate_params(cfg: &ExperimentConfig, t: f64) -> Result<DiagonalRateParams> {
    DiagonalRateParams::new(cfg.epsilon, cfg.p, cfg.beta, t)
}

/// Runs `trials` independent filter runs in parallel, in trial order.
fn run_trials(
    spec: &ProblemSpec,
    cfg: &ExperimentConfig,
    kind: FilterKind,
    ns: &[u64],
    ts: &[f64],
) -> Result<Vec<Vec<Vec<ErrorRecord>>>> {
    (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let stream = NoiseStream::new(cfg.seed, trial, spec.dim());
            run_filter_norms(spec, &stream, cfg.n_steps, kind, ns, ts)
        })
        .collect()
}

/// Scalar 3DVAR and Kalman runs with MC means, oracle curves, the MSE
/// decomposition and the 3DVAR floor `gamma^2 K^2`.
pub fn run_scalar_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut b = Builder::new(ExperimentKind::Scalar);
    let ns = recording_grid(cfg.n_steps, cfg.record_per_decade);
    let window = last_decade_window(cfg.n_steps);
    let threedvar = ProblemSpec::scalar(1.0, 1.0, cfg.u_truth, cfg.u0, cfg.gamma, cfg.alpha)?;
    // C0 = gamma^2 sigma / alpha = kalman_c0
    let kalman = ProblemSpec::scalar(1.0, cfg.kalman_c0, cfg.u_truth, cfg.u0, cfg.gamma, cfg.gamma * cfg.gamma)?;
    let ts = [0.0];

    let tdv_runs = run_trials(&threedvar, cfg, FilterKind::ThreeDVar, &ns, &ts)?;
    let kal_runs = run_trials(&kalman, cfg, FilterKind::Kalman, &ns, &ts)?;
    let plain = |runs: &[Vec<Vec<ErrorRecord>>]| -> Vec<Vec<f64>> {
        runs.iter().map(|r| r[0].iter().map(|e| e.e_plain).collect()).collect()
    };
    let avg = |runs: &[Vec<Vec<ErrorRecord>>]| -> Vec<Vec<f64>> {
        runs.iter().map(|r| r[0].iter().map(|e| e.e_avg).collect()).collect()
    };

    let tdv_plain = ns.iter().map(|&n| plain_threedvar_closed(&threedvar, n)).collect::<Result<Vec<_>>>()?;
    let tdv_avg = ns.iter().map(|&n| averaged_threedvar_closed(&threedvar, n)).collect::<Result<Vec<_>>>()?;
    let kparams = ScalarKalman::with_prior_variance(1.0, cfg.kalman_c0, cfg.gamma, cfg.u0, cfg.u_truth)?;
    let ktraj = kalman_closed_trajectory(&kparams, cfg.n_steps, AveragedVariance::Exact);
    let k_plain: Vec<_> = ns.iter().map(|&n| ktraj[n as usize - 1].plain).collect();
    let k_avg: Vec<_> = ns.iter().map(|&n| ktraj[n as usize - 1].averaged).collect();

    let series = [
        ("3dvar_mse", plain(&tdv_runs), &tdv_plain, 0.0),
        ("3dvar_avg_mse", avg(&tdv_runs), &tdv_avg, -1.0),
        ("kalman_mse", plain(&kal_runs), &k_plain, -1.0),
        ("kalman_avg_mse", avg(&kal_runs), &k_avg, -1.0),
    ];
    for (name, per_trial, oracle, predicted) in series {
        let mc = mc_series(cfg, name, 0.0, &ns, &per_trial)?;
        mc_rows(&mut b, 0.0, name, &ns, &mc, Some(predicted));
        let means: Vec<f64> = mc.iter().map(|p| p.mean).collect();
        b.fit(0.0, name, &ns, &means, window, Some(predicted));

        let closed_name = format!("{name}_closed");
        let mse: Vec<f64> = oracle.iter().map(|r| r.mse).collect();
        b.curve(0.0, &closed_name, &ns, &mse, Some(predicted));
        b.fit(0.0, &closed_name, &ns, &mse, window, Some(predicted));
        let stem = name.trim_end_matches("_mse");
        let bias: Vec<f64> = oracle.iter().map(|r| r.bias_sq).collect();
        let var: Vec<f64> = oracle.iter().map(|r| r.var).collect();
        b.curve(0.0, &format!("{stem}_bias_sq"), &ns, &bias, None);
        b.curve(0.0, &format!("{stem}_var"), &ns, &var, None);
        b.coverage(0.0, name, &closed_name, &ns, &mc, &mse);
    }

    let gain = match threedvar_gain(&threedvar)? {
        Gain::Diagonal(k) => k[0],
        Gain::Dense(k) => k[(0, 0)],
    };
    let floor = cfg.gamma * cfg.gamma * gain * gain;
    b.curve(0.0, "3dvar_floor", &ns, &vec![floor; ns.len()], Some(0.0));
    Ok(b.finish())
}

fn diffusion_spec(cfg: &ExperimentConfig, u_truth: Vec<f64>, u0: Vec<f64>, gamma: f64) -> Result<ProblemSpec> {
    let op = OperatorRep::Diagonal(build_diffusion_spectrum(cfg.n_modes)?);
    ProblemSpec::new(op, u_truth, u0, gamma, cfg.alpha, 0.0)
}

fn sobolev_ic(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    build_sobolev_ic(SobolevICParams { beta: cfg.beta, delta: cfg.delta, n_modes: cfg.n_modes })
}

/// Noiseless averaged 3DVAR from a Sobolev initial error, simulated and in
/// closed form, for each `t`.
pub fn run_diag_bias(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut b = Builder::new(ExperimentKind::DiagBias);
    let spec = diffusion_spec(cfg, vec![0.0; cfg.n_modes], sobolev_ic(cfg)?, 0.0)?;
    let ns = recording_grid(cfg.n_steps, cfg.record_per_decade);
    let window = last_decade_window(cfg.n_steps);
    let stream = NoiseStream::new(cfg.seed, 0, spec.dim());
    let sims = run_filter_norms(&spec, &stream, cfg.n_steps, FilterKind::ThreeDVar, &ns, &cfg.t)?;

    let closed: Vec<Vec<f64>> = cfg
        .t
        .par_iter()
        .map(|&t| {
            let spec_t = spec.with_t(t);
            ns.iter().map(|&n| bias_sq_closed(&spec_t, n)).collect()
        })
        .collect::<Result<_>>()?;

    for ((&t, sim), closed) in cfg.t.iter().zip(&sims).zip(&closed) {
        let predicted = Some(-rate_params(cfg, t)?.effective_bias_rate());
        let sim: Vec<f64> = sim.iter().map(|e| e.e_avg).collect();
        b.curve(t, "bias_sq_sim", &ns, &sim, predicted);
        b.curve(t, "bias_sq_closed", &ns, closed, predicted);
        b.fit(t, "bias_sq_sim", &ns, &sim, window, predicted);
        b.fit(t, "bias_sq_closed", &ns, closed, window, predicted);
        let worst = sim
            .iter()
            .zip(closed)
            .map(|(s, c)| (s - c).abs() / c.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        b.rows.push(ResultRow::point(b.experiment, t, cfg.n_steps, "max_rel_gap:bias_sq_sim", worst));
    }
    Ok(b.finish())
}

/// Averaged 3DVAR from the truth, so the error is pure noise: MC trial means
/// against the closed-form variance for each `t`.
pub fn run_diag_var(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut b = Builder::new(ExperimentKind::DiagVar);
    let zeros = vec![0.0; cfg.n_modes];
    let spec = diffusion_spec(cfg, zeros.clone(), zeros, cfg.gamma)?;
    let ns = recording_grid(cfg.n_steps, cfg.record_per_decade);
    let window = last_decade_window(cfg.n_steps);
    let runs = run_trials(&spec, cfg, FilterKind::ThreeDVar, &ns, &cfg.t)?;

    let oracle: Vec<Vec<f64>> =
        cfg.t.par_iter().map(|&t| var_trajectory(&spec.with_t(t), &ns)).collect::<Result<_>>()?;

    for (ti, (&t, closed)) in cfg.t.iter().zip(&oracle).enumerate() {
        let predicted = Some(-rate_params(cfg, t)?.effective_var_rate());
        let per_trial: Vec<Vec<f64>> = runs.iter().map(|r| r[ti].iter().map(|e| e.e_avg).collect()).collect();
        let mc = mc_series(cfg, "var_mc", t, &ns, &per_trial)?;
        mc_rows(&mut b, t, "var_mc", &ns, &mc, predicted);
        let means: Vec<f64> = mc.iter().map(|p| p.mean).collect();
        b.fit(t, "var_mc", &ns, &means, window, predicted);
        b.curve(t, "var_closed", &ns, closed, predicted);
        b.fit(t, "var_closed", &ns, closed, window, predicted);
        b.coverage(t, "var_mc", "var_closed", &ns, &mc, closed);
    }
    Ok(b.finish())
}

/// Closed-form bias and variance of the plain and averaged scalar Kalman
/// mean at every step, with flags for `avg >= plain`.
///
/// The prior variance is `gamma^2 sigma / alpha` with `a = sigma = 1`. The
/// averaged variance is emitted in both [`AveragedVariance`] forms; only
/// the exact one describes the filter.
pub fn run_kalman_compare(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut b = Builder::new(ExperimentKind::KalmanCompare);
    let spec = ProblemSpec::scalar(1.0, 1.0, cfg.u_truth, cfg.u0, cfg.gamma, cfg.alpha)?;
    let params = ScalarKalman::from_spec(&spec)?;
    let exact = kalman_closed_trajectory(&params, cfg.n_steps, AveragedVariance::Exact);
    let partial = kalman_closed_trajectory(&params, cfg.n_steps, AveragedVariance::PartialSum);
    let at_least = |avg: f64, plain: f64| avg >= plain * (1.0 - INEQUALITY_RTOL);
    let flag = |ok: bool| if ok { 1.0 } else { 0.0 };
    let mut failed: [Vec<u64>; 3] = Default::default();
    for (pair, ps) in exact.iter().zip(&partial) {
        let n = pair.plain.n;
        let (bp, ba) = (pair.plain.bias_sq.sqrt(), pair.averaged.bias_sq.sqrt());
        let (vp, va, vs) = (pair.plain.var, pair.averaged.var, ps.averaged.var);
        let checks = [at_least(ba, bp), at_least(va, vp), at_least(vs, vp)];
        for (list, ok) in failed.iter_mut().zip(checks) {
            if !ok {
                list.push(n);
            }
        }
        for (series, value) in [
            ("bias_plain", bp),
            ("bias_avg", ba),
            ("var_plain", vp),
            ("var_avg", va),
            ("var_avg_partial_sum", vs),
            ("bias_avg_ge_plain", flag(checks[0])),
            ("var_avg_ge_plain", flag(checks[1])),
            ("var_avg_partial_sum_ge_plain", flag(checks[2])),
        ] {
            b.rows.push(ResultRow::point(b.experiment, 0.0, n, series, value));
        }
    }
    for (name, list) in ["bias_avg_ge_plain", "var_avg_ge_plain", "var_avg_partial_sum_ge_plain"].iter().zip(&failed) {
        if let (Some(first), Some(last)) = (list.first(), list.last()) {
            b.notes.push(format!("{name} fails at {} steps, n in [{first}, {last}]", list.len()));
        }
    }
    Ok(b.finish())
}

/// Optimal spectral-cutoff risk from `n` averaged observations, with the
/// cutoff level and its bias/variance split, for each `t`.
pub fn run_batch_minimax(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut b = Builder::new(ExperimentKind::BatchMinimax);
    let spec = diffusion_spec(cfg, sobolev_ic(cfg)?, vec![0.0; cfg.n_modes], cfg.gamma)?;
    let ns = recording_grid(cfg.n_steps, cfg.record_per_decade);
    let window = ((cfg.n_steps as f64 / 1e4).max(1.0), cfg.n_steps as f64);
    for &t in &cfg.t {
        let (exponent, log_flag) = rate_params(cfg, t)?.batch_rate_exponent();
        let predicted = Some(-exponent);
        let profile = BatchRiskProfile::new(&spec.with_t(t))?;
        let opt = ns.iter().map(|&n| profile.optimal(n)).collect::<Result<Vec<_>>>()?;
        let risk: Vec<f64> = opt.iter().map(|o| o.report.mse).collect();
        let cut: Vec<f64> = opt.iter().map(|o| o.alpha_cut).collect();
        let bias: Vec<f64> = opt.iter().map(|o| o.report.bias_sq).collect();
        let var: Vec<f64> = opt.iter().map(|o| o.report.var).collect();
        let kept: Vec<f64> = opt.iter().map(|o| o.modes_kept as f64).collect();
        b.curve(t, "risk_opt", &ns, &risk, predicted);
        b.curve(t, "alpha_cut_opt", &ns, &cut, None);
        b.curve(t, "bias_sq_opt", &ns, &bias, None);
        b.curve(t, "var_opt", &ns, &var, None);
        b.curve(t, "modes_kept_opt", &ns, &kept, None);
        b.fit(t, "risk_opt", &ns, &risk, window, predicted);
        b.rows.push(ResultRow::point(b.experiment, t, cfg.n_steps, "log_boundary", f64::from(u8::from(log_flag))));
        if log_flag {
            b.notes.push(format!("t = {t}: logarithmic boundary case, the risk decays like (log n / n)^{exponent}"));
        }
    }
    Ok(b.finish())
}

/// Predicted exponents and tuning values for each `t`, one row per quantity
/// at `n = n_steps`.
pub fn run_rates_table(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut b = Builder::new(ExperimentKind::RatesTable);
    let n = cfg.n_steps;
    for &t in &cfg.t {
        let r = rate_params(cfg, t)?;
        let (batch, log_flag) = r.batch_rate_exponent();
        let g = r.general();
        let mut push = |series: &str, value: f64| b.rows.push(ResultRow::point(b.experiment, t, n, series, value));
        push("omega", r.omega());
        push("tau_bar_b", r.tau_bar_b());
        push("tau_bar_v", r.tau_bar_v());
        push("bias_rate", r.effective_bias_rate());
        push("var_rate", r.effective_var_rate());
        push("batch_exponent", batch);
        push("batch_log_boundary", f64::from(u8::from(log_flag)));
        push("general_bias_exponent", g.bias_exponent());
        push("kalman_minimax_reference", r.kalman_minimax_reference());
        push("threedvar_minimax_reference", r.threedvar_minimax_reference());
        match (r.minimax_threedvar_exponent(cfg.theta), r.minimax_alpha(cfg.theta, n)) {
            (Ok(exponent), alpha) => {
                push("minimax_threedvar_exponent", exponent);
                if let Ok(alpha) = alpha {
                    push("minimax_alpha", alpha);
                }
            }
            (Err(Error::RegimeNotCovered(msg)), _) => b.notes.push(format!("t = {t}: regime not covered: {msg}")),
            (Err(e), _) => return Err(e),
        }
    }
    Ok(b.finish())
}

fn dispatch(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    match cfg.experiment {
        ExperimentKind::Scalar => run_scalar_experiment(cfg),
        ExperimentKind::DiagBias => run_diag_bias(cfg),
        ExperimentKind::DiagVar => run_diag_var(cfg),
        ExperimentKind::KalmanCompare => run_kalman_compare(cfg),
        ExperimentKind::BatchMinimax => run_batch_minimax(cfg),
        ExperimentKind::RatesTable => run_rates_table(cfg),
    }
}

/// Validates `cfg` and runs its experiment, on a dedicated pool when
/// `cfg.threads` is set. The output does not depend on the thread count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    match cfg.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| dispatch(cfg)),
        None => dispatch(cfg),
    }
}
