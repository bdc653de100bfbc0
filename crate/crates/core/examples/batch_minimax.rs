use avgfilt::model::{build_diffusion_spectrum, build_sobolev_ic, SobolevICParams};
use avgfilt::oracle::BatchRiskProfile;
use avgfilt::rates::{fit_slope, DiagonalRateParams};
use avgfilt::{OperatorRep, ProblemSpec};

pub fn run_example() -> avgfilt::Result<()> {
    let n_modes = 4096;
    let op = OperatorRep::Diagonal(build_diffusion_spectrum(n_modes)?);
    let truth = build_sobolev_ic(SobolevICParams { beta: 1.0, delta: 0.01, n_modes })?;
    let spec = ProblemSpec::new(op, truth, vec![0.0; n_modes], 0.1, 1.0, 0.0)?;
    let profile = BatchRiskProfile::new(&spec)?;

    let mut pts = Vec::new();
    for e in 0..=8 {
        let n = 10u64.pow(e);
        let best = profile.optimal(n)?;
        println!(
            "n = 1e{e}: risk {:.4e}, cutoff {:.3e}, modes kept {}",
            best.report.mse, best.alpha_cut, best.modes_kept
        );
        pts.push((n as f64, best.report.mse));
    }
    let fit = fit_slope(&pts, (1e4, 1e8))?;
    let (exponent, log_boundary) = DiagonalRateParams::new(1.5, 2.0, 1.0, 0.0)?.batch_rate_exponent();
    println!("fitted {:+.4}, predicted {:+.4}, log boundary {log_boundary}", fit.fitted_slope, -exponent);
    Ok(())
}

#[allow(dead_code)]
fn main() -> avgfilt::Result<()> {
    run_example()
}
