use avgfilt::filters::recording_grid;
use avgfilt::model::{build_diffusion_spectrum, build_sobolev_ic, SobolevICParams};
use avgfilt::oracle::bias_sq_trajectory;
use avgfilt::rates::{fit_slope, DiagonalRateParams};
use avgfilt::{OperatorRep, ProblemSpec};

pub fn run_example() -> avgfilt::Result<()> {
    let n_modes = 1024;
    let spectrum = build_diffusion_spectrum(n_modes)?;
    let u0 = build_sobolev_ic(SobolevICParams { beta: 1.0, delta: 0.01, n_modes })?;
    let ns = recording_grid(10_000, 20);

    for t in [0.0, 0.5, 1.0, 2.0] {
        let spec = ProblemSpec::new(
            OperatorRep::Diagonal(spectrum.clone()),
            vec![0.0; n_modes],
            u0.clone(),
            0.0,
            1e-3,
            t,
        )?;
        let bias = bias_sq_trajectory(&spec, &ns)?;
        let pts: Vec<(f64, f64)> = ns.iter().map(|&n| n as f64).zip(bias).collect();
        let fit = fit_slope(&pts, (1e3, 1e4))?;
        let predicted = -DiagonalRateParams::new(1.5, 2.0, 1.0, t)?.effective_bias_rate();
        println!("t = {t}: fitted slope {:+.4}, predicted {predicted:+.4}", fit.fitted_slope);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> avgfilt::Result<()> {
    run_example()
}
