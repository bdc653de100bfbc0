use avgfilt::filters::recording_grid;
use avgfilt::oracle::{averaged_threedvar_closed, plain_threedvar_closed};
use avgfilt::{run_filter, FilterKind, NoiseStream, ProblemSpec};

pub fn run_example() -> avgfilt::Result<()> {
    // y_n = u + eta_n, u = 0.5, gamma = 0.1, alpha = 1
    let spec = ProblemSpec::scalar(1.0, 1.0, 0.5, 0.0, 0.1, 1.0)?;
    let n_steps = 10_000;
    let grid = recording_grid(n_steps, 1);
    let trials = 200;

    let mut plain = vec![0.0; grid.len()];
    let mut avg = vec![0.0; grid.len()];
    for trial in 0..trials {
        let stream = NoiseStream::new(0, trial, 1);
        let rec = run_filter(&spec, &stream, n_steps, FilterKind::ThreeDVar, &grid)?;
        for (i, r) in rec.iter().enumerate() {
            plain[i] += r.e_plain / trials as f64;
            avg[i] += r.e_avg / trials as f64;
        }
    }

    println!("{:>6} {:>12} {:>12} {:>12} {:>12}", "n", "plain mc", "plain exact", "avg mc", "avg exact");
    for (i, &n) in grid.iter().enumerate() {
        let p = plain_threedvar_closed(&spec, n)?;
        let a = averaged_threedvar_closed(&spec, n)?;
        println!("{n:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}", plain[i], p.mse, avg[i], a.mse);
    }
    // gain K = 1/2
    println!("plain 3DVAR floor gamma^2 K^2 = {:.4e}", 0.01 * 0.25);
    Ok(())
}

#[allow(dead_code)]
fn main() -> avgfilt::Result<()> {
    run_example()
}
