use avgfilt::filters::recording_grid;
use avgfilt::model::build_diffusion_spectrum;
use avgfilt::oracle::var_trajectory;
use avgfilt::{run_filter, FilterKind, NoiseStream, OperatorRep, ProblemSpec};

pub fn run_example() -> avgfilt::Result<()> {
    let n_modes = 256;
    let op = OperatorRep::Diagonal(build_diffusion_spectrum(n_modes)?);
    let zeros = vec![0.0; n_modes];
    let spec = ProblemSpec::new(op, zeros.clone(), zeros, 0.1, 1e-3, 1.0)?;

    let ns = recording_grid(1000, 2);
    let trials = 40;
    let mut mc = vec![0.0; ns.len()];
    for trial in 0..trials {
        let stream = NoiseStream::new(7, trial, n_modes);
        for (i, r) in run_filter(&spec, &stream, 1000, FilterKind::ThreeDVar, &ns)?.iter().enumerate() {
            mc[i] += r.e_avg / trials as f64;
        }
    }

    let exact = var_trajectory(&spec, &ns)?;
    println!("{:>5} {:>12} {:>12} {:>7}", "n", "var mc", "var exact", "ratio");
    for ((n, m), e) in ns.iter().zip(&mc).zip(&exact) {
        println!("{n:>5} {m:>12.4e} {e:>12.4e} {:>7.3}", m / e);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> avgfilt::Result<()> {
    run_example()
}
