use avgfilt::oracle::{kalman_closed_trajectory, AveragedVariance, ScalarKalman};
use avgfilt::ProblemSpec;

pub fn run_example() -> avgfilt::Result<()> {
    let spec = ProblemSpec::scalar(1.0, 1.0, 0.5, 0.0, 0.1, 1.0)?;
    let params = ScalarKalman::from_spec(&spec)?;

    let exact = kalman_closed_trajectory(&params, 1000, AveragedVariance::Exact);
    let partial = kalman_closed_trajectory(&params, 1000, AveragedVariance::PartialSum);

    println!("{:>5} {:>12} {:>12} {:>12} {:>12}", "n", "bias2 plain", "var plain", "var avg", "partial sum");
    for n in [1usize, 2, 3, 4, 5, 10, 100, 1000] {
        let (e, p) = (exact[n - 1], partial[n - 1]);
        println!(
            "{n:>5} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
            e.plain.bias_sq, e.plain.var, e.averaged.var, p.averaged.var
        );
    }
    let last = exact[999];
    println!("averaged / plain variance at n = 1000: {:.3}", last.averaged.var / last.plain.var);
    Ok(())
}

#[allow(dead_code)]
fn main() -> avgfilt::Result<()> {
    run_example()
}
