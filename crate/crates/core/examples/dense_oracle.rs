use avgfilt::model::DenseOperator;
use avgfilt::oracle::dense_bias_sq_closed;
use avgfilt::{run_filter, FilterKind, NoiseStream, OperatorRep, ProblemSpec};
use nalgebra::DMatrix;

pub fn run_example() -> avgfilt::Result<()> {
    let d = 4;
    let a = DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { 0.2 / (1 + i + j) as f64 });
    let m = DMatrix::from_fn(d, d, |i, j| ((i * 3 + j) % 5) as f64 * 0.1);
    let sigma = &m * m.transpose() + DMatrix::identity(d, d) * 0.5;

    let op = OperatorRep::Dense(DenseOperator::new(a, sigma)?);
    let spec = ProblemSpec::new(op, vec![0.0; d], vec![1.0, -0.5, 0.25, 2.0], 0.0, 0.3, 1.0)?;

    let ns = [1, 10, 100, 1000];
    let stream = NoiseStream::new(0, 0, d);
    let sim = run_filter(&spec, &stream, 1000, FilterKind::ThreeDVar, &ns)?;
    for (n, rec) in ns.iter().zip(&sim) {
        let exact = dense_bias_sq_closed(&spec, *n)?;
        println!("n = {n:>4}: simulated {:.10e}, closed {exact:.10e}", rec.e_avg);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> avgfilt::Result<()> {
    run_example()
}
