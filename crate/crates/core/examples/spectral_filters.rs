use avgfilt::spectral::QSequence;
use avgfilt::RegFilterParams;

pub fn run_example() -> avgfilt::Result<()> {
    let (n, alpha) = (100, 0.5);
    let f = RegFilterParams::new(n, alpha)?;

    println!("{:>10} {:>14} {:>14}", "lambda", "r_n", "q_n");
    for lambda in [1e-4, 1e-2, 1.0, 1e2] {
        println!("{lambda:>10.0e} {:>14.6e} {:>14.6e}", f.r(lambda)?, f.q(lambda)?);
    }

    // sum_{k<=n} r_k(lambda) = alpha q_n(lambda)
    let lambda = 0.3;
    let mut sum = 0.0;
    for k in 1..=n {
        sum += RegFilterParams::new(k, alpha)?.r(lambda)?;
    }
    println!("sum r_k = {sum:.12}, alpha q_n = {:.12}", alpha * f.q(lambda)?);

    let p = 0.5;
    println!("r bound (p = {p}): {:.6e}", f.r_bound(p, 1.0)?);
    println!("q bound (p = {p}): {:.6e}", f.q_bound(p, 1.0)?);

    let q: Vec<f64> = QSequence::new(alpha, lambda).take(3).collect();
    println!("q_1..q_3 = {q:?}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> avgfilt::Result<()> {
    run_example()
}
