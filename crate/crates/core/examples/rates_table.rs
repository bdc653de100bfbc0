use avgfilt::rates::DiagonalRateParams;

pub fn run_example() -> avgfilt::Result<()> {
    println!("{:>4} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10}", "t", "tau_b", "tau_v", "bias", "var", "batch", "3dvar mm");
    for t in [0.0, 0.5, 1.0, 2.0] {
        let r = DiagonalRateParams::new(1.5, 2.0, 1.0, t)?;
        let (batch, _) = r.batch_rate_exponent();
        let minimax = match r.minimax_threedvar_exponent(1.0) {
            Ok(e) => format!("{e:.4}"),
            Err(_) => "n/a".to_string(),
        };
        println!(
            "{t:>4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {batch:>8.4} {minimax:>10}",
            r.tau_bar_b(),
            r.tau_bar_v(),
            r.effective_bias_rate(),
            r.effective_var_rate(),
        );
    }

    let r = DiagonalRateParams::new(1.5, 2.0, 1.0, 0.0)?;
    println!("alpha for n = 1e4: {:.4e}", r.minimax_alpha(1.0, 10_000)?);
    println!("general bias exponent: {:.4}", r.general().bias_exponent());
    Ok(())
}

#[allow(dead_code)]
fn main() -> avgfilt::Result<()> {
    run_example()
}
