use avgfilt::config::ConfigOverrides;
use avgfilt::output::{emit_results, gnuplot_script};
use avgfilt::{run_experiment, ExperimentConfig, ExperimentKind, OutputFormat, Preset, ResultTable};

pub fn run_example() -> avgfilt::Result<()> {
    let file = ConfigOverrides::from_json(r#"{ "n_steps": 1000, "trials": 20, "seed": 3 }"#)?;
    let flags = ConfigOverrides { preset: Some(Preset::Desk), ..Default::default() };
    let cfg = ExperimentConfig::resolve(ExperimentKind::Scalar, Some(file), flags, None)?;

    let out = run_experiment(&cfg)?;
    for note in &out.notes {
        println!("note: {note}");
    }
    if let Some(fit) = out.fit(0.0, "3dvar_avg_mse") {
        println!("averaged 3DVAR slope {:+.3}", fit.fitted_slope);
    }

    let dir = std::env::temp_dir().join("avgfilt-example");
    std::fs::create_dir_all(&dir).map_err(|source| avgfilt::Error::Io { path: dir.clone(), source })?;
    let csv = dir.join("scalar.csv");
    emit_results(&out.table, &csv, OutputFormat::Csv)?;
    let back = ResultTable::from_csv(&std::fs::read_to_string(&csv).unwrap_or_default())?;
    println!("{} rows written to {}", back.rows.len(), csv.display());
    println!("{}", gnuplot_script(&back, &csv.to_string_lossy()).lines().next().unwrap_or(""));
    Ok(())
}

#[allow(dead_code)]
fn main() -> avgfilt::Result<()> {
    run_example()
}
