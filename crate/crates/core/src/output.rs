//! Result tables and their CSV / JSON / gnuplot renderings.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::OutputFormat;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "experiment,t,n,series,value,ci_lo,ci_hi,predicted_exponent";

/// One point of one emitted curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub t: f64,
    pub n: u64,
    pub series: String,
    pub value: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub predicted_exponent: Option<f64>,
}

impl ResultRow {
    pub fn point(experiment: &str, t: f64, n: u64, series: &str, value: f64) -> Self {
        Self {
            experiment: experiment.to_owned(),
            t,
            n,
            series: series.to_owned(),
            value,
            ci_lo: None,
            ci_hi: None,
            predicted_exponent: None,
        }
    }

    pub fn with_ci(mut self, lo: f64, hi: f64) -> Self {
        self.ci_lo = Some(lo);
        self.ci_hi = Some(hi);
        self
    }

    pub fn with_prediction(mut self, exponent: Option<f64>) -> Self {
        self.predicted_exponent = exponent;
        self
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.experiment
            .cmp(&other.experiment)
            .then(self.t.total_cmp(&other.t))
            .then(self.series.cmp(&other.series))
            .then(self.n.cmp(&other.n))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn new(mut rows: Vec<ResultRow>) -> Self {
        rows.sort_by(ResultRow::canonical_cmp);
        Self { rows }
    }

    /// Rows of one curve, ordered by `n`.
    pub fn series(&self, t: f64, name: &str) -> Vec<&ResultRow> {
        self.rows.iter().filter(|r| r.t == t && r.series == name).collect()
    }

    /// `(n, value)` pairs of one curve.
    pub fn points(&self, t: f64, name: &str) -> Vec<(f64, f64)> {
        self.series(t, name).iter().map(|r| (r.n as f64, r.value)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                csv_field(&r.experiment),
                fmt_num(r.t),
                r.n,
                csv_field(&r.series),
                fmt_num(r.value),
                fmt_opt(r.ci_lo),
                fmt_opt(r.ci_hi),
                fmt_opt(r.predicted_exponent),
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        if self.rows.is_empty() {
            return "[]\n".to_owned();
        }
        let json_opt = |v: Option<f64>| v.map_or_else(|| "null".to_owned(), fmt_num);
        let mut out = String::from("[\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(
                out,
                "  {{\"experiment\":{},\"t\":{},\"n\":{},\"series\":{},\"value\":{},\"ci_lo\":{},\"ci_hi\":{},\"predicted_exponent\":{}}}",
                json_string(&r.experiment),
                fmt_num(r.t),
                r.n,
                json_string(&r.series),
                fmt_num(r.value),
                json_opt(r.ci_lo),
                json_opt(r.ci_hi),
                json_opt(r.predicted_exponent),
            );
            out.push_str(if i + 1 < self.rows.len() { ",\n" } else { "\n" });
        }
        out.push_str("]\n");
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rows = serde_json::from_str(text).map_err(|e| Error::Config(format!("result JSON: {e}")))?;
        Ok(Self { rows })
    }

    /// Parses CSV written by [`ResultTable::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Config("result CSV: unexpected header".into()));
        }
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Config(format!("result CSV: bad number `{s}`"))) };
        let opt = |s: &str| -> Result<Option<f64>> { if s.is_empty() { Ok(None) } else { num(s).map(Some) } };
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::Config(format!("result CSV: expected 8 fields in `{line}`")));
            }
            rows.push(ResultRow {
                experiment: f[0].to_owned(),
                t: num(f[1])?,
                n: f[2].parse().map_err(|_| Error::Config(format!("result CSV: bad step `{}`", f[2])))?,
                series: f[3].to_owned(),
                value: num(f[4])?,
                ci_lo: opt(f[5])?,
                ci_hi: opt(f[6])?,
                predicted_exponent: opt(f[7])?,
            });
        }
        Ok(Self { rows })
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => self.to_json(),
        }
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// Writes `table` to `path`.
pub fn emit_results(table: &ResultTable, path: &Path, format: OutputFormat) -> Result<()> {
    std::fs::write(path, table.render(format)).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Gnuplot script drawing every curve of a CSV result file on log-log axes,
/// one plot per `(experiment, t)` pair.
pub fn gnuplot_script(table: &ResultTable, csv_path: &str) -> String {
    let mut panels: Vec<(String, f64, Vec<String>)> = Vec::new();
    for r in &table.rows {
        if r.series.contains(':') {
            continue;
        }
        let same_panel = panels.last().is_some_and(|(e, t, _)| *e == r.experiment && *t == r.t);
        if !same_panel {
            panels.push((r.experiment.clone(), r.t, Vec::new()));
        }
        let series = &mut panels.last_mut().expect("pushed above").2;
        if !series.contains(&r.series) {
            series.push(r.series.clone());
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "# generated by avgfilt plot from {csv_path}");
    out.push_str("set datafile separator ','\nset logscale xy\nset key outside right\nset xlabel 'n'\n");
    out.push_str("set terminal pngcairo size 900,600\n");
    for (i, (experiment, t, series)) in panels.iter().enumerate() {
        let _ = writeln!(out, "\nset output '{experiment}_{i}.png'");
        let _ = writeln!(out, "set title '{experiment}, t = {t}'");
        let clauses: Vec<String> = series
            .iter()
            .map(|s| {
                format!(
                    "\"< awk -F, '$1==\\\"{experiment}\\\" && $2+0=={t} && $4==\\\"{s}\\\"' {csv_path}\" using 3:5 with lines title '{s}'"
                )
            })
            .collect();
        let _ = writeln!(out, "plot {}", clauses.join(", \\\n     "));
    }
    out
}
