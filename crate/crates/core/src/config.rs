//! Experiment configuration: preset defaults, a JSON config file and
//! command-line overrides, applied in that order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable consulted for the seed when neither the config file
/// nor the command line provides one.
pub const SEED_ENV: &str = "AVGFILT_SEED";

/// Default regularization of the diagonal experiments. Mode `i` is resolved
/// once `n >~ alpha / (sigma_i a_i^2)`, so a small value puts the last
/// recorded decade past the transient.
pub const DIAGONAL_ALPHA: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Scalar,
    DiagBias,
    DiagVar,
    KalmanCompare,
    BatchMinimax,
    RatesTable,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Scalar => "scalar",
            ExperimentKind::DiagBias => "diag-bias",
            ExperimentKind::DiagVar => "diag-var",
            ExperimentKind::KalmanCompare => "kalman-compare",
            ExperimentKind::BatchMinimax => "batch-minimax",
            ExperimentKind::RatesTable => "rates-table",
        }
    }

    /// Whether the experiment draws noise and averages over trials.
    pub fn is_monte_carlo(&self) -> bool {
        matches!(self, ExperimentKind::Scalar | ExperimentKind::DiagVar)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Full-size runs.
    #[default]
    Paper,
    /// Smaller diagonal runs for quick checks.
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

macro_rules! kebab_from_str {
    ($ty:ty) => {
        impl std::str::FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                serde_json::from_value(serde_json::Value::String(s.to_owned()))
                    .map_err(|_| Error::Config(format!("unknown {} `{s}`", stringify!($ty))))
            }
        }
    };
}

kebab_from_str!(ExperimentKind);
kebab_from_str!(Preset);
kebab_from_str!(OutputFormat);

/// A single norm index or a list of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TValues {
    One(f64),
    Many(Vec<f64>),
}

impl From<TValues> for Vec<f64> {
    fn from(t: TValues) -> Self {
        match t {
            TValues::One(v) => vec![v],
            TValues::Many(v) => v,
        }
    }
}

/// Optional field values from a config file or the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub experiment: Option<ExperimentKind>,
    pub preset: Option<Preset>,
    #[serde(rename = "N")]
    pub n_modes: Option<usize>,
    pub n_steps: Option<u64>,
    pub trials: Option<u64>,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub t: Option<TValues>,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    pub p: Option<f64>,
    pub theta: Option<f64>,
    pub seed: Option<u64>,
    pub record_per_decade: Option<u32>,
    pub output_path: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub threads: Option<usize>,
    pub bootstrap_resamples: Option<usize>,
    pub confidence: Option<f64>,
    pub kalman_c0: Option<f64>,
    pub u_truth: Option<f64>,
    pub u0: Option<f64>,
}

impl ConfigOverrides {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }
}

/// Fully resolved settings for one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(rename = "N")]
    pub n_modes: usize,
    pub n_steps: u64,
    pub trials: u64,
    pub gamma: f64,
    pub alpha: f64,
    pub t: Vec<f64>,
    pub beta: f64,
    pub delta: f64,
    /// Spectral decay parameters used for the predicted exponents.
    pub epsilon: f64,
    pub p: f64,
    pub theta: f64,
    pub seed: u64,
    pub record_per_decade: u32,
    pub output_path: Option<PathBuf>,
    pub format: OutputFormat,
    pub threads: Option<usize>,
    pub bootstrap_resamples: usize,
    pub confidence: f64,
    /// Prior variance of the Kalman filter in the scalar experiment.
    pub kalman_c0: f64,
    pub u_truth: f64,
    pub u0: f64,
}

impl ExperimentConfig {
    pub fn defaults(experiment: ExperimentKind, preset: Preset) -> Self {
        let mut cfg = Self {
            experiment,
            n_modes: 1,
            n_steps: 10_000,
            trials: 100,
            gamma: 0.1,
            alpha: 1.0,
            t: vec![0.0],
            beta: 1.0,
            delta: 0.01,
            epsilon: 1.5,
            p: 2.0,
            theta: 1.0,
            seed: 0,
            record_per_decade: 30,
            output_path: None,
            format: OutputFormat::Csv,
            threads: None,
            bootstrap_resamples: 10_000,
            confidence: 0.95,
            kalman_c0: 1.0,
            u_truth: 0.5,
            u0: 0.0,
        };
        match experiment {
            ExperimentKind::Scalar | ExperimentKind::KalmanCompare => {}
            ExperimentKind::DiagBias | ExperimentKind::DiagVar | ExperimentKind::RatesTable => {
                cfg.n_modes = 1 << 12;
                cfg.alpha = DIAGONAL_ALPHA;
                cfg.t = vec![0.0, 0.5, 1.0, 2.0];
                if preset == Preset::Desk && experiment != ExperimentKind::RatesTable {
                    cfg.n_modes = 1 << 10;
                    cfg.n_steps = 1_000;
                    cfg.trials = 50;
                }
            }
            ExperimentKind::BatchMinimax => {
                cfg.n_modes = 1 << 12;
                cfg.n_steps = 100_000_000;
                cfg.t = vec![0.0, 0.5, 1.0, 2.0];
            }
        }
        cfg
    }

    /// Resolves `flags > file > env seed > preset defaults`.
    pub fn resolve(
        experiment: ExperimentKind,
        file: Option<ConfigOverrides>,
        flags: ConfigOverrides,
        env_seed: Option<u64>,
    ) -> Result<Self> {
        let file = file.unwrap_or_default();
        let preset = flags.preset.or(file.preset).unwrap_or_default();
        let mut cfg = Self::defaults(experiment, preset);
        if let Some(seed) = env_seed {
            cfg.seed = seed;
        }
        cfg.apply(file);
        cfg.apply(flags);
        cfg.experiment = experiment;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: ConfigOverrides) {
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = o.$field { self.$field = v; } )* };
        }
        take!(n_modes, n_steps, trials, gamma, alpha, beta, delta, epsilon, p, theta, seed);
        take!(record_per_decade, format, bootstrap_resamples, confidence, kalman_c0, u_truth, u0);
        if let Some(t) = o.t {
            self.t = t.into();
        }
        if o.output_path.is_some() {
            self.output_path = o.output_path;
        }
        if o.threads.is_some() {
            self.threads = o.threads;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.experiment.is_monte_carlo() && self.trials < 1 {
            return fail("trials must be at least 1".into());
        }
        if self.n_modes < 1 {
            return fail("N must be at least 1".into());
        }
        if self.n_steps < 10 {
            return fail(format!("n_steps must be at least 10, got {}", self.n_steps));
        }
        if self.t.is_empty() {
            return fail("at least one t value is required".into());
        }
        if let Some(t) = self.t.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
            return fail(format!("t must be nonnegative, got {t}"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return fail(format!("gamma must be nonnegative, got {}", self.gamma));
        }
        if self.experiment == ExperimentKind::Scalar && !(self.gamma > 0.0) {
            return fail("the scalar experiment runs a Kalman filter and needs gamma > 0".into());
        }
        if self.experiment == ExperimentKind::KalmanCompare && !(self.gamma > 0.0) {
            return fail("kalman-compare needs gamma > 0".into());
        }
        for (name, v) in [("alpha", self.alpha), ("delta", self.delta), ("epsilon", self.epsilon), ("p", self.p), ("kalman_c0", self.kalman_c0)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return fail(format!("beta must be nonnegative, got {}", self.beta));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return fail(format!("theta must lie in (0, 1], got {}", self.theta));
        }
        if self.record_per_decade < 1 {
            return fail("record_per_decade must be at least 1".into());
        }
        if self.bootstrap_resamples < 1 {
            return fail("bootstrap_resamples must be at least 1".into());
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return fail(format!("confidence must lie in (0, 1), got {}", self.confidence));
        }
        if self.threads == Some(0) {
            return fail("threads must be at least 1".into());
        }
        if !(self.u_truth.is_finite() && self.u0.is_finite()) {
            return fail("u_truth and u0 must be finite".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_preset_defaults() {
        let s = ExperimentConfig::defaults(ExperimentKind::Scalar, Preset::Paper);
        assert_eq!((s.gamma, s.alpha, s.u_truth, s.u0, s.kalman_c0), (0.1, 1.0, 0.5, 0.0, 1.0));
        assert_eq!((s.trials, s.n_steps), (100, 10_000));
        let d = ExperimentConfig::defaults(ExperimentKind::DiagVar, Preset::Paper);
        assert_eq!((d.n_modes, d.n_steps, d.beta, d.delta, d.alpha), (4096, 10_000, 1.0, 0.01, DIAGONAL_ALPHA));
        assert_eq!(d.t, vec![0.0, 0.5, 1.0, 2.0]);
        let desk = ExperimentConfig::defaults(ExperimentKind::DiagVar, Preset::Desk);
        assert_eq!((desk.n_modes, desk.n_steps, desk.trials), (1024, 1000, 50));
    }

    #[test]
    fn precedence() {
        let file = ConfigOverrides::from_json(r#"{"gamma": 0.2, "N": 64, "t": 1.5, "seed": 9, "preset": "desk"}"#).unwrap();
        let flags = ConfigOverrides { gamma: Some(0.3), ..Default::default() };
        let cfg = ExperimentConfig::resolve(ExperimentKind::DiagVar, Some(file), flags, Some(4)).unwrap();
        assert_eq!(cfg.gamma, 0.3);
        assert_eq!(cfg.n_modes, 64);
        assert_eq!(cfg.t, vec![1.5]);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.n_steps, 1000);

        let cfg = ExperimentConfig::resolve(ExperimentKind::Scalar, None, Default::default(), Some(4)).unwrap();
        assert_eq!(cfg.seed, 4);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = |o: ConfigOverrides, kind| ExperimentConfig::resolve(kind, None, o, None).is_err();
        assert!(bad(ConfigOverrides { trials: Some(0), ..Default::default() }, ExperimentKind::DiagVar));
        assert!(bad(ConfigOverrides { t: Some(TValues::One(-1.0)), ..Default::default() }, ExperimentKind::DiagBias));
        assert!(bad(ConfigOverrides { n_modes: Some(0), ..Default::default() }, ExperimentKind::DiagBias));
        assert!(bad(ConfigOverrides { n_steps: Some(9), ..Default::default() }, ExperimentKind::Scalar));
        assert!(bad(ConfigOverrides { gamma: Some(0.0), ..Default::default() }, ExperimentKind::Scalar));
        assert!(ConfigOverrides::from_json(r#"{"gama": 1}"#).is_err());
    }
}
