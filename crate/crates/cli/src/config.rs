//! Run configuration: one TOML file with a flat key set plus a `[potential]` table.
//!
//! ```toml
//! experiment = "simulate"
//! times = [10.0, 20.0, 40.0]
//! radii = [5, 10]
//!
//! [potential]
//! family = "fibonacci"
//! lambda = 8.0
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use qdyn_core::dynamics::Method;
use qdyn_core::potentials::{Frequency, PotentialSpec};
use serde::{Deserialize, Serialize};

/// Experiment verbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Time-averaged amplitude profiles, moments and outside probabilities.
    Simulate,
    /// Growth exponents of the moments over a time grid.
    Exponents,
    /// Fibonacci trace-map orbits at sampled complex energies.
    Tracemap,
    /// Band structure of the Fibonacci level sets.
    Bands,
    /// Outside-probability bounds from transfer-matrix norms.
    VerifyBounds,
    /// Continued fractions, Lyapunov sandwich, `A_n` sets and `I_r` decay.
    Amo,
    /// Norm comparison of a potential and a perturbation of it.
    Stability,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Exponents => "exponents",
            Experiment::Tracemap => "tracemap",
            Experiment::Bands => "bands",
            Experiment::VerifyBounds => "verify-bounds",
            Experiment::Amo => "amo",
            Experiment::Stability => "stability",
        }
    }
}

/// A site/value pair of the `perturbation` list.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteValue {
    pub site: i64,
    pub value: f64,
}

fn default_exterior_nodes() -> usize {
    400
}
fn default_method() -> Method {
    Method::Parseval
}
fn default_moments() -> Vec<f64> {
    vec![2.0]
}
fn default_lambda() -> f64 {
    8.0
}
fn default_delta() -> f64 {
    0.1
}
fn default_nu() -> f64 {
    0.05
}
fn default_k_min() -> usize {
    1
}
fn default_k_max() -> usize {
    10
}
fn default_samples() -> usize {
    20
}
fn default_im_max() -> f64 {
    1.0
}
fn default_grid_points() -> usize {
    10_000
}
fn default_an_blocks() -> Vec<usize> {
    vec![50, 100]
}
fn default_lyapunov_steps() -> i64 {
    1000
}
fn default_lyapunov_samples() -> usize {
    100
}
fn default_z_im() -> f64 {
    0.1
}
fn default_alpha() -> f64 {
    1.0
}
fn default_eps() -> Vec<f64> {
    vec![0.5, 0.1, 0.02]
}
fn default_energies() -> usize {
    64
}
fn default_min_r2() -> f64 {
    0.9
}
fn default_true() -> bool {
    true
}
fn default_threads() -> usize {
    1
}

/// Every key of the configuration file. Keys not used by an experiment are ignored by it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Must match the verb when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialSpec>,
    /// Time grid `T`.
    #[serde(default)]
    pub times: Vec<f64>,
    /// Radii `N` for outside probabilities (one per time for `verify-bounds`).
    #[serde(default)]
    pub radii: Vec<i64>,
    /// `verify-bounds`: take `N(T)` from the trace-map schedule (Fibonacci only).
    #[serde(default)]
    pub schedule: bool,
    /// Half-width `L` of the finite box; default `max(⌈8T⌉, N + 16)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_half_width: Option<usize>,
    /// Energy quadrature step; default `min(1/(4T), 0.01)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_step: Option<f64>,
    #[serde(default = "default_exterior_nodes")]
    pub exterior_nodes: usize,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Moment orders `p`.
    #[serde(default = "default_moments")]
    pub moments: Vec<f64>,
    /// Expected range of the fitted `β(p)` (checked when present).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_range: Option<[f64; 2]>,
    /// Trace-map coupling.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_k_min")]
    pub k_min: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    /// Number of random energies.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Largest imaginary part of random energies.
    #[serde(default = "default_im_max")]
    pub im_max: f64,
    /// Points of the real grid used by set-inclusion checks.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// `ω` grid size for `A_n`; default `16nd` for the largest block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_points: Option<usize>,
    /// Block lengths `n` of the `A_n` sets.
    #[serde(default = "default_an_blocks")]
    pub an_blocks: Vec<usize>,
    #[serde(default = "default_lyapunov_steps")]
    pub lyapunov_steps: i64,
    #[serde(default = "default_lyapunov_samples")]
    pub lyapunov_samples: usize,
    /// Energy `z = z_re + i·z_im` of the growth-site scan.
    #[serde(default)]
    pub z_re: f64,
    #[serde(default = "default_z_im")]
    pub z_im: f64,
    /// Exponent `α` of `T_k = (C₂q_k)^{1/α}`.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Smallest accepted `R²` of the `I_r` decay fit.
    #[serde(default = "default_min_r2")]
    pub min_r2: f64,
    /// Regularization levels `ε`.
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    /// Number of energies on `[−K, K]`.
    #[serde(default = "default_energies")]
    pub energies: usize,
    /// Sites replaced in the second potential of `stability`.
    #[serde(default)]
    pub perturbation: Vec<SiteValue>,
    /// `verify-bounds`: also require decreasing outside probabilities.
    #[serde(default = "default_true")]
    pub trend_checks: bool,
    /// Worker threads.
    #[serde(default = "default_threads")]
    pub threads: usize,
    /// Seed of the random energy sampler.
    #[serde(default)]
    pub seed: u64,
    /// Output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("all keys have defaults")
    }
}

/// A configuration problem tied to one key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // a single line, whatever the message contains
        let message = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "config error: key `{}`: {}", self.key, message)
    }
}

impl std::error::Error for ConfigError {}

fn check(ok: bool, key: &str, message: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::new(key, message()))
    }
}

/// The key whose value spans `offset` in `source`: the `key = …` on that line,
/// prefixed with the enclosing `[table]` header.
fn key_at(source: &str, offset: usize) -> String {
    let offset = offset.min(source.len());
    let line_start = source[..offset].rfind('\n').map_or(0, |i| i + 1);
    let line_end = source[offset..].find('\n').map_or(source.len(), |i| offset + i);
    let line = source[line_start..line_end].trim();
    if line.starts_with('[') {
        return line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
    }
    let key = line.split('=').next().unwrap_or("").trim().trim_matches('"').to_string();
    let table = source[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    match table {
        Some(t) if !key.is_empty() => format!("{t}.{key}"),
        Some(t) => t,
        None => key,
    }
}

impl RunConfig {
    /// Parses TOML text; errors name the offending key.
    pub fn from_toml(source: &str) -> Result<Self, ConfigError> {
        toml::from_str(source).map_err(|e| {
            let message = e.message().to_string();
            let key = if let Some(field) = unknown_field(&message) {
                field
            } else if let Some(field) = missing_field(&message) {
                field
            } else {
                e.span().map(|s| key_at(source, s.start)).unwrap_or_default()
            };
            let key = if key.is_empty() { "<document>".to_string() } else { key };
            ConfigError::new(key, message)
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    fn potential(&self) -> Result<&PotentialSpec, ConfigError> {
        self.potential
            .as_ref()
            .ok_or_else(|| ConfigError::new("potential", "required by this experiment"))
    }

    /// Theta of a trigonometric family.
    pub fn trig_theta(&self) -> Result<&Frequency, ConfigError> {
        match self.potential()? {
            PotentialSpec::QuasiPeriodicTrig { theta, .. } => Ok(theta),
            _ => Err(ConfigError::new("potential.family", "amo needs family = \"quasi_periodic_trig\"")),
        }
    }

    /// Fibonacci coupling of the configured potential.
    pub fn fibonacci_lambda(&self) -> Result<f64, ConfigError> {
        match self.potential()? {
            PotentialSpec::Fibonacci { lambda } => Ok(*lambda),
            _ => Err(ConfigError::new("schedule", "the schedule needs family = \"fibonacci\"")),
        }
    }

    fn check_times(&self, min_len: usize) -> Result<(), ConfigError> {
        check(self.times.len() >= min_len, "times", || {
            format!("need at least {min_len} value(s), got {}", self.times.len())
        })?;
        for t in &self.times {
            check(t.is_finite() && *t >= 1.0, "times", || format!("every T must be finite and ≥ 1, got {t}"))?;
        }
        check(self.times.windows(2).all(|w| w[1] > w[0]), "times", || {
            "must be strictly increasing".to_string()
        })
    }

    fn check_dynamics(&self) -> Result<(), ConfigError> {
        self.potential()?
            .compile()
            .map_err(|e| ConfigError::new("potential", e.to_string()))?;
        let t_max = self.times.iter().copied().fold(0.0, f64::max);
        if let Some(step) = self.energy_step {
            check(step > 0.0 && step <= 0.25 / t_max, "energy_step", || {
                format!("must lie in (0, 1/(4T)] = (0, {}] for the largest T", 0.25 / t_max)
            })?;
        }
        check(self.exterior_nodes > 0, "exterior_nodes", || "must be positive".into())?;
        if let Some(l) = self.box_half_width {
            check(l as f64 >= 8.0 * t_max, "box_half_width", || {
                format!("must be at least 8T = {} for the largest T", 8.0 * t_max)
            })?;
            let r = self.radii.iter().map(|r| r.unsigned_abs()).max().unwrap_or(0);
            check(l as u64 > r, "box_half_width", || format!("must exceed the largest radius {r}"))?;
        }
        Ok(())
    }

    fn check_k_range(&self, lo: usize, hi: usize) -> Result<(), ConfigError> {
        check(self.k_min >= lo, "k_min", || format!("must be at least {lo}"))?;
        check(self.k_max <= hi, "k_max", || format!("must be at most {hi}"))?;
        check(self.k_min <= self.k_max, "k_min", || "must not exceed k_max".into())
    }

    fn check_lambda_delta(&self) -> Result<(), ConfigError> {
        check(self.lambda.is_finite() && self.lambda > 0.0, "lambda", || "must be positive".into())?;
        check(self.delta.is_finite() && self.delta >= 0.0, "delta", || "must be nonnegative".into())
    }

    fn check_eps(&self) -> Result<(), ConfigError> {
        check(!self.eps.is_empty(), "eps", || "need at least one level".into())?;
        check(self.eps.iter().all(|e| *e > 0.0 && *e <= 1.0), "eps", || "levels must lie in (0, 1]".into())?;
        check(self.energies > 0, "energies", || "must be positive".into())
    }

    /// Validates every grid the experiment will use; nothing is computed before this passes.
    pub fn validate(&self, experiment: Experiment) -> Result<(), ConfigError> {
        if let Some(declared) = self.experiment {
            check(declared == experiment, "experiment", || {
                format!("file declares `{}` but the verb is `{}`", declared.name(), experiment.name())
            })?;
        }
        check(self.threads >= 1, "threads", || "must be at least 1".into())?;
        match experiment {
            Experiment::Simulate | Experiment::Exponents => {
                self.check_times(if experiment == Experiment::Exponents { 2 } else { 1 })?;
                self.check_dynamics()?;
                check(self.moments.iter().all(|p| *p > 0.0), "moments", || "orders must be positive".into())?;
                if let Some([lo, hi]) = self.beta_range {
                    check(lo <= hi, "beta_range", || "lower end exceeds upper end".into())?;
                }
            }
            Experiment::Tracemap => {
                self.check_lambda_delta()?;
                check(self.k_max >= 1 && self.k_max <= 40, "k_max", || "must lie in 1..=40".into())?;
                check(self.samples >= 1, "samples", || "must be at least 1".into())?;
                check(self.im_max.is_finite() && self.im_max >= 0.0, "im_max", || "must be nonnegative".into())?;
            }
            Experiment::Bands => {
                self.check_lambda_delta()?;
                self.check_k_range(1, 16)?;
                check(self.grid_points >= 2, "grid_points", || "must be at least 2".into())?;
            }
            Experiment::VerifyBounds => {
                self.check_times(1)?;
                self.check_dynamics()?;
                if self.schedule {
                    self.fibonacci_lambda()?;
                    check(self.times[0] > 1.0, "times", || "the schedule needs T > 1".into())?;
                } else {
                    check(self.radii.len() == self.times.len(), "radii", || {
                        format!("need one radius per time ({}), got {}", self.times.len(), self.radii.len())
                    })?;
                    check(self.radii.iter().all(|r| *r >= 1), "radii", || "must be at least 1".into())?;
                }
            }
            Experiment::Amo => {
                self.trig_theta()?;
                let potential = self
                    .potential()?
                    .compile()
                    .map_err(|e| ConfigError::new("potential", e.to_string()))?;
                let d = potential.trig_degree().unwrap_or(0);
                check(d >= 1, "potential.poly", || "sampling polynomial must have degree ≥ 1".into())?;
                self.check_k_range(2, 40)?;
                check(self.k_max - self.k_min >= 2, "k_max", || "need at least three levels".into())?;
                check(!self.an_blocks.is_empty() && self.an_blocks.iter().all(|n| *n >= 1), "an_blocks", || {
                    "need block lengths ≥ 1".into()
                })?;
                if let Some(m) = self.omega_points {
                    let need = 16 * d * self.an_blocks.iter().max().unwrap();
                    check(m >= need, "omega_points", || format!("grid step must be ≤ 1/(16nd): need ≥ {need}"))?;
                }
                check(self.lyapunov_steps >= 1, "lyapunov_steps", || "must be at least 1".into())?;
                check(self.lyapunov_samples >= 1, "lyapunov_samples", || "must be at least 1".into())?;
                check(self.z_im > 0.0 && self.z_im <= 1.0, "z_im", || "must lie in (0, 1]".into())?;
                check(self.alpha > 0.0, "alpha", || "must be positive".into())?;
                if let Some(step) = self.energy_step {
                    check(step > 0.0, "energy_step", || "must be positive".into())?;
                }
            }
            Experiment::Stability => {
                self.potential()?
                    .compile()
                    .map_err(|e| ConfigError::new("potential", e.to_string()))?;
                check(!self.perturbation.is_empty(), "perturbation", || "need at least one site".into())?;
                self.check_eps()?;
            }
        }
        Ok(())
    }
}

fn unknown_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest.split('`').next()?.to_string())
}

fn missing_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("missing field `")?;
    Some(rest.split('`').next()?.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let config = RunConfig::from_toml(
            r#"
            experiment = "verify-bounds"
            times = [10.0, 20.0]
            radii = [5, 13]
            perturbation = [{ site = 1, value = 0.0 }]

            [potential]
            family = "quasi_periodic_trig"
            theta = { kind = "golden" }
            omega = { kind = "float", value = 0.0 }
            poly = { cosines = [4.0] }
            "#,
        )
        .unwrap();
        assert_eq!(config.experiment, Some(Experiment::VerifyBounds));
        assert_eq!(config.lambda, 8.0);
        assert_eq!(config.eps, vec![0.5, 0.1, 0.02]);
        let again = RunConfig::from_toml(&config.to_toml()).unwrap();
        assert_eq!(again, config);
        assert_eq!(RunConfig::from_toml(&RunConfig::default().to_toml()).unwrap(), RunConfig::default());
    }

    #[test]
    fn errors_name_the_key() {
        let err = RunConfig::from_toml("tiems = [1.0]").unwrap_err();
        assert_eq!(err.key, "tiems");
        let err = RunConfig::from_toml("lambda = \"eight\"").unwrap_err();
        assert_eq!(err.key, "lambda");
        let err = RunConfig::from_toml("[potential]\nfamily = \"fibonacci\"\nlambda = true\n").unwrap_err();
        assert!(err.key.starts_with("potential"), "{err:?}");
        assert_eq!(err.to_string().lines().count(), 1);

        let mut config = RunConfig {
            potential: Some(PotentialSpec::Free),
            times: vec![10.0],
            energy_step: Some(0.1),
            ..RunConfig::default()
        };
        assert_eq!(config.validate(Experiment::Simulate).unwrap_err().key, "energy_step");
        config.energy_step = None;
        config.experiment = Some(Experiment::Bands);
        assert_eq!(config.validate(Experiment::Simulate).unwrap_err().key, "experiment");
    }
}
