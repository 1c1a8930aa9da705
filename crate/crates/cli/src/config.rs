//! The JSON run configuration.
//!
//! Precedence, lowest first: built-in defaults, the config file, each
//! `--override key=value` in order, then `--seed` and `--out`.

use std::fmt;
use std::path::PathBuf;

use dnls_core::acceptance::AcceptanceConfig;
use dnls_core::evolution::{EvolutionConfig, MonitorSet};
use dnls_core::ground_state::WeinsteinOptions;
use dnls_core::spectral::GridSpec;
use dnls_core::threshold::{DOptions, ThresholdOptions};
use dnls_core::virial::WeightKind;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::init::InitDescriptor;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    GroundState,
    ThresholdCurve,
    Evolve,
    Virial,
    Verify,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Command::GroundState => "ground-state",
            Command::ThresholdCurve => "threshold-curve",
            Command::Evolve => "evolve",
            Command::Virial => "virial",
            Command::Verify => "verify",
        };
        f.write_str(s)
    }
}

fn minus_one() -> f64 {
    -1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default = "minus_one")]
    pub lambda1: f64,
    #[serde(default)]
    pub lambda2: f64,
    #[serde(default)]
    pub ground_state: GroundStateSection,
    #[serde(default)]
    pub threshold: ThresholdSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evolution: Option<EvolutionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitDescriptor>,
    #[serde(default)]
    pub virial: VirialSection,
    #[serde(default)]
    pub verify: VerifySection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundStateSection {
    pub alpha: f64,
    pub options: WeinsteinOptions,
    /// Random perturbations tried by the local-minimum probe.
    pub probe_trials: usize,
}

impl Default for GroundStateSection {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            options: WeinsteinOptions::default(),
            probe_trials: 10,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSection {
    /// `dir/stem` of a saved `Q_1`; computed on `grid` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_state_file: Option<PathBuf>,
    pub options: ThresholdOptions,
    /// Masses, as multiples of `M(Q_1)`, at which to evaluate `d(m)`.
    pub d_factors: Vec<f64>,
    pub d_options: DOptions,
}

/// The time-stepping section; `dt` and `t_final` have no defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSection {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_stride")]
    pub output_stride: usize,
    #[serde(default)]
    pub monitors: MonitorSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_stride: Option<usize>,
    #[serde(default = "default_trusted_radius")]
    pub trusted_radius: f64,
    #[serde(default = "default_trusted_outer_mass")]
    pub trusted_outer_mass: f64,
}

fn default_stride() -> usize {
    EvolutionConfig::default().output_stride
}

fn default_trusted_radius() -> f64 {
    EvolutionConfig::default().trusted_radius
}

fn default_trusted_outer_mass() -> f64 {
    EvolutionConfig::default().trusted_outer_mass
}

impl EvolutionSection {
    pub fn to_config(&self) -> EvolutionConfig {
        EvolutionConfig {
            dt: self.dt,
            t_final: self.t_final,
            output_stride: self.output_stride,
            monitors: self.monitors,
            snapshot_stride: self.snapshot_stride,
            trusted_radius: self.trusted_radius,
            trusted_outer_mass: self.trusted_outer_mass,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VirialSection {
    pub weight: WeightKind,
    /// `eta` of the I-positivity monitor as a fraction of `I(u0)`.
    pub eta_fraction: f64,
}

impl Default for VirialSection {
    fn default() -> Self {
        Self {
            weight: WeightKind::Quadratic,
            eta_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub acceptance: AcceptanceConfig,
    /// Criterion id fragments to run; all criteria when empty.
    pub only: Vec<String>,
}

fn config_err(msg: impl fmt::Display) -> CliError {
    CliError::Config(msg.to_string())
}

/// Sets `path` (dot separated, numeric segments index arrays) in `doc`.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| config_err(format!("override {spec:?} is not of the form key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(config_err(format!("override {spec:?} has an empty key segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let segments: Vec<&str> = key.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                map.entry(seg.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| config_err(format!("override {key}: segment {seg:?} indexes an array")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| config_err(format!("override {key}: index {idx} out of range ({len} items)")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Null => {
                *cur = Value::Object(Default::default());
                let Value::Object(map) = cur else { unreachable!() };
                if last {
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                map.entry(seg.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            _ => return Err(config_err(format!("override {key}: {seg:?} is below a scalar"))),
        };
    }
    Ok(())
}

fn path_error<E: fmt::Display>(e: serde_path_to_error::Error<E>) -> CliError {
    let path = e.path().to_string();
    if path == "." || path.is_empty() {
        config_err(e.inner())
    } else {
        config_err(format!("{path}: {}", e.inner()))
    }
}

/// Parses a config document and applies the overrides. Errors name the
/// offending field; without overrides they also carry line and column.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
    if overrides.is_empty() {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg = serde_path_to_error::deserialize(de).map_err(path_error)?;
        return Ok(cfg);
    }
    let mut doc: Value = serde_json::from_str(text).map_err(config_err)?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    serde_path_to_error::deserialize(doc).map_err(path_error)
}

fn check(ok: bool, field: &str, msg: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(config_err(format!("{field}: {msg}")))
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl RunConfig {
    /// Checks the sections `command` needs.
    pub fn validate(&self, command: Command) -> Result<(), CliError> {
        if let Some(c) = self.command {
            check(c == command, "command", &format!("config is for {c}, invoked as {command}"))?;
        }
        check(self.lambda1.is_finite(), "lambda1", "must be finite")?;
        check(self.lambda2.is_finite(), "lambda2", "must be finite")?;
        if let Some(g) = &self.grid {
            g.validate().map_err(|e| config_err(format!("grid: {e}")))?;
        }
        let needs_grid = match command {
            Command::GroundState => true,
            Command::ThresholdCurve => self.threshold.ground_state_file.is_none(),
            _ => false,
        };
        check(!needs_grid || self.grid.is_some(), "grid", &format!("required for {command}"))?;
        match command {
            Command::GroundState => {
                check(positive(self.ground_state.alpha), "ground_state.alpha", "must be positive")?;
            }
            Command::ThresholdCurve => {
                let o = &self.threshold.options;
                check(o.samples >= 2, "threshold.options.samples", "at least 2 samples")?;
                check(positive(o.epsilon_curve), "threshold.options.epsilon_curve", "must be positive")?;
                for (i, f) in self.threshold.d_factors.iter().enumerate() {
                    check(positive(*f), &format!("threshold.d_factors.{i}"), "must be positive")?;
                }
            }
            Command::Evolve | Command::Virial => {
                let ev = self
                    .evolution
                    .as_ref()
                    .ok_or_else(|| config_err(format!("evolution: required for {command} (needs dt and t_final)")))?;
                check(ev.dt.is_finite() && ev.dt != 0.0, "evolution.dt", "must be finite and nonzero")?;
                check(ev.t_final.is_finite() && ev.t_final >= 0.0, "evolution.t_final", "must be finite and nonnegative")?;
                check(ev.output_stride > 0, "evolution.output_stride", "must be positive")?;
                check(ev.snapshot_stride != Some(0), "evolution.snapshot_stride", "must be positive")?;
                let init = self
                    .init
                    .as_ref()
                    .ok_or_else(|| config_err(format!("init: required for {command}")))?;
                init.validate("init").map_err(config_err)?;
                if command == Command::Virial {
                    if let WeightKind::Localized { radius } = self.virial.weight {
                        check(positive(radius), "virial.weight.radius", "must be positive")?;
                    }
                    check(
                        self.virial.eta_fraction.is_finite() && self.virial.eta_fraction >= 0.0,
                        "virial.eta_fraction",
                        "must be nonnegative",
                    )?;
                }
            }
            Command::Verify => {}
        }
        Ok(())
    }
}
