//! Versioned experiment specification: what the config file contains, how
//! command-line overrides fold into it, and how pump power maps to the source
//! brightness.

use std::path::Path;

use pdcsim::adversary::AttackConfig;
use pdcsim::engine::SystemConfig;
use serde::{Deserialize, Serialize};

use crate::output::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Pump powers of the reference efficiency table, in watts.
pub const REFERENCE_POWERS_W: [f64; 7] = [20e-9, 50e-9, 100e-9, 200e-9, 500e-9, 1000e-9, 2000e-9];

/// Channel-transmission grid of the conditional-probability sweep.
pub fn default_eta_c_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// Channel transmissions over which the ratio sweep averages.
pub fn ratio_sweep_eta_c_grid() -> Vec<f64> {
    vec![0.25, 0.5, 0.75, 1.0]
}

/// Linear map from pump power to mean pairs per pulse.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerCalibration {
    pub reference_power_w: f64,
    pub mean_pairs_at_reference: f64,
}

impl Default for PowerCalibration {
    fn default() -> Self {
        PowerCalibration {
            reference_power_w: 2e-6,
            mean_pairs_at_reference: 0.84,
        }
    }
}

/// Everything a run needs. Serialized form is the config-file schema; the same
/// type, fully resolved, is embedded in every emitted document for provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub system: SystemConfig,
    pub attack: Option<AttackConfig>,
    /// Independent trigger partitions (parallelizable; counts are invariant).
    pub partitions: u32,
    /// Significance level of the attack detector.
    pub alpha: f64,
    /// When set, overrides `system.mean_pairs` through the calibration.
    pub power_w: Option<f64>,
    /// Pump-power sweep axis, watts.
    pub powers_w: Option<Vec<f64>>,
    /// Channel-transmission sweep axis.
    pub channel_transmissions: Option<Vec<f64>>,
    pub calibration: PowerCalibration,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            schema_version: SCHEMA_VERSION,
            system: SystemConfig::default(),
            attack: None,
            partitions: 1,
            alpha: 0.001,
            power_w: None,
            powers_w: None,
            channel_transmissions: None,
            calibration: PowerCalibration::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError {
            kind: "io",
            message: format!("reading config {}: {e}", path.display()),
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let spec: ExperimentSpec = serde_json::from_str(text).map_err(|e| CliError {
            kind: "config",
            message: format!("parsing config: {e}"),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError {
                kind: "config",
                message: format!(
                    "unsupported schema_version {} (this tool reads version {SCHEMA_VERSION})",
                    self.schema_version
                ),
            });
        }
        if self.partitions == 0 {
            return Err(CliError {
                kind: "config",
                message: "partitions must be at least 1".into(),
            });
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return Err(CliError {
                kind: "config",
                message: format!("alpha {} outside (0, 0.5]", self.alpha),
            });
        }
        if !(self.calibration.reference_power_w > 0.0)
            || !(self.calibration.mean_pairs_at_reference > 0.0)
        {
            return Err(CliError {
                kind: "config",
                message: "calibration reference power and mean pairs must be positive".into(),
            });
        }
        let check_power = |p: f64| -> Result<(), CliError> {
            if !(p > 0.0) || !p.is_finite() {
                return Err(CliError {
                    kind: "config",
                    message: format!("pump power {p} must be positive and finite"),
                });
            }
            Ok(())
        };
        if let Some(p) = self.power_w {
            check_power(p)?;
        }
        if let Some(ps) = &self.powers_w {
            if ps.is_empty() {
                return Err(CliError {
                    kind: "config",
                    message: "powers_w must not be empty".into(),
                });
            }
            for &p in ps {
                check_power(p)?;
            }
        }
        if let Some(ts) = &self.channel_transmissions {
            if ts.is_empty() {
                return Err(CliError {
                    kind: "config",
                    message: "channel_transmissions must not be empty".into(),
                });
            }
            for &t in ts {
                if !(t > 0.0 && t <= 1.0) {
                    return Err(CliError {
                        kind: "config",
                        message: format!("channel transmission {t} outside (0, 1]"),
                    });
                }
            }
        }
        self.system.validate()?;
        if let Some(a) = &self.attack {
            a.validate()?;
        }
        Ok(())
    }

    /// Mean pairs per pulse at the given pump power.
    pub fn mean_pairs_for(&self, power_w: f64) -> f64 {
        self.calibration.mean_pairs_at_reference * power_w / self.calibration.reference_power_w
    }
}

/// Command-line overrides; every set field wins over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub triggers: Option<u64>,
    pub fast: bool,
    pub partitions: Option<u32>,
    pub mean_pairs: Option<f64>,
    pub power_w: Option<f64>,
    pub eta_c: Option<f64>,
    pub alpha: Option<f64>,
    pub eta_c_grid: Option<Vec<f64>>,
    pub eve_eta: Option<f64>,
    pub steal_threshold: Option<u32>,
    pub steal_count: Option<u32>,
    pub no_mimic: bool,
    pub enable_attack: bool,
}

/// Applies overrides, resolves power into mean pairs, applies the fast cap, and
/// validates. Precedence: flags > config file > defaults.
pub fn resolve_spec(mut spec: ExperimentSpec, ov: &Overrides) -> Result<ExperimentSpec, CliError> {
    if let Some(s) = ov.seed {
        spec.system.rng_seed = s;
    }
    if let Some(t) = ov.triggers {
        spec.system.n_triggers = t;
    }
    if let Some(p) = ov.partitions {
        spec.partitions = p;
    }
    if let Some(a) = ov.alpha {
        spec.alpha = a;
    }
    if let Some(m) = ov.mean_pairs {
        spec.system.mean_pairs = m;
        spec.power_w = None;
    }
    if let Some(p) = ov.power_w {
        spec.power_w = Some(p);
    }
    if let Some(e) = ov.eta_c {
        spec.system.efficiencies.eta_c = e;
    }
    if let Some(g) = &ov.eta_c_grid {
        spec.channel_transmissions = Some(g.clone());
    }
    if ov.enable_attack
        || ov.eve_eta.is_some()
        || ov.steal_threshold.is_some()
        || ov.steal_count.is_some()
        || ov.no_mimic
    {
        let attack = spec.attack.get_or_insert_with(AttackConfig::default);
        attack.enabled = true;
        if let Some(e) = ov.eve_eta {
            attack.eve_channel_eta = e;
        }
        if let Some(t) = ov.steal_threshold {
            attack.steal_threshold = t;
        }
        if let Some(c) = ov.steal_count {
            attack.steal_count = c;
        }
        if ov.no_mimic {
            attack.mimic_attenuation = Some(1.0);
        }
    }
    if let Some(p) = spec.power_w {
        spec.system.mean_pairs = spec.mean_pairs_for(p);
    }
    // --fast caps the trigger count unless --triggers was given explicitly.
    if ov.fast && ov.triggers.is_none() {
        spec.system.n_triggers = spec.system.n_triggers.min(1_000_000);
    }
    spec.validate()?;
    Ok(spec)
}
