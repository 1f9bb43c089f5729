//! Photon-number-splitting eavesdropper: attack model, mimic calibration, and
//! statistical detection from photon-number-resolved click ratios.
//!
//! Eve intercepts multiphoton pulses right after the source, keeps `steal_count`
//! photons from every pulse carrying at least `steal_threshold`, and forwards the
//! rest over her own channel of transmission `eve_channel_eta` (she owns the line,
//! so she can make it lossless). To keep the receiver's raw click rate unchanged
//! she adds a fixed attenuation, calibrated here against the honest expectation.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dist::check_unit_interval;
use crate::engine::SystemConfig;
use crate::error::{Error, Result};
use crate::estimator::Measurement;
use crate::expectation::expected_bob_rate;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub enabled: bool,
    /// Eve steals only from pulses with at least this many pairs.
    pub steal_threshold: u32,
    /// Photons removed from each attacked pulse.
    pub steal_count: u32,
    /// Transmission of the channel Eve substitutes for the original one.
    pub eve_channel_eta: f64,
    /// Extra attenuation Eve inserts to mimic the honest click rate; `None` means
    /// no attenuation (equivalently 1.0). Set by [`calibrate_mimic`].
    pub mimic_attenuation: Option<f64>,
    /// Click rate the mimic should reproduce; `None` means the honest rate of the
    /// same system.
    pub mimic_target_rate: Option<f64>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            enabled: false,
            steal_threshold: 2,
            steal_count: 1,
            eve_channel_eta: 1.0,
            mimic_attenuation: None,
            mimic_target_rate: None,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steal_threshold < 2 {
            return Err(Error::InvalidParameter {
                name: "steal_threshold",
                value: self.steal_threshold as f64,
                reason: "must be at least 2 (single-photon pulses carry the key)",
            });
        }
        if self.steal_count == 0 {
            return Err(Error::InvalidParameter {
                name: "steal_count",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        check_unit_interval("eve_channel_eta", self.eve_channel_eta)?;
        if let Some(a) = self.mimic_attenuation {
            check_unit_interval("mimic_attenuation", a)?;
        }
        if let Some(r) = self.mimic_target_rate {
            if !(r > 0.0 && r < 1.0) || !r.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "mimic_target_rate",
                    value: r,
                    reason: "must lie strictly between 0 and 1",
                });
            }
        }
        Ok(())
    }
}

/// Pair number reaching the receiver arm after Eve's interception.
#[inline]
pub fn apply_attack(m: u32, attack: &AttackConfig) -> u32 {
    if attack.enabled && m >= attack.steal_threshold {
        m - attack.steal_count.min(m)
    } else {
        m
    }
}

/// Finds the mimic attenuation that makes the attacked expected click rate match
/// the target (the honest rate by default). Returns the attack with
/// `mimic_attenuation` and `mimic_target_rate` filled in; a disabled attack is
/// returned unchanged.
pub fn calibrate_mimic(cfg: &SystemConfig, attack: &AttackConfig) -> Result<AttackConfig> {
    attack.validate()?;
    if !attack.enabled {
        return Ok(*attack);
    }
    let target = match attack.mimic_target_rate {
        Some(r) => r,
        None => expected_bob_rate(cfg, None)?,
    };
    let rate_at = |a: f64| -> Result<f64> {
        let mut probe = *attack;
        probe.mimic_attenuation = Some(a);
        expected_bob_rate(cfg, Some(&probe))
    };
    let reachable_min = rate_at(0.0)?;
    let reachable_max = rate_at(1.0)?;
    if target < reachable_min - 1e-12 || target > reachable_max + 1e-12 {
        return Err(Error::MimicInfeasible {
            target,
            reachable_min,
            reachable_max,
        });
    }
    // The rate is strictly increasing in the attenuation, so bisection converges
    // to full double precision.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate_at(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let mut out = *attack;
    out.mimic_attenuation = Some(0.5 * (lo + hi));
    out.mimic_target_rate = Some(target);
    Ok(out)
}

/// Shift of one photon-number ratio, in standard deviations toward the attack
/// signature (positive = observed ratio below expectation).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioShift {
    pub n: usize,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    /// Inverse-variance combination of the per-n shifts, standard normal under
    /// honest operation.
    pub statistic: f64,
    pub threshold: f64,
    pub alpha: f64,
    pub p_value: f64,
    pub per_photon: Vec<RatioShift>,
    pub detected: bool,
}

/// One-sided test for photon-number splitting: the attack depresses every click
/// ratio r(n) with n >= 2, so shifts are scored toward decreased ratios and
/// combined with inverse-variance weights. `observed` and `expected` are indexed
/// by n; entries below n = 2 and absent entries are ignored.
pub fn detect(
    observed: &[Option<Measurement>],
    expected: &[Option<Measurement>],
    alpha: f64,
) -> Result<DetectionVerdict> {
    if !(alpha > 0.0 && alpha <= 0.5) || !alpha.is_finite() {
        return Err(Error::InvalidParameter {
            name: "alpha",
            value: alpha,
            reason: "must lie in (0, 0.5]",
        });
    }
    let mut per_photon = Vec::new();
    let mut weight_sum = 0.0;
    let mut shift_sum = 0.0;
    for n in 2..observed.len().min(expected.len()) {
        let (Some(obs), Some(exp)) = (&observed[n], &expected[n]) else {
            continue;
        };
        let var = obs.std_error * obs.std_error + exp.std_error * exp.std_error;
        if !(var > 0.0) || !var.is_finite() {
            continue;
        }
        let delta = exp.value - obs.value;
        per_photon.push(RatioShift {
            n,
            z: delta / var.sqrt(),
        });
        weight_sum += 1.0 / var;
        shift_sum += delta / var;
    }
    if per_photon.is_empty() {
        return Err(Error::InsufficientOverlap);
    }
    let statistic = shift_sum / weight_sum.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let threshold = normal.inverse_cdf(1.0 - alpha);
    let p_value = normal.cdf(-statistic);
    Ok(DetectionVerdict {
        statistic,
        threshold,
        alpha,
        p_value,
        detected: statistic > threshold,
        per_photon,
    })
}
