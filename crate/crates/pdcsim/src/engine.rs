//! Event-level Monte Carlo of the heralded pair source.
//!
//! Each trigger of the pump laser is simulated as one independent event: a pair
//! number m is drawn from the source distribution, the herald arm keeps each of the
//! m photons with probability eta_t and throws the survivors into time bins, herald
//! dark counts fill unoccupied bins, and the receiver fires with the combined
//! photon-plus-dark click probability. Receiver dead time suppresses the gates that
//! follow a click.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{apply_attack, AttackConfig};
use crate::dist::{binomial_pmf_rows, check_unit_interval, PhotonNumberDistribution};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, PulseRng};

/// Efficiency chain of the two arms. The receiver-arm efficiency factorizes into
/// transmission channel, output coupling, and detector; only the product matters
/// for honest operation, but an eavesdropper can substitute the channel alone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmEfficiencies {
    /// Herald-arm transmission including its detector.
    pub eta_t: f64,
    /// Receiver channel transmission.
    pub eta_c: f64,
    /// Receiver output coupling.
    pub eta_oc: f64,
    /// Receiver detector efficiency.
    pub eta_det: f64,
}

impl ArmEfficiencies {
    /// Total receiver-arm efficiency.
    #[inline]
    pub fn eta_b(&self) -> f64 {
        self.eta_c * self.eta_oc * self.eta_det
    }

    fn validate(&self) -> Result<()> {
        check_unit_interval("eta_t", self.eta_t)?;
        check_unit_interval("eta_c", self.eta_c)?;
        check_unit_interval("eta_oc", self.eta_oc)?;
        check_unit_interval("eta_det", self.eta_det)
    }
}

impl Default for ArmEfficiencies {
    fn default() -> Self {
        ArmEfficiencies {
            eta_t: 0.1776,
            eta_c: 1.0,
            eta_oc: 0.1075 / 0.24,
            eta_det: 0.24,
        }
    }
}

/// Full parameter set of one simulated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Mean photon pairs per pulse of the source.
    pub mean_pairs: f64,
    /// When set, the source emits exactly this many pairs every pulse instead of
    /// sampling from the Poisson distribution.
    pub forced_pairs: Option<u32>,
    /// Number of herald time bins.
    pub bins: usize,
    pub efficiencies: ArmEfficiencies,
    /// Receiver dark-count probability per gate.
    pub p_dark_bob: f64,
    /// Herald dark-count probability per bin per gate.
    pub p_dark_herald: f64,
    /// Number of gates the receiver stays blind after a click.
    pub dead_gates_bob: u32,
    pub n_triggers: u64,
    pub rng_seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            mean_pairs: 0.84,
            forced_pairs: None,
            bins: 8,
            efficiencies: ArmEfficiencies::default(),
            p_dark_bob: 1.75e-4,
            p_dark_herald: 1e-6,
            dead_gates_bob: 0,
            n_triggers: 60_000_000,
            rng_seed: 42,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.mean_pairs.is_finite() || self.mean_pairs < 0.0 {
            return Err(Error::InvalidParameter {
                name: "mean_pairs",
                value: self.mean_pairs,
                reason: "must be finite and non-negative",
            });
        }
        if self.bins == 0 || self.bins > 16 {
            return Err(Error::InvalidParameter {
                name: "bins",
                value: self.bins as f64,
                reason: "must be between 1 and 16",
            });
        }
        self.efficiencies.validate()?;
        check_unit_interval("p_dark_bob", self.p_dark_bob)?;
        check_unit_interval("p_dark_herald", self.p_dark_herald)?;
        if self.n_triggers == 0 {
            return Err(Error::InvalidParameter {
                name: "n_triggers",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        Ok(())
    }

    /// Source distribution implied by the config.
    pub fn source_distribution(&self) -> Result<PhotonNumberDistribution> {
        match self.forced_pairs {
            Some(m) => Ok(PhotonNumberDistribution::point_mass(m as usize)),
            None => PhotonNumberDistribution::poisson_auto(self.mean_pairs),
        }
    }
}

/// Outcome of a single trigger before dead-time gating.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PulseRecord {
    /// Bitmask of herald bins that clicked (photons and darks combined).
    pub herald_mask: u16,
    pub bob_click: bool,
}

/// Aggregated counts of a run, indexed by the herald click number k.
///
/// Counts are stored as f64 so the same type carries exact Monte Carlo integers
/// (exact up to 2^53) and analytic expectation values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountsTable {
    pub n_triggers: f64,
    /// Receiver clicks, heralded or not.
    pub n_bob: f64,
    /// Receiver clicks in coincidence with at least one herald click.
    pub n_coincidence: f64,
    /// Gates with herald click number k, any receiver outcome.
    pub herald_totals: Vec<f64>,
    /// Gates with herald click number k and a receiver click.
    pub joint_click: Vec<f64>,
    /// Gates with herald click number k and no receiver click.
    pub joint_noclick: Vec<f64>,
}

impl CountsTable {
    pub fn zeroed(bins: usize) -> Self {
        CountsTable {
            n_triggers: 0.0,
            n_bob: 0.0,
            n_coincidence: 0.0,
            herald_totals: vec![0.0; bins + 1],
            joint_click: vec![0.0; bins + 1],
            joint_noclick: vec![0.0; bins + 1],
        }
    }

    /// Number of herald bins the table was built for.
    #[inline]
    pub fn bins(&self) -> usize {
        self.herald_totals.len() - 1
    }

    /// Gates with at least one herald click.
    pub fn herald_ge1(&self) -> f64 {
        self.herald_totals.iter().skip(1).sum()
    }

    /// Checks internal consistency (row sums, global sums, non-negativity).
    /// Tolerances are absolute 1e-6 plus relative 1e-9, so exact integer counts
    /// and floating-point expectation tables both pass.
    pub fn validate(&self) -> Result<()> {
        let len = self.herald_totals.len();
        if len < 2 || self.joint_click.len() != len || self.joint_noclick.len() != len {
            return Err(Error::InvalidCounts("mismatched row lengths".into()));
        }
        let all = self
            .herald_totals
            .iter()
            .chain(&self.joint_click)
            .chain(&self.joint_noclick)
            .chain([&self.n_triggers, &self.n_bob, &self.n_coincidence]);
        for &v in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidCounts(format!("negative or non-finite count {v}")));
            }
        }
        let tol = |x: f64| 1e-6 + 1e-9 * x.abs();
        for k in 0..len {
            let row = self.joint_click[k] + self.joint_noclick[k];
            if (row - self.herald_totals[k]).abs() > tol(self.herald_totals[k]) {
                return Err(Error::InvalidCounts(format!(
                    "row {k}: click {} + noclick {} != total {}",
                    self.joint_click[k], self.joint_noclick[k], self.herald_totals[k]
                )));
            }
        }
        let total: f64 = self.herald_totals.iter().sum();
        if (total - self.n_triggers).abs() > tol(self.n_triggers) {
            return Err(Error::InvalidCounts(format!(
                "herald totals sum {total} != n_triggers {}",
                self.n_triggers
            )));
        }
        let clicks: f64 = self.joint_click.iter().sum();
        if (clicks - self.n_bob).abs() > tol(self.n_bob) {
            return Err(Error::InvalidCounts(format!(
                "joint clicks sum {clicks} != n_bob {}",
                self.n_bob
            )));
        }
        let coinc: f64 = self.joint_click.iter().skip(1).sum();
        if (coinc - self.n_coincidence).abs() > tol(self.n_coincidence) {
            return Err(Error::InvalidCounts(format!(
                "heralded clicks sum {coinc} != n_coincidence {}",
                self.n_coincidence
            )));
        }
        Ok(())
    }

    /// Adds another table of the same shape into this one.
    pub fn merge(&mut self, other: &CountsTable) -> Result<()> {
        if other.herald_totals.len() != self.herald_totals.len() {
            return Err(Error::LengthMismatch {
                got: other.herald_totals.len(),
                expected: self.herald_totals.len(),
            });
        }
        self.n_triggers += other.n_triggers;
        self.n_bob += other.n_bob;
        self.n_coincidence += other.n_coincidence;
        for k in 0..self.herald_totals.len() {
            self.herald_totals[k] += other.herald_totals[k];
            self.joint_click[k] += other.joint_click[k];
            self.joint_noclick[k] += other.joint_noclick[k];
        }
        Ok(())
    }
}

/// Precomputed sampling tables for one parameter set.
pub struct PulseTables {
    /// Source pmf over pair number m.
    pub(crate) m_probs: Vec<f64>,
    /// herald_keep[m][n] = P(herald keeps n of m photons).
    pub(crate) herald_keep: Vec<Vec<f64>>,
    /// dark_rows[u][d] = P(d dark clicks among u unoccupied bins).
    pub(crate) dark_rows: Vec<Vec<f64>>,
    /// bob_click_p[m] = P(receiver clicks | source emitted m pairs), darks folded in.
    pub(crate) bob_click_p: Vec<f64>,
    pub(crate) p_dark_herald: f64,
    pub(crate) bins: u32,
    pub(crate) dead_gates: u32,
}

impl PulseTables {
    /// Builds the tables, applying the eavesdropper transformation when an enabled
    /// attack is given: the pair number reaching the receiver becomes f(m) and the
    /// channel transmission is replaced by Eve's (times her mimic attenuation).
    pub fn new(cfg: &SystemConfig, attack: Option<&AttackConfig>) -> Result<Self> {
        cfg.validate()?;
        if let Some(a) = attack {
            a.validate()?;
        }
        let dist = cfg.source_distribution()?;
        let m_max = dist.m_max();
        let active = attack.filter(|a| a.enabled);
        let p_escape = match active {
            None => cfg.efficiencies.eta_b(),
            Some(a) => {
                a.eve_channel_eta
                    * a.mimic_attenuation.unwrap_or(1.0)
                    * cfg.efficiencies.eta_oc
                    * cfg.efficiencies.eta_det
            }
        };
        let mut bob_click_p = Vec::with_capacity(m_max + 1);
        for m in 0..=m_max {
            let f = match active {
                None => m as u32,
                Some(a) => apply_attack(m as u32, a),
            };
            bob_click_p.push(1.0 - (1.0 - p_escape).powi(f as i32) * (1.0 - cfg.p_dark_bob));
        }
        Ok(PulseTables {
            m_probs: dist.probs().to_vec(),
            herald_keep: binomial_pmf_rows(m_max, cfg.efficiencies.eta_t),
            dark_rows: binomial_pmf_rows(cfg.bins, cfg.p_dark_herald),
            bob_click_p,
            p_dark_herald: cfg.p_dark_herald,
            bins: cfg.bins as u32,
            dead_gates: cfg.dead_gates_bob,
        })
    }
}

#[inline]
fn sample_walk(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Simulates one trigger. Draw order within the per-trigger stream: pair number,
/// herald thinning (skipped when m = 0), one bin throw per kept photon, herald
/// dark count and dark placement (skipped when the dark probability is zero),
/// receiver click. This order is part of the reproducibility contract.
pub fn simulate_pulse(tables: &PulseTables, rng: &mut PulseRng) -> PulseRecord {
    let m = sample_walk(&tables.m_probs, rng.next_f64());
    let n = if m == 0 {
        0
    } else {
        sample_walk(&tables.herald_keep[m], rng.next_f64())
    };
    let mut mask: u16 = 0;
    for _ in 0..n {
        mask |= 1u16 << rng.below(tables.bins);
    }
    if tables.p_dark_herald > 0.0 {
        let unoccupied = tables.bins - mask.count_ones();
        let d = sample_walk(&tables.dark_rows[unoccupied as usize], rng.next_f64());
        if d > 0 {
            let mut unocc = [0u8; 16];
            let mut len = 0usize;
            for b in 0..tables.bins {
                if mask >> b & 1 == 0 {
                    unocc[len] = b as u8;
                    len += 1;
                }
            }
            // Choose d distinct unoccupied bins by partial Fisher-Yates.
            for i in 0..d {
                let j = i + rng.below((len - i) as u32) as usize;
                unocc.swap(i, j);
                mask |= 1u16 << unocc[i];
            }
        }
    }
    let bob_click = rng.next_f64() < tables.bob_click_p[m];
    PulseRecord {
        herald_mask: mask,
        bob_click,
    }
}

fn simulate_range(tables: &PulseTables, seed: u64, start: u64, end: u64) -> CountsTable {
    let mut counts = CountsTable::zeroed(tables.bins as usize);
    let mut blocked: u32 = 0;
    for t in start..end {
        let mut rng = PulseRng::new(seed, t);
        let rec = simulate_pulse(tables, &mut rng);
        let bob = if blocked > 0 {
            blocked -= 1;
            false
        } else {
            if rec.bob_click {
                blocked = tables.dead_gates;
            }
            rec.bob_click
        };
        accumulate(&mut counts, rec.herald_mask, bob);
    }
    counts.n_triggers = (end - start) as f64;
    counts
}

#[inline]
fn accumulate(counts: &mut CountsTable, mask: u16, bob: bool) {
    let k = mask.count_ones() as usize;
    counts.herald_totals[k] += 1.0;
    if bob {
        counts.n_bob += 1.0;
        counts.joint_click[k] += 1.0;
        if k >= 1 {
            counts.n_coincidence += 1.0;
        }
    } else {
        counts.joint_noclick[k] += 1.0;
    }
}

fn partition_ranges(n: u64, partitions: u32) -> Vec<(u64, u64)> {
    let p = partitions as u64;
    let base = n / p;
    let rem = n % p;
    let mut ranges = Vec::with_capacity(partitions as usize);
    let mut start = 0;
    for i in 0..p {
        let len = base + u64::from(i < rem);
        ranges.push((start, start + len));
        start += len;
    }
    ranges
}

/// Runs the full simulation single-partition with no attack.
pub fn run(cfg: &SystemConfig) -> Result<CountsTable> {
    run_partitioned(cfg, None, 1)
}

/// Runs the simulation split into `partitions` independent chunks (executed in
/// parallel when cores are available).
///
/// Per-trigger counter-based streams make the counts independent of the partition
/// count, with one exception: the receiver dead-time chain resets at partition
/// boundaries, so runs with `dead_gates_bob > 0` are only partition-invariant at
/// a fixed partition count.
pub fn run_partitioned(
    cfg: &SystemConfig,
    attack: Option<&AttackConfig>,
    partitions: u32,
) -> Result<CountsTable> {
    if partitions == 0 {
        return Err(Error::InvalidParameter {
            name: "partitions",
            value: 0.0,
            reason: "must be at least 1",
        });
    }
    let tables = PulseTables::new(cfg, attack)?;
    let ranges = partition_ranges(cfg.n_triggers, partitions);
    let partials: Vec<CountsTable> = ranges
        .par_iter()
        .map(|&(start, end)| simulate_range(&tables, cfg.rng_seed, start, end))
        .collect();
    let mut counts = CountsTable::zeroed(cfg.bins);
    for p in &partials {
        counts.merge(p)?;
    }
    counts.validate()?;
    Ok(counts)
}

/// Runs a list of configurations with seeds derived from `master_seed` (config
/// index i gets seed derive_seed(master_seed, i), overriding its own rng_seed).
pub fn sweep(
    configs: &[SystemConfig],
    master_seed: u64,
    attack: Option<&AttackConfig>,
    partitions: u32,
) -> Result<Vec<CountsTable>> {
    configs
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let mut c = cfg.clone();
            c.rng_seed = derive_seed(master_seed, i as u64);
            run_partitioned(&c, attack, partitions)
        })
        .collect()
}

/// Sequential run that additionally streams one line per trigger to `sink`:
/// `<herald mask> <0|1>` with the mask in decimal and the receiver outcome after
/// dead-time gating. Intended for debugging at small trigger counts.
pub fn run_recorded(
    cfg: &SystemConfig,
    attack: Option<&AttackConfig>,
    sink: &mut dyn Write,
) -> Result<CountsTable> {
    let tables = PulseTables::new(cfg, attack)?;
    let mut counts = CountsTable::zeroed(cfg.bins);
    let mut blocked: u32 = 0;
    let mut buf = std::io::BufWriter::new(sink);
    for t in 0..cfg.n_triggers {
        let mut rng = PulseRng::new(cfg.rng_seed, t);
        let rec = simulate_pulse(&tables, &mut rng);
        let bob = if blocked > 0 {
            blocked -= 1;
            false
        } else {
            if rec.bob_click {
                blocked = tables.dead_gates;
            }
            rec.bob_click
        };
        accumulate(&mut counts, rec.herald_mask, bob);
        writeln!(buf, "{} {}", rec.herald_mask, u8::from(bob))
            .map_err(|e| Error::Io(format!("record sink: {e}")))?;
    }
    buf.flush().map_err(|e| Error::Io(format!("record sink: {e}")))?;
    drop(buf);
    counts.n_triggers = cfg.n_triggers as f64;
    counts.validate()?;
    Ok(counts)
}
