//! Command implementations: each resolves a spec into one output document.
//!
//! Sweeps checkpoint per-point results to a `<out>.partial.json` sidecar so an
//! interrupted run can be resumed with `--resume`; the checkpoint is keyed to the
//! exact resolved spec and removed once the sweep completes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pdcsim::adversary::{calibrate_mimic, detect, AttackConfig};
use pdcsim::convolution::ConvolutionMatrix;
use pdcsim::engine::{run_partitioned, CountsTable, SystemConfig};
use pdcsim::estimator::{
    accidentals, average_ratios, conditional_probs_deconvolved, conditional_probs_raw, klyshko,
    DarkModel, DeconvolvedStats, Measurement,
};
use pdcsim::expectation::{expected_bob_rate, expected_counts_truncated};
use pdcsim::rng::derive_seed;
use pdcsim::theory;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::output::{
    render_json, write_document, AnalysisDocument, AttackDocument, CliError,
    ClickStatisticsDocument, CountsDocument, DocumentHeader, Fig3Row, Fig4Row, OutputFormat,
    SweepDocument, Table1Row, TheoryRow,
};
use crate::spec::{
    default_eta_c_grid, ratio_sweep_eta_c_grid, ExperimentSpec, REFERENCE_POWERS_W,
};

/// Highest herald photon number carried in report rows.
pub const REPORT_N_MAX: usize = 4;

/// Nominal trigger count for exact expectation tables. Conditional quantities
/// are scale-invariant, but the deconvolution's small-sample suppression rule is
/// not; a large nominal count keeps it from hiding exact entries when the
/// configured run is short.
const REFERENCE_TRIGGERS: u64 = 1_000_000_000_000;

fn occupancy(bins: usize) -> Result<ConvolutionMatrix, CliError> {
    Ok(ConvolutionMatrix::uniform(bins, bins)?)
}

fn source_dist(
    cfg: &SystemConfig,
) -> Result<pdcsim::dist::PhotonNumberDistribution, CliError> {
    Ok(cfg.source_distribution()?)
}

/// Model-predicted click ratios for honest operation: the truncated expected
/// counts pushed through the same deconvolution as the data, with zero
/// uncertainty attached (they are exact numbers, not estimates).
pub fn reference_ratios(cfg: &SystemConfig) -> Result<Vec<Option<Measurement>>, CliError> {
    let mut cfg = cfg.clone();
    cfg.n_triggers = REFERENCE_TRIGGERS;
    let expected = expected_counts_truncated(&cfg, None, cfg.bins)?;
    let dec = conditional_probs_deconvolved(&expected, &occupancy(cfg.bins)?)?;
    Ok(dec
        .ratio
        .iter()
        .map(|m| {
            m.map(|m| Measurement {
                value: m.value,
                std_error: 0.0,
            })
        })
        .collect())
}

fn analysis_document(spec: ExperimentSpec, counts: &CountsTable) -> Result<AnalysisDocument, CliError> {
    let dark = DarkModel::from_config(&spec.system);
    let deconvolved = conditional_probs_deconvolved(counts, &occupancy(counts.bins())?)?;
    Ok(AnalysisDocument {
        accidentals: accidentals(counts),
        klyshko: klyshko(counts, &dark)?,
        raw: conditional_probs_raw(counts),
        deconvolved,
        header: DocumentHeader::new("analyze", spec),
    })
}

pub fn run_simulate(
    spec: ExperimentSpec,
    out: &Path,
    format: OutputFormat,
) -> Result<Vec<PathBuf>, CliError> {
    let counts = run_partitioned(&spec.system, spec.attack.as_ref(), spec.partitions)?;
    let doc = CountsDocument {
        header: DocumentHeader::new("simulate", spec),
        counts,
    };
    let path = write_document(out, format, || render_json(&doc), || doc.to_csv())?;
    Ok(vec![path])
}

pub fn run_analyze(
    input: &Path,
    out: &Path,
    format: OutputFormat,
) -> Result<Vec<PathBuf>, CliError> {
    let (spec, counts) = crate::output::load_counts_document(input)?;
    let doc = analysis_document(spec, &counts)?;
    let path = write_document(out, format, || render_json(&doc), || doc.to_csv())?;
    Ok(vec![path])
}

/// Closed-form click probabilities next to the same quantities routed through
/// bin occupancy and its inverse, over a channel-transmission grid. Herald dark
/// counts are left out of these reference curves; the two routes then agree to
/// float precision.
pub fn run_theory(
    spec: ExperimentSpec,
    out: &Path,
    format: OutputFormat,
) -> Result<Vec<PathBuf>, CliError> {
    let grid = spec
        .channel_transmissions
        .clone()
        .unwrap_or_else(default_eta_c_grid);
    let mut rows = Vec::new();
    for &eta_c in &grid {
        let mut cfg = spec.system.clone();
        cfg.efficiencies.eta_c = eta_c;
        cfg.p_dark_herald = 0.0;
        cfg.n_triggers = REFERENCE_TRIGGERS;
        let dist = source_dist(&cfg)?;
        let expected = expected_counts_truncated(&cfg, None, cfg.bins)?;
        let dec = conditional_probs_deconvolved(&expected, &occupancy(cfg.bins)?)?;
        for n in 0..=REPORT_N_MAX {
            let p_closed_form = theory::conditional_click_probability_with_dark(
                &dist,
                n,
                cfg.efficiencies.eta_t,
                cfg.efficiencies.eta_b(),
                cfg.p_dark_bob,
            )?;
            let binned = dec.p_click[n].ok_or_else(|| CliError {
                kind: "model",
                message: format!("no binned probability at n={n}, eta_c={eta_c}"),
            })?;
            let r_binned = dec.ratio[n].map_or(f64::NAN, |m| m.value);
            rows.push(TheoryRow {
                eta_c,
                n,
                p_closed_form,
                p_binned: binned.value,
                r_binned,
            });
        }
    }
    let doc = SweepDocument {
        header: DocumentHeader::new("theory", spec),
        rows,
    };
    let path = write_document(out, format, || render_json(&doc), || doc.to_csv())?;
    Ok(vec![path])
}

pub fn run_attack(
    spec: ExperimentSpec,
    out: &Path,
    format: OutputFormat,
) -> Result<Vec<PathBuf>, CliError> {
    let mut attack = spec.attack.unwrap_or_else(|| AttackConfig {
        enabled: true,
        ..AttackConfig::default()
    });
    attack.enabled = true;
    if attack.mimic_attenuation.is_none() {
        attack = calibrate_mimic(&spec.system, &attack)?;
    }
    let mut resolved = spec;
    resolved.attack = Some(attack);
    let sys = resolved.system.clone();

    let honest_rate_expected = expected_bob_rate(&sys, None)?;
    let attacked_rate_expected = expected_bob_rate(&sys, Some(&attack))?;
    let counts = run_partitioned(&sys, Some(&attack), resolved.partitions)?;
    let attacked_rate_observed = counts.n_bob / counts.n_triggers;
    let rate_var = counts.n_triggers * honest_rate_expected * (1.0 - honest_rate_expected);
    let rate_z = (counts.n_bob - counts.n_triggers * honest_rate_expected) / rate_var.sqrt();

    let observed = conditional_probs_deconvolved(&counts, &occupancy(counts.bins())?)?;
    let reference_ratios = reference_ratios(&sys)?;
    let verdict = detect(&observed.ratio, &reference_ratios, resolved.alpha)?;

    let doc = AttackDocument {
        header: DocumentHeader::new("attack", resolved),
        honest_rate_expected,
        attacked_rate_expected,
        attacked_rate_observed,
        rate_z,
        counts,
        observed,
        reference_ratios,
        verdict,
    };
    let path = write_document(out, format, || render_json(&doc), || doc.to_csv())?;
    Ok(vec![path])
}

#[derive(Serialize, serde::Deserialize)]
struct Checkpoint {
    spec_json: String,
    rows: BTreeMap<String, serde_json::Value>,
}

/// Per-point checkpointing for sweeps. Completed points are written through to
/// the sidecar immediately; `--resume` replays them instead of recomputing.
struct ResumeCtx {
    path: PathBuf,
    spec_json: String,
    rows: BTreeMap<String, serde_json::Value>,
}

impl ResumeCtx {
    fn open(out: &Path, spec: &ExperimentSpec, resume: bool) -> Result<Self, CliError> {
        let path = out.with_extension("partial.json");
        let spec_json = serde_json::to_string(spec)?;
        let mut rows = BTreeMap::new();
        if resume && path.exists() {
            let cp: Checkpoint = serde_json::from_str(&fs::read_to_string(&path)?)?;
            if cp.spec_json == spec_json {
                rows = cp.rows;
            } else {
                return Err(CliError {
                    kind: "resume",
                    message: format!(
                        "checkpoint {} belongs to a different resolved spec; \
                         delete it or rerun without --resume",
                        path.display()
                    ),
                });
            }
        }
        Ok(ResumeCtx {
            path,
            spec_json,
            rows,
        })
    }

    fn take<T: DeserializeOwned>(&self, key: &str) -> Option<T> {
        self.rows
            .get(key)
            .and_then(|v| serde_json::from_value(v.clone()).ok())
    }

    fn put<T: Serialize>(&mut self, key: &str, value: &T) -> Result<(), CliError> {
        self.rows
            .insert(key.to_string(), serde_json::to_value(value)?);
        let cp = Checkpoint {
            spec_json: self.spec_json.clone(),
            rows: self.rows.clone(),
        };
        fs::write(&self.path, serde_json::to_string(&cp)?)?;
        Ok(())
    }

    fn finish(self) -> Result<(), CliError> {
        if self.path.exists() {
            fs::remove_file(&self.path)?;
        }
        Ok(())
    }
}

/// Runs one sweep point per key, reusing checkpointed results, with a progress
/// line per point on stderr.
fn sweep_points<T, F>(
    mode: &str,
    ctx: &mut ResumeCtx,
    keys: &[String],
    mut compute: F,
) -> Result<Vec<T>, CliError>
where
    T: Serialize + DeserializeOwned,
    F: FnMut(usize) -> Result<T, CliError>,
{
    let total = keys.len();
    let mut out = Vec::with_capacity(total);
    for (i, key) in keys.iter().enumerate() {
        if let Some(v) = ctx.take::<T>(key) {
            eprintln!("[{mode}] point {}/{total} {key} resumed", i + 1);
            out.push(v);
            continue;
        }
        let v = compute(i)?;
        ctx.put(key, &v)?;
        eprintln!("[{mode}] point {}/{total} {key} done", i + 1);
        out.push(v);
    }
    Ok(out)
}

fn sweep_powers(spec: &ExperimentSpec) -> Vec<f64> {
    spec.powers_w
        .clone()
        .unwrap_or_else(|| REFERENCE_POWERS_W.to_vec())
}

/// Klyshko efficiencies across the pump-power grid. Dark rates are zeroed: the
/// published reference numbers are dark-corrected efficiencies, so the sweep
/// reports what the estimator recovers on a dark-free channel.
pub fn reproduce_table1(
    spec: ExperimentSpec,
    out: &Path,
    format: OutputFormat,
    resume: bool,
) -> Result<Vec<PathBuf>, CliError> {
    let mut resolved = spec;
    resolved.system.p_dark_bob = 0.0;
    resolved.system.p_dark_herald = 0.0;
    let powers = sweep_powers(&resolved);
    let master = resolved.system.rng_seed;
    let mut ctx = ResumeCtx::open(out, &resolved, resume)?;
    let keys: Vec<String> = powers.iter().map(|p| format!("power={p:e}")).collect();
    let base = resolved.clone();
    let rows: Vec<Table1Row> = sweep_points("table1", &mut ctx, &keys, |i| {
        let mut cfg = base.system.clone();
        cfg.mean_pairs = base.mean_pairs_for(powers[i]);
        cfg.rng_seed = derive_seed(master, i as u64);
        let counts = run_partitioned(&cfg, None, base.partitions)?;
        let est = klyshko(&counts, &DarkModel::from_config(&cfg))?;
        let spread = counts.n_coincidence.max(0.0).sqrt();
        Ok(Table1Row {
            power_w: powers[i],
            mean_pairs: cfg.mean_pairs,
            eta_t_hat: est.eta_t,
            eta_t_err: spread / counts.n_bob,
            eta_b_hat: est.eta_b,
            eta_b_err: spread / counts.herald_ge1(),
        })
    })?;
    let doc = SweepDocument {
        header: DocumentHeader::new("table1", resolved),
        rows,
    };
    let path = write_document(out, format, || render_json(&doc), || doc.to_csv())?;
    ctx.finish()?;
    Ok(vec![path])
}

/// Joint click statistics of a single run, laid out as the no-click/click/total
/// table over herald click numbers 0..=4.
pub fn reproduce_table2(
    spec: ExperimentSpec,
    out: &Path,
    format: OutputFormat,
) -> Result<Vec<PathBuf>, CliError> {
    let counts = run_partitioned(&spec.system, None, spec.partitions)?;
    let doc = ClickStatisticsDocument {
        header: DocumentHeader::new("table2", spec),
        counts,
        columns: REPORT_N_MAX,
    };
    let path = write_document(out, format, || render_json(&doc), || doc.to_csv())?;
    Ok(vec![path])
}

/// Conditional click probabilities, raw and deconvolved, against the closed
/// form, across the channel-transmission grid.
pub fn reproduce_fig3(
    spec: ExperimentSpec,
    out: &Path,
    format: OutputFormat,
    resume: bool,
) -> Result<Vec<PathBuf>, CliError> {
    let grid = spec
        .channel_transmissions
        .clone()
        .unwrap_or_else(default_eta_c_grid);
    let master = spec.system.rng_seed;
    let mut ctx = ResumeCtx::open(out, &spec, resume)?;
    let keys: Vec<String> = grid.iter().map(|t| format!("eta_c={t}")).collect();
    let base = spec.clone();
    let per_point: Vec<Vec<Fig3Row>> = sweep_points("fig3", &mut ctx, &keys, |i| {
        let eta_c = grid[i];
        let mut cfg = base.system.clone();
        cfg.efficiencies.eta_c = eta_c;
        cfg.rng_seed = derive_seed(master, i as u64);
        let counts = run_partitioned(&cfg, None, base.partitions)?;
        let raw = conditional_probs_raw(&counts);
        let dec = conditional_probs_deconvolved(&counts, &occupancy(cfg.bins)?)?;
        let dist = source_dist(&cfg)?;
        let mut rows = Vec::new();
        for n in 1..=REPORT_N_MAX {
            let p_theory = theory::conditional_click_probability_with_dark(
                &dist,
                n,
                cfg.efficiencies.eta_t,
                cfg.efficiencies.eta_b(),
                cfg.p_dark_bob,
            )?;
            rows.push(Fig3Row {
                eta_c,
                n,
                p_raw: raw.get(n).copied().flatten(),
                p_deconv: dec.p_click.get(n).copied().flatten(),
                p_theory,
                r: dec.ratio.get(n).copied().flatten(),
            });
        }
        Ok(rows)
    })?;
    let doc = SweepDocument {
        header: DocumentHeader::new("fig3", spec),
        rows: per_point.into_iter().flatten().collect(),
    };
    let path = write_document(out, format, || render_json(&doc), || doc.to_csv())?;
    ctx.finish()?;
    Ok(vec![path])
}

/// Click ratios r(n) against source brightness, averaged over the channel grid
/// with inverse-variance weights; the theory column repeats the average with the
/// same weights on the closed-form ratios.
pub fn reproduce_fig4(
    spec: ExperimentSpec,
    out: &Path,
    format: OutputFormat,
    resume: bool,
) -> Result<Vec<PathBuf>, CliError> {
    let powers = sweep_powers(&spec);
    let grid = spec
        .channel_transmissions
        .clone()
        .unwrap_or_else(ratio_sweep_eta_c_grid);
    let master = spec.system.rng_seed;
    let mut ctx = ResumeCtx::open(out, &spec, resume)?;
    let mut keys = Vec::new();
    for &p in &powers {
        for &t in &grid {
            keys.push(format!("power={p:e},eta_c={t}"));
        }
    }
    let base = spec.clone();
    let runs: Vec<DeconvolvedStats> = sweep_points("fig4", &mut ctx, &keys, |i| {
        let (pi, ti) = (i / grid.len(), i % grid.len());
        let mut cfg = base.system.clone();
        cfg.mean_pairs = base.mean_pairs_for(powers[pi]);
        cfg.efficiencies.eta_c = grid[ti];
        cfg.rng_seed = derive_seed(master, i as u64);
        let counts = run_partitioned(&cfg, None, base.partitions)?;
        Ok(conditional_probs_deconvolved(
            &counts,
            &occupancy(cfg.bins)?,
        )?)
    })?;

    let mut rows = Vec::new();
    for (pi, &power_w) in powers.iter().enumerate() {
        let mean_pairs = spec.mean_pairs_for(power_w);
        let dist = source_dist(&SystemConfig {
            mean_pairs,
            ..spec.system.clone()
        })?;
        let chunk = &runs[pi * grid.len()..(pi + 1) * grid.len()];
        let averaged = average_ratios(chunk, REPORT_N_MAX);
        for n in 2..=REPORT_N_MAX {
            // Average the closed-form ratios over eta_c with the weights the
            // measurement used, so both columns describe the same mixture.
            let mut wsum = 0.0;
            let mut vsum = 0.0;
            for (ti, run) in chunk.iter().enumerate() {
                let Some(m) = run.ratio.get(n).copied().flatten() else {
                    continue;
                };
                if !(m.std_error > 0.0) || !m.std_error.is_finite() {
                    continue;
                }
                let mut eff = spec.system.efficiencies;
                eff.eta_c = grid[ti];
                let r = theory::ratio_r_with_dark(
                    &dist,
                    n,
                    eff.eta_t,
                    eff.eta_b(),
                    spec.system.p_dark_bob,
                )?;
                let w = 1.0 / (m.std_error * m.std_error);
                wsum += w;
                vsum += w * r;
            }
            rows.push(Fig4Row {
                power_w,
                mean_pairs,
                n,
                r_avg: averaged.get(n).copied().flatten(),
                r_theory: (wsum > 0.0).then(|| vsum / wsum),
            });
        }
    }
    let doc = SweepDocument {
        header: DocumentHeader::new("fig4", spec),
        rows,
    };
    let path = write_document(out, format, || render_json(&doc), || doc.to_csv())?;
    ctx.finish()?;
    Ok(vec![path])
}
