//! Exact expectation values of the Monte Carlo counts.
//!
//! Built from the same per-pulse probability tables the engine samples from, so
//! any discrepancy between a run and its expectation is statistical, not a model
//! mismatch. Used for mimic calibration, estimator validation, and as the honest
//! reference in attack detection.

use crate::adversary::AttackConfig;
use crate::convolution::ConvolutionMatrix;
use crate::engine::{CountsTable, PulseTables, SystemConfig};
use crate::error::Result;

/// Expected receiver click rate per gate, dead time folded in.
pub fn expected_bob_rate(cfg: &SystemConfig, attack: Option<&AttackConfig>) -> Result<f64> {
    let tables = PulseTables::new(cfg, attack)?;
    let (live, pbar) = live_factor(&tables);
    Ok(live * pbar)
}

/// Expected counts table for the full model.
pub fn expected_counts(cfg: &SystemConfig, attack: Option<&AttackConfig>) -> Result<CountsTable> {
    expected_counts_inner(cfg, attack, None)
}

/// Expected counts with the herald photon number restricted to `n <= herald_max`.
///
/// The returned table describes the sub-ensemble of gates whose herald arm kept at
/// most `herald_max` photons; its `n_triggers` is the retained mass times the
/// configured trigger count. With `herald_max = bins` the occupancy block maps the
/// sub-ensemble without information loss, which makes the deconvolution loop close
/// exactly instead of carrying the (tiny) spillover from higher photon numbers.
pub fn expected_counts_truncated(
    cfg: &SystemConfig,
    attack: Option<&AttackConfig>,
    herald_max: usize,
) -> Result<CountsTable> {
    expected_counts_inner(cfg, attack, Some(herald_max))
}

/// Stationary live fraction of the receiver and its pre-dead-time click rate.
/// A click blocks the next `dead` gates, so the click rate solves
/// r = pbar (1 - dead r), giving a live fraction 1 / (1 + dead pbar).
fn live_factor(tables: &PulseTables) -> (f64, f64) {
    let pbar: f64 = tables
        .m_probs
        .iter()
        .zip(&tables.bob_click_p)
        .map(|(p, b)| p * b)
        .sum();
    let live = 1.0 / (1.0 + tables.dead_gates as f64 * pbar);
    (live, pbar)
}

fn expected_counts_inner(
    cfg: &SystemConfig,
    attack: Option<&AttackConfig>,
    herald_max: Option<usize>,
) -> Result<CountsTable> {
    let tables = PulseTables::new(cfg, attack)?;
    let m_max = tables.m_probs.len() - 1;
    let n_hi = herald_max.map_or(m_max, |h| h.min(m_max));
    let (live, _) = live_factor(&tables);

    // Joint expectations in herald photon-number space, per trigger.
    let mut total_n = vec![0.0; n_hi + 1];
    let mut click_n = vec![0.0; n_hi + 1];
    for m in 0..=m_max {
        let pm = tables.m_probs[m];
        if pm == 0.0 {
            continue;
        }
        let click = tables.bob_click_p[m] * live;
        for n in 0..=m.min(n_hi) {
            let w = pm * tables.herald_keep[m][n];
            total_n[n] += w;
            click_n[n] += w * click;
        }
    }

    // Map photon numbers to click numbers: bin occupancy, then dark counts on the
    // unoccupied bins.
    let bins = cfg.bins;
    let matrix = ConvolutionMatrix::uniform(bins, bins.max(n_hi))?;
    let nt = cfg.n_triggers as f64;
    let mut counts = CountsTable::zeroed(bins);
    for k in 0..=bins {
        let mut tot = 0.0;
        let mut clk = 0.0;
        for n in 0..=n_hi {
            let mut p_k_given_n = 0.0;
            for j in 0..=k {
                p_k_given_n += matrix.prob(j, n) * tables.dark_rows[bins - j][k - j];
            }
            tot += p_k_given_n * total_n[n];
            clk += p_k_given_n * click_n[n];
        }
        counts.herald_totals[k] = nt * tot;
        counts.joint_click[k] = nt * clk;
        counts.joint_noclick[k] = nt * (tot - clk);
    }
    counts.n_bob = counts.joint_click.iter().sum();
    counts.n_coincidence = counts.joint_click.iter().skip(1).sum();
    counts.n_triggers = counts.herald_totals.iter().sum();
    counts.validate()?;
    Ok(counts)
}
