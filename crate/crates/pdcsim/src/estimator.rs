//! Estimators applied to aggregated counts: arm efficiencies with accidental and
//! dark-count corrections, and photon-number-resolved click probabilities both
//! raw (per click number) and deconvolved through the bin-occupancy matrix.

use serde::{Deserialize, Serialize};

use crate::convolution::ConvolutionMatrix;
use crate::engine::{CountsTable, SystemConfig};
use crate::error::{Error, Result};

/// A value with its one-standard-deviation statistical uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub value: f64,
    pub std_error: f64,
}

/// Dark-count rates assumed when correcting coincidence counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DarkModel {
    pub p_dark_bob: f64,
    pub p_dark_herald: f64,
    pub bins: usize,
}

impl DarkModel {
    pub fn from_config(cfg: &SystemConfig) -> Self {
        DarkModel {
            p_dark_bob: cfg.p_dark_bob,
            p_dark_herald: cfg.p_dark_herald,
            bins: cfg.bins,
        }
    }

    pub fn zero(bins: usize) -> Self {
        DarkModel {
            p_dark_bob: 0.0,
            p_dark_herald: 0.0,
            bins,
        }
    }
}

/// Efficiency estimates from coincidence counting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlyshkoEstimate {
    pub eta_t: f64,
    pub eta_b: f64,
    pub accidentals: f64,
    pub bob_darks: f64,
    pub herald_darks: f64,
    pub eta_t_in_range: bool,
    pub eta_b_in_range: bool,
}

/// Expected accidental coincidences: uncorrelated receiver clicks landing in
/// gates that happen to carry a herald click.
pub fn accidentals(counts: &CountsTable) -> f64 {
    counts.n_bob * counts.herald_ge1() / counts.n_triggers
}

/// Heralded-efficiency estimates: each arm's efficiency is the corrected
/// coincidence count over the other arm's singles.
pub fn klyshko(counts: &CountsTable, dark: &DarkModel) -> Result<KlyshkoEstimate> {
    counts.validate()?;
    let ge1 = counts.herald_ge1();
    if !(counts.n_bob > 0.0) {
        return Err(Error::InvalidCounts("no receiver clicks to condition on".into()));
    }
    if !(ge1 > 0.0) {
        return Err(Error::InvalidCounts("no herald clicks to condition on".into()));
    }
    let acc = accidentals(counts);
    let bob_darks = dark.p_dark_bob * ge1;
    let herald_darks = dark.bins as f64 * dark.p_dark_herald * counts.n_bob;
    let eta_t = (counts.n_coincidence - acc - herald_darks) / counts.n_bob;
    let eta_b = (counts.n_coincidence - acc - bob_darks) / ge1;
    Ok(KlyshkoEstimate {
        eta_t,
        eta_b,
        accidentals: acc,
        bob_darks,
        herald_darks,
        eta_t_in_range: (0.0..=1.0).contains(&eta_t),
        eta_b_in_range: (0.0..=1.0).contains(&eta_b),
    })
}

/// Click probability conditioned on each herald click number k, with binomial
/// standard errors. Entries with no gates at that k are `None`.
pub fn conditional_probs_raw(counts: &CountsTable) -> Vec<Option<Measurement>> {
    counts
        .herald_totals
        .iter()
        .zip(&counts.joint_click)
        .map(|(&total, &click)| {
            if total > 0.0 {
                let p = click / total;
                Some(Measurement {
                    value: p,
                    std_error: (p * (1.0 - p) / total).max(0.0).sqrt(),
                })
            } else {
                None
            }
        })
        .collect()
}

/// Photon-number-resolved statistics obtained by deconvolving the click-number
/// histograms through the occupancy matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeconvolvedStats {
    /// Estimated gates with herald photon number n (any receiver outcome).
    pub photon_totals: Vec<Measurement>,
    /// Estimated gates with herald photon number n and a receiver click.
    pub photon_clicks: Vec<Measurement>,
    /// Click probability conditioned on the herald photon number.
    pub p_click: Vec<Option<Measurement>>,
    /// Ratios r(n) = p_click(n) / p_click(1).
    pub ratio: Vec<Option<Measurement>>,
    /// Photon numbers whose click estimate came out negative.
    pub negative_clicks: Vec<usize>,
    /// Photon numbers suppressed because the estimated total was zero or
    /// consistent with zero within two standard deviations.
    pub suppressed: Vec<usize>,
}

/// Deconvolves a counts table. Error propagation treats the per-k cell counts as
/// independent Poisson variables, so Cov of the deconvolved vectors is the inverse
/// matrix applied twice to the observed cells; click-conditioned quantities then
/// follow by the delta method.
pub fn conditional_probs_deconvolved(
    counts: &CountsTable,
    matrix: &ConvolutionMatrix,
) -> Result<DeconvolvedStats> {
    counts.validate()?;
    if matrix.bins() != counts.bins() {
        return Err(Error::LengthMismatch {
            got: counts.bins(),
            expected: matrix.bins(),
        });
    }
    let dec_clicks = matrix.deconvolve(&counts.joint_click)?;
    let dec_totals = matrix.deconvolve(&counts.herald_totals)?;
    let a = &dec_clicks.values;
    let b = &dec_totals.values;
    let dim = a.len();
    let inv = matrix.inverse();
    let cov = |i: usize, j: usize, cells: &[f64]| -> f64 {
        (0..dim).map(|k| inv[i][k] * inv[j][k] * cells[k]).sum()
    };

    let photon_clicks: Vec<Measurement> = (0..dim)
        .map(|i| Measurement {
            value: a[i],
            std_error: cov(i, i, &counts.joint_click).max(0.0).sqrt(),
        })
        .collect();
    let photon_totals: Vec<Measurement> = (0..dim)
        .map(|i| Measurement {
            value: b[i],
            std_error: cov(i, i, &counts.herald_totals).max(0.0).sqrt(),
        })
        .collect();

    let mut suppressed = Vec::new();
    let mut p_click: Vec<Option<Measurement>> = Vec::with_capacity(dim);
    for i in 0..dim {
        if b[i] <= 2.0 * photon_totals[i].std_error {
            suppressed.push(i);
            p_click.push(None);
            continue;
        }
        let p = a[i] / b[i];
        let saa = photon_clicks[i].std_error.powi(2);
        let stt = photon_totals[i].std_error.powi(2);
        // Var(a/b) with Cov(a, b) = Var(a): clicks are a subvector of totals.
        let var = (saa * (1.0 - 2.0 * p) + p * p * stt) / (b[i] * b[i]);
        p_click.push(Some(Measurement {
            value: p,
            std_error: var.max(0.0).sqrt(),
        }));
    }

    let mut ratio: Vec<Option<Measurement>> = vec![None; dim];
    if let Some(p1) = p_click.get(1).copied().flatten() {
        for i in 0..dim {
            if i == 1 {
                ratio[1] = Some(Measurement {
                    value: 1.0,
                    std_error: 0.0,
                });
                continue;
            }
            let Some(pi) = p_click[i] else { continue };
            let r = pi.value / p1.value;
            // Cov(p_i, p_1) from the shared cells, first order.
            let cov_pp = (cov(i, 1, &counts.joint_click) * (1.0 - p1.value - pi.value)
                + pi.value * p1.value * cov(i, 1, &counts.herald_totals))
                / (b[i] * b[1]);
            let var = (pi.std_error.powi(2) + r * r * p1.std_error.powi(2)
                - 2.0 * r * cov_pp)
                / (p1.value * p1.value);
            if var.is_finite() {
                ratio[i] = Some(Measurement {
                    value: r,
                    std_error: var.max(0.0).sqrt(),
                });
            }
        }
    }

    Ok(DeconvolvedStats {
        photon_totals,
        photon_clicks,
        p_click,
        ratio,
        negative_clicks: dec_clicks.negative_indices,
        suppressed,
    })
}

/// Inverse-variance weighted average of the ratio r(n) across several runs.
/// Entries with zero uncertainty (the reference n = 1) pass through exactly;
/// photon numbers with no usable data give `None`.
pub fn average_ratios(runs: &[DeconvolvedStats], n_max: usize) -> Vec<Option<Measurement>> {
    (0..=n_max)
        .map(|n| {
            let entries: Vec<Measurement> = runs
                .iter()
                .filter_map(|r| r.ratio.get(n).copied().flatten())
                .filter(|m| m.std_error.is_finite())
                .collect();
            if entries.is_empty() {
                return None;
            }
            if let Some(exact) = entries.iter().find(|m| m.std_error == 0.0) {
                return Some(*exact);
            }
            let mut wsum = 0.0;
            let mut vsum = 0.0;
            for m in &entries {
                let w = 1.0 / (m.std_error * m.std_error);
                wsum += w;
                vsum += w * m.value;
            }
            Some(Measurement {
                value: vsum / wsum,
                std_error: (1.0 / wsum).sqrt(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, ArmEfficiencies, CountsTable, SystemConfig};

    fn table(
        n_triggers: f64,
        totals: &[f64],
        clicks: &[f64],
    ) -> CountsTable {
        let joint_noclick: Vec<f64> = totals.iter().zip(clicks).map(|(t, c)| t - c).collect();
        let t = CountsTable {
            n_triggers,
            n_bob: clicks.iter().sum(),
            n_coincidence: clicks.iter().skip(1).sum(),
            herald_totals: totals.to_vec(),
            joint_click: clicks.to_vec(),
            joint_noclick,
        };
        t.validate().unwrap();
        t
    }

    #[test]
    fn klyshko_hand_example() {
        // 2000 coincidences, 100 accidentals, no darks, 20000 receiver singles.
        let t = table(
            1_000_000.0,
            &[995_000.0, 5_000.0],
            &[18_000.0, 2_000.0],
        );
        assert_eq!(accidentals(&t), 100.0);
        let est = klyshko(&t, &DarkModel::zero(1)).unwrap();
        assert!((est.eta_t - 0.095).abs() < 1e-12);
        assert!((est.eta_b - 0.38).abs() < 1e-12);
        assert!(est.eta_t_in_range && est.eta_b_in_range);
    }

    #[test]
    fn klyshko_dark_corrections_subtract() {
        let t = table(
            1_000_000.0,
            &[995_000.0, 5_000.0],
            &[18_000.0, 2_000.0],
        );
        let dark = DarkModel {
            p_dark_bob: 0.01,
            p_dark_herald: 1e-4,
            bins: 8,
        };
        let est = klyshko(&t, &dark).unwrap();
        assert!((est.bob_darks - 50.0).abs() < 1e-12);
        assert!((est.herald_darks - 16.0).abs() < 1e-12);
        assert!((est.eta_t - (2000.0 - 100.0 - 16.0) / 20_000.0).abs() < 1e-12);
        assert!((est.eta_b - (2000.0 - 100.0 - 50.0) / 5_000.0).abs() < 1e-12);
    }

    #[test]
    fn klyshko_flags_unphysical_estimates() {
        // Accidentals exceed coincidences, driving both estimates negative.
        let t = table(
            10_000.0,
            &[8_000.0, 2_000.0],
            &[4_500.0, 500.0],
        );
        let est = klyshko(&t, &DarkModel::zero(1)).unwrap();
        assert!(est.eta_t < 0.0 && !est.eta_t_in_range);
        assert!(est.eta_b < 0.0 && !est.eta_b_in_range);
    }

    #[test]
    fn klyshko_rejects_degenerate_tables() {
        let empty_herald = table(1000.0, &[1000.0, 0.0], &[10.0, 0.0]);
        assert!(klyshko(&empty_herald, &DarkModel::zero(1)).is_err());
        let no_clicks = table(1000.0, &[900.0, 100.0], &[0.0, 0.0]);
        assert!(klyshko(&no_clicks, &DarkModel::zero(1)).is_err());
    }

    #[test]
    fn raw_conditional_probabilities_with_binomial_errors() {
        let t = table(
            59_995_639.0,
            &[52_293_265.0, 7_249_461.0, 437_613.0, 14_991.0, 309.0],
            &[3_049_176.0, 1_092_105.0, 102_653.0, 4_608.0, 112.0],
        );
        let p = conditional_probs_raw(&t);
        assert!((p[1].unwrap().value - 0.15064637219236024).abs() < 1e-15);
        assert!((p[1].unwrap().std_error - 1.328530e-4).abs() < 1e-8);
        assert!((p[4].unwrap().value - 0.36245954692556637).abs() < 1e-15);
        let empty = table(100.0, &[90.0, 10.0, 0.0], &[5.0, 2.0, 0.0]);
        assert!(conditional_probs_raw(&empty)[2].is_none());
    }

    #[test]
    fn identity_deconvolution_reproduces_raw_statistics() {
        let cfg = SystemConfig {
            n_triggers: 100_000,
            ..SystemConfig::default()
        };
        let counts = run(&cfg).unwrap();
        let matrix = ConvolutionMatrix::identity(cfg.bins, cfg.bins).unwrap();
        let dec = conditional_probs_deconvolved(&counts, &matrix).unwrap();
        let raw = conditional_probs_raw(&counts);
        for k in 0..=cfg.bins {
            match (raw[k], dec.p_click[k]) {
                (Some(r), Some(d)) => {
                    assert!((r.value - d.value).abs() < 1e-12, "k={k}");
                    // The Poisson cell model reduces to the binomial error here.
                    assert!((r.std_error - d.std_error).abs() < 1e-12, "k={k}");
                }
                (Some(r), None) => {
                    // Suppression may drop sparsely populated rows the raw view keeps.
                    assert!(counts.herald_totals[k] <= 4.0, "k={k}: raw {r:?}");
                }
                (None, d) => assert!(d.is_none(), "k={k}"),
            }
        }
    }

    #[test]
    fn deconvolution_suppresses_unpopulated_photon_numbers() {
        let cfg = SystemConfig {
            forced_pairs: Some(2),
            efficiencies: ArmEfficiencies {
                eta_t: 1.0,
                ..ArmEfficiencies::default()
            },
            p_dark_bob: 0.0,
            p_dark_herald: 0.0,
            n_triggers: 200_000,
            ..SystemConfig::default()
        };
        let counts = run(&cfg).unwrap();
        let matrix = ConvolutionMatrix::uniform(cfg.bins, 12).unwrap();
        let dec = conditional_probs_deconvolved(&counts, &matrix).unwrap();
        // Everything except n = 2 is consistent with zero.
        for n in 0..=cfg.bins {
            if n == 2 {
                let p = dec.p_click[2].expect("populated");
                let eta_b = cfg.efficiencies.eta_b();
                let truth = 1.0 - (1.0 - eta_b) * (1.0 - eta_b);
                assert!((p.value - truth).abs() < 5.0 * p.std_error);
            } else {
                assert!(dec.p_click[n].is_none(), "n={n}");
                assert!(dec.suppressed.contains(&n));
            }
        }
        // No reference probability at n = 1 means no ratios at all.
        assert!(dec.ratio.iter().all(|r| r.is_none()));
    }

    #[test]
    fn deconvolution_requires_matching_bins() {
        let t = table(100.0, &[90.0, 10.0], &[5.0, 2.0]);
        let matrix = ConvolutionMatrix::uniform(4, 8).unwrap();
        assert!(matches!(
            conditional_probs_deconvolved(&t, &matrix).unwrap_err(),
            Error::LengthMismatch { .. }
        ));
    }

    #[test]
    fn ratio_averaging_weights_by_inverse_variance() {
        let mk = |r2: f64, s2: f64| DeconvolvedStats {
            photon_totals: vec![],
            photon_clicks: vec![],
            p_click: vec![],
            ratio: vec![
                None,
                Some(Measurement {
                    value: 1.0,
                    std_error: 0.0,
                }),
                Some(Measurement {
                    value: r2,
                    std_error: s2,
                }),
            ],
            negative_clicks: vec![],
            suppressed: vec![],
        };
        let runs = [mk(2.0, 0.1), mk(3.0, 0.2)];
        let avg = average_ratios(&runs, 3);
        assert!(avg[0].is_none());
        let r1 = avg[1].unwrap();
        assert_eq!(r1.value, 1.0);
        assert_eq!(r1.std_error, 0.0);
        let r2 = avg[2].unwrap();
        assert!((r2.value - 2.2).abs() < 1e-12);
        assert!((r2.std_error - 0.0894427190999916).abs() < 1e-12);
        assert!(avg[3].is_none());
    }
}
