//! Photon-number distributions of the pair source, with verified truncation.

use crate::error::{Error, Result};

/// Default truncation point for pair-number distributions.
pub const DEFAULT_M_MAX: usize = 40;

/// Tail mass a truncated distribution is allowed to discard.
pub const TAIL_BUDGET: f64 = 1e-9;

/// Distribution of the number of photon pairs emitted in one pump pulse,
/// truncated to a finite support 0..=m_max.
#[derive(Clone, Debug, PartialEq)]
pub struct PhotonNumberDistribution {
    probs: Vec<f64>,
    mean: f64,
}

impl PhotonNumberDistribution {
    /// Poisson distribution with the given mean, truncated at `m_max`.
    ///
    /// Fails if the discarded tail cannot be bounded below [`TAIL_BUDGET`]. The bound
    /// used is the geometric-series majorant pmf(M+1) / (1 - mean/(M+2)).
    pub fn poisson(mean: f64, m_max: usize) -> Result<Self> {
        if !mean.is_finite() || mean < 0.0 {
            return Err(Error::InvalidParameter {
                name: "mean",
                value: mean,
                reason: "must be finite and non-negative",
            });
        }
        let mut probs = Vec::with_capacity(m_max + 1);
        let mut p = (-mean).exp();
        for m in 0..=m_max {
            probs.push(p);
            p *= mean / (m + 1) as f64;
        }
        // After the loop `p` is pmf(m_max + 1).
        let tail = if mean < (m_max + 2) as f64 {
            p / (1.0 - mean / (m_max + 2) as f64)
        } else {
            f64::INFINITY
        };
        if !(tail < TAIL_BUDGET) {
            return Err(Error::TruncationTooCoarse { m_max, mean, tail });
        }
        Ok(Self::from_vec(probs))
    }

    /// Poisson distribution truncated at an automatically chosen point that keeps the
    /// tail far below budget (at least [`DEFAULT_M_MAX`], grows with the mean).
    pub fn poisson_auto(mean: f64) -> Result<Self> {
        if !mean.is_finite() || mean < 0.0 {
            return Err(Error::InvalidParameter {
                name: "mean",
                value: mean,
                reason: "must be finite and non-negative",
            });
        }
        let mut m_max = DEFAULT_M_MAX.max((mean + 10.0 * mean.sqrt() + 10.0).ceil() as usize);
        for _ in 0..8 {
            match Self::poisson(mean, m_max) {
                Ok(d) => return Ok(d),
                Err(_) => m_max += m_max / 2 + 10,
            }
        }
        Self::poisson(mean, m_max)
    }

    /// Deterministic source that emits exactly `m` pairs per pulse.
    pub fn point_mass(m: usize) -> Self {
        let mut probs = vec![0.0; m + 1];
        probs[m] = 1.0;
        Self::from_vec(probs)
    }

    /// Arbitrary distribution from raw probabilities (index = pair number).
    ///
    /// Entries must lie in [0, 1] and sum to 1 within 1e-9 from below (a truncated
    /// tail is allowed, a surplus is not, beyond float rounding).
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParameter {
                name: "probs",
                value: 0.0,
                reason: "must be non-empty",
            });
        }
        for &p in probs {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "probs",
                    value: p,
                    reason: "entries must lie in [0, 1]",
                });
            }
        }
        let sum: f64 = probs.iter().sum();
        if !(1.0 - 1e-9..=1.0 + 1e-12).contains(&sum) {
            return Err(Error::InvalidParameter {
                name: "probs",
                value: sum,
                reason: "must sum to 1 within 1e-9",
            });
        }
        Ok(Self::from_vec(probs.to_vec()))
    }

    fn from_vec(probs: Vec<f64>) -> Self {
        let mean = probs.iter().enumerate().map(|(m, p)| m as f64 * p).sum();
        PhotonNumberDistribution { probs, mean }
    }

    /// Distribution of survivors after each photon independently passes with
    /// probability `eta`.
    pub fn thinned(&self, eta: f64) -> Result<Self> {
        check_unit_interval("eta", eta)?;
        let m_max = self.m_max();
        let rows = binomial_pmf_rows(m_max, eta);
        let mut probs = vec![0.0; m_max + 1];
        for (m, row) in rows.iter().enumerate() {
            let w = self.probs[m];
            if w > 0.0 {
                for (k, b) in row.iter().enumerate() {
                    probs[k] += w * b;
                }
            }
        }
        Ok(Self::from_vec(probs))
    }

    #[inline]
    pub fn pmf(&self, m: usize) -> f64 {
        self.probs.get(m).copied().unwrap_or(0.0)
    }

    #[inline]
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn m_max(&self) -> usize {
        self.probs.len() - 1
    }

    /// Mean of the truncated distribution.
    #[inline]
    pub fn mean(&self) -> f64 {
        self.mean
    }
}

/// Binomial pmf rows `rows[m][k] = P(Bin(m, eta) = k)` for all m up to `m_max`.
///
/// Built by the Pascal update row(m+1)[k] = row(m)[k] (1-eta) + row(m)[k-1] eta,
/// which is a convex combination at every step and exact at eta = 0 and eta = 1.
pub(crate) fn binomial_pmf_rows(m_max: usize, eta: f64) -> Vec<Vec<f64>> {
    let mut rows = Vec::with_capacity(m_max + 1);
    let mut row = vec![0.0; m_max + 1];
    row[0] = 1.0;
    rows.push(row.clone());
    for m in 1..=m_max {
        for k in (1..=m).rev() {
            row[k] = row[k] * (1.0 - eta) + row[k - 1] * eta;
        }
        row[0] *= 1.0 - eta;
        rows.push(row.clone());
    }
    rows
}

pub(crate) fn check_unit_interval(name: &'static str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) || !value.is_finite() {
        return Err(Error::InvalidParameter {
            name,
            value,
            reason: "must lie in [0, 1]",
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn poisson_frozen_values() {
        let d = PhotonNumberDistribution::poisson(0.84, DEFAULT_M_MAX).unwrap();
        assert!(close(d.pmf(0), 0.431710523429080, 1e-14));
        assert!(close(d.pmf(1), 0.362636839680427, 1e-14));
        assert!(close(d.pmf(2), 0.152307472665779, 1e-14));
        assert!(close(d.mean(), 0.84, 1e-9));
        assert!(close(d.probs().iter().sum::<f64>(), 1.0, 1e-12));
    }

    #[test]
    fn poisson_rejects_coarse_truncation() {
        let err = PhotonNumberDistribution::poisson(5.0, 6).unwrap_err();
        assert!(matches!(err, Error::TruncationTooCoarse { m_max: 6, .. }));
        assert!(PhotonNumberDistribution::poisson(5.0, 60).is_ok());
    }

    #[test]
    fn poisson_auto_grows_with_mean() {
        let small = PhotonNumberDistribution::poisson_auto(0.84).unwrap();
        assert_eq!(small.m_max(), DEFAULT_M_MAX);
        let large = PhotonNumberDistribution::poisson_auto(30.0).unwrap();
        assert!(large.m_max() > DEFAULT_M_MAX);
        assert!(close(large.mean(), 30.0, 1e-6));
    }

    #[test]
    fn point_mass_is_deterministic() {
        let d = PhotonNumberDistribution::point_mass(3);
        assert_eq!(d.pmf(3), 1.0);
        assert_eq!(d.pmf(2), 0.0);
        assert_eq!(d.pmf(4), 0.0);
        assert_eq!(d.mean(), 3.0);
    }

    #[test]
    fn from_probs_validates() {
        assert!(PhotonNumberDistribution::from_probs(&[0.5, 0.5]).is_ok());
        assert!(PhotonNumberDistribution::from_probs(&[]).is_err());
        assert!(PhotonNumberDistribution::from_probs(&[0.5, 0.6]).is_err());
        assert!(PhotonNumberDistribution::from_probs(&[1.2, -0.2]).is_err());
        assert!(PhotonNumberDistribution::from_probs(&[0.5, 0.4]).is_err());
        // A truncated tail within budget is fine.
        assert!(PhotonNumberDistribution::from_probs(&[0.6, 0.4 - 1e-10]).is_ok());
    }

    #[test]
    fn thinned_frozen_values() {
        let d = PhotonNumberDistribution::poisson(0.84, DEFAULT_M_MAX).unwrap();
        let t = d.thinned(0.1776).unwrap();
        assert!(close(t.pmf(0), 0.861410600765564, 1e-13));
        assert!(close(t.pmf(1), 0.128508679064610, 1e-13));
        assert!(close(t.pmf(2), 0.009585719388787, 1e-13));
    }

    #[test]
    fn thinning_edge_cases() {
        let d = PhotonNumberDistribution::poisson(0.5, DEFAULT_M_MAX).unwrap();
        let all = d.thinned(1.0).unwrap();
        for m in 0..=d.m_max() {
            assert_eq!(all.pmf(m), d.pmf(m));
        }
        let none = d.thinned(0.0).unwrap();
        assert_eq!(none.pmf(0), 1.0);
        assert!(d.thinned(1.5).is_err());
        assert!(d.thinned(-0.1).is_err());
    }

    #[test]
    fn binomial_rows_match_direct_formula() {
        let rows = binomial_pmf_rows(6, 0.3);
        // C(6,2) 0.3^2 0.7^4 = 15 * 0.09 * 0.2401
        assert!(close(rows[6][2], 15.0 * 0.09 * 0.2401, 1e-15));
        assert!(close(rows[4][0], 0.7f64.powi(4), 1e-15));
        for row in &rows {
            assert!(close(row.iter().sum::<f64>(), 1.0, 1e-12));
        }
    }

    proptest! {
        // Thinning a Poisson source by eta gives a Poisson source of mean eta * mean.
        #[test]
        fn thinned_poisson_is_poisson(mean in 0.01f64..2.0, eta in 0.0f64..1.0) {
            let d = PhotonNumberDistribution::poisson(mean, DEFAULT_M_MAX).unwrap();
            let t = d.thinned(eta).unwrap();
            let direct = PhotonNumberDistribution::poisson(mean * eta, DEFAULT_M_MAX).unwrap();
            for m in 0..=DEFAULT_M_MAX {
                prop_assert!(close(t.pmf(m), direct.pmf(m), 1e-11));
            }
            prop_assert!(close(t.mean(), eta * mean, 1e-9));
        }

        #[test]
        fn thinning_preserves_total_mass(mean in 0.0f64..3.0, eta in 0.0f64..1.0) {
            let d = PhotonNumberDistribution::poisson_auto(mean).unwrap();
            let t = d.thinned(eta).unwrap();
            let sum: f64 = t.probs().iter().sum();
            prop_assert!(close(sum, 1.0, 1e-11));
        }
    }
}
