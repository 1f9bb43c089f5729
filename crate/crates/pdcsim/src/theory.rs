//! Closed-form click statistics of the heralded source, photon-number resolved.
//!
//! All conditionals here refer to the true photon number n seen by the herald arm
//! (after its loss), before any binning of the herald detector. Binning effects are
//! handled by the occupancy matrix and by the expectation module.

use crate::dist::{binomial_pmf_rows, check_unit_interval, PhotonNumberDistribution};
use crate::error::{Error, Result};

/// Probability that a detector of efficiency `eta` fires on at least one of `m`
/// photons: 1 - (1 - eta)^m.
pub fn click_probability(m: u32, eta: f64) -> Result<f64> {
    check_unit_interval("eta", eta)?;
    Ok(1.0 - (1.0 - eta).powi(m as i32))
}

/// P(receiver clicks | herald arm kept exactly n photons), for a source emitting
/// m pairs with distribution `dist`, herald transmission `eta_t` and total receiver
/// efficiency `eta_b`.
///
/// Conditioning reweights the pair number: w_m = pmf(m) C(m,n) eta_t^n (1-eta_t)^(m-n),
/// and each of the m partner photons reaches the receiver independently.
pub fn conditional_click_probability(
    dist: &PhotonNumberDistribution,
    n: usize,
    eta_t: f64,
    eta_b: f64,
) -> Result<f64> {
    check_unit_interval("eta_b", eta_b)?;
    let noclick = noclick_powers(dist.m_max(), eta_b, 1.0);
    conditional_click_with_survival(dist, n, eta_t, &noclick)
}

/// Same as [`conditional_click_probability`] with a dark-count probability folded
/// into the receiver: the gate stays dark only if photons and darks all miss.
pub fn conditional_click_probability_with_dark(
    dist: &PhotonNumberDistribution,
    n: usize,
    eta_t: f64,
    eta_b: f64,
    p_dark: f64,
) -> Result<f64> {
    check_unit_interval("eta_b", eta_b)?;
    check_unit_interval("p_dark", p_dark)?;
    let noclick = noclick_powers(dist.m_max(), eta_b, 1.0 - p_dark);
    conditional_click_with_survival(dist, n, eta_t, &noclick)
}

/// Fully general form: `noclick_by_m[m]` is the probability the receiver stays
/// silent when the source emitted m pairs. Lets callers model any receiver response.
pub fn conditional_click_with_survival(
    dist: &PhotonNumberDistribution,
    n: usize,
    eta_t: f64,
    noclick_by_m: &[f64],
) -> Result<f64> {
    check_unit_interval("eta_t", eta_t)?;
    let m_max = dist.m_max();
    if noclick_by_m.len() < m_max + 1 {
        return Err(Error::LengthMismatch {
            got: noclick_by_m.len(),
            expected: m_max + 1,
        });
    }
    for &q in &noclick_by_m[..=m_max] {
        check_unit_interval("noclick_by_m", q)?;
    }
    if n > m_max {
        return Err(Error::ImpossibleCondition { n });
    }
    let rows = binomial_pmf_rows(m_max, eta_t);
    let mut weight_sum = 0.0;
    let mut click_sum = 0.0;
    for m in n..=m_max {
        let w = dist.pmf(m) * rows[m][n];
        weight_sum += w;
        click_sum += w * (1.0 - noclick_by_m[m]);
    }
    if weight_sum < 1e-300 {
        return Err(Error::ImpossibleCondition { n });
    }
    Ok(click_sum / weight_sum)
}

/// Click-probability ratio r(n) = P(click | n) / P(click | 1).
pub fn ratio_r(
    dist: &PhotonNumberDistribution,
    n: usize,
    eta_t: f64,
    eta_b: f64,
) -> Result<f64> {
    let p_n = conditional_click_probability(dist, n, eta_t, eta_b)?;
    let p_1 = conditional_click_probability(dist, 1, eta_t, eta_b)?;
    Ok(p_n / p_1)
}

/// Ratio r(n) with receiver dark counts folded in.
pub fn ratio_r_with_dark(
    dist: &PhotonNumberDistribution,
    n: usize,
    eta_t: f64,
    eta_b: f64,
    p_dark: f64,
) -> Result<f64> {
    let p_n = conditional_click_probability_with_dark(dist, n, eta_t, eta_b, p_dark)?;
    let p_1 = conditional_click_probability_with_dark(dist, 1, eta_t, eta_b, p_dark)?;
    Ok(p_n / p_1)
}

/// noclick_by_m[m] = (1 - eta)^m * base, the silence probability of a binary
/// detector seeing m photons, with `base` the silence probability at m = 0.
fn noclick_powers(m_max: usize, eta: f64, base: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(m_max + 1);
    let mut q = base;
    for _ in 0..=m_max {
        v.push(q);
        q *= 1.0 - eta;
    }
    v
}
