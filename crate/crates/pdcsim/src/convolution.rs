//! Occupancy statistics of photons thrown into the herald's detection bins.
//!
//! When n photons land independently in B bins, the herald reports k = number of
//! occupied bins. This module builds the conditional matrix C[k][n] = P(k | n)
//! exactly in rational arithmetic, together with the exact inverse of its square
//! (B+1) x (B+1) block, which converts observed click-number histograms back into
//! photon-number histograms.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Deconvolution refuses matrices with a 1-norm condition estimate above this.
pub const MAX_CONDITION: f64 = 1e12;

const MAX_UNIFORM_BINS: usize = 16;
const MAX_WEIGHTED_BINS: usize = 12;

/// Result of mapping a click-number histogram back to photon numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct Deconvolved {
    pub values: Vec<f64>,
    /// Indices where the solution came out negative (statistical fluctuation of the
    /// input); values are kept as-is so downstream error propagation stays honest.
    pub negative_indices: Vec<usize>,
}

/// Conditional distribution of occupied-bin counts given photon number.
#[derive(Clone, Debug)]
pub struct ConvolutionMatrix {
    bins: usize,
    n_max: usize,
    probs: Vec<Vec<f64>>,
    exact: Vec<Vec<BigRational>>,
    inverse: Vec<Vec<f64>>,
    condition: f64,
}

impl ConvolutionMatrix {
    /// Matrix for photons split uniformly over `bins` bins, with photon-number
    /// columns up to `n_max` (must be at least `bins` so the square block exists).
    ///
    /// C[k][n] = B(B-1)...(B-k+1) S(n,k) / B^n with S the Stirling numbers of the
    /// second kind, evaluated exactly.
    pub fn uniform(bins: usize, n_max: usize) -> Result<Self> {
        check_dims(bins, n_max, MAX_UNIFORM_BINS)?;
        let stirling = stirling2_table(n_max, bins);
        let b = BigInt::from(bins);
        let mut exact =
            vec![vec![BigRational::zero(); n_max + 1]; bins + 1];
        let mut b_pow_n = BigInt::one();
        for n in 0..=n_max {
            let mut falling = BigInt::one();
            for k in 0..=bins.min(n) {
                if k > 0 {
                    falling *= &b - BigInt::from(k - 1);
                }
                exact[k][n] = BigRational::new(&falling * &stirling[n][k], b_pow_n.clone());
            }
            b_pow_n *= &b;
        }
        Self::build(bins, n_max, exact)
    }

    /// Matrix for photons routed to bin i with probability proportional to
    /// `weights[i]`. Exact inclusion-exclusion over bin subsets; the cost grows as
    /// 2^bins, so this path is capped at 12 bins.
    pub fn with_weights(weights: &[f64], n_max: usize) -> Result<Self> {
        let bins = weights.len();
        check_dims(bins, n_max, MAX_WEIGHTED_BINS)?;
        let mut total = BigRational::zero();
        let mut w_exact = Vec::with_capacity(bins);
        for &w in weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidParameter {
                    name: "weights",
                    value: w,
                    reason: "entries must be finite and non-negative",
                });
            }
            let r = BigRational::from_float(w).expect("finite float");
            total += &r;
            w_exact.push(r);
        }
        if total.is_zero() {
            return Err(Error::InvalidParameter {
                name: "weights",
                value: 0.0,
                reason: "must have positive sum",
            });
        }
        let q: Vec<BigRational> = w_exact.into_iter().map(|w| w / &total).collect();

        // subset_power_sums[t][n] = sum over bin subsets T of size t of (sum of q in T)^n.
        let mut sums = vec![vec![BigRational::zero(); n_max + 1]; bins + 1];
        for mask in 0u32..(1 << bins) {
            let t = mask.count_ones() as usize;
            let mut q_t = BigRational::zero();
            for (i, qi) in q.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    q_t += qi;
                }
            }
            let mut power = BigRational::one();
            sums[t][0] += &power;
            for n in 1..=n_max {
                power *= &q_t;
                sums[t][n] += &power;
            }
        }

        // P(exactly the bins of S occupied) = sum_{T subset S} (-1)^(|S|-|T|) q_T^n,
        // and the number of size-k supersets S of a size-t subset T is C(B-t, k-t).
        let choose = binomial_table(bins);
        let mut exact = vec![vec![BigRational::zero(); n_max + 1]; bins + 1];
        for k in 0..=bins {
            for t in 0..=k {
                let count = BigRational::from_integer(choose[bins - t][k - t].clone());
                let sign_positive = (k - t) % 2 == 0;
                for n in 0..=n_max {
                    let term = &count * &sums[t][n];
                    if sign_positive {
                        exact[k][n] += term;
                    } else {
                        exact[k][n] -= term;
                    }
                }
            }
        }
        Self::build(bins, n_max, exact)
    }

    /// Clipped identity mapping: every photon lands in its own bin, and photon
    /// numbers beyond the bin count saturate the highest click number. Models the
    /// limit of a herald with vastly more bins than photons.
    pub fn identity(bins: usize, n_max: usize) -> Result<Self> {
        check_dims(bins, n_max, MAX_UNIFORM_BINS)?;
        let mut exact = vec![vec![BigRational::zero(); n_max + 1]; bins + 1];
        for n in 0..=n_max {
            exact[n.min(bins)][n] = BigRational::one();
        }
        Self::build(bins, n_max, exact)
    }

    fn build(bins: usize, n_max: usize, exact: Vec<Vec<BigRational>>) -> Result<Self> {
        #[cfg(debug_assertions)]
        for n in 0..=n_max {
            let col_sum: BigRational = (0..=bins).map(|k| exact[k][n].clone()).sum();
            debug_assert!(col_sum.is_one(), "column {n} of occupancy matrix must sum to 1");
        }
        let probs: Vec<Vec<f64>> = exact
            .iter()
            .map(|row| row.iter().map(rational_to_f64).collect())
            .collect();
        let inverse_exact = invert_exact(&exact, bins).ok_or(Error::IllConditioned {
            condition: f64::INFINITY,
        })?;
        let inverse: Vec<Vec<f64>> = inverse_exact
            .iter()
            .map(|row| row.iter().map(rational_to_f64).collect())
            .collect();
        let block: Vec<Vec<f64>> = (0..=bins)
            .map(|k| (0..=bins).map(|n| probs[k][n]).collect())
            .collect();
        let condition = one_norm(&block) * one_norm(&inverse);
        Ok(ConvolutionMatrix {
            bins,
            n_max,
            probs,
            exact,
            inverse,
            condition,
        })
    }

    #[inline]
    pub fn bins(&self) -> usize {
        self.bins
    }

    #[inline]
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// P(k occupied bins | n photons); zero outside the stored range.
    #[inline]
    pub fn prob(&self, k: usize, n: usize) -> f64 {
        self.probs
            .get(k)
            .and_then(|row| row.get(n))
            .copied()
            .unwrap_or(0.0)
    }

    /// Exact rational value of P(k | n).
    pub fn prob_exact(&self, k: usize, n: usize) -> BigRational {
        self.exact
            .get(k)
            .and_then(|row| row.get(n))
            .cloned()
            .unwrap_or_else(BigRational::zero)
    }

    /// Inverse of the (bins+1) x (bins+1) block, row-major.
    #[inline]
    pub fn inverse(&self) -> &[Vec<f64>] {
        &self.inverse
    }

    /// 1-norm condition estimate of the square block.
    #[inline]
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Forward map from a photon-number histogram to a click-number histogram.
    /// Input may be any length up to n_max + 1; missing entries count as zero.
    pub fn convolve(&self, photon_hist: &[f64]) -> Result<Vec<f64>> {
        if photon_hist.len() > self.n_max + 1 {
            return Err(Error::LengthMismatch {
                got: photon_hist.len(),
                expected: self.n_max + 1,
            });
        }
        Ok((0..=self.bins)
            .map(|k| {
                photon_hist
                    .iter()
                    .enumerate()
                    .map(|(n, x)| self.probs[k][n] * x)
                    .sum()
            })
            .collect())
    }

    /// Inverse map from a click-number histogram (length bins + 1) to the photon
    /// numbers 0..=bins. Refuses to run on an ill-conditioned block.
    pub fn deconvolve(&self, click_hist: &[f64]) -> Result<Deconvolved> {
        if click_hist.len() != self.bins + 1 {
            return Err(Error::LengthMismatch {
                got: click_hist.len(),
                expected: self.bins + 1,
            });
        }
        if !(self.condition <= MAX_CONDITION) {
            return Err(Error::IllConditioned {
                condition: self.condition,
            });
        }
        let values: Vec<f64> = self
            .inverse
            .iter()
            .map(|row| row.iter().zip(click_hist).map(|(a, y)| a * y).sum())
            .collect();
        let negative_indices = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v < 0.0)
            .map(|(i, _)| i)
            .collect();
        Ok(Deconvolved {
            values,
            negative_indices,
        })
    }
}

fn check_dims(bins: usize, n_max: usize, max_bins: usize) -> Result<()> {
    if bins == 0 || bins > max_bins {
        return Err(Error::InvalidParameter {
            name: "bins",
            value: bins as f64,
            reason: "must be between 1 and the supported maximum",
        });
    }
    if n_max < bins {
        return Err(Error::InvalidParameter {
            name: "n_max",
            value: n_max as f64,
            reason: "must be at least the bin count",
        });
    }
    Ok(())
}

/// Stirling numbers of the second kind S(n, k) for n <= n_max, k <= k_max.
fn stirling2_table(n_max: usize, k_max: usize) -> Vec<Vec<BigInt>> {
    let mut s = vec![vec![BigInt::zero(); k_max + 1]; n_max + 1];
    s[0][0] = BigInt::one();
    for n in 1..=n_max {
        for k in 1..=k_max.min(n) {
            let carry = s[n - 1][k - 1].clone();
            s[n][k] = BigInt::from(k) * &s[n - 1][k] + carry;
        }
    }
    s
}

fn binomial_table(n: usize) -> Vec<Vec<BigInt>> {
    let mut c = vec![vec![BigInt::zero(); n + 1]; n + 1];
    for i in 0..=n {
        c[i][0] = BigInt::one();
        for j in 1..=i {
            c[i][j] = &c[i - 1][j - 1] + &c[i - 1][j];
        }
    }
    c
}

/// Exact inverse of the leading (bins+1) x (bins+1) block, or None if singular.
fn invert_exact(exact: &[Vec<BigRational>], bins: usize) -> Option<Vec<Vec<BigRational>>> {
    let n = bins + 1;
    let mut aug: Vec<Vec<BigRational>> = (0..n)
        .map(|i| {
            let mut row: Vec<BigRational> = (0..n).map(|j| exact[i][j].clone()).collect();
            row.extend((0..n).map(|j| {
                if i == j {
                    BigRational::one()
                } else {
                    BigRational::zero()
                }
            }));
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !aug[r][col].is_zero())?;
        aug.swap(col, pivot);
        let p = aug[col][col].clone();
        for x in &mut aug[col] {
            *x /= &p;
        }
        for r in 0..n {
            if r != col && !aug[r][col].is_zero() {
                let f = aug[r][col].clone();
                for c in 0..2 * n {
                    let delta = &f * &aug[col][c];
                    aug[r][c] -= delta;
                }
            }
        }
    }
    Some(aug.into_iter().map(|row| row[n..].to_vec()).collect())
}

fn one_norm(m: &[Vec<f64>]) -> f64 {
    let cols = m[0].len();
    (0..cols)
        .map(|j| m.iter().map(|row| row[j].abs()).sum())
        .fold(0.0, f64::max)
}

/// Correctly rounded f64 from an exact rational, robust to huge numerators and
/// denominators (scales by powers of two before dividing).
fn rational_to_f64(r: &BigRational) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    let numer = r.numer();
    let denom = r.denom();
    let shift: i64 = 64 - (numer.bits() as i64 - denom.bits() as i64);
    let scaled = if shift >= 0 {
        numer << shift as usize
    } else {
        numer >> (-shift) as usize
    };
    let q = scaled / denom;
    let q_f = q.to_f64().expect("quotient fits 64 bits");
    q_f * 2f64.powi(-shift as i32)
}
