//! Two-sided Wilcoxon signed-rank test for paired samples.
//!
//! Zero differences are dropped, tied magnitudes share their mid-rank. Up to
//! [`EXACT_LIMIT`] non-zero differences the p-value comes from the exact
//! permutation distribution of the positive-rank sum (every sign pattern
//! equally likely, ties included); above that a normal approximation with the
//! tie-corrected variance and no continuity correction is used.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const EXACT_LIMIT: usize = 25;

/// Mid-ranks (1-based) of `values`; ties get the average of their positions.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Signed-rank statistic of a paired sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedRanks {
    /// Mid-ranks of |x - y| over the non-zero differences.
    pub ranks: Vec<f64>,
    /// Whether each ranked difference is positive.
    pub positive: Vec<bool>,
}

impl SignedRanks {
    pub fn from_pairs(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                left: x.len(),
                right: y.len(),
            });
        }
        if x.is_empty() {
            return Err(Error::InvalidParameter("wilcoxon test needs at least one pair".into()));
        }
        let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
        let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
        Ok(Self {
            ranks: mid_ranks(&magnitudes),
            positive: diffs.iter().map(|d| *d > 0.0).collect(),
        })
    }

    /// Sum of ranks carried by positive differences.
    pub fn w_plus(&self) -> f64 {
        self.ranks
            .iter()
            .zip(&self.positive)
            .filter(|(_, p)| **p)
            .map(|(r, _)| r)
            .sum()
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }
}

/// Two-sided p-value; 1 when every difference is zero.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<f64> {
    let sr = SignedRanks::from_pairs(x, y)?;
    if sr.is_empty() {
        return Ok(1.0);
    }
    let p = if sr.len() <= EXACT_LIMIT {
        exact_p(&sr)
    } else {
        normal_p(&sr)
    };
    Ok(p.clamp(0.0, 1.0))
}

fn exact_p(sr: &SignedRanks) -> f64 {
    // mid-ranks are multiples of 1/2, so doubled ranks are integers
    let doubled: Vec<usize> = sr.ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    let mut counts = vec![0u64; max_sum + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let observed = (2.0 * sr.w_plus()).round() as usize;
    let total = 2f64.powi(sr.len() as i32);
    let lower: u64 = counts[..=observed].iter().sum();
    let upper: u64 = counts[observed..].iter().sum();
    (2.0 * lower.min(upper) as f64 / total).min(1.0)
}

fn normal_p(sr: &SignedRanks) -> f64 {
    let n = sr.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut magnitudes = sr.ranks.clone();
    magnitudes.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < magnitudes.len() {
        let j = magnitudes[i..].iter().take_while(|&&r| r == magnitudes[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = (sr.w_plus() - mean) / var.sqrt();
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_give_one() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(wilcoxon_signed_rank(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn all_positive_six() {
        // one of 64 sign patterns reaches W+ = 21, doubled for two sides
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = [0.0; 6];
        assert_eq!(wilcoxon_signed_rank(&x, &y).unwrap(), 2.0 / 64.0);
        assert_eq!(wilcoxon_signed_rank(&y, &x).unwrap(), 2.0 / 64.0);
    }

    #[test]
    fn mid_ranks_average_ties() {
        assert_eq!(mid_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn zero_differences_are_dropped() {
        let sr = SignedRanks::from_pairs(&[1.0, 5.0, 2.0], &[1.0, 3.0, 3.0]).unwrap();
        assert_eq!(sr.len(), 2);
        assert_eq!(sr.w_plus(), 2.0);
    }

    #[test]
    fn length_errors() {
        assert!(wilcoxon_signed_rank(&[1.0], &[1.0, 2.0]).is_err());
        assert!(wilcoxon_signed_rank(&[], &[]).is_err());
    }

    #[test]
    fn normal_branch_is_near_exact_at_the_boundary() {
        let x: Vec<f64> = (1..=26).map(|i| if i % 3 == 0 { -(i as f64) } else { i as f64 }).collect();
        let y = vec![0.0; 26];
        let sr = SignedRanks::from_pairs(&x, &y).unwrap();
        let (e, n) = (exact_p(&sr), normal_p(&sr));
        assert!((e - n).abs() < 0.01, "exact {e} normal {n}");
    }
}
