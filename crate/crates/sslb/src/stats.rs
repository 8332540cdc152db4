//! Paired two-sided Wilcoxon signed-rank test: average ranks for tied
//! |differences|, the exact null distribution for small samples and a
//! tie-corrected normal approximation above that.

use crate::error::{Error, Result};
use statrs::distribution::{ContinuousCDF, Normal};

/// Largest sample size whose exact null distribution is enumerated.
const EXACT_LIMIT: usize = 12;
/// Fewest nonzero differences admitting a meaningful two-sided p.
const MIN_NONZERO: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of the ranks of positive differences, W⁺.
    pub statistic: f64,
    /// Two-sided p-value in (0, 1].
    pub p_value: f64,
    /// Pairs remaining after zero differences were dropped.
    pub n_used: usize,
}

/// Two-sided signed-rank test of paired samples `a` vs `b`.
///
/// Differences `d_i = a_i − b_i` that are exactly zero are dropped; ranks of
/// tied |d| are averaged. For n ≤ 12 the p-value enumerates the full sign
/// distribution (ranks are kept doubled so tie averages stay integral); for
/// larger n it uses the normal approximation with tie-corrected variance and
/// a 0.5 continuity correction.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "paired samples must have equal lengths; got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numeric("non-finite difference in paired samples".into()));
    }
    let n = diffs.len();
    if n < MIN_NONZERO {
        return Err(Error::InsufficientData(format!(
            "{n} nonzero differences; the test needs at least {MIN_NONZERO}"
        )));
    }
    let (doubled, ties) = doubled_ranks(&diffs);
    let w2: u64 = diffs
        .iter()
        .zip(&doubled)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let p_value = if n <= EXACT_LIMIT { exact_p(&doubled, w2) } else { approx_p(n, &ties, w2) };
    Ok(WilcoxonResult { statistic: w2 as f64 / 2.0, p_value, n_used: n })
}

/// Ranks of |d| with ties averaged, kept doubled (`lo + hi` of each tied
/// group's 1-based positions) so every rank is an integer. Also returns the
/// tie group sizes for the variance correction.
fn doubled_ranks(diffs: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let n = diffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).expect("finite"));
    let mut doubled = vec![0u64; n];
    let mut ties = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        let rank2 = (i + j + 2) as u64;
        for k in i..=j {
            doubled[order[k]] = rank2;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (doubled, ties)
}

/// Exact two-sided p: a subset-sum count over doubled ranks gives the null
/// distribution of 2·W⁺; `p = min(1, 2·min(P(W ≤ w), P(W ≥ w)))`. Both tail
/// counts are integers and 2ⁿ is a power of two, so the division is exact.
fn exact_p(doubled: &[u64], w2: u64) -> f64 {
    let max: u64 = doubled.iter().sum();
    let mut counts = vec![0u64; max as usize + 1];
    counts[0] = 1;
    for &r in doubled {
        for s in (r..=max).rev() {
            counts[s as usize] += counts[(s - r) as usize];
        }
    }
    let le: u64 = counts[..=w2 as usize].iter().sum();
    let ge: u64 = counts[w2 as usize..].iter().sum();
    let total = (1u64 << doubled.len()) as f64;
    (2.0 * le.min(ge) as f64 / total).min(1.0)
}

/// Normal approximation with tie-corrected variance
/// `σ² = n(n+1)(2n+1)/24 − Σ(t³−t)/48` and a continuity correction that
/// never crosses the mean.
fn approx_p(n: usize, ties: &[usize], w2: u64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties
        .iter()
        .map(|&t| {
            let t = t as f64;
            (t * t * t - t) / 48.0
        })
        .sum();
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let w = w2 as f64 / 2.0;
    if w == mean || var <= 0.0 {
        return 1.0;
    }
    let continuity = 0.5_f64.min((w - mean).abs());
    let z = ((w - mean).abs() - continuity) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * (1.0 - normal.cdf(z))).min(1.0)
}
