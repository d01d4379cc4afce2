//! One-tailed paired t-test and Wilcoxon rank-sum test.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Combined size at or below which the rank-sum p-value is exact.
pub const EXACT_RANK_SUM_MAX: usize = 12;

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} contains non-finite values")));
    }
    Ok(())
}

/// `P(T > t)` for the paired differences `a - b` (alternative: `a > b`).
/// Zero-variance differences give 0 for a positive mean, 1 for a negative
/// mean and 0.5 when all differences are zero.
pub fn paired_t_one_tailed(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid(format!("paired t-test needs at least 2 pairs, got {n}")));
    }
    check_finite(a, "t-test sample")?;
    check_finite(b, "t-test sample")?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(if mean > 0.0 {
            0.0
        } else if mean < 0.0 {
            1.0
        } else {
            0.5
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("degrees of freedom are positive");
    Ok(dist.sf(t).clamp(0.0, 1.0))
}

/// Midranks (1-based) of `values` and the tie groups' sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        ties.push(end - start);
        start = end;
    }
    (ranks, ties)
}

fn pooled(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("rank-sum test needs two nonempty samples"));
    }
    check_finite(a, "rank-sum sample")?;
    check_finite(b, "rank-sum sample")?;
    Ok(a.iter().chain(b).copied().collect())
}

/// Exact `P(W >= w)` by enumerating every assignment of the pooled midranks.
pub fn rank_sum_exact(a: &[f64], b: &[f64]) -> Result<f64> {
    let all = pooled(a, b)?;
    let n = all.len();
    if n > 20 {
        return Err(Error::invalid(format!("exact enumeration over {n} values is not supported")));
    }
    let (ranks, _) = midranks(&all);
    let w: f64 = ranks[..a.len()].iter().sum();
    let (mut hits, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != a.len() {
            continue;
        }
        let s: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
        total += 1;
        if s >= w - 1e-9 {
            hits += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// Normal approximation with tie-corrected variance and continuity correction.
pub fn rank_sum_normal(a: &[f64], b: &[f64]) -> Result<f64> {
    let all = pooled(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let (ranks, ties) = midranks(&all);
    let w: f64 = ranks[..a.len()].iter().sum();
    let mean = na * (n + 1.0) / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0)).max(1.0);
    let var = na * nb / 12.0 * ((n + 1.0) - tie_term);
    if var <= 0.0 {
        return Ok(0.5);
    }
    let z = (w - mean - 0.5) / var.sqrt();
    Ok(Normal::standard().sf(z).clamp(0.0, 1.0))
}

/// One-tailed rank-sum p-value for `a > b`: exact for small samples, normal
/// approximation otherwise. A fully tied pool carries no evidence either way
/// and gives 0.5.
pub fn wilcoxon_rank_sum_one_tailed(a: &[f64], b: &[f64]) -> Result<f64> {
    let all = pooled(a, b)?;
    if all.iter().all(|&v| v == all[0]) {
        return Ok(0.5);
    }
    if all.len() <= EXACT_RANK_SUM_MAX {
        rank_sum_exact(a, b)
    } else {
        rank_sum_normal(a, b)
    }
}
