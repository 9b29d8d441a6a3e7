//! Small-sample statistics: IQM, Pearson correlation, Student-t CDF,
//! Wilcoxon signed-rank and paired t-tests.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use super::AnalysisError;

/// Largest effective sample size handled by the exact Wilcoxon null.
pub const WILCOXON_EXACT_MAX: usize = 12;

/// Interquartile mean with fractional boundary weights, so it is defined
/// for any sample size.
pub fn iqm(values: &[f64]) -> Result<f64, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() as f64;
    let (lo, hi) = (m / 4.0, 3.0 * m / 4.0);
    let mut acc = 0.0;
    for (i, x) in v.iter().enumerate() {
        let w = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
        acc += w * x;
    }
    Ok(acc / (hi - lo))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `P(T ≤ t)` for Student's t with `dof` degrees of freedom.
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let x = dof / (dof + t * t);
    let tail = 0.5 * beta_reg(dof / 2.0, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

fn t_two_sided(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = dof / (dof + t * t);
    beta_reg(dof / 2.0, 0.5, x).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub pearson_r: f64,
    pub n: usize,
    pub t_statistic: f64,
    pub p_two_sided: f64,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(AnalysisError::TooFewSamples { need: 3, got: n });
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(AnalysisError::DegenerateVariance);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let dof = (n - 2) as f64;
    let t = if r.abs() == 1.0 {
        r.signum() * f64::INFINITY
    } else {
        r * (dof / (1.0 - r * r)).sqrt()
    };
    Ok(CorrelationResult {
        pearson_r: r,
        n,
        t_statistic: t,
        p_two_sided: t_two_sided(t, dof),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairedTest {
    Wilcoxon,
    PairedT,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTestResult {
    pub test: PairedTest,
    pub statistic: f64,
    pub p_two_sided: f64,
    pub n_effective: usize,
    /// Whether the Wilcoxon p-value comes from the exact null.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact: Option<bool>,
}

fn differences(a: &[f64], b: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

/// Midranks of `values` (1-based), ties sharing the average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Exact two-sided p for `W+` under the sign-flip null, given midranks.
fn wilcoxon_exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    // Midranks are multiples of 1/2, so doubled ranks are integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let w = (2.0 * w_plus).round() as usize;
    let all = (1u64 << ranks.len()) as f64;
    let lower: u64 = counts[..=w].iter().sum();
    let upper: u64 = counts[w..].iter().sum();
    (2.0 * lower.min(upper) as f64 / all).min(1.0)
}

fn normal_upper(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Wilcoxon signed-rank test of `a − b`. Zero differences are dropped; the
/// null distribution is enumerated for up to [`WILCOXON_EXACT_MAX`] pairs.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<PairedTestResult, AnalysisError> {
    wilcoxon(a, b, false)
}

/// As [`wilcoxon_signed_rank`] but always using the tie- and
/// continuity-corrected normal approximation.
pub fn wilcoxon_signed_rank_normal(a: &[f64], b: &[f64]) -> Result<PairedTestResult, AnalysisError> {
    wilcoxon(a, b, true)
}

fn wilcoxon(a: &[f64], b: &[f64], force_normal: bool) -> Result<PairedTestResult, AnalysisError> {
    let d: Vec<f64> = differences(a, b)?.into_iter().filter(|x| *x != 0.0).collect();
    if d.is_empty() {
        return Err(AnalysisError::AllZeroDifferences);
    }
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let (p, exact) = if n <= WILCOXON_EXACT_MAX && !force_normal {
        (wilcoxon_exact_p(&ranks, w_plus), true)
    } else {
        let nf = n as f64;
        let mu = nf * (nf + 1.0) / 4.0;
        let mut ties = 0.0;
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        for group in sorted.chunk_by(|x, y| x == y) {
            let t = group.len() as f64;
            ties += t * t * t - t;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
        let p = if var <= 0.0 {
            1.0
        } else {
            let z = ((w_plus - mu).abs() - 0.5).max(0.0) / var.sqrt();
            (2.0 * normal_upper(z)).min(1.0)
        };
        (p, false)
    };
    Ok(PairedTestResult {
        test: PairedTest::Wilcoxon,
        statistic: w_plus,
        p_two_sided: p,
        n_effective: n,
        exact: Some(exact),
    })
}

/// Paired t-test of `a − b` with `n − 1` degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTestResult, AnalysisError> {
    let d = differences(a, b)?;
    let n = d.len();
    if n < 2 {
        return Err(AnalysisError::TooFewSamples { need: 2, got: n });
    }
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(AnalysisError::DegenerateVariance);
    }
    let t = m / (var.sqrt() / (n as f64).sqrt());
    Ok(PairedTestResult {
        test: PairedTest::PairedT,
        statistic: t,
        p_two_sided: t_two_sided(t, (n - 1) as f64),
        n_effective: n,
        exact: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn iqm_examples() {
        assert_eq!(iqm(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.5);
        assert_eq!(iqm(&[0.0, 0.0, 0.0, 100.0]).unwrap(), 0.0);
        assert_eq!(iqm(&[5.0]).unwrap(), 5.0);
        assert!(matches!(iqm(&[]), Err(AnalysisError::EmptyInput)));
        // M = 5: q = 1.25, the 2nd and 4th values get weight 0.75.
        let v = iqm(&[1.0, 2.0, 3.0, 4.0, 50.0]).unwrap();
        assert_abs_diff_eq!(v, (0.75 * 2.0 + 3.0 + 0.75 * 4.0) / 2.5, epsilon = 1e-12);
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let r = pearson(&x, &y).unwrap();
        assert_abs_diff_eq!(r.pearson_r, 1.0, epsilon = 1e-12);
        assert!(r.p_two_sided < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(pearson(&x, &y).unwrap().pearson_r, -1.0, epsilon = 1e-12);
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert_abs_diff_eq!(r.pearson_r, 0.5, epsilon = 1e-12);
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(AnalysisError::DegenerateVariance)
        ));
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn t_cdf_closed_forms() {
        assert_eq!(student_t_cdf(0.0, 7.0), 0.5);
        assert_abs_diff_eq!(student_t_cdf(1.0, 1.0), 0.75, epsilon = 1e-10);
        let t = 2f64.sqrt();
        let want = 0.5 + t / (2.0 * (2.0 + t * t).sqrt());
        assert_abs_diff_eq!(student_t_cdf(t, 2.0), want, epsilon = 1e-10);
        assert_abs_diff_eq!(want, 0.8535534, epsilon = 1e-7);
        for dof in [1.0, 3.0, 10.0, 50.0] {
            for t in [-3.3, -0.2, 0.7, 4.0] {
                let s = student_t_cdf(t, dof) + student_t_cdf(-t, dof);
                assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn wilcoxon_examples() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).unwrap();
        assert_eq!(r.statistic, 15.0);
        assert_abs_diff_eq!(r.p_two_sided, 0.0625, epsilon = 1e-15);
        let r = wilcoxon_signed_rank(&[1.0, -1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(r.p_two_sided, 1.0);
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0]),
            Err(AnalysisError::AllZeroDifferences)
        ));
        let r = wilcoxon_signed_rank(&[1.0, 0.0, 2.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(r.n_effective, 2);
    }

    #[test]
    fn paired_t_examples() {
        let r = paired_t_test(&[1.0, 1.0, 1.0, 2.0], &[0.0; 4]).unwrap();
        // mean 1.25, sd 0.5, n 4
        assert_abs_diff_eq!(r.statistic, 1.25 / (0.5 / 2.0), epsilon = 1e-12);
        let r = paired_t_test(&[1.0, -1.0, 1.0, -1.0], &[0.0; 4]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_abs_diff_eq!(r.p_two_sided, 1.0, epsilon = 1e-9);
        assert!(matches!(
            paired_t_test(&[1.0, 2.0], &[0.0, 1.0]),
            Err(AnalysisError::DegenerateVariance)
        ));
    }

    #[test]
    fn midrank_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
