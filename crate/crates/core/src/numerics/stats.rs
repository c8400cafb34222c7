//! Two-sample hypothesis tests.

use super::dist::{normal_two_sided_p, t_two_sided_p};
use super::NumericsError;

/// Result of a two-sample test. `statistic` is `t` or `U` depending on the test.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Variance assumption for [`two_sample_t`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TTestKind {
    /// Student's test with a pooled variance estimate, `na + nb − 2` dof.
    #[default]
    Pooled,
    /// Welch's unequal-variance test with Welch–Satterthwaite dof.
    Welch,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n - 1.0))
}

fn check_finite(x: &[f64]) -> Result<(), NumericsError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite)
    }
}

/// Two-sample t-test of `mean(a) − mean(b)`, two-sided.
pub fn two_sample_t(a: &[f64], b: &[f64], kind: TTestKind) -> Result<TestResult, NumericsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(NumericsError::InsufficientSamples {
            needed: 2,
            found: a.len().min(b.len()),
        });
    }
    check_finite(a)?;
    check_finite(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let diff = ma - mb;
    let (se, dof) = match kind {
        TTestKind::Pooled => {
            let sp2 = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
            ((sp2 * (1.0 / na + 1.0 / nb)).sqrt(), na + nb - 2.0)
        }
        TTestKind::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let se2 = qa + qb;
            let dof = if se2 > 0.0 {
                se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0))
            } else {
                na + nb - 2.0
            };
            (se2.sqrt(), dof)
        }
    };
    if diff == 0.0 {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
        });
    }
    if se == 0.0 {
        return Ok(TestResult {
            statistic: diff.signum() * f64::INFINITY,
            p_value: 0.0,
        });
    }
    let t = diff / se;
    Ok(TestResult {
        statistic: t,
        p_value: t_two_sided_p(t, dof),
    })
}

/// Midranks (1-based) of the pooled sample, plus `Σ(t³ − t)` over tie groups.
fn midranks(pooled: &[f64]) -> (Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && pooled[idx[j]] == pooled[idx[i]] {
            j += 1;
        }
        // positions i..j share rank (i+1 + j)/2
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    (ranks, tie_term)
}

/// Mann–Whitney U for sample `a` against `b`, two-sided.
///
/// `U_a = R_a − na(na+1)/2` with midranks for ties, so `U_a` counts pairs with
/// `a > b` plus half the tied pairs. The p-value uses the normal
/// approximation with tie-corrected variance
/// `na·nb/12 · ((n+1) − Σ(t³−t)/(n(n−1)))` and a 0.5 continuity correction.
/// This is the usual large-sample form; it is not exact for very small samples.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult, NumericsError> {
    if a.is_empty() || b.is_empty() {
        return Err(NumericsError::EmptySample);
    }
    check_finite(a)?;
    check_finite(b)?;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, tie_term) = midranks(&pooled);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let rank_sum_a: f64 = ranks[..a.len()].iter().sum();
    let u = rank_sum_a - na * (na + 1.0) / 2.0;

    let mu = na * nb / 2.0;
    let var = if n > 1.0 {
        na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)))
    } else {
        0.0
    };
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
        normal_two_sided_p(z)
    };
    Ok(TestResult {
        statistic: u,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples_give_zero_statistic() {
        let a = [1.0, 2.0, 3.0];
        let r = two_sample_t(&a, &a, TTestKind::Pooled).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = two_sample_t(&a, &a, TTestKind::Welch).unwrap();
        assert_eq!(r, TestResult { statistic: 0.0, p_value: 1.0 });
    }

    #[test]
    fn t_test_needs_two_per_arm() {
        assert!(matches!(
            two_sample_t(&[1.0], &[1.0, 2.0], TTestKind::Pooled),
            Err(NumericsError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn constant_but_different_samples() {
        let r = two_sample_t(&[1.0, 1.0], &[2.0, 2.0], TTestKind::Pooled).unwrap();
        assert_eq!(r.statistic, f64::NEG_INFINITY);
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn u_extremes() {
        assert_eq!(mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap().statistic, 0.0);
        assert_eq!(mann_whitney_u(&[3.0, 4.0], &[1.0, 2.0]).unwrap().statistic, 4.0);
        assert!(matches!(mann_whitney_u(&[], &[1.0]), Err(NumericsError::EmptySample)));
    }

    #[test]
    fn u_with_ties_counts_half_pairs() {
        // pairs: (1,1)=0.5, (1,2)=0, (2,1)=1, (2,2)=0.5
        let r = mann_whitney_u(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(r.statistic, 2.0);
        assert_eq!(r.p_value, 1.0);
        // all tied: zero variance
        let r = mann_whitney_u(&[5.0, 5.0], &[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(r.statistic, 3.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn midranks_average_tie_positions() {
        let (r, tie) = midranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(tie, 6.0);
    }
}
