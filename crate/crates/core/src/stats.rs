//! Wilcoxon signed-rank test, Pearson correlation with a Student-t p-value,
//! and percentile bootstrap intervals for the mean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::{beta::beta_reg, erf::erfc};

use crate::error::{Error, Result};

/// Largest number of non-zero differences for which the exact null
/// distribution is enumerated.
pub const EXACT_MAX_N: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WilcoxonMode {
    Exact,
    NormalApprox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of the ranks of the positive differences.
    pub w_statistic: f64,
    /// Differences left after dropping exact zeros.
    pub n_effective: usize,
    pub p_two_sided: f64,
    pub mode: WilcoxonMode,
    /// Every difference was zero; the test is uninformative and p is 1.
    pub degenerate: bool,
}

impl WilcoxonResult {
    pub fn is_significant(&self, alpha: f64) -> bool {
        self.p_two_sided < alpha
    }
}

/// Ranks of `values` (1-based) with ties sharing their average rank,
/// returned doubled so that every rank is an integer.
fn doubled_ranks(values: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // average of ranks (i+1)..=(j+1), doubled
        let doubled = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        if j > i {
            tie_sizes.push(j - i + 1);
        }
        i = j + 1;
    }
    (ranks, tie_sizes)
}

/// Two-sided Wilcoxon signed-rank test of the differences against zero.
///
/// Zero differences are dropped, tied magnitudes get average ranks. With at
/// most [`EXACT_MAX_N`] remaining differences the p-value comes from the
/// exact permutation distribution of the (tie-aware) rank sum; beyond that a
/// normal approximation with tie-corrected variance and a 0.5 continuity
/// correction is used.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<WilcoxonResult> {
    if diffs.is_empty() {
        return Err(Error::invalid("Wilcoxon test needs at least one difference"));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("Wilcoxon test got a non-finite difference"));
    }
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            w_statistic: 0.0,
            n_effective: 0,
            p_two_sided: 1.0,
            mode: WilcoxonMode::Exact,
            degenerate: true,
        });
    }
    let magnitudes: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let (ranks, tie_sizes) = doubled_ranks(&magnitudes);
    let w2: u64 = ranks
        .iter()
        .zip(&nonzero)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| *r)
        .sum();
    let w = w2 as f64 / 2.0;

    let (p, mode) = if n <= EXACT_MAX_N {
        (exact_p(&ranks, w2), WilcoxonMode::Exact)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = tie_sizes
            .iter()
            .map(|&t| {
                let t = t as f64;
                t * t * t - t
            })
            .sum::<f64>()
            / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let p = if var <= 0.0 {
            1.0
        } else {
            let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
            erfc(z / std::f64::consts::SQRT_2).min(1.0)
        };
        (p, WilcoxonMode::NormalApprox)
    };

    Ok(WilcoxonResult {
        w_statistic: w,
        n_effective: n,
        p_two_sided: p,
        mode,
        degenerate: false,
    })
}

/// Exact two-sided p-value: the null places each rank in the positive sum
/// independently with probability 1/2, so the count of sign assignments
/// reaching each doubled sum follows from a subset-sum recursion.
fn exact_p(doubled_ranks: &[u64], observed: u64) -> f64 {
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all = (1u64 << doubled_ranks.len()) as f64;
    let obs = observed as usize;
    let lower: u64 = counts[..=obs].iter().sum();
    let upper: u64 = counts[obs..].iter().sum();
    (2.0 * lower.min(upper) as f64 / all).min(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PearsonResult {
    pub r: f64,
    pub p_two_sided: f64,
    pub n: usize,
}

/// Two-sided p-value of a Student-t statistic with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

/// Standard normal upper tail, `P(Z > z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<PearsonResult> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "pearson: length mismatch ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::invalid(format!("pearson: need n >= 3, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("pearson: non-finite input"));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("pearson: zero variance, r is undefined"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = nf - 2.0;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        student_t_two_sided(t, df)
    };
    Ok(PearsonResult {
        r,
        p_two_sided: p,
        n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    pub level: f64,
    /// Number of resamples; 0 when the interval was not resampled.
    pub b: usize,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval of the mean.
///
/// Resample `i` draws from its own ChaCha stream (`seed`, stream `i`), so the
/// interval does not depend on how resamples are scheduled.
pub fn bootstrap_ci(samples: &[f64], b: usize, level: f64, seed: u64) -> Result<BootstrapCi> {
    if samples.len() < 2 {
        return Err(Error::invalid("bootstrap needs at least 2 samples"));
    }
    if b < 100 {
        return Err(Error::invalid(format!("bootstrap needs b >= 100, got {b}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level {level} outside (0, 1)")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("bootstrap: non-finite sample"));
    }
    if samples.iter().all(|v| *v == samples[0]) {
        return Ok(BootstrapCi {
            low: samples[0],
            high: samples[0],
            level,
            b,
        });
    }
    let n = samples.len();
    let mut means: Vec<f64> = (0..b)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let sum: f64 = (0..n).map(|_| samples[rng.random_range(0..n)]).sum();
            sum / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapCi {
        low: quantile_sorted(&means, tail),
        high: quantile_sorted(&means, 1.0 - tail),
        level,
        b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn five_positive_distinct() {
        let w = wilcoxon_signed_rank(&[0.5, 1.5, 2.5, 3.5, 4.5]).unwrap();
        assert_eq!(w.w_statistic, 15.0);
        assert_eq!(w.n_effective, 5);
        assert_eq!(w.mode, WilcoxonMode::Exact);
        assert_eq!(w.p_two_sided, 0.0625);
    }

    #[test]
    fn symmetric_pairs_give_p_one() {
        let w = wilcoxon_signed_rank(&[1.0, -1.0, 2.0, -2.0, 3.0, -3.0]).unwrap();
        // n(n+1)/4 with n = 6
        assert_eq!(w.w_statistic, 10.5);
        assert_eq!(w.p_two_sided, 1.0);
    }

    #[test]
    fn zeros_are_dropped_and_all_zero_is_degenerate() {
        let w = wilcoxon_signed_rank(&[0.0, 1.0, 2.0, 0.0]).unwrap();
        assert_eq!(w.n_effective, 2);
        let d = wilcoxon_signed_rank(&[0.0, 0.0]).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.p_two_sided, 1.0);
        assert!(wilcoxon_signed_rank(&[]).is_err());
        assert!(wilcoxon_signed_rank(&[f64::NAN]).is_err());
    }

    #[test]
    fn ties_get_average_ranks() {
        // |d| = 1,1,2 -> ranks 1.5,1.5,3; positives are the first and third
        let w = wilcoxon_signed_rank(&[1.0, -1.0, 2.0]).unwrap();
        assert_eq!(w.w_statistic, 4.5);
    }

    #[test]
    fn twenty_equal_negatives() {
        let w = wilcoxon_signed_rank(&[-0.3; 20]).unwrap();
        assert_eq!(w.w_statistic, 0.0);
        assert_abs_diff_eq!(w.p_two_sided, 2.0 / 2f64.powi(20), epsilon = 1e-18);
    }

    #[test]
    fn normal_mode_above_threshold() {
        let diffs: Vec<f64> = (1..=40).map(|i| i as f64 * if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
        let w = wilcoxon_signed_rank(&diffs).unwrap();
        assert_eq!(w.mode, WilcoxonMode::NormalApprox);
        assert!(w.p_two_sided > 0.0 && w.p_two_sided < 1.0);
    }

    #[test]
    fn pearson_perfect_and_hand_computed() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let r = pearson(&x, &y).unwrap();
        assert_abs_diff_eq!(r.r, 1.0, epsilon = 1e-15);
        assert!(r.p_two_sided < 1e-12);

        // x = 1,2,3 (mean 2), y = 1,2,2 (mean 5/3)
        // sxy = (-1)(-2/3) + 0 + (1)(1/3) = 1, sxx = 2, syy = 4/9+1/9+1/9 = 2/3
        // r = 1 / sqrt(2 * 2/3) = sqrt(3)/2
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap();
        assert_abs_diff_eq!(r.r, 3f64.sqrt() / 2.0, epsilon = 1e-15);
        // df = 1: t = r/sqrt(1-r^2) = sqrt(3); p = 1 - 2 atan(sqrt 3)/pi = 1/3
        assert_abs_diff_eq!(r.p_two_sided, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn pearson_errors() {
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn student_t_reference_values() {
        // df = 2 has a closed form: p = 1 - t / sqrt(2 + t^2)
        for t in [0.1f64, 0.7, 1.5, 3.0, 12.0] {
            let want = 1.0 - t / (2.0 + t * t).sqrt();
            assert_abs_diff_eq!(student_t_two_sided(t, 2.0), want, epsilon = 1e-12);
        }
        // scipy.stats.t.sf(2.0, 28) * 2
        assert_abs_diff_eq!(student_t_two_sided(2.0, 28.0), 0.05528523764195692, epsilon = 1e-10);
        assert_abs_diff_eq!(normal_sf(1.959963984540054), 0.025, epsilon = 1e-10);
    }

    #[test]
    fn bootstrap_constant_and_determinism() {
        let ci = bootstrap_ci(&[0.1; 10], 200, 0.95, 1).unwrap();
        assert_eq!((ci.low, ci.high), (0.1, 0.1));
        let data: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let a = bootstrap_ci(&data, 500, 0.95, 9).unwrap();
        let b = bootstrap_ci(&data, 500, 0.95, 9).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_ci(&data, 500, 0.95, 10).unwrap();
        assert_ne!(a, c);
        let mean = data.iter().sum::<f64>() / 50.0;
        assert!(a.low <= mean && mean <= a.high);
    }

    #[test]
    fn bootstrap_errors() {
        assert!(bootstrap_ci(&[1.0], 100, 0.95, 0).is_err());
        assert!(bootstrap_ci(&[1.0, 2.0], 99, 0.95, 0).is_err());
        assert!(bootstrap_ci(&[1.0, 2.0], 100, 1.0, 0).is_err());
    }
}
