//! Friedman rank test, Kendall's W and the chi-square tail they need.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

const MAX_ITER: usize = 1000;
const TINY: f64 = 1e-300;
const TOL: f64 = 1e-15;

/// Lower regularized gamma `P(a, x)` by its power series (x < a + 1).
fn gamma_p_series(a: f64, x: f64) -> Result<f64> {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * TOL {
            return Ok(sum * (-x + a * x.ln() - ln_gamma(a)).exp());
        }
    }
    Err(Error::Evaluation(format!(
        "gamma series did not converge for a={a}, x={x}"
    )))
}

/// Upper regularized gamma `Q(a, x)` by modified Lentz continued fraction (x >= a + 1).
fn gamma_q_cf(a: f64, x: f64) -> Result<f64> {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < TOL {
            return Ok((-x + a * x.ln() - ln_gamma(a)).exp() * h);
        }
    }
    Err(Error::Evaluation(format!(
        "gamma continued fraction did not converge for a={a}, x={x}"
    )))
}

/// Upper regularized incomplete gamma `Q(a, x) = Γ(a, x) / Γ(a)`.
pub fn gamma_q(a: f64, x: f64) -> Result<f64> {
    if a.is_nan() || a <= 0.0 || x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!(
            "gamma_q needs a > 0 and x >= 0, got a={a}, x={x}"
        )));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x < a + 1.0 {
        Ok(1.0 - gamma_p_series(a, x)?)
    } else {
        gamma_q_cf(a, x)
    }
}

/// `P(X ≥ x)` for a chi-square variable with `dof` degrees of freedom.
pub fn chi2_sf(x: f64, dof: f64) -> Result<f64> {
    if x <= 0.0 {
        return Ok(1.0);
    }
    gamma_q(dof / 2.0, x / 2.0)
}

/// Ranks `1..=n` with ties given their average rank.
pub fn average_ranks(values: &[f64], lower_is_better: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let ord = values[a].total_cmp(&values[b]);
        if lower_is_better {
            ord
        } else {
            ord.reverse()
        }
    });
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share the mean of ranks i+1..=j+1
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub variants: Vec<String>,
    /// Mean within-block rank (1..=k) per variant; the Friedman input.
    pub mean_ranks: Vec<f64>,
    /// Mean rank per variant when all `n·k` values are ranked together.
    pub pooled_mean_ranks: Vec<f64>,
    pub friedman_chi2: f64,
    pub p_value: f64,
    pub kendall_w: f64,
    pub n_blocks: usize,
    pub k_variants: usize,
}

pub fn kendall_w_from_chi2(chi2: f64, n_blocks: usize, k_variants: usize) -> f64 {
    chi2 / (n_blocks as f64 * (k_variants as f64 - 1.0))
}

/// Friedman test over an `n × k` matrix (blocks × treatments).
///
/// `χ²_F = 12/(n·k·(k+1)) · Σ R_j² − 3n(k+1)`, p-value from the chi-square
/// tail with `k − 1` degrees of freedom, `W = χ²_F / (n(k−1))`.
pub fn friedman_test(blocks: &[Vec<f64>], lower_is_better: bool) -> Result<RankReport> {
    let n = blocks.len();
    let k = blocks.first().map_or(0, Vec::len);
    if n < 2 || k < 2 {
        return Err(Error::Contract(format!(
            "Friedman test needs at least 2 blocks and 2 treatments, got {n} x {k}"
        )));
    }
    if let Some(bad) = blocks.iter().position(|b| b.len() != k) {
        return Err(Error::Contract(format!(
            "block {bad} has {} values, expected {k}",
            blocks[bad].len()
        )));
    }
    if blocks.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Contract("Friedman test needs finite values".into()));
    }

    let mut rank_sums = vec![0.0; k];
    for block in blocks {
        for (j, r) in average_ranks(block, lower_is_better).into_iter().enumerate() {
            rank_sums[j] += r;
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    let ss: f64 = rank_sums.iter().map(|r| r * r).sum();
    let chi2 = (12.0 / (nf * kf * (kf + 1.0)) * ss - 3.0 * nf * (kf + 1.0)).max(0.0);
    let p_value = chi2_sf(chi2, kf - 1.0)?;
    let kendall_w = kendall_w_from_chi2(chi2, n, k).clamp(0.0, 1.0);

    let pooled: Vec<f64> = blocks.iter().flatten().copied().collect();
    let pooled_ranks = average_ranks(&pooled, lower_is_better);
    let mut pooled_sums = vec![0.0; k];
    for (idx, r) in pooled_ranks.into_iter().enumerate() {
        pooled_sums[idx % k] += r;
    }

    Ok(RankReport {
        variants: (0..k).map(|j| j.to_string()).collect(),
        mean_ranks: rank_sums.iter().map(|r| r / nf).collect(),
        pooled_mean_ranks: pooled_sums.iter().map(|r| r / nf).collect(),
        friedman_chi2: chi2,
        p_value,
        kendall_w,
        n_blocks: n,
        k_variants: k,
    })
}
