//! Monte Carlo checks of the second-order mask-noise penalty.
//!
//! Writing `W̄ = W ⊙ E[M]`, the deviation `W ⊙ M − W̄` has zero mean and
//! covariance `diag(W) Σ diag(W)` with `Σ = Cov(M)`. Expanding the loss
//! around `W̄` the linear term vanishes in expectation, leaving
//! `E[L(W ⊙ M)] − L(W̄) ≈ ½ tr(H diag(W) Σ diag(W))`, which for independent
//! mask entries is `½ Σ Var(m) W_i² H_ii`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{hessian_diag, DEFAULT_HESSIAN_EPS};
use crate::error::{Error, Result};
use crate::regularizers::{expected_mask_value, sample_mask, MaskSpec};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const MIN_MC_SAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyEstimate {
    /// Mean of `L(W ⊙ M) − L(W ⊙ E[M])` over the accepted draws.
    pub mc_gap: f64,
    pub closed_form: Option<f64>,
    /// Draws that produced a finite loss.
    pub n_samples: usize,
    pub std_err: f64,
    /// Draws rejected because the loss was non-finite or failed.
    pub excluded: usize,
}

impl PenaltyEstimate {
    /// `|mc_gap − closed_form|` in standard errors, when a closed form is set.
    pub fn z_score(&self) -> Option<f64> {
        let cf = self.closed_form?;
        let diff = (self.mc_gap - cf).abs();
        Some(if self.std_err > 0.0 {
            diff / self.std_err
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        })
    }
}

/// Weights at the expansion point, `W ⊙ E[M]`.
pub fn expansion_point(w: &Tensor, spec: &MaskSpec) -> Result<Tensor> {
    w.scale(expected_mask_value(spec))
}

/// Estimates `E[L(W ⊙ M)] − L(W ⊙ E[M])` from `n_samples` fresh masks.
pub fn mc_expected_loss_gap<F>(
    mut loss_fn: F,
    w: &Tensor,
    spec: &MaskSpec,
    n_samples: usize,
    stream: &mut RngStream,
) -> Result<PenaltyEstimate>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if n_samples < MIN_MC_SAMPLES {
        return Err(Error::Contract(format!(
            "need at least {MIN_MC_SAMPLES} Monte Carlo samples, got {n_samples}"
        )));
    }
    spec.validate()?;
    let reference = loss_fn(&expansion_point(w, spec)?)?;
    if !reference.is_finite() {
        return Err(Error::Evaluation(format!("loss at the expansion point is {reference}")));
    }

    let mut excluded = 0;
    let mut n = 0usize;
    let (mut mean, mut m2) = (0.0, 0.0);
    for _ in 0..n_samples {
        let mask = sample_mask(spec, w.shape(), stream)?;
        let value = match loss_fn(&w.mul(&mask)?) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(Error::Domain(_)) | Err(Error::Evaluation(_)) => {
                excluded += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        // Welford on the per-draw gap.
        let d = value - reference;
        n += 1;
        let delta = d - mean;
        mean += delta / n as f64;
        m2 += delta * (d - mean);
    }
    if n < 2 {
        return Err(Error::Evaluation(format!(
            "only {n} of {n_samples} loss draws were finite"
        )));
    }
    let var = m2 / (n - 1) as f64;
    Ok(PenaltyEstimate {
        mc_gap: mean,
        closed_form: None,
        n_samples: n,
        std_err: (var / n as f64).sqrt(),
        excluded,
    })
}

/// `½ Σ Var(m) W_i² H_ii`, with `Var(m)` from the mask's stir type.
pub fn closed_form_penalty(w: &Tensor, hessian_diag: &Tensor, spec: &MaskSpec) -> Result<f64> {
    if w.shape() != hessian_diag.shape() {
        return Err(Error::Shape {
            op: "closed-form penalty",
            left: w.shape().to_vec(),
            right: hessian_diag.shape().to_vec(),
        });
    }
    spec.validate()?;
    let var = spec.mask_variance();
    Ok(0.5
        * w.data()
            .iter()
            .zip(hessian_diag.data())
            .map(|(wi, hi)| var * wi * wi * hi)
            .sum::<f64>())
}

fn square_matrix(t: &Tensor, n: usize, what: &str) -> Result<()> {
    if t.shape() != [n, n] {
        return Err(Error::Shape {
            op: if what == "hessian" {
                "trace penalty hessian"
            } else {
                "trace penalty covariance"
            },
            left: t.shape().to_vec(),
            right: vec![n, n],
        });
    }
    let scale = t.data().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for i in 0..n {
        for j in 0..i {
            if (t.at(i, j) - t.at(j, i)).abs() > 1e-12 * scale {
                return Err(Error::Domain(format!("{what} is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Cholesky of `Σ + δI` with a tiny relative jitter so singular but
/// semidefinite matrices pass and indefinite ones fail.
fn check_psd(sigma: &Tensor, n: usize) -> Result<()> {
    let scale = sigma.data().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let jitter = 1e-10 * scale;
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = sigma.at(i, j) + if i == j { jitter } else { 0.0 };
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Domain(format!(
                        "mask covariance is not positive semidefinite (pivot {i} = {s})"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(())
}

/// `½ tr(H diag(W) Σ diag(W))` for flattened weights `W`.
pub fn general_trace_penalty(w: &Tensor, hessian: &Tensor, mask_cov: &Tensor) -> Result<f64> {
    let n = w.len();
    square_matrix(hessian, n, "hessian")?;
    square_matrix(mask_cov, n, "mask covariance")?;
    check_psd(mask_cov, n)?;
    let wd = w.data();
    let mut tr = 0.0;
    for i in 0..n {
        for j in 0..n {
            tr += hessian.at(i, j) * wd[j] * mask_cov.at(j, i) * wd[i];
        }
    }
    Ok(0.5 * tr)
}

/// Monte Carlo gap together with the diagonal closed form, the Hessian being
/// taken by finite differences at `W ⊙ E[M]`.
pub fn estimate_penalty<F>(
    mut loss_fn: F,
    w: &Tensor,
    spec: &MaskSpec,
    n_samples: usize,
    stream: &mut RngStream,
) -> Result<PenaltyEstimate>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let h = hessian_diag(&mut loss_fn, &expansion_point(w, spec)?, DEFAULT_HESSIAN_EPS)?;
    let mut est = mc_expected_loss_gap(&mut loss_fn, w, spec, n_samples, stream)?;
    est.closed_form = Some(closed_form_penalty(w, &h, spec)?);
    Ok(est)
}
