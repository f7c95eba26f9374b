//! Named invariant checks grouped into suites.

use std::fmt;

use clap::ValueEnum;
use serde::Serialize;

use pernode_core::analysis::penalty::{closed_form_penalty, general_trace_penalty, mc_expected_loss_gap};
use pernode_core::analysis::stats::{chi2_sf, friedman_test, kendall_w_from_chi2};
use pernode_core::autodiff::{finite_diff_grad, max_relative_error, Tape, Var, DEFAULT_FD_EPS};
use pernode_core::regularizers::{
    fixed_mask, sample_mask, FixedKey, Granularity, MaskSpec, Mode, RegularizerKind, RegularizerLayer,
};
use pernode_core::rng::{draw_normal, RngStream};
use pernode_core::training::{loss, loss_on_tape, Model, ModelConfig, Output};
use pernode_core::{Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Masks,
    Gradients,
    Penalty,
    Stats,
    All,
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Suite::Masks => "masks",
            Suite::Gradients => "gradients",
            Suite::Penalty => "penalty",
            Suite::Stats => "stats",
            Suite::All => "all",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub suite: String,
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

/// Mask sampler used by the statistics checks; swappable for mutation tests.
pub type Sampler = dyn Fn(&MaskSpec, &[usize], &mut RngStream) -> Result<Tensor>;

pub struct Verifier<'a> {
    pub seed: u64,
    pub sampler: &'a Sampler,
}

impl Default for Verifier<'static> {
    fn default() -> Self {
        Self {
            seed: 0,
            sampler: &sample_mask,
        }
    }
}

struct Collector {
    suite: &'static str,
    out: Vec<Check>,
}

impl Collector {
    fn new(suite: &'static str) -> Self {
        Self { suite, out: Vec::new() }
    }

    fn push(&mut self, check: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.out.push(Check {
            suite: self.suite.into(),
            check: check.into(),
            passed,
            detail: detail.into(),
        });
    }

    fn result(&mut self, check: impl Into<String>, r: Result<(bool, String)>) {
        match r {
            Ok((passed, detail)) => self.push(check, passed, detail),
            Err(e) => self.push(check, false, format!("error: {e}")),
        }
    }
}

/// Mean, variance and fourth central moment of a mask entry.
pub fn mask_moments(spec: &MaskSpec) -> (f64, f64, f64) {
    use pernode_core::regularizers::Stir;
    let p = spec.drop_rate;
    match spec.stir {
        Stir::Bernoulli => {
            let q = 1.0 - p;
            (q, p * q, p * q * (p.powi(3) + q.powi(3)))
        }
        Stir::Gaussian => {
            let s2 = spec.sigma().powi(2);
            (1.0, s2, 3.0 * s2 * s2)
        }
        Stir::PartialGaussian => {
            let s2 = spec.sigma().powi(2);
            let t = spec.threshold();
            (1.0, t * s2, 3.0 * t * s2 * s2)
        }
    }
}

impl Verifier<'_> {
    pub fn run(&self, suite: Suite) -> Vec<Check> {
        match suite {
            Suite::Masks => self.masks(),
            Suite::Gradients => self.gradients(),
            Suite::Penalty => self.penalty(),
            Suite::Stats => self.stats(),
            Suite::All => [self.masks(), self.gradients(), self.penalty(), self.stats()].concat(),
        }
    }

    pub fn masks(&self) -> Vec<Check> {
        let mut c = Collector::new("masks");
        let root = RngStream::new(self.seed).split(0x6d61);
        let n = 100_000;
        for (si, make) in [MaskSpec::bernoulli as fn(f64) -> MaskSpec, MaskSpec::gaussian, |p| {
            MaskSpec {
                partial_threshold: None,
                ..MaskSpec::partial_gaussian(p, 0.0)
            }
        }]
        .iter()
        .enumerate()
        {
            for (pi, p) in [0.1, 0.5, 0.9].into_iter().enumerate() {
                let spec = make(p);
                let mut s = root.split((si * 3 + pi) as u64);
                let r = (self.sampler)(&spec, &[n], &mut s).map(|m| {
                    let (mu, var, mu4) = mask_moments(&spec);
                    let mean = m.mean();
                    let svar = m.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                    let mean_tol = 3.0 * (var / n as f64).sqrt();
                    // Exact variance of the unbiased sample variance; the second
                    // term keeps the bound positive when mu4 equals var^2.
                    let nf = n as f64;
                    let var_tol =
                        3.0 * ((mu4 - var * var).max(0.0) / nf + 2.0 * var * var / (nf * (nf - 1.0))).sqrt();
                    let ok = (mean - mu).abs() <= mean_tol && (svar - var).abs() <= var_tol;
                    (
                        ok,
                        format!("mean {mean:.5} (expect {mu:.5} ± {mean_tol:.5}), var {svar:.5} (expect {var:.5} ± {var_tol:.5})"),
                    )
                });
                c.result(format!("moments_{:?}_p{p}", spec.stir).to_lowercase(), r);
            }
        }

        c.result("dropconnect_batch_shared_vs_pernode_per_row", self.structure_probe());
        c.result("eval_scales_by_expected_mask", eval_scaling());
        c.result("fixed_masks_replay", fixed_replay());
        c.out
    }

    fn structure_probe(&self) -> Result<(bool, String)> {
        let (b, din) = (16, 8);
        let x = Tensor::ones(&[b, din]);
        let w = Tensor::identity(din);
        let bias = Tensor::zeros(&[din]);
        let mut s = RngStream::new(self.seed).split(0x7072);
        let dc = RegularizerLayer::new(RegularizerKind::dropconnect(0.5), din, din)?;
        let y = dc
            .draw(Mode::Train, b, None, Some(&mut s))?
            .apply_dense(&x, &w, &bias)?;
        let shared = (1..b).all(|r| y.row(r) == y.row(0));
        let pn = RegularizerLayer::new(RegularizerKind::pernodedrop(MaskSpec::bernoulli(0.5)), din, din)?;
        let y = pn
            .draw(Mode::Train, b, None, Some(&mut s))?
            .apply_dense(&x, &w, &bias)?;
        let distinct = distinct_rows(&y);
        let ok = shared && distinct > 1;
        Ok((
            ok,
            format!("dropconnect rows identical: {shared}; pernodedrop distinct rows: {distinct}/{b}"),
        ))
    }

    pub fn gradients(&self) -> Vec<Check> {
        let mut c = Collector::new("gradients");
        let mut s = RngStream::new(self.seed).split(0x6772);
        for (name, kind) in gradient_kinds() {
            let mut worst = 0.0f64;
            let mut err = None;
            for trial in 0..8 {
                match gradient_check(&kind, trial % 2 == 1, &mut s) {
                    Ok(e) => worst = worst.max(e),
                    Err(e) => {
                        err = Some(e);
                        break;
                    }
                }
            }
            match err {
                Some(e) => c.push(format!("backward_vs_fd_{name}"), false, format!("error: {e}")),
                None => c.push(
                    format!("backward_vs_fd_{name}"),
                    worst < GRAD_TOL,
                    format!("max relative error {worst:.3e} (limit {GRAD_TOL:e})"),
                ),
            }
        }
        c.out
    }

    pub fn penalty(&self) -> Vec<Check> {
        let mut c = Collector::new("penalty");
        let mut s = RngStream::new(self.seed).split(0x7065);
        let half_sq = |w: &Tensor| -> Result<f64> { Ok(0.5 * w.data().iter().map(|v| v * v).sum::<f64>()) };
        let w = Tensor::vector(vec![1.0, 2.0]).expect("valid vector");
        for (name, spec, expect) in [
            ("bernoulli_quadratic_0.625", MaskSpec::bernoulli(0.5), 0.625),
            (
                "gaussian_quadratic_2.5",
                MaskSpec::gaussian(0.5).sigma_override(1.0),
                2.5,
            ),
        ] {
            let r = (|| {
                let cf = closed_form_penalty(&w, &Tensor::ones(&[2]), &spec)?;
                let e = mc_expected_loss_gap(half_sq, &w, &spec, 10_000, &mut s)?;
                let ok = (cf - expect).abs() < 1e-12 && (e.mc_gap - cf).abs() <= 3.0 * e.std_err;
                Ok((ok, format!("closed {cf}, mc {:.5} ± {:.5}", e.mc_gap, e.std_err)))
            })();
            c.result(name, r);
        }
        let r = (|| {
            let mut fails = 0;
            for i in 0..20 {
                let dim = 2 + (s.next_below(4) as usize);
                let w = draw_normal(&mut s, 0.0, 1.0, &[dim])?;
                let p = 0.05 + 0.9 * s.next_f64();
                let spec = match i % 3 {
                    0 => MaskSpec::bernoulli(p),
                    1 => MaskSpec::gaussian(p).sigma_override(0.2 + s.next_f64()),
                    _ => MaskSpec::partial_gaussian(p, s.next_f64()),
                };
                let cf = closed_form_penalty(&w, &Tensor::ones(&[dim]), &spec)?;
                let e = mc_expected_loss_gap(half_sq, &w, &spec, 10_000, &mut s)?;
                if (e.mc_gap - cf).abs() > 3.0 * e.std_err {
                    fails += 1;
                }
            }
            // 3σ misses happen 0.27% of the time per instance
            Ok((fails <= 1, format!("{fails}/20 instances outside 3 standard errors")))
        })();
        c.result("random_quadratics_all_stirs", r);
        let r = (|| {
            let w = draw_normal(&mut s, 0.0, 1.0, &[3])?;
            let a = draw_normal(&mut s, 0.0, 1.0, &[3, 3])?;
            let h = a.add(&a.transpose()?)?;
            let p = 0.3;
            let mut cov = Tensor::zeros(&[3, 3]);
            for i in 0..3 {
                cov.data_mut()[i * 4] = p * (1.0 - p);
            }
            let hd = Tensor::vector((0..3).map(|i| h.at(i, i)).collect())?;
            let tr = general_trace_penalty(&w, &h, &cov)?;
            let cf = closed_form_penalty(&w, &hd, &MaskSpec::bernoulli(p))?;
            Ok(((tr - cf).abs() < 1e-12, format!("trace {tr}, diagonal {cf}")))
        })();
        c.result("trace_form_reduces_to_diagonal", r);
        c.out
    }

    pub fn stats(&self) -> Vec<Check> {
        let mut c = Collector::new("stats");
        let w = kendall_w_from_chi2(34.6, 5, 8);
        c.push(
            "kendall_w_from_chi2_34.6",
            (w - 0.989).abs() < 5e-3 && (w - 34.6 / 35.0).abs() < 1e-15,
            format!("W = {w:.6}"),
        );
        c.result(
            "chi2_tail_34.6_dof7",
            chi2_sf(34.6, 7.0).map(|p| (p <= 2e-5 && p > 0.0, format!("p = {p:.3e}"))),
        );
        let blocks: Vec<Vec<f64>> = (0..5).map(|_| (0..8).map(f64::from).collect()).collect();
        c.result(
            "perfect_concordance",
            friedman_test(&blocks, true).map(|r| {
                (
                    (r.friedman_chi2 - 35.0).abs() < 1e-9 && (r.kendall_w - 1.0).abs() < 1e-12,
                    format!("chi2 {}, W {}", r.friedman_chi2, r.kendall_w),
                )
            }),
        );
        c.result(
            "chi2_tail_dof2_closed_form",
            chi2_sf(3.0, 2.0).map(|p| {
                let e = (-1.5f64).exp();
                (((p - e) / e).abs() < 1e-10, format!("{p} vs {e}"))
            }),
        );
        c.out
    }
}

fn distinct_rows(t: &Tensor) -> usize {
    let mut rows: Vec<&[f64]> = (0..t.rows()).map(|r| t.row(r)).collect();
    rows.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    rows.dedup();
    rows.len()
}

fn eval_scaling() -> Result<(bool, String)> {
    let mut s = RngStream::new(3);
    let x = draw_normal(&mut s, 0.0, 1.0, &[5, 4])?;
    let w = draw_normal(&mut s, 0.0, 1.0, &[4, 3])?;
    let b = draw_normal(&mut s, 0.0, 1.0, &[3])?;
    let layer = RegularizerLayer::new(RegularizerKind::pernodedrop(MaskSpec::bernoulli(0.4)), 4, 3)?;
    let y = layer.draw(Mode::Eval, 5, None, None)?.apply_dense(&x, &w, &b)?;
    let expect = x.matmul(&w)?.scale(0.6)?.add_row(&b)?;
    let d = y.max_abs_diff(&expect);
    Ok((d < 1e-12, format!("max |eval − 0.6·xW − b| = {d:.2e}")))
}

fn fixed_replay() -> Result<(bool, String)> {
    let spec = MaskSpec::bernoulli(0.5).fixed(FixedKey::PerInput).seed(11);
    let a = fixed_mask(&spec, 42, &[64])?;
    let b = fixed_mask(&spec, 42, &[64])?;
    let other = fixed_mask(&spec, 43, &[64])?;
    let ok = a == b && a != other;
    Ok((
        ok,
        format!("replay equal: {}, other id differs: {}", a == b, a != other),
    ))
}

pub const GRAD_TOL: f64 = 1e-5;
pub const GRAD_FLOOR: f64 = 1e-2;

pub fn gradient_kinds() -> Vec<(&'static str, RegularizerKind)> {
    vec![
        ("none", RegularizerKind::none()),
        ("dropout", RegularizerKind::dropout(0.4)),
        ("gaussian_dropout", RegularizerKind::gaussian_dropout(0.4)),
        ("dropconnect", RegularizerKind::dropconnect(0.4)),
        ("mask_ensemble", RegularizerKind::mask_ensemble(0.4, 2)),
        (
            "pernode_bernoulli",
            RegularizerKind::pernodedrop(MaskSpec::bernoulli(0.4)),
        ),
        (
            "pernode_gaussian",
            RegularizerKind::pernodedrop(MaskSpec::gaussian(0.4)),
        ),
        (
            "pernode_partial_gaussian",
            RegularizerKind::pernodedrop(MaskSpec::partial_gaussian(0.4, 0.5)),
        ),
        (
            "pernode_bernoulli_connection",
            RegularizerKind::pernodedrop(MaskSpec::bernoulli(0.4).granularity(Granularity::Connection)),
        ),
        (
            "pernode_gaussian_connection",
            RegularizerKind::pernodedrop(MaskSpec::gaussian(0.4).granularity(Granularity::Connection)),
        ),
        (
            "pernode_bernoulli_fixed",
            RegularizerKind::pernodedrop(MaskSpec::bernoulli(0.4).fixed(FixedKey::PerInput).seed(5)),
        ),
    ]
}

/// Compares tape gradients of a random two-layer model against central
/// differences with the slot mask frozen. Returns the worst relative error
/// over all parameters.
pub fn gradient_check(kind: &RegularizerKind, sigmoid: bool, s: &mut RngStream) -> Result<f64> {
    let din = 2 + 2 * s.next_below(3) as usize;
    let hidden = 2 + s.next_below(4) as usize;
    let dout = 2 + s.next_below(3) as usize;
    let batch = 2 + s.next_below(4) as usize;
    let output = if sigmoid {
        Output::Sigmoid { labels: dout }
    } else {
        Output::Softmax { classes: dout }
    };
    let cfg = ModelConfig {
        input_dim: din,
        hidden_widths: vec![],
        regularizer: kind.clone(),
        reg_position: 0,
        output,
        dense_units: hidden,
    };
    let mut model = Model::new(cfg, s.next_u64())?;
    for (i, p) in model.params_mut().iter_mut().enumerate() {
        // random biases too, so ReLU kinks are not all at zero input
        if i % 2 == 1 {
            *p = draw_normal(s, 0.0, 0.5, p.shape())?;
        }
    }
    let x = draw_normal(s, 0.0, 1.0, &[batch, din])?;
    let targets = if sigmoid {
        draw_normal(s, 0.0, 1.0, &[batch, dout])?.map(|v| f64::from(u8::from(v > 0.0)))
    } else {
        let labels: Vec<usize> = (0..batch).map(|_| s.next_below(dout as u64) as usize).collect();
        pernode_core::data::one_hot(&labels, dout)?
    };
    let ids: Vec<u64> = (0..batch as u64).map(|i| 100 + i).collect();
    let mut ms = s.split(7);
    let slot = model.draw_slot_mask(Mode::Train, batch, Some(&ids), Some(&mut ms))?;
    let kind_loss = model.loss_kind();

    let mut tape = Tape::new();
    let vars: Vec<Var> = model.params().iter().map(|p| tape.leaf(p.clone())).collect();
    let xv = tape.constant(x.clone());
    let probs = model.forward_on_tape(&mut tape, &vars, xv, &slot)?;
    let l = loss_on_tape(&mut tape, probs, &targets, kind_loss)?;
    let grads = tape.backward(l)?;

    let mut worst = 0.0f64;
    for (pi, &v) in vars.iter().enumerate() {
        let analytic = grads.get(v).expect("leaf gradient");
        let at = model.params()[pi].clone();
        let mut probe = model.clone();
        let numeric = finite_diff_grad(
            |t| {
                probe.params_mut()[pi] = t.clone();
                let pred = probe.forward_with_mask(&x, &slot)?;
                loss(&pred, &targets, kind_loss)
            },
            &at,
            DEFAULT_FD_EPS,
        )?;
        worst = worst.max(max_relative_error(analytic, &numeric, GRAD_FLOOR));
    }
    Ok(worst)
}

/// Convenience for suites and tests: true when every check passed.
pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}
