//! Feed-forward models with one regularization slot.
//!
//! Layer plan: `input → hidden[..pos] → slot(dense_units) → hidden[pos..] → output`.
//! The slot is always a dense layer of width `dense_units` preceded by the
//! regularizer (for PerNodeDrop the mask lives inside that dense layer), so
//! every variant has the same parameter count.

use serde::{Deserialize, Serialize};

use crate::autodiff::{binary_ce_value, categorical_ce_value, Tape, Var};
use crate::data::argmax;
use crate::error::{Error, Result};
use crate::regularizers::{Mode, RegularizerKind, RegularizerLayer, SlotMask};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Softmax { classes: usize },
    Sigmoid { labels: usize },
}

impl Output {
    pub fn width(&self) -> usize {
        match *self {
            Output::Softmax { classes } => classes,
            Output::Sigmoid { labels } => labels,
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        match self {
            Output::Softmax { .. } => LossKind::CategoricalCe,
            Output::Sigmoid { .. } => LossKind::BinaryCe,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    CategoricalCe,
    BinaryCe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub regularizer: RegularizerKind,
    /// Number of hidden layers placed before the slot.
    pub reg_position: usize,
    pub output: Output,
    /// Width of the slot's dense layer.
    pub dense_units: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.dense_units == 0 || self.output.width() == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.reg_position > self.hidden_widths.len() {
            return Err(Error::Config(format!(
                "reg_position {} is past the {} hidden layers",
                self.reg_position,
                self.hidden_widths.len()
            )));
        }
        Ok(())
    }

    /// Widths of every layer boundary, input first, output last.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_widths[..self.reg_position]);
        dims.push(self.dense_units);
        dims.extend(&self.hidden_widths[self.reg_position..]);
        dims.push(self.output.width());
        dims
    }

    pub fn slot_input_dim(&self) -> usize {
        self.layer_dims()[self.reg_position]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    config: ModelConfig,
    /// `[w0, b0, w1, b1, ...]`.
    params: Vec<Tensor>,
    regularizer: RegularizerLayer,
}

const INIT_STREAM: u64 = 0x696e_6974;

impl Model {
    /// Glorot-uniform weights, zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let dims = config.layer_dims();
        let root = RngStream::new(seed).split(INIT_STREAM);
        let mut params = Vec::with_capacity(2 * (dims.len() - 1));
        for (l, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut s = root.split(l as u64);
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| (2.0 * s.next_f64() - 1.0) * limit)
                .collect();
            params.push(Tensor::new(vec![fan_in, fan_out], w)?);
            params.push(Tensor::zeros(&[fan_out]));
        }
        let slot = config.reg_position;
        let regularizer = RegularizerLayer::new(config.regularizer.clone(), dims[slot], dims[slot + 1])?;
        Ok(Self {
            config,
            params,
            regularizer,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn regularizer(&self) -> &RegularizerLayer {
        &self.regularizer
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_layers(&self) -> usize {
        self.params.len() / 2
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn loss_kind(&self) -> LossKind {
        self.config.output.loss_kind()
    }

    pub fn draw_slot_mask(
        &self,
        mode: Mode,
        batch: usize,
        sample_ids: Option<&[u64]>,
        stream: Option<&mut RngStream>,
    ) -> Result<SlotMask> {
        self.regularizer.draw(mode, batch, sample_ids, stream)
    }

    /// Builds the forward pass on `tape` and returns the output
    /// probabilities. `params` are tape nodes for `self.params()` in order.
    pub fn forward_on_tape(&self, tape: &mut Tape, params: &[Var], x: Var, slot: &SlotMask) -> Result<Var> {
        if params.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} parameter nodes for {} parameters",
                params.len(),
                self.params.len()
            )));
        }
        let last = self.num_layers() - 1;
        let mut h = x;
        for l in 0..=last {
            let (w, b) = (params[2 * l], params[2 * l + 1]);
            let z = if l == self.config.reg_position {
                slot.apply_dense_on_tape(tape, h, w, b)?
            } else {
                let z = tape.matmul(h, w)?;
                tape.add_row(z, b)?
            };
            h = if l == last {
                match self.config.output {
                    Output::Softmax { .. } => tape.softmax_rows(z)?,
                    Output::Sigmoid { .. } => tape.sigmoid(z),
                }
            } else {
                tape.relu(z)
            };
        }
        Ok(h)
    }

    /// Output probabilities for `x` (softmax rows or sigmoid entries).
    pub fn forward(
        &self,
        x: &Tensor,
        mode: Mode,
        sample_ids: Option<&[u64]>,
        stream: Option<&mut RngStream>,
    ) -> Result<Tensor> {
        if x.rank() != 2 || x.cols() != self.config.input_dim {
            return Err(Error::Shape {
                op: "model forward",
                left: x.shape().to_vec(),
                right: vec![x.rows(), self.config.input_dim],
            });
        }
        let slot = self.draw_slot_mask(mode, x.rows(), sample_ids, stream)?;
        self.forward_with_mask(x, &slot)
    }

    pub fn forward_with_mask(&self, x: &Tensor, slot: &SlotMask) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let xv = tape.constant(x.clone());
        let out = self.forward_on_tape(&mut tape, &vars, xv, slot)?;
        Ok(tape.value(out).clone())
    }

    pub fn with_regularizer(&self, kind: RegularizerKind) -> Result<Self> {
        let mut config = self.config.clone();
        config.regularizer = kind;
        let slot = config.reg_position;
        let dims = config.layer_dims();
        let regularizer = RegularizerLayer::new(config.regularizer.clone(), dims[slot], dims[slot + 1])?;
        Ok(Self {
            config,
            params: self.params.clone(),
            regularizer,
        })
    }
}

/// Mean loss over the batch; probabilities are clipped at 1e-12 before logs.
/// Binary cross-entropy also averages over labels.
pub fn loss(pred: &Tensor, target: &Tensor, kind: LossKind) -> Result<f64> {
    match kind {
        LossKind::CategoricalCe => categorical_ce_value(pred, target),
        LossKind::BinaryCe => binary_ce_value(pred, target),
    }
}

/// Top-1 accuracy (categorical) or per-label accuracy at 0.5 (binary).
pub fn accuracy(pred: &Tensor, target: &Tensor, kind: LossKind) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op: "accuracy",
            left: pred.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    Ok(match kind {
        LossKind::CategoricalCe => {
            let hits = (0..pred.rows())
                .filter(|&r| argmax(pred.row(r)) == argmax(target.row(r)))
                .count();
            hits as f64 / pred.rows() as f64
        }
        LossKind::BinaryCe => {
            let hits = pred
                .data()
                .iter()
                .zip(target.data())
                .filter(|(p, t)| (**p > 0.5) == (**t > 0.5))
                .count();
            hits as f64 / pred.len() as f64
        }
    })
}

pub fn loss_on_tape(tape: &mut Tape, probs: Var, target: &Tensor, kind: LossKind) -> Result<Var> {
    match kind {
        LossKind::CategoricalCe => tape.categorical_ce(probs, target.clone()),
        LossKind::BinaryCe => tape.binary_ce(probs, target.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizers::{MaskSpec, RegularizerTag};
    use crate::rng::draw_normal;

    fn config(reg: RegularizerKind, output: Output) -> ModelConfig {
        ModelConfig {
            input_dim: 6,
            hidden_widths: vec![5, 4],
            regularizer: reg,
            reg_position: 1,
            output,
            dense_units: 7,
        }
    }

    #[test]
    fn zero_weights_give_uniform_softmax_and_half_sigmoid() {
        let mut m = Model::new(config(RegularizerKind::none(), Output::Softmax { classes: 4 }), 1).unwrap();
        for p in m.params_mut() {
            p.data_mut().fill(0.0);
        }
        let x = Tensor::ones(&[3, 6]);
        let y = m.forward(&x, Mode::Eval, None, None).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let mut m = Model::new(config(RegularizerKind::none(), Output::Sigmoid { labels: 3 }), 1).unwrap();
        for p in m.params_mut() {
            p.data_mut().fill(0.0);
        }
        let y = m.forward(&x, Mode::Eval, None, None).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn softmax_rows_sum_to_one_sigmoid_in_open_interval() {
        let mut s = RngStream::new(2);
        let x = draw_normal(&mut s, 0.0, 3.0, &[10, 6]).unwrap();
        let m = Model::new(config(RegularizerKind::dropout(0.3), Output::Softmax { classes: 5 }), 3).unwrap();
        let y = m.forward(&x, Mode::Train, None, Some(&mut s)).unwrap();
        for r in 0..10 {
            assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let m = Model::new(config(RegularizerKind::dropout(0.3), Output::Sigmoid { labels: 5 }), 3).unwrap();
        let y = m.forward(&x, Mode::Train, None, Some(&mut s)).unwrap();
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn eval_at_zero_rate_matches_removed_regularizer() {
        let mut s = RngStream::new(4);
        let x = draw_normal(&mut s, 0.0, 1.0, &[8, 6]).unwrap();
        let ids: Vec<u64> = (0..8).collect();
        let kinds = [
            RegularizerKind::dropout(0.0),
            RegularizerKind::gaussian_dropout(0.0),
            RegularizerKind::dropconnect(0.0),
            RegularizerKind::mask_ensemble(0.0, 1),
            RegularizerKind::pernodedrop(MaskSpec::bernoulli(0.0)),
            RegularizerKind::pernodedrop(MaskSpec::gaussian(0.0)),
        ];
        for kind in kinds {
            let m = Model::new(config(kind, Output::Softmax { classes: 3 }), 5).unwrap();
            let bare = m.with_regularizer(RegularizerKind::none()).unwrap();
            let a = m.forward(&x, Mode::Eval, Some(&ids), None).unwrap();
            let b = bare.forward(&x, Mode::Eval, Some(&ids), None).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-12);
        }
    }

    #[test]
    fn parameter_counts_match_across_variants() {
        let kinds = [
            RegularizerKind::none(),
            RegularizerKind::dropout(0.5),
            RegularizerKind::gaussian_dropout(0.5),
            RegularizerKind::dropconnect(0.5),
            RegularizerKind::mask_ensemble(0.5, 5),
            RegularizerKind::pernodedrop(MaskSpec::bernoulli(0.5)),
        ];
        let counts: Vec<usize> = kinds
            .iter()
            .map(|k| {
                Model::new(config(k.clone(), Output::Softmax { classes: 3 }), 0)
                    .unwrap()
                    .num_parameters()
            })
            .collect();
        // 6→5→[7]→4→3
        let expected = 6 * 5 + 5 + 5 * 7 + 7 + 7 * 4 + 4 + 4 * 3 + 3;
        assert!(counts.iter().all(|&c| c == expected), "{counts:?}");
    }

    #[test]
    fn loss_values() {
        let t = Tensor::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        assert!(loss(&t, &t, LossKind::CategoricalCe).unwrap().abs() < 1.2e-11);
        let u = Tensor::full(&[4, 10], 0.1);
        let mut tgt = Tensor::zeros(&[4, 10]);
        for r in 0..4 {
            tgt.data_mut()[r * 10 + r] = 1.0;
        }
        let l = loss(&u, &tgt, LossKind::CategoricalCe).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_naive_formula() {
        let mut s = RngStream::new(6);
        let logits = draw_normal(&mut s, 0.0, 2.0, &[7, 4]).unwrap();
        let p = logits.softmax_rows().unwrap();
        let labels: Vec<usize> = (0..7).map(|_| s.next_below(4) as usize).collect();
        let t = crate::data::one_hot(&labels, 4).unwrap();
        let mut naive = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            naive -= p.at(r, label).max(1e-12).ln();
        }
        naive /= 7.0;
        assert!((loss(&p, &t, LossKind::CategoricalCe).unwrap() - naive).abs() < 1e-12);

        let q = logits.map(crate::tensor::sigmoid);
        let mh = draw_normal(&mut s, 0.0, 1.0, &[7, 4])
            .unwrap()
            .map(|v| f64::from(u8::from(v > 0.0)));
        let mut naive = 0.0;
        for (pv, tv) in q.data().iter().zip(mh.data()) {
            let pc = pv.clamp(1e-12, 1.0 - 1e-12);
            naive -= tv * pc.ln() + (1.0 - tv) * (1.0 - pc).ln();
        }
        naive /= 28.0;
        assert!((loss(&q, &mh, LossKind::BinaryCe).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn bad_configs() {
        let mut c = config(RegularizerKind::none(), Output::Softmax { classes: 3 });
        c.reg_position = 3;
        assert!(Model::new(c, 0).is_err());
        let c = config(RegularizerKind::mask_ensemble(0.5, 4), Output::Softmax { classes: 3 });
        // slot input is hidden[0] = 5, not divisible by 4
        let err = Model::new(c, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(RegularizerKind::mask_ensemble(0.5, 4).tag, RegularizerTag::MaskEnsemble);
    }
}
