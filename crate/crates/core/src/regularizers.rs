//! Mask samplers and the regularization slot.
//!
//! Every variant is expressed as a [`SlotMask`] drawn for one batch and then
//! applied to a dense transformation `x·W + b`:
//!
//! | variant          | train-time mask                          | eval            |
//! |------------------|------------------------------------------|-----------------|
//! | Dropout          | Bernoulli on activations, per sample     | scale by 1−p    |
//! | GaussianDropout  | N(1, σ²) on activations, per sample      | identity        |
//! | DropConnect      | one Bernoulli weight mask per call       | scale W by 1−p  |
//! | MaskEnsemble     | fixed group masks, routed by sample id   | same masks      |
//! | PerNodeDrop      | per-sample node or connection mask       | scale by E[m]   |
//!
//! No inverse `1/(1−p)` scaling is applied during training; evaluation
//! multiplies by the expected mask value instead.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{batched_masked_matmul, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stir {
    Bernoulli,
    Gaussian,
    PartialGaussian,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One mask entry per input feature, shape `[B×Din]`.
    #[default]
    Node,
    /// One mask entry per weight, shape `[B×Din×Dout]`.
    Connection,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    #[default]
    Dynamic,
    Fixed,
}

/// What a fixed mask is keyed on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedKey {
    /// One persistent mask per sample id.
    #[default]
    PerInput,
    /// One persistent mask shared by every sample of the model instance.
    PerModel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub stir: Stir,
    pub drop_rate: f64,
    /// Explicit noise std; when absent it is derived as `sqrt(p / (1 − p))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub granularity: Granularity,
    #[serde(default)]
    pub mode: MaskMode,
    #[serde(default)]
    pub fixed_key: FixedKey,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of entries that receive Gaussian noise in the partial-Gaussian
    /// stir; defaults to the drop rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial_threshold: Option<f64>,
}

impl MaskSpec {
    fn with_stir(stir: Stir, drop_rate: f64) -> Self {
        Self {
            stir,
            drop_rate,
            sigma: None,
            granularity: Granularity::Node,
            mode: MaskMode::Dynamic,
            fixed_key: FixedKey::PerInput,
            seed: 0,
            partial_threshold: None,
        }
    }

    pub fn bernoulli(drop_rate: f64) -> Self {
        Self::with_stir(Stir::Bernoulli, drop_rate)
    }

    pub fn gaussian(drop_rate: f64) -> Self {
        Self::with_stir(Stir::Gaussian, drop_rate)
    }

    pub fn partial_gaussian(drop_rate: f64, threshold: f64) -> Self {
        Self {
            partial_threshold: Some(threshold),
            ..Self::with_stir(Stir::PartialGaussian, drop_rate)
        }
    }

    pub fn granularity(mut self, g: Granularity) -> Self {
        self.granularity = g;
        self
    }

    pub fn fixed(mut self, key: FixedKey) -> Self {
        self.mode = MaskMode::Fixed;
        self.fixed_key = key;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn sigma_override(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(Error::Domain(format!(
                "drop rate must lie in [0, 1), got {}",
                self.drop_rate
            )));
        }
        if let Some(s) = self.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Domain(format!("sigma must be finite and >= 0, got {s}")));
            }
        }
        if let Some(t) = self.partial_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Domain(format!("partial threshold must lie in [0, 1], got {t}")));
            }
        }
        Ok(())
    }

    /// Gaussian noise std: explicit, or `sqrt(p / (1 − p))`.
    pub fn sigma(&self) -> f64 {
        self.sigma
            .unwrap_or_else(|| (self.drop_rate / (1.0 - self.drop_rate)).sqrt())
    }

    pub fn threshold(&self) -> f64 {
        self.partial_threshold.unwrap_or(self.drop_rate)
    }

    /// Per-element variance of the mask.
    pub fn mask_variance(&self) -> f64 {
        match self.stir {
            Stir::Bernoulli => self.drop_rate * (1.0 - self.drop_rate),
            Stir::Gaussian => self.sigma().powi(2),
            Stir::PartialGaussian => self.threshold() * self.sigma().powi(2),
        }
    }

    /// True when every draw would be exactly one.
    pub fn is_identity(&self) -> bool {
        match self.stir {
            Stir::Bernoulli => self.drop_rate == 0.0,
            Stir::Gaussian => self.sigma() == 0.0,
            Stir::PartialGaussian => self.sigma() == 0.0 || self.threshold() == 0.0,
        }
    }
}

/// `E[m]`: 1 − p for Bernoulli, 1 for both Gaussian stirs.
pub fn expected_mask_value(spec: &MaskSpec) -> f64 {
    match spec.stir {
        Stir::Bernoulli => 1.0 - spec.drop_rate,
        Stir::Gaussian | Stir::PartialGaussian => 1.0,
    }
}

fn require_stir(spec: &MaskSpec, stir: Stir) -> Result<()> {
    if spec.stir != stir {
        return Err(Error::Contract(format!(
            "sampler for {stir:?} called with a {:?} spec",
            spec.stir
        )));
    }
    spec.validate()
}

/// Raw 0/1 mask with `P(1) = 1 − p`.
pub fn sample_bernoulli_mask(spec: &MaskSpec, shape: &[usize], stream: &mut RngStream) -> Result<Tensor> {
    require_stir(spec, Stir::Bernoulli)?;
    Ok(bernoulli(spec.drop_rate, shape, stream))
}

fn bernoulli(p: f64, shape: &[usize], stream: &mut RngStream) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| if stream.next_f64() >= p { 1.0 } else { 0.0 }).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Elements drawn from `N(1, σ²)`.
pub fn sample_gaussian_mask(spec: &MaskSpec, shape: &[usize], stream: &mut RngStream) -> Result<Tensor> {
    require_stir(spec, Stir::Gaussian)?;
    Ok(gaussian(spec.sigma(), shape, stream))
}

fn gaussian(sigma: f64, shape: &[usize], stream: &mut RngStream) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| 1.0 + sigma * stream.next_normal()).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Element is 1 where `r > threshold` (r uniform), otherwise an `N(1, σ²)` draw.
pub fn sample_partial_gaussian_mask(spec: &MaskSpec, shape: &[usize], stream: &mut RngStream) -> Result<Tensor> {
    require_stir(spec, Stir::PartialGaussian)?;
    Ok(partial_gaussian(spec.threshold(), spec.sigma(), shape, stream))
}

fn partial_gaussian(threshold: f64, sigma: f64, shape: &[usize], stream: &mut RngStream) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let (r, z) = stream.next_uniform_normal();
            if r > threshold {
                1.0
            } else {
                1.0 + sigma * z
            }
        })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Dispatches on `spec.stir`.
pub fn sample_mask(spec: &MaskSpec, shape: &[usize], stream: &mut RngStream) -> Result<Tensor> {
    match spec.stir {
        Stir::Bernoulli => sample_bernoulli_mask(spec, shape, stream),
        Stir::Gaussian => sample_gaussian_mask(spec, shape, stream),
        Stir::PartialGaussian => sample_partial_gaussian_mask(spec, shape, stream),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegularizerTag {
    /// Plain dense slot, no perturbation.
    None,
    Dropout,
    GaussianDropout,
    DropConnect,
    MaskEnsemble,
    PerNodeDrop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerKind {
    pub tag: RegularizerTag,
    pub spec: MaskSpec,
    /// Number of mask groups (MaskEnsemble only).
    #[serde(default = "one")]
    pub mask_groups: usize,
}

fn one() -> usize {
    1
}

impl RegularizerKind {
    pub fn none() -> Self {
        Self {
            tag: RegularizerTag::None,
            spec: MaskSpec::bernoulli(0.0),
            mask_groups: 1,
        }
    }

    pub fn dropout(p: f64) -> Self {
        Self {
            tag: RegularizerTag::Dropout,
            spec: MaskSpec::bernoulli(p),
            mask_groups: 1,
        }
    }

    pub fn gaussian_dropout(p: f64) -> Self {
        Self {
            tag: RegularizerTag::GaussianDropout,
            spec: MaskSpec::gaussian(p),
            mask_groups: 1,
        }
    }

    pub fn dropconnect(p: f64) -> Self {
        Self {
            tag: RegularizerTag::DropConnect,
            spec: MaskSpec::bernoulli(p),
            mask_groups: 1,
        }
    }

    pub fn mask_ensemble(p: f64, groups: usize) -> Self {
        Self {
            tag: RegularizerTag::MaskEnsemble,
            spec: MaskSpec::bernoulli(p),
            mask_groups: groups,
        }
    }

    pub fn pernodedrop(spec: MaskSpec) -> Self {
        Self {
            tag: RegularizerTag::PerNodeDrop,
            spec,
            mask_groups: 1,
        }
    }

    /// Same kind with a different drop rate.
    pub fn with_drop_rate(&self, p: f64) -> Self {
        let mut k = self.clone();
        k.spec.drop_rate = p;
        k
    }

    /// Human-readable variant name, e.g. `PerNodeBernoulli_F`.
    pub fn label(&self) -> String {
        match self.tag {
            RegularizerTag::None => "NoRegularizer".into(),
            RegularizerTag::Dropout => "Dropout".into(),
            RegularizerTag::GaussianDropout => "GaussianDropout".into(),
            RegularizerTag::DropConnect => "DropConnect".into(),
            RegularizerTag::MaskEnsemble => "MaskEnsemble".into(),
            RegularizerTag::PerNodeDrop => {
                let stir = match self.spec.stir {
                    Stir::Bernoulli => "Bernoulli",
                    Stir::Gaussian => "Gaussian",
                    Stir::PartialGaussian => "PartialGaussian",
                };
                let mut s = format!("PerNode{stir}");
                if self.spec.granularity == Granularity::Connection {
                    s.push_str("_C");
                }
                if self.spec.mode == MaskMode::Fixed {
                    s.push_str("_F");
                }
                s
            }
        }
    }

    /// The mask distribution actually used; baselines pin their stir type.
    pub fn effective_spec(&self) -> MaskSpec {
        let mut spec = self.spec.clone();
        spec.stir = match self.tag {
            RegularizerTag::GaussianDropout => Stir::Gaussian,
            RegularizerTag::PerNodeDrop => spec.stir,
            _ => Stir::Bernoulli,
        };
        if self.tag != RegularizerTag::PerNodeDrop {
            spec.granularity = Granularity::Node;
            spec.mode = MaskMode::Dynamic;
        }
        spec
    }

    pub fn validate(&self, din: usize) -> Result<()> {
        self.spec.validate()?;
        if self.tag == RegularizerTag::MaskEnsemble {
            if self.mask_groups == 0 {
                return Err(Error::Config("mask_groups must be positive".into()));
            }
            if !din.is_multiple_of(self.mask_groups) {
                return Err(Error::Config(format!(
                    "MaskEnsemble needs mask_groups to divide the input dimension: \
                     mask_groups = {} does not divide {}",
                    self.mask_groups, din
                )));
            }
        }
        Ok(())
    }
}

/// The perturbation for one batch, ready to be applied to `x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub enum SlotMask {
    Identity,
    /// Multiply the pre-bias product by a constant.
    Scale(f64),
    /// `[B×Din]` mask on the incoming activations.
    Activation(Tensor),
    /// `[B×Din×Dout]` per-sample connection mask.
    Connection(Tensor),
    /// `[Din×Dout]` mask shared by the whole batch.
    Weight(Tensor),
}

impl SlotMask {
    /// Applies the mask to `x·W + b` on plain tensors.
    pub fn apply_dense(&self, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        let z = match self {
            SlotMask::Identity => x.matmul(w)?,
            SlotMask::Scale(c) => x.matmul(w)?.scale(*c)?,
            SlotMask::Activation(m) | SlotMask::Connection(m) => batched_masked_matmul(x, w, m)?,
            SlotMask::Weight(m) => x.matmul(&w.mul(m)?)?,
        };
        z.add_row(b)
    }

    /// Applies the mask to the incoming activations only (no dense layer).
    pub fn apply_activations(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            SlotMask::Identity => Ok(x.clone()),
            SlotMask::Scale(c) => x.scale(*c),
            SlotMask::Activation(m) => x.mul(m),
            SlotMask::Connection(_) | SlotMask::Weight(_) => Err(Error::Contract(
                "weight-level masks have no activation-only form".into(),
            )),
        }
    }

    /// Tape version of [`SlotMask::apply_dense`]; the mask stays constant.
    pub fn apply_dense_on_tape(&self, tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
        let z = match self {
            SlotMask::Identity => tape.matmul(x, w)?,
            SlotMask::Scale(c) => {
                let z = tape.matmul(x, w)?;
                tape.scale(z, *c)?
            }
            SlotMask::Activation(m) | SlotMask::Connection(m) => tape.masked_matmul(x, w, m.clone())?,
            SlotMask::Weight(m) => {
                let wm = tape.mul_const(w, m.clone())?;
                tape.matmul(x, wm)?
            }
        };
        tape.add_row(z, b)
    }
}

/// A configured regularization slot in front of a dense layer of shape
/// `din × dout`. Immutable after construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerLayer {
    kind: RegularizerKind,
    spec: MaskSpec,
    din: usize,
    dout: usize,
    /// MaskEnsemble group masks, each of length `din`.
    ensemble_masks: Vec<Tensor>,
}

impl RegularizerLayer {
    pub fn new(kind: RegularizerKind, din: usize, dout: usize) -> Result<Self> {
        kind.validate(din)?;
        let spec = kind.effective_spec();
        let ensemble_masks = if kind.tag == RegularizerTag::MaskEnsemble {
            let root = RngStream::new(spec.seed).split(ENSEMBLE_STREAM);
            (0..kind.mask_groups)
                .map(|g| bernoulli(spec.drop_rate, &[din], &mut root.split(g as u64)))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            kind,
            spec,
            din,
            dout,
            ensemble_masks,
        })
    }

    pub fn kind(&self) -> &RegularizerKind {
        &self.kind
    }

    pub fn spec(&self) -> &MaskSpec {
        &self.spec
    }

    pub fn ensemble_masks(&self) -> &[Tensor] {
        &self.ensemble_masks
    }

    /// Draws the mask for a batch of `batch` rows.
    ///
    /// `sample_ids` carries persistent dataset ids; fixed PerNodeDrop masks
    /// require it, MaskEnsemble routes on it (falling back to row index).
    pub fn draw(
        &self,
        mode: Mode,
        batch: usize,
        sample_ids: Option<&[u64]>,
        stream: Option<&mut RngStream>,
    ) -> Result<SlotMask> {
        if let Some(ids) = sample_ids {
            if ids.len() != batch {
                return Err(Error::Contract(format!(
                    "{} sample ids for a batch of {batch} rows",
                    ids.len()
                )));
            }
        }
        let spec = &self.spec;
        match self.kind.tag {
            RegularizerTag::None => Ok(SlotMask::Identity),
            RegularizerTag::MaskEnsemble => {
                let mut data = Vec::with_capacity(batch * self.din);
                for row in 0..batch {
                    let id = sample_ids.map_or(row as u64, |ids| ids[row]);
                    let g = (id % self.ensemble_masks.len() as u64) as usize;
                    data.extend_from_slice(self.ensemble_masks[g].data());
                }
                Ok(SlotMask::Activation(Tensor::from_parts(vec![batch, self.din], data)))
            }
            _ if mode == Mode::Eval => {
                let c = expected_mask_value(spec);
                Ok(if c == 1.0 {
                    SlotMask::Identity
                } else {
                    SlotMask::Scale(c)
                })
            }
            _ if spec.is_identity() => Ok(SlotMask::Identity),
            RegularizerTag::Dropout | RegularizerTag::GaussianDropout => {
                let stream = require_stream(stream)?;
                Ok(SlotMask::Activation(sample_mask(spec, &[batch, self.din], stream)?))
            }
            RegularizerTag::DropConnect => {
                let stream = require_stream(stream)?;
                Ok(SlotMask::Weight(sample_mask(spec, &[self.din, self.dout], stream)?))
            }
            RegularizerTag::PerNodeDrop => self.draw_pernode(batch, sample_ids, stream),
        }
    }

    fn draw_pernode(
        &self,
        batch: usize,
        sample_ids: Option<&[u64]>,
        stream: Option<&mut RngStream>,
    ) -> Result<SlotMask> {
        let spec = &self.spec;
        let per_sample: Vec<usize> = match spec.granularity {
            Granularity::Node => vec![self.din],
            Granularity::Connection => vec![self.din, self.dout],
        };
        let mut shape = vec![batch];
        shape.extend(&per_sample);
        let mask = match spec.mode {
            MaskMode::Dynamic => sample_mask(spec, &shape, require_stream(stream)?)?,
            MaskMode::Fixed => {
                let mut data = Vec::with_capacity(shape.iter().product());
                match spec.fixed_key {
                    FixedKey::PerInput => {
                        let ids = sample_ids
                            .ok_or_else(|| Error::Contract("fixed PerNodeDrop masks need sample ids".into()))?;
                        for &id in ids {
                            data.extend(fixed_mask(spec, id, &per_sample)?.into_data());
                        }
                    }
                    FixedKey::PerModel => {
                        let m = fixed_model_mask(spec, &per_sample)?;
                        for _ in 0..batch {
                            data.extend_from_slice(m.data());
                        }
                    }
                }
                Tensor::from_parts(shape, data)
            }
        };
        Ok(match spec.granularity {
            Granularity::Node => SlotMask::Activation(mask),
            Granularity::Connection => SlotMask::Connection(mask),
        })
    }
}

const FIXED_STREAM: u64 = 0x6669_7865_6400;
const FIXED_MODEL_STREAM: u64 = 0x6d6f_6465_6c00;
const ENSEMBLE_STREAM: u64 = 0x656e_7300;

/// The persistent mask of one sample: a pure function of `(spec.seed, id)`.
pub fn fixed_mask(spec: &MaskSpec, sample_id: u64, shape: &[usize]) -> Result<Tensor> {
    let mut stream = RngStream::new(spec.seed).split(FIXED_STREAM).split(sample_id);
    sample_mask(spec, shape, &mut stream)
}

fn fixed_model_mask(spec: &MaskSpec, shape: &[usize]) -> Result<Tensor> {
    let mut stream = RngStream::new(spec.seed).split(FIXED_MODEL_STREAM);
    sample_mask(spec, shape, &mut stream)
}

fn require_stream(stream: Option<&mut RngStream>) -> Result<&mut RngStream> {
    stream.ok_or_else(|| Error::Contract("train-mode sampling needs a random stream".into()))
}

fn dims(x: &Tensor, w: &Tensor) -> Result<(usize, usize, usize)> {
    if x.rank() != 2 || w.rank() != 2 || x.cols() != w.rows() {
        return Err(Error::Shape {
            op: "dense forward",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    Ok((x.rows(), w.rows(), w.cols()))
}

/// PerNodeDrop dense transformation `z_k = x_k·(W ⊙ M_k) + b` (no activation).
pub fn pernodedrop_forward(
    x: &Tensor,
    w: &Tensor,
    bias: &Tensor,
    spec: &MaskSpec,
    mode: Mode,
    sample_ids: Option<&[u64]>,
    stream: Option<&mut RngStream>,
) -> Result<Tensor> {
    let (b, din, dout) = dims(x, w)?;
    let layer = RegularizerLayer::new(RegularizerKind::pernodedrop(spec.clone()), din, dout)?;
    layer.draw(mode, b, sample_ids, stream)?.apply_dense(x, w, bias)
}

/// `y = m ⊙ x` with a per-sample Bernoulli mask; eval scales by `1 − p`.
pub fn dropout_forward(x: &Tensor, spec: &MaskSpec, mode: Mode, stream: Option<&mut RngStream>) -> Result<Tensor> {
    activation_forward(RegularizerKind::dropout(spec.drop_rate), x, spec, mode, stream)
}

/// `y = m ⊙ x` with `m ~ N(1, σ²)`; eval is the identity.
pub fn gaussian_dropout_forward(
    x: &Tensor,
    spec: &MaskSpec,
    mode: Mode,
    stream: Option<&mut RngStream>,
) -> Result<Tensor> {
    let mut kind = RegularizerKind::gaussian_dropout(spec.drop_rate);
    kind.spec.sigma = spec.sigma;
    activation_forward(kind, x, spec, mode, stream)
}

fn activation_forward(
    mut kind: RegularizerKind,
    x: &Tensor,
    spec: &MaskSpec,
    mode: Mode,
    stream: Option<&mut RngStream>,
) -> Result<Tensor> {
    kind.spec.seed = spec.seed;
    if x.rank() != 2 {
        return Err(Error::Shape {
            op: "activation forward",
            left: x.shape().to_vec(),
            right: vec![0, 0],
        });
    }
    let layer = RegularizerLayer::new(kind, x.cols(), 1)?;
    layer.draw(mode, x.rows(), None, stream)?.apply_activations(x)
}

/// `y = x·(W ⊙ M) + b` with one mask per call shared by every row.
pub fn dropconnect_forward(
    x: &Tensor,
    w: &Tensor,
    bias: &Tensor,
    spec: &MaskSpec,
    mode: Mode,
    stream: Option<&mut RngStream>,
) -> Result<Tensor> {
    let (b, din, dout) = dims(x, w)?;
    let layer = RegularizerLayer::new(RegularizerKind::dropconnect(spec.drop_rate), din, dout)?;
    layer.draw(mode, b, None, stream)?.apply_dense(x, w, bias)
}

/// Routes row `k` through group mask `sample_ids[k] mod groups` (row index
/// when ids are absent). `layer` must be a MaskEnsemble layer.
pub fn maskensemble_forward(x: &Tensor, layer: &RegularizerLayer, sample_ids: Option<&[u64]>) -> Result<Tensor> {
    if layer.kind().tag != RegularizerTag::MaskEnsemble {
        return Err(Error::Contract(
            "maskensemble_forward needs a MaskEnsemble layer".into(),
        ));
    }
    layer
        .draw(Mode::Train, x.rows(), sample_ids, None)?
        .apply_activations(x)
}
