//! Training loop, run records and JSON-lines logs.

mod adam;
mod model;

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize};

pub use adam::Adam;
pub use model::{accuracy, loss, loss_on_tape, LossKind, Model, ModelConfig, Output};

use crate::autodiff::{Tape, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::regularizers::Mode;
use crate::rng::RngStream;

fn default_drop_rates() -> Vec<f64> {
    (0..10).map(|i| f64::from(i) / 10.0).collect()
}

fn default_epochs() -> usize {
    20
}

fn default_lr() -> f64 {
    1e-3
}

fn default_batch() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_drop_rates")]
    pub drop_rates: Vec<f64>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    /// Stop after this many epochs without a new best validation loss.
    #[serde(default)]
    pub early_stop: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            drop_rates: default_drop_rates(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            learning_rate: default_lr(),
            seed: 0,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if let Some(bad) = self.drop_rates.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(Error::Config(format!("drop rate {bad} outside [0, 1)")));
        }
        if self.early_stop == Some(0) {
            return Err(Error::Config("early_stop patience must be at least 1".into()));
        }
        Ok(())
    }
}

fn nan_from_null<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// One epoch of one run. Non-finite metrics serialize as `null`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainRecord {
    pub variant: String,
    pub drop_rate: f64,
    pub epoch: usize,
    #[serde(deserialize_with = "nan_from_null")]
    pub val_loss: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub val_acc: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub train_loss_clean: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub train_acc_clean: f64,
    pub epoch_wall_seconds: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub diverged: bool,
}

impl PartialEq for TrainRecord {
    /// Bitwise on floats, so NaN-bearing diverged records compare equal to
    /// their own replay.
    fn eq(&self, o: &Self) -> bool {
        let same = |a: f64, b: f64| a.to_bits() == b.to_bits();
        self.variant == o.variant
            && same(self.drop_rate, o.drop_rate)
            && self.epoch == o.epoch
            && same(self.val_loss, o.val_loss)
            && same(self.val_acc, o.val_acc)
            && same(self.train_loss_clean, o.train_loss_clean)
            && same(self.train_acc_clean, o.train_acc_clean)
            && same(self.epoch_wall_seconds, o.epoch_wall_seconds)
            && self.diverged == o.diverged
    }
}

impl TrainRecord {
    /// Same record with the wall time zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            epoch_wall_seconds: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub records: Vec<TrainRecord>,
    pub model: Model,
    pub diverged: bool,
}

const SHUFFLE_STREAM: u64 = 1;
const MASK_STREAM: u64 = 2;

/// Loss and accuracy over the whole dataset in Eval mode.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<(f64, f64)> {
    let pred = model.forward(&data.features, Mode::Eval, Some(&data.sample_ids), None)?;
    let kind = model.loss_kind();
    Ok((loss(&pred, &data.targets, kind)?, accuracy(&pred, &data.targets, kind)?))
}

fn check_data(model: &ModelConfig, data: &Dataset, which: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Contract(format!("{which} set is empty")));
    }
    if data.n_features() != model.input_dim || data.n_outputs() != model.output.width() {
        return Err(Error::Shape {
            op: "dataset vs model",
            left: vec![data.n_features(), data.n_outputs()],
            right: vec![model.input_dim, model.output.width()],
        });
    }
    Ok(())
}

/// One optimisation step on a mini-batch; returns the batch loss.
fn train_step(model: &mut Model, opt: &mut Adam, batch: &Dataset, masks: &mut RngStream) -> Result<f64> {
    let slot = model.draw_slot_mask(Mode::Train, batch.len(), Some(&batch.sample_ids), Some(masks))?;
    let mut tape = Tape::new();
    let params: Vec<Var> = model.params().iter().map(|p| tape.leaf(p.clone())).collect();
    let x = tape.constant(batch.features.clone());
    let probs = model.forward_on_tape(&mut tape, &params, x, &slot)?;
    let l = loss_on_tape(&mut tape, probs, &batch.targets, model.loss_kind())?;
    let value = tape.value(l).item()?;
    if !value.is_finite() {
        return Err(Error::Domain(format!("non-finite batch loss {value}")));
    }
    let grads = tape.backward(l)?;
    let grads: Vec<_> = params
        .iter()
        .map(|&v| {
            grads
                .get(v)
                .cloned()
                .ok_or_else(|| Error::Contract("missing gradient".into()))
        })
        .collect::<Result<_>>()?;
    if grads.iter().any(|g| g.data().iter().any(|v| !v.is_finite())) {
        return Err(Error::Domain("non-finite gradient".into()));
    }
    opt.step(model.params_mut(), &grads)?;
    Ok(value)
}

fn run_epoch(
    model: &mut Model,
    opt: &mut Adam,
    data: &Dataset,
    batch_size: usize,
    order_stream: &mut RngStream,
    masks: &mut RngStream,
) -> Result<()> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order_stream.shuffle(&mut order);
    for chunk in order.chunks(batch_size) {
        let batch = data.subset(chunk)?;
        train_step(model, opt, &batch, masks)?;
    }
    Ok(())
}

/// Trains one model with the regularizer in `model_cfg` and returns one
/// record per completed epoch.
///
/// Clean training metrics are measured after the epoch's last update, in
/// Eval mode, over the full training set. A numerical failure stops the run
/// and appends a single `diverged` record for the failing epoch.
pub fn train(model_cfg: &ModelConfig, cfg: &TrainConfig, train_set: &Dataset, val_set: &Dataset) -> Result<TrainRun> {
    cfg.validate()?;
    model_cfg.validate()?;
    check_data(model_cfg, train_set, "training")?;
    check_data(model_cfg, val_set, "validation")?;

    let mut model = Model::new(model_cfg.clone(), cfg.seed)?;
    let mut opt = Adam::new(cfg.learning_rate);
    let root = RngStream::new(cfg.seed);
    let variant = model_cfg.regularizer.label();
    let drop_rate = model_cfg.regularizer.spec.drop_rate;

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut diverged = false;

    for epoch in 1..=cfg.epochs {
        let mut order = root.split(SHUFFLE_STREAM).split(epoch as u64);
        let mut masks = root.split(MASK_STREAM).split(epoch as u64);
        let start = Instant::now();
        let stepped = run_epoch(&mut model, &mut opt, train_set, cfg.batch_size, &mut order, &mut masks);
        let wall = start.elapsed().as_secs_f64();

        let metrics = stepped.and_then(|()| Ok((evaluate(&model, train_set)?, evaluate(&model, val_set)?)));
        let ((tl, ta), (vl, va)) = match metrics {
            Ok(m) if [m.0 .0, m.1 .0].iter().all(|v| v.is_finite()) => m,
            Ok(_) | Err(Error::Domain(_)) => {
                diverged = true;
                records.push(TrainRecord {
                    variant: variant.clone(),
                    drop_rate,
                    epoch,
                    val_loss: f64::NAN,
                    val_acc: f64::NAN,
                    train_loss_clean: f64::NAN,
                    train_acc_clean: f64::NAN,
                    epoch_wall_seconds: wall,
                    diverged: true,
                });
                break;
            }
            Err(e) => return Err(e),
        };
        records.push(TrainRecord {
            variant: variant.clone(),
            drop_rate,
            epoch,
            val_loss: vl,
            val_acc: va,
            train_loss_clean: tl,
            train_acc_clean: ta,
            epoch_wall_seconds: wall,
            diverged: false,
        });

        if let Some(patience) = cfg.early_stop {
            if vl < best {
                best = vl;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
    }
    Ok(TrainRun {
        records,
        model,
        diverged,
    })
}

/// Runs `train` once per drop rate in `cfg.drop_rates`.
pub fn sweep(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<Vec<TrainRun>> {
    cfg.drop_rates
        .iter()
        .map(|&p| {
            let mut mc = model_cfg.clone();
            mc.regularizer = mc.regularizer.with_drop_rate(p);
            train(&mc, cfg, train_set, val_set)
        })
        .collect()
}

pub fn write_records<W: Write>(mut out: W, records: &[TrainRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn append_records(path: &Path, records: &[TrainRecord]) -> Result<()> {
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut out = std::io::BufWriter::new(file);
    write_records(&mut out, records)?;
    out.flush()?;
    Ok(())
}

/// Reads a JSON-lines log, skipping blank lines.
pub fn read_records(path: &Path) -> Result<Vec<TrainRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(vl: f64) -> TrainRecord {
        TrainRecord {
            variant: "Dropout".into(),
            drop_rate: 0.3,
            epoch: 2,
            val_loss: vl,
            val_acc: 0.5,
            train_loss_clean: 0.25,
            train_acc_clean: 0.75,
            epoch_wall_seconds: 0.01,
            diverged: !vl.is_finite(),
        }
    }

    #[test]
    fn jsonl_round_trip_including_nan() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let recs = [record(0.123456789012345), record(f64::NAN)];
        append_records(&path, &recs[..1]).unwrap();
        append_records(&path, &recs[1..]).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], recs[0]);
        assert!(back[1].val_loss.is_nan() && back[1].diverged);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().contains("\"val_loss\":0.123456789012345"));
        assert!(!text.lines().next().unwrap().contains("diverged"));
        assert!(text.lines().nth(1).unwrap().contains("\"val_loss\":null"));
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!(c.drop_rates.len(), 10);
        assert_eq!(c.drop_rates[9], 0.9);
        assert_eq!(c.epochs, 20);
        assert_eq!(c.learning_rate, 1e-3);
        assert!(c.validate().is_ok());
        assert!(TrainConfig {
            batch_size: 0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig { epochs: 0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig {
            drop_rates: vec![1.0],
            ..c
        }
        .validate()
        .is_err());
    }
}
