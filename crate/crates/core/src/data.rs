//! In-memory datasets and the synthetic generators used as desk-scale
//! stand-ins for image/text/audio benchmarks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// One-hot targets, softmax output, categorical cross-entropy.
    Multiclass,
    /// Multi-hot targets, sigmoid output, binary cross-entropy.
    Multilabel,
}

/// Features, targets and the persistent id of every sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub targets: Tensor,
    pub sample_ids: Vec<u64>,
    pub task: Task,
}

impl Dataset {
    pub fn new(features: Tensor, targets: Tensor, sample_ids: Vec<u64>, task: Task) -> Result<Self> {
        if features.rank() != 2 || targets.rank() != 2 {
            return Err(Error::Contract("features and targets must be matrices".into()));
        }
        if features.rows() != targets.rows() || features.rows() != sample_ids.len() {
            return Err(Error::Contract(format!(
                "{} feature rows, {} target rows, {} sample ids",
                features.rows(),
                targets.rows(),
                sample_ids.len()
            )));
        }
        Ok(Self {
            features,
            targets,
            sample_ids,
            task,
        })
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_outputs(&self) -> usize {
        self.targets.cols()
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            features: self.features.select_rows(rows)?,
            targets: self.targets.select_rows(rows)?,
            sample_ids: rows.iter().map(|&r| self.sample_ids[r]).collect(),
            task: self.task,
        })
    }

    /// Deterministic shuffled split; returns `(train, validation)`.
    pub fn split(&self, val_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must lie in [0, 1), got {val_fraction}"
            )));
        }
        let n = self.len();
        let n_val = ((n as f64) * val_fraction).round() as usize;
        if n_val == 0 || n_val >= n {
            return Err(Error::Config(format!(
                "split of {n} samples at {val_fraction} leaves an empty side"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        RngStream::new(seed).split(SPLIT_STREAM).shuffle(&mut order);
        let (val, train) = order.split_at(n_val);
        let mut train = train.to_vec();
        let mut val = val.to_vec();
        train.sort_unstable();
        val.sort_unstable();
        Ok((self.subset(&train)?, self.subset(&val)?))
    }

    /// Class index per row (argmax of the target row).
    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|r| argmax(self.targets.row(r))).collect()
    }
}

const SPLIT_STREAM: u64 = 0x0073_706c_6974;

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (r, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Contract(format!("label {l} out of range for {classes} classes")));
        }
        data[r * classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Isotropic Gaussian clusters around random class centres.
    GaussianBlobs,
    /// Interleaved spiral arms in the first two features, noise elsewhere.
    TwoSpirals,
    /// Weakly separated blobs with many features: easy to memorise, hard to
    /// generalise once labels are corrupted.
    NoisyLabelMemorization,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::Config("n_samples must be at least 2".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be at least 2".into()));
        }
        let min_features = if self.kind == SyntheticKind::TwoSpirals { 2 } else { 1 };
        if self.n_features < min_features {
            return Err(Error::Config(format!(
                "n_features must be at least {min_features} for {:?}",
                self.kind
            )));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::Config(format!(
                "label_noise must lie in [0, 1], got {}",
                self.label_noise
            )));
        }
        Ok(())
    }
}

/// Generates a synthetic multiclass dataset.
///
/// Labels start as `i mod n_classes`, so class counts are balanced within
/// one. Label noise picks `round(noise·n)` samples and shuffles their labels
/// among themselves, which keeps the class counts intact; at noise 1 the
/// labels are a random permutation independent of the features.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let root = RngStream::new(spec.seed);
    let (n, d, k) = (spec.n_samples, spec.n_features, spec.n_classes);
    let clean: Vec<usize> = (0..n).map(|i| i % k).collect();

    let mut feat = root.split(1);
    let mut data = Vec::with_capacity(n * d);
    match spec.kind {
        SyntheticKind::GaussianBlobs | SyntheticKind::NoisyLabelMemorization => {
            let (spread, noise) = match spec.kind {
                SyntheticKind::GaussianBlobs => (4.0, 1.0),
                _ => (0.5, 1.0),
            };
            let mut centres = root.split(0);
            let c: Vec<f64> = (0..k * d).map(|_| spread * centres.next_normal()).collect();
            for &label in &clean {
                for j in 0..d {
                    data.push(c[label * d + j] + noise * feat.next_normal());
                }
            }
        }
        SyntheticKind::TwoSpirals => {
            for (i, &label) in clean.iter().enumerate() {
                let t = (i / k) as f64 / (n / k).max(1) as f64;
                let radius = 0.2 + 2.8 * t;
                let angle = 3.0 * std::f64::consts::PI * t + label as f64 * std::f64::consts::TAU / k as f64;
                data.push(radius * angle.cos() + 0.1 * feat.next_normal());
                data.push(radius * angle.sin() + 0.1 * feat.next_normal());
                for _ in 2..d {
                    data.push(feat.next_normal());
                }
            }
        }
    }

    let mut labels = clean;
    let n_noisy = (spec.label_noise * n as f64).round() as usize;
    if n_noisy > 1 {
        let mut noise = root.split(2);
        let mut idx: Vec<usize> = (0..n).collect();
        noise.shuffle(&mut idx);
        let chosen = &idx[..n_noisy];
        let mut pool: Vec<usize> = chosen.iter().map(|&i| labels[i]).collect();
        noise.shuffle(&mut pool);
        for (&i, l) in chosen.iter().zip(pool) {
            labels[i] = l;
        }
    }

    Dataset::new(
        Tensor::new(vec![n, d], data)?,
        one_hot(&labels, k)?,
        (0..n as u64).collect(),
        Task::Multiclass,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: SyntheticKind, noise: f64) -> SyntheticSpec {
        SyntheticSpec {
            kind,
            n_samples: 101,
            n_features: 5,
            n_classes: 4,
            label_noise: noise,
            seed: 7,
        }
    }

    #[test]
    fn deterministic_and_balanced() {
        for kind in [
            SyntheticKind::GaussianBlobs,
            SyntheticKind::TwoSpirals,
            SyntheticKind::NoisyLabelMemorization,
        ] {
            for noise in [0.0, 0.3, 1.0] {
                let a = generate(&spec(kind, noise)).unwrap();
                assert_eq!(a, generate(&spec(kind, noise)).unwrap());
                let mut counts = [0usize; 4];
                for l in a.labels() {
                    counts[l] += 1;
                }
                let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
                assert!(hi - lo <= 1, "{kind:?} {counts:?}");
            }
        }
    }

    #[test]
    fn noise_changes_labels() {
        let clean = generate(&spec(SyntheticKind::GaussianBlobs, 0.0)).unwrap();
        let noisy = generate(&spec(SyntheticKind::GaussianBlobs, 1.0)).unwrap();
        assert_eq!(clean.features, noisy.features);
        let same = clean
            .labels()
            .iter()
            .zip(noisy.labels())
            .filter(|(a, b)| **a == *b)
            .count();
        // a random permutation keeps about n/k labels
        assert!(same < 50, "{same}");
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let d = generate(&spec(SyntheticKind::GaussianBlobs, 0.0)).unwrap();
        let (tr, va) = d.split(0.2, 3).unwrap();
        assert_eq!(tr.len() + va.len(), d.len());
        assert_eq!(va.len(), 20);
        let (tr2, _) = d.split(0.2, 3).unwrap();
        assert_eq!(tr, tr2);
        assert!(tr.sample_ids.iter().all(|id| !va.sample_ids.contains(id)));
        assert!(d.split(0.0, 1).is_err());
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec(SyntheticKind::GaussianBlobs, 0.0);
        s.label_noise = 1.5;
        assert!(generate(&s).is_err());
        s.label_noise = 0.0;
        s.n_classes = 1;
        assert!(generate(&s).is_err());
    }
}
