//! TOML experiment files.
//!
//! ```toml
//! out_dir = "runs/demo"
//! jobs = 2
//!
//! [dataset]
//! val_fraction = 0.2
//! [dataset.synthetic]
//! kind = "noisy_label_memorization"
//! n_samples = 512
//! n_features = 20
//! n_classes = 4
//! label_noise = 0.2
//! seed = 7
//!
//! [model]
//! hidden_widths = [64]
//! reg_position = 1
//! dense_units = 64
//!
//! [train]
//! drop_rates = [0.0, 0.3, 0.6]
//! epochs = 20
//! batch_size = 32
//!
//! [[variants]]
//! kind = "pernodedrop"
//! stir = "gaussian"
//! mode = "fixed"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pernode_core::data::{generate, Dataset, SyntheticSpec, Task};
use pernode_core::regularizers::{FixedKey, Granularity, MaskMode, MaskSpec, RegularizerKind, Stir};
use pernode_core::training::{ModelConfig, Output, TrainConfig};

use crate::data_io::read_dataset;
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub variants: Vec<VariantConfig>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub jobs: Option<usize>,
}

fn default_val_fraction() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub csv: Option<CsvSource>,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Seed of the train/validation split; defaults to the training seed.
    #[serde(default)]
    pub split_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub features: PathBuf,
    pub labels: PathBuf,
    #[serde(default = "default_task")]
    pub task: Task,
}

fn default_task() -> Task {
    Task::Multiclass
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    #[default]
    Softmax,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub hidden_widths: Vec<usize>,
    #[serde(default)]
    pub reg_position: usize,
    pub dense_units: usize,
    #[serde(default)]
    pub output: OutputKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    None,
    Dropout,
    GaussianDropout,
    Dropconnect,
    MaskEnsemble,
    Pernodedrop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    /// Name used in logs and reports; defaults to the regularizer's label.
    #[serde(default)]
    pub name: Option<String>,
    pub kind: VariantKind,
    #[serde(default)]
    pub stir: Option<Stir>,
    #[serde(default)]
    pub granularity: Option<Granularity>,
    #[serde(default)]
    pub mode: Option<MaskMode>,
    #[serde(default)]
    pub fixed_key: Option<FixedKey>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub partial_threshold: Option<f64>,
    #[serde(default)]
    pub mask_groups: Option<usize>,
    /// Seed of fixed and ensemble masks; defaults to the training seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl VariantConfig {
    /// The regularizer at drop rate 0; `with_drop_rate` sets the grid value.
    pub fn to_kind(&self, default_seed: u64) -> RegularizerKind {
        let mut kind = match self.kind {
            VariantKind::None => RegularizerKind::none(),
            VariantKind::Dropout => RegularizerKind::dropout(0.0),
            VariantKind::GaussianDropout => RegularizerKind::gaussian_dropout(0.0),
            VariantKind::Dropconnect => RegularizerKind::dropconnect(0.0),
            VariantKind::MaskEnsemble => RegularizerKind::mask_ensemble(0.0, self.mask_groups.unwrap_or(1)),
            VariantKind::Pernodedrop => {
                let mut spec = match self.stir.unwrap_or(Stir::Bernoulli) {
                    Stir::Bernoulli => MaskSpec::bernoulli(0.0),
                    Stir::Gaussian => MaskSpec::gaussian(0.0),
                    Stir::PartialGaussian => MaskSpec::partial_gaussian(0.0, 0.0),
                };
                spec.partial_threshold = self.partial_threshold;
                spec.granularity = self.granularity.unwrap_or_default();
                spec.mode = self.mode.unwrap_or_default();
                spec.fixed_key = self.fixed_key.unwrap_or_default();
                RegularizerKind::pernodedrop(spec)
            }
        };
        kind.spec.sigma = self.sigma;
        kind.spec.seed = self.seed.unwrap_or(default_seed);
        kind
    }

    pub fn display_name(&self, default_seed: u64) -> String {
        self.name.clone().unwrap_or_else(|| self.to_kind(default_seed).label())
    }

    fn check(&self, i: usize) -> CliResult<()> {
        let key = |field: &str| format!("variants[{i}].{field}");
        let pernode = self.kind == VariantKind::Pernodedrop;
        let only_pernode = [
            ("stir", self.stir.is_some()),
            ("granularity", self.granularity.is_some()),
            ("mode", self.mode.is_some()),
            ("fixed_key", self.fixed_key.is_some()),
            ("partial_threshold", self.partial_threshold.is_some()),
        ];
        for (field, set) in only_pernode {
            if set && !pernode {
                return Err(CliError::Config(format!(
                    "{}: only valid for kind = \"pernodedrop\"",
                    key(field)
                )));
            }
        }
        if self.partial_threshold.is_some() && self.stir != Some(Stir::PartialGaussian) {
            return Err(CliError::Config(format!(
                "{}: only valid with stir = \"partial_gaussian\"",
                key("partial_threshold")
            )));
        }
        if let Some(t) = self.partial_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::Config(format!(
                    "{}: must lie in [0, 1], got {t}",
                    key("partial_threshold")
                )));
            }
        }
        if self.sigma.is_some() && !(pernode || self.kind == VariantKind::GaussianDropout) {
            return Err(CliError::Config(format!(
                "{}: only valid for gaussian_dropout or pernodedrop",
                key("sigma")
            )));
        }
        if self.sigma.is_some() && pernode && matches!(self.stir, None | Some(Stir::Bernoulli)) {
            return Err(CliError::Config(format!(
                "{}: has no effect with a bernoulli stir",
                key("sigma")
            )));
        }
        if let Some(s) = self.sigma {
            if !(s.is_finite() && s >= 0.0) {
                return Err(CliError::Config(format!(
                    "{}: must be finite and non-negative, got {s}",
                    key("sigma")
                )));
            }
        }
        match (self.kind, self.mask_groups) {
            (VariantKind::MaskEnsemble, None) => {
                return Err(CliError::Config(format!(
                    "{}: required for mask_ensemble",
                    key("mask_groups")
                )))
            }
            (VariantKind::MaskEnsemble, Some(0)) => {
                return Err(CliError::Config(format!("{}: must be at least 1", key("mask_groups"))))
            }
            (VariantKind::MaskEnsemble, Some(_)) | (_, None) => {}
            (_, Some(_)) => {
                return Err(CliError::Config(format!(
                    "{}: only valid for kind = \"mask_ensemble\"",
                    key("mask_groups")
                )))
            }
        }
        if let Some(name) = &self.name {
            if name.trim().is_empty() || name.contains(['\n', ',', '"']) {
                return Err(CliError::Config(format!(
                    "{}: {name:?} is not a usable name",
                    key("name")
                )));
            }
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, path: &Path) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|source| CliError::Toml {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text, path)?;
        // csv paths are relative to the config file
        if let (Some(csv), Some(dir)) = (cfg.dataset.csv.as_mut(), path.parent()) {
            csv.features = dir.join(&csv.features);
            csv.labels = dir.join(&csv.labels);
        }
        Ok(cfg)
    }

    /// Checks everything that can be checked without touching the data.
    pub fn validate(&self) -> CliResult<()> {
        let d = &self.dataset;
        match (&d.synthetic, &d.csv) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "dataset: set exactly one of dataset.synthetic and dataset.csv, not both".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Config(
                    "dataset: missing dataset.synthetic or dataset.csv".into(),
                ))
            }
            (Some(s), None) => s
                .validate()
                .map_err(|e| CliError::Config(format!("dataset.synthetic: {e}")))?,
            (None, Some(_)) => {}
        }
        if !(d.val_fraction > 0.0 && d.val_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "dataset.val_fraction: must lie in (0, 1), got {}",
                d.val_fraction
            )));
        }
        self.train
            .validate()
            .map_err(|e| CliError::Config(format!("train: {e}")))?;
        if let Some(m) = &self.model {
            if m.dense_units == 0 {
                return Err(CliError::Config("model.dense_units: must be positive".into()));
            }
            if m.hidden_widths.contains(&0) {
                return Err(CliError::Config("model.hidden_widths: widths must be positive".into()));
            }
            if m.reg_position > m.hidden_widths.len() {
                return Err(CliError::Config(format!(
                    "model.reg_position: {} is past the {} hidden layers",
                    m.reg_position,
                    m.hidden_widths.len()
                )));
            }
        }
        if self.jobs == Some(0) {
            return Err(CliError::Config("jobs: must be at least 1".into()));
        }
        let mut names = Vec::new();
        for (i, v) in self.variants.iter().enumerate() {
            v.check(i)?;
            let name = v.display_name(self.train.seed);
            if names.contains(&name) {
                return Err(CliError::Config(format!(
                    "variants[{i}].name: variant name {name:?} is used twice; set distinct names"
                )));
            }
            names.push(name);
        }
        Ok(())
    }

    /// Grid-level requirements on top of `validate`.
    pub fn require_grid(&self) -> CliResult<&ModelSection> {
        if self.variants.is_empty() {
            return Err(CliError::Config(
                "variants: at least one [[variants]] entry is required".into(),
            ));
        }
        if self.train.drop_rates.is_empty() {
            return Err(CliError::Config("train.drop_rates: must not be empty".into()));
        }
        self.model
            .as_ref()
            .ok_or_else(|| CliError::Config("model: missing [model] section".into()))
    }

    pub fn split_seed(&self) -> u64 {
        self.dataset.split_seed.unwrap_or(self.train.seed)
    }

    pub fn load_dataset(&self) -> CliResult<Dataset> {
        if let Some(s) = &self.dataset.synthetic {
            return Ok(generate(s)?);
        }
        let csv = self.dataset.csv.as_ref().expect("validated dataset source");
        read_dataset(&csv.features, &csv.labels, csv.task)
    }

    /// Model configuration for `data` with the given regularizer.
    pub fn model_config(&self, data: &Dataset, regularizer: RegularizerKind) -> CliResult<ModelConfig> {
        let m = self
            .model
            .as_ref()
            .ok_or_else(|| CliError::Config("model: missing [model] section".into()))?;
        let output = match (m.output, data.task) {
            (OutputKind::Softmax, Task::Multiclass) => Output::Softmax {
                classes: data.n_outputs(),
            },
            (OutputKind::Sigmoid, Task::Multilabel) => Output::Sigmoid {
                labels: data.n_outputs(),
            },
            (out, task) => {
                return Err(CliError::Config(format!(
                    "model.output: {out:?} does not fit a {task:?} dataset"
                )))
            }
        };
        Ok(ModelConfig {
            input_dim: data.n_features(),
            hidden_widths: m.hidden_widths.clone(),
            regularizer,
            reg_position: m.reg_position,
            output,
            dense_units: m.dense_units,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[dataset.synthetic]
kind = "gaussian_blobs"
n_samples = 60
n_features = 4
n_classes = 3

[model]
hidden_widths = [8]
reg_position = 1
dense_units = 8

[train]
drop_rates = [0.0, 0.5]
epochs = 2

[[variants]]
kind = "pernodedrop"
stir = "partial_gaussian"
partial_threshold = 0.25
mode = "fixed"

[[variants]]
kind = "mask_ensemble"
mask_groups = 2
"#;

    fn parse(text: &str) -> CliResult<ExperimentConfig> {
        ExperimentConfig::parse(text, Path::new("test.toml"))
    }

    #[test]
    fn parses_base_config() {
        let c = parse(BASE).unwrap();
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.dataset.val_fraction, 0.2);
        let k = c.variants[0].to_kind(5);
        assert_eq!(k.spec.stir, Stir::PartialGaussian);
        assert_eq!(k.spec.partial_threshold, Some(0.25));
        assert_eq!(k.spec.mode, MaskMode::Fixed);
        assert_eq!(k.spec.seed, 5);
        assert_eq!(c.variants[1].to_kind(0).mask_groups, 2);
        assert_eq!(c.variants[0].display_name(0), "PerNodePartialGaussian_F");
    }

    fn expect_key(text: &str, key: &str) {
        let err = parse(text).expect_err(key);
        let msg = err.to_string();
        assert!(msg.contains(key), "{msg:?} should name {key}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rejects_unknown_and_misplaced_keys() {
        expect_key(&format!("{BASE}\nbogus = 1\n"), "bogus");
        expect_key(
            &BASE.replace("epochs = 2", "epochs = 2\nlearning_rat = 0.1"),
            "learning_rat",
        );
        expect_key(
            &BASE.replace("mask_groups = 2", "mask_groups = 2\nstir = \"gaussian\""),
            "variants[1].stir",
        );
        expect_key(&BASE.replace("mask_groups = 2", ""), "variants[1].mask_groups");
        expect_key(&BASE.replace("epochs = 2", "epochs = 0"), "epochs");
        expect_key(
            &BASE.replace("n_classes = 3", "n_classes = 3\nlabel_noise = 2.0"),
            "label_noise",
        );
        expect_key(
            &BASE.replace("reg_position = 1", "reg_position = 4"),
            "model.reg_position",
        );
        expect_key(
            &BASE.replace("kind = \"mask_ensemble\"", "kind = \"dropblock\""),
            "dropblock",
        );
        expect_key(
            &BASE.replace("drop_rates = [0.0, 0.5]", "drop_rates = [0.0, 1.0]"),
            "drop rate",
        );
        expect_key(&BASE.replace("epochs = 2", "epochs = \"two\""), "epochs");
    }
}
