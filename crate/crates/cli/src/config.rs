//! `key = value` run configuration.
//!
//! ```text
//! # data
//! data.format        = idx            # idx | csv
//! data.train_images  = train-images.idx
//! data.train_labels  = train-labels.idx
//! data.test_images   = test-images.idx
//! data.test_labels   = test-labels.idx
//! data.train         = train.csv      # csv only
//! data.test          = test.csv       # csv only
//! data.label_column  = last           # csv only: last | index | column name
//! data.header        = false          # csv only
//!
//! model.inputs       = 64             # optional when data is given
//! model.hidden       = 128, 128
//! model.classes      = 10
//! model.regularization = ste-dropout  # none | dropout | ste-dropout | ste-dropconnect
//! model.averaging    = 8
//! model.keep         = 0.5
//! model.output_keep  = 0.5            # defaults to model.keep
//!
//! train.learning_rate = 0.01
//! train.decay        = 1e-4
//! train.momentum     = 0.9
//! train.batch_size   = 128
//! train.epochs       = 128
//! train.val_fraction = 0.1
//! train.seed         = 0
//!
//! experiment.configs = none, dropout, ste-dropout
//! experiment.learning_rate.ste-dropout = 0.2
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ste_core::{LabelColumn, LayerSpec, ModelSpec, Regularization, TrainConfig};

use crate::Failure;

const KEYS: &[&str] = &[
    "data.format",
    "data.train_images",
    "data.train_labels",
    "data.test_images",
    "data.test_labels",
    "data.train",
    "data.test",
    "data.label_column",
    "data.header",
    "model.inputs",
    "model.hidden",
    "model.classes",
    "model.regularization",
    "model.averaging",
    "model.keep",
    "model.output_keep",
    "train.learning_rate",
    "train.decay",
    "train.momentum",
    "train.batch_size",
    "train.epochs",
    "train.val_fraction",
    "train.seed",
    "experiment.configs",
];

const LR_PREFIX: &str = "experiment.learning_rate.";

#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<String, (usize, String)>,
    base: PathBuf,
    source: PathBuf,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base, path.to_path_buf())
    }

    pub fn parse(text: &str, base: PathBuf, source: PathBuf) -> Result<Self, Failure> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Failure::config(format!(
                    "{}:{line_no}: expected `key = value`, got {line:?}",
                    source.display()
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            let known = KEYS.contains(&key)
                || key
                    .strip_prefix(LR_PREFIX)
                    .is_some_and(|name| Regularization::from_str(name).is_ok());
            if !known {
                return Err(Failure::config(format!("{}:{line_no}: unknown key `{key}`", source.display())));
            }
            if values.insert(key.to_string(), (line_no, value.to_string())).is_some() {
                return Err(Failure::config(format!("{}:{line_no}: duplicate key `{key}`", source.display())));
            }
        }
        Ok(Self { values, base, source })
    }

    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.values.get(key)
    }

    pub fn required(&self, key: &str) -> Result<&str, Failure> {
        self.raw(key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Failure::config(format!("{}: missing required key `{key}`", self.source.display())))
    }

    fn parse_value<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<T>, Failure> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| {
                Failure::config(format!("{}:{line}: `{key}` must be {what}, got {v:?}", self.source.display()))
            }),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize, Failure> {
        Ok(self.parse_value(key, "a non-negative integer")?.unwrap_or(default))
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, Failure> {
        Ok(self.parse_value(key, "a number")?.unwrap_or(default))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, Failure> {
        Ok(self.base.join(self.required(key)?))
    }

    pub fn train_config(&self) -> Result<TrainConfig, Failure> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            learning_rate: self.f64_or("train.learning_rate", d.learning_rate)?,
            decay: self.f64_or("train.decay", d.decay)?,
            momentum: self.f64_or("train.momentum", d.momentum)?,
            batch_size: self.usize_or("train.batch_size", d.batch_size)?,
            epochs: self.usize_or("train.epochs", d.epochs)?,
            val_fraction: self.f64_or("train.val_fraction", d.val_fraction)?,
            seed: self.parse_value("train.seed", "a non-negative integer")?.unwrap_or(d.seed),
        };
        cfg.validate().map_err(|e| Failure::config(format!("{}: {e}", self.source.display())))?;
        Ok(cfg)
    }

    pub fn regularization(&self) -> Result<Regularization, Failure> {
        Ok(self
            .parse_value("model.regularization", "one of none, dropout, ste-dropout, ste-dropconnect")?
            .unwrap_or(Regularization::SteDropout))
    }

    /// Model for `reg` with `inputs` features; `inputs` falls back to `model.inputs`.
    pub fn model_spec(&self, reg: Regularization, inputs: Option<usize>) -> Result<ModelSpec, Failure> {
        let declared: Option<usize> = self.parse_value("model.inputs", "a positive integer")?;
        let inputs = match (declared, inputs) {
            (Some(a), Some(b)) if a != b => {
                return Err(Failure::data(format!("`model.inputs` is {a} but the data has {b} features")));
            }
            (_, Some(n)) | (Some(n), None) => n,
            (None, None) => {
                return Err(Failure::config(format!(
                    "{}: missing required key `model.inputs`",
                    self.source.display()
                )));
            }
        };
        let hidden = self
            .required("model.hidden")?
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| Failure::config("`model.hidden` must be a comma-separated list of layer widths"))?;
        let classes: usize = self.parse_value("model.classes", "a positive integer")?.ok_or_else(|| {
            Failure::config(format!("{}: missing required key `model.classes`", self.source.display()))
        })?;
        let averaging = self.usize_or("model.averaging", 8)?;
        let keep = self.f64_or("model.keep", 0.5)?;
        let output_keep = self.f64_or("model.output_keep", keep)?;
        let mut spec = ModelSpec::mlp(inputs, &hidden, classes, reg, averaging, keep);
        let last = spec.layers.len() - 1;
        for layer in &mut spec.layers[..last] {
            match layer {
                LayerSpec::Dense { output_keep: ok @ Some(_), .. } | LayerSpec::Ste { output_keep: ok @ Some(_), .. } => {
                    *ok = Some(output_keep)
                }
                _ => {}
            }
        }
        spec.validate().map_err(|e| Failure::config(format!("{}: {e}", self.source.display())))?;
        Ok(spec)
    }

    /// Named experiment configurations with their training settings.
    pub fn experiment_configs(&self, inputs: Option<usize>) -> Result<Vec<ste_core::ExperimentConfig>, Failure> {
        let names = match self.raw("experiment.configs") {
            Some((_, v)) => v.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>(),
            None => Regularization::ALL.iter().map(|r| r.name().to_string()).collect(),
        };
        let base = self.train_config()?;
        names
            .iter()
            .map(|name| {
                let reg = Regularization::from_str(name)
                    .map_err(|_| Failure::config(format!("`experiment.configs`: unknown configuration {name:?}")))?;
                let lr = self.f64_or(&format!("{LR_PREFIX}{name}"), base.learning_rate)?;
                let train = TrainConfig { learning_rate: lr, ..base.clone() };
                train.validate().map_err(|e| Failure::config(format!("{name}: {e}")))?;
                Ok(ste_core::ExperimentConfig { name: name.clone(), spec: self.model_spec(reg, inputs)?, train })
            })
            .collect()
    }

    pub fn data_source(&self) -> Result<DataSource, Failure> {
        match self.required("data.format")? {
            "idx" => Ok(DataSource::Idx {
                train_images: ("data.train_images", self.path("data.train_images")?),
                train_labels: ("data.train_labels", self.path("data.train_labels")?),
                test_images: ("data.test_images", self.path("data.test_images")?),
                test_labels: ("data.test_labels", self.path("data.test_labels")?),
            }),
            "csv" => Ok(DataSource::Csv {
                train: ("data.train", self.path("data.train")?),
                test: ("data.test", self.path("data.test")?),
                label: self
                    .raw("data.label_column")
                    .map(|(_, v)| v.parse().expect("LabelColumn parsing is infallible"))
                    .unwrap_or(LabelColumn::Last),
                header: self.parse_value("data.header", "true or false")?.unwrap_or(false),
            }),
            other => Err(Failure::config(format!("`data.format` must be idx or csv, got {other:?}"))),
        }
    }
}

/// Dataset locations with the config key each came from.
#[derive(Debug, Clone)]
pub enum DataSource {
    Idx {
        train_images: (&'static str, PathBuf),
        train_labels: (&'static str, PathBuf),
        test_images: (&'static str, PathBuf),
        test_labels: (&'static str, PathBuf),
    },
    Csv {
        train: (&'static str, PathBuf),
        test: (&'static str, PathBuf),
        label: LabelColumn,
        header: bool,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Config, Failure> {
        Config::parse(text, PathBuf::new(), PathBuf::from("test.cfg"))
    }

    #[test]
    fn comments_blank_lines_and_whitespace() {
        let cfg = parse("# header\n\n  model.hidden = 4, 5  # trailing\nmodel.classes=3\nmodel.inputs = 2\n").unwrap();
        let spec = cfg.model_spec(Regularization::None, None).unwrap();
        assert_eq!(spec.dims(), vec![(2, 4), (4, 5), (5, 3)]);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let err = parse("model.hiden = 4\n").unwrap_err();
        assert_eq!(err.code, 1);
        assert!(err.message.contains("model.hiden"));
        assert!(parse("train.epochs = 1\ntrain.epochs = 2\n").unwrap_err().message.contains("duplicate"));
        assert!(parse("experiment.learning_rate.bogus = 1\n").is_err());
        assert!(parse("experiment.learning_rate.dropout = 1\n").is_ok());
        assert!(parse("just text\n").unwrap_err().message.contains(":1:"));
    }

    #[test]
    fn bad_values_name_the_key() {
        let err = parse("train.epochs = many\n").unwrap().train_config().unwrap_err();
        assert!(err.message.contains("train.epochs"));
        let err = parse("model.hidden = 4\nmodel.classes = 2\n").unwrap().model_spec(Regularization::None, None).unwrap_err();
        assert!(err.message.contains("model.inputs"));
    }

    #[test]
    fn output_keep_overrides_hidden_layers() {
        let cfg = parse("model.inputs = 2\nmodel.hidden = 3\nmodel.classes = 2\nmodel.keep = 0.8\nmodel.output_keep = 0.6\n").unwrap();
        let spec = cfg.model_spec(Regularization::SteDropConnect, None).unwrap();
        match &spec.layers[0] {
            LayerSpec::Ste { keep, output_keep, .. } => assert_eq!((*keep, *output_keep), (0.8, Some(0.6))),
            other => panic!("unexpected {other:?}"),
        }
        let spec = cfg.model_spec(Regularization::None, None).unwrap();
        assert!(matches!(spec.layers[0], LayerSpec::Dense { output_keep: None, .. }));
    }

    #[test]
    fn experiment_learning_rates() {
        let cfg = parse(
            "model.inputs = 2\nmodel.hidden = 3\nmodel.classes = 2\ntrain.learning_rate = 0.05\n\
             experiment.configs = none, ste-dropout\nexperiment.learning_rate.ste-dropout = 0.2\n",
        )
        .unwrap();
        let configs = cfg.experiment_configs(None).unwrap();
        assert_eq!(configs.len(), 2);
        assert_eq!((configs[0].train.learning_rate, configs[1].train.learning_rate), (0.05, 0.2));
    }
}
