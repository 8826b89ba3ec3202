//! Experiment configuration.
//!
//! Config files are flat `key = value` text; `#` starts a comment. Values are
//! resolved in this order, later sources winning:
//!
//! 1. built-in defaults
//! 2. the config file
//! 3. environment variables `MTSBENCH_<KEY>`, where `<KEY>` is the key in
//!    upper case with `.` replaced by `_` (e.g. `MTSBENCH_TRAIN_LR`)
//! 4. command-line flags (`--seed`, `--output-dir`, `--has-header`)
//!
//! | key                    | type                          | default            |
//! |------------------------|-------------------------------|--------------------|
//! | `dataset.path`         | path                          | required           |
//! | `dataset.name`         | string                        | file stem          |
//! | `dataset.format`       | `csv` \| `binary-cache`       | by extension       |
//! | `dataset.has_header`   | bool                          | false              |
//! | `dataset.skip_columns` | integer                       | 0                  |
//! | `dataset.sentinel`     | string                        | `NaN`              |
//! | `dataset.frequency`    | seconds                       | 3600               |
//! | `dataset.start_time`   | `YYYY-MM-DDTHH:MM:SS`         | 1970-01-01T00:00:00 |
//! | `dataset.max_steps`    | integer, 0 = all              | 0                  |
//! | `split`                | `train,val,test` ratios       | by dataset name    |
//! | `history`              | integer                       | 336                |
//! | `horizon`              | integer                       | 336                |
//! | `model.kind`           | naive-last, seasonal-naive, historical-average, linear, dlinear, nlinear | linear |
//! | `model.channel_mode`   | independent, per-channel-weights | independent     |
//! | `model.kernel`         | odd integer                   | 25                 |
//! | `model.season`         | integer                       | 1                  |
//! | `model.ridge`          | real                          | 0                  |
//! | `train.method`         | closed-form \| sgd            | closed-form        |
//! | `train.lr`             | real                          | 0.001              |
//! | `train.epochs`         | integer                       | 100                |
//! | `train.batch_size`     | integer                       | 64                 |
//! | `train.clip_norm`      | real, 0 = off                 | 0                  |
//! | `train.patience`       | integer                       | 10                 |
//! | `train.curriculum`     | `off` or `start,step`         | off                |
//! | `train.lr_decay`       | real                          | 1                  |
//! | `seed`                 | integer                       | 0                  |
//! | `metrics`              | comma list                    | mae,rmse,mape,wape |
//! | `epsilon`              | real                          | 1e-8               |
//! | `output_dir`           | path                          | `runs`             |
//! | `run_name`             | string                        | derived            |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::dataset::{CsvOptions, DatasetFormat, LoadOptions, SplitRatios};
use crate::error::{Error, Result};
use crate::metrics::Metric;
use crate::models::{ChannelMode, Curriculum, ForecasterKind, ForecasterSpec, TrainerConfig};
use crate::preprocess::DEFAULT_EPSILON;

pub const ENV_PREFIX: &str = "MTSBENCH_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: PathBuf,
    pub name: Option<String>,
    pub format: Option<DatasetFormat>,
    pub has_header: bool,
    pub skip_columns: usize,
    pub sentinel: String,
    pub frequency: u64,
    pub start_time: NaiveDateTime,
    pub max_steps: Option<usize>,
}

impl Default for DatasetRef {
    fn default() -> Self {
        Self {
            path: PathBuf::new(),
            name: None,
            format: None,
            has_header: false,
            skip_columns: 0,
            sentinel: "NaN".into(),
            frequency: 3600,
            start_time: DateTime::UNIX_EPOCH.naive_utc(),
            max_steps: None,
        }
    }
}

impl DatasetRef {
    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            format: self.format,
            csv: CsvOptions {
                has_header: self.has_header,
                sentinel: self.sentinel.clone(),
                skip_columns: self.skip_columns,
            },
            frequency: self.frequency,
            start_time: self.start_time,
            name: self.name.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMethod {
    #[default]
    ClosedForm,
    Sgd,
}

impl FromStr for TrainMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "closed-form" => Ok(TrainMethod::ClosedForm),
            "sgd" => Ok(TrainMethod::Sgd),
            other => Err(Error::Config(format!("unknown training method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetRef,
    pub split: Option<SplitRatios>,
    pub model: ForecasterSpec,
    pub method: TrainMethod,
    pub trainer: TrainerConfig,
    pub seed: u64,
    pub metrics: Vec<Metric>,
    pub epsilon: f64,
    pub output_dir: PathBuf,
    pub run_name: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetRef::default(),
            split: None,
            model: ForecasterSpec::new(ForecasterKind::Linear, 336, 336),
            method: TrainMethod::ClosedForm,
            trainer: TrainerConfig::default(),
            seed: 0,
            metrics: Metric::STANDARD.to_vec(),
            epsilon: DEFAULT_EPSILON,
            output_dir: PathBuf::from("runs"),
            run_name: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

pub const KEYS: &[&str] = &[
    "dataset.path",
    "dataset.name",
    "dataset.format",
    "dataset.has_header",
    "dataset.skip_columns",
    "dataset.sentinel",
    "dataset.frequency",
    "dataset.start_time",
    "dataset.max_steps",
    "split",
    "history",
    "horizon",
    "model.kind",
    "model.channel_mode",
    "model.kernel",
    "model.season",
    "model.ridge",
    "train.method",
    "train.lr",
    "train.epochs",
    "train.batch_size",
    "train.clip_norm",
    "train.patience",
    "train.curriculum",
    "train.lr_decay",
    "seed",
    "metrics",
    "epsilon",
    "output_dir",
    "run_name",
];

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "dataset.path" => self.dataset.path = PathBuf::from(v),
            "dataset.name" => self.dataset.name = (!v.is_empty()).then(|| v.to_string()),
            "dataset.format" => {
                self.dataset.format = match v {
                    "" => None,
                    "csv" => Some(DatasetFormat::Csv),
                    "binary-cache" | "tsb" => Some(DatasetFormat::BinaryCache),
                    other => return Err(Error::Config(format!("unknown dataset format {other:?}"))),
                }
            }
            "dataset.has_header" => self.dataset.has_header = parse_bool(key, v)?,
            "dataset.skip_columns" => self.dataset.skip_columns = parse(key, v)?,
            "dataset.sentinel" => self.dataset.sentinel = v.to_string(),
            "dataset.frequency" => self.dataset.frequency = parse(key, v)?,
            "dataset.start_time" => {
                self.dataset.start_time = NaiveDateTime::parse_from_str(v, "%Y-%m-%dT%H:%M:%S")
                    .or_else(|_| NaiveDateTime::parse_from_str(v, "%Y-%m-%d %H:%M:%S"))
                    .map_err(|_| Error::Config(format!("invalid start time {v:?}")))?
            }
            "dataset.max_steps" => {
                let n: usize = parse(key, v)?;
                self.dataset.max_steps = (n > 0).then_some(n);
            }
            "split" => {
                let r: Vec<f64> = parse_list(key, v)?;
                if r.len() != 3 {
                    return Err(Error::Config(format!("split needs three ratios, got {v:?}")));
                }
                self.split = Some(SplitRatios::new(r[0], r[1], r[2]));
            }
            "history" => self.model.history = parse(key, v)?,
            "horizon" => self.model.horizon = parse(key, v)?,
            "model.kind" => self.model.kind = v.parse()?,
            "model.channel_mode" => self.model.channel_mode = v.parse::<ChannelMode>()?,
            "model.kernel" => self.model.kernel = parse(key, v)?,
            "model.season" => self.model.season = parse(key, v)?,
            "model.ridge" => self.model.ridge = parse(key, v)?,
            "train.method" => self.method = v.parse()?,
            "train.lr" => self.trainer.lr = parse(key, v)?,
            "train.epochs" => self.trainer.epochs = parse(key, v)?,
            "train.batch_size" => self.trainer.batch_size = parse(key, v)?,
            "train.clip_norm" => {
                let c: f64 = parse(key, v)?;
                self.trainer.clip_norm = (c > 0.0).then_some(c);
            }
            "train.patience" => self.trainer.patience = parse(key, v)?,
            "train.curriculum" => {
                self.trainer.curriculum = match v {
                    "off" | "none" | "" => None,
                    "on" => Some(Curriculum::default()),
                    _ => {
                        let parts: Vec<usize> = parse_list(key, v)?;
                        match parts.as_slice() {
                            [start, step] => Some(Curriculum {
                                start: *start,
                                step: *step,
                            }),
                            _ => return Err(Error::Config(format!("curriculum must be start,step, got {v:?}"))),
                        }
                    }
                }
            }
            "train.lr_decay" => self.trainer.lr_decay = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "metrics" => self.metrics = parse_list(key, v)?,
            "epsilon" => self.epsilon = parse(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "run_name" => self.run_name = (!v.is_empty()).then(|| v.to_string()),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Applies `MTSBENCH_*` overrides from the given environment.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, env: I) -> Result<()> {
        let by_env: BTreeMap<String, &str> = KEYS
            .iter()
            .map(|k| (format!("{ENV_PREFIX}{}", k.to_ascii_uppercase().replace('.', "_")), *k))
            .collect();
        let mut overrides: Vec<(&str, String)> = env
            .into_iter()
            .filter_map(|(name, value)| by_env.get(&name).map(|k| (*k, value)))
            .collect();
        overrides.sort();
        for (key, value) in overrides {
            self.set(key, &value)?;
        }
        Ok(())
    }

    /// Defaults, then the file, then the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        cfg.apply_env(std::env::vars())?;
        if cfg.dataset.path.is_relative() && !cfg.dataset.path.as_os_str().is_empty() {
            if let Some(dir) = path.parent() {
                let candidate = dir.join(&cfg.dataset.path);
                if candidate.exists() && !cfg.dataset.path.exists() {
                    cfg.dataset.path = candidate;
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.path.as_os_str().is_empty() {
            return Err(Error::Config("dataset.path is required".into()));
        }
        if self.dataset.frequency == 0 {
            return Err(Error::Config("dataset.frequency must be positive".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("at least one metric is required".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        self.model.validate()?;
        self.trainer.validate()
    }

    pub fn dataset_label(&self) -> String {
        self.dataset.name.clone().unwrap_or_else(|| {
            self.dataset
                .path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }

    pub fn run_label(&self) -> String {
        self.run_name.clone().unwrap_or_else(|| {
            format!(
                "{}_{}_{}_{}_seed{}",
                self.dataset_label(),
                self.model.kind,
                self.model.history,
                self.model.horizon,
                self.seed
            )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_text_and_env_precedence() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(
            "# comment\ndataset.path = data/x.csv\nhistory = 96 # inline\nmodel.kind = dlinear\n\
             train.lr = 0.01\nsplit = 0.6, 0.2, 0.2\ntrain.curriculum = 1,2\nmetrics = mae,wape\n",
        )
        .unwrap();
        assert_eq!(cfg.model.history, 96);
        assert_eq!(cfg.model.kind, ForecasterKind::Dlinear);
        assert_eq!(cfg.split, Some(SplitRatios::new(0.6, 0.2, 0.2)));
        assert_eq!(cfg.trainer.curriculum, Some(Curriculum { start: 1, step: 2 }));
        assert_eq!(cfg.metrics, vec![Metric::Mae, Metric::Wape]);

        cfg.apply_env(vec![
            ("MTSBENCH_TRAIN_LR".to_string(), "0.5".to_string()),
            ("MTSBENCH_HISTORY".to_string(), "192".to_string()),
            ("UNRELATED".to_string(), "x".to_string()),
        ])
        .unwrap();
        assert_eq!(cfg.trainer.lr, 0.5);
        assert_eq!(cfg.model.history, 192);
    }

    #[test]
    fn rejects_unknown_keys_and_values() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.apply_text("nope = 1").is_err());
        assert!(cfg.apply_text("history = abc").is_err());
        assert!(cfg.apply_text("no equals sign").is_err());
        assert!(cfg.apply_text("split = 0.5,0.5").is_err());
        assert!(cfg.apply_text("dataset.start_time = yesterday").is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_err());
        cfg.dataset.path = "x.csv".into();
        cfg.validate().unwrap();
        cfg.model.kernel = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn labels() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text("dataset.path = /data/ETTh1.csv\nhistory = 96\nhorizon = 336").unwrap();
        assert_eq!(cfg.run_label(), "ETTh1_linear_96_336_seed0");
    }

    #[test]
    fn json_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text("dataset.path = a.csv\ntrain.clip_norm = 5\ndataset.start_time = 2016-07-01 00:00:00")
            .unwrap();
        let s = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
    }
}
