//! Experiment pipeline: load, split, scale, window, fit, evaluate, persist.

mod config;

pub use config::{DatasetRef, ExperimentConfig, TrainMethod, ENV_PREFIX, KEYS};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{chronological_split, load_dataset, ChronologicalSplit, SplitRatios, TimeSeriesDataset};
use crate::error::{Error, Result, StageContext};
use crate::metrics::{MetricAccumulator, MetricReport};
use crate::models::{checkpoint, fit_linear_closed_form, sgd_fit, LinearModel, Model, WindowData};
use crate::preprocess::{fit_scaler, make_windows, ZScoreScaler};

pub const CONFIG_FILE: &str = "config.json";
pub const RESULT_FILE: &str = "result.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CURVE_FILE: &str = "curve.csv";

const EVAL_BLOCK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub dataset: String,
    pub model: String,
    pub history: usize,
    pub horizon: usize,
    pub n_steps: usize,
    pub n_channels: usize,
    pub split: ChronologicalSplit,
    pub curve: Vec<CurvePoint>,
    pub best_epoch: Option<usize>,
    /// Masked MAE on validation windows, in normalized units.
    pub val_mae: f64,
    pub test_metrics: MetricReport,
    pub test_windows: usize,
    pub parameter_count: usize,
    pub batch_size: Option<usize>,
    pub seconds_per_epoch: Vec<f64>,
    pub mean_seconds_per_epoch: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub result: ExperimentResult,
    pub model: Model,
}

/// Everything the model sees, derived from the raw dataset and the config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub history: usize,
    pub dataset: TimeSeriesDataset,
    pub split: ChronologicalSplit,
    pub scaler: ZScoreScaler,
    pub normalized: Array2<f64>,
    pub train_anchors: Vec<usize>,
    pub val_anchors: Vec<usize>,
    pub test_anchors: Vec<usize>,
}

impl Prepared {
    pub fn window_data(&self) -> WindowData<'_> {
        WindowData {
            normalized: &self.normalized,
            mask: self.dataset.mask().flags(),
        }
    }
}

pub fn load_configured_dataset(cfg: &ExperimentConfig) -> Result<TimeSeriesDataset> {
    let ds = load_dataset(&cfg.dataset.path, &cfg.dataset.load_options()).stage("load")?;
    Ok(match cfg.dataset.max_steps {
        Some(n) if n < ds.n_steps() => ds.truncated(n),
        _ => ds,
    })
}

/// Splits, fits the scaler on the training segment and cuts windows.
/// Every window of a segment lies entirely inside that segment.
pub fn prepare(dataset: TimeSeriesDataset, cfg: &ExperimentConfig) -> Result<Prepared> {
    let ratios = cfg.split.unwrap_or_else(|| SplitRatios::default_for(dataset.name()));
    let split = chronological_split(dataset.n_steps(), ratios).stage("split")?;
    let scaler = fit_scaler(&dataset, &split, cfg.epsilon);
    let normalized = scaler.normalize_dataset(&dataset).stage("scale")?;
    let (p, f) = (cfg.model.history, cfg.model.horizon);
    let windows = |r: std::ops::Range<usize>| make_windows(r, p, f, 1).stage("window");
    Ok(Prepared {
        train_anchors: windows(split.train.clone())?,
        val_anchors: windows(split.val.clone())?,
        test_anchors: windows(split.test.clone())?,
        history: p,
        dataset,
        split,
        scaler,
        normalized,
    })
}

/// Streams de-normalized errors over `anchors` in fixed-size blocks that are
/// merged in order, so results do not depend on the thread count.
pub fn evaluate_anchors(model: &Model, prep: &Prepared, anchors: &[usize], scaler: &ZScoreScaler) -> Result<MetricAccumulator> {
    let horizon = model.horizon();
    let history = prep.history;
    let mask = prep.dataset.mask().flags();
    let partials: Vec<MetricAccumulator> = anchors
        .par_chunks(EVAL_BLOCK)
        .map(|block| -> Result<MetricAccumulator> {
            let mut acc = MetricAccumulator::default();
            let preds = match model {
                Model::Linear(m) => m.predict_anchors(&prep.normalized, block)?,
                _ => block
                    .iter()
                    .map(|&t| {
                        let lo = t - history;
                        model.predict(
                            prep.normalized.slice(s![lo..t, ..]),
                            Some(mask.slice(s![lo..t, ..])),
                        )
                    })
                    .collect::<Result<_>>()?,
            };
            for (&t, pred) in block.iter().zip(&preds) {
                acc.push_renormalized(
                    scaler,
                    prep.normalized.slice(s![t..t + horizon, ..]),
                    pred.view(),
                    mask.slice(s![t..t + horizon, ..]),
                )?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = MetricAccumulator::default();
    for p in &partials {
        total.merge(p);
    }
    Ok(total)
}

fn fit_model(prep: &Prepared, cfg: &ExperimentConfig) -> Result<(Model, Vec<CurvePoint>, Option<usize>, Option<usize>, Vec<f64>)> {
    let spec = &cfg.model;
    let n = prep.dataset.n_channels();
    if !spec.kind.is_trainable() {
        return Ok((Model::from_spec(spec, n)?, Vec::new(), None, None, Vec::new()));
    }
    match cfg.method {
        TrainMethod::ClosedForm => {
            let started = Instant::now();
            let m = fit_linear_closed_form(&prep.normalized, prep.split.train.clone(), spec)?;
            Ok((Model::Linear(m), Vec::new(), None, None, vec![started.elapsed().as_secs_f64()]))
        }
        TrainMethod::Sgd => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let init = LinearModel::init_uniform(spec, n, &mut rng)?;
            let mut trainer = cfg.trainer.clone();
            trainer.seed = cfg.seed;
            let out = sgd_fit(init, &prep.window_data(), &prep.train_anchors, &prep.val_anchors, &trainer)?;
            let curve = out
                .train_curve
                .iter()
                .zip(&out.val_curve)
                .enumerate()
                .map(|(epoch, (&tr, &va))| CurvePoint {
                    epoch,
                    train_loss: Some(tr),
                    val_loss: va,
                })
                .collect();
            Ok((Model::Linear(out.model), curve, out.best_epoch, Some(out.batch_size), out.epoch_seconds))
        }
    }
}

/// Runs the full pipeline on an already loaded dataset.
pub fn run_on_dataset(dataset: TimeSeriesDataset, cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate().stage("config")?;
    let prep = prepare(dataset, cfg)?;
    let (model, mut curve, best_epoch, batch_size, seconds) = fit_model(&prep, cfg).stage("fit")?;

    let identity = ZScoreScaler::identity(prep.dataset.n_channels());
    let val_mae = evaluate_anchors(&model, &prep, &prep.val_anchors, &identity)
        .and_then(|a| a.mae())
        .stage("validate")?;
    if curve.is_empty() {
        curve.push(CurvePoint {
            epoch: 0,
            train_loss: None,
            val_loss: val_mae,
        });
    }
    let test_metrics = evaluate_anchors(&model, &prep, &prep.test_anchors, &prep.scaler)
        .and_then(|a| a.report(&cfg.metrics))
        .stage("evaluate")?;
    let mean_seconds = (!seconds.is_empty()).then(|| seconds.iter().sum::<f64>() / seconds.len() as f64);
    let result = ExperimentResult {
        config: cfg.clone(),
        dataset: prep.dataset.name().to_string(),
        model: cfg.model.kind.to_string(),
        history: cfg.model.history,
        horizon: cfg.model.horizon,
        n_steps: prep.dataset.n_steps(),
        n_channels: prep.dataset.n_channels(),
        split: prep.split.clone(),
        curve,
        best_epoch,
        val_mae,
        test_metrics,
        test_windows: prep.test_anchors.len(),
        parameter_count: model.parameter_count(),
        batch_size,
        seconds_per_epoch: seconds,
        mean_seconds_per_epoch: mean_seconds,
    };
    Ok(ExperimentRun { result, model })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate().stage("config")?;
    run_on_dataset(load_configured_dataset(cfg)?, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub best: usize,
    pub runs: Vec<ExperimentRun>,
}

impl SweepOutcome {
    pub fn best_run(&self) -> &ExperimentRun {
        &self.runs[self.best]
    }
}

/// Runs one experiment per history length and selects the lowest validation
/// MAE; ties keep the earlier length.
pub fn sweep_history_length(dataset: &TimeSeriesDataset, cfg: &ExperimentConfig, lengths: &[usize]) -> Result<SweepOutcome> {
    if lengths.is_empty() {
        return Err(Error::Config("history sweep needs at least one length".into()));
    }
    let mut runs = Vec::with_capacity(lengths.len());
    let mut best = 0;
    for (i, &p) in lengths.iter().enumerate() {
        let mut c = cfg.clone();
        c.model.history = p;
        let run = run_on_dataset(dataset.clone(), &c)?;
        if run.result.val_mae < runs.get(best).map_or(f64::INFINITY, |r: &ExperimentRun| r.result.val_mae) {
            best = i;
        }
        runs.push(run);
    }
    Ok(SweepOutcome { best, runs })
}

fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for p in curve {
        let train = p.train_loss.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", p.epoch, train, p.val_loss));
    }
    out
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Report(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes `config.json`, `result.json`, `checkpoint.bin` and `curve.csv` into
/// `<output_dir>/<run_name>`. Files are staged in a sibling directory that is
/// renamed into place, so a crash never leaves a partial result directory.
pub fn write_run(run: &ExperimentRun, output_dir: &Path, run_name: &str) -> Result<PathBuf> {
    fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    let final_dir = output_dir.join(run_name);
    let nonce = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos());
    let staging = output_dir.join(format!(".{run_name}.tmp-{}-{nonce}", std::process::id()));
    fs::create_dir(&staging).map_err(|e| Error::io(&staging, e))?;
    let written = (|| {
        write_json(&staging.join(CONFIG_FILE), &run.result.config)?;
        write_json(&staging.join(RESULT_FILE), &run.result)?;
        checkpoint::save(&run.model, &staging.join(CHECKPOINT_FILE))?;
        let curve = staging.join(CURVE_FILE);
        fs::write(&curve, curve_csv(&run.result.curve)).map_err(|e| Error::io(&curve, e))
    })();
    if let Err(e) = written {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    if final_dir.exists() {
        fs::remove_dir_all(&final_dir).map_err(|e| Error::io(&final_dir, e))?;
    }
    fs::rename(&staging, &final_dir).map_err(|e| Error::io(&final_dir, e))?;
    Ok(final_dir)
}

pub fn read_result(path: &Path) -> Result<ExperimentResult> {
    let file = if path.is_dir() { path.join(RESULT_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Report(format!("{}: {e}", file.display())))
}

/// Re-evaluates a saved run from its config and checkpoint.
pub fn evaluate_run_dir(dir: &Path) -> Result<MetricReport> {
    let cfg_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", cfg_path.display())))?;
    let model = checkpoint::load(&dir.join(CHECKPOINT_FILE)).stage("checkpoint")?;
    let prep = prepare(load_configured_dataset(&cfg)?, &cfg)?;
    evaluate_anchors(&model, &prep, &prep.test_anchors, &prep.scaler)
        .and_then(|a| a.report(&cfg.metrics))
        .stage("evaluate")
}
