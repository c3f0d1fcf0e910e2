//! Training loop, run directories, checkpoints and inference.
//!
//! A run directory holds `config.toml`, `log.jsonl`, `epoch_NNNN.pgnn` per
//! epoch and `best.pgnn` (highest validation accuracy).

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{resample_queries, BuildingSample, DataError};
use crate::model::{
    collate, forward, init_params, labels_from_probabilities, loss, GraphSample, ModelConfig,
    ModelError,
};
use crate::nn::{
    read_checkpoint, write_checkpoint, AdamConfig, CheckpointError, GradientSet, Graph,
    NamedTensor, ParameterStore, TensorPayload,
};
use crate::sampling::{mix_seed, SamplingStrategy};

pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "log.jsonl";
pub const BEST_FILE: &str = "best.pgnn";
const EPOCH_TENSOR: &str = "train.epoch";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("no training samples")]
    DatasetEmpty,
    #[error("non-finite value in epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("checkpoint does not match the model: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// How the point cloud is thinned before it reaches the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointMode {
    /// A fresh random subset every epoch; a fixed one at inference.
    Dynamic,
    /// The same random subset every epoch.
    Fixed,
    /// One point per occupied voxel, then a fixed random cap.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointSampling {
    pub mode: PointMode,
    pub count: usize,
    /// Voxel edge in normalized units, for [`PointMode::Grid`].
    pub voxel: f64,
}

impl Default for PointSampling {
    fn default() -> Self {
        Self {
            mode: PointMode::Dynamic,
            count: 4096,
            voxel: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Buildings per autodiff graph; gradients are summed over sub-batches.
    pub sub_batch: usize,
    /// Re-draw queries with this strategy instead of the stored ones.
    pub query_strategy: Option<SamplingStrategy>,
    pub points: PointSampling,
    pub adam: AdamConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            epochs: 150,
            batch_size: 64,
            sub_batch: 16,
            query_strategy: None,
            points: PointSampling::default(),
            adam: AdamConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Small model and point budget for single-machine experiments.
    pub fn desk(model: ModelConfig) -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            points: PointSampling {
                count: 256,
                ..Default::default()
            },
            model,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::ConfigInvalid(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.sub_batch == 0 {
            return bad("epochs, batch_size and sub_batch must be at least 1");
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) || !(self.adam.weight_decay >= 0.0) {
            return bad("lr must be positive and weight_decay non-negative");
        }
        if self.points.count < self.model.knn {
            return bad("points.count must be at least model.knn");
        }
        if self.points.mode == PointMode::Grid && !(self.points.voxel > 0.0) {
            return bad("points.voxel must be positive");
        }
        self.model
            .validate()
            .map_err(|e| TrainError::ConfigInvalid(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(s).map_err(|e| TrainError::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}

fn voxel_thin(points: &[[f64; 3]], voxel: f64) -> Vec<[f64; 3]> {
    // keep the point nearest each voxel centre, in first-seen voxel order
    let mut best: HashMap<[i64; 3], (usize, f64)> = HashMap::new();
    let mut order = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let key = p.map(|c| (c / voxel).floor() as i64);
        let d: f64 = (0..3)
            .map(|a| (p[a] - (key[a] as f64 + 0.5) * voxel).powi(2))
            .sum();
        match best.get_mut(&key) {
            Some(slot) => {
                if d < slot.1 {
                    *slot = (i, d);
                }
            }
            None => {
                best.insert(key, (i, d));
                order.push(key);
            }
        }
    }
    order.iter().map(|k| points[best[k].0]).collect()
}

/// Network input for `sample`. `epoch` is `Some` while training, which
/// draws a new subset per epoch in [`PointMode::Dynamic`].
pub fn input_sample(
    sample: &BuildingSample,
    cfg: &TrainConfig,
    epoch: Option<usize>,
) -> GraphSample {
    let fixed_seed = mix_seed(sample.seed, 4);
    let count = Some(cfg.points.count);
    match (cfg.points.mode, epoch) {
        (PointMode::Dynamic, Some(e)) => {
            sample.graph_sample(count, mix_seed(mix_seed(cfg.seed, e as u64), sample.id))
        }
        (PointMode::Dynamic | PointMode::Fixed, _) => sample.graph_sample(count, fixed_seed),
        (PointMode::Grid, _) => {
            let mut g = sample.graph_sample(None, fixed_seed);
            let thin = voxel_thin(&g.points, cfg.points.voxel);
            g.points = if thin.len() > cfg.points.count {
                let mut rng = ChaCha8Rng::seed_from_u64(fixed_seed);
                let mut idx =
                    rand::seq::index::sample(&mut rng, thin.len(), cfg.points.count).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| thin[i]).collect()
            } else {
                thin
            };
            g
        }
    }
}

/// Samples with queries re-drawn when the config asks for another strategy.
pub fn prepare_samples(
    samples: &[&BuildingSample],
    cfg: &TrainConfig,
) -> Result<Vec<BuildingSample>, TrainError> {
    samples
        .iter()
        .map(|s| match cfg.query_strategy {
            Some(st)
                if s.queries
                    .first()
                    .is_none_or(|q| q.strategy != st || q.points.len() != cfg.model.k) =>
            {
                Ok(resample_queries(s, cfg.model.k, st)?)
            }
            _ if s
                .queries
                .first()
                .is_some_and(|q| q.points.len() != cfg.model.k) =>
            {
                let st = s.queries[0].strategy;
                Ok(resample_queries(s, cfg.model.k, st)?)
            }
            _ => Ok((*s).clone()),
        })
        .collect()
}

/// A trained network with the configuration it was built from.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub store: ParameterStore<f32>,
}

impl TrainedModel {
    /// Verifies that every layer of the config is present with the right shape.
    pub fn check(&self) -> Result<(), TrainError> {
        for (name, i, o) in self.config.model.layer_shapes() {
            for (suffix, shape) in [("w", vec![i, o]), ("b", vec![1, o])] {
                let key = format!("{name}.{suffix}");
                match self.store.get(&key) {
                    Some(t) if t.shape() == shape.as_slice() => {}
                    Some(t) => {
                        return Err(TrainError::CheckpointMismatch(format!(
                            "{key} has shape {:?}, config wants {shape:?}",
                            t.shape()
                        )))
                    }
                    None => {
                        return Err(TrainError::CheckpointMismatch(format!(
                            "missing tensor {key}"
                        )))
                    }
                }
            }
        }
        let expected = 2 * self.config.model.layer_shapes().len();
        if self.store.len() != expected {
            return Err(TrainError::CheckpointMismatch(format!(
                "{} tensors, config wants {expected}",
                self.store.len()
            )));
        }
        Ok(())
    }

    /// Loads `config.toml` and a checkpoint. `path` is a run directory
    /// (uses `best.pgnn`) or a `.pgnn` file next to its `config.toml`.
    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let (dir, ckpt) = if path.is_dir() {
            (path.to_path_buf(), path.join(BEST_FILE))
        } else {
            (
                path.parent().map(Path::to_path_buf).unwrap_or_default(),
                path.to_path_buf(),
            )
        };
        let config = TrainConfig::load(&dir.join(CONFIG_FILE))?;
        Self::from_checkpoint(config, &ckpt).map(|(m, _)| m)
    }

    fn from_checkpoint(config: TrainConfig, file: &Path) -> Result<(Self, usize), TrainError> {
        let tensors = read_checkpoint(BufReader::new(File::open(file)?))?;
        let epoch = tensors
            .iter()
            .find(|t| t.name == EPOCH_TENSOR)
            .and_then(|t| match &t.payload {
                TensorPayload::F64(v) => v.first().map(|&e| e as usize),
                TensorPayload::F32(v) => v.first().map(|&e| e as usize),
            })
            .unwrap_or(0);
        let tensors: Vec<NamedTensor> = tensors
            .into_iter()
            .filter(|t| t.name != EPOCH_TENSOR)
            .collect();
        let store = ParameterStore::from_tensors(&tensors)
            .map_err(|e| TrainError::CheckpointMismatch(e.to_string()))?;
        let model = Self { config, store };
        model.check()?;
        Ok((model, epoch))
    }

    pub fn save(&self, file: &Path, epoch: usize) -> Result<(), TrainError> {
        let mut tensors = self.store.to_tensors();
        tensors.push(NamedTensor {
            name: EPOCH_TENSOR.into(),
            shape: vec![1],
            payload: TensorPayload::F64(vec![epoch as f64]),
        });
        let mut w = BufWriter::new(File::create(file)?);
        write_checkpoint(&mut w, &tensors)?;
        w.flush()?;
        Ok(())
    }

    /// Per-cell interior probabilities and labels for each building.
    /// Queries are re-drawn the way training drew them (see [`prepare_samples`]).
    pub fn predict(&self, samples: &[&BuildingSample]) -> Result<Vec<Prediction>, TrainError> {
        let prepared = prepare_samples(samples, &self.config)?;
        let inputs: Vec<GraphSample> = prepared
            .iter()
            .map(|s| input_sample(s, &self.config, None))
            .collect();
        self.predict_inputs(&inputs)
    }

    pub fn predict_inputs(&self, inputs: &[GraphSample]) -> Result<Vec<Prediction>, TrainError> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(self.config.sub_batch.max(1)) {
            let mut batch = collate(chunk)?;
            if batch.k != self.config.model.k {
                return Err(TrainError::CheckpointMismatch(format!(
                    "inputs carry k = {}, model expects {}",
                    batch.k, self.config.model.k
                )));
            }
            batch.labels.clear();
            let p = crate::model::predict(&self.store, &self.config.model, &batch)?;
            for b in 0..batch.buildings() {
                let probabilities = p[batch.cell_offsets[b]..batch.cell_offsets[b + 1]].to_vec();
                let labels = labels_from_probabilities(&probabilities);
                out.push(Prediction {
                    probabilities,
                    labels,
                });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub labels: Vec<u8>,
}

/// One line of `log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub seconds: f64,
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochLog>,
    /// Parameters after the last epoch.
    pub last: TrainedModel,
    /// Parameters with the best validation accuracy (the last ones without validation data).
    pub best: TrainedModel,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub out_dir: Option<PathBuf>,
    /// Continue from the newest epoch checkpoint in `out_dir`.
    pub resume: bool,
}

pub fn epoch_file(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.pgnn"))
}

fn latest_epoch(dir: &Path) -> Option<usize> {
    fs::read_dir(dir)
        .ok()?
        .filter_map(|e| {
            e.ok()?
                .file_name()
                .to_str()?
                .strip_prefix("epoch_")?
                .strip_suffix(".pgnn")?
                .parse()
                .ok()
        })
        .max()
}

fn read_log(dir: &Path) -> Result<Vec<EpochLog>, TrainError> {
    let Ok(f) = File::open(dir.join(LOG_FILE)) else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        if let Ok(e) = serde_json::from_str::<EpochLog>(&line?) {
            out.push(e);
        }
    }
    Ok(out)
}

struct StepResult {
    grads: GradientSet<f32>,
    loss: f64,
    correct: usize,
    cells: usize,
}

fn sub_batch_step(
    store: &ParameterStore<f32>,
    cfg: &ModelConfig,
    inputs: &[GraphSample],
    total_cells: usize,
) -> Result<StepResult, String> {
    let batch = collate(inputs).map_err(|e| e.to_string())?;
    let mut g = Graph::<f32>::new();
    let out = forward(&mut g, store, cfg, &batch).map_err(|e| e.to_string())?;
    let l = loss(&mut g, cfg, &out, &batch.labels).map_err(|e| e.to_string())?;
    let value = g.value(l).to_f64()[0];
    if !value.is_finite() {
        return Err("loss".into());
    }
    g.backward(l).map_err(|e| e.to_string())?;
    let share = batch.cells() as f64 / total_cells as f64;
    let mut grads = GradientSet::default();
    grads.accumulate(&g.param_grads(), share);
    let predicted = labels_from_probabilities(&out.interior);
    let correct = predicted
        .iter()
        .zip(&batch.labels)
        .filter(|(a, b)| a == b)
        .count();
    Ok(StepResult {
        grads,
        loss: value * share,
        correct,
        cells: batch.cells(),
    })
}

fn batch_step(
    store: &ParameterStore<f32>,
    cfg: &TrainConfig,
    inputs: &[GraphSample],
) -> Result<StepResult, String> {
    let total: usize = inputs.iter().map(GraphSample::cells).sum();
    let chunks: Vec<&[GraphSample]> = inputs.chunks(cfg.sub_batch).collect();
    #[cfg(feature = "parallel")]
    let parts: Vec<Result<StepResult, String>> = {
        use rayon::prelude::*;
        chunks
            .par_iter()
            .map(|c| sub_batch_step(store, &cfg.model, c, total))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<StepResult, String>> = chunks
        .iter()
        .map(|c| sub_batch_step(store, &cfg.model, c, total))
        .collect();
    // summed in chunk order so the result does not depend on the thread count
    let mut acc = StepResult {
        grads: GradientSet::default(),
        loss: 0.0,
        correct: 0,
        cells: 0,
    };
    for p in parts {
        let p = p?;
        acc.grads.accumulate(&p.grads, 1.0);
        acc.loss += p.loss;
        acc.correct += p.correct;
        acc.cells += p.cells;
    }
    Ok(acc)
}

/// Cell accuracy in percent of `model` over `samples`.
pub fn accuracy(model: &TrainedModel, samples: &[BuildingSample]) -> Result<f64, TrainError> {
    let refs: Vec<&BuildingSample> = samples.iter().collect();
    let preds = model.predict(&refs)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for (p, s) in preds.iter().zip(samples) {
        hit += p
            .labels
            .iter()
            .zip(&s.labels)
            .filter(|(a, b)| a == b)
            .count();
        total += s.labels.len();
    }
    Ok(100.0 * hit as f64 / total.max(1) as f64)
}

/// Trains on `train`, selecting the best epoch on `val`.
pub fn train(
    cfg: &TrainConfig,
    train: &[&BuildingSample],
    val: &[&BuildingSample],
    opts: &TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::DatasetEmpty);
    }
    let train = prepare_samples(train, cfg)?;
    let val = prepare_samples(val, cfg)?;

    let mut model = TrainedModel {
        config: cfg.clone(),
        store: init_params(&cfg.model, cfg.seed)?,
    };
    let mut history = Vec::new();
    let mut start = 1;
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir)?;
        if opts.resume {
            if let Some(e) = latest_epoch(dir) {
                let (m, epoch) = TrainedModel::from_checkpoint(cfg.clone(), &epoch_file(dir, e))?;
                model = m;
                start = epoch + 1;
                history = read_log(dir)?
                    .into_iter()
                    .filter(|l| l.epoch <= epoch)
                    .collect();
                log::info!("resuming after epoch {epoch}");
            }
        }
        fs::write(dir.join(CONFIG_FILE), cfg.to_toml())?;
        if start == 1 {
            File::create(dir.join(LOG_FILE))?;
        }
    }
    let mut best_epoch = history
        .iter()
        .filter(|l| l.best)
        .map(|l| l.epoch)
        .last()
        .unwrap_or(0);
    let mut best_val = history
        .iter()
        .filter_map(|l| l.val_accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut best = match (&opts.out_dir, best_epoch) {
        (Some(dir), e) if e > 0 && dir.join(BEST_FILE).exists() => {
            TrainedModel::from_checkpoint(cfg.clone(), &dir.join(BEST_FILE))?.0
        }
        _ => model.clone(),
    };

    for epoch in start..=cfg.epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
            cfg.seed,
            0xE0C0 + epoch as u64,
        )));
        let (mut loss_sum, mut correct, mut cells) = (0.0, 0usize, 0usize);
        for (bi, ids) in order.chunks(cfg.batch_size).enumerate() {
            let inputs: Vec<GraphSample> = ids
                .iter()
                .map(|&i| input_sample(&train[i], cfg, Some(epoch)))
                .collect();
            let step =
                batch_step(&model.store, cfg, &inputs).map_err(|detail| TrainError::NonFinite {
                    epoch,
                    batch: bi,
                    detail,
                })?;
            model
                .store
                .adam_step(&step.grads, &cfg.adam)
                .map_err(|e| TrainError::NonFinite {
                    epoch,
                    batch: bi,
                    detail: e.to_string(),
                })?;
            loss_sum += step.loss * step.cells as f64;
            correct += step.correct;
            cells += step.cells;
        }
        let val_accuracy = if val.is_empty() {
            None
        } else {
            Some(accuracy(&model, &val)?)
        };
        let improved = val_accuracy.is_none_or(|a| a > best_val);
        if improved {
            best_val = val_accuracy.unwrap_or(best_val);
            best_epoch = epoch;
            best = model.clone();
        }
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / cells.max(1) as f64,
            train_accuracy: 100.0 * correct as f64 / cells.max(1) as f64,
            val_accuracy,
            seconds: t0.elapsed().as_secs_f64(),
            best: improved,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train {:.2}% val {} ({:.1}s)",
            entry.train_loss,
            entry.train_accuracy,
            val_accuracy.map_or("-".into(), |a| format!("{a:.2}%")),
            entry.seconds
        );
        if let Some(dir) = &opts.out_dir {
            model.save(&epoch_file(dir, epoch), epoch)?;
            if improved {
                model.save(&dir.join(BEST_FILE), epoch)?;
            }
            let mut f = OpenOptions::new()
                .append(true)
                .create(true)
                .open(dir.join(LOG_FILE))?;
            writeln!(
                f,
                "{}",
                serde_json::to_string(&entry).expect("log entry serializes")
            )?;
        }
        history.push(entry);
    }
    Ok(TrainOutcome {
        history,
        last: model,
        best,
        best_epoch,
    })
}
