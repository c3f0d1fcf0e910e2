use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use polyocc::data::io::{
    load_points, read_complex, read_primitives, read_queries, write_complex, write_queries,
    QueryFile, ARTIFACT_VERSION,
};
use polyocc::data::{
    self, generate_dataset, read_dataset, write_dataset, BuildingSample, Dataset, DatasetConfig,
};
use polyocc::eval::{self, EvalOptions, DEFAULT_SAMPLES, DEFAULT_TIMEOUT};
use polyocc::geometry::BoundingBox;
use polyocc::model::{EncoderKind, GraphSample, ModelConfig};
use polyocc::partition::build_cell_complex;
use polyocc::reconstruct::{extract_surface, interior_volume};
use polyocc::sampling::{mix_seed, sample_complex, SamplingStrategy};
use polyocc::train::{self, Prediction, TrainConfig, TrainOptions, TrainedModel, CONFIG_FILE};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::CliConfig;
use crate::error::CliError;
use crate::{Encoder, GlobalArgs, Preset, Source, Split, Strategy};

/// Seed for standalone query sampling when neither `--seed` nor a config sets one.
const DEFAULT_SEED: u64 = 7;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::internal(dir.display(), e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::internal(path.display(), e))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::input(path.display(), e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::internal(path.display(), e))
}

fn print_json(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string(value).expect("summary serializes")
    );
}

fn timeout(g: &GlobalArgs, cfg: &CliConfig) -> Result<Duration, CliError> {
    let secs = g
        .timeout_secs
        .or(cfg.eval.as_ref().and_then(|e| e.timeout_secs));
    match secs {
        None => Ok(DEFAULT_TIMEOUT),
        Some(s) if s >= 0.0 && s.is_finite() => Ok(Duration::from_secs_f64(s)),
        Some(s) => Err(CliError::BadInput(format!(
            "timeout {s} must be a non-negative number of seconds"
        ))),
    }
}

pub fn gen_data(
    g: &GlobalArgs,
    out: &Path,
    count: Option<usize>,
    k: Option<usize>,
    strategy: Option<Strategy>,
    max_points: Option<usize>,
) -> Result<(), CliError> {
    let mut cfg = CliConfig::load(g.config.as_deref())?
        .dataset
        .unwrap_or_default();
    cfg.seed = g.seed.unwrap_or(cfg.seed);
    cfg.count = count.unwrap_or(cfg.count);
    cfg.k = k.unwrap_or(cfg.k);
    cfg.strategy = strategy.map(Into::into).unwrap_or(cfg.strategy);
    if max_points.is_some() {
        cfg.max_points = max_points;
    }
    if cfg.count == 0 || cfg.k == 0 {
        return Err(CliError::BadInput("count and k must be at least 1".into()));
    }
    let t0 = Instant::now();
    let dataset = generate_dataset(&cfg)?;
    let manifest = write_dataset(out, &dataset)?;
    print_json(&serde_json::json!({
        "out": out,
        "buildings": manifest.count,
        "cells": manifest.total_cells,
        "exterior_fraction": manifest.exterior_fraction,
        "train": manifest.splits.train.len(),
        "val": manifest.splits.val.len(),
        "test": manifest.splits.test.len(),
        "seconds": t0.elapsed().as_secs_f64(),
    }));
    Ok(())
}

pub fn partition(
    g: &GlobalArgs,
    points: &Path,
    primitives: &Path,
    out: &Path,
    exhaustive: bool,
) -> Result<(), CliError> {
    let cfg = CliConfig::load(g.config.as_deref())?
        .dataset
        .unwrap_or_default();
    let mut pcfg = cfg.partition;
    pcfg.adaptive = !exhaustive;
    let cloud = load_points(points).map_err(|e| CliError::input(points.display(), e))?;
    let prims =
        read_primitives(open(primitives)?).map_err(|e| CliError::input(primitives.display(), e))?;
    let bbox = BoundingBox::from_points(cloud.iter().chain(prims.iter().flat_map(|p| &p.inliers)))
        .map_err(|e| CliError::BadInput(format!("no extent to partition: {e}")))?;
    let complex =
        build_cell_complex(&prims, &bbox, &pcfg).map_err(|e| CliError::BadInput(e.to_string()))?;
    let mut w = create(out)?;
    write_complex(&mut w, &complex)?;
    finish(w, out)?;
    print_json(&serde_json::json!({
        "out": out,
        "cells": complex.len(),
        "adjacent_pairs": complex.adjacency.len(),
        "planes": complex.planes.len(),
    }));
    Ok(())
}

pub fn sample_queries(
    g: &GlobalArgs,
    complex: &Path,
    out: &Path,
    k: usize,
    strategy: SamplingStrategy,
) -> Result<(), CliError> {
    let c = read_complex(open(complex)?).map_err(|e| CliError::input(complex.display(), e))?;
    let seed = g.seed.unwrap_or(DEFAULT_SEED);
    let queries =
        sample_complex(&c, k, strategy, seed).map_err(|e| CliError::BadInput(e.to_string()))?;
    let file = QueryFile {
        format_version: ARTIFACT_VERSION,
        k,
        strategy,
        seed,
        queries,
    };
    let mut w = create(out)?;
    write_queries(&mut w, &file)?;
    finish(w, out)?;
    print_json(&serde_json::json!({ "out": out, "cells": c.len(), "k": k, "strategy": strategy }));
    Ok(())
}

pub struct TrainOverrides {
    pub preset: Preset,
    pub encoder: Option<Encoder>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub strategy: Option<Strategy>,
    pub no_adjacency: bool,
}

impl TrainOverrides {
    fn base(&self, encoder: EncoderKind) -> TrainConfig {
        match self.preset {
            Preset::Desk => TrainConfig::desk(ModelConfig::desk(encoder)),
            Preset::Full => TrainConfig {
                model: match encoder {
                    EncoderKind::Conv => ModelConfig::conv(),
                    EncoderKind::Plain => ModelConfig::plain(),
                },
                ..TrainConfig::default()
            },
        }
    }

    /// The preset (or the config file's `[train]` table) with flags applied.
    pub fn resolve(&self, g: &GlobalArgs, file: Option<TrainConfig>) -> TrainConfig {
        let encoder = self.encoder.map(|e| match e {
            Encoder::Conv => EncoderKind::Conv,
            Encoder::Plain => EncoderKind::Plain,
        });
        let mut cfg = match file {
            Some(mut c) => {
                if let Some(e) = encoder.filter(|&e| e != c.model.encoder) {
                    // a different encoder needs that encoder's widths
                    let keep = c.clone();
                    c = self.base(e);
                    c.epochs = keep.epochs;
                    c.batch_size = keep.batch_size;
                    c.seed = keep.seed;
                }
                c
            }
            None => self.base(encoder.unwrap_or(EncoderKind::Conv)),
        };
        cfg.seed = g.seed.unwrap_or(cfg.seed);
        cfg.epochs = self.epochs.unwrap_or(cfg.epochs);
        cfg.batch_size = self.batch_size.unwrap_or(cfg.batch_size);
        if let Some(s) = self.strategy {
            cfg.query_strategy = Some(s.into());
        }
        if self.no_adjacency {
            cfg.model.use_adjacency = false;
        }
        cfg
    }
}

pub fn train(
    g: &GlobalArgs,
    data: &Path,
    out: &Path,
    over: &TrainOverrides,
    resume: bool,
) -> Result<(), CliError> {
    let saved = out.join(CONFIG_FILE);
    let cfg = if resume && saved.exists() {
        // the run's own config wins so the resumed trajectory matches
        let mut c = TrainConfig::load(&saved)?;
        c.epochs = over.epochs.unwrap_or(c.epochs);
        c
    } else {
        over.resolve(g, CliConfig::load(g.config.as_deref())?.train)
    };
    cfg.validate()?;
    let dataset = read_dataset(data)?;
    let splits = &dataset.manifest.splits;
    let (tr, va) = (dataset.split(&splits.train), dataset.split(&splits.val));
    log::info!(
        "training on {} buildings, validating on {}",
        tr.len(),
        va.len()
    );
    let t0 = Instant::now();
    let opts = TrainOptions {
        out_dir: Some(out.to_path_buf()),
        resume,
    };
    let outcome = train::train(&cfg, &tr, &va, &opts)?;
    let best = outcome
        .history
        .iter()
        .find(|l| l.epoch == outcome.best_epoch);
    print_json(&serde_json::json!({
        "out": out,
        "epochs": outcome.history.len(),
        "best_epoch": outcome.best_epoch,
        "best_val_accuracy": best.and_then(|l| l.val_accuracy),
        "final_train_loss": outcome.history.last().map(|l| l.train_loss),
        "seconds": t0.elapsed().as_secs_f64(),
    }));
    Ok(())
}

fn select<'a>(
    dataset: &'a Dataset,
    split: Split,
    ids: &[u64],
) -> Result<Vec<&'a BuildingSample>, CliError> {
    if !ids.is_empty() {
        return ids
            .iter()
            .map(|&id| {
                dataset
                    .get(id)
                    .ok_or_else(|| CliError::BadInput(format!("no building with id {id}")))
            })
            .collect();
    }
    let s = &dataset.manifest.splits;
    Ok(match split {
        Split::Train => dataset.split(&s.train),
        Split::Val => dataset.split(&s.val),
        Split::Test => dataset.split(&s.test),
        Split::All => dataset.samples.iter().collect(),
    })
}

/// One building of a predict output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictedBuilding {
    pub id: Option<u64>,
    pub probabilities: Vec<f64>,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictFile {
    pub buildings: Vec<PredictedBuilding>,
}

pub fn predict(
    g: &GlobalArgs,
    model: &Path,
    source: &Source,
    queries: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let m = TrainedModel::load(model)?;
    let limit = timeout(g, &CliConfig::load(g.config.as_deref())?)?;
    let t0 = Instant::now();
    let (ids, preds): (Vec<Option<u64>>, Vec<Prediction>) =
        match (&source.data, &source.points, &source.complex) {
            (Some(dir), _, _) => {
                let dataset = read_dataset(dir)?;
                let chosen = select(&dataset, source.split, &source.ids)?;
                (
                    chosen.iter().map(|s| Some(s.id)).collect(),
                    m.predict(&chosen)?,
                )
            }
            (None, Some(points), Some(complex)) => {
                let input = raw_input(g, &m, points, complex, queries)?;
                (vec![None], m.predict_inputs(&[input])?)
            }
            _ => {
                return Err(CliError::BadInput(
                    "give --data, or --points with --complex".into(),
                ))
            }
        };
    if t0.elapsed() >= limit {
        return Err(CliError::Timeout(format!(
            "prediction took {:.1}s",
            t0.elapsed().as_secs_f64()
        )));
    }
    let file = PredictFile {
        buildings: ids
            .into_iter()
            .zip(preds)
            .map(|(id, p)| PredictedBuilding {
                id,
                probabilities: p.probabilities,
                labels: p.labels,
            })
            .collect(),
    };
    let mut w = create(out)?;
    serde_json::to_writer(&mut w, &file).map_err(|e| CliError::internal(out.display(), e))?;
    finish(w, out)?;
    let interior: usize = file
        .buildings
        .iter()
        .flat_map(|b| &b.labels)
        .map(|&l| l as usize)
        .sum();
    let cells: usize = file.buildings.iter().map(|b| b.labels.len()).sum();
    print_json(
        &serde_json::json!({ "out": out, "buildings": file.buildings.len(), "cells": cells, "interior": interior }),
    );
    Ok(())
}

/// Network input for a raw point cloud and complex, subsampled the way
/// the model was trained for inference.
fn raw_input(
    g: &GlobalArgs,
    m: &TrainedModel,
    points: &Path,
    complex: &Path,
    queries: Option<&Path>,
) -> Result<GraphSample, CliError> {
    let cfg = &m.config;
    let mut cloud = load_points(points).map_err(|e| CliError::input(points.display(), e))?;
    let c = read_complex(open(complex)?).map_err(|e| CliError::input(complex.display(), e))?;
    let seed = g.seed.unwrap_or(DEFAULT_SEED);
    if cloud.len() < cfg.model.knn {
        return Err(CliError::BadInput(format!(
            "{} points, the model needs at least {}",
            cloud.len(),
            cfg.model.knn
        )));
    }
    if cloud.len() > cfg.points.count {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 4));
        let mut idx = sample_indices(&mut rng, cloud.len(), cfg.points.count).into_vec();
        idx.sort_unstable();
        cloud = idx.into_iter().map(|i| cloud[i]).collect();
    }
    let sets = match queries {
        Some(q) => {
            let f = read_queries(open(q)?).map_err(|e| CliError::input(q.display(), e))?;
            if f.queries.len() != c.len() {
                return Err(CliError::BadInput(format!(
                    "{} query sets for {} cells",
                    f.queries.len(),
                    c.len()
                )));
            }
            f.queries
        }
        None => {
            let strategy = cfg.query_strategy.unwrap_or(SamplingStrategy::Skeleton);
            sample_complex(&c, cfg.model.k, strategy, seed)
                .map_err(|e| CliError::BadInput(e.to_string()))?
        }
    };
    Ok(GraphSample {
        points: cloud.iter().map(|&p| p.into()).collect(),
        queries: sets
            .iter()
            .map(|q| q.points.iter().map(|&p| p.into()).collect())
            .collect(),
        edges: c.adjacency.clone(),
        labels: Vec::new(),
    })
}

/// Labels from a bare 0/1 array or from a predict output.
fn read_labels(path: &Path, id: Option<u64>) -> Result<Vec<u8>, CliError> {
    let value: serde_json::Value =
        serde_json::from_reader(open(path)?).map_err(|e| CliError::input(path.display(), e))?;
    if value.is_array() {
        return serde_json::from_value(value).map_err(|e| CliError::input(path.display(), e));
    }
    let file: PredictFile =
        serde_json::from_value(value).map_err(|e| CliError::input(path.display(), e))?;
    let pick = match id {
        Some(id) => file.buildings.into_iter().find(|b| b.id == Some(id)),
        None if file.buildings.len() == 1 => file.buildings.into_iter().next(),
        None => {
            return Err(CliError::BadInput(format!(
                "{} holds several buildings, pick one with --id",
                path.display()
            )))
        }
    };
    let labels = pick
        .ok_or_else(|| CliError::BadInput(format!("{} has no building {id:?}", path.display())))?
        .labels;
    if labels.iter().any(|&l| l > 1) {
        return Err(CliError::BadInput("labels must be 0 or 1".into()));
    }
    Ok(labels)
}

#[allow(clippy::too_many_arguments)]
pub fn reconstruct(
    g: &GlobalArgs,
    complex: Option<&Path>,
    data: Option<&Path>,
    id: Option<u64>,
    labels: Option<&Path>,
    oracle: bool,
    out: &Path,
    triangulate: bool,
) -> Result<(), CliError> {
    let limit = timeout(g, &CliConfig::load(g.config.as_deref())?)?;
    let (c, l) = match (complex, data) {
        (Some(cp), None) => {
            let path =
                labels.ok_or_else(|| CliError::BadInput("--complex needs --labels".into()))?;
            (
                read_complex(open(cp)?).map_err(|e| CliError::input(cp.display(), e))?,
                read_labels(path, id)?,
            )
        }
        (None, Some(dir)) => {
            let id = id.ok_or_else(|| CliError::BadInput("--data needs --id".into()))?;
            let mut dataset = read_dataset(dir)?;
            let pos = dataset
                .samples
                .iter()
                .position(|s| s.id == id)
                .ok_or_else(|| CliError::BadInput(format!("no building with id {id}")))?;
            let s = dataset.samples.swap_remove(pos);
            let l = match (oracle, labels) {
                (true, _) => s.labels.clone(),
                (false, Some(p)) => read_labels(p, Some(id))?,
                (false, None) => {
                    return Err(CliError::BadInput(
                        "--data needs --oracle or --labels".into(),
                    ))
                }
            };
            (s.complex, l)
        }
        _ => return Err(CliError::BadInput("give --complex or --data".into())),
    };
    let t0 = Instant::now();
    let mesh = extract_surface(&c, &l)?;
    if t0.elapsed() >= limit {
        return Err(CliError::Timeout(format!(
            "extraction took {:.1}s",
            t0.elapsed().as_secs_f64()
        )));
    }
    let mut w = create(out)?;
    mesh.write_obj(&mut w, triangulate)
        .map_err(|e| CliError::internal(out.display(), e))?;
    finish(w, out)?;
    let report = mesh.watertight_check();
    print_json(&serde_json::json!({
        "out": out,
        "vertices": mesh.vertices.len(),
        "polygons": mesh.faces.len(),
        "faces": mesh.face_count(),
        "watertight": report.watertight,
        "volume": mesh.volume(),
        "interior_volume": interior_volume(&c, &l),
    }));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    g: &GlobalArgs,
    data: &Path,
    model: Option<&Path>,
    oracle: bool,
    split: Split,
    samples: Option<usize>,
    report: &Path,
    csv: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = CliConfig::load(g.config.as_deref())?;
    let opts = EvalOptions {
        samples: samples
            .or(cfg.eval.as_ref().and_then(|e| e.samples))
            .unwrap_or(DEFAULT_SAMPLES),
        seed: g.seed.unwrap_or(0),
        timeout: timeout(g, &cfg)?,
    };
    if opts.samples == 0 {
        return Err(CliError::BadInput("--samples must be at least 1".into()));
    }
    let dataset = read_dataset(data)?;
    let chosen = select(&dataset, split, &[])?;
    if chosen.is_empty() {
        return Err(CliError::BadInput("the split is empty".into()));
    }
    let r = match (oracle, model) {
        (true, _) => eval::evaluate_oracle(&chosen, &opts)?,
        (false, Some(p)) => eval::evaluate_run(&chosen, &TrainedModel::load(p)?, &opts)?,
        (false, None) => return Err(CliError::BadInput("give --model or --oracle".into())),
    };
    let mut w = create(report)?;
    r.write_json(&mut w)?;
    finish(w, report)?;
    if let Some(path) = csv {
        let mut w = create(path)?;
        r.write_csv(&mut w)?;
        finish(w, path)?;
    }
    print_json(&serde_json::json!({
        "report": report,
        "buildings": r.buildings.len(),
        "success_rate": r.success_rate,
        "cell_accuracy": r.cell_accuracy,
        "mean_h_rel": r.mean_h_rel,
        "mean_h_abs_m": r.mean_h_abs_m,
        "mean_faces": r.mean_faces,
    }));
    Ok(())
}

/// Dataset config used by `gen-data`, exposed for `inspect`.
pub fn describe_dataset(dir: &Path) -> Result<serde_json::Value, CliError> {
    let m = data::read_manifest(dir)?;
    let cfg: &DatasetConfig = &m.config;
    Ok(serde_json::json!({
        "kind": "dataset",
        "format_version": m.format_version,
        "buildings": m.count,
        "seed": cfg.seed,
        "k": cfg.k,
        "strategy": cfg.strategy,
        "cells": m.total_cells,
        "exterior_fraction": m.exterior_fraction,
        "splits": { "train": m.splits.train.len(), "val": m.splits.val.len(), "test": m.splits.test.len() },
        "records_crc32": format!("{:08x}", m.records_crc32),
    }))
}
