//! Reconstruction metrics: Hausdorff distance, cell accuracy, RMSE and
//! per-run reports.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::BuildingSample;
use crate::geometry::Point;
use crate::mesh::{point_triangle_distance, Mesh};
use crate::reconstruct::{extract_surface, ReconstructError};
use crate::train::{TrainError, TrainedModel};

/// Surface samples per mesh for the Hausdorff estimate.
pub const DEFAULT_SAMPLES: usize = 10_000;
/// Per-building time limit of a run.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("mesh has no surface")]
    EmptyMesh,
    #[error("{predicted} predicted labels for {oracle} reference labels")]
    LengthMismatch { predicted: usize, oracle: usize },
    #[error("checkpoint does not match the model: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Train(TrainError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("report: {0}")]
    Format(String),
}

impl From<TrainError> for EvalError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::CheckpointMismatch(m) => EvalError::CheckpointMismatch(m),
            other => EvalError::Train(other),
        }
    }
}

/// `n` area-weighted random points on the triangles of `mesh`, followed by
/// every mesh vertex so corners are always represented.
pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<Vec<Point>, EvalError> {
    let tris = mesh.triangles();
    let areas: Vec<f64> = tris
        .iter()
        .map(|t| (t[1] - t[0]).cross(&(t[2] - t[0])).norm())
        .collect();
    let pick = WeightedIndex::new(&areas).map_err(|_| EvalError::EmptyMesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n + mesh.vertices.len());
    for _ in 0..n {
        let t = &tris[pick.sample(&mut rng)];
        let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
        if u + v > 1.0 {
            (u, v) = (1.0 - u, 1.0 - v);
        }
        out.push(t[0] + (t[1] - t[0]) * u + (t[2] - t[0]) * v);
    }
    out.extend(mesh.vertices.iter().copied());
    Ok(out)
}

/// Exact distance from `p` to the nearest triangle.
pub fn point_mesh_distance(p: &Point, tris: &[[Point; 3]]) -> f64 {
    tris.iter()
        .map(|t| point_triangle_distance(p, t))
        .fold(f64::INFINITY, f64::min)
}

/// `max_p min_t d(p, t)`. A point stops scanning triangles as soon as it
/// cannot raise the running maximum, which leaves the result unchanged.
fn directed(points: &[Point], tris: &[[Point; 3]]) -> f64 {
    let mut worst = 0.0f64;
    let mut hint = 0;
    for p in points {
        let mut best = point_triangle_distance(p, &tris[hint]);
        if best <= worst {
            continue;
        }
        for (i, t) in tris.iter().enumerate() {
            let d = point_triangle_distance(p, t);
            if d < best {
                best = d;
                hint = i;
                if best <= worst {
                    break;
                }
            }
        }
        worst = worst.max(best);
    }
    worst
}

/// Symmetric Hausdorff distance estimated from `samples` surface points per
/// mesh (plus vertices) against the exact other surface. Both directions
/// draw with the same `seed`, so swapping the arguments gives the same value.
pub fn hausdorff(a: &Mesh, b: &Mesh, samples: usize, seed: u64) -> Result<f64, EvalError> {
    let (ta, tb) = (a.triangles(), b.triangles());
    if ta.is_empty() || tb.is_empty() {
        return Err(EvalError::EmptyMesh);
    }
    if a == b {
        // sampled points would sit on the surface up to rounding only
        return Ok(0.0);
    }
    let (pa, pb) = (
        sample_surface(a, samples, seed)?,
        sample_surface(b, samples, seed)?,
    );
    Ok(directed(&pa, &tb).max(directed(&pb, &ta)))
}

/// Percentage of equal labels.
pub fn classification_accuracy(predicted: &[u8], oracle: &[u8]) -> Result<f64, EvalError> {
    if predicted.len() != oracle.len() {
        return Err(EvalError::LengthMismatch {
            predicted: predicted.len(),
            oracle: oracle.len(),
        });
    }
    if oracle.is_empty() {
        return Ok(100.0);
    }
    let hits = predicted.iter().zip(oracle).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / oracle.len() as f64)
}

/// Root-mean-square point-to-surface distance.
pub fn rmse(points: &[Point], mesh: &Mesh) -> Result<f64, EvalError> {
    let tris = mesh.triangles();
    if tris.is_empty() || points.is_empty() {
        return Err(EvalError::EmptyMesh);
    }
    let sum: f64 = points
        .iter()
        .map(|p| point_mesh_distance(p, &tris).powi(2))
        .sum();
    Ok((sum / points.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Failure {
    /// No interior cell was predicted.
    EmptyReconstruction,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingMetrics {
    pub id: u64,
    pub cells: usize,
    /// Cell accuracy in percent; absent when labeling timed out.
    pub accuracy: Option<f64>,
    /// Hausdorff distance in normalized model units.
    pub h_abs: f64,
    /// The same distance in metres.
    pub h_abs_m: f64,
    /// Percent of the largest side of the reference bounding box.
    pub h_rel: f64,
    /// Merged planar faces of the reconstruction (0 when unsolvable).
    pub n_faces: usize,
    pub solvable: bool,
    pub failure: Option<Failure>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub buildings: Vec<BuildingMetrics>,
    /// Success rate S in percent.
    pub success_rate: f64,
    /// Over all labeled cells of the run.
    pub cell_accuracy: f64,
    pub mean_accuracy: f64,
    pub mean_h_abs: f64,
    pub mean_h_abs_m: f64,
    pub mean_h_rel: f64,
    /// Mean N_F over solvable buildings.
    pub mean_faces: f64,
    pub seconds: f64,
}

impl MetricsReport {
    pub fn from_rows(buildings: Vec<BuildingMetrics>) -> Self {
        let n = buildings.len().max(1) as f64;
        let mean = |f: &dyn Fn(&BuildingMetrics) -> f64| {
            buildings.iter().map(f).fold(0.0, |a, x| a + x) / n
        };
        let labeled: Vec<&BuildingMetrics> =
            buildings.iter().filter(|b| b.accuracy.is_some()).collect();
        let cells: usize = labeled.iter().map(|b| b.cells).sum();
        let hit: f64 = labeled
            .iter()
            .map(|b| b.accuracy.unwrap_or(0.0) * b.cells as f64)
            .sum();
        let solved: Vec<&BuildingMetrics> = buildings.iter().filter(|b| b.solvable).collect();
        Self {
            success_rate: 100.0 * solved.len() as f64 / n,
            cell_accuracy: if cells == 0 { 0.0 } else { hit / cells as f64 },
            mean_accuracy: labeled
                .iter()
                .filter_map(|b| b.accuracy)
                .fold(0.0, |a, x| a + x)
                / labeled.len().max(1) as f64,
            mean_h_abs: mean(&|b| b.h_abs),
            mean_h_abs_m: mean(&|b| b.h_abs_m),
            mean_h_rel: mean(&|b| b.h_rel),
            mean_faces: solved
                .iter()
                .map(|b| b.n_faces as f64)
                .fold(0.0, |a, x| a + x)
                / solved.len().max(1) as f64,
            seconds: buildings.iter().map(|b| b.seconds).sum(),
            buildings,
        }
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<(), EvalError> {
        serde_json::to_writer_pretty(w, self).map_err(|e| EvalError::Format(e.to_string()))
    }

    /// One row per building; the aggregates go to the JSON report.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "id", "cells", "accuracy", "h_abs", "h_abs_m", "h_rel", "n_faces", "solvable",
            "failure", "seconds",
        ])
        .map_err(|e| EvalError::Format(e.to_string()))?;
        for b in &self.buildings {
            let failure = match b.failure {
                Some(Failure::EmptyReconstruction) => "empty_reconstruction",
                Some(Failure::Timeout) => "timeout",
                None => "",
            };
            out.write_record([
                b.id.to_string(),
                b.cells.to_string(),
                b.accuracy.map_or(String::new(), |a| a.to_string()),
                b.h_abs.to_string(),
                b.h_abs_m.to_string(),
                b.h_rel.to_string(),
                b.n_faces.to_string(),
                b.solvable.to_string(),
                failure.to_string(),
                b.seconds.to_string(),
            ])
            .map_err(|e| EvalError::Format(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub samples: usize,
    pub seed: u64,
    /// Labeling plus extraction beyond this limit counts as unsolvable.
    pub timeout: Duration,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
            seed: 0,
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

/// Scores one building whose cells are labeled by `labeler`.
pub fn evaluate_building(
    sample: &BuildingSample,
    labeler: &(dyn Fn(&BuildingSample) -> Result<Vec<u8>, EvalError> + Sync),
    opts: &EvalOptions,
) -> Result<BuildingMetrics, EvalError> {
    let t0 = Instant::now();
    let labels = labeler(sample)?;
    let accuracy = classification_accuracy(&labels, &sample.labels)?;
    let surface = extract_surface(&sample.complex, &labels);
    let seconds = t0.elapsed().as_secs_f64();
    let side = sample
        .mesh
        .bbox()
        .ok_or(EvalError::EmptyMesh)?
        .largest_side();
    let failure = match &surface {
        _ if t0.elapsed() >= opts.timeout => Some(Failure::Timeout),
        Err(ReconstructError::EmptyReconstruction) => Some(Failure::EmptyReconstruction),
        Err(e) => return Err(EvalError::Format(e.to_string())),
        Ok(_) => None,
    };
    let (h_abs, n_faces) = match (&failure, surface) {
        (None, Ok(mesh)) => (
            hausdorff(&mesh, &sample.mesh, opts.samples, opts.seed)?,
            mesh.face_count(),
        ),
        _ => (side, 0),
    };
    Ok(BuildingMetrics {
        id: sample.id,
        cells: sample.labels.len(),
        accuracy: (failure != Some(Failure::Timeout)).then_some(accuracy),
        h_abs,
        h_abs_m: h_abs / sample.normalization.scale,
        h_rel: if failure.is_some() {
            100.0
        } else {
            100.0 * h_abs / side
        },
        n_faces,
        solvable: failure.is_none(),
        failure,
        seconds,
    })
}

/// Scores every sample, in parallel when the `parallel` feature is on.
pub fn evaluate(
    samples: &[&BuildingSample],
    labeler: &(dyn Fn(&BuildingSample) -> Result<Vec<u8>, EvalError> + Sync),
    opts: &EvalOptions,
) -> Result<MetricsReport, EvalError> {
    #[cfg(feature = "parallel")]
    let rows: Result<Vec<_>, _> = {
        use rayon::prelude::*;
        samples
            .par_iter()
            .map(|s| evaluate_building(s, labeler, opts))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Result<Vec<_>, _> = samples
        .iter()
        .map(|s| evaluate_building(s, labeler, opts))
        .collect();
    Ok(MetricsReport::from_rows(rows?))
}

/// Runs `model` on every sample and scores the reconstructions.
pub fn evaluate_run(
    samples: &[&BuildingSample],
    model: &TrainedModel,
    opts: &EvalOptions,
) -> Result<MetricsReport, EvalError> {
    model.check()?;
    let labeler = |s: &BuildingSample| -> Result<Vec<u8>, EvalError> {
        let mut p = model.predict(&[s])?;
        Ok(p.pop().map(|p| p.labels).unwrap_or_default())
    };
    evaluate(samples, &labeler, opts)
}

/// Scores the stored ground-truth labels, bypassing the network.
pub fn evaluate_oracle(
    samples: &[&BuildingSample],
    opts: &EvalOptions,
) -> Result<MetricsReport, EvalError> {
    evaluate(samples, &|s: &BuildingSample| Ok(s.labels.clone()), opts)
}
