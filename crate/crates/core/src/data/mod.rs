//! Synthetic buildings, scans, ground-truth labels and dataset files.

mod dataset;
mod generator;
pub mod io;
mod label;
mod scan;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{
    generate_dataset, read_dataset, read_manifest, split_ids, write_dataset, Dataset, Manifest,
    Splits, FORMAT_VERSION, MANIFEST_FILE, RECORDS_FILE,
};
pub use generator::{
    building_from_parts, generate_building, mesh_primitives, random_parts, GeneratedBuilding,
    PartSpec, Roof, GRID,
};
pub use label::{oracle_label, parity_vote, MAX_DISAGREEMENT};
pub use scan::{synthesize_scan, ScanConfig};

use crate::geometry::{PlanarPrimitive, Point, Vector};
use crate::mesh::Mesh;
use crate::model::GraphSample;
use crate::partition::{build_cell_complex, CellComplex, PartitionConfig, PartitionError};
use crate::sampling::{mix_seed, sample_complex, QuerySet, SamplingError, SamplingStrategy};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
    #[error("building generation failed: {0}")]
    Generation(String),
    #[error("scan produced no points")]
    EmptyScan,
    #[error("rays disagree on {disagreeing} of {cells} cells, mesh is not watertight")]
    NonWatertight { disagreeing: usize, cells: usize },
    #[error("dataset format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("record {index} is corrupt or truncated")]
    CorruptRecord { index: usize },
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

/// `p ↦ scale·p + translation` maps metres into the unit cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scale: f64,
    pub translation: [f64; 3],
}

impl Normalization {
    /// Centres the box at 0.5 with its largest side scaled to 1.
    pub fn fit(mesh: &Mesh) -> Result<Self, DataError> {
        let b = mesh
            .bbox()
            .ok_or_else(|| DataError::Generation("mesh has no extent".into()))?;
        let scale = 1.0 / b.largest_side();
        let t = Vector::repeat(0.5) - b.center().coords * scale;
        Ok(Self {
            scale,
            translation: t.into(),
        })
    }

    pub fn apply(&self, p: &Point) -> Point {
        Point::from(p.coords * self.scale + Vector::from(self.translation))
    }

    pub fn invert(&self, p: &Point) -> Point {
        Point::from((p.coords - Vector::from(self.translation)) / self.scale)
    }
}

/// Everything stored for one building, in normalized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingSample {
    pub id: u64,
    pub seed: u64,
    pub mesh: Mesh,
    pub points: Vec<Point>,
    pub primitives: Vec<PlanarPrimitive>,
    pub complex: CellComplex,
    pub queries: Vec<QuerySet>,
    pub labels: Vec<u8>,
    pub normalization: Normalization,
}

impl BuildingSample {
    /// Network input with every point, or a seeded random subset of `max_points`.
    pub fn graph_sample(&self, max_points: Option<usize>, seed: u64) -> GraphSample {
        let points: Vec<[f64; 3]> = match max_points {
            Some(m) if m < self.points.len() => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut idx = sample_indices(&mut rng, self.points.len(), m).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| self.points[i].into()).collect()
            }
            _ => self.points.iter().map(|&p| p.into()).collect(),
        };
        GraphSample {
            points,
            queries: self
                .queries
                .iter()
                .map(|q| q.points.iter().map(|&p| p.into()).collect())
                .collect(),
            edges: self.complex.adjacency.clone(),
            labels: self.labels.clone(),
        }
    }

    pub fn interior_fraction(&self) -> f64 {
        self.labels.iter().filter(|&&l| l == 1).count() as f64 / self.labels.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub count: usize,
    pub seed: u64,
    pub k: usize,
    pub strategy: SamplingStrategy,
    pub scan: ScanConfig,
    pub partition: PartitionConfig,
    /// Stored clouds are downsampled to this many points when set.
    pub max_points: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 640,
            seed: 7,
            k: 16,
            strategy: SamplingStrategy::Skeleton,
            scan: ScanConfig::default(),
            partition: PartitionConfig::default(),
            max_points: Some(4096),
        }
    }
}

/// Per-id seed; building `id` never depends on the dataset size.
pub fn building_seed(dataset_seed: u64, id: u64) -> u64 {
    mix_seed(dataset_seed, id)
}

/// Generates, scans, partitions, samples and labels building `id`.
pub fn generate_sample(id: u64, cfg: &DatasetConfig) -> Result<BuildingSample, DataError> {
    let seed = building_seed(cfg.seed, id);
    let building = generate_building(seed)?;
    let normalization = Normalization::fit(&building.mesh)?;
    let mesh = building
        .mesh
        .transformed(normalization.scale, normalization.translation.into());
    let mut points = synthesize_scan(&mesh, mix_seed(seed, 1), &cfg.scan)?;
    if let Some(m) = cfg.max_points.filter(|&m| m < points.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 2));
        let mut idx = sample_indices(&mut rng, points.len(), m).into_vec();
        idx.sort_unstable();
        points = idx.into_iter().map(|i| points[i]).collect();
    }
    let primitives = mesh_primitives(&mesh);
    let bbox = mesh
        .bbox()
        .ok_or_else(|| DataError::Generation("empty mesh".into()))?;
    let complex = build_cell_complex(&primitives, &bbox, &cfg.partition)?;
    let queries = sample_complex(&complex, cfg.k, cfg.strategy, mix_seed(seed, 3))?;
    let labels = oracle_label(&complex, &mesh)?;
    Ok(BuildingSample {
        id,
        seed,
        mesh,
        points,
        primitives,
        complex,
        queries,
        labels,
        normalization,
    })
}

/// The same building with queries drawn by another strategy or `k`.
pub fn resample_queries(
    sample: &BuildingSample,
    k: usize,
    strategy: SamplingStrategy,
) -> Result<BuildingSample, DataError> {
    let queries = sample_complex(&sample.complex, k, strategy, mix_seed(sample.seed, 3))?;
    Ok(BuildingSample {
        queries,
        ..sample.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_fits_unit_cube_and_inverts() {
        let mesh = crate::mesh::tests::box_mesh([10.0, 20.0, 0.0], [30.0, 25.0, 8.0]);
        let n = Normalization::fit(&mesh).unwrap();
        let m = mesh.transformed(n.scale, n.translation.into());
        let b = m.bbox().unwrap();
        assert!((b.largest_side() - 1.0).abs() < 1e-15);
        assert!((b.center() - Point::new(0.5, 0.5, 0.5)).norm() < 1e-15);
        let p = Point::new(12.0, 21.0, 3.0);
        assert!((n.invert(&n.apply(&p)) - p).norm() < 1e-12);
    }

    #[test]
    fn sample_is_consistent() {
        let cfg = DatasetConfig {
            count: 1,
            max_points: Some(500),
            ..Default::default()
        };
        let s = generate_sample(3, &cfg).unwrap();
        assert_eq!(s.labels.len(), s.complex.len());
        assert_eq!(s.queries.len(), s.complex.len());
        assert!(s.queries.iter().all(|q| q.points.len() == 16));
        assert_eq!(s.points.len(), 500);
        assert!(s.labels.contains(&1) && s.labels.contains(&0));
        let g = s.graph_sample(Some(100), 0);
        assert_eq!(g.points.len(), 100);
        assert_eq!(g.cells(), s.complex.len());
        assert_eq!(s, generate_sample(3, &cfg).unwrap());
    }
}
