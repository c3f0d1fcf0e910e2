//! Fixed-length query point sets per cell.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ConvexPolyhedron, Point, EPS};
use crate::partition::CellComplex;

/// Acceptance ratio below which volume sampling gives up.
pub const MIN_ACCEPTANCE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("query count k must be at least 1")]
    InvalidK,
    #[error("rejection sampling stalled (acceptance {acceptance:.2e}), cell is a sliver")]
    RejectionStall { acceptance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingStrategy {
    Skeleton,
    Boundary,
    Volume,
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingStrategy::Skeleton => "skeleton",
            SamplingStrategy::Boundary => "boundary",
            SamplingStrategy::Volume => "volume",
        })
    }
}

impl FromStr for SamplingStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "skeleton" => Ok(Self::Skeleton),
            "boundary" => Ok(Self::Boundary),
            "volume" => Ok(Self::Volume),
            other => Err(format!("unknown sampling strategy '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySet {
    pub cell: usize,
    pub strategy: SamplingStrategy,
    pub points: Vec<Point>,
}

/// Vertices first: `k` distinct vertices when `k ≤ |V|`, otherwise
/// `⌊k/|V|⌋` points on every vertex–centroid segment plus `k mod |V|` more
/// on the segment of the last vertex.
pub fn skeleton_sample<R: Rng + ?Sized>(
    poly: &ConvexPolyhedron,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Point>, SamplingError> {
    if k == 0 {
        return Err(SamplingError::InvalidK);
    }
    let verts = poly.vertices();
    let n = verts.len();
    if k <= n {
        return Ok(rand::seq::index::sample(rng, n, k)
            .into_iter()
            .map(|i| verts[i])
            .collect());
    }
    let centroid = poly.centroid();
    let per_segment = k / n;
    let extra = k % n;
    let mut out = Vec::with_capacity(k);
    for v in verts {
        for _ in 0..per_segment {
            out.push(segment_point(v, &centroid, rng));
        }
    }
    for _ in 0..extra {
        out.push(segment_point(&verts[n - 1], &centroid, rng));
    }
    Ok(out)
}

fn segment_point<R: Rng + ?Sized>(a: &Point, b: &Point, rng: &mut R) -> Point {
    let len = (b - a).norm();
    loop {
        let t: f64 = rng.random();
        if t * len >= EPS && (1.0 - t) * len >= EPS {
            return a + (b - a) * t;
        }
    }
}

/// Area-weighted points on the cell boundary.
pub fn boundary_sample<R: Rng + ?Sized>(
    poly: &ConvexPolyhedron,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Point>, SamplingError> {
    if k == 0 {
        return Err(SamplingError::InvalidK);
    }
    let verts = poly.vertices();
    let mut tris = Vec::new();
    let mut areas = Vec::new();
    for f in poly.facets() {
        let a = verts[f.ring[0]];
        for w in f.ring[1..].windows(2) {
            let (b, c) = (verts[w[0]], verts[w[1]]);
            tris.push((a, b, c));
            areas.push(0.5 * (b - a).cross(&(c - a)).norm());
        }
    }
    let pick = WeightedIndex::new(&areas).expect("a valid cell has positive surface area");
    Ok((0..k)
        .map(|_| {
            let (a, b, c) = tris[pick.sample(rng)];
            let s = rng.random::<f64>().sqrt();
            let r: f64 = rng.random();
            Point::from(a.coords * (1.0 - s) + b.coords * (s * (1.0 - r)) + c.coords * (s * r))
        })
        .collect())
}

/// Uniform points inside the cell by rejection from its bounding box.
pub fn volume_sample<R: Rng + ?Sized>(
    poly: &ConvexPolyhedron,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Point>, SamplingError> {
    if k == 0 {
        return Err(SamplingError::InvalidK);
    }
    let bb = poly.aabb();
    let max_attempts = (k as f64 / MIN_ACCEPTANCE).ceil() as usize;
    let mut out = Vec::with_capacity(k);
    let mut attempts = 0usize;
    while out.len() < k {
        if attempts >= max_attempts {
            return Err(SamplingError::RejectionStall {
                acceptance: out.len() as f64 / attempts as f64,
            });
        }
        attempts += 1;
        let p = Point::new(
            bb.min.x + (bb.max.x - bb.min.x) * rng.random::<f64>(),
            bb.min.y + (bb.max.y - bb.min.y) * rng.random::<f64>(),
            bb.min.z + (bb.max.z - bb.min.z) * rng.random::<f64>(),
        );
        if poly.contains_point(&p) {
            out.push(p);
        }
    }
    Ok(out)
}

pub fn sample_cell<R: Rng + ?Sized>(
    poly: &ConvexPolyhedron,
    cell: usize,
    k: usize,
    strategy: SamplingStrategy,
    rng: &mut R,
) -> Result<QuerySet, SamplingError> {
    let points = match strategy {
        SamplingStrategy::Skeleton => skeleton_sample(poly, k, rng)?,
        SamplingStrategy::Boundary => boundary_sample(poly, k, rng)?,
        SamplingStrategy::Volume => volume_sample(poly, k, rng)?,
    };
    Ok(QuerySet {
        cell,
        strategy,
        points,
    })
}

/// SplitMix64 finalizer, used to fan a seed out to independent streams.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-cell generator seeded from `(seed, cell)`.
pub fn cell_rng(seed: u64, cell: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, cell as u64))
}

/// Queries for every cell of a complex; cell `i` uses `cell_rng(seed, i)`.
pub fn sample_complex(
    complex: &CellComplex,
    k: usize,
    strategy: SamplingStrategy,
    seed: u64,
) -> Result<Vec<QuerySet>, SamplingError> {
    complex
        .cells
        .iter()
        .enumerate()
        .map(|(i, cell)| sample_cell(cell, i, k, strategy, &mut cell_rng(seed, i)))
        .collect()
}
