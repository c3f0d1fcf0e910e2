//! Airborne-style point clouds: a jittered grid of parallel rays from above
//! plus two oblique strips, first hits only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::geometry::{Point, Vector};
use crate::mesh::{ray_triangle, Mesh};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    /// Ray spacing in normalized units.
    pub spacing: f64,
    /// Gaussian noise σ per axis.
    pub noise: f64,
    /// Fraction of azimuths (around the building centre) dropped as occluded.
    pub occlusion: f64,
    /// Tilt of the two oblique strips from nadir, in degrees.
    pub oblique_deg: f64,
    pub nadir_only: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            spacing: 0.025,
            noise: 0.01,
            occlusion: 0.1,
            oblique_deg: 20.0,
            nadir_only: false,
        }
    }
}

/// First hit of a ray against a triangle soup.
fn first_hit(origin: &Point, dir: &Vector, tris: &[[Point; 3]]) -> Option<Point> {
    tris.iter()
        .filter_map(|t| ray_triangle(origin, dir, t))
        .min_by(f64::total_cmp)
        .map(|t| origin + dir * t)
}

/// Scans `mesh` with rays along each direction in turn.
pub fn synthesize_scan(mesh: &Mesh, seed: u64, cfg: &ScanConfig) -> Result<Vec<Point>, DataError> {
    let bbox = mesh.bbox().ok_or(DataError::EmptyScan)?;
    let tris = mesh.triangles();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs = vec![-Vector::z()];
    let azimuth: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    if !cfg.nadir_only {
        let tilt = cfg.oblique_deg.to_radians();
        for sign in [1.0, -1.0] {
            dirs.push(Vector::new(
                sign * tilt.sin() * azimuth.cos(),
                sign * tilt.sin() * azimuth.sin(),
                -tilt.cos(),
            ));
        }
    }
    let centre = bbox.center();
    let radius = 0.5 * bbox.size().norm();
    let mut points = Vec::new();
    for d in dirs {
        let d = d.normalize();
        let u = if d.x.abs() < 0.9 {
            Vector::x().cross(&d)
        } else {
            Vector::y().cross(&d)
        }
        .normalize();
        let v = d.cross(&u);
        let n = (2.0 * radius / cfg.spacing).ceil() as usize;
        for i in 0..n {
            for j in 0..n {
                let a = -radius + (i as f64 + rng.random_range(0.0..1.0)) * cfg.spacing;
                let b = -radius + (j as f64 + rng.random_range(0.0..1.0)) * cfg.spacing;
                let origin = centre + u * a + v * b - d * (2.0 * radius);
                if let Some(p) = first_hit(&origin, &d, &tris) {
                    points.push(p);
                }
            }
        }
    }
    if cfg.occlusion > 0.0 {
        let start: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let width = cfg.occlusion.min(1.0) * std::f64::consts::TAU;
        points.retain(|p| {
            let az = (p.y - centre.y).atan2(p.x - centre.x);
            (az - start).rem_euclid(std::f64::consts::TAU) >= width
        });
    }
    if cfg.noise > 0.0 {
        let normal =
            Normal::new(0.0, cfg.noise).map_err(|e| DataError::Generation(e.to_string()))?;
        for p in &mut points {
            for c in 0..3 {
                p[c] += normal.sample(&mut rng);
            }
        }
    }
    if points.is_empty() {
        return Err(DataError::EmptyScan);
    }
    Ok(points)
}
