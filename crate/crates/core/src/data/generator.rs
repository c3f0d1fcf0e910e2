//! Random LoD2-style buildings: unions of extruded rectangles with flat,
//! shed or gabled roofs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::geometry::{BoundingBox, ConvexPolyhedron, HalfSpace, PlanarPrimitive, Point, Vector};
use crate::mesh::Mesh;
use crate::partition::{build_cell_complex, PartitionConfig};
use crate::reconstruct::{extract_surface, interior_volume};
use crate::sampling::mix_seed;

/// Footprint and height quantum in metres.
pub const GRID: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Roof {
    Flat,
    /// Single slope rising by `rise` across the footprint.
    Shed {
        rise: f64,
        along_x: bool,
    },
    /// Two slopes meeting at a ridge `rise` above the eaves, centred on the footprint.
    Gable {
        rise: f64,
        ridge_along_x: bool,
    },
}

/// One convex building part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub eave: f64,
    pub roof: Roof,
}

impl PartSpec {
    pub fn solid(&self) -> Result<ConvexPolyhedron, DataError> {
        let [x0, y0] = self.min;
        let [x1, y1] = self.max;
        let mut ineq: Vec<(Vector, f64)> = vec![
            (-Vector::x(), -x0),
            (Vector::x(), x1),
            (-Vector::y(), -y0),
            (Vector::y(), y1),
            (-Vector::z(), 0.0),
        ];
        // z ≤ eave + s·(u − u0)  ⇔  −s·u + z ≤ eave − s·u0
        let axis = |along_x: bool| {
            if along_x {
                (Vector::x(), x0, x1)
            } else {
                (Vector::y(), y0, y1)
            }
        };
        match self.roof {
            Roof::Flat => ineq.push((Vector::z(), self.eave)),
            Roof::Shed { rise, along_x } => {
                let (u, a, b) = axis(along_x);
                let s = rise / (b - a);
                ineq.push((Vector::z() - u * s, self.eave - s * a));
            }
            Roof::Gable {
                rise,
                ridge_along_x,
            } => {
                // slopes run across the ridge
                let (u, a, b) = axis(!ridge_along_x);
                let s = rise / ((b - a) / 2.0);
                ineq.push((Vector::z() - u * s, self.eave - s * a));
                ineq.push((Vector::z() + u * s, self.eave + s * b));
            }
        }
        let hs: Vec<HalfSpace> = ineq
            .into_iter()
            .enumerate()
            .map(|(i, (n, d))| HalfSpace::from_inequality(n, d, i))
            .collect::<Result<_, _>>()
            .map_err(|e| DataError::Generation(e.to_string()))?;
        ConvexPolyhedron::from_halfspaces(&hs).map_err(|e| DataError::Generation(e.to_string()))
    }

    pub fn ridge_height(&self) -> f64 {
        match self.roof {
            Roof::Flat => self.eave,
            Roof::Shed { rise, .. } | Roof::Gable { rise, .. } => self.eave + rise,
        }
    }
}

/// A building in metres: its parts, closed surface and exact face planes.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedBuilding {
    pub parts: Vec<PartSpec>,
    pub solids: Vec<ConvexPolyhedron>,
    pub mesh: Mesh,
}

impl GeneratedBuilding {
    pub fn contains(&self, p: &Point) -> bool {
        self.solids.iter().any(|s| s.contains_point(p))
    }
}

/// One primitive per merged planar face: the face plane with the face's
/// vertices as inliers.
pub fn mesh_primitives(mesh: &Mesh) -> Vec<PlanarPrimitive> {
    mesh.coplanar_groups()
        .into_iter()
        .map(|g| {
            let mut ids: Vec<usize> = g
                .faces
                .iter()
                .flat_map(|&f| mesh.faces[f].iter().copied())
                .collect();
            ids.sort_unstable();
            ids.dedup();
            PlanarPrimitive::new(g.plane, ids.into_iter().map(|i| mesh.vertices[i]).collect())
        })
        .collect()
}

/// Surface of the union of `parts`, built by partitioning space with every
/// part facet and keeping cells inside some part.
pub fn building_from_parts(parts: &[PartSpec]) -> Result<GeneratedBuilding, DataError> {
    let solids: Vec<ConvexPolyhedron> = parts
        .iter()
        .map(PartSpec::solid)
        .collect::<Result<_, _>>()?;
    let mut prims = Vec::new();
    for s in &solids {
        for f in 0..s.facets().len() {
            let poly = s.facet_polygon(f);
            prims.push(PlanarPrimitive::new(
                s.facet_halfspace(f).plane,
                poly.points,
            ));
        }
    }
    let bbox = BoundingBox::from_points(solids.iter().flat_map(|s| s.vertices()))
        .map_err(|e| DataError::Generation(e.to_string()))?;
    let complex = build_cell_complex(&prims, &bbox, &PartitionConfig::default())
        .map_err(|e| DataError::Generation(e.to_string()))?;
    let labels: Vec<u8> = complex
        .cells
        .iter()
        .map(|c| solids.iter().any(|s| s.contains_point(&c.centroid())) as u8)
        .collect();
    let mesh =
        extract_surface(&complex, &labels).map_err(|e| DataError::Generation(e.to_string()))?;
    let report = mesh.watertight_check();
    if !report.watertight {
        return Err(DataError::Generation(format!(
            "union surface is not watertight: {report:?}"
        )));
    }
    let vol = interior_volume(&complex, &labels);
    if (mesh.volume() - vol).abs() > 1e-6 * vol.max(1.0) {
        return Err(DataError::Generation(
            "surface volume disagrees with cell volume".into(),
        ));
    }
    Ok(GeneratedBuilding {
        parts: parts.to_vec(),
        solids,
        mesh,
    })
}

fn grid(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let steps = ((hi - lo) / GRID).round() as i64;
    lo + GRID * rng.random_range(0..=steps.max(0)) as f64
}

fn random_roof(rng: &mut ChaCha8Rng) -> Roof {
    match rng.random_range(0..3) {
        0 => Roof::Flat,
        1 => Roof::Shed {
            rise: grid(rng, 1.0, 3.0),
            along_x: rng.random(),
        },
        _ => Roof::Gable {
            rise: grid(rng, 1.5, 4.0),
            ridge_along_x: rng.random(),
        },
    }
}

/// 1–3 parts; later parts overlap the first footprint by at least one metre
/// in both directions so the union stays manifold.
pub fn random_parts(seed: u64) -> Vec<PartSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, d) = (grid(&mut rng, 6.0, 20.0), grid(&mut rng, 6.0, 16.0));
    let main = PartSpec {
        min: [0.0, 0.0],
        max: [w, d],
        eave: grid(&mut rng, 3.0, 10.0),
        roof: random_roof(&mut rng),
    };
    let mut parts = vec![main];
    let extra = rng.random_range(0..3usize);
    for _ in 0..extra {
        let (pw, pd) = (grid(&mut rng, 4.0, 12.0), grid(&mut rng, 4.0, 12.0));
        let x0 = grid(&mut rng, 1.0 - pw, w - 1.0);
        let y0 = grid(&mut rng, 1.0 - pd, d - 1.0);
        parts.push(PartSpec {
            min: [x0, y0],
            max: [x0 + pw, y0 + pd],
            eave: grid(&mut rng, 3.0, 12.0),
            roof: random_roof(&mut rng),
        });
    }
    parts
}

/// A random building; if a draw fails validation the next sub-seed is tried.
pub fn generate_building(seed: u64) -> Result<GeneratedBuilding, DataError> {
    let mut last = None;
    for attempt in 0..16u64 {
        match building_from_parts(&random_parts(mix_seed(seed, attempt))) {
            Ok(b) => return Ok(b),
            Err(e) => {
                log::debug!("building seed {seed} attempt {attempt}: {e}");
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_box_has_six_primitives() {
        let part = PartSpec {
            min: [0.0, 0.0],
            max: [8.0, 6.0],
            eave: 4.0,
            roof: Roof::Flat,
        };
        let b = building_from_parts(&[part]).unwrap();
        assert_eq!(b.mesh.face_count(), 6);
        assert_eq!(mesh_primitives(&b.mesh).len(), 6);
        assert!((b.mesh.volume() - 192.0).abs() < 1e-9);
        let bb = b.mesh.bbox().unwrap();
        assert_eq!(
            (bb.min, bb.max),
            (Point::new(0.0, 0.0, 0.0), Point::new(8.0, 6.0, 4.0))
        );
    }

    #[test]
    fn gable_has_seven_faces_and_ridge() {
        let part = PartSpec {
            min: [0.0, 0.0],
            max: [10.0, 6.0],
            eave: 3.0,
            roof: Roof::Gable {
                rise: 2.0,
                ridge_along_x: true,
            },
        };
        let b = building_from_parts(&[part]).unwrap();
        assert_eq!(b.mesh.face_count(), 7);
        let top = b.mesh.vertices.iter().map(|v| v.z).fold(f64::MIN, f64::max);
        assert!((top - 5.0).abs() < 1e-12);
        // ridge at y = 3 along the whole length
        let ridge: Vec<_> = b
            .mesh
            .vertices
            .iter()
            .filter(|v| (v.z - 5.0).abs() < 1e-9)
            .collect();
        assert!(ridge.iter().all(|v| (v.y - 3.0).abs() < 1e-9));
        // prism volume: box plus triangular roof
        assert!((b.mesh.volume() - (10.0 * 6.0 * 3.0 + 0.5 * 6.0 * 2.0 * 10.0)).abs() < 1e-9);
        let vertical = mesh_primitives(&b.mesh)
            .iter()
            .filter(|p| p.vertical)
            .count();
        assert_eq!(vertical, 4);
    }

    #[test]
    fn shed_roof_slopes() {
        let part = PartSpec {
            min: [0.0, 0.0],
            max: [4.0, 4.0],
            eave: 3.0,
            roof: Roof::Shed {
                rise: 2.0,
                along_x: true,
            },
        };
        let b = building_from_parts(&[part]).unwrap();
        assert_eq!(b.mesh.face_count(), 6);
        assert!((b.mesh.volume() - 4.0 * 4.0 * 4.0).abs() < 1e-9);
    }

    #[test]
    fn l_shape_union_is_closed() {
        let a = PartSpec {
            min: [0.0, 0.0],
            max: [10.0, 4.0],
            eave: 3.0,
            roof: Roof::Flat,
        };
        let b = PartSpec {
            min: [0.0, 0.0],
            max: [4.0, 10.0],
            eave: 3.0,
            roof: Roof::Flat,
        };
        let g = building_from_parts(&[a, b]).unwrap();
        // two coplanar roofs merge: floor, roof and six walls
        assert_eq!(g.mesh.face_count(), 8);
        assert!((g.mesh.volume() - 3.0 * (40.0 + 24.0)).abs() < 1e-9);
    }

    #[test]
    fn random_buildings_are_valid_and_deterministic() {
        for seed in 0..20 {
            let b = generate_building(seed).unwrap();
            assert!(b.mesh.watertight_check().watertight);
            assert_eq!(b, generate_building(seed).unwrap());
            assert!(mesh_primitives(&b.mesh).len() >= 6);
        }
    }
}
