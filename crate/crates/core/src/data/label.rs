//! Occupancy labels by ray-crossing parity against a closed mesh.

use super::DataError;
use crate::geometry::{Point, Vector};
use crate::mesh::{ray_triangle, Mesh};
use crate::partition::CellComplex;

/// Fraction of cells whose rays may disagree before the mesh is rejected.
pub const MAX_DISAGREEMENT: f64 = 0.01;

/// Fixed directions, chosen away from axes and common roof slopes.
fn directions() -> [Vector; 3] {
    [
        Vector::new(0.5377, 0.8315, 0.1378).normalize(),
        Vector::new(-0.7161, 0.2793, 0.6397).normalize(),
        Vector::new(0.3119, -0.6502, -0.6927).normalize(),
    ]
}

fn crossings(origin: &Point, dir: &Vector, tris: &[[Point; 3]]) -> usize {
    tris.iter()
        .filter(|t| ray_triangle(origin, dir, t).is_some())
        .count()
}

/// True iff the majority of three rays from `p` cross the surface an odd
/// number of times; also reports whether the rays were unanimous.
pub fn parity_vote(p: &Point, tris: &[[Point; 3]]) -> (bool, bool) {
    let odd: usize = directions().iter().map(|d| crossings(p, d, tris) % 2).sum();
    (odd >= 2, odd == 0 || odd == 3)
}

/// Interior (1) iff the cell centroid is inside `mesh` by majority parity.
pub fn oracle_label(complex: &CellComplex, mesh: &Mesh) -> Result<Vec<u8>, DataError> {
    let tris = mesh.triangles();
    let bbox = mesh.bbox();
    let mut split = 0usize;
    let labels: Vec<u8> = complex
        .cells
        .iter()
        .map(|cell| {
            let c = cell.centroid();
            if bbox.as_ref().is_none_or(|b| !b.contains(&c, 0.0)) {
                return 0;
            }
            let (inside, unanimous) = parity_vote(&c, &tris);
            split += usize::from(!unanimous);
            inside as u8
        })
        .collect();
    if split as f64 > MAX_DISAGREEMENT * complex.len() as f64 {
        return Err(DataError::NonWatertight {
            disagreeing: split,
            cells: complex.len(),
        });
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundingBox, PlanarPrimitive, Plane};
    use crate::mesh::tests::box_mesh;
    use crate::partition::{build_cell_complex, PartitionConfig};

    #[test]
    fn box_partitioned_by_its_faces_has_one_interior_cell() {
        let m = box_mesh([0.2; 3], [0.8; 3]);
        let prims: Vec<PlanarPrimitive> = (0..6)
            .map(|f| {
                let pts = m.face_points(f);
                PlanarPrimitive::new(
                    Plane::through_point(m.face_area_vector(f), &pts[0]).unwrap(),
                    pts,
                )
            })
            .collect();
        let cfg = PartitionConfig {
            adaptive: false,
            ..Default::default()
        };
        let c = build_cell_complex(&prims, &m.bbox().unwrap(), &cfg).unwrap();
        let labels = oracle_label(&c, &m).unwrap();
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 1);
        let inner = labels.iter().position(|&l| l == 1).unwrap();
        assert!((c.cells[inner].centroid() - nalgebra::Point3::new(0.5, 0.5, 0.5)).norm() < 1e-12);
    }

    #[test]
    fn centroid_outside_mesh_box_is_exterior() {
        let m = box_mesh([0.0; 3], [0.4; 3]);
        let bbox = BoundingBox::unit();
        let p = PlanarPrimitive::new(
            Plane::new([1.0, 0.0, 0.0].into(), 0.9).unwrap(),
            vec![
                [0.9, 0.0, 0.0].into(),
                [0.9, 1.0, 0.0].into(),
                [0.9, 0.0, 1.0].into(),
            ],
        );
        let c = build_cell_complex(&[p], &bbox, &PartitionConfig::default()).unwrap();
        assert_eq!(oracle_label(&c, &m).unwrap(), vec![0, 0]);
    }

    #[test]
    fn open_mesh_is_rejected() {
        let mut m = box_mesh([0.0; 3], [1.0; 3]);
        m.faces.truncate(3);
        let p = PlanarPrimitive::new(
            Plane::new([1.0, 0.0, 0.0].into(), 0.5).unwrap(),
            vec![
                [0.5, 0.0, 0.0].into(),
                [0.5, 1.0, 0.0].into(),
                [0.5, 0.0, 1.0].into(),
            ],
        );
        let cfg = PartitionConfig {
            margin: 0.0,
            ..Default::default()
        };
        let c = build_cell_complex(&[p], &BoundingBox::unit(), &cfg).unwrap();
        assert!(matches!(
            oracle_label(&c, &m),
            Err(DataError::NonWatertight { .. })
        ));
    }
}
