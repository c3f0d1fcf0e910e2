//! Surface extraction between interior and exterior cells.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{facet_overlap, Point, Polygon, VertexWelder, EPS};
use crate::mesh::Mesh;
use crate::partition::CellComplex;

/// Welding tolerance for facet corners computed in different cells.
pub const WELD_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReconstructError {
    #[error("no interior cell, nothing to reconstruct")]
    EmptyReconstruction,
    #[error("{labels} labels for {cells} cells")]
    LabelMismatch { labels: usize, cells: usize },
}

/// Every facet separating an interior cell from an exterior one (or from
/// outside the bounding box), oriented away from the interior.
pub fn boundary_polygons(
    complex: &CellComplex,
    labels: &[u8],
) -> Result<Vec<Polygon>, ReconstructError> {
    if labels.len() != complex.len() {
        return Err(ReconstructError::LabelMismatch {
            labels: labels.len(),
            cells: complex.len(),
        });
    }
    if !labels.contains(&1) {
        return Err(ReconstructError::EmptyReconstruction);
    }
    let mut out = Vec::new();
    for &(i, j) in &complex.adjacency {
        if labels[i] == labels[j] {
            continue;
        }
        let (inner, outer) = if labels[i] == 1 { (i, j) } else { (j, i) };
        let (a, b) = (&complex.cells[inner], &complex.cells[outer]);
        // a pair may touch on one plane only; collect every overlapping facet pair
        for fa in 0..a.facets().len() {
            for fb in 0..b.facets().len() {
                if let Some(p) = facet_overlap(a, fa, b, fb) {
                    out.push(p);
                }
            }
        }
    }
    for (c, cell) in complex.cells.iter().enumerate() {
        if labels[c] != 1 {
            continue;
        }
        for f in 0..cell.facets().len() {
            if complex.is_box_plane(cell.facet_halfspace(f).plane_id) {
                out.push(cell.facet_polygon(f));
            }
        }
    }
    Ok(out)
}

/// Welds polygons into an indexed mesh and inserts T-junction vertices so
/// that adjacent faces share edges exactly.
pub fn weld_polygons(polys: &[Polygon]) -> Mesh {
    let mut welder = VertexWelder::new(WELD_TOL);
    let mut faces: Vec<Vec<usize>> = polys
        .iter()
        .map(|p| {
            let mut ring: Vec<usize> = p.points.iter().map(|&q| welder.insert(q)).collect();
            ring.dedup();
            while ring.len() > 1 && ring.first() == ring.last() {
                ring.pop();
            }
            ring
        })
        .filter(|r| r.len() >= 3)
        .collect();
    let vertices = welder.into_points();
    for ring in &mut faces {
        let mut out = Vec::with_capacity(ring.len());
        for i in 0..ring.len() {
            let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
            out.push(a);
            out.extend(points_on_segment(&vertices, a, b));
        }
        *ring = out;
    }
    Mesh { vertices, faces }
}

/// Vertices strictly inside segment `ab`, ordered from `a` to `b`.
fn points_on_segment(vertices: &[Point], a: usize, b: usize) -> Vec<usize> {
    let (pa, pb) = (vertices[a], vertices[b]);
    let d = pb - pa;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return Vec::new();
    }
    let mut hits: Vec<(f64, usize)> = vertices
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != a && i != b)
        .filter_map(|(i, p)| {
            let t = (p - pa).dot(&d) / len2;
            let off = (p - (pa + d * t)).norm();
            (t > 0.0 && t < 1.0 && off < WELD_TOL.max(EPS)).then_some((t, i))
        })
        .collect();
    hits.sort_by(|x, y| x.0.total_cmp(&y.0));
    hits.into_iter().map(|(_, i)| i).collect()
}

/// The closed polygon surface of the interior cells.
pub fn extract_surface(complex: &CellComplex, labels: &[u8]) -> Result<Mesh, ReconstructError> {
    Ok(weld_polygons(&boundary_polygons(complex, labels)?))
}

/// Sum of interior cell volumes.
pub fn interior_volume(complex: &CellComplex, labels: &[u8]) -> f64 {
    complex
        .cells
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(c, _)| c.volume())
        .sum()
}
