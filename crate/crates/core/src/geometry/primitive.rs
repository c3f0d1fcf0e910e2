use serde::{Deserialize, Serialize};

use super::{convex_hull_2d, GeometryError, Plane, Point, Polygon};

/// A plane fitted to a set of inlier points, with the area of the inliers'
/// projected convex hull and a verticality flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarPrimitive {
    pub plane: Plane,
    pub inliers: Vec<Point>,
    pub area: f64,
    pub vertical: bool,
}

impl PlanarPrimitive {
    /// Derives `area` and `vertical` from the plane and inliers.
    pub fn new(plane: Plane, inliers: Vec<Point>) -> Self {
        let area = Polygon::new(hull_points(&plane, &inliers)).area();
        let vertical = plane.is_vertical();
        Self {
            plane,
            inliers,
            area,
            vertical,
        }
    }

    pub fn from_normal_offset(
        normal: [f64; 3],
        offset: f64,
        inliers: Vec<Point>,
    ) -> Result<Self, GeometryError> {
        let plane = Plane::new(normal.into(), offset)?;
        Ok(Self::new(plane, inliers))
    }

    /// Convex hull of the inliers projected on the plane, scaled about its
    /// centroid by `1 + inflate`.
    pub fn support_polygon(&self, inflate: f64) -> Polygon {
        Polygon::new(hull_points(&self.plane, &self.inliers)).scaled(1.0 + inflate)
    }
}

fn hull_points(plane: &Plane, inliers: &[Point]) -> Vec<Point> {
    let (u, v) = plane.basis();
    let origin = plane.normal * plane.offset;
    let uv: Vec<[f64; 2]> = inliers
        .iter()
        .map(|p| [p.coords.dot(&u), p.coords.dot(&v)])
        .collect();
    convex_hull_2d(&uv)
        .into_iter()
        .map(|[a, b]| Point::from(origin + u * a + v * b))
        .collect()
}
