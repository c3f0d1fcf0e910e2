//! Convex polyhedron arithmetic on unit-normalized coordinates.
//!
//! All predicates use the absolute tolerance [`EPS`]; areas below [`EPS_AREA`]
//! count as zero. Cells are only ever produced by clipping, so vertex and
//! facet data are maintained incrementally rather than re-solved.

mod plane;
mod polygon;
mod polyhedron;
mod primitive;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use plane::{HalfSpace, Plane, Side};
pub use polygon::{clip_polygon, convex_hull_2d, newell_normal, Polygon};
pub(crate) use polyhedron::facet_overlap;
pub use polyhedron::{shared_facet, ConvexPolyhedron, Facet, VertexWelder};
pub use primitive::PlanarPrimitive;

pub type Point = Point3<f64>;
pub type Vector = Vector3<f64>;

/// Global distance tolerance in normalized model units.
pub const EPS: f64 = 1e-9;
/// Areas at or below this are treated as zero.
pub const EPS_AREA: f64 = 1e-12;
/// `|normal_z|` below this marks a plane as vertical (cos 85°).
pub const VERTICALITY_COSINE: f64 = 0.0872;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("half-space intersection is unbounded")]
    Unbounded,
    #[error("half-space intersection is empty")]
    Empty,
    #[error("half-space intersection is thinner than the tolerance")]
    Degenerate,
    #[error("plane normal has zero length")]
    ZeroNormal,
    #[error("bounding box must satisfy min < max componentwise")]
    InvalidBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Point,
    pub max: Point,
}

impl BoundingBox {
    pub fn new(min: Point, max: Point) -> Result<Self, GeometryError> {
        if (0..3).all(|i| min[i] < max[i]) && min.iter().chain(max.iter()).all(|v| v.is_finite()) {
            Ok(Self { min, max })
        } else {
            Err(GeometryError::InvalidBox)
        }
    }

    pub fn unit() -> Self {
        Self {
            min: Point::origin(),
            max: Point::new(1.0, 1.0, 1.0),
        }
    }

    /// Tight box around `points`; fails on empty or flat input.
    pub fn from_points<'a>(
        points: impl IntoIterator<Item = &'a Point>,
    ) -> Result<Self, GeometryError> {
        let mut min = Point::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            for i in 0..3 {
                min[i] = min[i].min(p[i]);
                max[i] = max[i].max(p[i]);
            }
        }
        Self::new(min, max)
    }

    pub fn size(&self) -> Vector {
        self.max - self.min
    }

    pub fn largest_side(&self) -> f64 {
        self.size().max()
    }

    pub fn volume(&self) -> f64 {
        let s = self.size();
        s.x * s.y * s.z
    }

    pub fn center(&self) -> Point {
        nalgebra::center(&self.min, &self.max)
    }

    /// Grows every side by `margin` (absolute units).
    pub fn inflate(&self, margin: f64) -> Self {
        let m = Vector::repeat(margin);
        Self {
            min: self.min - m,
            max: self.max + m,
        }
    }

    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol)
    }

    pub fn overlaps(&self, other: &Self, tol: f64) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] + tol && other.min[i] <= self.max[i] + tol)
    }

    /// The six bounding half-spaces, with plane ids `first_id..first_id + 6`
    /// ordered x-min, x-max, y-min, y-max, z-min, z-max.
    pub fn halfspaces(&self, first_id: usize) -> [HalfSpace; 6] {
        let axis = |i: usize| {
            let mut n = Vector::zeros();
            n[i] = 1.0;
            n
        };
        let mk = |i: usize, upper: bool| {
            let plane = Plane {
                normal: axis(i),
                offset: if upper { self.max[i] } else { self.min[i] },
            };
            let side = if upper { Side::Below } else { Side::Above };
            HalfSpace {
                plane,
                side,
                plane_id: first_id + 2 * i + usize::from(upper),
            }
        };
        [
            mk(0, false),
            mk(0, true),
            mk(1, false),
            mk(1, true),
            mk(2, false),
            mk(2, true),
        ]
    }
}
