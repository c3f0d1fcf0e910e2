use serde::{Deserialize, Serialize};

use super::{GeometryError, Point, Vector, EPS, VERTICALITY_COSINE};

/// The plane `{p : normal·p = offset}` with a unit normal whose
/// largest-magnitude component is positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vector,
    pub offset: f64,
}

impl Plane {
    /// Normalizes and canonicalizes; the returned plane may have a flipped
    /// normal relative to the input.
    pub fn new(normal: Vector, offset: f64) -> Result<Self, GeometryError> {
        Self::canonical(normal, offset).map(|(p, _)| p)
    }

    /// Like [`Plane::new`], also reporting whether the sign was flipped.
    pub(crate) fn canonical(normal: Vector, offset: f64) -> Result<(Self, bool), GeometryError> {
        let len = normal.norm();
        if !len.is_finite() || len < 1e-300 || !offset.is_finite() {
            return Err(GeometryError::ZeroNormal);
        }
        let mut n = normal / len;
        let mut d = offset / len;
        let mut lead = 0;
        for i in 1..3 {
            if n[i].abs() > n[lead].abs() {
                lead = i;
            }
        }
        let flipped = n[lead] < 0.0;
        if flipped {
            n = -n;
            d = -d;
        }
        Ok((
            Self {
                normal: n,
                offset: d,
            },
            flipped,
        ))
    }

    pub fn through_point(normal: Vector, point: &Point) -> Result<Self, GeometryError> {
        Self::new(normal, normal.dot(&point.coords))
    }

    pub fn from_points(a: &Point, b: &Point, c: &Point) -> Result<Self, GeometryError> {
        Self::through_point((b - a).cross(&(c - a)), a)
    }

    #[inline]
    pub fn signed_distance(&self, p: &Point) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }

    pub fn project(&self, p: &Point) -> Point {
        p - self.normal * self.signed_distance(p)
    }

    pub fn is_vertical(&self) -> bool {
        self.normal.z.abs() < VERTICALITY_COSINE
    }

    /// Same geometric plane within `tol`, regardless of orientation.
    pub fn coincides(&self, other: &Plane, tol: f64) -> bool {
        let same =
            (self.normal - other.normal).amax() <= tol && (self.offset - other.offset).abs() <= tol;
        let flipped =
            (self.normal + other.normal).amax() <= tol && (self.offset + other.offset).abs() <= tol;
        same || flipped
    }

    /// Orthonormal in-plane axes `(u, v)` with `u × v = normal`.
    pub fn basis(&self) -> (Vector, Vector) {
        basis_for(&self.normal)
    }
}

pub(crate) fn basis_for(n: &Vector) -> (Vector, Vector) {
    let helper = if n.x.abs() < 0.9 {
        Vector::x()
    } else {
        Vector::y()
    };
    let u = helper.cross(n).normalize();
    let v = n.cross(&u);
    (u, v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    /// `normal·p ≤ offset`
    Below,
    /// `normal·p ≥ offset`
    Above,
}

impl Side {
    pub fn flip(self) -> Self {
        match self {
            Side::Below => Side::Above,
            Side::Above => Side::Below,
        }
    }
}

/// One bounding half-space of a cell. `plane_id` ties the half-space to an
/// entry of a shared plane table so facets on the same plane can be matched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub plane: Plane,
    pub side: Side,
    pub plane_id: usize,
}

impl HalfSpace {
    pub fn new(plane: Plane, side: Side, plane_id: usize) -> Self {
        Self {
            plane,
            side,
            plane_id,
        }
    }

    /// `{p : normal·p ≤ offset}` for an arbitrary (non-canonical) normal.
    pub fn from_inequality(
        normal: Vector,
        offset: f64,
        plane_id: usize,
    ) -> Result<Self, GeometryError> {
        let (plane, flipped) = Plane::canonical(normal, offset)?;
        let side = if flipped { Side::Above } else { Side::Below };
        Ok(Self {
            plane,
            side,
            plane_id,
        })
    }

    pub fn outward_normal(&self) -> Vector {
        match self.side {
            Side::Below => self.plane.normal,
            Side::Above => -self.plane.normal,
        }
    }

    /// Positive outside the half-space, negative inside.
    #[inline]
    pub fn outside_distance(&self, p: &Point) -> f64 {
        let d = self.plane.signed_distance(p);
        match self.side {
            Side::Below => d,
            Side::Above => -d,
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.outside_distance(p) <= EPS
    }

    pub fn complement(&self) -> Self {
        Self {
            side: self.side.flip(),
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_sign_makes_equal_planes_compare_equal() {
        let a = Plane::new(Vector::new(0.0, 0.0, -2.0), -1.0).unwrap();
        let b = Plane::new(Vector::new(0.0, 0.0, 1.0), 0.5).unwrap();
        assert_eq!(a, b);
        assert!((a.normal.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inequality_keeps_its_side_after_canonicalization() {
        // -x ≤ 0  ⇔  x ≥ 0
        let hs = HalfSpace::from_inequality(Vector::new(-1.0, 0.0, 0.0), 0.0, 0).unwrap();
        assert_eq!(hs.side, Side::Above);
        assert!(hs.contains(&Point::new(0.3, 0.0, 0.0)));
        assert!(!hs.contains(&Point::new(-0.3, 0.0, 0.0)));
        assert_eq!(hs.outward_normal(), Vector::new(-1.0, 0.0, 0.0));
    }

    #[test]
    fn zero_normal_is_rejected() {
        assert_eq!(
            Plane::new(Vector::zeros(), 1.0),
            Err(GeometryError::ZeroNormal)
        );
    }

    #[test]
    fn basis_is_right_handed() {
        let p = Plane::new(Vector::new(0.3, -0.2, 0.9), 0.1).unwrap();
        let (u, v) = p.basis();
        assert!((u.cross(&v) - p.normal).norm() < 1e-12);
    }

    #[test]
    fn verticality_threshold() {
        assert!(Plane::new(Vector::new(1.0, 0.0, 0.08), 0.0)
            .unwrap()
            .is_vertical());
        assert!(!Plane::new(Vector::new(1.0, 0.0, 0.2), 0.0)
            .unwrap()
            .is_vertical());
    }
}
