use serde::{Deserialize, Serialize};

use super::{HalfSpace, Point, Vector, EPS};

/// A planar polygon in 3D; counter-clockwise about [`Polygon::normal`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub points: Vec<Point>,
}

impl Polygon {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    /// Area-weighted normal (Newell); its length is twice the area.
    pub fn area_vector(&self) -> Vector {
        newell_normal(&self.points)
    }

    pub fn area(&self) -> f64 {
        0.5 * self.area_vector().norm()
    }

    pub fn normal(&self) -> Option<Vector> {
        self.area_vector().try_normalize(0.0)
    }

    /// Area centroid (fan decomposition about the first vertex).
    pub fn centroid(&self) -> Point {
        let n = self.points.len();
        if n < 3 {
            let sum = self
                .points
                .iter()
                .fold(Vector::zeros(), |acc, p| acc + p.coords);
            return Point::from(sum / n.max(1) as f64);
        }
        let normal = self.area_vector();
        let p0 = self.points[0];
        let mut acc = Vector::zeros();
        let mut total = 0.0;
        for i in 1..n - 1 {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let w = (a - p0).cross(&(b - p0)).dot(&normal);
            acc += w * (p0.coords + a.coords + b.coords) / 3.0;
            total += w;
        }
        if total.abs() < f64::MIN_POSITIVE {
            return Point::from(
                self.points
                    .iter()
                    .fold(Vector::zeros(), |s, p| s + p.coords)
                    / n as f64,
            );
        }
        Point::from(acc / total)
    }

    /// Keeps the part inside `hs` (outside distance ≤ eps).
    pub fn clip(&self, hs: &HalfSpace) -> Polygon {
        Polygon::new(clip_polygon(&self.points, |p| hs.outside_distance(p)))
    }

    pub fn reversed(&self) -> Polygon {
        let mut pts = self.points.clone();
        pts.reverse();
        Polygon::new(pts)
    }

    /// Uniformly scales about the area centroid.
    pub fn scaled(&self, factor: f64) -> Polygon {
        let c = self.centroid();
        Polygon::new(self.points.iter().map(|p| c + (p - c) * factor).collect())
    }
}

pub fn newell_normal(points: &[Point]) -> Vector {
    let n = points.len();
    let mut acc = Vector::zeros();
    if n < 3 {
        return acc;
    }
    let p0 = points[0];
    for i in 1..n - 1 {
        acc += (points[i] - p0).cross(&(points[i + 1] - p0));
    }
    acc
}

/// Sutherland–Hodgman step with three-way classification: vertices within
/// `EPS` of the boundary are kept, and new points are created only on edges
/// that strictly cross it.
pub fn clip_polygon(points: &[Point], outside: impl Fn(&Point) -> f64) -> Vec<Point> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let d: Vec<f64> = points.iter().map(&outside).collect();
    if d.iter().all(|&x| x <= EPS) {
        return points.to_vec();
    }
    let mut out = Vec::with_capacity(n + 2);
    for i in 0..n {
        let j = (i + 1) % n;
        let (a, b) = (points[i], points[j]);
        let (da, db) = (d[i], d[j]);
        if da <= EPS {
            out.push(a);
        }
        if (da < -EPS && db > EPS) || (da > EPS && db < -EPS) {
            let t = da / (da - db);
            out.push(a + (b - a) * t);
        }
    }
    if out.len() < 3 {
        out.clear();
    }
    out
}

/// Andrew's monotone chain; returns hull vertices counter-clockwise without
/// collinear points. Degenerate inputs return what remains (possibly < 3).
pub fn convex_hull_2d(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for p in pts.iter() {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}
