//! Polygon meshes: validation, coplanar grouping, triangle queries and OBJ.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{newell_normal, BoundingBox, Plane, Point, Vector, EPS};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("OBJ line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Planar n-gon faces, counter-clockwise seen from outside.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub faces: Vec<Vec<usize>>,
}

/// Result of [`Mesh::watertight_check`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WatertightReport {
    pub watertight: bool,
    /// Directed edges without an opposite partner.
    pub boundary_edges: Vec<(usize, usize)>,
    /// Undirected edges used by more than two faces.
    pub nonmanifold_edges: Vec<(usize, usize)>,
    /// Directed edges traversed twice in the same direction.
    pub misoriented_edges: Vec<(usize, usize)>,
    /// Edge-connected face components.
    pub shells: usize,
}

/// Faces sharing one supporting plane and connected through shared edges.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceGroup {
    pub plane: Plane,
    pub faces: Vec<usize>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_points(&self, f: usize) -> Vec<Point> {
        self.faces[f].iter().map(|&i| self.vertices[i]).collect()
    }

    /// Area vector of face `f` (twice the area, along the outward normal).
    pub fn face_area_vector(&self, f: usize) -> Vector {
        newell_normal(&self.face_points(f))
    }

    pub fn bbox(&self) -> Option<BoundingBox> {
        BoundingBox::from_points(self.vertices.iter()).ok()
    }

    fn face_edges(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.faces.iter().enumerate().flat_map(|(f, ring)| {
            (0..ring.len()).map(move |i| (f, ring[i], ring[(i + 1) % ring.len()]))
        })
    }

    /// Triangles as vertex-index triples. Strictly convex faces are fanned
    /// from their first vertex; faces with collinear runs get a centroid
    /// vertex appended to `extra` (indices continue after `vertices`).
    fn triangulate_into(&self, extra: &mut Vec<Point>) -> Vec<[usize; 3]> {
        let mut tris = Vec::new();
        for (f, ring) in self.faces.iter().enumerate() {
            let n = ring.len();
            if n < 3 {
                continue;
            }
            let normal = self.face_area_vector(f);
            let strictly_convex = (0..n).all(|i| {
                let (a, b, c) = (
                    self.vertices[ring[(i + n - 1) % n]],
                    self.vertices[ring[i]],
                    self.vertices[ring[(i + 1) % n]],
                );
                (b - a).cross(&(c - b)).dot(&normal) > EPS * normal.norm()
            });
            if strictly_convex || n == 3 {
                tris.extend((1..n - 1).map(|i| [ring[0], ring[i], ring[i + 1]]));
            } else {
                let c = ring
                    .iter()
                    .fold(Vector::zeros(), |s, &i| s + self.vertices[i].coords)
                    / n as f64;
                let ci = self.vertices.len() + extra.len();
                extra.push(Point::from(c));
                tris.extend((0..n).map(|i| [ci, ring[i], ring[(i + 1) % n]]));
            }
        }
        tris
    }

    /// A copy with every face split into triangles.
    pub fn triangulated(&self) -> Mesh {
        let mut extra = Vec::new();
        let tris = self.triangulate_into(&mut extra);
        let mut vertices = self.vertices.clone();
        vertices.extend(extra);
        Mesh {
            vertices,
            faces: tris.into_iter().map(|t| t.to_vec()).collect(),
        }
    }

    /// All triangles as corner coordinates, degenerate ones dropped.
    pub fn triangles(&self) -> Vec<[Point; 3]> {
        let mut extra = Vec::new();
        let tris = self.triangulate_into(&mut extra);
        let at = |i: usize| {
            if i < self.vertices.len() {
                self.vertices[i]
            } else {
                extra[i - self.vertices.len()]
            }
        };
        tris.into_iter()
            .map(|[a, b, c]| [at(a), at(b), at(c)])
            .filter(|[a, b, c]| (b - a).cross(&(c - a)).norm() > 0.0)
            .collect()
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| 0.5 * self.face_area_vector(f).norm())
            .sum()
    }

    /// Signed enclosed volume by the divergence theorem.
    pub fn volume(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let ring = &self.faces[f];
                if ring.is_empty() {
                    return 0.0;
                }
                self.vertices[ring[0]].coords.dot(&self.face_area_vector(f)) / 6.0
            })
            .sum()
    }

    pub fn watertight_check(&self) -> WatertightReport {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        let mut undirected: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (f, a, b) in self.face_edges() {
            *directed.entry((a, b)).or_default() += 1;
            undirected.entry((a.min(b), a.max(b))).or_default().push(f);
        }
        let mut report = WatertightReport::default();
        let mut uf = UnionFind::new(self.faces.len());
        for (&(a, b), faces) in &undirected {
            for w in faces.windows(2) {
                uf.union(w[0], w[1]);
            }
            if faces.len() > 2 {
                report.nonmanifold_edges.push((a, b));
            }
            let fwd = directed.get(&(a, b)).copied().unwrap_or(0);
            let bwd = directed.get(&(b, a)).copied().unwrap_or(0);
            if fwd > 1 || bwd > 1 {
                report.misoriented_edges.push((a, b));
            }
            if fwd == 1 && bwd == 0 {
                report.boundary_edges.push((a, b));
            } else if bwd == 1 && fwd == 0 {
                report.boundary_edges.push((b, a));
            }
        }
        let mut roots: Vec<usize> = (0..self.faces.len()).map(|f| uf.find(f)).collect();
        roots.sort_unstable();
        roots.dedup();
        report.shells = roots.len();
        report.watertight = !self.faces.is_empty()
            && report.boundary_edges.is_empty()
            && report.nonmanifold_edges.is_empty()
            && report.misoriented_edges.is_empty();
        report
    }

    /// Maximal groups of edge-connected faces on a common oriented plane.
    pub fn coplanar_groups(&self) -> Vec<FaceGroup> {
        // oriented unit normal and offset per face
        let planes: Vec<Option<(Vector, f64)>> = (0..self.faces.len())
            .map(|f| {
                let n = self.face_area_vector(f).try_normalize(1e-300)?;
                let p = self.face_points(f);
                let c = p.iter().fold(Vector::zeros(), |s, q| s + q.coords) / p.len() as f64;
                Some((n, n.dot(&c)))
            })
            .collect();
        let same = |a: usize, b: usize| match (&planes[a], &planes[b]) {
            (Some(p), Some(q)) => p.0.dot(&q.0) > 1.0 - 1e-9 && (p.1 - q.1).abs() < 1e-7,
            _ => false,
        };
        let mut uf = UnionFind::new(self.faces.len());
        let mut by_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (f, a, b) in self.face_edges() {
            by_edge.entry((a.min(b), a.max(b))).or_default().push(f);
        }
        for faces in by_edge.values() {
            for i in 0..faces.len() {
                for j in i + 1..faces.len() {
                    if same(faces[i], faces[j]) {
                        uf.union(faces[i], faces[j]);
                    }
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for f in 0..self.faces.len() {
            if planes[f].is_some() {
                groups.entry(uf.find(f)).or_default().push(f);
            }
        }
        groups
            .into_values()
            .map(|faces| {
                // area-weighted plane of the whole group
                let n: Vector = faces.iter().map(|&f| self.face_area_vector(f)).sum();
                let p = self.vertices[self.faces[faces[0]][0]];
                let n0 = planes[faces[0]].expect("grouped faces have planes").0;
                let plane = Plane::through_point(n, &p)
                    .or_else(|_| Plane::through_point(n0, &p))
                    .expect("unit normal");
                FaceGroup { plane, faces }
            })
            .collect()
    }

    /// Number of merged planar polygons.
    pub fn face_count(&self) -> usize {
        self.coplanar_groups().len()
    }

    /// Applies `p ↦ scale·p + translation` to every vertex.
    pub fn transformed(&self, scale: f64, translation: Vector) -> Mesh {
        Mesh {
            vertices: self
                .vertices
                .iter()
                .map(|p| Point::from(p.coords * scale + translation))
                .collect(),
            faces: self.faces.clone(),
        }
    }

    /// ASCII OBJ; n-gon faces unless `triangulate`.
    pub fn write_obj<W: Write>(&self, mut w: W, triangulate: bool) -> std::io::Result<()> {
        let tri;
        let m = if triangulate {
            tri = self.triangulated();
            &tri
        } else {
            self
        };
        for v in &m.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for f in &m.faces {
            write!(w, "f")?;
            for &i in f {
                write!(w, " {}", i + 1)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads `v` and `f` records; texture/normal indices and other records are ignored.
    pub fn read_obj<R: BufRead>(r: R) -> Result<Mesh, MeshError> {
        let mut mesh = Mesh::default();
        for (ln, line) in r.lines().enumerate() {
            let line = line?;
            let bad = |reason: &str| MeshError::Parse {
                line: ln + 1,
                reason: reason.to_string(),
            };
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("v") => {
                    let c: Vec<f64> = tok
                        .take(3)
                        .map(str::parse)
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("bad coordinate"))?;
                    if c.len() != 3 {
                        return Err(bad("vertex needs 3 coordinates"));
                    }
                    mesh.vertices.push(Point::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let mut face = Vec::new();
                    for t in tok {
                        let i: i64 = t
                            .split('/')
                            .next()
                            .unwrap_or("")
                            .parse()
                            .map_err(|_| bad("bad index"))?;
                        let n = mesh.vertices.len() as i64;
                        let idx = if i < 0 { n + i } else { i - 1 };
                        if !(0..n).contains(&idx) {
                            return Err(bad("index out of range"));
                        }
                        face.push(idx as usize);
                    }
                    if face.len() < 3 {
                        return Err(bad("face needs 3 vertices"));
                    }
                    mesh.faces.push(face);
                }
                _ => {}
            }
        }
        Ok(mesh)
    }
}

/// Closest point on triangle `abc` to `p` (Ericson's region test).
pub fn closest_point_on_triangle(p: &Point, a: &Point, b: &Point, c: &Point) -> Point {
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(&ap), ac.dot(&ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(&bp), ac.dot(&bp));
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(&cp), ac.dot(&cp));
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

pub fn point_triangle_distance(p: &Point, t: &[Point; 3]) -> f64 {
    (p - closest_point_on_triangle(p, &t[0], &t[1], &t[2])).norm()
}

/// Möller–Trumbore; the hit parameter `t > 0` along `dir`, if any.
pub fn ray_triangle(origin: &Point, dir: &Vector, t: &[Point; 3]) -> Option<f64> {
    let (e1, e2) = (t[1] - t[0], t[2] - t[0]);
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    if det.abs() < 1e-15 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - t[0];
    let u = inv * s.dot(&h);
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = inv * dir.dot(&q);
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let tt = inv * e2.dot(&q);
    (tt > 1e-12).then_some(tt)
}
