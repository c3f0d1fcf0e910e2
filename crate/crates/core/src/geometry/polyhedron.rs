use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::plane::basis_for;
use super::{
    BoundingBox, GeometryError, HalfSpace, Plane, Point, Polygon, Side, Vector, EPS, EPS_AREA,
};

/// Half-extent of the seed box used when building a cell from bare half-spaces.
const SEED_EXTENT: f64 = 1e6;
/// Plane ids at or above this belong to the seed box.
const SEED_ID_BASE: usize = usize::MAX - 8;

/// A planar facet: the bounding half-space it lies on and its vertex ring,
/// counter-clockwise about the outward normal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Facet {
    pub halfspace: usize,
    pub ring: Vec<usize>,
}

/// A bounded convex cell kept in both half-space and vertex form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexPolyhedron {
    halfspaces: Vec<HalfSpace>,
    vertices: Vec<Point>,
    facets: Vec<Facet>,
    volume: f64,
    centroid: Point,
}

enum Classification {
    Below,
    Above,
    Straddles,
}

impl ConvexPolyhedron {
    /// The axis-aligned box; plane ids follow [`BoundingBox::halfspaces`].
    pub fn from_box(bbox: &BoundingBox, first_plane_id: usize) -> Self {
        let (lo, hi) = (bbox.min, bbox.max);
        let vertices: Vec<Point> = (0..8)
            .map(|i| {
                Point::new(
                    if i & 1 == 0 { lo.x } else { hi.x },
                    if i & 2 == 0 { lo.y } else { hi.y },
                    if i & 4 == 0 { lo.z } else { hi.z },
                )
            })
            .collect();
        let rings: [[usize; 4]; 6] = [
            [0, 4, 6, 2],
            [1, 3, 7, 5],
            [0, 1, 5, 4],
            [2, 6, 7, 3],
            [0, 2, 3, 1],
            [4, 5, 7, 6],
        ];
        let facets = rings
            .iter()
            .enumerate()
            .map(|(h, r)| Facet {
                halfspace: h,
                ring: r.to_vec(),
            })
            .collect();
        let mut poly = Self {
            halfspaces: bbox.halfspaces(first_plane_id).to_vec(),
            vertices,
            facets,
            volume: 0.0,
            centroid: Point::origin(),
        };
        poly.update_mass_properties();
        poly
    }

    /// Intersects the half-spaces by successively clipping a large seed box.
    pub fn from_halfspaces(halfspaces: &[HalfSpace]) -> Result<Self, GeometryError> {
        let seed = BoundingBox {
            min: Point::new(-SEED_EXTENT, -SEED_EXTENT, -SEED_EXTENT),
            max: Point::new(SEED_EXTENT, SEED_EXTENT, SEED_EXTENT),
        };
        let mut poly = Self::from_box(&seed, SEED_ID_BASE);
        for hs in halfspaces {
            poly = poly.intersect(hs)?;
        }
        if poly.halfspaces.iter().any(|h| h.plane_id >= SEED_ID_BASE) {
            return Err(GeometryError::Unbounded);
        }
        if poly.thickness() < EPS {
            return Err(GeometryError::Degenerate);
        }
        Ok(poly)
    }

    /// Keeps the part of the cell inside `hs`.
    pub fn intersect(&self, hs: &HalfSpace) -> Result<Self, GeometryError> {
        let (below, above) = self.clip(&hs.plane, hs.plane_id);
        let kept = match hs.side {
            Side::Below => below,
            Side::Above => above,
        };
        match kept {
            Some(p) => Ok(p),
            None => {
                let touches = self
                    .vertices
                    .iter()
                    .any(|v| hs.plane.signed_distance(v).abs() <= EPS);
                Err(if touches {
                    GeometryError::Degenerate
                } else {
                    GeometryError::Empty
                })
            }
        }
    }

    /// Splits by `plane`. A side is absent when no vertex lies strictly
    /// (beyond `EPS`) on it; the new cap facets carry `plane_id`.
    pub fn clip(&self, plane: &Plane, plane_id: usize) -> (Option<Self>, Option<Self>) {
        let dist: Vec<f64> = self
            .vertices
            .iter()
            .map(|v| plane.signed_distance(v))
            .collect();
        match classify(&dist) {
            Classification::Below => (Some(self.clone()), None),
            Classification::Above => (None, Some(self.clone())),
            Classification::Straddles => self.split(plane, plane_id, &dist),
        }
    }

    fn split(&self, plane: &Plane, plane_id: usize, dist: &[f64]) -> (Option<Self>, Option<Self>) {
        let class: Vec<i8> = dist
            .iter()
            .map(|&d| {
                if d < -EPS {
                    -1
                } else if d > EPS {
                    1
                } else {
                    0
                }
            })
            .collect();
        let mut verts = self.vertices.clone();
        let mut on_cut: Vec<usize> = (0..verts.len()).filter(|&i| class[i] == 0).collect();
        let mut crossing: HashMap<(usize, usize), usize> = HashMap::new();
        let mut below = Vec::with_capacity(self.facets.len() + 1);
        let mut above = Vec::with_capacity(self.facets.len() + 1);

        for facet in &self.facets {
            let ring = &facet.ring;
            let n = ring.len();
            let (mut b, mut a) = (Vec::with_capacity(n + 2), Vec::with_capacity(n + 2));
            for i in 0..n {
                let (p, q) = (ring[i], ring[(i + 1) % n]);
                match class[p] {
                    -1 => b.push(p),
                    1 => a.push(p),
                    _ => {
                        b.push(p);
                        a.push(p);
                    }
                }
                if class[p] * class[q] == -1 {
                    let key = (p.min(q), p.max(q));
                    let idx = *crossing.entry(key).or_insert_with(|| {
                        let (lo, hi) = key;
                        let t = dist[lo] / (dist[lo] - dist[hi]);
                        verts.push(self.vertices[lo] + (self.vertices[hi] - self.vertices[lo]) * t);
                        on_cut.push(verts.len() - 1);
                        verts.len() - 1
                    });
                    b.push(idx);
                    a.push(idx);
                }
            }
            if b.len() >= 3 {
                below.push(Facet {
                    halfspace: facet.halfspace,
                    ring: b,
                });
            }
            if a.len() >= 3 {
                above.push(Facet {
                    halfspace: facet.halfspace,
                    ring: a,
                });
            }
        }

        // Cap ring, counter-clockwise about +normal.
        let (u, v) = basis_for(&plane.normal);
        let center = on_cut
            .iter()
            .fold(Vector::zeros(), |acc, &i| acc + verts[i].coords)
            / on_cut.len() as f64;
        let mut keyed: Vec<(f64, usize)> = on_cut
            .iter()
            .map(|&i| {
                let r = verts[i].coords - center;
                (r.dot(&v).atan2(r.dot(&u)), i)
            })
            .collect();
        keyed.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let cap: Vec<usize> = keyed.into_iter().map(|(_, i)| i).collect();

        let mut halfspaces = self.halfspaces.clone();
        let cap_hs = halfspaces.len();
        halfspaces.push(HalfSpace::new(*plane, Side::Below, plane_id));
        below.push(Facet {
            halfspace: cap_hs,
            ring: cap.clone(),
        });
        let below_piece = assemble(&halfspaces, &verts, below);

        halfspaces[cap_hs].side = Side::Above;
        let mut rev = cap;
        rev.reverse();
        above.push(Facet {
            halfspace: cap_hs,
            ring: rev,
        });
        let above_piece = assemble(&halfspaces, &verts, above);

        match (below_piece, above_piece) {
            (Some(b), Some(a)) => (Some(b), Some(a)),
            // numerically collapsed piece: keep the cell whole on the surviving side
            (Some(_), None) => (Some(self.clone()), None),
            (None, Some(_)) => (None, Some(self.clone())),
            (None, None) => {
                let s: f64 = dist.iter().sum();
                if s <= 0.0 {
                    (Some(self.clone()), None)
                } else {
                    (None, Some(self.clone()))
                }
            }
        }
    }

    pub fn halfspaces(&self) -> &[HalfSpace] {
        &self.halfspaces
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn centroid(&self) -> Point {
        self.centroid
    }

    pub fn facet_halfspace(&self, facet: usize) -> &HalfSpace {
        &self.halfspaces[self.facets[facet].halfspace]
    }

    pub fn facet_polygon(&self, facet: usize) -> Polygon {
        Polygon::new(
            self.facets[facet]
                .ring
                .iter()
                .map(|&i| self.vertices[i])
                .collect(),
        )
    }

    /// True iff `p` violates no half-space by more than `EPS`.
    pub fn contains_point(&self, p: &Point) -> bool {
        self.halfspaces.iter().all(|h| h.outside_distance(p) <= EPS)
    }

    pub fn aabb(&self) -> BoundingBox {
        let mut min = self.vertices[0];
        let mut max = self.vertices[0];
        for v in &self.vertices[1..] {
            for i in 0..3 {
                min[i] = min[i].min(v[i]);
                max[i] = max[i].max(v[i]);
            }
        }
        BoundingBox { min, max }
    }

    /// Part of `polygon` inside the closed cell.
    pub fn clip_polygon(&self, polygon: &Polygon) -> Polygon {
        let mut out = polygon.clone();
        for h in &self.halfspaces {
            if out.points.len() < 3 {
                break;
            }
            out = out.clip(h);
        }
        out
    }

    /// Smallest extent of the cell measured against each of its facet planes.
    pub fn thickness(&self) -> f64 {
        self.facets
            .iter()
            .map(|f| {
                let h = &self.halfspaces[f.halfspace];
                self.vertices
                    .iter()
                    .map(|v| -h.outside_distance(v))
                    .fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn update_mass_properties(&mut self) {
        let (v, c) = mass_properties(&self.vertices, &self.facets);
        self.volume = v;
        self.centroid = c;
    }
}

fn classify(dist: &[f64]) -> Classification {
    let has_neg = dist.iter().any(|&d| d < -EPS);
    let has_pos = dist.iter().any(|&d| d > EPS);
    match (has_neg, has_pos) {
        (true, true) => Classification::Straddles,
        (_, false) => Classification::Below,
        (false, true) => Classification::Above,
    }
}

/// Builds a cell from raw facet rings: welds near-duplicate vertices, drops
/// degenerate rings, compacts vertices and unused half-spaces.
fn assemble(
    halfspaces: &[HalfSpace],
    verts: &[Point],
    facets: Vec<Facet>,
) -> Option<ConvexPolyhedron> {
    let mut welder = VertexWelder::new(EPS);
    let mut remap: HashMap<usize, usize> = HashMap::new();
    let mut out_facets = Vec::with_capacity(facets.len());
    for facet in facets {
        let mut ring: Vec<usize> = Vec::with_capacity(facet.ring.len());
        for &i in &facet.ring {
            let w = *remap.entry(i).or_insert_with(|| welder.insert(verts[i]));
            if ring.last() != Some(&w) {
                ring.push(w);
            }
        }
        while ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        if ring.len() < 3 {
            continue;
        }
        let pts: Vec<Point> = ring.iter().map(|&i| welder.points()[i]).collect();
        if 0.5 * super::newell_normal(&pts).norm() <= EPS_AREA {
            continue;
        }
        out_facets.push(Facet {
            halfspace: facet.halfspace,
            ring,
        });
    }
    if out_facets.len() < 4 {
        return None;
    }

    let points = welder.into_points();
    let mut vmap = vec![usize::MAX; points.len()];
    let mut vertices = Vec::new();
    let mut hmap: HashMap<usize, usize> = HashMap::new();
    let mut used_hs = Vec::new();
    for f in out_facets.iter_mut() {
        for i in f.ring.iter_mut() {
            if vmap[*i] == usize::MAX {
                vmap[*i] = vertices.len();
                vertices.push(points[*i]);
            }
            *i = vmap[*i];
        }
        let next = used_hs.len();
        let h = *hmap.entry(f.halfspace).or_insert_with(|| {
            used_hs.push(halfspaces[f.halfspace]);
            next
        });
        f.halfspace = h;
    }
    let (volume, centroid) = mass_properties(&vertices, &out_facets);
    if !(volume > 0.0) || !volume.is_finite() {
        return None;
    }
    Some(ConvexPolyhedron {
        halfspaces: used_hs,
        vertices,
        facets: out_facets,
        volume,
        centroid,
    })
}

fn mass_properties(vertices: &[Point], facets: &[Facet]) -> (f64, Point) {
    let r = vertices[0];
    let mut vol = 0.0;
    let mut moment = Vector::zeros();
    for f in facets {
        let p0 = vertices[f.ring[0]] - r;
        for w in f.ring[1..].windows(2) {
            let (p1, p2) = (vertices[w[0]] - r, vertices[w[1]] - r);
            let v = p0.dot(&p1.cross(&p2)) / 6.0;
            vol += v;
            moment += v * (p0 + p1 + p2) / 4.0;
        }
    }
    let centroid = if vol > 0.0 { r + moment / vol } else { r };
    (vol, centroid)
}

/// The polygon where the boundaries of `a` and `b` coincide with opposite
/// orientation, oriented counter-clockwise about `a`'s outward normal.
pub fn shared_facet(a: &ConvexPolyhedron, b: &ConvexPolyhedron) -> Option<Polygon> {
    if !a.aabb().overlaps(&b.aabb(), EPS) {
        return None;
    }
    for fa in 0..a.facets.len() {
        for fb in 0..b.facets.len() {
            if let Some(p) = facet_overlap(a, fa, b, fb) {
                return Some(p);
            }
        }
    }
    None
}

/// Overlap of facet `fa` of `a` with facet `fb` of `b` when they lie on the
/// same plane with opposite outward normals.
pub(crate) fn facet_overlap(
    a: &ConvexPolyhedron,
    fa: usize,
    b: &ConvexPolyhedron,
    fb: usize,
) -> Option<Polygon> {
    let ha = a.facet_halfspace(fa);
    let hb = b.facet_halfspace(fb);
    if !ha.plane.coincides(&hb.plane, EPS) || ha.outward_normal().dot(&hb.outward_normal()) >= 0.0 {
        return None;
    }
    let skip = b.facets[fb].halfspace;
    let mut poly = a.facet_polygon(fa);
    for (i, h) in b.halfspaces.iter().enumerate() {
        if i == skip {
            continue;
        }
        poly = poly.clip(h);
        if poly.points.len() < 3 {
            return None;
        }
    }
    (poly.area() > EPS_AREA).then_some(poly)
}

/// Merges points closer than `tol` using a uniform hash grid.
#[derive(Debug, Clone)]
pub struct VertexWelder {
    tol: f64,
    cell: f64,
    grid: HashMap<[i64; 3], Vec<usize>>,
    points: Vec<Point>,
}

impl VertexWelder {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            cell: (tol * 4.0).max(f64::MIN_POSITIVE),
            grid: HashMap::new(),
            points: Vec::new(),
        }
    }

    fn key(&self, p: &Point) -> [i64; 3] {
        [
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        ]
    }

    /// Index of an existing point within `tol`, or of `p` newly added.
    pub fn insert(&mut self, p: Point) -> usize {
        let k = self.key(&p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &i in ids {
                            if (self.points[i] - p).norm() <= self.tol {
                                return i;
                            }
                        }
                    }
                }
            }
        }
        self.points.push(p);
        let idx = self.points.len() - 1;
        self.grid.entry(k).or_default().push(idx);
        idx
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_cube() -> ConvexPolyhedron {
        ConvexPolyhedron::from_box(&BoundingBox::unit(), 0)
    }

    fn plane(n: [f64; 3], d: f64) -> Plane {
        Plane::new(Vector::new(n[0], n[1], n[2]), d).unwrap()
    }

    fn facet_normal_sum(p: &ConvexPolyhedron) -> Vector {
        (0..p.facets().len()).fold(Vector::zeros(), |acc, f| {
            acc + p.facet_polygon(f).area_vector()
        })
    }

    #[test]
    fn cube_from_box() {
        let c = unit_cube();
        assert_eq!(c.vertices().len(), 8);
        assert_eq!(c.facets().len(), 6);
        assert_relative_eq!(c.volume(), 1.0, epsilon = 1e-15);
        assert!((c.centroid() - Point::new(0.5, 0.5, 0.5)).norm() < 1e-15);
        for f in 0..6 {
            let n = c.facet_polygon(f).normal().unwrap();
            assert!((n - c.facet_halfspace(f).outward_normal()).norm() < 1e-12);
        }
    }

    #[test]
    fn cube_from_halfspaces() {
        let hs = BoundingBox::unit().halfspaces(0);
        let c = ConvexPolyhedron::from_halfspaces(&hs).unwrap();
        assert_eq!(c.vertices().len(), 8);
        assert_eq!(c.facets().len(), 6);
        assert_relative_eq!(c.volume(), 1.0, epsilon = 1e-9);
        assert!((c.centroid() - Point::new(0.5, 0.5, 0.5)).norm() < 1e-9);
    }

    #[test]
    fn standard_simplex_from_halfspaces() {
        let hs = [
            HalfSpace::from_inequality(-Vector::x(), 0.0, 0).unwrap(),
            HalfSpace::from_inequality(-Vector::y(), 0.0, 1).unwrap(),
            HalfSpace::from_inequality(-Vector::z(), 0.0, 2).unwrap(),
            HalfSpace::from_inequality(Vector::new(1.0, 1.0, 1.0), 1.0, 3).unwrap(),
        ];
        let t = ConvexPolyhedron::from_halfspaces(&hs).unwrap();
        assert_eq!(t.vertices().len(), 4);
        assert_relative_eq!(t.volume(), 1.0 / 6.0, epsilon = 1e-9);
    }

    #[test]
    fn unbounded_empty_degenerate() {
        let half = [HalfSpace::from_inequality(Vector::x(), 0.0, 0).unwrap()];
        assert_eq!(
            ConvexPolyhedron::from_halfspaces(&half),
            Err(GeometryError::Unbounded)
        );

        let mut hs = BoundingBox::unit().halfspaces(0).to_vec();
        hs.push(HalfSpace::from_inequality(-Vector::x(), -2.0, 6).unwrap()); // x ≥ 2
        assert_eq!(
            ConvexPolyhedron::from_halfspaces(&hs),
            Err(GeometryError::Empty)
        );

        let mut hs = BoundingBox::unit().halfspaces(0).to_vec();
        hs.push(HalfSpace::from_inequality(-Vector::x(), -1.0, 6).unwrap()); // x ≥ 1
        assert_eq!(
            ConvexPolyhedron::from_halfspaces(&hs),
            Err(GeometryError::Degenerate)
        );
    }

    #[test]
    fn clip_cube_in_half() {
        let (b, a) = unit_cube().clip(&plane([0.0, 0.0, 1.0], 0.5), 6);
        let (b, a) = (b.unwrap(), a.unwrap());
        assert_relative_eq!(b.volume(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(a.volume(), 0.5, epsilon = 1e-15);
        assert_eq!(b.vertices().len(), 8);
        assert!(b.centroid().z < 0.5 && a.centroid().z > 0.5);
    }

    #[test]
    fn clip_without_intersection() {
        let (b, a) = unit_cube().clip(&plane([0.0, 0.0, 1.0], 2.0), 6);
        assert_eq!(b.unwrap(), unit_cube());
        assert!(a.is_none());
        // touching a face is not a split either
        let (b, a) = unit_cube().clip(&plane([0.0, 0.0, 1.0], 1.0 + 0.5 * EPS), 6);
        assert!(b.is_some() && a.is_none());
    }

    #[test]
    fn clip_corner_tetrahedron() {
        let (b, a) = unit_cube().clip(&plane([1.0, 1.0, 1.0], 0.5 * 3f64.sqrt() / 3f64.sqrt()), 6);
        let b = b.unwrap();
        assert_eq!(b.vertices().len(), 4);
        assert_relative_eq!(b.volume(), 0.5f64.powi(3) / 6.0, epsilon = 1e-12);
        assert_relative_eq!(b.volume() + a.unwrap().volume(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn clip_through_vertices() {
        // the plane x = y contains four cube vertices
        let (b, a) = unit_cube().clip(&plane([1.0, -1.0, 0.0], 0.0), 6);
        let (b, a) = (b.unwrap(), a.unwrap());
        assert_eq!(b.vertices().len(), 6);
        assert_eq!(a.vertices().len(), 6);
        assert_relative_eq!(b.volume(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn shared_facet_of_halves() {
        let (b, a) = unit_cube().clip(&plane([0.0, 0.0, 1.0], 0.5), 6);
        let (b, a) = (b.unwrap(), a.unwrap());
        let s = shared_facet(&b, &a).unwrap();
        assert_relative_eq!(s.area(), 1.0, epsilon = 1e-12);
        assert!(s.points.iter().all(|p| (p.z - 0.5).abs() < 1e-12));
        assert!((s.normal().unwrap() - Vector::z()).norm() < 1e-12);
        let back = shared_facet(&a, &b).unwrap();
        assert!((back.normal().unwrap() + Vector::z()).norm() < 1e-12);
    }

    #[test]
    fn cubes_touching_along_an_edge_share_nothing() {
        let c1 = unit_cube();
        let c2 = ConvexPolyhedron::from_box(
            &BoundingBox::new(Point::new(1.0, 1.0, 0.0), Point::new(2.0, 2.0, 1.0)).unwrap(),
            0,
        );
        assert!(shared_facet(&c1, &c2).is_none());
    }

    #[test]
    fn contains_point_basic() {
        let c = unit_cube();
        assert!(c.contains_point(&Point::new(0.5, 0.5, 0.5)));
        assert!(!c.contains_point(&Point::new(1.5, 0.0, 0.0)));
    }

    fn random_polyhedron(rng: &mut ChaCha8Rng, cuts: usize) -> ConvexPolyhedron {
        let mut p = unit_cube();
        for id in 0..cuts {
            let n = Vector::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let c = p.centroid();
            let pl = Plane::through_point(
                n,
                &(c + Vector::new(0.1, -0.05, 0.07) * rng.random_range(-1.0..1.0)),
            )
            .unwrap();
            let (b, a) = p.clip(&pl, 6 + id);
            p = if rng.random_bool(0.5) {
                b.or(a).unwrap()
            } else {
                a.or(b).unwrap()
            };
        }
        p
    }

    #[test]
    fn clip_conserves_volume_and_closes_facets() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let p = random_polyhedron(&mut rng, 4);
            assert!(facet_normal_sum(&p).norm() < 1e-9);
            let n = Vector::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let pl = Plane::through_point(n, &p.centroid()).unwrap();
            let (b, a) = p.clip(&pl, 99);
            let total =
                b.as_ref().map_or(0.0, |x| x.volume()) + a.as_ref().map_or(0.0, |x| x.volume());
            assert!(
                (total - p.volume()).abs() <= 1e-9 * p.volume(),
                "{total} vs {}",
                p.volume()
            );
            for piece in [b, a].into_iter().flatten() {
                assert!(facet_normal_sum(&piece).norm() < 1e-9);
                for v in piece.vertices() {
                    assert!(piece.contains_point(v));
                }
            }
        }
    }

    #[test]
    fn halfspace_round_trip_reproduces_vertices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = random_polyhedron(&mut rng, 3);
            let q = ConvexPolyhedron::from_halfspaces(p.halfspaces()).unwrap();
            assert_eq!(p.vertices().len(), q.vertices().len());
            for v in p.vertices() {
                let best = q
                    .vertices()
                    .iter()
                    .map(|w| (w - v).norm())
                    .fold(f64::INFINITY, f64::min);
                assert!(best < 1e-8, "{best}");
            }
        }
    }

    #[test]
    fn tangent_planes_of_sphere_monte_carlo() {
        // Oracle: rejection-sampled volume in the bounding box, 10^6 samples.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = 0.3;
        let c = Point::new(0.5, 0.5, 0.5);
        let mut hs = Vec::new();
        // 20 directions: dodecahedron-like spread via a golden spiral
        for i in 0..20 {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / 20.0;
            let phi = i as f64 * std::f64::consts::PI * (3.0 - 5f64.sqrt());
            let s = (1.0 - z * z).sqrt();
            let n = Vector::new(s * phi.cos(), s * phi.sin(), z);
            hs.push(HalfSpace::from_inequality(n, n.dot(&c.coords) + r, i).unwrap());
        }
        let p = ConvexPolyhedron::from_halfspaces(&hs).unwrap();
        assert!(p.volume() >= 4.0 / 3.0 * std::f64::consts::PI * r.powi(3));
        let bb = p.aabb();
        let samples = 1_000_000;
        let mut hits = 0usize;
        let mut mean = Vector::zeros();
        for _ in 0..samples {
            let q = Point::new(
                rng.random_range(bb.min.x..bb.max.x),
                rng.random_range(bb.min.y..bb.max.y),
                rng.random_range(bb.min.z..bb.max.z),
            );
            if p.contains_point(&q) {
                hits += 1;
                mean += q.coords;
            }
        }
        let frac = hits as f64 / samples as f64;
        let est = frac * bb.volume();
        let se = (frac * (1.0 - frac) / samples as f64).sqrt() * bb.volume();
        assert!(
            (est - p.volume()).abs() < 3.0 * se,
            "{est} vs {} (se {se})",
            p.volume()
        );
        let mc_centroid = mean / hits as f64;
        assert!((mc_centroid - p.centroid().coords).norm() < 2e-3);
    }

    #[test]
    fn welder_merges_within_tolerance() {
        let mut w = VertexWelder::new(1e-9);
        let a = w.insert(Point::new(0.1, 0.2, 0.3));
        let b = w.insert(Point::new(0.1 + 5e-10, 0.2, 0.3));
        let c = w.insert(Point::new(0.1 + 5e-9, 0.2, 0.3));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
