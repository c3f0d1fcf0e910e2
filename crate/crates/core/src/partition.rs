//! Adaptive binary space partitioning of a bounding box by planar primitives.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    facet_overlap, BoundingBox, ConvexPolyhedron, PlanarPrimitive, Plane, Point, Side, EPS,
    EPS_AREA,
};

/// Box margin as a fraction of the largest side of the input box.
pub const BOX_MARGIN: f64 = 0.05;
/// Relative inflation of a primitive's support hull for the split test.
pub const SUPPORT_INFLATION: f64 = 0.02;
pub const DEFAULT_MAX_CELLS: usize = 4096;
/// Number of bounding-box planes; primitive planes are numbered after them.
pub const BOX_PLANES: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("no primitives to partition with")]
    NoPrimitives,
    #[error("bounding box is degenerate, no cells can be formed")]
    NoCells,
    #[error("cell count exceeded the cap of {cap}")]
    TooManyCells { cap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub margin: f64,
    pub support_inflation: f64,
    pub max_cells: usize,
    /// Split only the cells crossed by a primitive's bounded support.
    pub adaptive: bool,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            margin: BOX_MARGIN,
            support_inflation: SUPPORT_INFLATION,
            max_cells: DEFAULT_MAX_CELLS,
            adaptive: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BspNode {
    Split {
        plane_id: usize,
        iteration: usize,
        below: usize,
        above: usize,
    },
    Leaf {
        cell: usize,
    },
}

/// Binary tree recorded during partitioning; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BspTree {
    pub nodes: Vec<BspNode>,
}

impl BspTree {
    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, BspNode::Leaf { .. }))
            .count()
    }

    /// Half-space chain `(plane_id, side)` from the root to each cell's leaf.
    pub fn chains(&self) -> HashMap<usize, Vec<(usize, Side)>> {
        let mut out = HashMap::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((node, chain)) = stack.pop() {
            match self.nodes[node] {
                BspNode::Leaf { cell } => {
                    out.insert(cell, chain);
                }
                BspNode::Split {
                    plane_id,
                    below,
                    above,
                    ..
                } => {
                    let mut b = chain.clone();
                    b.push((plane_id, Side::Below));
                    let mut a = chain;
                    a.push((plane_id, Side::Above));
                    stack.push((below, b));
                    stack.push((above, a));
                }
            }
        }
        out
    }
}

/// Cells, BSP tree and inter-cell adjacency of one building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellComplex {
    pub bbox: BoundingBox,
    /// Plane table; ids `0..6` are the box planes.
    pub planes: Vec<Plane>,
    pub cells: Vec<ConvexPolyhedron>,
    pub tree: BspTree,
    pub adjacency: Vec<(usize, usize)>,
    pub primitive_order: Vec<usize>,
}

impl CellComplex {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Descends the tree to the leaf whose chain contains `p`.
    pub fn locate(&self, p: &Point) -> usize {
        let mut node = 0;
        loop {
            match self.tree.nodes[node] {
                BspNode::Leaf { cell } => return cell,
                BspNode::Split {
                    plane_id,
                    below,
                    above,
                    ..
                } => {
                    node = if self.planes[plane_id].signed_distance(p) <= 0.0 {
                        below
                    } else {
                        above
                    };
                }
            }
        }
    }

    pub fn is_box_plane(&self, plane_id: usize) -> bool {
        plane_id < BOX_PLANES
    }
}

/// Vertical primitives first, each group by descending area; stable.
pub fn prioritize(primitives: &[PlanarPrimitive]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..primitives.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&primitives[a], &primitives[b]);
        pb.vertical
            .cmp(&pa.vertical)
            .then(pb.area.total_cmp(&pa.area))
    });
    order
}

/// Partitions `bbox` (inflated by `cfg.margin` of its largest side) with the
/// primitives in priority order.
pub fn build_cell_complex(
    primitives: &[PlanarPrimitive],
    bbox: &BoundingBox,
    cfg: &PartitionConfig,
) -> Result<CellComplex, PartitionError> {
    if primitives.is_empty() {
        return Err(PartitionError::NoPrimitives);
    }
    let inflated = bbox.inflate(cfg.margin * bbox.largest_side());
    let inflated =
        BoundingBox::new(inflated.min, inflated.max).map_err(|_| PartitionError::NoCells)?;
    if !(inflated.volume() > 0.0) {
        return Err(PartitionError::NoCells);
    }

    let mut planes: Vec<Plane> = inflated.halfspaces(0).iter().map(|h| h.plane).collect();
    let mut nodes = vec![BspNode::Leaf { cell: 0 }];
    let mut leaves: Vec<(usize, ConvexPolyhedron)> =
        vec![(0, ConvexPolyhedron::from_box(&inflated, 0))];
    let order = prioritize(primitives);

    for (iteration, &pi) in order.iter().enumerate() {
        let prim = &primitives[pi];
        let plane_id = match planes.iter().position(|p| p.coincides(&prim.plane, EPS)) {
            Some(id) => id,
            None => {
                planes.push(prim.plane);
                planes.len() - 1
            }
        };
        let plane = planes[plane_id];
        let support = prim.support_polygon(cfg.support_inflation);
        let mut next = Vec::with_capacity(leaves.len() + 8);
        for (node, cell) in leaves {
            if cfg.adaptive
                && (support.points.len() < 3 || cell.clip_polygon(&support).area() <= EPS_AREA)
            {
                next.push((node, cell));
                continue;
            }
            match cell.clip(&plane, plane_id) {
                (Some(b), Some(a)) => {
                    let nb = nodes.len();
                    nodes.push(BspNode::Leaf { cell: usize::MAX });
                    nodes.push(BspNode::Leaf { cell: usize::MAX });
                    nodes[node] = BspNode::Split {
                        plane_id,
                        iteration,
                        below: nb,
                        above: nb + 1,
                    };
                    next.push((nb, b));
                    next.push((nb + 1, a));
                }
                (b, a) => next.push((node, b.or(a).expect("clip keeps the cell on one side"))),
            }
        }
        leaves = next;
        if leaves.len() > cfg.max_cells {
            return Err(PartitionError::TooManyCells { cap: cfg.max_cells });
        }
    }

    // Number cells in depth-first order, below before above.
    let mut by_node: HashMap<usize, ConvexPolyhedron> = leaves.into_iter().collect();
    let mut cells = Vec::with_capacity(by_node.len());
    let mut stack = vec![0usize];
    while let Some(node) = stack.pop() {
        match nodes[node] {
            BspNode::Leaf { .. } => {
                nodes[node] = BspNode::Leaf { cell: cells.len() };
                cells.push(by_node.remove(&node).expect("leaf has a cell"));
            }
            BspNode::Split { below, above, .. } => {
                stack.push(above);
                stack.push(below);
            }
        }
    }
    let adjacency = adjacency(&cells);
    Ok(CellComplex {
        bbox: inflated,
        planes,
        cells,
        tree: BspTree { nodes },
        adjacency,
        primitive_order: order,
    })
}

/// Undirected edges `(i, j)`, `i < j`, between cells sharing a facet of
/// positive area. Only facets on the same plane id are compared, which gives
/// the same result as testing all pairs for cells of one complex.
pub fn adjacency(cells: &[ConvexPolyhedron]) -> Vec<(usize, usize)> {
    type Slot = (usize, usize);
    let mut by_plane: HashMap<usize, (Vec<Slot>, Vec<Slot>)> = HashMap::new();
    for (c, cell) in cells.iter().enumerate() {
        for f in 0..cell.facets().len() {
            let hs = cell.facet_halfspace(f);
            if hs.plane_id < BOX_PLANES {
                continue;
            }
            let entry = by_plane.entry(hs.plane_id).or_default();
            match hs.side {
                Side::Below => entry.0.push((c, f)),
                Side::Above => entry.1.push((c, f)),
            }
        }
    }
    let boxes: Vec<BoundingBox> = cells.iter().map(|c| c.aabb()).collect();
    let mut edges = Vec::new();
    for (below, above) in by_plane.values() {
        for &(ca, fa) in below {
            for &(cb, fb) in above {
                if ca == cb || !boxes[ca].overlaps(&boxes[cb], EPS) {
                    continue;
                }
                if facet_overlap(&cells[ca], fa, &cells[cb], fb).is_some() {
                    edges.push((ca.min(cb), ca.max(cb)));
                }
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}
