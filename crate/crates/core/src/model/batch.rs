use serde::{Deserialize, Serialize};

use super::ModelError;

/// What the network sees of one building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSample {
    pub points: Vec<[f64; 3]>,
    /// `k` query points per cell.
    pub queries: Vec<Vec<[f64; 3]>>,
    /// Undirected cell adjacency with local cell ids.
    pub edges: Vec<(usize, usize)>,
    /// 1 = interior, 0 = exterior; may be empty at inference time.
    pub labels: Vec<u8>,
}

impl GraphSample {
    pub fn cells(&self) -> usize {
        self.queries.len()
    }
}

/// Several buildings concatenated, with index vectors back to their owners.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub k: usize,
    pub points: Vec<[f64; 3]>,
    pub point_to_building: Vec<usize>,
    pub queries: Vec<[f64; 3]>,
    pub query_to_cell: Vec<usize>,
    pub cell_to_building: Vec<usize>,
    /// Edges in batch-global cell ids.
    pub edges: Vec<(usize, usize)>,
    /// `edges[edge_offsets[b]..edge_offsets[b + 1]]` belong to building `b`.
    pub edge_offsets: Vec<usize>,
    pub point_offsets: Vec<usize>,
    pub cell_offsets: Vec<usize>,
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn buildings(&self) -> usize {
        self.cell_offsets.len().saturating_sub(1)
    }

    pub fn cells(&self) -> usize {
        self.cell_to_building.len()
    }

    pub fn has_labels(&self) -> bool {
        !self.labels.is_empty() && self.labels.len() == self.cells()
    }

    /// Inverse of [`collate`].
    pub fn split(&self) -> Vec<GraphSample> {
        (0..self.buildings())
            .map(|b| {
                let (c0, c1) = (self.cell_offsets[b], self.cell_offsets[b + 1]);
                let labels = if self.has_labels() {
                    self.labels[c0..c1].to_vec()
                } else {
                    Vec::new()
                };
                GraphSample {
                    points: self.points[self.point_offsets[b]..self.point_offsets[b + 1]].to_vec(),
                    queries: (c0..c1)
                        .map(|c| self.queries[c * self.k..(c + 1) * self.k].to_vec())
                        .collect(),
                    edges: self.edges[self.edge_offsets[b]..self.edge_offsets[b + 1]]
                        .iter()
                        .map(|&(i, j)| (i - c0, j - c0))
                        .collect(),
                    labels,
                }
            })
            .collect()
    }
}

/// Concatenates buildings into one batch; every cell must carry the same
/// number of queries.
pub fn collate(samples: &[GraphSample]) -> Result<Batch, ModelError> {
    let k = samples
        .iter()
        .flat_map(|s| s.queries.first())
        .map(Vec::len)
        .next()
        .ok_or(ModelError::EmptyBatch)?;
    let mut batch = Batch {
        k,
        point_offsets: vec![0],
        cell_offsets: vec![0],
        edge_offsets: vec![0],
        ..Default::default()
    };
    let labelled = samples.iter().all(|s| s.labels.len() == s.cells());
    for (b, s) in samples.iter().enumerate() {
        let c0 = batch.cell_to_building.len();
        batch.points.extend_from_slice(&s.points);
        batch
            .point_to_building
            .extend(std::iter::repeat_n(b, s.points.len()));
        for (c, q) in s.queries.iter().enumerate() {
            if q.len() != k {
                return Err(ModelError::MixedK {
                    expected: k,
                    found: q.len(),
                });
            }
            batch.queries.extend_from_slice(q);
            batch.query_to_cell.extend(std::iter::repeat_n(c0 + c, k));
            batch.cell_to_building.push(b);
        }
        for &(i, j) in &s.edges {
            if i >= s.cells() || j >= s.cells() {
                return Err(ModelError::ConfigInvalid(format!(
                    "edge ({i}, {j}) out of range in building {b}"
                )));
            }
            batch.edges.push((c0 + i, c0 + j));
        }
        if labelled {
            batch.labels.extend_from_slice(&s.labels);
        }
        batch.point_offsets.push(batch.points.len());
        batch.cell_offsets.push(batch.cell_to_building.len());
        batch.edge_offsets.push(batch.edges.len());
    }
    Ok(batch)
}
