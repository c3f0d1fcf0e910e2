//! The occupancy network: point-cloud encoder, query fusion, graph
//! convolution over cell adjacency, and the per-cell head.

mod batch;
mod layers;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{collate, Batch, GraphSample};
use layers::{avg_pool_matrix, conv3x3, conv3x3_index, knn_within, linear, mlp, upsample_index};

use crate::nn::{push_bilinear, Graph, NnError, ParameterStore, Scalar, SparseMatrix, Tensor, Var};

/// Extent of the triplane feature grids in normalized coordinates. Cells
/// live in the inflated bounding box, so the grids reach past the unit cube.
pub const TRIPLANE_LO: f64 = -0.1;
pub const TRIPLANE_HI: f64 = 1.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("building {building} has {points} points, the encoder needs at least {needed}")]
    TooFewPoints {
        building: usize,
        points: usize,
        needed: usize,
    },
    #[error("cells carry different query counts: expected {expected}, found {found}")]
    MixedK { expected: usize, found: usize },
    #[error("query of cell {cell} lies outside the feature grid domain")]
    QueryOutOfRange { cell: usize },
    #[error("invalid model configuration: {0}")]
    ConfigInvalid(String),
    #[error("batch contains no cells")]
    EmptyBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Plain,
    Conv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Two logits, softmax.
    Classification,
    /// One value regressed onto the label with squared error.
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Focal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    /// Queries per cell.
    pub k: usize,
    /// Widths of the point-feature layers (edge convolutions or local PointNet).
    pub point_layers: Vec<usize>,
    /// Neighbourhood size of the point kNN graph.
    pub knn: usize,
    /// Width of the shape latent code (per plane for the conv encoder).
    pub latent_dim: usize,
    pub triplane_res: usize,
    pub unet_depth: usize,
    /// Channels of the first U-Net level; doubled per level.
    pub unet_width: usize,
    /// Hidden widths of the query fusion MLP.
    pub fusion_widths: Vec<usize>,
    pub tag_layers: usize,
    pub tag_hops: usize,
    pub tag_width: usize,
    /// Hidden widths of the head before its output layer.
    pub head_widths: Vec<usize>,
    pub use_adjacency: bool,
    pub head: HeadKind,
    pub loss: LossKind,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::conv()
    }
}

impl ModelConfig {
    /// Full-size triplane configuration.
    pub fn conv() -> Self {
        Self {
            encoder: EncoderKind::Conv,
            k: 16,
            point_layers: vec![64, 64, 64],
            knn: 20,
            latent_dim: 32,
            triplane_res: 32,
            unet_depth: 2,
            unet_width: 32,
            fusion_widths: vec![256, 256, 256],
            tag_layers: 2,
            tag_hops: 3,
            tag_width: 256,
            head_widths: vec![256, 256],
            use_adjacency: true,
            head: HeadKind::Classification,
            loss: LossKind::CrossEntropy,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
        }
    }

    /// Full-size global-vector configuration.
    pub fn plain() -> Self {
        Self {
            encoder: EncoderKind::Plain,
            latent_dim: 256,
            ..Self::conv()
        }
    }

    /// Reduced widths that train in minutes on one CPU core.
    pub fn desk(encoder: EncoderKind) -> Self {
        Self {
            encoder,
            k: 16,
            point_layers: vec![32, 32],
            knn: 8,
            latent_dim: match encoder {
                EncoderKind::Plain => 64,
                EncoderKind::Conv => 16,
            },
            triplane_res: 16,
            unet_depth: 2,
            unet_width: 8,
            fusion_widths: vec![64, 64],
            tag_layers: 2,
            tag_hops: 3,
            tag_width: 64,
            head_widths: vec![64],
            ..Self::conv()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::ConfigInvalid(m.to_string()));
        if self.k == 0 || self.knn == 0 || self.latent_dim == 0 || self.tag_width == 0 {
            return bad("k, knn, latent_dim and tag_width must be at least 1");
        }
        if self.point_layers.is_empty() || self.point_layers.contains(&0) {
            return bad("point_layers needs at least one non-zero width");
        }
        if self.fusion_widths.is_empty()
            || self.fusion_widths.contains(&0)
            || self.head_widths.contains(&0)
        {
            return bad("fusion needs at least one layer and all widths must be non-zero");
        }
        if self.tag_layers == 0 {
            return bad("tag_layers must be at least 1");
        }
        if self.encoder == EncoderKind::Conv {
            if self.unet_width == 0 || self.triplane_res < 2 {
                return bad("unet_width must be non-zero and triplane_res at least 2");
            }
            if self.triplane_res % (1 << self.unet_depth) != 0 {
                return bad("triplane_res must be divisible by 2^unet_depth");
            }
        }
        if !(self.focal_gamma >= 0.0 && self.focal_alpha > 0.0) {
            return bad("focal_gamma must be ≥ 0 and focal_alpha > 0");
        }
        Ok(())
    }

    fn unet_channels(&self, level: usize) -> usize {
        self.unet_width << level
    }

    /// Every linear layer as `(name, fan_in, fan_out)`, in initialization order.
    pub fn layer_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut add = |name: String, i: usize, o: usize| out.push((name, i, o));
        let mut prev = 3;
        match self.encoder {
            EncoderKind::Plain => {
                for (l, &w) in self.point_layers.iter().enumerate() {
                    add(format!("enc.edge{l}"), 3 * prev, w);
                    prev = w;
                }
                let cat: usize = self.point_layers.iter().sum();
                add("enc.gamma0".into(), cat, self.latent_dim);
                add("enc.gamma1".into(), self.latent_dim, self.latent_dim);
            }
            EncoderKind::Conv => {
                for (l, &w) in self.point_layers.iter().enumerate() {
                    add(format!("enc.point{l}"), prev + 3, w);
                    prev = w;
                }
                add("enc.proj".into(), prev, self.latent_dim);
                add(
                    "unet.down0".into(),
                    9 * self.latent_dim,
                    self.unet_channels(0),
                );
                for l in 1..=self.unet_depth {
                    add(
                        format!("unet.down{l}"),
                        9 * self.unet_channels(l - 1),
                        self.unet_channels(l),
                    );
                }
                for l in (0..self.unet_depth).rev() {
                    add(
                        format!("unet.up{l}"),
                        9 * (self.unet_channels(l + 1) + self.unet_channels(l)),
                        self.unet_channels(l),
                    );
                }
                add("unet.out".into(), self.unet_channels(0), self.latent_dim);
            }
        }
        let mut prev = match self.encoder {
            EncoderKind::Plain => 3 * self.k + self.latent_dim,
            EncoderKind::Conv => self.latent_dim,
        };
        for (i, &w) in self.fusion_widths.iter().enumerate() {
            add(format!("fuse{i}"), prev, w);
            prev = w;
        }
        for l in 0..self.tag_layers {
            add(
                format!("tag{l}"),
                (self.tag_hops + 1) * prev,
                self.tag_width,
            );
            prev = self.tag_width;
        }
        for (i, &w) in self.head_widths.iter().enumerate() {
            add(format!("head{i}"), prev, w);
            prev = w;
        }
        let outputs = match self.head {
            HeadKind::Classification => 2,
            HeadKind::Regression => 1,
        };
        add("head.out".into(), prev, outputs);
        out
    }
}

/// Fresh parameters for `cfg`, deterministic in `seed`.
pub fn init_params<T: Scalar>(
    cfg: &ModelConfig,
    seed: u64,
) -> Result<ParameterStore<T>, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    for (name, i, o) in cfg.layer_shapes() {
        store.init_linear(&name, i, o, &mut rng);
    }
    Ok(store)
}

/// Per-building latent code: `[buildings, D_z]` for the plain encoder, or
/// `[buildings·3·R·R, D_z]` stacked XY, XZ, YZ grids for the conv encoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeLatentCode {
    Plain(Var),
    Conv(Var),
}

impl ShapeLatentCode {
    pub fn var(&self) -> Var {
        match *self {
            ShapeLatentCode::Plain(v) | ShapeLatentCode::Conv(v) => v,
        }
    }
}

/// Nodes of interest from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub latent: ShapeLatentCode,
    /// Per-cell features after fusion, before graph convolution.
    pub fused: Var,
    /// Per-cell features after graph convolution.
    pub node: Var,
    /// Logits `[cells, 2]` or regression output `[cells, 1]`.
    pub output: Var,
    /// Interior probability per cell.
    pub interior: Vec<f64>,
}

fn check_points(batch: &Batch, needed: usize) -> Result<(), ModelError> {
    for b in 0..batch.buildings() {
        let points = batch.point_offsets[b + 1] - batch.point_offsets[b];
        if points < needed {
            return Err(ModelError::TooFewPoints {
                building: b,
                points,
                needed,
            });
        }
    }
    Ok(())
}

fn points_tensor<T: Scalar>(batch: &Batch) -> Tensor<T> {
    let flat: Vec<f64> = batch.points.iter().flatten().copied().collect();
    Tensor::from_f64(batch.points.len(), 3, &flat).expect("sized")
}

/// Dynamic edge convolutions, global max pool, then γ.
pub fn encode_plain<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    batch: &Batch,
) -> Result<ShapeLatentCode, ModelError> {
    check_points(batch, cfg.knn)?;
    let n = batch.points.len();
    let mut feat = g.constant(points_tensor(batch));
    let mut layers = Vec::with_capacity(cfg.point_layers.len());
    let centers: Arc<[usize]> = (0..n)
        .flat_map(|i| std::iter::repeat_n(i, cfg.knn))
        .collect();
    for l in 0..cfg.point_layers.len() {
        let (_, c) = g.shape(feat);
        let nbrs: Arc<[usize]> =
            knn_within(g.value(feat).data(), c, &batch.point_offsets, cfg.knn).into();
        let xi = g.gather(feat, centers.clone())?;
        let xj = g.gather(feat, nbrs)?;
        let e = g.sub(xj, xi)?;
        let input = g.concat_cols(&[xi, xj, e])?;
        let h = linear(g, store, &format!("enc.edge{l}"), input)?;
        let h = g.relu(h);
        let summed = g.scatter_add(h, &centers, n)?;
        // mean over the fixed-size neighbourhood (a constant rescaling of the sum)
        feat = g.scale(summed, 1.0 / cfg.knn as f64);
        layers.push(feat);
    }
    let cat = g.concat_cols(&layers)?;
    let pooled = g.segmented_max(cat, &batch.point_to_building, batch.buildings())?;
    let h = linear(g, store, "enc.gamma0", pooled)?;
    let h = g.relu(h);
    let z = linear(g, store, "enc.gamma1", h)?;
    Ok(ShapeLatentCode::Plain(z))
}

/// Pixel of `u` on a `res`-wide grid over the triplane domain.
fn grid_cell(u: f64, res: usize) -> usize {
    let f = (u - TRIPLANE_LO) / (TRIPLANE_HI - TRIPLANE_LO) * res as f64;
    (f.floor().max(0.0) as usize).min(res - 1)
}

/// Coordinate pairs of the XY, XZ and YZ planes.
const PLANE_AXES: [[usize; 2]; 3] = [[0, 1], [0, 2], [1, 2]];

/// Scatter-mean of per-point features onto the three planes of every
/// building: rows `(b·3 + plane)·R² + y·R + x`.
pub fn projection_matrix<T: Scalar>(batch: &Batch, res: usize) -> SparseMatrix<T> {
    let rr = res * res;
    let rows = batch.buildings() * 3 * rr;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); rows];
    for (i, p) in batch.points.iter().enumerate() {
        let b = batch.point_to_building[i];
        for (plane, axes) in PLANE_AXES.iter().enumerate() {
            let row = (b * 3 + plane) * rr
                + grid_cell(p[axes[1]], res) * res
                + grid_cell(p[axes[0]], res);
            members[row].push(i);
        }
    }
    let mut s = SparseMatrix::new(batch.points.len());
    for m in members {
        let w = T::of(1.0 / m.len().max(1) as f64);
        for i in m {
            s.push(i, w);
        }
        s.finish_row();
    }
    s
}

/// Local PointNet with neighbourhood max pooling, triplane projection, and a
/// U-Net shared across the three planes.
pub fn encode_conv<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    batch: &Batch,
) -> Result<ShapeLatentCode, ModelError> {
    let planes = project_features(g, store, cfg, batch)?;
    let z = unet(g, store, cfg, planes, batch.buildings() * 3)?;
    Ok(ShapeLatentCode::Conv(z))
}

/// Per-point features projected onto the planes, before the U-Net.
pub fn project_features<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    batch: &Batch,
) -> Result<Var, ModelError> {
    check_points(batch, cfg.knn)?;
    let n = batch.points.len();
    let pts = points_tensor::<T>(batch);
    let nbrs: Arc<[usize]> = knn_within(pts.data(), 3, &batch.point_offsets, cfg.knn).into();
    let centers: Vec<usize> = (0..n)
        .flat_map(|i| std::iter::repeat_n(i, cfg.knn))
        .collect();
    let offsets: Vec<f64> = nbrs
        .iter()
        .zip(&centers)
        .flat_map(|(&j, &i)| (0..3).map(move |a| (j, i, a)))
        .map(|(j, i, a)| batch.points[j][a] - batch.points[i][a])
        .collect();
    let offsets = g.constant(Tensor::from_f64(n * cfg.knn, 3, &offsets)?);
    let mut feat = g.constant(pts);
    for l in 0..cfg.point_layers.len() {
        let xj = g.gather(feat, nbrs.clone())?;
        let input = g.concat_cols(&[xj, offsets])?;
        let h = linear(g, store, &format!("enc.point{l}"), input)?;
        let h = g.relu(h);
        feat = g.segmented_max(h, &centers, n)?;
    }
    let feat = linear(g, store, "enc.proj", feat)?;
    let proj = projection_matrix::<T>(batch, cfg.triplane_res);
    Ok(g.weighted_gather(feat, Arc::new(proj))?)
}

fn unet<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    x: Var,
    images: usize,
) -> Result<Var, ModelError> {
    let mut res = cfg.triplane_res;
    let mut skips = Vec::with_capacity(cfg.unet_depth + 1);
    let mut h = conv3x3(g, store, "unet.down0", x, &conv3x3_index(images, res))?;
    for l in 1..=cfg.unet_depth {
        skips.push((h, res));
        let pooled = g.weighted_gather(h, avg_pool_matrix(images, res))?;
        res /= 2;
        h = conv3x3(
            g,
            store,
            &format!("unet.down{l}"),
            pooled,
            &conv3x3_index(images, res),
        )?;
    }
    for l in (0..cfg.unet_depth).rev() {
        let (skip, fine) = skips.pop().expect("one skip per level");
        let up = g.gather(h, upsample_index(images, fine))?;
        let cat = g.concat_cols(&[up, skip])?;
        h = conv3x3(
            g,
            store,
            &format!("unet.up{l}"),
            cat,
            &conv3x3_index(images, fine),
        )?;
    }
    Ok(linear(g, store, "unet.out", h)?)
}

/// Plain fusion: ξ over `[s₁ … s_k, z_b]` per cell.
pub fn fuse_plain<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    batch: &Batch,
    z: Var,
) -> Result<Var, ModelError> {
    let (zb, dz) = g.shape(z);
    if zb != batch.buildings() || 3 * batch.k + dz != 3 * cfg.k + cfg.latent_dim {
        return Err(NnError::ShapeMismatch {
            op: "fuse_plain",
            detail: format!("latent [{zb},{dz}] with k={}", batch.k),
        }
        .into());
    }
    let flat: Vec<f64> = batch.queries.iter().flatten().copied().collect();
    let q = g.constant(Tensor::from_f64(batch.cells(), 3 * batch.k, &flat)?);
    let zc = g.gather(z, batch.cell_to_building.clone())?;
    let input = g.concat_cols(&[q, zc])?;
    Ok(mlp(g, store, "fuse", cfg.fusion_widths.len(), input)?)
}

/// Triplane fusion: per query, the sum of bilinear lookups on the three
/// planes, then ξ, then max over the cell's queries.
pub fn fuse_conv<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    batch: &Batch,
    z: Var,
) -> Result<Var, ModelError> {
    let s = triplane_lookup_matrix::<T>(batch, cfg.triplane_res)?;
    let feats = g.weighted_gather(z, Arc::new(s))?;
    let h = mlp(g, store, "fuse", cfg.fusion_widths.len(), feats)?;
    Ok(g.segmented_max(h, &batch.query_to_cell, batch.cells())?)
}

/// Rows: queries; twelve taps each (four per plane).
pub fn triplane_lookup_matrix<T: Scalar>(
    batch: &Batch,
    res: usize,
) -> Result<SparseMatrix<T>, ModelError> {
    let rr = res * res;
    let mut s = SparseMatrix::new(batch.buildings() * 3 * rr);
    let tol = 1e-9;
    for (qi, q) in batch.queries.iter().enumerate() {
        let cell = batch.query_to_cell[qi];
        if q.iter()
            .any(|&u| !(TRIPLANE_LO - tol..=TRIPLANE_HI + tol).contains(&u))
        {
            return Err(ModelError::QueryOutOfRange { cell });
        }
        let b = batch.cell_to_building[cell];
        for (plane, axes) in PLANE_AXES.iter().enumerate() {
            push_bilinear(
                &mut s,
                &[q[axes[0]], q[axes[1]]],
                res,
                TRIPLANE_LO,
                TRIPLANE_HI,
                (b * 3 + plane) * rr,
            );
        }
        s.finish_row();
    }
    Ok(s)
}

/// Symmetrically normalized adjacency `D^{-1/2} A D^{-1/2}` with `d = max(d, 1)`.
pub fn normalized_adjacency<T: Scalar>(cells: usize, edges: &[(usize, usize)]) -> SparseMatrix<T> {
    let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); cells];
    for &(i, j) in edges {
        if i != j {
            nbrs[i].push(j);
            nbrs[j].push(i);
        }
    }
    for n in nbrs.iter_mut() {
        n.sort_unstable();
        n.dedup();
    }
    let deg: Vec<f64> = nbrs.iter().map(|n| n.len().max(1) as f64).collect();
    let mut s = SparseMatrix::new(cells);
    for (i, n) in nbrs.iter().enumerate() {
        for &j in n {
            s.push(j, T::of(1.0 / (deg[i] * deg[j]).sqrt()));
        }
        s.finish_row();
    }
    s
}

/// Stacked topology-adaptive layers: `relu([H, ÂH, …, Â^K H] · W + b)`.
pub fn tag_conv<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    x: Var,
    adjacency: &Arc<SparseMatrix<T>>,
) -> Result<Var, ModelError> {
    let (cells, _) = g.shape(x);
    if adjacency.nrows() != cells || adjacency.ncols != cells {
        return Err(NnError::ShapeMismatch {
            op: "tag_conv",
            detail: format!("{} nodes vs adjacency {}", cells, adjacency.nrows()),
        }
        .into());
    }
    let mut h = x;
    for l in 0..cfg.tag_layers {
        let mut hops = vec![h];
        for _ in 0..cfg.tag_hops {
            let next = g.weighted_gather(*hops.last().expect("non-empty"), adjacency.clone())?;
            hops.push(next);
        }
        let cat = g.concat_cols(&hops)?;
        let y = linear(g, store, &format!("tag{l}"), cat)?;
        h = g.relu(y);
    }
    Ok(h)
}

/// Head λ: hidden layers then the output layer.
pub fn classify<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    x: Var,
) -> Result<(Var, Vec<f64>), ModelError> {
    let h = mlp(g, store, "head", cfg.head_widths.len(), x)?;
    let out = linear(g, store, "head.out", h)?;
    let interior = match cfg.head {
        HeadKind::Classification => {
            let p = g.softmax(out)?;
            g.value(p).to_f64().chunks(2).map(|r| r[1]).collect()
        }
        HeadKind::Regression => g
            .value(out)
            .to_f64()
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect(),
    };
    Ok((out, interior))
}

pub fn forward<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    batch: &Batch,
) -> Result<ForwardOutput, ModelError> {
    cfg.validate()?;
    if batch.cells() == 0 {
        return Err(ModelError::EmptyBatch);
    }
    if batch.k != cfg.k {
        return Err(ModelError::MixedK {
            expected: cfg.k,
            found: batch.k,
        });
    }
    let (latent, fused) = match cfg.encoder {
        EncoderKind::Plain => {
            let z = encode_plain(g, store, cfg, batch)?;
            (z, fuse_plain(g, store, cfg, batch, z.var())?)
        }
        EncoderKind::Conv => {
            let z = encode_conv(g, store, cfg, batch)?;
            (z, fuse_conv(g, store, cfg, batch, z.var())?)
        }
    };
    let edges: &[(usize, usize)] = if cfg.use_adjacency { &batch.edges } else { &[] };
    let adjacency = Arc::new(normalized_adjacency::<T>(batch.cells(), edges));
    let node = tag_conv(g, store, cfg, fused, &adjacency)?;
    let (output, interior) = classify(g, store, cfg, node)?;
    g.check()?;
    Ok(ForwardOutput {
        latent,
        fused,
        node,
        output,
        interior,
    })
}

/// Training loss of a forward pass against 0/1 labels.
pub fn loss<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    out: &ForwardOutput,
    labels: &[u8],
) -> Result<Var, ModelError> {
    let classes: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let v = match (cfg.head, cfg.loss) {
        (HeadKind::Regression, _) => {
            let t: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
            g.mse(out.output, &t)?
        }
        (HeadKind::Classification, LossKind::CrossEntropy) => {
            g.cross_entropy(out.output, &classes)?
        }
        (HeadKind::Classification, LossKind::Focal) => {
            let p = g.softmax(out.output)?;
            g.focal_loss(p, &classes, cfg.focal_gamma, cfg.focal_alpha)?
        }
    };
    Ok(v)
}

/// Interior iff the probability is strictly above one half.
pub fn labels_from_probabilities(p: &[f64]) -> Vec<u8> {
    p.iter().map(|&x| u8::from(x > 0.5)).collect()
}

/// Interior probabilities for every cell of the batch.
pub fn predict<T: Scalar>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    batch: &Batch,
) -> Result<Vec<f64>, ModelError> {
    let mut g = Graph::new();
    Ok(forward(&mut g, store, cfg, batch)?.interior)
}

#[cfg(test)]
mod tests;
