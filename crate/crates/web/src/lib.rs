//! Browser demo over the core pipeline. [`Scene`] holds the logic and is
//! plain Rust so it can be tested natively; [`Demo`] is the wasm wrapper
//! whose methods return JSON strings.

use polyocc::data::{generate_sample, BuildingSample, DatasetConfig};
use polyocc::eval::{classification_accuracy, hausdorff};
use polyocc::mesh::Mesh;
use polyocc::reconstruct::{extract_surface, interior_volume};
use polyocc::sampling::{sample_complex, SamplingStrategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Surface samples per mesh for the demo's Hausdorff distance.
const DEMO_SAMPLES: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshView {
    pub vertices: Vec<[f64; 3]>,
    /// Polygon outlines as vertex index pairs.
    pub edges: Vec<[usize; 2]>,
}

impl MeshView {
    fn of(mesh: &Mesh) -> Self {
        let mut edges: Vec<[usize; 2]> = mesh
            .faces
            .iter()
            .flat_map(|f| {
                (0..f.len()).map(move |i| {
                    let (a, b) = (f[i], f[(i + 1) % f.len()]);
                    [a.min(b), a.max(b)]
                })
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        Self {
            vertices: mesh.vertices.iter().map(|&p| p.into()).collect(),
            edges,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SceneView {
    pub id: u64,
    pub cells: usize,
    pub interior_cells: usize,
    pub points: Vec<[f64; 3]>,
    pub truth: MeshView,
    pub metres_per_unit: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryView {
    pub k: usize,
    pub strategy: SamplingStrategy,
    pub interior: Vec<[f64; 3]>,
    pub exterior: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconstructionView {
    pub flipped: usize,
    pub accuracy: f64,
    pub solvable: bool,
    /// Closed and manifold.
    pub watertight: bool,
    /// No boundary edges. Arbitrary labels can leave cells touching along
    /// an edge only, which stays closed but is not manifold.
    pub closed: bool,
    pub nonmanifold_edges: usize,
    pub faces: usize,
    pub volume: f64,
    pub interior_volume: f64,
    /// Hausdorff distance over the largest side of the true box, in percent.
    pub h_rel: f64,
    pub mesh: Option<MeshView>,
}

/// One generated building and its complex.
pub struct Scene {
    sample: BuildingSample,
}

impl Scene {
    pub fn generate(seed: u64, max_points: usize) -> Result<Self, String> {
        let cfg = DatasetConfig {
            seed,
            count: 1,
            max_points: Some(max_points.max(1)),
            ..Default::default()
        };
        let sample = generate_sample(0, &cfg).map_err(|e| e.to_string())?;
        Ok(Self { sample })
    }

    pub fn sample(&self) -> &BuildingSample {
        &self.sample
    }

    pub fn view(&self) -> SceneView {
        let s = &self.sample;
        SceneView {
            id: s.id,
            cells: s.complex.len(),
            interior_cells: s.labels.iter().filter(|&&l| l == 1).count(),
            points: s.points.iter().map(|&p| p.into()).collect(),
            truth: MeshView::of(&s.mesh),
            metres_per_unit: 1.0 / s.normalization.scale,
        }
    }

    /// Draws `k` queries per cell with `strategy`.
    pub fn queries(&self, k: usize, strategy: &str, seed: u64) -> Result<QueryView, String> {
        let strategy: SamplingStrategy = strategy.parse()?;
        let sets =
            sample_complex(&self.sample.complex, k, strategy, seed).map_err(|e| e.to_string())?;
        let (mut interior, mut exterior) = (Vec::new(), Vec::new());
        for q in &sets {
            let dst = if self.sample.labels[q.cell] == 1 {
                &mut interior
            } else {
                &mut exterior
            };
            dst.extend(q.points.iter().map(|&p| <[f64; 3]>::from(p)));
        }
        Ok(QueryView {
            k,
            strategy,
            interior,
            exterior,
        })
    }

    /// Reconstructs from the true labels with a share `flip` of them
    /// inverted, as a stand-in for classifier errors.
    pub fn reconstruct(&self, flip: f64, seed: u64) -> Result<ReconstructionView, String> {
        if !(0.0..=1.0).contains(&flip) {
            return Err(format!("flip share {flip} must lie in [0, 1]"));
        }
        let s = &self.sample;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels = s.labels.clone();
        let mut flipped = 0;
        for l in labels.iter_mut() {
            if rng.random::<f64>() < flip {
                *l = 1 - *l;
                flipped += 1;
            }
        }
        let accuracy = classification_accuracy(&labels, &s.labels).map_err(|e| e.to_string())?;
        let interior = interior_volume(&s.complex, &labels);
        let side = s.mesh.bbox().map_or(1.0, |b| b.largest_side());
        Ok(match extract_surface(&s.complex, &labels) {
            Ok(mesh) => {
                let report = mesh.watertight_check();
                let h = hausdorff(&mesh, &s.mesh, DEMO_SAMPLES, seed).map_err(|e| e.to_string())?;
                ReconstructionView {
                    flipped,
                    accuracy,
                    solvable: true,
                    watertight: report.watertight,
                    closed: report.boundary_edges.is_empty(),
                    nonmanifold_edges: report.nonmanifold_edges.len(),
                    faces: mesh.face_count(),
                    volume: mesh.volume(),
                    interior_volume: interior,
                    h_rel: 100.0 * h / side,
                    mesh: Some(MeshView::of(&mesh)),
                }
            }
            Err(_) => ReconstructionView {
                flipped,
                accuracy,
                solvable: false,
                watertight: false,
                closed: false,
                nonmanifold_edges: 0,
                faces: 0,
                volume: 0.0,
                interior_volume: interior,
                h_rel: 100.0,
                mesh: None,
            },
        })
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("views serialize")
}

#[wasm_bindgen]
pub struct Demo {
    scene: Scene,
}

#[wasm_bindgen]
impl Demo {
    /// Generates the building for `seed` with at most `max_points` scan points.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, max_points: u32) -> Result<Demo, JsError> {
        Scene::generate(seed as u64, max_points as usize)
            .map(|scene| Demo { scene })
            .map_err(|e| JsError::new(&e))
    }

    pub fn scene(&self) -> String {
        to_json(&self.scene.view())
    }

    pub fn queries(&self, k: u32, strategy: &str, seed: u32) -> Result<String, JsError> {
        self.scene
            .queries(k as usize, strategy, seed as u64)
            .map(|v| to_json(&v))
            .map_err(|e| JsError::new(&e))
    }

    pub fn reconstruct(&self, flip: f64, seed: u32) -> Result<String, JsError> {
        self.scene
            .reconstruct(flip, seed as u64)
            .map(|v| to_json(&v))
            .map_err(|e| JsError::new(&e))
    }
}
