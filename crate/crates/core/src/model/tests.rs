use rand::{Rng, SeedableRng};

use super::*;

fn tiny(encoder: EncoderKind) -> ModelConfig {
    ModelConfig {
        encoder,
        k: 3,
        point_layers: vec![5, 4],
        knn: 3,
        latent_dim: 4,
        triplane_res: 4,
        unet_depth: 1,
        unet_width: 3,
        fusion_widths: vec![6],
        tag_layers: 1,
        tag_hops: 2,
        tag_width: 5,
        head_widths: vec![4],
        ..ModelConfig::conv()
    }
}

fn random_sample(rng: &mut ChaCha8Rng, cells: usize, k: usize, points: usize) -> GraphSample {
    let mut p = || {
        [
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
        ]
    };
    let pts = (0..points).map(|_| p()).collect();
    let queries = (0..cells).map(|_| (0..k).map(|_| p()).collect()).collect();
    let mut edges = Vec::new();
    for i in 0..cells {
        for j in i + 1..cells {
            if (i * 31 + j * 17) % 3 == 0 {
                edges.push((i, j));
            }
        }
    }
    GraphSample {
        points: pts,
        queries,
        edges,
        labels: (0..cells).map(|c| (c % 2) as u8).collect(),
    }
}

fn run<T: Scalar>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    samples: &[GraphSample],
) -> Vec<f64> {
    predict(store, cfg, &collate(samples).unwrap()).unwrap()
}

#[test]
fn default_shapes_follow_configuration() {
    let plain = ModelConfig::plain();
    let shapes = plain.layer_shapes();
    let fuse0 = shapes.iter().find(|s| s.0 == "fuse0").unwrap();
    assert_eq!(fuse0.1, 48 + 256);
    let conv = ModelConfig::conv();
    assert!(conv.validate().is_ok());
    assert_eq!(
        conv.layer_shapes().last().unwrap(),
        &("head.out".to_string(), 256, 2)
    );
    let bad = ModelConfig {
        triplane_res: 30,
        ..ModelConfig::conv()
    };
    assert!(matches!(bad.validate(), Err(ModelError::ConfigInvalid(_))));
}

#[test]
fn plain_latent_has_one_row_per_building() {
    let cfg = ModelConfig::plain();
    let store = init_params::<f32>(&cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = random_sample(&mut rng, 2, 16, 4096);
    let batch = collate(&[s]).unwrap();
    let mut g = Graph::new();
    let z = encode_plain(&mut g, &store, &cfg, &batch).unwrap();
    assert_eq!(g.shape(z.var()), (1, 256));
}

#[test]
fn identical_clouds_give_identical_codes() {
    for enc in [EncoderKind::Plain, EncoderKind::Conv] {
        let cfg = tiny(enc);
        let store = init_params::<f32>(&cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_sample(&mut rng, 2, 3, 20);
        let batch = collate(&[s.clone(), s]).unwrap();
        let mut g = Graph::new();
        let z = match enc {
            EncoderKind::Plain => encode_plain(&mut g, &store, &cfg, &batch).unwrap(),
            EncoderKind::Conv => encode_conv(&mut g, &store, &cfg, &batch).unwrap(),
        };
        let v = g.value(z.var());
        let half = v.len() / 2;
        assert_eq!(&v.data()[..half], &v.data()[half..]);
    }
}

#[test]
fn point_order_does_not_change_latent_codes() {
    for enc in [EncoderKind::Plain, EncoderKind::Conv] {
        let cfg = tiny(enc);
        let store = init_params::<f64>(&cfg, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_sample(&mut rng, 2, 3, 30);
        let mut p = s.clone();
        p.points.reverse();
        p.points.swap(3, 17);
        let code = |s: &GraphSample| {
            let batch = collate(std::slice::from_ref(s)).unwrap();
            let mut g = Graph::new();
            let z = match enc {
                EncoderKind::Plain => encode_plain(&mut g, &store, &cfg, &batch).unwrap(),
                EncoderKind::Conv => encode_conv(&mut g, &store, &cfg, &batch).unwrap(),
            };
            g.value(z.var()).to_f64()
        };
        let (a, b) = (code(&s), code(&p));
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-5));
    }
}

#[test]
fn centre_point_lands_in_one_pixel_per_plane() {
    let batch = collate(&[GraphSample {
        points: vec![[0.5, 0.5, 0.5]],
        queries: vec![vec![[0.5; 3]]],
        edges: vec![],
        labels: vec![],
    }])
    .unwrap();
    let proj = projection_matrix::<f64>(&batch, 32);
    assert_eq!(proj.nrows(), 3 * 32 * 32);
    let occupied = (0..proj.nrows())
        .filter(|&r| proj.row(r).count() > 0)
        .count();
    assert_eq!(occupied, 3);
}

#[test]
fn xy_plane_ignores_height() {
    let cfg = tiny(EncoderKind::Conv);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = random_sample(&mut rng, 1, 3, 12);
    let mut flipped = s.clone();
    flipped.points.iter_mut().for_each(|p| p[2] = 1.0 - p[2]);
    let a = projection_matrix::<f64>(&collate(&[s]).unwrap(), cfg.triplane_res);
    let b = projection_matrix::<f64>(&collate(&[flipped]).unwrap(), cfg.triplane_res);
    let rr = cfg.triplane_res * cfg.triplane_res;
    for r in 0..rr {
        assert_eq!(a.row(r).collect::<Vec<_>>(), b.row(r).collect::<Vec<_>>());
    }
}

#[test]
fn conv_latent_shape_at_defaults() {
    let cfg = ModelConfig::conv();
    let store = init_params::<f32>(&cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let batch = collate(&[random_sample(&mut rng, 1, 16, 64)]).unwrap();
    let mut g = Graph::new();
    let z = encode_conv(&mut g, &store, &cfg, &batch).unwrap();
    assert_eq!(g.shape(z.var()), (3 * 32 * 32, 32));
}

#[test]
fn triplane_lookup_sums_planes_and_hits_nodes() {
    let res = 4;
    let node = |i: usize| TRIPLANE_LO + (i as f64 + 0.5) * (TRIPLANE_HI - TRIPLANE_LO) / res as f64;
    let q = [node(1), node(2), node(3)];
    let batch = collate(&[GraphSample {
        points: vec![[0.5; 3]],
        queries: vec![vec![q]],
        edges: vec![],
        labels: vec![],
    }])
    .unwrap();
    let s = triplane_lookup_matrix::<f64>(&batch, res).unwrap();
    let mut g = Graph::<f64>::new();
    // constant grid → 3c
    let c = g.constant(Tensor::matrix(3 * res * res, 1, vec![0.25; 3 * res * res]).unwrap());
    let out = g.weighted_gather(c, Arc::new(s.clone())).unwrap();
    assert_eq!(g.value(out).data(), &[0.75]);
    // node hits: each plane contributes exactly its node value
    let grid: Vec<f64> = (0..3 * res * res).map(|i| i as f64).collect();
    let gv = g.constant(Tensor::matrix(3 * res * res, 1, grid).unwrap());
    let out = g.weighted_gather(gv, Arc::new(s)).unwrap();
    let rr = res * res;
    let expect = (2 * res + 1) + (rr + 3 * res + 1) + (2 * rr + 3 * res + 2);
    assert_eq!(g.value(out).data(), &[expect as f64]);

    let outside = collate(&[GraphSample {
        points: vec![[0.5; 3]],
        queries: vec![vec![[0.5, 1.5, 0.5]]],
        edges: vec![],
        labels: vec![],
    }])
    .unwrap();
    assert_eq!(
        triplane_lookup_matrix::<f64>(&outside, res),
        Err(ModelError::QueryOutOfRange { cell: 0 })
    );
}

fn tag_output(
    cfg: &ModelConfig,
    store: &ParameterStore<f64>,
    x: &Tensor<f64>,
    edges: &[(usize, usize)],
) -> Tensor<f64> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let adj = Arc::new(normalized_adjacency(x.rows(), edges));
    let y = tag_conv(&mut g, store, cfg, xv, &adj).unwrap();
    g.value(y).clone()
}

#[test]
fn tag_conv_locality_and_equivariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 7;
    let width = tiny(EncoderKind::Conv).fusion_widths[0];
    let x = Tensor::matrix(
        n,
        width,
        (0..n * width)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap();
    let edges = vec![(0, 1), (1, 2), (2, 3), (4, 5), (0, 3), (5, 6)];

    // K = 0: a per-node map, edges irrelevant
    let cfg0 = ModelConfig {
        tag_hops: 0,
        ..tiny(EncoderKind::Conv)
    };
    let store0 = init_params::<f64>(&cfg0, 1).unwrap();
    assert_eq!(
        tag_output(&cfg0, &store0, &x, &edges),
        tag_output(&cfg0, &store0, &x, &[])
    );

    let cfg = tiny(EncoderKind::Conv);
    let store = init_params::<f64>(&cfg, 1).unwrap();
    // no edges: changing other rows leaves a row untouched
    let base = tag_output(&cfg, &store, &x, &[]);
    let mut y = x.clone();
    y.data_mut()[width..].iter_mut().for_each(|v| *v *= -2.0);
    assert_eq!(base.row(0), tag_output(&cfg, &store, &y, &[]).row(0));

    // node permutation permutes rows
    let perm = [3usize, 6, 0, 5, 1, 2, 4];
    let mut px = Tensor::<f64>::zeros(vec![n, width]);
    for (i, &p) in perm.iter().enumerate() {
        px.data_mut()[p * width..(p + 1) * width].copy_from_slice(x.row(i));
    }
    let pedges: Vec<_> = edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
    let out = tag_output(&cfg, &store, &x, &edges);
    let pout = tag_output(&cfg, &store, &px, &pedges);
    for (i, &p) in perm.iter().enumerate() {
        for (a, b) in out.row(i).iter().zip(pout.row(p)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn zero_head_is_undecided_and_resolves_to_exterior() {
    let cfg = tiny(EncoderKind::Conv);
    let mut store = init_params::<f64>(&cfg, 2).unwrap();
    for name in ["head.out.w", "head.out.b"] {
        store
            .get_mut(name)
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = run(&store, &cfg, &[random_sample(&mut rng, 5, 3, 10)]);
    assert!(p.iter().all(|&x| x == 0.5));
    assert!(labels_from_probabilities(&p).iter().all(|&l| l == 0));
}

#[test]
fn batched_and_single_inference_agree() {
    for enc in [EncoderKind::Plain, EncoderKind::Conv] {
        let cfg = tiny(enc);
        let store = init_params::<f32>(&cfg, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<_> = [3, 5, 2, 7]
            .iter()
            .map(|&c| random_sample(&mut rng, c, 3, 15 + c))
            .collect();
        let batched = run(&store, &cfg, &samples);
        let single: Vec<f64> = samples
            .iter()
            .flat_map(|s| run(&store, &cfg, std::slice::from_ref(s)))
            .collect();
        assert_eq!(batched.len(), single.len());
        assert!(batched
            .iter()
            .zip(&single)
            .all(|(a, b)| (a - b).abs() <= 1e-6));
        let sum: f64 = batched.iter().map(|p| p + (1.0 - p)).sum();
        assert!((sum - batched.len() as f64).abs() < 1e-9);
    }
}

#[test]
fn mismatched_k_and_sparse_clouds_are_rejected() {
    let cfg = tiny(EncoderKind::Conv);
    let store = init_params::<f64>(&cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let batch = collate(&[random_sample(&mut rng, 2, 4, 10)]).unwrap();
    assert!(matches!(
        predict(&store, &cfg, &batch),
        Err(ModelError::MixedK { .. })
    ));
    let batch = collate(&[random_sample(&mut rng, 2, 3, 2)]).unwrap();
    assert!(matches!(
        predict(&store, &cfg, &batch),
        Err(ModelError::TooFewPoints { .. })
    ));
}

#[test]
fn single_isolated_cell_is_valid() {
    let cfg = tiny(EncoderKind::Plain);
    let store = init_params::<f64>(&cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let p = run(&store, &cfg, &[random_sample(&mut rng, 1, 3, 8)]);
    assert_eq!(p.len(), 1);
    assert!(p[0].is_finite());
}

/// Analytic parameter gradients of the full model vs. central differences.
pub(crate) fn end_to_end_gradient_error(enc: EncoderKind, loss_kind: LossKind) -> f64 {
    let cfg = ModelConfig {
        loss: loss_kind,
        ..tiny(enc)
    };
    let mut store = init_params::<f64>(&cfg, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    // zero biases put empty-pixel activations exactly on the ReLU kink
    let names: Vec<String> = store
        .names()
        .filter(|n| n.ends_with(".b"))
        .map(str::to_string)
        .collect();
    for n in names {
        store
            .get_mut(&n)
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-0.1..0.1));
    }
    let mut s = random_sample(&mut rng, 2, 3, 9);
    s.edges = vec![(0, 1)];
    s.labels = vec![1, 0];
    let batch = collate(&[s]).unwrap();
    crate::nn::gradcheck::parameter_gradient_error(&store, |g, store| {
        let out = forward(g, store, &cfg, &batch).unwrap();
        loss(g, &cfg, &out, &batch.labels).unwrap()
    })
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for enc in [EncoderKind::Plain, EncoderKind::Conv] {
        for loss_kind in [LossKind::CrossEntropy, LossKind::Focal] {
            let err = end_to_end_gradient_error(enc, loss_kind);
            assert!(err < 1e-3, "{enc:?}/{loss_kind:?}: {err}");
        }
    }
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = ModelConfig::desk(EncoderKind::Plain);
    let text = toml::to_string(&cfg).unwrap();
    assert_eq!(toml::from_str::<ModelConfig>(&text).unwrap(), cfg);
    let partial: ModelConfig = toml::from_str("encoder = \"plain\"\nk = 8").unwrap();
    assert_eq!(partial.k, 8);
    assert_eq!(partial.encoder, EncoderKind::Plain);
}
