//! End-to-end checks across generation, training, reconstruction and scoring.

use polyocc::data::{
    generate_dataset, generate_sample, parity_vote, read_dataset, write_dataset, DataError,
    DatasetConfig, RECORDS_FILE,
};
use polyocc::eval::{evaluate, evaluate_oracle, hausdorff, rmse, EvalOptions};
use polyocc::model::{init_params, EncoderKind, ModelConfig};
use polyocc::nn::AdamConfig;
use polyocc::reconstruct::{extract_surface, interior_volume};
use polyocc::train::{train, PointSampling, TrainConfig, TrainOptions, TrainedModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(count: usize, seed: u64) -> DatasetConfig {
    DatasetConfig {
        count,
        seed,
        max_points: Some(400),
        ..Default::default()
    }
}

#[test]
fn dataset_survives_disk_and_rejects_damage() {
    let ds = generate_dataset(&small(6, 21)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = write_dataset(dir.path(), &ds).unwrap();
    assert_ne!(written.records_crc32, 0);
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.manifest, written);
    assert_eq!(back.samples, ds.samples);

    let rec = dir.path().join(RECORDS_FILE);
    let bytes = std::fs::read(&rec).unwrap();
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    std::fs::write(&rec, &flipped).unwrap();
    assert!(matches!(
        read_dataset(dir.path()),
        Err(DataError::CorruptRecord { .. })
    ));
    std::fs::write(&rec, &bytes[..bytes.len() - 7]).unwrap();
    assert!(read_dataset(dir.path()).is_err());
}

#[test]
fn oracle_volume_agrees_with_monte_carlo() {
    let cfg = small(1, 22);
    for id in 0..8 {
        let s = generate_sample(id, &cfg).unwrap();
        let mesh = extract_surface(&s.complex, &s.labels).unwrap();
        let exact = interior_volume(&s.complex, &s.labels);
        assert!((mesh.volume() - exact).abs() <= 1e-9);

        let tris = s.mesh.triangles();
        let b = s.mesh.bbox().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(id);
        let n = 4000;
        let inside = (0..n)
            .filter(|_| {
                let p = polyocc::geometry::Point::new(
                    rng.random_range(b.min.x..b.max.x),
                    rng.random_range(b.min.y..b.max.y),
                    rng.random_range(b.min.z..b.max.z),
                );
                parity_vote(&p, &tris).0
            })
            .count();
        let box_vol = (b.max - b.min).iter().product::<f64>();
        let f = inside as f64 / n as f64;
        let sigma = box_vol * (f * (1.0 - f) / n as f64).sqrt();
        assert!(
            (f * box_vol - exact).abs() <= 4.0 * sigma + 1e-9,
            "building {id}: {} vs {exact}",
            f * box_vol
        );
    }
}

#[test]
fn scan_noise_shows_up_as_rmse() {
    let s = generate_sample(
        3,
        &DatasetConfig {
            count: 4,
            seed: 23,
            max_points: None,
            ..Default::default()
        },
    )
    .unwrap();
    // default scan noise is 0.01 per axis; occlusion and cropping only remove points
    let r = rmse(&s.points, &s.mesh).unwrap();
    assert!((0.004..0.02).contains(&r), "rmse {r}");
}

fn tiny(encoder: EncoderKind, epochs: usize) -> TrainConfig {
    let model = ModelConfig {
        point_layers: vec![16],
        knn: 4,
        latent_dim: 8,
        triplane_res: 8,
        unet_depth: 1,
        unet_width: 8,
        fusion_widths: vec![32],
        tag_layers: 1,
        tag_width: 32,
        head_widths: vec![32],
        ..ModelConfig::desk(encoder)
    };
    TrainConfig {
        epochs,
        batch_size: 1,
        sub_batch: 1,
        points: PointSampling {
            count: 128,
            ..Default::default()
        },
        adam: AdamConfig {
            lr: 5e-3,
            ..Default::default()
        },
        ..TrainConfig::desk(model)
    }
}

#[test]
fn a_single_building_can_be_memorized() {
    let s = generate_sample(0, &small(1, 24)).unwrap();
    let out = train(
        &tiny(EncoderKind::Plain, 60),
        &[&s],
        &[],
        &TrainOptions::default(),
    )
    .unwrap();
    let first = out.history.first().unwrap().train_loss;
    let last = out.history.last().unwrap();
    assert!(
        last.train_loss < 0.5 * first,
        "{first} -> {}",
        last.train_loss
    );
    let p = &out.last.predict(&[&s]).unwrap()[0];
    let right = p
        .labels
        .iter()
        .zip(&s.labels)
        .filter(|(a, b)| a == b)
        .count();
    assert!(
        right as f64 >= 0.95 * s.labels.len() as f64,
        "{right}/{}",
        s.labels.len()
    );
}

#[test]
fn all_exterior_predictions_are_unsolvable() {
    let ds = generate_dataset(&small(4, 25)).unwrap();
    let samples: Vec<_> = ds.samples.iter().collect();
    let cfg = tiny(EncoderKind::Conv, 1);
    let mut store = init_params::<f32>(&cfg.model, 1).unwrap();
    // zero output layer and a strongly negative interior bias
    store
        .get_mut("head.out.w")
        .unwrap()
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = 0.0);
    let b = store.get_mut("head.out.b").unwrap().data_mut();
    b[0] = 5.0;
    b[1] = -5.0;
    let model = TrainedModel { config: cfg, store };
    model.check().unwrap();
    let opts = EvalOptions {
        samples: 300,
        ..Default::default()
    };
    let report = evaluate(
        &samples,
        &|s| Ok(model.predict(&[s])?.remove(0).labels),
        &opts,
    )
    .unwrap();
    assert_eq!(report.success_rate, 0.0);
    assert_eq!(report.mean_h_rel, 100.0);
    assert!(report.buildings.iter().all(|m| m.n_faces == 0));

    let oracle = evaluate_oracle(&samples, &opts).unwrap();
    assert_eq!(oracle.success_rate, 100.0);
    assert_eq!(oracle.cell_accuracy, 100.0);
}

#[test]
fn hausdorff_estimate_is_stable_under_refinement() {
    let s = generate_sample(1, &small(2, 26)).unwrap();
    let mut labels = s.labels.clone();
    // drop one interior cell so the surfaces differ
    let i = labels.iter().position(|&l| l == 1).unwrap();
    labels[i] = 0;
    let Ok(mesh) = extract_surface(&s.complex, &labels) else {
        return;
    };
    let coarse = hausdorff(&mesh, &s.mesh, 10_000, 3).unwrap();
    let fine = hausdorff(&mesh, &s.mesh, 80_000, 3).unwrap();
    assert!(coarse > 0.0);
    assert!((coarse - fine).abs() <= 0.05 * fine, "{coarse} vs {fine}");
}
