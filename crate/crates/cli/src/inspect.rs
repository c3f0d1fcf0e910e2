//! `inspect`: identify an artifact, summarize it and print its CRC32.

use std::fs::{self, File};
use std::io::{BufReader, Read};
use std::path::Path;

use polyocc::data::io::{load_points, read_complex, read_primitives, read_queries};
use polyocc::data::RECORDS_FILE;
use polyocc::geometry::BoundingBox;
use polyocc::mesh::Mesh;
use polyocc::nn::{read_checkpoint, TensorPayload, CHECKPOINT_MAGIC};
use polyocc::train::TrainConfig;
use serde_json::{json, Value};

use crate::commands::describe_dataset;
use crate::error::CliError;

pub const FORMATS: &str = "\
Artifact formats (all little-endian, all versioned where they carry structure)

dataset directory
  manifest.json   format_version, count, config (generator, scan, partition,
                  k, strategy), splits {train,val,test} of building ids,
                  total_cells, exterior_fraction, records_crc32
  records.bin     count x [u32 len][u32 crc32 of body][bincode body], one
                  building per record: id, seed, mesh, points, primitives,
                  cell complex, queries, labels, normalization

checkpoint (.pgnn)
  \"PGNN\" | u32 version | u32 count | count x tensor
  tensor = u16 name_len | name | u8 dtype (0 f32, 1 f64) | u8 rank |
           u32 dims[rank] | payload
  Run directories hold config.toml (the training config), log.jsonl (one
  epoch record per line), epoch_NNNN.pgnn and best.pgnn.

point clouds
  .xyz and anything else   text, one \"x y z\" per line, '#' comments
  .bin / .f32              raw float32 triplets, no header

primitives JSON   [{\"normal\": [x,y,z], \"offset\": d, \"inliers\": [[x,y,z], ...]}]
                  plane: normal . p = offset
complex JSON      {\"format_version\": 1, \"complex\": {bbox, planes, cells,
                  tree, adjacency, primitive_order}}
queries JSON      {\"format_version\": 1, \"k\", \"strategy\", \"seed\",
                  \"queries\": [{\"cell\", \"strategy\", \"points\"}]}
predictions JSON  {\"buildings\": [{\"id\", \"probabilities\", \"labels\"}]}
mesh              Wavefront OBJ, v and f records, 1-based, counter-clockwise
                  seen from outside
report            JSON (aggregates plus per-building rows) and optional CSV
                  (one row per building)
config            TOML with optional [dataset], [train] and [eval] tables
";

fn crc_of(path: &Path) -> Result<u32, CliError> {
    let mut f = BufReader::new(File::open(path).map_err(|e| CliError::input(path.display(), e))?);
    let mut h = crc32fast::Hasher::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f
            .read(&mut buf)
            .map_err(|e| CliError::input(path.display(), e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize())
}

fn bbox_json(b: Option<BoundingBox>) -> Value {
    b.map_or(
        Value::Null,
        |b| json!({ "min": [b.min.x, b.min.y, b.min.z], "max": [b.max.x, b.max.y, b.max.z] }),
    )
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

fn describe_json(path: &Path) -> Result<Value, CliError> {
    let raw = fs::read(path).map_err(|e| CliError::input(path.display(), e))?;
    let value: Value =
        serde_json::from_slice(&raw).map_err(|e| CliError::input(path.display(), e))?;
    let bad = |e: polyocc::data::DataError| CliError::input(path.display(), e);
    if value.get("complex").is_some() {
        let c = read_complex(raw.as_slice()).map_err(bad)?;
        let verts: usize = c.cells.iter().map(|p| p.vertices().len()).sum();
        return Ok(
            json!({ "kind": "complex", "cells": c.len(), "planes": c.planes.len(),
            "adjacent_pairs": c.adjacency.len(), "cell_vertices": verts, "bbox": bbox_json(Some(c.bbox)) }),
        );
    }
    if value.get("queries").is_some() {
        let q = read_queries(raw.as_slice()).map_err(bad)?;
        return Ok(
            json!({ "kind": "queries", "cells": q.queries.len(), "k": q.k, "strategy": q.strategy, "seed": q.seed }),
        );
    }
    if let Some(b) = value.get("buildings").and_then(Value::as_array) {
        if value.get("success_rate").is_some() {
            let keys = [
                "success_rate",
                "cell_accuracy",
                "mean_h_rel",
                "mean_h_abs_m",
                "mean_faces",
            ];
            let mut out = json!({ "kind": "report", "buildings": b.len() });
            for k in keys {
                out[k] = value[k].clone();
            }
            return Ok(out);
        }
        let cells: usize = b
            .iter()
            .filter_map(|x| x["labels"].as_array())
            .map(Vec::len)
            .sum();
        return Ok(json!({ "kind": "predictions", "buildings": b.len(), "cells": cells }));
    }
    if value.is_array() {
        if value
            .as_array()
            .is_some_and(|a| a.iter().all(Value::is_u64))
        {
            let a = value.as_array().expect("checked");
            let interior = a.iter().filter(|v| v.as_u64() == Some(1)).count();
            return Ok(json!({ "kind": "labels", "cells": a.len(), "interior": interior }));
        }
        let prims = read_primitives(raw.as_slice()).map_err(bad)?;
        let inliers: usize = prims.iter().map(|p| p.inliers.len()).sum();
        let vertical = prims.iter().filter(|p| p.vertical).count();
        return Ok(
            json!({ "kind": "primitives", "primitives": prims.len(), "vertical": vertical, "inliers": inliers }),
        );
    }
    Err(CliError::BadInput(format!(
        "{}: unrecognized JSON artifact",
        path.display()
    )))
}

fn describe_checkpoint(path: &Path) -> Result<Value, CliError> {
    let f = BufReader::new(File::open(path).map_err(|e| CliError::input(path.display(), e))?);
    let tensors = read_checkpoint(f).map_err(|e| CliError::input(path.display(), e))?;
    let params: usize = tensors
        .iter()
        .filter(|t| !t.name.starts_with("adam.") && !t.name.starts_with("train."))
        .map(|t| t.payload.len())
        .sum();
    let epoch = tensors
        .iter()
        .find(|t| t.name == "train.epoch")
        .and_then(|t| match &t.payload {
            TensorPayload::F64(v) => v.first().copied(),
            TensorPayload::F32(v) => v.first().map(|&x| x as f64),
        });
    let listing: Vec<Value> = tensors
        .iter()
        .map(|t| json!({ "name": t.name, "shape": t.shape, "dtype": if t.payload.dtype() == 0 { "f32" } else { "f64" } }))
        .collect();
    Ok(
        json!({ "kind": "checkpoint", "tensors": tensors.len(), "parameters": params, "epoch": epoch, "listing": listing }),
    )
}

fn describe(path: &Path) -> Result<Value, CliError> {
    if path.is_dir() {
        return describe_dataset(path);
    }
    let mut magic = [0u8; 4];
    let is_ckpt = File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .is_ok()
        && &magic == CHECKPOINT_MAGIC;
    if is_ckpt {
        return describe_checkpoint(path);
    }
    match extension(path).as_str() {
        "json" => describe_json(path),
        "obj" => {
            let f =
                BufReader::new(File::open(path).map_err(|e| CliError::input(path.display(), e))?);
            let m = Mesh::read_obj(f).map_err(|e| CliError::input(path.display(), e))?;
            let w = m.watertight_check();
            Ok(
                json!({ "kind": "mesh", "vertices": m.vertices.len(), "polygons": m.faces.len(), "faces": m.face_count(),
                "watertight": w.watertight, "boundary_edges": w.boundary_edges.len(), "shells": w.shells,
                "area": m.area(), "volume": m.volume(), "bbox": bbox_json(m.bbox()) }),
            )
        }
        "toml" => {
            let text = fs::read_to_string(path).map_err(|e| CliError::input(path.display(), e))?;
            let cfg = crate::config::CliConfig::load(Some(path))?;
            let train: Option<&TrainConfig> = cfg.train.as_ref();
            Ok(
                json!({ "kind": "config", "lines": text.lines().count(), "dataset": cfg.dataset.is_some(),
                "train": train.map(|t| json!({ "encoder": t.model.encoder, "epochs": t.epochs, "seed": t.seed })),
                "eval": cfg.eval.is_some() }),
            )
        }
        "jsonl" => {
            let text = fs::read_to_string(path).map_err(|e| CliError::input(path.display(), e))?;
            let rows: Result<Vec<Value>, _> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect();
            let rows = rows.map_err(|e| CliError::input(path.display(), e))?;
            Ok(json!({ "kind": "log", "records": rows.len(), "last": rows.last() }))
        }
        "csv" => {
            let text = fs::read_to_string(path).map_err(|e| CliError::input(path.display(), e))?;
            Ok(
                json!({ "kind": "table", "rows": text.lines().count().saturating_sub(1),
                "columns": text.lines().next().map(|h| h.split(',').collect::<Vec<_>>()) }),
            )
        }
        _ => {
            let pts = load_points(path).map_err(|e| CliError::input(path.display(), e))?;
            Ok(
                json!({ "kind": "points", "points": pts.len(), "bbox": bbox_json(BoundingBox::from_points(&pts).ok()) }),
            )
        }
    }
}

pub fn inspect(path: &Path) -> Result<(), CliError> {
    let mut out = describe(path)?;
    let crc_target = if path.is_dir() {
        path.join(RECORDS_FILE)
    } else {
        path.to_path_buf()
    };
    out["path"] = json!(path);
    out["crc32"] = json!(format!("{:08x}", crc_of(&crc_target)?));
    println!(
        "{}",
        serde_json::to_string_pretty(&out).expect("summary serializes")
    );
    Ok(())
}
