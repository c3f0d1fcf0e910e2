//! Point cloud and primitive file formats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::geometry::{PlanarPrimitive, Plane, Point};
use crate::partition::CellComplex;
use crate::sampling::{QuerySet, SamplingStrategy};

/// Version of the complex and query JSON containers.
pub const ARTIFACT_VERSION: u32 = 1;

/// Primitives JSON record; area and verticality are derived on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveRecord {
    pub normal: [f64; 3],
    pub offset: f64,
    pub inliers: Vec<[f64; 3]>,
}

impl From<&PlanarPrimitive> for PrimitiveRecord {
    fn from(p: &PlanarPrimitive) -> Self {
        Self {
            normal: p.plane.normal.into(),
            offset: p.plane.offset,
            inliers: p.inliers.iter().map(|q| [q.x, q.y, q.z]).collect(),
        }
    }
}

impl TryFrom<PrimitiveRecord> for PlanarPrimitive {
    type Error = DataError;

    fn try_from(r: PrimitiveRecord) -> Result<Self, DataError> {
        let plane = Plane::new(r.normal.into(), r.offset)
            .map_err(|e| DataError::Format(format!("primitive plane: {e}")))?;
        Ok(PlanarPrimitive::new(
            plane,
            r.inliers.into_iter().map(Point::from).collect(),
        ))
    }
}

pub fn write_primitives<W: Write>(w: W, prims: &[PlanarPrimitive]) -> Result<(), DataError> {
    let recs: Vec<PrimitiveRecord> = prims.iter().map(PrimitiveRecord::from).collect();
    serde_json::to_writer_pretty(w, &recs).map_err(|e| DataError::Format(e.to_string()))
}

pub fn read_primitives<R: Read>(r: R) -> Result<Vec<PlanarPrimitive>, DataError> {
    let recs: Vec<PrimitiveRecord> = serde_json::from_reader(r)
        .map_err(|e| DataError::Format(format!("primitives JSON: {e}")))?;
    recs.into_iter().map(PlanarPrimitive::try_from).collect()
}

/// One `x y z` per line; blank lines and `#` comments skipped, extra columns ignored.
pub fn read_xyz<R: BufRead>(r: R) -> Result<Vec<Point>, DataError> {
    let mut out = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let c: Vec<f64> = line
            .split(|ch: char| ch.is_whitespace() || ch == ',')
            .filter(|t| !t.is_empty())
            .take(3)
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| DataError::Format(format!("XYZ line {}: {e}", ln + 1)))?;
        if c.len() < 3 || c.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Format(format!(
                "XYZ line {}: expected three finite numbers",
                ln + 1
            )));
        }
        out.push(Point::new(c[0], c[1], c[2]));
    }
    Ok(out)
}

pub fn write_xyz<W: Write>(mut w: W, points: &[Point]) -> Result<(), DataError> {
    for p in points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}

/// Little-endian float32 triplets.
pub fn read_points_bin<R: Read>(mut r: R) -> Result<Vec<Point>, DataError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() % 12 != 0 {
        return Err(DataError::Format(format!(
            "binary point stream of {} bytes is not a multiple of 12",
            buf.len()
        )));
    }
    Ok(buf
        .chunks_exact(12)
        .map(|c| {
            let f = |i: usize| {
                f32::from_le_bytes(c[i * 4..i * 4 + 4].try_into().expect("4 bytes")) as f64
            };
            Point::new(f(0), f(1), f(2))
        })
        .collect())
}

pub fn write_points_bin<W: Write>(mut w: W, points: &[Point]) -> Result<(), DataError> {
    for p in points {
        for c in [p.x, p.y, p.z] {
            w.write_all(&(c as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn is_binary(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("bin" | "f32")
    )
}

/// Reads either point format, chosen by extension (`.bin`/`.f32` binary, anything else text).
pub fn load_points(path: &Path) -> Result<Vec<Point>, DataError> {
    let f = File::open(path)?;
    if is_binary(path) {
        read_points_bin(BufReader::new(f))
    } else {
        read_xyz(BufReader::new(f))
    }
}

pub fn save_points(path: &Path, points: &[Point]) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    if is_binary(path) {
        write_points_bin(&mut w, points)?;
    } else {
        write_xyz(&mut w, points)?;
    }
    w.flush()?;
    Ok(())
}

/// Cell complex container: the plane table, every cell's half-spaces
/// (plane id and side), vertices and facets, the BSP tree and adjacency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexFile {
    pub format_version: u32,
    pub complex: CellComplex,
}

/// Queries of every cell of one complex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFile {
    pub format_version: u32,
    pub k: usize,
    pub strategy: SamplingStrategy,
    pub seed: u64,
    pub queries: Vec<QuerySet>,
}

fn check_version(found: Option<u64>) -> Result<(), DataError> {
    let found = found.unwrap_or(0) as u32;
    if found != ARTIFACT_VERSION {
        return Err(DataError::VersionMismatch {
            found,
            expected: ARTIFACT_VERSION,
        });
    }
    Ok(())
}

fn read_versioned<T: serde::de::DeserializeOwned, R: Read>(
    r: R,
    what: &str,
) -> Result<T, DataError> {
    let value: serde_json::Value =
        serde_json::from_reader(r).map_err(|e| DataError::Format(format!("{what}: {e}")))?;
    check_version(value.get("format_version").and_then(|v| v.as_u64()))?;
    serde_json::from_value(value).map_err(|e| DataError::Format(format!("{what}: {e}")))
}

pub fn write_complex<W: Write>(w: W, complex: &CellComplex) -> Result<(), DataError> {
    let file = ComplexFile {
        format_version: ARTIFACT_VERSION,
        complex: complex.clone(),
    };
    serde_json::to_writer(w, &file).map_err(|e| DataError::Format(e.to_string()))
}

pub fn read_complex<R: Read>(r: R) -> Result<CellComplex, DataError> {
    Ok(read_versioned::<ComplexFile, _>(r, "complex")?.complex)
}

pub fn write_queries<W: Write>(w: W, file: &QueryFile) -> Result<(), DataError> {
    serde_json::to_writer(w, file).map_err(|e| DataError::Format(e.to_string()))
}

pub fn read_queries<R: Read>(r: R) -> Result<QueryFile, DataError> {
    read_versioned(r, "queries")
}
