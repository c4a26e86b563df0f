//! Binary checkpoint container: magic + version header, a JSON metadata
//! block, then named little-endian f64 tensors. Shared by the forecaster
//! and the agent.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::telemetry::QuantileTransform;
use crate::topology::ServiceGraph;

use super::{ForecastError, ForecastMode, ForecastModel};

const MAGIC: &[u8; 4] = b"SLFG";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Kind-agnostic checkpoint: a JSON metadata document plus tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn array(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }
}

/// Writes atomically: a temp file in the destination directory is renamed
/// into place only after a complete flush.
pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), ForecastError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "ckpt".into())
    ));
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let doc = serde_json::json!({ "kind": ckpt.kind, "meta": ckpt.meta });
        let meta = serde_json::to_vec(&doc).expect("metadata serializes");
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(ckpt.arrays.len() as u32).to_le_bytes())?;
        for a in &ckpt.arrays {
            let name = a.name.as_bytes();
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(a.rows as u32).to_le_bytes())?;
            w.write_all(&(a.cols as u32).to_le_bytes())?;
            for &v in &a.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, ForecastError> {
    let mut r = BufReader::new(File::open(path)?);
    let bad = |msg: &str| ForecastError::BadCheckpoint(msg.to_string());

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("wrong magic bytes"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(ForecastError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let meta_len = read_u64(&mut r)? as usize;
    let mut meta_buf = vec![0u8; meta_len];
    r.read_exact(&mut meta_buf)?;
    let doc: serde_json::Value =
        serde_json::from_slice(&meta_buf).map_err(|e| ForecastError::BadCheckpoint(e.to_string()))?;
    let kind = doc
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| bad("metadata is missing 'kind'"))?
        .to_string();
    let meta = doc.get("meta").cloned().unwrap_or(serde_json::Value::Null);

    let count = read_u32(&mut r)? as usize;
    let mut arrays = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u16(&mut r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf).map_err(|_| bad("array name is not UTF-8"))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        arrays.push(NamedArray { name, rows, cols, data });
    }
    Ok(Checkpoint { kind, meta, arrays })
}

/// Everything needed to rebuild a forecaster without its training data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecasterMeta {
    pub node_names: Vec<String>,
    pub edges: Vec<(usize, usize)>,
    pub k: usize,
    pub d_h: usize,
    pub history: usize,
    pub horizon: usize,
    pub metrics: usize,
    pub mode: ForecastMode,
    pub metric_names: Vec<String>,
    /// Reference quantiles of the fitted transform, per column.
    pub quantiles: Option<Vec<Vec<f64>>>,
}

pub fn save_forecaster(
    path: &Path,
    model: &ForecastModel,
    transform: Option<&QuantileTransform>,
) -> Result<(), ForecastError> {
    let meta = ForecasterMeta {
        node_names: model.graph.node_names().to_vec(),
        edges: model.graph.edges().to_vec(),
        k: model.cell.k,
        d_h: model.cell.d_h,
        history: model.history,
        horizon: model.horizon,
        metrics: model.metrics,
        mode: model.mode,
        metric_names: crate::telemetry::MetricCatalog::names().iter().map(|s| s.to_string()).collect(),
        quantiles: transform.map(|t| t.quantiles().to_vec()),
    };
    let arrays = model
        .params
        .iter()
        .map(|p| NamedArray { name: p.name.clone(), rows: p.rows, cols: p.cols, data: p.data.clone() })
        .collect();
    let ckpt = Checkpoint {
        kind: "forecaster".into(),
        meta: serde_json::to_value(&meta).expect("metadata serializes"),
        arrays,
    };
    write_checkpoint(path, &ckpt)
}

pub fn load_forecaster(
    path: &Path,
) -> Result<(ForecastModel, Option<QuantileTransform>), ForecastError> {
    let ckpt = read_checkpoint(path)?;
    if ckpt.kind != "forecaster" {
        return Err(ForecastError::BadCheckpoint(format!(
            "expected a forecaster checkpoint, found '{}'",
            ckpt.kind
        )));
    }
    let meta: ForecasterMeta = serde_json::from_value(ckpt.meta.clone())
        .map_err(|e| ForecastError::BadCheckpoint(e.to_string()))?;
    let graph = ServiceGraph::new(meta.node_names.clone(), meta.edges.clone())?;
    let mut model = ForecastModel::new(
        &graph,
        meta.k,
        meta.d_h,
        meta.history,
        meta.horizon,
        meta.metrics,
        meta.mode,
        0,
    )?;
    for i in 0..model.params.len() {
        let p = model.params.get_mut(i);
        let a = ckpt
            .arrays
            .iter()
            .find(|a| a.name == p.name)
            .ok_or_else(|| ForecastError::BadCheckpoint(format!("missing tensor '{}'", p.name)))?;
        if a.rows != p.rows || a.cols != p.cols {
            return Err(ForecastError::BadCheckpoint(format!(
                "tensor '{}' is {}x{}, expected {}x{}",
                p.name, a.rows, a.cols, p.rows, p.cols
            )));
        }
        p.data = a.data.clone();
    }
    let transform = match meta.quantiles {
        Some(q) => Some(
            QuantileTransform::from_quantiles(q)
                .map_err(|e| ForecastError::BadCheckpoint(e.to_string()))?,
        ),
        None => None,
    };
    Ok((model, transform))
}


fn read_u16<R: Read>(r: &mut R) -> std::io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
