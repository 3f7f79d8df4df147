//! Trained model bundle: projections, base prototypes, text features and their provenance
//! (selected families, anchors). Tensors are stored as little-endian `f64` so a reloaded
//! checkpoint reproduces predictions bit for bit.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{read_blob, read_json, write_blob, write_json, FORMAT_VERSION};
use crate::anchors::AnchorSelection;
use crate::error::{Error, Result};
use crate::grade::NUM_GRADES;
use crate::modulation::{ModelDims, ModulationParams, SemanticFeatures, PARAM_NAMES};
use crate::prototype::{PrototypeSet, Stage};

const DTYPE: &str = "float64";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dims: ModelDims,
    pub tau: f64,
    pub params: ModulationParams,
    pub base: PrototypeSet,
    pub features: SemanticFeatures,
    pub selected_families: Vec<String>,
    pub anchors: AnchorSelection,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    format_version: u32,
    dtype: String,
    dims: ModelDims,
    tau: f64,
    selected_families: Vec<String>,
    anchors: AnchorSelection,
    tensors: Vec<TensorEntry>,
}

fn named_tensors(ck: &Checkpoint) -> Vec<(String, &Array2<f64>)> {
    let mut out: Vec<(String, &Array2<f64>)> = ck.params.named().map(|(n, m)| (n.to_string(), m)).collect();
    for (g, m) in ck.base.matrices().iter().enumerate() {
        out.push((format!("base.{g}"), m));
    }
    for (g, m) in ck.features.diverse.iter().enumerate() {
        out.push((format!("diverse.{g}"), m));
    }
    for (g, m) in ck.features.differentiated.iter().enumerate() {
        out.push((format!("differentiated.{g}"), m));
    }
    out
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, m) in named_tensors(ck) {
        tensors.push(TensorEntry {
            name,
            rows: m.nrows(),
            cols: m.ncols(),
            offset: blob.len() as u64,
        });
        for v in m.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        dtype: DTYPE.into(),
        dims: ck.dims,
        tau: ck.tau,
        selected_families: ck.selected_families.clone(),
        anchors: ck.anchors.clone(),
        tensors,
    };
    write_blob(path, &blob)?;
    write_json(path, &manifest)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bad = |message: String| Error::Manifest {
        path: path.to_path_buf(),
        message,
    };
    let manifest: CheckpointManifest = read_json(path)?;
    if manifest.format_version != FORMAT_VERSION || manifest.dtype != DTYPE {
        return Err(bad(format!(
            "unsupported checkpoint format {} / {}",
            manifest.format_version, manifest.dtype
        )));
    }
    let blob = read_blob(path)?;
    let tensor = |name: &str| -> Result<Array2<f64>> {
        let t = manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| bad(format!("missing tensor `{name}`")))?;
        let start = t.offset as usize;
        let end = start + t.rows * t.cols * 8;
        let bytes = blob
            .get(start..end)
            .ok_or_else(|| bad(format!("tensor `{name}` runs past the end of the blob")))?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Array2::from_shape_vec((t.rows, t.cols), values).map_err(|e| bad(e.to_string()))
    };
    let per_grade = |prefix: &str| -> Result<Vec<Array2<f64>>> {
        (0..NUM_GRADES).map(|g| tensor(&format!("{prefix}.{g}"))).collect()
    };

    let mats: Vec<Array2<f64>> = PARAM_NAMES.iter().map(|n| tensor(n)).collect::<Result<_>>()?;
    let params = ModulationParams::from_matrices(mats.try_into().expect("seven matrices"))?;
    let base = PrototypeSet::new(Stage::Base, per_grade("base")?)?;
    let features = SemanticFeatures::new(per_grade("diverse")?, per_grade("differentiated")?)?;
    let dims = manifest.dims;
    if params.d_v() != dims.d_v || params.d_t() != dims.d_t || params.d_p() != dims.d_p
        || base.n_s() != dims.n_s || base.d_v() != dims.d_v || features.n_div() != dims.n_div
    {
        return Err(bad(format!("tensor shapes disagree with dims {dims:?}")));
    }
    Ok(Checkpoint {
        dims,
        tau: manifest.tau,
        params,
        base,
        features,
        selected_families: manifest.selected_families,
        anchors: manifest.anchors,
    })
}
