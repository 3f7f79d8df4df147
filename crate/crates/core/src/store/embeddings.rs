use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{
    decode_f32s, first_non_finite, push_f32s, read_blob, read_json, write_blob, write_json,
    FORMAT_VERSION, SCALAR_BYTES,
};
use crate::error::{Error, Result};
use crate::grade::GradeId;

/// One labeled (or unlabeled) token matrix. Row 0 is the global token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub grade: Option<GradeId>,
    pub tokens: Array2<f64>,
    /// Image embedding in the text encoder's shared space, used only for prompt gating.
    pub gating: Option<Array1<f64>>,
}

impl EmbeddingRecord {
    pub fn new(id: impl Into<String>, grade: Option<GradeId>, tokens: Array2<f64>) -> Self {
        EmbeddingRecord {
            id: id.into(),
            grade,
            tokens,
            gating: None,
        }
    }

    pub fn with_gating(mut self, gating: Array1<f64>) -> Self {
        self.gating = Some(gating);
        self
    }

    pub fn labeled_grade(&self) -> Result<GradeId> {
        self.grade.ok_or_else(|| Error::Unlabeled(self.id.clone()))
    }
}

/// Name and seed of the generator that produced a synthetic set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub name: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub id: String,
    pub grade: Option<GradeId>,
    pub offset: u64,
    pub length: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gating_offset: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub format_version: u32,
    pub n_s: usize,
    pub d_v: usize,
    pub d_t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorInfo>,
    pub records: Vec<RecordEntry>,
}

/// An immutable, validated collection of records sharing `n_s × d_v` token shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    n_s: usize,
    d_v: usize,
    d_t: usize,
    generator: Option<GeneratorInfo>,
    records: Vec<EmbeddingRecord>,
    index: HashMap<String, usize>,
}

impl EmbeddingSet {
    pub fn new(n_s: usize, d_v: usize, d_t: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        if n_s == 0 || d_v == 0 || d_t == 0 {
            return Err(Error::Config(format!(
                "dimensions must be positive (n_s={n_s}, d_v={d_v}, d_t={d_t})"
            )));
        }
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            if r.tokens.dim() != (n_s, d_v) {
                return Err(Error::shape(
                    format!("tokens of `{}`", r.id),
                    format!("{n_s}x{d_v}"),
                    format!("{}x{}", r.tokens.nrows(), r.tokens.ncols()),
                ));
            }
            if r.tokens.iter().any(|v| !v.is_finite()) {
                return Err(Error::Record {
                    id: r.id.clone(),
                    offset: 0,
                    message: "non-finite token value".into(),
                });
            }
            if let Some(g) = &r.gating {
                if g.len() != d_t {
                    return Err(Error::shape(
                        format!("gating embedding of `{}`", r.id),
                        d_t,
                        g.len(),
                    ));
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Record {
                        id: r.id.clone(),
                        offset: 0,
                        message: "non-finite gating value".into(),
                    });
                }
            }
        }
        Ok(EmbeddingSet {
            n_s,
            d_v,
            d_t,
            generator: None,
            records,
            index,
        })
    }

    pub fn with_generator(mut self, generator: GeneratorInfo) -> Self {
        self.generator = Some(generator);
        self
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    pub fn d_t(&self) -> usize {
        self.d_t
    }

    pub fn generator(&self) -> Option<&GeneratorInfo> {
        self.generator.as_ref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EmbeddingRecord> {
        self.records.iter()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    /// Records of one grade, in set order.
    pub fn of_grade(&self, grade: GradeId) -> impl Iterator<Item = &EmbeddingRecord> {
        self.records.iter().filter(move |r| r.grade == Some(grade))
    }

    /// Fails with the first unlabeled record, if any.
    pub fn require_labeled(&self) -> Result<()> {
        match self.records.iter().find(|r| r.grade.is_none()) {
            Some(r) => Err(Error::Unlabeled(r.id.clone())),
            None => Ok(()),
        }
    }

    /// A new set with the records whose ids appear in `ids`, in the order given.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<EmbeddingSet> {
        let records = ids
            .iter()
            .map(|id| {
                self.get(id.as_ref())
                    .cloned()
                    .ok_or_else(|| Error::UnknownId(id.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut set = EmbeddingSet::new(self.n_s, self.d_v, self.d_t, records)?;
        set.generator = self.generator.clone();
        Ok(set)
    }
}

impl<'a> IntoIterator for &'a EmbeddingSet {
    type Item = &'a EmbeddingRecord;
    type IntoIter = std::slice::Iter<'a, EmbeddingRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

/// Reads a manifest and its blob, validating every record against the declared shapes.
pub fn load_embedding_set(manifest_path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = manifest_path.as_ref();
    let manifest: EmbeddingManifest = read_json(path)?;
    let blob = read_blob(path)?;
    decode_set(path, &manifest, &blob)
}

fn decode_set(path: &Path, manifest: &EmbeddingManifest, blob: &[u8]) -> Result<EmbeddingSet> {
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            message: format!("unsupported format_version {}", manifest.format_version),
        });
    }
    let (n_s, d_v, d_t) = (manifest.n_s, manifest.d_v, manifest.d_t);
    if n_s == 0 || d_v == 0 || d_t == 0 {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            message: "n_s, d_v and d_t must be positive".into(),
        });
    }
    let token_count = n_s * d_v;
    let token_bytes = (token_count * SCALAR_BYTES) as u64;
    let gating_bytes = (d_t * SCALAR_BYTES) as u64;

    // Every chunk in the blob: (start, end, record id).
    let mut chunks: Vec<(u64, u64, &str)> = Vec::with_capacity(manifest.records.len() * 2);
    let mut seen: HashMap<&str, ()> = HashMap::with_capacity(manifest.records.len());
    let mut prev_offset: Option<u64> = None;
    let mut records = Vec::with_capacity(manifest.records.len());

    for entry in &manifest.records {
        let err = |message: String| Error::Record {
            id: entry.id.clone(),
            offset: entry.offset,
            message,
        };
        if seen.insert(entry.id.as_str(), ()).is_some() {
            return Err(err("duplicate id".into()));
        }
        if entry.length != token_bytes {
            return Err(err(format!(
                "length {} does not match n_s*d_v*4 = {token_bytes}",
                entry.length
            )));
        }
        if prev_offset.is_some_and(|p| entry.offset <= p) {
            return Err(err("record offsets must be strictly ascending".into()));
        }
        prev_offset = Some(entry.offset);
        chunks.push((entry.offset, entry.offset + entry.length, &entry.id));

        let values = decode_f32s(blob, entry.offset, token_count).ok_or_else(|| {
            err(format!(
                "blob truncated: record needs bytes {}..{}, blob has {}",
                entry.offset,
                entry.offset + entry.length,
                blob.len()
            ))
        })?;
        if let Some(i) = first_non_finite(&values) {
            return Err(Error::Record {
                id: entry.id.clone(),
                offset: entry.offset + (i * SCALAR_BYTES) as u64,
                message: "non-finite token value".into(),
            });
        }
        let tokens = Array2::from_shape_vec((n_s, d_v), values).expect("length checked above");

        let gating = match entry.gating_offset {
            None => None,
            Some(off) => {
                chunks.push((off, off + gating_bytes, &entry.id));
                let values = decode_f32s(blob, off, d_t).ok_or_else(|| Error::Record {
                    id: entry.id.clone(),
                    offset: off,
                    message: format!("blob truncated: gating embedding needs {gating_bytes} bytes"),
                })?;
                if let Some(i) = first_non_finite(&values) {
                    return Err(Error::Record {
                        id: entry.id.clone(),
                        offset: off + (i * SCALAR_BYTES) as u64,
                        message: "non-finite gating value".into(),
                    });
                }
                Some(Array1::from(values))
            }
        };

        records.push(EmbeddingRecord {
            id: entry.id.clone(),
            grade: entry.grade,
            tokens,
            gating,
        });
    }

    chunks.sort_unstable();
    for pair in chunks.windows(2) {
        let (_, end, _) = pair[0];
        let (start, _, id) = pair[1];
        if start < end {
            return Err(Error::Record {
                id: id.to_string(),
                offset: start,
                message: "byte range overlaps a previous record".into(),
            });
        }
    }

    let mut set = EmbeddingSet::new(n_s, d_v, d_t, records)?;
    set.generator = manifest.generator.clone();
    Ok(set)
}

/// Writes `<path>` (manifest) and `<path stem>.bin` (blob). Each record's tokens are followed
/// by its gating embedding, when present.
pub fn save_embedding_set(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (manifest, blob) = encode_set(set)?;
    write_blob(path, &blob)?;
    write_json(path, &manifest)
}

fn encode_set(set: &EmbeddingSet) -> Result<(EmbeddingManifest, Vec<u8>)> {
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(set.len());
    let mut seen = HashMap::with_capacity(set.len());
    for r in set {
        if seen.insert(r.id.as_str(), ()).is_some() {
            return Err(Error::DuplicateId(r.id.clone()));
        }
        if r.tokens.dim() != (set.n_s, set.d_v) {
            return Err(Error::shape(
                format!("tokens of `{}`", r.id),
                format!("{}x{}", set.n_s, set.d_v),
                format!("{}x{}", r.tokens.nrows(), r.tokens.ncols()),
            ));
        }
        let offset = blob.len() as u64;
        push_f32s(&mut blob, r.tokens.iter().copied());
        let length = blob.len() as u64 - offset;
        let gating_offset = r.gating.as_ref().map(|g| {
            let off = blob.len() as u64;
            push_f32s(&mut blob, g.iter().copied());
            off
        });
        entries.push(RecordEntry {
            id: r.id.clone(),
            grade: r.grade,
            offset,
            length,
            gating_offset,
        });
    }
    let manifest = EmbeddingManifest {
        format_version: FORMAT_VERSION,
        n_s: set.n_s,
        d_v: set.d_v,
        d_t: set.d_t,
        generator: set.generator.clone(),
        records: entries,
    };
    Ok((manifest, blob))
}
