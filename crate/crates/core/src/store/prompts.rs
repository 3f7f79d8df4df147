use std::collections::HashSet;
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::{decode_f32s, push_f32s, read_blob, read_json, write_blob, write_json, FORMAT_VERSION, SCALAR_BYTES};
use crate::error::{Error, Result};
use crate::grade::{GradeId, NUM_GRADES};
use crate::prompts::{DiffDescription, PromptFamily, PromptKind, PromptLibrary};

pub use crate::prompts::PromptSummary;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct FamilyEntry {
    family_id: String,
    kind: PromptKind,
    /// Byte offset of each grade's variant; `null` marks a missing variant.
    variants: Vec<Option<u64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct DiffEntry {
    from_grade: GradeId,
    to_grade: GradeId,
    offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PromptManifest {
    format_version: u32,
    d_t: usize,
    families: Vec<FamilyEntry>,
    diff_pairs: Vec<DiffEntry>,
}

/// Loads and validates a prompt manifest, returning its counts.
pub fn validate_prompt_file(path: impl AsRef<Path>) -> Result<PromptSummary> {
    load_prompt_library(path).map(|lib| lib.summary())
}

pub fn load_prompt_library(path: impl AsRef<Path>) -> Result<PromptLibrary> {
    let path = path.as_ref();
    let manifest: PromptManifest = read_json(path)?;
    let blob = read_blob(path)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            message: format!("unsupported format_version {}", manifest.format_version),
        });
    }
    let d_t = manifest.d_t;
    if d_t == 0 {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            message: "d_t must be positive".into(),
        });
    }

    let mut ids = HashSet::new();
    let mut families = Vec::with_capacity(manifest.families.len());
    let mut vectors = 0usize;
    for entry in &manifest.families {
        let fail = |message: String| Error::Family {
            family: entry.family_id.clone(),
            message,
        };
        if !ids.insert(entry.family_id.as_str()) {
            return Err(fail("duplicate family id".into()));
        }
        if entry.variants.len() > NUM_GRADES {
            return Err(fail(format!(
                "{} variants listed, expected {NUM_GRADES}",
                entry.variants.len()
            )));
        }
        let mut variants = Vec::with_capacity(NUM_GRADES);
        for grade in 0..NUM_GRADES {
            let offset = entry
                .variants
                .get(grade)
                .copied()
                .flatten()
                .ok_or_else(|| fail(format!("missing variant for grade {grade}")))?;
            let v = decode_f32s(&blob, offset, d_t).ok_or_else(|| {
                fail(format!(
                    "grade {grade} variant: dimension mismatch, {d_t} values at offset {offset} exceed the blob"
                ))
            })?;
            variants.push(Array1::from(v));
            vectors += 1;
        }
        families.push(PromptFamily {
            family_id: entry.family_id.clone(),
            kind: entry.kind,
            variants,
        });
    }

    let mut diffs = Vec::with_capacity(manifest.diff_pairs.len());
    for d in &manifest.diff_pairs {
        let v = decode_f32s(&blob, d.offset, d_t).ok_or_else(|| Error::Family {
            family: format!("diff {}->{}", d.from_grade, d.to_grade),
            message: format!("dimension mismatch, {d_t} values at offset {} exceed the blob", d.offset),
        })?;
        diffs.push(DiffDescription {
            from_grade: d.from_grade,
            to_grade: d.to_grade,
            embedding: Array1::from(v),
        });
        vectors += 1;
    }

    let expected = vectors * d_t * SCALAR_BYTES;
    if blob.len() != expected {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            message: format!(
                "dimension mismatch: blob holds {} bytes, {vectors} vectors of d_t={d_t} need {expected}",
                blob.len()
            ),
        });
    }

    PromptLibrary::new(d_t, families, diffs)
}

pub fn save_prompt_library(library: &PromptLibrary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut blob = Vec::new();
    let mut families = Vec::with_capacity(library.families().len());
    for f in library.families() {
        let variants = f
            .variants
            .iter()
            .map(|v| {
                let off = blob.len() as u64;
                push_f32s(&mut blob, v.iter().copied());
                Some(off)
            })
            .collect();
        families.push(FamilyEntry {
            family_id: f.family_id.clone(),
            kind: f.kind,
            variants,
        });
    }
    let diff_pairs = library
        .diff_descriptions()
        .map(|d| {
            let offset = blob.len() as u64;
            push_f32s(&mut blob, d.embedding.iter().copied());
            DiffEntry {
                from_grade: d.from_grade,
                to_grade: d.to_grade,
                offset,
            }
        })
        .collect();
    let manifest = PromptManifest {
        format_version: FORMAT_VERSION,
        d_t: library.d_t(),
        families,
        diff_pairs,
    };
    write_blob(path, &blob)?;
    write_json(path, &manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::fixtures::library;

    fn round_values(lib: &PromptLibrary) -> PromptLibrary {
        let r = |v: &Array1<f64>| v.mapv(|x| x as f32 as f64);
        let fams = lib
            .families()
            .iter()
            .map(|f| PromptFamily {
                variants: f.variants.iter().map(r).collect(),
                ..f.clone()
            })
            .collect();
        let diffs = lib
            .diff_descriptions()
            .map(|d| DiffDescription {
                embedding: r(&d.embedding),
                ..d
            })
            .collect();
        PromptLibrary::new(lib.d_t(), fams, diffs).unwrap()
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prompts.json");
        let lib = round_values(&library(12, 5));
        save_prompt_library(&lib, &path).unwrap();
        assert_eq!(load_prompt_library(&path).unwrap(), lib);
        let s = validate_prompt_file(&path).unwrap();
        assert_eq!((s.families, s.variant_embeddings, s.diff_pairs), (12, 60, 20));
    }

    #[test]
    fn null_variant_names_family_and_grade() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        save_prompt_library(&library(2, 3), &path).unwrap();
        let mut m: PromptManifest = read_json(&path).unwrap();
        m.families[1].variants[3] = None;
        write_json(&path, &m).unwrap();
        let msg = validate_prompt_file(&path).unwrap_err().to_string();
        assert!(msg.contains("fam01") && msg.contains("grade 3"), "{msg}");
    }

    #[test]
    fn wrong_d_t_is_a_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        save_prompt_library(&library(2, 3), &path).unwrap();
        let mut m: PromptManifest = read_json(&path).unwrap();
        m.d_t = 2;
        write_json(&path, &m).unwrap();
        let msg = validate_prompt_file(&path).unwrap_err().to_string();
        assert!(msg.contains("dimension mismatch"), "{msg}");
    }

    #[test]
    fn duplicate_family_in_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        save_prompt_library(&library(2, 3), &path).unwrap();
        let mut m: PromptManifest = read_json(&path).unwrap();
        m.families[1].family_id = "fam00".into();
        write_json(&path, &m).unwrap();
        assert!(validate_prompt_file(&path)
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
    }
}
