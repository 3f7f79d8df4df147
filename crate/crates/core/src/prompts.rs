//! Prompt families and differentiated pair descriptions, as text embeddings.

use std::collections::HashSet;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grade::{GradeId, NUM_GRADES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    /// Class-level prompt for the vision-language model.
    Cls,
    /// Fine-grained description generated by a language model.
    Desc,
}

/// One prompt template instantiated once per grade.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptFamily {
    pub family_id: String,
    pub kind: PromptKind,
    /// Indexed by grade.
    pub variants: Vec<Array1<f64>>,
}

impl PromptFamily {
    pub fn variant(&self, grade: GradeId) -> &Array1<f64> {
        &self.variants[grade.index()]
    }
}

/// Description of `from_grade` contrasted against `to_grade`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffDescription {
    pub from_grade: GradeId,
    pub to_grade: GradeId,
    pub embedding: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptLibrary {
    d_t: usize,
    families: Vec<PromptFamily>,
    // NUM_GRADES x NUM_GRADES grid, diagonal empty.
    diffs: Vec<Option<Array1<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSummary {
    pub d_t: usize,
    pub families: usize,
    pub cls_families: usize,
    pub desc_families: usize,
    pub variant_embeddings: usize,
    pub diff_pairs: usize,
}

fn check_vector(family: &str, what: &str, v: &Array1<f64>, d_t: usize) -> Result<()> {
    let fail = |message: String| Error::Family {
        family: family.to_string(),
        message,
    };
    if v.len() != d_t {
        return Err(fail(format!(
            "{what}: dimension mismatch, expected {d_t}, got {}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(fail(format!("{what}: non-finite value")));
    }
    if v.iter().all(|&x| x == 0.0) {
        return Err(fail(format!("{what}: zero vector")));
    }
    Ok(())
}

impl PromptLibrary {
    /// Validates that every family has one finite, non-zero `d_t` vector per grade and that
    /// every ordered grade pair has exactly one differentiated embedding.
    pub fn new(d_t: usize, families: Vec<PromptFamily>, diffs: Vec<DiffDescription>) -> Result<Self> {
        let mut ids = HashSet::new();
        for f in &families {
            if !ids.insert(f.family_id.as_str()) {
                return Err(Error::Family {
                    family: f.family_id.clone(),
                    message: "duplicate family id".into(),
                });
            }
            if f.variants.len() != NUM_GRADES {
                return Err(Error::Family {
                    family: f.family_id.clone(),
                    message: format!(
                        "missing variant for grade {}",
                        f.variants.len().min(NUM_GRADES)
                    ),
                });
            }
            for (g, v) in f.variants.iter().enumerate() {
                check_vector(&f.family_id, &format!("grade {g} variant"), v, d_t)?;
            }
        }

        let mut grid: Vec<Option<Array1<f64>>> = vec![None; NUM_GRADES * NUM_GRADES];
        for d in diffs {
            let what = format!("diff {}->{}", d.from_grade, d.to_grade);
            if d.from_grade == d.to_grade {
                return Err(Error::Family {
                    family: what,
                    message: "pair must contrast two different grades".into(),
                });
            }
            check_vector(&what, "embedding", &d.embedding, d_t)?;
            let slot = &mut grid[d.from_grade.index() * NUM_GRADES + d.to_grade.index()];
            if slot.is_some() {
                return Err(Error::Family {
                    family: what,
                    message: "duplicate differentiated embedding".into(),
                });
            }
            *slot = Some(d.embedding);
        }
        for from in GradeId::all() {
            for to in GradeId::all().filter(|&t| t != from) {
                if grid[from.index() * NUM_GRADES + to.index()].is_none() {
                    return Err(Error::Family {
                        family: format!("diff {from}->{to}"),
                        message: "missing differentiated embedding".into(),
                    });
                }
            }
        }

        Ok(PromptLibrary {
            d_t,
            families,
            diffs: grid,
        })
    }

    pub fn d_t(&self) -> usize {
        self.d_t
    }

    pub fn families(&self) -> &[PromptFamily] {
        &self.families
    }

    pub fn family(&self, id: &str) -> Option<&PromptFamily> {
        self.families.iter().find(|f| f.family_id == id)
    }

    /// Differentiated embedding of `from` relative to `to`. Panics when `from == to`.
    pub fn diff(&self, from: GradeId, to: GradeId) -> &Array1<f64> {
        self.diffs[from.index() * NUM_GRADES + to.index()]
            .as_ref()
            .expect("diagonal pair has no differentiated embedding")
    }

    /// All differentiated descriptions in (from, to) order.
    pub fn diff_descriptions(&self) -> impl Iterator<Item = DiffDescription> + '_ {
        GradeId::all().flat_map(move |from| {
            GradeId::all()
                .filter(move |&to| to != from)
                .map(move |to| DiffDescription {
                    from_grade: from,
                    to_grade: to,
                    embedding: self.diff(from, to).clone(),
                })
        })
    }

    /// Union of the class and description variants for one grade, in family order.
    pub fn grade_variants(&self, grade: GradeId) -> Vec<&Array1<f64>> {
        self.families.iter().map(|f| f.variant(grade)).collect()
    }

    pub fn summary(&self) -> PromptSummary {
        let cls = self
            .families
            .iter()
            .filter(|f| f.kind == PromptKind::Cls)
            .count();
        PromptSummary {
            d_t: self.d_t,
            families: self.families.len(),
            cls_families: cls,
            desc_families: self.families.len() - cls,
            variant_embeddings: self.families.len() * NUM_GRADES,
            diff_pairs: NUM_GRADES * (NUM_GRADES - 1),
        }
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::library;
    use super::*;

    #[test]
    fn minimal_library_summary() {
        let s = library(1, 4).summary();
        assert_eq!(s.families, 1);
        assert_eq!(s.variant_embeddings, 5);
        assert_eq!(s.diff_pairs, 20);
    }

    #[test]
    fn twelve_families_count() {
        let s = library(12, 3).summary();
        assert_eq!((s.families, s.variant_embeddings), (12, 60));
        assert_eq!(s.cls_families + s.desc_families, 12);
    }

    #[test]
    fn missing_variant_named() {
        let lib = library(2, 3);
        let mut fams = lib.families().to_vec();
        fams[1].variants.truncate(3);
        let err = PromptLibrary::new(3, fams, lib.diff_descriptions().collect()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("fam01") && msg.contains("grade 3"), "{msg}");
    }

    #[test]
    fn duplicate_family_rejected() {
        let lib = library(2, 3);
        let mut fams = lib.families().to_vec();
        fams[1].family_id = fams[0].family_id.clone();
        assert!(PromptLibrary::new(3, fams, lib.diff_descriptions().collect()).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let lib = library(2, 3);
        let mut fams = lib.families().to_vec();
        fams[0].variants[2] = Array1::from(vec![1.0, 2.0]);
        let err = PromptLibrary::new(3, fams, lib.diff_descriptions().collect()).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"));
    }

    #[test]
    fn missing_or_duplicate_pair_rejected() {
        let lib = library(1, 3);
        let mut diffs: Vec<_> = lib.diff_descriptions().collect();
        let extra = diffs[0].clone();
        diffs.pop();
        assert!(PromptLibrary::new(3, lib.families().to_vec(), diffs.clone()).is_err());
        diffs.push(extra);
        assert!(PromptLibrary::new(3, lib.families().to_vec(), diffs).is_err());
    }
}
