//! Discriminative prompt gating and semantic-confusion diagnostics.
//!
//! A family's score for one anchor is the logistic of the margin between the cosine to the
//! anchor's own-grade variant and the mean cosine to the other grades' variants. Scores are
//! averaged over anchors and the top `n_div` families are kept.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grade::{GradeId, NUM_GRADES};
use crate::modulation::sigmoid;
use crate::prompts::{PromptFamily, PromptLibrary};
use crate::store::EmbeddingRecord;

pub const DEFAULT_N_DIV: usize = 11;

pub fn cosine_similarity(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine similarity", a.len(), b.len()));
    }
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine similarity operand".into()));
    }
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Logistic margin of `family` for an image embedding of known `grade`.
pub fn discriminative_score(family: &PromptFamily, image: ArrayView1<f64>, grade: GradeId) -> Result<f64> {
    let mut own = 0.0;
    let mut others = 0.0;
    for (g, variant) in family.variants.iter().enumerate() {
        if variant.len() != image.len() {
            return Err(Error::shape(
                format!("gating embedding vs family `{}`", family.family_id),
                variant.len(),
                image.len(),
            ));
        }
        let cos = cosine_similarity(image, variant.view())?;
        if g == grade.index() {
            own = cos;
        } else {
            others += cos;
        }
    }
    Ok(sigmoid(own - others / (NUM_GRADES - 1) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyScore {
    pub family_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatingResult {
    /// Descending by score, ties by ascending family id.
    pub selected: Vec<FamilyScore>,
    /// Per grade, the kept families' variants stacked in selection order (`n_div × d_t`).
    pub diverse: Vec<Array2<f64>>,
}

impl GatingResult {
    pub fn selected_ids(&self) -> Vec<&str> {
        self.selected.iter().map(|s| s.family_id.as_str()).collect()
    }
}

fn gating_vector(record: &EmbeddingRecord) -> Result<(ArrayView1<'_, f64>, GradeId)> {
    let grade = record.labeled_grade()?;
    let v = record.gating.as_ref().ok_or_else(|| Error::Record {
        id: record.id.clone(),
        offset: 0,
        message: "anchor has no gating embedding".into(),
    })?;
    Ok((v.view(), grade))
}

/// Mean discriminative score of every family over `anchors`, in library order.
pub fn family_scores<'a>(
    library: &PromptLibrary,
    anchors: impl IntoIterator<Item = &'a EmbeddingRecord>,
) -> Result<Vec<FamilyScore>> {
    let anchors = anchors
        .into_iter()
        .map(gating_vector)
        .collect::<Result<Vec<_>>>()?;
    if anchors.is_empty() {
        return Err(Error::Empty("anchor list".into()));
    }
    if library.families().is_empty() {
        return Err(Error::Empty("prompt library".into()));
    }
    library
        .families()
        .iter()
        .map(|f| {
            let mut total = 0.0;
            for (v, grade) in &anchors {
                total += discriminative_score(f, *v, *grade)?;
            }
            Ok(FamilyScore {
                family_id: f.family_id.clone(),
                score: total / anchors.len() as f64,
            })
        })
        .collect()
}

pub fn gate_top_n<'a>(
    library: &PromptLibrary,
    anchors: impl IntoIterator<Item = &'a EmbeddingRecord>,
    n_div: usize,
) -> Result<GatingResult> {
    if n_div == 0 {
        return Err(Error::Config("n_div must be at least 1".into()));
    }
    let mut scores = family_scores(library, anchors)?;
    scores.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.family_id.cmp(&b.family_id))
    });
    scores.truncate(n_div);

    let kept: Vec<&PromptFamily> = scores
        .iter()
        .map(|s| library.family(&s.family_id).expect("scored family exists"))
        .collect();
    let diverse = GradeId::all()
        .map(|grade| {
            Array2::from_shape_fn((kept.len(), library.d_t()), |(r, c)| kept[r].variant(grade)[c])
        })
        .collect();
    Ok(GatingResult {
        selected: scores,
        diverse,
    })
}

/// Mean cosine similarity over all cross pairs of the two sets.
pub fn confusion_degree<A, B>(a: &[A], b: &[B]) -> Result<f64>
where
    A: AsRef<[f64]>,
    B: AsRef<[f64]>,
{
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("confusion degree operand".into()));
    }
    let mut total = 0.0;
    for x in a {
        for y in b {
            total += cosine_similarity(ArrayView1::from(x.as_ref()), ArrayView1::from(y.as_ref()))?;
        }
    }
    Ok(total / (a.len() * b.len()) as f64)
}

/// `NUM_GRADES × NUM_GRADES` confusion degrees over each grade's class and description variants.
pub fn confusion_matrix(library: &PromptLibrary) -> Result<Array2<f64>> {
    let sets: Vec<Vec<&[f64]>> = GradeId::all()
        .map(|g| {
            library
                .grade_variants(g)
                .into_iter()
                .map(|v| v.as_slice().expect("contiguous vector"))
                .collect()
        })
        .collect();
    let mut m = Array2::zeros((NUM_GRADES, NUM_GRADES));
    for i in 0..NUM_GRADES {
        for j in i..NUM_GRADES {
            let d = confusion_degree(&sets[i], &sets[j])?;
            m[[i, j]] = d;
            m[[j, i]] = d;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::{DiffDescription, PromptKind};
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, Array1};
    use proptest::prelude::*;

    fn family(id: &str, variants: Vec<Vec<f64>>) -> PromptFamily {
        PromptFamily {
            family_id: id.into(),
            kind: PromptKind::Desc,
            variants: variants.into_iter().map(Array1::from).collect(),
        }
    }

    fn g(v: i64) -> GradeId {
        GradeId::new(v).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let c = |a: &[f64], b: &[f64]| cosine_similarity(ArrayView1::from(a), ArrayView1::from(b)).unwrap();
        assert_eq!(c(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(c(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_abs_diff_eq!(c(&[1.0, 1.0], &[1.0, 0.0]), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        assert!(matches!(
            cosine_similarity(arr1(&[0.0, 0.0]).view(), arr1(&[1.0, 0.0]).view()),
            Err(Error::ZeroNorm(_))
        ));
    }

    #[test]
    fn identical_variants_score_half() {
        let f = family("f", vec![vec![1.0, 2.0, 3.0]; 5]);
        let s = discriminative_score(&f, arr1(&[0.3, -1.0, 2.0]).view(), g(2)).unwrap();
        assert_abs_diff_eq!(s, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn aligned_with_own_grade_scores_sigmoid_one() {
        let basis = |i: usize| {
            let mut v = vec![0.0; 5];
            v[i] = 1.0;
            v
        };
        let f = family("f", (0..5).map(basis).collect());
        let s = discriminative_score(&f, arr1(&[0.0, 0.0, 0.0, 4.0, 0.0]).view(), g(3)).unwrap();
        assert_abs_diff_eq!(s, 0.731_058_578_630_004_9, epsilon = 1e-12);
    }

    #[test]
    fn anti_aligned_scores_below_half() {
        let mut variants = vec![vec![0.0, 1.0]; 5];
        variants[1] = vec![-1.0, 0.0];
        let f = family("f", variants);
        let s = discriminative_score(&f, arr1(&[1.0, 0.0]).view(), g(1)).unwrap();
        assert!(s < 0.5);
    }

    #[test]
    fn dimension_mismatch() {
        let f = family("f", vec![vec![1.0, 2.0]; 5]);
        assert!(matches!(
            discriminative_score(&f, arr1(&[1.0, 2.0, 3.0]).view(), g(0)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn confusion_degree_examples() {
        let e1 = [1.0, 0.0];
        let e2 = [0.0, 1.0];
        assert_eq!(confusion_degree(&[e1], &[e1]).unwrap(), 1.0);
        assert_eq!(confusion_degree(&[e1], &[e2]).unwrap(), 0.0);
        assert_eq!(confusion_degree(&[e1, e2], &[e1]).unwrap(), 0.5);
        assert!(confusion_degree::<[f64; 2], [f64; 2]>(&[], &[e1]).is_err());
        assert!(confusion_degree(&[[0.0, 0.0]], &[e1]).is_err());
    }

    fn diffs(d_t: usize) -> Vec<DiffDescription> {
        GradeId::all()
            .flat_map(|a| GradeId::all().filter(move |&b| b != a).map(move |b| (a, b)))
            .map(|(a, b)| DiffDescription {
                from_grade: a,
                to_grade: b,
                embedding: Array1::from_elem(d_t, 1.0 + a.index() as f64),
            })
            .collect()
    }

    #[test]
    fn degenerate_library_confusion_is_constant() {
        let lib = PromptLibrary::new(3, vec![family("a", vec![vec![1.0, 2.0, 0.5]; 5])], diffs(3)).unwrap();
        let m = confusion_matrix(&lib).unwrap();
        assert!(m.iter().all(|&v| (v - m[[0, 0]]).abs() < 1e-15));
    }

    #[test]
    fn ordinal_geometry_confusion() {
        // Grade c at angle 30°·c in the plane: adjacent grades 30° apart, grade 1 vs 4 at 90°.
        let variants = (0..5)
            .map(|c| {
                let t = (30.0 * c as f64).to_radians();
                vec![t.cos(), t.sin()]
            })
            .collect();
        let lib = PromptLibrary::new(2, vec![family("a", variants)], diffs(2)).unwrap();
        let m = confusion_matrix(&lib).unwrap();
        assert!(m[[1, 2]] > m[[1, 4]]);
        assert_abs_diff_eq!(m[[1, 4]], 0.0, epsilon = 1e-12);
        assert_eq!(m, m.t());
    }

    fn anchor(id: &str, grade: i64, v: Vec<f64>) -> EmbeddingRecord {
        EmbeddingRecord::new(id, Some(g(grade)), Array2::zeros((1, 1))).with_gating(Array1::from(v))
    }

    #[test]
    fn no_truncation_when_n_div_exceeds_k() {
        let lib = crate::prompts::fixtures::library(4, 3);
        let anchors = vec![anchor("a", 0, vec![1.0, 0.5, 0.2]), anchor("b", 3, vec![0.1, 0.5, 2.0])];
        let r = gate_top_n(&lib, &anchors, 11).unwrap();
        assert_eq!(r.selected.len(), 4);
        assert!(r.selected.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(r.diverse.iter().all(|e| e.dim() == (4, 3)));
        for (grade, e) in GradeId::all().zip(&r.diverse) {
            for (row, s) in r.selected.iter().enumerate() {
                assert_eq!(e.row(row), lib.family(&s.family_id).unwrap().variant(grade).view());
            }
        }
    }

    #[test]
    fn gating_errors() {
        let lib = crate::prompts::fixtures::library(2, 3);
        assert!(matches!(gate_top_n(&lib, &[], 2), Err(Error::Empty(_))));
        let unlabeled = EmbeddingRecord::new("u", None, Array2::zeros((1, 1))).with_gating(arr1(&[1.0, 0.0, 0.0]));
        assert!(matches!(gate_top_n(&lib, [&unlabeled], 2), Err(Error::Unlabeled(_))));
        let no_gating = EmbeddingRecord::new("n", Some(g(0)), Array2::zeros((1, 1)));
        assert!(gate_top_n(&lib, [&no_gating], 2).is_err());
        let empty = PromptLibrary::new(3, vec![], diffs(3)).unwrap();
        assert!(matches!(
            gate_top_n(&empty, &[anchor("a", 0, vec![1.0, 0.0, 0.0])], 2),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn ties_break_by_family_id() {
        let same = vec![vec![1.0, 0.0]; 5];
        let fams = vec![family("b", same.clone()), family("a", same.clone()), family("c", same)];
        let lib = PromptLibrary::new(2, fams, diffs(2)).unwrap();
        let r = gate_top_n(&lib, &[anchor("x", 1, vec![0.2, 0.9])], 2).unwrap();
        assert_eq!(r.selected_ids(), ["a", "b"]);
    }

    proptest! {
        #[test]
        fn scores_strictly_inside_unit_interval(
            vals in proptest::collection::vec(0.1f64..10.0, 15),
            img in proptest::collection::vec(-5.0f64..5.0, 3),
            grade in 0i64..5,
        ) {
            prop_assume!(img.iter().any(|v| v.abs() > 1e-3));
            let f = family("f", vals.chunks(3).map(|c| c.to_vec()).collect());
            let s = discriminative_score(&f, ArrayView1::from(&img[..]), g(grade)).unwrap();
            prop_assert!(s > 0.0 && s < 1.0);
        }

        #[test]
        fn monotone_in_own_grade_cosine(t1 in 0.0f64..3.0, dt in 0.01f64..0.1) {
            // Rotating the own-grade variant toward the image raises its cosine.
            let img = [1.0, 0.0];
            let mut variants = vec![vec![0.3, 1.0]; 5];
            variants[0] = vec![(t1 + dt).cos(), (t1 + dt).sin()];
            let far = discriminative_score(&family("f", variants.clone()), ArrayView1::from(&img[..]), g(0)).unwrap();
            variants[0] = vec![t1.cos(), t1.sin()];
            let near = discriminative_score(&family("f", variants), ArrayView1::from(&img[..]), g(0)).unwrap();
            prop_assert!(near > far);
        }
    }
}
