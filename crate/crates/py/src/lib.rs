//! Python bindings. Matrices cross the boundary as nested lists and structured results as
//! plain dicts and lists.

use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use hapm_core::anchors::{select_anchors as core_select_anchors, AnchorSelection, DEFAULT_ALPHA};
use hapm_core::gating::{confusion_matrix, family_scores, gate_top_n, DEFAULT_N_DIV};
use hapm_core::metrics::{evaluate as core_evaluate, predict_all};
use hapm_core::pipeline::{enhanced_prototypes, holdout_split, prepare_with_anchors};
use hapm_core::store::{self, Checkpoint, EmbeddingRecord};
use hapm_core::synth::{self, SynthConfig};
use hapm_core::trainer::{self, model_dims, TrainConfig, TrainReport};
use hapm_core::{Error, GradeId};

const HOLDOUT_FRACTION: f64 = 0.2;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn matrix(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("{what}: rows have different lengths")));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn parse_train_config(config: Option<&str>) -> PyResult<TrainConfig> {
    config.map_or(Ok(TrainConfig::default()), |t| TrainConfig::parse(t).map_err(err))
}

/// A validated set of token-embedding records.
#[pyclass(module = "hapm", skip_from_py_object)]
#[derive(Clone)]
pub struct EmbeddingSet {
    inner: store::EmbeddingSet,
}

#[pymethods]
impl EmbeddingSet {
    /// Reads a manifest and its `.bin` blob.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(EmbeddingSet {
            inner: store::load_embedding_set(path).map_err(err)?,
        })
    }

    /// Builds a set from `(id, grade or None, tokens, gating or None)` tuples.
    #[staticmethod]
    #[pyo3(signature = (n_s, d_v, d_t, records))]
    #[allow(clippy::type_complexity)]
    fn from_records(
        n_s: usize,
        d_v: usize,
        d_t: usize,
        records: Vec<(String, Option<i64>, Vec<Vec<f64>>, Option<Vec<f64>>)>,
    ) -> PyResult<Self> {
        let mut out = Vec::with_capacity(records.len());
        for (id, grade, tokens, gating) in records {
            let grade = grade.map(GradeId::new).transpose().map_err(err)?;
            let mut rec = EmbeddingRecord::new(id.clone(), grade, matrix(tokens, &id)?);
            if let Some(g) = gating {
                rec = rec.with_gating(Array1::from(g));
            }
            out.push(rec);
        }
        Ok(EmbeddingSet {
            inner: store::EmbeddingSet::new(n_s, d_v, d_t, out).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        store::save_embedding_set(&self.inner, path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "EmbeddingSet(records={}, n_s={}, d_v={}, d_t={})",
            self.inner.len(),
            self.inner.n_s(),
            self.inner.d_v(),
            self.inner.d_t()
        )
    }

    #[getter]
    fn n_s(&self) -> usize {
        self.inner.n_s()
    }

    #[getter]
    fn d_v(&self) -> usize {
        self.inner.d_v()
    }

    #[getter]
    fn d_t(&self) -> usize {
        self.inner.d_t()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.iter().map(|r| r.id.clone()).collect()
    }

    fn grades(&self) -> Vec<Option<u8>> {
        self.inner.iter().map(|r| r.grade.map(GradeId::value)).collect()
    }

    fn tokens(&self, id: &str) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.record(id)?.tokens))
    }

    fn gating(&self, id: &str) -> PyResult<Option<Vec<f64>>> {
        Ok(self.record(id)?.gating.as_ref().map(|g| g.to_vec()))
    }

    fn subset(&self, ids: Vec<String>) -> PyResult<Self> {
        Ok(EmbeddingSet {
            inner: self.inner.subset(&ids).map_err(err)?,
        })
    }
}

impl EmbeddingSet {
    fn record(&self, id: &str) -> PyResult<&EmbeddingRecord> {
        self.inner
            .get(id)
            .ok_or_else(|| PyValueError::new_err(format!("unknown record id `{id}`")))
    }
}

/// Prompt families with five grade variants each, plus adjacent-grade diff embeddings.
#[pyclass(module = "hapm", skip_from_py_object)]
#[derive(Clone)]
pub struct PromptLibrary {
    inner: hapm_core::prompts::PromptLibrary,
}

#[pymethods]
impl PromptLibrary {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PromptLibrary {
            inner: store::load_prompt_library(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        store::save_prompt_library(&self.inner, path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.families().len()
    }

    fn __repr__(&self) -> String {
        format!("PromptLibrary(families={}, d_t={})", self.inner.families().len(), self.inner.d_t())
    }

    #[getter]
    fn d_t(&self) -> usize {
        self.inner.d_t()
    }

    fn family_ids(&self) -> Vec<String> {
        self.inner.families().iter().map(|f| f.family_id.clone()).collect()
    }

    fn summary(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.summary())
    }

    /// 5x5 grade confusion degrees over all families.
    fn confusion_matrix(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&confusion_matrix(&self.inner).map_err(err)?))
    }
}

/// A trained (or loaded) model: base prototypes, gated text features and projections.
#[pyclass(module = "hapm")]
pub struct Model {
    ck: Checkpoint,
    report: Option<TrainReport>,
}

#[pymethods]
impl Model {
    /// Selects anchors from `pool`, gates `library` and trains the projections.
    ///
    /// Without `val`, a fifth of the non-anchor records is held out for validation.
    /// `config` is TOML text with training options.
    #[staticmethod]
    #[pyo3(signature = (pool, library, val=None, alpha=DEFAULT_ALPHA, n_div=DEFAULT_N_DIV, config=None))]
    fn train(
        py: Python<'_>,
        pool: &EmbeddingSet,
        library: &PromptLibrary,
        val: Option<&EmbeddingSet>,
        alpha: usize,
        n_div: usize,
        config: Option<&str>,
    ) -> PyResult<Self> {
        let cfg = parse_train_config(config)?;
        let pool = &pool.inner;
        let library = &library.inner;
        let val = val.map(|v| &v.inner);
        py.detach(|| {
            let anchors = core_select_anchors(pool, alpha)?;
            let (train_set, val_set) = match val {
                Some(v) => (pool.clone(), v.clone()),
                None => holdout_split(pool, HOLDOUT_FRACTION, cfg.seed, &anchors.all_ids())?,
            };
            let prep = prepare_with_anchors(pool, library, anchors, n_div)?;
            let (params, report) = trainer::train(&train_set, &val_set, &prep.base, &prep.features, &cfg)?;
            Ok(Model {
                ck: Checkpoint {
                    dims: model_dims(&prep.base, &prep.features, cfg.proj_dim),
                    tau: cfg.tau,
                    params,
                    selected_families: prep.gating.selected_ids().iter().map(|s| s.to_string()).collect(),
                    base: prep.base,
                    features: prep.features,
                    anchors: prep.anchors,
                },
                report: Some(report),
            })
        })
        .map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Model {
            ck: store::load_checkpoint(path).map_err(err)?,
            report: None,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        store::save_checkpoint(&self.ck, path).map_err(err)
    }

    /// Training history, or `None` for a loaded checkpoint.
    #[getter]
    fn report(&self, py: Python<'_>) -> PyResult<Option<Py<PyAny>>> {
        self.report.as_ref().map(|r| to_py(py, r)).transpose()
    }

    #[getter]
    fn selected_families(&self) -> Vec<String> {
        self.ck.selected_families.clone()
    }

    #[getter]
    fn anchors(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.ck.anchors)
    }

    /// Per-grade prototype matrices; `base=True` skips modulation.
    #[pyo3(signature = (base=false))]
    fn prototypes(&self, base: bool) -> PyResult<Vec<Vec<Vec<f64>>>> {
        Ok(self.protos(base)?.matrices().iter().map(rows).collect())
    }

    /// Accuracy, macro-F1, per-class scores and confusion counts.
    #[pyo3(signature = (set, base=false))]
    fn evaluate(&self, py: Python<'_>, set: &EmbeddingSet, base: bool) -> PyResult<Py<PyAny>> {
        let report = core_evaluate(&set.inner, &self.protos(base)?).map_err(err)?;
        to_py(py, &report)
    }

    /// One `{id, predicted, similarities}` dict per record.
    #[pyo3(signature = (set, base=false))]
    fn predict(&self, py: Python<'_>, set: &EmbeddingSet, base: bool) -> PyResult<Py<PyAny>> {
        let preds = predict_all(&set.inner, &self.protos(base)?).map_err(err)?;
        to_py(py, &preds)
    }
}

impl Model {
    fn protos(&self, base: bool) -> PyResult<hapm_core::PrototypeSet> {
        if base {
            Ok(self.ck.base.clone())
        } else {
            enhanced_prototypes(&self.ck.base, &self.ck.features, &self.ck.params).map_err(err)
        }
    }
}

/// Generates a seeded synthetic dataset. Returns `(train, val, test, library)`.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn generate(config: Option<&str>) -> PyResult<(EmbeddingSet, EmbeddingSet, EmbeddingSet, PromptLibrary)> {
    let cfg = config.map_or(Ok(SynthConfig::default()), SynthConfig::parse).map_err(err)?;
    let data = synth::generate(&cfg).map_err(err)?;
    Ok((
        EmbeddingSet { inner: data.train },
        EmbeddingSet { inner: data.val },
        EmbeddingSet { inner: data.test },
        PromptLibrary { inner: data.library },
    ))
}

/// The `alpha` lowest-variance records of every grade, with their scores.
#[pyfunction]
#[pyo3(signature = (set, alpha=DEFAULT_ALPHA))]
fn select_anchors(py: Python<'_>, set: &EmbeddingSet, alpha: usize) -> PyResult<Py<PyAny>> {
    to_py(py, &core_select_anchors(&set.inner, alpha).map_err(err)?)
}

/// Scores every family on `anchors` and returns the top `n_div` as `{family_id, score}`.
/// `selection` (output of `select_anchors`) restricts the set to those ids first.
#[pyfunction]
#[pyo3(signature = (library, anchors, n_div=DEFAULT_N_DIV, selection=None, all_scores=false))]
fn gate(
    py: Python<'_>,
    library: &PromptLibrary,
    anchors: &EmbeddingSet,
    n_div: usize,
    selection: Option<Bound<'_, PyAny>>,
    all_scores: bool,
) -> PyResult<Py<PyAny>> {
    let set = match selection {
        Some(sel) => {
            let text: String = py.import("json")?.call_method1("dumps", (sel,))?.extract()?;
            let sel: AnchorSelection =
                serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("selection: {e}")))?;
            anchors.inner.subset(&sel.all_ids()).map_err(err)?
        }
        None => anchors.inner.clone(),
    };
    if all_scores {
        to_py(py, &family_scores(&library.inner, &set).map_err(err)?)
    } else {
        to_py(py, &gate_top_n(&library.inner, &set, n_div).map_err(err)?.selected)
    }
}

/// Mean per-token cosine between two token matrices of equal shape.
#[pyfunction]
fn similarity(query: Vec<Vec<f64>>, prototype: Vec<Vec<f64>>) -> PyResult<f64> {
    let q = matrix(query, "query")?;
    let p = matrix(prototype, "prototype")?;
    trainer::similarity(q.view(), p.view()).map_err(err)
}

/// Test accuracy of base prototypes built from training anchors of a synthetic dataset.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn synth_baseline_accuracy(config: Option<&str>) -> PyResult<f64> {
    let cfg = config.map_or(Ok(SynthConfig::default()), SynthConfig::parse).map_err(err)?;
    synth::baseline_accuracy(&synth::generate(&cfg).map_err(err)?).map_err(err)
}

#[pymodule]
fn hapm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<EmbeddingSet>()?;
    m.add_class::<PromptLibrary>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(select_anchors, m)?)?;
    m.add_function(wrap_pyfunction!(gate, m)?)?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    m.add_function(wrap_pyfunction!(synth_baseline_accuracy, m)?)?;
    m.add("NUM_GRADES", hapm_core::NUM_GRADES)?;
    Ok(())
}
