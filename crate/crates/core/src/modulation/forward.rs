use ndarray::{Array1, Array2};

use super::features::SemanticFeatures;
use super::ops::{layer_norm_rows, sigmoid, softmax_rows, LAYER_NORM_EPS};
use super::params::ModulationParams;
use crate::error::{Error, Result};
use crate::prototype::{PrototypeSet, Stage};

/// Activations of one grade's injection stage.
#[derive(Debug, Clone)]
pub(crate) struct PsiGrade {
    pub base: Array2<f64>,
    pub diverse: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub attn: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct PsiTape {
    pub(crate) grades: Vec<PsiGrade>,
}

impl PsiTape {
    /// Attention weights (`n_s × n_div`) per grade.
    pub fn attention(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.grades.iter().map(|g| &g.attn)
    }
}

/// Activations of one grade's enhancement stage.
#[derive(Debug, Clone)]
pub(crate) struct DpeGrade {
    pub input: Array2<f64>,
    pub diff: Array2<f64>,
    /// Global token projected into text space.
    pub global_proj: Array1<f64>,
    pub alpha: Array1<f64>,
    /// `diff · wv2` before the adaptive weights.
    pub values_raw: Array2<f64>,
    pub v: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub attn: Array2<f64>,
    pub normed: Array2<f64>,
    pub inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DpeTape {
    pub(crate) grades: Vec<DpeGrade>,
}

impl DpeTape {
    pub fn attention(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.grades.iter().map(|g| &g.attn)
    }

    /// Layer-normalized attention outputs added to each grade's prototype.
    pub fn normalized_outputs(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.grades.iter().map(|g| &g.normed)
    }

    pub fn adaptive_weights(&self) -> impl Iterator<Item = &Array1<f64>> {
        self.grades.iter().map(|g| &g.alpha)
    }

    /// Global token of each injected prototype mapped into text space.
    pub fn global_projections(&self) -> impl Iterator<Item = &Array1<f64>> {
        self.grades.iter().map(|g| &g.global_proj)
    }
}

/// Everything the backward pass needs from a full PSI → DPE forward.
#[derive(Debug, Clone)]
pub struct ModulationTape {
    pub psi: PsiTape,
    pub dpe: DpeTape,
}

fn check_inputs(protos: &PrototypeSet, feats: &SemanticFeatures, params: &ModulationParams) -> Result<()> {
    params.check_shapes()?;
    if protos.d_v() != params.d_v() {
        return Err(Error::shape("prototype width vs params", params.d_v(), protos.d_v()));
    }
    if feats.d_t() != params.d_t() {
        return Err(Error::shape("text feature width vs params", params.d_t(), feats.d_t()));
    }
    Ok(())
}

fn scaled_attention(q: &Array2<f64>, k: &Array2<f64>, d_p: usize) -> Array2<f64> {
    let logits = q.dot(&k.t()) / (d_p as f64).sqrt();
    softmax_rows(logits.view())
}

/// First stage: residual attention from prototype tokens onto the gated prompt features.
pub fn psi_forward(
    protos: &PrototypeSet,
    feats: &SemanticFeatures,
    params: &ModulationParams,
) -> Result<(PrototypeSet, PsiTape)> {
    check_inputs(protos, feats, params)?;
    let d_p = params.d_p();
    let mut out = Vec::with_capacity(protos.matrices().len());
    let mut grades = Vec::with_capacity(protos.matrices().len());
    for (base, diverse) in protos.matrices().iter().zip(&feats.diverse) {
        let q = base.dot(&params.wq1);
        let k = diverse.dot(&params.wk1);
        let v = diverse.dot(&params.wv1);
        let attn = scaled_attention(&q, &k, d_p);
        out.push(base + &attn.dot(&v));
        grades.push(PsiGrade {
            base: base.clone(),
            diverse: diverse.clone(),
            q,
            k,
            v,
            attn,
        });
    }
    Ok((PrototypeSet::new(Stage::Psi, out)?, PsiTape { grades }))
}

fn grade_alpha(input: &Array2<f64>, diff: &Array2<f64>, params: &ModulationParams) -> (Array1<f64>, Array1<f64>) {
    let global_proj = input.row(0).dot(&params.wp);
    let scale = (params.d_t() as f64).sqrt();
    let alpha = diff.dot(&global_proj).mapv(|z| sigmoid(z / scale));
    (global_proj, alpha)
}

/// Per grade, the sigmoid weight of each differentiated description, from the projected
/// global token of the injected prototype.
pub fn adaptive_weights(
    protos: &PrototypeSet,
    feats: &SemanticFeatures,
    params: &ModulationParams,
) -> Result<Vec<Array1<f64>>> {
    check_inputs(protos, feats, params)?;
    Ok(protos
        .matrices()
        .iter()
        .zip(&feats.differentiated)
        .map(|(p, d)| grade_alpha(p, d, params).1)
        .collect())
}

/// Second stage: attention onto weighted differentiated descriptions, layer-normalized per
/// token and added residually.
pub fn dpe_forward(
    protos: &PrototypeSet,
    feats: &SemanticFeatures,
    params: &ModulationParams,
) -> Result<(PrototypeSet, DpeTape)> {
    check_inputs(protos, feats, params)?;
    let d_p = params.d_p();
    let mut out = Vec::with_capacity(protos.matrices().len());
    let mut grades = Vec::with_capacity(protos.matrices().len());
    for (input, diff) in protos.matrices().iter().zip(&feats.differentiated) {
        let (global_proj, alpha) = grade_alpha(input, diff, params);
        let values_raw = diff.dot(&params.wv2);
        let mut v = values_raw.clone();
        for (mut row, &a) in v.rows_mut().into_iter().zip(alpha.iter()) {
            row *= a;
        }
        let q = input.dot(&params.wq2);
        let k = diff.dot(&params.wk2);
        let attn = scaled_attention(&q, &k, d_p);
        let (normed, inv_std) = layer_norm_rows(&attn.dot(&v), LAYER_NORM_EPS);
        out.push(input + &normed);
        grades.push(DpeGrade {
            input: input.clone(),
            diff: diff.clone(),
            global_proj,
            alpha,
            values_raw,
            v,
            q,
            k,
            attn,
            normed,
            inv_std,
        });
    }
    Ok((PrototypeSet::new(Stage::Dpe, out)?, DpeTape { grades }))
}

/// Both stages in sequence.
pub fn modulate(
    base: &PrototypeSet,
    feats: &SemanticFeatures,
    params: &ModulationParams,
) -> Result<(PrototypeSet, ModulationTape)> {
    let (psi, psi_tape) = psi_forward(base, feats, params)?;
    let (dpe, dpe_tape) = dpe_forward(&psi, feats, params)?;
    Ok((
        dpe,
        ModulationTape {
            psi: psi_tape,
            dpe: dpe_tape,
        },
    ))
}
