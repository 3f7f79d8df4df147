use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::grade::GradeId;
use crate::prototype::PrototypeSet;
use crate::store::EmbeddingRecord;

fn row_norms(m: ArrayView2<f64>, what: &str) -> Result<Array1<f64>> {
    let norms: Array1<f64> = m.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroNorm(format!("{what} token row {i}")));
    }
    Ok(norms)
}

/// Mean over token positions of the per-token cosine similarity.
pub fn similarity(query: ArrayView2<f64>, proto: ArrayView2<f64>) -> Result<f64> {
    if query.dim() != proto.dim() {
        return Err(Error::shape(
            "similarity",
            format!("{}x{}", proto.nrows(), proto.ncols()),
            format!("{}x{}", query.nrows(), query.ncols()),
        ));
    }
    let qn = row_norms(query, "query")?;
    let pn = row_norms(proto, "prototype")?;
    let total: f64 = query
        .rows()
        .into_iter()
        .zip(proto.rows())
        .zip(qn.iter().zip(pn.iter()))
        .map(|((q, p), (a, b))| q.dot(&p) / (a * b))
        .sum();
    Ok(total / query.nrows() as f64)
}

/// Similarity and its gradient with respect to `proto`.
fn similarity_with_grad(query: ArrayView2<f64>, proto: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    let sim = similarity(query, proto)?;
    let n = query.nrows() as f64;
    let mut grad = Array2::zeros(proto.raw_dim());
    for ((q, p), mut g) in query.rows().into_iter().zip(proto.rows()).zip(grad.rows_mut()) {
        let qn = q.dot(&q).sqrt();
        let pn2 = p.dot(&p);
        let pn = pn2.sqrt();
        let cos = q.dot(&p) / (qn * pn);
        for ((gv, &qv), &pv) in g.iter_mut().zip(q.iter()).zip(p.iter()) {
            *gv = (qv / (qn * pn) - cos * pv / pn2) / n;
        }
    }
    Ok((sim, grad))
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Cross-entropy of the temperature-scaled similarity logits.
pub fn loss_from_similarities(sims: &[f64], target: GradeId, tau: f64) -> f64 {
    let logits: Vec<f64> = sims.iter().map(|s| s / tau).collect();
    // Clamped: rounding can push the exact-zero case a hair below zero.
    (log_sum_exp(&logits) - logits[target.index()]).max(0.0)
}

pub fn classification_loss(query: &EmbeddingRecord, protos: &PrototypeSet, tau: f64) -> Result<f64> {
    let target = query.labeled_grade()?;
    let sims = protos
        .matrices()
        .iter()
        .map(|p| similarity(query.tokens.view(), p.view()))
        .collect::<Result<Vec<_>>>()?;
    Ok(loss_from_similarities(&sims, target, tau))
}

/// Loss for one query and its gradient with respect to every grade's prototype.
pub(crate) fn loss_and_grad(
    query: &EmbeddingRecord,
    protos: &PrototypeSet,
    tau: f64,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let target = query.labeled_grade()?;
    let mut sims = Vec::with_capacity(protos.matrices().len());
    let mut grads = Vec::with_capacity(protos.matrices().len());
    for p in protos.matrices() {
        let (s, g) = similarity_with_grad(query.tokens.view(), p.view())?;
        sims.push(s);
        grads.push(g);
    }
    let loss = loss_from_similarities(&sims, target, tau);
    let logits: Vec<f64> = sims.iter().map(|s| s / tau).collect();
    let lse = log_sum_exp(&logits);
    for (c, g) in grads.iter_mut().enumerate() {
        let p = (logits[c] - lse).exp();
        let d_logit = p - if c == target.index() { 1.0 } else { 0.0 };
        *g *= d_logit / tau;
    }
    Ok((loss, grads))
}
