use ndarray::{Array1, Array2, Axis};

use super::forward::ModulationTape;
use super::ops::{layer_norm_rows_backward, softmax_rows_backward};
use super::params::ModulationParams;
use crate::error::{Error, Result};

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    a.view().insert_axis(Axis(1)).dot(&b.view().insert_axis(Axis(0)))
}

/// Gradients of all seven projections given `grad_out`, the loss gradient with respect to
/// each grade's final prototype.
pub fn modulation_backward(
    tape: &ModulationTape,
    params: &ModulationParams,
    grad_out: &[Array2<f64>],
) -> Result<ModulationParams> {
    if grad_out.len() != tape.dpe.grades.len() || tape.psi.grades.len() != tape.dpe.grades.len() {
        return Err(Error::shape("gradient grades", tape.dpe.grades.len(), grad_out.len()));
    }
    let d_p = params.d_p() as f64;
    let att_scale = 1.0 / d_p.sqrt();
    let alpha_scale = 1.0 / (params.d_t() as f64).sqrt();
    let mut grads = ModulationParams {
        wq1: Array2::zeros(params.wq1.raw_dim()),
        wk1: Array2::zeros(params.wk1.raw_dim()),
        wv1: Array2::zeros(params.wv1.raw_dim()),
        wq2: Array2::zeros(params.wq2.raw_dim()),
        wk2: Array2::zeros(params.wk2.raw_dim()),
        wv2: Array2::zeros(params.wv2.raw_dim()),
        wp: Array2::zeros(params.wp.raw_dim()),
    };

    for ((psi, dpe), g_out) in tape.psi.grades.iter().zip(&tape.dpe.grades).zip(grad_out) {
        if g_out.dim() != dpe.input.dim() {
            return Err(Error::shape(
                "gradient of prototype",
                format!("{}x{}", dpe.input.nrows(), dpe.input.ncols()),
                format!("{}x{}", g_out.nrows(), g_out.ncols()),
            ));
        }

        // Enhancement stage.
        let mut d_input = g_out.clone();
        let d_att_out = layer_norm_rows_backward(&dpe.normed, &dpe.inv_std, g_out);
        let d_attn = d_att_out.dot(&dpe.v.t());
        let d_v = dpe.attn.t().dot(&d_att_out);
        let d_logits = softmax_rows_backward(&dpe.attn, &d_attn);
        let d_q = d_logits.dot(&dpe.k) * att_scale;
        let d_k = d_logits.t().dot(&dpe.q) * att_scale;
        grads.wq2 += &dpe.input.t().dot(&d_q);
        d_input += &d_q.dot(&params.wq2.t());
        grads.wk2 += &dpe.diff.t().dot(&d_k);

        let mut d_values_raw = d_v.clone();
        let mut d_alpha = Array1::zeros(dpe.alpha.len());
        for (j, &a) in dpe.alpha.iter().enumerate() {
            d_values_raw.row_mut(j).mapv_inplace(|x| x * a);
            d_alpha[j] = d_v.row(j).dot(&dpe.values_raw.row(j));
        }
        grads.wv2 += &dpe.diff.t().dot(&d_values_raw);

        let d_z = &d_alpha * &dpe.alpha.mapv(|a| a * (1.0 - a)) * alpha_scale;
        let d_proj = dpe.diff.t().dot(&d_z);
        grads.wp += &outer(&dpe.input.row(0).to_owned(), &d_proj);
        let d_global = params.wp.dot(&d_proj);
        {
            let mut row0 = d_input.row_mut(0);
            row0 += &d_global;
        }

        // Injection stage. The base prototypes are constants.
        let d_attn1 = d_input.dot(&psi.v.t());
        let d_v1 = psi.attn.t().dot(&d_input);
        let d_logits1 = softmax_rows_backward(&psi.attn, &d_attn1);
        let d_q1 = d_logits1.dot(&psi.k) * att_scale;
        let d_k1 = d_logits1.t().dot(&psi.q) * att_scale;
        grads.wq1 += &psi.base.t().dot(&d_q1);
        grads.wk1 += &psi.diverse.t().dot(&d_k1);
        grads.wv1 += &psi.diverse.t().dot(&d_v1);
    }
    Ok(grads)
}
