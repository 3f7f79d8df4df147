use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

/// Epsilon inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: ArrayView2<f64>) -> Array2<f64> {
    let mut out = m.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Backward of [`softmax_rows`]: given the forward output and the upstream gradient.
pub(crate) fn softmax_rows_backward(probs: &Array2<f64>, grad: &Array2<f64>) -> Array2<f64> {
    let dot = (probs * grad).sum_axis(Axis(1)).insert_axis(Axis(1));
    probs * &(grad - &dot)
}

/// `(x - mean) / sqrt(var + eps)` with population variance and no affine.
pub fn layer_norm_row(x: ArrayView1<f64>, eps: f64) -> Array1<f64> {
    let (y, _) = layer_norm_row_with_scale(x, eps);
    y
}

/// Also returns `1 / sqrt(var + eps)` for the backward pass.
pub(crate) fn layer_norm_row_with_scale(x: ArrayView1<f64>, eps: f64) -> (Array1<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let centered = x.mapv(|v| v - mean);
    let var = centered.dot(&centered) / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    (centered * inv_std, inv_std)
}

/// Row-wise layer norm; returns outputs and the per-row inverse scales.
pub(crate) fn layer_norm_rows(m: &Array2<f64>, eps: f64) -> (Array2<f64>, Vec<f64>) {
    let mut out = Array2::zeros(m.raw_dim());
    let mut scales = Vec::with_capacity(m.nrows());
    for (i, row) in m.rows().into_iter().enumerate() {
        let (y, s) = layer_norm_row_with_scale(row, eps);
        out.row_mut(i).assign(&y);
        scales.push(s);
    }
    (out, scales)
}

pub(crate) fn layer_norm_rows_backward(y: &Array2<f64>, inv_std: &[f64], grad: &Array2<f64>) -> Array2<f64> {
    let n = y.ncols() as f64;
    let mut out = Array2::zeros(y.raw_dim());
    for (i, ((yr, gr), mut or)) in y
        .rows()
        .into_iter()
        .zip(grad.rows())
        .zip(out.rows_mut())
        .enumerate()
    {
        let mean_g = gr.sum() / n;
        let mean_gy = gr.dot(&yr) / n;
        let s = inv_std[i];
        for ((o, &g), &yv) in or.iter_mut().zip(gr.iter()).zip(yr.iter()) {
            *o = s * (g - mean_g - yv * mean_gy);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2};
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(arr2(&[[0.0, 0.0], [2f64.ln(), 0.0]]).view());
        assert_abs_diff_eq!(s, arr2(&[[0.5, 0.5], [2.0 / 3.0, 1.0 / 3.0]]), epsilon = 1e-15);
    }

    #[test]
    fn softmax_large_inputs_stay_finite() {
        let s = softmax_rows(arr2(&[[1000.0, 999.0, -1000.0]]).view());
        assert!(s.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(s.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn layer_norm_examples() {
        assert_eq!(layer_norm_row(arr1(&[0.0, 0.0, 0.0]).view(), LAYER_NORM_EPS), arr1(&[0.0, 0.0, 0.0]));
        let y = layer_norm_row(arr1(&[1.0, -1.0]).view(), LAYER_NORM_EPS);
        let s = 1.0 / (1.0 + LAYER_NORM_EPS).sqrt();
        assert_abs_diff_eq!(y, arr1(&[s, -s]), epsilon = 1e-15);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_abs_diff_eq!(sigmoid(1.0), 0.731_058_578_630_004_9, epsilon = 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert_abs_diff_eq!(sigmoid(-3.0) + sigmoid(3.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let x = arr2(&[[0.3, -1.2, 2.0, 0.7], [1e-3, 2e-3, -1e-3, 0.0]]);
        let w = arr2(&[[0.5, -0.1, 0.9, 1.3], [2.0, -1.0, 0.4, 0.2]]);
        let f = |m: &Array2<f64>| (&layer_norm_rows(m, LAYER_NORM_EPS).0 * &w).sum();
        let (y, s) = layer_norm_rows(&x, LAYER_NORM_EPS);
        let analytic = layer_norm_rows_backward(&y, &s, &w);
        let h = 1e-7;
        for idx in [(0, 0), (0, 3), (1, 1), (1, 2)] {
            let mut p = x.clone();
            p[idx] += h;
            let mut m = x.clone();
            m[idx] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert_abs_diff_eq!(analytic[idx], fd, epsilon = 1e-5 * fd.abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one_and_shift_invariant(
            row in proptest::collection::vec(-50.0f64..50.0, 1..8), shift in -100.0f64..100.0
        ) {
            let m = Array2::from_shape_vec((1, row.len()), row.clone()).unwrap();
            let s = softmax_rows(m.view());
            prop_assert!((s.sum() - 1.0).abs() < 1e-12);
            prop_assert!(s.iter().all(|&v| v >= 0.0));
            let shifted = softmax_rows(m.mapv(|v| v + shift).view());
            for (a, b) in s.iter().zip(shifted.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn layer_norm_centered(row in proptest::collection::vec(-1e3f64..1e3, 2..16)) {
            let y = layer_norm_row(ArrayView1::from(&row[..]), LAYER_NORM_EPS);
            prop_assert!(y.mean().unwrap().abs() < 1e-12);
        }
    }
}
