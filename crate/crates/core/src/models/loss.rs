use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::Real;

/// Numerically stable softmax of one logit row.
pub fn softmax<T: Real>(logits: ArrayView1<T>) -> Array1<T> {
    let max = logits.fold(T::neg_infinity(), |m, &v| m.max(v));
    let e = logits.mapv(|v| (v - max).exp());
    let sum = e.sum();
    e / sum
}

/// Mean cross-entropy over the batch and its gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Real>(logits: ArrayView2<T>, labels: &[usize]) -> (T, Array2<T>) {
    assert_eq!(logits.nrows(), labels.len(), "one label per row");
    let n = T::from_usize(labels.len()).expect("batch size");
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = T::zero();
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = row.fold(T::zero(), |s, &v| s + (v - max).exp()).ln() + max;
        loss = loss + lse - row[y];
        for (k, &v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            let target = if k == y { T::one() } else { T::zero() };
            grad[[r, k]] = (p - target) / n;
        }
    }
    (loss / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_logits_cost_ln_k() {
        let (l, g) = softmax_cross_entropy(Array2::<f64>::zeros((1, 6)).view(), &[2]);
        assert!((l - 6f64.ln()).abs() < 1e-12);
        assert!((g[[0, 2]] + 5.0 / 6.0).abs() < 1e-12);
        assert!((g[[0, 0]] - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn huge_logits_stay_finite() {
        let (l, g) = softmax_cross_entropy(array![[1000.0f32, -1000.0, 0.0]].view(), &[0]);
        assert!(l.is_finite() && l.abs() < 1e-6);
        assert!(g.iter().all(|v| v.is_finite()));
        let p = softmax(array![1000.0f32, 1000.0].view());
        assert_eq!(p, array![0.5, 0.5]);
    }
}
