//! Central finite-difference checks of the analytic gradients, run in f64.
//! Each check draws random parameters, inputs and a random linear read-out
//! of the layer output, so the scalar loss touches every output element.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    dense_backward, dense_forward, lstm_backward, lstm_forward_batch, prelu, prelu_backward,
};
use super::loss::softmax_cross_entropy;
use super::network::{Batch, Model};
use super::params::{DenseParams, LstmParams, ModelParams};
use super::ModelConfig;

pub const FD_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub tensor: String,
    pub error: f64,
}

pub fn max_error(checks: &[GradCheck]) -> f64 {
    checks.iter().map(|c| c.error).fold(0.0, f64::max)
}

/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every coordinate.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `||a - n|| / max(||a||, ||n||)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn check(name: &str, x: &[f64], analytic: &[f64], f: impl FnMut(&[f64]) -> f64) -> GradCheck {
    let numeric = numeric_gradient(f, x, FD_EPS);
    GradCheck {
        tensor: name.to_string(),
        error: relative_error(analytic, &numeric),
    }
}

fn random2(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.gen_range(-scale..scale))
}

fn random1(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.gen_range(-scale..scale))
}

fn set2(a: &Array2<f64>, v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec(a.raw_dim(), v.to_vec()).expect("same size")
}

fn set1(v: &[f64]) -> Array1<f64> {
    Array1::from_vec(v.to_vec())
}

fn s(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

/// One LSTM layer unrolled over `steps` for a batch, loss `sum(R * H)`.
pub fn check_lstm(seed: u64, steps: usize, input: usize, hidden: usize, batch: usize) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = LstmParams {
        w: random2(&mut rng, 4 * hidden, input, 0.6),
        u: random2(&mut rng, 4 * hidden, hidden, 0.6),
        b: random1(&mut rng, 4 * hidden, 0.5),
    };
    let x = random2(&mut rng, steps * batch, input, 1.0);
    let r = random2(&mut rng, steps * batch, hidden, 1.0);
    let loss = |p: &LstmParams<f64>, x: &Array2<f64>| {
        let (h, _) = lstm_forward_batch(p, x.view(), steps, batch);
        (&h * &r).sum()
    };
    let (_, cache) = lstm_forward_batch(&p, x.view(), steps, batch);
    let (dx, g) = lstm_backward(&p, &cache, x.view(), r.view());
    vec![
        check("lstm.w", s(&p.w), s(&g.w), |v| {
            loss(&LstmParams { w: set2(&p.w, v), ..p.clone() }, &x)
        }),
        check("lstm.u", s(&p.u), s(&g.u), |v| {
            loss(&LstmParams { u: set2(&p.u, v), ..p.clone() }, &x)
        }),
        check("lstm.b", p.b.as_slice().unwrap(), g.b.as_slice().unwrap(), |v| {
            loss(&LstmParams { b: set1(v), ..p.clone() }, &x)
        }),
        check("lstm.x", s(&x), s(&dx), |v| loss(&p, &set2(&x, v))),
    ]
}

/// Affine layer, loss `sum(R * (x W^T + b))`.
pub fn check_dense(seed: u64, n: usize, input: usize, output: usize) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = DenseParams {
        w: random2(&mut rng, output, input, 1.0),
        b: random1(&mut rng, output, 1.0),
    };
    let x = random2(&mut rng, n, input, 1.0);
    let r = random2(&mut rng, n, output, 1.0);
    let loss = |p: &DenseParams<f64>, x: &Array2<f64>| (&dense_forward(p, x.view()) * &r).sum();
    let (dx, g) = dense_backward(&p, x.view(), r.view());
    vec![
        check("dense.w", s(&p.w), s(&g.w), |v| {
            loss(&DenseParams { w: set2(&p.w, v), b: p.b.clone() }, &x)
        }),
        check("dense.b", p.b.as_slice().unwrap(), g.b.as_slice().unwrap(), |v| {
            loss(&DenseParams { w: p.w.clone(), b: set1(v) }, &x)
        }),
        check("dense.x", s(&x), s(&dx), |v| loss(&p, &set2(&x, v))),
    ]
}

/// PReLU, loss `sum(R * prelu(x, a))`. Inputs are kept away from the kink.
pub fn check_prelu(seed: u64, n: usize, width: usize) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: f64 = rng.gen_range(0.05..0.6);
    let x = Array2::from_shape_simple_fn((n, width), || {
        let m: f64 = rng.gen_range(0.05..2.0);
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    });
    let r = random2(&mut rng, n, width, 1.0);
    let loss = |x: &Array2<f64>, a: f64| (&prelu(x.view(), a) * &r).sum();
    let (dx, da) = prelu_backward(x.view(), a, r.view());
    vec![
        check("prelu.x", s(&x), s(&dx), |v| loss(&set2(&x, v), a)),
        check("prelu.a", &[a], &[da], |v| loss(&x, v[0])),
    ]
}

/// Mean softmax cross-entropy with respect to the logits.
pub fn check_softmax_ce(seed: u64, n: usize, classes: usize) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = random2(&mut rng, n, classes, 3.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let (_, g) = softmax_cross_entropy(logits.view(), &labels);
    vec![check("softmax_ce.logits", s(&logits), s(&g), |v| {
        softmax_cross_entropy(set2(&logits, v).view(), &labels).0
    })]
}

/// Whole network end to end: every parameter tensor of a freshly seeded model.
pub fn check_model(config: &ModelConfig, seed: u64, n: usize) -> Vec<GradCheck> {
    let model = Model::<f64>::new(config.clone()).expect("valid config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = config.architecture.input_len();
    let rows = match config.architecture {
        super::Architecture::Lstm { steps, .. } => steps,
        super::Architecture::Dnn { .. } => 1,
    };
    let batch = Batch {
        x: random2(&mut rng, rows * n, len / rows, 1.0),
        labels: (0..n)
            .map(|_| rng.gen_range(0..config.architecture.output()))
            .collect(),
        size: n,
    };
    let (_, grads, _) = model.loss_and_grad(&batch, None);
    let names = model.params.manifest();
    let values: Vec<Vec<f64>> = model.params.slices().iter().map(|s| s.to_vec()).collect();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let mut out = Vec::new();
    for (k, (name, _)) in names.iter().enumerate() {
        let f = |v: &[f64]| {
            let mut p: ModelParams<f64> = model.params.clone();
            p.slices_mut()[k].copy_from_slice(v);
            let m = Model {
                config: config.clone(),
                params: p,
            };
            let logits = m.logits(&batch);
            softmax_cross_entropy(logits.view(), &batch.labels).0
        };
        out.push(check(name, &values[k], &analytic[k], f));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Architecture;

    #[test]
    fn oracle_sees_a_wrong_gradient() {
        let x = [0.3, -1.2, 2.0];
        let f = |v: &[f64]| v.iter().map(|a| a.powi(3)).sum::<f64>();
        let n = numeric_gradient(f, &x, FD_EPS);
        let good: Vec<f64> = x.iter().map(|a| 3.0 * a * a).collect();
        assert!(relative_error(&good, &n) < 1e-9);
        let bad: Vec<f64> = x.iter().map(|a| 2.0 * a * a).collect();
        assert!(relative_error(&bad, &n) > 0.1);
    }

    #[test]
    fn lstm_twenty_steps() {
        for seed in 0..3 {
            let e = max_error(&check_lstm(seed, 20, 5, 4, 2));
            assert!(e < 1e-4, "seed {seed}: {e}");
        }
    }

    #[test]
    fn dense_prelu_softmax() {
        for seed in 0..5 {
            assert!(max_error(&check_dense(seed, 3, 6, 4)) < 1e-6);
            assert!(max_error(&check_prelu(seed, 3, 7)) < 1e-6);
            assert!(max_error(&check_softmax_ce(seed, 4, 6)) < 1e-6);
        }
    }

    #[test]
    fn whole_networks() {
        let lstm = ModelConfig::new(
            Architecture::Lstm {
                steps: 6,
                input_width: 3,
                lstm_units: vec![4, 3],
                dense: vec![5, 4],
                output: 6,
            },
            2,
        );
        let dnn = ModelConfig::new(
            Architecture::Dnn {
                input_width: 8,
                dense: vec![6, 5],
                output: 6,
            },
            2,
        );
        let e = max_error(&check_model(&lstm, 1, 3));
        assert!(e < 1e-4, "{e}");
        let e = max_error(&check_model(&dnn, 1, 3));
        assert!(e < 1e-6, "{e}");
    }
}
