
use super::params::ModelParams;
use super::Real;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub t: u64,
    /// L2 penalty folded into the gradient (0 = off).
    pub weight_decay: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            weight_decay: 0.0,
        }
    }
}

/// One bias-corrected Adam update. Refuses non-finite gradients and leaves
/// the parameters untouched in that case.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    for ((name, _), g) in params.manifest().into_iter().zip(grads.slices()) {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = T::from_f64_lossy(ADAM_BETA1);
    let b2 = T::from_f64_lossy(ADAM_BETA2);
    let one = T::one();
    let c1 = T::from_f64_lossy(1.0 - ADAM_BETA1.powi(t));
    let c2 = T::from_f64_lossy(1.0 - ADAM_BETA2.powi(t));
    let lr = T::from_f64_lossy(lr);
    let eps = T::from_f64_lossy(ADAM_EPS);
    let wd = T::from_f64_lossy(state.weight_decay);
    let gs = grads.slices();
    let ms = state.m.slices_mut();
    let vs = state.v.slices_mut();
    for (((p, g), m), v) in params.slices_mut().into_iter().zip(gs).zip(ms).zip(vs) {
        for i in 0..p.len() {
            let gi = g[i] + wd * p[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] = p[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Architecture;

    fn tiny() -> ModelParams<f64> {
        ModelParams::init(
            &Architecture::Dnn {
                input_width: 3,
                dense: vec![2],
                output: 2,
            },
            0,
        )
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = tiny();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.output.w[[0, 0]] = 0.3;
        g.output.w[[1, 1]] = -2.0;
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, 1e-3).unwrap();
        // m_hat = g and v_hat = g^2 after one step.
        let d0 = p.output.w[[0, 0]] - before.output.w[[0, 0]];
        let d1 = p.output.w[[1, 1]] - before.output.w[[1, 1]];
        assert!((d0 + 1e-3 * 0.3 / (0.3 + 1e-8)).abs() < 1e-15);
        assert!((d1 - 1e-3 * 2.0 / (2.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(p.output.w[[0, 1]], before.output.w[[0, 1]]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn second_step_matches_recurrence() {
        let mut p = tiny();
        let x0 = p.output.b[0];
        let mut st = AdamState::new(&p);
        let mut g = p.zeros_like();
        g.output.b[0] = 1.0;
        adam_step(&mut p, &g, &mut st, 0.1).unwrap();
        g.output.b[0] = -1.0;
        adam_step(&mut p, &g, &mut st, 0.1).unwrap();
        let m = 0.9 * 0.1 - 0.1;
        let v = 0.999 * 0.001 + 0.001;
        let step2 = 0.1 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        let expect = x0 - 0.1 * 1.0 / (1.0 + 1e-8) - step2;
        assert!((p.output.b[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut p = tiny();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.dense[0].b[1] = f64::NAN;
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &g, &mut st, 1e-3).unwrap_err();
        assert!(err.to_string().contains("dense0.b"));
        assert_eq!(p, before);
        assert_eq!(st.t, 0);
    }
}
