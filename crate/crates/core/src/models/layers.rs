use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::params::{DenseParams, LstmParams};
use super::Real;

/// Matrix products may come back column-major; slices need row-major.
fn standard<T: Real>(a: Array2<T>) -> Array2<T> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Activations kept from the forward pass, rows laid out `t * batch + b`.
#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    pub steps: usize,
    pub batch: usize,
    /// Post-activation gates `[i, f, g, o]`, `(steps * batch, 4 * hidden)`.
    pub gates: Array2<T>,
    pub c: Array2<T>,
    pub tanh_c: Array2<T>,
    pub h: Array2<T>,
}

/// Runs one LSTM layer over a time-major batch `x` of shape `(steps * batch, input)`
/// from a zero state. Returns every hidden state, `(steps * batch, hidden)`.
pub fn lstm_forward_batch<T: Real>(
    p: &LstmParams<T>,
    x: ArrayView2<T>,
    steps: usize,
    batch: usize,
) -> (Array2<T>, LstmCache<T>) {
    let hid = p.hidden();
    let rows = steps * batch;
    assert_eq!(x.nrows(), rows, "input rows must be steps * batch");
    let mut gates = standard(x.dot(&p.w.t()));
    gates += &p.b;
    let mut c = Array2::<T>::zeros((rows, hid));
    let mut tanh_c = Array2::<T>::zeros((rows, hid));
    let mut h = Array2::<T>::zeros((rows, hid));
    for t in 0..steps {
        let (r0, r1) = (t * batch, (t + 1) * batch);
        if t > 0 {
            let prev = h.slice(s![r0 - batch..r0, ..]);
            let mut g = gates.slice_mut(s![r0..r1, ..]);
            general_mat_mul(T::one(), &prev, &p.u.t(), T::one(), &mut g);
        }
        let gs = gates.as_slice_mut().expect("standard layout");
        let cs = c.as_slice_mut().expect("standard layout");
        let ts = tanh_c.as_slice_mut().expect("standard layout");
        let hs = h.as_slice_mut().expect("standard layout");
        for r in r0..r1 {
            let g = &mut gs[r * 4 * hid..(r + 1) * 4 * hid];
            for j in 0..hid {
                let i = sigmoid(g[j]);
                let f = sigmoid(g[hid + j]);
                let gg = g[2 * hid + j].tanh();
                let o = sigmoid(g[3 * hid + j]);
                g[j] = i;
                g[hid + j] = f;
                g[2 * hid + j] = gg;
                g[3 * hid + j] = o;
                let c_prev = if t > 0 { cs[(r - batch) * hid + j] } else { T::zero() };
                let cc = f * c_prev + i * gg;
                let tc = cc.tanh();
                cs[r * hid + j] = cc;
                ts[r * hid + j] = tc;
                hs[r * hid + j] = o * tc;
            }
        }
    }
    let cache = LstmCache {
        steps,
        batch,
        gates,
        c,
        tanh_c,
        h: h.clone(),
    };
    (h, cache)
}

/// Single sequence `(steps, input)` to hidden states `(steps, hidden)`.
pub fn lstm_forward<T: Real>(p: &LstmParams<T>, x: ArrayView2<T>) -> Array2<T> {
    let steps = x.nrows();
    lstm_forward_batch(p, x, steps, 1).0
}

/// Backpropagation through time. `dh` is the loss gradient with respect to
/// every hidden state. Returns the input gradient and parameter gradients.
pub fn lstm_backward<T: Real>(
    p: &LstmParams<T>,
    cache: &LstmCache<T>,
    x: ArrayView2<T>,
    dh: ArrayView2<T>,
) -> (Array2<T>, LstmParams<T>) {
    let hid = p.hidden();
    let (steps, batch) = (cache.steps, cache.batch);
    let rows = steps * batch;
    let one = T::one();
    let mut dg = Array2::<T>::zeros((rows, 4 * hid));
    let mut dh_next = Array2::<T>::zeros((batch, hid));
    let mut dc_next = vec![T::zero(); batch * hid];
    let gs = cache.gates.as_slice().expect("standard layout");
    let cs = cache.c.as_slice().expect("standard layout");
    let ts = cache.tanh_c.as_slice().expect("standard layout");
    let dh_in = dh.as_standard_layout();
    let dhs = dh_in.as_slice().expect("standard layout");
    for t in (0..steps).rev() {
        {
            let dgs = dg.as_slice_mut().expect("standard layout");
            let dns = dh_next.as_slice().expect("standard layout");
            for b in 0..batch {
                let r = t * batch + b;
                let g = &gs[r * 4 * hid..(r + 1) * 4 * hid];
                let d = &mut dgs[r * 4 * hid..(r + 1) * 4 * hid];
                for j in 0..hid {
                    let (i, f, gg, o) = (g[j], g[hid + j], g[2 * hid + j], g[3 * hid + j]);
                    let tc = ts[r * hid + j];
                    let c_prev = if t > 0 { cs[(r - batch) * hid + j] } else { T::zero() };
                    let dhv = dhs[r * hid + j] + dns[b * hid + j];
                    let d_o = dhv * tc;
                    let dc = dhv * o * (one - tc * tc) + dc_next[b * hid + j];
                    dc_next[b * hid + j] = dc * f;
                    d[j] = dc * gg * i * (one - i);
                    d[hid + j] = dc * c_prev * f * (one - f);
                    d[2 * hid + j] = dc * i * (one - gg * gg);
                    d[3 * hid + j] = d_o * o * (one - o);
                }
            }
        }
        if t > 0 {
            let dgt = dg.slice(s![t * batch..(t + 1) * batch, ..]);
            general_mat_mul(one, &dgt, &p.u, T::zero(), &mut dh_next);
        }
    }
    let dw = standard(dg.t().dot(&x));
    let du = if steps > 1 {
        standard(
            dg.slice(s![batch.., ..])
                .t()
                .dot(&cache.h.slice(s![..rows - batch, ..])),
        )
    } else {
        Array2::zeros(p.u.raw_dim())
    };
    let db = dg.sum_axis(Axis(0));
    let dx = dg.dot(&p.w);
    (dx, LstmParams { w: dw, u: du, b: db })
}

/// `y = x W^T + b` for a batch `(n, in)`.
pub fn dense_forward<T: Real>(p: &DenseParams<T>, x: ArrayView2<T>) -> Array2<T> {
    let mut y = x.dot(&p.w.t());
    y += &p.b;
    y
}

pub fn dense_backward<T: Real>(
    p: &DenseParams<T>,
    x: ArrayView2<T>,
    dy: ArrayView2<T>,
) -> (Array2<T>, DenseParams<T>) {
    let dw = standard(dy.t().dot(&x));
    let db = dy.sum_axis(Axis(0));
    (dy.dot(&p.w), DenseParams { w: dw, b: db })
}

/// `max(0, x) + a * min(0, x)`
pub fn prelu<T: Real>(x: ArrayView2<T>, a: T) -> Array2<T> {
    x.mapv(|v| if v >= T::zero() { v } else { a * v })
}

/// Returns `(dx, da)` given the pre-activation `x`.
pub fn prelu_backward<T: Real>(x: ArrayView2<T>, a: T, dy: ArrayView2<T>) -> (Array2<T>, T) {
    let mut da = T::zero();
    let mut dx = Array2::zeros(x.raw_dim());
    ndarray::Zip::from(&mut dx)
        .and(&x)
        .and(&dy)
        .for_each(|d, &v, &g| {
            if v >= T::zero() {
                *d = g;
            } else {
                *d = a * g;
                da = da + g * v;
            }
        });
    (dx, da)
}

pub(crate) fn slope_grad<T: Real>(da: T) -> Array1<T> {
    Array1::from_elem(1, da)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn prelu_values() {
        let x = array![[-2.0, 0.0, 3.0]];
        assert_eq!(prelu(x.view(), 0.25), array![[-0.5, 0.0, 3.0]]);
        let (dx, da) = prelu_backward(x.view(), 0.25, array![[1.0, 1.0, 1.0]].view());
        assert_eq!(dx, array![[0.25, 1.0, 1.0]]);
        assert_eq!(da, -2.0);
    }

    #[test]
    fn lstm_single_unit_by_hand() {
        // One unit, one input, all weights zero except the cell-input weight.
        let p = LstmParams {
            w: array![[0.0], [0.0], [1.0], [0.0]],
            u: array![[0.0], [0.0], [0.0], [0.0]],
            b: array![0.0, 0.0, 0.0, 0.0],
        };
        let h = lstm_forward(&p, array![[1.0], [1.0]].view());
        let c1 = 0.5 * 1f64.tanh();
        let c2 = 0.5 * c1 + 0.5 * 1f64.tanh();
        assert!((h[[0, 0]] - 0.5 * c1.tanh()).abs() < 1e-15);
        assert!((h[[1, 0]] - 0.5 * c2.tanh()).abs() < 1e-15);
    }

    #[test]
    fn batch_rows_are_independent_sequences() {
        let arch = super::super::Architecture::Lstm {
            steps: 3,
            input_width: 2,
            lstm_units: vec![4],
            dense: vec![],
            output: 2,
        };
        let p = super::super::ModelParams::<f64>::init(&arch, 5).lstm.remove(0);
        let a = array![[0.1, 0.2], [0.3, -0.4], [0.5, 0.6]];
        let b = array![[-1.0, 0.0], [0.7, 0.2], [0.0, 0.9]];
        let mut x = Array2::zeros((6, 2));
        for t in 0..3 {
            x.row_mut(2 * t).assign(&a.row(t));
            x.row_mut(2 * t + 1).assign(&b.row(t));
        }
        let (h, _) = lstm_forward_batch(&p, x.view(), 3, 2);
        let ha = lstm_forward(&p, a.view());
        let hb = lstm_forward(&p, b.view());
        for t in 0..3 {
            for j in 0..4 {
                assert!((h[[2 * t, j]] - ha[[t, j]]).abs() < 1e-14);
                assert!((h[[2 * t + 1, j]] - hb[[t, j]]).abs() < 1e-14);
            }
        }
    }
}
