use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Architecture, Real};

pub(crate) const PRELU_INIT: f64 = 0.25;
pub(crate) const FORGET_BIAS_INIT: f64 = 1.0;

/// Gate blocks are stacked `[input, forget, cell, output]` along the first axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    /// `(4 * hidden, input)`
    pub w: Array2<T>,
    /// `(4 * hidden, hidden)`
    pub u: Array2<T>,
    /// `4 * hidden`
    pub b: Array1<T>,
}

impl<T: Real> LstmParams<T> {
    pub fn hidden(&self) -> usize {
        self.u.ncols()
    }

    pub fn input(&self) -> usize {
        self.w.ncols()
    }

    pub(crate) fn init(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut b = Array1::zeros(4 * hidden);
        b.slice_mut(ndarray::s![hidden..2 * hidden])
            .fill(T::from_f64_lossy(FORGET_BIAS_INIT));
        LstmParams {
            w: uniform(rng, (4 * hidden, input), input),
            u: uniform(rng, (4 * hidden, hidden), hidden),
            b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T> {
    /// `(out, in)`
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Real> DenseParams<T> {
    pub(crate) fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        DenseParams {
            w: uniform(rng, (output, input), input),
            b: Array1::zeros(output),
        }
    }
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, shape: (usize, usize), fan_in: usize) -> Array2<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn(shape, || T::from_f64_lossy(rng.gen_range(-bound..bound)))
}

/// Every learnable tensor of a model, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub lstm: Vec<LstmParams<T>>,
    /// Hidden dense layers, each followed by PReLU.
    pub dense: Vec<DenseParams<T>>,
    /// One PReLU slope per hidden dense layer.
    pub slopes: Vec<Array1<T>>,
    pub output: DenseParams<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lstm, mut width, dense_sizes, output) = match arch {
            Architecture::Lstm {
                input_width,
                lstm_units,
                dense,
                output,
                ..
            } => {
                let mut layers = Vec::new();
                let mut width = *input_width;
                for &h in lstm_units {
                    layers.push(LstmParams::init(width, h, &mut rng));
                    width = h;
                }
                (layers, width, dense, *output)
            }
            Architecture::Dnn {
                input_width,
                dense,
                output,
            } => (Vec::new(), *input_width, dense, *output),
        };
        let mut dense = Vec::new();
        let mut slopes = Vec::new();
        for &n in dense_sizes {
            dense.push(DenseParams::init(width, n, &mut rng));
            slopes.push(Array1::from_elem(1, T::from_f64_lossy(PRELU_INIT)));
            width = n;
        }
        let output = DenseParams::init(width, output, &mut rng);
        ModelParams {
            lstm,
            dense,
            slopes,
            output,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<T>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<T>| Array1::zeros(a.raw_dim());
        ModelParams {
            lstm: self
                .lstm
                .iter()
                .map(|l| LstmParams {
                    w: z2(&l.w),
                    u: z2(&l.u),
                    b: z1(&l.b),
                })
                .collect(),
            dense: self
                .dense
                .iter()
                .map(|d| DenseParams {
                    w: z2(&d.w),
                    b: z1(&d.b),
                })
                .collect(),
            slopes: self.slopes.iter().map(z1).collect(),
            output: DenseParams {
                w: z2(&self.output.w),
                b: z1(&self.output.b),
            },
        }
    }

    /// `(name, shape)` for every tensor, in [`ModelParams::slices`] order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, l) in self.lstm.iter().enumerate() {
            out.push((format!("lstm{i}.w"), l.w.shape().to_vec()));
            out.push((format!("lstm{i}.u"), l.u.shape().to_vec()));
            out.push((format!("lstm{i}.b"), l.b.shape().to_vec()));
        }
        for (i, (d, a)) in self.dense.iter().zip(&self.slopes).enumerate() {
            out.push((format!("dense{i}.w"), d.w.shape().to_vec()));
            out.push((format!("dense{i}.b"), d.b.shape().to_vec()));
            out.push((format!("prelu{i}.a"), a.shape().to_vec()));
        }
        out.push(("output.w".into(), self.output.w.shape().to_vec()));
        out.push(("output.b".into(), self.output.b.shape().to_vec()));
        out
    }

    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for l in &self.lstm {
            out.push(l.w.as_slice().expect("standard layout"));
            out.push(l.u.as_slice().expect("standard layout"));
            out.push(l.b.as_slice().expect("standard layout"));
        }
        for (d, a) in self.dense.iter().zip(&self.slopes) {
            out.push(d.w.as_slice().expect("standard layout"));
            out.push(d.b.as_slice().expect("standard layout"));
            out.push(a.as_slice().expect("standard layout"));
        }
        out.push(self.output.w.as_slice().expect("standard layout"));
        out.push(self.output.b.as_slice().expect("standard layout"));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for l in &mut self.lstm {
            out.push(l.w.as_slice_mut().expect("standard layout"));
            out.push(l.u.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
        }
        for (d, a) in self.dense.iter_mut().zip(&mut self.slopes) {
            out.push(d.w.as_slice_mut().expect("standard layout"));
            out.push(d.b.as_slice_mut().expect("standard layout"));
            out.push(a.as_slice_mut().expect("standard layout"));
        }
        out.push(self.output.w.as_slice_mut().expect("standard layout"));
        out.push(self.output.b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let c2 = |a: &Array2<T>| a.mapv(|x| U::from_f64_lossy(x.to_f64_lossy()));
        let c1 = |a: &Array1<T>| a.mapv(|x| U::from_f64_lossy(x.to_f64_lossy()));
        ModelParams {
            lstm: self
                .lstm
                .iter()
                .map(|l| LstmParams {
                    w: c2(&l.w),
                    u: c2(&l.u),
                    b: c1(&l.b),
                })
                .collect(),
            dense: self
                .dense
                .iter()
                .map(|d| DenseParams {
                    w: c2(&d.w),
                    b: c1(&d.b),
                })
                .collect(),
            slopes: self.slopes.iter().map(c1).collect(),
            output: DenseParams {
                w: c2(&self.output.w),
                b: c1(&self.output.b),
            },
        }
    }

    /// Fresh output layer; everything else is kept.
    pub fn reinit_output(&mut self, outputs: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = self.output.w.ncols();
        self.output = DenseParams::init(width, outputs, &mut rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_follows_fan_in_bounds() {
        let arch = Architecture::Lstm {
            steps: 4,
            input_width: 9,
            lstm_units: vec![5, 3],
            dense: vec![4],
            output: 6,
        };
        let p: ModelParams<f64> = ModelParams::init(&arch, 1);
        assert!(p.lstm[0].w.iter().all(|x| x.abs() <= 1.0 / 3.0));
        assert!(p.lstm[1].u.iter().all(|x| x.abs() <= 1.0 / 3f64.sqrt()));
        let b = &p.lstm[0].b;
        assert!(b.slice(ndarray::s![5..10]).iter().all(|&x| x == 1.0));
        assert_eq!(b.iter().filter(|&&x| x == 0.0).count(), 15);
        assert_eq!(p.slopes[0][0], 0.25);
        assert_eq!(p.manifest().len(), p.slices().len());
        assert_eq!(p.output.w.shape(), &[6, 4]);
    }

    #[test]
    fn same_seed_same_params() {
        let arch = Architecture::Dnn {
            input_width: 7,
            dense: vec![5],
            output: 6,
        };
        let a: ModelParams<f32> = ModelParams::init(&arch, 3);
        let b: ModelParams<f32> = ModelParams::init(&arch, 3);
        let c: ModelParams<f32> = ModelParams::init(&arch, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let wide: ModelParams<f64> = ModelParams::init(&arch, 3);
        assert_eq!(wide.cast::<f32>(), a);
    }
}
