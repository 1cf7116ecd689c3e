use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    dense_backward, dense_forward, lstm_backward, lstm_forward_batch, prelu, prelu_backward,
    slope_grad, LstmCache,
};
use super::loss::{softmax, softmax_cross_entropy};
use super::params::ModelParams;
use super::{Architecture, ModelConfig, Real};
use crate::error::{Error, Result};
use crate::preprocess::Sample;

/// Model input for `size` samples. LSTM rows are time-major (`t * size + b`),
/// DNN rows are one flattened sample each.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub x: Array2<T>,
    pub labels: Vec<usize>,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

#[derive(Debug)]
pub(crate) struct Cache<T> {
    lstm_out: Vec<Array2<T>>,
    lstm: Vec<LstmCache<T>>,
    dense_in: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
    masks: Vec<Option<Array2<T>>>,
    head_in: Array2<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config.architecture, config.seed);
        Ok(Model { config, params })
    }

    pub fn with_params(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        let expected = ModelParams::<T>::init(&config.architecture, 0).manifest();
        if params.manifest() != expected {
            return Err(Error::config(
                "model",
                "parameter shapes do not match the architecture",
            ));
        }
        Ok(Model { config, params })
    }

    fn steps(&self) -> usize {
        match self.config.architecture {
            Architecture::Lstm { steps, .. } => steps,
            Architecture::Dnn { .. } => 1,
        }
    }

    /// Packs samples (any `(rows, channels)` window, flattened row-major) into
    /// the model's input layout.
    pub fn batch(&self, samples: &[&Sample]) -> Result<Batch<T>> {
        let need = self.config.architecture.input_len();
        let steps = self.steps();
        let width = need / steps;
        let n = samples.len();
        let mut x = Array2::zeros((steps * n, width));
        for (b, s) in samples.iter().enumerate() {
            let data = s.window.data();
            if data.len() != need {
                return Err(Error::Shape {
                    expected: vec![need],
                    got: s.window.shape().to_vec(),
                });
            }
            for t in 0..steps {
                let row = &data[t * width..(t + 1) * width];
                for (dst, &v) in x.row_mut(t * n + b).iter_mut().zip(row) {
                    *dst = T::from_f32(v).expect("finite");
                }
            }
        }
        Ok(Batch {
            x,
            labels: samples.iter().map(|s| s.label).collect(),
            size: n,
        })
    }

    pub(crate) fn forward(
        &self,
        x: ArrayView2<T>,
        n: usize,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> (Array2<T>, Cache<T>) {
        let steps = self.steps();
        let mut lstm_out: Vec<Array2<T>> = Vec::new();
        let mut lstm = Vec::new();
        for (l, p) in self.params.lstm.iter().enumerate() {
            let (h, c) = if l == 0 {
                lstm_forward_batch(p, x, steps, n)
            } else {
                lstm_forward_batch(p, lstm_out[l - 1].view(), steps, n)
            };
            lstm_out.push(h);
            lstm.push(c);
        }
        let mut cur = match lstm_out.last() {
            Some(h) => h.slice(s![(steps - 1) * n.., ..]).to_owned(),
            None => x.to_owned(),
        };
        let mut dense_in = Vec::new();
        let mut pre = Vec::new();
        let mut masks = Vec::new();
        let p_drop = self.config.dropout;
        for (d, a) in self.params.dense.iter().zip(&self.params.slopes) {
            let z = dense_forward(d, cur.view());
            let mut act = prelu(z.view(), a[0]);
            let mask = match dropout_rng.as_deref_mut() {
                Some(rng) if p_drop > 0.0 => {
                    let keep = T::from_f64_lossy(1.0 / (1.0 - p_drop));
                    let m = Array2::from_shape_simple_fn(act.raw_dim(), || {
                        if rng.gen::<f64>() < p_drop {
                            T::zero()
                        } else {
                            keep
                        }
                    });
                    act *= &m;
                    Some(m)
                }
                _ => None,
            };
            dense_in.push(cur);
            pre.push(z);
            masks.push(mask);
            cur = act;
        }
        let logits = dense_forward(&self.params.output, cur.view());
        let cache = Cache {
            lstm_out,
            lstm,
            dense_in,
            pre,
            masks,
            head_in: cur,
        };
        (logits, cache)
    }

    pub(crate) fn backward(
        &self,
        x: ArrayView2<T>,
        cache: &Cache<T>,
        dlogits: ArrayView2<T>,
    ) -> ModelParams<T> {
        let mut grads = self.params.zeros_like();
        let (mut d, g) = dense_backward(&self.params.output, cache.head_in.view(), dlogits);
        grads.output = g;
        for l in (0..self.params.dense.len()).rev() {
            if let Some(m) = &cache.masks[l] {
                d *= m;
            }
            let a = self.params.slopes[l][0];
            let (dz, da) = prelu_backward(cache.pre[l].view(), a, d.view());
            grads.slopes[l] = slope_grad(da);
            let (dx, g) = dense_backward(&self.params.dense[l], cache.dense_in[l].view(), dz.view());
            grads.dense[l] = g;
            d = dx;
        }
        if !self.params.lstm.is_empty() {
            let steps = self.steps();
            let n = d.nrows();
            let top = self.params.lstm.len() - 1;
            let mut dh = Array2::zeros(cache.lstm_out[top].raw_dim());
            dh.slice_mut(s![(steps - 1) * n.., ..]).assign(&d);
            for l in (0..=top).rev() {
                let p = &self.params.lstm[l];
                let (dx, g) = if l == 0 {
                    lstm_backward(p, &cache.lstm[l], x, dh.view())
                } else {
                    lstm_backward(p, &cache.lstm[l], cache.lstm_out[l - 1].view(), dh.view())
                };
                grads.lstm[l] = g;
                dh = dx;
            }
        }
        grads
    }

    /// Mean cross-entropy of the batch, its parameter gradients and the logits.
    pub fn loss_and_grad(
        &self,
        batch: &Batch<T>,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> (T, ModelParams<T>, Array2<T>) {
        let (logits, cache) = self.forward(batch.x.view(), batch.size, dropout_rng);
        let (loss, dlogits) = softmax_cross_entropy(logits.view(), &batch.labels);
        let grads = self.backward(batch.x.view(), &cache, dlogits.view());
        (loss, grads, logits)
    }

    pub fn logits(&self, batch: &Batch<T>) -> Array2<T> {
        self.forward(batch.x.view(), batch.size, None).0
    }

    /// Class posteriors, one row per sample.
    pub fn predict_proba(&self, batch: &Batch<T>) -> Array2<T> {
        let mut logits = self.logits(batch);
        for mut row in logits.rows_mut() {
            let p = softmax(row.view());
            row.assign(&p);
        }
        logits
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }
}

/// Highest-probability class; ties go to the lowest class id.
pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::Origin;
    use crate::tensor::Tensor;

    fn sample(values: Vec<f32>, rows: usize, label: usize) -> Sample {
        let cols = values.len() / rows;
        Sample {
            window: Tensor::from_vec(&[rows, cols], values).unwrap(),
            label,
            origin: Origin {
                trace: "t".into(),
                start: 0,
            },
        }
    }

    #[test]
    fn initial_loss_is_near_ln_six() {
        let cfg = ModelConfig::new(
            Architecture::Lstm {
                steps: 20,
                input_width: 12,
                lstm_units: vec![16, 16],
                dense: vec![8],
                output: 6,
            },
            9,
        );
        let model = Model::<f32>::new(cfg).unwrap();
        let samples: Vec<Sample> = (0..12)
            .map(|i| sample((0..240).map(|v| ((v * 7 + i) % 13) as f32 / 13.0 - 0.5).collect(), 60, i % 6))
            .collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        let b = model.batch(&refs).unwrap();
        let (loss, _, _) = model.loss_and_grad(&b, None);
        assert!((loss - 6f32.ln()).abs() < 0.05, "loss {loss}");
    }

    #[test]
    fn batch_layout_is_time_major() {
        let cfg = ModelConfig::new(
            Architecture::Lstm {
                steps: 2,
                input_width: 3,
                lstm_units: vec![2],
                dense: vec![],
                output: 6,
            },
            1,
        );
        let model = Model::<f64>::new(cfg).unwrap();
        let a = sample(vec![0., 1., 2., 3., 4., 5.], 3, 0);
        let b = sample(vec![10., 11., 12., 13., 14., 15.], 3, 1);
        let batch = model.batch(&[&a, &b]).unwrap();
        assert_eq!(batch.x.row(0).to_vec(), vec![0., 1., 2.]);
        assert_eq!(batch.x.row(1).to_vec(), vec![10., 11., 12.]);
        assert_eq!(batch.x.row(2).to_vec(), vec![3., 4., 5.]);
        assert!(model.batch(&[&sample(vec![0.; 4], 2, 0)]).is_err());
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
