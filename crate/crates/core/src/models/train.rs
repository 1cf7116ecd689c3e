use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::loss::softmax_cross_entropy;
use super::network::{argmax, Model};
use super::params::ModelParams;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::preprocess::Sample;

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fractions of `epochs` at which the rate is divided by `lr_drop_factor`.
    pub lr_drops: Vec<f64>,
    pub lr_drop_factor: f64,
    pub seed: u64,
    pub weight_decay: f64,
    /// Return the parameters of the best validation epoch instead of the last.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 32,
            learning_rate: 1e-4,
            lr_drops: vec![0.5, 0.7],
            lr_drop_factor: 10.0,
            seed: 0,
            weight_decay: 0.0,
            keep_best: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be > 0"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if self.lr_drops.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::config("train.lr_drops", "fractions must be in [0, 1]"));
        }
        if self.lr_drop_factor < 1.0 {
            return Err(Error::config("train.lr_drop_factor", "must be >= 1"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("train.weight_decay", "must be >= 0"));
        }
        Ok(())
    }
}

/// Step schedule: the base rate, divided by the drop factor once for every
/// drop point `ceil(fraction * epochs)` already reached (epochs count from 0).
pub fn learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    let drops = cfg
        .lr_drops
        .iter()
        .filter(|&&f| epoch >= (f * cfg.epochs as f64).ceil() as usize)
        .count();
    cfg.learning_rate / cfg.lr_drop_factor.powi(drops as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_loss: Option<f64>,
    pub valid_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: Model<f32>,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Mean loss and accuracy without updating anything.
pub fn evaluate(model: &Model<f32>, samples: &[Sample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = model.batch(&refs)?;
        let logits = model.logits(&batch);
        let (l, _) = softmax_cross_entropy(logits.view(), &batch.labels);
        loss += l as f64 * chunk.len() as f64;
        correct += count_correct(&logits, &batch.labels);
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Posterior per sample.
pub fn posteriors(model: &Model<f32>, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let p = model.predict_proba(&model.batch(&refs)?);
        out.extend(p.rows().into_iter().map(|r| r.iter().map(|&v| v as f64).collect()));
    }
    Ok(out)
}

fn count_correct(logits: &ndarray::Array2<f32>, labels: &[usize]) -> usize {
    logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let r: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            argmax(&r) == y
        })
        .count()
}

/// Mini-batch Adam training with a seeded shuffle. `on_epoch` sees every log
/// entry as it is produced, so progress survives a divergence error.
pub fn train(
    config: &ModelConfig,
    train_set: &[Sample],
    valid_set: &[Sample],
    cfg: &TrainConfig,
    init: Option<ModelParams<f32>>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let outputs = config.architecture.output();
    if let Some(s) = train_set.iter().chain(valid_set).find(|s| s.label >= outputs) {
        return Err(Error::config(
            "labels",
            format!("label {} outside {outputs} classes", s.label),
        ));
    }
    let mut model = match init {
        Some(p) => Model::with_params(config.clone(), p)?,
        None => Model::new(config.clone())?,
    };
    let mut adam = AdamState::new(&model.params);
    adam.weight_decay = cfg.weight_decay;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, ModelParams<f32>)> = None;

    for epoch in 0..cfg.epochs {
        let lr = learning_rate(cfg, epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for idx in order.chunks(cfg.batch_size) {
            let refs: Vec<&Sample> = idx.iter().map(|&i| &train_set[i]).collect();
            let batch = model.batch(&refs)?;
            let (loss, grads, logits) = model.loss_and_grad(&batch, Some(&mut dropout_rng));
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: loss as f64,
                });
            }
            loss_sum += loss as f64 * idx.len() as f64;
            correct += count_correct(&logits, &batch.labels);
            adam_step(&mut model.params, &grads, &mut adam, lr).map_err(|_| {
                Error::Diverged {
                    epoch,
                    loss: loss as f64,
                }
            })?;
        }
        let n = train_set.len() as f64;
        let (valid_loss, valid_accuracy) = if valid_set.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(&model, valid_set)?;
            (Some(l), Some(a))
        };
        let entry = EpochLog {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            valid_loss,
            valid_accuracy,
        };
        log::debug!(
            "epoch {epoch} lr {lr:.2e} loss {:.4} acc {:.3} valid {:?}",
            entry.train_loss,
            entry.train_accuracy,
            entry.valid_accuracy
        );
        on_epoch(&entry);
        if let (Some(acc), Some(l)) = (valid_accuracy, valid_loss) {
            let better = match &best {
                None => true,
                Some((ba, bl, _, _)) => acc > *ba || (acc == *ba && l < *bl),
            };
            if better && cfg.keep_best {
                best = Some((acc, l, epoch, model.params.clone()));
            }
        }
        log.push(entry);
    }
    let best_epoch = match best {
        Some((_, _, epoch, params)) => {
            model.params = params;
            epoch
        }
        None => cfg.epochs - 1,
    };
    Ok(TrainReport {
        model,
        log,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Architecture;
    use crate::preprocess::Origin;
    use crate::tensor::Tensor;
    use rand::Rng;

    #[test]
    fn schedule_drops_at_half_and_seventy_percent() {
        let cfg = TrainConfig::default();
        assert_eq!(learning_rate(&cfg, 0), 1e-4);
        assert_eq!(learning_rate(&cfg, 249), 1e-4);
        assert!((learning_rate(&cfg, 250) - 1e-5).abs() < 1e-18);
        assert!((learning_rate(&cfg, 349) - 1e-5).abs() < 1e-18);
        assert!((learning_rate(&cfg, 350) - 1e-6).abs() < 1e-18);
        assert!((learning_rate(&cfg, 499) - 1e-6).abs() < 1e-18);
    }

    /// Six classes whose mean level differs, plus noise.
    fn separable(n_per: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for class in 0..6 {
            for i in 0..n_per {
                let data: Vec<f32> = (0..40)
                    .map(|k| {
                        let base = if k % 6 == class { 1.5 } else { 0.0 };
                        base + rng.gen_range(-0.5..0.5)
                    })
                    .collect();
                out.push(Sample {
                    window: Tensor::from_vec(&[10, 4], data).unwrap(),
                    label: class,
                    origin: Origin {
                        trace: format!("{class}-{i}"),
                        start: 0,
                    },
                });
            }
        }
        out
    }

    fn small_lstm(seed: u64) -> ModelConfig {
        ModelConfig::new(
            Architecture::Lstm {
                steps: 5,
                input_width: 8,
                lstm_units: vec![12],
                dense: vec![8],
                output: 6,
            },
            seed,
        )
    }

    #[test]
    fn learns_separable_classes_and_is_deterministic() {
        let train_set = separable(20, 1);
        let valid = separable(5, 2);
        let cfg = TrainConfig {
            epochs: 30,
            learning_rate: 1e-2,
            seed: 7,
            ..TrainConfig::default()
        };
        let mut seen = 0;
        let a = train(&small_lstm(3), &train_set, &valid, &cfg, None, &mut |_| seen += 1).unwrap();
        assert_eq!(seen, 30);
        let (_, acc) = evaluate(&a.model, &valid).unwrap();
        assert_eq!(acc, 1.0);
        let b = train(&small_lstm(3), &train_set, &valid, &cfg, None, &mut |_| {}).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn dnn_learns_too() {
        let train_set = separable(20, 3);
        let cfg = TrainConfig {
            epochs: 20,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let model = ModelConfig::new(
            Architecture::Dnn {
                input_width: 40,
                dense: vec![16, 8],
                output: 6,
            },
            1,
        );
        let r = train(&model, &train_set, &[], &cfg, None, &mut |_| {}).unwrap();
        assert_eq!(r.best_epoch, 19);
        assert!(r.log.last().unwrap().train_accuracy > 0.95);
    }

    #[test]
    fn absurd_rate_reports_divergence() {
        let mut train_set = separable(4, 5);
        train_set[0].window.data_mut()[0] = 1e30;
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 1e30,
            ..TrainConfig::default()
        };
        let err = train(&small_lstm(1), &train_set, &[], &cfg, None, &mut |_| {}).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn bad_labels_and_empty_sets_rejected() {
        let mut s = separable(1, 0);
        assert!(train(&small_lstm(1), &[], &[], &TrainConfig::default(), None, &mut |_| {}).is_err());
        s[0].label = 9;
        assert!(train(&small_lstm(1), &s, &[], &TrainConfig::default(), None, &mut |_| {}).is_err());
    }
}
