//! Trainable classifiers: stacked LSTM with a dense PReLU head, and a plain
//! dense (DNN) baseline. Everything, backpropagation through time included,
//! is implemented here on top of ndarray matrix products.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod layers;
mod loss;
mod network;
mod params;
mod train;

use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};
use serde::{Deserialize, Serialize};

use crate::ccsim::CcAlgorithm;
use crate::error::{Error, Result};

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{predict, ModelCheckpoint, CHECKPOINT_VERSION};
pub use layers::{
    dense_backward, dense_forward, lstm_backward, lstm_forward, lstm_forward_batch, prelu,
    prelu_backward, LstmCache,
};
pub use loss::{softmax, softmax_cross_entropy};
pub use network::{Batch, Model};
pub use params::{DenseParams, LstmParams, ModelParams};
pub use train::{evaluate, learning_rate, posteriors, train, EpochLog, TrainConfig, TrainReport};

/// Floating-point element type for model arithmetic.
pub trait Real:
    Float + NumAssign + FromPrimitive + LinalgScalar + ScalarOperand + Debug + Display + Send + Sync + 'static
{
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Lstm {
        steps: usize,
        input_width: usize,
        lstm_units: Vec<usize>,
        dense: Vec<usize>,
        output: usize,
    },
    Dnn {
        input_width: usize,
        dense: Vec<usize>,
        output: usize,
    },
}

impl Architecture {
    /// Two 600-unit LSTM layers, dense 256 -> 128 -> 6, over `(20, input_width)`.
    pub fn paper_lstm(input_width: usize) -> Self {
        Architecture::Lstm {
            steps: 20,
            input_width,
            lstm_units: vec![600, 600],
            dense: vec![256, 128],
            output: CcAlgorithm::COUNT,
        }
    }

    /// Dense 1024 -> 512 -> 256 -> 128 -> 6 over the flattened window.
    pub fn paper_dnn(input_width: usize) -> Self {
        Architecture::Dnn {
            input_width,
            dense: vec![1024, 512, 256, 128],
            output: CcAlgorithm::COUNT,
        }
    }

    pub fn output(&self) -> usize {
        match self {
            Architecture::Lstm { output, .. } | Architecture::Dnn { output, .. } => *output,
        }
    }

    /// Values per sample the model consumes.
    pub fn input_len(&self) -> usize {
        match self {
            Architecture::Lstm {
                steps, input_width, ..
            } => steps * input_width,
            Architecture::Dnn { input_width, .. } => *input_width,
        }
    }

    /// Same architecture re-targeted at a different number of values per sample.
    pub fn with_input_len(&self, len: usize) -> Result<Self> {
        let mut out = self.clone();
        match &mut out {
            Architecture::Lstm {
                steps, input_width, ..
            } => {
                if len % *steps != 0 {
                    return Err(Error::config(
                        "model.input_width",
                        format!("{len} values do not split into {steps} steps"),
                    ));
                }
                *input_width = len / *steps;
            }
            Architecture::Dnn { input_width, .. } => *input_width = len,
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    #[serde(default)]
    pub seed: u64,
    /// Dropout probability on hidden dense activations (0 = off).
    #[serde(default)]
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(architecture: Architecture, seed: u64) -> Self {
        ModelConfig {
            architecture,
            seed,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[usize]| v.iter().all(|&x| x > 0);
        match &self.architecture {
            Architecture::Lstm {
                steps,
                input_width,
                lstm_units,
                dense,
                output,
            } => {
                if *steps == 0 || *input_width == 0 || *output == 0 {
                    return Err(Error::config("model", "LSTM dimensions must be > 0"));
                }
                if lstm_units.is_empty() || !positive(lstm_units) || !positive(dense) {
                    return Err(Error::config("model.lstm_units", "need >= 1 layer, all > 0"));
                }
            }
            Architecture::Dnn {
                input_width,
                dense,
                output,
            } => {
                if *input_width == 0 || *output == 0 || !positive(dense) {
                    return Err(Error::config("model", "DNN dimensions must be > 0"));
                }
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("model.dropout", "must be in [0, 1)"));
        }
        Ok(())
    }
}
