use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{argmax, Model};
use super::params::ModelParams;
use super::train::{EpochLog, TrainConfig};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::features::ScenarioKind;
use crate::preprocess::{NormStats, PreprocessConfig, Sample};
use crate::tensor::Tensor;

const CHECKPOINT_MAGIC: &[u8; 8] = b"CCIDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model plus everything needed to apply it to new windows.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub train: Option<TrainConfig>,
    pub params: ModelParams<f32>,
    pub label_map: Vec<String>,
    pub channels: Vec<String>,
    pub scenario: Option<ScenarioKind>,
    /// Normalization fitted on the training split.
    pub stats: Option<NormStats>,
    /// Grid, smoothing and windowing the training data went through.
    pub preprocess: Option<PreprocessConfig>,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    train: Option<TrainConfig>,
    label_map: Vec<String>,
    channels: Vec<String>,
    scenario: Option<ScenarioKind>,
    stats: Option<NormStats>,
    preprocess: Option<PreprocessConfig>,
    log: Vec<EpochLog>,
    best_epoch: Option<usize>,
    tensors: Vec<TensorEntry>,
}

impl ModelCheckpoint {
    pub fn model(&self) -> Result<Model<f32>> {
        Model::with_params(self.config.clone(), self.params.clone())
    }

    /// Applies the stored normalization to a raw window.
    pub fn prepare(&self, sample: &mut Sample) -> Result<()> {
        if sample.channels() != self.channels.len() {
            return Err(Error::Shape {
                expected: vec![sample.steps(), self.channels.len()],
                got: sample.window.shape().to_vec(),
            });
        }
        if let Some(stats) = &self.stats {
            stats.apply(sample);
        }
        Ok(())
    }

    /// Magic, version (u32 LE), header length (u64 LE), JSON header, then every
    /// parameter tensor as little-endian f32 in manifest order.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            train: self.train.clone(),
            label_map: self.label_map.clone(),
            channels: self.channels.clone(),
            scenario: self.scenario,
            stats: self.stats.clone(),
            preprocess: self.preprocess,
            log: self.log.clone(),
            best_epoch: self.best_epoch,
            tensors: self
                .params
                .manifest()
                .into_iter()
                .map(|(name, shape)| TensorEntry { name, shape })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        for s in self.params.slices() {
            let mut buf = Vec::with_capacity(s.len() * 4);
            for x in s {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read_from<R: Read>(mut r: R, path: &Path) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "not a model checkpoint"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let h: Header =
            serde_json::from_slice(&json).map_err(|e| Error::format(path, e.to_string()))?;
        h.config.validate()?;
        let mut params = ModelParams::<f32>::init(&h.config.architecture, 0);
        let expected = params.manifest();
        let stored: Vec<(String, Vec<usize>)> =
            h.tensors.into_iter().map(|t| (t.name, t.shape)).collect();
        if stored != expected {
            return Err(Error::format(path, "tensor manifest does not match the architecture"));
        }
        for s in params.slices_mut() {
            let mut buf = vec![0u8; s.len() * 4];
            r.read_exact(&mut buf)?;
            for (dst, b) in s.iter_mut().zip(buf.chunks_exact(4)) {
                *dst = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::format(path, "trailing bytes after parameters"));
        }
        Ok(ModelCheckpoint {
            config: h.config,
            train: h.train,
            params,
            label_map: h.label_map,
            channels: h.channels,
            scenario: h.scenario,
            stats: h.stats,
            preprocess: h.preprocess,
            log: h.log,
            best_epoch: h.best_epoch,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?), path)
    }
}

/// Class id and posterior for one window that has already been normalized
/// (see [`ModelCheckpoint::prepare`]). Ties go to the lowest class id.
pub fn predict(checkpoint: &ModelCheckpoint, window: &Tensor<f32>) -> Result<(usize, Vec<f64>)> {
    let model = checkpoint.model()?;
    let sample = Sample {
        window: window.clone(),
        label: 0,
        origin: Default::default(),
    };
    let batch = model.batch(&[&sample])?;
    let p: Vec<f64> = model
        .predict_proba(&batch)
        .row(0)
        .iter()
        .map(|&v| v as f64)
        .collect();
    Ok((argmax(&p), p))
}
