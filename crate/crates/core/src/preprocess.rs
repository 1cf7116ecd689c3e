//! Uniform-grid resampling, smoothing, windowing and normalization.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureSeries, ScenarioKind};
use crate::tensor::Tensor;

pub const DEFAULT_INTERVAL: f64 = 0.005;
pub const DEFAULT_ALPHA: f64 = 0.3;
/// Grid points per window (15 s at 5 ms).
pub const WINDOW_LEN: usize = 3000;
pub const DEFAULT_TRAIN_STRIDE: usize = 1500;
pub const DEFAULT_TEST_STRIDE: usize = 3000;
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Grid interval, seconds.
    pub interval: f64,
    pub alpha: f64,
    pub window: usize,
    pub train_stride: usize,
    pub test_stride: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            interval: DEFAULT_INTERVAL,
            alpha: DEFAULT_ALPHA,
            window: WINDOW_LEN,
            train_stride: DEFAULT_TRAIN_STRIDE,
            test_stride: DEFAULT_TEST_STRIDE,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.interval > 0.0) {
            return Err(Error::config("preprocess.interval", "must be > 0"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("preprocess.alpha", "must be in (0, 1]"));
        }
        if self.window == 0 {
            return Err(Error::config("preprocess.window", "must be > 0"));
        }
        if self.train_stride == 0 || self.test_stride == 0 {
            return Err(Error::config("preprocess.stride", "must be > 0"));
        }
        Ok(())
    }
}

/// Linear interpolation onto `first + k * interval`, never past the last sample.
pub fn resample_linear(series: &FeatureSeries, interval: f64) -> Result<FeatureSeries> {
    let n = series.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let ts = &series.timestamps;
    let (first, last) = (ts[0], ts[n - 1]);
    // tolerate rounding so that already-gridded input maps onto itself
    let steps = ((last - first) / interval + 1e-6).floor() as usize;

    let mut grid = Vec::with_capacity(steps + 1);
    let mut values = vec![Vec::with_capacity(steps + 1); series.values.len()];
    let mut j = 0usize;
    for k in 0..=steps {
        let t = (first + k as f64 * interval).min(last);
        while j + 1 < n - 1 && ts[j + 1] <= t {
            j += 1;
        }
        let (t0, t1) = (ts[j], ts[j + 1]);
        grid.push(t);
        for (out, ch) in values.iter_mut().zip(&series.values) {
            let v = if t == t0 {
                ch[j]
            } else if t >= t1 {
                ch[j + 1]
            } else {
                let w = (t - t0) / (t1 - t0);
                ch[j] + w * (ch[j + 1] - ch[j])
            };
            out.push(v);
        }
    }
    Ok(FeatureSeries {
        timestamps: grid,
        channels: series.channels.clone(),
        values,
        label: series.label,
        scenario: series.scenario,
    })
}

/// `y0 = x0; y_t = alpha * x_t + (1 - alpha) * y_{t-1}`, per channel.
pub fn ewma(series: &FeatureSeries, alpha: f64) -> FeatureSeries {
    debug_assert!(alpha > 0.0 && alpha <= 1.0);
    let values = series
        .values
        .iter()
        .map(|ch| {
            let mut prev = None;
            ch.iter()
                .map(|&x| {
                    let y = match prev {
                        None => x,
                        Some(p) => alpha * x + (1.0 - alpha) * p,
                    };
                    prev = Some(y);
                    y
                })
                .collect()
        })
        .collect();
    FeatureSeries {
        values,
        ..series.clone()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub trace: String,
    /// Index of the first grid point.
    pub start: usize,
}

/// One labeled window, `steps x channels`, time-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub window: Tensor<f32>,
    pub label: usize,
    pub origin: Origin,
}

impl Sample {
    pub fn steps(&self) -> usize {
        self.window.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.window.shape()[1]
    }

    /// Keeps the listed channels, in the given order.
    pub fn select_channels(&self, keep: &[usize]) -> Sample {
        let d = self.channels();
        let data = self
            .window
            .data()
            .chunks_exact(d)
            .flat_map(|row| keep.iter().map(move |&c| row[c]))
            .collect();
        Sample {
            window: Tensor::from_vec(&[self.steps(), keep.len()], data).expect("consistent shape"),
            label: self.label,
            origin: self.origin.clone(),
        }
    }
}

/// Reshapes a `(steps, d)` window into `(lstm_steps, steps / lstm_steps * d)`.
pub fn to_lstm_layout(window: Tensor<f32>, lstm_steps: usize) -> Result<Tensor<f32>> {
    let (steps, d) = (window.shape()[0], window.shape()[1]);
    if lstm_steps == 0 || steps % lstm_steps != 0 {
        return Err(Error::Shape {
            expected: vec![lstm_steps, steps / lstm_steps.max(1) * d],
            got: window.shape().to_vec(),
        });
    }
    window.reshape(&[lstm_steps, steps / lstm_steps * d])
}

/// Inverse of [`to_lstm_layout`].
pub fn from_lstm_layout(window: Tensor<f32>, channels: usize) -> Result<Tensor<f32>> {
    let n = window.len();
    if channels == 0 || n % channels != 0 {
        return Err(Error::Shape {
            expected: vec![n / channels.max(1), channels],
            got: window.shape().to_vec(),
        });
    }
    window.reshape(&[n / channels, channels])
}

/// Number of windows `make_windows` emits.
pub fn window_count(len: usize, window: usize, stride: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / stride + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Windows {
    pub samples: Vec<Sample>,
    /// Set when the series was too short for a single window.
    pub warning: Option<String>,
}

/// Cuts a gridded series into labeled `window x D` samples at `stride`.
pub fn make_windows(
    series: &FeatureSeries,
    trace_id: &str,
    window: usize,
    stride: usize,
) -> Result<Windows> {
    series.validate()?;
    let label = series
        .label
        .ok_or_else(|| Error::Empty(format!("series `{trace_id}` has no label")))?
        .class_id();
    let n = series.len();
    let count = window_count(n, window, stride);
    if count == 0 {
        return Ok(Windows {
            samples: Vec::new(),
            warning: Some(format!(
                "trace `{trace_id}`: {n} grid points, fewer than one window of {window}"
            )),
        });
    }
    let d = series.values.len();
    let samples = (0..count)
        .map(|w| {
            let start = w * stride;
            let mut data = Vec::with_capacity(window * d);
            for t in start..start + window {
                data.extend(series.values.iter().map(|ch| ch[t] as f32));
            }
            Sample {
                window: Tensor::from_vec(&[window, d], data).expect("consistent shape"),
                label,
                origin: Origin {
                    trace: trace_id.to_string(),
                    start,
                },
            }
        })
        .collect();
    Ok(Windows {
        samples,
        warning: None,
    })
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Mean and population std over every time point of every sample.
    pub fn fit(samples: &[Sample]) -> Result<NormStats> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Empty("normalization needs training samples".into()))?;
        let d = first.channels();
        let mut sum = vec![0.0f64; d];
        let mut count = 0usize;
        for s in samples {
            if s.channels() != d {
                return Err(Error::Shape {
                    expected: vec![s.steps(), d],
                    got: s.window.shape().to_vec(),
                });
            }
            for row in s.window.data().chunks_exact(d) {
                for (acc, &x) in sum.iter_mut().zip(row) {
                    *acc += f64::from(x);
                }
            }
            count += s.steps();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0f64; d];
        for s in samples {
            for row in s.window.data().chunks_exact(d) {
                for ((acc, &x), m) in sq.iter_mut().zip(row).zip(&mean) {
                    let dx = f64::from(x) - m;
                    *acc += dx * dx;
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| (s / count as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(NormStats { mean, std })
    }

    pub fn apply(&self, sample: &mut Sample) {
        let d = self.mean.len();
        for row in sample.window.data_mut().chunks_exact_mut(d) {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = ((f64::from(*x) - m) / s) as f32;
            }
        }
    }

    pub fn select(&self, keep: &[usize]) -> NormStats {
        NormStats {
            mean: keep.iter().map(|&c| self.mean[c]).collect(),
            std: keep.iter().map(|&c| self.std[c]).collect(),
        }
    }
}

/// Fits statistics on `train` only and z-scores both sets in place.
pub fn normalize(train: &mut [Sample], others: &mut [Sample]) -> Result<NormStats> {
    let stats = NormStats::fit(train)?;
    for s in train.iter_mut().chain(others.iter_mut()) {
        stats.apply(s);
    }
    Ok(stats)
}

const DATASET_MAGIC: &[u8; 8] = b"CCIDDSET";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetHeader {
    version: u32,
    split: String,
    scenario: ScenarioKind,
    /// `[samples, steps, channels]`
    shape: [usize; 3],
    channels: Vec<String>,
    label_map: Vec<String>,
    grid_interval: f64,
    ewma_alpha: f64,
    stats: Option<NormStats>,
    labels: Vec<usize>,
    origins: Vec<Origin>,
}

/// A split of windows sharing one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: String,
    pub scenario: ScenarioKind,
    pub channels: Vec<String>,
    pub label_map: Vec<String>,
    pub grid_interval: f64,
    pub ewma_alpha: f64,
    /// Normalization applied to `samples`, if any.
    pub stats: Option<NormStats>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.samples.first().map_or(0, Sample::steps)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn channel_indices(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.channels
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| Error::UnknownChannel(n.clone()))
            })
            .collect()
    }

    /// Keeps only the named channels.
    pub fn select_channels(&self, names: &[String]) -> Result<Dataset> {
        let keep = self.channel_indices(names)?;
        Ok(Dataset {
            channels: names.to_vec(),
            stats: self.stats.as_ref().map(|s| s.select(&keep)),
            samples: self.samples.iter().map(|s| s.select_channels(&keep)).collect(),
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            split: self.split.clone(),
            scenario: self.scenario,
            channels: self.channels.clone(),
            label_map: self.label_map.clone(),
            grid_interval: self.grid_interval,
            ewma_alpha: self.ewma_alpha,
            stats: self.stats.clone(),
            samples: Vec::new(),
        }
    }

    /// Binary container: magic, version (u32 LE), header length (u64 LE),
    /// JSON header, then all windows as little-endian f32, row-major.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let steps = self.steps();
        let d = self.channels.len();
        for s in &self.samples {
            if s.window.shape() != [steps, d] {
                return Err(Error::Shape {
                    expected: vec![steps, d],
                    got: s.window.shape().to_vec(),
                });
            }
        }
        let header = DatasetHeader {
            version: DATASET_VERSION,
            split: self.split.clone(),
            scenario: self.scenario,
            shape: [self.samples.len(), steps, d],
            channels: self.channels.clone(),
            label_map: self.label_map.clone(),
            grid_interval: self.grid_interval,
            ewma_alpha: self.ewma_alpha,
            stats: self.stats.clone(),
            labels: self.labels(),
            origins: self.samples.iter().map(|s| s.origin.clone()).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(DATASET_MAGIC)?;
        out.write_all(&DATASET_VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        for s in &self.samples {
            let mut buf = Vec::with_capacity(s.window.len() * 4);
            for x in s.window.data() {
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

    pub fn load(path: &Path) -> Result<Dataset> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::format(path, "not a dataset file"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != DATASET_VERSION {
            return Err(Error::Version {
                found: version,
                expected: DATASET_VERSION,
            });
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let h: DatasetHeader =
            serde_json::from_slice(&json).map_err(|e| Error::format(path, e.to_string()))?;
        let [n, steps, d] = h.shape;
        if h.labels.len() != n || h.origins.len() != n || h.channels.len() != d {
            return Err(Error::format(path, "header fields disagree with shape"));
        }
        let mut samples = Vec::with_capacity(n);
        let mut buf = vec![0u8; steps * d * 4];
        for (label, origin) in h.labels.into_iter().zip(h.origins) {
            r.read_exact(&mut buf)?;
            let data = buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            samples.push(Sample {
                window: Tensor::from_vec(&[steps, d], data)?,
                label,
                origin,
            });
        }
        Ok(Dataset {
            split: h.split,
            scenario: h.scenario,
            channels: h.channels,
            label_map: h.label_map,
            grid_interval: h.grid_interval,
            ewma_alpha: h.ewma_alpha,
            stats: h.stats,
            samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::ccsim::CcAlgorithm;

    fn series(ts: Vec<f64>, vals: Vec<Vec<f64>>) -> FeatureSeries {
        FeatureSeries {
            channels: (0..vals.len()).map(|i| format!("c{i}")).collect(),
            timestamps: ts,
            values: vals,
            label: Some(CcAlgorithm::Vegas),
            scenario: ScenarioKind::Wired,
        }
    }

    #[test]
    fn resample_midpoint() {
        let s = series(vec![0.0, 0.010], vec![vec![0.0, 10.0]]);
        let g = resample_linear(&s, 0.005).unwrap();
        assert_eq!(g.values[0], vec![0.0, 5.0, 10.0]);
        assert_eq!(g.timestamps.len(), 3);
    }

    #[test]
    fn resample_identity_on_grid() {
        let ts: Vec<f64> = (0..50).map(|k| 1.0 + k as f64 * 0.005).collect();
        let v: Vec<f64> = (0..50).map(|k| (k * k) as f64).collect();
        let s = series(ts, vec![v.clone()]);
        let g = resample_linear(&s, 0.005).unwrap();
        assert_eq!(g.values[0], v);
        let gg = resample_linear(&g, 0.005).unwrap();
        assert_eq!(gg, g);
    }

    #[test]
    fn resample_constant_and_too_short() {
        let s = series(vec![0.0, 0.013, 0.02, 0.047], vec![vec![3.5; 4]]);
        let g = resample_linear(&s, 0.005).unwrap();
        assert!(g.values[0].iter().all(|&v| v == 3.5));
        assert!(*g.timestamps.last().unwrap() <= 0.047);
        let one = series(vec![0.0], vec![vec![1.0]]);
        assert!(matches!(
            resample_linear(&one, 0.005),
            Err(Error::TooFewSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn ewma_cases() {
        let s = series(vec![0.0, 1.0, 2.0, 3.0], vec![vec![0.0, 1.0, 1.0, 1.0]]);
        assert_eq!(ewma(&s, 1.0), s);
        // unrolled by hand: 0, .5, .75, .875
        assert_eq!(ewma(&s, 0.5).values[0], vec![0.0, 0.5, 0.75, 0.875]);
        let c = series(vec![0.0, 1.0, 2.0], vec![vec![4.0; 3]]);
        assert_eq!(ewma(&c, 0.3).values[0], vec![4.0; 3]);
    }

    fn grid_series(n: usize, d: usize) -> FeatureSeries {
        let ts = (0..n).map(|k| k as f64 * 0.005).collect();
        let vals = (0..d)
            .map(|c| (0..n).map(|k| (k * 10 + c) as f64).collect())
            .collect();
        series(ts, vals)
    }

    #[test]
    fn window_counts() {
        let s = grid_series(11_999, 4);
        let w = make_windows(&s, "t", WINDOW_LEN, 3000).unwrap();
        assert_eq!(w.samples.len(), 3);
        assert_eq!(w.samples[1].origin.start, 3000);
        assert_eq!(w.samples[0].window.shape(), &[3000, 4]);
        // time-major: row t holds every channel at grid point t
        assert_eq!(&w.samples[1].window.data()[..4], &[30000.0, 30001.0, 30002.0, 30003.0]);

        let short = grid_series(2800, 4);
        let w = make_windows(&short, "short", WINDOW_LEN, 1500).unwrap();
        assert!(w.samples.is_empty());
        assert!(w.warning.is_some());
    }

    #[test]
    fn lstm_layout_round_trip() {
        let s = grid_series(3000, 4);
        let w = make_windows(&s, "t", 3000, 3000).unwrap().samples.remove(0);
        let l = to_lstm_layout(w.window.clone(), 20).unwrap();
        assert_eq!(l.shape(), &[20, 600]);
        assert_eq!(from_lstm_layout(l, 4).unwrap(), w.window);
        assert!(to_lstm_layout(w.window, 7).is_err());
    }

    fn sample(rows: Vec<[f32; 2]>) -> Sample {
        let n = rows.len();
        Sample {
            window: Tensor::from_vec(&[n, 2], rows.concat()).unwrap(),
            label: 0,
            origin: Origin {
                trace: "x".into(),
                start: 0,
            },
        }
    }

    #[test]
    fn normalization_cases() {
        let mut train = vec![sample(vec![[1.0, 5.0], [3.0, 5.0]]), sample(vec![[2.0, 5.0], [6.0, 5.0]])];
        let mut test = vec![sample(vec![[3.0, 7.0]])];
        let stats = normalize(&mut train, &mut test).unwrap();
        assert_eq!(stats.mean, vec![3.0, 5.0]);
        assert_eq!(stats.std[1], STD_FLOOR);
        // constant channel collapses to zero
        assert!(train.iter().all(|s| s.window.data()[1] == 0.0 && s.window.data()[3] == 0.0));
        assert_eq!(test[0].window.data()[0], 0.0);
        let refit = NormStats::fit(&train).unwrap();
        assert!(refit.mean.iter().all(|m| m.abs() < 1e-6));

        // already standardized data is left alone
        let mut z = vec![sample(vec![[-1.0, 1.0], [1.0, -1.0]])];
        let before = z.clone();
        normalize(&mut z, &mut []).unwrap();
        assert_eq!(z, before);
        assert!(normalize(&mut [], &mut []).is_err());
    }

    #[test]
    fn dataset_file_round_trip() {
        let s = grid_series(6000, 4);
        let mut samples = make_windows(&s, "t0", 3000, 1500).unwrap().samples;
        let stats = normalize(&mut samples, &mut []).unwrap();
        let ds = Dataset {
            split: "train".into(),
            scenario: ScenarioKind::Wired,
            channels: s.channels.clone(),
            label_map: CcAlgorithm::label_map(),
            grid_interval: 0.005,
            ewma_alpha: 0.3,
            stats: Some(stats),
            samples,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.ds");
        ds.save(&path).unwrap();
        assert_eq!(Dataset::load(&path).unwrap(), ds);

        let picked = ds.select_channels(&["c2".into(), "c0".into()]).unwrap();
        assert_eq!(picked.samples[0].channels(), 2);
        assert_eq!(picked.samples[0].window.data()[0], ds.samples[0].window.data()[2]);
        assert!(matches!(
            ds.select_channels(&["nope".into()]),
            Err(Error::UnknownChannel(_))
        ));
    }

    proptest! {
        #[test]
        fn window_count_formula(n in 0usize..20_000, stride in 1usize..5000) {
            let w = 3000;
            let expected = if n < w { 0 } else { (n - w) / stride + 1 };
            prop_assert_eq!(window_count(n, w, stride), expected);
            // brute force: every start s with s % stride == 0 and s + w <= n
            let brute = (0..n).step_by(stride).filter(|s| s + w <= n).count();
            prop_assert_eq!(expected, brute);
        }

        #[test]
        fn resample_is_idempotent(gaps in prop::collection::vec(0.0005f64..0.02, 2..200), seed in 0u64..1000) {
            let mut t = 0.0;
            let ts: Vec<f64> = gaps.iter().map(|g| { t += g; t }).collect();
            let v: Vec<f64> = ts.iter().map(|x| (x * (seed as f64 + 1.0)).sin()).collect();
            let s = series(ts, vec![v]);
            let g = resample_linear(&s, 0.005);
            prop_assume!(g.is_ok());
            let g = g.unwrap();
            prop_assume!(g.len() >= 2);
            let gg = resample_linear(&g, 0.005).unwrap();
            prop_assert_eq!(gg.len(), g.len());
            for (a, b) in gg.values[0].iter().zip(&g.values[0]) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
