//! End-to-end experiment plumbing: parameter sweeps, trace directories with a
//! manifest, dataset building with trace-level splits, training, evaluation,
//! ablation and flow-level identification.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ccsim::{read_trace, simulate_flow, write_trace, CcAlgorithm, FlowTrace, LinkConfig, RadioConfig};
use crate::error::{Error, Result};
use crate::eval::{ablate, confusion, AblationReport, EvalReport};
use crate::features::{extract_features, FeatureSeries, ScenarioKind};
use crate::models::{
    posteriors, train, Architecture, EpochLog, ModelCheckpoint, ModelConfig, TrainConfig,
};
use crate::preprocess::{
    ewma, make_windows, normalize, resample_linear, Dataset, NormStats, PreprocessConfig, Sample,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BufferUnit {
    Packets,
    /// Multiples of the flow's bandwidth-delay product.
    Bdp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferRange {
    pub unit: BufferUnit,
    pub range: [f64; 2],
}

/// Ranges every flow's link parameters are drawn from, uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Bottleneck rate (radio rate when wireless), Mbit/s.
    pub rate_mbps: [f64; 2],
    /// Two-way propagation delay, ms.
    pub rtt_ms: [f64; 2],
    /// Drop-tail bottleneck buffer (wired only).
    pub buffer: BufferRange,
    /// RLC buffer capacity, packets (wireless only).
    pub rlc_packets: [f64; 2],
    /// Per-attempt radio corruption probability (wireless only).
    pub random_loss: [f64; 2],
    /// Wired core link ahead of the radio leg (wireless only), Mbit/s.
    pub core_rate_mbps: f64,
    /// Core link buffer (wireless only), packets.
    pub core_buffer: usize,
}

impl GridConfig {
    pub fn wired() -> Self {
        GridConfig {
            rate_mbps: [5.0, 10.0],
            rtt_ms: [40.0, 100.0],
            buffer: BufferRange {
                unit: BufferUnit::Bdp,
                range: [0.5, 2.0],
            },
            rlc_packets: [100.0, 700.0],
            random_loss: [0.0, 0.0],
            core_rate_mbps: 100.0,
            core_buffer: 1000,
        }
    }

    pub fn wireless() -> Self {
        GridConfig {
            rtt_ms: [20.0, 100.0],
            random_loss: [0.005, 0.02],
            ..GridConfig::wired()
        }
    }

    fn validate(&self, scenario: ScenarioKind) -> Result<()> {
        let range = |field: &str, r: [f64; 2], lo: f64, hi: f64| -> Result<()> {
            if !(r[0].is_finite() && r[1].is_finite()) || r[0] > r[1] {
                return Err(Error::config(
                    field,
                    format!("range [{}, {}] is empty or inverted", r[0], r[1]),
                ));
            }
            if r[0] < lo || r[1] > hi {
                return Err(Error::config(
                    field,
                    format!("range [{}, {}] outside [{lo}, {hi}]", r[0], r[1]),
                ));
            }
            Ok(())
        };
        range("grid.rate_mbps", self.rate_mbps, 1e-3, 1e5)?;
        range("grid.rtt_ms", self.rtt_ms, 1e-3, 1e4)?;
        match self.buffer.unit {
            BufferUnit::Packets => range("grid.buffer.range", self.buffer.range, 1.0, 1e7)?,
            BufferUnit::Bdp => range("grid.buffer.range", self.buffer.range, 1e-3, 1e3)?,
        }
        if scenario == ScenarioKind::Wireless {
            range("grid.rlc_packets", self.rlc_packets, 1.0, 1e7)?;
            range("grid.random_loss", self.random_loss, 0.0, 0.999)?;
            if !(self.core_rate_mbps > 0.0) {
                return Err(Error::config("grid.core_rate_mbps", "must be > 0"));
            }
            if self.core_buffer == 0 {
                return Err(Error::config("grid.core_buffer", "must be >= 1"));
            }
        }
        Ok(())
    }
}

/// Trace-level split fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train: f64,
    #[serde(default)]
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.8,
            valid: 0.0,
            test: 0.2,
        }
    }
}

fn default_algorithms() -> Vec<CcAlgorithm> {
    CcAlgorithm::ALL.to_vec()
}

fn default_model() -> ModelConfig {
    ModelConfig::new(Architecture::paper_lstm(1), 0)
}

/// One experiment, end to end. The master `seed` drives the sweep, the split,
/// model initialization and batch shuffling; the seeds inside `model` and
/// `train` are overwritten from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioKind,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<CcAlgorithm>,
    pub flows_per_algorithm: usize,
    /// Seconds per flow.
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Defaults depend on the scenario.
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub split: SplitConfig,
    /// `input_width` is filled in from the dataset.
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Channel subsets for `ablate`; empty means every single channel plus all.
    #[serde(default)]
    pub ablation: Vec<Vec<String>>,
    /// Run every algorithm over the same sampled links (see [`sample_flows`]).
    #[serde(default)]
    pub matched_links: bool,
}

impl ExperimentConfig {
    pub fn new(scenario: ScenarioKind) -> Self {
        ExperimentConfig {
            scenario,
            algorithms: default_algorithms(),
            flows_per_algorithm: 20,
            duration: 60.0,
            seed: 0,
            grid: None,
            preprocess: PreprocessConfig::default(),
            split: SplitConfig::default(),
            model: default_model(),
            train: TrainConfig::default(),
            ablation: Vec::new(),
            matched_links: false,
        }
    }

    pub fn grid(&self) -> GridConfig {
        self.grid.clone().unwrap_or_else(|| match self.scenario {
            ScenarioKind::Wired => GridConfig::wired(),
            ScenarioKind::Wireless => GridConfig::wireless(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::config("algorithms", "need at least one"));
        }
        let mut seen = self.algorithms.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.algorithms.len() {
            return Err(Error::config("algorithms", "duplicates"));
        }
        if self.flows_per_algorithm == 0 {
            return Err(Error::config("flows_per_algorithm", "must be > 0"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::config("duration", "must be > 0"));
        }
        self.grid().validate(self.scenario)?;
        self.preprocess.validate()?;
        let s = self.split;
        if [s.train, s.valid, s.test].iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::config("split", "fractions must be in [0, 1]"));
        }
        if ((s.train + s.valid + s.test) - 1.0).abs() > 1e-9 {
            return Err(Error::config("split", "fractions must sum to 1"));
        }
        if s.train == 0.0 {
            return Err(Error::config("split.train", "must be > 0"));
        }
        self.train.validate()?;
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::config("model.dropout", "must be in [0, 1)"));
        }
        let channels = self.scenario.channels();
        for subset in &self.ablation {
            if let Some(c) = subset.iter().find(|c| !channels.contains(&c.as_str())) {
                return Err(Error::UnknownChannel(c.clone()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }

    pub fn ablation_subsets(&self) -> Vec<Vec<String>> {
        if !self.ablation.is_empty() {
            return self.ablation.clone();
        }
        let all: Vec<String> = self.scenario.channels().iter().map(|s| s.to_string()).collect();
        let mut out = vec![all.clone()];
        out.extend(all.into_iter().map(|c| vec![c]));
        out
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One flow of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub id: String,
    pub algorithm: CcAlgorithm,
    pub link: LinkConfig,
    pub seed: u64,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

fn draw_link(rng: &mut ChaCha8Rng, grid: &GridConfig, scenario: ScenarioKind) -> LinkConfig {
    let rate = uniform(rng, grid.rate_mbps) * 1e6;
    let rtt = uniform(rng, grid.rtt_ms) / 1e3;
    let buf = uniform(rng, grid.buffer.range);
    let rlc = uniform(rng, grid.rlc_packets).round().max(1.0) as usize;
    let loss = uniform(rng, grid.random_loss);
    match scenario {
        ScenarioKind::Wired => {
            let bdp = LinkConfig::wired(rate, rtt, 1).bdp_packets();
            let buffer = match grid.buffer.unit {
                BufferUnit::Packets => buf,
                BufferUnit::Bdp => buf * bdp,
            };
            LinkConfig::wired(rate, rtt, buffer.round().max(1.0) as usize)
        }
        ScenarioKind::Wireless => LinkConfig::wired(grid.core_rate_mbps * 1e6, rtt, grid.core_buffer)
            .with_radio(RadioConfig::new(rate, rlc), loss),
    }
}

/// Draws links uniformly from the grid. With `matched_links` one draw per
/// flow index is shared by every algorithm, so link parameters carry no label
/// information once the split keeps each link's traces together; otherwise
/// every flow gets its own draw.
pub fn sample_flows(cfg: &ExperimentConfig) -> Result<Vec<FlowSpec>> {
    cfg.validate()?;
    let grid = cfg.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shared: Vec<LinkConfig> = if cfg.matched_links {
        (0..cfg.flows_per_algorithm)
            .map(|_| draw_link(&mut rng, &grid, cfg.scenario))
            .collect()
    } else {
        Vec::new()
    };
    let mut specs = Vec::new();
    for &algo in &cfg.algorithms {
        for j in 0..cfg.flows_per_algorithm {
            let link = match shared.get(j) {
                Some(l) => *l,
                None => draw_link(&mut rng, &grid, cfg.scenario),
            };
            specs.push(FlowSpec {
                id: format!("{}-{j:04}", algo.name().to_ascii_lowercase()),
                algorithm: algo,
                link,
                seed: rng.gen(),
            });
        }
    }
    Ok(specs)
}

/// Runs the sweep in parallel; results keep the spec order.
pub fn simulate_sweep(cfg: &ExperimentConfig) -> Result<Vec<(String, FlowTrace)>> {
    let specs = sample_flows(cfg)?;
    specs
        .par_iter()
        .map(|s| Ok((s.id.clone(), simulate_flow(s.algorithm, s.link, cfg.duration, s.seed)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub algorithm: CcAlgorithm,
    pub file: String,
    pub sha256: String,
    pub packets: usize,
    pub link: LinkConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub flows: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Version {
                found: m.version,
                expected: MANIFEST_VERSION,
            });
        }
        Ok(m)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}

/// Simulates the sweep and writes one CSV + sidecar per flow, then the
/// manifest (written last, by this thread only).
pub fn simulate_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest> {
    let specs = sample_flows(cfg)?;
    fs::create_dir_all(dir)?;
    let flows = specs
        .par_iter()
        .map(|s| {
            let trace = simulate_flow(s.algorithm, s.link, cfg.duration, s.seed)?;
            let path = write_trace(dir, &s.id, &trace)?;
            Ok(ManifestEntry {
                id: s.id.clone(),
                algorithm: s.algorithm,
                file: file_name(&path),
                sha256: hex(&Sha256::digest(fs::read(&path)?)),
                packets: trace.records.len(),
                link: s.link,
                seed: s.seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        flows,
    };
    manifest.save(dir)?;
    Ok(manifest)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads every trace listed in a directory's manifest.
pub fn load_traces(dir: &Path) -> Result<(Manifest, Vec<(String, FlowTrace)>)> {
    let manifest = Manifest::load(dir)?;
    if manifest.flows.is_empty() {
        return Err(Error::Empty(format!("no traces listed in {}", dir.display())));
    }
    let traces = manifest
        .flows
        .par_iter()
        .map(|e| Ok((e.id.clone(), read_trace(&dir.join(&e.file))?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, traces))
}

/// Extract, resample onto the grid and smooth.
pub fn prepare_series(
    trace: &FlowTrace,
    scenario: ScenarioKind,
    pre: &PreprocessConfig,
) -> Result<FeatureSeries> {
    let raw = extract_features(trace, scenario)?;
    let grid = resample_linear(&raw, pre.interval)?;
    Ok(ewma(&grid, pre.alpha))
}

/// Trace ids per split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSplit {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

/// What the splitter needs to know about one trace. Traces sharing a `group`
/// (the same link) always land in the same split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceKey {
    pub id: String,
    pub algorithm: CcAlgorithm,
    pub group: String,
}

impl TraceKey {
    pub fn of(id: &str, trace: &FlowTrace) -> Self {
        TraceKey {
            id: id.to_string(),
            algorithm: trace.label,
            group: serde_json::to_string(&trace.scenario.link).expect("link serializes"),
        }
    }
}

/// Groups are bucketed by the set of algorithms they contain and each bucket
/// is shuffled with the seed and cut by the fractions. Matched sweeps form one
/// bucket of whole links; independent draws form one bucket per algorithm.
/// Either way the split is stratified and no trace is shared.
pub fn split_traces(traces: &[TraceKey], split: &SplitConfig, seed: u64) -> TraceSplit {
    let mut groups: BTreeMap<&str, Vec<&TraceKey>> = BTreeMap::new();
    for t in traces {
        groups.entry(&t.group).or_default().push(t);
    }
    let mut buckets: BTreeMap<Vec<CcAlgorithm>, Vec<Vec<&TraceKey>>> = BTreeMap::new();
    for (_, mut members) in groups {
        members.sort_by(|a, b| a.id.cmp(&b.id));
        let mut algos: Vec<CcAlgorithm> = members.iter().map(|t| t.algorithm).collect();
        algos.sort();
        algos.dedup();
        buckets.entry(algos).or_default().push(members);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = TraceSplit {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for (_, mut bucket) in buckets {
        bucket.shuffle(&mut rng);
        let n = bucket.len() as f64;
        let n_train = ((split.train * n).round() as usize).clamp(1, bucket.len());
        let n_valid = ((split.valid * n).round() as usize).min(bucket.len() - n_train);
        for (i, members) in bucket.iter().enumerate() {
            let dst = if i < n_train {
                &mut out.train
            } else if i < n_train + n_valid {
                &mut out.valid
            } else {
                &mut out.test
            };
            dst.extend(members.iter().map(|t| t.id.clone()));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub split: TraceSplit,
    pub stats: NormStats,
    /// Traces too short for a single window.
    pub skipped: Vec<String>,
}

fn empty_dataset(split: &str, cfg: &ExperimentConfig) -> Dataset {
    Dataset {
        split: split.to_string(),
        scenario: cfg.scenario,
        channels: cfg.scenario.channels().iter().map(|s| s.to_string()).collect(),
        label_map: CcAlgorithm::label_map(),
        grid_interval: cfg.preprocess.interval,
        ewma_alpha: cfg.preprocess.alpha,
        stats: None,
        samples: Vec::new(),
    }
}

/// extract -> resample -> ewma -> window -> split by trace -> normalize with
/// statistics fitted on the training split only.
pub fn build_datasets(traces: &[(String, FlowTrace)], cfg: &ExperimentConfig) -> Result<DatasetSplits> {
    cfg.validate()?;
    if traces.is_empty() {
        return Err(Error::Empty("no traces to build a dataset from".into()));
    }
    let keys: Vec<TraceKey> = traces.iter().map(|(id, t)| TraceKey::of(id, t)).collect();
    let split = split_traces(&keys, &cfg.split, cfg.seed);
    let role = |id: &str| {
        if split.test.iter().any(|t| t == id) {
            2
        } else if split.valid.iter().any(|t| t == id) {
            1
        } else {
            0
        }
    };
    let pre = cfg.preprocess;
    let windows = traces
        .par_iter()
        .map(|(id, trace)| {
            let series = prepare_series(trace, cfg.scenario, &pre)?;
            let stride = if role(id) == 2 {
                pre.test_stride
            } else {
                pre.train_stride
            };
            make_windows(&series, id, pre.window, stride)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sets = [
        empty_dataset("train", cfg),
        empty_dataset("valid", cfg),
        empty_dataset("test", cfg),
    ];
    let mut skipped = Vec::new();
    for ((id, _), w) in traces.iter().zip(windows) {
        if let Some(msg) = w.warning {
            log::warn!("skipping {msg}");
            skipped.push(id.clone());
        }
        sets[role(id)].samples.extend(w.samples);
    }
    let [mut train_set, mut valid, mut test] = sets;
    if train_set.is_empty() {
        return Err(Error::TooFewSamples {
            needed: pre.window,
            got: 0,
        });
    }
    let stats = {
        let mut others: Vec<Sample> = valid.samples.drain(..).chain(test.samples.drain(..)).collect();
        let stats = normalize(&mut train_set.samples, &mut others)?;
        let n_valid = others.len() - count_test(&others, &split);
        test.samples = others.split_off(n_valid);
        valid.samples = others;
        stats
    };
    for d in [&mut train_set, &mut valid, &mut test] {
        d.stats = Some(stats.clone());
    }
    Ok(DatasetSplits {
        train: train_set,
        valid,
        test,
        split,
        stats,
        skipped,
    })
}

fn count_test(samples: &[Sample], split: &TraceSplit) -> usize {
    samples
        .iter()
        .filter(|s| split.test.contains(&s.origin.trace))
        .count()
}

impl DatasetSplits {
    /// Writes `train.ccds`, `test.ccds`, `valid.ccds` (when non-empty),
    /// `stats.json` and `split.json`.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        for d in [&self.train, &self.valid, &self.test] {
            if d.split == "valid" && d.is_empty() {
                continue;
            }
            let p = dir.join(format!("{}.ccds", d.split));
            d.save(&p)?;
            out.push(p);
        }
        fs::write(dir.join("stats.json"), serde_json::to_string_pretty(&self.stats)?)?;
        fs::write(dir.join("split.json"), serde_json::to_string_pretty(&self.split)?)?;
        Ok(out)
    }
}

/// Model config with the seed and input width taken from the experiment and
/// the dataset.
pub fn resolve_model(cfg: &ExperimentConfig, data: &Dataset) -> Result<ModelConfig> {
    let len = data.steps() * data.channels.len();
    let mut model = cfg.model.clone();
    model.architecture = model.architecture.with_input_len(len)?;
    model.seed = cfg.seed;
    model.validate()?;
    Ok(model)
}

/// Trains on `train_set`, selecting on `valid` when it is non-empty.
pub fn train_model(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    valid: Option<&Dataset>,
    init: Option<&ModelCheckpoint>,
    reinit_output: bool,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<ModelCheckpoint> {
    if train_set.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let model = resolve_model(cfg, train_set)?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = cfg.seed;
    let init_params = match init {
        Some(ck) => {
            if ck.channels != train_set.channels {
                return Err(Error::config(
                    "init",
                    "checkpoint channels differ from the dataset",
                ));
            }
            let mut p = ck.params.clone();
            if reinit_output {
                p.reinit_output(model.architecture.output(), cfg.seed);
            }
            Some(p)
        }
        None => None,
    };
    let valid_samples: &[Sample] = valid.map_or(&[], |v| &v.samples);
    let report = train(&model, &train_set.samples, valid_samples, &tcfg, init_params, on_epoch)?;
    Ok(ModelCheckpoint {
        config: model,
        train: Some(tcfg),
        params: report.model.params,
        label_map: train_set.label_map.clone(),
        channels: train_set.channels.clone(),
        scenario: Some(train_set.scenario),
        stats: train_set.stats.clone(),
        preprocess: Some(cfg.preprocess),
        log: report.log,
        best_epoch: Some(report.best_epoch),
    })
}

fn check_compatible(ck: &ModelCheckpoint, data: &Dataset) -> Result<()> {
    if ck.channels != data.channels {
        return Err(Error::config(
            "dataset",
            format!(
                "channels {:?} do not match the checkpoint's {:?}",
                data.channels, ck.channels
            ),
        ));
    }
    if ck.label_map != data.label_map {
        return Err(Error::config("dataset", "label map differs from the checkpoint"));
    }
    Ok(())
}

/// Predicted class per window of an already-normalized dataset.
pub fn predict_dataset(ck: &ModelCheckpoint, data: &Dataset) -> Result<Vec<usize>> {
    check_compatible(ck, data)?;
    let model = ck.model()?;
    Ok(posteriors(&model, &data.samples)?
        .iter()
        .map(|p| argmax(p))
        .collect())
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best
}

pub fn evaluate_checkpoint(ck: &ModelCheckpoint, data: &Dataset) -> Result<EvalReport> {
    let preds = predict_dataset(ck, data)?;
    let cm = confusion(&preds, &data.labels(), &data.label_map)?;
    Ok(EvalReport::new(cm))
}

/// Retrains per channel subset with the experiment seed.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    data: &DatasetSplits,
    subsets: &[Vec<String>],
) -> Result<AblationReport> {
    let train_fn = |tr: &Dataset, te: &Dataset| -> Result<Vec<usize>> {
        let ck = train_model(cfg, tr, None, None, false, &mut |_| {})?;
        predict_dataset(&ck, te)
    };
    ablate(&data.train, &data.test, subsets, &train_fn)
}

/// Flow-level verdict for one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub label: String,
    pub class: usize,
    pub votes: Vec<usize>,
    pub mean_posterior: Vec<f64>,
    /// One posterior per window, in time order.
    pub windows: Vec<Vec<f64>>,
    pub label_map: Vec<String>,
}

/// Majority vote over window predictions; a tie goes to the tied class with
/// the larger summed posterior, then to the lowest class id.
pub fn majority_vote(posteriors: &[Vec<f64>]) -> Result<(usize, Vec<usize>)> {
    let k = posteriors
        .first()
        .map(|p| p.len())
        .ok_or_else(|| Error::Empty("no windows to vote on".into()))?;
    let mut votes = vec![0usize; k];
    let mut mass = vec![0.0f64; k];
    for p in posteriors {
        votes[argmax(p)] += 1;
        for (m, v) in mass.iter_mut().zip(p) {
            *m += v;
        }
    }
    let mut best = 0;
    for c in 1..k {
        if votes[c] > votes[best] || (votes[c] == votes[best] && mass[c] > mass[best]) {
            best = c;
        }
    }
    Ok((best, votes))
}

/// Runs the full preprocessing path on one raw trace and classifies it.
pub fn identify(ck: &ModelCheckpoint, trace: &FlowTrace) -> Result<Identification> {
    let scenario = ck
        .scenario
        .ok_or_else(|| Error::config("checkpoint", "no scenario recorded"))?;
    let pre = ck.preprocess.unwrap_or_default();
    let series = prepare_series(trace, scenario, &pre)?;
    let w = make_windows(&series, "input", pre.window, pre.test_stride)?;
    if w.samples.is_empty() {
        return Err(Error::TooFewSamples {
            needed: pre.window,
            got: series.len(),
        });
    }
    let mut samples = w.samples;
    for s in &mut samples {
        ck.prepare(s)?;
    }
    let windows = posteriors(&ck.model()?, &samples)?;
    let (class, votes) = majority_vote(&windows)?;
    let n = windows.len() as f64;
    let mut mean_posterior = vec![0.0; votes.len()];
    for p in &windows {
        for (m, v) in mean_posterior.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    Ok(Identification {
        label: ck.label_map.get(class).cloned().unwrap_or_default(),
        class,
        votes,
        mean_posterior,
        windows,
        label_map: ck.label_map.clone(),
    })
}

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub data: DatasetSplits,
    pub checkpoint: ModelCheckpoint,
    pub report: EvalReport,
}

/// Sweep, build, train and evaluate entirely in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let traces = simulate_sweep(cfg)?;
    let data = build_datasets(&traces, cfg)?;
    let valid = (!data.valid.is_empty()).then_some(&data.valid);
    let checkpoint = train_model(cfg, &data.train, valid, None, false, &mut |_| {})?;
    let report = evaluate_checkpoint(&checkpoint, &data.test)?;
    Ok(ExperimentRun {
        data,
        checkpoint,
        report,
    })
}
