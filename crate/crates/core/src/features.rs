//! Receiver-side per-packet features.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ccsim::{CcAlgorithm, FlowTrace, PacketRecord};
use crate::error::{Error, Result};

pub const THROUGHPUT: &str = "throughput";
pub const ONEWAY_DELAY: &str = "oneway_delay";
pub const INFLIGHT: &str = "inflight";
pub const PACKET_SIZE: &str = "packet_size";
pub const PDCP_DELAY: &str = "pdcp_delay";
pub const RLC_BUFFER: &str = "rlc_buffer";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Wired,
    Wireless,
}

impl ScenarioKind {
    /// Channel layout produced by [`extract_features`].
    pub fn channels(self) -> &'static [&'static str] {
        match self {
            ScenarioKind::Wired => &[THROUGHPUT, ONEWAY_DELAY, INFLIGHT, PACKET_SIZE],
            ScenarioKind::Wireless => {
                &[THROUGHPUT, ONEWAY_DELAY, PACKET_SIZE, PDCP_DELAY, RLC_BUFFER]
            }
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::Wired => "wired",
            ScenarioKind::Wireless => "wireless",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wired" => Ok(ScenarioKind::Wired),
            "wireless" => Ok(ScenarioKind::Wireless),
            _ => Err(Error::config("scenario", format!("expected wired|wireless, got `{s}`"))),
        }
    }
}

/// Multi-channel samples on a shared, strictly increasing time axis.
///
/// `values[c][i]` is channel `c` at `timestamps[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSeries {
    pub timestamps: Vec<f64>,
    pub channels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub label: Option<CcAlgorithm>,
    pub scenario: ScenarioKind,
}

impl FeatureSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels
            .iter()
            .position(|c| c == name)
            .map(|i| self.values[i].as_slice())
    }

    /// Time-weighted mean throughput, bits/s.
    pub fn mean_throughput(&self, first_rx: f64) -> Option<f64> {
        let tp = self.channel(THROUGHPUT)?;
        let mut prev = first_rx;
        let (mut bits, mut span) = (0.0, 0.0);
        for (&t, &v) in self.timestamps.iter().zip(tp) {
            bits += v * (t - prev);
            span += t - prev;
            prev = t;
        }
        (span > 0.0).then(|| bits / span)
    }

    /// Checks channel alignment and the time axis.
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.channels.len() {
            return Err(Error::Shape {
                expected: vec![self.channels.len()],
                got: vec![self.values.len()],
            });
        }
        for v in &self.values {
            if v.len() != self.timestamps.len() {
                return Err(Error::Shape {
                    expected: vec![self.timestamps.len()],
                    got: vec![v.len()],
                });
            }
        }
        if let Some(i) = self.timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::TraceCorrupt {
                index: i + 1,
                reason: "timestamps not strictly increasing".into(),
            });
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<&str> = std::iter::once("t")
            .chain(self.channels.iter().map(String::as_str))
            .collect();
        w.write_record(&header).map_err(|e| Error::format("<csv>", e.to_string()))?;
        for (i, t) in self.timestamps.iter().enumerate() {
            let row: Vec<String> = std::iter::once(format!("{t:.9}"))
                .chain(self.values.iter().map(|c| format!("{}", c[i])))
                .collect();
            w.write_record(&row).map_err(|e| Error::format("<csv>", e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `<stem>.csv` plus a `<stem>.json` sidecar with label and scenario.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        self.write_csv(BufWriter::new(File::create(dir.join(format!("{stem}.csv")))?))?;
        let side = serde_json::json!({ "label": self.label, "scenario": self.scenario });
        let mut f = BufWriter::new(File::create(dir.join(format!("{stem}.json")))?);
        serde_json::to_writer_pretty(&mut f, &side)?;
        f.flush()?;
        Ok(())
    }
}

/// Instantaneous throughput from two consecutive arrivals, bits/s.
///
/// `None` when the arrivals are not strictly ordered in time; coalesce
/// same-timestamp arrivals first.
pub fn throughput(curr: &PacketRecord, prev: &PacketRecord) -> Option<f64> {
    let dt = curr.rx_time - prev.rx_time;
    (dt > 0.0).then(|| f64::from(curr.size) * 8.0 / dt)
}

/// One-way delay with the per-flow minimum removed.
pub fn oneway_delay(rec: &PacketRecord, flow_min: f64) -> f64 {
    ((rec.rx_time - rec.tx_time) - flow_min).max(0.0)
}

/// Unacknowledged bytes the sender had outstanding when it sent `rec`.
pub fn inflight(rec: &PacketRecord) -> Result<u64> {
    rec.seq_end
        .checked_sub(rec.ack_sent)
        .ok_or_else(|| Error::TraceCorrupt {
            index: 0,
            reason: format!(
                "negative inflight: seq_end {} < ack_sent {}",
                rec.seq_end, rec.ack_sent
            ),
        })
}

/// Merges arrivals sharing one timestamp into a single record with summed size.
pub fn coalesce(records: &[PacketRecord]) -> Vec<PacketRecord> {
    let mut out: Vec<PacketRecord> = Vec::with_capacity(records.len());
    for r in records {
        match out.last_mut() {
            Some(last) if last.rx_time == r.rx_time => {
                let size = last.size + r.size;
                *last = *r;
                last.size = size;
            }
            _ => out.push(*r),
        }
    }
    out
}

pub fn extract_features(trace: &FlowTrace, scenario: ScenarioKind) -> Result<FeatureSeries> {
    if trace.records.is_empty() {
        return Err(Error::Empty("flow trace has no records".into()));
    }
    if scenario == ScenarioKind::Wireless {
        if let Some(i) = trace
            .records
            .iter()
            .position(|r| r.rlc_buffer.is_none() || r.pdcp_delay.is_none())
        {
            return Err(Error::Scenario(format!(
                "wireless features need rlc_buffer and pdcp_delay; record {i} lacks them"
            )));
        }
    }

    let recs = coalesce(&trace.records);
    let flow_min = recs
        .iter()
        .map(|r| r.rx_time - r.tx_time)
        .fold(f64::INFINITY, f64::min);
    let channels = scenario.channels();
    let n = recs.len().saturating_sub(1);
    let mut timestamps = Vec::with_capacity(n);
    let mut values = vec![Vec::with_capacity(n); channels.len()];

    for (i, pair) in recs.windows(2).enumerate() {
        let (prev, cur) = (&pair[0], &pair[1]);
        let tp = throughput(cur, prev).ok_or_else(|| Error::TraceCorrupt {
            index: i + 1,
            reason: "rx_time not increasing".into(),
        })?;
        timestamps.push(cur.rx_time);
        for (slot, &name) in values.iter_mut().zip(channels) {
            let v = match name {
                THROUGHPUT => tp,
                ONEWAY_DELAY => oneway_delay(cur, flow_min),
                INFLIGHT => inflight(cur).map_err(|e| match e {
                    Error::TraceCorrupt { reason, .. } => Error::TraceCorrupt {
                        index: i + 1,
                        reason,
                    },
                    e => e,
                })? as f64,
                PACKET_SIZE => f64::from(cur.size),
                PDCP_DELAY => cur.pdcp_delay.unwrap_or_default(),
                RLC_BUFFER => f64::from(cur.rlc_buffer.unwrap_or_default()),
                _ => unreachable!(),
            };
            slot.push(v);
        }
    }

    Ok(FeatureSeries {
        timestamps,
        channels: channels.iter().map(|c| c.to_string()).collect(),
        values,
        label: Some(trace.label),
        scenario,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccsim::{simulate_flow, simulate_flow_with, LinkConfig, RadioConfig, Scenario, SimOptions};

    fn rec(rx: f64, tx: f64, seq_end: u64, ack: u64) -> PacketRecord {
        PacketRecord {
            rx_time: rx,
            tx_time: tx,
            size: 1500,
            seq_end,
            ack_sent: ack,
            rlc_buffer: None,
            pdcp_delay: None,
        }
    }

    fn trace_of(records: Vec<PacketRecord>) -> FlowTrace {
        FlowTrace {
            records,
            label: CcAlgorithm::Cubic,
            scenario: Scenario {
                link: LinkConfig::wired(10e6, 0.05, 10),
                seed: None,
            },
            duration: 100.0,
            stats: Default::default(),
        }
    }

    #[test]
    fn throughput_formula() {
        let a = rec(1.0, 0.0, 0, 0);
        let b = rec(1.0012, 0.0, 0, 0);
        let c = rec(1.0006, 0.0, 0, 0);
        assert!((throughput(&b, &a).unwrap() - 10_000_000.0).abs() < 1e-3);
        assert!((throughput(&c, &a).unwrap() - 20_000_000.0).abs() < 1e-3);
        assert_eq!(throughput(&a, &a), None);
    }

    #[test]
    fn oneway_delay_removes_offset() {
        let raws = [0.025, 0.030, 0.027];
        let recs: Vec<_> = raws.iter().enumerate().map(|(i, d)| rec(i as f64 + d, i as f64, 0, 0)).collect();
        let min = 0.025;
        let out: Vec<f64> = recs.iter().map(|r| oneway_delay(r, min)).collect();
        for (o, e) in out.iter().zip([0.0, 0.005, 0.002]) {
            assert!((o - e).abs() < 1e-12);
        }
        let flat: Vec<_> = (0..5).map(|i| rec(i as f64 + 0.025, i as f64, 0, 0)).collect();
        assert!(flat.iter().all(|r| oneway_delay(r, 0.025).abs() < 1e-12));
    }

    #[test]
    fn inflight_subtraction() {
        assert_eq!(inflight(&rec(0.0, 0.0, 3000, 1000)).unwrap(), 2000);
        assert_eq!(inflight(&rec(0.0, 0.0, 3000, 3000)).unwrap(), 0);
        assert!(matches!(
            inflight(&rec(0.0, 0.0, 1000, 3000)),
            Err(Error::TraceCorrupt { .. })
        ));
    }

    #[test]
    fn first_packet_emits_nothing() {
        let t = trace_of(vec![rec(0.1, 0.0, 1500, 0)]);
        let f = extract_features(&t, ScenarioKind::Wired).unwrap();
        assert!(f.is_empty());
        let t = trace_of(vec![rec(0.1, 0.0, 1500, 0), rec(0.2, 0.1, 3000, 0)]);
        let f = extract_features(&t, ScenarioKind::Wired).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.channels.len(), 4);
        f.validate().unwrap();
    }

    #[test]
    fn same_timestamp_arrivals_are_merged() {
        let recs = vec![
            rec(0.1, 0.0, 1500, 0),
            rec(0.2, 0.1, 3000, 0),
            rec(0.2, 0.1, 4500, 0),
            rec(0.3, 0.2, 6000, 0),
        ];
        let merged = coalesce(&recs);
        assert_eq!(merged.len(), 3);
        assert_eq!(merged[1].size, 3000);
        assert_eq!(merged[1].seq_end, 4500);
        let f = extract_features(&trace_of(recs), ScenarioKind::Wired).unwrap();
        let tp = f.channel(THROUGHPUT).unwrap();
        assert!((tp[0] - 3000.0 * 8.0 / 0.1).abs() < 1e-6);
    }

    #[test]
    fn wired_trace_rejected_for_wireless() {
        let t = trace_of(vec![rec(0.1, 0.0, 1500, 0), rec(0.2, 0.1, 3000, 0)]);
        assert!(matches!(
            extract_features(&t, ScenarioKind::Wireless),
            Err(Error::Scenario(_))
        ));
    }

    #[test]
    fn sample_count_is_packets_minus_one() {
        let link = LinkConfig::wired(10e6, 0.06, 100);
        let t = simulate_flow(CcAlgorithm::Cubic, link, 20.0, 2).unwrap();
        let f = extract_features(&t, ScenarioKind::Wired).unwrap();
        assert_eq!(f.len(), t.records.len() - 1);
        f.validate().unwrap();
    }

    #[test]
    fn mean_throughput_matches_delivered_bytes() {
        for algo in CcAlgorithm::ALL {
            let link = LinkConfig::wired(8e6, 0.05, 67);
            let t = simulate_flow(algo, link, 60.0, 4).unwrap();
            let f = extract_features(&t, ScenarioKind::Wired).unwrap();
            let mean = f.mean_throughput(t.records[0].rx_time).unwrap();
            let overall = t.delivered_bytes() as f64 * 8.0 / t.duration;
            assert!((mean - overall).abs() / overall < 0.01, "{algo}: {mean} vs {overall}");
        }
    }

    #[test]
    fn delay_and_inflight_match_simulator_ground_truth() {
        // Vegas on a deep buffer never loses, so every record is new data.
        let mut link = LinkConfig::wired(6e6, 0.04, 1);
        link.buffer = (3.0 * link.bdp_packets()) as usize;
        let opts = SimOptions {
            ground_truth: true,
            ..Default::default()
        };
        let (t, truth) = simulate_flow_with(CcAlgorithm::Vegas, link, 10.0, 1, opts).unwrap();
        let truth = truth.unwrap();
        assert_eq!(t.stats.dropped(), 0);
        let f = extract_features(&t, ScenarioKind::Wired).unwrap();
        let owd = f.channel(ONEWAY_DELAY).unwrap();
        let inf = f.channel(INFLIGHT).unwrap();
        for i in 0..f.len() {
            assert_eq!(inf[i] as u64, truth.unacked_bytes[i + 1]);
            assert!((owd[i] - truth.queue_wait[i + 1]).abs() < 1e-9);
        }
    }

    #[test]
    fn wireless_channels() {
        let link = LinkConfig::wired(50e6, 0.05, 1000).with_radio(RadioConfig::new(8e6, 300), 0.01);
        let t = simulate_flow(CcAlgorithm::Bbr, link, 5.0, 1).unwrap();
        let f = extract_features(&t, ScenarioKind::Wireless).unwrap();
        assert_eq!(f.channels, ScenarioKind::Wireless.channels());
        assert!(f.channel(INFLIGHT).is_none());
        assert!(f.channel(PDCP_DELAY).unwrap().iter().all(|&d| d >= 0.003 - 1e-12));
    }
}
