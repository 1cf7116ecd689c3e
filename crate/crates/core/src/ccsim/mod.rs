//! Single-flow TCP simulator.
//!
//! One bulk-transfer sender pushes fixed-size segments through a rate-limited
//! drop-tail bottleneck, optionally followed by a lossy radio leg with an RLC
//! queue and bounded ARQ. The receiver acknowledges every segment and logs a
//! [`PacketRecord`] for every data packet it sees, which is exactly the view a
//! passive capture at the receiver would have.

mod cc;
mod io;
mod sim;
mod wireless;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cc::{
    aimd_step, cc_on_ack, cc_on_loss, cc_on_recovery_exit, cc_on_timeout, cubic_window, AckInfo,
    BbrState, Phase, SenderState, BBR_HIGH_GAIN, BBR_PROBE_BW_GAINS, CUBIC_BETA, CUBIC_C,
    HYBLA_RTT0, INITIAL_CWND, RENO_BETA, VEGAS_ALPHA, VEGAS_BETA, VEGAS_GAMMA,
};
pub use io::{read_trace, read_trace_csv, write_trace, write_trace_csv, TraceSidecar};
pub use sim::{simulate_flow, simulate_flow_with, GroundTruth, SimOptions};
pub use wireless::{RlcOutcome, RlcStage, ARQ_MAX_RETX};

/// Fixed segment size on the wire, bytes.
pub const MTU: u32 = 1500;

/// Congestion-control algorithm; the discriminant is the classifier label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CcAlgorithm {
    NewReno = 0,
    Cubic = 1,
    Vegas = 2,
    Hybla = 3,
    Bbr = 4,
    Westwood = 5,
}

impl CcAlgorithm {
    pub const ALL: [CcAlgorithm; 6] = [
        CcAlgorithm::NewReno,
        CcAlgorithm::Cubic,
        CcAlgorithm::Vegas,
        CcAlgorithm::Hybla,
        CcAlgorithm::Bbr,
        CcAlgorithm::Westwood,
    ];

    pub const COUNT: usize = 6;

    pub fn class_id(self) -> usize {
        self as usize
    }

    pub fn from_class_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CcAlgorithm::NewReno => "NewReno",
            CcAlgorithm::Cubic => "Cubic",
            CcAlgorithm::Vegas => "Vegas",
            CcAlgorithm::Hybla => "Hybla",
            CcAlgorithm::Bbr => "BBR",
            CcAlgorithm::Westwood => "Westwood",
        }
    }

    /// Label names indexed by class id.
    pub fn label_map() -> Vec<String> {
        Self::ALL.iter().map(|a| a.name().to_string()).collect()
    }
}

impl fmt::Display for CcAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CcAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config("algorithm", format!("unknown algorithm `{s}`")))
    }
}

/// Radio leg between the base station and the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioConfig {
    /// Radio service rate, bits/s.
    pub rate: f64,
    /// RLC buffer capacity, packets.
    pub rlc_cap: usize,
    /// Air-interface latency per transmission attempt, seconds.
    pub air_delay: f64,
    /// Upper bound of uniform extra latency added per attempt, seconds.
    #[serde(default)]
    pub air_jitter: f64,
}

impl RadioConfig {
    pub const AIR_DELAY: f64 = 0.003;

    pub fn new(rate: f64, rlc_cap: usize) -> Self {
        RadioConfig {
            rate,
            rlc_cap,
            air_delay: Self::AIR_DELAY,
            air_jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    /// Bottleneck rate, bits/s.
    pub rate: f64,
    /// Two-way propagation delay, seconds.
    pub prop_rtt: f64,
    /// Drop-tail capacity in packets, counting the one in service.
    pub buffer: usize,
    pub mtu: u32,
    /// Per-attempt corruption probability on the radio leg.
    pub random_loss: f64,
    pub wireless: Option<RadioConfig>,
}

impl LinkConfig {
    pub fn wired(rate: f64, prop_rtt: f64, buffer: usize) -> Self {
        LinkConfig {
            rate,
            prop_rtt,
            buffer,
            mtu: MTU,
            random_loss: 0.0,
            wireless: None,
        }
    }

    pub fn with_radio(mut self, radio: RadioConfig, err_prob: f64) -> Self {
        self.wireless = Some(radio);
        self.random_loss = err_prob;
        self
    }

    pub fn is_wireless(&self) -> bool {
        self.wireless.is_some()
    }

    /// Serialization time of one MTU on the bottleneck.
    pub fn tx_time(&self) -> f64 {
        f64::from(self.mtu) * 8.0 / self.rate
    }

    /// Bandwidth-delay product in packets.
    pub fn bdp_packets(&self) -> f64 {
        self.path_rate() * self.prop_rtt / (f64::from(self.mtu) * 8.0)
    }

    /// Slowest rate along the path, bits/s.
    pub fn path_rate(&self) -> f64 {
        match self.wireless {
            Some(r) => self.rate.min(r.rate),
            None => self.rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::config("link.rate", "must be > 0"));
        }
        if !(self.prop_rtt > 0.0 && self.prop_rtt.is_finite()) {
            return Err(Error::config("link.prop_rtt", "must be > 0"));
        }
        if self.buffer < 1 {
            return Err(Error::config("link.buffer", "must be >= 1"));
        }
        if self.mtu == 0 {
            return Err(Error::config("link.mtu", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.random_loss) {
            return Err(Error::config("link.random_loss", "must be in [0, 1)"));
        }
        match self.wireless {
            None if self.random_loss != 0.0 => Err(Error::config(
                "link.random_loss",
                "wired links carry no random loss",
            )),
            Some(r) if !(r.rate > 0.0) => Err(Error::config("link.wireless.rate", "must be > 0")),
            Some(r) if r.rlc_cap < 1 => {
                Err(Error::config("link.wireless.rlc_cap", "must be >= 1"))
            }
            Some(r) if !(r.air_delay >= 0.0 && r.air_jitter >= 0.0) => Err(Error::config(
                "link.wireless.air_delay",
                "delays must be non-negative",
            )),
            _ => Ok(()),
        }
    }
}

/// One data packet as observed at the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub rx_time: f64,
    /// Sender timestamp (TSval).
    pub tx_time: f64,
    pub size: u32,
    /// Highest sequence byte received so far, this packet included.
    pub seq_end: u64,
    /// Cumulative ACK the sender had most recently received when it sent this
    /// packet, recovered at the receiver through the TSecr echo.
    pub ack_sent: u64,
    pub rlc_buffer: Option<u32>,
    pub pdcp_delay: Option<f64>,
}

/// Simulated or captured flow. `seed` is absent for external captures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub link: LinkConfig,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RecoveryEpisode {
    pub start: f64,
    pub cwnd_before: f64,
    /// cwnd at recovery exit; `None` if a timeout ended the episode.
    pub cwnd_after: Option<f64>,
}

/// Packet accounting and congestion events collected while simulating.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowStats {
    /// Data transmissions, retransmissions included.
    pub sent: u64,
    pub retransmitted: u64,
    pub delivered: u64,
    pub dropped_bottleneck: u64,
    pub dropped_rlc: u64,
    /// Transmissions still inside the network when the run ended.
    pub in_transit: u64,
    pub timeouts: u64,
    pub max_queue: usize,
    pub max_rlc_queue: usize,
    /// Time at which the sender left its initial slow start (or BBR Startup).
    pub slow_start_exit: Option<f64>,
    /// Drops (at either queue) that happened after `slow_start_exit`.
    pub drops_after_slow_start: u64,
    pub recoveries: Vec<RecoveryEpisode>,
}

impl FlowStats {
    pub fn dropped(&self) -> u64 {
        self.dropped_bottleneck + self.dropped_rlc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrace {
    pub records: Vec<PacketRecord>,
    pub label: CcAlgorithm,
    pub scenario: Scenario,
    pub duration: f64,
    #[serde(default)]
    pub stats: FlowStats,
}

impl FlowTrace {
    pub fn delivered_bytes(&self) -> u64 {
        self.records.iter().map(|r| u64::from(r.size)).sum()
    }

    /// Checks the record-level invariants a trace must satisfy.
    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::Empty("flow trace has no records".into()));
        }
        let mut prev: Option<&PacketRecord> = None;
        for (index, r) in self.records.iter().enumerate() {
            let corrupt = |reason: &str| Error::TraceCorrupt {
                index,
                reason: reason.to_string(),
            };
            if !r.rx_time.is_finite() || !r.tx_time.is_finite() {
                return Err(corrupt("non-finite timestamp"));
            }
            if r.rx_time < 0.0 || r.rx_time > self.duration {
                return Err(corrupt("rx_time outside [0, duration]"));
            }
            if let Some(p) = prev {
                if r.rx_time <= p.rx_time {
                    return Err(corrupt("rx_time not strictly increasing"));
                }
                if r.seq_end < p.seq_end {
                    return Err(corrupt("seq_end decreased"));
                }
            }
            prev = Some(r);
        }
        Ok(())
    }
}
