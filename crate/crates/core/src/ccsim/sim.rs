//! Event loop for one bulk-transfer flow.
//!
//! Topology: sender -> drop-tail bottleneck -> prop_rtt/2 -> [RLC + radio] ->
//! receiver, with ACKs returning after prop_rtt/2 (plus one air delay on the
//! radio uplink). Queue departures are computed at enqueue time since both
//! queues are FIFO with deterministic service, so only arrivals, ACKs and
//! timers are events.
//!
//! Loss recovery keeps a per-packet scoreboard fed by the segment that
//! triggered each ACK. A transmission is declared lost once three later
//! transmissions have been delivered; the path never reorders, so this has
//! no false positives.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cc::{cc_on_ack, cc_on_loss, cc_on_recovery_exit, cc_on_timeout, AckInfo, SenderState};
use super::wireless::{RlcOutcome, RlcStage};
use super::{CcAlgorithm, FlowStats, FlowTrace, LinkConfig, PacketRecord, RecoveryEpisode, Scenario};
use crate::error::{Error, Result};

const DUP_THRESH: u64 = 3;
const MIN_RTO: f64 = 0.2;
const MAX_RTO: f64 = 60.0;
/// Receiver window, packets.
const RWND: f64 = 4096.0;

/// RNG stream ids; each flow seed is split into independent streams.
const SENDER_STREAM: u64 = 0;
const RADIO_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    /// Collect per-record ground truth alongside the trace.
    pub ground_truth: bool,
    /// Abort after this many events (0 = unlimited).
    pub max_events: u64,
}

/// Simulator-internal values aligned with `FlowTrace::records`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    /// Sender's `snd_max - snd_una` in bytes right after sending the packet.
    pub unacked_bytes: Vec<u64>,
    /// Waiting time in the bottleneck queue, excluding serialization.
    pub queue_wait: Vec<f64>,
    /// Per-ACK `(time, cwnd, bw_estimate, min_rtt, pipe)` at the sender.
    pub sender_log: Vec<(f64, f64, f64, f64, u64)>,
}

#[derive(Debug, Clone, Copy)]
struct Packet {
    seq: u64,
    xmit: u64,
    tx_time: f64,
    ack_seen: u64,
    unacked_bytes: u64,
    queue_wait: f64,
    rlc: Option<(u32, f64)>,
}

#[derive(Debug, Clone, Copy)]
struct Ack {
    cum: u64,
    sacked: u64,
    echo_tx: f64,
    echo_xmit: u64,
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    RlcArrive(Packet),
    DataArrive(Packet),
    AckArrive(Ack),
    Rto(u64),
    Pace,
}

#[derive(Debug)]
struct Event {
    time: f64,
    order: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // min-heap on (time, insertion order)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.order.cmp(&self.order))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    InFlight,
    Lost,
    Delivered,
}

#[derive(Debug, Clone, Copy)]
struct Sent {
    xmit: u64,
    sent: f64,
    delivered: u64,
    delivered_time: f64,
    first_sent_time: f64,
    status: Status,
}

struct Flow {
    algo: CcAlgorithm,
    link: LinkConfig,
    cc: SenderState,
    mtu: u64,

    // sender scoreboard
    pkts: Vec<Sent>,
    snd_una: u64,
    snd_nxt: u64,
    pipe: u64,
    in_flight: BTreeMap<u64, u64>,
    lost: BTreeSet<u64>,
    highest_delivered_xmit: u64,
    next_xmit: u64,
    in_recovery: bool,
    recovery_point: u64,
    episode_open: bool,

    // delivery-rate sampling
    delivered: u64,
    delivered_time: f64,
    first_sent_time: f64,
    next_round_delivered: u64,

    // RTO
    srtt: f64,
    rttvar: f64,
    rto: f64,
    rto_gen: u64,
    rto_armed: bool,

    next_send_time: f64,
    pace_pending: bool,

    // network
    departures: std::collections::VecDeque<f64>,
    last_departure: f64,
    rlc: Option<RlcStage>,
    radio_rng: ChaCha8Rng,

    // receiver
    received: Vec<bool>,
    next_expected: u64,
    max_seq_end: u64,

    events: BinaryHeap<Event>,
    order: u64,

    records: Vec<PacketRecord>,
    stats: FlowStats,
    truth: Option<GroundTruth>,
}

impl Flow {
    fn new(algo: CcAlgorithm, link: LinkConfig, seed: u64, truth: bool) -> Self {
        let air = link.wireless.map_or(0.0, |r| r.air_delay);
        let handshake_rtt = link.prop_rtt + 2.0 * air;
        let mut sender_rng = ChaCha8Rng::seed_from_u64(seed);
        sender_rng.set_stream(SENDER_STREAM);
        let mut radio_rng = ChaCha8Rng::seed_from_u64(seed);
        radio_rng.set_stream(RADIO_STREAM);

        let mut cc = SenderState::new(algo, handshake_rtt);
        // BBR starts ProbeBW at a random phase other than the drain phase.
        let cycle = sender_rng.gen_range(0..7usize);
        cc.bbr.cycle_index = if cycle >= 1 { cycle + 1 } else { cycle };

        let rttvar = handshake_rtt / 2.0;
        Flow {
            algo,
            link,
            cc,
            mtu: u64::from(link.mtu),
            pkts: Vec::new(),
            snd_una: 0,
            snd_nxt: 0,
            pipe: 0,
            in_flight: BTreeMap::new(),
            lost: BTreeSet::new(),
            highest_delivered_xmit: 0,
            next_xmit: 0,
            in_recovery: false,
            recovery_point: 0,
            episode_open: false,
            delivered: 0,
            delivered_time: 0.0,
            first_sent_time: 0.0,
            next_round_delivered: 0,
            srtt: handshake_rtt,
            rttvar,
            rto: (handshake_rtt + 4.0 * rttvar).max(MIN_RTO),
            rto_gen: 0,
            rto_armed: false,
            next_send_time: 0.0,
            pace_pending: false,
            departures: Default::default(),
            last_departure: f64::NEG_INFINITY,
            rlc: link.wireless.map(|r| RlcStage::new(r, link.random_loss)),
            radio_rng,
            received: Vec::new(),
            next_expected: 0,
            max_seq_end: 0,
            events: BinaryHeap::new(),
            order: 0,
            records: Vec::new(),
            stats: FlowStats::default(),
            truth: truth.then(GroundTruth::default),
        }
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.order += 1;
        self.events.push(Event {
            time,
            order: self.order,
            kind,
        });
    }

    fn air_delay(&self) -> f64 {
        self.link.wireless.map_or(0.0, |r| r.air_delay)
    }

    fn run(mut self, duration: f64, max_events: u64) -> Result<(Vec<PacketRecord>, FlowStats, Option<GroundTruth>)> {
        self.try_send(0.0);
        let mut processed = 0u64;
        loop {
            let Some(ev) = self.events.pop() else {
                return Err(Error::Deadlock {
                    time: self.delivered_time,
                    reason: "event queue drained before the run ended".into(),
                });
            };
            if ev.time > duration {
                self.events.push(ev);
                break;
            }
            processed += 1;
            if max_events > 0 && processed > max_events {
                return Err(Error::Deadlock {
                    time: ev.time,
                    reason: format!("exceeded {max_events} events"),
                });
            }
            let now = ev.time;
            match ev.kind {
                EventKind::RlcArrive(p) => self.on_rlc_arrive(now, p),
                EventKind::DataArrive(p) => self.on_data(now, p),
                EventKind::AckArrive(a) => self.on_ack(now, a),
                EventKind::Rto(gen) => self.on_rto(now, gen),
                EventKind::Pace => {
                    self.pace_pending = false;
                    self.try_send(now);
                }
            }
        }
        self.stats.in_transit = self
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::RlcArrive(_) | EventKind::DataArrive(_)))
            .count() as u64;
        if let Some(rlc) = &self.rlc {
            self.stats.max_rlc_queue = rlc.max_occupancy();
        }
        Ok((self.records, self.stats, self.truth))
    }

    fn outstanding(&self) -> bool {
        self.snd_una < self.snd_nxt
    }

    fn try_send(&mut self, now: f64) {
        loop {
            let window = self.cc.cwnd.min(RWND).floor().max(1.0);
            if (self.pipe + 1) as f64 > window {
                break;
            }
            if let Some(rate) = self.cc.pacing_rate(self.algo) {
                if now < self.next_send_time {
                    if !self.pace_pending {
                        self.pace_pending = true;
                        let at = self.next_send_time;
                        self.schedule(at, EventKind::Pace);
                    }
                    break;
                }
                self.next_send_time = self.next_send_time.max(now) + 1.0 / rate;
            }
            let seq = match self.lost.pop_first() {
                Some(seq) => seq,
                None => {
                    self.snd_nxt += 1;
                    self.snd_nxt - 1
                }
            };
            self.transmit(now, seq);
        }
    }

    fn transmit(&mut self, now: f64, seq: u64) {
        let xmit = self.next_xmit;
        self.next_xmit += 1;
        if self.pipe == 0 {
            self.first_sent_time = now;
            self.delivered_time = now;
        }
        let entry = Sent {
            xmit,
            sent: now,
            delivered: self.delivered,
            delivered_time: self.delivered_time,
            first_sent_time: self.first_sent_time,
            status: Status::InFlight,
        };
        let retx = (seq as usize) < self.pkts.len();
        if retx {
            self.pkts[seq as usize] = entry;
            self.stats.retransmitted += 1;
        } else {
            self.pkts.push(entry);
        }
        self.pipe += 1;
        self.in_flight.insert(xmit, seq);
        self.stats.sent += 1;
        if !self.rto_armed {
            self.arm_rto(now);
        }

        // bottleneck
        while self.departures.front().is_some_and(|&t| t <= now) {
            self.departures.pop_front();
        }
        if self.departures.len() >= self.link.buffer {
            self.count_drop(now, false);
            return;
        }
        let ser = self.link.tx_time();
        let start = now.max(self.last_departure);
        let depart = start + ser;
        self.last_departure = depart;
        self.departures.push_back(depart);
        self.stats.max_queue = self.stats.max_queue.max(self.departures.len());

        let pkt = Packet {
            seq,
            xmit,
            tx_time: now,
            ack_seen: self.snd_una * self.mtu,
            unacked_bytes: (self.snd_nxt - self.snd_una) * self.mtu,
            queue_wait: start - now,
            rlc: None,
        };
        let arrive = depart + self.link.prop_rtt / 2.0;
        if self.rlc.is_some() {
            self.schedule(arrive, EventKind::RlcArrive(pkt));
        } else {
            self.schedule(arrive, EventKind::DataArrive(pkt));
        }
    }

    fn count_drop(&mut self, now: f64, rlc: bool) {
        if rlc {
            self.stats.dropped_rlc += 1;
        } else {
            self.stats.dropped_bottleneck += 1;
        }
        if self.stats.slow_start_exit.is_some_and(|t| now >= t) {
            self.stats.drops_after_slow_start += 1;
        }
    }

    fn on_rlc_arrive(&mut self, now: f64, mut pkt: Packet) {
        let rlc = self.rlc.as_mut().expect("radio leg configured");
        match rlc.arrive(now, &mut self.radio_rng) {
            RlcOutcome::Delivered {
                at,
                rlc_buffer,
                pdcp_delay,
                ..
            } => {
                pkt.rlc = Some((rlc_buffer, pdcp_delay));
                self.schedule(at, EventKind::DataArrive(pkt));
            }
            RlcOutcome::Overflow | RlcOutcome::ArqExhausted => self.count_drop(now, true),
        }
    }

    fn on_data(&mut self, now: f64, pkt: Packet) {
        let idx = pkt.seq as usize;
        if self.received.len() <= idx {
            self.received.resize(idx + 1, false);
        }
        self.received[idx] = true;
        while self
            .received
            .get(self.next_expected as usize)
            .copied()
            .unwrap_or(false)
        {
            self.next_expected += 1;
        }
        self.max_seq_end = self.max_seq_end.max((pkt.seq + 1) * self.mtu);
        self.stats.delivered += 1;
        self.records.push(PacketRecord {
            rx_time: now,
            tx_time: pkt.tx_time,
            size: self.link.mtu,
            seq_end: self.max_seq_end,
            ack_sent: pkt.ack_seen,
            rlc_buffer: pkt.rlc.map(|(b, _)| b),
            pdcp_delay: pkt.rlc.map(|(_, d)| d),
        });
        if let Some(t) = &mut self.truth {
            t.unacked_bytes.push(pkt.unacked_bytes);
            t.queue_wait.push(pkt.queue_wait);
        }
        let ack = Ack {
            cum: self.next_expected,
            sacked: pkt.seq,
            echo_tx: pkt.tx_time,
            echo_xmit: pkt.xmit,
        };
        let back = now + self.link.prop_rtt / 2.0 + self.air_delay();
        self.schedule(back, EventKind::AckArrive(ack));
    }

    fn mark_delivered(&mut self, seq: u64, now: f64) -> bool {
        let p = self.pkts[seq as usize];
        match p.status {
            Status::Delivered => return false,
            Status::InFlight => {
                self.pipe -= 1;
                self.in_flight.remove(&p.xmit);
            }
            Status::Lost => {
                self.lost.remove(&seq);
            }
        }
        self.pkts[seq as usize].status = Status::Delivered;
        self.delivered += 1;
        self.delivered_time = now;
        true
    }

    fn update_rto(&mut self, rtt: f64) {
        self.rttvar = 0.75 * self.rttvar + 0.25 * (self.srtt - rtt).abs();
        self.srtt = 0.875 * self.srtt + 0.125 * rtt;
        self.rto = (self.srtt + 4.0 * self.rttvar).clamp(MIN_RTO, MAX_RTO);
    }

    fn arm_rto(&mut self, now: f64) {
        self.rto_gen += 1;
        self.rto_armed = true;
        let (gen, at) = (self.rto_gen, now + self.rto);
        self.schedule(at, EventKind::Rto(gen));
    }

    fn on_ack(&mut self, now: f64, ack: Ack) {
        let rtt = now - ack.echo_tx;
        self.update_rto(rtt);

        let mut acked = 0u64;
        let advanced = ack.cum > self.snd_una;
        while self.snd_una < ack.cum {
            if self.mark_delivered(self.snd_una, now) {
                acked += 1;
            }
            self.snd_una += 1;
        }
        if self.mark_delivered(ack.sacked, now) {
            acked += 1;
        }
        self.highest_delivered_xmit = self.highest_delivered_xmit.max(ack.echo_xmit);

        let mut loss = false;
        while let Some((&xmit, &seq)) = self.in_flight.first_key_value() {
            if xmit + DUP_THRESH > self.highest_delivered_xmit {
                break;
            }
            self.in_flight.remove(&xmit);
            self.pipe -= 1;
            self.pkts[seq as usize].status = Status::Lost;
            self.lost.insert(seq);
            loss = true;
        }
        if loss && !self.in_recovery {
            self.in_recovery = true;
            self.recovery_point = self.snd_nxt;
            if self.algo != CcAlgorithm::Bbr {
                self.episode_open = true;
                self.stats.recoveries.push(RecoveryEpisode {
                    start: now,
                    cwnd_before: self.cc.cwnd,
                    cwnd_after: None,
                });
            }
            self.cc = cc_on_loss(self.algo, self.cc.clone(), now);
        }

        if acked > 0 {
            let mut info = AckInfo::new(now, rtt, acked as f64);
            info.inflight = self.pipe as f64;
            let p = self.pkts[ack.sacked as usize];
            if p.xmit == ack.echo_xmit {
                let send_elapsed = p.sent - p.first_sent_time;
                let ack_elapsed = self.delivered_time - p.delivered_time;
                let interval = send_elapsed.max(ack_elapsed);
                if interval > 0.0 {
                    info.delivery_rate = Some((self.delivered - p.delivered) as f64 / interval);
                }
                if p.delivered >= self.next_round_delivered {
                    info.round_start = true;
                    self.next_round_delivered = self.delivered;
                }
                self.first_sent_time = p.sent;
            }
            self.cc = cc_on_ack(self.algo, self.cc.clone(), &info);
        }

        if self.in_recovery && self.snd_una >= self.recovery_point {
            self.in_recovery = false;
            self.cc = cc_on_recovery_exit(self.algo, self.cc.clone());
            if self.episode_open {
                self.episode_open = false;
                if let Some(ep) = self.stats.recoveries.last_mut() {
                    ep.cwnd_after = Some(self.cc.cwnd);
                }
            }
        }
        if self.stats.slow_start_exit.is_none() && !self.cc.in_slow_start() {
            self.stats.slow_start_exit = Some(now);
        }
        if let Some(t) = &mut self.truth {
            t.sender_log
                .push((now, self.cc.cwnd, self.cc.bw_estimate, self.cc.min_rtt, self.pipe));
        }

        if advanced {
            if self.outstanding() {
                self.arm_rto(now);
            } else {
                self.rto_gen += 1;
                self.rto_armed = false;
            }
        }
        self.try_send(now);
    }

    fn on_rto(&mut self, now: f64, gen: u64) {
        if gen != self.rto_gen || !self.outstanding() {
            return;
        }
        self.stats.timeouts += 1;
        if self.stats.slow_start_exit.is_none() {
            self.stats.slow_start_exit = Some(now);
        }
        self.episode_open = false;
        for (_, seq) in std::mem::take(&mut self.in_flight) {
            self.pkts[seq as usize].status = Status::Lost;
            self.lost.insert(seq);
        }
        self.pipe = 0;
        self.cc = cc_on_timeout(self.algo, self.cc.clone(), now);
        self.in_recovery = true;
        self.recovery_point = self.snd_nxt;
        self.rto = (self.rto * 2.0).min(MAX_RTO);
        self.arm_rto(now);
        self.try_send(now);
    }
}

/// Simulates one flow and returns the receiver-side trace.
pub fn simulate_flow(
    algo: CcAlgorithm,
    link: LinkConfig,
    duration: f64,
    seed: u64,
) -> Result<FlowTrace> {
    simulate_flow_with(algo, link, duration, seed, SimOptions::default()).map(|(t, _)| t)
}

pub fn simulate_flow_with(
    algo: CcAlgorithm,
    link: LinkConfig,
    duration: f64,
    seed: u64,
    opts: SimOptions,
) -> Result<(FlowTrace, Option<GroundTruth>)> {
    link.validate()?;
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::config("duration", "must be > 0"));
    }
    let flow = Flow::new(algo, link, seed, opts.ground_truth);
    let (records, stats, truth) = flow.run(duration, opts.max_events)?;
    let trace = FlowTrace {
        records,
        label: algo,
        scenario: Scenario {
            link,
            seed: Some(seed),
        },
        duration,
        stats,
    };
    Ok((trace, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccsim::RadioConfig;

    fn wired(buffer_bdp: f64) -> LinkConfig {
        let mut link = LinkConfig::wired(10e6, 0.05, 1);
        link.buffer = (link.bdp_packets() * buffer_bdp).round() as usize;
        link
    }

    #[test]
    fn runs_every_algorithm() {
        for algo in CcAlgorithm::ALL {
            let trace = simulate_flow(algo, wired(1.0), 10.0, 1).unwrap();
            trace.validate().unwrap();
            assert!(trace.records.len() > 1000, "{algo}: {}", trace.records.len());
            assert_eq!(trace.label, algo);
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let link = wired(1.0).with_radio(RadioConfig::new(8e6, 200), 0.02);
        let a = simulate_flow(CcAlgorithm::Cubic, link, 5.0, 9).unwrap();
        let b = simulate_flow(CcAlgorithm::Cubic, link, 5.0, 9).unwrap();
        assert_eq!(a, b);
        let c = simulate_flow(CcAlgorithm::Cubic, link, 5.0, 10).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn conservation_and_queue_bound() {
        for algo in CcAlgorithm::ALL {
            let link = wired(1.0);
            let t = simulate_flow(algo, link, 8.0, 3).unwrap();
            let s = &t.stats;
            assert_eq!(s.sent, s.delivered + s.dropped() + s.in_transit, "{algo}");
            assert_eq!(s.delivered as usize, t.records.len());
            assert!(s.max_queue <= link.buffer);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(simulate_flow(CcAlgorithm::Bbr, wired(1.0), 0.0, 1).is_err());
        let mut link = wired(1.0);
        link.random_loss = 0.1;
        assert!(matches!(
            simulate_flow(CcAlgorithm::Bbr, link, 1.0, 1),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn event_budget_reports_failure() {
        let opts = SimOptions {
            max_events: 100,
            ..Default::default()
        };
        let err = simulate_flow_with(CcAlgorithm::NewReno, wired(1.0), 10.0, 1, opts).unwrap_err();
        assert!(matches!(err, Error::Deadlock { .. }));
    }
}
