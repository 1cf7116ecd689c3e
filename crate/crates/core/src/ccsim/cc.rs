//! Congestion-control state machines.
//!
//! All window quantities are in packets and may be fractional. The simulator
//! drives a [`SenderState`] through [`cc_on_ack`], [`cc_on_loss`],
//! [`cc_on_recovery_exit`] and [`cc_on_timeout`].

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::CcAlgorithm;

pub const INITIAL_CWND: f64 = 10.0;
pub const MIN_CWND: f64 = 1.0;

pub const RENO_BETA: f64 = 0.5;
pub const CUBIC_BETA: f64 = 0.7;
/// Cubic scaling constant, packets/s³.
pub const CUBIC_C: f64 = 0.4;

pub const VEGAS_ALPHA: f64 = 2.0;
pub const VEGAS_BETA: f64 = 4.0;
/// Slow-start exit threshold on the Vegas queue estimate.
pub const VEGAS_GAMMA: f64 = 1.0;

/// Hybla reference RTT.
pub const HYBLA_RTT0: f64 = 0.025;

pub const BBR_HIGH_GAIN: f64 = 2.885_390_081_777_926_8; // 2 / ln 2
pub const BBR_CWND_GAIN: f64 = 2.0;
pub const BBR_PROBE_BW_GAINS: [f64; 8] = [1.25, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
const BBR_BW_WINDOW_ROUNDS: u64 = 10;
const BBR_RTPROP_WINDOW: f64 = 10.0;
const BBR_PROBE_RTT_DURATION: f64 = 0.2;
const BBR_MIN_CWND: f64 = 4.0;
const BBR_FULL_BW_THRESH: f64 = 1.25;
const BBR_FULL_BW_ROUNDS: u32 = 3;

const WESTWOOD_MIN_INTERVAL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    SlowStart,
    CongestionAvoidance,
    Recovery,
    Startup,
    Drain,
    ProbeBw,
    ProbeRtt,
}

impl Phase {
    pub fn is_bbr(self) -> bool {
        matches!(
            self,
            Phase::Startup | Phase::Drain | Phase::ProbeBw | Phase::ProbeRtt
        )
    }
}

/// Per-ACK input to the congestion controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AckInfo {
    pub now: f64,
    pub rtt_sample: f64,
    /// Packets newly delivered by this ACK.
    pub acked: f64,
    /// Delivery-rate sample, packets/s.
    pub delivery_rate: Option<f64>,
    /// Whether this ACK opens a new packet-timed round trip.
    pub round_start: bool,
    /// Packets in flight after processing the ACK.
    pub inflight: f64,
}

impl AckInfo {
    pub fn new(now: f64, rtt_sample: f64, acked: f64) -> Self {
        AckInfo {
            now,
            rtt_sample,
            acked,
            delivery_rate: None,
            round_start: false,
            inflight: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbrState {
    /// Windowed-min round-trip propagation estimate used by the model.
    pub rtprop: f64,
    pub rtprop_stamp: f64,
    pub round_count: u64,
    /// Per-round maxima of delivery-rate samples over the bandwidth window.
    bw_rounds: VecDeque<(u64, f64)>,
    pub full_bw: f64,
    pub full_bw_count: u32,
    pub filled_pipe: bool,
    pub cycle_index: usize,
    pub cycle_stamp: f64,
    pub probe_rtt_done: Option<f64>,
    probe_rtt_round: u64,
    prior_cwnd: f64,
    delivered: f64,
}

impl BbrState {
    fn new(rtt: f64) -> Self {
        BbrState {
            rtprop: rtt,
            rtprop_stamp: 0.0,
            round_count: 0,
            bw_rounds: VecDeque::new(),
            full_bw: 0.0,
            full_bw_count: 0,
            filled_pipe: false,
            cycle_index: 0,
            cycle_stamp: 0.0,
            probe_rtt_done: None,
            probe_rtt_round: 0,
            prior_cwnd: 0.0,
            delivered: 0.0,
        }
    }

    fn max_bw(&self) -> f64 {
        self.bw_rounds.iter().map(|&(_, b)| b).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenderState {
    pub cwnd: f64,
    pub ssthresh: f64,
    pub phase: Phase,
    /// Smallest RTT sample seen in the flow.
    pub min_rtt: f64,
    /// Vegas base RTT (same estimator as `min_rtt`).
    pub base_rtt: f64,
    pub srtt: f64,
    /// Cubic: window before the last reduction.
    pub w_max: f64,
    /// Cubic: start of the current growth epoch, reset on loss.
    pub epoch_start: Option<f64>,
    pub cubic_k: f64,
    /// Westwood / BBR bandwidth estimate, packets/s.
    pub bw_estimate: f64,
    pub pacing_gain: f64,
    /// Hybla normalized RTT, from the smallest smoothed RTT seen.
    pub rho: f64,
    westwood_acked: f64,
    westwood_start: Option<f64>,
    pub bbr: BbrState,
}

impl SenderState {
    /// Fresh sender state. `handshake_rtt` seeds the RTT estimators.
    pub fn new(algo: CcAlgorithm, handshake_rtt: f64) -> Self {
        let bbr = algo == CcAlgorithm::Bbr;
        SenderState {
            cwnd: INITIAL_CWND,
            ssthresh: f64::INFINITY,
            phase: if bbr { Phase::Startup } else { Phase::SlowStart },
            min_rtt: handshake_rtt,
            base_rtt: handshake_rtt,
            srtt: handshake_rtt,
            w_max: 0.0,
            epoch_start: None,
            cubic_k: 0.0,
            bw_estimate: 0.0,
            pacing_gain: if bbr { BBR_HIGH_GAIN } else { 1.0 },
            rho: hybla_rho(handshake_rtt),
            westwood_acked: 0.0,
            westwood_start: None,
            bbr: BbrState::new(handshake_rtt),
        }
    }

    /// BBR pacing rate in packets/s; `None` for ACK-clocked algorithms.
    pub fn pacing_rate(&self, algo: CcAlgorithm) -> Option<f64> {
        if algo != CcAlgorithm::Bbr {
            return None;
        }
        let rate = if self.bw_estimate > 0.0 {
            self.pacing_gain * self.bw_estimate
        } else {
            BBR_HIGH_GAIN * self.cwnd / self.bbr.rtprop
        };
        Some(rate)
    }

    pub fn in_slow_start(&self) -> bool {
        matches!(self.phase, Phase::SlowStart | Phase::Startup)
    }
}

fn hybla_rho(srtt: f64) -> f64 {
    (srtt / HYBLA_RTT0).max(1.0)
}

/// One additive-increase / multiplicative-decrease step.
pub fn aimd_step(w: f64, ack: bool, alpha: f64, beta: f64) -> f64 {
    debug_assert!(w >= MIN_CWND && alpha > 0.0 && beta > 0.0 && beta < 1.0);
    let next = if ack { w + alpha } else { beta * w };
    next.max(MIN_CWND)
}

/// Cubic window `t` seconds into an epoch that started at `beta * w_max`.
pub fn cubic_window(t: f64, w_max: f64, c: f64, beta: f64) -> f64 {
    let k = (w_max * (1.0 - beta) / c).cbrt();
    (c * (t - k).powi(3) + w_max).max(MIN_CWND)
}

pub fn cc_on_ack(algo: CcAlgorithm, mut s: SenderState, ack: &AckInfo) -> SenderState {
    debug_assert!(ack.rtt_sample > 0.0);
    s.min_rtt = s.min_rtt.min(ack.rtt_sample);
    s.base_rtt = s.base_rtt.min(ack.rtt_sample);
    s.srtt = 0.875 * s.srtt + 0.125 * ack.rtt_sample;
    // rho follows the lowest smoothed RTT, not the queue-inflated one
    s.rho = s.rho.min(hybla_rho(s.srtt));

    if algo == CcAlgorithm::Bbr {
        bbr_on_ack(&mut s, ack);
        return s;
    }
    if algo == CcAlgorithm::Westwood {
        westwood_update_bw(&mut s, ack);
    }
    match s.phase {
        Phase::Recovery => {}
        Phase::SlowStart => slow_start(algo, &mut s, ack),
        Phase::CongestionAvoidance => congestion_avoidance(algo, &mut s, ack),
        _ => unreachable!("loss-based sender in BBR phase"),
    }
    s.cwnd = s.cwnd.max(MIN_CWND);
    s
}

fn slow_start(algo: CcAlgorithm, s: &mut SenderState, ack: &AckInfo) {
    match algo {
        CcAlgorithm::Vegas => {
            let diff = vegas_diff(s, ack.rtt_sample);
            if diff > VEGAS_GAMMA {
                s.ssthresh = s.cwnd;
                s.phase = Phase::CongestionAvoidance;
                return;
            }
            s.cwnd += ack.acked;
        }
        CcAlgorithm::Hybla => s.cwnd += (2f64.powf(s.rho) - 1.0) * ack.acked,
        _ => s.cwnd += ack.acked,
    }
    if s.cwnd >= s.ssthresh {
        s.cwnd = s.ssthresh;
        s.phase = Phase::CongestionAvoidance;
    }
}

fn congestion_avoidance(algo: CcAlgorithm, s: &mut SenderState, ack: &AckInfo) {
    match algo {
        CcAlgorithm::NewReno | CcAlgorithm::Westwood => s.cwnd += ack.acked / s.cwnd,
        CcAlgorithm::Hybla => s.cwnd += s.rho * s.rho * ack.acked / s.cwnd,
        CcAlgorithm::Vegas => {
            let diff = vegas_diff(s, ack.rtt_sample);
            if diff < VEGAS_ALPHA {
                s.cwnd += ack.acked / s.cwnd;
            } else if diff > VEGAS_BETA {
                s.cwnd -= ack.acked / s.cwnd;
            }
        }
        CcAlgorithm::Cubic => cubic_update(s, ack),
        CcAlgorithm::Bbr => unreachable!(),
    }
}

/// Vegas queue estimate: expected minus actual rate, times base RTT.
fn vegas_diff(s: &SenderState, rtt: f64) -> f64 {
    s.cwnd * (1.0 - s.base_rtt / rtt)
}

fn cubic_update(s: &mut SenderState, ack: &AckInfo) {
    let start = match s.epoch_start {
        Some(t) => t,
        None => {
            if s.cwnd < s.w_max {
                s.cubic_k = ((s.w_max - s.cwnd) / CUBIC_C).cbrt();
            } else {
                s.cubic_k = 0.0;
                s.w_max = s.cwnd;
            }
            s.epoch_start = Some(ack.now);
            ack.now
        }
    };
    let t = ack.now - start + s.min_rtt;
    let target = CUBIC_C * (t - s.cubic_k).powi(3) + s.w_max;
    if target > s.cwnd {
        s.cwnd += (target - s.cwnd) / s.cwnd * ack.acked;
    } else {
        s.cwnd += 0.01 * ack.acked / s.cwnd;
    }
}

fn westwood_update_bw(s: &mut SenderState, ack: &AckInfo) {
    let start = *s.westwood_start.get_or_insert(ack.now);
    s.westwood_acked += ack.acked;
    let elapsed = ack.now - start;
    if elapsed >= s.min_rtt.max(WESTWOOD_MIN_INTERVAL) {
        let sample = s.westwood_acked / elapsed;
        s.bw_estimate = if s.bw_estimate > 0.0 {
            0.875 * s.bw_estimate + 0.125 * sample
        } else {
            sample
        };
        s.westwood_acked = 0.0;
        s.westwood_start = Some(ack.now);
    }
}

fn bbr_on_ack(s: &mut SenderState, ack: &AckInfo) {
    let b = &mut s.bbr;
    let now = ack.now;
    b.delivered += ack.acked;

    let rtprop_expired = now > b.rtprop_stamp + BBR_RTPROP_WINDOW;
    let usec = |t: f64| (t * 1e6).round();
    if usec(ack.rtt_sample) < usec(b.rtprop) || rtprop_expired {
        b.rtprop = ack.rtt_sample;
        b.rtprop_stamp = now;
    }

    if ack.round_start {
        b.round_count += 1;
    }
    if let Some(rate) = ack.delivery_rate {
        let round = b.round_count;
        match b.bw_rounds.back_mut() {
            Some((r, v)) if *r == round => *v = v.max(rate),
            _ => b.bw_rounds.push_back((round, rate)),
        }
        while b
            .bw_rounds
            .front()
            .is_some_and(|&(r, _)| r + BBR_BW_WINDOW_ROUNDS <= round)
        {
            b.bw_rounds.pop_front();
        }
    }
    s.bw_estimate = b.max_bw();

    if ack.round_start && !b.filled_pipe && s.bw_estimate > 0.0 {
        if s.bw_estimate >= b.full_bw * BBR_FULL_BW_THRESH {
            b.full_bw = s.bw_estimate;
            b.full_bw_count = 0;
        } else {
            b.full_bw_count += 1;
            b.filled_pipe = b.full_bw_count >= BBR_FULL_BW_ROUNDS;
        }
    }

    let bdp = s.bw_estimate * b.rtprop;
    match s.phase {
        Phase::Startup if b.filled_pipe => s.phase = Phase::Drain,
        Phase::ProbeBw if now - b.cycle_stamp > b.rtprop => {
            b.cycle_index = (b.cycle_index + 1) % BBR_PROBE_BW_GAINS.len();
            b.cycle_stamp = now;
        }
        _ => {}
    }
    if s.phase == Phase::Drain && ack.inflight <= bdp {
        s.phase = Phase::ProbeBw;
        b.cycle_index = 2;
        b.cycle_stamp = now;
    }

    if s.phase != Phase::ProbeRtt && rtprop_expired {
        s.phase = Phase::ProbeRtt;
        b.prior_cwnd = s.cwnd;
        b.probe_rtt_done = None;
    }
    if s.phase == Phase::ProbeRtt {
        match b.probe_rtt_done {
            None if ack.inflight <= BBR_MIN_CWND => {
                b.probe_rtt_done = Some(now + BBR_PROBE_RTT_DURATION);
                b.probe_rtt_round = b.round_count;
            }
            Some(done) if now >= done && b.round_count > b.probe_rtt_round => {
                b.rtprop_stamp = now;
                b.probe_rtt_done = None;
                if b.filled_pipe {
                    s.phase = Phase::ProbeBw;
                    b.cycle_index = 0;
                    b.cycle_stamp = now;
                } else {
                    s.phase = Phase::Startup;
                }
                s.cwnd = s.cwnd.max(b.prior_cwnd);
            }
            _ => {}
        }
    }

    s.pacing_gain = match s.phase {
        Phase::Startup => BBR_HIGH_GAIN,
        Phase::Drain => 1.0 / BBR_HIGH_GAIN,
        Phase::ProbeBw => BBR_PROBE_BW_GAINS[b.cycle_index],
        _ => 1.0,
    };

    let gain = if b.filled_pipe {
        BBR_CWND_GAIN
    } else {
        BBR_HIGH_GAIN
    };
    let target = if s.bw_estimate > 0.0 {
        (gain * bdp).max(BBR_MIN_CWND)
    } else {
        INITIAL_CWND
    };
    if b.filled_pipe {
        s.cwnd = (s.cwnd + ack.acked).min(target);
    } else if s.cwnd < target || b.delivered < INITIAL_CWND {
        s.cwnd += ack.acked;
    }
    s.cwnd = s.cwnd.max(BBR_MIN_CWND);
    if s.phase == Phase::ProbeRtt {
        s.cwnd = s.cwnd.min(BBR_MIN_CWND);
    }
}

/// Loss detected by duplicate ACKs: one multiplicative decrease per episode.
pub fn cc_on_loss(algo: CcAlgorithm, mut s: SenderState, _now: f64) -> SenderState {
    if algo == CcAlgorithm::Bbr || s.phase == Phase::Recovery {
        return s;
    }
    match algo {
        CcAlgorithm::Cubic => {
            s.w_max = s.cwnd;
            s.epoch_start = None;
            s.cwnd = aimd_step(s.cwnd, false, 1.0, CUBIC_BETA);
            s.ssthresh = s.cwnd;
        }
        CcAlgorithm::Westwood => {
            s.ssthresh = westwood_ssthresh(&s);
            s.cwnd = s.ssthresh;
        }
        _ => {
            s.cwnd = aimd_step(s.cwnd, false, 1.0, RENO_BETA);
            s.ssthresh = s.cwnd;
        }
    }
    s.phase = Phase::Recovery;
    s
}

fn westwood_ssthresh(s: &SenderState) -> f64 {
    if s.bw_estimate > 0.0 {
        (s.bw_estimate * s.min_rtt).max(2.0)
    } else {
        aimd_step(s.cwnd, false, 1.0, RENO_BETA)
    }
}

/// All data outstanding at recovery entry has been acknowledged.
pub fn cc_on_recovery_exit(algo: CcAlgorithm, mut s: SenderState) -> SenderState {
    if algo != CcAlgorithm::Bbr && s.phase == Phase::Recovery {
        s.cwnd = s.ssthresh.max(MIN_CWND);
        s.phase = Phase::CongestionAvoidance;
    }
    s
}

/// Retransmission timeout: collapse to one packet and slow-start again.
pub fn cc_on_timeout(algo: CcAlgorithm, mut s: SenderState, _now: f64) -> SenderState {
    match algo {
        CcAlgorithm::Bbr => return s,
        CcAlgorithm::Cubic => {
            s.w_max = s.cwnd;
            s.epoch_start = None;
            s.ssthresh = (CUBIC_BETA * s.cwnd).max(2.0);
        }
        CcAlgorithm::Westwood => s.ssthresh = westwood_ssthresh(&s),
        _ => s.ssthresh = (RENO_BETA * s.cwnd).max(2.0),
    }
    s.cwnd = MIN_CWND;
    s.phase = Phase::SlowStart;
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ca_state(algo: CcAlgorithm, cwnd: f64, rtt: f64) -> SenderState {
        let mut s = SenderState::new(algo, rtt);
        s.cwnd = cwnd;
        s.ssthresh = cwnd;
        s.phase = Phase::CongestionAvoidance;
        s
    }

    #[test]
    fn aimd_branches() {
        assert_eq!(aimd_step(100.0, true, 1.0, 0.5), 101.0);
        assert_eq!(aimd_step(100.0, false, 1.0, 0.5), 50.0);
        assert!((aimd_step(100.0, false, 1.0, 0.7) - 70.0).abs() < 1e-12);
        assert_eq!(aimd_step(1.0, false, 1.0, 0.5), 1.0);
    }

    #[test]
    fn cubic_window_shape() {
        let k = (100.0f64 * 0.3 / 0.4).cbrt();
        assert!((cubic_window(k, 100.0, CUBIC_C, CUBIC_BETA) - 100.0).abs() < 1e-9);
        assert!((cubic_window(0.0, 100.0, CUBIC_C, CUBIC_BETA) - 70.0).abs() < 1e-9);
        assert!((cubic_window(k + 1.0, 100.0, 0.4, CUBIC_BETA) - 100.4).abs() < 1e-9);
    }

    #[test]
    fn newreno_grows_one_packet_per_window() {
        let s = ca_state(CcAlgorithm::NewReno, 10.0, 0.05);
        let s = cc_on_ack(CcAlgorithm::NewReno, s, &AckInfo::new(1.0, 0.05, 10.0));
        assert!((s.cwnd - 11.0).abs() < 1e-12);
    }

    #[test]
    fn vegas_grows_when_queue_empty() {
        let s = ca_state(CcAlgorithm::Vegas, 20.0, 0.05);
        let s = cc_on_ack(CcAlgorithm::Vegas, s, &AckInfo::new(1.0, 0.05, 1.0));
        assert!((s.cwnd - (20.0 + 1.0 / 20.0)).abs() < 1e-12);
    }

    #[test]
    fn vegas_holds_inside_band_and_shrinks_above() {
        // diff = 20 * (1 - 0.05/rtt); 3 packets queued => rtt = 0.05 * 20/17
        let s = ca_state(CcAlgorithm::Vegas, 20.0, 0.05);
        let s = cc_on_ack(CcAlgorithm::Vegas, s, &AckInfo::new(1.0, 0.05 * 20.0 / 17.0, 1.0));
        assert!((s.cwnd - 20.0).abs() < 1e-12);
        let s = cc_on_ack(CcAlgorithm::Vegas, s, &AckInfo::new(1.0, 0.05 * 2.0, 1.0));
        assert!((s.cwnd - (20.0 - 1.0 / 20.0)).abs() < 1e-12);
    }

    #[test]
    fn hybla_rho_squared_growth() {
        let mut s = ca_state(CcAlgorithm::Hybla, 10.0, 0.05);
        // keep srtt pinned at 2 * rtt0 so rho stays 2
        s.srtt = 0.05;
        let s = cc_on_ack(CcAlgorithm::Hybla, s, &AckInfo::new(1.0, 0.05, 10.0));
        assert!((s.rho - 2.0).abs() < 1e-12);
        assert!((s.cwnd - 14.0).abs() < 1e-12);
    }

    #[test]
    fn hybla_slow_start_exponent() {
        let mut s = SenderState::new(CcAlgorithm::Hybla, 0.05);
        s.srtt = 0.05;
        let s = cc_on_ack(CcAlgorithm::Hybla, s, &AckInfo::new(0.1, 0.05, 1.0));
        assert!((s.cwnd - (10.0 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn loss_reductions() {
        let s = ca_state(CcAlgorithm::NewReno, 64.0, 0.05);
        let s = cc_on_loss(CcAlgorithm::NewReno, s, 1.0);
        assert_eq!((s.cwnd, s.ssthresh, s.phase), (32.0, 32.0, Phase::Recovery));

        let s = ca_state(CcAlgorithm::Cubic, 100.0, 0.05);
        let s = cc_on_loss(CcAlgorithm::Cubic, s, 1.0);
        assert!((s.cwnd - 70.0).abs() < 1e-12);
        assert_eq!(s.w_max, 100.0);
        assert_eq!(s.epoch_start, None);

        let mut s = ca_state(CcAlgorithm::Westwood, 100.0, 0.05);
        s.bw_estimate = 1000.0;
        s.min_rtt = 0.04;
        let s = cc_on_loss(CcAlgorithm::Westwood, s, 1.0);
        assert!((s.ssthresh - 40.0).abs() < 1e-12);
        assert_eq!(s.cwnd, s.ssthresh);
    }

    #[test]
    fn second_loss_in_recovery_is_ignored() {
        let s = ca_state(CcAlgorithm::NewReno, 64.0, 0.05);
        let s = cc_on_loss(CcAlgorithm::NewReno, s, 1.0);
        let s = cc_on_loss(CcAlgorithm::NewReno, s, 1.01);
        assert_eq!(s.cwnd, 32.0);
        let s = cc_on_recovery_exit(CcAlgorithm::NewReno, s);
        assert_eq!((s.cwnd, s.phase), (32.0, Phase::CongestionAvoidance));
    }

    #[test]
    fn bbr_ignores_isolated_loss() {
        let mut s = SenderState::new(CcAlgorithm::Bbr, 0.05);
        s.cwnd = 123.0;
        let before = s.clone();
        let s = cc_on_loss(CcAlgorithm::Bbr, s, 2.0);
        assert_eq!(s, before);
    }

    #[test]
    fn min_rtt_tracks_smallest_sample() {
        let mut s = SenderState::new(CcAlgorithm::Cubic, 0.1);
        for (i, rtt) in [0.2, 0.06, 0.09, 0.07].into_iter().enumerate() {
            s = cc_on_ack(CcAlgorithm::Cubic, s, &AckInfo::new(i as f64, rtt, 1.0));
        }
        assert_eq!(s.min_rtt, 0.06);
    }

    #[test]
    fn bbr_startup_exits_after_plateau() {
        let algo = CcAlgorithm::Bbr;
        let mut s = SenderState::new(algo, 0.05);
        let mut now = 0.0;
        for round in 0..12 {
            now += 0.05;
            let rate = if round < 5 { 100.0 * 2f64.powi(round) } else { 1600.0 };
            let ack = AckInfo {
                now,
                rtt_sample: 0.05,
                acked: 1.0,
                delivery_rate: Some(rate),
                round_start: true,
                inflight: 1e9,
            };
            s = cc_on_ack(algo, s, &ack);
        }
        assert!(s.bbr.filled_pipe);
        assert_eq!(s.phase, Phase::Drain);
        assert!((s.pacing_gain - 1.0 / BBR_HIGH_GAIN).abs() < 1e-12);

        let ack = AckInfo {
            now: now + 0.01,
            rtt_sample: 0.05,
            acked: 1.0,
            delivery_rate: Some(1600.0),
            round_start: false,
            inflight: 10.0,
        };
        s = cc_on_ack(algo, s, &ack);
        assert_eq!(s.phase, Phase::ProbeBw);
        assert!((s.cwnd - 2.0 * 1600.0 * 0.05).abs() < 1e-9 || s.cwnd < 2.0 * 1600.0 * 0.05);
    }

    #[test]
    fn bbr_enters_probe_rtt_after_ten_seconds() {
        let algo = CcAlgorithm::Bbr;
        let mut s = SenderState::new(algo, 0.05);
        s.phase = Phase::ProbeBw;
        s.bbr.filled_pipe = true;
        s.bbr.rtprop_stamp = 0.0;
        let ack = AckInfo {
            now: 10.5,
            rtt_sample: 0.08,
            acked: 1.0,
            delivery_rate: Some(1000.0),
            round_start: false,
            inflight: 50.0,
        };
        s = cc_on_ack(algo, s, &ack);
        assert_eq!(s.phase, Phase::ProbeRtt);
        assert_eq!(s.cwnd, BBR_MIN_CWND);
    }

    #[test]
    fn bbr_min_rtt_refreshes_only_on_smaller_microsecond_samples() {
        let algo = CcAlgorithm::Bbr;
        let mut s = SenderState::new(algo, 0.05);
        s.phase = Phase::ProbeBw;
        s.bbr.filled_pipe = true;
        s.bbr.rtprop = 0.05;
        s.bbr.rtprop_stamp = 1.0;
        let mut ack = AckInfo {
            now: 5.0,
            rtt_sample: 0.05,
            acked: 1.0,
            delivery_rate: Some(1000.0),
            round_start: false,
            inflight: 50.0,
        };
        s = cc_on_ack(algo, s, &ack);
        assert_eq!(s.bbr.rtprop_stamp, 1.0);
        ack.rtt_sample = 0.049;
        s = cc_on_ack(algo, s, &ack);
        assert_eq!((s.bbr.rtprop, s.bbr.rtprop_stamp), (0.049, 5.0));
        ack.now = 6.0;
        ack.rtt_sample = 0.049 - 1e-9;
        s = cc_on_ack(algo, s, &ack);
        assert_eq!(s.bbr.rtprop_stamp, 5.0);
    }
}
