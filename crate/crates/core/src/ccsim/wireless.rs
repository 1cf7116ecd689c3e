//! Radio leg: RLC drop-tail queue served at the radio rate, with per-attempt
//! Bernoulli corruption and bounded ARQ.
//!
//! Service is FIFO and deterministic once the attempt count is drawn, so the
//! outcome of a packet is fully decided at its arrival instant. Delivery to
//! the receiver is in order: a packet held up by retransmissions also holds
//! back every packet behind it.

use std::collections::VecDeque;

use rand::Rng;

use super::{RadioConfig, MTU};

/// Retransmissions allowed after the first attempt.
pub const ARQ_MAX_RETX: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RlcOutcome {
    Delivered {
        /// Time the packet reaches the receiver.
        at: f64,
        /// RLC occupancy seen on arrival, packets.
        rlc_buffer: u32,
        /// Arrival at the RLC queue to delivery.
        pdcp_delay: f64,
        retransmissions: u32,
    },
    /// RLC buffer full on arrival.
    Overflow,
    /// Still corrupted after the last ARQ attempt.
    ArqExhausted,
}

#[derive(Debug, Clone)]
pub struct RlcStage {
    cfg: RadioConfig,
    err_prob: f64,
    /// Service completion times of packets still inside the RLC.
    in_service: VecDeque<f64>,
    last_service_end: f64,
    last_delivery: f64,
    max_occupancy: usize,
}

impl RlcStage {
    pub fn new(cfg: RadioConfig, err_prob: f64) -> Self {
        debug_assert!(cfg.rlc_cap >= 1 && (0.0..1.0).contains(&err_prob));
        RlcStage {
            cfg,
            err_prob,
            in_service: VecDeque::new(),
            last_service_end: f64::NEG_INFINITY,
            last_delivery: f64::NEG_INFINITY,
            max_occupancy: 0,
        }
    }

    /// Per-attempt occupancy of the radio for one MTU.
    pub fn service_time(&self) -> f64 {
        f64::from(MTU) * 8.0 / self.cfg.rate
    }

    pub fn occupancy(&mut self, now: f64) -> usize {
        while self.in_service.front().is_some_and(|&t| t <= now) {
            self.in_service.pop_front();
        }
        self.in_service.len()
    }

    pub fn max_occupancy(&self) -> usize {
        self.max_occupancy
    }

    /// Admits a packet arriving at `now`. Arrivals must be in time order.
    pub fn arrive<R: Rng>(&mut self, now: f64, rng: &mut R) -> RlcOutcome {
        let queued = self.occupancy(now);
        if queued >= self.cfg.rlc_cap {
            return RlcOutcome::Overflow;
        }

        let mut attempts = 1u32;
        let mut ok = !rng.gen_bool(self.err_prob);
        while !ok && attempts <= ARQ_MAX_RETX {
            attempts += 1;
            ok = !rng.gen_bool(self.err_prob);
        }
        let mut latency = 0.0;
        for _ in 0..attempts {
            latency += self.cfg.air_delay;
            if self.cfg.air_jitter > 0.0 {
                latency += rng.gen_range(0.0..self.cfg.air_jitter);
            }
        }

        let service = self.service_time();
        let start = now.max(self.last_service_end);
        let end = start + f64::from(attempts) * service;
        self.last_service_end = end;
        self.in_service.push_back(end);
        self.max_occupancy = self.max_occupancy.max(self.in_service.len());

        if !ok {
            return RlcOutcome::ArqExhausted;
        }
        let at = (start + latency).max(self.last_delivery + service);
        self.last_delivery = at;
        RlcOutcome::Delivered {
            at,
            rlc_buffer: queued as u32,
            pdcp_delay: at - now,
            retransmissions: attempts - 1,
        }
    }
}
