//! Deterministic fluid model of a ledger under a constant send rate.
//!
//! Transactions arrive uniformly over the sending window and queue FIFO.
//! Each block, spaced `block_interval_s` apart, confirms up to
//! `capacity * block_interval_s` of them. Past the congestion knee the
//! effective capacity falls off as `capacity * knee_rate / rate`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::rollup::effective_throughput;

use super::{Routing, Scenario, ThroughputSample};

const MAX_STEPS: f64 = 100_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueModel {
    pub capacity_tps: f64,
    /// Congestion starts at `knee * capacity_tps`.
    pub knee: f64,
    pub block_interval_s: f64,
    pub duration_s: f64,
}

/// Achieved throughput and mean latency at one send rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueuePoint {
    pub tps: f64,
    pub latency_s: f64,
}

impl QueueModel {
    pub fn effective_capacity(&self, rate: f64) -> f64 {
        let knee_rate = self.knee * self.capacity_tps;
        if rate <= knee_rate {
            self.capacity_tps
        } else {
            self.capacity_tps * knee_rate / rate
        }
    }

    pub fn run(&self, rate: f64) -> QueuePoint {
        if rate <= 0.0 {
            return QueuePoint { tps: 0.0, latency_s: 0.0 };
        }
        let capacity = self.effective_capacity(rate);
        // under extreme overload, step several blocks at once to bound the work
        let blocks = rate * self.duration_s / (capacity * self.block_interval_s);
        let group = (blocks / MAX_STEPS).ceil().max(1.0);
        let dt = self.block_interval_s * group;
        let per_block = capacity * dt;
        // cohorts: (first arrival, last arrival, amount), uniform density
        let mut queue: VecDeque<(f64, f64, f64)> = VecDeque::new();
        let mut confirmed = 0.0;
        let mut wait = 0.0;
        let mut last_commit = 0.0;
        let mut k = 0u64;
        loop {
            k += 1;
            let now = k as f64 * dt;
            let from = (now - dt).min(self.duration_s);
            let to = now.min(self.duration_s);
            if to > from {
                queue.push_back((from, to, rate * (to - from)));
            }
            let mut budget = per_block;
            while budget > 0.0 {
                let Some(front) = queue.front_mut() else { break };
                let (a, b, amount) = *front;
                let take = amount.min(budget);
                // the earliest `take` of the cohort leaves now
                let split = a + (b - a) * take / amount;
                wait += take * (now - (a + split) / 2.0);
                confirmed += take;
                budget -= take;
                last_commit = now;
                if take >= amount {
                    queue.pop_front();
                } else {
                    *front = (split, b, amount - take);
                }
            }
            if queue.is_empty() && now >= self.duration_s {
                break;
            }
        }
        QueuePoint {
            tps: confirmed / last_commit,
            latency_s: wait / confirmed,
        }
    }
}

/// L1 and L2 throughput curves for the scenario's reference function.
pub fn throughput_sweep(scenario: &Scenario, rates: &[f64]) -> Vec<ThroughputSample> {
    let t = &scenario.throughput;
    let l1 = QueueModel {
        capacity_tps: t.capacity_tps,
        knee: t.knee,
        block_interval_s: t.block_interval_s,
        duration_s: t.duration_s,
    };
    // every L1 commit carries a full batch
    let l2 = QueueModel {
        capacity_tps: effective_throughput(scenario.rollup_capacity as u64, t.batch_commit_tps),
        ..l1
    };
    let mut out = Vec::with_capacity(2 * rates.len());
    for (layer, model) in [(Routing::L1, l1), (Routing::L2, l2)] {
        for &rate in rates {
            let p = model.run(rate);
            out.push(ThroughputSample {
                layer: format!("{layer:?}"),
                function: t.function.clone(),
                send_rate: rate,
                tps: p.tps,
                latency_s: p.latency_s,
            });
        }
    }
    out
}
