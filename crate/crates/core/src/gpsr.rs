//! Greedy geographic forwarding: HELLO-fed neighbor table and candidate
//! selection.

use std::collections::BTreeMap;

use crate::linkcalc::suboptimal_metric;
use crate::mac::RelayCandidate;
use crate::mobility::Vec2;

pub const HELLO_INTERVAL_S: f64 = 1.5;
pub const EMA_ALPHA: f64 = 0.3;
pub const EXPIRY_S: f64 = 3.0 * HELLO_INTERVAL_S;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborEntry {
    pub node_id: usize,
    pub position: Vec2,
    pub last_heard: f64,
    pub avg_sinr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    entries: BTreeMap<usize, NeighborEntry>,
    /// Best-rate throughput per entry, valid until its next HELLO.
    metric_cache: BTreeMap<usize, (u32, f64)>,
    pub alpha: f64,
    pub expiry_s: f64,
}

impl Default for NeighborTable {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
            metric_cache: BTreeMap::new(),
            alpha: EMA_ALPHA,
            expiry_s: EXPIRY_S,
        }
    }
}

impl NeighborTable {
    pub fn process_hello(&mut self, from: usize, position: Vec2, measured_sinr: f64, now: f64) {
        let measured = measured_sinr.max(0.0);
        let alpha = self.alpha;
        let expiry = self.expiry_s;
        self.metric_cache.remove(&from);
        self.entries
            .entry(from)
            .and_modify(|e| {
                // A stale entry restarts from the fresh measurement.
                e.avg_sinr = if now - e.last_heard > expiry {
                    measured
                } else {
                    (1.0 - alpha) * e.avg_sinr + alpha * measured
                };
                e.position = position;
                e.last_heard = now;
            })
            .or_insert(NeighborEntry {
                node_id: from,
                position,
                last_heard: now,
                avg_sinr: measured,
            });
    }

    pub fn get(&self, id: usize) -> Option<&NeighborEntry> {
        self.entries.get(&id)
    }

    pub fn live(&self, now: f64) -> impl Iterator<Item = &NeighborEntry> {
        let expiry = self.expiry_s;
        self.entries.values().filter(move |e| now - e.last_heard <= expiry)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drop entries past the expiry window.
    pub fn purge(&mut self, now: f64) {
        let expiry = self.expiry_s;
        self.entries.retain(|_, e| now - e.last_heard <= expiry);
        let entries = &self.entries;
        self.metric_cache.retain(|id, _| entries.contains_key(id));
    }

    /// Up to `l` live neighbors with positive progress toward `dest_pos`,
    /// best `Z * lambda_best(avg_sinr)` first, ties to the lower id.
    pub fn candidate_list(
        &mut self,
        self_pos: Vec2,
        dest_pos: Vec2,
        l: usize,
        now: f64,
        n_bits: u32,
    ) -> Vec<RelayCandidate> {
        let here = self_pos.dist(dest_pos);
        let expiry = self.expiry_s;
        let cache = &mut self.metric_cache;
        let mut scored: Vec<(f64, RelayCandidate)> = self
            .entries
            .values()
            .filter(|e| now - e.last_heard <= expiry)
            .filter_map(|e| {
                let z = here - e.position.dist(dest_pos);
                (z > 0.0).then(|| {
                    let c = RelayCandidate {
                        node_id: e.node_id,
                        position: e.position,
                        progress: z,
                        snr_estimate: e.avg_sinr,
                        csi_age_s: now - e.last_heard,
                    };
                    let metric = match cache.get(&e.node_id) {
                        Some(&(bits, m)) if bits == n_bits => m,
                        _ => {
                            let m = suboptimal_metric(e.avg_sinr, n_bits).1;
                            cache.insert(e.node_id, (n_bits, m));
                            m
                        }
                    };
                    (z * metric, c)
                })
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.node_id.cmp(&b.1.node_id)));
        scored.truncate(l);
        scored.into_iter().map(|(_, c)| c).collect()
    }
}

/// Why a packet left the network without reaching its destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DropCause {
    /// Greedy forwarding found no neighbor closer to the destination.
    NoCandidate,
    RetryLimit,
    QueueOverflow,
    Ttl,
}

impl DropCause {
    pub const ALL: [DropCause; 4] = [
        DropCause::NoCandidate,
        DropCause::RetryLimit,
        DropCause::QueueOverflow,
        DropCause::Ttl,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DropCause::NoCandidate => "no_candidate",
            DropCause::RetryLimit => "retry_limit",
            DropCause::QueueOverflow => "queue_overflow",
            DropCause::Ttl => "ttl",
        }
    }
}

/// Greedy failure: perimeter routing is not attempted.
pub fn on_local_maximum() -> DropCause {
    DropCause::NoCandidate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::DEFAULT_N_BITS as N;

    #[test]
    fn first_hello_seeds_the_average() {
        let mut t = NeighborTable::default();
        t.process_hello(3, Vec2::new(1.0, 1.0), 40.0, 0.0);
        assert_eq!(t.get(3).unwrap().avg_sinr, 40.0);
    }

    #[test]
    fn constant_input_is_a_fixed_point() {
        let mut t = NeighborTable::default();
        t.process_hello(1, Vec2::default(), 5.0, 0.0);
        for k in 1..60 {
            t.process_hello(1, Vec2::default(), 25.0, k as f64);
        }
        assert!((t.get(1).unwrap().avg_sinr - 25.0).abs() < 1e-6);
    }

    #[test]
    fn alternating_input_reaches_closed_form_cycle() {
        let (a, b) = (10.0, 30.0);
        let al = EMA_ALPHA;
        // Fixed point of two steps: x = (1-al)^2 x + al(1-al) a + al b.
        let after_b = (al * (1.0 - al) * a + al * b) / (1.0 - (1.0 - al).powi(2));
        let mut t = NeighborTable::default();
        for k in 0..200 {
            let m = if k % 2 == 0 { a } else { b };
            t.process_hello(2, Vec2::default(), m, k as f64);
        }
        assert!((t.get(2).unwrap().avg_sinr - after_b).abs() < 1e-9);
    }

    #[test]
    fn destination_neighbor_gets_full_progress() {
        let mut t = NeighborTable::default();
        let dest = Vec2::new(200.0, 0.0);
        t.process_hello(9, dest, 100.0, 0.0);
        t.process_hello(4, Vec2::new(100.0, 0.0), 100.0, 0.0);
        let c = t.candidate_list(Vec2::default(), dest, 3, 0.5, N);
        assert_eq!(c[0].node_id, 9);
        assert_eq!(c[0].progress, 200.0);
    }

    #[test]
    fn local_maximum_yields_nothing() {
        let mut t = NeighborTable::default();
        t.process_hello(1, Vec2::new(-50.0, 0.0), 100.0, 0.0);
        t.process_hello(2, Vec2::new(0.0, -80.0), 100.0, 0.0);
        assert!(t
            .candidate_list(Vec2::default(), Vec2::new(300.0, 0.0), 4, 1.0, N)
            .is_empty());
        assert_eq!(on_local_maximum(), DropCause::NoCandidate);
    }

    #[test]
    fn stale_entries_are_ignored() {
        let mut t = NeighborTable::default();
        t.process_hello(1, Vec2::new(50.0, 0.0), 100.0, 0.0);
        let dest = Vec2::new(300.0, 0.0);
        assert_eq!(t.candidate_list(Vec2::default(), dest, 2, 4.5, N).len(), 1);
        assert!(t.candidate_list(Vec2::default(), dest, 2, 4.6, N).is_empty());
        t.purge(10.0);
        assert!(t.is_empty());
    }

    #[test]
    fn top_three_of_five_by_enumeration() {
        let mut t = NeighborTable::default();
        let dest = Vec2::new(400.0, 0.0);
        let spots = [
            (1, Vec2::new(120.0, 10.0), 8.0),
            (2, Vec2::new(200.0, -30.0), 4.0),
            (3, Vec2::new(60.0, 0.0), 300.0),
            (4, Vec2::new(250.0, 100.0), 2.5),
            (5, Vec2::new(150.0, 0.0), 30.0),
        ];
        for (id, p, s) in spots {
            t.process_hello(id, p, s, 0.0);
        }
        let got: Vec<usize> = t
            .candidate_list(Vec2::default(), dest, 3, 0.0, N)
            .iter()
            .map(|c| c.node_id)
            .collect();
        let mut all: Vec<(f64, usize)> = spots
            .iter()
            .map(|(id, p, s)| ((400.0 - p.dist(dest)) * suboptimal_metric(*s, N).1, *id))
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0));
        let want: Vec<usize> = all.iter().take(3).map(|x| x.1).collect();
        assert_eq!(got, want);
    }
}
