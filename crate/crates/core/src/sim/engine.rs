//! Event queue ordered by `(time, sequence)`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Simulation time in integer nanoseconds.
pub type SimTime = u64;

pub fn to_ns(seconds: f64) -> SimTime {
    debug_assert!(seconds >= 0.0);
    (seconds * 1e9).round() as SimTime
}

pub fn to_secs(t: SimTime) -> f64 {
    t as f64 * 1e-9
}

#[derive(Debug)]
struct Entry<E> {
    time: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl<E> Eq for Entry<E> {}
impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<Entry<E>>>,
    seq: u64,
    now: SimTime,
    dispatched: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0,
            dispatched: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedule at an absolute time, which must not be in the past.
    pub fn schedule(&mut self, time: SimTime, event: E) {
        assert!(time >= self.now, "event scheduled in the past: {time} < {}", self.now);
        self.seq += 1;
        self.heap.push(Reverse(Entry {
            time,
            seq: self.seq,
            event,
        }));
    }

    pub fn schedule_in(&mut self, delay: SimTime, event: E) {
        self.schedule(self.now + delay, event);
    }

    /// Next event at or before `until`.
    pub fn pop_until(&mut self, until: SimTime) -> Option<(SimTime, E)> {
        if self.heap.peek()?.0.time > until {
            return None;
        }
        let Reverse(e) = self.heap.pop()?;
        self.now = e.time;
        self.dispatched += 1;
        Some((e.time, e.event))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_then_insertion_order() {
        let mut q = EventQueue::default();
        q.schedule(5, "b");
        q.schedule(3, "a");
        q.schedule(5, "c");
        let order: Vec<_> = std::iter::from_fn(|| q.pop_until(10)).collect();
        assert_eq!(order, vec![(3, "a"), (5, "b"), (5, "c")]);
    }

    #[test]
    fn horizon_is_respected() {
        let mut q = EventQueue::default();
        q.schedule(20, ());
        assert!(q.pop_until(10).is_none());
        assert_eq!(q.len(), 1);
    }

    #[test]
    #[should_panic(expected = "past")]
    fn past_events_are_refused() {
        let mut q = EventQueue::default();
        q.schedule(10, ());
        q.pop_until(10);
        q.schedule(9, ());
    }

    #[test]
    fn ns_conversion() {
        assert_eq!(to_ns(496e-6), 496_000);
        assert_eq!(to_ns(2272.0 / 5.5e6), 413_091);
        assert_eq!(to_secs(1_500_000), 1.5e-3);
    }
}
