//! Time-ordered event queue with FIFO tie-breaking.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

struct Scheduled<E> {
    time: f64,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    // Reversed so the max-heap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Min-heap of events keyed by `(time, insertion order)`.
pub struct EventQueue<E> {
    heap: BinaryHeap<Scheduled<E>>,
    seq: u64,
    now: f64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Schedules `event` at `time`; scheduling into the past is an error.
    pub fn schedule(&mut self, time: f64, event: E) -> Result<()> {
        if !(time >= self.now) {
            return Err(Error::Internal(format!(
                "event scheduled at {time} before current time {}",
                self.now
            )));
        }
        self.heap.push(Scheduled {
            time,
            seq: self.seq,
            event,
        });
        self.seq += 1;
        Ok(())
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|s| s.time)
    }

    /// Pops the earliest event and advances the clock to it.
    pub fn pop(&mut self) -> Result<Option<(f64, E)>> {
        let Some(s) = self.heap.pop() else {
            return Ok(None);
        };
        if s.time < self.now {
            return Err(Error::Internal(format!(
                "non-monotone event time {} < {}",
                s.time, self.now
            )));
        }
        self.now = s.time;
        Ok(Some((s.time, s.event)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_by_time_then_insertion() {
        let mut q = EventQueue::new();
        q.schedule(2.0, "c").unwrap();
        q.schedule(1.0, "a").unwrap();
        q.schedule(1.0, "b").unwrap();
        q.schedule(0.5, "first").unwrap();
        let order: Vec<_> = std::iter::from_fn(|| q.pop().unwrap())
            .map(|(_, e)| e)
            .collect();
        assert_eq!(order, ["first", "a", "b", "c"]);
    }

    #[test]
    fn rejects_past_events() {
        let mut q = EventQueue::new();
        q.schedule(3.0, ()).unwrap();
        q.pop().unwrap();
        assert!(matches!(q.schedule(2.0, ()), Err(Error::Internal(_))));
        assert!(q.schedule(3.0, ()).is_ok());
        assert!(q.schedule(f64::NAN, ()).is_err());
    }
}
