//! Deterministic discrete-event scheduling primitives.
//!
//! All simulation time is virtual milliseconds. Events at equal timestamps
//! are ordered by insertion sequence, so a run is a pure function of the
//! scenario and its seed.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Virtual time in milliseconds.
pub type SimTime = u64;

#[derive(Debug, Clone)]
struct Entry<T> {
    time: SimTime,
    seq: u64,
    item: T,
}

// `seq` is unique per queue, so (time, seq) totally orders entries and the
// item type needs no ordering of its own.
impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl<T> Eq for Entry<T> {}

impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Entry<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Time-ordered event queue with stable FIFO tie-breaking.
#[derive(Debug, Clone)]
pub struct EventQueue<T> {
    heap: BinaryHeap<Reverse<Entry<T>>>,
    seq: u64,
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            seq: 0,
        }
    }

    pub fn push(&mut self, time: SimTime, item: T) {
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Reverse(Entry { time, seq, item }));
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(e)| e.time)
    }

    pub fn pop(&mut self) -> Option<(SimTime, T)> {
        self.heap.pop().map(|Reverse(e)| (e.time, e.item))
    }

    /// Pops every event scheduled at the earliest pending timestamp,
    /// preserving insertion order within the batch.
    pub fn pop_time_batch(&mut self) -> Option<(SimTime, Vec<T>)> {
        let time = self.peek_time()?;
        let mut batch = Vec::new();
        while self.peek_time() == Some(time) {
            batch.push(self.pop().unwrap().1);
        }
        Some((time, batch))
    }
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pops_in_time_then_fifo_order() {
        let mut q = EventQueue::new();
        q.push(10, "c");
        q.push(5, "a");
        q.push(10, "d");
        q.push(5, "b");
        assert_eq!(q.pop_time_batch(), Some((5, vec!["a", "b"])));
        assert_eq!(q.pop_time_batch(), Some((10, vec!["c", "d"])));
        assert_eq!(q.pop_time_batch(), None);
    }

    #[test]
    fn len_and_peek() {
        let mut q = EventQueue::new();
        assert!(q.is_empty());
        q.push(3, 1u32);
        q.push(1, 2u32);
        assert_eq!(q.len(), 2);
        assert_eq!(q.peek_time(), Some(1));
    }
}
