//! Single-threaded discrete-event kernel on an integer picosecond timeline.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::Debug;

use super::{Picos, SimError};

#[derive(Debug)]
struct Entry<E> {
    at: Picos,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
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
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

/// Event queue with FIFO tie-breaking among equal timestamps.
#[derive(Debug)]
pub struct Kernel<E> {
    now: Picos,
    seq: u64,
    queue: BinaryHeap<Reverse<Entry<E>>>,
    fired: u64,
    trace: Option<Vec<(Picos, String)>>,
}

impl<E> Default for Kernel<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Kernel<E> {
    pub fn new() -> Self {
        Self {
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            fired: 0,
            trace: None,
        }
    }

    pub fn now(&self) -> Picos {
        self.now
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Number of events popped so far.
    pub fn fired(&self) -> u64 {
        self.fired
    }

    pub fn peek_time(&self) -> Option<Picos> {
        self.queue.peek().map(|Reverse(e)| e.at)
    }

    pub fn schedule(&mut self, at: Picos, event: E) -> Result<(), SimError> {
        if at < self.now {
            return Err(SimError::ScheduleInPast { at, now: self.now });
        }
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(Entry { at, seq, event }));
        Ok(())
    }

    /// Schedules `delay` picoseconds from now. Never fails.
    pub fn schedule_in(&mut self, delay: Picos, event: E) {
        let at = self.now + delay;
        self.schedule(at, event)
            .expect("a non-negative delay is never in the past");
    }

    /// Pops the earliest event and advances the clock to it.
    pub fn pop(&mut self) -> Option<(Picos, E)>
    where
        E: Debug,
    {
        let Reverse(entry) = self.queue.pop()?;
        self.now = entry.at;
        self.fired += 1;
        if let Some(trace) = self.trace.as_mut() {
            trace.push((entry.at, format!("{:?}", entry.event)));
        }
        Some((entry.at, entry.event))
    }

    /// Pops the earliest event only if it fires at or before `limit`.
    pub fn pop_until(&mut self, limit: Picos) -> Option<(Picos, E)>
    where
        E: Debug,
    {
        match self.peek_time() {
            Some(t) if t <= limit => self.pop(),
            _ => None,
        }
    }

    /// Moves the clock forward to `t` without firing anything. Callers
    /// must have drained every event before `t` first.
    pub fn advance_clock(&mut self, t: Picos) {
        debug_assert!(self.peek_time().is_none_or(|p| p >= t));
        if t > self.now {
            self.now = t;
        }
    }

    /// Fires events in timestamp order until the queue is empty and
    /// returns the final clock value.
    pub fn run_until_idle(&mut self, mut handler: impl FnMut(&mut Self, Picos, E)) -> Picos
    where
        E: Debug,
    {
        while let Some((t, e)) = self.pop() {
            handler(self, t, e);
        }
        self.now
    }

    /// Starts recording `(timestamp, Debug(event))` pairs for every fired event.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn trace(&self) -> Option<&[(Picos, String)]> {
        self.trace.as_deref()
    }
}
