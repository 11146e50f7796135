//! Sliding-window extremum filters used for the BtlBw and RTprop estimates.
//!
//! Both filters keep a monotonic deque: entries are ordered by stamp and a new
//! sample evicts every older entry it dominates, because a newer and better
//! sample outlives it under any window. The best value inside the window is
//! then the first unexpired entry.

use std::collections::VecDeque;

/// Windowed maximum keyed by packet-timed round count.
///
/// An entry stamped `r` is visible at round `now` iff `r > now - window`.
#[derive(Debug, Clone)]
pub struct WindowedMaxFilter {
    entries: VecDeque<(u64, f64)>,
    window: u64,
}

impl WindowedMaxFilter {
    pub fn new(window_rounds: u64) -> Self {
        assert!(window_rounds >= 1, "max filter window must be at least one round");
        Self {
            entries: VecDeque::new(),
            window: window_rounds,
        }
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    /// Takes effect on the next query; already evicted entries stay evicted.
    pub fn set_window(&mut self, window_rounds: u64) {
        assert!(window_rounds >= 1, "max filter window must be at least one round");
        self.window = window_rounds;
    }

    fn expired(&self, stamp: u64, now: u64) -> bool {
        // stamp > now - window, written without underflow
        stamp + self.window <= now
    }

    pub fn update(&mut self, round: u64, value: f64) {
        while self.entries.front().is_some_and(|&(r, _)| self.expired(r, round)) {
            self.entries.pop_front();
        }
        while self.entries.back().is_some_and(|&(_, v)| v <= value) {
            self.entries.pop_back();
        }
        self.entries.push_back((round, value));
    }

    /// Maximum over the entries still inside the window at `round`.
    pub fn get(&self, round: u64) -> Option<f64> {
        self.entries
            .iter()
            .find(|&&(r, _)| !self.expired(r, round))
            .map(|&(_, v)| v)
    }

    pub fn reset(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Windowed minimum keyed by time in microseconds.
///
/// An entry stamped `t` is visible at `now` iff `t > now - window`.
#[derive(Debug, Clone)]
pub struct WindowedMinFilter {
    entries: VecDeque<(u64, u64)>,
    window_us: u64,
}

impl WindowedMinFilter {
    pub fn new(window_us: u64) -> Self {
        assert!(window_us >= 1, "min filter window must be positive");
        Self {
            entries: VecDeque::new(),
            window_us,
        }
    }

    pub fn window_us(&self) -> u64 {
        self.window_us
    }

    pub fn set_window_us(&mut self, window_us: u64) {
        assert!(window_us >= 1, "min filter window must be positive");
        self.window_us = window_us;
    }

    fn expired(&self, stamp: u64, now: u64) -> bool {
        stamp + self.window_us <= now
    }

    pub fn update(&mut self, now_us: u64, value_us: u64) {
        while self.entries.front().is_some_and(|&(t, _)| self.expired(t, now_us)) {
            self.entries.pop_front();
        }
        while self.entries.back().is_some_and(|&(_, v)| v >= value_us) {
            self.entries.pop_back();
        }
        self.entries.push_back((now_us, value_us));
    }

    pub fn get(&self, now_us: u64) -> Option<u64> {
        self.entries
            .iter()
            .find(|&&(t, _)| !self.expired(t, now_us))
            .map(|&(_, v)| v)
    }

    /// Stamp of the entry that currently holds the minimum.
    pub fn best_stamp(&self, now_us: u64) -> Option<u64> {
        self.entries
            .iter()
            .find(|&&(t, _)| !self.expired(t, now_us))
            .map(|&(t, _)| t)
    }

    pub fn reset(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
