//! Per-agent neighbourhood message cache.

use std::collections::BTreeMap;

use crate::policy::Message;
use crate::AgentId;

/// Default staleness window, two policy ticks at 10 Hz.
pub const DEFAULT_WINDOW: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    message: Message,
    received_at: f64,
}

/// Latest message per sender, served only while younger than the window.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageCache {
    window: f64,
    entries: BTreeMap<AgentId, Entry>,
}

impl Default for MessageCache {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

impl MessageCache {
    pub fn new(window: f64) -> Self {
        Self {
            window,
            entries: BTreeMap::new(),
        }
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stores `msg` received at `now` unless an entry with a later (or equal)
    /// send timestamp is already held. Returns whether it was stored.
    pub fn update(&mut self, msg: Message, now: f64) -> bool {
        match self.entries.get(&msg.sender) {
            Some(e) if e.message.timestamp >= msg.timestamp => false,
            _ => {
                self.entries.insert(
                    msg.sender,
                    Entry {
                        message: msg,
                        received_at: now,
                    },
                );
                true
            }
        }
    }

    /// Fresh entries (`now - received <= window`) in ascending sender order.
    pub fn snapshot(&self, now: f64) -> Vec<Message> {
        self.snapshot_filtered(now, |_| true)
    }

    /// Like [`snapshot`](Self::snapshot), restricted to senders accepted by
    /// `keep`.
    pub fn snapshot_filtered(&self, now: f64, keep: impl Fn(AgentId) -> bool) -> Vec<Message> {
        self.entries
            .values()
            .filter(|e| now - e.received_at <= self.window && keep(e.message.sender))
            .map(|e| e.message.clone())
            .collect()
    }

    /// Drops entries that can no longer be served.
    pub fn evict(&mut self, now: f64) {
        let window = self.window;
        self.entries.retain(|_, e| now - e.received_at <= window);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}
