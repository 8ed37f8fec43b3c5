//! Single-slot last-value-wins hand-off between threads.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

/// Holds at most one value; `put` replaces whatever is unread. Readers can
/// peek at the latest value or take it, and can wait for a newer version.
#[derive(Debug, Default)]
pub struct Mailbox<T> {
    slot: Mutex<Slot<T>>,
    changed: Condvar,
}

#[derive(Debug)]
struct Slot<T> {
    value: Option<T>,
    version: u64,
    /// Values overwritten before anyone took them.
    dropped: u64,
}

impl<T> Default for Slot<T> {
    fn default() -> Self {
        Self { value: None, version: 0, dropped: 0 }
    }
}

impl<T: Clone> Mailbox<T> {
    pub fn new() -> Self {
        Self { slot: Mutex::new(Slot::default()), changed: Condvar::new() }
    }

    pub fn put(&self, value: T) {
        let mut s = self.slot.lock().expect("mailbox poisoned");
        if s.value.is_some() {
            s.dropped += 1;
        }
        s.value = Some(value);
        s.version += 1;
        self.changed.notify_all();
    }

    /// Latest value without consuming it.
    pub fn latest(&self) -> Option<T> {
        self.slot.lock().expect("mailbox poisoned").value.clone()
    }

    pub fn take(&self) -> Option<T> {
        self.slot.lock().expect("mailbox poisoned").value.take()
    }

    /// Number of `put` calls so far.
    pub fn version(&self) -> u64 {
        self.slot.lock().expect("mailbox poisoned").version
    }

    pub fn dropped(&self) -> u64 {
        self.slot.lock().expect("mailbox poisoned").dropped
    }

    /// Values currently held: 0 or 1.
    pub fn depth(&self) -> usize {
        usize::from(self.slot.lock().expect("mailbox poisoned").value.is_some())
    }

    /// Waits until the version exceeds `seen` or `timeout` passes; returns
    /// the latest value and its version.
    pub fn wait_newer(&self, seen: u64, timeout: Duration) -> Option<(T, u64)> {
        let guard = self.slot.lock().expect("mailbox poisoned");
        let (s, _) = self.changed.wait_timeout_while(guard, timeout, |s| s.version <= seen).expect("mailbox poisoned");
        if s.version > seen {
            s.value.clone().map(|v| (v, s.version))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn keeps_only_the_latest() {
        let m = Mailbox::new();
        for i in 0..5 {
            m.put(i);
        }
        assert_eq!(m.depth(), 1);
        assert_eq!(m.dropped(), 4);
        assert_eq!(m.take(), Some(4));
        assert_eq!(m.take(), None);
        assert_eq!(m.version(), 5);
    }

    #[test]
    fn waiting_reader_wakes_on_put() {
        let m = Arc::new(Mailbox::new());
        let writer = Arc::clone(&m);
        let t = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(20));
            writer.put("x");
        });
        assert_eq!(m.wait_newer(0, Duration::from_secs(5)), Some(("x", 1)));
        assert_eq!(m.wait_newer(1, Duration::from_millis(10)), None);
        t.join().unwrap();
    }
}
