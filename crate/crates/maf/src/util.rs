//! Small shared plumbing.

use std::sync::{Condvar, Mutex};

/// Counting gate bounding concurrent work (child processes, in-flight HTTP
/// calls). Hold the returned guard for the duration of the work.
#[derive(Debug)]
pub(crate) struct Gate {
    available: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    pub(crate) fn new(permits: usize) -> Self {
        Gate {
            available: Mutex::new(permits),
            cv: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> GateGuard<'_> {
        let mut available = self.available.lock().unwrap();
        while *available == 0 {
            available = self.cv.wait(available).unwrap();
        }
        *available -= 1;
        GateGuard { gate: self }
    }
}

pub(crate) struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut available = self.gate.available.lock().unwrap();
        *available += 1;
        self.gate.cv.notify_one();
    }
}
