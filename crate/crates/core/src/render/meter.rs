//! Per-thread accounting of rendering state retained for the backward pass.

use std::cell::Cell;

thread_local! {
    static CURRENT: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

/// Bytes currently held by live render states on this thread.
pub fn current() -> usize {
    CURRENT.with(Cell::get)
}

/// High-water mark since the last [`reset_peak`].
pub fn peak() -> usize {
    PEAK.with(Cell::get)
}

pub fn reset_peak() {
    PEAK.with(|p| p.set(current()));
}

/// Registers `bytes` for as long as the guard lives.
#[derive(Debug)]
pub struct Guard {
    bytes: usize,
}

impl Guard {
    pub fn new(bytes: usize) -> Self {
        let now = CURRENT.with(|c| {
            let v = c.get() + bytes;
            c.set(v);
            v
        });
        PEAK.with(|p| p.set(p.get().max(now)));
        Self { bytes }
    }
}

impl Drop for Guard {
    fn drop(&mut self) {
        CURRENT.with(|c| c.set(c.get() - self.bytes));
    }
}
