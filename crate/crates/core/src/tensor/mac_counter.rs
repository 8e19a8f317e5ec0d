//! Per-thread tally of dense multiply-accumulates executed by forward kernels.
//!
//! Every forward product kernel (matrix products, batched products, 1-D
//! convolution, per-row scaling) adds the number of multiply-accumulates its
//! dense loop nest defines. Elementwise scaling, normalization, softmax and
//! neuron membrane updates are not counted.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

pub fn reset() {
    MACS.with(|c| c.set(0));
}

pub fn count() -> u64 {
    MACS.with(Cell::get)
}

pub(crate) fn add(n: u64) {
    MACS.with(|c| c.set(c.get() + n));
}

/// Runs `f` and returns its result together with the MACs it executed.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = count();
    let out = f();
    (out, count() - before)
}
