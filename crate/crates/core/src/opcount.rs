//! Per-thread arithmetic counter for the iterative detectors.
//!
//! Inner loops report the number of multiply-accumulate steps they perform.
//! Counting is compiled in only with the `op-count` feature; otherwise
//! [`add`] is a no-op and [`get`] always returns zero.

#[cfg(feature = "op-count")]
thread_local! {
    static COUNTER: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

#[inline(always)]
pub fn add(_n: usize) {
    #[cfg(feature = "op-count")]
    COUNTER.with(|c| c.set(c.get() + _n as u64));
}

pub fn reset() {
    #[cfg(feature = "op-count")]
    COUNTER.with(|c| c.set(0));
}

pub fn get() -> u64 {
    #[cfg(feature = "op-count")]
    {
        COUNTER.with(|c| c.get())
    }
    #[cfg(not(feature = "op-count"))]
    {
        0
    }
}

/// Runs `f` and returns its result along with the operations it reported.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    reset();
    let out = f();
    (out, get())
}
