//! Live scalar-entry accounting for kernel working buffers.
//!
//! Every large buffer a kernel holds is wrapped in [`Tracked`]; the wrapper
//! adds its entry count to a thread-local live counter on creation and
//! removes it on drop. [`measure`] reports the maximum simultaneous live
//! count observed while a closure runs. The counter is per thread, so a
//! scope only sees kernels invoked on the calling thread.

use std::cell::Cell;
use std::ops::{Deref, DerefMut};

use crate::matrix::{Matrix, Scalar};

thread_local! {
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

fn add(entries: usize) {
    LIVE.with(|live| {
        let now = live.get() + entries;
        live.set(now);
        PEAK.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

fn sub(entries: usize) {
    LIVE.with(|live| live.set(live.get().saturating_sub(entries)));
}

/// A matrix counted as live working memory until dropped.
pub struct Tracked<T: Scalar>(Matrix<T>);

impl<T: Scalar> Tracked<T> {
    pub fn new(m: Matrix<T>) -> Self {
        add(m.len());
        Self(m)
    }

    /// Releases the buffer from accounting and hands it back.
    pub fn into_inner(self) -> Matrix<T> {
        let this = std::mem::ManuallyDrop::new(self);
        sub(this.0.len());
        // SAFETY: `this` is never dropped, so the matrix is moved out exactly once.
        unsafe { std::ptr::read(&this.0) }
    }
}

impl<T: Scalar> Drop for Tracked<T> {
    fn drop(&mut self) {
        sub(self.0.len());
    }
}

impl<T: Scalar> Deref for Tracked<T> {
    type Target = Matrix<T>;
    fn deref(&self) -> &Matrix<T> {
        &self.0
    }
}

impl<T: Scalar> DerefMut for Tracked<T> {
    fn deref_mut(&mut self) -> &mut Matrix<T> {
        &mut self.0
    }
}

/// Peak live entries during one [`measure`] scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeakEntries {
    /// Maximum live entries above the count at scope entry.
    pub peak: usize,
    /// Entries still live at scope exit (0 when the closure cleaned up).
    pub leaked: usize,
}

/// Runs `f` and reports the peak number of simultaneously live tracked
/// entries it created. Scopes nest.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, PeakEntries) {
    let base = LIVE.with(Cell::get);
    let outer_peak = PEAK.with(|p| p.replace(base));
    let out = f();
    let inner_peak = PEAK.with(Cell::get);
    let end = LIVE.with(Cell::get);
    PEAK.with(|p| p.set(outer_peak.max(inner_peak)));
    (
        out,
        PeakEntries {
            peak: inner_peak - base,
            leaked: end.saturating_sub(base),
        },
    )
}

/// Entries currently live on this thread.
pub fn live_entries() -> usize {
    LIVE.with(Cell::get)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_tracks_simultaneous_buffers() {
        let ((), peak) = measure(|| {
            let a = Tracked::new(Matrix::<f64>::zeros(3, 3));
            let b = Tracked::new(Matrix::<f64>::zeros(2, 2));
            drop(a);
            let _c = Tracked::new(Matrix::<f64>::zeros(1, 5));
            drop(b);
        });
        assert_eq!(
            peak,
            PeakEntries {
                peak: 13,
                leaked: 0
            }
        );
    }

    #[test]
    fn into_inner_stops_counting() {
        let (m, peak) = measure(|| Tracked::new(Matrix::<f32>::zeros(4, 4)).into_inner());
        assert_eq!(m.len(), 16);
        assert_eq!(peak.peak, 16);
        assert_eq!(peak.leaked, 0);
    }

    #[test]
    fn nested_scopes() {
        let ((), outer) = measure(|| {
            let _a = Tracked::new(Matrix::<f64>::zeros(10, 1));
            let ((), inner) = measure(|| {
                let _b = Tracked::new(Matrix::<f64>::zeros(5, 1));
            });
            assert_eq!(inner.peak, 5);
        });
        assert_eq!(outer.peak, 15);
    }
}
