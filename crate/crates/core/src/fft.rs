//! Thin wrapper around rustfft with per-length plan caching.
//!
//! Plans are cached in a thread-local map so repeated transforms of the same
//! length (periodogram segments, per-trace noise shaping) do not replan.
//! The inverse transform includes the 1/N normalization, so
//! `inverse(forward(x)) == x` up to floating-point roundoff.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let (planner, cache) = &mut *cell.borrow_mut();
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// In-place forward DFT (no normalization).
pub(crate) fn forward(buf: &mut [Complex64]) {
    if buf.len() > 1 {
        plan(buf.len(), false).process(buf);
    }
}

/// In-place inverse DFT including the 1/N factor.
pub(crate) fn inverse(buf: &mut [Complex64]) {
    let n = buf.len();
    if n > 1 {
        plan(n, true).process(buf);
        let scale = 1.0 / n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// Signed bin frequency (Hz) for bin `k` of an `n`-point DFT at sample rate
/// `fs`: non-negative for k < ceil(n/2), negative mirror above.
pub(crate) fn bin_frequency(k: usize, n: usize, fs: f64) -> f64 {
    let k = k as f64;
    let n = n as f64;
    if k <= (n / 2.0).floor() {
        k * fs / n
    } else {
        (k - n) * fs / n
    }
}
