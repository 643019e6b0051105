//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper splits work into chunks whose boundaries do not depend on
//! the number of worker threads, and any cross-chunk reduction is done in
//! chunk order. Results are therefore bit-identical between the rayon path
//! and the sequential path.

use std::cell::Cell;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    Parallel,
}

thread_local! {
    static MODE: Cell<Mode> = const { Cell::new(default_mode()) };
}

const fn default_mode() -> Mode {
    if cfg!(feature = "parallel") {
        Mode::Parallel
    } else {
        Mode::Sequential
    }
}

/// Mode used by helpers called from the current thread.
pub fn mode() -> Mode {
    MODE.with(Cell::get)
}

/// Runs `f` with the given mode on the current thread. Requesting
/// `Parallel` without the `parallel` feature silently runs sequentially.
pub fn with_mode<R>(mode: Mode, f: impl FnOnce() -> R) -> R {
    let prev = MODE.with(|m| m.replace(mode));
    let out = f();
    MODE.with(|m| m.set(prev));
    out
}

#[cfg(feature = "parallel")]
fn parallel() -> bool {
    mode() == Mode::Parallel
}

#[cfg(not(feature = "parallel"))]
fn parallel() -> bool {
    false
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel() && n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Calls `f(row, row_slice)` for every `width`-sized row of `out`.
pub fn rows_mut<F>(out: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if parallel() && out.len() > width * 64 {
        use rayon::prelude::*;
        out.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
        return;
    }
    out.chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
}

/// Rows per block for [`reduce_blocks`]; fixed so the summation order is
/// independent of the thread count.
pub const BLOCK_ROWS: usize = 256;

/// Accumulates `f(start, end, partial)` over row blocks of `n` rows into a
/// `len`-sized buffer. Partials are summed in block order.
pub fn reduce_blocks<F>(n: usize, len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, usize, &mut [f64]) + Sync + Send,
{
    let blocks = n.div_ceil(BLOCK_ROWS).max(1);
    if blocks == 1 {
        let mut acc = vec![0.0; len];
        f(0, n, &mut acc);
        return acc;
    }
    let partials = map(blocks, |b| {
        let mut acc = vec![0.0; len];
        let start = b * BLOCK_ROWS;
        f(start, (start + BLOCK_ROWS).min(n), &mut acc);
        acc
    });
    let mut acc = vec![0.0; len];
    for p in partials {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}
