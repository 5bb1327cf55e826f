//! Execution policy for the data-parallel inner loops.
//!
//! Every hot loop in the crate (per-sample convolution, ensemble members,
//! per-frame metrics, per-frame resampling) goes through [`Exec`]. With the
//! `parallel` feature the loops fan out over the rayon pool; without it, or
//! with [`Exec::Sequential`] selected at runtime, they run on the calling
//! thread. Both paths produce bit-identical results: work items are
//! independent and every reduction happens afterwards in index order.

use std::sync::atomic::{AtomicU8, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

const SEQUENTIAL: u8 = 0;
const PARALLEL: u8 = 1;

static MODE: AtomicU8 = AtomicU8::new(if cfg!(feature = "parallel") {
    PARALLEL
} else {
    SEQUENTIAL
});

impl Default for Exec {
    fn default() -> Self {
        Exec::current()
    }
}

impl Exec {
    /// The process-wide policy used by library entry points.
    pub fn current() -> Exec {
        match MODE.load(Ordering::Relaxed) {
            PARALLEL => Exec::Parallel,
            _ => Exec::Sequential,
        }
    }

    pub fn set_current(mode: Exec) {
        MODE.store(
            match mode {
                Exec::Sequential => SEQUENTIAL,
                Exec::Parallel => PARALLEL,
            },
            Ordering::Relaxed,
        );
    }

    /// Whether this policy actually fans out (false without the `parallel` feature).
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() && n > 1 {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() && items.len() > 1 {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Applies `f(index, chunk)` to consecutive `chunk`-sized pieces of `data`.
    pub fn for_each_chunk_mut<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        assert!(chunk > 0, "chunk size must be positive");
        #[cfg(feature = "parallel")]
        if self.is_parallel() && data.len() > chunk {
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
        data.chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
}

/// Caps the global worker pool. Has no effect without the `parallel` feature
/// or if the pool was already initialised.
pub fn init_threads(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        false
    }
}
