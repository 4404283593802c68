//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! every helper runs sequentially with identical output ordering.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution mode for loops that have both a sequential and a parallel path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Auto,
}

impl ExecMode {
    fn parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Auto
    }
}

/// Order-preserving map over a slice.
pub fn map<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Order-preserving indexed map over a slice.
pub fn map_indexed<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.parallel() {
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = mode;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Runs `f` with at most `width` worker threads. A width of 0 or 1, or a build
/// without the `parallel` feature, runs the closure's maps sequentially.
pub fn with_width<R: Send>(width: usize, f: impl FnOnce(ExecMode) -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if width > 1 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(width).build() {
            return pool.install(|| f(ExecMode::Auto));
        }
    }
    let _ = width;
    f(ExecMode::Sequential)
}
