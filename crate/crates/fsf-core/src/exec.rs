//! Execution-mode plumbing: data-parallel inner loops with a sequential
//! fallback.
//!
//! The hot loops in this crate (per-sample gradients inside a batch, per-client
//! local training inside a round, Monte-Carlo noise draws) are embarrassingly
//! parallel. [`map_indexed`] runs them either sequentially or on a rayon pool,
//! always collecting results in input order so reductions downstream see a
//! fixed order and produce bit-identical floats in both modes.
//!
//! The `parallel` cargo feature (default on) compiles the rayon path; without
//! it [`Parallelism::Rayon`] silently degrades to sequential execution.

/// How a batched map should execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    /// Plain iteration on the calling thread.
    #[default]
    Sequential,
    /// rayon `par_iter` on the current thread pool (falls back to sequential
    /// when the crate is built without the `parallel` feature).
    Rayon,
}

impl Parallelism {
    /// Mode for a requested worker count: one worker stays sequential.
    pub fn for_threads(threads: usize) -> Self {
        if threads > 1 {
            Parallelism::Rayon
        } else {
            Parallelism::Sequential
        }
    }
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_indexed<R, F>(mode: Parallelism, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match mode {
        Parallelism::Sequential => (0..n).map(f).collect(),
        Parallelism::Rayon => map_rayon(n, f),
    }
}

#[cfg(feature = "parallel")]
fn map_rayon<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_rayon<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Runs `f` inside a rayon pool of `threads` workers (scoped to the call).
/// With one worker, or without the `parallel` feature, runs `f` directly.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    if threads <= 1 {
        return f();
    }
    with_pool(threads, f)
}

#[cfg(feature = "parallel")]
fn with_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_pool<R: Send>(_threads: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_preserve_input_order() {
        let seq = map_indexed(Parallelism::Sequential, 100, |i| i * i);
        let par = map_indexed(Parallelism::Rayon, 100, |i| i * i);
        assert_eq!(seq, par);
    }

    #[test]
    fn float_sums_are_bit_identical_across_modes() {
        // The contract that makes `--threads` a pure performance knob: maps
        // collect in index order, so a fixed-order reduction afterwards sees
        // the same operand sequence in both modes.
        let reduce = |mode| {
            map_indexed(mode, 1000, |i| ((i as f64) * 0.37).sin())
                .iter()
                .fold(0.0_f64, |acc, x| acc + x)
        };
        let a = reduce(Parallelism::Sequential);
        let b = reduce(Parallelism::Rayon);
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
