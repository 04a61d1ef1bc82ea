//! Data-parallel helpers.
//!
//! Every batch loop in the crate (perturbation curves, SmoothGrad samples,
//! integrated-gradient steps, per-image evaluation) goes through [`try_map`].
//! Results always come back in index order, so the numbers are identical for
//! both execution modes. Without the `parallel` feature, [`Parallelism::Parallel`]
//! silently runs sequentially.

use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Parallelism {
    #[default]
    Parallel,
    Sequential,
}

impl Parallelism {
    /// True when work will actually fan out across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

/// Evaluates `f(0..n)` and collects the results in index order, stopping at the
/// first error (which error wins is unspecified in parallel mode).
pub fn try_map<R, F>(mode: Parallelism, n: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Infallible variant of [`try_map`].
pub fn map<R, F>(mode: Parallelism, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_preserve_order() {
        let seq = map(Parallelism::Sequential, 1000, |i| i * i);
        let par = map(Parallelism::Parallel, 1000, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[31], 961);
    }

    #[test]
    fn errors_propagate() {
        let r: Result<Vec<usize>> = try_map(Parallelism::Parallel, 10, |i| {
            if i == 7 {
                Err(crate::Error::Range("seven".into()))
            } else {
                Ok(i)
            }
        });
        assert!(r.is_err());
    }
}
