//! Execution strategy for the data-parallel loops of the crate.
//!
//! Every parallel loop in the crate goes through [`Exec`]. Work items are
//! independent and results are collected in input order, so both strategies
//! produce bit-identical output.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    /// Rayon-backed. Falls back to sequential when the `parallel` feature is
    /// disabled.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Whether this strategy actually runs on multiple threads in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Maps `f` over `0..n`, preserving order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps `f` over a slice, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Runs `f` on each `(index, chunk)` of `data` split into `chunk` sized
    /// mutable pieces.
    pub fn for_each_chunk_mut<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree() {
        let seq = Exec::Sequential.map_range(100, |i| (i as f32).sqrt());
        let par = Exec::Parallel.map_range(100, |i| (i as f32).sqrt());
        assert_eq!(seq, par);

        let mut a = vec![1.0f32; 64];
        let mut b = a.clone();
        Exec::Sequential.for_each_chunk_mut(&mut a, 8, |i, c| c.iter_mut().for_each(|x| *x *= i as f32));
        Exec::Parallel.for_each_chunk_mut(&mut b, 8, |i, c| c.iter_mut().for_each(|x| *x *= i as f32));
        assert_eq!(a, b);
    }
}
