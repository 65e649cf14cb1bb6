//! Data-parallel map over index ranges.
//!
//! With the `parallel` feature the work is spread over the current rayon
//! pool; without it (or with [`Execution::Sequential`]) the same closure runs
//! in index order on the calling thread. Results are always returned in index
//! order, so callers see identical output either way.

/// How an index-parallel loop is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    /// `true` when this build can actually run work in parallel.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }

    pub fn map<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..len).into_par_iter().map(f).collect()
            }
            _ => (0..len).map(f).collect(),
        }
    }

    /// Run `f` inside a pool of `workers` threads (0 = rayon default).
    /// Sequential execution ignores the worker count.
    pub fn install<R, F>(self, workers: usize, f: F) -> R
    where
        R: Send,
        F: FnOnce() -> R + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                let mut builder = rayon::ThreadPoolBuilder::new();
                if workers > 0 {
                    builder = builder.num_threads(workers);
                }
                match builder.build() {
                    Ok(pool) => pool.install(f),
                    Err(e) => {
                        log::warn!("could not build thread pool ({e}); using the global pool");
                        f()
                    }
                }
            }
            _ => {
                let _ = workers;
                f()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree_and_keep_order() {
        let seq = Execution::Sequential.map(1000, |i| i * i);
        let par = Execution::Parallel.map(1000, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[31], 961);
    }

    #[test]
    fn install_runs_closure() {
        let v = Execution::Parallel.install(2, || Execution::Parallel.map(10, |i| i + 1));
        assert_eq!(v.iter().sum::<usize>(), 55);
    }
}
