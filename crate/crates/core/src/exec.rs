//! Execution strategy for the data-parallel inner loops.
//!
//! Per-document scoring, per-document categorization, document annotation
//! and resampling replicates all go through [`Exec::map`]. With the
//! `parallel` feature (on by default) `Exec::Parallel` fans out over rayon;
//! without it, every strategy runs sequentially. Results are always returned
//! in input order, so the two strategies are observationally identical.

/// How to run an embarrassingly parallel map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Exec::Sequential => items.iter().map(f).collect(),
            Exec::Parallel => par_map(items, f),
        }
    }

    /// Map over `0..n`, keeping index order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..n).map(f).collect(),
            Exec::Parallel => par_map_range(n, f),
        }
    }

    /// Like [`Exec::map`] but with at most `threads` workers.
    pub fn map_bounded<T, R, F>(self, items: &[T], threads: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        if threads <= 1 {
            return Exec::Sequential.map(items, f);
        }
        match self {
            Exec::Sequential => items.iter().map(f).collect(),
            Exec::Parallel => par_map_bounded(items, threads, f),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
fn par_map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
fn par_map_bounded<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(err) => {
            log::warn!("could not build a {threads}-thread pool ({err}); running sequentially");
            items.iter().map(f).collect()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn par_map_bounded<T, R, F>(items: &[T], _threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree_and_keep_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let seq = Exec::Sequential.map(&xs, |x| x * x);
        let par = Exec::Parallel.map(&xs, |x| x * x);
        let bounded = Exec::Parallel.map_bounded(&xs, 3, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq, bounded);
        assert_eq!(
            Exec::Parallel.map_range(50, |i| i + 1),
            (1..=50).collect::<Vec<_>>()
        );
    }
}
