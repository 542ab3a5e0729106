//! Data-parallel helpers. With the `parallel` feature these run on the rayon
//! pool once the input is large enough; otherwise they run sequentially.

use crate::error::Result;

/// Inputs shorter than this are processed on the calling thread.
pub const MIN_PARALLEL_LEN: usize = 2048;

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if items.len() >= MIN_PARALLEL_LEN {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

pub fn try_map<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if items.len() >= MIN_PARALLEL_LEN {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Applies `f` to consecutive chunks and returns the per-chunk results in order.
pub fn map_chunks<T, U, F>(items: &[T], chunk: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&[T]) -> U + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if items.len() >= MIN_PARALLEL_LEN {
        use rayon::prelude::*;
        return items.par_chunks(chunk).map(f).collect();
    }
    items.chunks(chunk).map(f).collect()
}

/// Like [`map_chunks`] for fallible work; the first error wins.
pub fn try_map_chunks<T, U, F>(items: &[T], chunk: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&[T]) -> Result<U> + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if items.len() >= MIN_PARALLEL_LEN {
        use rayon::prelude::*;
        return items.par_chunks(chunk).map(f).collect();
    }
    items.chunks(chunk).map(f).collect()
}

/// Maps over items that are each a sizeable unit of work, such as a chunk.
pub fn map_units<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if items.len() > 1 {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

pub fn try_map_units<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if items.len() > 1 {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Runs `f` over independent owned tasks, keeping input order.
pub fn for_each_task<T, U, F>(tasks: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if tasks.len() > 1 {
        use rayon::prelude::*;
        return tasks.into_par_iter().map(f).collect();
    }
    tasks.into_iter().map(f).collect()
}

/// Number of threads parallel work is spread over.
pub fn workers() -> usize {
    #[cfg(feature = "parallel")]
    return rayon::current_num_threads().max(1);
    #[cfg(not(feature = "parallel"))]
    1
}

/// Chunk size that gives each worker a few chunks to balance load.
pub fn chunk_len(total: usize) -> usize {
    total.div_ceil(workers() * 4).max(MIN_PARALLEL_LEN / 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_keep_input_order() {
        let xs: Vec<u64> = (0..10_000).collect();
        let ys = map(&xs, |x| x * 2);
        assert!(ys.iter().enumerate().all(|(i, y)| *y == 2 * i as u64));
        let sums = map_chunks(&xs, 1000, |c| c.iter().sum::<u64>());
        assert_eq!(sums.iter().sum::<u64>(), xs.iter().sum());
        assert_eq!(for_each_task(vec![3, 1, 2], |x| x + 1), vec![4, 2, 3]);
    }

    #[test]
    fn errors_propagate() {
        let xs: Vec<i64> = (0..5000).collect();
        let r = try_map(&xs, |x| {
            if *x == 4321 {
                Err(crate::Error::Parse("boom".into()))
            } else {
                Ok(*x)
            }
        });
        assert!(r.is_err());
    }
}
