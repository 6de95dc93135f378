//! Data-parallel helpers. With the `parallel` feature these fan out over
//! rayon's pool; without it they are plain sequential iterators. Results
//! always come back in input order so downstream reductions are
//! deterministic regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn num_threads() -> usize {
    #[cfg(feature = "parallel")]
    return rayon::current_num_threads();

    #[cfg(not(feature = "parallel"))]
    return 1;
}

pub fn map_collect<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    return items.par_iter().map(f).collect();

    #[cfg(not(feature = "parallel"))]
    return items.iter().map(f).collect();
}

pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    return (0..n).into_par_iter().map(f).collect();

    #[cfg(not(feature = "parallel"))]
    return (0..n).map(f).collect();
}

pub fn map_collect_mut<T, R, F>(items: &mut [T], f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(&mut T) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    return items.par_iter_mut().map(f).collect();

    #[cfg(not(feature = "parallel"))]
    return items.iter_mut().map(f).collect();
}

pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Send + Sync,
{
    #[cfg(feature = "parallel")]
    items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));

    #[cfg(not(feature = "parallel"))]
    items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let v: Vec<u32> = (0..1000).collect();
        let out = map_collect(&v, |x| x * 2);
        assert!(out.iter().enumerate().all(|(i, &x)| x == 2 * i as u32));
        assert_eq!(map_range(5, |i| i), vec![0, 1, 2, 3, 4]);
    }
}
