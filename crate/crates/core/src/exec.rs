//! Data-parallel execution helpers.
//!
//! Hot loops (fold evaluation, candidate scoring, importance repeats) run
//! through [`auto_map`], which uses rayon when the `parallel` feature is on
//! and degrades to the sequential path otherwise. Both preserve input order,
//! so results are identical either way.

/// Sequential map, always available (benchmark baseline).
pub fn seq_map<T, U>(items: &[T], f: impl Fn(&T) -> U) -> Vec<U> {
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn auto_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn auto_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    seq_map(items, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maps_agree_and_preserve_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let seq = seq_map(&xs, |x| x * x + 1);
        let auto = auto_map(&xs, |x| x * x + 1);
        assert_eq!(seq, auto);
        assert_eq!(seq[3], 10);
    }
}
