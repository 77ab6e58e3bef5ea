//! Ordered fan-out helpers.
//!
//! With the `parallel` feature these run on rayon; without it they fall
//! back to plain iteration. Results are always merged in input order, so
//! both paths produce identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f` to every item, preserving input order in the output.
#[cfg(feature = "parallel")]
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    map_ordered_seq(items, f)
}

/// Sequential variant, always available; the bench suite uses it as the
/// serial baseline.
pub fn map_ordered_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Fallible variant of [`map_ordered`]; the first error (by input order)
/// wins. All items run before errors are inspected so the winning error is
/// deterministic regardless of scheduling.
#[cfg(feature = "parallel")]
pub fn try_map_ordered<T, R, E, F>(items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<R, E> + Sync + Send,
{
    let results: Vec<Result<R, E>> = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| f(i, item))
        .collect();
    results.into_iter().collect()
}

#[cfg(not(feature = "parallel"))]
pub fn try_map_ordered<T, R, E, F>(items: &[T], f: F) -> Result<Vec<R>, E>
where
    F: Fn(usize, &T) -> Result<R, E>,
{
    items
        .iter()
        .enumerate()
        .map(|(i, item)| f(i, item))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_order_matches_input_order() {
        let items: Vec<u64> = (0..257).collect();
        let doubled = map_ordered(&items, |x| x * 2);
        assert_eq!(doubled, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert_eq!(doubled, map_ordered_seq(&items, |x| x * 2));
    }

    #[test]
    fn first_error_by_input_order_wins() {
        let items: Vec<u64> = (0..64).collect();
        let err = try_map_ordered(&items, |i, _| -> Result<(), usize> {
            if i >= 10 {
                Err(i)
            } else {
                Ok(())
            }
        })
        .unwrap_err();
        assert_eq!(err, 10);
    }
}
