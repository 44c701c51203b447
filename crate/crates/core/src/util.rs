use std::thread;

/// Number of items handed to one worker at a time. Fixed so that any reduction
/// over chunk results happens in the same order whatever the thread count.
pub(crate) const CHUNK: usize = 64;

/// Maps `f` over `items` with up to `threads` workers; output is in input order.
pub(crate) fn par_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    par_chunks(items, threads, |offset, chunk| {
        chunk
            .iter()
            .enumerate()
            .map(|(i, item)| f(offset + i, item))
            .collect::<Vec<R>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Applies `f` to consecutive chunks of [`CHUNK`] items and returns one result
/// per chunk, in chunk order.
pub(crate) fn par_chunks<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> R + Sync,
{
    let chunks: Vec<(usize, &[T])> = items
        .chunks(CHUNK)
        .enumerate()
        .map(|(i, c)| (i * CHUNK, c))
        .collect();
    let threads = threads.max(1).min(chunks.len().max(1));
    if threads == 1 {
        return chunks.into_iter().map(|(o, c)| f(o, c)).collect();
    }
    let mut slots: Vec<Option<R>> = Vec::with_capacity(chunks.len());
    slots.resize_with(chunks.len(), || None);
    let f = &f;
    thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let mine: Vec<(usize, usize, &[T])> = chunks
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i % threads == w)
                    .map(|(i, &(o, c))| (i, o, c))
                    .collect();
                scope.spawn(move || {
                    mine.into_iter()
                        .map(|(i, o, c)| (i, f(o, c)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("chunk result")).collect()
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_keeps_order_for_any_thread_count() {
        let items: Vec<usize> = (0..1000).collect();
        let one = par_map(&items, 1, |i, x| i * 1000 + x);
        let four = par_map(&items, 4, |i, x| i * 1000 + x);
        assert_eq!(one, four);
        assert_eq!(one[999], 999 * 1001);
    }

    #[test]
    fn lse() {
        let v = [0.1f64.ln(), 0.2f64.ln(), 0.7f64.ln()];
        assert!(log_sum_exp(&v).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 2]), f64::NEG_INFINITY);
        assert!((log_add(0.3f64.ln(), 0.7f64.ln())).abs() < 1e-15);
    }
}
