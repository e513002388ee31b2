//! Bounded, order-preserving parallel map over scoped threads.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Applies `f` to every item using at most `workers` threads. Output order
/// matches input order regardless of scheduling. With one worker (or one
/// item) no thread is spawned.
pub fn map_ordered<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("slot lock")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("slot lock").into_iter().map(|r| r.expect("every slot filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order_across_worker_counts() {
        let items: Vec<u64> = (0..257).collect();
        let serial = map_ordered(&items, 1, |x| x * x);
        for workers in [2, 3, 8, 64] {
            assert_eq!(map_ordered(&items, workers, |x| x * x), serial);
        }
        assert!(map_ordered(&Vec::<u8>::new(), 4, |x| *x).is_empty());
    }
}
