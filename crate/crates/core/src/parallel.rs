use rayon::prelude::*;

/// Maps `f` over `inputs` on at most `width` worker threads.
///
/// Output order always matches input order regardless of completion order.
pub(crate) fn ordered_map<T, R, F>(width: usize, inputs: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if width <= 1 || inputs.len() <= 1 {
        return inputs.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(width).build() {
        Ok(pool) => pool.install(|| inputs.par_iter().map(&f).collect()),
        Err(err) => {
            log::warn!("falling back to sequential execution: {err}");
            inputs.iter().map(f).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let inputs: Vec<u64> = (0..500).collect();
        let out = ordered_map(8, &inputs, |x| {
            // uneven work so completion order differs from input order
            std::thread::sleep(std::time::Duration::from_micros((500 - x) % 7));
            x * 2
        });
        assert_eq!(out, inputs.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
