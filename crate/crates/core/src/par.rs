//! Replica fan-out.

use crate::error::{Error, Result};
use crate::rng::Key;
use rayon::prelude::*;

/// Run `f` for replicas `0..n` with keys derived from `key`, in parallel on
/// the current rayon pool. Results come back in replica order, so anything
/// folded from them is independent of scheduling.
pub fn map_replicas<T, F>(n: u64, key: Key, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, Key) -> Result<T> + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|r| {
            let k = replica_key(key, r);
            f(r, k).map_err(|e| Error::Replica {
                replica: r,
                seed: k.0,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Key of replica `r`.
pub fn replica_key(key: Key, r: u64) -> Key {
    key.derive(r)
}

/// Size the global pool. Only the first call takes effect.
pub fn init_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}
