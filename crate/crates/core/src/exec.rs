//! Replication runner.
//!
//! Every replication draws from its own ChaCha stream keyed by
//! `(seed, tag, index)`, and results are collected in index order. Output is
//! therefore identical for any number of worker threads, and identical
//! between the rayon path and the sequential fallback.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type StreamRng = ChaCha8Rng;

/// Stream tags keep independent uses of one seed apart.
pub mod tag {
    pub const REPLICATION: u64 = 0x5245_504c;
    pub const PILOT: u64 = 0x5049_4c54;
    pub const CALIBRATION: u64 = 0x4341_4c42;
    pub const WEIGHT_PILOT: u64 = 0x5750_4c54;
    pub const SAMPLER: u64 = 0x5341_4d50;
}

/// Deterministic RNG for replication `index` of the experiment `(seed, tag)`.
pub fn stream_rng(seed: u64, tag: u64, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&tag.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Map `f` over `0..count`, in parallel when the `parallel` feature is on.
pub fn replicate<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        replicate_sequential(count, f)
    }
}

/// Single-threaded counterpart of [`replicate`].
pub fn replicate_sequential<T, F>(count: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..count).map(f).collect()
}

/// Fallible [`replicate`]; the error reported is the one with the lowest
/// index, so failures are as reproducible as successes.
pub fn try_replicate<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    replicate(count, f).into_iter().collect()
}

/// Run `f` on a pool with `threads` workers (`None` keeps the global pool).
/// Without the `parallel` feature this just calls `f`.
pub fn with_threads<R, F>(threads: Option<usize>, f: F) -> Result<R>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidConfig("thread count must be positive".into())),
        #[cfg(feature = "parallel")]
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(f()),
    }
}

/// Thread cap from the `RESID_THREADS` environment variable.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("RESID_THREADS") {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("RESID_THREADS=`{v}` is not a count"))),
        Err(_) => Ok(None),
    }
}
