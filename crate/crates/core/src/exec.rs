//! Execution strategy for data-parallel inner loops.
//!
//! Batch training and Monte Carlo sweeps fan work out over independent
//! items and reduce the results in item order. The reduction order is part
//! of the numeric contract: because it never depends on the thread count,
//! sequential and parallel runs produce bit-identical output, which the
//! test suite asserts.

/// How to map a workload over its items.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Exec {
    /// Parallel when the crate is built with the `parallel` feature,
    /// sequential otherwise.
    pub fn auto() -> Exec {
        #[cfg(feature = "parallel")]
        {
            Exec::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Exec::Sequential
        }
    }
}

/// Maps `f` over `0..n` preserving index order in the output.
pub fn map_indexed<O, F>(exec: Exec, n: usize, f: F) -> Vec<O>
where
    O: Send,
    F: Fn(usize) -> O + Sync + Send,
{
    match exec {
        Exec::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
    }
}

/// Splits `0..len` into fixed-size chunks, maps each chunk, then folds the
/// chunk results strictly in chunk order. The chunk size is a constant of
/// the caller, never derived from the thread count, so the fold order and
/// therefore the floating-point result are identical under every `Exec`.
pub fn chunked_fold<O, A, F, G>(
    exec: Exec,
    len: usize,
    chunk: usize,
    map: F,
    init: A,
    fold: G,
) -> A
where
    O: Send,
    F: Fn(std::ops::Range<usize>) -> O + Sync + Send,
    G: FnMut(A, O) -> A,
{
    assert!(chunk > 0, "chunk size must be positive");
    let ranges: Vec<_> = (0..len)
        .step_by(chunk)
        .map(|start| start..(start + chunk).min(len))
        .collect();
    let mapped = map_indexed(exec, ranges.len(), |i| map(ranges[i].clone()));
    mapped.into_iter().fold(init, fold)
}

/// Stable 64-bit hash of a context string mixed with a master seed.
///
/// Used to derive independent RNG streams for sweeps, chunks and training
/// phases. FNV-1a over the tag, then a splitmix64 finalizer; fully
/// deterministic across platforms and releases.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master ^ h)
}

/// Derives the seed of one numbered stream under a parent seed.
pub fn derive_stream(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
