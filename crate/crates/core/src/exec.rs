//! Evaluation strategy for independent jobs (swarm particles, quadrature
//! nodes, simulation replicates).

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random stream for job `index` under `seed`.
///
/// Streams are keyed by `(seed, index)` only, so draws do not depend on
/// which thread runs the job or in what order.
pub fn job_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs `f(0), …, f(len-1)` and returns the results in index order.
///
/// Implementations may evaluate in any order or in parallel but must return
/// results positionally so reductions stay deterministic.
pub trait Executor: Sync {
    fn map<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Evaluates jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..len).map(f).collect()
    }
}
