//! Deterministic, stratified fold assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Assigns each row to one of `v` folds. Rows are shuffled within each
/// stratum and dealt round-robin, so every stratum is spread as evenly as
/// possible across folds.
pub fn stratified_folds(strata: &[u8], v: usize, seed: u64) -> Vec<usize> {
    assert!(v >= 1, "at least one fold");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; strata.len()];
    let mut labels: Vec<u8> = strata.to_vec();
    labels.sort_unstable();
    labels.dedup();
    let mut offset = 0;
    for label in labels {
        let mut rows: Vec<usize> = (0..strata.len()).filter(|&i| strata[i] == label).collect();
        rows.shuffle(&mut rng);
        for (j, &i) in rows.iter().enumerate() {
            fold[i] = (offset + j) % v;
        }
        offset += rows.len();
    }
    fold
}

/// `(train, held_out)` row indices for fold `f`.
pub fn split(fold: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    (0..fold.len()).partition(|&i| fold[i] != f)
}
