use rand::seq::SliceRandom;

use super::TokenizedCorpus;
use crate::rng;

/// Shuffles the corpus with `epoch_seed` and cuts it into consecutive
/// groups of `batch_size`; the final group may be smaller.
///
/// # Panics
/// If `batch_size` is zero.
pub fn batch_iter(corpus: &TokenizedCorpus, batch_size: usize, epoch_seed: u64) -> Vec<Vec<&[usize]>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng::seeded(rng::derive_seed(epoch_seed, "batch")));
    order
        .chunks(batch_size)
        .map(|c| c.iter().map(|&i| corpus.sentences()[i].as_slice()).collect())
        .collect()
}
