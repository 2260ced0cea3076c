//! Shared generators for unit tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, FeatureVector, TokenSequence};

pub fn random_corpus(
    rng: &mut ChaCha8Rng,
    n_seqs: usize,
    max_len: usize,
    n_labels: usize,
    dim: usize,
) -> Corpus {
    let seqs = (0..n_seqs)
        .map(|_| {
            let t = rng.gen_range(1..=max_len);
            let feats = (0..t)
                .map(|_| {
                    FeatureVector::dense((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                        .unwrap()
                })
                .collect();
            let labels = (0..t).map(|_| rng.gen_range(0..n_labels)).collect();
            TokenSequence::new(feats, Some(labels)).unwrap()
        })
        .collect();
    let alphabet = (0..n_labels).map(|i| format!("L{i}")).collect();
    Corpus::new(seqs, alphabet, dim).unwrap()
}
