//! Synthetic chain-task generator.
//!
//! Label sequences are drawn from a first-order Markov chain (uniform initial
//! distribution); features are emitted per position as either a one-hot label
//! indicator plus isotropic Gaussian noise, or pure noise carrying no label
//! information. The information-free variant pins any classifier's expected
//! error at 1 - 1/|L|, which the acceptance checks rely on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cli::config::{FeatureMode, SynthParams};
use crate::corpus::{Corpus, FeatureVector, TokenSequence};
use crate::{Error, Result};

/// Resolved row-stochastic transition matrix from the generator parameters.
pub fn transition_matrix(params: &SynthParams) -> Result<Vec<Vec<f64>>> {
    let l = params.n_labels;
    if l < 2 {
        return Err(Error::Invalid("synthetic task needs at least 2 labels".into()));
    }
    let matrix = match (&params.transition, params.self_bias) {
        (Some(_), Some(_)) => {
            return Err(Error::Invalid(
                "synth.transition and synth.self-bias are mutually exclusive".into(),
            ))
        }
        (Some(t), None) => t.clone(),
        (None, Some(bias)) => {
            if !(0.0..=1.0).contains(&bias) {
                return Err(Error::Invalid(format!("self bias must be in [0, 1], got {bias}")));
            }
            let off = (1.0 - bias) / (l - 1) as f64;
            (0..l)
                .map(|i| (0..l).map(|j| if i == j { bias } else { off }).collect())
                .collect()
        }
        (None, None) => vec![vec![1.0 / l as f64; l]; l],
    };
    if matrix.len() != l || matrix.iter().any(|r| r.len() != l) {
        return Err(Error::Invalid(format!(
            "transition matrix must be {l} x {l} to match synth.labels"
        )));
    }
    for (i, row) in matrix.iter().enumerate() {
        if row.iter().any(|&p| !(0.0..=1.0).contains(&p) || !p.is_finite()) {
            return Err(Error::Invalid(format!("transition row {i} has entries outside [0, 1]")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("transition row {i} sums to {sum}, not 1")));
        }
    }
    Ok(matrix)
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut u: f64 = rng.gen();
    for (i, &p) in probs.iter().enumerate() {
        u -= p;
        if u < 0.0 {
            return i;
        }
    }
    probs.len() - 1
}

fn generate_corpus(
    params: &SynthParams,
    matrix: &[Vec<f64>],
    n_seqs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Corpus> {
    let l = params.n_labels;
    let normal = StandardNormal;
    let mut sequences = Vec::with_capacity(n_seqs);
    for _ in 0..n_seqs {
        let mut labels = Vec::with_capacity(params.seq_len);
        let mut current = rng.gen_range(0..l);
        labels.push(current);
        for _ in 1..params.seq_len {
            current = sample_categorical(&matrix[current], rng);
            labels.push(current);
        }
        let features = labels
            .iter()
            .map(|&y| {
                let values: Vec<f64> = (0..l)
                    .map(|k| {
                        let noise: f64 = normal.sample(rng);
                        match params.features {
                            FeatureMode::OneHot => {
                                (if k == y { 1.0 } else { 0.0 }) + params.noise * noise
                            }
                            FeatureMode::Noise => noise,
                        }
                    })
                    .collect();
                FeatureVector::dense(values)
            })
            .collect::<Result<Vec<_>>>()?;
        sequences.push(TokenSequence::new(features, Some(labels))?);
    }
    let alphabet = (0..l).map(|i| format!("L{i}")).collect();
    Corpus::new(sequences, alphabet, l)
}

/// Draws a (train, test) corpus pair; train sequences are generated first,
/// so the pair is deterministic in the seed.
pub fn generate(params: &SynthParams, seed: u64) -> Result<(Corpus, Corpus)> {
    if params.seq_len == 0 || params.n_train == 0 || params.n_test == 0 {
        return Err(Error::Invalid("synth sizes must be positive".into()));
    }
    let matrix = transition_matrix(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = generate_corpus(params, &matrix, params.n_train, &mut rng)?;
    let test = generate_corpus(params, &matrix, params.n_test, &mut rng)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_transitions_and_zero_noise_are_separable() {
        // cyclic deterministic chain, exact one-hot features
        let params = SynthParams {
            n_labels: 3,
            seq_len: 6,
            n_train: 4,
            n_test: 2,
            noise: 0.0,
            features: FeatureMode::OneHot,
            self_bias: None,
            transition: Some(vec![
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![1.0, 0.0, 0.0],
            ]),
            ..Default::default()
        };
        let (train, _) = generate(&params, 9).unwrap();
        for seq in &train.sequences {
            let labels = seq.labels.as_ref().unwrap();
            for t in 0..labels.len() {
                // the feature is exactly the label indicator: Bayes error 0
                for k in 0..3 {
                    let expect = if k == labels[t] { 1.0 } else { 0.0 };
                    assert_eq!(seq.features[t].get(k), expect);
                }
                if t + 1 < labels.len() {
                    assert_eq!(labels[t + 1], (labels[t] + 1) % 3);
                }
            }
        }
    }

    #[test]
    fn rejects_non_stochastic_matrices() {
        let mut params = SynthParams::default();
        params.transition = Some(vec![vec![0.9, 0.2], vec![0.5, 0.5]]);
        assert!(matches!(generate(&params, 0), Err(Error::Invalid(_))));
        params.transition = Some(vec![vec![1.1, -0.1], vec![0.5, 0.5]]);
        assert!(generate(&params, 0).is_err());
        params.transition = Some(vec![vec![1.0]]);
        assert!(generate(&params, 0).is_err());
        params.transition = None;
        params.self_bias = Some(1.5);
        assert!(generate(&params, 0).is_err());
    }

    #[test]
    fn empirical_transition_frequencies_match_the_matrix() {
        let params = SynthParams {
            n_labels: 2,
            seq_len: 101,
            n_train: 100, // 100 x 100 = 10_000 transitions
            n_test: 1,
            self_bias: Some(0.7),
            ..Default::default()
        };
        let (train, _) = generate(&params, 13).unwrap();
        let matrix = transition_matrix(&params).unwrap();
        let mut counts = vec![vec![0usize; 2]; 2];
        for seq in &train.sequences {
            let labels = seq.labels.as_ref().unwrap();
            for w in labels.windows(2) {
                counts[w[0]][w[1]] += 1;
            }
        }
        for i in 0..2 {
            let row_total: usize = counts[i].iter().sum();
            for j in 0..2 {
                let p = matrix[i][j];
                let se = (p * (1.0 - p) / row_total as f64).sqrt();
                let observed = counts[i][j] as f64 / row_total as f64;
                assert!(
                    (observed - p).abs() <= 3.0 * se,
                    "transition ({i},{j}): observed {observed} vs {p} (se {se})"
                );
            }
        }
    }

    #[test]
    fn same_seed_reproduces_the_dataset() {
        let params = SynthParams::default();
        let a = generate(&params, 21).unwrap();
        let b = generate(&params, 21).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}
