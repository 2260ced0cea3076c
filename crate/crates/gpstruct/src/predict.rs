//! Test-time inference: predictive Gaussian conditionals for test latents,
//! Bayesian model averaging over posterior samples, and loss-specific
//! decoding.
//!
//! For each retained posterior sample f, the unary latents at test positions
//! are Gaussian given f, with one shared ΣT_test-sized covariance across
//! label blocks. The pairwise clique template is globally tied, so test-time
//! pairwise latents are the training ones verbatim. Chain node marginals are
//! computed per (f, f*) pair and averaged uniformly; Hamming decoding takes
//! the per-position argmax of the averaged marginals, 0/1-loss decoding runs
//! Viterbi on their logs plus the sample-averaged pairwise table (a
//! documented approximation: the exact 0/1-optimal decoder under a mixture
//! is intractable).

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::chain::{marginals, viterbi, ChainPotentials};
use crate::corpus::Corpus;
use crate::kernels::{assemble_gram, kx_eval, GramBlocks, KernelConfig, LatentLayout};
use crate::sampler::SampleStore;
use crate::{Error, Result};

/// Gaussian over the test-position unary latents, plus the (deterministic)
/// pairwise latents carried over from the training sample.
#[derive(Debug, Clone)]
pub struct PredictiveGaussian {
    /// ΣT_test x |L|; column y is the predictive mean of label block y.
    pub unary_mean: DMatrix<f64>,
    /// |L| x |L| pairwise latents, copied from the training sample.
    pub pairwise: DMatrix<f64>,
    /// Lower-triangular factor of the shared unary predictive covariance;
    /// absent under the f*-MAP scheme.
    pub cov_chol: Option<DMatrix<f64>>,
}

/// How test latents are treated per posterior sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Use the predictive mean only.
    FstarMap,
    /// Draw `n_fstar` samples from the predictive Gaussian.
    FstarSample,
}

/// Loss the decoder optimizes for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    Hamming,
    ZeroOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictOptions {
    pub scheme: Scheme,
    pub n_fstar: usize,
    pub loss: Loss,
    pub seed: u64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions { scheme: Scheme::FstarMap, n_fstar: 1, loss: Loss::Hamming, seed: 0 }
    }
}

/// Decoded labels and averaged marginals for a test corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    /// Predicted label ids per test sequence.
    pub labels: Vec<Vec<usize>>,
    /// Averaged node marginals per test sequence (T x |L|).
    pub marginals: Vec<DMatrix<f64>>,
    pub n_f_samples: usize,
    pub n_fstar_samples: usize,
}

/// Predictive Gaussian of the test latents given one training sample f.
///
/// Per label block: mean = Kx*^T Kx^{-1} f_block, where Kx* is the
/// train-by-test input-kernel cross matrix. With `want_cov`, the shared unary
/// covariance Kx** - Kx*^T Kx^{-1} Kx* + jitter I is factorized once.
pub fn predictive_conditional(
    gram: &GramBlocks,
    f: &DVector<f64>,
    train: &Corpus,
    test: &Corpus,
    config: &KernelConfig,
    want_cov: bool,
) -> Result<PredictiveGaussian> {
    let layout = gram.layout();
    if f.len() != layout.total() {
        return Err(Error::DimMismatch(format!(
            "latent vector has {} entries, training layout expects {}",
            f.len(),
            layout.total()
        )));
    }
    let n_train = layout.total_positions();
    let n_labels = layout.n_labels();
    if test.n_labels() != n_labels {
        return Err(Error::DimMismatch("test label alphabet size differs from training".into()));
    }
    let train_pos: Vec<_> = train.sequences.iter().flat_map(|s| s.features.iter()).collect();
    let test_pos: Vec<_> = test.sequences.iter().flat_map(|s| s.features.iter()).collect();
    let n_test = test_pos.len();

    let mut cross = DMatrix::zeros(n_train, n_test);
    for i in 0..n_train {
        for j in 0..n_test {
            cross[(i, j)] = kx_eval(train_pos[i], test_pos[j], config)?;
        }
    }

    let mut unary_mean = DMatrix::zeros(n_test, n_labels);
    for y in 0..n_labels {
        let f_block = DVector::from(f.rows(y * n_train, n_train));
        let alpha = gram.solve_input(&f_block);
        unary_mean.set_column(y, &(cross.transpose() * alpha));
    }

    let base = layout.n_unary();
    let pairwise = DMatrix::from_fn(n_labels, n_labels, |a, b| f[base + a * n_labels + b]);

    let cov_chol = if want_cov {
        let mut test_gram = DMatrix::zeros(n_test, n_test);
        for i in 0..n_test {
            for j in i..n_test {
                let v = kx_eval(test_pos[i], test_pos[j], config)?;
                test_gram[(i, j)] = v;
                test_gram[(j, i)] = v;
            }
        }
        let solved = {
            // Kx^{-1} Kx*, column by column through the cached factor
            let mut solved = DMatrix::zeros(n_train, n_test);
            for j in 0..n_test {
                let col = DVector::from(cross.column(j));
                solved.set_column(j, &gram.solve_input(&col));
            }
            solved
        };
        let mut cov = test_gram - cross.transpose() * solved;
        for i in 0..n_test {
            cov[(i, i)] += config.jitter;
        }
        let chol = Cholesky::new(cov).ok_or_else(|| {
            Error::Factorization("predictive covariance not positive definite".into())
        })?;
        Some(chol.l())
    } else {
        None
    };

    Ok(PredictiveGaussian { unary_mean, pairwise, cov_chol })
}

/// Node marginals of every test sequence for one concrete latent assignment.
fn node_marginals_for_latents(
    unary: &DMatrix<f64>,
    pairwise: &DMatrix<f64>,
    test_layout: &LatentLayout,
) -> Result<Vec<DMatrix<f64>>> {
    let mut out = Vec::with_capacity(test_layout.n_sequences());
    for seq in 0..test_layout.n_sequences() {
        let off = test_layout.sequence_offset(seq);
        let t_len = test_layout.sequence_len(seq);
        let pots = ChainPotentials::new(unary.rows(off, t_len).into(), pairwise.clone())?;
        out.push(marginals(&pots).node);
    }
    Ok(out)
}

/// Accumulates node marginals for one posterior sample into `node_acc`,
/// drawing test latents per the scheme. Returns the number of f* draws used.
///
/// Public so tests can drive it with a doctored [`PredictiveGaussian`] (for
/// instance a zeroed covariance factor, which must reproduce the MAP scheme).
pub fn accumulate_sample_marginals(
    pg: &PredictiveGaussian,
    test_layout: &LatentLayout,
    scheme: Scheme,
    n_fstar: usize,
    rng: &mut ChaCha8Rng,
    node_acc: &mut [DMatrix<f64>],
) -> Result<usize> {
    match scheme {
        Scheme::FstarMap => {
            let per_seq = node_marginals_for_latents(&pg.unary_mean, &pg.pairwise, test_layout)?;
            for (acc, m) in node_acc.iter_mut().zip(&per_seq) {
                *acc += m;
            }
            Ok(1)
        }
        Scheme::FstarSample => {
            if n_fstar < 1 {
                return Err(Error::Invalid("n_fstar must be >= 1 for the sampling scheme".into()));
            }
            let chol = pg.cov_chol.as_ref().ok_or_else(|| {
                Error::Invalid("sampling scheme requires a predictive covariance factor".into())
            })?;
            let n_test = pg.unary_mean.nrows();
            let n_labels = pg.unary_mean.ncols();
            let normal = StandardNormal;
            for _ in 0..n_fstar {
                let mut draw = DMatrix::zeros(n_test, n_labels);
                for y in 0..n_labels {
                    let z = DVector::from_fn(n_test, |_, _| normal.sample(rng));
                    let col = DVector::from(pg.unary_mean.column(y)) + chol * z;
                    draw.set_column(y, &col);
                }
                let per_seq = node_marginals_for_latents(&draw, &pg.pairwise, test_layout)?;
                for (acc, m) in node_acc.iter_mut().zip(&per_seq) {
                    *acc += m;
                }
            }
            Ok(n_fstar)
        }
    }
}

/// Bayesian-model-averaged prediction over a (post burn-in) sample store.
///
/// Gram blocks are rebuilt per sample when hyperparameter sampling changed
/// them; identical consecutive hyperparameters reuse the cached factorization.
pub fn predict_bma(
    store: &SampleStore,
    train: &Corpus,
    test: &Corpus,
    opts: &PredictOptions,
) -> Result<PredictionResult> {
    predict_bma_impl(store, train, test, opts, true)
}

/// Cache-free variant of [`predict_bma`]; must produce identical output.
#[doc(hidden)]
pub fn predict_bma_uncached(
    store: &SampleStore,
    train: &Corpus,
    test: &Corpus,
    opts: &PredictOptions,
) -> Result<PredictionResult> {
    predict_bma_impl(store, train, test, opts, false)
}

fn predict_bma_impl(
    store: &SampleStore,
    train: &Corpus,
    test: &Corpus,
    opts: &PredictOptions,
    reuse_cache: bool,
) -> Result<PredictionResult> {
    if store.samples.is_empty() {
        return Err(Error::InsufficientData("sample store holds no samples".into()));
    }
    if opts.scheme == Scheme::FstarSample && opts.n_fstar < 1 {
        return Err(Error::Invalid("n_fstar must be >= 1 for the sampling scheme".into()));
    }
    store.fingerprint.check(train)?;
    if test.n_labels() != train.n_labels() {
        return Err(Error::DimMismatch("test label alphabet size differs from training".into()));
    }
    if test.feature_dim != train.feature_dim {
        return Err(Error::DimMismatch("test feature dim differs from training".into()));
    }

    let test_layout = LatentLayout::from_corpus(test);
    let n_labels = test_layout.n_labels();
    let want_cov = opts.scheme == Scheme::FstarSample;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut node_acc: Vec<DMatrix<f64>> = (0..test_layout.n_sequences())
        .map(|s| DMatrix::zeros(test_layout.sequence_len(s), n_labels))
        .collect();
    let mut pairwise_acc = DMatrix::zeros(n_labels, n_labels);
    let mut total_draws = 0usize;
    let mut fstar_per_sample = 0usize;

    let mut gram_cache: Option<(u64, GramBlocks)> = None;
    for sample in &store.samples {
        let mut kcfg = store.kernel_base;
        kcfg.length_scale = sample.length_scale;
        kcfg.pairwise_scale = sample.pairwise_scale;
        // mean and covariance depend on the input kernel only, so the cache
        // key is the length scale
        let key = sample.length_scale.to_bits();
        let gram = match &gram_cache {
            Some((k, g)) if reuse_cache && *k == key => g.clone(),
            _ => {
                let g = assemble_gram(train, &kcfg)?;
                gram_cache = Some((key, g.clone()));
                g
            }
        };
        let f = DVector::from_vec(sample.f.clone());
        let pg = predictive_conditional(&gram, &f, train, test, &kcfg, want_cov)?;
        let draws = accumulate_sample_marginals(
            &pg,
            &test_layout,
            opts.scheme,
            opts.n_fstar,
            &mut rng,
            &mut node_acc,
        )?;
        pairwise_acc += &pg.pairwise;
        total_draws += draws;
        fstar_per_sample = draws;
    }

    for acc in &mut node_acc {
        *acc /= total_draws as f64;
    }
    pairwise_acc /= store.samples.len() as f64;

    let labels = decode(&node_acc, &pairwise_acc, opts.loss);
    Ok(PredictionResult {
        labels,
        marginals: node_acc,
        n_f_samples: store.samples.len(),
        n_fstar_samples: fstar_per_sample,
    })
}

/// Decodes averaged marginals into label sequences.
fn decode(node_avg: &[DMatrix<f64>], pairwise_avg: &DMatrix<f64>, loss: Loss) -> Vec<Vec<usize>> {
    node_avg
        .iter()
        .map(|m| match loss {
            Loss::Hamming => (0..m.nrows())
                .map(|t| {
                    let mut best = 0;
                    for y in 1..m.ncols() {
                        if m[(t, y)] > m[(t, best)] {
                            best = y;
                        }
                    }
                    best
                })
                .collect(),
            Loss::ZeroOne => {
                let log_unary = m.map(|v| v.ln());
                let pots = ChainPotentials {
                    unary: log_unary,
                    pairwise: pairwise_avg.clone(),
                };
                viterbi(&pots)
            }
        })
        .collect()
}

/// Mismatch counts between predicted and reference label sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErrorCounts {
    pub positions: usize,
    pub position_errors: usize,
    pub sequences: usize,
    pub sequence_errors: usize,
}

impl ErrorCounts {
    /// Fraction of mismatched micro-labels.
    pub fn hamming(&self) -> f64 {
        self.position_errors as f64 / self.positions as f64
    }

    /// Fraction of sequences with any mismatch.
    pub fn zero_one(&self) -> f64 {
        self.sequence_errors as f64 / self.sequences as f64
    }
}

/// Counts mismatches between aligned label sequences of any comparable type.
pub fn error_counts<T: PartialEq>(pred: &[Vec<T>], gold: &[Vec<T>]) -> Result<ErrorCounts> {
    if pred.len() != gold.len() {
        return Err(Error::Alignment(format!(
            "{} predicted sequences vs {} reference sequences",
            pred.len(),
            gold.len()
        )));
    }
    let mut counts =
        ErrorCounts { positions: 0, position_errors: 0, sequences: gold.len(), sequence_errors: 0 };
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Alignment(format!(
                "sequence {i}: {} predicted labels vs {} reference labels",
                p.len(),
                g.len()
            )));
        }
        let mut wrong = 0;
        for (a, b) in p.iter().zip(g) {
            if a != b {
                wrong += 1;
            }
        }
        counts.positions += g.len();
        counts.position_errors += wrong;
        if wrong > 0 {
            counts.sequence_errors += 1;
        }
    }
    Ok(counts)
}

/// Hamming and 0/1 error rates of a prediction against a labeled corpus.
pub fn error_rate(pred: &PredictionResult, gold: &Corpus) -> Result<(f64, f64)> {
    let gold_labels: Vec<Vec<usize>> = gold
        .sequences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.labels
                .clone()
                .ok_or_else(|| Error::Invalid(format!("gold sequence {i} is unlabeled")))
        })
        .collect::<Result<_>>()?;
    let counts = error_counts(&pred.labels, &gold_labels)?;
    Ok((counts.hamming(), counts.zero_one()))
}
