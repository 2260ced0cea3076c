//! Exact inference on linear chains.
//!
//! Potentials live in the log domain throughout: the unary table holds the
//! per-position latent values, the pairwise table the (globally tied) label
//! transition latents, shared by every adjacent position pair. The joint
//! score of a label sequence is the clique sum Σ_t unary[t][y_t] +
//! Σ_t pairwise[y_t][y_{t+1}] (T-1 pairwise terms), and the distribution is
//! that score exponentiated and normalized over all |L|^T sequences.

use nalgebra::DMatrix;

use crate::kernels::LatentLayout;
use crate::math::logsumexp;
use crate::{Error, Result};

/// Log-domain potential tables for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPotentials {
    /// T x |L|, entry (t, y) is the unary latent for position t, label y.
    pub unary: DMatrix<f64>,
    /// |L| x |L|, entry (y, y') is the tied pairwise latent; identical for
    /// every position pair.
    pub pairwise: DMatrix<f64>,
}

impl ChainPotentials {
    pub fn new(unary: DMatrix<f64>, pairwise: DMatrix<f64>) -> Result<Self> {
        let n_labels = unary.ncols();
        if unary.nrows() == 0 {
            return Err(Error::EmptySequence);
        }
        if pairwise.nrows() != n_labels || pairwise.ncols() != n_labels {
            return Err(Error::DimMismatch(format!(
                "pairwise table {}x{} does not match |L| = {n_labels}",
                pairwise.nrows(),
                pairwise.ncols()
            )));
        }
        if unary.iter().chain(pairwise.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite potential entry".into()));
        }
        Ok(ChainPotentials { unary, pairwise })
    }

    pub fn len(&self) -> usize {
        self.unary.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.unary.nrows() == 0
    }

    pub fn n_labels(&self) -> usize {
        self.unary.ncols()
    }

    /// Joint clique score of one label sequence.
    pub fn joint_score(&self, labels: &[usize]) -> f64 {
        let mut s = 0.0;
        for (t, &y) in labels.iter().enumerate() {
            s += self.unary[(t, y)];
            if t + 1 < labels.len() {
                s += self.pairwise[(y, labels[t + 1])];
            }
        }
        s
    }
}

/// Exact posterior marginals of the chain distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTables {
    /// T x |L| node marginals; rows sum to 1.
    pub node: DMatrix<f64>,
    /// Per adjacent pair t: |L| x |L| edge marginals; each sums to 1.
    pub edge: Vec<DMatrix<f64>>,
}

/// Gathers the potential tables of one sequence out of the flat latent vector.
pub fn potentials_from_latents(
    f: &[f64],
    layout: &LatentLayout,
    sequence_index: usize,
) -> Result<ChainPotentials> {
    if f.len() != layout.total() {
        return Err(Error::DimMismatch(format!(
            "latent vector has {} entries, layout expects {}",
            f.len(),
            layout.total()
        )));
    }
    if sequence_index >= layout.n_sequences() {
        return Err(Error::Invalid(format!(
            "sequence index {sequence_index} out of range ({} sequences)",
            layout.n_sequences()
        )));
    }
    let t_len = layout.sequence_len(sequence_index);
    let n_labels = layout.n_labels();
    let unary = DMatrix::from_fn(t_len, n_labels, |t, y| {
        f[layout.unary_index(sequence_index, t, y)]
    });
    let pairwise =
        DMatrix::from_fn(n_labels, n_labels, |a, b| f[layout.pairwise_index(a, b)]);
    ChainPotentials::new(unary, pairwise)
}

/// Log-domain forward recursion; alpha[(t, y)] = log Σ over prefixes ending
/// in label y at position t.
fn forward(pots: &ChainPotentials) -> DMatrix<f64> {
    let (t_len, n_labels) = (pots.len(), pots.n_labels());
    let mut alpha = DMatrix::zeros(t_len, n_labels);
    for y in 0..n_labels {
        alpha[(0, y)] = pots.unary[(0, y)];
    }
    let mut scratch = vec![0.0; n_labels];
    for t in 1..t_len {
        for y in 0..n_labels {
            for (prev, s) in scratch.iter_mut().enumerate() {
                *s = alpha[(t - 1, prev)] + pots.pairwise[(prev, y)];
            }
            alpha[(t, y)] = logsumexp(&scratch) + pots.unary[(t, y)];
        }
    }
    alpha
}

/// Backward recursion; beta[(t, y)] = log Σ over suffixes given label y at t.
fn backward(pots: &ChainPotentials) -> DMatrix<f64> {
    let (t_len, n_labels) = (pots.len(), pots.n_labels());
    let mut beta = DMatrix::zeros(t_len, n_labels);
    let mut scratch = vec![0.0; n_labels];
    for t in (0..t_len.saturating_sub(1)).rev() {
        for y in 0..n_labels {
            for (next, s) in scratch.iter_mut().enumerate() {
                *s = pots.pairwise[(y, next)] + pots.unary[(t + 1, next)] + beta[(t + 1, next)];
            }
            beta[(t, y)] = logsumexp(&scratch);
        }
    }
    beta
}

/// log Σ_{y' ∈ L^T} exp(joint score of y'), by forward recursion.
pub fn log_partition(pots: &ChainPotentials) -> f64 {
    let alpha = forward(pots);
    let last: Vec<f64> = (0..pots.n_labels()).map(|y| alpha[(pots.len() - 1, y)]).collect();
    logsumexp(&last)
}

/// log p(labels | potentials); always <= 0.
pub fn sequence_log_likelihood(pots: &ChainPotentials, labels: &[usize]) -> Result<f64> {
    if labels.len() != pots.len() {
        return Err(Error::DimMismatch(format!(
            "{} labels for {} positions",
            labels.len(),
            pots.len()
        )));
    }
    if labels.iter().any(|&y| y >= pots.n_labels()) {
        return Err(Error::Invalid("label id out of range".into()));
    }
    Ok(pots.joint_score(labels) - log_partition(pots))
}

/// Exact node and edge posterior marginals via forward-backward.
pub fn marginals(pots: &ChainPotentials) -> MarginalTables {
    let (t_len, n_labels) = (pots.len(), pots.n_labels());
    let alpha = forward(pots);
    let beta = backward(pots);
    let last: Vec<f64> = (0..n_labels).map(|y| alpha[(t_len - 1, y)]).collect();
    let log_z = logsumexp(&last);

    let node = DMatrix::from_fn(t_len, n_labels, |t, y| {
        (alpha[(t, y)] + beta[(t, y)] - log_z).exp()
    });
    let mut edge = Vec::with_capacity(t_len.saturating_sub(1));
    for t in 0..t_len.saturating_sub(1) {
        edge.push(DMatrix::from_fn(n_labels, n_labels, |a, b| {
            (alpha[(t, a)]
                + pots.pairwise[(a, b)]
                + pots.unary[(t + 1, b)]
                + beta[(t + 1, b)]
                - log_z)
                .exp()
        }));
    }
    MarginalTables { node, edge }
}

/// Max-score label sequence; ties broken toward the lowest label id at every
/// backtrack step, so the result is deterministic.
pub fn viterbi(pots: &ChainPotentials) -> Vec<usize> {
    let (t_len, n_labels) = (pots.len(), pots.n_labels());
    let mut delta = DMatrix::zeros(t_len, n_labels);
    let mut back = vec![vec![0usize; n_labels]; t_len];
    for y in 0..n_labels {
        delta[(0, y)] = pots.unary[(0, y)];
    }
    for t in 1..t_len {
        for y in 0..n_labels {
            let mut best = f64::NEG_INFINITY;
            let mut best_prev = 0;
            for prev in 0..n_labels {
                let s = delta[(t - 1, prev)] + pots.pairwise[(prev, y)];
                // strict > keeps the lowest prev on ties
                if s > best {
                    best = s;
                    best_prev = prev;
                }
            }
            delta[(t, y)] = best + pots.unary[(t, y)];
            back[t][y] = best_prev;
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut y = 0;
    for cand in 0..n_labels {
        if delta[(t_len - 1, cand)] > best {
            best = delta[(t_len - 1, cand)];
            y = cand;
        }
    }
    let mut path = vec![0usize; t_len];
    path[t_len - 1] = y;
    for t in (1..t_len).rev() {
        y = back[t][y];
        path[t - 1] = y;
    }
    path
}

/// Guard for [`brute_force`]: |L|^T may not exceed this.
pub const BRUTE_FORCE_CAP: usize = 1_000_000;

/// Exhaustive-enumeration oracle: log-partition, marginals, and a maximizing
/// sequence (lexicographically first among ties), computed independently of
/// the dynamic-programming routines.
pub fn brute_force(pots: &ChainPotentials) -> Result<(f64, MarginalTables, Vec<usize>)> {
    let (t_len, n_labels) = (pots.len(), pots.n_labels());
    let n_seqs = (n_labels as f64).powi(t_len as i32);
    if !(n_seqs <= BRUTE_FORCE_CAP as f64) {
        return Err(Error::Invalid(format!(
            "brute force over {n_labels}^{t_len} sequences exceeds cap {BRUTE_FORCE_CAP}"
        )));
    }
    let n_seqs = n_seqs as usize;

    let mut scores = Vec::with_capacity(n_seqs);
    let mut labels = vec![0usize; t_len];
    let mut best_score = f64::NEG_INFINITY;
    let mut best_labels = labels.clone();
    for idx in 0..n_seqs {
        // decode idx into a label sequence, most-significant digit first so
        // enumeration order is lexicographic
        let mut rem = idx;
        for t in (0..t_len).rev() {
            labels[t] = rem % n_labels;
            rem /= n_labels;
        }
        let s = pots.joint_score(&labels);
        if s > best_score {
            best_score = s;
            best_labels.copy_from_slice(&labels);
        }
        scores.push(s);
    }
    let log_z = logsumexp(&scores);

    let mut node = DMatrix::zeros(t_len, n_labels);
    let mut edge = vec![DMatrix::zeros(n_labels, n_labels); t_len.saturating_sub(1)];
    for (idx, &s) in scores.iter().enumerate() {
        let w = (s - log_z).exp();
        let mut rem = idx;
        for t in (0..t_len).rev() {
            labels[t] = rem % n_labels;
            rem /= n_labels;
        }
        for (t, &y) in labels.iter().enumerate() {
            node[(t, y)] += w;
            if t + 1 < t_len {
                edge[t][(y, labels[t + 1])] += w;
            }
        }
    }
    Ok((log_z, MarginalTables { node, edge }, best_labels))
}
