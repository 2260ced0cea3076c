//! Joint input-output kernel and the block-structured Gram matrix.
//!
//! The covariance over all latent variables is block diagonal: the unary part
//! consists of |L| identical copies of the input-kernel Gram matrix over all
//! token positions, and the pairwise part is a scaled identity. Everything
//! downstream exploits this: one ΣT x ΣT factorization serves every label
//! block, and the pairwise block is never materialized.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, FeatureVector};
use crate::{Error, Result};

/// Input-only kernel over feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKernel {
    Linear,
    SquaredExponential,
}

/// Kernel hyperparameters.
///
/// `length_scale` is the squared-exponential bandwidth (exp(-||x-x'||^2 / γ));
/// `pairwise_scale` multiplies the pairwise identity block; `jitter` is added
/// to the input-Gram diagonal before factorization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub input_kernel: InputKernel,
    pub length_scale: f64,
    pub pairwise_scale: f64,
    pub jitter: f64,
}

impl KernelConfig {
    pub fn linear() -> Self {
        KernelConfig {
            input_kernel: InputKernel::Linear,
            length_scale: 1.0,
            pairwise_scale: 1.0,
            jitter: 1e-4,
        }
    }

    pub fn squared_exponential(length_scale: f64) -> Self {
        KernelConfig {
            input_kernel: InputKernel::SquaredExponential,
            length_scale,
            pairwise_scale: 1.0,
            jitter: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_kernel == InputKernel::SquaredExponential
            && !(self.length_scale > 0.0 && self.length_scale.is_finite())
        {
            return Err(Error::Invalid(format!(
                "length scale must be positive, got {}",
                self.length_scale
            )));
        }
        if !(self.pairwise_scale > 0.0 && self.pairwise_scale.is_finite()) {
            return Err(Error::Invalid(format!(
                "pairwise scale must be positive, got {}",
                self.pairwise_scale
            )));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::Invalid(format!("jitter must be >= 0, got {}", self.jitter)));
        }
        Ok(())
    }
}

/// Bijection between clique identities and flat latent-vector indices.
///
/// Unary latents are label-major: label y owns the contiguous index block
/// `[y * ΣT, (y+1) * ΣT)`, within which positions follow corpus order. The
/// |L|^2 pairwise latents sit after all unary blocks, row-major in
/// (prev-label, next-label).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentLayout {
    /// Cumulative position offset of each sequence.
    offsets: Vec<usize>,
    total_positions: usize,
    n_labels: usize,
}

impl LatentLayout {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut offsets = Vec::with_capacity(corpus.sequences.len());
        let mut acc = 0;
        for seq in &corpus.sequences {
            offsets.push(acc);
            acc += seq.len();
        }
        LatentLayout { offsets, total_positions: acc, n_labels: corpus.n_labels() }
    }

    pub fn n_sequences(&self) -> usize {
        self.offsets.len()
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn total_positions(&self) -> usize {
        self.total_positions
    }

    pub fn sequence_offset(&self, seq: usize) -> usize {
        self.offsets[seq]
    }

    pub fn sequence_len(&self, seq: usize) -> usize {
        let end = if seq + 1 < self.offsets.len() {
            self.offsets[seq + 1]
        } else {
            self.total_positions
        };
        end - self.offsets[seq]
    }

    pub fn n_unary(&self) -> usize {
        self.total_positions * self.n_labels
    }

    pub fn n_pairwise(&self) -> usize {
        self.n_labels * self.n_labels
    }

    pub fn total(&self) -> usize {
        self.n_unary() + self.n_pairwise()
    }

    /// Flat index of the unary latent for (sequence, position, label).
    #[inline]
    pub fn unary_index(&self, seq: usize, t: usize, label: usize) -> usize {
        debug_assert!(t < self.sequence_len(seq));
        debug_assert!(label < self.n_labels);
        label * self.total_positions + self.offsets[seq] + t
    }

    /// Flat index of the pairwise latent for the (prev, next) label pair.
    #[inline]
    pub fn pairwise_index(&self, prev: usize, next: usize) -> usize {
        debug_assert!(prev < self.n_labels && next < self.n_labels);
        self.n_unary() + prev * self.n_labels + next
    }
}

/// Input-kernel value k_x(x, x').
pub fn kx_eval(x: &FeatureVector, x2: &FeatureVector, config: &KernelConfig) -> Result<f64> {
    if x.dim() != x2.dim() {
        return Err(Error::DimMismatch(format!(
            "kernel arguments have dims {} and {}",
            x.dim(),
            x2.dim()
        )));
    }
    Ok(match config.input_kernel {
        InputKernel::Linear => x.dot(x2),
        InputKernel::SquaredExponential => (-x.sq_dist(x2) / config.length_scale).exp(),
    })
}

/// Unary kernel: the input kernel gated by label agreement.
pub fn unary_kernel(
    label: usize,
    x: &FeatureVector,
    label2: usize,
    x2: &FeatureVector,
    config: &KernelConfig,
) -> Result<f64> {
    if label != label2 {
        return Ok(0.0);
    }
    kx_eval(x, x2, config)
}

/// Pairwise kernel: scaled indicator of componentwise pair equality.
pub fn pairwise_kernel(pair: (usize, usize), pair2: (usize, usize), pairwise_scale: f64) -> f64 {
    if pair == pair2 {
        pairwise_scale
    } else {
        0.0
    }
}

/// The assembled block-structured Gram matrix and its reusable factor.
///
/// Holds only the ΣT x ΣT input-kernel block (plus jitter) and its Cholesky
/// factor; the implied full covariance is |L| copies of that block followed by
/// `pairwise_scale * I`.
#[derive(Debug, Clone)]
pub struct GramBlocks {
    input_gram: DMatrix<f64>,
    input_chol: Cholesky<f64, Dyn>,
    pairwise_scale: f64,
    layout: LatentLayout,
}

/// Builds the input-kernel Gram matrix over all corpus positions (in layout
/// order), adds jitter to the diagonal, and factorizes it once.
///
/// A factorization failure is reported as [`Error::Factorization`] so callers
/// can reject the hyperparameter proposal that produced it.
pub fn assemble_gram(corpus: &Corpus, config: &KernelConfig) -> Result<GramBlocks> {
    config.validate()?;
    let layout = LatentLayout::from_corpus(corpus);
    let n = layout.total_positions();
    let positions: Vec<&FeatureVector> =
        corpus.sequences.iter().flat_map(|s| s.features.iter()).collect();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kx_eval(positions[i], positions[j], config)?;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
        gram[(i, i)] += config.jitter;
    }
    GramBlocks::from_parts(gram, config.pairwise_scale, layout)
}

impl GramBlocks {
    /// Wraps an already-built input Gram matrix (jitter included).
    pub fn from_parts(
        input_gram: DMatrix<f64>,
        pairwise_scale: f64,
        layout: LatentLayout,
    ) -> Result<Self> {
        let input_chol = Cholesky::new(input_gram.clone()).ok_or_else(|| {
            Error::Factorization(format!("input Gram of size {} not positive definite", input_gram.nrows()))
        })?;
        Ok(GramBlocks { input_gram, input_chol, pairwise_scale, layout })
    }

    /// Same input block, different pairwise scale. Cheap relative to
    /// refactorizing; used by hyperparameter moves that leave γ unchanged.
    pub fn with_pairwise_scale(&self, pairwise_scale: f64) -> GramBlocks {
        GramBlocks {
            input_gram: self.input_gram.clone(),
            input_chol: self.input_chol.clone(),
            pairwise_scale,
            layout: self.layout.clone(),
        }
    }

    pub fn layout(&self) -> &LatentLayout {
        &self.layout
    }

    pub fn input_gram(&self) -> &DMatrix<f64> {
        &self.input_gram
    }

    /// Lower-triangular factor of the input block.
    pub fn input_chol_l(&self) -> DMatrix<f64> {
        self.input_chol.l()
    }

    pub fn pairwise_scale(&self) -> f64 {
        self.pairwise_scale
    }

    /// Solves `input_gram * x = rhs` using the cached factor.
    pub fn solve_input(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.input_chol.solve(rhs)
    }

    /// Colors a standard-normal vector into a prior draw: per label block
    /// `f_block = L ν_block`, pairwise tail `f = sqrt(pairwise_scale) ν`.
    pub fn color(&self, nu: &DVector<f64>) -> DVector<f64> {
        assert_eq!(nu.len(), self.layout.total(), "whitened vector length mismatch");
        let n = self.layout.total_positions();
        let l = self.input_chol.l_dirty();
        let mut f = DVector::zeros(self.layout.total());
        for block in 0..self.layout.n_labels() {
            let nu_block = nu.rows(block * n, n);
            let mut out = f.rows_mut(block * n, n);
            // lower-triangular matvec; l_dirty's upper part is untouched garbage
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..=i {
                    acc += l[(i, j)] * nu_block[j];
                }
                out[i] = acc;
            }
        }
        let sqrt_hp = self.pairwise_scale.sqrt();
        let base = self.layout.n_unary();
        for k in 0..self.layout.n_pairwise() {
            f[base + k] = sqrt_hp * nu[base + k];
        }
        f
    }

    /// Inverse of [`GramBlocks::color`]: per label block `ν_block = L^{-1}
    /// f_block`, pairwise tail divided by sqrt(pairwise_scale).
    pub fn whiten(&self, f: &DVector<f64>) -> DVector<f64> {
        assert_eq!(f.len(), self.layout.total(), "latent vector length mismatch");
        let n = self.layout.total_positions();
        let l = self.input_chol.l_dirty();
        let mut nu = DVector::zeros(self.layout.total());
        for block in 0..self.layout.n_labels() {
            let f_block = f.rows(block * n, n);
            let mut out = nu.rows_mut(block * n, n);
            // forward substitution against the lower triangle
            for i in 0..n {
                let mut acc = f_block[i];
                for j in 0..i {
                    acc -= l[(i, j)] * out[j];
                }
                out[i] = acc / l[(i, i)];
            }
        }
        let inv_sqrt_hp = 1.0 / self.pairwise_scale.sqrt();
        let base = self.layout.n_unary();
        for k in 0..self.layout.n_pairwise() {
            nu[base + k] = inv_sqrt_hp * f[base + k];
        }
        nu
    }

    /// Quadratic form f^T K^{-1} f via block solves.
    pub fn quad_form(&self, f: &DVector<f64>) -> f64 {
        assert_eq!(f.len(), self.layout.total());
        let n = self.layout.total_positions();
        let mut acc = 0.0;
        for block in 0..self.layout.n_labels() {
            let f_block = DVector::from(f.rows(block * n, n));
            let solved = self.input_chol.solve(&f_block);
            acc += f_block.dot(&solved);
        }
        let base = self.layout.n_unary();
        for k in 0..self.layout.n_pairwise() {
            acc += f[base + k] * f[base + k] / self.pairwise_scale;
        }
        acc
    }
}

/// Cap on the dense covariance size [`materialize_full_gram`] will build.
pub const MATERIALIZE_CAP: usize = 4096;

/// Test oracle: the dense covariance over all latents, assembled from the
/// blocks. Guarded so it is never used at scale.
pub fn materialize_full_gram(gram: &GramBlocks) -> Result<DMatrix<f64>> {
    let layout = gram.layout();
    let total = layout.total();
    if total > MATERIALIZE_CAP {
        return Err(Error::Invalid(format!(
            "refusing to materialize {total} x {total} covariance (cap {MATERIALIZE_CAP})"
        )));
    }
    let n = layout.total_positions();
    let mut full = DMatrix::zeros(total, total);
    for block in 0..layout.n_labels() {
        let b = block * n;
        full.view_mut((b, b), (n, n)).copy_from(gram.input_gram());
    }
    let base = layout.n_unary();
    for k in 0..layout.n_pairwise() {
        full[(base + k, base + k)] = gram.pairwise_scale();
    }
    Ok(full)
}
