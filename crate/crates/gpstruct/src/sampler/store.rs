//! Posterior sample storage and checkpointing.
//!
//! The store is a versioned JSON container holding the thinned latent
//! samples, the hyperparameter trace, and the full sampler state needed to
//! resume the chain bit-exactly. Checkpoint writes are atomic (temp file +
//! rename) so an interrupted run never leaves a truncated store behind.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::kernels::KernelConfig;
use crate::sampler::ChainConfig;
use crate::{Error, Result};

pub const STORE_MAGIC: &str = "gpstruct-store";
pub const STORE_VERSION: u32 = 1;

/// One thinned posterior sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSample {
    pub iteration: u64,
    pub log_lik: f64,
    /// Hyperparameters in force when the sample was recorded.
    pub pairwise_scale: f64,
    pub length_scale: f64,
    pub f: Vec<f64>,
}

/// One hyperparameter transition attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperTraceEntry {
    pub iteration: u64,
    pub pairwise_scale: f64,
    pub length_scale: f64,
    pub accepted: bool,
}

/// Serializable snapshot of the sampler, sufficient for exact resumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredState {
    pub f: Vec<f64>,
    pub config: KernelConfig,
    pub log_lik: f64,
    pub iteration: u64,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
    pub rng_stream: u64,
}

/// Shape summary of the training corpus, checked again at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFingerprint {
    pub n_sequences: usize,
    pub total_positions: usize,
    pub feature_dim: usize,
    pub label_alphabet: Vec<String>,
}

impl CorpusFingerprint {
    pub fn of(corpus: &Corpus) -> Self {
        CorpusFingerprint {
            n_sequences: corpus.sequences.len(),
            total_positions: corpus.total_positions(),
            feature_dim: corpus.feature_dim,
            label_alphabet: corpus.label_alphabet.clone(),
        }
    }

    pub fn check(&self, corpus: &Corpus) -> Result<()> {
        if *self != CorpusFingerprint::of(corpus) {
            return Err(Error::StoreFormat(
                "training corpus does not match the one recorded in the store".into(),
            ));
        }
        Ok(())
    }
}

/// Thinned samples, hyperparameter trace, and final state of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStore {
    pub magic: String,
    pub version: u32,
    pub kernel_base: KernelConfig,
    pub chain_config: ChainConfig,
    pub fingerprint: CorpusFingerprint,
    pub samples: Vec<StoredSample>,
    pub hyper_trace: Vec<HyperTraceEntry>,
    pub final_state: StoredState,
}

impl SampleStore {
    /// Serialized bytes; deterministic for a given store.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let store: SampleStore = serde_json::from_slice(&bytes)?;
        if store.magic != STORE_MAGIC {
            return Err(Error::StoreFormat(format!(
                "bad magic {:?}, expected {STORE_MAGIC:?}",
                store.magic
            )));
        }
        if store.version != STORE_VERSION {
            return Err(Error::StoreFormat(format!(
                "unsupported store version {} (this build reads {STORE_VERSION})",
                store.version
            )));
        }
        store.validate()?;
        Ok(store)
    }

    /// Structural invariants: stamps strictly increasing with spacing `thin`.
    pub fn validate(&self) -> Result<()> {
        let thin = self.chain_config.thin;
        for pair in self.samples.windows(2) {
            if pair[1].iteration <= pair[0].iteration {
                return Err(Error::StoreFormat("sample stamps not increasing".into()));
            }
            if pair[1].iteration - pair[0].iteration != thin {
                return Err(Error::StoreFormat(format!(
                    "sample stamp spacing {} != thin {thin}",
                    pair[1].iteration - pair[0].iteration
                )));
            }
        }
        Ok(())
    }
}

/// Drops the first ceil(fraction * count) samples (and the same share of the
/// hyperparameter trace), per the burn-in convention.
pub fn burn_in_filter(store: &SampleStore, fraction: f64) -> Result<SampleStore> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Invalid(format!("burn-in fraction must be in [0, 1), got {fraction}")));
    }
    if store.samples.is_empty() {
        return Err(Error::InsufficientData("empty sample store".into()));
    }
    let drop_samples = (fraction * store.samples.len() as f64).ceil() as usize;
    let drop_hyper = (fraction * store.hyper_trace.len() as f64).ceil() as usize;
    let mut out = store.clone();
    out.samples.drain(..drop_samples.min(out.samples.len()));
    out.hyper_trace.drain(..drop_hyper.min(out.hyper_trace.len()));
    Ok(out)
}
