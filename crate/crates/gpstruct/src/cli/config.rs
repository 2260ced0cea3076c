//! Run configuration: a flat key-value text format with dotted keys, plus the
//! CLI override layer.
//!
//! Lines are `key = value`; `#` starts a comment. The writer emits keys in a
//! fixed canonical order so the echoed effective config is byte-stable, and
//! writing then reparsing yields an equal [`RunConfig`].

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::kernels::InputKernel;
use crate::predict::{Loss, Scheme};
use crate::sampler::{HyperPrior, HyperSampling};
use crate::{Error, Result};

/// SE length scale: a fixed value or the median heuristic resolved at
/// training time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaSpec {
    Median,
    Value(f64),
}

impl GammaSpec {
    fn parse(s: &str) -> Result<Self> {
        if s == "median" {
            return Ok(GammaSpec::Median);
        }
        s.parse::<f64>()
            .map(GammaSpec::Value)
            .map_err(|_| Error::Config(format!("kernel.gamma must be a number or \"median\", got {s:?}")))
    }
}

impl std::fmt::Display for GammaSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GammaSpec::Median => write!(f, "median"),
            GammaSpec::Value(v) => write!(f, "{v}"),
        }
    }
}

/// Synthetic-generator feature emission mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    /// One-hot label indicator plus isotropic Gaussian noise.
    OneHot,
    /// Pure noise, carrying no label information.
    Noise,
}

/// Parameters of the synthetic Markov-chain task generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub n_labels: usize,
    pub seq_len: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub noise: f64,
    pub features: FeatureMode,
    /// Diagonal of the transition matrix; off-diagonal mass spread evenly.
    pub self_bias: Option<f64>,
    /// Full row-stochastic transition matrix; mutually exclusive with
    /// `self_bias`. Rows separated by ';', entries by ','.
    pub transition: Option<Vec<Vec<f64>>>,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_labels: 2,
            seq_len: 10,
            n_train: 20,
            n_test: 20,
            noise: 0.2,
            features: FeatureMode::OneHot,
            self_bias: None,
            transition: None,
        }
    }
}

/// Complete configuration of one CLI invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub unlabeled_test: bool,

    pub kernel: InputKernel,
    pub gamma: GammaSpec,
    pub hp: f64,
    pub jitter: f64,

    pub iterations: u64,
    pub thin: u64,
    pub burn_in: f64,
    pub hyper_every: u64,
    pub sample_hypers: HyperSampling,
    pub hyper_proposal_scale: f64,
    pub hyper_prior: HyperPrior,

    pub scheme: Scheme,
    pub n_fstar: usize,
    pub loss: Loss,
    pub write_marginals: bool,

    pub splits: usize,
    pub train_size: usize,
    pub test_size: usize,

    pub synth: SynthParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: None,
            test: None,
            out: None,
            unlabeled_test: false,
            kernel: InputKernel::Linear,
            gamma: GammaSpec::Median,
            hp: 1.0,
            jitter: 1e-4,
            iterations: 10_000,
            thin: 1000,
            burn_in: 1.0 / 3.0,
            hyper_every: 1000,
            sample_hypers: HyperSampling::Off,
            hyper_proposal_scale: 0.1,
            hyper_prior: HyperPrior::default(),
            scheme: Scheme::FstarMap,
            n_fstar: 1,
            loss: Loss::Hamming,
            write_marginals: false,
            splits: 1,
            train_size: 0,
            test_size: 0,
            synth: SynthParams::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for key {key}")))
}

fn parse_transition(value: &str) -> Result<Vec<Vec<f64>>> {
    value
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("invalid transition entry {v:?}")))
                })
                .collect()
        })
        .collect()
}

fn format_transition(rows: &[Vec<f64>]) -> String {
    rows.iter()
        .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join(";")
}

impl RunConfig {
    /// Applies `key = value` lines on top of the current values.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {line:?}", line_no + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("duplicate key {key}")));
            }
            self.apply_one(key, value)?;
        }
        Ok(())
    }

    fn apply_one(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "data.train" => self.data = Some(PathBuf::from(value)),
            "data.test" => self.test = Some(PathBuf::from(value)),
            "data.unlabeled-test" => {
                self.unlabeled_test = match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(Error::Config(format!("{key} must be true or false"))),
                }
            }
            "out.dir" => self.out = Some(PathBuf::from(value)),
            "kernel.type" => {
                self.kernel = match value {
                    "linear" => InputKernel::Linear,
                    "se" => InputKernel::SquaredExponential,
                    _ => return Err(Error::Config(format!("{key} must be linear or se"))),
                }
            }
            "kernel.gamma" => self.gamma = GammaSpec::parse(value)?,
            "kernel.hp" => self.hp = parse_num(key, value)?,
            "kernel.jitter" => self.jitter = parse_num(key, value)?,
            "chain.iterations" => self.iterations = parse_num(key, value)?,
            "chain.thin" => self.thin = parse_num(key, value)?,
            "chain.burn-in" => self.burn_in = parse_num(key, value)?,
            "chain.hyper-every" => self.hyper_every = parse_num(key, value)?,
            "chain.sample-hypers" => {
                self.sample_hypers = match value {
                    "off" => HyperSampling::Off,
                    "prior-whitening" => HyperSampling::PriorWhitening,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key} must be off or prior-whitening"
                        )))
                    }
                }
            }
            "chain.hyper-proposal-scale" => self.hyper_proposal_scale = parse_num(key, value)?,
            "chain.prior.hp-multiplier" => {
                self.hyper_prior.pairwise_multiplier = parse_num(key, value)?
            }
            "chain.prior.hp-shape" => self.hyper_prior.pairwise_shape = parse_num(key, value)?,
            "chain.prior.hp-scale" => self.hyper_prior.pairwise_scale = parse_num(key, value)?,
            "chain.prior.gamma-shape" => {
                self.hyper_prior.length_scale_shape = parse_num(key, value)?
            }
            "chain.prior.gamma-scale" => {
                self.hyper_prior.length_scale_scale = parse_num(key, value)?
            }
            "predict.scheme" => {
                self.scheme = match value {
                    "fstar-map" => Scheme::FstarMap,
                    "fstar-sample" => Scheme::FstarSample,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key} must be fstar-map or fstar-sample"
                        )))
                    }
                }
            }
            "predict.n-fstar" => self.n_fstar = parse_num(key, value)?,
            "predict.write-marginals" => {
                self.write_marginals = match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(Error::Config(format!("{key} must be true or false"))),
                }
            }
            "predict.loss" => {
                self.loss = match value {
                    "hamming" => Loss::Hamming,
                    "zero-one" => Loss::ZeroOne,
                    _ => return Err(Error::Config(format!("{key} must be hamming or zero-one"))),
                }
            }
            "experiment.splits" => self.splits = parse_num(key, value)?,
            "experiment.train-size" => self.train_size = parse_num(key, value)?,
            "experiment.test-size" => self.test_size = parse_num(key, value)?,
            "synth.labels" => self.synth.n_labels = parse_num(key, value)?,
            "synth.len" => self.synth.seq_len = parse_num(key, value)?,
            "synth.train" => self.synth.n_train = parse_num(key, value)?,
            "synth.test" => self.synth.n_test = parse_num(key, value)?,
            "synth.noise" => self.synth.noise = parse_num(key, value)?,
            "synth.features" => {
                self.synth.features = match value {
                    "one-hot" => FeatureMode::OneHot,
                    "noise" => FeatureMode::Noise,
                    _ => return Err(Error::Config(format!("{key} must be one-hot or noise"))),
                }
            }
            "synth.self-bias" => self.synth.self_bias = Some(parse_num(key, value)?),
            "synth.transition" => self.synth.transition = Some(parse_transition(value)?),
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Canonical text form; stable key order, one key per line.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("seed", self.seed.to_string());
        if let Some(p) = &self.data {
            line("data.train", p.display().to_string());
        }
        if let Some(p) = &self.test {
            line("data.test", p.display().to_string());
        }
        line("data.unlabeled-test", self.unlabeled_test.to_string());
        if let Some(p) = &self.out {
            line("out.dir", p.display().to_string());
        }
        line(
            "kernel.type",
            match self.kernel {
                InputKernel::Linear => "linear".into(),
                InputKernel::SquaredExponential => "se".into(),
            },
        );
        line("kernel.gamma", self.gamma.to_string());
        line("kernel.hp", self.hp.to_string());
        line("kernel.jitter", self.jitter.to_string());
        line("chain.iterations", self.iterations.to_string());
        line("chain.thin", self.thin.to_string());
        line("chain.burn-in", self.burn_in.to_string());
        line("chain.hyper-every", self.hyper_every.to_string());
        line(
            "chain.sample-hypers",
            match self.sample_hypers {
                HyperSampling::Off => "off".into(),
                HyperSampling::PriorWhitening => "prior-whitening".into(),
            },
        );
        line("chain.hyper-proposal-scale", self.hyper_proposal_scale.to_string());
        line("chain.prior.hp-multiplier", self.hyper_prior.pairwise_multiplier.to_string());
        line("chain.prior.hp-shape", self.hyper_prior.pairwise_shape.to_string());
        line("chain.prior.hp-scale", self.hyper_prior.pairwise_scale.to_string());
        line("chain.prior.gamma-shape", self.hyper_prior.length_scale_shape.to_string());
        line("chain.prior.gamma-scale", self.hyper_prior.length_scale_scale.to_string());
        line(
            "predict.scheme",
            match self.scheme {
                Scheme::FstarMap => "fstar-map".into(),
                Scheme::FstarSample => "fstar-sample".into(),
            },
        );
        line("predict.n-fstar", self.n_fstar.to_string());
        line("predict.write-marginals", self.write_marginals.to_string());
        line(
            "predict.loss",
            match self.loss {
                Loss::Hamming => "hamming".into(),
                Loss::ZeroOne => "zero-one".into(),
            },
        );
        line("experiment.splits", self.splits.to_string());
        line("experiment.train-size", self.train_size.to_string());
        line("experiment.test-size", self.test_size.to_string());
        line("synth.labels", self.synth.n_labels.to_string());
        line("synth.len", self.synth.seq_len.to_string());
        line("synth.train", self.synth.n_train.to_string());
        line("synth.test", self.synth.n_test.to_string());
        line("synth.noise", self.synth.noise.to_string());
        line(
            "synth.features",
            match self.synth.features {
                FeatureMode::OneHot => "one-hot".into(),
                FeatureMode::Noise => "noise".into(),
            },
        );
        if let Some(b) = self.synth.self_bias {
            line("synth.self-bias", b.to_string());
        }
        if let Some(t) = &self.synth.transition {
            line("synth.transition", format_transition(t));
        }
        out
    }
}
