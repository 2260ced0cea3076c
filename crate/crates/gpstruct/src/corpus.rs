//! Labeled token sequences: parsing, validation, splits, dataset statistics.
//!
//! The on-disk format is line oriented (UTF-8): one token per line, written as
//! whitespace-separated `idx:val` fields followed by the label string; a blank
//! line terminates a sequence. Unlabeled files omit the final field and are
//! parsed with [`ParseOptions::labeled`] set to false. An optional header line
//! `#dim D` declares the feature dimension; otherwise `dim = 1 + max index`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Fixed seed for the median-heuristic pair subsample, so the statistic is
/// reproducible without threading a seed through every call site.
const MEDIAN_SUBSAMPLE_SEED: u64 = 0x6d65_6469_616e;

/// Per-position input features, sparse or dense over a shared dimension.
#[derive(Debug, Clone)]
pub enum FeatureVector {
    /// Sorted (index, value) pairs; indices unique and < dim.
    Sparse { entries: Vec<(u32, f64)>, dim: usize },
    Dense(Vec<f64>),
}

impl FeatureVector {
    /// Builds a sparse vector, validating indices and values.
    pub fn sparse(mut entries: Vec<(u32, f64)>, dim: usize) -> Result<Self> {
        entries.sort_unstable_by_key(|&(i, _)| i);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Invalid(format!("duplicate feature index {}", w[0].0)));
            }
        }
        for &(i, v) in &entries {
            if i as usize >= dim {
                return Err(Error::DimMismatch(format!("feature index {i} >= dim {dim}")));
            }
            if !v.is_finite() {
                return Err(Error::Invalid(format!("non-finite feature value at index {i}")));
            }
        }
        Ok(FeatureVector::Sparse { entries, dim })
    }

    /// Builds a dense vector; all values must be finite.
    pub fn dense(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite feature value".into()));
        }
        Ok(FeatureVector::Dense(values))
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureVector::Sparse { dim, .. } => *dim,
            FeatureVector::Dense(v) => v.len(),
        }
    }

    /// Value at a feature index (0.0 for absent sparse entries).
    pub fn get(&self, index: usize) -> f64 {
        match self {
            FeatureVector::Sparse { entries, .. } => entries
                .binary_search_by_key(&(index as u32), |&(i, _)| i)
                .map(|pos| entries[pos].1)
                .unwrap_or(0.0),
            FeatureVector::Dense(v) => v[index],
        }
    }

    /// Inner product with another vector of the same dimension.
    pub fn dot(&self, other: &FeatureVector) -> f64 {
        match (self, other) {
            (FeatureVector::Sparse { entries: a, .. }, FeatureVector::Sparse { entries: b, .. }) => {
                let (mut i, mut j, mut acc) = (0, 0, 0.0);
                while i < a.len() && j < b.len() {
                    match a[i].0.cmp(&b[j].0) {
                        std::cmp::Ordering::Less => i += 1,
                        std::cmp::Ordering::Greater => j += 1,
                        std::cmp::Ordering::Equal => {
                            acc += a[i].1 * b[j].1;
                            i += 1;
                            j += 1;
                        }
                    }
                }
                acc
            }
            (FeatureVector::Dense(a), FeatureVector::Dense(b)) => {
                a.iter().zip(b).map(|(x, y)| x * y).sum()
            }
            (FeatureVector::Sparse { entries, .. }, FeatureVector::Dense(d))
            | (FeatureVector::Dense(d), FeatureVector::Sparse { entries, .. }) => {
                entries.iter().map(|&(i, v)| v * d[i as usize]).sum()
            }
        }
    }

    /// Squared Euclidean distance ||self - other||^2.
    pub fn sq_dist(&self, other: &FeatureVector) -> f64 {
        // <a,a> - 2<a,b> + <b,b>, computed pairwise to stay exact for sparse data
        match (self, other) {
            (FeatureVector::Sparse { entries: a, .. }, FeatureVector::Sparse { entries: b, .. }) => {
                let (mut i, mut j, mut acc) = (0, 0, 0.0);
                while i < a.len() || j < b.len() {
                    match (a.get(i), b.get(j)) {
                        (Some(&(ia, va)), Some(&(ib, vb))) => match ia.cmp(&ib) {
                            std::cmp::Ordering::Less => {
                                acc += va * va;
                                i += 1;
                            }
                            std::cmp::Ordering::Greater => {
                                acc += vb * vb;
                                j += 1;
                            }
                            std::cmp::Ordering::Equal => {
                                let d = va - vb;
                                acc += d * d;
                                i += 1;
                                j += 1;
                            }
                        },
                        (Some(&(_, va)), None) => {
                            acc += va * va;
                            i += 1;
                        }
                        (None, Some(&(_, vb))) => {
                            acc += vb * vb;
                            j += 1;
                        }
                        (None, None) => unreachable!(),
                    }
                }
                acc
            }
            _ => {
                let dim = self.dim();
                (0..dim)
                    .map(|k| {
                        let d = self.get(k) - other.get(k);
                        d * d
                    })
                    .sum()
            }
        }
    }
}

impl PartialEq for FeatureVector {
    // Semantic equality: same dimension and same value at every index,
    // regardless of sparse/dense representation.
    fn eq(&self, other: &Self) -> bool {
        if self.dim() != other.dim() {
            return false;
        }
        (0..self.dim()).all(|k| self.get(k) == other.get(k))
    }
}

/// One observation chain: features per position, labels when available.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub features: Vec<FeatureVector>,
    pub labels: Option<Vec<usize>>,
}

impl TokenSequence {
    pub fn new(features: Vec<FeatureVector>, labels: Option<Vec<usize>>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptySequence);
        }
        let dim = features[0].dim();
        if features.iter().any(|f| f.dim() != dim) {
            return Err(Error::DimMismatch("feature dims differ within a sequence".into()));
        }
        if let Some(ls) = &labels {
            if ls.len() != features.len() {
                return Err(Error::DimMismatch("label count != position count".into()));
            }
        }
        Ok(TokenSequence { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// A validated dataset: sequences plus the shared label alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sequences: Vec<TokenSequence>,
    pub label_alphabet: Vec<String>,
    pub feature_dim: usize,
}

impl Corpus {
    pub fn new(
        sequences: Vec<TokenSequence>,
        label_alphabet: Vec<String>,
        feature_dim: usize,
    ) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::NoSequences);
        }
        if label_alphabet.len() < 2 {
            return Err(Error::Invalid(format!(
                "label alphabet must have >= 2 labels, got {}",
                label_alphabet.len()
            )));
        }
        let n_labels = label_alphabet.len();
        for seq in &sequences {
            if seq.features.iter().any(|f| f.dim() != feature_dim) {
                return Err(Error::DimMismatch("sequence feature dim != corpus dim".into()));
            }
            if let Some(ls) = &seq.labels {
                if ls.iter().any(|&l| l >= n_labels) {
                    return Err(Error::Invalid("label id out of range".into()));
                }
            }
        }
        Ok(Corpus { sequences, label_alphabet, feature_dim })
    }

    pub fn n_labels(&self) -> usize {
        self.label_alphabet.len()
    }

    /// Total position count over all sequences.
    pub fn total_positions(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.sequences.iter().all(|s| s.labels.is_some())
    }

    /// Feature vector at global position index (layout order).
    pub fn position(&self, mut idx: usize) -> &FeatureVector {
        for seq in &self.sequences {
            if idx < seq.len() {
                return &seq.features[idx];
            }
            idx -= seq.len();
        }
        panic!("position index out of range");
    }
}

/// One train/test experiment with disjoint sequence sets.
#[derive(Debug, Clone)]
pub struct ExperimentSplit {
    pub train: Corpus,
    pub test: Corpus,
    pub split_id: usize,
    pub seed: u64,
}

/// Controls for [`parse_corpus`].
#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    /// When false, lines carry no trailing label field.
    pub unlabeled: bool,
    /// Fixed alphabet; labels outside it are an error. Inferred when `None`.
    pub label_alphabet: Option<Vec<String>>,
    /// Declared feature dimension, as if the file carried a `#dim` header.
    /// A conflicting header in the file is an error.
    pub feature_dim: Option<usize>,
}

/// Parses the line-oriented data format into a validated [`Corpus`].
///
/// The label alphabet is inferred in order of first appearance unless supplied.
/// For unlabeled input an alphabet must be supplied (prediction needs |L|).
pub fn parse_corpus<R: BufRead>(reader: R, opts: &ParseOptions) -> Result<Corpus> {
    let mut declared_dim: Option<usize> = opts.feature_dim;
    let mut max_index: i64 = -1;
    let mut alphabet: Vec<String> = Vec::new();
    let mut alphabet_fixed = false;
    if let Some(given) = &opts.label_alphabet {
        alphabet = given.clone();
        alphabet_fixed = true;
    }
    let mut label_ids: BTreeMap<String, usize> =
        alphabet.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();

    // raw token rows: (entries, label id)
    let mut current: Vec<(Vec<(u32, f64)>, Option<usize>)> = Vec::new();
    let mut raw_sequences: Vec<Vec<(Vec<(u32, f64)>, Option<usize>)>> = Vec::new();

    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = line_no + 1;
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix("#dim") {
            let d: usize = rest.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid #dim header: {trimmed:?}"),
            })?;
            if let Some(expected) = opts.feature_dim {
                if d != expected {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("file declares dim {d}, caller expects {expected}"),
                    });
                }
            }
            declared_dim = Some(d);
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        if trimmed.is_empty() {
            if !current.is_empty() {
                raw_sequences.push(std::mem::take(&mut current));
            }
            continue;
        }

        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let (feat_fields, label) = if opts.unlabeled {
            (&fields[..], None)
        } else {
            let (last, init) = fields.split_last().expect("non-empty line has fields");
            if last.contains(':') {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected label as final field, got feature {last:?}"),
                });
            }
            let id = match label_ids.get(*last) {
                Some(&id) => id,
                None if alphabet_fixed => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("unknown label {last:?}"),
                    })
                }
                None => {
                    let id = alphabet.len();
                    alphabet.push((*last).to_string());
                    label_ids.insert((*last).to_string(), id);
                    id
                }
            };
            (init, Some(id))
        };

        let mut entries = Vec::with_capacity(feat_fields.len());
        for field in feat_fields {
            let (idx_s, val_s) = field.split_once(':').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("expected idx:val field, got {field:?}"),
            })?;
            let idx: u32 = idx_s.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid feature index {idx_s:?}"),
            })?;
            let val: f64 = val_s.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid feature value {val_s:?}"),
            })?;
            if let Some(d) = declared_dim {
                if idx as usize >= d {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("feature index {idx} >= declared dim {d}"),
                    });
                }
            }
            max_index = max_index.max(idx as i64);
            entries.push((idx, val));
        }
        current.push((entries, label));
    }
    if !current.is_empty() {
        raw_sequences.push(current);
    }
    if raw_sequences.is_empty() {
        return Err(Error::NoSequences);
    }

    let dim = declared_dim.unwrap_or((max_index + 1).max(1) as usize);
    let mut sequences = Vec::with_capacity(raw_sequences.len());
    for rows in raw_sequences {
        let mut features = Vec::with_capacity(rows.len());
        let mut labels = if opts.unlabeled { None } else { Some(Vec::with_capacity(rows.len())) };
        for (entries, label) in rows {
            features.push(FeatureVector::sparse(entries, dim)?);
            if let (Some(ls), Some(l)) = (&mut labels, label) {
                ls.push(l);
            }
        }
        sequences.push(TokenSequence::new(features, labels)?);
    }

    if alphabet.len() < 2 {
        return Err(Error::Invalid(format!(
            "label alphabet must have >= 2 labels, got {} (supply one for unlabeled data)",
            alphabet.len()
        )));
    }
    Corpus::new(sequences, alphabet, dim)
}

/// Writes a corpus in the external data format. Inverse of [`parse_corpus`]
/// up to semantic equality (dense vectors serialize their nonzero entries).
pub fn serialize_corpus(corpus: &Corpus) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "#dim {}", corpus.feature_dim);
    for seq in &corpus.sequences {
        for (t, fv) in seq.features.iter().enumerate() {
            let mut first = true;
            let mut push = |out: &mut String, i: usize, v: f64| {
                if !first {
                    out.push(' ');
                }
                let _ = write!(out, "{i}:{v}");
                first = false;
            };
            match fv {
                FeatureVector::Sparse { entries, .. } => {
                    for &(i, v) in entries {
                        push(&mut out, i as usize, v);
                    }
                }
                FeatureVector::Dense(vals) => {
                    for (i, &v) in vals.iter().enumerate() {
                        if v != 0.0 {
                            push(&mut out, i, v);
                        }
                    }
                }
            }
            if let Some(ls) = &seq.labels {
                if !first {
                    out.push(' ');
                }
                out.push_str(&corpus.label_alphabet[ls[t]]);
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Writes predicted labels, one per line, blank line between sequences.
pub fn serialize_labels(labels: &[Vec<usize>], alphabet: &[String]) -> String {
    let mut out = String::new();
    for seq in labels {
        for &l in seq {
            out.push_str(&alphabet[l]);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Extracts the label column of a file: the final whitespace-separated field
/// of each token line. Accepts both full data-format files and labels-only
/// files (as written by [`serialize_labels`]); sequences separated by blanks.
pub fn parse_label_column(text: &str) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        let last = trimmed.split_whitespace().next_back().expect("non-empty line");
        if last.contains(':') {
            return Err(Error::Parse {
                line: line_no + 1,
                msg: format!("line has no label field (last field {last:?} looks like a feature)"),
            });
        }
        current.push(last.to_string());
    }
    if !current.is_empty() {
        out.push(current);
    }
    if out.is_empty() {
        return Err(Error::NoSequences);
    }
    Ok(out)
}

/// Draws `n_splits` experiments with pairwise-disjoint train sets; test sets
/// come from the leftover pool and may overlap across splits. Deterministic
/// in `seed`.
pub fn split_experiments(
    corpus: &Corpus,
    n_splits: usize,
    train_size: usize,
    test_size: usize,
    seed: u64,
) -> Result<Vec<ExperimentSplit>> {
    let n = corpus.sequences.len();
    if n_splits == 0 || train_size == 0 || test_size == 0 {
        return Err(Error::Invalid("n_splits, train_size, test_size must be positive".into()));
    }
    if n_splits * train_size + test_size > n {
        return Err(Error::InsufficientData(format!(
            "{n_splits} splits x {train_size} train + {test_size} test > {n} sequences"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let pool = &order[n_splits * train_size..];

    let sub_corpus = |ids: &[usize]| -> Result<Corpus> {
        Corpus::new(
            ids.iter().map(|&i| corpus.sequences[i].clone()).collect(),
            corpus.label_alphabet.clone(),
            corpus.feature_dim,
        )
    };

    let mut splits = Vec::with_capacity(n_splits);
    for split_id in 0..n_splits {
        let train_ids = &order[split_id * train_size..(split_id + 1) * train_size];
        let mut pool_copy = pool.to_vec();
        pool_copy.shuffle(&mut rng);
        let test_ids = &pool_copy[..test_size];
        splits.push(ExperimentSplit {
            train: sub_corpus(train_ids)?,
            test: sub_corpus(test_ids)?,
            split_id,
            seed,
        });
    }
    Ok(splits)
}

/// Median of squared Euclidean distances over position pairs. With more than
/// `max_pairs` pairs, a seeded uniform subsample of that many pairs is used.
pub fn median_pairwise_distance(corpus: &Corpus, max_pairs: usize) -> Result<f64> {
    let positions: Vec<&FeatureVector> =
        corpus.sequences.iter().flat_map(|s| s.features.iter()).collect();
    let n = positions.len();
    if n < 2 {
        return Err(Error::InsufficientData("need >= 2 positions for the median heuristic".into()));
    }
    let total_pairs = n * (n - 1) / 2;
    let mut dists: Vec<f64>;
    if total_pairs <= max_pairs {
        dists = Vec::with_capacity(total_pairs);
        for i in 0..n {
            for j in (i + 1)..n {
                dists.push(positions[i].sq_dist(positions[j]));
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(MEDIAN_SUBSAMPLE_SEED);
        dists = Vec::with_capacity(max_pairs);
        for _ in 0..max_pairs {
            let i = rng.gen_range(0..n);
            let j = loop {
                let j = rng.gen_range(0..n);
                if j != i {
                    break j;
                }
            };
            dists.push(positions[i].sq_dist(positions[j]));
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let m = dists.len();
    Ok(if m % 2 == 1 { dists[m / 2] } else { 0.5 * (dists[m / 2 - 1] + dists[m / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse_str(s: &str) -> Result<Corpus> {
        parse_corpus(s.as_bytes(), &ParseOptions::default())
    }

    #[test]
    fn parses_two_line_file() {
        let c = parse_corpus("0:1 2:1 B\n1:1 I\n\n".as_bytes(), &ParseOptions::default()).unwrap();
        assert_eq!(c.sequences.len(), 1);
        assert_eq!(c.sequences[0].len(), 2);
        assert_eq!(c.label_alphabet, vec!["B".to_string(), "I".to_string()]);
        assert_eq!(c.feature_dim, 3);
        assert_eq!(c.sequences[0].labels, Some(vec![0, 1]));
    }

    #[test]
    fn empty_stream_is_an_error() {
        match parse_str("") {
            Err(Error::NoSequences) => {}
            other => panic!("expected NoSequences, got {other:?}"),
        }
        match parse_str("\n\n  \n") {
            Err(Error::NoSequences) => {}
            other => panic!("expected NoSequences, got {other:?}"),
        }
    }

    #[test]
    fn header_declares_dim_and_bounds_indices() {
        let c = parse_str("#dim 5\n0:1 A\n1:1 B\n").unwrap();
        assert_eq!(c.feature_dim, 5);
        match parse_str("#dim 2\n3:1 A\n0:1 B\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected Parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_label_with_fixed_alphabet_is_an_error() {
        let opts = ParseOptions {
            label_alphabet: Some(vec!["A".into(), "B".into()]),
            ..ParseOptions::default()
        };
        assert!(parse_corpus("0:1 A\n0:1 C\n".as_bytes(), &opts).is_err());
    }

    #[test]
    fn malformed_field_is_an_error() {
        assert!(matches!(parse_str("0:1 junkfield:x A\n1:1 B\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_str("abc B\n0:1 I\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn unlabeled_mode_requires_alphabet() {
        let opts = ParseOptions { unlabeled: true, ..ParseOptions::default() };
        assert!(parse_corpus("0:1\n1:1\n".as_bytes(), &opts).is_err());
        let opts = ParseOptions {
            unlabeled: true,
            label_alphabet: Some(vec!["A".into(), "B".into()]),
            ..ParseOptions::default()
        };
        let c = parse_corpus("0:1\n1:1\n".as_bytes(), &opts).unwrap();
        assert!(c.sequences[0].labels.is_none());
    }

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let text: String = (0..10).map(|i| format!("{i}:1 A\n{i}:2 B\n\n")).collect();
        let c = parse_str(&text).unwrap();
        let splits = split_experiments(&c, 2, 3, 2, 7).unwrap();
        assert_eq!(splits.len(), 2);
        let key = |s: &TokenSequence| format!("{:?}", s.features[0]);
        let train0: Vec<String> = splits[0].train.sequences.iter().map(key).collect();
        let train1: Vec<String> = splits[1].train.sequences.iter().map(key).collect();
        assert!(train0.iter().all(|k| !train1.contains(k)), "train sets overlap");
        for s in &splits {
            let train: Vec<String> = s.train.sequences.iter().map(key).collect();
            for t in &s.test.sequences {
                assert!(!train.contains(&key(t)), "train/test overlap within split");
            }
        }
        let again = split_experiments(&c, 2, 3, 2, 7).unwrap();
        for (a, b) in splits.iter().zip(&again) {
            assert_eq!(a.train, b.train);
            assert_eq!(a.test, b.test);
        }
    }

    #[test]
    fn split_insufficient_data_errors() {
        let text: String = (0..5).map(|i| format!("{i}:1 A\n{i}:2 B\n\n")).collect();
        let c = parse_str(&text).unwrap();
        assert!(matches!(
            split_experiments(&c, 3, 2, 1, 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn median_single_pair() {
        let c = parse_str("#dim 1\n0:0 A\n0:2 B\n").unwrap();
        assert_eq!(median_pairwise_distance(&c, 1000).unwrap(), 4.0);
    }

    #[test]
    fn median_identical_positions_is_zero() {
        let c = parse_str("0:1 A\n0:1 B\n0:1 A\n").unwrap();
        assert_eq!(median_pairwise_distance(&c, 1000).unwrap(), 0.0);
    }

    #[test]
    fn median_matches_brute_force_and_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 4;
        let mut seqs = Vec::new();
        for _ in 0..5 {
            let t = rng.gen_range(1..4);
            let feats = (0..t)
                .map(|_| {
                    FeatureVector::dense((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                        .unwrap()
                })
                .collect();
            seqs.push(TokenSequence::new(feats, Some(vec![0; t])).unwrap());
        }
        let c = Corpus::new(seqs, vec!["A".into(), "B".into()], dim).unwrap();

        // brute force over all pairs with a direct double loop
        let positions: Vec<&FeatureVector> =
            c.sequences.iter().flat_map(|s| s.features.iter()).collect();
        let mut dists = Vec::new();
        for i in 0..positions.len() {
            for j in (i + 1)..positions.len() {
                let d: f64 = (0..dim)
                    .map(|k| {
                        let d = positions[i].get(k) - positions[j].get(k);
                        d * d
                    })
                    .sum();
                dists.push(d);
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = dists.len();
        let expected =
            if m % 2 == 1 { dists[m / 2] } else { 0.5 * (dists[m / 2 - 1] + dists[m / 2]) };
        let got = median_pairwise_distance(&c, usize::MAX).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected.max(1.0));

        // permutation invariance with subsampling disabled
        let mut rev = c.clone();
        rev.sequences.reverse();
        let got_rev = median_pairwise_distance(&rev, usize::MAX).unwrap();
        assert_eq!(got, got_rev);
    }

    fn arb_corpus(
    ) -> impl Strategy<Value = (Vec<Vec<(std::collections::BTreeMap<u32, i32>, usize)>>, usize, usize)>
    {
        (2usize..4, 3usize..8).prop_flat_map(|(n_labels, dim)| {
            let rows = prop::collection::vec(
                (prop::collection::btree_map(0u32..6, -5i32..5, 0..4), 0usize..8),
                1..5,
            );
            (prop::collection::vec(rows, 1..5), Just(n_labels), Just(dim))
        })
    }

    proptest! {
        // serialize -> parse is the identity on valid corpora
        #[test]
        fn round_trip((seqs, n_labels, dim) in arb_corpus()) {
            let alphabet: Vec<String> = (0..n_labels).map(|i| format!("L{i}")).collect();
            let mut sequences = Vec::new();
            for rows in &seqs {
                let feats: Vec<FeatureVector> = rows.iter().map(|(m, _)| {
                    let entries: Vec<(u32, f64)> = m.iter()
                        .filter(|&(&i, _)| (i as usize) < dim)
                        .map(|(&i, &v)| (i, v as f64))
                        .filter(|&(_, v)| v != 0.0)
                        .collect();
                    FeatureVector::sparse(entries, dim).unwrap()
                }).collect();
                let labels: Vec<usize> = rows.iter().map(|(_, l)| l % n_labels).collect();
                sequences.push(TokenSequence::new(feats, Some(labels)).unwrap());
            }
            let corpus = Corpus::new(sequences, alphabet, dim).unwrap();
            let text = serialize_corpus(&corpus);
            let opts = ParseOptions {
                label_alphabet: Some(corpus.label_alphabet.clone()),
                ..ParseOptions::default()
            };
            let reparsed = parse_corpus(text.as_bytes(), &opts).unwrap();
            prop_assert_eq!(reparsed, corpus);
        }
    }
}
