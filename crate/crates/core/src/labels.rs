//! Token, label and boundary types plus the conversions between them.
//!
//! Label `0` is human-written text and label `1` is machine-generated text. A
//! boundary index `j` marks the first token of a new segment, so the labels
//! `[0, 0, 1]` have the single boundary `2`.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HUMAN: usize = 0;
pub const MACHINE: usize = 1;
pub const DEFAULT_MAX_LEN: usize = 512;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(pub Vec<String>);

impl TokenSequence {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        Self(tokens.into_iter().map(Into::into).collect())
    }
}

impl Deref for TokenSequence {
    type Target = [String];
    fn deref(&self) -> &[String] {
        &self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSequence(pub Vec<usize>);

impl Deref for LabelSequence {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for LabelSequence {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

impl LabelSequence {
    /// Run-length encoding as `(label, run length)` pairs.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for &label in &self.0 {
            match runs.last_mut() {
                Some((l, count)) if *l == label => *count += 1,
                _ => runs.push((label, 1)),
            }
        }
        runs
    }
}

/// Strictly increasing token positions where the label changes.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoundarySet(Vec<usize>);

impl BoundarySet {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid(format!(
                "boundary indices must be strictly increasing: {indices:?}"
            )));
        }
        if indices.first() == Some(&0) {
            return Err(Error::Invalid(
                "boundary index 0 is not a segment change".into(),
            ));
        }
        Ok(Self(indices))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }
}

impl Deref for BoundarySet {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

/// Authorship pattern of a hybrid document, H = human, M = machine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Pattern {
    HM,
    MH,
    HMH,
    MHM,
    HMHMH,
    MHMHM,
}

impl Pattern {
    pub const ALL: [Pattern; 6] = [
        Pattern::HM,
        Pattern::MH,
        Pattern::HMH,
        Pattern::MHM,
        Pattern::HMHMH,
        Pattern::MHMHM,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::HM => "HM",
            Pattern::MH => "MH",
            Pattern::HMH => "HMH",
            Pattern::MHM => "MHM",
            Pattern::HMHMH => "HMHMH",
            Pattern::MHMHM => "MHMHM",
        }
    }

    /// Label of each segment in order.
    pub fn segment_labels(self) -> Vec<usize> {
        self.as_str()
            .chars()
            .map(|c| if c == 'H' { HUMAN } else { MACHINE })
            .collect()
    }

    pub fn num_segments(self) -> usize {
        self.as_str().len()
    }

    pub fn num_boundaries(self) -> usize {
        self.num_segments() - 1
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pattern {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Invalid(format!("unknown pattern `{s}`")))
    }
}

impl From<Pattern> for String {
    fn from(p: Pattern) -> String {
        p.as_str().to_string()
    }
}

impl TryFrom<String> for Pattern {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// One hybrid document with gold token labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixedTextRecord {
    pub id: String,
    pub tokens: TokenSequence,
    pub gold_labels: LabelSequence,
    pub pattern: Pattern,
    pub embedding_key: Option<String>,
}

impl MixedTextRecord {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn boundaries(&self) -> BoundarySet {
        extract_boundaries(&self.gold_labels)
    }

    /// Key used to find this record's vectors in an embedding store.
    pub fn embedding_key(&self) -> &str {
        self.embedding_key.as_deref().unwrap_or(&self.id)
    }
}

/// Training hyperparameters; defaults are the published configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub batch_size: usize,
    pub epochs: usize,
    pub gradient_clip: f64,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_labels: usize,
    pub weight_decay: f64,
    pub max_len: usize,
    pub llrd_rates: [f64; 4],
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 3,
            gradient_clip: 1.0,
            hidden_dim: 512,
            num_layers: 3,
            num_labels: 2,
            weight_decay: 1e-2,
            max_len: DEFAULT_MAX_LEN,
            llrd_rates: [1e-6, 5e-6, 1e-5, 1e-4],
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be positive");
        }
        if !(self.gradient_clip > 0.0) {
            problems.push("gradient_clip must be positive");
        }
        if self.hidden_dim == 0 || self.num_layers == 0 || self.max_len == 0 {
            problems.push("hidden_dim, num_layers and max_len must be positive");
        }
        if self.num_labels < 2 {
            problems.push("num_labels must be at least 2");
        }
        if !(self.weight_decay >= 0.0) {
            problems.push("weight_decay must be non-negative");
        }
        if self.llrd_rates.iter().any(|&r| !(r > 0.0))
            || self.llrd_rates.windows(2).any(|w| w[0] >= w[1])
        {
            problems.push("llrd_rates must be positive and strictly increasing");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(problems.join("; ")))
        }
    }
}

/// Positions `j >= 1` where `labels[j] != labels[j - 1]`.
pub fn extract_boundaries(labels: &[usize]) -> BoundarySet {
    BoundarySet(
        labels
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0] != w[1])
            .map(|(j, _)| j + 1)
            .collect(),
    )
}

/// Expands per-segment labels into per-token labels.
pub fn segment_labels_to_token_labels(
    segment_labels: &[usize],
    segment_token_counts: &[usize],
) -> Result<LabelSequence> {
    if segment_labels.len() != segment_token_counts.len() {
        return Err(Error::LengthMismatch {
            what: "segment labels vs segment counts",
            expected: segment_labels.len(),
            actual: segment_token_counts.len(),
        });
    }
    if let Some(i) = segment_token_counts.iter().position(|&c| c == 0) {
        return Err(Error::Invalid(format!("segment {i} has zero tokens")));
    }
    Ok(LabelSequence(
        segment_labels
            .iter()
            .zip(segment_token_counts)
            .flat_map(|(&label, &count)| std::iter::repeat_n(label, count))
            .collect(),
    ))
}

/// Rebuilds binary labels from the first label and the boundary positions.
pub fn labels_from_boundaries(
    first_label: usize,
    boundaries: &BoundarySet,
    len: usize,
) -> Result<LabelSequence> {
    if first_label > 1 {
        return Err(Error::Invalid(
            "boundary reconstruction needs binary labels".into(),
        ));
    }
    if boundaries.last().is_some_and(|&b| b >= len) {
        return Err(Error::Invalid(format!(
            "boundary {} outside sequence of length {len}",
            boundaries.last().unwrap()
        )));
    }
    let mut labels = Vec::with_capacity(len);
    let mut current = first_label;
    let mut next = boundaries.iter().peekable();
    for t in 0..len {
        if next.peek() == Some(&&t) {
            current = 1 - current;
            next.next();
        }
        labels.push(current);
    }
    Ok(LabelSequence(labels))
}

/// Checks every record invariant against the default `max_len`.
pub fn validate_record(record: &MixedTextRecord) -> Vec<String> {
    validate_record_with(record, DEFAULT_MAX_LEN)
}

pub fn validate_record_with(record: &MixedTextRecord, max_len: usize) -> Vec<String> {
    let mut violations = Vec::new();
    if record.id.is_empty() {
        violations.push("id empty".to_string());
    }
    if record.tokens.is_empty() {
        violations.push("tokens empty".to_string());
        if !record.gold_labels.is_empty() {
            violations.push("labels/tokens length mismatch".to_string());
        }
        return violations;
    }
    if record.tokens.len() > max_len {
        violations.push(format!(
            "tokens longer than max_len ({} > {max_len})",
            record.tokens.len()
        ));
    }
    if record.gold_labels.len() != record.tokens.len() {
        violations.push("labels/tokens length mismatch".to_string());
    }
    if record.gold_labels.iter().any(|&l| l > MACHINE) {
        violations.push("labels outside {0,1}".to_string());
    }
    let runs: Vec<usize> = record
        .gold_labels
        .runs()
        .into_iter()
        .map(|(l, _)| l)
        .collect();
    if runs != record.pattern.segment_labels() {
        violations.push("pattern/label run mismatch".to_string());
    }
    violations
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn record(pattern: Pattern, labels: Vec<usize>) -> MixedTextRecord {
        MixedTextRecord {
            id: "r".into(),
            tokens: TokenSequence::new((0..labels.len()).map(|i| format!("w{i}"))),
            gold_labels: LabelSequence(labels),
            pattern,
            embedding_key: None,
        }
    }

    #[test]
    fn boundaries_mark_first_token_of_new_segment() {
        assert_eq!(extract_boundaries(&[0, 0, 0, 1, 1, 1]).indices(), &[3]);
        assert!(extract_boundaries(&[0, 0, 0, 0]).is_empty());
        assert_eq!(
            extract_boundaries(&[1, 0, 0, 1, 1, 0]).indices(),
            &[1, 3, 5]
        );
        assert_eq!(extract_boundaries(&[0, 0, 1]).indices(), &[2]);
    }

    #[test]
    fn segment_expansion() {
        assert_eq!(
            segment_labels_to_token_labels(&[0, 1], &[3, 2]).unwrap().0,
            vec![0, 0, 0, 1, 1]
        );
        assert_eq!(
            segment_labels_to_token_labels(&[1], &[4]).unwrap().0,
            vec![1, 1, 1, 1]
        );
        assert_eq!(
            segment_labels_to_token_labels(&[0, 1, 0], &[1, 1, 1])
                .unwrap()
                .0,
            vec![0, 1, 0]
        );
        assert!(matches!(
            segment_labels_to_token_labels(&[0, 1], &[3]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(segment_labels_to_token_labels(&[0, 1], &[3, 0]).is_err());
    }

    #[test]
    fn validation_messages() {
        assert!(validate_record(&record(Pattern::HMH, vec![0, 1, 0])).is_empty());
        assert_eq!(
            validate_record(&record(Pattern::HM, vec![0, 0, 0])),
            vec!["pattern/label run mismatch".to_string()]
        );
        assert_eq!(
            validate_record(&record(Pattern::HM, vec![])),
            vec!["tokens empty".to_string()]
        );
        let mut r = record(Pattern::HM, vec![0, 2]);
        r.tokens.0.push("extra".into());
        let v = validate_record(&r);
        assert!(v.iter().any(|m| m.contains("length mismatch")));
        assert!(v.iter().any(|m| m.contains("outside")));
        assert_eq!(
            validate_record_with(&record(Pattern::HM, vec![0, 1, 1]), 2).len(),
            1
        );
    }

    #[test]
    fn pattern_strings() {
        for p in Pattern::ALL {
            assert_eq!(p.as_str().parse::<Pattern>().unwrap(), p);
            assert_eq!(p.segment_labels().len(), p.num_segments());
        }
        assert!("HX".parse::<Pattern>().is_err());
        assert_eq!(Pattern::MHM.segment_labels(), vec![1, 0, 1]);
    }

    #[test]
    fn boundary_set_rejects_unsorted() {
        assert!(BoundarySet::new(vec![3, 2]).is_err());
        assert!(BoundarySet::new(vec![2, 2]).is_err());
        assert!(BoundarySet::new(vec![0]).is_err());
        assert!(BoundarySet::new(vec![1, 4]).is_ok());
    }

    #[test]
    fn default_hyperparameters_validate() {
        let h = Hyperparameters::default();
        assert!(h.validate().is_ok());
        let bad = Hyperparameters {
            llrd_rates: [1e-4, 1e-5, 1e-6, 1e-3],
            ..h
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn pattern_expansion_has_pattern_boundaries(
            pattern in prop::sample::select(Pattern::ALL.to_vec()),
            counts in prop::collection::vec(1usize..20, 5),
        ) {
            let segs = pattern.segment_labels();
            let labels = segment_labels_to_token_labels(&segs, &counts[..segs.len()]).unwrap();
            prop_assert_eq!(extract_boundaries(&labels).len(), pattern.num_boundaries());
            let runs: Vec<usize> = labels.runs().into_iter().map(|(_, c)| c).collect();
            prop_assert_eq!(&runs[..], &counts[..segs.len()]);
        }

        #[test]
        fn boundaries_round_trip(labels in prop::collection::vec(0usize..2, 1..60)) {
            let b = extract_boundaries(&labels);
            let rebuilt = labels_from_boundaries(labels[0], &b, labels.len()).unwrap();
            prop_assert_eq!(rebuilt.0, labels);
        }
    }
}
