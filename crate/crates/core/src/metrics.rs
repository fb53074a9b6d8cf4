//! Boundary metrics (F1@K, boundary MAE) and token-level classification
//! metrics, plus dataset-level aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{extract_boundaries, BoundarySet, LabelSequence, MixedTextRecord, MACHINE};

/// Default number of boundaries scored by F1@K.
pub const DEFAULT_K: usize = 3;

/// Minimum change probability for a position to count as a boundary candidate.
pub const DEFAULT_BOUNDARY_THRESHOLD: f64 = 0.5;

/// Bucket keys used for per-boundary-count breakdowns. `"3"` holds every
/// record with three or more gold boundaries.
pub const BUCKETS: [&str; 4] = ["1", "2", "3", "all"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredBoundary {
    pub index: usize,
    pub confidence: f64,
}

/// What boundary candidates are ranked by.
#[derive(Clone, Copy, Debug)]
pub enum BoundaryEvidence<'a> {
    /// Hard labels: every label change has confidence 1.
    Labels(&'a [usize]),
    /// `change[t - 1] = P(y_{t-1} != y_t)` for `t = 1..n`.
    ChangeProbabilities(&'a [f64]),
    /// Transitions of decoded labels, each scored by its change probability
    /// (same indexing as above). Every transition is a candidate.
    ScoredLabels {
        labels: &'a [usize],
        change: &'a [f64],
    },
}

/// Up to `k` boundary candidates by decreasing confidence, ties to the lower
/// index. Raw change probabilities must exceed `threshold` to count.
pub fn top_k_boundaries(
    evidence: BoundaryEvidence<'_>,
    k: usize,
    threshold: f64,
) -> Vec<ScoredBoundary> {
    let mut candidates: Vec<ScoredBoundary> = match evidence {
        BoundaryEvidence::Labels(labels) => extract_boundaries(labels)
            .iter()
            .map(|&index| ScoredBoundary {
                index,
                confidence: 1.0,
            })
            .collect(),
        BoundaryEvidence::ChangeProbabilities(p) => p
            .iter()
            .enumerate()
            .map(|(i, &confidence)| ScoredBoundary {
                index: i + 1,
                confidence,
            })
            .filter(|c| c.confidence > threshold)
            .collect(),
        BoundaryEvidence::ScoredLabels { labels, change } => extract_boundaries(labels)
            .iter()
            .map(|&index| ScoredBoundary {
                index,
                confidence: change.get(index - 1).copied().unwrap_or(0.0),
            })
            .collect(),
    };
    candidates.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });
    candidates.truncate(k);
    candidates
}

/// `2 |top_k ∩ gt| / (|top_k| + |gt|)` over the first `k` entries of `top_k`;
/// `1.0` when both are empty.
pub fn f1_at_k(top_k: &[usize], ground_truth: &[usize], k: usize) -> f64 {
    f1_at_k_with_tolerance(top_k, ground_truth, k, 0)
}

/// As [`f1_at_k`], but a predicted boundary matches an unmatched gold boundary
/// within `tolerance` tokens.
pub fn f1_at_k_with_tolerance(
    top_k: &[usize],
    ground_truth: &[usize],
    k: usize,
    tolerance: usize,
) -> f64 {
    let top = &top_k[..top_k.len().min(k)];
    if top.is_empty() && ground_truth.is_empty() {
        return 1.0;
    }
    let mut used = vec![false; ground_truth.len()];
    let mut hits = 0usize;
    for &p in top {
        let best = ground_truth
            .iter()
            .enumerate()
            .filter(|(i, &g)| !used[*i] && p.abs_diff(g) <= tolerance)
            .min_by_key(|(_, &g)| p.abs_diff(g));
        if let Some((i, _)) = best {
            used[i] = true;
            hits += 1;
        }
    }
    2.0 * hits as f64 / (top.len() + ground_truth.len()) as f64
}

/// Mean absolute boundary displacement.
///
/// Both lists are sorted and paired in order. When the counts differ, each
/// unpaired index contributes its distance to the nearest index of the other
/// list, or to position 0 if the other list is empty. The mean is taken over
/// `max(|predicted|, |gold|)` terms.
pub fn boundary_mae(predicted: &[usize], gold: &[usize]) -> Result<f64> {
    if predicted.is_empty() && gold.is_empty() {
        return Err(Error::Invalid(
            "boundary MAE is undefined for two empty lists".into(),
        ));
    }
    let mut p = predicted.to_vec();
    let mut g = gold.to_vec();
    p.sort_unstable();
    g.sort_unstable();
    let paired = p.len().min(g.len());
    let mut total: f64 = p.iter().zip(&g).map(|(&a, &b)| a.abs_diff(b) as f64).sum();
    let (extra, other) = if p.len() > g.len() {
        (&p[paired..], &g)
    } else {
        (&g[paired..], &p)
    };
    for &e in extra {
        let nearest = other.iter().map(|&o| e.abs_diff(o)).min().unwrap_or(e);
        total += nearest as f64;
    }
    Ok(total / p.len().max(g.len()) as f64)
}

/// Binary confusion counts with label 1 as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn from_labels(pred: &[usize], gold: &[usize]) -> Result<Self> {
        if pred.len() != gold.len() {
            return Err(Error::LengthMismatch {
                what: "predicted vs gold labels",
                expected: gold.len(),
                actual: pred.len(),
            });
        }
        let mut m = Self::default();
        for (&p, &g) in pred.iter().zip(gold) {
            match (p == MACHINE, g == MACHINE) {
                (true, true) => m.tp += 1,
                (true, false) => m.fp += 1,
                (false, true) => m.fn_ += 1,
                (false, false) => m.tn += 1,
            }
        }
        Ok(m)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(&mut self, other: &Self) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub mcc: f64,
    pub kappa: f64,
    /// Metrics whose denominator vanished and were set to 0.
    pub degenerate: Vec<String>,
}

fn ratio(num: f64, den: f64, name: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        if !flags.iter().any(|f| f == name) {
            flags.push(name.to_string());
        }
        0.0
    } else {
        num / den
    }
}

impl TokenReport {
    pub fn from_confusion(m: ConfusionMatrix) -> Self {
        let (tp, fp, fn_, tn) = (m.tp as f64, m.fp as f64, m.fn_ as f64, m.tn as f64);
        let n = tp + fp + fn_ + tn;
        let mut flags = Vec::new();
        let accuracy = ratio(tp + tn, n, "accuracy", &mut flags);
        let precision = ratio(tp, tp + fp, "precision", &mut flags);
        let recall = ratio(tp, tp + fn_, "recall", &mut flags);
        let f1 = ratio(
            2.0 * precision * recall,
            precision + recall,
            "f1",
            &mut flags,
        );
        let neg_precision = ratio(tn, tn + fn_, "precision", &mut flags);
        let neg_recall = ratio(tn, tn + fp, "recall", &mut flags);
        let neg_f1 = ratio(
            2.0 * neg_precision * neg_recall,
            neg_precision + neg_recall,
            "f1",
            &mut flags,
        );
        let mcc_den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        let mcc = ratio(tp * tn - fp * fn_, mcc_den, "mcc", &mut flags);
        let expected = if n > 0.0 {
            ((tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn)) / (n * n)
        } else {
            1.0
        };
        let kappa = ratio(accuracy - expected, 1.0 - expected, "kappa", &mut flags);
        Self {
            confusion: m,
            accuracy,
            precision,
            recall,
            f1,
            macro_precision: (precision + neg_precision) / 2.0,
            macro_recall: (recall + neg_recall) / 2.0,
            macro_f1: (f1 + neg_f1) / 2.0,
            mcc,
            kappa,
            degenerate: flags,
        }
    }
}

/// Accuracy, precision, recall, F1 (class 1 and macro), MCC and Cohen's kappa.
pub fn token_metrics(pred: &[usize], gold: &[usize]) -> Result<TokenReport> {
    Ok(TokenReport::from_confusion(ConfusionMatrix::from_labels(
        pred, gold,
    )?))
}

/// Decoded labels for one record plus its ranked boundary candidates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub labels: LabelSequence,
    pub top_k: Vec<ScoredBoundary>,
}

impl Prediction {
    /// Prediction whose boundary ranking comes from the hard labels.
    pub fn from_labels(labels: LabelSequence, k: usize) -> Self {
        let top_k = top_k_boundaries(
            BoundaryEvidence::Labels(&labels),
            k,
            DEFAULT_BOUNDARY_THRESHOLD,
        );
        Self { labels, top_k }
    }

    pub fn boundaries(&self) -> BoundarySet {
        extract_boundaries(&self.labels)
    }

    pub fn top_k_indices(&self) -> Vec<usize> {
        self.top_k.iter().map(|b| b.index).collect()
    }
}

/// Anything that labels records.
pub trait Predictor {
    fn predict(&self, record: &MixedTextRecord, k: usize) -> Result<Prediction>;
}

/// Replays the gold labels.
#[derive(Clone, Copy, Debug, Default)]
pub struct GoldReplay;

impl Predictor for GoldReplay {
    fn predict(&self, record: &MixedTextRecord, k: usize) -> Result<Prediction> {
        Ok(Prediction::from_labels(record.gold_labels.clone(), k))
    }
}

fn bucket(num_gold_boundaries: usize) -> Option<&'static str> {
    match num_gold_boundaries {
        0 => None,
        1 => Some("1"),
        2 => Some("2"),
        _ => Some("3"),
    }
}

/// Sum and count, so partial reports can be combined exactly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Mean {
    pub sum: f64,
    pub count: usize,
}

impl Mean {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    pub fn value(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    pub fn merge(&mut self, other: &Self) {
        self.sum += other.sum;
        self.count += other.count;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Granularity of boundary indices.
    pub unit: String,
    pub k: usize,
    pub records: usize,
    /// Per-record boundary MAE, averaged over records, keyed by bucket.
    pub mae: BTreeMap<String, Mean>,
    /// Per-record F1@K averaged over records, keyed by bucket.
    pub f1_at_k: BTreeMap<String, Mean>,
    pub token: TokenReport,
}

impl MetricsReport {
    fn empty(k: usize) -> Self {
        Self {
            unit: "token".into(),
            k,
            ..Default::default()
        }
    }

    /// Overall boundary MAE.
    pub fn overall_mae(&self) -> Option<f64> {
        self.mae.get("all").and_then(Mean::value)
    }

    pub fn mae_for(&self, bucket: &str) -> Option<f64> {
        self.mae.get(bucket).and_then(Mean::value)
    }

    pub fn f1_for(&self, bucket: &str) -> Option<f64> {
        self.f1_at_k.get(bucket).and_then(Mean::value)
    }

    /// Folds another report over disjoint records into this one.
    pub fn merge(&mut self, other: &MetricsReport) {
        self.records += other.records;
        for (key, m) in &other.mae {
            self.mae.entry(key.clone()).or_default().merge(m);
        }
        for (key, m) in &other.f1_at_k {
            self.f1_at_k.entry(key.clone()).or_default().merge(m);
        }
        let mut confusion = self.token.confusion;
        confusion.merge(&other.token.confusion);
        self.token = TokenReport::from_confusion(confusion);
    }

    fn add_record(&mut self, prediction: &Prediction, record: &MixedTextRecord) -> Result<()> {
        let gold = record.boundaries();
        let confusion = ConfusionMatrix::from_labels(&prediction.labels, &record.gold_labels)?;
        let mut total = self.token.confusion;
        total.merge(&confusion);
        self.token.confusion = total;
        self.records += 1;

        let predicted = prediction.boundaries();
        let keys: Vec<&str> = bucket(gold.len()).into_iter().chain(["all"]).collect();
        if !(predicted.is_empty() && gold.is_empty()) {
            let mae = boundary_mae(&predicted, &gold)?;
            for key in &keys {
                self.mae.entry(key.to_string()).or_default().push(mae);
            }
        }
        let f1 = f1_at_k(&prediction.top_k_indices(), &gold, self.k);
        for key in &keys {
            self.f1_at_k.entry(key.to_string()).or_default().push(f1);
        }
        Ok(())
    }

    /// Human-readable report.
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "records: {}  (boundary unit: {}, K = {})",
            self.records, self.unit, self.k
        );
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<12}{:>10}{:>10}{:>10}{:>10}",
            "metric", "Bry=1", "Bry=2", "Bry=3+", "All"
        );
        let row = |name: &str, get: &dyn Fn(&str) -> Option<f64>| {
            let mut line = format!("{name:<12}");
            for b in BUCKETS {
                let _ = write!(line, "{:>10}", fmt(get(b)));
            }
            line
        };
        let _ = writeln!(
            out,
            "{}",
            row(&format!("F1@{}", self.k), &|b| self.f1_for(b))
        );
        let _ = writeln!(out, "{}", row("MAE", &|b| self.mae_for(b)));
        let _ = writeln!(
            out,
            "{}",
            row("records", &|b| self.f1_at_k.get(b).map(|m| m.count as f64))
        );
        let _ = writeln!(out);
        let t = &self.token;
        for (name, v) in [
            ("accuracy", t.accuracy),
            ("precision", t.precision),
            ("recall", t.recall),
            ("f1", t.f1),
            ("macro_f1", t.macro_f1),
            ("mcc", t.mcc),
            ("kappa", t.kappa),
        ] {
            let _ = writeln!(out, "{name:<12}{v:>10.4}");
        }
        if !t.degenerate.is_empty() {
            let _ = writeln!(out, "degenerate (set to 0): {}", t.degenerate.join(", "));
        }
        out
    }

    /// `key=value` lines in a fixed order.
    pub fn to_key_values(&self) -> String {
        let mut kv: Vec<(String, String)> = vec![
            ("unit".into(), self.unit.clone()),
            ("k".into(), self.k.to_string()),
            ("records".into(), self.records.to_string()),
        ];
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        for b in BUCKETS {
            kv.push((format!("f1_at_k.{b}"), opt(self.f1_for(b))));
            kv.push((format!("mae.{b}"), opt(self.mae_for(b))));
            kv.push((
                format!("count.{b}"),
                self.f1_at_k.get(b).map_or(0, |m| m.count).to_string(),
            ));
        }
        let t = &self.token;
        for (name, v) in [
            ("accuracy", t.accuracy),
            ("precision", t.precision),
            ("recall", t.recall),
            ("f1", t.f1),
            ("macro_precision", t.macro_precision),
            ("macro_recall", t.macro_recall),
            ("macro_f1", t.macro_f1),
            ("mcc", t.mcc),
            ("kappa", t.kappa),
        ] {
            kv.push((format!("token.{name}"), format!("{v:.6}")));
        }
        kv.push(("token.degenerate".into(), t.degenerate.join(",")));
        let mut out = String::new();
        for (k, v) in kv {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

/// Scores existing predictions against gold records, pairing them by position.
pub fn evaluate_predictions(
    predictions: &[Prediction],
    gold: &[MixedTextRecord],
    k: usize,
) -> Result<MetricsReport> {
    if gold.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if predictions.len() != gold.len() {
        return Err(Error::LengthMismatch {
            what: "predictions vs gold records",
            expected: gold.len(),
            actual: predictions.len(),
        });
    }
    let mut report = MetricsReport::empty(k);
    for (p, r) in predictions.iter().zip(gold) {
        report.add_record(p, r)?;
    }
    report.token = TokenReport::from_confusion(report.token.confusion);
    Ok(report)
}

/// Predicts every record and aggregates: MAE and F1@K averaged over records
/// (per bucket and overall), token metrics micro-averaged over tokens.
pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &P,
    dataset: &[MixedTextRecord],
    k: usize,
) -> Result<MetricsReport> {
    let predictions = dataset
        .iter()
        .map(|r| predictor.predict(r, k))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(&predictions, dataset, k)
}
