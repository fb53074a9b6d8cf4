//! Linear-chain conditional random field over per-token emission scores.
//!
//! A labeling `y` of an `n`-token sequence scores
//!
//! ```text
//! S(x, y) = start[y_0] + sum_t emit[t][y_t] + sum_t trans[y_t][y_t+1] + end[y_{n-1}]
//! ```
//!
//! and `P(y | x) = exp(S(x, y) - log Z(x))`. Every dynamic program runs in log
//! space. Emission matrices may be right-padded; padded rows are ignored.

use crate::error::{Error, Result};
use crate::labels::LabelSequence;
use crate::scalar::{log_sum_exp, Scalar};
use ndarray::{Array1, Array2, Array3, ArrayView1};

/// Position-independent transition scores plus start/end scores.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams<T> {
    /// `transitions[[a, b]]` scores label `a` followed by label `b`.
    pub transitions: Array2<T>,
    pub start_scores: Array1<T>,
    pub end_scores: Array1<T>,
}

impl<T: Scalar> CrfParams<T> {
    pub fn zeros(num_labels: usize) -> Self {
        Self {
            transitions: Array2::zeros((num_labels, num_labels)),
            start_scores: Array1::zeros(num_labels),
            end_scores: Array1::zeros(num_labels),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.start_scores.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.num_labels();
        if self.transitions.dim() != (l, l) || self.end_scores.len() != l {
            return Err(Error::Shape(format!(
                "crf transitions {:?}, start {}, end {}",
                self.transitions.dim(),
                l,
                self.end_scores.len()
            )));
        }
        let finite = self.transitions.iter().all(|v| v.is_finite())
            && self.start_scores.iter().all(|v| v.is_finite())
            && self.end_scores.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("crf parameters".into()));
        }
        Ok(())
    }
}

/// Per-token label scores with a right-padding mask.
#[derive(Clone, Debug, PartialEq)]
pub struct EmissionScores<T> {
    /// `scores[[t, y]]` scores label `y` at position `t`.
    pub scores: Array2<T>,
    /// `true` for real tokens. Always a run of `true` followed by `false`.
    mask: Vec<bool>,
    len: usize,
}

impl<T: Scalar> EmissionScores<T> {
    /// Unpadded scores: every row is a real token.
    pub fn new(scores: Array2<T>) -> Self {
        let n = scores.nrows();
        Self {
            scores,
            mask: vec![true; n],
            len: n,
        }
    }

    pub fn with_mask(scores: Array2<T>, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != scores.nrows() {
            return Err(Error::LengthMismatch {
                what: "mask vs emission rows",
                expected: scores.nrows(),
                actual: mask.len(),
            });
        }
        let len = mask.iter().take_while(|&&m| m).count();
        if mask[len..].iter().any(|&m| m) {
            return Err(Error::NonPrefixMask);
        }
        Ok(Self { scores, mask, len })
    }

    /// Right-pads to `rows` rows with zero scores.
    pub fn padded(&self, rows: usize) -> Self {
        let n = self.scores.nrows().max(rows);
        let mut scores = Array2::zeros((n, self.num_labels()));
        scores
            .slice_mut(ndarray::s![..self.scores.nrows(), ..])
            .assign(&self.scores);
        let mut mask = self.mask.clone();
        mask.resize(n, false);
        Self {
            scores,
            mask,
            len: self.len,
        }
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Number of real (unmasked) positions.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_labels(&self) -> usize {
        self.scores.ncols()
    }

    fn row(&self, t: usize) -> ArrayView1<'_, T> {
        self.scores.row(t)
    }
}

fn check<T: Scalar>(em: &EmissionScores<T>, crf: &CrfParams<T>) -> Result<usize> {
    crf.validate()?;
    if em.num_labels() != crf.num_labels() {
        return Err(Error::Shape(format!(
            "emissions have {} labels, crf has {}",
            em.num_labels(),
            crf.num_labels()
        )));
    }
    if em.is_empty() {
        return Err(Error::EmptyMask);
    }
    if em
        .scores
        .rows()
        .into_iter()
        .take(em.len())
        .any(|r| r.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite("emission scores".into()));
    }
    Ok(em.len())
}

fn check_labels<T: Scalar>(em: &EmissionScores<T>, labels: &[usize]) -> Result<()> {
    if labels.len() != em.len() {
        return Err(Error::LengthMismatch {
            what: "labels vs unmasked positions",
            expected: em.len(),
            actual: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= em.num_labels()) {
        return Err(Error::Invalid(format!("label {bad} out of range")));
    }
    Ok(())
}

/// Unnormalized score `S(x, y)` over the unmasked positions.
pub fn score_sequence<T: Scalar>(
    em: &EmissionScores<T>,
    crf: &CrfParams<T>,
    labels: &[usize],
) -> Result<T> {
    check(em, crf)?;
    check_labels(em, labels)?;
    let mut score = crf.start_scores[labels[0]] + em.scores[[0, labels[0]]];
    for t in 1..labels.len() {
        score = score + crf.transitions[[labels[t - 1], labels[t]]];
        score = score + em.scores[[t, labels[t]]];
    }
    Ok(score + crf.end_scores[labels[labels.len() - 1]])
}

/// Forward log-messages: `alpha[[t, y]]` is the log-sum of all prefixes ending in `y` at `t`.
fn forward<T: Scalar>(em: &EmissionScores<T>, crf: &CrfParams<T>, len: usize) -> Array2<T> {
    let l = crf.num_labels();
    let mut alpha = Array2::zeros((len, l));
    for y in 0..l {
        alpha[[0, y]] = crf.start_scores[y] + em.scores[[0, y]];
    }
    let mut buf = vec![T::zero(); l];
    for t in 1..len {
        let emit = em.row(t);
        for b in 0..l {
            for a in 0..l {
                buf[a] = alpha[[t - 1, a]] + crf.transitions[[a, b]];
            }
            alpha[[t, b]] = log_sum_exp(&buf) + emit[b];
        }
    }
    alpha
}

/// Backward log-messages: `beta[[t, y]]` is the log-sum of all suffixes after `y` at `t`.
fn backward<T: Scalar>(em: &EmissionScores<T>, crf: &CrfParams<T>, len: usize) -> Array2<T> {
    let l = crf.num_labels();
    let mut beta = Array2::zeros((len, l));
    for y in 0..l {
        beta[[len - 1, y]] = crf.end_scores[y];
    }
    let mut buf = vec![T::zero(); l];
    for t in (0..len - 1).rev() {
        let emit = em.row(t + 1);
        for a in 0..l {
            for b in 0..l {
                buf[b] = crf.transitions[[a, b]] + emit[b] + beta[[t + 1, b]];
            }
            beta[[t, a]] = log_sum_exp(&buf);
        }
    }
    beta
}

fn log_z_from_alpha<T: Scalar>(alpha: &Array2<T>, crf: &CrfParams<T>) -> T {
    let last = alpha.row(alpha.nrows() - 1);
    let terms: Vec<T> = last
        .iter()
        .zip(crf.end_scores.iter())
        .map(|(&a, &e)| a + e)
        .collect();
    log_sum_exp(&terms)
}

/// `log Z(x)` by the forward algorithm.
pub fn log_partition<T: Scalar>(em: &EmissionScores<T>, crf: &CrfParams<T>) -> Result<T> {
    let len = check(em, crf)?;
    Ok(log_z_from_alpha(&forward(em, crf, len), crf))
}

/// Negative log-likelihood `log Z(x) - S(x, y)`.
pub fn nll_loss<T: Scalar>(
    em: &EmissionScores<T>,
    crf: &CrfParams<T>,
    labels: &[usize],
) -> Result<T> {
    Ok(log_partition(em, crf)? - score_sequence(em, crf, labels)?)
}

/// Posterior marginals from forward-backward.
#[derive(Clone, Debug)]
pub struct Marginals<T> {
    /// `unary[[t, y]] = P(y_t = y | x)`; padded rows are zero.
    pub unary: Array2<T>,
    /// `pairwise[[t, a, b]] = P(y_t = a, y_t+1 = b | x)`; padded entries are zero.
    pub pairwise: Array3<T>,
    pub log_z: T,
}

impl<T: Scalar> Marginals<T> {
    /// Probability that the label changes between `t - 1` and `t`.
    pub fn change_probability(&self, t: usize) -> T {
        let l = self.unary.ncols();
        let mut p = T::zero();
        for a in 0..l {
            for b in 0..l {
                if a != b {
                    p += self.pairwise[[t - 1, a, b]];
                }
            }
        }
        p
    }
}

pub fn posterior_marginals<T: Scalar>(
    em: &EmissionScores<T>,
    crf: &CrfParams<T>,
) -> Result<Marginals<T>> {
    let len = check(em, crf)?;
    let n = em.scores.nrows();
    let l = crf.num_labels();
    let alpha = forward(em, crf, len);
    let beta = backward(em, crf, len);
    let log_z = log_z_from_alpha(&alpha, crf);

    let mut unary = Array2::zeros((n, l));
    for t in 0..len {
        for y in 0..l {
            unary[[t, y]] = (alpha[[t, y]] + beta[[t, y]] - log_z).exp();
        }
    }
    let mut pairwise = Array3::zeros((n.saturating_sub(1), l, l));
    for t in 0..len.saturating_sub(1) {
        for a in 0..l {
            for b in 0..l {
                pairwise[[t, a, b]] = (alpha[[t, a]]
                    + crf.transitions[[a, b]]
                    + em.scores[[t + 1, b]]
                    + beta[[t + 1, b]]
                    - log_z)
                    .exp();
            }
        }
    }
    Ok(Marginals {
        unary,
        pairwise,
        log_z,
    })
}

/// Gradients of the negative log-likelihood.
#[derive(Clone, Debug)]
pub struct CrfGradients<T> {
    /// Same shape as the emission matrix; padded rows are zero.
    pub emissions: Array2<T>,
    pub crf: CrfParams<T>,
}

/// Gradient of `nll_loss`: posterior expectations minus gold indicator counts.
pub fn grad_nll<T: Scalar>(
    em: &EmissionScores<T>,
    crf: &CrfParams<T>,
    labels: &[usize],
) -> Result<CrfGradients<T>> {
    nll_with_grad(em, crf, labels).map(|(_, g)| g)
}

/// Loss and gradient from a single forward-backward pass.
pub fn nll_with_grad<T: Scalar>(
    em: &EmissionScores<T>,
    crf: &CrfParams<T>,
    labels: &[usize],
) -> Result<(T, CrfGradients<T>)> {
    let gold = score_sequence(em, crf, labels)?;
    let marg = posterior_marginals(em, crf)?;
    let len = em.len();
    let l = crf.num_labels();

    let mut emissions = marg.unary.clone();
    for (t, &y) in labels.iter().enumerate() {
        emissions[[t, y]] -= T::one();
    }
    let mut grads = CrfParams::zeros(l);
    for t in 0..len.saturating_sub(1) {
        for a in 0..l {
            for b in 0..l {
                grads.transitions[[a, b]] += marg.pairwise[[t, a, b]];
            }
        }
    }
    for w in labels.windows(2) {
        grads.transitions[[w[0], w[1]]] -= T::one();
    }
    grads.start_scores.assign(&marg.unary.row(0));
    grads.start_scores[labels[0]] -= T::one();
    grads.end_scores.assign(&marg.unary.row(len - 1));
    grads.end_scores[labels[len - 1]] -= T::one();

    Ok((
        marg.log_z - gold,
        CrfGradients {
            emissions,
            crf: grads,
        },
    ))
}

/// Highest-scoring labeling of the unmasked positions and its score.
///
/// Ties go to the lower label id at every backtrack step.
pub fn viterbi_decode<T: Scalar>(
    em: &EmissionScores<T>,
    crf: &CrfParams<T>,
) -> Result<(LabelSequence, T)> {
    let len = check(em, crf)?;
    let l = crf.num_labels();
    let mut delta = Array2::zeros((len, l));
    let mut back = Array2::<usize>::zeros((len, l));
    for y in 0..l {
        delta[[0, y]] = crf.start_scores[y] + em.scores[[0, y]];
    }
    for t in 1..len {
        for b in 0..l {
            let mut best = 0;
            let mut best_score = delta[[t - 1, 0]] + crf.transitions[[0, b]];
            for a in 1..l {
                let s = delta[[t - 1, a]] + crf.transitions[[a, b]];
                if s > best_score {
                    best = a;
                    best_score = s;
                }
            }
            back[[t, b]] = best;
            delta[[t, b]] = best_score + em.scores[[t, b]];
        }
    }
    let mut last = 0;
    let mut last_score = delta[[len - 1, 0]] + crf.end_scores[0];
    for y in 1..l {
        let s = delta[[len - 1, y]] + crf.end_scores[y];
        if s > last_score {
            last = y;
            last_score = s;
        }
    }
    let mut path = vec![0; len];
    path[len - 1] = last;
    for t in (1..len).rev() {
        path[t - 1] = back[[t, path[t]]];
    }
    let score = score_sequence(em, crf, &path)?;
    Ok((LabelSequence(path), score))
}

/// Exhaustive enumeration over every labeling, for testing the dynamic programs.
pub mod oracle {
    use super::*;

    /// Upper bound on enumerated labelings (2^20).
    pub const MAX_LABELINGS: usize = 1 << 20;

    /// All labelings of `len` positions over `num_labels` labels. The last
    /// position is the most significant digit, so labelings that are smaller
    /// when read from the end come first.
    pub fn labelings(num_labels: usize, len: usize) -> Result<Vec<Vec<usize>>> {
        let total = (num_labels as f64).powi(len as i32);
        if total > MAX_LABELINGS as f64 {
            return Err(Error::TooLarge {
                labels: num_labels,
                positions: len,
            });
        }
        let total = total as usize;
        Ok((0..total)
            .map(|mut code| {
                let mut y = vec![0; len];
                for slot in y.iter_mut() {
                    *slot = code % num_labels;
                    code /= num_labels;
                }
                y
            })
            .collect())
    }

    /// Direct evaluation of the path score, summed along the chain.
    pub fn path_score<T: Scalar>(em: &EmissionScores<T>, crf: &CrfParams<T>, y: &[usize]) -> T {
        let mut s = crf.start_scores[y[0]];
        s = s + em.scores[[0, y[0]]];
        for t in 1..y.len() {
            s = s + crf.transitions[[y[t - 1], y[t]]];
            s = s + em.scores[[t, y[t]]];
        }
        s + crf.end_scores[y[y.len() - 1]]
    }

    pub fn brute_force_log_partition<T: Scalar>(
        em: &EmissionScores<T>,
        crf: &CrfParams<T>,
    ) -> Result<T> {
        let len = check(em, crf)?;
        let scores: Vec<T> = labelings(crf.num_labels(), len)?
            .iter()
            .map(|y| path_score(em, crf, y))
            .collect();
        Ok(log_sum_exp(&scores))
    }

    pub fn brute_force_best_path<T: Scalar>(
        em: &EmissionScores<T>,
        crf: &CrfParams<T>,
    ) -> Result<(LabelSequence, T)> {
        let len = check(em, crf)?;
        let mut best: Option<(Vec<usize>, T)> = None;
        for y in labelings(crf.num_labels(), len)? {
            let s = path_score(em, crf, &y);
            if best.as_ref().is_none_or(|(_, b)| s > *b) {
                best = Some((y, s));
            }
        }
        let (y, s) = best.expect("at least one labeling");
        Ok((LabelSequence(y), s))
    }

    /// Unary marginals by summing `P(y | x)` over all labelings.
    pub fn brute_force_unary<T: Scalar>(
        em: &EmissionScores<T>,
        crf: &CrfParams<T>,
    ) -> Result<Array2<T>> {
        let len = check(em, crf)?;
        let log_z = brute_force_log_partition(em, crf)?;
        let mut out = Array2::zeros((len, crf.num_labels()));
        for y in labelings(crf.num_labels(), len)? {
            let p = (path_score(em, crf, &y) - log_z).exp();
            for (t, &label) in y.iter().enumerate() {
                out[[t, label]] += p;
            }
        }
        Ok(out)
    }

    /// Pairwise change probabilities `P(y_t-1 != y_t)` for `t = 1..len`.
    pub fn brute_force_change_probabilities<T: Scalar>(
        em: &EmissionScores<T>,
        crf: &CrfParams<T>,
    ) -> Result<Vec<T>> {
        let len = check(em, crf)?;
        let log_z = brute_force_log_partition(em, crf)?;
        let mut out = vec![T::zero(); len.saturating_sub(1)];
        for y in labelings(crf.num_labels(), len)? {
            let p = (path_score(em, crf, &y) - log_z).exp();
            for t in 1..len {
                if y[t] != y[t - 1] {
                    out[t - 1] += p;
                }
            }
        }
        Ok(out)
    }
}
