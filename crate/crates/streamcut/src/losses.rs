//! Training objectives of the change-description method, as plain numeric
//! functions.
//!
//! * [`generator_loss`]: regularized cross-entropy for a caption generator:
//!   negative log-likelihood plus `lambda_attn` times the L1 norms of both
//!   spatial attention maps, minus `mu_entropy` times the summed entropies
//!   of the temporal attention distributions.
//! * [`discriminator_loss`]: binary cross-entropy over matched positives,
//!   mismatched labeled negatives, and labeled-caption/unlabeled-pair
//!   negatives.
//! * [`triplet_loss`]: hard triplet loss over a caption/pair similarity
//!   matrix.
//! * [`no_change_statistic`] / [`image_only_statistic`]: pairwise change
//!   statistics derived from a validity scorer by fixing the "no change"
//!   caption, and from an image-only no-change classifier.
//!
//! [`finite_difference_check`] is the verification oracle used to confirm
//! every analytic gradient in the crate.

use thiserror::Error;

use crate::model::CaptionTokens;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LossError {
    #[error("temporal attention vector {index} is not a probability distribution")]
    NonDistributionAttention { index: usize },
    #[error("non-finite value in loss input")]
    NonFiniteInput,
    #[error("discriminator score {role} index {index} outside (0, 1)")]
    ScoreOutOfRange { role: &'static str, index: usize },
    #[error("similarity matrix is not square: row {row} has {got} entries, expected {expected}")]
    NonSquareMatrix { row: usize, got: usize, expected: usize },
    #[error("loss diverged (non-finite) at epoch {epoch} of {phase}")]
    DivergedLoss { phase: &'static str, epoch: usize },
    #[error("caption token {token} outside vocabulary of size {vocab}")]
    TokenOutOfVocab { token: u32, vocab: usize },
    #[error("empty dataset for {0}")]
    EmptyDataset(&'static str),
}

/// Abstract generator output for one image pair: per-token log-probabilities
/// of the caption, the two spatial attention maps (shape-free, only the L1
/// norm is consumed), and one temporal attention distribution per token.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorOutput<T> {
    pub token_logprobs: Vec<T>,
    pub spatial_map_t: Vec<T>,
    pub spatial_map_t_prime: Vec<T>,
    pub temporal_attention: Vec<Vec<T>>,
}

impl<T: Scalar> GeneratorOutput<T> {
    /// Output with zero attention penalties, as produced by models without
    /// attention: empty spatial maps and a one-slot (zero-entropy)
    /// distribution per token.
    pub fn without_attention(token_logprobs: Vec<T>) -> Self {
        let k = token_logprobs.len();
        Self {
            token_logprobs,
            spatial_map_t: Vec::new(),
            spatial_map_t_prime: Vec::new(),
            temporal_attention: vec![vec![T::one()]; k],
        }
    }

    fn validate(&self, tol: T) -> Result<(), LossError> {
        for v in self
            .token_logprobs
            .iter()
            .chain(&self.spatial_map_t)
            .chain(&self.spatial_map_t_prime)
        {
            if !v.is_finite() {
                return Err(LossError::NonFiniteInput);
            }
        }
        for (index, dist) in self.temporal_attention.iter().enumerate() {
            let mut sum = T::zero();
            for &a in dist {
                if !a.is_finite() || a < T::zero() {
                    return Err(LossError::NonDistributionAttention { index });
                }
                sum += a;
            }
            if (sum - T::one()).abs() > tol {
                return Err(LossError::NonDistributionAttention { index });
            }
        }
        Ok(())
    }
}

/// Shannon entropy of a distribution, natural log, with `0 ln 0 = 0`.
pub fn entropy<T: Scalar>(dist: &[T]) -> T {
    let mut h = T::zero();
    for &a in dist {
        if a > T::zero() {
            h -= a * a.ln();
        }
    }
    h
}

fn l1_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x.abs()).sum()
}

/// Regularized cross-entropy loss of a generator batch:
/// `sum_i [ -log p_i + lambda (|A_t|_1 + |A_t'|_1) - mu sum_k H(a_k) ]`.
pub fn generator_loss<T: Scalar>(
    batch: &[GeneratorOutput<T>],
    lambda_attn: T,
    mu_entropy: T,
) -> Result<T, LossError> {
    let tol = T::c(1e-9);
    let mut total = T::zero();
    for output in batch {
        output.validate(tol)?;
        let log_p: T = output.token_logprobs.iter().copied().sum();
        let attn = l1_norm(&output.spatial_map_t) + l1_norm(&output.spatial_map_t_prime);
        let ent: T = output.temporal_attention.iter().map(|a| entropy(a)).sum();
        total += -log_p + lambda_attn * attn - mu_entropy * ent;
    }
    Ok(total)
}

fn check_scores<T: Scalar>(scores: &[T], role: &'static str) -> Result<(), LossError> {
    for (index, &s) in scores.iter().enumerate() {
        if !(s > T::zero() && s < T::one()) {
            return Err(LossError::ScoreOutOfRange { role, index });
        }
    }
    Ok(())
}

/// Discriminator loss over validity scores:
/// `-sum log(pos) - sum log(1 - neg_labeled) - sum log(1 - neg_unlabeled)`.
///
/// Positives are labeled pairs with their own captions; the first negative
/// set matches labeled pairs with other pairs' captions; the second matches
/// labeled captions with unlabeled pairs. All scores must lie strictly
/// inside `(0, 1)`.
pub fn discriminator_loss<T: Scalar>(
    pos: &[T],
    neg_labeled: &[T],
    neg_unlabeled: &[T],
) -> Result<T, LossError> {
    check_scores(pos, "positive")?;
    check_scores(neg_labeled, "labeled negative")?;
    check_scores(neg_unlabeled, "unlabeled negative")?;
    let mut total = T::zero();
    for &s in pos {
        total -= s.ln();
    }
    for &s in neg_labeled.iter().chain(neg_unlabeled) {
        total -= (T::one() - s).ln();
    }
    Ok(total)
}

/// Gradient of [`discriminator_loss`] with respect to the three score
/// vectors: `-1/s` per positive, `1/(1-s)` per negative.
pub fn discriminator_loss_grad<T: Scalar>(
    pos: &[T],
    neg_labeled: &[T],
    neg_unlabeled: &[T],
) -> Result<(Vec<T>, Vec<T>, Vec<T>), LossError> {
    check_scores(pos, "positive")?;
    check_scores(neg_labeled, "labeled negative")?;
    check_scores(neg_unlabeled, "unlabeled negative")?;
    let g_pos = pos.iter().map(|&s| -(T::one() / s)).collect();
    let g_neg = |scores: &[T]| scores.iter().map(|&s| T::one() / (T::one() - s)).collect();
    Ok((g_pos, g_neg(neg_labeled), g_neg(neg_unlabeled)))
}

/// Hard triplet loss over a square similarity matrix `s[i][j]` between
/// caption `i` and pair `j`: `sum_i max(0, max_{j != i} (alpha - s_ii + s_ij))`.
/// Rows without an off-diagonal entry contribute nothing.
pub fn triplet_loss<T: Scalar>(similarities: &[Vec<T>], alpha: T) -> Result<T, LossError> {
    let n = similarities.len();
    for (row, r) in similarities.iter().enumerate() {
        if r.len() != n {
            return Err(LossError::NonSquareMatrix { row, got: r.len(), expected: n });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(LossError::NonFiniteInput);
        }
    }
    let mut total = T::zero();
    for i in 0..n {
        let mut worst = T::neg_infinity();
        for j in 0..n {
            if j != i {
                let violation = alpha - similarities[i][i] + similarities[i][j];
                if violation > worst {
                    worst = violation;
                }
            }
        }
        if worst > T::zero() {
            total += worst;
        }
    }
    Ok(total)
}

/// Subgradient of [`triplet_loss`] with respect to the matrix entries,
/// flattened row-major.
pub fn triplet_loss_grad<T: Scalar>(similarities: &[Vec<T>], alpha: T) -> Result<Vec<T>, LossError> {
    triplet_loss(similarities, alpha)?;
    let n = similarities.len();
    let mut grad = vec![T::zero(); n * n];
    for i in 0..n {
        let mut worst = T::neg_infinity();
        let mut worst_j = usize::MAX;
        for j in 0..n {
            if j != i {
                let violation = alpha - similarities[i][i] + similarities[i][j];
                if violation > worst {
                    worst = violation;
                    worst_j = j;
                }
            }
        }
        if worst_j != usize::MAX && worst > T::zero() {
            grad[i * n + i] -= T::one();
            grad[i * n + worst_j] += T::one();
        }
    }
    Ok(grad)
}

/// Pairwise change statistic from a caption-validity scorer: the negated
/// validity of the reserved "no change" caption for the pair. High when
/// "no change" fits poorly, i.e. when a change likely occurred.
pub fn no_change_statistic<T: Scalar>(
    validity: impl Fn(&CaptionTokens, &[T]) -> T,
    features: &[T],
) -> T {
    -validity(&CaptionTokens::no_change(), features)
}

/// Pairwise change statistic from an image-only no-change classifier: the
/// negated probability that no change occurred.
pub fn image_only_statistic<T: Scalar>(no_change_prob: impl Fn(&[T]) -> T, features: &[T]) -> T {
    -no_change_prob(features)
}

/// Central-difference gradient check: evaluates `value` at
/// `params +- epsilon` per coordinate and returns the maximum relative error
/// against `analytic_grad`, where the relative error at coordinate `i` is
/// `|fd_i - g_i| / max(|fd_i|, |g_i|, 1)`.
pub fn finite_difference_check<T: Scalar>(
    value: impl Fn(&[T]) -> T,
    analytic_grad: &[T],
    params: &[T],
    epsilon: T,
) -> T {
    assert_eq!(analytic_grad.len(), params.len());
    let mut work = params.to_vec();
    let mut max_err = T::zero();
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + epsilon;
        let plus = value(&work);
        work[i] = orig - epsilon;
        let minus = value(&work);
        work[i] = orig;
        let fd = (plus - minus) / (T::c(2.0) * epsilon);
        let g = analytic_grad[i];
        let err = (fd - g).abs() / (fd.abs().max(g.abs()).max(T::one()));
        if err > max_err {
            max_err = err;
        }
    }
    max_err
}
