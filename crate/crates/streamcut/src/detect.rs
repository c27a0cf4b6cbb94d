//! Changepoint score functions and estimators.
//!
//! Three score families over a [`StatTable`]:
//!
//! * **step**: the statistic of the single consecutive pair `(kappa-1, kappa)`.
//! * **gc** (graph cut): mean statistic over the edges cut by `kappa` minus
//!   mean statistic over the remaining edges.
//! * **rc** (regularized representation consistency): `lambda * gc` plus the
//!   average pairwise cosine similarity of the cut-edge representations.
//!
//! The estimate for every method is the smallest argmax of the score profile
//! over candidates `kappa in 1..=N-1`.
//!
//! [`detect`] recomputes every sum from scratch per candidate and is the
//! reference implementation; [`detect_incremental`] maintains running sums
//! across candidates and must agree with the reference within 1e-9 per
//! profile entry.

use thiserror::Error;

use crate::model::{all_pairs, pair_count, triangular_index, DetectionResult, Method, ModelError, PairKey, StatTable};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DetectError {
    #[error("changepoint candidate {kappa} outside 1..={max}")]
    InvalidChangepoint { kappa: u32, max: u32 },
    #[error("method requires hidden representations but the table has none")]
    MissingRepresentations,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The edge partition induced by a candidate changepoint: `cut_edges` holds
/// every pair straddling `kappa`, `complement_edges` the rest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CutPartition {
    pub kappa: u32,
    pub cut_edges: Vec<PairKey>,
    pub complement_edges: Vec<PairKey>,
}

/// Parameters of the regularized consistency score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcParams<T> {
    /// Weight of the graph-cut term. Default 5/4.
    pub lambda_rc: T,
    /// Use the raw (unnormalized) pairwise-similarity sum instead of the
    /// mean. Off by default; kept for comparison experiments.
    pub raw_consistency: bool,
}

impl<T: Scalar> Default for RcParams<T> {
    fn default() -> Self {
        Self { lambda_rc: T::c(1.25), raw_consistency: false }
    }
}

fn check_candidate(num_frames: u32, kappa: u32) -> Result<(), DetectError> {
    if kappa == 0 || kappa >= num_frames {
        return Err(DetectError::InvalidChangepoint { kappa, max: num_frames - 1 });
    }
    Ok(())
}

/// Splits the complete pair graph of an `N`-frame stream at `kappa`.
///
/// `|cut_edges| = kappa * (N - kappa)`, and the two lists together cover all
/// `N(N-1)/2` pairs.
pub fn cut_partition(num_frames: u32, kappa: u32) -> Result<CutPartition, DetectError> {
    if num_frames < 2 {
        return Err(DetectError::Model(ModelError::TooFewFrames(num_frames)));
    }
    check_candidate(num_frames, kappa)?;
    let mut cut_edges = Vec::with_capacity(kappa as usize * (num_frames - kappa) as usize);
    let mut complement_edges =
        Vec::with_capacity(pair_count(num_frames) - kappa as usize * (num_frames - kappa) as usize);
    for key in all_pairs(num_frames) {
        if key.straddles(kappa) {
            cut_edges.push(key);
        } else {
            complement_edges.push(key);
        }
    }
    Ok(CutPartition { kappa, cut_edges, complement_edges })
}

/// Dense view of a table: statistics in sorted pair order plus unit-norm
/// representations. Built once per detection so score evaluation does not
/// pay map-lookup costs.
struct DenseTable<T> {
    num_frames: u32,
    rep_dim: usize,
    stats: Vec<T>,
    unit_reps: Vec<T>,
}

impl<T: Scalar> DenseTable<T> {
    // tables are validated on construction, so no re-check here
    fn build(table: &StatTable<T>, need_reps: bool) -> Result<Self, DetectError> {
        let rep_dim = match (need_reps, table.rep_dim()) {
            (true, None) => return Err(DetectError::MissingRepresentations),
            (true, Some(d)) => d,
            (false, _) => 0,
        };
        let n_pairs = pair_count(table.num_frames());
        let mut stats = Vec::with_capacity(n_pairs);
        let mut unit_reps = Vec::with_capacity(n_pairs * rep_dim);
        for obs in table.observations() {
            stats.push(obs.p);
            if rep_dim > 0 {
                let rep = obs.rep.as_ref().expect("validated table has representations");
                let inv_norm = T::one() / rep.iter().map(|&v| v * v).sum::<T>().sqrt();
                unit_reps.extend(rep.iter().map(|&v| v * inv_norm));
            }
        }
        Ok(Self { num_frames: table.num_frames(), rep_dim, stats, unit_reps })
    }

    /// Graph-cut score at `kappa`, accumulated in sorted pair order.
    ///
    /// Computed over a common denominator,
    /// `(|Ec| * sum_cut - |E| * sum_comp) / (|E| * |Ec|)`, so that a constant
    /// shift of every statistic cancels exactly in the numerator. An empty
    /// complement (N = 2) contributes a zero mean.
    fn gc(&self, kappa: u32) -> T {
        let mut sum_cut = T::zero();
        let mut sum_comp = T::zero();
        let mut n_cut = 0usize;
        let mut idx = 0usize;
        for key in all_pairs(self.num_frames) {
            let p = self.stats[idx];
            idx += 1;
            if key.straddles(kappa) {
                sum_cut += p;
                n_cut += 1;
            } else {
                sum_comp += p;
            }
        }
        let n_comp = self.stats.len() - n_cut;
        gc_from_sums(sum_cut, n_cut, sum_comp, n_comp)
    }

    /// Mean pairwise cosine similarity over ordered pairs of distinct cut
    /// edges, via the identity `(|sum of unit reps|^2 - |E|) / (|E| (|E|-1))`.
    /// A single-edge cut scores 1. With `raw = true` the numerator is
    /// returned without normalization.
    fn consistency(&self, kappa: u32, raw: bool) -> T {
        let mut acc = vec![T::zero(); self.rep_dim];
        let mut n_cut = 0usize;
        let mut idx = 0usize;
        for key in all_pairs(self.num_frames) {
            if key.straddles(kappa) {
                let base = idx * self.rep_dim;
                for (a, &v) in acc.iter_mut().zip(&self.unit_reps[base..base + self.rep_dim]) {
                    *a += v;
                }
                n_cut += 1;
            }
            idx += 1;
        }
        consistency_from_sum(&acc, n_cut, raw)
    }

    fn step(&self, kappa: u32) -> T {
        let idx = triangular_index(self.num_frames, kappa - 1, kappa);
        self.stats[idx]
    }

    fn profile(&self, method: Method, params: &RcParams<T>) -> Vec<T> {
        let n = self.num_frames;
        (1..n)
            .map(|kappa| match method {
                Method::Step | Method::StepIo => self.step(kappa),
                Method::Gc | Method::GcIo => self.gc(kappa),
                Method::Rc | Method::RcIo => {
                    params.lambda_rc * self.gc(kappa) + self.consistency(kappa, params.raw_consistency)
                }
                Method::RcLambda0 => self.consistency(kappa, params.raw_consistency),
            })
            .collect()
    }
}

fn gc_from_sums<T: Scalar>(sum_cut: T, n_cut: usize, sum_comp: T, n_comp: usize) -> T {
    let nc = T::from_count(n_cut);
    if n_comp == 0 {
        return sum_cut / nc;
    }
    let nk = T::from_count(n_comp);
    (nk * sum_cut - nc * sum_comp) / (nc * nk)
}

fn consistency_from_sum<T: Scalar>(acc: &[T], n_cut: usize, raw: bool) -> T {
    let norm_sq: T = acc.iter().map(|&v| v * v).sum();
    let n = T::from_count(n_cut);
    let numerator = norm_sq - n;
    if raw {
        return numerator;
    }
    if n_cut <= 1 {
        return T::one();
    }
    numerator / (n * (n - T::one()))
}

/// Step-wise score: the statistic of the consecutive pair `(kappa-1, kappa)`.
pub fn step_score<T: Scalar>(table: &StatTable<T>, kappa: u32) -> Result<T, DetectError> {
    check_candidate(table.num_frames(), kappa)?;
    table
        .stat(kappa - 1, kappa)
        .ok_or(DetectError::Model(ModelError::MissingPair { t: kappa - 1, t_prime: kappa }))
}

/// Graph-cut score: mean statistic over cut edges minus mean over the
/// complement (zero when the complement is empty).
pub fn gc_score<T: Scalar>(table: &StatTable<T>, kappa: u32) -> Result<T, DetectError> {
    check_candidate(table.num_frames(), kappa)?;
    Ok(DenseTable::build(table, false)?.gc(kappa))
}

/// Representation-consistency score: mean cosine similarity over all ordered
/// pairs of distinct cut edges; 1 for a single-edge cut.
pub fn consistency_score<T: Scalar>(table: &StatTable<T>, kappa: u32) -> Result<T, DetectError> {
    check_candidate(table.num_frames(), kappa)?;
    Ok(DenseTable::build(table, true)?.consistency(kappa, false))
}

/// Unnormalized variant of [`consistency_score`]: the plain sum of cosine
/// similarities over ordered pairs of distinct cut edges.
pub fn consistency_score_sum<T: Scalar>(table: &StatTable<T>, kappa: u32) -> Result<T, DetectError> {
    check_candidate(table.num_frames(), kappa)?;
    Ok(DenseTable::build(table, true)?.consistency(kappa, true))
}

/// Regularized consistency score: `lambda_rc * gc + consistency`.
pub fn rc_score<T: Scalar>(
    table: &StatTable<T>,
    kappa: u32,
    params: &RcParams<T>,
) -> Result<T, DetectError> {
    check_candidate(table.num_frames(), kappa)?;
    let dense = DenseTable::build(table, true)?;
    Ok(params.lambda_rc * dense.gc(kappa) + dense.consistency(kappa, params.raw_consistency))
}

/// Scores every candidate and returns the smallest-argmax estimate. This is
/// the reference implementation: every profile entry is re-summed from
/// scratch.
pub fn detect<T: Scalar>(
    stream_id: &str,
    table: &StatTable<T>,
    method: Method,
    params: &RcParams<T>,
) -> Result<DetectionResult<T>, DetectError> {
    let dense = DenseTable::build(table, method.needs_representations())?;
    Ok(DetectionResult::from_profile(stream_id, method, dense.profile(method, params)))
}

/// Same contract as [`detect`], computed with running sums.
///
/// Moving the candidate from `kappa` to `kappa + 1` removes the edges
/// `(t, kappa)` for `t < kappa` from the cut and adds the edges
/// `(kappa, t')` for `t' > kappa`: O(N) edge updates per step and
/// O(N^2 * d) work overall, against O(N^3 * d) for the reference.
pub fn detect_incremental<T: Scalar>(
    stream_id: &str,
    table: &StatTable<T>,
    method: Method,
    params: &RcParams<T>,
) -> Result<DetectionResult<T>, DetectError> {
    let dense = DenseTable::build(table, method.needs_representations())?;
    let n = dense.num_frames;
    let d = dense.rep_dim;

    if matches!(method, Method::Step | Method::StepIo) {
        // nothing to accumulate for the step score
        let profile = (1..n).map(|kappa| dense.step(kappa)).collect();
        return Ok(DetectionResult::from_profile(stream_id, method, profile));
    }

    let total: T = dense.stats.iter().copied().sum();
    let n_pairs = dense.stats.len();
    let mut sum_cut = T::zero();
    let mut rep_sum = vec![T::zero(); d];
    let mut n_cut = 0usize;
    let mut profile = Vec::with_capacity(n as usize - 1);

    let add_edge = |sum_cut: &mut T, rep_sum: &mut [T], t: u32, t_prime: u32, sign: T| {
        let idx = triangular_index(n, t, t_prime);
        *sum_cut += sign * dense.stats[idx];
        if d > 0 {
            let base = idx * d;
            for (a, &v) in rep_sum.iter_mut().zip(&dense.unit_reps[base..base + d]) {
                *a += sign * v;
            }
        }
    };

    for kappa in 1..n {
        // transition from kappa-1: drop edges ending at kappa-1, take up
        // edges starting at kappa-1
        for t in 0..kappa.saturating_sub(1) {
            add_edge(&mut sum_cut, &mut rep_sum, t, kappa - 1, -T::one());
            n_cut -= 1;
        }
        for t_prime in kappa..n {
            add_edge(&mut sum_cut, &mut rep_sum, kappa - 1, t_prime, T::one());
            n_cut += 1;
        }

        let score = match method {
            Method::Gc | Method::GcIo => {
                gc_from_sums(sum_cut, n_cut, total - sum_cut, n_pairs - n_cut)
            }
            Method::Rc | Method::RcIo => {
                params.lambda_rc * gc_from_sums(sum_cut, n_cut, total - sum_cut, n_pairs - n_cut)
                    + consistency_from_sum(&rep_sum, n_cut, params.raw_consistency)
            }
            Method::RcLambda0 => consistency_from_sum(&rep_sum, n_cut, params.raw_consistency),
            Method::Step | Method::StepIo => unreachable!(),
        };
        profile.push(score);
    }

    Ok(DetectionResult::from_profile(stream_id, method, profile))
}
