//! Domain types shared by all modules.
//!
//! A visual stream is an ordered sequence of `N` frames identified only by
//! their indices `0..N-1`; no pixel data appears anywhere in this crate.
//! The changepoint convention is fixed once, globally: `kappa` is the index
//! of the first post-change frame, so frames `0..kappa-1` are pre-change and
//! `kappa..N-1` are post-change. A frame pair `(t, t')` with `t < t'`
//! *straddles* candidate `kappa` iff `t < kappa <= t'`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Reserved token id for the "no change" caption.
pub const NO_CHANGE_TOKEN: u32 = 0;

/// Errors raised by domain-type construction and validation.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("pair key requires t < t_prime, got ({t}, {t_prime})")]
    InvalidPairKey { t: u32, t_prime: u32 },
    #[error("stream requires at least 2 frames, got {0}")]
    TooFewFrames(u32),
    #[error("changepoint {kappa} outside valid range 1..={max}")]
    InvalidChangepoint { kappa: u32, max: u32 },
    #[error("missing pair ({t}, {t_prime})")]
    MissingPair { t: u32, t_prime: u32 },
    #[error("pair ({t}, {t_prime}) outside the frame range of a {num_frames}-frame table")]
    PairOutOfRange { t: u32, t_prime: u32, num_frames: u32 },
    #[error("representation dimension mismatch at pair ({t}, {t_prime}): expected {expected}, got {got}")]
    DimensionMismatch { t: u32, t_prime: u32, expected: usize, got: usize },
    #[error("duplicate pair ({t}, {t_prime})")]
    DuplicatePair { t: u32, t_prime: u32 },
    #[error("non-finite statistic or representation entry at pair ({t}, {t_prime})")]
    NonFiniteValue { t: u32, t_prime: u32 },
    #[error("zero-norm representation at pair ({t}, {t_prime})")]
    ZeroNormRepresentation { t: u32, t_prime: u32 },
    #[error("caption must contain at least one token")]
    EmptyCaption,
}

/// An unordered frame pair stored in canonical order `t < t_prime`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairKey {
    t: u32,
    t_prime: u32,
}

impl PairKey {
    pub fn new(t: u32, t_prime: u32) -> Result<Self, ModelError> {
        if t < t_prime {
            Ok(Self { t, t_prime })
        } else {
            Err(ModelError::InvalidPairKey { t, t_prime })
        }
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn t_prime(&self) -> u32 {
        self.t_prime
    }

    /// True iff the pair straddles candidate changepoint `kappa`
    /// (`t < kappa <= t_prime`).
    pub fn straddles(&self, kappa: u32) -> bool {
        self.t < kappa && kappa <= self.t_prime
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.t, self.t_prime)
    }
}

/// All `N(N-1)/2` pair keys of an `N`-frame stream, sorted.
pub fn all_pairs(num_frames: u32) -> impl Iterator<Item = PairKey> {
    (0..num_frames).flat_map(move |t| (t + 1..num_frames).map(move |t_prime| PairKey { t, t_prime }))
}

/// Number of frame pairs in an `N`-frame stream.
pub fn pair_count(num_frames: u32) -> usize {
    let n = num_frames as usize;
    n * (n - 1) / 2
}

/// One pairwise observation: the change statistic `p` and, optionally, a
/// hidden representation of the perceived change.
///
/// Representations are stored unnormalized; cosine computations normalize
/// internally.
#[derive(Debug, Clone, PartialEq)]
pub struct PairObservation<T> {
    pub key: PairKey,
    pub p: T,
    pub rep: Option<Vec<T>>,
}

impl<T: Scalar> PairObservation<T> {
    pub fn new(key: PairKey, p: T) -> Self {
        Self { key, p, rep: None }
    }

    pub fn with_rep(key: PairKey, p: T, rep: Vec<T>) -> Self {
        Self { key, p, rep: Some(rep) }
    }
}

/// Tabulated pairwise statistics (and representations) for one stream:
/// exactly the full upper triangle of frame pairs, sorted by key, so pair
/// `(t, t_prime)` lives at its triangular index.
#[derive(Debug, Clone, PartialEq)]
pub struct StatTable<T> {
    num_frames: u32,
    rep_dim: Option<usize>,
    observations: Vec<PairObservation<T>>,
}

/// Index of pair `(t, t_prime)` in sorted pair order over `num_frames`.
pub fn triangular_index(num_frames: u32, t: u32, t_prime: u32) -> usize {
    let n = num_frames as usize;
    let t = t as usize;
    t * (2 * n - t - 1) / 2 + (t_prime as usize - t - 1)
}

impl<T: Scalar> StatTable<T> {
    /// Builds and validates a table from one observation per pair (any
    /// order).
    pub fn new(num_frames: u32, mut observations: Vec<PairObservation<T>>) -> Result<Self, ModelError> {
        observations.sort_by(|a, b| a.key.cmp(&b.key));
        let rep_dim = observations.first().and_then(|o| o.rep.as_ref().map(Vec::len));
        let table = Self { num_frames, rep_dim, observations };
        table.validate()?;
        Ok(table)
    }

    /// Convenience constructor for representation-free tables, pairs given
    /// as `(t, t_prime, p)`.
    pub fn from_stats(num_frames: u32, stats: &[(u32, u32, T)]) -> Result<Self, ModelError> {
        let obs = stats
            .iter()
            .map(|&(t, tp, p)| Ok(PairObservation::new(PairKey::new(t, tp)?, p)))
            .collect::<Result<Vec<_>, ModelError>>()?;
        Self::new(num_frames, obs)
    }

    /// Checks every structural invariant: at least two frames, exactly the
    /// full upper triangle present in sorted order, finite statistics, and
    /// representations that are either absent everywhere or share one
    /// dimension with positive norm.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_frames < 2 {
            return Err(ModelError::TooFewFrames(self.num_frames));
        }
        for pair in self.observations.windows(2) {
            if pair[0].key == pair[1].key {
                return Err(ModelError::DuplicatePair {
                    t: pair[0].key.t,
                    t_prime: pair[0].key.t_prime,
                });
            }
        }
        for obs in &self.observations {
            if obs.key.t_prime >= self.num_frames {
                return Err(ModelError::PairOutOfRange {
                    t: obs.key.t,
                    t_prime: obs.key.t_prime,
                    num_frames: self.num_frames,
                });
            }
        }
        // sorted, unique, in range: the triangle is complete iff the count
        // matches, and the first gap names the missing pair otherwise
        if self.observations.len() != pair_count(self.num_frames) {
            for (expected, obs) in
                all_pairs(self.num_frames).zip(self.observations.iter().map(Some).chain(std::iter::repeat(None)))
            {
                if obs.map(|o| o.key) != Some(expected) {
                    return Err(ModelError::MissingPair { t: expected.t(), t_prime: expected.t_prime() });
                }
            }
        }
        for obs in &self.observations {
            let key = obs.key;
            if !obs.p.is_finite() {
                return Err(ModelError::NonFiniteValue { t: key.t, t_prime: key.t_prime });
            }
            match (self.rep_dim, obs.rep.as_ref()) {
                (None, None) => {}
                (Some(d), Some(rep)) => {
                    if rep.len() != d || d == 0 {
                        return Err(ModelError::DimensionMismatch {
                            t: key.t,
                            t_prime: key.t_prime,
                            expected: d,
                            got: rep.len(),
                        });
                    }
                    if rep.iter().any(|v| !v.is_finite()) {
                        return Err(ModelError::NonFiniteValue { t: key.t, t_prime: key.t_prime });
                    }
                    let norm_sq: T = rep.iter().map(|&v| v * v).sum();
                    if norm_sq <= T::zero() {
                        return Err(ModelError::ZeroNormRepresentation {
                            t: key.t,
                            t_prime: key.t_prime,
                        });
                    }
                }
                (Some(d), None) => {
                    return Err(ModelError::DimensionMismatch {
                        t: key.t,
                        t_prime: key.t_prime,
                        expected: d,
                        got: 0,
                    })
                }
                (None, Some(rep)) => {
                    return Err(ModelError::DimensionMismatch {
                        t: key.t,
                        t_prime: key.t_prime,
                        expected: 0,
                        got: rep.len(),
                    })
                }
            }
        }
        Ok(())
    }

    pub fn num_frames(&self) -> u32 {
        self.num_frames
    }

    /// Representation dimension, `None` for statistic-only tables.
    pub fn rep_dim(&self) -> Option<usize> {
        self.rep_dim
    }

    pub fn observation(&self, key: PairKey) -> Option<&PairObservation<T>> {
        if key.t_prime >= self.num_frames {
            return None;
        }
        self.observations.get(triangular_index(self.num_frames, key.t, key.t_prime))
    }

    /// Statistic for the pair `(t, t_prime)`.
    pub fn stat(&self, t: u32, t_prime: u32) -> Option<T> {
        let key = PairKey::new(t, t_prime).ok()?;
        self.observation(key).map(|o| o.p)
    }

    /// Observations in sorted pair order.
    pub fn observations(&self) -> impl Iterator<Item = &PairObservation<T>> {
        self.observations.iter()
    }
}

/// Validates a stat table; free-function form of [`StatTable::validate`].
pub fn validate_stat_table<T: Scalar>(table: &StatTable<T>) -> Result<(), ModelError> {
    table.validate()
}

/// A change caption as a sequence of token ids. Token 0 is reserved for
/// "no change".
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CaptionTokens(Vec<u32>);

impl CaptionTokens {
    pub fn new(tokens: Vec<u32>) -> Result<Self, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptyCaption);
        }
        Ok(Self(tokens))
    }

    /// The reserved single-token "no change" caption.
    pub fn no_change() -> Self {
        Self(vec![NO_CHANGE_TOKEN])
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_no_change(&self) -> bool {
        self.0 == [NO_CHANGE_TOKEN]
    }
}

impl fmt::Display for CaptionTokens {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for tok in &self.0 {
            if !first {
                write!(f, " ")?;
            }
            write!(f, "{tok}")?;
            first = false;
        }
        Ok(())
    }
}

/// Descriptive record of one stream: its length, the true changepoint when
/// one exists, and any collected change captions.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamManifest {
    pub stream_id: String,
    pub num_frames: u32,
    pub true_changepoint: Option<u32>,
    pub captions: Vec<CaptionTokens>,
}

impl StreamManifest {
    pub fn new(
        stream_id: impl Into<String>,
        num_frames: u32,
        true_changepoint: Option<u32>,
        captions: Vec<CaptionTokens>,
    ) -> Result<Self, ModelError> {
        if num_frames < 2 {
            return Err(ModelError::TooFewFrames(num_frames));
        }
        if let Some(kappa) = true_changepoint {
            if kappa == 0 || kappa >= num_frames {
                return Err(ModelError::InvalidChangepoint { kappa, max: num_frames - 1 });
            }
        }
        Ok(Self { stream_id: stream_id.into(), num_frames, true_changepoint, captions })
    }
}

/// Ground-truth changepoint for a stream; `None` for no-change streams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub stream_id: String,
    pub kappa_star: Option<u32>,
}

/// Score function used to produce a detection. The `-io` variants label
/// detections computed on tables whose statistics came from an image-only
/// provider; they score identically to their language counterparts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Step,
    StepIo,
    Gc,
    GcIo,
    Rc,
    RcIo,
    RcLambda0,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Step,
        Method::StepIo,
        Method::Gc,
        Method::GcIo,
        Method::Rc,
        Method::RcIo,
        Method::RcLambda0,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Step => "step",
            Method::StepIo => "step-io",
            Method::Gc => "gc",
            Method::GcIo => "gc-io",
            Method::Rc => "rc",
            Method::RcIo => "rc-io",
            Method::RcLambda0 => "rc-lambda0",
        }
    }

    /// True when the score needs hidden representations.
    pub fn needs_representations(&self) -> bool {
        matches!(self, Method::Rc | Method::RcIo | Method::RcLambda0)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "step" => Ok(Method::Step),
            "step-io" => Ok(Method::StepIo),
            "gc" => Ok(Method::Gc),
            "gc-io" => Ok(Method::GcIo),
            "rc" => Ok(Method::Rc),
            "rc-io" => Ok(Method::RcIo),
            "rc-lambda0" | "rc0" => Ok(Method::RcLambda0),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

/// A changepoint estimate with its full score profile over candidates
/// `1..=N-1`. `profile[k]` is the score of candidate `kappa = k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult<T> {
    pub stream_id: String,
    pub method: Method,
    pub kappa_hat: u32,
    pub confidence: T,
    pub profile: Vec<T>,
}

impl<T: Scalar> DetectionResult<T> {
    /// Builds a result from a score profile; the estimate is the smallest
    /// argmax and the confidence is the maximum score.
    pub fn from_profile(stream_id: impl Into<String>, method: Method, profile: Vec<T>) -> Self {
        debug_assert!(!profile.is_empty());
        let mut best = 0usize;
        for (i, &v) in profile.iter().enumerate().skip(1) {
            if v > profile[best] {
                best = i;
            }
        }
        Self {
            stream_id: stream_id.into(),
            method,
            kappa_hat: (best + 1) as u32,
            confidence: profile[best],
            profile,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(t: u32, tp: u32) -> PairKey {
        PairKey::new(t, tp).unwrap()
    }

    #[test]
    fn pair_key_rejects_reversed_and_equal() {
        assert!(PairKey::new(1, 0).is_err());
        assert!(PairKey::new(2, 2).is_err());
        assert!(PairKey::new(0, 1).is_ok());
    }

    #[test]
    fn pair_count_identity_up_to_64_frames() {
        for n in 2u32..=64 {
            let listed = all_pairs(n).count();
            assert_eq!(listed, pair_count(n));
            assert_eq!(listed, (n as usize) * (n as usize - 1) / 2);
        }
    }

    #[test]
    fn minimal_two_frame_table_validates() {
        let table = StatTable::from_stats(2, &[(0, 1, 0.5f64)]).unwrap();
        assert_eq!(table.num_frames(), 2);
        assert_eq!(table.rep_dim(), None);
    }

    #[test]
    fn missing_pair_is_reported() {
        let err = StatTable::from_stats(3, &[(0, 1, 0.1f64), (1, 2, 0.2)]).unwrap_err();
        assert_eq!(err, ModelError::MissingPair { t: 0, t_prime: 2 });
    }

    #[test]
    fn inconsistent_rep_dims_are_rejected() {
        let obs = vec![
            PairObservation::with_rep(key(0, 1), 0.0f64, vec![1.0, 0.0]),
            PairObservation::with_rep(key(0, 2), 0.0, vec![0.0, 1.0]),
            PairObservation::with_rep(key(1, 2), 0.0, vec![0.0, 1.0, 2.0]),
        ];
        let err = StatTable::new(3, obs).unwrap_err();
        assert_eq!(err, ModelError::DimensionMismatch { t: 1, t_prime: 2, expected: 2, got: 3 });
    }

    #[test]
    fn partial_representations_are_rejected() {
        let obs = vec![
            PairObservation::with_rep(key(0, 1), 0.0f64, vec![1.0]),
            PairObservation::new(key(0, 2), 0.0),
            PairObservation::with_rep(key(1, 2), 0.0, vec![1.0]),
        ];
        assert!(matches!(StatTable::new(3, obs), Err(ModelError::DimensionMismatch { .. })));
    }

    #[test]
    fn non_finite_statistic_names_the_pair() {
        let err = StatTable::from_stats(2, &[(0, 1, f64::NAN)]).unwrap_err();
        assert_eq!(err, ModelError::NonFiniteValue { t: 0, t_prime: 1 });
    }

    #[test]
    fn zero_norm_representation_is_rejected() {
        let obs = vec![PairObservation::with_rep(key(0, 1), 0.0f64, vec![0.0, 0.0])];
        let err = StatTable::new(2, obs).unwrap_err();
        assert_eq!(err, ModelError::ZeroNormRepresentation { t: 0, t_prime: 1 });
    }

    #[test]
    fn out_of_range_pair_is_rejected() {
        let obs = vec![
            PairObservation::new(key(0, 1), 0.0f64),
            PairObservation::new(key(0, 5), 0.0),
        ];
        assert!(matches!(StatTable::new(2, obs), Err(ModelError::PairOutOfRange { .. })));
    }

    #[test]
    fn straddling_follows_the_first_post_change_frame_convention() {
        // kappa = 2: pre-change {0,1}, post-change {2,3}
        assert!(key(1, 2).straddles(2));
        assert!(key(0, 3).straddles(2));
        assert!(!key(0, 1).straddles(2));
        assert!(!key(2, 3).straddles(2));
    }

    #[test]
    fn detection_ties_break_to_the_smallest_candidate() {
        let r = DetectionResult::from_profile("s", Method::Step, vec![0.5f64, 0.5, 0.1]);
        assert_eq!(r.kappa_hat, 1);
        assert_eq!(r.confidence, 0.5);
    }

    #[test]
    fn method_strings_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert_eq!("rc0".parse::<Method>().unwrap(), Method::RcLambda0);
        assert!("bogus".parse::<Method>().is_err());
    }

    #[test]
    fn manifest_rejects_out_of_range_changepoint() {
        assert!(StreamManifest::new("s", 5, Some(5), vec![]).is_err());
        assert!(StreamManifest::new("s", 5, Some(0), vec![]).is_err());
        assert!(StreamManifest::new("s", 5, Some(4), vec![]).is_ok());
        assert!(StreamManifest::new("s", 1, None, vec![]).is_err());
    }
}
