//! Synthetic stat-table generator with known ground truth.
//!
//! Stands in for the neural statistic providers so detectors can be
//! validated quantitatively. Pairs straddling the planted changepoint draw
//! their statistic around `mu_change` and their representation near one
//! per-stream unit "change direction"; all other pairs draw around
//! `mu_nochange` with isotropic random unit representations.
//!
//! Determinism contract: every stream owns a ChaCha8 RNG seeded with
//! [`crate::seeding::derive_seed`]`(seed, stream_index)` and draws, in
//! order, (1) the change-direction vector `u` (`rep_dim` standard normals,
//! skipped when `rep_dim == 0`), then (2) per pair in sorted `(t, t_prime)`
//! order: one standard normal for the statistic noise and `rep_dim`
//! standard normals for the representation. This counter-based scheme makes
//! parallel generation reproduce the serial output bit-exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::model::{all_pairs, GroundTruth, ModelError, PairObservation, StatTable};
use crate::scalar::Scalar;
use crate::seeding::derive_seed;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error("changepoint {0} is not a candidate of this config")]
    InvalidChangepoint(u32),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Benchmark generation parameters. Defaults describe the reference
/// benchmark shape: ten-frame streams, 400 per candidate changepoint in
/// `1..=8`, plus 400 no-change streams.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig<T> {
    pub num_streams_per_changepoint: usize,
    pub num_frames: u32,
    pub candidate_changepoints: Vec<u32>,
    pub no_change_streams: usize,
    /// Representation dimension; 0 generates statistic-only tables.
    pub rep_dim: usize,
    pub mu_change: T,
    pub mu_nochange: T,
    pub sigma_p: T,
    pub sigma_h: T,
    pub seed: u64,
}

impl<T: Scalar> Default for SimConfig<T> {
    fn default() -> Self {
        Self {
            num_streams_per_changepoint: 400,
            num_frames: 10,
            candidate_changepoints: (1..=8).collect(),
            no_change_streams: 400,
            rep_dim: 16,
            mu_change: T::one(),
            mu_nochange: T::zero(),
            sigma_p: T::zero(),
            sigma_h: T::zero(),
            seed: 0,
        }
    }
}

impl<T: Scalar> SimConfig<T> {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.num_frames < 2 {
            return Err(SimError::InvalidConfig(format!(
                "num_frames must be at least 2, got {}",
                self.num_frames
            )));
        }
        if self.mu_change <= self.mu_nochange {
            return Err(SimError::InvalidConfig(format!(
                "mu_change ({}) must exceed mu_nochange ({})",
                self.mu_change, self.mu_nochange
            )));
        }
        if self.sigma_p < T::zero() || self.sigma_h < T::zero() {
            return Err(SimError::InvalidConfig("noise sigmas must be non-negative".into()));
        }
        for &kappa in &self.candidate_changepoints {
            if kappa == 0 || kappa >= self.num_frames {
                return Err(SimError::InvalidChangepoint(kappa));
            }
        }
        Ok(())
    }

    /// Total streams a benchmark run generates.
    pub fn total_streams(&self) -> usize {
        self.candidate_changepoints.len() * self.num_streams_per_changepoint
            + self.no_change_streams
    }
}

fn draw_normal<T>(rng: &mut ChaCha8Rng) -> T
where
    T: Scalar,
    StandardNormal: Distribution<T>,
{
    rng.sample(StandardNormal)
}

fn draw_unit<T>(rng: &mut ChaCha8Rng, dim: usize) -> Vec<T>
where
    T: Scalar,
    StandardNormal: Distribution<T>,
{
    let v: Vec<T> = (0..dim).map(|_| draw_normal(rng)).collect();
    normalize(v)
}

fn normalize<T: Scalar>(mut v: Vec<T>) -> Vec<T> {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    v
}

/// Generates one stream's stat table and its ground truth. `kappa_star =
/// None` produces a no-change stream in which every pair follows the
/// non-straddling distribution.
pub fn simulate_stream<T>(
    config: &SimConfig<T>,
    kappa_star: Option<u32>,
    stream_seed: u64,
    stream_id: &str,
) -> Result<(StatTable<T>, GroundTruth), SimError>
where
    T: Scalar,
    StandardNormal: Distribution<T>,
{
    config.validate()?;
    if let Some(kappa) = kappa_star {
        if !config.candidate_changepoints.contains(&kappa) {
            return Err(SimError::InvalidChangepoint(kappa));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let d = config.rep_dim;
    let change_direction: Option<Vec<T>> = (d > 0).then(|| draw_unit(&mut rng, d));

    let mut observations = Vec::with_capacity(crate::model::pair_count(config.num_frames));
    for key in all_pairs(config.num_frames) {
        let straddling = kappa_star.is_some_and(|kappa| key.straddles(kappa));
        let noise: T = draw_normal(&mut rng);
        let p = if straddling {
            config.mu_change + config.sigma_p * noise
        } else {
            config.mu_nochange + config.sigma_p * noise
        };
        if d == 0 {
            observations.push(PairObservation::new(key, p));
        } else {
            let eps: Vec<T> = (0..d).map(|_| draw_normal(&mut rng)).collect();
            let rep = if straddling {
                let u = change_direction.as_ref().expect("direction drawn when d > 0");
                normalize(
                    u.iter().zip(&eps).map(|(&ui, &ei)| ui + config.sigma_h * ei).collect(),
                )
            } else {
                normalize(eps)
            };
            observations.push(PairObservation { key, p, rep: Some(rep) });
        }
    }
    let table = StatTable::new(config.num_frames, observations).map_err(SimError::Model)?;
    Ok((table, GroundTruth { stream_id: stream_id.to_string(), kappa_star }))
}

/// Identifier of the `index`-th benchmark stream.
pub fn stream_id(index: usize) -> String {
    format!("s{index:05}")
}

/// The benchmark plan: `(index, id, kappa_star)` for every stream, change
/// streams first (grouped by candidate in ascending order), then no-change
/// streams.
pub fn benchmark_plan<T: Scalar>(config: &SimConfig<T>) -> Vec<(usize, String, Option<u32>)> {
    let mut plan = Vec::with_capacity(config.total_streams());
    let mut candidates = config.candidate_changepoints.clone();
    candidates.sort_unstable();
    let mut index = 0usize;
    for &kappa in &candidates {
        for _ in 0..config.num_streams_per_changepoint {
            plan.push((index, stream_id(index), Some(kappa)));
            index += 1;
        }
    }
    for _ in 0..config.no_change_streams {
        plan.push((index, stream_id(index), None));
        index += 1;
    }
    plan
}

/// Generates the full benchmark dataset in plan order.
pub fn simulate_benchmark<T>(
    config: &SimConfig<T>,
) -> Result<Vec<(StatTable<T>, GroundTruth)>, SimError>
where
    T: Scalar,
    StandardNormal: Distribution<T>,
{
    config.validate()?;
    benchmark_plan(config)
        .into_iter()
        .map(|(index, id, kappa_star)| {
            simulate_stream(config, kappa_star, derive_seed(config.seed, index as u64), &id)
        })
        .collect()
}
