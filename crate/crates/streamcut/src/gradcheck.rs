//! Self-contained verification suites: finite-difference checks of every
//! analytic gradient, and the exhaustive-enumeration unbiasedness check of
//! the score-function (REINFORCE) estimator.
//!
//! These back the `gradcheck` CLI subcommand and the acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::losses::{
    discriminator_loss, discriminator_loss_grad, entropy, finite_difference_check,
    generator_loss, triplet_loss, triplet_loss_grad, GeneratorOutput,
};
use crate::model::CaptionTokens;
use crate::seeding::derive_seed;
use crate::toy::{reinforce_term, ToyDiscriminator, ToyGenerator};

/// Result of one named check.
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub name: &'static str,
    pub instances: usize,
    pub max_err: f64,
    pub threshold: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_err.is_finite() && self.max_err < self.threshold
    }
}

#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub rows: Vec<CheckRow>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(CheckRow::passed)
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn random_caption(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> CaptionTokens {
    CaptionTokens::new((0..len).map(|_| rng.random_range(0..vocab) as u32).collect())
        .expect("len >= 1")
}

/// Finite-difference checks of the analytic gradients of the generator
/// loss, the entropy term, the discriminator loss (with respect to both its
/// raw scores and the toy discriminator parameters), the toy generator
/// likelihood, the phase-3 objective (sampled captions held fixed), and the
/// triplet loss.
pub fn run_gradient_suite(seed: u64, instances: usize) -> CheckReport {
    let threshold = 1e-4;
    let eps = 1e-5;
    let mut report = CheckReport::default();

    // generator loss with respect to its packed inputs: per-token
    // log-probabilities and the two spatial maps (attention held fixed)
    {
        let mut max_err: f64 = 0.0;
        for i in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 100 + i as u64));
            let k = rng.random_range(1..4usize);
            let n_a = rng.random_range(0..4usize);
            let n_b = rng.random_range(0..4usize);
            let lambda = uniform(&mut rng, 0.01, 0.5);
            let mu = uniform(&mut rng, 0.01, 0.2);
            let attention: Vec<Vec<f64>> = (0..k)
                .map(|_| {
                    let raw: Vec<f64> = (0..3).map(|_| uniform(&mut rng, 0.1, 1.0)).collect();
                    let sum: f64 = raw.iter().sum();
                    raw.into_iter().map(|a| a / sum).collect()
                })
                .collect();
            let mut packed: Vec<f64> = (0..k).map(|_| uniform(&mut rng, -3.0, -0.01)).collect();
            packed.extend((0..n_a + n_b).map(|_| uniform(&mut rng, 0.05, 2.0)));
            let value = |p: &[f64]| {
                let output = GeneratorOutput {
                    token_logprobs: p[0..k].to_vec(),
                    spatial_map_t: p[k..k + n_a].to_vec(),
                    spatial_map_t_prime: p[k + n_a..].to_vec(),
                    temporal_attention: attention.clone(),
                };
                generator_loss(&[output], lambda, mu).unwrap()
            };
            // d/dlogprob = -1; d/d|A| entry = lambda for positive entries
            let grad: Vec<f64> =
                (0..k).map(|_| -1.0).chain((0..n_a + n_b).map(|_| lambda)).collect();
            max_err = max_err.max(finite_difference_check(value, &grad, &packed, eps));
        }
        report.rows.push(CheckRow { name: "generator_loss/inputs", instances, max_err, threshold });
    }

    // entropy term with respect to the distribution entries
    {
        let mut max_err: f64 = 0.0;
        for i in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 200 + i as u64));
            let n = rng.random_range(2..6usize);
            let dist: Vec<f64> = (0..n).map(|_| uniform(&mut rng, 0.05, 1.0)).collect();
            let grad: Vec<f64> = dist.iter().map(|&a| -(a.ln() + 1.0)).collect();
            max_err = max_err.max(finite_difference_check(entropy, &grad, &dist, eps));
        }
        report.rows.push(CheckRow { name: "entropy/distribution", instances, max_err, threshold });
    }

    // toy generator likelihood with respect to its parameters
    {
        let mut max_err: f64 = 0.0;
        for i in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 300 + i as u64));
            let vocab = rng.random_range(2..5usize);
            let feat_dim = rng.random_range(1..4usize);
            let len = rng.random_range(1..4usize);
            let gen = ToyGenerator::<f64>::init_random(
                vocab,
                feat_dim,
                len,
                0.4,
                derive_seed(seed, 8000 + i as u64),
            );
            let x: Vec<f64> = (0..feat_dim).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
            let w = random_caption(&mut rng, vocab, len);
            let grad: Vec<f64> =
                gen.grad_log_prob(&w, &x).unwrap().into_iter().map(|g| -g).collect();
            let params = gen.params().to_vec();
            let value = |p: &[f64]| {
                let mut g = gen.clone();
                g.set_params(p);
                -g.log_prob(&w, &x).unwrap()
            };
            max_err = max_err.max(finite_difference_check(value, &grad, &params, eps));
        }
        report.rows.push(CheckRow { name: "generator_nll/params", instances, max_err, threshold });
    }

    // discriminator loss with respect to its raw score inputs
    {
        let mut max_err: f64 = 0.0;
        for i in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 400 + i as u64));
            let np = rng.random_range(1..4usize);
            let nl = rng.random_range(0..3usize);
            let nu = rng.random_range(0..3usize);
            let packed: Vec<f64> =
                (0..np + nl + nu).map(|_| uniform(&mut rng, 0.1, 0.9)).collect();
            let (gp, gl, gu) = discriminator_loss_grad(
                &packed[0..np],
                &packed[np..np + nl],
                &packed[np + nl..],
            )
            .unwrap();
            let grad: Vec<f64> = gp.into_iter().chain(gl).chain(gu).collect();
            let value = |p: &[f64]| {
                discriminator_loss(&p[0..np], &p[np..np + nl], &p[np + nl..]).unwrap()
            };
            max_err = max_err.max(finite_difference_check(value, &grad, &packed, eps));
        }
        report.rows.push(CheckRow { name: "discriminator_loss/scores", instances, max_err, threshold });
    }

    // discriminator loss through the toy discriminator parameters
    {
        let mut max_err: f64 = 0.0;
        for i in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 500 + i as u64));
            let vocab = rng.random_range(2..4usize);
            let feat_dim = rng.random_range(1..4usize);
            let disc = ToyDiscriminator::<f64>::init_random(
                vocab,
                feat_dim,
                0.4,
                derive_seed(seed, 9000 + i as u64),
            );
            let batch: Vec<(CaptionTokens, Vec<f64>, bool)> = (0..4)
                .map(|j| {
                    let w = random_caption(&mut rng, vocab, 1 + j % 2);
                    let x: Vec<f64> =
                        (0..feat_dim).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
                    (w, x, j % 2 == 0)
                })
                .collect();
            let loss_of = |d: &ToyDiscriminator<f64>| {
                let mut pos = Vec::new();
                let mut neg = Vec::new();
                for (w, x, positive) in &batch {
                    let s = d.validity(w, x).unwrap();
                    if *positive {
                        pos.push(s);
                    } else {
                        neg.push(s);
                    }
                }
                discriminator_loss(&pos, &neg, &[]).unwrap()
            };
            let mut grad = vec![0.0f64; disc.num_params()];
            for (w, x, positive) in &batch {
                let (s, gz) = disc.validity_with_logit_grad(w, x).unwrap();
                let coeff = if *positive { s - 1.0 } else { s };
                for (g, &d) in grad.iter_mut().zip(&gz) {
                    *g += coeff * d;
                }
            }
            let params = disc.params().to_vec();
            let value = |p: &[f64]| {
                let mut d = disc.clone();
                d.set_params(p);
                loss_of(&d)
            };
            max_err = max_err.max(finite_difference_check(value, &grad, &params, eps));
        }
        report.rows.push(CheckRow { name: "discriminator_loss/params", instances, max_err, threshold });
    }

    // phase-3 objective with respect to the generator parameters; the
    // sampled captions are held fixed, so only the likelihood terms carry
    // gradient
    {
        let mut max_err: f64 = 0.0;
        for i in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 600 + i as u64));
            let vocab = rng.random_range(2..4usize);
            let feat_dim = rng.random_range(1..3usize);
            let gen = ToyGenerator::<f64>::init_random(
                vocab,
                feat_dim,
                2,
                0.4,
                derive_seed(seed, 10_000 + i as u64),
            );
            let disc = ToyDiscriminator::<f64>::init_random(
                vocab,
                feat_dim,
                0.3,
                derive_seed(seed, 11_000 + i as u64),
            );
            let labeled: Vec<(Vec<f64>, CaptionTokens)> = (0..3)
                .map(|_| {
                    let x: Vec<f64> =
                        (0..feat_dim).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
                    (x, random_caption(&mut rng, vocab, 2))
                })
                .collect();
            // fixed samples drawn once at the base parameters
            let mut sample_rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, 12_000 + i as u64));
            let fixed: Vec<(Vec<f64>, CaptionTokens)> = labeled
                .iter()
                .map(|(x, _)| (x.clone(), gen.sample(x, &mut sample_rng)))
                .collect();
            let lambda_rl = 0.2;
            let reward_part: f64 = fixed
                .iter()
                .map(|(x, w)| disc.validity(w, x).unwrap().ln())
                .sum::<f64>()
                * -lambda_rl;
            let mut grad = vec![0.0f64; gen.num_params()];
            for (x, w) in &labeled {
                for (g, d) in grad.iter_mut().zip(gen.grad_log_prob(w, x).unwrap()) {
                    *g -= d;
                }
            }
            let params = gen.params().to_vec();
            let value = |p: &[f64]| {
                let mut g = gen.clone();
                g.set_params(p);
                let nll: f64 =
                    labeled.iter().map(|(x, w)| -g.log_prob(w, x).unwrap()).sum::<f64>();
                nll + reward_part
            };
            max_err = max_err.max(finite_difference_check(value, &grad, &params, eps));
        }
        report.rows.push(CheckRow { name: "phase3_loss/params", instances, max_err, threshold });
    }

    // triplet loss with respect to the similarity matrix, avoiding
    // instances that sit within 1e-3 of a hinge boundary or argmax tie
    // (the loss is not differentiable there)
    {
        let mut max_err: f64 = 0.0;
        for i in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 700 + i as u64));
            let n = rng.random_range(2..5usize);
            let alpha = 0.1;
            let s = loop {
                let cand: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..n).map(|_| uniform(&mut rng, -1.0, 1.0)).collect())
                    .collect();
                if triplet_instance_is_smooth(&cand, alpha, 1e-3) {
                    break cand;
                }
            };
            let flat: Vec<f64> = s.iter().flatten().copied().collect();
            let grad = triplet_loss_grad(&s, alpha).unwrap();
            let value = |p: &[f64]| {
                let m: Vec<Vec<f64>> = p.chunks(n).map(<[f64]>::to_vec).collect();
                triplet_loss(&m, alpha).unwrap()
            };
            max_err = max_err.max(finite_difference_check(value, &grad, &flat, eps));
        }
        report.rows.push(CheckRow { name: "triplet_loss/similarities", instances, max_err, threshold });
    }

    report
}

fn triplet_instance_is_smooth(s: &[Vec<f64>], alpha: f64, guard: f64) -> bool {
    let n = s.len();
    for i in 0..n {
        let mut violations: Vec<f64> =
            (0..n).filter(|&j| j != i).map(|j| alpha - s[i][i] + s[i][j]).collect();
        violations.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if violations[0].abs() < guard {
            return false;
        }
        if violations.len() > 1 && (violations[0] - violations[1]).abs() < guard {
            return false;
        }
    }
    true
}

/// All captions of exactly `len` tokens over a `vocab`-token vocabulary.
pub fn enumerate_captions(vocab: usize, len: usize) -> Vec<CaptionTokens> {
    let mut out = Vec::with_capacity(vocab.pow(len as u32));
    let mut current = vec![0u32; len];
    loop {
        out.push(CaptionTokens::new(current.clone()).expect("len >= 1"));
        let mut pos = len;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            current[pos] += 1;
            if (current[pos] as usize) < vocab {
                break;
            }
            current[pos] = 0;
        }
    }
}

/// Exact gradient of the expected reward `sum_w p(w) R(w)` by enumeration
/// and the product rule: `sum_w R(w) sum_k (prod_{j != k} s_j) ds_k/dtheta`,
/// never forming `grad log p`.
pub fn expected_reward_grad<T, R>(generator: &ToyGenerator<T>, features: &[T], reward: R) -> Vec<T>
where
    T: crate::scalar::Scalar,
    R: Fn(&CaptionTokens) -> T,
{
    let vocab = generator.vocab();
    let len = generator.max_len();
    let mut total = vec![T::zero(); generator.num_params()];
    for caption in enumerate_captions(vocab, len) {
        let r = reward(&caption);
        let step_probs: Vec<T> =
            generator.token_logprobs(&caption, features).unwrap().iter().map(|lp| lp.exp()).collect();
        let grad_p = grad_prob_product_rule(generator, features, &caption, &step_probs);
        for (t, g) in total.iter_mut().zip(grad_p) {
            *t += r * g;
        }
    }
    total
}

fn grad_prob_product_rule<T: crate::scalar::Scalar>(
    generator: &ToyGenerator<T>,
    features: &[T],
    caption: &CaptionTokens,
    step_probs: &[T],
) -> Vec<T> {
    let mut grad = vec![T::zero(); generator.num_params()];
    let tokens = caption.tokens();
    for k in 0..tokens.len() {
        // prod_{j != k} s_j
        let mut rest = T::one();
        for (j, &s) in step_probs.iter().enumerate() {
            if j != k {
                rest *= s;
            }
        }
        let step_grad = generator.step_prob_grad(features, tokens, k);
        for (g, d) in grad.iter_mut().zip(step_grad) {
            *g += rest * d;
        }
    }
    grad
}

/// Probability-weighted mean of the single-sample estimator over all
/// outcomes: `sum_w p(w) [R(w) grad log p(w)]`.
pub fn estimator_mean<T, R>(generator: &ToyGenerator<T>, features: &[T], reward: R) -> Vec<T>
where
    T: crate::scalar::Scalar,
    R: Fn(&CaptionTokens) -> T,
{
    let mut total = vec![T::zero(); generator.num_params()];
    for caption in enumerate_captions(generator.vocab(), generator.max_len()) {
        let p = generator.log_prob(&caption, features).unwrap().exp();
        let term = reinforce_term(generator, features, &caption, reward(&caption)).unwrap();
        for (t, g) in total.iter_mut().zip(term) {
            *t += p * g;
        }
    }
    total
}

/// Enumeration check that the score-function estimator is unbiased: for
/// every vocabulary size and caption length up to the given limits, the
/// probability-weighted estimator mean must match the product-rule exact
/// gradient within 1e-9, and a central-difference gradient of the
/// enumerated expected reward within 1e-6.
pub fn run_reinforce_suite(seed: u64) -> CheckReport {
    let mut report = CheckReport::default();
    let mut max_vs_exact: f64 = 0.0;
    let mut max_vs_fd: f64 = 0.0;
    let mut instances = 0usize;
    for vocab in 2..=4usize {
        for len in 1..=3usize {
            instances += 1;
            let idx = (vocab * 10 + len) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, idx));
            let feat_dim = 2;
            let gen = ToyGenerator::<f64>::init_random(
                vocab,
                feat_dim,
                len,
                0.3,
                derive_seed(seed, 1000 + idx),
            );
            let disc = ToyDiscriminator::<f64>::init_random(
                vocab,
                feat_dim,
                0.3,
                derive_seed(seed, 2000 + idx),
            );
            let x: Vec<f64> = (0..feat_dim).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
            let reward = |w: &CaptionTokens| disc.validity(w, &x).unwrap().ln();

            let exact = expected_reward_grad(&gen, &x, reward);
            let mean = estimator_mean(&gen, &x, reward);
            for (a, b) in exact.iter().zip(&mean) {
                max_vs_exact = max_vs_exact.max((a - b).abs());
            }

            let params = gen.params().to_vec();
            let expected_reward = |p: &[f64]| {
                let mut g = gen.clone();
                g.set_params(p);
                enumerate_captions(vocab, len)
                    .into_iter()
                    .map(|w| g.log_prob(&w, &x).unwrap().exp() * reward(&w))
                    .sum::<f64>()
            };
            max_vs_fd = max_vs_fd.max(finite_difference_check(expected_reward, &mean, &params, 1e-5));
        }
    }
    report.rows.push(CheckRow {
        name: "reinforce/unbiasedness",
        instances,
        max_err: max_vs_exact,
        threshold: 1e-9,
    });
    report.rows.push(CheckRow {
        name: "reinforce/fd_cross_check",
        instances,
        max_err: max_vs_fd,
        threshold: 1e-6,
    });
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_suite_passes() {
        let report = run_gradient_suite(1234, 10);
        for row in &report.rows {
            assert!(row.passed(), "{}: max err {} >= {}", row.name, row.max_err, row.threshold);
        }
    }

    #[test]
    fn reinforce_suite_passes() {
        let report = run_reinforce_suite(99);
        for row in &report.rows {
            assert!(row.passed(), "{}: max err {} >= {}", row.name, row.max_err, row.threshold);
        }
    }

    #[test]
    fn two_token_single_step_case_matches_the_closed_form() {
        // first-step probabilities (0.6, 0.4), rewards 1 and 0: the exact
        // derivative of the expected reward with respect to the first logit
        // is p (1 - p) = 0.24
        let mut gen = ToyGenerator::<f64>::new(2, 1, 1);
        let mut params = gen.params().to_vec();
        let bias_start = gen.num_params() - 2;
        params[bias_start] = 0.6f64.ln();
        params[bias_start + 1] = 0.4f64.ln();
        gen.set_params(&params);
        let x = [0.0];
        let reward = |w: &CaptionTokens| if w.tokens()[0] == 0 { 1.0 } else { 0.0 };

        let exact = expected_reward_grad(&gen, &x, reward);
        let mean = estimator_mean(&gen, &x, reward);
        assert!((exact[bias_start] - 0.24).abs() < 1e-12);
        assert!((mean[bias_start] - 0.24).abs() < 1e-12);
        assert!((exact[bias_start + 1] - (-0.24)).abs() < 1e-12);
    }

    #[test]
    fn caption_enumeration_is_complete_and_distinct() {
        let all = enumerate_captions(3, 2);
        assert_eq!(all.len(), 9);
        let set: std::collections::HashSet<_> = all.iter().map(|c| c.tokens().to_vec()).collect();
        assert_eq!(set.len(), 9);
    }
}
