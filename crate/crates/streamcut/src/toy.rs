//! Minimal differentiable caption generator and discriminators over pair
//! features, with the three-phase semi-supervised training loop.
//!
//! Real feature extractors and recurrent decoders are out of scope here;
//! these models are deliberately tiny so that every log-likelihood and every
//! gradient is exact and checkable against finite differences.
//!
//! * [`ToyGenerator`]: autoregressive categorical model. Step logits are
//!   `W_feat x + W_prev onehot(w_prev) + b`; the first step omits the
//!   previous-token term. Captions sampled from it have length `max_len`.
//! * [`ToyDiscriminator`]: validity score
//!   `sigmoid(c' M x + u . x + v . c + b)` where `c` is the caption's
//!   length-normalized bag of tokens. The bilinear term is what lets it
//!   judge caption/pair compatibility.
//! * [`ToyImageOnlyDetector`]: logistic no-change classifier on features
//!   alone.
//!
//! Training ([`train_phases`]) is plain gradient descent with the learning
//! rate decaying by `lr_decay` every `decay_every` epochs, restarted per
//! phase. Phase 3 keeps the discriminator frozen and feeds its log-score
//! back through the score-function (REINFORCE) estimator, one sample per
//! pair per epoch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::losses::{generator_loss, GeneratorOutput, LossError};
use crate::model::CaptionTokens;
use crate::scalar::Scalar;
use crate::seeding::derive_seed;

/// Logit magnitude at which the sigmoid saturates; beyond it the score is
/// pinned just inside (0, 1) and the gradient is zero.
const LOGIT_CLAMP: f64 = 30.0;

fn sigmoid<T: Scalar>(z: T) -> T {
    let z = z.max(T::c(-LOGIT_CLAMP)).min(T::c(LOGIT_CLAMP));
    T::one() / (T::one() + (-z).exp())
}

fn draw_normals<T>(rng: &mut ChaCha8Rng, count: usize, scale: T) -> Vec<T>
where
    T: Scalar,
    StandardNormal: Distribution<T>,
{
    (0..count).map(|_| scale * rng.sample::<T, _>(StandardNormal)).collect()
}

/// Autoregressive categorical caption model conditioned on a pair-feature
/// vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGenerator<T> {
    vocab: usize,
    feat_dim: usize,
    max_len: usize,
    /// Packed `[W_feat (V*m) | W_prev (V*V) | b (V)]`.
    params: Vec<T>,
}

impl<T: Scalar> ToyGenerator<T> {
    pub fn new(vocab: usize, feat_dim: usize, max_len: usize) -> Self {
        assert!(vocab >= 1 && feat_dim >= 1 && max_len >= 1);
        let params = vec![T::zero(); vocab * feat_dim + vocab * vocab + vocab];
        Self { vocab, feat_dim, max_len, params }
    }

    pub fn init_random(vocab: usize, feat_dim: usize, max_len: usize, scale: T, seed: u64) -> Self
    where
        StandardNormal: Distribution<T>,
    {
        let mut gen = Self::new(vocab, feat_dim, max_len);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        gen.params = draw_normals(&mut rng, gen.params.len(), scale);
        gen
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[T]) {
        assert_eq!(params.len(), self.params.len());
        self.params.copy_from_slice(params);
    }

    fn check_caption(&self, caption: &CaptionTokens) -> Result<(), LossError> {
        for &tok in caption.tokens() {
            if tok as usize >= self.vocab {
                return Err(LossError::TokenOutOfVocab { token: tok, vocab: self.vocab });
            }
        }
        Ok(())
    }

    /// Step logits given the features and the previous token (none at the
    /// first step).
    fn logits(&self, features: &[T], prev: Option<u32>) -> Vec<T> {
        assert_eq!(features.len(), self.feat_dim);
        let (v, m) = (self.vocab, self.feat_dim);
        let w_feat = &self.params[0..v * m];
        let w_prev = &self.params[v * m..v * m + v * v];
        let bias = &self.params[v * m + v * v..];
        (0..v)
            .map(|row| {
                let mut z = bias[row];
                for (j, &x) in features.iter().enumerate() {
                    z += w_feat[row * m + j] * x;
                }
                if let Some(p) = prev {
                    z += w_prev[row * v + p as usize];
                }
                z
            })
            .collect()
    }

    fn log_softmax(logits: &[T]) -> Vec<T> {
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
        logits.iter().map(|&z| z - lse).collect()
    }

    /// Per-token log-probabilities of `caption` under teacher forcing.
    pub fn token_logprobs(&self, caption: &CaptionTokens, features: &[T]) -> Result<Vec<T>, LossError> {
        self.check_caption(caption)?;
        let mut out = Vec::with_capacity(caption.len());
        let mut prev = None;
        for &tok in caption.tokens() {
            let lsm = Self::log_softmax(&self.logits(features, prev));
            out.push(lsm[tok as usize]);
            prev = Some(tok);
        }
        Ok(out)
    }

    /// Exact log-likelihood `log p(caption | features)`.
    pub fn log_prob(&self, caption: &CaptionTokens, features: &[T]) -> Result<T, LossError> {
        Ok(self.token_logprobs(caption, features)?.into_iter().sum())
    }

    /// Analytic gradient of [`Self::log_prob`] with respect to the packed
    /// parameters.
    pub fn grad_log_prob(&self, caption: &CaptionTokens, features: &[T]) -> Result<Vec<T>, LossError> {
        self.check_caption(caption)?;
        let (v, m) = (self.vocab, self.feat_dim);
        let mut grad = vec![T::zero(); self.params.len()];
        let mut prev = None;
        for &tok in caption.tokens() {
            let logits = self.logits(features, prev);
            let lsm = Self::log_softmax(&logits);
            for row in 0..v {
                // onehot(token) - softmax
                let delta = if row == tok as usize { T::one() } else { T::zero() } - lsm[row].exp();
                for (j, &x) in features.iter().enumerate() {
                    grad[row * m + j] += delta * x;
                }
                if let Some(p) = prev {
                    grad[v * m + row * v + p as usize] += delta;
                }
                grad[v * m + v * v + row] += delta;
            }
            prev = Some(tok);
        }
        Ok(grad)
    }

    /// Gradient of the step-`k` token probability `softmax(z_k)[tokens[k]]`
    /// with respect to the parameters, through the softmax jacobian. This is
    /// a second algebraic route alongside [`Self::grad_log_prob`], used by
    /// the enumeration oracle.
    pub fn step_prob_grad(&self, features: &[T], tokens: &[u32], k: usize) -> Vec<T> {
        let (v, m) = (self.vocab, self.feat_dim);
        let prev = if k == 0 { None } else { Some(tokens[k - 1]) };
        let probs: Vec<T> =
            Self::log_softmax(&self.logits(features, prev)).iter().map(|lp| lp.exp()).collect();
        let sk = probs[tokens[k] as usize];
        let mut grad = vec![T::zero(); self.params.len()];
        for row in 0..v {
            let indicator = if row == tokens[k] as usize { T::one() } else { T::zero() };
            let coeff = sk * (indicator - probs[row]);
            for (j, &x) in features.iter().enumerate() {
                grad[row * m + j] += coeff * x;
            }
            if let Some(p) = prev {
                grad[v * m + row * v + p as usize] += coeff;
            }
            grad[v * m + v * v + row] += coeff;
        }
        grad
    }

    /// Samples a caption of length `max_len` token by token.
    pub fn sample(&self, features: &[T], rng: &mut ChaCha8Rng) -> CaptionTokens {
        let mut tokens = Vec::with_capacity(self.max_len);
        let mut prev = None;
        for _ in 0..self.max_len {
            let probs: Vec<f64> = Self::log_softmax(&self.logits(features, prev))
                .iter()
                .map(|lp| lp.exp().to_f64().expect("finite probability"))
                .collect();
            let draw: f64 = rng.random();
            let mut cumulative = 0.0;
            let mut chosen = self.vocab - 1;
            for (tok, &p) in probs.iter().enumerate() {
                cumulative += p;
                if draw < cumulative {
                    chosen = tok;
                    break;
                }
            }
            tokens.push(chosen as u32);
            prev = Some(chosen as u32);
        }
        CaptionTokens::new(tokens).expect("max_len >= 1")
    }

    /// Greedy decode: the argmax token at every step.
    pub fn greedy(&self, features: &[T]) -> CaptionTokens {
        let mut tokens = Vec::with_capacity(self.max_len);
        let mut prev = None;
        for _ in 0..self.max_len {
            let logits = self.logits(features, prev);
            let mut best = 0usize;
            for (tok, &z) in logits.iter().enumerate() {
                if z > logits[best] {
                    best = tok;
                }
            }
            tokens.push(best as u32);
            prev = Some(best as u32);
        }
        CaptionTokens::new(tokens).expect("max_len >= 1")
    }

    /// The final internal state of decoding `caption`: the last step's
    /// logit vector. Serves as the pair's hidden change representation.
    pub fn hidden_state(&self, caption: &CaptionTokens, features: &[T]) -> Result<Vec<T>, LossError> {
        self.check_caption(caption)?;
        let tokens = caption.tokens();
        let prev = if tokens.len() >= 2 { Some(tokens[tokens.len() - 2]) } else { None };
        Ok(self.logits(features, prev))
    }

    /// Generator output for a caption/pair, with zero attention penalties.
    pub fn output_for(&self, caption: &CaptionTokens, features: &[T]) -> Result<GeneratorOutput<T>, LossError> {
        Ok(GeneratorOutput::without_attention(self.token_logprobs(caption, features)?))
    }
}

/// Caption-validity discriminator over (caption bag, pair features).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDiscriminator<T> {
    vocab: usize,
    feat_dim: usize,
    /// Packed `[M (V*m) | u (m) | v (V) | b (1)]`.
    params: Vec<T>,
}

impl<T: Scalar> ToyDiscriminator<T> {
    pub fn new(vocab: usize, feat_dim: usize) -> Self {
        assert!(vocab >= 1 && feat_dim >= 1);
        let params = vec![T::zero(); vocab * feat_dim + feat_dim + vocab + 1];
        Self { vocab, feat_dim, params }
    }

    pub fn init_random(vocab: usize, feat_dim: usize, scale: T, seed: u64) -> Self
    where
        StandardNormal: Distribution<T>,
    {
        let mut disc = Self::new(vocab, feat_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        disc.params = draw_normals(&mut rng, disc.params.len(), scale);
        disc
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[T]) {
        assert_eq!(params.len(), self.params.len());
        self.params.copy_from_slice(params);
    }

    /// Length-normalized bag-of-tokens embedding of a caption.
    fn bag(&self, caption: &CaptionTokens) -> Result<Vec<T>, LossError> {
        let mut c = vec![T::zero(); self.vocab];
        let weight = T::one() / T::from_count(caption.len());
        for &tok in caption.tokens() {
            if tok as usize >= self.vocab {
                return Err(LossError::TokenOutOfVocab { token: tok, vocab: self.vocab });
            }
            c[tok as usize] += weight;
        }
        Ok(c)
    }

    fn logit(&self, bag: &[T], features: &[T]) -> T {
        assert_eq!(features.len(), self.feat_dim);
        let (v, m) = (self.vocab, self.feat_dim);
        let bilinear = &self.params[0..v * m];
        let w_feat = &self.params[v * m..v * m + m];
        let w_caption = &self.params[v * m + m..v * m + m + v];
        let bias = self.params[v * m + m + v];
        let mut z = bias;
        for (row, &cv) in bag.iter().enumerate() {
            if cv != T::zero() {
                for (j, &x) in features.iter().enumerate() {
                    z += cv * bilinear[row * m + j] * x;
                }
            }
        }
        for (j, &x) in features.iter().enumerate() {
            z += w_feat[j] * x;
        }
        for (row, &cv) in bag.iter().enumerate() {
            z += w_caption[row] * cv;
        }
        z
    }

    /// Probability that `caption` validly describes the change of the pair,
    /// strictly inside (0, 1).
    pub fn validity(&self, caption: &CaptionTokens, features: &[T]) -> Result<T, LossError> {
        Ok(sigmoid(self.logit(&self.bag(caption)?, features)))
    }

    /// Validity plus the gradient of the pre-sigmoid logit with respect to
    /// the packed parameters (zero in the saturated clamp region).
    pub fn validity_with_logit_grad(
        &self,
        caption: &CaptionTokens,
        features: &[T],
    ) -> Result<(T, Vec<T>), LossError> {
        let bag = self.bag(caption)?;
        let z = self.logit(&bag, features);
        let score = sigmoid(z);
        let (v, m) = (self.vocab, self.feat_dim);
        let mut grad = vec![T::zero(); self.params.len()];
        if z.abs() < T::c(LOGIT_CLAMP) {
            for (row, &cv) in bag.iter().enumerate() {
                if cv != T::zero() {
                    for (j, &x) in features.iter().enumerate() {
                        grad[row * m + j] = cv * x;
                    }
                    grad[v * m + m + row] = cv;
                }
            }
            for (j, &x) in features.iter().enumerate() {
                grad[v * m + j] = x;
            }
            grad[v * m + m + v] = T::one();
        }
        Ok((score, grad))
    }
}

/// Image-only no-change classifier: logistic regression on pair features.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyImageOnlyDetector<T> {
    feat_dim: usize,
    /// Packed `[w (m) | b (1)]`.
    params: Vec<T>,
}

impl<T: Scalar> ToyImageOnlyDetector<T> {
    pub fn new(feat_dim: usize) -> Self {
        assert!(feat_dim >= 1);
        Self { feat_dim, params: vec![T::zero(); feat_dim + 1] }
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    /// Probability that *no* change occurred between the pair.
    pub fn no_change_prob(&self, features: &[T]) -> T {
        assert_eq!(features.len(), self.feat_dim);
        let mut z = self.params[self.feat_dim];
        for (j, &x) in features.iter().enumerate() {
            z += self.params[j] * x;
        }
        sigmoid(z)
    }

    /// Fits the classifier with gradient descent on the binary
    /// cross-entropy; `label = true` marks no-change examples.
    pub fn train(
        &mut self,
        examples: &[(Vec<T>, bool)],
        config: &TrainConfig<T>,
    ) -> Result<Vec<T>, LossError> {
        if examples.is_empty() {
            return Err(LossError::EmptyDataset("image-only detector training"));
        }
        let mut trace = Vec::with_capacity(config.epochs_phase2 + 1);
        for epoch in 0..=config.epochs_phase2 {
            let mut loss = T::zero();
            let mut grad = vec![T::zero(); self.params.len()];
            for (features, label) in examples {
                let prob = self.no_change_prob(features);
                let y = if *label { T::one() } else { T::zero() };
                loss -= y * prob.ln() + (T::one() - y) * (T::one() - prob).ln();
                let dz = prob - y;
                for (j, &x) in features.iter().enumerate() {
                    grad[j] += dz * x;
                }
                grad[self.feat_dim] += dz;
            }
            if !loss.is_finite() {
                return Err(LossError::DivergedLoss { phase: "image-only", epoch });
            }
            trace.push(loss);
            if epoch == config.epochs_phase2 {
                break;
            }
            let lr = config.lr_at(epoch);
            for (p, &g) in self.params.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
        }
        Ok(trace)
    }
}

/// Hyperparameters of the three training phases.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub epochs_phase3: usize,
    pub learning_rate: T,
    /// Multiplicative decay applied every `decay_every` epochs.
    pub lr_decay: T,
    pub decay_every: usize,
    /// Weight of the discriminator-reward terms in the phase-3 loss.
    pub lambda_rl: T,
    pub lambda_attn: T,
    pub mu_entropy: T,
    pub init_scale: T,
    pub seed: u64,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            epochs_phase1: 40,
            epochs_phase2: 40,
            epochs_phase3: 20,
            learning_rate: T::c(1e-3),
            lr_decay: T::c(0.9),
            decay_every: 5,
            lambda_rl: T::c(0.2),
            lambda_attn: T::c(0.1),
            mu_entropy: T::c(0.05),
            init_scale: T::c(0.1),
            seed: 0,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    fn lr_at(&self, epoch: usize) -> T {
        self.learning_rate * self.lr_decay.powi((epoch / self.decay_every.max(1)) as i32)
    }
}

/// A labeled example: pair features and the change caption.
pub type LabeledExample<T> = (Vec<T>, CaptionTokens);

/// Training data: labeled (features, caption) examples and unlabeled
/// feature vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ToyDataset<T> {
    pub labeled: Vec<LabeledExample<T>>,
    pub unlabeled: Vec<Vec<T>>,
}

/// Model dimensions shared by the generator and discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToySpec {
    pub vocab: usize,
    pub feat_dim: usize,
    pub max_len: usize,
}

/// Trained models plus per-phase loss traces. Each trace has one entry per
/// epoch boundary (`epochs + 1` values, the first recorded before any
/// update); the phase-3 trace is evaluated with a fixed sampling seed so
/// consecutive entries are comparable.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub generator: ToyGenerator<T>,
    pub discriminator: ToyDiscriminator<T>,
    pub phase1_trace: Vec<T>,
    pub phase2_trace: Vec<T>,
    pub phase3_trace: Vec<T>,
}

fn check_finite<T: Scalar>(loss: T, phase: &'static str, epoch: usize) -> Result<(), LossError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(LossError::DivergedLoss { phase, epoch })
    }
}

/// Phase 1: fit the generator to the labeled captions by gradient descent
/// on the regularized cross-entropy. Returns the loss trace.
pub fn run_phase1<T: Scalar>(
    generator: &mut ToyGenerator<T>,
    labeled: &[LabeledExample<T>],
    config: &TrainConfig<T>,
) -> Result<Vec<T>, LossError> {
    if labeled.is_empty() {
        return Err(LossError::EmptyDataset("phase 1"));
    }
    let mut trace = Vec::with_capacity(config.epochs_phase1 + 1);
    for epoch in 0..=config.epochs_phase1 {
        let outputs = labeled
            .iter()
            .map(|(x, w)| generator.output_for(w, x))
            .collect::<Result<Vec<_>, _>>()?;
        let loss = generator_loss(&outputs, config.lambda_attn, config.mu_entropy)?;
        check_finite(loss, "phase 1", epoch)?;
        trace.push(loss);
        if epoch == config.epochs_phase1 {
            break;
        }
        let mut grad = vec![T::zero(); generator.num_params()];
        for (x, w) in labeled {
            for (g, d) in grad.iter_mut().zip(generator.grad_log_prob(w, x)?) {
                *g -= d; // minimizing the negative log-likelihood
            }
        }
        let lr = config.lr_at(epoch);
        let updated: Vec<T> =
            generator.params().iter().zip(&grad).map(|(&p, &g)| p - lr * g).collect();
        generator.set_params(&updated);
    }
    Ok(trace)
}

/// Phase 2: fit the discriminator on matched positives, mismatched labeled
/// negatives (all ordered pairs of distinct labeled examples), and
/// labeled-caption/unlabeled-pair negatives. Returns the loss trace.
pub fn run_phase2<T: Scalar>(
    discriminator: &mut ToyDiscriminator<T>,
    labeled: &[LabeledExample<T>],
    unlabeled: &[Vec<T>],
    config: &TrainConfig<T>,
) -> Result<Vec<T>, LossError> {
    if labeled.is_empty() {
        return Err(LossError::EmptyDataset("phase 2"));
    }
    let mut trace = Vec::with_capacity(config.epochs_phase2 + 1);
    for epoch in 0..=config.epochs_phase2 {
        let mut loss = T::zero();
        let mut grad = vec![T::zero(); discriminator.num_params()];
        let mut accumulate = |score: T, logit_grad: &[T], positive: bool| {
            if positive {
                loss -= score.ln();
                let coeff = score - T::one();
                for (g, &d) in grad.iter_mut().zip(logit_grad) {
                    *g += coeff * d;
                }
            } else {
                loss -= (T::one() - score).ln();
                for (g, &d) in grad.iter_mut().zip(logit_grad) {
                    *g += score * d;
                }
            }
        };
        for (x, w) in labeled {
            let (score, logit_grad) = discriminator.validity_with_logit_grad(w, x)?;
            accumulate(score, &logit_grad, true);
        }
        for (i, (_, w)) in labeled.iter().enumerate() {
            for (j, (x_other, _)) in labeled.iter().enumerate() {
                if i != j {
                    let (score, logit_grad) = discriminator.validity_with_logit_grad(w, x_other)?;
                    accumulate(score, &logit_grad, false);
                }
            }
        }
        for (_, w) in labeled {
            for x in unlabeled {
                let (score, logit_grad) = discriminator.validity_with_logit_grad(w, x)?;
                accumulate(score, &logit_grad, false);
            }
        }
        check_finite(loss, "phase 2", epoch)?;
        trace.push(loss);
        if epoch == config.epochs_phase2 {
            break;
        }
        let lr = config.lr_at(epoch);
        let updated: Vec<T> =
            discriminator.params().iter().zip(&grad).map(|(&p, &g)| p - lr * g).collect();
        discriminator.set_params(&updated);
    }
    Ok(trace)
}

/// One REINFORCE contribution: `reward * grad log p(caption | features)`.
pub fn reinforce_term<T: Scalar>(
    generator: &ToyGenerator<T>,
    features: &[T],
    caption: &CaptionTokens,
    reward: T,
) -> Result<Vec<T>, LossError> {
    Ok(generator.grad_log_prob(caption, features)?.into_iter().map(|g| reward * g).collect())
}

/// Single-sample score-function gradient estimate of the expected reward:
/// samples one caption (seeded) and returns
/// `R(caption) * grad log p(caption | features)` with `R = log validity`.
pub fn reinforce_gradient<T: Scalar>(
    generator: &ToyGenerator<T>,
    features: &[T],
    validity: impl Fn(&CaptionTokens, &[T]) -> Result<T, LossError>,
    sample_seed: u64,
) -> Result<Vec<T>, LossError> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let caption = generator.sample(features, &mut rng);
    let reward = validity(&caption, features)?.ln();
    reinforce_term(generator, features, &caption, reward)
}

/// A labeled item of the phase-3 objective: the generator output used for
/// its likelihood term plus the pair features used for sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase3LabeledItem<T> {
    pub output: GeneratorOutput<T>,
    pub features: Vec<T>,
}

/// The phase-3 objective value: the generator loss over the labeled batch
/// minus `lambda_rl` times the summed log-validities of captions sampled
/// (seeded) for every labeled and unlabeled pair.
#[allow(clippy::too_many_arguments)]
pub fn phase3_loss<T: Scalar>(
    generator: &ToyGenerator<T>,
    labeled: &[Phase3LabeledItem<T>],
    unlabeled: &[Vec<T>],
    validity: impl Fn(&CaptionTokens, &[T]) -> Result<T, LossError>,
    lambda_attn: T,
    mu_entropy: T,
    lambda_rl: T,
    sample_seed: u64,
) -> Result<T, LossError> {
    let outputs: Vec<GeneratorOutput<T>> = labeled.iter().map(|item| item.output.clone()).collect();
    let mut total = generator_loss(&outputs, lambda_attn, mu_entropy)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    for features in labeled.iter().map(|item| item.features.as_slice()).chain(unlabeled.iter().map(Vec::as_slice)) {
        let caption = generator.sample(features, &mut rng);
        total -= lambda_rl * validity(&caption, features)?.ln();
    }
    Ok(total)
}

/// Phase 3: fine-tune the generator against the frozen discriminator.
/// Likelihood terms update by their exact gradient; the reward terms update
/// through the REINFORCE estimator, one fresh sample per pair per epoch.
/// Returns the loss trace evaluated with a fixed sampling seed.
pub fn run_phase3<T: Scalar>(
    generator: &mut ToyGenerator<T>,
    discriminator: &ToyDiscriminator<T>,
    labeled: &[LabeledExample<T>],
    unlabeled: &[Vec<T>],
    config: &TrainConfig<T>,
) -> Result<Vec<T>, LossError> {
    if labeled.is_empty() {
        return Err(LossError::EmptyDataset("phase 3"));
    }
    let sample_root = derive_seed(config.seed, 3);
    let eval_seed = derive_seed(config.seed, 4);
    let validity = |w: &CaptionTokens, x: &[T]| discriminator.validity(w, x);

    let eval_loss = |generator: &ToyGenerator<T>| -> Result<T, LossError> {
        let items = labeled
            .iter()
            .map(|(x, w)| {
                Ok(Phase3LabeledItem { output: generator.output_for(w, x)?, features: x.clone() })
            })
            .collect::<Result<Vec<_>, LossError>>()?;
        phase3_loss(
            generator,
            &items,
            unlabeled,
            validity,
            config.lambda_attn,
            config.mu_entropy,
            config.lambda_rl,
            eval_seed,
        )
    };

    let mut trace = Vec::with_capacity(config.epochs_phase3 + 1);
    let initial = eval_loss(generator)?;
    check_finite(initial, "phase 3", 0)?;
    trace.push(initial);

    for epoch in 0..config.epochs_phase3 {
        let mut grad = vec![T::zero(); generator.num_params()];
        for (x, w) in labeled {
            for (g, d) in grad.iter_mut().zip(generator.grad_log_prob(w, x)?) {
                *g -= d;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(sample_root, epoch as u64));
        for features in labeled.iter().map(|(x, _)| x.as_slice()).chain(unlabeled.iter().map(Vec::as_slice)) {
            let caption = generator.sample(features, &mut rng);
            let reward = validity(&caption, features)?.ln();
            let term = reinforce_term(generator, features, &caption, reward)?;
            for (g, d) in grad.iter_mut().zip(term) {
                *g -= config.lambda_rl * d;
            }
        }
        let lr = config.lr_at(epoch);
        let updated: Vec<T> =
            generator.params().iter().zip(&grad).map(|(&p, &g)| p - lr * g).collect();
        generator.set_params(&updated);

        let loss = eval_loss(generator)?;
        check_finite(loss, "phase 3", epoch + 1)?;
        trace.push(loss);
    }
    Ok(trace)
}

/// Runs the full three-phase procedure from random initializations derived
/// from `config.seed`. Bit-reproducible for identical inputs.
pub fn train_phases<T>(
    spec: &ToySpec,
    data: &ToyDataset<T>,
    config: &TrainConfig<T>,
) -> Result<TrainOutcome<T>, LossError>
where
    T: Scalar,
    StandardNormal: Distribution<T>,
{
    let mut generator = ToyGenerator::init_random(
        spec.vocab,
        spec.feat_dim,
        spec.max_len,
        config.init_scale,
        derive_seed(config.seed, 1),
    );
    let mut discriminator = ToyDiscriminator::init_random(
        spec.vocab,
        spec.feat_dim,
        config.init_scale,
        derive_seed(config.seed, 2),
    );
    let phase1_trace = run_phase1(&mut generator, &data.labeled, config)?;
    let phase2_trace = run_phase2(&mut discriminator, &data.labeled, &data.unlabeled, config)?;
    let phase3_trace =
        run_phase3(&mut generator, &discriminator, &data.labeled, &data.unlabeled, config)?;
    Ok(TrainOutcome { generator, discriminator, phase1_trace, phase2_trace, phase3_trace })
}

/// Builds a linearly separable toy dataset. Change class `c` (token `c+1`)
/// contributes one labeled example with features along basis axis `c` plus
/// isotropic noise, so each change caption occurs exactly once and a
/// randomly re-matched change caption is never a valid description.
/// `no_change_labeled` examples (token 0) sit near the origin. Unlabeled
/// examples always contain a change and are drawn from
/// `n_unlabeled_classes` extra feature axes that never appear with a
/// caption.
pub fn separable_dataset<T>(
    n_labeled_classes: usize,
    n_unlabeled_classes: usize,
    feat_dim: usize,
    no_change_labeled: usize,
    unlabeled_per_class: usize,
    noise: T,
    seed: u64,
) -> ToyDataset<T>
where
    T: Scalar,
    StandardNormal: Distribution<T>,
{
    assert!(n_labeled_classes >= 1);
    assert!(feat_dim >= n_labeled_classes + n_unlabeled_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = |axis: Option<usize>| -> Vec<T> {
        let mut x = draw_normals(&mut rng, feat_dim, noise);
        if let Some(a) = axis {
            x[a] += T::one();
        }
        x
    };
    let mut data = ToyDataset::default();
    for c in 0..n_labeled_classes {
        let caption = CaptionTokens::new(vec![(c + 1) as u32]).expect("non-empty");
        data.labeled.push((features(Some(c)), caption));
    }
    for _ in 0..no_change_labeled {
        data.labeled.push((features(None), CaptionTokens::no_change()));
    }
    for c in 0..n_unlabeled_classes {
        for _ in 0..unlabeled_per_class {
            data.unlabeled.push(features(Some(n_labeled_classes + c)));
        }
    }
    data
}

/// Accuracy of the discriminator on matched pairs (expected valid) and
/// cross-caption mismatches (expected invalid) of a held-out labeled set.
pub fn heldout_accuracy<T: Scalar>(
    discriminator: &ToyDiscriminator<T>,
    heldout: &[LabeledExample<T>],
) -> Result<f64, LossError> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (i, (x_i, w_i)) in heldout.iter().enumerate() {
        let score = discriminator.validity(w_i, x_i)?;
        total += 1;
        if score > T::c(0.5) {
            correct += 1;
        }
        for (j, (x_j, w_j)) in heldout.iter().enumerate() {
            if i == j || w_i == w_j {
                continue;
            }
            let score = discriminator.validity(w_i, x_j)?;
            total += 1;
            if score < T::c(0.5) {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / total as f64)
}
