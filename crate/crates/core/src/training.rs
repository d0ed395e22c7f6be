//! Rolling-sampling contrastive training.
//!
//! Each step draws, per listing, one auxiliary image view and one auxiliary
//! text view uniformly at random, fuses each with its primary as
//! `alpha * primary + (1 - alpha) * auxiliary`, and scores the batch with a
//! symmetric in-batch InfoNCE loss. Per step this costs four encoder calls per
//! listing no matter how many views a listing has.
//!
//! Averaged over the draw, the fused dot product equals the dot product of the
//! fully fused embeddings under [`design_weights`]; see [`rolled_expectation`].

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_catalog, permutation, Listing, SyntheticConfig};
use crate::encoder::{init_params, EncoderConfig, EncoderPair, EncoderParams, ForwardTrace, GradientBuffer};
use crate::error::{Error, Result};
use crate::fusion::{check_dim, design_weights, fuse, fuse_rolled, Embedding, Modality, ViewSet, WeightScheme};
use crate::scalar::{self, Scalar};

const STREAM_TRAINING: u64 = 7;
const TEXT_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Primary plus one sampled auxiliary view per modality.
    Multiview,
    /// Primary views only.
    Singleview,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Fresh uniform auxiliary indices at every step.
    Independent,
    /// Epoch `e` uses auxiliary `1 + e mod (n - 1)` in each modality.
    RoundRobin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub temperature: f64,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub sampling: SamplingMode,
    pub embed_dim: usize,
    pub hidden_dim: Option<usize>,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: WeightScheme::<f64>::DEFAULT_ALPHA,
            temperature: 0.07,
            batch_size: 32,
            grad_accum: 1,
            learning_rate: 5e-3,
            weight_decay: 0.0,
            epochs: 10,
            seed: 0,
            mode: TrainMode::Multiview,
            sampling: SamplingMode::Independent,
            embed_dim: 16,
            hidden_dim: None,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    /// Large-scale schedule: batch 128, 4 accumulation steps, lr 1e-5, 30 epochs.
    pub fn large_scale_preset() -> Self {
        Self { batch_size: 128, grad_accum: 4, learning_rate: 1e-5, epochs: 30, ..Self::default() }
    }

    pub fn scheme(&self) -> Result<WeightScheme<f64>> {
        WeightScheme::new(self.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme()?;
        let fail = |msg: &str| Err(Error::ConfigInvalid(msg.to_string()));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail("temperature must be positive");
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            return fail("batch_size and grad_accum must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay must be nonnegative");
        }
        if self.embed_dim == 0 || self.hidden_dim == Some(0) {
            return fail("embedding and hidden dimensions must be at least 1");
        }
        Ok(())
    }
}

/// Uniform auxiliary indices for one listing; `None` when a modality has no
/// auxiliary views. Image and text draws are independent.
pub fn sample_rolling<R: Rng + ?Sized>(listing: &Listing, rng: &mut R) -> (Option<usize>, Option<usize>) {
    let pick = |count: usize, rng: &mut R| (count > 1).then(|| rng.random_range(1..count));
    let i = pick(listing.image_count(), rng);
    let j = pick(listing.text_count(), rng);
    (i, j)
}

/// Chooses auxiliary views and counts how often it was asked to.
#[derive(Clone, Debug)]
pub struct RollingSampler {
    mode: SamplingMode,
    epoch: usize,
    draws: u64,
}

impl RollingSampler {
    pub fn new(mode: SamplingMode) -> Self {
        Self { mode, epoch: 0, draws: 0 }
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn draw<R: Rng + ?Sized>(&mut self, listing: &Listing, rng: &mut R) -> (Option<usize>, Option<usize>) {
        self.draws += 1;
        match self.mode {
            SamplingMode::Independent => sample_rolling(listing, rng),
            SamplingMode::RoundRobin => {
                let pick = |count: usize| (count > 1).then(|| 1 + self.epoch % (count - 1));
                (pick(listing.image_count()), pick(listing.text_count()))
            }
        }
    }
}

/// Encoded primary and optional auxiliary of one modality, with what the
/// backward pass needs.
#[derive(Clone, Debug)]
struct FusedTrace {
    primary: ForwardTrace<f64>,
    auxiliary: Option<(usize, ForwardTrace<f64>)>,
    /// Norm of `alpha * u_p + (1 - alpha) * u_a` before renormalization.
    pre_norm: f64,
}

#[derive(Clone, Debug)]
pub struct BatchSample<'a> {
    pub listing: &'a Listing,
    pub fused_image: Embedding<f64>,
    pub fused_text: Embedding<f64>,
    pub aux_image: Option<usize>,
    pub aux_text: Option<usize>,
    image_trace: FusedTrace,
    text_trace: FusedTrace,
}

impl BatchSample<'_> {
    pub fn listing_id(&self) -> &str {
        &self.listing.id
    }
}

/// Draws auxiliary indices (multiview mode only) and builds the batch.
pub fn build_batch<'a, R: Rng + ?Sized>(
    listings: &[&'a Listing],
    encoders: &EncoderPair<f64>,
    config: &TrainConfig,
    sampler: &mut RollingSampler,
    rng: &mut R,
) -> Result<Vec<BatchSample<'a>>> {
    let picks: Vec<_> = match config.mode {
        TrainMode::Multiview => listings.iter().map(|l| sampler.draw(l, rng)).collect(),
        TrainMode::Singleview => vec![(None, None); listings.len()],
    };
    build_batch_with(listings, &picks, encoders, config)
}

/// Builds the batch for explicit auxiliary picks.
pub fn build_batch_with<'a>(
    listings: &[&'a Listing],
    picks: &[(Option<usize>, Option<usize>)],
    encoders: &EncoderPair<f64>,
    config: &TrainConfig,
) -> Result<Vec<BatchSample<'a>>> {
    check_dim(listings.len(), picks.len())?;
    let scheme = config.scheme()?;
    listings
        .iter()
        .zip(picks)
        .map(|(&listing, &(aux_image, aux_text))| {
            let (fused_image, image_trace) = fuse_views(&encoders.image, &listing.image_views, aux_image, scheme)?;
            let (fused_text, text_trace) = fuse_views(&encoders.text, &listing.text_views, aux_text, scheme)?;
            Ok(BatchSample { listing, fused_image, fused_text, aux_image, aux_text, image_trace, text_trace })
        })
        .collect()
}

fn fuse_views(
    encoder: &crate::encoder::Encoder<f64>,
    views: &[Vec<f64>],
    aux: Option<usize>,
    scheme: WeightScheme<f64>,
) -> Result<(Embedding<f64>, FusedTrace)> {
    let primary = encoder.encode_traced(&views[0])?;
    match aux {
        None => {
            let fused = primary.output.clone();
            Ok((fused, FusedTrace { primary, auxiliary: None, pre_norm: 1.0 }))
        }
        Some(i) => {
            let raw = views.get(i).ok_or(Error::DimensionMismatch { expected: views.len(), found: i })?;
            let aux = encoder.encode_traced(raw)?;
            let summed = fuse_rolled(&primary.output, &aux.output, scheme, false)?;
            let pre_norm = summed.norm();
            let fused = summed.normalized()?;
            Ok((fused, FusedTrace { primary, auxiliary: Some((i, aux)), pre_norm }))
        }
    }
}

/// Log-softmax tables of a `B x B` logit matrix, row-wise and column-wise.
struct SoftmaxTables<T> {
    row_lse: Vec<T>,
    col_lse: Vec<T>,
}

fn log_sum_exp<T: Scalar>(values: impl Iterator<Item = T> + Clone) -> T {
    let max = values.clone().fold(T::neg_infinity(), T::max);
    max + values.map(|v| (v - max).exp()).sum::<T>().ln()
}

fn softmax_tables<T: Scalar>(logits: &[T], b: usize) -> SoftmaxTables<T> {
    let row_lse = (0..b).map(|k| log_sum_exp(logits[k * b..(k + 1) * b].iter().copied())).collect();
    let col_lse = (0..b).map(|l| log_sum_exp((0..b).map(|k| logits[k * b + l]))).collect();
    SoftmaxTables { row_lse, col_lse }
}

/// Symmetric InfoNCE of a `B x B` logit matrix with positives on the diagonal:
/// `-(1/2B) sum_k [log softmax_row(S)_kk + log softmax_col(S)_kk]`.
pub fn infonce_from_logits<T: Scalar>(logits: &[T], batch: usize) -> Result<T> {
    check_dim(batch * batch, logits.len())?;
    if batch == 0 {
        return Err(Error::Empty);
    }
    let t = softmax_tables(logits, batch);
    let mut total = T::zero();
    for k in 0..batch {
        let s = logits[k * batch + k];
        total += (s - t.row_lse[k]) + (s - t.col_lse[k]);
    }
    Ok(-total / T::from_usize(2 * batch).unwrap())
}

#[derive(Clone, Debug)]
pub struct ContrastiveLoss<T> {
    pub loss: T,
    /// Row-major `B x B` matrix `S[k][l] = <image_k, text_l> / tau`.
    pub similarity: Vec<T>,
    pub batch: usize,
}

fn similarity_matrix<T: Scalar>(images: &[Embedding<T>], texts: &[Embedding<T>], temperature: T) -> Result<Vec<T>> {
    check_dim(images.len(), texts.len())?;
    if images.is_empty() {
        return Err(Error::Empty);
    }
    let mut s = Vec::with_capacity(images.len() * texts.len());
    for img in images {
        for txt in texts {
            s.push(img.dot(txt)? / temperature);
        }
    }
    Ok(s)
}

/// Symmetric temperature-scaled contrastive loss with in-batch negatives.
pub fn clip_infonce_loss<T: Scalar>(
    images: &[Embedding<T>],
    texts: &[Embedding<T>],
    temperature: T,
) -> Result<ContrastiveLoss<T>> {
    let similarity = similarity_matrix(images, texts, temperature)?;
    let batch = images.len();
    let loss = infonce_from_logits(&similarity, batch)?;
    Ok(ContrastiveLoss { loss, similarity, batch })
}

/// Per-item gradients, one row per batch entry.
pub type EmbeddingGrads<T> = Vec<Vec<T>>;

/// Loss value and its gradients with respect to every image and text embedding.
pub fn clip_infonce_backward<T: Scalar>(
    images: &[Embedding<T>],
    texts: &[Embedding<T>],
    temperature: T,
) -> Result<(T, EmbeddingGrads<T>, EmbeddingGrads<T>)> {
    let s = similarity_matrix(images, texts, temperature)?;
    let b = images.len();
    let dim = images[0].dim();
    let t = softmax_tables(&s, b);
    let inv = T::one() / T::from_usize(2 * b).unwrap();

    // dL/dS[k][l] = (P_row[k][l] + P_col[k][l] - 2 [k == l]) / 2B
    let mut d_logits = vec![T::zero(); b * b];
    let mut total = T::zero();
    for k in 0..b {
        for l in 0..b {
            let x = s[k * b + l];
            let p_row = (x - t.row_lse[k]).exp();
            let p_col = (x - t.col_lse[l]).exp();
            let target = if k == l { T::lit(2.0) } else { T::zero() };
            d_logits[k * b + l] = (p_row + p_col - target) * inv;
        }
        let x = s[k * b + k];
        total += (x - t.row_lse[k]) + (x - t.col_lse[k]);
    }
    let loss = -total * inv;

    let mut d_images = vec![vec![T::zero(); dim]; b];
    let mut d_texts = vec![vec![T::zero(); dim]; b];
    for k in 0..b {
        for l in 0..b {
            let g = d_logits[k * b + l] / temperature;
            for (di, &tv) in d_images[k].iter_mut().zip(texts[l].as_slice()) {
                *di += g * tv;
            }
            for (dt, &iv) in d_texts[l].iter_mut().zip(images[k].as_slice()) {
                *dt += g * iv;
            }
        }
    }
    Ok((loss, d_images, d_texts))
}

/// Gradients of the batch loss with respect to both encoders, plus the loss.
pub fn loss_backward(
    batch: &[BatchSample<'_>],
    encoders: &EncoderPair<f64>,
    config: &TrainConfig,
) -> Result<(GradientBuffer<f64>, GradientBuffer<f64>, f64)> {
    let scheme = config.scheme()?;
    let images: Vec<_> = batch.iter().map(|s| s.fused_image.clone()).collect();
    let texts: Vec<_> = batch.iter().map(|s| s.fused_text.clone()).collect();
    let (loss, d_images, d_texts) = clip_infonce_backward(&images, &texts, config.temperature)?;

    let mut g_image = EncoderParams::zeros_like(encoders.image.params());
    let mut g_text = EncoderParams::zeros_like(encoders.text.params());
    for (k, sample) in batch.iter().enumerate() {
        backprop_fused(
            encoders.image.params(),
            &sample.listing.image_views,
            &sample.image_trace,
            &sample.fused_image,
            &d_images[k],
            scheme,
            &mut g_image,
        )?;
        backprop_fused(
            encoders.text.params(),
            &sample.listing.text_views,
            &sample.text_trace,
            &sample.fused_text,
            &d_texts[k],
            scheme,
            &mut g_text,
        )?;
    }
    Ok((g_image, g_text, loss))
}

fn backprop_fused(
    params: &EncoderParams<f64>,
    views: &[Vec<f64>],
    trace: &FusedTrace,
    fused: &Embedding<f64>,
    upstream: &[f64],
    scheme: WeightScheme<f64>,
    grad: &mut GradientBuffer<f64>,
) -> Result<()> {
    match &trace.auxiliary {
        None => params.backward_into(&views[0], &trace.primary, upstream, grad),
        Some((i, aux)) => {
            let f = fused.as_slice();
            let fg = scalar::dot(f, upstream);
            let d_sum: Vec<f64> = upstream.iter().zip(f).map(|(&g, &fi)| (g - fi * fg) / trace.pre_norm).collect();
            let alpha = scheme.alpha();
            let d_primary: Vec<f64> = d_sum.iter().map(|&d| alpha * d).collect();
            let d_aux: Vec<f64> = d_sum.iter().map(|&d| (1.0 - alpha) * d).collect();
            params.backward_into(&views[0], &trace.primary, &d_primary, grad)?;
            params.backward_into(&views[*i], aux, &d_aux, grad)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig<T> {
    pub learning_rate: T,
    pub weight_decay: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamConfig<T> {
    pub fn new(learning_rate: T, weight_decay: T) -> Self {
        Self { learning_rate, weight_decay, beta1: T::lit(0.9), beta2: T::lit(0.999), eps: T::lit(1e-8) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: EncoderParams<T>,
    pub second_moment: EncoderParams<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &EncoderParams<T>) -> Self {
        Self { first_moment: EncoderParams::zeros_like(params), second_moment: EncoderParams::zeros_like(params), step: 0 }
    }
}

/// One AdamW update with bias correction, followed by decoupled weight decay
/// `p <- p - lr * wd * p`.
pub fn adam_step<T: Scalar>(
    params: &mut EncoderParams<T>,
    grads: &GradientBuffer<T>,
    state: &mut AdamState<T>,
    config: &AdamConfig<T>,
) -> Result<()> {
    check_dim(params.num_values(), grads.num_values())?;
    check_dim(params.num_values(), state.first_moment.num_values())?;
    state.step += 1;
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let bc1 = T::one() - config.beta1.powi(t);
    let bc2 = T::one() - config.beta2.powi(t);
    let decay = config.learning_rate * config.weight_decay;
    let moments = state.first_moment.values_mut().zip(state.second_moment.values_mut());
    for ((p, &g), (m, v)) in params.values_mut().zip(grads.values()).zip(moments) {
        *m = config.beta1 * *m + (T::one() - config.beta1) * g;
        *v = config.beta2 * *v + (T::one() - config.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
        *p -= decay * *p;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStat {
    pub step: usize,
    pub loss: f64,
    pub fwd_calls: u64,
    pub ms_per_step: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainStats {
    pub steps: Vec<StepStat>,
    /// Mean step loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Number of auxiliary-view draws made by the rolling sampler.
    pub rolling_draws: u64,
}

impl TrainStats {
    /// One JSON object per line: `{"step", "loss", "fwd_calls", "ms_per_step"}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("step stats serialize"));
            out.push('\n');
        }
        out
    }
}

/// Encoder pair initialized for `listings` as [`train`] would before its first step.
pub fn init_encoders(listings: &[Listing], config: &TrainConfig) -> Result<EncoderPair<f64>> {
    let first = listings.first().ok_or(Error::Empty)?;
    let cfg = |input_dim: usize, seed: u64| EncoderConfig {
        input_dim,
        output_dim: config.embed_dim,
        hidden_dim: config.hidden_dim,
        seed,
    };
    let image = init_params(&cfg(first.image_views[0].len(), config.seed))?;
    let text = init_params(&cfg(first.text_views[0].len(), config.seed.wrapping_add(TEXT_SEED_OFFSET)))?;
    Ok(EncoderPair::new(image, text))
}

/// Trains both encoders; fully determined by `(listings, config)`.
pub fn train(listings: &[Listing], config: &TrainConfig) -> Result<(EncoderPair<f64>, TrainStats)> {
    config.validate()?;
    let mut encoders = init_encoders(listings, config)?;
    let adam = AdamConfig::new(config.learning_rate, config.weight_decay);
    let mut image_state = AdamState::new(encoders.image.params());
    let mut text_state = AdamState::new(encoders.text.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(STREAM_TRAINING);
    let mut sampler = RollingSampler::new(config.sampling);
    let mut stats = TrainStats::default();

    'epochs: for epoch in 0..config.epochs {
        sampler.set_epoch(epoch);
        let order = permutation(listings.len(), &mut rng);
        let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0usize;
        for group in batches.chunks(config.grad_accum) {
            if config.max_steps.is_some_and(|max| stats.steps.len() >= max) {
                break 'epochs;
            }
            let started = Instant::now();
            let calls_before = encoders.forward_calls();
            let mut g_image = EncoderParams::zeros_like(encoders.image.params());
            let mut g_text = EncoderParams::zeros_like(encoders.text.params());
            let mut loss = 0.0;
            for idx in group {
                let members: Vec<&Listing> = idx.iter().map(|&k| &listings[k]).collect();
                let batch = build_batch(&members, &encoders, config, &mut sampler, &mut rng)?;
                let (gi, gt, l) = loss_backward(&batch, &encoders, config)?;
                g_image.add_assign(&gi)?;
                g_text.add_assign(&gt)?;
                loss += l;
            }
            loss /= group.len() as f64;
            adam_step(encoders.image.params_mut(), &g_image, &mut image_state, &adam)?;
            adam_step(encoders.text.params_mut(), &g_text, &mut text_state, &adam)?;
            stats.steps.push(StepStat {
                step: stats.steps.len(),
                loss,
                fwd_calls: encoders.forward_calls() - calls_before,
                ms_per_step: started.elapsed().as_secs_f64() * 1e3,
            });
            epoch_loss += loss;
            epoch_steps += 1;
        }
        if epoch_steps > 0 {
            stats.epoch_losses.push(epoch_loss / epoch_steps as f64);
        }
    }
    stats.rolling_draws = sampler.draws();
    Ok((encoders, stats))
}

/// Exhaustive mean of the raw rolled similarity over all auxiliary pairs, and
/// the raw similarity of the fully fused embeddings under `design_weights`.
pub fn rolled_expectation<T: Scalar>(
    image_views: &ViewSet<T>,
    text_views: &ViewSet<T>,
    scheme: WeightScheme<T>,
) -> Result<(T, T)> {
    let (n, m) = (image_views.len(), text_views.len());
    if n < 2 || m < 2 {
        return Err(Error::TooFewViews { images: n, texts: m });
    }
    let fused_images = image_views
        .auxiliaries()
        .iter()
        .map(|aux| fuse_rolled(image_views.primary(), aux, scheme, false))
        .collect::<Result<Vec<_>>>()?;
    let fused_texts = text_views
        .auxiliaries()
        .iter()
        .map(|aux| fuse_rolled(text_views.primary(), aux, scheme, false))
        .collect::<Result<Vec<_>>>()?;
    let mut total = T::zero();
    for i in &fused_images {
        for t in &fused_texts {
            total += i.dot(t)?;
        }
    }
    let exhaustive = total / T::from_usize((n - 1) * (m - 1)).unwrap();

    let full_image = fuse(image_views, &design_weights(n, scheme)?, false)?;
    let full_text = fuse(text_views, &design_weights(m, scheme)?, false)?;
    Ok((exhaustive, full_image.dot(&full_text)?))
}

/// Monte-Carlo mean of the raw rolled similarity over `draws` independent
/// uniform picks, with its standard error.
pub fn rolled_monte_carlo<T: Scalar, R: Rng + ?Sized>(
    image_views: &ViewSet<T>,
    text_views: &ViewSet<T>,
    scheme: WeightScheme<T>,
    draws: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let (n, m) = (image_views.len(), text_views.len());
    if n < 2 || m < 2 {
        return Err(Error::TooFewViews { images: n, texts: m });
    }
    if draws < 2 {
        return Err(Error::ConfigInvalid("need at least two draws".into()));
    }
    // Welford running mean and sum of squared deviations
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for t in 1..=draws {
        let i = rng.random_range(1..n);
        let j = rng.random_range(1..m);
        let fi = fuse_rolled(image_views.primary(), &image_views.views()[i], scheme, false)?;
        let ft = fuse_rolled(text_views.primary(), &text_views.views()[j], scheme, false)?;
        let x = fi.dot(&ft)?.as_f64();
        let delta = x - mean;
        mean += delta / t as f64;
        m2 += delta * (x - mean);
    }
    let k = draws as f64;
    Ok((mean, (m2 / (k - 1.0) / k).sqrt()))
}

/// Encodes every view of `listing` and returns [`rolled_expectation`].
pub fn estimate_unbiasedness(listing: &Listing, encoders: &EncoderPair<f64>, alpha: WeightScheme<f64>) -> Result<(f64, f64)> {
    if listing.image_count() < 2 || listing.text_count() < 2 {
        return Err(Error::TooFewViews { images: listing.image_count(), texts: listing.text_count() });
    }
    let encode_all = |enc: &crate::encoder::Encoder<f64>, views: &[Vec<f64>], modality| {
        let embedded = views.iter().map(|v| enc.encode(v)).collect::<Result<Vec<_>>>()?;
        ViewSet::new(embedded, modality)
    };
    let images = encode_all(&encoders.image, &listing.image_views, Modality::Image)?;
    let texts = encode_all(&encoders.text, &listing.text_views, Modality::Text)?;
    rolled_expectation(&images, &texts, alpha)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub views: usize,
    pub fwd_calls_per_step: u64,
    pub ms_per_step: f64,
}

/// Times training steps on synthetic catalogs with `n = m = views` for each
/// entry of `view_counts`.
///
/// Each round trains `steps` steps per view count from a fresh init, with
/// view counts interleaved within the round. The reported time is the fastest
/// single step over all rounds. Keep catalogs small: a catalog that outgrows
/// the TLB makes step time depend on where its pages landed.
pub fn bench_views(
    view_counts: &[usize],
    data: &SyntheticConfig,
    train_config: &TrainConfig,
    steps: usize,
    rounds: usize,
) -> Result<Vec<BenchRow>> {
    if steps == 0 || rounds == 0 {
        return Err(Error::ConfigInvalid("bench needs at least one step and one round".into()));
    }
    let catalogs = view_counts
        .iter()
        .map(|&v| {
            let cfg = SyntheticConfig { image_views_n: v, text_views_m: v, ..data.clone() };
            generate_catalog(&cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let config = TrainConfig { epochs: usize::MAX, max_steps: Some(steps), ..train_config.clone() };
    let mut best = vec![f64::INFINITY; view_counts.len()];
    let mut calls = vec![0u64; view_counts.len()];
    for _ in 0..rounds {
        for (k, catalog) in catalogs.iter().enumerate() {
            let (_, stats) = train(catalog, &config)?;
            best[k] = stats.steps.iter().map(|s| s.ms_per_step).fold(best[k], f64::min);
            calls[k] = stats.steps.iter().map(|s| s.fwd_calls).max().unwrap_or(0);
        }
    }
    Ok(view_counts
        .iter()
        .zip(best)
        .zip(calls)
        .map(|((&views, ms_per_step), fwd_calls_per_step)| BenchRow { views, fwd_calls_per_step, ms_per_step })
        .collect())
}
