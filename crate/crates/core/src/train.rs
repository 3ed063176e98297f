//! Incremental training: negative sampling, the composite loss (prediction
//! cross-entropy plus a gate-diversity penalty), manual backprop and Adam.
//!
//! The loss over a batch of labelled (user, item) examples is
//!
//! ```text
//! loss_total = loss_acc + gamma * loss_gate
//! ```
//!
//! where `loss_acc` is mean clamped cross-entropy and `loss_gate` penalizes
//! uneven expert utilization: the population standard deviation of the user
//! wing's gating vector plus that of the item wing's, averaged per example by
//! default (or computed once on the batch-mean gating vectors when
//! `gate_loss_batch_level` is set — that variant balances aggregate expert
//! utilization while still letting individual examples specialize).

use serde::{Deserialize, Serialize};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dwmoe::{DwmoeModel, PredictCache};
use crate::error::{Error, Result};
use crate::ingest::Interaction;
use crate::nn::{Adam, AdamConfig, ParamTensors};
use crate::sampling::{prepare_batch, Membership, Reservoir, SamplerConfig, TrainingBatch};

/// Predicted probabilities are clamped to `[CLAMP, 1 − CLAMP]` inside the
/// cross-entropy so a saturated sigmoid cannot produce an infinite loss.
const CLAMP: f64 = 1e-12;

/// Total resampling attempts granted to one negative-sampling call, as a
/// multiple of the number of negatives requested. Once exhausted, draws are
/// accepted unchecked (only reachable when a user has interacted with almost
/// the whole catalog).
const NEGATIVE_ATTEMPT_FACTOR: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Weight of the gate-diversity term in the total loss.
    pub gamma: f64,
    /// Negatives drawn per positive interaction.
    pub n_negative: usize,
    /// Decoupled L2 weight decay applied after each Adam step.
    pub l2: f64,
    /// Optimization passes over each training batch.
    pub epochs_per_batch: usize,
    /// Compute the gate-diversity loss on batch-mean gating vectors instead
    /// of per example.
    pub gate_loss_batch_level: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            gamma: 0.01,
            n_negative: 4,
            l2: 1e-6,
            epochs_per_batch: 1,
            gate_loss_batch_level: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::config("gamma must be >= 0"));
        }
        if !self.l2.is_finite() || self.l2 < 0.0 {
            return Err(Error::config("l2 must be >= 0"));
        }
        if self.epochs_per_batch == 0 {
            return Err(Error::config("epochs_per_batch must be >= 1"));
        }
        Ok(())
    }
}

/// Loss bookkeeping for one optimization pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss_acc: f64,
    pub loss_gate: f64,
    pub loss_total: f64,
    pub examples_seen: usize,
}

impl LossReport {
    /// Report of a pass that trained on nothing.
    pub fn empty() -> Self {
        LossReport { loss_acc: 0.0, loss_gate: 0.0, loss_total: 0.0, examples_seen: 0 }
    }
}

/// One labelled training example (positives come from the batch, negatives
/// from [`negative_sample`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example {
    pub user_id: usize,
    pub item_id: usize,
    pub label: f64,
}

/// `−(y·ln p̂ + (1−y)·ln(1−p̂))` with `p̂ = clamp(yhat)`.
pub fn cross_entropy(label: f64, yhat: f64) -> f64 {
    let p = yhat.clamp(CLAMP, 1.0 - CLAMP);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// d(cross_entropy)/d(yhat), consistent with the clamp: zero outside it
/// (where the clamped loss is locally constant in `yhat`).
pub fn cross_entropy_grad(label: f64, yhat: f64) -> f64 {
    if yhat < CLAMP || yhat > 1.0 - CLAMP {
        return 0.0;
    }
    (yhat - label) / (yhat * (1.0 - yhat))
}

/// Population standard deviation (divisor n) of a gating vector.
pub fn gating_std(g: &[f64]) -> f64 {
    if g.is_empty() {
        return 0.0;
    }
    let n = g.len() as f64;
    let mean = g.iter().sum::<f64>() / n;
    (g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// d(gating_std)/d(g): `(g_i − mean) / (n · std)`, zero at std = 0 (the
/// minimum, where a subgradient of 0 is the sensible choice).
pub fn gating_std_grad(g: &[f64]) -> Vec<f64> {
    let s = gating_std(g);
    if s == 0.0 {
        return vec![0.0; g.len()];
    }
    let n = g.len() as f64;
    let mean = g.iter().sum::<f64>() / n;
    g.iter().map(|v| (v - mean) / (n * s)).collect()
}

/// Draws `n_negative` items uniformly for `user_id`, rejecting pairs the
/// membership oracle has seen. Rejections share a budget of
/// `100 · n_negative`; once it is spent remaining draws are accepted as-is,
/// so a user who has interacted with the whole catalog still terminates.
/// Items may repeat across draws. Requires `item_count > 0`.
pub fn negative_sample<M: Membership, R: Rng>(
    user_id: u32,
    n_negative: usize,
    exclude: &M,
    item_count: usize,
    rng: &mut R,
) -> Vec<u32> {
    debug_assert!(item_count > 0, "cannot sample negatives from an empty catalog");
    let mut out = Vec::with_capacity(n_negative);
    let mut budget = NEGATIVE_ATTEMPT_FACTOR * n_negative;
    for _ in 0..n_negative {
        loop {
            let item = rng.random_range(0..item_count) as u32;
            if budget == 0 || !exclude.contains_pair(user_id, item) {
                out.push(item);
                break;
            }
            budget -= 1;
        }
    }
    out
}

/// Expands a training batch into labelled examples: each interaction keeps
/// its own label and is followed by `n_negative` label-0 items for its user.
pub fn build_examples<M: Membership, R: Rng>(
    batch: &TrainingBatch,
    n_negative: usize,
    exclude: &M,
    item_count: usize,
    rng: &mut R,
) -> Vec<Example> {
    let mut out = Vec::with_capacity(batch.len() * (1 + n_negative));
    for interaction in &batch.interactions {
        out.push(Example {
            user_id: interaction.user_id as usize,
            item_id: interaction.item_id as usize,
            label: f64::from(interaction.label),
        });
        for item in negative_sample(interaction.user_id, n_negative, exclude, item_count, rng) {
            out.push(Example {
                user_id: interaction.user_id as usize,
                item_id: item as usize,
                label: 0.0,
            });
        }
    }
    out
}

fn report_from_caches(
    caches: &[PredictCache],
    labels: &[f64],
    gamma: f64,
    batch_level: bool,
) -> LossReport {
    let n = caches.len() as f64;
    let loss_acc =
        caches.iter().zip(labels).map(|(c, &y)| cross_entropy(y, c.yhat)).sum::<f64>() / n;
    let loss_gate = if batch_level {
        let (mean_u, mean_i) = batch_mean_gatings(caches);
        gating_std(&mean_u) + gating_std(&mean_i)
    } else {
        caches
            .iter()
            .map(|c| gating_std(c.moue.gate.gating()) + gating_std(c.moie.gate.gating()))
            .sum::<f64>()
            / n
    };
    LossReport {
        loss_acc,
        loss_gate,
        loss_total: loss_acc + gamma * loss_gate,
        examples_seen: caches.len(),
    }
}

fn batch_mean_gatings(caches: &[PredictCache]) -> (Vec<f64>, Vec<f64>) {
    let n_e = caches[0].moue.gate.gating().len();
    let n = caches.len() as f64;
    let mut mean_u = vec![0.0; n_e];
    let mut mean_i = vec![0.0; n_e];
    for cache in caches {
        for (m, g) in mean_u.iter_mut().zip(cache.moue.gate.gating()) {
            *m += g / n;
        }
        for (m, g) in mean_i.iter_mut().zip(cache.moie.gate.gating()) {
            *m += g / n;
        }
    }
    (mean_u, mean_i)
}

/// Total loss over a fixed example set — no gradients, no rng. This is the
/// scalar objective the gradient checker differentiates.
pub fn batch_loss(
    model: &DwmoeModel,
    examples: &[Example],
    gamma: f64,
    batch_level: bool,
) -> Result<LossReport> {
    if examples.is_empty() {
        return Err(Error::config("cannot evaluate a loss over zero examples"));
    }
    let caches = examples
        .iter()
        .map(|e| model.forward_cached(e.user_id, e.item_id))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<f64> = examples.iter().map(|e| e.label).collect();
    Ok(report_from_caches(&caches, &labels, gamma, batch_level))
}

/// Forward + backward over a fixed example set, accumulating dL/dθ into
/// `grads` (zeroed by the caller). Returns the same report as [`batch_loss`].
pub fn batch_backward(
    model: &DwmoeModel,
    examples: &[Example],
    gamma: f64,
    batch_level: bool,
    grads: &mut DwmoeModel,
) -> Result<LossReport> {
    if examples.is_empty() {
        return Err(Error::config("cannot train on zero examples"));
    }
    let caches = examples
        .iter()
        .map(|e| model.forward_cached(e.user_id, e.item_id))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<f64> = examples.iter().map(|e| e.label).collect();
    let report = report_from_caches(&caches, &labels, gamma, batch_level);

    let n = caches.len() as f64;
    let weight = 1.0 / n;
    // In batch-level mode every example shares the same direct gate gradient:
    // d std(ḡ)/d g_example = std_grad(ḡ) / n.
    let shared_gate_grads = if batch_level {
        let (mean_u, mean_i) = batch_mean_gatings(&caches);
        let scale = gamma * weight;
        let du: Vec<f64> = gating_std_grad(&mean_u).into_iter().map(|v| v * scale).collect();
        let di: Vec<f64> = gating_std_grad(&mean_i).into_iter().map(|v| v * scale).collect();
        Some((du, di))
    } else {
        None
    };

    for (cache, &label) in caches.iter().zip(&labels) {
        let d_yhat = weight * cross_entropy_grad(label, cache.yhat);
        match &shared_gate_grads {
            Some((du, di)) => model.backward(cache, d_yhat, du, di, grads),
            None => {
                let scale = gamma * weight;
                let du: Vec<f64> = gating_std_grad(cache.moue.gate.gating())
                    .into_iter()
                    .map(|v| v * scale)
                    .collect();
                let di: Vec<f64> = gating_std_grad(cache.moie.gate.gating())
                    .into_iter()
                    .map(|v| v * scale)
                    .collect();
                model.backward(cache, d_yhat, &du, &di, grads);
            }
        }
    }
    Ok(report)
}

/// Reports whether the loss surface is locally smooth enough around `model`
/// on `examples` for central finite differences with step `h` to be trusted
/// on every parameter: every relu pre-activation must sit at least `64·h`
/// away from its kink, and every fused wing vector must have norm at least
/// `2000·h` (the cosine is singular where a fused vector crosses zero).
///
/// The screen looks only at the forward pass — never at gradient agreement —
/// so using it to pick gradient-check points cannot hide a wrong gradient;
/// it only rejects points where a finite difference measures nothing.
pub fn fd_well_conditioned(model: &DwmoeModel, examples: &[Example], h: f64) -> Result<bool> {
    let kink_margin = 64.0 * h;
    let norm_floor = 2000.0 * h;
    for example in examples {
        let cache = model.forward_cached(example.user_id, example.item_id)?;
        if cache.p_norm < norm_floor || cache.q_norm < norm_floor {
            return Ok(false);
        }
        let wings = [
            (&model.moue, &cache.moue, &model.moie.gate.interference),
            (&model.moie, &cache.moie, &model.moue.gate.interference),
        ];
        for (wing, wing_cache, _) in wings {
            for (expert, expert_cache) in wing.experts.iter().zip(&wing_cache.experts) {
                for (layer, layer_cache) in expert.mlp.iter().zip(&expert_cache.layers) {
                    if !layer_preactivations_clear_of_kinks(layer, &layer_cache.input, kink_margin)?
                    {
                        return Ok(false);
                    }
                }
            }
            let gate = &wing.gate;
            if !layer_preactivations_clear_of_kinks(
                &gate.interference,
                &wing_cache.gate.inter.input,
                kink_margin,
            )? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn layer_preactivations_clear_of_kinks(
    layer: &crate::nn::DenseLayer,
    input: &[f64],
    margin: f64,
) -> Result<bool> {
    if layer.activation != crate::nn::Activation::Relu {
        return Ok(true);
    }
    let mut z = layer.weights.matvec(input)?;
    for (v, b) in z.iter_mut().zip(layer.bias.data()) {
        *v += b;
    }
    Ok(z.iter().all(|v| v.abs() >= margin))
}

/// Owns the optimizer state, the gradient buffer and the training rng.
#[derive(Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    adam: Adam,
    grads: DwmoeModel,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: &DwmoeModel, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let adam_cfg = AdamConfig {
            learning_rate: config.learning_rate,
            l2: config.l2,
            ..AdamConfig::default()
        };
        Ok(Trainer {
            config,
            adam: Adam::for_model(model, adam_cfg)?,
            grads: model.zeros_like(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// One optimization pass: expand the batch with negatives, backprop the
    /// composite loss, apply a single Adam update.
    pub fn train_step<M: Membership>(
        &mut self,
        model: &mut DwmoeModel,
        batch: &TrainingBatch,
        exclude: &M,
    ) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::config("train_step requires a non-empty batch"));
        }
        let examples = build_examples(
            batch,
            self.config.n_negative,
            exclude,
            model.config.n_items,
            &mut self.rng,
        );
        self.grads.zero_params();
        let report = batch_backward(
            model,
            &examples,
            self.config.gamma,
            self.config.gate_loss_batch_level,
            &mut self.grads,
        )?;
        let mut params = model.tensors_mut();
        self.adam.step(&mut params, &self.grads.tensors())?;
        Ok(report)
    }

    /// One streaming period: assemble the training batch from the chunk and
    /// the reservoir, run `epochs_per_batch` passes, then admit the chunk
    /// into the reservoir — insertion happens after training so a batch can
    /// never sample its own chunk back out of history.
    ///
    /// Returns the last pass's report (losses after the most recent update),
    /// or an all-zero report when there was nothing to train on.
    pub fn incremental_train(
        &mut self,
        model: &mut DwmoeModel,
        chunk: &[Interaction],
        reservoir: &mut Reservoir,
        sampler: &SamplerConfig,
    ) -> Result<LossReport> {
        let batch = prepare_batch(chunk, reservoir, sampler, &mut self.rng)?;
        let mut report = LossReport::empty();
        if !batch.is_empty() {
            for _ in 0..self.config.epochs_per_batch {
                report = self.train_step(model, &batch, reservoir)?;
            }
        }
        reservoir.insert_batch(chunk);
        Ok(report)
    }
}
