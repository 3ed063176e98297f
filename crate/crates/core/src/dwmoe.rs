//! Double-wing mixture-of-experts ranking model.
//!
//! Two symmetric wings embed the two sides of an interaction: the user wing
//! (`moue`) runs `n_experts` embedding+MLP experts over the user id, the item
//! wing (`moie`) does the same over the item id. Each wing fuses its expert
//! outputs with a gating network whose input is the wing's own gating
//! embedding concatenated with an *interference* signal computed from the
//! other wing's gating embedding — so the user gate is item-aware and vice
//! versa. The fused user/item vectors meet in a cosine interaction scaled by
//! a learned 1×1 output layer.
//!
//! Backpropagation is manual. [`DwmoeModel::forward_cached`] records every
//! intermediate needed; [`DwmoeModel::backward`] accumulates parameter
//! gradients into a zeros-shaped clone of the model, which keeps gradient
//! bookkeeping aligned with parameter enumeration by construction.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{archive, Activation, DenseCache, DenseLayer, EmbeddingTable, ParamTensors, Tensor};

/// All weights and embeddings start uniform in (−0.05, 0.05); biases at zero.
const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Experts per wing (both wings always have the same count).
    pub n_experts: usize,
    pub embedding_dim: usize,
    /// Output widths of the expert MLP layers, in order.
    pub expert_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub gate_activation: Activation,
    pub output_activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_users: 0,
            n_items: 0,
            n_experts: 8,
            embedding_dim: 32,
            expert_widths: vec![32, 16],
            hidden_activation: Activation::Relu,
            gate_activation: Activation::Relu,
            output_activation: Activation::Sigmoid,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 {
            return Err(Error::config("model needs at least one user and one item"));
        }
        if self.n_experts == 0 {
            return Err(Error::config("n_experts must be >= 1"));
        }
        if self.embedding_dim == 0 {
            return Err(Error::config("embedding_dim must be >= 1"));
        }
        if self.expert_widths.is_empty() || self.expert_widths.iter().any(|&w| w == 0) {
            return Err(Error::config("expert_widths must be non-empty positive sizes"));
        }
        Ok(())
    }

    /// Dimension of a fused wing representation.
    pub fn expert_out_dim(&self) -> usize {
        *self.expert_widths.last().expect("validated non-empty")
    }
}

/// Embedding + MLP tower producing one wing vote.
#[derive(Debug, Clone)]
pub struct ExpertNet {
    pub embedding: EmbeddingTable,
    pub mlp: Vec<DenseLayer>,
}

impl ExpertNet {
    fn new<R: Rng>(rows: usize, cfg: &ModelConfig, rng: &mut R) -> Self {
        let embedding = EmbeddingTable::new(rows, cfg.embedding_dim, INIT_SCALE, rng);
        let mut mlp = Vec::with_capacity(cfg.expert_widths.len());
        let mut in_dim = cfg.embedding_dim;
        for &width in &cfg.expert_widths {
            mlp.push(DenseLayer::new(in_dim, width, cfg.hidden_activation, INIT_SCALE, rng));
            in_dim = width;
        }
        ExpertNet { embedding, mlp }
    }

    fn zeros_like(&self) -> Self {
        ExpertNet {
            embedding: self.embedding.zeros_like(),
            mlp: self.mlp.iter().map(DenseLayer::zeros_like).collect(),
        }
    }

    pub fn forward(&self, id: usize) -> Result<Vec<f64>> {
        let mut x = self.embedding.lookup(id)?.to_vec();
        for layer in &self.mlp {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    fn forward_cached(&self, id: usize) -> Result<ExpertCache> {
        let mut layers = Vec::with_capacity(self.mlp.len());
        let mut x = self.embedding.lookup(id)?.to_vec();
        for layer in &self.mlp {
            let cache = layer.forward_cached(x)?;
            x = cache.output.clone();
            layers.push(cache);
        }
        Ok(ExpertCache { layers })
    }
}

/// Gating network of one wing: own embedding ⧺ interference(other wing's
/// gating embedding) → softmax weights over that wing's experts.
#[derive(Debug, Clone)]
pub struct GatingNet {
    pub embedding: EmbeddingTable,
    pub interference: DenseLayer,
    pub softmax_layer: DenseLayer,
}

impl GatingNet {
    fn new<R: Rng>(rows: usize, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.embedding_dim;
        GatingNet {
            embedding: EmbeddingTable::new(rows, d, INIT_SCALE, rng),
            interference: DenseLayer::new(d, d, cfg.gate_activation, INIT_SCALE, rng),
            softmax_layer: DenseLayer::new(2 * d, cfg.n_experts, Activation::Softmax, INIT_SCALE, rng),
        }
    }

    fn zeros_like(&self) -> Self {
        GatingNet {
            embedding: self.embedding.zeros_like(),
            interference: self.interference.zeros_like(),
            softmax_layer: self.softmax_layer.zeros_like(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Wing {
    pub experts: Vec<ExpertNet>,
    pub gate: GatingNet,
}

impl Wing {
    fn zeros_like(&self) -> Self {
        Wing {
            experts: self.experts.iter().map(ExpertNet::zeros_like).collect(),
            gate: self.gate.zeros_like(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WingKind {
    /// User-side experts (gated with item interference).
    Moue,
    /// Item-side experts (gated with user interference).
    Moie,
}

#[derive(Debug, Clone)]
pub struct DwmoeModel {
    pub config: ModelConfig,
    pub moue: Wing,
    pub moie: Wing,
    /// 1×1 scaling of the cosine interaction.
    pub output_layer: DenseLayer,
}

// --- caches recorded by the forward pass for the backward pass ---

#[derive(Debug, Clone)]
pub struct ExpertCache {
    /// Per-layer caches; `layers[0].input` is the embedding row.
    pub layers: Vec<DenseCache>,
}

impl ExpertCache {
    pub fn output(&self) -> &[f64] {
        &self.layers.last().expect("expert has at least one layer").output
    }
}

#[derive(Debug, Clone)]
pub struct GateCache {
    pub inter: DenseCache,
    /// `soft.input` is [own embedding ⧺ interference]; `soft.output` is g.
    pub soft: DenseCache,
}

impl GateCache {
    pub fn gating(&self) -> &[f64] {
        &self.soft.output
    }
}

#[derive(Debug, Clone)]
pub struct WingCache {
    pub experts: Vec<ExpertCache>,
    pub gate: GateCache,
    pub fused: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PredictCache {
    pub user_id: usize,
    pub item_id: usize,
    pub moue: WingCache,
    pub moie: WingCache,
    pub p_norm: f64,
    pub q_norm: f64,
    pub cos: f64,
    pub out: DenseCache,
    pub yhat: f64,
}

/// Convex blend of expert outputs: `Σ_i gating[i] · outputs[i]`.
pub fn fuse(gating: &[f64], outputs: &[&[f64]]) -> Result<Vec<f64>> {
    if gating.len() != outputs.len() || gating.is_empty() {
        return Err(Error::shape(format!(
            "fuse: {} gating weights vs {} expert outputs",
            gating.len(),
            outputs.len()
        )));
    }
    let dim = outputs[0].len();
    if outputs.iter().any(|o| o.len() != dim) {
        return Err(Error::shape("fuse: expert outputs differ in dimension"));
    }
    let mut fused = vec![0.0; dim];
    for (g, out) in gating.iter().zip(outputs) {
        for (f, v) in fused.iter_mut().zip(out.iter()) {
            *f += g * v;
        }
    }
    Ok(fused)
}

/// Cosine similarity with the convention that any zero-norm side yields 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

impl DwmoeModel {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let moue = Wing {
            experts: (0..config.n_experts).map(|_| ExpertNet::new(config.n_users, &config, rng)).collect(),
            gate: GatingNet::new(config.n_users, &config, rng),
        };
        let moie = Wing {
            experts: (0..config.n_experts).map(|_| ExpertNet::new(config.n_items, &config, rng)).collect(),
            gate: GatingNet::new(config.n_items, &config, rng),
        };
        let output_layer = DenseLayer::new(1, 1, config.output_activation, INIT_SCALE, rng);
        Ok(DwmoeModel { config, moue, moie, output_layer })
    }

    /// Same shapes, all parameters zero — the gradient buffer type.
    pub fn zeros_like(&self) -> Self {
        DwmoeModel {
            config: self.config.clone(),
            moue: self.moue.zeros_like(),
            moie: self.moie.zeros_like(),
            output_layer: self.output_layer.zeros_like(),
        }
    }

    pub fn zero_params(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn wing(&self, kind: WingKind) -> &Wing {
        match kind {
            WingKind::Moue => &self.moue,
            WingKind::Moie => &self.moie,
        }
    }

    /// (own id, other id) for a wing given the (user, item) pair.
    fn wing_ids(kind: WingKind, user_id: usize, item_id: usize) -> (usize, usize) {
        match kind {
            WingKind::Moue => (user_id, item_id),
            WingKind::Moie => (item_id, user_id),
        }
    }

    fn gate_cache(&self, kind: WingKind, user_id: usize, item_id: usize) -> Result<GateCache> {
        let (own_id, other_id) = Self::wing_ids(kind, user_id, item_id);
        let wing = self.wing(kind);
        let other_gate = match kind {
            WingKind::Moue => &self.moie.gate,
            WingKind::Moie => &self.moue.gate,
        };
        let other_embed = other_gate.embedding.lookup(other_id)?.to_vec();
        let inter = wing.gate.interference.forward_cached(other_embed)?;
        let mut concat = wing.gate.embedding.lookup(own_id)?.to_vec();
        concat.extend_from_slice(&inter.output);
        let soft = wing.gate.softmax_layer.forward_cached(concat)?;
        Ok(GateCache { inter, soft })
    }

    /// Softmax gating weights of one wing for a (user, item) pair.
    pub fn gating_forward(&self, kind: WingKind, user_id: usize, item_id: usize) -> Result<Vec<f64>> {
        Ok(self.gate_cache(kind, user_id, item_id)?.soft.output)
    }

    fn wing_cache(&self, kind: WingKind, user_id: usize, item_id: usize) -> Result<WingCache> {
        let (own_id, _) = Self::wing_ids(kind, user_id, item_id);
        let wing = self.wing(kind);
        let experts = wing
            .experts
            .iter()
            .map(|e| e.forward_cached(own_id))
            .collect::<Result<Vec<_>>>()?;
        let gate = self.gate_cache(kind, user_id, item_id)?;
        let outputs: Vec<&[f64]> = experts.iter().map(|e| e.output()).collect();
        let fused = fuse(gate.gating(), &outputs)?;
        Ok(WingCache { experts, gate, fused })
    }

    /// Full forward pass recording every intermediate for [`Self::backward`].
    pub fn forward_cached(&self, user_id: usize, item_id: usize) -> Result<PredictCache> {
        let moue = self.wing_cache(WingKind::Moue, user_id, item_id)?;
        let moie = self.wing_cache(WingKind::Moie, user_id, item_id)?;
        let p_norm = moue.fused.iter().map(|v| v * v).sum::<f64>().sqrt();
        let q_norm = moie.fused.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cos = if p_norm == 0.0 || q_norm == 0.0 {
            0.0
        } else {
            moue.fused.iter().zip(&moie.fused).map(|(p, q)| p * q).sum::<f64>() / (p_norm * q_norm)
        };
        let out = self.output_layer.forward_cached(vec![cos])?;
        let yhat = out.output[0];
        Ok(PredictCache { user_id, item_id, moue, moie, p_norm, q_norm, cos, out, yhat })
    }

    /// Interaction probability for one (user, item) pair.
    pub fn predict(&self, user_id: usize, item_id: usize) -> Result<f64> {
        Ok(self.forward_cached(user_id, item_id)?.yhat)
    }

    /// Learned scalar transform of the cosine of two fused representations.
    pub fn interact(&self, p_uni: &[f64], q_uni: &[f64]) -> Result<f64> {
        let cos = cosine(p_uni, q_uni);
        Ok(self.output_layer.forward(&[cos])?[0])
    }

    /// Scores one user against each candidate item, in order.
    pub fn score_candidates(&self, user_id: usize, candidates: &[u32]) -> Result<Vec<f64>> {
        candidates.iter().map(|&item| self.predict(user_id, item as usize)).collect()
    }

    /// Accumulates dL/dθ into `grads` (a [`Self::zeros_like`] buffer).
    ///
    /// `d_yhat` is dL/dŷ. `d_g_moue` / `d_g_moie` are *direct* gradients on
    /// the gating vectors (from the gate-diversity loss); the prediction-path
    /// gradient through the fusion is added internally. Pass empty slices for
    /// pure prediction losses.
    pub fn backward(
        &self,
        cache: &PredictCache,
        d_yhat: f64,
        d_g_moue: &[f64],
        d_g_moie: &[f64],
        grads: &mut DwmoeModel,
    ) {
        // output layer: scalar in, scalar out
        let d_cos = self.output_layer.backward(&cache.out, &[d_yhat], &mut grads.output_layer)[0];

        // cosine: d cos / dP = Q/(|P||Q|) − cos·P/|P|² (zero-norm ⇒ flat 0)
        let dim = cache.moue.fused.len();
        let mut d_p = vec![0.0; dim];
        let mut d_q = vec![0.0; dim];
        if cache.p_norm > 0.0 && cache.q_norm > 0.0 {
            let inv_pq = 1.0 / (cache.p_norm * cache.q_norm);
            let inv_pp = 1.0 / (cache.p_norm * cache.p_norm);
            let inv_qq = 1.0 / (cache.q_norm * cache.q_norm);
            for i in 0..dim {
                let p = cache.moue.fused[i];
                let q = cache.moie.fused[i];
                d_p[i] = d_cos * (q * inv_pq - cache.cos * p * inv_pp);
                d_q[i] = d_cos * (p * inv_pq - cache.cos * q * inv_qq);
            }
        }

        self.backward_wing(WingKind::Moue, &cache.moue, &d_p, d_g_moue, cache.user_id, cache.item_id, grads);
        self.backward_wing(WingKind::Moie, &cache.moie, &d_q, d_g_moie, cache.user_id, cache.item_id, grads);
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_wing(
        &self,
        kind: WingKind,
        wing_cache: &WingCache,
        d_fused: &[f64],
        d_g_direct: &[f64],
        user_id: usize,
        item_id: usize,
        grads: &mut DwmoeModel,
    ) {
        let (own_id, other_id) = Self::wing_ids(kind, user_id, item_id);
        let wing = self.wing(kind);
        let (wing_grads, other_gate_embed_grads) = match kind {
            WingKind::Moue => (&mut grads.moue, &mut grads.moie.gate.embedding),
            WingKind::Moie => (&mut grads.moie, &mut grads.moue.gate.embedding),
        };
        let g = wing_cache.gate.gating();
        debug_assert!(d_g_direct.is_empty() || d_g_direct.len() == g.len());

        // dL/dg: through the fusion plus any direct gate-loss term.
        let mut d_g: Vec<f64> = wing_cache
            .experts
            .iter()
            .map(|e| e.output().iter().zip(d_fused).map(|(o, d)| o * d).sum())
            .collect();
        if !d_g_direct.is_empty() {
            for (dg, direct) in d_g.iter_mut().zip(d_g_direct) {
                *dg += direct;
            }
        }

        // experts: upstream g_i · dL/dfused through the MLP down to the embedding row.
        for (i, ((expert, cache), grad)) in
            wing.experts.iter().zip(&wing_cache.experts).zip(&mut wing_grads.experts).enumerate()
        {
            let g_i = g[i];
            let mut upstream: Vec<f64> = d_fused.iter().map(|d| d * g_i).collect();
            for (layer, layer_cache, layer_grad) in expert
                .mlp
                .iter()
                .zip(&cache.layers)
                .zip(&mut grad.mlp)
                .map(|((l, c), gl)| (l, c, gl))
                .rev()
            {
                upstream = layer.backward(layer_cache, &upstream, layer_grad);
            }
            let row = grad.embedding.table.row_mut(own_id);
            for (r, d) in row.iter_mut().zip(&upstream) {
                *r += d;
            }
        }

        // gate: softmax layer, then split the concatenated input.
        let d_concat = wing.gate.softmax_layer.backward(
            &wing_cache.gate.soft,
            &d_g,
            &mut wing_grads.gate.softmax_layer,
        );
        let d = self.config.embedding_dim;
        let own_row = wing_grads.gate.embedding.table.row_mut(own_id);
        for (r, dv) in own_row.iter_mut().zip(&d_concat[..d]) {
            *r += dv;
        }
        let d_other_embed = wing.gate.interference.backward(
            &wing_cache.gate.inter,
            &d_concat[d..],
            &mut wing_grads.gate.interference,
        );
        let other_row = other_gate_embed_grads.table.row_mut(other_id);
        for (r, dv) in other_row.iter_mut().zip(&d_other_embed) {
            *r += dv;
        }
    }

    /// Writes a self-describing snapshot (config header + named tensors).
    pub fn save<W: Write>(&self, out: &mut W) -> Result<()> {
        let meta = serde_json::to_string(&self.config)
            .map_err(|e| Error::Snapshot(format!("config serialization failed: {e}")))?;
        archive::write_archive(out, &meta, &self.tensors())
    }

    /// Rebuilds a model from [`Self::save`] output, bitwise identical.
    pub fn load<R: BufRead>(input: R) -> Result<Self> {
        let (meta, tensors) = archive::read_archive(input)?;
        let config: ModelConfig = serde_json::from_str(&meta)
            .map_err(|e| Error::Snapshot(format!("bad config header: {e}")))?;
        let mut seed_rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = DwmoeModel::new(config, &mut seed_rng)?;
        let mut stored: std::collections::HashMap<String, Tensor> = tensors.into_iter().collect();
        for (name, tensor) in model.tensors_mut() {
            let loaded = stored
                .remove(&name)
                .ok_or_else(|| Error::Snapshot(format!("snapshot missing tensor '{name}'")))?;
            if !loaded.same_shape(tensor) {
                return Err(Error::Snapshot(format!(
                    "tensor '{name}' has shape {}x{}, expected {}x{}",
                    loaded.rows(),
                    loaded.cols(),
                    tensor.rows(),
                    tensor.cols()
                )));
            }
            *tensor = loaded;
        }
        if let Some(extra) = stored.keys().next() {
            return Err(Error::Snapshot(format!("snapshot has unknown tensor '{extra}'")));
        }
        Ok(model)
    }
}

impl ParamTensors for DwmoeModel {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (wing_name, wing) in [("moue", &self.moue), ("moie", &self.moie)] {
            for (e, expert) in wing.experts.iter().enumerate() {
                out.push((format!("{wing_name}.expert{e}.embed"), &expert.embedding.table));
                for (l, layer) in expert.mlp.iter().enumerate() {
                    out.push((format!("{wing_name}.expert{e}.mlp{l}.w"), &layer.weights));
                    out.push((format!("{wing_name}.expert{e}.mlp{l}.b"), &layer.bias));
                }
            }
            out.push((format!("{wing_name}.gate.embed"), &wing.gate.embedding.table));
            out.push((format!("{wing_name}.gate.inter.w"), &wing.gate.interference.weights));
            out.push((format!("{wing_name}.gate.inter.b"), &wing.gate.interference.bias));
            out.push((format!("{wing_name}.gate.soft.w"), &wing.gate.softmax_layer.weights));
            out.push((format!("{wing_name}.gate.soft.b"), &wing.gate.softmax_layer.bias));
        }
        out.push(("out.w".to_string(), &self.output_layer.weights));
        out.push(("out.b".to_string(), &self.output_layer.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (wing_name, wing) in [("moue", &mut self.moue), ("moie", &mut self.moie)] {
            for (e, expert) in wing.experts.iter_mut().enumerate() {
                out.push((format!("{wing_name}.expert{e}.embed"), &mut expert.embedding.table));
                for (l, layer) in expert.mlp.iter_mut().enumerate() {
                    out.push((format!("{wing_name}.expert{e}.mlp{l}.w"), &mut layer.weights));
                    out.push((format!("{wing_name}.expert{e}.mlp{l}.b"), &mut layer.bias));
                }
            }
            out.push((format!("{wing_name}.gate.embed"), &mut wing.gate.embedding.table));
            out.push((format!("{wing_name}.gate.inter.w"), &mut wing.gate.interference.weights));
            out.push((format!("{wing_name}.gate.inter.b"), &mut wing.gate.interference.bias));
            out.push((format!("{wing_name}.gate.soft.w"), &mut wing.gate.softmax_layer.weights));
            out.push((format!("{wing_name}.gate.soft.b"), &mut wing.gate.softmax_layer.bias));
        }
        out.push(("out.w".to_string(), &mut self.output_layer.weights));
        out.push(("out.b".to_string(), &mut self.output_layer.bias));
        out
    }
}
