//! Prequential ranking evaluation: each test interaction is scored against
//! 99 sampled non-interacted items *before* its chunk is used for
//! incremental training, so every measurement reflects a model that has
//! never seen that data.
//!
//! Ranking uses HR@K and NDCG@K over the candidate set (target + negatives).
//! Ties place the target first; the tie policy matters only for degenerate
//! models that score candidates identically, and the test suite pins the
//! random-equivalent baseline accordingly.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dwmoe::DwmoeModel;
use crate::error::{Error, Result};
use crate::ingest::{stream_chunks, Interaction};
use crate::sampling::{Membership, Reservoir, SamplerConfig};
use crate::train::{LossReport, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Cutoff K for HR@K and NDCG@K.
    pub k: usize,
    /// Negative candidates ranked against each target.
    pub n_negatives: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { k: 10, n_negatives: 99 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("eval k must be >= 1"));
        }
        if self.n_negatives == 0 {
            return Err(Error::config("eval n_negatives must be >= 1"));
        }
        Ok(())
    }
}

/// Outcome of ranking one target among its negatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankingResult {
    /// 1-based position among `1 + n_negatives` candidates.
    pub rank: usize,
    /// 1.0 if the target landed in the top K, else 0.0.
    pub hr: f64,
    /// `1 / log2(rank + 1)` inside the top K, else 0.0.
    pub ndcg: f64,
}

/// Rank of the target among candidates: one plus the number of negatives
/// scoring *strictly* higher (ties resolve in the target's favor).
pub fn rank_from_scores(target_score: f64, negative_scores: &[f64]) -> usize {
    1 + negative_scores.iter().filter(|&&s| s > target_score).count()
}

/// (HR@K, NDCG@K) for a 1-based rank.
pub fn ranking_metrics(rank: usize, k: usize) -> (f64, f64) {
    if rank <= k {
        (1.0, 1.0 / ((rank + 1) as f64).log2())
    } else {
        (0.0, 0.0)
    }
}

/// Scores the target and its negatives with the model and ranks the target.
pub fn rank_target(
    model: &DwmoeModel,
    user_id: u32,
    target_item: u32,
    negatives: &[u32],
    k: usize,
) -> Result<RankingResult> {
    let mut candidates = Vec::with_capacity(1 + negatives.len());
    candidates.push(target_item);
    candidates.extend_from_slice(negatives);
    let scores = model.score_candidates(user_id as usize, &candidates)?;
    let rank = rank_from_scores(scores[0], &scores[1..]);
    let (hr, ndcg) = ranking_metrics(rank, k);
    Ok(RankingResult { rank, hr, ndcg })
}

/// Every item each user has ever interacted with — over the *whole* dataset,
/// so evaluation negatives can never be future positives.
#[derive(Debug, Clone, Default)]
pub struct UserHistory {
    items_by_user: HashMap<u32, HashSet<u32>>,
}

impl UserHistory {
    pub fn from_interactions(interactions: &[Interaction]) -> Self {
        let mut items_by_user: HashMap<u32, HashSet<u32>> = HashMap::new();
        for it in interactions {
            items_by_user.entry(it.user_id).or_default().insert(it.item_id);
        }
        UserHistory { items_by_user }
    }

    pub fn n_items_of(&self, user_id: u32) -> usize {
        self.items_by_user.get(&user_id).map_or(0, HashSet::len)
    }
}

impl Membership for UserHistory {
    fn contains_pair(&self, user: u32, item: u32) -> bool {
        self.items_by_user.get(&user).is_some_and(|items| items.contains(&item))
    }
}

/// Draws `n` *distinct* items the user has never interacted with, uniformly.
/// Returns `None` when fewer than `n` such items exist (the interaction is
/// then skipped rather than ranked against a padded candidate set).
pub fn draw_negatives<R: Rng>(
    user_id: u32,
    n: usize,
    history: &UserHistory,
    item_count: usize,
    rng: &mut R,
) -> Option<Vec<u32>> {
    let eligible = item_count.saturating_sub(history.n_items_of(user_id));
    if eligible < n {
        return None;
    }
    if eligible <= 2 * n {
        // scarce: enumerate the eligible items and sample indices from them
        let pool: Vec<u32> = (0..item_count as u32)
            .filter(|&item| !history.contains_pair(user_id, item))
            .collect();
        let picked = rand::seq::index::sample(rng, pool.len(), n);
        return Some(picked.iter().map(|i| pool[i]).collect());
    }
    let mut chosen: HashSet<u32> = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let item = rng.random_range(0..item_count) as u32;
        if !history.contains_pair(user_id, item) && chosen.insert(item) {
            out.push(item);
        }
    }
    Some(out)
}

/// Per-test-chunk metrics plus the losses of the training pass that followed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub chunk_index: usize,
    pub hr: f64,
    pub ndcg: f64,
    pub n_evaluated: usize,
    pub n_skipped: usize,
    #[serde(flatten)]
    pub losses: LossReport,
}

/// Aggregate over all test interactions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub hr: f64,
    pub ndcg: f64,
    pub n_evaluated: usize,
    pub n_skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrequentialOutcome {
    pub pretrain_chunks: usize,
    pub chunks: Vec<ChunkRecord>,
    pub summary: MetricsReport,
}

/// Mutable state threaded through one prequential run.
pub struct PrequentialRun<'a> {
    pub model: &'a mut DwmoeModel,
    pub trainer: &'a mut Trainer,
    pub reservoir: &'a mut Reservoir,
    pub sampler: &'a SamplerConfig,
    pub eval: &'a EvalConfig,
    pub history: &'a UserHistory,
    /// Interactions received per training period (chunk size).
    pub s_r: usize,
    /// Drives negative drawing; owning it here keeps candidate sets
    /// independent of how the model or trainer consume randomness.
    pub eval_rng: ChaCha8Rng,
}

impl PrequentialRun<'_> {
    /// Pre-trains over the training stream, then walks the test stream in
    /// chunks of `s_r`, evaluating each chunk before training on it.
    /// `on_chunk` fires after each test chunk (for streaming output).
    pub fn run(
        mut self,
        train: &[Interaction],
        test: &[Interaction],
        mut on_chunk: impl FnMut(&ChunkRecord),
    ) -> Result<PrequentialOutcome> {
        self.eval.validate()?;
        let mut pretrain_chunks = 0;
        for chunk in stream_chunks(train, self.s_r)? {
            self.trainer.incremental_train(self.model, chunk, self.reservoir, self.sampler)?;
            pretrain_chunks += 1;
        }

        let n_items = self.model.config.n_items;
        let n_users = self.model.config.n_users;
        let mut chunks = Vec::new();
        let mut hr_sum = 0.0;
        let mut ndcg_sum = 0.0;
        let mut total_evaluated = 0;
        let mut total_skipped = 0;

        for (chunk_index, chunk) in stream_chunks(test, self.s_r)?.enumerate() {
            let mut chunk_hr = 0.0;
            let mut chunk_ndcg = 0.0;
            let mut n_evaluated = 0;
            let mut n_skipped = 0;
            for it in chunk {
                if it.user_id as usize >= n_users || it.item_id as usize >= n_items {
                    n_skipped += 1;
                    continue;
                }
                let negatives = match draw_negatives(
                    it.user_id,
                    self.eval.n_negatives,
                    self.history,
                    n_items,
                    &mut self.eval_rng,
                ) {
                    Some(v) => v,
                    None => {
                        n_skipped += 1;
                        continue;
                    }
                };
                let result =
                    rank_target(self.model, it.user_id, it.item_id, &negatives, self.eval.k)?;
                chunk_hr += result.hr;
                chunk_ndcg += result.ndcg;
                n_evaluated += 1;
            }

            let losses =
                self.trainer.incremental_train(self.model, chunk, self.reservoir, self.sampler)?;

            hr_sum += chunk_hr;
            ndcg_sum += chunk_ndcg;
            total_evaluated += n_evaluated;
            total_skipped += n_skipped;
            let record = ChunkRecord {
                chunk_index,
                hr: if n_evaluated > 0 { chunk_hr / n_evaluated as f64 } else { 0.0 },
                ndcg: if n_evaluated > 0 { chunk_ndcg / n_evaluated as f64 } else { 0.0 },
                n_evaluated,
                n_skipped,
                losses,
            };
            on_chunk(&record);
            chunks.push(record);
        }

        let summary = MetricsReport {
            hr: if total_evaluated > 0 { hr_sum / total_evaluated as f64 } else { 0.0 },
            ndcg: if total_evaluated > 0 { ndcg_sum / total_evaluated as f64 } else { 0.0 },
            n_evaluated: total_evaluated,
            n_skipped: total_skipped,
        };
        Ok(PrequentialOutcome { pretrain_chunks, chunks, summary })
    }
}
