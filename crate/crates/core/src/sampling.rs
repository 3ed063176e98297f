//! Reservoir maintenance and training-batch assembly.
//!
//! A FIFO reservoir keeps the most recent `capacity` interactions. Each
//! stream period the sampler turns the newly received chunk plus (depending
//! on load) decay-weighted reservoir draws into one training batch:
//!
//! * underload (`|new| < batch_size`): all new data plus
//!   `min(⌊|new|·δ⌋, batch_size − |new|)` historical draws, where older
//!   reservoir slots get geometrically smaller weight;
//! * balanced (`|new| == batch_size`): the chunk verbatim;
//! * overload (`|new| > batch_size`): `batch_size` decay-weighted draws from
//!   the chunk itself, favoring its most recent interactions.
//!
//! Baselines for comparison: `ndo` (new data only), `rr` (uniform reservoir
//! fill), `sw` (sliding window over reservoir ⧺ new).

use std::collections::{HashMap, HashSet, VecDeque};

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Interaction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Vrs,
    Ndo,
    Rr,
    Sw,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vrs" => Ok(Strategy::Vrs),
            "ndo" => Ok(Strategy::Ndo),
            "rr" => Ok(Strategy::Rr),
            "sw" => Ok(Strategy::Sw),
            other => Err(Error::config(format!(
                "unknown sampling strategy '{other}' (expected vrs, ndo, rr or sw)"
            ))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::Vrs => "vrs",
            Strategy::Ndo => "ndo",
            Strategy::Rr => "rr",
            Strategy::Sw => "sw",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    /// Historical draws per new interaction in underload (before the cap).
    pub delta: f64,
    /// Decay base for reservoir draws; 1 means uniform, larger favors recent.
    pub lambda_res: f64,
    /// Decay base for overload draws from the new chunk itself.
    pub lambda_new: f64,
    pub batch_size: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            strategy: Strategy::Vrs,
            delta: 0.5,
            lambda_res: 1.01,
            lambda_new: 1.01,
            batch_size: 256,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::config("delta must be finite and >= 0"));
        }
        for (name, lambda) in [("lambda_res", self.lambda_res), ("lambda_new", self.lambda_new)] {
            if !(lambda >= 1.0 && lambda.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and >= 1, got {lambda}")));
            }
        }
        Ok(())
    }
}

/// Anything that can answer "has this (user, item) pair been seen".
pub trait Membership {
    fn contains_pair(&self, user: u32, item: u32) -> bool;
}

impl Membership for HashSet<(u32, u32)> {
    fn contains_pair(&self, user: u32, item: u32) -> bool {
        self.contains(&(user, item))
    }
}

/// FIFO buffer of the most recent interactions with O(1) pair-membership
/// lookups. Duplicate pairs are reference-counted so eviction of one copy
/// does not forget the others.
#[derive(Debug, Clone)]
pub struct Reservoir {
    capacity: usize,
    buffer: VecDeque<Interaction>,
    members: HashMap<(u32, u32), u32>,
}

impl Reservoir {
    pub fn new(capacity: usize) -> Self {
        Reservoir { capacity, buffer: VecDeque::new(), members: HashMap::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Oldest → newest.
    pub fn iter(&self) -> impl Iterator<Item = &Interaction> {
        self.buffer.iter()
    }

    /// Slot `i` counted from the oldest buffered interaction.
    pub fn get(&self, i: usize) -> &Interaction {
        &self.buffer[i]
    }

    /// Appends in order, then evicts from the front until within capacity.
    pub fn insert_batch(&mut self, batch: &[Interaction]) {
        for it in batch {
            self.buffer.push_back(*it);
            *self.members.entry((it.user_id, it.item_id)).or_insert(0) += 1;
        }
        while self.buffer.len() > self.capacity {
            let evicted = self.buffer.pop_front().expect("non-empty while over capacity");
            let key = (evicted.user_id, evicted.item_id);
            match self.members.get_mut(&key) {
                Some(count) if *count > 1 => *count -= 1,
                Some(_) => {
                    self.members.remove(&key);
                }
                None => unreachable!("evicted pair must be tracked"),
            }
        }
    }

    pub fn contains(&self, user: u32, item: u32) -> bool {
        self.members.contains_key(&(user, item))
    }
}

impl Membership for Reservoir {
    fn contains_pair(&self, user: u32, item: u32) -> bool {
        self.contains(user, item)
    }
}

/// Normalized sampling distribution over `n` slots where slot `k` (1-based,
/// oldest first) has weight proportional to `lambda^(k-1)`:
/// `P(k) = λ^(k−1)·(λ−1)/(λ^n−1)`, and the uniform limit at λ = 1.
///
/// Computed in log space relative to the largest weight so that `n·ln λ` far
/// beyond float range still yields finite, correctly normalized values.
pub fn decayed_weights(n: usize, lambda: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::config("decayed_weights: slot count must be >= 1"));
    }
    if !(lambda >= 1.0 && lambda.is_finite()) {
        return Err(Error::config(format!(
            "decayed_weights: decay base must be finite and >= 1, got {lambda}"
        )));
    }
    if lambda == 1.0 {
        return Ok(vec![1.0 / n as f64; n]);
    }
    let log_lambda = lambda.ln();
    let mut weights: Vec<f64> =
        (0..n).map(|k| ((k as f64 - (n - 1) as f64) * log_lambda).exp()).collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    Ok(weights)
}

/// History sample size for underload batches: `min(⌊s_new·δ⌋, batch_size −
/// s_new)`, additionally clamped to how many interactions the reservoir
/// actually holds.
pub fn sample_size_underload(
    s_new: usize,
    delta: f64,
    batch_size: usize,
    reservoir_occupancy: usize,
) -> usize {
    let by_rate = (s_new as f64 * delta).floor() as usize;
    let headroom = batch_size.saturating_sub(s_new);
    by_rate.min(headroom).min(reservoir_occupancy)
}

/// `m` distinct indices drawn without replacement with probability
/// proportional to the given weights (successive-draw semantics), returned in
/// ascending index order.
///
/// Uses exponential-race keys (`log w + Gumbel noise`, keep the m largest),
/// which draws exactly the same distribution as sequential weighted sampling
/// without replacement and stays stable for extreme weight ratios.
pub fn sample_weighted_without_replacement<R: Rng>(
    weights: &[f64],
    m: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::config("sampling weights must be finite and >= 0"));
    }
    let log_weights: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    sample_by_log_weights(&log_weights, m, rng)
}

fn sample_by_log_weights<R: Rng>(log_weights: &[f64], m: usize, rng: &mut R) -> Result<Vec<usize>> {
    let n = log_weights.len();
    if m > n {
        return Err(Error::config(format!("cannot draw {m} of {n} without replacement")));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut keyed: Vec<(f64, usize)> = log_weights
        .iter()
        .enumerate()
        .map(|(i, lw)| {
            let u: f64 = rng.sample(Open01);
            let gumbel = -(-u.ln()).ln();
            (lw + gumbel, i)
        })
        .collect();
    if m < n {
        keyed.select_nth_unstable_by(m - 1, |a, b| b.0.partial_cmp(&a.0).expect("keys never NaN"));
    }
    let mut chosen: Vec<usize> = keyed[..m].iter().map(|(_, i)| *i).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Decay-weighted draw of `m` slots out of `n`, oldest slot weighted least.
fn sample_decayed<R: Rng>(n: usize, lambda: f64, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    let log_lambda = lambda.ln();
    let log_weights: Vec<f64> = (0..n).map(|k| k as f64 * log_lambda).collect();
    sample_by_log_weights(&log_weights, m, rng)
}

/// One period's training input: the selected interactions with bookkeeping of
/// how many came from the fresh chunk vs. the reservoir.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub interactions: Vec<Interaction>,
    pub n_new: usize,
    pub n_his: usize,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }
}

/// Decay-weighted batch assembly (the `vrs` strategy).
pub fn vrs_prepare<R: Rng>(
    new_data: &[Interaction],
    reservoir: &Reservoir,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<TrainingBatch> {
    cfg.validate()?;
    let s_new = new_data.len();
    let bs = cfg.batch_size;

    if s_new > bs {
        // Overload: thin the chunk itself, favoring its newest interactions.
        let chosen = sample_decayed(s_new, cfg.lambda_new, bs, rng)?;
        let interactions = chosen.into_iter().map(|i| new_data[i]).collect();
        return Ok(TrainingBatch { interactions, n_new: bs, n_his: 0 });
    }
    if s_new == bs {
        return Ok(TrainingBatch { interactions: new_data.to_vec(), n_new: s_new, n_his: 0 });
    }

    // Underload: everything new plus decay-weighted historical draws.
    let n_his = sample_size_underload(s_new, cfg.delta, bs, reservoir.len());
    let mut interactions = new_data.to_vec();
    let chosen = sample_decayed(reservoir.len(), cfg.lambda_res, n_his, rng)?;
    interactions.extend(chosen.into_iter().map(|i| *reservoir.get(i)));
    Ok(TrainingBatch { interactions, n_new: s_new, n_his })
}

/// Reference strategies: `ndo`, `rr`, `sw`. (`vrs` dispatches elsewhere; see
/// [`prepare_batch`].)
pub fn baseline_prepare<R: Rng>(
    strategy: Strategy,
    new_data: &[Interaction],
    reservoir: &Reservoir,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<TrainingBatch> {
    cfg.validate()?;
    let s_new = new_data.len();
    let bs = cfg.batch_size;
    match strategy {
        Strategy::Vrs => Err(Error::config("vrs is not a baseline; use prepare_batch")),
        Strategy::Ndo => {
            if s_new <= bs {
                Ok(TrainingBatch { interactions: new_data.to_vec(), n_new: s_new, n_his: 0 })
            } else {
                let mut chosen: Vec<usize> = rand::seq::index::sample(rng, s_new, bs).into_vec();
                chosen.sort_unstable();
                let interactions = chosen.into_iter().map(|i| new_data[i]).collect();
                Ok(TrainingBatch { interactions, n_new: bs, n_his: 0 })
            }
        }
        Strategy::Rr => {
            if s_new >= bs {
                // The random-replay baseline is only distinct in underload;
                // past that it degenerates to uniform truncation like ndo.
                return baseline_prepare(Strategy::Ndo, new_data, reservoir, cfg, rng);
            }
            let n_his = (bs - s_new).min(reservoir.len());
            let mut interactions = new_data.to_vec();
            let mut chosen: Vec<usize> =
                rand::seq::index::sample(rng, reservoir.len(), n_his).into_vec();
            chosen.sort_unstable();
            interactions.extend(chosen.into_iter().map(|i| *reservoir.get(i)));
            Ok(TrainingBatch { interactions, n_new: s_new, n_his })
        }
        Strategy::Sw => {
            // Most recent `bs` interactions of reservoir ⧺ new.
            let total = reservoir.len() + s_new;
            let take = total.min(bs);
            let from_new = take.min(s_new);
            let from_res = take - from_new;
            let mut interactions: Vec<Interaction> = reservoir
                .iter()
                .skip(reservoir.len() - from_res)
                .copied()
                .collect();
            interactions.extend_from_slice(&new_data[s_new - from_new..]);
            Ok(TrainingBatch { interactions, n_new: from_new, n_his: from_res })
        }
    }
}

/// Strategy dispatch used by the training loop.
pub fn prepare_batch<R: Rng>(
    new_data: &[Interaction],
    reservoir: &Reservoir,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<TrainingBatch> {
    match cfg.strategy {
        Strategy::Vrs => vrs_prepare(new_data, reservoir, cfg, rng),
        other => baseline_prepare(other, new_data, reservoir, cfg, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    // selective imports: proptest's prelude has a `Strategy` trait that would
    // shadow the sampling `Strategy` enum
    use proptest::{prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn it(user: u32, item: u32, seq: u64) -> Interaction {
        Interaction { user_id: user, item_id: item, seq_no: seq, label: 1 }
    }

    fn run(seq: std::ops::Range<u64>) -> Vec<Interaction> {
        seq.map(|s| it(s as u32, (s % 97) as u32, s)).collect()
    }

    fn cfg(strategy: Strategy) -> SamplerConfig {
        SamplerConfig { strategy, ..SamplerConfig::default() }
    }

    // --- reservoir ---

    #[test]
    fn fifo_eviction_keeps_the_newest() {
        let mut res = Reservoir::new(3);
        res.insert_batch(&[it(1, 1, 0), it(2, 2, 1), it(3, 3, 2)]);
        res.insert_batch(&[it(4, 4, 3), it(5, 5, 4)]);
        let seqs: Vec<u64> = res.iter().map(|i| i.seq_no).collect();
        assert_eq!(seqs, vec![2, 3, 4]);
        assert!(!res.contains(1, 1));
        assert!(!res.contains(2, 2));
        assert!(res.contains(3, 3));
        assert!(res.contains(5, 5));
    }

    #[test]
    fn oversized_insert_keeps_only_the_tail() {
        let mut res = Reservoir::new(2);
        res.insert_batch(&run(0..5));
        let seqs: Vec<u64> = res.iter().map(|i| i.seq_no).collect();
        assert_eq!(seqs, vec![3, 4]);
    }

    #[test]
    fn empty_insert_is_a_noop() {
        let mut res = Reservoir::new(2);
        res.insert_batch(&[]);
        assert!(res.is_empty());
    }

    #[test]
    fn duplicate_pairs_survive_partial_eviction() {
        let mut res = Reservoir::new(2);
        res.insert_batch(&[it(7, 7, 0), it(7, 7, 1), it(8, 8, 2)]);
        // one (7,7) copy was evicted, one remains
        assert_eq!(res.len(), 2);
        assert!(res.contains(7, 7));
        res.insert_batch(&[it(9, 9, 3)]);
        assert!(!res.contains(7, 7));
    }

    // --- decayed weights ---

    #[test]
    fn three_slots_base_two_gives_sevenths() {
        let w = decayed_weights(3, 2.0).unwrap();
        assert!((w[0] - 1.0 / 7.0).abs() < 1e-15);
        assert!((w[1] - 2.0 / 7.0).abs() < 1e-15);
        assert!((w[2] - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn base_one_is_uniform() {
        let w = decayed_weights(5, 1.0).unwrap();
        assert_eq!(w, vec![0.2; 5]);
    }

    #[test]
    fn matches_the_closed_form_fraction() {
        // λ^(k−1)·(λ−1)/(λ^n−1), checked against the log-space route.
        for (n, lambda) in [(10usize, 1.1f64), (50, 1.01), (7, 3.0)] {
            let w = decayed_weights(n, lambda).unwrap();
            for (k, wk) in w.iter().enumerate() {
                let direct =
                    lambda.powi(k as i32) * (lambda - 1.0) / (lambda.powi(n as i32) - 1.0);
                assert!((wk - direct).abs() < 1e-12, "n={n} λ={lambda} k={k}");
            }
        }
    }

    #[test]
    fn degenerate_parameters_are_rejected() {
        assert!(decayed_weights(0, 2.0).is_err());
        assert!(decayed_weights(5, 0.9).is_err());
        assert!(decayed_weights(5, f64::NAN).is_err());
    }

    #[test]
    fn log_space_survives_huge_exponents() {
        // 2^9999 overflows f64; the normalized tail must still be sane.
        let w = decayed_weights(10_000, 2.0).unwrap();
        assert!(w.iter().all(|v| v.is_finite()));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((w[9999] - 0.5).abs() < 1e-12);
    }

    // --- size rule ---

    #[test]
    fn underload_size_rule_cases() {
        // plain rate
        assert_eq!(sample_size_underload(128, 0.5, 256, 10_000), 64);
        // floor of fractional rate
        assert_eq!(sample_size_underload(5, 0.5, 256, 10_000), 2);
        // headroom cap wins
        assert_eq!(sample_size_underload(200, 1.0, 256, 10_000), 56);
        // delta zero
        assert_eq!(sample_size_underload(128, 0.0, 256, 10_000), 0);
        // reservoir occupancy clamp
        assert_eq!(sample_size_underload(128, 0.5, 256, 10), 10);
    }

    // --- weighted draws ---

    #[test]
    fn draw_of_everything_returns_all_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let idx = sample_weighted_without_replacement(&[1.0, 2.0, 3.0], 3, &mut rng).unwrap();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn draw_of_nothing_is_empty_and_overdraw_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_weighted_without_replacement(&[1.0], 0, &mut rng).unwrap().is_empty());
        assert!(sample_weighted_without_replacement(&[1.0], 2, &mut rng).is_err());
    }

    #[test]
    fn draws_are_distinct_and_seed_deterministic() {
        let w = decayed_weights(50, 1.05).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        let da = sample_weighted_without_replacement(&w, 20, &mut a).unwrap();
        let db = sample_weighted_without_replacement(&w, 20, &mut b).unwrap();
        assert_eq!(da, db);
        let unique: std::collections::HashSet<_> = da.iter().collect();
        assert_eq!(unique.len(), da.len());
    }

    #[test]
    fn single_draw_frequencies_follow_the_weights() {
        let weights = [0.1, 0.2, 0.3, 0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 4];
        let trials = 40_000;
        for _ in 0..trials {
            let idx = sample_weighted_without_replacement(&weights, 1, &mut rng).unwrap()[0];
            counts[idx] += 1;
        }
        for (c, w) in counts.iter().zip(&weights) {
            let freq = *c as f64 / trials as f64;
            assert!((freq - w).abs() < 0.01, "freq {freq} vs weight {w}");
        }
    }

    #[test]
    fn inclusion_frequency_rises_with_recency() {
        // Spearman rank correlation between slot index and how often the slot
        // is drawn, under the defaults used for historical replay.
        let s_res = 100;
        let mut reservoir = Reservoir::new(s_res);
        reservoir.insert_batch(&run(0..s_res as u64));
        let sampler = SamplerConfig {
            strategy: Strategy::Vrs,
            delta: 0.5,
            lambda_res: 1.01,
            lambda_new: 1.01,
            batch_size: 256,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = vec![0usize; s_res];
        for _ in 0..10_000 {
            let batch = vrs_prepare(&run(1000..1020), &reservoir, &sampler, &mut rng).unwrap();
            assert_eq!(batch.n_his, 10);
            for hist in &batch.interactions[batch.n_new..] {
                counts[hist.seq_no as usize] += 1;
            }
        }
        let rho = spearman(&counts);
        assert!(rho > 0.9, "spearman rho {rho}");
    }

    fn spearman(counts: &[usize]) -> f64 {
        // ranks of counts (average rank on ties) against slot order 0..n
        let n = counts.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| counts[i]);
        let mut ranks = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && counts[order[j + 1]] == counts[order[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for k in i..=j {
                ranks[order[k]] = avg;
            }
            i = j + 1;
        }
        let mean = (n as f64 - 1.0) / 2.0;
        let mut num = 0.0;
        let mut da = 0.0;
        let mut db = 0.0;
        for (slot, r) in ranks.iter().enumerate() {
            let a = slot as f64 - mean;
            let b = r - mean;
            num += a * b;
            da += a * a;
            db += b * b;
        }
        num / (da.sqrt() * db.sqrt())
    }

    // --- vrs batch assembly ---

    #[test]
    fn underload_mixes_all_new_with_historical_draws() {
        let mut reservoir = Reservoir::new(10_000);
        reservoir.insert_batch(&run(0..500));
        let new_data = run(500..628);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = vrs_prepare(&new_data, &reservoir, &cfg(Strategy::Vrs), &mut rng).unwrap();
        assert_eq!(batch.n_new, 128);
        assert_eq!(batch.n_his, 64);
        assert_eq!(batch.len(), 192);
        assert_eq!(&batch.interactions[..128], &new_data[..]);
        for hist in &batch.interactions[128..] {
            assert!(reservoir.contains(hist.user_id, hist.item_id));
            assert!(hist.seq_no < 500);
        }
    }

    #[test]
    fn warm_up_reservoir_clamps_historical_count() {
        let mut reservoir = Reservoir::new(10_000);
        reservoir.insert_batch(&run(0..10));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = vrs_prepare(&run(10..138), &reservoir, &cfg(Strategy::Vrs), &mut rng).unwrap();
        assert_eq!(batch.n_his, 10);
        assert_eq!(batch.len(), 138);
    }

    #[test]
    fn balanced_chunk_passes_through_verbatim() {
        let reservoir = {
            let mut r = Reservoir::new(10_000);
            r.insert_batch(&run(0..500));
            r
        };
        let new_data = run(500..756);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = vrs_prepare(&new_data, &reservoir, &cfg(Strategy::Vrs), &mut rng).unwrap();
        assert_eq!(batch.interactions, new_data);
        assert_eq!(batch.n_new, 256);
        assert_eq!(batch.n_his, 0);
    }

    #[test]
    fn overload_thins_the_chunk_to_batch_size() {
        let reservoir = Reservoir::new(10_000);
        let new_data = run(0..512);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = vrs_prepare(&new_data, &reservoir, &cfg(Strategy::Vrs), &mut rng).unwrap();
        assert_eq!(batch.len(), 256);
        assert_eq!(batch.n_new, 256);
        assert_eq!(batch.n_his, 0);
        // all from the chunk, arrival order preserved, no duplicates
        let mut last = None;
        for sel in &batch.interactions {
            assert!(new_data.contains(sel));
            if let Some(prev) = last {
                assert!(sel.seq_no > prev);
            }
            last = Some(sel.seq_no);
        }
    }

    #[test]
    fn empty_chunk_and_empty_reservoir_give_empty_batch() {
        let reservoir = Reservoir::new(100);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = vrs_prepare(&[], &reservoir, &cfg(Strategy::Vrs), &mut rng).unwrap();
        assert!(batch.is_empty());
        assert_eq!(batch.n_new, 0);
        assert_eq!(batch.n_his, 0);
    }

    // --- baselines ---

    #[test]
    fn ndo_passes_small_chunks_and_truncates_large_ones() {
        let reservoir = {
            let mut r = Reservoir::new(1000);
            r.insert_batch(&run(0..300));
            r
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let small = run(300..428);
        let batch =
            baseline_prepare(Strategy::Ndo, &small, &reservoir, &cfg(Strategy::Ndo), &mut rng)
                .unwrap();
        assert_eq!(batch.interactions, small);
        assert_eq!(batch.n_his, 0);

        let large = run(300..812);
        let batch =
            baseline_prepare(Strategy::Ndo, &large, &reservoir, &cfg(Strategy::Ndo), &mut rng)
                .unwrap();
        assert_eq!(batch.len(), 256);
        assert!(batch.interactions.iter().all(|i| i.seq_no >= 300));
    }

    #[test]
    fn rr_fills_with_uniform_reservoir_draws() {
        let mut reservoir = Reservoir::new(1000);
        reservoir.insert_batch(&run(0..500));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let new_data = run(500..628);
        let batch =
            baseline_prepare(Strategy::Rr, &new_data, &reservoir, &cfg(Strategy::Rr), &mut rng)
                .unwrap();
        assert_eq!(batch.n_new, 128);
        assert_eq!(batch.n_his, 128);
        assert_eq!(batch.len(), 256);
        for hist in &batch.interactions[128..] {
            assert!(hist.seq_no < 500);
        }
    }

    #[test]
    fn rr_draws_are_uniform_over_slots() {
        // chi-square GOF against uniform slot inclusion
        let s_res = 20;
        let mut reservoir = Reservoir::new(s_res);
        reservoir.insert_batch(&run(0..s_res as u64));
        let sampler = SamplerConfig { batch_size: 25, ..cfg(Strategy::Rr) };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut counts = vec![0f64; s_res];
        let trials = 4000;
        for _ in 0..trials {
            let batch =
                baseline_prepare(Strategy::Rr, &run(100..120), &reservoir, &sampler, &mut rng)
                    .unwrap();
            for hist in &batch.interactions[batch.n_new..] {
                counts[hist.seq_no as usize] += 1.0;
            }
        }
        let expected = (trials * 5) as f64 / s_res as f64;
        let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // dof = 19; 0.999 quantile ≈ 43.8
        assert!(stat < 43.8, "chi-square stat {stat}");
    }

    #[test]
    fn sw_takes_the_most_recent_window() {
        let mut reservoir = Reservoir::new(1000);
        reservoir.insert_batch(&run(0..500));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let new_data = run(500..628);
        let batch =
            baseline_prepare(Strategy::Sw, &new_data, &reservoir, &cfg(Strategy::Sw), &mut rng)
                .unwrap();
        assert_eq!(batch.len(), 256);
        assert_eq!(batch.n_new, 128);
        assert_eq!(batch.n_his, 128);
        let seqs: Vec<u64> = batch.interactions.iter().map(|i| i.seq_no).collect();
        let expected: Vec<u64> = (372..628).collect();
        assert_eq!(seqs, expected);
    }

    #[test]
    fn sw_with_short_history_takes_everything() {
        let mut reservoir = Reservoir::new(1000);
        reservoir.insert_batch(&run(0..10));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch =
            baseline_prepare(Strategy::Sw, &run(10..20), &reservoir, &cfg(Strategy::Sw), &mut rng)
                .unwrap();
        assert_eq!(batch.len(), 20);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut c = SamplerConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = SamplerConfig::default();
        c.delta = -0.1;
        assert!(c.validate().is_err());
        let mut c = SamplerConfig::default();
        c.lambda_res = 0.5;
        assert!(c.validate().is_err());
        assert!("vrs".parse::<Strategy>().is_ok());
        assert!("bogus".parse::<Strategy>().is_err());
    }

    proptest! {
        #[test]
        fn weights_are_positive_increasing_and_normalized(n in 1usize..200, lambda in 1.0f64..3.0) {
            let w = decayed_weights(n, lambda).unwrap();
            prop_assert_eq!(w.len(), n);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&v| v > 0.0));
            if lambda > 1.0 {
                prop_assert!(w.windows(2).all(|p| p[0] < p[1]));
            }
        }

        #[test]
        fn batches_respect_size_and_composition_invariants(
            s_new in 0usize..400,
            occupancy in 0usize..400,
            strategy_idx in 0usize..4,
            seed in 0u64..50,
        ) {
            let strategy = [Strategy::Vrs, Strategy::Ndo, Strategy::Rr, Strategy::Sw][strategy_idx];
            let sampler = SamplerConfig { strategy, ..SamplerConfig::default() };
            let mut reservoir = Reservoir::new(10_000);
            reservoir.insert_batch(&run(0..occupancy as u64));
            let new_data = run(1000..1000 + s_new as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batch = prepare_batch(&new_data, &reservoir, &sampler, &mut rng).unwrap();
            prop_assert!(batch.len() <= sampler.batch_size);
            prop_assert_eq!(batch.n_new + batch.n_his, batch.len());
            // underload vrs carries every new interaction exactly once
            if strategy == Strategy::Vrs && s_new < sampler.batch_size {
                prop_assert_eq!(&batch.interactions[..s_new], &new_data[..]);
            }
        }
    }
}
