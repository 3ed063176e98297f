//! Dataset ingestion: delimited rating logs in, a chronological stream of
//! dense-id implicit-feedback interactions out.
//!
//! Pipeline: [`parse_interactions`] (sort by timestamp, densify ids) →
//! optional [`sample_users`] → [`filter_min_interactions`] → [`binarize`] →
//! [`chronological_split`] → [`stream_chunks`]. Each stage re-densifies ids
//! and renumbers sequence positions so its output is self-consistent.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parsed record with its explicit rating still attached.
#[derive(Debug, Clone, PartialEq)]
pub struct RatedInteraction {
    pub user_id: u32,
    pub item_id: u32,
    pub rating: f64,
    /// Position in the chronological stream (unique, strictly increasing).
    pub seq_no: u64,
}

/// Implicit-feedback interaction. Everything that was ingested carries
/// `label == 1`; label-0 examples exist only as synthesized negatives during
/// training and never enter a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: u32,
    pub item_id: u32,
    pub seq_no: u64,
    pub label: u8,
}

/// Interactions with ratings plus the dense→raw id mappings.
#[derive(Debug, Clone, PartialEq)]
pub struct RatedDataset {
    pub interactions: Vec<RatedInteraction>,
    /// Raw id of each dense user index.
    pub user_ids: Vec<u64>,
    /// Raw id of each dense item index.
    pub item_ids: Vec<u64>,
}

/// Binarized dataset ready for streaming.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub interactions: Vec<Interaction>,
    pub user_ids: Vec<u64>,
    pub item_ids: Vec<u64>,
}

impl RatedDataset {
    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }
    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }
    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }
}

/// How fast interactions arrive (`s_r` per period) relative to how many the
/// trainer consumes per period (`s_p`), plus the train/test boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub s_p: usize,
    pub s_r: usize,
    pub train_fraction: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig { s_p: 256, s_r: 256, train_fraction: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Data arrives slower than it is consumed (`s_r < s_p`).
    Underload,
    Balanced,
    /// Data arrives faster than it is consumed (`s_r > s_p`).
    Overload,
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s_p == 0 || self.s_r == 0 {
            return Err(Error::config("s_p and s_r must be >= 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config(format!(
                "train_fraction must lie strictly between 0 and 1, got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }

    pub fn scenario(&self) -> Scenario {
        use std::cmp::Ordering::*;
        match self.s_r.cmp(&self.s_p) {
            Less => Scenario::Underload,
            Equal => Scenario::Balanced,
            Greater => Scenario::Overload,
        }
    }
}

/// Parses `user<delim>item<delim>rating<delim>timestamp` records, sorts them
/// by timestamp (ties keep input order), and maps raw ids to dense 0-based
/// indices in order of first appearance in the sorted stream.
pub fn parse_interactions<R: BufRead>(input: R, delimiter: &str) -> Result<RatedDataset> {
    struct Raw {
        user: u64,
        item: u64,
        rating: f64,
        timestamp: f64,
    }

    let mut raw = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(delimiter).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let user: u64 = fields[0].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("non-numeric user id '{}'", fields[0]),
        })?;
        let item: u64 = fields[1].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("non-numeric item id '{}'", fields[1]),
        })?;
        let rating: f64 = fields[2].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("non-numeric rating '{}'", fields[2]),
        })?;
        let timestamp: f64 = fields[3].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("non-numeric timestamp '{}'", fields[3]),
        })?;
        if !timestamp.is_finite() || !rating.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                message: "rating and timestamp must be finite".into(),
            });
        }
        raw.push(Raw { user, item, rating, timestamp });
    }

    // Stable sort keeps input order among equal timestamps.
    raw.sort_by(|a, b| a.timestamp.partial_cmp(&b.timestamp).expect("finite timestamps"));

    let mut user_dense: HashMap<u64, u32> = HashMap::new();
    let mut item_dense: HashMap<u64, u32> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let interactions = raw
        .into_iter()
        .enumerate()
        .map(|(seq, r)| {
            let user_id = *user_dense.entry(r.user).or_insert_with(|| {
                user_ids.push(r.user);
                (user_ids.len() - 1) as u32
            });
            let item_id = *item_dense.entry(r.item).or_insert_with(|| {
                item_ids.push(r.item);
                (item_ids.len() - 1) as u32
            });
            RatedInteraction { user_id, item_id, rating: r.rating, seq_no: seq as u64 }
        })
        .collect();

    Ok(RatedDataset { interactions, user_ids, item_ids })
}

/// Convenience wrapper over [`parse_interactions`] for a file on disk.
pub fn parse_interactions_file(path: &Path, delimiter: &str) -> Result<RatedDataset> {
    let file = File::open(path)?;
    parse_interactions(BufReader::new(file), delimiter)
}

/// Keeps only interactions whose user has *strictly more* than `min_count`
/// interactions, then re-densifies ids and renumbers sequence positions.
pub fn filter_min_interactions(dataset: RatedDataset, min_count: usize) -> RatedDataset {
    let mut counts = vec![0usize; dataset.n_users()];
    for it in &dataset.interactions {
        counts[it.user_id as usize] += 1;
    }
    let keep: Vec<bool> = counts.iter().map(|&c| c > min_count).collect();
    let kept = dataset
        .interactions
        .into_iter()
        .filter(|it| keep[it.user_id as usize])
        .collect::<Vec<_>>();
    redensify(kept, &dataset.user_ids, &dataset.item_ids)
}

/// Keeps the interactions of `n` users drawn uniformly without replacement
/// (the whole dataset if it has at most `n` users), re-densified.
pub fn sample_users<R: Rng>(dataset: RatedDataset, n: usize, rng: &mut R) -> RatedDataset {
    if n >= dataset.n_users() {
        return dataset;
    }
    let chosen = rand::seq::index::sample(rng, dataset.n_users(), n);
    let mut keep = vec![false; dataset.n_users()];
    for idx in chosen {
        keep[idx] = true;
    }
    let kept = dataset
        .interactions
        .into_iter()
        .filter(|it| keep[it.user_id as usize])
        .collect::<Vec<_>>();
    redensify(kept, &dataset.user_ids, &dataset.item_ids)
}

fn redensify(kept: Vec<RatedInteraction>, old_users: &[u64], old_items: &[u64]) -> RatedDataset {
    let mut user_map: HashMap<u32, u32> = HashMap::new();
    let mut item_map: HashMap<u32, u32> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let interactions = kept
        .into_iter()
        .enumerate()
        .map(|(seq, it)| {
            let user_id = *user_map.entry(it.user_id).or_insert_with(|| {
                user_ids.push(old_users[it.user_id as usize]);
                (user_ids.len() - 1) as u32
            });
            let item_id = *item_map.entry(it.item_id).or_insert_with(|| {
                item_ids.push(old_items[it.item_id as usize]);
                (item_ids.len() - 1) as u32
            });
            RatedInteraction { user_id, item_id, rating: it.rating, seq_no: seq as u64 }
        })
        .collect();
    RatedDataset { interactions, user_ids, item_ids }
}

/// Discards rating values; every retained interaction becomes label 1.
/// Repeat (user, item) pairs stay as distinct interactions.
pub fn binarize(dataset: RatedDataset) -> Dataset {
    let interactions = dataset
        .interactions
        .into_iter()
        .map(|it| Interaction { user_id: it.user_id, item_id: it.item_id, seq_no: it.seq_no, label: 1 })
        .collect();
    Dataset { interactions, user_ids: dataset.user_ids, item_ids: dataset.item_ids }
}

/// Splits at `floor(n · train_fraction)`: everything before the cut trains,
/// everything after is the evaluation stream.
pub fn chronological_split(
    interactions: &[Interaction],
    train_fraction: f64,
) -> Result<(&[Interaction], &[Interaction])> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train_fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let cut = (interactions.len() as f64 * train_fraction).floor() as usize;
    Ok(interactions.split_at(cut))
}

/// Consecutive arrival chunks of `s_r` interactions; the final chunk may be
/// shorter. `s_r` must be at least 1.
pub fn stream_chunks(interactions: &[Interaction], s_r: usize) -> Result<std::slice::Chunks<'_, Interaction>> {
    if s_r == 0 {
        return Err(Error::config("chunk size s_r must be >= 1"));
    }
    Ok(interactions.chunks(s_r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Cursor;

    fn parse(text: &str) -> RatedDataset {
        parse_interactions(Cursor::new(text), ",").unwrap()
    }

    #[test]
    fn rows_are_sorted_by_timestamp() {
        let ds = parse("10,7,5,300\n11,8,4,100\n12,9,3,200\n");
        let users: Vec<u64> = ds.interactions.iter().map(|it| ds.user_ids[it.user_id as usize]).collect();
        assert_eq!(users, vec![11, 12, 10]);
        let seqs: Vec<u64> = ds.interactions.iter().map(|it| it.seq_no).collect();
        assert_eq!(seqs, vec![0, 1, 2]);
    }

    #[test]
    fn equal_timestamps_keep_input_order() {
        let ds = parse("1,1,5,100\n2,2,5,100\n3,3,5,100\n");
        let users: Vec<u64> = ds.interactions.iter().map(|it| ds.user_ids[it.user_id as usize]).collect();
        assert_eq!(users, vec![1, 2, 3]);
    }

    #[test]
    fn empty_source_gives_empty_dataset() {
        let ds = parse("");
        assert!(ds.interactions.is_empty());
        assert_eq!(ds.n_users(), 0);
        assert_eq!(ds.n_items(), 0);
    }

    #[test]
    fn non_numeric_user_reports_the_line() {
        let err = parse_interactions(Cursor::new("1,1,5,100\nabc,2,5,200\n"), ",").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("user"), "{message}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn wrong_field_count_reports_the_line() {
        let err = parse_interactions(Cursor::new("1,1,5\n"), ",").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn double_colon_delimiter_is_supported() {
        let ds = parse_interactions(Cursor::new("1::1193::5::978300760\n"), "::").unwrap();
        assert_eq!(ds.interactions.len(), 1);
        assert_eq!(ds.user_ids, vec![1]);
        assert_eq!(ds.item_ids, vec![1193]);
    }

    #[test]
    fn ids_are_dense_and_mapping_round_trips() {
        let ds = parse("100,900,5,1\n200,900,5,2\n100,901,5,3\n");
        assert_eq!(ds.n_users(), 2);
        assert_eq!(ds.n_items(), 2);
        assert_eq!(ds.user_ids, vec![100, 200]);
        assert_eq!(ds.item_ids, vec![900, 901]);
        assert!(ds.interactions.iter().all(|it| (it.user_id as usize) < 2));
    }

    fn synthetic_counts(counts: &[usize]) -> RatedDataset {
        // user u appears counts[u] times; timestamps interleave users.
        let mut text = String::new();
        let mut t = 0;
        for (u, &c) in counts.iter().enumerate() {
            for k in 0..c {
                text.push_str(&format!("{u},{},5,{}\n", k % 3, t));
                t += 1;
            }
        }
        parse(&text)
    }

    #[test]
    fn filter_keeps_only_strictly_more_than_min() {
        let ds = synthetic_counts(&[11, 10, 12]);
        let filtered = filter_min_interactions(ds, 10);
        // users with 11 and 12 interactions stay; exactly 10 goes.
        assert_eq!(filtered.n_users(), 2);
        assert_eq!(filtered.interactions.len(), 23);
        assert_eq!(filtered.user_ids, vec![0, 2]);
        // re-densified: max dense id < n_users, seq renumbered 0..n.
        for (i, it) in filtered.interactions.iter().enumerate() {
            assert!((it.user_id as usize) < filtered.n_users());
            assert_eq!(it.seq_no, i as u64);
        }
    }

    #[test]
    fn filter_with_zero_min_count_keeps_everyone_with_at_least_one() {
        let ds = synthetic_counts(&[1, 2]);
        let filtered = filter_min_interactions(ds.clone(), 0);
        assert_eq!(filtered, ds);
    }

    #[test]
    fn filter_relative_order_is_preserved() {
        let ds = synthetic_counts(&[3, 11, 11]);
        let pairs_before: Vec<(u64, u64)> = ds
            .interactions
            .iter()
            .filter(|it| it.user_id != 0)
            .map(|it| (ds.user_ids[it.user_id as usize], ds.item_ids[it.item_id as usize]))
            .collect();
        let filtered = filter_min_interactions(ds, 10);
        let pairs_after: Vec<(u64, u64)> = filtered
            .interactions
            .iter()
            .map(|it| (filtered.user_ids[it.user_id as usize], filtered.item_ids[it.item_id as usize]))
            .collect();
        assert_eq!(pairs_before, pairs_after);
    }

    #[test]
    fn binarize_labels_everything_one_and_keeps_duplicates() {
        let ds = parse("1,1,1,10\n1,1,3,20\n1,1,5,30\n");
        let bin = binarize(ds);
        assert_eq!(bin.interactions.len(), 3);
        assert!(bin.interactions.iter().all(|it| it.label == 1));
    }

    #[test]
    fn split_uses_floor_of_fraction() {
        let ds = binarize(synthetic_counts(&[10]));
        let (train, test) = chronological_split(&ds.interactions, 0.9).unwrap();
        assert_eq!(train.len(), 9);
        assert_eq!(test.len(), 1);
        assert!(train.iter().all(|it| it.seq_no < test[0].seq_no));
    }

    #[test]
    fn split_of_single_interaction_at_half_goes_to_test() {
        let ds = binarize(synthetic_counts(&[1]));
        let (train, test) = chronological_split(&ds.interactions, 0.5).unwrap();
        assert_eq!(train.len(), 0);
        assert_eq!(test.len(), 1);
    }

    #[test]
    fn split_rejects_out_of_range_fractions() {
        let ds = binarize(synthetic_counts(&[5]));
        assert!(chronological_split(&ds.interactions, 0.0).is_err());
        assert!(chronological_split(&ds.interactions, 1.0).is_err());
        assert!(chronological_split(&ds.interactions, 1.5).is_err());
    }

    #[test]
    fn chunking_covers_the_stream_with_a_short_tail() {
        let ds = binarize(synthetic_counts(&[1000]));
        let chunks: Vec<_> = stream_chunks(&ds.interactions, 512).unwrap().collect();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].len(), 512);
        assert_eq!(chunks[1].len(), 488);
    }

    #[test]
    fn chunk_size_larger_than_stream_gives_single_chunk() {
        let ds = binarize(synthetic_counts(&[5]));
        let chunks: Vec<_> = stream_chunks(&ds.interactions, 100).unwrap().collect();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].len(), 5);
    }

    #[test]
    fn zero_chunk_size_is_a_config_error() {
        let ds = binarize(synthetic_counts(&[5]));
        assert!(stream_chunks(&ds.interactions, 0).is_err());
    }

    #[test]
    fn sample_users_keeps_exactly_n_users_deterministically() {
        let ds = synthetic_counts(&[12, 12, 12, 12, 12]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sampled = sample_users(ds.clone(), 3, &mut rng);
        assert_eq!(sampled.n_users(), 3);
        let mut rng2 = ChaCha8Rng::seed_from_u64(9);
        let again = sample_users(ds.clone(), 3, &mut rng2);
        assert_eq!(sampled, again);
        let all = sample_users(ds.clone(), 10, &mut rng);
        assert_eq!(all, ds);
    }

    #[test]
    fn parsing_is_deterministic() {
        let text = "3,5,4,100\n1,5,2,100\n2,9,1,50\n";
        assert_eq!(parse(text), parse(text));
    }

    #[test]
    fn scenario_classification() {
        let mk = |s_r| StreamConfig { s_p: 256, s_r, train_fraction: 0.9 };
        assert_eq!(mk(128).scenario(), Scenario::Underload);
        assert_eq!(mk(256).scenario(), Scenario::Balanced);
        assert_eq!(mk(512).scenario(), Scenario::Overload);
        assert!(mk(0).validate().is_err());
        assert!(StreamConfig { s_p: 1, s_r: 1, train_fraction: 1.0 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn chunks_concatenate_back_to_the_stream(len in 0usize..400, s_r in 1usize..64) {
            let interactions: Vec<Interaction> = (0..len)
                .map(|i| Interaction { user_id: i as u32 % 7, item_id: i as u32 % 5, seq_no: i as u64, label: 1 })
                .collect();
            let rejoined: Vec<Interaction> = stream_chunks(&interactions, s_r)
                .unwrap()
                .flatten()
                .copied()
                .collect();
            prop_assert_eq!(rejoined, interactions);
        }

        #[test]
        fn filtered_users_all_exceed_min_count(min in 0usize..6, counts in proptest::collection::vec(1usize..8, 1..10)) {
            let ds = synthetic_counts(&counts);
            let filtered = filter_min_interactions(ds, min);
            let mut seen = vec![0usize; filtered.n_users()];
            for it in &filtered.interactions {
                seen[it.user_id as usize] += 1;
            }
            prop_assert!(seen.iter().all(|&c| c > min));
        }
    }
}
