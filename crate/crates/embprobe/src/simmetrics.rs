//! Trial sampling, cosine scoring, ROC/EER, and similarity statistics.
//!
//! Verification quality is measured on a sampled list of labeled utterance
//! pairs: each speaker anchors a fixed quota of trials, scores are cosine
//! similarities, and the equal error rate is read off the FAR/FRR sweep.
//! Intra-speaker similarity is exact over all same-speaker pairs, while
//! inter-speaker similarity reuses the sampled trial list.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EvaluationDataset, Gender, UtteranceRecord};
use crate::seed;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("trial references unknown key {0:?}")]
    UnknownKey(String),
    #[error("trials must contain at least one same and one different pair")]
    DegenerateTrials,
    #[error("non-finite trial score")]
    NonFiniteScore,
    #[error("speaker {0:?} cannot fill its trial quota")]
    InsufficientPairs(String),
    #[error("same_per_speaker {same} exceeds per_speaker {per}")]
    BadQuota { same: usize, per: usize },
    #[error("duplicate unordered pair {0:?}/{1:?}")]
    DuplicatePair(String, String),
    #[error("trial pairs an utterance {0:?} with itself")]
    SelfPair(String),
    #[error("group {0:?} has no usable trials or speakers")]
    EmptyGroup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One labeled verification pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub key_a: String,
    pub key_b: String,
    pub same_speaker: bool,
}

/// Sampled trial set plus the quotas it was built under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialList {
    pub trials: Vec<Trial>,
    pub seed: u64,
    pub per_speaker: usize,
    pub same_per_speaker: usize,
}

impl TrialList {
    pub fn n_same(&self) -> usize {
        self.trials.iter().filter(|t| t.same_speaker).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub n_same: usize,
    pub n_diff: usize,
}

/// Symmetric speaker-by-speaker mean cosine similarity.
///
/// Diagonal cells hold exact intra-speaker means; off-diagonal cells are
/// averaged over sampled different-speaker trials and are absent (not zero)
/// when the trial list never paired the two speakers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub speakers: Vec<String>,
    values: Vec<Option<f64>>,
}

impl SimilarityMatrix {
    fn new(speakers: Vec<String>) -> Self {
        let n = speakers.len();
        SimilarityMatrix {
            speakers,
            values: vec![None; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.speakers.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.n() + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let n = self.n();
        self.values[i * n + j] = Some(v);
        self.values[j * n + i] = Some(v);
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        let mut writer = csv::Writer::from_path(path.as_ref())?;
        let mut header = vec!["speaker".to_string()];
        header.extend(self.speakers.iter().cloned());
        writer.write_record(&header)?;
        for (i, s) in self.speakers.iter().enumerate() {
            let mut row = vec![s.clone()];
            for j in 0..self.n() {
                row.push(match self.get(i, j) {
                    Some(v) => format!("{v:.6}"),
                    None => String::new(),
                });
            }
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Cosine similarity with f64 accumulation.
pub fn cosine(e1: &[f32], e2: &[f32]) -> Result<f64, SimError> {
    if e1.len() != e2.len() {
        return Err(SimError::DimMismatch(e1.len(), e2.len()));
    }
    let mut dot = 0.0f64;
    let mut n1 = 0.0f64;
    let mut n2 = 0.0f64;
    for (a, b) in e1.iter().zip(e2) {
        let (a, b) = (*a as f64, *b as f64);
        dot += a * b;
        n1 += a * a;
        n2 += b * b;
    }
    if n1 == 0.0 || n2 == 0.0 {
        return Err(SimError::ZeroVector);
    }
    Ok(dot / (n1.sqrt() * n2.sqrt()))
}

fn canonical_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Pick `k` items uniformly without replacement, in random order.
fn choose_k<T>(items: &mut Vec<T>, k: usize, rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::Rng;
    debug_assert!(k <= items.len());
    for i in 0..k {
        let j = rng.random_range(i..items.len());
        items.swap(i, j);
    }
    items.truncate(k);
}

/// Sample per-speaker anchored trials.
///
/// Each speaker anchors exactly `per_speaker` trials, `same_per_speaker` of
/// them same-speaker, drawn uniformly without replacement; an unordered pair
/// appears at most once in the whole list. Speakers are processed in sorted
/// order so the result depends only on the dataset and the seed.
pub fn sample_trials(
    dataset: &EvaluationDataset,
    per_speaker: usize,
    same_per_speaker: usize,
    seed: u64,
) -> Result<TrialList, SimError> {
    if same_per_speaker > per_speaker {
        return Err(SimError::BadQuota {
            same: same_per_speaker,
            per: per_speaker,
        });
    }
    let mut rng = seed::rng(seed);
    let all_keys: Vec<&String> = dataset.records().iter().map(|r| &r.utterance_key).collect();

    let mut used: HashSet<(String, String)> = HashSet::new();
    let mut trials = Vec::with_capacity(dataset.n_speakers() * per_speaker);
    for speaker in dataset.speakers().map(str::to_string).collect::<Vec<_>>() {
        let own = dataset.speaker_utterances(&speaker);

        let mut same_pool: Vec<(usize, usize)> = Vec::new();
        for i in 0..own.len() {
            for j in (i + 1)..own.len() {
                if !used.contains(&canonical_pair(&own[i], &own[j])) {
                    same_pool.push((i, j));
                }
            }
        }
        if same_pool.len() < same_per_speaker {
            return Err(SimError::InsufficientPairs(speaker));
        }
        choose_k(&mut same_pool, same_per_speaker, &mut rng);
        for (i, j) in same_pool {
            used.insert(canonical_pair(&own[i], &own[j]));
            trials.push(Trial {
                key_a: own[i].clone(),
                key_b: own[j].clone(),
                same_speaker: true,
            });
        }

        let diff_quota = per_speaker - same_per_speaker;
        let mut diff_pool: Vec<(&String, &String)> = Vec::new();
        for a in own {
            for &b in &all_keys {
                if dataset.record(b).map(|r| r.speaker_id.as_str()) == Some(speaker.as_str()) {
                    continue;
                }
                if !used.contains(&canonical_pair(a, b)) {
                    diff_pool.push((a, b));
                }
            }
        }
        if diff_pool.len() < diff_quota {
            return Err(SimError::InsufficientPairs(speaker));
        }
        choose_k(&mut diff_pool, diff_quota, &mut rng);
        for (a, b) in diff_pool {
            used.insert(canonical_pair(a, b));
            trials.push(Trial {
                key_a: a.clone(),
                key_b: b.clone(),
                same_speaker: false,
            });
        }
    }

    Ok(TrialList {
        trials,
        seed,
        per_speaker,
        same_per_speaker,
    })
}

/// Score trials and split into (same, diff) score lists, in trial order.
fn score_split(
    dataset: &EvaluationDataset,
    trials: &[Trial],
) -> Result<(Vec<f64>, Vec<f64>), SimError> {
    let scored: Vec<(f64, bool)> = trials
        .par_iter()
        .map(|t| {
            let a = dataset
                .embedding(&t.key_a)
                .ok_or_else(|| SimError::UnknownKey(t.key_a.clone()))?;
            let b = dataset
                .embedding(&t.key_b)
                .ok_or_else(|| SimError::UnknownKey(t.key_b.clone()))?;
            Ok((cosine(a, b)?, t.same_speaker))
        })
        .collect::<Result<_, SimError>>()?;
    let mut same = Vec::new();
    let mut diff = Vec::new();
    for (score, is_same) in scored {
        if is_same {
            same.push(score);
        } else {
            diff.push(score);
        }
    }
    Ok((same, diff))
}

/// EER from raw score lists.
///
/// FAR(t) = fraction of different-pair scores ≥ t, FRR(t) = fraction of
/// same-pair scores < t. Candidate thresholds are the distinct scores in
/// ascending order plus a sentinel above the maximum, so the sweep walks
/// every operating point from (FAR 1, FRR 0) to (0, 1). FAR − FRR is
/// non-increasing along the walk; the first exact zero wins (ties toward
/// the lower threshold), otherwise the sign change is interpolated linearly.
pub fn eer_from_scores(same: &[f64], diff: &[f64]) -> Result<EerResult, SimError> {
    if same.is_empty() || diff.is_empty() {
        return Err(SimError::DegenerateTrials);
    }
    if same.iter().chain(diff).any(|s| !s.is_finite()) {
        return Err(SimError::NonFiniteScore);
    }
    let n_same = same.len();
    let n_diff = diff.len();

    let mut same_sorted = same.to_vec();
    same_sorted.sort_by(f64::total_cmp);
    let mut diff_sorted = diff.to_vec();
    diff_sorted.sort_by(f64::total_cmp);

    let mut candidates: Vec<f64> = same_sorted.iter().chain(&diff_sorted).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let sentinel = candidates.last().expect("non-empty") + 1.0;
    candidates.push(sentinel);

    let far = |t: f64| {
        (n_diff - diff_sorted.partition_point(|&s| s < t)) as f64 / n_diff as f64
    };
    let frr = |t: f64| same_sorted.partition_point(|&s| s < t) as f64 / n_same as f64;

    let mut prev: Option<(f64, f64, f64)> = None;
    for &t in &candidates {
        let (fa, fr) = (far(t), frr(t));
        let d = fa - fr;
        let mid = 0.5 * (fa + fr);
        if d == 0.0 {
            return Ok(EerResult {
                eer: mid,
                threshold: t,
                n_same,
                n_diff,
            });
        }
        if d < 0.0 {
            let (pt, pd, pmid) = prev.expect("FAR−FRR is 1 at the lowest score");
            let alpha = pd / (pd - d);
            return Ok(EerResult {
                eer: pmid + alpha * (mid - pmid),
                threshold: pt + alpha * (t - pt),
                n_same,
                n_diff,
            });
        }
        prev = Some((t, d, mid));
    }
    unreachable!("sentinel threshold forces FAR−FRR < 0")
}

/// Score a trial list against a dataset and compute its EER.
pub fn eer_from_trials(
    dataset: &EvaluationDataset,
    trials: &[Trial],
) -> Result<EerResult, SimError> {
    let (same, diff) = score_split(dataset, trials)?;
    eer_from_scores(&same, &diff)
}

/// Exact mean cosine over all unordered same-speaker pairs, per speaker.
pub fn intra_speaker_means(
    dataset: &EvaluationDataset,
) -> Result<BTreeMap<String, f64>, SimError> {
    let speakers: Vec<String> = dataset.speakers().map(str::to_string).collect();
    let entries: Vec<(String, f64)> = speakers
        .par_iter()
        .map(|s| {
            let utts = dataset.speaker_utterances(s);
            let mut sum = 0.0f64;
            let mut count = 0usize;
            for i in 0..utts.len() {
                for j in (i + 1)..utts.len() {
                    let a = dataset.embedding(&utts[i]).expect("dataset invariant");
                    let b = dataset.embedding(&utts[j]).expect("dataset invariant");
                    sum += cosine(a, b)?;
                    count += 1;
                }
            }
            Ok((s.clone(), sum / count as f64))
        })
        .collect::<Result<_, SimError>>()?;
    Ok(entries.into_iter().collect())
}

/// Speaker-by-speaker similarity matrix.
///
/// Off-diagonal means come from the different-speaker trials in `trials`
/// (both directions pooled); the diagonal is the exact intra-speaker mean.
pub fn inter_speaker_matrix(
    dataset: &EvaluationDataset,
    trials: &[Trial],
) -> Result<SimilarityMatrix, SimError> {
    let speakers: Vec<String> = dataset.speakers().map(str::to_string).collect();
    let index: HashMap<&str, usize> = speakers
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let n = speakers.len();

    let scored: Vec<Option<(usize, usize, f64)>> = trials
        .par_iter()
        .map(|t| {
            if t.same_speaker {
                return Ok(None);
            }
            let ra = dataset
                .record(&t.key_a)
                .ok_or_else(|| SimError::UnknownKey(t.key_a.clone()))?;
            let rb = dataset
                .record(&t.key_b)
                .ok_or_else(|| SimError::UnknownKey(t.key_b.clone()))?;
            let a = dataset.embedding(&t.key_a).expect("record implies embedding");
            let b = dataset.embedding(&t.key_b).expect("record implies embedding");
            let score = cosine(a, b)?;
            let i = index[ra.speaker_id.as_str()];
            let j = index[rb.speaker_id.as_str()];
            Ok(Some((i.min(j), i.max(j), score)))
        })
        .collect::<Result<_, SimError>>()?;

    let mut sums = vec![0.0f64; n * n];
    let mut counts = vec![0usize; n * n];
    for entry in scored.into_iter().flatten() {
        let (i, j, score) = entry;
        sums[i * n + j] += score;
        counts[i * n + j] += 1;
    }

    let mut matrix = SimilarityMatrix::new(speakers);
    for i in 0..n {
        for j in (i + 1)..n {
            if counts[i * n + j] > 0 {
                matrix.set(i, j, sums[i * n + j] / counts[i * n + j] as f64);
            }
        }
    }
    let intra = intra_speaker_means(dataset)?;
    for (i, s) in matrix.speakers.clone().iter().enumerate() {
        matrix.set(i, i, intra[s]);
    }
    Ok(matrix)
}

/// A pair of distinct speakers and their mean similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosestPair {
    pub speaker_a: String,
    pub speaker_b: String,
    pub similarity: f64,
}

/// Off-diagonal pairs sorted by similarity, highest first.
pub fn closest_pairs(matrix: &SimilarityMatrix, k: usize) -> Vec<ClosestPair> {
    let mut pairs = Vec::new();
    for i in 0..matrix.n() {
        for j in (i + 1)..matrix.n() {
            if let Some(v) = matrix.get(i, j) {
                pairs.push(ClosestPair {
                    speaker_a: matrix.speakers[i].clone(),
                    speaker_b: matrix.speakers[j].clone(),
                    similarity: v,
                });
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.speaker_a.cmp(&b.speaker_a))
            .then_with(|| a.speaker_b.cmp(&b.speaker_b))
    });
    pairs.truncate(k);
    pairs
}

/// Table-row grouping axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    All,
    Gender,
    Subset,
}

/// One group along a grouping axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroupKey {
    All,
    Gender(Gender),
    Subset(String),
}

impl GroupKey {
    pub fn label(&self) -> String {
        match self {
            GroupKey::All => "All".to_string(),
            GroupKey::Gender(Gender::F) => "Female".to_string(),
            GroupKey::Gender(Gender::M) => "Male".to_string(),
            GroupKey::Subset(s) => s.clone(),
        }
    }
}

fn record_in_group(record: &UtteranceRecord, key: &GroupKey) -> bool {
    match key {
        GroupKey::All => true,
        GroupKey::Gender(g) => record.gender == *g,
        GroupKey::Subset(s) => record.subset == *s,
    }
}

/// Groups present in the dataset along one axis, in report order.
pub fn groups(dataset: &EvaluationDataset, grouping: Grouping) -> Vec<GroupKey> {
    match grouping {
        Grouping::All => vec![GroupKey::All],
        Grouping::Gender => {
            let mut keys = Vec::new();
            for g in [Gender::F, Gender::M] {
                if dataset.records().iter().any(|r| r.gender == g) {
                    keys.push(GroupKey::Gender(g));
                }
            }
            keys
        }
        Grouping::Subset => {
            let subsets: BTreeSet<&str> = dataset
                .records()
                .iter()
                .map(|r| r.subset.as_str())
                .collect();
            subsets
                .into_iter()
                .map(|s| GroupKey::Subset(s.to_string()))
                .collect()
        }
    }
}

/// EER restricted to trials whose both sides fall in each group.
pub fn eer_by_group(
    dataset: &EvaluationDataset,
    trials: &[Trial],
    grouping: Grouping,
) -> Result<Vec<(GroupKey, EerResult)>, SimError> {
    let mut rows = Vec::new();
    for key in groups(dataset, grouping) {
        let sub: Vec<Trial> = trials
            .iter()
            .filter(|t| {
                let ra = dataset.record(&t.key_a);
                let rb = dataset.record(&t.key_b);
                matches!((ra, rb), (Some(a), Some(b))
                    if record_in_group(a, &key) && record_in_group(b, &key))
            })
            .cloned()
            .collect();
        let result = match eer_from_trials(dataset, &sub) {
            Ok(r) => r,
            Err(SimError::DegenerateTrials) => {
                return Err(SimError::EmptyGroup(key.label()));
            }
            Err(e) => return Err(e),
        };
        rows.push((key, result));
    }
    Ok(rows)
}

/// Speaker-level group attribute, read from the speaker's first record.
fn speaker_in_group(dataset: &EvaluationDataset, speaker: &str, key: &GroupKey) -> bool {
    dataset
        .speaker_utterances(speaker)
        .first()
        .and_then(|k| dataset.record(k))
        .map(|r| record_in_group(r, key))
        .unwrap_or(false)
}

/// Average per-speaker values over the speakers in each group.
pub fn mean_by_group(
    dataset: &EvaluationDataset,
    per_speaker: &BTreeMap<String, f64>,
    grouping: Grouping,
) -> Result<Vec<(GroupKey, f64)>, SimError> {
    let mut rows = Vec::new();
    for key in groups(dataset, grouping) {
        let values: Vec<f64> = per_speaker
            .iter()
            .filter(|(s, _)| speaker_in_group(dataset, s, &key))
            .map(|(_, v)| *v)
            .collect();
        if values.is_empty() {
            return Err(SimError::EmptyGroup(key.label()));
        }
        rows.push((key, values.iter().sum::<f64>() / values.len() as f64));
    }
    Ok(rows)
}

/// Average off-diagonal matrix cells with both speakers in each group.
pub fn mean_inter_by_group(
    dataset: &EvaluationDataset,
    matrix: &SimilarityMatrix,
    grouping: Grouping,
) -> Result<Vec<(GroupKey, f64)>, SimError> {
    let mut rows = Vec::new();
    for key in groups(dataset, grouping) {
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for i in 0..matrix.n() {
            if !speaker_in_group(dataset, &matrix.speakers[i], &key) {
                continue;
            }
            for j in (i + 1)..matrix.n() {
                if !speaker_in_group(dataset, &matrix.speakers[j], &key) {
                    continue;
                }
                if let Some(v) = matrix.get(i, j) {
                    sum += v;
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(SimError::EmptyGroup(key.label()));
        }
        rows.push((key, sum / count as f64));
    }
    Ok(rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct TrialMeta {
    seed: u64,
    per_speaker: usize,
    same_per_speaker: usize,
    n_trials: usize,
    n_same: usize,
}

/// Write a trial list as CSV plus a JSON sidecar with seed and quotas.
pub fn write_trials(
    list: &TrialList,
    csv_path: impl AsRef<Path>,
    json_path: impl AsRef<Path>,
) -> Result<(), SimError> {
    let mut writer = csv::Writer::from_path(csv_path.as_ref())?;
    writer.write_record(["key_a", "key_b", "same_speaker"])?;
    for t in &list.trials {
        writer.write_record([
            t.key_a.as_str(),
            t.key_b.as_str(),
            if t.same_speaker { "true" } else { "false" },
        ])?;
    }
    writer.flush()?;

    let meta = TrialMeta {
        seed: list.seed,
        per_speaker: list.per_speaker,
        same_per_speaker: list.same_per_speaker,
        n_trials: list.trials.len(),
        n_same: list.n_same(),
    };
    let mut json = serde_json::to_string_pretty(&meta)?;
    json.push('\n');
    std::fs::write(json_path.as_ref(), json)?;
    Ok(())
}

/// Read a trial list back, validating pair invariants.
pub fn read_trials(
    csv_path: impl AsRef<Path>,
    json_path: impl AsRef<Path>,
) -> Result<TrialList, SimError> {
    let meta: TrialMeta = serde_json::from_str(&std::fs::read_to_string(json_path.as_ref())?)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(csv_path.as_ref())?;
    let mut trials = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.deserialize() {
        let t: Trial = row?;
        if t.key_a == t.key_b {
            return Err(SimError::SelfPair(t.key_a));
        }
        if !seen.insert(canonical_pair(&t.key_a, &t.key_b)) {
            return Err(SimError::DuplicatePair(t.key_a, t.key_b));
        }
        trials.push(t);
    }
    Ok(TrialList {
        trials,
        seed: meta.seed,
        per_speaker: meta.per_speaker,
        same_per_speaker: meta.same_per_speaker,
    })
}
