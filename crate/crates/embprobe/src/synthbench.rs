//! Synthetic corpora with planted speaker structure and known leakage.
//!
//! The first six embedding coordinates are reserved nuisance directions
//! (duration, condition, content, f0, snr, gender); everything that makes a
//! speaker a speaker (centroid, within-speaker noise, session offsets)
//! lives in the remaining tail coordinates. A nuisance coordinate holds
//! exactly leakage · z for its standardized factor value and receives no
//! other noise, so the planted leakage is analytically recoverable.
//!
//! Every random draw comes from its own labeled stream keyed by speaker,
//! session, prompt, or utterance. Two specs that differ only in leakage
//! coefficients therefore produce identical metadata, centroids, and noise;
//! only the reserved coordinates change.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EmbeddingSet, Gender, UtteranceRecord};
use crate::seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    SpecInvalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Configurable nuisance factors, one reserved coordinate each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Duration,
    Condition,
    Content,
    F0,
    Snr,
}

impl Factor {
    pub const ALL: [Factor; 5] = [
        Factor::Duration,
        Factor::Condition,
        Factor::Content,
        Factor::F0,
        Factor::Snr,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Factor::Duration => "duration",
            Factor::Condition => "condition",
            Factor::Content => "content",
            Factor::F0 => "f0",
            Factor::Snr => "snr",
        }
    }

    pub fn coordinate(&self) -> usize {
        match self {
            Factor::Duration => 0,
            Factor::Condition => 1,
            Factor::Content => 2,
            Factor::F0 => 3,
            Factor::Snr => 4,
        }
    }
}

impl std::str::FromStr for Factor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "duration" => Ok(Factor::Duration),
            "condition" => Ok(Factor::Condition),
            "content" => Ok(Factor::Content),
            "f0" => Ok(Factor::F0),
            "snr" => Ok(Factor::Snr),
            other => Err(format!("unknown factor {other:?}")),
        }
    }
}

/// Gender has its own direction at fixed leakage 1.0: it is legitimate
/// speaker information, not a configurable nuisance.
pub const GENDER_COORDINATE: usize = 5;
pub const RESERVED_COORDS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub dim: usize,
    /// Within-speaker noise scale σ_s (per tail coordinate).
    pub speaker_spread: f64,
    pub leakage: BTreeMap<Factor, f64>,
    pub session_clusters: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_speakers: 10,
            utts_per_speaker: 50,
            dim: 64,
            speaker_spread: 0.05,
            leakage: Factor::ALL.iter().map(|&f| (f, 0.25)).collect(),
            session_clusters: 2,
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: &str| Err(SynthError::SpecInvalid(msg.to_string()));
        if self.n_speakers < 2 {
            return fail("need at least 2 speakers");
        }
        if self.utts_per_speaker < 2 {
            return fail("need at least 2 utterances per speaker");
        }
        if self.dim <= RESERVED_COORDS + 1 {
            return fail("dim must exceed the reserved directions plus one");
        }
        if !self.speaker_spread.is_finite() || self.speaker_spread <= 0.0 {
            return fail("speaker_spread must be > 0");
        }
        if self.session_clusters == 0 || self.session_clusters > self.utts_per_speaker {
            return fail("session_clusters must be in 1..=utts_per_speaker");
        }
        for (factor, coeff) in &self.leakage {
            if !(0.0..=1.0).contains(coeff) {
                return fail(&format!("leakage[{}] outside [0,1]", factor.name()));
            }
        }
        Ok(())
    }

    fn leak(&self, factor: Factor) -> f64 {
        self.leakage.get(&factor).copied().unwrap_or(0.0)
    }
}

/// Standardized factor values of one utterance, as planted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorZ {
    pub duration: f64,
    pub condition: f64,
    pub content: f64,
    pub f0: f64,
    pub snr: f64,
    pub gender: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    /// Factor name → reserved coordinate index.
    pub directions: BTreeMap<String, usize>,
    /// Utterance key → standardized factor values.
    pub factors: BTreeMap<String, FactorZ>,
}

fn standardize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return vec![0.0; values.len()];
    }
    let std = var.sqrt();
    values.iter().map(|v| (v - mean) / std).collect()
}

fn tail_normal(rng: &mut rand_chacha::ChaCha8Rng, len: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("valid stddev");
    (0..len).map(|_| normal.sample(rng)).collect()
}

/// Generate a synthetic corpus: manifest records, embeddings, ground truth.
pub fn generate(
    spec: &SynthSpec,
) -> Result<(Vec<UtteranceRecord>, EmbeddingSet, GroundTruth), SynthError> {
    spec.validate()?;
    let tail_dim = spec.dim - RESERVED_COORDS;
    let keyed = |label: &str, key: &str| seed::rng(seed::derive_seed_keyed(spec.seed, label, key));

    // Prompt-level values, shared by every speaker reading the prompt.
    let prompts: Vec<String> = (0..spec.utts_per_speaker)
        .map(|u| format!("u{u:04}"))
        .collect();
    let char_counts: Vec<u32> = prompts
        .iter()
        .map(|p| keyed("char_count", p).random_range(20..=200))
        .collect();

    struct Speaker {
        id: String,
        gender: Gender,
        subset: &'static str,
        centroid: Vec<f64>,
    }
    let speakers: Vec<Speaker> = (0..spec.n_speakers)
        .map(|s| {
            let id = format!("spk{s:03}");
            let mut rng = keyed("centroid", &id);
            let mut centroid = tail_normal(&mut rng, tail_dim);
            let norm = centroid.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in &mut centroid {
                *v /= norm;
            }
            Speaker {
                gender: if s % 2 == 0 { Gender::F } else { Gender::M },
                subset: if (s / 2) % 2 == 0 { "setA" } else { "setB" },
                id,
                centroid,
            }
        })
        .collect();

    // Raw factor values in one fixed utterance order (speaker-major).
    let mut raw_duration = Vec::new();
    let mut raw_condition = Vec::new();
    let mut raw_content = Vec::new();
    let mut raw_f0 = Vec::new();
    let mut raw_snr = Vec::new();
    let mut raw_gender = Vec::new();
    let mut keys = Vec::new();
    for speaker in &speakers {
        for (u, prompt) in prompts.iter().enumerate() {
            let key = format!("{}_{prompt}", speaker.id);
            raw_duration.push(keyed("duration", &key).random_range(1.0..15.0));
            raw_condition.push(if speaker.subset == "setA" { 0.0 } else { 1.0 });
            raw_content.push(u as f64);
            let (mean, std) = match speaker.gender {
                Gender::F => (210.0, 25.0),
                Gender::M => (120.0, 20.0),
            };
            let f0: f64 = Normal::new(mean, std)
                .expect("valid stddev")
                .sample(&mut keyed("f0", &key));
            raw_f0.push(f0.max(40.0));
            raw_snr.push(keyed("snr", &key).random_range(10.0..60.0));
            raw_gender.push(match speaker.gender {
                Gender::F => 0.0,
                Gender::M => 1.0,
            });
            keys.push(key);
        }
    }
    let z_duration = standardize(&raw_duration);
    let z_condition = standardize(&raw_condition);
    let z_content = standardize(&raw_content);
    let z_f0 = standardize(&raw_f0);
    let z_snr = standardize(&raw_snr);
    let z_gender = standardize(&raw_gender);

    let mut records = Vec::with_capacity(keys.len());
    let mut set = EmbeddingSet::new("synth", spec.dim);
    let mut factors = BTreeMap::new();
    let mut at = 0usize;
    for speaker in &speakers {
        for (u, prompt) in prompts.iter().enumerate() {
            let key = &keys[at];
            let session = u * spec.session_clusters / spec.utts_per_speaker;
            let session_id = format!("{}_s{session}", speaker.id);

            let z = FactorZ {
                duration: z_duration[at],
                condition: z_condition[at],
                content: z_content[at],
                f0: z_f0[at],
                snr: z_snr[at],
                gender: z_gender[at],
            };
            let mut emb = vec![0.0f64; spec.dim];
            emb[Factor::Duration.coordinate()] = spec.leak(Factor::Duration) * z.duration;
            emb[Factor::Condition.coordinate()] = spec.leak(Factor::Condition) * z.condition;
            emb[Factor::Content.coordinate()] = spec.leak(Factor::Content) * z.content;
            emb[Factor::F0.coordinate()] = spec.leak(Factor::F0) * z.f0;
            emb[Factor::Snr.coordinate()] = spec.leak(Factor::Snr) * z.snr;
            emb[GENDER_COORDINATE] = z.gender;

            let noise = tail_normal(&mut keyed("noise", key), tail_dim);
            let offset = tail_normal(&mut keyed("session", &session_id), tail_dim);
            for t in 0..tail_dim {
                emb[RESERVED_COORDS + t] = speaker.centroid[t]
                    + spec.speaker_spread * noise[t]
                    + spec.speaker_spread * offset[t];
            }
            set.insert(key.clone(), emb.iter().map(|&v| v as f32).collect())
                .expect("keys are unique by construction");

            records.push(UtteranceRecord {
                utterance_key: key.clone(),
                speaker_id: speaker.id.clone(),
                gender: speaker.gender,
                subset: speaker.subset.to_string(),
                session_id: Some(session_id),
                utterance_id: prompt.clone(),
                duration_s: raw_duration[at],
                char_count: char_counts[u],
                snr_db: Some(raw_snr[at]),
                f0_hz: Some(raw_f0[at]),
            });
            factors.insert(key.clone(), z);
            at += 1;
        }
    }

    let mut directions: BTreeMap<String, usize> = Factor::ALL
        .iter()
        .map(|f| (f.name().to_string(), f.coordinate()))
        .collect();
    directions.insert("gender".to_string(), GENDER_COORDINATE);
    let truth = GroundTruth {
        spec: spec.clone(),
        directions,
        factors,
    };
    Ok((records, set, truth))
}

pub fn write_truth(truth: &GroundTruth, path: impl AsRef<Path>) -> Result<(), SynthError> {
    let mut json = serde_json::to_string_pretty(truth)?;
    json.push('\n');
    std::fs::write(path.as_ref(), json)?;
    Ok(())
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<GroundTruth, SynthError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(
        path.as_ref(),
    )?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_dataset;
    use crate::simmetrics::intra_speaker_means;

    fn small_spec(seed: u64) -> SynthSpec {
        SynthSpec {
            n_speakers: 6,
            utts_per_speaker: 10,
            dim: 16,
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic_and_buildable() {
        let spec = small_spec(42);
        let (records_a, set_a, truth_a) = generate(&spec).unwrap();
        let (records_b, set_b, truth_b) = generate(&spec).unwrap();
        assert_eq!(records_a, records_b);
        assert_eq!(set_a, set_b);
        assert_eq!(truth_a, truth_b);
        build_dataset(records_a, set_a).unwrap();
    }

    #[test]
    fn planted_projection_is_exact() {
        let mut spec = small_spec(7);
        spec.leakage.insert(Factor::Duration, 0.75);
        spec.leakage.insert(Factor::Snr, 0.0);
        let (_, set, truth) = generate(&spec).unwrap();
        for (key, z) in &truth.factors {
            let emb = set.get(key).unwrap();
            assert_eq!(emb[0], (0.75 * z.duration) as f32);
            assert_eq!(emb[4], 0.0);
            assert_eq!(emb[GENDER_COORDINATE], z.gender as f32);
        }
    }

    #[test]
    fn leakage_does_not_perturb_other_streams() {
        let mut low = small_spec(3);
        low.leakage = Factor::ALL.iter().map(|&f| (f, 0.0)).collect();
        let mut high = small_spec(3);
        high.leakage = Factor::ALL.iter().map(|&f| (f, 1.0)).collect();
        let (records_low, set_low, truth_low) = generate(&low).unwrap();
        let (records_high, set_high, truth_high) = generate(&high).unwrap();
        assert_eq!(records_low, records_high);
        assert_eq!(truth_low.factors, truth_high.factors);
        for (key, emb_low) in &set_low.entries {
            let emb_high = set_high.get(key).unwrap();
            assert_eq!(&emb_low[RESERVED_COORDS..], &emb_high[RESERVED_COORDS..]);
        }
    }

    #[test]
    fn genders_and_subsets_are_decoupled() {
        let spec = SynthSpec {
            n_speakers: 8,
            ..small_spec(1)
        };
        let (records, _, _) = generate(&spec).unwrap();
        let mut combos = std::collections::BTreeSet::new();
        for r in &records {
            combos.insert((r.gender.as_str(), r.subset.clone()));
        }
        assert_eq!(combos.len(), 4);
    }

    #[test]
    fn sessions_form_contiguous_blocks() {
        let spec = small_spec(5);
        let (records, _, _) = generate(&spec).unwrap();
        let ids: Vec<&str> = records
            .iter()
            .filter(|r| r.speaker_id == "spk000")
            .map(|r| r.session_id.as_deref().unwrap())
            .collect();
        assert_eq!(ids.len(), 10);
        assert!(ids[..5].iter().all(|&s| s == "spk000_s0"));
        assert!(ids[5..].iter().all(|&s| s == "spk000_s1"));
    }

    #[test]
    fn spread_decreases_intra_similarity() {
        for seed in [1, 2, 3] {
            let mut means = Vec::new();
            for spread in [0.01, 0.1, 0.5] {
                let spec = SynthSpec {
                    speaker_spread: spread,
                    ..small_spec(seed)
                };
                let (records, set, _) = generate(&spec).unwrap();
                let ds = build_dataset(records, set).unwrap();
                let intra = intra_speaker_means(&ds).unwrap();
                means.push(intra.values().sum::<f64>() / intra.len() as f64);
            }
            assert!(
                means[0] > means[1] && means[1] > means[2],
                "seed {seed}: {means:?}"
            );
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = small_spec(1);
        spec.dim = 7;
        assert!(matches!(generate(&spec), Err(SynthError::SpecInvalid(_))));

        let mut spec = small_spec(1);
        spec.utts_per_speaker = 1;
        assert!(matches!(generate(&spec), Err(SynthError::SpecInvalid(_))));

        let mut spec = small_spec(1);
        spec.leakage.insert(Factor::Content, 1.5);
        assert!(matches!(generate(&spec), Err(SynthError::SpecInvalid(_))));
    }

    #[test]
    fn truth_round_trips_through_json() {
        let (_, _, truth) = generate(&small_spec(9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.json");
        write_truth(&truth, &path).unwrap();
        assert_eq!(read_truth(&path).unwrap(), truth);
    }
}
