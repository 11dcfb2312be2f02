//! Residual-information probes.
//!
//! A probe trains a small supervised model to predict one metadata factor
//! from the embeddings alone. High test scores on non-speaker factors mean
//! the factor leaks into the representation. Classification tasks use a
//! decision tree scored by macro-F1; regression tasks use gradient-boosted
//! trees scored by SRCC. One train/test split is shared by every task.

pub mod gbdt;
pub mod metrics;
pub mod tree;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::EvaluationDataset;
use crate::seed;
pub use gbdt::{Gbdt, GbdtParams};
pub use metrics::{f1_macro, srcc};
pub use tree::{DecisionTree, TreeParams};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("regression target is constant on the training set")]
    ConstantTarget,
    #[error("all ranks tied; correlation is undefined")]
    ZeroVariance,
    #[error("split leaves an empty side: {train} train / {test} test")]
    InvalidSplit { train: usize, test: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Classification => "classification",
            TaskKind::Regression => "regression",
        }
    }

    pub fn metric(&self) -> &'static str {
        match self {
            TaskKind::Classification => "macro_f1",
            TaskKind::Regression => "srcc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::HigherBetter => "higher_better",
            Direction::LowerBetter => "lower_better",
        }
    }

    pub fn arrow(&self) -> &'static str {
        match self {
            Direction::HigherBetter => "↑",
            Direction::LowerBetter => "↓",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeTask {
    pub name: String,
    pub kind: TaskKind,
    pub direction: Direction,
}

impl ProbeTask {
    fn new(name: &str, kind: TaskKind, direction: Direction) -> Self {
        ProbeTask {
            name: name.to_string(),
            kind,
            direction,
        }
    }
}

/// The eight canonical probe tasks, in battery order.
///
/// Direction marks where a disentangled speaker representation should land:
/// high for speaker-bound factors, low for everything that ought to have
/// been discarded.
pub fn canonical_tasks() -> Vec<ProbeTask> {
    use Direction::*;
    use TaskKind::*;
    vec![
        ProbeTask::new("speaker_id", Classification, HigherBetter),
        ProbeTask::new("gender", Classification, HigherBetter),
        ProbeTask::new("char_count", Classification, LowerBetter),
        ProbeTask::new("recording_condition", Classification, LowerBetter),
        ProbeTask::new("duration_s", Regression, LowerBetter),
        ProbeTask::new("snr_db", Regression, LowerBetter),
        ProbeTask::new("utterance_id", Regression, LowerBetter),
        ProbeTask::new("f0_hz", Regression, HigherBetter),
    ]
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Disjoint, exhaustive train/test indices; |train| = round(N × fraction).
pub fn split_dataset(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>), ProbeError> {
    use rand::Rng;
    if n < 2 {
        return Err(ProbeError::TooFewSamples(n));
    }
    let k = (n as f64 * spec.train_fraction).round() as usize;
    if k == 0 || k >= n {
        return Err(ProbeError::InvalidSplit {
            train: k,
            test: n - k.min(n),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(spec.seed);
    for i in 0..n - 1 {
        let j = rng.random_range(i..n);
        order.swap(i, j);
    }
    let mut train = order[..k].to_vec();
    let mut test = order[k..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, Default)]
pub struct BatteryConfig {
    pub split: SplitSpec,
    pub tree: TreeParams,
    pub gbdt: GbdtParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub task: ProbeTask,
    pub score: f64,
    /// Test MSE, reported for the F0 task (in Hz, as squared error).
    pub auxiliary: Option<f64>,
}

fn encode_labels<T: Ord>(values: &[T]) -> Vec<usize> {
    let ids: BTreeMap<&T, usize> = {
        let mut distinct: Vec<&T> = values.iter().collect();
        distinct.sort();
        distinct.dedup();
        distinct.into_iter().enumerate().map(|(i, v)| (v, i)).collect()
    };
    values.iter().map(|v| ids[v]).collect()
}

fn gather<T: Clone>(items: &[T], indices: &[usize]) -> Vec<T> {
    indices.iter().map(|&i| items[i].clone()).collect()
}

fn run_classification(
    x: &[Vec<f32>],
    labels: &[usize],
    train: &[usize],
    test: &[usize],
    params: &TreeParams,
) -> Result<f64, ProbeError> {
    let tree = DecisionTree::fit(&gather(x, train), &gather(labels, train), params)?;
    let preds: Vec<usize> = test.iter().map(|&i| tree.predict(&x[i])).collect();
    f1_macro(&gather(labels, test), &preds)
}

fn run_regression(
    x: &[Vec<f32>],
    targets: &[f64],
    train: &[usize],
    test: &[usize],
    params: &GbdtParams,
    task_name: &str,
) -> Result<(f64, f64), ProbeError> {
    let model = Gbdt::fit(&gather(x, train), &gather(targets, train), params)?;
    let preds: Vec<f64> = test.iter().map(|&i| model.predict(&x[i])).collect();
    let truth = gather(targets, test);
    let mse = truth
        .iter()
        .zip(&preds)
        .map(|(t, p)| (t - p) * (t - p))
        .sum::<f64>()
        / truth.len() as f64;
    match srcc(&truth, &preds) {
        Ok(r) => Ok((r, mse)),
        Err(ProbeError::ZeroVariance) => {
            // Constant predictions (or a constant test target) carry no
            // rank information; score that as zero correlation.
            log::warn!("probe {task_name}: tied ranks, scoring SRCC as 0.0");
            Ok((0.0, mse))
        }
        Err(e) => Err(e),
    }
}

/// Run the eight canonical probes on one dataset.
///
/// Tasks whose optional manifest field (snr_db, f0_hz) is missing from any
/// record are skipped with a warning.
pub fn run_battery(
    dataset: &EvaluationDataset,
    config: &BatteryConfig,
) -> Result<Vec<ProbeResult>, ProbeError> {
    let records = dataset.records();
    let x: Vec<Vec<f32>> = records
        .iter()
        .map(|r| {
            dataset
                .embedding(&r.utterance_key)
                .expect("dataset invariant")
                .to_vec()
        })
        .collect();
    let (train, test) = split_dataset(records.len(), &config.split)?;

    let mut results = Vec::new();
    for task in canonical_tasks() {
        let result = match task.name.as_str() {
            "speaker_id" => {
                let labels =
                    encode_labels(&records.iter().map(|r| r.speaker_id.as_str()).collect::<Vec<_>>());
                let score = run_classification(&x, &labels, &train, &test, &config.tree)?;
                ProbeResult {
                    task,
                    score,
                    auxiliary: None,
                }
            }
            "gender" => {
                let labels =
                    encode_labels(&records.iter().map(|r| r.gender.as_str()).collect::<Vec<_>>());
                let score = run_classification(&x, &labels, &train, &test, &config.tree)?;
                ProbeResult {
                    task,
                    score,
                    auxiliary: None,
                }
            }
            "char_count" => {
                let labels =
                    encode_labels(&records.iter().map(|r| r.char_count).collect::<Vec<_>>());
                let score = run_classification(&x, &labels, &train, &test, &config.tree)?;
                ProbeResult {
                    task,
                    score,
                    auxiliary: None,
                }
            }
            "recording_condition" => {
                let labels =
                    encode_labels(&records.iter().map(|r| r.subset.as_str()).collect::<Vec<_>>());
                let score = run_classification(&x, &labels, &train, &test, &config.tree)?;
                ProbeResult {
                    task,
                    score,
                    auxiliary: None,
                }
            }
            "duration_s" => {
                let targets: Vec<f64> = records.iter().map(|r| r.duration_s).collect();
                let (score, _) =
                    run_regression(&x, &targets, &train, &test, &config.gbdt, "duration_s")?;
                ProbeResult {
                    task,
                    score,
                    auxiliary: None,
                }
            }
            "snr_db" => {
                let targets: Option<Vec<f64>> = records.iter().map(|r| r.snr_db).collect();
                let Some(targets) = targets else {
                    log::warn!("probe snr_db: field missing from manifest, skipping");
                    continue;
                };
                let (score, _) =
                    run_regression(&x, &targets, &train, &test, &config.gbdt, "snr_db")?;
                ProbeResult {
                    task,
                    score,
                    auxiliary: None,
                }
            }
            "utterance_id" => {
                let ranks =
                    encode_labels(&records.iter().map(|r| r.utterance_id.as_str()).collect::<Vec<_>>());
                let targets: Vec<f64> = ranks.iter().map(|&r| r as f64).collect();
                let (score, _) =
                    run_regression(&x, &targets, &train, &test, &config.gbdt, "utterance_id")?;
                ProbeResult {
                    task,
                    score,
                    auxiliary: None,
                }
            }
            "f0_hz" => {
                let targets: Option<Vec<f64>> = records.iter().map(|r| r.f0_hz).collect();
                let Some(targets) = targets else {
                    log::warn!("probe f0_hz: field missing from manifest, skipping");
                    continue;
                };
                let (score, mse) =
                    run_regression(&x, &targets, &train, &test, &config.gbdt, "f0_hz")?;
                ProbeResult {
                    task,
                    score,
                    auxiliary: Some(mse),
                }
            }
            other => unreachable!("unknown canonical task {other}"),
        };
        results.push(result);
    }
    Ok(results)
}

/// Write probe results as `task,kind,metric,score,direction` rows.
pub fn write_results_csv(
    results: &[ProbeResult],
    path: impl AsRef<Path>,
) -> Result<(), std::io::Error> {
    let mut out = String::from("task,kind,metric,score,direction\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.task.name,
            r.task.kind.as_str(),
            r.task.kind.metric(),
            r.score,
            r.task.direction.as_str()
        ));
    }
    std::fs::write(path.as_ref(), out)
}
