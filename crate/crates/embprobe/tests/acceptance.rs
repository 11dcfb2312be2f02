//! Acceptance checks, one test per shipped guarantee.
//!
//! Every numeric claim is verified against an oracle implemented here with
//! plain loops, never by calling back into the code under test. Tests take a
//! shared lock so the wall-clock budgets are measured one at a time, and each
//! ends with a single PASS line.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use embprobe::corpus::build_dataset;
use embprobe::probes::{
    f1_macro, run_battery, split_dataset, srcc, BatteryConfig, DecisionTree, Direction, Gbdt,
    GbdtParams, ProbeError, ProbeResult, ProbeTask, SplitSpec, TaskKind, TreeParams,
};
use embprobe::projection::{calibrate_affinities, tsne_embed, TsneConfig};
use embprobe::report::{ArchResults, Report};
use embprobe::simmetrics::{cosine, eer_from_scores, eer_from_trials, sample_trials};
use embprobe::synthbench::{generate, Factor, SynthSpec};

static GATE: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn within(budget: Duration, t0: Instant, what: &str) {
    let elapsed = t0.elapsed();
    assert!(
        elapsed <= budget,
        "{what} took {elapsed:?}, budget {budget:?}"
    );
}

/// Threshold sweep done the slow way: FAR and FRR counted with plain loops
/// at every distinct score, every midpoint between neighbours, and sentinels
/// below the minimum and above the maximum. A trial is accepted when its
/// score is at or above the threshold.
fn eer_oracle(same: &[f64], diff: &[f64]) -> f64 {
    let mut distinct: Vec<f64> = same.iter().chain(diff).copied().collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();

    let mut positions = Vec::with_capacity(2 * distinct.len() + 1);
    positions.push(distinct[0] - 1.0);
    for (i, &s) in distinct.iter().enumerate() {
        positions.push(s);
        if let Some(&next) = distinct.get(i + 1) {
            positions.push(0.5 * (s + next));
        }
    }
    positions.push(distinct.last().unwrap() + 1.0);

    let mut prev: Option<(f64, f64)> = None;
    for &t in &positions {
        let fa = diff.iter().filter(|&&s| s >= t).count() as f64 / diff.len() as f64;
        let fr = same.iter().filter(|&&s| s < t).count() as f64 / same.len() as f64;
        let d = fa - fr;
        let mid = 0.5 * (fa + fr);
        if d == 0.0 {
            return mid;
        }
        if d < 0.0 {
            let (pd, pmid) = prev.expect("below the minimum FAR is 1 and FRR is 0");
            let alpha = pd / (pd - d);
            return pmid + alpha * (mid - pmid);
        }
        prev = Some((d, mid));
    }
    unreachable!("above the maximum FAR - FRR is -1")
}

fn score_list(rng: &mut ChaCha8Rng, n: usize, mean: f64, sd: f64, step: Option<f64>) -> Vec<f64> {
    let normal = Normal::new(mean, sd).unwrap();
    (0..n)
        .map(|_| {
            let v: f64 = normal.sample(rng);
            match step {
                Some(q) => (v / q).round() * q,
                None => v,
            }
        })
        .collect()
}

#[test]
fn eer_matches_brute_force_sweep() {
    let _lock = serial();
    let t0 = Instant::now();
    let mut rng = embprobe::seed::rng(0x0acce5);
    let mut worst = 0.0f64;
    for case in 0..200u64 {
        let n_same = rng.random_range(1..=500);
        let n_diff = rng.random_range(1..=500);
        // every third list is quantized so ties span both sides
        let step = if case % 3 == 0 { Some(0.05) } else { None };
        let same = score_list(&mut rng, n_same, 0.6, 0.25, step);
        let diff = score_list(&mut rng, n_diff, 0.1, 0.3, step);
        let got = eer_from_scores(&same, &diff).unwrap().eer;
        let want = eer_oracle(&same, &diff);
        worst = worst.max((got - want).abs());
        assert!(
            (got - want).abs() <= 1e-12,
            "case {case}: {got} vs oracle {want}"
        );
        assert!((0.0..=1.0).contains(&got));
    }

    // fully tied lists collapse to the midpoint operating point
    let got = eer_from_scores(&[0.3, 0.3], &[0.3, 0.3]).unwrap().eer;
    assert!((got - eer_oracle(&[0.3, 0.3], &[0.3, 0.3])).abs() <= 1e-12);

    // the trial-scoring path lands on the same sweep
    let spec = SynthSpec {
        n_speakers: 6,
        utts_per_speaker: 10,
        dim: 16,
        seed: 3,
        ..SynthSpec::default()
    };
    let (records, embeddings, _) = generate(&spec).unwrap();
    let dataset = build_dataset(records, embeddings).unwrap();
    let list = sample_trials(&dataset, 20, 5, 11).unwrap();
    let mut same = Vec::new();
    let mut diff = Vec::new();
    for t in &list.trials {
        let s = cosine(
            dataset.embedding(&t.key_a).unwrap(),
            dataset.embedding(&t.key_b).unwrap(),
        )
        .unwrap();
        if t.same_speaker {
            same.push(s);
        } else {
            diff.push(s);
        }
    }
    let via_trials = eer_from_trials(&dataset, &list.trials).unwrap().eer;
    assert!((via_trials - eer_oracle(&same, &diff)).abs() <= 1e-12);

    within(Duration::from_secs(5), t0, "EER oracle sweep");
    println!("PASS eer oracle equivalence: 200 lists, worst gap {worst:.2e}");
}

#[test]
fn trial_quotas_hold_for_46_speakers() {
    let _lock = serial();
    let t0 = Instant::now();
    let spec = SynthSpec {
        n_speakers: 46,
        utts_per_speaker: 25,
        dim: 16,
        ..SynthSpec::default()
    };
    let (records, embeddings, _) = generate(&spec).unwrap();
    let speaker_of: HashMap<String, String> = records
        .iter()
        .map(|r| (r.utterance_key.clone(), r.speaker_id.clone()))
        .collect();
    let dataset = build_dataset(records, embeddings).unwrap();
    let list = sample_trials(&dataset, 1000, 200, 29).unwrap();

    assert_eq!(list.trials.len(), 46_000);
    assert_eq!(list.n_same(), 9_200);

    let mut anchored: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    for t in &list.trials {
        let sa = speaker_of[&t.key_a].as_str();
        let sb = speaker_of[&t.key_b].as_str();
        assert_eq!(t.same_speaker, sa == sb, "{} vs {}", t.key_a, t.key_b);
        assert_ne!(t.key_a, t.key_b);
        let entry = anchored.entry(sa).or_default();
        entry.0 += 1;
        if t.same_speaker {
            entry.1 += 1;
        }
        let pair = if t.key_a <= t.key_b {
            (t.key_a.as_str(), t.key_b.as_str())
        } else {
            (t.key_b.as_str(), t.key_a.as_str())
        };
        assert!(seen.insert(pair), "pair repeated: {pair:?}");
    }
    assert_eq!(anchored.len(), 46);
    for (speaker, (total, same)) in &anchored {
        assert_eq!(*total, 1000, "{speaker} anchors {total}");
        assert_eq!(*same, 200, "{speaker} same-speaker {same}");
    }

    within(Duration::from_secs(5), t0, "trial quota check");
    println!("PASS trial quotas: 46000 trials, 9200 same, every speaker anchors exactly 1000");
}

fn eer_at_spread(spread: f64, seed: u64) -> f64 {
    let spec = SynthSpec {
        n_speakers: 10,
        utts_per_speaker: 30,
        dim: 64,
        speaker_spread: spread,
        seed,
        ..SynthSpec::default()
    };
    let (records, embeddings, _) = generate(&spec).unwrap();
    let dataset = build_dataset(records, embeddings).unwrap();
    let list = sample_trials(&dataset, 100, 20, seed ^ 0x51).unwrap();
    eer_from_trials(&dataset, &list.trials).unwrap().eer
}

#[test]
fn speaker_spread_separates_then_collapses_eer() {
    let _lock = serial();
    let t0 = Instant::now();
    let mut tight_max = 0.0f64;
    let mut loose_min = 1.0f64;
    for seed in [1u64, 2, 3] {
        let tight = eer_at_spread(0.05, seed);
        let loose = eer_at_spread(1.0, seed);
        assert!(tight < 0.05, "seed {seed}: EER {tight} at spread 0.05");
        assert!(loose > 0.2, "seed {seed}: EER {loose} at spread 1.0");
        tight_max = tight_max.max(tight);
        loose_min = loose_min.min(loose);
    }
    within(Duration::from_secs(30), t0, "separation sanity");
    println!(
        "PASS separation sanity: EER <= {tight_max:.4} at spread 0.05, >= {loose_min:.4} at 1.0"
    );
}

/// Average ranks by direct counting: one plus the number of smaller values,
/// plus half the remaining tied run.
fn rank_oracle(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let less = values.iter().filter(|&&u| u < v).count() as f64;
            let equal = values.iter().filter(|&&u| u == v).count() as f64;
            less + 0.5 * (equal + 1.0)
        })
        .collect()
}

fn srcc_oracle(a: &[f64], b: &[f64]) -> f64 {
    let ra = rank_oracle(a);
    let rb = rank_oracle(b);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0f64;
    let mut va = 0.0f64;
    let mut vb = 0.0f64;
    for (x, y) in ra.iter().zip(&rb) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    cov / (va * vb).sqrt()
}

/// Per-class confusion counts accumulated with one pass of explicit
/// comparisons per class.
fn f1_oracle(truth: &[usize], pred: &[usize]) -> f64 {
    let mut classes: Vec<usize> = truth.iter().chain(pred).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    let mut total = 0.0f64;
    for &c in &classes {
        let mut tp = 0.0f64;
        let mut fp = 0.0f64;
        let mut fnn = 0.0f64;
        for (&t, &p) in truth.iter().zip(pred) {
            if p == c && t == c {
                tp += 1.0;
            }
            if p == c && t != c {
                fp += 1.0;
            }
            if p != c && t == c {
                fnn += 1.0;
            }
        }
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
        if precision + recall > 0.0 {
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    total / classes.len() as f64
}

#[test]
fn metric_fixtures_match_hand_oracles() {
    let _lock = serial();

    // ties in both arguments; closed form is 4.5 / sqrt(22.5)
    let a = [1.0, 2.0, 2.0, 4.0];
    let b = [1.0, 3.0, 2.0, 4.0];
    let got = srcc(&a, &b).unwrap();
    assert_eq!(got, srcc_oracle(&a, &b));
    assert!((got - 4.5 / 22.5f64.sqrt()).abs() < 1e-12);

    // identity and reversal on distinct values are exact
    let x = [1.0, 2.0, 3.0, 5.0];
    assert_eq!(srcc(&x, &x).unwrap(), 1.0);
    assert_eq!(srcc(&x, &[5.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);

    // rank-based, so a strictly increasing transform changes nothing
    let warped: Vec<f64> = b.iter().map(|v| v.exp()).collect();
    assert_eq!(srcc(&a, &warped).unwrap(), got);

    // longer list with tie runs in both arguments
    let long_a = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0, 3.0, 5.0];
    let long_b = [2.0, 7.0, 1.0, 8.0, 2.0, 8.0, 1.0, 8.0, 2.0, 8.0, 4.0];
    assert_eq!(
        srcc(&long_a, &long_b).unwrap(),
        srcc_oracle(&long_a, &long_b)
    );

    // a fully tied argument has no rank variance
    assert!(matches!(
        srcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
        Err(ProbeError::ZeroVariance)
    ));

    // hand case: true (a,a,b,c), predicted (a,b,b,b)
    //   a: P=1, R=1/2 -> 2/3; b: P=1/3, R=1 -> 1/2; c: 0
    let truth = [0usize, 0, 1, 2];
    let pred = [0usize, 1, 1, 1];
    let f1 = f1_macro(&truth, &pred).unwrap();
    assert_eq!(f1, f1_oracle(&truth, &pred));
    assert!((f1 - 7.0 / 18.0).abs() < 1e-12);

    // a predicted-only class still enters the averaging set
    let truth = [0usize, 0, 1];
    let pred = [0usize, 2, 1];
    let f1 = f1_macro(&truth, &pred).unwrap();
    assert_eq!(f1, f1_oracle(&truth, &pred));
    assert!((f1 - 5.0 / 9.0).abs() < 1e-12);

    assert_eq!(f1_macro(&[0, 1, 2, 1], &[0, 1, 2, 1]).unwrap(), 1.0);
    assert_eq!(f1_macro(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 0.0);

    // relabeling both arguments with the same bijection changes nothing
    let swapped_truth: Vec<usize> = truth.iter().map(|&c| 2 - c).collect();
    let swapped_pred: Vec<usize> = pred.iter().map(|&c| 2 - c).collect();
    assert_eq!(f1_macro(&swapped_truth, &swapped_pred).unwrap(), f1);

    // wider random case, still bit-equal to the oracle
    let mut rng = embprobe::seed::rng(0xf1);
    let rand_truth: Vec<usize> = (0..40).map(|_| rng.random_range(0..4)).collect();
    let rand_pred: Vec<usize> = (0..40).map(|_| rng.random_range(0..4)).collect();
    assert_eq!(
        f1_macro(&rand_truth, &rand_pred).unwrap(),
        f1_oracle(&rand_truth, &rand_pred)
    );
    let rand_a: Vec<f64> = (0..40).map(|_| rng.random_range(0..6) as f64).collect();
    let rand_b: Vec<f64> = (0..40).map(|_| rng.random_range(0..6) as f64).collect();
    assert_eq!(srcc(&rand_a, &rand_b).unwrap(), srcc_oracle(&rand_a, &rand_b));

    println!("PASS metric fixtures: SRCC and macro-F1 match the counting oracles exactly");
}

#[test]
fn planted_targets_are_recoverable() {
    let _lock = serial();
    let t0 = Instant::now();
    let mut worst_rho = 1.0f64;
    let mut worst_f1 = 1.0f64;
    for seed in [1u64, 2, 3] {
        let mut rng = embprobe::seed::rng(seed ^ 0xb0);
        let unit = Normal::new(0.0, 1.0).unwrap();
        let (train, test) = split_dataset(
            1000,
            &SplitSpec {
                train_fraction: 0.8,
                seed,
            },
        )
        .unwrap();

        // regression: y = 3 * x0 plus a whisper of noise
        let x: Vec<Vec<f32>> = (0..1000)
            .map(|_| (0..16).map(|_| unit.sample(&mut rng) as f32).collect())
            .collect();
        let noise = Normal::new(0.0, 0.01).unwrap();
        let y: Vec<f64> = x
            .iter()
            .map(|row| 3.0 * row[0] as f64 + noise.sample(&mut rng))
            .collect();
        let train_x: Vec<Vec<f32>> = train.iter().map(|&i| x[i].clone()).collect();
        let train_y: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let model = Gbdt::fit(&train_x, &train_y, &GbdtParams::default()).unwrap();
        let predicted: Vec<f64> = test.iter().map(|&i| model.predict(&x[i])).collect();
        let target: Vec<f64> = test.iter().map(|&i| y[i]).collect();
        let rho = srcc(&target, &predicted).unwrap();
        assert!(rho >= 0.95, "seed {seed}: test SRCC {rho}");
        worst_rho = worst_rho.min(rho);

        // classification: two blobs split cleanly on feature 0
        let labels: Vec<usize> = (0..1000).map(|i| i % 2).collect();
        let blobs: Vec<Vec<f32>> = labels
            .iter()
            .map(|&c| {
                let center = if c == 0 { -2.0 } else { 2.0 };
                (0..16)
                    .map(|d| {
                        let v = if d == 0 {
                            center + 0.5 * unit.sample(&mut rng)
                        } else {
                            unit.sample(&mut rng)
                        };
                        v as f32
                    })
                    .collect()
            })
            .collect();
        let train_x: Vec<Vec<f32>> = train.iter().map(|&i| blobs[i].clone()).collect();
        let train_y: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let tree = DecisionTree::fit(&train_x, &train_y, &TreeParams::default()).unwrap();
        let predicted: Vec<usize> = test.iter().map(|&i| tree.predict(&blobs[i])).collect();
        let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        let f1 = f1_macro(&truth, &predicted).unwrap();
        assert!(f1 >= 0.95, "seed {seed}: test macro-F1 {f1}");
        worst_f1 = worst_f1.min(f1);
    }
    within(Duration::from_secs(60), t0, "planted recoverability");
    println!(
        "PASS probe recoverability: GBDT SRCC >= {worst_rho:.3}, tree macro-F1 >= {worst_f1:.3}"
    );
}

fn battery_scores_at(leak: f64) -> BTreeMap<String, f64> {
    let mut leakage = BTreeMap::new();
    for factor in Factor::ALL {
        leakage.insert(factor, leak);
    }
    let spec = SynthSpec {
        n_speakers: 10,
        utts_per_speaker: 100,
        dim: 64,
        leakage,
        session_clusters: 1,
        seed: 0,
        ..SynthSpec::default()
    };
    let (records, embeddings, _) = generate(&spec).unwrap();
    let dataset = build_dataset(records, embeddings).unwrap();
    let config = BatteryConfig {
        split: SplitSpec {
            train_fraction: 0.8,
            seed: 7,
        },
        ..BatteryConfig::default()
    };
    run_battery(&dataset, &config)
        .unwrap()
        .into_iter()
        .map(|r| (r.task.name.clone(), r.score))
        .collect()
}

#[test]
fn probe_scores_track_planted_leakage() {
    let _lock = serial();
    let t0 = Instant::now();
    let at_zero = battery_scores_at(0.0);
    let at_half = battery_scores_at(0.5);
    let at_one = battery_scores_at(1.0);
    let mut summary = Vec::new();
    for task in ["duration_s", "snr_db", "utterance_id"] {
        let lo = at_zero[task];
        let mid = at_half[task];
        let hi = at_one[task];
        assert!(lo < 0.2, "{task} at leakage 0.0: {lo}");
        assert!(hi > 0.8, "{task} at leakage 1.0: {hi}");
        assert!(lo <= mid && mid <= hi, "{task} not monotone: {lo} {mid} {hi}");
        summary.push(format!("{task} {lo:.3}/{mid:.3}/{hi:.3}"));
    }
    within(Duration::from_secs(120), t0, "leakage monotonicity");
    println!("PASS leakage monotonicity: {}", summary.join(", "));
}

/// Conditional neighbour entropy in bits at one bandwidth, recomputed from
/// raw coordinates.
fn row_entropy_bits(x: &[Vec<f64>], i: usize, beta: f64) -> f64 {
    let n = x.len();
    let mut d = vec![0.0f64; n];
    for (j, row) in x.iter().enumerate() {
        d[j] = x[i]
            .iter()
            .zip(row)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
    }
    let shift = (0..n)
        .filter(|&j| j != i)
        .map(|j| d[j])
        .fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = (0..n)
        .map(|j| {
            if j == i {
                0.0
            } else {
                (-beta * (d[j] - shift)).exp()
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut entropy = 0.0f64;
    for w in weights {
        let p = w / total;
        if p > 0.0 {
            entropy -= p * p.log2();
        }
    }
    entropy
}

#[test]
fn tsne_calibrates_descends_and_separates() {
    let _lock = serial();
    let t0 = Instant::now();

    // three spherical clusters, unit sigma, centers ten sigma apart
    let mut rng = embprobe::seed::rng(0x75e);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut rows: Vec<Vec<f32>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for c in 0..3usize {
        for _ in 0..50 {
            let row: Vec<f32> = (0..16)
                .map(|d| {
                    let center = if d == c { 10.0 } else { 0.0 };
                    (center + unit.sample(&mut rng)) as f32
                })
                .collect();
            rows.push(row);
            labels.push(c);
        }
    }
    let keys: Vec<String> = (0..rows.len()).map(|i| format!("u{i:04}")).collect();

    let x: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    let (_, betas) = calibrate_affinities(&x, 30.0).unwrap();
    let target = 30.0f64.log2();
    let mut worst_gap = 0.0f64;
    for (i, &beta) in betas.iter().enumerate() {
        let gap = (row_entropy_bits(&x, i, beta) - target).abs();
        worst_gap = worst_gap.max(gap);
    }
    assert!(worst_gap <= 1e-4, "entropy gap {worst_gap:.2e}");

    let config = TsneConfig {
        seed: 4,
        ..TsneConfig::default()
    };
    let projection = tsne_embed(&keys, &rows, &config).unwrap();
    let first = projection.kl_trace.first().unwrap().kl;
    let last = projection.kl_trace.last().unwrap().kl;
    assert!(last < first, "KL {first} -> {last}");

    // nearest-centroid purity against the generating labels
    let mut centroids = [[0.0f64; 2]; 3];
    let mut counts = [0usize; 3];
    for (i, &c) in labels.iter().enumerate() {
        centroids[c][0] += projection.coords[i][0];
        centroids[c][1] += projection.coords[i][1];
        counts[c] += 1;
    }
    for (centroid, &count) in centroids.iter_mut().zip(&counts) {
        centroid[0] /= count as f64;
        centroid[1] /= count as f64;
    }
    let mut correct = 0usize;
    for (i, &c) in labels.iter().enumerate() {
        let nearest = (0..3)
            .min_by(|&a, &b| {
                let da = (projection.coords[i][0] - centroids[a][0]).powi(2)
                    + (projection.coords[i][1] - centroids[a][1]).powi(2);
                let db = (projection.coords[i][0] - centroids[b][0]).powi(2)
                    + (projection.coords[i][1] - centroids[b][1]).powi(2);
                da.total_cmp(&db)
            })
            .unwrap();
        if nearest == c {
            correct += 1;
        }
    }
    let purity = correct as f64 / labels.len() as f64;
    assert!(purity >= 0.9, "cluster purity {purity}");

    // bit-identical across pool sizes and plain reruns
    let pool_one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| tsne_embed(&keys, &rows, &config))
        .unwrap();
    let pool_eight = rayon::ThreadPoolBuilder::new()
        .num_threads(8)
        .build()
        .unwrap()
        .install(|| tsne_embed(&keys, &rows, &config))
        .unwrap();
    assert_eq!(pool_one, pool_eight);
    assert_eq!(pool_one, projection);
    let rerun = tsne_embed(&keys, &rows, &config).unwrap();
    assert_eq!(rerun, projection);

    within(Duration::from_secs(60), t0, "t-SNE invariants");
    println!(
        "PASS t-SNE invariants: entropy gap {worst_gap:.2e}, KL {first:.3} -> {last:.3}, purity {purity:.3}, thread-invariant"
    );
}

fn probe_arch(name: &str, scores: [f64; 4]) -> ArchResults {
    let tasks = [
        ("speaker_id", Direction::HigherBetter),
        ("gender", Direction::HigherBetter),
        ("char_count", Direction::LowerBetter),
        ("recording_condition", Direction::LowerBetter),
    ];
    ArchResults {
        architecture: name.to_string(),
        probes: tasks
            .iter()
            .zip(scores)
            .map(|((task, direction), score)| ProbeResult {
                task: ProbeTask {
                    name: task.to_string(),
                    kind: TaskKind::Classification,
                    direction: *direction,
                },
                score,
                auxiliary: None,
            })
            .collect(),
        ..ArchResults::default()
    }
}

#[test]
fn fixture_tables_render_expected_rows() {
    let _lock = serial();

    let groups = ["All", "Female", "Male", "SWARA1.0", "SWARA2.0"];
    let eer_rows: [(&str, [f64; 5]); 6] = [
        ("Pyannote", [0.040, 0.055, 0.039, 0.024, 0.047]),
        ("Speech Brain", [0.025, 0.027, 0.031, 0.011, 0.031]),
        ("Clova AI", [0.055, 0.060, 0.081, 0.031, 0.073]),
        ("NeMo Titanet", [0.018, 0.014, 0.027, 0.005, 0.024]),
        ("NeMo SpeakerNet", [0.039, 0.045, 0.051, 0.024, 0.048]),
        ("NeMo ECAPA-TDNN", [0.032, 0.035, 0.041, 0.023, 0.038]),
    ];
    let archs: Vec<ArchResults> = eer_rows
        .iter()
        .map(|(name, values)| ArchResults {
            architecture: name.to_string(),
            eer_by_group: groups
                .iter()
                .zip(values)
                .map(|(g, &v)| (g.to_string(), v))
                .collect(),
            ..ArchResults::default()
        })
        .collect();
    let report = Report::build(&archs).unwrap();
    let table = report.eer.as_ref().unwrap();
    let csv = table.to_csv().unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "architecture,All,Female,Male,SWARA1.0,SWARA2.0");
    assert_eq!(lines[1], "Pyannote,0.040,0.055,0.039,0.024,0.047");
    let best = table.best_per_column();
    assert!(best.iter().all(|b| b.as_deref() == Some("NeMo Titanet")));

    let f1_rows: [(&str, [f64; 4]); 6] = [
        ("Pyannote", [0.76, 0.94, 0.016, 0.87]),
        ("Speech Brain", [0.84, 0.96, 0.011, 0.90]),
        ("Clova AI", [0.85, 0.98, 0.015, 0.92]),
        ("NeMo Titanet", [0.90, 0.97, 0.010, 0.95]),
        ("NeMo SpeakerNet", [0.85, 0.96, 0.014, 0.91]),
        ("NeMo ECAPA-TDNN", [0.87, 0.96, 0.015, 0.95]),
    ];
    let archs: Vec<ArchResults> = f1_rows
        .iter()
        .map(|(name, scores)| probe_arch(name, *scores))
        .collect();
    let report = Report::build(&archs).unwrap();
    let csv = report.classification.as_ref().unwrap().to_csv().unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "architecture,Speaker ID,Gender,Text Length,Recording Condition"
    );
    assert_eq!(lines[4], "NeMo Titanet,0.90,0.97,0.010,0.95");

    println!("PASS report fixtures: stored rows render character-for-character");
}

fn run_cli(args: &[&str], threads: &str) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_embprobe"))
        .args(args)
        .env("EMBPROBE_THREADS", threads)
        .output()
        .expect("binary launches")
}

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn cli_pipeline_reruns_byte_identical() {
    let _lock = serial();
    let mut trees: Vec<BTreeMap<String, Vec<u8>>> = Vec::new();
    let mut timings = Vec::new();
    // differing worker counts double as a thread-invariance check
    for threads in ["4", "8"] {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        let out = dir.path().join("run");
        let synth = run_cli(
            &[
                "synth",
                "--speakers",
                "10",
                "--utts",
                "50",
                "--dim",
                "64",
                "--seed",
                "5",
                "--out",
                corpus.to_str().unwrap(),
            ],
            threads,
        );
        assert!(
            synth.status.success(),
            "synth: {}",
            String::from_utf8_lossy(&synth.stderr)
        );
        let t0 = Instant::now();
        let all = run_cli(
            &[
                "all",
                "--manifest",
                corpus.join("manifest.csv").to_str().unwrap(),
                "--embeddings",
                corpus.join("synth.emb").to_str().unwrap(),
                "--seed",
                "5",
                "--out",
                out.to_str().unwrap(),
            ],
            threads,
        );
        let elapsed = t0.elapsed();
        assert!(
            all.status.success(),
            "all: {}",
            String::from_utf8_lossy(&all.stderr)
        );
        within(Duration::from_secs(300), t0, "full pipeline");
        timings.push(elapsed);

        let mut files = tree_bytes(&corpus);
        for (rel, bytes) in tree_bytes(&out) {
            files.insert(format!("run/{rel}"), bytes);
        }
        trees.push(files);
    }

    let (first, second) = (&trees[0], &trees[1]);
    assert!(!first.is_empty());
    assert_eq!(
        first.keys().collect::<Vec<_>>(),
        second.keys().collect::<Vec<_>>()
    );
    for (path, bytes) in first {
        assert_eq!(bytes, &second[path], "{path} differs between runs");
    }

    println!(
        "PASS end-to-end determinism: {} files byte-identical across reruns ({:.1?} and {:.1?})",
        first.len(),
        timings[0],
        timings[1]
    );
}
