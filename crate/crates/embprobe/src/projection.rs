//! Exact t-SNE projection to two dimensions.
//!
//! Dense O(N²) implementation: per-row Gaussian bandwidths found by
//! bisection against the target perplexity, symmetrized affinities, and
//! gradient descent on KL(P‖Q) with a Student-t low-dimensional kernel,
//! early exaggeration, a two-phase momentum schedule, and per-coordinate
//! adaptive gains. Initial coordinates are seeded per utterance key, which
//! makes the result independent of input row order.

use std::path::Path;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

/// Iterations with exaggerated affinities, and the momentum switch point.
pub const EXAGGERATION_ITERS: usize = 250;
pub const MOMENTUM_SWITCH_ITER: usize = 250;
pub const KL_RECORD_EVERY: usize = 50;
const MAX_BISECTION_STEPS: usize = 64;
const PERPLEXITY_RTOL: f64 = 1e-5;
const MIN_GAIN: f64 = 0.01;

/// Zero-aware sign, so a resting coordinate counts as agreeing with neither
/// gradient direction (matching the reference optimizer's gain update).
fn sgn(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

#[derive(Debug, Error)]
pub enum TsneError {
    #[error("need at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("perplexity {perplexity} too large for {n} points (needs < (N−1)/3)")]
    PerplexityTooLarge { perplexity: f64, n: usize },
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("all pairwise distances are zero")]
    DegenerateDistances,
    #[error("duplicate utterance key {0:?}")]
    DuplicateKey(String),
    #[error("keys and rows differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite input component in row {0}")]
    NonFiniteInput(usize),
    #[error("optimization diverged to non-finite coordinates")]
    Diverged,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

impl TsneConfig {
    fn validate(&self, n: usize) -> Result<(), TsneError> {
        if self.iterations == 0 {
            return Err(TsneError::BadConfig("iterations must be ≥ 1".to_string()));
        }
        for (name, v) in [
            ("perplexity", self.perplexity),
            ("learning_rate", self.learning_rate),
            ("early_exaggeration", self.early_exaggeration),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(TsneError::BadConfig(format!("{name} must be > 0")));
            }
        }
        if self.perplexity >= (n as f64 - 1.0) / 3.0 {
            return Err(TsneError::PerplexityTooLarge {
                perplexity: self.perplexity,
                n,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlPoint {
    pub iteration: usize,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub keys: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    pub kl_trace: Vec<KlPoint>,
}

/// Sidecar metadata written next to the coordinate CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMeta {
    pub config: TsneConfig,
    pub kl_trace: Vec<KlPoint>,
}

impl Projection {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TsneError> {
        let mut out = String::from("utterance_key,x,y\n");
        for (key, c) in self.keys.iter().zip(&self.coords) {
            out.push_str(&format!("{key},{},{}\n", c[0], c[1]));
        }
        std::fs::write(path.as_ref(), out)?;
        Ok(())
    }

    pub fn read(
        csv_path: impl AsRef<Path>,
        json_path: impl AsRef<Path>,
    ) -> Result<(Projection, TsneConfig), TsneError> {
        let meta: ProjectionMeta =
            serde_json::from_str(&std::fs::read_to_string(json_path.as_ref())?)?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(csv_path.as_ref())?;
        let mut keys = Vec::new();
        let mut coords = Vec::new();
        for row in reader.records() {
            let row = row?;
            keys.push(row.get(0).unwrap_or_default().to_string());
            let x: f64 = row.get(1).unwrap_or_default().parse().unwrap_or(f64::NAN);
            let y: f64 = row.get(2).unwrap_or_default().parse().unwrap_or(f64::NAN);
            coords.push([x, y]);
        }
        Ok((
            Projection {
                keys,
                coords,
                kl_trace: meta.kl_trace.clone(),
            },
            meta.config,
        ))
    }
}

fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0f64; n * n];
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0f64; n];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let mut s = 0.0;
                for (a, b) in x[i].iter().zip(&x[j]) {
                    let diff = a - b;
                    s += diff * diff;
                }
                row[j] = s;
            }
            row
        })
        .collect();
    for (i, row) in rows.into_iter().enumerate() {
        d[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    d
}

/// Conditional distribution over j ≠ i at one bandwidth, with its entropy
/// in bits. Exponents are shifted by the row minimum for stability.
fn conditional_row(dist: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let n = dist.len();
    let shift = (0..n)
        .filter(|&j| j != i)
        .map(|j| dist[j])
        .fold(f64::INFINITY, f64::min);
    let mut p = vec![0.0f64; n];
    let mut sum = 0.0f64;
    for (j, slot) in p.iter_mut().enumerate() {
        if j == i {
            continue;
        }
        let e = (-beta * (dist[j] - shift)).exp();
        *slot = e;
        sum += e;
    }
    let mut entropy = 0.0f64;
    for (j, slot) in p.iter_mut().enumerate() {
        if j == i {
            continue;
        }
        *slot /= sum;
        if *slot > 0.0 {
            entropy -= *slot * slot.log2();
        }
    }
    (p, entropy)
}

/// Bisect the bandwidth until 2^entropy matches the perplexity within
/// relative tolerance, keeping the best candidate if 64 steps run out.
fn calibrate_row(dist: &[f64], i: usize, perplexity: f64) -> (Vec<f64>, f64) {
    let mut beta = 1.0f64;
    let mut beta_min = f64::NEG_INFINITY;
    let mut beta_max = f64::INFINITY;
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    for _ in 0..MAX_BISECTION_STEPS {
        let (p, entropy) = conditional_row(dist, i, beta);
        let achieved = entropy.exp2();
        let rel = (achieved - perplexity).abs() / perplexity;
        if best.as_ref().is_none_or(|(r, _, _)| rel < *r) {
            best = Some((rel, p, beta));
        }
        if rel <= PERPLEXITY_RTOL {
            break;
        }
        if achieved > perplexity {
            beta_min = beta;
            beta = if beta_max.is_infinite() {
                beta * 2.0
            } else {
                (beta + beta_max) / 2.0
            };
        } else {
            beta_max = beta;
            beta = if beta_min.is_infinite() {
                beta / 2.0
            } else {
                (beta + beta_min) / 2.0
            };
        }
    }
    let (_, p, beta) = best.expect("at least one bisection step ran");
    (p, beta)
}

/// Symmetrized affinities P = (P|i + P|j) / 2N and per-row bandwidths.
///
/// P is row-major N×N with zero diagonal and ΣP = 1.
pub fn calibrate_affinities(
    x: &[Vec<f64>],
    perplexity: f64,
) -> Result<(Vec<f64>, Vec<f64>), TsneError> {
    let n = x.len();
    if n < 4 {
        return Err(TsneError::TooFewPoints(n));
    }
    let dist = squared_distances(x);
    if dist.iter().all(|&d| d == 0.0) {
        return Err(TsneError::DegenerateDistances);
    }

    let per_row: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| calibrate_row(&dist[i * n..(i + 1) * n], i, perplexity))
        .collect();

    let mut p = vec![0.0f64; n * n];
    let mut betas = Vec::with_capacity(n);
    for (i, (row, beta)) in per_row.iter().enumerate() {
        betas.push(*beta);
        for j in 0..n {
            p[i * n + j] += row[j];
            p[j * n + i] += row[j];
        }
    }
    let scale = 1.0 / (2.0 * n as f64);
    for v in &mut p {
        *v *= scale;
    }
    Ok((p, betas))
}

/// Student-t numerators and their fixed-order total.
fn qnum(y: &[[f64; 2]], num: &mut [f64]) -> f64 {
    let n = y.len();
    let partials: Vec<f64> = num
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, row)| {
            let mut partial = 0.0f64;
            for (j, slot) in row.iter_mut().enumerate() {
                if i == j {
                    *slot = 0.0;
                    continue;
                }
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                *slot = v;
                partial += v;
            }
            partial
        })
        .collect();
    partials.iter().sum()
}

fn kl_divergence(p: &[f64], num: &[f64], z: f64, n: usize) -> f64 {
    let partials: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut partial = 0.0f64;
            for j in 0..n {
                let pij = p[i * n + j];
                if pij > 0.0 {
                    let qij = (num[i * n + j] / z).max(f64::MIN_POSITIVE);
                    partial += pij * (pij / qij).ln();
                }
            }
            partial
        })
        .collect();
    partials.iter().sum()
}

/// Project rows to 2-D.
///
/// Keys and rows are paired; internally everything is sorted by key, so
/// permuting the input leaves the result bit-identical.
pub fn tsne_embed(
    keys: &[String],
    rows: &[Vec<f32>],
    config: &TsneConfig,
) -> Result<Projection, TsneError> {
    if keys.len() != rows.len() {
        return Err(TsneError::LengthMismatch(keys.len(), rows.len()));
    }
    let n = keys.len();
    if n < 4 {
        return Err(TsneError::TooFewPoints(n));
    }
    config.validate(n)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    for w in order.windows(2) {
        if keys[w[0]] == keys[w[1]] {
            return Err(TsneError::DuplicateKey(keys[w[0]].clone()));
        }
    }
    let sorted_keys: Vec<String> = order.iter().map(|&i| keys[i].clone()).collect();
    let x: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| rows[i].iter().map(|&v| v as f64).collect())
        .collect();
    for (i, row) in x.iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(TsneError::NonFiniteInput(i));
        }
    }

    let (p, _betas) = calibrate_affinities(&x, config.perplexity)?;

    let normal = Normal::new(0.0, 1e-4).expect("valid stddev");
    let mut y: Vec<[f64; 2]> = sorted_keys
        .iter()
        .map(|key| {
            let mut rng = seed::rng(seed::derive_seed_keyed(config.seed, "tsne-init", key));
            [normal.sample(&mut rng), normal.sample(&mut rng)]
        })
        .collect();
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0f64; n * n];
    let mut kl_trace = Vec::new();

    for iter in 0..config.iterations {
        let z = qnum(&y, &mut num);
        if iter % KL_RECORD_EVERY == 0 {
            kl_trace.push(KlPoint {
                iteration: iter,
                kl: kl_divergence(&p, &num, z, n),
            });
        }

        let exaggeration = if iter < EXAGGERATION_ITERS {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < MOMENTUM_SWITCH_ITER {
            config.initial_momentum
        } else {
            config.final_momentum
        };

        let grads: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0f64; 2];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let nij = num[i * n + j];
                    let coeff = (exaggeration * p[i * n + j] - nij / z) * nij;
                    g[0] += coeff * (y[i][0] - y[j][0]);
                    g[1] += coeff * (y[i][1] - y[j][1]);
                }
                [4.0 * g[0], 4.0 * g[1]]
            })
            .collect();

        for i in 0..n {
            for d in 0..2 {
                gains[i][d] = if sgn(grads[i][d]) != sgn(velocity[i][d]) {
                    gains[i][d] + 0.2
                } else {
                    (gains[i][d] * 0.8).max(MIN_GAIN)
                };
                velocity[i][d] = momentum * velocity[i][d]
                    - config.learning_rate * gains[i][d] * grads[i][d];
                y[i][d] += velocity[i][d];
            }
        }
        let mut mean = [0.0f64; 2];
        for c in &y {
            mean[0] += c[0];
            mean[1] += c[1];
        }
        mean[0] /= n as f64;
        mean[1] /= n as f64;
        for c in &mut y {
            c[0] -= mean[0];
            c[1] -= mean[1];
        }
    }
    let z = qnum(&y, &mut num);
    kl_trace.push(KlPoint {
        iteration: config.iterations,
        kl: kl_divergence(&p, &num, z, n),
    });

    if y.iter().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
        return Err(TsneError::Diverged);
    }
    Ok(Projection {
        keys: sorted_keys,
        coords: y,
        kl_trace,
    })
}
