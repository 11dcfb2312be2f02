//! Histogram gradient boosting for regression, squared-error loss.
//!
//! Each round fits one regression tree to the current residuals. Features
//! are pre-binned with equal-frequency boundaries computed on training data
//! only; trees grow leaf-wise, always splitting the leaf with the largest
//! gain. Split gain is GL²/CL + GR²/CR − G²/C over residual sums G and
//! sample counts C, and a leaf's contribution is the learning rate times
//! its mean residual.

use rayon::prelude::*;

use super::ProbeError;

#[derive(Debug, Clone)]
pub struct GbdtParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub min_data_in_leaf: usize,
    pub histogram_bins: usize,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            n_rounds: 100,
            learning_rate: 0.1,
            max_leaves: 31,
            min_data_in_leaf: 20,
            histogram_bins: 255,
        }
    }
}

/// Equal-frequency bin boundaries, strictly increasing midpoints.
fn equal_frequency_edges(column: &[f32], bins: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = column.iter().map(|&v| v as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges = Vec::new();
    for b in 1..bins {
        let pos = b * n / bins;
        if pos == 0 || pos >= n {
            continue;
        }
        if sorted[pos - 1] < sorted[pos] {
            let edge = (sorted[pos - 1] + sorted[pos]) / 2.0;
            if edges.last() != Some(&edge) {
                edges.push(edge);
            }
        }
    }
    edges
}

/// Per-feature bin index: number of edges strictly below the value.
fn bin_of(edges: &[f64], value: f32) -> u8 {
    edges.partition_point(|&e| e < value as f64) as u8
}

#[derive(Debug, Clone)]
enum Slot {
    Pending,
    Leaf {
        value: f64,
    },
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct RegTree {
    slots: Vec<Slot>,
}

impl RegTree {
    pub fn predict(&self, row: &[f32]) -> f64 {
        let mut at = 0;
        loop {
            match &self.slots[at] {
                Slot::Leaf { value } => return *value,
                Slot::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if (row[*feature] as f64) <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
                Slot::Pending => unreachable!("tree fully grown"),
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct BestSplit {
    feature: usize,
    bin: u8,
    threshold: f64,
    gain: f64,
}

struct GrowLeaf {
    slot: usize,
    samples: Vec<u32>,
    sum: f64,
    best: Option<BestSplit>,
}

/// Best split over all features for one leaf, reduced in feature order.
fn best_split(
    samples: &[u32],
    residuals: &[f64],
    binned: &[Vec<u8>],
    edges: &[Vec<f64>],
    sum: f64,
    min_leaf: usize,
) -> Option<BestSplit> {
    let c_total = samples.len();
    if c_total < 2 * min_leaf {
        return None;
    }
    let parent = sum * sum / c_total as f64;

    let per_feature: Vec<Option<BestSplit>> = binned
        .par_iter()
        .enumerate()
        .map(|(f, column)| {
            let feature_edges = &edges[f];
            if feature_edges.is_empty() {
                return None;
            }
            let n_bins = feature_edges.len() + 1;
            let mut hist_sum = vec![0.0f64; n_bins];
            let mut hist_count = vec![0usize; n_bins];
            for &i in samples {
                let b = column[i as usize] as usize;
                hist_sum[b] += residuals[i as usize];
                hist_count[b] += 1;
            }
            let mut gl = 0.0f64;
            let mut cl = 0usize;
            let mut best: Option<BestSplit> = None;
            for b in 0..n_bins - 1 {
                gl += hist_sum[b];
                cl += hist_count[b];
                let cr = c_total - cl;
                if cl < min_leaf || cr < min_leaf {
                    continue;
                }
                let gr = sum - gl;
                let gain = gl * gl / cl as f64 + gr * gr / cr as f64 - parent;
                if gain > 0.0 && best.is_none_or(|s| gain > s.gain) {
                    best = Some(BestSplit {
                        feature: f,
                        bin: b as u8,
                        threshold: feature_edges[b],
                        gain,
                    });
                }
            }
            best
        })
        .collect();

    let mut best: Option<BestSplit> = None;
    for cand in per_feature.into_iter().flatten() {
        if best.is_none_or(|s| cand.gain > s.gain) {
            best = Some(cand);
        }
    }
    best
}

fn grow_tree(
    residuals: &[f64],
    binned: &[Vec<u8>],
    edges: &[Vec<f64>],
    params: &GbdtParams,
) -> RegTree {
    let n = residuals.len();
    let root_samples: Vec<u32> = (0..n as u32).collect();
    let root_sum: f64 = residuals.iter().sum();
    let mut slots = vec![Slot::Pending];
    let mut leaves = vec![GrowLeaf {
        slot: 0,
        best: best_split(
            &root_samples,
            residuals,
            binned,
            edges,
            root_sum,
            params.min_data_in_leaf,
        ),
        samples: root_samples,
        sum: root_sum,
    }];

    while leaves.len() < params.max_leaves {
        // Earliest-created leaf wins gain ties.
        let mut pick: Option<usize> = None;
        for (i, leaf) in leaves.iter().enumerate() {
            if let Some(split) = leaf.best {
                if pick.is_none_or(|p| split.gain > leaves[p].best.unwrap().gain) {
                    pick = Some(i);
                }
            }
        }
        let Some(pick) = pick else { break };

        let leaf = leaves.swap_remove(pick);
        let split = leaf.best.expect("picked leaf has a split");
        let column = &binned[split.feature];
        let mut left_samples = Vec::new();
        let mut right_samples = Vec::new();
        let mut left_sum = 0.0f64;
        for i in leaf.samples {
            if column[i as usize] <= split.bin {
                left_sum += residuals[i as usize];
                left_samples.push(i);
            } else {
                right_samples.push(i);
            }
        }
        let right_sum = leaf.sum - left_sum;

        let left_slot = slots.len();
        let right_slot = slots.len() + 1;
        slots.push(Slot::Pending);
        slots.push(Slot::Pending);
        slots[leaf.slot] = Slot::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left: left_slot,
            right: right_slot,
        };
        for (slot, samples, sum) in [
            (left_slot, left_samples, left_sum),
            (right_slot, right_samples, right_sum),
        ] {
            leaves.push(GrowLeaf {
                slot,
                best: best_split(&samples, residuals, binned, edges, sum, params.min_data_in_leaf),
                samples,
                sum,
            });
        }
    }

    for leaf in leaves {
        let value = params.learning_rate * leaf.sum / leaf.samples.len() as f64;
        slots[leaf.slot] = Slot::Leaf { value };
    }
    RegTree { slots }
}

#[derive(Debug)]
pub struct Gbdt {
    pub base: f64,
    pub trees: Vec<RegTree>,
    /// Training MSE before boosting and after each round.
    pub train_loss: Vec<f64>,
}

impl Gbdt {
    pub fn fit(x: &[Vec<f32>], y: &[f64], params: &GbdtParams) -> Result<Self, ProbeError> {
        if x.is_empty() || y.is_empty() {
            return Err(ProbeError::Empty);
        }
        if x.len() != y.len() {
            return Err(ProbeError::LengthMismatch {
                left: x.len(),
                right: y.len(),
            });
        }
        let first = y[0];
        if y.iter().all(|&v| v == first) {
            return Err(ProbeError::ConstantTarget);
        }
        let n = x.len();
        let n_features = x[0].len();

        let columns: Vec<Vec<f32>> = (0..n_features)
            .map(|f| x.iter().map(|row| row[f]).collect())
            .collect();
        let edges: Vec<Vec<f64>> = columns
            .par_iter()
            .map(|c| equal_frequency_edges(c, params.histogram_bins))
            .collect();
        let binned: Vec<Vec<u8>> = columns
            .par_iter()
            .zip(&edges)
            .map(|(c, e)| c.iter().map(|&v| bin_of(e, v)).collect())
            .collect();

        let base = y.iter().sum::<f64>() / n as f64;
        let mut preds = vec![base; n];
        let mse = |preds: &[f64]| {
            y.iter()
                .zip(preds)
                .map(|(t, p)| (t - p) * (t - p))
                .sum::<f64>()
                / n as f64
        };
        let mut train_loss = vec![mse(&preds)];
        let mut trees = Vec::with_capacity(params.n_rounds);
        let mut residuals = vec![0.0f64; n];
        for _ in 0..params.n_rounds {
            for i in 0..n {
                residuals[i] = y[i] - preds[i];
            }
            let tree = grow_tree(&residuals, &binned, &edges, params);
            for (i, pred) in preds.iter_mut().enumerate() {
                *pred += tree.predict(&x[i]);
            }
            train_loss.push(mse(&preds));
            trees.push(tree);
        }
        Ok(Gbdt {
            base,
            trees,
            train_loss,
        })
    }

    pub fn predict(&self, row: &[f32]) -> f64 {
        self.base + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }
}
