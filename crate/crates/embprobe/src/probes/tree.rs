//! CART classification tree on gini impurity.
//!
//! Grown greedily to unlimited depth with axis-aligned midpoint thresholds.
//! An impure node is split whenever any valid split exists, even at zero
//! gini gain, so training accuracy on consistent data reaches 1.0. All tie
//! breaking is deterministic: lowest feature index, then lowest threshold,
//! then lowest class id for leaf majorities.

use rayon::prelude::*;

use super::ProbeError;

#[derive(Debug, Clone)]
pub struct TreeParams {
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { min_samples_leaf: 1 }
    }
}

#[derive(Debug)]
enum Node {
    Leaf {
        class: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug)]
pub struct DecisionTree {
    root: Node,
    n_classes: usize,
}

/// Best split of one feature: maximizes ssL/nL + ssR/nR, the negated
/// weighted child impurity up to affine terms shared by all candidates.
fn best_feature_split(
    values: &[(f64, usize)],
    n_classes: usize,
    min_leaf: usize,
) -> Option<(f64, f64)> {
    let n = values.len();
    let mut left_counts = vec![0usize; n_classes];
    let mut right_counts = vec![0usize; n_classes];
    for &(_, c) in values {
        right_counts[c] += 1;
    }
    let mut ss_left = 0.0f64;
    let mut ss_right = right_counts.iter().map(|&c| (c * c) as f64).sum::<f64>();

    let mut best: Option<(f64, f64)> = None;
    for i in 1..n {
        let c = values[i - 1].1;
        ss_left += (2 * left_counts[c] + 1) as f64;
        ss_right -= (2 * right_counts[c] - 1) as f64;
        left_counts[c] += 1;
        right_counts[c] -= 1;

        if values[i].0 <= values[i - 1].0 {
            continue;
        }
        if i < min_leaf || n - i < min_leaf {
            continue;
        }
        let score = ss_left / i as f64 + ss_right / (n - i) as f64;
        let threshold = (values[i - 1].0 + values[i].0) / 2.0;
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, threshold));
        }
    }
    best
}

fn majority_class(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &count) in counts.iter().enumerate() {
        if count > counts[best] {
            best = c;
        }
    }
    best
}

fn grow(
    x: &[Vec<f32>],
    y: &[usize],
    indices: Vec<usize>,
    n_classes: usize,
    params: &TreeParams,
) -> Node {
    let mut counts = vec![0usize; n_classes];
    for &i in &indices {
        counts[y[i]] += 1;
    }
    let n_present = counts.iter().filter(|&&c| c > 0).count();
    if n_present <= 1 || indices.len() < 2 * params.min_samples_leaf {
        return Node::Leaf {
            class: majority_class(&counts),
        };
    }

    let n_features = x[0].len();
    let per_feature: Vec<Option<(f64, f64)>> = (0..n_features)
        .into_par_iter()
        .map(|f| {
            let mut values: Vec<(f64, usize)> = indices
                .iter()
                .map(|&i| (x[i][f] as f64, y[i]))
                .collect();
            values.sort_by(|a, b| a.0.total_cmp(&b.0));
            best_feature_split(&values, n_classes, params.min_samples_leaf)
        })
        .collect();

    let mut best: Option<(f64, usize, f64)> = None;
    for (f, cand) in per_feature.into_iter().enumerate() {
        if let Some((score, threshold)) = cand {
            if best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, f, threshold));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        // Impure but no feature varies: fall back to the majority.
        return Node::Leaf {
            class: majority_class(&counts),
        };
    };

    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .into_iter()
        .partition(|&i| (x[i][feature] as f64) <= threshold);
    Node::Split {
        feature,
        threshold,
        left: Box::new(grow(x, y, left_idx, n_classes, params)),
        right: Box::new(grow(x, y, right_idx, n_classes, params)),
    }
}

impl DecisionTree {
    /// Fit on rows `x` with dense class ids `y` in 0..n_classes.
    pub fn fit(x: &[Vec<f32>], y: &[usize], params: &TreeParams) -> Result<Self, ProbeError> {
        if x.is_empty() || y.is_empty() {
            return Err(ProbeError::Empty);
        }
        if x.len() != y.len() {
            return Err(ProbeError::LengthMismatch {
                left: x.len(),
                right: y.len(),
            });
        }
        let n_classes = y.iter().max().unwrap() + 1;
        let mut seen = vec![false; n_classes];
        for &c in y {
            seen[c] = true;
        }
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(ProbeError::SingleClass);
        }
        let indices: Vec<usize> = (0..x.len()).collect();
        Ok(DecisionTree {
            root: grow(x, y, indices, n_classes, params),
            n_classes,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn predict(&self, row: &[f32]) -> usize {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { class } => return *class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if (row[*feature] as f64) <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }
}
