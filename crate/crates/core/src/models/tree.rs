use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_training_shape, ModelError, Regressor};
use crate::matrix::Matrix;
use crate::seed::uniform_index;

/// Relative slack under which two candidate splits count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Features examined per split; `None` examines all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: None,
        }
    }
}

impl TreeParams {
    pub fn with_depth(max_depth: usize) -> Self {
        TreeParams {
            max_depth: Some(max_depth),
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.max_depth == Some(0) {
            return Err(ModelError::InvalidParameter("max_depth must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(ModelError::InvalidParameter(
                "min_samples_leaf must be at least 1".into(),
            ));
        }
        if self.max_features == Some(0) {
            return Err(ModelError::InvalidParameter("max_features must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        /// Reduction in summed squared error achieved by this split.
        gain: f64,
        samples: usize,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
        samples: usize,
    },
}

impl TreeNode {
    pub fn samples(&self) -> usize {
        match self {
            TreeNode::Internal { samples, .. } | TreeNode::Leaf { samples, .. } => *samples,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> Vec<(f64, usize)> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            match node {
                TreeNode::Leaf { value, samples } => out.push((*value, *samples)),
                TreeNode::Internal { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub n_features: usize,
    pub root: TreeNode,
}

impl RegressionTree {
    /// Summed split gain per feature, normalized to one. All zeros when the
    /// tree never split (or every split had zero gain).
    pub fn feature_importances(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.n_features];
        let mut stack = vec![&self.root];
        while let Some(node) = stack.pop() {
            if let TreeNode::Internal {
                feature,
                gain,
                left,
                right,
                ..
            } = node
            {
                totals[*feature] += gain.max(0.0);
                stack.push(left);
                stack.push(right);
            }
        }
        let sum: f64 = totals.iter().sum();
        if sum > 0.0 {
            totals.iter_mut().for_each(|v| *v /= sum);
        }
        totals
    }

    pub fn root_split(&self) -> Option<(usize, f64)> {
        match &self.root {
            TreeNode::Internal { feature, threshold, .. } => Some((*feature, *threshold)),
            TreeNode::Leaf { .. } => None,
        }
    }
}

impl Regressor for RegressionTree {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if row[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Split {
    /// Larger gain wins; within the tie tolerance the lower feature index,
    /// then the lower threshold, wins.
    fn beats(&self, other: &Split, slack: f64) -> bool {
        if self.gain > other.gain + slack {
            return true;
        }
        if self.gain < other.gain - slack {
            return false;
        }
        (self.feature, self.threshold) < (other.feature, other.threshold)
    }
}

struct Builder<'a, R> {
    x: &'a Matrix,
    y: &'a [f64],
    params: TreeParams,
    rng: &'a mut R,
    pairs: Vec<(f64, f64)>,
}

impl<R: Rng> Builder<'_, R> {
    fn build(&mut self, sample: &mut [usize], depth: usize) -> TreeNode {
        let n = sample.len();
        let mean = sample.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
        let leaf = TreeNode::Leaf {
            value: mean,
            samples: n,
        };

        let depth_reached = self.params.max_depth.is_some_and(|d| depth >= d);
        let first = self.y[sample[0]];
        let pure = sample.iter().all(|&i| self.y[i] == first);
        if depth_reached || pure || n < self.params.min_samples_split || n < 2 * self.params.min_samples_leaf {
            return leaf;
        }

        let Some(split) = self.best_split(sample, mean) else {
            return leaf;
        };

        let (mut left, mut right): (Vec<usize>, Vec<usize>) = sample
            .iter()
            .partition(|&&i| self.x.get(i, split.feature) <= split.threshold);
        let left_node = self.build(&mut left, depth + 1);
        let right_node = self.build(&mut right, depth + 1);
        TreeNode::Internal {
            feature: split.feature,
            threshold: split.threshold,
            gain: split.gain,
            samples: n,
            left: Box::new(left_node),
            right: Box::new(right_node),
        }
    }

    /// Candidate feature order. With a feature budget the order is random and
    /// the search continues past the budget until some valid split is found.
    fn feature_order(&mut self) -> (Vec<usize>, usize) {
        let d = self.x.cols();
        let mut order: Vec<usize> = (0..d).collect();
        match self.params.max_features {
            Some(k) if k < d => {
                for i in 0..d - 1 {
                    let j = i + uniform_index(self.rng, d - i);
                    order.swap(i, j);
                }
                (order, k)
            }
            _ => (order, d),
        }
    }

    fn best_split(&mut self, sample: &[usize], mean: f64) -> Option<Split> {
        let n = sample.len();
        let min_leaf = self.params.min_samples_leaf;
        let sst: f64 = sample.iter().map(|&i| (self.y[i] - mean).powi(2)).sum();
        let slack = TIE_TOLERANCE * sst;
        let (order, budget) = self.feature_order();

        let mut best: Option<Split> = None;
        for (examined, &feature) in order.iter().enumerate() {
            if examined >= budget && best.is_some() {
                break;
            }
            self.pairs.clear();
            self.pairs
                .extend(sample.iter().map(|&i| (self.x.get(i, feature), self.y[i] - mean)));
            self.pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let total: f64 = self.pairs.iter().map(|p| p.1).sum();

            let mut left_sum = 0.0;
            for pos in 0..n - 1 {
                left_sum += self.pairs[pos].1;
                let left_n = pos + 1;
                let right_n = n - left_n;
                let (lo, hi) = (self.pairs[pos].0, self.pairs[pos + 1].0);
                if lo == hi || left_n < min_leaf || right_n < min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / left_n as f64 + right_sum * right_sum / right_n as f64;
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                let candidate = Split {
                    feature,
                    threshold,
                    gain,
                };
                if best.as_ref().is_none_or(|b| candidate.beats(b, slack)) {
                    best = Some(candidate);
                }
            }
        }
        best
    }
}

/// Fits a CART regression tree on the rows listed in `sample` (repeats
/// allowed, as produced by bootstrap resampling).
pub fn tree_fit_sample<R: Rng>(
    x: &Matrix,
    y: &[f64],
    sample: &[usize],
    params: TreeParams,
    rng: &mut R,
) -> Result<RegressionTree, ModelError> {
    check_training_shape(x, y)?;
    params.validate()?;
    if sample.is_empty() {
        return Err(ModelError::InsufficientRows {
            rows: 0,
            cols: x.cols(),
            needed: 1,
        });
    }
    let mut sample = sample.to_vec();
    let mut builder = Builder {
        x,
        y,
        params,
        rng,
        pairs: Vec::with_capacity(sample.len()),
    };
    let root = builder.build(&mut sample, 0);
    Ok(RegressionTree {
        n_features: x.cols(),
        root,
    })
}

/// Fits a CART regression tree on every row. Splits minimize the summed
/// squared error of the children over midpoints between consecutive
/// distinct feature values.
pub fn tree_fit<R: Rng>(x: &Matrix, y: &[f64], params: TreeParams, rng: &mut R) -> Result<RegressionTree, ModelError> {
    let all: Vec<usize> = (0..x.rows()).collect();
    tree_fit_sample(x, y, &all, params, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    fn fit(x: &Matrix, y: &[f64], params: TreeParams) -> RegressionTree {
        tree_fit(x, y, params, &mut rng_from(0)).unwrap()
    }

    #[test]
    fn pure_root_is_single_leaf() {
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]);
        let tree = fit(&x, &[4.2, 4.2, 4.2], TreeParams::with_depth(5));
        assert_eq!(tree.root, TreeNode::Leaf { value: 4.2, samples: 3 });
        assert_eq!(tree.predict(&Matrix::from_rows(&[vec![-9.0]])).unwrap(), vec![4.2]);
    }

    #[test]
    fn stump_on_step_data() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
        let tree = fit(&x, &[0.0, 0.0, 10.0, 10.0], TreeParams::with_depth(1));
        assert_eq!(tree.root_split(), Some((0, 1.5)));
        let leaves: Vec<f64> = tree.root.leaves().iter().map(|l| l.0).collect();
        assert_eq!(leaves, [0.0, 10.0]);
    }

    #[test]
    fn unlimited_depth_interpolates_distinct_rows() {
        // XOR-like layout: no root split reduces error, yet the tree must
        // still isolate every row.
        let x = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![2.0, 0.5],
        ]);
        let y = [0.0, 1.0, 1.0, 0.0, 3.0];
        let tree = fit(&x, &y, TreeParams::default());
        assert_eq!(tree.predict(&x).unwrap(), y.to_vec());
    }

    #[test]
    fn depth_and_leaf_limits_hold() {
        let rows: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64, ((i * 37) % 11) as f64]).collect();
        let y: Vec<f64> = (0..64).map(|i| ((i * i) % 13) as f64).collect();
        let x = Matrix::from_rows(&rows);
        let params = TreeParams {
            max_depth: Some(4),
            min_samples_leaf: 3,
            ..Default::default()
        };
        let tree = fit(&x, &y, params);
        assert!(tree.root.depth() <= 4);
        assert!(tree.root.leaves().iter().all(|(_, n)| *n >= 3));
        let (lo, hi) = (0.0, 12.0);
        assert!(tree.predict(&x).unwrap().iter().all(|p| (lo..=hi).contains(p)));
    }

    #[test]
    fn constant_feature_never_split() {
        let x = Matrix::from_rows(&(0..20).map(|i| vec![7.0, i as f64]).collect::<Vec<_>>());
        let y: Vec<f64> = (0..20).map(|i| (i / 5) as f64).collect();
        let tree = fit(&x, &y, TreeParams::default());
        assert_eq!(tree.feature_importances()[0], 0.0);
        assert!((tree.feature_importances()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.37).sin(), i as f64 / 7.0]).collect();
        let y: Vec<f64> = (0..30).map(|i| (i as f64 * 1.3).cos() * 3.1).collect();
        let x = Matrix::from_rows(&rows);
        let tree = fit(&x, &y, TreeParams::with_depth(6));
        let back: RegressionTree = serde_json::from_str(&serde_json::to_string(&tree).unwrap()).unwrap();
        assert_eq!(back, tree);
        let a = tree.predict(&x).unwrap();
        let b = back.predict(&x).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn rejects_bad_params() {
        let x = Matrix::from_rows(&[vec![1.0]]);
        let mut rng = rng_from(0);
        assert!(tree_fit(&x, &[1.0], TreeParams::with_depth(0), &mut rng).is_err());
        assert!(tree_fit(&x, &[1.0, 2.0], TreeParams::default(), &mut rng).is_err());
    }
}
