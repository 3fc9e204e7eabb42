//! CART regression trees, bootstrap forests and per-package classification
//! forests.
//!
//! Regression splits minimise the summed squared error of the children. The
//! classifier reuses the same builder on one-hot label columns, for which the
//! child SSE equals `n * gini`, so both criteria share one code path.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{schema_fingerprint, PhysicsDataset, Table};
use crate::error::{precondition, Error, Result};
use crate::seed;
use crate::surrogate::{Package, PhysicsConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: Vec<f64>,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> &[f64] {
        let mut node = self;
        loop {
            match node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
                TreeNode::Leaf { value } => return value,
            }
        }
    }

    /// Number of split levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
            TreeNode::Leaf { .. } => 0,
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
            TreeNode::Leaf { .. } => 1,
        }
    }

    /// Thresholds used on `feature` anywhere in the tree.
    pub fn thresholds(&self, feature: usize, out: &mut Vec<f64>) {
        if let TreeNode::Split {
            feature: f,
            threshold,
            left,
            right,
        } = self
        {
            if *f == feature {
                out.push(*threshold);
            }
            left.thresholds(feature, out);
            right.thresholds(feature, out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until another stopping rule fires.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// `None` means `ceil(sqrt(n_features))`.
    pub features_per_split: Option<usize>,
    pub seed: u64,
    /// Test hook: `false` fits every tree on the full training set.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 10,
            max_depth: Some(12),
            min_samples_leaf: 2,
            features_per_split: None,
            seed: 0,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(precondition("n_trees must be at least 1"));
        }
        if self.min_samples_leaf == 0 {
            return Err(precondition("min_samples_leaf must be at least 1"));
        }
        let fps = self.resolved_features_per_split(n_features);
        if fps == 0 || fps > n_features {
            return Err(precondition(format!(
                "features_per_split {fps} outside [1, {n_features}]"
            )));
        }
        Ok(())
    }

    pub fn resolved_features_per_split(&self, n_features: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
    }
}

/// A candidate split of one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Summed squared error of the two children.
    pub sse: f64,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let mid = a + (b - a) / 2.0;
    if mid < b {
        mid
    } else {
        a
    }
}

/// Best split of `rows` over `features` (tried in the given order).
///
/// Ties keep the earlier feature and the lower threshold. Returns `None` when
/// no threshold leaves `min_leaf` samples on both sides.
pub fn best_split(
    x: &Table,
    y: &Table,
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<SplitChoice> {
    let n = rows.len();
    let t = y.cols();
    if n < 2 * min_leaf.max(1) {
        return None;
    }
    let mut total = vec![0.0; t];
    let mut total_sq = 0.0;
    for &r in rows {
        for (j, v) in y.row(r).iter().enumerate() {
            total[j] += v;
            total_sq += v * v;
        }
    }
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order = rows.to_vec();
    let mut left = vec![0.0; t];
    for &f in features {
        order.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)));
        left.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n - 1 {
            for (j, v) in y.row(order[i]).iter().enumerate() {
                left[j] += v;
            }
            let n_left = i + 1;
            let n_right = n - n_left;
            if n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let (a, b) = (x.get(order[i], f), x.get(order[i + 1], f));
            if a == b {
                continue;
            }
            let mut score = 0.0;
            for j in 0..t {
                let right = total[j] - left[j];
                score += left[j] * left[j] / n_left as f64 + right * right / n_right as f64;
            }
            if best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, f, midpoint(a, b)));
            }
        }
    }
    best.map(|(score, feature, threshold)| SplitChoice {
        feature,
        threshold,
        sse: (total_sq - score).max(0.0),
    })
}

/// Summed squared deviation from the column means.
pub fn node_sse(y: &Table, rows: &[usize]) -> f64 {
    let n = rows.len() as f64;
    (0..y.cols())
        .map(|j| {
            let mean = rows.iter().map(|&r| y.get(r, j)).sum::<f64>() / n;
            rows.iter().map(|&r| (y.get(r, j) - mean).powi(2)).sum::<f64>()
        })
        .sum()
}

fn leaf(y: &Table, rows: &[usize]) -> TreeNode {
    let n = rows.len() as f64;
    let value = (0..y.cols())
        .map(|j| rows.iter().map(|&r| y.get(r, j)).sum::<f64>() / n)
        .collect();
    TreeNode::Leaf { value }
}

fn constant_targets(y: &Table, rows: &[usize]) -> bool {
    let first = y.row(rows[0]);
    rows.iter().all(|&r| y.row(r) == first)
}

struct Builder<'a> {
    x: &'a Table,
    y: &'a Table,
    max_depth: Option<usize>,
    min_leaf: usize,
    features_per_split: usize,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn grow(&mut self, rows: &[usize], depth: usize) -> TreeNode {
        if constant_targets(self.y, rows) {
            return TreeNode::Leaf {
                value: self.y.row(rows[0]).to_vec(),
            };
        }
        if self.max_depth.is_some_and(|d| depth >= d) || rows.len() < 2 * self.min_leaf {
            return leaf(self.y, rows);
        }
        let varying: Vec<usize> = (0..self.x.cols())
            .filter(|&f| {
                let v0 = self.x.get(rows[0], f);
                rows.iter().any(|&r| self.x.get(r, f) != v0)
            })
            .collect();
        let features = if varying.len() <= self.features_per_split {
            varying
        } else {
            let mut picked: Vec<usize> = index::sample(&mut self.rng, varying.len(), self.features_per_split)
                .into_iter()
                .map(|i| varying[i])
                .collect();
            picked.sort_unstable();
            picked
        };
        let Some(split) = best_split(self.x, self.y, rows, &features, self.min_leaf) else {
            return leaf(self.y, rows);
        };
        let (left, right): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.x.get(r, split.feature) <= split.threshold);
        TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(self.grow(&left, depth + 1)),
            right: Box::new(self.grow(&right, depth + 1)),
        }
    }
}

fn check_training_data(x: &Table, y: &Table) -> Result<()> {
    if x.rows() == 0 {
        return Err(precondition("cannot fit a tree to an empty dataset"));
    }
    if x.rows() != y.rows() {
        return Err(Error::Schema(format!(
            "{} feature rows but {} target rows",
            x.rows(),
            y.rows()
        )));
    }
    if !x.is_finite() || !y.is_finite() {
        return Err(precondition("training data must be finite"));
    }
    Ok(())
}

/// Fits one tree on the given rows (repeats allowed).
pub fn fit_tree_rows(x: &Table, y: &Table, rows: &[usize], params: &ForestParams, rng_seed: u64) -> Result<TreeNode> {
    check_training_data(x, y)?;
    params.validate(x.cols())?;
    if rows.is_empty() {
        return Err(precondition("cannot fit a tree to zero rows"));
    }
    let mut builder = Builder {
        x,
        y,
        max_depth: params.max_depth,
        min_leaf: params.min_samples_leaf,
        features_per_split: params.resolved_features_per_split(x.cols()),
        rng: seed::rng(rng_seed),
    };
    Ok(builder.grow(rows, 0))
}

pub fn fit_tree(x: &Table, y: &Table, params: &ForestParams, rng_seed: u64) -> Result<TreeNode> {
    let rows: Vec<usize> = (0..x.rows()).collect();
    fit_tree_rows(x, y, &rows, params, rng_seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<TreeNode>,
    pub params: ForestParams,
    pub schema_fingerprint: String,
    pub n_features: usize,
    pub n_targets: usize,
}

/// Bootstrap draw and tree seed of tree `index`.
pub fn tree_sample(params: &ForestParams, n: usize, index: usize) -> (Vec<usize>, u64) {
    let tree_seed = seed::derive_indexed(params.seed, "tree", index as u64);
    if !params.bootstrap {
        return ((0..n).collect(), tree_seed);
    }
    let mut rng = seed::rng(seed::derive_indexed(params.seed, "bootstrap", index as u64));
    ((0..n).map(|_| rng.random_range(0..n)).collect(), tree_seed)
}

pub fn fit_forest(x: &Table, y: &Table, schema: &[String], params: &ForestParams) -> Result<Forest> {
    check_training_data(x, y)?;
    params.validate(x.cols())?;
    if schema.len() != x.cols() {
        return Err(Error::Schema(format!(
            "schema names {} columns, features have {}",
            schema.len(),
            x.cols()
        )));
    }
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let (rows, tree_seed) = tree_sample(params, x.rows(), i);
            fit_tree_rows(x, y, &rows, params, tree_seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Forest {
        trees,
        params: params.clone(),
        schema_fingerprint: schema_fingerprint(schema),
        n_features: x.cols(),
        n_targets: y.cols(),
    })
}

impl Forest {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_targets];
        for tree in &self.trees {
            for (o, v) in out.iter_mut().zip(tree.predict(x)) {
                *o += v;
            }
        }
        let n = self.trees.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    /// Majority vote over per-tree argmax classes; ties go to the lower class.
    pub fn predict_class(&self, x: &[f64]) -> usize {
        let mut votes = vec![0usize; self.n_targets];
        for tree in &self.trees {
            votes[argmax(tree.predict(x))] += 1;
        }
        let mut best = 0;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = c;
            }
        }
        best
    }

    pub fn check_schema(&self, schema: &[String]) -> Result<()> {
        if schema_fingerprint(schema) != self.schema_fingerprint {
            return Err(Error::Schema("feature schema differs from the one the forest was trained on".into()));
        }
        Ok(())
    }
}

/// Index of the largest entry, ties to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One classification forest per package.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsClassifier {
    pub forests: Vec<Forest>,
}

fn one_hot_labels(labels: &[usize], classes: usize) -> Table {
    let mut t = Table::new(classes);
    for &l in labels {
        let mut row = vec![0.0; classes];
        row[l] = 1.0;
        t.push(&row).expect("width matches");
    }
    t
}

pub fn fit_classifier(x: &Table, labels: &[usize], classes: usize, schema: &[String], params: &ForestParams) -> Result<Forest> {
    if labels.iter().any(|&l| l >= classes) {
        return Err(precondition(format!("class label outside 0..{classes}")));
    }
    fit_forest(x, &one_hot_labels(labels, classes), schema, params)
}

pub fn fit_physics_classifier(data: &PhysicsDataset, params: &ForestParams) -> Result<PhysicsClassifier> {
    let forests = Package::ALL
        .iter()
        .map(|&package| {
            let labels: Vec<usize> = data.targets.iter().map(|c| c.option(package)).collect();
            let package_params = ForestParams {
                seed: seed::derive_seed(params.seed, package.name()),
                ..params.clone()
            };
            fit_classifier(
                &data.features,
                &labels,
                package.option_count(),
                &data.feature_schema,
                &package_params,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PhysicsClassifier { forests })
}

impl PhysicsClassifier {
    pub fn predict(&self, x: &[f64]) -> PhysicsConfig {
        let mut options = [0usize; 4];
        for (slot, forest) in self.forests.iter().enumerate() {
            options[slot] = forest.predict_class(x);
        }
        PhysicsConfig::from_option_indices(options).expect("class counts match option counts")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&[f64]]) -> Table {
        Table::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn full(n_features: usize) -> ForestParams {
        ForestParams {
            n_trees: 1,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: Some(n_features),
            seed: 1,
            bootstrap: false,
        }
    }

    #[test]
    fn step_data_splits_at_midpoint() {
        let x = table(&[&[0.0], &[1.0], &[2.0], &[3.0]]);
        let y = table(&[&[0.0], &[0.0], &[1.0], &[1.0]]);
        let split = best_split(&x, &y, &[0, 1, 2, 3], &[0], 1).unwrap();
        assert_eq!(split.threshold, 1.5);
        assert_eq!(split.sse, 0.0);
        let tree = fit_tree(&x, &y, &full(1), 0).unwrap();
        assert_eq!(
            tree,
            TreeNode::Split {
                feature: 0,
                threshold: 1.5,
                left: Box::new(TreeNode::Leaf { value: vec![0.0] }),
                right: Box::new(TreeNode::Leaf { value: vec![1.0] }),
            }
        );
    }

    #[test]
    fn constant_target_is_one_leaf() {
        let x = table(&[&[0.0, 5.0], &[1.0, 2.0], &[2.0, 9.0]]);
        let y = table(&[&[4.2], &[4.2], &[4.2]]);
        let forest = fit_forest(&x, &y, &["a".into(), "b".into()], &ForestParams::default()).unwrap();
        for tree in &forest.trees {
            assert_eq!(tree, &TreeNode::Leaf { value: vec![4.2] });
        }
        assert!((forest.predict(&[0.5, 0.5])[0] - 4.2).abs() < 1e-12);
    }

    #[test]
    fn min_leaf_equal_to_n_gives_mean() {
        let x = table(&[&[0.0], &[1.0], &[2.0]]);
        let y = table(&[&[1.0], &[2.0], &[6.0]]);
        let tree = fit_tree(&x, &y, &ForestParams { min_samples_leaf: 3, ..full(1) }, 0).unwrap();
        assert_eq!(tree, TreeNode::Leaf { value: vec![3.0] });
    }

    #[test]
    fn empty_data_rejected() {
        let x = Table::new(2);
        let y = Table::new(1);
        assert!(matches!(fit_tree(&x, &y, &full(2), 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn averaging_over_trees() {
        let forest = Forest {
            trees: vec![
                TreeNode::Leaf { value: vec![1.0] },
                TreeNode::Leaf { value: vec![3.0] },
            ],
            params: ForestParams::default(),
            schema_fingerprint: String::new(),
            n_features: 1,
            n_targets: 1,
        };
        assert_eq!(forest.predict(&[0.0]), vec![2.0]);
    }

    #[test]
    fn single_unbootstrapped_tree_equals_fit_tree() {
        let x = table(&[&[0.3, 1.0], &[0.1, 2.0], &[0.7, 0.5], &[0.9, 0.1], &[0.5, 0.6]]);
        let y = table(&[&[1.0], &[0.0], &[2.0], &[3.0], &[1.5]]);
        let params = ForestParams { min_samples_leaf: 1, ..full(2) };
        let forest = fit_forest(&x, &y, &["a".into(), "b".into()], &params).unwrap();
        let (_, tree_seed) = tree_sample(&params, 5, 0);
        assert_eq!(forest.trees[0], fit_tree(&x, &y, &params, tree_seed).unwrap());
    }

    #[test]
    fn depth_limit_respected() {
        let rows: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64]).collect();
        let x = Table::from_rows(&rows).unwrap();
        let y = Table::from_rows(&(0..64).map(|i| vec![(i * i) as f64]).collect::<Vec<_>>()).unwrap();
        let tree = fit_tree(&x, &y, &ForestParams { max_depth: Some(3), ..full(1) }, 0).unwrap();
        assert_eq!(tree.depth(), 3);
        assert_eq!(tree.leaf_count(), 8);
    }

    #[test]
    fn separable_classes_fit_perfectly() {
        let x = table(&[&[0.1], &[0.2], &[0.4], &[0.6], &[0.8], &[0.9]]);
        let labels = [0, 0, 0, 1, 1, 1];
        let forest = fit_classifier(&x, &labels, 2, &["a".into()], &full(1)).unwrap();
        for (r, &l) in labels.iter().enumerate() {
            assert_eq!(forest.predict_class(x.row(r)), l);
        }
        assert_eq!(forest.trees[0].depth(), 1);
    }

    #[test]
    fn constant_package_label_always_predicted() {
        use crate::dataset::{physics_schema, RowKey};
        let configs: Vec<PhysicsConfig> = PhysicsConfig::all()
            .filter(|c| c.option(Package::Forcing) == 2)
            .collect();
        let mut features = Table::new(5);
        for (i, _) in configs.iter().enumerate() {
            let v = i as f64;
            features.push(&[v, -v, v * 2.0, v * 0.1, v.sqrt()]).unwrap();
        }
        let data = PhysicsDataset {
            features,
            keys: configs
                .iter()
                .map(|c| RowKey { config_index: c.index(), window_id: 0, point: None })
                .collect(),
            targets: configs,
            feature_schema: physics_schema(),
        };
        let model = fit_physics_classifier(&data, &ForestParams::default()).unwrap();
        for probe in [[0.0; 5], [100.0, -3.0, 2.0, 0.0, 1.0], [-5.0; 5]] {
            assert_eq!(model.predict(&probe).option(Package::Forcing), 2);
        }
    }

    #[test]
    fn json_round_trip_predicts_identically() {
        let x = table(&[&[0.3, 1.0], &[0.1, 2.0], &[0.7, 0.5], &[0.9, 0.1], &[0.5, 0.6], &[0.2, 0.2]]);
        let y = table(&[&[1.0], &[0.0], &[2.0], &[3.0], &[1.5], &[0.25]]);
        let params = ForestParams { min_samples_leaf: 1, ..ForestParams::default() };
        let forest = fit_forest(&x, &y, &["a".into(), "b".into()], &params).unwrap();
        let back: Forest = serde_json::from_str(&serde_json::to_string(&forest).unwrap()).unwrap();
        for probe in [[0.0, 0.0], [0.35, 0.8], [1.0, 3.0]] {
            assert_eq!(forest.predict(&probe), back.predict(&probe));
        }
        assert!(back.check_schema(&["a".into(), "b".into()]).is_ok());
        assert!(back.check_schema(&["b".into(), "a".into()]).is_err());
    }
}
