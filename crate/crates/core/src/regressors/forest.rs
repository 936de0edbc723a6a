//! CART regression trees and bagged forests with mean-decrease-impurity
//! importances.
//!
//! Splits minimize squared error over every feature and every midpoint
//! between consecutive distinct sorted values. Ties go to the lowest feature
//! index, then the lowest threshold, so a tree is a deterministic function
//! of its bootstrap sample. Tree `t` draws its bootstrap from the ChaCha
//! stream `t` of the forest seed.

use ndarray::{ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_finite, Predictor, RegressorError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 10,
            max_depth: Some(15),
            min_samples_leaf: 1,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: f64,
        n_samples: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n_samples: usize,
        /// Weighted impurity decrease credited to `feature`.
        impurity_decrease: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
    /// Per-feature sum of weighted impurity decreases (unnormalized).
    pub importances: Vec<f64>,
}

impl RegressionTree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Depth of the deepest leaf (root alone has depth 0).
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_splits(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Split { .. }))
            .count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub params: ForestParams,
    pub n_features: usize,
    pub trees: Vec<RegressionTree>,
}

impl RandomForest {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>() / self.trees.len() as f64
    }
}

impl Predictor for RandomForest {
    fn n_inputs(&self) -> usize {
        self.n_features
    }

    fn n_outputs(&self) -> usize {
        1
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.predict_row(x);
    }
}

/// One forest per output column, sharing bootstrap samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestSet {
    pub forests: Vec<RandomForest>,
}

impl Predictor for ForestSet {
    fn n_inputs(&self) -> usize {
        self.forests.first().map_or(0, |f| f.n_features)
    }

    fn n_outputs(&self) -> usize {
        self.forests.len()
    }

    fn predict_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.forests) {
            *o = f.predict_row(x);
        }
    }
}

/// Mean decrease impurity: per-tree sums averaged over trees, then
/// normalized to sum to one (all zeros when no tree ever split).
pub fn forest_importances(forest: &RandomForest) -> Vec<f64> {
    let mut imp = vec![0.0; forest.n_features];
    for tree in &forest.trees {
        for (a, b) in imp.iter_mut().zip(&tree.importances) {
            *a += b;
        }
    }
    let n_trees = forest.trees.len().max(1) as f64;
    imp.iter_mut().for_each(|v| *v /= n_trees);
    let total: f64 = imp.iter().sum();
    if total > 0.0 {
        imp.iter_mut().for_each(|v| *v /= total);
    }
    imp
}

/// Column-major features with a global per-feature sort order.
struct Features {
    columns: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
}

impl Features {
    fn new(x: ArrayView2<'_, f64>) -> Self {
        let columns: Vec<Vec<f64>> = x.columns().into_iter().map(|c| c.to_vec()).collect();
        let order = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Features { columns, order }
    }
}

/// A tree's training sample: positions map to original rows, and every
/// feature has its positions presorted by value.
struct Sample {
    rows: Vec<u32>,
    sorted: Vec<Vec<u32>>,
}

impl Sample {
    fn draw(features: &Features, n: usize, bootstrap: bool, seed: u64, tree: usize) -> Self {
        let mut counts = vec![0u32; n];
        if bootstrap {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(tree as u64);
            for _ in 0..n {
                counts[rng.random_range(0..n)] += 1;
            }
        } else {
            counts.fill(1);
        }
        let mut start = vec![0u32; n];
        let mut rows = Vec::with_capacity(n);
        for (r, &c) in counts.iter().enumerate() {
            start[r] = rows.len() as u32;
            rows.extend(std::iter::repeat_n(r as u32, c as usize));
        }
        let sorted = features
            .order
            .iter()
            .map(|order| {
                let mut list = Vec::with_capacity(rows.len());
                for &r in order {
                    let r = r as usize;
                    list.extend(start[r]..start[r] + counts[r]);
                }
                list
            })
            .collect();
        Sample { rows, sorted }
    }
}

struct Builder<'a> {
    columns: &'a [Vec<f64>],
    rows: &'a [u32],
    /// Target value per sample position.
    y: Vec<f64>,
    max_depth: usize,
    min_leaf: usize,
    n_root: f64,
    nodes: Vec<Node>,
    importances: Vec<f64>,
    goes_left: Vec<bool>,
}

struct Candidate {
    feature: usize,
    below: f64,
    above: f64,
    score: f64,
}

impl Builder<'_> {
    fn x(&self, feature: usize, pos: u32) -> f64 {
        self.columns[feature][self.rows[pos as usize] as usize]
    }

    fn build(&mut self, sorted: Vec<Vec<u32>>, depth: usize) -> usize {
        let positions = &sorted[0];
        let n = positions.len();
        let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
        for &p in positions {
            let v = self.y[p as usize];
            sum += v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let index = self.nodes.len();
        let pure = lo == hi;
        let value = if pure { self.y[positions[0] as usize] } else { sum / n as f64 };
        self.nodes.push(Node::Leaf {
            value,
            n_samples: n,
        });
        if pure || depth >= self.max_depth || n < 2 * self.min_leaf {
            return index;
        }
        let Some(best) = self.best_split(&sorted, sum) else {
            return index;
        };

        let mid = best.below + (best.above - best.below) / 2.0;
        let threshold = if mid < best.above { mid } else { best.below };
        for &p in &sorted[best.feature] {
            self.goes_left[p as usize] = self.x(best.feature, p) <= threshold;
        }
        let decrease = (best.score - sum * sum / n as f64).max(0.0) / self.n_root;
        self.importances[best.feature] += decrease;

        let mut left = Vec::with_capacity(sorted.len());
        let mut right = Vec::with_capacity(sorted.len());
        for list in sorted {
            let (l, r): (Vec<u32>, Vec<u32>) =
                list.into_iter().partition(|&p| self.goes_left[p as usize]);
            left.push(l);
            right.push(r);
        }
        let left = self.build(left, depth + 1);
        let right = self.build(right, depth + 1);
        self.nodes[index] = Node::Split {
            feature: best.feature,
            threshold,
            left,
            right,
            n_samples: n,
            impurity_decrease: decrease,
        };
        index
    }

    /// Maximizes `S_l²/n_l + S_r²/n_r`, equivalent to minimizing the
    /// children's summed squared error.
    fn best_split(&self, sorted: &[Vec<u32>], sum: f64) -> Option<Candidate> {
        let n = sorted[0].len();
        let mut best: Option<Candidate> = None;
        for (feature, list) in sorted.iter().enumerate() {
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                left_sum += self.y[list[i] as usize];
                let n_left = i + 1;
                if n_left < self.min_leaf {
                    continue;
                }
                if n - n_left < self.min_leaf {
                    break;
                }
                let below = self.x(feature, list[i]);
                let above = self.x(feature, list[i + 1]);
                if below == above {
                    continue;
                }
                let right_sum = sum - left_sum;
                let score = left_sum * left_sum / n_left as f64
                    + right_sum * right_sum / (n - n_left) as f64;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(Candidate {
                        feature,
                        below,
                        above,
                        score,
                    });
                }
            }
        }
        best
    }
}

fn fit_tree(features: &Features, sample: &Sample, y: ArrayView1<'_, f64>, params: &ForestParams) -> RegressionTree {
    let d = features.columns.len();
    let m = sample.rows.len();
    let mut builder = Builder {
        columns: &features.columns,
        rows: &sample.rows,
        y: sample.rows.iter().map(|&r| y[r as usize]).collect(),
        max_depth: params.max_depth.unwrap_or(usize::MAX),
        min_leaf: params.min_samples_leaf.max(1),
        n_root: m as f64,
        nodes: Vec::new(),
        importances: vec![0.0; d],
        goes_left: vec![false; m],
    };
    if d == 0 {
        let mean = builder.y.iter().sum::<f64>() / m as f64;
        return RegressionTree {
            nodes: vec![Node::Leaf {
                value: mean,
                n_samples: m,
            }],
            importances: Vec::new(),
        };
    }
    builder.build(sample.sorted.clone(), 0);
    RegressionTree {
        nodes: builder.nodes,
        importances: builder.importances,
    }
}

fn validate(x: ArrayView2<'_, f64>, n_targets: usize, params: &ForestParams) -> Result<(), RegressorError> {
    let n = x.nrows();
    if n < 2 {
        return Err(RegressorError::TooFewSamples { needed: 2, got: n });
    }
    if n != n_targets {
        return Err(RegressorError::Shape(format!("{n} rows vs {n_targets} targets")));
    }
    if params.n_trees == 0 {
        return Err(RegressorError::Shape("forest needs at least one tree".into()));
    }
    if n > u32::MAX as usize {
        return Err(RegressorError::Shape("too many samples".into()));
    }
    check_finite(x)
}

/// Fits one forest on a single target column.
pub fn forest_fit(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    params: &ForestParams,
) -> Result<RandomForest, RegressorError> {
    let y = ndarray::Array2::from_shape_vec((y.len(), 1), y.to_vec())
        .map_err(|e| RegressorError::Shape(e.to_string()))?;
    let mut set = fit_forests(x, y.view(), params)?;
    Ok(set.forests.remove(0))
}

/// Fits one forest per target column. Trees with the same index share a
/// bootstrap sample across targets. Parallel over (tree, target) pairs;
/// the result does not depend on the thread count.
pub fn fit_forests(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    params: &ForestParams,
) -> Result<ForestSet, RegressorError> {
    validate(x, y.nrows(), params)?;
    check_finite(y)?;
    let n = x.nrows();
    let features = Features::new(x);
    let samples: Vec<Sample> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| Sample::draw(&features, n, params.bootstrap, params.seed, t))
        .collect();
    let n_out = y.ncols();
    let trees: Vec<RegressionTree> = (0..n_out * params.n_trees)
        .into_par_iter()
        .map(|k| {
            let (out, t) = (k / params.n_trees, k % params.n_trees);
            fit_tree(&features, &samples[t], y.column(out), params)
        })
        .collect();
    let mut trees = trees.into_iter();
    let forests = (0..n_out)
        .map(|_| RandomForest {
            params: params.clone(),
            n_features: x.ncols(),
            trees: trees.by_ref().take(params.n_trees).collect(),
        })
        .collect();
    Ok(ForestSet { forests })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Axis};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, Just, ProptestConfig, Strategy};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn uniform(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(0.0..1.0))
    }

    fn r_squared(forest: &RandomForest, x: &Array2<f64>, y: &[f64]) -> f64 {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let (mut ss_res, mut ss_tot) = (0.0, 0.0);
        for (row, &t) in x.rows().into_iter().zip(y) {
            let p = forest.predict_row(&row.to_vec());
            ss_res += (p - t).powi(2);
            ss_tot += (t - mean).powi(2);
        }
        1.0 - ss_res / ss_tot
    }

    /// Brute-force best stump: every feature, every midpoint, SSE computed
    /// from scratch.
    fn exhaustive_stump(x: &Array2<f64>, y: &[f64]) -> (usize, f64) {
        let sse = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|a| (a - m).powi(2)).sum::<f64>()
        };
        let mut best = (usize::MAX, 0.0, f64::INFINITY);
        for f in 0..x.ncols() {
            let mut vals: Vec<f64> = x.column(f).to_vec();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let (l, r): (Vec<f64>, Vec<f64>) = (0..y.len())
                    .map(|i| (x[(i, f)] <= t, y[i]))
                    .fold((vec![], vec![]), |(mut l, mut r), (left, v)| {
                        if left { l.push(v) } else { r.push(v) }
                        (l, r)
                    });
                let cost = sse(&l) + sse(&r);
                if cost < best.2 - 1e-12 {
                    best = (f, t, cost);
                }
            }
        }
        (best.0, best.1)
    }

    #[test]
    fn step_function_is_fit_and_root_matches_exhaustive_search() {
        let x = uniform(300, 3, 11);
        let y: Vec<f64> = x.column(0).iter().map(|&v| if v > 0.4 { 1.0 } else { -1.0 }).collect();
        let forest = forest_fit(x.view(), &y, &ForestParams::default()).unwrap();
        assert!(r_squared(&forest, &x, &y) >= 0.99);

        let single = ForestParams {
            n_trees: 1,
            bootstrap: false,
            max_depth: Some(1),
            ..Default::default()
        };
        let stump = forest_fit(x.view(), &y, &single).unwrap();
        let (f, t) = exhaustive_stump(&x, &y);
        match &stump.trees[0].nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, f);
                assert!((threshold - t).abs() < 1e-12);
            }
            other => panic!("expected split, got {other:?}"),
        }
    }

    #[test]
    fn constant_target_gives_constant_forest() {
        let x = uniform(50, 4, 3);
        let y = vec![2.5; 50];
        let forest = forest_fit(x.view(), &y, &ForestParams::default()).unwrap();
        assert!(forest.trees.iter().all(|t| t.nodes.len() == 1));
        assert_eq!(forest.predict_row(&[0.3, 0.1, 0.9, 0.2]), 2.5);
        assert_eq!(forest_importances(&forest), vec![0.0; 4]);
    }

    #[test]
    fn single_split_credits_its_feature() {
        let x = ndarray::array![[0.0, 5.0], [0.0, 1.0], [1.0, 5.0], [1.0, 1.0]];
        let y = [0.0, 0.0, 1.0, 1.0];
        let params = ForestParams {
            n_trees: 1,
            bootstrap: false,
            ..Default::default()
        };
        let forest = forest_fit(x.view(), &y, &params).unwrap();
        assert_eq!(forest.trees[0].n_splits(), 1);
        assert_eq!(forest_importances(&forest), vec![1.0, 0.0]);
    }

    #[test]
    fn informative_feature_dominates() {
        let normal = Normal::new(0.0, 0.01).unwrap();
        let mut total = vec![0.0; 10];
        for seed in 0..5 {
            let x = uniform(400, 10, 100 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = x.column(3).iter().map(|&v| v + normal.sample(&mut rng)).collect();
            let params = ForestParams {
                seed,
                ..Default::default()
            };
            let imp = forest_importances(&forest_fit(x.view(), &y, &params).unwrap());
            total.iter_mut().zip(&imp).for_each(|(a, b)| *a += b / 5.0);
        }
        assert!(total[3] >= 0.9, "{total:?}");
    }

    #[test]
    fn additive_target_splits_importance_evenly() {
        let mut mean = [0.0, 0.0];
        for seed in 0..20 {
            let x = uniform(300, 2, 500 + seed);
            let y: Vec<f64> = x.rows().into_iter().map(|r| r[0] + r[1]).collect();
            let params = ForestParams {
                seed,
                ..Default::default()
            };
            let imp = forest_importances(&forest_fit(x.view(), &y, &params).unwrap());
            mean[0] += imp[0] / 20.0;
            mean[1] += imp[1] / 20.0;
        }
        assert!((mean[0] - 0.5).abs() < 0.1 && (mean[1] - 0.5).abs() < 0.1, "{mean:?}");
    }

    #[test]
    fn depth_limit_and_importance_normalization() {
        let x = uniform(200, 3, 9);
        let y: Vec<f64> = x.rows().into_iter().map(|r| (r[0] * 9.0).sin() + r[1]).collect();
        let params = ForestParams {
            max_depth: Some(4),
            ..Default::default()
        };
        let forest = forest_fit(x.view(), &y, &params).unwrap();
        assert!(forest.trees.iter().all(|t| t.depth() <= 4));
        let imp = forest_importances(&forest);
        assert!(imp.iter().all(|&v| v >= 0.0));
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let x = uniform(1, 2, 0);
        assert!(matches!(
            forest_fit(x.view(), &[1.0], &ForestParams::default()),
            Err(RegressorError::TooFewSamples { .. })
        ));
        let x = uniform(3, 2, 0);
        assert!(forest_fit(x.view(), &[1.0, 2.0], &ForestParams::default()).is_err());
    }

    #[test]
    fn serializes_to_json() {
        let x = uniform(30, 2, 1);
        let y: Vec<f64> = x.column(1).to_vec();
        let forest = forest_fit(x.view(), &y, &ForestParams { n_trees: 2, ..Default::default() }).unwrap();
        let json = serde_json::to_string(&forest).unwrap();
        let back: RandomForest = serde_json::from_str(&json).unwrap();
        assert_eq!(back.predict_row(&[0.2, 0.7]), forest.predict_row(&[0.2, 0.7]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn unbounded_tree_interpolates(seed in 0u64..10_000, n in 2usize..60) {
            let x = uniform(n, 3, seed);
            let y: Vec<f64> = uniform(n, 1, seed + 7).column(0).to_vec();
            let params = ForestParams { n_trees: 1, max_depth: None, bootstrap: false, ..Default::default() };
            let forest = forest_fit(x.view(), &y, &params).unwrap();
            for (row, &t) in x.rows().into_iter().zip(&y) {
                prop_assert_eq!(forest.predict_row(&row.to_vec()), t);
            }
        }

        #[test]
        fn importances_are_permutation_equivariant(
            seed in 0u64..10_000,
            perm in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle()
        ) {
            let x = uniform(200, 4, seed);
            let y: Vec<f64> = x.rows().into_iter().map(|r| 2.0 * r[0] + r[1] * r[2]).collect();
            // Shallow trees keep nodes large enough that no two features induce the same partition.
            let params = ForestParams { seed, n_trees: 3, max_depth: Some(2), min_samples_leaf: 20, ..Default::default() };
            let base = forest_importances(&forest_fit(x.view(), &y, &params).unwrap());
            let xp = x.select(Axis(1), &perm);
            let permuted = forest_importances(&forest_fit(xp.view(), &y, &params).unwrap());
            for (k, &src) in perm.iter().enumerate() {
                prop_assert!((permuted[k] - base[src]).abs() < 1e-12, "{:?} {:?}", base, permuted);
            }
        }

        #[test]
        fn fits_are_reproducible(seed in 0u64..10_000) {
            let x = uniform(60, 3, seed);
            let y: Vec<f64> = x.column(2).to_vec();
            let params = ForestParams { seed, n_trees: 4, ..Default::default() };
            let a = forest_fit(x.view(), &y, &params).unwrap();
            let b = forest_fit(x.view(), &y, &params).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
