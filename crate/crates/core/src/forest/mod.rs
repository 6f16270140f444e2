//! Random forest classifier with bootstrap bookkeeping.
//!
//! Every tree remembers how many times each training row was drawn, which is
//! what the out-of-bag sets and the proximity computation are built from.

mod proximity;
mod tree;
mod tune;

use std::path::Path;

use ndarray::ArrayView2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::seed;

pub use proximity::{gap_proximities, gap_proximities_to, ProximityMatrix};
pub use tree::{Node, NodeKind, Tree};
pub use tune::{grid_search_cv, GridResult, GridScore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    /// `None` grows trees until leaves are pure.
    pub max_depth: Option<usize>,
}

impl ForestParams {
    pub fn new(n_estimators: usize, max_depth: Option<usize>) -> Self {
        ForestParams { n_estimators, max_depth }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
    /// `oob_sets[i]` lists the trees (ascending) in which row i was not drawn.
    oob_sets: Vec<Vec<u32>>,
    params: ForestParams,
    seed: u64,
    n_features: usize,
    n_classes: usize,
}

const FORMAT_NAME: &str = "catclust-forest";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    forest: T,
}

pub fn fit_forest(ds: &Dataset, params: ForestParams, seed: u64) -> Result<Forest> {
    fit_forest_xy(ds.x().view(), ds.y(), ds.n_classes(), params, seed)
}

pub fn fit_forest_xy(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    params: ForestParams,
    seed: u64,
) -> Result<Forest> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("cannot fit a forest on zero rows".into()));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if params.n_estimators == 0 {
        return Err(Error::InvalidInput("n_estimators must be at least 1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forest input contains NaN or infinity".into()));
    }
    if y.iter().any(|&c| c >= n_classes) {
        return Err(Error::InvalidInput("label out of range".into()));
    }
    let distinct = {
        let mut seen = vec![false; n_classes];
        y.iter().for_each(|&c| seen[c] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        log::warn!("fitting a forest on a single-class dataset; every tree is one leaf");
    }
    let x = x.as_standard_layout();
    let p = x.ncols();
    let grow = tree::GrowParams {
        max_depth: params.max_depth,
        max_features: ((p as f64).sqrt().ceil() as usize).max(1),
        n_classes,
    };
    let trees: Vec<Tree> = (0..params.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed::derive_seed(seed, t as u64));
            let mut multiplicity = vec![0u32; n];
            for _ in 0..n {
                multiplicity[rng.random_range(0..n)] += 1;
            }
            Tree::grow(x.view(), y, multiplicity, &grow, &mut rng)
        })
        .collect();
    Ok(Forest::assemble(trees, params, seed, p, n_classes))
}

/// Fit, and if some row is in-bag for every tree, grow the ensemble by half
/// and refit (at most three times) so every row gets proximities.
pub fn fit_forest_with_oob_coverage(ds: &Dataset, params: ForestParams, seed: u64) -> Result<Forest> {
    let mut current = params;
    for attempt in 0..=3 {
        let forest = fit_forest(ds, current, seed)?;
        let uncovered = forest.rows_without_oob();
        if uncovered.is_empty() {
            return Ok(forest);
        }
        if attempt == 3 {
            return Err(Error::NoOutOfBag {
                count: uncovered.len(),
                first: uncovered[0],
            });
        }
        let next = current.n_estimators + current.n_estimators.div_ceil(2);
        log::warn!(
            "{} rows never out-of-bag with {} trees; refitting with {}",
            uncovered.len(),
            current.n_estimators,
            next
        );
        current.n_estimators = next;
    }
    unreachable!()
}

impl Forest {
    /// Build a forest from already-grown trees, e.g. hand-made fixtures.
    pub fn from_trees(trees: Vec<Tree>, n_features: usize, n_classes: usize) -> Result<Forest> {
        if trees.is_empty() {
            return Err(Error::InvalidInput("forest needs at least one tree".into()));
        }
        let n = trees[0].multiplicity().len();
        if trees.iter().any(|t| t.multiplicity().len() != n) {
            return Err(Error::InvalidInput("trees disagree on training size".into()));
        }
        let params = ForestParams::new(trees.len(), None);
        Ok(Forest::assemble(trees, params, 0, n_features, n_classes))
    }

    fn assemble(trees: Vec<Tree>, params: ForestParams, seed: u64, n_features: usize, n_classes: usize) -> Forest {
        let n = trees[0].multiplicity().len();
        let mut oob_sets = vec![Vec::new(); n];
        for (t, tree) in trees.iter().enumerate() {
            for (i, &m) in tree.multiplicity().iter().enumerate() {
                if m == 0 {
                    oob_sets[i].push(t as u32);
                }
            }
        }
        Forest {
            trees,
            oob_sets,
            params,
            seed,
            n_features,
            n_classes,
        }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn oob_sets(&self) -> &[Vec<u32>] {
        &self.oob_sets
    }

    pub fn params(&self) -> ForestParams {
        self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_train(&self) -> usize {
        self.oob_sets.len()
    }

    pub fn rows_without_oob(&self) -> Vec<usize> {
        (0..self.oob_sets.len()).filter(|&i| self.oob_sets[i].is_empty()).collect()
    }

    fn vote(&self, row: &[f64], trees: impl Iterator<Item = usize>) -> usize {
        let mut votes = vec![0u32; self.n_classes];
        for t in trees {
            votes[self.trees[t].predict_row(row)] += 1;
        }
        tree::argmax_lowest(&votes)
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        if x.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        let x = x.as_standard_layout();
        Ok(x
            .rows()
            .into_iter()
            .map(|r| self.vote(r.as_slice().expect("standard layout"), 0..self.trees.len()))
            .collect())
    }

    /// Accuracy of out-of-bag votes over rows that are out-of-bag somewhere.
    pub fn oob_accuracy(&self, x: ArrayView2<'_, f64>, y: &[usize]) -> Result<f64> {
        if x.nrows() != self.n_train() || y.len() != self.n_train() {
            return Err(Error::DimensionMismatch {
                expected: self.n_train(),
                got: x.nrows(),
            });
        }
        let x = x.as_standard_layout();
        let mut correct = 0usize;
        let mut counted = 0usize;
        for (i, r) in x.rows().into_iter().enumerate() {
            if self.oob_sets[i].is_empty() {
                continue;
            }
            counted += 1;
            let pred = self.vote(r.as_slice().expect("standard layout"), self.oob_sets[i].iter().map(|&t| t as usize));
            if pred == y[i] {
                correct += 1;
            }
        }
        if counted == 0 {
            return Err(Error::NoOutOfBag { count: self.n_train(), first: 0 });
        }
        Ok(correct as f64 / counted as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        let env = Envelope {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            forest: self,
        };
        Ok(serde_json::to_string(&env)?)
    }

    pub fn from_json(text: &str) -> Result<Forest> {
        let env: Envelope<Forest> = serde_json::from_str(text)?;
        if env.format != FORMAT_NAME || env.version != FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported forest format {} v{}",
                env.format, env.version
            )));
        }
        Ok(env.forest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Forest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Forest::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn blobs() -> (Array2<f64>, Vec<usize>) {
        let mut rng = seed::rng(7);
        let mut x = Array2::zeros((60, 3));
        let mut y = Vec::new();
        for i in 0..60 {
            let c = i % 3;
            for j in 0..3 {
                x[[i, j]] = c as f64 * 4.0 + rng.random::<f64>();
            }
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn bootstrap_multiplicities_sum_to_n() {
        let (x, y) = blobs();
        let f = fit_forest_xy(x.view(), &y, 3, ForestParams::new(8, None), 1).unwrap();
        for t in f.trees() {
            assert_eq!(t.multiplicity().iter().sum::<u32>() as usize, 60);
        }
        for (i, s) in f.oob_sets().iter().enumerate() {
            for (t, tree) in f.trees().iter().enumerate() {
                assert_eq!(s.contains(&(t as u32)), tree.multiplicity()[i] == 0);
            }
        }
    }

    #[test]
    fn memorizes_training_data() {
        let (x, y) = blobs();
        let f = fit_forest_xy(x.view(), &y, 3, ForestParams::new(25, None), 3).unwrap();
        assert_eq!(f.predict(x.view()).unwrap(), y);
    }

    #[test]
    fn single_tree_forest_matches_tree() {
        let (x, y) = blobs();
        let f = fit_forest_xy(x.view(), &y, 3, ForestParams::new(1, Some(2)), 5).unwrap();
        let preds = f.predict(x.view()).unwrap();
        for (i, r) in x.rows().into_iter().enumerate() {
            assert_eq!(preds[i], f.trees()[0].predict_row(r.as_slice().unwrap()));
        }
    }

    #[test]
    fn vote_tie_goes_to_lower_class() {
        let x = array![[0.0], [1.0]];
        let leaf = |c: Vec<u32>| Node {
            n_samples: c.iter().sum(),
            kind: NodeKind::Leaf { class_counts: c },
        };
        let t2 = Tree::from_parts(vec![leaf(vec![0, 0, 2])], vec![1, 1], x.view()).unwrap();
        let t0 = Tree::from_parts(vec![leaf(vec![2, 0, 0])], vec![1, 1], x.view()).unwrap();
        let f = Forest::from_trees(vec![t2, t0], 1, 3).unwrap();
        assert_eq!(f.predict(x.view()).unwrap(), vec![0, 0]);
    }

    #[test]
    fn deterministic_and_round_trips() {
        let (x, y) = blobs();
        let a = fit_forest_xy(x.view(), &y, 3, ForestParams::new(6, Some(4)), 11).unwrap();
        let b = fit_forest_xy(x.view(), &y, 3, ForestParams::new(6, Some(4)), 11).unwrap();
        assert_eq!(a, b);
        let back = Forest::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn rejects_bad_input() {
        let (x, y) = blobs();
        assert!(fit_forest_xy(x.view(), &y, 3, ForestParams::new(0, None), 0).is_err());
        let f = fit_forest_xy(x.view(), &y, 3, ForestParams::new(2, None), 0).unwrap();
        assert!(matches!(
            f.predict(Array2::zeros((2, 5)).view()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(Forest::from_json(r#"{"format":"other","version":1,"forest":null}"#).is_err());
    }
}
