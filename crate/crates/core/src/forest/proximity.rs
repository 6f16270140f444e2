use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Forest, NodeKind};
use crate::error::{Error, Result};

/// Dense proximity matrix. Row i holds the proximities of point i to every
/// training point; rows need not be symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProximityMatrix {
    k: Array2<f64>,
}

impl ProximityMatrix {
    pub fn new(k: Array2<f64>) -> Result<Self> {
        if k.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("proximities must be finite and nonnegative".into()));
        }
        Ok(ProximityMatrix { k })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.k
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.k
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    /// Sum of each row excluding its diagonal entry (for square matrices).
    pub fn off_diagonal_row_sums(&self) -> Vec<f64> {
        self.k
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum())
            .collect()
    }
}

/// Per tree, per leaf: the bagged rows in that leaf with their draw counts,
/// and the total number of draws in the leaf.
struct LeafTable {
    members: Vec<Vec<(u32, u32)>>,
    totals: Vec<u32>,
}

fn leaf_tables(forest: &Forest) -> Vec<LeafTable> {
    forest
        .trees()
        .par_iter()
        .map(|tree| {
            let n_nodes = tree.nodes().len();
            let mut members = vec![Vec::new(); n_nodes];
            let mut totals = vec![0u32; n_nodes];
            for (j, (&leaf, &c)) in tree.leaf_of().iter().zip(tree.multiplicity()).enumerate() {
                if c > 0 {
                    members[leaf as usize].push((j as u32, c));
                    totals[leaf as usize] += c;
                }
            }
            LeafTable { members, totals }
        })
        .collect()
}

/// GAP proximities among the training rows of `forest`.
///
/// For row i, each tree where i is out-of-bag contributes, for every bagged
/// row j sharing i's leaf, the share of the leaf's bootstrap draws that are
/// copies of j. Contributions are averaged over those trees. The diagonal is
/// zero. Fails if any row is in-bag for every tree.
pub fn gap_proximities(forest: &Forest) -> Result<ProximityMatrix> {
    let uncovered = forest.rows_without_oob();
    if let Some(&first) = uncovered.first() {
        return Err(Error::NoOutOfBag {
            count: uncovered.len(),
            first,
        });
    }
    let n = forest.n_train();
    let tables = leaf_tables(forest);
    let mut k = Array2::<f64>::zeros((n, n));
    k.as_slice_mut()
        .expect("fresh array is contiguous")
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            let oob = &forest.oob_sets()[i];
            for &t in oob {
                let t = t as usize;
                let leaf = forest.trees()[t].leaf_of()[i] as usize;
                let table = &tables[t];
                let total = table.totals[leaf] as f64;
                for &(j, c) in &table.members[leaf] {
                    row[j as usize] += c as f64 / total;
                }
            }
            let s = oob.len() as f64;
            row.iter_mut().for_each(|v| *v /= s);
            row[i] = 0.0;
        });
    Ok(ProximityMatrix { k })
}

/// Proximities from new points to the training rows. A new point is
/// out-of-bag for every tree, so all trees contribute.
pub fn gap_proximities_to(forest: &Forest, queries: ArrayView2<'_, f64>) -> Result<ProximityMatrix> {
    if queries.ncols() != forest.n_features() {
        return Err(Error::DimensionMismatch {
            expected: forest.n_features(),
            got: queries.ncols(),
        });
    }
    let n = forest.n_train();
    let m = queries.nrows();
    let q = queries.as_standard_layout();
    let tables = leaf_tables(forest);
    let n_trees = forest.trees().len() as f64;
    let mut k = Array2::<f64>::zeros((m, n));
    if n == 0 {
        return Ok(ProximityMatrix { k });
    }
    k.as_slice_mut()
        .expect("fresh array is contiguous")
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(qi, row)| {
            let point = q.row(qi);
            let point = point.as_slice().expect("standard layout");
            for (t, tree) in forest.trees().iter().enumerate() {
                let leaf = tree.apply(point);
                debug_assert!(matches!(tree.nodes()[leaf].kind, NodeKind::Leaf { .. }));
                let table = &tables[t];
                if table.totals[leaf] == 0 {
                    continue;
                }
                let total = table.totals[leaf] as f64;
                for &(j, c) in &table.members[leaf] {
                    row[j as usize] += c as f64 / total;
                }
            }
            row.iter_mut().for_each(|v| *v /= n_trees);
        });
    Ok(ProximityMatrix { k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{fit_forest_xy, ForestParams, Node, Tree};
    use ndarray::{array, Array2};
    use rand::Rng;

    /// Direct evaluation over all (i, t, j) triples, leaves found by routing
    /// each row down the tree rather than through stored assignments.
    fn brute_force(forest: &Forest, x: &Array2<f64>) -> Array2<f64> {
        let n = x.nrows();
        let mut k = Array2::zeros((n, n));
        for i in 0..n {
            let s_i: Vec<usize> = (0..forest.trees().len())
                .filter(|&t| forest.trees()[t].multiplicity()[i] == 0)
                .collect();
            for j in 0..n {
                if j == i {
                    continue;
                }
                let mut acc = 0.0;
                for &t in &s_i {
                    let tree = &forest.trees()[t];
                    let leaf_i = tree.apply(x.row(i).as_slice().unwrap());
                    let multiset: u32 = (0..n)
                        .filter(|&l| tree.apply(x.row(l).as_slice().unwrap()) == leaf_i)
                        .map(|l| tree.multiplicity()[l])
                        .sum();
                    let same = tree.apply(x.row(j).as_slice().unwrap()) == leaf_i;
                    if same && tree.multiplicity()[j] > 0 {
                        acc += tree.multiplicity()[j] as f64 / multiset as f64;
                    }
                }
                k[[i, j]] = acc / s_i.len() as f64;
            }
        }
        k
    }

    fn two_leaf_fixture() -> (Forest, Array2<f64>) {
        // Rows 0..3 fall left, row 3 right. Row 0 is out-of-bag; the left
        // leaf holds draws {1, 1, 2}.
        let x = array![[0.0], [0.1], [0.2], [1.0]];
        let nodes = vec![
            Node {
                n_samples: 4,
                kind: NodeKind::Split { feature: 0, threshold: 0.5, left: 1, right: 2 },
            },
            Node { n_samples: 3, kind: NodeKind::Leaf { class_counts: vec![3, 0] } },
            Node { n_samples: 1, kind: NodeKind::Leaf { class_counts: vec![0, 1] } },
        ];
        let tree = Tree::from_parts(nodes, vec![0, 2, 1, 1], x.view()).unwrap();
        (Forest::from_trees(vec![tree], 1, 2).unwrap(), x)
    }

    #[test]
    fn hand_fixture_values() {
        let (forest, x) = two_leaf_fixture();
        // Rows 1..3 are never out-of-bag in a one-tree forest.
        assert!(matches!(gap_proximities(&forest), Err(Error::NoOutOfBag { count: 3, first: 1 })));
        let brute = brute_force(&forest, &x);
        assert_eq!(brute[[0, 1]], 2.0 / 3.0);
        assert_eq!(brute[[0, 2]], 1.0 / 3.0);
        assert_eq!(brute[[0, 3]], 0.0);
    }

    #[test]
    fn matches_brute_force_on_small_forests() {
        let mut rng = crate::seed::rng(42);
        for trial in 0..30 {
            let n = rng.random_range(6..=12);
            let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>());
            let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let n_trees = rng.random_range(2..=3);
            let forest = fit_forest_xy(x.view(), &y, 2, ForestParams::new(n_trees, None), trial).unwrap();
            let Ok(k) = gap_proximities(&forest) else { continue };
            assert_eq!(k.matrix(), &brute_force(&forest, &x));
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let mut rng = crate::seed::rng(1);
        let x = Array2::from_shape_fn((80, 3), |_| rng.random::<f64>());
        let y: Vec<usize> = (0..80).map(|i| i % 3).collect();
        let forest = fit_forest_xy(x.view(), &y, 3, ForestParams::new(40, Some(3)), 9).unwrap();
        let k = gap_proximities(&forest).unwrap();
        for s in k.off_diagonal_row_sums() {
            assert!((s - 1.0).abs() < 1e-8);
        }
        let out = gap_proximities_to(&forest, x.view()).unwrap();
        for r in out.matrix().rows() {
            assert!((r.sum() - 1.0).abs() < 1e-8);
        }
    }
}
