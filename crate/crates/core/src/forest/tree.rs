//! CART classification tree grown on a bootstrap sample.
//!
//! Rows enter with their bootstrap multiplicity as an integer weight, so a
//! row drawn three times counts three times in every impurity sum.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        /// Bootstrap draws per class that landed in this leaf.
        class_counts: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Bootstrap draws reaching this node.
    pub n_samples: u32,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
    /// `multiplicity[j]` is how many times row j was drawn for this tree.
    multiplicity: Vec<u32>,
    /// Leaf node index of every training row, bagged or not.
    leaf_of: Vec<u32>,
}

pub(crate) struct GrowParams {
    pub max_depth: Option<usize>,
    pub max_features: usize,
    pub n_classes: usize,
}

impl Tree {
    /// Assemble a tree from explicit parts. Leaf assignments for the
    /// training rows are recomputed from `x`.
    pub fn from_parts(nodes: Vec<Node>, multiplicity: Vec<u32>, x: ArrayView2<'_, f64>) -> Result<Tree> {
        if multiplicity.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: multiplicity.len(),
            });
        }
        if nodes.is_empty() {
            return Err(Error::InvalidInput("tree has no nodes".into()));
        }
        for node in &nodes {
            if let NodeKind::Split { left, right, feature, .. } = node.kind {
                if left as usize >= nodes.len() || right as usize >= nodes.len() || feature >= x.ncols() {
                    return Err(Error::InvalidInput("split references out of range".into()));
                }
            }
        }
        let mut tree = Tree {
            nodes,
            multiplicity,
            leaf_of: Vec::new(),
        };
        tree.leaf_of = x
            .rows()
            .into_iter()
            .map(|r| tree.apply(r.as_slice().expect("row-major rows")) as u32)
            .collect();
        Ok(tree)
    }

    pub(crate) fn grow<R: Rng>(
        x: ArrayView2<'_, f64>,
        y: &[usize],
        multiplicity: Vec<u32>,
        params: &GrowParams,
        rng: &mut R,
    ) -> Tree {
        let bagged: Vec<usize> = (0..x.nrows()).filter(|&i| multiplicity[i] > 0).collect();
        let mut grower = Grower {
            x,
            y,
            w: &multiplicity,
            params,
            nodes: Vec::new(),
            features: (0..x.ncols()).collect(),
        };
        grower.build(bagged, rng);
        let nodes = grower.nodes;
        let mut tree = Tree {
            nodes,
            multiplicity,
            leaf_of: Vec::new(),
        };
        tree.leaf_of = x
            .rows()
            .into_iter()
            .map(|r| tree.apply(r.as_slice().expect("row-major rows")) as u32)
            .collect();
        tree
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn multiplicity(&self) -> &[u32] {
        &self.multiplicity
    }

    pub fn leaf_of(&self) -> &[u32] {
        &self.leaf_of
    }

    pub fn is_out_of_bag(&self, row: usize) -> bool {
        self.multiplicity[row] == 0
    }

    /// Index of the leaf reached by `row`.
    pub fn apply(&self, row: &[f64]) -> usize {
        let mut idx = 0;
        loop {
            match &self.nodes[idx].kind {
                NodeKind::Leaf { .. } => return idx,
                NodeKind::Split { feature, threshold, left, right } => {
                    idx = if row[*feature] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    /// Majority class of the leaf reached by `row`; ties go to the lower id.
    pub fn predict_row(&self, row: &[f64]) -> usize {
        match &self.nodes[self.apply(row)].kind {
            NodeKind::Leaf { class_counts } => argmax_lowest(class_counts),
            NodeKind::Split { .. } => unreachable!("apply returns a leaf"),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i].kind {
                NodeKind::Leaf { .. } => 0,
                NodeKind::Split { left, right, .. } => {
                    1 + go(nodes, left as usize).max(go(nodes, right as usize))
                }
            }
        }
        go(&self.nodes, 0)
    }
}

pub(crate) fn argmax_lowest(counts: &[u32]) -> usize {
    let mut best = 0;
    for (c, &v) in counts.iter().enumerate() {
        if v > counts[best] {
            best = c;
        }
    }
    best
}

struct Grower<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [usize],
    w: &'a [u32],
    params: &'a GrowParams,
    nodes: Vec<Node>,
    features: Vec<usize>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Grower<'_> {
    fn class_counts(&self, rows: &[usize]) -> Vec<u32> {
        let mut counts = vec![0u32; self.params.n_classes];
        for &i in rows {
            counts[self.y[i]] += self.w[i];
        }
        counts
    }

    fn build<R: Rng>(&mut self, root_rows: Vec<usize>, rng: &mut R) {
        // (rows, depth, slot to patch in the parent)
        let mut stack: Vec<(Vec<usize>, usize, Option<(usize, bool)>)> = vec![(root_rows, 0, None)];
        while let Some((rows, depth, parent)) = stack.pop() {
            let counts = self.class_counts(&rows);
            let total: u32 = counts.iter().sum();
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let depth_reached = self.params.max_depth.is_some_and(|d| depth >= d);
            let split = if pure || depth_reached || total < 2 {
                None
            } else {
                self.best_split(&rows, &counts, rng)
            };
            let idx = self.nodes.len();
            if let Some((p, is_left)) = parent {
                if let NodeKind::Split { left, right, .. } = &mut self.nodes[p].kind {
                    if is_left {
                        *left = idx as u32;
                    } else {
                        *right = idx as u32;
                    }
                }
            }
            match split {
                None => self.nodes.push(Node {
                    n_samples: total,
                    kind: NodeKind::Leaf { class_counts: counts },
                }),
                Some(c) => {
                    let (l, r): (Vec<usize>, Vec<usize>) = rows
                        .iter()
                        .partition(|&&i| self.x[[i, c.feature]] <= c.threshold);
                    self.nodes.push(Node {
                        n_samples: total,
                        kind: NodeKind::Split {
                            feature: c.feature,
                            threshold: c.threshold,
                            left: 0,
                            right: 0,
                        },
                    });
                    // Right pushed first so the left subtree is laid out first.
                    stack.push((r, depth + 1, Some((idx, false))));
                    stack.push((l, depth + 1, Some((idx, true))));
                }
            }
        }
    }

    /// Visit features in random order, skipping ones constant within the
    /// node, until `max_features` informative features have been scored.
    fn best_split<R: Rng>(&mut self, rows: &[usize], counts: &[u32], rng: &mut R) -> Option<Candidate> {
        self.features.shuffle(rng);
        let mut evaluated = 0;
        let mut best: Option<Candidate> = None;
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        for fi in 0..self.features.len() {
            if evaluated == self.params.max_features {
                break;
            }
            let f = self.features[fi];
            order.clear();
            order.extend(rows.iter().map(|&i| (self.x[[i, f]], i)));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            if order[0].0 == order[order.len() - 1].0 {
                continue;
            }
            evaluated += 1;
            if let Some(c) = self.scan(f, &order, counts) {
                if best.as_ref().is_none_or(|b| c.score > b.score) {
                    best = Some(c);
                }
            }
        }
        best
    }

    /// Best Gini split along one sorted feature. The score is
    /// `sum_k l_k^2 / W_l + sum_k r_k^2 / W_r`; maximizing it minimizes the
    /// weighted child impurity.
    fn scan(&self, feature: usize, order: &[(f64, usize)], counts: &[u32]) -> Option<Candidate> {
        let k = counts.len();
        let mut left = vec![0f64; k];
        let right_total: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let total: f64 = right_total.iter().sum();
        let mut w_left = 0.0;
        let mut best: Option<Candidate> = None;
        for pos in 0..order.len() - 1 {
            let (v, i) = order[pos];
            let wi = self.w[i] as f64;
            left[self.y[i]] += wi;
            w_left += wi;
            let next = order[pos + 1].0;
            if next <= v {
                continue;
            }
            let w_right = total - w_left;
            let mut sl = 0.0;
            let mut sr = 0.0;
            for c in 0..k {
                let l = left[c];
                let r = right_total[c] - l;
                sl += l * l;
                sr += r * r;
            }
            let score = sl / w_left + sr / w_right;
            if best.as_ref().is_none_or(|b| score > b.score) {
                let mut threshold = 0.5 * (v + next);
                if threshold >= next {
                    threshold = v;
                }
                best = Some(Candidate { feature, threshold, score });
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn grow(x: &ndarray::Array2<f64>, y: &[usize], mult: Vec<u32>, depth: Option<usize>) -> Tree {
        let params = GrowParams {
            max_depth: depth,
            max_features: x.ncols(),
            n_classes: y.iter().max().unwrap() + 1,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        Tree::grow(x.view(), y, mult, &params, &mut rng)
    }

    #[test]
    fn memorizes_separable_data() {
        let x = array![[0.0, 1.0], [1.0, 0.0], [2.0, 1.0], [3.0, 0.0], [4.0, 1.0]];
        let y = [0, 1, 0, 1, 2];
        let tree = grow(&x, &y, vec![1; 5], None);
        for (i, row) in x.rows().into_iter().enumerate() {
            assert_eq!(tree.predict_row(row.as_slice().unwrap()), y[i]);
        }
    }

    #[test]
    fn threshold_is_midpoint() {
        let x = array![[1.0], [3.0]];
        let tree = grow(&x, &[0, 1], vec![1, 1], None);
        match tree.nodes()[0].kind {
            NodeKind::Split { threshold, .. } => assert_eq!(threshold, 2.0),
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn sample_counts_strictly_decrease_along_paths() {
        let x = array![[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]];
        let y = [0, 1, 0, 1, 0, 1];
        let tree = grow(&x, &y, vec![2, 0, 1, 1, 1, 1], None);
        assert_eq!(tree.nodes()[0].n_samples, 6);
        for node in tree.nodes() {
            if let NodeKind::Split { left, right, .. } = node.kind {
                assert!(tree.nodes()[left as usize].n_samples < node.n_samples);
                assert!(tree.nodes()[right as usize].n_samples < node.n_samples);
            }
        }
    }

    #[test]
    fn depth_limit_and_weights() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = [0, 1, 0, 1];
        let stump = grow(&x, &y, vec![1; 4], Some(1));
        assert!(stump.depth() <= 1);
        // Row 0 drawn three times dominates a depth-0 leaf.
        let root_only = grow(&x, &y, vec![3, 1, 0, 1], Some(0));
        assert_eq!(root_only.predict_row(&[10.0]), 0);
        assert!(root_only.is_out_of_bag(2));
    }

    #[test]
    fn tie_goes_to_lower_class() {
        assert_eq!(argmax_lowest(&[2, 5, 5]), 1);
        assert_eq!(argmax_lowest(&[0, 0]), 0);
    }
}
