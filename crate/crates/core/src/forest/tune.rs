use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{fit_forest_xy, ForestParams};
use crate::dataset::{Dataset, FoldPlan};
use crate::error::{Error, Result};
use crate::metrics::classification_scores;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub params: ForestParams,
    /// Weighted F1 on each fold's test rows.
    pub fold_scores: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: ForestParams,
    pub scores: Vec<GridScore>,
}

fn simpler_first(a: &ForestParams, b: &ForestParams) -> Ordering {
    let depth = |p: &ForestParams| p.max_depth.unwrap_or(usize::MAX);
    a.n_estimators.cmp(&b.n_estimators).then(depth(a).cmp(&depth(b)))
}

/// Cross-validated weighted F1 for every grid point. Fold f is fitted with
/// seed `derive_seed(seed, f)` regardless of grid point, so points are
/// compared on identical bootstrap streams.
pub fn grid_search_cv(ds: &Dataset, grid: &[ForestParams], folds: &FoldPlan, seed: u64) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("parameter grid is empty".into()));
    }
    if folds.folds.is_empty() {
        return Err(Error::InvalidInput("fold plan is empty".into()));
    }
    let mut ordered: Vec<ForestParams> = grid.to_vec();
    ordered.sort_by(simpler_first);
    ordered.dedup();

    let mut scores = Vec::with_capacity(ordered.len());
    for params in ordered {
        let mut fold_scores = Vec::with_capacity(folds.folds.len());
        for (f, fold) in folds.folds.iter().enumerate() {
            let train = ds.select_rows(&fold.train);
            let test = ds.select_rows(&fold.test);
            let forest = fit_forest_xy(
                train.x().view(),
                train.y(),
                ds.n_classes(),
                params,
                seed::derive_seed(seed, f as u64),
            )?;
            let pred = forest.predict(test.x().view())?;
            fold_scores.push(classification_scores(test.y(), &pred)?.weighted_f1);
        }
        let mean = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
        log::debug!(
            "grid point n_estimators={} max_depth={:?}: mean weighted F1 {mean:.4}",
            params.n_estimators,
            params.max_depth
        );
        scores.push(GridScore { params, fold_scores, mean });
    }
    let mut best = &scores[0];
    for s in &scores[1..] {
        if s.mean > best.mean {
            best = s;
        }
    }
    Ok(GridResult { best: best.params, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::stratified_kfold;
    use ndarray::Array2;
    use rand::Rng;

    fn noisy() -> Dataset {
        let mut rng = seed::rng(3);
        let n = 90;
        let x = Array2::from_shape_fn((n, 2), |(i, j)| {
            let c = (i % 3) as f64;
            if j == 0 { c + 0.8 * rng.random::<f64>() } else { rng.random::<f64>() }
        });
        Dataset::from_numeric(x, (0..n).map(|i| i % 3).collect()).unwrap()
    }

    #[test]
    fn single_point_grid() {
        let ds = noisy();
        let folds = stratified_kfold(&ds, 3, 0).unwrap();
        let p = ForestParams::new(5, Some(2));
        let r = grid_search_cv(&ds, &[p], &folds, 1).unwrap();
        assert_eq!(r.best, p);
        assert_eq!(r.scores[0].fold_scores.len(), 3);
    }

    #[test]
    fn stumps_lose_to_deeper_trees() {
        let ds = noisy();
        let folds = stratified_kfold(&ds, 3, 0).unwrap();
        let stump = ForestParams::new(10, Some(1));
        let deep = ForestParams::new(10, None);
        let r = grid_search_cv(&ds, &[stump, deep], &folds, 1).unwrap();
        let s: Vec<&GridScore> = r.scores.iter().collect();
        assert!(s.iter().all(|g| g.fold_scores.len() == 3));
        assert_eq!(r.best, deep);
    }

    #[test]
    fn ties_prefer_smaller_models() {
        let mut v = vec![
            ForestParams::new(10, None),
            ForestParams::new(10, Some(5)),
            ForestParams::new(5, None),
        ];
        v.sort_by(simpler_first);
        assert_eq!(v[0], ForestParams::new(5, None));
        assert_eq!(v[1], ForestParams::new(10, Some(5)));
        assert!(grid_search_cv(&noisy(), &[], &stratified_kfold(&noisy(), 3, 0).unwrap(), 0).is_err());
    }
}
