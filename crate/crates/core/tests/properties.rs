use catclust::dataset::{preprocess, stratified_kfold, Dataset, PreprocessOptions};
use catclust::embed::diffusion_operator;
use catclust::forest::{fit_forest_xy, gap_proximities, ForestParams};
use catclust::kmeans::{inertia, kmeans, KMeansOptions};
use catclust::metrics::{
    calinski_harabasz, clustering_accuracy, contingency, davies_bouldin, external_scores, rand_ari_fm, silhouette,
    Metric,
};
use catclust::mmc::{mahalanobis_distance, MetricMatrix};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn labels(n: std::ops::Range<usize>, k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..k, n)
}

fn paired_labels() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (2usize..40).prop_flat_map(|n| (prop::collection::vec(0..4usize, n), prop::collection::vec(0..5usize, n)))
}

fn matrix(rows: std::ops::Range<usize>, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    rows.prop_flat_map(move |n| {
        prop::collection::vec(-10.0f64..10.0, n * cols)
            .prop_map(move |v| Array2::from_shape_vec((n, cols), v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn accuracy_is_rand_index((y, a) in paired_labels()) {
        let rand = rand_ari_fm(&contingency(&y, &a).unwrap()).rand;
        prop_assert_eq!(clustering_accuracy(&y, &a).unwrap(), rand);
    }

    #[test]
    fn external_scores_ignore_cluster_names((y, a) in paired_labels(), shift in 1usize..7) {
        let renamed: Vec<usize> = a.iter().map(|&c| (c + shift) % 5 + 10 * ((c + shift) / 5)).collect();
        let s1 = external_scores(&y, &a).unwrap();
        let s2 = external_scores(&y, &renamed).unwrap();
        for (m, v) in &s1 {
            prop_assert!((v - s2[m]).abs() < 1e-12, "{m}: {v} vs {}", s2[m]);
        }
    }

    #[test]
    fn symmetric_pair_scores((y, a) in paired_labels()) {
        let s1 = external_scores(&y, &a).unwrap();
        let s2 = external_scores(&a, &y).unwrap();
        for m in [Metric::Rand, Metric::AdjustedRand, Metric::FowlkesMallows, Metric::Nmi, Metric::VMeasure] {
            prop_assert!((s1[&m] - s2[&m]).abs() < 1e-12);
        }
    }

    #[test]
    fn external_scores_in_range((y, a) in paired_labels()) {
        for (m, v) in external_scores(&y, &a).unwrap() {
            prop_assert!(m.check(v).is_ok(), "{m} = {v}");
        }
    }

    #[test]
    fn folds_partition_rows(y in labels(20..80, 3), k in 2usize..5, seed in any::<u64>()) {
        let counts = (0..3).map(|c| y.iter().filter(|&&v| v == c).count());
        prop_assume!(counts.clone().all(|c| c == 0 || c >= k));
        prop_assume!(counts.filter(|&c| c > 0).count() >= 2);
        let x = Array2::from_shape_fn((y.len(), 1), |(i, _)| i as f64);
        let used: Vec<usize> = {
            let mut u = y.clone();
            u.sort();
            u.dedup();
            u
        };
        let y: Vec<usize> = y.iter().map(|v| used.iter().position(|u| u == v).unwrap()).collect();
        let ds = Dataset::from_numeric(x, y).unwrap();
        let plan = stratified_kfold(&ds, k, seed).unwrap();
        let again = stratified_kfold(&ds, k, seed).unwrap();
        prop_assert_eq!(&plan, &again);
        let mut seen = vec![0usize; ds.n()];
        for f in &plan.folds {
            for &i in &f.test {
                seen[i] += 1;
            }
            prop_assert_eq!(f.train.len() + f.test.len(), ds.n());
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn scaling_is_idempotent(x in matrix(3..30, 3)) {
        let n = x.nrows();
        prop_assume!(x.columns().into_iter().all(|c| {
            let m = c.mean().unwrap();
            c.iter().any(|v| (v - m).abs() > 1e-6)
        }));
        let ds = Dataset::from_numeric(x, (0..n).map(|i| i % 2).collect()).unwrap();
        let opts = PreprocessOptions { scale_numeric: true, one_hot: true, impute_zero: true };
        let once = preprocess(&ds, opts);
        let twice = preprocess(&once, opts);
        for (a, b) in once.x().iter().zip(twice.x()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn internal_metrics_rotation_invariant(x in matrix(8..30, 2), angle in 0.0..std::f64::consts::TAU, seed in any::<u64>()) {
        let r = kmeans(x.view(), 3, &KMeansOptions::default(), seed).unwrap();
        let (s, c) = angle.sin_cos();
        let rot = ndarray::array![[c, -s], [s, c]];
        let xr = x.dot(&rot);
        let a = &r.assignments;
        let close = |p: f64, q: f64| (p - q).abs() <= 1e-8 * (1.0 + p.abs());
        prop_assert!(close(silhouette(x.view(), a).unwrap(), silhouette(xr.view(), a).unwrap()));
        prop_assert!(close(davies_bouldin(x.view(), a).unwrap(), davies_bouldin(xr.view(), a).unwrap()));
        let ch = calinski_harabasz(x.view(), a).unwrap();
        if ch.is_finite() {
            prop_assert!(close(ch, calinski_harabasz(xr.view(), a).unwrap()));
        }
    }

    #[test]
    fn kmeans_result_invariants(x in matrix(5..40, 3), k in 1usize..5, seed in any::<u64>()) {
        let k = k.min(x.nrows());
        let r = kmeans(x.view(), k, &KMeansOptions::default(), seed).unwrap();
        let mut sizes = vec![0; k];
        for &a in &r.assignments {
            sizes[a] += 1;
        }
        prop_assert!(sizes.iter().all(|&s| s > 0));
        let recomputed = inertia(x.view(), r.centroids.view(), &r.assignments);
        prop_assert!((recomputed - r.inertia).abs() <= 1e-8 * (1.0 + r.inertia));
        prop_assert!(r.inertia_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-12));
        for (row, &a) in x.rows().into_iter().zip(&r.assignments) {
            let d = |c: usize| row.iter().zip(r.centroids.row(c)).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
            let own = d(a);
            prop_assert!((0..k).all(|c| d(c) >= own - 1e-9));
        }
        prop_assert_eq!(kmeans(x.view(), k, &KMeansOptions::default(), seed).unwrap(), r);
    }

    #[test]
    fn mahalanobis_triangle_inequality(
        l in prop::collection::vec(-2.0f64..2.0, 9),
        pts in prop::collection::vec(-5.0f64..5.0, 9),
    ) {
        let l = Array2::from_shape_vec((3, 3), l).unwrap();
        let m = MetricMatrix::from_matrix(l.t().dot(&l)).unwrap();
        let p = Array2::from_shape_vec((3, 3), pts).unwrap();
        let d = |i: usize, j: usize| mahalanobis_distance(&m, p.row(i), p.row(j)).unwrap();
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-9);
        prop_assert!((d(0, 1) - d(1, 0)).abs() < 1e-12);
        prop_assert_eq!(d(1, 1), 0.0);
    }

    #[test]
    fn diffusion_powers_stay_stochastic(v in prop::collection::vec(0.0f64..1.0, 36), t in 1usize..=64) {
        let a = Array2::from_shape_vec((6, 6), v).unwrap();
        let a = (&a + &a.t()) * 0.5;
        let op = diffusion_operator(a.view()).unwrap();
        for row in op.power(t).rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-8);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn proximity_rows_sum_to_one(x in matrix(20..50, 3), trees in 20usize..40, seed in any::<u64>()) {
        let n = x.nrows();
        let y: Vec<usize> = (0..n).map(|i| usize::from(x[[i, 0]] + x[[i, 1]] > 0.0)).collect();
        let forest = fit_forest_xy(x.view(), &y, 2, ForestParams::new(trees, None), seed).unwrap();
        prop_assume!(forest.rows_without_oob().is_empty());
        let prox = gap_proximities(&forest).unwrap();
        for s in prox.off_diagonal_row_sums() {
            prop_assert!((s - 1.0).abs() < 1e-8);
        }
        prop_assert!(prox.matrix().diag().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn mmc_transform_matches_metric_distance() {
    let m = MetricMatrix::from_matrix(ndarray::array![[2.0, 0.5], [0.5, 1.0]]).unwrap();
    let x = ndarray::array![[0.0, 1.0], [3.0, -1.0], [0.5, 0.5]];
    let t = catclust::mmc::transform_points(&m, x.view()).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let diff: Array1<f64> = &t.row(i) - &t.row(j);
            let e = diff.dot(&diff).sqrt();
            assert!((e - mahalanobis_distance(&m, x.row(i), x.row(j)).unwrap()).abs() < 1e-12);
        }
    }
}
