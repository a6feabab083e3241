use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use xrfm::data::{
    encode, read_csv, split_indices, standardize, synth_local_features, synth_single_index, CategoricalTransform,
    ColumnKind, SchemaHints, Standardizer,
};
use xrfm::kernels::{kernel_matrix, KernelSpec, NormMode};
use xrfm::leaf_rfm::{compute_agop, fit_leaf_rfm, LeafHyperparams, Task};
use xrfm::linalg::{cholesky_solve, pairwise_norms, psd_power, sym_eigh, Matrix};
use xrfm::metrics::{minmax_normalize, nrmse, sgm};
use xrfm::tree::{tree_partition, LeafRows, TreeNode, TreeParams};
use xrfm::tuning::{ParamDistribution, SearchSpace};

fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn cholesky_recovers_solution(seed in any::<u64>(), n in 2usize..25, log_cond in 0.0f64..6.0) {
        // A = Q diag(λ) Qᵀ with λ spread over the requested condition number
        let q = sym_eigh(&{
            let g = gaussian(n, n, seed);
            let mut s = g.matmul(&g.transpose()).unwrap();
            for i in 0..n { s[(i, i)] += 1.0; }
            s
        }).unwrap().eigenvectors;
        let lambda: Vec<f64> = (0..n).map(|i| 10f64.powf(-log_cond * i as f64 / (n - 1) as f64)).collect();
        let a = q.matmul(&Matrix::from_diag(&lambda)).unwrap().matmul(&q.transpose()).unwrap();
        let x0 = gaussian(n, 2, seed ^ 1);
        let b = a.matmul(&x0).unwrap();
        let x = cholesky_solve(&a, &b).unwrap();
        let rel = x.max_abs_diff(&x0) / x0.max_abs();
        prop_assert!(rel < 1e-7, "relative error {rel}");
    }

    #[test]
    fn eigenvalues_sum_to_trace(seed in any::<u64>(), n in 1usize..20) {
        let g = gaussian(n, n, seed);
        let m = g.matmul(&g.transpose()).unwrap();
        let eig = sym_eigh(&m).unwrap();
        let sum: f64 = eig.eigenvalues.iter().sum();
        prop_assert!((sum - m.trace()).abs() <= 1e-9 * m.trace().abs().max(1.0));
        prop_assert!(eig.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn psd_power_one_is_identity_map(seed in any::<u64>(), n in 1usize..15, rank in 1usize..15) {
        let g = gaussian(n, rank, seed);
        let m = g.matmul(&g.transpose()).unwrap();
        let p = psd_power(&m, 1.0).unwrap();
        prop_assert!(p.max_abs_diff(&m) <= 1e-10 * m.max_abs().max(1.0));
    }

    #[test]
    fn pairwise_norms_symmetric_zero_diagonal(seed in any::<u64>(), n in 1usize..20, q in 0.2f64..=2.0) {
        let x = gaussian(n, 4, seed);
        let d = pairwise_norms(&x, &x, q).unwrap();
        for i in 0..n {
            prop_assert_eq!(d[(i, i)], 0.0);
            for j in 0..n { prop_assert_eq!(d[(i, j)], d[(j, i)]); }
        }
    }

    #[test]
    fn kernel_matrix_symmetric_unit_diagonal(seed in any::<u64>(), p in 0.5f64..=2.0, product in any::<bool>(), l in 0.5f64..20.0) {
        let norm = if product { NormMode::Product } else { NormMode::Euclidean };
        let spec = KernelSpec::new(p, norm, l);
        let x = gaussian(12, 3, seed);
        let k = kernel_matrix(&spec, &x, &x).unwrap();
        for i in 0..12 {
            prop_assert!((k[(i, i)] - 1.0).abs() < 1e-15);
            for j in 0..12 {
                prop_assert_eq!(k[(i, j)], k[(j, i)]);
                prop_assert!(k[(i, j)] > 0.0 && k[(i, j)] <= 1.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(config(200))]

    #[test]
    fn kernel_matrices_are_psd(seed in any::<u64>(), p in 0.5f64..=2.0, product in any::<bool>()) {
        let norm = if product { NormMode::Product } else { NormMode::Euclidean };
        let spec = KernelSpec::new(p.max(0.5 + 1e-9), norm, 2.0);
        let x = gaussian(30, 4, seed);
        let k = kernel_matrix(&spec, &x, &x).unwrap();
        let min = *sym_eigh(&k).unwrap().eigenvalues.last().unwrap();
        prop_assert!(min >= -1e-8 * 30.0, "min eigenvalue {min}");
    }
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn agop_is_symmetric_psd(seed in any::<u64>(), diagonal in any::<bool>(), p in 1.0f64..=2.0) {
        let x = gaussian(60, 4, seed);
        let y = Matrix::from_fn(60, 1, |i, _| x[(i, 0)].sin() + x[(i, 1)] * x[(i, 2)]);
        let xv = gaussian(20, 4, seed ^ 7);
        let yv = Matrix::from_fn(20, 1, |i, _| xv[(i, 0)].sin() + xv[(i, 1)] * xv[(i, 2)]);
        let hyper = LeafHyperparams {
            kernel: KernelSpec::new(p, NormMode::Euclidean, 3.0),
            iterations: 3,
            diagonal,
            ..Default::default()
        };
        let model = fit_leaf_rfm(&x, &y, &xv, &yv, &hyper, Task::Regression).unwrap();
        let g = compute_agop(&model, &x).unwrap();
        prop_assert!(g.is_symmetric(1e-10));
        let min = *sym_eigh(&g).unwrap().eigenvalues.last().unwrap();
        prop_assert!(min >= -1e-8);

        // normalized feature matrix
        let m = model.feature_matrix.max_entry();
        prop_assert!((0.0..1.0).contains(&m) || model.best_iteration == 0);
        prop_assert!(model.agop.max_entry() < 1.0);

        // bookkeeping
        let best = model.val_errors.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(model.best_val_error, best);
        prop_assert_eq!(model.val_errors[model.best_iteration], best);
        let replay = model.predict(&xv).unwrap();
        let rmse = (replay.data().iter().zip(yv.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 20.0).sqrt();
        prop_assert!((rmse - best).abs() <= 1e-12 * best.max(1.0));
    }

    #[test]
    fn partition_invariants(seed in any::<u64>(), n in 20usize..300, c in 8usize..80) {
        let x = gaussian(n, 3, seed);
        let y = Matrix::from_fn(n, 1, |i, _| x[(i, 0)] * x[(i, 1)] + x[(i, 2)].cos());
        let params = TreeParams { max_leaf_size: c, split_samples: 120, ..Default::default() };
        let tree = tree_partition(&x, &y, &params, &KernelSpec::default()).unwrap();

        fn walk(node: &TreeNode<LeafRows>) -> Result<Vec<usize>, TestCaseError> {
            match node {
                TreeNode::Leaf(l) => Ok(l.rows.clone()),
                TreeNode::Internal(s) => {
                    let a = walk(&s.left)?;
                    let b = walk(&s.right)?;
                    prop_assert!(a.len().abs_diff(b.len()) <= 1);
                    prop_assert!(a.iter().all(|r| !b.contains(r)));
                    Ok([a, b].concat())
                }
            }
        }
        let mut all = walk(&tree)?;
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(tree.leaves().iter().all(|l| l.rows.len() <= c));
        let depth = if n <= c { 0 } else { (n as f64 / c as f64).log2().ceil() as usize };
        prop_assert_eq!(tree.depth(), depth);
        for leaf in tree.leaves() {
            for &i in &leaf.rows {
                prop_assert_eq!(tree.route(x.row(i)).path, leaf.path);
            }
        }
        let again = tree_partition(&x, &y, &params, &KernelSpec::default()).unwrap();
        prop_assert_eq!(again, tree);
    }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn standardization_is_reproducible(seed in any::<u64>(), n in 2usize..40, d in 1usize..6) {
        let mut x = gaussian(n, d, seed);
        for i in 0..n { x[(i, 0)] = x[(i, 0)] * 5.0 + 3.0; }
        let (z, stats) = standardize(&x);
        prop_assert_eq!(stats.apply(&x).unwrap(), z.clone());
        let again = Standardizer::fit(&x);
        prop_assert_eq!(again, stats);
        for j in 0..d {
            let col = z.column(j);
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!((var - 1.0).abs() < 1e-10 || var == 0.0);
        }
    }

    #[test]
    fn one_hot_spans_cover_categorical_columns(kinds in prop::collection::vec(0usize..4, 1..7), seed in any::<u64>()) {
        // kind 0 is numeric, k > 0 is categorical with up to k + 1 levels
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut text = kinds.iter().enumerate().map(|(j, _)| format!("c{j}")).collect::<Vec<_>>().join(",");
        text.push('\n');
        for _ in 0..15 {
            let row: Vec<String> = kinds.iter().map(|&k| if k == 0 {
                format!("{}", rng.gen_range(-5.0..5.0))
            } else {
                format!("L{}", rng.gen_range(0..=k))
            }).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        let table = read_csv(text.as_bytes(), None, &SchemaHints::default()).unwrap();
        let (x, spans) = encode(&table, CategoricalTransform::OneHot).unwrap();
        let cats: usize = table.schema.iter().filter(|c| matches!(c.kind, ColumnKind::Categorical { .. })).count();
        prop_assert_eq!(spans.len(), cats);
        let mut covered = vec![false; x.cols()];
        for s in &spans {
            for k in s.clone() {
                prop_assert!(!covered[k]);
                covered[k] = true;
            }
            for row in x.row_iter() {
                prop_assert_eq!(row[s.clone()].iter().sum::<f64>(), 1.0);
            }
        }
        let numeric = table.schema.iter().filter(|c| c.kind == ColumnKind::Numeric).count();
        prop_assert_eq!(covered.iter().filter(|c| !**c).count(), numeric);
    }

    #[test]
    fn splits_are_disjoint_and_complete(n in 1usize..300, a in 0.0f64..1.0, b in 0.0f64..1.0, seed in any::<u64>()) {
        let f0 = a;
        let f1 = (1.0 - a) * b;
        let f2 = 1.0 - f0 - f1;
        let parts = split_indices(n, None, [f0, f1, f2.max(0.0)], seed).unwrap();
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        let len = all.len();
        all.dedup();
        prop_assert_eq!(all.len(), len);
        prop_assert!(len <= n && len + 2 >= n);
    }

    #[test]
    fn generators_are_deterministic(seed in any::<u64>(), n in 1usize..50) {
        prop_assert_eq!(synth_local_features(n, seed), synth_local_features(n, seed));
        prop_assert_eq!(synth_single_index(n, 5, seed), synth_single_index(n, 5, seed));
    }

    #[test]
    fn sgm_properties(errors in prop::collection::vec(0.0f64..2.0, 1..10), k in 0usize..10, bump in 0.001f64..1.0, e in 0.0f64..3.0) {
        let k = k % errors.len();
        let mut worse = errors.clone();
        worse[k] += bump;
        prop_assert!(sgm(&worse, 0.01) > sgm(&errors, 0.01));
        let constant = vec![e; errors.len()];
        prop_assert!((sgm(&constant, 0.01) - (0.01 + e)).abs() <= 1e-12 * (1.0 + e));
    }

    #[test]
    fn nrmse_shift_invariant(y in prop::collection::vec(-10.0f64..10.0, 2..20), c in -100.0f64..100.0, seed in any::<u64>()) {
        let spread = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - y.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = y.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect();
        let shift = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<_>>();
        let a = nrmse(&y, &p).unwrap();
        let b = nrmse(&shift(&y), &shift(&p)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn minmax_hits_both_ends(values in prop::collection::vec(0.0f64..5.0, 2..8)) {
        let m: BTreeMap<String, f64> = values.iter().enumerate().map(|(i, v)| (format!("m{i}"), *v)).collect();
        let out = minmax_normalize(&m);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            prop_assert!(out.values().any(|&v| v == 0.0));
            prop_assert!(out.values().any(|&v| v == 1.0));
            prop_assert!(out.values().all(|&v| (0.0..=1.0).contains(&v)));
        } else {
            prop_assert!(out.values().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn sampled_values_lie_in_support(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for space in [SearchSpace::talent(), SearchSpace::metatest()] {
            for (name, dist) in &space.params {
                let v = dist.sample(&mut rng);
                prop_assert!(dist.contains(&v), "{name}: {v:?}");
            }
        }
        let d = ParamDistribution::uniform(-1.0, 1.0);
        prop_assert!(d.contains(&d.sample(&mut rng)));
    }
}
