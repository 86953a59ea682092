use kancal_core::calibration::{bin_stats, ece, mce, mean_confidence, smece, BinScheme, EvalSet};
use kancal_core::losses::{scale_logits, softmax};
use kancal_core::network::{Activation, Model, Shortcut};
use kancal_core::rng;
use kancal_core::spline::{build_knots, spline_eval, SplineSpec};
use kancal_core::Matrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

fn logits_strategy(max_n: usize, max_k: usize, scale: f64) -> impl Strategy<Value = (Matrix, Vec<usize>)> {
    (1..=max_n, 2..=max_k).prop_flat_map(move |(n, k)| {
        (
            proptest::collection::vec(-scale..scale, n * k),
            proptest::collection::vec(0..k, n),
        )
            .prop_map(move |(v, y)| (Matrix::from_vec(n, k, v).unwrap(), y))
    })
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ece_never_exceeds_mce((g, y) in logits_strategy(300, 8, 6.0), bins in 1usize..30) {
        let eval = EvalSet::from_logits(&g, y, 1.0).unwrap();
        let stats = bin_stats(&eval, bins, BinScheme::EqualWidth).unwrap();
        prop_assert!(ece(&stats) <= mce(&stats) + 1e-15);
    }

    #[test]
    fn accuracy_is_invariant_to_temperature((g, y) in logits_strategy(200, 10, 8.0), tau in 0.05f64..20.0) {
        let a = EvalSet::from_logits(&g, y.clone(), 1.0).unwrap().accuracy();
        let b = EvalSet::from_logits(&g, y, tau).unwrap().accuracy();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn confidence_falls_as_temperature_rises((g, _y) in logits_strategy(50, 6, 4.0), t in 0.1f64..5.0) {
        let rows: Vec<usize> = (0..g.rows()).collect();
        let distinct = (0..g.rows()).all(|i| g.row(i).iter().any(|&v| v != g.row(i)[0]));
        prop_assume!(distinct);
        let lo = mean_confidence(&g, &rows, t);
        let hi = mean_confidence(&g, &rows, t * 1.5);
        prop_assert!(hi < lo);
        let k = g.cols() as f64;
        prop_assert!(mean_confidence(&g, &rows, 1e6) - 1.0 / k < 1e-4);
    }

    #[test]
    fn smece_bandwidth_is_a_fixed_point((g, y) in logits_strategy(400, 5, 4.0)) {
        prop_assume!(g.rows() >= 20);
        let eval = EvalSet::from_logits(&g, y, 1.0).unwrap();
        let s = smece(&eval, None).unwrap();
        let n = g.rows() as f64;
        prop_assert!((0.0..=1.0).contains(&s.value));
        // Away from the bracket ends the bisection lands on the fixed point.
        if s.bandwidth > 1.0 / n && s.bandwidth < 1.0 {
            prop_assert!((s.value - s.bandwidth).abs() < 2.0 / 512.0, "{:?}", s);
        }
    }

    /// Gibbs variational inequality: `softmax(g / tau)` maximises
    /// `H(r) + E_r[g] / tau` over the simplex, so no distribution with an
    /// equal or larger expected logit has more entropy.
    #[test]
    fn tempered_softmax_is_max_entropy(seed in any::<u64>(), k in 2usize..8, tau in 0.1f64..5.0) {
        let mut r = rng::stream(seed, 0);
        let g: Vec<f64> = (0..k).map(|_| 3.0 * Distribution::<f64>::sample(&StandardNormal, &mut r)).collect();
        let q = softmax(&scale_logits(&Matrix::from_vec(1, k, g.clone()).unwrap(), tau).unwrap());
        let q = q.row(0);
        let bound = entropy(q) + dot(q, &g) / tau;
        for _ in 0..10_000 {
            let mut p: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut r)).collect();
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= s);
            prop_assert!(entropy(&p) + dot(&p, &g) / tau <= bound + 1e-12);
            if dot(&p, &g) >= dot(q, &g) {
                prop_assert!(entropy(&p) <= entropy(q) + 1e-12);
            }
        }
    }

    #[test]
    fn batch_rows_are_permutation_equivariant(seed in any::<u64>(), n in 2usize..12, kan in any::<bool>()) {
        let mut r = rng::stream(seed, 0);
        let model = if kan {
            let spec = SplineSpec::new(-1.0, 1.0, 5, 3).unwrap();
            Model::kan(&[3, 4, 2], spec, Shortcut::Silu, &mut r).unwrap()
        } else {
            Model::mlp(&[3, 5, 2], Activation::Gelu, &mut r).unwrap()
        };
        let x = Matrix::from_vec(n, 3, (0..3 * n).map(|_| r.random_range(-1.5..1.5)).collect()).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let y = model.predict(&x).unwrap();
        let yp = model.predict(&x.select_rows(&perm)).unwrap();
        prop_assert_eq!(yp, y.select_rows(&perm));
    }
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let m = (x.len() - 1) as f64 / 2.0;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - m) * (b - m)).sum();
    let var: f64 = rx.iter().map(|a| (a - m) * (a - m)).sum();
    cov / var
}

/// Coefficients with variance proportional to `s^2` give spline outputs
/// whose variance over the input range grows with the order `s = d + 1`.
#[test]
fn spline_output_variance_grows_with_order() {
    let mut r = rng::stream(17, 0);
    let orders: Vec<f64> = (2..=8).map(f64::from).collect();
    let mut variances = Vec::new();
    for s in 2..=8usize {
        let spec = SplineSpec::new(-1.0, 1.0, 5, s - 1).unwrap();
        let knots = build_knots(&spec).unwrap();
        let xs: Vec<f64> = (0..200).map(|_| r.random_range(-1.0..=1.0)).collect();
        let mut total = 0.0;
        for _ in 0..1000 {
            let c: Vec<f64> = (0..spec.num_basis())
                .map(|_| s as f64 * Distribution::<f64>::sample(&StandardNormal, &mut r))
                .collect();
            let ys: Vec<f64> = xs.iter().map(|&x| spline_eval(&c, &knots, x).unwrap()).collect();
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            total += ys.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / ys.len() as f64;
        }
        variances.push(total / 1000.0);
    }
    let rho = spearman(&orders, &variances);
    assert!(rho > 0.0, "rho = {rho}, variances = {variances:?}");
}
