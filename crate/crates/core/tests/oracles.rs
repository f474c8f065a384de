//! Checks against references computed independently of the solver: dense
//! sign scans, 50-digit roots (mpmath / sympy), NNLS from scipy, and the
//! eigenvalues of the reduced matrix from a general eigensolver.

use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use num_complex::Complex64;

use ebm_spectral::charpoly::eval_secular;
use ebm_spectral::experiments::ladder_model;
use ebm_spectral::model::{fit_prony, FitMode};
use ebm_spectral::rootfinder::{
    cluster_roots, limit_roots, matching_distance, reduced_matrix,
};
use ebm_spectral::{ExtraPair, ModeIndex, PronyModel, StretchedExponential};

fn k(k: u32) -> ModeIndex {
    ModeIndex::new(k).unwrap()
}

#[test]
fn limit_roots_match_dense_sign_scan() {
    const POINTS: usize = 1_000_000;
    for d in [0.5, 1.0, 5.0] {
        let m = ladder_model(5, d).unwrap();
        let a = limit_roots(&m).unwrap();
        let r = m.rates();
        for j in 0..5 {
            let lo = -r[j];
            // the top root can be positive but stays below sum(b) / D
            let hi = if j == 0 { m.weights().iter().sum::<f64>() / d + 1.0 } else { -r[j - 1] };
            let h = (hi - lo) / POINTS as f64;
            let mut crossings = Vec::new();
            let mut prev = eval_secular(&m, lo + 0.5 * h, None).unwrap();
            for i in 1..POINTS {
                let x = lo + (i as f64 + 0.5) * h;
                let v = eval_secular(&m, x, None).unwrap();
                if prev < 0.0 && v >= 0.0 {
                    crossings.push(x);
                }
                prev = v;
            }
            assert_eq!(crossings.len(), 1, "D = {d}, bracket {j}");
            assert!((crossings[0] - a.roots[j]).abs() <= h, "D = {d}, bracket {j}");
        }
    }
}

#[test]
fn limit_roots_match_high_precision() {
    // mpmath, 50 digits: roots of 5 - sum_i i / (x + 5 i)
    let want = [
        -4.738_130_947_463_284,
        -9.496_717_289_400_202,
        -14.317_942_839_128_19,
        -19.220_705_436_659_607,
        -24.226_503_487_348_72,
    ];
    let got = limit_roots(&ladder_model(5, 5.0).unwrap()).unwrap();
    for (g, w) in got.roots.iter().zip(want) {
        assert_abs_diff_eq!(*g, w, epsilon = 1e-12);
    }
}

#[test]
fn two_term_quartic_matches_sympy() {
    // sympy nroots(30) of l^4/25 + 3 l^3/5 + 3 l^2 + 15 l / 2
    let m = PronyModel::new(vec![5.0, 10.0], vec![2.5, 5.0], 1.0).unwrap();
    let c = cluster_roots(&m, k(3)).unwrap();
    assert_abs_diff_eq!(c.real_roots[0], 0.0, epsilon = 1e-14);
    assert_abs_diff_eq!(c.real_roots[1], -8.968_502_629_920_499, epsilon = 1e-12);
    let ExtraPair::Complex { p, q, .. } = c.extra else {
        panic!("expected a complex pair at k = 3")
    };
    assert_abs_diff_eq!(p, -3.015_748_685_039_750_7, epsilon = 1e-12);
    assert_abs_diff_eq!(q, 3.436_824_092_496_506_6, epsilon = 1e-12);
}

#[test]
fn relaxation_value_term_by_term() {
    // 0.5 e^{-0.5} + 0.5 e^{-1} at 20 digits
    let m = PronyModel::new(vec![5.0, 10.0], vec![2.5, 5.0], 1.0).unwrap();
    assert_abs_diff_eq!(m.relaxation_value(0.1).unwrap(), 0.487_205_050_442_037_9, epsilon = 1e-15);
}

#[test]
fn cluster_roots_are_matrix_eigenvalues() {
    for (n, d) in [(2, 1.0), (5, 0.5), (5, 5.0), (9, 1.0)] {
        let m = ladder_model(n, d).unwrap();
        for kk in [1, 2, 7, 25] {
            let a = reduced_matrix(&m, k(kk));
            let dim = a.dim();
            let dense = DMatrix::from_fn(dim, dim, |i, j| a.get(i, j));
            let eig: Vec<Complex64> = dense.complex_eigenvalues().iter().copied().collect();
            let roots = cluster_roots(&m, k(kk)).unwrap().all_roots();
            let dist = matching_distance(&roots, &eig).unwrap();
            let scale = dense.norm();
            assert!(dist < 1e-9 * scale, "N = {n}, D = {d}, k = {kk}: {dist:e}");
        }
    }
}

fn grid() -> Vec<f64> {
    (0..200).map(|i| 0.1 + 9.9 * i as f64 / 199.0).collect()
}

#[test]
fn least_squares_fit_on_fast_ladder_matches_scipy() {
    // scipy.optimize.nnls on the same design: all weight lands on r = 5 for
    // both ladders, so the larger ladder cannot do strictly better here.
    let target = StretchedExponential::new(1.0, 0.5).unwrap();
    let ladder = |n: usize| (1..=n).map(|i| 5.0 * i as f64).collect::<Vec<_>>();
    let two = fit_prony(&target, &ladder(2), &grid(), FitMode::LeastSquares, None).unwrap();
    let five = fit_prony(&target, &ladder(5), &grid(), FitMode::LeastSquares, None).unwrap();
    assert_abs_diff_eq!(two.residual_ss, 5.796_269_219_542_562_5, epsilon = 1e-9);
    assert_abs_diff_eq!(five.ladder_stiffness[0], 1.806_211_34, epsilon = 1e-8);
    assert!(five.residual_ss <= two.residual_ss * (1.0 + 1e-12));
    assert_eq!(five.pruned, vec![1, 2, 3, 4]);
    assert_eq!(five.model.n(), 1);
}

#[test]
fn least_squares_fit_improves_with_more_terms_on_slow_ladder() {
    let target = StretchedExponential::new(1.0, 0.5).unwrap();
    let ladder = |n: usize| (1..=n).map(|i| 0.2 * i as f64).collect::<Vec<_>>();
    let two = fit_prony(&target, &ladder(2), &grid(), FitMode::LeastSquares, None).unwrap();
    let five = fit_prony(&target, &ladder(5), &grid(), FitMode::LeastSquares, None).unwrap();
    assert_abs_diff_eq!(two.residual_ss, 0.160_593_212_507_170_15, epsilon = 1e-9);
    assert_abs_diff_eq!(five.residual_ss, 0.014_347_255_313_016_973, epsilon = 1e-9);
    assert!(five.residual_ss < two.residual_ss);
    assert_abs_diff_eq!(five.ladder_stiffness[0], 0.277_724_18, epsilon = 1e-7);
    assert_abs_diff_eq!(five.ladder_stiffness[4], 0.423_660_17, epsilon = 1e-7);
}
