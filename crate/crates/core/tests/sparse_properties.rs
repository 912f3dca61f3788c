//! Randomised checks of the sparse solvers against independent oracles.

#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sindy_core::sparse_opt::{solve, OptimizerSpec};

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

fn random_matrix(rng: &mut ChaCha8Rng, k: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, p, |_, _| gaussian(rng))
}

/// Least squares through the normal equations, solved by Gaussian elimination
/// with partial pivoting.
fn normal_equations(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let p = a.ncols();
    let mut m = vec![vec![0.0; p + 1]; p];
    for i in 0..p {
        for j in 0..p {
            m[i][j] = a.column(i).dot(&a.column(j));
        }
        m[i][p] = a.column(i).dot(b);
    }
    for c in 0..p {
        let piv = (c..p).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, piv);
        for r in c + 1..p {
            let f = m[r][c] / m[c][c];
            for k in c..=p {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    let mut x = vec![0.0; p];
    for r in (0..p).rev() {
        let s: f64 = (r + 1..p).map(|k| m[r][k] * x[k]).sum();
        x[r] = (m[r][p] - s) / m[r][r];
    }
    DVector::from_vec(x)
}

#[test]
fn stlsq_returns_a_thresholded_least_squares_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let (k, p, n) = (60, 10, 2);
        let theta = random_matrix(&mut rng, k, p);
        let mut xi_true = DMatrix::zeros(p, n);
        for v in xi_true.iter_mut() {
            if rng.random_bool(0.4) {
                *v = rng.random_range(-3.0..3.0);
            }
        }
        let noise = DMatrix::from_fn(k, n, |_, _| 0.05 * gaussian(&mut rng));
        let xdot = &theta * &xi_true + noise;
        let threshold = rng.random_range(0.05..0.8);
        let out = solve(&theta, &xdot, &OptimizerSpec::stlsq(threshold)).unwrap();
        let xi = &out.coefficients.xi;
        for j in 0..n {
            let support: Vec<usize> = (0..p).filter(|&i| xi[(i, j)] != 0.0).collect();
            for &i in &support {
                assert!(xi[(i, j)].abs() >= threshold, "case {case}: |xi| below threshold");
            }
            if support.is_empty() {
                continue;
            }
            let ols = normal_equations(&theta.select_columns(&support), &xdot.column(j).into_owned());
            for (c, &i) in ols.iter().zip(&support) {
                assert!((xi[(i, j)] - c).abs() < 1e-8, "case {case}: {} vs {c}", xi[(i, j)]);
            }
            let hist = &out.diagnostics.dimensions[j].support_history;
            for w in hist.windows(2) {
                assert!(w[1].iter().all(|i| w[0].contains(i)), "case {case}: support grew");
            }
        }
        assert_eq!(out.coefficients.support, xi.map(|v| v != 0.0));
    }
}

/// Exhaustive minimiser of `||y - Theta_S b||^2 + lambda |S|` over supports.
fn best_support(theta: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Vec<usize> {
    let p = theta.ncols();
    let mut best = (y.norm_squared(), Vec::new());
    for mask in 1u32..(1 << p) {
        let s: Vec<usize> = (0..p).filter(|i| mask & (1 << i) != 0).collect();
        let sub = theta.select_columns(&s);
        let b = normal_equations(&sub, y);
        let cost = (&sub * b - y).norm_squared() + lambda * s.len() as f64;
        if cost < best.0 {
            best = (cost, s);
        }
    }
    best.1
}

#[test]
fn stlsq_matches_exhaustive_support_search_on_orthonormal_designs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in 1..=8 {
        for _ in 0..4 {
            let k = 4 * p + rng.random_range(0..8);
            let q = random_matrix(&mut rng, k, p).qr().q();
            let mut c = DVector::zeros(p);
            for v in c.iter_mut() {
                if rng.random_bool(0.5) {
                    let mag = rng.random_range(1.0..2.0);
                    *v = if rng.random_bool(0.5) { mag } else { -mag };
                }
            }
            let y = &q * &c;
            let threshold = 0.5;
            let out = solve(&q, &DMatrix::from_column_slice(k, 1, y.as_slice()), &OptimizerSpec::stlsq(threshold))
                .unwrap();
            let got: Vec<usize> = (0..p).filter(|&i| out.coefficients.xi[(i, 0)] != 0.0).collect();
            let expect = best_support(&q, &y, threshold * threshold);
            let truth: Vec<usize> = (0..p).filter(|&i| c[i] != 0.0).collect();
            assert_eq!(got, expect, "p={p}");
            assert_eq!(got, truth, "p={p}");
        }
    }
}

#[test]
fn threshold_zero_equals_unregularised_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let theta = random_matrix(&mut rng, 40, 6);
        let y = DVector::from_fn(40, |_, _| gaussian(&mut rng));
        let out = solve(&theta, &DMatrix::from_column_slice(40, 1, y.as_slice()), &OptimizerSpec::stlsq(0.0)).unwrap();
        let ols = normal_equations(&theta, &y);
        assert!((out.coefficients.xi.column(0) - &ols).amax() < 1e-8);
    }
}

#[test]
fn sr3_with_zero_threshold_matches_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let theta = random_matrix(&mut rng, 50, 5);
    let y = DVector::from_fn(50, |_, _| gaussian(&mut rng));
    let out = solve(&theta, &DMatrix::from_column_slice(50, 1, y.as_slice()), &OptimizerSpec::sr3(0.0)).unwrap();
    let ols = normal_equations(&theta, &y);
    assert!((out.coefficients.xi.column(0) - &ols).amax() < 1e-6);
}

#[test]
fn rank_deficient_designs_are_flagged_not_fatal() {
    let mut theta = DMatrix::from_fn(20, 3, |i, j| ((i + 1) * (j + 2)) as f64 % 7.0);
    let c0 = theta.column(0).into_owned();
    theta.set_column(2, &c0);
    let y = DMatrix::from_fn(20, 1, |i, _| i as f64);
    let out = solve(&theta, &y, &OptimizerSpec::stlsq(0.0)).unwrap();
    assert!(out.diagnostics.rank_deficient());
    assert!(out.coefficients.xi.iter().all(|v| v.is_finite()));
}
