//! Cross-checks against nalgebra as an independent linear algebra oracle.

use dsm_core::operator::{integral_default_solution, neumann_laplacian, smooth_bump};
use dsm_core::{make_diagonal_problem, make_integral_problem, DenseMatrix, Vector};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(n, n, |i, j| rng.random_range(-1.0..1.0) + if i == j { 2.0 } else { 0.0 })
}

#[test]
fn integral_operator_is_ill_conditioned() {
    let lp = make_integral_problem(32, 0.1, &smooth_bump(32)).unwrap();
    let svd = to_na(lp.a()).svd(false, false);
    let sv = svd.singular_values;
    let (max, min) = (sv.max(), sv.min());
    assert!(max / min > 1e6, "condition number {}", max / min);
    // rapid decay: below 1e-8 of the largest within the first 24 values
    let mut sorted: Vec<f64> = sv.iter().cloned().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    assert!(sorted[23] / sorted[0] < 1e-8);
    assert!(sorted.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn gram_matrix_matches_oracle() {
    let lp = make_integral_problem(20, 0.12, &smooth_bump(20)).unwrap();
    let a = to_na(lp.a());
    let b = a.transpose() * &a;
    let ours = to_na(lp.b());
    assert!((ours - &b).abs().max() <= 1e-14 * b.abs().max());
    let q = a.transpose() * DVector::from_column_slice(lp.f().as_slice());
    let diff = DVector::from_column_slice(lp.q().as_slice()) - q;
    assert!(diff.amax() <= 1e-14 * lp.q().norm_inf().max(1.0));
}

#[test]
fn diagonal_eigenvalues_are_squares() {
    let lp = make_diagonal_problem(&[1.0, 0.1, 0.01], &Vector::from(vec![1.0, 1.0, 1.0])).unwrap();
    let eig = nalgebra::SymmetricEigen::new(to_na(lp.b()));
    let mut values: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    values.sort_by(f64::total_cmp);
    for (got, want) in values.iter().zip([1e-4, 1e-2, 1.0]) {
        assert!((got - want).abs() <= 1e-15 * want.max(1e-2));
    }
}

#[test]
fn regularized_solution_matches_oracle() {
    let lp = make_integral_problem(24, 0.1, &integral_default_solution(24, 0.1).unwrap()).unwrap();
    for eps in [1.0, 1e-2, 1e-4] {
        let m = to_na(lp.b()) + DMatrix::identity(24, 24) * eps;
        let x = m.lu().solve(&DVector::from_column_slice(lp.q().as_slice())).unwrap();
        let ours = lp.regularized_solution(eps).unwrap();
        let diff = (DVector::from_column_slice(ours.as_slice()) - &x).norm();
        assert!(diff <= 1e-9 * x.norm(), "eps {eps}: {diff}");
    }
}

#[test]
fn laplacian_spectrum_matches_oracle() {
    // Neumann Laplacian: 2 - 2 cos(pi k / n), k = 0..n-1
    let n = 12;
    let eig = neumann_laplacian(n).symmetric_eigen().unwrap();
    let oracle = nalgebra::SymmetricEigen::new(to_na(&neumann_laplacian(n)));
    let mut want: Vec<f64> = oracle.eigenvalues.iter().cloned().collect();
    want.sort_by(f64::total_cmp);
    for (k, (got, w)) in eig.values.iter().zip(&want).enumerate() {
        let analytic = 2.0 - 2.0 * (std::f64::consts::PI * k as f64 / n as f64).cos();
        assert!((got - w).abs() < 1e-12 && (got - analytic).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lu_solve_matches_oracle(seed in any::<u64>(), n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, n);
        let rhs = Vector::from_fn(n, |_| rng.random_range(-1.0..1.0));
        let ours = m.solve(&rhs).unwrap();
        let x = to_na(&m).lu().solve(&DVector::from_column_slice(rhs.as_slice())).unwrap();
        let diff = (DVector::from_column_slice(ours.as_slice()) - &x).norm();
        prop_assert!(diff <= 1e-10 * (1.0 + x.norm()));
    }

    #[test]
    fn symmetric_eigen_matches_oracle(seed in any::<u64>(), n in 1usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, n).symmetric_part().unwrap();
        let ours = m.symmetric_eigen().unwrap();
        let mut want: Vec<f64> = nalgebra::SymmetricEigen::new(to_na(&m)).eigenvalues.iter().cloned().collect();
        want.sort_by(f64::total_cmp);
        for (a, b) in ours.values.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        // columns are eigenvectors
        for (k, &lambda) in ours.values.iter().enumerate() {
            let v = Vector::from_fn(n, |i| ours.vectors[(i, k)]);
            let mv = m.mul_vec(&v).unwrap();
            prop_assert!(mv.distance(&v.scale(lambda)) <= 1e-11 * (1.0 + lambda.abs()));
        }
    }
}
