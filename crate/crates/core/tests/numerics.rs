mod common;

use bulkspace::numerics::{
    orthonormalize, sin_theta_distance, svd, thin_svd, tridiag_eigh, DenseMatrix, Orthonormalized,
    TridiagonalSpectrum,
};
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn graded(rows: usize, cols: usize, seed: u64, spread: f64) -> DMatrix<f64> {
    let mut r = rng(seed);
    let mut m = gaussian_matrix(rows, cols, &mut r);
    for j in 0..cols {
        let s = spread.powf(-(j as f64) / cols.max(1) as f64);
        m.column_mut(j).scale_mut(s);
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn thin_svd_left_vectors_are_orthonormal(
        rows in 2usize..40, cols in 1usize..12, seed in any::<u64>(), spread in 1.0f64..1e6
    ) {
        let m = graded(rows, cols, seed, spread);
        let k = rows.min(cols);
        let t = thin_svd(&from_na(&m), k).unwrap();
        prop_assert!(t.left.orthonormality_defect() <= 1e-10);
        prop_assert!(t.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn singular_values_match_dense_solver(
        rows in 2usize..30, cols in 1usize..10, seed in any::<u64>()
    ) {
        let m = graded(rows, cols, seed, 1e3);
        let ours = svd(&from_na(&m)).unwrap().s;
        let mut theirs: Vec<f64> = m.singular_values().iter().cloned().collect();
        theirs.sort_by(|a, b| b.total_cmp(a));
        let top = theirs[0];
        for (a, b) in ours.iter().zip(&theirs) {
            prop_assert!((a - b).abs() <= 1e-10 * top);
        }
    }

    #[test]
    fn full_rank_factorization_reconstructs(
        rows in 2usize..30, cols in 1usize..10, seed in any::<u64>()
    ) {
        let m = graded(rows, cols, seed, 1e4);
        let d = from_na(&m);
        let f = svd(&d).unwrap();
        let (u, v) = (to_na(&f.u), to_na(&f.v));
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(f.s.clone()));
        let err = (&u * s * v.transpose() - &m).abs().max();
        prop_assert!(err <= 1e-8 * m.abs().max());
    }

    #[test]
    fn sin_theta_is_symmetric_and_rotation_invariant(
        n in 3usize..25, seed in any::<u64>()
    ) {
        let mut r = rng(seed);
        let k = 1 + n / 3;
        let u = random_orthonormal(n, k, &mut r);
        let w = random_orthonormal(n, k, &mut r);
        let rot = random_orthonormal(k, k, &mut r);
        let a = sin_theta_distance(&from_na(&u), &from_na(&w)).unwrap();
        let b = sin_theta_distance(&from_na(&w), &from_na(&u)).unwrap();
        let c = sin_theta_distance(&from_na(&(&u * &rot)), &from_na(&w)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((a - c).abs() <= 1e-12);
        prop_assert!((a - na_sin_theta(&u, &w)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn tridiagonal_spectrum_matches_dense(n in 1usize..=50, seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = gaussian_vec(n, &mut r);
        let e: Vec<f64> = gaussian_vec(n - 1, &mut r).iter().map(|x| x.abs()).collect();
        let t = TridiagonalSpectrum::new(d, e).unwrap();
        let dense = to_na(&t.to_dense());
        let ours = tridiag_eigh(&t).unwrap();
        let (theirs, _) = sorted_eigen(&dense);
        let scale = theirs.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for (a, b) in ours.values.iter().zip(&theirs) {
            prop_assert!((a - b).abs() <= 1e-9 * scale);
        }
        let v = to_na(&ours.vectors);
        let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(ours.values.clone()));
        prop_assert!((&dense * &v - &v * lam).abs().max() <= 1e-9 * scale);
        prop_assert!(ours.vectors.orthonormality_defect() <= 1e-10);
    }
}

#[test]
fn orthonormalize_removes_the_span() {
    let mut r = rng(7);
    let q = random_orthonormal(12, 4, &mut r);
    let v = gaussian_vec(12, &mut r);
    let out = orthonormalize(&from_na(&q), &v).unwrap();
    let Orthonormalized::Unit(w) = out else {
        panic!("generic vector is independent")
    };
    let overlap = q.transpose() * nalgebra::DVector::from_column_slice(&w);
    assert!(overlap.abs().max() <= 1e-13);
    assert!((bulkspace::numerics::norm(&w) - 1.0).abs() <= 1e-13);
}

#[test]
fn thin_svd_rejects_rank_beyond_shape() {
    let m = DenseMatrix::zeros(5, 3);
    assert!(thin_svd(&m, 4).is_err());
    assert!(thin_svd(&m, 0).is_err());
}

#[test]
fn vector_inside_the_span_is_dependent() {
    let mut r = rng(8);
    let q = random_orthonormal(10, 3, &mut r);
    let v: Vec<f64> = (q.column(0) * 2.0 - q.column(2)).as_slice().to_vec();
    assert_eq!(
        orthonormalize(&from_na(&q), &v).unwrap(),
        Orthonormalized::Dependent
    );
}
