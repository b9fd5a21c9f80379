mod common;

use fewshot::linalg::{cholesky, sym_eig, Cholesky, Matrix};
use fewshot::rng::rng_gaussian;
use fewshot::{Error, Rng};
use proptest::prelude::*;

fn random_symmetric(n: usize, seed: u64) -> Matrix {
    let a = common::random_matrix(n, n, &mut Rng::new(seed));
    let mut s = a.clone();
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] = 0.5 * (a[(i, j)] + a[(j, i)]);
        }
    }
    s
}

fn random_spd(n: usize, seed: u64) -> Matrix {
    let a = common::random_matrix(n, n, &mut Rng::new(seed));
    let mut s = a.matmul(&a.transpose()).unwrap();
    s.add_diagonal(0.1);
    s
}

fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            out[(i, j)] = (0..a.cols()).map(|k| a[(i, k)] * b[(k, j)]).sum();
        }
    }
    out
}

#[test]
fn four_by_four_identity() {
    let e = sym_eig(&Matrix::identity(4)).unwrap();
    assert_eq!(e.values, vec![1.0; 4]);
}

#[test]
fn two_by_two_cholesky() {
    let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]);
    let l = cholesky(&a).unwrap();
    assert_eq!((l[(0, 0)], l[(1, 0)], l[(0, 1)]), (2.0, 1.0, 0.0));
    assert!((l[(1, 1)] - 2f64.sqrt()).abs() < 1e-15);
    let back = l.matmul(&l.transpose()).unwrap();
    assert!(back.sub(&a).unwrap().frobenius_norm() / a.frobenius_norm() < 1e-12);
}

#[test]
fn singular_matrix_is_not_positive_definite() {
    let a = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]);
    assert!(matches!(cholesky(&a), Err(Error::NotPositiveDefinite { .. })));
}

#[test]
fn gaussian_draws() {
    let a = rng_gaussian(&mut Rng::new(42), 5);
    assert_eq!(a, rng_gaussian(&mut Rng::new(42), 5));
    assert!(rng_gaussian(&mut Rng::new(42), 0).is_empty());
    let big = rng_gaussian(&mut Rng::new(3), 100_000);
    let mean = big.iter().sum::<f64>() / big.len() as f64;
    let var = big.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / big.len() as f64;
    assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.02, "{mean} {var}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eig_reconstructs_and_is_orthonormal(n in 1usize..12, seed in any::<u64>()) {
        let a = random_symmetric(n, seed);
        let e = sym_eig(&a).unwrap();
        let v = &e.vectors;
        let vl = naive_matmul(v, &Matrix::diag(&e.values));
        let back = naive_matmul(&vl, &v.transpose());
        prop_assert!(back.sub(&a).unwrap().frobenius_norm() <= 1e-8 * a.frobenius_norm().max(1e-300));
        let vtv = naive_matmul(&v.transpose(), v);
        prop_assert!(vtv.sub(&Matrix::identity(n)).unwrap().max_abs() < 1e-8);
        prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        let trace: f64 = e.values.iter().sum();
        prop_assert!((trace - a.trace()).abs() <= 1e-8 * a.trace().abs().max(1.0));
        for j in 0..n {
            let col = v.column(j);
            let big = col.iter().copied().fold(0.0, |m: f64, x| if x.abs() > m.abs() { x } else { m });
            prop_assert!(big >= 0.0);
        }
    }

    #[test]
    fn eigenvalues_match_sturm_oracle(n in 2usize..10, seed in any::<u64>()) {
        let a = random_symmetric(n, seed);
        let ours = sym_eig(&a).unwrap().values;
        let oracle = common::eigenvalues_oracle(&a);
        for (x, y) in ours.iter().zip(&oracle) {
            prop_assert!((x - y).abs() < 1e-8 * (1.0 + y.abs()), "{:?} vs {:?}", ours, oracle);
        }
    }

    #[test]
    fn cholesky_solve_inverts(n in 1usize..10, seed in any::<u64>()) {
        let a = random_spd(n, seed);
        let c = Cholesky::factor(&a).unwrap();
        let l = c.lower();
        prop_assert!((0..n).all(|i| l[(i, i)] > 0.0));
        let llt = naive_matmul(l, &l.transpose());
        prop_assert!(llt.sub(&a).unwrap().frobenius_norm() <= 1e-10 * a.frobenius_norm());
        let b = Rng::new(seed ^ 1).gaussian_vec(n);
        let x = c.solve(&b).unwrap();
        let ax = a.mat_vec(&x).unwrap();
        let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err = ax.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-8 * bn.max(1e-300));
    }

    #[test]
    fn matmul_matches_naive(r in 1usize..9, k in 1usize..9, c in 1usize..9, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let a = common::random_matrix(r, k, &mut rng);
        let b = common::random_matrix(k, c, &mut rng);
        prop_assert!(a.matmul(&b).unwrap().sub(&naive_matmul(&a, &b)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn rng_streams(seed in any::<u64>(), other in any::<u64>()) {
        let draw = |s: u64| { let mut r = Rng::new(s); (0..100).map(|_| r.next_u64()).collect::<Vec<_>>() };
        prop_assert_eq!(draw(seed), draw(seed));
        if seed != other {
            prop_assert!(draw(seed).iter().zip(draw(other)).all(|(a, b)| *a != b));
        }
    }
}
