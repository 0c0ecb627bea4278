use convadapt::mat::{reshape, Mat};
use proptest::prelude::*;

fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Mat<f64>> {
    prop::collection::vec(-10.0..10.0f64, rows * cols).prop_map(move |d| Mat::new(rows, cols, d).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..5, 1usize..5)
}

fn close(a: &Mat<f64>, b: &Mat<f64>, tol: f64) -> bool {
    a.shape() == b.shape() && a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

proptest! {
    #[test]
    fn reshape_of_transposed_vec_inverts(a in dims().prop_flat_map(|(r, c)| mat(r, c))) {
        // reshape fills columns, vec walks rows, so vec(Aᵀ) reshapes back to A
        let (r, c) = a.shape();
        let back = reshape(&a.transpose().vec_rowmajor(), r, c).unwrap();
        prop_assert_eq!(back, a);
    }

    #[test]
    fn reshape_then_vec_is_column_order(v in prop::collection::vec(-1.0..1.0f64, 12)) {
        let m = reshape(&v, 3, 4).unwrap();
        for j in 0..4 {
            for i in 0..3 {
                prop_assert_eq!(m[(i, j)], v[j * 3 + i]);
            }
        }
        prop_assert_eq!(m.transpose().vec_rowmajor(), v);
    }

    #[test]
    fn kronecker_mixed_product(
        a in mat(2, 3), b in mat(3, 2), c in mat(3, 2), d in mat(2, 4),
    ) {
        // (A ⊗ B)(C ⊗ D) = AC ⊗ BD
        let lhs = a.kronecker(&b).matmul(&c.kronecker(&d)).unwrap();
        let rhs = a.matmul(&c).unwrap().kronecker(&b.matmul(&d).unwrap());
        prop_assert!(close(&lhs, &rhs, 1e-9));
    }

    #[test]
    fn kronecker_transpose(a in mat(2, 3), b in mat(3, 1)) {
        prop_assert_eq!(a.kronecker(&b).transpose(), a.transpose().kronecker(&b.transpose()));
    }

    #[test]
    fn kronecker_entries(a in mat(2, 2), b in mat(3, 2)) {
        let k = a.kronecker(&b);
        prop_assert_eq!(k.shape(), (6, 4));
        for i in 0..6 {
            for j in 0..4 {
                prop_assert_eq!(k[(i, j)], a[(i / 3, j / 2)] * b[(i % 3, j % 2)]);
            }
        }
    }

    #[test]
    fn hadamard_is_commutative_and_distributes(a in mat(3, 4), b in mat(3, 4), c in mat(3, 4)) {
        prop_assert_eq!(a.hadamard(&b).unwrap(), b.hadamard(&a).unwrap());
        let lhs = a.hadamard(&b.add(&c).unwrap()).unwrap();
        let rhs = a.hadamard(&b).unwrap().add(&a.hadamard(&c).unwrap()).unwrap();
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn matmul_transpose(a in mat(3, 2), b in mat(2, 4)) {
        let lhs = a.matmul(&b).unwrap().transpose();
        let rhs = b.transpose().matmul(&a.transpose()).unwrap();
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn mul_vec_matches_matmul(a in mat(3, 4), x in prop::collection::vec(-1.0..1.0f64, 4)) {
        let y = a.mul_vec(&x).unwrap();
        let ym = a.matmul(&Mat::column_vector(&x)).unwrap();
        prop_assert!(close(&Mat::column_vector(&y), &ym, 1e-12));
        let z = a.transpose().tr_mul_vec(&x).unwrap();
        prop_assert!(close(&Mat::column_vector(&z), &ym, 1e-12));
    }

    #[test]
    fn row_slice_is_one_based(a in mat(5, 2), i in 1usize..=5, len in 0usize..5) {
        let j = (i + len).min(5);
        let s = a.row_slice(i, j).unwrap();
        prop_assert_eq!(s.rows(), j - i + 1);
        for r in 0..s.rows() {
            prop_assert_eq!(s.row(r), a.row(i - 1 + r));
        }
    }
}

#[test]
fn shape_errors() {
    let a = Mat::<f64>::zeros(2, 3);
    assert!(a.matmul(&a).is_err());
    assert!(a.hadamard(&Mat::zeros(3, 2)).is_err());
    assert!(reshape(&[1.0, 2.0, 3.0], 2, 2).is_err());
    assert!(a.row_slice(0, 1).is_err());
    assert!(a.row_slice(2, 3).is_err());
}

#[test]
fn inverse_of_known_matrix() {
    let a = Mat::from_rows(&[&[4.0, 7.0], &[2.0, 6.0]]).unwrap();
    let inv = a.inverse().unwrap();
    let expect = Mat::from_rows(&[&[0.6, -0.7], &[-0.2, 0.4]]).unwrap();
    assert!(close(&inv, &expect, 1e-14));
    assert!(Mat::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]).unwrap().inverse().is_err());
}

#[test]
fn works_in_single_precision() {
    let a = Mat::<f32>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
    let k = a.kronecker(&Mat::identity(2));
    assert_eq!(k.shape(), (4, 4));
    assert_eq!(k[(3, 3)], 4.0f32);
    assert_eq!(k[(3, 2)], 0.0f32);
}
