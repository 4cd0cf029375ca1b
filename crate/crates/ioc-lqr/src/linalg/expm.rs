//! Matrix exponential by scaling-and-squaring with a [6/6] Padé approximant.

use super::Matrix;
use crate::{Error, Result};

/// Padé [6/6] numerator coefficients for exp; the denominator uses the same
/// coefficients with alternating signs.
const PADE6: [f64; 7] = [
    1.0,
    0.5,
    5.0 / 44.0,
    1.0 / 66.0,
    1.0 / 792.0,
    1.0 / 15840.0,
    1.0 / 665280.0,
];

/// 1-norm bound under which the [6/6] approximant is accurate to machine
/// precision (Higham's theta_6).
const THETA6: f64 = 0.54;

/// Matrix exponential of a square matrix.
pub fn expm(x: &Matrix) -> Result<Matrix> {
    if !x.is_square() {
        return Err(Error::Input(format!(
            "matrix exponential requires a square matrix, got {}x{}",
            x.rows(),
            x.cols()
        )));
    }
    let norm = x.one_norm();
    let squarings = if norm > THETA6 {
        (norm / THETA6).log2().ceil() as u32
    } else {
        0
    };
    let a = x.scale(0.5f64.powi(squarings as i32));

    let n = a.rows();
    let a2 = a.matmul(&a)?;
    let a4 = a2.matmul(&a2)?;
    let a6 = a4.matmul(&a2)?;

    // even part V = b0 I + b2 A^2 + b4 A^4 + b6 A^6
    let v = Matrix::identity(n)
        .scale(PADE6[0])
        .add(&a2.scale(PADE6[2]))?
        .add(&a4.scale(PADE6[4]))?
        .add(&a6.scale(PADE6[6]))?;
    // odd part U = A (b1 I + b3 A^2 + b5 A^4)
    let u_inner = Matrix::identity(n)
        .scale(PADE6[1])
        .add(&a2.scale(PADE6[3]))?
        .add(&a4.scale(PADE6[5]))?;
    let u = a.matmul(&u_inner)?;

    // (V - U) F = (V + U)
    let numer = v.add(&u)?;
    let denom = v.sub(&u)?;
    let mut f = denom.solve(&numer)?;
    for _ in 0..squarings {
        f = f.matmul(&f)?;
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let e = expm(&Matrix::zeros(3, 3)).unwrap();
        assert!(e.sub(&Matrix::identity(3)).unwrap().frobenius_norm() <= 1e-15);
    }

    #[test]
    fn exp_of_diagonal() {
        let x = Matrix::from_rows(&[vec![1.5, 0.0], vec![0.0, -0.25]]).unwrap();
        let e = expm(&x).unwrap();
        assert_close(e.get(0, 0), 1.5f64.exp(), 1e-12 * 1.5f64.exp());
        assert_close(e.get(1, 1), (-0.25f64).exp(), 1e-12);
        assert_close(e.get(0, 1), 0.0, 1e-15);
    }

    #[test]
    fn exp_matches_closed_form_for_triangular_generator() {
        // For X = dt * [[0, 1], [0, -c]] the exponential is
        // [[1, (1 - e^{-c dt})/c], [0, e^{-c dt}]].
        let c = 4.0f64;
        let dt = 0.05f64;
        let x = Matrix::from_rows(&[vec![0.0, dt], vec![0.0, -c * dt]]).unwrap();
        let e = expm(&x).unwrap();
        let ecdt = (-c * dt).exp();
        assert_close(e.get(0, 0), 1.0, 1e-13);
        assert_close(e.get(0, 1), (1.0 - ecdt) / c, 1e-13);
        assert_close(e.get(1, 0), 0.0, 1e-13);
        assert_close(e.get(1, 1), ecdt, 1e-13);
    }

    #[test]
    fn exp_rejects_non_square() {
        let x = Matrix::zeros(2, 3);
        assert!(matches!(expm(&x), Err(Error::Input(_))));
    }

    #[test]
    fn exp_inverse_property() {
        // expm(X) expm(-X) = I for a matrix with sizeable norm.
        let x = Matrix::from_rows(&[
            vec![0.4, -2.0, 1.1],
            vec![3.0, 0.2, -0.5],
            vec![-1.2, 2.5, -0.9],
        ])
        .unwrap()
        .scale(1.8); // Frobenius norm around 9
        assert!(x.frobenius_norm() <= 10.0);
        let e = expm(&x).unwrap();
        let einv = expm(&x.neg()).unwrap();
        let prod = e.matmul(&einv).unwrap();
        let err = prod.sub(&Matrix::identity(3)).unwrap().frobenius_norm();
        assert!(err <= 1e-10, "inverse property violated: {err}");
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn exp_times_exp_of_negation_is_identity(
                entries in proptest::collection::vec(-2.0_f64..2.0, 9)
            ) {
                let x = Matrix::new(3, 3, entries).unwrap();
                prop_assume!(x.frobenius_norm() <= 10.0);
                let prod = expm(&x).unwrap().matmul(&expm(&x.neg()).unwrap()).unwrap();
                let err = prod.sub(&Matrix::identity(3)).unwrap().frobenius_norm();
                prop_assert!(err <= 1e-10);
            }
        }
    }
}
