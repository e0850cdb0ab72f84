//! Small dense linear algebra, the continuous Lyapunov solver, a fixed-step
//! RK4 stage and bisection-based crossing localisation.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Real parts must sit below this to count as stable.
pub const HURWITZ_TOL: f64 = -1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
    #[error("Kronecker system is singular; A_c is not Hurwitz")]
    Singular,
    #[error("Lyapunov solution is not positive definite (min eigenvalue {0})")]
    Indefinite(f64),
    #[error("non-finite value in RK4 stage {stage}")]
    NonFiniteStage { stage: usize },
    #[error("no sign change on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },
}

/// Solution of `P A_c + A_c^T P = -I` with its spectrum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovCert {
    #[serde(serialize_with = "serialize_mat")]
    pub p: Mat,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub residual_norm: f64,
}

fn serialize_mat<S: serde::Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in 0..m.nrows() {
        let row: Vec<f64> = (0..m.ncols()).map(|c| m[(r, c)]).collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

impl LyapunovCert {
    /// Spectral norm; `P` is symmetric positive definite so this is `lambda_max`.
    pub fn norm(&self) -> f64 {
        self.lambda_max
    }
}

/// Observer matrix with `-k` in the first column and a shifted identity to its right.
pub fn build_companion(k: &[f64]) -> Mat {
    let n = k.len();
    let mut a = Mat::zeros(n, n);
    for (i, ki) in k.iter().enumerate() {
        a[(i, 0)] = -ki;
        if i + 1 < n {
            a[(i, i + 1)] = 1.0;
        }
    }
    a
}

/// `[0 I; 0 0]`, the chain-of-integrators part of the plant.
pub fn shift_matrix(n: usize) -> Mat {
    let mut a = Mat::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }
    a
}

fn ensure_square(a: &Mat) -> Result<usize, NumericsError> {
    if a.nrows() != a.ncols() {
        return Err(NumericsError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(a.nrows())
}

/// Real parts of the eigenvalues of a general square matrix.
pub fn eigen_real_parts(a: &Mat) -> Result<Vec<f64>, NumericsError> {
    ensure_square(a)?;
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 10_000).ok_or(NumericsError::NoConvergence)?;
    Ok(schur.complex_eigenvalues().iter().map(|z| z.re).collect())
}

pub fn is_hurwitz(a: &Mat) -> Result<bool, NumericsError> {
    Ok(eigen_real_parts(a)?.iter().all(|&re| re < HURWITZ_TOL))
}

/// Solves `P A + A^T P = -I` through `(I ⊗ A^T + A^T ⊗ I) vec(P) = -vec(I)`.
pub fn solve_lyapunov(a: &Mat) -> Result<LyapunovCert, NumericsError> {
    let n = ensure_square(a)?;
    let at = a.transpose();
    let eye = Mat::identity(n, n);
    let system = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -Vector::from_column_slice(eye.as_slice());

    let lu = system.lu();
    let vec_p = lu.solve(&rhs).ok_or(NumericsError::Singular)?;
    if vec_p.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::Singular);
    }
    let p = Mat::from_column_slice(n, n, vec_p.as_slice());
    let p = (&p + p.transpose()) * 0.5;

    let eig = SymmetricEigen::new(p.clone());
    let lambda_min = eig.eigenvalues.min();
    let lambda_max = eig.eigenvalues.max();
    if lambda_min <= 0.0 {
        return Err(NumericsError::Indefinite(lambda_min));
    }
    let residual_norm = (&p * a + a.transpose() * &p + &eye).norm();
    Ok(LyapunovCert {
        p,
        lambda_min,
        lambda_max,
        residual_norm,
    })
}

/// Classical fourth-order Runge-Kutta step.
pub fn rk4_step<F, E>(mut f: F, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>, E>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>, E>,
    E: From<NumericsError>,
{
    let n = x.len();
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { (0..n).map(|i| x[i] + a * k[i]).collect() };
    let check = |stage: usize, k: Vec<f64>| -> Result<Vec<f64>, E> {
        if k.iter().all(|v| v.is_finite()) {
            Ok(k)
        } else {
            Err(NumericsError::NonFiniteStage { stage }.into())
        }
    };

    let k1 = check(1, f(t, x)?)?;
    let k2 = check(2, f(t + 0.5 * h, &axpy(0.5 * h, &k1))?)?;
    let k3 = check(3, f(t + 0.5 * h, &axpy(0.5 * h, &k2))?)?;
    let k4 = check(4, f(t + h, &axpy(h, &k3))?)?;
    Ok((0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Bisection on a sign change of `g` over `[t_lo, t_hi]`.
///
/// Returns the end of the final bracket on the far side of the change, so for
/// a rising crossing `g(t*) >= 0` while `g(t* - tol) < 0` at bracket resolution.
pub fn locate_crossing<G>(mut g: G, t_lo: f64, t_hi: f64, tol: f64) -> Result<f64, NumericsError>
where
    G: FnMut(f64) -> f64,
{
    let (mut lo, mut hi) = (t_lo, t_hi);
    let g_lo = g(lo);
    let g_hi = g(hi);
    let rising = g_lo < 0.0 && g_hi >= 0.0;
    let falling = g_lo >= 0.0 && g_hi < 0.0;
    if !(rising || falling) {
        return Err(NumericsError::NoSignChange { lo, hi });
    }
    let before = |v: f64| if rising { v < 0.0 } else { v >= 0.0 };
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if before(g(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> Mat {
        let n = rows.len();
        let m = rows[0].len();
        Mat::from_fn(n, m, |r, c| rows[r][c])
    }

    #[test]
    fn companion_matches_pattern() {
        assert_eq!(build_companion(&[5.0, 5.0]), mat(&[&[-5.0, 1.0], &[-5.0, 0.0]]));
        assert_eq!(build_companion(&[1.0]), mat(&[&[-1.0]]));
        assert_eq!(
            build_companion(&[1.0, 2.0, 3.0]),
            mat(&[&[-1.0, 1.0, 0.0], &[-2.0, 0.0, 1.0], &[-3.0, 0.0, 0.0]])
        );
    }

    #[test]
    fn hurwitz_examples() {
        assert!(is_hurwitz(&mat(&[&[-5.0, 1.0], &[-5.0, 0.0]])).unwrap());
        assert!(!is_hurwitz(&mat(&[&[0.0, 1.0], &[0.0, 0.0]])).unwrap());
        assert!(is_hurwitz(&mat(&[&[-1.0]])).unwrap());
        assert!(!is_hurwitz(&build_companion(&[-1.0, 2.0])).unwrap());
        assert!(matches!(
            is_hurwitz(&Mat::zeros(2, 3)),
            Err(NumericsError::NotSquare { .. })
        ));
    }

    /// Routh-Hurwitz on the companion characteristic polynomial
    /// `s^n + k1 s^{n-1} + ... + kn`, independent of the eigen route.
    fn routh_hurwitz(k: &[f64]) -> bool {
        match k {
            [k1] => *k1 > 0.0,
            [k1, k2] => *k1 > 0.0 && *k2 > 0.0,
            [k1, k2, k3] => *k1 > 0.0 && *k3 > 0.0 && k1 * k2 > *k3,
            [k1, k2, k3, k4] => {
                *k1 > 0.0 && *k4 > 0.0 && k1 * k2 > *k3 && k3 * (k1 * k2 - k3) > k1 * k1 * k4
            }
            _ => unreachable!(),
        }
    }

    proptest! {
        #[test]
        fn eigen_route_agrees_with_routh(k in prop::collection::vec(-3.0f64..8.0, 1..=4)) {
            // skip the measure-zero boundary where the two routes may disagree numerically
            let a = build_companion(&k);
            let max_re = eigen_real_parts(&a).unwrap().into_iter().fold(f64::MIN, f64::max);
            prop_assume!(max_re.abs() > 1e-6);
            prop_assert_eq!(is_hurwitz(&a).unwrap(), routh_hurwitz(&k));
        }
    }

    #[test]
    fn lyapunov_two_by_two() {
        // hand solution of the three scalar equations:
        //   -10 p11 - 10 p12 = -1, p11 - 5 p12 - 5 p22 = 0, 2 p12 = -1
        let cert = solve_lyapunov(&build_companion(&[5.0, 5.0])).unwrap();
        assert_abs_diff_eq!(cert.p[(0, 0)], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(cert.p[(0, 1)], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(cert.p[(1, 0)], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(cert.p[(1, 1)], 0.62, epsilon = 1e-12);
        // eigenvalues of [[0.6,-0.5],[-0.5,0.62]]: 0.61 -/+ sqrt(0.0001 + 0.25)
        let disc = (0.0001f64 + 0.25).sqrt();
        assert_abs_diff_eq!(cert.lambda_min, 0.61 - disc, epsilon = 1e-12);
        assert_abs_diff_eq!(cert.lambda_max, 0.61 + disc, epsilon = 1e-12);
        assert!((cert.lambda_min - 0.1099).abs() < 1e-4);
        assert!(cert.residual_norm <= 1e-9);
    }

    #[test]
    fn lyapunov_trivial_cases() {
        let cert = solve_lyapunov(&mat(&[&[-1.0]])).unwrap();
        assert_abs_diff_eq!(cert.p[(0, 0)], 0.5, epsilon = 1e-15);
        let cert = solve_lyapunov(&mat(&[&[-2.0, 0.0], &[0.0, -2.0]])).unwrap();
        assert_abs_diff_eq!(cert.p, Mat::identity(2, 2) * 0.25, epsilon = 1e-15);
    }

    #[test]
    fn lyapunov_rejects_unstable_input() {
        assert_eq!(
            solve_lyapunov(&mat(&[&[0.0, 1.0], &[0.0, 0.0]])).unwrap_err(),
            NumericsError::Singular
        );
        assert!(matches!(
            solve_lyapunov(&mat(&[&[1.0]])).unwrap_err(),
            NumericsError::Indefinite(_)
        ));
    }

    /// Stable monic polynomial coefficients from negative real roots.
    fn stable_k(roots: &[f64]) -> Vec<f64> {
        let mut poly = vec![1.0];
        for r in roots {
            let mut next = vec![0.0; poly.len() + 1];
            for (i, c) in poly.iter().enumerate() {
                next[i] += c;
                next[i + 1] += c * r;
            }
            poly = next;
        }
        poly[1..].to_vec()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn lyapunov_residual_on_random_companions(roots in prop::collection::vec(0.2f64..6.0, 1..=6)) {
            let k = stable_k(&roots);
            let a = build_companion(&k);
            let cert = solve_lyapunov(&a).unwrap();
            prop_assert!(cert.residual_norm <= 1e-9, "residual {}", cert.residual_norm);
            prop_assert!(cert.lambda_min > 0.0);
            let asym = (&cert.p - cert.p.transpose()).norm();
            prop_assert!(asym <= 1e-12 * cert.p.norm());
        }
    }

    fn rk4_scalar(lambda: f64, x: f64, h: f64) -> f64 {
        rk4_step::<_, NumericsError>(|_, x| Ok(vec![lambda * x[0]]), 0.0, &[x], h).unwrap()[0]
    }

    #[test]
    fn rk4_examples() {
        let x = rk4_step::<_, NumericsError>(|_, _| Ok(vec![0.0, 0.0]), 0.0, &[1.5, -2.0], 0.3)
            .unwrap();
        assert_eq!(x, vec![1.5, -2.0]);
        assert_abs_diff_eq!(rk4_scalar(-1.0, 1.0, 0.1), (-0.1f64).exp(), epsilon = 1e-7);
        let x = rk4_step::<_, NumericsError>(|_, _| Ok(vec![1.0]), 0.0, &[0.0], 0.5).unwrap();
        assert_eq!(x, vec![0.5]);
        let err = rk4_step::<_, NumericsError>(|_, _| Ok(vec![f64::NAN]), 0.0, &[0.0], 0.5)
            .unwrap_err();
        assert_eq!(err, NumericsError::NonFiniteStage { stage: 1 });
    }

    #[test]
    fn rk4_local_error_is_fifth_order() {
        for lambda in [-1.0, -5.0] {
            let err = |h: f64| (rk4_scalar(lambda, 1.0, h) - (lambda * h).exp()).abs();
            for h in [0.1, 0.05, 0.02] {
                let ratio = err(h) / err(h / 2.0);
                assert!(ratio >= 16.0 * 0.9, "lambda {lambda} h {h} ratio {ratio}");
            }
        }
    }

    #[test]
    fn crossing_examples() {
        let t = locate_crossing(|t| t - 1.0, 0.0, 2.0, 1e-9).unwrap();
        assert!((t - 1.0).abs() <= 1e-9);
        let t = locate_crossing(|t| t * t - 2.0, 0.0, 2.0, 1e-9).unwrap();
        assert!((t - 2f64.sqrt()).abs() <= 1e-8);
        assert!(t * t - 2.0 >= 0.0);
        assert!((t - 1e-9) * (t - 1e-9) - 2.0 < 0.0);
        assert!(matches!(
            locate_crossing(|_| -1.0, 0.0, 1.0, 1e-9),
            Err(NumericsError::NoSignChange { .. })
        ));
        let t = locate_crossing(|t| 1.0 - t, 0.0, 2.0, 1e-9).unwrap();
        assert!((t - 1.0).abs() <= 1e-9 && 1.0 - t < 0.0);
    }

    proptest! {
        #[test]
        fn crossing_resolution_is_tolerance_independent(root in 0.01f64..0.99, shift in 0u32..4) {
            let coarse = locate_crossing(|t| t - root, 0.0, 1.0, 1e-6).unwrap();
            let fine = locate_crossing(|t| t - root, 0.0, 1.0, 1e-6 / 10f64.powi(shift as i32)).unwrap();
            prop_assert!(coarse >= root && coarse - root <= 1e-6);
            prop_assert!(fine >= root && (fine - coarse).abs() <= 1e-6);
        }
    }
}
