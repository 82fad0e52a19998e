//! Zero-order-hold discretization.

use nalgebra::{DMatrix, SMatrix};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDynamics {
    pub a_d: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    pub dt: f64,
}

/// Matrix exponential by scaling and squaring with a truncated Taylor
/// series. Nilpotent inputs terminate exactly once a power vanishes.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    let norm = a.iter().map(|v| v.abs()).fold(0.0, f64::max) * n as f64;
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let scaled = a * scale;

    let mut result = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=30 {
        term = &term * &scaled / k as f64;
        if term.iter().all(|v| *v == 0.0) {
            break;
        }
        result += &term;
        let term_norm = term.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if term_norm <= f64::EPSILON * 1e-3 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// `A_d = exp(A dt)`, `B_d = (∫₀^dt exp(A τ) dτ) B`, from the exponential of
/// the augmented matrix `[[A, B], [0, 0]] dt`.
pub fn zoh_discretize(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> Result<DiscreteDynamics> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter("dt must be positive"));
    }
    if !a.is_square() || a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch("A must be square with as many rows as B"));
    }
    let (n, m) = (a.nrows(), b.ncols());
    let mut aug = DMatrix::<f64>::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * dt));
    let e = expm(&aug);
    Ok(DiscreteDynamics {
        a_d: e.view((0, 0), (n, n)).into_owned(),
        b_d: e.view((0, n), (n, m)).into_owned(),
        dt,
    })
}

/// `(exp(A dt), ∫₀^dt exp(A τ) dτ)`. Multiplying the second factor by any
/// input matrix gives its zero-order-hold `B_d`; useful when several input
/// matrices share one `A`.
pub fn zoh_with_input_integral(a: &DMatrix<f64>, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let d = zoh_discretize(a, &DMatrix::identity(n, n), dt)?;
    Ok((d.a_d, d.b_d))
}

/// `(exp(A dt), ∫₀^dt exp(A τ) dτ)` by direct series for small fixed-size
/// systems. Stops once a power of `A` vanishes or the terms drop below
/// round-off, so the SRB matrices (nilpotent) are handled exactly.
pub fn zoh_series<const N: usize>(a: &SMatrix<f64, N, N>, dt: f64) -> Result<(SMatrix<f64, N, N>, SMatrix<f64, N, N>)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter("dt must be positive"));
    }
    let norm = a.iter().map(|v| v.abs()).fold(0.0, f64::max) * N as f64 * dt;
    if norm > 0.5 {
        let n = N;
        let d = zoh_with_input_integral(&DMatrix::from_column_slice(n, n, a.as_slice()), dt)?;
        return Ok((
            SMatrix::from_column_slice(d.0.as_slice()),
            SMatrix::from_column_slice(d.1.as_slice()),
        ));
    }
    let mut exp = SMatrix::<f64, N, N>::identity();
    let mut integral = SMatrix::<f64, N, N>::identity() * dt;
    let mut term = SMatrix::<f64, N, N>::identity();
    for k in 1..=30 {
        term = term * a * (dt / k as f64);
        if term.iter().all(|v| *v == 0.0) {
            break;
        }
        exp += term;
        integral += term * (dt / (k + 1) as f64);
        if term.amax() <= f64::EPSILON * 1e-3 {
            break;
        }
    }
    Ok((exp, integral))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::srb::{build_continuous_dynamics, ContactSet, RobotParams, SrbState, Stance};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Plain 30-term Taylor series, no scaling.
    fn series_oracle(a: &DMatrix<f64>, dt: f64, terms: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = a.nrows();
        let mut exp = DMatrix::identity(n, n);
        let mut integral = DMatrix::identity(n, n) * dt;
        let mut power = DMatrix::identity(n, n);
        let mut fact = 1.0;
        for k in 1..terms {
            power = &power * a;
            fact *= k as f64;
            exp += &power * (dt.powi(k as i32) / fact);
            integral += &power * (dt.powi(k as i32 + 1) / (fact * (k as f64 + 1.0)));
        }
        (exp, integral)
    }

    #[test]
    fn double_integrator_is_exact() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let d = zoh_discretize(&a, &b, 0.1).unwrap();
        assert_eq!(d.a_d, DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]));
        assert!((d.b_d[(0, 0)] - 0.005).abs() < 1e-16);
        assert!((d.b_d[(1, 0)] - 0.1).abs() < 1e-16);
    }

    #[test]
    fn zero_dynamics() {
        let a = DMatrix::zeros(3, 3);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let d = zoh_discretize(&a, &b, 0.25).unwrap();
        assert_eq!(d.a_d, DMatrix::identity(3, 3));
        assert!((d.b_d - &b * 0.25).abs().max() < 1e-15);
    }

    #[test]
    fn rejects_bad_dt() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::zeros(2, 1);
        assert!(zoh_discretize(&a, &b, 0.0).is_err());
        assert!(zoh_discretize(&a, &b, -1.0).is_err());
        assert!(zoh_discretize(&a, &DMatrix::zeros(3, 1), 0.1).is_err());
    }

    #[test]
    fn pendulum_matches_series() {
        let lambda2 = 9.81 / 0.7;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, lambda2, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[-1.0, 0.0]);
        let d = zoh_discretize(&a, &b, 0.33).unwrap();
        let (exp, integral) = series_oracle(&a, 0.33, 30);
        assert!((&d.a_d - exp).abs().max() < 1e-9);
        assert!((&d.b_d - integral * &b).abs().max() < 1e-9);
    }

    #[test]
    fn srb_exponential_truncates() {
        let params = RobotParams::default();
        let state = SrbState::new(
            Vector3::new(0.05, -0.02, 0.7),
            Vector3::new(0.1, 0.0, 0.68),
            Vector3::new(0.3, 0.1, -0.2),
            Vector3::new(0.5, 0.1, 0.0),
            &params,
        );
        let contacts = ContactSet::feet(Stance::Both, Vector3::new(0.1, 0.1, 0.0), Vector3::new(0.0, -0.1, 0.0));
        let (a, b) = build_continuous_dynamics(&state, &contacts, &params).unwrap();
        let a = DMatrix::from_column_slice(13, 13, a.as_slice());
        let b = DMatrix::from_column_slice(13, 18, b.as_slice());
        let dt = 0.025;
        let d = zoh_discretize(&a, &b, dt).unwrap();
        let closed = DMatrix::identity(13, 13) + &a * dt + &a * &a * (dt * dt / 2.0);
        assert!((&d.a_d - closed).abs().max() < 1e-15);
        let (exp, integral) = series_oracle(&a, dt, 30);
        assert!((&d.a_d - exp).abs().max() < 1e-9);
        assert!((&d.b_d - integral * &b).abs().max() < 1e-9);
    }

    #[test]
    fn static_series_matches_augmented() {
        let params = RobotParams::default();
        let state = SrbState::new(
            Vector3::new(0.1, 0.05, -0.4),
            Vector3::new(0.0, 0.1, 0.7),
            Vector3::new(0.2, -0.1, 0.3),
            Vector3::new(0.3, 0.0, 0.1),
            &params,
        );
        let contacts = ContactSet::feet(Stance::Left, Vector3::new(0.0, 0.1, 0.0), Vector3::new(0.0, -0.1, 0.0));
        let (a, b) = build_continuous_dynamics(&state, &contacts, &params).unwrap();
        let (a_d, gamma) = zoh_series(&a, 0.025).unwrap();
        let direct = zoh_discretize(
            &DMatrix::from_column_slice(13, 13, a.as_slice()),
            &DMatrix::from_column_slice(13, 18, b.as_slice()),
            0.025,
        )
        .unwrap();
        let bd = gamma * b;
        assert!((DMatrix::from_column_slice(13, 13, a_d.as_slice()) - direct.a_d).amax() < 1e-14);
        assert!((DMatrix::from_column_slice(13, 18, bd.as_slice()) - direct.b_d).amax() < 1e-14);
        // Large norm falls back to scaling and squaring.
        let big = nalgebra::Matrix2::new(0.0, 1.0, 400.0, 0.0);
        let (e, _) = zoh_series(&big, 0.5).unwrap();
        let l = 20.0f64;
        assert!((e[(0, 0)] - (l * 0.5).cosh()).abs() < 1e-9 * (l * 0.5).cosh());
    }

    #[test]
    fn semigroup_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = 4;
            let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            for i in 0..n {
                a[(i, i)] -= 2.0;
            }
            let b = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
            let dt = rng.random_range(0.01..0.5);
            let one = zoh_discretize(&a, &b, dt).unwrap();
            let two = zoh_discretize(&a, &b, 2.0 * dt).unwrap();
            assert!((&one.a_d * &one.a_d - &two.a_d).abs().max() < 1e-9);
        }
    }

    #[test]
    fn input_integral_matches_direct() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 14.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.3, -1.0]);
        let (a_d, gamma) = zoh_with_input_integral(&a, 0.05).unwrap();
        let direct = zoh_discretize(&a, &b, 0.05).unwrap();
        assert!((a_d - direct.a_d).abs().max() < 1e-14);
        assert!((gamma * b - direct.b_d).abs().max() < 1e-14);
    }
}
