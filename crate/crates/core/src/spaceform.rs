//! Closed-form comparison kernels for the constant-curvature models: the
//! generalized sine `sn_k`, its logarithmic derivative, and the reference
//! mean curvature and ball volume of geodesic spheres in the model space.
//!
//! `sn_k` solves f'' + k f = 0 with f(0) = 0, f'(0) = 1; its logarithmic
//! derivative solves the scalar Riccati equation rho' + rho^2 = -k with the
//! 1/t asymptote at zero. These are the right-hand sides of every comparison
//! inequality checked elsewhere in the crate.

use crate::oracles::sphere_measure;
use crate::quadrature::adaptive_gauss_kronrod;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("{name}: argument {value} outside the open interval (0, {end})")]
    OutsideDomain { name: &'static str, value: f64, end: f64 },
    #[error("{name}: radius {value} exceeds the model diameter {end}")]
    BeyondModel { name: &'static str, value: f64, end: f64 },
    #[error("{name}: dimension {n} is below 2")]
    Dimension { name: &'static str, n: usize },
}

/// Below this value of |k| t^2 the three-branch closed form loses digits to
/// cancellation and the Taylor forms take over.
const TAYLOR_SWITCH: f64 = 1e-8;

/// First zero of sn_k: pi/sqrt(k) for k > 0, plus infinity otherwise.
///
/// The infinite branch is the IEEE infinity so that range checks against the
/// returned value stay exact.
pub fn domain_end(k: f64) -> f64 {
    if k > 0.0 {
        std::f64::consts::PI / k.sqrt()
    } else {
        f64::INFINITY
    }
}

/// The generalized sine: sin(sqrt(k) t)/sqrt(k), t, or sinh(sqrt(-k) t)/sqrt(-k)
/// by the sign of k. Total on all finite t.
pub fn sn(k: f64, t: f64) -> f64 {
    if k.abs() * t * t < TAYLOR_SWITCH {
        return t * (1.0 - k * t * t / 6.0);
    }
    if k > 0.0 {
        let s = k.sqrt();
        (s * t).sin() / s
    } else {
        let s = (-k).sqrt();
        (s * t).sinh() / s
    }
}

/// Derivative of [`sn`]: cos(sqrt(k) t), 1, or cosh(sqrt(-k) t).
pub fn sn_deriv(k: f64, t: f64) -> f64 {
    if k.abs() * t * t < TAYLOR_SWITCH {
        return 1.0 - k * t * t / 2.0;
    }
    if k > 0.0 {
        (k.sqrt() * t).cos()
    } else {
        ((-k).sqrt() * t).cosh()
    }
}

/// sn_k'(t)/sn_k(t) on the open interval (0, domain_end(k)).
pub fn sn_ratio(k: f64, t: f64) -> Result<f64, KernelError> {
    let end = domain_end(k);
    if !(t > 0.0 && t < end) {
        return Err(KernelError::OutsideDomain { name: "sn_ratio", value: t, end });
    }
    Ok(sn_deriv(k, t) / sn(k, t))
}

/// Mean curvature (n-1) sn_k'/sn_k of the radius-`r` geodesic sphere in the
/// n-dimensional constant-curvature model.
pub fn model_mean_curvature(n: usize, k: f64, r: f64) -> Result<f64, KernelError> {
    if n < 2 {
        return Err(KernelError::Dimension { name: "model_mean_curvature", n });
    }
    Ok((n as f64 - 1.0) * sn_ratio(k, r)?)
}

/// Volume of the radius-`r` geodesic ball in the n-dimensional model:
/// |S^(n-1)| int_0^r sn_k(t)^(n-1) dt.
///
/// For n <= 4 the integral is taken from the closed antiderivative after
/// rescaling k to a unit curvature; higher dimensions fall back to adaptive
/// Gauss quadrature at 1e-10 absolute tolerance.
pub fn model_ball_volume(n: usize, k: f64, r: f64) -> Result<f64, KernelError> {
    if n < 2 {
        return Err(KernelError::Dimension { name: "model_ball_volume", n });
    }
    let end = domain_end(k);
    if !(r > 0.0 && r <= end) {
        return Err(KernelError::BeyondModel { name: "model_ball_volume", value: r, end });
    }
    let m = n - 1;
    let area = sphere_measure(m);
    let radial = if k == 0.0 {
        r.powi(n as i32) / n as f64
    } else if n <= 4 {
        // sn_k(t) = sn_{sign k}(sqrt|k| t)/sqrt|k|; substitute u = sqrt|k| t.
        let s = k.abs().sqrt();
        let x = s * r;
        let unit = if k > 0.0 { sin_power_integral(m, x) } else { sinh_power_integral(m, x) };
        unit / s.powi(n as i32)
    } else {
        adaptive_gauss_kronrod(&|t| sn(k, t).powi(m as i32), 0.0, r, 1e-10)
    };
    Ok(area * radial)
}

/// int_0^x sin(t)^m dt for m in {1, 2, 3}.
fn sin_power_integral(m: usize, x: f64) -> f64 {
    match m {
        1 => 1.0 - x.cos(),
        2 => 0.5 * (x - x.sin() * x.cos()),
        3 => x.cos().powi(3) / 3.0 - x.cos() + 2.0 / 3.0,
        _ => unreachable!("closed forms cover m <= 3"),
    }
}

/// int_0^x sinh(t)^m dt for m in {1, 2, 3}.
fn sinh_power_integral(m: usize, x: f64) -> f64 {
    match m {
        1 => x.cosh() - 1.0,
        2 => 0.5 * (x.sinh() * x.cosh() - x),
        3 => x.cosh().powi(3) / 3.0 - x.cosh() + 2.0 / 3.0,
        _ => unreachable!("closed forms cover m <= 3"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn sn_branch_values() {
        assert_eq!(sn(0.0, 2.5), 2.5);
        assert_abs_diff_eq!(sn(1.0, PI / 2.0), 1.0, epsilon = 1e-15);
        // derived anchor: sinh(1) from the series oracle
        let sinh1 = oracles::series_sn_pair(-1.0, 1.0).0;
        assert_abs_diff_eq!(sn(-1.0, 1.0), sinh1, epsilon = 1e-14);
        assert_abs_diff_eq!(sn(-1.0, 1.0), 1.1752012, epsilon = 5e-8);
    }

    #[test]
    fn sn_is_smooth_across_the_taylor_switch() {
        for &k in &[-3.0, -1.0, 1.0, 3.0] {
            let t = (TAYLOR_SWITCH / k.abs()).sqrt();
            let below = sn(k, t * 0.999);
            let above = sn(k, t * 1.001);
            assert_abs_diff_eq!(below, above, epsilon = 1e-12 * t);
        }
    }

    #[test]
    fn sn_ratio_values_and_domain() {
        assert_eq!(sn_ratio(0.0, 2.0).unwrap(), 0.5);
        assert_abs_diff_eq!(sn_ratio(1.0, PI / 2.0).unwrap(), 0.0, epsilon = 1e-15);
        assert!(sn_ratio(1.0, PI).is_err());
        assert!(sn_ratio(1.0, 0.0).is_err());
        assert!(sn_ratio(-1.0, 1e6).is_ok());
    }

    #[test]
    fn sn_ratio_satisfies_its_riccati_equation_by_central_difference() {
        // d(rho)/dt at t = 1 equals -1 - rho^2 within 1e-6 (h = 1e-5)
        let h = 1e-5;
        let d = (sn_ratio(1.0, 1.0 + h).unwrap() - sn_ratio(1.0, 1.0 - h).unwrap()) / (2.0 * h);
        let rho = sn_ratio(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(d, -1.0 - rho * rho, epsilon = 1e-6);
    }

    #[test]
    fn domain_end_convention() {
        assert_abs_diff_eq!(domain_end(4.0), PI / 2.0, epsilon = 1e-15);
        assert_eq!(domain_end(0.0), f64::INFINITY);
        assert_eq!(domain_end(-1.0), f64::INFINITY);
    }

    #[test]
    fn mean_curvature_values() {
        assert_abs_diff_eq!(model_mean_curvature(3, 0.0, 1.0).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(model_mean_curvature(3, 1.0, PI / 2.0).unwrap(), 0.0, epsilon = 1e-14);
        let (s, c) = oracles::series_sn_pair(1.0, 3.0);
        assert_abs_diff_eq!(model_mean_curvature(3, 1.0, 3.0).unwrap(), 2.0 * c / s, epsilon = 1e-10);
        assert_abs_diff_eq!(model_mean_curvature(3, 1.0, 3.0).unwrap(), -14.031, epsilon = 1e-3);
        assert!(model_mean_curvature(3, 1.0, PI).is_err());
    }

    #[test]
    fn ball_volume_matches_the_oracle_reduction() {
        assert_abs_diff_eq!(model_ball_volume(2, 0.0, 1.0).unwrap(), PI, epsilon = 1e-13);
        assert_abs_diff_eq!(
            model_ball_volume(2, 1.0, PI).unwrap(),
            4.0 * PI,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            model_ball_volume(3, 0.0, 1.0).unwrap(),
            4.0 * PI / 3.0,
            epsilon = 1e-13
        );
        for &(n, k, r) in &[(2usize, -1.0, 2.0), (3, 1.0, 1.3), (4, -0.7, 1.1), (3, 2.5, 0.9)] {
            let oracle = oracles::closed_form_space_form(n, k, r).unwrap().ball_volume;
            assert_abs_diff_eq!(model_ball_volume(n, k, r).unwrap(), oracle, epsilon = 1e-9);
        }
        // quadrature fallback path (n > 4) against the oracle reduction
        let oracle = oracles::closed_form_space_form(5, -1.0, 1.2).unwrap().ball_volume;
        assert_abs_diff_eq!(model_ball_volume(5, -1.0, 1.2).unwrap(), oracle, epsilon = 1e-9);
        assert!(model_ball_volume(2, 1.0, PI + 0.1).is_err());
    }

    #[test]
    fn sn_solves_its_ode_under_central_differences() {
        let h = 1e-4;
        for &k in &[-1.0, 0.0, 1.0, 4.0] {
            let end = domain_end(k).min(8.0);
            for i in 1..40 {
                let t = end * i as f64 / 41.0;
                let second = (sn(k, t + h) - 2.0 * sn(k, t) + sn(k, t - h)) / (h * h);
                assert!(
                    (second + k * sn(k, t)).abs() <= 1e-8,
                    "f'' + k f residual too large at k={k}, t={t}"
                );
            }
        }
    }

    #[test]
    fn sn_ratio_approaches_one_over_t() {
        for &k in &[-1.0, 1.0, 4.0] {
            for m in 2..=6 {
                let t = 10f64.powi(-m);
                let gap = (sn_ratio(k, t).unwrap() - 1.0 / t).abs();
                assert!(gap <= 0.4 * k.abs() * t, "gap {gap} at k={k}, t={t}");
            }
        }
    }

    proptest! {
        #[test]
        fn scaling_identity(k in 0.05f64..50.0, frac in 0.01f64..0.99) {
            // sn(k, t) = sn(1, sqrt(k) t)/sqrt(k) for k > 0
            let t = frac * domain_end(k);
            let lhs = sn(k, t);
            let rhs = sn(1.0, k.sqrt() * t) / k.sqrt();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn ball_volume_is_strictly_increasing(
            k in -2.0f64..2.0,
            n in 2usize..5,
            lo in 0.05f64..0.45,
            step in 0.05f64..0.5,
        ) {
            let end = domain_end(k);
            let r1 = lo * end.min(6.0);
            let r2 = (lo + step) * end.min(6.0);
            prop_assume!(r2 <= end);
            let v1 = model_ball_volume(n, k, r1).unwrap();
            let v2 = model_ball_volume(n, k, r2).unwrap();
            prop_assert!(v2 > v1);
        }
    }
}
