//! Declarative model manifolds and the direction-chart machinery.
//!
//! A manifold here is exactly the data the radial flow consumes: a dimension
//! and the radial curvature operator R(theta, r) acting on the tangent space
//! of the geodesic sphere. Space forms provide k times the identity, warped
//! products -f''/f times the identity, and custom profiles supply the table
//! directly. Directions at the base point are addressed through stereographic
//! charts of the unit sphere, with an antipodal chart copy available so that
//! quadrature over all directions never meets the pole gap.

use nalgebra::DMatrix;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error("dimension {n} is below 2")]
    Dimension { n: usize },
    #[error("warped profile fails f(0)=0, f'(0)=1 at the probe radius: {detail}")]
    ProfileInitial { detail: String },
    #[error("custom curvature table at r={r} is not symmetric when lowered: asymmetry {asymmetry:e}")]
    AsymmetricTable { r: f64, asymmetry: f64 },
    #[error("custom curvature table at r={r} has shape {rows}x{cols}, expected {expected}x{expected}")]
    TableShape { r: f64, rows: usize, cols: usize, expected: usize },
    #[error("direction chart point has {got} coordinates, spec dimension {n} needs {expected}")]
    ChartArity { got: usize, n: usize, expected: usize },
}

/// Warping profiles f with f(0) = 0, f'(0) = 1, given with closed-form first
/// and second derivatives; the radial curvature of the product metric is
/// -f''/f.
#[derive(Debug, Clone, PartialEq)]
pub enum WarpedProfile {
    /// f = sin r (the unit sphere)
    Sin,
    /// f = sinh r (hyperbolic space)
    Sinh,
    /// f = r (flat space)
    Linear,
    /// f = r + r^3, a strictly convex profile with curvature -6/(1+r^2)
    PolyCubic,
    /// f = sin r + eps sin^3 r; keeps f(0)=0, f'(0)=1, f''(0)=0 and the first
    /// zero at pi while breaking constancy of the curvature
    PerturbedSin { eps: f64 },
}

impl WarpedProfile {
    /// Evaluate (f, f', f'') at radius r.
    pub fn jet(&self, r: f64) -> (f64, f64, f64) {
        match *self {
            WarpedProfile::Sin => (r.sin(), r.cos(), -r.sin()),
            WarpedProfile::Sinh => (r.sinh(), r.cosh(), r.sinh()),
            WarpedProfile::Linear => (r, 1.0, 0.0),
            WarpedProfile::PolyCubic => (r + r * r * r, 1.0 + 3.0 * r * r, 6.0 * r),
            WarpedProfile::PerturbedSin { eps } => {
                let (s, c) = (r.sin(), r.cos());
                let f = s + eps * s * s * s;
                let df = c + 3.0 * eps * s * s * c;
                let d2f = -s + eps * (6.0 * s * c * c - 3.0 * s * s * s);
                (f, df, d2f)
            }
        }
    }

    /// Radius of the first zero after 0, if the profile has one.
    pub fn first_zero(&self) -> Option<f64> {
        match *self {
            WarpedProfile::Sin | WarpedProfile::PerturbedSin { .. } => Some(std::f64::consts::PI),
            _ => None,
        }
    }
}

/// Provider of a custom radial curvature table: mixed components R_a^b at a
/// chart point and radius.
pub type CurvatureProvider = Arc<dyn Fn(&DirectionChartPoint, f64) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
pub enum ManifoldKind {
    SpaceForm { k: f64 },
    WarpedProduct { profile: WarpedProfile },
    CustomProfile { provider: CurvatureProvider, anisotropic: bool },
}

impl fmt::Debug for ManifoldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManifoldKind::SpaceForm { k } => write!(f, "SpaceForm {{ k: {k} }}"),
            ManifoldKind::WarpedProduct { profile } => {
                write!(f, "WarpedProduct {{ profile: {profile:?} }}")
            }
            ManifoldKind::CustomProfile { anisotropic, .. } => {
                write!(f, "CustomProfile {{ anisotropic: {anisotropic} }}")
            }
        }
    }
}

/// A declarative model manifold: dimension, curvature data, and the flag
/// gating volume runs (cut time assumed equal to the conjugate proxy).
#[derive(Debug, Clone)]
pub struct ManifoldSpec {
    n: usize,
    kind: ManifoldKind,
    cut_equals_conjugate: bool,
}

impl ManifoldSpec {
    pub fn space_form(n: usize, k: f64) -> Result<Self, ManifoldError> {
        Self::new(n, ManifoldKind::SpaceForm { k }, true)
    }

    pub fn warped(n: usize, profile: WarpedProfile) -> Result<Self, ManifoldError> {
        Self::new(n, ManifoldKind::WarpedProduct { profile }, true)
    }

    /// Custom curvature with a constant diagonal table, the declarative form
    /// accepted from config files. `anisotropic` tunes the conjugate-point
    /// estimator for single-direction degeneration.
    pub fn custom_diag(n: usize, diag: Vec<f64>, anisotropic: bool) -> Result<Self, ManifoldError> {
        let expected = n.checked_sub(1).unwrap_or(0);
        if diag.len() != expected {
            return Err(ManifoldError::TableShape {
                r: 0.0,
                rows: diag.len(),
                cols: 1,
                expected,
            });
        }
        let provider: CurvatureProvider =
            Arc::new(move |_theta, _r| DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag.clone())));
        Self::new(n, ManifoldKind::CustomProfile { provider, anisotropic }, false)
    }

    pub fn custom(
        n: usize,
        provider: CurvatureProvider,
        anisotropic: bool,
        cut_equals_conjugate: bool,
    ) -> Result<Self, ManifoldError> {
        Self::new(n, ManifoldKind::CustomProfile { provider, anisotropic }, cut_equals_conjugate)
    }

    pub fn new(n: usize, kind: ManifoldKind, cut_equals_conjugate: bool) -> Result<Self, ManifoldError> {
        if n < 2 {
            return Err(ManifoldError::Dimension { n });
        }
        if let ManifoldKind::WarpedProduct { profile } = &kind {
            // numerical check of the initial conditions at a small probe radius
            let probe = 1e-6;
            let (f, df, _) = profile.jet(probe);
            if (f / probe - 1.0).abs() > 1e-4 || (df - 1.0).abs() > 1e-4 {
                return Err(ManifoldError::ProfileInitial {
                    detail: format!("f({probe})={f}, f'({probe})={df}"),
                });
            }
        }
        Ok(ManifoldSpec { n, kind, cut_equals_conjugate })
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    /// Size of the sphere-tangent tables, n - 1.
    pub fn table_dim(&self) -> usize {
        self.n - 1
    }

    pub fn kind(&self) -> &ManifoldKind {
        &self.kind
    }

    pub fn cut_equals_conjugate(&self) -> bool {
        self.cut_equals_conjugate
    }

    pub fn with_cut_equals_conjugate(mut self, flag: bool) -> Self {
        self.cut_equals_conjugate = flag;
        self
    }

    pub fn is_anisotropic_custom(&self) -> bool {
        matches!(self.kind, ManifoldKind::CustomProfile { anisotropic: true, .. })
    }
}

/// Stereographic chart choices on the direction sphere. `North` projects from
/// the north pole (and covers everything else); `South` is the antipodal copy
/// used to keep chart coordinates small on the northern hemisphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartPole {
    North,
    South,
}

/// A unit direction at the base point, addressed in one of the two
/// stereographic charts of the direction sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionChartPoint {
    theta: Vec<f64>,
    pole: ChartPole,
}

impl DirectionChartPoint {
    pub fn new(theta: Vec<f64>) -> Self {
        DirectionChartPoint { theta, pole: ChartPole::North }
    }

    pub fn with_pole(theta: Vec<f64>, pole: ChartPole) -> Self {
        DirectionChartPoint { theta, pole }
    }

    /// Chart origin for dimension n (the n-1 zero vector).
    pub fn origin(n: usize) -> Self {
        DirectionChartPoint::new(vec![0.0; n - 1])
    }

    pub fn coords(&self) -> &[f64] {
        &self.theta
    }

    pub fn pole(&self) -> ChartPole {
        self.pole
    }

    pub fn norm_squared(&self) -> f64 {
        self.theta.iter().map(|t| t * t).sum()
    }

    fn check_arity(&self, n: usize) -> Result<(), ManifoldError> {
        if self.theta.len() + 1 != n {
            return Err(ManifoldError::ChartArity { got: self.theta.len(), n, expected: n - 1 });
        }
        Ok(())
    }
}

/// Inverse stereographic image of a chart point: a Euclidean unit vector in
/// R^n. From the north pole the origin maps to the south pole (0, ..., -1).
pub fn direction(theta: &DirectionChartPoint) -> Vec<f64> {
    let m = theta.theta.len();
    let norm2 = theta.norm_squared();
    let denom = 1.0 + norm2;
    let mut xi = Vec::with_capacity(m + 1);
    for t in &theta.theta {
        xi.push(2.0 * t / denom);
    }
    let last = (norm2 - 1.0) / denom;
    xi.push(match theta.pole {
        ChartPole::North => last,
        ChartPole::South => -last,
    });
    xi
}

/// Chart coordinates of a unit vector, preferring the chart whose projection
/// pole is on the far hemisphere so the coordinates satisfy |theta| <= 1.
/// Returns `None` only for the zero vector.
pub fn chart_point(xi: &[f64]) -> Option<DirectionChartPoint> {
    let norm: f64 = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    let last = xi[xi.len() - 1] / norm;
    let pole = if last <= 0.0 { ChartPole::North } else { ChartPole::South };
    let denom = match pole {
        ChartPole::North => 1.0 - last,
        ChartPole::South => 1.0 + last,
    };
    let theta = xi[..xi.len() - 1].iter().map(|x| x / norm / denom).collect();
    Some(DirectionChartPoint { theta, pole })
}

/// Round metric of the direction sphere in stereographic coordinates: the
/// conformal table 4 I / (1 + |theta|^2)^2.
pub fn sphere_metric(theta: &DirectionChartPoint) -> DMatrix<f64> {
    let m = theta.theta.len();
    let factor = 4.0 / (1.0 + theta.norm_squared()).powi(2);
    DMatrix::identity(m, m) * factor
}

/// The radial curvature operator at (theta, r): mixed components of
/// X -> Rm(X, d_r) d_r on the sphere tangent space.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialCurvatureTable {
    pub table: DMatrix<f64>,
    pub r: f64,
}

/// Symmetry tolerance for custom tables, checked after lowering an index with
/// the chart metric.
const TABLE_SYMMETRY_TOL: f64 = 1e-8;

pub fn radial_curvature(
    spec: &ManifoldSpec,
    theta: &DirectionChartPoint,
    r: f64,
) -> Result<RadialCurvatureTable, ManifoldError> {
    theta.check_arity(spec.dimension())?;
    let m = spec.table_dim();
    let table = match spec.kind() {
        ManifoldKind::SpaceForm { k } => DMatrix::identity(m, m) * *k,
        ManifoldKind::WarpedProduct { profile } => {
            let (f, _, d2f) = profile.jet(r);
            DMatrix::identity(m, m) * (-d2f / f)
        }
        ManifoldKind::CustomProfile { provider, .. } => {
            let table = provider(theta, r);
            if table.nrows() != m || table.ncols() != m {
                return Err(ManifoldError::TableShape {
                    r,
                    rows: table.nrows(),
                    cols: table.ncols(),
                    expected: m,
                });
            }
            // lowering with the conformal chart metric scales uniformly, so
            // the symmetry defect of the lowered form is the scaled defect of
            // the mixed table itself
            let factor = 4.0 / (1.0 + theta.norm_squared()).powi(2);
            let lowered = &table * factor;
            let asymmetry = (&lowered - lowered.transpose()).abs().max();
            if asymmetry > TABLE_SYMMETRY_TOL {
                return Err(ManifoldError::AsymmetricTable { r, asymmetry });
            }
            table
        }
    };
    Ok(RadialCurvatureTable { table, r })
}

/// Trace of the radial curvature operator: Ric(d_r, d_r) at (theta, r).
pub fn ricci_radial(spec: &ManifoldSpec, theta: &DirectionChartPoint, r: f64) -> Result<f64, ManifoldError> {
    Ok(radial_curvature(spec, theta, r)?.table.trace())
}

/// Extreme eigenvalues of the radial curvature operator: the sectional
/// curvature range of radial 2-planes for the supported model class.
pub fn radial_curvature_bounds(
    spec: &ManifoldSpec,
    theta: &DirectionChartPoint,
    r: f64,
) -> Result<(f64, f64), ManifoldError> {
    let table = radial_curvature(spec, theta, r)?.table;
    let sym = (&table + table.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in eig.eigenvalues.iter() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    Ok((lo, hi))
}

/// Sampled extremes of the radial curvature over `[r_lo, r_hi]`, used to
/// derive default comparison bounds for non-constant models.
pub fn sampled_curvature_range(
    spec: &ManifoldSpec,
    theta: &DirectionChartPoint,
    r_lo: f64,
    r_hi: f64,
    samples: usize,
) -> Result<(f64, f64), ManifoldError> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..samples {
        let r = r_lo + (r_hi - r_lo) * i as f64 / (samples - 1) as f64;
        let (a, b) = radial_curvature_bounds(spec, theta, r)?;
        lo = lo.min(a);
        hi = hi.max(b);
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn chart_origin_maps_to_the_antipodal_pole() {
        let xi = direction(&DirectionChartPoint::new(vec![0.0]));
        assert_eq!(xi, vec![0.0, -1.0]);
    }

    #[test]
    fn chart_point_one_maps_to_the_equator() {
        let xi = direction(&DirectionChartPoint::new(vec![1.0]));
        assert_abs_diff_eq!(xi[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(xi[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn sphere_metric_conformal_factor() {
        let at_origin = sphere_metric(&DirectionChartPoint::origin(3));
        assert_abs_diff_eq!(at_origin[(0, 0)], 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(at_origin[(1, 1)], 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(at_origin[(0, 1)], 0.0, epsilon = 1e-15);
        let unit = sphere_metric(&DirectionChartPoint::new(vec![1.0, 0.0]));
        assert_abs_diff_eq!(unit[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn sphere_metric_matches_the_gram_table_of_the_chart() {
        // pullback consistency: central differences of the inverse chart
        let h = 1e-5;
        for theta in [vec![0.3, -0.7], vec![1.4, 0.2], vec![0.0, 1.9]] {
            let point = DirectionChartPoint::new(theta.clone());
            let metric = sphere_metric(&point);
            let m = theta.len();
            let mut grads = Vec::new();
            for a in 0..m {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                plus[a] += h;
                minus[a] -= h;
                let xp = direction(&DirectionChartPoint::new(plus));
                let xm = direction(&DirectionChartPoint::new(minus));
                let grad: Vec<f64> =
                    xp.iter().zip(&xm).map(|(p, q)| (p - q) / (2.0 * h)).collect();
                grads.push(grad);
            }
            for a in 0..m {
                for b in 0..m {
                    let gram: f64 = grads[a].iter().zip(&grads[b]).map(|(x, y)| x * y).sum();
                    assert_abs_diff_eq!(gram, metric[(a, b)], epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn space_form_curvature_is_k_identity() {
        let spec = ManifoldSpec::space_form(3, 1.0).unwrap();
        let theta = DirectionChartPoint::new(vec![0.4, -0.1]);
        let r = radial_curvature(&spec, &theta, 0.7).unwrap();
        assert_eq!(r.table, DMatrix::identity(2, 2));
        assert_abs_diff_eq!(ricci_radial(&spec, &theta, 0.7).unwrap(), 2.0, epsilon = 1e-15);
        assert_eq!(radial_curvature_bounds(&spec, &theta, 0.7).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn warped_curvature_from_the_profile_jet() {
        let spec = ManifoldSpec::warped(2, WarpedProfile::Sinh).unwrap();
        let theta = DirectionChartPoint::origin(2);
        let r = radial_curvature(&spec, &theta, 2.0).unwrap();
        assert_abs_diff_eq!(r.table[(0, 0)], -1.0, epsilon = 1e-15);

        let spec = ManifoldSpec::warped(2, WarpedProfile::PolyCubic).unwrap();
        let r = radial_curvature(&spec, &theta, 1.0).unwrap();
        assert_abs_diff_eq!(r.table[(0, 0)], -3.0, epsilon = 1e-15);

        let spec = ManifoldSpec::warped(3, WarpedProfile::Sin).unwrap();
        let theta3 = DirectionChartPoint::origin(3);
        let bounds = radial_curvature_bounds(&spec, &theta3, std::f64::consts::PI / 3.0).unwrap();
        assert_abs_diff_eq!(bounds.0, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(bounds.1, 1.0, epsilon = 1e-14);

        let spec = ManifoldSpec::warped(3, WarpedProfile::Sinh).unwrap();
        assert_abs_diff_eq!(ricci_radial(&spec, &theta3, 1.0).unwrap(), -2.0, epsilon = 1e-15);
    }

    #[test]
    fn warped_curvature_stays_bounded_near_zero() {
        for profile in [
            WarpedProfile::Sin,
            WarpedProfile::Sinh,
            WarpedProfile::PolyCubic,
            WarpedProfile::PerturbedSin { eps: 0.05 },
        ] {
            let spec = ManifoldSpec::warped(3, profile).unwrap();
            let theta = DirectionChartPoint::origin(3);
            for i in 0..40 {
                let r = 1e-3 + (1e-1 - 1e-3) * i as f64 / 39.0;
                let (lo, hi) = radial_curvature_bounds(&spec, &theta, r).unwrap();
                assert!(lo.is_finite() && hi.is_finite() && hi.abs() < 10.0);
            }
        }
    }

    #[test]
    fn custom_diag_trace_and_bounds() {
        let spec = ManifoldSpec::custom_diag(3, vec![-1.0, 2.0], false).unwrap();
        let theta = DirectionChartPoint::origin(3);
        assert_abs_diff_eq!(ricci_radial(&spec, &theta, 0.5).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(radial_curvature_bounds(&spec, &theta, 0.5).unwrap(), (-1.0, 2.0));
    }

    #[test]
    fn asymmetric_custom_tables_are_rejected() {
        let provider: CurvatureProvider = Arc::new(|_, _| {
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
        });
        let spec = ManifoldSpec::custom(3, provider, false, false).unwrap();
        let theta = DirectionChartPoint::origin(3);
        assert!(matches!(
            radial_curvature(&spec, &theta, 0.5),
            Err(ManifoldError::AsymmetricTable { .. })
        ));
    }

    #[test]
    fn bad_profiles_and_dimensions_are_rejected() {
        assert!(ManifoldSpec::space_form(1, 0.0).is_err());
        // a profile violating f'(0) = 1 is not accepted as warped data
        let bad = ManifoldSpec::new(
            2,
            ManifoldKind::WarpedProduct { profile: WarpedProfile::PerturbedSin { eps: 1e6 } },
            true,
        );
        assert!(matches!(bad, Err(ManifoldError::ProfileInitial { .. })));
        let theta_wrong = DirectionChartPoint::new(vec![0.0, 0.0, 0.0]);
        let spec = ManifoldSpec::space_form(3, 1.0).unwrap();
        assert!(matches!(
            radial_curvature(&spec, &theta_wrong, 0.5),
            Err(ManifoldError::ChartArity { .. })
        ));
    }

    proptest! {
        #[test]
        fn direction_is_always_unit(
            coords in proptest::collection::vec(-10.0f64..10.0, 1..=4),
            south in any::<bool>(),
        ) {
            let pole = if south { ChartPole::South } else { ChartPole::North };
            let point = DirectionChartPoint::with_pole(coords, pole);
            let xi = direction(&point);
            let norm: f64 = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() <= 1e-14);
        }

        #[test]
        fn chart_round_trip(coords in proptest::collection::vec(-10.0f64..10.0, 1..=4)) {
            let point = DirectionChartPoint::new(coords.clone());
            let xi = direction(&point);
            let back = chart_point(&xi).unwrap();
            let again = direction(&back);
            for (a, b) in xi.iter().zip(&again) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            // when the original coordinates are already hemisphere-adapted the
            // round trip reproduces them exactly
            if point.norm_squared() <= 1.0 && back.pole() == ChartPole::North {
                for (a, b) in coords.iter().zip(back.coords()) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn sphere_metric_is_positive_definite(
            coords in proptest::collection::vec(-8.0f64..8.0, 1..=4),
        ) {
            let metric = sphere_metric(&DirectionChartPoint::new(coords));
            prop_assert!(nalgebra::Cholesky::new(metric).is_some());
        }
    }
}
