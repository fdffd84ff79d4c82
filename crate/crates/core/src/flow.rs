//! The radial flow: integration of the coupled system
//!
//! ```text
//! d/dr g = 2 S g,        d/dr S = -S^2 - R(theta, r)
//! ```
//!
//! along a geodesic ray, started from the singular small-radius data
//! g = eps^2 g_S, S = I/eps. The quadratic equation for S is of Riccati type
//! and genuinely blows up at the first conjugate radius; the integrator caps
//! its step by 1/(1 + |S|), halts once the metric has degenerated through ten
//! orders of magnitude or |S| passes 1e8, and a local fit of G^(1/m) then
//! extrapolates the degeneration radius.
//!
//! Two auxiliary scalars ride along in the state: the integral of the
//! normalized density (consumed by ball volumes) and the integral of the mean
//! curvature (consumed by the identity residuals).

use crate::manifold::{radial_curvature, sphere_metric, DirectionChartPoint, ManifoldError, ManifoldSpec};
use crate::ode::{self, DenseStep, OdeError, OdeOptions, StepControlFlow};
use crate::report::{csv_row, fmt_g17};
use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("start radius {eps} and end radius {r_max} do not satisfy 0 < eps <= 1e-2 < r_max")]
    BadWindow { eps: f64, r_max: f64 },
    #[error("step size underflow; last good radius {last_r}")]
    StepSizeUnderflow { last_r: f64 },
    #[error("state stopped being finite near radius {r}")]
    NonFinite { r: f64 },
    #[error("step budget exhausted at radius {r}")]
    StepBudget { r: f64 },
    #[error("trace has {states} states, need at least 3")]
    TraceTooShort { states: usize },
}

/// Output sampling of a trace: an evenly spaced count over `[eps, r_max]` or
/// an explicit increasing list of radii.
#[derive(Debug, Clone)]
pub enum GridSpec {
    Count(usize),
    Radii(Vec<f64>),
}

/// Integration controls. Defaults match the documented run configuration:
/// relative tolerance 1e-9, absolute 1e-12, degeneration floor 1e-10 on the
/// relative metric eigenvalue, shape-norm ceiling 1e8.
#[derive(Debug, Clone)]
pub struct StepControl {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Halt when lambda_min(g) falls below this fraction of its running peak.
    pub lambda_ratio_floor: f64,
    /// Halt when the Frobenius norm of S exceeds this.
    pub shape_norm_ceiling: f64,
    pub max_steps: usize,
    pub grid: GridSpec,
    /// Number of trailing integrator steps kept for the conjugate estimator.
    pub tail_length: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            lambda_ratio_floor: 1e-10,
            shape_norm_ceiling: 1e8,
            max_steps: 400_000,
            grid: GridSpec::Count(400),
            tail_length: 12,
        }
    }
}

impl StepControl {
    pub fn with_grid(mut self, grid: GridSpec) -> Self {
        self.grid = grid;
        self
    }

    /// A deeper degeneration chase, used by the scans that need the shape
    /// eigenvalues to cross a large divergence threshold before halting.
    pub fn deep_degeneration(mut self) -> Self {
        self.lambda_ratio_floor = 0.0;
        self
    }
}

/// Snapshot of the flow at one radius.
#[derive(Debug, Clone)]
pub struct RadialState {
    pub r: f64,
    /// Metric coefficients g_ab on the sphere chart.
    pub metric: DMatrix<f64>,
    /// Mixed shape operator components S_a^b.
    pub shape: DMatrix<f64>,
    /// Volume density G = sqrt(det g).
    pub density: f64,
    /// Mean curvature H = tr S.
    pub mean_curvature: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Accumulated integral of G / sqrt(det g_S) from the start radius.
    pub ghat_integral: f64,
    /// Accumulated integral of H from the start radius.
    pub h_integral: f64,
}

/// Why integration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaltReason {
    ReachedRadius,
    MetricDegenerate,
    ShapeOperatorBlowup,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateEvent {
    /// Estimated first degeneration radius.
    pub r0: f64,
    /// Accuracy bound reported by the estimator.
    pub estimator_error: f64,
}

/// States of one geodesic ray, sampled on the requested grid, plus the fine
/// trailing samples kept for degeneration estimates.
#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub spec: ManifoldSpec,
    pub theta: DirectionChartPoint,
    pub states: Vec<RadialState>,
    pub tail: Vec<RadialState>,
    pub halt: HaltReason,
    pub conjugate: Option<ConjugateEvent>,
}

const STATE_EPS_MAX: f64 = 1e-2;

fn pack(g: &DMatrix<f64>, s: &DMatrix<f64>, v: f64, a: f64) -> DVector<f64> {
    let m = g.nrows();
    let mut y = DVector::zeros(2 * m * m + 2);
    for i in 0..m {
        for j in 0..m {
            y[i * m + j] = g[(i, j)];
            y[m * m + i * m + j] = s[(i, j)];
        }
    }
    y[2 * m * m] = v;
    y[2 * m * m + 1] = a;
    y
}

fn unpack(y: &DVector<f64>, m: usize) -> (DMatrix<f64>, DMatrix<f64>, f64, f64) {
    let mut g = DMatrix::zeros(m, m);
    let mut s = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            g[(i, j)] = y[i * m + j];
            s[(i, j)] = y[m * m + i * m + j];
        }
    }
    (g, s, y[2 * m * m], y[2 * m * m + 1])
}

fn shape_norm_from_packed(y: &DVector<f64>, m: usize) -> f64 {
    let mut acc = 0.0;
    for i in m * m..2 * m * m {
        acc += y[i] * y[i];
    }
    acc.sqrt()
}

fn lambda_range(g: &DMatrix<f64>) -> (f64, f64) {
    let sym = (g + g.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in eig.eigenvalues.iter() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    (lo, hi)
}

/// Eigenvalue range of the shape operator. S is self-adjoint with respect to
/// g, so its spectrum is that of the pencil (S g, g); the Cholesky reduction
/// keeps everything symmetric. Falls back to the symmetrized matrix when g is
/// numerically degenerate.
fn mu_range(g: &DMatrix<f64>, s: &DMatrix<f64>) -> (f64, f64) {
    let m = g.nrows();
    let h = s * g;
    let sym_g = (g + g.transpose()) * 0.5;
    if let Some(chol) = Cholesky::new(sym_g) {
        let l = chol.l();
        if let Some(x) = l.solve_lower_triangular(&h) {
            if let Some(b) = l.solve_lower_triangular(&x.transpose()) {
                let b = (&b + b.transpose()) * 0.5;
                let eig = b.symmetric_eigen();
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for v in eig.eigenvalues.iter() {
                    lo = lo.min(*v);
                    hi = hi.max(*v);
                }
                return (lo, hi);
            }
        }
    }
    let sym_s = (s + s.transpose()) * 0.5;
    let eig = sym_s.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..m {
        lo = lo.min(eig.eigenvalues[i]);
        hi = hi.max(eig.eigenvalues[i]);
    }
    (lo, hi)
}

fn derive_state(r: f64, y: &DVector<f64>, m: usize, sqrt_det_gs: f64) -> RadialState {
    let (g, s, v, a) = unpack(y, m);
    let density = g.determinant().max(0.0).sqrt();
    let mean_curvature = s.trace();
    let (mu_min, mu_max) = mu_range(&g, &s);
    let (lambda_min, lambda_max) = lambda_range(&g);
    let _ = sqrt_det_gs;
    RadialState {
        r,
        metric: g,
        shape: s,
        density,
        mean_curvature,
        mu_min,
        mu_max,
        lambda_min,
        lambda_max,
        ghat_integral: v,
        h_integral: a,
    }
}

/// Leading-order data of the flow at the start radius: g = eps^2 g_S,
/// S = I/eps, with the accumulated integrals zeroed. The neglected terms are
/// O(eps^2) relative in g; `initialization_error` certifies them a posteriori.
pub fn initialize(spec: &ManifoldSpec, theta: &DirectionChartPoint, eps: f64) -> RadialState {
    debug_assert!(eps > 0.0 && eps <= STATE_EPS_MAX);
    let m = spec.table_dim();
    let gs = sphere_metric(theta);
    let g = &gs * (eps * eps);
    let s = DMatrix::identity(m, m) * (1.0 / eps);
    let sqrt_det_gs = gs.determinant().max(0.0).sqrt();
    let y = pack(&g, &s, 0.0, 0.0);
    derive_state(eps, &y, m, sqrt_det_gs)
}

fn resolve_grid(grid: &GridSpec, eps: f64, r_max: f64) -> Vec<f64> {
    match grid {
        GridSpec::Count(c) => {
            let c = (*c).max(2);
            (0..c)
                .map(|i| eps + (r_max - eps) * i as f64 / (c - 1) as f64)
                .collect()
        }
        GridSpec::Radii(radii) => {
            let mut out: Vec<f64> = radii
                .iter()
                .copied()
                .filter(|r| *r > eps && *r <= r_max)
                .collect();
            out.sort_by(|a, b| a.partial_cmp(b).expect("finite radii"));
            out.dedup();
            out.insert(0, eps);
            out
        }
    }
}

/// Integrate the flow from `eps` to `r_max` along the direction `theta`.
///
/// The trace is sampled on the requested grid; if the metric degenerates the
/// run halts early, estimates the degeneration radius from its trailing
/// steps, and records the event.
pub fn integrate(
    spec: &ManifoldSpec,
    theta: &DirectionChartPoint,
    eps: f64,
    r_max: f64,
    ctl: &StepControl,
) -> Result<FlowTrace, FlowError> {
    if !(eps > 0.0 && eps <= STATE_EPS_MAX && eps < r_max) {
        return Err(FlowError::BadWindow { eps, r_max });
    }
    let m = spec.table_dim();
    let gs = sphere_metric(theta);
    let sqrt_det_gs = gs.determinant().max(0.0).sqrt();
    let grid = resolve_grid(&ctl.grid, eps, r_max);

    let g0 = &gs * (eps * eps);
    let s0 = DMatrix::identity(m, m) * (1.0 / eps);
    let y0 = pack(&g0, &s0, 0.0, 0.0);

    let mut states: Vec<RadialState> = Vec::with_capacity(grid.len());
    states.push(derive_state(eps, &y0, m, sqrt_det_gs));
    let mut next_grid = 1usize;

    let mut tail: Vec<(f64, DVector<f64>)> = Vec::new();
    let mut lambda_peak = 0.0f64;
    let mut halt_reason = HaltReason::ReachedRadius;

    let mut g_buf = DMatrix::zeros(m, m);
    let mut s_buf = DMatrix::zeros(m, m);

    let rhs = |r: f64, y: &DVector<f64>, dy: &mut DVector<f64>| -> Result<(), ManifoldError> {
        let mut g_buf = DMatrix::zeros(m, m);
        let mut s_buf = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                g_buf[(i, j)] = y[i * m + j];
                s_buf[(i, j)] = y[m * m + i * m + j];
            }
        }
        let curvature = radial_curvature(spec, theta, r)?.table;
        let dg = &s_buf * &g_buf * 2.0;
        let ds = -(&s_buf * &s_buf) - curvature;
        for i in 0..m {
            for j in 0..m {
                dy[i * m + j] = dg[(i, j)];
                dy[m * m + i * m + j] = ds[(i, j)];
            }
        }
        dy[2 * m * m] = g_buf.determinant().max(0.0).sqrt() / sqrt_det_gs;
        dy[2 * m * m + 1] = s_buf.trace();
        Ok(())
    };

    let opts = OdeOptions { rel_tol: ctl.rel_tol, abs_tol: ctl.abs_tol, max_steps: ctl.max_steps };
    let outcome = ode::integrate(
        rhs,
        eps,
        y0,
        r_max,
        &opts,
        |_r, y| 1.0 / (1.0 + shape_norm_from_packed(y, m)),
        |step: &DenseStep<'_>| {
            while next_grid < grid.len() && grid[next_grid] <= step.t1 {
                let r = grid[next_grid];
                let y = if r == step.t1 { step.y1.clone() } else { step.eval(r) };
                states.push(derive_state(r, &y, m, sqrt_det_gs));
                next_grid += 1;
            }
            tail.push((step.t1, step.y1.clone()));
            if tail.len() > ctl.tail_length {
                tail.remove(0);
            }
            for i in 0..m {
                for j in 0..m {
                    g_buf[(i, j)] = step.y1[i * m + j];
                    s_buf[(i, j)] = step.y1[m * m + i * m + j];
                }
            }
            let (lambda_min, _) = lambda_range(&g_buf);
            lambda_peak = lambda_peak.max(lambda_min);
            if lambda_peak > 0.0 && lambda_min < ctl.lambda_ratio_floor * lambda_peak {
                halt_reason = HaltReason::MetricDegenerate;
                return StepControlFlow::Halt;
            }
            if shape_norm_from_packed(step.y1, m) > ctl.shape_norm_ceiling {
                halt_reason = HaltReason::ShapeOperatorBlowup;
                return StepControlFlow::Halt;
            }
            StepControlFlow::Continue
        },
    );

    match outcome {
        Ok(_) => {}
        Err(OdeError::Rhs(e)) => return Err(FlowError::Manifold(e)),
        Err(OdeError::StepSizeUnderflow { t }) => {
            return Err(FlowError::StepSizeUnderflow { last_r: t })
        }
        Err(OdeError::NonFiniteState { t }) => return Err(FlowError::NonFinite { r: t }),
        Err(OdeError::MaxStepsExceeded { t }) => return Err(FlowError::StepBudget { r: t }),
    }

    let tail_states: Vec<RadialState> =
        tail.iter().map(|(r, y)| derive_state(*r, y, m, sqrt_det_gs)).collect();
    let conjugate = if halt_reason == HaltReason::ReachedRadius {
        None
    } else {
        Some(estimate_conjugate(&tail_states, fit_exponent(spec)))
    };

    Ok(FlowTrace {
        spec: spec.clone(),
        theta: theta.clone(),
        states,
        tail: tail_states,
        halt: halt_reason,
        conjugate,
    })
}

/// Exponent m in the local degeneration model G ~ c (r0 - r)^m: the full
/// sphere dimension for isotropic collapse, one for custom runs flagged
/// anisotropic (a single-direction heuristic, reflected in the error bound).
fn fit_exponent(spec: &ManifoldSpec) -> f64 {
    if spec.is_anisotropic_custom() {
        1.0
    } else {
        (spec.dimension() - 1) as f64
    }
}

fn linear_root(r1: f64, y1: f64, r2: f64, y2: f64) -> Option<f64> {
    if y1 <= y2 {
        return None;
    }
    Some((y1 * r2 - y2 * r1) / (y1 - y2))
}

fn estimate_conjugate(tail: &[RadialState], m_fit: f64) -> ConjugateEvent {
    let samples: Vec<(f64, f64)> = tail
        .iter()
        .filter(|s| s.density > 0.0)
        .map(|s| (s.r, s.density.powf(1.0 / m_fit)))
        .collect();
    let n = samples.len();
    if n < 3 {
        let r_last = tail.last().map(|s| s.r).unwrap_or(0.0);
        return ConjugateEvent { r0: r_last, estimator_error: 1e-3 };
    }
    let fit_last = linear_root(samples[n - 2].0, samples[n - 2].1, samples[n - 1].0, samples[n - 1].1);
    let fit_prev = linear_root(samples[n - 3].0, samples[n - 3].1, samples[n - 2].0, samples[n - 2].1);
    match (fit_last, fit_prev) {
        (Some(a), Some(b)) => {
            let r_last = samples[n - 1].0;
            let r0 = a.max(r_last);
            let spread = (a - b).abs();
            ConjugateEvent { r0, estimator_error: (8.0 * spread).max(1e-9) }
        }
        _ => {
            let r_last = samples[n - 1].0;
            ConjugateEvent { r0: r_last, estimator_error: 1e-3 }
        }
    }
}

/// Re-derive the degeneration event from a trace's trailing samples. Absence
/// of an event (the run reached its end radius) is a valid result.
pub fn detect_conjugate(trace: &FlowTrace) -> Option<ConjugateEvent> {
    if trace.halt == HaltReason::ReachedRadius {
        return None;
    }
    Some(estimate_conjugate(&trace.tail, fit_exponent(&trace.spec)))
}

/// Residuals of the structural identities along a trace: the logarithmic
/// density derivative against the mean curvature (compared in integral form
/// over each grid interval, which stays meaningful next to the degeneration),
/// and the symmetry defect of the lowered shape operator h = S g.
#[derive(Debug, Clone, Copy)]
pub struct ConsistencyReport {
    pub max_log_density_residual: f64,
    pub log_density_residual_at: f64,
    pub max_h_asymmetry: f64,
    pub h_asymmetry_at: f64,
}

pub fn consistency_report(trace: &FlowTrace) -> Result<ConsistencyReport, FlowError> {
    if trace.states.len() < 3 {
        return Err(FlowError::TraceTooShort { states: trace.states.len() });
    }
    let mut worst_res = 0.0f64;
    let mut worst_res_at = trace.states[0].r;
    for pair in trace.states.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.density <= 0.0 || b.density <= 0.0 {
            continue;
        }
        let dr = b.r - a.r;
        let res = ((b.density.ln() - a.density.ln()) - (b.h_integral - a.h_integral)).abs() / dr;
        if res > worst_res {
            worst_res = res;
            worst_res_at = b.r;
        }
    }
    let mut worst_asym = 0.0f64;
    let mut worst_asym_at = trace.states[0].r;
    for state in &trace.states {
        let h = &state.shape * &state.metric;
        let defect = (&h - h.transpose()).abs().max();
        if defect > worst_asym {
            worst_asym = defect;
            worst_asym_at = state.r;
        }
    }
    Ok(ConsistencyReport {
        max_log_density_residual: worst_res,
        log_density_residual_at: worst_res_at,
        max_h_asymmetry: worst_asym,
        h_asymmetry_at: worst_asym_at,
    })
}

/// A posteriori certificate of the start-radius truncation: the same ray is
/// run from `eps` and `eps/2` and compared at `r_probe`. The leading error is
/// O(eps^2), so the Richardson factor 4/3 turns the observed difference into
/// a bound for the `eps` run.
#[derive(Debug, Clone, Copy)]
pub struct InitializationCertificate {
    pub measured_difference: f64,
    pub certified_bound: f64,
}

pub fn initialization_error(
    spec: &ManifoldSpec,
    theta: &DirectionChartPoint,
    eps: f64,
    r_probe: f64,
    ctl: &StepControl,
) -> Result<InitializationCertificate, FlowError> {
    let ctl = ctl.clone().with_grid(GridSpec::Radii(vec![r_probe]));
    let coarse = integrate(spec, theta, eps, r_probe, &ctl)?;
    let fine = integrate(spec, theta, eps / 2.0, r_probe, &ctl)?;
    let ga = &coarse.states.last().unwrap().metric;
    let gb = &fine.states.last().unwrap().metric;
    let scale = gb.abs().max().max(f64::MIN_POSITIVE);
    let diff = (ga - gb).abs().max() / scale;
    Ok(InitializationCertificate {
        measured_difference: diff,
        certified_bound: diff * 4.0 / 3.0 + 1e-12,
    })
}

/// CSV rendering of the sampled states: the scalar columns followed by the
/// flattened g and S tables in row-major chart order.
pub fn trace_csv(trace: &FlowTrace) -> String {
    let m = trace.spec.table_dim();
    let mut header = String::from("r,G,H,mu_min,mu_max,lambda_min,lambda_max");
    for i in 0..m {
        for j in 0..m {
            header.push_str(&format!(",g_{i}{j}"));
        }
    }
    for i in 0..m {
        for j in 0..m {
            header.push_str(&format!(",S_{i}{j}"));
        }
    }
    header.push('\n');
    let mut out = header;
    for s in &trace.states {
        let mut fields = vec![
            fmt_g17(s.r),
            fmt_g17(s.density),
            fmt_g17(s.mean_curvature),
            fmt_g17(s.mu_min),
            fmt_g17(s.mu_max),
            fmt_g17(s.lambda_min),
            fmt_g17(s.lambda_max),
        ];
        for i in 0..m {
            for j in 0..m {
                fields.push(fmt_g17(s.metric[(i, j)]));
            }
        }
        for i in 0..m {
            for j in 0..m {
                fields.push(fmt_g17(s.shape[(i, j)]));
            }
        }
        out.push_str(&csv_row(fields));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::WarpedProfile;
    use crate::spaceform::{sn, sn_ratio};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn sf(n: usize, k: f64) -> ManifoldSpec {
        ManifoldSpec::space_form(n, k).unwrap()
    }

    #[test]
    fn initialization_matches_the_leading_asymptotics() {
        let spec = sf(2, 1.0);
        let theta = DirectionChartPoint::origin(2);
        let state = initialize(&spec, &theta, 1e-3);
        assert_abs_diff_eq!(state.metric[(0, 0)], 4e-6, epsilon = 1e-20);
        assert_abs_diff_eq!(state.shape[(0, 0)], 1000.0, epsilon = 1e-12);
        assert_abs_diff_eq!(state.mean_curvature, 1000.0, epsilon = 1e-12);
        // G = eps^(n-1) sqrt(det g_S)
        assert_abs_diff_eq!(state.density, 1e-3 * 2.0, epsilon = 1e-18);

        let spec3 = sf(3, 0.0);
        let theta3 = DirectionChartPoint::new(vec![0.3, -0.2]);
        let state3 = initialize(&spec3, &theta3, 1e-3);
        let gs = sphere_metric(&theta3);
        let expected_density = 1e-6 * gs.determinant().sqrt();
        assert_abs_diff_eq!(state3.density, expected_density, epsilon = 1e-18);
        assert_abs_diff_eq!(state3.mean_curvature, 2000.0, epsilon = 1e-11);
    }

    #[test]
    fn sphere_flow_recovers_the_closed_form() {
        let spec = sf(2, 1.0);
        let theta = DirectionChartPoint::new(vec![0.4]);
        let ctl = StepControl::default().with_grid(GridSpec::Count(240));
        let trace = integrate(&spec, &theta, 3e-4, 3.0, &ctl).unwrap();
        let gs = sphere_metric(&theta)[(0, 0)];
        for state in trace.states.iter().filter(|s| s.r >= 0.05) {
            let g_exact = state.r.sin().powi(2) * gs;
            let s_exact = state.r.cos() / state.r.sin();
            assert!(
                (state.metric[(0, 0)] - g_exact).abs() <= 1e-6 * g_exact.abs(),
                "metric off at r={}",
                state.r
            );
            assert!(
                (state.shape[(0, 0)] - s_exact).abs() <= 1e-6 * (1.0 + s_exact.abs()),
                "shape off at r={}",
                state.r
            );
        }
    }

    #[test]
    fn flat_flow_mean_curvature_identity() {
        let spec = sf(3, 0.0);
        let theta = DirectionChartPoint::origin(3);
        let ctl = StepControl::default().with_grid(GridSpec::Count(300));
        let trace = integrate(&spec, &theta, 1e-3, 10.0, &ctl).unwrap();
        assert_eq!(trace.halt, HaltReason::ReachedRadius);
        for state in trace.states.iter().filter(|s| s.r >= 0.1) {
            assert!(
                (state.mean_curvature * state.r - 2.0).abs() <= 1e-8,
                "H r = {} at r = {}",
                state.mean_curvature * state.r,
                state.r
            );
        }
    }

    #[test]
    fn hyperbolic_warped_shape_operator() {
        let spec = ManifoldSpec::warped(2, WarpedProfile::Sinh).unwrap();
        let theta = DirectionChartPoint::origin(2);
        let ctl = StepControl::default().with_grid(GridSpec::Radii(vec![2.0]));
        let trace = integrate(&spec, &theta, 1e-3, 2.0, &ctl).unwrap();
        let coth2 = 2.0f64.cosh() / 2.0f64.sinh();
        let last = trace.states.last().unwrap();
        assert_abs_diff_eq!(last.mu_max, coth2, epsilon = 1e-6);
    }

    #[test]
    fn conjugate_radius_of_the_unit_sphere() {
        for n in [2usize, 3] {
            let spec = sf(n, 1.0);
            let theta = DirectionChartPoint::origin(n);
            let trace = integrate(&spec, &theta, 1e-3, 4.0, &StepControl::default()).unwrap();
            let event = trace.conjugate.expect("degeneration expected");
            assert!((event.r0 - PI).abs() <= 1e-3, "r0 = {} (n = {n})", event.r0);
            assert!(event.estimator_error <= 1e-3);
            assert_eq!(detect_conjugate(&trace).unwrap(), event);
        }
    }

    #[test]
    fn conjugate_radius_scales_with_curvature() {
        let spec = sf(3, 4.0);
        let theta = DirectionChartPoint::origin(3);
        let trace = integrate(&spec, &theta, 1e-3, 3.0, &StepControl::default()).unwrap();
        let event = trace.conjugate.expect("degeneration expected");
        assert!((event.r0 - PI / 2.0).abs() <= 1e-3, "r0 = {}", event.r0);
    }

    #[test]
    fn nonpositive_curvature_runs_to_the_end() {
        for k in [0.0, -1.0] {
            let spec = sf(2, k);
            let theta = DirectionChartPoint::origin(2);
            let trace = integrate(&spec, &theta, 1e-3, 10.0, &StepControl::default()).unwrap();
            assert_eq!(trace.halt, HaltReason::ReachedRadius);
            assert!(trace.conjugate.is_none());
            assert!(detect_conjugate(&trace).is_none());
        }
    }

    #[test]
    fn estimator_is_stable_under_tolerance_halving() {
        let spec = sf(2, 1.0);
        let theta = DirectionChartPoint::origin(2);
        let coarse = integrate(&spec, &theta, 1e-3, 4.0, &StepControl::default()).unwrap();
        let mut tight = StepControl::default();
        tight.rel_tol *= 0.5;
        tight.abs_tol *= 0.5;
        let fine = integrate(&spec, &theta, 1e-3, 4.0, &tight).unwrap();
        let a = coarse.conjugate.unwrap();
        let b = fine.conjugate.unwrap();
        assert!((a.r0 - b.r0).abs() <= a.estimator_error.max(b.estimator_error));
    }

    #[test]
    fn initial_limit_is_recovered_at_ten_eps() {
        for (n, k) in [(2usize, 1.0), (3, -1.0), (3, 0.0)] {
            let spec = sf(n, k);
            let theta = DirectionChartPoint::origin(n);
            let eps = 1e-3;
            let ctl = StepControl::default().with_grid(GridSpec::Radii(vec![10.0 * eps]));
            let trace = integrate(&spec, &theta, eps, 10.0 * eps, &ctl).unwrap();
            let state = trace.states.last().unwrap();
            let value = state.r * state.mean_curvature / (n as f64 - 1.0);
            assert!((value - 1.0).abs() <= 1e-3, "rH/(n-1) = {value}");
        }
    }

    #[test]
    fn riccati_self_consistency_on_space_forms() {
        for k in [1.0f64, -1.0] {
            let spec = sf(3, k);
            let theta = DirectionChartPoint::new(vec![0.2, 0.1]);
            let upper = if k > 0.0 { 0.95 * PI } else { 3.0 };
            let ctl = StepControl::default().with_grid(GridSpec::Count(200));
            let trace = integrate(&spec, &theta, 1e-3, upper, &ctl).unwrap();
            for state in trace.states.iter().filter(|s| s.r >= 0.05) {
                let expected = sn_ratio(k, state.r).unwrap();
                let defect =
                    (&state.shape - DMatrix::identity(2, 2) * expected).abs().max();
                assert!(defect <= 1e-6 * (1.0 + expected.abs()), "defect {defect} at r={}", state.r);
            }
        }
    }

    #[test]
    fn eigenvalue_envelopes_hold_along_traces() {
        // mu'_max <= -mu_max^2 - k + tol, mu'_min >= -mu_min^2 - K - tol and
        // the lambda coupling, under central differences on the grid
        let cases: Vec<(ManifoldSpec, f64, f64, f64)> = vec![
            (sf(2, 1.0), 1.0, 1.0, 2.8),
            (sf(3, -1.0), -1.0, -1.0, 5.0),
            (ManifoldSpec::warped(3, WarpedProfile::PolyCubic).unwrap(), -6.0, 0.0, 5.0),
            (ManifoldSpec::custom_diag(3, vec![-1.0, 2.0], false).unwrap(), -1.0, 2.0, 1.9),
        ];
        for (spec, k_lo, k_hi, r_max) in cases {
            let theta = DirectionChartPoint::origin(spec.dimension());
            let ctl = StepControl::default().with_grid(GridSpec::Count(600));
            let trace = integrate(&spec, &theta, 1e-3, r_max, &ctl).unwrap();
            let states: Vec<_> = trace.states.iter().filter(|s| s.r >= 0.05).collect();
            for w in states.windows(3) {
                let dr = w[2].r - w[0].r;
                let shape_scale = w[1].shape.norm();
                let tol = 1e-3 * (1.0 + shape_scale * shape_scale);
                let dmu_max = (w[2].mu_max - w[0].mu_max) / dr;
                let dmu_min = (w[2].mu_min - w[0].mu_min) / dr;
                assert!(
                    dmu_max <= -w[1].mu_max * w[1].mu_max - k_lo + tol,
                    "mu_max envelope violated at r={}",
                    w[1].r
                );
                assert!(
                    dmu_min >= -w[1].mu_min * w[1].mu_min - k_hi - tol,
                    "mu_min envelope violated at r={}",
                    w[1].r
                );
                let lam_tol = 1e-3 * (1.0 + shape_scale) * (1.0 + w[1].lambda_max);
                let dlam_max = (w[2].lambda_max - w[0].lambda_max) / dr;
                let dlam_min = (w[2].lambda_min - w[0].lambda_min) / dr;
                assert!(dlam_max <= 2.0 * w[1].lambda_max * w[1].mu_max + lam_tol);
                assert!(dlam_min >= 2.0 * w[1].lambda_min * w[1].mu_min - lam_tol);
            }
        }
    }

    #[test]
    fn consistency_residuals_are_small() {
        let flat = integrate(
            &sf(3, 0.0),
            &DirectionChartPoint::origin(3),
            1e-3,
            5.0,
            &StepControl::default().with_grid(GridSpec::Count(300)),
        )
        .unwrap();
        let report = consistency_report(&flat).unwrap();
        assert!(report.max_log_density_residual <= 1e-6, "{report:?}");
        assert!(report.max_h_asymmetry <= 1e-8);

        let sphere = integrate(
            &sf(2, 1.0),
            &DirectionChartPoint::origin(2),
            1e-3,
            3.05,
            &StepControl::default().with_grid(GridSpec::Count(300)),
        )
        .unwrap();
        let report = consistency_report(&sphere).unwrap();
        assert!(report.max_log_density_residual <= 1e-4, "{report:?}");

        let custom = integrate(
            &ManifoldSpec::custom_diag(3, vec![-1.0, 2.0], false).unwrap(),
            &DirectionChartPoint::origin(3),
            1e-3,
            1.9,
            &StepControl::default().with_grid(GridSpec::Count(200)),
        )
        .unwrap();
        let report = consistency_report(&custom).unwrap();
        assert!(report.max_h_asymmetry <= 1e-8, "{report:?}");
    }

    #[test]
    fn initialization_certificate_bounds_the_real_error() {
        let spec = sf(2, 1.0);
        let theta = DirectionChartPoint::origin(2);
        let eps = 2e-3;
        let cert = initialization_error(&spec, &theta, eps, 1.0, &StepControl::default()).unwrap();
        let ctl = StepControl::default().with_grid(GridSpec::Radii(vec![1.0]));
        let trace = integrate(&spec, &theta, eps, 1.0, &ctl).unwrap();
        let g_num = trace.states.last().unwrap().metric[(0, 0)];
        let g_true = sn(1.0, 1.0).powi(2) * sphere_metric(&theta)[(0, 0)];
        let true_rel = (g_num - g_true).abs() / g_true;
        assert!(true_rel <= 2.0 * cert.certified_bound, "{true_rel} vs {cert:?}");
        assert!(cert.certified_bound <= 10.0 * eps * eps);
    }

    #[test]
    fn window_validation_and_short_traces() {
        let spec = sf(2, 0.0);
        let theta = DirectionChartPoint::origin(2);
        assert!(matches!(
            integrate(&spec, &theta, 0.5, 0.4, &StepControl::default()),
            Err(FlowError::BadWindow { .. })
        ));
        assert!(matches!(
            integrate(&spec, &theta, 0.1, 5.0, &StepControl::default()),
            Err(FlowError::BadWindow { .. })
        ));
        let ctl = StepControl::default().with_grid(GridSpec::Radii(vec![1.0]));
        let trace = integrate(&spec, &theta, 1e-3, 1.0, &ctl).unwrap();
        assert!(matches!(
            consistency_report(&trace),
            Err(FlowError::TraceTooShort { states: 2 })
        ));
    }

    #[test]
    fn csv_has_the_documented_header() {
        let spec = sf(3, 0.0);
        let theta = DirectionChartPoint::origin(3);
        let ctl = StepControl::default().with_grid(GridSpec::Count(4));
        let trace = integrate(&spec, &theta, 1e-3, 1.0, &ctl).unwrap();
        let csv = trace_csv(&trace);
        let header = csv.lines().next().unwrap();
        assert_eq!(
            header,
            "r,G,H,mu_min,mu_max,lambda_min,lambda_max,\
             g_00,g_01,g_10,g_11,S_00,S_01,S_10,S_11"
        );
        assert_eq!(csv.lines().count(), 5);
    }
}
