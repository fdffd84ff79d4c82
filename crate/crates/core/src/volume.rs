//! Geodesic-ball volume by quadrature over directions, and the volume
//! comparison checks.
//!
//! The volume of a ball of radius r is the direction integral of the radial
//! density, each ray integrating up to min(r, degeneration radius). The
//! density per unit round-sphere measure rides inside the flow state, so one
//! trace per direction yields the whole volume curve. Direction quadrature is
//! intrinsic (exact sphere measure); the stereographic charts only address
//! the rays, with the antipodal copy keeping coordinates small on the
//! northern hemisphere.
//!
//! A ball volume is only meaningful when rays stop at the cut locus; the cut
//! time is replaced by the first conjugate radius here, which is exact for
//! rotationally symmetric models at the pole and gated by the spec flag
//! `cut_equals_conjugate` otherwise.

use crate::comparison::{ComparisonVerdict, Tolerance};
use crate::flow::{self, FlowError, GridSpec, StepControl};
use crate::manifold::{
    chart_point, ricci_radial, sphere_metric, DirectionChartPoint, ManifoldError, ManifoldSpec,
};
use crate::oracles::sphere_measure;
use crate::quadrature::{gauss_legendre, pairwise_sum};
use crate::report::{csv_row, fmt_g17};
use crate::spaceform::{domain_end, model_ball_volume, sn, KernelError};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("volume runs need the cut_equals_conjugate flag on the manifold spec")]
    CutFlagRequired,
    #[error("direction quadrature supports dimensions 2..=4, got {n}")]
    UnsupportedDimension { n: usize },
    #[error("{check}: hypothesis violated: {detail}")]
    HypothesisViolated { check: &'static str, detail: String },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

const HYPOTHESIS_SLACK: f64 = 1e-6;
/// Allowed increase between consecutive volume ratios in the monotonicity
/// check.
const RATIO_MONOTONE_TOL: f64 = 1e-8;
/// Allowed gap of the smallest-radius ratio from one.
const RATIO_LIMIT_TOL: f64 = 1e-2;

/// Direction nodes and intrinsic sphere weights; integrating the constant 1
/// recovers the full sphere measure.
#[derive(Debug, Clone)]
pub struct QuadratureScheme {
    pub nodes: Vec<DirectionChartPoint>,
    pub weights: Vec<f64>,
    n: usize,
}

impl QuadratureScheme {
    pub fn dimension(&self) -> usize {
        self.n
    }

    /// Integrate a function of the unit direction vector.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(node, w)| w * f(&crate::manifold::direction(node)))
            .collect();
        pairwise_sum(&terms)
    }
}

/// Build the direction quadrature for dimension `n` at the given order:
/// uniform nodes on the circle for n = 2, tensor Gauss–Legendre in intrinsic
/// spherical angles for n = 3 and 4. Nodes are pushed through whichever of
/// the two antipodal stereographic charts keeps their coordinates inside the
/// unit ball, so the pole gap of a single chart is never touched.
pub fn build_quadrature(n: usize, order: usize) -> Result<QuadratureScheme, VolumeError> {
    if !(2..=4).contains(&n) {
        return Err(VolumeError::UnsupportedDimension { n });
    }
    let order = order.max(2);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let two_pi = 2.0 * std::f64::consts::PI;
    match n {
        2 => {
            // half-offset angles never hit the poles (0, +-1)
            for j in 0..order {
                let phi = two_pi * (j as f64 + 0.5) / order as f64;
                let xi = [phi.sin(), phi.cos()];
                nodes.push(chart_point(&xi).expect("off-pole node"));
                weights.push(two_pi / order as f64);
            }
        }
        3 => {
            let (us, wus) = gauss_legendre(order);
            for (u, wu) in us.iter().zip(&wus) {
                let sin_phi = (1.0 - u * u).sqrt();
                for j in 0..order {
                    let psi = two_pi * (j as f64 + 0.5) / order as f64;
                    let xi = [sin_phi * psi.cos(), sin_phi * psi.sin(), *u];
                    nodes.push(chart_point(&xi).expect("off-pole node"));
                    weights.push(wu * two_pi / order as f64);
                }
            }
        }
        4 => {
            let (xs, wxs) = gauss_legendre(order);
            let (us, wus) = gauss_legendre(order);
            let half_pi = std::f64::consts::PI / 2.0;
            for (x, wx) in xs.iter().zip(&wxs) {
                let phi1 = half_pi * (x + 1.0);
                let (s1, c1) = (phi1.sin(), phi1.cos());
                let w1 = wx * half_pi * s1 * s1;
                for (u, wu) in us.iter().zip(&wus) {
                    let s2 = (1.0 - u * u).sqrt();
                    for j in 0..order {
                        let psi = two_pi * (j as f64 + 0.5) / order as f64;
                        let xi = [s1 * s2 * psi.cos(), s1 * s2 * psi.sin(), s1 * u, c1];
                        nodes.push(chart_point(&xi).expect("off-pole node"));
                        weights.push(w1 * wu * two_pi / order as f64);
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(QuadratureScheme { nodes, weights, n })
}

/// Per-direction radial data at the curve radii: the accumulated normalized
/// density integral, the density itself, and the degeneration radius if one
/// was met.
struct DirectionProfile {
    ghat_integral: Vec<f64>,
    ghat: Vec<f64>,
    stop_radius: Option<f64>,
}

fn direction_profile(
    spec: &ManifoldSpec,
    theta: &DirectionChartPoint,
    eps: f64,
    radii: &[f64],
    ctl: &StepControl,
) -> Result<DirectionProfile, VolumeError> {
    let r_max = radii.iter().copied().fold(0.0f64, f64::max);
    let ctl = ctl.clone().with_grid(GridSpec::Radii(radii.to_vec()));
    let trace = flow::integrate(spec, theta, eps, r_max, &ctl)?;
    let sqrt_det_gs = sphere_metric(theta).determinant().max(0.0).sqrt();
    // value once the ray has fully degenerated
    let saturated = trace.tail.last().map(|s| s.ghat_integral);
    let mut ghat_integral = Vec::with_capacity(radii.len());
    let mut ghat = Vec::with_capacity(radii.len());
    for &r in radii {
        match trace.states.iter().find(|s| s.r == r) {
            Some(state) => {
                ghat_integral.push(state.ghat_integral);
                ghat.push(state.density / sqrt_det_gs);
            }
            None => {
                // beyond the degeneration radius: the integral has saturated
                ghat_integral.push(saturated.unwrap_or(0.0));
                ghat.push(0.0);
            }
        }
    }
    Ok(DirectionProfile { ghat_integral, ghat, stop_radius: trace.conjugate.map(|e| e.r0) })
}

fn require_cut_flag(spec: &ManifoldSpec) -> Result<(), VolumeError> {
    if spec.cut_equals_conjugate() {
        Ok(())
    } else {
        Err(VolumeError::CutFlagRequired)
    }
}

/// Short-radius stub of the radial integral: the flow starts at eps and the
/// normalized density is t^(n-1) to leading order, so the missing piece is
/// eps^n/n (error O(eps^(n+2))).
fn radial_stub(n: usize, eps: f64) -> f64 {
    eps.powi(n as i32) / n as f64
}

/// Ball volume at one radius by direction quadrature of the radial density.
pub fn ball_volume(
    spec: &ManifoldSpec,
    r: f64,
    scheme: &QuadratureScheme,
    eps: f64,
    ctl: &StepControl,
) -> Result<f64, VolumeError> {
    require_cut_flag(spec)?;
    let curve = volume_curve(spec, 0.0, &[r], scheme, eps, ctl)?;
    Ok(curve.volumes[0])
}

/// Volume curve over a radius grid, with the constant-curvature model volumes
/// alongside for ratio work.
#[derive(Debug, Clone)]
pub struct VolumeCurve {
    pub radii: Vec<f64>,
    pub volumes: Vec<f64>,
    pub model_volumes: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Degeneration radius per direction node, when one was met.
    pub stop_radii: Vec<Option<f64>>,
}

impl VolumeCurve {
    /// CSV rendering: `r,volume,model_volume,ratio`.
    pub fn csv(&self) -> String {
        let mut out = String::from("r,volume,model_volume,ratio\n");
        for i in 0..self.radii.len() {
            out.push_str(&csv_row([
                fmt_g17(self.radii[i]),
                fmt_g17(self.volumes[i]),
                fmt_g17(self.model_volumes[i]),
                fmt_g17(self.ratios[i]),
            ]));
        }
        out
    }
}

pub fn volume_curve(
    spec: &ManifoldSpec,
    model_k: f64,
    radii: &[f64],
    scheme: &QuadratureScheme,
    eps: f64,
    ctl: &StepControl,
) -> Result<VolumeCurve, VolumeError> {
    require_cut_flag(spec)?;
    let n = spec.dimension();
    if scheme.dimension() != n {
        return Err(VolumeError::UnsupportedDimension { n: scheme.dimension() });
    }
    let profiles: Vec<DirectionProfile> = scheme
        .nodes
        .par_iter()
        .map(|theta| direction_profile(spec, theta, eps, radii, ctl))
        .collect::<Result<_, _>>()?;
    let stub = radial_stub(n, eps);
    let mut volumes = Vec::with_capacity(radii.len());
    for j in 0..radii.len() {
        let terms: Vec<f64> = profiles
            .iter()
            .zip(&scheme.weights)
            .map(|(p, w)| w * (stub + p.ghat_integral[j]))
            .collect();
        volumes.push(pairwise_sum(&terms));
    }
    let end = domain_end(model_k);
    let model_volumes: Vec<f64> = radii
        .iter()
        .map(|&r| model_ball_volume(n, model_k, r.min(end)))
        .collect::<Result<_, _>>()?;
    let ratios = volumes.iter().zip(&model_volumes).map(|(v, m)| v / m).collect();
    Ok(VolumeCurve {
        radii: radii.to_vec(),
        volumes,
        model_volumes,
        ratios,
        stop_radii: profiles.iter().map(|p| p.stop_radius).collect(),
    })
}

fn validate_ricci_on_nodes(
    check: &'static str,
    spec: &ManifoldSpec,
    scheme: &QuadratureScheme,
    radii: &[f64],
    k: f64,
) -> Result<usize, VolumeError> {
    let floor = (spec.dimension() as f64 - 1.0) * k;
    let mut count = 0;
    for theta in &scheme.nodes {
        for &r in radii {
            let actual = ricci_radial(spec, theta, r)?;
            if actual < floor - HYPOTHESIS_SLACK * (1.0 + floor.abs()) {
                return Err(VolumeError::HypothesisViolated {
                    check,
                    detail: format!("Ric(d_r,d_r) = {actual} below {floor} at r = {r}"),
                });
            }
            count += 1;
        }
    }
    Ok(count)
}

/// Volume comparison under Ric >= (n-1) k: the integrated ball volume stays
/// below the model volume, and the normalized density is dominated pointwise
/// at every quadrature node and grid radius.
pub fn bishop_check(
    spec: &ManifoldSpec,
    k: f64,
    radii: &[f64],
    scheme: &QuadratureScheme,
    eps: f64,
    tol: &Tolerance,
) -> Result<ComparisonVerdict, VolumeError> {
    require_cut_flag(spec)?;
    let samples = validate_ricci_on_nodes("bishop_check", spec, scheme, radii, k)?;
    let n = spec.dimension();
    let m = n as i32 - 1;
    let end = domain_end(k);

    let profiles: Vec<DirectionProfile> = scheme
        .nodes
        .par_iter()
        .map(|theta| direction_profile(spec, theta, eps, radii, ctl_for_volume()))
        .collect::<Result<_, _>>()?;

    let stub = radial_stub(n, eps);
    let mut worst = 0.0f64;
    let mut worst_at = f64::NAN;
    let mut record = |excess: f64, r: f64| {
        if worst_at.is_nan() || excess > worst {
            worst = worst.max(excess);
            worst_at = r;
        }
    };

    for (j, &r) in radii.iter().enumerate() {
        if r > end {
            continue;
        }
        let terms: Vec<f64> = profiles
            .iter()
            .zip(&scheme.weights)
            .map(|(p, w)| w * (stub + p.ghat_integral[j]))
            .collect();
        let volume = pairwise_sum(&terms);
        let model = model_ball_volume(n, k, r)?;
        let excess = ((volume - model).max(0.0) - tol.relative * model.abs()).max(0.0);
        record(excess, r);
        // pointwise density domination at every node
        let model_density = sn(k, r).powi(m);
        for p in &profiles {
            let excess =
                ((p.ghat[j] - model_density).max(0.0) - tol.relative * model_density.abs()).max(0.0);
            record(excess, r);
        }
    }
    let notes = format!(
        "hypothesis Ric >= (n-1) k with k = {} validated at {samples} node-radius samples; \
         cut times proxied by first degeneration radii",
        fmt_g17(k)
    );
    Ok(ComparisonVerdict {
        name: "bishop".into(),
        holds: worst <= tol.absolute,
        max_violation: worst,
        at_r: worst_at,
        tolerance: tol.absolute,
        notes,
    })
}

fn ctl_for_volume() -> &'static StepControl {
    use std::sync::OnceLock;
    static CTL: OnceLock<StepControl> = OnceLock::new();
    CTL.get_or_init(StepControl::default)
}

/// Monotonicity of the volume ratio r -> vol(B_r)/vol_k(B_r): nonincreasing
/// along the grid, with the smallest-radius ratio near one.
pub fn bishop_gromov_check(
    spec: &ManifoldSpec,
    k: f64,
    radii: &[f64],
    scheme: &QuadratureScheme,
    eps: f64,
    tol: &Tolerance,
) -> Result<ComparisonVerdict, VolumeError> {
    require_cut_flag(spec)?;
    let samples = validate_ricci_on_nodes("bishop_gromov_check", spec, scheme, radii, k)?;
    let curve = volume_curve(spec, k, radii, scheme, eps, ctl_for_volume())?;

    let mut worst = 0.0f64;
    let mut worst_at = f64::NAN;
    let mut record = |excess: f64, r: f64| {
        if worst_at.is_nan() || excess > worst {
            worst = worst.max(excess);
            worst_at = r;
        }
    };
    for j in 1..curve.ratios.len() {
        record((curve.ratios[j] - curve.ratios[j - 1]).max(0.0), curve.radii[j]);
    }
    let limit_gap = (curve.ratios[0] - 1.0).abs();
    if limit_gap > RATIO_LIMIT_TOL {
        record(RATIO_MONOTONE_TOL + limit_gap, curve.radii[0]);
    }
    let notes = format!(
        "hypothesis Ric >= (n-1) k with k = {} validated at {samples} node-radius samples; \
         ratio at r = {} is {} (limit allowance {RATIO_LIMIT_TOL})",
        fmt_g17(k),
        fmt_g17(curve.radii[0]),
        fmt_g17(curve.ratios[0]),
    );
    Ok(ComparisonVerdict {
        name: "bishop_gromov".into(),
        holds: worst <= RATIO_MONOTONE_TOL,
        max_violation: worst,
        at_r: worst_at,
        tolerance: RATIO_MONOTONE_TOL,
        notes,
    })
}
