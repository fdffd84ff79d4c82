//! A numerical laboratory for the radial geometry of geodesic spheres.
//!
//! The crate integrates the first-order system satisfied by the metric and
//! shape-operator components of geodesic spheres along rays from a base
//! point, detects conjugate points through metric degeneration, and checks
//! the classical comparison statements (Riccati comparison, Hessian and mean
//! curvature bounds, diameter estimates, absence of conjugate points under
//! nonpositive curvature, volume comparison and ratio monotonicity) on
//! concrete model manifolds with certified tolerances.
//!
//! Modules:
//! - [`spaceform`]: closed-form comparison kernels (`sn_k` and friends);
//! - [`manifold`]: declarative model manifolds and direction charts;
//! - [`flow`]: the radial ODE flow, conjugate-point detection, identity
//!   residuals;
//! - [`comparison`]: the theorem checkers, producing [`ComparisonVerdict`]s;
//! - [`volume`]: direction quadrature, ball volumes and volume comparison;
//! - [`oracles`]: independent reference numerics for the test suite;
//! - [`quadrature`], [`ode`], [`report`]: shared numerical plumbing.

pub mod comparison;
pub mod flow;
pub mod manifold;
pub mod ode;
pub mod oracles;
pub mod quadrature;
pub mod report;
pub mod spaceform;
pub mod volume;

pub use comparison::{ComparisonError, ComparisonVerdict, SampledCurve, Tolerance};
pub use flow::{
    ConjugateEvent, FlowError, FlowTrace, GridSpec, HaltReason, RadialState, StepControl,
};
pub use manifold::{
    ChartPole, DirectionChartPoint, ManifoldError, ManifoldKind, ManifoldSpec,
    RadialCurvatureTable, WarpedProfile,
};
pub use oracles::OracleResult;
pub use spaceform::KernelError;
pub use volume::{QuadratureScheme, VolumeCurve, VolumeError};
