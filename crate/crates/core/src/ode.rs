//! Adaptive Dormand–Prince 5(4) integrator with FSAL and cubic Hermite dense
//! output. The driver owns halt decisions and step caps through callbacks, so
//! the Riccati blow-up handling lives next to the flow, not here.

use nalgebra::DVector;

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = B1 - 5179.0 / 57600.0;
const E3: f64 = B3 - 7571.0 / 16695.0;
const E4: f64 = B4 - 393.0 / 640.0;
const E5: f64 = B5 + 92097.0 / 339200.0;
const E6: f64 = B6 - 187.0 / 2100.0;
const E7: f64 = -1.0 / 40.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rel_tol: 1e-9, abs_tol: 1e-12, max_steps: 200_000 }
    }
}

#[derive(Debug)]
pub enum OdeError<E> {
    /// The controller drove the step below the resolvable scale at `t`.
    StepSizeUnderflow { t: f64 },
    /// A stage or solution component stopped being finite near `t`.
    NonFiniteState { t: f64 },
    MaxStepsExceeded { t: f64 },
    Rhs(E),
}

/// One accepted step with everything needed for dense evaluation inside it.
pub struct DenseStep<'a> {
    pub t0: f64,
    pub t1: f64,
    pub y0: &'a DVector<f64>,
    pub y1: &'a DVector<f64>,
    pub f0: &'a DVector<f64>,
    pub f1: &'a DVector<f64>,
}

impl DenseStep<'_> {
    /// Cubic Hermite interpolation at `t` in `[t0, t1]`.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let h = self.t1 - self.t0;
        let s = (t - self.t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        self.y0 * h00 + self.f0 * (h10 * h) + self.y1 * h01 + self.f1 * (h11 * h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepControlFlow {
    Continue,
    Halt,
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub t: f64,
    pub y: DVector<f64>,
    pub halted_by_observer: bool,
    pub steps: usize,
}

/// Integrate `y' = rhs(t, y)` from `t0` to `t_end`.
///
/// `step_cap` returns the largest step allowed from the current state (the
/// controller also honors accuracy); `on_accept` sees every accepted step and
/// may halt the run.
pub fn integrate<E>(
    mut rhs: impl FnMut(f64, &DVector<f64>, &mut DVector<f64>) -> Result<(), E>,
    t0: f64,
    y0: DVector<f64>,
    t_end: f64,
    opts: &OdeOptions,
    mut step_cap: impl FnMut(f64, &DVector<f64>) -> f64,
    mut on_accept: impl FnMut(&DenseStep<'_>) -> StepControlFlow,
) -> Result<Completion, OdeError<E>> {
    let dim = y0.len();
    let mut t = t0;
    let mut y = y0;
    let mut f_now = DVector::zeros(dim);
    rhs(t, &y, &mut f_now).map_err(OdeError::Rhs)?;

    let mut k2 = DVector::zeros(dim);
    let mut k3 = DVector::zeros(dim);
    let mut k4 = DVector::zeros(dim);
    let mut k5 = DVector::zeros(dim);
    let mut k6 = DVector::zeros(dim);
    let mut k7 = DVector::zeros(dim);
    let mut stage = DVector::zeros(dim);

    let mut h = (step_cap(t, &y) * 0.25).min(t_end - t).min(1e-2).max(1e-12);
    let mut steps = 0usize;

    while t < t_end {
        if steps >= opts.max_steps {
            return Err(OdeError::MaxStepsExceeded { t });
        }
        let floor = 1e4 * f64::EPSILON * t.abs().max(1.0);
        if h < floor {
            return Err(OdeError::StepSizeUnderflow { t });
        }
        h = h.min(t_end - t);

        stage.copy_from(&y);
        stage.axpy(h * A21, &f_now, 1.0);
        rhs(t + C2 * h, &stage, &mut k2).map_err(OdeError::Rhs)?;

        stage.copy_from(&y);
        stage.axpy(h * A31, &f_now, 1.0);
        stage.axpy(h * A32, &k2, 1.0);
        rhs(t + C3 * h, &stage, &mut k3).map_err(OdeError::Rhs)?;

        stage.copy_from(&y);
        stage.axpy(h * A41, &f_now, 1.0);
        stage.axpy(h * A42, &k2, 1.0);
        stage.axpy(h * A43, &k3, 1.0);
        rhs(t + C4 * h, &stage, &mut k4).map_err(OdeError::Rhs)?;

        stage.copy_from(&y);
        stage.axpy(h * A51, &f_now, 1.0);
        stage.axpy(h * A52, &k2, 1.0);
        stage.axpy(h * A53, &k3, 1.0);
        stage.axpy(h * A54, &k4, 1.0);
        rhs(t + C5 * h, &stage, &mut k5).map_err(OdeError::Rhs)?;

        stage.copy_from(&y);
        stage.axpy(h * A61, &f_now, 1.0);
        stage.axpy(h * A62, &k2, 1.0);
        stage.axpy(h * A63, &k3, 1.0);
        stage.axpy(h * A64, &k4, 1.0);
        stage.axpy(h * A65, &k5, 1.0);
        rhs(t + h, &stage, &mut k6).map_err(OdeError::Rhs)?;

        // fifth-order solution
        let mut y_next = y.clone();
        y_next.axpy(h * B1, &f_now, 1.0);
        y_next.axpy(h * B3, &k3, 1.0);
        y_next.axpy(h * B4, &k4, 1.0);
        y_next.axpy(h * B5, &k5, 1.0);
        y_next.axpy(h * B6, &k6, 1.0);
        rhs(t + h, &y_next, &mut k7).map_err(OdeError::Rhs)?;

        let mut err_sq = 0.0;
        let mut finite = true;
        for i in 0..dim {
            let e = h
                * (E1 * f_now[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                    + E7 * k7[i]);
            let scale = opts.abs_tol + opts.rel_tol * y[i].abs().max(y_next[i].abs());
            let ratio = e / scale;
            err_sq += ratio * ratio;
            finite &= y_next[i].is_finite();
        }
        if !finite {
            // shrink hard and retry; persistent non-finite states abort below
            h *= 0.1;
            if h < floor {
                return Err(OdeError::NonFiniteState { t });
            }
            steps += 1;
            continue;
        }
        let err = (err_sq / dim as f64).sqrt();

        if err <= 1.0 {
            let record = DenseStep { t0: t, t1: t + h, y0: &y, y1: &y_next, f0: &f_now, f1: &k7 };
            let flow = on_accept(&record);
            t += h;
            std::mem::swap(&mut y, &mut y_next);
            f_now.copy_from(&k7);
            steps += 1;
            if flow == StepControlFlow::Halt {
                return Ok(Completion { t, y, halted_by_observer: true, steps });
            }
            let scale = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
            h = (h * scale).min(step_cap(t, &y));
        } else {
            steps += 1;
            let scale = (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            h *= scale;
        }
    }
    Ok(Completion { t, y, halted_by_observer: false, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn integrates_the_harmonic_oscillator() {
        let y0 = DVector::from_vec(vec![0.0, 1.0]);
        let done = integrate::<()>(
            |_t, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
                Ok(())
            },
            0.0,
            y0,
            10.0,
            &OdeOptions::default(),
            |_, _| f64::INFINITY,
            |_| StepControlFlow::Continue,
        )
        .unwrap();
        assert_abs_diff_eq!(done.y[0], 10.0f64.sin(), epsilon = 1e-8);
        assert_abs_diff_eq!(done.y[1], 10.0f64.cos(), epsilon = 1e-8);
    }

    #[test]
    fn dense_output_tracks_the_solution_inside_steps() {
        let mut worst = 0.0f64;
        integrate::<()>(
            |t, _y, dy| {
                dy[0] = t.cos();
                Ok(())
            },
            0.0,
            DVector::from_vec(vec![0.0]),
            6.0,
            &OdeOptions::default(),
            |_, _| 0.5,
            |step| {
                for j in 1..5 {
                    let t = step.t0 + (step.t1 - step.t0) * j as f64 / 5.0;
                    worst = worst.max((step.eval(t)[0] - t.sin()).abs());
                }
                StepControlFlow::Continue
            },
        )
        .unwrap();
        assert!(worst < 1e-9, "dense output error {worst}");
    }

    #[test]
    fn observer_can_halt() {
        let done = integrate::<()>(
            |_t, y, dy| {
                dy[0] = y[0];
                Ok(())
            },
            0.0,
            DVector::from_vec(vec![1.0]),
            50.0,
            &OdeOptions::default(),
            |_, _| f64::INFINITY,
            |step| {
                if step.y1[0] > 100.0 {
                    StepControlFlow::Halt
                } else {
                    StepControlFlow::Continue
                }
            },
        )
        .unwrap();
        assert!(done.halted_by_observer);
        assert!(done.t < 6.0);
    }

    #[test]
    fn rhs_errors_propagate() {
        let out = integrate(
            |t, _y, _dy| if t > 0.5 { Err("boom") } else { Ok(()) },
            0.0,
            DVector::from_vec(vec![1.0]),
            2.0,
            &OdeOptions::default(),
            |_, _| f64::INFINITY,
            |_| StepControlFlow::Continue,
        );
        assert!(matches!(out, Err(OdeError::Rhs("boom"))));
    }
}
