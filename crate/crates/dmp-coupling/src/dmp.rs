//! Dynamic movement primitive core: canonical phase dynamics, the
//! transformation system, the Gaussian-basis forcing term, imitation
//! fitting, and trajectory unrolling.
//!
//! Per degree of freedom the transformation system is
//!
//! ```text
//! tau^2 x'' = alpha_v (beta_v (g - x) - tau x') + a f(s) + C_t
//! ```
//!
//! driven by the phase `s` of a shared first-order canonical system
//! `tau s' = -alpha_s s`. The forcing term `f(s)` is a normalized weighted
//! sum of Gaussian basis functions of the phase, gated by `s` so it
//! vanishes at the end of the movement and the goal attractor wins.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::demo::Demonstration;
use crate::error::{Error, Result};

/// Default gain of the transformation system's velocity term.
pub const DEFAULT_ALPHA_V: f64 = 25.0;
/// Default position gain; `alpha_v / 4` gives critical damping.
pub const DEFAULT_BETA_V: f64 = DEFAULT_ALPHA_V / 4.0;
/// Default phase decay rate.
pub const DEFAULT_ALPHA_S: f64 = 25.0 / 3.0;
/// Default number of Gaussian bases per degree of freedom.
pub const DEFAULT_N_BASIS: usize = 25;

/// Below this summed basis activation the forcing-term quotient is
/// numerically meaningless and the term is defined as zero.
pub const BASIS_SUM_FLOOR: f64 = 1e-10;

/// Per-DOF demo amplitudes smaller than this leave the forcing scale
/// undefined; the scale falls back to one.
pub const SCALE_AMPLITUDE_FLOOR: f64 = 1e-6;

/// Gains and basis layout of a primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmpParams {
    pub alpha_v: f64,
    pub beta_v: f64,
    pub alpha_s: f64,
    /// Basis centers in phase, strictly decreasing from 1 toward 0.
    pub centers: Vec<f64>,
    /// Basis widths, all positive.
    pub widths: Vec<f64>,
}

impl Default for DmpParams {
    fn default() -> Self {
        DmpParams::new(
            DEFAULT_ALPHA_V,
            DEFAULT_BETA_V,
            DEFAULT_ALPHA_S,
            DEFAULT_N_BASIS,
        )
    }
}

impl DmpParams {
    /// Standard layout: centers at `exp(-alpha_s * i / (N-1))` so the bases
    /// cover the exponential phase decay evenly, widths from neighbour
    /// spacing.
    pub fn new(alpha_v: f64, beta_v: f64, alpha_s: f64, n_basis: usize) -> Self {
        assert!(n_basis >= 1, "need at least one basis");
        let centers: Vec<f64> = if n_basis == 1 {
            vec![1.0]
        } else {
            (0..n_basis)
                .map(|i| (-alpha_s * i as f64 / (n_basis - 1) as f64).exp())
                .collect()
        };
        let mut widths: Vec<f64> = centers
            .windows(2)
            .map(|c| 1.0 / (c[1] - c[0]).powi(2))
            .collect();
        widths.push(*widths.last().unwrap_or(&(alpha_s * alpha_s)));
        DmpParams {
            alpha_v,
            beta_v,
            alpha_s,
            centers,
            widths,
        }
    }

    pub fn n_basis(&self) -> usize {
        self.centers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_v > 0.0 && self.beta_v > 0.0 && self.alpha_s > 0.0) {
            return Err(Error::Config("gains must be positive".into()));
        }
        if self.centers.is_empty() || self.centers.len() != self.widths.len() {
            return Err(Error::Config("centers/widths length mismatch".into()));
        }
        if self.widths.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::Config("basis widths must be positive".into()));
        }
        if self.centers.windows(2).any(|c| c[1] >= c[0]) {
            return Err(Error::Config(
                "basis centers must be strictly decreasing".into(),
            ));
        }
        Ok(())
    }
}

/// Phase variable of the shared canonical system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    /// Dimensionless phase in (0, 1].
    pub s: f64,
    /// Elapsed time, seconds.
    pub t: f64,
}

impl PhaseState {
    pub fn start() -> Self {
        PhaseState { s: 1.0, t: 0.0 }
    }

    /// Closed-form solution of the canonical system at time `t`.
    pub fn at_time(t: f64, tau: f64, alpha_s: f64) -> Self {
        PhaseState {
            s: (-alpha_s * t / tau).exp(),
            t,
        }
    }
}

/// State of the transformation system for one integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformState {
    /// Position, meters.
    pub x: Vector3<f64>,
    /// Scaled velocity `tau * dx/dt`, meters.
    pub v: Vector3<f64>,
    pub phase: PhaseState,
}

/// A fitted primitive: basis weights per DOF plus the demonstration
/// geometry it was learned from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dmp {
    pub params: DmpParams,
    /// Forcing weights, one `Vec` of length `n_basis` per DOF (3 DOFs).
    pub weights: [Vec<f64>; 3],
    pub x0_demo: Vector3<f64>,
    pub g_demo: Vector3<f64>,
    pub tau_demo: f64,
}

impl Dmp {
    /// A primitive with all-zero forcing (pure goal attractor).
    pub fn unforced(
        params: DmpParams,
        x0: Vector3<f64>,
        goal: Vector3<f64>,
        tau: f64,
    ) -> Self {
        let n = params.n_basis();
        Dmp {
            params,
            weights: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            x0_demo: x0,
            g_demo: goal,
            tau_demo: tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let n = self.params.n_basis();
        if self.weights.iter().any(|w| w.len() != n) {
            return Err(Error::Config(format!(
                "weights must be 3 x {n} to match the basis count"
            )));
        }
        if !(self.tau_demo > 0.0) {
            return Err(Error::Config("demo duration must be positive".into()));
        }
        Ok(())
    }

    /// Forcing term `f(s)` for all three DOFs.
    pub fn forcing(&self, s: f64) -> Result<Vector3<f64>> {
        let psi = basis_activations(s, &self.params)?;
        let sum: f64 = psi.iter().sum();
        if sum < BASIS_SUM_FLOOR {
            return Ok(Vector3::zeros());
        }
        let mut f = Vector3::zeros();
        for d in 0..3 {
            let num: f64 = psi
                .iter()
                .zip(&self.weights[d])
                .map(|(p, w)| p * w)
                .sum();
            f[d] = num / sum * s;
        }
        Ok(f)
    }

    /// Per-DOF forcing scale for new start/goal relative to the demo,
    /// `a_d = (g_d - x0_d) / (g_demo_d - x0_demo_d)`, with the degenerate
    /// amplitude guard.
    pub fn forcing_scale(&self, start: &Vector3<f64>, goal: &Vector3<f64>) -> Vector3<f64> {
        let mut a = Vector3::zeros();
        for d in 0..3 {
            let demo_amp = self.g_demo[d] - self.x0_demo[d];
            a[d] = if demo_amp.abs() < SCALE_AMPLITUDE_FLOOR {
                1.0
            } else {
                (goal[d] - start[d]) / demo_amp
            };
        }
        a
    }

    pub fn unroll(
        &self,
        start: &Vector3<f64>,
        goal: &Vector3<f64>,
        opts: &UnrollOptions,
    ) -> Result<UnrollResult> {
        self.unroll_with(start, goal, opts, |_| Vector3::zeros())
    }

    /// Integrate the primitive forward with a per-step coupling term.
    ///
    /// `coupling` is called once per recorded step with the pre-step state
    /// and returns the world-frame coupling value entering the
    /// transformation system at that step.
    pub fn unroll_with<F>(
        &self,
        start: &Vector3<f64>,
        goal: &Vector3<f64>,
        opts: &UnrollOptions,
        mut coupling: F,
    ) -> Result<UnrollResult>
    where
        F: FnMut(&UnrollStep) -> Vector3<f64>,
    {
        self.validate()?;
        opts.validate()?;
        let tau = opts.tau;
        let dt = opts.dt;
        let n_steps = (opts.horizon * tau / dt).ceil() as usize;
        let a = self.forcing_scale(start, goal);

        let mut out = UnrollResult::with_capacity(n_steps + 1, *start, *goal, tau, dt, a);
        let mut x = *start;
        let mut v = Vector3::zeros();

        for k in 0..=n_steps {
            let t = k as f64 * dt;
            let s = PhaseState::at_time(t, tau, self.params.alpha_s).s;
            let f = self.forcing(s)?;
            let step = UnrollStep {
                index: k,
                t,
                s,
                pos: x,
                vel: v / tau,
                scaled_vel: v,
            };
            let ct = coupling(&step);
            if !ct.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFinite { step: k });
            }
            let total = self.params.alpha_v * (self.params.beta_v * (goal - x) - v)
                + a.component_mul(&f)
                + ct;
            let acc = total / (tau * tau);
            out.push(t, s, x, v / tau, acc, ct);

            if k < n_steps {
                v += dt * total / tau;
                x += dt * v / tau;
                if !(x.iter().all(|c| c.is_finite()) && v.iter().all(|c| c.is_finite())) {
                    return Err(Error::NonFinite { step: k + 1 });
                }
            }
        }
        Ok(out)
    }
}

/// Gaussian basis activations `psi_i(s) = exp(-h_i (s - c_i)^2)`.
pub fn basis_activations(s: f64, params: &DmpParams) -> Result<Vec<f64>> {
    if !s.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite phase {s}")));
    }
    Ok(params
        .centers
        .iter()
        .zip(&params.widths)
        .map(|(&c, &h)| (-h * (s - c) * (s - c)).exp())
        .collect())
}

/// Normalized, phase-gated forcing value for all DOFs of `dmp` at phase `s`.
pub fn forcing_term(s: f64, dmp: &Dmp) -> Result<Vector3<f64>> {
    dmp.forcing(s)
}

/// One explicit Euler step of the canonical system.
pub fn canonical_step(
    state: &PhaseState,
    tau: f64,
    dt: f64,
    params: &DmpParams,
) -> Result<PhaseState> {
    if !(dt > 0.0 && tau > 0.0) {
        return Err(Error::Config("tau and dt must be positive".into()));
    }
    if dt >= tau {
        return Err(Error::Config(format!(
            "integration step dt={dt} must be smaller than the duration tau={tau}"
        )));
    }
    if params.alpha_s * dt >= tau {
        return Err(Error::Config(format!(
            "dt={dt} too large for phase decay rate {}: phase would go non-positive",
            params.alpha_s
        )));
    }
    Ok(PhaseState {
        s: state.s + dt * (-params.alpha_s * state.s / tau),
        t: state.t + dt,
    })
}

/// One explicit Euler step of the transformation system (velocity first,
/// then position). Returns the new state and the acceleration at the
/// pre-step state. The phase is left untouched; the caller advances it.
pub fn transformation_step(
    state: &TransformState,
    dmp: &Dmp,
    goal: &Vector3<f64>,
    a: &Vector3<f64>,
    coupling: &Vector3<f64>,
    tau: f64,
    dt: f64,
) -> Result<(TransformState, Vector3<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::Config("tau must be positive".into()));
    }
    if !coupling.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidInput(
            "non-finite coupling term; post-processing must bound predictions".into(),
        ));
    }
    let f = dmp.forcing(state.phase.s)?;
    let total = dmp.params.alpha_v * (dmp.params.beta_v * (goal - state.x) - state.v)
        + a.component_mul(&f)
        + coupling;
    let acc = total / (tau * tau);
    let v = state.v + dt * total / tau;
    let x = state.x + dt * v / tau;
    Ok((
        TransformState {
            x,
            v,
            phase: state.phase,
        },
        acc,
    ))
}

/// Options controlling one unroll.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnrollOptions {
    /// Movement duration, seconds.
    pub tau: f64,
    /// Integration step, seconds.
    pub dt: f64,
    /// Integration horizon as a multiple of `tau`; 1.0 stops at the
    /// nominal end, larger values expose settling behavior.
    pub horizon: f64,
}

impl UnrollOptions {
    /// Default step of `tau / 999` (1000 samples over the movement).
    pub fn new(tau: f64) -> Self {
        UnrollOptions {
            tau,
            dt: tau / 999.0,
            horizon: 1.0,
        }
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.dt > 0.0 && self.horizon > 0.0) {
            return Err(Error::Config(
                "tau, dt and horizon must be positive".into(),
            ));
        }
        if self.dt >= self.tau {
            return Err(Error::Config(format!(
                "integration step dt={} must be smaller than tau={}",
                self.dt, self.tau
            )));
        }
        Ok(())
    }
}

/// State passed to per-step coupling callbacks during an unroll.
#[derive(Debug, Clone, Copy)]
pub struct UnrollStep {
    pub index: usize,
    pub t: f64,
    pub s: f64,
    pub pos: Vector3<f64>,
    /// True velocity, m/s.
    pub vel: Vector3<f64>,
    /// Duration-scaled velocity `tau * vel`.
    pub scaled_vel: Vector3<f64>,
}

/// An integrated trajectory with its per-step phase and coupling record.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrollResult {
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub pos: Vec<Vector3<f64>>,
    pub vel: Vec<Vector3<f64>>,
    pub acc: Vec<Vector3<f64>>,
    /// World-frame coupling applied at each step.
    pub coupling: Vec<Vector3<f64>>,
    pub start: Vector3<f64>,
    pub goal: Vector3<f64>,
    pub tau: f64,
    pub dt: f64,
    /// Per-DOF forcing scale used.
    pub scale: Vector3<f64>,
}

impl UnrollResult {
    fn with_capacity(
        n: usize,
        start: Vector3<f64>,
        goal: Vector3<f64>,
        tau: f64,
        dt: f64,
        scale: Vector3<f64>,
    ) -> Self {
        UnrollResult {
            t: Vec::with_capacity(n),
            s: Vec::with_capacity(n),
            pos: Vec::with_capacity(n),
            vel: Vec::with_capacity(n),
            acc: Vec::with_capacity(n),
            coupling: Vec::with_capacity(n),
            start,
            goal,
            tau,
            dt,
            scale,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        t: f64,
        s: f64,
        pos: Vector3<f64>,
        vel: Vector3<f64>,
        acc: Vector3<f64>,
        coupling: Vector3<f64>,
    ) {
        self.t.push(t);
        self.s.push(s);
        self.pos.push(pos);
        self.vel.push(vel);
        self.acc.push(acc);
        self.coupling.push(coupling);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn final_pos(&self) -> Vector3<f64> {
        *self.pos.last().expect("unroll records at least one step")
    }

    /// Distance from the last recorded position to the goal.
    pub fn final_goal_distance(&self) -> f64 {
        (self.final_pos() - self.goal).norm()
    }

    /// Downsample into a demonstration, keeping every `stride`-th step (the
    /// last step is always kept).
    pub fn to_demonstration(
        &self,
        id: impl Into<String>,
        setting_id: Option<String>,
        stride: usize,
    ) -> Demonstration {
        let stride = stride.max(1);
        let n = self.len();
        let mut samples = Vec::new();
        let mut k = 0;
        while k < n {
            samples.push(crate::demo::DemoSample {
                t: self.t[k],
                pos: self.pos[k],
                vel: self.vel[k],
                acc: self.acc[k],
            });
            k += stride;
        }
        if samples.last().map(|s| s.t) != self.t.last().copied() {
            let k = n - 1;
            samples.push(crate::demo::DemoSample {
                t: self.t[k],
                pos: self.pos[k],
                vel: self.vel[k],
                acc: self.acc[k],
            });
        }
        Demonstration {
            id: id.into(),
            setting_id,
            tau: self.tau,
            samples,
        }
    }
}

/// Options for imitation fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Ridge regularization on the basis-weighted design matrix.
    pub ridge: f64,
    /// Number of common-grid points each demo is resampled to.
    pub resample: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            ridge: 1e-8,
            resample: 500,
        }
    }
}

/// Residual quality of an imitation fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Per-DOF NMSE of the forcing-term regression.
    pub nmse: Vector3<f64>,
    pub rows: usize,
}

impl FitReport {
    pub fn mean_nmse(&self) -> f64 {
        (self.nmse.x + self.nmse.y + self.nmse.z) / 3.0
    }
}

/// Fit forcing weights from one or more demonstrations.
///
/// Each demo is resampled to a common normalized-time grid (hence a common
/// phase grid) by linear interpolation; the forcing target
/// `tau^2 x'' - alpha_v (beta_v (g - x) - tau x')` is computed per DOF from
/// the demo's own geometry, all demos are stacked, and the weights solve a
/// ridge-regularized least-squares problem on the basis-weighted design
/// matrix.
pub fn fit_forcing_weights(
    demos: &[Demonstration],
    params: &DmpParams,
    opts: &FitOptions,
) -> Result<(Dmp, FitReport)> {
    params.validate()?;
    if demos.is_empty() {
        return Err(Error::InvalidInput("no demonstrations to fit".into()));
    }
    let n_basis = params.n_basis();
    for demo in demos {
        demo.validate()?;
        if demo.samples.len() < n_basis + 2 {
            return Err(Error::Fit {
                demo: demo.id.clone(),
                reason: format!(
                    "only {} samples; need at least {}",
                    demo.samples.len(),
                    n_basis + 2
                ),
            });
        }
        if demo.duration() <= 0.0 {
            return Err(Error::Fit {
                demo: demo.id.clone(),
                reason: "zero duration".into(),
            });
        }
    }

    let m = opts.resample.max(n_basis + 2);
    // The common grid mixes uniform-time rows (dense in the phase tail,
    // where the narrow bases live) with uniform-phase rows (dense near
    // s = 1, where time sampling is exponentially sparse); a time-only
    // grid leaves its forcing residual concentrated at the movement
    // start, which integrates into the largest trajectory error.
    let mut grid: Vec<f64> = (0..m).map(|j| j as f64 / (m - 1) as f64).collect();
    let s_end = (-params.alpha_s).exp();
    for j in 0..m / 2 {
        let s = 1.0 + (s_end - 1.0) * j as f64 / (m / 2) as f64;
        grid.push(-s.ln() / params.alpha_s);
    }
    let rows_per_demo = grid.len();
    let rows = rows_per_demo * demos.len();
    let mut design = DMatrix::zeros(rows, n_basis);
    let mut targets = [
        DVector::zeros(rows),
        DVector::zeros(rows),
        DVector::zeros(rows),
    ];

    for (di, demo) in demos.iter().enumerate() {
        let t0 = demo.samples[0].t;
        let duration = demo.duration();
        let tau = demo.tau;
        let goal = demo.goal();
        for (j, &u) in grid.iter().enumerate() {
            let sample = demo.interpolate(t0 + u * duration);
            let s = (-params.alpha_s * u).exp();
            let psi = basis_activations(s, params)?;
            let sum: f64 = psi.iter().sum();
            let row = di * rows_per_demo + j;
            if sum >= BASIS_SUM_FLOOR {
                for i in 0..n_basis {
                    design[(row, i)] = psi[i] / sum * s;
                }
            }
            for d in 0..3 {
                targets[d][row] = tau * tau * sample.acc[d]
                    - params.alpha_v
                        * (params.beta_v * (goal[d] - sample.pos[d]) - tau * sample.vel[d]);
            }
        }
    }

    let gram = design.transpose() * &design + DMatrix::identity(n_basis, n_basis) * opts.ridge;
    let chol = nalgebra::Cholesky::new(gram).ok_or_else(|| Error::Fit {
        demo: demos[0].id.clone(),
        reason: "singular design matrix".into(),
    })?;

    let mut weights: [Vec<f64>; 3] = [vec![], vec![], vec![]];
    let mut nmse = Vector3::zeros();
    for d in 0..3 {
        let rhs = design.transpose() * &targets[d];
        let w = chol.solve(&rhs);
        let pred = &design * &w;
        let resid = &pred - &targets[d];
        let mean = targets[d].mean();
        let var = targets[d].iter().map(|y| (y - mean).powi(2)).sum::<f64>() / rows as f64;
        let mse = resid.norm_squared() / rows as f64;
        nmse[d] = if var > 1e-30 {
            mse / var
        } else if mse < 1e-20 {
            0.0
        } else {
            f64::INFINITY
        };
        weights[d] = w.iter().copied().collect();
    }

    let first = &demos[0];
    let dmp = Dmp {
        params: params.clone(),
        weights,
        x0_demo: first.start(),
        g_demo: first.goal(),
        tau_demo: first.tau,
    };
    Ok((dmp, FitReport { nmse, rows }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn default_params() -> DmpParams {
        DmpParams::default()
    }

    #[test]
    fn default_layout_satisfies_invariants() {
        let p = default_params();
        p.validate().unwrap();
        assert_eq!(p.n_basis(), 25);
        assert_relative_eq!(p.centers[0], 1.0);
        assert_relative_eq!(p.beta_v, p.alpha_v / 4.0);
        assert!(p.centers.windows(2).all(|c| c[1] < c[0]));
    }

    #[test]
    fn basis_peaks_at_center() {
        let p = default_params();
        let psi = basis_activations(p.centers[1], &p).unwrap();
        assert_relative_eq!(psi[1], 1.0);
        assert!(psi.iter().enumerate().all(|(i, &v)| i == 1 || v < 1.0));
    }

    #[test]
    fn basis_direct_evaluation() {
        // h = 25, |s - c| = 0.2 -> exp(-1)
        let p = DmpParams {
            alpha_v: 25.0,
            beta_v: 6.25,
            alpha_s: 25.0 / 3.0,
            centers: vec![0.5],
            widths: vec![25.0],
        };
        let psi = basis_activations(0.7, &p).unwrap();
        assert_relative_eq!(psi[0], (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn basis_far_from_centers_is_tiny() {
        let p = DmpParams {
            alpha_v: 25.0,
            beta_v: 6.25,
            alpha_s: 25.0 / 3.0,
            centers: vec![2.5, 2.2],
            widths: vec![25.0, 30.0],
        };
        let psi = basis_activations(1.0, &p).unwrap();
        assert!(psi.iter().all(|&v| v <= (-25.0f64).exp()));
    }

    #[test]
    fn basis_rejects_non_finite_phase() {
        assert!(basis_activations(f64::NAN, &default_params()).is_err());
    }

    #[test]
    fn forcing_zero_weights_and_zero_phase() {
        let dmp = Dmp::unforced(
            default_params(),
            Vector3::zeros(),
            Vector3::new(1.0, 0.0, 0.0),
            1.0,
        );
        assert_eq!(dmp.forcing(0.7).unwrap(), Vector3::zeros());

        let mut forced = dmp.clone();
        forced.weights = [vec![3.0; 25], vec![-1.0; 25], vec![0.5; 25]];
        assert_relative_eq!(forced.forcing(0.0).unwrap(), Vector3::zeros());
    }

    #[test]
    fn forcing_single_basis_collapses_to_weight_times_phase() {
        let params = DmpParams {
            alpha_v: 25.0,
            beta_v: 6.25,
            alpha_s: 25.0 / 3.0,
            centers: vec![1.0],
            widths: vec![25.0],
        };
        let mut dmp = Dmp::unforced(params, Vector3::zeros(), Vector3::x(), 1.0);
        dmp.weights[0] = vec![2.0];
        let f = dmp.forcing(0.5).unwrap();
        assert_relative_eq!(f.x, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn forcing_vanishes_with_phase_bound() {
        let mut dmp = Dmp::unforced(
            default_params(),
            Vector3::zeros(),
            Vector3::x(),
            1.0,
        );
        dmp.weights = [vec![5.0; 25], vec![-7.0; 25], vec![2.0; 25]];
        for k in 1..=100 {
            let s = k as f64 / 100.0;
            let f = dmp.forcing(s).unwrap();
            let bound = s * 7.0 + 1e-12;
            assert!(f.iter().all(|v| v.abs() <= bound));
        }
    }

    #[test]
    fn canonical_one_step_arithmetic() {
        let p = default_params();
        let next = canonical_step(&PhaseState::start(), 1.0, 0.001, &p).unwrap();
        assert_relative_eq!(next.s, 1.0 - 25.0 / 3000.0, epsilon = 1e-15);
        assert_relative_eq!(next.t, 0.001);
    }

    #[test]
    fn canonical_euler_tracks_analytic_decay() {
        let p = default_params();
        let tau = 1.0;
        let dt = tau / 999.0;
        let mut state = PhaseState::start();
        for _ in 0..999 {
            state = canonical_step(&state, tau, dt, &p).unwrap();
            assert!(state.s > 0.0);
        }
        let analytic = (-p.alpha_s).exp();
        assert!(
            (state.s - analytic).abs() / analytic < 0.05,
            "euler {} vs analytic {}",
            state.s,
            analytic
        );
    }

    #[test]
    fn canonical_tau_scaling_symmetry() {
        let p = default_params();
        let mut a = PhaseState::start();
        let mut b = PhaseState::start();
        for _ in 0..100 {
            a = canonical_step(&a, 1.0, 0.001, &p).unwrap();
            b = canonical_step(&b, 2.0, 0.002, &p).unwrap();
            assert_relative_eq!(a.s, b.s, epsilon = 1e-12);
        }
    }

    #[test]
    fn canonical_rejects_oversized_step() {
        let p = default_params();
        assert!(canonical_step(&PhaseState::start(), 1.0, 1.0, &p).is_err());
        assert!(canonical_step(&PhaseState::start(), 1.0, 0.5, &p).is_err());
    }

    #[test]
    fn transformation_fixed_point_at_goal() {
        let dmp = Dmp::unforced(default_params(), Vector3::zeros(), Vector3::x(), 1.0);
        let goal = Vector3::x();
        let state = TransformState {
            x: goal,
            v: Vector3::zeros(),
            phase: PhaseState { s: 0.0, t: 1.0 },
        };
        let (next, acc) = transformation_step(
            &state,
            &dmp,
            &goal,
            &Vector3::new(1.0, 1.0, 1.0),
            &Vector3::zeros(),
            1.0,
            0.001,
        )
        .unwrap();
        assert_eq!(acc, Vector3::zeros());
        assert_eq!(next.x, goal);
        assert_eq!(next.v, Vector3::zeros());
    }

    #[test]
    fn transformation_coupling_maps_to_acceleration() {
        let tau = 2.0;
        let dmp = Dmp::unforced(default_params(), Vector3::zeros(), Vector3::x(), tau);
        let goal = Vector3::x();
        let state = TransformState {
            x: goal,
            v: Vector3::zeros(),
            phase: PhaseState { s: 0.0, t: tau },
        };
        let ct = Vector3::new(0.0, 10.0, 0.0);
        let (_, acc) = transformation_step(
            &state,
            &dmp,
            &goal,
            &Vector3::new(1.0, 1.0, 1.0),
            &ct,
            tau,
            0.001,
        )
        .unwrap();
        assert_relative_eq!(acc, Vector3::new(0.0, 10.0 / (tau * tau), 0.0), epsilon = 1e-12);
    }

    #[test]
    fn transformation_rejects_non_finite_coupling() {
        let dmp = Dmp::unforced(default_params(), Vector3::zeros(), Vector3::x(), 1.0);
        let state = TransformState {
            x: Vector3::zeros(),
            v: Vector3::zeros(),
            phase: PhaseState::start(),
        };
        let bad = Vector3::new(f64::NAN, 0.0, 0.0);
        assert!(transformation_step(
            &state,
            &dmp,
            &Vector3::x(),
            &Vector3::new(1.0, 1.0, 1.0),
            &bad,
            1.0,
            0.001
        )
        .is_err());
    }

    #[test]
    fn unforced_unroll_converges_critically_damped() {
        let start = Vector3::new(0.1, -0.3, 0.2);
        let goal = Vector3::new(0.7, 0.4, -0.1);
        let dmp = Dmp::unforced(default_params(), start, goal, 1.0);
        let result = dmp
            .unroll(&start, &goal, &UnrollOptions::new(1.0).with_horizon(1.05))
            .unwrap();
        let l = (goal - start).norm();
        assert!(result.final_goal_distance() < 1e-3 * l);
        // Critically damped: each DOF approaches monotonically, no
        // overshoot beyond integration error.
        for d in 0..3 {
            let lo = start[d].min(goal[d]) - 1e-9;
            let hi = start[d].max(goal[d]) + 1e-9;
            assert!(result.pos.iter().all(|p| p[d] >= lo && p[d] <= hi));
        }
    }

    #[test]
    fn unroll_temporal_scaling_invariance() {
        let start = Vector3::zeros();
        let goal = Vector3::new(0.6, 0.2, 0.0);
        let mut dmp = Dmp::unforced(default_params(), start, goal, 1.0);
        dmp.weights = [vec![20.0; 25], vec![-15.0; 25], vec![5.0; 25]];
        let base = dmp
            .unroll(&start, &goal, &UnrollOptions::new(1.0))
            .unwrap();
        for k in [0.5, 2.0, 4.0] {
            let scaled = dmp
                .unroll(
                    &start,
                    &goal,
                    &UnrollOptions {
                        tau: k,
                        dt: k / 999.0,
                        horizon: 1.0,
                    },
                )
                .unwrap();
            assert_eq!(base.len(), scaled.len());
            for (p, q) in base.pos.iter().zip(&scaled.pos) {
                assert!((p - q).norm() < 1e-9, "tau scaling violated at k={k}");
            }
        }
    }

    #[test]
    fn fit_round_trip_on_unrolled_primitive() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let params = default_params();
        let start = Vector3::new(0.0, 0.1, -0.2);
        let goal = Vector3::new(0.5, -0.3, 0.4);
        let mut source = Dmp::unforced(params.clone(), start, goal, 1.3);
        for d in 0..3 {
            for w in source.weights[d].iter_mut() {
                *w = rng.random_range(-60.0..60.0);
            }
        }
        let traj = source
            .unroll(&start, &goal, &UnrollOptions::new(1.3))
            .unwrap();
        let demo = traj.to_demonstration("roundtrip", None, 1);
        let (fitted, report) =
            fit_forcing_weights(&[demo], &params, &FitOptions::default()).unwrap();
        assert!(report.mean_nmse() < 1e-6);

        let refit = fitted
            .unroll(&fitted.x0_demo, &fitted.g_demo, &UnrollOptions::new(1.3))
            .unwrap();
        let mut err = 0.0;
        let mut mag = 0.0;
        let mean: Vector3<f64> = traj.pos.iter().sum::<Vector3<f64>>() / traj.len() as f64;
        for (p, q) in traj.pos.iter().zip(&refit.pos) {
            err += (p - q).norm_squared();
            mag += (p - mean).norm_squared();
        }
        assert!(err / mag < 1e-3, "round-trip NMSE {}", err / mag);
    }

    #[test]
    fn fit_zero_motion_demo_gives_zero_weights() {
        let t: Vec<f64> = (0..60).map(|i| i as f64 * 0.02).collect();
        let pos = vec![Vector3::new(0.3, 0.3, 0.3); 60];
        let demo = Demonstration::from_positions("still", None, 1.18, &t, &pos).unwrap();
        let (dmp, _) =
            fit_forcing_weights(&[demo], &default_params(), &FitOptions::default()).unwrap();
        for d in 0..3 {
            assert!(dmp.weights[d].iter().all(|w| w.abs() < 1e-6));
        }
    }

    #[test]
    fn fit_rejects_short_demo() {
        let t: Vec<f64> = (0..5).map(|i| i as f64 * 0.1).collect();
        let pos: Vec<Vector3<f64>> = t.iter().map(|&t| Vector3::new(t, 0.0, 0.0)).collect();
        let demo = Demonstration::from_positions("short", None, 0.4, &t, &pos).unwrap();
        let err = fit_forcing_weights(&[demo], &default_params(), &FitOptions::default());
        assert!(matches!(err, Err(Error::Fit { .. })));
    }

    #[test]
    fn unroll_goal_displacement_still_converges() {
        let start = Vector3::zeros();
        let goal = Vector3::new(0.6, 0.2, 0.0);
        let mut dmp = Dmp::unforced(default_params(), start, goal, 1.0);
        dmp.weights = [vec![30.0; 25], vec![10.0; 25], vec![-5.0; 25]];
        let new_goal = Vector3::new(0.4, 0.5, 0.2);
        let r = dmp
            .unroll(
                &start,
                &new_goal,
                &UnrollOptions::new(1.0).with_horizon(1.05),
            )
            .unwrap();
        assert!(r.final_goal_distance() < 1e-2);
    }

    #[test]
    fn forcing_scale_guards_degenerate_amplitude() {
        let dmp = Dmp::unforced(
            default_params(),
            Vector3::zeros(),
            Vector3::new(0.5, 0.0, 0.0),
            1.0,
        );
        let a = dmp.forcing_scale(&Vector3::zeros(), &Vector3::new(1.0, 0.3, 0.0));
        assert_relative_eq!(a.x, 2.0);
        assert_relative_eq!(a.y, 1.0); // demo amplitude zero -> fallback
        assert_relative_eq!(a.z, 1.0);
    }
}
