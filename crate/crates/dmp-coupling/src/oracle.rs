//! Synthetic demonstration oracle.
//!
//! Stands in for motion-captured human data: baseline demonstrations are
//! minimum-jerk point-to-point profiles, and avoidance demonstrations are
//! produced by unrolling the fitted baseline primitive under an analytic
//! dynamic-potential-field coupling term. Because the generator is
//! deterministic under a fixed seed and its coupling values are recorded
//! exactly, it doubles as a verification oracle for the target-extraction
//! and learning pipeline.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::demo::{DemoSample, Demonstration};
use crate::dmp::{Dmp, UnrollOptions};
use crate::error::{Error, Result};
use crate::frame::LocalFrame;
use crate::obstacle::ObstacleSetting;

/// Parameters of the analytic avoidance coupling.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleParams {
    /// Repulsion gain (coupling-term units).
    pub gain: f64,
    /// Exponential decay rate of the repulsion with signed distance, 1/m.
    pub decay: f64,
    /// Offset added along local +y to the cross-section escape vector
    /// before normalization, meters. Head-on approaches then steer around
    /// the obstacle's +y side instead of stalling on the symmetry axis,
    /// and the coupling stays smooth in position.
    pub side_nudge: f64,
    /// Width of the exponential coupling decay once the end-effector has
    /// passed the obstacle's far extent, 1/m^2. Lets the demonstration
    /// settle back onto the goal.
    pub pass_decay: f64,
    /// Speed below which the repulsion fades linearly to zero, m/s. At
    /// near-standstill the velocity carries no usable direction, and an
    /// unchecked radial kick at the start can commit the movement to the
    /// wrong side of the obstacle.
    pub speed_gate: f64,
    /// Std of the smooth per-demo coupling perturbation (coupling units)
    /// that mimics demonstrator variability. Spreads the recorded states
    /// around the nominal avoidance path, like repeated human
    /// demonstrations of the same scene.
    pub coupling_jitter: f64,
    /// Positions beyond this norm abort generation as divergence, meters.
    pub workspace_bound: f64,
    /// Integration steps per emitted demo sample.
    pub oversample: usize,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            gain: 45.0,
            decay: 10.0,
            side_nudge: 0.015,
            pass_decay: 100.0,
            speed_gate: 0.15,
            coupling_jitter: 0.0,
            workspace_bound: 10.0,
            oversample: 20,
        }
    }
}

/// Minimum-jerk position/velocity/acceleration at time `t` of a
/// point-to-point movement of duration `tau`.
pub fn min_jerk(
    start: &Vector3<f64>,
    goal: &Vector3<f64>,
    tau: f64,
    t: f64,
) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let u = (t / tau).clamp(0.0, 1.0);
    let delta = goal - start;
    let p = 10.0 * u.powi(3) - 15.0 * u.powi(4) + 6.0 * u.powi(5);
    let dp = 30.0 * u.powi(2) - 60.0 * u.powi(3) + 30.0 * u.powi(4);
    let ddp = 60.0 * u - 180.0 * u.powi(2) + 120.0 * u.powi(3);
    (
        start + delta * p,
        delta * (dp / tau),
        delta * (ddp / tau / tau),
    )
}

/// Generate a baseline (obstacle-free) demonstration at `rate` Hz.
///
/// Optional jitter perturbs the profile with a smooth, seeded bump whose
/// value and slope vanish at the endpoints, so the boundary conditions
/// stay exact. `jitter_sigma` is roughly the peak amplitude in meters.
pub fn gen_baseline(
    id: impl Into<String>,
    start: &Vector3<f64>,
    goal: &Vector3<f64>,
    tau: f64,
    rate: f64,
    jitter_sigma: f64,
    rng: &mut impl Rng,
) -> Result<Demonstration> {
    if rate < 10.0 {
        return Err(Error::Config(format!(
            "demo rate {rate} Hz below the 10 Hz minimum"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Config("tau must be positive".into()));
    }
    let n = (tau * rate).round() as usize;
    let bumps = if jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, jitter_sigma).expect("positive sigma");
        (0..3)
            .map(|_| JitterBump {
                amp: Vector3::new(
                    normal.sample(rng),
                    normal.sample(rng),
                    normal.sample(rng),
                ),
                freq: rng.random_range(1..4) as f64,
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut samples = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let t = tau * j as f64 / n as f64;
        let (mut p, mut v, mut a) = min_jerk(start, goal, tau, t);
        for bump in &bumps {
            let (q, dq, ddq) = bump.eval(t / tau);
            p += q;
            v += dq / tau;
            a += ddq / (tau * tau);
        }
        samples.push(DemoSample {
            t,
            pos: p,
            vel: v,
            acc: a,
        });
    }
    let demo = Demonstration {
        id: id.into(),
        setting_id: None,
        tau,
        samples,
    };
    demo.validate()?;
    Ok(demo)
}

/// Smooth perturbation `16 (u(1-u))^2 sin(2 pi f u + phase)` per DOF;
/// value and first derivative are zero at u = 0 and u = 1.
struct JitterBump {
    amp: Vector3<f64>,
    freq: f64,
    phase: f64,
}

impl JitterBump {
    fn eval(&self, u: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let b = 16.0 * (u * (1.0 - u)).powi(2);
        let db = 32.0 * (u - u * u) * (1.0 - 2.0 * u);
        let ddb = 32.0 * ((1.0 - 2.0 * u).powi(2) - 2.0 * (u - u * u));
        let w = std::f64::consts::TAU * self.freq;
        let th = w * u + self.phase;
        let (sin, cos) = th.sin_cos();
        let q = b * sin;
        let dq = db * sin + b * w * cos;
        let ddq = ddb * sin + 2.0 * db * w * cos - b * w * w * sin;
        (self.amp * q, self.amp * dq, self.amp * ddq)
    }
}

/// The analytic potential-field coupling: a repulsion of magnitude
/// `gain * exp(-decay * d)`, gated by speed, pushing away from the
/// obstacle center within the local y-z plane (avoidance and baseline
/// progress identically along the start-goal axis, so the escape route is
/// orthogonal to the nominal velocity). A side component (local +/-y)
/// following the radial escape's sign is blended in so head-on approaches
/// steer around the body deterministically instead of stalling on the
/// symmetry axis.
pub fn potential_coupling(
    pos: &Vector3<f64>,
    vel: &Vector3<f64>,
    setting: &ObstacleSetting,
    frame: &crate::frame::LocalFrame,
    params: &OracleParams,
) -> Vector3<f64> {
    let speed = vel.norm();
    if speed < 1e-12 {
        return Vector3::zeros();
    }
    let side: Vector3<f64> = frame.rotation.column(1).into();
    let along: Vector3<f64> = frame.rotation.column(0).into();
    let d = setting.signed_distance(pos);
    let gate = (speed / params.speed_gate).min(1.0);
    let mag = params.gain * (-params.decay * d).exp() * gate;
    // Escape direction in the movement's cross-section plane, nudged
    // toward +y so dead-center approaches commit to a side smoothly.
    let r = pos - setting.center();
    let r_yz = r - along * r.dot(&along) + side * params.side_nudge;
    let rn = r_yz.norm();
    let dir = if rn > 1e-9 { r_yz / rn } else { side };
    mag * dir
}

/// Generate one obstacle-avoidance demonstration by unrolling the
/// baseline primitive under the potential-field coupling, resampled to
/// `rate` Hz. Obstacles wholly beyond the goal produce no deviation.
///
/// `jitter_seed` selects the demo's smooth coupling perturbation; with a
/// zero `coupling_jitter` the seed has no effect.
pub fn gen_avoidance(
    id: impl Into<String>,
    baseline: &Dmp,
    setting: &ObstacleSetting,
    gravity: &Vector3<f64>,
    rate: f64,
    params: &OracleParams,
    jitter_seed: u64,
) -> Result<Demonstration> {
    if rate < 10.0 {
        return Err(Error::Config(format!(
            "demo rate {rate} Hz below the 10 Hz minimum"
        )));
    }
    let tau = baseline.tau_demo;
    let frame = LocalFrame::build(&setting.start, &setting.goal, gravity)?;
    let x_goal = frame.to_local(&setting.goal).x;
    let x_obs = setting
        .cloud
        .iter()
        .map(|p| frame.to_local(p).x)
        .fold(f64::NEG_INFINITY, f64::max);
    let beyond_goal = x_obs > x_goal;

    // Demonstrator variability: smooth lateral coupling bumps in the
    // local y-z plane, vanishing at both ends of the movement.
    let bumps: Vec<JitterBump> = if params.coupling_jitter > 0.0 {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(jitter_seed);
        let normal = Normal::new(0.0, params.coupling_jitter).expect("positive sigma");
        let side: Vector3<f64> = frame.rotation.column(1).into();
        let up = frame.z_axis();
        (0..2)
            .map(|_| JitterBump {
                amp: side * normal.sample(&mut rng) + up * normal.sample(&mut rng),
                freq: rng.random_range(1..4) as f64,
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            })
            .collect()
    } else {
        Vec::new()
    };

    let n = (tau * rate).round() as usize;
    let oversample = params.oversample.max(1);
    let opts = UnrollOptions {
        tau,
        dt: tau / (n * oversample) as f64,
        horizon: 1.0,
    };
    let result = baseline.unroll_with(&setting.start, &setting.goal, &opts, |step| {
        if beyond_goal {
            return Vector3::zeros();
        }
        let mut ct = potential_coupling(&step.pos, &step.vel, setting, &frame, params);
        for bump in &bumps {
            let (q, _, _) = bump.eval(step.t / tau);
            ct += q;
        }
        let x_ee = frame.to_local(&step.pos).x;
        if x_ee > x_obs {
            let past = x_ee - x_obs;
            ct *= (-params.pass_decay * past * past).exp();
        }
        ct
    })?;

    let bound = params.workspace_bound;
    if let Some(k) = result.pos.iter().position(|p| p.norm() > bound) {
        return Err(Error::Generation {
            setting: setting.id.clone(),
            reason: format!("trajectory left the workspace bound at step {k}"),
        });
    }
    Ok(result.to_demonstration(id, Some(setting.id.clone()), oversample))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmp::{fit_forcing_weights, DmpParams, FitOptions};
    use crate::obstacle::{Pose, Shape};
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -1.0);

    fn scene() -> (Vector3<f64>, Vector3<f64>, f64) {
        (Vector3::zeros(), Vector3::new(0.6, 0.2, 0.0), 2.0)
    }

    fn fitted_baseline() -> Dmp {
        let (start, goal, tau) = scene();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let demo = gen_baseline("b", &start, &goal, tau, 25.0, 0.0, &mut rng).unwrap();
        fit_forcing_weights(&[demo], &DmpParams::default(), &FitOptions::default())
            .unwrap()
            .0
    }

    #[test]
    fn min_jerk_boundary_conditions() {
        let (start, goal, tau) = scene();
        let (p0, v0, _) = min_jerk(&start, &goal, tau, 0.0);
        let (p1, v1, _) = min_jerk(&start, &goal, tau, tau);
        assert_eq!(p0, start);
        assert_eq!(v0, Vector3::zeros());
        assert_relative_eq!(p1, goal, epsilon = 1e-12);
        assert_relative_eq!(v1, Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn min_jerk_midpoint_symmetry_and_peak_speed() {
        let start = Vector3::zeros();
        let goal = Vector3::new(1.0, 0.0, 0.0);
        let tau = 1.0;
        let (p, v, _) = min_jerk(&start, &goal, tau, tau / 2.0);
        assert_relative_eq!(p.x, 0.5, epsilon = 1e-12);
        assert_relative_eq!(v.x, 15.0 / 8.0, epsilon = 1e-12);
        // The midpoint is the speed peak.
        for t in [0.3, 0.45, 0.55, 0.7] {
            let (_, vt, _) = min_jerk(&start, &goal, tau, t);
            assert!(vt.norm() <= v.norm() + 1e-12);
        }
    }

    #[test]
    fn baseline_demo_endpoints_exact() {
        let (start, goal, tau) = scene();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let demo = gen_baseline("b", &start, &goal, tau, 25.0, 0.0, &mut rng).unwrap();
        assert_eq!(demo.samples.len(), 51);
        assert_eq!(demo.start(), start);
        assert_relative_eq!(demo.goal(), goal, epsilon = 1e-12);
        assert_eq!(demo.samples[0].vel, Vector3::zeros());
        assert_relative_eq!(
            demo.samples.last().unwrap().vel,
            Vector3::zeros(),
            epsilon = 1e-12
        );
        assert!(demo.derivative_consistency() < 0.05);
    }

    #[test]
    fn jittered_baseline_keeps_endpoints_and_consistency() {
        let (start, goal, tau) = scene();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let demo = gen_baseline("bj", &start, &goal, tau, 25.0, 0.005, &mut rng).unwrap();
        assert_relative_eq!(demo.start(), start, epsilon = 1e-12);
        assert_relative_eq!(demo.goal(), goal, epsilon = 1e-9);
        assert!(demo.derivative_consistency() < 0.05);
        // And it is deterministic under the same seed.
        let mut rng2 = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let demo2 = gen_baseline("bj", &start, &goal, tau, 25.0, 0.005, &mut rng2).unwrap();
        assert_eq!(demo, demo2);
    }

    #[test]
    fn far_obstacle_leaves_demo_at_baseline() {
        let (start, goal, _) = scene();
        let baseline = fitted_baseline();
        let params = OracleParams {
            coupling_jitter: 0.0,
            ..OracleParams::default()
        };
        // Signed distance from the whole path is > 8/decay.
        let setting = ObstacleSetting::new(
            "far",
            Shape::Sphere { radius: 0.05 },
            Pose::at(Vector3::new(0.3, 0.1 + 0.05 + 8.0 / params.decay, 0.0)),
            start,
            goal,
            50.0,
            0,
        )
        .unwrap();
        let demo = gen_avoidance("far_demo", &baseline, &setting, &GRAVITY, 25.0, &params, 0).unwrap();
        let plain = baseline
            .unroll(&start, &goal, &oracle_grid_options(&baseline, 25.0, &params))
            .unwrap();
        let path_len = (goal - start).norm();
        let max_dev = demo
            .samples
            .iter()
            .map(|s| {
                let k = (s.t / plain.dt).round() as usize;
                (s.pos - plain.pos[k]).norm()
            })
            .fold(0.0f64, f64::max);
        assert!(
            max_dev < 1e-3 * path_len,
            "deviation {max_dev} exceeds 1e-3 of path length"
        );
    }

    /// Unroll options matching the integration grid `gen_avoidance` uses.
    fn oracle_grid_options(baseline: &Dmp, rate: f64, params: &OracleParams) -> UnrollOptions {
        let tau = baseline.tau_demo;
        let n = (tau * rate).round() as usize;
        UnrollOptions {
            tau,
            dt: tau / (n * params.oversample) as f64,
            horizon: 1.0,
        }
    }

    #[test]
    fn on_path_obstacle_is_cleared() {
        let (start, goal, _) = scene();
        let baseline = fitted_baseline();
        let center = start + (goal - start) * 0.5;
        let setting = ObstacleSetting::new(
            "mid",
            Shape::Sphere { radius: 0.06 },
            Pose::at(center),
            start,
            goal,
            50.0,
            0,
        )
        .unwrap();
        let demo = gen_avoidance(
            "mid_demo",
            &baseline,
            &setting,
            &GRAVITY,
            25.0,
            &OracleParams::default(),
            7,
        )
        .unwrap();
        let min_sd = demo
            .samples
            .iter()
            .map(|s| setting.signed_distance(&s.pos))
            .fold(f64::INFINITY, f64::min);
        assert!(min_sd > 0.0, "oracle demo penetrates: min sd {min_sd}");
        // It still reaches the goal region.
        assert!((demo.goal() - goal).norm() < 0.01);
    }

    #[test]
    fn obstacle_beyond_goal_leaves_demo_at_baseline() {
        let (start, goal, _) = scene();
        let baseline = fitted_baseline();
        let dir = (goal - start).normalize();
        let setting = ObstacleSetting::new(
            "beyond",
            Shape::Sphere { radius: 0.05 },
            Pose::at(goal + dir * 0.12),
            start,
            goal,
            50.0,
            0,
        )
        .unwrap();
        let params = OracleParams::default();
        let demo = gen_avoidance("beyond_demo", &baseline, &setting, &GRAVITY, 25.0, &params, 0)
            .unwrap();
        let plain = baseline
            .unroll(&start, &goal, &oracle_grid_options(&baseline, 25.0, &params))
            .unwrap();
        for s in &demo.samples {
            let k = (s.t / plain.dt).round() as usize;
            assert!((s.pos - plain.pos[k]).norm() < 1e-9);
        }
    }

    #[test]
    fn avoidance_demo_is_frame_equivariant() {
        use nalgebra::UnitQuaternion;
        let (start, goal, _) = scene();
        let baseline = fitted_baseline();
        let setting = ObstacleSetting::new(
            "eq",
            Shape::Sphere { radius: 0.06 },
            Pose::at(start + (goal - start) * 0.45 + Vector3::new(0.0, 0.02, 0.01)),
            start,
            goal,
            50.0,
            0,
        )
        .unwrap();
        let params = OracleParams::default();
        let demo = gen_avoidance("eq_demo", &baseline, &setting, &GRAVITY, 25.0, &params, 3).unwrap();

        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI);
        let d = Vector3::new(0.8, -0.3, 0.15);
        let moved = setting.transformed(&q, &d);
        // Refit the baseline in the moved scene the same way.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let moved_base_demo = gen_baseline(
            "b", &moved.start, &moved.goal, baseline.tau_demo, 25.0, 0.0, &mut rng,
        )
        .unwrap();
        let (moved_baseline, _) = fit_forcing_weights(
            &[moved_base_demo],
            &DmpParams::default(),
            &FitOptions::default(),
        )
        .unwrap();
        let moved_demo = gen_avoidance(
            "eq_demo_moved",
            &moved_baseline,
            &moved,
            &GRAVITY,
            25.0,
            &params,
            3,
        )
        .unwrap();
        for (a, b) in demo.samples.iter().zip(&moved_demo.samples) {
            let expected = q.transform_vector(&a.pos) + d;
            assert!(
                (b.pos - expected).norm() < 1e-6,
                "equivariance broken: {} vs {expected:?}",
                b.pos
            );
        }
    }
}

#[cfg(test)]
mod grid_properties {
    use super::*;
    use crate::config::RunConfig;

    /// Default gains must clear every obstacle on the standard training
    /// scenes and still land the demonstrations on the goal.
    #[test]
    fn default_gains_clear_standard_scenes() {
        let cfg = RunConfig::default();
        let data = crate::pipeline::generate(&cfg).unwrap();
        assert_eq!(data.pairs.len(), 480);
        let mut worst_sd = f64::INFINITY;
        let mut worst_end = 0.0f64;
        for (demo, setting) in &data.pairs {
            let min_sd = demo
                .samples
                .iter()
                .map(|s| setting.signed_distance(&s.pos))
                .fold(f64::INFINITY, f64::min);
            worst_sd = worst_sd.min(min_sd);
            worst_end = worst_end.max((demo.goal() - data.baseline.g_demo).norm());
        }
        assert!(
            worst_sd > 0.003,
            "a demo came within {worst_sd} m of an obstacle"
        );
        assert!(
            worst_end < 0.01,
            "a demo ended {worst_end} m off the goal marker"
        );
    }
}
