//! Physically-motivated guards on network-predicted coupling terms.
//!
//! Network extrapolation carries no bounds in unseen states, so raw
//! predictions are post-processed in the local frame before entering the
//! transformation system:
//!
//! 1. the component along the start→goal axis is zeroed (avoidance and
//!    baseline progress identically along that axis),
//! 2. the remaining components decay exponentially once the end-effector
//!    has passed the obstacle's far extent, restoring goal convergence,
//! 3. the whole term is zeroed when the obstacle lies beyond the goal.
//!
//! Rule 3 is checked first so the strongest guard dominates; none of the
//! rules can increase any component's magnitude.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::LocalFrame;
use crate::obstacle::ObstacleSetting;

/// Guard switches and the length scale of the pass-by decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuardConfig {
    /// Rule 1: zero the local-x component.
    pub zero_x: bool,
    /// Rule 2: exponential decay after passing the obstacle.
    pub decay_after_pass: bool,
    /// Rule 3: zero everything when the obstacle is beyond the goal.
    pub zero_beyond_goal: bool,
    /// Width of the rule-2 exponent, 1/m^2.
    pub width: f64,
}

impl Default for GuardConfig {
    fn default() -> Self {
        GuardConfig {
            zero_x: true,
            decay_after_pass: true,
            zero_beyond_goal: true,
            width: 1.0,
        }
    }
}

impl GuardConfig {
    pub fn disabled() -> Self {
        GuardConfig {
            zero_x: false,
            decay_after_pass: false,
            zero_beyond_goal: false,
            width: 1.0,
        }
    }

    pub fn all_enabled(&self) -> bool {
        self.zero_x && self.decay_after_pass && self.zero_beyond_goal
    }
}

/// Local-frame x-coordinates the guards compare.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuardContext {
    /// End-effector local x.
    pub x_ee: f64,
    /// Far extent of the obstacle along local x (max over cloud points),
    /// honoring the obstacle's size.
    pub x_obs: f64,
    /// Goal local x; positive by frame construction.
    pub x_goal: f64,
}

/// Build the guard context from the current end-effector position.
pub fn guard_context(
    frame: &LocalFrame,
    setting: &ObstacleSetting,
    ee_pos: &Vector3<f64>,
    goal: &Vector3<f64>,
) -> Result<GuardContext> {
    if setting.cloud.is_empty() {
        return Err(Error::InvalidInput(format!(
            "setting `{}` has an empty cloud",
            setting.id
        )));
    }
    let x_obs = setting
        .cloud
        .iter()
        .map(|p| frame.to_local(p).x)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(GuardContext {
        x_ee: frame.to_local(ee_pos).x,
        x_obs,
        x_goal: frame.to_local(goal).x,
    })
}

/// Apply the guards to one local-frame coupling prediction.
pub fn apply_guards(ct: &Vector3<f64>, ctx: &GuardContext, cfg: &GuardConfig) -> Vector3<f64> {
    if cfg.zero_beyond_goal && ctx.x_obs > ctx.x_goal {
        return Vector3::zeros();
    }
    let mut out = *ct;
    if cfg.zero_x {
        out.x = 0.0;
    }
    if cfg.decay_after_pass && ctx.x_obs < ctx.x_ee {
        let d = ctx.x_obs - ctx.x_ee;
        out *= (-cfg.width * d * d).exp();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ctx(x_ee: f64, x_obs: f64, x_goal: f64) -> GuardContext {
        GuardContext { x_ee, x_obs, x_goal }
    }

    #[test]
    fn obstacle_beyond_goal_zeroes_everything() {
        let out = apply_guards(
            &Vector3::new(5.0, 5.0, 5.0),
            &ctx(0.1, 0.9, 0.8),
            &GuardConfig::default(),
        );
        assert_eq!(out, Vector3::zeros());
    }

    #[test]
    fn x_component_forced_to_zero_before_obstacle() {
        let out = apply_guards(
            &Vector3::new(3.0, 4.0, 5.0),
            &ctx(0.1, 0.5, 0.8),
            &GuardConfig::default(),
        );
        assert_eq!(out, Vector3::new(0.0, 4.0, 5.0));
    }

    #[test]
    fn pass_by_decay_direct_value() {
        let out = apply_guards(
            &Vector3::new(0.0, 4.0, 0.0),
            &ctx(1.0, 0.0, 1.5),
            &GuardConfig::default(),
        );
        assert_relative_eq!(out.y, 4.0 * (-1.0f64).exp(), epsilon = 1e-12);
        assert_eq!(out.x, 0.0);
        assert_eq!(out.z, 0.0);
    }

    #[test]
    fn decay_is_continuous_at_the_obstacle() {
        let cfg = GuardConfig::default();
        let ct = Vector3::new(0.0, 2.0, -1.0);
        let just_before = apply_guards(&ct, &ctx(0.5 - 1e-9, 0.5, 1.0), &cfg);
        let just_after = apply_guards(&ct, &ctx(0.5 + 1e-9, 0.5, 1.0), &cfg);
        assert!((just_before - just_after).norm() < 1e-12);
        assert_relative_eq!(just_before, ct, epsilon = 1e-12);
    }

    #[test]
    fn guards_never_amplify_components() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let cfg = GuardConfig::default();
        for _ in 0..1000 {
            let ct = Vector3::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
            );
            let c = ctx(
                rng.random_range(-1.0..2.0),
                rng.random_range(-1.0..2.0),
                rng.random_range(0.1..1.5),
            );
            let out = apply_guards(&ct, &c, &cfg);
            for d in 0..3 {
                assert!(out[d].abs() <= ct[d].abs() + 1e-15);
            }
            // x is exactly zero, or everything is zero under rule 3.
            assert!(out.x == 0.0);
        }
    }

    #[test]
    fn disabled_guards_pass_through() {
        let ct = Vector3::new(3.0, -2.0, 1.0);
        let out = apply_guards(&ct, &ctx(1.0, 0.2, 0.8), &GuardConfig::disabled());
        assert_eq!(out, ct);
    }

    #[test]
    fn context_from_cloud_extent() {
        use crate::obstacle::{ObstacleSetting, Pose, Shape};
        let start = Vector3::zeros();
        let goal = Vector3::new(2.0, 0.0, 0.0);
        let setting = ObstacleSetting::new(
            "g",
            Shape::Sphere { radius: 0.2 },
            Pose::at(Vector3::new(1.0, 0.0, 0.0)),
            start,
            goal,
            60.0,
            0,
        )
        .unwrap();
        let frame = LocalFrame::build(&start, &goal, &Vector3::new(0.0, 0.0, -1.0)).unwrap();
        let c = guard_context(&frame, &setting, &start, &goal).unwrap();
        assert!((c.x_obs - 1.2).abs() < 0.02, "x_obs {}", c.x_obs);
        assert_relative_eq!(c.x_ee, 0.0, epsilon = 1e-12);
        assert_relative_eq!(c.x_goal, 2.0, epsilon = 1e-12);
    }
}
