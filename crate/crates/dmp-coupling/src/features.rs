//! The 17-dimensional sensory feature vector fed to the coupling network.
//!
//! Layout (all positions/vectors in the movement's local frame, meters):
//!
//! | index | content                                                   |
//! |-------|-----------------------------------------------------------|
//! | 0..9  | three nearest cloud points minus end-effector, 3 each      |
//! | 9..12 | obstacle center minus end-effector                          |
//! | 12..15| duration-scaled end-effector velocity `tau * v`             |
//! | 15    | signed distance to the obstacle surface                     |
//! | 16    | angle between velocity and the end-effector→center vector   |
//!
//! The duration-scaled velocity makes the vector invariant under joint
//! time scaling, and the local frame makes it invariant under rigid
//! transforms of the whole scene.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::frame::LocalFrame;
use crate::obstacle::ObstacleSetting;

pub const FEATURE_DIM: usize = 17;

/// Velocities below this have no usable direction; the angle feature then
/// falls back to `pi/2` (neither approaching nor receding).
pub const VELOCITY_DIRECTION_FLOOR: f64 = 1e-8;

/// One feature row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn signed_distance(&self) -> f64 {
        self.0[15]
    }

    pub fn angle(&self) -> f64 {
        self.0[16]
    }

    pub fn center_rel(&self) -> Vector3<f64> {
        Vector3::new(self.0[9], self.0[10], self.0[11])
    }

    pub fn tau_velocity(&self) -> Vector3<f64> {
        Vector3::new(self.0[12], self.0[13], self.0[14])
    }
}

/// Extract the feature vector for one end-effector state.
///
/// The three obstacle points are the cloud points nearest to the
/// end-effector, sorted ascending by distance with ties broken by cloud
/// index, which makes the selection deterministic.
pub fn extract_features(
    setting: &ObstacleSetting,
    frame: &LocalFrame,
    ee_pos: &Vector3<f64>,
    ee_vel: &Vector3<f64>,
    tau: f64,
) -> Result<FeatureVector> {
    if setting.cloud.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "setting `{}` cloud has {} points; need at least 3",
            setting.id,
            setting.cloud.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidInput("tau must be positive".into()));
    }

    // Indices of the three nearest cloud points (distance asc, index asc).
    let mut best: [(f64, usize); 3] = [(f64::INFINITY, usize::MAX); 3];
    for (i, p) in setting.cloud.iter().enumerate() {
        let d2 = (p - ee_pos).norm_squared();
        if (d2, i) < best[2] {
            best[2] = (d2, i);
            if best[2] < best[1] {
                best.swap(1, 2);
            }
            if best[1] < best[0] {
                best.swap(0, 1);
            }
        }
    }

    let mut out = [0.0; FEATURE_DIM];
    for (slot, &(_, idx)) in best.iter().enumerate() {
        let rel = frame.vector_to_local(&(setting.cloud[idx] - ee_pos));
        out[slot * 3] = rel.x;
        out[slot * 3 + 1] = rel.y;
        out[slot * 3 + 2] = rel.z;
    }

    let to_center = setting.center() - ee_pos;
    let center_rel = frame.vector_to_local(&to_center);
    out[9] = center_rel.x;
    out[10] = center_rel.y;
    out[11] = center_rel.z;

    let tau_vel = frame.vector_to_local(&(tau * ee_vel));
    out[12] = tau_vel.x;
    out[13] = tau_vel.y;
    out[14] = tau_vel.z;

    out[15] = setting.signed_distance(ee_pos);

    let speed = ee_vel.norm();
    let center_dist = to_center.norm();
    out[16] = if speed < VELOCITY_DIRECTION_FLOOR || center_dist < 1e-12 {
        std::f64::consts::FRAC_PI_2
    } else {
        (ee_vel.dot(&to_center) / (speed * center_dist))
            .clamp(-1.0, 1.0)
            .acos()
    };

    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite feature value".into()));
    }
    Ok(FeatureVector(out))
}
