//! Start/goal-anchored local coordinate frame.
//!
//! The frame fixes spatial generalization: its x-axis points from the start
//! to the goal, its z-axis is the direction orthogonal to x closest to
//! "up" (opposite gravity), and y completes a right-handed triad. All
//! coupling-term features and guard decisions are expressed in this frame,
//! so a scene rotated about gravity or translated produces identical local
//! quantities.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum start-goal separation for a well-defined frame, meters.
pub const MIN_SEPARATION: f64 = 1e-6;

/// Cross products smaller than this mean the start-goal axis is parallel
/// to gravity and the up-projection rule degenerates.
const PARALLEL_EPS: f64 = 1e-9;

/// Right-handed orthonormal frame anchored at the movement start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    /// World position of the start; local origin.
    pub origin: Vector3<f64>,
    /// Columns are the local x/y/z axes in world coordinates.
    pub rotation: Matrix3<f64>,
    /// True when start→goal was parallel to gravity and the fallback
    /// z-axis rule (closest to world +y) was used.
    pub degenerate_up: bool,
}

impl LocalFrame {
    /// Build the frame from start and goal positions and the gravity
    /// direction (need not be normalized).
    pub fn build(
        start: &Vector3<f64>,
        goal: &Vector3<f64>,
        gravity: &Vector3<f64>,
    ) -> Result<Self> {
        let delta = goal - start;
        let len = delta.norm();
        if !len.is_finite() {
            return Err(Error::InvalidInput("non-finite start/goal".into()));
        }
        if len <= MIN_SEPARATION {
            return Err(Error::DegenerateFrame(len));
        }
        let x_axis = delta / len;

        let up = -gravity.normalize();
        let mut z_raw = up - x_axis * up.dot(&x_axis);
        let mut degenerate_up = false;
        if z_raw.norm() < PARALLEL_EPS {
            // Start→goal runs along gravity; fall back to the direction
            // closest to world +y.
            let fallback = Vector3::y();
            z_raw = fallback - x_axis * fallback.dot(&x_axis);
            degenerate_up = true;
            if z_raw.norm() < PARALLEL_EPS {
                // x is parallel to +y too; +z is then guaranteed transverse.
                z_raw = Vector3::z() - x_axis * Vector3::z().dot(&x_axis);
            }
        }
        let z_axis = z_raw.normalize();
        let y_axis = z_axis.cross(&x_axis);

        Ok(LocalFrame {
            origin: *start,
            rotation: Matrix3::from_columns(&[x_axis, y_axis, z_axis]),
            degenerate_up,
        })
    }

    /// World point → local coordinates.
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.origin)
    }

    /// Local point → world coordinates.
    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.origin
    }

    /// World free vector (velocity, coupling term) → local. Rotation only.
    pub fn vector_to_local(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * v
    }

    /// Local free vector → world. Rotation only.
    pub fn vector_to_world(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Local x axis in world coordinates.
    pub fn x_axis(&self) -> Vector3<f64> {
        self.rotation.column(0).into()
    }

    /// Local z axis in world coordinates.
    pub fn z_axis(&self) -> Vector3<f64> {
        self.rotation.column(2).into()
    }

    /// Orthonormality defect, max |RᵀR − I| entry. Zero for an exact frame.
    pub fn orthonormality_defect(&self) -> f64 {
        let m = self.rotation.transpose() * self.rotation - Matrix3::identity();
        m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -1.0);

    #[test]
    fn axis_aligned_case() {
        let f = LocalFrame::build(
            &Vector3::new(0.0, 0.0, 0.0),
            &Vector3::new(1.0, 0.0, 0.0),
            &GRAVITY,
        )
        .unwrap();
        assert_relative_eq!(f.x_axis(), Vector3::x(), epsilon = 1e-12);
        assert_relative_eq!(f.z_axis(), Vector3::z(), epsilon = 1e-12);
        let y: Vector3<f64> = f.rotation.column(1).into();
        assert_relative_eq!(y, Vector3::y(), epsilon = 1e-12);
        assert!(!f.degenerate_up);
    }

    #[test]
    fn sideways_goal_gram_schmidt() {
        let f = LocalFrame::build(
            &Vector3::zeros(),
            &Vector3::new(0.0, 2.0, 0.0),
            &GRAVITY,
        )
        .unwrap();
        assert_relative_eq!(f.x_axis(), Vector3::y(), epsilon = 1e-12);
        assert_relative_eq!(f.z_axis(), Vector3::z(), epsilon = 1e-12);
        assert!(f.orthonormality_defect() < 1e-10);
        assert_relative_eq!(f.rotation.determinant(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn goal_maps_to_positive_x() {
        let start = Vector3::new(0.3, -0.2, 0.5);
        let goal = Vector3::new(-0.4, 0.9, 0.7);
        let f = LocalFrame::build(&start, &goal, &GRAVITY).unwrap();
        let gl = f.to_local(&goal);
        assert_relative_eq!(gl.x, (goal - start).norm(), epsilon = 1e-12);
        assert!(gl.y.abs() < 1e-12 && gl.z.abs() < 1e-12);
        assert_relative_eq!(f.to_local(&start), Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn round_trip_identity() {
        let f = LocalFrame::build(
            &Vector3::new(0.1, 0.2, 0.3),
            &Vector3::new(0.9, -0.5, 0.4),
            &GRAVITY,
        )
        .unwrap();
        let p = Vector3::new(-0.7, 1.3, 0.2);
        assert_relative_eq!(f.to_world(&f.to_local(&p)), p, epsilon = 1e-12);
        assert_relative_eq!(
            f.vector_to_world(&f.vector_to_local(&p)),
            p,
            epsilon = 1e-12
        );
    }

    #[test]
    fn start_equals_goal_is_rejected() {
        let r = LocalFrame::build(&Vector3::zeros(), &Vector3::new(1e-9, 0.0, 0.0), &GRAVITY);
        assert!(matches!(r, Err(Error::DegenerateFrame(_))));
    }

    #[test]
    fn gravity_parallel_fallback_flags_frame() {
        let f = LocalFrame::build(
            &Vector3::zeros(),
            &Vector3::new(0.0, 0.0, 1.0),
            &GRAVITY,
        )
        .unwrap();
        assert!(f.degenerate_up);
        // z closest to world +y under the fallback rule.
        assert!(f.z_axis().dot(&Vector3::y()) > 0.99);
        assert!(f.orthonormality_defect() < 1e-10);
        assert_relative_eq!(f.rotation.determinant(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn rotation_about_gravity_preserves_local_coordinates() {
        let start = Vector3::new(0.1, 0.0, 0.2);
        let goal = Vector3::new(0.8, 0.3, 0.2);
        let obstacle = Vector3::new(0.5, 0.1, 0.25);
        let f = LocalFrame::build(&start, &goal, &GRAVITY).unwrap();
        let local = f.to_local(&obstacle);

        let q = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI);
        let d = Vector3::new(1.5, -0.4, 0.2);
        let f2 = LocalFrame::build(&(q * start + d), &(q * goal + d), &GRAVITY).unwrap();
        let local2 = f2.to_local(&(q * obstacle + d));
        assert_relative_eq!(local, local2, epsilon = 1e-9);
    }
}
