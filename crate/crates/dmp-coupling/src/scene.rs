//! Standard scene construction: seeded training obstacle placements and
//! the adversarial unseen-setting grid around the baseline path.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::frame::LocalFrame;
use crate::obstacle::{ObstacleSetting, Pose, Shape};
use crate::rng::substream_rng;

/// The movement every scene is built around.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBase {
    pub start: Vector3<f64>,
    pub goal: Vector3<f64>,
    pub gravity: Vector3<f64>,
    pub tau: f64,
}

impl SceneBase {
    pub fn frame(&self) -> Result<LocalFrame> {
        LocalFrame::build(&self.start, &self.goal, &self.gravity)
    }

    pub fn path_length(&self) -> f64 {
        (self.goal - self.start).norm()
    }
}

/// Placement ranges for seeded training scenes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSceneSpec {
    /// Obstacle positions per kind.
    pub count: usize,
    /// Obstacle center along the path, fractions of the path length.
    pub x_range: (f64, f64),
    /// Lateral offsets up to this radius count as "near" (path-blocking).
    pub near_offset: f64,
    /// Maximum lateral offset for the remaining "far" placements.
    pub far_offset: f64,
    /// Cloud sampling density, points per meter.
    pub density: f64,
}

impl Default for TrainingSceneSpec {
    fn default() -> Self {
        TrainingSceneSpec {
            count: 40,
            x_range: (0.30, 0.50),
            near_offset: 0.05,
            far_offset: 0.15,
            density: 50.0,
        }
    }
}

/// The unseen-evaluation grid: `nx` stations along the path by `ny` x `nz`
/// lateral offsets, all spheres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Station range along the path, fractions of the path length.
    pub x_range: (f64, f64),
    /// Lateral spacing between neighbouring grid offsets, meters.
    pub dy: f64,
    pub dz: f64,
    pub radius: f64,
    pub density: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nx: 7,
            ny: 3,
            nz: 3,
            x_range: (0.20, 0.65),
            dy: 0.05,
            dz: 0.05,
            radius: 0.06,
            density: 50.0,
        }
    }
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded quasi-random training placements for one obstacle kind.
///
/// Alternates near (often path-blocking) and far placements so the
/// demonstrations cover both strong and weak avoidance.
pub fn training_scenes(
    base: &SceneBase,
    shape: Shape,
    spec: &TrainingSceneSpec,
    seed: u64,
) -> Result<Vec<ObstacleSetting>> {
    let frame = base.frame()?;
    let length = base.path_length();
    let kind = shape.kind_name();
    let mut out = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let id = format!("{kind}_{i:03}");
        let mut rng = substream_rng(seed, &format!("scene/{id}"));
        let x_frac = rng.random_range(spec.x_range.0..spec.x_range.1);
        let rho = if i % 2 == 0 {
            rng.random_range(0.0..spec.near_offset)
        } else {
            rng.random_range(spec.near_offset..spec.far_offset)
        };
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let center = frame.to_world(&Vector3::new(
            x_frac * length,
            rho * theta.cos(),
            rho * theta.sin(),
        ));
        out.push(ObstacleSetting::new(
            id.clone(),
            shape,
            Pose::at(center),
            base.start,
            base.goal,
            spec.density,
            crate::rng::substream_seed(seed, &format!("cloud/{id}")),
        )?);
    }
    Ok(out)
}

/// The deterministic unseen grid: stations along the local x-axis with
/// offsets in the local y/z plane centered on the path.
pub fn unseen_grid(base: &SceneBase, spec: &GridSpec, seed: u64) -> Result<Vec<ObstacleSetting>> {
    let frame = base.frame()?;
    let length = base.path_length();
    let mut out = Vec::with_capacity(spec.len());
    for ix in 0..spec.nx {
        let x_frac = if spec.nx == 1 {
            spec.x_range.0
        } else {
            spec.x_range.0
                + (spec.x_range.1 - spec.x_range.0) * ix as f64 / (spec.nx - 1) as f64
        };
        for iy in 0..spec.ny {
            let oy = (iy as f64 - (spec.ny - 1) as f64 / 2.0) * spec.dy;
            for iz in 0..spec.nz {
                let oz = (iz as f64 - (spec.nz - 1) as f64 / 2.0) * spec.dz;
                let id = format!("grid_{ix}_{iy}_{iz}");
                let center = frame.to_world(&Vector3::new(x_frac * length, oy, oz));
                out.push(ObstacleSetting::new(
                    id.clone(),
                    Shape::Sphere {
                        radius: spec.radius,
                    },
                    Pose::at(center),
                    base.start,
                    base.goal,
                    spec.density,
                    crate::rng::substream_seed(seed, &format!("cloud/{id}")),
                )?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> SceneBase {
        SceneBase {
            start: Vector3::zeros(),
            goal: Vector3::new(0.6, 0.2, 0.0),
            gravity: Vector3::new(0.0, 0.0, -1.0),
            tau: 2.0,
        }
    }

    #[test]
    fn training_scenes_are_deterministic_and_sized() {
        let shape = Shape::Sphere { radius: 0.06 };
        let a = training_scenes(&base(), shape, &TrainingSceneSpec::default(), 7).unwrap();
        let b = training_scenes(&base(), shape, &TrainingSceneSpec::default(), 7).unwrap();
        assert_eq!(a.len(), 40);
        assert_eq!(a, b);
        let c = training_scenes(&base(), shape, &TrainingSceneSpec::default(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn training_scenes_stay_in_band() {
        let base = base();
        let frame = base.frame().unwrap();
        let spec = TrainingSceneSpec::default();
        let scenes =
            training_scenes(&base, Shape::Sphere { radius: 0.06 }, &spec, 3).unwrap();
        let length = base.path_length();
        for s in &scenes {
            let local = frame.to_local(&s.center());
            assert!(local.x >= spec.x_range.0 * length - 1e-9);
            assert!(local.x <= spec.x_range.1 * length + 1e-9);
            let rho = (local.y * local.y + local.z * local.z).sqrt();
            assert!(rho <= spec.far_offset + 1e-9);
        }
    }

    #[test]
    fn grid_has_63_settings_with_expected_offsets() {
        let base = base();
        let frame = base.frame().unwrap();
        let grid = unseen_grid(&base, &GridSpec::default(), 5).unwrap();
        assert_eq!(grid.len(), 63);
        // Center row sits exactly on the path.
        let on_path: Vec<_> = grid
            .iter()
            .filter(|s| {
                let l = frame.to_local(&s.center());
                l.y.abs() < 1e-12 && l.z.abs() < 1e-12
            })
            .collect();
        assert_eq!(on_path.len(), 7);
    }
}
