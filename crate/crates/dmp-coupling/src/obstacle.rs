//! Obstacle geometry: analytic signed distances for spheres, cubes and
//! cylinders, plus deterministic surface point-cloud augmentation.
//!
//! Obstacles are tracked as a handful of marker points in practice; the
//! cloud augmentation regenerates a quasi-uniform surface sampling so that
//! nearest-point features and guard extents see the whole body rather than
//! a few markers. Hit detection never uses the cloud: it evaluates the
//! analytic signed distance, so collision checks are resolution
//! independent.

use nalgebra::{UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Obstacle body shape and dimensions, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere { radius: f64 },
    Cube { half_extents: Vector3<f64> },
    /// Capped cylinder, axis along the local z of its pose.
    Cylinder { radius: f64, half_height: f64 },
}

impl Shape {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Shape::Sphere { .. } => "sphere",
            Shape::Cube { .. } => "cube",
            Shape::Cylinder { .. } => "cylinder",
        }
    }

    /// Largest sphere radius fitting inside the body; the depth of the
    /// center point.
    pub fn inradius(&self) -> f64 {
        match self {
            Shape::Sphere { radius } => *radius,
            Shape::Cube { half_extents } => half_extents.x.min(half_extents.y).min(half_extents.z),
            Shape::Cylinder {
                radius,
                half_height,
            } => radius.min(*half_height),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Sphere { radius } => *radius > 0.0,
            Shape::Cube { half_extents } => half_extents.iter().all(|&h| h > 0.0),
            Shape::Cylinder {
                radius,
                half_height,
            } => *radius > 0.0 && *half_height > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("obstacle dimensions must be positive".into()))
        }
    }

    /// Signed distance in the obstacle's local frame; negative inside.
    fn local_signed_distance(&self, q: &Vector3<f64>) -> f64 {
        match self {
            Shape::Sphere { radius } => q.norm() - radius,
            Shape::Cube { half_extents } => {
                let v = q.abs() - half_extents;
                let outside = Vector3::new(v.x.max(0.0), v.y.max(0.0), v.z.max(0.0));
                outside.norm() + v.x.max(v.y).max(v.z).min(0.0)
            }
            Shape::Cylinder {
                radius,
                half_height,
            } => {
                let dr = (q.x * q.x + q.y * q.y).sqrt() - radius;
                let dz = q.z.abs() - half_height;
                let outside = (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
                dr.max(dz).min(0.0) + outside
            }
        }
    }
}

/// Rigid pose of an obstacle in the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn at(position: Vector3<f64>) -> Self {
        Pose {
            position,
            rotation: UnitQuaternion::identity(),
        }
    }

    fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse_transform_vector(&(p - self.position))
    }

    fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transform_vector(p) + self.position
    }
}

/// One obstacle scene: body, pose, surface cloud, and the start/goal
/// markers of the movement it obstructs.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleSetting {
    pub id: String,
    pub shape: Shape,
    pub pose: Pose,
    /// Augmented surface points in world coordinates.
    pub cloud: Vec<Vector3<f64>>,
    pub start: Vector3<f64>,
    pub goal: Vector3<f64>,
    /// Seed used for the cloud sampling; recorded for regeneration.
    pub seed: u64,
    /// Cloud sampling density, points per meter of linear extent.
    pub density: f64,
}

impl ObstacleSetting {
    pub fn new(
        id: impl Into<String>,
        shape: Shape,
        pose: Pose,
        start: Vector3<f64>,
        goal: Vector3<f64>,
        density: f64,
        seed: u64,
    ) -> Result<Self> {
        let cloud = augment_cloud(&shape, &pose, density, seed)?;
        Ok(ObstacleSetting {
            id: id.into(),
            shape,
            pose,
            cloud,
            start,
            goal,
            seed,
            density,
        })
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.position
    }

    pub fn kind_name(&self) -> &'static str {
        self.shape.kind_name()
    }

    /// Analytic signed distance from `p` to the body surface; negative
    /// inside (a collision).
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.shape.local_signed_distance(&self.pose.to_local(p))
    }

    /// The whole scene (pose, cloud, start, goal) under a rigid transform
    /// `p -> q * p + d`.
    pub fn transformed(&self, q: &UnitQuaternion<f64>, d: &Vector3<f64>) -> Self {
        let map = |p: &Vector3<f64>| q.transform_vector(p) + d;
        ObstacleSetting {
            id: self.id.clone(),
            shape: self.shape,
            pose: Pose {
                position: map(&self.pose.position),
                rotation: q * self.pose.rotation,
            },
            cloud: self.cloud.iter().map(|p| map(p)).collect(),
            start: map(&self.start),
            goal: map(&self.goal),
            seed: self.seed,
            density: self.density,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.cloud.is_empty() {
            return Err(Error::InvalidInput(format!(
                "setting `{}` has an empty cloud",
                self.id
            )));
        }
        for p in &self.cloud {
            if self.signed_distance(p) > 1e-6 {
                return Err(Error::InvalidInput(format!(
                    "setting `{}` has a cloud point off the body surface",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic quasi-uniform surface sampling of a posed body.
///
/// `density` is points per meter of linear extent (areas receive
/// `density^2` points per square meter). The seed rotates the angular
/// start of the sphere/cylinder patterns and is recorded in the setting.
pub fn augment_cloud(
    shape: &Shape,
    pose: &Pose,
    density: f64,
    seed: u64,
) -> Result<Vec<Vector3<f64>>> {
    shape.validate()?;
    if !(density > 0.0) {
        return Err(Error::InvalidInput("cloud density must be positive".into()));
    }
    let phase = (seed % 360) as f64 / 360.0 * std::f64::consts::TAU;
    let local = match shape {
        Shape::Sphere { radius } => sample_sphere(*radius, density, phase),
        Shape::Cube { half_extents } => sample_cube(half_extents, density),
        Shape::Cylinder {
            radius,
            half_height,
        } => sample_cylinder(*radius, *half_height, density, phase),
    };
    Ok(local.iter().map(|p| pose.to_world(p)).collect())
}

/// Fibonacci sphere: near-even surface coverage for any point count.
fn sample_sphere(radius: f64, density: f64, phase: f64) -> Vec<Vector3<f64>> {
    let area = 4.0 * std::f64::consts::PI * radius * radius;
    let n = ((area * density * density).ceil() as usize).max(8);
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let th = golden * i as f64 + phase;
            Vector3::new(radius * r * th.cos(), radius * r * th.sin(), radius * z)
        })
        .collect()
}

/// Cell-centered grids on all six faces; no duplicated edge points.
fn sample_cube(half: &Vector3<f64>, density: f64) -> Vec<Vector3<f64>> {
    let counts = |extent: f64| ((2.0 * extent * density).ceil() as usize).max(2);
    let (nx, ny, nz) = (counts(half.x), counts(half.y), counts(half.z));
    let centers = |n: usize, h: f64| -> Vec<f64> {
        (0..n)
            .map(|i| -h + 2.0 * h * (i as f64 + 0.5) / n as f64)
            .collect()
    };
    let (cx, cy, cz) = (centers(nx, half.x), centers(ny, half.y), centers(nz, half.z));
    let mut out = Vec::new();
    for &y in &cy {
        for &z in &cz {
            out.push(Vector3::new(half.x, y, z));
            out.push(Vector3::new(-half.x, y, z));
        }
    }
    for &x in &cx {
        for &z in &cz {
            out.push(Vector3::new(x, half.y, z));
            out.push(Vector3::new(x, -half.y, z));
        }
    }
    for &x in &cx {
        for &y in &cy {
            out.push(Vector3::new(x, y, half.z));
            out.push(Vector3::new(x, y, -half.z));
        }
    }
    out
}

fn sample_cylinder(radius: f64, half_height: f64, density: f64, phase: f64) -> Vec<Vector3<f64>> {
    let mut out = Vec::new();
    let circumference = std::f64::consts::TAU * radius;
    let n_th = ((circumference * density).ceil() as usize).max(6);
    let n_z = ((2.0 * half_height * density).ceil() as usize).max(2);
    for iz in 0..n_z {
        let z = -half_height + 2.0 * half_height * (iz as f64 + 0.5) / n_z as f64;
        for it in 0..n_th {
            let th = std::f64::consts::TAU * it as f64 / n_th as f64 + phase;
            out.push(Vector3::new(radius * th.cos(), radius * th.sin(), z));
        }
    }
    // End caps: concentric rings with counts proportional to circumference.
    let n_r = ((radius * density).ceil() as usize).max(1);
    for &z in &[half_height, -half_height] {
        out.push(Vector3::new(0.0, 0.0, z));
        for ir in 0..n_r {
            let r = radius * (ir as f64 + 0.5) / n_r as f64;
            let n = ((std::f64::consts::TAU * r * density).ceil() as usize).max(4);
            for it in 0..n {
                let th = std::f64::consts::TAU * it as f64 / n as f64 + phase;
                out.push(Vector3::new(r * th.cos(), r * th.sin(), z));
            }
        }
    }
    out
}
