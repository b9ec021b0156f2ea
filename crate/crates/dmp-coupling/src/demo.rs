//! Time-stamped demonstration trajectories.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// One demonstration sample: time plus position, velocity, acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoSample {
    pub t: f64,
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub acc: Vector3<f64>,
}

/// A recorded point-to-point movement, optionally tied to an obstacle
/// setting.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub id: String,
    /// Id of the obstacle setting this demo avoided, if any.
    pub setting_id: Option<String>,
    /// Movement duration in seconds.
    pub tau: f64,
    pub samples: Vec<DemoSample>,
}

impl Demonstration {
    /// Build a demonstration from positions only; velocities and
    /// accelerations are recovered by central finite differences at the
    /// source sample rate, one-sided at the endpoints.
    pub fn from_positions(
        id: impl Into<String>,
        setting_id: Option<String>,
        tau: f64,
        t: &[f64],
        pos: &[Vector3<f64>],
    ) -> Result<Self> {
        if t.len() != pos.len() || t.len() < 3 {
            return Err(Error::InvalidInput(
                "need at least 3 matched time/position samples".into(),
            ));
        }
        let vel = finite_differences(t, pos);
        let acc = finite_differences(t, &vel);
        let samples = t
            .iter()
            .zip(pos)
            .zip(vel.iter().zip(&acc))
            .map(|((&t, &p), (&v, &a))| DemoSample {
                t,
                pos: p,
                vel: v,
                acc: a,
            })
            .collect();
        let demo = Demonstration {
            id: id.into(),
            setting_id,
            tau,
            samples,
        };
        demo.validate()?;
        Ok(demo)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "demo `{}` has fewer than 2 samples",
                self.id
            )));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Fit {
                demo: self.id.clone(),
                reason: format!("non-positive duration {}", self.tau),
            });
        }
        for pair in self.samples.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(Error::InvalidInput(format!(
                    "demo `{}` timestamps not strictly increasing",
                    self.id
                )));
            }
        }
        for s in &self.samples {
            let finite = s.t.is_finite()
                && s.pos.iter().all(|v| v.is_finite())
                && s.vel.iter().all(|v| v.is_finite())
                && s.acc.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidInput(format!(
                    "demo `{}` contains non-finite samples",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn start(&self) -> Vector3<f64> {
        self.samples.first().map(|s| s.pos).unwrap_or_default()
    }

    pub fn goal(&self) -> Vector3<f64> {
        self.samples.last().map(|s| s.pos).unwrap_or_default()
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Linear interpolation of (pos, vel, acc) at time `t`, clamped to the
    /// recorded range.
    pub fn interpolate(&self, t: f64) -> DemoSample {
        let samples = &self.samples;
        if t <= samples[0].t {
            return DemoSample { t, ..samples[0] };
        }
        if t >= samples[samples.len() - 1].t {
            return DemoSample {
                t,
                ..samples[samples.len() - 1]
            };
        }
        let idx = samples.partition_point(|s| s.t <= t);
        let (a, b) = (&samples[idx - 1], &samples[idx]);
        let w = (t - a.t) / (b.t - a.t);
        DemoSample {
            t,
            pos: a.pos.lerp(&b.pos, w),
            vel: a.vel.lerp(&b.vel, w),
            acc: a.acc.lerp(&b.acc, w),
        }
    }

    /// RMS mismatch between stored velocities and central differences of
    /// the stored positions, relative to the RMS velocity. Near zero for a
    /// consistent recording.
    pub fn derivative_consistency(&self) -> f64 {
        let t: Vec<f64> = self.samples.iter().map(|s| s.t).collect();
        let pos: Vec<Vector3<f64>> = self.samples.iter().map(|s| s.pos).collect();
        let fd = finite_differences(&t, &pos);
        let mut err = 0.0;
        let mut mag = 0.0;
        // Endpoints use one-sided differences and are noisier; skip them.
        for (i, v) in fd.iter().enumerate().skip(1).take(fd.len().saturating_sub(2)) {
            err += (v - self.samples[i].vel).norm_squared();
            mag += self.samples[i].vel.norm_squared();
        }
        if mag <= f64::EPSILON {
            return 0.0;
        }
        (err / mag).sqrt()
    }
}

/// Central differences on a (possibly non-uniform) time grid, one-sided at
/// the endpoints.
pub fn finite_differences(t: &[f64], values: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let n = values.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let d = if i == 0 {
            (values[1] - values[0]) / (t[1] - t[0])
        } else if i == n - 1 {
            (values[n - 1] - values[n - 2]) / (t[n - 1] - t[n - 2])
        } else {
            (values[i + 1] - values[i - 1]) / (t[i + 1] - t[i - 1])
        };
        out.push(d);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_differences_recover_linear_motion() {
        let t: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let pos: Vec<Vector3<f64>> = t
            .iter()
            .map(|&t| Vector3::new(2.0 * t, -t, 0.5 * t))
            .collect();
        let vel = finite_differences(&t, &pos);
        for v in vel {
            assert!((v - Vector3::new(2.0, -1.0, 0.5)).norm() < 1e-12);
        }
    }

    #[test]
    fn from_positions_rejects_bad_timestamps() {
        let t = vec![0.0, 0.1, 0.1];
        let pos = vec![Vector3::zeros(); 3];
        assert!(Demonstration::from_positions("d", None, 1.0, &t, &pos).is_err());
    }

    #[test]
    fn interpolation_is_exact_at_samples() {
        let t: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let pos: Vec<Vector3<f64>> = t.iter().map(|&t| Vector3::new(t * t, 0.0, 0.0)).collect();
        let demo = Demonstration::from_positions("d", None, 4.0, &t, &pos).unwrap();
        for (i, &ti) in t.iter().enumerate() {
            let s = demo.interpolate(ti);
            assert!((s.pos - pos[i]).norm() < 1e-12);
        }
        // Midpoint interpolation is linear between neighbours.
        let mid = demo.interpolate(1.5);
        assert!((mid.pos.x - (1.0 + 4.0) / 2.0).abs() < 1e-12);
    }
}
