//! Coupling-term regression data: per-step targets extracted from
//! avoidance demonstrations against the baseline primitive, paired with
//! sensory features and a train/test split.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::demo::Demonstration;
use crate::dmp::Dmp;
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureVector};
use crate::frame::LocalFrame;
use crate::obstacle::ObstacleSetting;
use crate::rng::substream_rng;

/// Scene start/goal markers may differ from the baseline's by at most
/// this much for the unit forcing scale to hold.
pub const START_GOAL_TOL: f64 = 1e-3;

/// A demonstration's final sample may drift this far from the goal marker
/// before it is rejected as belonging to a different scene. Recorded
/// avoidance movements do not land exactly on the marker; the attractor
/// goal used for target extraction is the marker itself.
pub const GOAL_DRIFT_TOL: f64 = 0.05;

/// How rows are assigned to the train/test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Individual rows are shuffled into train/test.
    ByRow,
    /// Whole demonstrations go to one side or the other.
    ByDemo,
}

/// Feature/target matrix with provenance and split flags.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingDataset {
    pub features: Vec<FeatureVector>,
    /// Local-frame coupling targets, one per row.
    pub targets: Vec<Vector3<f64>>,
    /// True for training rows.
    pub train_mask: Vec<bool>,
    /// Source demo id per row.
    pub demo_ids: Vec<String>,
}

impl CouplingDataset {
    pub fn from_rows(
        features: Vec<FeatureVector>,
        targets: Vec<Vector3<f64>>,
        train_mask: Vec<bool>,
        demo_ids: Vec<String>,
    ) -> Result<Self> {
        if features.len() != targets.len()
            || features.len() != train_mask.len()
            || features.len() != demo_ids.len()
        {
            return Err(Error::InvalidInput("dataset column lengths differ".into()));
        }
        Ok(CouplingDataset {
            features,
            targets,
            train_mask,
            demo_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.train_mask[i]).collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.train_mask[i]).collect()
    }

    pub fn train_count(&self) -> usize {
        self.train_mask.iter().filter(|&&m| m).count()
    }

    pub fn test_count(&self) -> usize {
        self.len() - self.train_count()
    }
}

/// Per-step coupling targets of one avoidance demonstration, expressed in
/// the baseline's local frame.
///
/// For each sample the target is the demonstrated acceleration minus what
/// the baseline transformation system would produce there:
/// `C_t = tau^2 a - alpha_v (beta_v (g - x) - tau v) - f(s)`, with the
/// phase taken from the closed-form canonical solution at the sample's
/// normalized time and a unit forcing scale (the demo shares the
/// baseline's endpoints).
pub fn compute_targets(
    demo: &Demonstration,
    baseline: &Dmp,
    gravity: &Vector3<f64>,
) -> Result<Vec<Vector3<f64>>> {
    demo.validate()?;
    baseline.validate()?;
    let start_err = (demo.start() - baseline.x0_demo).norm();
    let goal_err = (demo.goal() - baseline.g_demo).norm();
    if start_err > START_GOAL_TOL || goal_err > GOAL_DRIFT_TOL {
        return Err(Error::Fit {
            demo: demo.id.clone(),
            reason: format!(
                "start/goal differ from baseline by {start_err:.2e}/{goal_err:.2e} m; \
                 unit forcing scale would not hold"
            ),
        });
    }

    let frame = LocalFrame::build(&baseline.x0_demo, &baseline.g_demo, gravity)?;
    let params = &baseline.params;
    let tau = demo.tau;
    let goal = baseline.g_demo;
    let t0 = demo.samples[0].t;

    let mut out = Vec::with_capacity(demo.samples.len());
    for sample in &demo.samples {
        let s = (-params.alpha_s * (sample.t - t0) / tau).exp();
        let f = baseline.forcing(s)?;
        let mut ct = Vector3::zeros();
        for d in 0..3 {
            ct[d] = tau * tau * sample.acc[d]
                - params.alpha_v
                    * (params.beta_v * (goal[d] - sample.pos[d]) - tau * sample.vel[d])
                - f[d];
        }
        out.push(frame.vector_to_local(&ct));
    }
    Ok(out)
}

/// Assemble features and targets from demo/setting pairs with a
/// deterministic seeded split.
pub fn assemble(
    pairs: &[(&Demonstration, &ObstacleSetting)],
    baseline: &Dmp,
    gravity: &Vector3<f64>,
    split_ratio: f64,
    mode: SplitMode,
    seed: u64,
) -> Result<CouplingDataset> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no demonstrations to assemble".into()));
    }
    if !(0.0..=1.0).contains(&split_ratio) {
        return Err(Error::Config(format!("split ratio {split_ratio} out of [0,1]")));
    }

    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut demo_ids = Vec::new();
    for (demo, setting) in pairs {
        if (setting.start - baseline.x0_demo).norm() > START_GOAL_TOL
            || (setting.goal - baseline.g_demo).norm() > START_GOAL_TOL
        {
            return Err(Error::Fit {
                demo: demo.id.clone(),
                reason: format!(
                    "setting `{}` endpoints differ from the baseline's",
                    setting.id
                ),
            });
        }
        let cts = compute_targets(demo, baseline, gravity)?;
        let frame = LocalFrame::build(&setting.start, &setting.goal, gravity)?;
        for (sample, ct) in demo.samples.iter().zip(cts) {
            features.push(extract_features(
                setting,
                &frame,
                &sample.pos,
                &sample.vel,
                demo.tau,
            )?);
            targets.push(ct);
            demo_ids.push(demo.id.clone());
        }
    }

    let n = features.len();
    let mut train_mask = vec![false; n];
    let mut rng = substream_rng(seed, "dataset/split");
    match mode {
        SplitMode::ByRow => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let n_train = (n as f64 * split_ratio).round() as usize;
            for &i in idx.iter().take(n_train) {
                train_mask[i] = true;
            }
        }
        SplitMode::ByDemo => {
            let mut ids: Vec<&str> = Vec::new();
            for id in &demo_ids {
                if ids.last() != Some(&id.as_str()) && !ids.contains(&id.as_str()) {
                    ids.push(id);
                }
            }
            let mut shuffled = ids.clone();
            shuffled.shuffle(&mut rng);
            let n_train = (shuffled.len() as f64 * split_ratio).round() as usize;
            let train_ids: std::collections::HashSet<&str> =
                shuffled.into_iter().take(n_train).collect();
            for (i, id) in demo_ids.iter().enumerate() {
                train_mask[i] = train_ids.contains(id.as_str());
            }
        }
    }

    CouplingDataset::from_rows(features, targets, train_mask, demo_ids)
}
