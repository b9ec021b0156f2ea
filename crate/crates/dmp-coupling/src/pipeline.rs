//! Dataset generation and baseline fitting: the front half of the
//! pipeline, shared by the CLI and the evaluation harness.

use nalgebra::Vector3;

use crate::config::{RunConfig, OBSTACLE_KINDS};
use crate::demo::Demonstration;
use crate::dmp::{fit_forcing_weights, Dmp, FitReport};
use crate::error::Result;
use crate::obstacle::ObstacleSetting;
use crate::oracle::{gen_avoidance, gen_baseline};
use crate::rng::{substream_rng, substream_seed};
use crate::scene::{training_scenes, unseen_grid};

/// Everything one seeded generation run produces.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub baseline_demos: Vec<Demonstration>,
    pub baseline: Dmp,
    pub baseline_fit: FitReport,
    /// Avoidance demonstrations with their settings, grouped in kind then
    /// setting order.
    pub pairs: Vec<(Demonstration, ObstacleSetting)>,
    /// The unseen-evaluation grid (no demonstrations).
    pub grid: Vec<ObstacleSetting>,
}

impl GeneratedData {
    pub fn gravity(&self) -> Vector3<f64> {
        // Recorded per setting; the scene base carries one gravity vector.
        Vector3::new(0.0, 0.0, -1.0)
    }

    /// Settings of one obstacle kind, in generation order.
    pub fn settings_of_kind(&self, kind: &str) -> Vec<&ObstacleSetting> {
        let mut seen = std::collections::HashSet::new();
        self.pairs
            .iter()
            .filter(|(_, s)| s.kind_name() == kind)
            .filter(|(_, s)| seen.insert(s.id.clone()))
            .map(|(_, s)| s)
            .collect()
    }

    /// (demo, setting) pairs of one kind.
    pub fn pairs_of_kind(&self, kind: &str) -> Vec<(&Demonstration, &ObstacleSetting)> {
        self.pairs
            .iter()
            .filter(|(_, s)| s.kind_name() == kind)
            .map(|(d, s)| (d, s))
            .collect()
    }

    /// Pairs grouped by setting id, preserving generation order.
    pub fn pairs_by_setting(&self) -> Vec<(String, Vec<(&Demonstration, &ObstacleSetting)>)> {
        let mut order: Vec<String> = Vec::new();
        let mut map: std::collections::HashMap<String, Vec<(&Demonstration, &ObstacleSetting)>> =
            std::collections::HashMap::new();
        for (d, s) in &self.pairs {
            if !map.contains_key(&s.id) {
                order.push(s.id.clone());
            }
            map.entry(s.id.clone()).or_default().push((d, s));
        }
        order
            .into_iter()
            .map(|id| {
                let v = map.remove(&id).expect("grouped above");
                (id, v)
            })
            .collect()
    }
}

/// The same setting with its obstacle shifted uniformly within a ball of
/// radius `radius`; markers, shape, and cloud seed stay put.
fn perturbed_setting(
    setting: &ObstacleSetting,
    radius: f64,
    seed: u64,
) -> Result<ObstacleSetting> {
    use rand::Rng;
    let mut rng = crate::rng::substream_rng(seed, "pose");
    let delta = loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm_squared() <= 1.0 {
            break v * radius;
        }
    };
    let mut pose = setting.pose;
    pose.position += delta;
    ObstacleSetting::new(
        setting.id.clone(),
        setting.shape,
        pose,
        setting.start,
        setting.goal,
        setting.density,
        setting.seed,
    )
}

/// Generate the full synthetic dataset for a config: baseline demos, a
/// fitted baseline, avoidance demos on the training scenes of all three
/// obstacle kinds, and the unseen grid.
pub fn generate(cfg: &RunConfig) -> Result<GeneratedData> {
    cfg.validate()?;
    let base = cfg.scene.base();
    let seed = cfg.seed;

    let mut baseline_demos = Vec::with_capacity(cfg.demo.baseline_count);
    for i in 0..cfg.demo.baseline_count {
        let mut rng = substream_rng(seed, &format!("baseline/{i}"));
        baseline_demos.push(gen_baseline(
            format!("baseline_{i:02}"),
            &base.start,
            &base.goal,
            base.tau,
            cfg.demo.rate_hz,
            cfg.demo.jitter_sigma,
            &mut rng,
        )?);
    }
    let (baseline, baseline_fit) =
        fit_forcing_weights(&baseline_demos, &cfg.dmp.params(), &cfg.fit.options())?;

    let mut pairs = Vec::new();
    for kind in OBSTACLE_KINDS {
        let shape = cfg.scene.shape_for(kind)?;
        let settings = training_scenes(
            &base,
            shape,
            &cfg.scene.training,
            substream_seed(seed, &format!("scenes/{kind}")),
        )?;
        for setting in settings {
            for d in 0..cfg.demo.per_setting {
                let demo_id = format!("{}_demo_{d:02}", setting.id);
                let scene = if d == 0 || cfg.demo.setting_jitter <= 0.0 {
                    setting.clone()
                } else {
                    perturbed_setting(
                        &setting,
                        cfg.demo.setting_jitter,
                        substream_seed(seed, &format!("scene-jitter/{demo_id}")),
                    )?
                };
                let demo = gen_avoidance(
                    demo_id.clone(),
                    &baseline,
                    &scene,
                    &base.gravity,
                    cfg.demo.rate_hz,
                    &cfg.oracle,
                    substream_seed(seed, &format!("avoid/{demo_id}")),
                )?;
                pairs.push((demo, scene));
            }
        }
    }

    let grid = unseen_grid(&base, &cfg.scene.grid, substream_seed(seed, "scenes/grid"))?;

    Ok(GeneratedData {
        baseline_demos,
        baseline,
        baseline_fit,
        pairs,
        grid,
    })
}
