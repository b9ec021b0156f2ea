//! Experiment protocols: per-setting, multi-setting, and unseen-setting
//! runs with NMSE, distance, hit and convergence metrics, plus gate
//! checks and histogram data for reporting.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, OBSTACLE_KINDS};
use crate::dataset::{assemble, CouplingDataset};
use crate::demo::Demonstration;
use crate::dmp::{Dmp, UnrollOptions};
use crate::error::{Error, Result};
use crate::model::{train_lm, CouplingModel, TrainConfig};
use crate::obstacle::ObstacleSetting;
use crate::pipeline::GeneratedData;
use crate::rng::substream_seed;
use crate::rollout::{evaluate_unroll, unroll_coupled};

/// Which models a multi-setting run trains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KindSelection {
    /// One model per obstacle kind.
    All,
    /// One model for a single kind.
    One(String),
    /// A single model across all kinds; reported for comparison only, the
    /// gates do not apply.
    Mixed,
}

/// One evaluated setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingRow {
    pub setting_id: String,
    /// Obstacle kind of the evaluated setting, or the model kind for
    /// unseen runs.
    pub kind: String,
    pub train_nmse: f64,
    pub test_nmse: f64,
    pub final_goal_dist: f64,
    pub mean_signed_distance: f64,
    pub min_signed_distance: f64,
    pub hit: bool,
    pub converged: bool,
    pub baseline_min_signed_distance: f64,
    pub baseline_hit: bool,
    pub train_error: Option<String>,
}

/// Aggregates over the rows of one kind, the table shape of the reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindAggregate {
    pub kind: String,
    pub settings: usize,
    pub train_nmse_mean: f64,
    pub test_nmse_mean: f64,
    pub goal_dist_max: f64,
    pub goal_dist_mean: f64,
    pub signed_distance_mean: f64,
    pub signed_distance_min: f64,
    pub hits: usize,
    pub converged: usize,
    pub baseline_hits: usize,
    pub train_failures: usize,
}

/// NMSE histogram over settings (both splits share the bin edges; the
/// last bin is the overflow).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub train_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
}

impl Histogram {
    fn from_rows(rows: &[SettingRow]) -> Self {
        let edges: Vec<f64> = (0..=30).map(|i| i as f64 * 0.01).collect();
        let n_bins = edges.len(); // 30 regular + 1 overflow
        let mut train_counts = vec![0; n_bins];
        let mut test_counts = vec![0; n_bins];
        let bin = |v: f64| -> usize {
            if !v.is_finite() || v >= 0.30 {
                n_bins - 1
            } else {
                (v / 0.01).floor() as usize
            }
        };
        for row in rows {
            train_counts[bin(row.train_nmse)] += 1;
            test_counts[bin(row.test_nmse)] += 1;
        }
        Histogram {
            edges,
            train_counts,
            test_counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    /// Set for mixed-kind comparison runs, which carry no gates.
    pub comparison_only: bool,
    pub rows: Vec<SettingRow>,
    pub aggregates: Vec<KindAggregate>,
    pub histogram: Histogram,
    pub gates: Vec<GateOutcome>,
}

impl EvalReport {
    pub fn all_gates_passed(&self) -> bool {
        self.gates.iter().all(|g| g.passed)
    }
}

/// Recompute the per-kind aggregates from rows; reports store exactly
/// this function's output.
pub fn aggregate(rows: &[SettingRow]) -> Vec<KindAggregate> {
    let mut kinds: Vec<&str> = Vec::new();
    for r in rows {
        if !kinds.contains(&r.kind.as_str()) {
            kinds.push(&r.kind);
        }
    }
    kinds
        .iter()
        .map(|kind| {
            let group: Vec<&SettingRow> = rows.iter().filter(|r| &r.kind == kind).collect();
            let n = group.len();
            let ok: Vec<&&SettingRow> =
                group.iter().filter(|r| r.train_error.is_none()).collect();
            let mean = |f: &dyn Fn(&SettingRow) -> f64| -> f64 {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            KindAggregate {
                kind: kind.to_string(),
                settings: n,
                train_nmse_mean: mean(&|r| r.train_nmse),
                test_nmse_mean: mean(&|r| r.test_nmse),
                goal_dist_max: ok
                    .iter()
                    .map(|r| r.final_goal_dist)
                    .fold(f64::NEG_INFINITY, f64::max),
                goal_dist_mean: mean(&|r| r.final_goal_dist),
                signed_distance_mean: mean(&|r| r.mean_signed_distance),
                signed_distance_min: ok
                    .iter()
                    .map(|r| r.min_signed_distance)
                    .fold(f64::INFINITY, f64::min),
                hits: group.iter().filter(|r| r.hit).count(),
                converged: group.iter().filter(|r| r.converged).count(),
                baseline_hits: group.iter().filter(|r| r.baseline_hit).count(),
                train_failures: n - ok.len(),
            }
        })
        .collect()
}

fn unroll_options(cfg: &RunConfig) -> UnrollOptions {
    let tau = cfg.scene.tau;
    UnrollOptions {
        tau,
        dt: cfg.dmp.dt(tau),
        horizon: cfg.eval.horizon,
    }
}

fn train_config_for(cfg: &RunConfig, stream: &str) -> TrainConfig {
    TrainConfig {
        seed: substream_seed(cfg.seed, stream),
        ..cfg.train
    }
}

struct CoupledOutcome {
    train_nmse: f64,
    test_nmse: f64,
    metrics: crate::rollout::UnrollMetrics,
    train_error: Option<String>,
}

fn evaluate_setting(
    baseline: &Dmp,
    model: Option<&CouplingModel>,
    train_result: &std::result::Result<(f64, f64), String>,
    setting: &ObstacleSetting,
    cfg: &RunConfig,
) -> Result<CoupledOutcome> {
    let gravity = Vector3::from(cfg.scene.gravity);
    let opts = unroll_options(cfg);
    match (model, train_result) {
        (Some(model), Ok((train_nmse, test_nmse))) => {
            let coupled =
                unroll_coupled(baseline, model, setting, &gravity, &cfg.guards, &opts)?;
            let metrics = evaluate_unroll(&coupled.result, setting, cfg.eval.eps_goal);
            Ok(CoupledOutcome {
                train_nmse: *train_nmse,
                test_nmse: *test_nmse,
                metrics,
                train_error: None,
            })
        }
        (_, Err(msg)) => Ok(CoupledOutcome {
            train_nmse: f64::NAN,
            test_nmse: f64::NAN,
            metrics: crate::rollout::UnrollMetrics {
                final_goal_dist: f64::NAN,
                min_signed_distance: f64::NAN,
                mean_signed_distance: f64::NAN,
                hit: false,
                converged: false,
            },
            train_error: Some(msg.clone()),
        }),
        (None, Ok(_)) => Err(Error::InvalidInput("missing model".into())),
    }
}

fn baseline_metrics(
    baseline: &Dmp,
    setting: &ObstacleSetting,
    cfg: &RunConfig,
) -> Result<crate::rollout::UnrollMetrics> {
    let opts = unroll_options(cfg);
    let traj = baseline.unroll(&setting.start, &setting.goal, &opts)?;
    Ok(evaluate_unroll(&traj, setting, cfg.eval.eps_goal))
}

/// Per-setting protocol: train one model per setting on its own
/// demonstrations, unroll it there, and collect NMSE/safety metrics.
/// Training failures are recorded in the row and the run continues.
pub fn run_per_setting(data: &GeneratedData, cfg: &RunConfig) -> Result<EvalReport> {
    let gravity = Vector3::from(cfg.scene.gravity);
    let groups = data.pairs_by_setting();
    let rows: Result<Vec<SettingRow>> = groups
        .par_iter()
        .map(|(setting_id, pairs)| {
            let setting = pairs[0].1;
            let ds = assemble(
                pairs,
                &data.baseline,
                &gravity,
                cfg.split.ratio,
                cfg.split.mode,
                substream_seed(cfg.seed, &format!("split/{setting_id}")),
            )?;
            let tc = train_config_for(cfg, &format!("train/{setting_id}"));
            let trained = train_lm(&ds, &tc);
            let (model, train_result) = match trained {
                Ok((model, report)) => {
                    let test = report.test_nmse.map(|r| r.mean).unwrap_or(f64::NAN);
                    (Some(model), Ok((report.train_nmse.mean, test)))
                }
                Err(e) => (None, Err(e.to_string())),
            };
            let outcome =
                evaluate_setting(&data.baseline, model.as_ref(), &train_result, setting, cfg)?;
            let base = baseline_metrics(&data.baseline, setting, cfg)?;
            Ok(SettingRow {
                setting_id: setting_id.clone(),
                kind: setting.kind_name().to_string(),
                train_nmse: outcome.train_nmse,
                test_nmse: outcome.test_nmse,
                final_goal_dist: outcome.metrics.final_goal_dist,
                mean_signed_distance: outcome.metrics.mean_signed_distance,
                min_signed_distance: outcome.metrics.min_signed_distance,
                hit: outcome.metrics.hit,
                converged: outcome.metrics.converged,
                baseline_min_signed_distance: base.min_signed_distance,
                baseline_hit: base.hit,
                train_error: outcome.train_error,
            })
        })
        .collect();
    let rows = rows?;

    let gate = cfg.eval.nmse_gate_per_setting;
    let worst_train = rows.iter().map(|r| r.train_nmse).fold(f64::NAN, f64::max);
    let worst_test = rows.iter().map(|r| r.test_nmse).fold(f64::NAN, f64::max);
    let failures = rows.iter().filter(|r| r.train_error.is_some()).count();
    let hits: usize = rows.iter().filter(|r| r.hit).count();
    let converged = rows.iter().filter(|r| r.converged).count();
    let gates = vec![
        GateOutcome {
            name: "per-setting train NMSE".into(),
            passed: failures == 0 && rows.iter().all(|r| r.train_nmse <= gate),
            detail: format!("worst {worst_train:.4} vs gate {gate}"),
        },
        GateOutcome {
            name: "per-setting test NMSE".into(),
            passed: failures == 0 && rows.iter().all(|r| r.test_nmse <= gate),
            detail: format!("worst {worst_test:.4} vs gate {gate}"),
        },
        GateOutcome {
            name: "per-setting zero hits".into(),
            passed: hits == 0,
            detail: format!("{hits} hit(s) across {} settings", rows.len()),
        },
        GateOutcome {
            name: "per-setting convergence".into(),
            passed: converged == rows.len(),
            detail: format!("{converged}/{} converged", rows.len()),
        },
    ];

    Ok(EvalReport {
        protocol: "per-setting".into(),
        comparison_only: false,
        aggregates: aggregate(&rows),
        histogram: Histogram::from_rows(&rows),
        gates,
        rows,
    })
}

/// Multi-setting protocol: one model per obstacle kind over all its
/// settings, unrolled on every trained setting. Returns the trained
/// models keyed by kind for downstream (unseen) evaluation.
pub fn run_multi_setting(
    data: &GeneratedData,
    cfg: &RunConfig,
    selection: &KindSelection,
) -> Result<(EvalReport, Vec<(String, CouplingModel)>)> {
    let gravity = Vector3::from(cfg.scene.gravity);
    let comparison_only = matches!(selection, KindSelection::Mixed);
    let groups: Vec<(String, Vec<(&Demonstration, &ObstacleSetting)>)> = match selection {
        KindSelection::All => OBSTACLE_KINDS
            .iter()
            .map(|k| (k.to_string(), data.pairs_of_kind(k)))
            .collect(),
        KindSelection::One(kind) => {
            let pairs = data.pairs_of_kind(kind);
            if pairs.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "no demonstrations for obstacle kind `{kind}`"
                )));
            }
            vec![(kind.clone(), pairs)]
        }
        KindSelection::Mixed => vec![(
            "mixed".to_string(),
            data.pairs.iter().map(|(d, s)| (d, s)).collect(),
        )],
    };

    let mut rows = Vec::new();
    let mut models = Vec::new();
    for (group_name, pairs) in &groups {
        let ds: CouplingDataset = assemble(
            pairs,
            &data.baseline,
            &gravity,
            cfg.split.ratio,
            cfg.split.mode,
            substream_seed(cfg.seed, &format!("split/multi/{group_name}")),
        )?;
        let tc = train_config_for(cfg, &format!("train/multi/{group_name}"));
        let (model, report) = train_lm(&ds, &tc)?;
        let train_nmse = report.train_nmse.mean;
        let test_nmse = report.test_nmse.map(|r| r.mean).unwrap_or(f64::NAN);

        let mut settings: Vec<&ObstacleSetting> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (_, s) in pairs {
            if seen.insert(s.id.clone()) {
                settings.push(s);
            }
        }
        let group_rows: Result<Vec<SettingRow>> = settings
            .par_iter()
            .map(|setting| {
                let outcome = evaluate_setting(
                    &data.baseline,
                    Some(&model),
                    &Ok((train_nmse, test_nmse)),
                    setting,
                    cfg,
                )?;
                let base = baseline_metrics(&data.baseline, setting, cfg)?;
                Ok(SettingRow {
                    setting_id: setting.id.clone(),
                    kind: group_name.clone(),
                    train_nmse: outcome.train_nmse,
                    test_nmse: outcome.test_nmse,
                    final_goal_dist: outcome.metrics.final_goal_dist,
                    mean_signed_distance: outcome.metrics.mean_signed_distance,
                    min_signed_distance: outcome.metrics.min_signed_distance,
                    hit: outcome.metrics.hit,
                    converged: outcome.metrics.converged,
                    baseline_min_signed_distance: base.min_signed_distance,
                    baseline_hit: base.hit,
                    train_error: None,
                })
            })
            .collect();
        rows.extend(group_rows?);
        models.push((group_name.clone(), model));
    }

    let gates = if comparison_only {
        Vec::new()
    } else {
        let gate = cfg.eval.nmse_gate_multi;
        let aggregates = aggregate(&rows);
        let mut gates = Vec::new();
        for agg in &aggregates {
            gates.push(GateOutcome {
                name: format!("multi-setting NMSE ({})", agg.kind),
                passed: agg.train_nmse_mean <= gate && agg.test_nmse_mean <= gate,
                detail: format!(
                    "train {:.4} / test {:.4} vs gate {gate}",
                    agg.train_nmse_mean, agg.test_nmse_mean
                ),
            });
        }
        let hits: usize = rows.iter().filter(|r| r.hit).count();
        let converged = rows.iter().filter(|r| r.converged).count();
        gates.push(GateOutcome {
            name: "multi-setting zero hits".into(),
            passed: hits == 0,
            detail: format!("{hits} hit(s) across {} unrolls", rows.len()),
        });
        gates.push(GateOutcome {
            name: "multi-setting convergence".into(),
            passed: converged == rows.len(),
            detail: format!("{converged}/{} converged", rows.len()),
        });
        gates
    };

    Ok((
        EvalReport {
            protocol: "multi".into(),
            comparison_only,
            aggregates: aggregate(&rows),
            histogram: Histogram::from_rows(&rows),
            gates,
            rows,
        },
        models,
    ))
}

/// Unseen-setting protocol: unroll kind-trained models over the
/// adversarial grid and contrast with the uncoupled baseline.
pub fn run_unseen(
    data: &GeneratedData,
    models: &[(String, CouplingModel)],
    cfg: &RunConfig,
) -> Result<EvalReport> {
    if models.is_empty() {
        return Err(Error::InvalidInput("no trained models supplied".into()));
    }
    let base_rows: Result<Vec<crate::rollout::UnrollMetrics>> = data
        .grid
        .par_iter()
        .map(|setting| baseline_metrics(&data.baseline, setting, cfg))
        .collect();
    let base_rows = base_rows?;

    let mut rows = Vec::new();
    for (kind, model) in models {
        let kind_rows: Result<Vec<SettingRow>> = data
            .grid
            .par_iter()
            .zip(&base_rows)
            .map(|(setting, base)| {
                let outcome = evaluate_setting(
                    &data.baseline,
                    Some(model),
                    &Ok((f64::NAN, f64::NAN)),
                    setting,
                    cfg,
                )?;
                Ok(SettingRow {
                    setting_id: setting.id.clone(),
                    kind: kind.clone(),
                    train_nmse: f64::NAN,
                    test_nmse: f64::NAN,
                    final_goal_dist: outcome.metrics.final_goal_dist,
                    mean_signed_distance: outcome.metrics.mean_signed_distance,
                    min_signed_distance: outcome.metrics.min_signed_distance,
                    hit: outcome.metrics.hit,
                    converged: outcome.metrics.converged,
                    baseline_min_signed_distance: base.min_signed_distance,
                    baseline_hit: base.hit,
                    train_error: None,
                })
            })
            .collect();
        rows.extend(kind_rows?);
    }

    let n_grid = data.grid.len();
    let baseline_hits = base_rows.iter().filter(|m| m.hit).count();
    let mut gates = vec![GateOutcome {
        name: "unseen grid adversarial".into(),
        passed: baseline_hits as f64 >= cfg.eval.min_baseline_hit_fraction * n_grid as f64,
        detail: format!(
            "baseline hits {baseline_hits}/{n_grid} (need >= {:.0}%)",
            cfg.eval.min_baseline_hit_fraction * 100.0
        ),
    }];
    for (kind, _) in models {
        let kind_rows: Vec<&SettingRow> = rows.iter().filter(|r| &r.kind == kind).collect();
        let hits = kind_rows.iter().filter(|r| r.hit).count();
        let converged = kind_rows.iter().filter(|r| r.converged).count();
        gates.push(GateOutcome {
            name: format!("unseen hits ({kind})"),
            passed: hits as f64 <= cfg.eval.max_hit_fraction_unseen * n_grid as f64,
            detail: format!(
                "{hits}/{n_grid} hits (allowed <= {:.0}%)",
                cfg.eval.max_hit_fraction_unseen * 100.0
            ),
        });
        gates.push(GateOutcome {
            name: format!("unseen convergence ({kind})"),
            passed: converged == kind_rows.len(),
            detail: format!("{converged}/{} converged", kind_rows.len()),
        });
    }

    Ok(EvalReport {
        protocol: "unseen".into(),
        comparison_only: false,
        aggregates: aggregate(&rows),
        histogram: Histogram::from_rows(&rows),
        gates,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregates_recompute_from_rows() {
        let rows = vec![
            SettingRow {
                setting_id: "a".into(),
                kind: "sphere".into(),
                train_nmse: 0.01,
                test_nmse: 0.02,
                final_goal_dist: 0.001,
                mean_signed_distance: 0.2,
                min_signed_distance: 0.05,
                hit: false,
                converged: true,
                baseline_min_signed_distance: -0.01,
                baseline_hit: true,
                train_error: None,
            },
            SettingRow {
                setting_id: "b".into(),
                kind: "sphere".into(),
                train_nmse: 0.03,
                test_nmse: 0.04,
                final_goal_dist: 0.003,
                mean_signed_distance: 0.4,
                min_signed_distance: 0.01,
                hit: false,
                converged: true,
                baseline_min_signed_distance: 0.02,
                baseline_hit: false,
                train_error: None,
            },
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].settings, 2);
        assert!((agg[0].train_nmse_mean - 0.02).abs() < 1e-12);
        assert!((agg[0].goal_dist_max - 0.003).abs() < 1e-12);
        assert_eq!(agg[0].baseline_hits, 1);
        // Recomputation is bit-identical.
        assert_eq!(agg, aggregate(&rows));
    }

    #[test]
    fn histogram_bins_cover_range_and_overflow() {
        let mk = |t: f64| SettingRow {
            setting_id: "x".into(),
            kind: "sphere".into(),
            train_nmse: t,
            test_nmse: t,
            final_goal_dist: 0.0,
            mean_signed_distance: 0.0,
            min_signed_distance: 0.0,
            hit: false,
            converged: true,
            baseline_min_signed_distance: 0.0,
            baseline_hit: false,
            train_error: None,
        };
        let rows = vec![mk(0.005), mk(0.095), mk(0.55), mk(f64::NAN)];
        let h = Histogram::from_rows(&rows);
        assert_eq!(h.train_counts.iter().sum::<usize>(), 4);
        assert_eq!(h.train_counts[0], 1);
        assert_eq!(h.train_counts[9], 1);
        assert_eq!(*h.train_counts.last().unwrap(), 2);
    }
}

