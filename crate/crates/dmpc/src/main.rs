//! `dmpc`: dataset generation, baseline fitting, coupling-term training,
//! unrolling, and evaluation for movement primitives with learned
//! obstacle-avoidance coupling.
//!
//! Exit codes: 0 success, 1 evaluation-gate failure or internal error,
//! 2 usage/configuration error. All flags can also be set through
//! `DMPC_*` environment variables where documented.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;

use dmp_coupling::config::{RunConfig, OBSTACLE_KINDS};
use dmp_coupling::eval::{run_multi_setting, run_per_setting, run_unseen, EvalReport, KindSelection};
use dmp_coupling::io;
use dmp_coupling::model::CouplingModel;
use dmp_coupling::pipeline;
use dmp_coupling::{fit_forcing_weights, unroll_coupled, GuardConfig, UnrollOptions};

#[derive(Parser)]
#[command(name = "dmpc", version, about)]
struct Cli {
    /// Run configuration file (TOML); defaults are used when absent.
    #[arg(long, global = true, env = "DMPC_CONFIG")]
    config: Option<PathBuf>,

    /// Override the configuration's root seed.
    #[arg(long, global = true, env = "DMPC_SEED")]
    seed: Option<u64>,

    /// Worker threads for parallel sections (default: available cores).
    #[arg(long, global = true, env = "DMPC_PARALLEL")]
    parallel: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Protocol {
    PerSetting,
    Multi,
    Unseen,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Obstacle {
    Sphere,
    Cube,
    Cylinder,
    /// One model per obstacle kind.
    All,
    /// A single comparison model across every kind (no gates).
    Mixed,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GuardSwitch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic dataset: baseline demos, obstacle settings
    /// with avoidance demos, and the unseen evaluation grid.
    GenDemos {
        /// Dataset directory (default: the config's data_dir).
        #[arg(long, env = "DMPC_OUT")]
        out: Option<PathBuf>,
    },
    /// Fit the baseline primitive from the dataset's baseline demos.
    FitBaseline {
        /// Dataset directory.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Artifacts directory for baseline.toml.
        #[arg(long, env = "DMPC_OUT")]
        out: Option<PathBuf>,
    },
    /// Train coupling models over the dataset's avoidance demos.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Baseline primitive file (default: <artifacts>/baseline.toml).
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, env = "DMPC_OUT")]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        obstacle: Obstacle,
    },
    /// Unroll the baseline, optionally with a trained coupling model.
    Unroll {
        #[arg(long)]
        baseline: PathBuf,
        /// Trained model file; required unless --no-coupling.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Obstacle setting file; required unless --no-coupling.
        #[arg(long)]
        setting: Option<PathBuf>,
        /// Output trajectory CSV.
        #[arg(long, env = "DMPC_OUT")]
        out: PathBuf,
        /// Integrate the bare primitive without any coupling term.
        #[arg(long)]
        no_coupling: bool,
        /// Disabling the guards is permitted but stamps the output UNSAFE.
        #[arg(long, value_enum, default_value = "on")]
        guards: GuardSwitch,
    },
    /// Run an evaluation protocol and write reports; exits nonzero when a
    /// gate fails.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        protocol: Protocol,
        /// Trained-model directory (unseen protocol).
        #[arg(long)]
        models: Option<PathBuf>,
        /// Report directory (default: the config's report_dir).
        #[arg(long, env = "DMPC_OUT")]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        obstacle: Obstacle,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e
                .downcast_ref::<dmp_coupling::Error>()
                .map(|err| {
                    matches!(
                        err,
                        dmp_coupling::Error::Config(_)
                            | dmp_coupling::Error::Io { .. }
                            | dmp_coupling::Error::Format { .. }
                    )
                })
                .unwrap_or(false);
            if usage {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| dmp_coupling::Error::io(path.display().to_string(), e))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn init_threads(parallel: Option<usize>) {
    if let Some(n) = parallel {
        // Ignore the error when a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    init_threads(cli.parallel);
    let cfg = load_config(&cli)?;
    match &cli.cmd {
        Cmd::GenDemos { out } => {
            let dir = out.clone().unwrap_or_else(|| cfg.paths.data_dir.clone().into());
            let data = pipeline::generate(&cfg)?;
            if let Err(e) = io::write_dataset_dir(&dir, &data, &cfg) {
                // Leave no half-written dataset behind.
                let _ = std::fs::remove_dir_all(&dir);
                return Err(e.into());
            }
            println!(
                "dataset: {} baseline demos, {} avoidance demos over {} settings, {} grid settings -> {}",
                data.baseline_demos.len(),
                data.pairs.len(),
                data.pairs
                    .iter()
                    .map(|(_, s)| s.id.as_str())
                    .collect::<std::collections::HashSet<_>>()
                    .len(),
                data.grid.len(),
                dir.display()
            );
            println!("dataset hash: {}", io::dataset_hash(&dir)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::FitBaseline { data, out } => {
            let data_dir = data.clone().unwrap_or_else(|| cfg.paths.data_dir.clone().into());
            let artifacts = out
                .clone()
                .unwrap_or_else(|| cfg.paths.artifacts_dir.clone().into());
            let loaded = io::load_dataset_dir(&data_dir, &cfg)?;
            let (baseline, report) = fit_forcing_weights(
                &loaded.baseline_demos,
                &cfg.dmp.params(),
                &cfg.fit.options(),
            )?;
            io::ensure_dir(&artifacts)?;
            io::save_dmp(&artifacts.join("baseline.toml"), &baseline)?;
            let log = format!(
                "baseline fit over {} demos\nper-DOF NMSE: {:.3e} {:.3e} {:.3e}\nmean NMSE: {:.3e}\n",
                loaded.baseline_demos.len(),
                report.nmse.x,
                report.nmse.y,
                report.nmse.z,
                report.mean_nmse()
            );
            std::fs::write(artifacts.join("fit_log.txt"), &log)
                .map_err(|e| dmp_coupling::Error::io("fit_log.txt", e))?;
            print!("{log}");
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Train {
            data,
            baseline,
            out,
            obstacle,
        } => {
            let data_dir = data.clone().unwrap_or_else(|| cfg.paths.data_dir.clone().into());
            let artifacts = out
                .clone()
                .unwrap_or_else(|| cfg.paths.artifacts_dir.clone().into());
            let mut loaded = io::load_dataset_dir(&data_dir, &cfg)?;
            if let Some(path) = baseline_path(baseline, &artifacts) {
                loaded.baseline = io::load_dmp(&path)?;
            }
            let selection = selection_for(*obstacle);
            let (report, models) = run_multi_setting(&loaded, &cfg, &selection)?;
            io::ensure_dir(&artifacts)?;
            let mut log = String::new();
            for (kind, model) in &models {
                let path = artifacts.join(format!("model_{kind}.toml"));
                io::save_model(&path, model)?;
                log.push_str(&format!(
                    "model {kind}: train NMSE {:.4e}, {} iterations, lambda {:.2e} -> {}\n",
                    model.train_meta.train_nmse,
                    model.train_meta.iterations,
                    model.train_meta.final_lambda,
                    path.display()
                ));
            }
            for agg in &report.aggregates {
                log.push_str(&format!(
                    "unrolls {}: hits {}, converged {}/{}\n",
                    agg.kind, agg.hits, agg.converged, agg.settings
                ));
            }
            std::fs::write(artifacts.join("train_log.txt"), &log)
                .map_err(|e| dmp_coupling::Error::io("train_log.txt", e))?;
            print!("{log}");
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Unroll {
            baseline,
            model,
            setting,
            out,
            no_coupling,
            guards,
        } => {
            let baseline = io::load_dmp(baseline)?;
            let tau = cfg.scene.tau;
            let opts = UnrollOptions {
                tau,
                dt: cfg.dmp.dt(tau),
                horizon: cfg.eval.horizon,
            };
            let guard_cfg = match guards {
                GuardSwitch::On => cfg.guards,
                GuardSwitch::Off => GuardConfig::disabled(),
            };
            let mut comments = vec![format!("config hash: {}", io::config_hash(&cfg)?)];
            if *guards == GuardSwitch::Off {
                comments.push("UNSAFE: guards disabled".into());
            }

            let result = if *no_coupling {
                let (start, goal) = match setting {
                    Some(path) => {
                        let s = io::load_setting(path)?;
                        (s.start, s.goal)
                    }
                    None => (baseline.x0_demo, baseline.g_demo),
                };
                comments.push("coupling: none".into());
                baseline.unroll(&start, &goal, &opts)?
            } else {
                let (model_path, setting_path) = match (model, setting) {
                    (Some(m), Some(s)) => (m, s),
                    _ => {
                        return Err(dmp_coupling::Error::Config(
                            "--model and --setting are required unless --no-coupling".into(),
                        )
                        .into())
                    }
                };
                let model = io::load_model(model_path)?;
                let setting = io::load_setting(setting_path)?;
                comments.push(format!("setting: {}", setting.id));
                comments.push(format!(
                    "guards: {}",
                    if guard_cfg.all_enabled() { "on" } else { "off" }
                ));
                let coupled = unroll_coupled(
                    &baseline,
                    &model,
                    &setting,
                    &Vector3::from(cfg.scene.gravity),
                    &guard_cfg,
                    &opts,
                )?;
                coupled.result
            };
            io::write_trajectory(out, &result, &comments)?;
            println!(
                "unrolled {} steps, final goal distance {:.4} m -> {}",
                result.len(),
                result.final_goal_distance(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Eval {
            data,
            protocol,
            models,
            out,
            obstacle,
        } => {
            let data_dir = data.clone().unwrap_or_else(|| cfg.paths.data_dir.clone().into());
            let report_dir = out
                .clone()
                .unwrap_or_else(|| cfg.paths.report_dir.clone().into());
            let loaded = io::load_dataset_dir(&data_dir, &cfg)?;
            let report = match protocol {
                Protocol::PerSetting => run_per_setting(&loaded, &cfg)?,
                Protocol::Multi => run_multi_setting(&loaded, &cfg, &selection_for(*obstacle))?.0,
                Protocol::Unseen => {
                    let models_dir = models
                        .clone()
                        .unwrap_or_else(|| cfg.paths.artifacts_dir.clone().into());
                    let loaded_models = load_models(&models_dir, *obstacle)?;
                    run_unseen(&loaded, &loaded_models, &cfg)?
                }
            };
            io::write_report(&report_dir, &report)?;
            print_report(&report);
            println!("report hash: {}", io::report_hash(&report_dir)?);
            if report.comparison_only || report.all_gates_passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
    }
}

fn baseline_path(flag: &Option<PathBuf>, artifacts: &Path) -> Option<PathBuf> {
    match flag {
        Some(p) => Some(p.clone()),
        None => {
            let default = artifacts.join("baseline.toml");
            default.exists().then_some(default)
        }
    }
}

fn selection_for(obstacle: Obstacle) -> KindSelection {
    match obstacle {
        Obstacle::All => KindSelection::All,
        Obstacle::Mixed => KindSelection::Mixed,
        Obstacle::Sphere => KindSelection::One("sphere".into()),
        Obstacle::Cube => KindSelection::One("cube".into()),
        Obstacle::Cylinder => KindSelection::One("cylinder".into()),
    }
}

fn load_models(dir: &Path, obstacle: Obstacle) -> anyhow::Result<Vec<(String, CouplingModel)>> {
    let kinds: Vec<&str> = match obstacle {
        Obstacle::All => OBSTACLE_KINDS.to_vec(),
        Obstacle::Mixed => vec!["mixed"],
        Obstacle::Sphere => vec!["sphere"],
        Obstacle::Cube => vec!["cube"],
        Obstacle::Cylinder => vec!["cylinder"],
    };
    let mut models = Vec::new();
    for kind in kinds {
        let path = dir.join(format!("model_{kind}.toml"));
        models.push((kind.to_string(), io::load_model(&path)?));
    }
    Ok(models)
}

fn print_report(report: &EvalReport) {
    println!("protocol: {}", report.protocol);
    if report.comparison_only {
        println!("comparison-only run; gates skipped");
    }
    for agg in &report.aggregates {
        println!(
            "{}: {} settings, train NMSE {:.4}, test NMSE {:.4}, goal dist max/mean {:.4}/{:.4}, \
             signed distance mean/min {:.4}/{:.4}, hits {}, converged {}/{}, baseline hits {}",
            agg.kind,
            agg.settings,
            agg.train_nmse_mean,
            agg.test_nmse_mean,
            agg.goal_dist_max,
            agg.goal_dist_mean,
            agg.signed_distance_mean,
            agg.signed_distance_min,
            agg.hits,
            agg.converged,
            agg.settings,
            agg.baseline_hits,
        );
    }
    for gate in &report.gates {
        println!(
            "gate {}: {} ({})",
            gate.name,
            if gate.passed { "pass" } else { "FAIL" },
            gate.detail
        );
    }
}
