//! Dynamic movement primitives with learned coupling terms for reactive
//! obstacle avoidance.
//!
//! The crate fits a baseline primitive from demonstrations, extracts
//! coupling-term regression targets from avoidance demonstrations, trains
//! a small bounded-output network on obstacle features with
//! Levenberg–Marquardt, and unrolls goal-convergent avoidance trajectories
//! with physically-motivated output guards. A synthetic demonstration
//! oracle (minimum-jerk baselines plus an analytic potential-field
//! avoidance model) stands in for motion-capture data and doubles as a
//! verification oracle for the pipeline.

pub mod config;
pub mod dataset;
pub mod demo;
pub mod dmp;
pub mod error;
pub mod eval;
pub mod features;
pub mod frame;
pub mod guard;
pub mod io;
pub mod model;
pub mod obstacle;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod rollout;
pub mod scene;

pub use config::RunConfig;
pub use dataset::{assemble, compute_targets, CouplingDataset, SplitMode};
pub use demo::{DemoSample, Demonstration};
pub use dmp::{
    basis_activations, canonical_step, fit_forcing_weights, forcing_term, transformation_step,
    Dmp, DmpParams, FitOptions, FitReport, PhaseState, TransformState, UnrollOptions,
    UnrollResult, UnrollStep,
};
pub use error::{Error, Result};
pub use features::{extract_features, FeatureVector, FEATURE_DIM};
pub use frame::LocalFrame;
pub use guard::{apply_guards, guard_context, GuardConfig, GuardContext};
pub use model::{nmse, train_lm, CouplingModel, NmseReport, TrainConfig, TrainReport};
pub use obstacle::{augment_cloud, ObstacleSetting, Pose, Shape};
pub use oracle::{gen_avoidance, gen_baseline, min_jerk, OracleParams};
pub use rollout::{evaluate_unroll, unroll_coupled, CoupledUnroll, UnrollMetrics};
pub use scene::{training_scenes, unseen_grid, GridSpec, SceneBase, TrainingSceneSpec};
