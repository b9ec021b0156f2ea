//! The coupling-term network and its Levenberg–Marquardt trainer.
//!
//! A shallow feed-forward network maps the 17 sensory features to the
//! three coupling-term dimensions: two ReLU hidden layers of 20 and 10
//! units and a sigmoid output layer, so every prediction is bounded no
//! matter how far the inputs leave the training range. Targets are mapped
//! affinely so the training range occupies the [0.1, 0.9] band of the
//! sigmoid, keeping the fit away from saturation; the inverse map is
//! stored with the model. Inputs are standardized by training mean and
//! standard deviation, which Levenberg–Marquardt needs for sane
//! conditioning.
//!
//! Training minimizes the sum of squared residuals on the normalized
//! targets with damped Gauss–Newton steps `(J^T J + lambda I) d = -J^T r`,
//! the Jacobian assembled by reverse-mode accumulation per output. When
//! there are fewer residuals than parameters the step is solved in the
//! dual form `d = -J^T (J J^T + lambda I)^{-1} r`, which is the same step
//! at a fraction of the cost.

use nalgebra::{Cholesky, DMatrix, DVector, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::CouplingDataset;
use crate::error::{Error, Result};
use crate::features::{FeatureVector, FEATURE_DIM};
use crate::rng::substream_seed;

pub const INPUT_DIM: usize = FEATURE_DIM;
pub const HIDDEN1: usize = 20;
pub const HIDDEN2: usize = 10;
pub const OUTPUT_DIM: usize = 3;

const OFF_W1: usize = 0;
const OFF_B1: usize = OFF_W1 + HIDDEN1 * INPUT_DIM;
const OFF_W2: usize = OFF_B1 + HIDDEN1;
const OFF_B2: usize = OFF_W2 + HIDDEN2 * HIDDEN1;
const OFF_W3: usize = OFF_B2 + HIDDEN2;
const OFF_B3: usize = OFF_W3 + OUTPUT_DIM * HIDDEN2;

/// Total trainable parameter count (603 for the 17-20-10-3 architecture).
pub const N_PARAMS: usize = OFF_B3 + OUTPUT_DIM;

/// Sample chunk size for parallel Jacobian/Gram assembly. Fixed so the
/// summation order, and therefore the result, is independent of thread
/// scheduling.
const GRAM_CHUNK: usize = 256;

const STD_FLOOR: f64 = 1e-9;

/// Levenberg–Marquardt settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_iters: usize,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Escalation cap; a Cholesky failure beyond it is a training failure.
    pub lambda_max: f64,
    /// Stop when the residual gradient's max-norm falls below this.
    pub grad_tol: f64,
    /// An accepted step improving the loss by less than this counts
    /// toward the stall patience.
    pub loss_tol: f64,
    pub loss_patience: usize,
    /// Stop once the training NMSE reaches this level.
    pub nmse_target: f64,
    /// Independent seeded initializations; the best final loss wins.
    pub restarts: u32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iters: 500,
            lambda_init: 1e-3,
            lambda_up: 10.0,
            lambda_down: 0.1,
            lambda_max: 1e14,
            grad_tol: 1e-10,
            loss_tol: 1e-9,
            loss_patience: 10,
            nmse_target: 1e-4,
            restarts: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        if !(self.lambda_init > 0.0 && self.lambda_max > self.lambda_init) {
            return Err(Error::Config("lambda_init must be in (0, lambda_max)".into()));
        }
        if !(self.lambda_down < 1.0 && 1.0 < self.lambda_up) {
            return Err(Error::Config(
                "need lambda_down < 1 < lambda_up for damping adaptation".into(),
            ));
        }
        if !(self.grad_tol >= 0.0 && self.loss_tol >= 0.0 && self.nmse_target >= 0.0) {
            return Err(Error::Config("tolerances must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Training provenance stored with a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainMeta {
    pub seed: u64,
    pub iterations: usize,
    pub final_lambda: f64,
    pub train_nmse: f64,
    /// Set when the training rows were fewer than half the parameter
    /// count.
    pub underdetermined: bool,
    pub restarts: u32,
}

/// The trained coupling network.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingModel {
    /// Flattened parameters: W1 row-major, b1, W2, b2, W3, b3.
    params: DVector<f64>,
    pub input_mean: [f64; INPUT_DIM],
    pub input_std: [f64; INPUT_DIM],
    /// Lower output bound per dimension (the sigmoid image's infimum).
    pub out_lo: Vector3<f64>,
    /// Upper output bound per dimension.
    pub out_hi: Vector3<f64>,
    pub train_meta: TrainMeta,
}

impl CouplingModel {
    pub fn from_parts(
        params: DVector<f64>,
        input_mean: [f64; INPUT_DIM],
        input_std: [f64; INPUT_DIM],
        out_lo: Vector3<f64>,
        out_hi: Vector3<f64>,
        train_meta: TrainMeta,
    ) -> Result<Self> {
        if params.len() != N_PARAMS {
            return Err(Error::Config(format!(
                "expected {N_PARAMS} parameters, got {}",
                params.len()
            )));
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::Config("non-finite model parameters".into()));
        }
        for d in 0..3 {
            if !(out_hi[d] > out_lo[d]) {
                return Err(Error::Config("output bounds must satisfy hi > lo".into()));
            }
        }
        if input_std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("input std must be positive".into()));
        }
        Ok(CouplingModel {
            params,
            input_mean,
            input_std,
            out_lo,
            out_hi,
            train_meta,
        })
    }

    pub fn params(&self) -> &DVector<f64> {
        &self.params
    }

    fn standardize(&self, x: &FeatureVector) -> [f64; INPUT_DIM] {
        let mut out = [0.0; INPUT_DIM];
        for i in 0..INPUT_DIM {
            out[i] = (x.0[i] - self.input_mean[i]) / self.input_std[i];
        }
        out
    }

    /// Predict the local-frame coupling term for one feature vector. The
    /// sigmoid output layer keeps every prediction within
    /// `[out_lo, out_hi]` per dimension for any finite input (strictly
    /// inside until the sigmoid saturates at f64 precision).
    pub fn forward(&self, x: &FeatureVector) -> Result<Vector3<f64>> {
        if !x.0.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature input".into()));
        }
        let std = self.standardize(x);
        let act = forward_normalized(self.params.as_slice(), &std);
        let mut out = Vector3::zeros();
        for k in 0..OUTPUT_DIM {
            out[k] = self.out_lo[k] + act.u[k] * (self.out_hi[k] - self.out_lo[k]);
        }
        Ok(out)
    }

    pub fn predict_rows(&self, features: &[FeatureVector]) -> Result<Vec<Vector3<f64>>> {
        features.iter().map(|f| self.forward(f)).collect()
    }
}

/// Intermediate activations of one forward pass on standardized inputs.
#[derive(Debug, Clone)]
pub struct Activations {
    pub z1: [f64; HIDDEN1],
    pub a1: [f64; HIDDEN1],
    pub z2: [f64; HIDDEN2],
    pub a2: [f64; HIDDEN2],
    pub z3: [f64; OUTPUT_DIM],
    /// Sigmoid outputs in (0, 1).
    pub u: [f64; OUTPUT_DIM],
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Forward pass of the flattened network on a standardized input.
pub fn forward_normalized(theta: &[f64], x: &[f64; INPUT_DIM]) -> Activations {
    let mut z1 = [0.0; HIDDEN1];
    let mut a1 = [0.0; HIDDEN1];
    for l in 0..HIDDEN1 {
        let mut acc = theta[OFF_B1 + l];
        let row = &theta[OFF_W1 + l * INPUT_DIM..OFF_W1 + (l + 1) * INPUT_DIM];
        for c in 0..INPUT_DIM {
            acc += row[c] * x[c];
        }
        z1[l] = acc;
        a1[l] = acc.max(0.0);
    }
    let mut z2 = [0.0; HIDDEN2];
    let mut a2 = [0.0; HIDDEN2];
    for j in 0..HIDDEN2 {
        let mut acc = theta[OFF_B2 + j];
        let row = &theta[OFF_W2 + j * HIDDEN1..OFF_W2 + (j + 1) * HIDDEN1];
        for l in 0..HIDDEN1 {
            acc += row[l] * a1[l];
        }
        z2[j] = acc;
        a2[j] = acc.max(0.0);
    }
    let mut z3 = [0.0; OUTPUT_DIM];
    let mut u = [0.0; OUTPUT_DIM];
    for k in 0..OUTPUT_DIM {
        let mut acc = theta[OFF_B3 + k];
        let row = &theta[OFF_W3 + k * HIDDEN2..OFF_W3 + (k + 1) * HIDDEN2];
        for j in 0..HIDDEN2 {
            acc += row[j] * a2[j];
        }
        z3[k] = acc;
        u[k] = sigmoid(acc);
    }
    Activations {
        z1,
        a1,
        z2,
        a2,
        z3,
        u,
    }
}

/// Gradient of the k-th normalized output w.r.t. all parameters,
/// accumulated in reverse through the cached activations.
fn fill_output_gradient(
    theta: &[f64],
    x: &[f64; INPUT_DIM],
    act: &Activations,
    k: usize,
    g: &mut [f64],
) {
    g.fill(0.0);
    let sig = act.u[k] * (1.0 - act.u[k]);
    g[OFF_B3 + k] = sig;
    for j in 0..HIDDEN2 {
        g[OFF_W3 + k * HIDDEN2 + j] = sig * act.a2[j];
    }
    let mut d2 = [0.0; HIDDEN2];
    for j in 0..HIDDEN2 {
        if act.z2[j] > 0.0 {
            d2[j] = sig * theta[OFF_W3 + k * HIDDEN2 + j];
        }
    }
    for j in 0..HIDDEN2 {
        g[OFF_B2 + j] = d2[j];
        if d2[j] != 0.0 {
            for l in 0..HIDDEN1 {
                g[OFF_W2 + j * HIDDEN1 + l] = d2[j] * act.a1[l];
            }
        }
    }
    let mut d1 = [0.0; HIDDEN1];
    for l in 0..HIDDEN1 {
        if act.z1[l] > 0.0 {
            let mut acc = 0.0;
            for j in 0..HIDDEN2 {
                acc += theta[OFF_W2 + j * HIDDEN1 + l] * d2[j];
            }
            d1[l] = acc;
        }
    }
    for l in 0..HIDDEN1 {
        g[OFF_B1 + l] = d1[l];
        if d1[l] != 0.0 {
            for c in 0..INPUT_DIM {
                g[OFF_W1 + l * INPUT_DIM + c] = d1[l] * x[c];
            }
        }
    }
}

fn row_input(xs: &DMatrix<f64>, i: usize) -> [f64; INPUT_DIM] {
    let mut x = [0.0; INPUT_DIM];
    for c in 0..INPUT_DIM {
        x[c] = xs[(i, c)];
    }
    x
}

/// Residual vector `prediction - target` on normalized data, stacked as
/// `[row0_dim0, row0_dim1, row0_dim2, row1_dim0, ...]`.
pub fn residuals(theta: &DVector<f64>, xs: &DMatrix<f64>, ys: &DMatrix<f64>) -> DVector<f64> {
    let n = xs.nrows();
    let mut r = DVector::zeros(n * OUTPUT_DIM);
    let th = theta.as_slice();
    for i in 0..n {
        let act = forward_normalized(th, &row_input(xs, i));
        for k in 0..OUTPUT_DIM {
            r[i * OUTPUT_DIM + k] = act.u[k] - ys[(i, k)];
        }
    }
    r
}

/// Analytic Jacobian of [`residuals`] w.r.t. the parameters, one row per
/// residual. The verification suite checks it column-by-column against
/// central finite differences.
pub fn residual_jacobian(theta: &DVector<f64>, xs: &DMatrix<f64>) -> DMatrix<f64> {
    let n = xs.nrows();
    let th = theta.as_slice();
    let mut jt = DMatrix::zeros(N_PARAMS, n * OUTPUT_DIM);
    let mut g = vec![0.0; N_PARAMS];
    for i in 0..n {
        let x = row_input(xs, i);
        let act = forward_normalized(th, &x);
        for k in 0..OUTPUT_DIM {
            fill_output_gradient(th, &x, &act, k, &mut g);
            jt.column_mut(i * OUTPUT_DIM + k).copy_from_slice(&g);
        }
    }
    jt.transpose()
}

fn loss_and_sse(theta: &[f64], xs: &DMatrix<f64>, ys: &DMatrix<f64>) -> (f64, [f64; 3]) {
    let n = xs.nrows();
    let mut sse = [0.0; 3];
    for i in 0..n {
        let act = forward_normalized(theta, &row_input(xs, i));
        for k in 0..OUTPUT_DIM {
            let r = act.u[k] - ys[(i, k)];
            sse[k] += r * r;
        }
    }
    (sse[0] + sse[1] + sse[2], sse)
}

enum NormalEq {
    /// `J^T J` and `J^T r` for the overdetermined case.
    Primal { jtj: DMatrix<f64>, jtr: DVector<f64> },
    /// Full `J^T` and `r` when residuals are fewer than parameters.
    Dual { jt: DMatrix<f64>, r: DVector<f64> },
}

impl NormalEq {
    fn build(theta: &DVector<f64>, xs: &DMatrix<f64>, ys: &DMatrix<f64>) -> Self {
        let n = xs.nrows();
        let rows = n * OUTPUT_DIM;
        let th = theta.as_slice();
        if rows < N_PARAMS {
            let mut jt = DMatrix::zeros(N_PARAMS, rows);
            let mut r = DVector::zeros(rows);
            let mut g = vec![0.0; N_PARAMS];
            for i in 0..n {
                let x = row_input(xs, i);
                let act = forward_normalized(th, &x);
                for k in 0..OUTPUT_DIM {
                    fill_output_gradient(th, &x, &act, k, &mut g);
                    jt.column_mut(i * OUTPUT_DIM + k).copy_from_slice(&g);
                    r[i * OUTPUT_DIM + k] = act.u[k] - ys[(i, k)];
                }
            }
            NormalEq::Dual { jt, r }
        } else {
            // Chunked Gram accumulation; chunks are reduced in index order.
            let n_chunks = n.div_ceil(GRAM_CHUNK);
            let parts: Vec<(DMatrix<f64>, DVector<f64>)> = (0..n_chunks)
                .into_par_iter()
                .map(|ci| {
                    let lo = ci * GRAM_CHUNK;
                    let hi = ((ci + 1) * GRAM_CHUNK).min(n);
                    let rows_c = (hi - lo) * OUTPUT_DIM;
                    let mut jt_c = DMatrix::zeros(N_PARAMS, rows_c);
                    let mut r_c = DVector::zeros(rows_c);
                    let mut g = vec![0.0; N_PARAMS];
                    for (local, i) in (lo..hi).enumerate() {
                        let x = row_input(xs, i);
                        let act = forward_normalized(th, &x);
                        for k in 0..OUTPUT_DIM {
                            fill_output_gradient(th, &x, &act, k, &mut g);
                            jt_c.column_mut(local * OUTPUT_DIM + k)
                                .copy_from_slice(&g);
                            r_c[local * OUTPUT_DIM + k] = act.u[k] - ys[(i, k)];
                        }
                    }
                    let jtj_c = &jt_c * jt_c.transpose();
                    let jtr_c = jt_c * r_c;
                    (jtj_c, jtr_c)
                })
                .collect();
            let mut jtj = DMatrix::zeros(N_PARAMS, N_PARAMS);
            let mut jtr = DVector::zeros(N_PARAMS);
            for (a, b) in parts {
                jtj += a;
                jtr += b;
            }
            NormalEq::Primal { jtj, jtr }
        }
    }

    fn grad_inf_norm(&self) -> f64 {
        match self {
            NormalEq::Primal { jtr, .. } => jtr.amax(),
            NormalEq::Dual { jt, r } => (jt * r).amax(),
        }
    }

    /// Solve `(J^T J + lambda I) d = -J^T r`; `None` when the damped
    /// system is not positive definite.
    fn solve(&self, lambda: f64) -> Option<DVector<f64>> {
        match self {
            NormalEq::Primal { jtj, jtr } => {
                let mut a = jtj.clone();
                for i in 0..N_PARAMS {
                    a[(i, i)] += lambda;
                }
                let chol = Cholesky::new(a)?;
                Some(-chol.solve(jtr))
            }
            NormalEq::Dual { jt, r } => {
                let mut m = jt.tr_mul(jt);
                for i in 0..m.nrows() {
                    m[(i, i)] += lambda;
                }
                let chol = Cholesky::new(m)?;
                let z = chol.solve(r);
                Some(-(jt * z))
            }
        }
    }
}

struct LmRun {
    theta: DVector<f64>,
    loss: f64,
    accepted_losses: Vec<f64>,
    iterations: usize,
    final_lambda: f64,
}

fn init_params(seed: u64) -> DVector<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut theta = DVector::zeros(N_PARAMS);
    let ranges = [
        (OFF_W1, OFF_W2, 6.0f64 / (INPUT_DIM + HIDDEN1) as f64),
        (OFF_W2, OFF_W3, 6.0 / (HIDDEN1 + HIDDEN2) as f64),
        (OFF_W3, N_PARAMS, 6.0 / (HIDDEN2 + OUTPUT_DIM) as f64),
    ];
    for (lo, hi, r2) in ranges {
        let r = r2.sqrt();
        for i in lo..hi {
            theta[i] = rng.random_range(-r..r);
        }
    }
    theta
}

fn normalized_nmse(sse: &[f64; 3], var: &[f64; 3], n: usize) -> f64 {
    let threshold = variance_floor(var);
    let mut sum = 0.0;
    let mut used = 0;
    for d in 0..3 {
        if var[d] > threshold {
            sum += sse[d] / n as f64 / var[d];
            used += 1;
        }
    }
    if used == 0 {
        0.0
    } else {
        sum / used as f64
    }
}

fn lm_optimize(
    xs: &DMatrix<f64>,
    ys: &DMatrix<f64>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LmRun> {
    let n = xs.nrows();
    let mut var = [0.0; 3];
    for d in 0..3 {
        let mean = ys.column(d).mean();
        var[d] = ys.column(d).iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
    }

    let mut theta = init_params(seed);
    let (mut loss, _) = loss_and_sse(theta.as_slice(), xs, ys);
    let mut lambda = cfg.lambda_init;
    let mut accepted = vec![loss];
    let mut best = (theta.clone(), loss);
    let mut stall = 0usize;
    let mut iterations = 0usize;

    'outer: while iterations < cfg.max_iters {
        iterations += 1;
        let eq = NormalEq::build(&theta, xs, ys);
        if eq.grad_inf_norm() <= cfg.grad_tol {
            break;
        }
        loop {
            match eq.solve(lambda) {
                Some(delta) => {
                    let cand = &theta + &delta;
                    let (cand_loss, cand_sse) = loss_and_sse(cand.as_slice(), xs, ys);
                    if cand_loss.is_finite() && cand_loss < loss {
                        let improvement = loss - cand_loss;
                        theta = cand;
                        loss = cand_loss;
                        lambda = (lambda * cfg.lambda_down).max(1e-15);
                        accepted.push(loss);
                        if loss < best.1 {
                            best = (theta.clone(), loss);
                        }
                        if improvement < cfg.loss_tol {
                            stall += 1;
                            if stall >= cfg.loss_patience {
                                break 'outer;
                            }
                        } else {
                            stall = 0;
                        }
                        if normalized_nmse(&cand_sse, &var, n) <= cfg.nmse_target {
                            break 'outer;
                        }
                        break;
                    } else {
                        lambda *= cfg.lambda_up;
                        if lambda > cfg.lambda_max {
                            break 'outer;
                        }
                    }
                }
                None => {
                    lambda *= cfg.lambda_up;
                    if lambda > cfg.lambda_max {
                        return Err(Error::Training(format!(
                            "damped normal equations stayed singular up to lambda={lambda:.2e}"
                        )));
                    }
                }
            }
        }
    }

    Ok(LmRun {
        theta: best.0,
        loss: best.1,
        accepted_losses: accepted,
        iterations,
        final_lambda: lambda,
    })
}

/// Training outcome details next to the model itself.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Losses after each accepted step (non-increasing), including the
    /// initial loss.
    pub accepted_losses: Vec<f64>,
    pub iterations: usize,
    pub final_lambda: f64,
    pub train_nmse: NmseReport,
    pub test_nmse: Option<NmseReport>,
    pub underdetermined: bool,
}

/// Train the coupling network on the dataset's training rows.
pub fn train_lm(ds: &CouplingDataset, cfg: &TrainConfig) -> Result<(CouplingModel, TrainReport)> {
    cfg.validate()?;
    let train_idx = ds.train_indices();
    if train_idx.is_empty() {
        return Err(Error::Training("dataset has no training rows".into()));
    }
    let n = train_idx.len();
    let underdetermined = n < N_PARAMS / 2;

    let mut input_mean = [0.0; INPUT_DIM];
    let mut input_std = [0.0; INPUT_DIM];
    for c in 0..INPUT_DIM {
        let mean = train_idx.iter().map(|&i| ds.features[i].0[c]).sum::<f64>() / n as f64;
        let var = train_idx
            .iter()
            .map(|&i| (ds.features[i].0[c] - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        input_mean[c] = mean;
        input_std[c] = var.sqrt().max(STD_FLOOR);
    }

    let mut out_lo = Vector3::zeros();
    let mut out_hi = Vector3::zeros();
    for d in 0..3 {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &i in &train_idx {
            min = min.min(ds.targets[i][d]);
            max = max.max(ds.targets[i][d]);
        }
        if max - min < 1e-12 {
            out_lo[d] = min - 0.5;
            out_hi[d] = min + 0.5;
        } else {
            // Training targets land on [0.1, 0.9] of the sigmoid image.
            let span = (max - min) / 0.8;
            out_lo[d] = min - 0.125 * (max - min);
            out_hi[d] = out_lo[d] + span;
        }
    }

    let mut xs = DMatrix::zeros(n, INPUT_DIM);
    let mut ys = DMatrix::zeros(n, OUTPUT_DIM);
    for (row, &i) in train_idx.iter().enumerate() {
        for c in 0..INPUT_DIM {
            xs[(row, c)] = (ds.features[i].0[c] - input_mean[c]) / input_std[c];
        }
        for d in 0..3 {
            ys[(row, d)] = (ds.targets[i][d] - out_lo[d]) / (out_hi[d] - out_lo[d]);
        }
    }

    let restarts = cfg.restarts.max(1);
    let mut best: Option<(LmRun, u64)> = None;
    for r in 0..restarts {
        let seed = if r == 0 {
            cfg.seed
        } else {
            substream_seed(cfg.seed, &format!("restart/{r}"))
        };
        let run = lm_optimize(&xs, &ys, cfg, seed)?;
        if best.as_ref().map(|(b, _)| run.loss < b.loss).unwrap_or(true) {
            best = Some((run, seed));
        }
    }
    let (run, used_seed) = best.expect("at least one restart");

    let mut model = CouplingModel::from_parts(
        run.theta,
        input_mean,
        input_std,
        out_lo,
        out_hi,
        TrainMeta::default(),
    )?;

    let train_targets: Vec<Vector3<f64>> = train_idx.iter().map(|&i| ds.targets[i]).collect();
    let train_feats: Vec<FeatureVector> = train_idx.iter().map(|&i| ds.features[i]).collect();
    let train_pred = model.predict_rows(&train_feats)?;
    let train_nmse = nmse(&train_pred, &train_targets)?;

    // Test error is normalized by the regression target's variance (taken
    // from the training rows); a small held-out subset does not define a
    // stable variance of its own.
    let mut train_var = [0.0; 3];
    for d in 0..3 {
        let mean = train_targets.iter().map(|t| t[d]).sum::<f64>() / n as f64;
        train_var[d] = train_targets
            .iter()
            .map(|t| (t[d] - mean).powi(2))
            .sum::<f64>()
            / n as f64;
    }
    let test_idx = ds.test_indices();
    let test_nmse = if test_idx.is_empty() {
        None
    } else {
        let feats: Vec<FeatureVector> = test_idx.iter().map(|&i| ds.features[i]).collect();
        let targets: Vec<Vector3<f64>> = test_idx.iter().map(|&i| ds.targets[i]).collect();
        Some(nmse_against_reference(
            &model.predict_rows(&feats)?,
            &targets,
            &train_var,
        )?)
    };

    model.train_meta = TrainMeta {
        seed: used_seed,
        iterations: run.iterations,
        final_lambda: run.final_lambda,
        train_nmse: train_nmse.mean,
        underdetermined,
        restarts,
    };

    Ok((
        model,
        TrainReport {
            accepted_losses: run.accepted_losses,
            iterations: run.iterations,
            final_lambda: run.final_lambda,
            train_nmse,
            test_nmse,
            underdetermined,
        },
    ))
}

/// Mean squared error normalized by target variance, per dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmseReport {
    /// Per-dimension NMSE; NaN for excluded dimensions.
    pub per_dim: [f64; 3],
    /// Dimensions whose target variance was zero; excluded from the mean.
    pub excluded: [bool; 3],
    /// Mean over the included dimensions, the headline number.
    pub mean: f64,
}

/// NMSE between predictions and targets. A dimension whose target
/// variance is zero — or negligible next to the other dimensions, i.e.
/// numerically constant — is flagged and excluded from the mean.
pub fn nmse(pred: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<NmseReport> {
    if pred.len() != target.len() {
        return Err(Error::InvalidInput(format!(
            "prediction/target shape mismatch: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("empty prediction matrix".into()));
    }
    let n = pred.len() as f64;
    let mut var = [0.0; 3];
    let mut mse = [0.0; 3];
    for d in 0..3 {
        let mean = target.iter().map(|t| t[d]).sum::<f64>() / n;
        var[d] = target.iter().map(|t| (t[d] - mean).powi(2)).sum::<f64>() / n;
        mse[d] = pred
            .iter()
            .zip(target)
            .map(|(p, t)| (p[d] - t[d]).powi(2))
            .sum::<f64>()
            / n;
    }
    let threshold = variance_floor(&var);
    let mut per_dim = [f64::NAN; 3];
    let mut excluded = [false; 3];
    let mut sum = 0.0;
    let mut used = 0;
    for d in 0..3 {
        if var[d] <= threshold {
            excluded[d] = true;
        } else {
            per_dim[d] = mse[d] / var[d];
            sum += per_dim[d];
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::InvalidInput(
            "all target dimensions have zero variance".into(),
        ));
    }
    Ok(NmseReport {
        per_dim,
        excluded,
        mean: sum / used as f64,
    })
}

/// Variance below which a target dimension counts as constant: zero up to
/// rounding noise relative to the largest dimension.
fn variance_floor(var: &[f64; 3]) -> f64 {
    let max = var.iter().cloned().fold(0.0f64, f64::max);
    (max * 1e-24).max(1e-30)
}

/// NMSE of predictions against targets, normalized per dimension by an
/// externally supplied reference variance (the regression target's).
pub fn nmse_against_reference(
    pred: &[Vector3<f64>],
    target: &[Vector3<f64>],
    reference_var: &[f64; 3],
) -> Result<NmseReport> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::InvalidInput("prediction/target shape mismatch".into()));
    }
    let n = pred.len() as f64;
    let threshold = variance_floor(reference_var);
    let mut per_dim = [f64::NAN; 3];
    let mut excluded = [false; 3];
    let mut sum = 0.0;
    let mut used = 0;
    for d in 0..3 {
        if reference_var[d] <= threshold {
            excluded[d] = true;
            continue;
        }
        let mse = pred
            .iter()
            .zip(target)
            .map(|(p, t)| (p[d] - t[d]).powi(2))
            .sum::<f64>()
            / n;
        per_dim[d] = mse / reference_var[d];
        sum += per_dim[d];
        used += 1;
    }
    if used == 0 {
        return Err(Error::InvalidInput(
            "all reference dimensions have zero variance".into(),
        ));
    }
    Ok(NmseReport {
        per_dim,
        excluded,
        mean: sum / used as f64,
    })
}
