//! File formats: trajectory and dataset CSV, TOML artifacts for
//! primitives, settings, models and configs, report emission, and content
//! hashing for reproducibility checks.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::dataset::CouplingDataset;
use crate::demo::Demonstration;
use crate::dmp::{Dmp, DmpParams, UnrollResult};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::features::{FeatureVector, FEATURE_DIM};
use crate::model::{CouplingModel, TrainMeta, INPUT_DIM, N_PARAMS};
use crate::obstacle::{ObstacleSetting, Pose, Shape};
use crate::pipeline::GeneratedData;

pub const FORMAT_VERSION: u32 = 1;

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_string(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------
// Trajectory files: delimited text, header row, one row per sample.
// Columns t,x,y,z are required; vx..az are written but readers tolerate
// their absence and recompute derivatives by finite differences.
// ---------------------------------------------------------------------

pub fn write_trajectory(path: &Path, result: &UnrollResult, comments: &[String]) -> Result<()> {
    let mut text = String::new();
    for c in comments {
        text.push_str(&format!("# {c}\n"));
    }
    text.push_str("t,x,y,z,vx,vy,vz,ax,ay,az\n");
    for k in 0..result.len() {
        let (p, v, a) = (result.pos[k], result.vel[k], result.acc[k]);
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            result.t[k], p.x, p.y, p.z, v.x, v.y, v.z, a.x, a.y, a.z
        ));
    }
    write_string(path, &text)
}

pub fn write_demonstration(path: &Path, demo: &Demonstration) -> Result<()> {
    let mut text = String::new();
    if let Some(sid) = &demo.setting_id {
        text.push_str(&format!("# setting: {sid}\n"));
    }
    text.push_str(&format!("# tau: {}\n", demo.tau));
    text.push_str("t,x,y,z,vx,vy,vz,ax,ay,az\n");
    for s in &demo.samples {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            s.t, s.pos.x, s.pos.y, s.pos.z, s.vel.x, s.vel.y, s.vel.z, s.acc.x, s.acc.y, s.acc.z
        ));
    }
    write_string(path, &text)
}

/// Read a trajectory file as a demonstration. Velocity/acceleration
/// columns are used when present, otherwise recomputed by central
/// differences at the source rate (one-sided at the endpoints). The
/// duration comes from the `# tau:` comment when present, else from the
/// time span.
pub fn read_demonstration(path: &Path, id: &str) -> Result<Demonstration> {
    let text = read_to_string(path)?;
    let mut setting_id = None;
    let mut tau = None;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let body = line.trim_start_matches('#').trim();
        if let Some(rest) = body.strip_prefix("setting:") {
            setting_id = Some(rest.trim().to_string());
        } else if let Some(rest) = body.strip_prefix("tau:") {
            tau = rest.trim().parse::<f64>().ok();
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (ct, cx, cy, cz) = match (col("t"), col("x"), col("y"), col("z")) {
        (Some(t), Some(x), Some(y), Some(z)) => (t, x, y, z),
        _ => {
            return Err(Error::format(
                path.display().to_string(),
                "missing required columns t,x,y,z",
            ))
        }
    };
    let vel_cols = (col("vx"), col("vy"), col("vz"));
    let acc_cols = (col("ax"), col("ay"), col("az"));

    let mut t = Vec::new();
    let mut pos = Vec::new();
    let mut vel = Vec::new();
    let mut acc = Vec::new();
    for record in reader.records() {
        let rec = record.map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        let get = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| {
                    Error::format(path.display().to_string(), format!("bad value in column {i}"))
                })
        };
        t.push(get(ct)?);
        pos.push(Vector3::new(get(cx)?, get(cy)?, get(cz)?));
        if let (Some(a), Some(b), Some(c)) = vel_cols {
            if rec.get(c).is_some() {
                vel.push(Vector3::new(get(a)?, get(b)?, get(c)?));
            }
        }
        if let (Some(a), Some(b), Some(c)) = acc_cols {
            if rec.get(c).is_some() {
                acc.push(Vector3::new(get(a)?, get(b)?, get(c)?));
            }
        }
    }
    if t.len() < 3 {
        return Err(Error::format(
            path.display().to_string(),
            "need at least 3 samples",
        ));
    }
    let tau = tau.unwrap_or(t[t.len() - 1] - t[0]);
    if vel.len() == t.len() && acc.len() == t.len() {
        let samples = t
            .iter()
            .zip(&pos)
            .zip(vel.iter().zip(&acc))
            .map(|((&t, &p), (&v, &a))| crate::demo::DemoSample {
                t,
                pos: p,
                vel: v,
                acc: a,
            })
            .collect();
        let demo = Demonstration {
            id: id.to_string(),
            setting_id,
            tau,
            samples,
        };
        demo.validate()?;
        Ok(demo)
    } else {
        Demonstration::from_positions(id, setting_id, tau, &t, &pos)
    }
}

// ---------------------------------------------------------------------
// Primitive files
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DmpFile {
    version: u32,
    alpha_v: f64,
    beta_v: f64,
    alpha_s: f64,
    centers: Vec<f64>,
    widths: Vec<f64>,
    weights_x: Vec<f64>,
    weights_y: Vec<f64>,
    weights_z: Vec<f64>,
    x0_demo: [f64; 3],
    g_demo: [f64; 3],
    tau_demo: f64,
}

pub fn save_dmp(path: &Path, dmp: &Dmp) -> Result<()> {
    let file = DmpFile {
        version: FORMAT_VERSION,
        alpha_v: dmp.params.alpha_v,
        beta_v: dmp.params.beta_v,
        alpha_s: dmp.params.alpha_s,
        centers: dmp.params.centers.clone(),
        widths: dmp.params.widths.clone(),
        weights_x: dmp.weights[0].clone(),
        weights_y: dmp.weights[1].clone(),
        weights_z: dmp.weights[2].clone(),
        x0_demo: dmp.x0_demo.into(),
        g_demo: dmp.g_demo.into(),
        tau_demo: dmp.tau_demo,
    };
    write_string(
        path,
        &toml::to_string_pretty(&file)
            .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?,
    )
}

pub fn load_dmp(path: &Path) -> Result<Dmp> {
    let file: DmpFile = toml::from_str(&read_to_string(path)?)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    if file.version != FORMAT_VERSION {
        return Err(Error::format(
            path.display().to_string(),
            format!("unsupported version {}", file.version),
        ));
    }
    let dmp = Dmp {
        params: DmpParams {
            alpha_v: file.alpha_v,
            beta_v: file.beta_v,
            alpha_s: file.alpha_s,
            centers: file.centers,
            widths: file.widths,
        },
        weights: [file.weights_x, file.weights_y, file.weights_z],
        x0_demo: Vector3::from(file.x0_demo),
        g_demo: Vector3::from(file.g_demo),
        tau_demo: file.tau_demo,
    };
    dmp.validate()?;
    Ok(dmp)
}

// ---------------------------------------------------------------------
// Obstacle setting files
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SettingFile {
    version: u32,
    id: String,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    half_extents: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    half_height: Option<f64>,
    position: [f64; 3],
    /// Unit quaternion (w, x, y, z).
    rotation: [f64; 4],
    start: [f64; 3],
    goal: [f64; 3],
    seed: u64,
    density: f64,
    /// Explicit cloud; regenerated from the seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    cloud: Option<Vec<[f64; 3]>>,
}

pub fn save_setting(path: &Path, setting: &ObstacleSetting, explicit_cloud: bool) -> Result<()> {
    let (radius, half_extents, half_height) = match setting.shape {
        Shape::Sphere { radius } => (Some(radius), None, None),
        Shape::Cube { half_extents } => (None, Some(half_extents.into()), None),
        Shape::Cylinder {
            radius,
            half_height,
        } => (Some(radius), None, Some(half_height)),
    };
    let q = setting.pose.rotation.quaternion();
    let file = SettingFile {
        version: FORMAT_VERSION,
        id: setting.id.clone(),
        kind: setting.kind_name().to_string(),
        radius,
        half_extents,
        half_height,
        position: setting.pose.position.into(),
        rotation: [q.w, q.i, q.j, q.k],
        start: setting.start.into(),
        goal: setting.goal.into(),
        seed: setting.seed,
        density: setting.density,
        cloud: explicit_cloud.then(|| setting.cloud.iter().map(|p| (*p).into()).collect()),
    };
    write_string(
        path,
        &toml::to_string_pretty(&file)
            .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?,
    )
}

pub fn load_setting(path: &Path) -> Result<ObstacleSetting> {
    let file: SettingFile = toml::from_str(&read_to_string(path)?)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    if file.version != FORMAT_VERSION {
        return Err(Error::format(
            path.display().to_string(),
            format!("unsupported version {}", file.version),
        ));
    }
    let shape = match (file.kind.as_str(), file.radius, file.half_extents, file.half_height) {
        ("sphere", Some(r), None, None) => Shape::Sphere { radius: r },
        ("cube", None, Some(h), None) => Shape::Cube {
            half_extents: Vector3::from(h),
        },
        ("cylinder", Some(r), None, Some(h)) => Shape::Cylinder {
            radius: r,
            half_height: h,
        },
        _ => {
            return Err(Error::format(
                path.display().to_string(),
                format!("inconsistent shape fields for kind `{}`", file.kind),
            ))
        }
    };
    let pose = Pose {
        position: Vector3::from(file.position),
        rotation: UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            file.rotation[0],
            file.rotation[1],
            file.rotation[2],
            file.rotation[3],
        )),
    };
    let mut setting = ObstacleSetting::new(
        file.id,
        shape,
        pose,
        Vector3::from(file.start),
        Vector3::from(file.goal),
        file.density,
        file.seed,
    )?;
    if let Some(cloud) = file.cloud {
        setting.cloud = cloud.into_iter().map(Vector3::from).collect();
    }
    setting.validate()?;
    Ok(setting)
}

// ---------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    input_dim: usize,
    hidden: [usize; 2],
    output_dim: usize,
    /// Flattened parameters: W1 row-major, b1, W2, b2, W3, b3.
    params: Vec<f64>,
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
    out_lo: [f64; 3],
    out_hi: [f64; 3],
    train_meta: TrainMeta,
}

pub fn save_model(path: &Path, model: &CouplingModel) -> Result<()> {
    let file = ModelFile {
        version: FORMAT_VERSION,
        input_dim: INPUT_DIM,
        hidden: [crate::model::HIDDEN1, crate::model::HIDDEN2],
        output_dim: crate::model::OUTPUT_DIM,
        params: model.params().iter().copied().collect(),
        input_mean: model.input_mean.to_vec(),
        input_std: model.input_std.to_vec(),
        out_lo: model.out_lo.into(),
        out_hi: model.out_hi.into(),
        train_meta: model.train_meta.clone(),
    };
    write_string(
        path,
        &toml::to_string_pretty(&file)
            .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?,
    )
}

pub fn load_model(path: &Path) -> Result<CouplingModel> {
    let file: ModelFile = toml::from_str(&read_to_string(path)?)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    if file.version != FORMAT_VERSION {
        return Err(Error::format(
            path.display().to_string(),
            format!("unsupported version {}", file.version),
        ));
    }
    if file.input_dim != INPUT_DIM
        || file.hidden != [crate::model::HIDDEN1, crate::model::HIDDEN2]
        || file.output_dim != crate::model::OUTPUT_DIM
        || file.params.len() != N_PARAMS
        || file.input_mean.len() != INPUT_DIM
        || file.input_std.len() != INPUT_DIM
    {
        return Err(Error::format(
            path.display().to_string(),
            "architecture shape mismatch",
        ));
    }
    let mut mean = [0.0; INPUT_DIM];
    let mut std = [0.0; INPUT_DIM];
    mean.copy_from_slice(&file.input_mean);
    std.copy_from_slice(&file.input_std);
    CouplingModel::from_parts(
        DVector::from_vec(file.params),
        mean,
        std,
        Vector3::from(file.out_lo),
        Vector3::from(file.out_hi),
        file.train_meta,
    )
}

// ---------------------------------------------------------------------
// Dataset matrix files
// ---------------------------------------------------------------------

const FEATURE_COLUMNS: [&str; FEATURE_DIM] = [
    "p0x", "p0y", "p0z", "p1x", "p1y", "p1z", "p2x", "p2y", "p2z", "cx", "cy", "cz", "tvx",
    "tvy", "tvz", "dist", "angle",
];

pub fn write_dataset_matrix(path: &Path, ds: &CouplingDataset) -> Result<()> {
    let mut text = String::from("demo,split");
    for c in FEATURE_COLUMNS {
        text.push(',');
        text.push_str(c);
    }
    text.push_str(",ct_x,ct_y,ct_z\n");
    for i in 0..ds.len() {
        text.push_str(&ds.demo_ids[i]);
        text.push(',');
        text.push_str(if ds.train_mask[i] { "train" } else { "test" });
        for v in ds.features[i].0 {
            text.push_str(&format!(",{v}"));
        }
        let t = ds.targets[i];
        text.push_str(&format!(",{},{},{}\n", t.x, t.y, t.z));
    }
    write_string(path, &text)
}

pub fn read_dataset_matrix(path: &Path) -> Result<CouplingDataset> {
    let text = read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut mask = Vec::new();
    let mut ids = Vec::new();
    for record in reader.records() {
        let rec = record.map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        if rec.len() != 2 + FEATURE_DIM + 3 {
            return Err(Error::format(
                path.display().to_string(),
                format!("expected {} columns, got {}", 2 + FEATURE_DIM + 3, rec.len()),
            ));
        }
        ids.push(rec[0].to_string());
        mask.push(&rec[1] == "train");
        let mut f = [0.0; FEATURE_DIM];
        for (k, v) in f.iter_mut().enumerate() {
            *v = rec[2 + k].parse::<f64>().map_err(|e| {
                Error::format(path.display().to_string(), e.to_string())
            })?;
        }
        features.push(FeatureVector(f));
        let base = 2 + FEATURE_DIM;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
        };
        targets.push(Vector3::new(
            parse(&rec[base])?,
            parse(&rec[base + 1])?,
            parse(&rec[base + 2])?,
        ));
    }
    CouplingDataset::from_rows(features, targets, mask, ids)
}

// ---------------------------------------------------------------------
// Dataset directory with manifest
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
pub struct DemoEntry {
    pub file: String,
    /// Setting variant this demo was recorded against (obstacle-pose
    /// perturbation); the entry's base setting when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub setting: Option<String>,
}

#[derive(Serialize, Deserialize)]
pub struct SettingEntry {
    pub id: String,
    pub file: String,
    pub demos: Vec<DemoEntry>,
}

#[derive(Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub tau: f64,
    pub rate_hz: f64,
    pub oracle_gain: f64,
    pub oracle_decay: f64,
    pub baseline_demos: Vec<String>,
    pub settings: Vec<SettingEntry>,
    pub grid: Vec<SettingEntry>,
}

pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    Ok(hex_digest(cfg.to_toml()?.as_bytes()))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let d = hasher.finalize();
    d.iter().map(|b| format!("{b:02x}")).collect()
}

/// Write the generated dataset into a directory tree with a manifest.
pub fn write_dataset_dir(dir: &Path, data: &GeneratedData, cfg: &RunConfig) -> Result<()> {
    ensure_dir(dir)?;
    let mut baseline_files = Vec::new();
    for demo in &data.baseline_demos {
        let rel = format!("baseline/{}.csv", demo.id);
        write_demonstration(&dir.join(&rel), demo)?;
        baseline_files.push(rel);
    }

    let mut settings: Vec<SettingEntry> = Vec::new();
    let mut base_settings: std::collections::HashMap<String, ObstacleSetting> =
        std::collections::HashMap::new();
    for (demo, setting) in &data.pairs {
        let kind = setting.kind_name();
        let setting_rel = format!("{kind}/{}.toml", setting.id);
        if !settings.iter().any(|e| e.id == setting.id) {
            save_setting(&dir.join(&setting_rel), setting, false)?;
            base_settings.insert(setting.id.clone(), setting.clone());
            settings.push(SettingEntry {
                id: setting.id.clone(),
                file: setting_rel.clone(),
                demos: Vec::new(),
            });
        }
        let demo_rel = format!("{kind}/{}.csv", demo.id);
        write_demonstration(&dir.join(&demo_rel), demo)?;
        let entry = settings
            .iter_mut()
            .find(|e| e.id == setting.id)
            .expect("inserted above");
        // Perturbed variants get their own setting file next to the demo.
        let variant = if base_settings[&setting.id] != *setting {
            let rel = format!("{kind}/{}_scene.toml", demo.id);
            save_setting(&dir.join(&rel), setting, false)?;
            Some(rel)
        } else {
            None
        };
        entry.demos.push(DemoEntry {
            file: demo_rel,
            setting: variant,
        });
    }

    let mut grid = Vec::new();
    for setting in &data.grid {
        let rel = format!("unseen/{}.toml", setting.id);
        save_setting(&dir.join(&rel), setting, false)?;
        grid.push(SettingEntry {
            id: setting.id.clone(),
            file: rel,
            demos: Vec::new(),
        });
    }

    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        seed: cfg.seed,
        config_hash: config_hash(cfg)?,
        tau: cfg.scene.tau,
        rate_hz: cfg.demo.rate_hz,
        oracle_gain: cfg.oracle.gain,
        oracle_decay: cfg.oracle.decay,
        baseline_demos: baseline_files,
        settings,
        grid,
    };
    write_string(
        &dir.join("manifest.toml"),
        &toml::to_string_pretty(&manifest)
            .map_err(|e| Error::format("manifest.toml", e.to_string()))?,
    )
}

/// Load a dataset directory written by [`write_dataset_dir`]. The
/// baseline primitive is refit from the baseline demos with the supplied
/// config.
pub fn load_dataset_dir(dir: &Path, cfg: &RunConfig) -> Result<GeneratedData> {
    let manifest: DatasetManifest =
        toml::from_str(&read_to_string(&dir.join("manifest.toml"))?)
            .map_err(|e| Error::format("manifest.toml", e.to_string()))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::format(
            "manifest.toml",
            format!("unsupported version {}", manifest.version),
        ));
    }
    let mut baseline_demos = Vec::new();
    for rel in &manifest.baseline_demos {
        let id = Path::new(rel)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("baseline")
            .to_string();
        baseline_demos.push(read_demonstration(&dir.join(rel), &id)?);
    }
    let (baseline, baseline_fit) = crate::dmp::fit_forcing_weights(
        &baseline_demos,
        &cfg.dmp.params(),
        &cfg.fit.options(),
    )?;

    let mut pairs = Vec::new();
    for entry in &manifest.settings {
        let setting = load_setting(&dir.join(&entry.file))?;
        for demo_entry in &entry.demos {
            let id = Path::new(&demo_entry.file)
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("demo")
                .to_string();
            let mut demo = read_demonstration(&dir.join(&demo_entry.file), &id)?;
            demo.setting_id = Some(setting.id.clone());
            let scene = match &demo_entry.setting {
                Some(rel) => load_setting(&dir.join(rel))?,
                None => setting.clone(),
            };
            pairs.push((demo, scene));
        }
    }

    let mut grid = Vec::new();
    for entry in &manifest.grid {
        grid.push(load_setting(&dir.join(&entry.file))?);
    }

    Ok(GeneratedData {
        baseline_demos,
        baseline,
        baseline_fit,
        pairs,
        grid,
    })
}

// ---------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------

#[derive(Serialize)]
struct ReportSummary<'a> {
    protocol: &'a str,
    comparison_only: bool,
    all_gates_passed: bool,
    gates: &'a [crate::eval::GateOutcome],
    aggregates: &'a [crate::eval::KindAggregate],
}

/// Write `per_setting.csv`, `summary.toml` and `nmse_hist.csv` into a
/// report directory. The emitted bytes are a pure function of the report,
/// so reruns hash identically.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    ensure_dir(dir)?;
    let mut csv_text = String::from(
        "setting,kind,train_nmse,test_nmse,final_goal_dist,mean_signed_distance,\
         min_signed_distance,hit,converged,baseline_min_signed_distance,baseline_hit,\
         train_error\n",
    );
    for r in &report.rows {
        csv_text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.setting_id,
            r.kind,
            r.train_nmse,
            r.test_nmse,
            r.final_goal_dist,
            r.mean_signed_distance,
            r.min_signed_distance,
            r.hit,
            r.converged,
            r.baseline_min_signed_distance,
            r.baseline_hit,
            r.train_error.as_deref().unwrap_or("")
        ));
    }
    write_string(&dir.join("per_setting.csv"), &csv_text)?;

    let summary = ReportSummary {
        protocol: &report.protocol,
        comparison_only: report.comparison_only,
        all_gates_passed: report.all_gates_passed(),
        gates: &report.gates,
        aggregates: &report.aggregates,
    };
    write_string(
        &dir.join("summary.toml"),
        &toml::to_string_pretty(&summary)
            .map_err(|e| Error::format("summary.toml", e.to_string()))?,
    )?;

    let mut hist = String::from("bin_lo,bin_hi,train_count,test_count\n");
    let h = &report.histogram;
    for i in 0..h.train_counts.len() {
        let lo = h.edges.get(i).copied().unwrap_or(f64::NAN);
        let hi = h
            .edges
            .get(i + 1)
            .copied()
            .map(|v| v.to_string())
            .unwrap_or_else(|| "inf".to_string());
        hist.push_str(&format!(
            "{lo},{hi},{},{}\n",
            h.train_counts[i], h.test_counts[i]
        ));
    }
    write_string(&dir.join("nmse_hist.csv"), &hist)
}

/// Content hash over the report files, for reproducibility checks.
pub fn report_hash(dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    for name in ["per_setting.csv", "summary.toml", "nmse_hist.csv"] {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        hasher.update(&bytes);
    }
    let d = hasher.finalize();
    Ok(d.iter().map(|b| format!("{b:02x}")).collect())
}

/// Hash every file of a dataset directory (sorted by relative path).
pub fn dataset_hash(dir: &Path) -> Result<String> {
    let mut files: Vec<PathBuf> = Vec::new();
    fn visit(dir: &Path, files: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let path = entry.path();
            if path.is_dir() {
                visit(&path, files)?;
            } else {
                files.push(path);
            }
        }
        Ok(())
    }
    visit(dir, &mut files).map_err(|e| Error::io(dir.display().to_string(), e))?;
    files.sort();
    let mut hasher = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(dir).unwrap_or(&f);
        hasher.update(rel.to_string_lossy().as_bytes());
        let bytes = fs::read(&f).map_err(|e| Error::io(f.display().to_string(), e))?;
        hasher.update(&bytes);
    }
    let d = hasher.finalize();
    Ok(d.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmp::{DmpParams, UnrollOptions};
    use tempfile::tempdir;

    #[test]
    fn dmp_file_round_trip() {
        let dir = tempdir().unwrap();
        let mut dmp = Dmp::unforced(
            DmpParams::default(),
            Vector3::zeros(),
            Vector3::new(0.6, 0.2, 0.0),
            2.0,
        );
        dmp.weights[1][3] = 4.5;
        let path = dir.path().join("baseline.toml");
        save_dmp(&path, &dmp).unwrap();
        let back = load_dmp(&path).unwrap();
        assert_eq!(dmp, back);
    }

    #[test]
    fn setting_file_round_trip_with_cloud_regeneration() {
        let dir = tempdir().unwrap();
        let setting = ObstacleSetting::new(
            "sphere_003",
            Shape::Sphere { radius: 0.06 },
            Pose::at(Vector3::new(0.3, 0.1, 0.0)),
            Vector3::zeros(),
            Vector3::new(0.6, 0.2, 0.0),
            50.0,
            1234,
        )
        .unwrap();
        let path = dir.path().join("setting.toml");
        save_setting(&path, &setting, false).unwrap();
        let back = load_setting(&path).unwrap();
        assert_eq!(setting, back);

        // Explicit cloud round-trips too.
        save_setting(&path, &setting, true).unwrap();
        let back = load_setting(&path).unwrap();
        assert_eq!(setting.cloud, back.cloud);
    }

    #[test]
    fn trajectory_read_recovers_derivatives_when_absent() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let mut text = String::from("t,x,y,z\n");
        for i in 0..50 {
            let t = i as f64 * 0.04;
            text.push_str(&format!("{t},{},{},0\n", 0.5 * t * t, 2.0 * t));
        }
        std::fs::write(&path, text).unwrap();
        let demo = read_demonstration(&path, "d").unwrap();
        assert_eq!(demo.samples.len(), 50);
        // Central difference of 0.5 t^2 is exact for the quadratic.
        let mid = &demo.samples[25];
        assert!((mid.vel.x - mid.t).abs() < 1e-9);
        assert!((mid.vel.y - 2.0).abs() < 1e-9);
    }

    #[test]
    fn trajectory_write_read_round_trip() {
        let dir = tempdir().unwrap();
        let dmp = Dmp::unforced(
            DmpParams::default(),
            Vector3::zeros(),
            Vector3::new(0.6, 0.2, 0.0),
            2.0,
        );
        let traj = dmp
            .unroll(
                &Vector3::zeros(),
                &Vector3::new(0.6, 0.2, 0.0),
                &UnrollOptions::new(2.0),
            )
            .unwrap();
        let path = dir.path().join("unroll.csv");
        write_trajectory(&path, &traj, &["guards: on".into()]).unwrap();
        let demo = read_demonstration(&path, "u").unwrap();
        assert_eq!(demo.samples.len(), traj.len());
        for (s, p) in demo.samples.iter().zip(&traj.pos) {
            assert!((s.pos - p).norm() < 1e-12);
        }
    }

    #[test]
    fn model_file_rejects_shape_mismatch() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.toml");
        let model = CouplingModel::from_parts(
            DVector::zeros(N_PARAMS),
            [0.0; INPUT_DIM],
            [1.0; INPUT_DIM],
            Vector3::new(-1.0, -1.0, -1.0),
            Vector3::new(1.0, 1.0, 1.0),
            TrainMeta::default(),
        )
        .unwrap();
        save_model(&path, &model).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(model, back);

        // Corrupt the parameter count.
        let text = read_to_string(&path).unwrap();
        let text = text.replace("input_dim = 17", "input_dim = 16");
        std::fs::write(&path, text).unwrap();
        assert!(load_model(&path).is_err());
    }

    #[test]
    fn dataset_matrix_round_trip() {
        let dir = tempdir().unwrap();
        let ds = CouplingDataset::from_rows(
            vec![FeatureVector([0.25; FEATURE_DIM]); 4],
            vec![Vector3::new(1.0, -2.0, 0.5); 4],
            vec![true, true, false, true],
            vec!["a".into(), "a".into(), "b".into(), "b".into()],
        )
        .unwrap();
        let path = dir.path().join("dataset.csv");
        write_dataset_matrix(&path, &ds).unwrap();
        let back = read_dataset_matrix(&path).unwrap();
        assert_eq!(ds, back);
    }
}
