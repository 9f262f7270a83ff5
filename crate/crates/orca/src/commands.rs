//! Subcommand bodies. Each returns what it wrote so callers and tests can
//! inspect the results.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use orca_core::backbone::BackboneConfig;
use orca_core::gradcheck::{run_gradcheck, GradCheckOptions, GradReport};
use orca_core::loss::Metrics;
use orca_core::model::{ModelConfig, Orca};
use orca_core::train::{
    estimate_series, persistence_metrics, score_steps, train, EpochRecord, Normalizer, Split, TrainConfig, TrainData,
};
use orca_core::{synth_generate, BuoyDataset, FieldRole, GridField, Real};
use sha2::{Digest, Sha256};

use crate::buoy_text::{load_buoys, write_buoy_text, BuoySource, Lattice};
use crate::config::RunConfig;
use crate::error::{io_err, Error, Result};
use crate::grid_file::{decode_grid_field, load_grid_field, write_grid_field};
use crate::heatmap::render_heatmap;
use crate::weights::{read_weights, write_weights};

pub const WEIGHTS_FILE: &str = "weights.orcaw";
pub const HISTORY_FILE: &str = "history.csv";
pub const ESTIMATE_FILE: &str = "estimate.grid";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "orca.conf";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// True when `ORCA_F64=1` asks for 64-bit arithmetic.
pub fn use_f64() -> bool {
    std::env::var("ORCA_F64").is_ok_and(|v| v == "1")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthDims {
    pub rows: usize,
    pub cols: usize,
    pub steps: usize,
    pub buoys: usize,
    pub features: usize,
}

impl Default for SynthDims {
    fn default() -> Self {
        Self { rows: 8, cols: 8, steps: 32, buoys: 3, features: 3 }
    }
}

/// Writes buoy tables, truth and surrogate fields, a runnable config and a
/// manifest of SHA-256 checksums. Returns the manifest path.
pub fn cmd_synth(seed: u64, dims: SynthDims, out: &Path) -> Result<PathBuf> {
    let syn = synth_generate(seed, dims.rows, dims.cols, dims.steps, dims.buoys, dims.features)?;
    create_dir(&out.join("buoys"))?;
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).and_then(|d| d.and_hms_opt(0, 0, 0)).expect("valid date");
    let lattice = Lattice { start, interval_hours: syn.dataset.interval_hours(), steps: dims.steps };
    let ds = &syn.dataset;
    let mut files = Vec::new();
    let mut sources = Vec::new();
    for (m, &(row, col)) in ds.locations().iter().enumerate() {
        let mut vals = Vec::with_capacity(ds.num_features() * dims.steps);
        for f in 0..ds.num_features() {
            for t in 0..dims.steps {
                vals.push((!ds.is_missing(f, m, t)).then(|| ds.value(f, m, t)));
            }
        }
        let rel = PathBuf::from(format!("buoys/buoy_{:02}.txt", m));
        write_file(&out.join(&rel), write_buoy_text(ds.features(), &lattice, &vals))?;
        let (lat, lon) = syn.spec.cell_center(row, col);
        sources.push(BuoySource { path: out.join(&rel), lat, lon });
        files.push(rel);
    }
    write_grid_field(&out.join("truth.grid"), &syn.truth)?;
    write_grid_field(&out.join("surrogate.grid"), &syn.surrogate)?;
    files.push("truth.grid".into());
    files.push("surrogate.grid".into());

    let n_train = dims.steps * 8 / 10;
    let window = n_train.clamp(1, 8);
    let patch_len = window.min(4);
    let mut model = ModelConfig::new(dims.rows, dims.cols, window);
    model.patch_len = patch_len;
    model.stride = patch_len.min(2);
    model.backbone = BackboneConfig { layers: 2, heads: 4, width: 16, ffn_mult: 4, max_tokens: 256 };
    model.seed = seed;
    let config = RunConfig {
        buoys: sources,
        surrogate: Some(out.join("surrogate.grid")),
        truth: Some(out.join("truth.grid")),
        out_dir: out.join("run"),
        grid: syn.spec,
        start: Some(start),
        steps: Some(dims.steps),
        interval_hours: lattice.interval_hours,
        model,
        train: TrainConfig { seed, lr: 1e-4, max_epochs: 200, patience: Some(15), ..Default::default() },
    };
    write_file(&out.join(CONFIG_FILE), config.render(out))?;
    files.push(CONFIG_FILE.into());

    let mut manifest = String::new();
    for rel in &files {
        let bytes = fs::read(out.join(rel)).map_err(io_err(out.join(rel)))?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{:02x}", b)).collect();
        manifest.push_str(&format!("{}  {}\n", hex, rel.display()));
    }
    let path = out.join(MANIFEST_FILE);
    write_file(&path, manifest)?;
    Ok(path)
}

/// Buoy data plus the surrogate field when one is configured.
pub fn load_inputs(cfg: &RunConfig) -> Result<(BuoyDataset, Option<GridField>)> {
    cfg.check_inputs()?;
    let ds = load_buoys(&cfg.buoys, &cfg.grid, cfg.lattice(), cfg.interval_hours)?;
    let surrogate = match &cfg.surrogate {
        Some(p) => Some(load_grid_field(p, &cfg.grid, Some(ds.steps()), Some(FieldRole::Surrogate))?),
        None => None,
    };
    Ok((ds, surrogate))
}

fn build_model<T: Real>(cfg: &RunConfig, ds: &BuoyDataset) -> Result<Orca<T>> {
    Ok(Orca::new(cfg.model.clone(), ds.features(), ds.locations(), ds.interval_hours())?)
}

pub fn history_csv(history: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "L", "L1", "L2", "val_L1"])?;
    for r in history {
        w.write_record([r.epoch.to_string(), r.loss.to_string(), r.l1.to_string(), r.l2.to_string(), r.val_l1.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub weights: PathBuf,
    pub history_path: PathBuf,
}

fn train_with<T: Real>(cfg: &RunConfig, ds: &BuoyDataset, surrogate: Option<&GridField>) -> Result<TrainReport> {
    let split = Split::eight_one_one(ds.steps())?;
    let normalizer = Normalizer::fit(ds, split.train.clone());
    let mut model: Orca<T> = build_model(cfg, ds)?;
    let data = TrainData { dataset: ds, surrogate, split: &split, normalizer: &normalizer };
    let outcome = train(&mut model, &data, &cfg.train)?;
    create_dir(&cfg.out_dir)?;
    let weights = cfg.out_dir.join(WEIGHTS_FILE);
    write_weights(&weights, &model.params().export())?;
    let history_path = cfg.out_dir.join(HISTORY_FILE);
    write_file(&history_path, history_csv(&outcome.history)?)?;
    Ok(TrainReport { history: outcome.history, best_epoch: outcome.best_epoch, weights, history_path })
}

/// Trains on the 8:1:1 contiguous split and writes weights and history.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    if cfg.train.alpha > 0.0 && cfg.surrogate.is_none() {
        return Err(Error::Config(format!(
            "alpha = {} needs a surrogate grid field; set surrogate = PATH or alpha = 0",
            cfg.train.alpha
        )));
    }
    let (ds, surrogate) = load_inputs(cfg)?;
    let surrogate = if cfg.train.alpha > 0.0 || surrogate.is_some() { surrogate } else { None };
    if use_f64() {
        train_with::<f64>(cfg, &ds, surrogate.as_ref())
    } else {
        train_with::<f32>(cfg, &ds, surrogate.as_ref())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateReport {
    pub estimate: PathBuf,
    pub buoy_csvs: Vec<PathBuf>,
    pub heatmaps: Vec<PathBuf>,
}

fn estimate_with<T: Real>(cfg: &RunConfig, ds: &BuoyDataset, weights: &Path) -> Result<GridField> {
    let split = Split::eight_one_one(ds.steps())?;
    let normalizer = Normalizer::fit(ds, split.train.clone());
    let mut model: Orca<T> = build_model(cfg, ds)?;
    let arrays = read_weights(weights)?;
    model.params_mut().load_complete(&arrays)?;
    Ok(estimate_series(&model, ds, &normalizer)?)
}

/// Estimates the whole series, then writes the field, one CSV per buoy over
/// the test steps and one heatmap per requested step (default: the first
/// test step).
pub fn cmd_estimate(cfg: &RunConfig, weights: &Path, times: &[usize]) -> Result<EstimateReport> {
    cfg.check_inputs()?;
    let ds = load_buoys(&cfg.buoys, &cfg.grid, cfg.lattice(), cfg.interval_hours)?;
    let split = Split::eight_one_one(ds.steps())?;
    let times: Vec<usize> = if times.is_empty() { vec![split.test.start] } else { times.to_vec() };
    if let Some(&bad) = times.iter().find(|&&t| t >= ds.steps()) {
        return Err(Error::Config(format!("heatmap step {} is outside 0..{}", bad, ds.steps())));
    }
    let field = if use_f64() { estimate_with::<f64>(cfg, &ds, weights)? } else { estimate_with::<f32>(cfg, &ds, weights)? };
    create_dir(&cfg.out_dir)?;
    let estimate = cfg.out_dir.join(ESTIMATE_FILE);
    write_grid_field(&estimate, &field)?;

    let mut buoy_csvs = Vec::new();
    for (m, &(row, col)) in ds.locations().iter().enumerate() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["t", "observed", "estimated"])?;
        for t in split.test.clone() {
            let observed = ds.swh(m, t).map_or(String::new(), |v| v.to_string());
            w.write_record([t.to_string(), observed, field.get(row, col, t).to_string()])?;
        }
        let path = cfg.out_dir.join(format!("buoy_{:02}.csv", m));
        write_file(&path, w.into_inner().map_err(|e| Error::Format(e.to_string()))?)?;
        buoy_csvs.push(path);
    }
    let mut heatmaps = Vec::new();
    for &t in &times {
        let path = cfg.out_dir.join(format!("heatmap_t{:03}.svg", t));
        write_file(&path, render_heatmap(&field, t, &format!("estimated SWH, step {}", t)))?;
        heatmaps.push(path);
    }
    Ok(EstimateReport { estimate, buoy_csvs, heatmaps })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub model: Metrics,
    pub persistence: Option<Metrics>,
    pub path: PathBuf,
}

pub fn metrics_csv(rows: &[(&str, Metrics)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["subject", "mae", "mse", "rmse", "count"])?;
    for (name, m) in rows {
        w.write_record([name.to_string(), m.mae.to_string(), m.mse.to_string(), m.rmse.to_string(), m.count.to_string()])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?).expect("csv output is UTF-8"))
}

/// Scores an estimate field at buoy cells, over the test steps or over
/// every step.
pub fn cmd_eval(cfg: &RunConfig, estimate: &Path, all_steps: bool) -> Result<EvalReport> {
    cfg.check_inputs()?;
    let ds = load_buoys(&cfg.buoys, &cfg.grid, cfg.lattice(), cfg.interval_hours)?;
    let bytes = fs::read(estimate).map_err(io_err(estimate))?;
    let field = decode_grid_field(&bytes)?;
    if (field.rows(), field.cols(), field.steps()) != (cfg.grid.rows(), cfg.grid.cols(), ds.steps()) {
        return Err(Error::Alignment(format!(
            "estimate lattice {}x{}x{} does not match grid {}x{} over {} steps",
            field.rows(),
            field.cols(),
            field.steps(),
            cfg.grid.rows(),
            cfg.grid.cols(),
            ds.steps()
        )));
    }
    let (steps, persistence) = if all_steps {
        (0..ds.steps(), None)
    } else {
        let split = Split::eight_one_one(ds.steps())?;
        let p = persistence_metrics(&ds, split.test.clone()).ok();
        (split.test, p)
    };
    let model = score_steps(&field, &ds, steps)?;
    let mut rows = vec![("estimate", model)];
    if let Some(p) = persistence {
        rows.push(("persistence", p));
    }
    create_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join(METRICS_FILE);
    write_file(&path, metrics_csv(&rows)?)?;
    Ok(EvalReport { model, persistence, path })
}

/// Runs module and full-model gradient checks in 64-bit arithmetic.
pub fn cmd_gradcheck(seed: u64, corrupt: Option<String>) -> Result<GradReport> {
    let opts = GradCheckOptions { seed, corrupt, ..Default::default() };
    Ok(run_gradcheck(&opts)?)
}
