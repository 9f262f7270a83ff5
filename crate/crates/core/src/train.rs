//! Contiguous data split, input normalization, the training loop and
//! whole-series estimation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::BuoyDataset;
use crate::error::{Error, Result};
use crate::grid::{FieldRole, GridField};
use crate::loss::{evaluate, loss_buoy, loss_phys, total_loss, BuoyObservation, Metrics};
use crate::model::Orca;
use crate::optim::Adam;
use crate::params::ModelParams;
use crate::real::Real;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub alpha: f64,
    pub max_epochs: usize,
    /// Epochs without a new best validation L1 before stopping; `None`
    /// trains for `max_epochs`.
    pub patience: Option<usize>,
    /// Cap on training windows drawn per epoch; `None` uses all of them.
    pub windows_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 0.001, alpha: 0.3, max_epochs: 50, patience: Some(10), windows_per_epoch: None, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if self.windows_per_epoch == Some(0) {
            return Err(Error::Config("windows_per_epoch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Contiguous train / validation / test step ranges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Split {
    /// 8:1:1 in time order: `floor(0.8 T)` train steps, `floor(0.1 T)`
    /// validation steps, the rest test.
    pub fn eight_one_one(steps: usize) -> Result<Self> {
        let n_train = steps * 8 / 10;
        let n_val = steps / 10;
        if n_train == 0 || n_val == 0 || steps - n_train - n_val == 0 {
            return Err(Error::Contract(format!("{} steps are too few for an 8:1:1 split", steps)));
        }
        Ok(Self { train: 0..n_train, val: n_train..n_train + n_val, test: n_train + n_val..steps })
    }
}

/// Per-feature z-score statistics fitted on a step range.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn fit(dataset: &BuoyDataset, range: Range<usize>) -> Self {
        let (f_count, m_count) = (dataset.num_features(), dataset.num_buoys());
        let mut mean = vec![0.0; f_count];
        let mut scale = vec![1.0; f_count];
        for f in 0..f_count {
            let vals: Vec<f64> = (0..m_count)
                .flat_map(|m| range.clone().map(move |t| (m, t)))
                .filter(|&(m, t)| !dataset.is_missing(f, m, t))
                .map(|(m, t)| dataset.value(f, m, t))
                .collect();
            if vals.is_empty() {
                continue;
            }
            let n = vals.len() as f64;
            let mu = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            mean[f] = mu;
            let sd = libm::sqrt(var);
            if sd > 1e-9 {
                scale[f] = sd;
            }
        }
        Self { mean, scale }
    }

    /// Normalized copy of the whole series (`F x M x T`, feature-major).
    pub fn apply(&self, dataset: &BuoyDataset) -> Vec<f64> {
        let (m_count, steps) = (dataset.num_buoys(), dataset.steps());
        dataset
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = i / (m_count * steps);
                (v - self.mean[f]) / self.scale[f]
            })
            .collect()
    }
}

/// Cuts `[start, start + len)` out of an `F x M x T` block.
pub fn window_inputs(series: &[f64], features: usize, buoys: usize, steps: usize, start: usize, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(features * buoys * len);
    for fm in 0..features * buoys {
        out.extend_from_slice(&series[fm * steps + start..fm * steps + start + len]);
    }
    out
}

/// Non-missing buoy SWH observations at steps `score`, with steps counted
/// from `origin`.
pub fn buoy_observations(dataset: &BuoyDataset, score: Range<usize>, origin: usize) -> Vec<BuoyObservation> {
    let mut out = Vec::new();
    for (m, &(row, col)) in dataset.locations().iter().enumerate() {
        for t in score.clone() {
            if let Some(value) = dataset.swh(m, t) {
                out.push(BuoyObservation { row, col, step: t - origin, value });
            }
        }
    }
    out
}

/// Windows of length `window` that together score every step of
/// `segment` exactly once, preferring windows that end inside the segment.
/// Each item is `(window_start, scored_steps)`.
pub fn covering_windows(segment: Range<usize>, window: usize, steps: usize) -> Result<Vec<(usize, Range<usize>)>> {
    if window == 0 || window > steps || segment.end > steps {
        return Err(Error::Contract(format!("window {} cannot cover {:?} of a {}-step series", window, segment, steps)));
    }
    let mut out = Vec::new();
    let mut pos = segment.start;
    let latest = segment.end.max(window) - window;
    while pos < segment.end {
        let start = pos.min(latest);
        let end = (start + window).min(segment.end);
        out.push((start, pos..end));
        pos = end;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub l1: f64,
    pub l2: f64,
    pub val_l1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_l1: f64,
}

/// Everything the loop reads besides the model.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub dataset: &'a BuoyDataset,
    /// Surrogate field over the whole series; required when `alpha > 0`.
    pub surrogate: Option<&'a GridField>,
    pub split: &'a Split,
    pub normalizer: &'a Normalizer,
}

struct StepValues {
    loss: f64,
    l1: f64,
    l2: f64,
}

fn window_step<T: Real>(
    model: &Orca<T>,
    data: &TrainData,
    series: &[f64],
    start: usize,
    alpha: f64,
    grads: bool,
) -> Result<Option<(StepValues, Vec<Option<Vec<T>>>)>> {
    let ds = data.dataset;
    let len = model.config().window;
    let obs = buoy_observations(ds, start..start + len, start);
    if obs.is_empty() {
        return Ok(None);
    }
    let mut g = Graph::new();
    let bound = if grads { model.params().bind(&mut g) } else { model.params().bind_frozen(&mut g) };
    let inputs = window_inputs(series, ds.num_features(), ds.num_buoys(), ds.steps(), start, len);
    let y_hat = model.forward(&mut g, &bound, &inputs)?;
    let l1 = loss_buoy(&mut g, y_hat, &obs)?;
    let (l2_value, loss) = match data.surrogate {
        Some(field) => {
            let slice = field.time_slice(start, len)?;
            let s = Tensor::from_f64(
                &[slice.rows(), slice.cols(), slice.steps()],
                &slice.values().iter().map(|&v| v as f64).collect::<Vec<_>>(),
            )?;
            let s = g.constant(s);
            let l2 = loss_phys(&mut g, y_hat, s)?;
            let l = total_loss(&mut g, l1, l2, alpha)?;
            (g.value(l2).item()?.as_f64(), l)
        }
        None => (f64::NAN, l1),
    };
    let values = StepValues { loss: g.value(loss).item()?.as_f64(), l1: g.value(l1).item()?.as_f64(), l2: l2_value };
    if !grads || !values.loss.is_finite() {
        return Ok(Some((values, Vec::new())));
    }
    g.backward(loss)?;
    let grads = bound.vars().iter().map(|&v| g.grad(v).map(|s| s.to_vec())).collect();
    Ok(Some((values, grads)))
}

/// Buoy MSE over `segment`, scored through covering windows.
pub fn segment_l1<T: Real>(model: &Orca<T>, dataset: &BuoyDataset, series: &[f64], segment: Range<usize>) -> Result<f64> {
    let window = model.config().window;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (start, scored) in covering_windows(segment.clone(), window, dataset.steps())? {
        let obs = buoy_observations(dataset, scored, start);
        if obs.is_empty() {
            continue;
        }
        let inputs = window_inputs(series, dataset.num_features(), dataset.num_buoys(), dataset.steps(), start, window);
        let y = model.estimate_window(&inputs)?;
        let cols = model.config().cols;
        for o in &obs {
            let e = y.data()[(o.row * cols + o.col) * window + o.step].as_f64() - o.value;
            sum += e * e;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Undefined(format!("no buoy observations in steps {:?}", segment)));
    }
    Ok(sum / count as f64)
}

/// Trains the trainable arrays of `model` in place and leaves it holding
/// the parameters of the best validation epoch.
pub fn train<T: Real>(model: &mut Orca<T>, data: &TrainData, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let ds = data.dataset;
    let window = model.config().window;
    if config.alpha > 0.0 && data.surrogate.is_none() {
        return Err(Error::Config("alpha > 0 needs a surrogate grid field".into()));
    }
    if let Some(s) = data.surrogate {
        if s.rows() != model.config().rows || s.cols() != model.config().cols || s.steps() != ds.steps() {
            return Err(Error::Shape {
                op: "train",
                detail: format!(
                    "surrogate {}x{}x{} vs lattice {}x{}x{}",
                    s.rows(),
                    s.cols(),
                    s.steps(),
                    model.config().rows,
                    model.config().cols,
                    ds.steps()
                ),
            });
        }
    }
    let train = data.split.train.clone();
    if train.len() < window {
        return Err(Error::Contract(format!("{} training steps cannot hold a {}-step window", train.len(), window)));
    }
    let series = data.normalizer.apply(ds);
    let mut starts: Vec<usize> = (train.start..=train.end - window).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Adam::new(config.lr);

    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ModelParams<T>)> = None;
    for epoch in 0..config.max_epochs {
        starts.shuffle(&mut rng);
        let take = config.windows_per_epoch.unwrap_or(starts.len()).min(starts.len());
        let (mut sl, mut s1, mut s2, mut n) = (0.0, 0.0, 0.0, 0usize);
        for &start in &starts[..take] {
            let Some((v, grads)) = window_step(model, data, &series, start, config.alpha, true)? else { continue };
            if !v.loss.is_finite() {
                return Err(Error::Divergence { epoch, detail: format!("loss {} on window starting at step {}", v.loss, start) });
            }
            opt.step(model.params_mut(), &grads)?;
            sl += v.loss;
            s1 += v.l1;
            s2 += v.l2;
            n += 1;
        }
        if n == 0 {
            return Err(Error::Undefined("every training window lacks buoy observations".into()));
        }
        let val_l1 = segment_l1(model, ds, &series, data.split.val.clone())?;
        if !val_l1.is_finite() {
            return Err(Error::Divergence { epoch, detail: format!("validation L1 is {}", val_l1) });
        }
        let nf = n as f64;
        history.push(EpochRecord { epoch, loss: sl / nf, l1: s1 / nf, l2: s2 / nf, val_l1 });
        let improved = best.as_ref().is_none_or(|b| val_l1 < b.1);
        if improved {
            best = Some((epoch, val_l1, model.params().clone()));
        } else if let (Some(p), Some(b)) = (config.patience, best.as_ref()) {
            if epoch - b.0 >= p {
                break;
            }
        }
    }
    let (best_epoch, best_val_l1, params) = best.expect("at least one epoch ran");
    model.set_params(params)?;
    Ok(TrainOutcome { history, best_epoch, best_val_l1 })
}

/// Loss values of one window without touching parameters; `None` when the
/// window has no buoy observations.
pub fn window_loss<T: Real>(model: &Orca<T>, data: &TrainData, start: usize, alpha: f64) -> Result<Option<(f64, f64, f64)>> {
    let series = data.normalizer.apply(data.dataset);
    Ok(window_step(model, data, &series, start, alpha, false)?.map(|(v, _)| (v.loss, v.l1, v.l2)))
}

/// Estimates the whole series by tiling windows; role `estimate`.
pub fn estimate_series<T: Real>(model: &Orca<T>, dataset: &BuoyDataset, normalizer: &Normalizer) -> Result<GridField> {
    let (rows, cols, window, steps) = (model.config().rows, model.config().cols, model.config().window, dataset.steps());
    let series = normalizer.apply(dataset);
    let mut field = GridField::zeros(rows, cols, steps, FieldRole::Estimate);
    for (start, scored) in covering_windows(0..steps, window, steps)? {
        let inputs = window_inputs(&series, dataset.num_features(), dataset.num_buoys(), steps, start, window);
        let y = model.estimate_window(&inputs)?;
        for r in 0..rows {
            for c in 0..cols {
                for t in scored.clone() {
                    field.set(r, c, t, y.data()[(r * cols + c) * window + (t - start)].as_f64() as f32);
                }
            }
        }
    }
    Ok(field)
}

/// Scores a full-series estimate at buoy cells over `steps`.
pub fn score_steps(estimate: &GridField, dataset: &BuoyDataset, steps: Range<usize>) -> Result<Metrics> {
    if estimate.steps() != dataset.steps() {
        return Err(Error::Shape {
            op: "score_steps",
            detail: format!("estimate has {} steps, data {}", estimate.steps(), dataset.steps()),
        });
    }
    let obs = buoy_observations(dataset, steps, 0);
    evaluate(estimate.values(), estimate.rows(), estimate.cols(), estimate.steps(), &obs)
}

/// Repeats each buoy's last observation before `segment` across it.
pub fn persistence_metrics(dataset: &BuoyDataset, segment: Range<usize>) -> Result<Metrics> {
    let mut errors = Vec::new();
    for m in 0..dataset.num_buoys() {
        let Some(last) = (0..segment.start).rev().find_map(|t| dataset.swh(m, t)) else { continue };
        for t in segment.clone() {
            if let Some(v) = dataset.swh(m, t) {
                errors.push(last - v);
            }
        }
    }
    Metrics::from_errors(&errors)
}
