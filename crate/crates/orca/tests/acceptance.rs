//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails or overruns its time budget.

use std::collections::HashSet;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use orca::commands::{cmd_estimate, cmd_eval, cmd_synth, cmd_train, SynthDims};
use orca::config::RunConfig;
use orca_core::backbone::BackboneConfig;
use orca_core::gradcheck::{run_gradcheck, tiny_model_config, GradCheckOptions};
use orca_core::loss::{evaluate, loss_buoy, loss_phys, total_loss, BuoyObservation};
use orca_core::model::{ModelConfig, Orca};
use orca_core::optim::Adam;
use orca_core::patch::{make_patches, patch_count};
use orca_core::prompt::PromptVariant;
use orca_core::synth::synth_feature_names;
use orca_core::train::{
    buoy_observations, estimate_series, persistence_metrics, score_steps, train, window_inputs, Normalizer, Split,
    TrainConfig, TrainData,
};
use orca_core::zorder::zorder_encode;
use orca_core::{synth_generate, GridField, GridSpec, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Published (MSE, RMSE) pairs.
const TABLE_PAIRS: [(f64, f64); 5] = [(0.0838, 0.2895), (0.2000, 0.4472), (0.2063, 0.4542), (0.1796, 0.4238), (0.9375, 0.9682)];

fn metric_self_consistency() -> Outcome {
    let (rows, cols, steps) = (3, 4, 5);
    let estimate = vec![2.0f32; rows * cols * steps];
    let mut worst = 0.0f64;
    for (mse, rmse) in TABLE_PAIRS {
        // Unequal error magnitudes with mean square exactly `mse`.
        let shape: Vec<f64> = (0..12).map(|i| if i % 2 == 0 { 1.0 + i as f64 / 12.0 } else { -(0.5 + i as f64 / 24.0) }).collect();
        let ms = shape.iter().map(|e| e * e).sum::<f64>() / shape.len() as f64;
        let scale = (mse / ms).sqrt();
        let obs: Vec<BuoyObservation> = shape
            .iter()
            .enumerate()
            .map(|(i, e)| BuoyObservation { row: i % rows, col: i % cols, step: i % steps, value: 2.0 - e * scale })
            .collect();
        let m = evaluate(&estimate, rows, cols, steps, &obs).map_err(err)?;
        ensure((m.mse - mse).abs() < 1e-12, || format!("constructed MSE {} != {}", m.mse, mse))?;
        let d = (m.rmse - rmse).abs();
        worst = worst.max(d);
        ensure(d <= 1e-3, || format!("MSE {} gives RMSE {:.6}, listed {}", mse, m.rmse, rmse))?;
    }
    Ok(format!("5 pairs, worst |RMSE - listed| {:.2e}", worst))
}

fn gradient_suite() -> Outcome {
    let report = run_gradcheck(&GradCheckOptions::default()).map_err(err)?;
    let syn = synth_generate(7, 4, 4, 8, 2, 2).map_err(err)?;
    let model: Orca<f64> =
        Orca::new(tiny_model_config(), syn.dataset.features(), syn.dataset.locations(), 3.0).map_err(err)?;
    let want: HashSet<&str> = model.params().trainable_names().into_iter().collect();
    let got: HashSet<&str> = report.arrays.iter().map(|e| e.name.as_str()).collect();
    ensure(want == got, || format!("checked arrays {:?} != trainable arrays {:?}", got, want))?;
    if let Some(f) = report.failures().first() {
        return Err(format!("{} relative error {:.3e}", f.name, f.worst_rel_err));
    }
    let worst = report.arrays.iter().chain(&report.modules).map(|e| e.worst_rel_err).fold(0.0, f64::max);
    Ok(format!("{} arrays + {} modules, worst relative error {:.2e}", report.arrays.len(), report.modules.len(), worst))
}

fn naive_interleave(u: usize, v: usize, levels: usize) -> Vec<u8> {
    let mut out = Vec::new();
    for b in (0..levels).rev() {
        out.push(((u >> b) & 1) as u8);
        out.push(((v >> b) & 1) as u8);
    }
    out
}

fn zorder_oracle() -> Outcome {
    let mut cells_checked = 0;
    for rows in 1..=16usize {
        for cols in 1..=16usize {
            let side = rows.max(cols);
            let levels = (usize::BITS - (side - 1).leading_zeros()) as usize;
            let cells: Vec<(usize, usize)> = (0..rows).flat_map(|u| (0..cols).map(move |v| (u, v))).collect();
            let code = zorder_encode(&cells, rows, cols).map_err(err)?;
            ensure(code.bit_depth() == 2 * levels, || format!("{}x{}: depth {}", rows, cols, code.bit_depth()))?;
            let mut seen = HashSet::new();
            for (i, &(u, v)) in cells.iter().enumerate() {
                let want = naive_interleave(u, v, levels);
                ensure(code.row(i) == want.as_slice(), || format!("{}x{} cell ({}, {})", rows, cols, u, v))?;
                ensure(seen.insert(want), || format!("{}x{}: duplicate code at ({}, {})", rows, cols, u, v))?;
                cells_checked += 1;
            }
        }
    }
    Ok(format!("{} cells over 256 grid sizes, all codes distinct per grid", cells_checked))
}

fn patch_law() -> Outcome {
    let mut valid = 0;
    for steps in 1..=32usize {
        let series: Vec<f64> = (0..steps).map(|t| t as f64).collect();
        for len in 1..=16usize {
            for stride in 1..=16usize {
                let ok = stride <= len && len <= steps + stride;
                let got = patch_count(steps, len, stride);
                if !ok {
                    ensure(got.is_err(), || format!("T={} L={} W={} accepted", steps, len, stride))?;
                    continue;
                }
                let want = ((steps as i64 - len as i64).div_euclid(stride as i64) + 2) as usize;
                let got = got.map_err(err)?;
                ensure(got == want, || format!("T={} L={} W={}: S={} want {}", steps, len, stride, got, want))?;
                let p = make_patches(&series, 1, 1, steps, len, stride).map_err(err)?;
                let mut covered = vec![false; steps];
                for s in 0..p.count {
                    for (i, &v) in p.patch(s, 0, 0).iter().enumerate() {
                        let idx = s * stride + i;
                        let expect = idx.min(steps - 1) as f64;
                        ensure(v == expect, || format!("T={} L={} W={}: patch {} slot {}", steps, len, stride, s, i))?;
                        covered[v as usize] = true;
                    }
                }
                ensure(covered.iter().all(|&c| c), || format!("T={} L={} W={}: index not covered", steps, len, stride))?;
                valid += 1;
            }
        }
    }
    Ok(format!("{} valid (T, L, W) triples", valid))
}

fn shape_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..20 {
        let rows = rng.random_range(1..=6usize);
        let cols = rng.random_range(1..=6usize);
        let window = rng.random_range(2..=12usize);
        let len = rng.random_range(1..=window);
        let stride = rng.random_range(1..=len);
        let features = rng.random_range(2..=4usize);
        let buoys = rng.random_range(1..=(rows * cols).min(3));
        let heads = [1usize, 2][rng.random_range(0..2)];
        let mut c = ModelConfig::new(rows, cols, window);
        c.soft_tokens = rng.random_range(1..=4);
        c.patch_len = len;
        c.stride = stride;
        c.prompt = PromptVariant::ALL[rng.random_range(0..3)];
        c.seed = trial;
        c.backbone = BackboneConfig { layers: rng.random_range(0..=2), heads, width: 4 * heads, ffn_mult: 2, max_tokens: 256 };
        let names = synth_feature_names(features).map_err(err)?;
        let locations: Vec<(usize, usize)> = (0..buoys).map(|m| (m / cols, m % cols)).collect();
        let model: Orca<f32> = Orca::new(c.clone(), &names, &locations, 3.0).map_err(err)?;
        let lay = *model.layout();
        let patches = ((window as i64 - len as i64).div_euclid(stride as i64) + 2) as usize;
        let want_tokens = c.soft_tokens + lay.prompt_tokens + 1 + patches;
        ensure(lay.tokens == want_tokens, || format!("trial {}: I = {} want {}", trial, lay.tokens, want_tokens))?;
        let inputs: Vec<f64> = (0..features * buoys * window).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y = model.estimate_window(&inputs).map_err(err)?;
        ensure(y.shape() == [rows, cols, window], || format!("trial {}: shape {:?}", trial, y.shape()))?;
        ensure(y.data().iter().all(|v| v.is_finite()), || format!("trial {}: non-finite output", trial))?;
    }
    Ok("20 configs, shape K x J x T and I = R + E + 1 + S".into())
}

fn freeze_mask() -> Outcome {
    let syn = synth_generate(11, 4, 4, 16, 2, 2).map_err(err)?;
    let ds = &syn.dataset;
    let mut model: Orca<f32> = Orca::new(tiny_model_config(), ds.features(), ds.locations(), 3.0).map_err(err)?;
    let initial = model.params().clone();
    let norm = Normalizer::fit(ds, 0..12);
    let series = norm.apply(ds);
    let window = model.config().window;
    let mut opt = Adam::new(1e-3);
    for step in 0..50 {
        let start = step % (ds.steps() - window + 1);
        let mut g = Graph::new();
        let bound = model.params().bind(&mut g);
        let inputs = window_inputs(&series, ds.num_features(), ds.num_buoys(), ds.steps(), start, window);
        let y = model.forward(&mut g, &bound, &inputs).map_err(err)?;
        let l1 = loss_buoy(&mut g, y, &buoy_observations(ds, start..start + window, start)).map_err(err)?;
        let slice = syn.surrogate.time_slice(start, window).map_err(err)?;
        let vals: Vec<f64> = slice.values().iter().map(|&v| v as f64).collect();
        let s = g.constant(Tensor::from_f64(&[4, 4, window], &vals).map_err(err)?);
        let l2 = loss_phys(&mut g, y, s).map_err(err)?;
        let loss = total_loss(&mut g, l1, l2, 0.3).map_err(err)?;
        g.backward(loss).map_err(err)?;
        let grads: Vec<Option<Vec<f32>>> = bound.vars().iter().map(|&v| g.grad(v).map(|s| s.to_vec())).collect();
        opt.step(model.params_mut(), &grads).map_err(err)?;
    }
    ensure(opt.steps_taken() == 50, || format!("{} steps taken", opt.steps_taken()))?;
    let (mut frozen, mut trainable) = (0, 0);
    for (before, after) in initial.arrays().iter().zip(model.params().arrays()) {
        let same = before.value.data().iter().zip(after.value.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        if after.trainable {
            ensure(!same, || format!("trainable {} did not change", after.name))?;
            trainable += 1;
        } else {
            ensure(same, || format!("frozen {} changed", after.name))?;
            frozen += 1;
        }
    }
    Ok(format!("50 steps: {} frozen arrays bit-identical, {} trainable arrays changed", frozen, trainable))
}

/// Configuration shared by the synthetic training criteria.
fn synthetic_model_config(window: usize) -> ModelConfig {
    let mut c = ModelConfig::new(8, 8, window);
    c.patch_len = 4;
    c.stride = 2;
    c.backbone = BackboneConfig { layers: 2, heads: 4, width: 16, ffn_mult: 4, max_tokens: 128 };
    c
}

fn synthetic_overfit() -> Outcome {
    let syn = synth_generate(1, 8, 8, 32, 3, 3).map_err(err)?;
    let ds = &syn.dataset;
    let split = Split::eight_one_one(ds.steps()).map_err(err)?;
    let norm = Normalizer::fit(ds, split.train.clone());
    let mut model: Orca<f32> =
        Orca::new(synthetic_model_config(8), ds.features(), ds.locations(), ds.interval_hours()).map_err(err)?;
    let data = TrainData { dataset: ds, surrogate: Some(&syn.surrogate), split: &split, normalizer: &norm };
    let cfg = TrainConfig { lr: 1e-4, alpha: 0.3, max_epochs: 200, patience: Some(15), ..Default::default() };
    let out = train(&mut model, &data, &cfg).map_err(err)?;
    let first = out.history[0].l1;
    let last = out.history.last().expect("history is non-empty").l1;
    let ratio = last / first;
    ensure(out.history.len() <= 200, || format!("{} epochs", out.history.len()))?;
    ensure(ratio <= 0.1, || format!("final train L1 {:.4} is {:.1}% of epoch 0 ({:.4})", last, 100.0 * ratio, first))?;
    let est = estimate_series(&model, ds, &norm).map_err(err)?;
    let test = score_steps(&est, ds, split.test.clone()).map_err(err)?;
    let persist = persistence_metrics(ds, split.test.clone()).map_err(err)?;
    ensure(test.mae < persist.mae, || format!("test MAE {:.4} >= persistence {:.4}", test.mae, persist.mae))?;
    Ok(format!(
        "{} epochs, train L1 {:.4} -> {:.4} ({:.2}%), test MAE {:.4} < persistence {:.4}",
        out.history.len(),
        first,
        last,
        100.0 * ratio,
        test.mae,
        persist.mae
    ))
}

struct RegRun {
    distance: f64,
    history: Vec<(u64, u64, u64)>,
    estimate: GridField,
}

fn regularized_run(alpha: f64, surrogate: &GridField) -> Result<RegRun, String> {
    let syn = synth_generate(1, 8, 8, 32, 3, 3).map_err(err)?;
    let ds = &syn.dataset;
    let split = Split::eight_one_one(ds.steps()).map_err(err)?;
    let norm = Normalizer::fit(ds, split.train.clone());
    let mut model: Orca<f32> =
        Orca::new(synthetic_model_config(8), ds.features(), ds.locations(), ds.interval_hours()).map_err(err)?;
    let data = TrainData { dataset: ds, surrogate: Some(surrogate), split: &split, normalizer: &norm };
    let cfg = TrainConfig { alpha, max_epochs: 200, patience: Some(15), ..Default::default() };
    let out = train(&mut model, &data, &cfg).map_err(err)?;
    let estimate = estimate_series(&model, ds, &norm).map_err(err)?;
    let n = estimate.values().len() as f64;
    let distance =
        estimate.values().iter().zip(syn.surrogate.values()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / n;
    let history = out.history.iter().map(|r| (r.loss.to_bits(), r.l1.to_bits(), r.val_l1.to_bits())).collect();
    Ok(RegRun { distance, history, estimate })
}

fn regularizer_effect() -> Outcome {
    let syn = synth_generate(1, 8, 8, 32, 3, 3).map_err(err)?;
    ensure(syn.surrogate.values() != syn.truth.values(), || "surrogate equals truth".into())?;
    let mut distances = Vec::new();
    let mut zero = None;
    for alpha in [0.0, 0.3, 3.0] {
        let run = regularized_run(alpha, &syn.surrogate)?;
        distances.push(run.distance);
        if alpha == 0.0 {
            zero = Some(run);
        }
    }
    let summary = format!("distance to surrogate {:.4} / {:.4} / {:.4}", distances[0], distances[1], distances[2]);
    ensure(distances.windows(2).all(|w| w[1] <= w[0]), || format!("{} is not non-increasing", summary))?;

    let mut garbage = syn.surrogate.clone();
    for (i, v) in garbage.values_mut().iter_mut().enumerate() {
        *v = (i as f32 * 0.37).sin() * 50.0 + 7.0;
    }
    let other = regularized_run(0.0, &garbage)?;
    let zero = zero.expect("alpha = 0 ran");
    ensure(other.history == zero.history, || "alpha = 0 history depends on the surrogate".into())?;
    let same = other.estimate.values().iter().zip(zero.estimate.values()).all(|(a, b)| a.to_bits() == b.to_bits());
    ensure(same, || "alpha = 0 estimate depends on the surrogate".into())?;
    Ok(format!("{}; alpha = 0 bit-identical under a garbage surrogate", summary))
}

fn grid_geometry() -> Outcome {
    let spec = GridSpec::from_bounds(32.0, 18.0, -98.0, -78.0, 0.5).map_err(err)?;
    spec.validate().map_err(err)?;
    ensure((spec.rows(), spec.cols()) == (29, 41), || format!("{}x{}", spec.rows(), spec.cols()))?;
    Ok("29 x 41".into())
}

fn ablation_plumbing() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    cmd_synth(1, SynthDims::default(), dir.path()).map_err(err)?;
    let base = RunConfig::load(&dir.path().join("orca.conf")).map_err(err)?;
    let variants: [(&str, PromptVariant, bool); 4] = [
        ("full", PromptVariant::Full, true),
        ("light", PromptVariant::Light, true),
        ("no-features", PromptVariant::NoFeatures, true),
        ("no-location", PromptVariant::Full, false),
    ];
    let mut sums: Vec<(String, String)> = Vec::new();
    for (name, prompt, location) in variants {
        let mut cfg = base.clone();
        cfg.model.prompt = prompt;
        cfg.model.use_location = location;
        cfg.train.max_epochs = 2;
        cfg.out_dir = dir.path().join(name);
        let report = cmd_train(&cfg).map_err(err)?;
        cmd_estimate(&cfg, &report.weights, &[]).map_err(err)?;
        cmd_eval(&cfg, &cfg.out_dir.join("estimate.grid"), false).map_err(err)?;
        let bytes = fs::read(&report.history_path).map_err(err)?;
        let hex: String = Sha256::digest(&bytes).iter().take(6).map(|b| format!("{:02x}", b)).collect();
        if let Some((other, _)) = sums.iter().find(|(_, h)| *h == hex) {
            return Err(format!("{} and {} produced the same history", name, other));
        }
        sums.push((name.to_string(), hex));
    }
    Ok(sums.iter().map(|(n, h)| format!("{} {}", n, h)).collect::<Vec<_>>().join(", "))
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { name: "metric self-consistency", budget: Duration::from_secs(1), run: metric_self_consistency },
        Criterion { name: "gradient suite", budget: Duration::from_secs(60), run: gradient_suite },
        Criterion { name: "z-order oracle", budget: Duration::from_secs(1), run: zorder_oracle },
        Criterion { name: "patch-count law", budget: Duration::from_secs(5), run: patch_law },
        Criterion { name: "shape law", budget: Duration::from_secs(30), run: shape_law },
        Criterion { name: "freeze-mask integrity", budget: Duration::from_secs(30), run: freeze_mask },
        Criterion { name: "synthetic overfit", budget: Duration::from_secs(600), run: synthetic_overfit },
        Criterion { name: "regularizer effect", budget: Duration::from_secs(900), run: regularizer_effect },
        Criterion { name: "grid geometry", budget: Duration::from_secs(1), run: grid_geometry },
        Criterion { name: "ablation plumbing", budget: Duration::from_secs(600), run: ablation_plumbing },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = (c.run)();
        let elapsed = t.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= c.budget => (true, d),
            Ok(d) => (false, format!("{}; over budget", d)),
            Err(e) => (false, e),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} {:<24} {:>7.2}s / {:>4}s  {}",
            if ok { "PASS" } else { "FAIL" },
            c.name,
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            detail
        );
    }
    if failed > 0 {
        println!("{} criteria failed", failed);
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
