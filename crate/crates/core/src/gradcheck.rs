//! Finite-difference verification of analytic gradients, per module and for
//! the full pipeline.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{backbone_forward, normal_tensor, pool_and_project, push_backbone_arrays, BackboneConfig, POS_EMBEDDING};
use crate::encoding::{spatial_embed, temporal_embed};
use crate::error::Result;
use crate::loss::{loss_buoy, loss_phys, total_loss, BuoyObservation};
use crate::model::{ModelConfig, Orca};
use crate::params::ModelParams;
use crate::prompt::{encode_soft_prompt, SoftPromptWeights};
use crate::synth::synth_generate;
use crate::tensor::{finite_diff_gradient, relative_error, Graph, Tensor, Var};
use crate::train::{buoy_observations, window_inputs, Normalizer};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub tolerance: f64,
    /// Coordinates sampled per array; smaller arrays are checked fully.
    pub samples: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Adds a bias to the analytic gradient of this array before comparing.
    pub corrupt: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-6, floor: 1e-6, tolerance: 1e-4, samples: 24, alpha: 0.3, seed: 7, corrupt: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckEntry {
    pub name: String,
    pub checked: usize,
    pub worst_rel_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    pub modules: Vec<CheckEntry>,
    /// One entry per trainable array of the full model.
    pub arrays: Vec<CheckEntry>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.modules.iter().chain(&self.arrays).all(|e| e.passed)
    }

    pub fn failures(&self) -> Vec<&CheckEntry> {
        self.modules.iter().chain(&self.arrays).filter(|e| !e.passed).collect()
    }
}

fn entry(name: &str, analytic: &[f64], numeric: &[f64], opts: &GradCheckOptions) -> CheckEntry {
    let worst = analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, opts.floor))
        .fold(0.0, f64::max);
    CheckEntry { name: name.to_string(), checked: analytic.len(), worst_rel_err: worst, passed: worst <= opts.tolerance }
}

fn corrupt_if_named(name: &str, grad: &mut [f64], opts: &GradCheckOptions) {
    if opts.corrupt.as_deref() == Some(name) {
        for g in grad {
            *g = *g * 1.1 + 1e-2;
        }
    }
}

/// The small configuration used by the suite: 4 x 4 grid, two buoys,
/// eight steps, width 8, one layer.
pub fn tiny_model_config() -> ModelConfig {
    let mut c = ModelConfig::new(4, 4, 8);
    c.soft_tokens = 2;
    c.patch_len = 4;
    c.stride = 2;
    c.backbone = BackboneConfig { layers: 1, heads: 2, width: 8, ffn_mult: 2, max_tokens: 96 };
    c
}

/// Checks every trainable array of a tiny synthetic model against central
/// differences of `L = L1 + alpha * L2`.
pub fn check_full_model(opts: &GradCheckOptions) -> Result<Vec<CheckEntry>> {
    let syn = synth_generate(opts.seed, 4, 4, 8, 2, 2)?;
    let ds = &syn.dataset;
    let mut model = Orca::<f64>::new(tiny_model_config(), ds.features(), ds.locations(), ds.interval_hours())?;
    let norm = Normalizer::fit(ds, 0..ds.steps());
    let series = norm.apply(ds);
    let inputs = window_inputs(&series, ds.num_features(), ds.num_buoys(), ds.steps(), 0, 8);
    let obs = buoy_observations(ds, 0..8, 0);
    let surrogate: Vec<f64> = syn.surrogate.values().iter().map(|&v| v as f64).collect();
    let surrogate = Tensor::from_f64(&[4, 4, 8], &surrogate)?;

    let loss_of = |model: &Orca<f64>, grads: bool| -> Result<(f64, Vec<Option<Vec<f64>>>)> {
        let mut g = Graph::new();
        let bound = if grads { model.params().bind(&mut g) } else { model.params().bind_frozen(&mut g) };
        let y = model.forward(&mut g, &bound, &inputs)?;
        let l1 = loss_buoy(&mut g, y, &obs)?;
        let s = g.constant(surrogate.clone());
        let l2 = loss_phys(&mut g, y, s)?;
        let l = total_loss(&mut g, l1, l2, opts.alpha)?;
        let value = g.value(l).item()?;
        if !grads {
            return Ok((value, Vec::new()));
        }
        g.backward(l)?;
        Ok((value, bound.vars().iter().map(|&v| g.grad(v).map(|s| s.to_vec())).collect()))
    };

    let (_, grads) = loss_of(&model, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let tokens = model.layout().tokens;
    let width = model.config().width();
    let mut out = Vec::new();
    for i in 0..model.params().len() {
        let (name, numel) = {
            let a = &model.params().arrays()[i];
            if !a.trainable {
                continue;
            }
            (a.name.clone(), a.value.numel())
        };
        // Rows of the positional table past the token count are unused.
        let active = if name == POS_EMBEDDING { tokens * width } else { numel };
        let coords: Vec<usize> = if active <= opts.samples {
            (0..active).collect()
        } else {
            let mut c = sample(&mut rng, active, opts.samples).into_vec();
            c.sort_unstable();
            c
        };
        let full = grads[i].as_ref().expect("trainable arrays receive gradients");
        let mut analytic: Vec<f64> = coords.iter().map(|&c| full[c]).collect();
        corrupt_if_named(&name, &mut analytic, opts);
        let mut numeric = Vec::with_capacity(coords.len());
        for &c in &coords {
            let orig = model.params().arrays()[i].value.data()[c];
            model.params_mut().arrays_mut()[i].value.data_mut()[c] = orig + opts.step;
            let (plus, _) = loss_of(&model, false)?;
            model.params_mut().arrays_mut()[i].value.data_mut()[c] = orig - opts.step;
            let (minus, _) = loss_of(&model, false)?;
            model.params_mut().arrays_mut()[i].value.data_mut()[c] = orig;
            numeric.push((plus - minus) / (2.0 * opts.step));
        }
        out.push(entry(&name, &analytic, &numeric, opts));
    }
    Ok(out)
}

/// Checks `d objective / d x` for one module, where the objective is a
/// fixed random projection of the module output.
fn check_module(
    name: &str,
    x: &Tensor<f64>,
    opts: &GradCheckOptions,
    build: &dyn Fn(&mut Graph<f64>, Var) -> Result<Var>,
) -> Result<CheckEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (name.len() as u64) << 8);
    let out_len = {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = build(&mut g, xv)?;
        g.value(y).numel()
    };
    let proj: Tensor<f64> = normal_tensor(&mut rng, &[out_len], 1.0);
    let objective = |g: &mut Graph<f64>, xv: Var| -> Result<Var> {
        let y = build(g, xv)?;
        let n = g.value(y).numel();
        let y = g.reshape(y, &[n])?;
        let p = g.constant(proj.clone());
        let prod = g.mul(y, p)?;
        Ok(g.sum_all(prod))
    };
    let mut g = Graph::new();
    let xv = g.leaf(x.clone().with_requires_grad(true));
    let o = objective(&mut g, xv)?;
    g.backward(o)?;
    let mut analytic = g.grad(xv).expect("leaf tracks gradient").to_vec();
    corrupt_if_named(name, &mut analytic, opts);
    let numeric = finite_diff_gradient(
        |t| {
            let mut g = Graph::new();
            let xv = g.constant(t.clone());
            objective(&mut g, xv).map(|o| g.value(o).data()[0]).unwrap_or(f64::NAN)
        },
        x,
        opts.step,
    )?;
    Ok(entry(name, &analytic, numeric.data(), opts))
}

/// Module-level checks: each encoder, the backbone, the head and both
/// losses, each with respect to its own input or weight.
pub fn check_modules(opts: &GradCheckOptions) -> Result<Vec<CheckEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let d = 4;
    let mut out = Vec::new();

    let z = g_const_bits(3, 4);
    let b3: Tensor<f64> = normal_tensor(&mut rng, &[d], 0.5);
    let w3: Tensor<f64> = normal_tensor(&mut rng, &[4, d], 1.0);
    out.push(check_module("spatial_embed", &w3, opts, &|g, w| {
        let zv = g.constant(z.clone());
        let bv = g.constant(b3.clone());
        spatial_embed(g, zv, w, bv)
    })?);

    let c: Tensor<f64> = normal_tensor(&mut rng, &[3, 2, 2, 4], 1.0);
    let b4: Tensor<f64> = normal_tensor(&mut rng, &[d], 0.5);
    let w4: Tensor<f64> = normal_tensor(&mut rng, &[4, d], 1.0);
    out.push(check_module("temporal_embed", &w4, opts, &|g, w| {
        let cv = g.constant(c.clone());
        let bv = g.constant(b4.clone());
        temporal_embed(g, cv, w, bv)
    })?);

    let lstm = [
        normal_tensor::<f64>(&mut rng, &[d, 4 * d], 0.5),
        normal_tensor(&mut rng, &[d, 4 * d], 0.5),
        normal_tensor(&mut rng, &[4 * d], 0.1),
        normal_tensor(&mut rng, &[d, d], 0.5),
        normal_tensor(&mut rng, &[d], 0.1),
        normal_tensor(&mut rng, &[d, d], 0.5),
        normal_tensor(&mut rng, &[d], 0.1),
    ];
    let q: Tensor<f64> = normal_tensor(&mut rng, &[3, d], 1.0);
    out.push(check_module("soft_prompt_encoder", &q, opts, &|g, qv| {
        let v: Vec<Var> = lstm.iter().map(|t| g.constant(t.clone())).collect();
        let w = SoftPromptWeights { w_ih: v[0], w_hh: v[1], b_lstm: v[2], w2: v[3], b2: v[4], w1: v[5], b1: v[6] };
        encode_soft_prompt(g, qv, &w)
    })?);

    let config = BackboneConfig { layers: 2, heads: 2, width: d, ffn_mult: 2, max_tokens: 5 };
    let mut params = ModelParams::new();
    push_backbone_arrays(&mut params, &config, &mut rng)?;
    for a in params.arrays_mut() {
        // Non-trivial norm gains and biases.
        if a.name.contains("beta") || a.name.contains(".b_") {
            a.value = normal_tensor(&mut rng, a.value.shape(), 0.1);
        }
    }
    let h: Tensor<f64> = normal_tensor(&mut rng, &[5, 2, 2, d], 1.0);
    out.push(check_module("backbone", &h, opts, &|g, x| {
        let bound = params.bind_frozen(g);
        backbone_forward(g, &params, &bound, &config, x)
    })?);

    let h_llm: Tensor<f64> = normal_tensor(&mut rng, &[3, 2, 2, d], 1.0);
    let b5: Tensor<f64> = normal_tensor(&mut rng, &[2 * 2 * 3], 0.1);
    let w5: Tensor<f64> = normal_tensor(&mut rng, &[3 * 2 * d, 2 * 2 * 3], 0.3);
    out.push(check_module("pool_and_project", &w5, opts, &|g, w| {
        let hv = g.constant(h_llm.clone());
        let bv = g.constant(b5.clone());
        pool_and_project(g, hv, w, bv, 2, 2, 3)
    })?);

    let y: Tensor<f64> = normal_tensor(&mut rng, &[2, 2, 3], 1.0);
    let obs = [
        BuoyObservation { row: 0, col: 1, step: 0, value: 0.4 },
        BuoyObservation { row: 1, col: 0, step: 2, value: -0.2 },
        BuoyObservation { row: 1, col: 1, step: 1, value: 1.3 },
    ];
    out.push(check_module("loss_buoy", &y, opts, &|g, yv| loss_buoy(g, yv, &obs))?);
    let surrogate: Tensor<f64> = normal_tensor(&mut rng, &[2, 2, 3], 1.0);
    out.push(check_module("loss_phys", &y, opts, &|g, yv| {
        let s = g.constant(surrogate.clone());
        loss_phys(g, yv, s)
    })?);
    Ok(out)
}

fn g_const_bits(rows: usize, bits: usize) -> Tensor<f64> {
    let data: Vec<f64> = (0..rows * bits).map(|i| ((i * 7 + 3) % 5 % 2) as f64).collect();
    Tensor::new(vec![rows, bits], data).expect("rows x bits")
}

/// Module checks followed by the full-model check.
pub fn run_gradcheck(opts: &GradCheckOptions) -> Result<GradReport> {
    Ok(GradReport { modules: check_modules(opts)?, arrays: check_full_model(opts)? })
}

pub fn format_report(report: &GradReport) -> String {
    let mut s = String::new();
    for e in report.modules.iter().chain(&report.arrays) {
        s.push_str(&format!(
            "{:<4} {:<28} worst_rel_err={:.3e} coords={}\n",
            if e.passed { "ok" } else { "FAIL" },
            e.name,
            e.worst_rel_err,
            e.checked
        ));
    }
    s
}
