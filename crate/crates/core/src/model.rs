//! End-to-end estimator: prompt, location and patch tokens through the
//! backbone to a `K x J x T` SWH field.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{backbone_forward, dense, normal_tensor, pool_and_project, push_backbone_arrays, BackboneConfig, EMBED_INIT_STD};
use crate::dataset::DatasetMeta;
use crate::encoding::{assemble_input, spatial_embed, temporal_embed, token_count};
use crate::error::{Error, Result};
use crate::params::{Bound, ModelParams};
use crate::patch::{make_patches, patch_count};
use crate::prompt::{build_prompt_repr, encode_soft_prompt, render_prompt, PromptTemplate, PromptVariant, SoftPromptWeights, Vocabulary};
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};
use crate::zorder::{zorder_encode, ZOrderCode};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub rows: usize,
    pub cols: usize,
    /// Steps per estimation window.
    pub window: usize,
    pub soft_tokens: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub prompt: PromptVariant,
    pub use_location: bool,
    pub backbone: BackboneConfig,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(rows: usize, cols: usize, window: usize) -> Self {
        Self {
            rows,
            cols,
            window,
            soft_tokens: 8,
            patch_len: 16,
            stride: 8,
            prompt: PromptVariant::Full,
            use_location: true,
            backbone: BackboneConfig::default(),
            seed: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.backbone.width
    }
}

/// Derived token bookkeeping for one model instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub soft_tokens: usize,
    pub prompt_tokens: usize,
    pub location: bool,
    pub patches: usize,
    pub tokens: usize,
    pub bit_depth: usize,
    pub features: usize,
    pub buoys: usize,
}

pub struct Orca<T> {
    config: ModelConfig,
    meta: DatasetMeta,
    locations: Vec<(usize, usize)>,
    vocab: Vocabulary,
    prompt_text: String,
    prompt_ids: Vec<usize>,
    zorder: ZOrderCode,
    layout: Layout,
    params: ModelParams<T>,
}

impl<T: Real> Orca<T> {
    /// Builds a model for buoys at `locations` carrying `features`, with
    /// seeded initial parameters.
    pub fn new(config: ModelConfig, features: &[String], locations: &[(usize, usize)], interval_hours: f64) -> Result<Self> {
        config.backbone.validate()?;
        if features.is_empty() || locations.is_empty() {
            return Err(Error::Contract(format!("need features and buoys, got F = {}, M = {}", features.len(), locations.len())));
        }
        if config.soft_tokens == 0 {
            return Err(Error::Config("soft_tokens must be >= 1".into()));
        }
        if config.rows == 0 || config.cols == 0 || config.window == 0 {
            return Err(Error::Config(format!("empty output lattice {}x{}x{}", config.rows, config.cols, config.window)));
        }
        let meta = DatasetMeta {
            features: features.to_vec(),
            buoys: locations.len(),
            steps: config.window,
            interval_hours,
        };
        let renders: Vec<String> =
            PromptVariant::ALL.iter().map(|&v| render_prompt(&PromptTemplate::new(v), &meta).text).collect();
        let vocab = Vocabulary::build(renders.iter().map(String::as_str));
        let prompt_text = render_prompt(&PromptTemplate::new(config.prompt), &meta).text;
        let prompt_ids = vocab.encode(&prompt_text);
        let zorder = zorder_encode(locations, config.rows, config.cols)?;
        let patches = patch_count(config.window, config.patch_len, config.stride)?;
        let tokens = token_count(config.soft_tokens, prompt_ids.len(), config.use_location, patches);
        if tokens > config.backbone.max_tokens {
            return Err(Error::Capacity(format!("{} tokens exceed max_tokens {}", tokens, config.backbone.max_tokens)));
        }
        let layout = Layout {
            soft_tokens: config.soft_tokens,
            prompt_tokens: prompt_ids.len(),
            location: config.use_location,
            patches,
            tokens,
            bit_depth: zorder.bit_depth(),
            features: features.len(),
            buoys: locations.len(),
        };
        let params = init_params(&config, &layout, vocab.len())?;
        Ok(Self { config, meta, locations: locations.to_vec(), vocab, prompt_text, prompt_ids, zorder, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn locations(&self) -> &[(usize, usize)] {
        &self.locations
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn prompt_text(&self) -> &str {
        &self.prompt_text
    }

    pub fn zorder(&self) -> &ZOrderCode {
        &self.zorder
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<T> {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ModelParams<T>) -> Result<()> {
        let same = params.len() == self.params.len()
            && params.arrays().iter().zip(self.params.arrays()).all(|(a, b)| {
                a.name == b.name && a.value.shape() == b.value.shape() && a.trainable == b.trainable
            });
        if !same {
            return Err(Error::Load("parameter set does not match the model layout".into()));
        }
        self.params = params;
        Ok(())
    }

    /// Builds the graph for one window of normalized inputs laid out
    /// feature-major (`F x M x window`). Returns the estimate (`K x J x window`).
    pub fn forward(&self, g: &mut Graph<T>, bound: &Bound, inputs: &[f64]) -> Result<Var> {
        let (f, m, t) = (self.layout.features, self.layout.buoys, self.config.window);
        let d = self.config.width();
        let p = &self.params;
        let v = |name: &str| bound.var(p, name);

        let q = v("prompt.soft_prompt");
        let weights = SoftPromptWeights {
            w_ih: v("prompt.lstm.w_ih"),
            w_hh: v("prompt.lstm.w_hh"),
            b_lstm: v("prompt.lstm.bias"),
            w2: v("prompt.w2"),
            b2: v("prompt.b2"),
            w1: v("prompt.w1"),
            b1: v("prompt.b1"),
        };
        let h_q = encode_soft_prompt(g, q, &weights)?;
        let flat: Vec<usize> = self.prompt_ids.iter().flat_map(|&id| id * d..(id + 1) * d).collect();
        let words = g.gather(v("prompt.word_embedding"), &flat)?;
        let words = g.reshape(words, &[self.prompt_ids.len(), d])?;
        let h_prompt = build_prompt_repr(g, h_q, words)?;

        let h_loc = if self.config.use_location {
            let z = g.constant(self.zorder.to_tensor(m));
            Some(spatial_embed(g, z, v("spatial.w3"), v("spatial.b3"))?)
        } else {
            None
        };

        let patches = make_patches(inputs, f, m, t, self.config.patch_len, self.config.stride)?;
        let c = g.constant(Tensor::from_f64(&patches.shape(), &patches.patches)?);
        let h_temp = temporal_embed(g, c, v("temporal.w4"), v("temporal.b4"))?;

        let h_input = assemble_input(g, h_prompt, h_loc, h_temp)?;
        let h_llm = backbone_forward(g, p, bound, &self.config.backbone, h_input)?;
        pool_and_project(g, h_llm, v("head.w5"), v("head.b5"), self.config.rows, self.config.cols, t)
    }

    /// Forward pass without gradient bookkeeping.
    pub fn estimate_window(&self, inputs: &[f64]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let frozen = self.params.bind_frozen(&mut g);
        let y = self.forward(&mut g, &frozen, inputs)?;
        Ok(g.value(y).clone())
    }
}

/// Seeded initial parameters. Trainable: the soft prompt, the prompt
/// encoder's affine layers, both embedding layers, the positional table and
/// the output head. Everything else is frozen.
fn init_params<T: Real>(config: &ModelConfig, layout: &Layout, vocab_len: usize) -> Result<ModelParams<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.width();
    let mut p = ModelParams::new();
    p.push("prompt.word_embedding", normal_tensor(&mut rng, &[vocab_len, d], EMBED_INIT_STD), false);
    p.push("prompt.soft_prompt", normal_tensor(&mut rng, &[config.soft_tokens, d], EMBED_INIT_STD), true);
    p.push("prompt.lstm.w_ih", dense(&mut rng, d, 4 * d), false);
    p.push("prompt.lstm.w_hh", dense(&mut rng, d, 4 * d), false);
    p.push("prompt.lstm.bias", Tensor::zeros(&[4 * d]), false);
    p.push("prompt.w2", dense(&mut rng, d, d), true);
    p.push("prompt.b2", Tensor::zeros(&[d]), true);
    p.push("prompt.w1", dense(&mut rng, d, d), true);
    p.push("prompt.b1", Tensor::zeros(&[d]), true);
    p.push("spatial.w3", dense(&mut rng, layout.bit_depth, d), true);
    p.push("spatial.b3", Tensor::zeros(&[d]), true);
    p.push("temporal.w4", dense(&mut rng, config.patch_len, d), true);
    p.push("temporal.b4", Tensor::zeros(&[d]), true);
    push_backbone_arrays(&mut p, &config.backbone, &mut rng)?;
    let flat = layout.tokens * layout.buoys * d;
    let out = config.rows * config.cols * config.window;
    p.push("head.w5", dense(&mut rng, flat, out), true);
    p.push("head.b5", Tensor::zeros(&[out]), true);
    Ok(p)
}
