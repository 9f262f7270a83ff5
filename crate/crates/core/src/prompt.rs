//! Structured text prompt, desk-scale tokenizer, and the soft-prompt encoder.
//!
//! The full prompt has five labelled sections in fixed order: ACTOR,
//! INFORMATION, TARGET, FEATURES, DATA. The soft prompt `Q` (R x D) runs
//! through a single-layer LSTM; its hidden-state sequence goes through
//! `ReLU(h @ w2 + b2) @ w1 + b1`. The encoded rows are stacked above the
//! embedded prompt tokens.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;
use core::str::FromStr;

use crate::dataset::DatasetMeta;
use crate::error::{shape_err, Error, Result};
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum PromptVariant {
    /// All five sections.
    #[default]
    Full,
    /// ACTOR and TARGET only.
    Light,
    /// Full prompt without the FEATURES section.
    NoFeatures,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 3] = [PromptVariant::Full, PromptVariant::Light, PromptVariant::NoFeatures];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptVariant::Full => "full",
            PromptVariant::Light => "light",
            PromptVariant::NoFeatures => "no-features",
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(PromptVariant::Full),
            "light" => Ok(PromptVariant::Light),
            "no-features" => Ok(PromptVariant::NoFeatures),
            other => Err(Error::Config(format!("unknown prompt variant '{}' (full|light|no-features)", other))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Section {
    Actor,
    Information,
    Target,
    Features,
    Data,
}

impl Section {
    pub fn label(self) -> &'static str {
        match self {
            Section::Actor => "ACTOR",
            Section::Information => "INFORMATION",
            Section::Target => "TARGET",
            Section::Features => "FEATURES",
            Section::Data => "DATA",
        }
    }
}

/// Section texts; `{F}`, `{M}`, `{T}`, `{H}` and `{FEATURES}` are filled
/// from the dataset at render time.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptTemplate {
    pub actor: String,
    pub information: String,
    pub target: String,
    pub features: String,
    pub data_decl: String,
    pub variant: PromptVariant,
}

impl PromptTemplate {
    pub fn new(variant: PromptVariant) -> Self {
        Self {
            actor: "You are a marine scientist.".into(),
            information: "The input holds {F} features observed by {M} buoys over {T} time steps at a {H} hour interval."
                .into(),
            target: "Estimate the significant wave height in every cell of the ocean grid for every time step, \
                     using your expertise and the buoy observations."
                .into(),
            features: "The features are {FEATURES}.".into(),
            data_decl: "Every value in the input is a floating point number, not a string.".into(),
            variant,
        }
    }

    fn sections(&self) -> Vec<(Section, &str)> {
        let all = [
            (Section::Actor, self.actor.as_str()),
            (Section::Information, self.information.as_str()),
            (Section::Target, self.target.as_str()),
            (Section::Features, self.features.as_str()),
            (Section::Data, self.data_decl.as_str()),
        ];
        all.into_iter()
            .filter(|(s, _)| match self.variant {
                PromptVariant::Full => true,
                PromptVariant::Light => matches!(s, Section::Actor | Section::Target),
                PromptVariant::NoFeatures => *s != Section::Features,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedPrompt {
    pub text: String,
    /// Byte span of each rendered section, in order.
    pub sections: Vec<(Section, Range<usize>)>,
}

/// Long-form description of a buoy feature code.
pub fn describe_feature(code: &str) -> Option<&'static str> {
    Some(match code {
        "WDIR" => "wind direction",
        "WSPD" => "wind speed",
        "GST" => "gust speed",
        "WVHT" => "significant wave height",
        "DPD" => "dominant wave period",
        "APD" => "average wave period",
        "MWD" => "mean wave direction",
        "PRES" => "sea level pressure",
        "ATMP" => "air temperature",
        "WTMP" => "sea surface temperature",
        "DEWP" => "dewpoint temperature",
        "VIS" => "visibility",
        "PTDY" => "pressure tendency",
        "TIDE" => "water level",
        _ => return None,
    })
}

fn feature_list(names: &[String]) -> String {
    let items: Vec<String> = names
        .iter()
        .map(|n| match describe_feature(n) {
            Some(d) => format!("{} ({})", d, n),
            None => n.clone(),
        })
        .collect();
    items.join(", ")
}

fn format_hours(h: f64) -> String {
    if libm::fabs(h - libm::round(h)) < 1e-9 {
        format!("{}", h as i64)
    } else {
        format!("{}", h)
    }
}

/// Renders the template for a dataset. Sections are joined by single spaces,
/// each prefixed with its label and a colon.
pub fn render_prompt(template: &PromptTemplate, meta: &DatasetMeta) -> RenderedPrompt {
    let mut text = String::new();
    let mut sections = Vec::new();
    for (section, body) in template.sections() {
        if !text.is_empty() {
            text.push(' ');
        }
        let body = body
            .replace("{F}", &meta.features.len().to_string())
            .replace("{M}", &meta.buoys.to_string())
            .replace("{T}", &meta.steps.to_string())
            .replace("{H}", &format_hours(meta.interval_hours))
            .replace("{FEATURES}", &feature_list(&meta.features));
        let start = text.len();
        text.push_str(section.label());
        text.push_str(": ");
        text.push_str(&body);
        sections.push((section, start..text.len()));
    }
    RenderedPrompt { text, sections }
}

/// Lower-cased alphanumeric runs; whitespace and punctuation separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Token ids: `PAD = 0`, `UNK = 1`, then corpus tokens in order of first
/// appearance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    ids: BTreeMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;

    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self { ids: BTreeMap::new(), tokens: Vec::new() };
        v.insert("<pad>");
        v.insert("<unk>");
        for text in corpus {
            for tok in tokenize(text) {
                v.insert(&tok);
            }
        }
        v
    }

    fn insert(&mut self, tok: &str) {
        if !self.ids.contains_key(tok) {
            self.ids.insert(tok.to_string(), self.tokens.len());
            self.tokens.push(tok.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }
}

/// Looks up the rows of a `V x D` embedding table for every token of `text`:
/// the `E x D` prompt matrix.
pub fn tokenize_and_embed<T: Real>(text: &str, vocab: &Vocabulary, table: &Tensor<T>) -> Result<Tensor<T>> {
    embed_ids(&vocab.encode(text), table)
}

pub fn embed_ids<T: Real>(ids: &[usize], table: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = table.shape();
    if shape.len() != 2 {
        return Err(shape_err("tokenize_and_embed", format!("embedding table must be V x D, got {:?}", shape)));
    }
    let (v, d) = (shape[0], shape[1]);
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= v {
            return Err(shape_err("tokenize_and_embed", format!("token id {} outside table of {} rows", id, v)));
        }
        data.extend_from_slice(&table.data()[id * d..(id + 1) * d]);
    }
    Tensor::new(alloc::vec![ids.len(), d], data)
}

/// Graph handles of the soft-prompt encoder weights. LSTM gate columns are
/// ordered input, forget, cell, output.
#[derive(Clone, Copy, Debug)]
pub struct SoftPromptWeights {
    /// D x 4D
    pub w_ih: Var,
    /// D x 4D
    pub w_hh: Var,
    /// 4D
    pub b_lstm: Var,
    /// D x D
    pub w2: Var,
    /// D
    pub b2: Var,
    /// D x D
    pub w1: Var,
    /// D
    pub b1: Var,
}

/// Encodes an `R x D` soft prompt into `H_q` (`R x D`).
pub fn encode_soft_prompt<T: Real>(g: &mut Graph<T>, q: Var, w: &SoftPromptWeights) -> Result<Var> {
    let shape = g.shape(q).to_vec();
    if shape.len() != 2 {
        return Err(shape_err("encode_soft_prompt", format!("soft prompt must be R x D, got {:?}", shape)));
    }
    let (r, d) = (shape[0], shape[1]);
    if r == 0 {
        return Err(Error::Contract("soft prompt must have at least one row".into()));
    }
    if g.shape(w.w_ih) != [d, 4 * d] || g.shape(w.w_hh) != [d, 4 * d] || g.shape(w.b_lstm) != [4 * d] {
        return Err(shape_err(
            "encode_soft_prompt",
            format!(
                "LSTM weights {:?}/{:?}/{:?} do not fit width {}",
                g.shape(w.w_ih),
                g.shape(w.w_hh),
                g.shape(w.b_lstm),
                d
            ),
        ));
    }
    let x_proj = g.linear(q, w.w_ih, w.b_lstm)?;
    let mut h = g.constant(Tensor::zeros(&[1, d]));
    let mut c = g.constant(Tensor::zeros(&[1, d]));
    let mut states = Vec::with_capacity(r);
    for t in 0..r {
        let xt = g.slice(x_proj, 0, t, 1)?;
        let hh = g.matmul(h, w.w_hh)?;
        let gates = g.add(xt, hh)?;
        let parts = g.split(gates, 1, &[d, d, d, d])?;
        let i_gate = g.sigmoid(parts[0]);
        let f_gate = g.sigmoid(parts[1]);
        let cand = g.tanh(parts[2]);
        let o_gate = g.sigmoid(parts[3]);
        let keep = g.mul(f_gate, c)?;
        let write = g.mul(i_gate, cand)?;
        c = g.add(keep, write)?;
        let ct = g.tanh(c);
        h = g.mul(o_gate, ct)?;
        states.push(h);
    }
    let hs = g.concat(&states, 0)?;
    let inner = g.linear(hs, w.w2, w.b2)?;
    let inner = g.relu(inner);
    g.linear(inner, w.w1, w.b1)
}

/// `H_prompt = [H_q; P]`, `(R + E) x D`.
pub fn build_prompt_repr<T: Real>(g: &mut Graph<T>, h_q: Var, p: Var) -> Result<Var> {
    let (qs, ps) = (g.shape(h_q).to_vec(), g.shape(p).to_vec());
    if qs.len() != 2 || ps.len() != 2 || qs[1] != ps[1] {
        return Err(shape_err("build_prompt_repr", format!("H_q {:?} and P {:?} widths differ", qs, ps)));
    }
    g.concat(&[h_q, p], 0)
}
