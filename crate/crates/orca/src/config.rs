//! Run configuration: a flat `key = value` text file. `#` starts a comment.
//! `buoy = PATH LAT LON` may repeat; relative paths resolve against the
//! file's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDateTime;
use orca_core::backbone::BackboneConfig;
use orca_core::model::ModelConfig;
use orca_core::prompt::PromptVariant;
use orca_core::train::TrainConfig;
use orca_core::GridSpec;

use crate::buoy_text::{BuoySource, Lattice};
use crate::error::{io_err, Error, Result};

pub const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub buoys: Vec<BuoySource>,
    pub surrogate: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub grid: GridSpec,
    pub start: Option<NaiveDateTime>,
    pub steps: Option<usize>,
    pub interval_hours: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Command-line values that replace file values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub prompt: Option<PromptVariant>,
    pub no_location: bool,
    pub out: Option<PathBuf>,
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Config(format!("{} = {:?} is not valid", key, raw)))
}

fn flag(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{} = {:?} is not a boolean", key, raw))),
    }
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let resolve = |p: &str| -> PathBuf {
            let p = Path::new(p);
            if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
        };
        let gulf = GridSpec::gulf_of_mexico();
        let (mut north, mut south, mut west, mut east, mut cell) =
            (gulf.lat_north(), gulf.lat_south(), gulf.lon_west(), gulf.lon_east(), gulf.cell_deg());
        let mut buoys = Vec::new();
        let mut surrogate = None;
        let mut truth = None;
        let mut out_dir = base.join("out");
        let mut start = None;
        let mut steps = None;
        let mut interval_hours = 3.0;
        let mut model = ModelConfig::new(1, 1, 32);
        let mut train = TrainConfig::default();
        let mut seed = 0u64;

        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            match key {
                "buoy" => {
                    let parts: Vec<&str> = raw.split_whitespace().collect();
                    if parts.len() != 3 {
                        return Err(Error::Config(format!("line {}: buoy = PATH LAT LON", i + 1)));
                    }
                    buoys.push(BuoySource { path: resolve(parts[0]), lat: value(key, parts[1])?, lon: value(key, parts[2])? });
                }
                "surrogate" => surrogate = Some(resolve(raw)),
                "truth" => truth = Some(resolve(raw)),
                "out" => out_dir = resolve(raw),
                "lat_north" => north = value(key, raw)?,
                "lat_south" => south = value(key, raw)?,
                "lon_west" => west = value(key, raw)?,
                "lon_east" => east = value(key, raw)?,
                "cell_deg" => cell = value(key, raw)?,
                "start" => {
                    start = Some(
                        NaiveDateTime::parse_from_str(raw, TIME_FORMAT)
                            .map_err(|_| Error::Config(format!("start = {:?} is not YYYY-MM-DDTHH:MM", raw)))?,
                    )
                }
                "steps" => steps = Some(value(key, raw)?),
                "interval_hours" => interval_hours = value(key, raw)?,
                "width" => model.backbone.width = value(key, raw)?,
                "layers" => model.backbone.layers = value(key, raw)?,
                "heads" => model.backbone.heads = value(key, raw)?,
                "ffn_mult" => model.backbone.ffn_mult = value(key, raw)?,
                "max_tokens" => model.backbone.max_tokens = value(key, raw)?,
                "soft_tokens" => model.soft_tokens = value(key, raw)?,
                "patch_len" => model.patch_len = value(key, raw)?,
                "stride" => model.stride = value(key, raw)?,
                "window" => model.window = value(key, raw)?,
                "prompt" => model.prompt = value(key, raw)?,
                "location" => model.use_location = flag(key, raw)?,
                "lr" => train.lr = value(key, raw)?,
                "alpha" => train.alpha = value(key, raw)?,
                "max_epochs" => train.max_epochs = value(key, raw)?,
                "patience" => {
                    train.patience = match raw {
                        "none" => None,
                        _ => Some(value(key, raw)?),
                    }
                }
                "windows_per_epoch" => {
                    train.windows_per_epoch = match raw {
                        "all" => None,
                        _ => Some(value(key, raw)?),
                    }
                }
                "seed" => seed = value(key, raw)?,
                _ => return Err(Error::Config(format!("line {}: unknown key {:?}", i + 1, key))),
            }
        }
        if !(interval_hours > 0.0) {
            return Err(Error::Config(format!("interval_hours must be positive, got {}", interval_hours)));
        }
        let grid = GridSpec::from_bounds(north, south, west, east, cell)?;
        model.rows = grid.rows();
        model.cols = grid.cols();
        model.seed = seed;
        train.seed = seed;
        Ok(Self { buoys, surrogate, truth, out_dir, grid, start, steps, interval_hours, model, train })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.model.seed = seed;
            self.train.seed = seed;
        }
        if let Some(a) = o.alpha {
            self.train.alpha = a;
        }
        if let Some(p) = o.prompt {
            self.model.prompt = p;
        }
        if o.no_location {
            self.model.use_location = false;
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
    }

    /// Every input file must exist.
    pub fn check_inputs(&self) -> Result<()> {
        if self.buoys.is_empty() {
            return Err(Error::Config("no buoy entries".into()));
        }
        let inputs = self.buoys.iter().map(|b| &b.path).chain(self.surrogate.iter());
        for p in inputs {
            if !p.is_file() {
                return Err(Error::Config(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn lattice(&self) -> Option<Lattice> {
        match (self.start, self.steps) {
            (Some(start), Some(steps)) => Some(Lattice { start, interval_hours: self.interval_hours, steps }),
            _ => None,
        }
    }

    /// Renders the configuration back into the file format, with paths
    /// relative to `base` where possible.
    pub fn render(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        for b in &self.buoys {
            let _ = writeln!(s, "buoy = {} {} {}", rel(&b.path), b.lat, b.lon);
        }
        if let Some(p) = &self.surrogate {
            let _ = writeln!(s, "surrogate = {}", rel(p));
        }
        if let Some(p) = &self.truth {
            let _ = writeln!(s, "truth = {}", rel(p));
        }
        let _ = writeln!(s, "out = {}", rel(&self.out_dir));
        let g = &self.grid;
        let _ = writeln!(s, "lat_north = {}\nlat_south = {}", g.lat_north(), g.lat_south());
        let _ = writeln!(s, "lon_west = {}\nlon_east = {}\ncell_deg = {}", g.lon_west(), g.lon_east(), g.cell_deg());
        if let Some(start) = self.start {
            let _ = writeln!(s, "start = {}", start.format(TIME_FORMAT));
        }
        if let Some(steps) = self.steps {
            let _ = writeln!(s, "steps = {}", steps);
        }
        let _ = writeln!(s, "interval_hours = {}", self.interval_hours);
        let BackboneConfig { layers, heads, width, ffn_mult, max_tokens } = m.backbone;
        let _ = writeln!(s, "width = {}\nlayers = {}\nheads = {}\nffn_mult = {}\nmax_tokens = {}", width, layers, heads, ffn_mult, max_tokens);
        let _ = writeln!(s, "soft_tokens = {}\npatch_len = {}\nstride = {}\nwindow = {}", m.soft_tokens, m.patch_len, m.stride, m.window);
        let _ = writeln!(s, "prompt = {}\nlocation = {}", m.prompt, m.use_location);
        let _ = writeln!(s, "lr = {}\nalpha = {}\nmax_epochs = {}", t.lr, t.alpha, t.max_epochs);
        let _ = writeln!(s, "patience = {}", t.patience.map_or("none".to_string(), |p| p.to_string()));
        let _ = writeln!(s, "windows_per_epoch = {}", t.windows_per_epoch.map_or("all".to_string(), |p| p.to_string()));
        let _ = writeln!(s, "seed = {}", m.seed);
        s
    }
}
