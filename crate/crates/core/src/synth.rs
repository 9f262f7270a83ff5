//! Seeded synthetic ocean: a propagating-wave truth field, noisy buoys
//! sampled from it, and a spatially smoothed stand-in for numerical-model
//! output.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::BuoyDataset;
use crate::error::{Error, Result};
use crate::grid::{FieldRole, GridField, GridSpec};

/// Standard deviation of buoy SWH noise, meters.
pub const BUOY_NOISE_M: f64 = 0.05;
/// Floor added under the superposed disturbances, meters.
const BASE_SWH_M: f64 = 0.3;
/// Step length of synthetic data, hours.
pub const SYNTH_INTERVAL_HOURS: f64 = 3.0;

const FEATURE_POOL: [&str; 8] = ["WDIR", "WSPD", "WVHT", "DPD", "ATMP", "WTMP", "PRES", "GST"];

#[derive(Clone, Debug, PartialEq)]
pub struct Synthetic {
    pub spec: GridSpec,
    pub dataset: BuoyDataset,
    pub truth: GridField,
    pub surrogate: GridField,
}

#[derive(Clone, Copy, Debug)]
struct Disturbance {
    amplitude: f64,
    kx: f64,
    ky: f64,
    omega: f64,
    phase: f64,
}

/// Feature labels used for `features` synthetic channels.
pub fn synth_feature_names(features: usize) -> Result<Vec<String>> {
    if features < 2 {
        return Err(Error::Contract(format!("need SWH plus at least one wind feature, got F = {}", features)));
    }
    if features > FEATURE_POOL.len() {
        return Err(Error::Capacity(format!("at most {} synthetic features, got {}", FEATURE_POOL.len(), features)));
    }
    let names: Vec<&str> = if features == 2 { vec!["WSPD", "WVHT"] } else { FEATURE_POOL[..features].to_vec() };
    Ok(names.into_iter().map(String::from).collect())
}

/// Generates a synthetic scene on a `rows x cols` grid anchored at the
/// north-west corner of the Gulf of Mexico region.
pub fn synth_generate(seed: u64, rows: usize, cols: usize, steps: usize, buoys: usize, features: usize) -> Result<Synthetic> {
    let names = synth_feature_names(features)?;
    if buoys == 0 {
        return Err(Error::Contract("at least one buoy is required".into()));
    }
    if rows == 0 || cols == 0 || steps == 0 {
        return Err(Error::Contract(format!("empty lattice {}x{}x{}", rows, cols, steps)));
    }
    if buoys > rows * cols {
        return Err(Error::Capacity(format!("{} buoys do not fit in {} cells", buoys, rows * cols)));
    }
    let spec = GridSpec::from_origin(rows, cols, 32.0, -98.0, 0.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let count = rng.random_range(2..=4);
    let disturbances: Vec<Disturbance> = (0..count)
        .map(|_| {
            let amplitude = rng.random_range(0.2..0.8);
            let wavelength = rng.random_range(6.0..20.0);
            let heading = rng.random_range(0.0..2.0 * PI);
            let period = rng.random_range(6.0..16.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            let k = 2.0 * PI / wavelength;
            Disturbance { amplitude, kx: k * libm::cos(heading), ky: k * libm::sin(heading), omega: 2.0 * PI / period, phase }
        })
        .collect();
    let dominant_heading = wrap_degrees(libm::atan2(disturbances[0].ky, disturbances[0].kx).to_degrees());

    let mut truth = GridField::zeros(rows, cols, steps, FieldRole::Truth);
    for r in 0..rows {
        for c in 0..cols {
            for t in 0..steps {
                let mut h = BASE_SWH_M;
                for d in &disturbances {
                    let arg = d.kx * c as f64 + d.ky * r as f64 - d.omega * t as f64 + d.phase;
                    h += d.amplitude * (1.0 + libm::sin(arg));
                }
                truth.set(r, c, t, h as f32);
            }
        }
    }

    let surrogate = box_filter_3x3(&truth).with_role(FieldRole::Surrogate);

    let cells = sample(&mut rng, rows * cols, buoys).into_vec();
    let locations: Vec<(usize, usize)> = cells.iter().map(|&i| (i / cols, i % cols)).collect();

    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut values = vec![0.0; features * buoys * steps];
    let idx = |f: usize, m: usize, t: usize| (f * buoys + m) * steps + t;
    for (m, &(r, c)) in locations.iter().enumerate() {
        for t in 0..steps {
            let swh = truth.get(r, c, t) as f64;
            let wspd = (2.0 + 3.0 * swh + 0.3 * noise.sample(&mut rng)).max(0.0);
            for (f, name) in names.iter().enumerate() {
                let tf = t as f64;
                let v = match name.as_str() {
                    "WVHT" => (swh + BUOY_NOISE_M * noise.sample(&mut rng)).max(0.0),
                    "WSPD" => wspd,
                    "WDIR" => wrap_degrees(
                        dominant_heading + 20.0 * libm::sin(2.0 * PI * tf / 24.0) + 5.0 * noise.sample(&mut rng),
                    ),
                    "DPD" => 4.0 + 2.0 * swh + 0.3 * noise.sample(&mut rng),
                    "ATMP" => 24.0 + 2.0 * libm::sin(2.0 * PI * tf / 8.0) + 0.2 * noise.sample(&mut rng),
                    "WTMP" => 26.0 + 0.5 * libm::sin(2.0 * PI * tf / 16.0) + 0.1 * noise.sample(&mut rng),
                    "PRES" => 1013.0 - 3.0 * swh + 0.5 * noise.sample(&mut rng),
                    "GST" => 1.3 * wspd + 0.3 * noise.sample(&mut rng),
                    _ => unreachable!("feature pool is fixed"),
                };
                values[idx(f, m, t)] = v;
            }
        }
    }
    let dataset = BuoyDataset::new(
        &spec,
        names,
        locations,
        steps,
        SYNTH_INTERVAL_HOURS,
        values,
        vec![false; features * buoys * steps],
    )?;
    Ok(Synthetic { spec, dataset, truth, surrogate })
}

fn wrap_degrees(x: f64) -> f64 {
    x - 360.0 * libm::floor(x / 360.0)
}

/// Mean over the in-bounds 3x3 neighborhood of every cell, per step.
pub fn box_filter_3x3(field: &GridField) -> GridField {
    let (rows, cols, steps) = (field.rows(), field.cols(), field.steps());
    let mut out = GridField::zeros(rows, cols, steps, field.role());
    for r in 0..rows {
        for c in 0..cols {
            let r0 = r.saturating_sub(1);
            let r1 = (r + 1).min(rows - 1);
            let c0 = c.saturating_sub(1);
            let c1 = (c + 1).min(cols - 1);
            let n = ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64;
            for t in 0..steps {
                let mut s = 0.0f64;
                for rr in r0..=r1 {
                    for cc in c0..=c1 {
                        s += field.get(rr, cc, t) as f64;
                    }
                }
                out.set(r, c, t, (s / n) as f32);
            }
        }
    }
    out
}
