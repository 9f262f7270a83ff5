//! Rectangular lat/lon grid geometry and gridded SWH fields.
//!
//! Row 0 is the northernmost band and column 0 the westernmost band. Cell
//! centers sit on the lattice `lat_north - row * cell_deg`,
//! `lon_west + col * cell_deg`, so a region spanning `n * cell_deg` degrees
//! has `n + 1` cells along that axis. Longitudes are signed degrees east
//! (98°W is `-98.0`).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

const GEOM_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    rows: usize,
    cols: usize,
    lat_north: f64,
    lat_south: f64,
    lon_west: f64,
    lon_east: f64,
    cell_deg: f64,
}

impl GridSpec {
    /// Derives the cell counts from the bounds and checks that the bounds are
    /// a whole number of cells apart.
    pub fn from_bounds(lat_north: f64, lat_south: f64, lon_west: f64, lon_east: f64, cell_deg: f64) -> Result<Self> {
        if !(cell_deg > 0.0) {
            return Err(Error::Config(format!("cell size must be positive, got {}", cell_deg)));
        }
        let rows = span_cells(lat_north - lat_south, cell_deg, "latitude")?;
        let cols = span_cells(lon_east - lon_west, cell_deg, "longitude")?;
        let spec = Self { rows, cols, lat_north, lat_south, lon_west, lon_east, cell_deg };
        spec.validate()?;
        Ok(spec)
    }

    /// A grid of `rows x cols` cells whose north-west cell center is at
    /// (`lat_north`, `lon_west`).
    pub fn from_origin(rows: usize, cols: usize, lat_north: f64, lon_west: f64, cell_deg: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!("grid must have at least one cell, got {}x{}", rows, cols)));
        }
        let spec = Self {
            rows,
            cols,
            lat_north,
            lat_south: lat_north - (rows - 1) as f64 * cell_deg,
            lon_west,
            lon_east: lon_west + (cols - 1) as f64 * cell_deg,
            cell_deg,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 32°N to 18°N, 98°W to 78°W at 0.5° (29 x 41 cells).
    pub fn gulf_of_mexico() -> Self {
        Self::from_bounds(32.0, 18.0, -98.0, -78.0, 0.5).expect("static region is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Config(format!("grid must have at least one cell, got {}x{}", self.rows, self.cols)));
        }
        if !(self.cell_deg > 0.0) {
            return Err(Error::Config(format!("cell size must be positive, got {}", self.cell_deg)));
        }
        let k = (self.lat_north - self.lat_south) / self.cell_deg + 1.0;
        let j = (self.lon_east - self.lon_west) / self.cell_deg + 1.0;
        if (k - self.rows as f64).abs() > GEOM_TOL || (j - self.cols as f64).abs() > GEOM_TOL {
            return Err(Error::Config(format!(
                "bounds give {:.6} x {:.6} cells but grid declares {} x {}",
                k, j, self.rows, self.cols
            )));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn lat_north(&self) -> f64 {
        self.lat_north
    }

    pub fn lat_south(&self) -> f64 {
        self.lat_south
    }

    pub fn lon_west(&self) -> f64 {
        self.lon_west
    }

    pub fn lon_east(&self) -> f64 {
        self.lon_east
    }

    pub fn cell_deg(&self) -> f64 {
        self.cell_deg
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (self.lat_north - row as f64 * self.cell_deg, self.lon_west + col as f64 * self.cell_deg)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row < self.rows && col < self.cols
    }

    /// Nearest cell center to a coordinate. Exact half-way ties go to the
    /// lower row/column index.
    pub fn cell_of(&self, lat: f64, lon: f64) -> Result<(usize, usize)> {
        if !(lat <= self.lat_north + GEOM_TOL) {
            return Err(Error::Region(format!("latitude {} is north of lat_north {}", lat, self.lat_north)));
        }
        if !(lat >= self.lat_south - GEOM_TOL) {
            return Err(Error::Region(format!("latitude {} is south of lat_south {}", lat, self.lat_south)));
        }
        if !(lon >= self.lon_west - GEOM_TOL) {
            return Err(Error::Region(format!("longitude {} is west of lon_west {}", lon, self.lon_west)));
        }
        if !(lon <= self.lon_east + GEOM_TOL) {
            return Err(Error::Region(format!("longitude {} is east of lon_east {}", lon, self.lon_east)));
        }
        let row = nearest_index((self.lat_north - lat) / self.cell_deg, self.rows);
        let col = nearest_index((lon - self.lon_west) / self.cell_deg, self.cols);
        Ok((row, col))
    }
}

fn span_cells(span: f64, cell: f64, axis: &str) -> Result<usize> {
    let n = span / cell;
    let rounded = libm::round(n);
    if span < 0.0 || (n - rounded).abs() > GEOM_TOL {
        return Err(Error::Config(format!(
            "{} span {} is not a non-negative whole number of {}-degree cells",
            axis, span, cell
        )));
    }
    Ok(rounded as usize + 1)
}

fn nearest_index(pos: f64, extent: usize) -> usize {
    // ceil(pos - 0.5) rounds to nearest with ties toward zero.
    let idx = libm::ceil(pos - 0.5 - 1e-12).max(0.0) as usize;
    idx.min(extent - 1)
}

/// What a [`GridField`] holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FieldRole {
    /// Numerical-model output used as the physical regularization target.
    Surrogate,
    /// Model estimate.
    Estimate,
    /// Ground truth (synthetic runs only).
    Truth,
}

impl FieldRole {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldRole::Surrogate => "surrogate",
            FieldRole::Estimate => "estimate",
            FieldRole::Truth => "truth",
        }
    }
}

impl fmt::Display for FieldRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FieldRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "surrogate" => Ok(FieldRole::Surrogate),
            "estimate" => Ok(FieldRole::Estimate),
            "truth" => Ok(FieldRole::Truth),
            other => Err(Error::Config(format!("unknown field role '{}'", other))),
        }
    }
}

/// SWH in meters on a `rows x cols x steps` lattice, row-major (row, col, step).
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    rows: usize,
    cols: usize,
    steps: usize,
    values: Vec<f32>,
    role: FieldRole,
}

impl GridField {
    pub fn new(rows: usize, cols: usize, steps: usize, values: Vec<f32>, role: FieldRole) -> Result<Self> {
        if values.len() != rows * cols * steps {
            return Err(Error::Shape {
                op: "grid_field",
                detail: format!("{}x{}x{} needs {} values, got {}", rows, cols, steps, rows * cols * steps, values.len()),
            });
        }
        Ok(Self { rows, cols, steps, values, role })
    }

    pub fn zeros(rows: usize, cols: usize, steps: usize, role: FieldRole) -> Self {
        Self { rows, cols, steps, values: vec![0.0; rows * cols * steps], role }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn role(&self) -> FieldRole {
        self.role
    }

    pub fn with_role(mut self, role: FieldRole) -> Self {
        self.role = role;
        self
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, step: usize) -> usize {
        (row * self.cols + col) * self.steps + step
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, step: usize) -> f32 {
        self.values[self.index(row, col, step)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, step: usize, v: f32) {
        let i = self.index(row, col, step);
        self.values[i] = v;
    }

    /// Checks the field against a grid and a step count.
    pub fn check_against(&self, spec: &GridSpec, steps: usize) -> Result<()> {
        if self.rows != spec.rows() || self.cols != spec.cols() || self.steps != steps {
            return Err(Error::Shape {
                op: "grid_field",
                detail: format!(
                    "field is {}x{}x{}, expected {}x{}x{}",
                    self.rows,
                    self.cols,
                    self.steps,
                    spec.rows(),
                    spec.cols(),
                    steps
                ),
            });
        }
        Ok(())
    }

    /// Sub-field covering `start..start + len` steps.
    pub fn time_slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.steps {
            return Err(Error::Contract(format!(
                "steps {}..{} outside field of {} steps",
                start,
                start + len,
                self.steps
            )));
        }
        let mut values = Vec::with_capacity(self.rows * self.cols * len);
        for cell in 0..self.rows * self.cols {
            let base = cell * self.steps + start;
            values.extend_from_slice(&self.values[base..base + len]);
        }
        Ok(Self { rows: self.rows, cols: self.cols, steps: len, values, role: self.role })
    }

    /// Row-major `rows x cols` slice at one step.
    pub fn frame(&self, step: usize) -> Vec<f32> {
        (0..self.rows * self.cols).map(|cell| self.values[cell * self.steps + step]).collect()
    }
}
