//! Multivariate buoy observations on a regular time lattice.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Name of the observed significant-wave-height feature.
pub const SWH_FEATURE: &str = "WVHT";

/// Observations `X` of `F` features at `M` buoys over `T` steps, stored
/// feature-major: index `(f * M + m) * T + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct BuoyDataset {
    features: Vec<String>,
    swh_feature: usize,
    locations: Vec<(usize, usize)>,
    steps: usize,
    interval_hours: f64,
    values: Vec<f64>,
    missing: Vec<bool>,
}

/// Dimensions and labels a prompt needs to describe a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub features: Vec<String>,
    pub buoys: usize,
    pub steps: usize,
    pub interval_hours: f64,
}

impl BuoyDataset {
    /// Checked constructor. `values` and `missing` are `F x M x T`
    /// feature-major; missing entries must already be filled with finite
    /// stand-in values.
    pub fn new(
        spec: &GridSpec,
        features: Vec<String>,
        locations: Vec<(usize, usize)>,
        steps: usize,
        interval_hours: f64,
        values: Vec<f64>,
        missing: Vec<bool>,
    ) -> Result<Self> {
        let f = features.len();
        let m = locations.len();
        if values.len() != f * m * steps || missing.len() != values.len() {
            return Err(Error::Shape {
                op: "buoy_dataset",
                detail: format!(
                    "{} features x {} buoys x {} steps needs {} values, got {} values and {} mask entries",
                    f,
                    m,
                    steps,
                    f * m * steps,
                    values.len(),
                    missing.len()
                ),
            });
        }
        if !(interval_hours > 0.0) {
            return Err(Error::Config(format!("interval must be positive, got {} h", interval_hours)));
        }
        for (i, &(u, v)) in locations.iter().enumerate() {
            if !spec.contains(u, v) {
                return Err(Error::Range(format!(
                    "buoy {} at cell ({}, {}) outside {}x{} grid",
                    i,
                    u,
                    v,
                    spec.rows(),
                    spec.cols()
                )));
            }
        }
        let swh: Vec<usize> = features.iter().enumerate().filter(|(_, n)| n.as_str() == SWH_FEATURE).map(|(i, _)| i).collect();
        if swh.len() != 1 {
            return Err(Error::Config(format!(
                "exactly one '{}' feature required, found {}",
                SWH_FEATURE,
                swh.len()
            )));
        }
        let swh_feature = swh[0];
        for mm in 0..m {
            for t in 0..steps {
                let i = (swh_feature * m + mm) * steps + t;
                if !missing[i] && !(values[i] >= 0.0) {
                    return Err(Error::Contract(format!(
                        "negative or non-finite wave height {} at buoy {}, step {}",
                        values[i], mm, t
                    )));
                }
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite observation at flat index {}", i)));
        }
        Ok(Self { features, swh_feature, locations, steps, interval_hours, values, missing })
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn num_buoys(&self) -> usize {
        self.locations.len()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn interval_hours(&self) -> f64 {
        self.interval_hours
    }

    pub fn swh_feature(&self) -> usize {
        self.swh_feature
    }

    pub fn locations(&self) -> &[(usize, usize)] {
        &self.locations
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing
    }

    #[inline]
    pub fn index(&self, feature: usize, buoy: usize, step: usize) -> usize {
        (feature * self.locations.len() + buoy) * self.steps + step
    }

    #[inline]
    pub fn value(&self, feature: usize, buoy: usize, step: usize) -> f64 {
        self.values[self.index(feature, buoy, step)]
    }

    #[inline]
    pub fn is_missing(&self, feature: usize, buoy: usize, step: usize) -> bool {
        self.missing[self.index(feature, buoy, step)]
    }

    /// Observed SWH at a buoy, `None` when the observation is missing.
    pub fn swh(&self, buoy: usize, step: usize) -> Option<f64> {
        let i = self.index(self.swh_feature, buoy, step);
        (!self.missing[i]).then_some(self.values[i])
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            features: self.features.clone(),
            buoys: self.num_buoys(),
            steps: self.steps,
            interval_hours: self.interval_hours,
        }
    }

    /// Copy restricted to a step range.
    pub fn time_slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start > range.end || range.end > self.steps {
            return Err(Error::Contract(format!("steps {:?} outside dataset of {} steps", range, self.steps)));
        }
        let len = range.end - range.start;
        let mut values = Vec::with_capacity(self.features.len() * self.num_buoys() * len);
        let mut missing = Vec::with_capacity(values.capacity());
        for f in 0..self.features.len() {
            for m in 0..self.num_buoys() {
                let base = self.index(f, m, range.start);
                values.extend_from_slice(&self.values[base..base + len]);
                missing.extend_from_slice(&self.missing[base..base + len]);
            }
        }
        Ok(Self {
            features: self.features.clone(),
            swh_feature: self.swh_feature,
            locations: self.locations.clone(),
            steps: len,
            interval_hours: self.interval_hours,
            values,
            missing,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn spec() -> GridSpec {
        GridSpec::from_origin(4, 4, 30.0, -90.0, 0.5).unwrap()
    }

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| String::from(*s)).collect()
    }

    #[test]
    fn rejects_buoy_outside_grid() {
        let e = BuoyDataset::new(&spec(), names(&["WVHT"]), vec![(4, 0)], 1, 3.0, vec![1.0], vec![false]);
        assert!(matches!(e, Err(Error::Range(_))));
    }

    #[test]
    fn requires_single_swh_feature() {
        let e = BuoyDataset::new(&spec(), names(&["WSPD"]), vec![(0, 0)], 1, 3.0, vec![1.0], vec![false]);
        assert!(matches!(e, Err(Error::Config(_))));
    }

    #[test]
    fn negative_swh_rejected_unless_missing() {
        let e = BuoyDataset::new(&spec(), names(&["WVHT"]), vec![(0, 0)], 1, 3.0, vec![-1.0], vec![false]);
        assert!(e.is_err());
        let ok = BuoyDataset::new(&spec(), names(&["WVHT"]), vec![(0, 0)], 1, 3.0, vec![-1.0], vec![true]);
        assert!(ok.is_ok());
    }

    #[test]
    fn time_slice_preserves_layout() {
        let values: Vec<f64> = (0..2 * 2 * 5).map(|v| v as f64).collect();
        let d = BuoyDataset::new(
            &spec(),
            names(&["WSPD", "WVHT"]),
            vec![(0, 0), (1, 2)],
            5,
            3.0,
            values,
            vec![false; 20],
        )
        .unwrap();
        let s = d.time_slice(2..4).unwrap();
        assert_eq!(s.steps(), 2);
        assert_eq!(s.value(1, 1, 0), d.value(1, 1, 2));
        assert_eq!(s.swh(0, 1), d.swh(0, 3));
    }
}
