//! Overlapping temporal patches.
//!
//! Each `(feature, buoy)` series of length `T` is end-padded by repeating its
//! final step `W` times, then cut into `S = floor((T - L) / W) + 2` windows of
//! length `L` starting at `0, W, 2W, ...`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Patches `C` laid out `S x F x M x L`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub patches: Vec<f64>,
    pub count: usize,
    pub features: usize,
    pub buoys: usize,
    pub patch_len: usize,
    pub stride: usize,
}

impl PatchSet {
    pub fn patch(&self, s: usize, f: usize, m: usize) -> &[f64] {
        let off = ((s * self.features + f) * self.buoys + m) * self.patch_len;
        &self.patches[off..off + self.patch_len]
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.count, self.features, self.buoys, self.patch_len]
    }
}

/// `floor((T - L) / W) + 2`, checked against the padding rules.
pub fn patch_count(steps: usize, patch_len: usize, stride: usize) -> Result<usize> {
    check_params(steps, patch_len, stride)?;
    let diff = steps as i64 - patch_len as i64;
    Ok((diff.div_euclid(stride as i64) + 2) as usize)
}

fn check_params(steps: usize, patch_len: usize, stride: usize) -> Result<()> {
    if steps == 0 {
        return Err(Error::Contract("cannot patch an empty series".into()));
    }
    if stride == 0 || patch_len == 0 {
        return Err(Error::Contract(format!("patch length {} and stride {} must be >= 1", patch_len, stride)));
    }
    if patch_len > steps + stride {
        return Err(Error::Contract(format!(
            "patch length {} exceeds padded series length {} + {}",
            patch_len, steps, stride
        )));
    }
    if stride > patch_len {
        return Err(Error::Contract(format!(
            "stride {} exceeds patch length {}: patches would leave gaps",
            stride, patch_len
        )));
    }
    Ok(())
}

/// Cuts an `F x M x T` (feature-major) block into patches.
pub fn make_patches(
    values: &[f64],
    features: usize,
    buoys: usize,
    steps: usize,
    patch_len: usize,
    stride: usize,
) -> Result<PatchSet> {
    if values.len() != features * buoys * steps {
        return Err(Error::Shape {
            op: "make_patches",
            detail: format!("{} values for {}x{}x{}", values.len(), features, buoys, steps),
        });
    }
    let count = patch_count(steps, patch_len, stride)?;
    let mut patches = Vec::with_capacity(count * features * buoys * patch_len);
    for s in 0..count {
        let start = s * stride;
        for f in 0..features {
            for m in 0..buoys {
                let series = &values[(f * buoys + m) * steps..(f * buoys + m + 1) * steps];
                for i in start..start + patch_len {
                    patches.push(series[i.min(steps - 1)]);
                }
            }
        }
    }
    Ok(PatchSet { patches, count, features, buoys, patch_len, stride })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_four_steps_length_sixteen_stride_eight() {
        let series: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let p = make_patches(&series, 1, 1, 24, 16, 8).unwrap();
        assert_eq!(p.count, 3);
        assert_eq!(p.patch(0, 0, 0)[0], 0.0);
        assert_eq!(p.patch(1, 0, 0)[0], 8.0);
        assert_eq!(p.patch(2, 0, 0)[0], 16.0);
        // Steps 24..31 replicate step 23.
        assert!(p.patch(2, 0, 0)[8..].iter().all(|&v| v == 23.0));
    }

    #[test]
    fn window_equal_to_series() {
        assert_eq!(patch_count(10, 10, 10).unwrap(), 2);
    }

    #[test]
    fn oversize_patch_is_rejected() {
        assert!(matches!(patch_count(4, 9, 4), Err(Error::Contract(_))));
        assert!(matches!(patch_count(8, 2, 4), Err(Error::Contract(_))));
    }

    #[test]
    fn layout_is_s_f_m_l() {
        // F=2, M=2, T=4; value encodes (f, m, t).
        let mut v = Vec::new();
        for f in 0..2 {
            for m in 0..2 {
                for t in 0..4 {
                    v.push((f * 100 + m * 10 + t) as f64);
                }
            }
        }
        let p = make_patches(&v, 2, 2, 4, 2, 2).unwrap();
        assert_eq!(p.shape(), [3, 2, 2, 2]);
        assert_eq!(p.patch(1, 1, 0), &[102.0, 103.0]);
        assert_eq!(p.patch(2, 0, 1), &[13.0, 13.0]);
    }
}
