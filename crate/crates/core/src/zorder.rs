//! Z-order (Morton) bit codes for grid cells.
//!
//! A cell `(u, v)` on a grid whose larger side needs `n` bits is encoded as
//! `A = 2n` bits, most significant level first, with the row bit before the
//! column bit at every level.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Bits per coordinate: `ceil(log2(max(rows, cols)))`.
pub fn level_bits(rows: usize, cols: usize) -> usize {
    let n = rows.max(cols).max(1);
    (usize::BITS - (n - 1).leading_zeros()) as usize
}

/// Code length `A = 2 * ceil(log2(max(rows, cols)))`.
pub fn bit_depth(rows: usize, cols: usize) -> usize {
    2 * level_bits(rows, cols)
}

/// Spreads the low 32 bits of `x` onto the even bit positions.
fn spread(x: u64) -> u64 {
    let mut x = x & 0xffff_ffff;
    x = (x | (x << 16)) & 0x0000_ffff_0000_ffff;
    x = (x | (x << 8)) & 0x00ff_00ff_00ff_00ff;
    x = (x | (x << 4)) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | (x << 2)) & 0x3333_3333_3333_3333;
    x = (x | (x << 1)) & 0x5555_5555_5555_5555;
    x
}

fn compact(x: u64) -> u64 {
    let mut x = x & 0x5555_5555_5555_5555;
    x = (x | (x >> 1)) & 0x3333_3333_3333_3333;
    x = (x | (x >> 2)) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | (x >> 4)) & 0x00ff_00ff_00ff_00ff;
    x = (x | (x >> 8)) & 0x0000_ffff_0000_ffff;
    x = (x | (x >> 16)) & 0x0000_0000_ffff_ffff;
    x
}

/// Morton value with the row bit in the higher position of each pair.
pub fn morton(u: u32, v: u32) -> u64 {
    (spread(u as u64) << 1) | spread(v as u64)
}

pub fn morton_decode(code: u64) -> (u32, u32) {
    (compact(code >> 1) as u32, compact(code) as u32)
}

/// Per-buoy Z-order codes `Z` (`M x A`), stored as 0/1 bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ZOrderCode {
    bits: Vec<u8>,
    bit_depth: usize,
}

impl ZOrderCode {
    pub fn bit_depth(&self) -> usize {
        self.bit_depth
    }

    pub fn len(&self) -> usize {
        if self.bit_depth == 0 {
            0
        } else {
            self.bits.len() / self.bit_depth
        }
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.bits[i * self.bit_depth..(i + 1) * self.bit_depth]
    }

    /// Recovers `(u, v)` of row `i`.
    pub fn decode(&self, i: usize) -> (usize, usize) {
        let mut code = 0u64;
        for &b in self.row(i) {
            code = (code << 1) | b as u64;
        }
        let (u, v) = morton_decode(code);
        (u as usize, v as usize)
    }

    /// `M x A` tensor of 0/1 values.
    pub fn to_tensor<T: Real>(&self, buoys: usize) -> Tensor<T> {
        let data = self.bits.iter().map(|&b| if b == 1 { T::one() } else { T::zero() }).collect();
        Tensor::new(alloc::vec![buoys, self.bit_depth], data).expect("bits are M x A")
    }
}

pub fn zorder_encode(locations: &[(usize, usize)], rows: usize, cols: usize) -> Result<ZOrderCode> {
    let levels = level_bits(rows, cols);
    let depth = 2 * levels;
    let mut bits = Vec::with_capacity(locations.len() * depth);
    for (i, &(u, v)) in locations.iter().enumerate() {
        if u >= rows || v >= cols {
            return Err(Error::Range(format!("buoy {} at ({}, {}) outside {}x{} grid", i, u, v, rows, cols)));
        }
        let code = morton(u as u32, v as u32);
        for b in (0..depth).rev() {
            bits.push(((code >> b) & 1) as u8);
        }
    }
    Ok(ZOrderCode { bits, bit_depth: depth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_examples() {
        assert_eq!(bit_depth(4, 4), 4);
        assert_eq!(bit_depth(29, 41), 12);
        assert_eq!(bit_depth(16, 16), 8);
        assert_eq!(bit_depth(17, 3), 10);
        assert_eq!(bit_depth(1, 1), 0);
    }

    #[test]
    fn four_by_four_examples() {
        let z = zorder_encode(&[(0, 0), (3, 3), (1, 2)], 4, 4).unwrap();
        assert_eq!(z.row(0), &[0, 0, 0, 0]);
        assert_eq!(z.row(1), &[1, 1, 1, 1]);
        assert_eq!(z.row(2), &[0, 1, 1, 0]);
        assert_eq!(morton(1, 2), 6);
        assert_eq!(z.decode(2), (1, 2));
    }

    #[test]
    fn out_of_grid_is_rejected() {
        assert!(matches!(zorder_encode(&[(4, 0)], 4, 4), Err(Error::Range(_))));
    }

    #[test]
    fn tensor_is_binary() {
        let z = zorder_encode(&[(1, 2), (2, 1)], 4, 4).unwrap();
        let t: Tensor<f32> = z.to_tensor(2);
        assert_eq!(t.shape(), &[2, 4]);
        assert_eq!(t.data(), &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    }
}
