//! Binary `rows × cols × 180` orientation tensors.
//!
//! Bin `θ` stands for the direction `(cos θ°, sin θ°)` in `(row, col)`
//! coordinates; opposite directions share a bin.

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Result};

pub const ORIENTATION_BINS: usize = 180;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WavefrontSet {
    rows: usize,
    cols: usize,
    /// `(i, j, θ)` at `(i * cols + j) * 180 + θ`; entries are 0 or 1.
    data: Vec<u8>,
}

/// Wavefront set of a sinogram, indexed `(s, φ, λ)`.
pub type SinogramWavefrontSet = WavefrontSet;

impl WavefrontSet {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols * ORIENTATION_BINS],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != rows * cols * ORIENTATION_BINS {
            return Err(mismatch(rows * cols * ORIENTATION_BINS, data.len()));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(crate::Error::Format("wavefront mask is not binary".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, ORIENTATION_BINS)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    fn offset(&self, i: usize, j: usize, bin: usize) -> usize {
        debug_assert!(i < self.rows && j < self.cols && bin < ORIENTATION_BINS);
        (i * self.cols + j) * ORIENTATION_BINS + bin
    }

    pub fn get(&self, i: usize, j: usize, bin: usize) -> bool {
        self.data[self.offset(i, j, bin)] != 0
    }

    pub fn set(&mut self, i: usize, j: usize, bin: usize) {
        let k = self.offset(i, j, bin);
        self.data[k] = 1;
    }

    pub fn clear(&mut self, i: usize, j: usize, bin: usize) {
        let k = self.offset(i, j, bin);
        self.data[k] = 0;
    }

    pub fn set_all_bins(&mut self, i: usize, j: usize) {
        let k = self.offset(i, j, 0);
        self.data[k..k + ORIENTATION_BINS].fill(1);
    }

    pub fn bins(&self, i: usize, j: usize) -> &[u8] {
        let k = self.offset(i, j, 0);
        &self.data[k..k + ORIENTATION_BINS]
    }

    /// Populated bins at pixel `(i, j)`, ascending.
    pub fn bins_at(&self, i: usize, j: usize) -> Vec<usize> {
        self.bins(i, j)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(b, _)| b)
            .collect()
    }

    pub fn any_at(&self, i: usize, j: usize) -> bool {
        self.bins(i, j).iter().any(|&v| v != 0)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// All set entries `(i, j, θ)` in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.data.iter().enumerate().filter(|(_, &v)| v != 0).map(move |(k, _)| {
            let bin = k % ORIENTATION_BINS;
            let p = k / ORIENTATION_BINS;
            (p / self.cols, p % self.cols, bin)
        })
    }

    /// Elementwise OR.
    pub fn union(&self, other: &WavefrontSet) -> Result<WavefrontSet> {
        self.check_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a | b).collect();
        Ok(WavefrontSet {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn union_in_place(&mut self, other: &WavefrontSet) -> Result<()> {
        self.check_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
        Ok(())
    }

    /// Keep only the listed bins.
    pub fn restrict_bins(&self, bins: &[usize]) -> WavefrontSet {
        let mut keep = [false; ORIENTATION_BINS];
        for &b in bins {
            keep[b % ORIENTATION_BINS] = true;
        }
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(k, &v)| if keep[k % ORIENTATION_BINS] { v } else { 0 })
            .collect();
        WavefrontSet {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// True when every entry of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &WavefrontSet) -> bool {
        self.shape() == other.shape()
            && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    pub fn check_shape(&self, other: &WavefrontSet) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(mismatch(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }
}

/// Orientation bin of an angle in degrees, identifying opposite directions.
pub fn angle_to_bin(angle_deg: f64) -> usize {
    (angle_deg.round() as i64).rem_euclid(ORIENTATION_BINS as i64) as usize
}

/// Distance between two bins on the circle of orientations.
pub fn bin_distance(a: usize, b: usize) -> usize {
    let d = (a as i64 - b as i64).rem_euclid(ORIENTATION_BINS as i64) as usize;
    d.min(ORIENTATION_BINS - d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles_fold_modulo_180() {
        assert_eq!(angle_to_bin(0.0), 0);
        assert_eq!(angle_to_bin(180.0), 0);
        assert_eq!(angle_to_bin(-1.2), 179);
        assert_eq!(angle_to_bin(269.6), 90);
        assert_eq!(bin_distance(175, 3), 8);
        assert_eq!(bin_distance(0, 90), 90);
    }

    #[test]
    fn entries_round_trip_through_set() {
        let mut wf = WavefrontSet::empty(4, 5);
        wf.set(1, 2, 33);
        wf.set(3, 4, 179);
        let got: Vec<_> = wf.entries().collect();
        assert_eq!(got, vec![(1, 2, 33), (3, 4, 179)]);
        assert_eq!(wf.count(), 2);
        assert_eq!(wf.restrict_bins(&[33]).count(), 1);
    }

    #[test]
    fn from_vec_rejects_non_binary() {
        let mut data = vec![0u8; 2 * 2 * 180];
        data[7] = 2;
        assert!(WavefrontSet::from_vec(2, 2, data).is_err());
    }
}
