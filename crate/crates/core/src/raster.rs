//! Row-major real rasters.
//!
//! Pixel `(i, j)` is row `i`, column `j`. Geometry throughout the crate uses
//! the same order: a direction angle `θ` denotes the vector `(cos θ, sin θ)`
//! expressed in `(i, j)` coordinates, and pixel `(i, j)` sits at the point
//! `(i, j)`.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn square(m: usize) -> Self {
        Self::zeros(m, m)
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(mismatch(rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Circular shift: `out[(i + di) mod rows, (j + dj) mod cols] = self[i, j]`.
    pub fn circshift(&self, di: isize, dj: isize) -> Self {
        let (r, c) = (self.rows as isize, self.cols as isize);
        let mut out = Self::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let ti = (i as isize + di).rem_euclid(r) as usize;
            for j in 0..self.cols {
                let tj = (j as isize + dj).rem_euclid(c) as usize;
                out.data[ti * self.cols + tj] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Bilinear sample at fractional `(x, y)`; zero outside the raster.
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let i0 = x.floor();
        let j0 = y.floor();
        let fx = x - i0;
        let fy = y - j0;
        let (i0, j0) = (i0 as isize, j0 as isize);
        let at = |i: isize, j: isize| -> f64 {
            if i < 0 || j < 0 || i >= self.rows as isize || j >= self.cols as isize {
                0.0
            } else {
                self.data[i as usize * self.cols + j as usize]
            }
        };
        (1.0 - fx) * (1.0 - fy) * at(i0, j0)
            + fx * (1.0 - fy) * at(i0 + 1, j0)
            + (1.0 - fx) * fy * at(i0, j0 + 1)
            + fx * fy * at(i0 + 1, j0 + 1)
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| a * v).collect(),
        }
    }

    /// `a * self + b * other`; shapes must agree.
    pub fn combine(&self, a: f64, other: &Image, b: f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(mismatch(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }
}

impl Index<(usize, usize)> for Image {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Image {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circshift_moves_pixels_forward() {
        let img = Image::from_fn(4, 5, |i, j| (i * 5 + j) as f64);
        let s = img.circshift(1, -2);
        assert_eq!(s[(1, 3)], img[(0, 0)]);
        assert_eq!(s[(0, 0)], img[(3, 2)]);
        assert_eq!(s.circshift(-1, 2), img);
    }

    #[test]
    fn bilinear_hits_grid_values_and_vanishes_outside() {
        let img = Image::from_fn(3, 3, |i, j| (i + 10 * j) as f64);
        assert_eq!(img.bilinear(1.0, 2.0), 21.0);
        assert!((img.bilinear(0.5, 0.5) - 5.5).abs() < 1e-12);
        assert_eq!(img.bilinear(-5.0, 1.0), 0.0);
    }
}
