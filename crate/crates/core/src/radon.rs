//! Parallel-beam Radon transform, filtered backprojection and the digital
//! canonical relation between image and sinogram wavefront sets.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::raster::Image;
use crate::wavefront::{SinogramWavefrontSet, WavefrontSet, ORIENTATION_BINS};

/// Number of angle bins of a full-dose sinogram.
pub const FULL_ANGLES: usize = 180;

const MARCH_STEP: f64 = 0.5;
const SNAP: f64 = 1e-9;

/// Line integrals `g(s, φ)`; rows are offsets, columns angles.
///
/// Offsets sit on the centered grid `s_k = k - (n_s - 1) / 2`, measured from
/// the image center `((M - 1) / 2, (M - 1) / 2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sinogram {
    values: Image,
    angles_deg: Vec<f64>,
}

impl Sinogram {
    pub fn new(values: Image, angles_deg: Vec<f64>) -> Result<Self> {
        if values.cols() != angles_deg.len() {
            return Err(mismatch(
                format!("{} angle columns", angles_deg.len()),
                values.cols(),
            ));
        }
        Ok(Self { values, angles_deg })
    }

    pub fn values(&self) -> &Image {
        &self.values
    }

    pub fn angles_deg(&self) -> &[f64] {
        &self.angles_deg
    }

    pub fn n_s(&self) -> usize {
        self.values.rows()
    }

    pub fn n_angles(&self) -> usize {
        self.angles_deg.len()
    }

    pub fn offset(&self, k: usize) -> f64 {
        k as f64 - (self.n_s() as f64 - 1.0) / 2.0
    }

    /// Linear interpolation in `s` for angle column `a`; zero outside the grid.
    pub fn sample(&self, s: f64, a: usize) -> f64 {
        let x = s + (self.n_s() as f64 - 1.0) / 2.0;
        let k0 = x.floor();
        let t = x - k0;
        let k0 = k0 as isize;
        let at = |k: isize| {
            if k < 0 || k >= self.n_s() as isize {
                0.0
            } else {
                self.values[(k as usize, a)]
            }
        };
        (1.0 - t) * at(k0) + t * at(k0 + 1)
    }

    /// Keep every `step`-th angle column, starting at column 0.
    pub fn subsample(&self, step: usize) -> Result<Sinogram> {
        if step == 0 {
            return Err(Error::InvalidConfig("angle step must be positive".into()));
        }
        let keep: Vec<usize> = (0..self.n_angles()).step_by(step).collect();
        let values = Image::from_fn(self.n_s(), keep.len(), |k, a| self.values[(k, keep[a])]);
        Sinogram::new(values, keep.iter().map(|&a| self.angles_deg[a]).collect())
    }

    /// Resample onto the full `0..180` degree grid by linear interpolation
    /// in angle, using `g(s, φ + 180) = g(-s, φ)` across the wrap.
    ///
    /// Angles must be ascending within `[0, 180)`.
    pub fn interpolate_full(&self) -> Result<Sinogram> {
        let n = self.n_angles();
        if n == 0 {
            return Err(Error::Empty("sinogram has no angles"));
        }
        let angles = &self.angles_deg;
        if angles.windows(2).any(|w| w[1] <= w[0]) || angles[0] < 0.0 || angles[n - 1] >= 180.0 {
            return Err(Error::InvalidConfig("angles must ascend within [0, 180)".into()));
        }
        let n_s = self.n_s();
        let mut values = Image::zeros(n_s, FULL_ANGLES);
        for phi in 0..FULL_ANGLES {
            let p = phi as f64;
            // Bracketing measured columns, possibly wrapping past 180.
            let hi = angles.iter().position(|&a| a >= p);
            let (lo_idx, lo_angle, lo_flip, hi_idx, hi_angle, hi_flip) = match hi {
                Some(h) if angles[h] == p => (h, p, false, h, p, false),
                Some(0) => (n - 1, angles[n - 1] - 180.0, true, 0, angles[0], false),
                Some(h) => (h - 1, angles[h - 1], false, h, angles[h], false),
                None => (n - 1, angles[n - 1], false, 0, angles[0] + 180.0, true),
            };
            let w = if hi_angle > lo_angle {
                (p - lo_angle) / (hi_angle - lo_angle)
            } else {
                0.0
            };
            for k in 0..n_s {
                let pick = |idx: usize, flip: bool| {
                    let row = if flip { n_s - 1 - k } else { k };
                    self.values[(row, idx)]
                };
                values[(k, phi)] = (1.0 - w) * pick(lo_idx, lo_flip) + w * pick(hi_idx, hi_flip);
            }
        }
        Sinogram::new(values, (0..FULL_ANGLES).map(|a| a as f64).collect())
    }
}

/// Integer angle grid `0, step, 2·step, … < 180`.
pub fn angle_grid(step: usize) -> Vec<f64> {
    (0..FULL_ANGLES).step_by(step.max(1)).map(|a| a as f64).collect()
}

/// Radon transform on the full 180-angle grid with `n_s` offsets.
pub fn radon(image: &Image, n_s: usize) -> Result<Sinogram> {
    radon_at(image, n_s, &angle_grid(1))
}

/// Radon transform at the given angles (degrees).
pub fn radon_at(image: &Image, n_s: usize, angles_deg: &[f64]) -> Result<Sinogram> {
    if !image.is_square() {
        return Err(mismatch("square image", format!("{:?}", image.shape())));
    }
    let m = image.rows();
    let c = (m as f64 - 1.0) / 2.0;
    let half_len = m as f64 / std::f64::consts::SQRT_2 + 1.0;
    let steps = (half_len / MARCH_STEP).ceil() as isize;
    let mut values = Image::zeros(n_s, angles_deg.len());
    for (a, &phi) in angles_deg.iter().enumerate() {
        let (sin, cos) = phi.to_radians().sin_cos();
        for k in 0..n_s {
            let s = k as f64 - (n_s as f64 - 1.0) / 2.0;
            let mut acc = 0.0;
            for t in -steps..=steps {
                let t = t as f64 * MARCH_STEP;
                acc += image.bilinear(c + s * cos - t * sin, c + s * sin + t * cos);
            }
            values[(k, a)] = acc * MARCH_STEP;
        }
    }
    Sinogram::new(values, angles_deg.to_vec())
}

/// Ram-Lak filter in frequency, apodized by a Hann window, for padded length `p`.
fn ramp_filter(p: usize) -> Vec<f64> {
    let mut h = vec![Complex64::default(); p];
    h[0] = Complex64::new(0.25, 0.0);
    for n in (1..p / 2).step_by(2) {
        let v = -1.0 / (PI * PI * (n * n) as f64);
        h[n] = Complex64::new(v, 0.0);
        h[p - n] = Complex64::new(v, 0.0);
    }
    FftPlanner::new().plan_fft_forward(p).process(&mut h);
    (0..p)
        .map(|k| {
            let f = crate::fft::signed_frequency(k, p) / p as f64;
            h[k].re * (0.5 + 0.5 * (2.0 * PI * f).cos())
        })
        .collect()
}

/// Filtered backprojection onto an `m × m` raster.
pub fn fbp(sino: &Sinogram, m: usize) -> Result<Image> {
    let n_s = sino.n_s();
    if n_s == 0 || sino.n_angles() == 0 {
        return Err(Error::Empty("sinogram"));
    }
    if n_s < m {
        return Err(mismatch(format!("at least {m} offsets"), n_s));
    }
    let p = (2 * n_s).next_power_of_two();
    let filter = ramp_filter(p);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(p);
    let inv = planner.plan_fft_inverse(p);

    let mut filtered = Image::zeros(n_s, sino.n_angles());
    let mut buf = vec![Complex64::default(); p];
    for a in 0..sino.n_angles() {
        buf.fill(Complex64::default());
        for k in 0..n_s {
            buf[k] = Complex64::new(sino.values[(k, a)], 0.0);
        }
        fwd.process(&mut buf);
        for (b, &f) in buf.iter_mut().zip(&filter) {
            *b *= f;
        }
        inv.process(&mut buf);
        for k in 0..n_s {
            filtered[(k, a)] = buf[k].re / p as f64;
        }
    }
    let filtered = Sinogram::new(filtered, sino.angles_deg.clone())?;

    let c = (m as f64 - 1.0) / 2.0;
    let scale = PI / sino.n_angles() as f64;
    let trig: Vec<(f64, f64)> = sino.angles_deg.iter().map(|a| a.to_radians().sin_cos()).collect();
    Ok(Image::from_fn(m, m, |i, j| {
        let (x, y) = (i as f64 - c, j as f64 - c);
        let total: f64 = trig
            .iter()
            .enumerate()
            .map(|(a, &(sin, cos))| filtered.sample(x * cos + y * sin, a))
            .sum();
        total * scale
    }))
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r
    } else {
        v
    }
}

fn offset_bin(i: usize, j: usize, cos: f64, sin: f64, n: usize) -> usize {
    (snap(i as f64 * cos + j as f64 * sin).floor() as i64).rem_euclid(n as i64) as usize
}

fn lambda_raw(i: usize, j: usize, cos: f64, sin: f64, n: usize) -> f64 {
    let x = (i as f64 * sin - j as f64 * cos) / n as f64;
    snap(x.atan().to_degrees())
}

fn fold(v: f64) -> usize {
    (v as i64).rem_euclid(ORIENTATION_BINS as i64) as usize
}

/// Sinogram coordinates `(s, φ, λ)` of image entry `(i, j, θ)` on an `n`-pixel frame.
pub fn canonical_entry(i: usize, j: usize, theta: usize, n: usize) -> (usize, usize, usize) {
    let (sin, cos) = (theta as f64).to_radians().sin_cos();
    let s = offset_bin(i, j, cos, sin, n);
    let lambda = fold(lambda_raw(i, j, cos, sin, n).floor());
    (s, theta, lambda)
}

/// Digital canonical map of an `n × n × 180` wavefront set.
pub fn canonical_map(x: &WavefrontSet) -> Result<SinogramWavefrontSet> {
    let n = x.rows();
    if x.cols() != n {
        return Err(mismatch("square wavefront set", format!("{}x{}", x.rows(), x.cols())));
    }
    let mut y = WavefrontSet::empty(n, FULL_ANGLES);
    for (i, j, theta) in x.entries() {
        let (s, phi, lambda) = canonical_entry(i, j, theta, n);
        y.set(s, phi, lambda);
    }
    Ok(y)
}

/// Inverse digital canonical map of an `n × 180 × 180` sinogram wavefront set.
pub fn inverse_canonical_map(y: &SinogramWavefrontSet) -> Result<WavefrontSet> {
    let n = y.rows();
    if y.cols() != FULL_ANGLES {
        return Err(mismatch(format!("{FULL_ANGLES} angle columns"), y.cols()));
    }
    let mut x = WavefrontSet::empty(n, n);
    for theta in 0..FULL_ANGLES {
        let populated = (0..n).any(|s| y.any_at(s, theta));
        if !populated {
            continue;
        }
        let (sin, cos) = (theta as f64).to_radians().sin_cos();
        for i in 0..n {
            for j in 0..n {
                let s = offset_bin(i, j, cos, sin, n);
                let lambda = fold(lambda_raw(i, j, cos, sin, n).ceil());
                if y.get(s, theta, lambda) {
                    x.set(i, j, theta);
                }
            }
        }
    }
    Ok(x)
}

/// Pixels `(i, j)` that the inverse map assigns to sinogram entry `(s, φ, λ)`.
pub fn canonical_preimage(s: usize, phi: usize, lambda: usize, n: usize) -> Vec<(usize, usize)> {
    let (sin, cos) = (phi as f64).to_radians().sin_cos();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if offset_bin(i, j, cos, sin, n) == s
                && fold(lambda_raw(i, j, cos, sin, n).ceil()) == lambda
            {
                out.push((i, j));
            }
        }
    }
    out
}

/// Widen every sinogram entry by `±radius` bins in `λ`.
///
/// One λ bin is finer than the per-pixel step of the λ formula, so a literal
/// `ican(can(X))` can come back empty; dilating by one bin first guarantees
/// that every original entry is recovered.
pub fn dilate_lambda(y: &SinogramWavefrontSet, radius: usize) -> SinogramWavefrontSet {
    let mut out = y.clone();
    for (s, phi, lambda) in y.entries() {
        for d in 1..=radius {
            out.set(s, phi, (lambda + d) % ORIENTATION_BINS);
            out.set(s, phi, (lambda + ORIENTATION_BINS - d % ORIENTATION_BINS) % ORIENTATION_BINS);
        }
    }
    out
}

/// Resample a centered full-dose sinogram of an `n × n` image so that row `r`
/// holds the line `x·θ = r + 0.5 (mod n)` in uncentered pixel coordinates.
///
/// In this layout the canonical map sends image entries onto the rows and
/// columns where their singularities appear. Lines are taken with the
/// representative closest to the image center, so the layout is faithful for
/// images supported in the inscribed disk.
pub fn canonical_layout(sino: &Sinogram, n: usize) -> Result<Image> {
    if sino.n_angles() != FULL_ANGLES {
        return Err(mismatch(format!("{FULL_ANGLES} angles"), sino.n_angles()));
    }
    let c = (n as f64 - 1.0) / 2.0;
    let half = n as f64 / 2.0;
    Ok(Image::from_fn(n, FULL_ANGLES, |r, a| {
        let (sin, cos) = sino.angles_deg[a].to_radians().sin_cos();
        let shift = c * (cos + sin);
        let u = r as f64 + 0.5;
        // Representative u + k n with u + k n - shift in [-n/2, n/2).
        let k = ((shift - half - u) / n as f64).ceil();
        let s = u + k * n as f64 - shift;
        sino.sample(s, a)
    }))
}

/// Continue a canonical-layout sinogram by `shift` columns across the
/// `φ = 180°` wrap, where `(r, φ + 180)` is the line `(n - 1 - r, φ)`.
pub fn roll_angles(layout: &Image, shift: usize) -> Image {
    let (n, cols) = layout.shape();
    Image::from_fn(n, cols, |r, c| {
        let phi = c + shift % cols;
        if phi < cols {
            layout[(r, phi)]
        } else {
            layout[(n - 1 - r, phi - cols)]
        }
    })
}

/// Map a sinogram wavefront set found on [`roll_angles`] output back to the
/// original columns.
pub fn unroll_wavefront(rolled: &SinogramWavefrontSet, shift: usize) -> SinogramWavefrontSet {
    let (n, cols) = (rolled.rows(), rolled.cols());
    let mut out = WavefrontSet::empty(n, cols);
    for (r, c, lambda) in rolled.entries() {
        let phi = c + shift % cols;
        if phi < cols {
            out.set(r, phi, lambda);
        } else {
            // Reversing s negates the slope, and floor(-y) = -floor(y) - 1.
            out.set(n - 1 - r, phi - cols, ORIENTATION_BINS - 1 - lambda);
        }
    }
    out
}
