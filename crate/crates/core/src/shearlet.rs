//! Digital cone-adapted shearlet filter bank and transform.
//!
//! Filters are band-limited and live directly on the DFT grid. Each
//! directional filter is the product of a radial Meyer band window and an
//! angular Meyer window in the slope coordinate of its cone; the squared
//! responses of all channels sum to one at every frequency, so the transform
//! is a Parseval frame. Boundary handling is periodic.
//!
//! Channel order: channel 0 is the low-pass, then scales ascending; within a
//! scale the horizontal cone (`ι = 1`) precedes the vertical cone (`ι = -1`),
//! and shears ascend within a cone. The two diagonal shears are shared by both
//! cones, so the horizontal cone keeps `k ∈ [-k_j + 1, k_j]` and the vertical
//! cone keeps `k ∈ [-k_j, k_j - 1]`, giving `4 k_j` channels per scale.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{mismatch, Error, Result};
use crate::fft::{signed_frequency, Fft2};
use crate::raster::Image;

/// Side length of a coefficient patch.
pub const PATCH_SIZE: usize = 21;
/// Distance from a patch center to its edge.
pub const PATCH_RADIUS: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShearletConfig {
    pub rows: usize,
    pub cols: usize,
    /// Scale indices `J`, strictly ascending.
    pub scales: Vec<u32>,
    /// Shear half-widths `k_j`, one per scale; `K_j = [-k_j, k_j]`.
    pub shear_half_widths: Vec<usize>,
}

impl ShearletConfig {
    /// Square `m × m` system with `J = {1, 2, 3, 4}` and `|K_j| = 2^⌈j/2 + 1⌉ + 1`.
    pub fn standard(m: usize) -> Result<Self> {
        let scales = vec![1, 2, 3, 4];
        let half_widths = scales.iter().map(|&j| default_half_width(j)).collect();
        Self::new(m, scales, half_widths)
    }

    pub fn new(m: usize, scales: Vec<u32>, shear_half_widths: Vec<usize>) -> Result<Self> {
        Self::with_shape(m, m, scales, shear_half_widths)
    }

    /// Rectangular raster; used for sinograms laid out as offset × angle.
    pub fn with_shape(
        rows: usize,
        cols: usize,
        scales: Vec<u32>,
        shear_half_widths: Vec<usize>,
    ) -> Result<Self> {
        let cfg = Self {
            rows,
            cols,
            scales,
            shear_half_widths,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Same scales and shears on a different raster shape.
    pub fn reshaped(&self, rows: usize, cols: usize) -> Result<Self> {
        Self::with_shape(rows, cols, self.scales.clone(), self.shear_half_widths.clone())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("rows", self.rows), ("cols", self.cols)] {
            if n < 32 || n % 2 != 0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} = {n}; side lengths must be even and at least 32"
                )));
            }
        }
        if self.scales.is_empty() {
            return Err(Error::InvalidConfig("empty scale set".into()));
        }
        if self.scales.len() != self.shear_half_widths.len() {
            return Err(Error::InvalidConfig(
                "one shear half-width is required per scale".into(),
            ));
        }
        if self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("scales must be strictly ascending".into()));
        }
        if self.shear_half_widths.contains(&0) {
            return Err(Error::InvalidConfig("shear half-widths must be positive".into()));
        }
        Ok(())
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// `2 Σ_j (|K_j| - 1) + 1`.
    pub fn channel_count(&self) -> usize {
        1 + self.shear_half_widths.iter().map(|k| 4 * k).sum::<usize>()
    }

    /// Stable hash of the configuration and filter construction.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"meyer-cone-parseval/v1");
        h.update(serde_json::to_vec(self).expect("config serializes"));
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `k_j = 2^(⌈j/2 + 1⌉ - 1)`.
pub fn default_half_width(j: u32) -> usize {
    let exponent = (j as f64 / 2.0 + 1.0).ceil() as u32;
    1 << (exponent - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    /// `ι = 1`, frequencies with `|ξ₂| ≤ |ξ₁|`.
    Horizontal,
    /// `ι = -1`.
    Vertical,
}

impl Cone {
    pub fn iota(self) -> i8 {
        match self {
            Cone::Horizontal => 1,
            Cone::Vertical => -1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Lowpass,
    Shearlet {
        scale: u32,
        shear: i32,
        half_width: usize,
        cone: Cone,
    },
}

impl Channel {
    /// Continuous shear `s = k / k_j`; `None` for the low-pass.
    pub fn shear_parameter(&self) -> Option<f64> {
        match *self {
            Channel::Lowpass => None,
            Channel::Shearlet {
                shear, half_width, ..
            } => Some(shear as f64 / half_width as f64),
        }
    }

    /// Unit normal direction the channel responds to.
    pub fn direction(&self) -> Option<[f64; 2]> {
        match *self {
            Channel::Lowpass => None,
            Channel::Shearlet { cone, .. } => {
                Some(shear_to_direction(self.shear_parameter()?, cone.iota()))
            }
        }
    }

    /// Direction as an orientation in degrees, in `[0, 180)`.
    pub fn orientation_deg(&self) -> Option<f64> {
        self.direction()
            .map(|[a, b]| b.atan2(a).to_degrees().rem_euclid(180.0))
    }
}

/// Map a shear and cone to the direction `λ(s, ι)` on the unit circle.
///
/// Any `iota` other than `-1` selects the horizontal cone.
pub fn shear_to_direction(s: f64, iota: i8) -> [f64; 2] {
    let norm = (s * s + 1.0).sqrt();
    if iota == -1 {
        [s / norm, 1.0 / norm]
    } else {
        [1.0 / norm, s / norm]
    }
}

/// Smooth step `v` with `v(x) + v(1 - x) = 1`, `v = 0` below 0 and `1` above 1.
fn meyer_v(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x.powi(4) * (35.0 - 84.0 * x + 70.0 * x * x - 20.0 * x.powi(3))
}

/// Low-pass profile: 1 below `a`, 0 above `2a`.
fn lowpass_profile(rho: f64, a: f64) -> f64 {
    if rho <= a {
        1.0
    } else if rho >= 2.0 * a {
        0.0
    } else {
        (FRAC_PI_2 * meyer_v((rho - a) / a)).cos()
    }
}

/// Bump on `[-1, 1]` whose integer translates are a partition of unity in square.
fn angular_bump(x: f64) -> f64 {
    let x = x.abs();
    if x >= 1.0 {
        0.0
    } else {
        (FRAC_PI_2 * meyer_v(x)).cos()
    }
}

/// Slope coordinate on the circle of orientations, period 4.
fn slope_coordinate(f1: f64, f2: f64) -> f64 {
    if f2.abs() <= f1.abs() {
        1.0 + f2 / f1
    } else {
        3.0 - f1 / f2
    }
}

fn circular_distance(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

pub struct ShearletSystem {
    config: ShearletConfig,
    channels: Vec<Channel>,
    /// Real frequency responses, one `rows × cols` raster per channel.
    filters: Vec<Vec<f64>>,
    fingerprint: String,
    fft: Fft2,
}

impl fmt::Debug for ShearletSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ShearletSystem")
            .field("config", &self.config)
            .field("channels", &self.channels.len())
            .finish()
    }
}

impl ShearletSystem {
    pub fn build(config: ShearletConfig) -> Result<Self> {
        config.validate()?;
        let channels = channel_list(&config);
        let (rows, cols) = (config.rows, config.cols);
        let n_scales = config.scales.len();

        // Cumulative low-pass profiles; band b is sqrt(L_b^2 - L_{b-1}^2).
        let thresholds: Vec<f64> = (0..n_scales)
            .map(|b| 2f64.powi(b as i32 - n_scales as i32 - 1))
            .collect();

        let raw = |c: usize, k1: usize, k2: usize| -> f64 {
            let f1 = signed_frequency(k1, rows) / rows as f64;
            let f2 = signed_frequency(k2, cols) / cols as f64;
            let rho = 2.0 * f1.abs().max(f2.abs());
            let cumulative = |b: usize| -> f64 {
                if b >= n_scales {
                    1.0
                } else {
                    lowpass_profile(rho, thresholds[b])
                }
            };
            match channels[c] {
                Channel::Lowpass => cumulative(0),
                Channel::Shearlet {
                    scale,
                    shear,
                    half_width,
                    cone,
                } => {
                    if f1 == 0.0 && f2 == 0.0 {
                        return 0.0;
                    }
                    let band = config.scales.iter().position(|&s| s == scale).unwrap() + 1;
                    let hi = cumulative(band);
                    let lo = cumulative(band - 1);
                    let radial = (hi * hi - lo * lo).max(0.0).sqrt();
                    if radial == 0.0 {
                        return 0.0;
                    }
                    let h = 1.0 / half_width as f64;
                    let center = match cone {
                        Cone::Horizontal => 1.0 + shear as f64 * h,
                        Cone::Vertical => 3.0 - shear as f64 * h,
                    };
                    let u = slope_coordinate(f1, f2);
                    radial * angular_bump(circular_distance(u, center, 4.0) / h)
                }
            }
        };

        let mut filters = Vec::with_capacity(channels.len());
        for c in 0..channels.len() {
            let mut filter = vec![0.0; rows * cols];
            for k1 in 0..rows {
                let m1 = (rows - k1) % rows;
                for k2 in 0..cols {
                    let m2 = (cols - k2) % cols;
                    // Averaging with the mirrored frequency keeps the response
                    // even on the Nyquist lines, so space-domain filters are real.
                    let a = raw(c, k1, k2);
                    let b = raw(c, m1, m2);
                    filter[k1 * cols + k2] = (0.5 * (a * a + b * b)).sqrt();
                }
            }
            filters.push(filter);
        }

        let fingerprint = config.fingerprint();
        Ok(Self {
            fft: Fft2::new(rows, cols),
            config,
            channels,
            filters,
            fingerprint,
        })
    }

    pub fn config(&self) -> &ShearletConfig {
        &self.config
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Frequency response of channel `c`, row-major over DFT indices.
    pub fn frequency_response(&self, c: usize) -> &[f64] {
        &self.filters[c]
    }

    /// Space-domain filter raster of channel `c`.
    pub fn space_filter(&self, c: usize) -> Image {
        let spectrum = self.filters[c]
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        let data = self.fft.inverse_real(spectrum);
        Image::from_vec(self.config.rows, self.config.cols, data).expect("shape")
    }

    /// Digital shearlet transform.
    ///
    /// Channel `c` at pixel `m` is the inner product of the image with the
    /// filter circularly shifted to `m`, i.e. a circular cross-correlation.
    /// An impulse at the origin therefore returns the filter reflected
    /// through the origin: `out[m] = ψ(-m)`.
    pub fn transform(&self, image: &Image) -> Result<ShearletCoefficients> {
        let (rows, cols) = (self.config.rows, self.config.cols);
        if image.shape() != (rows, cols) {
            return Err(mismatch(
                format!("{rows}x{cols} image"),
                format!("{}x{}", image.rows(), image.cols()),
            ));
        }
        let spectrum = self.fft.forward_real(image.data());
        let mut data = Vec::with_capacity(rows * cols * self.channels.len());
        for filter in &self.filters {
            let product = spectrum
                .iter()
                .zip(filter)
                .map(|(s, &f)| s * f)
                .collect();
            data.extend(self.fft.inverse_real(product));
        }
        Ok(ShearletCoefficients {
            rows,
            cols,
            channels: self.channels.len(),
            data,
            system_id: self.fingerprint.clone(),
        })
    }
}

fn channel_list(config: &ShearletConfig) -> Vec<Channel> {
    let mut channels = vec![Channel::Lowpass];
    for (&scale, &k) in config.scales.iter().zip(&config.shear_half_widths) {
        let k = k as i32;
        for cone in [Cone::Horizontal, Cone::Vertical] {
            let range = match cone {
                Cone::Horizontal => -k + 1..=k,
                Cone::Vertical => -k..=k - 1,
            };
            for shear in range {
                channels.push(Channel::Shearlet {
                    scale,
                    shear,
                    half_width: k as usize,
                    cone,
                });
            }
        }
    }
    channels
}

/// Channel-major coefficient stack: value `(c, i, j)` at `c * rows * cols + i * cols + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShearletCoefficients {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f64>,
    system_id: String,
}

impl ShearletCoefficients {
    pub fn from_parts(
        rows: usize,
        cols: usize,
        channels: usize,
        data: Vec<f64>,
        system_id: String,
    ) -> Result<Self> {
        if data.len() != rows * cols * channels {
            return Err(mismatch(rows * cols * channels, data.len()));
        }
        Ok(Self {
            rows,
            cols,
            channels,
            data,
            system_id,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn system_id(&self) -> &str {
        &self.system_id
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.rows + i) * self.cols + j]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_image(&self, c: usize) -> Image {
        Image::from_vec(self.rows, self.cols, self.channel(c).to_vec()).expect("shape")
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// True when `center` (1-based) admits a full 21 × 21 window.
    pub fn admits_center(&self, center: PatchCenter) -> bool {
        center_in_range(center.row, self.rows) && center_in_range(center.col, self.cols)
    }

    /// Copy the window around `center` into `out`, channel-major (`c, di, dj`).
    pub fn write_patch<T: From<f32>>(&self, center: PatchCenter, out: &mut [T]) -> Result<()> {
        if !self.admits_center(center) {
            return Err(Error::CenterOutOfRange(center.row, center.col));
        }
        let need = self.channels * PATCH_SIZE * PATCH_SIZE;
        if out.len() != need {
            return Err(mismatch(need, out.len()));
        }
        let (r0, c0) = center.window_origin();
        let mut k = 0;
        for c in 0..self.channels {
            let plane = self.channel(c);
            for di in 0..PATCH_SIZE {
                let row = &plane[(r0 + di) * self.cols + c0..(r0 + di) * self.cols + c0 + PATCH_SIZE];
                for &v in row {
                    out[k] = T::from(v as f32);
                    k += 1;
                }
            }
        }
        Ok(())
    }

    /// Double-precision variant of [`write_patch`](Self::write_patch).
    pub fn write_patch_f64(&self, center: PatchCenter, out: &mut [f64]) -> Result<()> {
        if !self.admits_center(center) {
            return Err(Error::CenterOutOfRange(center.row, center.col));
        }
        let need = self.channels * PATCH_SIZE * PATCH_SIZE;
        if out.len() != need {
            return Err(mismatch(need, out.len()));
        }
        let (r0, c0) = center.window_origin();
        let mut k = 0;
        for c in 0..self.channels {
            let plane = self.channel(c);
            for di in 0..PATCH_SIZE {
                let start = (r0 + di) * self.cols + c0;
                out[k..k + PATCH_SIZE].copy_from_slice(&plane[start..start + PATCH_SIZE]);
                k += PATCH_SIZE;
            }
        }
        Ok(())
    }
}

fn center_in_range(m: usize, n: usize) -> bool {
    m > PATCH_RADIUS && m + PATCH_RADIUS <= n
}

/// Patch center in 1-based pixel coordinates, admissible in `[11, n - 10]`.
///
/// The window spans 1-based rows `row - 10 ..= row + 10`, i.e. 0-based rows
/// `row - 11 ..= row - 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchCenter {
    pub row: usize,
    pub col: usize,
}

impl PatchCenter {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Center located at 0-based pixel `(i, j)`.
    pub fn from_pixel(i: usize, j: usize) -> Self {
        Self { row: i + 1, col: j + 1 }
    }

    /// 0-based pixel of the center.
    pub fn pixel(&self) -> (usize, usize) {
        (self.row - 1, self.col - 1)
    }

    /// 0-based index of the window's top-left entry.
    pub fn window_origin(&self) -> (usize, usize) {
        (self.row - 1 - PATCH_RADIUS, self.col - 1 - PATCH_RADIUS)
    }

    /// All admissible centers of a `rows × cols` raster, row-major.
    pub fn all(rows: usize, cols: usize) -> impl Iterator<Item = PatchCenter> {
        let r = PATCH_RADIUS + 1..=rows.saturating_sub(PATCH_RADIUS);
        r.flat_map(move |row| {
            (PATCH_RADIUS + 1..=cols.saturating_sub(PATCH_RADIUS)).map(move |col| PatchCenter { row, col })
        })
    }
}

/// A `21 × 21 × C` window of shearlet coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientPatch {
    channels: usize,
    /// Channel-major: `(c, di, dj)`.
    values: Vec<f64>,
    center: PatchCenter,
}

impl CoefficientPatch {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn center(&self) -> PatchCenter {
        self.center
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Entry at window row `di`, column `dj`, channel `c`.
    pub fn get(&self, di: usize, dj: usize, c: usize) -> f64 {
        self.values[(c * PATCH_SIZE + di) * PATCH_SIZE + dj]
    }
}

/// Restrict a coefficient stack to the window around `center`.
pub fn extract_patch(coeffs: &ShearletCoefficients, center: PatchCenter) -> Result<CoefficientPatch> {
    let mut values = vec![0.0; coeffs.channels * PATCH_SIZE * PATCH_SIZE];
    coeffs.write_patch_f64(center, &mut values)?;
    Ok(CoefficientPatch {
        channels: coeffs.channels,
        values,
        center,
    })
}
