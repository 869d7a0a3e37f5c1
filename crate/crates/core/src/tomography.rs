//! Low-dose tomography data and wavefront extraction on sinograms.
//!
//! Sinograms are handled in the canonical layout (`n × 180`, row `r` is the
//! line `x·θ = r + 0.5 mod n`). Patch classifiers only see centers at least
//! ten pixels from the border, so extraction runs on four views of the layout
//! (row shift 0 or `n/2`, angle roll 0 or 90) that together admit every entry.

use crate::densee::{extract_at, DenseeModel, ExtractOptions, FeatureStack};
use crate::error::{mismatch, Error, Result};
use crate::radon::{
    canonical_layout, canonical_map, dilate_lambda, fbp, inverse_canonical_map, radon, roll_angles, unroll_wavefront,
    Sinogram, FULL_ANGLES,
};
use crate::raster::Image;
use crate::shearlet::{PatchCenter, ShearletConfig, ShearletSystem, PATCH_RADIUS};
use crate::wavefront::{SinogramWavefrontSet, WavefrontSet};

/// Measured data of one image: every `step`-th angle of the full sinogram.
#[derive(Clone, Debug)]
pub struct LowDose {
    pub sinogram: Sinogram,
    pub step: usize,
}

impl LowDose {
    pub fn measure(image: &Image, step: usize) -> Result<Self> {
        if step == 0 || FULL_ANGLES % step != 0 {
            return Err(Error::InvalidConfig(format!("angle step {step} must divide {FULL_ANGLES}")));
        }
        let full = radon(image, image.rows())?;
        Ok(Self {
            sinogram: full.subsample(step)?,
            step,
        })
    }

    /// Angle-interpolated sinogram in the canonical layout.
    pub fn layout(&self) -> Result<Image> {
        let n = self.sinogram.n_s();
        canonical_layout(&self.sinogram.interpolate_full()?, n)
    }

    /// Filtered backprojection from the measured angles only.
    pub fn reconstruct(&self) -> Result<Image> {
        fbp(&self.sinogram, self.sinogram.n_s())
    }
}

/// Shearlet configuration matching canonical layouts of `n`-pixel images.
pub fn layout_config(image_config: &ShearletConfig, n: usize) -> Result<ShearletConfig> {
    image_config.reshaped(n, FULL_ANGLES)
}

/// Training pair for the sinogram domain: low-dose layout and the canonical
/// image of the true wavefront set.
pub fn sinogram_pair(image: &Image, truth: &WavefrontSet, step: usize) -> Result<(Image, SinogramWavefrontSet)> {
    if truth.rows() != image.rows() || truth.cols() != image.cols() {
        return Err(mismatch(format!("{:?}", image.shape()), format!("{}x{}", truth.rows(), truth.cols())));
    }
    Ok((LowDose::measure(image, step)?.layout()?, canonical_map(truth)?))
}

/// Training pair for the image domain: FBP reconstruction and the true set.
pub fn reconstruction_pair(image: &Image, truth: &WavefrontSet, step: usize) -> Result<(Image, WavefrontSet)> {
    Ok((LowDose::measure(image, step)?.reconstruct()?, truth.clone()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct View {
    row_shift: usize,
    roll: usize,
}

impl View {
    fn render(&self, layout: &Image) -> Image {
        let n = layout.rows();
        let shifted = Image::from_fn(n, layout.cols(), |r, c| layout[((r + self.row_shift) % n, c)]);
        roll_angles(&shifted, self.roll)
    }

    /// Layout entry `(row, φ)` seen at view pixel `(r, c)`.
    fn source(&self, r: usize, c: usize, n: usize) -> (usize, usize) {
        let phi = c + self.roll;
        let (rs, phi) = if phi < FULL_ANGLES { (r, phi) } else { (n - 1 - r, phi - FULL_ANGLES) };
        ((rs + self.row_shift) % n, phi)
    }

    fn restore(&self, wf: &SinogramWavefrontSet) -> SinogramWavefrontSet {
        let n = wf.rows();
        let unrolled = unroll_wavefront(wf, self.roll);
        let mut out = WavefrontSet::empty(n, wf.cols());
        for (r, c, l) in unrolled.entries() {
            out.set((r + self.row_shift) % n, c, l);
        }
        out
    }
}

/// Sinogram wavefront set of a canonical layout, evaluated at `columns` only.
///
/// `system` must match the layout shape and the model. Every row of each
/// requested column is classified from the view where it is admissible.
pub fn extract_sinogram_wavefront(
    layout: &Image,
    model: &DenseeModel,
    system: &ShearletSystem,
    columns: &[usize],
    opts: &ExtractOptions,
) -> Result<SinogramWavefrontSet> {
    model.check_system(system)?;
    let n = layout.rows();
    if layout.cols() != FULL_ANGLES {
        return Err(mismatch(format!("{FULL_ANGLES} angle columns"), layout.cols()));
    }
    if n % 2 != 0 || n < 2 * (2 * PATCH_RADIUS + 1) {
        return Err(Error::InvalidConfig(format!("layout needs an even row count of at least 42, got {n}")));
    }
    if let Some(&c) = columns.iter().find(|&&c| c >= FULL_ANGLES) {
        return Err(Error::InvalidConfig(format!("column {c} out of range")));
    }
    let mut wanted = vec![false; FULL_ANGLES];
    columns.iter().for_each(|&c| wanted[c] = true);
    let mut claimed = vec![false; n * FULL_ANGLES];
    let mut out = WavefrontSet::empty(n, FULL_ANGLES);
    for row_shift in [0, n / 2] {
        for roll in [0, FULL_ANGLES / 2] {
            let view = View { row_shift, roll };
            let centers: Vec<PatchCenter> = PatchCenter::all(n, FULL_ANGLES)
                .filter(|c| {
                    let (r, col) = c.pixel();
                    let (row, phi) = view.source(r, col, n);
                    if !wanted[phi] || claimed[row * FULL_ANGLES + phi] {
                        return false;
                    }
                    claimed[row * FULL_ANGLES + phi] = true;
                    true
                })
                .collect();
            if centers.is_empty() {
                continue;
            }
            let stack = FeatureStack::from_image(system, &view.render(layout))?;
            let found = extract_at(&stack, model, &centers, opts)?;
            out.union_in_place(&view.restore(&found))?;
        }
    }
    Ok(out)
}

/// Image wavefront set at angles `columns` recovered from a sinogram set,
/// after widening each entry by one λ bin.
pub fn sinogram_to_image(y: &SinogramWavefrontSet, columns: &[usize]) -> Result<WavefrontSet> {
    Ok(inverse_canonical_map(&dilate_lambda(y, 1))?.restrict_bins(columns))
}
