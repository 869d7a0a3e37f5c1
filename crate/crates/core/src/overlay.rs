//! PNG rendering of wavefront sets over their image.
//!
//! Each populated pixel is colored by its mean orientation, using hue `2θ`
//! so that `θ` and `θ + 180` share a color. Corner pixels are drawn white.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::densee::detect_corners;
use crate::error::{mismatch, Error, Result};
use crate::raster::Image;
use crate::wavefront::{WavefrontSet, ORIENTATION_BINS};

/// RGB raster, row-major, three bytes per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<u8>,
}

impl Rgb {
    pub fn pixel(&self, i: usize, j: usize) -> [u8; 3] {
        let k = 3 * (i * self.cols + j);
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }

    fn put(&mut self, i: usize, j: usize, c: [u8; 3]) {
        let k = 3 * (i * self.cols + j);
        self.data[k..k + 3].copy_from_slice(&c);
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let w = BufWriter::new(File::create(path)?);
        let mut enc = png::Encoder::new(w, self.cols as u32, self.rows as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&self.data).map_err(png_err)?;
        writer.finish().map_err(png_err)
    }
}

fn png_err(e: png::EncodingError) -> Error {
    Error::Format(format!("png: {e}"))
}

/// Fully saturated color for hue `h` in `[0, 1)`.
pub fn hue_color(h: f64) -> [u8; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let x = 1.0 - (h6 % 2.0 - 1.0).abs();
    let (r, g, b) = match h6 as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [(r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8]
}

/// Circular mean orientation of `bins` in degrees, `None` if they cancel.
pub fn mean_orientation(bins: &[usize]) -> Option<f64> {
    let (mut c, mut s) = (0.0, 0.0);
    for &b in bins {
        let a = (2.0 * b as f64).to_radians();
        c += a.cos();
        s += a.sin();
    }
    if c.hypot(s) < 1e-9 {
        return None;
    }
    Some((s.atan2(c).to_degrees() / 2.0).rem_euclid(ORIENTATION_BINS as f64))
}

fn gray(image: &Image) -> Rgb {
    let (lo, hi) = (image.min(), image.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data = image
        .data()
        .iter()
        .flat_map(|&v| {
            let g = (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8;
            [g, g, g]
        })
        .collect();
    Rgb {
        rows: image.rows(),
        cols: image.cols(),
        data,
    }
}

/// Grayscale `image` with `wf` painted on top. An empty set leaves the image gray.
pub fn render(image: &Image, wf: &WavefrontSet, mark_corners: bool) -> Result<Rgb> {
    if image.rows() != wf.rows() || image.cols() != wf.cols() {
        return Err(mismatch(format!("{:?}", image.shape()), format!("{}x{}", wf.rows(), wf.cols())));
    }
    let mut out = gray(image);
    for i in 0..wf.rows() {
        for j in 0..wf.cols() {
            let bins = wf.bins_at(i, j);
            if bins.is_empty() {
                continue;
            }
            let color = match mean_orientation(&bins) {
                Some(t) => hue_color(2.0 * t / 360.0),
                None => [128, 128, 128],
            };
            out.put(i, j, color);
        }
    }
    if mark_corners {
        for (i, j) in detect_corners(wf) {
            out.put(i, j, [255, 255, 255]);
        }
    }
    Ok(out)
}

/// Color wheel of side `size`: the point at angle `θ` from the center has the
/// color of orientation `θ mod 180`.
pub fn legend(size: usize) -> Rgb {
    let mut out = Rgb {
        rows: size,
        cols: size,
        data: vec![255; 3 * size * size],
    };
    let c = (size as f64 - 1.0) / 2.0;
    for i in 0..size {
        for j in 0..size {
            let (x, y) = (i as f64 - c, j as f64 - c);
            let r = x.hypot(y);
            if r <= c && r >= c * 0.4 {
                let t = y.atan2(x).to_degrees().rem_euclid(180.0);
                out.put(i, j, hue_color(2.0 * t / 360.0));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn opposite_orientations_share_a_color() {
        assert_eq!(hue_color(0.0), [255, 0, 0]);
        assert_eq!(hue_color(2.0 * 90.0 / 360.0), [0, 255, 255]);
        assert_eq!(hue_color(1.0), hue_color(0.0));
    }

    #[test]
    fn mean_orientation_wraps() {
        let m = mean_orientation(&[178, 2]).unwrap();
        assert!(m < 1e-9 || (180.0 - m) < 1e-9);
        assert!(mean_orientation(&[0, 90]).is_none());
        assert!((mean_orientation(&[40, 50]).unwrap() - 45.0).abs() < 1e-9);
    }

    #[test]
    fn empty_set_is_grayscale() {
        let img = Image::from_fn(5, 5, |i, j| (i * 5 + j) as f64);
        let rgb = render(&img, &WavefrontSet::empty(5, 5), true).unwrap();
        assert!(rgb.data.chunks(3).all(|p| p[0] == p[1] && p[1] == p[2]));
        assert_eq!(rgb.pixel(0, 0), [0, 0, 0]);
        assert_eq!(rgb.pixel(4, 4), [255, 255, 255]);
    }

    #[test]
    fn corners_are_white() {
        let img = Image::zeros(4, 4);
        let mut wf = WavefrontSet::empty(4, 4);
        wf.set(1, 1, 0);
        wf.set(1, 1, 90);
        wf.set(2, 2, 0);
        let rgb = render(&img, &wf, true).unwrap();
        assert_eq!(rgb.pixel(1, 1), [255, 255, 255]);
        assert_eq!(rgb.pixel(2, 2), [255, 0, 0]);
        assert!(render(&Image::zeros(3, 3), &wf, false).is_err());
    }
}
