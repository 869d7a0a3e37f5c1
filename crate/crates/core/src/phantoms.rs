//! Random ellipse/parallelogram phantoms with analytic wavefront sets.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{signed_frequency, Fft2};
use crate::raster::Image;
use crate::wavefront::{angle_to_bin, WavefrontSet};

const MAX_ATTEMPTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Ellipse {
        center: [f64; 2],
        semi_axes: [f64; 2],
        /// Angle of the first semi-axis, degrees.
        rotation_deg: f64,
    },
    /// Vertices in boundary order; `v2 = v1 + v3 - v0`.
    Parallelogram { vertices: [[f64; 2]; 4] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    #[serde(flatten)]
    pub geometry: Geometry,
    pub contrast: f64,
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn rotate(p: [f64; 2], c: [f64; 2], deg: f64) -> [f64; 2] {
    let (s, co) = deg.to_radians().sin_cos();
    let d = sub(p, c);
    [c[0] + co * d[0] - s * d[1], c[1] + s * d[0] + co * d[1]]
}

impl ShapeSpec {
    pub fn ellipse(center: [f64; 2], semi_axes: [f64; 2], rotation_deg: f64, contrast: f64) -> Self {
        Self {
            geometry: Geometry::Ellipse {
                center,
                semi_axes,
                rotation_deg,
            },
            contrast,
        }
    }

    /// Parallelogram spanned by `edge_a` and `edge_b` from `origin`.
    pub fn parallelogram(origin: [f64; 2], edge_a: [f64; 2], edge_b: [f64; 2], contrast: f64) -> Self {
        let v1 = [origin[0] + edge_a[0], origin[1] + edge_a[1]];
        let v3 = [origin[0] + edge_b[0], origin[1] + edge_b[1]];
        let v2 = [v1[0] + edge_b[0], v1[1] + edge_b[1]];
        Self {
            geometry: Geometry::Parallelogram {
                vertices: [origin, v1, v2, v3],
            },
            contrast,
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        match &self.geometry {
            Geometry::Ellipse {
                center,
                semi_axes,
                rotation_deg,
            } => {
                let (s, c) = rotation_deg.to_radians().sin_cos();
                let d = sub(p, *center);
                let u = c * d[0] + s * d[1];
                let w = -s * d[0] + c * d[1];
                (u / semi_axes[0]).powi(2) + (w / semi_axes[1]).powi(2) <= 1.0
            }
            Geometry::Parallelogram { vertices } => {
                let e1 = sub(vertices[1], vertices[0]);
                let e2 = sub(vertices[3], vertices[0]);
                let d = sub(p, vertices[0]);
                let det = cross(e1, e2);
                let alpha = cross(d, e2) / det;
                let beta = cross(e1, d) / det;
                (0.0..=1.0).contains(&alpha) && (0.0..=1.0).contains(&beta)
            }
        }
    }

    /// Axis-aligned bounds `[(i_min, i_max), (j_min, j_max)]`.
    pub fn bounds(&self) -> [(f64, f64); 2] {
        match &self.geometry {
            Geometry::Ellipse {
                center,
                semi_axes,
                rotation_deg,
            } => {
                let (s, c) = rotation_deg.to_radians().sin_cos();
                let (a, b) = (semi_axes[0], semi_axes[1]);
                let hi = (a * a * c * c + b * b * s * s).sqrt();
                let hj = (a * a * s * s + b * b * c * c).sqrt();
                [(center[0] - hi, center[0] + hi), (center[1] - hj, center[1] + hj)]
            }
            Geometry::Parallelogram { vertices } => {
                let mut out = [(f64::INFINITY, f64::NEG_INFINITY); 2];
                for v in vertices {
                    for axis in 0..2 {
                        out[axis].0 = out[axis].0.min(v[axis]);
                        out[axis].1 = out[axis].1.max(v[axis]);
                    }
                }
                out
            }
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if !self.contrast.is_finite() {
            return Err(Error::InvalidConfig("contrast must be finite".into()));
        }
        match &self.geometry {
            Geometry::Ellipse { semi_axes, .. } => {
                if semi_axes.iter().any(|&a| a <= 1.0) {
                    return Err(Error::InvalidConfig("ellipse semi-axes must exceed 1 pixel".into()));
                }
            }
            Geometry::Parallelogram { vertices } => {
                let e1 = sub(vertices[1], vertices[0]);
                let e2 = sub(vertices[3], vertices[0]);
                let closing = sub(sub(vertices[2], vertices[1]), e2);
                if closing.iter().any(|v| v.abs() > 1e-9) {
                    return Err(Error::InvalidConfig("vertices do not form a parallelogram".into()));
                }
                if cross(e1, e2).abs() <= 1e-9 {
                    return Err(Error::InvalidConfig("degenerate parallelogram".into()));
                }
            }
        }
        let [(i0, i1), (j0, j1)] = self.bounds();
        let limit = (m - 1) as f64;
        if i0 < 0.0 || j0 < 0.0 || i1 > limit || j1 > limit {
            return Err(Error::InvalidConfig("shape leaves the frame".into()));
        }
        Ok(())
    }

    /// Copy rotated by `deg` about its own center.
    pub fn rotated(&self, deg: f64) -> Self {
        let geometry = match &self.geometry {
            Geometry::Ellipse {
                center,
                semi_axes,
                rotation_deg,
            } => Geometry::Ellipse {
                center: *center,
                semi_axes: *semi_axes,
                rotation_deg: rotation_deg + deg,
            },
            Geometry::Parallelogram { vertices } => {
                let c = [
                    vertices.iter().map(|v| v[0]).sum::<f64>() / 4.0,
                    vertices.iter().map(|v| v[1]).sum::<f64>() / 4.0,
                ];
                Geometry::Parallelogram {
                    vertices: vertices.map(|v| rotate(v, c, deg)),
                }
            }
        };
        Self {
            geometry,
            contrast: self.contrast,
        }
    }

    pub fn vertices(&self) -> Option<[[f64; 2]; 4]> {
        match &self.geometry {
            Geometry::Parallelogram { vertices } => Some(*vertices),
            Geometry::Ellipse { .. } => None,
        }
    }

    /// Outward normal angle in degrees at the boundary point nearest to `p`.
    pub fn normal_angle_deg(&self, p: [f64; 2]) -> f64 {
        match &self.geometry {
            Geometry::Ellipse {
                center,
                semi_axes,
                rotation_deg,
            } => ellipse_normal(*center, *semi_axes, *rotation_deg, p),
            Geometry::Parallelogram { vertices } => parallelogram_normal(vertices, p),
        }
    }
}

fn ellipse_normal(center: [f64; 2], axes: [f64; 2], rotation_deg: f64, p: [f64; 2]) -> f64 {
    let rot = rotation_deg.to_radians();
    let (s, c) = rot.sin_cos();
    let d = sub(p, center);
    let u = c * d[0] + s * d[1];
    let w = -s * d[0] + c * d[1];
    let (a, b) = (axes[0], axes[1]);
    let dist = |t: f64| (u - a * t.cos()).powi(2) + (w - b * t.sin()).powi(2);

    const COARSE: usize = 720;
    let step = 2.0 * PI / COARSE as f64;
    let mut best = 0.0;
    let mut best_d = f64::INFINITY;
    for k in 0..COARSE {
        let t = k as f64 * step;
        let v = dist(t);
        if v < best_d {
            best_d = v;
            best = t;
        }
    }
    // Golden-section refinement inside the bracketing cells.
    let (mut lo, mut hi) = (best - step, best + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let x1 = hi - g * (hi - lo);
        let x2 = lo + g * (hi - lo);
        if dist(x1) < dist(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    let t = 0.5 * (lo + hi);
    let nu = t.cos() / a;
    let nw = t.sin() / b;
    let ni = c * nu - s * nw;
    let nj = s * nu + c * nw;
    nj.atan2(ni).to_degrees()
}

fn parallelogram_normal(vertices: &[[f64; 2]; 4], p: [f64; 2]) -> f64 {
    let centroid = [
        vertices.iter().map(|v| v[0]).sum::<f64>() / 4.0,
        vertices.iter().map(|v| v[1]).sum::<f64>() / 4.0,
    ];
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..4 {
        let a = vertices[k];
        let b = vertices[(k + 1) % 4];
        let e = sub(b, a);
        let t = (dot(sub(p, a), e) / dot(e, e)).clamp(0.0, 1.0);
        let q = [a[0] + t * e[0], a[1] + t * e[1]];
        let d = dot(sub(p, q), sub(p, q));
        if d < best.0 {
            let mut n = [e[1], -e[0]];
            if dot(n, sub(a, centroid)) < 0.0 {
                n = [-n[0], -n[1]];
            }
            best = (d, n[1].atan2(n[0]).to_degrees());
        }
    }
    best.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub m: usize,
    pub seed: u64,
    pub shapes: Vec<ShapeSpec>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() {
            return Err(Error::Empty("phantom has no shapes"));
        }
        for s in &self.shapes {
            s.validate(self.m)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeMix {
    Mixed,
    EllipsesOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    /// Anywhere in the frame (one-pixel margin).
    Frame,
    /// Inside the disk inscribed in the frame, as tomography requires.
    InscribedDisk,
}

/// Distribution of random phantoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSampler {
    pub m: usize,
    pub shape_count: (usize, usize),
    pub contrast: (f64, f64),
    pub mix: ShapeMix,
    pub support: Support,
    pub semi_axis: (f64, f64),
    pub edge_length: (f64, f64),
}

impl PhantomSampler {
    pub fn new(m: usize) -> Self {
        let m_f = m as f64;
        Self {
            m,
            shape_count: (3, 8),
            contrast: (0.2, 1.0),
            mix: ShapeMix::Mixed,
            support: Support::Frame,
            semi_axis: (3.0, (m_f / 5.0).max(4.0)),
            edge_length: (6.0, (m_f / 3.0).max(8.0)),
        }
    }

    /// Ellipses inside the inscribed disk.
    pub fn tomographic(m: usize) -> Self {
        Self {
            mix: ShapeMix::EllipsesOnly,
            support: Support::InscribedDisk,
            ..Self::new(m)
        }
    }

    pub fn with_shape_count(mut self, lo: usize, hi: usize) -> Self {
        self.shape_count = (lo, hi);
        self
    }

    pub fn sample(&self, seed: u64) -> Result<PhantomSpec> {
        if self.m < 64 {
            return Err(Error::InvalidConfig(format!("phantom side {} < 64", self.m)));
        }
        let (lo, hi) = self.shape_count;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidConfig(format!("bad shape count range ({lo}, {hi})")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = rng.gen_range(lo..=hi);
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            shapes.push(self.sample_shape(&mut rng)?);
        }
        Ok(PhantomSpec {
            m: self.m,
            seed,
            shapes,
        })
    }

    fn sample_shape(&self, rng: &mut ChaCha8Rng) -> Result<ShapeSpec> {
        let m = self.m as f64;
        for _ in 0..MAX_ATTEMPTS {
            let contrast = rng.gen_range(self.contrast.0..=self.contrast.1);
            let center = [rng.gen_range(0.0..m), rng.gen_range(0.0..m)];
            let ellipse = match self.mix {
                ShapeMix::EllipsesOnly => true,
                ShapeMix::Mixed => rng.gen_bool(0.5),
            };
            let shape = if ellipse {
                let a = rng.gen_range(self.semi_axis.0..self.semi_axis.1);
                let b = rng.gen_range(self.semi_axis.0..self.semi_axis.1);
                ShapeSpec::ellipse(center, [a, b], rng.gen_range(0.0..180.0), contrast)
            } else {
                let la = rng.gen_range(self.edge_length.0..self.edge_length.1);
                let lb = rng.gen_range(self.edge_length.0..self.edge_length.1);
                let ta: f64 = rng.gen_range(0.0..180.0f64).to_radians();
                // Keep the corner angle away from 0 and 180 degrees.
                let tb = ta + rng.gen_range(30.0..150.0f64).to_radians();
                let ea = [la * ta.cos(), la * ta.sin()];
                let eb = [lb * tb.cos(), lb * tb.sin()];
                let origin = [center[0] - 0.5 * (ea[0] + eb[0]), center[1] - 0.5 * (ea[1] + eb[1])];
                ShapeSpec::parallelogram(origin, ea, eb, contrast)
            };
            if self.fits(&shape) {
                return Ok(shape);
            }
        }
        Err(Error::SamplingFailed(MAX_ATTEMPTS))
    }

    fn fits(&self, shape: &ShapeSpec) -> bool {
        let m = self.m as f64;
        let [(i0, i1), (j0, j1)] = shape.bounds();
        if i0 < 1.0 || j0 < 1.0 || i1 > m - 2.0 || j1 > m - 2.0 {
            return false;
        }
        match self.support {
            Support::Frame => true,
            Support::InscribedDisk => {
                let c = (m - 1.0) / 2.0;
                let r = m / 2.0 - 3.0;
                boundary_samples(shape, 256)
                    .iter()
                    .all(|p| (p[0] - c).hypot(p[1] - c) <= r)
            }
        }
    }
}

fn boundary_samples(shape: &ShapeSpec, n: usize) -> Vec<[f64; 2]> {
    match &shape.geometry {
        Geometry::Ellipse {
            center,
            semi_axes,
            rotation_deg,
        } => {
            let (s, c) = rotation_deg.to_radians().sin_cos();
            (0..n)
                .map(|k| {
                    let t = 2.0 * PI * k as f64 / n as f64;
                    let (u, w) = (semi_axes[0] * t.cos(), semi_axes[1] * t.sin());
                    [center[0] + c * u - s * w, center[1] + s * u + c * w]
                })
                .collect()
        }
        Geometry::Parallelogram { vertices } => vertices.to_vec(),
    }
}

/// Phantom from `seed` with side `m` and a shape count drawn from `shape_count`.
pub fn sample_phantom(seed: u64, m: usize, shape_count: (usize, usize)) -> Result<PhantomSpec> {
    PhantomSampler::new(m).with_shape_count(shape_count.0, shape_count.1).sample(seed)
}

fn indicator(shape: &ShapeSpec, m: usize) -> Vec<bool> {
    let mut out = vec![false; m * m];
    let [(i0, i1), (j0, j1)] = shape.bounds();
    let lo = |v: f64| (v.floor().max(0.0)) as usize;
    let hi = |v: f64| (v.ceil().max(0.0) as usize).min(m - 1);
    for i in lo(i0)..=hi(i1) {
        for j in lo(j0)..=hi(j1) {
            out[i * m + j] = shape.contains([i as f64, j as f64]);
        }
    }
    out
}

/// Sum of contrast-weighted indicators sampled at pixel centers.
pub fn rasterize(spec: &PhantomSpec) -> Image {
    let m = spec.m;
    let mut img = Image::square(m);
    for shape in &spec.shapes {
        let mask = indicator(shape, m);
        for (v, &inside) in img.data_mut().iter_mut().zip(&mask) {
            if inside {
                *v += shape.contrast;
            }
        }
    }
    img
}

/// Pixels whose value differs from one of their 4-neighbours.
pub fn boundary_pixels(values: &[bool], m: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..m {
        for j in 0..m {
            let v = values[i * m + j];
            let differs = |di: isize, dj: isize| {
                let (a, b) = (i as isize + di, j as isize + dj);
                let other = if a < 0 || b < 0 || a >= m as isize || b >= m as isize {
                    false
                } else {
                    values[a as usize * m + b as usize]
                };
                other != v
            };
            if differs(-1, 0) || differs(1, 0) || differs(0, -1) || differs(0, 1) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Wavefront set of a single shape.
pub fn shape_wavefront(shape: &ShapeSpec, m: usize) -> WavefrontSet {
    let mut wf = WavefrontSet::empty(m, m);
    let mask = indicator(shape, m);
    let boundary = boundary_pixels(&mask, m);
    for &(i, j) in &boundary {
        let angle = shape.normal_angle_deg([i as f64, j as f64]);
        wf.set(i, j, angle_to_bin(angle));
    }
    if let Some(vertices) = shape.vertices() {
        for v in vertices {
            let nearest = boundary.iter().min_by(|a, b| {
                let da = (a.0 as f64 - v[0]).hypot(a.1 as f64 - v[1]);
                let db = (b.0 as f64 - v[0]).hypot(b.1 as f64 - v[1]);
                da.partial_cmp(&db).unwrap()
            });
            if let Some(&(i, j)) = nearest {
                wf.set_all_bins(i, j);
            }
        }
    }
    wf
}

/// Union of the per-shape wavefront sets; cancellations are ignored.
pub fn analytic_wavefront(spec: &PhantomSpec) -> WavefrontSet {
    let mut wf = WavefrontSet::empty(spec.m, spec.m);
    for shape in &spec.shapes {
        wf.union_in_place(&shape_wavefront(shape, spec.m))
            .expect("same frame");
    }
    wf
}

/// Convolve with the elliptic filter `ĥ(ξ) = 1 / (1 + |ξ|)`.
///
/// `|ξ|` is the Euclidean norm of the signed integer DFT index, so the DC
/// gain is one.
pub fn apply_higher_order_filter(image: &Image) -> Image {
    let (rows, cols) = image.shape();
    let fft = Fft2::new(rows, cols);
    let mut spectrum = fft.forward_real(image.data());
    for k1 in 0..rows {
        let f1 = signed_frequency(k1, rows);
        for k2 in 0..cols {
            let f2 = signed_frequency(k2, cols);
            spectrum[k1 * cols + k2] *= Complex64::new(1.0 / (1.0 + f1.hypot(f2)), 0.0);
        }
    }
    Image::from_vec(rows, cols, fft.inverse_real(spectrum)).expect("shape")
}
