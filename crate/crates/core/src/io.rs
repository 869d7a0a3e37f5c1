//! Binary tensor files, JSON manifests and the model container.
//!
//! Tensor file layout, all integers little-endian:
//!
//! ```text
//! "WFT1" | dtype u8 (0 = u8, 1 = f32, 2 = f64) | rank u8 | rank × u32 dims | payload
//! ```
//!
//! The payload is row-major and holds exactly `product(dims)` elements.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::densee::{DenseeModel, HEAD_COUNT};
use crate::error::{mismatch, Error, Result};
use crate::neuralnet::{LayerSpec, Network};
use crate::phantoms::PhantomSpec;
use crate::raster::Image;
use crate::shearlet::ShearletConfig;
use crate::wavefront::{WavefrontSet, ORIENTATION_BINS};

pub const TENSOR_MAGIC: &[u8; 4] = b"WFT1";
pub const MODEL_MAGIC: &[u8; 4] = b"DNSM";
pub const MODEL_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    U8(Vec<u8>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    fn code(&self) -> u8 {
        match self {
            TensorData::U8(_) => 0,
            TensorData::F32(_) => 1,
            TensorData::F64(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::U8(v) => v.len(),
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(Error::Format(format!("rank {} too large", dims.len())));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Format("dimension exceeds u32".into()));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(mismatch(n, data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&[self.data.code(), self.dims.len() as u8])?;
        for &d in &self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        match &self.data {
            TensorData::U8(v) => w.write_all(v)?,
            TensorData::F32(v) => {
                let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
                w.write_all(&bytes)?;
            }
            TensorData::F64(v) => {
                let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
                w.write_all(&bytes)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut head = [0u8; 6];
        r.read_exact(&mut head).map_err(truncated)?;
        if &head[..4] != TENSOR_MAGIC {
            return Err(Error::Format("bad tensor magic".into()));
        }
        let (code, rank) = (head[4], head[5] as usize);
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(truncated)?;
            dims.push(u32::from_le_bytes(b) as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
        let width = match code {
            0 => 1,
            1 => 4,
            2 => 8,
            c => return Err(Error::Format(format!("unknown dtype code {c}"))),
        };
        let mut bytes = vec![0u8; n * width];
        r.read_exact(&mut bytes).map_err(truncated)?;
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::Format("trailing bytes after tensor payload".into()));
        }
        let data = match code {
            0 => TensorData::U8(bytes),
            1 => TensorData::F32(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            _ => TensorData::F64(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
        };
        Self::new(dims, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }

    pub fn from_image(image: &Image) -> Self {
        Self {
            dims: vec![image.rows(), image.cols()],
            data: TensorData::F64(image.data().to_vec()),
        }
    }

    /// Rank-2 tensor as an image; `f32` payloads are widened.
    pub fn to_image(&self) -> Result<Image> {
        let [rows, cols] = self.dims[..] else {
            return Err(mismatch("rank 2", format!("rank {}", self.dims.len())));
        };
        let data = match &self.data {
            TensorData::F64(v) => v.clone(),
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::U8(v) => v.iter().map(|&x| x as f64).collect(),
        };
        Image::from_vec(rows, cols, data)
    }

    pub fn from_wavefront(wf: &WavefrontSet) -> Self {
        Self {
            dims: vec![wf.rows(), wf.cols(), ORIENTATION_BINS],
            data: TensorData::U8(wf.as_bytes().to_vec()),
        }
    }

    pub fn to_wavefront(&self) -> Result<WavefrontSet> {
        let [rows, cols, bins] = self.dims[..] else {
            return Err(mismatch("rank 3", format!("rank {}", self.dims.len())));
        };
        if bins != ORIENTATION_BINS {
            return Err(mismatch(ORIENTATION_BINS, bins));
        }
        match &self.data {
            TensorData::U8(v) => WavefrontSet::from_vec(rows, cols, v.clone()),
            _ => Err(Error::Format("wavefront masks must be u8".into())),
        }
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated tensor file".into())
    } else {
        Error::Io(e)
    }
}

pub fn save_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    Tensor::from_image(image).save(path)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    Tensor::load(path)?.to_image()
}

pub fn save_wavefront(path: impl AsRef<Path>, wf: &WavefrontSet) -> Result<()> {
    Tensor::from_wavefront(wf).save(path)
}

pub fn load_wavefront(path: impl AsRef<Path>) -> Result<WavefrontSet> {
    Tensor::load(path)?.to_wavefront()
}

/// One generated or imported sample. Paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavefront: Option<String>,
    /// Low-dose filtered backprojection of the image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruction: Option<String>,
    /// Canonical-layout sinogram (`n × 180`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sinogram: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sinogram_wavefront: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomSpec>,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sinogram_shape: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    /// Generator kind (`jump`, `higher_order`, `sinogram`, `prediction`, ...).
    pub kind: String,
    /// Angle subsampling step of the sinograms, when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_step: Option<usize>,
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            schema_version: MANIFEST_VERSION,
            kind: kind.into(),
            angle_step: None,
            records: Vec::new(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Manifest = serde_json::from_slice(&fs::read(path)?)?;
        if m.schema_version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported manifest version {}", m.schema_version)));
        }
        Ok(m)
    }
}

/// Resolve a record path against the manifest's directory.
pub fn resolve(manifest_path: &Path, rel: &str) -> PathBuf {
    manifest_path.parent().unwrap_or(Path::new(".")).join(rel)
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    shearlet: ShearletConfig,
    fingerprint: String,
    layers: Vec<LayerSpec>,
    seed: u64,
    channel_scale: Vec<f32>,
    center_sigma: Option<f32>,
    /// Trained heads in file order, with their tensor lengths.
    heads: Vec<(usize, Vec<usize>)>,
}

/// Write `model` as magic, version, JSON header and raw `f32` tensors.
pub fn write_model(model: &DenseeModel, w: &mut impl Write) -> Result<()> {
    let mut tensors = Vec::new();
    let mut heads = Vec::new();
    for h in model.trained_heads() {
        let t = model.head(h)?.export_tensors();
        heads.push((h, t.iter().map(Vec::len).collect()));
        tensors.push(t);
    }
    let header = ModelHeader {
        shearlet: model.config().clone(),
        fingerprint: model.fingerprint().to_string(),
        layers: model.specs().to_vec(),
        seed: model.seed(),
        channel_scale: model.channel_scale().to_vec(),
        center_sigma: model.center_sigma(),
        heads,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for t in tensors.iter().flatten() {
        let bytes: Vec<u8> = t.iter().flat_map(|x| x.to_le_bytes()).collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_model(r: &mut impl Read) -> Result<DenseeModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format("bad model magic".into()));
    }
    let version = read_u32(r)?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let len = read_u32(r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(truncated)?;
    let header: ModelHeader = serde_json::from_slice(&json)?;
    if header.shearlet.fingerprint() != header.fingerprint {
        return Err(Error::Format("model header fingerprint does not match its shearlet config".into()));
    }
    let mut model = DenseeModel::with_architecture(header.shearlet, header.layers, header.seed)?;
    model.set_channel_scale(header.channel_scale)?;
    model.set_center_sigma(header.center_sigma)?;
    for (head, lens) in header.heads {
        if head >= HEAD_COUNT {
            return Err(Error::Format(format!("head {head} out of range")));
        }
        let mut tensors = Vec::with_capacity(lens.len());
        for n in lens {
            let mut bytes = vec![0u8; n * 4];
            r.read_exact(&mut bytes).map_err(truncated)?;
            tensors.push(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect());
        }
        let mut net: Network<f32> = model.initial_head(head)?;
        net.import_tensors(tensors)?;
        model.set_head(head, net)?;
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after model tensors".into()));
    }
    Ok(model)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

pub fn save_model(path: impl AsRef<Path>, model: &DenseeModel) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DenseeModel> {
    let bytes = fs::read(path)?;
    read_model(&mut bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let t = Tensor::new(vec![2, 3], TensorData::U8(vec![1, 2, 3, 4, 5, 6])).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"WFT1");
        assert_eq!(buf[4], 0);
        assert_eq!(buf[5], 2);
        assert_eq!(&buf[6..14], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&buf[14..], &[1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn f64_payload_is_little_endian() {
        let t = Tensor::new(vec![1], TensorData::F64(vec![1.0])).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(buf[4], 2);
        assert_eq!(&buf[10..], &1.0f64.to_le_bytes());
    }

    #[test]
    fn rejects_malformed_files() {
        let t = Tensor::new(vec![2], TensorData::F32(vec![1.0, 2.0])).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert!(Tensor::read_from(&mut &buf[..buf.len() - 1]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(Tensor::read_from(&mut long.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Tensor::read_from(&mut bad.as_slice()).is_err());
        let mut code = buf;
        code[4] = 9;
        assert!(Tensor::read_from(&mut code.as_slice()).is_err());
        assert!(Tensor::new(vec![3], TensorData::U8(vec![0; 2])).is_err());
    }

    #[test]
    fn wavefront_round_trip() {
        let mut wf = WavefrontSet::empty(3, 4);
        wf.set(1, 2, 77);
        let t = Tensor::from_wavefront(&wf);
        assert_eq!(t.dims(), &[3, 4, 180]);
        assert_eq!(t.to_wavefront().unwrap(), wf);
        assert!(Tensor::from_image(&Image::square(3)).to_wavefront().is_err());
    }
}
