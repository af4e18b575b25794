//! File formats: 16-bit PCM WAV input, the `WFE1` tensor archive, and
//! feature-matrix output.
//!
//! `WFE1` layout (all integers little-endian):
//!
//! ```text
//! magic "WFE1" | u32 entry count
//! per entry: u32 name length | name (UTF-8) | u32 ndim | ndim × u32 dims | f32 payload (row-major)
//! ```
//!
//! Raw feature files are `u32 T | u32 F | u32 frame_shift_samples` followed by
//! `T·F` little-endian f32 values, row-major.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::dsp::{FeatureMatrix, Waveform, SAMPLE_RATE};
use crate::error::{invalid, Error, Result};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"WFE1";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a mono 16 kHz 16-bit PCM WAV file, scaling samples by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedFormat(format!(
            "{}: sample rate {} Hz, expected {SAMPLE_RATE} Hz (no resampling is performed)",
            path.display(),
            spec.sample_rate
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {}-bit {:?} samples, expected 16-bit PCM",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    if samples.is_empty() {
        return Err(Error::UnsupportedFormat(format!(
            "{}: file contains no samples",
            path.display()
        )));
    }
    Waveform::new(samples)
}

/// Writes a waveform as 16-bit PCM, clipping to the representable range.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &x in w.samples() {
        let v = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// A named f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Ordered container of uniquely named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightArchive {
    entries: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateName(name));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(invalid(format!(
                "tensor {name:?}: shape {shape:?} holds {numel} values, payload has {}",
                data.len()
            )));
        }
        if u32::try_from(name.len()).is_err() || shape.iter().any(|&d| u32::try_from(d).is_err()) {
            return Err(invalid(format!("tensor {name:?} exceeds u32 header fields")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Tensor { name, shape, data });
        Ok(())
    }

    /// Convenience for f64 data, narrowed to f32 for storage.
    pub fn insert_f64(&mut self, name: impl Into<String>, shape: Vec<usize>, data: &[f64]) -> Result<()> {
        self.insert(name, shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    /// Fetches a tensor and checks its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        if t.shape != shape {
            return Err(Error::ShapeMismatch {
                tensor: name.to_string(),
                expected: shape.to_vec(),
                actual: t.shape.clone(),
            });
        }
        Ok(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all tensors.
    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(Tensor::numel).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(8 + self.total_elements() * 4);
        buf.extend_from_slice(ARCHIVE_MAGIC);
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for t in &self.entries {
            buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            buf.extend_from_slice(t.name.as_bytes());
            buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur
            .take(4, || "archive header".into())?
            .try_into()
            .expect("4 bytes");
        if &magic != ARCHIVE_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let count = cur.u32(|| "archive header".into())?;
        let mut archive = Self::new();
        for i in 0..count {
            let entry = || format!("entry {i}");
            let name_len = cur.u32(entry)? as usize;
            let name = std::str::from_utf8(cur.take(name_len, entry)?)
                .map_err(|_| invalid(format!("entry {i}: tensor name is not valid UTF-8")))?
                .to_string();
            let ctx = || format!("entry {i} ({name:?})");
            let ndim = cur.u32(ctx)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(cur.u32(ctx)? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| invalid(format!("{}: shape {shape:?} overflows", ctx())))?;
            let payload = cur.take(numel, ctx)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            archive.insert(name, shape, data)?;
        }
        if cur.pos != bytes.len() {
            return Err(invalid(format!(
                "{} trailing bytes after the last archive entry",
                bytes.len() - cur.pos
            )));
        }
        Ok(archive)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(io_err(path))?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, ctx: impl FnOnce() -> String) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated(ctx()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, ctx: impl FnOnce() -> String) -> Result<u32> {
        let b = self.take(4, ctx)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureFormat {
    #[default]
    RawF32,
    Text,
}

pub fn features_to_bytes(fm: &FeatureMatrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + fm.num_frames() * fm.dim() * 4);
    buf.extend_from_slice(&(fm.num_frames() as u32).to_le_bytes());
    buf.extend_from_slice(&(fm.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(fm.frame_shift_samples() as u32).to_le_bytes());
    for &v in fm.values().iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn features_to_text(fm: &FeatureMatrix) -> String {
    let mut out = String::new();
    for row in fm.values().rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{}", *v as f32)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_features(fm: &FeatureMatrix, path: impl AsRef<Path>, format: FeatureFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        FeatureFormat::RawF32 => features_to_bytes(fm),
        FeatureFormat::Text => features_to_text(fm).into_bytes(),
    };
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&bytes).map_err(io_err(path))
}

pub fn features_from_bytes(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut cur = Cursor { bytes, pos: 0 };
    let frames = cur.u32(|| "feature header".into())? as usize;
    let dim = cur.u32(|| "feature header".into())? as usize;
    let shift = cur.u32(|| "feature header".into())? as usize;
    let n = frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| invalid("feature header dimensions overflow"))?;
    let payload = cur.take(n, || format!("feature payload ({frames}x{dim})"))?;
    if cur.pos != bytes.len() {
        return Err(invalid("trailing bytes after feature payload"));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let values = Array2::from_shape_vec((frames, dim), data).expect("sized from header");
    FeatureMatrix::new(values, shift)
}

/// Reads a raw f32 feature file.
pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    features_from_bytes(&fs::read(path).map_err(io_err(path))?)
}
