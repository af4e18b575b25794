//! Signal-processing primitives shared by every front-end.
//!
//! Multi-channel signals are channel-major `C × L` arrays; feature matrices
//! are frame-major `T × F`.

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayView3, Axis};

use crate::error::{invalid, Error, Result};

/// The only sample rate the toolkit accepts.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio at 16 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("waveform must contain at least one sample"));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(invalid(format!("waveform sample {i} is not finite")));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    /// View as a single-channel `1 × M` signal.
    pub fn as_signal(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((1, self.samples.len()), &self.samples).expect("contiguous")
    }
}

/// A `T × F` matrix of frame-wise features with its frame shift in samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
    frame_shift_samples: usize,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>, frame_shift_samples: usize) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(invalid(format!(
                "feature matrix must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if frame_shift_samples == 0 {
            return Err(invalid("frame shift must be at least one sample"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("feature matrix contains non-finite values"));
        }
        Ok(Self {
            values,
            frame_shift_samples,
        })
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn frame_shift_samples(&self) -> usize {
        self.frame_shift_samples
    }

    pub fn frame(&self, t: usize) -> ArrayView1<'_, f64> {
        self.values.row(t)
    }

    /// Keep only the first `frames` frames.
    pub fn truncated(&self, frames: usize) -> Result<Self> {
        let frames = frames.min(self.num_frames());
        Self::new(
            self.values.slice(s![..frames, ..]).to_owned(),
            self.frame_shift_samples,
        )
    }

    /// Columns `[start, end)` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.dim() {
            return Err(invalid(format!(
                "column range {start}..{end} out of bounds for dimension {}",
                self.dim()
            )));
        }
        Self::new(
            self.values.slice(s![.., start..end]).to_owned(),
            self.frame_shift_samples,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Padding {
    #[default]
    Valid,
    /// Zero padding split evenly (extra sample on the right) so that
    /// `L' = ceil(L / stride)`.
    Same,
}

/// Output length of a 1-D convolution, or `None` when valid padding leaves
/// nothing to compute.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize, padding: Padding) -> Option<usize> {
    if kernel == 0 || stride == 0 {
        return None;
    }
    match padding {
        Padding::Valid if len >= kernel => Some((len - kernel) / stride + 1),
        Padding::Valid => None,
        Padding::Same if len > 0 => Some(len.div_ceil(stride)),
        Padding::Same => None,
    }
}

/// Left zero-padding applied by [`Padding::Same`].
pub fn same_left_pad(len: usize, kernel: usize, stride: usize) -> usize {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(len);
    total / 2
}

const IM2COL_BLOCK: usize = 1024;

/// Direct 1-D convolution (cross-correlation, as in neural-network layers).
///
/// `signal` is `C_in × L`, `kernels` is `C_out × C_in × K`; the result is
/// `C_out × L'` with
/// `out[c][t] = Σ_{i,k} kernels[c][i][k] · signal[i][t·stride + k − offset]`.
pub fn fir_conv1d(
    signal: ArrayView2<'_, f64>,
    kernels: ArrayView3<'_, f64>,
    stride: usize,
    padding: Padding,
) -> Result<Array2<f64>> {
    let (c_in, len) = signal.dim();
    let (c_out, k_in, k) = kernels.dim();
    if k == 0 {
        return Err(invalid("kernel size must be at least 1"));
    }
    if stride == 0 {
        return Err(invalid("stride must be at least 1"));
    }
    if k_in != c_in {
        return Err(invalid(format!(
            "kernel expects {k_in} input channels, signal has {c_in}"
        )));
    }
    if kernels.iter().any(|v| !v.is_finite()) {
        return Err(invalid("kernel contains non-finite values"));
    }
    let out_len = conv_output_len(len, k, stride, padding)
        .ok_or(Error::EmptyOutput { len, kernel: k })?;
    let offset = match padding {
        Padding::Valid => 0,
        Padding::Same => same_left_pad(len, k, stride),
    };

    let weights = kernels
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c_out, c_in * k))
        .expect("contiguous kernels");
    let mut out = Array2::<f64>::zeros((c_out, out_len));

    // im2col in blocks of output positions keeps the scratch matrix small
    // even for long kernels.
    let mut cols = Array2::<f64>::zeros((c_in * k, IM2COL_BLOCK.min(out_len)));
    let mut t0 = 0;
    while t0 < out_len {
        let t1 = (t0 + IM2COL_BLOCK).min(out_len);
        let nb = t1 - t0;
        let mut block = cols.slice_mut(s![.., ..nb]);
        for i in 0..c_in {
            let row = signal.row(i);
            for kk in 0..k {
                let mut dst = block.row_mut(i * k + kk);
                for (j, d) in dst.iter_mut().enumerate() {
                    let pos = (t0 + j) * stride + kk;
                    *d = if pos >= offset && pos - offset < len {
                        row[pos - offset]
                    } else {
                        0.0
                    };
                }
            }
        }
        let prod = weights.dot(&block);
        out.slice_mut(s![.., t0..t1]).assign(&prod);
        t0 = t1;
    }
    Ok(out)
}

/// Convolves every input channel independently with the same bank of `N`
/// kernels (`kernels` is `N × 1 × K`). Output channel `c·N + n` is channel
/// `c` filtered by kernel `n`.
pub fn fir_conv1d_shared(
    signal: ArrayView2<'_, f64>,
    kernels: ArrayView3<'_, f64>,
    stride: usize,
    padding: Padding,
) -> Result<Array2<f64>> {
    let (c_in, _) = signal.dim();
    let (n, one, _) = kernels.dim();
    if one != 1 {
        return Err(invalid(format!(
            "shared kernels must have a single input channel, found {one}"
        )));
    }
    let mut blocks = Vec::with_capacity(c_in);
    for c in 0..c_in {
        let row = signal.slice(s![c..c + 1, ..]);
        blocks.push(fir_conv1d(row, kernels, stride, padding)?);
    }
    let out_len = blocks[0].ncols();
    let mut out = Array2::<f64>::zeros((c_in * n, out_len));
    for (c, b) in blocks.into_iter().enumerate() {
        out.slice_mut(s![c * n..(c + 1) * n, ..]).assign(&b);
    }
    Ok(out)
}

/// First-order pre-emphasis `y[t] = x[t] − alpha·x[t−1]`, `y[0] = x[0]`.
pub fn pre_emphasis(w: &Waveform, alpha: f64) -> Result<Waveform> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("pre-emphasis alpha {alpha} outside [0, 1]")));
    }
    let x = w.samples();
    let mut y = Vec::with_capacity(x.len());
    y.push(x[0]);
    y.extend(x.windows(2).map(|p| p[1] - alpha * p[0]));
    Waveform::new(y)
}

/// Symmetric Hanning window, zero at both ends.
pub fn hanning_window(width: usize) -> Result<Vec<f64>> {
    if width < 2 {
        return Err(invalid(format!("hanning window width must be >= 2, got {width}")));
    }
    let denom = (width - 1) as f64;
    Ok((0..width)
        .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / denom).cos()))
        .collect())
}

/// DCT-II basis as a `num_coeffs × dim` matrix; orthonormal when requested.
pub fn dct_matrix(dim: usize, num_coeffs: usize, orthonormal: bool) -> Result<Array2<f64>> {
    if dim == 0 {
        return Err(invalid("DCT input dimension must be at least 1"));
    }
    if num_coeffs == 0 || num_coeffs > dim {
        return Err(invalid(format!(
            "DCT coefficient count {num_coeffs} must be in 1..={dim}"
        )));
    }
    let f = dim as f64;
    Ok(Array2::from_shape_fn((num_coeffs, dim), |(k, n)| {
        let scale = if !orthonormal {
            1.0
        } else if k == 0 {
            (1.0 / f).sqrt()
        } else {
            (2.0 / f).sqrt()
        };
        scale * (PI * k as f64 * (n as f64 + 0.5) / f).cos()
    }))
}

pub fn dct2(x: ArrayView1<'_, f64>, num_coeffs: usize, orthonormal: bool) -> Result<Array1<f64>> {
    Ok(dct_matrix(x.len(), num_coeffs, orthonormal)?.dot(&x))
}

/// Elementwise `x^exponent` for nonnegative input.
pub fn root_compress(x: ArrayView2<'_, f64>, exponent: f64) -> Result<Array2<f64>> {
    if !(exponent > 0.0 && exponent <= 1.0) {
        return Err(invalid(format!("compression exponent {exponent} outside (0, 1]")));
    }
    if x.iter().any(|&v| v < 0.0 || v.is_nan()) {
        return Err(invalid("root compression requires nonnegative input"));
    }
    Ok(x.mapv(|v| v.powf(exponent)))
}

fn mean_var(v: ArrayView1<'_, f64>) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.sum() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Per-frame normalization to zero mean and unit population variance across
/// the feature dimension. No learned scale or shift.
pub fn layer_norm(frames: ArrayView2<'_, f64>, epsilon: f64) -> Result<Array2<f64>> {
    if frames.ncols() < 2 {
        return Err(invalid("layer norm needs at least two channels per frame"));
    }
    let mut out = frames.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let (mean, var) = mean_var(row.view());
        let inv = 1.0 / (var + epsilon).sqrt();
        row.mapv_inplace(|x| (x - mean) * inv);
    }
    Ok(out)
}

/// Per-channel mean and variance used by [`channel_standardize`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl ChannelStats {
    /// Column statistics of a `T × F` matrix.
    pub fn from_frames(frames: ArrayView2<'_, f64>) -> Self {
        let (mean, var) = frames
            .axis_iter(Axis(1))
            .map(mean_var)
            .unzip();
        Self { mean, var }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Standardizes each channel with the given statistics, or with the
/// utterance's own column statistics when `stats` is `None`.
pub fn channel_standardize(
    frames: ArrayView2<'_, f64>,
    stats: Option<&ChannelStats>,
    epsilon: f64,
) -> Result<Array2<f64>> {
    let owned;
    let stats = match stats {
        Some(s) => {
            if s.mean.len() != frames.ncols() || s.var.len() != frames.ncols() {
                return Err(invalid(format!(
                    "normalization stats have dimension {}/{}, features have {}",
                    s.mean.len(),
                    s.var.len(),
                    frames.ncols()
                )));
            }
            s
        }
        None => {
            if frames.nrows() < 2 {
                return Err(invalid(
                    "utterance-level standardization needs at least two frames",
                ));
            }
            owned = ChannelStats::from_frames(frames);
            &owned
        }
    };
    let mut out = frames.to_owned();
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let mean = stats.mean[j];
        let inv = 1.0 / (stats.var[j] + epsilon).sqrt();
        col.mapv_inplace(|x| (x - mean) * inv);
    }
    Ok(out)
}
