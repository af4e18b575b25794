//! Gammatone features computed with FIR convolutions.
//!
//! Pipeline: pre-emphasis, a bank of 4th-order Gammatone filters (stride 1),
//! rectification, Hanning-weighted temporal integration (25 ms window, 10 ms
//! shift), 10th-root compression, DCT-II per frame, and per-channel
//! standardization.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, Axis};

use crate::convstack::{Activation, ConvLayerSpec, ConvStackConfig, Normalization, Sharing};
use crate::dsp::{
    self, channel_standardize, dct_matrix, fir_conv1d, fir_conv1d_shared, hanning_window,
    pre_emphasis, root_compress, ChannelStats, FeatureMatrix, Padding, Waveform, SAMPLE_RATE,
};
use crate::error::{invalid, Error, Result};
use crate::io::WeightArchive;

/// Greenwood constants for the human cochlea.
pub const GREENWOOD_A: f64 = 165.4;
pub const GREENWOOD_ALPHA: f64 = 2.1;
pub const GREENWOOD_K: f64 = 0.88;

/// Epsilon used when standardizing the final features.
pub const STANDARDIZE_EPS: f64 = 1e-12;

pub const FILTERS_TENSOR: &str = "gt.filters";
pub const WINDOW_TENSOR: &str = "gt.window";

#[derive(Debug, Clone, PartialEq)]
pub struct GammatoneConfig {
    pub num_filters: usize,
    pub filter_length: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub order: u32,
    pub window_width: usize,
    pub window_shift: usize,
    pub compression_exponent: f64,
    pub num_dct_coeffs: usize,
    pub pre_emphasis_alpha: f64,
}

impl Default for GammatoneConfig {
    fn default() -> Self {
        Self {
            num_filters: 50,
            filter_length: 640,
            f_min: 100.0,
            f_max: 7500.0,
            order: 4,
            window_width: 400,
            window_shift: 160,
            compression_exponent: 0.1,
            num_dct_coeffs: 50,
            pre_emphasis_alpha: 1.0,
        }
    }
}

impl GammatoneConfig {
    pub fn validate(&self) -> Result<()> {
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        if !(self.f_min > 0.0 && self.f_min < self.f_max && self.f_max <= nyquist) {
            return Err(invalid(format!(
                "need 0 < f_min < f_max <= {nyquist} Hz, got {}..{}",
                self.f_min, self.f_max
            )));
        }
        if self.num_filters == 0 {
            return Err(invalid("need at least one Gammatone filter"));
        }
        if self.filter_length < 2 {
            return Err(invalid("filter length must be at least 2 samples"));
        }
        if self.order == 0 {
            return Err(invalid("filter order must be at least 1"));
        }
        if self.window_width < 2 || self.window_shift == 0 || self.window_shift > self.window_width {
            return Err(invalid(format!(
                "need 0 < window_shift <= window_width (>= 2), got shift {} width {}",
                self.window_shift, self.window_width
            )));
        }
        if self.num_dct_coeffs == 0 || self.num_dct_coeffs > self.num_filters {
            return Err(invalid(format!(
                "DCT coefficient count {} must be in 1..={}",
                self.num_dct_coeffs, self.num_filters
            )));
        }
        if !(self.compression_exponent > 0.0 && self.compression_exponent <= 1.0) {
            return Err(invalid("compression exponent must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.pre_emphasis_alpha) {
            return Err(invalid("pre-emphasis alpha must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Samples spanned by one output frame: filter plus integration window.
    pub fn receptive_field(&self) -> usize {
        self.filter_length + self.window_width - 1
    }

    /// Number of frames produced for `m` input samples, if any.
    pub fn num_frames(&self, m: usize) -> Option<usize> {
        let conv = dsp::conv_output_len(m, self.filter_length, 1, Padding::Valid)?;
        dsp::conv_output_len(conv, self.window_width, self.window_shift, Padding::Valid)
    }

    /// The filter and integration stages expressed as a conv stack, for
    /// static analysis. DCT and standardization are accounted separately.
    pub fn stack_config(&self) -> ConvStackConfig {
        ConvStackConfig {
            name: "gt".into(),
            layers: vec![
                ConvLayerSpec {
                    in_channels: 1,
                    out_channels: self.num_filters,
                    kernel: self.filter_length,
                    stride: 1,
                    activation: Activation::Abs,
                    ..ConvLayerSpec::default()
                },
                ConvLayerSpec {
                    in_channels: self.num_filters,
                    out_channels: self.num_filters,
                    kernel: self.window_width,
                    stride: self.window_shift,
                    sharing: Sharing::PerChannelShared,
                    compression: Some(self.compression_exponent),
                    normalization: Normalization::None,
                    ..ConvLayerSpec::default()
                },
            ],
        }
    }
}

fn greenwood(x: f64) -> f64 {
    GREENWOOD_A * (10f64.powf(GREENWOOD_ALPHA * x) - GREENWOOD_K)
}

fn greenwood_inverse(f: f64) -> f64 {
    (f / GREENWOOD_A + GREENWOOD_K).log10() / GREENWOOD_ALPHA
}

/// `n` center frequencies equally spaced in cochlear position between
/// `f_min` and `f_max`.
pub fn greenwood_center_frequencies(n: usize, f_min: f64, f_max: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid("need at least one center frequency"));
    }
    if !(f_min > 0.0 && f_max > f_min) {
        return Err(invalid(format!(
            "need 0 < f_min < f_max, got {f_min}..{f_max}"
        )));
    }
    if n == 1 {
        return Ok(vec![f_min]);
    }
    let (lo, hi) = (greenwood_inverse(f_min), greenwood_inverse(f_max));
    let mut out: Vec<f64> = (0..n)
        .map(|i| greenwood(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect();
    // pin endpoints against round-off in the log/exp round trip
    out[0] = f_min;
    out[n - 1] = f_max;
    Ok(out)
}

/// Equivalent rectangular bandwidth in Hz.
pub fn erb(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

/// Magnitude of the DTFT of `h` at `freq` Hz.
pub fn dtft_magnitude(h: &[f64], freq: f64, sample_rate: f64) -> f64 {
    let omega = 2.0 * PI * freq / sample_rate;
    let (mut re, mut im) = (0.0, 0.0);
    for (n, &v) in h.iter().enumerate() {
        let phase = omega * n as f64;
        re += v * phase.cos();
        im -= v * phase.sin();
    }
    re.hypot(im)
}

/// Sampled Gammatone impulse response, scaled to unit gain at `fc`.
pub fn gammatone_impulse_response(fc: f64, order: u32, length: usize, sample_rate: f64) -> Result<Vec<f64>> {
    if !(fc > 0.0 && fc < sample_rate / 2.0) {
        return Err(invalid(format!(
            "center frequency {fc} Hz must lie in (0, {}) Hz",
            sample_rate / 2.0
        )));
    }
    if order == 0 {
        return Err(invalid("filter order must be at least 1"));
    }
    if length < 2 {
        return Err(invalid("impulse response length must be at least 2"));
    }
    let b = 1.019 * erb(fc);
    let mut g: Vec<f64> = (0..length)
        .map(|n| {
            let t = n as f64 / sample_rate;
            t.powi(order as i32 - 1) * (-2.0 * PI * b * t).exp() * (2.0 * PI * fc * t).cos()
        })
        .collect();
    let gain = dtft_magnitude(&g, fc, sample_rate);
    if gain == 0.0 || !gain.is_finite() {
        return Err(invalid(format!("degenerate Gammatone response at {fc} Hz")));
    }
    g.iter_mut().for_each(|v| *v /= gain);
    Ok(g)
}

/// A designed filterbank ready to extract features. Immutable once built.
#[derive(Debug, Clone)]
pub struct GammatoneExtractor {
    cfg: GammatoneConfig,
    center_frequencies: Vec<f64>,
    filters: Array3<f64>,
    window: Array3<f64>,
    dct: Array2<f64>,
}

impl GammatoneExtractor {
    pub fn new(cfg: GammatoneConfig) -> Result<Self> {
        cfg.validate()?;
        let sr = SAMPLE_RATE as f64;
        let center_frequencies = greenwood_center_frequencies(cfg.num_filters, cfg.f_min, cfg.f_max)?;
        let mut filters = Array3::zeros((cfg.num_filters, 1, cfg.filter_length));
        for (i, &fc) in center_frequencies.iter().enumerate() {
            let g = gammatone_impulse_response(fc, cfg.order, cfg.filter_length, sr)?;
            filters
                .index_axis_mut(Axis(0), i)
                .index_axis_mut(Axis(0), 0)
                .assign(&ndarray::Array1::from(g));
        }
        let mut win = hanning_window(cfg.window_width)?;
        let sum: f64 = win.iter().sum();
        win.iter_mut().for_each(|v| *v /= sum);
        let window = Array3::from_shape_vec((1, 1, cfg.window_width), win).expect("window shape");
        let dct = dct_matrix(cfg.num_filters, cfg.num_dct_coeffs, true)?;
        Ok(Self {
            cfg,
            center_frequencies,
            filters,
            window,
            dct,
        })
    }

    pub fn config(&self) -> &GammatoneConfig {
        &self.cfg
    }

    pub fn center_frequencies(&self) -> &[f64] {
        &self.center_frequencies
    }

    /// `num_filters × 1 × filter_length` impulse responses.
    pub fn filters(&self) -> &Array3<f64> {
        &self.filters
    }

    /// Unit-sum integration window.
    pub fn window(&self) -> &[f64] {
        self.window.as_slice().expect("contiguous")
    }

    pub fn min_samples(&self) -> usize {
        self.cfg.receptive_field()
    }

    /// Compressed filterbank energies (`T × num_filters`), before DCT.
    pub fn band_energies(&self, w: &Waveform) -> Result<Array2<f64>> {
        if w.len() < self.min_samples() {
            return Err(Error::TooShort {
                what: "Gammatone feature extraction".into(),
                needed: self.min_samples(),
                got: w.len(),
            });
        }
        let emphasized = pre_emphasis(w, self.cfg.pre_emphasis_alpha)?;
        let bands = fir_conv1d(emphasized.as_signal(), self.filters.view(), 1, Padding::Valid)?;
        let rectified = bands.mapv(f64::abs);
        let integrated = fir_conv1d_shared(
            rectified.view(),
            self.window.view(),
            self.cfg.window_shift,
            Padding::Valid,
        )?;
        // channel-major -> frame-major
        let frames = integrated.t().as_standard_layout().into_owned();
        root_compress(frames.view(), self.cfg.compression_exponent)
    }

    /// Cepstral features before standardization.
    pub fn cepstra(&self, w: &Waveform) -> Result<Array2<f64>> {
        let energies = self.band_energies(w)?;
        Ok(energies.dot(&self.dct.t()))
    }

    /// Full pipeline. With `norm_stats` absent, each channel is standardized
    /// with the utterance's own statistics.
    pub fn extract(&self, w: &Waveform, norm_stats: Option<&ChannelStats>) -> Result<FeatureMatrix> {
        let cep = self.cepstra(w)?;
        let values = if norm_stats.is_none() && cep.nrows() < 2 {
            // a single frame has no utterance statistics; center it only
            cep.mapv(|_| 0.0)
        } else {
            channel_standardize(cep.view(), norm_stats, STANDARDIZE_EPS)?
        };
        FeatureMatrix::new(values, self.cfg.window_shift)
    }

    /// Stores the filterbank and integration window so they can be inspected
    /// and counted like any other front-end's weights.
    pub fn to_archive(&self) -> Result<WeightArchive> {
        let mut a = WeightArchive::new();
        a.insert_f64(
            FILTERS_TENSOR,
            self.filters.shape().to_vec(),
            self.filters.as_slice().expect("contiguous"),
        )?;
        a.insert_f64(WINDOW_TENSOR, self.window.shape().to_vec(), self.window())?;
        Ok(a)
    }
}
