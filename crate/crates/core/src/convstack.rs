//! Declarative 1-D convolutional front-ends and their forward pass.
//!
//! Two families ship with the crate: the supervised-convolutional stack
//! (time-frequency decomposition followed by shared low-pass envelope
//! filters) and the wav2vec-style encoder/context stack in its regular and
//! large variants.
//!
//! Weights live in a [`WeightArchive`] under
//! `<stack>.layer<i>.weight`, `<stack>.layer<i>.bias`,
//! `<stack>.layer<i>.norm.weight` and `<stack>.layer<i>.norm.bias`, with
//! zero-based layer indices. Convolution weights have shape
//! `(out_channels, in_channels, kernel)`; per-channel-shared layers store
//! only their `N` kernels as `(N, 1, kernel)`.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis;
use crate::dsp::{fir_conv1d, fir_conv1d_shared, hanning_window, FeatureMatrix, Padding, Waveform};
use crate::error::{invalid, Error, Result};
use crate::io::WeightArchive;

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    None,
    Relu,
    Abs,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::None => x,
            Activation::Relu => x.max(0.0),
            Activation::Abs => x.abs(),
        }
    }
}

/// Normalization attached to a layer.
///
/// `GroupNormSingle` normalizes over all channels and time steps jointly and
/// runs before the activation. `LayerNorm` normalizes each time step across
/// channels and runs last, after activation and compression. Both carry a
/// per-channel affine (`norm.weight`, `norm.bias`), defaulting to identity
/// when absent from the archive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    None,
    GroupNormSingle,
    LayerNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sharing {
    /// Every output channel sees every input channel.
    #[default]
    Full,
    /// Each input channel is filtered by the same `N = out / in` kernels;
    /// output channel `c·N + n` depends only on input channel `c`.
    PerChannelShared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub activation: Activation,
    pub normalization: Normalization,
    pub padding: Padding,
    /// Residual connection added after activation.
    pub skip: bool,
    pub sharing: Sharing,
    pub bias: bool,
    /// Elementwise `x^e` applied after activation.
    pub compression: Option<f64>,
}

impl Default for ConvLayerSpec {
    fn default() -> Self {
        Self {
            in_channels: 1,
            out_channels: 1,
            kernel: 1,
            stride: 1,
            activation: Activation::None,
            normalization: Normalization::None,
            padding: Padding::Valid,
            skip: false,
            sharing: Sharing::Full,
            bias: false,
            compression: None,
        }
    }
}

impl ConvLayerSpec {
    /// Number of distinct kernels stored for this layer.
    pub fn num_kernels(&self) -> usize {
        match self.sharing {
            Sharing::Full => self.out_channels,
            Sharing::PerChannelShared => self.out_channels / self.in_channels.max(1),
        }
    }

    pub fn weight_shape(&self) -> [usize; 3] {
        match self.sharing {
            Sharing::Full => [self.out_channels, self.in_channels, self.kernel],
            Sharing::PerChannelShared => [self.num_kernels(), 1, self.kernel],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight_shape()[1] * self.kernel
    }

    fn validate(&self, index: usize) -> Result<()> {
        let fail = |m: String| Err(invalid(format!("layer {index}: {m}")));
        if self.kernel == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return fail("kernel, stride and channel counts must be positive".into());
        }
        if self.skip && (self.in_channels != self.out_channels || self.stride != 1) {
            return fail("skip connection requires equal channels and stride 1".into());
        }
        if self.sharing == Sharing::PerChannelShared && !self.out_channels.is_multiple_of(self.in_channels) {
            return fail(format!(
                "shared layer needs out_channels ({}) to be a multiple of in_channels ({})",
                self.out_channels, self.in_channels
            ));
        }
        if let Some(e) = self.compression {
            if !(e > 0.0 && e <= 1.0) {
                return fail(format!("compression exponent {e} outside (0, 1]"));
            }
        }
        if self.normalization == Normalization::LayerNorm && self.out_channels < 2 {
            return fail("layer norm needs at least two channels".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvStackConfig {
    pub name: String,
    pub layers: Vec<ConvLayerSpec>,
}

impl ConvStackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(invalid(format!("stack {:?} has no layers", self.name)));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i)?;
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(invalid(format!(
                    "layer {} outputs {} channels but layer {} expects {}",
                    i,
                    pair[0].out_channels,
                    i + 1,
                    pair[1].in_channels
                )));
            }
        }
        if self.layers[0].in_channels != 1 {
            return Err(invalid("the first layer must take the single waveform channel"));
        }
        Ok(())
    }

    pub fn final_feature_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.layer{layer}.weight", self.name)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.layer{layer}.bias", self.name)
    }

    pub fn norm_weight_name(&self, layer: usize) -> String {
        format!("{}.layer{layer}.norm.weight", self.name)
    }

    pub fn norm_bias_name(&self, layer: usize) -> String {
        format!("{}.layer{layer}.norm.bias", self.name)
    }
}

pub const SC_TF_FILTERS: usize = 150;
pub const SC_TF_KERNEL: usize = 256;
pub const SC_TF_STRIDE: usize = 10;
pub const SC_ENVELOPE_FILTERS: usize = 5;
pub const SC_ENVELOPE_KERNEL: usize = 40;
pub const SC_ENVELOPE_STRIDE: usize = 16;

/// Supervised-convolutional front-end with root compression `exponent`.
pub fn build_sc_config_with(compression_exponent: f64) -> ConvStackConfig {
    ConvStackConfig {
        name: "sc".into(),
        layers: vec![
            ConvLayerSpec {
                in_channels: 1,
                out_channels: SC_TF_FILTERS,
                kernel: SC_TF_KERNEL,
                stride: SC_TF_STRIDE,
                activation: Activation::Abs,
                bias: true,
                ..ConvLayerSpec::default()
            },
            ConvLayerSpec {
                in_channels: SC_TF_FILTERS,
                out_channels: SC_TF_FILTERS * SC_ENVELOPE_FILTERS,
                kernel: SC_ENVELOPE_KERNEL,
                stride: SC_ENVELOPE_STRIDE,
                activation: Activation::Abs,
                compression: Some(compression_exponent),
                normalization: Normalization::LayerNorm,
                sharing: Sharing::PerChannelShared,
                bias: true,
                ..ConvLayerSpec::default()
            },
        ],
    }
}

pub fn build_sc_config() -> ConvStackConfig {
    build_sc_config_with(0.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum W2vVariant {
    Regular,
    Large,
}

impl std::str::FromStr for W2vVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(W2vVariant::Regular),
            "large" => Ok(W2vVariant::Large),
            other => Err(invalid(format!(
                "unknown wav2vec variant {other:?} (expected \"regular\" or \"large\")"
            ))),
        }
    }
}

pub const W2V_CHANNELS: usize = 512;
const W2V_ENCODER: [(usize, usize); 5] = [(10, 5), (8, 4), (4, 2), (4, 2), (4, 2)];

pub fn build_w2v_config(variant: W2vVariant) -> ConvStackConfig {
    let c = W2V_CHANNELS;
    let mut layers = Vec::new();
    for (i, &(kernel, stride)) in W2V_ENCODER.iter().enumerate() {
        layers.push(ConvLayerSpec {
            in_channels: if i == 0 { 1 } else { c },
            out_channels: c,
            kernel,
            stride,
            activation: Activation::Relu,
            normalization: Normalization::GroupNormSingle,
            ..ConvLayerSpec::default()
        });
    }
    if variant == W2vVariant::Large {
        for _ in 0..2 {
            layers.push(ConvLayerSpec {
                in_channels: c,
                out_channels: c,
                kernel: 1,
                stride: 1,
                activation: Activation::Relu,
                normalization: Normalization::GroupNormSingle,
                skip: true,
                ..ConvLayerSpec::default()
            });
        }
    }
    let context_kernels: Vec<usize> = match variant {
        W2vVariant::Regular => vec![3; 9],
        W2vVariant::Large => (2..=13).collect(),
    };
    for kernel in context_kernels {
        layers.push(ConvLayerSpec {
            in_channels: c,
            out_channels: c,
            kernel,
            stride: 1,
            activation: Activation::Relu,
            padding: Padding::Same,
            skip: true,
            ..ConvLayerSpec::default()
        });
    }
    let name = match variant {
        W2vVariant::Regular => "w2v_regular",
        W2vVariant::Large => "w2v_large",
    };
    ConvStackConfig {
        name: name.into(),
        layers,
    }
}

/// Seeded random weights. Full layers draw uniformly with variance
/// `1 / fan_in`; shared layers get `N` unit-sum Hanning low-passes of
/// increasing width. Biases start at zero, norm affines at identity.
pub fn init_weights(cfg: &ConvStackConfig, seed: u64) -> Result<WeightArchive> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut archive = WeightArchive::new();
    for (i, layer) in cfg.layers.iter().enumerate() {
        let shape = layer.weight_shape();
        let data: Vec<f32> = match layer.sharing {
            Sharing::Full => {
                let bound = (3.0 / layer.fan_in() as f64).sqrt();
                (0..shape.iter().product::<usize>())
                    .map(|_| rng.gen_range(-bound..bound) as f32)
                    .collect()
            }
            Sharing::PerChannelShared => lowpass_bank(layer.num_kernels(), layer.kernel)?
                .iter()
                .map(|&v| v as f32)
                .collect(),
        };
        archive.insert(cfg.weight_name(i), shape.to_vec(), data)?;
        if layer.bias {
            let n = layer.num_kernels();
            archive.insert(cfg.bias_name(i), vec![n], vec![0.0; n])?;
        }
        if layer.normalization != Normalization::None {
            let n = layer.out_channels;
            archive.insert(cfg.norm_weight_name(i), vec![n], vec![1.0; n])?;
            archive.insert(cfg.norm_bias_name(i), vec![n], vec![0.0; n])?;
        }
    }
    Ok(archive)
}

/// `n` nonnegative unit-sum low-pass kernels of length `kernel`: centered
/// Hanning bumps whose widths grow from `kernel/n` to `kernel`.
pub fn lowpass_bank(n: usize, kernel: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n * kernel];
    for i in 0..n {
        let width = (kernel * (i + 1)).div_ceil(n).clamp(3.min(kernel), kernel);
        let taps = if width >= 2 { hanning_window(width)? } else { vec![1.0] };
        let sum: f64 = taps.iter().sum();
        let start = (kernel - width) / 2;
        for (j, t) in taps.iter().enumerate() {
            out[i * kernel + start + j] = t / sum;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct LoadedLayer {
    spec: ConvLayerSpec,
    weight: Array3<f64>,
    bias: Option<Array1<f64>>,
    norm: Option<(Array1<f64>, Array1<f64>)>,
}

fn load_vec(archive: &WeightArchive, name: &str, n: usize) -> Result<Option<Array1<f64>>> {
    if archive.get(name).is_none() {
        return Ok(None);
    }
    let t = archive.expect(name, &[n])?;
    Ok(Some(t.data.iter().map(|&v| v as f64).collect()))
}

/// A configuration bound to its weights. Immutable; `forward` may run
/// concurrently on different inputs.
#[derive(Debug, Clone)]
pub struct ConvStack {
    cfg: ConvStackConfig,
    layers: Vec<LoadedLayer>,
}

impl ConvStack {
    pub fn new(cfg: ConvStackConfig, weights: &WeightArchive) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.layers.len());
        for (i, spec) in cfg.layers.iter().enumerate() {
            let shape = spec.weight_shape();
            let t = weights.expect(&cfg.weight_name(i), &shape)?;
            if let Some(j) = t.data.iter().position(|v| !v.is_finite()) {
                return Err(invalid(format!("{}: value {j} is not finite", t.name)));
            }
            let weight = Array3::from_shape_vec(shape, t.data.iter().map(|&v| v as f64).collect())
                .expect("shape checked");
            let bias = load_vec(weights, &cfg.bias_name(i), spec.num_kernels())?;
            let norm = if spec.normalization == Normalization::None {
                None
            } else {
                let n = spec.out_channels;
                let gamma = load_vec(weights, &cfg.norm_weight_name(i), n)?
                    .unwrap_or_else(|| Array1::ones(n));
                let beta = load_vec(weights, &cfg.norm_bias_name(i), n)?
                    .unwrap_or_else(|| Array1::zeros(n));
                Some((gamma, beta))
            };
            layers.push(LoadedLayer {
                spec: spec.clone(),
                weight,
                bias,
                norm,
            });
        }
        Ok(Self { cfg, layers })
    }

    pub fn config(&self) -> &ConvStackConfig {
        &self.cfg
    }

    /// Minimum number of input samples accepted by [`ConvStack::forward`].
    pub fn min_samples(&self) -> usize {
        analysis::receptive_field(&self.cfg)
    }

    /// Runs the stack on a channel-major `1 × M` signal and returns the
    /// channel-major `F × T` activations.
    pub fn forward_signal(&self, signal: ndarray::ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut x = signal.to_owned();
        for layer in &self.layers {
            x = apply_layer(layer, x)?;
        }
        Ok(x)
    }

    pub fn forward(&self, w: &Waveform) -> Result<FeatureMatrix> {
        let needed = self.min_samples();
        if w.len() < needed {
            return Err(Error::TooShort {
                what: format!("conv stack {:?} (receptive field)", self.cfg.name),
                needed,
                got: w.len(),
            });
        }
        let out = self.forward_signal(w.as_signal())?;
        FeatureMatrix::new(
            out.t().as_standard_layout().into_owned(),
            analysis::subsampling_factor(&self.cfg),
        )
    }
}

/// Binds `weights` to `cfg` and runs one forward pass.
pub fn forward(cfg: &ConvStackConfig, weights: &WeightArchive, w: &Waveform) -> Result<FeatureMatrix> {
    ConvStack::new(cfg.clone(), weights)?.forward(w)
}

fn apply_layer(layer: &LoadedLayer, input: Array2<f64>) -> Result<Array2<f64>> {
    let spec = &layer.spec;
    let mut y = match spec.sharing {
        Sharing::Full => fir_conv1d(input.view(), layer.weight.view(), spec.stride, spec.padding)?,
        Sharing::PerChannelShared => {
            fir_conv1d_shared(input.view(), layer.weight.view(), spec.stride, spec.padding)?
        }
    };
    if let Some(bias) = &layer.bias {
        let n = bias.len();
        for (c, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
            let b = bias[c % n];
            row.mapv_inplace(|v| v + b);
        }
    }
    if spec.normalization == Normalization::GroupNormSingle {
        let (gamma, beta) = layer.norm.as_ref().expect("norm loaded");
        let n = y.len() as f64;
        let mean = y.sum() / n;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        for (c, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
            let (g, b) = (gamma[c], beta[c]);
            row.mapv_inplace(|v| (v - mean) * inv * g + b);
        }
    }
    if spec.activation != Activation::None {
        y.mapv_inplace(|v| spec.activation.apply(v));
    }
    if let Some(e) = spec.compression {
        y.mapv_inplace(|v| v.powf(e));
    }
    if spec.normalization == Normalization::LayerNorm {
        let (gamma, beta) = layer.norm.as_ref().expect("norm loaded");
        let c = y.nrows() as f64;
        for mut col in y.axis_iter_mut(Axis(1)) {
            let mean = col.sum() / c;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            for (ch, v) in col.iter_mut().enumerate() {
                *v = (*v - mean) * inv * gamma[ch] + beta[ch];
            }
        }
    }
    if spec.skip {
        y += &input;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(m: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..m).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap()
    }

    #[test]
    fn sc_shape_and_length() {
        let cfg = build_sc_config();
        cfg.validate().unwrap();
        assert_eq!(cfg.final_feature_dim(), 750);
        let weights = init_weights(&cfg, 3).unwrap();
        let stack = ConvStack::new(cfg, &weights).unwrap();
        let first = stack.forward_signal(noise(16000, 1).as_signal().slice(ndarray::s![.., ..])).unwrap();
        assert_eq!(first.dim(), (750, 96));
        let fm = stack.forward(&noise(16000, 1)).unwrap();
        assert_eq!((fm.num_frames(), fm.dim(), fm.frame_shift_samples()), (96, 750, 160));
    }

    #[test]
    fn w2v_layer_counts() {
        let r = build_w2v_config(W2vVariant::Regular);
        let l = build_w2v_config(W2vVariant::Large);
        r.validate().unwrap();
        l.validate().unwrap();
        assert_eq!(r.layers.len(), 14);
        assert_eq!(l.layers.len(), 19);
        assert!(r.layers.iter().chain(&l.layers).all(|x| x.activation == Activation::Relu));
        assert!(l.layers.iter().skip(1).all(|x| x.out_channels == 512 && x.in_channels == 512));
        assert!("huge".parse::<W2vVariant>().is_err());
        assert_eq!("large".parse::<W2vVariant>().unwrap(), W2vVariant::Large);
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = build_sc_config();
        assert_eq!(init_weights(&cfg, 9).unwrap(), init_weights(&cfg, 9).unwrap());
        assert_ne!(init_weights(&cfg, 9).unwrap(), init_weights(&cfg, 10).unwrap());
    }

    #[test]
    fn envelope_kernels_are_unit_sum_lowpasses() {
        let a = init_weights(&build_sc_config(), 1).unwrap();
        let t = a.get("sc.layer1.weight").unwrap();
        assert_eq!(t.shape, vec![5, 1, 40]);
        for k in t.data.chunks(40) {
            assert!(k.iter().all(|&v| v >= 0.0));
            let s: f64 = k.iter().map(|&v| v as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        // distinct widths
        let support: Vec<usize> = t.data.chunks(40).map(|k| k.iter().filter(|&&v| v > 0.0).count()).collect();
        assert!(support.windows(2).all(|p| p[1] > p[0]), "{support:?}");
    }

    #[test]
    fn fan_in_variance() {
        let cfg = build_w2v_config(W2vVariant::Regular);
        let a = init_weights(&cfg, 5).unwrap();
        for (i, layer) in cfg.layers.iter().enumerate() {
            let t = a.get(&cfg.weight_name(i)).unwrap();
            let n = t.data.len() as f64;
            let mean = t.data.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = t.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let want = 1.0 / layer.fan_in() as f64;
            assert!((var / want - 1.0).abs() < 0.2, "layer {i}: {var} vs {want}");
        }
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let cfg = build_sc_config();
        let mut a = WeightArchive::new();
        a.insert("sc.layer0.weight", vec![150, 1, 255], vec![0.0; 150 * 255]).unwrap();
        let err = ConvStack::new(cfg, &a).unwrap_err();
        match err {
            Error::ShapeMismatch { tensor, expected, actual } => {
                assert_eq!(tensor, "sc.layer0.weight");
                assert_eq!(expected, vec![150, 1, 256]);
                assert_eq!(actual, vec![150, 1, 255]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn too_short_input() {
        let cfg = build_sc_config();
        let a = init_weights(&cfg, 1).unwrap();
        let err = forward(&cfg, &a, &noise(600, 1)).unwrap_err();
        assert!(matches!(err, Error::TooShort { needed: 646, got: 600, .. }));
    }

    #[test]
    fn zero_weights_give_zero_activations() {
        let mut cfg = build_sc_config();
        cfg.layers[1].normalization = Normalization::None;
        let mut a = WeightArchive::new();
        for (i, l) in cfg.layers.iter().enumerate() {
            let s = l.weight_shape();
            a.insert(cfg.weight_name(i), s.to_vec(), vec![0.0; s.iter().product()]).unwrap();
        }
        let out = forward(&cfg, &a, &noise(4000, 2)).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_layer_specs() {
        let bad_skip = ConvStackConfig {
            name: "x".into(),
            layers: vec![ConvLayerSpec {
                out_channels: 2,
                skip: true,
                ..ConvLayerSpec::default()
            }],
        };
        assert!(bad_skip.validate().is_err());
        let bad_share = ConvStackConfig {
            name: "x".into(),
            layers: vec![
                ConvLayerSpec { out_channels: 2, ..ConvLayerSpec::default() },
                ConvLayerSpec {
                    in_channels: 2,
                    out_channels: 3,
                    sharing: Sharing::PerChannelShared,
                    ..ConvLayerSpec::default()
                },
            ],
        };
        assert!(bad_share.validate().is_err());
        let empty = ConvStackConfig { name: "e".into(), layers: vec![] };
        assert!(empty.validate().is_err());
    }
}
