//! Static arithmetic over conv-stack configurations: parameter counts,
//! receptive fields, subsampling and output lengths.

use std::fmt;

use crate::convstack::{build_sc_config, build_w2v_config, ConvLayerSpec, ConvStackConfig, Normalization, W2vVariant};
use crate::dsp::{conv_output_len, same_left_pad, Padding, SAMPLE_RATE};
use crate::error::{invalid, Result};
use crate::gammatone::GammatoneConfig;

/// Input samples that influence one output frame.
pub fn receptive_field(cfg: &ConvStackConfig) -> usize {
    let mut rf = 1;
    let mut jump = 1;
    for l in &cfg.layers {
        rf += (l.kernel - 1) * jump;
        jump *= l.stride;
    }
    rf
}

/// Input samples per output frame.
pub fn subsampling_factor(cfg: &ConvStackConfig) -> usize {
    cfg.layers.iter().map(|l| l.stride).product()
}

/// Number of output frames for `m` input samples, or `None` if a valid
/// layer runs out of input.
pub fn output_len(cfg: &ConvStackConfig, m: usize) -> Option<usize> {
    cfg.layers
        .iter()
        .try_fold(m, |len, l| conv_output_len(len, l.kernel, l.stride, l.padding))
}

/// Samples of left context that frame 0 reaches before the input start
/// (nonzero only when same-padded layers are present). Frame `t` depends on
/// samples `[t·S − lead, t·S − lead + RF)` with `S` the subsampling factor.
pub fn leading_context(cfg: &ConvStackConfig, m: usize) -> Option<usize> {
    let mut lead = 0;
    let mut jump = 1;
    let mut len = m;
    for l in &cfg.layers {
        if l.padding == Padding::Same {
            lead += same_left_pad(len, l.kernel, l.stride) * jump;
        }
        len = conv_output_len(len, l.kernel, l.stride, l.padding)?;
        jump *= l.stride;
    }
    Some(lead)
}

pub fn layer_params(l: &ConvLayerSpec, include_norm: bool) -> usize {
    let weights: usize = l.weight_shape().iter().product();
    let bias = if l.bias { l.num_kernels() } else { 0 };
    let norm = if include_norm && l.normalization != Normalization::None {
        2 * l.out_channels
    } else {
        0
    };
    weights + bias + norm
}

pub fn param_count(cfg: &ConvStackConfig, include_norm: bool) -> usize {
    cfg.layers.iter().map(|l| layer_params(l, include_norm)).sum()
}

/// Parameter delta of a bidirectional first recurrent layer whose input
/// dimension changes from `feature_dim_b` to `feature_dim_a`.
///
/// `first_layer_units` is the number of input-weight rows per direction,
/// e.g. 4000 for 1000 LSTM cells with four gates.
pub fn am_input_dim_delta(feature_dim_a: usize, feature_dim_b: usize, first_layer_units: usize) -> Result<i64> {
    if feature_dim_a == 0 || feature_dim_b == 0 || first_layer_units == 0 {
        return Err(invalid("feature dimensions and unit count must be positive"));
    }
    Ok((feature_dim_a as i64 - feature_dim_b as i64) * first_layer_units as i64 * 2)
}

fn samples_to_ms(samples: usize) -> f64 {
    samples as f64 * 1000.0 / SAMPLE_RATE as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackReport {
    pub name: String,
    pub total_params: usize,
    pub per_layer_params: Vec<(String, usize)>,
    pub receptive_field_samples: usize,
    pub receptive_field_ms: f64,
    pub subsampling_factor: usize,
    pub frame_shift_ms: f64,
    pub feature_dim: usize,
}

pub fn stack_report(cfg: &ConvStackConfig, include_norm: bool) -> StackReport {
    let per_layer_params: Vec<(String, usize)> = cfg
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| (format!("layer{i}"), layer_params(l, include_norm)))
        .collect();
    let rf = receptive_field(cfg);
    let sub = subsampling_factor(cfg);
    StackReport {
        name: cfg.name.clone(),
        total_params: per_layer_params.iter().map(|(_, n)| n).sum(),
        per_layer_params,
        receptive_field_samples: rf,
        receptive_field_ms: samples_to_ms(rf),
        subsampling_factor: sub,
        frame_shift_ms: samples_to_ms(sub),
        feature_dim: cfg.final_feature_dim(),
    }
}

/// Gammatone accounting: filter taps, integration window, the fixed DCT
/// matrix and the per-channel normalization statistics.
pub fn gammatone_report(cfg: &GammatoneConfig) -> StackReport {
    let stack = cfg.stack_config();
    let mut report = stack_report(&stack, false);
    report.per_layer_params = vec![
        ("filters".into(), cfg.num_filters * cfg.filter_length),
        ("window".into(), cfg.window_width),
        ("dct".into(), cfg.num_dct_coeffs * cfg.num_filters),
        ("norm".into(), 2 * cfg.num_dct_coeffs),
    ];
    report.total_params = report.per_layer_params.iter().map(|(_, n)| n).sum();
    report.feature_dim = cfg.num_dct_coeffs;
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrontEnd {
    Gammatone,
    SupervisedConv,
    W2vRegular,
    W2vLarge,
}

impl FrontEnd {
    pub const ALL: [FrontEnd; 4] = [
        FrontEnd::Gammatone,
        FrontEnd::SupervisedConv,
        FrontEnd::W2vRegular,
        FrontEnd::W2vLarge,
    ];

    pub fn key(self) -> &'static str {
        match self {
            FrontEnd::Gammatone => "gt",
            FrontEnd::SupervisedConv => "sc",
            FrontEnd::W2vRegular => "w2v-regular",
            FrontEnd::W2vLarge => "w2v-large",
        }
    }

    /// Reference front-end parameter count and relative tolerance.
    pub fn reference_params(self) -> Option<(usize, f64)> {
        match self {
            FrontEnd::Gammatone => Some((35_000, 0.10)),
            FrontEnd::SupervisedConv => Some((40_000, 0.02)),
            FrontEnd::W2vRegular => None,
            FrontEnd::W2vLarge => Some((29_000_000, 0.02)),
        }
    }

    /// Reference receptive field in ms and absolute tolerance in ms.
    pub fn reference_receptive_field_ms(self) -> (f64, f64) {
        match self {
            FrontEnd::Gammatone => (65.0, 2.0),
            FrontEnd::SupervisedConv => (40.0, 1.0),
            FrontEnd::W2vRegular => (210.0, 1.0),
            FrontEnd::W2vLarge => (810.0, 1.0),
        }
    }

    /// Conv-stack view of the front-end (Gammatone stops before the DCT).
    pub fn stack_config(self) -> ConvStackConfig {
        match self {
            FrontEnd::Gammatone => GammatoneConfig::default().stack_config(),
            FrontEnd::SupervisedConv => build_sc_config(),
            FrontEnd::W2vRegular => build_w2v_config(W2vVariant::Regular),
            FrontEnd::W2vLarge => build_w2v_config(W2vVariant::Large),
        }
    }

    pub fn report(self) -> StackReport {
        match self {
            FrontEnd::Gammatone => gammatone_report(&GammatoneConfig::default()),
            other => stack_report(&other.stack_config(), true),
        }
    }
}

impl fmt::Display for FrontEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl std::str::FromStr for FrontEnd {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        FrontEnd::ALL
            .into_iter()
            .find(|fe| fe.key() == s)
            .ok_or_else(|| invalid(format!("unknown feature type {s:?} (expected gt, sc, w2v-regular or w2v-large)")))
    }
}

/// Whether `value` lies within `rel_tol` of `reference`.
pub fn within_relative(value: usize, reference: usize, rel_tol: f64) -> bool {
    ((value as f64 - reference as f64) / reference as f64).abs() <= rel_tol
}
