//! Frame-wise feature concatenation and audio chunking.

use std::ops::Range;

use ndarray::{concatenate, Axis};

use crate::dsp::{FeatureMatrix, Waveform, SAMPLE_RATE};
use crate::error::{invalid, Error, Result};

/// Appends the channels of every stream frame by frame. All streams must
/// have the same frame count and frame shift.
pub fn concat_features(streams: &[&FeatureMatrix]) -> Result<FeatureMatrix> {
    let first = streams
        .first()
        .ok_or_else(|| invalid("need at least one feature stream"))?;
    if streams.iter().any(|s| s.num_frames() != first.num_frames()) {
        return Err(Error::FrameCountMismatch(
            streams.iter().map(|s| s.num_frames()).collect(),
        ));
    }
    if streams
        .iter()
        .any(|s| s.frame_shift_samples() != first.frame_shift_samples())
    {
        return Err(Error::FrameShiftMismatch(
            streams.iter().map(|s| s.frame_shift_samples()).collect(),
        ));
    }
    let views: Vec<_> = streams.iter().map(|s| s.values()).collect();
    let values = concatenate(Axis(1), &views).expect("frame counts checked");
    FeatureMatrix::new(values, first.frame_shift_samples())
}

/// Like [`concat_features`], but streams whose frame counts differ are first
/// cut to the shortest one. Returns the number of frames dropped from the
/// longest stream.
pub fn concat_truncating(streams: &[&FeatureMatrix]) -> Result<(FeatureMatrix, usize)> {
    let min = streams
        .iter()
        .map(|s| s.num_frames())
        .min()
        .ok_or_else(|| invalid("need at least one feature stream"))?;
    let max = streams.iter().map(|s| s.num_frames()).max().unwrap_or(min);
    if max == min {
        return Ok((concat_features(streams)?, 0));
    }
    log::warn!(
        "feature streams have {:?} frames; truncating all to {min}",
        streams.iter().map(|s| s.num_frames()).collect::<Vec<_>>()
    );
    let cut = streams
        .iter()
        .map(|s| s.truncated(min))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&FeatureMatrix> = cut.iter().collect();
    Ok((concat_features(&refs)?, max - min))
}

/// Splits a concatenated matrix back into blocks of the given widths.
pub fn split_features(fm: &FeatureMatrix, dims: &[usize]) -> Result<Vec<FeatureMatrix>> {
    if dims.iter().sum::<usize>() != fm.dim() {
        return Err(invalid(format!(
            "block widths {dims:?} do not add up to feature dimension {}",
            fm.dim()
        )));
    }
    let mut start = 0;
    dims.iter()
        .map(|&d| {
            let block = fm.columns(start, start + d);
            start += d;
            block
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkingConfig {
    pub chunk_size: usize,
    pub chunk_shift: usize,
    /// Zero-pad the final chunk to `chunk_size`.
    pub pad_final: bool,
}

impl ChunkingConfig {
    pub fn new(chunk_size: usize, chunk_shift: usize, pad_final: bool) -> Result<Self> {
        if chunk_shift == 0 || chunk_shift > chunk_size {
            return Err(invalid(format!(
                "need 0 < chunk shift <= chunk size, got shift {chunk_shift} size {chunk_size}"
            )));
        }
        Ok(Self {
            chunk_size,
            chunk_shift,
            pad_final,
        })
    }

    /// Sizes given in seconds at 16 kHz, rounded to whole samples.
    pub fn from_seconds(size_s: f64, shift_s: f64, pad_final: bool) -> Result<Self> {
        if !(size_s > 0.0 && shift_s > 0.0) {
            return Err(invalid("chunk size and shift must be positive"));
        }
        let sr = SAMPLE_RATE as f64;
        Self::new((size_s * sr).round() as usize, (shift_s * sr).round() as usize, pad_final)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    /// First sample of the chunk in the source waveform.
    pub offset: usize,
    pub waveform: Waveform,
}

/// Cuts `w` into windows starting every `chunk_shift` samples, stopping at
/// the first window that reaches the end of the signal.
pub fn chunk_waveform(w: &Waveform, cfg: &ChunkingConfig) -> Vec<Chunk> {
    let m = w.len();
    let samples = w.samples();
    let mut chunks = Vec::new();
    let mut offset = 0;
    loop {
        let end = (offset + cfg.chunk_size).min(m);
        let mut data = samples[offset..end].to_vec();
        if cfg.pad_final {
            data.resize(cfg.chunk_size, 0.0);
        }
        chunks.push(Chunk {
            offset,
            waveform: Waveform::new(data).expect("non-empty finite slice"),
        });
        if offset + cfg.chunk_size >= m {
            break;
        }
        offset += cfg.chunk_shift;
    }
    chunks
}

/// Global frame indices `t` whose span `[t·frame_shift, t·frame_shift + RF)`
/// lies inside the chunk `[chunk_offset, chunk_offset + chunk_len)`.
pub fn frames_for_chunk(
    chunk_offset: usize,
    chunk_len: usize,
    frame_shift: usize,
    receptive_field: usize,
) -> Result<Range<usize>> {
    if frame_shift == 0 || receptive_field == 0 {
        return Err(invalid("frame shift and receptive field must be positive"));
    }
    if chunk_len < receptive_field {
        return Err(Error::ChunkTooShort {
            chunk_len,
            receptive_field,
        });
    }
    let first = chunk_offset.div_ceil(frame_shift);
    let end = (chunk_offset + chunk_len - receptive_field) / frame_shift + 1;
    Ok(first..end.max(first))
}
