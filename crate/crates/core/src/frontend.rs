//! One handle over every front-end, plus chunked extraction.

use crate::analysis::{self, FrontEnd};
use crate::combine::{chunk_waveform, frames_for_chunk, ChunkingConfig};
use crate::convstack::{init_weights, ConvStack};
use crate::dsp::{FeatureMatrix, Waveform};
use crate::error::{invalid, Error, Result};
use crate::gammatone::{GammatoneConfig, GammatoneExtractor};
use crate::io::WeightArchive;
use ndarray::{s, Array2};

#[derive(Debug, Clone)]
pub enum Extractor {
    Gammatone(GammatoneExtractor),
    Conv(ConvStack),
}

impl Extractor {
    pub fn gammatone(cfg: GammatoneConfig) -> Result<Self> {
        Ok(Self::Gammatone(GammatoneExtractor::new(cfg)?))
    }

    /// Binds a conv front-end to stored weights.
    pub fn with_weights(fe: FrontEnd, weights: &WeightArchive) -> Result<Self> {
        match fe {
            FrontEnd::Gammatone => Self::gammatone(GammatoneConfig::default()),
            _ => Ok(Self::Conv(ConvStack::new(fe.stack_config(), weights)?)),
        }
    }

    /// Conv front-end with seeded random weights.
    pub fn random(fe: FrontEnd, seed: u64) -> Result<Self> {
        match fe {
            FrontEnd::Gammatone => Self::gammatone(GammatoneConfig::default()),
            _ => {
                let cfg = fe.stack_config();
                let weights = init_weights(&cfg, seed)?;
                Ok(Self::Conv(ConvStack::new(cfg, &weights)?))
            }
        }
    }

    pub fn extract(&self, w: &Waveform) -> Result<FeatureMatrix> {
        match self {
            Self::Gammatone(g) => g.extract(w, None),
            Self::Conv(c) => c.forward(w),
        }
    }

    pub fn receptive_field(&self) -> usize {
        match self {
            Self::Gammatone(g) => g.config().receptive_field(),
            Self::Conv(c) => analysis::receptive_field(c.config()),
        }
    }

    pub fn frame_shift(&self) -> usize {
        match self {
            Self::Gammatone(g) => g.config().window_shift,
            Self::Conv(c) => analysis::subsampling_factor(c.config()),
        }
    }

    /// Frames produced for `m` samples, or `None` if `m` is too short.
    pub fn num_frames(&self, m: usize) -> Option<usize> {
        if m < self.receptive_field() {
            return None;
        }
        match self {
            Self::Gammatone(g) => g.config().num_frames(m),
            Self::Conv(c) => analysis::output_len(c.config(), m),
        }
    }

    fn leading_context(&self, m: usize) -> usize {
        match self {
            Self::Gammatone(_) => 0,
            Self::Conv(c) => analysis::leading_context(c.config(), m).unwrap_or(0),
        }
    }

    /// Extracts chunk by chunk and stitches the frames back onto the
    /// full-utterance grid. Inside the utterance each frame is taken from a
    /// chunk that contains its whole receptive field; frames at the
    /// utterance edges come from the first and last chunk. The final chunk
    /// is always zero-padded to full size.
    pub fn extract_chunked(&self, w: &Waveform, cfg: &ChunkingConfig) -> Result<FeatureMatrix> {
        let shift = self.frame_shift();
        if !cfg.chunk_shift.is_multiple_of(shift) {
            return Err(invalid(format!(
                "chunk shift {} is not a multiple of the frame shift {shift}",
                cfg.chunk_shift
            )));
        }
        let total = self.num_frames(w.len()).ok_or_else(|| Error::TooShort {
            what: "chunked extraction".into(),
            needed: self.receptive_field(),
            got: w.len(),
        })?;
        let rf = self.receptive_field();
        let lead = self.leading_context(cfg.chunk_size);
        let padded = ChunkingConfig {
            pad_final: true,
            ..*cfg
        };
        let chunks = chunk_waveform(w, &padded);
        let mut out: Option<Array2<f64>> = None;
        let mut next = 0;
        for (i, chunk) in chunks.iter().enumerate() {
            let range = frames_for_chunk(chunk.offset + lead, cfg.chunk_size, shift, rf)?;
            let lo = if i == 0 { 0 } else { range.start };
            let hi = if i + 1 == chunks.len() { total } else { range.end.min(total) };
            if lo > next {
                return Err(invalid(format!(
                    "chunk overlap too small: frames {next}..{lo} are not covered by any chunk"
                )));
            }
            if hi <= next {
                continue;
            }
            let feats = self.extract(&chunk.waveform)?;
            let base = chunk.offset / shift;
            let local = (next - base)..(hi - base).min(feats.num_frames());
            if local.is_empty() {
                continue;
            }
            let values = out.get_or_insert_with(|| Array2::zeros((total, feats.dim())));
            values
                .slice_mut(s![next..base + local.end, ..])
                .assign(&feats.values().slice(s![local.clone(), ..]));
            next = base + local.end;
        }
        if next != total {
            return Err(invalid(format!("chunked extraction covered {next} of {total} frames")));
        }
        FeatureMatrix::new(out.expect("at least one chunk"), shift)
    }
}
