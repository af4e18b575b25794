//! Per-utterance i-vectors from a loaded total-variability model.
//!
//! Speech frames are selected with an energy VAD, Gammatone features are
//! stacked over a symmetric context and projected with LDA, then the
//! posterior mean of the latent speaker factor is computed from Baum-Welch
//! statistics against the UBM and scaled to unit length.
//!
//! Archive layout: `ivec.ubm.weights` `[C]`, `ivec.ubm.means` `[C, D]`,
//! `ivec.ubm.vars` `[C, D]`, `ivec.T` `[C·D, R]` (row `c·D + d`),
//! `ivec.lda` `[D_in·context, D]`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{FeatureMatrix, Waveform};
use crate::error::{invalid, Error, Result};
use crate::gammatone::{GammatoneConfig, GammatoneExtractor};
use crate::io::WeightArchive;

pub const IVECTOR_DIM: usize = 200;
pub const LDA_DIM: usize = 60;
pub const CONTEXT_FRAMES: usize = 9;
pub const VAD_THRESHOLD_DB: f64 = 40.0;
/// Frames quieter than this (mean square, dB re full scale) never count as speech.
pub const VAD_FLOOR_DB: f64 = -100.0;
pub const FRAME_SHIFT: usize = 160;

/// Marks frames of `frame_shift` samples as speech when their log energy is
/// within `threshold_db` of the loudest frame. Returns [`Error::AllSilent`]
/// when no frame rises above [`VAD_FLOOR_DB`].
pub fn energy_vad(w: &Waveform, frame_shift: usize, threshold_db: f64) -> Result<Vec<bool>> {
    if frame_shift == 0 {
        return Err(invalid("VAD frame shift must be positive"));
    }
    if w.len() < frame_shift {
        return Err(Error::TooShort {
            what: "energy VAD".into(),
            needed: frame_shift,
            got: w.len(),
        });
    }
    if !(threshold_db >= 0.0) {
        return Err(invalid("VAD threshold must be a nonnegative dB value"));
    }
    let energies: Vec<f64> = w
        .samples()
        .chunks_exact(frame_shift)
        .map(|f| {
            let ms = f.iter().map(|x| x * x).sum::<f64>() / frame_shift as f64;
            10.0 * ms.max(1e-300).log10()
        })
        .collect();
    let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max <= VAD_FLOOR_DB {
        return Err(Error::AllSilent);
    }
    Ok(energies
        .iter()
        .map(|&e| e > VAD_FLOOR_DB && e > max - threshold_db)
        .collect())
}

/// Concatenates each frame with its `context / 2` neighbours on either side,
/// repeating the boundary frames at the edges.
pub fn stack_context(feats: ArrayView2<'_, f64>, context: usize) -> Result<Array2<f64>> {
    if context.is_multiple_of(2) {
        return Err(invalid(format!("context must be odd, got {context}")));
    }
    let (t, d) = feats.dim();
    if t == 0 {
        return Err(invalid("cannot stack context over zero frames"));
    }
    let half = (context / 2) as isize;
    let mut out = Array2::zeros((t, d * context));
    for i in 0..t {
        for (j, off) in (-half..=half).enumerate() {
            let src = (i as isize + off).clamp(0, t as isize - 1) as usize;
            out.slice_mut(s![i, j * d..(j + 1) * d]).assign(&feats.row(src));
        }
    }
    Ok(out)
}

/// UBM, total-variability matrix and LDA projection.
#[derive(Debug, Clone, PartialEq)]
pub struct IVectorModel {
    weights: Array1<f64>,
    means: Array2<f64>,
    variances: Array2<f64>,
    t_matrix: Array2<f64>,
    lda: Array2<f64>,
}

impl IVectorModel {
    pub fn new(
        weights: Array1<f64>,
        means: Array2<f64>,
        variances: Array2<f64>,
        t_matrix: Array2<f64>,
        lda: Array2<f64>,
    ) -> Result<Self> {
        let c = weights.len();
        let (mc, d) = means.dim();
        if c == 0 || d == 0 {
            return Err(invalid("UBM needs at least one component and dimension"));
        }
        if mc != c || variances.dim() != (c, d) {
            return Err(invalid(format!(
                "UBM shapes disagree: weights {c}, means {:?}, variances {:?}",
                means.dim(),
                variances.dim()
            )));
        }
        if t_matrix.nrows() != c * d || t_matrix.ncols() == 0 {
            return Err(invalid(format!(
                "total-variability matrix must be {}×R, got {:?}",
                c * d,
                t_matrix.dim()
            )));
        }
        if lda.ncols() != d || lda.nrows() == 0 {
            return Err(invalid(format!(
                "LDA must project to the UBM dimension {d}, got {:?}",
                lda.dim()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.sum() - 1.0).abs() > 1e-10 {
            return Err(invalid("UBM weights must be nonnegative and sum to 1"));
        }
        if variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(invalid("UBM variances must be positive"));
        }
        if means.iter().chain(t_matrix.iter()).chain(lda.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("i-vector model contains non-finite values"));
        }
        Ok(Self {
            weights,
            means,
            variances,
            t_matrix,
            lda,
        })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn ivector_dim(&self) -> usize {
        self.t_matrix.ncols()
    }

    pub fn lda(&self) -> ArrayView2<'_, f64> {
        self.lda.view()
    }

    /// Component posteriors of one frame; sums to one.
    pub fn posteriors(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let d = self.feature_dim();
        let log_norm = d as f64 * (2.0 * std::f64::consts::PI).ln();
        let mut ll: Array1<f64> = (0..self.num_components())
            .map(|c| {
                let mut acc = 0.0;
                let mut log_det = 0.0;
                for j in 0..d {
                    let v = self.variances[[c, j]];
                    let diff = x[j] - self.means[[c, j]];
                    acc += diff * diff / v;
                    log_det += v.ln();
                }
                self.weights[c].ln() - 0.5 * (acc + log_det + log_norm)
            })
            .collect();
        let max = ll.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        ll.mapv_inplace(|v| (v - max).exp());
        let sum = ll.sum();
        ll / sum
    }

    /// Zeroth- and centered first-order statistics over `feats` (`T × D`).
    pub fn accumulate(&self, feats: ArrayView2<'_, f64>) -> Result<BaumWelchStats> {
        let (t, d) = feats.dim();
        if t == 0 {
            return Err(invalid("need at least one frame for i-vector statistics"));
        }
        if d != self.feature_dim() {
            return Err(invalid(format!(
                "features have dimension {d}, model expects {}",
                self.feature_dim()
            )));
        }
        let c = self.num_components();
        let mut zeroth = Array1::zeros(c);
        let mut first = Array2::zeros((c, d));
        for x in feats.rows() {
            let gamma = self.posteriors(x);
            zeroth += &gamma;
            for k in 0..c {
                let g = gamma[k];
                for j in 0..d {
                    first[[k, j]] += g * (x[j] - self.means[[k, j]]);
                }
            }
        }
        Ok(BaumWelchStats { zeroth, first })
    }

    /// Posterior mean `(I + Tᵀ Σ⁻¹ N T)⁻¹ Tᵀ Σ⁻¹ F` before length
    /// normalization.
    pub fn solve(&self, stats: &BaumWelchStats) -> Result<IVectorSolution> {
        let (c, d, r) = (self.num_components(), self.feature_dim(), self.ivector_dim());
        let mut precision = DMatrix::<f64>::identity(r, r);
        let mut rhs = DVector::<f64>::zeros(r);
        for k in 0..c {
            let block = self.t_matrix.slice(s![k * d..(k + 1) * d, ..]);
            let n = stats.zeroth[k];
            for j in 0..d {
                let inv_var = 1.0 / self.variances[[k, j]];
                let row = block.row(j);
                let f = stats.first[[k, j]] * inv_var;
                let nw = n * inv_var;
                for a in 0..r {
                    rhs[a] += row[a] * f;
                    if nw != 0.0 {
                        let ra = row[a] * nw;
                        for b in a..r {
                            precision[(a, b)] += ra * row[b];
                        }
                    }
                }
            }
        }
        precision.fill_lower_triangle_with_upper_triangle();

        let scale = precision.trace() / r as f64;
        let mut jitter = None;
        let mut attempt = precision.clone();
        let mut eps = 0.0;
        for _ in 0..8 {
            if let Some(chol) = attempt.clone().cholesky() {
                let w = chol.solve(&rhs);
                if eps > 0.0 {
                    log::warn!("i-vector precision matrix regularized with jitter {eps:e}");
                    jitter = Some(eps);
                }
                return Ok(IVectorSolution {
                    values: w.iter().copied().collect(),
                    jitter,
                });
            }
            eps = if eps == 0.0 { 1e-12 * scale } else { eps * 100.0 };
            attempt = &precision + DMatrix::identity(r, r) * eps;
        }
        Err(invalid("i-vector precision matrix is not positive definite"))
    }

    pub fn to_archive(&self) -> Result<WeightArchive> {
        let mut a = WeightArchive::new();
        let put = |a: &mut WeightArchive, name: &str, shape: Vec<usize>, data: Vec<f64>| {
            a.insert_f64(name, shape, &data)
        };
        put(&mut a, "ivec.ubm.weights", vec![self.weights.len()], self.weights.to_vec())?;
        put(&mut a, "ivec.ubm.means", self.means.shape().to_vec(), self.means.iter().copied().collect())?;
        put(&mut a, "ivec.ubm.vars", self.variances.shape().to_vec(), self.variances.iter().copied().collect())?;
        put(&mut a, "ivec.T", self.t_matrix.shape().to_vec(), self.t_matrix.iter().copied().collect())?;
        put(&mut a, "ivec.lda", self.lda.shape().to_vec(), self.lda.iter().copied().collect())?;
        Ok(a)
    }

    /// Loads a model stored by [`IVectorModel::to_archive`]. Weights are
    /// renormalized after the round trip through f32.
    pub fn from_archive(a: &WeightArchive) -> Result<Self> {
        let get = |name: &str, ndim: usize| -> Result<(Vec<usize>, Vec<f64>)> {
            let t = a.get(name).ok_or_else(|| Error::MissingTensor(name.into()))?;
            if t.shape.len() != ndim {
                return Err(invalid(format!("{name}: expected {ndim} dimensions, found {:?}", t.shape)));
            }
            Ok((t.shape.clone(), t.data.iter().map(|&v| v as f64).collect()))
        };
        let (_, w) = get("ivec.ubm.weights", 1)?;
        let (ms, m) = get("ivec.ubm.means", 2)?;
        let (vs, v) = get("ivec.ubm.vars", 2)?;
        let (ts, t) = get("ivec.T", 2)?;
        let (ls, l) = get("ivec.lda", 2)?;
        let shape_err = |e: ndarray::ShapeError| invalid(e.to_string());
        let mut weights = Array1::from(w);
        let sum = weights.sum();
        if sum > 0.0 {
            weights /= sum;
        }
        Self::new(
            weights,
            Array2::from_shape_vec((ms[0], ms[1]), m).map_err(shape_err)?,
            Array2::from_shape_vec((vs[0], vs[1]), v).map_err(shape_err)?,
            Array2::from_shape_vec((ts[0], ts[1]), t).map_err(shape_err)?,
            Array2::from_shape_vec((ls[0], ls[1]), l).map_err(shape_err)?,
        )
    }

    /// Deterministic random model for running the pipeline without trained
    /// assets. `input_dim` is the per-frame Gammatone dimension.
    pub fn toy(seed: u64, components: usize, input_dim: usize, context: usize, feature_dim: usize, rank: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..components).map(|_| rng.gen_range(0.5..1.5)).collect();
        let total: f64 = raw.iter().sum();
        let weights = Array1::from_iter(raw.iter().map(|w| w / total));
        let means = Array2::from_shape_fn((components, feature_dim), |_| rng.gen_range(-1.0..1.0));
        let variances = Array2::from_shape_fn((components, feature_dim), |_| rng.gen_range(0.5..2.0));
        let t_scale = 1.0 / (feature_dim as f64).sqrt();
        let t_matrix = Array2::from_shape_fn((components * feature_dim, rank), |_| rng.gen_range(-t_scale..t_scale));
        let lda_scale = (3.0 / (input_dim * context) as f64).sqrt();
        let lda = Array2::from_shape_fn((input_dim * context, feature_dim), |_| rng.gen_range(-lda_scale..lda_scale));
        Self::new(weights, means, variances, t_matrix, lda)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaumWelchStats {
    /// `N_c`, one per component.
    pub zeroth: Array1<f64>,
    /// `F_c = Σ_t γ_t(c)(x_t − m_c)`, `C × D`.
    pub first: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IVectorSolution {
    pub values: Vec<f64>,
    /// Diagonal loading added when the precision matrix was not numerically
    /// positive definite.
    pub jitter: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IVector {
    pub values: Vec<f64>,
    pub utterance_id: String,
}

impl IVector {
    /// Scales `values` to unit Euclidean norm.
    pub fn normalized(values: Vec<f64>, utterance_id: impl Into<String>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::DegenerateVector);
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
            utterance_id: utterance_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// i-vector for already projected speech frames (`T × D`).
pub fn extract_ivector(feats: ArrayView2<'_, f64>, model: &IVectorModel, utterance_id: &str) -> Result<IVector> {
    let stats = model.accumulate(feats)?;
    let solution = model.solve(&stats)?;
    IVector::normalized(solution.values, utterance_id)
}

/// Repeats the i-vector on every one of `frames` 10 ms frames.
pub fn tile_ivector(iv: &IVector, frames: usize) -> Result<FeatureMatrix> {
    if frames == 0 {
        return Err(invalid("cannot tile an i-vector over zero frames"));
    }
    let row = ArrayView1::from(&iv.values);
    let values = Array2::from_shape_fn((frames, iv.dim()), |(_, j)| row[j]);
    FeatureMatrix::new(values, FRAME_SHIFT)
}

/// Waveform-to-i-vector pipeline.
#[derive(Debug, Clone)]
pub struct IVectorExtractor {
    model: IVectorModel,
    gammatone: GammatoneExtractor,
    context: usize,
    vad_threshold_db: f64,
}

impl IVectorExtractor {
    pub fn new(model: IVectorModel, gammatone: GammatoneConfig) -> Result<Self> {
        let gt_dim = gammatone.num_dct_coeffs;
        let rows = model.lda().nrows();
        if !rows.is_multiple_of(gt_dim) || (rows / gt_dim).is_multiple_of(2) {
            return Err(invalid(format!(
                "LDA input dimension {rows} is not an odd multiple of the Gammatone dimension {gt_dim}"
            )));
        }
        Ok(Self {
            context: rows / gt_dim,
            model,
            gammatone: GammatoneExtractor::new(gammatone)?,
            vad_threshold_db: VAD_THRESHOLD_DB,
        })
    }

    pub fn with_vad_threshold(mut self, threshold_db: f64) -> Self {
        self.vad_threshold_db = threshold_db;
        self
    }

    pub fn context(&self) -> usize {
        self.context
    }

    pub fn model(&self) -> &IVectorModel {
        &self.model
    }

    /// Projected speech features that feed the statistics.
    pub fn speech_features(&self, w: &Waveform) -> Result<Array2<f64>> {
        let mask = energy_vad(w, FRAME_SHIFT, self.vad_threshold_db)?;
        let speech: Vec<f64> = w
            .samples()
            .chunks_exact(FRAME_SHIFT)
            .zip(&mask)
            .filter(|(_, &keep)| keep)
            .flat_map(|(f, _)| f.iter().copied())
            .collect();
        let speech = Waveform::new(speech)?;
        let gt = self.gammatone.extract(&speech, None)?;
        let stacked = stack_context(gt.values(), self.context)?;
        Ok(stacked.dot(&self.model.lda))
    }

    pub fn extract(&self, w: &Waveform, utterance_id: &str) -> Result<IVector> {
        let feats = self.speech_features(w)?;
        extract_ivector(feats.view(), &self.model, utterance_id)
    }
}

/// Fits an LDA projection on labeled frames (`T × D`), returning the
/// `D × out_dim` matrix of leading discriminant directions. Intended for
/// building small test models.
pub fn fit_lda(feats: ArrayView2<'_, f64>, labels: &[usize], out_dim: usize) -> Result<Array2<f64>> {
    let (t, d) = feats.dim();
    if labels.len() != t || t == 0 {
        return Err(invalid("need one label per frame"));
    }
    if out_dim == 0 || out_dim > d {
        return Err(invalid(format!("LDA output dimension must be in 1..={d}")));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let global = feats.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let mut sw = DMatrix::<f64>::zeros(d, d);
    let mut sb = DMatrix::<f64>::zeros(d, d);
    for k in 0..classes {
        let rows: Vec<usize> = (0..t).filter(|&i| labels[i] == k).collect();
        if rows.is_empty() {
            continue;
        }
        let mut mean = DVector::<f64>::zeros(d);
        for &i in &rows {
            mean += DVector::from_iterator(d, feats.row(i).iter().copied());
        }
        mean /= rows.len() as f64;
        for &i in &rows {
            let diff = DVector::from_iterator(d, feats.row(i).iter().copied()) - &mean;
            sw += &diff * diff.transpose();
        }
        let between = &mean - DVector::from_iterator(d, global.iter().copied());
        sb += (&between * between.transpose()) * rows.len() as f64;
    }
    let ridge = 1e-9 * (sw.trace() / d as f64).max(1e-12);
    sw += DMatrix::identity(d, d) * ridge;
    let chol = sw
        .cholesky()
        .ok_or_else(|| invalid("within-class scatter is not positive definite"))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| invalid("within-class scatter is singular"))?;
    let whitened = &l_inv * &sb * l_inv.transpose();
    let eig = SymmetricEigen::new((&whitened + whitened.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let back = l_inv.transpose();
    let mut out = Array2::zeros((d, out_dim));
    for (j, &idx) in order.iter().take(out_dim).enumerate() {
        let v = &back * eig.eigenvectors.column(idx);
        for i in 0..d {
            out[[i, j]] = v[i];
        }
    }
    Ok(out)
}
