use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rawfe::analysis::{self, FrontEnd, StackReport};
use rawfe::combine::{concat_features, concat_truncating, ChunkingConfig};
use rawfe::frontend::Extractor;
use rawfe::gammatone::GammatoneConfig;
use rawfe::io::{self as rio, FeatureFormat, WeightArchive};
use rawfe::ivector::{
    tile_ivector, IVector, IVectorExtractor, IVectorModel, CONTEXT_FRAMES, IVECTOR_DIM, LDA_DIM,
    VAD_THRESHOLD_DB,
};
use rawfe::FeatureMatrix;

/// Raw-waveform speech features on a 10 ms frame grid (16 kHz mono input).
#[derive(Debug, Parser)]
#[command(name = "rawfe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract features from WAV files.
    ///
    /// Gammatone defaults: 50 filters of 640 samples (order 4, 100-7500 Hz,
    /// Greenwood spacing), pre-emphasis alpha 1.0, 400-sample Hanning
    /// integration every 160 samples, 10th-root compression, 50 DCT
    /// coefficients, utterance-level channel standardization.
    /// SC and wav2vec stacks need --weights or --random-init.
    Extract(ExtractArgs),
    /// Print parameter counts, receptive fields and frame rates.
    Analyze(AnalyzeArgs),
    /// Concatenate feature files frame by frame.
    Combine(CombineArgs),
    /// Compute one i-vector per utterance.
    Ivector(IvectorArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FeatureType {
    Gt,
    Sc,
    W2vRegular,
    W2vLarge,
}

impl From<FeatureType> for FrontEnd {
    fn from(t: FeatureType) -> Self {
        match t {
            FeatureType::Gt => FrontEnd::Gammatone,
            FeatureType::Sc => FrontEnd::SupervisedConv,
            FeatureType::W2vRegular => FrontEnd::W2vRegular,
            FeatureType::W2vLarge => FrontEnd::W2vLarge,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Default)]
enum Format {
    /// u32 T, u32 F, u32 frame shift, then T*F little-endian f32.
    #[default]
    Raw,
    /// One frame per line, space separated.
    Text,
}

impl From<Format> for FeatureFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Raw => FeatureFormat::RawF32,
            Format::Text => FeatureFormat::Text,
        }
    }
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// Front-end to run.
    #[arg(long = "type", value_enum)]
    feature_type: FeatureType,
    /// WFE1 weight archive for sc / w2v front-ends.
    #[arg(long, conflicts_with = "random_init")]
    weights: Option<PathBuf>,
    /// Use seeded random weights instead of an archive.
    #[arg(long)]
    random_init: bool,
    /// Seed for --random-init.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Raw)]
    format: Format,
    /// Chunk size in seconds; enables chunked extraction (off by default).
    #[arg(long, requires = "chunk_shift")]
    chunk_size: Option<f64>,
    /// Chunk shift in seconds.
    #[arg(long, requires = "chunk_size")]
    chunk_shift: Option<f64>,
    /// Write one `<stem>.feat` per input into this directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// `INPUT OUTPUT`, or several inputs together with --out-dir.
    #[arg(required = true)]
    paths: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Front-end to analyze; all four when omitted.
    #[arg(long = "type", value_enum)]
    feature_type: Option<FeatureType>,
}

#[derive(Debug, Args)]
struct CombineArgs {
    /// Raw feature files, concatenated in the given order.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output path.
    #[arg(short, long)]
    output: PathBuf,
    /// i-vector file (1 × R raw feature file) tiled onto every frame.
    #[arg(long)]
    ivector: Option<PathBuf>,
    /// Cut all streams to the shortest one instead of failing.
    #[arg(long)]
    truncate_to_min: bool,
    #[arg(long, value_enum, default_value_t = Format::Raw)]
    format: Format,
}

#[derive(Debug, Args)]
struct IvectorArgs {
    /// WFE1 archive with ivec.* tensors.
    #[arg(long, conflicts_with = "toy_model")]
    model: Option<PathBuf>,
    /// Use a seeded toy model (8 components, 60-dim LDA, 200-dim i-vectors).
    #[arg(long)]
    toy_model: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Frames more than this many dB below the loudest frame are silence.
    #[arg(long, default_value_t = VAD_THRESHOLD_DB)]
    vad_threshold_db: f64,
    input: PathBuf,
    output: PathBuf,
}

/// Error that should exit with a usage status.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(a) => run_extract(a),
        Command::Analyze(a) => run_analyze(a),
        Command::Combine(a) => run_combine(a),
        Command::Ivector(a) => run_ivector(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn build_extractor(a: &ExtractArgs) -> Result<Extractor> {
    let fe = FrontEnd::from(a.feature_type);
    if fe == FrontEnd::Gammatone {
        return Ok(Extractor::gammatone(GammatoneConfig::default())?);
    }
    if let Some(path) = &a.weights {
        let archive = WeightArchive::read(path)?;
        return Ok(Extractor::with_weights(fe, &archive)?);
    }
    if a.random_init {
        return Ok(Extractor::random(fe, a.seed)?);
    }
    Err(usage(format!(
        "--type {} needs --weights <archive> or --random-init [--seed N]",
        fe.key()
    )))
}

fn io_pairs(a: &ExtractArgs) -> Result<Vec<(PathBuf, PathBuf)>> {
    match &a.out_dir {
        Some(dir) => Ok(a
            .paths
            .iter()
            .map(|p| {
                let stem = p.file_stem().unwrap_or(p.as_os_str());
                let mut out = dir.join(stem);
                out.set_extension("feat");
                (p.clone(), out)
            })
            .collect()),
        None if a.paths.len() == 2 => Ok(vec![(a.paths[0].clone(), a.paths[1].clone())]),
        None => Err(usage("expected INPUT OUTPUT, or inputs with --out-dir DIR")),
    }
}

/// Writes via a temporary sibling so a failed write never leaves a partial file.
fn write_atomically(fm: &FeatureMatrix, path: &Path, format: FeatureFormat) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    if let Err(e) = rio::write_features(fm, &tmp, format) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    fs::rename(&tmp, path).with_context(|| format!("moving output into place at {}", path.display()))
}

fn run_extract(a: ExtractArgs) -> Result<()> {
    let pairs = io_pairs(&a)?;
    let extractor = build_extractor(&a)?;
    let chunking = match (a.chunk_size, a.chunk_shift) {
        (Some(size), Some(shift)) => Some(ChunkingConfig::from_seconds(size, shift, false)?),
        _ => None,
    };
    let mut written = Vec::new();
    let result = (|| -> Result<()> {
        for (input, output) in &pairs {
            let w = rio::read_wav(input)?;
            let fm = match &chunking {
                Some(c) => extractor.extract_chunked(&w, c),
                None => extractor.extract(&w),
            }
            .with_context(|| format!("extracting {}", input.display()))?;
            write_atomically(&fm, output, a.format.into())?;
            written.push(output.clone());
            println!(
                "{}: T={} F={} shift={}",
                output.display(),
                fm.num_frames(),
                fm.dim(),
                fm.frame_shift_samples()
            );
        }
        Ok(())
    })();
    if result.is_err() {
        for p in &written {
            let _ = fs::remove_file(p);
        }
    }
    result
}

fn verdict(report: &StackReport, fe: FrontEnd) -> (String, String) {
    let params = match fe.reference_params() {
        Some((reference, tol)) => {
            let ok = analysis::within_relative(report.total_params, reference, tol);
            format!(
                "{} vs {} ±{}%",
                if ok { "PASS" } else { "FAIL" },
                reference,
                tol * 100.0
            )
        }
        None => "no reference".into(),
    };
    let (rf_ms, rf_tol) = fe.reference_receptive_field_ms();
    let ok = (report.receptive_field_ms - rf_ms).abs() <= rf_tol;
    let rf = format!("{} vs {rf_ms} ms ±{rf_tol}", if ok { "PASS" } else { "FAIL" });
    (params, rf)
}

fn run_analyze(a: AnalyzeArgs) -> Result<()> {
    let fronts: Vec<FrontEnd> = match a.feature_type {
        Some(t) => vec![t.into()],
        None => FrontEnd::ALL.to_vec(),
    };
    println!(
        "{:<12} {:>12} {:>22} {:>9} {:>10} {:>6} {:>5}  rf check",
        "type", "params", "params check", "rf", "rf_ms", "sub", "dim"
    );
    let reports: Vec<(FrontEnd, StackReport)> = fronts.iter().map(|&fe| (fe, fe.report())).collect();
    for (fe, r) in &reports {
        let (pv, rv) = verdict(r, *fe);
        println!(
            "{:<12} {:>12} {:>22} {:>9} {:>10.2} {:>6} {:>5}  {}",
            fe.key(),
            r.total_params,
            pv,
            r.receptive_field_samples,
            r.receptive_field_ms,
            r.subsampling_factor,
            r.feature_dim,
            rv
        );
    }
    println!();
    for (fe, r) in &reports {
        let k = fe.key();
        println!("{k}.params={}", r.total_params);
        for (name, n) in &r.per_layer_params {
            println!("{k}.params.{name}={n}");
        }
        if let Some((reference, tol)) = fe.reference_params() {
            println!("{k}.params_reference={reference}");
            println!("{k}.params_tolerance={tol}");
            let ok = analysis::within_relative(r.total_params, reference, tol);
            println!("{k}.params_verdict={}", if ok { "PASS" } else { "FAIL" });
        }
        println!("{k}.receptive_field_samples={}", r.receptive_field_samples);
        println!("{k}.receptive_field_ms={:.4}", r.receptive_field_ms);
        let (rf_ms, rf_tol) = fe.reference_receptive_field_ms();
        let ok = (r.receptive_field_ms - rf_ms).abs() <= rf_tol;
        println!("{k}.receptive_field_verdict={}", if ok { "PASS" } else { "FAIL" });
        println!("{k}.subsampling_factor={}", r.subsampling_factor);
        println!("{k}.frame_shift_ms={}", r.frame_shift_ms);
        println!("{k}.feature_dim={}", r.feature_dim);
        // 1000 LSTM cells × 4 gates per direction
        let delta = analysis::am_input_dim_delta(r.feature_dim, 50, 4000)?;
        println!("{k}.am_params_delta_vs_gt={delta}");
        if *fe == FrontEnd::Gammatone {
            println!(
                "NOTE: gt count = filter taps + integration window + fixed DCT matrix + normalization statistics; \
                 the 35k reference uses an unstated counting convention"
            );
        }
    }
    Ok(())
}

fn run_combine(a: CombineArgs) -> Result<()> {
    let streams_total = a.inputs.len() + usize::from(a.ivector.is_some());
    if streams_total < 2 {
        return Err(usage("combine needs at least two streams (feature files and/or --ivector)"));
    }
    let mut streams = Vec::new();
    for p in &a.inputs {
        streams.push(rio::read_features(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let shift = streams.first().map(|s| s.frame_shift_samples());
    let frames = streams.iter().map(|s| s.num_frames()).min();
    let refs: Vec<&FeatureMatrix> = streams.iter().collect();
    let (mut combined, dropped) = if refs.is_empty() {
        (None, 0)
    } else if a.truncate_to_min {
        let (c, d) = concat_truncating(&refs)?;
        (Some(c), d)
    } else {
        let c = concat_features(&refs).map_err(|e| {
            let lens: Vec<String> = a
                .inputs
                .iter()
                .zip(&streams)
                .map(|(p, s)| format!("{}: T={} shift={}", p.display(), s.num_frames(), s.frame_shift_samples()))
                .collect();
            anyhow::anyhow!("{e} ({})", lens.join(", "))
        })?;
        (Some(c), 0)
    };
    if dropped > 0 {
        eprintln!("warning: truncated streams to {} frames ({dropped} dropped)", frames.unwrap_or(0));
    }
    if let Some(p) = &a.ivector {
        let iv_fm = rio::read_features(p).with_context(|| format!("reading {}", p.display()))?;
        if iv_fm.num_frames() != 1 {
            bail!("{}: expected a single-row i-vector file, found {} rows", p.display(), iv_fm.num_frames());
        }
        let iv = IVector {
            values: iv_fm.frame(0).to_vec(),
            utterance_id: p.display().to_string(),
        };
        let t = combined.as_ref().map_or(1, |c| c.num_frames());
        let mut tiled = tile_ivector(&iv, t)?;
        if let Some(s) = shift {
            tiled = FeatureMatrix::new(tiled.into_values(), s)?;
        }
        combined = Some(match combined {
            Some(c) => concat_features(&[&c, &tiled])?,
            None => tiled,
        });
    }
    let combined = combined.expect("at least two streams");
    write_atomically(&combined, &a.output, a.format.into())?;
    println!(
        "{}: T={} F={} shift={}",
        a.output.display(),
        combined.num_frames(),
        combined.dim(),
        combined.frame_shift_samples()
    );
    Ok(())
}

fn run_ivector(a: IvectorArgs) -> Result<()> {
    let model = match (&a.model, a.toy_model) {
        (Some(p), _) => IVectorModel::from_archive(&WeightArchive::read(p)?)?,
        (None, true) => IVectorModel::toy(a.seed, 8, 50, CONTEXT_FRAMES, LDA_DIM, IVECTOR_DIM)?,
        (None, false) => return Err(usage("ivector needs --model <archive> or --toy-model [--seed N]")),
    };
    let extractor = IVectorExtractor::new(model, GammatoneConfig::default())?.with_vad_threshold(a.vad_threshold_db);
    let w = rio::read_wav(&a.input)?;
    let id = a
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let iv = extractor.extract(&w, &id)?;
    let dim = iv.dim();
    let fm = tile_ivector(&iv, 1)?;
    write_atomically(&fm, &a.output, FeatureFormat::RawF32)?;
    println!("{}: i-vector dim={dim} utterance={id}", a.output.display());
    Ok(())
}
