//! vfp: video source attribution by sensor pattern noise.
//!
//! Subcommands compose the three-phase pipeline: fingerprint extraction
//! from decoded frames plus the decoder's coefficient dump, pairwise
//! correlation of (optionally enhanced) fingerprints, and clustering
//! with evaluation against ground truth. `synth` generates labeled
//! synthetic datasets for end-to-end verification; `pipeline` runs the
//! whole chain off a dataset manifest.
//!
//! Exit codes: 0 ok, 1 usage, 2 data error, 3 internal.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vfp_core::clustering::{self, ClusterResult, ClustersDoc};
use vfp_core::coeffxml::{self, ParseMode};
use vfp_core::denoise::{denoiser_by_name, Denoiser, DenoiserParams, WAVELET_WIENER};
use vfp_core::fingerprint::{
    enhance, extract_video_fingerprint, read_fingerprint_file, write_fingerprint,
    EnhancerParams, GAMMA3,
};
use vfp_core::frameio;
use vfp_core::metrics::{
    evaluate, EvalReport, GroundTruth, TprDenominator, TprOptions, TprRule,
};
use vfp_core::similarity::{self, SimilarityMatrix};
use vfp_core::synth::{
    generate_dataset, Manifest, SceneModel, SynthConfig, VideosPerDevice,
};
use vfp_core::Fingerprint32;

#[derive(Parser)]
#[command(name = "vfp", version, about = "Video source attribution by sensor pattern noise")]
struct Cli {
    /// Worker threads (default: available parallelism). Results do not
    /// depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print progress to stderr.
    #[arg(long, global = true)]
    verbose: bool,

    /// Seed for dataset generation.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a raw fingerprint from frames and a coefficient dump.
    Extract(ExtractArgs),
    /// Apply a scene-suppression enhancer to a raw fingerprint.
    Enhance(EnhanceArgs),
    /// Pairwise-correlate fingerprints into a similarity matrix.
    Correlate(CorrelateArgs),
    /// Group videos by device over a similarity matrix.
    Cluster(ClusterArgs),
    /// Score a clustering (and optional ROC) against ground truth.
    Evaluate(EvaluateArgs),
    /// Generate a labeled synthetic dataset.
    Synth(SynthArgs),
    /// Run extract -> enhance -> correlate -> cluster -> evaluate.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct DenoiserArgs {
    /// Noise floor variance sigma0^2 on the 0-255 scale.
    #[arg(long, default_value_t = 9.0)]
    sigma0: f64,

    /// Wavelet decomposition levels.
    #[arg(long, default_value_t = 4)]
    levels: usize,

    /// Local-variance window sizes (odd, comma separated).
    #[arg(long, default_value = "3,5,7,9", value_parser = parse_usize_list)]
    windows: UsizeList,

    /// Denoiser registry name.
    #[arg(long, default_value = WAVELET_WIENER)]
    denoiser: String,
}

impl DenoiserArgs {
    fn build(&self) -> Result<Box<dyn Denoiser<f32>>, AppError> {
        let params = DenoiserParams::new(self.sigma0, self.levels, self.windows.0.clone())
            .map_err(|e| AppError::Usage(format!("denoise: {e}")))?;
        denoiser_by_name(&self.denoiser, params)
            .map_err(|e| AppError::Usage(format!("denoise: {e}")))
    }
}

#[derive(Args)]
struct ExtractArgs {
    /// Directory holding the decoded frames.
    #[arg(long)]
    frames: PathBuf,

    /// Frame filename template with an {index} placeholder.
    #[arg(long)]
    pattern: String,

    /// Decoder coefficient dump (XML).
    #[arg(long)]
    coeffs: PathBuf,

    /// Declared frame width in pixels.
    #[arg(long)]
    width: usize,

    /// Declared frame height in pixels.
    #[arg(long)]
    height: usize,

    /// Video id recorded in reports (default: output file stem).
    #[arg(long)]
    id: Option<String>,

    /// Warn and pad instead of erroring on incomplete macroblock grids.
    #[arg(long)]
    lenient: bool,

    #[command(flatten)]
    denoiser: DenoiserArgs,

    /// Output fingerprint file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnhanceArgs {
    /// Input raw fingerprint file.
    #[arg(long = "in")]
    input: PathBuf,

    /// Enhancer registry name.
    #[arg(long, default_value = GAMMA3)]
    enhancer: String,

    /// Attenuation cutover alpha.
    #[arg(long, default_value_t = 20.0)]
    alpha: f64,

    /// Output enhanced fingerprint file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CorrelateArgs {
    /// Fingerprint files (ids taken from file stems).
    #[arg(long, num_args = 1.., required = true)]
    fps: Vec<PathBuf>,

    /// Output similarity matrix CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    /// Similarity matrix CSV.
    #[arg(long)]
    matrix: PathBuf,

    /// Fixed cluster count; omit to select k by silhouette.
    #[arg(long)]
    k: Option<usize>,

    /// Output clusters JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// clusters.json produced by the cluster subcommand.
    #[arg(long)]
    clusters: PathBuf,

    /// Ground-truth labels CSV (video_id,device_id).
    #[arg(long)]
    labels: PathBuf,

    /// Similarity matrix CSV; enables the pairwise ROC/AUC.
    #[arg(long)]
    matrix: Option<PathBuf>,

    /// Score mixed groups by their predominant device instead of 0.
    #[arg(long)]
    majority_tpr: bool,

    /// Divide group TPRs by this fixed count instead of each device's
    /// true total.
    #[arg(long)]
    fixed_denominator: Option<u32>,

    /// Output report JSON.
    #[arg(long)]
    out: PathBuf,

    /// Output ROC points CSV (requires --matrix).
    #[arg(long)]
    roc: Option<PathBuf>,
}

impl EvaluateArgs {
    fn tpr_options(&self) -> TprOptions {
        TprOptions {
            rule: if self.majority_tpr { TprRule::Majority } else { TprRule::Pure },
            denominator: match self.fixed_denominator {
                Some(n) => TprDenominator::Fixed(n),
                None => TprDenominator::DeviceTotal,
            },
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Number of devices.
    #[arg(long, default_value_t = 8)]
    devices: usize,

    /// Videos per device: one count or a per-device comma list.
    #[arg(long, default_value = "10", value_parser = parse_usize_list)]
    videos: UsizeList,

    /// Frames per video.
    #[arg(long, default_value_t = 24)]
    frames: usize,

    /// Frame width in pixels.
    #[arg(long, default_value_t = 640)]
    width: usize,

    /// Frame height in pixels.
    #[arg(long, default_value_t = 480)]
    height: usize,

    /// Multiplicative fingerprint strength.
    #[arg(long, default_value_t = 0.08)]
    strength: f64,

    /// Fraction of macroblocks whose AC coefficients are zeroed.
    #[arg(long, default_value_t = 0.3)]
    dead_frac: f64,

    /// Scene model: flat, gradient or textured.
    #[arg(long, default_value = "textured", value_parser = parse_scene)]
    scene: SceneModel,

    /// Shot noise variance.
    #[arg(long, default_value_t = 4.0)]
    shot_noise: f64,

    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

fn parse_scene(s: &str) -> Result<SceneModel, String> {
    s.parse()
}

#[derive(Args)]
struct PipelineArgs {
    /// Dataset manifest (as written by the synth subcommand).
    #[arg(long)]
    manifest: PathBuf,

    /// Output directory for all pipeline artifacts.
    #[arg(long)]
    out_dir: PathBuf,

    /// Enhancer alpha values; more than one runs a sweep with suffixed
    /// artifact names.
    #[arg(long, default_value = "20", value_parser = parse_f64_list)]
    alpha: F64List,

    /// Enhancer registry name.
    #[arg(long, default_value = GAMMA3)]
    enhancer: String,

    /// Skip enhancement and correlate raw fingerprints.
    #[arg(long)]
    no_enhance: bool,

    /// Fixed cluster count; omit to select k by silhouette.
    #[arg(long)]
    k: Option<usize>,

    /// Score mixed groups by their predominant device instead of 0.
    #[arg(long)]
    majority_tpr: bool,

    /// Divide group TPRs by this fixed count instead of each device's
    /// true total.
    #[arg(long)]
    fixed_denominator: Option<u32>,

    /// Warn and pad instead of erroring on incomplete macroblock grids.
    #[arg(long)]
    lenient: bool,

    #[command(flatten)]
    denoiser: DenoiserArgs,
}

#[derive(Clone)]
struct UsizeList(Vec<usize>);

fn parse_usize_list(s: &str) -> Result<UsizeList, String> {
    let values = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("bad integer {t:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("empty list".into());
    }
    Ok(UsizeList(values))
}

#[derive(Clone)]
struct F64List(Vec<f64>);

fn parse_f64_list(s: &str) -> Result<F64List, String> {
    let values = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad number {t:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("empty list".into());
    }
    Ok(F64List(values))
}

enum AppError {
    Usage(String),
    Data(String),
    Internal(String),
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Usage(m) | AppError::Data(m) | AppError::Internal(m) => f.write_str(m),
        }
    }
}

impl AppError {
    fn exit_code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Internal(_) => 3,
        }
    }
}

/// Tags a data-stage error with the module it came from.
fn data_err(stage: &str, err: impl fmt::Display) -> AppError {
    AppError::Data(format!("{stage}: {err}"))
}

fn internal_err(context: &str, err: impl fmt::Display) -> AppError {
    AppError::Internal(format!("{context}: {err}"))
}

/// Writes through a .partial sibling and renames on success, so a failed
/// run never leaves a truncated artifact under the final name.
fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut fs::File) -> std::io::Result<()>,
) -> Result<(), AppError> {
    let partial = match path.extension() {
        Some(ext) => path.with_extension(format!("{}.partial", ext.to_string_lossy())),
        None => path.with_extension("partial"),
    };
    let mut file =
        fs::File::create(&partial).map_err(|e| internal_err(&partial.display().to_string(), e))?;
    write(&mut file).map_err(|e| internal_err(&partial.display().to_string(), e))?;
    file.sync_all().ok();
    drop(file);
    fs::rename(&partial, path).map_err(|e| internal_err(&path.display().to_string(), e))
}

fn write_text_atomic(path: &Path, text: &str) -> Result<(), AppError> {
    write_atomic(path, |f| f.write_all(text.as_bytes()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(err) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("vfp: --threads: {err}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("vfp: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), AppError> {
    match &cli.command {
        Command::Extract(args) => cmd_extract(cli, args),
        Command::Enhance(args) => cmd_enhance(args),
        Command::Correlate(args) => cmd_correlate(args),
        Command::Cluster(args) => cmd_cluster(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Synth(args) => cmd_synth(cli, args),
        Command::Pipeline(args) => cmd_pipeline(cli, args),
    }
}

fn parse_mode(lenient: bool) -> ParseMode {
    if lenient {
        ParseMode::Lenient
    } else {
        ParseMode::Strict
    }
}

fn load_video_set(
    frames_dir: &Path,
    pattern: &str,
    coeffs_path: &Path,
    width: usize,
    height: usize,
    mode: ParseMode,
    verbose: bool,
) -> Result<frameio::VideoFrameSet, AppError> {
    let frames =
        frameio::load_frame_sequence(frames_dir, pattern).map_err(|e| data_err("frameio", e))?;
    let file = fs::File::open(coeffs_path)
        .map_err(|e| data_err("coeffxml", format!("{}: {e}", coeffs_path.display())))?;
    let parsed = coeffxml::parse_coeff_dump(std::io::BufReader::new(file), width, height, mode)
        .map_err(|e| data_err("coeffxml", e))?;
    if verbose {
        for warning in &parsed.warnings {
            eprintln!("vfp: coeffxml: warning: {warning}");
        }
    }
    frameio::align(frames, parsed.frames, mode == ParseMode::Strict)
        .map_err(|e| data_err("frameio", e))
}

fn cmd_extract(cli: &Cli, args: &ExtractArgs) -> Result<(), AppError> {
    let id = match &args.id {
        Some(id) => id.clone(),
        None => {
            args.out.file_stem().and_then(|s| s.to_str()).unwrap_or("video").to_string()
        }
    };
    let set = load_video_set(
        &args.frames,
        &args.pattern,
        &args.coeffs,
        args.width,
        args.height,
        parse_mode(args.lenient),
        cli.verbose,
    )?;
    let denoiser = args.denoiser.build()?;
    let fp = extract_video_fingerprint(&set, denoiser.as_ref(), None, &id)
        .map_err(|e| data_err("fingerprint", e))?;
    write_atomic(&args.out, |f| write_fingerprint(&fp, f))?;
    if cli.verbose {
        eprintln!("vfp: extracted {} ({} frames)", id, set.len());
    }
    Ok(())
}

fn cmd_enhance(args: &EnhanceArgs) -> Result<(), AppError> {
    let fp = read_fingerprint_file(&args.input, None).map_err(|e| data_err("fingerprint", e))?;
    let params = EnhancerParams { model: args.enhancer.clone(), alpha: args.alpha };
    let enhanced = enhance(&fp, &params).map_err(|e| data_err("fingerprint", e))?;
    write_atomic(&args.out, |f| write_fingerprint(&enhanced, f))
}

fn cmd_correlate(args: &CorrelateArgs) -> Result<(), AppError> {
    let fps = args
        .fps
        .iter()
        .map(|path| read_fingerprint_file(path, None))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| data_err("fingerprint", e))?;
    let matrix = similarity::build_matrix(&fps).map_err(|e| data_err("similarity", e))?;
    write_atomic(&args.out, |f| {
        similarity::write_matrix_csv(&matrix, f).map_err(std::io::Error::other)
    })
}

fn cluster_matrix(matrix: &SimilarityMatrix, k: Option<usize>) -> Result<ClusterResult, AppError> {
    match k {
        Some(k) => clustering::cluster_with_k(matrix, k),
        None => clustering::select_clustering(matrix),
    }
    .map_err(|e| data_err("clustering", e))
}

fn cmd_cluster(args: &ClusterArgs) -> Result<(), AppError> {
    let matrix =
        similarity::read_matrix_csv_file(&args.matrix).map_err(|e| data_err("similarity", e))?;
    let result = cluster_matrix(&matrix, args.k)?;
    let doc = ClustersDoc::from_result(&result);
    write_text_atomic(&args.out, &doc.to_json())?;
    println!("k={} silhouette={:.6}", doc.k, doc.silhouette);
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), AppError> {
    let text = fs::read_to_string(&args.clusters)
        .map_err(|e| data_err("clustering", format!("{}: {e}", args.clusters.display())))?;
    let doc = ClustersDoc::from_json(&text).map_err(|e| data_err("clustering", e))?;
    let truth = GroundTruth::from_csv_file(&args.labels).map_err(|e| data_err("metrics", e))?;
    let matrix = match &args.matrix {
        Some(path) => {
            Some(similarity::read_matrix_csv_file(path).map_err(|e| data_err("similarity", e))?)
        }
        None => None,
    };
    if args.roc.is_some() && matrix.is_none() {
        return Err(AppError::Usage("--roc needs --matrix for the pairwise scores".into()));
    }
    let report = evaluate(&doc.clusters, &truth, matrix.as_ref(), args.tpr_options())
        .map_err(|e| data_err("metrics", e))?;
    write_report(&report, &args.out, args.roc.as_deref())?;
    print_report_summary(None, doc.k, doc.silhouette, &report);
    Ok(())
}

fn write_report(report: &EvalReport, out: &Path, roc: Option<&Path>) -> Result<(), AppError> {
    write_text_atomic(out, &report.to_json())?;
    if let (Some(path), Some(curve)) = (roc, report.roc.as_ref()) {
        write_atomic(path, |f| curve.write_csv(f))?;
    }
    Ok(())
}

fn print_report_summary(alpha: Option<f64>, k: usize, silhouette: f64, report: &EvalReport) {
    let prefix = match alpha {
        Some(a) => format!("alpha={a}: "),
        None => String::new(),
    };
    match report.roc.as_ref() {
        Some(roc) => println!(
            "{prefix}k={k} silhouette={silhouette:.6} average_tpr={:.1} auc={:.6}",
            report.average_tpr, roc.auc
        ),
        None => println!(
            "{prefix}k={k} silhouette={silhouette:.6} average_tpr={:.1}",
            report.average_tpr
        ),
    }
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<(), AppError> {
    let videos_per_device = if args.videos.0.len() == 1 {
        VideosPerDevice::Uniform(args.videos.0[0])
    } else {
        VideosPerDevice::PerDevice(args.videos.0.clone())
    };
    let config = SynthConfig {
        devices: args.devices,
        videos_per_device,
        frames_per_video: args.frames,
        width: args.width,
        height: args.height,
        strength: args.strength,
        scene: args.scene,
        dead_block_fraction: args.dead_frac,
        shot_noise_variance: args.shot_noise,
        seed: cli.seed,
    };
    let manifest = generate_dataset(&config, &args.out).map_err(|e| data_err("synth", e))?;
    println!(
        "generated {} videos for {} devices under {}",
        manifest.videos.len(),
        manifest.devices.len(),
        args.out.display()
    );
    Ok(())
}

/// Filename tag for an alpha value: integral values drop the fraction.
fn alpha_tag(alpha: f64) -> String {
    if alpha.fract() == 0.0 && alpha.abs() < 1e15 {
        format!("{}", alpha as i64)
    } else {
        format!("{alpha}")
    }
}

fn cmd_pipeline(cli: &Cli, args: &PipelineArgs) -> Result<(), AppError> {
    let manifest = Manifest::load(&args.manifest).map_err(|e| data_err("synth", e))?;
    let base = args.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mode = parse_mode(args.lenient);
    let denoiser = args.denoiser.build()?;
    if !args.no_enhance {
        // Flags must validate before the expensive extraction stage.
        for &alpha in &args.alpha.0 {
            vfp_core::fingerprint::enhancer_by_name(&args.enhancer, alpha)
                .map_err(|e| AppError::Usage(format!("fingerprint: {e}")))?;
        }
    }

    let fingerprints_dir = args.out_dir.join("fingerprints");
    fs::create_dir_all(&fingerprints_dir)
        .map_err(|e| internal_err(&fingerprints_dir.display().to_string(), e))?;

    // Stage 1: raw fingerprints, one video at a time (frames within a
    // video are denoised in parallel).
    let mut raw: Vec<Fingerprint32> = Vec::with_capacity(manifest.videos.len());
    for (i, video) in manifest.videos.iter().enumerate() {
        let set = load_video_set(
            &base.join(&video.frames_dir),
            &video.pattern,
            &base.join(&video.coeffs),
            manifest.width,
            manifest.height,
            mode,
            cli.verbose,
        )?;
        let fp = extract_video_fingerprint(&set, denoiser.as_ref(), None, &video.id)
            .map_err(|e| data_err("fingerprint", e))?;
        write_atomic(&fingerprints_dir.join(format!("{}.vfp", video.id)), |f| {
            write_fingerprint(&fp, f)
        })?;
        if cli.verbose {
            eprintln!("vfp: extracted {}/{} ({})", i + 1, manifest.videos.len(), video.id);
        }
        raw.push(fp);
    }

    let labels_path = manifest.labels_path(&base);
    let truth = if labels_path.exists() {
        Some(GroundTruth::from_csv_file(&labels_path).map_err(|e| data_err("metrics", e))?)
    } else {
        None
    };
    let tpr_options = TprOptions {
        rule: if args.majority_tpr { TprRule::Majority } else { TprRule::Pure },
        denominator: match args.fixed_denominator {
            Some(n) => TprDenominator::Fixed(n),
            None => TprDenominator::DeviceTotal,
        },
    };

    // Stage 2 onwards, once per enhancer variant.
    let variants: Vec<Option<f64>> = if args.no_enhance {
        vec![None]
    } else {
        args.alpha.0.iter().map(|&a| Some(a)).collect()
    };
    let sweep = variants.len() > 1;
    for variant in variants {
        let (fps, tag) = match variant {
            None => (raw.clone(), String::new()),
            Some(alpha) => {
                let params = EnhancerParams { model: args.enhancer.clone(), alpha };
                let enhanced = raw
                    .iter()
                    .map(|fp| enhance(fp, &params))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| data_err("fingerprint", e))?;
                let tag =
                    if sweep { format!("_alpha{}", alpha_tag(alpha)) } else { String::new() };
                for fp in &enhanced {
                    let name = format!("{}.enh{tag}.vfp", fp.id());
                    write_atomic(&fingerprints_dir.join(name), |f| write_fingerprint(fp, f))?;
                }
                (enhanced, tag)
            }
        };

        let matrix = similarity::build_matrix(&fps).map_err(|e| data_err("similarity", e))?;
        write_atomic(&args.out_dir.join(format!("matrix{tag}.csv")), |f| {
            similarity::write_matrix_csv(&matrix, f).map_err(std::io::Error::other)
        })?;

        let result = cluster_matrix(&matrix, args.k)?;
        let doc = ClustersDoc::from_result(&result);
        write_text_atomic(&args.out_dir.join(format!("clusters{tag}.json")), &doc.to_json())?;

        match &truth {
            Some(truth) => {
                let report = evaluate(&doc.clusters, truth, Some(&matrix), tpr_options)
                    .map_err(|e| data_err("metrics", e))?;
                write_report(
                    &report,
                    &args.out_dir.join(format!("report{tag}.json")),
                    Some(&args.out_dir.join(format!("roc{tag}.csv"))),
                )?;
                print_report_summary(variant, doc.k, doc.silhouette, &report);
            }
            None => {
                println!(
                    "{}k={} silhouette={:.6} (no labels; evaluation skipped)",
                    match variant {
                        Some(a) => format!("alpha={a}: "),
                        None => String::new(),
                    },
                    doc.k,
                    doc.silhouette
                );
            }
        }
    }
    Ok(())
}
