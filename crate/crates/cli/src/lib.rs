//! `ads` command-line front end. Subcommand bodies live here so tests can
//! drive them without spawning a process.

use std::io::Write;
use std::path::{Path, PathBuf};

use ads_core::alignment::{Correspondences, RansacConfig, DEFAULT_TPS_LAMBDA};
use ads_core::evaluation::{evaluate, EvaluationConfig};
use ads_core::geometry::TransformParams;
use ads_core::imaging::{read_image, read_mask, write_image, write_mask, Mask};
use ads_core::pipeline::{explain_pair, PairInput, PipelineConfig};
use ads_core::synthscene::{sample_dataset, DatasetManifest, SceneConfig};
use ads_core::Error;
use clap::{Args, Parser, Subcommand};

/// Environment variable holding the default output directory.
pub const OUTPUT_DIR_ENV: &str = "ADS_OUTPUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PIPELINE: i32 = 2;
pub const EXIT_DEGRADED: i32 = 3;

/// Explain image differences by aligning, deforming and subtracting.
#[derive(Debug, Parser)]
#[command(name = "ads", version)]
pub struct Cli {
    /// Print progress details to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset of source/target pairs with a manifest.
    Generate(GenerateArgs),
    /// Explain the difference between one source and one target image.
    Explain(ExplainArgs),
    /// Correlate measures with ground truth over a dataset manifest.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Number of images to render.
    #[arg(long, default_value_t = 2000)]
    pub count: usize,
    /// Number of source/target pairs; at most count/2.
    #[arg(long, default_value_t = 1000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image size, `N` for square or `WxH`.
    #[arg(long, default_value = "128", value_parser = parse_size)]
    pub size: (usize, usize),
    /// Generator config (TOML); defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [default: $ADS_OUTPUT_DIR or ./ads-out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Source image (.png or .ppm).
    #[arg(long)]
    pub source: PathBuf,
    /// Target image, same size as the source.
    #[arg(long)]
    pub target: PathBuf,
    /// Source object mask (.png or .pgm); the whole frame if omitted.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Correspondence JSON: {"pairs": [[[sx,sy],[tx,ty]], ...], "weights"?: [...]}.
    #[arg(long, required_unless_present = "transforms")]
    pub keypoints: Option<PathBuf>,
    /// Keypoints are in pixel (col,row) units rather than [-1,1] coordinates.
    #[arg(long, requires = "keypoints")]
    pub pixel_units: bool,
    /// Precomputed transform JSON {"affine": [...], "tps_control_points": [...]}; overrides estimation.
    #[arg(long)]
    pub transforms: Option<PathBuf>,
    /// Fit the affine stage with RANSAC using this seed.
    #[arg(long)]
    pub ransac_seed: Option<u64>,
    /// Ridge regularization of the TPS fit.
    #[arg(long, default_value_t = DEFAULT_TPS_LAMBDA)]
    pub lambda: f64,
    /// Also write aligned/deformed images, masks and the error heatmap.
    #[arg(long)]
    pub emit_intermediates: bool,
    /// Output directory [default: $ADS_OUTPUT_DIR or ./ads-out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset manifest written by `generate`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Worker threads [default: available cores].
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Ridge regularization of the TPS fit.
    #[arg(long, default_value_t = DEFAULT_TPS_LAMBDA)]
    pub lambda: f64,
    /// Recorded in run.json.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory [default: $ADS_OUTPUT_DIR or ./ads-out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let parse = |t: &str| -> Result<usize, String> {
        match t.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(format!("invalid size component {t:?}")),
        }
    };
    match s.split_once(['x', 'X']) {
        Some((w, h)) => Ok((parse(w)?, parse(h)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

fn output_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("ads-out"))
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a, cli.verbose, out, err),
        Command::Explain(a) => cmd_explain(a, cli.verbose, out, err),
        Command::Evaluate(a) => cmd_evaluate(a, cli.verbose, out, err),
    };
    match result {
        Ok(code) => code,
        Err(Failure { code, error }) => {
            let _ = writeln!(err, "error [{}]: {error}", error.kind());
            code
        }
    }
}

#[derive(Debug)]
struct Failure {
    code: i32,
    error: Error,
}

fn input(error: Error) -> Failure {
    Failure {
        code: EXIT_USAGE,
        error,
    }
}

fn pipeline(error: Error) -> Failure {
    let code = match error {
        Error::InvalidArgument(_) | Error::Io { .. } | Error::Format { .. } => EXIT_USAGE,
        _ => EXIT_PIPELINE,
    };
    Failure { code, error }
}

fn cmd_generate(
    a: GenerateArgs,
    verbose: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, Failure> {
    let cfg = match &a.config {
        Some(p) => SceneConfig::load(p).map_err(input)?,
        None => SceneConfig::default(),
    };
    let dir = output_dir(a.out);
    let (w, h) = a.size;
    if verbose {
        let _ = writeln!(
            err,
            "rendering {} images ({} pairs) at {w}x{h} into {}",
            a.count,
            a.pairs,
            dir.display()
        );
    }
    let manifest = sample_dataset(a.count, a.pairs, a.seed, w, h, &dir, &cfg).map_err(input)?;
    let _ = writeln!(out, "{}", manifest.path().display());
    Ok(EXIT_OK)
}

fn load_explain_input(a: &ExplainArgs) -> Result<PairInput, Error> {
    let source = read_image(&a.source)?;
    let target = read_image(&a.target)?;
    let source_mask = match &a.mask {
        Some(p) => read_mask(p)?,
        None => Mask::full(source.width(), source.height())?,
    };
    let correspondences = match &a.keypoints {
        Some(p) if a.pixel_units => Some(Correspondences::load_pixels(
            p,
            source.width(),
            source.height(),
        )?),
        Some(p) => Some(Correspondences::load(p)?),
        None => None,
    };
    let imported = a
        .transforms
        .as_ref()
        .map(TransformParams::load)
        .transpose()?;
    Ok(PairInput {
        source,
        source_mask,
        target,
        correspondences,
        imported,
    })
}

fn write_at(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&Path) -> ads_core::Result<()>,
) -> Result<(), Failure> {
    f(&dir.join(name)).map_err(input)
}

fn cmd_explain(
    a: ExplainArgs,
    verbose: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, Failure> {
    if !(a.lambda >= 0.0 && a.lambda.is_finite()) {
        return Err(input(Error::InvalidArgument(format!(
            "--lambda must be finite and nonnegative, got {}",
            a.lambda
        ))));
    }
    let pair = load_explain_input(&a).map_err(input)?;
    let cfg = PipelineConfig {
        tps_lambda: a.lambda,
        ransac: a.ransac_seed.map(|seed| RansacConfig {
            seed,
            ..RansacConfig::default()
        }),
        emit_intermediates: a.emit_intermediates,
        ..PipelineConfig::default()
    };
    let x = explain_pair(&pair, &cfg).map_err(pipeline)?;

    let dir = output_dir(a.out);
    std::fs::create_dir_all(&dir).map_err(|e| input(Error::io(&dir, e)))?;
    write_at(&dir, "report.json", |p| x.report.save(p))?;
    write_at(&dir, "transforms.json", |p| x.transforms.save(p))?;
    if let Some(im) = &x.intermediates {
        write_at(&dir, "aligned.png", |p| write_image(p, &im.aligned))?;
        write_at(&dir, "aligned_mask.png", |p| {
            write_mask(p, &im.aligned_mask)
        })?;
        write_at(&dir, "deformed.png", |p| write_image(p, &im.deformed))?;
        write_at(&dir, "deformed_mask.png", |p| {
            write_mask(p, &im.deformed_mask)
        })?;
        write_at(&dir, "heatmap.png", |p| {
            write_image(p, &im.heatmap.render(None))
        })?;
    }
    if verbose {
        let _ = writeln!(err, "wrote {}", dir.display());
    }
    let _ = writeln!(out, "{}", x.report.summary_line());
    Ok(EXIT_OK)
}

fn cmd_evaluate(
    a: EvaluateArgs,
    verbose: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, Failure> {
    if a.jobs == Some(0) {
        return Err(input(Error::InvalidArgument(
            "--jobs must be at least 1".into(),
        )));
    }
    let manifest = DatasetManifest::load(&a.manifest).map_err(input)?;
    let cfg = EvaluationConfig {
        pipeline: PipelineConfig {
            tps_lambda: a.lambda,
            ..PipelineConfig::default()
        },
        jobs: a.jobs,
        seed: a.seed,
    };
    let ev = evaluate(&manifest, &cfg).map_err(input)?;
    let dir = output_dir(a.out);
    ev.write_outputs(&dir).map_err(input)?;
    if verbose {
        for o in &ev.run.outcomes {
            if let Err(f) = &o.result {
                let _ = writeln!(err, "pair {} failed [{}]: {}", o.index, f.kind, f.message);
            }
        }
    }
    let _ = write!(out, "{}", ev.table.to_text());
    if ev.run.is_valid() {
        Ok(EXIT_OK)
    } else {
        let _ = writeln!(
            err,
            "degraded run: {} of {} pairs failed",
            ev.run.failures(),
            ev.run.outcomes.len()
        );
        Ok(EXIT_DEGRADED)
    }
}
