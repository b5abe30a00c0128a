//! Command-line interface.
//!
//! Exit status: 0 on success, 2 on usage errors, 1 on runtime errors (the
//! message goes to standard error). Every stochastic command needs an
//! explicit seed.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::curvature::{self, DEFAULT_CURVATURE_K, DEFAULT_NORMALS_K};
use crate::error::{Error, Result};
use crate::geometry::normalization_for;
use crate::io::{self, CloudFormat, ManifestEntry};
use crate::metrics::{self, MetricReport, SurfaceRef};
use crate::pipeline;
use crate::shapes::{PatchPair, ShapeOracle};
use crate::training::{self, classify_difficulty, TrainSample};
use crate::upsampler::{self, DistanceField, ProjectionParams};

#[derive(Parser, Debug)]
#[command(name = "curvup", version, about = "Curvature-guided point cloud upsampling by distance-field projection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample points uniformly from an analytic surface.
    Synth(SynthArgs),
    /// Per-point umbrella curvature; prints the global curvature value.
    Curvature(CurvatureArgs),
    /// Curvature ladder or farthest point subset of a cloud.
    Sample(SampleArgs),
    /// Cut sparse/dense training patches from the shapes of a config.
    Patches(PatchesArgs),
    /// Classify sparse patches as easy or hard into a manifest.
    Split(SplitArgs),
    /// Train a distance estimator; writes a checkpoint and a loss CSV.
    Train(TrainArgs),
    /// Upsample a cloud with a checkpoint or an analytic oracle.
    Upsample(UpsampleArgs),
    /// Add Gaussian noise to every coordinate.
    Noise(NoiseArgs),
    /// Chamfer, Hausdorff and optional point-to-surface distances.
    Eval(EvalArgs),
    /// Train and score one model per sampling-step count.
    AblateSteps(AblateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ShapeName {
    Sphere,
    Box,
    Torus,
    Plane,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub shape: ShapeName,
    #[arg(long)]
    pub points: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Sphere radius.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Torus major radius.
    #[arg(long)]
    pub major: Option<f64>,
    /// Torus minor radius.
    #[arg(long)]
    pub minor: Option<f64>,
    /// Box half extents.
    #[arg(long)]
    pub hx: Option<f64>,
    #[arg(long)]
    pub hy: Option<f64>,
    #[arg(long)]
    pub hz: Option<f64>,
    /// Plane normal and offset.
    #[arg(long, allow_hyphen_values = true)]
    pub nx: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub ny: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub nz: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub offset: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CurvatureArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Neighbours per umbrella.
    #[arg(long, default_value_t = DEFAULT_CURVATURE_K)]
    pub k: usize,
    /// Neighbourhood size for normal estimation.
    #[arg(long, default_value_t = DEFAULT_NORMALS_K)]
    pub normals_k: usize,
    /// CSV `index,c`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SampleMethod {
    Curvature,
    Fps,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Xyz,
    Ply,
}

impl From<FormatArg> for CloudFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Xyz => CloudFormat::Xyz,
            FormatArg::Ply => CloudFormat::Ply,
        }
    }
}

impl FormatArg {
    fn ext(self) -> &'static str {
        match self {
            FormatArg::Xyz => "xyz",
            FormatArg::Ply => "ply",
        }
    }
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub method: SampleMethod,
    /// Halving steps (curvature method).
    #[arg(long, required_if_eq("method", "curvature"), conflicts_with = "count")]
    pub steps: Option<usize>,
    /// Subset size (fps method).
    #[arg(long, required_if_eq("method", "fps"))]
    pub count: Option<usize>,
    /// FPS start index.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    #[arg(long, default_value_t = DEFAULT_CURVATURE_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_NORMALS_K)]
    pub normals_k: usize,
    /// Output files are `<prefix>_level<s>.<fmt>` or `<prefix>_fps<M>.<fmt>`.
    #[arg(long)]
    pub out_prefix: String,
    #[arg(long, value_enum, default_value = "xyz")]
    pub format: FormatArg,
}

#[derive(Args, Debug)]
pub struct PatchesArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// Sparse patch files; the dense partner replaces `_sparse` with `_dense`.
    #[arg(long)]
    pub glob: String,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = DEFAULT_CURVATURE_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_NORMALS_K)]
    pub normals_k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Manifest from `split`; without it patches are synthesised from the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss trace CSV; defaults to the checkpoint path with `.loss.csv`.
    #[arg(long)]
    pub loss_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct UpsampleArgs {
    #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
    pub ckpt: Option<PathBuf>,
    /// Shape spec such as `sphere:r=1` or `torus:R=2,r=0.5`.
    #[arg(long)]
    pub oracle: Option<String>,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub rate: f64,
    /// Step size λ.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Iterations T.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Seed jitter standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct NoiseArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub tau: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, conflicts_with = "oracle")]
    pub mesh: Option<PathBuf>,
    #[arg(long)]
    pub oracle: Option<String>,
    /// CSV report; printed to standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Inclusive range `a..b` or a comma list.
    #[arg(long, default_value = "0..5")]
    pub steps: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `a..b` (inclusive) or `a,b,c`.
pub fn parse_steps(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidParameter(format!("cannot parse steps `{spec}`; expected `a..b` or `a,b,c`"));
    if let Some((a, b)) = spec.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    spec.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (mut cfg, keys) = RunConfig::parse_with_keys(&text)?;
    match seed {
        Some(s) => cfg.train.seed = s,
        None if !keys.contains(&"seed") => {
            return Err(Error::InvalidParameter(format!(
                "{}: no seed given; set `seed` in the config or pass --seed",
                path.display()
            )))
        }
        None => {}
    }
    Ok(cfg)
}

fn synth_spec(a: &SynthArgs) -> String {
    let mut parts = Vec::new();
    let mut push = |k: &str, v: Option<f64>| {
        if let Some(v) = v {
            parts.push(format!("{k}={v}"));
        }
    };
    let name = match a.shape {
        ShapeName::Sphere => {
            push("r", a.radius);
            "sphere"
        }
        ShapeName::Torus => {
            push("R", a.major);
            push("r", a.minor);
            "torus"
        }
        ShapeName::Box => {
            push("hx", a.hx);
            push("hy", a.hy);
            push("hz", a.hz);
            "box"
        }
        ShapeName::Plane => {
            push("nx", a.nx);
            push("ny", a.ny);
            push("nz", a.nz);
            push("off", a.offset);
            "plane"
        }
    };
    format!("{name}:{}", parts.join(","))
}

fn dense_partner(sparse: &Path) -> Result<PathBuf> {
    let name = sparse.file_name().and_then(|n| n.to_str()).unwrap_or("");
    let Some(pos) = name.rfind("_sparse") else {
        return Err(Error::InvalidParameter(format!(
            "{}: file name has no `_sparse` part to locate its dense partner",
            sparse.display()
        )));
    };
    let dense_name = format!("{}_dense{}", &name[..pos], &name[pos + "_sparse".len()..]);
    Ok(sparse.with_file_name(dense_name))
}

fn relative_to(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}

fn run_command(cmd: Command) -> Result<String> {
    let mut msg = String::new();
    match cmd {
        Command::Synth(a) => {
            let oracle: ShapeOracle = synth_spec(&a).parse()?;
            let cloud = oracle.sample_surface(a.points, a.seed);
            io::save_cloud(&cloud, &a.out)?;
            let _ = writeln!(msg, "wrote {} points of {oracle} to {}", cloud.len(), a.out.display());
        }
        Command::Curvature(a) => {
            let cloud = io::read_cloud(&a.input)?;
            let field = curvature::analyze(&cloud, a.normals_k, a.k)?;
            io::write_text(&a.out, &io::curvature_csv(&field))?;
            let _ = writeln!(msg, "global_curvature,{}", io::format_sig(curvature::global_curvature(&field)?, 12));
            let _ = writeln!(msg, "skewness,{}", io::format_sig(curvature::curvature_skewness(&field)?, 12));
        }
        Command::Sample(a) => {
            let cloud = io::read_cloud(&a.input)?;
            match a.method {
                SampleMethod::Curvature => {
                    let steps = a.steps.expect("required by clap");
                    let field = curvature::analyze(&cloud, a.normals_k, a.k)?;
                    let ladder = curvature::curvature_sample(&cloud, &field, steps)?;
                    for (s, level) in ladder.clouds.iter().enumerate() {
                        let path = PathBuf::from(format!("{}_level{s}.{}", a.out_prefix, a.format.ext()));
                        io::write_cloud(level, &path, a.format.into())?;
                        let _ = writeln!(msg, "level {s}: {} points -> {}", level.len(), path.display());
                    }
                }
                SampleMethod::Fps => {
                    let m = a.count.expect("required by clap");
                    let subset = curvature::fps(&cloud, m, a.start)?;
                    let path = PathBuf::from(format!("{}_fps{m}.{}", a.out_prefix, a.format.ext()));
                    io::write_cloud(&subset, &path, a.format.into())?;
                    let _ = writeln!(msg, "fps: {} points -> {}", subset.len(), path.display());
                }
            }
        }
        Command::Patches(a) => {
            let cfg = load_config(&a.config, a.seed)?;
            let patches = pipeline::training_patches(&cfg)?;
            std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
            for (i, p) in patches.iter().enumerate() {
                io::save_cloud(&p.sparse, a.out_dir.join(format!("patch_{i:04}_sparse.xyz")))?;
                io::save_cloud(&p.dense, a.out_dir.join(format!("patch_{i:04}_dense.xyz")))?;
            }
            let _ = writeln!(msg, "wrote {} patch pairs to {}", patches.len(), a.out_dir.display());
        }
        Command::Split(a) => {
            let mut paths: Vec<PathBuf> = glob::glob(&a.glob)
                .map_err(|e| Error::InvalidParameter(format!("bad glob `{}`: {e}", a.glob)))?
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| { let path = e.path().to_path_buf(); Error::io(path, e.into()) })?;
            paths.sort();
            if paths.is_empty() {
                return Err(Error::InvalidParameter(format!("glob `{}` matched no files", a.glob)));
            }
            let base = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
            let mut entries = Vec::with_capacity(paths.len());
            let (mut easy, mut hard) = (0, 0);
            for sparse in &paths {
                let dense = dense_partner(sparse)?;
                if !dense.exists() {
                    return Err(Error::InvalidParameter(format!("missing dense partner {}", dense.display())));
                }
                let cloud = io::read_cloud(sparse)?;
                let field = curvature::analyze(&cloud, a.normals_k, a.k)?;
                let gcv = curvature::global_curvature(&field)?;
                let difficulty = classify_difficulty(gcv, a.threshold)?;
                match difficulty {
                    training::Difficulty::Easy => easy += 1,
                    training::Difficulty::Hard => hard += 1,
                }
                entries.push(ManifestEntry {
                    difficulty,
                    global_curvature: gcv,
                    sparse: relative_to(sparse, &base),
                    dense: relative_to(&dense, &base),
                });
            }
            io::write_text(&a.out, &io::manifest_csv(&entries))?;
            let _ = writeln!(msg, "{easy} easy, {hard} hard -> {}", a.out.display());
        }
        Command::Train(a) => {
            let cfg = load_config(&a.config, a.seed)?;
            let samples = match &a.data {
                Some(manifest) => {
                    let entries = io::read_manifest(manifest)?;
                    if entries.is_empty() {
                        return Err(Error::InvalidParameter(format!("{}: manifest lists no patches", manifest.display())));
                    }
                    let mut samples = Vec::with_capacity(entries.len());
                    for e in &entries {
                        let sparse = io::read_cloud(&e.sparse)?;
                        let dense = io::read_cloud(&e.dense)?;
                        let transform = normalization_for(&dense)?;
                        let patch = PatchPair {
                            sparse: transform.apply_cloud(&sparse),
                            dense: transform.apply_cloud(&dense),
                            source: None,
                            transform,
                        };
                        let mut s = TrainSample::new(patch, &cfg.train.model, cfg.train.threshold)?;
                        s.difficulty = e.difficulty;
                        samples.push(s);
                    }
                    samples
                }
                None => {
                    let patches = pipeline::training_patches(&cfg)?;
                    TrainSample::from_patches(&patches, &cfg.train.model, cfg.train.threshold)?
                }
            };
            let outcome = training::train(&samples, &cfg.train)?;
            training::save_checkpoint(&outcome.checkpoint, &a.out)?;
            let loss_path = a.loss_out.unwrap_or_else(|| a.out.with_extension("loss.csv"));
            io::write_text(&loss_path, &training::loss_trace_csv(&outcome.trace))?;
            let last = outcome.trace.last().map_or(f64::NAN, |e| e.mean_loss);
            let _ = writeln!(
                msg,
                "trained {} steps on {} patches, final epoch loss {last:e}; checkpoint {}, loss trace {}",
                outcome.checkpoint.step,
                samples.len(),
                a.out.display(),
                loss_path.display()
            );
        }
        Command::Upsample(a) => {
            let input = io::read_cloud(&a.input)?;
            let base = match &a.ckpt {
                Some(path) => training::load_checkpoint(path)?.config.projection,
                None => ProjectionParams::default(),
            };
            let params = ProjectionParams {
                step_size: a.lambda.unwrap_or(base.step_size),
                iterations: a.iters.unwrap_or(base.iterations),
                seed_sigma: a.sigma.unwrap_or(base.seed_sigma),
            };
            params.validate()?;
            let out = match (&a.ckpt, &a.oracle) {
                (Some(path), _) => {
                    let ckpt = training::load_checkpoint(path)?;
                    pipeline::upsample_with_model(&ckpt.model, &input, a.rate, &params, a.seed)?
                }
                (None, Some(spec)) => {
                    let field = DistanceField::Oracle(spec.parse()?);
                    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
                    upsampler::upsample(&field, &input, a.rate, &params, &mut rng)?
                }
                (None, None) => unreachable!("clap requires --ckpt or --oracle"),
            };
            io::save_cloud(&out, &a.out)?;
            let collapsed = upsampler::count_collapsed(&out, 1e-9);
            let _ = writeln!(msg, "wrote {} points to {} ({collapsed} collapsed)", out.len(), a.out.display());
        }
        Command::Noise(a) => {
            let input = io::read_cloud(&a.input)?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let out = metrics::add_noise(&input, a.tau, &mut rng)?;
            io::save_cloud(&out, &a.out)?;
            let _ = writeln!(msg, "wrote {} points to {}", out.len(), a.out.display());
        }
        Command::Eval(a) => {
            let pred = io::read_cloud(&a.pred)?;
            let gt = io::read_cloud(&a.gt)?;
            let surface = match (&a.mesh, &a.oracle) {
                (Some(m), _) => Some(SurfaceRef::Mesh(io::read_off(m)?)),
                (None, Some(spec)) => Some(SurfaceRef::Oracle(spec.parse()?)),
                (None, None) => None,
            };
            let report = MetricReport::evaluate(&pred, &gt, surface.as_ref())?;
            let csv = report.to_csv();
            match &a.out {
                Some(path) => {
                    io::write_text(path, &csv)?;
                    let _ = writeln!(msg, "wrote {}", path.display());
                }
                None => msg.push_str(&csv),
            }
        }
        Command::AblateSteps(a) => {
            let cfg = load_config(&a.config, a.seed)?;
            let steps = parse_steps(&a.steps)?;
            let rows = pipeline::ablate_steps(&cfg, &steps)?;
            io::write_text(&a.out, &pipeline::ablation_csv(&rows))?;
            let _ = writeln!(msg, "wrote {} rows to {}", rows.len(), a.out.display());
        }
    }
    Ok(msg)
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run_command(cli.command) {
        Ok(msg) => {
            print!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
