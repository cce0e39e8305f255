//! `xmodal`: synthetic data, preprocessing, training, evaluation, sweeps,
//! ablation and self-verification.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use xmodal_core::dataset::{prep_dir, Dataset};
use xmodal_core::encoders::{save_attribute, save_video};
use xmodal_core::flowprep::PrepConfig;
use xmodal_core::losses::NegativeMode;
use xmodal_core::selftest::{run_all, Options};
use xmodal_core::synthdata::{generate, SynthSpec};
use xmodal_core::trainer::{
    ablate, alpha_csv, depth_csv, evaluate_checkpoint, run_experiment, sweep_alpha, sweep_depth, ArmMode,
    ExperimentConfig, RunReport,
};
use xmodal_core::Error;

#[derive(Parser)]
#[command(name = "xmodal", version, about = "Cross-modal contrastive micro-expression recognition")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "XMODAL_THREADS")]
    threads: Option<usize>,

    /// JSON file with optional `experiment`, `synth` and `prep` sections; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Compute RGB and optical-flow clips for every sample of a dataset.
    Prep(PrepArgs),
    /// Train on a subject-disjoint split and write report.json plus checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint with the video branch only.
    Eval(EvalArgs),
    /// Repeated runs for each alpha; writes alpha,mean,std CSV.
    SweepAlpha(SweepAlphaArgs),
    /// Repeated runs per depth for the baseline and full losses; writes CSV.
    SweepDepth(SweepDepthArgs),
    /// Compare the video-loss-only arm with the full loss.
    Ablate(AblateArgs),
    /// Gradient checks, loss identities, stage shapes, flow oracle and codebook.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON SynthSpec; flags override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    /// Peak displacement in pixels.
    #[arg(long)]
    amplitude: Option<f64>,
    /// Pixel noise standard deviation.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct PrepFlags {
    /// Frames after temporal interpolation.
    #[arg(long)]
    frames: Option<usize>,
    /// Spatial size after resizing.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct PrepArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    prep: PrepFlags,
    /// Fail on the first unreadable sample instead of skipping it.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Clone)]
struct ExperimentFlags {
    /// Dataset directory containing manifest.jsonl.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Maximum negatives per anchor.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// different_class or different_sample.
    #[arg(long)]
    negative_mode: Option<String>,
    /// Start from the 200-epoch, batch-32 schedule.
    #[arg(long)]
    full_scale: bool,
    #[command(flatten)]
    prep: PrepFlags,
    /// Fail on unreadable samples instead of skipping them.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    exp: ExperimentFlags,
    /// Output directory for report.json and checkpoints.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluate every sample instead of the test ids recorded in report.json.
    #[arg(long)]
    all: bool,
    #[command(flatten)]
    prep: PrepFlags,
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct SweepAlphaArgs {
    #[command(flatten)]
    exp: ExperimentFlags,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    alphas: Vec<f64>,
    /// CSV output path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepDepthArgs {
    #[command(flatten)]
    exp: ExperimentFlags,
    #[arg(long, value_delimiter = ',', default_value = "10,18,34")]
    depths: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    exp: ExperimentFlags,
    /// Directory for ablation.csv and ablation.json (stdout only when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Stem stride for the shape probes, e.g. 1,2,2. Fault injection only.
    #[arg(long, hide = true, value_delimiter = ',')]
    inject_conv1_stride: Option<Vec<usize>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    experiment: Option<ExperimentConfig>,
    synth: Option<SynthSpec>,
    prep: Option<PrepConfig>,
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Config(String),
    Other(String),
    Checks(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure::Other(format!("{}: {e}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Outcome<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_fail(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_fail(path, e))
}

fn emit(out: Option<&Path>, contents: &str) -> Outcome {
    match out {
        Some(p) => write_file(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

struct Ctx {
    file: ConfigFile,
}

impl Ctx {
    fn prep(&self, flags: &PrepFlags) -> Outcome<PrepConfig> {
        let mut p = self.file.prep.unwrap_or_default();
        if let Some(f) = flags.frames {
            p.frames = f;
        }
        if let Some(s) = flags.size {
            p.size = s;
        }
        if p.frames < 2 || p.size < 8 {
            return Err(Failure::Config("prep needs frames >= 2 and size >= 8".into()));
        }
        p.farneback.validate()?;
        Ok(p)
    }

    fn experiment(&self, f: &ExperimentFlags) -> Outcome<ExperimentConfig> {
        let mut c = match (&self.file.experiment, f.full_scale) {
            (_, true) => ExperimentConfig::full_scale(),
            (Some(c), false) => c.clone(),
            (None, false) => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(if let Some(v) = f.$flag { c.$field = v; })*};
        }
        set!(depth => depth, alpha => alpha, k => k, lr => lr, epochs => epochs, batch_size => batch_size,
             repeats => n_repeats, seed => seed);
        if let Some(m) = &f.negative_mode {
            c.negative_mode = serde_json::from_value::<NegativeMode>(serde_json::Value::String(m.clone()))
                .map_err(|_| Failure::Config(format!("unknown negative mode {m:?}")))?;
        }
        c.validate()?;
        Ok(c)
    }

    fn dataset(&self, data: &Path, prep: &PrepFlags, strict: bool) -> Outcome<Dataset> {
        let p = self.prep(prep)?;
        Ok(Dataset::load(data, &p, strict)?)
    }
}

fn cmd_synth(ctx: &Ctx, a: &SynthArgs) -> Outcome {
    let mut spec = match &a.spec {
        Some(p) => read_json::<SynthSpec>(p)?,
        None => ctx.file.synth.clone().unwrap_or_default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(if let Some(v) = a.$flag { spec.$field = v; })*};
    }
    set!(classes => n_classes, per_class => samples_per_class, subjects => n_subjects, frames => frames,
         size => size, amplitude => motion_amplitude, noise => noise_sigma, seed => seed);
    let rows = generate(&spec, &a.out)?;
    eprintln!("wrote {} samples to {}", rows.len(), a.out.display());
    Ok(())
}

fn cmd_prep(ctx: &Ctx, a: &PrepArgs) -> Outcome {
    let p = ctx.prep(&a.prep)?;
    let s = prep_dir(&a.input, &a.out, &p, a.strict)?;
    eprintln!("wrote {} clip pairs to {} ({} skipped)", s.written, a.out.display(), s.skipped);
    Ok(())
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> Outcome {
    let cfg = ctx.experiment(&a.exp)?;
    let data = ctx.dataset(&a.exp.data, &a.exp.prep, a.exp.strict)?;
    let trained = run_experiment(&cfg, &data)?;
    save_video(&trained.video, &a.out)?;
    save_attribute(&trained.attribute, &a.out)?;
    let json = serde_json::to_string_pretty(&trained.report).expect("report serializes");
    write_file(&a.out.join("report.json"), &json)?;
    eprintln!(
        "test accuracy {:.4}, final train accuracy {:.4}",
        trained.report.test_accuracy.unwrap_or(f64::NAN),
        trained.report.final_train_accuracy
    );
    Ok(())
}

fn cmd_eval(ctx: &Ctx, a: &EvalArgs) -> Outcome {
    let data = ctx.dataset(&a.data, &a.prep, a.strict)?;
    let idx = if a.all {
        (0..data.len()).collect()
    } else {
        let report: RunReport = read_json(&a.checkpoint.join("report.json"))?;
        data.indices(&report.test_ids)?
    };
    let e = evaluate_checkpoint(&a.checkpoint, &data, &idx)?;
    println!("{}", serde_json::json!({ "accuracy": e.accuracy, "correct": e.correct, "total": e.total }));
    Ok(())
}

fn cmd_sweep_alpha(ctx: &Ctx, a: &SweepAlphaArgs) -> Outcome {
    let cfg = ctx.experiment(&a.exp)?;
    let data = ctx.dataset(&a.exp.data, &a.exp.prep, a.exp.strict)?;
    let rows = sweep_alpha(&cfg, &data, &a.alphas)?;
    emit(a.out.as_deref(), &alpha_csv(&rows))
}

fn cmd_sweep_depth(ctx: &Ctx, a: &SweepDepthArgs) -> Outcome {
    let cfg = ctx.experiment(&a.exp)?;
    let data = ctx.dataset(&a.exp.data, &a.exp.prep, a.exp.strict)?;
    let rows = sweep_depth(&cfg, &data, &a.depths, &[ArmMode::Baseline, ArmMode::Full])?;
    emit(a.out.as_deref(), &depth_csv(&rows))
}

fn cmd_ablate(ctx: &Ctx, a: &AblateArgs) -> Outcome {
    let cfg = ctx.experiment(&a.exp)?;
    let data = ctx.dataset(&a.exp.data, &a.exp.prep, a.exp.strict)?;
    let ab = ablate(&cfg, &data)?;
    let table = ab.table();
    print!("{table}");
    if let Some(dir) = &a.out {
        write_file(&dir.join("ablation.csv"), &table)?;
        write_file(&dir.join("ablation.json"), &serde_json::to_string_pretty(&ab).expect("ablation serializes"))?;
    }
    Ok(())
}

fn cmd_selftest(a: &SelftestArgs) -> Outcome {
    let conv1_stride = match a.inject_conv1_stride.as_deref() {
        None => None,
        Some(&[t, h, w]) => Some([t, h, w]),
        Some(_) => return Err(Failure::Config("--inject-conv1-stride takes three values".into())),
    };
    let results = run_all(&Options { conv1_stride });
    let mut failed = Vec::new();
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        if !r.passed {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        println!("all {} checks passed", results.len());
        Ok(())
    } else {
        Err(Failure::Checks(failed))
    }
}

fn run(cli: &Cli) -> Outcome {
    let file = match &cli.config {
        Some(p) => read_json::<ConfigFile>(p)?,
        None => ConfigFile::default(),
    };
    let ctx = Ctx { file };
    match &cli.command {
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Prep(a) => cmd_prep(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::SweepAlpha(a) => cmd_sweep_alpha(&ctx, a),
        Command::SweepDepth(a) => cmd_sweep_depth(&ctx, a),
        Command::Ablate(a) => cmd_ablate(&ctx, a),
        Command::Selftest(a) => cmd_selftest(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let code = match &f {
                Failure::Core(e) if e.is_numeric_abort() => 3,
                Failure::Core(e) if e.is_config() => 2,
                Failure::Config(_) => 2,
                _ => 1,
            };
            match f {
                Failure::Core(e) => eprintln!("error: {e}"),
                Failure::Config(m) | Failure::Other(m) => eprintln!("error: {m}"),
                Failure::Checks(names) => eprintln!("failed checks: {}", names.join(", ")),
            }
            ExitCode::from(code)
        }
    }
}
