use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use attrib_eval::attribution::MethodConfig;
use attrib_eval::harness::{
    self, curves, report, summary, BuiltinMethods, ClassMode, EvalSettings, LoadedImage, RunConfig, OUTPUT_DIR_ENV,
};
use attrib_eval::network::{load_model, save_model, ScoreMode};
use attrib_eval::proportionality::DEFAULT_EPSILON;
use attrib_eval::{synth, Error, Parallelism};

#[derive(Parser)]
#[command(name = "attrib-eval", version, about = "Score attribution maps by necessity and sufficiency criteria")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate attribution methods over an image corpus.
    Eval(EvalArgs),
    /// Pick the best method per criterion from a metrics CSV.
    Winners(WinnersArgs),
    /// Export perturbation and share curves for one image and method.
    Curves(CurvesArgs),
    /// Write a synthetic image corpus and a trained desk-scale CNN.
    Synth(SynthArgs),
}

#[derive(Args)]
struct Common {
    /// Model manifest (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Explained class: `predicted` or a class index.
    #[arg(long, default_value = "predicted")]
    class: String,
    /// CSV of `image_id,label` rows; overrides --class.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value = "softmax")]
    score_mode: ScoreMode,
    /// Baseline value b used for ablation and as the reference input.
    #[arg(long, default_value_t = 0.0)]
    baseline: f64,
    /// Prefix stride for curves (default: at most 257 points per curve).
    #[arg(long)]
    chunk: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 50)]
    ig_steps: usize,
    #[arg(long, default_value_t = 50)]
    sg_samples: usize,
    /// SmoothGrad noise scale as a fraction of the input's value range.
    #[arg(long, default_value_t = 0.2)]
    sg_noise: f64,
    /// Layer index GradCAM explains (default: last convolution).
    #[arg(long)]
    gradcam_layer: Option<usize>,
    /// AOPC horizon in pixels (default: all pixels).
    #[arg(long)]
    aopc_steps: Option<usize>,
    /// Also estimate TPN/TPS with a Riemann sum on this many cells.
    #[arg(long)]
    riemann_samples: Option<usize>,
    /// Run on one thread.
    #[arg(long)]
    sequential: bool,
    #[arg(long, env = OUTPUT_DIR_ENV, default_value = "attrib-eval-out")]
    output_dir: PathBuf,
}

impl Common {
    fn class_mode(&self) -> Result<ClassMode, Error> {
        if let Some(p) = &self.labels {
            return Ok(ClassMode::LabelFile(p.clone()));
        }
        match self.class.as_str() {
            "predicted" => Ok(ClassMode::Predicted),
            s => s
                .parse()
                .map(ClassMode::Fixed)
                .map_err(|_| Error::Config(format!("--class must be `predicted` or an index, got {s:?}"))),
        }
    }

    fn settings(&self, record_timing: bool) -> EvalSettings {
        EvalSettings {
            score_mode: self.score_mode,
            baseline_value: self.baseline,
            chunk: self.chunk,
            epsilon: self.epsilon,
            aopc_steps: self.aopc_steps,
            riemann_samples: self.riemann_samples,
            record_timing,
        }
    }

    fn method_config(&self) -> MethodConfig {
        MethodConfig {
            ig_steps: self.ig_steps,
            sg_samples: self.sg_samples,
            sg_noise_fraction: self.sg_noise,
            baseline_value: self.baseline,
            rng_seed: self.seed,
            gradcam_layer: self.gradcam_layer,
            score_mode: self.score_mode,
            parallelism: Parallelism::Sequential,
        }
    }

    fn parallelism(&self) -> Parallelism {
        if self.sequential {
            Parallelism::Sequential
        } else {
            Parallelism::Parallel
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of PGM/PPM/raw-tensor images, or one image file.
    #[arg(long)]
    images: PathBuf,
    /// Comma-separated methods (default: all).
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Record per-row runtime (makes outputs run-dependent).
    #[arg(long)]
    timing: bool,
    /// Write curve CSVs for every ok row.
    #[arg(long)]
    export_curves: bool,
    /// With --export-curves, also write SVG charts.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct WinnersArgs {
    /// metrics.csv produced by `eval`.
    #[arg(long)]
    metrics: PathBuf,
    /// One table per image instead of one on per-method medians.
    #[arg(long)]
    per_image: bool,
    /// Write here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CurvesArgs {
    #[command(flatten)]
    common: Common,
    /// Image file.
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    method: String,
    /// Skip the SVG chart.
    #[arg(long)]
    no_svg: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, env = OUTPUT_DIR_ENV, default_value = "synth")]
    output_dir: PathBuf,
    /// Evaluation images to write.
    #[arg(long, default_value_t = 200)]
    count: usize,
    /// Training samples (drawn separately from the written images).
    #[arg(long, default_value_t = 600)]
    train_count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Config(Error),
    NoRows(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::EmptyInput(msg) => Failure::NoRows(msg),
            other => Failure::Config(other),
        }
    }
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let c = &args.common;
    let mut config = RunConfig::new(&c.model, &args.images, &c.output_dir);
    if !args.methods.is_empty() {
        config.methods = args.methods.clone();
    }
    config.class_mode = c.class_mode()?;
    config.settings = c.settings(args.timing);
    config.method_config = c.method_config();
    config.seed = c.seed;
    config.parallelism = c.parallelism();
    config.export_curves = args.export_curves;
    config.export_svg = args.svg;
    let outcome = harness::run_eval(&config)?;
    for s in &outcome.skipped {
        eprintln!("skipped {} {}: {}", s.image_id, s.method.as_deref().unwrap_or("(all methods)"), s.reason);
    }
    let ok = outcome.ok_rows();
    println!(
        "{} rows ({} ok, {} excluded) over {} images; wrote {}",
        outcome.reports.len(),
        ok,
        outcome.reports.len() - ok,
        outcome.summary.images,
        config.output_dir.display()
    );
    if ok == 0 {
        return Err(Failure::NoRows("no usable rows".into()));
    }
    Ok(())
}

fn winners(args: WinnersArgs) -> Result<(), Failure> {
    let reports = report::read_metrics(&args.metrics)?;
    let table = summary::winners_csv(&harness::select_winners(&reports, args.per_image)?)?;
    match &args.output {
        Some(path) => std::fs::write(path, table).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        None => print!("{table}"),
    }
    Ok(())
}

fn curves_cmd(args: CurvesArgs) -> Result<(), Failure> {
    let c = &args.common;
    let model = load_model(&c.model)?;
    let image = harness::load_image(&args.image, Some(model.input_shape()))?;
    let id = harness::image::image_id(&args.image);
    let provider = BuiltinMethods;
    if !harness::AttributionProvider::supports(&provider, &args.method) {
        return Err(Error::Config(format!("unknown method {:?}", args.method)).into());
    }
    let images = [LoadedImage { id: id.clone(), image }];
    let (rows, skipped) = harness::evaluate_corpus(
        &model,
        &images,
        std::slice::from_ref(&args.method),
        &c.class_mode()?,
        &provider,
        &c.settings(false),
        &c.method_config(),
        c.parallelism(),
    )?;
    if let Some(s) = skipped.first() {
        return Err(Error::Config(s.reason.clone()).into());
    }
    let (row, curves) = rows.into_iter().next().ok_or_else(|| Error::EmptyInput("no row".into()))?;
    let Some(curves) = curves else {
        println!("{} / {}: status {}, no curves written", row.image_id, row.method, row.status);
        return Err(Failure::NoRows(row.status.to_string()));
    };
    let files = curves::export_curves(&c.output_dir, &id, &args.method, &curves, !args.no_svg)?;
    println!(
        "{} / {} class {}: TPN {} TPS {}",
        row.image_id,
        row.method,
        row.class_index,
        row.tpn.unwrap_or(f64::NAN),
        row.tps.unwrap_or(f64::NAN)
    );
    for f in files {
        println!("  {}", f.display());
    }
    Ok(())
}

fn synth_cmd(args: SynthArgs) -> Result<(), Failure> {
    let out = &args.output_dir;
    let images_dir = out.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::Config(format!("{}: {e}", images_dir.display())))?;
    let (model, stats) = synth::trained_desk_cnn(args.seed, args.train_count)?;
    let model_path = out.join("model.json");
    save_model(&model, &model_path)?;
    let samples = synth::corpus(args.count, args.seed.wrapping_add(1))?;
    let mut labels = String::from("image_id,label\n");
    for s in &samples {
        harness::write_pnm(images_dir.join(format!("{}.pgm", s.id)), &s.image)?;
        labels.push_str(&format!("{},{}\n", s.id, s.label));
    }
    write_file(&out.join("labels.csv"), &labels)?;
    println!(
        "trained {} parameters: loss {:.4}, training accuracy {:.3}",
        model.parameter_count(),
        stats.final_loss,
        stats.accuracy
    );
    println!("wrote {}, {} images, labels.csv under {}", model_path.display(), samples.len(), out.display());
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Eval(a) => eval(a),
        Command::Winners(a) => winners(a),
        Command::Curves(a) => curves_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::NoRows(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
