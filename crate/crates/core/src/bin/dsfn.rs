use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dsfn::eval::{kernel_label, lambda_label, ReportRecord, DEFAULT_LAMBDA_GRID};
use dsfn::trainer::{train, LinearEmbedding, TrainConfig};
use dsfn::{
    compare_methods, evaluate, lambda_sweep, load_csv, synth_generate, Dataset, Error, EvalConfig, EvalReport,
    FilterKind, FilterSpec, KernelSpec, LambdaPolicy, Method, OneShotPolicy, Result, SynthConfig,
};

#[derive(Parser)]
#[command(
    name = "dsfn",
    version,
    about = "Spectral-filter few-shot classification over embedding vectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one configuration over sampled episodes.
    Eval(EvalArgs),
    /// Evaluate several methods on the same episode stream.
    Compare {
        #[command(flatten)]
        eval: EvalArgs,
        /// `name:kernel:filter:lambda_policy`, e.g. `dsfn:rbf:tikhonov:rho=0.1`.
        #[arg(long = "method", required = true)]
        methods: Vec<String>,
    },
    /// Evaluate a grid of absolute λ values on the same episode stream.
    Sweep {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LAMBDA_GRID.to_vec())]
        lambdas: Vec<f64>,
    },
    /// Write a synthetic dataset as CSV.
    SynthDump {
        /// Preset name (reference, small4, separable) or a TOML config file.
        #[arg(long)]
        synth: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a linear embedding and ζ with finite-difference gradients.
    Train(TrainArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct DataSource {
    /// CSV file with rows `label,f1,...,fd`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Preset name (reference, small4, separable) or a TOML config file.
    #[arg(long)]
    synth: Option<String>,
}

#[derive(Args)]
struct EpisodeArgs {
    #[arg(long, default_value_t = 5)]
    way: usize,
    #[arg(long, default_value_t = 5)]
    shot: usize,
    /// Queries per class.
    #[arg(long, default_value_t = 15)]
    query: usize,
    /// `none`, `jitter` or `jitter:<sigma>`.
    #[arg(long = "one-shot", default_value = "none")]
    one_shot: OneShotPolicy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ModelArgs {
    /// `identity` or `rbf`.
    #[arg(long, default_value = "identity")]
    kernel: String,
    /// RBF bandwidth σ²; defaults to the feature dimension.
    #[arg(long)]
    sigma2: Option<f64>,
    /// `zero`, `tikhonov` or `tsvd`.
    #[arg(long, default_value = "tikhonov")]
    filter: FilterKind,
    /// Absolute λ.
    #[arg(long, conflicts_with = "rho")]
    lambda: Option<f64>,
    /// λ as a fraction of each class's largest eigenvalue (default 0.1).
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    zeta: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    source: DataSource,
    #[command(flatten)]
    episode: EpisodeArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    /// Drop the jittered copy from the class mean in 1-shot episodes.
    #[arg(long)]
    exclude_augmented: bool,
    /// Write the reports as JSON records to this path.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: DataSource,
    #[command(flatten)]
    episode: EpisodeArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// Episodes per gradient estimate.
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long = "lr", default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1e-5)]
    fd_step: f64,
    /// Output dimension of the embedding; defaults to the input dimension.
    #[arg(long)]
    d_out: Option<usize>,
    /// Keep ζ fixed.
    #[arg(long)]
    freeze_zeta: bool,
    /// Keep the embedding weights fixed.
    #[arg(long)]
    freeze_weights: bool,
    /// Where to write `zeta,<value>` followed by the weight rows.
    #[arg(long)]
    out: PathBuf,
}

fn synth_config(arg: &str) -> Result<SynthConfig> {
    if let Some(cfg) = SynthConfig::preset(arg) {
        return Ok(cfg);
    }
    let path = Path::new(arg);
    if !path.exists() {
        return Err(Error::config(format!(
            "'{arg}' is neither a preset (reference, small4, separable) nor a config file"
        )));
    }
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn load(source: &DataSource) -> Result<Dataset> {
    match (&source.data, &source.synth) {
        (Some(path), _) => load_csv(path),
        (None, Some(synth)) => synth_generate(&synth_config(synth)?),
        (None, None) => Err(Error::config("one of --data or --synth is required")),
    }
}

fn kernel_spec(name: &str, sigma2: Option<f64>, dim: usize) -> Result<KernelSpec> {
    match name.trim().to_ascii_lowercase().as_str() {
        "identity" | "linear" => Ok(KernelSpec::Identity),
        "rbf" => match sigma2 {
            Some(s) => KernelSpec::rbf(s),
            None => Ok(KernelSpec::rbf_for_dim(dim)),
        },
        other => match other.strip_prefix("rbf=") {
            Some(v) => KernelSpec::rbf(
                v.parse()
                    .map_err(|_| Error::config(format!("invalid RBF bandwidth '{v}'")))?,
            ),
            None => Err(Error::config(format!("unknown kernel '{name}'"))),
        },
    }
}

impl ModelArgs {
    fn filter_spec(&self) -> FilterSpec {
        let policy = match (self.lambda, self.rho) {
            (Some(l), _) => LambdaPolicy::Absolute(l),
            (None, Some(r)) => LambdaPolicy::RelativeToMaxEigenvalue(r),
            (None, None) => LambdaPolicy::RelativeToMaxEigenvalue(0.1),
        };
        FilterSpec {
            kind: self.filter,
            lambda_policy: policy,
        }
    }
}

impl EvalArgs {
    fn config(&self, dataset: &Dataset) -> Result<EvalConfig> {
        let cfg = EvalConfig {
            way: self.episode.way,
            shot: self.episode.shot,
            query_per_class: self.episode.query,
            episode_count: self.episodes,
            kernel: kernel_spec(&self.model.kernel, self.model.sigma2, dataset.dim())?,
            filter: self.model.filter_spec(),
            zeta: self.model.zeta,
            one_shot_policy: self.episode.one_shot,
            exclude_augmented_from_mean: self.exclude_augmented,
            master_seed: self.episode.seed,
            workers: self.workers,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_method(text: &str, sigma2: Option<f64>, dim: usize) -> Result<Method> {
    let parts: Vec<&str> = text.split(':').collect();
    let [name, kernel, filter, policy] = parts.as_slice() else {
        return Err(Error::config(format!(
            "method '{text}' must have the form name:kernel:filter:lambda_policy"
        )));
    };
    let kind: FilterKind = filter.parse()?;
    let lambda_policy = match (kind, *policy) {
        (FilterKind::Zero, "" | "none") => LambdaPolicy::Absolute(0.0),
        (_, p) => p.parse()?,
    };
    let spec = FilterSpec { kind, lambda_policy };
    spec.validate()?;
    Ok(Method::new(*name, kernel_spec(kernel, sigma2, dim)?, spec))
}

fn print_reports(reports: &[EvalReport]) {
    let rows: Vec<[String; 8]> = reports
        .iter()
        .map(|r| {
            [
                r.name.clone(),
                kernel_label(&r.config.kernel),
                r.config.filter.kind.to_string(),
                lambda_label(&r.config.filter),
                format!("{:.2}", 100.0 * r.accuracy_mean),
                format!("{:.2}", 100.0 * r.ci95_halfwidth),
                format!("{:.4}", r.mean_loss),
                r.config.episode_count.to_string(),
            ]
        })
        .collect();
    let header = [
        "method", "kernel", "filter", "lambda", "acc%", "ci95", "loss", "episodes",
    ];
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 4 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
    };
    println!("{}", line(header.to_vec()));
    for row in &rows {
        println!("{}", line(row.iter().map(String::as_str).collect()));
    }
}

fn write_json(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let records: Vec<ReportRecord> = reports.iter().map(EvalReport::record).collect();
    let text = serde_json::to_string_pretty(&records).map_err(|e| Error::data(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn finish(args: &EvalArgs, reports: Vec<EvalReport>) -> Result<()> {
    print_reports(&reports);
    match &args.json {
        Some(path) => write_json(path, &reports),
        None => Ok(()),
    }
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let dataset = load(&args.source)?;
    let d_in = dataset.dim();
    let d_out = args.d_out.unwrap_or(d_in);
    if d_out == 0 || d_out > d_in {
        return Err(Error::config(format!("--d-out must be in 1..={d_in}")));
    }
    let cfg = TrainConfig {
        steps: args.steps,
        batch_episodes: args.batch,
        learning_rate: args.learning_rate,
        fd_step: args.fd_step,
        train_zeta: !args.freeze_zeta,
        train_weights: !args.freeze_weights,
        way: args.episode.way,
        shot: args.episode.shot,
        query_per_class: args.episode.query,
        kernel: kernel_spec(&args.model.kernel, args.model.sigma2, d_out)?,
        filter: args.model.filter_spec(),
        one_shot_policy: args.episode.one_shot,
        seed: args.episode.seed,
    };
    let init = LinearEmbedding::new(dsfn::linalg::Matrix::from_fn(d_out, d_in, |i, j| {
        f64::from(u8::from(i == j))
    }))?;
    let outcome = train(&dataset, &cfg, init, args.model.zeta)?;
    for (step, (before, after)) in outcome.loss_history.iter().zip(&outcome.post_step_losses).enumerate() {
        println!("step {step:>4}  loss {before:.6} -> {after:.6}");
    }
    println!("zeta {}", outcome.zeta);
    outcome.embedding.write_csv(outcome.zeta, &args.out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Eval(args) => {
            let dataset = load(&args.source)?;
            let cfg = args.config(&dataset)?;
            let report = evaluate(&dataset, &cfg)?;
            finish(&args, vec![report])
        }
        Command::Compare { eval, methods } => {
            let dataset = load(&eval.source)?;
            let cfg = eval.config(&dataset)?;
            let methods = methods
                .iter()
                .map(|m| parse_method(m, eval.model.sigma2, dataset.dim()))
                .collect::<Result<Vec<_>>>()?;
            let reports = compare_methods(&dataset, &cfg, &methods)?;
            finish(&eval, reports)
        }
        Command::Sweep { eval, lambdas } => {
            let dataset = load(&eval.source)?;
            let cfg = eval.config(&dataset)?;
            let reports = lambda_sweep(&dataset, &cfg, &lambdas)?;
            finish(&eval, reports)
        }
        Command::SynthDump { synth, out } => {
            let dataset = synth_generate(&synth_config(&synth)?)?;
            dataset.write_csv(&out)?;
            println!(
                "wrote {} samples, {} classes, dimension {} to {}",
                dataset.len(),
                dataset.classes().len(),
                dataset.dim(),
                out.display()
            );
            Ok(())
        }
        Command::Train(args) => run_train(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.kind().exit_code() as u8)
        }
    }
}
