use clap::{Args, Parser, Subcommand, ValueEnum};
use gpr_triage::data::{synth_generate, write_csv, SynthConfig};
use gpr_triage::experiment::{
    check_guarantees, merge_reports, read_artifact, run_experiment, write_artifact,
    ExperimentConfig, ExperimentError, GuaranteeConfig, GuaranteeMethod,
};
use gpr_triage::mlp::TrainConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "gpr-triage", version, about = "Interval-based triage of treatment-plan pass rates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic plan dataset as CSV with a `.meta` sidecar.
    GenData(GenDataArgs),
    /// Run the method comparison and write an artifact directory.
    Run(RunArgs),
    /// Monte-Carlo check of the CP coverage or CRC risk guarantee.
    CheckGuarantees(GuaranteeArgs),
    /// Merge one or more artifact directories into comparison tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.05)]
    unsafe_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 12)]
    dim: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    feature_shift: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set epochs=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    data_csv: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    ensemble_size: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Comma-separated subset of base,cp,cqr,crc,ct,ta_crc.
    #[arg(long)]
    methods: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Cp,
    Crc,
}

#[derive(Debug, Args)]
struct GuaranteeArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long, default_value_t = 500)]
    trials: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 95.0)]
    safety_threshold: f64,
    #[arg(long, default_value_t = 100)]
    n_cal: usize,
    #[arg(long, default_value_t = 500)]
    n_test: usize,
    /// Size of the population used to fit the fixed model.
    #[arg(long, default_value_t = 1000)]
    n_train: usize,
    #[arg(long, default_value_t = 0.05)]
    unsafe_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 12)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value = "results")]
    output_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(required = true)]
    artifacts: Vec<PathBuf>,
    /// Write tables here instead of stdout only.
    #[arg(long)]
    out: Option<PathBuf>,
}

type Result<T> = std::result::Result<T, ExperimentError>;

fn io_err(path: &std::path::Path, e: std::io::Error) -> ExperimentError {
    ExperimentError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let cfg = SynthConfig {
        n: args.n,
        unsafe_rate: args.unsafe_rate,
        noise_sd: args.noise_sd,
        seed: args.seed,
        dim: args.dim,
        feature_shift: args.feature_shift,
    };
    let data = synth_generate(&cfg)?;
    write_csv(&data, &args.out)?;
    let mut sidecar = args.out.clone().into_os_string();
    sidecar.push(".meta");
    if let Some(meta) = &data.synth_meta {
        meta.write(PathBuf::from(sidecar))?;
    }
    println!("wrote {} plans to {}", data.len(), args.out.display());
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut overrides = Vec::new();
    let mut push = |k: &str, v: String| overrides.push(format!("{k}={v}"));
    if let Some(p) = &args.data_csv {
        push("data_csv", format!("{:?}", p.display().to_string()));
    }
    if let Some(p) = &args.output_dir {
        push("output_dir", format!("{:?}", p.display().to_string()));
    }
    if let Some(v) = args.master_seed {
        push("master_seed", v.to_string());
    }
    if let Some(v) = args.repeats {
        push("repeats", v.to_string());
    }
    if let Some(v) = args.ensemble_size {
        push("ensemble_size", v.to_string());
    }
    if let Some(v) = args.alpha {
        push("alpha", v.to_string());
    }
    if let Some(v) = args.epochs {
        push("epochs", v.to_string());
    }
    if let Some(m) = &args.methods {
        let keys: Vec<String> = m.split(',').map(|k| format!("{:?}", k.trim())).collect();
        push("methods", format!("[{}]", keys.join(",")));
    }
    overrides.extend(args.overrides);
    let cfg = ExperimentConfig::load_with_overrides(args.config.as_deref(), &overrides)?;
    let artifact = run_experiment(&cfg)?;
    write_artifact(&artifact, &cfg.output_dir)?;
    print!("{}", artifact.prospective_table()?);
    println!();
    print!("{}", artifact.retrospective_table()?);
    for f in &artifact.failures {
        eprintln!("repeat {} failed: kind={} message={}", f.repeat, f.kind, f.message);
    }
    if artifact.repeats.is_empty() {
        return Err(ExperimentError::Precondition("every repeat failed".into()));
    }
    Ok(())
}

fn guarantees(args: GuaranteeArgs) -> Result<bool> {
    let cfg = GuaranteeConfig {
        method: match args.method {
            MethodArg::Cp => GuaranteeMethod::Cp,
            MethodArg::Crc => GuaranteeMethod::Crc,
        },
        trials: args.trials,
        n_cal: args.n_cal,
        n_test: args.n_test,
        alpha: args.alpha,
        safety_threshold: args.safety_threshold,
        synth: SynthConfig {
            n: args.n_train,
            unsafe_rate: args.unsafe_rate,
            noise_sd: args.noise_sd,
            seed: args.seed,
            dim: args.dim,
            feature_shift: 0.0,
        },
        train: TrainConfig {
            hidden: args.hidden,
            epochs: args.epochs,
            seed: args.seed,
            ..TrainConfig::default()
        },
        ..GuaranteeConfig::default()
    };
    let summary = check_guarantees(&cfg)?;
    let text = summary.to_text();
    std::fs::create_dir_all(&args.output_dir).map_err(|e| io_err(&args.output_dir, e))?;
    let path = args.output_dir.join("guarantees.txt");
    std::fs::write(&path, &text).map_err(|e| io_err(&path, e))?;
    print!("{text}");
    Ok(summary.pass)
}

fn report(args: ReportArgs) -> Result<()> {
    let summaries = args
        .artifacts
        .iter()
        .map(read_artifact)
        .collect::<Result<Vec<_>>>()?;
    let (prospective, retrospective) = merge_reports(&summaries)?;
    let text = format!("{prospective}\n{retrospective}");
    if let Some(out) = &args.out {
        std::fs::write(out, &text).map_err(|e| io_err(out, e))?;
    }
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenData(a) => gen_data(a).map(|_| true),
        Command::Run(a) => run(a).map(|_| true),
        Command::CheckGuarantees(a) => guarantees(a),
        Command::Report(a) => report(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: kind=guarantee message=\"acceptance band not met\"");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: kind={} message={:?}", e.kind(), e.to_string());
            ExitCode::from(2)
        }
    }
}
