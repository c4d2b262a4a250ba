use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use detour::encoders::EncoderConfig;
use detour::evaluation::TableFormat;
use detour::experiment::{self, ExperimentConfig, ExperimentError};
use detour::model::gradcheck_instance;
use detour::numerics::suite::{op_gradient_suite, OP_TOLERANCE};

#[derive(Parser)]
#[command(name = "detour", version, about = "Context-compression experiments: mean pooling, hierarchical conv, optical rendering and truncation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

impl From<Format> for TableFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => TableFormat::Csv,
            Format::Markdown => TableFormat::Markdown,
        }
    }
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the tokenizer and cut train/validation segments.
    PrepareData(RunArgs),
    /// Reconstruction phase.
    TrainRecon(RunArgs),
    /// Continuation LM phase, from the reconstruction checkpoint.
    TrainLm(RunArgs),
    /// Validation perplexity of every trained phase.
    Eval(RunArgs),
    /// Every stage for each encoder of the [sweep] section, then one report.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "markdown")]
        format: Format,
    },
    /// Finite-difference checks of every op and of two whole models.
    Gradcheck {
        /// Tolerance for single-op checks.
        #[arg(long, default_value_t = OP_TOLERANCE)]
        tol: f64,
        /// Tolerance for whole-model checks.
        #[arg(long, default_value_t = 1e-3)]
        model_tol: f64,
        /// Number of seeds.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Regenerate result tables from the rows stored in a run or sweep
    /// directory.
    Report {
        /// Run or sweep directory. Defaults to the one for --config.
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "markdown")]
        format: Format,
    },
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, ExperimentError> {
    load_with(&args.config, args.seed, args.out.clone())
}

fn load_with(path: &std::path::Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    Ok(cfg)
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

fn gradcheck(tol: f64, model_tol: f64, seeds: u64) -> Result<bool, ExperimentError> {
    let seeds: Vec<u64> = (0..seeds).collect();
    let mut ok = true;
    println!("{:<28} {:>4} {:>12} {:>6}", "check", "seed", "max_rel_err", "pass");
    let ops = op_gradient_suite(&seeds, tol).map_err(detour::model::ModelError::from)?;
    for (seed, r) in &ops {
        println!("{:<28} {:>4} {:>12.3e} {:>6}", r.op_name, seed, r.max_rel_err, r.pass);
        ok &= r.pass;
    }
    for enc in [EncoderConfig::mean_pool(2, 2), EncoderConfig::hierarchical(1)] {
        for &seed in &seeds {
            let (model, input) = gradcheck_instance(&enc, seed)?;
            let r = model.gradient_check(&format!("model[{}]", enc.kind()), &input, model_tol)?;
            println!("{:<28} {:>4} {:>12.3e} {:>6}", r.op_name, seed, r.max_rel_err, r.pass);
            ok &= r.pass;
        }
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool, ExperimentError> {
    let mut sink = log;
    match cli.command {
        Command::PrepareData(a) => {
            let data = experiment::prepare_data(&load(&a)?, &mut sink)?;
            println!("{}", data.dir.display());
        }
        Command::TrainRecon(a) => {
            let cfg = load(&a)?;
            experiment::train_recon_phase(&cfg, &mut sink)?;
            println!("{}", cfg.run_dir().display());
        }
        Command::TrainLm(a) => {
            let cfg = load(&a)?;
            experiment::train_lm_phase(&cfg, &mut sink)?;
            println!("{}", cfg.run_dir().display());
        }
        Command::Eval(a) => {
            let cfg = load(&a)?;
            experiment::evaluate(&cfg, &mut sink)?;
            for (_, text) in experiment::report(&cfg.run_dir(), &[TableFormat::Markdown])? {
                print!("{text}");
            }
        }
        Command::Sweep { run, format } => {
            let cfg = load(&run)?;
            let dir = experiment::sweep(&cfg, &mut sink)?;
            let ext = if matches!(format, Format::Csv) { "csv" } else { "md" };
            for phase in ["recon", "lm"] {
                let path = dir.join(format!("results_{phase}.{ext}"));
                if let Ok(text) = std::fs::read_to_string(&path) {
                    println!("{phase}:\n{text}");
                }
            }
            println!("{}", dir.display());
        }
        Command::Gradcheck { tol, model_tol, seeds } => return gradcheck(tol, model_tol, seeds),
        Command::Report { dir, config, seed, out, format } => {
            let dir = match (dir, config) {
                (Some(d), _) => d,
                (None, Some(c)) => load_with(&c, seed, out)?.run_dir(),
                (None, None) => {
                    return Err(ExperimentError::Config { field: "--dir".into(), message: "pass --dir or --config".into() });
                }
            };
            for (path, text) in experiment::report(&dir, &[format.into()])? {
                eprintln!("wrote {}", path.display());
                print!("{text}");
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("gradient check failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
