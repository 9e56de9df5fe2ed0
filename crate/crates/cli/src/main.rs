use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cnext_cli::commands::{cmd_compare, cmd_run, cmd_theory, cmd_verify_ops};
use cnext_cli::config::{HyperConfig, SchemeName};
use cnext_cli::{CliError, CliResult, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "cnext", version, about = "Compressed decentralized Newton experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheme, optionally averaged over several seeds.
    Run(Common),
    /// Run every `[[compare]]` variant on the same data.
    Compare(Common),
    /// Report the contraction matrix and the step-size conditions.
    Theory(Common),
    /// Measure compression operator constants.
    VerifyOps(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Cnext,
    FirstOrderGt,
    UncompressedGiant,
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; defaults reproduce the ridge experiment.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seeds to average over.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// identity, qnbbq, randomk, topk or qnormsigned.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    b: Option<u32>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha_x: Option<f64>,
    #[arg(long)]
    alpha_y: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    covtype_path: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let overrides = Overrides {
            seed: self.seed,
            seeds: self.seeds.clone(),
            mode: self.mode.map(|m| match m {
                ModeArg::Cnext => cnext::solver::Mode::Cnext,
                ModeArg::FirstOrderGt => cnext::solver::Mode::FirstOrderGt,
                ModeArg::UncompressedGiant => cnext::solver::Mode::UncompressedGiant,
            }),
            output_dir: self.output_dir.clone(),
            scheme: self.scheme.as_deref().map(SchemeName::parse).transpose()?,
            k: self.k,
            b: self.b,
            hyper: HyperConfig {
                eta: self.eta,
                gamma: self.gamma,
                alpha_x: self.alpha_x,
                alpha_y: self.alpha_y,
                iterations: self.iterations,
                tol: self.tol,
            },
            covtype_path: self.covtype_path.clone(),
        };
        overrides.apply(&mut cfg)?;
        Ok(cfg)
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Run(c) => {
            let out = cmd_run(&c.load()?)?;
            if let Some(last) = out.runs.mean.last() {
                println!(
                    "{}: t = {}, opt_err = {:e}, residual = {:e}, bits = {}",
                    out.variant.label, last.t, last.errors.opt, last.residual, last.bits_cum
                );
            }
            println!("wrote {}", out.dir.display());
        }
        Command::Compare(c) => {
            let out = cmd_compare(&c.load()?)?;
            for (v, tr) in out.variants.iter().zip(&out.traces) {
                let hit = tr.first_below(1e-6).map(|r| (r.t, r.bits_cum));
                match hit {
                    Some((t, bits)) => println!("{}: residual 1e-6 at t = {t}, {bits} bits", v.label),
                    None => println!("{}: residual 1e-6 not reached", v.label),
                }
            }
            println!("wrote {}", out.dir.join("compare.csv").display());
        }
        Command::Theory(c) => {
            let out = cmd_theory(&c.load()?)?;
            println!("{}", serde_json::to_string_pretty(&out).expect("report serializes"));
        }
        Command::VerifyOps(c) => {
            let out = cmd_verify_ops(&c.load()?)?;
            println!("{}", serde_json::to_string_pretty(&out).expect("report serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_failure(&e),
    }
}

fn report_failure(e: &CliError) -> ExitCode {
    let json = serde_json::json!({ "error": e.report() });
    eprintln!("{json}");
    ExitCode::from(e.exit_code() as u8)
}
