mod run;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use errcast_core::config::LearnerKind;

use run::{Experiment, RunConfig, Target};

#[derive(Parser)]
#[command(name = "errcast", version, about = "Learn and correct forecast-model structural error on a two-scale Lorenz-96 twin")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the learner.
    #[arg(long, global = true, value_enum)]
    learner: Option<LearnerArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LearnerArg {
    Rf,
    Nn,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Pointwise,
    Norm,
    Physics,
}

#[derive(Subcommand)]
enum Command {
    /// Write the training and test datasets.
    Generate(Common),
    /// Train one model and save it as JSON.
    Train {
        #[arg(long, value_enum, default_value = "pointwise")]
        target: TargetArg,
        #[command(flatten)]
        common: Common,
    },
    /// Apply a saved model to the test window(s).
    Predict {
        /// Model JSON written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Pointwise error prediction and forecast correction.
    P1Pointwise(Common),
    /// Error-norm prediction and configuration ranking.
    P1Norm(Common),
    /// Physics-configuration model and package attribution.
    P2Attribute {
        /// Use the surrogate variant with a dominant closure package.
        #[arg(long)]
        planted: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run every experiment and write all reports.
    Report(Common),
    /// Refit the closure polynomials on a truth run.
    FitClosure {
        /// Base steps sampled after spin-up.
        #[arg(long, default_value_t = 20_000)]
        steps: usize,
        /// Sample every this many steps.
        #[arg(long, default_value_t = 10)]
        stride: usize,
        #[command(flatten)]
        common: Common,
    },
}

impl From<Command> for RunConfig {
    fn from(command: Command) -> Self {
        let (experiment, common) = match command {
            Command::Generate(c) => (Experiment::Generate, c),
            Command::Train { target, common } => (
                Experiment::Train(match target {
                    TargetArg::Pointwise => Target::Pointwise,
                    TargetArg::Norm => Target::Norm,
                    TargetArg::Physics => Target::Physics,
                }),
                common,
            ),
            Command::Predict { model, common } => (Experiment::Predict(model), common),
            Command::P1Pointwise(c) => (Experiment::Pointwise, c),
            Command::P1Norm(c) => (Experiment::Norm, c),
            Command::P2Attribute { planted, common } => (Experiment::Attribute { planted }, common),
            Command::Report(c) => (Experiment::Report, c),
            Command::FitClosure { steps, stride, common } => (Experiment::FitClosure { steps, stride }, common),
        };
        RunConfig {
            experiment,
            config: common.config,
            out: common.out,
            seed: common.seed,
            learner: common.learner.map(|l| match l {
                LearnerArg::Rf => LearnerKind::Rf,
                LearnerArg::Nn => LearnerKind::Nn,
            }),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run::dispatch(&cli.command.into()) {
        Ok(files) => {
            let mut stdout = std::io::stdout().lock();
            for f in files {
                if writeln!(stdout, "{}", f.display()).is_err() {
                    break;
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("errcast: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
