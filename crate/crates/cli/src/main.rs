//! `latent`: batch driver for the latent mutant pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use latent_core::histstore::{git_export, GitExport};
use latent_core::pipeline::{self, PipelineError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "latent", version, about = "Latent mutant analysis over snapshot histories")]
struct Cli {
    #[command(flatten)]
    run: RunFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunFlags {
    /// Run configuration file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// History bundle directory (repeatable).
    #[arg(long = "bundle", global = true, value_name = "DIR")]
    bundles: Vec<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Latency threshold in days.
    #[arg(long = "n-thr", global = true, value_name = "DAYS")]
    n_thr: Option<i64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long = "k-folds", global = true)]
    k_folds: Option<usize>,
    #[arg(long, global = true)]
    repeats: Option<usize>,
    /// Drop the mutation operator feature from the model.
    #[arg(long = "ablate-mut-op", global = true)]
    ablate_mut_op: bool,
    /// Worker thread cap.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate mutants at injection and compute the kill matrix.
    Mutate,
    /// Follow live mutants through later revisions.
    Propagate,
    /// Extract history features for classified mutants.
    Features,
    /// Cross-validate and fit the classifier.
    Train,
    /// Write report.md and report.csv.
    Report,
    /// Run every stage.
    All,
    /// Convert a git repository into a history bundle.
    GitExport(GitExportArgs),
}

#[derive(Args, Debug)]
struct GitExportArgs {
    /// Repository to read.
    #[arg(long, value_name = "DIR")]
    repo: PathBuf,
    /// Bundle directory to create.
    #[arg(long = "to", value_name = "DIR")]
    to: PathBuf,
    #[arg(long)]
    name: String,
    /// Index of the injection revision.
    #[arg(long, default_value_t = 0)]
    injection: usize,
    /// Revision range passed to `git rev-list`.
    #[arg(long, default_value = "HEAD")]
    range: String,
    #[arg(long = "src-dir", default_value = "src")]
    src_dir: String,
    #[arg(long = "tests-file", default_value = "tests.json")]
    tests_file: String,
}

impl RunFlags {
    fn resolve(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if !self.bundles.is_empty() {
            cfg.bundles = self.bundles.clone();
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(n) = self.n_thr {
            cfg.n_thr_days = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(k) = self.k_folds {
            cfg.k_folds = k;
        }
        if let Some(r) = self.repeats {
            cfg.repeats = r;
        }
        if self.ablate_mut_op {
            cfg.ablate_mut_op = true;
        }
        if self.jobs.is_some() {
            cfg.jobs = self.jobs;
        }
        Ok(cfg)
    }
}

fn each_bundle(cfg: &RunConfig, stage: fn(&RunConfig, &std::path::Path) -> Result<(), PipelineError>) -> Result<(), PipelineError> {
    cfg.bundles.iter().try_for_each(|b| stage(cfg, b))
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    if let Command::GitExport(a) = &cli.command {
        let opts = GitExport {
            name: a.name.clone(),
            injection_index: a.injection,
            range: a.range.clone(),
            src_dir: a.src_dir.clone(),
            tests_file: a.tests_file.clone(),
        };
        git_export(&a.repo, &a.to, &opts)?;
        return Ok(());
    }
    let cfg = cli.run.resolve()?;
    pipeline::with_jobs(cfg.jobs, || match cli.command {
        Command::Mutate => each_bundle(&cfg, pipeline::stage_mutate),
        Command::Propagate => each_bundle(&cfg, pipeline::stage_propagate),
        Command::Features => each_bundle(&cfg, pipeline::stage_features),
        Command::Train => pipeline::stage_train(&cfg),
        Command::Report => pipeline::stage_report(&cfg),
        Command::All => pipeline::run_all(&cfg),
        Command::GitExport(_) => unreachable!(),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
