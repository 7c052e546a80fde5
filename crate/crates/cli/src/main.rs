use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use glasslab::harness::{render, run, write_records, ExperimentConfig, Format, Kind};
use glasslab::Error;

#[derive(Parser)]
#[command(
    name = "glasslab",
    version,
    about = "Monte Carlo experiments on a two-block spin glass"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Free energy with and without the perturbation, and their gap.
    FreeEnergy(Common),
    /// Two-replica overlap histogram.
    Overlaps(Common),
    /// Rate of triples violating the ultrametric inequality.
    Ultrametric(Common),
    /// Window counts of the shifted extremal process and block-max laws.
    Extremes(Common),
    /// Frequency of forbidden overlap pairs inside a window.
    ForbiddenPairs(Common),
    /// Two-replica law of the normalized cascade.
    Cascade(Common),
    /// Two-replica law of the Poisson-Dirichlet points with coalescent marks.
    Coalescent(Common),
    /// Ghirlanda-Guerra residual.
    Eggi(Common),
    /// Integration-by-parts identity for the p-power field.
    Ibp(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration; its `kind` must match the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "N")]
    n: Option<u32>,
    #[arg(long)]
    a1: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    master_seed: Option<u64>,
    /// Directory for the result file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<Format>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl Command {
    fn split(self) -> (Kind, Common) {
        match self {
            Command::FreeEnergy(c) => (Kind::FreeEnergy, c),
            Command::Overlaps(c) => (Kind::Overlaps, c),
            Command::Ultrametric(c) => (Kind::Ultrametric, c),
            Command::Extremes(c) => (Kind::Extremes, c),
            Command::ForbiddenPairs(c) => (Kind::ForbiddenPairs, c),
            Command::Cascade(c) => (Kind::Cascade, c),
            Command::Coalescent(c) => (Kind::Coalescent, c),
            Command::Eggi(c) => (Kind::Eggi, c),
            Command::Ibp(c) => (Kind::Ibp, c),
        }
    }
}

fn configure(kind: Kind, a: &Common) -> glasslab::Result<ExperimentConfig> {
    let mut c = match &a.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new(kind),
    };
    if c.experiment.kind != kind {
        return Err(Error::config(
            "kind",
            format!("config is for `{}`, not `{kind}`", c.experiment.kind),
        ));
    }
    let m = &mut c.model;
    m.n = a.n.unwrap_or(m.n);
    m.a1 = a.a1.unwrap_or(m.a1);
    m.beta = a.beta.unwrap_or(m.beta);
    m.delta = a.delta.unwrap_or(m.delta);
    m.alpha = a.alpha.unwrap_or(m.alpha);
    c.mc.seeds = a.seeds.unwrap_or(c.mc.seeds);
    c.experiment.master_seed = a.master_seed.unwrap_or(c.experiment.master_seed);
    if a.out.is_some() {
        c.output.dir = a.out.clone();
    }
    c.output.format = a.format.unwrap_or(c.output.format);
    c.validate()?;
    Ok(c)
}

fn main() -> ExitCode {
    let (kind, args) = Cli::parse().command.split();
    let result = configure(kind, &args).and_then(|c| {
        let records = run(&c, args.workers)?;
        print!("{}", render(&records, c.output.format));
        if let Some(dir) = &c.output.dir {
            let path = write_records(&records, dir, c.output.format)?;
            eprintln!("wrote {}", path.display());
        }
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. } => 2,
                Error::CapExceeded { .. } => 3,
                _ => 1,
            })
        }
    }
}
