use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::commands;
use crate::config::{DomainKind, Resolved};
use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "moser", version, about = "Volume-correcting maps on cubes and tori, weak metrics and area-preserving smoothing")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON run configuration; missing keys take the library defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Thread cap; recorded in the manifest.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve g(ψ) det∇ψ = f on the cube.
    SolveCube {
        #[arg(long)]
        f: Option<PathBuf>,
        #[arg(long)]
        g: Option<PathBuf>,
        #[arg(long)]
        res: Option<usize>,
    },
    /// Solve ψ*σ = λτ on the torus through the chart atlas.
    SolveTorus {
        #[arg(long)]
        sigma: Option<PathBuf>,
        #[arg(long)]
        tau: Option<PathBuf>,
        #[arg(long)]
        res: Option<usize>,
    },
    /// Size of the correction against the weak distance along f_ε.
    CoerciveSweep {
        #[arg(long)]
        f: Option<PathBuf>,
        #[arg(long)]
        g: Option<PathBuf>,
        #[arg(long)]
        res: Option<usize>,
        /// Comma-separated ε values.
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
    /// Smooth a sampled area-preserving homeomorphism of T².
    Smooth {
        #[arg(long)]
        homeo: Option<PathBuf>,
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        res: Option<usize>,
    },
    /// Smooth an isotopy starting at the identity.
    SmoothIsotopy {
        #[arg(long, num_args = 1..)]
        members: Option<Vec<PathBuf>>,
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        res: Option<usize>,
    },
    /// Bounded-Lipschitz distance between two measures or densities.
    Metric {
        a: PathBuf,
        b: PathBuf,
        /// Sup bound of the test functions.
        #[arg(long = "lid-b")]
        lid_b: Option<f64>,
        #[arg(long, value_parser = ["cube", "torus"])]
        domain: Option<String>,
        #[arg(long)]
        atom_cap: Option<usize>,
    },
    /// Fast invariant checks.
    Selftest,
}

fn set<T>(r: &mut Resolved, key: &str, slot: impl FnOnce(&mut Resolved) -> &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot(r) = v;
        r.record(key);
    }
}

/// Loads the config, applies flags and runs the command.
pub fn run(cli: Cli) -> CliResult<(Value, PathBuf)> {
    let mut r = Resolved::load(cli.global.config.as_deref())?;
    set(&mut r, "seed", |r| &mut r.config.seed, cli.global.seed);
    set(&mut r, "threads", |r| &mut r.config.threads, cli.global.threads.map(Some));
    let out = cli.global.out;
    let summary = match cli.command {
        Command::SolveCube { f, g, res } => {
            set(&mut r, "cube.f", |r| &mut r.config.cube.f, f.map(Some));
            set(&mut r, "cube.g", |r| &mut r.config.cube.g, g.map(Some));
            set(&mut r, "cube.res", |r| &mut r.config.cube.res, res);
            commands::solve_cube(&r, &out)?
        }
        Command::SolveTorus { sigma, tau, res } => {
            set(&mut r, "torus.sigma", |r| &mut r.config.torus.sigma, sigma.map(Some));
            set(&mut r, "torus.tau", |r| &mut r.config.torus.tau, tau.map(Some));
            set(&mut r, "torus.res", |r| &mut r.config.torus.res, res);
            commands::solve_torus(&r, &out)?
        }
        Command::CoerciveSweep { f, g, res, eps } => {
            set(&mut r, "cube.f", |r| &mut r.config.cube.f, f.map(Some));
            set(&mut r, "cube.g", |r| &mut r.config.cube.g, g.map(Some));
            set(&mut r, "cube.res", |r| &mut r.config.cube.res, res);
            set(&mut r, "sweep.eps", |r| &mut r.config.sweep.eps, eps);
            commands::coercive_sweep(&r, &out)?
        }
        Command::Smooth { homeo, scale, res } => {
            set(&mut r, "smooth.homeo", |r| &mut r.config.smooth.homeo, homeo.map(Some));
            set(&mut r, "smooth.scale", |r| &mut r.config.smooth.scale, scale);
            set(&mut r, "smooth.res", |r| &mut r.config.smooth.res, res);
            commands::smooth(&r, &out)?
        }
        Command::SmoothIsotopy { members, scale, res } => {
            set(&mut r, "smooth.members", |r| &mut r.config.smooth.members, members);
            set(&mut r, "smooth.scale", |r| &mut r.config.smooth.scale, scale);
            set(&mut r, "smooth.res", |r| &mut r.config.smooth.res, res);
            commands::smooth_isotopy(&r, &out)?
        }
        Command::Metric { a, b, lid_b, domain, atom_cap } => {
            set(&mut r, "metric.a", |r| &mut r.config.metric.a, Some(Some(a)));
            set(&mut r, "metric.b", |r| &mut r.config.metric.b, Some(Some(b)));
            set(&mut r, "metric.lid_b", |r| &mut r.config.metric.lid_b, lid_b);
            let kind = domain.map(|d| if d == "torus" { DomainKind::Torus } else { DomainKind::Cube });
            set(&mut r, "metric.domain", |r| &mut r.config.metric.domain, kind);
            set(&mut r, "metric.atom_cap", |r| &mut r.config.metric.atom_cap, atom_cap);
            commands::metric(&r, &out)?
        }
        Command::Selftest => commands::selftest(&r, &out)?,
    };
    Ok((summary, out))
}

/// Writes `error.json` into the artifact directory when it can.
pub fn record_error(out: &Path, report: &crate::error::ErrorReport) {
    if std::fs::create_dir_all(out).is_ok() {
        let _ = crate::format::write_json(&out.join("error.json"), report);
    }
}
