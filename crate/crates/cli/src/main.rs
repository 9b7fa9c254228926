//! `mmhybrid`: runs simulations through the mmhybrid service.
//!
//! Without `--server` the commands start a private in-process service on a
//! loopback port and talk to it over HTTP like any other client.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mmhybrid_client::api::{ErrorKind, JobState, JobStatus, RunConfig};
use mmhybrid_client::{Client, ClientError};
use mmhybrid_core::config::SolverKind;
use mmhybrid_core::output::write_all;
use mmhybrid_core::scenario::EpsProfile;
use mmhybrid_server::{serve, AppState, ServerConfig};
use tokio::net::TcpListener;
use tracing_subscriber::filter::LevelFilter;

#[derive(Parser)]
#[command(
    name = "mmhybrid",
    version,
    about = "Kinetic, limit and hybrid Vlasov-BGK runs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP/JSON API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Simulations stepping at once (default: one per core).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = 256)]
        max_jobs: usize,
    },
    /// Run one simulation and print its summary.
    Run {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        remote: Remote,
        /// Only print the final summary line.
        #[arg(long)]
        quiet: bool,
    },
    /// Time solvers across Knudsen numbers (median of repeated runs).
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        remote: Remote,
        /// Comma-separated solvers; the first is the speedup reference.
        #[arg(long, default_value = "kinetic,hybrid", value_delimiter = ',')]
        solvers: Vec<SolverKind>,
        /// Comma-separated constant Knudsen numbers.
        #[arg(long, default_value = "1e-6,1", value_delimiter = ',')]
        epsilons: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Print the effective configuration as `key = value` lines.
    Config {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct Remote {
    /// Base URL of a running service, e.g. http://127.0.0.1:8080.
    #[arg(long)]
    server: Option<String>,
}

/// Run settings. A `--config` file is read first, flags override it.
#[derive(Args, Clone)]
struct RunArgs {
    /// `key = value` file, the format printed by `mmhybrid config`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    solver: Option<SolverKind>,
    #[arg(long)]
    case: Option<String>,
    /// Constant Knudsen number.
    #[arg(long)]
    epsilon: Option<f64>,
    /// `constant` (uses --epsilon) or `arctan_bump`.
    #[arg(long)]
    eps_profile: Option<String>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    nv: Option<usize>,
    #[arg(long)]
    x_star: Option<f64>,
    #[arg(long)]
    v_star: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    tfinal: Option<f64>,
    #[arg(long)]
    eta0: Option<f64>,
    #[arg(long)]
    delta0: Option<f64>,
    /// Directory receiving the CSV tables and the config echo.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated snapshot times.
    #[arg(long)]
    snapshots: Option<String>,
    #[arg(long)]
    diag_every: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run even if dt exceeds the parabolic stability bound.
    #[arg(long)]
    allow_unstable_dt: bool,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

const CONFIG_ERROR: u8 = 1;
const NUMERICAL_ERROR: u8 = 2;

fn exit_code(kind: ErrorKind) -> u8 {
    if kind == ErrorKind::Numerical {
        NUMERICAL_ERROR
    } else {
        CONFIG_ERROR
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<ClientError>() {
            Some(ClientError::Api { error, .. }) => exit_code(error.kind),
            _ => CONFIG_ERROR,
        };
        Self { code, error }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        anyhow::Error::from(e).into()
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                RunConfig::parse(&text).with_context(|| format!("in {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.solver {
            cfg.solver = s;
        }
        if let Some(c) = &self.case {
            cfg.set("case", c)?;
        }
        match (self.eps_profile.as_deref(), self.epsilon) {
            (Some("arctan_bump"), None) => cfg.epsilon = EpsProfile::ArctanBump,
            (Some("arctan_bump"), Some(_)) => {
                anyhow::bail!("--epsilon sets a constant profile, drop it or --eps-profile")
            }
            (Some("constant") | None, Some(e)) => cfg.epsilon = EpsProfile::constant(e)?,
            (Some("constant"), None) => anyhow::bail!("--eps-profile constant needs --epsilon"),
            (Some(other), _) => {
                anyhow::bail!("unknown eps profile {other:?}, expected constant or arctan_bump")
            }
            (None, None) => {}
        }
        macro_rules! take {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$target = v; })*
            };
        }
        take!(nx => nx, nv => nv, x_star => x_star, v_star => v_star, dt => dt,
              tfinal => t_final, eta0 => eta0, delta0 => delta0,
              diag_every => diag_every, seed => seed);
        if let Some(dir) = &self.out {
            cfg.out = Some(dir.clone());
        }
        if let Some(times) = &self.snapshots {
            cfg.set("snapshots", times)?;
        }
        cfg.allow_unstable_dt |= self.allow_unstable_dt;
        Ok(cfg)
    }
}

/// Connects to `--server`, or starts a private service for this process.
async fn connect(remote: &Remote) -> Result<Client> {
    if let Some(url) = &remote.server {
        return Ok(Client::new(url.clone()));
    }
    let listener = TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let state = AppState::new(ServerConfig::default());
    tokio::spawn(serve(listener, state, std::future::pending()));
    Ok(Client::new(format!("http://{addr}")))
}

/// Submits `cfg` and waits for it; a failed job becomes an error carrying
/// the service's error kind.
async fn run_remote(client: &Client, cfg: &RunConfig, quiet: bool) -> Result<JobStatus, Failure> {
    let mut sent = cfg.clone();
    sent.out = None;
    let submitted = client.submit(&sent).await?;
    if !quiet {
        for w in &submitted.warnings {
            eprintln!("warning: {w}");
        }
    }
    let mut last_percent = None;
    let status = client
        .wait(submitted.id, |s| {
            let p = &s.progress;
            if quiet || p.steps_total == 0 {
                return;
            }
            let percent = 100 * p.steps_done / p.steps_total;
            if last_percent.is_none_or(|l| percent >= l + 10) {
                eprintln!(
                    "  {percent:>3}% ({} of {} steps)",
                    p.steps_done, p.steps_total
                );
                last_percent = Some(percent);
            }
        })
        .await?;
    match (status.state, &status.error) {
        (JobState::Succeeded, _) => Ok(status),
        (_, Some(error)) => Err(Failure {
            code: exit_code(error.kind),
            error: error.clone().into(),
        }),
        (state, None) => Err(anyhow::anyhow!("run ended in state {state:?}").into()),
    }
}

fn print_summary(status: &JobStatus) {
    let cfg = &status.config;
    let Some(s) = &status.summary else { return };
    let mut line = format!(
        "{} case {} eps {}: {} steps in {:.3} s, mass {:.15e} -> {:.15e} (relative drift {:.2e})",
        cfg.solver,
        cfg.case,
        cfg.epsilon,
        s.steps,
        s.stepping_seconds,
        s.initial_mass,
        s.final_mass,
        s.relative_mass_drift
    );
    if let Some(labels) = &s.final_labels {
        line.push_str(&format!(", final cells {labels}"));
        if let Some(t) = s.all_fluid_since {
            line.push_str(&format!(", all fluid since t = {t:.4}"));
        }
    }
    println!("{line}");
}

async fn cmd_run(run: RunArgs, remote: Remote, quiet: bool) -> Result<(), Failure> {
    let cfg = run.resolve()?;
    let client = connect(&remote).await?;
    let status = run_remote(&client, &cfg, quiet).await?;
    print_summary(&status);
    if let Some(dir) = &cfg.out {
        let mut record = client.record(status.id).await?;
        record.config.out = cfg.out.clone();
        let files = write_all(&record, dir).context("writing output")?;
        if !quiet {
            eprintln!("wrote {} files to {}", files.len(), dir.display());
        }
    }
    Ok(())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

async fn cmd_sweep(
    run: RunArgs,
    remote: Remote,
    solvers: Vec<SolverKind>,
    epsilons: Vec<f64>,
    repeats: usize,
) -> Result<(), Failure> {
    let base = run.resolve()?;
    let client = connect(&remote).await?;
    let mut rows = Vec::new();
    // runs go one at a time so they do not compete for cores
    for &eps in &epsilons {
        let mut medians = Vec::new();
        for &solver in &solvers {
            let cfg = RunConfig {
                solver,
                epsilon: EpsProfile::constant(eps).map_err(anyhow::Error::from)?,
                snapshots: vec![],
                ..base.clone()
            };
            let mut times = Vec::new();
            for _ in 0..repeats.max(1) {
                let status = run_remote(&client, &cfg, true).await?;
                let s = status.summary.expect("finished runs carry a summary");
                times.push(s.stepping_seconds);
            }
            let m = median(times);
            let speedup = medians
                .first()
                .map_or(1.0, |&reference: &f64| reference / m);
            println!(
                "{solver:>8} case {} eps {eps:e}: median {m:.3} s over {} runs, speedup {speedup:.2}",
                base.case,
                repeats.max(1)
            );
            medians.push(m);
            rows.push((solver, eps, m, speedup));
        }
    }
    if let Some(dir) = &base.out {
        std::fs::create_dir_all(dir).context("creating output directory")?;
        let path = dir.join("timing.csv");
        let mut w = csv::Writer::from_path(&path).context("writing timing table")?;
        w.write_record(["solver", "case", "epsilon", "seconds", "speedup"])
            .context("writing timing table")?;
        for (solver, eps, secs, speedup) in rows {
            w.serialize((solver.name(), base.case.index(), eps, secs, speedup))
                .context("writing timing table")?;
        }
        w.flush().context("writing timing table")?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

async fn cmd_serve(addr: String, workers: Option<usize>, max_jobs: usize) -> Result<(), Failure> {
    let listener = TcpListener::bind(&addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    let local = listener.local_addr().context("reading bound address")?;
    // first stdout line, for scripts that start the service on port 0
    println!("listening on http://{local}");
    let mut config = ServerConfig {
        max_jobs,
        ..Default::default()
    };
    if let Some(w) = workers {
        config.workers = w;
    }
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    serve(listener, AppState::new(config), shutdown)
        .await
        .context("serving")?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // RUST_LOG takes a single level such as `debug`
    let level = std::env::var("RUST_LOG")
        .ok()
        .and_then(|v| v.parse::<LevelFilter>().ok())
        .unwrap_or(if matches!(cli.command, Command::Serve { .. }) {
            LevelFilter::INFO
        } else {
            LevelFilter::ERROR
        });
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: starting runtime: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    let result = runtime.block_on(async {
        match cli.command {
            Command::Serve {
                addr,
                workers,
                max_jobs,
            } => cmd_serve(addr, workers, max_jobs).await,
            Command::Run { run, remote, quiet } => cmd_run(run, remote, quiet).await,
            Command::Sweep {
                run,
                remote,
                solvers,
                epsilons,
                repeats,
            } => cmd_sweep(run, remote, solvers, epsilons, repeats).await,
            Command::Config { run } => {
                let cfg = run.resolve()?;
                cfg.validate()
                    .map_err(anyhow::Error::from)?
                    .iter()
                    .for_each(|w| eprintln!("warning: {w}"));
                print!("{}", cfg.to_kv());
                Ok(())
            }
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(extra: &[&str]) -> RunArgs {
        let mut argv = vec!["mmhybrid", "config"];
        argv.extend(extra);
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Config { run } => run,
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_land_in_the_config() {
        let cfg = args(&["--tfinal", "2", "--snapshots", "0,1", "--case", "3"])
            .resolve()
            .unwrap();
        assert_eq!(cfg.t_final, 2.0);
        assert_eq!(cfg.snapshots, vec![0.0, 1.0]);
        assert_eq!(cfg.case.index(), 3);
    }

    #[test]
    fn eps_profile_and_epsilon_must_agree() {
        assert!(args(&["--eps-profile", "arctan_bump", "--epsilon", "0.1"])
            .resolve()
            .is_err());
        assert!(args(&["--eps-profile", "constant"]).resolve().is_err());
        assert!(args(&["--epsilon=-1"]).resolve().is_err());
        let cfg = args(&["--eps-profile", "constant", "--epsilon", "0.1"])
            .resolve()
            .unwrap();
        assert_eq!(cfg.epsilon, EpsProfile::Constant { value: 0.1 });
    }

    #[test]
    fn median_of_odd_and_even_counts() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0]), 4.0);
    }

    #[test]
    fn numerical_failures_map_to_two() {
        assert_eq!(exit_code(ErrorKind::Numerical), NUMERICAL_ERROR);
        assert_eq!(exit_code(ErrorKind::Config), CONFIG_ERROR);
    }
}
