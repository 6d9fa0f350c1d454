use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use fewsim_core::fmlm::{fmlm_fit, FitOptions};
use fewsim_core::{load_bundled, load_dataset, Engine, EngineConfig, StudyAreaDataset};
use fewsim_middleware::export::{write_indices_csv, write_results_csv};
use fewsim_middleware::{default_data_dir, CaseConfig, JobStatus, Middleware, MiddlewareOptions, VariableAdjustment};

use crate::api::{router, AppState};

#[derive(Debug, Parser)]
#[command(name = "fewsim", version, about = "Coupled food-energy-water scenario simulator")]
pub struct Cli {
    /// Result store directory [default: $FEWSIM_DATA_DIR or ./fewsim-data]
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,

    /// Dataset directory containing manifest.json [default: bundled dataset]
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expand a scenario grid and run it to completion
    Simulate(SimulateArgs),
    /// Write a case's annual results or indices as CSV
    Export(ExportArgs),
    /// Fit crop-share coefficients on the dataset's historical panel
    FitFmlm(FitArgs),
    /// Serve the REST API (and optionally the web client)
    Serve(ServeArgs),
    /// Load and validate a dataset directory
    ValidateDataset(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct EngineArgs {
    /// Coupling scheme
    #[arg(long, default_value = "fixed-point")]
    pub coupling: String,
    /// Water allocator
    #[arg(long, default_value = "priority-greedy")]
    pub allocator: String,
    /// Crop-share coefficient source
    #[arg(long, default_value = "prefitted")]
    pub crop_shares: String,
    #[arg(long, default_value_t = 10)]
    pub max_iterations: u32,
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    /// Worker threads [default: available parallelism]
    #[arg(long)]
    pub workers: Option<usize>,
}

impl EngineArgs {
    fn config(&self) -> EngineConfig {
        EngineConfig {
            coupling: self.coupling.clone(),
            single_pass: false,
            allocator: self.allocator.clone(),
            crop_shares: self.crop_shares.clone(),
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub case: String,
    #[arg(long)]
    pub climate: String,
    /// `variable:lower:upper:step` or `variable:value`, in naming order
    #[arg(long = "adjust", value_parser = parse_adjustment)]
    pub adjustments: Vec<VariableAdjustment>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub case: String,
    /// Export indices instead of branch results
    #[arg(long)]
    pub indices: bool,
    /// Output file [default: stdout]
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Coefficient CSV to write [default: stdout]
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = FitOptions::default().max_iterations)]
    pub max_iterations: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Directory with the built web client
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub dir: PathBuf,
}

fn parse_adjustment(s: &str) -> Result<VariableAdjustment, String> {
    VariableAdjustment::parse(s).map_err(|e| e.to_string())
}

fn dataset(path: Option<&PathBuf>) -> anyhow::Result<StudyAreaDataset> {
    match path {
        Some(p) => load_dataset(p).with_context(|| format!("loading dataset {}", p.display())),
        None => load_bundled().context("loading bundled dataset"),
    }
}

fn open_middleware(cli: &Cli, engine: &EngineArgs) -> anyhow::Result<(Arc<StudyAreaDataset>, Middleware)> {
    let ds = Arc::new(dataset(cli.dataset.as_ref())?);
    let runner = Arc::new(Engine::new(ds.clone(), engine.config())?);
    let mut opts = MiddlewareOptions::new(cli.data_dir.clone().unwrap_or_else(default_data_dir));
    if let Some(w) = engine.workers {
        opts.workers = w;
    }
    let mw = Middleware::open(opts, runner).context("opening result store")?;
    Ok((ds, mw))
}

fn output(path: Option<&PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(&cli, a),
        Command::Export(a) => export(&cli, a),
        Command::FitFmlm(a) => fit(&cli, a),
        Command::Serve(a) => serve(&cli, a),
        Command::ValidateDataset(a) => validate(a),
    }
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> anyhow::Result<()> {
    let (_, mw) = open_middleware(cli, &a.engine)?;
    let config = CaseConfig {
        case_name: a.case.clone(),
        climate_file: a.climate.clone(),
        adjustments: a.adjustments.clone(),
    };
    let job = mw.submit_case(config)?;
    eprintln!("case `{}`: {} scenarios queued", job.case_name, job.total);
    let job = loop {
        let j = mw.wait(&a.case, Duration::from_secs(2))?;
        if j.status.is_terminal() {
            break j;
        }
        eprintln!("  {}/{} done", j.completed + j.failed, j.total);
    };
    for p in job.scenarios.iter().filter(|p| p.coupling_warning) {
        eprintln!("warning: {}: coupling hit the iteration limit in some month", p.scenario);
    }
    for p in job.scenarios.iter().filter(|p| p.error.is_some()) {
        eprintln!("failed: {}: {}", p.scenario, p.error.as_deref().unwrap_or_default());
    }
    println!(
        "case `{}` {:?}: {} of {} scenarios completed, store {}",
        job.case_name,
        job.status,
        job.completed,
        job.total,
        mw.store().root().display()
    );
    if job.status != JobStatus::Finished {
        bail!("{} scenario(s) failed", job.failed);
    }
    Ok(())
}

fn export(cli: &Cli, a: &ExportArgs) -> anyhow::Result<()> {
    let mut opts = MiddlewareOptions::new(cli.data_dir.clone().unwrap_or_else(default_data_dir));
    opts.workers = 1;
    // read-only: an interrupted job stays queued for the next simulate or serve
    opts.resume = false;
    let ds = Arc::new(dataset(cli.dataset.as_ref())?);
    let mw = Middleware::open(opts, Arc::new(Engine::new(ds, EngineConfig::default())?))?;
    let status = mw.status(&a.case)?;
    if !status.status.is_terminal() {
        bail!("case `{}` is still running", a.case);
    }
    let mut out = output(a.output.as_ref())?;
    if a.indices {
        write_indices_csv(&mw, &a.case, &mut out)?;
    } else {
        write_results_csv(&mw, &a.case, &mut out)?;
    }
    out.flush()?;
    Ok(())
}

fn fit(cli: &Cli, a: &FitArgs) -> anyhow::Result<()> {
    let ds = dataset(cli.dataset.as_ref())?;
    let options = FitOptions {
        max_iterations: a.max_iterations,
        ..FitOptions::default()
    };
    let report = fmlm_fit(&ds.share_panel, &options)?;
    eprintln!(
        "fit: {} iterations, converged {}, log-likelihood {:.6}, gradient norm {:.3e}",
        report.iterations, report.converged, report.log_likelihood, report.gradient_norm
    );
    if !report.degenerate_crops.is_empty() {
        eprintln!("warning: degenerate crops: {}", report.degenerate_crops.join(", "));
    }
    if report.clipped {
        eprintln!("warning: coefficients were clipped");
    }
    let mut out = output(a.output.as_ref())?;
    report.coefficients.write_csv(&mut out)?;
    out.flush()?;
    if !report.converged {
        bail!("fit did not converge");
    }
    Ok(())
}

fn serve(cli: &Cli, a: &ServeArgs) -> anyhow::Result<()> {
    let (dataset, mw) = open_middleware(cli, &a.engine)?;
    let state = AppState {
        middleware: Arc::new(mw),
        dataset,
    };
    let app = router(state, a.static_dir.clone());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.addr)
            .await
            .with_context(|| format!("binding {}", a.addr))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn validate(a: &ValidateArgs) -> anyhow::Result<()> {
    let ds = load_dataset(&a.dir).with_context(|| format!("dataset {} is invalid", a.dir.display()))?;
    println!(
        "{}: {} crops, {} districts, {} water sources, {} plants, climate files [{}], {}..={}",
        ds.name,
        ds.crops.len(),
        ds.districts.len(),
        ds.water.sources.len(),
        ds.energy.catalog.plants.len(),
        ds.climate_names().join(", "),
        ds.horizon.start_year,
        ds.horizon.end_year
    );
    Ok(())
}
