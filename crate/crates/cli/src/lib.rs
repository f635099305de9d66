//! `densigraph` command line: each subcommand is one pipeline stage reading
//! and writing files under `<data_root>/<city>/`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use densigraph_core::density::DensityMode;

pub mod commands;
pub mod config;
pub mod error;
pub mod layout;

use config::{Config, Overrides, ROOT_ENV};
use error::{CliError, Result};

pub const SYNOPSIS: &str = "\
usage: densigraph [OPTIONS] <COMMAND>

commands:
  crawl    poll camera feeds into the frame store
  synth    render synthetic scenes into the frame store
  clean    remove zero-size, corrupt, duplicate and outlier frames
  density  extract per-camera density traces
  fit      fit candidate distributions to the traces
  lrd      Hurst estimates and hourly profiles
  report   assemble a report bundle from earlier stages

run `densigraph --help` for options";

#[derive(Debug, Parser)]
#[command(name = "densigraph", version, about = "Traffic density pipeline for roadside camera stills")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Restrict to one city (required by crawl-less stages when several exist).
    #[arg(long, global = true)]
    pub city: Option<String>,
    /// Worker threads; defaults to the number of logical CPUs.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Root of the frame store and all artifacts [default: data]
    #[arg(long, global = true)]
    pub data_root: Option<PathBuf>,
    /// Camera catalog (JSON array) for `crawl`.
    #[arg(long, alias = "catalog", global = true)]
    pub catalog_path: Option<PathBuf>,
    /// Seed labels for the cluster pass [default: <city>/labels.json]
    #[arg(long, global = true)]
    pub labels_path: Option<PathBuf>,
    /// Foreground threshold on the background residual [default: 25]
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Frames averaged into the background [default: 100]
    #[arg(long, global = true)]
    pub window_z: Option<usize>,
    /// k-means cluster count for outlier detection [default: 4]
    #[arg(long, global = true)]
    pub cluster_k: Option<usize>,
    /// Seed for synthesis and clustering [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// KS deviation bucket, tight [default: 0.03]
    #[arg(long, global = true)]
    pub ks_tight: Option<f64>,
    /// KS deviation bucket, loose [default: 0.05]
    #[arg(long, global = true)]
    pub ks_loose: Option<f64>,
    /// Reduce the residual by intensity sum or by active pixel count [default: intensity]
    #[arg(long, global = true, value_enum)]
    pub density_mode: Option<ModeArg>,
    /// Rebuild the background every N frames.
    #[arg(long, global = true)]
    pub background_refresh: Option<usize>,
    /// `CITY=MINUTES` east of UTC; repeatable.
    #[arg(long = "utc-offset", global = true, value_parser = parse_offset)]
    pub utc_offsets: Vec<(String, i32)>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Intensity,
    ActivePixels,
}

fn parse_offset(s: &str) -> std::result::Result<(String, i32), String> {
    let (city, minutes) = s.split_once('=').ok_or("expected CITY=MINUTES")?;
    let minutes = minutes.parse().map_err(|e| format!("{e}"))?;
    Ok((city.to_string(), minutes))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Poll camera feeds into the frame store
    Crawl(commands::crawl::CrawlArgs),
    /// Render synthetic scenes into the frame store
    Synth(commands::synth::SynthArgs),
    /// Remove zero-size, corrupt, duplicate and outlier frames (writes removed.csv)
    Clean,
    /// Extract per-camera density traces
    Density,
    /// Fit candidate distributions per camera and per city
    Fit,
    /// Hurst estimates and hourly profiles
    Lrd,
    /// Assemble a report bundle from earlier stages
    Report,
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            data_root: self.data_root.clone(),
            catalog_path: self.catalog_path.clone(),
            labels_path: self.labels_path.clone(),
            tau: self.tau,
            window_z: self.window_z,
            cluster_k: self.cluster_k,
            seed: self.seed,
            utc_offsets: self.utc_offsets.clone(),
            ks_tight: self.ks_tight,
            ks_loose: self.ks_loose,
            density_mode: self.density_mode.map(|m| match m {
                ModeArg::Intensity => DensityMode::Intensity,
                ModeArg::ActivePixels => DensityMode::ActivePixels,
            }),
            background_refresh: self.background_refresh,
        }
    }
}

fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let mut err = std::io::stderr().lock();
            let _ = writeln!(err, "{}", e.render().to_string().trim_end());
            let _ = writeln!(err, "\n{SYNOPSIS}");
            return 1;
        }
    };
    init_logging();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            if let CliError::Usage(_) = e {
                eprintln!("\n{SYNOPSIS}");
            }
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let env_root = std::env::var(ROOT_ENV).ok();
    let cfg = Config::load(cli.global.config.as_deref(), env_root, &cli.global.overrides())?;
    log::info!(
        "effective config: {}",
        serde_json::to_string(&cfg).expect("config serializes")
    );
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(format!("worker pool: {e}")))?;
    let city = cli.global.city.clone();
    pool.install(|| match &cli.command {
        Command::Crawl(args) => commands::crawl::run(&cfg, city.as_deref(), args),
        Command::Synth(args) => commands::synth::run(&cfg, city.as_deref(), args),
        Command::Clean => commands::for_each_city(&cfg, city.as_deref(), commands::clean::run),
        Command::Density => commands::for_each_city(&cfg, city.as_deref(), commands::density::run),
        Command::Fit => commands::for_each_city(&cfg, city.as_deref(), commands::fit::run),
        Command::Lrd => commands::for_each_city(&cfg, city.as_deref(), commands::lrd::run),
        Command::Report => commands::for_each_city(&cfg, city.as_deref(), commands::report::run),
    })
}
