//! Command-line pipeline around the `ctf3d` library.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::{PipelineConfig, TestMode};
use crate::error::{exit_code, CliError, EXIT_OK};
use crate::pipeline::{Pipeline, StageStatus};

#[derive(Debug, Parser)]
#[command(
    name = "ctf3d",
    version,
    about = "Horizontal resolution of 3D elevation products from building-gap contrast"
)]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Rerun stages even when their cache key is unchanged.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Reference DSM, DTM and class masks.
    Prepare,
    /// Test product onto the reference grid and rigid alignment.
    Align,
    /// Building footprints from lidar, OpenStreetMap or a file.
    Footprints,
    /// Evaluation regions from parallel building edges.
    Regions,
    /// Per-region contrast records.
    Ctf,
    /// Contrast model fit and threshold distances.
    Fit,
    /// Plot, plotted-point CSV and summary.
    Report,
    /// Synthetic tribar DSM, its downsampled variants and footprints.
    SynthTribar,
    /// prepare through report.
    Run,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(Debug, Default, Clone, Args)]
pub struct Overrides {
    /// Reference point cloud (LAS/LAZ) or DSM (GeoTIFF).
    #[arg(long, global = true)]
    pub reference: Option<PathBuf>,
    /// Label sidecar for the reference point cloud.
    #[arg(long, global = true)]
    pub reference_labels: Option<PathBuf>,
    #[arg(long, global = true)]
    pub test: Option<PathBuf>,
    #[arg(long, global = true)]
    pub test_mode: Option<TestMode>,
    /// `lidar`, `osm`, or a GeoJSON path.
    #[arg(long, global = true)]
    pub footprints: Option<String>,
    /// CRS to assume for inputs without one, e.g. EPSG:32611.
    #[arg(long, global = true)]
    pub crs: Option<String>,
    #[arg(long, global = true)]
    pub gsd: Option<f64>,
    #[arg(long, global = true)]
    pub window_px: Option<usize>,
    #[arg(long, global = true)]
    pub valid_frac: Option<f64>,
    /// Skip automatic alignment: dx,dy,dz in meters.
    #[arg(long, global = true, value_parser = parse_offset, allow_hyphen_values = true)]
    pub manual_offset: Option<[f64; 3]>,
    #[arg(long, global = true)]
    pub conf_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub dp_epsilon: Option<f64>,
    #[arg(long, global = true)]
    pub min_area: Option<f64>,
    #[arg(long, global = true)]
    pub search_radius: Option<u32>,
    #[arg(long, global = true)]
    pub osm_cache: Option<PathBuf>,
    #[arg(long, global = true)]
    pub osm_endpoint: Option<String>,
    /// Reference contrast cutoff (presets 0.95 and 0.98).
    #[arg(long, global = true)]
    pub ref_ctf_min: Option<f64>,
    /// Contrast threshold for the reported distance.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Evaluation-region sampling cell size in meters.
    #[arg(long, global = true)]
    pub cell_size: Option<f64>,
    #[arg(long, global = true)]
    pub log_x: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        let p = &mut cfg.paths;
        set(&mut p.reference, self.reference.clone());
        set(&mut p.reference_labels, self.reference_labels.clone());
        set(&mut p.test, self.test.clone());
        set(&mut p.osm_cache, self.osm_cache.clone());
        set(&mut p.osm_endpoint, self.osm_endpoint.clone());
        if let Some(f) = &self.footprints {
            p.footprints = f.clone();
        }
        if let Some(m) = self.test_mode {
            cfg.test_mode = m;
        }
        set(&mut cfg.crs, self.crs.clone());
        set(&mut cfg.gsd, self.gsd);
        if let Some(w) = self.window_px {
            cfg.align.window_px = w;
        }
        if let Some(v) = self.valid_frac {
            cfg.align.valid_frac = v;
        }
        if self.manual_offset.is_some() {
            cfg.align.manual_offset = self.manual_offset;
        }
        let f = &mut cfg.footprints;
        if let Some(v) = self.conf_threshold {
            f.conf_threshold = v;
        }
        if let Some(v) = self.dp_epsilon {
            f.dp_epsilon = v;
        }
        if let Some(v) = self.min_area {
            f.min_area = v;
        }
        if let Some(v) = self.search_radius {
            f.search_radius = v;
        }
        if let Some(v) = self.ref_ctf_min {
            cfg.ctf.ref_ctf_min = v;
        }
        if let Some(v) = self.threshold {
            cfg.ctf.threshold = v;
        }
        set(&mut cfg.regions.cell_size, self.cell_size);
        if self.log_x {
            cfg.report.log_x = true;
        }
    }
}

fn parse_offset(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "expected dx,dy,dz".to_string())
}

fn set<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

impl Cli {
    /// Parses arguments that exclude the program name.
    pub fn try_parse_from_args<I, T>(args: I) -> Result<Self, clap::Error>
    where
        I: IntoIterator<Item = T>,
        T: Into<std::ffi::OsString> + Clone,
    {
        Self::try_parse_from(
            std::iter::once("ctf3d".into()).chain(args.into_iter().map(Into::into)),
        )
    }

    /// Config file (if any) with flag overrides applied.
    pub fn effective_config(&self) -> Result<PipelineConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        self.overrides.apply(&mut cfg);
        if let Some(d) = &self.out_dir {
            cfg.paths.out_dir = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs one command and returns the stage statuses it produced.
pub fn execute(cli: &Cli) -> Result<Vec<StageStatus>> {
    let cfg = cli.effective_config()?;
    if cli.command == Command::ShowConfig {
        print!("{}", cfg.to_toml());
        return Ok(Vec::new());
    }
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building thread pool")?;
    pool.install(|| {
        let mut p = Pipeline::open(cfg, cli.force)?;
        let one = |s: Result<StageStatus>| s.map(|s| vec![s]);
        match cli.command {
            Command::Prepare => one(p.prepare()),
            Command::Align => one(p.align()),
            Command::Footprints => one(p.footprints()),
            Command::Regions => one(p.regions()),
            Command::Ctf => one(p.ctf()),
            Command::Fit => one(p.fit()),
            Command::Report => one(p.report()),
            Command::SynthTribar => one(p.synth_tribar()),
            Command::Run => p.run_all(),
            Command::ShowConfig => unreachable!(),
        }
    })
}

/// Parses `args`, runs, prints any error chain and returns the exit code.
pub fn main_entry<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                error::EXIT_CONFIG
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

/// Log filter level for a `-v` count.
pub fn log_level(verbose: u8) -> log::LevelFilter {
    match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    }
}
