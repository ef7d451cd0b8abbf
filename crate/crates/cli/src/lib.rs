//! Command-line front end for the vibrancy pipeline.
//!
//! Each subcommand reads and writes files; `run` chains the same stage
//! functions over every configured combination and records a manifest.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod stages;
pub mod tables;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use vibrancy_core::clustering::SelectParams;
use vibrancy_core::features::DEFAULT_MIN_LABEL_COUNT;
use vibrancy_core::signatures::{DayType, DEFAULT_RISK_CAP};
use vibrancy_core::synth::{self, SynthSpec};

use config::{Level, Overrides, PipelineConfig, RegionInput};
use error::{CliError, Result, Stage};

pub const SYNTH_SPEC_FILE: &str = "synth_spec.toml";
pub const SYNTH_CONFIG_FILE: &str = "pipeline.toml";

#[derive(Debug, Parser)]
#[command(
    name = "vibrancy",
    version,
    about = "Urban vibrancy from app-usage signatures and POI covariates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic city with planted archetypes.
    Synth(SynthCmd),
    /// Aggregate traffic into signature tensors and their relative risk.
    Signatures(SignaturesCmd),
    /// Select k and cluster a relative-risk tensor.
    Cluster(ClusterCmd),
    /// Third-place count and diversity covariates per cell.
    Features(FeaturesCmd),
    /// Fit and score the multinomial logit.
    Fit(FitCmd),
    /// Re-emit tables from saved artifacts.
    Report(ReportCmd),
    /// Full pipeline from a config file, or a rerun of a manifest.
    Run(RunCmd),
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    #[arg(long)]
    pub out: PathBuf,
    /// TOML spec; the flags below build a planted spec when absent.
    #[arg(long, conflicts_with_all = ["cells", "k", "categories", "sigma", "days"])]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub cells: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 3)]
    pub categories: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Days generated per day type.
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long = "day-type")]
    pub day_types: Vec<DayType>,
}

#[derive(Debug, Args)]
pub struct SignaturesCmd {
    /// Region file; repeat together with --traffic to concatenate cities.
    #[arg(long = "region", required = true)]
    pub regions: Vec<PathBuf>,
    #[arg(long = "traffic", required = true)]
    pub traffic: Vec<PathBuf>,
    #[arg(long)]
    pub app_taxonomy: PathBuf,
    #[arg(long)]
    pub day_type: DayType,
    #[arg(long)]
    pub mean_per_day: bool,
    #[arg(long)]
    pub drop_silent_cells: bool,
    #[arg(long, default_value_t = DEFAULT_RISK_CAP)]
    pub risk_cap: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterCmd {
    /// Relative-risk tensor written by `signatures`.
    #[arg(long)]
    pub risk: PathBuf,
    /// Region files for GeoJSON output.
    #[arg(long = "region")]
    pub regions: Vec<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub k_min: usize,
    #[arg(long, default_value_t = 10)]
    pub k_max: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturesCmd {
    #[arg(long = "region", required = true)]
    pub regions: Vec<PathBuf>,
    #[arg(long = "pois", required = true)]
    pub pois: Vec<PathBuf>,
    #[arg(long)]
    pub third_places: PathBuf,
    /// Restrict and order rows to the cells of this labels file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MIN_LABEL_COUNT)]
    pub min_label_count: usize,
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitCmd {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportCmd {
    /// A result directory, or a run root holding a manifest.
    #[arg(long)]
    pub dir: PathBuf,
    /// Where to write the tables; defaults to `--dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunCmd {
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    /// Rerun a recorded manifest and compare its artifacts.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long = "level")]
    pub levels: Vec<Level>,
    #[arg(long = "day-type")]
    pub day_types: Vec<DayType>,
    #[arg(long)]
    pub drop_silent_cells: bool,
    #[arg(long)]
    pub mean_per_day: bool,
    #[arg(long)]
    pub holdout: Option<f64>,
}

impl RunCmd {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            lambda: self.lambda,
            k_min: self.k_min,
            k_max: self.k_max,
            restarts: self.restarts,
            levels: self.levels.clone(),
            day_types: self.day_types.clone(),
            drop_silent_cells: self.drop_silent_cells,
            mean_per_day: self.mean_per_day,
            holdout: self.holdout,
        }
    }
}

fn paired(a: &[PathBuf], b: &[PathBuf], what: &str) -> Result<Vec<(PathBuf, PathBuf)>> {
    if a.len() != b.len() {
        return Err(CliError::Usage(format!(
            "{} --region values but {} --{what} values",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().cloned().zip(b.iter().cloned()).collect())
}

fn synth(cmd: &SynthCmd) -> Result<()> {
    let spec = match &cmd.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(Stage::Synth, path, e))?;
            let mut spec: SynthSpec =
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid synth spec: {e}")))?;
            if !cmd.day_types.is_empty() {
                spec.day_types = cmd.day_types.clone();
            }
            spec
        }
        None => {
            let mut spec = SynthSpec::planted(cmd.seed, cmd.cells, cmd.k, cmd.categories, cmd.sigma);
            if let Some(d) = cmd.days {
                spec.days_per_type = d;
            }
            if !cmd.day_types.is_empty() {
                spec.day_types = cmd.day_types.clone();
            }
            spec
        }
    };
    let truth = synth::generate(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    truth
        .write_dir(&cmd.out)
        .map_err(|e| CliError::io(Stage::Synth, &cmd.out, e))?;
    let spec_path = cmd.out.join(SYNTH_SPEC_FILE);
    let text = toml::to_string_pretty(&spec).map_err(|e| CliError::data(Stage::Synth, e))?;
    std::fs::write(&spec_path, text).map_err(|e| CliError::io(Stage::Synth, &spec_path, e))?;

    let n = spec.n_cells;
    let cfg = PipelineConfig {
        seed: spec.seed,
        restarts: 10,
        lambda: 1.0,
        k_min: 3.min(n),
        k_max: 10.min(n),
        risk_cap: DEFAULT_RISK_CAP,
        levels: vec![Level::Local],
        day_types: spec.day_types.clone(),
        drop_silent_cells: false,
        mean_per_day: false,
        holdout: None,
        min_label_count: DEFAULT_MIN_LABEL_COUNT,
        standardize: true,
        app_taxonomy: synth::APP_TAXONOMY_FILE.into(),
        third_places: synth::THIRD_PLACES_FILE.into(),
        regions: vec![RegionInput {
            region: synth::REGION_FILE.into(),
            traffic: synth::TRAFFIC_FILE.into(),
            pois: synth::POI_FILE.into(),
            truth: Some(synth::TRUTH_FILE.into()),
        }],
    };
    let cfg_path = cmd.out.join(SYNTH_CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| CliError::io(Stage::Synth, &cfg_path, e))?;
    println!(
        "wrote {} cells, {} traffic records, {} POIs to {} (separation/noise {:.2})",
        truth.archetypes.len(),
        truth.traffic.len(),
        truth.pois.len(),
        cmd.out.display(),
        truth.separation_ratio
    );
    Ok(())
}

fn report(cmd: &ReportCmd) -> Result<()> {
    let out = cmd.out.as_deref().unwrap_or(&cmd.dir);
    let manifest_path = cmd.dir.join(manifest::MANIFEST_FILE);
    if manifest_path.is_file() {
        let m = manifest::Manifest::load(&manifest_path)?;
        for r in &m.runs {
            if r.status != manifest::RunStatus::Ok {
                println!("[{}] failed: {}", r.dir, r.error.as_deref().unwrap_or("unknown error"));
                continue;
            }
            let text = stages::report(&cmd.dir.join(&r.dir), &out.join(&r.dir))?;
            print!("[{}]\n{text}", r.dir);
        }
    } else {
        print!("{}", stages::report(&cmd.dir, out)?);
    }
    Ok(())
}

fn run(cmd: &RunCmd) -> Result<u8> {
    let (outcome, mismatches) = match (&cmd.config, &cmd.manifest) {
        (_, Some(m)) => {
            if !cmd.overrides().is_empty() {
                return Err(CliError::Usage(
                    "a manifest rerun takes its settings from the manifest; drop the override flags".into(),
                ));
            }
            let (outcome, mismatches) = pipeline::rerun(m, &cmd.out)?;
            (outcome, Some(mismatches))
        }
        (Some(path), None) => {
            let mut cfg = PipelineConfig::load(path)?;
            cfg.apply(&cmd.overrides());
            (pipeline::run(&cfg, &cmd.out)?, None)
        }
        (None, None) => return Err(CliError::Usage("run needs --config or --manifest".into())),
    };
    for r in &outcome.manifest.runs {
        match &r.error {
            Some(e) => println!("{}: FAILED ({e})", r.dir),
            None => {
                let mut line = format!("{}: k = {}", r.dir, r.chosen_k.unwrap_or(0));
                if let Some(ari) = r.ari {
                    line.push_str(&format!(", ARI {ari:.6}"));
                }
                if r.logit_converged == Some(false) {
                    line.push_str(", logit did not converge");
                }
                println!("{line}");
            }
        }
    }
    if let Some(mismatches) = mismatches {
        if !mismatches.is_empty() {
            for m in &mismatches {
                eprintln!("differs: {}/{}", m.dir, m.file);
            }
            return Err(CliError::data(
                Stage::Manifest,
                format!("{} artifacts differ from the manifest", mismatches.len()),
            ));
        }
        println!("all recorded artifacts reproduced bit for bit");
    }
    Ok(outcome.exit_code)
}

fn dispatch(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Synth(c) => synth(c)?,
        Command::Signatures(c) => {
            let s = stages::signatures(&stages::SignaturesArgs {
                inputs: paired(&c.regions, &c.traffic, "traffic")?,
                app_taxonomy: c.app_taxonomy.clone(),
                day_type: c.day_type,
                mean_per_day: c.mean_per_day,
                drop_silent_cells: c.drop_silent_cells,
                risk_cap: c.risk_cap,
                out: c.out.clone(),
            })?;
            println!(
                "{} cells × 12 bins × {} categories ({} capped entries)",
                s.cells, s.categories, s.capped_entries
            );
        }
        Command::Cluster(c) => {
            if c.k_min < 2 || c.k_min > c.k_max || c.restarts == 0 {
                return Err(CliError::Usage(format!(
                    "invalid k range [{}, {}] or restarts {}",
                    c.k_min, c.k_max, c.restarts
                )));
            }
            let s = stages::cluster(&stages::ClusterArgs {
                risk: c.risk.clone(),
                regions: c.regions.clone(),
                params: SelectParams {
                    k_min: c.k_min,
                    k_max: c.k_max,
                    seed: c.seed,
                    restarts: c.restarts,
                    ..Default::default()
                },
                out: c.out.clone(),
            })?;
            println!(
                "chosen k = {} (silhouette {:.4}, sizes {:?})",
                s.chosen_k, s.silhouette, s.sizes
            );
        }
        Command::Features(c) => {
            let s = stages::features(&stages::FeaturesArgs {
                inputs: paired(&c.regions, &c.pois, "pois")?,
                third_places: c.third_places.clone(),
                labels: c.labels.clone(),
                min_label_count: c.min_label_count,
                standardize: !c.no_standardize,
                out: c.out.clone(),
            })?;
            println!("{} rows, {} unmatched POIs", s.rows, s.unmatched_pois);
        }
        Command::Fit(c) => {
            if let Some(h) = c.holdout {
                if !(h > 0.0 && h < 1.0) {
                    return Err(CliError::Usage(format!("holdout must be in (0, 1), got {h}")));
                }
            }
            let s = stages::fit(&stages::FitArgs {
                features: c.features.clone(),
                labels: c.labels.clone(),
                lambda: c.lambda,
                holdout: c.holdout,
                seed: c.seed,
                out: c.out.clone(),
            })?;
            println!(
                "accuracy {:.4}, macro F1 {:.4}, weighted F1 {:.4} after {} iterations",
                s.accuracy, s.macro_f1, s.weighted_f1, s.iterations
            );
            if !s.converged {
                eprintln!("error: fit: the optimizer stopped before converging");
                return Ok(3);
            }
        }
        Command::Report(c) => report(c)?,
        Command::Run(c) => return run(c),
    }
    Ok(0)
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_cli<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
