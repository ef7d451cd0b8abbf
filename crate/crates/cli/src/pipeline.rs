//! The `run` command: every (level, day type, scope) combination through
//! signatures, clustering, features and the logit, plus the manifest.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use vibrancy_core::clustering::SelectParams;
use vibrancy_core::signatures::DayType;

use crate::config::{Level, PipelineConfig, RegionInput};
use crate::error::{CliError, Result, Stage};
use crate::manifest::{hash_dir, Manifest, RunRecord, RunStatus, FAILED_FILE, MANIFEST_FILE};
use crate::stages::{self, ClusterArgs, FeaturesArgs, FitArgs, SignaturesArgs};

pub const GLOBAL_SCOPE: &str = "all";

#[derive(Debug, Clone)]
struct Combo<'a> {
    level: Level,
    day_type: DayType,
    scope: String,
    regions: Vec<(&'a str, &'a RegionInput)>,
}

impl Combo<'_> {
    fn rel_dir(&self) -> String {
        format!("{}/{}/{}", self.level, self.day_type, self.scope)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    /// 0 when every run succeeded and every logit converged.
    pub exit_code: u8,
}

fn region_names(cfg: &PipelineConfig) -> Result<Vec<String>> {
    let mut seen = HashSet::new();
    let mut names = Vec::new();
    for r in &cfg.regions {
        let name = stages::load_region(Stage::Ingest, &r.region)?.name().to_string();
        if name == GLOBAL_SCOPE || !seen.insert(name.clone()) {
            return Err(CliError::data(
                Stage::Config,
                format!(
                    "region name `{name}` in {} is reserved or used twice",
                    r.region.display()
                ),
            ));
        }
        names.push(name);
    }
    Ok(names)
}

fn combos<'a>(cfg: &'a PipelineConfig, names: &'a [String]) -> Vec<Combo<'a>> {
    let regions: Vec<(&str, &RegionInput)> = names.iter().map(String::as_str).zip(&cfg.regions).collect();
    let mut out = Vec::new();
    for &level in &cfg.levels {
        for &day_type in &cfg.day_types {
            match level {
                Level::Local => out.extend(regions.iter().map(|&r| Combo {
                    level,
                    day_type,
                    scope: r.0.to_string(),
                    regions: vec![r],
                })),
                Level::Global => out.push(Combo {
                    level,
                    day_type,
                    scope: GLOBAL_SCOPE.into(),
                    regions: regions.clone(),
                }),
            }
        }
    }
    out
}

#[derive(Default)]
struct ComboResult {
    cells: Option<usize>,
    chosen_k: Option<usize>,
    kept_seeds: BTreeMap<usize, u64>,
    logit_converged: Option<bool>,
    ari: Option<f64>,
}

fn run_stages(cfg: &PipelineConfig, combo: &Combo, dir: &Path, res: &mut ComboResult) -> Result<()> {
    stages::signatures(&SignaturesArgs {
        inputs: combo
            .regions
            .iter()
            .map(|(_, r)| (r.region.clone(), r.traffic.clone()))
            .collect(),
        app_taxonomy: cfg.app_taxonomy.clone(),
        day_type: combo.day_type,
        mean_per_day: cfg.mean_per_day,
        drop_silent_cells: cfg.drop_silent_cells,
        risk_cap: cfg.risk_cap,
        out: dir.to_path_buf(),
    })?;
    let labels = dir.join(stages::LABELS_FILE);
    let c = stages::cluster(&ClusterArgs {
        risk: dir.join(stages::RISK_FILE),
        regions: combo.regions.iter().map(|(_, r)| r.region.clone()).collect(),
        params: SelectParams {
            k_min: cfg.k_min,
            k_max: cfg.k_max,
            seed: cfg.seed,
            restarts: cfg.restarts,
            ..Default::default()
        },
        out: dir.to_path_buf(),
    })?;
    res.cells = Some(c.cells);
    res.chosen_k = Some(c.chosen_k);
    res.kept_seeds = c.kept_seeds;

    let truth: Option<BTreeMap<String, PathBuf>> = combo
        .regions
        .iter()
        .map(|(name, r)| r.truth.clone().map(|t| (name.to_string(), t)))
        .collect();
    if let Some(truth) = truth {
        res.ari = Some(stages::recovery(&labels, &truth, dir)?.ari);
    }

    stages::features(&FeaturesArgs {
        inputs: combo
            .regions
            .iter()
            .map(|(_, r)| (r.region.clone(), r.pois.clone()))
            .collect(),
        third_places: cfg.third_places.clone(),
        labels: Some(labels.clone()),
        min_label_count: cfg.min_label_count,
        standardize: cfg.standardize,
        out: dir.to_path_buf(),
    })?;
    let f = stages::fit(&FitArgs {
        features: dir.join(stages::FEATURES_FILE),
        labels,
        lambda: cfg.lambda,
        holdout: cfg.holdout,
        seed: cfg.seed,
        out: dir.to_path_buf(),
    })?;
    res.logit_converged = Some(f.converged);
    Ok(())
}

fn run_combo(cfg: &PipelineConfig, combo: &Combo, root: &Path) -> Result<RunRecord> {
    let rel = combo.rel_dir();
    let dir = root.join(&rel);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| CliError::io(Stage::Manifest, &dir, e))?;
    }
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(Stage::Manifest, &dir, e))?;
    let mut res = ComboResult::default();
    let outcome = run_stages(cfg, combo, &dir, &mut res);
    if let Err(e) = &outcome {
        let path = dir.join(FAILED_FILE);
        std::fs::write(&path, format!("{e}\n")).map_err(|err| CliError::io(Stage::Manifest, &path, err))?;
    }
    Ok(RunRecord {
        level: combo.level,
        day_type: combo.day_type,
        scope: combo.scope.clone(),
        dir: rel,
        status: if outcome.is_ok() {
            RunStatus::Ok
        } else {
            RunStatus::Failed
        },
        error: outcome.as_ref().err().map(|e| e.to_string()),
        exit_code: outcome.as_ref().err().map(CliError::exit_code),
        cells: res.cells,
        chosen_k: res.chosen_k,
        kept_seeds: res.kept_seeds,
        logit_converged: res.logit_converged,
        ari: res.ari,
        artifacts: hash_dir(&dir)?,
    })
}

/// Runs every combination of `cfg` into `out` and writes the manifest.
///
/// A failing combination leaves a `FAILED` file in its directory and does not
/// stop the others.
pub fn run(cfg: &PipelineConfig, out: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    cfg.check_inputs_exist()?;
    let inputs = Manifest::hash_inputs(cfg)?;
    let names = region_names(cfg)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(Stage::Manifest, out, e))?;
    let runs = combos(cfg, &names)
        .par_iter()
        .map(|c| run_combo(cfg, c, out))
        .collect::<Result<Vec<_>>>()?;

    let mut exit_code = runs.iter().filter_map(|r| r.exit_code).max().unwrap_or(0);
    if runs.iter().any(|r| r.logit_converged == Some(false)) {
        exit_code = exit_code.max(3);
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        inputs,
        runs,
    };
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(RunOutcome { manifest, exit_code })
}

/// An artifact whose hash differs between the recorded and the rerun manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub dir: String,
    pub file: String,
}

/// Reruns a recorded manifest into `out` after checking its inputs, and lists
/// the artifacts that did not come out identical.
pub fn rerun(manifest_path: &Path, out: &Path) -> Result<(RunOutcome, Vec<Mismatch>)> {
    let recorded = Manifest::load(manifest_path)?;
    recorded.verify_inputs()?;
    let outcome = run(&recorded.config, out)?;
    let fresh: BTreeMap<&str, &RunRecord> = outcome.manifest.runs.iter().map(|r| (r.dir.as_str(), r)).collect();
    let mut mismatches = Vec::new();
    for old in &recorded.runs {
        for (file, hash) in &old.artifacts {
            let same = fresh
                .get(old.dir.as_str())
                .and_then(|r| r.artifacts.get(file))
                .is_some_and(|h| h == hash);
            if !same {
                mismatches.push(Mismatch {
                    dir: old.dir.clone(),
                    file: file.clone(),
                });
            }
        }
    }
    Ok((outcome, mismatches))
}
