//! One function per subcommand. Each reads its inputs from files and writes
//! its artifacts into an output directory; `run` chains the same functions.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vibrancy_core::clustering::{select_k, write_centroid_profiles_csv, write_model, KSelectionReport, SelectParams};
use vibrancy_core::features::{build_features, filter_rare_labels, standardize, FeatureTable, ThirdPlaceTaxonomy};
use vibrancy_core::grid::{cells_geojson, AreaCheck, CellId, CityRegion};
use vibrancy_core::ingest::{load_taxonomy, parse_pois, parse_traffic, RejectKind};
use vibrancy_core::model::{evaluate, fit_features, holdout_split, FitParams, MetricsReport, MultinomialLogit};
use vibrancy_core::signatures::{
    build_signatures, read_tensor, relative_risk, write_tensor, BuildOptions, DayType, RiskQuality, SignatureTensor,
    TensorKind,
};
use vibrancy_core::synth::adjusted_rand_index;

use crate::error::{CliError, Result, Stage};
use crate::tables::{self, LabelRow, RegionFeatures};

pub const SIGNATURES_FILE: &str = "signatures.bin";
pub const RISK_FILE: &str = "risk.bin";
pub const RISK_QUALITY_FILE: &str = "risk_quality.json";
pub const INGEST_REPORT_FILE: &str = "ingest_report.json";
pub const LABELS_FILE: &str = "labels.csv";
pub const K_SELECTION_FILE: &str = "k_selection.json";
pub const K_SELECTION_CSV: &str = "k_selection.csv";
pub const CLUSTER_MODEL_FILE: &str = "clusters.model";
pub const CENTROIDS_FILE: &str = "centroids.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const FEATURES_REPORT_FILE: &str = "features_report.json";
pub const MODEL_FILE: &str = "model.json";
pub const COEFFICIENTS_FILE: &str = "coefficients.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const RECOVERY_FILE: &str = "recovery.json";

pub fn labels_geojson_name(region: &str) -> String {
    format!("labels_{region}.geojson")
}

fn ensure_dir(stage: Stage, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(stage, dir, e))
}

pub fn load_region(stage: Stage, path: &Path) -> Result<CityRegion> {
    CityRegion::from_reader(tables::open(stage, path)?).map_err(|e| CliError::io(stage, path, e))
}

#[derive(Debug, Clone)]
pub struct SignaturesArgs {
    /// `(region file, traffic file)` pairs; several pairs are concatenated.
    pub inputs: Vec<(PathBuf, PathBuf)>,
    pub app_taxonomy: PathBuf,
    pub day_type: DayType,
    pub mean_per_day: bool,
    pub drop_silent_cells: bool,
    pub risk_cap: f64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestEntry {
    pub region: String,
    pub data_lines: usize,
    pub records: usize,
    pub malformed: usize,
    pub unknown_direction: usize,
    pub out_of_bounds: usize,
    pub area_check: AreaCheckRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AreaCheckRecord {
    pub active_cells: usize,
    pub computed_area_km2: f64,
    pub declared_area_km2: Option<f64>,
    pub relative_error: Option<f64>,
    pub pass: bool,
}

impl From<AreaCheck> for AreaCheckRecord {
    fn from(a: AreaCheck) -> Self {
        Self {
            active_cells: a.active_cells,
            computed_area_km2: a.computed_area_km2,
            declared_area_km2: a.declared_area_km2,
            relative_error: a.relative_error,
            pass: a.pass,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignaturesSummary {
    pub day_type: DayType,
    pub cells: usize,
    pub dropped_silent_cells: usize,
    pub categories: usize,
    pub capped_entries: usize,
    pub ingest: Vec<IngestEntry>,
}

pub fn signatures(a: &SignaturesArgs) -> Result<SignaturesSummary> {
    let stage = Stage::Ingest;
    if a.inputs.is_empty() {
        return Err(CliError::Usage("signatures needs at least one region".into()));
    }
    let taxonomy =
        load_taxonomy(tables::open(stage, &a.app_taxonomy)?).map_err(|e| CliError::io(stage, &a.app_taxonomy, e))?;
    let mut parts = Vec::new();
    let mut ingest = Vec::new();
    let mut dropped = 0;
    for (region_path, traffic_path) in &a.inputs {
        let region = load_region(stage, region_path)?;
        let parsed = parse_traffic(tables::open(stage, traffic_path)?, &region.grid)
            .map_err(|e| CliError::io(stage, traffic_path, e))?;
        let count = |k: RejectKind| parsed.rejects.iter().filter(|r| r.kind == k).count();
        ingest.push(IngestEntry {
            region: region.name().to_string(),
            data_lines: parsed.data_lines(),
            records: parsed.records.len(),
            malformed: count(RejectKind::MalformedLine),
            unknown_direction: count(RejectKind::UnknownDirection),
            out_of_bounds: count(RejectKind::OutOfBounds),
            area_check: region.check_consistency().into(),
        });
        let options = BuildOptions {
            mean_per_day: a.mean_per_day,
        };
        let mut tensor = build_signatures::<f64>(&parsed.records, &taxonomy, &region, a.day_type, options)
            .map_err(|e| CliError::io(Stage::Signatures, traffic_path, e))?;
        if a.drop_silent_cells {
            let before = tensor.n_cells();
            tensor = tensor.drop_silent_cells();
            dropped += before - tensor.n_cells();
        }
        parts.push(tensor);
    }

    let stage = Stage::Signatures;
    let tensor = SignatureTensor::concat(&parts).map_err(|e| CliError::data(stage, e))?;
    let risk = relative_risk(&tensor, a.risk_cap).map_err(|e| CliError::data(stage, e))?;
    ensure_dir(stage, &a.out)?;
    let raw_path = a.out.join(SIGNATURES_FILE);
    write_tensor(tables::create(stage, &raw_path)?, &tensor, TensorKind::Raw)
        .map_err(|e| CliError::io(stage, &raw_path, e))?;
    let risk_path = a.out.join(RISK_FILE);
    write_tensor(tables::create(stage, &risk_path)?, &risk, TensorKind::RelativeRisk)
        .map_err(|e| CliError::io(stage, &risk_path, e))?;
    tables::write_json(stage, &a.out.join(RISK_QUALITY_FILE), risk.quality())?;
    let summary = SignaturesSummary {
        day_type: a.day_type,
        cells: tensor.n_cells(),
        dropped_silent_cells: dropped,
        categories: tensor.n_categories(),
        capped_entries: risk.quality().capped_entries(),
        ingest,
    };
    tables::write_json(stage, &a.out.join(INGEST_REPORT_FILE), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct ClusterArgs {
    pub risk: PathBuf,
    /// Region files used for GeoJSON output; may be empty.
    pub regions: Vec<PathBuf>,
    pub params: SelectParams,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub chosen_k: usize,
    pub cells: usize,
    pub sizes: Vec<usize>,
    pub converged: bool,
    pub silhouette: f64,
    pub kept_seeds: BTreeMap<usize, u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KSelectionFile {
    k_min: usize,
    k_max: usize,
    seed: u64,
    restarts: usize,
    #[serde(flatten)]
    report: KSelectionReport,
    sizes: Vec<usize>,
}

pub fn cluster(a: &ClusterArgs) -> Result<ClusterSummary> {
    let stage = Stage::Cluster;
    let (kind, tensor) =
        read_tensor::<f64, _>(tables::open(stage, &a.risk)?).map_err(|e| CliError::io(stage, &a.risk, e))?;
    if kind != TensorKind::RelativeRisk {
        return Err(CliError::data(
            stage,
            format!(
                "{} holds raw volumes; cluster expects a relative-risk tensor",
                a.risk.display()
            ),
        ));
    }
    let n = tensor.n_cells();
    if a.params.k_max > n {
        return Err(CliError::data(
            stage,
            format!(
                "k range [{}, {}] exceeds the {n} cells available",
                a.params.k_min, a.params.k_max
            ),
        ));
    }
    let (model, report) = select_k(&tensor.points(), &a.params).map_err(CliError::from_cluster)?;

    ensure_dir(stage, &a.out)?;
    let rows = label_rows(&tensor, &model.labels);
    tables::write_labels(&a.out.join(LABELS_FILE), &rows)?;
    let sizes = model.sizes();
    let silhouette = report
        .scores
        .iter()
        .find(|s| s.k == report.chosen_k)
        .map(|s| s.silhouette)
        .unwrap_or(f64::NAN);
    tables::write_json(
        stage,
        &a.out.join(K_SELECTION_FILE),
        &KSelectionFile {
            k_min: a.params.k_min,
            k_max: a.params.k_max,
            seed: a.params.seed,
            restarts: a.params.restarts,
            report: report.clone(),
            sizes: sizes.clone(),
        },
    )?;
    let model_path = a.out.join(CLUSTER_MODEL_FILE);
    write_model(
        tables::create(stage, &model_path)?,
        &model,
        tensor.categories(),
        tensor.day_type(),
    )
    .map_err(|e| CliError::io(stage, &model_path, e))?;
    let centroid_path = a.out.join(CENTROIDS_FILE);
    write_centroid_profiles_csv(
        tables::create(stage, &centroid_path)?,
        &model.centroids,
        model.k,
        tensor.categories(),
    )
    .map_err(|e| CliError::io(stage, &centroid_path, e))?;

    for path in &a.regions {
        let region = load_region(stage, path)?;
        let cells: Vec<(CellId, usize)> = rows
            .iter()
            .filter(|r| r.region == region.name())
            .map(|r| (r.cell, r.cluster))
            .collect();
        if cells.is_empty() {
            return Err(CliError::data(
                stage,
                format!("region `{}` has no rows in {}", region.name(), a.risk.display()),
            ));
        }
        let geo = cells_geojson(&region.grid, &cells, "cluster").map_err(|e| CliError::io(stage, path, e))?;
        tables::write_json(stage, &a.out.join(labels_geojson_name(region.name())), &geo)?;
    }
    Ok(ClusterSummary {
        chosen_k: report.chosen_k,
        cells: n,
        sizes,
        converged: model.converged,
        silhouette,
        kept_seeds: report.scores.iter().map(|s| (s.k, s.seed)).collect(),
    })
}

fn label_rows(tensor: &vibrancy_core::signatures::CellTensor<f64>, labels: &[usize]) -> Vec<LabelRow> {
    let mut rows = Vec::with_capacity(labels.len());
    for seg in tensor.segments() {
        for i in seg.start..seg.start + seg.len {
            rows.push(LabelRow {
                region: seg.region.clone(),
                cell: tensor.cells()[i],
                cluster: labels[i],
            });
        }
    }
    rows
}

#[derive(Debug, Clone)]
pub struct FeaturesArgs {
    /// `(region file, POI file)` pairs.
    pub inputs: Vec<(PathBuf, PathBuf)>,
    pub third_places: PathBuf,
    /// Keep exactly these cells, in this order.
    pub labels: Option<PathBuf>,
    pub min_label_count: usize,
    pub standardize: bool,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeaturesSummary {
    pub rows: usize,
    pub standardized: bool,
    pub min_label_count: usize,
    pub pois_read: usize,
    pub pois_rejected: usize,
    pub pois_after_rare_filter: usize,
    pub rare_labels_dropped: usize,
    pub unmatched_pois: usize,
}

pub fn features(a: &FeaturesArgs) -> Result<FeaturesSummary> {
    let stage = Stage::Features;
    if a.inputs.is_empty() {
        return Err(CliError::Usage("features needs at least one region".into()));
    }
    let taxonomy = ThirdPlaceTaxonomy::from_csv(tables::open(stage, &a.third_places)?)
        .map_err(|e| CliError::io(stage, &a.third_places, e))?;
    let mut regions = Vec::new();
    let mut pois = Vec::new();
    let mut rejected = 0;
    for (region_path, poi_path) in &a.inputs {
        regions.push(load_region(stage, region_path)?);
        let parsed = parse_pois(tables::open(stage, poi_path)?).map_err(|e| CliError::io(stage, poi_path, e))?;
        rejected += parsed.rejects.len();
        pois.push(parsed.records);
    }

    // rare labels are counted over every region of the run
    let pooled: Vec<_> = pois.iter().flatten().cloned().collect();
    let kept: HashSet<String> = filter_rare_labels(&pooled, a.min_label_count)
        .into_iter()
        .map(|p| p.label)
        .collect();
    let all_labels: HashSet<&str> = pooled.iter().map(|p| p.label.as_str()).collect();

    let mut names = Vec::new();
    let mut tables_ = Vec::new();
    let mut after_filter = 0;
    for (region, region_pois) in regions.iter().zip(&pois) {
        let filtered: Vec<_> = region_pois
            .iter()
            .filter(|p| kept.contains(&p.label))
            .cloned()
            .collect();
        after_filter += filtered.len();
        let t: FeatureTable<f64> = build_features(&filtered, &taxonomy, region);
        names.extend(std::iter::repeat_n(region.name().to_string(), t.n_rows()));
        tables_.push(t);
    }
    let mut table = FeatureTable::concat(&tables_);

    if let Some(labels_path) = &a.labels {
        let labels = tables::read_labels(labels_path, stage)?;
        let index: HashMap<(&str, CellId), usize> = names
            .iter()
            .map(String::as_str)
            .zip(table.cells.iter().copied())
            .enumerate()
            .map(|(i, key)| (key, i))
            .collect();
        let mut order = Vec::with_capacity(labels.len());
        for r in &labels {
            let i = index.get(&(r.region.as_str(), r.cell)).ok_or_else(|| {
                CliError::data(
                    stage,
                    format!("labelled cell {} of `{}` is not in any region", r.cell, r.region),
                )
            })?;
            order.push(*i);
        }
        let values: Vec<f64> = order.iter().flat_map(|&i| table.row(i).to_vec()).collect();
        let unmatched = table.unmatched_pois;
        table = FeatureTable::from_rows(order.iter().map(|&i| table.cells[i]).collect(), values)
            .map_err(|e| CliError::data(stage, e))?;
        table.unmatched_pois = unmatched;
        names = labels.into_iter().map(|r| r.region).collect();
    }
    if a.standardize {
        let unmatched = table.unmatched_pois;
        table = standardize(&table).map_err(|e| CliError::data(stage, e))?;
        table.unmatched_pois = unmatched;
    }

    ensure_dir(stage, &a.out)?;
    let rf = RegionFeatures { regions: names, table };
    tables::write_features(&a.out.join(FEATURES_FILE), &rf)?;
    let summary = FeaturesSummary {
        rows: rf.table.n_rows(),
        standardized: rf.table.standardized,
        min_label_count: a.min_label_count,
        pois_read: pooled.len(),
        pois_rejected: rejected,
        pois_after_rare_filter: after_filter,
        rare_labels_dropped: all_labels.len() - kept.len(),
        unmatched_pois: rf.table.unmatched_pois,
    };
    tables::write_json(stage, &a.out.join(FEATURES_REPORT_FILE), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct FitArgs {
    pub features: PathBuf,
    pub labels: PathBuf,
    pub lambda: f64,
    pub holdout: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsFile {
    pub evaluated_on: String,
    pub n_train: usize,
    pub n_eval: usize,
    #[serde(flatten)]
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub converged: bool,
    pub iterations: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

pub fn fit(a: &FitArgs) -> Result<FitSummary> {
    let stage = Stage::Fit;
    let features = tables::read_features(&a.features, stage)?;
    let labels = tables::read_labels(&a.labels, stage)?;
    let aligned = features.table.n_rows() == labels.len()
        && features
            .keys()
            .zip(&labels)
            .all(|((reg, cell), l)| reg == l.region && cell == l.cell);
    if !aligned {
        return Err(CliError::data(
            stage,
            format!(
                "{} and {} list different cells",
                a.features.display(),
                a.labels.display()
            ),
        ));
    }
    let standardized = a
        .features
        .parent()
        .map(|d| d.join(FEATURES_REPORT_FILE))
        .filter(|p| p.is_file())
        .map(|p| tables::read_json::<FeaturesSummary>(stage, &p).map(|s| s.standardized))
        .transpose()?
        .unwrap_or(false);

    let y: Vec<usize> = labels.iter().map(|l| l.cluster).collect();
    let params = FitParams {
        lambda: a.lambda,
        ..Default::default()
    };
    let table = &features.table;
    let (train, eval) = match a.holdout {
        Some(f) => holdout_split(y.len(), f, a.seed).map_err(CliError::from_model)?,
        None => ((0..y.len()).collect(), (0..y.len()).collect()),
    };
    let pick = |idx: &[usize]| -> (FeatureTable<f64>, Vec<usize>) {
        let mut keep = vec![false; y.len()];
        idx.iter().for_each(|&i| keep[i] = true);
        (table.retain_rows(&keep), idx.iter().map(|&i| y[i]).collect())
    };
    let (train_x, train_y) = pick(&train);
    let mut model = fit_features(&train_x, &train_y, &params).map_err(CliError::from_model)?;
    if let Some(rec) = model.fit.as_mut() {
        rec.standardized = standardized;
    }
    let (eval_x, eval_y) = pick(&eval);
    let predicted: Vec<usize> = (0..eval_x.n_rows())
        .map(|i| model.predict(eval_x.row(i)))
        .collect::<std::result::Result<_, _>>()
        .map_err(CliError::from_model)?;
    let report = evaluate(&eval_y, &predicted, &model.classes).map_err(CliError::from_model)?;

    ensure_dir(stage, &a.out)?;
    write_fit_outputs(&a.out, &model, &report, a.holdout.is_some(), train.len())?;
    let rec = model.fit.as_ref().expect("fitted model has a record");
    Ok(FitSummary {
        converged: rec.converged,
        iterations: rec.iterations,
        accuracy: report.accuracy,
        macro_f1: report.macro_f1,
        weighted_f1: report.weighted_f1,
    })
}

fn write_fit_outputs(
    out: &Path,
    model: &MultinomialLogit<f64>,
    report: &MetricsReport,
    holdout: bool,
    n_train: usize,
) -> Result<()> {
    let stage = Stage::Fit;
    let model_path = out.join(MODEL_FILE);
    model
        .write_json(tables::create(stage, &model_path)?)
        .map_err(|e| CliError::io(stage, &model_path, e))?;
    write_model_tables(out, model, report)?;
    tables::write_json(
        stage,
        &out.join(METRICS_FILE),
        &MetricsFile {
            evaluated_on: if holdout { "holdout" } else { "training" }.into(),
            n_train,
            n_eval: report.n,
            report: report.clone(),
        },
    )
}

/// Coefficient and metrics CSVs, derived from the fitted model and its report.
fn write_model_tables(out: &Path, model: &MultinomialLogit<f64>, report: &MetricsReport) -> Result<()> {
    let stage = Stage::Report;
    let coef_path = out.join(COEFFICIENTS_FILE);
    let table = model.coefficient_table().map_err(CliError::from_model)?;
    table
        .write_csv(tables::create(stage, &coef_path)?)
        .map_err(|e| CliError::io(stage, &coef_path, e))?;
    let metrics_path = out.join(METRICS_CSV);
    report
        .write_csv(tables::create(stage, &metrics_path)?)
        .map_err(|e| CliError::io(stage, &metrics_path, e))
}

/// Rewrites the CSV tables of one result directory from its saved JSON
/// artifacts, without refitting or reclustering. Returns a text summary.
pub fn report(dir: &Path, out: &Path) -> Result<String> {
    let stage = Stage::Report;
    ensure_dir(stage, out)?;
    let mut text = String::new();
    let k_path = dir.join(K_SELECTION_FILE);
    if k_path.is_file() {
        let k: KSelectionFile = tables::read_json(stage, &k_path)?;
        let csv_path = out.join(K_SELECTION_CSV);
        let mut w = csv::Writer::from_writer(tables::create(stage, &csv_path)?);
        let err = |e: csv::Error| CliError::io(stage, &csv_path, e);
        w.write_record(["k", "silhouette", "inertia", "seed", "converged", "chosen"])
            .map_err(err)?;
        for s in &k.report.scores {
            w.write_record([
                s.k.to_string(),
                s.silhouette.to_string(),
                s.inertia.to_string(),
                s.seed.to_string(),
                s.converged.to_string(),
                (s.k == k.report.chosen_k).to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| CliError::io(stage, &csv_path, e))?;
        text.push_str(&format!(
            "chosen k = {} (cluster sizes {:?})\n",
            k.report.chosen_k, k.sizes
        ));
    }
    let model_path = dir.join(MODEL_FILE);
    let metrics_path = dir.join(METRICS_FILE);
    if model_path.is_file() && metrics_path.is_file() {
        let model = MultinomialLogit::<f64>::read_json(tables::open(stage, &model_path)?)
            .map_err(|e| CliError::io(stage, &model_path, e))?;
        let metrics: MetricsFile = tables::read_json(stage, &metrics_path)?;
        write_model_tables(out, &model, &metrics.report)?;
        text.push_str(&format!(
            "{} metrics: accuracy {:.4}, macro F1 {:.4}, weighted F1 {:.4} (n = {})\n",
            metrics.evaluated_on,
            metrics.report.accuracy,
            metrics.report.macro_f1,
            metrics.report.weighted_f1,
            metrics.n_eval
        ));
    }
    let rec_path = dir.join(RECOVERY_FILE);
    if rec_path.is_file() {
        let r: Recovery = tables::read_json(stage, &rec_path)?;
        text.push_str(&format!(
            "adjusted Rand index vs truth: {:.6} over {} cells\n",
            r.ari, r.cells
        ));
    }
    if text.is_empty() {
        return Err(CliError::data(
            stage,
            format!("{} holds no result artifacts", dir.display()),
        ));
    }
    Ok(text)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Recovery {
    pub ari: f64,
    pub cells: usize,
}

/// Scores the labels in `labels` against per-region truth files.
pub fn recovery(labels: &Path, truth: &BTreeMap<String, PathBuf>, out: &Path) -> Result<Recovery> {
    let stage = Stage::Cluster;
    let rows = tables::read_labels(labels, stage)?;
    let mut planted: HashMap<(String, CellId), usize> = HashMap::new();
    for (region, path) in truth {
        for (cell, a) in tables::read_truth(path)? {
            planted.insert((region.clone(), cell), a);
        }
    }
    let mut a = Vec::with_capacity(rows.len());
    let mut b = Vec::with_capacity(rows.len());
    for r in &rows {
        let t = planted
            .get(&(r.region.clone(), r.cell))
            .ok_or_else(|| CliError::data(stage, format!("no truth label for cell {} of `{}`", r.cell, r.region)))?;
        a.push(*t);
        b.push(r.cluster);
    }
    let ari = adjusted_rand_index(&a, &b).map_err(|e| CliError::data(stage, e))?;
    let rec = Recovery { ari, cells: rows.len() };
    tables::write_json(stage, &out.join(RECOVERY_FILE), &rec)?;
    Ok(rec)
}

pub fn risk_quality(dir: &Path) -> Result<RiskQuality> {
    tables::read_json(Stage::Report, &dir.join(RISK_QUALITY_FILE))
}
