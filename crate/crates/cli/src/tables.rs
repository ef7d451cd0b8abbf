//! CSV tables that carry a region column, so cells from several cities can
//! share one file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use vibrancy_core::features::{FeatureTable, COVARIATES, N_COVARIATES};
use vibrancy_core::grid::CellId;

use crate::error::{CliError, Result, Stage};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRow {
    pub region: String,
    pub cell: CellId,
    pub cluster: usize,
}

pub fn create(stage: Stage, path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(stage, path, e))
}

pub fn open(stage: Stage, path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(stage, path, e))
}

fn csv_err(stage: Stage, path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::io(stage, path, e)
}

fn header_is(rdr: &mut csv::Reader<BufReader<File>>, expected: &[&str], stage: Stage, path: &Path) -> Result<()> {
    let found: Vec<String> = rdr
        .headers()
        .map_err(csv_err(stage, path))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != expected {
        return Err(CliError::data(
            stage,
            format!(
                "{}: expected header `{}`, found `{}`",
                path.display(),
                expected.join(","),
                found.join(",")
            ),
        ));
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(s: &str, stage: Stage, path: &Path) -> Result<T> {
    s.parse()
        .map_err(|_| CliError::data(stage, format!("{}: bad value `{s}`", path.display())))
}

pub fn write_labels(path: &Path, rows: &[LabelRow]) -> Result<()> {
    let stage = Stage::Cluster;
    let mut w = csv::Writer::from_writer(create(stage, path)?);
    let err = csv_err(stage, path);
    w.write_record(["region", "col", "row", "cluster"]).map_err(&err)?;
    for r in rows {
        w.write_record([
            r.region.clone(),
            r.cell.col.to_string(),
            r.cell.row.to_string(),
            r.cluster.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::io(stage, path, e))
}

pub fn read_labels(path: &Path, stage: Stage) -> Result<Vec<LabelRow>> {
    let mut rdr = csv::Reader::from_reader(open(stage, path)?);
    header_is(&mut rdr, &["region", "col", "row", "cluster"], stage, path)?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err(stage, path))?;
            Ok(LabelRow {
                region: rec[0].to_string(),
                cell: CellId::new(parse(&rec[1], stage, path)?, parse(&rec[2], stage, path)?),
                cluster: parse(&rec[3], stage, path)?,
            })
        })
        .collect()
}

/// Feature table rows tagged with their region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatures {
    pub regions: Vec<String>,
    pub table: FeatureTable<f64>,
}

impl RegionFeatures {
    pub fn keys(&self) -> impl Iterator<Item = (&str, CellId)> {
        self.regions
            .iter()
            .map(String::as_str)
            .zip(self.table.cells.iter().copied())
    }
}

pub fn write_features(path: &Path, f: &RegionFeatures) -> Result<()> {
    let stage = Stage::Features;
    let mut w = csv::Writer::from_writer(create(stage, path)?);
    let err = csv_err(stage, path);
    let mut header = vec!["region", "col", "row"];
    header.extend(COVARIATES);
    w.write_record(&header).map_err(&err)?;
    for (i, (region, cell)) in f.keys().enumerate() {
        let mut rec = vec![region.to_string(), cell.col.to_string(), cell.row.to_string()];
        rec.extend(f.table.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::io(stage, path, e))
}

pub fn read_features(path: &Path, stage: Stage) -> Result<RegionFeatures> {
    let mut rdr = csv::Reader::from_reader(open(stage, path)?);
    let mut header = vec!["region", "col", "row"];
    header.extend(COVARIATES);
    header_is(&mut rdr, &header, stage, path)?;
    let mut regions = Vec::new();
    let mut cells = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(stage, path))?;
        if rec.len() != 3 + N_COVARIATES {
            return Err(CliError::data(stage, format!("{}: short row", path.display())));
        }
        regions.push(rec[0].to_string());
        cells.push(CellId::new(parse(&rec[1], stage, path)?, parse(&rec[2], stage, path)?));
        for s in rec.iter().skip(3) {
            values.push(parse::<f64>(s, stage, path)?);
        }
    }
    let table = FeatureTable::from_rows(cells, values).map_err(|e| CliError::data(stage, e))?;
    Ok(RegionFeatures { regions, table })
}

/// `col,row,archetype` truth labels written by the synthetic generator.
pub fn read_truth(path: &Path) -> Result<Vec<(CellId, usize)>> {
    let stage = Stage::Cluster;
    let mut rdr = csv::Reader::from_reader(open(stage, path)?);
    header_is(&mut rdr, &["col", "row", "archetype"], stage, path)?;
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(csv_err(stage, path))?;
            Ok((
                CellId::new(parse(&rec[0], stage, path)?, parse(&rec[1], stage, path)?),
                parse(&rec[2], stage, path)?,
            ))
        })
        .collect()
}

pub fn write_json<S: serde::Serialize>(stage: Stage, path: &Path, value: &S) -> Result<()> {
    let mut w = create(stage, path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(stage, path, e))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(stage, path, e))
}

pub fn read_json<D: serde::de::DeserializeOwned>(stage: Stage, path: &Path) -> Result<D> {
    serde_json::from_reader(open(stage, path)?).map_err(|e| CliError::io(stage, path, e))
}
