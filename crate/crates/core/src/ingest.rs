//! CSV ingestion for traffic, POI and taxonomy files.
//!
//! Row-level problems never abort a parse: the row is skipped and recorded
//! as a [`Rejection`], so `records.len() + rejects.len()` always equals the
//! number of data lines. Only I/O failures and a wrong header are fatal.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use chrono::{NaiveDateTime, Timelike};
use csv::{ReaderBuilder, StringRecord, Trim};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellId, GridSpec};

pub const TRAFFIC_HEADER: [&str; 6] = ["col", "row", "timestamp", "service", "direction", "volume"];
pub const POI_HEADER: [&str; 4] = ["x", "y", "label", "source_category"];
pub const APP_TAXONOMY_HEADER: [&str; 2] = ["service", "category"];

/// Traffic timestamps must fall on quarter-hour boundaries.
pub const SLOT_MINUTES: u32 = 15;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("expected header `{expected}`, found `{found}`")]
    BadHeader { expected: String, found: String },
    #[error("service `{service}` listed more than once (line {line})")]
    DuplicateService { service: String, line: u64 },
    #[error("taxonomy lists no categories")]
    EmptyCategoryList,
    #[error("taxonomy line {line}: {detail}")]
    MalformedTaxonomy { line: u64, detail: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Downlink,
    Uplink,
}

impl FromStr for Direction {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "downlink" | "dl" => Ok(Self::Downlink),
            "uplink" | "ul" => Ok(Self::Uplink),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Downlink => "downlink",
            Self::Uplink => "uplink",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficRecord {
    pub cell: CellId,
    pub timestamp: NaiveDateTime,
    pub service: String,
    pub direction: Direction,
    pub volume: f64,
}

/// The OSM keys POIs are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OsmKey {
    Amenity,
    Leisure,
    Shop,
    Sport,
}

impl FromStr for OsmKey {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "amenity" => Ok(Self::Amenity),
            "leisure" => Ok(Self::Leisure),
            "shop" => Ok(Self::Shop),
            "sport" => Ok(Self::Sport),
            _ => Err(()),
        }
    }
}

impl fmt::Display for OsmKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Amenity => "amenity",
            Self::Leisure => "leisure",
            Self::Shop => "shop",
            Self::Sport => "sport",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoiRecord {
    pub x: f64,
    pub y: f64,
    pub label: String,
    pub source_category: OsmKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectKind {
    MalformedLine,
    UnknownDirection,
    OutOfBounds,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub line: u64,
    pub kind: RejectKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<R> {
    pub records: Vec<R>,
    pub rejects: Vec<Rejection>,
}

impl<R> Parsed<R> {
    pub fn data_lines(&self) -> usize {
        self.records.len() + self.rejects.len()
    }
}

/// Affine map from input coordinates (e.g. projected lon/lat) to the grid's
/// planar metric frame: `x' = a·x + b·y + c`, `y' = d·x + e·y + f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarTransform {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl Default for PlanarTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl PlanarTransform {
    pub const IDENTITY: Self = Self {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 0.0,
        e: 1.0,
        f: 0.0,
    };

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (self.a * x + self.b * y + self.c, self.d * x + self.e * y + self.f)
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(Trim::All)
        .from_reader(input)
}

/// Iterates data rows after validating the header. An input without any
/// row (not even a header) yields nothing.
fn for_each_row<R, F>(input: R, header: &[&str], mut on_row: F) -> Result<(), IngestError>
where
    R: Read,
    F: FnMut(u64, Result<StringRecord, String>),
{
    let mut rdr = reader(input);
    let mut rows = rdr.records();
    match rows.next() {
        None => return Ok(()),
        Some(first) => {
            let first = first?;
            let found: Vec<&str> = first.iter().collect();
            if found != header {
                return Err(IngestError::BadHeader {
                    expected: header.join(","),
                    found: found.join(","),
                });
            }
        }
    }
    for row in rows {
        match row {
            Ok(record) => {
                let line = record.position().map_or(0, |p| p.line());
                on_row(line, Ok(record));
            }
            Err(err) => {
                let line = err.position().map_or(0, |p| p.line());
                match err.kind() {
                    csv::ErrorKind::Utf8 { .. } => on_row(line, Err(err.to_string())),
                    _ => return Err(err.into()),
                }
            }
        }
    }
    Ok(())
}

fn malformed(line: u64, detail: impl Into<String>) -> Rejection {
    Rejection {
        line,
        kind: RejectKind::MalformedLine,
        detail: detail.into(),
    }
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S"))
        .ok()
}

pub fn format_timestamp(ts: &NaiveDateTime) -> String {
    ts.format("%Y-%m-%dT%H:%M").to_string()
}

fn traffic_row(line: u64, row: &StringRecord, grid: &GridSpec) -> Result<TrafficRecord, Rejection> {
    if row.len() != TRAFFIC_HEADER.len() {
        return Err(malformed(
            line,
            format!("expected {} fields, got {}", TRAFFIC_HEADER.len(), row.len()),
        ));
    }
    let col: u32 = row[0]
        .parse()
        .map_err(|_| malformed(line, format!("bad col `{}`", &row[0])))?;
    let r: u32 = row[1]
        .parse()
        .map_err(|_| malformed(line, format!("bad row `{}`", &row[1])))?;
    let timestamp = parse_timestamp(&row[2]).ok_or_else(|| malformed(line, format!("bad timestamp `{}`", &row[2])))?;
    if timestamp.minute() % SLOT_MINUTES != 0 || timestamp.second() != 0 {
        return Err(malformed(
            line,
            format!("timestamp `{}` not aligned to {SLOT_MINUTES} minutes", &row[2]),
        ));
    }
    let service = row[3].to_string();
    if service.is_empty() {
        return Err(malformed(line, "empty service"));
    }
    let direction: Direction = row[4].parse().map_err(|_| Rejection {
        line,
        kind: RejectKind::UnknownDirection,
        detail: format!("unknown direction `{}`", &row[4]),
    })?;
    let volume: f64 = row[5]
        .parse()
        .map_err(|_| malformed(line, format!("bad volume `{}`", &row[5])))?;
    if !(volume.is_finite() && volume >= 0.0) {
        return Err(malformed(line, format!("volume must be finite and >= 0, got {volume}")));
    }
    let cell = CellId::new(col, r);
    if !grid.contains(cell) {
        return Err(Rejection {
            line,
            kind: RejectKind::OutOfBounds,
            detail: format!("cell {cell} outside grid '{}'", grid.region_name),
        });
    }
    Ok(TrafficRecord {
        cell,
        timestamp,
        service,
        direction,
        volume,
    })
}

/// Parses a traffic CSV (`col,row,timestamp,service,direction,volume`).
pub fn parse_traffic<R: Read>(input: R, grid: &GridSpec) -> Result<Parsed<TrafficRecord>, IngestError> {
    let mut out = Parsed {
        records: Vec::new(),
        rejects: Vec::new(),
    };
    for_each_row(input, &TRAFFIC_HEADER, |line, row| {
        match row
            .map_err(|e| malformed(line, e))
            .and_then(|r| traffic_row(line, &r, grid))
        {
            Ok(rec) => out.records.push(rec),
            Err(rej) => out.rejects.push(rej),
        }
    })?;
    Ok(out)
}

fn poi_row(line: u64, row: &StringRecord, transform: &PlanarTransform) -> Result<PoiRecord, Rejection> {
    if row.len() != POI_HEADER.len() {
        return Err(malformed(
            line,
            format!("expected {} fields, got {}", POI_HEADER.len(), row.len()),
        ));
    }
    let x: f64 = row[0]
        .parse()
        .map_err(|_| malformed(line, format!("bad x `{}`", &row[0])))?;
    let y: f64 = row[1]
        .parse()
        .map_err(|_| malformed(line, format!("bad y `{}`", &row[1])))?;
    if !(x.is_finite() && y.is_finite()) {
        return Err(malformed(line, "non-finite coordinate"));
    }
    let label = row[2].to_string();
    if label.is_empty() {
        return Err(malformed(line, "empty label"));
    }
    let source_category: OsmKey = row[3].parse().map_err(|_| {
        malformed(
            line,
            format!("source category `{}` not one of amenity/leisure/shop/sport", &row[3]),
        )
    })?;
    let (x, y) = transform.apply(x, y);
    Ok(PoiRecord {
        x,
        y,
        label,
        source_category,
    })
}

/// Parses a POI CSV (`x,y,label,source_category`) already in the planar frame.
pub fn parse_pois<R: Read>(input: R) -> Result<Parsed<PoiRecord>, IngestError> {
    parse_pois_with(input, &PlanarTransform::IDENTITY)
}

/// Parses a POI CSV, mapping coordinates into the planar frame first.
pub fn parse_pois_with<R: Read>(input: R, transform: &PlanarTransform) -> Result<Parsed<PoiRecord>, IngestError> {
    let mut out = Parsed {
        records: Vec::new(),
        rejects: Vec::new(),
    };
    for_each_row(input, &POI_HEADER, |line, row| {
        match row
            .map_err(|e| malformed(line, e))
            .and_then(|r| poi_row(line, &r, transform))
        {
            Ok(rec) => out.records.push(rec),
            Err(rej) => out.rejects.push(rej),
        }
    })?;
    Ok(out)
}

/// Service → app-category grouping with a stable category order (first
/// appearance in the file).
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceTaxonomy {
    categories: Vec<String>,
    services: BTreeMap<String, usize>,
}

impl ServiceTaxonomy {
    pub fn from_pairs<I, S, C>(pairs: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = (S, C)>,
        S: Into<String>,
        C: Into<String>,
    {
        let mut categories: Vec<String> = Vec::new();
        let mut services = BTreeMap::new();
        for (i, (service, category)) in pairs.into_iter().enumerate() {
            let (service, category) = (service.into(), category.into());
            let idx = match categories.iter().position(|c| *c == category) {
                Some(idx) => idx,
                None => {
                    categories.push(category);
                    categories.len() - 1
                }
            };
            if services.insert(service.clone(), idx).is_some() {
                return Err(IngestError::DuplicateService {
                    service,
                    line: i as u64 + 2,
                });
            }
        }
        if categories.is_empty() {
            return Err(IngestError::EmptyCategoryList);
        }
        Ok(Self { categories, services })
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn n_services(&self) -> usize {
        self.services.len()
    }

    pub fn category_index(&self, service: &str) -> Option<usize> {
        self.services.get(service).copied()
    }

    pub fn services(&self) -> impl Iterator<Item = (&str, &str)> {
        self.services
            .iter()
            .map(|(s, &i)| (s.as_str(), self.categories[i].as_str()))
    }
}

/// Loads a `service,category` CSV.
pub fn load_taxonomy<R: Read>(input: R) -> Result<ServiceTaxonomy, IngestError> {
    let mut pairs = Vec::new();
    let mut bad = None;
    for_each_row(input, &APP_TAXONOMY_HEADER, |line, row| {
        if bad.is_some() {
            return;
        }
        match row {
            Ok(r) if r.len() == 2 && !r[0].is_empty() && !r[1].is_empty() => {
                pairs.push((r[0].to_string(), r[1].to_string()));
            }
            Ok(r) => {
                bad = Some(IngestError::MalformedTaxonomy {
                    line,
                    detail: format!("expected `service,category`, got {} fields", r.len()),
                })
            }
            Err(e) => bad = Some(IngestError::MalformedTaxonomy { line, detail: e }),
        }
    })?;
    if let Some(err) = bad {
        return Err(err);
    }
    ServiceTaxonomy::from_pairs(pairs)
}

pub fn write_traffic_csv<W: std::io::Write>(out: W, records: &[TrafficRecord]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAFFIC_HEADER)?;
    for r in records {
        w.write_record([
            r.cell.col.to_string(),
            r.cell.row.to_string(),
            format_timestamp(&r.timestamp),
            r.service.clone(),
            r.direction.to_string(),
            r.volume.to_string(),
        ])?;
    }
    w.flush()
}

pub fn write_poi_csv<W: std::io::Write>(out: W, records: &[PoiRecord]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(POI_HEADER)?;
    for r in records {
        w.write_record([
            r.x.to_string(),
            r.y.to_string(),
            r.label.clone(),
            r.source_category.to_string(),
        ])?;
    }
    w.flush()
}

pub fn write_taxonomy_csv<W: std::io::Write>(out: W, taxonomy: &ServiceTaxonomy) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(APP_TAXONOMY_HEADER)?;
    for (service, category) in taxonomy.services() {
        w.write_record([service, category])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn grid() -> GridSpec {
        GridSpec::new("t", (0.0, 0.0), 100.0, 10, 10).unwrap()
    }

    fn traffic(body: &str) -> Parsed<TrafficRecord> {
        let text = format!("col,row,timestamp,service,direction,volume\n{body}");
        parse_traffic(text.as_bytes(), &grid()).unwrap()
    }

    #[test]
    fn traffic_format_example() {
        let p = traffic("3,7,2019-03-16T00:00,WhatsApp,downlink,12.5\n");
        assert!(p.rejects.is_empty());
        let r = &p.records[0];
        assert_eq!(r.cell, CellId::new(3, 7));
        assert_eq!(
            r.timestamp,
            NaiveDate::from_ymd_opt(2019, 3, 16)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap()
        );
        assert_eq!(r.service, "WhatsApp");
        assert_eq!(r.direction, Direction::Downlink);
        assert_eq!(r.volume, 12.5);
    }

    #[test]
    fn traffic_rejections() {
        let p = traffic(
            "3,7,2019-03-16T00:00,WhatsApp,downlink,-1\n\
             3,7,2019-03-16T00:07,WhatsApp,downlink,1\n\
             3,7,2019-03-16T00:15,WhatsApp,sideways,1\n\
             30,7,2019-03-16T00:15,WhatsApp,uplink,1\n\
             3,7,2019-03-16T00:15,WhatsApp,uplink\n\
             3,7,2019-03-16T00:30,WhatsApp,uplink,2\n",
        );
        assert_eq!(p.records.len(), 1);
        let kinds: Vec<RejectKind> = p.rejects.iter().map(|r| r.kind).collect();
        assert_eq!(
            kinds,
            vec![
                RejectKind::MalformedLine,
                RejectKind::MalformedLine,
                RejectKind::UnknownDirection,
                RejectKind::OutOfBounds,
                RejectKind::MalformedLine,
            ]
        );
        assert_eq!(p.rejects[0].line, 2);
        assert_eq!(p.data_lines(), 6);
    }

    #[test]
    fn wrong_header_is_fatal() {
        let err = parse_traffic("a,b\n1,2\n".as_bytes(), &grid()).unwrap_err();
        assert!(matches!(err, IngestError::BadHeader { .. }));
    }

    #[test]
    fn poi_examples() {
        let p = parse_pois("x,y,label,source_category\n512.0,884.0,restaurant,amenity\n1,2,hut,building\n".as_bytes())
            .unwrap();
        assert_eq!(
            p.records,
            vec![PoiRecord {
                x: 512.0,
                y: 884.0,
                label: "restaurant".into(),
                source_category: OsmKey::Amenity
            }]
        );
        assert_eq!(p.rejects.len(), 1);
    }

    #[test]
    fn empty_poi_file() {
        let p = parse_pois("".as_bytes()).unwrap();
        assert!(p.records.is_empty() && p.rejects.is_empty());
        let p = parse_pois("x,y,label,source_category\n".as_bytes()).unwrap();
        assert!(p.records.is_empty() && p.rejects.is_empty());
    }

    #[test]
    fn poi_transform_applied() {
        let t = PlanarTransform {
            a: 2.0,
            c: 10.0,
            e: 3.0,
            ..PlanarTransform::IDENTITY
        };
        let p = parse_pois_with("x,y,label,source_category\n1,1,park,leisure\n".as_bytes(), &t).unwrap();
        assert_eq!((p.records[0].x, p.records[0].y), (12.0, 3.0));
    }

    #[test]
    fn taxonomy_examples() {
        let tax = load_taxonomy(
            "service,category\nApple iMessage,Messaging\nWhatsApp,Messaging\nFacebook,Social\n".as_bytes(),
        )
        .unwrap();
        assert_eq!(tax.n_categories(), 2);
        assert_eq!(tax.categories(), ["Messaging", "Social"]);
        assert_eq!(tax.category_index("Facebook"), Some(1));

        let dup = load_taxonomy("service,category\nA,X\nA,Y\n".as_bytes()).unwrap_err();
        assert!(matches!(dup, IngestError::DuplicateService { .. }));
        let empty = load_taxonomy("service,category\n".as_bytes()).unwrap_err();
        assert!(matches!(empty, IngestError::EmptyCategoryList));
    }

    #[test]
    fn shipped_app_taxonomy_has_thirty_categories() {
        let text = include_str!("../../../config/app_taxonomy.csv");
        let tax = load_taxonomy(text.as_bytes()).unwrap();
        assert_eq!(tax.n_services(), 68);
        assert_eq!(tax.n_categories(), 30);
        assert_eq!(tax.category_index("WhatsApp"), tax.category_index("Apple iMessage"));
    }

    #[test]
    fn traffic_roundtrip_through_writer() {
        let p = traffic("3,7,2019-03-16T00:00,WhatsApp,downlink,12.5\n1,1,2019-03-16T23:45,Netflix,uplink,0.25\n");
        let mut buf = Vec::new();
        write_traffic_csv(&mut buf, &p.records).unwrap();
        let again = parse_traffic(buf.as_slice(), &grid()).unwrap();
        assert_eq!(again.records, p.records);
    }
}
