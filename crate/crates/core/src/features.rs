//! Third-place covariates per cell: counts and Shannon diversity of POI
//! labels, in total and within each of the five third-place categories.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellId, CityRegion};
use crate::ingest::PoiRecord;
use crate::scalar::{ordered_sum, Scalar};

/// Labels seen fewer times than this across a run are dropped.
pub const DEFAULT_MIN_LABEL_COUNT: usize = 10;

pub const N_COVARIATES: usize = 12;

/// Column order of a [`FeatureTable`].
pub const COVARIATES: [&str; N_COVARIATES] = [
    "total_count",
    "total_diversity",
    "commercial_services_count",
    "commercial_venues_count",
    "eating_and_drinking_count",
    "outdoor_count",
    "organised_activities_count",
    "commercial_services_diversity",
    "commercial_venues_diversity",
    "eating_and_drinking_diversity",
    "outdoor_diversity",
    "organised_activities_diversity",
];

pub const TOTAL_COUNT: usize = 0;
pub const TOTAL_DIVERSITY: usize = 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("expected header `label,category`, found `{0}`")]
    BadHeader(String),
    #[error("label `{0}` mapped more than once")]
    DuplicateLabel(String),
    #[error("unknown third-place category `{0}`")]
    UnknownCategory(String),
    #[error("standardizing needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("feature file: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThirdPlace {
    CommercialServices,
    CommercialVenues,
    EatingAndDrinking,
    Outdoor,
    OrganisedActivities,
}

impl ThirdPlace {
    pub const ALL: [ThirdPlace; 5] = [
        ThirdPlace::CommercialServices,
        ThirdPlace::CommercialVenues,
        ThirdPlace::EatingAndDrinking,
        ThirdPlace::Outdoor,
        ThirdPlace::OrganisedActivities,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn slug(self) -> &'static str {
        match self {
            Self::CommercialServices => "commercial_services",
            Self::CommercialVenues => "commercial_venues",
            Self::EatingAndDrinking => "eating_and_drinking",
            Self::Outdoor => "outdoor",
            Self::OrganisedActivities => "organised_activities",
        }
    }

    pub fn count_column(self) -> usize {
        2 + self.index()
    }

    pub fn diversity_column(self) -> usize {
        7 + self.index()
    }
}

impl fmt::Display for ThirdPlace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for ThirdPlace {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, FeatureError> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        let key = key.replace("and", "").replace("organized", "organised");
        Self::ALL
            .into_iter()
            .find(|p| p.slug().replace('_', "").replace("and", "") == key)
            .ok_or_else(|| FeatureError::UnknownCategory(s.to_string()))
    }
}

/// POI label → third-place category. Labels not listed are not third places.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ThirdPlaceTaxonomy {
    map: BTreeMap<String, ThirdPlace>,
}

impl ThirdPlaceTaxonomy {
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self, FeatureError>
    where
        I: IntoIterator<Item = (S, ThirdPlace)>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (label, place) in pairs {
            let label = label.into();
            if map.insert(label.clone(), place).is_some() {
                return Err(FeatureError::DuplicateLabel(label));
            }
        }
        Ok(Self { map })
    }

    pub fn category(&self, label: &str) -> Option<ThirdPlace> {
        self.map.get(label).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ThirdPlace)> {
        self.map.iter().map(|(l, &p)| (l.as_str(), p))
    }

    /// Reads a `label,category` CSV.
    pub fn from_csv<R: Read>(input: R) -> Result<Self, FeatureError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != ["label", "category"] {
            return Err(FeatureError::BadHeader(header.join(",")));
        }
        let mut pairs = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(FeatureError::Format(format!("expected 2 fields, got {}", rec.len())));
            }
            pairs.push((rec[0].to_string(), rec[1].parse::<ThirdPlace>()?));
        }
        Self::from_pairs(pairs)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), FeatureError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["label", "category"])?;
        for (label, place) in self.iter() {
            w.write_record([label, place.slug()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Keeps POIs whose label occurs at least `min_count` times in `pois`.
pub fn filter_rare_labels(pois: &[PoiRecord], min_count: usize) -> Vec<PoiRecord> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for p in pois {
        *counts.entry(p.label.as_str()).or_default() += 1;
    }
    pois.iter()
        .filter(|p| counts[p.label.as_str()] >= min_count)
        .cloned()
        .collect()
}

/// Shannon index in bits, `−Σ pᵢ log₂ pᵢ` over the positive counts.
///
/// Zero for an empty or single-label input. The result is clamped to the
/// exact bounds `[0, log₂ M]`, M being the number of positive counts, so
/// rounding never pushes a uniform distribution past its maximum.
pub fn shannon_diversity<T: Scalar, I: IntoIterator<Item = u64>>(counts: I) -> T {
    let positive: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    if positive.len() <= 1 {
        return T::zero();
    }
    let total = T::lit(positive.iter().sum::<u64>() as f64);
    let terms: Vec<T> = positive
        .iter()
        .map(|&c| {
            let p = T::lit(c as f64) / total;
            p * p.log2()
        })
        .collect();
    let h = -ordered_sum(&terms);
    let upper = T::from_count(positive.len()).log2();
    h.max(T::zero()).min(upper)
}

/// Covariates per cell, `rows × 12` in [`COVARIATES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable<T> {
    pub cells: Vec<CellId>,
    values: Vec<T>,
    pub standardized: bool,
    /// POIs that fell outside the region's active cells.
    pub unmatched_pois: usize,
}

impl<T: Scalar> FeatureTable<T> {
    pub fn from_rows(cells: Vec<CellId>, values: Vec<T>) -> Result<Self, FeatureError> {
        if values.len() != cells.len() * N_COVARIATES {
            return Err(FeatureError::Format(format!(
                "{} values for {} rows",
                values.len(),
                cells.len()
            )));
        }
        Ok(Self {
            cells,
            values,
            standardized: false,
            unmatched_pois: 0,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.cells.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * N_COVARIATES..(i + 1) * N_COVARIATES]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.n_rows()).map(|i| self.values[i * N_COVARIATES + j]).collect()
    }

    pub fn covariate_names() -> Vec<String> {
        COVARIATES.iter().map(|s| s.to_string()).collect()
    }

    pub fn retain_rows(&self, keep: &[bool]) -> Self {
        assert_eq!(keep.len(), self.n_rows(), "mask length must match rows");
        let mut cells = Vec::new();
        let mut values = Vec::new();
        for (i, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
            cells.push(self.cells[i]);
            values.extend_from_slice(self.row(i));
        }
        Self { cells, values, ..*self }
    }

    pub fn concat(parts: &[FeatureTable<T>]) -> Self {
        Self {
            cells: parts.iter().flat_map(|p| p.cells.iter().copied()).collect(),
            values: parts.iter().flat_map(|p| p.values.iter().copied()).collect(),
            standardized: parts.first().is_some_and(|p| p.standardized),
            unmatched_pois: parts.iter().map(|p| p.unmatched_pois).sum(),
        }
    }

    /// `col,row` followed by the 12 covariate columns.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), FeatureError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["col", "row"];
        header.extend(COVARIATES);
        w.write_record(&header)?;
        for (i, cell) in self.cells.iter().enumerate() {
            let mut rec = vec![cell.col.to_string(), cell.row.to_string()];
            rec.extend(self.row(i).iter().map(|v| v.as_f64().to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, FeatureError> {
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut expected = vec!["col".to_string(), "row".to_string()];
        expected.extend(Self::covariate_names());
        if header != expected {
            return Err(FeatureError::Format(format!(
                "unexpected header `{}`",
                header.join(",")
            )));
        }
        let mut cells = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let bad = |s: &str| FeatureError::Format(format!("bad number `{s}`"));
            let col = rec[0].parse::<u32>().map_err(|_| bad(&rec[0]))?;
            let row = rec[1].parse::<u32>().map_err(|_| bad(&rec[1]))?;
            cells.push(CellId::new(col, row));
            for s in rec.iter().skip(2) {
                values.push(T::lit(s.parse::<f64>().map_err(|_| bad(s))?));
            }
        }
        Self::from_rows(cells, values)
    }
}

/// Counts and diversities of third-place POIs for every active cell of
/// `region`, in region order. Cells without POIs get all zeros.
pub fn build_features<T: Scalar>(
    pois: &[PoiRecord],
    taxonomy: &ThirdPlaceTaxonomy,
    region: &CityRegion,
) -> FeatureTable<T> {
    let cells = region.cells();
    let row_of: HashMap<CellId, usize> = cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut per_cell: Vec<BTreeMap<&str, (ThirdPlace, u64)>> = vec![BTreeMap::new(); cells.len()];
    let mut unmatched = 0;
    for poi in pois {
        let Some(place) = taxonomy.category(&poi.label) else {
            continue;
        };
        let row = region
            .grid
            .point_to_cell(poi.x, poi.y)
            .ok()
            .and_then(|c| row_of.get(&c).copied());
        match row {
            Some(r) => per_cell[r].entry(poi.label.as_str()).or_insert((place, 0)).1 += 1,
            None => unmatched += 1,
        }
    }

    let mut values = Vec::with_capacity(cells.len() * N_COVARIATES);
    for labels in &per_cell {
        let mut row = [T::zero(); N_COVARIATES];
        let total: u64 = labels.values().map(|&(_, c)| c).sum();
        row[TOTAL_COUNT] = T::lit(total as f64);
        row[TOTAL_DIVERSITY] = shannon_diversity(labels.values().map(|&(_, c)| c));
        for place in ThirdPlace::ALL {
            let counts: Vec<u64> = labels.values().filter(|(p, _)| *p == place).map(|&(_, c)| c).collect();
            row[place.count_column()] = T::lit(counts.iter().sum::<u64>() as f64);
            row[place.diversity_column()] = shannon_diversity(counts);
        }
        values.extend_from_slice(&row);
    }
    FeatureTable {
        cells,
        values,
        standardized: false,
        unmatched_pois: unmatched,
    }
}

/// Population z-scores per covariate `(x − μ) / σ`; constant columns become 0.
pub fn standardize<T: Scalar>(table: &FeatureTable<T>) -> Result<FeatureTable<T>, FeatureError> {
    let n = table.n_rows();
    if n < 2 {
        return Err(FeatureError::TooFewRows(n));
    }
    let nf = T::from_count(n);
    let mut values = table.values.clone();
    for j in 0..N_COVARIATES {
        let col = table.column(j);
        let mean = ordered_sum(&col) / nf;
        let sq: Vec<T> = col.iter().map(|&x| (x - mean) * (x - mean)).collect();
        let sd = (ordered_sum(&sq) / nf).sqrt();
        for (i, &x) in col.iter().enumerate() {
            values[i * N_COVARIATES + j] = if sd.is_zero() { T::zero() } else { (x - mean) / sd };
        }
    }
    Ok(FeatureTable {
        values,
        standardized: true,
        ..table.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::ingest::OsmKey;

    fn poi(x: f64, y: f64, label: &str) -> PoiRecord {
        PoiRecord {
            x,
            y,
            label: label.into(),
            source_category: OsmKey::Amenity,
        }
    }

    #[test]
    fn diversity_examples() {
        assert_eq!(shannon_diversity::<f64, _>([5]), 0.0);
        assert_eq!(shannon_diversity::<f64, _>([1, 1]), 1.0);
        assert!((shannon_diversity::<f64, _>([2, 1, 1]) - 1.5).abs() < 1e-15);
        assert_eq!(shannon_diversity::<f64, _>([0, 0]), 0.0);
        assert_eq!(shannon_diversity::<f64, _>(Vec::<u64>::new()), 0.0);
        assert_eq!(shannon_diversity::<f64, _>([3, 0]), 0.0);
    }

    #[test]
    fn rare_label_threshold_is_inclusive() {
        let mut pois: Vec<PoiRecord> = (0..9).map(|_| poi(1.0, 1.0, "kiosk")).collect();
        pois.extend((0..10).map(|_| poi(1.0, 1.0, "cafe")));
        let kept = filter_rare_labels(&pois, DEFAULT_MIN_LABEL_COUNT);
        assert_eq!(kept.len(), 10);
        assert!(kept.iter().all(|p| p.label == "cafe"));
        assert!(filter_rare_labels(&[], 10).is_empty());
    }

    fn taxonomy() -> ThirdPlaceTaxonomy {
        ThirdPlaceTaxonomy::from_pairs([
            ("restaurant", ThirdPlace::EatingAndDrinking),
            ("bar", ThirdPlace::EatingAndDrinking),
            ("park", ThirdPlace::Outdoor),
        ])
        .unwrap()
    }

    #[test]
    fn build_features_example() {
        let region = CityRegion::full(GridSpec::new("r", (0.0, 0.0), 100.0, 2, 1).unwrap(), None).unwrap();
        let pois = vec![
            poi(10.0, 10.0, "restaurant"),
            poi(20.0, 10.0, "restaurant"),
            poi(30.0, 10.0, "bar"),
            poi(40.0, 10.0, "park"),
            poi(50.0, 50.0, "bank"),
            poi(150.0, 50.0, "bank"),
            poi(999.0, 50.0, "park"),
        ];
        let t: FeatureTable<f64> = build_features(&pois, &taxonomy(), &region);
        let r = t.row(0);
        assert_eq!(r[TOTAL_COUNT], 4.0);
        assert_eq!(r[ThirdPlace::EatingAndDrinking.count_column()], 3.0);
        let h21 = -(2.0f64 / 3.0 * (2.0f64 / 3.0).log2() + 1.0 / 3.0 * (1.0f64 / 3.0).log2());
        assert!((r[ThirdPlace::EatingAndDrinking.diversity_column()] - h21).abs() < 1e-12);
        assert!((h21 - 0.9183).abs() < 1e-4);
        assert_eq!(r[ThirdPlace::Outdoor.count_column()], 1.0);
        assert_eq!(r[ThirdPlace::Outdoor.diversity_column()], 0.0);
        assert!((r[TOTAL_DIVERSITY] - 1.5).abs() < 1e-12);
        // cell 1 holds only a non-third-place label
        assert!(t.row(1).iter().all(|&v| v == 0.0));
        assert_eq!(t.unmatched_pois, 1);
    }

    #[test]
    fn standardize_examples() {
        let cells = vec![CellId::new(0, 0); 4];
        let mut values = vec![0.0; 4 * N_COVARIATES];
        for (i, v) in [1.0, 2.0, 3.0, 4.0].into_iter().enumerate() {
            values[i * N_COVARIATES] = v;
            values[i * N_COVARIATES + 1] = 3.0;
        }
        let t = FeatureTable::<f64>::from_rows(cells, values).unwrap();
        let z = standardize(&t).unwrap();
        let expected = [-1.3416, -0.4472, 0.4472, 1.3416];
        for (a, b) in z.column(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-4);
        }
        assert!(z.column(1).iter().all(|&v| v == 0.0));
        assert!(z.standardized);

        let two = FeatureTable::from_rows(
            vec![CellId::new(0, 0); 2],
            [vec![0.0; N_COVARIATES], {
                let mut r = vec![0.0; N_COVARIATES];
                r[0] = 2.0;
                r
            }]
            .concat(),
        )
        .unwrap();
        assert_eq!(standardize(&two).unwrap().column(0), vec![-1.0, 1.0]);

        let one = FeatureTable::<f64>::from_rows(vec![CellId::new(0, 0)], vec![0.0; N_COVARIATES]).unwrap();
        assert!(matches!(standardize(&one), Err(FeatureError::TooFewRows(1))));
    }

    #[test]
    fn category_names_parse() {
        assert_eq!(
            "eating_and_drinking".parse::<ThirdPlace>().unwrap(),
            ThirdPlace::EatingAndDrinking
        );
        assert_eq!(
            "EatingAndDrinking".parse::<ThirdPlace>().unwrap(),
            ThirdPlace::EatingAndDrinking
        );
        assert_eq!(
            "Organized Activities".parse::<ThirdPlace>().unwrap(),
            ThirdPlace::OrganisedActivities
        );
        assert!("nightlife".parse::<ThirdPlace>().is_err());
    }

    #[test]
    fn taxonomy_csv() {
        let t = ThirdPlaceTaxonomy::from_csv("label,category\ncafe,eating_and_drinking\npark,outdoor\n".as_bytes())
            .unwrap();
        assert_eq!(t.category("park"), Some(ThirdPlace::Outdoor));
        assert_eq!(t.category("bank"), None);
        assert!(matches!(
            ThirdPlaceTaxonomy::from_csv("label,category\ncafe,outdoor\ncafe,outdoor\n".as_bytes()),
            Err(FeatureError::DuplicateLabel(_))
        ));
        let shipped =
            ThirdPlaceTaxonomy::from_csv(include_str!("../../../config/third_places.csv").as_bytes()).unwrap();
        for place in ThirdPlace::ALL {
            assert!(shipped.iter().any(|(_, p)| p == place));
        }
    }

    #[test]
    fn csv_roundtrip() {
        let region = CityRegion::full(GridSpec::new("r", (0.0, 0.0), 100.0, 2, 1).unwrap(), None).unwrap();
        let t: FeatureTable<f64> = build_features(&[poi(1.0, 1.0, "bar"), poi(2.0, 1.0, "park")], &taxonomy(), &region);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = FeatureTable::<f64>::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.values(), t.values());
        assert_eq!(back.cells, t.cells);
    }
}
