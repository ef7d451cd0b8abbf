//! Seeded synthetic cities with planted archetypes, used as ground truth for
//! end-to-end checks.
//!
//! Each purpose draws from its own ChaCha8 stream of the spec seed:
//! stream 0 assigns archetypes, 1 draws traffic noise, 2 places traffic in
//! 15-minute slots and services, 3 draws POIs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ThirdPlace, ThirdPlaceTaxonomy};
use crate::grid::{CellId, CityRegion, GridSpec};
use crate::ingest::{
    write_poi_csv, write_taxonomy_csv, write_traffic_csv, Direction, OsmKey, PoiRecord, ServiceTaxonomy, TrafficRecord,
    SLOT_MINUTES,
};
use crate::signatures::{day_type_of_date, DayType, BINS};

const STREAM_ASSIGN: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_SLOTS: u64 = 2;
const STREAM_POIS: u64 = 3;

/// First date considered when laying out synthetic days (a Monday).
const FIRST_DAY: (i32, u32, u32) = (2023, 3, 6);

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error("{0} labels vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Expected POIs per cell and number of distinct labels, per third-place
/// category (in [`ThirdPlace::ALL`] order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiProfile {
    pub intensity: [f64; 5],
    pub labels: [usize; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    #[serde(default = "default_region")]
    pub region_name: String,
    pub n_cells: usize,
    pub categories: Vec<String>,
    #[serde(default = "one")]
    pub services_per_category: usize,
    /// Daily volume per archetype, `12 × D` flattened bin-major.
    pub archetypes: Vec<Vec<f64>>,
    pub noise_sigma: f64,
    /// Relative archetype frequencies in the round-robin pattern.
    pub archetype_shares: Vec<usize>,
    pub poi_profiles: Vec<PoiProfile>,
    pub day_types: Vec<DayType>,
    #[serde(default = "one")]
    pub days_per_type: usize,
}

fn default_region() -> String {
    "synthville".into()
}

fn one() -> usize {
    1
}

impl SynthSpec {
    /// A ready-made spec: `k` archetypes over `d` categories whose curves
    /// peak at different hours, shares `k, k−1, …, 1`, and POI diversity
    /// rising with the archetype number (archetype 1 has a single label).
    pub fn planted(seed: u64, n_cells: usize, k: usize, d: usize, noise_sigma: f64) -> Self {
        let archetypes = (0..k)
            .map(|a| {
                let mut m = vec![0.0; BINS * d];
                for b in 0..BINS {
                    for c in 0..d {
                        let center = (a * BINS / k.max(1) + 5 * c) % BINS;
                        let dist = (b as f64 - center as f64).abs();
                        let dist = dist.min(BINS as f64 - dist);
                        m[b * d + c] = 10.0 + 40.0 * (-dist * dist / 2.0).exp();
                    }
                }
                m
            })
            .collect();
        let poi_profiles = (0..k)
            .map(|a| {
                if a == 0 {
                    PoiProfile {
                        intensity: [0.0, 0.0, 6.0, 0.0, 0.0],
                        labels: [1; 5],
                    }
                } else {
                    PoiProfile {
                        intensity: [1.5; 5],
                        labels: [1 + 2 * a; 5],
                    }
                }
            })
            .collect();
        Self {
            seed,
            region_name: default_region(),
            n_cells,
            categories: (1..=d).map(|c| format!("category_{c}")).collect(),
            services_per_category: 2,
            archetypes,
            noise_sigma,
            archetype_shares: (1..=k).rev().collect(),
            poi_profiles,
            day_types: vec![DayType::Weekday],
            days_per_type: 2,
        }
    }

    pub fn k_true(&self) -> usize {
        self.archetypes.len()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        let k = self.k_true();
        let d = self.categories.len();
        if k < 2 {
            return bad(format!("need at least 2 archetypes, got {k}"));
        }
        if d == 0 {
            return bad("no categories".into());
        }
        if self.n_cells < k {
            return bad(format!("{} cells cannot hold {k} archetypes", self.n_cells));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma must be finite and ≥ 0, got {}", self.noise_sigma));
        }
        for (a, m) in self.archetypes.iter().enumerate() {
            if m.len() != BINS * d {
                return bad(format!(
                    "archetype {} has {} values, expected {}",
                    a + 1,
                    m.len(),
                    BINS * d
                ));
            }
            if m.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad(format!("archetype {} has negative or non-finite values", a + 1));
            }
        }
        if self.archetype_shares.len() != k || self.archetype_shares.contains(&0) {
            return bad("archetype_shares needs one positive entry per archetype".into());
        }
        if self.poi_profiles.len() != k {
            return bad("poi_profiles needs one entry per archetype".into());
        }
        for p in &self.poi_profiles {
            for (&lam, &labels) in p.intensity.iter().zip(&p.labels) {
                if !(lam >= 0.0 && lam.is_finite()) || (lam > 0.0 && labels == 0) {
                    return bad("POI intensities must be finite, ≥ 0, with at least one label".into());
                }
            }
        }
        if self.services_per_category == 0 || self.days_per_type == 0 || self.day_types.is_empty() {
            return bad("services_per_category, days_per_type and day_types must be non-empty".into());
        }
        Ok(())
    }

    /// Smallest RMS difference between two archetype matrices, over σ.
    /// Infinite without noise.
    pub fn separation_ratio(&self) -> f64 {
        let mut min = f64::INFINITY;
        for i in 0..self.archetypes.len() {
            for j in i + 1..self.archetypes.len() {
                let (a, b) = (&self.archetypes[i], &self.archetypes[j]);
                let ms = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
                min = min.min(ms.sqrt());
            }
        }
        if self.noise_sigma == 0.0 {
            f64::INFINITY
        } else {
            min / self.noise_sigma
        }
    }

    pub fn grid(&self) -> GridSpec {
        let cols = (self.n_cells as f64).sqrt().ceil().max(1.0) as u32;
        let rows = (self.n_cells as u32).div_ceil(cols);
        GridSpec {
            region_name: self.region_name.clone(),
            origin_x: 0.0,
            origin_y: 0.0,
            cell_size: 100.0,
            n_cols: cols,
            n_rows: rows,
        }
    }

    pub fn service_name(&self, category: usize, j: usize) -> String {
        format!("{}_svc{}", self.categories[category], j + 1)
    }

    pub fn poi_label(place: ThirdPlace, j: usize) -> String {
        format!("{}_{}", place.slug(), j + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub region: CityRegion,
    pub taxonomy: ServiceTaxonomy,
    pub third_places: ThirdPlaceTaxonomy,
    /// 1-based planted archetype per active cell, in region order.
    pub archetypes: Vec<usize>,
    pub traffic: Vec<TrafficRecord>,
    pub pois: Vec<PoiRecord>,
    pub separation_ratio: f64,
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn dates_of(day_type: DayType, count: usize) -> Vec<NaiveDate> {
    let (y, m, d) = FIRST_DAY;
    let first = NaiveDate::from_ymd_opt(y, m, d).expect("valid start date");
    (0..)
        .map(|i| first + Duration::days(i))
        .filter(|&date| day_type_of_date(date) == day_type)
        .take(count)
        .collect()
}

/// Generates a synthetic city from `spec`. Same spec, same output.
///
/// Per day, every (cell, bin, category) total is the archetype value plus
/// Gaussian noise, clipped at 0, then written as a downlink and an uplink
/// record in one 15-minute slot of the bin. POI counts per cell and
/// third-place category are Poisson draws with the archetype's intensity;
/// labels are drawn uniformly from the archetype's label pool.
pub fn generate(spec: &SynthSpec) -> Result<SynthTruth, SynthError> {
    spec.validate()?;
    let grid = spec.grid();
    let cells: Vec<CellId> = (0..spec.n_cells as u32)
        .map(|i| CellId::new(i % grid.n_cols, i / grid.n_cols))
        .collect();
    let region = CityRegion::new(grid.clone(), cells.iter().copied(), None)
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let d = spec.categories.len();

    let taxonomy = ServiceTaxonomy::from_pairs(
        (0..d)
            .flat_map(|c| (0..spec.services_per_category).map(move |j| (c, j)))
            .map(|(c, j)| (spec.service_name(c, j), spec.categories[c].clone())),
    )
    .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;

    let max_labels = |p: usize| spec.poi_profiles.iter().map(|pr| pr.labels[p]).max().unwrap_or(0);
    let third_places = ThirdPlaceTaxonomy::from_pairs(
        ThirdPlace::ALL
            .into_iter()
            .flat_map(|place| (0..max_labels(place.index())).map(move |j| (SynthSpec::poi_label(place, j), place))),
    )
    .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;

    let mut pattern = Vec::new();
    for (a, &share) in spec.archetype_shares.iter().enumerate() {
        pattern.extend(std::iter::repeat_n(a, share));
    }
    let mut assignment: Vec<usize> = (0..spec.n_cells).map(|i| pattern[i % pattern.len()]).collect();
    assignment.shuffle(&mut rng(spec.seed, STREAM_ASSIGN));

    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let mut noise_rng = rng(spec.seed, STREAM_NOISE);
    let mut slot_rng = rng(spec.seed, STREAM_SLOTS);
    let slots_per_bin = (120 / SLOT_MINUTES) as usize;
    let mut traffic = Vec::new();
    for &day_type in &spec.day_types {
        for date in dates_of(day_type, spec.days_per_type) {
            for (i, &cell) in cells.iter().enumerate() {
                let base = &spec.archetypes[assignment[i]];
                for b in 0..BINS {
                    for c in 0..d {
                        let eps = if spec.noise_sigma > 0.0 {
                            noise.sample(&mut noise_rng)
                        } else {
                            0.0
                        };
                        let v = (base[b * d + c] + eps).max(0.0);
                        let slot = slot_rng.random_range(0..slots_per_bin);
                        let service = spec.service_name(c, slot_rng.random_range(0..spec.services_per_category));
                        let down_share = slot_rng.random_range(0.6..0.9);
                        if v == 0.0 {
                            continue;
                        }
                        let minutes = (b * 120 + slot * SLOT_MINUTES as usize) as i64;
                        let timestamp = date.and_hms_opt(0, 0, 0).expect("midnight") + Duration::minutes(minutes);
                        let down = v * down_share;
                        for (direction, volume) in [(Direction::Downlink, down), (Direction::Uplink, v - down)] {
                            traffic.push(TrafficRecord {
                                cell,
                                timestamp,
                                service: service.clone(),
                                direction,
                                volume,
                            });
                        }
                    }
                }
            }
        }
    }

    let mut poi_rng = rng(spec.seed, STREAM_POIS);
    let mut pois = Vec::new();
    for (i, &cell) in cells.iter().enumerate() {
        let profile = &spec.poi_profiles[assignment[i]];
        let (x0, y0) = (
            grid.origin_x + cell.col as f64 * grid.cell_size,
            grid.origin_y + cell.row as f64 * grid.cell_size,
        );
        for place in ThirdPlace::ALL {
            let lam = profile.intensity[place.index()];
            if lam == 0.0 {
                continue;
            }
            let n = Poisson::new(lam)
                .map_err(|e| SynthError::InvalidSpec(e.to_string()))?
                .sample(&mut poi_rng) as usize;
            for _ in 0..n {
                let j = poi_rng.random_range(0..profile.labels[place.index()]);
                // keep points strictly inside the cell
                let x = x0 + grid.cell_size * (0.01 + 0.98 * poi_rng.random::<f64>());
                let y = y0 + grid.cell_size * (0.01 + 0.98 * poi_rng.random::<f64>());
                pois.push(PoiRecord {
                    x,
                    y,
                    label: SynthSpec::poi_label(place, j),
                    source_category: source_key(place),
                });
            }
        }
    }

    Ok(SynthTruth {
        region,
        taxonomy,
        third_places,
        archetypes: assignment.iter().map(|a| a + 1).collect(),
        traffic,
        pois,
        separation_ratio: spec.separation_ratio(),
    })
}

fn source_key(place: ThirdPlace) -> OsmKey {
    match place {
        ThirdPlace::CommercialServices => OsmKey::Shop,
        ThirdPlace::CommercialVenues | ThirdPlace::EatingAndDrinking => OsmKey::Amenity,
        ThirdPlace::Outdoor => OsmKey::Leisure,
        ThirdPlace::OrganisedActivities => OsmKey::Sport,
    }
}

/// File names written by [`SynthTruth::write_dir`].
pub const REGION_FILE: &str = "region.json";
pub const TRAFFIC_FILE: &str = "traffic.csv";
pub const POI_FILE: &str = "pois.csv";
pub const APP_TAXONOMY_FILE: &str = "app_taxonomy.csv";
pub const THIRD_PLACES_FILE: &str = "third_places.csv";
pub const TRUTH_FILE: &str = "truth.csv";

impl SynthTruth {
    pub fn write_truth_csv<W: Write>(&self, out: W) -> Result<(), SynthError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| SynthError::Io(e.into());
        w.write_record(["col", "row", "archetype"]).map_err(io)?;
        for (cell, a) in self.region.active_cells.iter().zip(&self.archetypes) {
            w.write_record([cell.col.to_string(), cell.row.to_string(), a.to_string()])
                .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes every input the pipeline needs plus the truth labels.
    pub fn write_dir(&self, dir: &Path) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir)?;
        let create =
            |name: &str| -> Result<BufWriter<File>, SynthError> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
        let mut region = create(REGION_FILE)?;
        serde_json::to_writer_pretty(&mut region, &self.region.to_json()).map_err(std::io::Error::from)?;
        region.write_all(b"\n")?;
        region.flush()?;
        write_traffic_csv(create(TRAFFIC_FILE)?, &self.traffic)?;
        write_poi_csv(create(POI_FILE)?, &self.pois)?;
        write_taxonomy_csv(create(APP_TAXONOMY_FILE)?, &self.taxonomy)?;
        self.third_places
            .write_csv(create(THIRD_PLACES_FILE)?)
            .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        self.write_truth_csv(create(TRUTH_FILE)?)?;
        Ok(())
    }
}

fn pairs(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index from the pair-counting contingency table.
///
/// When the expected and maximum index coincide (both partitions trivial in
/// the same way) the partitions are identical and the result is 1.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64, SynthError> {
    if a.len() != b.len() {
        return Err(SynthError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len() as u64;
    if n < 2 {
        return Ok(1.0);
    }
    let mut table = std::collections::BTreeMap::<(usize, usize), u64>::new();
    let mut rows = std::collections::BTreeMap::<usize, u64>::new();
    let mut cols = std::collections::BTreeMap::<usize, u64>::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| pairs(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| pairs(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| pairs(c)).sum();
    let expected = sum_a * sum_b / pairs(n);
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signatures::{build_signatures, BuildOptions};

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[1, 1, 2, 2], &[1, 1, 2, 2]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[1, 1, 1, 1], &[1, 1, 2, 2]).unwrap(), 0.0);
        assert_eq!(adjusted_rand_index(&[1, 1, 2, 2], &[2, 2, 1, 1]).unwrap(), 1.0);
        assert!(adjusted_rand_index(&[1, 2], &[1]).is_err());
        // pair counts by hand: index 1, row pairs 2, column pairs 3, so the
        // expected index 2·3/6 equals the observed one
        assert_eq!(adjusted_rand_index(&[1, 1, 2, 2], &[1, 1, 1, 2]).unwrap(), 0.0);
        // index 2, row pairs 6, column pairs 3: (2 − 18/15) / (4.5 − 18/15)
        let v = adjusted_rand_index(&[1, 1, 1, 2, 2, 2], &[1, 1, 2, 2, 3, 3]).unwrap();
        assert!((v - (2.0 - 18.0 / 15.0) / (4.5 - 18.0 / 15.0)).abs() < 1e-15);
    }

    #[test]
    fn noiseless_rows_equal_archetypes() {
        let spec = SynthSpec::planted(5, 10, 2, 3, 0.0);
        let truth = generate(&spec).unwrap();
        let t = build_signatures::<f64>(
            &truth.traffic,
            &truth.taxonomy,
            &truth.region,
            DayType::Weekday,
            BuildOptions { mean_per_day: true },
        )
        .unwrap();
        for (i, &a) in truth.archetypes.iter().enumerate() {
            for (x, y) in t.row(i).iter().zip(&spec.archetypes[a - 1]) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        assert!(truth.separation_ratio.is_infinite());
    }

    #[test]
    fn deterministic() {
        let spec = SynthSpec::planted(9, 30, 3, 2, 1.0);
        let (a, b) = (generate(&spec).unwrap(), generate(&spec).unwrap());
        assert_eq!(a, b);
        let other = generate(&SynthSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.traffic, other.traffic);
    }

    #[test]
    fn shares_follow_pattern() {
        let truth = generate(&SynthSpec::planted(1, 60, 3, 2, 0.5)).unwrap();
        let count = |a| truth.archetypes.iter().filter(|&&x| x == a).count();
        assert_eq!((count(1), count(2), count(3)), (30, 20, 10));
    }

    #[test]
    fn invalid_specs() {
        let mut spec = SynthSpec::planted(1, 10, 2, 2, 1.0);
        spec.archetypes.pop();
        assert!(matches!(generate(&spec), Err(SynthError::InvalidSpec(_))));
        let spec = SynthSpec::planted(1, 10, 2, 2, -1.0);
        assert!(generate(&spec).is_err());
        let spec = SynthSpec::planted(1, 1, 2, 2, 1.0);
        assert!(generate(&spec).is_err());
    }
}
