//! TOML pipeline configuration.
//!
//! ```toml
//! seed = 7
//! levels = ["local", "global"]
//! day_types = ["weekday", "weekend"]
//! app_taxonomy = "app_taxonomy.csv"
//! third_places = "third_places.csv"
//!
//! [[region]]
//! region = "paris.json"
//! traffic = "paris_traffic.csv"
//! pois = "paris_pois.csv"
//! ```
//!
//! Relative paths are taken from the directory holding the config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use vibrancy_core::signatures::{DayType, DEFAULT_RISK_CAP};

use crate::error::{CliError, Result, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Local,
    Global,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Local => "local",
            Level::Global => "global",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "local" => Ok(Level::Local),
            "global" => Ok(Level::Global),
            other => Err(format!("unknown level `{other}` (expected local or global)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionInput {
    pub region: PathBuf,
    pub traffic: PathBuf,
    pub pois: PathBuf,
    /// Optional `col,row,archetype` file; when present the run scores
    /// cluster recovery against it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
}

fn default_restarts() -> usize {
    10
}
fn default_lambda() -> f64 {
    1.0
}
fn default_k_min() -> usize {
    3
}
fn default_k_max() -> usize {
    10
}
fn default_cap() -> f64 {
    DEFAULT_RISK_CAP
}
fn default_levels() -> Vec<Level> {
    vec![Level::Local]
}
fn default_day_types() -> Vec<DayType> {
    DayType::ALL.to_vec()
}
fn default_min_label_count() -> usize {
    vibrancy_core::features::DEFAULT_MIN_LABEL_COUNT
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_k_min")]
    pub k_min: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_cap")]
    pub risk_cap: f64,
    #[serde(default = "default_levels")]
    pub levels: Vec<Level>,
    #[serde(default = "default_day_types")]
    pub day_types: Vec<DayType>,
    #[serde(default)]
    pub drop_silent_cells: bool,
    #[serde(default)]
    pub mean_per_day: bool,
    /// Fraction of cells held out for scoring; metrics use the training
    /// cells when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<f64>,
    #[serde(default = "default_min_label_count")]
    pub min_label_count: usize,
    /// z-score covariates before fitting.
    #[serde(default = "yes")]
    pub standardize: bool,
    pub app_taxonomy: PathBuf,
    pub third_places: PathBuf,
    #[serde(rename = "region")]
    pub regions: Vec<RegionInput>,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub k_min: Option<usize>,
    pub k_max: Option<usize>,
    pub restarts: Option<usize>,
    pub levels: Vec<Level>,
    pub day_types: Vec<DayType>,
    pub drop_silent_cells: bool,
    pub mean_per_day: bool,
    pub holdout: Option<f64>,
}

impl Overrides {
    pub fn is_empty(&self) -> bool {
        self.seed.is_none()
            && self.lambda.is_none()
            && self.k_min.is_none()
            && self.k_max.is_none()
            && self.restarts.is_none()
            && self.levels.is_empty()
            && self.day_types.is_empty()
            && !self.drop_silent_cells
            && !self.mean_per_day
            && self.holdout.is_none()
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(Stage::Config, path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Makes every path absolute, relative ones against `base`.
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            let joined = base.join(&*p);
            *p = std::path::absolute(&joined).unwrap_or(joined);
        };
        fix(&mut self.app_taxonomy);
        fix(&mut self.third_places);
        for r in &mut self.regions {
            fix(&mut r.region);
            fix(&mut r.traffic);
            fix(&mut r.pois);
            if let Some(t) = r.truth.as_mut() {
                fix(t);
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.lambda {
            self.lambda = v;
        }
        if let Some(v) = o.k_min {
            self.k_min = v;
        }
        if let Some(v) = o.k_max {
            self.k_max = v;
        }
        if let Some(v) = o.restarts {
            self.restarts = v;
        }
        if !o.levels.is_empty() {
            self.levels = o.levels.clone();
        }
        if !o.day_types.is_empty() {
            self.day_types = o.day_types.clone();
        }
        self.drop_silent_cells |= o.drop_silent_cells;
        self.mean_per_day |= o.mean_per_day;
        if o.holdout.is_some() {
            self.holdout = o.holdout;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.k_min < 2 || self.k_min > self.k_max {
            return usage(format!("invalid k range [{}, {}]", self.k_min, self.k_max));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return usage(format!("lambda must be finite and ≥ 0, got {}", self.lambda));
        }
        if !(self.risk_cap > 0.0 && self.risk_cap.is_finite()) {
            return usage(format!("risk_cap must be positive, got {}", self.risk_cap));
        }
        if let Some(h) = self.holdout {
            if !(h > 0.0 && h < 1.0) {
                return usage(format!("holdout must be in (0, 1), got {h}"));
            }
        }
        if self.restarts == 0 {
            return usage("restarts must be at least 1".into());
        }
        if self.regions.is_empty() || self.levels.is_empty() || self.day_types.is_empty() {
            return usage("config needs at least one region, level and day type".into());
        }
        Ok(())
    }

    /// Every input file, in a fixed order.
    pub fn input_files(&self) -> Vec<&Path> {
        let mut files = vec![self.app_taxonomy.as_path(), self.third_places.as_path()];
        for r in &self.regions {
            files.extend([r.region.as_path(), r.traffic.as_path(), r.pois.as_path()]);
            if let Some(t) = &r.truth {
                files.push(t);
            }
        }
        files
    }

    /// Fails with a data error naming the first missing input.
    pub fn check_inputs_exist(&self) -> Result<()> {
        for f in self.input_files() {
            if !f.is_file() {
                let stage = if f == self.app_taxonomy || f == self.third_places {
                    Stage::Config
                } else {
                    Stage::Ingest
                };
                return Err(CliError::data(stage, format!("missing input file {}", f.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
app_taxonomy = "tax.csv"
third_places = "tp.csv"

[[region]]
region = "r.json"
traffic = "t.csv"
pois = "p.csv"
"#;

    #[test]
    fn defaults_and_resolution() {
        let cfg = PipelineConfig::from_toml_str(MINIMAL, Path::new("/data/run")).unwrap();
        assert_eq!((cfg.k_min, cfg.k_max, cfg.restarts), (3, 10, 10));
        assert_eq!(cfg.lambda, 1.0);
        assert_eq!(cfg.levels, vec![Level::Local]);
        assert_eq!(cfg.day_types, vec![DayType::Weekday, DayType::Weekend]);
        assert!(cfg.standardize && !cfg.drop_silent_cells && !cfg.mean_per_day);
        assert_eq!(cfg.regions[0].traffic, Path::new("/data/run/t.csv"));
        cfg.validate().unwrap();
    }

    #[test]
    fn overrides_and_validation() {
        let mut cfg = PipelineConfig::from_toml_str(MINIMAL, Path::new("/x")).unwrap();
        cfg.apply(&Overrides {
            k_min: Some(4),
            k_max: Some(3),
            ..Default::default()
        });
        assert!(matches!(cfg.validate(), Err(CliError::Usage(_))));
        cfg.apply(&Overrides {
            k_max: Some(6),
            levels: vec![Level::Global],
            ..Default::default()
        });
        cfg.validate().unwrap();
        assert_eq!(cfg.levels, vec![Level::Global]);
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = PipelineConfig::from_toml_str(MINIMAL, Path::new("/x")).unwrap();
        let back = PipelineConfig::from_toml_str(&cfg.to_toml(), Path::new("/elsewhere")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("lamda = 2.0\n{MINIMAL}");
        assert!(PipelineConfig::from_toml_str(&text, Path::new("/x")).is_err());
    }

    #[test]
    fn shipped_example_parses() {
        let cfg =
            PipelineConfig::from_toml_str(include_str!("../../../config/example.toml"), Path::new("/cfg")).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.levels, [Level::Local, Level::Global]);
        assert_eq!(cfg.regions.len(), 2);
        assert_eq!(cfg.regions[0].traffic, Path::new("/cfg/../data/paris/traffic.csv"));
    }
}
