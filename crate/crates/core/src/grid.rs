//! Square tiling of a planar (metric) frame into fixed-size cells.
//!
//! Cells are half-open squares `[x0, x0 + s) × [y0, y0 + s)`, so a point on a
//! shared edge belongs to the cell on its upper/right side.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub const DEFAULT_CELL_SIZE: f64 = 100.0;

/// Relative tolerance between active-cell area and a declared total area.
pub const AREA_TOLERANCE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("point ({x}, {y}) lies outside grid '{region}'")]
    PointOutOfBounds { x: f64, y: f64, region: String },
    #[error("cell {cell} lies outside grid '{region}' ({n_cols}x{n_rows})")]
    CellOutOfBounds {
        cell: CellId,
        region: String,
        n_cols: u32,
        n_rows: u32,
    },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("malformed region file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub region_name: String,
    pub origin_x: f64,
    pub origin_y: f64,
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    pub n_cols: u32,
    pub n_rows: u32,
}

fn default_cell_size() -> f64 {
    DEFAULT_CELL_SIZE
}

/// Column/row index of a cell. Ordered row-major (row first, then column).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub col: u32,
    pub row: u32,
}

impl CellId {
    pub fn new(col: u32, row: u32) -> Self {
        Self { col, row }
    }
}

impl Ord for CellId {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.row, self.col).cmp(&(other.row, other.col))
    }
}

impl PartialOrd for CellId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.col, self.row)
    }
}

impl GridSpec {
    pub fn new(
        region_name: impl Into<String>,
        origin: (f64, f64),
        cell_size: f64,
        n_cols: u32,
        n_rows: u32,
    ) -> Result<Self, GridError> {
        let grid = Self {
            region_name: region_name.into(),
            origin_x: origin.0,
            origin_y: origin.1,
            cell_size,
            n_cols,
            n_rows,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(GridError::InvalidGrid(format!(
                "cell_size must be positive, got {}",
                self.cell_size
            )));
        }
        if !(self.origin_x.is_finite() && self.origin_y.is_finite()) {
            return Err(GridError::InvalidGrid("origin must be finite".into()));
        }
        if self.n_cols == 0 || self.n_rows == 0 {
            return Err(GridError::InvalidGrid(format!(
                "grid needs at least one column and row, got {}x{}",
                self.n_cols, self.n_rows
            )));
        }
        Ok(())
    }

    pub fn contains(&self, cell: CellId) -> bool {
        cell.col < self.n_cols && cell.row < self.n_rows
    }

    pub fn cell_count(&self) -> u64 {
        u64::from(self.n_cols) * u64::from(self.n_rows)
    }

    /// Area of one cell in km².
    pub fn cell_area_km2(&self) -> f64 {
        self.cell_size * self.cell_size / 1e6
    }

    fn check_cell(&self, cell: CellId) -> Result<(), GridError> {
        if self.contains(cell) {
            Ok(())
        } else {
            Err(GridError::CellOutOfBounds {
                cell,
                region: self.region_name.clone(),
                n_cols: self.n_cols,
                n_rows: self.n_rows,
            })
        }
    }

    /// Cell whose half-open square contains `(x, y)`.
    pub fn point_to_cell(&self, x: f64, y: f64) -> Result<CellId, GridError> {
        let out = || GridError::PointOutOfBounds {
            x,
            y,
            region: self.region_name.clone(),
        };
        let cx = ((x - self.origin_x) / self.cell_size).floor();
        let cy = ((y - self.origin_y) / self.cell_size).floor();
        // NaN fails both comparisons
        if !(cx >= 0.0 && cy >= 0.0) || cx >= f64::from(self.n_cols) || cy >= f64::from(self.n_rows) {
            return Err(out());
        }
        Ok(CellId::new(cx as u32, cy as u32))
    }

    /// Closed counter-clockwise ring of the cell's square; first point repeated last.
    pub fn cell_polygon(&self, cell: CellId) -> Result<[[f64; 2]; 5], GridError> {
        self.check_cell(cell)?;
        let x0 = self.origin_x + f64::from(cell.col) * self.cell_size;
        let y0 = self.origin_y + f64::from(cell.row) * self.cell_size;
        let x1 = x0 + self.cell_size;
        let y1 = y0 + self.cell_size;
        Ok([[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]])
    }

    pub fn cell_center(&self, cell: CellId) -> Result<(f64, f64), GridError> {
        self.check_cell(cell)?;
        let half = self.cell_size / 2.0;
        Ok((
            self.origin_x + f64::from(cell.col) * self.cell_size + half,
            self.origin_y + f64::from(cell.row) * self.cell_size + half,
        ))
    }
}

/// A city: its grid plus the cells that carry data.
#[derive(Debug, Clone, PartialEq)]
pub struct CityRegion {
    pub grid: GridSpec,
    pub active_cells: BTreeSet<CellId>,
    pub declared_area_km2: Option<f64>,
}

/// Outcome of comparing the active-cell area against the declared total area.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaCheck {
    pub active_cells: usize,
    pub computed_area_km2: f64,
    pub declared_area_km2: Option<f64>,
    pub relative_error: Option<f64>,
    pub pass: bool,
}

impl CityRegion {
    pub fn new(
        grid: GridSpec,
        active_cells: impl IntoIterator<Item = CellId>,
        declared_area_km2: Option<f64>,
    ) -> Result<Self, GridError> {
        grid.validate()?;
        let active_cells: BTreeSet<CellId> = active_cells.into_iter().collect();
        for &cell in &active_cells {
            grid.check_cell(cell)?;
        }
        Ok(Self {
            grid,
            active_cells,
            declared_area_km2,
        })
    }

    /// Region in which every grid cell is active.
    pub fn full(grid: GridSpec, declared_area_km2: Option<f64>) -> Result<Self, GridError> {
        let cells: Vec<CellId> = (0..grid.n_rows)
            .flat_map(|row| (0..grid.n_cols).map(move |col| CellId::new(col, row)))
            .collect();
        Self::new(grid, cells, declared_area_km2)
    }

    pub fn name(&self) -> &str {
        &self.grid.region_name
    }

    pub fn cells(&self) -> Vec<CellId> {
        self.active_cells.iter().copied().collect()
    }

    pub fn is_active(&self, cell: CellId) -> bool {
        self.active_cells.contains(&cell)
    }

    pub fn check_consistency(&self) -> AreaCheck {
        check_region_consistency(self)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, GridError> {
        let file: RegionFile = serde_json::from_reader(reader)?;
        file.into_region()
    }

    pub fn from_json_str(s: &str) -> Result<Self, GridError> {
        let file: RegionFile = serde_json::from_str(s)?;
        file.into_region()
    }

    /// Serializes to the region file format, run-length encoding each row.
    pub fn to_json(&self) -> Value {
        serde_json::to_value(RegionFile::from_region(self)).expect("region serializes")
    }
}

/// Compares `|active_cells| × cell area` with the declared area; passes when the
/// relative error is at most 1% (or when no area is declared).
pub fn check_region_consistency(region: &CityRegion) -> AreaCheck {
    let active = region.active_cells.len();
    let computed = active as f64 * region.grid.cell_area_km2();
    let relative_error = region
        .declared_area_km2
        .map(|declared| (computed - declared).abs() / declared.abs());
    let pass = relative_error.is_none_or(|e| e <= AREA_TOLERANCE);
    AreaCheck {
        active_cells: active,
        computed_area_km2: computed,
        declared_area_km2: region.declared_area_km2,
        relative_error,
        pass,
    }
}

/// A horizontal run of active cells: `len` cells starting at `col` in `row`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub row: u32,
    pub col: u32,
    pub len: u32,
}

/// On-disk region description. When neither `cells` nor `runs` is given every
/// grid cell is active.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionFile {
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_area_km2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<[u32; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<Vec<CellRun>>,
}

impl RegionFile {
    pub fn into_region(self) -> Result<CityRegion, GridError> {
        if self.cells.is_none() && self.runs.is_none() {
            return CityRegion::full(self.grid, self.declared_area_km2);
        }
        let mut active = Vec::new();
        for [col, row] in self.cells.unwrap_or_default() {
            active.push(CellId::new(col, row));
        }
        for run in self.runs.unwrap_or_default() {
            let end = run
                .col
                .checked_add(run.len)
                .ok_or_else(|| GridError::InvalidGrid(format!("run overflows at row {}", run.row)))?;
            active.extend((run.col..end).map(|col| CellId::new(col, run.row)));
        }
        CityRegion::new(self.grid, active, self.declared_area_km2)
    }

    pub fn from_region(region: &CityRegion) -> Self {
        let mut runs: Vec<CellRun> = Vec::new();
        for cell in &region.active_cells {
            match runs.last_mut() {
                Some(run) if run.row == cell.row && run.col + run.len == cell.col => run.len += 1,
                _ => runs.push(CellRun {
                    row: cell.row,
                    col: cell.col,
                    len: 1,
                }),
            }
        }
        Self {
            grid: region.grid.clone(),
            declared_area_km2: region.declared_area_km2,
            cells: None,
            runs: Some(runs),
        }
    }
}

/// GeoJSON FeatureCollection of cell squares with one integer property each.
///
/// Coordinates are emitted in the grid's planar frame.
pub fn cells_geojson(grid: &GridSpec, cells: &[(CellId, usize)], property: &str) -> Result<Value, GridError> {
    let features = cells
        .iter()
        .map(|&(cell, value)| {
            let ring = grid.cell_polygon(cell)?;
            Ok(json!({
                "type": "Feature",
                "geometry": { "type": "Polygon", "coordinates": [ring] },
                "properties": { "col": cell.col, "row": cell.row, property: value },
            }))
        })
        .collect::<Result<Vec<_>, GridError>>()?;
    Ok(json!({
        "type": "FeatureCollection",
        "name": grid.region_name,
        "features": features,
    }))
}
