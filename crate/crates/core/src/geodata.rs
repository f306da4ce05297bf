//! Georeferenced rasters describing the propagation environment.
//!
//! Three co-registered grids make up a [`GeoStack`]: ground elevation (DTM),
//! building height above ground (DHM) and land-use class (DLU). Grids are
//! stored row-major with row 0 as the northernmost row, matching the ESRI
//! ASCII grid layout used for persistence.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("raster format error: {0}")]
    Format(String),
    #[error("raster header is missing key `{0}`")]
    MissingKey(&'static str),
    #[error("raster truncated: expected {expected} values, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("invalid raster: {0}")]
    Invalid(String),
    #[error("point ({x}, {y}) lies outside the raster")]
    OutOfBounds { x: f64, y: f64 },
    #[error("no data at ({x}, {y})")]
    NoData { x: f64, y: f64 },
    #[error("raster stack mismatch: {0}")]
    Mismatch(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A single-band raster in a planar metric frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub ncols: usize,
    pub nrows: usize,
    /// Easting of the lower-left corner.
    pub xll: f64,
    /// Northing of the lower-left corner.
    pub yll: f64,
    pub cellsize: f64,
    pub nodata: f64,
    /// Row-major, row 0 is the northernmost row.
    pub values: Vec<f64>,
}

impl RasterGrid {
    pub fn new(
        ncols: usize,
        nrows: usize,
        xll: f64,
        yll: f64,
        cellsize: f64,
        nodata: f64,
        values: Vec<f64>,
    ) -> Result<Self, GeoError> {
        let grid = Self {
            ncols,
            nrows,
            xll,
            yll,
            cellsize,
            nodata,
            values,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// A grid with every cell set to `fill`.
    pub fn filled(
        ncols: usize,
        nrows: usize,
        xll: f64,
        yll: f64,
        cellsize: f64,
        fill: f64,
    ) -> Result<Self, GeoError> {
        Self::new(
            ncols,
            nrows,
            xll,
            yll,
            cellsize,
            -9999.0,
            vec![fill; ncols * nrows],
        )
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if self.ncols == 0 || self.nrows == 0 {
            return Err(GeoError::Invalid("ncols and nrows must be at least 1".into()));
        }
        if !(self.cellsize > 0.0 && self.cellsize.is_finite()) {
            return Err(GeoError::Invalid(format!(
                "cellsize must be positive, got {}",
                self.cellsize
            )));
        }
        if !self.xll.is_finite() || !self.yll.is_finite() {
            return Err(GeoError::Invalid("corner coordinates must be finite".into()));
        }
        let expected = self.ncols * self.nrows;
        if self.values.len() != expected {
            return Err(GeoError::Truncated {
                expected,
                actual: self.values.len(),
            });
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.ncols as f64 * self.cellsize
    }

    pub fn height(&self) -> f64 {
        self.nrows as f64 * self.cellsize
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.xll
            && y >= self.yll
            && x <= self.xll + self.width()
            && y <= self.yll + self.height()
    }

    /// `(col, row)` of the cell containing `(x, y)`, with row counted from the top.
    ///
    /// Points on the east or north outer edge map to the last column or the
    /// first row.
    pub fn cell_index(&self, x: f64, y: f64) -> Result<(usize, usize), GeoError> {
        if !x.is_finite() || !y.is_finite() || !self.contains(x, y) {
            return Err(GeoError::OutOfBounds { x, y });
        }
        let col = (((x - self.xll) / self.cellsize).floor() as usize).min(self.ncols - 1);
        let from_bottom = (((y - self.yll) / self.cellsize).floor() as usize).min(self.nrows - 1);
        Ok((col, self.nrows - 1 - from_bottom))
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.ncols + col]
    }

    pub fn set(&mut self, col: usize, row: usize, value: f64) {
        self.values[row * self.ncols + col] = value;
    }

    pub fn is_nodata(&self, v: f64) -> bool {
        v == self.nodata || v.is_nan()
    }

    /// Nearest-cell lookup of the value at `(x, y)`.
    pub fn value_at(&self, x: f64, y: f64) -> Result<f64, GeoError> {
        let (col, row) = self.cell_index(x, y)?;
        let v = self.get(col, row);
        if self.is_nodata(v) {
            return Err(GeoError::NoData { x, y });
        }
        Ok(v)
    }

    /// Center of the cell at `(col, row)`.
    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        let x = self.xll + (col as f64 + 0.5) * self.cellsize;
        let y = self.yll + ((self.nrows - 1 - row) as f64 + 0.5) * self.cellsize;
        (x, y)
    }

    fn same_frame(&self, other: &RasterGrid) -> bool {
        self.ncols == other.ncols
            && self.nrows == other.nrows
            && self.xll == other.xll
            && self.yll == other.yll
            && self.cellsize == other.cellsize
    }

    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 6 + 128);
        let _ = writeln!(out, "ncols {}", self.ncols);
        let _ = writeln!(out, "nrows {}", self.nrows);
        let _ = writeln!(out, "xllcorner {}", self.xll);
        let _ = writeln!(out, "yllcorner {}", self.yll);
        let _ = writeln!(out, "cellsize {}", self.cellsize);
        let _ = writeln!(out, "NODATA_value {}", self.nodata);
        for row in self.values.chunks(self.ncols) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                // `Display` for f64 prints the shortest string that parses back exactly.
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_ascii(text: &str) -> Result<Self, GeoError> {
        let mut ncols = None;
        let mut nrows = None;
        let mut xll = None;
        let mut yll = None;
        let mut cellsize = None;
        let mut nodata = None;

        let mut lines = text.lines().peekable();
        while let Some(line) = lines.peek() {
            let trimmed = line.trim();
            if trimmed.is_empty() {
                lines.next();
                continue;
            }
            let mut parts = trimmed.split_whitespace();
            let key = parts.next().unwrap_or_default();
            if !key.starts_with(|c: char| c.is_ascii_alphabetic()) {
                break;
            }
            let raw = parts
                .next()
                .ok_or_else(|| GeoError::Format(format!("header key `{key}` has no value")))?;
            let num = |name: &str| -> Result<f64, GeoError> {
                raw.parse::<f64>()
                    .map_err(|_| GeoError::Format(format!("bad value `{raw}` for `{name}`")))
            };
            match key.to_ascii_lowercase().as_str() {
                "ncols" => ncols = Some(parse_count(raw, "ncols")?),
                "nrows" => nrows = Some(parse_count(raw, "nrows")?),
                "xllcorner" => xll = Some(num("xllcorner")?),
                "yllcorner" => yll = Some(num("yllcorner")?),
                "cellsize" => cellsize = Some(num("cellsize")?),
                "nodata_value" => nodata = Some(num("NODATA_value")?),
                other => {
                    return Err(GeoError::Format(format!("unexpected header key `{other}`")))
                }
            }
            lines.next();
        }

        let ncols = ncols.ok_or(GeoError::MissingKey("ncols"))?;
        let nrows = nrows.ok_or(GeoError::MissingKey("nrows"))?;
        let xll = xll.ok_or(GeoError::MissingKey("xllcorner"))?;
        let yll = yll.ok_or(GeoError::MissingKey("yllcorner"))?;
        let cellsize = cellsize.ok_or(GeoError::MissingKey("cellsize"))?;
        let nodata = nodata.unwrap_or(-9999.0);

        let expected = ncols * nrows;
        let mut values = Vec::with_capacity(expected);
        for line in lines {
            for tok in line.split_whitespace() {
                let v = tok
                    .parse::<f64>()
                    .map_err(|_| GeoError::Format(format!("bad cell value `{tok}`")))?;
                values.push(v);
            }
        }
        if values.len() != expected {
            return Err(GeoError::Truncated {
                expected,
                actual: values.len(),
            });
        }
        Self::new(ncols, nrows, xll, yll, cellsize, nodata, values)
    }
}

fn parse_count(raw: &str, name: &str) -> Result<usize, GeoError> {
    raw.parse::<usize>()
        .map_err(|_| GeoError::Format(format!("bad value `{raw}` for `{name}`")))
}

/// Reads an ESRI ASCII grid.
pub fn load_raster(path: impl AsRef<Path>) -> Result<RasterGrid, GeoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GeoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    RasterGrid::from_ascii(&text)
}

/// Writes an ESRI ASCII grid with round-trip exact numbers.
pub fn write_raster(grid: &RasterGrid, path: impl AsRef<Path>) -> Result<(), GeoError> {
    grid.validate()?;
    let path = path.as_ref();
    fs::write(path, grid.to_ascii()).map_err(|source| GeoError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Co-registered DTM, DHM and DLU rasters.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoStack {
    pub dtm: RasterGrid,
    pub dhm: RasterGrid,
    pub dlu: RasterGrid,
    pub clutter_count: usize,
}

/// One nearest-cell sample from all three layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSample {
    pub ground: f64,
    pub building: f64,
    pub clutter: usize,
}

impl GeoStack {
    pub fn new(
        dtm: RasterGrid,
        dhm: RasterGrid,
        dlu: RasterGrid,
        clutter_count: usize,
    ) -> Result<Self, GeoError> {
        for (name, g) in [("dtm", &dtm), ("dhm", &dhm), ("dlu", &dlu)] {
            g.validate()
                .map_err(|e| GeoError::Mismatch(format!("{name}: {e}")))?;
        }
        if !dtm.same_frame(&dhm) {
            return Err(GeoError::Mismatch("dhm frame differs from dtm".into()));
        }
        if !dtm.same_frame(&dlu) {
            return Err(GeoError::Mismatch("dlu frame differs from dtm".into()));
        }
        if clutter_count == 0 {
            return Err(GeoError::Invalid("clutter_count must be at least 1".into()));
        }
        if let Some(v) = dhm.values.iter().find(|&&v| !dhm.is_nodata(v) && v < 0.0) {
            return Err(GeoError::Invalid(format!("negative building height {v}")));
        }
        if let Some(v) = dlu.values.iter().find(|&&v| {
            !dlu.is_nodata(v) && (v.fract() != 0.0 || v < 0.0 || v >= clutter_count as f64)
        }) {
            return Err(GeoError::Invalid(format!(
                "land-use value {v} is not a class in [0, {clutter_count})"
            )));
        }
        Ok(Self {
            dtm,
            dhm,
            dlu,
            clutter_count,
        })
    }

    pub fn frame(&self) -> &RasterGrid {
        &self.dtm
    }

    pub fn cellsize(&self) -> f64 {
        self.dtm.cellsize
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.dtm.contains(x, y)
    }

    /// Samples all three layers at the cell containing `(x, y)`.
    pub fn sample(&self, x: f64, y: f64) -> Result<CellSample, GeoError> {
        let (col, row) = self.dtm.cell_index(x, y)?;
        let ground = self.dtm.get(col, row);
        let building = self.dhm.get(col, row);
        let clutter = self.dlu.get(col, row);
        if self.dtm.is_nodata(ground) || self.dhm.is_nodata(building) || self.dlu.is_nodata(clutter)
        {
            return Err(GeoError::NoData { x, y });
        }
        Ok(CellSample {
            ground,
            building,
            clutter: clutter as usize,
        })
    }

    /// Ground plus building height at `(x, y)`.
    pub fn surface_height(&self, x: f64, y: f64) -> Result<f64, GeoError> {
        let s = self.sample(x, y)?;
        Ok(s.ground + s.building)
    }

    pub fn load_dir(dir: impl AsRef<Path>, clutter_count: usize) -> Result<Self, GeoError> {
        let dir = dir.as_ref();
        Self::new(
            load_raster(dir.join("dtm.asc"))?,
            load_raster(dir.join("dhm.asc"))?,
            load_raster(dir.join("dlu.asc"))?,
            clutter_count,
        )
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), GeoError> {
        let dir = dir.as_ref();
        write_raster(&self.dtm, dir.join("dtm.asc"))?;
        write_raster(&self.dhm, dir.join("dhm.asc"))?;
        write_raster(&self.dlu, dir.join("dlu.asc"))
    }
}
