//! Feature vectors for RSS regression and the feature-matrix CSV schema.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::geodata::GeoStack;
use crate::profile::{extract_profile, summarize_profile, ProfileError};
use crate::scenario::{BinnedMeasurement, SiteTopology};

/// Scalar columns preceding the per-clutter expansions.
pub const SCALAR_FEATURES: [&str; 13] = [
    "d",
    "theta_hor",
    "phi_ver",
    "d_vert",
    "d_man",
    "los",
    "d_fd",
    "d_ld",
    "n_pen",
    "d_indoor",
    "d_outdoor",
    "c_bs",
    "c_ue",
];

/// Stand-in for the diffraction distances on line-of-sight rows.
pub const LOS_SENTINEL: f64 = -1.0;

const KEY_COLUMNS: [&str; 4] = ["bin_ix", "bin_iy", "cell_id", "rss_dbm"];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("unknown serving cell `{0}`")]
    UnknownCell(String),
    #[error("feature schema: {0}")]
    Schema(String),
    #[error("{path} line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },
    #[error("CSV error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

/// Distances and angles between a BS and a UE position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub d: f64,
    /// Absolute azimuth offset from boresight, in [0, 180].
    pub theta_hor: f64,
    pub phi_ver: f64,
    pub d_vert: f64,
    pub d_man: f64,
}

/// Compass bearing in degrees, clockwise from North (+y), in [0, 360).
pub fn bearing_deg(dx: f64, dy: f64) -> f64 {
    dx.atan2(dy).to_degrees().rem_euclid(360.0)
}

/// Smallest absolute difference between two bearings, in [0, 180].
pub fn wrap_separation(a: f64, b: f64) -> f64 {
    let diff = (a - b).rem_euclid(360.0);
    if diff > 180.0 {
        360.0 - diff
    } else {
        diff
    }
}

/// Angular and distance relations between `site` (total height `z_bs`) and a
/// UE at `(x_ue, y_ue)` with total height `z_ue`.
pub fn angular_separations(
    site: &SiteTopology,
    z_bs: f64,
    x_ue: f64,
    y_ue: f64,
    z_ue: f64,
) -> Result<Geometry, FeatureError> {
    let dx = x_ue - site.x;
    let dy = y_ue - site.y;
    let d = dx.hypot(dy);
    if d == 0.0 {
        return Err(ProfileError::Degenerate { x: x_ue, y: y_ue }.into());
    }
    let theta_ue = bearing_deg(dx, dy);
    let phi_ue = ((z_ue - z_bs) / d).atan().to_degrees();
    Ok(Geometry {
        d,
        theta_hor: wrap_separation(site.azimuth_deg, theta_ue),
        phi_ver: phi_ue - site.tilt_deg,
        d_vert: z_bs - z_ue,
        d_man: dx.abs() + dy.abs(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub d: f64,
    pub theta_hor: f64,
    pub phi_ver: f64,
    pub d_vert: f64,
    pub d_man: f64,
    pub los: bool,
    pub d_fd: f64,
    pub d_ld: f64,
    pub n_pen: usize,
    pub d_indoor: f64,
    pub d_outdoor: f64,
    pub c_bs: usize,
    pub c_ue: usize,
    pub n_pen_c: Vec<usize>,
    pub d_indoor_c: Vec<f64>,
    pub d_outdoor_c: Vec<f64>,
}

impl FeatureVector {
    pub fn width(clutter_count: usize) -> usize {
        SCALAR_FEATURES.len() + 3 * clutter_count
    }

    pub fn names(clutter_count: usize) -> Vec<String> {
        let mut names: Vec<String> = SCALAR_FEATURES.iter().map(|s| s.to_string()).collect();
        names.extend((0..clutter_count).map(|c| format!("n_pen_c{c}")));
        names.extend((0..clutter_count).map(|c| format!("d_in_c{c}")));
        names.extend((0..clutter_count).map(|c| format!("d_out_c{c}")));
        names
    }

    pub fn to_row(&self) -> Vec<f64> {
        let mut row = vec![
            self.d,
            self.theta_hor,
            self.phi_ver,
            self.d_vert,
            self.d_man,
            if self.los { 1.0 } else { 0.0 },
            self.d_fd,
            self.d_ld,
            self.n_pen as f64,
            self.d_indoor,
            self.d_outdoor,
            self.c_bs as f64,
            self.c_ue as f64,
        ];
        row.extend(self.n_pen_c.iter().map(|&n| n as f64));
        row.extend_from_slice(&self.d_indoor_c);
        row.extend_from_slice(&self.d_outdoor_c);
        row
    }
}

/// Full feature vector for a UE at `(x, y)` served by `site`.
pub fn assemble_features(
    geo: &GeoStack,
    site: &SiteTopology,
    x: f64,
    y: f64,
    h_ue: f64,
) -> Result<FeatureVector, FeatureError> {
    let profile = extract_profile(geo, site, x, y, h_ue)?;
    let g = angular_separations(site, profile.z_bs, x, y, profile.z_ue)?;
    let s = summarize_profile(&profile);
    Ok(FeatureVector {
        d: g.d,
        theta_hor: g.theta_hor,
        phi_ver: g.phi_ver,
        d_vert: g.d_vert,
        d_man: g.d_man,
        los: s.los,
        d_fd: s.d_fd.unwrap_or(LOS_SENTINEL),
        d_ld: s.d_ld.unwrap_or(LOS_SENTINEL),
        n_pen: s.n_pen,
        d_indoor: s.d_indoor,
        d_outdoor: s.d_outdoor,
        c_bs: s.c_bs,
        c_ue: s.c_ue,
        n_pen_c: s.n_pen_c,
        d_indoor_c: s.d_indoor_c,
        d_outdoor_c: s.d_outdoor_c,
    })
}

/// Identifies the measurement a matrix row was built from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowKey {
    pub bin_ix: i64,
    pub bin_iy: i64,
    pub cell_id: String,
}

/// Row-major feature table with regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub data: Vec<f64>,
    pub targets: Vec<f64>,
    pub keys: Vec<RowKey>,
    /// Columns holding integer category codes.
    pub categorical: Vec<bool>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>) -> Self {
        let categorical = names
            .iter()
            .map(|n| matches!(n.as_str(), "los" | "c_bs" | "c_ue"))
            .collect();
        Self {
            names,
            data: Vec::new(),
            targets: Vec::new(),
            keys: Vec::new(),
            categorical,
        }
    }

    /// Builds a matrix from raw rows with placeholder keys.
    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>], targets: Vec<f64>) -> Self {
        let mut m = Self::new(names);
        for (i, (r, &t)) in rows.iter().zip(&targets).enumerate() {
            let key = RowKey {
                bin_ix: i as i64,
                bin_iy: 0,
                cell_id: String::new(),
            };
            m.push(key, r, t);
        }
        m
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_cols();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n_cols().max(1)).take(self.n_rows())
    }

    pub fn push(&mut self, key: RowKey, row: &[f64], target: f64) {
        assert_eq!(row.len(), self.n_cols(), "row width mismatch");
        self.data.extend_from_slice(row);
        self.targets.push(target);
        self.keys.push(key);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let mut m = FeatureMatrix {
            names: self.names.clone(),
            data: Vec::with_capacity(idx.len() * self.n_cols()),
            targets: Vec::with_capacity(idx.len()),
            keys: Vec::with_capacity(idx.len()),
            categorical: self.categorical.clone(),
        };
        for &i in idx {
            m.data.extend_from_slice(self.row(i));
            m.targets.push(self.targets[i]);
            m.keys.push(self.keys[i].clone());
        }
        m
    }

    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        let mut m = FeatureMatrix {
            names: cols.iter().map(|&j| self.names[j].clone()).collect(),
            data: Vec::with_capacity(self.n_rows() * cols.len()),
            targets: self.targets.clone(),
            keys: self.keys.clone(),
            categorical: cols.iter().map(|&j| self.categorical[j]).collect(),
        };
        for r in self.rows() {
            m.data.extend(cols.iter().map(|&j| r[j]));
        }
        m
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        let path = path.as_ref();
        let err = |source| FeatureError::Csv {
            path: path.display().to_string(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        let header = KEY_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain(self.names.iter().cloned());
        w.write_record(header).map_err(err)?;
        for i in 0..self.n_rows() {
            let k = &self.keys[i];
            let rec = [
                k.bin_ix.to_string(),
                k.bin_iy.to_string(),
                k.cell_id.clone(),
                self.targets[i].to_string(),
            ]
            .into_iter()
            .chain(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(rec).map_err(err)?;
        }
        w.flush().map_err(|e| err(e.into()))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let path = path.as_ref();
        let p = path.display().to_string();
        let err = |source| FeatureError::Csv {
            path: p.clone(),
            source,
        };
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(err)?;
        let headers = r.headers().map_err(err)?.clone();
        for (i, want) in KEY_COLUMNS.iter().enumerate() {
            if headers.get(i) != Some(*want) {
                return Err(FeatureError::Schema(format!(
                    "column {i} must be `{want}`, found `{}`",
                    headers.get(i).unwrap_or("")
                )));
            }
        }
        let names: Vec<String> = headers.iter().skip(KEY_COLUMNS.len()).map(String::from).collect();
        if names.is_empty() {
            return Err(FeatureError::Schema("no feature columns".into()));
        }
        let mut m = FeatureMatrix::new(names);
        let mut row = Vec::with_capacity(m.n_cols());
        for rec in r.records() {
            let rec = rec.map_err(err)?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let parse_err = |message: String| FeatureError::Parse {
                path: p.clone(),
                line,
                message,
            };
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| parse_err(format!("`{s}` is not a number")))
            };
            let key = RowKey {
                bin_ix: rec[0]
                    .parse()
                    .map_err(|_| parse_err(format!("bad bin_ix `{}`", &rec[0])))?,
                bin_iy: rec[1]
                    .parse()
                    .map_err(|_| parse_err(format!("bad bin_iy `{}`", &rec[1])))?,
                cell_id: rec[2].to_string(),
            };
            let target = num(&rec[3])?;
            row.clear();
            for s in rec.iter().skip(KEY_COLUMNS.len()) {
                row.push(num(s)?);
            }
            m.push(key, &row, target);
        }
        Ok(m)
    }
}

/// One feature row per binned measurement, evaluated at the bin center and
/// ordered by `(bin_ix, bin_iy, cell_id)`.
pub fn build_feature_matrix(
    geo: &GeoStack,
    sites: &[SiteTopology],
    binned: &[BinnedMeasurement],
    h_ue: f64,
) -> Result<FeatureMatrix, FeatureError> {
    let by_id: HashMap<&str, &SiteTopology> = sites.iter().map(|s| (s.cell_id.as_str(), s)).collect();
    let mut order: Vec<&BinnedMeasurement> = binned.iter().collect();
    order.sort_by(|a, b| {
        (a.bin_ix, a.bin_iy, &a.cell_id).cmp(&(b.bin_ix, b.bin_iy, &b.cell_id))
    });
    let mut m = FeatureMatrix::new(FeatureVector::names(geo.clutter_count));
    for b in order {
        let site = by_id
            .get(b.cell_id.as_str())
            .ok_or_else(|| FeatureError::UnknownCell(b.cell_id.clone()))?;
        let (x, y) = b.center();
        let f = assemble_features(geo, site, x, y, h_ue)?;
        let key = RowKey {
            bin_ix: b.bin_ix,
            bin_iy: b.bin_iy,
            cell_id: b.cell_id.clone(),
        };
        m.push(key, &f.to_row(), b.mean_rss);
    }
    Ok(m)
}
