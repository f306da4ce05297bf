//! Site topology and UE trace ingestion, cleaning, spatial gridding, and the
//! seeded synthetic city used as a stand-in for measured drive-test data.
//!
//! The synthetic ground truth ([`oracle_rss`]) is a parametric link budget
//! evaluated over the same latent geometry the feature extractor sees, so the
//! regression task is well-posed without a ray tracer.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{assemble_features, FeatureError, FeatureVector};
use crate::geodata::{GeoStack, RasterGrid};

pub const DEFAULT_UE_HEIGHT: f64 = 1.5;
pub const DEFAULT_BIN_WIDTH: f64 = 10.0;

/// Land-use classes reserved by the generator; classes from
/// [`FIRST_BUILDING_CLASS`] upward are building types.
pub const CLASS_STREET: usize = 0;
pub const CLASS_PARK: usize = 1;
pub const CLASS_WATER: usize = 2;
pub const FIRST_BUILDING_CLASS: usize = 3;

const SITE_COLUMNS: [&str; 9] = [
    "cell_id",
    "x",
    "y",
    "h_bs",
    "azimuth_deg",
    "tilt_deg",
    "tx_power_dbm",
    "freq_mhz",
    "antenna",
];
const TRACE_COLUMNS: [&str; 5] = ["timestamp", "x", "y", "cell_id", "rss_dbm"];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("missing column `{column}` in {file}")]
    Schema { file: String, column: String },
    #[error("{file} line {line}: {message}")]
    Parse {
        file: String,
        line: u64,
        message: String,
    },
    #[error("invalid site `{id}`: {message}")]
    InvalidSite { id: String, message: String },
    #[error("scenario config: {0}")]
    Config(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

/// One BS sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteTopology {
    pub cell_id: String,
    pub x: f64,
    pub y: f64,
    /// Antenna height above ground and building.
    pub h_bs: f64,
    /// Boresight bearing clockwise from North, in [0, 360).
    pub azimuth_deg: f64,
    /// Downtilt, positive below horizontal.
    pub tilt_deg: f64,
    pub tx_power_dbm: f64,
    pub freq_mhz: f64,
    pub antenna: String,
}

impl SiteTopology {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |message: &str| ScenarioError::InvalidSite {
            id: self.cell_id.clone(),
            message: message.to_string(),
        };
        if !(self.h_bs > 0.0) {
            return Err(bad("h_bs must be positive"));
        }
        if !(self.freq_mhz > 0.0) {
            return Err(bad("frequency must be positive"));
        }
        if !(0.0..360.0).contains(&self.azimuth_deg) {
            return Err(bad("azimuth must lie in [0, 360)"));
        }
        if ![self.x, self.y, self.tilt_deg, self.tx_power_dbm]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(bad("non-finite field"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeTrace {
    pub timestamp: f64,
    pub x: f64,
    pub y: f64,
    pub cell_id: String,
    pub rss_dbm: Option<f64>,
    pub h_ue: f64,
}

/// Mean RSS of all traces of one serving cell inside one spatial bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedMeasurement {
    pub bin_ix: i64,
    pub bin_iy: i64,
    pub bin_width: f64,
    pub cell_id: String,
    pub mean_rss: f64,
    pub count: usize,
}

impl BinnedMeasurement {
    pub fn center(&self) -> (f64, f64) {
        (
            (self.bin_ix as f64 + 0.5) * self.bin_width,
            (self.bin_iy as f64 + 0.5) * self.bin_width,
        )
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ScenarioError {
    ScenarioError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, source: csv::Error) -> ScenarioError {
    ScenarioError::Csv {
        path: path.display().to_string(),
        source,
    }
}

struct CsvTable {
    file: String,
    columns: Vec<usize>,
    reader: csv::Reader<File>,
}

impl CsvTable {
    fn open(path: &Path, required: &[&str]) -> Result<Self, ScenarioError> {
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(file);
        let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
        let columns = required
            .iter()
            .map(|&name| {
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| ScenarioError::Schema {
                        file: path.display().to_string(),
                        column: name.to_string(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            file: path.display().to_string(),
            columns,
            reader,
        })
    }

    fn rows(&mut self) -> Result<Vec<(u64, Vec<String>)>, ScenarioError> {
        let mut out = Vec::new();
        for rec in self.reader.records() {
            let rec = rec.map_err(|e| ScenarioError::Csv {
                path: self.file.clone(),
                source: e,
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let fields = self
                .columns
                .iter()
                .map(|&i| rec.get(i).unwrap_or("").to_string())
                .collect();
            out.push((line, fields));
        }
        Ok(out)
    }

    fn number(&self, line: u64, column: &str, raw: &str) -> Result<f64, ScenarioError> {
        raw.parse::<f64>()
            .ok()
            .filter(|v| !v.is_nan())
            .ok_or_else(|| ScenarioError::Parse {
                file: self.file.clone(),
                line,
                message: format!("column `{column}`: `{raw}` is not a number"),
            })
    }
}

pub fn parse_sites(path: impl AsRef<Path>) -> Result<Vec<SiteTopology>, ScenarioError> {
    let path = path.as_ref();
    let mut table = CsvTable::open(path, &SITE_COLUMNS)?;
    let mut sites: Vec<SiteTopology> = Vec::new();
    let mut seen = HashSet::new();
    for (line, f) in table.rows()? {
        let num = |i: usize| table.number(line, SITE_COLUMNS[i], &f[i]);
        let site = SiteTopology {
            cell_id: f[0].clone(),
            x: num(1)?,
            y: num(2)?,
            h_bs: num(3)?,
            azimuth_deg: num(4)?,
            tilt_deg: num(5)?,
            tx_power_dbm: num(6)?,
            freq_mhz: num(7)?,
            antenna: f[8].clone(),
        };
        site.validate()?;
        if !seen.insert(site.cell_id.clone()) {
            return Err(ScenarioError::Parse {
                file: table.file.clone(),
                line,
                message: format!("duplicate cell_id `{}`", site.cell_id),
            });
        }
        sites.push(site);
    }
    Ok(sites)
}

pub fn write_sites(sites: &[SiteTopology], path: impl AsRef<Path>) -> Result<(), ScenarioError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(SITE_COLUMNS).map_err(|e| csv_err(path, e))?;
    for s in sites {
        w.write_record([
            s.cell_id.clone(),
            s.x.to_string(),
            s.y.to_string(),
            s.h_bs.to_string(),
            s.azimuth_deg.to_string(),
            s.tilt_deg.to_string(),
            s.tx_power_dbm.to_string(),
            s.freq_mhz.to_string(),
            s.antenna.clone(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads UE traces; an empty `rss_dbm` field becomes a missing reading.
pub fn parse_traces(path: impl AsRef<Path>) -> Result<Vec<UeTrace>, ScenarioError> {
    let path = path.as_ref();
    let mut table = CsvTable::open(path, &TRACE_COLUMNS)?;
    let mut out = Vec::new();
    for (line, f) in table.rows()? {
        let rss = if f[4].is_empty() {
            None
        } else {
            Some(table.number(line, "rss_dbm", &f[4])?)
        };
        out.push(UeTrace {
            timestamp: table.number(line, "timestamp", &f[0])?,
            x: table.number(line, "x", &f[1])?,
            y: table.number(line, "y", &f[2])?,
            cell_id: f[3].clone(),
            rss_dbm: rss,
            h_ue: DEFAULT_UE_HEIGHT,
        });
    }
    Ok(out)
}

pub fn write_traces(traces: &[UeTrace], path: impl AsRef<Path>) -> Result<(), ScenarioError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(TRACE_COLUMNS).map_err(|e| csv_err(path, e))?;
    for t in traces {
        w.write_record([
            t.timestamp.to_string(),
            t.x.to_string(),
            t.y.to_string(),
            t.cell_id.clone(),
            t.rss_dbm.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Drops traces with a missing or non-finite RSS, non-finite coordinates, or
/// an unknown serving cell. Order is preserved.
pub fn clean_traces(traces: &[UeTrace], sites: &[SiteTopology]) -> Vec<UeTrace> {
    let known: HashSet<&str> = sites.iter().map(|s| s.cell_id.as_str()).collect();
    traces
        .iter()
        .filter(|t| {
            t.rss_dbm.is_some_and(f64::is_finite)
                && t.x.is_finite()
                && t.y.is_finite()
                && known.contains(t.cell_id.as_str())
        })
        .cloned()
        .collect()
}

/// Domain in which co-binned RSS values are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    #[default]
    Decibel,
    Milliwatt,
}

/// Averages traces per (bin, serving cell). Output is sorted by
/// `(bin_ix, bin_iy, cell_id)`. Traces without RSS are ignored.
pub fn grid_traces(traces: &[UeTrace], bin_width: f64, averaging: Averaging) -> Vec<BinnedMeasurement> {
    assert!(bin_width > 0.0, "bin width must be positive");
    let mut bins: BTreeMap<(i64, i64, String), (f64, usize)> = BTreeMap::new();
    for t in traces {
        let Some(rss) = t.rss_dbm else { continue };
        let key = (
            (t.x / bin_width).floor() as i64,
            (t.y / bin_width).floor() as i64,
            t.cell_id.clone(),
        );
        let v = match averaging {
            Averaging::Decibel => rss,
            Averaging::Milliwatt => 10f64.powf(rss / 10.0),
        };
        let e = bins.entry(key).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    bins.into_iter()
        .map(|((bin_ix, bin_iy, cell_id), (sum, count))| {
            let mean = sum / count as f64;
            BinnedMeasurement {
                bin_ix,
                bin_iy,
                bin_width,
                cell_id,
                mean_rss: match averaging {
                    Averaging::Decibel => mean,
                    Averaging::Milliwatt => 10.0 * mean.log10(),
                },
                count,
            }
        })
        .collect()
}

/// Parameters of the synthetic ground-truth link budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    pub gain_max_dbi: f64,
    pub hpbw_h_deg: f64,
    pub hpbw_v_deg: f64,
    pub horizontal_cap_db: f64,
    pub vertical_cap_db: f64,
    pub los_intercept_db: f64,
    pub los_slope_db: f64,
    pub nlos_intercept_db: f64,
    pub nlos_slope_db: f64,
    /// Loss per penetrated building, indexed by land-use class.
    pub penetration_db: Vec<f64>,
    pub indoor_db_per_m: f64,
    pub shadow_sigma_db: f64,
    /// Spatial granularity of the shadowing field.
    pub shadow_bin_m: f64,
    pub seed: u64,
}

impl OracleParams {
    pub fn with_clutter_count(clutter_count: usize) -> Self {
        let penetration_db = (0..clutter_count)
            .map(|c| {
                if c < FIRST_BUILDING_CLASS {
                    0.0
                } else {
                    4.0 + 0.5 * (c - FIRST_BUILDING_CLASS) as f64
                }
            })
            .collect();
        Self {
            gain_max_dbi: 18.3,
            hpbw_h_deg: 63.0,
            hpbw_v_deg: 4.7,
            horizontal_cap_db: 30.0,
            vertical_cap_db: 20.0,
            // Urban micro-cell style laws at 2.11 GHz.
            los_intercept_db: 38.9,
            los_slope_db: 21.0,
            nlos_intercept_db: 29.3,
            nlos_slope_db: 35.3,
            penetration_db,
            indoor_db_per_m: 0.2,
            shadow_sigma_db: 4.0,
            shadow_bin_m: DEFAULT_BIN_WIDTH,
            seed: 0,
        }
    }

    pub fn validate(&self, clutter_count: usize) -> Result<(), ScenarioError> {
        if !(self.shadow_sigma_db >= 0.0) {
            return Err(ScenarioError::Config("shadowing sigma must be non-negative".into()));
        }
        if !(self.hpbw_h_deg > 0.0 && self.hpbw_v_deg > 0.0) {
            return Err(ScenarioError::Config("beamwidths must be positive".into()));
        }
        if self.penetration_db.len() != clutter_count {
            return Err(ScenarioError::Config(format!(
                "penetration table has {} entries, expected {clutter_count}",
                self.penetration_db.len()
            )));
        }
        if !(self.shadow_bin_m > 0.0) {
            return Err(ScenarioError::Config("shadow bin must be positive".into()));
        }
        Ok(())
    }

    pub fn horizontal_loss(&self, theta_hor: f64) -> f64 {
        (12.0 * (theta_hor / self.hpbw_h_deg).powi(2)).min(self.horizontal_cap_db)
    }

    pub fn vertical_loss(&self, phi_ver: f64) -> f64 {
        (12.0 * (phi_ver / self.hpbw_v_deg).powi(2)).min(self.vertical_cap_db)
    }

    pub fn path_loss(&self, d: f64, los: bool) -> f64 {
        let lg = d.max(1.0).log10();
        if los {
            self.los_intercept_db + self.los_slope_db * lg
        } else {
            self.nlos_intercept_db + self.nlos_slope_db * lg
        }
    }

    /// Deterministic spatially-binned Gaussian shadowing for one cell.
    pub fn shadowing(&self, cell_id: &str, x: f64, y: f64) -> f64 {
        if self.shadow_sigma_db == 0.0 {
            return 0.0;
        }
        let bx = (x / self.shadow_bin_m).floor() as i64;
        let by = (y / self.shadow_bin_m).floor() as i64;
        let mut h = Fnv1a::new();
        h.write(&self.seed.to_le_bytes());
        h.write(&bx.to_le_bytes());
        h.write(&by.to_le_bytes());
        h.write(cell_id.as_bytes());
        let z: f64 = StandardNormal.sample(&mut ChaCha8Rng::seed_from_u64(h.finish()));
        self.shadow_sigma_db * z
    }

    /// Link budget evaluated on an assembled feature vector.
    pub fn budget(&self, site: &SiteTopology, f: &FeatureVector, shadow: f64) -> f64 {
        let penetration: f64 = f
            .n_pen_c
            .iter()
            .zip(&self.penetration_db)
            .map(|(&n, &loss)| n as f64 * loss)
            .sum();
        site.tx_power_dbm + self.gain_max_dbi
            - self.horizontal_loss(f.theta_hor)
            - self.vertical_loss(f.phi_ver)
            - self.path_loss(f.d, f.los)
            - penetration
            - self.indoor_db_per_m * f.d_indoor
            - shadow
    }
}

/// FNV-1a, used for stable hashing independent of the std hasher.
struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

/// Ground-truth RSS (dBm) at `(x, y)` served by `site`.
pub fn oracle_rss(
    geo: &GeoStack,
    site: &SiteTopology,
    x: f64,
    y: f64,
    h_ue: f64,
    params: &OracleParams,
) -> Result<f64, ScenarioError> {
    let f = assemble_features(geo, site, x, y, h_ue)?;
    Ok(params.budget(site, &f, params.shadowing(&site.cell_id, x, y)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Side of the square study area in meters.
    pub area_m: f64,
    pub cellsize_m: f64,
    pub block_m: f64,
    pub street_m: f64,
    pub building_height_m: (f64, f64),
    pub park_fraction: f64,
    pub water_fraction: f64,
    pub terrain_amplitude_m: f64,
    pub clutter_count: usize,
    pub sites: usize,
    pub sectors_per_site: usize,
    pub mast_height_m: (f64, f64),
    pub tx_power_dbm: f64,
    pub freq_mhz: f64,
    /// Poisson intensity of UE traces per square kilometer.
    pub ue_density_per_km2: f64,
    pub h_ue_m: f64,
    pub noise_sigma_db: f64,
    pub missing_fraction: f64,
    pub oracle: OracleParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let clutter_count = 15;
        Self {
            area_m: 1000.0,
            cellsize_m: 5.0,
            block_m: 80.0,
            street_m: 20.0,
            building_height_m: (8.0, 40.0),
            park_fraction: 0.1,
            water_fraction: 0.04,
            terrain_amplitude_m: 4.0,
            clutter_count,
            sites: 4,
            sectors_per_site: 3,
            mast_height_m: (3.0, 8.0),
            tx_power_dbm: 43.0,
            freq_mhz: 2110.0,
            ue_density_per_km2: 10_000.0,
            h_ue_m: DEFAULT_UE_HEIGHT,
            noise_sigma_db: 2.0,
            missing_fraction: 0.02,
            oracle: OracleParams::with_clutter_count(clutter_count),
        }
    }
}

impl ScenarioConfig {
    /// Default configuration with a different clutter class count.
    pub fn with_clutter_count(clutter_count: usize) -> Self {
        Self {
            clutter_count,
            oracle: OracleParams::with_clutter_count(clutter_count),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |m: &str| Err(ScenarioError::Config(m.to_string()));
        if !(self.area_m > 0.0 && self.cellsize_m > 0.0 && self.cellsize_m <= self.area_m) {
            return fail("area and cellsize must be positive with cellsize <= area");
        }
        if !(self.block_m > 0.0 && self.street_m >= 0.0) {
            return fail("block size must be positive and street width non-negative");
        }
        let (lo, hi) = self.building_height_m;
        if !(lo >= 0.0 && hi >= lo) {
            return fail("building height range must satisfy 0 <= lo <= hi");
        }
        let (mlo, mhi) = self.mast_height_m;
        if !(mlo > 0.0 && mhi >= mlo) {
            return fail("mast height range must satisfy 0 < lo <= hi");
        }
        if self.clutter_count <= FIRST_BUILDING_CLASS {
            return fail("clutter_count must leave at least one building class");
        }
        if !(0.0..=1.0).contains(&self.park_fraction)
            || !(0.0..=1.0).contains(&self.water_fraction)
            || self.park_fraction + self.water_fraction > 1.0
        {
            return fail("park and water fractions must be probabilities summing to at most 1");
        }
        if !(0.0..=1.0).contains(&self.missing_fraction) {
            return fail("missing fraction must lie in [0, 1]");
        }
        if !(self.ue_density_per_km2 >= 0.0 && self.ue_density_per_km2.is_finite()) {
            return fail("UE density must be a non-negative number");
        }
        if !(self.noise_sigma_db >= 0.0) {
            return fail("noise sigma must be non-negative");
        }
        if self.sectors_per_site == 0 {
            return fail("at least one sector per site");
        }
        if !(self.freq_mhz > 0.0 && self.h_ue_m > 0.0) {
            return fail("frequency and UE height must be positive");
        }
        self.oracle.validate(self.clutter_count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub geo: GeoStack,
    pub sites: Vec<SiteTopology>,
    pub traces: Vec<UeTrace>,
    pub oracle: OracleParams,
}

#[derive(Debug, Clone, Copy)]
struct Parcel {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    height: f64,
    class: usize,
}

/// Generates a Manhattan-style city, its sites and Poisson-distributed UE
/// traces. The output is a pure function of `(config, seed)`.
pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario, ScenarioError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cs = config.cellsize_m;
    let n = (config.area_m / cs).round().max(1.0) as usize;
    let area = n as f64 * cs;

    // Terrain: two gentle undulations.
    let phases: [f64; 3] = [
        rng.random::<f64>() * std::f64::consts::TAU,
        rng.random::<f64>() * std::f64::consts::TAU,
        rng.random::<f64>() * std::f64::consts::TAU,
    ];
    let amp = config.terrain_amplitude_m;
    let ground = |x: f64, y: f64| {
        let k1 = std::f64::consts::TAU / (area * 0.9);
        let k2 = std::f64::consts::TAU / (area * 0.6);
        50.0 + amp
            * (0.6 * (k1 * x + phases[0]).sin() * (k1 * y + phases[1]).cos()
                + 0.4 * (k2 * (x + y) + phases[2]).sin())
    };

    // Block layout.
    let period = config.block_m + config.street_m;
    let nblocks = (area / period).ceil() as usize;
    let building_classes = config.clutter_count - FIRST_BUILDING_CLASS;
    let (hlo, hhi) = config.building_height_m;
    let half = config.block_m / 2.0;
    let mut block_kind = vec![CLASS_STREET; nblocks * nblocks];
    let mut parcels: Vec<Parcel> = Vec::new();
    let mut parcel_of_block: Vec<Option<usize>> = vec![None; nblocks * nblocks];
    for by in 0..nblocks {
        for bx in 0..nblocks {
            let u: f64 = rng.random();
            let kind = if u < config.park_fraction {
                CLASS_PARK
            } else if u < config.park_fraction + config.water_fraction {
                CLASS_WATER
            } else {
                FIRST_BUILDING_CLASS
            };
            block_kind[by * nblocks + bx] = kind;
            if kind == FIRST_BUILDING_CLASS {
                parcel_of_block[by * nblocks + bx] = Some(parcels.len());
                let ox = bx as f64 * period + config.street_m;
                let oy = by as f64 * period + config.street_m;
                for (qx, qy) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
                    parcels.push(Parcel {
                        x0: ox + qx * half,
                        y0: oy + qy * half,
                        x1: ox + (qx + 1.0) * half,
                        y1: oy + (qy + 1.0) * half,
                        height: hlo + (hhi - hlo) * rng.random::<f64>(),
                        class: FIRST_BUILDING_CLASS + rng.random_range(0..building_classes),
                    });
                }
            }
        }
    }

    let mut dtm = RasterGrid::filled(n, n, 0.0, 0.0, cs, 0.0).expect("valid frame");
    let mut dhm = dtm.clone();
    let mut dlu = dtm.clone();
    for row in 0..n {
        for col in 0..n {
            let (x, y) = dtm.cell_center(col, row);
            dtm.set(col, row, ground(x, y));
            let (u, v) = (x.rem_euclid(period), y.rem_euclid(period));
            if u < config.street_m || v < config.street_m {
                continue;
            }
            let b = (y / period) as usize * nblocks + (x / period) as usize;
            match parcel_of_block[b] {
                Some(first) => {
                    let qx = usize::from(u - config.street_m >= half);
                    let qy = usize::from(v - config.street_m >= half);
                    let p = &parcels[first + qy * 2 + qx];
                    // Flat roof at the parcel-centre ground level plus its height.
                    let roof = ground((p.x0 + p.x1) / 2.0, (p.y0 + p.y1) / 2.0) + p.height;
                    dhm.set(col, row, (roof - ground(x, y)).max(1.0));
                    dlu.set(col, row, p.class as f64);
                }
                None => dlu.set(col, row, block_kind[b] as f64),
            }
        }
    }
    let geo = GeoStack::new(dtm, dhm, dlu, config.clutter_count).expect("generator keeps invariants");

    // Sites on rooftops of parcels away from the border.
    let margin = 0.15 * area;
    let mut candidates: Vec<&Parcel> = parcels
        .iter()
        .filter(|p| {
            let (cx, cy) = ((p.x0 + p.x1) / 2.0, (p.y0 + p.y1) / 2.0);
            cx > margin && cx < area - margin && cy > margin && cy < area - margin
        })
        .collect();
    if candidates.len() < config.sites {
        return Err(ScenarioError::Config(format!(
            "only {} rooftop candidates for {} sites",
            candidates.len(),
            config.sites
        )));
    }
    candidates.shuffle(&mut rng);
    let (mlo, mhi) = config.mast_height_m;
    let mut sites = Vec::with_capacity(config.sites * config.sectors_per_site);
    let sector_step = 360.0 / config.sectors_per_site as f64;
    for (si, p) in candidates.iter().take(config.sites).enumerate() {
        let x = (p.x0 + p.x1) / 2.0;
        let y = (p.y0 + p.y1) / 2.0;
        let h_bs = mlo + (mhi - mlo) * rng.random::<f64>();
        let az0 = sector_step * rng.random::<f64>();
        for k in 0..config.sectors_per_site {
            sites.push(SiteTopology {
                cell_id: format!("s{si}_{k}"),
                x,
                y,
                h_bs,
                azimuth_deg: (az0 + k as f64 * sector_step).rem_euclid(360.0),
                tilt_deg: 2.0 + 6.0 * rng.random::<f64>(),
                tx_power_dbm: config.tx_power_dbm,
                freq_mhz: config.freq_mhz,
                antenna: "parametric-18dBi".into(),
            });
        }
    }

    let mut oracle = config.oracle.clone();
    oracle.seed = seed;

    let expected = config.ue_density_per_km2 * area * area / 1e6;
    let count = if expected > 0.0 {
        Poisson::new(expected)
            .map_err(|e| ScenarioError::Config(format!("poisson intensity: {e}")))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    let noise = Normal::new(0.0, config.noise_sigma_db)
        .map_err(|e| ScenarioError::Config(format!("noise: {e}")))?;
    let mut traces = Vec::with_capacity(count);
    for i in 0..count {
        let x = rng.random::<f64>() * area;
        let y = rng.random::<f64>() * area;
        let eps = noise.sample(&mut rng);
        let missing = rng.random::<f64>() < config.missing_fraction;
        let mut best: Option<(f64, &SiteTopology)> = None;
        for s in &sites {
            let Ok(rss) = oracle_rss(&geo, s, x, y, config.h_ue_m, &oracle) else {
                continue;
            };
            if best.is_none_or(|(b, _)| rss > b) {
                best = Some((rss, s));
            }
        }
        let Some((rss, serving)) = best else { continue };
        traces.push(UeTrace {
            timestamp: i as f64,
            x,
            y,
            cell_id: serving.cell_id.clone(),
            rss_dbm: (!missing).then_some(rss + eps),
            h_ue: config.h_ue_m,
        });
    }

    Ok(Scenario {
        geo,
        sites,
        traces,
        oracle,
    })
}
