//! Empirical and semi-empirical path-loss baselines: COST-Hata, SUI, the
//! standard propagation model with Deygout diffraction, and the ITU-R P.452
//! combining formula.
//!
//! Every `log` in these formulas is base 10. COST-Hata and SUI take distance
//! in kilometers; SPM works in meters.

use std::collections::HashMap;

use thiserror::Error;

use crate::eval::{metrics, Metrics};
use crate::features::RowKey;
use crate::geodata::GeoStack;
use crate::profile::{extract_profile, summarize_profile, PathProfile, ProfileError};
use crate::scenario::{SiteTopology, CLASS_PARK, FIRST_BUILDING_CLASS};

pub const SPEED_OF_LIGHT_M_PER_US: f64 = 299.792_458;

#[derive(Debug, Error)]
pub enum EmpiricalError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("model configuration: {0}")]
    Config(String),
    #[error("unknown serving cell `{0}`")]
    UnknownCell(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

fn require_positive(pairs: &[(&str, f64)]) -> Result<(), EmpiricalError> {
    for &(name, v) in pairs {
        if !(v > 0.0 && v.is_finite()) {
            return Err(EmpiricalError::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HataArea {
    Urban,
    Suburban,
    QuasiOpenRural,
    OpenRural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HataCorrection {
    SmallCity,
    OpenRural,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostHataParams {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub area: HataArea,
    pub correction: HataCorrection,
}

impl Default for CostHataParams {
    fn default() -> Self {
        Self {
            a1: 46.3,
            a2: 33.9,
            a3: -13.82,
            b1: 44.9,
            b2: -6.55,
            b3: 0.0,
            area: HataArea::Urban,
            correction: HataCorrection::SmallCity,
        }
    }
}

impl CostHataParams {
    /// Uncorrected path loss.
    pub fn base(&self, f_mhz: f64, h_bs: f64, d_km: f64) -> f64 {
        self.a1
            + self.a2 * f_mhz.log10()
            + self.a3 * h_bs.log10()
            + (self.b1 + self.b2 * h_bs.log10() + self.b3 * h_bs) * d_km.log10()
    }

    /// UE height correction `a(h_UE)`.
    pub fn ue_correction(&self, f_mhz: f64, h_ue: f64) -> f64 {
        let lf = f_mhz.log10();
        match self.correction {
            HataCorrection::SmallCity => (1.1 * lf - 0.7) * h_ue - (1.56 * lf - 0.8),
            HataCorrection::OpenRural => 3.2 * (11.75 * h_ue).log10().powi(2) - 4.97,
        }
    }
}

pub fn cost_hata(
    p: &CostHataParams,
    f_mhz: f64,
    h_bs: f64,
    h_ue: f64,
    d_km: f64,
) -> Result<f64, EmpiricalError> {
    require_positive(&[("f", f_mhz), ("h_bs", h_bs), ("h_ue", h_ue), ("d", d_km)])?;
    let lf = f_mhz.log10();
    let corrected = p.base(f_mhz, h_bs, d_km) - p.ue_correction(f_mhz, h_ue);
    Ok(match p.area {
        HataArea::Urban => corrected,
        HataArea::Suburban => corrected - 2.0 * (f_mhz / 28.0).log10().powi(2) - 5.4,
        HataArea::QuasiOpenRural => corrected - 4.78 * lf * lf + 18.33 * lf - 35.94,
        HataArea::OpenRural => corrected - 4.78 * lf * lf + 18.33 * lf - 40.94,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiParams {
    /// Printed intercept; physically implausible, override for real use.
    pub intercept: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub x: f64,
}

impl Default for SuiParams {
    fn default() -> Self {
        Self {
            intercept: -7366.0,
            a: 4.6,
            b: 0.0075,
            c: 12.6,
            x: 10.8,
        }
    }
}

impl SuiParams {
    pub fn bs_correction(&self, h_bs: f64) -> f64 {
        self.a - self.b * h_bs + self.c / h_bs
    }

    pub fn ue_correction(&self, h_ue: f64) -> f64 {
        self.x * (h_ue / 2.0).log10()
    }
}

pub fn sui(p: &SuiParams, f_mhz: f64, h_bs: f64, h_ue: f64, d_km: f64) -> Result<f64, EmpiricalError> {
    require_positive(&[("f", f_mhz), ("h_bs", h_bs), ("h_ue", h_ue), ("d", d_km)])?;
    Ok(p.intercept + 26.0 * f_mhz.log10() + 10.0 * p.bs_correction(h_bs) * (1.0 + d_km.log10())
        - p.ue_correction(h_ue))
}

/// Single knife-edge loss approximation `J(v)`; zero for `v <= -0.78`.
pub fn knife_edge_loss(v: f64) -> f64 {
    if v <= -0.78 {
        0.0
    } else {
        let w = v - 0.1;
        6.9 + 20.0 * ((w * w + 1.0).sqrt() + w).log10()
    }
}

/// Fresnel-Kirchhoff parameter for clearance `h` at distances `d1`, `d2`
/// from the path ends.
pub fn fresnel_v(h: f64, d1: f64, d2: f64, wavelength: f64) -> f64 {
    h * (2.0 * (d1 + d2) / (wavelength * d1 * d2)).sqrt()
}

/// Interior sample of `p` between indices `a` and `b` with the largest
/// Fresnel parameter relative to the line `(a, za)`–`(b, zb)`.
fn principal_edge(p: &PathProfile, a: usize, za: f64, b: usize, zb: f64, wavelength: f64) -> Option<(usize, f64)> {
    let ta = p.samples[a].t;
    let tb = p.samples[b].t;
    let span = tb - ta;
    let mut best: Option<(usize, f64)> = None;
    for i in a + 1..b {
        let s = &p.samples[i];
        let line = za + (zb - za) * (s.t - ta) / span;
        let v = fresnel_v(s.top() - line, s.t - ta, tb - s.t, wavelength);
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((i, v));
        }
    }
    best
}

/// Deygout multi-edge diffraction loss over the direct path: the principal
/// edge plus one principal edge on each side of it. Zero when the direct
/// line is unobstructed.
pub fn deygout_loss(p: &PathProfile, f_mhz: f64) -> f64 {
    let last = p.samples.len() - 1;
    if !p.samples[1..last].iter().any(|s| s.obstructs()) {
        return 0.0;
    }
    let wavelength = SPEED_OF_LIGHT_M_PER_US / f_mhz;
    let Some((k, v)) = principal_edge(p, 0, p.z_bs, last, p.z_ue, wavelength) else {
        return 0.0;
    };
    let main = knife_edge_loss(v);
    if main == 0.0 {
        return 0.0;
    }
    let top = p.samples[k].top();
    let side = |a: usize, za: f64, b: usize, zb: f64| {
        principal_edge(p, a, za, b, zb, wavelength).map_or(0.0, |(_, v)| knife_edge_loss(v))
    };
    main + side(0, p.z_bs, k, top) + side(k, top, last, p.z_ue)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpmParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
    pub k7: f64,
    pub k_clutter: f64,
    /// Loss per land-use class.
    pub clutter_loss_db: Vec<f64>,
}

impl SpmParams {
    pub fn with_clutter_losses(clutter_loss_db: Vec<f64>) -> Self {
        Self {
            k1: 23.8,
            k2: 44.9,
            k3: 10.89,
            k4: 0.19,
            k5: -10.0,
            k6: 0.0,
            k7: 0.0,
            k_clutter: 1.0,
            clutter_loss_db,
        }
    }
}

/// Effective antenna heights above the mean terrain along the profile,
/// each clamped to at least 1 m.
pub fn effective_heights(p: &PathProfile) -> (f64, f64) {
    let mean_ground = p.samples.iter().map(|s| s.z_ground).sum::<f64>() / p.samples.len() as f64;
    let h_bs = (p.z_bs - mean_ground).max(1.0);
    let h_ue = (p.last().z_ground + p.h_ue - mean_ground).max(1.0);
    (h_bs, h_ue)
}

/// Path-length weighted average of the per-class clutter losses.
pub fn clutter_term(p: &PathProfile, losses: &[f64]) -> f64 {
    let s = summarize_profile(p);
    let lengths: Vec<f64> = s
        .d_indoor_c
        .iter()
        .zip(&s.d_outdoor_c)
        .map(|(a, b)| a + b)
        .collect();
    let total: f64 = lengths.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    lengths
        .iter()
        .zip(losses)
        .filter(|(&len, _)| len > 0.0)
        .map(|(&len, &loss)| len / total * loss)
        .sum()
}

pub fn spm(p: &SpmParams, profile: &PathProfile, f_mhz: f64) -> Result<f64, EmpiricalError> {
    if !(profile.d >= 1.0) {
        return Err(EmpiricalError::Domain(format!(
            "SPM needs d >= 1 m, got {}",
            profile.d
        )));
    }
    if p.clutter_loss_db.len() != profile.clutter_count {
        return Err(EmpiricalError::Config(format!(
            "clutter loss table has {} entries, expected {}",
            p.clutter_loss_db.len(),
            profile.clutter_count
        )));
    }
    let (h_bs, h_ue) = effective_heights(profile);
    let ld = profile.d.log10();
    let lh = h_bs.log10();
    let diffraction = if p.k4 == 0.0 { 0.0 } else { deygout_loss(profile, f_mhz) };
    Ok(p.k1
        + p.k2 * ld
        + p.k3 * lh
        + p.k4 * diffraction
        + p.k5 * ld * lh
        + p.k6 * h_ue
        + p.k7 * h_ue.log10()
        + p.k_clutter * clutter_term(profile, &p.clutter_loss_db))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Itu452Inputs {
    pub l_a: f64,
    pub l_b: f64,
    pub l_c: f64,
    pub l_d: f64,
    pub a_bs: f64,
    pub a_ue: f64,
    /// Path angular distance in milliradians.
    pub theta_mrad: f64,
}

/// Interpolation factor `F_j` for path angular distance `theta` (mrad).
pub fn itu_interpolation(theta_mrad: f64) -> f64 {
    1.0 - 0.5 * (1.0 + (2.4 * (theta_mrad - 0.3) / 0.3).tanh())
}

pub fn itu452(inp: &Itu452Inputs) -> f64 {
    let fj = itu_interpolation(inp.theta_mrad);
    let second = inp.l_b + (inp.l_c - inp.l_d) * fj;
    -5.0 * (10f64.powf(-0.2 * inp.l_a) + 10f64.powf(-0.2 * second)).log10() + inp.a_bs + inp.a_ue
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmpiricalModel {
    CostHata(CostHataParams),
    Sui(SuiParams),
    Spm(SpmParams),
    Itu452(Itu452Inputs),
}

impl EmpiricalModel {
    pub fn name(&self) -> &'static str {
        match self {
            Self::CostHata(_) => "cost-hata",
            Self::Sui(_) => "sui",
            Self::Spm(_) => "spm",
            Self::Itu452(_) => "itu452",
        }
    }

    /// Builds a model from its CLI name and an optional `key = value`
    /// parameter text. SPM needs `clutter_loss`; ITU-452 needs `l_a`..`l_d`.
    pub fn from_params(name: &str, text: Option<&str>) -> Result<Self, EmpiricalError> {
        let kv = parse_key_values(text.unwrap_or(""))?;
        let num = |key: &str, default: Option<f64>| -> Result<f64, EmpiricalError> {
            match kv.get(key) {
                Some(raw) => raw
                    .parse::<f64>()
                    .map_err(|_| EmpiricalError::Config(format!("`{key}` = `{raw}` is not a number"))),
                None => default.ok_or_else(|| EmpiricalError::Config(format!("missing parameter `{key}`"))),
            }
        };
        let model = match name {
            "cost-hata" => {
                let d = CostHataParams::default();
                let area = match kv.get("area").map(String::as_str) {
                    None | Some("urban") => HataArea::Urban,
                    Some("suburban") => HataArea::Suburban,
                    Some("quasi-open-rural") => HataArea::QuasiOpenRural,
                    Some("open-rural") => HataArea::OpenRural,
                    Some(other) => return Err(EmpiricalError::Config(format!("unknown area `{other}`"))),
                };
                let correction = match kv.get("correction").map(String::as_str) {
                    None | Some("small-city") => HataCorrection::SmallCity,
                    Some("open-rural") => HataCorrection::OpenRural,
                    Some(other) => {
                        return Err(EmpiricalError::Config(format!("unknown correction `{other}`")))
                    }
                };
                Self::CostHata(CostHataParams {
                    a1: num("a1", Some(d.a1))?,
                    a2: num("a2", Some(d.a2))?,
                    a3: num("a3", Some(d.a3))?,
                    b1: num("b1", Some(d.b1))?,
                    b2: num("b2", Some(d.b2))?,
                    b3: num("b3", Some(d.b3))?,
                    area,
                    correction,
                })
            }
            "sui" => {
                let d = SuiParams::default();
                Self::Sui(SuiParams {
                    intercept: num("intercept", Some(d.intercept))?,
                    a: num("a", Some(d.a))?,
                    b: num("b", Some(d.b))?,
                    c: num("c", Some(d.c))?,
                    x: num("x", Some(d.x))?,
                })
            }
            "spm" => {
                let table = kv
                    .get("clutter_loss")
                    .ok_or_else(|| EmpiricalError::Config("missing table `clutter_loss`".into()))?;
                let losses = table
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|_| EmpiricalError::Config(format!("bad clutter loss `{s}`")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let d = SpmParams::with_clutter_losses(losses);
                Self::Spm(SpmParams {
                    k1: num("k1", Some(d.k1))?,
                    k2: num("k2", Some(d.k2))?,
                    k3: num("k3", Some(d.k3))?,
                    k4: num("k4", Some(d.k4))?,
                    k5: num("k5", Some(d.k5))?,
                    k6: num("k6", Some(d.k6))?,
                    k7: num("k7", Some(d.k7))?,
                    k_clutter: num("k_clutter", Some(d.k_clutter))?,
                    ..d
                })
            }
            "itu452" => Self::Itu452(Itu452Inputs {
                l_a: num("l_a", None)?,
                l_b: num("l_b", None)?,
                l_c: num("l_c", None)?,
                l_d: num("l_d", None)?,
                a_bs: num("a_bs", Some(0.0))?,
                a_ue: num("a_ue", Some(0.0))?,
                theta_mrad: num("theta_mrad", None)?,
            }),
            other => return Err(EmpiricalError::Config(format!("unknown model `{other}`"))),
        };
        Ok(model)
    }

    /// Path loss in dB between `site` and a UE at `(x, y)`.
    pub fn path_loss(
        &self,
        geo: &GeoStack,
        site: &SiteTopology,
        x: f64,
        y: f64,
        h_ue: f64,
    ) -> Result<f64, EmpiricalError> {
        let profile = extract_profile(geo, site, x, y, h_ue)?;
        // Antenna height above local ground at the BS.
        let h_bs = profile.z_bs - profile.first().z_ground;
        let d_km = profile.d / 1000.0;
        match self {
            Self::CostHata(p) => cost_hata(p, site.freq_mhz, h_bs, h_ue, d_km),
            Self::Sui(p) => sui(p, site.freq_mhz, h_bs, h_ue, d_km),
            Self::Spm(p) => spm(p, &profile, site.freq_mhz),
            Self::Itu452(inp) => Ok(itu452(inp)),
        }
    }
}

fn parse_key_values(text: &str) -> Result<HashMap<String, String>, EmpiricalError> {
    let mut kv = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| EmpiricalError::Config(format!("line {}: expected `key = value`", i + 1)))?;
        kv.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
    }
    Ok(kv)
}

/// A location to predict, tied to its serving cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPoint {
    pub x: f64,
    pub y: f64,
    pub cell_id: String,
    pub h_ue: f64,
}

/// RSS (dBm) per point as `P_BS - L_path`.
pub fn empirical_predict(
    model: &EmpiricalModel,
    geo: &GeoStack,
    sites: &[SiteTopology],
    points: &[PredictionPoint],
) -> Result<Vec<f64>, EmpiricalError> {
    let by_id: HashMap<&str, &SiteTopology> = sites.iter().map(|s| (s.cell_id.as_str(), s)).collect();
    points
        .iter()
        .map(|pt| {
            let site = by_id
                .get(pt.cell_id.as_str())
                .ok_or_else(|| EmpiricalError::UnknownCell(pt.cell_id.clone()))?;
            Ok(site.tx_power_dbm - model.path_loss(geo, site, pt.x, pt.y, pt.h_ue)?)
        })
        .collect()
}

/// Constant that minimizes the squared error of `pred + offset` against `y`
/// (the usual intercept calibration of an empirical model).
pub fn calibrate_offset(pred: &[f64], y: &[f64]) -> f64 {
    assert_eq!(pred.len(), y.len(), "prediction and target lengths differ");
    if y.is_empty() {
        return 0.0;
    }
    y.iter().zip(pred).map(|(a, b)| a - b).sum::<f64>() / y.len() as f64
}

/// Bin-centre prediction points for feature-matrix row keys.
pub fn points_from_keys(keys: &[RowKey], bin_width: f64, h_ue: f64) -> Vec<PredictionPoint> {
    keys.iter()
        .map(|k| PredictionPoint {
            x: (k.bin_ix as f64 + 0.5) * bin_width,
            y: (k.bin_iy as f64 + 0.5) * bin_width,
            cell_id: k.cell_id.clone(),
            h_ue,
        })
        .collect()
}

/// COST-Hata (urban, small city), SUI and SPM with a flat building
/// clutter loss; the set scored by the comparison tooling.
pub fn standard_baselines(clutter_count: usize) -> Vec<EmpiricalModel> {
    let table = (0..clutter_count)
        .map(|c| match c {
            CLASS_PARK => 2.0,
            c if c >= FIRST_BUILDING_CLASS => 12.0,
            _ => 0.0,
        })
        .collect();
    vec![
        EmpiricalModel::CostHata(CostHataParams::default()),
        EmpiricalModel::Sui(SuiParams::default()),
        EmpiricalModel::Spm(SpmParams::with_clutter_losses(table)),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineScore {
    pub name: &'static str,
    pub raw: Metrics,
    pub offset_db: f64,
    /// Metrics after adding `offset_db` to every prediction.
    pub calibrated: Metrics,
}

/// Scores each model on `targets` before and after offset calibration.
pub fn score_baselines(
    models: &[EmpiricalModel],
    geo: &GeoStack,
    sites: &[SiteTopology],
    points: &[PredictionPoint],
    targets: &[f64],
) -> Result<Vec<BaselineScore>, EmpiricalError> {
    let metric = |p: &[f64]| metrics(targets, p).map_err(|e| EmpiricalError::Domain(e.to_string()));
    models
        .iter()
        .map(|m| {
            let pred = empirical_predict(m, geo, sites, points)?;
            let offset_db = calibrate_offset(&pred, targets);
            let shifted: Vec<f64> = pred.iter().map(|p| p + offset_db).collect();
            Ok(BaselineScore {
                name: m.name(),
                raw: metric(&pred)?,
                offset_db,
                calibrated: metric(&shifted)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::ProfileSample;

    fn flat_profile(d: f64, z_bs: f64, step: f64, clutter: usize, classes: usize) -> PathProfile {
        let ts = crate::profile::sample_positions(d, step);
        PathProfile {
            samples: ts
                .iter()
                .map(|&t| ProfileSample {
                    t,
                    z_ground: 0.0,
                    h_building: 0.0,
                    clutter,
                    z_ray: z_bs * (1.0 - t / d),
                })
                .collect(),
            z_bs,
            z_ue: 0.0,
            h_ue: 1.5,
            d,
            step,
            clutter_count: classes,
        }
    }

    fn with_obstacle(mut p: PathProfile, at: f64, height: f64) -> PathProfile {
        for s in &mut p.samples {
            if (s.t - at).abs() < 2.0 {
                s.h_building = height;
            }
        }
        p
    }

    #[test]
    fn hata_terms() {
        let p = CostHataParams::default();
        assert!((p.base(2110.0, 30.0, 1.0) - 138.579).abs() < 1e-3);
        assert!((p.ue_correction(2110.0, 1.5) - 0.0492).abs() < 1e-3);
        let mut q = p.clone();
        q.b1 = 99.0;
        q.b2 = 3.0;
        q.b3 = 0.7;
        assert_eq!(q.base(2110.0, 30.0, 1.0), p.base(2110.0, 30.0, 1.0));
    }

    #[test]
    fn hata_area_offsets_are_as_printed() {
        let mut p = CostHataParams::default();
        let urban = cost_hata(&p, 900.0, 30.0, 1.5, 2.0).unwrap();
        p.area = HataArea::Suburban;
        let sub = cost_hata(&p, 900.0, 30.0, 1.5, 2.0).unwrap();
        let expect = 2.0 * (900.0f64 / 28.0).log10().powi(2) + 5.4;
        assert!((urban - sub - expect).abs() < 1e-12);
        p.area = HataArea::QuasiOpenRural;
        let q = cost_hata(&p, 900.0, 30.0, 1.5, 2.0).unwrap();
        p.area = HataArea::OpenRural;
        let o = cost_hata(&p, 900.0, 30.0, 1.5, 2.0).unwrap();
        assert!((q - o - 5.0).abs() < 1e-12);
        assert!(cost_hata(&p, 900.0, 30.0, 1.5, 0.0).is_err());
    }

    #[test]
    fn sui_terms() {
        let p = SuiParams::default();
        assert_eq!(p.ue_correction(2.0), 0.0);
        assert!((p.bs_correction(30.0) - 4.795).abs() < 1e-6);
        let full = sui(&p, 2110.0, 30.0, 2.0, 1.0).unwrap();
        assert!((full - (p.intercept + 134.381)).abs() < 1e-2);
        assert!(sui(&p, 2110.0, -1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn knife_edge_values() {
        assert!((knife_edge_loss(0.0) - 6.03).abs() < 0.01);
        assert_eq!(knife_edge_loss(-0.78), 0.0);
        assert_eq!(knife_edge_loss(-2.0), 0.0);
        assert!(knife_edge_loss(-0.77) > 0.0);
    }

    #[test]
    fn unobstructed_profile_has_no_diffraction() {
        assert_eq!(deygout_loss(&flat_profile(500.0, 30.0, 2.5, 0, 2), 2110.0), 0.0);
    }

    #[test]
    fn raising_the_obstacle_never_reduces_loss() {
        let mut prev = 0.0;
        for h in [20.0, 22.0, 25.0, 30.0, 40.0, 60.0] {
            let p = with_obstacle(flat_profile(400.0, 30.0, 2.5, 0, 2), 200.0, h);
            let l = deygout_loss(&p, 2110.0);
            assert!(l >= prev - 1e-12, "h={h}: {l} < {prev}");
            assert!(l >= 0.0);
            prev = l;
        }
        assert!(prev > 0.0);
    }

    #[test]
    fn spm_at_one_meter() {
        let p = flat_profile(1.0, 30.0, 0.5, 0, 2);
        let mut params = SpmParams::with_clutter_losses(vec![0.0, 0.0]);
        params.k4 = 0.19;
        let v = spm(&params, &p, 2110.0).unwrap();
        assert!((v - 39.886).abs() < 1e-3, "{v}");
        let short = flat_profile(0.5, 30.0, 0.25, 0, 2);
        assert!(spm(&params, &short, 2110.0).is_err());
    }

    #[test]
    fn uniform_clutter_weight_is_exact() {
        let p = flat_profile(333.3, 30.0, 2.5, 1, 3);
        assert_eq!(clutter_term(&p, &[1.0, 7.25, 3.0]), 7.25);
    }

    #[test]
    fn zero_k4_ignores_obstructions() {
        let mut params = SpmParams::with_clutter_losses(vec![0.0, 0.0]);
        params.k4 = 0.0;
        let open = flat_profile(400.0, 30.0, 2.5, 0, 2);
        let blocked = with_obstacle(open.clone(), 200.0, 50.0);
        assert_eq!(spm(&params, &open, 2110.0).unwrap(), spm(&params, &blocked, 2110.0).unwrap());
    }

    #[test]
    fn itu_combination() {
        assert_eq!(itu_interpolation(0.3), 0.5);
        let inp = Itu452Inputs {
            l_a: 120.0,
            l_b: 100.0,
            l_c: 50.0,
            l_d: 10.0,
            a_bs: 0.0,
            a_ue: 0.0,
            theta_mrad: 0.3,
        };
        // Second branch: 100 + 40 * 0.5 = 120 = l_a.
        assert!((itu452(&inp) - (120.0 - 1.5051)).abs() < 1e-4);
        let shifted = Itu452Inputs {
            a_bs: 3.0,
            a_ue: 4.5,
            ..inp.clone()
        };
        assert_eq!(itu452(&shifted) - itu452(&inp), 7.5);
    }

    #[test]
    fn offset_is_mean_residual() {
        assert_eq!(calibrate_offset(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]), 2.0);
        assert_eq!(calibrate_offset(&[], &[]), 0.0);
    }

    #[test]
    fn param_text_parsing() {
        let m = EmpiricalModel::from_params("sui", Some("intercept = 73.66 # corrected\n")).unwrap();
        assert!(matches!(m, EmpiricalModel::Sui(SuiParams { intercept, .. }) if intercept == 73.66));
        assert!(matches!(
            EmpiricalModel::from_params("spm", None),
            Err(EmpiricalError::Config(_))
        ));
        assert!(matches!(
            EmpiricalModel::from_params("itu452", Some("l_a=1\nl_b=2\nl_c=3\ntheta_mrad=1")),
            Err(EmpiricalError::Config(m)) if m.contains("l_d")
        ));
        assert!(EmpiricalModel::from_params("okumura", None).is_err());
    }
}
