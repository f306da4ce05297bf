//! Direct BS→UE ray traversal through the raster stack.
//!
//! A [`PathProfile`] samples the straight 2D segment between the antenna and
//! the UE at a fixed step, recording terrain, building height and land-use
//! class under each sample together with the height of the direct 3D ray.
//! [`summarize_profile`] reduces it to the line-of-sight, diffraction-point,
//! penetration and per-clutter distance quantities used as model features.

use thiserror::Error;

use crate::geodata::{GeoError, GeoStack};
use crate::scenario::SiteTopology;

/// Obstruction margin in meters; a sample must rise this far above the ray.
pub const OBSTRUCTION_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("degenerate path: BS and UE share the same horizontal position ({x}, {y})")]
    Degenerate { x: f64, y: f64 },
    #[error("invalid sampling step {0}")]
    Step(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSample {
    /// Horizontal distance from the BS.
    pub t: f64,
    pub z_ground: f64,
    pub h_building: f64,
    pub clutter: usize,
    /// Height of the direct ray above datum at `t`.
    pub z_ray: f64,
}

impl ProfileSample {
    pub fn top(&self) -> f64 {
        self.z_ground + self.h_building
    }

    pub fn obstructs(&self) -> bool {
        self.top() > self.z_ray + OBSTRUCTION_EPS
    }

    pub fn is_indoor(&self) -> bool {
        self.obstructs() && self.h_building > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathProfile {
    pub samples: Vec<ProfileSample>,
    /// Total antenna height: ground + building + mast at the BS.
    pub z_bs: f64,
    /// Ground + building at the UE.
    pub z_ue: f64,
    /// UE antenna height above local surface; not part of `z_ue`.
    pub h_ue: f64,
    pub d: f64,
    pub step: f64,
    pub clutter_count: usize,
}

impl PathProfile {
    /// Height of the direct ray at horizontal distance `t`.
    pub fn ray_height(&self, t: f64) -> f64 {
        self.z_bs + (self.z_ue - self.z_bs) * t / self.d
    }

    pub fn first(&self) -> &ProfileSample {
        &self.samples[0]
    }

    pub fn last(&self) -> &ProfileSample {
        &self.samples[self.samples.len() - 1]
    }
}

/// Samples along a segment of length `d` at spacing `step`; the final sample
/// sits exactly on the far endpoint.
pub fn sample_positions(d: f64, step: f64) -> Vec<f64> {
    let n = ((d / step).floor() as usize).max(1);
    let mut ts: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
    ts.push(d);
    ts
}

/// Profile at the default step of half a raster cell.
pub fn extract_profile(
    geo: &GeoStack,
    site: &SiteTopology,
    x_ue: f64,
    y_ue: f64,
    h_ue: f64,
) -> Result<PathProfile, ProfileError> {
    extract_profile_with_step(geo, site, x_ue, y_ue, h_ue, geo.cellsize() / 2.0)
}

pub fn extract_profile_with_step(
    geo: &GeoStack,
    site: &SiteTopology,
    x_ue: f64,
    y_ue: f64,
    h_ue: f64,
    step: f64,
) -> Result<PathProfile, ProfileError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(ProfileError::Step(step));
    }
    let bs = geo.sample(site.x, site.y)?;
    let ue = geo.sample(x_ue, y_ue)?;
    let dx = x_ue - site.x;
    let dy = y_ue - site.y;
    let d = dx.hypot(dy);
    if d == 0.0 {
        return Err(ProfileError::Degenerate { x: x_ue, y: y_ue });
    }
    let z_bs = bs.ground + bs.building + site.h_bs;
    let z_ue = ue.ground + ue.building;

    let ts = sample_positions(d, step);
    let last = ts.len() - 1;
    let mut samples = Vec::with_capacity(ts.len());
    for (i, &t) in ts.iter().enumerate() {
        let cell = if i == 0 {
            bs
        } else if i == last {
            ue
        } else {
            let f = t / d;
            geo.sample(site.x + dx * f, site.y + dy * f)?
        };
        samples.push(ProfileSample {
            t,
            z_ground: cell.ground,
            h_building: cell.building,
            clutter: cell.clutter,
            z_ray: z_bs + (z_ue - z_bs) * t / d,
        });
    }
    Ok(PathProfile {
        samples,
        z_bs,
        z_ue,
        h_ue,
        d,
        step,
        clutter_count: geo.clutter_count,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSummary {
    pub los: bool,
    /// Distance to the first obstructed sample; `None` under line of sight.
    pub d_fd: Option<f64>,
    pub d_ld: Option<f64>,
    pub n_pen: usize,
    pub d_indoor: f64,
    pub d_outdoor: f64,
    pub n_pen_c: Vec<usize>,
    pub d_indoor_c: Vec<f64>,
    pub d_outdoor_c: Vec<f64>,
    pub c_bs: usize,
    pub c_ue: usize,
}

/// Reduces a profile to line-of-sight state, diffraction points, building
/// penetrations and per-clutter indoor/outdoor distances.
///
/// The BS sample never obstructs. Each later sample owns the interval back to
/// its predecessor, so the per-sample lengths sum to `d`. A penetration is a
/// maximal run of consecutive indoor samples, credited to the class of the
/// run's first sample.
pub fn summarize_profile(p: &PathProfile) -> ProfileSummary {
    let c = p.clutter_count;
    let mut n_pen_c = vec![0usize; c];
    let mut d_indoor_c = vec![0.0; c];
    let mut d_outdoor_c = vec![0.0; c];
    let mut d_fd = None;
    let mut d_ld = None;
    let mut in_run = false;

    for (i, s) in p.samples.iter().enumerate().skip(1) {
        let seg = s.t - p.samples[i - 1].t;
        let class = s.clutter.min(c - 1);
        if s.obstructs() {
            d_fd.get_or_insert(s.t);
            d_ld = Some(s.t);
        }
        if s.is_indoor() {
            d_indoor_c[class] += seg;
            if !in_run {
                n_pen_c[class] += 1;
                in_run = true;
            }
        } else {
            d_outdoor_c[class] += seg;
            in_run = false;
        }
    }

    ProfileSummary {
        los: d_fd.is_none(),
        d_fd,
        d_ld,
        n_pen: n_pen_c.iter().sum(),
        d_indoor: d_indoor_c.iter().sum(),
        d_outdoor: d_outdoor_c.iter().sum(),
        n_pen_c,
        d_indoor_c,
        d_outdoor_c,
        c_bs: p.first().clutter,
        c_ue: p.last().clutter,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::RasterGrid;
    use crate::scenario::SiteTopology;

    fn site_at(x: f64, y: f64, h: f64) -> SiteTopology {
        SiteTopology {
            cell_id: "c".into(),
            x,
            y,
            h_bs: h,
            azimuth_deg: 90.0,
            tilt_deg: 0.0,
            tx_power_dbm: 43.0,
            freq_mhz: 2110.0,
            antenna: "iso".into(),
        }
    }

    /// 120 m × 10 m strip of 1 m cells with flat ground at 0.
    fn strip(buildings: &[(usize, usize, f64, usize)]) -> GeoStack {
        let ncols = 120;
        let nrows = 10;
        let dtm = RasterGrid::filled(ncols, nrows, 0.0, 0.0, 1.0, 0.0).unwrap();
        let mut dhm = dtm.clone();
        let mut dlu = dtm.clone();
        for &(c0, c1, h, class) in buildings {
            for row in 0..nrows {
                for col in c0..c1 {
                    dhm.set(col, row, h);
                    dlu.set(col, row, class as f64);
                }
            }
        }
        GeoStack::new(dtm, dhm, dlu, 4).unwrap()
    }

    #[test]
    fn open_flat_city_is_line_of_sight() {
        let geo = strip(&[]);
        let p = extract_profile(&geo, &site_at(5.5, 5.5, 30.0), 105.5, 5.5, 1.5).unwrap();
        assert!(p.samples.iter().all(|s| s.z_ray >= s.z_ground));
        let s = summarize_profile(&p);
        assert!(s.los);
        assert_eq!(s.n_pen, 0);
        assert_eq!(s.d_indoor, 0.0);
        assert!((s.d_outdoor - p.d).abs() <= p.step);
        assert_eq!(s.d_fd, None);
    }

    #[test]
    fn colocated_endpoints_are_degenerate() {
        let geo = strip(&[]);
        let err = extract_profile(&geo, &site_at(5.5, 5.5, 30.0), 5.5, 5.5, 1.5).unwrap_err();
        assert!(matches!(err, ProfileError::Degenerate { .. }));
    }

    #[test]
    fn sample_count_follows_step() {
        for (d, step) in [(100.0, 0.5), (37.3, 2.5), (0.3, 0.5), (1e3 / 3.0, 0.25)] {
            let ts = sample_positions(d, step);
            let expect = ((d / step).floor() as usize).max(1) + 1;
            assert_eq!(ts.len(), expect, "d={d} step={step}");
            assert_eq!(*ts.last().unwrap(), d);
            assert!(ts.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn single_building_on_level_ray() {
        // BS mast and UE rooftop both at 10 m; the ray is level at 10 m and
        // the 20 m block spans t in [40, 60] of a 100 m path.
        let geo = {
            let mut g = strip(&[(44, 64, 20.0, 3)]);
            for row in 0..10 {
                g.dhm.set(104, row, 10.0);
            }
            g
        };
        let p = extract_profile(&geo, &site_at(4.0, 5.5, 10.0), 104.0, 5.5, 1.5).unwrap();
        assert!((p.d - 100.0).abs() < 1e-12);
        assert!(p.samples.iter().all(|s| (s.z_ray - 10.0).abs() < 1e-12));
        let s = summarize_profile(&p);
        let tol = p.step;
        assert!(!s.los);
        assert!((s.d_fd.unwrap() - 40.0).abs() <= tol, "{:?}", s.d_fd);
        assert!((s.d_ld.unwrap() - 60.0).abs() <= tol, "{:?}", s.d_ld);
        assert_eq!(s.n_pen, 1);
        assert_eq!(s.n_pen_c[3], 1);
        assert!((s.d_indoor - 20.0).abs() <= tol);
        assert!((s.d_indoor_c[3] - 20.0).abs() <= tol);
    }

    #[test]
    fn two_buildings_count_twice() {
        let geo = strip(&[(30, 40, 25.0, 3), (70, 80, 25.0, 2)]);
        let p = extract_profile(&geo, &site_at(2.5, 5.5, 12.0), 110.5, 5.5, 1.5).unwrap();
        let s = summarize_profile(&p);
        assert_eq!(s.n_pen, 2);
        assert_eq!(s.n_pen_c.iter().sum::<usize>(), 2);
        assert_eq!((s.n_pen_c[2], s.n_pen_c[3]), (1, 1));
        assert!(s.d_fd.unwrap() <= s.d_ld.unwrap());
    }

    #[test]
    fn finer_step_keeps_obstruction() {
        let geo = strip(&[(50, 52, 30.0, 1)]);
        let site = site_at(2.5, 5.5, 15.0);
        for step in [0.5, 0.25, 0.1, 0.05] {
            let p = extract_profile_with_step(&geo, &site, 110.5, 5.5, 1.5, step).unwrap();
            assert!(!summarize_profile(&p).los, "step {step}");
        }
    }

    #[test]
    fn sums_are_consistent() {
        let geo = strip(&[(20, 35, 18.0, 3), (36, 50, 9.0, 1), (80, 95, 30.0, 2)]);
        let p = extract_profile(&geo, &site_at(1.5, 2.5, 20.0), 118.5, 8.5, 1.5).unwrap();
        let s = summarize_profile(&p);
        assert_eq!(s.n_pen_c.iter().sum::<usize>(), s.n_pen);
        assert_eq!(s.d_indoor_c.iter().sum::<f64>(), s.d_indoor);
        assert_eq!(s.d_outdoor_c.iter().sum::<f64>(), s.d_outdoor);
        assert!((s.d_indoor + s.d_outdoor - p.d).abs() <= p.step);
    }
}
