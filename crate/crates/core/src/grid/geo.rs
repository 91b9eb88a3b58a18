//! Window geometry and great-circle distance.

use super::{GridError, Result};
use serde::{Deserialize, Serialize};

/// Spherical Earth radius used throughout, km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Geographic extent of a regular lat/lon window.
///
/// Row 0 is the northernmost row, column 0 the westernmost column; the
/// window is centered on (`lat_center`, `lon_center`) with per-cell spacing
/// `dlat`/`dlon` in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoWindow {
    pub lat_center: f64,
    pub lon_center: f64,
    pub dlat: f64,
    pub dlon: f64,
    pub h: usize,
    pub w: usize,
}

impl GeoWindow {
    /// Square window of `n`×`n` cells spanning `extent_deg` degrees.
    pub fn square(lat_center: f64, lon_center: f64, extent_deg: f64, n: usize) -> Result<Self> {
        if n == 0 || extent_deg <= 0.0 {
            return Err(GridError::Invalid {
                what: "geo window",
                why: format!("extent {extent_deg}° over {n} cells"),
            });
        }
        let d = extent_deg / n as f64;
        Ok(GeoWindow {
            lat_center,
            lon_center,
            dlat: d,
            dlon: d,
            h: n,
            w: n,
        })
    }

    /// Latitude of the node at `row` (row 0 is northernmost).
    pub fn lat_of_row(&self, row: f64) -> f64 {
        self.lat_center + ((self.h as f64 - 1.0) / 2.0 - row) * self.dlat
    }

    /// Longitude of the node at `col` (column 0 is westernmost).
    pub fn lon_of_col(&self, col: f64) -> f64 {
        self.lon_center + (col - (self.w as f64 - 1.0) / 2.0) * self.dlon
    }

    /// Fractional (row, col) of a geographic point.
    pub fn rowcol_of(&self, lat: f64, lon: f64) -> (f64, f64) {
        let row = (self.h as f64 - 1.0) / 2.0 - (lat - self.lat_center) / self.dlat;
        let col = (self.w as f64 - 1.0) / 2.0 + (lon - self.lon_center) / self.dlon;
        (row, col)
    }

    /// North-south and east-west extent in degrees.
    pub fn extent_deg(&self) -> (f64, f64) {
        (self.h as f64 * self.dlat, self.w as f64 * self.dlon)
    }

    /// Kilometres spanned by one cell in latitude and in longitude, the
    /// latter evaluated at the window's central latitude (flat-Earth local
    /// approximation, adequate over ~10° windows).
    pub fn cell_km(&self) -> (f64, f64) {
        let km_per_deg = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        (
            self.dlat * km_per_deg,
            self.dlon * km_per_deg * self.lat_center.to_radians().cos(),
        )
    }

    /// Local displacement of (`lat`, `lon`) from the window center in km:
    /// `dx` eastward, `dy` northward.
    pub fn km_offset_from_center(&self, lat: f64, lon: f64) -> (f64, f64) {
        let km_per_deg = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        let dx = (lon - self.lon_center) * km_per_deg * self.lat_center.to_radians().cos();
        let dy = (lat - self.lat_center) * km_per_deg;
        (dx, dy)
    }
}

/// Great-circle distance between two (lat, lon) points in degrees, km.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (la, fa) = (a.0.to_radians(), a.1.to_radians());
    let (lb, fb) = (b.0.to_radians(), b.1.to_radians());
    let sdlat = ((lb - la) / 2.0).sin();
    let sdlon = ((fb - fa) / 2.0).sin();
    let h = sdlat * sdlat + la.cos() * lb.cos() * sdlon * sdlon;
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}
