//! Rendering a parametric vortex into the 21-channel stack.

use super::holland::{holland_pressure, holland_wind, HollandParams};
use super::{Result, SynthError};
use crate::grid::{ChannelId, CycloneFix, FieldStack, GeoWindow, EARTH_RADIUS_KM};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

/// One azimuthal harmonic perturbation of the wind field.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Harmonic {
    /// Wavenumber, ≥ 1.
    pub k: u32,
    /// Amplitude as a fraction of the symmetric wind.
    pub amp: f64,
    /// Phase, radians.
    pub phase: f64,
}

/// Azimuthal wind asymmetry: wind is scaled by 1 + Σ aₖ·cos(kθ + φₖ).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AsymmetrySpec {
    pub harmonics: Vec<Harmonic>,
}

impl AsymmetrySpec {
    pub fn validate(&self) -> Result<()> {
        let mut amp_sum = 0.0;
        for h in &self.harmonics {
            if h.k == 0 || h.k > 20 || !(0.0..=0.5).contains(&h.amp) {
                return Err(SynthError::Invalid {
                    what: "asymmetry harmonic",
                    why: format!("k={} amp={}", h.k, h.amp),
                });
            }
            amp_sum += h.amp;
        }
        // Σ aₖ > 1 could drive the modulation factor negative at some angle.
        if amp_sum > 1.0 {
            return Err(SynthError::Invalid {
                what: "asymmetry amplitude sum",
                why: format!("{amp_sum} > 1 would produce negative wind"),
            });
        }
        Ok(())
    }

    fn modulation(&self, theta: f64) -> f64 {
        1.0 + self
            .harmonics
            .iter()
            .map(|h| h.amp * (h.k as f64 * theta + h.phase).cos())
            .sum::<f64>()
    }
}

/// Vertical level description for the wind construction.
struct WindLevel {
    u: ChannelId,
    v: ChannelId,
    /// Fraction of the gradient wind carried at this level.
    scale: f64,
    /// Cross-isobar flow angle, degrees; positive = inflow, negative = outflow.
    inflow_deg: f64,
}

const WIND_LEVELS: [WindLevel; 5] = [
    WindLevel { u: ChannelId::U850, v: ChannelId::V850, scale: 0.95, inflow_deg: 20.0 },
    WindLevel { u: ChannelId::U700, v: ChannelId::V700, scale: 0.85, inflow_deg: 10.0 },
    WindLevel { u: ChannelId::U500, v: ChannelId::V500, scale: 0.65, inflow_deg: 0.0 },
    WindLevel { u: ChannelId::U200, v: ChannelId::V200, scale: 0.25, inflow_deg: -15.0 },
    WindLevel { u: ChannelId::U10m, v: ChannelId::V10m, scale: 0.80, inflow_deg: 25.0 },
];

/// Climatological bases and anomaly parameters per pressure level:
/// (Z channel, base height m, density kg/m³, T channel, base K, warm-core ΔT K).
const MASS_LEVELS: [(ChannelId, f64, f64, ChannelId, f64, f64); 4] = [
    (ChannelId::Z850, 1457.0, 1.06, ChannelId::T850, 288.0, 1.0),
    (ChannelId::Z700, 3012.0, 0.91, ChannelId::T700, 280.0, 2.0),
    (ChannelId::Z500, 5870.0, 0.69, ChannelId::T500, 266.0, 4.0),
    (ChannelId::Z200, 12240.0, 0.33, ChannelId::T200, 220.0, 6.0),
];

const T2M_BASE_K: f64 = 300.5;
const GRAVITY: f64 = 9.80665;

/// Render the vortex into all 21 channels over `geo`.
///
/// Winds follow the gradient profile scaled per level and rotated by the
/// level's cross-isobar angle; `env_flow` (u, v) m/s is added to every wind
/// channel; WS10M is computed from the final 10-m components. The returned
/// fix carries the exact center, the field max of WS10M and the field min
/// of MSL.
pub fn render_vortex(
    p: &HollandParams,
    asym: &AsymmetrySpec,
    geo: &GeoWindow,
    env_flow: (f64, f64),
    valid_time: i64,
) -> Result<(FieldStack, CycloneFix)> {
    p.validate()?;
    asym.validate()?;
    let (row_c, col_c) = geo.rowcol_of(p.lat, p.lon);
    if row_c < 0.0 || row_c > (geo.h - 1) as f64 || col_c < 0.0 || col_c > (geo.w - 1) as f64 {
        return Err(SynthError::Invalid {
            what: "vortex center",
            why: format!("({}, {}) outside the window", p.lat, p.lon),
        });
    }

    let km_per_deg = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
    let coslat = p.lat.to_radians().cos();
    let mut data = Array3::<f32>::zeros((21, geo.h, geo.w));

    for i in 0..geo.h {
        let lat = geo.lat_of_row(i as f64);
        let dy = (lat - p.lat) * km_per_deg;
        for j in 0..geo.w {
            let lon = geo.lon_of_col(j as f64);
            let dx = (lon - p.lon) * km_per_deg * coslat;
            let r = dx.hypot(dy);
            let theta = dy.atan2(dx);

            let v_base = holland_wind(r, p) * asym.modulation(theta);
            let msl = holland_pressure(r, p);
            let warm_core = (-(r / (2.0 * p.rmw_km)).powi(2)).exp();

            for lvl in &WIND_LEVELS {
                let speed = lvl.scale * v_base;
                let alpha = lvl.inflow_deg.to_radians();
                // Cyclonic (counterclockwise) tangential flow turned toward
                // the center by the inflow angle.
                let u = speed * (-alpha.cos() * theta.sin() - alpha.sin() * theta.cos());
                let v = speed * (alpha.cos() * theta.cos() - alpha.sin() * theta.sin());
                data[[lvl.u.index(), i, j]] = (u + env_flow.0) as f32;
                data[[lvl.v.index(), i, j]] = (v + env_flow.1) as f32;
            }

            data[[ChannelId::Msl.index(), i, j]] = msl as f32;
            for (zc, z_base, rho_lvl, tc, t_base, dt) in &MASS_LEVELS {
                let z = z_base + (msl - p.pn_pa) / (rho_lvl * GRAVITY);
                data[[zc.index(), i, j]] = z as f32;
                data[[tc.index(), i, j]] = (t_base + dt * warm_core) as f32;
            }
            data[[ChannelId::T2m.index(), i, j]] = (T2M_BASE_K + 0.2 * warm_core) as f32;

            let u10 = data[[ChannelId::U10m.index(), i, j]];
            let v10 = data[[ChannelId::V10m.index(), i, j]];
            data[[ChannelId::Ws10m.index(), i, j]] = u10.hypot(v10);
        }
    }

    let ws = data.index_axis(ndarray::Axis(0), ChannelId::Ws10m.index());
    let vmax = ws.iter().cloned().fold(f32::MIN, f32::max) as f64;
    let msl = data.index_axis(ndarray::Axis(0), ChannelId::Msl.index());
    let pmin = msl.iter().cloned().fold(f32::MAX, f32::min) as f64;

    let stack = FieldStack::full(data, *geo, valid_time, 0)?;
    let fix = CycloneFix {
        time: valid_time,
        lat: p.lat,
        lon: p.lon,
        vmax_ms: vmax,
        pmin_pa: pmin,
    };
    Ok((stack, fix))
}
