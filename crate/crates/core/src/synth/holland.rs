//! Parametric radial pressure and gradient-wind profiles.

use super::{Result, SynthError};
use serde::{Deserialize, Serialize};

/// Parameters of the radial vortex profile.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HollandParams {
    /// Central pressure, Pa.
    pub pc_pa: f64,
    /// Ambient pressure, Pa.
    pub pn_pa: f64,
    /// Radius of maximum wind, km.
    pub rmw_km: f64,
    /// Shape exponent, dimensionless.
    pub b: f64,
    /// Air density, kg/m³.
    pub rho: f64,
    /// Coriolis parameter, 1/s.
    pub f_coriolis: f64,
    /// Vortex center.
    pub lat: f64,
    pub lon: f64,
}

impl HollandParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.pn_pa > self.pc_pa
            && self.rmw_km > 0.0
            && (1.0..=2.5).contains(&self.b)
            && self.rho > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SynthError::Invalid {
                what: "vortex profile parameters",
                why: format!(
                    "pc {} pn {} rmw {} B {} rho {}",
                    self.pc_pa, self.pn_pa, self.rmw_km, self.b, self.rho
                ),
            })
        }
    }

    /// Pressure deficit pn − pc, Pa.
    pub fn dp(&self) -> f64 {
        self.pn_pa - self.pc_pa
    }

    /// Peak gradient wind at r = rmw when f = 0: √(B·Δp/(ρ·e)).
    pub fn vmax_cyclostrophic(&self) -> f64 {
        (self.b * self.dp() / (self.rho * std::f64::consts::E)).sqrt()
    }
}

/// Radial surface-pressure profile: p(r) = pc + Δp·exp(−(rmw/r)^B).
///
/// Monotone nondecreasing in r, with p(0) = pc and p(∞) = pn.
pub fn holland_pressure(r_km: f64, p: &HollandParams) -> f64 {
    let x = (p.rmw_km / r_km).powf(p.b);
    p.pc_pa + p.dp() * (-x).exp()
}

/// Radial gradient-wind profile, m/s:
/// V(r) = √(B·Δp/ρ·(rmw/r)^B·exp(−(rmw/r)^B) + (r·f/2)²) − r·|f|/2,
/// with r in meters inside the formula; V(0) = 0 by continuity.
pub fn holland_wind(r_km: f64, p: &HollandParams) -> f64 {
    if r_km <= 0.0 {
        return 0.0;
    }
    let x = (p.rmw_km / r_km).powf(p.b);
    let r_m = r_km * 1000.0;
    let term = p.b * p.dp() / p.rho * x * (-x).exp();
    let coriolis_half = r_m * p.f_coriolis.abs() / 2.0;
    (term + coriolis_half * coriolis_half).sqrt() - coriolis_half
}
