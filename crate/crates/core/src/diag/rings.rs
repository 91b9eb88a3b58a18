//! Storm-centred ring diagnostics: wind decomposition, azimuthal means,
//! harmonics, and the radius of maximum wind.

use super::{DiagError, Result};
use crate::grid::{sample_bilinear, GeoWindow, EARTH_RADIUS_KM};
use ndarray::{Array2, ArrayView2};

/// Azimuthal means over a set of rings.
#[derive(Clone, Debug)]
pub struct RadialProfile {
    pub radii_km: Vec<f64>,
    pub values: Vec<f64>,
    /// Samples per ring used to build the means.
    pub n_theta: usize,
}

/// Per-ring azimuthal Fourier amplitudes and phases.
///
/// `amplitudes[[i, k]]` follows the convention f(θ) ≈ A₀ + Σ Aₖcos(kθ+φₖ):
/// A₀ is the ring mean and Aₖ = 2|cₖ|/n for k ≥ 1. Rings that exit the
/// domain are flagged invalid and carry zeros.
#[derive(Clone, Debug)]
pub struct HarmonicSpectrum {
    pub radii_km: Vec<f64>,
    pub amplitudes: Array2<f64>,
    pub phases: Array2<f64>,
    pub valid: Vec<bool>,
    pub n_theta: usize,
}

/// Result of the radius-of-maximum-wind search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmwEstimate {
    pub radius_km: f64,
    /// True when the maximum sat on the profile boundary and no parabolic
    /// refinement was possible.
    pub boundary: bool,
}

const KM_PER_DEG: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

/// Local east/north displacement in km of every cell from `center`
/// = (lat, lon), flat-Earth with cos(center latitude).
fn cell_offsets_km(geo: &GeoWindow, center: (f64, f64)) -> (Vec<f64>, Vec<f64>) {
    let coslat = center.0.to_radians().cos();
    let dys: Vec<f64> = (0..geo.h)
        .map(|i| (geo.lat_of_row(i as f64) - center.0) * KM_PER_DEG)
        .collect();
    let dxs: Vec<f64> = (0..geo.w)
        .map(|j| (geo.lon_of_col(j as f64) - center.1) * KM_PER_DEG * coslat)
        .collect();
    (dxs, dys)
}

/// Decompose winds about `center` into radial (positive outward) and
/// tangential (positive counterclockwise) components; both are 0 at r = 0.
pub fn tangential_radial(
    u: ArrayView2<'_, f32>,
    v: ArrayView2<'_, f32>,
    geo: &GeoWindow,
    center: (f64, f64),
) -> Result<(Array2<f64>, Array2<f64>)> {
    if u.dim() != v.dim() || u.dim() != (geo.h, geo.w) {
        return Err(DiagError::Invalid {
            what: "wind component shapes",
            why: format!("u {:?}, v {:?}, geo {}x{}", u.dim(), v.dim(), geo.h, geo.w),
        });
    }
    let (dxs, dys) = cell_offsets_km(geo, center);
    let mut vt = Array2::<f64>::zeros(u.dim());
    let mut ur = Array2::<f64>::zeros(u.dim());
    for i in 0..geo.h {
        for j in 0..geo.w {
            let (dx, dy) = (dxs[j], dys[i]);
            let r = dx.hypot(dy);
            if r == 0.0 {
                continue;
            }
            let uu = u[[i, j]] as f64;
            let vv = v[[i, j]] as f64;
            ur[[i, j]] = (uu * dx + vv * dy) / r;
            vt[[i, j]] = (-uu * dy + vv * dx) / r;
        }
    }
    Ok((vt, ur))
}

/// Positions of `n_theta` equally spaced ring samples in fractional grid
/// coordinates, or None when the ring exits the domain.
fn ring_rowcols(
    geo: &GeoWindow,
    center: (f64, f64),
    r_km: f64,
    n_theta: usize,
) -> Option<Vec<(f64, f64)>> {
    let coslat = center.0.to_radians().cos();
    let mut pts = Vec::with_capacity(n_theta);
    for j in 0..n_theta {
        let theta = std::f64::consts::TAU * j as f64 / n_theta as f64;
        let lat = center.0 + r_km * theta.sin() / KM_PER_DEG;
        let lon = center.1 + r_km * theta.cos() / (KM_PER_DEG * coslat);
        let (row, col) = geo.rowcol_of(lat, lon);
        if row < 0.0 || row > (geo.h - 1) as f64 || col < 0.0 || col > (geo.w - 1) as f64 {
            return None;
        }
        pts.push((row, col));
    }
    Some(pts)
}

fn check_ring_args(radii_km: &[f64], n_theta: usize) -> Result<()> {
    if radii_km.is_empty() || radii_km.windows(2).any(|w| w[1] <= w[0]) || radii_km[0] <= 0.0 {
        return Err(DiagError::Invalid {
            what: "ring radii",
            why: "must be positive and strictly increasing".into(),
        });
    }
    if n_theta < 4 {
        return Err(DiagError::Invalid {
            what: "n_theta",
            why: format!("{n_theta} < 4"),
        });
    }
    Ok(())
}

/// Azimuthal mean of `field` on each ring. Rings exiting the domain are
/// dropped from the profile.
pub fn azimuthal_mean_profile(
    field: ArrayView2<'_, f32>,
    geo: &GeoWindow,
    center: (f64, f64),
    radii_km: &[f64],
    n_theta: usize,
) -> Result<RadialProfile> {
    check_ring_args(radii_km, n_theta)?;
    let mut radii = Vec::new();
    let mut values = Vec::new();
    for &r in radii_km {
        if let Some(pts) = ring_rowcols(geo, center, r, n_theta) {
            let mean = pts
                .iter()
                .map(|&(row, col)| sample_bilinear(field, row, col))
                .sum::<f64>()
                / n_theta as f64;
            radii.push(r);
            values.push(mean);
        }
    }
    Ok(RadialProfile {
        radii_km: radii,
        values,
        n_theta,
    })
}

/// Azimuthal Fourier decomposition of `field` on storm-centred rings.
///
/// Each ring is sampled bilinearly at `n_theta` equal angles and transformed
/// over angle; requires k_max ≤ n_theta/2 − 1.
pub fn azimuthal_decompose(
    field: ArrayView2<'_, f32>,
    geo: &GeoWindow,
    center: (f64, f64),
    radii_km: &[f64],
    n_theta: usize,
    k_max: usize,
) -> Result<HarmonicSpectrum> {
    check_ring_args(radii_km, n_theta)?;
    if k_max > n_theta / 2 - 1 {
        return Err(DiagError::Invalid {
            what: "k_max",
            why: format!("{k_max} exceeds n_theta/2 - 1 = {}", n_theta / 2 - 1),
        });
    }
    let nr = radii_km.len();
    let mut amplitudes = Array2::<f64>::zeros((nr, k_max + 1));
    let mut phases = Array2::<f64>::zeros((nr, k_max + 1));
    let mut valid = vec![false; nr];

    for (ri, &r) in radii_km.iter().enumerate() {
        let Some(pts) = ring_rowcols(geo, center, r, n_theta) else {
            continue;
        };
        valid[ri] = true;
        let samples: Vec<f64> = pts
            .iter()
            .map(|&(row, col)| sample_bilinear(field, row, col))
            .collect();
        for k in 0..=k_max {
            let mut re = 0.0;
            let mut im = 0.0;
            for (j, &s) in samples.iter().enumerate() {
                let ang = std::f64::consts::TAU * (k * j) as f64 / n_theta as f64;
                re += s * ang.cos();
                im -= s * ang.sin();
            }
            if k == 0 {
                amplitudes[[ri, 0]] = re / n_theta as f64;
                phases[[ri, 0]] = 0.0;
            } else {
                amplitudes[[ri, k]] = 2.0 * re.hypot(im) / n_theta as f64;
                phases[[ri, k]] = im.atan2(re);
            }
        }
    }
    Ok(HarmonicSpectrum {
        radii_km: radii_km.to_vec(),
        amplitudes,
        phases,
        valid,
        n_theta,
    })
}

/// Radius of the profile maximum, refined by a 3-point parabolic fit
/// (exact for quadratics, radii need not be uniform). Ties break toward
/// the smallest radius; a boundary maximum is returned unrefined with the
/// boundary flag set.
pub fn radius_of_max_wind(profile: &RadialProfile) -> Result<RmwEstimate> {
    let n = profile.values.len();
    if n < 3 {
        return Err(DiagError::Invalid {
            what: "radial profile",
            why: format!("{n} radii < 3"),
        });
    }
    let mut arg = 0usize;
    for (i, &v) in profile.values.iter().enumerate() {
        if v > profile.values[arg] {
            arg = i;
        }
    }
    if arg == 0 || arg == n - 1 {
        return Ok(RmwEstimate {
            radius_km: profile.radii_km[arg],
            boundary: true,
        });
    }
    let (x0, x1, x2) = (
        profile.radii_km[arg - 1],
        profile.radii_km[arg],
        profile.radii_km[arg + 1],
    );
    let (y0, y1, y2) = (
        profile.values[arg - 1],
        profile.values[arg],
        profile.values[arg + 1],
    );
    // A neighbor tied with the maximum means a plateau; the smallest radius
    // of the plateau is the answer and a parabola through it is degenerate.
    if y1 == y0 || y1 == y2 {
        return Ok(RmwEstimate {
            radius_km: x1,
            boundary: false,
        });
    }
    // Vertex of the quadratic through the three points; a strict interior
    // maximum guarantees negative curvature.
    let d0 = (y1 - y0) / (x1 - x0);
    let d1 = (y2 - y1) / (x2 - x1);
    let curvature = (d1 - d0) / (x2 - x0);
    let vertex = 0.5 * (x0 + x1 - d0 / curvature);
    Ok(RmwEstimate {
        radius_km: vertex.clamp(x0, x2),
        boundary: false,
    })
}
