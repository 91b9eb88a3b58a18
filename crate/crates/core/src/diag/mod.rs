//! Structural diagnostics of vortex fields: tangential/radial wind
//! decomposition, azimuthal means and harmonics, radius of maximum wind,
//! isotropic power and kinetic-energy spectra, and histogram PDFs.
//!
//! Every diagnostic has a CSV emitter; together they are the numeric
//! backbone for profile/spectrum/PDF figures.

mod histogram;
mod rings;
mod spectrum;

pub use histogram::{histogram_pdf, HistogramPdf};
pub use rings::{
    azimuthal_decompose, azimuthal_mean_profile, radius_of_max_wind, tangential_radial,
    HarmonicSpectrum, RadialProfile, RmwEstimate,
};
pub use spectrum::{kinetic_energy_spectrum, power_spectrum, SpectrumSet, SpectrumVariant};

use std::io::Write;
use thiserror::Error;

/// Errors raised by the diagnostics suite.
#[derive(Debug, Error)]
pub enum DiagError {
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },
    #[error("spectra require square grids, got {h}x{w}")]
    NonSquare { h: usize, w: usize },
    #[error("empty histogram selection: no in-range values to normalize")]
    EmptyHistogram,
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DiagError>;

/// Write a (radius, value) profile as CSV.
pub fn profile_csv<W: Write>(out: &mut W, p: &RadialProfile) -> Result<()> {
    writeln!(out, "radius_km,value")?;
    for (r, v) in p.radii_km.iter().zip(&p.values) {
        writeln!(out, "{r},{v}")?;
    }
    Ok(())
}

/// Write a (radius, k, amplitude, phase) harmonic table as CSV.
/// Invalid rings (exiting the domain) are skipped.
pub fn harmonics_csv<W: Write>(out: &mut W, h: &HarmonicSpectrum) -> Result<()> {
    writeln!(out, "radius_km,k,amplitude,phase_rad")?;
    for (i, r) in h.radii_km.iter().enumerate() {
        if !h.valid[i] {
            continue;
        }
        for k in 0..h.amplitudes.ncols() {
            writeln!(out, "{r},{k},{},{}", h.amplitudes[[i, k]], h.phases[[i, k]])?;
        }
    }
    Ok(())
}

/// Write a (k, power) spectrum as CSV; the per-mode density rides along.
pub fn spectrum_csv<W: Write>(out: &mut W, s: &SpectrumSet) -> Result<()> {
    writeln!(out, "k,power,mode_count,density")?;
    for i in 0..s.k.len() {
        writeln!(
            out,
            "{},{},{},{}",
            s.k[i],
            s.power[i],
            s.mode_count[i],
            s.density(i)
        )?;
    }
    Ok(())
}

/// Write a (bin_center, density) PDF as CSV.
pub fn pdf_csv<W: Write>(out: &mut W, h: &HistogramPdf) -> Result<()> {
    writeln!(out, "bin_center,density")?;
    for i in 0..h.densities.len() {
        let center = 0.5 * (h.edges[i] + h.edges[i + 1]);
        writeln!(out, "{center},{}", h.densities[i])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_emitters_are_deterministic() {
        let p = RadialProfile {
            radii_km: vec![10.0, 20.0],
            values: vec![1.5, 2.5],
            n_theta: 128,
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        profile_csv(&mut a, &p).unwrap();
        profile_csv(&mut b, &p).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("radius_km,value\n"));
        assert!(text.contains("10,1.5"));
    }
}
