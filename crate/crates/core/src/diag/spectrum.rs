//! Isotropic power spectra on square grids.

use super::{DiagError, Result};
use ndarray::ArrayView2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Which quantity a spectrum was computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectrumVariant {
    /// Spectral variance of one scalar field.
    Scalar,
    /// 0.5 (|û|² + |v̂|²): kinetic energy of a wind pair.
    KineticEnergy,
}

/// Binned isotropic spectrum.
///
/// Bin i holds the total spectral power of the modes whose rounded radial
/// wavenumber equals `k[i]`; `mode_count[i]` is how many modes landed in the
/// bin, so `density(i)` compares bins of different solid angle fairly.
#[derive(Clone, Debug)]
pub struct SpectrumSet {
    pub k: Vec<usize>,
    pub power: Vec<f64>,
    pub mode_count: Vec<usize>,
    pub variant: SpectrumVariant,
}

impl SpectrumSet {
    /// Mean power per mode in bin `i`.
    pub fn density(&self, i: usize) -> f64 {
        if self.mode_count[i] == 0 {
            0.0
        } else {
            self.power[i] / self.mode_count[i] as f64
        }
    }

    /// Total power across all bins.
    pub fn total(&self) -> f64 {
        self.power.iter().sum()
    }
}

fn check_square(shape: (usize, usize)) -> Result<usize> {
    let (h, w) = shape;
    if h != w {
        return Err(DiagError::NonSquare { h, w });
    }
    if h < 4 {
        return Err(DiagError::Invalid {
            what: "grid size",
            why: format!("{h} < 4"),
        });
    }
    Ok(h)
}

/// 2D DFT of `field` with its mean removed, as |f̂|²/(H·W) per mode.
fn mode_powers(field: ArrayView2<'_, f32>, n: usize) -> Vec<f64> {
    let mean = field.iter().map(|&v| v as f64).sum::<f64>() / (n * n) as f64;
    let mut buf: Vec<Complex64> = field
        .iter()
        .map(|&v| Complex64::new(v as f64 - mean, 0.0))
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    // Rows in place.
    for row in buf.chunks_exact_mut(n) {
        fft.process(row);
    }
    // Columns via transpose, transform, transpose back.
    let mut tr = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            tr[j * n + i] = buf[i * n + j];
        }
    }
    for row in tr.chunks_exact_mut(n) {
        fft.process(row);
    }
    for i in 0..n {
        for j in 0..n {
            buf[i * n + j] = tr[j * n + i];
        }
    }
    let norm = (n * n) as f64;
    buf.iter().map(|c| c.norm_sqr() / norm).collect()
}

/// Signed wavenumber of DFT index `i` on an axis of length `n`.
fn signed_freq(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

fn bin_modes(per_mode: &[Vec<f64>], n: usize, variant: SpectrumVariant) -> SpectrumSet {
    let kmax = n / 2;
    let mut power = vec![0.0; kmax];
    let mut count = vec![0usize; kmax];
    for i in 0..n {
        for j in 0..n {
            if i == 0 && j == 0 {
                continue;
            }
            let kr = signed_freq(i, n).hypot(signed_freq(j, n));
            let mut bin = kr.round() as usize;
            if bin == 0 {
                bin = 1;
            }
            // Corner modes land beyond N/2; fold them into the top bin so
            // the binned total matches the field variance.
            bin = bin.min(kmax);
            let idx = i * n + j;
            let p: f64 = per_mode.iter().map(|m| m[idx]).sum();
            power[bin - 1] += p;
            count[bin - 1] += 1;
        }
    }
    SpectrumSet {
        k: (1..=kmax).collect(),
        power,
        mode_count: count,
        variant,
    }
}

/// Isotropic power spectrum of one scalar field (mean removed).
///
/// The total over bins equals the field variance times H·W (a discrete
/// Parseval identity).
pub fn power_spectrum(field: ArrayView2<'_, f32>) -> Result<SpectrumSet> {
    let n = check_square(field.dim())?;
    let modes = mode_powers(field, n);
    Ok(bin_modes(&[modes], n, SpectrumVariant::Scalar))
}

/// Isotropic kinetic-energy spectrum 0.5 (|û|² + |v̂|²) of a wind pair.
pub fn kinetic_energy_spectrum(
    u: ArrayView2<'_, f32>,
    v: ArrayView2<'_, f32>,
) -> Result<SpectrumSet> {
    if u.dim() != v.dim() {
        return Err(DiagError::Invalid {
            what: "wind component shapes",
            why: format!("u {:?} vs v {:?}", u.dim(), v.dim()),
        });
    }
    let n = check_square(u.dim())?;
    let mu: Vec<f64> = mode_powers(u, n).iter().map(|p| 0.5 * p).collect();
    let mv: Vec<f64> = mode_powers(v, n).iter().map(|p| 0.5 * p).collect();
    Ok(bin_modes(&[mu, mv], n, SpectrumVariant::KineticEnergy))
}
