//! Sinusoidal conditioning embedding for diffusion time and lead time.

use super::Real;
use ndarray::Array1;

/// Raw sinusoidal embedding of diffusion time `t` and lead time `k_hours`.
///
/// The first `dim/2` coordinates encode `t`, the second `dim/2` encode
/// `k_hours/120`; within each half, coordinate pairs interleave
/// (sin, cos) at frequency 10000^(-2i/dim) for pair index i. The learned
/// two-layer projection is applied downstream in the network forward pass.
pub fn embed_time_raw<F: Real>(t: f64, k_hours: f64, dim: usize) -> Array1<F> {
    assert!(dim >= 2 && dim % 2 == 0, "embed dim {dim} must be even");
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for (offset, x) in [(0usize, t), (half, k_hours / 120.0)] {
        for j in 0..half {
            let pair = (j / 2) as f64;
            let freq = 10000f64.powf(-2.0 * pair / dim as f64);
            let arg = x * freq;
            out[offset + j] = F::of(if j % 2 == 0 { arg.sin() } else { arg.cos() });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_inputs_alternate_zero_one() {
        let e: Array1<f64> = embed_time_raw(0.0, 0.0, 64);
        for (j, &v) in e.iter().enumerate() {
            assert_eq!(v, if j % 2 == 0 { 0.0 } else { 1.0 }, "coordinate {j}");
        }
    }

    #[test]
    fn deterministic_bitwise() {
        let a: Array1<f64> = embed_time_raw(0.37, 48.0, 64);
        let b: Array1<f64> = embed_time_raw(0.37, 48.0, 64);
        assert_eq!(a, b);
    }

    #[test]
    fn nearby_times_differ_in_every_sin_coordinate() {
        let a: Array1<f64> = embed_time_raw(0.5, 24.0, 64);
        let b: Array1<f64> = embed_time_raw(0.5 + 1e-3, 24.0, 64);
        for j in (0..32).step_by(2) {
            assert_ne!(a[j], b[j], "sin coordinate {j}");
        }
        // Lead-time half untouched.
        for j in 32..64 {
            assert_eq!(a[j], b[j]);
        }
    }

    #[test]
    fn lead_time_is_normalized_by_120() {
        let a: Array1<f64> = embed_time_raw(0.0, 120.0, 8);
        // Second half encodes x = 1.0: first pair sin(1), cos(1).
        assert!((a[4] - 1f64.sin()).abs() < 1e-15);
        assert!((a[5] - 1f64.cos()).abs() < 1e-15);
    }
}
