//! Window cropping and field resampling operators.

use super::{FieldStack, GridError, Result};
use ndarray::{Array2, Array3, ArrayView2};

/// Crop a window of `size_deg` × `size_deg` centred on the grid node
/// nearest to `center` = (lat, lon), keeping the source spacing.
///
/// Cells falling outside the source domain are filled by edge replication
/// and the returned flag is set. The node snap uses round-half-up on the
/// fractional row/column, which makes the operation idempotent and makes a
/// full-extent crop at the source centre an exact identity.
pub fn crop_window(
    stack: &FieldStack,
    center: (f64, f64),
    size_deg: f64,
) -> Result<(FieldStack, bool)> {
    let geo = &stack.geo;
    let (ext_ns, ext_ew) = geo.extent_deg();
    let source_deg = ext_ns.max(ext_ew);
    if size_deg <= 0.0 {
        return Err(GridError::Invalid {
            what: "crop size",
            why: format!("{size_deg}° is not positive"),
        });
    }
    if size_deg > 4.0 * source_deg {
        return Err(GridError::CropTooLarge {
            requested_deg: size_deg,
            source_deg,
        });
    }
    let nh = (size_deg / geo.dlat).round().max(1.0) as usize;
    let nw = (size_deg / geo.dlon).round().max(1.0) as usize;

    let (fr, fc) = geo.rowcol_of(center.0, center.1);
    let ci = (fr + 0.5).floor() as i64;
    let cj = (fc + 0.5).floor() as i64;
    let i0 = ci - (nh as i64) / 2;
    let j0 = cj - (nw as i64) / 2;

    let h = geo.h as i64;
    let w = geo.w as i64;
    let padded = i0 < 0 || j0 < 0 || i0 + nh as i64 > h || j0 + nw as i64 > w;

    let c = stack.channels.len();
    let mut out = Array3::<f32>::zeros((c, nh, nw));
    for ch in 0..c {
        let src = stack.data.index_axis(ndarray::Axis(0), ch);
        let mut dst = out.index_axis_mut(ndarray::Axis(0), ch);
        for r in 0..nh {
            let sr = (i0 + r as i64).clamp(0, h - 1) as usize;
            for col in 0..nw {
                let sc = (j0 + col as i64).clamp(0, w - 1) as usize;
                dst[[r, col]] = src[[sr, sc]];
            }
        }
    }

    let out_geo = super::GeoWindow {
        lat_center: geo.lat_center
            + ((geo.h as f64 - 1.0) / 2.0 - i0 as f64 - (nh as f64 - 1.0) / 2.0) * geo.dlat,
        lon_center: geo.lon_center
            - ((geo.w as f64 - 1.0) / 2.0 - j0 as f64 - (nw as f64 - 1.0) / 2.0) * geo.dlon,
        dlat: geo.dlat,
        dlon: geo.dlon,
        h: nh,
        w: nw,
    };
    let cropped = FieldStack::new(
        stack.channels.clone(),
        out,
        out_geo,
        stack.valid_time,
        stack.lead_hours,
    )?;
    Ok((cropped, padded))
}

/// Sample a field at fractional (row, col) by bilinear interpolation with
/// edge replication outside the domain.
pub fn sample_bilinear(field: ArrayView2<'_, f32>, row: f64, col: f64) -> f64 {
    let (h, w) = field.dim();
    let r = row.clamp(0.0, h as f64 - 1.0);
    let c = col.clamp(0.0, w as f64 - 1.0);
    let r0 = r.floor() as usize;
    let c0 = c.floor() as usize;
    let r1 = (r0 + 1).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let fr = r - r0 as f64;
    let fc = c - c0 as f64;
    let v00 = field[[r0, c0]] as f64;
    let v01 = field[[r0, c1]] as f64;
    let v10 = field[[r1, c0]] as f64;
    let v11 = field[[r1, c1]] as f64;
    v00 * (1.0 - fr) * (1.0 - fc) + v01 * (1.0 - fr) * fc + v10 * fr * (1.0 - fc) + v11 * fr * fc
}

/// Resample to `h2` × `w2` with corner-aligned bilinear interpolation:
/// output corner nodes coincide with input corner nodes.
pub fn bilinear_resample(field: ArrayView2<'_, f32>, h2: usize, w2: usize) -> Result<Array2<f32>> {
    let (h, w) = field.dim();
    if h < 2 || w < 2 {
        return Err(GridError::Invalid {
            what: "resample source",
            why: format!("{h}x{w} is smaller than 2x2"),
        });
    }
    if h2 < 2 || w2 < 2 {
        return Err(GridError::Invalid {
            what: "resample target",
            why: format!("{h2}x{w2} is smaller than 2x2"),
        });
    }
    if (h2, w2) == (h, w) {
        return Ok(field.to_owned());
    }
    let ry = (h - 1) as f64 / (h2 - 1) as f64;
    let rx = (w - 1) as f64 / (w2 - 1) as f64;
    let mut out = Array2::<f32>::zeros((h2, w2));
    for i in 0..h2 {
        let sy = i as f64 * ry;
        for j in 0..w2 {
            let sx = j as f64 * rx;
            out[[i, j]] = sample_bilinear(field, sy, sx) as f32;
        }
    }
    Ok(out)
}

/// Displace field content by (`dy`, `dx`) cells (positive = toward larger
/// row/column indices) using bilinear resampling with edge replication.
pub fn shift_bilinear(field: ArrayView2<'_, f32>, dy: f64, dx: f64) -> Array2<f32> {
    let (h, w) = field.dim();
    let mut out = Array2::<f32>::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            out[[i, j]] = sample_bilinear(field, i as f64 - dy, j as f64 - dx) as f32;
        }
    }
    out
}

/// Normalized Gaussian kernel with radius ⌈3σ⌉.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Mirror an out-of-range index back into [0, n) (symmetric reflection,
/// edge sample included: -1 → 0, -2 → 1, n → n-1).
fn reflect(i: i64, n: i64) -> usize {
    let period = 2 * n;
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

/// Separable Gaussian blur with a normalized kernel and reflect boundary.
/// `sigma` ≤ 0 returns the field unchanged.
pub fn gaussian_blur(field: ArrayView2<'_, f32>, sigma: f64) -> Array2<f32> {
    if sigma <= 0.0 {
        return field.to_owned();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (h, w) = field.dim();
    let (hi, wi) = (h as i64, w as i64);

    let mut rows = Array2::<f64>::zeros((h, w));
    for i in 0..h {
        for j in 0..wi {
            let mut acc = 0.0;
            for (t, kv) in kernel.iter().enumerate() {
                let jj = reflect(j + t as i64 - radius, wi);
                acc += kv * field[[i, jj]] as f64;
            }
            rows[[i, j as usize]] = acc;
        }
    }
    let mut out = Array2::<f32>::zeros((h, w));
    for j in 0..w {
        for i in 0..hi {
            let mut acc = 0.0;
            for (t, kv) in kernel.iter().enumerate() {
                let ii = reflect(i + t as i64 - radius, hi);
                acc += kv * rows[[ii, j]];
            }
            out[[i as usize, j]] = acc as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GeoWindow;
    use ndarray::{array, Array3};

    fn stack_8x8() -> FieldStack {
        let geo = GeoWindow::square(20.0, 130.0, 8.0, 8).unwrap();
        let mut data = Array3::zeros((1, 8, 8));
        for i in 0..8 {
            for j in 0..8 {
                data[[0, i, j]] = (10 * i + j) as f32;
            }
        }
        FieldStack::new(vec![crate::grid::ChannelId::Msl], data, geo, 0, 0).unwrap()
    }

    #[test]
    fn identity_crop() {
        let s = stack_8x8();
        let (out, padded) = crop_window(&s, (20.0, 130.0), 8.0).unwrap();
        assert!(!padded);
        assert_eq!(out.data, s.data);
        assert_eq!(out.geo, s.geo);
    }

    #[test]
    fn interior_crop_is_pure_indexing() {
        let s = stack_8x8();
        // Node (2,2) has lat 20 + (3.5-2)*1 = 21.5, lon 130 - 1.5.
        let (out, padded) = crop_window(&s, (21.5, 128.5), 4.0).unwrap();
        assert!(!padded);
        assert_eq!(out.geo.h, 4);
        // Window rows 0..4, cols 0..4 of the source.
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(out.data[[0, i, j]], s.data[[0, i, j]]);
            }
        }
    }

    #[test]
    fn west_overhang_replicates_column_zero() {
        let s = stack_8x8();
        // One column west of the west edge.
        let center_lon = s.geo.lon_of_col(0.0);
        let center_lat = s.geo.lat_of_row(3.0);
        let (out, padded) = crop_window(&s, (center_lat, center_lon), 4.0).unwrap();
        assert!(padded);
        // Output columns: source cols -2,-1,0,1 → 0,0,0,1.
        for i in 0..4 {
            assert_eq!(out.data[[0, i, 0]], out.data[[0, i, 1]]);
            assert_eq!(out.data[[0, i, 1]], out.data[[0, i, 2]]);
            assert_ne!(out.data[[0, i, 2]], out.data[[0, i, 3]]);
        }
    }

    #[test]
    fn oversize_crop_rejected() {
        let s = stack_8x8();
        let err = crop_window(&s, (20.0, 130.0), 33.0).unwrap_err();
        assert!(matches!(err, GridError::CropTooLarge { .. }));
    }

    #[test]
    fn crop_idempotent() {
        let s = stack_8x8();
        let center = (21.37, 128.9);
        let (once, _) = crop_window(&s, center, 5.0).unwrap();
        let (twice, padded) = crop_window(&once, center, 5.0).unwrap();
        assert!(!padded);
        assert_eq!(once.data, twice.data);
        assert_eq!(once.geo, twice.geo);
    }

    #[test]
    fn resample_identity_and_constant() {
        let f = array![[0.0f32, 1.0], [0.0, 1.0]];
        let same = bilinear_resample(f.view(), 2, 2).unwrap();
        assert_eq!(same, f);
        let c = Array2::from_elem((5, 7), 3.25f32);
        let r = bilinear_resample(c.view(), 9, 3).unwrap();
        assert!(r.iter().all(|&v| (v - 3.25).abs() < 1e-6));
    }

    #[test]
    fn resample_midpoint_weights() {
        let f = array![[0.0f32, 1.0], [0.0, 1.0]];
        let r = bilinear_resample(f.view(), 2, 3).unwrap();
        assert_eq!(r.dim(), (2, 3));
        for i in 0..2 {
            assert!((r[[i, 0]] - 0.0).abs() < 1e-7);
            assert!((r[[i, 1]] - 0.5).abs() < 1e-7);
            assert!((r[[i, 2]] - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn resample_rejects_small_target() {
        let f = Array2::<f32>::zeros((4, 4));
        assert!(bilinear_resample(f.view(), 1, 4).is_err());
    }

    #[test]
    fn shift_moves_content() {
        let mut f = Array2::<f32>::zeros((9, 9));
        f[[4, 4]] = 1.0;
        let s = shift_bilinear(f.view(), 2.0, -1.0);
        assert_eq!(s[[6, 3]], 1.0);
        assert_eq!(s[[4, 4]], 0.0);
    }

    #[test]
    fn blur_preserves_constant_and_mass_center_weight() {
        let c = Array2::from_elem((16, 16), 2.5f32);
        let b = gaussian_blur(c.view(), 1.0);
        assert!(b.iter().all(|&v| (v - 2.5).abs() < 1e-6));

        let mut f = Array2::<f32>::zeros((17, 17));
        f[[8, 8]] = 1.0;
        let b = gaussian_blur(f.view(), 1.0);
        // Separable kernel: center weight is the squared 1-D center weight.
        let k = gaussian_kernel(1.0);
        let w0 = k[k.len() / 2];
        assert!((b[[8, 8]] as f64 - w0 * w0).abs() < 1e-9);
    }

    #[test]
    fn blur_never_exceeds_input_max() {
        let mut f = Array2::<f32>::zeros((12, 12));
        f[[3, 9]] = 7.0;
        f[[11, 0]] = -2.0;
        let b = gaussian_blur(f.view(), 1.5);
        let max_in = f.iter().cloned().fold(f32::MIN, f32::max);
        let max_out = b.iter().cloned().fold(f32::MIN, f32::max);
        assert!(max_out <= max_in + 1e-5);
    }
}
