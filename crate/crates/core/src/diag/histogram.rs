//! Normalized field-value histograms.

use super::{DiagError, Result};

/// Histogram normalized to a probability density over the in-range values.
#[derive(Clone, Debug)]
pub struct HistogramPdf {
    /// Bin edges, length = densities.len() + 1.
    pub edges: Vec<f64>,
    /// Density per bin; sum(density · width) = 1.
    pub densities: Vec<f64>,
    /// Raw counts per bin.
    pub counts: Vec<usize>,
    /// Values below the first edge.
    pub below: usize,
    /// Values at or above the last edge.
    pub above: usize,
}

impl HistogramPdf {
    /// Center of bin `i`.
    pub fn bin_center(&self, i: usize) -> f64 {
        0.5 * (self.edges[i] + self.edges[i + 1])
    }
}

/// Bin `values` by `edges` (half-open [e_i, e_{i+1}), last bin closed) and
/// normalize by the in-range count so the result integrates to one.
///
/// Out-of-range values are tallied, not silently dropped; a histogram with
/// no in-range values is rejected.
pub fn histogram_pdf(values: impl IntoIterator<Item = f64>, edges: &[f64]) -> Result<HistogramPdf> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DiagError::Invalid {
            what: "histogram edges",
            why: "need at least 2 strictly increasing edges".into(),
        });
    }
    if edges.iter().any(|e| !e.is_finite()) {
        return Err(DiagError::Invalid {
            what: "histogram edges",
            why: "edges must be finite".into(),
        });
    }
    let nbins = edges.len() - 1;
    let mut counts = vec![0usize; nbins];
    let (mut below, mut above) = (0usize, 0usize);
    let last = *edges.last().unwrap();
    for v in values {
        if v < edges[0] {
            below += 1;
        } else if v > last {
            above += 1;
        } else if v == last {
            counts[nbins - 1] += 1;
        } else {
            // Binary search for the bin with edges[b] <= v < edges[b+1].
            let b = match edges.binary_search_by(|e| e.partial_cmp(&v).unwrap()) {
                Ok(i) => i,
                Err(i) => i - 1,
            };
            counts[b] += 1;
        }
    }
    let in_range: usize = counts.iter().sum();
    if in_range == 0 {
        return Err(DiagError::EmptyHistogram);
    }
    let densities = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, w)| c as f64 / in_range as f64 / (w[1] - w[0]))
        .collect();
    Ok(HistogramPdf {
        edges: edges.to_vec(),
        densities,
        counts,
        below,
        above,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_bin_density_is_inverse_width() {
        let h = histogram_pdf([3.0, 3.5, 3.9], &[3.0, 4.0, 5.0]).unwrap();
        assert!((h.densities[0] - 1.0).abs() < 1e-12);
        assert_eq!(h.densities[1], 0.0);
        assert_eq!(h.counts, vec![3, 0]);
    }

    #[test]
    fn uniform_draws_give_unit_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..1_000_000).map(|_| rng.random::<f64>()).collect();
        let edges: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let h = histogram_pdf(vals, &edges).unwrap();
        for (i, &d) in h.densities.iter().enumerate() {
            assert!((d - 1.0).abs() < 0.02, "bin {i} density {d}");
        }
        let integral: f64 = h
            .densities
            .iter()
            .zip(h.edges.windows(2))
            .map(|(&d, w)| d * (w[1] - w[0]))
            .sum();
        assert!((integral - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overflow_values_are_tallied() {
        let h = histogram_pdf([-5.0, 0.5, 1.5, 99.0, 2.0], &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(h.below, 1);
        assert_eq!(h.above, 1);
        assert_eq!(h.counts, vec![1, 2]);
        // Value at the closing edge lands in the last bin.
        assert_eq!(h.counts[1], 2);
    }

    #[test]
    fn all_out_of_range_is_rejected() {
        assert!(matches!(
            histogram_pdf([10.0, 20.0], &[0.0, 1.0]),
            Err(DiagError::EmptyHistogram)
        ));
    }

    #[test]
    fn bad_edges_rejected() {
        assert!(histogram_pdf([1.0], &[0.0]).is_err());
        assert!(histogram_pdf([1.0], &[0.0, 0.0]).is_err());
        assert!(histogram_pdf([1.0], &[1.0, 0.5]).is_err());
        assert!(histogram_pdf([1.0], &[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn edge_value_binning_is_half_open() {
        let h = histogram_pdf([0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap();
        // 0.0 -> bin0, 1.0 -> bin1, 2.0 (closing edge) -> bin1.
        assert_eq!(h.counts, vec![1, 2]);
    }
}
