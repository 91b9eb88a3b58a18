//! Per-channel z-score normalization fitted on the training truth set.

use super::{FlowError, Result};
use crate::grid::FieldStack;
use ndarray::{Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

/// Per-channel mean and population standard deviation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Normalizer {
    pub channel_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Fit per-channel statistics over every cell of every stack.
pub fn fit_normalizer(stacks: &[FieldStack]) -> Result<Normalizer> {
    if stacks.len() < 2 {
        return Err(FlowError::Invalid {
            what: "normalizer input",
            why: format!("need at least 2 stacks, got {}", stacks.len()),
        });
    }
    let channels = &stacks[0].channels;
    for s in stacks {
        if s.channels != *channels {
            return Err(FlowError::Invalid {
                what: "normalizer input",
                why: "stacks carry different channel sets".into(),
            });
        }
    }
    let c = channels.len();
    let mut sum = vec![0f64; c];
    let mut sum_sq = vec![0f64; c];
    let mut count = vec![0f64; c];
    for s in stacks {
        for (ci, plane) in s.data.axis_iter(Axis(0)).enumerate() {
            for &v in plane.iter() {
                sum[ci] += v as f64;
                sum_sq[ci] += (v as f64) * (v as f64);
                count[ci] += 1.0;
            }
        }
    }
    let mut mean = Vec::with_capacity(c);
    let mut std = Vec::with_capacity(c);
    for ci in 0..c {
        let m = sum[ci] / count[ci];
        let var = (sum_sq[ci] / count[ci] - m * m).max(0.0);
        if var == 0.0 {
            return Err(FlowError::ZeroVariance(channels[ci].name().to_string()));
        }
        mean.push(m);
        std.push(var.sqrt());
    }
    Ok(Normalizer {
        channel_names: channels.iter().map(|c| c.name().to_string()).collect(),
        mean,
        std,
    })
}

impl Normalizer {
    fn check(&self, data: &ArrayView3<'_, f32>) -> Result<()> {
        if data.dim().0 != self.mean.len() {
            return Err(FlowError::Invalid {
                what: "normalizer apply",
                why: format!(
                    "data has {} channels, normalizer has {}",
                    data.dim().0,
                    self.mean.len()
                ),
            });
        }
        Ok(())
    }

    /// Map raw fields to z-scores.
    pub fn apply(&self, data: ArrayView3<'_, f32>) -> Result<Array3<f32>> {
        self.check(&data)?;
        let mut out = data.to_owned();
        for (ci, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
            let (m, s) = (self.mean[ci], self.std[ci]);
            plane.mapv_inplace(|v| ((v as f64 - m) / s) as f32);
        }
        Ok(out)
    }

    /// Map z-scores back to physical units.
    pub fn invert(&self, data: ArrayView3<'_, f32>) -> Result<Array3<f32>> {
        self.check(&data)?;
        let mut out = data.to_owned();
        for (ci, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
            let (m, s) = (self.mean[ci], self.std[ci]);
            plane.mapv_inplace(|v| (v as f64 * s + m) as f32);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ChannelId, GeoWindow};
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stack_from(value_a: f32, value_b: f32) -> Vec<FieldStack> {
        let geo = GeoWindow::square(15.0, 130.0, 1.0, 4).unwrap();
        [value_a, value_b]
            .into_iter()
            .map(|v| {
                let mut data = Array3::zeros((21, 4, 4));
                for (ci, mut plane) in data.axis_iter_mut(Axis(0)).enumerate() {
                    plane.fill(v + ci as f32);
                }
                FieldStack::full(data, geo, 0, 0).unwrap()
            })
            .collect()
    }

    #[test]
    fn two_value_set_gives_population_statistics() {
        let stacks = stack_from(0.0, 2.0);
        let n = fit_normalizer(&stacks).unwrap();
        for ci in 0..21 {
            assert!((n.mean[ci] - (1.0 + ci as f64)).abs() < 1e-6, "channel {ci}");
            assert!((n.std[ci] - 1.0).abs() < 1e-6, "channel {ci}");
        }
    }

    #[test]
    fn round_trip_is_identity_within_tolerance() {
        let geo = GeoWindow::square(15.0, 130.0, 2.0, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let stacks: Vec<FieldStack> = (0..4)
            .map(|_| {
                let data =
                    Array3::from_shape_simple_fn((21, 8, 8), || rng.random_range(-50.0..50.0f32));
                FieldStack::full(data, geo, 0, 0).unwrap()
            })
            .collect();
        let n = fit_normalizer(&stacks).unwrap();
        let z = n.apply(stacks[0].data.view()).unwrap();
        let back = n.invert(z.view()).unwrap();
        for (a, b) in stacks[0].data.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-5 * a.abs().max(1.0));
        }
    }

    #[test]
    fn zero_variance_channel_is_named() {
        let geo = GeoWindow::square(15.0, 130.0, 1.0, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let stacks: Vec<FieldStack> = (0..3)
            .map(|_| {
                let mut data =
                    Array3::from_shape_simple_fn((21, 4, 4), || rng.random_range(0.0..9.0f32));
                data.index_axis_mut(Axis(0), ChannelId::Msl.index()).fill(101325.0);
                FieldStack::full(data, geo, 0, 0).unwrap()
            })
            .collect();
        match fit_normalizer(&stacks) {
            Err(FlowError::ZeroVariance(name)) => assert_eq!(name, "MSL"),
            other => panic!("expected zero-variance rejection, got {other:?}"),
        }
    }

    #[test]
    fn single_stack_rejected() {
        let stacks = stack_from(0.0, 2.0);
        assert!(matches!(
            fit_normalizer(&stacks[..1]),
            Err(FlowError::Invalid { .. })
        ));
    }
}
