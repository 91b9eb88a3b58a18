//! Straight-line transport paths and the conditional flow-matching loss.

use super::{FlowError, Result};
use crate::net::Real;
use ndarray::{Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// One training draw: noise, target, condition, diffusion time, lead time.
#[derive(Clone, Debug)]
pub struct FlowSample<F> {
    pub x0: Array3<F>,
    pub x1: Array3<F>,
    pub c: Array3<F>,
    pub t: F,
    pub k_hours: F,
}

/// A conditional velocity field v(concat(x, c), t, K).
///
/// Implemented by the network wrapper and, in tests, by plain closures.
pub trait VelocityField<F: Real> {
    fn velocity(&self, x_and_c: &Array3<F>, t: F, k_hours: F) -> Result<Array3<F>>;
}

impl<F: Real, G> VelocityField<F> for G
where
    G: Fn(&Array3<F>, F, F) -> Array3<F>,
{
    fn velocity(&self, x_and_c: &Array3<F>, t: F, k_hours: F) -> Result<Array3<F>> {
        Ok(self(x_and_c, t, k_hours))
    }
}

/// Point on the straight path from noise to target and the matching
/// constant velocity: x_t = (1-t)·x0 + t·x1, u = x1 - x0.
///
/// The two-coefficient form keeps the endpoints exact: t=0 returns x0 and
/// t=1 returns x1 without rounding drift.
pub fn interpolate_path<F: Real>(x0: &Array3<F>, x1: &Array3<F>, t: F) -> (Array3<F>, Array3<F>) {
    assert_eq!(x0.dim(), x1.dim(), "path endpoints must share a shape");
    let s = F::one() - t;
    let xt = ndarray::Zip::from(x0)
        .and(x1)
        .map_collect(|&a, &b| s * a + t * b);
    let u = x1 - x0;
    (xt, u)
}

/// Standard normal noise field from a seeded stream.
pub fn gaussian_noise<F: Real>(c: usize, h: usize, w: usize, seed: u64) -> Array3<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_simple_fn((c, h, w), || {
        F::of(<StandardNormal as Distribution<f64>>::sample(
            &StandardNormal,
            &mut rng,
        ))
    })
}

/// Mean over batch and cells of the squared velocity-matching residual
/// ‖v(concat(x_t, c), t, K) − (x1 − x0)‖².
pub fn cfm_loss<F: Real>(v: &impl VelocityField<F>, samples: &[FlowSample<F>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(FlowError::Invalid {
            what: "loss batch",
            why: "empty".into(),
        });
    }
    let mut total = 0f64;
    let mut cells = 0usize;
    for s in samples {
        let (xt, u) = interpolate_path(&s.x0, &s.x1, s.t);
        let input = ndarray::concatenate(Axis(0), &[xt.view(), s.c.view()]).expect(
            "x_t and condition stacks share height and width",
        );
        let pred = v.velocity(&input, s.t, s.k_hours)?;
        for (p, t) in pred.iter().zip(u.iter()) {
            let d = (*p - *t).as_f64();
            total += d * d;
        }
        cells += u.len();
    }
    let loss = total / cells as f64;
    if !loss.is_finite() {
        return Err(FlowError::NonFiniteLoss);
    }
    Ok(loss)
}
