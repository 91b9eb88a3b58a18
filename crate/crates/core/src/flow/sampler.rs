//! Deterministic ODE integrators driving the velocity field from noise to
//! a reconstructed field stack.

use super::normalize::Normalizer;
use super::path::{gaussian_noise, VelocityField};
use super::{FlowError, Result};
use crate::grid::FieldStack;
use crate::net::{forward, NetConfig, ParamSet, Real};
use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

/// Time integrator for the sampling ODE.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMethod {
    Euler,
    Heun,
}

impl std::str::FromStr for SamplerMethod {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "euler" => Ok(SamplerMethod::Euler),
            "heun" => Ok(SamplerMethod::Heun),
            other => Err(format!("unknown sampler method {other:?}")),
        }
    }
}

impl std::fmt::Display for SamplerMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerMethod::Euler => "euler",
            SamplerMethod::Heun => "heun",
        })
    }
}

/// The trained network as a velocity field over normalized stacks.
pub struct NetVelocity<'a, F: Real> {
    pub params: &'a ParamSet<F>,
    pub cfg: &'a NetConfig,
}

impl<F: Real> VelocityField<F> for NetVelocity<'_, F> {
    fn velocity(&self, x_and_c: &Array3<F>, t: F, k_hours: F) -> Result<Array3<F>> {
        let (v, _) = forward(
            self.params,
            self.cfg,
            x_and_c.view(),
            t.as_f64(),
            k_hours.as_f64(),
        )?;
        Ok(v)
    }
}

/// Integrate dx/dt = v(concat(x, c), t, K) from t=0 to t=1 in `steps` equal
/// steps, starting at `x0`.
pub fn integrate<F: Real>(
    v: &impl VelocityField<F>,
    x0: Array3<F>,
    c: &Array3<F>,
    k_hours: F,
    steps: usize,
    method: SamplerMethod,
) -> Result<Array3<F>> {
    if steps == 0 {
        return Err(FlowError::Invalid {
            what: "sampler steps",
            why: "must be at least 1".into(),
        });
    }
    if x0.dim().1 != c.dim().1 || x0.dim().2 != c.dim().2 {
        return Err(FlowError::Invalid {
            what: "sampler condition",
            why: format!("state {:?} vs condition {:?}", x0.dim(), c.dim()),
        });
    }
    let dt = F::of(1.0 / steps as f64);
    let mut x = x0;
    for i in 0..steps {
        let t = F::of(i as f64 / steps as f64);
        let input = ndarray::concatenate(Axis(0), &[x.view(), c.view()])
            .expect("state and condition share height and width");
        let v1 = v.velocity(&input, t, k_hours)?;
        match method {
            SamplerMethod::Euler => {
                x.zip_mut_with(&v1, |xe, &ve| *xe += dt * ve);
            }
            SamplerMethod::Heun => {
                let t2 = F::of((i + 1) as f64 / steps as f64);
                let mut xp = x.clone();
                xp.zip_mut_with(&v1, |xe, &ve| *xe += dt * ve);
                let input2 = ndarray::concatenate(Axis(0), &[xp.view(), c.view()])
                    .expect("state and condition share height and width");
                let v2 = v.velocity(&input2, t2, k_hours)?;
                let half = F::of(0.5);
                ndarray::Zip::from(&mut x).and(&v1).and(&v2).for_each(|xe, &a, &b| {
                    *xe += dt * half * (a + b);
                });
            }
        }
        if x.iter().any(|e| !e.is_finite()) {
            return Err(FlowError::NonFiniteState { step: i });
        }
    }
    Ok(x)
}

/// Reconstruct a field stack from seeded noise under the trained network.
///
/// The condition stack is normalized, the ODE runs in normalized space, and
/// the final state is denormalized. The wind-speed channel is emitted as
/// produced by the model, without recomputation from the wind components.
pub fn sample(
    params: &ParamSet<f32>,
    cfg: &NetConfig,
    norm: &Normalizer,
    cond: &FieldStack,
    k_hours: f64,
    steps: usize,
    seed: u64,
    method: SamplerMethod,
) -> Result<FieldStack> {
    let (c, h, w) = cond.data.dim();
    if c != cfg.out_channels || h != cfg.h || w != cfg.w {
        return Err(FlowError::Invalid {
            what: "condition stack",
            why: format!(
                "shape ({c}, {h}, {w}) does not match net ({}, {}, {})",
                cfg.out_channels, cfg.h, cfg.w
            ),
        });
    }
    let cn = norm.apply(cond.data.view())?;
    let x0 = gaussian_noise::<f32>(c, h, w, seed);
    let nv = NetVelocity { params, cfg };
    let xn = integrate(&nv, x0, &cn, k_hours as f32, steps, method)?;
    let data = norm.invert(xn.view())?;
    Ok(FieldStack::new(
        cond.channels.clone(),
        data,
        cond.geo,
        cond.valid_time,
        k_hours.round() as i32,
    )?)
}
