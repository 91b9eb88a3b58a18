//! Parameter storage, the architecture manifest, and initialization.

use super::{NetConfig, NetError, Real, Result};
use ndarray::{ArrayD, ArrayViewD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::BTreeMap;

/// Named parameter (or gradient) tensors, ordered by name.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<F>(pub BTreeMap<String, ArrayD<F>>);

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet(BTreeMap::new())
    }

    pub fn get(&self, name: &str) -> Result<ArrayViewD<'_, F>> {
        self.0
            .get(name)
            .map(|a| a.view())
            .ok_or_else(|| NetError::MissingTensor(name.into()))
    }

    pub fn insert(&mut self, name: &str, value: ArrayD<F>) {
        self.0.insert(name.into(), value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<F>)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<F>)> {
        self.0.iter_mut()
    }

    /// Total number of scalar entries across all tensors.
    pub fn total_entries(&self) -> usize {
        self.0.values().map(|a| a.len()).sum()
    }

    /// Elementwise conversion to another precision.
    pub fn convert<G: Real>(&self) -> ParamSet<G> {
        ParamSet(
            self.0
                .iter()
                .map(|(k, v)| (k.clone(), v.mapv(|x| G::of(x.as_f64()))))
                .collect(),
        )
    }

    /// A same-shaped set of zeros, for gradient accumulation.
    pub fn zeros_like(&self) -> ParamSet<F> {
        ParamSet(
            self.0
                .iter()
                .map(|(k, v)| (k.clone(), ArrayD::zeros(v.raw_dim())))
                .collect(),
        )
    }

    /// In-place `self += other` over matching tensors.
    pub fn add_assign(&mut self, other: &ParamSet<F>) {
        for (k, v) in self.0.iter_mut() {
            if let Some(o) = other.0.get(k) {
                *v += o;
            }
        }
    }
}

/// Convolution weight shape; the output channel is the contiguous axis.
fn conv(c_out: usize, c_in: usize, k: usize) -> Vec<usize> {
    vec![k, k, c_in, c_out]
}

fn push_block(
    out: &mut Vec<(String, Vec<usize>)>,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    embed_dim: usize,
) {
    let mut p = |suffix: &str, shape: Vec<usize>| out.push((format!("{prefix}.{suffix}"), shape));
    p("norm1.g", vec![c_in]);
    p("norm1.b", vec![c_in]);
    // conv1 has no bias: the instance norm right after it would cancel any
    // per-channel constant exactly, leaving the bias without a gradient.
    p("conv1.w", conv(c_out, c_in, 3));
    p("cond.w", vec![c_out, embed_dim]);
    p("cond.b", vec![c_out]);
    p("norm2.g", vec![c_out]);
    p("norm2.b", vec![c_out]);
    p("conv2.w", conv(c_out, c_out, 3));
    p("conv2.b", vec![c_out]);
    if c_in != c_out {
        p("skip.w", conv(c_out, c_in, 1));
        p("skip.b", vec![c_out]);
    }
}

/// Every parameter tensor name and shape for `cfg`, in sorted-name order.
pub fn manifest(cfg: &NetConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.embed_dim;
    let mut out: Vec<(String, Vec<usize>)> = vec![
        ("emb.l1.w".into(), vec![d, d]),
        ("emb.l1.b".into(), vec![d]),
        ("emb.l2.w".into(), vec![d, d]),
        ("emb.l2.b".into(), vec![d]),
        ("in.w".into(), conv(cfg.width(0), cfg.in_channels, 3)),
        ("in.b".into(), vec![cfg.width(0)]),
    ];
    for l in 0..cfg.levels {
        let c = cfg.width(l);
        push_block(&mut out, &format!("enc{l}.b0"), c, c, d);
        push_block(&mut out, &format!("enc{l}.b1"), c, c, d);
        out.push((format!("down{l}.w"), conv(cfg.width(l + 1), c, 3)));
        out.push((format!("down{l}.b"), vec![cfg.width(l + 1)]));
    }
    let cb = cfg.bottleneck_width();
    push_block(&mut out, "mid.b0", cb, cb, d);
    if cfg.attn_at_bottleneck {
        out.push(("mid.attn.norm.g".into(), vec![cb]));
        out.push(("mid.attn.norm.b".into(), vec![cb]));
        for w in ["wq", "wk", "wv", "wo"] {
            out.push((format!("mid.attn.{w}"), vec![cb, cb]));
        }
    }
    push_block(&mut out, "mid.b1", cb, cb, d);
    for l in (0..cfg.levels).rev() {
        let c = cfg.width(l);
        out.push((format!("up{l}.w"), conv(c, cfg.width(l + 1), 3)));
        out.push((format!("up{l}.b"), vec![c]));
        push_block(&mut out, &format!("dec{l}.b0"), 2 * c, c, d);
        push_block(&mut out, &format!("dec{l}.b1"), c, c, d);
    }
    out.push(("out.norm.g".into(), vec![cfg.width(0)]));
    out.push(("out.norm.b".into(), vec![cfg.width(0)]));
    out.push(("out.w".into(), conv(cfg.out_channels, cfg.width(0), 3)));
    out.push(("out.b".into(), vec![cfg.out_channels]));
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Total scalar parameter count for `cfg`.
pub fn param_count(cfg: &NetConfig) -> usize {
    manifest(cfg)
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

/// Check that `params` matches the manifest exactly, both ways.
pub fn validate_params<F: Real>(params: &ParamSet<F>, cfg: &NetConfig) -> Result<()> {
    let man = manifest(cfg);
    for (name, shape) in &man {
        let t = params.get(name)?;
        if t.shape() != shape.as_slice() {
            return Err(NetError::ShapeMismatch {
                name: name.clone(),
                expected: shape.clone(),
                got: t.shape().to_vec(),
            });
        }
    }
    if params.0.len() != man.len() {
        let known: std::collections::BTreeSet<&str> =
            man.iter().map(|(n, _)| n.as_str()).collect();
        for name in params.0.keys() {
            if !known.contains(name.as_str()) {
                return Err(NetError::UnknownTensor(name.clone()));
            }
        }
    }
    Ok(())
}

/// Initialize parameters for `cfg` from a seed.
///
/// Convolution and linear weights draw from scaled normals (He fan-in for
/// convolutions), normalization scales start at one, and every bias at zero.
/// The final output projection is zeroed so a fresh network is the identity
/// zero map; `zero_output = false` randomizes it instead, which gradient
/// checking needs because a zero projection blocks all upstream gradients.
pub fn init_params<F: Real>(cfg: &NetConfig, seed: u64, zero_output: bool) -> ParamSet<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ParamSet::new();
    for (name, shape) in manifest(cfg) {
        let n: usize = shape.iter().product();
        let tensor = if name.ends_with(".b") && !name.contains("attn") {
            ArrayD::zeros(IxDyn(&shape))
        } else if name.ends_with("norm.g") || name.ends_with("norm1.g") || name.ends_with("norm2.g")
        {
            ArrayD::from_elem(IxDyn(&shape), F::one())
        } else if name.ends_with("norm.b") || name.ends_with("norm1.b") || name.ends_with("norm2.b")
        {
            ArrayD::zeros(IxDyn(&shape))
        } else if name == "out.w" && zero_output {
            ArrayD::zeros(IxDyn(&shape))
        } else {
            // Fan-in: k*k*c_in for [k, k, c_in, c_out] convolutions, the
            // trailing input dimension for [out, in] linear maps.
            let fan_in: usize = if shape.len() == 4 {
                shape[..3].iter().product()
            } else {
                shape[1..].iter().product()
            };
            let std = (2.0 / fan_in as f64).sqrt();
            let vals: Vec<F> = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    F::of(z * std)
                })
                .collect();
            ArrayD::from_shape_vec(IxDyn(&shape), vals).unwrap()
        };
        out.insert(&name, tensor);
    }
    if zero_output {
        // out.b is already zero via the bias rule; make the contract explicit.
        debug_assert!(out.get("out.w").unwrap().iter().all(|v| *v == F::zero()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_parameter_count() {
        let cfg = NetConfig::desk(64, 64);
        assert_eq!(param_count(&cfg), 1_362_773);
    }

    #[test]
    fn manifest_is_sorted_and_unique() {
        let cfg = NetConfig::desk(16, 16);
        let man = manifest(&cfg);
        for w in man.windows(2) {
            assert!(w[0].0 < w[1].0, "{} !< {}", w[0].0, w[1].0);
        }
    }

    #[test]
    fn init_matches_manifest_and_zero_output() {
        let cfg = NetConfig::desk(16, 16);
        let p: ParamSet<f32> = init_params(&cfg, 7, true);
        validate_params(&p, &cfg).unwrap();
        assert!(p.get("out.w").unwrap().iter().all(|&v| v == 0.0));
        assert!(p.get("out.b").unwrap().iter().all(|&v| v == 0.0));
        assert!(p.get("enc0.b0.norm1.g").unwrap().iter().all(|&v| v == 1.0));
        assert!(p
            .get("mid.attn.wq")
            .unwrap()
            .iter()
            .any(|&v| v != 0.0));
    }

    #[test]
    fn gradcheck_init_randomizes_output_projection() {
        let cfg = NetConfig::desk(16, 16);
        let p: ParamSet<f64> = init_params(&cfg, 7, false);
        assert!(p.get("out.w").unwrap().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn validation_flags_missing_and_unknown() {
        let cfg = NetConfig::desk(16, 16);
        let mut p: ParamSet<f32> = init_params(&cfg, 1, true);
        p.0.remove("in.w");
        assert!(matches!(
            validate_params(&p, &cfg),
            Err(NetError::MissingTensor(n)) if n == "in.w"
        ));
        let mut p: ParamSet<f32> = init_params(&cfg, 1, true);
        p.insert("stray", ArrayD::zeros(IxDyn(&[1])));
        assert!(matches!(
            validate_params(&p, &cfg),
            Err(NetError::UnknownTensor(n)) if n == "stray"
        ));
    }

    #[test]
    fn levels_zero_manifest_has_no_enc_dec() {
        let cfg = NetConfig {
            in_channels: 2,
            out_channels: 1,
            base_width: 1,
            levels: 0,
            attn_at_bottleneck: false,
            embed_dim: 2,
            h: 1,
            w: 1,
        };
        cfg.validate().unwrap();
        let man = manifest(&cfg);
        assert!(man.iter().all(|(n, _)| !n.starts_with("enc") && !n.starts_with("dec")));
        assert!(man.iter().any(|(n, _)| n == "mid.b0.conv1.w"));
    }
}
