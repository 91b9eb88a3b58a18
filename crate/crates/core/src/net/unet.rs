//! Encoder-decoder forward pass, activation tape, and reverse-mode backward.

use super::attention::{attn_bwd, attn_fwd, AttnCache, AttnParams};
use super::embed::embed_time_raw;
use super::kernels::{
    conv_bwd, conv_fwd, dsilu, instance_norm_bwd, instance_norm_silu_fwd,
    instance_norm_silu_recompute, silu, upsample2_bwd, upsample2_fwd, NormCache,
};
use super::params::{validate_params, ParamSet};
use super::{NetConfig, NetError, Real, Result};
use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView3, ArrayView4, Axis};

fn p1<'a, F: Real>(p: &'a ParamSet<F>, n: &str) -> ArrayView1<'a, F> {
    p.get(n)
        .expect("parameter set validated on entry")
        .into_dimensionality()
        .expect("parameter set validated on entry")
}

fn p2<'a, F: Real>(p: &'a ParamSet<F>, n: &str) -> ndarray::ArrayView2<'a, F> {
    p.get(n)
        .expect("parameter set validated on entry")
        .into_dimensionality()
        .expect("parameter set validated on entry")
}

fn p4<'a, F: Real>(p: &'a ParamSet<F>, n: &str) -> ArrayView4<'a, F> {
    p.get(n)
        .expect("parameter set validated on entry")
        .into_dimensionality()
        .expect("parameter set validated on entry")
}

fn outer<F: Real>(u: ArrayView1<'_, F>, v: ArrayView1<'_, F>) -> Array2<F> {
    let mut out = Array2::zeros((u.len(), v.len()));
    for (i, &a) in u.iter().enumerate() {
        for (j, &b) in v.iter().enumerate() {
            out[[i, j]] = a * b;
        }
    }
    out
}

fn acc<F: Real>(grads: &mut ParamSet<F>, name: &str, value: ndarray::ArrayD<F>) {
    let slot = grads
        .0
        .get_mut(name)
        .expect("gradient map initialized from the parameter manifest");
    *slot += &value;
}

struct BlockCache<F> {
    x_in: Array3<F>,
    n1: NormCache<F>,
    /// conv1 output; the input to norm2.
    h_mid: Array3<F>,
    n2: NormCache<F>,
}

/// Residual block: conv(silu(norm(x))), then conv(silu(norm(h) + cond)) with
/// the per-channel conditioning bias added after the second normalization
/// (an instance norm would cancel it exactly if it were added before), plus
/// identity or 1x1-projected skip.
fn block_fwd<F: Real>(
    p: &ParamSet<F>,
    prefix: &str,
    x: Array3<F>,
    e: &Array1<F>,
) -> (Array3<F>, BlockCache<F>) {
    let g1 = p1(p, &format!("{prefix}.norm1.g"));
    let b1 = p1(p, &format!("{prefix}.norm1.b"));
    let (a1, n1) = instance_norm_silu_fwd(x.view(), g1, b1, None);
    let w1 = p4(p, &format!("{prefix}.conv1.w"));
    let zero_bias = Array1::zeros(w1.shape()[3]);
    let h = conv_fwd(a1.view(), w1, zero_bias.view(), 1);
    let g2 = p1(p, &format!("{prefix}.norm2.g"));
    let b2 = p1(p, &format!("{prefix}.norm2.b"));
    let cv = p2(p, &format!("{prefix}.cond.w")).dot(e) + p1(p, &format!("{prefix}.cond.b"));
    let (a2, n2) = instance_norm_silu_fwd(h.view(), g2, b2, Some(cv.view()));
    let h2 = conv_fwd(
        a2.view(),
        p4(p, &format!("{prefix}.conv2.w")),
        p1(p, &format!("{prefix}.conv2.b")),
        1,
    );
    let out = if p.0.contains_key(&format!("{prefix}.skip.w")) {
        h2 + conv_fwd(
            x.view(),
            p4(p, &format!("{prefix}.skip.w")),
            p1(p, &format!("{prefix}.skip.b")),
            1,
        )
    } else {
        h2 + &x
    };
    (
        out,
        BlockCache {
            x_in: x,
            n1,
            h_mid: h,
            n2,
        },
    )
}

/// Backward through one residual block; accumulates parameter gradients and
/// the embedding gradient, returns the gradient at the block input.
fn block_bwd<F: Real>(
    p: &ParamSet<F>,
    prefix: &str,
    cache: &BlockCache<F>,
    e: &Array1<F>,
    dout: &Array3<F>,
    grads: &mut ParamSet<F>,
    de: &mut Array1<F>,
) -> Array3<F> {
    let g2 = p1(p, &format!("{prefix}.norm2.g"));
    let b2 = p1(p, &format!("{prefix}.norm2.b"));
    let cv = p2(p, &format!("{prefix}.cond.w")).dot(e) + p1(p, &format!("{prefix}.cond.b"));
    let (z2, a2) =
        instance_norm_silu_recompute(cache.h_mid.view(), &cache.n2, g2, b2, Some(cv.view()));
    let (da2, dw2, dbc2) = conv_bwd(
        a2.view(),
        p4(p, &format!("{prefix}.conv2.w")),
        dout.view(),
        1,
    );
    acc(grads, &format!("{prefix}.conv2.w"), dw2.into_dyn());
    acc(grads, &format!("{prefix}.conv2.b"), dbc2.into_dyn());
    let mut dz2 = da2;
    dz2.zip_mut_with(&z2, |d, &z| *d *= dsilu(z));

    let dcv = Array1::from_iter(dz2.outer_iter().map(|plane| plane.sum()));
    acc(
        grads,
        &format!("{prefix}.cond.w"),
        outer(dcv.view(), e.view()).into_dyn(),
    );
    *de += &p2(p, &format!("{prefix}.cond.w")).t().dot(&dcv);
    acc(grads, &format!("{prefix}.cond.b"), dcv.into_dyn());

    let (dh, dg2, db2) = instance_norm_bwd(cache.h_mid.view(), &cache.n2, g2, dz2.view());
    acc(grads, &format!("{prefix}.norm2.g"), dg2.into_dyn());
    acc(grads, &format!("{prefix}.norm2.b"), db2.into_dyn());

    let g1 = p1(p, &format!("{prefix}.norm1.g"));
    let b1 = p1(p, &format!("{prefix}.norm1.b"));
    let (z1, a1) = instance_norm_silu_recompute(cache.x_in.view(), &cache.n1, g1, b1, None);
    let (da1, dw1, _) = conv_bwd(
        a1.view(),
        p4(p, &format!("{prefix}.conv1.w")),
        dh.view(),
        1,
    );
    acc(grads, &format!("{prefix}.conv1.w"), dw1.into_dyn());
    let mut dy1 = da1;
    dy1.zip_mut_with(&z1, |d, &z| *d *= dsilu(z));
    let (mut dx, dg1, db1) = instance_norm_bwd(cache.x_in.view(), &cache.n1, g1, dy1.view());
    acc(grads, &format!("{prefix}.norm1.g"), dg1.into_dyn());
    acc(grads, &format!("{prefix}.norm1.b"), db1.into_dyn());

    if p.0.contains_key(&format!("{prefix}.skip.w")) {
        let (dx_skip, dws, dbs) = conv_bwd(
            cache.x_in.view(),
            p4(p, &format!("{prefix}.skip.w")),
            dout.view(),
            1,
        );
        acc(grads, &format!("{prefix}.skip.w"), dws.into_dyn());
        acc(grads, &format!("{prefix}.skip.b"), dbs.into_dyn());
        dx += &dx_skip;
    } else {
        dx += dout;
    }
    dx
}

fn attn_params<'a, F: Real>(p: &'a ParamSet<F>) -> AttnParams<'a, F> {
    AttnParams {
        g: p1(p, "mid.attn.norm.g"),
        b: p1(p, "mid.attn.norm.b"),
        wq: p2(p, "mid.attn.wq"),
        wk: p2(p, "mid.attn.wk"),
        wv: p2(p, "mid.attn.wv"),
        wo: p2(p, "mid.attn.wo"),
    }
}

/// Every activation the backward pass needs from one forward evaluation.
pub struct Tape<F: Real> {
    cfg: NetConfig,
    raw: Array1<F>,
    /// Embedding MLP hidden pre-activation.
    zh: Array1<F>,
    e: Array1<F>,
    x_in: Array3<F>,
    enc: Vec<[BlockCache<F>; 2]>,
    /// Encoder level outputs; also the inputs of the downsampling convs.
    skips: Vec<Array3<F>>,
    mid0: BlockCache<F>,
    attn: Option<AttnCache<F>>,
    mid1: BlockCache<F>,
    /// Upsampled inputs to the up convs, stored deep to shallow.
    ups: Vec<Array3<F>>,
    /// Decoder block caches, stored deep to shallow.
    dec: Vec<[BlockCache<F>; 2]>,
    out_in: Array3<F>,
    out_n: NormCache<F>,
}

/// Forward pass returning the velocity estimate, the pooled bottleneck
/// feature vector, and the tape for `backward`.
pub fn forward_traced<F: Real>(
    params: &ParamSet<F>,
    cfg: &NetConfig,
    x: ArrayView3<'_, F>,
    t: f64,
    k_hours: f64,
) -> Result<(Array3<F>, Array1<F>, Tape<F>)> {
    cfg.validate()?;
    validate_params(params, cfg)?;
    forward_impl(params, cfg, x, t, k_hours)
}

/// `forward_traced` after validation, shared with callers that evaluate one
/// already-checked parameter set many times.
fn forward_impl<F: Real>(
    params: &ParamSet<F>,
    cfg: &NetConfig,
    x: ArrayView3<'_, F>,
    t: f64,
    k_hours: f64,
) -> Result<(Array3<F>, Array1<F>, Tape<F>)> {
    if x.dim() != (cfg.in_channels, cfg.h, cfg.w) {
        return Err(NetError::ShapeMismatch {
            name: "input".into(),
            expected: vec![cfg.in_channels, cfg.h, cfg.w],
            got: vec![x.dim().0, x.dim().1, x.dim().2],
        });
    }

    let raw: Array1<F> = embed_time_raw(t, k_hours, cfg.embed_dim);
    let zh = p2(params, "emb.l1.w").dot(&raw) + p1(params, "emb.l1.b");
    let mut a = zh.clone();
    a.mapv_inplace(silu);
    let e = p2(params, "emb.l2.w").dot(&a) + p1(params, "emb.l2.b");

    let x_in = x.to_owned();
    let mut h = conv_fwd(x_in.view(), p4(params, "in.w"), p1(params, "in.b"), 1);

    let mut enc = Vec::with_capacity(cfg.levels);
    let mut skips = Vec::with_capacity(cfg.levels);
    for l in 0..cfg.levels {
        let (h1, c0) = block_fwd(params, &format!("enc{l}.b0"), h, &e);
        let (h2, c1) = block_fwd(params, &format!("enc{l}.b1"), h1, &e);
        h = conv_fwd(
            h2.view(),
            p4(params, &format!("down{l}.w")),
            p1(params, &format!("down{l}.b")),
            2,
        );
        skips.push(h2);
        enc.push([c0, c1]);
    }

    let (h, mid0) = block_fwd(params, "mid.b0", h, &e);
    let (h, attn) = if cfg.attn_at_bottleneck {
        let (c, hh, ww) = h.dim();
        let h2d = h.into_shape_with_order((c, hh * ww)).unwrap();
        let (o, cache) = attn_fwd(&h2d, &attn_params(params));
        (o.into_shape_with_order((c, hh, ww)).unwrap(), Some(cache))
    } else {
        (h, None)
    };
    let (h, mid1) = block_fwd(params, "mid.b1", h, &e);

    let spatial = F::of((h.dim().1 * h.dim().2) as f64);
    let feat = Array1::from_iter(h.outer_iter().map(|plane| plane.sum() / spatial));

    let mut ups = Vec::with_capacity(cfg.levels);
    let mut dec = Vec::with_capacity(cfg.levels);
    let mut h = h;
    for l in (0..cfg.levels).rev() {
        let up_in = upsample2_fwd(h.view());
        let hu = conv_fwd(
            up_in.view(),
            p4(params, &format!("up{l}.w")),
            p1(params, &format!("up{l}.b")),
            1,
        );
        ups.push(up_in);
        let cat = ndarray::concatenate(Axis(0), &[hu.view(), skips[l].view()]).unwrap();
        let (h1, c0) = block_fwd(params, &format!("dec{l}.b0"), cat, &e);
        let (h2, c1) = block_fwd(params, &format!("dec{l}.b1"), h1, &e);
        dec.push([c0, c1]);
        h = h2;
    }

    let (a_out, out_n) = instance_norm_silu_fwd(
        h.view(),
        p1(params, "out.norm.g"),
        p1(params, "out.norm.b"),
        None,
    );
    let v = conv_fwd(a_out.view(), p4(params, "out.w"), p1(params, "out.b"), 1);

    let tape = Tape {
        cfg: *cfg,
        raw,
        zh,
        e,
        x_in,
        enc,
        skips,
        mid0,
        attn,
        mid1,
        ups,
        dec,
        out_in: h,
        out_n,
    };
    Ok((v, feat, tape))
}

/// Forward pass without gradient bookkeeping.
pub fn forward<F: Real>(
    params: &ParamSet<F>,
    cfg: &NetConfig,
    x: ArrayView3<'_, F>,
    t: f64,
    k_hours: f64,
) -> Result<(Array3<F>, Array1<F>)> {
    forward_traced(params, cfg, x, t, k_hours).map(|(v, feat, _)| (v, feat))
}

/// Reverse-mode gradients of `grad_v . v + grad_feat . feat` with respect to
/// every parameter, replayed from a forward tape.
pub fn backward<F: Real>(
    params: &ParamSet<F>,
    tape: &Tape<F>,
    grad_v: ArrayView3<'_, F>,
    grad_feat: ArrayView1<'_, F>,
) -> Result<ParamSet<F>> {
    let cfg = &tape.cfg;
    let mut grads = params.zeros_like();
    let mut de = Array1::<F>::zeros(cfg.embed_dim);

    // Output head.
    let g_on = p1(params, "out.norm.g");
    let b_on = p1(params, "out.norm.b");
    let (y, a_out) =
        instance_norm_silu_recompute(tape.out_in.view(), &tape.out_n, g_on, b_on, None);
    let (da, dwo, dbo) = conv_bwd(a_out.view(), p4(params, "out.w"), grad_v, 1);
    acc(&mut grads, "out.w", dwo.into_dyn());
    acc(&mut grads, "out.b", dbo.into_dyn());
    let mut dy = da;
    dy.zip_mut_with(&y, |d, &yv| *d *= dsilu(yv));
    let (mut dh, dgn, dbn) = instance_norm_bwd(tape.out_in.view(), &tape.out_n, g_on, dy.view());
    acc(&mut grads, "out.norm.g", dgn.into_dyn());
    acc(&mut grads, "out.norm.b", dbn.into_dyn());

    // Decoder, shallow to deep; collect the skip-connection gradients.
    let mut skip_grads: Vec<Option<Array3<F>>> = (0..cfg.levels).map(|_| None).collect();
    for l in 0..cfg.levels {
        let idx = cfg.levels - 1 - l;
        let d1 = block_bwd(
            params,
            &format!("dec{l}.b1"),
            &tape.dec[idx][1],
            &tape.e,
            &dh,
            &mut grads,
            &mut de,
        );
        let dcat = block_bwd(
            params,
            &format!("dec{l}.b0"),
            &tape.dec[idx][0],
            &tape.e,
            &d1,
            &mut grads,
            &mut de,
        );
        let c = cfg.width(l);
        let dhu = dcat.slice(s![..c, .., ..]).to_owned();
        skip_grads[l] = Some(dcat.slice(s![c.., .., ..]).to_owned());
        let (dup_in, dwu, dbu) = conv_bwd(
            tape.ups[idx].view(),
            p4(params, &format!("up{l}.w")),
            dhu.view(),
            1,
        );
        acc(&mut grads, &format!("up{l}.w"), dwu.into_dyn());
        acc(&mut grads, &format!("up{l}.b"), dbu.into_dyn());
        dh = upsample2_bwd(dup_in.view());
    }

    // Pooled-feature gradient joins at the bottleneck output.
    let spatial = F::of((dh.dim().1 * dh.dim().2) as f64);
    for (ci, mut plane) in dh.outer_iter_mut().enumerate() {
        plane += grad_feat[ci] / spatial;
    }

    let dh = block_bwd(params, "mid.b1", &tape.mid1, &tape.e, &dh, &mut grads, &mut de);
    let dh = if let Some(cache) = &tape.attn {
        let (c, hh, ww) = dh.dim();
        let d2 = dh.into_shape_with_order((c, hh * ww)).unwrap();
        let (dh2, ag) = attn_bwd(&attn_params(params), cache, &d2);
        acc(&mut grads, "mid.attn.norm.g", ag.dg.into_dyn());
        acc(&mut grads, "mid.attn.norm.b", ag.db.into_dyn());
        acc(&mut grads, "mid.attn.wq", ag.dwq.into_dyn());
        acc(&mut grads, "mid.attn.wk", ag.dwk.into_dyn());
        acc(&mut grads, "mid.attn.wv", ag.dwv.into_dyn());
        acc(&mut grads, "mid.attn.wo", ag.dwo.into_dyn());
        dh2.into_shape_with_order((c, hh, ww)).unwrap()
    } else {
        dh
    };
    let mut dh = block_bwd(params, "mid.b0", &tape.mid0, &tape.e, &dh, &mut grads, &mut de);

    // Encoder, deep to shallow.
    for l in (0..cfg.levels).rev() {
        let (mut d_enc, dwd, dbd) = conv_bwd(
            tape.skips[l].view(),
            p4(params, &format!("down{l}.w")),
            dh.view(),
            2,
        );
        acc(&mut grads, &format!("down{l}.w"), dwd.into_dyn());
        acc(&mut grads, &format!("down{l}.b"), dbd.into_dyn());
        d_enc += skip_grads[l].as_ref().expect("filled by the decoder pass");
        let d1 = block_bwd(
            params,
            &format!("enc{l}.b1"),
            &tape.enc[l][1],
            &tape.e,
            &d_enc,
            &mut grads,
            &mut de,
        );
        dh = block_bwd(
            params,
            &format!("enc{l}.b0"),
            &tape.enc[l][0],
            &tape.e,
            &d1,
            &mut grads,
            &mut de,
        );
    }

    let (_, dwi, dbi) = conv_bwd(tape.x_in.view(), p4(params, "in.w"), dh.view(), 1);
    acc(&mut grads, "in.w", dwi.into_dyn());
    acc(&mut grads, "in.b", dbi.into_dyn());

    // Embedding MLP.
    let mut a = tape.zh.clone();
    a.mapv_inplace(silu);
    acc(&mut grads, "emb.l2.w", outer(de.view(), a.view()).into_dyn());
    acc(&mut grads, "emb.l2.b", de.clone().into_dyn());
    let mut dzh = p2(params, "emb.l2.w").t().dot(&de);
    dzh.zip_mut_with(&tape.zh, |d, &z| *d *= dsilu(z));
    acc(
        &mut grads,
        "emb.l1.w",
        outer(dzh.view(), tape.raw.view()).into_dyn(),
    );
    acc(&mut grads, "emb.l1.b", dzh.into_dyn());

    Ok(grads)
}

/// One training batch: per-sample network inputs, velocity targets, and
/// conditioning scalars.
#[derive(Clone, Debug, Default)]
pub struct Batch<F> {
    pub inputs: Vec<Array3<F>>,
    pub targets: Vec<Array3<F>>,
    pub t: Vec<f64>,
    pub k_hours: Vec<f64>,
}

impl<F> Batch<F> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// The loss of `loss_and_grads` without gradient work, for finite
/// differences and evaluation.
pub fn batch_loss<F: Real>(params: &ParamSet<F>, cfg: &NetConfig, batch: &Batch<F>) -> Result<F> {
    cfg.validate()?;
    validate_params(params, cfg)?;
    batch_loss_unvalidated(params, cfg, batch)
}

/// Stage index of the first computation that reads the named tensor, in the
/// fixed forward order `loss_resumed` replays: embedding, input conv,
/// encoder levels shallow to deep (each with its downsampling conv), the
/// bottleneck (attention resumes with mid.b0 since its input is not taped),
/// decoder levels deep to shallow (each with its upsampling conv), output
/// head. Unknown names map to stage 0, a full recompute.
pub(crate) fn resume_stage(name: &str, levels: usize) -> usize {
    let prefix_level = |tag: &str| -> Option<usize> {
        let rest = name.strip_prefix(tag)?;
        let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
        digits.parse().ok()
    };
    if name.starts_with("in.") {
        return 1;
    }
    if let Some(l) = prefix_level("enc").or_else(|| prefix_level("down")) {
        return 2 + l;
    }
    if name.starts_with("mid.b0.") || name.starts_with("mid.attn.") {
        return 2 + levels;
    }
    if name.starts_with("mid.b1.") {
        return 3 + levels;
    }
    if let Some(l) = prefix_level("up").or_else(|| prefix_level("dec")) {
        return 4 + levels + (levels - 1 - l);
    }
    if name.starts_with("out.") {
        return 4 + 2 * levels;
    }
    0
}

/// Squared-error loss of one sample, replaying the forward pass from `stage`
/// onward and reading everything earlier from the tape of an evaluation at
/// unperturbed parameters. Exact for perturbations confined to tensors whose
/// `resume_stage` is at least `stage`; the gradient checker perturbs one
/// entry at a time, so each evaluation skips every stage the perturbation
/// cannot reach.
pub(crate) fn loss_resumed<F: Real>(
    params: &ParamSet<F>,
    cfg: &NetConfig,
    target: &Array3<F>,
    t: f64,
    k_hours: f64,
    tape: &Tape<F>,
    stage: usize,
) -> Result<F> {
    let lv = cfg.levels;
    let e_owned;
    let e: &Array1<F> = if stage == 0 {
        let raw: Array1<F> = embed_time_raw(t, k_hours, cfg.embed_dim);
        let zh = p2(params, "emb.l1.w").dot(&raw) + p1(params, "emb.l1.b");
        let mut a = zh;
        a.mapv_inplace(silu);
        e_owned = p2(params, "emb.l2.w").dot(&a) + p1(params, "emb.l2.b");
        &e_owned
    } else {
        &tape.e
    };

    let mut h: Option<Array3<F>> = None;
    if stage <= 1 {
        h = Some(conv_fwd(
            tape.x_in.view(),
            p4(params, "in.w"),
            p1(params, "in.b"),
            1,
        ));
    }
    let mut skips: Vec<Option<Array3<F>>> = (0..lv).map(|_| None).collect();
    for l in 0..lv {
        if stage <= 2 + l {
            let hin = match h.take() {
                Some(hh) => hh,
                None => tape.enc[l][0].x_in.clone(),
            };
            let (h1, _) = block_fwd(params, &format!("enc{l}.b0"), hin, e);
            let (h2, _) = block_fwd(params, &format!("enc{l}.b1"), h1, e);
            h = Some(conv_fwd(
                h2.view(),
                p4(params, &format!("down{l}.w")),
                p1(params, &format!("down{l}.b")),
                2,
            ));
            skips[l] = Some(h2);
        }
    }
    if stage <= 2 + lv {
        let hin = match h.take() {
            Some(hh) => hh,
            None => tape.mid0.x_in.clone(),
        };
        let (o, _) = block_fwd(params, "mid.b0", hin, e);
        let o = if cfg.attn_at_bottleneck {
            let (c, hh, ww) = o.dim();
            let o2 = o.into_shape_with_order((c, hh * ww)).unwrap();
            let (a, _) = attn_fwd(&o2, &attn_params(params));
            a.into_shape_with_order((c, hh, ww)).unwrap()
        } else {
            o
        };
        h = Some(o);
    }
    if stage <= 3 + lv {
        let hin = match h.take() {
            Some(hh) => hh,
            None => tape.mid1.x_in.clone(),
        };
        let (o, _) = block_fwd(params, "mid.b1", hin, e);
        h = Some(o);
    }
    for l in (0..lv).rev() {
        if stage <= 4 + lv + (lv - 1 - l) {
            let hu = match &h {
                Some(hh) => {
                    let up_in = upsample2_fwd(hh.view());
                    conv_fwd(
                        up_in.view(),
                        p4(params, &format!("up{l}.w")),
                        p1(params, &format!("up{l}.b")),
                        1,
                    )
                }
                None => conv_fwd(
                    tape.ups[lv - 1 - l].view(),
                    p4(params, &format!("up{l}.w")),
                    p1(params, &format!("up{l}.b")),
                    1,
                ),
            };
            let skip_l = skips[l].as_ref().unwrap_or(&tape.skips[l]);
            let cat = ndarray::concatenate(Axis(0), &[hu.view(), skip_l.view()]).unwrap();
            let (h1, _) = block_fwd(params, &format!("dec{l}.b0"), cat, e);
            let (h2, _) = block_fwd(params, &format!("dec{l}.b1"), h1, e);
            h = Some(h2);
        }
    }

    let out_in: &Array3<F> = h.as_ref().unwrap_or(&tape.out_in);
    let (a_out, _) = instance_norm_silu_fwd(
        out_in.view(),
        p1(params, "out.norm.g"),
        p1(params, "out.norm.b"),
        None,
    );
    let v = conv_fwd(a_out.view(), p4(params, "out.w"), p1(params, "out.b"), 1);
    let denom = F::of((cfg.out_channels * cfg.h * cfg.w) as f64);
    let l: F = v
        .iter()
        .zip(target.iter())
        .map(|(&a, &u)| (a - u) * (a - u))
        .sum();
    if !l.is_finite() {
        return Err(NetError::NonFiniteLoss { index: 0 });
    }
    Ok(l / denom)
}

/// `batch_loss` without re-checking the parameter manifest, for callers that
/// evaluate one validated set thousands of times under small perturbations.
pub(crate) fn batch_loss_unvalidated<F: Real>(
    params: &ParamSet<F>,
    cfg: &NetConfig,
    batch: &Batch<F>,
) -> Result<F> {
    let b = batch.len();
    let denom = F::of((b * cfg.out_channels * cfg.h * cfg.w) as f64);
    let mut loss = F::zero();
    for i in 0..b {
        let (v, _, _) =
            forward_impl(params, cfg, batch.inputs[i].view(), batch.t[i], batch.k_hours[i])?;
        let l_i: F = v
            .iter()
            .zip(batch.targets[i].iter())
            .map(|(&a, &u)| (a - u) * (a - u))
            .sum();
        if !l_i.is_finite() {
            return Err(NetError::NonFiniteLoss { index: i });
        }
        loss += l_i;
    }
    Ok(loss / denom)
}

/// Mean squared velocity error over every entry of the batch, with exact
/// parameter gradients.
pub fn loss_and_grads<F: Real>(
    params: &ParamSet<F>,
    cfg: &NetConfig,
    batch: &Batch<F>,
) -> Result<(F, ParamSet<F>)> {
    let b = batch.len();
    if b == 0 || batch.targets.len() != b || batch.t.len() != b || batch.k_hours.len() != b {
        return Err(NetError::Config {
            why: format!(
                "batch field lengths differ: {} inputs, {} targets, {} t, {} K",
                b,
                batch.targets.len(),
                batch.t.len(),
                batch.k_hours.len()
            ),
        });
    }
    let denom = F::of((b * cfg.out_channels * cfg.h * cfg.w) as f64);
    let mut grads = params.zeros_like();
    let mut loss = F::zero();
    let zero_feat = Array1::<F>::zeros(cfg.bottleneck_width());
    for i in 0..b {
        let (v, _, tape) =
            forward_traced(params, cfg, batch.inputs[i].view(), batch.t[i], batch.k_hours[i])?;
        if batch.targets[i].dim() != v.dim() {
            return Err(NetError::ShapeMismatch {
                name: format!("target[{i}]"),
                expected: vec![cfg.out_channels, cfg.h, cfg.w],
                got: batch.targets[i].shape().to_vec(),
            });
        }
        let mut resid = v;
        resid -= &batch.targets[i];
        let l_i: F = resid.iter().map(|&r| r * r).sum();
        if !l_i.is_finite() {
            return Err(NetError::NonFiniteLoss { index: i });
        }
        loss += l_i;
        let scale = F::of(2.0) / denom;
        resid.mapv_inplace(|r| r * scale);
        let g = backward(params, &tape, resid.view(), zero_feat.view())?;
        grads.add_assign(&g);
    }
    Ok((loss / denom, grads))
}
