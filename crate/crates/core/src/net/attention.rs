//! Single-head self-attention over flattened bottleneck positions.

use super::kernels::{instance_norm_bwd, instance_norm_fwd, NormCache};
use super::Real;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

/// Parameter views for one attention layer; the projections carry no biases.
pub struct AttnParams<'a, F> {
    pub g: ArrayView1<'a, F>,
    pub b: ArrayView1<'a, F>,
    pub wq: ArrayView2<'a, F>,
    pub wk: ArrayView2<'a, F>,
    pub wv: ArrayView2<'a, F>,
    pub wo: ArrayView2<'a, F>,
}

/// Activations the attention backward pass needs.
pub struct AttnCache<F> {
    h_in: Array2<F>,
    norm: NormCache<F>,
    xn: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    a: Array2<F>,
    o: Array2<F>,
}

/// Gradients for one attention layer's parameters.
pub struct AttnGrads<F> {
    pub dg: Array1<F>,
    pub db: Array1<F>,
    pub dwq: Array2<F>,
    pub dwk: Array2<F>,
    pub dwv: Array2<F>,
    pub dwo: Array2<F>,
}

fn softmax_rows<F: Real>(s: &mut Array2<F>) {
    for mut row in s.rows_mut() {
        let mx = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for e in row.iter_mut() {
            *e = (*e - mx).exp();
            sum += *e;
        }
        for e in row.iter_mut() {
            *e /= sum;
        }
    }
}

/// Pre-norm residual attention on `h` of shape [channels, positions]:
/// out = h + Wo · softmax((Wq xn)ᵀ(Wk xn)/√C) applied to (Wv xn).
pub fn attn_fwd<F: Real>(h: &Array2<F>, p: &AttnParams<'_, F>) -> (Array2<F>, AttnCache<F>) {
    let (c, n) = h.dim();
    let h3 = h.view().insert_axis(Axis(2));
    let (xn3, norm) = instance_norm_fwd(h3, p.g, p.b);
    let xn = xn3.into_shape_with_order((c, n)).unwrap();
    let q = p.wq.dot(&xn);
    let k = p.wk.dot(&xn);
    let v = p.wv.dot(&xn);
    let scale = F::of(1.0 / (c as f64).sqrt());
    let mut a = q.t().dot(&k) * scale;
    softmax_rows(&mut a);
    let o = v.dot(&a.t());
    let out = h + &p.wo.dot(&o);
    (
        out,
        AttnCache {
            h_in: h.clone(),
            norm,
            xn,
            q,
            k,
            v,
            a,
            o,
        },
    )
}

/// Reverse-mode gradients for `attn_fwd`.
pub fn attn_bwd<F: Real>(
    p: &AttnParams<'_, F>,
    cache: &AttnCache<F>,
    dout: &Array2<F>,
) -> (Array2<F>, AttnGrads<F>) {
    let (c, n) = cache.h_in.dim();
    let dwo = dout.dot(&cache.o.t());
    let d_o = p.wo.t().dot(dout);
    let dv = d_o.dot(&cache.a);
    let da = d_o.t().dot(&cache.v);
    // Softmax backward per row: ds = a * (da - rowsum(da * a)).
    let mut ds = Array2::<F>::zeros((n, n));
    for i in 0..n {
        let mut dot = F::zero();
        for j in 0..n {
            dot += da[[i, j]] * cache.a[[i, j]];
        }
        for j in 0..n {
            ds[[i, j]] = cache.a[[i, j]] * (da[[i, j]] - dot);
        }
    }
    let scale = F::of(1.0 / (c as f64).sqrt());
    ds.mapv_inplace(|e| e * scale);
    let dq = cache.k.dot(&ds.t());
    let dk = cache.q.dot(&ds);
    let dwq = dq.dot(&cache.xn.t());
    let dwk = dk.dot(&cache.xn.t());
    let dwv = dv.dot(&cache.xn.t());
    let dxn = p.wq.t().dot(&dq) + p.wk.t().dot(&dk) + p.wv.t().dot(&dv);

    let h3 = cache.h_in.view().insert_axis(Axis(2));
    let dxn3 = dxn.insert_axis(Axis(2));
    let (dh_norm, dg, db) = instance_norm_bwd(h3, &cache.norm, p.g, dxn3.view());
    let dh = dout + &dh_norm.into_shape_with_order((c, n)).unwrap();
    (
        dh,
        AttnGrads {
            dg,
            db,
            dwq,
            dwk,
            dwv,
            dwo,
        },
    )
}
