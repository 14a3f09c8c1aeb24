//! Forward and backward primitives shared by the model.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::params::{LayerNorm, Linear};
use super::Real;

pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) fn linear_fwd<T: Real>(x: &ArrayView2<'_, T>, l: &Linear<T>) -> Array2<T> {
    let mut y = x.dot(&l.w);
    y += &l.b;
    y
}

/// Accumulates parameter gradients into `g` and returns `dL/dx`.
pub(crate) fn linear_bwd<T: Real>(x: &ArrayView2<'_, T>, l: &Linear<T>, g: &mut Linear<T>, dy: &Array2<T>) -> Array2<T> {
    linear_bwd_params(x, g, dy);
    dy.dot(&l.w.t())
}

pub(crate) fn linear_bwd_params<T: Real>(x: &ArrayView2<'_, T>, g: &mut Linear<T>, dy: &Array2<T>) {
    g.w += &x.t().dot(dy);
    g.b += &dy.sum_axis(Axis(0));
}

pub(crate) struct NormCache<T> {
    pub xhat: Array2<T>,
    pub inv_std: Array1<T>,
}

pub(crate) fn layernorm_fwd<T: Real>(x: &Array2<T>, n: &LayerNorm<T>) -> (Array2<T>, NormCache<T>) {
    let d = T::from_usize(x.ncols()).expect("width");
    let eps = T::lit(LN_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<T>() / d;
        *is = T::one() / (var + eps).sqrt();
        let s = *is;
        row.mapv_inplace(|v| v * s);
    }
    let y = &xhat * &n.gain + &n.bias;
    (y, NormCache { xhat, inv_std })
}

pub(crate) fn layernorm_bwd<T: Real>(c: &NormCache<T>, n: &LayerNorm<T>, g: &mut LayerNorm<T>, dy: &Array2<T>) -> Array2<T> {
    g.gain += &(dy * &c.xhat).sum_axis(Axis(0));
    g.bias += &dy.sum_axis(Axis(0));
    let d = T::from_usize(dy.ncols()).expect("width");
    let mut dx = dy * &n.gain;
    for ((mut row, xh), &is) in dx.rows_mut().into_iter().zip(c.xhat.rows()).zip(c.inv_std.iter()) {
        let m1 = row.sum() / d;
        let m2 = row.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>() / d;
        for (v, &h) in row.iter_mut().zip(xh.iter()) {
            *v = is * (*v - m1 - h * m2);
        }
    }
    dx
}

// tanh approximation
fn gelu_parts<T: Real>(x: T) -> (T, T) {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(0.044715);
    let half = T::lit(0.5);
    let one = T::one();
    let t = (c * (x + a * x * x * x)).tanh();
    let y = half * x * (one + t);
    let dy = half * (one + t) + half * x * (one - t * t) * c * (one + T::lit(3.0) * a * x * x);
    (y, dy)
}

pub(crate) fn gelu<T: Real>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| gelu_parts(v).0)
}

pub(crate) fn gelu_bwd<T: Real>(x: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let mut dx = x.mapv(|v| gelu_parts(v).1);
    dx *= dy;
    dx
}

/// Attention weights of one head. Row `i` spreads its mass over the `n_ctx`
/// context keys (`ctx`) and, for query rows, its own key (`own`, zero for
/// context rows).
pub(crate) struct HeadProbs<T> {
    pub ctx: Array2<T>,
    pub own: Array1<T>,
}

/// Masked multi-head attention over `N` tokens of which the first `n_ctx` are context.
pub(crate) fn attention_fwd<T: Real>(
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    n_ctx: usize,
    heads: usize,
) -> (Array2<T>, Vec<HeadProbs<T>>) {
    let (n, d) = q.dim();
    let hd = d / heads;
    let scale = T::lit(1.0 / (hd as f64).sqrt());
    let mut out = Array2::zeros((n, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * hd..(h + 1) * hd];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let kc = kh.slice(s![..n_ctx, ..]);
        let vc = vh.slice(s![..n_ctx, ..]);
        let mut p = qh.dot(&kc.t());
        p.mapv_inplace(|x| x * scale);
        let mut own = Array1::zeros(n);
        for (i, (mut row, o)) in p.rows_mut().into_iter().zip(own.iter_mut()).enumerate() {
            let self_score = (i >= n_ctx).then(|| qh.row(i).dot(&kh.row(i)) * scale);
            let mut mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            if let Some(s) = self_score {
                mx = mx.max(s);
            }
            row.mapv_inplace(|x| (x - mx).exp());
            let mut z = row.sum();
            if let Some(s) = self_score {
                *o = (s - mx).exp();
                z += *o;
            }
            let inv = T::one() / z;
            row.mapv_inplace(|x| x * inv);
            *o *= inv;
        }
        let mut oh = p.dot(&vc);
        for i in n_ctx..n {
            let w = own[i];
            oh.row_mut(i).scaled_add(w, &vh.row(i));
        }
        out.slice_mut(cols).assign(&oh);
        probs.push(HeadProbs { ctx: p, own });
    }
    (out, probs)
}

/// Returns `(dq, dk, dv)`.
pub(crate) fn attention_bwd<T: Real>(
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    probs: &[HeadProbs<T>],
    n_ctx: usize,
    d_out: &Array2<T>,
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let (n, d) = q.dim();
    let heads = probs.len();
    let hd = d / heads;
    let scale = T::lit(1.0 / (hd as f64).sqrt());
    let mut dq = Array2::zeros((n, d));
    let mut dk = Array2::zeros((n, d));
    let mut dv = Array2::zeros((n, d));
    for (h, hp) in probs.iter().enumerate() {
        let cols = s![.., h * hd..(h + 1) * hd];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let kc = kh.slice(s![..n_ctx, ..]);
        let vc = vh.slice(s![..n_ctx, ..]);
        let doh = d_out.slice(cols);
        let p = &hp.ctx;

        let dp = doh.dot(&vc.t());
        let mut dvh = Array2::zeros((n, hd));
        dvh.slice_mut(s![..n_ctx, ..]).assign(&p.t().dot(&doh));

        let mut ds = p * &dp;
        let mut ds_own = Array1::<T>::zeros(n);
        for i in 0..n {
            let (po, dpo) = if i >= n_ctx {
                (hp.own[i], doh.row(i).dot(&vh.row(i)))
            } else {
                (T::zero(), T::zero())
            };
            let rowdot = ds.row(i).sum() + po * dpo;
            let mut r = ds.row_mut(i);
            for (x, &pij) in r.iter_mut().zip(p.row(i).iter()) {
                *x -= pij * rowdot;
            }
            ds_own[i] = po * (dpo - rowdot);
            if i >= n_ctx {
                dvh.row_mut(i).scaled_add(po, &doh.row(i));
            }
        }
        ds.mapv_inplace(|x| x * scale);
        ds_own.mapv_inplace(|x| x * scale);

        let mut dqh = ds.dot(&kc);
        let mut dkh = Array2::zeros((n, hd));
        dkh.slice_mut(s![..n_ctx, ..]).assign(&ds.t().dot(&qh));
        for i in n_ctx..n {
            let w = ds_own[i];
            dqh.row_mut(i).scaled_add(w, &kh.row(i));
            dkh.row_mut(i).scaled_add(w, &qh.row(i));
        }
        dq.slice_mut(cols).assign(&dqh);
        dk.slice_mut(cols).assign(&dkh);
        dv.slice_mut(cols).assign(&dvh);
    }
    (dq, dk, dv)
}
