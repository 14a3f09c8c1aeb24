use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

use super::ops::{
    attention_bwd, attention_fwd, gelu, gelu_bwd, layernorm_bwd, layernorm_fwd, linear_bwd, linear_bwd_params,
    linear_fwd, HeadProbs, NormCache,
};
use super::params::{Head, ModelParams};
use super::Real;
use crate::error::{bail, Result};
use crate::TaskKind;

/// Query predictions: `N_qy x C_max` logits or `N_qy` regression values.
#[derive(Clone, Debug, PartialEq)]
pub enum ForwardOutput<T> {
    Classification(Array2<T>),
    Regression(Array1<T>),
}

impl<T: Real> ForwardOutput<T> {
    pub fn task(&self) -> TaskKind {
        match self {
            ForwardOutput::Classification(_) => TaskKind::Classification,
            ForwardOutput::Regression(_) => TaskKind::Regression,
        }
    }

    pub fn n_queries(&self) -> usize {
        match self {
            ForwardOutput::Classification(l) => l.nrows(),
            ForwardOutput::Regression(v) => v.len(),
        }
    }

    fn as_matrix(&self) -> Array2<T> {
        match self {
            ForwardOutput::Classification(l) => l.clone(),
            ForwardOutput::Regression(v) => v.clone().insert_axis(Axis(1)),
        }
    }
}

struct LayerTrace<T> {
    norm_attn: NormCache<T>,
    a: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<HeadProbs<T>>,
    o: Array2<T>,
    norm_ffn: NormCache<T>,
    b: Array2<T>,
    u: Array2<T>,
    g: Array2<T>,
}

/// Intermediate values of one forward pass, consumed by [`backward`].
pub struct ForwardTrace<T> {
    task: TaskKind,
    n_ctx: usize,
    x: Array2<T>,
    y_ctx: Array1<T>,
    layers: Vec<LayerTrace<T>>,
    final_norm: NormCache<T>,
    z: Array2<T>,
    r: Array2<T>,
    gr: Array2<T>,
}

fn check_inputs<T: Real>(
    params: &ModelParams<T>,
    x_ctx: &ArrayView2<'_, T>,
    y_ctx: &[T],
    x_qy: &ArrayView2<'_, T>,
) -> Result<()> {
    let f = params.config.f_max;
    if x_ctx.nrows() == 0 || x_qy.nrows() == 0 {
        bail!(Shape, "need at least one context and one query row");
    }
    if x_ctx.ncols() != f || x_qy.ncols() != f {
        bail!(Shape, "feature width {} / {} does not match F_max = {f}", x_ctx.ncols(), x_qy.ncols());
    }
    if y_ctx.len() != x_ctx.nrows() {
        bail!(Shape, "{} context labels for {} context rows", y_ctx.len(), x_ctx.nrows());
    }
    let finite = x_ctx.iter().chain(x_qy.iter()).chain(y_ctx.iter()).all(|v| v.is_finite());
    if !finite {
        bail!(Precondition, "non-finite model input");
    }
    Ok(())
}

fn run<T: Real>(
    params: &ModelParams<T>,
    x_ctx: ArrayView2<'_, T>,
    y_ctx: &[T],
    x_qy: ArrayView2<'_, T>,
    task: TaskKind,
    keep: bool,
) -> Result<(ForwardOutput<T>, Option<ForwardTrace<T>>)> {
    check_inputs(params, &x_ctx, y_ctx, &x_qy)?;
    let n_ctx = x_ctx.nrows();
    let heads = params.config.num_heads;
    let x = concatenate(Axis(0), &[x_ctx, x_qy]).expect("equal widths");
    let y_ctx = Array1::from(y_ctx.to_vec());

    let mut h = linear_fwd(&x.view(), &params.phi_x);
    {
        let wy = params.phi_y.w.row(0);
        for (mut row, &y) in h.rows_mut().into_iter().zip(y_ctx.iter()) {
            row.scaled_add(y, &wy);
            row += &params.phi_y.b;
        }
    }

    let mut layers = Vec::new();
    for layer in &params.layers {
        let (a, norm_attn) = layernorm_fwd(&h, &layer.norm_attn);
        let q = linear_fwd(&a.view(), &layer.wq);
        let k = linear_fwd(&a.view(), &layer.wk);
        let v = linear_fwd(&a.view(), &layer.wv);
        let (o, probs) = attention_fwd(&q, &k, &v, n_ctx, heads);
        let h1 = &h + &linear_fwd(&o.view(), &layer.wo);
        let (b, norm_ffn) = layernorm_fwd(&h1, &layer.norm_ffn);
        let u = linear_fwd(&b.view(), &layer.ffn_in);
        let g = gelu(&u);
        let h2 = &h1 + &linear_fwd(&g.view(), &layer.ffn_out);
        if keep {
            layers.push(LayerTrace {
                norm_attn,
                a,
                q,
                k,
                v,
                probs,
                o,
                norm_ffn,
                b,
                u,
                g,
            });
        }
        h = h2;
    }

    let hq = h.slice(s![n_ctx.., ..]).to_owned();
    let (z, final_norm) = layernorm_fwd(&hq, &params.final_norm);
    let head = match task {
        TaskKind::Classification => &params.head_cls,
        TaskKind::Regression => &params.head_reg,
    };
    let r = linear_fwd(&z.view(), &head.hidden);
    let gr = gelu(&r);
    let out = linear_fwd(&gr.view(), &head.out);
    let output = match task {
        TaskKind::Classification => ForwardOutput::Classification(out),
        TaskKind::Regression => ForwardOutput::Regression(out.column(0).to_owned()),
    };
    if let ForwardOutput::Classification(l) = &output {
        if l.iter().any(|v| !v.is_finite()) {
            bail!(Numeric, "non-finite logits");
        }
    }
    let trace = keep.then(|| ForwardTrace {
        task,
        n_ctx,
        x,
        y_ctx,
        layers,
        final_norm,
        z,
        r,
        gr,
    });
    Ok((output, trace))
}

/// Forward pass recording everything [`backward`] needs.
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    x_ctx: ArrayView2<'_, T>,
    y_ctx: &[T],
    x_qy: ArrayView2<'_, T>,
    task: TaskKind,
) -> Result<(ForwardOutput<T>, ForwardTrace<T>)> {
    let (out, trace) = run(params, x_ctx, y_ctx, x_qy, task, true)?;
    Ok((out, trace.expect("trace kept")))
}

/// Forward pass without recording intermediates.
pub fn predict<T: Real>(
    params: &ModelParams<T>,
    x_ctx: ArrayView2<'_, T>,
    y_ctx: &[T],
    x_qy: ArrayView2<'_, T>,
    task: TaskKind,
) -> Result<ForwardOutput<T>> {
    Ok(run(params, x_ctx, y_ctx, x_qy, task, false)?.0)
}

/// Gradients of `sum(d_output * output)` with respect to every parameter.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    trace: &ForwardTrace<T>,
    d_output: &ForwardOutput<T>,
) -> Result<ModelParams<T>> {
    if d_output.task() != trace.task {
        bail!(Precondition, "gradient seed is {} but the forward pass was {}", d_output.task(), trace.task);
    }
    let n_q = trace.z.nrows();
    if d_output.n_queries() != n_q {
        bail!(Shape, "gradient seed has {} rows, forward had {n_q} queries", d_output.n_queries());
    }
    let n_ctx = trace.n_ctx;
    let mut grads = ModelParams::zeros(&params.config);

    let d_out = d_output.as_matrix();
    let (head, ghead): (&Head<T>, &mut Head<T>) = match trace.task {
        TaskKind::Classification => (&params.head_cls, &mut grads.head_cls),
        TaskKind::Regression => (&params.head_reg, &mut grads.head_reg),
    };
    if d_out.ncols() != head.out.w.ncols() {
        bail!(Shape, "gradient seed has {} columns, head has {}", d_out.ncols(), head.out.w.ncols());
    }
    let d_gr = linear_bwd(&trace.gr.view(), &head.out, &mut ghead.out, &d_out);
    let d_r = gelu_bwd(&trace.r, &d_gr);
    let d_z = linear_bwd(&trace.z.view(), &head.hidden, &mut ghead.hidden, &d_r);
    let d_hq = layernorm_bwd(&trace.final_norm, &params.final_norm, &mut grads.final_norm, &d_z);

    let n = trace.x.nrows();
    let mut dh = Array2::zeros((n, params.config.dim));
    dh.slice_mut(s![n_ctx.., ..]).assign(&d_hq);

    for ((layer, lt), gl) in params.layers.iter().zip(&trace.layers).zip(grads.layers.iter_mut()).rev() {
        // h2 = h1 + ffn_out(gelu(ffn_in(norm_ffn(h1))))
        let d_g = linear_bwd(&lt.g.view(), &layer.ffn_out, &mut gl.ffn_out, &dh);
        let d_u = gelu_bwd(&lt.u, &d_g);
        let d_b = linear_bwd(&lt.b.view(), &layer.ffn_in, &mut gl.ffn_in, &d_u);
        dh += &layernorm_bwd(&lt.norm_ffn, &layer.norm_ffn, &mut gl.norm_ffn, &d_b);
        // h1 = h + wo(attn(q, k, v))
        let d_o = linear_bwd(&lt.o.view(), &layer.wo, &mut gl.wo, &dh);
        let (dq, dk, dv) = attention_bwd(&lt.q, &lt.k, &lt.v, &lt.probs, n_ctx, &d_o);
        let mut d_a = linear_bwd(&lt.a.view(), &layer.wq, &mut gl.wq, &dq);
        d_a += &linear_bwd(&lt.a.view(), &layer.wk, &mut gl.wk, &dk);
        d_a += &linear_bwd(&lt.a.view(), &layer.wv, &mut gl.wv, &dv);
        dh += &layernorm_bwd(&lt.norm_attn, &layer.norm_attn, &mut gl.norm_attn, &d_a);
    }

    linear_bwd_params(&trace.x.view(), &mut grads.phi_x, &dh);
    let d_ctx = dh.slice(s![..n_ctx, ..]);
    let y_col = trace.y_ctx.view().insert_axis(Axis(1));
    grads.phi_y.w += &y_col.t().dot(&d_ctx);
    grads.phi_y.b += &d_ctx.sum_axis(Axis(0));
    Ok(grads)
}
