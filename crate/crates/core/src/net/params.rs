use ndarray::{Array1, Array2};
use rand::Rng;

use super::{ModelConfig, Real};
use crate::error::Result;
use crate::seeded_rng;

/// How a tensor is treated by the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    /// Layer-norm gain or bias; never weight-decayed.
    Norm,
}

/// Affine map `x -> x W + b` with `W` stored as `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub gain: Array1<T>,
    pub bias: Array1<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<T> {
    pub norm_attn: LayerNorm<T>,
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
    pub norm_ffn: LayerNorm<T>,
    pub ffn_in: Linear<T>,
    pub ffn_out: Linear<T>,
}

/// Two-layer MLP head: `d -> d -> out` with a GELU in between.
#[derive(Clone, Debug, PartialEq)]
pub struct Head<T> {
    pub hidden: Linear<T>,
    pub out: Linear<T>,
}

/// All learnable tensors. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub phi_x: Linear<T>,
    pub phi_y: Linear<T>,
    pub layers: Vec<EncoderLayer<T>>,
    pub final_norm: LayerNorm<T>,
    pub head_cls: Head<T>,
    pub head_reg: Head<T>,
}

impl<T: Real> Linear<T> {
    fn zeros(i: usize, o: usize) -> Self {
        Linear {
            w: Array2::zeros((i, o)),
            b: Array1::zeros(o),
        }
    }

    fn glorot<R: Rng>(i: usize, o: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (i + o) as f64).sqrt();
        Linear {
            w: Array2::from_shape_simple_fn((i, o), || T::lit(rng.random_range(-limit..limit))),
            b: Array1::zeros(o),
        }
    }
}

impl<T: Real> LayerNorm<T> {
    fn identity(d: usize) -> Self {
        LayerNorm {
            gain: Array1::ones(d),
            bias: Array1::zeros(d),
        }
    }

    fn zeros(d: usize) -> Self {
        LayerNorm {
            gain: Array1::zeros(d),
            bias: Array1::zeros(d),
        }
    }
}

type TensorRef<'a, T> = (String, ParamRole, &'a [T]);
type TensorMut<'a, T> = (String, ParamRole, &'a mut [T]);

fn linear_ref<'a, T>(name: &str, l: &'a Linear<T>, out: &mut Vec<TensorRef<'a, T>>) {
    out.push((format!("{name}.w"), ParamRole::Weight, l.w.as_slice().expect("standard layout")));
    out.push((format!("{name}.b"), ParamRole::Bias, l.b.as_slice().expect("standard layout")));
}

fn norm_ref<'a, T>(name: &str, n: &'a LayerNorm<T>, out: &mut Vec<TensorRef<'a, T>>) {
    out.push((format!("{name}.gain"), ParamRole::Norm, n.gain.as_slice().expect("standard layout")));
    out.push((format!("{name}.bias"), ParamRole::Norm, n.bias.as_slice().expect("standard layout")));
}

fn linear_mut<'a, T>(name: &str, l: &'a mut Linear<T>, out: &mut Vec<TensorMut<'a, T>>) {
    out.push((format!("{name}.w"), ParamRole::Weight, l.w.as_slice_mut().expect("standard layout")));
    out.push((format!("{name}.b"), ParamRole::Bias, l.b.as_slice_mut().expect("standard layout")));
}

fn norm_mut<'a, T>(name: &str, n: &'a mut LayerNorm<T>, out: &mut Vec<TensorMut<'a, T>>) {
    out.push((format!("{name}.gain"), ParamRole::Norm, n.gain.as_slice_mut().expect("standard layout")));
    out.push((format!("{name}.bias"), ParamRole::Norm, n.bias.as_slice_mut().expect("standard layout")));
}

// Single description of the tensor order, instantiated for shared and mutable access.
macro_rules! walk_tensors {
    ($params:expr, $out:ident, $lin:ident, $norm:ident, $iter:ident, [$($r:tt)*]) => {{
        $lin("phi_x", $($r)* $params.phi_x, &mut $out);
        $lin("phi_y", $($r)* $params.phi_y, &mut $out);
        for (i, layer) in $params.layers.$iter().enumerate() {
            $norm(&format!("layers.{i}.norm_attn"), $($r)* layer.norm_attn, &mut $out);
            $lin(&format!("layers.{i}.attn.wq"), $($r)* layer.wq, &mut $out);
            $lin(&format!("layers.{i}.attn.wk"), $($r)* layer.wk, &mut $out);
            $lin(&format!("layers.{i}.attn.wv"), $($r)* layer.wv, &mut $out);
            $lin(&format!("layers.{i}.attn.wo"), $($r)* layer.wo, &mut $out);
            $norm(&format!("layers.{i}.norm_ffn"), $($r)* layer.norm_ffn, &mut $out);
            $lin(&format!("layers.{i}.ffn_in"), $($r)* layer.ffn_in, &mut $out);
            $lin(&format!("layers.{i}.ffn_out"), $($r)* layer.ffn_out, &mut $out);
        }
        $norm("final_norm", $($r)* $params.final_norm, &mut $out);
        $lin("head_cls.hidden", $($r)* $params.head_cls.hidden, &mut $out);
        $lin("head_cls.out", $($r)* $params.head_cls.out, &mut $out);
        $lin("head_reg.hidden", $($r)* $params.head_reg.hidden, &mut $out);
        $lin("head_reg.out", $($r)* $params.head_reg.out, &mut $out);
    }};
}

impl<T: Real> ModelParams<T> {
    /// Glorot-uniform weights, zero biases, identity layer norms; deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let (d, h) = (config.dim, config.hidden());
        let phi_x = Linear::glorot(config.f_max, d, &mut rng);
        let phi_y = Linear::glorot(1, d, &mut rng);
        let layers = (0..config.num_layers)
            .map(|_| EncoderLayer {
                norm_attn: LayerNorm::identity(d),
                wq: Linear::glorot(d, d, &mut rng),
                wk: Linear::glorot(d, d, &mut rng),
                wv: Linear::glorot(d, d, &mut rng),
                wo: Linear::glorot(d, d, &mut rng),
                norm_ffn: LayerNorm::identity(d),
                ffn_in: Linear::glorot(d, h, &mut rng),
                ffn_out: Linear::glorot(h, d, &mut rng),
            })
            .collect();
        let head_cls = Head {
            hidden: Linear::glorot(d, d, &mut rng),
            out: Linear::glorot(d, config.c_max, &mut rng),
        };
        let head_reg = Head {
            hidden: Linear::glorot(d, d, &mut rng),
            out: Linear::glorot(d, 1, &mut rng),
        };
        Ok(ModelParams {
            config: config.clone(),
            phi_x,
            phi_y,
            layers,
            final_norm: LayerNorm::identity(d),
            head_cls,
            head_reg,
        })
    }

    /// All-zero tensors with the shapes of `config` (gradient accumulator).
    pub fn zeros(config: &ModelConfig) -> Self {
        let (d, h) = (config.dim, config.hidden());
        ModelParams {
            config: config.clone(),
            phi_x: Linear::zeros(config.f_max, d),
            phi_y: Linear::zeros(1, d),
            layers: (0..config.num_layers)
                .map(|_| EncoderLayer {
                    norm_attn: LayerNorm::zeros(d),
                    wq: Linear::zeros(d, d),
                    wk: Linear::zeros(d, d),
                    wv: Linear::zeros(d, d),
                    wo: Linear::zeros(d, d),
                    norm_ffn: LayerNorm::zeros(d),
                    ffn_in: Linear::zeros(d, h),
                    ffn_out: Linear::zeros(h, d),
                })
                .collect(),
            final_norm: LayerNorm::zeros(d),
            head_cls: Head {
                hidden: Linear::zeros(d, d),
                out: Linear::zeros(d, config.c_max),
            },
            head_reg: Head {
                hidden: Linear::zeros(d, d),
                out: Linear::zeros(d, 1),
            },
        }
    }

    /// Visit every tensor in a fixed order as a flat slice.
    pub fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = Vec::new();
        walk_tensors!(self, out, linear_ref, norm_ref, iter, [&]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let mut out = Vec::new();
        walk_tensors!(self, out, linear_mut, norm_mut, iter_mut, [&mut]);
        out
    }

    /// Visit every tensor in a fixed order as a flat slice.
    pub fn for_each(&self, f: &mut dyn FnMut(&str, ParamRole, &[T])) {
        for (name, role, s) in self.tensors() {
            f(&name, role, s);
        }
    }

    pub fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, ParamRole, &mut [T])) {
        for (name, role, s) in self.tensors_mut() {
            f(&name, role, s);
        }
    }

    pub fn count(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, _, s| n += s.len());
        n
    }

    /// Concatenation of all tensors in visiting order.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.count());
        self.for_each(&mut |_, _, s| out.extend_from_slice(s));
        out
    }

    /// Overwrite all tensors from a flat vector in visiting order.
    pub fn copy_from_flat(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.count(), "flat parameter length mismatch");
        let mut off = 0;
        self.for_each_mut(&mut |_, _, s| {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        });
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ModelParams<T>, scale: T) {
        let flat = other.to_flat();
        let mut off = 0;
        self.for_each_mut(&mut |_, _, s| {
            for (a, b) in s.iter_mut().zip(&flat[off..]) {
                *a += scale * *b;
            }
            off += s.len();
        });
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(&mut |_, _, s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }

    /// Convert element type.
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(&self.config);
        let flat: Vec<U> = self.to_flat().into_iter().map(|v| U::lit(v.as_f64())).collect();
        out.copy_from_flat(&flat);
        out
    }
}
