//! Field MLP: stacked leaky-rectified dense layers and a 4-wide linear head
//! (raw density, then raw RGB).

use super::params::{Gradients, Init, ParamSet, ParamSpec};

pub const HEAD_WIDTH: usize = 4;

#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub width: usize,
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Vec<Dense>,
    pub head: Dense,
    pub slope: f64,
}

/// Per-thread buffers for one sample's activations.
pub struct MlpScratch {
    acts: Vec<Vec<f64>>,
    grad: Vec<f64>,
    grad_next: Vec<f64>,
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dense(name: String, fan_in: usize, width: usize, init: Init, bias_init: f64, first: usize, specs: &mut Vec<ParamSpec>) -> Dense {
    let weight = first + specs.len();
    specs.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![fan_in, width],
        init,
    });
    specs.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: vec![width],
        init: Init::Constant(bias_init),
    });
    Dense {
        weight,
        bias: weight + 1,
        fan_in,
        width,
    }
}

impl Dense {
    /// `out = b + xᵀW`.
    #[inline]
    fn apply(&self, params: &ParamSet, x: &[f64], out: &mut [f64]) {
        let w = params.get(self.weight);
        out.copy_from_slice(params.get(self.bias));
        for (k, &xk) in x.iter().enumerate() {
            if xk != 0.0 {
                axpy(out, xk, &w[k * self.width..(k + 1) * self.width]);
            }
        }
    }
}

impl Mlp {
    /// Head bias is initialized to `[sigma_bias, 0, 0, 0]`.
    pub fn specs(
        input: usize,
        width: usize,
        depth: usize,
        slope: f64,
        sigma_bias: f64,
        first_param: usize,
        specs: &mut Vec<ParamSpec>,
    ) -> Self {
        let mut hidden = Vec::with_capacity(depth);
        let mut fan_in = input;
        for i in 0..depth {
            hidden.push(dense(
                format!("mlp.fc{}", i + 1),
                fan_in,
                width,
                Init::HeUniform { fan_in },
                0.0,
                first_param,
                specs,
            ));
            fan_in = width;
        }
        let head = dense(
            "mlp.head".into(),
            fan_in,
            HEAD_WIDTH,
            Init::LinearUniform { fan_in },
            0.0,
            first_param,
            specs,
        );
        if sigma_bias != 0.0 {
            let spec = specs.last_mut().unwrap();
            spec.init = Init::Vector(vec![sigma_bias, 0.0, 0.0, 0.0]);
        }
        Self { hidden, head, slope }
    }

    pub fn input_width(&self) -> usize {
        self.hidden.first().map_or(self.head.fan_in, |d| d.fan_in)
    }

    pub fn scratch(&self) -> MlpScratch {
        let widest = self
            .hidden
            .iter()
            .map(|d| d.width.max(d.fan_in))
            .max()
            .unwrap_or(self.head.fan_in)
            .max(HEAD_WIDTH);
        MlpScratch {
            acts: self.hidden.iter().map(|d| vec![0.0; d.width]).collect(),
            grad: vec![0.0; widest],
            grad_next: vec![0.0; widest],
        }
    }

    /// Raw head outputs for one input row.
    pub fn forward(&self, params: &ParamSet, x: &[f64], s: &mut MlpScratch, out: &mut [f64; HEAD_WIDTH]) {
        debug_assert_eq!(x.len(), self.input_width());
        for (i, d) in self.hidden.iter().enumerate() {
            let (done, rest) = s.acts.split_at_mut(i);
            let input = if i == 0 { x } else { &done[i - 1][..] };
            d.apply(params, input, &mut rest[0]);
            for v in rest[0].iter_mut() {
                if *v < 0.0 {
                    *v *= self.slope;
                }
            }
        }
        let last = s.acts.last().map_or(x, |a| &a[..]);
        self.head.apply(params, last, out);
    }

    /// Accumulates parameter gradients for one row given the gradient of the
    /// raw head outputs, and writes the input gradient into `grad_x` when
    /// given. Activations must come from [`forward`](Self::forward) on the
    /// same `x` with the same scratch.
    pub fn backward(
        &self,
        params: &ParamSet,
        x: &[f64],
        s: &mut MlpScratch,
        grad_head: &[f64; HEAD_WIDTH],
        grads: &mut Gradients,
        grad_x: Option<&mut [f64]>,
    ) {
        let mut layers: Vec<&Dense> = self.hidden.iter().collect();
        layers.push(&self.head);
        let n = layers.len();
        s.grad[..HEAD_WIDTH].copy_from_slice(grad_head);
        let mut grad_x = grad_x;
        for li in (0..n).rev() {
            let d = layers[li];
            let input: &[f64] = if li == 0 { x } else { &s.acts[li - 1] };
            if li < n - 1 {
                // Leaky-rectifier derivative, read off the stored output.
                let out = &s.acts[li];
                for (gv, &y) in s.grad[..d.width].iter_mut().zip(out) {
                    if y <= 0.0 {
                        *gv *= self.slope;
                    }
                }
            }
            let g: &[f64] = &s.grad[..d.width];
            let gw = &mut grads.tensors[d.weight];
            for (k, &xk) in input.iter().enumerate() {
                if xk != 0.0 {
                    axpy(&mut gw[k * d.width..(k + 1) * d.width], xk, g);
                }
            }
            axpy(&mut grads.tensors[d.bias], 1.0, g);
            if li == 0 && grad_x.is_none() {
                break;
            }
            let w = params.get(d.weight);
            let target: &mut [f64] = if li == 0 {
                grad_x.as_deref_mut().unwrap()
            } else {
                &mut s.grad_next[..d.fan_in]
            };
            for k in 0..d.fan_in {
                target[k] = dot(&w[k * d.width..(k + 1) * d.width], g);
            }
            if li > 0 {
                std::mem::swap(&mut s.grad, &mut s.grad_next);
            }
        }
    }
}
