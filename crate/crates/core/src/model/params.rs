use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::StreamRng;

/// A named parameter tensor, row-major in `shape`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

/// How a tensor is initialized.
#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`; for layers followed by a leaky rectifier.
    HeUniform { fan_in: usize },
    /// Uniform in `±sqrt(3 / fan_in)`; for linear outputs.
    LinearUniform { fan_in: usize },
    Constant(f64),
    /// Explicit values, for short bias vectors.
    Vector(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// The flat list of model parameters in a fixed, architecture-defined order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet {
    pub tensors: Vec<ParamTensor>,
}

impl ParamSet {
    pub fn from_specs(specs: &[ParamSpec], rng: &mut StreamRng) -> Self {
        let tensors = specs
            .iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let data = match &s.init {
                    Init::HeUniform { fan_in } => uniform(rng, n, (6.0 / *fan_in as f64).sqrt()),
                    Init::LinearUniform { fan_in } => uniform(rng, n, (3.0 / *fan_in as f64).sqrt()),
                    Init::Constant(c) => vec![*c; n],
                    Init::Vector(v) => v.clone(),
                };
                ParamTensor {
                    name: s.name.clone(),
                    shape: s.shape.clone(),
                    data,
                }
            })
            .collect();
        Self { tensors }
    }

    pub fn zeros(specs: &[ParamSpec]) -> Self {
        Self {
            tensors: specs
                .iter()
                .map(|s| ParamTensor {
                    name: s.name.clone(),
                    shape: s.shape.clone(),
                    data: vec![0.0; s.shape.iter().product()],
                })
                .collect(),
        }
    }

    #[inline]
    pub fn get(&self, idx: usize) -> &[f64] {
        &self.tensors[idx].data
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn infos(&self) -> Vec<TensorInfo> {
        self.tensors
            .iter()
            .map(|t| TensorInfo {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

fn uniform(rng: &mut StreamRng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Gradient buffers laid out like a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            tensors: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    #[inline]
    pub fn add(&mut self, idx: usize, values: &[f64]) {
        crate::par::add_assign(&mut self.tensors[idx], values);
    }

    pub fn add_all(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            crate::par::add_assign(a, b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in &mut self.tensors {
            for x in t {
                *x *= k;
            }
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.tensors.iter().flatten().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|x| x.is_finite())
    }
}
