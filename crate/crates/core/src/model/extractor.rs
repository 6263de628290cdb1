//! 2D convolutional backbone producing pixel-aligned feature maps at a
//! quarter of the input resolution.

use super::conv::{self, ConvShape};
use super::params::{Gradients, Init, ParamSet, ParamSpec};
use super::ConvLayer;
use crate::tensor::{Raster, Volume};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct Extractor {
    pub layers: Vec<ConvLayer>,
    pub slope: f64,
    /// Total downsampling factor.
    pub stride: usize,
}

/// Post-activation outputs of every layer, input first.
pub struct ExtractorTrace {
    pub activations: Vec<Volume>,
}

impl Extractor {
    pub fn specs(
        channels: &[usize],
        stride2_layers: &[usize],
        slope: f64,
        first_param: usize,
        specs: &mut Vec<ParamSpec>,
    ) -> Self {
        let mut cin = 3;
        let mut layers = Vec::with_capacity(channels.len());
        let mut stride = 1;
        for (i, &cout) in channels.iter().enumerate() {
            let s = if stride2_layers.contains(&(i + 1)) { 2 } else { 1 };
            stride *= s;
            let shape = ConvShape::conv2d(3, s, cin, cout);
            let weight = first_param + specs.len();
            specs.push(ParamSpec {
                name: format!("extractor.conv{}.weight", i + 1),
                shape: shape.weight_shape(),
                init: Init::HeUniform {
                    fan_in: shape.fan_in(),
                },
            });
            specs.push(ParamSpec {
                name: format!("extractor.conv{}.bias", i + 1),
                shape: vec![cout],
                init: Init::Constant(0.0),
            });
            layers.push(ConvLayer {
                shape,
                weight,
                bias: weight + 1,
            });
            cin = cout;
        }
        Self {
            layers,
            slope,
            stride,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(3, |l| l.shape.cout)
    }

    pub fn forward(
        &self,
        params: &ParamSet,
        rgb: &Raster,
        record: bool,
    ) -> Result<(Raster, Option<ExtractorTrace>)> {
        if rgb.channels != 3 {
            return Err(Error::Shape(format!("expected RGB input, got {} channels", rgb.channels)));
        }
        if rgb.width % self.stride != 0 || rgb.height % self.stride != 0 {
            return Err(Error::Shape(format!(
                "image {}x{} is not divisible by {}",
                rgb.width, rgb.height, self.stride
            )));
        }
        let mut x = Volume {
            dims: [rgb.width, rgb.height, 1],
            channels: 3,
            data: rgb.data.clone(),
        };
        let mut acts = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = conv::forward(&layer.shape, &x, params.get(layer.weight), params.get(layer.bias));
            if i != last {
                conv::leaky_relu(&mut y.data, self.slope);
            }
            if record {
                acts.push(x);
            }
            x = y;
        }
        if record {
            acts.push(x.clone());
        }
        let out = Raster {
            width: x.dims[0],
            height: x.dims[1],
            channels: x.channels,
            data: x.data,
        };
        Ok((out, record.then_some(ExtractorTrace { activations: acts })))
    }

    pub fn backward(
        &self,
        params: &ParamSet,
        trace: &ExtractorTrace,
        grad_out: &Raster,
        grads: &mut Gradients,
    ) {
        let mut g = Volume {
            dims: [grad_out.width, grad_out.height, 1],
            channels: grad_out.channels,
            data: grad_out.data.clone(),
        };
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i != last {
                conv::leaky_relu_backward(&trace.activations[i + 1].data, &mut g.data, self.slope);
            }
            let cg = conv::backward(
                &layer.shape,
                &trace.activations[i],
                params.get(layer.weight),
                &g,
                i > 0,
            );
            grads.add(layer.weight, &cg.weight);
            grads.add(layer.bias, &cg.bias);
            g = cg.input;
        }
    }
}
