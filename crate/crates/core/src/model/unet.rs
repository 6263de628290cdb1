//! 3D U-Net over the cost volume: strided encoder, nearest-neighbour
//! upsampling decoder with skip connections, and a 1×1×1 output projection.

use super::conv::{self, ConvShape};
use super::params::{Gradients, Init, ParamSet, ParamSpec};
use super::ConvLayer;
use crate::tensor::Volume;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct UNet {
    pub encoder: Vec<ConvLayer>,
    pub decoder: Vec<ConvLayer>,
    pub head: ConvLayer,
    pub slope: f64,
}

/// Activations kept for the backward pass.
pub struct UNetTrace {
    /// Input followed by every encoder output (post-activation).
    pub skips: Vec<Volume>,
    /// Decoder conv inputs (upsampled + concatenated) and outputs.
    pub dec_inputs: Vec<Volume>,
    pub dec_outputs: Vec<Volume>,
}

fn layer(
    name: String,
    shape: ConvShape,
    init: Init,
    first_param: usize,
    specs: &mut Vec<ParamSpec>,
) -> ConvLayer {
    let weight = first_param + specs.len();
    specs.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: shape.weight_shape(),
        init,
    });
    specs.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: vec![shape.cout],
        init: Init::Constant(0.0),
    });
    ConvLayer {
        shape,
        weight,
        bias: weight + 1,
    }
}

impl UNet {
    /// `encoder[i]` is the output width of encoder stage `i`; `decoder[i]`
    /// the output width of the decoder stage that restores level
    /// `encoder.len() - 1 - i`.
    pub fn specs(
        cin: usize,
        encoder: &[usize],
        decoder: &[usize],
        cout: usize,
        slope: f64,
        first_param: usize,
        specs: &mut Vec<ParamSpec>,
    ) -> Result<Self> {
        if encoder.len() != decoder.len() || encoder.is_empty() {
            return Err(Error::Config(format!(
                "U-Net needs matching non-empty encoder/decoder plans, got {} and {}",
                encoder.len(),
                decoder.len()
            )));
        }
        let mut level_channels = vec![cin];
        let mut enc = Vec::new();
        let mut c = cin;
        for (i, &co) in encoder.iter().enumerate() {
            let shape = ConvShape::conv3d(3, 2, c, co);
            let init = Init::HeUniform { fan_in: shape.fan_in() };
            enc.push(layer(format!("unet.down{}", i + 1), shape, init, first_param, specs));
            level_channels.push(co);
            c = co;
        }
        let mut dec = Vec::new();
        for (i, &co) in decoder.iter().enumerate() {
            let skip = level_channels[encoder.len() - 1 - i];
            let shape = ConvShape::conv3d(3, 1, c + skip, co);
            let init = Init::HeUniform { fan_in: shape.fan_in() };
            dec.push(layer(format!("unet.up{}", i + 1), shape, init, first_param, specs));
            c = co;
        }
        let shape = ConvShape::conv3d(1, 1, c, cout);
        let init = Init::LinearUniform { fan_in: shape.fan_in() };
        let head = layer("unet.out".into(), shape, init, first_param, specs);
        Ok(Self {
            encoder: enc,
            decoder: dec,
            head,
            slope,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.encoder[0].shape.cin
    }

    pub fn out_channels(&self) -> usize {
        self.head.shape.cout
    }

    /// Product of all encoder strides.
    pub fn factor(&self) -> usize {
        1 << self.encoder.len()
    }

    pub fn forward(&self, params: &ParamSet, input: &Volume, record: bool) -> Result<(Volume, Option<UNetTrace>)> {
        let f = self.factor();
        if input.dims.iter().any(|d| d % f != 0) {
            return Err(Error::Shape(format!(
                "U-Net input dims {:?} must be divisible by {f}",
                input.dims
            )));
        }
        if input.channels != self.in_channels() {
            return Err(Error::Shape(format!(
                "U-Net expects {} input channels, got {}",
                self.in_channels(),
                input.channels
            )));
        }
        let mut skips = vec![input.clone()];
        for l in &self.encoder {
            let mut y = conv::forward(&l.shape, skips.last().unwrap(), params.get(l.weight), params.get(l.bias));
            conv::leaky_relu(&mut y.data, self.slope);
            skips.push(y);
        }
        let n = self.encoder.len();
        let mut x = skips[n].clone();
        let mut dec_inputs = Vec::new();
        let mut dec_outputs = Vec::new();
        for (i, l) in self.decoder.iter().enumerate() {
            let up = conv::upsample2(&x);
            let cat = conv::concat(&up, &skips[n - 1 - i]);
            let mut y = conv::forward(&l.shape, &cat, params.get(l.weight), params.get(l.bias));
            conv::leaky_relu(&mut y.data, self.slope);
            if record {
                dec_inputs.push(cat);
                dec_outputs.push(y.clone());
            }
            x = y;
        }
        let out = conv::forward(&self.head.shape, &x, params.get(self.head.weight), params.get(self.head.bias));
        let trace = record.then_some(UNetTrace {
            skips,
            dec_inputs,
            dec_outputs,
        });
        Ok((out, trace))
    }

    /// Returns the gradient with respect to the input.
    pub fn backward(&self, params: &ParamSet, trace: &UNetTrace, grad_out: &Volume, grads: &mut Gradients) -> Volume {
        let n = self.encoder.len();
        let last_dec = trace.dec_outputs.last().unwrap_or(&trace.skips[n]);
        let hg = conv::backward(&self.head.shape, last_dec, params.get(self.head.weight), grad_out, true);
        grads.add(self.head.weight, &hg.weight);
        grads.add(self.head.bias, &hg.bias);
        let mut g = hg.input;
        // Gradients flowing into each encoder level through skip connections.
        let mut skip_grads: Vec<Option<Volume>> = vec![None; n + 1];
        for (i, l) in self.decoder.iter().enumerate().rev() {
            conv::leaky_relu_backward(&trace.dec_outputs[i].data, &mut g.data, self.slope);
            let cg = conv::backward(&l.shape, &trace.dec_inputs[i], params.get(l.weight), &g, true);
            grads.add(l.weight, &cg.weight);
            grads.add(l.bias, &cg.bias);
            let level = n - 1 - i;
            let up_channels = l.shape.cin - trace.skips[level].channels;
            let (g_up, g_skip) = conv::split(&cg.input, up_channels);
            skip_grads[level] = Some(g_skip);
            g = conv::upsample2_backward(&g_up);
        }
        // `g` is now the gradient at the deepest encoder output.
        for (i, l) in self.encoder.iter().enumerate().rev() {
            if let Some(s) = skip_grads[i + 1].take() {
                crate::par::add_assign(&mut g.data, &s.data);
            }
            conv::leaky_relu_backward(&trace.skips[i + 1].data, &mut g.data, self.slope);
            let cg = conv::backward(&l.shape, &trace.skips[i], params.get(l.weight), &g, true);
            grads.add(l.weight, &cg.weight);
            grads.add(l.bias, &cg.bias);
            g = cg.input;
        }
        if let Some(s) = skip_grads[0].take() {
            crate::par::add_assign(&mut g.data, &s.data);
        }
        g
    }
}
