//! Channels-last convolution over `Volume`s with zero "same" padding.
//!
//! 2D feature maps are volumes with a z extent of 1 and a 1-deep kernel.
//! Weights are laid out `[kz][ky][kx][cin][cout]` so the innermost loops are
//! contiguous axpys over output channels.

use crate::par;
use crate::tensor::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    /// Kernel extent along x, y, z (odd).
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub cin: usize,
    pub cout: usize,
}

impl ConvShape {
    pub fn conv2d(k: usize, stride: usize, cin: usize, cout: usize) -> Self {
        Self {
            kernel: [k, k, 1],
            stride: [stride, stride, 1],
            cin,
            cout,
        }
    }

    pub fn conv3d(k: usize, stride: usize, cin: usize, cout: usize) -> Self {
        Self {
            kernel: [k; 3],
            stride: [stride; 3],
            cin,
            cout,
        }
    }

    pub fn taps(&self) -> usize {
        self.kernel[0] * self.kernel[1] * self.kernel[2]
    }

    pub fn weight_len(&self) -> usize {
        self.taps() * self.cin * self.cout
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![
            self.kernel[2],
            self.kernel[1],
            self.kernel[0],
            self.cin,
            self.cout,
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.taps() * self.cin
    }

    fn pad(&self, a: usize) -> usize {
        self.kernel[a] / 2
    }

    pub fn out_dims(&self, in_dims: [usize; 3]) -> [usize; 3] {
        let mut o = [0; 3];
        for a in 0..3 {
            o[a] = (in_dims[a] + 2 * self.pad(a) - self.kernel[a]) / self.stride[a] + 1;
        }
        o
    }

    /// Input coordinate read by output `o` at kernel offset `k`, if inside.
    #[inline]
    fn input_coord(&self, a: usize, o: usize, k: usize, n_in: usize) -> Option<usize> {
        let i = (o * self.stride[a] + k) as isize - self.pad(a) as isize;
        (i >= 0 && (i as usize) < n_in).then_some(i as usize)
    }

    /// Output coordinate that reads input `i` at kernel offset `k`, if any.
    #[inline]
    fn output_coord(&self, a: usize, i: usize, k: usize, n_out: usize) -> Option<usize> {
        let num = (i + self.pad(a)) as isize - k as isize;
        if num < 0 || num as usize % self.stride[a] != 0 {
            return None;
        }
        let o = num as usize / self.stride[a];
        (o < n_out).then_some(o)
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn forward(shape: &ConvShape, input: &Volume, weight: &[f64], bias: &[f64]) -> Volume {
    debug_assert_eq!(input.channels, shape.cin);
    debug_assert_eq!(weight.len(), shape.weight_len());
    let in_dims = input.dims;
    let out_dims = shape.out_dims(in_dims);
    let (cin, cout) = (shape.cin, shape.cout);
    let [kx_n, ky_n, kz_n] = shape.kernel;
    let mut out = Volume::zeros(out_dims, cout);
    let row_len = out_dims[0] * cout;
    par::for_each_chunk_mut(&mut out.data, row_len, |row, chunk| {
        let oy = row % out_dims[1];
        let oz = row / out_dims[1];
        for ox in 0..out_dims[0] {
            let acc = &mut chunk[ox * cout..(ox + 1) * cout];
            acc.copy_from_slice(bias);
            for kz in 0..kz_n {
                let Some(iz) = shape.input_coord(2, oz, kz, in_dims[2]) else { continue };
                for ky in 0..ky_n {
                    let Some(iy) = shape.input_coord(1, oy, ky, in_dims[1]) else { continue };
                    for kx in 0..kx_n {
                        let Some(ix) = shape.input_coord(0, ox, kx, in_dims[0]) else { continue };
                        let tap = (kz * ky_n + ky) * kx_n + kx;
                        let x = input.voxel(ix, iy, iz);
                        let w = &weight[tap * cin * cout..(tap + 1) * cin * cout];
                        for (ci, &a) in x.iter().enumerate() {
                            if a != 0.0 {
                                axpy(acc, a, &w[ci * cout..(ci + 1) * cout]);
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

pub struct ConvGrads {
    pub input: Volume,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of a convolution given the upstream gradient of its output.
/// `need_input` skips the input gradient (for the first layer of a network).
pub fn backward(
    shape: &ConvShape,
    input: &Volume,
    weight: &[f64],
    grad_out: &Volume,
    need_input: bool,
) -> ConvGrads {
    let in_dims = input.dims;
    let out_dims = grad_out.dims;
    let (cin, cout) = (shape.cin, shape.cout);
    let [kx_n, ky_n, kz_n] = shape.kernel;
    let taps = shape.taps();
    let out_rows = out_dims[1] * out_dims[2];

    let (weight_grad, bias_grad) = par::chunked_reduce(
        out_rows,
        |rows| {
            let mut gw = vec![0.0; weight.len()];
            let mut gb = vec![0.0; cout];
            for row in rows {
                let oy = row % out_dims[1];
                let oz = row / out_dims[1];
                for ox in 0..out_dims[0] {
                    let g = grad_out.voxel(ox, oy, oz);
                    axpy(&mut gb, 1.0, g);
                    for kz in 0..kz_n {
                        let Some(iz) = shape.input_coord(2, oz, kz, in_dims[2]) else { continue };
                        for ky in 0..ky_n {
                            let Some(iy) = shape.input_coord(1, oy, ky, in_dims[1]) else { continue };
                            for kx in 0..kx_n {
                                let Some(ix) = shape.input_coord(0, ox, kx, in_dims[0]) else { continue };
                                let tap = (kz * ky_n + ky) * kx_n + kx;
                                let x = input.voxel(ix, iy, iz);
                                let gwt = &mut gw[tap * cin * cout..(tap + 1) * cin * cout];
                                for (ci, &a) in x.iter().enumerate() {
                                    if a != 0.0 {
                                        axpy(&mut gwt[ci * cout..(ci + 1) * cout], a, g);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            (gw, gb)
        },
        |acc, part| {
            par::add_assign(&mut acc.0, &part.0);
            par::add_assign(&mut acc.1, &part.1);
        },
    )
    .unwrap_or_else(|| (vec![0.0; weight.len()], vec![0.0; cout]));

    let mut grad_in = Volume::zeros(in_dims, cin);
    if need_input {
        // [tap][cout][cin] so the gather below is an axpy over input channels.
        let mut wt = vec![0.0; weight.len()];
        for t in 0..taps {
            for ci in 0..cin {
                for co in 0..cout {
                    wt[(t * cout + co) * cin + ci] = weight[(t * cin + ci) * cout + co];
                }
            }
        }
        let row_len = in_dims[0] * cin;
        par::for_each_chunk_mut(&mut grad_in.data, row_len, |row, chunk| {
            let iy = row % in_dims[1];
            let iz = row / in_dims[1];
            for ix in 0..in_dims[0] {
                let acc = &mut chunk[ix * cin..(ix + 1) * cin];
                for kz in 0..kz_n {
                    let Some(oz) = shape.output_coord(2, iz, kz, out_dims[2]) else { continue };
                    for ky in 0..ky_n {
                        let Some(oy) = shape.output_coord(1, iy, ky, out_dims[1]) else { continue };
                        for kx in 0..kx_n {
                            let Some(ox) = shape.output_coord(0, ix, kx, out_dims[0]) else { continue };
                            let tap = (kz * ky_n + ky) * kx_n + kx;
                            let g = grad_out.voxel(ox, oy, oz);
                            let w = &wt[tap * cout * cin..(tap + 1) * cout * cin];
                            for (co, &gv) in g.iter().enumerate() {
                                if gv != 0.0 {
                                    axpy(acc, gv, &w[co * cin..(co + 1) * cin]);
                                }
                            }
                        }
                    }
                }
            }
        });
    }

    ConvGrads {
        input: grad_in,
        weight: weight_grad,
        bias: bias_grad,
    }
}

/// Leaky rectifier in place.
pub fn leaky_relu(v: &mut [f64], slope: f64) {
    for x in v {
        if *x < 0.0 {
            *x *= slope;
        }
    }
}

/// Multiplies `grad` by the leaky-rectifier derivative, read off the
/// activation output (the activation preserves sign).
pub fn leaky_relu_backward(activated: &[f64], grad: &mut [f64], slope: f64) {
    for (g, &y) in grad.iter_mut().zip(activated) {
        if y <= 0.0 {
            *g *= slope;
        }
    }
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample2(input: &Volume) -> Volume {
    let [nx, ny, nz] = input.dims;
    let c = input.channels;
    let out_dims = [nx * 2, ny * 2, nz * 2];
    let mut out = Volume::zeros(out_dims, c);
    par::for_each_chunk_mut(&mut out.data, out_dims[0] * c, |row, chunk| {
        let y = row % out_dims[1];
        let z = row / out_dims[1];
        for x in 0..out_dims[0] {
            chunk[x * c..(x + 1) * c].copy_from_slice(input.voxel(x / 2, y / 2, z / 2));
        }
    });
    out
}

/// Adjoint of [`upsample2`]: sums each 2×2×2 block.
pub fn upsample2_backward(grad: &Volume) -> Volume {
    let [nx, ny, nz] = grad.dims;
    let c = grad.channels;
    let dims = [nx / 2, ny / 2, nz / 2];
    let mut out = Volume::zeros(dims, c);
    par::for_each_chunk_mut(&mut out.data, dims[0] * c, |row, chunk| {
        let y = row % dims[1];
        let z = row / dims[1];
        for x in 0..dims[0] {
            let acc = &mut chunk[x * c..(x + 1) * c];
            for dz in 0..2 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        axpy(acc, 1.0, grad.voxel(2 * x + dx, 2 * y + dy, 2 * z + dz));
                    }
                }
            }
        }
    });
    out
}

/// Floor added to each channel's variance in [`standardize`].
pub const STANDARDIZE_EPS: f64 = 1e-10;

/// Shifts and scales every channel to zero mean and unit variance over all
/// voxels. Returns the result and each channel's inverse deviation.
pub fn standardize(v: &Volume) -> (Volume, Vec<f64>) {
    let c = v.channels;
    let n = v.voxel_count() as f64;
    let mut mean = vec![0.0; c];
    for vox in v.data.chunks_exact(c) {
        for (m, x) in mean.iter_mut().zip(vox) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; c];
    for vox in v.data.chunks_exact(c) {
        for ((s, x), m) in var.iter_mut().zip(vox).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    let inv: Vec<f64> = var.iter().map(|s| 1.0 / (s / n + STANDARDIZE_EPS).sqrt()).collect();
    let mut data = v.data.clone();
    for vox in data.chunks_exact_mut(c) {
        for ((x, m), k) in vox.iter_mut().zip(&mean).zip(&inv) {
            *x = (*x - m) * k;
        }
    }
    (
        Volume {
            dims: v.dims,
            channels: c,
            data,
        },
        inv,
    )
}

/// Gradient of [`standardize`] given its output `y`:
/// `k (g - mean(g) - y mean(g y))` per channel.
pub fn standardize_backward(y: &Volume, inv: &[f64], grad: &Volume) -> Volume {
    let c = y.channels;
    let n = y.voxel_count() as f64;
    let (mut mg, mut mgy) = (vec![0.0; c], vec![0.0; c]);
    for (yv, gv) in y.data.chunks_exact(c).zip(grad.data.chunks_exact(c)) {
        for ch in 0..c {
            mg[ch] += gv[ch];
            mgy[ch] += gv[ch] * yv[ch];
        }
    }
    let mut data = grad.data.clone();
    for (out, yv) in data.chunks_exact_mut(c).zip(y.data.chunks_exact(c)) {
        for ch in 0..c {
            out[ch] = inv[ch] * (out[ch] - mg[ch] / n - yv[ch] * mgy[ch] / n);
        }
    }
    Volume {
        dims: y.dims,
        channels: c,
        data,
    }
}

/// Channel concatenation `[a, b]` per voxel.
pub fn concat(a: &Volume, b: &Volume) -> Volume {
    debug_assert_eq!(a.dims, b.dims);
    let (ca, cb) = (a.channels, b.channels);
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    for (va, vb) in a.data.chunks_exact(ca).zip(b.data.chunks_exact(cb)) {
        data.extend_from_slice(va);
        data.extend_from_slice(vb);
    }
    Volume {
        dims: a.dims,
        channels: ca + cb,
        data,
    }
}

/// Splits a concatenated gradient back into its two parts.
pub fn split(v: &Volume, ca: usize) -> (Volume, Volume) {
    let cb = v.channels - ca;
    let n = v.voxel_count();
    let mut a = Vec::with_capacity(n * ca);
    let mut b = Vec::with_capacity(n * cb);
    for vox in v.data.chunks_exact(v.channels) {
        a.extend_from_slice(&vox[..ca]);
        b.extend_from_slice(&vox[ca..]);
    }
    (
        Volume {
            dims: v.dims,
            channels: ca,
            data: a,
        },
        Volume {
            dims: v.dims,
            channels: cb,
            data: b,
        },
    )
}
