//! Slice-level kernels for channel-major `(channel, row, column)` feature maps.

use serde::{Deserialize, Serialize};

/// Channel-major feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    /// First `channels` channels as one contiguous slice.
    pub fn prefix(&self, channels: usize) -> &[f64] {
        &self.data[..channels * self.plane_len()]
    }

    pub fn channel_range(&self, from: usize, to: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[from * n..to * n]
    }

    pub fn channel_range_mut(&mut self, from: usize, to: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[from * n..to * n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    /// `ln(1 + e^x)`; smooth everywhere, used where exact finite differences matter.
    Softplus,
}

impl Activation {
    pub fn apply(self, data: &mut [f64]) {
        match self {
            Activation::Relu => data.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Softplus => data.iter_mut().for_each(|v| {
                *v = if *v > 30.0 { *v } else { v.exp().ln_1p() };
            }),
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the activation output.
    pub fn backward(self, output: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Relu => grad.iter_mut().zip(output).for_each(|(g, &o)| {
                if o <= 0.0 {
                    *g = 0.0;
                }
            }),
            // d/dx softplus = sigmoid(x) = 1 - exp(-softplus(x))
            Activation::Softplus => grad.iter_mut().zip(output).for_each(|(g, &o)| {
                *g *= -(-o).exp_m1();
            }),
        }
    }
}

/// Geometry of a same-padded, stride-one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }
}

/// Column/row overlap for a tap offset `d` on an axis of length `n`:
/// output indices `lo..hi` read input indices `lo + d..hi + d`.
#[inline]
fn overlap(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo, hi.max(lo))
}

/// `out = bias + conv(input, weight)` with zero padding.
pub fn conv2d_forward(
    shape: ConvShape,
    height: usize,
    width: usize,
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let ConvShape {
        in_channels: cin,
        out_channels: cout,
        kernel: k,
    } = shape;
    let n = height * width;
    let pad = (k / 2) as isize;
    debug_assert_eq!(input.len(), cin * n);
    debug_assert_eq!(out.len(), cout * n);
    for co in 0..cout {
        let out_plane = &mut out[co * n..(co + 1) * n];
        out_plane.fill(bias[co]);
        for ci in 0..cin {
            let in_plane = &input[ci * n..(ci + 1) * n];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = overlap(dy, height);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = overlap(dx, width);
                    let wv = weight[((co * cin + ci) * k + ky) * k + kx];
                    if wv == 0.0 || x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let src_row = (y as isize + dy) as usize * width;
                        let src = &in_plane[(src_row as isize + x0 as isize + dx) as usize..][..x1 - x0];
                        let dst = &mut out_plane[y * width + x0..y * width + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates `grad_input`, `grad_weight`, `grad_bias` for [`conv2d_forward`].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    shape: ConvShape,
    height: usize,
    width: usize,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) {
    let ConvShape {
        in_channels: cin,
        out_channels: cout,
        kernel: k,
    } = shape;
    let n = height * width;
    let pad = (k / 2) as isize;
    for co in 0..cout {
        let g_plane = &grad_out[co * n..(co + 1) * n];
        grad_bias[co] += g_plane.iter().sum::<f64>();
        for ci in 0..cin {
            let in_plane = &input[ci * n..(ci + 1) * n];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = overlap(dy, height);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = overlap(dx, width);
                    if x0 >= x1 {
                        continue;
                    }
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let src_start = ((y as isize + dy) * width as isize + x0 as isize + dx) as usize;
                        let src = &in_plane[src_start..src_start + (x1 - x0)];
                        let g = &g_plane[y * width + x0..y * width + x1];
                        acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    }
                    grad_weight[((co * cin + ci) * k + ky) * k + kx] += acc;
                }
            }
        }
    }
    let Some(grad_input) = grad_input else {
        return;
    };
    for co in 0..cout {
        let g_plane = &grad_out[co * n..(co + 1) * n];
        for ci in 0..cin {
            let gi_plane = &mut grad_input[ci * n..(ci + 1) * n];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = overlap(dy, height);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = overlap(dx, width);
                    let wv = weight[((co * cin + ci) * k + ky) * k + kx];
                    if wv == 0.0 || x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let dst_start = ((y as isize + dy) * width as isize + x0 as isize + dx) as usize;
                        let dst = &mut gi_plane[dst_start..dst_start + (x1 - x0)];
                        let g = &g_plane[y * width + x0..y * width + x1];
                        for (d, s) in dst.iter_mut().zip(g) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 average pooling; `height` and `width` must be even.
pub fn avg_pool2(channels: usize, height: usize, width: usize, input: &[f64]) -> Vec<f64> {
    let (oh, ow) = (height / 2, width / 2);
    let mut out = vec![0.0; channels * oh * ow];
    for ch in 0..channels {
        let src = &input[ch * height * width..];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for y in 0..oh {
            let r0 = &src[2 * y * width..];
            let r1 = &src[(2 * y + 1) * width..];
            for x in 0..ow {
                dst[y * ow + x] = 0.25 * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
            }
        }
    }
    out
}

/// Adjoint of [`avg_pool2`]; `height`/`width` are the full-resolution dimensions.
pub fn avg_pool2_backward(channels: usize, height: usize, width: usize, grad_out: &[f64]) -> Vec<f64> {
    let (oh, ow) = (height / 2, width / 2);
    let mut grad = vec![0.0; channels * height * width];
    for ch in 0..channels {
        let g = &grad_out[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut grad[ch * height * width..(ch + 1) * height * width];
        for y in 0..height {
            for x in 0..width {
                dst[y * width + x] = 0.25 * g[(y / 2) * ow + x / 2];
            }
        }
    }
    grad
}

/// Nearest-neighbour 2x upsampling from `height x width`.
pub fn upsample2(channels: usize, height: usize, width: usize, input: &[f64], out: &mut [f64]) {
    let (oh, ow) = (height * 2, width * 2);
    for ch in 0..channels {
        let src = &input[ch * height * width..(ch + 1) * height * width];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                dst[y * ow + x] = src[(y / 2) * width + x / 2];
            }
        }
    }
}

/// Adjoint of [`upsample2`]; `height`/`width` are the low-resolution dimensions.
pub fn upsample2_backward(channels: usize, height: usize, width: usize, grad_out: &[f64]) -> Vec<f64> {
    let (oh, ow) = (height * 2, width * 2);
    let mut grad = vec![0.0; channels * height * width];
    for ch in 0..channels {
        let g = &grad_out[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut grad[ch * height * width..(ch + 1) * height * width];
        for y in 0..oh {
            for x in 0..ow {
                dst[(y / 2) * width + x / 2] += g[y * ow + x];
            }
        }
    }
    grad
}

/// In-place softmax across channels at each pixel.
pub fn softmax_channels(channels: usize, plane: usize, data: &mut [f64]) {
    for i in 0..plane {
        let mut max = f64::NEG_INFINITY;
        for k in 0..channels {
            max = max.max(data[k * plane + i]);
        }
        let mut sum = 0.0;
        for k in 0..channels {
            let e = (data[k * plane + i] - max).exp();
            data[k * plane + i] = e;
            sum += e;
        }
        for k in 0..channels {
            data[k * plane + i] /= sum;
        }
    }
}
