//! Forward and backward kernels for the layer types the metric network uses.
//!
//! Spatial layers take `[C, H, W]` or a batch `[N, C, H, W]`; dense layers
//! take `[in]` or `[N, ...]` with the trailing axes flattened. Every
//! backward returns exact analytic gradients.

use super::tensor::{gemm, Tensor};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel: usize,
    pub pad: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(
        input: [usize; 3],
        filters: usize,
        kernel: usize,
        pad: usize,
        stride: usize,
    ) -> Result<Self, NnError> {
        let [channels, height, width] = input;
        if kernel == 0 || stride == 0 || filters == 0 {
            return Err(NnError::dimension("conv", "kernel, stride and filters must be positive"));
        }
        if height + 2 * pad < kernel || width + 2 * pad < kernel {
            return Err(NnError::dimension(
                "conv",
                format!("kernel {kernel} larger than padded input {height}x{width} (pad {pad})"),
            ));
        }
        Ok(ConvGeometry {
            channels,
            height,
            width,
            filters,
            kernel,
            pad,
            stride,
            out_height: (height + 2 * pad - kernel) / stride + 1,
            out_width: (width + 2 * pad - kernel) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_height * self.out_width
    }

    fn in_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn out_len(&self) -> usize {
        self.filters * self.cols()
    }

    /// Unfolds one sample so that each column holds one receptive field.
    fn im2col(&self, input: &[f64], cols: &mut [f64]) {
        let (k, p) = (self.kernel, self.cols());
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &input[c * self.height * self.width..][..self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut cols[row * p..][..p];
                    for oy in 0..self.out_height {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.out_width..][..self.out_width];
                        if iy < 0 || iy >= self.height as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..][..self.width];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.width as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters column gradients back.
    fn col2im(&self, cols: &[f64], grad: &mut [f64]) {
        let (k, p) = (self.kernel, self.cols());
        let mut row = 0;
        for c in 0..self.channels {
            let plane = &mut grad[c * self.height * self.width..][..self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let src = &cols[row * p..][..p];
                    for oy in 0..self.out_height {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.width..][..self.width];
                        for ox in 0..self.out_width {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.width as isize {
                                dst[ix as usize] += src[oy * self.out_width + ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Splits a spatial tensor into `(batch, [C, H, W], was_batched)`.
fn spatial(t: &Tensor, layer: &str) -> Result<(usize, [usize; 3], bool), NnError> {
    match *t.shape() {
        [c, h, w] => Ok((1, [c, h, w], false)),
        [n, c, h, w] => Ok((n, [c, h, w], true)),
        ref s => Err(NnError::dimension(layer, format!("expected [C,H,W] or [N,C,H,W], got {s:?}"))),
    }
}

fn with_batch(batched: bool, n: usize, dims: &[usize]) -> Vec<usize> {
    let mut shape = Vec::with_capacity(dims.len() + 1);
    if batched {
        shape.push(n);
    }
    shape.extend_from_slice(dims);
    shape
}

fn conv_geometry(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    pad: usize,
    stride: usize,
) -> Result<(usize, bool, ConvGeometry), NnError> {
    let (n, dims, batched) = spatial(input, "conv")?;
    let &[o, c, kh, kw] = weights.shape() else {
        return Err(NnError::dimension("conv", format!("weights {:?} not [O,C,K,K]", weights.shape())));
    };
    if kh != kw {
        return Err(NnError::dimension("conv", format!("non-square kernel {kh}x{kw}")));
    }
    if c != dims[0] {
        return Err(NnError::dimension(
            "conv",
            format!("input has {} channels, weights expect {c}", dims[0]),
        ));
    }
    if bias.shape() != [o] {
        return Err(NnError::dimension("conv", format!("bias {:?}, expected [{o}]", bias.shape())));
    }
    Ok((n, batched, ConvGeometry::new(dims, o, kh, pad, stride)?))
}

/// Zero-padded cross-correlation.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    pad: usize,
    stride: usize,
) -> Result<Tensor, NnError> {
    let (n, batched, geo) = conv_geometry(input, weights, bias, pad, stride)?;
    let mut out = vec![0.0; n * geo.out_len()];
    conv_forward_raw(&geo, n, input.data(), weights.data(), bias.data(), &mut out);
    Tensor::from_vec(
        &with_batch(batched, n, &[geo.filters, geo.out_height, geo.out_width]),
        out,
    )
}

pub(crate) fn conv_forward_raw(
    geo: &ConvGeometry,
    n: usize,
    input: &[f64],
    weights: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let (r, p) = (geo.rows(), geo.cols());
    let mut cols = vec![0.0; r * p];
    for s in 0..n {
        geo.im2col(&input[s * geo.in_len()..][..geo.in_len()], &mut cols);
        let y = &mut out[s * geo.out_len()..][..geo.out_len()];
        for (o, row) in y.chunks_exact_mut(p).enumerate() {
            row.fill(bias[o]);
        }
        gemm(geo.filters, r, p, weights, (r, 1), &cols, (p, 1), 1.0, y);
    }
}

/// Accumulates weight and bias gradients, and writes the input gradient
/// when `grad_input` is given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward_raw(
    geo: &ConvGeometry,
    n: usize,
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    grad_weights: &mut [f64],
    grad_bias: &mut [f64],
    mut grad_input: Option<&mut [f64]>,
) {
    let (r, p) = (geo.rows(), geo.cols());
    let mut cols = vec![0.0; r * p];
    let mut dcols = vec![0.0; if grad_input.is_some() { r * p } else { 0 }];
    for s in 0..n {
        let dy = &grad_out[s * geo.out_len()..][..geo.out_len()];
        for (o, row) in dy.chunks_exact(p).enumerate() {
            grad_bias[o] += row.iter().sum::<f64>();
        }
        geo.im2col(&input[s * geo.in_len()..][..geo.in_len()], &mut cols);
        // dW += dY * cols^T
        gemm(geo.filters, p, r, dy, (p, 1), &cols, (1, p), 1.0, grad_weights);
        if let Some(dx) = grad_input.as_deref_mut() {
            // dcols = W^T * dY
            gemm(r, geo.filters, p, weights, (1, r), dy, (p, 1), 0.0, &mut dcols);
            let dx = &mut dx[s * geo.in_len()..][..geo.in_len()];
            dx.fill(0.0);
            geo.col2im(&dcols, dx);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
    pad: usize,
    stride: usize,
) -> Result<Conv2dGrads, NnError> {
    let (n, batched, geo) = conv_geometry(input, weights, bias, pad, stride)?;
    let expected = with_batch(batched, n, &[geo.filters, geo.out_height, geo.out_width]);
    if grad_out.shape() != expected.as_slice() {
        return Err(NnError::dimension(
            "conv",
            format!("gradient {:?}, expected {expected:?}", grad_out.shape()),
        ));
    }
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = Tensor::zeros(bias.shape());
    let mut gx = Tensor::zeros(input.shape());
    conv_backward_raw(
        &geo,
        n,
        input.data(),
        weights.data(),
        grad_out.data(),
        gw.data_mut(),
        gb.data_mut(),
        Some(gx.data_mut()),
    );
    Ok(Conv2dGrads {
        input: gx,
        weights: gw,
        bias: gb,
    })
}

/// Indices into the input tensor of each pooled maximum.
pub type Argmax = Vec<usize>;

/// 2x2 max pooling with stride 2. Ties go to the first element in
/// row-major order within the window.
pub fn maxpool2x2_forward(input: &Tensor) -> Result<(Tensor, Argmax), NnError> {
    let (n, [c, h, w], batched) = spatial(input, "maxpool")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(NnError::dimension("maxpool", format!("odd spatial size {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let first = base + 2 * oy * w + 2 * ox;
                let mut best = first;
                for idx in [first + 1, first + w, first + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(&with_batch(batched, n, &[c, oh, ow]), out)?, argmax))
}

/// Routes each output gradient to the input position that won the pool.
pub fn maxpool2x2_backward(
    grad_out: &Tensor,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor, NnError> {
    if grad_out.len() != argmax.len() {
        return Err(NnError::dimension(
            "maxpool",
            format!("{} gradients for {} pooled cells", grad_out.len(), argmax.len()),
        ));
    }
    let mut grad = Tensor::zeros(input_shape);
    let gx = grad.data_mut();
    for (&g, &i) in grad_out.data().iter().zip(argmax) {
        let slot = gx
            .get_mut(i)
            .ok_or_else(|| NnError::dimension("maxpool", format!("argmax {i} out of range")))?;
        *slot += g;
    }
    Ok(grad)
}

/// `(batch, features, was_batched)` for a dense-layer input.
fn dense_dims(input: &Tensor, inputs: usize) -> Result<(usize, bool), NnError> {
    let shape = input.shape();
    if shape.len() == 1 && shape[0] == inputs {
        return Ok((1, false));
    }
    if shape.len() >= 2 && shape[1..].iter().product::<usize>() == inputs {
        return Ok((shape[0], true));
    }
    Err(NnError::dimension(
        "dense",
        format!("input {shape:?} does not flatten to {inputs} features"),
    ))
}

fn dense_shapes(weights: &Tensor, bias: &Tensor) -> Result<(usize, usize), NnError> {
    let &[outputs, inputs] = weights.shape() else {
        return Err(NnError::dimension("dense", format!("weights {:?} not [out,in]", weights.shape())));
    };
    if bias.shape() != [outputs] {
        return Err(NnError::dimension("dense", format!("bias {:?}, expected [{outputs}]", bias.shape())));
    }
    Ok((outputs, inputs))
}

/// `y = W x + b` for each sample.
pub fn fc_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let (outputs, inputs) = dense_shapes(weights, bias)?;
    let (n, batched) = dense_dims(input, inputs)?;
    let mut out = vec![0.0; n * outputs];
    dense_forward_raw(n, inputs, outputs, input.data(), weights.data(), bias.data(), &mut out);
    Tensor::from_vec(&with_batch(batched, n, &[outputs]), out)
}

pub(crate) fn dense_forward_raw(
    n: usize,
    inputs: usize,
    outputs: usize,
    x: &[f64],
    w: &[f64],
    b: &[f64],
    out: &mut [f64],
) {
    for row in out.chunks_exact_mut(outputs) {
        row.copy_from_slice(b);
    }
    // Y = X * W^T
    gemm(n, inputs, outputs, x, (inputs, 1), w, (1, inputs), 1.0, out);
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward_raw(
    n: usize,
    inputs: usize,
    outputs: usize,
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
    grad_weights: &mut [f64],
    grad_bias: &mut [f64],
    grad_input: Option<&mut [f64]>,
) {
    for row in grad_out.chunks_exact(outputs) {
        for (gb, g) in grad_bias.iter_mut().zip(row) {
            *gb += g;
        }
    }
    // dW += G^T * X
    gemm(outputs, n, inputs, grad_out, (1, outputs), x, (inputs, 1), 1.0, grad_weights);
    if let Some(dx) = grad_input {
        // dX = G * W
        gemm(n, outputs, inputs, grad_out, (outputs, 1), w, (inputs, 1), 0.0, dx);
    }
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn fc_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
) -> Result<DenseGrads, NnError> {
    let (outputs, inputs) = dense_shapes(weights, bias)?;
    let (n, _) = dense_dims(input, inputs)?;
    if grad_out.len() != n * outputs {
        return Err(NnError::dimension(
            "dense",
            format!("gradient {:?} for {n} samples of {outputs}", grad_out.shape()),
        ));
    }
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = Tensor::zeros(bias.shape());
    let mut gx = Tensor::zeros(input.shape());
    dense_backward_raw(
        n,
        inputs,
        outputs,
        input.data(),
        weights.data(),
        grad_out.data(),
        gw.data_mut(),
        gb.data_mut(),
        Some(gx.data_mut()),
    );
    Ok(DenseGrads {
        input: gx,
        weights: gw,
        bias: gb,
    })
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Passes the gradient where the input is strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError> {
    if input.len() != grad_out.len() {
        return Err(NnError::dimension(
            "relu",
            format!("gradient {:?} for input {:?}", grad_out.shape(), input.shape()),
        ));
    }
    let mut grad = grad_out.clone().reshape(input.shape())?;
    relu_backward_raw(input.data(), grad.data_mut());
    Ok(grad)
}

pub(crate) fn relu_backward_raw(input: &[f64], grad: &mut [f64]) {
    for (g, &x) in grad.iter_mut().zip(input) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
}
