//! Dense row-major tensors and the primitive layer computations.
//!
//! Spatial tensors are channel-major `[C, H, W]`. Convolution is
//! cross-correlation with zero padding. All arithmetic is `f64`.
//!
//! The `*_raw` kernels operate on flat slices so the network can run them
//! directly over its parameter buffers; the [`Tensor`] functions are checked
//! wrappers around them.

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data"));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        let n = shape.iter().product();
        Ok(Tensor {
            shape,
            data: vec![0.0; n],
        })
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    /// Internal constructor for kernel outputs whose shape is known good.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(shape.iter().all(|&d| d >= 1) && (1..=MAX_RANK).contains(&shape.len()));
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    fn dims3(&self, what: &str) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::dim(format!(
                "{what} must be rank 3 [C,H,W], got shape {:?}",
                self.shape
            ))),
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::dim(format!(
            "rank must be 1..={MAX_RANK}, got {}",
            shape.len()
        )));
    }
    if let Some(axis) = shape.iter().position(|&d| d == 0) {
        return Err(Error::dim(format!("axis {axis} of shape {shape:?} is zero")));
    }
    Ok(())
}

/// Output extent of a sliding window, or `None` when the window does not fit.
pub fn window_output(extent: usize, window: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = extent + 2 * padding;
    if window == 0 || stride == 0 || window > padded {
        return None;
    }
    Some((padded - window) / stride + 1)
}

/// Range of output positions `o` for which `o * stride + k - pad` lands inside `[0, n)`.
#[inline]
fn valid_outputs(n: usize, out: usize, k: usize, stride: usize, pad: usize) -> Option<(usize, usize)> {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    if n + pad < k + 1 {
        return None;
    }
    let hi = ((n - 1 + pad - k) / stride).min(out - 1);
    (lo <= hi).then_some((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn output_hw(&self) -> Option<(usize, usize)> {
        Some((
            window_output(self.height, self.kernel_h, self.stride, self.padding)?,
            window_output(self.width, self.kernel_w, self.stride, self.padding)?,
        ))
    }
}

/// Forward convolution into `out` (`[C_out, H', W']`), which is overwritten.
pub(crate) fn conv2d_raw(g: &ConvGeometry, input: &[f64], kernels: &[f64], bias: &[f64], out: &mut [f64]) {
    let (oh, ow) = g.output_hw().expect("conv geometry checked by caller");
    let (h, w) = (g.height, g.width);
    let plane = oh * ow;
    let ksize = g.kernel_h * g.kernel_w;
    for oc in 0..g.out_channels {
        let out_plane = &mut out[oc * plane..(oc + 1) * plane];
        out_plane.fill(bias[oc]);
        for ic in 0..g.in_channels {
            let in_plane = &input[ic * h * w..(ic + 1) * h * w];
            let kbase = (oc * g.in_channels + ic) * ksize;
            for ky in 0..g.kernel_h {
                let Some((oy0, oy1)) = valid_outputs(h, oh, ky, g.stride, g.padding) else {
                    continue;
                };
                for kx in 0..g.kernel_w {
                    let Some((ox0, ox1)) = valid_outputs(w, ow, kx, g.stride, g.padding) else {
                        continue;
                    };
                    let wt = kernels[kbase + ky * g.kernel_w + kx];
                    if wt == 0.0 {
                        continue;
                    }
                    for oy in oy0..=oy1 {
                        let iy = oy * g.stride + ky - g.padding;
                        let ix0 = ox0 * g.stride + kx - g.padding;
                        let orow = &mut out_plane[oy * ow + ox0..=oy * ow + ox1];
                        let irow = &in_plane[iy * w..(iy + 1) * w];
                        if g.stride == 1 {
                            for (o, &i) in orow.iter_mut().zip(&irow[ix0..ix0 + ox1 - ox0 + 1]) {
                                *o += wt * i;
                            }
                        } else {
                            for (o, &i) in orow.iter_mut().zip(irow[ix0..].iter().step_by(g.stride)) {
                                *o += wt * i;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates convolution gradients. `grad_in`, when present, is added to.
pub(crate) fn conv2d_backward_raw(
    g: &ConvGeometry,
    input: &[f64],
    kernels: &[f64],
    grad_out: &[f64],
    grad_in: Option<&mut [f64]>,
    grad_kernels: &mut [f64],
    grad_bias: &mut [f64],
) {
    let (oh, ow) = g.output_hw().expect("conv geometry checked by caller");
    let (h, w) = (g.height, g.width);
    let plane = oh * ow;
    let ksize = g.kernel_h * g.kernel_w;
    let mut grad_in = grad_in;
    for oc in 0..g.out_channels {
        let go_plane = &grad_out[oc * plane..(oc + 1) * plane];
        grad_bias[oc] += go_plane.iter().sum::<f64>();
        for ic in 0..g.in_channels {
            let in_off = ic * h * w;
            let kbase = (oc * g.in_channels + ic) * ksize;
            for ky in 0..g.kernel_h {
                let Some((oy0, oy1)) = valid_outputs(h, oh, ky, g.stride, g.padding) else {
                    continue;
                };
                for kx in 0..g.kernel_w {
                    let Some((ox0, ox1)) = valid_outputs(w, ow, kx, g.stride, g.padding) else {
                        continue;
                    };
                    let kidx = kbase + ky * g.kernel_w + kx;
                    let wt = kernels[kidx];
                    let mut acc = 0.0;
                    for oy in oy0..=oy1 {
                        let iy = oy * g.stride + ky - g.padding;
                        let ix0 = ox0 * g.stride + kx - g.padding;
                        let grow = &go_plane[oy * ow + ox0..=oy * ow + ox1];
                        let irow = &input[in_off + iy * w..in_off + (iy + 1) * w];
                        if g.stride == 1 {
                            let irow = &irow[ix0..ix0 + grow.len()];
                            acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                            if let Some(gi) = grad_in.as_deref_mut() {
                                let girow = &mut gi[in_off + iy * w + ix0..in_off + iy * w + ix0 + grow.len()];
                                for (d, &go) in girow.iter_mut().zip(grow) {
                                    *d += wt * go;
                                }
                            }
                        } else {
                            for (j, &go) in grow.iter().enumerate() {
                                let ix = ix0 + j * g.stride;
                                acc += go * irow[ix];
                                if let Some(gi) = grad_in.as_deref_mut() {
                                    gi[in_off + iy * w + ix] += wt * go;
                                }
                            }
                        }
                    }
                    grad_kernels[kidx] += acc;
                }
            }
        }
    }
}

pub(crate) fn maxpool2d_raw(
    (c, h, w): (usize, usize, usize),
    window: usize,
    stride: usize,
    input: &[f64],
    out: &mut [f64],
) {
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..window {
                    let row = &plane[(oy * stride + dy) * w + ox * stride..];
                    for &v in &row[..window] {
                        if v > m {
                            m = v;
                        }
                    }
                }
                out[(ch * oh + oy) * ow + ox] = m;
            }
        }
    }
}

/// Routes each output gradient to the first maximal input of its window.
pub(crate) fn maxpool2d_backward_raw(
    (c, h, w): (usize, usize, usize),
    window: usize,
    stride: usize,
    input: &[f64],
    grad_out: &[f64],
    grad_in: &mut [f64],
) {
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                for dy in 0..window {
                    for dx in 0..window {
                        let idx = base + (oy * stride + dy) * w + ox * stride + dx;
                        if input[idx] > input[best] {
                            best = idx;
                        }
                    }
                }
                grad_in[best] += grad_out[(ch * oh + oy) * ow + ox];
            }
        }
    }
}

pub(crate) fn dense_raw(input: &[f64], weights: &[f64], bias: &[f64], out: &mut [f64]) {
    let n = input.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &weights[i * n..(i + 1) * n];
        *o = bias[i] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
    }
}

pub(crate) fn softmax_raw(input: &[f64], out: &mut [f64]) {
    let max = input.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(input) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: &[f64], stride: usize, padding: usize) -> Result<Tensor> {
    let (c_in, h, w) = input.dims3("conv2d input")?;
    let [c_out, k_in, kh, kw] = *kernels.shape() else {
        return Err(Error::dim(format!(
            "conv2d kernels must be rank 4 [C_out,C_in,kH,kW], got {:?}",
            kernels.shape()
        )));
    };
    if k_in != c_in {
        return Err(Error::dim(format!(
            "kernel C_in axis ({k_in}) does not match input C axis ({c_in})"
        )));
    }
    if bias.len() != c_out {
        return Err(Error::dim(format!(
            "bias length {} does not match kernel C_out axis ({c_out})",
            bias.len()
        )));
    }
    if stride == 0 {
        return Err(Error::arg("conv2d stride must be positive"));
    }
    let g = ConvGeometry {
        in_channels: c_in,
        height: h,
        width: w,
        out_channels: c_out,
        kernel_h: kh,
        kernel_w: kw,
        stride,
        padding,
    };
    let Some((oh, ow)) = g.output_hw() else {
        return Err(Error::dim(format!(
            "kernel {kh}x{kw} (H,W axes) exceeds padded input {}x{}",
            h + 2 * padding,
            w + 2 * padding
        )));
    };
    if bias.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite("conv2d bias"));
    }
    let mut out = vec![0.0; c_out * oh * ow];
    conv2d_raw(&g, input.data(), kernels.data(), bias, &mut out);
    Ok(Tensor::from_parts(vec![c_out, oh, ow], out))
}

pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w) = input.dims3("maxpool2d input")?;
    if window == 0 || stride == 0 {
        return Err(Error::arg("maxpool2d window and stride must be positive"));
    }
    if window > h || window > w {
        return Err(Error::dim(format!(
            "pool window {window} exceeds spatial extent {h}x{w} (H,W axes)"
        )));
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = vec![0.0; c * oh * ow];
    maxpool2d_raw((c, h, w), window, stride, input.data(), &mut out);
    Ok(Tensor::from_parts(vec![c, oh, ow], out))
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor::from_parts(
        input.shape.clone(),
        input.data.iter().map(|&x| x.max(0.0)).collect(),
    )
}

pub fn dense(input: &[f64], weights: &Tensor, bias: &[f64]) -> Result<Vec<f64>> {
    let [m, n] = *weights.shape() else {
        return Err(Error::dim(format!(
            "dense weights must be rank 2 [M,N], got {:?}",
            weights.shape()
        )));
    };
    if input.len() != n {
        return Err(Error::dim(format!(
            "input length {} does not match weight N axis ({n})",
            input.len()
        )));
    }
    if bias.len() != m {
        return Err(Error::dim(format!(
            "bias length {} does not match weight M axis ({m})",
            bias.len()
        )));
    }
    if input.iter().chain(bias).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dense input"));
    }
    let mut out = vec![0.0; m];
    dense_raw(input, weights.data(), bias, &mut out);
    Ok(out)
}

/// Max-shifted softmax. Panics on an empty slice.
pub fn softmax(input: &[f64]) -> Vec<f64> {
    assert!(!input.is_empty(), "softmax of an empty vector");
    let mut out = vec![0.0; input.len()];
    softmax_raw(input, &mut out);
    out
}
