//! Network operators with exact backward passes.
//!
//! Convolutions are plain cross-correlations over `(d, h, w)`. The transposed
//! convolution used for upsampling is implemented as the adjoint of the
//! forward convolution, so the two share one kernel layout
//! `(conv_out, conv_in, kd, kh, kw)`.

use rayon::prelude::*;

use super::Tensor5;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub kernel: Tensor5,
    pub bias: Vec<f64>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub kernel: Tensor5,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn new(kernel: Tensor5, bias: Vec<f64>, stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Shape("stride must be at least 1".into()));
        }
        if !kernel.is_finite() {
            return Err(Error::Shape("kernel has non-finite entries".into()));
        }
        Ok(Self {
            kernel,
            bias,
            stride,
            padding,
        })
    }

    /// Channels on the output side of the forward convolution.
    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn kernel_dims(&self) -> [usize; 3] {
        let s = self.kernel.shape();
        [s[2], s[3], s[4]]
    }
}

fn conv_out_dim(n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if n + 2 * pad < k {
        return Err(Error::Shape(format!(
            "spatial size {n} with padding {pad} is smaller than kernel {k}"
        )));
    }
    Ok((n + 2 * pad - k) / stride + 1)
}

/// Valid output positions along one axis for kernel tap `k`:
/// `o` such that `o * stride + k - pad` lies in `[0, n)`.
#[inline]
fn valid_range(out: usize, n: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // o*s + k >= pad  and  o*s + k < n + pad
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if n + pad > k {
        ((n + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

struct Geometry {
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    stride: usize,
    pad: usize,
}

impl Geometry {
    /// `dst[o] += w * src[i]` over output positions `o` (forward direction).
    #[inline]
    fn gather(&self, dst: &mut [f64], src: &[f64], w: f64, k: [usize; 3]) {
        let [d, h, wd] = self.in_dims;
        let [od, oh, ow] = self.out_dims;
        let (s, p) = (self.stride, self.pad);
        let (z0, z1) = valid_range(od, d, k[0], s, p);
        let (y0, y1) = valid_range(oh, h, k[1], s, p);
        let (x0, x1) = valid_range(ow, wd, k[2], s, p);
        if x0 >= x1 {
            return;
        }
        for oz in z0..z1 {
            let iz = oz * s + k[0] - p;
            for oy in y0..y1 {
                let iy = oy * s + k[1] - p;
                let drow = &mut dst[(oz * oh + oy) * ow..][..ow];
                let srow = &src[(iz * h + iy) * wd..][..wd];
                if s == 1 {
                    let shift = x0 + k[2] - p;
                    for (dv, sv) in drow[x0..x1].iter_mut().zip(&srow[shift..shift + (x1 - x0)]) {
                        *dv += w * sv;
                    }
                } else {
                    for ox in x0..x1 {
                        drow[ox] += w * srow[ox * s + k[2] - p];
                    }
                }
            }
        }
    }

    /// `dst[i] += w * src[o]` over output positions `o` (adjoint direction).
    #[inline]
    fn scatter(&self, dst: &mut [f64], src: &[f64], w: f64, k: [usize; 3]) {
        let [d, h, wd] = self.in_dims;
        let [od, oh, ow] = self.out_dims;
        let (s, p) = (self.stride, self.pad);
        let (z0, z1) = valid_range(od, d, k[0], s, p);
        let (y0, y1) = valid_range(oh, h, k[1], s, p);
        let (x0, x1) = valid_range(ow, wd, k[2], s, p);
        if x0 >= x1 {
            return;
        }
        for oz in z0..z1 {
            let iz = oz * s + k[0] - p;
            for oy in y0..y1 {
                let iy = oy * s + k[1] - p;
                let srow = &src[(oz * oh + oy) * ow..][..ow];
                let drow = &mut dst[(iz * h + iy) * wd..][..wd];
                if s == 1 {
                    let shift = x0 + k[2] - p;
                    for (dv, sv) in drow[shift..shift + (x1 - x0)].iter_mut().zip(&srow[x0..x1]) {
                        *dv += w * sv;
                    }
                } else {
                    for ox in x0..x1 {
                        drow[ox * s + k[2] - p] += w * srow[ox];
                    }
                }
            }
        }
    }

    /// `Σ_o out[o] * inp[o*s + k - p]`
    #[inline]
    fn correlate(&self, inp: &[f64], out: &[f64], k: [usize; 3]) -> f64 {
        let [d, h, wd] = self.in_dims;
        let [od, oh, ow] = self.out_dims;
        let (s, p) = (self.stride, self.pad);
        let (z0, z1) = valid_range(od, d, k[0], s, p);
        let (y0, y1) = valid_range(oh, h, k[1], s, p);
        let (x0, x1) = valid_range(ow, wd, k[2], s, p);
        let mut acc = 0.0;
        if x0 >= x1 {
            return acc;
        }
        for oz in z0..z1 {
            let iz = oz * s + k[0] - p;
            for oy in y0..y1 {
                let iy = oy * s + k[1] - p;
                let orow = &out[(oz * oh + oy) * ow..][..ow];
                let irow = &inp[(iz * h + iy) * wd..][..wd];
                if s == 1 {
                    let shift = x0 + k[2] - p;
                    acc += orow[x0..x1]
                        .iter()
                        .zip(&irow[shift..shift + (x1 - x0)])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                } else {
                    for ox in x0..x1 {
                        acc += orow[ox] * irow[ox * s + k[2] - p];
                    }
                }
            }
        }
        acc
    }
}

fn kernel_taps(kd: [usize; 3]) -> impl Iterator<Item = [usize; 3]> {
    (0..kd[0]).flat_map(move |z| (0..kd[1]).flat_map(move |y| (0..kd[2]).map(move |x| [z, y, x])))
}

/// Linear part of the forward convolution (no bias).
fn correlate_forward(
    x: &Tensor5,
    kernel: &Tensor5,
    stride: usize,
    pad: usize,
    out_dims: [usize; 3],
) -> Tensor5 {
    let [cout, cin, kd, kh, kw] = kernel.shape();
    let geo = Geometry {
        in_dims: x.spatial(),
        out_dims,
        stride,
        pad,
    };
    let batch = x.batch();
    let mut y = Tensor5::zeros([batch, cout, out_dims[0], out_dims[1], out_dims[2]]);
    let plane = y.spatial_len().max(1);
    let kvol = kd * kh * kw;
    let kdata = kernel.data();
    y.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, dst)| {
            let (b, oc) = (idx / cout, idx % cout);
            for ic in 0..cin {
                let src = x.plane(b, ic);
                let wbase = (oc * cin + ic) * kvol;
                for (t, k) in kernel_taps([kd, kh, kw]).enumerate() {
                    geo.gather(dst, src, kdata[wbase + t], k);
                }
            }
        });
    y
}

/// Adjoint of [`correlate_forward`]: maps output-side tensors back to the
/// input side with spatial dims `in_dims`.
fn correlate_adjoint(
    gy: &Tensor5,
    kernel: &Tensor5,
    stride: usize,
    pad: usize,
    in_dims: [usize; 3],
) -> Tensor5 {
    let [cout, cin, kd, kh, kw] = kernel.shape();
    let geo = Geometry {
        in_dims,
        out_dims: gy.spatial(),
        stride,
        pad,
    };
    let batch = gy.batch();
    let mut gx = Tensor5::zeros([batch, cin, in_dims[0], in_dims[1], in_dims[2]]);
    let plane = gx.spatial_len().max(1);
    let kvol = kd * kh * kw;
    let kdata = kernel.data();
    gx.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, dst)| {
            let (b, ic) = (idx / cin, idx % cin);
            for oc in 0..cout {
                let src = gy.plane(b, oc);
                let wbase = (oc * cin + ic) * kvol;
                for (t, k) in kernel_taps([kd, kh, kw]).enumerate() {
                    geo.scatter(dst, src, kdata[wbase + t], k);
                }
            }
        });
    gx
}

/// Kernel gradient of the forward correlation: pairs input-side tensor `x`
/// with output-side gradient `gy`.
fn correlate_kernel_grad(
    x: &Tensor5,
    gy: &Tensor5,
    kdims: [usize; 3],
    stride: usize,
    pad: usize,
) -> Tensor5 {
    let cin = x.channels();
    let cout = gy.channels();
    let geo = Geometry {
        in_dims: x.spatial(),
        out_dims: gy.spatial(),
        stride,
        pad,
    };
    let kvol = kdims.iter().product::<usize>();
    let mut gk = Tensor5::zeros([cout, cin, kdims[0], kdims[1], kdims[2]]);
    gk.data_mut()
        .par_chunks_mut(cin * kvol)
        .enumerate()
        .for_each(|(oc, dst)| {
            for ic in 0..cin {
                for (t, k) in kernel_taps(kdims).enumerate() {
                    let mut acc = 0.0;
                    for b in 0..x.batch() {
                        acc += geo.correlate(x.plane(b, ic), gy.plane(b, oc), k);
                    }
                    dst[ic * kvol + t] = acc;
                }
            }
        });
    gk
}

fn channel_sums(g: &Tensor5) -> Vec<f64> {
    (0..g.channels())
        .map(|c| (0..g.batch()).map(|b| g.plane(b, c).iter().sum::<f64>()).sum())
        .collect()
}

fn add_bias(y: &mut Tensor5, bias: &[f64]) {
    for b in 0..y.batch() {
        for (c, &bv) in bias.iter().enumerate() {
            for v in y.plane_mut(b, c) {
                *v += bv;
            }
        }
    }
}

fn conv_output_dims(x: &Tensor5, p: &ConvParams) -> Result<[usize; 3]> {
    if x.channels() != p.in_channels() {
        return Err(Error::Shape(format!(
            "input has {} channels, kernel expects {}",
            x.channels(),
            p.in_channels()
        )));
    }
    if p.bias.len() != p.out_channels() {
        return Err(Error::Shape("bias length differs from output channels".into()));
    }
    let s = x.spatial();
    let k = p.kernel_dims();
    Ok([
        conv_out_dim(s[0], k[0], p.stride, p.padding)?,
        conv_out_dim(s[1], k[1], p.stride, p.padding)?,
        conv_out_dim(s[2], k[2], p.stride, p.padding)?,
    ])
}

/// `y = w ⋆ x + b` with the configured stride and zero padding.
pub fn conv3d_forward(x: &Tensor5, p: &ConvParams) -> Result<Tensor5> {
    let out = conv_output_dims(x, p)?;
    let mut y = correlate_forward(x, &p.kernel, p.stride, p.padding, out);
    add_bias(&mut y, &p.bias);
    Ok(y)
}

pub fn conv3d_backward(x: &Tensor5, p: &ConvParams, grad_out: &Tensor5) -> Result<(Tensor5, ConvGrads)> {
    let out = conv_output_dims(x, p)?;
    let expect = [x.batch(), p.out_channels(), out[0], out[1], out[2]];
    if grad_out.shape() != expect {
        return Err(Error::Shape(format!(
            "gradient shape {:?} does not match forward output {expect:?}",
            grad_out.shape()
        )));
    }
    let gx = correlate_adjoint(grad_out, &p.kernel, p.stride, p.padding, x.spatial());
    let gk = correlate_kernel_grad(x, grad_out, p.kernel_dims(), p.stride, p.padding);
    Ok((
        gx,
        ConvGrads {
            kernel: gk,
            bias: channel_sums(grad_out),
        },
    ))
}

fn check_resampling_conv(p: &ConvParams) -> Result<()> {
    if p.stride != 2 || p.kernel_dims() != [2, 2, 2] || p.padding != 0 {
        return Err(Error::Shape(
            "down/up convolutions need a 2³ kernel, stride 2 and no padding".into(),
        ));
    }
    Ok(())
}

/// Strided 2³ convolution halving every spatial axis.
pub fn downconv(x: &Tensor5, p: &ConvParams) -> Result<Tensor5> {
    check_resampling_conv(p)?;
    if x.spatial().iter().any(|n| n % 2 != 0) {
        return Err(Error::Shape(format!(
            "downconv needs even spatial dims, got {:?}",
            x.spatial()
        )));
    }
    conv3d_forward(x, p)
}

pub fn downconv_backward(x: &Tensor5, p: &ConvParams, grad_out: &Tensor5) -> Result<(Tensor5, ConvGrads)> {
    check_resampling_conv(p)?;
    conv3d_backward(x, p, grad_out)
}

fn transposed_dims(x: &Tensor5, p: &ConvParams) -> Result<[usize; 3]> {
    if x.channels() != p.out_channels() {
        return Err(Error::Shape(format!(
            "upconv input has {} channels, kernel expects {}",
            x.channels(),
            p.out_channels()
        )));
    }
    if p.bias.len() != p.in_channels() {
        return Err(Error::Shape("upconv bias length differs from output channels".into()));
    }
    let k = p.kernel_dims();
    let s = x.spatial();
    let mut out = [0usize; 3];
    for a in 0..3 {
        let full = (s[a] - 1) * p.stride + k[a];
        if full < 2 * p.padding + 1 {
            return Err(Error::Shape("transposed convolution output is empty".into()));
        }
        out[a] = full - 2 * p.padding;
    }
    Ok(out)
}

/// Transposed convolution: the adjoint of [`conv3d_forward`]'s linear part
/// for the same kernel, plus a bias over the kernel's input-side channels.
pub fn conv_transpose3d(x: &Tensor5, p: &ConvParams) -> Result<Tensor5> {
    let out = transposed_dims(x, p)?;
    let mut y = correlate_adjoint(x, &p.kernel, p.stride, p.padding, out);
    add_bias(&mut y, &p.bias);
    Ok(y)
}

pub fn conv_transpose3d_backward(
    x: &Tensor5,
    p: &ConvParams,
    grad_out: &Tensor5,
) -> Result<(Tensor5, ConvGrads)> {
    let out = transposed_dims(x, p)?;
    let expect = [x.batch(), p.in_channels(), out[0], out[1], out[2]];
    if grad_out.shape() != expect {
        return Err(Error::Shape(format!(
            "gradient shape {:?} does not match transposed output {expect:?}",
            grad_out.shape()
        )));
    }
    let gx = correlate_forward(grad_out, &p.kernel, p.stride, p.padding, x.spatial());
    let gk = correlate_kernel_grad(grad_out, x, p.kernel_dims(), p.stride, p.padding);
    Ok((
        gx,
        ConvGrads {
            kernel: gk,
            bias: channel_sums(grad_out),
        },
    ))
}

/// Stride-2 transposed 2³ convolution doubling every spatial axis.
pub fn upconv(x: &Tensor5, p: &ConvParams) -> Result<Tensor5> {
    check_resampling_conv(p)?;
    conv_transpose3d(x, p)
}

pub fn upconv_backward(x: &Tensor5, p: &ConvParams, grad_out: &Tensor5) -> Result<(Tensor5, ConvGrads)> {
    check_resampling_conv(p)?;
    conv_transpose3d_backward(x, p, grad_out)
}

/// Per-channel parametric ReLU.
pub fn prelu(x: &Tensor5, slopes: &[f64]) -> Result<Tensor5> {
    if slopes.len() != x.channels() {
        return Err(Error::Shape(format!(
            "{} slopes for {} channels",
            slopes.len(),
            x.channels()
        )));
    }
    let mut y = x.clone();
    for b in 0..x.batch() {
        for (c, &a) in slopes.iter().enumerate() {
            for v in y.plane_mut(b, c) {
                if *v <= 0.0 {
                    *v *= a;
                }
            }
        }
    }
    Ok(y)
}

/// Returns `(grad_x, grad_slopes)`.
pub fn prelu_backward(x: &Tensor5, slopes: &[f64], grad_out: &Tensor5) -> Result<(Tensor5, Vec<f64>)> {
    if grad_out.shape() != x.shape() || slopes.len() != x.channels() {
        return Err(Error::Shape("prelu backward shape mismatch".into()));
    }
    let mut gx = grad_out.clone();
    let mut gs = vec![0.0; slopes.len()];
    for b in 0..x.batch() {
        for (c, &a) in slopes.iter().enumerate() {
            let xs = x.plane(b, c);
            let gys = grad_out.plane(b, c);
            let mut acc = 0.0;
            for ((g, &xv), &gy) in gx.plane_mut(b, c).iter_mut().zip(xs).zip(gys) {
                if xv <= 0.0 {
                    *g = a * gy;
                    acc += xv * gy;
                }
            }
            gs[c] += acc;
        }
    }
    Ok((gx, gs))
}

/// Concatenate along the channel axis.
pub fn concat_channels(a: &Tensor5, b: &Tensor5) -> Result<Tensor5> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa[0] != sb[0] || sa[2..] != sb[2..] {
        return Err(Error::Shape(format!("cannot concatenate {sa:?} with {sb:?}")));
    }
    let mut out = Tensor5::zeros([sa[0], sa[1] + sb[1], sa[2], sa[3], sa[4]]);
    for n in 0..sa[0] {
        for c in 0..sa[1] {
            out.plane_mut(n, c).copy_from_slice(a.plane(n, c));
        }
        for c in 0..sb[1] {
            out.plane_mut(n, sa[1] + c).copy_from_slice(b.plane(n, c));
        }
    }
    Ok(out)
}

/// Backward of [`concat_channels`]: the first `first_channels` channels go
/// to the first input, the rest to the second.
pub fn split_channels(g: &Tensor5, first_channels: usize) -> Result<(Tensor5, Tensor5)> {
    let s = g.shape();
    if first_channels > s[1] {
        return Err(Error::Shape("split point beyond channel count".into()));
    }
    let mut a = Tensor5::zeros([s[0], first_channels, s[2], s[3], s[4]]);
    let mut b = Tensor5::zeros([s[0], s[1] - first_channels, s[2], s[3], s[4]]);
    for n in 0..s[0] {
        for c in 0..s[1] {
            if c < first_channels {
                a.plane_mut(n, c).copy_from_slice(g.plane(n, c));
            } else {
                b.plane_mut(n, c - first_channels).copy_from_slice(g.plane(n, c));
            }
        }
    }
    Ok((a, b))
}

/// Repeat channels cyclically up to `channels` (`out[c] = x[c mod C]`).
pub fn tile_channels(x: &Tensor5, channels: usize) -> Tensor5 {
    let s = x.shape();
    let mut out = Tensor5::zeros([s[0], channels, s[2], s[3], s[4]]);
    for n in 0..s[0] {
        for c in 0..channels {
            out.plane_mut(n, c).copy_from_slice(x.plane(n, c % s[1]));
        }
    }
    out
}

pub fn tile_channels_backward(g: &Tensor5, source_channels: usize) -> Tensor5 {
    let s = g.shape();
    let mut out = Tensor5::zeros([s[0], source_channels, s[2], s[3], s[4]]);
    for n in 0..s[0] {
        for c in 0..s[1] {
            for (o, v) in out.plane_mut(n, c % source_channels).iter_mut().zip(g.plane(n, c)) {
                *o += v;
            }
        }
    }
    out
}

pub fn add(a: &Tensor5, b: &Tensor5) -> Result<Tensor5> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "cannot add {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = a.clone();
    out.add_assign(b);
    Ok(out)
}

/// Softmax across channels at every voxel.
pub fn softmax_channels(x: &Tensor5) -> Tensor5 {
    let [nb, nc, ..] = x.shape();
    let n = x.spatial_len();
    let mut y = x.clone();
    let data = y.data_mut();
    for b in 0..nb {
        let base = b * nc * n;
        for i in 0..n {
            let mut m = f64::NEG_INFINITY;
            for c in 0..nc {
                m = m.max(data[base + c * n + i]);
            }
            let mut z = 0.0;
            for c in 0..nc {
                let e = (data[base + c * n + i] - m).exp();
                data[base + c * n + i] = e;
                z += e;
            }
            for c in 0..nc {
                data[base + c * n + i] /= z;
            }
        }
    }
    y
}

/// Backward of [`softmax_channels`] given its output `y`.
pub fn softmax_backward(y: &Tensor5, grad_out: &Tensor5) -> Tensor5 {
    let [nb, nc, ..] = y.shape();
    let n = y.spatial_len();
    let mut gx = grad_out.clone();
    let (yd, gd) = (y.data(), grad_out.data());
    let out = gx.data_mut();
    for b in 0..nb {
        let base = b * nc * n;
        for i in 0..n {
            let mut dot = 0.0;
            for c in 0..nc {
                dot += yd[base + c * n + i] * gd[base + c * n + i];
            }
            for c in 0..nc {
                let k = base + c * n + i;
                out[k] = yd[k] * (gd[k] - dot);
            }
        }
    }
    gx
}

/// 2×2×2 block mean, once per level.
pub fn raw_input_at_level(input: &Tensor5, level: usize) -> Result<Tensor5> {
    let factor = 1usize << level;
    if input.spatial().iter().any(|n| n % factor != 0) {
        return Err(Error::Shape(format!(
            "spatial dims {:?} not divisible by {factor}",
            input.spatial()
        )));
    }
    let mut cur = input.clone();
    for _ in 0..level {
        cur = halve(&cur);
    }
    Ok(cur)
}

fn halve(x: &Tensor5) -> Tensor5 {
    let [nb, nc, d, h, w] = x.shape();
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    let mut y = Tensor5::zeros([nb, nc, od, oh, ow]);
    for b in 0..nb {
        for c in 0..nc {
            let src = x.plane(b, c);
            let dst = y.plane_mut(b, c);
            for z in 0..od {
                for yy in 0..oh {
                    for xx in 0..ow {
                        let mut acc = 0.0;
                        for dz in 0..2 {
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    acc += src[((2 * z + dz) * h + 2 * yy + dy) * w + 2 * xx + dx];
                                }
                            }
                        }
                        dst[(z * oh + yy) * ow + xx] = acc / 8.0;
                    }
                }
            }
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel() {
        let x = Tensor5::from_fn([1, 1, 3, 4, 5], |i| (i[2] * 20 + i[3] * 5 + i[4]) as f64);
        let p = ConvParams::new(Tensor5::full([1, 1, 1, 1, 1], 1.0), vec![0.0], 1, 0).unwrap();
        assert_eq!(conv3d_forward(&x, &p).unwrap(), x);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let x = Tensor5::full([2, 3, 4, 4, 4], 7.0);
        let p = ConvParams::new(Tensor5::zeros([2, 3, 3, 3, 3]), vec![1.5, -2.0], 1, 1).unwrap();
        let y = conv3d_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), [2, 2, 4, 4, 4]);
        assert!(y.plane(1, 0).iter().all(|&v| v == 1.5));
        assert!(y.plane(0, 1).iter().all(|&v| v == -2.0));
    }

    #[test]
    fn ones_cube_sums_to_27() {
        let x = Tensor5::full([1, 1, 3, 3, 3], 1.0);
        let p = ConvParams::new(Tensor5::full([1, 1, 3, 3, 3], 1.0), vec![0.5], 1, 0).unwrap();
        let y = conv3d_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1, 1]);
        assert_eq!(y.data(), &[27.5]);
    }

    #[test]
    fn output_dims_follow_formula() {
        let x = Tensor5::zeros([1, 2, 7, 6, 5]);
        let p = ConvParams::new(Tensor5::zeros([3, 2, 3, 2, 1]), vec![0.0; 3], 2, 1).unwrap();
        let y = conv3d_forward(&x, &p).unwrap();
        assert_eq!(y.spatial(), [(7 + 2 - 3) / 2 + 1, (6 + 2 - 2) / 2 + 1, (5 + 2 - 1) / 2 + 1]);
        let bad = ConvParams::new(Tensor5::zeros([3, 1, 3, 3, 3]), vec![0.0; 3], 1, 1).unwrap();
        assert!(matches!(conv3d_forward(&x, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_grad_gives_zero_grads() {
        let x = Tensor5::from_fn([1, 2, 4, 4, 4], |i| i.iter().sum::<usize>() as f64);
        let p = ConvParams::new(Tensor5::full([3, 2, 3, 3, 3], 0.1), vec![0.0; 3], 1, 1).unwrap();
        let y = conv3d_forward(&x, &p).unwrap();
        let (gx, g) = conv3d_backward(&x, &p, &Tensor5::zeros(y.shape())).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(g.kernel.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_grad_is_sum_of_grad_out() {
        let x = Tensor5::full([2, 1, 1, 1, 1], 3.0);
        let p = ConvParams::new(Tensor5::full([1, 1, 1, 1, 1], 2.0), vec![0.0], 1, 0).unwrap();
        let g = Tensor5::new([2, 1, 1, 1, 1], vec![0.25, 1.5]).unwrap();
        let (_, grads) = conv3d_backward(&x, &p, &g).unwrap();
        assert_eq!(grads.bias, vec![1.75]);
    }

    #[test]
    fn down_up_shapes() {
        let k = ConvParams::new(Tensor5::full([2, 1, 2, 2, 2], 0.5), vec![0.0; 2], 2, 0).unwrap();
        let x = Tensor5::zeros([1, 1, 4, 4, 4]);
        let d = downconv(&x, &k).unwrap();
        assert_eq!(d.shape(), [1, 2, 2, 2, 2]);
        let up = ConvParams::new(Tensor5::full([2, 1, 2, 2, 2], 0.5), vec![0.0; 1], 2, 0).unwrap();
        assert_eq!(upconv(&d, &up).unwrap().shape(), [1, 1, 4, 4, 4]);
        assert!(downconv(&Tensor5::zeros([1, 1, 3, 4, 4]), &k).is_err());
    }

    #[test]
    fn prelu_cases() {
        let x = Tensor5::new([1, 1, 1, 1, 4], vec![-2.0, -0.5, 0.5, 3.0]).unwrap();
        assert_eq!(prelu(&x, &[1.0]).unwrap(), x);
        let neg = Tensor5::new([1, 1, 1, 1, 2], vec![-2.0, -0.5]).unwrap();
        assert!(prelu(&neg, &[0.0]).unwrap().data().iter().all(|&v| v == 0.0));
        let (gx, gs) = prelu_backward(&x, &[0.25], &Tensor5::full([1, 1, 1, 1, 4], 1.0)).unwrap();
        assert_eq!(gx.data(), &[0.25, 0.25, 1.0, 1.0]);
        assert_eq!(gs, vec![-2.5]);
    }

    #[test]
    fn concat_and_split() {
        let a = Tensor5::from_fn([1, 2, 4, 4, 4], |i| i[1] as f64);
        let b = Tensor5::full([1, 1, 4, 4, 4], 9.0);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), [1, 3, 4, 4, 4]);
        let (ga, gb) = split_channels(&c, 2).unwrap();
        assert_eq!(ga, a);
        assert_eq!(gb, b);
        let empty = Tensor5::zeros([1, 0, 4, 4, 4]);
        assert_eq!(concat_channels(&a, &empty).unwrap(), a);
        assert!(concat_channels(&a, &Tensor5::zeros([1, 1, 4, 4, 2])).is_err());
    }

    #[test]
    fn raw_levels() {
        let x = Tensor5::from_fn([1, 1, 4, 4, 4], |i| (i[2] * 16 + i[3] * 4 + i[4]) as f64);
        assert_eq!(raw_input_at_level(&x, 0).unwrap(), x);
        let l1 = raw_input_at_level(&x, 1).unwrap();
        assert_eq!(l1.shape(), [1, 1, 2, 2, 2]);
        // block (0,0,0): values {0,1,4,5,16,17,20,21} mean 10.5; each block step adds 32/8/2
        assert_eq!(l1.get([0, 0, 0, 0, 0]), 10.5);
        assert_eq!(l1.get([0, 0, 1, 1, 1]), 10.5 + 32.0 + 8.0 + 2.0);
        let c = raw_input_at_level(&Tensor5::full([1, 1, 8, 8, 8], 2.5), 3).unwrap();
        assert_eq!(c.data(), &[2.5]);
        assert!(raw_input_at_level(&x, 3).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let x = Tensor5::from_fn([2, 3, 2, 2, 2], |i| (i[1] as f64 - 1.0) * (i[4] as f64 + 0.3) * 40.0);
        let y = softmax_channels(&x);
        for b in 0..2 {
            for i in 0..8 {
                let s: f64 = (0..3).map(|c| y.plane(b, c)[i]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
