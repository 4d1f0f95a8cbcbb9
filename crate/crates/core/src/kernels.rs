//! Forward-only numeric kernels for video latents: causal 3D convolution,
//! 3D pixel shuffle/unshuffle, dual-path latent fusion, grouped channel
//! average/repeat, RoPE-3D, and QK normalization.
//!
//! Everything here is stateless and pure; there is no training path.

use crate::error::{Error, Result};
use crate::tensor::{pairwise_mean, Tensor};

/// A rank-5 tensor laid out (B, C, T, H, W) row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor(Tensor);

impl VideoTensor {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.shape().len() != 5 {
            return Err(Error::shape(format!(
                "video tensor must have rank 5, got {:?}",
                t.shape()
            )));
        }
        Ok(VideoTensor(t))
    }

    pub fn from_parts(b: usize, c: usize, t: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Tensor::from_vec(vec![b, c, t, h, w], data)?)
    }

    pub fn zeros(b: usize, c: usize, t: usize, h: usize, w: usize) -> Self {
        VideoTensor(Tensor::zeros(vec![b, c, t, h, w]))
    }

    pub fn dims(&self) -> (usize, usize, usize, usize, usize) {
        let s = self.0.shape();
        (s[0], s[1], s[2], s[3], s[4])
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    #[inline]
    fn index(&self, b: usize, c: usize, t: usize, h: usize, w: usize) -> usize {
        let (_, cs, ts, hs, ws) = self.dims();
        (((b * cs + c) * ts + t) * hs + h) * ws + w
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, t: usize, h: usize, w: usize) -> f64 {
        self.0.data()[self.index(b, c, t, h, w)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, t: usize, h: usize, w: usize, v: f64) {
        let i = self.index(b, c, t, h, w);
        self.0.data_mut()[i] = v;
    }
}

/// Convolution weights (C_out, C_in, k_t, k_h, k_w) with bias and strides.
/// Spatial kernels must be odd so same-padding is symmetric; the temporal
/// kernel index runs oldest frame first.
#[derive(Debug, Clone)]
pub struct ConvKernel3D {
    pub weights: Tensor,
    pub bias: Tensor,
    pub stride_t: usize,
    pub stride_s: usize,
}

impl ConvKernel3D {
    pub fn new(weights: Tensor, bias: Tensor, stride_t: usize, stride_s: usize) -> Result<Self> {
        let s = weights.shape();
        if s.len() != 5 {
            return Err(Error::shape(format!("kernel weights must have rank 5, got {s:?}")));
        }
        let (c_out, _c_in, k_t, k_h, k_w) = (s[0], s[1], s[2], s[3], s[4]);
        if k_t < 1 {
            return Err(Error::shape("temporal kernel size must be >= 1".to_string()));
        }
        if k_h % 2 == 0 || k_w % 2 == 0 {
            return Err(Error::shape(format!(
                "spatial kernel sizes must be odd for symmetric padding, got {k_h}x{k_w}"
            )));
        }
        if bias.shape() != [c_out] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match {c_out} output channels",
                bias.shape()
            )));
        }
        if stride_t == 0 || stride_s == 0 {
            return Err(Error::shape("strides must be positive".to_string()));
        }
        Ok(ConvKernel3D { weights, bias, stride_t, stride_s })
    }

    /// Identity kernel: 1x1x1, unit weight per channel, zero bias.
    pub fn identity(channels: usize) -> Self {
        let mut w = vec![0.0; channels * channels];
        for c in 0..channels {
            w[c * channels + c] = 1.0;
        }
        ConvKernel3D {
            weights: Tensor::from_vec(vec![channels, channels, 1, 1, 1], w).unwrap(),
            bias: Tensor::zeros(vec![channels]),
            stride_t: 1,
            stride_s: 1,
        }
    }

    pub fn c_out(&self) -> usize {
        self.weights.shape()[0]
    }
    pub fn c_in(&self) -> usize {
        self.weights.shape()[1]
    }
    pub fn k_t(&self) -> usize {
        self.weights.shape()[2]
    }
    pub fn k_h(&self) -> usize {
        self.weights.shape()[3]
    }
    pub fn k_w(&self) -> usize {
        self.weights.shape()[4]
    }
}

/// Temporally causal 3D convolution: output frame j is a function of input
/// frames <= j * stride_t only. The k_t - 1 frames before the clip are
/// zeros; spatial borders use symmetric same-padding.
pub fn causal_conv3d(x: &VideoTensor, k: &ConvKernel3D) -> Result<VideoTensor> {
    let (b, c_in, t_in, h_in, w_in) = x.dims();
    if c_in != k.c_in() {
        return Err(Error::shape(format!(
            "input has {c_in} channels, kernel expects {}",
            k.c_in()
        )));
    }
    let (k_t, k_h, k_w) = (k.k_t(), k.k_h(), k.k_w());
    let (pad_h, pad_w) = ((k_h - 1) / 2, (k_w - 1) / 2);
    let t_out = t_in.div_ceil(k.stride_t);
    let h_out = h_in.div_ceil(k.stride_s);
    let w_out = w_in.div_ceil(k.stride_s);
    let c_out = k.c_out();

    let mut out = VideoTensor::zeros(b, c_out, t_out, h_out, w_out);
    let wdat = k.weights.data();
    for bi in 0..b {
        for co in 0..c_out {
            for tj in 0..t_out {
                // Window ends at the strided input frame; dt runs oldest
                // frame first.
                let t_end = tj * k.stride_t;
                for hj in 0..h_out {
                    for wj in 0..w_out {
                        let mut acc = k.bias.data()[co];
                        for ci in 0..c_in {
                            for dt in 0..k_t {
                                let ti = t_end as isize - (k_t - 1 - dt) as isize;
                                if ti < 0 {
                                    continue; // zero left-padding
                                }
                                for dh in 0..k_h {
                                    let hi = (hj * k.stride_s + dh) as isize - pad_h as isize;
                                    if hi < 0 || hi >= h_in as isize {
                                        continue;
                                    }
                                    for dw in 0..k_w {
                                        let wi = (wj * k.stride_s + dw) as isize - pad_w as isize;
                                        if wi < 0 || wi >= w_in as isize {
                                            continue;
                                        }
                                        let widx = ((((co * c_in) + ci) * k_t + dt) * k_h + dh)
                                            * k_w
                                            + dw;
                                        acc += wdat[widx]
                                            * x.get(bi, ci, ti as usize, hi as usize, wi as usize);
                                    }
                                }
                            }
                        }
                        out.set(bi, co, tj, hj, wj, acc);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Space/time-to-channel reindexing. Output channel o * C + c (offset-major,
/// offset o = (dt * s_s + dh) * s_s + dw) holds input channel c at block
/// offset (dt, dh, dw), so a contiguous group of C output channels is one
/// spatial-temporal block position across all input channels.
pub fn pixel_unshuffle3d(x: &VideoTensor, s_t: usize, s_s: usize) -> Result<VideoTensor> {
    let (b, c, t, h, w) = x.dims();
    if s_t == 0 || s_s == 0 {
        return Err(Error::shape("strides must be positive".to_string()));
    }
    if t % s_t != 0 || h % s_s != 0 || w % s_s != 0 {
        return Err(Error::shape(format!(
            "dims ({t}, {h}, {w}) not divisible by strides ({s_t}, {s_s}, {s_s})"
        )));
    }
    let (t2, h2, w2) = (t / s_t, h / s_s, w / s_s);
    let factor = s_t * s_s * s_s;
    let mut out = VideoTensor::zeros(b, c * factor, t2, h2, w2);
    for bi in 0..b {
        for ci in 0..c {
            for tj in 0..t2 {
                for hj in 0..h2 {
                    for wj in 0..w2 {
                        for dt in 0..s_t {
                            for dh in 0..s_s {
                                for dw in 0..s_s {
                                    let o = (dt * s_s + dh) * s_s + dw;
                                    let v =
                                        x.get(bi, ci, tj * s_t + dt, hj * s_s + dh, wj * s_s + dw);
                                    out.set(bi, o * c + ci, tj, hj, wj, v);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`pixel_unshuffle3d`].
pub fn pixel_shuffle3d(x: &VideoTensor, s_t: usize, s_s: usize) -> Result<VideoTensor> {
    let (b, c_big, t, h, w) = x.dims();
    if s_t == 0 || s_s == 0 {
        return Err(Error::shape("strides must be positive".to_string()));
    }
    let factor = s_t * s_s * s_s;
    if c_big % factor != 0 {
        return Err(Error::shape(format!(
            "channel count {c_big} not divisible by {factor}"
        )));
    }
    let c = c_big / factor;
    let mut out = VideoTensor::zeros(b, c, t * s_t, h * s_s, w * s_s);
    for bi in 0..b {
        for ci in 0..c {
            for tj in 0..t {
                for hj in 0..h {
                    for wj in 0..w {
                        for dt in 0..s_t {
                            for dh in 0..s_s {
                                for dw in 0..s_s {
                                    let o = (dt * s_s + dh) * s_s + dw;
                                    let v = x.get(bi, o * c + ci, tj, hj, wj);
                                    out.set(bi, ci, tj * s_t + dt, hj * s_s + dh, wj * s_s + dw, v);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Mean across G contiguous channel groups of size c_z. Uses the pairwise
/// reduction, so the average-of-copies identity is exact whenever G is a
/// power of two (the default block factor 8 included).
pub fn grouped_channel_average(u: &VideoTensor, c_z: usize) -> Result<VideoTensor> {
    let (b, c, t, h, w) = u.dims();
    if c_z == 0 || c % c_z != 0 {
        return Err(Error::shape(format!(
            "channel count {c} is not a multiple of group size {c_z}"
        )));
    }
    let g = c / c_z;
    let mut out = VideoTensor::zeros(b, c_z, t, h, w);
    let mut group = vec![0.0; g];
    for bi in 0..b {
        for ci in 0..c_z {
            for tj in 0..t {
                for hj in 0..h {
                    for wj in 0..w {
                        for (k, slot) in group.iter_mut().enumerate() {
                            *slot = u.get(bi, k * c_z + ci, tj, hj, wj);
                        }
                        out.set(bi, ci, tj, hj, wj, pairwise_mean(&group));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Tile the channel block G times; averaging the result back over G groups
/// reproduces the input.
pub fn grouped_channel_repeat(z: &VideoTensor, g: usize) -> Result<VideoTensor> {
    if g == 0 {
        return Err(Error::shape("group count must be >= 1".to_string()));
    }
    let (b, c, t, h, w) = z.dims();
    let mut out = VideoTensor::zeros(b, g * c, t, h, w);
    for bi in 0..b {
        for k in 0..g {
            for ci in 0..c {
                for tj in 0..t {
                    for hj in 0..h {
                        for wj in 0..w {
                            out.set(bi, k * c + ci, tj, hj, wj, z.get(bi, ci, tj, hj, wj));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Block strides used by the dual-path compression stage.
pub const DUAL_PATH_STRIDE_T: usize = 2;
pub const DUAL_PATH_STRIDE_S: usize = 2;

/// Dual-path compression: unshuffled causal-conv features plus the grouped
/// channel average of the unshuffled input, summed elementwise.
///
/// The conv must keep stride 1 (the unshuffle does the downsampling) and
/// emit c_z / (s_t * s_s^2) channels so its unshuffled output lands on c_z.
pub fn dual_path_encode(x: &VideoTensor, k: &ConvKernel3D, c_z: usize) -> Result<Tensor> {
    if k.stride_t != 1 || k.stride_s != 1 {
        return Err(Error::config(
            "dual-path conv must use stride 1; the pixel unshuffle performs the downsampling"
                .to_string(),
        ));
    }
    let factor = DUAL_PATH_STRIDE_T * DUAL_PATH_STRIDE_S * DUAL_PATH_STRIDE_S;
    if k.c_out() * factor != c_z {
        return Err(Error::shape(format!(
            "conv path lands on {} channels after unshuffle, latent dim is {c_z}",
            k.c_out() * factor
        )));
    }
    let conv = causal_conv3d(x, k)?;
    let h_conv = pixel_unshuffle3d(&conv, DUAL_PATH_STRIDE_T, DUAL_PATH_STRIDE_S)?;
    let shortcut = pixel_unshuffle3d(x, DUAL_PATH_STRIDE_T, DUAL_PATH_STRIDE_S)?;
    let h_avg = grouped_channel_average(&shortcut, c_z)?;
    if h_conv.dims() != h_avg.dims() {
        return Err(Error::shape(format!(
            "path shapes diverge: {:?} vs {:?}",
            h_conv.dims(),
            h_avg.dims()
        )));
    }
    h_conv.tensor().add(h_avg.tensor())
}

/// Latent grid produced by the compression stage for a (T, H, W) clip.
pub fn latent_shape(t: usize, h: usize, w: usize) -> (usize, usize, usize) {
    (t.div_ceil(8), h.div_ceil(16), w.div_ceil(16))
}

/// Per-axis channel split for rotary embeddings over (frame, height, width),
/// with a geometric period ladder starting at 2*pi*base^0 positions.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RopeSpec {
    pub d_f: usize,
    pub d_h: usize,
    pub d_w: usize,
    pub base: f64,
}

impl RopeSpec {
    pub fn new(d_f: usize, d_h: usize, d_w: usize, base: f64) -> Result<Self> {
        for (axis, d) in [("frame", d_f), ("height", d_h), ("width", d_w)] {
            if d == 0 || d % 2 != 0 {
                return Err(Error::config(format!(
                    "rope {axis} split must be even and positive, got {d}"
                )));
            }
        }
        if !(base > 1.0) {
            return Err(Error::config(format!("rope base must exceed 1, got {base}")));
        }
        Ok(RopeSpec { d_f, d_h, d_w, base })
    }

    pub fn head_dim(&self) -> usize {
        self.d_f + self.d_h + self.d_w
    }
}

fn rope1d_in_place(seg: &mut [f64], pos: f64, base: f64) {
    let m = seg.len();
    let half = m / 2;
    for j in 0..half {
        let freq = base.powf(-2.0 * j as f64 / m as f64);
        let angle = pos * freq;
        let (sin, cos) = angle.sin_cos();
        let (a, b) = (seg[2 * j], seg[2 * j + 1]);
        seg[2 * j] = a * cos - b * sin;
        seg[2 * j + 1] = a * sin + b * cos;
    }
}

/// Rotary embedding over (frame, height, width) positions. `x` is
/// (tokens x head_dim); each channel group gets RoPE-1D with its axis
/// coordinate. Rotations preserve norms exactly up to rounding.
pub fn rope3d(x: &Tensor, positions: &[(usize, usize, usize)], spec: &RopeSpec) -> Result<Tensor> {
    if x.shape().len() != 2 || x.shape()[1] != spec.head_dim() {
        return Err(Error::shape(format!(
            "rope input {:?}, expected [tokens, {}]",
            x.shape(),
            spec.head_dim()
        )));
    }
    let tokens = x.shape()[0];
    if positions.len() != tokens {
        return Err(Error::shape("one position triple per token required".to_string()));
    }
    let d = spec.head_dim();
    let mut out = x.data().to_vec();
    for (i, &(f, h, w)) in positions.iter().enumerate() {
        let row = &mut out[i * d..(i + 1) * d];
        let (seg_f, rest) = row.split_at_mut(spec.d_f);
        let (seg_h, seg_w) = rest.split_at_mut(spec.d_h);
        rope1d_in_place(seg_f, f as f64, spec.base);
        rope1d_in_place(seg_h, h as f64, spec.base);
        rope1d_in_place(seg_w, w as f64, spec.base);
    }
    Tensor::from_vec(vec![tokens, d], out)
}

/// RMS-normalize query and key rows over the head dimension, then scale by
/// the per-head gains. An all-zero row stays zero rather than dividing by
/// zero.
pub fn qk_norm(q: &Tensor, k: &Tensor, g_q: f64, g_k: f64) -> Result<(Tensor, Tensor)> {
    Ok((rms_scale(q, g_q)?, rms_scale(k, g_k)?))
}

fn rms_scale(x: &Tensor, gain: f64) -> Result<Tensor> {
    if x.shape().is_empty() {
        return Err(Error::shape("qk_norm input needs at least one axis".to_string()));
    }
    let d = *x.shape().last().unwrap();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d) {
        let ms = crate::tensor::pairwise_sum_by(row, |v| v * v) / d as f64;
        if ms == 0.0 {
            continue;
        }
        let s = gain / ms.sqrt();
        for v in row.iter_mut() {
            *v *= s;
        }
    }
    Tensor::from_vec(x.shape().to_vec(), out)
}
