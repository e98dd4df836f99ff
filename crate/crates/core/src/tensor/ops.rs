//! Forward operations on NCHW tensors.
//!
//! Convolution uses the cross-correlation convention (no kernel flip),
//! matching mainstream detector frameworks. Max-pool padding uses a -inf
//! sentinel so negative activations pool correctly.

use super::{ConvParams, Scalar, Tensor, TensorError};

/// Valid output-column range [lo, hi) such that `ox*stride + k - padding`
/// stays inside [0, w).
#[inline]
pub(crate) fn valid_out_range(
    out_len: usize,
    in_len: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> (usize, usize) {
    // ox*stride + k - padding >= 0  =>  ox >= ceil((padding - k) / stride)
    let lo = if padding > k { (padding - k + stride - 1) / stride } else { 0 };
    // ox*stride + k - padding < in_len  =>  ox < ceil((in_len + padding - k) / stride)
    let hi = if in_len + padding > k {
        ((in_len + padding - k + stride - 1) / stride).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// 2D cross-correlation over an NCHW tensor. Output spatial size follows the
/// usual floor convention: (H + 2*padding - kh) / stride + 1.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>, TensorError> {
    let (n, c_in, h, w) = x.dims4("conv2d")?;
    let (c_out, kc, kh, kw) = p.weight.dims4("conv2d")?;
    if kc != c_in {
        return Err(TensorError::AxisMismatch {
            op: "conv2d",
            axis: "in_channels",
            expected: kc,
            got: c_in,
        });
    }
    if let Some(b) = &p.bias {
        if b.len() != c_out {
            return Err(TensorError::AxisMismatch {
                op: "conv2d",
                axis: "bias_channels",
                expected: c_out,
                got: b.len(),
            });
        }
    }
    if h + 2 * p.padding < kh || w + 2 * p.padding < kw {
        return Err(TensorError::KernelTooLarge {
            op: "conv2d",
            k: kh,
            h,
            w,
            padding: p.padding,
        });
    }
    let s = p.stride;
    let h_out = (h + 2 * p.padding - kh) / s + 1;
    let w_out = (w + 2 * p.padding - kw) / s + 1;

    let mut out = Tensor::zeros(&[n, c_out, h_out, w_out]);
    let xd = x.data();
    let wd = p.weight.data();
    let od = out.data_mut();

    for in_ in 0..n {
        for co in 0..c_out {
            let out_base = (in_ * c_out + co) * h_out * w_out;
            if let Some(b) = &p.bias {
                let bv = b.data()[co];
                od[out_base..out_base + h_out * w_out].iter_mut().for_each(|v| *v = bv);
            }
            for ci in 0..c_in {
                let in_base = (in_ * c_in + ci) * h * w;
                let w_base = (co * c_in + ci) * kh * kw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wd[w_base + ky * kw + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (oy_lo, oy_hi) = valid_out_range(h_out, h, ky, s, p.padding);
                        let (ox_lo, ox_hi) = valid_out_range(w_out, w, kx, s, p.padding);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p.padding;
                            let orow = out_base + oy * w_out;
                            let irow = in_base + iy * w;
                            if s == 1 {
                                let dst = &mut od[orow + ox_lo..orow + ox_hi];
                                let src = &xd[irow + ox_lo + kx - p.padding
                                    ..irow + ox_hi + kx - p.padding];
                                for (d, &sv) in dst.iter_mut().zip(src) {
                                    *d += wv * sv;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = ox * s + kx - p.padding;
                                    od[orow + ox] += wv * xd[irow + ix];
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

/// Max-pool with square window `k` (odd), -inf padding. With stride 1 and
/// padding k/2 the spatial shape is preserved.
pub fn maxpool2d<T: Scalar>(
    x: &Tensor<T>,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, TensorError> {
    maxpool2d_indexed(x, k, stride, padding).map(|(y, _)| y)
}

/// Max-pool that also records the flat input index of each selected maximum
/// (first maximal element in row-major order on ties) for backward routing.
pub fn maxpool2d_indexed<T: Scalar>(
    x: &Tensor<T>,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Vec<usize>), TensorError> {
    let (n, c, h, w) = x.dims4("maxpool2d")?;
    if k % 2 == 0 {
        return Err(TensorError::EvenKernel { op: "maxpool2d", k });
    }
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(TensorError::KernelTooLarge { op: "maxpool2d", k, h, w, padding });
    }
    let h_out = (h + 2 * padding - k) / stride + 1;
    let w_out = (w + 2 * padding - k) / stride + 1;

    let mut out = Tensor::zeros(&[n, c, h_out, w_out]);
    let mut idx = vec![0usize; out.len()];
    let xd = x.data();
    let od = out.data_mut();

    for plane in 0..n * c {
        let in_base = plane * h * w;
        let out_base = plane * h_out * w_out;
        for oy in 0..h_out {
            let y0 = oy * stride;
            // window rows: iy in [y0 - padding, y0 - padding + k) clipped to [0, h)
            let wy_lo = y0.saturating_sub(padding);
            let wy_hi = (y0 + k).saturating_sub(padding).min(h);
            for ox in 0..w_out {
                let x0 = ox * stride;
                let wx_lo = if x0 >= padding { x0 - padding } else { 0 };
                let wx_hi = (x0 + k).saturating_sub(padding).min(w);
                let mut best = T::neg_infinity();
                let mut best_idx = in_base + wy_lo * w + wx_lo;
                for iy in wy_lo..wy_hi {
                    let row = in_base + iy * w;
                    for ix in wx_lo..wx_hi {
                        let v = xd[row + ix];
                        if v > best {
                            best = v;
                            best_idx = row + ix;
                        }
                    }
                }
                od[out_base + oy * w_out + ox] = best;
                idx[out_base + oy * w_out + ox] = best_idx;
            }
        }
    }
    Ok((out, idx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

/// Global pooling to NC11: per-channel mean or max over all positions.
pub fn adaptive_pool<T: Scalar>(x: &Tensor<T>, mode: PoolMode) -> Result<Tensor<T>, TensorError> {
    match mode {
        PoolMode::Avg => adaptive_avg_pool(x),
        PoolMode::Max => adaptive_max_pool(x),
    }
}

/// Global average pool to NC11.
pub fn adaptive_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = x.dims4("adaptive_avg_pool")?;
    if h * w == 0 {
        return Err(TensorError::Empty { op: "adaptive_avg_pool" });
    }
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let xd = x.data();
    let mut out = Tensor::zeros(&[n, c, 1, 1]);
    for plane in 0..n * c {
        let base = plane * h * w;
        let mut acc = T::zero();
        for &v in &xd[base..base + h * w] {
            acc += v;
        }
        out.data_mut()[plane] = acc * inv;
    }
    Ok(out)
}

/// Global max pool to NC11.
pub fn adaptive_max_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    adaptive_max_pool_indexed(x).map(|(y, _)| y)
}

/// Global max pool that records the winning flat index per plane
/// (first maximum in row-major order).
pub fn adaptive_max_pool_indexed<T: Scalar>(
    x: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<usize>), TensorError> {
    let (n, c, h, w) = x.dims4("adaptive_max_pool")?;
    if h * w == 0 {
        return Err(TensorError::Empty { op: "adaptive_max_pool" });
    }
    let xd = x.data();
    let mut out = Tensor::zeros(&[n, c, 1, 1]);
    let mut idx = vec![0usize; n * c];
    for plane in 0..n * c {
        let base = plane * h * w;
        let mut best = T::neg_infinity();
        let mut best_i = base;
        for (i, &v) in xd[base..base + h * w].iter().enumerate() {
            if v > best {
                best = v;
                best_i = base + i;
            }
        }
        out.data_mut()[plane] = best;
        idx[plane] = best_i;
    }
    Ok((out, idx))
}

/// Numerically stable logistic function, elementwise.
pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// x * sigmoid(x), elementwise.
pub fn silu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v * sigmoid_scalar(v))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Stack tensors along the channel axis, in argument order.
pub fn channel_concat<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
    if xs.is_empty() {
        return Err(TensorError::Empty { op: "channel_concat" });
    }
    let (n, _, h, w) = xs[0].dims4("channel_concat")?;
    let mut c_total = 0;
    for x in xs {
        let (xn, xc, xh, xw) = x.dims4("channel_concat")?;
        if xn != n {
            return Err(TensorError::AxisMismatch {
                op: "channel_concat",
                axis: "batch",
                expected: n,
                got: xn,
            });
        }
        if xh != h || xw != w {
            return Err(TensorError::AxisMismatch {
                op: "channel_concat",
                axis: "spatial",
                expected: h * w,
                got: xh * xw,
            });
        }
        c_total += xc;
    }
    let mut out = Tensor::zeros(&[n, c_total, h, w]);
    let od = out.data_mut();
    let plane = h * w;
    for in_ in 0..n {
        let mut c_off = 0;
        for x in xs {
            let xc = x.shape()[1];
            let src = &x.data()[in_ * xc * plane..(in_ + 1) * xc * plane];
            let dst_base = (in_ * c_total + c_off) * plane;
            od[dst_base..dst_base + xc * plane].copy_from_slice(src);
            c_off += xc;
        }
    }
    Ok(out)
}

/// Extract channels [c_lo, c_hi) as a new tensor.
pub fn channel_slice<T: Scalar>(
    x: &Tensor<T>,
    c_lo: usize,
    c_hi: usize,
) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = x.dims4("channel_slice")?;
    if c_hi > c || c_lo > c_hi {
        return Err(TensorError::AxisMismatch {
            op: "channel_slice",
            axis: "channels",
            expected: c,
            got: c_hi,
        });
    }
    let plane = h * w;
    let cs = c_hi - c_lo;
    let mut out = Tensor::zeros(&[n, cs, h, w]);
    for in_ in 0..n {
        let src_base = (in_ * c + c_lo) * plane;
        let dst_base = in_ * cs * plane;
        out.data_mut()[dst_base..dst_base + cs * plane]
            .copy_from_slice(&x.data()[src_base..src_base + cs * plane]);
    }
    Ok(out)
}

/// Elementwise product with broadcasting: `w` is NC11 (per-channel) or N1HW
/// (per-position).
pub fn broadcast_mul<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, wd_) = x.dims4("broadcast_mul")?;
    let (wn, wc, wh, ww) = w.dims4("broadcast_mul")?;
    if wn != n {
        return Err(TensorError::AxisMismatch {
            op: "broadcast_mul",
            axis: "batch",
            expected: n,
            got: wn,
        });
    }
    let plane = h * wd_;
    let mut out = x.clone();
    if wc == c && wh == 1 && ww == 1 {
        for pl in 0..n * c {
            let g = w.data()[pl];
            for v in &mut out.data_mut()[pl * plane..(pl + 1) * plane] {
                *v *= g;
            }
        }
        Ok(out)
    } else if wc == 1 && wh == h && ww == wd_ {
        for in_ in 0..n {
            let wbase = in_ * plane;
            for ci in 0..c {
                let base = (in_ * c + ci) * plane;
                for i in 0..plane {
                    out.data_mut()[base + i] *= w.data()[wbase + i];
                }
            }
        }
        Ok(out)
    } else {
        Err(TensorError::AxisMismatch {
            op: "broadcast_mul",
            axis: "broadcast",
            expected: c,
            got: wc * wh * ww,
        })
    }
}

/// Mean over the channel axis, N1HW.
pub fn channel_mean<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = x.dims4("channel_mean")?;
    let plane = h * w;
    let inv = T::from_f64(1.0 / c as f64);
    let mut out = Tensor::zeros(&[n, 1, h, w]);
    for in_ in 0..n {
        for ci in 0..c {
            let base = (in_ * c + ci) * plane;
            for i in 0..plane {
                out.data_mut()[in_ * plane + i] += x.data()[base + i];
            }
        }
        for i in 0..plane {
            out.data_mut()[in_ * plane + i] *= inv;
        }
    }
    Ok(out)
}

/// Max over the channel axis, N1HW.
pub fn channel_max<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    channel_max_indexed(x).map(|(y, _)| y)
}

/// Max over the channel axis, recording the winning channel per position
/// (lowest channel index on ties).
pub fn channel_max_indexed<T: Scalar>(
    x: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<usize>), TensorError> {
    let (n, c, h, w) = x.dims4("channel_max")?;
    if c == 0 {
        return Err(TensorError::Empty { op: "channel_max" });
    }
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, 1, h, w]);
    let mut idx = vec![0usize; n * plane];
    for in_ in 0..n {
        for i in 0..plane {
            let mut best = T::neg_infinity();
            let mut best_c = 0;
            for ci in 0..c {
                let v = x.data()[(in_ * c + ci) * plane + i];
                if v > best {
                    best = v;
                    best_c = ci;
                }
            }
            out.data_mut()[in_ * plane + i] = best;
            idx[in_ * plane + i] = best_c;
        }
    }
    Ok((out, idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Literal sliding-window cross-correlation, used as the oracle.
    fn conv2d_oracle(x: &Tensor<f32>, p: &ConvParams<f32>) -> Tensor<f32> {
        let (n, c_in, h, w) = x.dims4("oracle").unwrap();
        let (c_out, _, kh, kw) = p.weight.dims4("oracle").unwrap();
        let s = p.stride;
        let h_out = (h + 2 * p.padding - kh) / s + 1;
        let w_out = (w + 2 * p.padding - kw) / s + 1;
        let mut out = Tensor::zeros(&[n, c_out, h_out, w_out]);
        for in_ in 0..n {
            for co in 0..c_out {
                for oy in 0..h_out {
                    for ox in 0..w_out {
                        let mut acc = p.bias.as_ref().map_or(0.0, |b| b.data()[co]);
                        for ci in 0..c_in {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * s + ky) as isize - p.padding as isize;
                                    let ix = (ox * s + kx) as isize - p.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = ((in_ * c_in + ci) * h + iy as usize) * w
                                        + ix as usize;
                                    let wi = ((co * c_in + ci) * kh + ky) * kw + kx;
                                    acc += x.data()[xi] * p.weight.data()[wi];
                                }
                            }
                        }
                        out.data_mut()[((in_ * c_out + co) * h_out + oy) * w_out + ox] = acc;
                    }
                }
            }
        }
        out
    }

    /// Literal sliding-window max with -inf padding, used as the oracle.
    fn maxpool_oracle(x: &Tensor<f32>, k: usize, stride: usize, padding: usize) -> Tensor<f32> {
        let (n, c, h, w) = x.dims4("oracle").unwrap();
        let h_out = (h + 2 * padding - k) / stride + 1;
        let w_out = (w + 2 * padding - k) / stride + 1;
        let mut out = Tensor::zeros(&[n, c, h_out, w_out]);
        for pl in 0..n * c {
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut best = f32::NEG_INFINITY;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            best = best.max(x.data()[(pl * h + iy as usize) * w + ix as usize]);
                        }
                    }
                    out.data_mut()[(pl * h_out + oy) * w_out + ox] = best;
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_1x1() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f32>::random_uniform(&[1, 3, 4, 5], -1.0, 1.0, &mut rng);
        // channel-space identity
        let mut w = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let y = conv2d(&x, &ConvParams::new(w, None, 1, 0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_all_ones_sums_window() {
        let x = Tensor::<f32>::filled(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f32>::filled(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &ConvParams::new(w, None, 1, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn conv_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f32>::random_uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut rng);
        let p = ConvParams::init_uniform(3, 2, 3, 1, 1, &mut rng);
        let y = conv2d(&x, &p).unwrap();
        let o = conv2d_oracle(&x, &p);
        assert_eq!(y.shape(), o.shape());
        for (a, b) in y.data().iter().zip(o.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn conv_strided_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f32>::random_uniform(&[2, 3, 8, 8], -1.0, 1.0, &mut rng);
        let p = ConvParams::init_uniform(4, 3, 3, 2, 1, &mut rng);
        let y = conv2d(&x, &p).unwrap();
        let o = conv2d_oracle(&x, &p);
        assert_eq!(y.shape(), &[2, 4, 4, 4]);
        for (a, b) in y.data().iter().zip(o.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn conv_channel_mismatch_names_axis() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = ConvParams::init_uniform(1, 3, 3, 1, 1, &mut rng);
        match conv2d(&x, &p) {
            Err(TensorError::AxisMismatch { axis, expected, got, .. }) => {
                assert_eq!(axis, "in_channels");
                assert_eq!((expected, got), (3, 2));
            }
            other => panic!("expected axis mismatch, got {other:?}"),
        }
    }

    #[test]
    fn conv_linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ConvParams::init_uniform(2, 2, 3, 1, 1, &mut rng);
        let p_nobias = ConvParams { bias: None, ..p };
        let x = Tensor::<f32>::random_uniform(&[1, 2, 6, 6], -1.0, 1.0, &mut rng);
        let y = Tensor::<f32>::random_uniform(&[1, 2, 6, 6], -1.0, 1.0, &mut rng);
        let (a, b) = (0.7f32, -1.3f32);
        let mixed = Tensor::new(
            &[1, 2, 6, 6],
            x.data().iter().zip(y.data()).map(|(u, v)| a * u + b * v).collect(),
        )
        .unwrap();
        let f_mixed = conv2d(&mixed, &p_nobias).unwrap();
        let fx = conv2d(&x, &p_nobias).unwrap();
        let fy = conv2d(&y, &p_nobias).unwrap();
        for i in 0..f_mixed.len() {
            let lin = a * fx.data()[i] + b * fy.data()[i];
            assert!((f_mixed.data()[i] - lin).abs() < 1e-5);
        }
    }

    #[test]
    fn maxpool_constant_is_identity() {
        let x = Tensor::<f32>::filled(&[1, 2, 7, 7], 3.25);
        for k in [5usize, 9, 13] {
            let y = maxpool2d(&x, k, 1, k / 2).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn maxpool_impulse_spreads_block() {
        let mut x = Tensor::<f32>::zeros(&[1, 1, 9, 9]);
        x.data_mut()[4 * 9 + 4] = 1.0;
        let y = maxpool2d(&x, 5, 1, 2).unwrap();
        for iy in 0..9 {
            for ix in 0..9 {
                let expect = if (2..=6).contains(&iy) && (2..=6).contains(&ix) { 1.0 } else { 0.0 };
                assert_eq!(y.data()[iy * 9 + ix], expect, "at ({iy},{ix})");
            }
        }
    }

    #[test]
    fn maxpool_matches_oracle_k13() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::<f32>::random_uniform(&[1, 2, 16, 16], -1.0, 1.0, &mut rng);
        let y = maxpool2d(&x, 13, 1, 6).unwrap();
        let o = maxpool_oracle(&x, 13, 1, 6);
        assert_eq!(y, o);
    }

    #[test]
    fn maxpool_rejects_even_kernel() {
        let x = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
        assert!(matches!(
            maxpool2d(&x, 4, 1, 2),
            Err(TensorError::EvenKernel { k: 4, .. })
        ));
    }

    #[test]
    fn maxpool_preserves_shape_when_padded() {
        for k in [5usize, 9, 13] {
            for (h, w) in [(1usize, 1usize), (2, 5), (13, 7), (64, 64), (1, 64)] {
                let x = Tensor::<f32>::filled(&[1, 1, h, w], -2.0);
                let y = maxpool2d(&x, k, 1, k / 2).unwrap();
                assert_eq!(y.shape(), x.shape(), "k={k} h={h} w={w}");
                // -inf sentinel: negative constants survive pooling
                assert!(y.data().iter().all(|&v| v == -2.0));
            }
        }
    }

    #[test]
    fn adaptive_pool_constant() {
        let x = Tensor::<f32>::filled(&[2, 3, 4, 4], 0.75);
        let a = adaptive_avg_pool(&x).unwrap();
        let m = adaptive_max_pool(&x).unwrap();
        assert_eq!(a.shape(), &[2, 3, 1, 1]);
        assert!(a.data().iter().all(|&v| (v - 0.75).abs() < 1e-7));
        assert!(m.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn adaptive_pool_small_case() {
        let x = Tensor::<f32>::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(adaptive_avg_pool(&x).unwrap().data()[0], 2.5);
        assert_eq!(adaptive_max_pool(&x).unwrap().data()[0], 4.0);
    }

    #[test]
    fn adaptive_avg_matches_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::<f32>::random_uniform(&[2, 4, 5, 7], -2.0, 2.0, &mut rng);
        let a = adaptive_avg_pool(&x).unwrap();
        for pl in 0..8 {
            let sum: f32 = x.data()[pl * 35..(pl + 1) * 35].iter().sum();
            assert!((a.data()[pl] - sum / 35.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sigmoid_basics() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        assert_eq!(silu(&Tensor::<f64>::zeros(&[1])).data()[0], 0.0);
        let hi = sigmoid_scalar(40.0f64);
        assert!(hi >= 1.0 - 1e-9 && hi.is_finite());
        let lo = sigmoid_scalar(-40.0f64);
        assert!(lo > 0.0 && lo <= 1e-9);
    }

    #[test]
    fn sigmoid_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::<f32>::random_uniform(&[64], -6.0, 6.0, &mut rng);
        let s = sigmoid(&x);
        let sn = sigmoid(&x.map(|v| -v));
        for i in 0..x.len() {
            assert!((sn.data()[i] - (1.0 - s.data()[i])).abs() < 1e-6);
        }
    }

    #[test]
    fn concat_single_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f32>::random_uniform(&[1, 3, 2, 2], -1.0, 1.0, &mut rng);
        assert_eq!(channel_concat(&[&x]).unwrap(), x);
    }

    #[test]
    fn concat_ordering_and_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = Tensor::<f32>::random_uniform(&[2, 2, 3, 3], -1.0, 1.0, &mut rng);
        let b = Tensor::<f32>::random_uniform(&[2, 3, 3, 3], -1.0, 1.0, &mut rng);
        let cat = channel_concat(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), &[2, 5, 3, 3]);
        assert_eq!(channel_slice(&cat, 0, 2).unwrap(), a);
        assert_eq!(channel_slice(&cat, 2, 5).unwrap(), b);
    }

    #[test]
    fn concat_spatial_mismatch_errors() {
        let a = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let b = Tensor::<f32>::zeros(&[1, 1, 3, 2]);
        assert!(matches!(
            channel_concat(&[&a, &b]),
            Err(TensorError::AxisMismatch { axis: "spatial", .. })
        ));
    }

    #[test]
    fn broadcast_mul_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f32>::random_uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
        let ones = Tensor::<f32>::filled(&[2, 3, 1, 1], 1.0);
        assert_eq!(broadcast_mul(&x, &ones).unwrap(), x);
        let half = Tensor::<f32>::filled(&[2, 1, 4, 4], 0.5);
        let y = broadcast_mul(&x, &half).unwrap();
        for i in 0..x.len() {
            assert!((y.data()[i] - 0.5 * x.data()[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn broadcast_mul_matches_expansion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Tensor::<f32>::random_uniform(&[2, 3, 4, 5], -1.0, 1.0, &mut rng);
        let w = Tensor::<f32>::random_uniform(&[2, 3, 1, 1], 0.0, 1.0, &mut rng);
        let y = broadcast_mul(&x, &w).unwrap();
        // explicit expansion
        for n in 0..2 {
            for c in 0..3 {
                for i in 0..20 {
                    let xi = (n * 3 + c) * 20 + i;
                    let expect = x.data()[xi] * w.data()[n * 3 + c];
                    assert!((y.data()[xi] - expect).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn channel_stats_shapes_and_values() {
        let x = Tensor::<f32>::new(
            &[1, 2, 1, 2],
            vec![1.0, 5.0, /* ch1 */ 3.0, -1.0],
        )
        .unwrap();
        let m = channel_mean(&x).unwrap();
        assert_eq!(m.shape(), &[1, 1, 1, 2]);
        assert_eq!(m.data(), &[2.0, 2.0]);
        let (mx, idx) = channel_max_indexed(&x).unwrap();
        assert_eq!(mx.data(), &[3.0, 5.0]);
        assert_eq!(idx, vec![1, 0]);
    }

    #[test]
    fn ops_keep_finite_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = Tensor::<f32>::random_uniform(&[2, 4, 8, 8], -50.0, 50.0, &mut rng);
        let p = ConvParams::init_uniform(4, 4, 3, 1, 1, &mut rng);
        for t in [
            conv2d(&x, &p).unwrap(),
            maxpool2d(&x, 5, 1, 2).unwrap(),
            adaptive_avg_pool(&x).unwrap(),
            sigmoid(&x),
            silu(&x),
        ] {
            assert!(t.first_non_finite().is_none());
        }
    }
}
