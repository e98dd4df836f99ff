//! Explicit backward functions paired with the forward ops, plus the
//! central finite-difference gradient checker.
//!
//! The max-pool family routes gradient to the first maximal element in
//! row-major order on ties, matching the indices recorded by the forward
//! pass, so backward is deterministic.

use super::ops::{sigmoid_scalar, valid_out_range};
use super::{ConvGrads, ConvParams, Scalar, Tensor, TensorError};

/// Gradients of conv2d: returns (d/dx, {d/dweight, d/dbias}).
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, ConvGrads<T>), TensorError> {
    let (n, c_in, h, w) = x.dims4("conv2d_backward")?;
    let (c_out, _, kh, kw) = p.weight.dims4("conv2d_backward")?;
    let (dn, dc, h_out, w_out) = dy.dims4("conv2d_backward")?;
    if dn != n || dc != c_out {
        return Err(TensorError::AxisMismatch {
            op: "conv2d_backward",
            axis: "upstream",
            expected: n * c_out,
            got: dn * dc,
        });
    }
    let s = p.stride;
    let mut dx = Tensor::zeros(&[n, c_in, h, w]);
    let mut dw = Tensor::zeros(&[c_out, c_in, kh, kw]);
    let xd = x.data();
    let wd = p.weight.data();
    let dyd = dy.data();
    let dxd = dx.data_mut();

    for in_ in 0..n {
        for co in 0..c_out {
            let dy_base = (in_ * c_out + co) * h_out * w_out;
            for ci in 0..c_in {
                let x_base = (in_ * c_in + ci) * h * w;
                let w_base = (co * c_in + ci) * kh * kw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wd[w_base + ky * kw + kx];
                        let mut dw_acc = T::zero();
                        let (oy_lo, oy_hi) = valid_out_range(h_out, h, ky, s, p.padding);
                        let (ox_lo, ox_hi) = valid_out_range(w_out, w, kx, s, p.padding);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p.padding;
                            let dy_row = dy_base + oy * w_out;
                            let x_row = x_base + iy * w;
                            if s == 1 {
                                let dy_seg = &dyd[dy_row + ox_lo..dy_row + ox_hi];
                                let x_seg = &xd[x_row + ox_lo + kx - p.padding
                                    ..x_row + ox_hi + kx - p.padding];
                                let dx_seg = &mut dxd[x_row + ox_lo + kx - p.padding
                                    ..x_row + ox_hi + kx - p.padding];
                                for ((d, &xv), &g) in
                                    dx_seg.iter_mut().zip(x_seg).zip(dy_seg)
                                {
                                    *d += wv * g;
                                    dw_acc += xv * g;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = ox * s + kx - p.padding;
                                    let g = dyd[dy_row + ox];
                                    dxd[x_row + ix] += wv * g;
                                    dw_acc += xd[x_row + ix] * g;
                                }
                            }
                        }
                        dw.data_mut()[w_base + ky * kw + kx] += dw_acc;
                    }
                }
            }
        }
    }

    let db = p.bias.as_ref().map(|_| {
        let mut db = Tensor::zeros(&[c_out]);
        for in_ in 0..n {
            for co in 0..c_out {
                let base = (in_ * c_out + co) * h_out * w_out;
                let mut acc = T::zero();
                for &g in &dyd[base..base + h_out * w_out] {
                    acc += g;
                }
                db.data_mut()[co] += acc;
            }
        }
        db
    });

    Ok((dx, ConvGrads { weight: dw, bias: db }))
}

/// Scatter upstream gradient back through a max-pool using the recorded
/// winner indices.
pub fn maxpool2d_backward<T: Scalar>(
    x_shape: &[usize],
    indices: &[usize],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(x_shape);
    for (i, &src) in indices.iter().enumerate() {
        dx.data_mut()[src] += dy.data()[i];
    }
    dx
}

pub fn adaptive_avg_pool_backward<T: Scalar>(x_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x_shape[2], x_shape[3]);
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let mut dx = Tensor::zeros(x_shape);
    for plane in 0..x_shape[0] * x_shape[1] {
        let g = dy.data()[plane] * inv;
        for v in &mut dx.data_mut()[plane * h * w..(plane + 1) * h * w] {
            *v = g;
        }
    }
    dx
}

pub fn adaptive_max_pool_backward<T: Scalar>(
    x_shape: &[usize],
    indices: &[usize],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(x_shape);
    for (plane, &src) in indices.iter().enumerate() {
        dx.data_mut()[src] += dy.data()[plane];
    }
    dx
}

/// Backward of sigmoid given its *output* y: dy * y * (1 - y).
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &yv) in dx.data_mut().iter_mut().zip(y.data()) {
        *d *= yv * (T::one() - yv);
    }
    dx
}

/// Backward of silu given its *input* x.
pub fn silu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
        let s = sigmoid_scalar(xv);
        *d *= s + xv * s * (T::one() - s);
    }
    dx
}

/// Backward of relu given its *input* x.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
        if xv <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

/// Gradients of broadcast_mul: returns (d/dx, d/dw) for either broadcast form.
pub fn broadcast_mul_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>), TensorError> {
    let (n, c, h, w_) = x.dims4("broadcast_mul_backward")?;
    let (_, wc, wh, ww) = w.dims4("broadcast_mul_backward")?;
    let plane = h * w_;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    if wc == c && wh == 1 && ww == 1 {
        for pl in 0..n * c {
            let g = w.data()[pl];
            let mut acc = T::zero();
            for i in 0..plane {
                let gi = pl * plane + i;
                dx.data_mut()[gi] = dy.data()[gi] * g;
                acc += dy.data()[gi] * x.data()[gi];
            }
            dw.data_mut()[pl] = acc;
        }
    } else if wc == 1 && wh == h && ww == w_ {
        for in_ in 0..n {
            for ci in 0..c {
                let base = (in_ * c + ci) * plane;
                for i in 0..plane {
                    let wi = in_ * plane + i;
                    dx.data_mut()[base + i] = dy.data()[base + i] * w.data()[wi];
                    dw.data_mut()[wi] += dy.data()[base + i] * x.data()[base + i];
                }
            }
        }
    } else {
        return Err(TensorError::AxisMismatch {
            op: "broadcast_mul_backward",
            axis: "broadcast",
            expected: c,
            got: wc * wh * ww,
        });
    }
    Ok((dx, dw))
}

/// Backward of channel_mean: spreads dy/C across channels.
pub fn channel_mean_backward<T: Scalar>(x_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let plane = h * w;
    let inv = T::from_f64(1.0 / c as f64);
    let mut dx = Tensor::zeros(x_shape);
    for in_ in 0..n {
        for ci in 0..c {
            let base = (in_ * c + ci) * plane;
            for i in 0..plane {
                dx.data_mut()[base + i] = dy.data()[in_ * plane + i] * inv;
            }
        }
    }
    dx
}

/// Backward of channel_max using the recorded winning channel per position.
pub fn channel_max_backward<T: Scalar>(
    x_shape: &[usize],
    winners: &[usize],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let plane = h * w;
    let mut dx = Tensor::zeros(x_shape);
    for in_ in 0..n {
        for i in 0..plane {
            let ci = winners[in_ * plane + i];
            dx.data_mut()[(in_ * c + ci) * plane + i] += dy.data()[in_ * plane + i];
        }
    }
    dx
}

/// Compare an analytic gradient of `sum(f(x))` against central finite
/// differences, element by element, returning the max relative error with
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
///
/// Runs in f64: the f32 path is never precise enough to validate at the
/// tolerances used here.
pub fn grad_check<F, G>(
    f: F,
    analytic_grad: G,
    x: &Tensor<f64>,
    eps: f64,
) -> Result<f64, TensorError>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>, TensorError>,
    G: Fn(&Tensor<f64>) -> Result<Tensor<f64>, TensorError>,
{
    let ga = analytic_grad(x)?;
    if ga.shape() != x.shape() {
        return Err(TensorError::AxisMismatch {
            op: "grad_check",
            axis: "gradient_shape",
            expected: x.len(),
            got: ga.len(),
        });
    }
    if let Some(i) = ga.first_non_finite() {
        return Err(TensorError::NonFinite { op: "grad_check", index: i });
    }
    let mut probe = x.clone();
    let mut max_rel = 0.0f64;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = f(&probe)?.sum();
        probe.data_mut()[i] = orig - eps;
        let fm = f(&probe)?.sum();
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(TensorError::NonFinite { op: "grad_check", index: i });
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let a = ga.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
