use crate::scalar::{gemm, Layout};
use crate::{Scalar, Tensor};

/// Unfold one `[c, h, w]` image into a `[c*k*k, oh*ow]` patch matrix
/// (stride 1, symmetric zero padding).
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize, col: &mut [T]) {
    let oh = h + 2 * pad + 1 - k;
    let ow = w + 2 * pad + 1 - k;
    let hw = oh * ow;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut col[row * hw..(row + 1) * hw];
                // valid output columns: 0 <= ox + kj - pad < w
                let lo = pad.saturating_sub(kj).min(ow);
                let hi = (w + pad).saturating_sub(kj).min(ow).max(lo);
                for oy in 0..oh {
                    let d = &mut dst[oy * ow..(oy + 1) * ow];
                    let iy = oy + ki;
                    if iy < pad || iy - pad >= h {
                        d.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(iy - pad) * w..(iy - pad + 1) * w];
                    d[..lo].fill(T::zero());
                    d[hi..].fill(T::zero());
                    if hi > lo {
                        let s0 = lo + kj - pad;
                        d[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate patch gradients back into `dx`.
fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, k: usize, pad: usize, dx: &mut [T]) {
    let oh = h + 2 * pad + 1 - k;
    let ow = w + 2 * pad + 1 - k;
    let hw = oh * ow;
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &col[row * hw..(row + 1) * hw];
                let lo = pad.saturating_sub(kj).min(ow);
                let hi = (w + pad).saturating_sub(kj).min(ow).max(lo);
                if hi == lo {
                    continue;
                }
                for oy in 0..oh {
                    let iy = oy + ki;
                    if iy < pad || iy - pad >= h {
                        continue;
                    }
                    let s = &src[oy * ow + lo..oy * ow + hi];
                    let s0 = lo + kj - pad;
                    let d = &mut plane[(iy - pad) * w + s0..(iy - pad) * w + s0 + (hi - lo)];
                    for (a, &b) in d.iter_mut().zip(s) {
                        *a += b;
                    }
                }
            }
        }
    }
}

fn check_conv_shapes<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    pad: usize,
) -> (usize, usize, usize, usize, usize, usize, usize) {
    let (n, ci, h, wd) = x.dims4();
    let (co, wci, k, k2) = w.dims4();
    assert_eq!(ci, wci, "conv2d: input has {ci} channels, weight expects {wci}");
    assert_eq!(k, k2, "conv2d: square kernels only");
    assert!(
        h + 2 * pad + 1 > k && wd + 2 * pad + 1 > k,
        "conv2d: kernel larger than padded input"
    );
    (n, ci, h, wd, co, k, pad)
}

/// Stride-1 2-D convolution. `x: [n, ci, h, w]`, `w: [co, ci, k, k]`, `bias: [co]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>, pad: usize) -> Tensor<T> {
    let (n, ci, h, wd, co, k, pad) = check_conv_shapes(x, w, pad);
    let oh = h + 2 * pad + 1 - k;
    let ow = wd + 2 * pad + 1 - k;
    let hw = oh * ow;
    let kk = ci * k * k;
    let mut y = Tensor::zeros(&[n, co, oh, ow]);
    let direct = k == 1 && pad == 0;
    let mut col = if direct { Vec::new() } else { vec![T::zero(); kk * hw] };
    for b in 0..n {
        let xin = &x.data()[b * ci * h * wd..(b + 1) * ci * h * wd];
        let out = &mut y.data_mut()[b * co * hw..(b + 1) * co * hw];
        if let Some(bias) = bias {
            for (o, chunk) in out.chunks_mut(hw).enumerate() {
                chunk.fill(bias.data()[o]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        if direct {
            gemm(co, kk, hw, w.data(), Layout::Normal, xin, Layout::Normal, beta, out);
        } else {
            im2col(xin, ci, h, wd, k, pad, &mut col);
            gemm(co, kk, hw, w.data(), Layout::Normal, &col, Layout::Normal, beta, out);
        }
    }
    y
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    pad: usize,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (n, ci, h, wd, co, k, pad) = check_conv_shapes(x, w, pad);
    let oh = h + 2 * pad + 1 - k;
    let ow = wd + 2 * pad + 1 - k;
    let hw = oh * ow;
    let kk = ci * k * k;
    assert_eq!(dy.shape(), &[n, co, oh, ow], "conv2d_backward: dy shape");
    let direct = k == 1 && pad == 0;
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[co]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut col = if direct { Vec::new() } else { vec![T::zero(); kk * hw] };
    let mut dcol = if direct || !need_dx {
        Vec::new()
    } else {
        vec![T::zero(); kk * hw]
    };
    for b in 0..n {
        let xin = &x.data()[b * ci * h * wd..(b + 1) * ci * h * wd];
        let g = &dy.data()[b * co * hw..(b + 1) * co * hw];
        for (o, chunk) in g.chunks(hw).enumerate() {
            db.data_mut()[o] += chunk.iter().copied().sum::<T>();
        }
        let patches: &[T] = if direct {
            xin
        } else {
            im2col(xin, ci, h, wd, k, pad, &mut col);
            &col
        };
        // dW[co, kk] += dY[co, hw] * patches[kk, hw]^T
        gemm(
            co,
            hw,
            kk,
            g,
            Layout::Normal,
            patches,
            Layout::Transposed,
            T::one(),
            dw.data_mut(),
        );
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx.data_mut()[b * ci * h * wd..(b + 1) * ci * h * wd];
            if direct {
                gemm(
                    kk,
                    co,
                    hw,
                    w.data(),
                    Layout::Transposed,
                    g,
                    Layout::Normal,
                    T::one(),
                    dxb,
                );
            } else {
                gemm(
                    kk,
                    co,
                    hw,
                    w.data(),
                    Layout::Transposed,
                    g,
                    Layout::Normal,
                    T::zero(),
                    &mut dcol,
                );
                col2im(&dcol, ci, h, wd, k, pad, dxb);
            }
        }
    }
    (dx, dw, db)
}

/// Transposed convolution with a 2x2 kernel and stride 2 (exact 2x upsampling).
/// `x: [n, ci, h, w]`, `w: [ci, co, 2, 2]`, `bias: [co]` -> `[n, co, 2h, 2w]`.
pub fn conv_transpose2x2<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Tensor<T> {
    let (n, ci, h, wd) = x.dims4();
    let (wci, co, k1, k2) = w.dims4();
    assert_eq!((wci, k1, k2), (ci, 2, 2), "conv_transpose2x2: weight shape");
    let hw = h * wd;
    let mut z = vec![T::zero(); co * 4 * hw];
    let mut y = Tensor::zeros(&[n, co, 2 * h, 2 * wd]);
    let ow = 2 * wd;
    for b in 0..n {
        let xin = &x.data()[b * ci * hw..(b + 1) * ci * hw];
        // z[co*4, hw] = w[ci, co*4]^T * x[ci, hw]
        gemm(
            co * 4,
            ci,
            hw,
            w.data(),
            Layout::Transposed,
            xin,
            Layout::Normal,
            T::zero(),
            &mut z,
        );
        let out = &mut y.data_mut()[b * co * 4 * hw..(b + 1) * co * 4 * hw];
        for o in 0..co {
            let bo = bias.map_or(T::zero(), |t| t.data()[o]);
            let plane = &mut out[o * 4 * hw..(o + 1) * 4 * hw];
            for a in 0..2 {
                for c in 0..2 {
                    let zr = &z[(o * 4 + a * 2 + c) * hw..(o * 4 + a * 2 + c + 1) * hw];
                    for i in 0..h {
                        let row = &mut plane[(2 * i + a) * ow..(2 * i + a + 1) * ow];
                        for j in 0..wd {
                            row[2 * j + c] = zr[i * wd + j] + bo;
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn conv_transpose2x2_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    need_dx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (n, ci, h, wd) = x.dims4();
    let (_, co, _, _) = w.dims4();
    assert_eq!(
        dy.shape(),
        &[n, co, 2 * h, 2 * wd],
        "conv_transpose2x2_backward: dy shape"
    );
    let hw = h * wd;
    let ow = 2 * wd;
    let mut dz = vec![T::zero(); co * 4 * hw];
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[co]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    for b in 0..n {
        let g = &dy.data()[b * co * 4 * hw..(b + 1) * co * 4 * hw];
        for o in 0..co {
            let plane = &g[o * 4 * hw..(o + 1) * 4 * hw];
            db.data_mut()[o] += plane.iter().copied().sum::<T>();
            for a in 0..2 {
                for c in 0..2 {
                    let zr = &mut dz[(o * 4 + a * 2 + c) * hw..(o * 4 + a * 2 + c + 1) * hw];
                    for i in 0..h {
                        let row = &plane[(2 * i + a) * ow..(2 * i + a + 1) * ow];
                        for j in 0..wd {
                            zr[i * wd + j] = row[2 * j + c];
                        }
                    }
                }
            }
        }
        let xin = &x.data()[b * ci * hw..(b + 1) * ci * hw];
        // dW[ci, co*4] += x[ci, hw] * dz[co*4, hw]^T
        gemm(
            ci,
            hw,
            co * 4,
            xin,
            Layout::Normal,
            &dz,
            Layout::Transposed,
            T::one(),
            dw.data_mut(),
        );
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx.data_mut()[b * ci * hw..(b + 1) * ci * hw];
            gemm(
                ci,
                co * 4,
                hw,
                w.data(),
                Layout::Normal,
                &dz,
                Layout::Normal,
                T::zero(),
                dxb,
            );
        }
    }
    (dx, dw, db)
}
