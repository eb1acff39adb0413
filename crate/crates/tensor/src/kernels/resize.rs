use crate::{Scalar, Tensor};

#[derive(Clone, Copy)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    frac: T,
}

/// Half-pixel-centred source taps (the `align_corners = false` convention).
fn taps<T: Scalar>(input: usize, output: usize) -> Vec<Tap<T>> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            Tap {
                i0,
                i1,
                frac: T::from_f64_lossy(src - i0 as f64),
            }
        })
        .collect()
}

/// Bilinear resampling of every plane to `oh x ow`.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    if (h, w) == (oh, ow) {
        return x.clone();
    }
    let ty = taps::<T>(h, oh);
    let tx = taps::<T>(w, ow);
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut y.data_mut()[p * oh * ow..(p + 1) * oh * ow];
        for (oy, a) in ty.iter().enumerate() {
            let r0 = &src[a.i0 * w..(a.i0 + 1) * w];
            let r1 = &src[a.i1 * w..(a.i1 + 1) * w];
            let one = T::one();
            for (ox, b) in tx.iter().enumerate() {
                let top = r0[b.i0] * (one - b.frac) + r0[b.i1] * b.frac;
                let bot = r1[b.i0] * (one - b.frac) + r1[b.i1] * b.frac;
                dst[oy * ow + ox] = top * (one - a.frac) + bot * a.frac;
            }
        }
    }
    y
}

/// Adjoint of [`resize_bilinear`] back onto an `h x w` grid.
pub fn resize_bilinear_backward<T: Scalar>(dy: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (n, c, oh, ow) = dy.dims4();
    if (h, w) == (oh, ow) {
        return dy.clone();
    }
    let ty = taps::<T>(h, oh);
    let tx = taps::<T>(w, ow);
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    let one = T::one();
    for p in 0..n * c {
        let g = &dy.data()[p * oh * ow..(p + 1) * oh * ow];
        let d = &mut dx.data_mut()[p * h * w..(p + 1) * h * w];
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                let top = v * (one - a.frac);
                let bot = v * a.frac;
                d[a.i0 * w + b.i0] += top * (one - b.frac);
                d[a.i0 * w + b.i1] += top * b.frac;
                d[a.i1 * w + b.i0] += bot * (one - b.frac);
                d[a.i1 * w + b.i1] += bot * b.frac;
            }
        }
    }
    dx
}

/// Mean over non-overlapping `factor x factor` blocks.
pub fn area_downsample<T: Scalar>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    assert!(
        factor >= 1 && h % factor == 0 && w % factor == 0,
        "area_downsample: {h}x{w} by {factor}"
    );
    if factor == 1 {
        return x.clone();
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = T::one() / T::from_usize_lossy(factor * factor);
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut y.data_mut()[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = T::zero();
                for di in 0..factor {
                    for dj in 0..factor {
                        acc += src[(i * factor + di) * w + j * factor + dj];
                    }
                }
                dst[i * ow + j] = acc * inv;
            }
        }
    }
    y
}
