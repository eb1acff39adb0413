use std::sync::Arc;

use crate::{Scalar, Tensor};

/// Argmax positions recorded by [`max_pool2x2`], one per pooled element,
/// stored as flat offsets into the matching input plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_hw: (usize, usize),
    pub offsets: Arc<Vec<u32>>,
}

/// 2x2 max pooling with stride 2. Ties resolve to the first element in
/// row-major window order.
pub fn max_pool2x2<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, PoolIndices) {
    let (n, c, h, w) = x.dims4();
    assert!(h % 2 == 0 && w % 2 == 0, "max_pool2x2: odd spatial size {h}x{w}");
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    let mut idx = vec![0u32; n * c * oh * ow];
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut y.data_mut()[p * oh * ow..(p + 1) * oh * ow];
        let id = &mut idx[p * oh * ow..(p + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let mut best = (2 * i) * w + 2 * j;
                for cand in [
                    (2 * i) * w + 2 * j + 1,
                    (2 * i + 1) * w + 2 * j,
                    (2 * i + 1) * w + 2 * j + 1,
                ] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                dst[i * ow + j] = src[best];
                id[i * ow + j] = best as u32;
            }
        }
    }
    (
        y,
        PoolIndices {
            input_hw: (h, w),
            offsets: Arc::new(idx),
        },
    )
}

pub fn max_pool2x2_backward<T: Scalar>(dy: &Tensor<T>, indices: &PoolIndices) -> Tensor<T> {
    let (n, c, oh, ow) = dy.dims4();
    let (h, w) = indices.input_hw;
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    for p in 0..n * c {
        let g = &dy.data()[p * oh * ow..(p + 1) * oh * ow];
        let id = &indices.offsets[p * oh * ow..(p + 1) * oh * ow];
        let d = &mut dx.data_mut()[p * h * w..(p + 1) * h * w];
        for (&gi, &o) in g.iter().zip(id) {
            d[o as usize] += gi;
        }
    }
    dx
}

/// Inverse of [`max_pool2x2`]: each value is written back to the argmax
/// position its window recorded; every other position is zero.
pub fn max_unpool2x2<T: Scalar>(x: &Tensor<T>, indices: &PoolIndices) -> Tensor<T> {
    let (n, c, oh, ow) = x.dims4();
    let (h, w) = indices.input_hw;
    assert_eq!(
        (oh * 2, ow * 2),
        (h, w),
        "max_unpool2x2: indices from a different level"
    );
    assert_eq!(indices.offsets.len(), n * c * oh * ow, "max_unpool2x2: indices size");
    let mut y = Tensor::zeros(&[n, c, h, w]);
    for p in 0..n * c {
        let src = &x.data()[p * oh * ow..(p + 1) * oh * ow];
        let id = &indices.offsets[p * oh * ow..(p + 1) * oh * ow];
        let d = &mut y.data_mut()[p * h * w..(p + 1) * h * w];
        for (&v, &o) in src.iter().zip(id) {
            d[o as usize] = v;
        }
    }
    y
}

pub fn max_unpool2x2_backward<T: Scalar>(dy: &Tensor<T>, indices: &PoolIndices) -> Tensor<T> {
    let (n, c, h, w) = dy.dims4();
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = Tensor::zeros(&[n, c, oh, ow]);
    for p in 0..n * c {
        let g = &dy.data()[p * h * w..(p + 1) * h * w];
        let id = &indices.offsets[p * oh * ow..(p + 1) * oh * ow];
        let d = &mut dx.data_mut()[p * oh * ow..(p + 1) * oh * ow];
        for (di, &o) in d.iter_mut().zip(id) {
            *di = g[o as usize];
        }
    }
    dx
}
