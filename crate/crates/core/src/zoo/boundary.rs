use segtensor::{Scalar, Tensor};

use crate::grid::BinaryMap;

/// Mask pixels with at least one 4-neighbour outside the mask; pixels past
/// the image border count as outside.
pub fn boundary_target(mask: &BinaryMap) -> BinaryMap {
    let (h, w) = mask.dims();
    BinaryMap::from_fn(h, w, |r, c| {
        mask.get(r, c)
            && (r == 0
                || c == 0
                || r + 1 == h
                || c + 1 == w
                || !mask.get(r - 1, c)
                || !mask.get(r + 1, c)
                || !mask.get(r, c - 1)
                || !mask.get(r, c + 1))
    })
}

/// [`boundary_target`] applied to every plane of a `[B, 1, H, W]` 0/1 tensor.
pub fn boundary_target_batch<T: Scalar>(target: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = target.dims4();
    let half = T::from_f64_lossy(0.5);
    let mut out = Vec::with_capacity(target.len());
    for b in 0..n {
        for ch in 0..c {
            let m = BinaryMap::threshold(h, w, target.plane(b, ch), half);
            out.extend(
                boundary_target(&m)
                    .data()
                    .iter()
                    .map(|&v| if v == 1 { T::one() } else { T::zero() }),
            );
        }
    }
    Tensor::from_vec(target.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(mask: &BinaryMap) -> BinaryMap {
        let (h, w) = mask.dims();
        let at = |r: isize, c: isize| {
            r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && mask.get(r as usize, c as usize)
        };
        BinaryMap::from_fn(h, w, |r, c| {
            let (r, c) = (r as isize, c as isize);
            at(r, c)
                && [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .any(|(dr, dc)| !at(r + dr, c + dc))
        })
    }

    #[test]
    fn empty_mask() {
        assert_eq!(boundary_target(&BinaryMap::zeros(6, 5)).count_ones(), 0);
    }

    #[test]
    fn centered_square_ring() {
        let m = BinaryMap::from_fn(8, 8, |r, c| (2..6).contains(&r) && (2..6).contains(&c));
        let b = boundary_target(&m);
        assert_eq!(b.count_ones(), 12);
        assert_eq!(b, brute(&m));
        assert!(!b.get(3, 3) && b.get(2, 3) && b.get(5, 5));
    }

    #[test]
    fn full_mask_gives_frame() {
        let b = boundary_target(&BinaryMap::ones(7, 9));
        let frame = BinaryMap::from_fn(7, 9, |r, c| r == 0 || c == 0 || r == 6 || c == 8);
        assert_eq!(b, frame);
    }

    proptest! {
        #[test]
        fn matches_brute_force_and_is_subset(h in 1usize..10, w in 1usize..10, bits in proptest::collection::vec(any::<bool>(), 100)) {
            let m = BinaryMap::from_fn(h, w, |r, c| bits[r * 10 + c]);
            let b = boundary_target(&m);
            prop_assert!(b.is_subset_of(&m));
            prop_assert_eq!(b, brute(&m));
        }
    }
}
