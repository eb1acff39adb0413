use segtensor::kernels::area_downsample;
use segtensor::{Scalar, Tensor, Var};

use super::{boundary_target_batch, ArchitectureConfig, AuxKind, BatchOutput, Family, GraphOutput};
use crate::{Error, Result};

fn check_shapes(pred: &[usize], target: &[usize]) -> Result<()> {
    if pred != target {
        return Err(Error::ShapeMismatch(format!(
            "prediction {pred:?} vs target {target:?}"
        )));
    }
    Ok(())
}

/// Reduce a `[B, 1, S, S]` 0/1 target by `factor`: block mean, then `>= 0.5`.
pub fn downsample_target<T: Scalar>(target: &Tensor<T>, factor: usize) -> Tensor<T> {
    if factor == 1 {
        return target.clone();
    }
    let half = T::from_f64_lossy(0.5);
    area_downsample(target, factor).map(|v| if v >= half { T::one() } else { T::zero() })
}

pub fn bce_loss_graph<T: Scalar>(pred: &Var<T>, target: &Tensor<T>) -> Result<Var<T>> {
    check_shapes(pred.shape(), target.shape())?;
    Ok(pred.bce(target))
}

/// Mean binary cross-entropy.
pub fn bce_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    check_shapes(pred.shape(), target.shape())?;
    Ok(Var::constant(pred.clone()).bce(target).value().data()[0])
}

pub fn mc_loss_graph<T: Scalar>(outputs: &GraphOutput<T>, target: &Tensor<T>, weights: &[f64]) -> Result<Var<T>> {
    let heads = 1 + outputs.aux.len();
    if weights.len() != heads {
        return Err(Error::ConfigMismatch(format!(
            "{} loss weights for {heads} heads",
            weights.len()
        )));
    }
    let mut terms = vec![(bce_loss_graph(&outputs.primary, target)?, T::from_f64_lossy(weights[0]))];
    for (aux, &w) in outputs.aux.iter().zip(&weights[1..]) {
        let t = downsample_target(target, aux.scale);
        terms.push((bce_loss_graph(&aux.map, &t)?, T::from_f64_lossy(w)));
    }
    Ok(Var::weighted_sum(&terms))
}

/// Weighted sum of per-head BCE, each head scored against the target
/// reduced to its resolution.
pub fn mc_loss<T: Scalar>(outputs: &BatchOutput<T>, target: &Tensor<T>, weights: &[f64]) -> Result<T> {
    Ok(mc_loss_graph(&outputs.as_constants(), target, weights)?.value().data()[0])
}

pub fn br_loss_graph<T: Scalar>(outputs: &GraphOutput<T>, target: &Tensor<T>, weights: (f64, f64)) -> Result<Var<T>> {
    let boundary = match outputs.aux.as_slice() {
        [a] if a.kind == AuxKind::Boundary && a.scale == 1 => &a.map,
        _ => {
            return Err(Error::ConfigMismatch(
                "boundary loss needs exactly one full-resolution boundary head".into(),
            ))
        }
    };
    check_shapes(outputs.primary.shape(), target.shape())?;
    let edge = boundary_target_batch(target);
    Ok(Var::weighted_sum(&[
        (bce_loss_graph(&outputs.primary, target)?, T::from_f64_lossy(weights.0)),
        (bce_loss_graph(boundary, &edge)?, T::from_f64_lossy(weights.1)),
    ]))
}

/// `w_m * BCE(mask) + w_b * BCE(boundary, boundary_target(mask))`.
pub fn br_loss<T: Scalar>(outputs: &BatchOutput<T>, target: &Tensor<T>, weights: (f64, f64)) -> Result<T> {
    Ok(br_loss_graph(&outputs.as_constants(), target, weights)?.value().data()[0])
}

/// The training loss a family is optimized with.
pub fn family_loss<T: Scalar>(
    config: &ArchitectureConfig,
    outputs: &GraphOutput<T>,
    target: &Tensor<T>,
) -> Result<Var<T>> {
    match config.family {
        Family::McFcn => mc_loss_graph(outputs, target, &config.mc_head_weights),
        Family::BrNet => br_loss_graph(outputs, target, config.br_loss_weights),
        _ => bce_loss_graph(&outputs.primary, target),
    }
}
