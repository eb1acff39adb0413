//! The nine segmentation networks behind one factory, their loss functions
//! and the checkpoint format.
//!
//! Every network maps a `B x 3 x S x S` batch (S a multiple of 32) to a
//! sigmoid probability map `B x 1 x S x S`. MC-FCN additionally exports one
//! side output per decoder scale and BR-Net a full-resolution boundary map.

mod boundary;
mod checkpoint;
mod fcn;
mod fpn;
pub mod layers;
mod loss;
mod segnet;
mod unet;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use segtensor::{Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

pub use boundary::{boundary_target, boundary_target_batch};
pub use checkpoint::{checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint};
pub use layers::{Ctx, ParamStore};
pub use loss::{
    bce_loss, bce_loss_graph, br_loss, br_loss_graph, downsample_target, family_loss, mc_loss, mc_loss_graph,
};
pub use unet::DECODER_STAGES;

use crate::datakit::TileSample;
use crate::grid::BinaryMap;
use crate::{Error, Result};
use layers::{Act, Registry};

/// VGG-16 convolutions per encoder stage.
pub(crate) const VGG16_STAGE_CONVS: [usize; 5] = [2, 2, 3, 3, 3];

/// Encoder widths: `base x {1, 2, 4, 8, 8}`.
pub fn stage_widths(base: usize) -> [usize; 5] {
    [base, 2 * base, 4 * base, 8 * base, 8 * base]
}

/// Required divisor of the input height and width.
pub const SPATIAL_MULTIPLE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Family {
    Fcn32s,
    Fcn16s,
    Fcn8s,
    SegNet,
    UNet,
    Fpn,
    ResUNet,
    McFcn,
    BrNet,
}

impl Family {
    /// Reporting order.
    pub const ALL: [Family; 9] = [
        Family::Fcn32s,
        Family::Fcn16s,
        Family::Fcn8s,
        Family::SegNet,
        Family::UNet,
        Family::Fpn,
        Family::ResUNet,
        Family::McFcn,
        Family::BrNet,
    ];

    /// Identifier used in configs, parameter names and file names.
    pub fn name(self) -> &'static str {
        match self {
            Family::Fcn32s => "FCN32s",
            Family::Fcn16s => "FCN16s",
            Family::Fcn8s => "FCN8s",
            Family::SegNet => "SegNet",
            Family::UNet => "UNet",
            Family::Fpn => "FPN",
            Family::ResUNet => "ResUNet",
            Family::McFcn => "MCFCN",
            Family::BrNet => "BRNet",
        }
    }

    /// Name as printed in tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Family::UNet => "U-Net",
            Family::McFcn => "MC-FCN",
            Family::BrNet => "BR-Net",
            other => other.name(),
        }
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|f| f.name()).collect()
    }

    pub fn is_fcn(self) -> bool {
        matches!(self, Family::Fcn32s | Family::Fcn16s | Family::Fcn8s)
    }

    /// Batch normalization after each convolution for everything but the
    /// three FCN variants.
    pub fn default_bn(self) -> bool {
        !self.is_fcn()
    }

    /// Number of auxiliary outputs the family exports.
    pub fn aux_count(self) -> usize {
        match self {
            Family::McFcn => DECODER_STAGES,
            Family::BrNet => 1,
            _ => 0,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    /// Case-insensitive; hyphens are ignored, so `U-Net` and `unet` both work.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .collect::<String>()
            .to_ascii_lowercase();
        Family::ALL
            .into_iter()
            .find(|f| f.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::UnknownArchitecture(s.to_string()))
    }
}

impl TryFrom<String> for Family {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Family> for String {
    fn from(f: Family) -> String {
        f.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub family: Family,
    /// Encoder width at stage 1.
    pub base_channels: usize,
    /// LeakyReLU slope; only BR-Net reads it.
    pub leaky_slope: f64,
    /// Loss weights for MC-FCN: primary head first, then side heads by
    /// increasing scale factor.
    pub mc_head_weights: Vec<f64>,
    /// `(mask, boundary)` loss weights for BR-Net.
    pub br_loss_weights: (f64, f64),
    pub use_bn: bool,
}

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.1;
pub const MIN_BASE_CHANNELS: usize = 4;

impl ArchitectureConfig {
    /// Family defaults at desk scale (`base_channels = 16`).
    pub fn new(family: Family) -> Self {
        let heads = 1 + DECODER_STAGES;
        Self {
            family,
            base_channels: 16,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            mc_head_weights: vec![1.0 / heads as f64; heads],
            br_loss_weights: (0.5, 0.5),
            use_bn: family.default_bn(),
        }
    }

    pub fn with_base_channels(mut self, base: usize) -> Self {
        self.base_channels = base;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels < MIN_BASE_CHANNELS {
            return Err(Error::InvalidConfig(format!(
                "base_channels {} is below {MIN_BASE_CHANNELS}",
                self.base_channels
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "leaky_slope {} outside (0, 1)",
                self.leaky_slope
            )));
        }
        if self.family == Family::McFcn {
            let w = &self.mc_head_weights;
            if w.len() != 1 + DECODER_STAGES {
                return Err(Error::InvalidConfig(format!(
                    "MCFCN needs {} head weights, got {}",
                    1 + DECODER_STAGES,
                    w.len()
                )));
            }
            if w.iter().any(|&x| x.is_nan() || x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidConfig(format!(
                    "MCFCN head weights {w:?} must be nonnegative and sum to 1"
                )));
            }
        }
        if self.family == Family::BrNet {
            let (a, b) = self.br_loss_weights;
            if !(a >= 0.0 && b >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "BRNet loss weights ({a}, {b}) must be nonnegative"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuxKind {
    /// Side output of a decoder stage.
    Scale,
    /// Building-boundary prediction.
    Boundary,
}

#[derive(Debug, Clone)]
pub struct AuxMap<M> {
    pub map: M,
    /// Input size divided by this map's size.
    pub scale: usize,
    pub kind: AuxKind,
}

/// Network outputs, either as plain tensors or as graph nodes.
#[derive(Debug, Clone)]
pub struct Outputs<M> {
    pub primary: M,
    pub aux: Vec<AuxMap<M>>,
}

pub type BatchOutput<T> = Outputs<Tensor<T>>;
pub type GraphOutput<T> = Outputs<Var<T>>;

impl<M> Outputs<M> {
    pub fn new(primary: M) -> Self {
        Self {
            primary,
            aux: Vec::new(),
        }
    }
}

impl<T: Scalar> GraphOutput<T> {
    pub fn values(&self) -> BatchOutput<T> {
        Outputs {
            primary: self.primary.value().clone(),
            aux: self
                .aux
                .iter()
                .map(|a| AuxMap {
                    map: a.map.value().clone(),
                    scale: a.scale,
                    kind: a.kind,
                })
                .collect(),
        }
    }
}

impl<T: Scalar> BatchOutput<T> {
    pub(crate) fn as_constants(&self) -> GraphOutput<T> {
        Outputs {
            primary: Var::constant(self.primary.clone()),
            aux: self
                .aux
                .iter()
                .map(|a| AuxMap {
                    map: Var::constant(a.map.clone()),
                    scale: a.scale,
                    kind: a.kind,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum Net {
    Fcn(fcn::Fcn),
    UNetLike(unet::UNetLike),
    SegNet(segnet::SegNet),
    Fpn(fpn::Fpn),
}

/// A network: its configuration, layer graph, trainable parameters and
/// normalization running statistics.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    config: ArchitectureConfig,
    net: Net,
    params: ParamStore<T>,
    buffers: ParamStore<T>,
}

/// Result of a gradient-tracking forward pass.
pub struct ForwardPass<T: Scalar> {
    pub outputs: GraphOutput<T>,
    pub leaves: BTreeMap<String, Var<T>>,
}

impl<T: Scalar> ForwardPass<T> {
    /// Gradients collected after `backward` on a loss built from `outputs`.
    /// Parameters the loss did not reach get zeros.
    pub fn gradients(&self) -> BTreeMap<String, Tensor<T>> {
        self.leaves
            .iter()
            .map(|(name, leaf)| {
                let g = leaf.grad().unwrap_or_else(|| Tensor::zeros(leaf.shape()));
                (name.clone(), g)
            })
            .collect()
    }
}

/// Construct and initialize a network. Initialization is a pure function of
/// `(config, seed)`.
pub fn build_model<T: Scalar>(config: &ArchitectureConfig, seed: u64) -> Result<Model<T>> {
    config.validate()?;
    let family = config.family;
    let mut reg = Registry::<T>::new(family.name(), seed);
    let base = config.base_channels;
    let bn = config.use_bn;
    let net = match family {
        Family::Fcn32s | Family::Fcn16s | Family::Fcn8s => Net::Fcn(fcn::Fcn::build(&mut reg, family, base, bn)),
        Family::UNet | Family::ResUNet | Family::McFcn => {
            Net::UNetLike(unet::UNetLike::build(&mut reg, family, base, bn, Act::Relu))
        }
        Family::BrNet => Net::UNetLike(unet::UNetLike::build(
            &mut reg,
            family,
            base,
            bn,
            Act::Leaky(config.leaky_slope),
        )),
        Family::SegNet => Net::SegNet(segnet::SegNet::build(&mut reg, base, bn)),
        Family::Fpn => Net::Fpn(fpn::Fpn::build(&mut reg, base, bn)),
    };
    Ok(Model {
        config: config.clone(),
        net,
        params: reg.params,
        buffers: reg.buffers,
    })
}

impl<T: Scalar> Model<T> {
    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn family(&self) -> Family {
        self.config.family
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamStore<T> {
        &self.buffers
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    /// Replace parameters and buffers wholesale; the name sets and shapes
    /// must match exactly.
    pub fn load_state(&mut self, params: ParamStore<T>, buffers: ParamStore<T>) -> Result<()> {
        fn check<T: Scalar>(kind: &str, have: &ParamStore<T>, want: &ParamStore<T>) -> Result<()> {
            for name in want.keys() {
                if !have.contains_key(name) {
                    return Err(Error::bad_checkpoint(kind, format!("missing {name}")));
                }
            }
            for (name, t) in have {
                match want.get(name) {
                    None => return Err(Error::bad_checkpoint(kind, format!("unexpected {name}"))),
                    Some(w) if w.shape() != t.shape() => {
                        return Err(Error::bad_checkpoint(
                            kind,
                            format!("{name} has shape {:?}, expected {:?}", t.shape(), w.shape()),
                        ))
                    }
                    _ => {}
                }
            }
            Ok(())
        }
        check("parameters", &params, &self.params)?;
        check("buffers", &buffers, &self.buffers)?;
        self.params = params;
        self.buffers = buffers;
        Ok(())
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<()> {
        if batch.ndim() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "expected a B x 3 x S x S batch, got {:?}",
                batch.shape()
            )));
        }
        let (n, c, h, w) = batch.dims4();
        if n == 0 || c != 3 {
            return Err(Error::ShapeMismatch(format!(
                "expected a B x 3 x S x S batch with B >= 1, got {:?}",
                batch.shape()
            )));
        }
        for s in [h, w] {
            if s == 0 || s % SPATIAL_MULTIPLE != 0 {
                return Err(Error::InvalidSpatialSize(s));
            }
        }
        Ok(())
    }

    fn run(&self, ctx: &mut Ctx<T>, x: &Var<T>) -> GraphOutput<T> {
        match &self.net {
            Net::Fcn(n) => n.forward(ctx, x),
            Net::UNetLike(n) => n.forward(ctx, x),
            Net::SegNet(n) => n.forward(ctx, x),
            Net::Fpn(n) => n.forward(ctx, x),
        }
    }

    /// Evaluation-mode forward (normalization uses running statistics).
    pub fn forward(&self, batch: &Tensor<T>) -> Result<BatchOutput<T>> {
        self.check_input(batch)?;
        let mut ctx = Ctx::new(&self.params, &self.buffers, false, false);
        let out = self.run(&mut ctx, &Var::constant(batch.clone()));
        Ok(out.values())
    }

    /// Training-mode forward that tracks gradients. Normalization uses batch
    /// statistics and the running estimates are updated in place.
    pub fn forward_train(&mut self, batch: &Tensor<T>) -> Result<ForwardPass<T>> {
        self.forward_tracked(batch, true)
    }

    /// Gradient-tracking forward in either normalization mode. Evaluation
    /// mode leaves the running statistics untouched.
    pub fn forward_tracked(&mut self, batch: &Tensor<T>, train: bool) -> Result<ForwardPass<T>> {
        self.check_input(batch)?;
        let mut ctx = Ctx::new(&self.params, &self.buffers, train, true);
        let outputs = self.run(&mut ctx, &Var::constant(batch.clone()));
        let (leaves, stats) = ctx.into_parts();
        let m = T::from_f64_lossy(layers::BN_MOMENTUM);
        let keep = T::one() - m;
        for (mean_name, var_name, s) in stats {
            let unbiased = s.unbiased_var();
            if let Some(rm) = self.buffers.get_mut(&mean_name) {
                for (r, &b) in rm.data_mut().iter_mut().zip(&s.mean) {
                    *r = keep * *r + m * b;
                }
            }
            if let Some(rv) = self.buffers.get_mut(&var_name) {
                for (r, &b) in rv.data_mut().iter_mut().zip(&unbiased) {
                    *r = keep * *r + m * b;
                }
            }
        }
        Ok(ForwardPass { outputs, leaves })
    }
}

/// Anything that maps an image batch to a primary probability map.
pub trait Segmenter<T: Scalar> {
    fn label(&self) -> String;
    fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>>;
}

impl<T: Scalar> Segmenter<T> for Model<T> {
    fn label(&self) -> String {
        self.family().name().to_string()
    }

    fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(images)?.primary)
    }
}

/// `[B, 3, H, W]` with values scaled to `[0, 1]`.
pub fn images_to_tensor<T: Scalar>(images: &[&RgbImage]) -> Tensor<T> {
    assert!(!images.is_empty(), "images_to_tensor needs at least one image");
    let (w, h) = images[0].dimensions();
    let (w, h) = (w as usize, h as usize);
    let scale = T::one() / T::from_f64_lossy(255.0);
    let mut data = vec![T::zero(); images.len() * 3 * h * w];
    for (b, img) in images.iter().enumerate() {
        assert_eq!(img.dimensions(), (w as u32, h as u32), "images_to_tensor: mixed sizes");
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                data[(b * 3 + c) * h * w + i] = T::from_f64_lossy(f64::from(px[c])) * scale;
            }
        }
    }
    Tensor::from_vec(&[images.len(), 3, h, w], data)
}

/// `[B, 1, H, W]` of 0/1 values.
pub fn masks_to_tensor<T: Scalar>(masks: &[&BinaryMap]) -> Tensor<T> {
    assert!(!masks.is_empty(), "masks_to_tensor needs at least one mask");
    let (h, w) = masks[0].dims();
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        assert_eq!(m.dims(), (h, w), "masks_to_tensor: mixed sizes");
        data.extend(m.data().iter().map(|&v| if v == 1 { T::one() } else { T::zero() }));
    }
    Tensor::from_vec(&[masks.len(), 1, h, w], data)
}

/// Binarize each plane of a `[B, 1, H, W]` probability map at `threshold`.
pub fn binarize<T: Scalar>(probs: &Tensor<T>, threshold: T) -> Vec<BinaryMap> {
    let (n, _, h, w) = probs.dims4();
    (0..n)
        .map(|b| BinaryMap::threshold(h, w, probs.plane(b, 0), threshold))
        .collect()
}

/// Predicted masks for `samples`, evaluated `batch_size` tiles at a time.
pub fn predict_masks<T: Scalar>(
    model: &dyn Segmenter<T>,
    samples: &[&TileSample],
    threshold: T,
    batch_size: usize,
) -> Result<Vec<BinaryMap>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let images: Vec<&RgbImage> = chunk.iter().map(|s| &s.image).collect();
        let probs = model.predict(&images_to_tensor(&images))?;
        out.extend(binarize(&probs, threshold));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_parse_loosely() {
        assert_eq!("U-Net".parse::<Family>().unwrap(), Family::UNet);
        assert_eq!("mc-fcn".parse::<Family>().unwrap(), Family::McFcn);
        assert_eq!("BRNet".parse::<Family>().unwrap(), Family::BrNet);
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
            assert_eq!(f.display_name().parse::<Family>().unwrap(), f);
        }
        assert!(matches!(
            "DeepLab".parse::<Family>(),
            Err(Error::UnknownArchitecture(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = ArchitectureConfig::new(Family::UNet).with_base_channels(3);
        assert!(matches!(build_model::<f32>(&c, 0), Err(Error::InvalidConfig(_))));
        c.base_channels = 4;
        assert!(build_model::<f32>(&c, 0).is_ok());
        let mut m = ArchitectureConfig::new(Family::McFcn);
        m.mc_head_weights = vec![0.5, 0.5, 0.5, 0.0, 0.0];
        assert!(matches!(m.validate(), Err(Error::InvalidConfig(_))));
        m.mc_head_weights = vec![1.0, 0.0, 0.0, 0.0, 0.0];
        assert!(m.validate().is_ok());
    }

    #[test]
    fn rejects_bad_spatial_sizes() {
        let m = build_model::<f32>(&ArchitectureConfig::new(Family::UNet).with_base_channels(4), 0).unwrap();
        let err = m.forward(&Tensor::zeros(&[1, 3, 48, 48])).unwrap_err();
        assert!(matches!(err, Error::InvalidSpatialSize(48)));
        assert!(matches!(
            m.forward(&Tensor::zeros(&[1, 1, 32, 32])),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn parameter_names_follow_scheme() {
        for f in Family::ALL {
            let m = build_model::<f32>(&ArchitectureConfig::new(f).with_base_channels(4), 0).unwrap();
            for name in m.params().keys().chain(m.buffers().keys()) {
                let parts: Vec<&str> = name.split('/').collect();
                assert_eq!(parts.len(), 4, "{name}");
                assert_eq!(parts[0], f.name());
            }
        }
    }
}
