use segtensor::{Scalar, Var};

use super::layers::{Act, Block, Conv, Ctx, Registry, UpConv};
use super::{stage_widths, AuxKind, AuxMap, Family, GraphOutput};

#[derive(Debug, Clone)]
enum Heads {
    Single(Conv),
    /// One side head per decoder scale plus a fusion head over the final
    /// features and all upsampled side scores.
    MultiScale {
        sides: Vec<Conv>,
        fuse: Conv,
    },
    /// Shared features feed a mask head and a boundary head.
    MaskBoundary {
        mask: Conv,
        boundary: Conv,
    },
}

/// Encoder/decoder with concatenation skips. Serves U-Net, ResUNet
/// (residual blocks), MC-FCN (multi-scale heads) and BR-Net (LeakyReLU,
/// boundary head).
#[derive(Debug, Clone)]
pub struct UNetLike {
    enc: Vec<Block>,
    ups: Vec<UpConv>,
    dec: Vec<Block>,
    heads: Heads,
}

/// Decoder stages (and therefore MC-FCN side heads).
pub const DECODER_STAGES: usize = 4;

impl UNetLike {
    pub(crate) fn build<T: Scalar>(reg: &mut Registry<T>, family: Family, base: usize, bn: bool, act: Act) -> Self {
        let w = stage_widths(base);
        let residual = family == Family::ResUNet;
        let block = |reg: &mut Registry<T>, stage: String, cin: usize, cout: usize| {
            if residual {
                reg.residual_block(&stage, cin, cout, bn, act)
            } else {
                reg.plain_block(&stage, 2, cin, cout, bn, act)
            }
        };
        let mut enc = Vec::with_capacity(5);
        let mut cin = 3;
        for (i, &wi) in w.iter().enumerate() {
            enc.push(block(reg, format!("enc{}", i + 1), cin, wi));
            cin = wi;
        }
        let mut ups = Vec::with_capacity(DECODER_STAGES);
        let mut dec = Vec::with_capacity(DECODER_STAGES);
        for j in 0..DECODER_STAGES {
            ups.push(reg.up(&format!("dec{}", j + 1), "up", w[j + 1], w[j]));
            dec.push(block(reg, format!("dec{}", j + 1), 2 * w[j], w[j]));
        }
        let heads = match family {
            Family::McFcn => Heads::MultiScale {
                sides: (0..DECODER_STAGES)
                    .map(|j| reg.conv(&format!("dec{}", j + 1), "side", w[j], 1, 1, true))
                    .collect(),
                fuse: reg.conv("head", "fuse", w[0] + DECODER_STAGES, 1, 1, true),
            },
            Family::BrNet => Heads::MaskBoundary {
                mask: reg.conv("head", "mask", w[0], 1, 1, true),
                boundary: reg.conv("head", "boundary", w[0], 1, 1, true),
            },
            _ => Heads::Single(reg.conv("head", "score", w[0], 1, 1, true)),
        };
        Self { enc, ups, dec, heads }
    }

    pub(crate) fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: &Var<T>) -> GraphOutput<T> {
        let mut skips = Vec::with_capacity(self.enc.len());
        let mut feat = x.clone();
        for (i, stage) in self.enc.iter().enumerate() {
            if i > 0 {
                feat = feat.max_pool2x2().0;
            }
            feat = stage.forward(ctx, &feat);
            skips.push(feat.clone());
        }
        // decoded[j] sits at 1/2^j of the input resolution
        let mut decoded: Vec<Option<Var<T>>> = vec![None; DECODER_STAGES];
        for j in (0..DECODER_STAGES).rev() {
            let up = self.ups[j].forward(ctx, &feat);
            let cat = Var::concat_channels(&[skips[j].clone(), up]);
            feat = self.dec[j].forward(ctx, &cat);
            decoded[j] = Some(feat.clone());
        }
        let top = decoded[0].clone().expect("decoder produced full-resolution features");
        match &self.heads {
            Heads::Single(head) => GraphOutput::new(head.forward(ctx, &top).sigmoid()),
            Heads::MaskBoundary { mask, boundary } => {
                let primary = mask.forward(ctx, &top).sigmoid();
                let edge = boundary.forward(ctx, &top).sigmoid();
                GraphOutput {
                    primary,
                    aux: vec![AuxMap {
                        map: edge,
                        scale: 1,
                        kind: AuxKind::Boundary,
                    }],
                }
            }
            Heads::MultiScale { sides, fuse } => {
                let (_, _, h, w) = top.value().dims4();
                let mut aux = Vec::with_capacity(DECODER_STAGES);
                let mut fused_in = vec![top.clone()];
                for (j, side) in sides.iter().enumerate() {
                    let feat = decoded[j].as_ref().expect("decoder stage output");
                    let logits = side.forward(ctx, feat);
                    fused_in.push(logits.resize_bilinear(h, w));
                    aux.push(AuxMap {
                        map: logits.sigmoid(),
                        scale: 1 << j,
                        kind: AuxKind::Scale,
                    });
                }
                let primary = fuse.forward(ctx, &Var::concat_channels(&fused_in)).sigmoid();
                GraphOutput { primary, aux }
            }
        }
    }
}
