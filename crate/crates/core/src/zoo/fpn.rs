use segtensor::{Scalar, Var};

use super::layers::{Act, Block, Bn, Conv, Ctx, Registry, Unit};
use super::{stage_widths, GraphOutput};

/// Bottom-up encoder, top-down pathway with lateral 1x1 connections, and one
/// prediction per pyramid level. Level logits are resized to the input and
/// averaged into the single output.
#[derive(Debug, Clone)]
pub struct Fpn {
    enc: Vec<Block>,
    laterals: Vec<(Conv, Option<Bn>)>,
    smooth: Vec<Unit>,
    preds: Vec<Conv>,
}

/// Encoder stages feeding the pyramid (`enc2..enc5`).
const FIRST_LEVEL: usize = 1;

impl Fpn {
    pub(crate) fn build<T: Scalar>(reg: &mut Registry<T>, base: usize, bn: bool) -> Self {
        let w = stage_widths(base);
        let pyramid = 2 * base;
        let mut cin = 3;
        let enc = w
            .iter()
            .enumerate()
            .map(|(i, &wi)| {
                let b = reg.plain_block(&format!("enc{}", i + 1), 2, cin, wi, bn, Act::Relu);
                cin = wi;
                b
            })
            .collect();
        let mut laterals = Vec::new();
        let mut smooth = Vec::new();
        let mut preds = Vec::new();
        for (level, &wl) in w.iter().enumerate().skip(FIRST_LEVEL) {
            let stage = format!("p{}", level + 1);
            let conv = reg.conv(&stage, "lateral", wl, pyramid, 1, !bn);
            let norm = bn.then(|| reg.bn(&stage, "lateralbn", pyramid));
            laterals.push((conv, norm));
            smooth.push(reg.unit(&stage, 1, pyramid, pyramid, 3, bn, Act::Relu));
            preds.push(reg.conv(&stage, "pred", pyramid, 1, 1, true));
        }
        Self {
            enc,
            laterals,
            smooth,
            preds,
        }
    }

    pub(crate) fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: &Var<T>) -> GraphOutput<T> {
        let (_, _, h, w) = x.value().dims4();
        let mut feats = Vec::with_capacity(self.enc.len());
        let mut feat = x.clone();
        for (i, stage) in self.enc.iter().enumerate() {
            if i > 0 {
                feat = feat.max_pool2x2().0;
            }
            feat = stage.forward(ctx, &feat);
            feats.push(feat.clone());
        }
        let levels = self.laterals.len();
        let mut logits = Vec::with_capacity(levels);
        let mut top: Option<Var<T>> = None;
        for l in (0..levels).rev() {
            let (conv, bn) = &self.laterals[l];
            let mut lat = conv.forward(ctx, &feats[l + FIRST_LEVEL]);
            if let Some(bn) = bn {
                lat = bn.forward(ctx, &lat);
            }
            let merged = match top {
                Some(t) => {
                    let (_, _, lh, lw) = lat.value().dims4();
                    lat.add(&t.resize_bilinear(lh, lw))
                }
                None => lat,
            };
            top = Some(merged.clone());
            let p = self.smooth[l].forward(ctx, &merged);
            logits.push(self.preds[l].forward(ctx, &p).resize_bilinear(h, w));
        }
        let inv = T::one() / T::from_usize_lossy(levels);
        let mut sum = logits[0].clone();
        for l in &logits[1..] {
            sum = sum.add(l);
        }
        GraphOutput::new(sum.scale(inv).sigmoid())
    }
}
