use segtensor::{Scalar, Var};

use super::layers::{Act, Block, Conv, Ctx, Registry, Unit};
use super::{stage_widths, Family, GraphOutput, VGG16_STAGE_CONVS};

/// VGG-16-style encoder, two convolutional "fully connected" layers and a
/// one-channel score map at 1/32 resolution. FCN16s and FCN8s fuse extra
/// scores from pool4 and pool3 before the final bilinear upsampling.
#[derive(Debug, Clone)]
pub struct Fcn {
    stages: Vec<Block>,
    fc6: Unit,
    fc7: Unit,
    score: Conv,
    skip4: Option<Conv>,
    skip3: Option<Conv>,
}

impl Fcn {
    pub(crate) fn build<T: Scalar>(reg: &mut Registry<T>, family: Family, base: usize, bn: bool) -> Self {
        let w = stage_widths(base);
        let mut cin = 3;
        let stages = (0..5)
            .map(|i| {
                let b = reg.plain_block(&format!("enc{}", i + 1), VGG16_STAGE_CONVS[i], cin, w[i], bn, Act::Relu);
                cin = w[i];
                b
            })
            .collect();
        let fc_width = 2 * w[4];
        let fc6 = reg.unit("fc", 6, w[4], fc_width, 3, bn, Act::Relu);
        let fc7 = reg.unit("fc", 7, fc_width, fc_width, 1, bn, Act::Relu);
        let score = reg.conv("head", "score", fc_width, 1, 1, true);
        let skip4 =
            matches!(family, Family::Fcn16s | Family::Fcn8s).then(|| reg.conv("skip4", "score", w[3], 1, 1, true));
        let skip3 = matches!(family, Family::Fcn8s).then(|| reg.conv("skip3", "score", w[2], 1, 1, true));
        Self {
            stages,
            fc6,
            fc7,
            score,
            skip4,
            skip3,
        }
    }

    pub(crate) fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: &Var<T>) -> GraphOutput<T> {
        let (_, _, h, w) = x.value().dims4();
        let mut feat = x.clone();
        let mut pooled = Vec::with_capacity(5);
        for stage in &self.stages {
            feat = stage.forward(ctx, &feat).max_pool2x2().0;
            pooled.push(feat.clone());
        }
        let feat = self.fc6.forward(ctx, &feat);
        let feat = self.fc7.forward(ctx, &feat);
        let mut score = self.score.forward(ctx, &feat);
        for (skip, level) in [(&self.skip4, 3), (&self.skip3, 2)] {
            let Some(skip) = skip else { break };
            let side = skip.forward(ctx, &pooled[level]);
            let (_, _, sh, sw) = side.value().dims4();
            score = score.resize_bilinear(sh, sw).add(&side);
        }
        GraphOutput::new(score.resize_bilinear(h, w).sigmoid())
    }
}
