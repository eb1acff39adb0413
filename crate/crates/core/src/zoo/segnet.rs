use segtensor::{Scalar, Var};

use super::layers::{Act, Block, Conv, Ctx, Registry};
use super::{stage_widths, GraphOutput, VGG16_STAGE_CONVS};

/// VGG-16 encoder whose decoder upsamples by max-unpooling with the indices
/// recorded at the matching pooling layer.
#[derive(Debug, Clone)]
pub struct SegNet {
    enc: Vec<Block>,
    dec: Vec<Block>,
    head: Conv,
}

impl SegNet {
    pub(crate) fn build<T: Scalar>(reg: &mut Registry<T>, base: usize, bn: bool) -> Self {
        let w = stage_widths(base);
        let mut cin = 3;
        let enc = (0..5)
            .map(|i| {
                let b = reg.plain_block(&format!("enc{}", i + 1), VGG16_STAGE_CONVS[i], cin, w[i], bn, Act::Relu);
                cin = w[i];
                b
            })
            .collect();
        let dec = (0..5)
            .map(|j| {
                let stage = format!("dec{}", j + 1);
                let n = VGG16_STAGE_CONVS[j];
                let out = if j == 0 { w[0] } else { w[j - 1] };
                let units = (0..n)
                    .map(|u| {
                        let cout = if u + 1 == n { out } else { w[j] };
                        reg.unit(&stage, u + 1, w[j], cout, 3, bn, Act::Relu)
                    })
                    .collect();
                Block::Plain(units)
            })
            .collect();
        let head = reg.conv("head", "score", w[0], 1, 1, true);
        Self { enc, dec, head }
    }

    pub(crate) fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: &Var<T>) -> GraphOutput<T> {
        let mut feat = x.clone();
        let mut indices = Vec::with_capacity(self.enc.len());
        for stage in &self.enc {
            let (pooled, idx) = stage.forward(ctx, &feat).max_pool2x2();
            feat = pooled;
            indices.push(idx);
        }
        for (stage, idx) in self.dec.iter().zip(&indices).rev() {
            feat = stage.forward(ctx, &feat.max_unpool2x2(idx));
        }
        GraphOutput::new(self.head.forward(ctx, &feat).sigmoid())
    }
}
