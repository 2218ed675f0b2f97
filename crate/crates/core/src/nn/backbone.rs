use std::str::FromStr;

use candle_core::Tensor;
use rand::Rng;

use super::layers::{Conv2dLayer, GroupNormLayer, LinearLayer};
use super::ParamStore;
use crate::error::{Error, Result};

/// Available encoder architectures. The small CNN is the desk-scale default;
/// the residual network mirrors the usual 18-layer layout (group-normalized,
/// 32x32 stem) for full-scale runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneKind {
    SmallCnn,
    ResNet18,
}

impl BackboneKind {
    pub fn arch_id(&self) -> &'static str {
        match self {
            BackboneKind::SmallCnn => "small-cnn-v1",
            BackboneKind::ResNet18 => "resnet18-gn-v1",
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            BackboneKind::SmallCnn => 128,
            BackboneKind::ResNet18 => 512,
        }
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small-cnn-v1" | "small" => Ok(BackboneKind::SmallCnn),
            "resnet18-gn-v1" | "resnet18" => Ok(BackboneKind::ResNet18),
            other => Err(Error::Argument(format!("unknown backbone `{other}`"))),
        }
    }
}

pub enum Backbone {
    Small(SmallCnn),
    Resnet(ResNet18),
}

impl Backbone {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Backbone::Small(net) => net.forward(x),
            Backbone::Resnet(net) => net.forward(x),
        }
    }

    pub fn kind(&self) -> BackboneKind {
        match self {
            Backbone::Small(_) => BackboneKind::SmallCnn,
            Backbone::Resnet(_) => BackboneKind::ResNet18,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.kind().feature_dim()
    }
}

pub fn build_backbone(
    kind: BackboneKind,
    store: &mut ParamStore,
    rng: &mut impl Rng,
) -> Result<Backbone> {
    match kind {
        BackboneKind::SmallCnn => Ok(Backbone::Small(SmallCnn::new(store, rng)?)),
        BackboneKind::ResNet18 => Ok(Backbone::Resnet(ResNet18::new(store, rng)?)),
    }
}

struct ConvBlock {
    conv: Conv2dLayer,
    norm: GroupNormLayer,
}

impl ConvBlock {
    fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(ConvBlock {
            conv: Conv2dLayer::new(store, name, in_ch, out_ch, 3, stride, 1, rng)?,
            norm: GroupNormLayer::new(store, &format!("{name}.norm"), out_ch, 8, rng)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.norm.forward(&self.conv.forward(x)?)?.relu()?)
    }
}

/// Four strided conv blocks and a global average pool; feature dim 128.
pub struct SmallCnn {
    blocks: Vec<ConvBlock>,
}

impl SmallCnn {
    fn new(store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        let widths = [(3, 32, 1), (32, 64, 2), (64, 128, 2), (128, 128, 2)];
        let blocks = widths
            .iter()
            .enumerate()
            .map(|(i, &(ci, co, s))| ConvBlock::new(store, &format!("block{i}"), ci, co, s, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(SmallCnn { blocks })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        // global average pool over the spatial grid
        Ok(h.mean(3)?.mean(2)?)
    }
}

struct BasicBlock {
    conv1: Conv2dLayer,
    norm1: GroupNormLayer,
    conv2: Conv2dLayer,
    norm2: GroupNormLayer,
    down: Option<(Conv2dLayer, GroupNormLayer)>,
}

impl BasicBlock {
    fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let down = if stride != 1 || in_ch != out_ch {
            Some((
                Conv2dLayer::new(store, &format!("{name}.down"), in_ch, out_ch, 1, stride, 0, rng)?,
                GroupNormLayer::new(store, &format!("{name}.down.norm"), out_ch, 8, rng)?,
            ))
        } else {
            None
        };
        Ok(BasicBlock {
            conv1: Conv2dLayer::new(store, &format!("{name}.conv1"), in_ch, out_ch, 3, stride, 1, rng)?,
            norm1: GroupNormLayer::new(store, &format!("{name}.norm1"), out_ch, 8, rng)?,
            conv2: Conv2dLayer::new(store, &format!("{name}.conv2"), out_ch, out_ch, 3, 1, 1, rng)?,
            norm2: GroupNormLayer::new(store, &format!("{name}.norm2"), out_ch, 8, rng)?,
            down,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(&self.conv1.forward(x)?)?.relu()?;
        let h = self.norm2.forward(&self.conv2.forward(&h)?)?;
        let skip = match &self.down {
            Some((conv, norm)) => norm.forward(&conv.forward(x)?)?,
            None => x.clone(),
        };
        Ok((h + skip)?.relu()?)
    }
}

/// Residual network in the standard 18-layer arrangement with a 3x3 stem
/// (no max-pool) suited to 32x32 inputs; feature dim 512.
pub struct ResNet18 {
    stem: ConvBlock,
    blocks: Vec<BasicBlock>,
}

impl ResNet18 {
    fn new(store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        let stem = ConvBlock::new(store, "stem", 3, 64, 1, rng)?;
        let mut blocks = Vec::new();
        let stages = [(64usize, 64usize, 1usize), (64, 128, 2), (128, 256, 2), (256, 512, 2)];
        for (stage, &(in_ch, out_ch, stride)) in stages.iter().enumerate() {
            blocks.push(BasicBlock::new(
                store,
                &format!("stage{stage}.block0"),
                in_ch,
                out_ch,
                stride,
                rng,
            )?);
            blocks.push(BasicBlock::new(
                store,
                &format!("stage{stage}.block1"),
                out_ch,
                out_ch,
                1,
                rng,
            )?);
        }
        Ok(ResNet18 { stem, blocks })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.stem.forward(x)?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        Ok(h.mean(3)?.mean(2)?)
    }
}

/// Two-layer nonlinear projection used only during contrastive pre-training.
pub struct ProjectionHead {
    l1: LinearLayer,
    l2: LinearLayer,
    pub out_dim: usize,
}

impl ProjectionHead {
    pub fn new(
        store: &mut ParamStore,
        feature_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(ProjectionHead {
            l1: LinearLayer::new(store, "proj.l1", feature_dim, out_dim, rng)?,
            l2: LinearLayer::new(store, "proj.l2", out_dim, out_dim, rng)?,
            out_dim,
        })
    }

    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        self.l2.forward(&self.l1.forward(features)?.relu()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use crate::rng::rng_from;

    #[test]
    fn small_cnn_feature_shape() {
        let mut store = ParamStore::new(Device::Cpu, DType::F32);
        let net = build_backbone(BackboneKind::SmallCnn, &mut store, &mut rng_from(1)).unwrap();
        let x = Tensor::zeros((5, 3, 32, 32), DType::F32, &Device::Cpu).unwrap();
        let f = net.forward(&x).unwrap();
        assert_eq!(f.dims(), &[5, 128]);
    }

    #[test]
    fn resnet_feature_shape() {
        let mut store = ParamStore::new(Device::Cpu, DType::F32);
        let net = build_backbone(BackboneKind::ResNet18, &mut store, &mut rng_from(1)).unwrap();
        let x = Tensor::zeros((2, 3, 32, 32), DType::F32, &Device::Cpu).unwrap();
        let f = net.forward(&x).unwrap();
        assert_eq!(f.dims(), &[2, 512]);
    }

    #[test]
    fn projection_head_shape() {
        let mut store = ParamStore::new(Device::Cpu, DType::F32);
        let head = ProjectionHead::new(&mut store, 128, 64, &mut rng_from(2)).unwrap();
        let f = Tensor::zeros((3, 128), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(head.forward(&f).unwrap().dims(), &[3, 64]);
    }

    #[test]
    fn arch_ids_parse_back() {
        for kind in [BackboneKind::SmallCnn, BackboneKind::ResNet18] {
            assert_eq!(kind.arch_id().parse::<BackboneKind>().unwrap(), kind);
        }
    }
}
