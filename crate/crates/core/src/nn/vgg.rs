use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{check_batch, Architecture, ConvSpec, Forward, Layer, Network};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::Bound;
use crate::ops::{Activation, NormMode};
use crate::scalar::Scalar;

pub const VGG_BLOCKS: usize = 5;
pub const VGG_FC_DIMS: [usize; 3] = [512, 128, 3];
pub const VGG_MIN_EXTENT: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VggConfig {
    /// Channels of the first block; each later block doubles them.
    pub first_channels: usize,
}

impl Default for VggConfig {
    fn default() -> Self {
        VggConfig { first_channels: 64 }
    }
}

impl VggConfig {
    pub fn channels(&self) -> [usize; VGG_BLOCKS] {
        core::array::from_fn(|i| self.first_channels << i)
    }

    pub fn tap_names() -> [&'static str; VGG_BLOCKS] {
        ["block1", "block2", "block3", "block4", "block5"]
    }
}

impl<T: Scalar> Network<T> {
    pub fn vgg_config(&self) -> Option<&VggConfig> {
        match &self.arch {
            Architecture::Vgg(c) => Some(c),
            _ => None,
        }
    }

    /// Five conv-BN-ReLU blocks, each tapped and max-pooled, then global
    /// average pooling and a three-layer classifier.
    pub fn vgg3d(cfg: &VggConfig) -> Result<Self> {
        if cfg.first_channels == 0 {
            return Err(Error::Config("vgg first_channels must be >= 1".into()));
        }
        let mut body = Vec::new();
        let mut cin = 1;
        for (i, c) in cfg.channels().into_iter().enumerate() {
            body.push(ConvSpec::new(format!("block{}.conv", i + 1), cin, c, 3).into_layer());
            body.push(Layer::BatchNorm { name: format!("block{}.bn", i + 1), channels: c });
            body.push(Layer::Act(Activation::Relu));
            body.push(Layer::Tap(VggConfig::tap_names()[i].into()));
            body.push(Layer::MaxPool([2, 2, 2]));
            cin = c;
        }
        let mut head = vec![Layer::GlobalAvgPool];
        for (i, fout) in VGG_FC_DIMS.into_iter().enumerate() {
            if i > 0 {
                head.push(Layer::Act(Activation::Relu));
            }
            head.push(Layer::Linear { name: format!("fc{}", i + 1), fin: cin, fout, gain: 1.0 });
            cin = fout;
        }
        Self::assemble(Architecture::Vgg(cfg.clone()), body, head, Vec::new())
    }

    fn check_vgg_input(&self, g: &Graph<T>, x: Var) -> Result<()> {
        if !matches!(self.arch, Architecture::Vgg(_)) {
            return Err(Error::invalid("vgg_forward", "network is not a VGG"));
        }
        let s = check_batch(g, x, "vgg_forward")?;
        if s.spatial().iter().any(|e| *e < VGG_MIN_EXTENT) {
            return Err(Error::ExtentTooSmall { what: "vgg input", extent: s.spatial(), minimum: [VGG_MIN_EXTENT; 3] });
        }
        Ok(())
    }

    /// Logits `(N, 3, 1, 1, 1)` and the five block taps.
    pub fn vgg_forward(&mut self, g: &mut Graph<T>, bound: &Bound, x: Var, mode: NormMode) -> Result<Forward> {
        self.check_vgg_input(g, x)?;
        self.forward(g, bound, x, mode)
    }

    /// Only the five block taps (the classifier head is skipped).
    pub fn vgg_features(&mut self, g: &mut Graph<T>, bound: &Bound, x: Var, mode: NormMode) -> Result<Vec<(alloc::string::String, Var)>> {
        self.check_vgg_input(g, x)?;
        let (mut ctx, body, _, _) = self.ctx(bound, mode)?;
        ctx.run(g, body, x)?;
        Ok(ctx.taps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    #[test]
    fn tap_grids_and_logits() {
        let mut net = Network::<f32>::vgg3d(&VggConfig { first_channels: 2 }).unwrap();
        let mut g = Graph::new();
        let b = net.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(Shape::new(2, 1, 32, 32, 32)));
        let out = net.vgg_forward(&mut g, &b, x, NormMode::Eval).unwrap();
        assert_eq!(g.shape(out.out), Shape::new(2, 3, 1, 1, 1));
        let grids: Vec<usize> = out.taps.iter().map(|(_, v)| g.shape(*v).spatial()[0]).collect();
        assert_eq!(grids, vec![32, 16, 8, 4, 2]);
        let chans: Vec<usize> = out.taps.iter().map(|(_, v)| g.shape(*v).c()).collect();
        assert_eq!(chans, vec![2, 4, 8, 16, 32]);
    }

    #[test]
    fn small_input_rejected() {
        let mut net = Network::<f32>::vgg3d(&VggConfig { first_channels: 1 }).unwrap();
        let mut g = Graph::new();
        let b = net.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(Shape::new(1, 1, 32, 31, 32)));
        assert!(matches!(net.vgg_forward(&mut g, &b, x, NormMode::Eval), Err(Error::ExtentTooSmall { .. })));
    }
}
