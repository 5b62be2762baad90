use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{check_batch, lrelu, Architecture, ConvSpec, Layer, Network};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::Bound;
use crate::ops::NormMode;
use crate::scalar::Scalar;

/// Smallest low-resolution extent accepted by a generator, per axis.
pub const MIN_LR_EXTENT: usize = 3;
/// Initialization gain of the last conv of every residual branch and of the
/// output conv, so a fresh generator starts close to its interpolation skip.
const BRANCH_GAIN: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Srresnet,
    Rdn,
}

impl GeneratorKind {
    pub fn display_name(self) -> &'static str {
        match self {
            GeneratorKind::Srresnet => "SRResNet",
            GeneratorKind::Rdn => "RDN",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    pub base_channels: usize,
    pub num_blocks: usize,
    pub reduce_channels: usize,
    pub rdn_layers_per_block: usize,
    pub rdn_growth: usize,
    pub scale: [usize; 3],
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            kind: GeneratorKind::Srresnet,
            base_channels: 64,
            num_blocks: 8,
            reduce_channels: 32,
            rdn_layers_per_block: 4,
            rdn_growth: 16,
            scale: [2, 2, 2],
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.reduce_channels == 0 {
            return Err(Error::Config("generator channel counts must be >= 1".into()));
        }
        if self.kind == GeneratorKind::Rdn && (self.rdn_layers_per_block == 0 || self.rdn_growth == 0) {
            return Err(Error::Config("rdn_layers_per_block and rdn_growth must be >= 1".into()));
        }
        for s in self.scale {
            if s == 0 || !s.is_power_of_two() {
                return Err(Error::Config(format!("generator scale components must be powers of two, got {:?}", self.scale)));
            }
        }
        Ok(())
    }

    /// Number of factor-2 upsampling stages.
    pub fn upsample_stages(&self) -> usize {
        self.scale.iter().map(|s| s.trailing_zeros() as usize).max().unwrap_or(0)
    }

    /// Per-axis factor of upsampling stage `i`.
    pub fn stage_factors(&self, i: usize) -> [usize; 3] {
        self.scale.map(|s| if (s.trailing_zeros() as usize) > i { 2 } else { 1 })
    }
}

fn residual_block(i: usize, c: usize) -> Layer {
    Layer::Residual(vec![
        ConvSpec::new(format!("blocks.{i}.conv1"), c, c, 3).into_layer(),
        Layer::BatchNorm { name: format!("blocks.{i}.bn1"), channels: c },
        lrelu(),
        ConvSpec::new(format!("blocks.{i}.conv2"), c, c, 3).gain(BRANCH_GAIN).into_layer(),
        Layer::BatchNorm { name: format!("blocks.{i}.bn2"), channels: c },
    ])
}

fn dense_block(i: usize, c: usize, layers: usize, growth: usize) -> Layer {
    let dense = (0..layers)
        .map(|j| vec![ConvSpec::new(format!("blocks.{i}.dense{j}"), c + j * growth, growth, 3).into_layer(), lrelu()])
        .collect();
    let fusion = vec![ConvSpec::new(format!("blocks.{i}.fusion"), c + layers * growth, c, 1).gain(BRANCH_GAIN).into_layer()];
    Layer::Dense { layers: dense, fusion }
}

pub(super) fn generator_layers(cfg: &GeneratorConfig) -> Vec<Layer> {
    let c = cfg.base_channels;
    let r = cfg.reduce_channels;
    let mut layers = vec![ConvSpec::new("head", 1, c, 3).into_layer(), lrelu()];
    for i in 0..cfg.num_blocks {
        layers.push(match cfg.kind {
            GeneratorKind::Srresnet => residual_block(i, c),
            GeneratorKind::Rdn => dense_block(i, c, cfg.rdn_layers_per_block, cfg.rdn_growth),
        });
    }
    layers.push(ConvSpec::new("pointwise", c, c, 1).into_layer());
    layers.push(ConvSpec::new("reduce", c, r, 3).into_layer());
    layers.push(lrelu());
    for i in 0..cfg.upsample_stages() {
        layers.push(Layer::UpsampleNearest(cfg.stage_factors(i)));
        layers.push(ConvSpec::new(format!("upsample.{i}"), r, r, 3).into_layer());
        layers.push(lrelu());
    }
    layers.push(ConvSpec::new("output", r, 1, 3).gain(BRANCH_GAIN).into_layer());
    layers
}

impl<T: Scalar> Network<T> {
    /// SRResNet-3D or RDN-3D generator with a trilinear global skip.
    pub fn generator(cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        Self::assemble(Architecture::Generator(cfg.clone()), generator_layers(cfg), Vec::new(), Vec::new())
    }

    pub fn generator_config(&self) -> Option<&GeneratorConfig> {
        match &self.arch {
            Architecture::Generator(c) => Some(c),
            _ => None,
        }
    }

    /// `lr` is `(N, 1, d, h, w)`; the result is `(N, 1, s_d d, s_h h, s_w w)`.
    pub fn generator_forward(&mut self, g: &mut Graph<T>, bound: &Bound, lr: Var, mode: NormMode) -> Result<Var> {
        let cfg = self.generator_config().cloned().ok_or(Error::invalid("generator_forward", "network is not a generator"))?;
        let s = check_batch(g, lr, "generator_forward")?;
        if s.spatial().iter().any(|e| *e < MIN_LR_EXTENT) {
            return Err(Error::ExtentTooSmall { what: "generator input", extent: s.spatial(), minimum: [MIN_LR_EXTENT; 3] });
        }
        let (mut ctx, body, _, _) = self.ctx(bound, mode)?;
        let residual = ctx.run(g, body, lr)?;
        let skip = g.trilinear_upsample(lr, cfg.scale)?;
        g.add(residual, skip)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    #[test]
    fn stage_factors() {
        let cfg = GeneratorConfig { scale: [4, 2, 1], ..Default::default() };
        assert_eq!(cfg.upsample_stages(), 2);
        assert_eq!(cfg.stage_factors(0), [2, 2, 1]);
        assert_eq!(cfg.stage_factors(1), [2, 1, 1]);
    }

    #[test]
    fn non_power_of_two_rejected() {
        let cfg = GeneratorConfig { scale: [3, 1, 1], ..Default::default() };
        assert!(Network::<f32>::generator(&cfg).is_err());
    }

    #[test]
    fn anisotropic_shape() {
        let cfg = GeneratorConfig { base_channels: 4, num_blocks: 1, reduce_channels: 2, scale: [2, 1, 1], ..Default::default() };
        let mut net = Network::<f32>::generator(&cfg).unwrap();
        let mut g = Graph::new();
        let b = net.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(Shape::new(1, 1, 8, 16, 16)));
        let y = net.generator_forward(&mut g, &b, x, NormMode::Eval).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 1, 16, 16, 16));
    }

    #[test]
    fn tiny_input_rejected() {
        let cfg = GeneratorConfig { base_channels: 2, num_blocks: 0, reduce_channels: 2, ..Default::default() };
        let mut net = Network::<f32>::generator(&cfg).unwrap();
        let mut g = Graph::new();
        let b = net.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(Shape::new(1, 1, 2, 4, 4)));
        assert!(matches!(net.generator_forward(&mut g, &b, x, NormMode::Eval), Err(Error::ExtentTooSmall { .. })));
    }
}
