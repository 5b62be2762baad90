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

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorKind {
    /// Standard discriminator: sees only the HR or SR volume.
    Sd,
    /// Projection discriminator conditioned on the LR volume.
    Pd,
}

impl DiscriminatorKind {
    pub fn display_name(self) -> &'static str {
        match self {
            DiscriminatorKind::Sd => "SD",
            DiscriminatorKind::Pd => "PD",
        }
    }
}

/// Largest spatial extent the standard discriminator pools from.
pub const SD_MAX_POOLED_EXTENT: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub kind: DiscriminatorKind,
    pub base_channels: usize,
    /// HR-to-LR factors (projection discriminator grid alignment).
    pub scale: [usize; 3],
    /// HR extent the standard discriminator is built for; it strides until
    /// every axis is at most 4.
    pub hr_extent: [usize; 3],
    /// Spectral normalization is not implemented; must stay `false`.
    pub spectral_norm: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            kind: DiscriminatorKind::Pd,
            base_channels: 32,
            scale: [2, 2, 2],
            hr_extent: [16, 16, 16],
            spectral_norm: false,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::Config("discriminator base_channels must be >= 1".into()));
        }
        if self.spectral_norm {
            return Err(Error::Config("spectral_norm is not supported".into()));
        }
        match self.kind {
            DiscriminatorKind::Pd => {
                if self.scale.iter().any(|s| *s == 0 || !s.is_power_of_two()) {
                    return Err(Error::Config(format!("projection discriminator scale must be powers of two, got {:?}", self.scale)));
                }
            }
            DiscriminatorKind::Sd => {
                if self.hr_extent.iter().any(|e| *e == 0) {
                    return Err(Error::Config("hr_extent components must be >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Per-axis strides of every stride-2 stage.
    pub fn stage_strides(&self) -> Vec<[usize; 3]> {
        match self.kind {
            DiscriminatorKind::Pd => {
                let stages = self.scale.iter().map(|s| s.trailing_zeros() as usize).max().unwrap_or(0);
                (0..stages).map(|i| self.scale.map(|s| if (s.trailing_zeros() as usize) > i { 2 } else { 1 })).collect()
            }
            DiscriminatorKind::Sd => {
                let mut ext = self.hr_extent;
                let mut out = Vec::new();
                while ext.iter().any(|e| *e > SD_MAX_POOLED_EXTENT) {
                    let stride = ext.map(|e| if e > SD_MAX_POOLED_EXTENT { 2 } else { 1 });
                    for a in 0..3 {
                        ext[a] = ext[a].div_ceil(stride[a]);
                    }
                    out.push(stride);
                }
                out
            }
        }
    }

    pub fn feature_channels(&self) -> usize {
        self.base_channels << self.stage_strides().len()
    }
}

fn trunk(cfg: &DiscriminatorConfig) -> Vec<Layer> {
    let mut c = cfg.base_channels;
    let mut layers = vec![ConvSpec::new("stem", 1, c, 3).into_layer(), lrelu()];
    for (i, stride) in cfg.stage_strides().into_iter().enumerate() {
        layers.push(ConvSpec::new(format!("stages.{i}"), c, 2 * c, 3).stride(stride).into_layer());
        layers.push(lrelu());
        c *= 2;
    }
    layers
}

impl<T: Scalar> Network<T> {
    /// Standard or projection discriminator.
    pub fn discriminator(cfg: &DiscriminatorConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.feature_channels();
        let head = vec![Layer::GlobalAvgPool, Layer::Linear { name: "psi".into(), fin: c, fout: 1, gain: 1.0 }];
        let projection = match cfg.kind {
            DiscriminatorKind::Pd => vec![ConvSpec::new("v", c, 1, 1).no_bias().into_layer()],
            DiscriminatorKind::Sd => Vec::new(),
        };
        Self::assemble(Architecture::Discriminator(cfg.clone()), trunk(cfg), head, projection)
    }

    pub fn discriminator_config(&self) -> Option<&DiscriminatorConfig> {
        match &self.arch {
            Architecture::Discriminator(c) => Some(c),
            _ => None,
        }
    }

    /// Standard discriminator logits `(N, 1, 1, 1, 1)`.
    pub fn sd_forward(&mut self, g: &mut Graph<T>, bound: &Bound, x: Var, mode: NormMode) -> Result<Var> {
        let cfg = self.discriminator_config().cloned().ok_or(Error::invalid("sd_forward", "network is not a discriminator"))?;
        if cfg.kind != DiscriminatorKind::Sd {
            return Err(Error::invalid("sd_forward", "network is a projection discriminator"));
        }
        let s = check_batch(g, x, "sd_forward")?;
        if s.spatial() != cfg.hr_extent {
            return Err(Error::GridMismatch { hr: s.spatial(), lr: cfg.hr_extent, scale: [1; 3] });
        }
        Ok(self.forward(g, bound, x, mode)?.out)
    }

    /// Features `phi(x)` of the projection discriminator.
    pub fn pd_features(&mut self, g: &mut Graph<T>, bound: &Bound, x: Var, mode: NormMode) -> Result<Var> {
        let (mut ctx, body, _, _) = self.ctx(bound, mode)?;
        ctx.run(g, body, x)
    }

    /// `f(x, y) = sum(y * (V conv phi(x))) + psi(phi(x))` per sample, shape
    /// `(N, 1, 1, 1, 1)`.
    pub fn projection_disc_forward(&mut self, g: &mut Graph<T>, bound: &Bound, x: Var, y: Var, mode: NormMode) -> Result<Var> {
        let cfg = self
            .discriminator_config()
            .cloned()
            .ok_or(Error::invalid("projection_disc_forward", "network is not a discriminator"))?;
        if cfg.kind != DiscriminatorKind::Pd {
            return Err(Error::invalid("projection_disc_forward", "network is a standard discriminator"));
        }
        let xs = check_batch(g, x, "projection_disc_forward")?;
        let ys = check_batch(g, y, "projection_disc_forward")?;
        let aligned = (0..3).all(|a| ys.spatial()[a] * cfg.scale[a] == xs.spatial()[a]);
        if !aligned || xs.n() != ys.n() {
            return Err(Error::GridMismatch { hr: xs.spatial(), lr: ys.spatial(), scale: cfg.scale });
        }
        let (mut ctx, body, head, projection) = self.ctx(bound, mode)?;
        let phi = ctx.run(g, body, x)?;
        if g.shape(phi).spatial() != ys.spatial() {
            return Err(Error::GridMismatch { hr: xs.spatial(), lr: ys.spatial(), scale: cfg.scale });
        }
        let psi = ctx.run(g, head, phi)?;
        let f = ctx.run(g, projection, phi)?;
        let prod = g.mul(y, f)?;
        let inner = g.sum_per_sample(prod)?;
        g.add(inner, psi)
    }

    /// Dispatch on the discriminator kind. The standard discriminator never
    /// touches `lr`.
    pub fn discriminate(&mut self, g: &mut Graph<T>, bound: &Bound, x: Var, lr: Var, mode: NormMode) -> Result<Var> {
        match self.discriminator_config().map(|c| c.kind) {
            Some(DiscriminatorKind::Sd) => self.sd_forward(g, bound, x, mode),
            Some(DiscriminatorKind::Pd) => self.projection_disc_forward(g, bound, x, lr, mode),
            None => Err(Error::invalid("discriminate", "network is not a discriminator")),
        }
    }
}
