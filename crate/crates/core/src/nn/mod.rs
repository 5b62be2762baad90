//! Networks as declarative layer lists interpreted on a [`Graph`].
//!
//! A [`Network`] owns its parameters and batch-norm running statistics.
//! Each forward pass first [binds](Network::bind) the parameters into a
//! graph as leaves, then interprets the layer list. After `backward`, the
//! gradients are read back through the same [`Bound`] handle.
//!
//! Closed-form parameter counts of the default configurations:
//!
//! | network | count |
//! |---------|-------|
//! | SRResNet, base 64, 8 blocks, reduce 32, scale (2,2,2) | 1,862,369 |
//! | RDN, base 64, 8 blocks, 4 layers, growth 16, reduce 32, scale (2,2,2) | 1,372,897 |
//! | VGG, first 64 | 19,399,171 |
//!
//! SRResNet: head conv `27*64 + 64`, per residual block
//! `2 * (27*64*64 + 64) + 2 * 2*64`, point-wise `64*64 + 64`, reduce
//! `27*64*32 + 32`, one upsample conv `27*32*32 + 32`, output `27*32 + 1`.
//! VGG: five `3^3` convs with bias (`c_in -> c_out` for 1, 64, ..., 1024),
//! their BN affine pairs, then `1024*512 + 512`, `512*128 + 128`, `128*3 + 3`.

mod discriminator;
mod generator;
mod vgg;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::{Activation, BatchNormConfig, Conv3dParams, NormMode};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub use discriminator::{DiscriminatorConfig, DiscriminatorKind};
pub use generator::{GeneratorConfig, GeneratorKind, MIN_LR_EXTENT};
pub use vgg::{VggConfig, VGG_BLOCKS, VGG_FC_DIMS, VGG_MIN_EXTENT};

/// Leaky ReLU slope used by generators and discriminators.
pub const LEAKY_SLOPE: f64 = 0.2;

/// How a tensor is (re)initialized by [`Network::init_params`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Gaussian with `std = gain * sqrt(2 / fan_in)`.
    FanIn { fan_in: usize, gain: f64 },
    Zeros,
    Ones,
    /// Batch-norm running statistics: means 0, variances 1.
    RunningStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub init: Init,
}

/// Ordered collection of uniquely named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { entries: Vec::new(), index: BTreeMap::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn insert(&mut self, name: String, shape: Shape, init: Init) -> Result<usize> {
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let tensor = match init {
            Init::Ones => Tensor::full(shape, T::one()),
            _ => Tensor::zeros(shape),
        };
        let i = self.entries.len();
        self.index.insert(name.clone(), i);
        self.entries.push(Entry { name, tensor, init });
        Ok(i)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.entries[i].tensor)
    }
    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(move |i| &mut self.entries[i].tensor)
    }
    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }
    pub fn tensor(&self, i: usize) -> &Tensor<T> {
        &self.entries[i].tensor
    }
    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.entries[i].tensor
    }
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    /// Replace the values of `name`; the shape must match.
    pub fn set(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let slot = self.get_mut(name).ok_or_else(|| Error::UnknownParam(name.into()))?;
        if slot.shape() != tensor.shape() {
            return Err(Error::invalid("ParamStore::set", "shape differs from the stored tensor"));
        }
        *slot = tensor.with_requires_grad(false);
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry { name: e.name.clone(), tensor: e.tensor.cast(), init: e.init })
                .collect(),
            index: self.index.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    /// Cubic kernel edge; padding is `kernel / 2`.
    pub kernel: usize,
    pub stride: [usize; 3],
    pub bias: bool,
    pub gain: f64,
}

impl ConvSpec {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize) -> Self {
        ConvSpec { name: name.into(), cin, cout, kernel, stride: [1; 3], bias: true, gain: 1.0 }
    }
    pub fn stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }
    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }
    pub fn gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }
    pub fn into_layer(self) -> Layer {
        Layer::Conv(self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(ConvSpec),
    BatchNorm { name: String, channels: usize },
    Act(Activation),
    /// `x + body(x)`.
    Residual(Vec<Layer>),
    /// Residual dense block: each dense layer sees the concatenation of the
    /// block input and all previous dense outputs; `fusion` maps the full
    /// concatenation back and the block input is added.
    Dense { layers: Vec<Vec<Layer>>, fusion: Vec<Layer> },
    UpsampleNearest([usize; 3]),
    MaxPool([usize; 3]),
    GlobalAvgPool,
    Linear { name: String, fin: usize, fout: usize, gain: f64 },
    /// Record the current value under a name.
    Tap(String),
}

fn register<T: Scalar>(layers: &[Layer], params: &mut ParamStore<T>, buffers: &mut ParamStore<T>) -> Result<()> {
    for layer in layers {
        match layer {
            Layer::Conv(c) => {
                if c.cin == 0 || c.cout == 0 || c.kernel == 0 {
                    return Err(Error::Config(format!("conv {} has a zero extent", c.name)));
                }
                let fan_in = c.cin * c.kernel.pow(3);
                params.insert(
                    format!("{}.weight", c.name),
                    Shape::new(c.cout, c.cin, c.kernel, c.kernel, c.kernel),
                    Init::FanIn { fan_in, gain: c.gain },
                )?;
                if c.bias {
                    params.insert(format!("{}.bias", c.name), Shape::vector(c.cout), Init::Zeros)?;
                }
            }
            Layer::BatchNorm { name, channels } => {
                params.insert(format!("{name}.gamma"), Shape::vector(*channels), Init::Ones)?;
                params.insert(format!("{name}.beta"), Shape::vector(*channels), Init::Zeros)?;
                buffers.insert(format!("{name}.running"), Shape::new(2, *channels, 1, 1, 1), Init::RunningStats)?;
            }
            Layer::Linear { name, fin, fout, gain } => {
                params.insert(format!("{name}.weight"), Shape::new(*fout, *fin, 1, 1, 1), Init::FanIn { fan_in: *fin, gain: *gain })?;
                params.insert(format!("{name}.bias"), Shape::vector(*fout), Init::Zeros)?;
            }
            Layer::Residual(body) => register(body, params, buffers)?,
            Layer::Dense { layers, fusion } => {
                for l in layers {
                    register(l, params, buffers)?;
                }
                register(fusion, params, buffers)?;
            }
            Layer::Act(_) | Layer::UpsampleNearest(_) | Layer::MaxPool(_) | Layer::GlobalAvgPool | Layer::Tap(_) => {}
        }
    }
    Ok(())
}

/// Graph handles of a network's parameters, in [`ParamStore`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Use existing graph nodes as the parameters (e.g. for gradient checks).
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
    /// Gradients after `backward`, in parameter order.
    pub fn grads<'g, T: Scalar>(&self, g: &'g Graph<T>) -> Result<Vec<&'g [T]>> {
        self.vars
            .iter()
            .map(|v| g.grad(*v).ok_or(Error::invalid("Bound::grads", "parameters were bound as constants or backward has not run")))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Architecture {
    Sequential,
    Generator(GeneratorConfig),
    Discriminator(DiscriminatorConfig),
    Vgg(VggConfig),
}

/// Output of a forward pass plus the feature taps it recorded.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub out: Var,
    pub taps: Vec<(String, Var)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    arch: Architecture,
    /// Main trunk.
    body: Vec<Layer>,
    /// Scalar/vector head applied after the trunk (discriminators, VGG).
    head: Vec<Layer>,
    /// Projection `V` of the projection discriminator.
    projection: Vec<Layer>,
    params: ParamStore<T>,
    buffers: ParamStore<T>,
    bn: BatchNormConfig,
}

struct Ctx<'a, T> {
    params: &'a ParamStore<T>,
    bound: &'a Bound,
    buffers: &'a mut ParamStore<T>,
    mode: NormMode,
    bn: BatchNormConfig,
    taps: Vec<(String, Var)>,
}

impl<T: Scalar> Ctx<'_, T> {
    fn param(&self, name: &str) -> Result<Var> {
        let i = self.params.position(name).ok_or_else(|| Error::UnknownParam(name.into()))?;
        Ok(self.bound.vars[i])
    }

    fn run(&mut self, g: &mut Graph<T>, layers: &[Layer], mut x: Var) -> Result<Var> {
        for layer in layers {
            x = match layer {
                Layer::Conv(c) => {
                    let w = self.param(&format!("{}.weight", c.name))?;
                    let b = if c.bias { Some(self.param(&format!("{}.bias", c.name))?) } else { None };
                    let pad = c.kernel / 2;
                    g.conv3d(x, w, b, Conv3dParams { stride: c.stride, padding: [pad; 3] })?
                }
                Layer::BatchNorm { name, channels } => {
                    let gamma = self.param(&format!("{name}.gamma"))?;
                    let beta = self.param(&format!("{name}.beta"))?;
                    let stats = self
                        .buffers
                        .get_mut(&format!("{name}.running"))
                        .ok_or_else(|| Error::UnknownParam(format!("{name}.running")))?;
                    let (mean, var) = stats.data_mut().split_at_mut(*channels);
                    g.batch_norm3d(x, gamma, beta, mean, var, self.bn, self.mode)?
                }
                Layer::Act(a) => g.activation(x, *a)?,
                Layer::Residual(body) => {
                    let y = self.run(g, body, x)?;
                    g.add(x, y)?
                }
                Layer::Dense { layers, fusion } => {
                    let mut feats = alloc::vec![x];
                    for l in layers {
                        let input = if feats.len() == 1 { x } else { g.concat_channels(&feats)? };
                        let y = self.run(g, l, input)?;
                        feats.push(y);
                    }
                    let all = if feats.len() == 1 { x } else { g.concat_channels(&feats)? };
                    let fused = self.run(g, fusion, all)?;
                    g.add(x, fused)?
                }
                Layer::UpsampleNearest(f) => g.upsample_nearest3d(x, *f)?,
                Layer::MaxPool(w) => g.max_pool3d(x, *w)?,
                Layer::GlobalAvgPool => g.global_avg_pool3d(x)?,
                Layer::Linear { name, .. } => {
                    let w = self.param(&format!("{name}.weight"))?;
                    let b = self.param(&format!("{name}.bias"))?;
                    g.linear(x, w, Some(b))?
                }
                Layer::Tap(name) => {
                    self.taps.push((name.clone(), x));
                    x
                }
            };
        }
        Ok(x)
    }
}

impl<T: Scalar> Network<T> {
    fn assemble(arch: Architecture, body: Vec<Layer>, head: Vec<Layer>, projection: Vec<Layer>) -> Result<Self> {
        let mut params = ParamStore::default();
        let mut buffers = ParamStore::default();
        register(&body, &mut params, &mut buffers)?;
        register(&head, &mut params, &mut buffers)?;
        register(&projection, &mut params, &mut buffers)?;
        let mut net = Network { arch, body, head, projection, params, buffers, bn: BatchNormConfig::default() };
        net.init_params(0);
        Ok(net)
    }

    /// A plain layer stack; [`Network::forward`] runs it front to back.
    pub fn sequential(layers: Vec<Layer>) -> Result<Self> {
        Self::assemble(Architecture::Sequential, layers, Vec::new(), Vec::new())
    }

    pub fn empty() -> Self {
        Self::sequential(Vec::new()).expect("empty network is valid")
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }
    pub fn layers(&self) -> &[Layer] {
        &self.body
    }
    pub fn head(&self) -> &[Layer] {
        &self.head
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
    pub fn buffers_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.buffers
    }
    pub fn batch_norm_config(&self) -> BatchNormConfig {
        self.bn
    }
    pub fn set_batch_norm_config(&mut self, cfg: BatchNormConfig) {
        self.bn = cfg;
    }

    /// Total number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Parameters and buffers as `param.<name>` / `buffer.<name>` pairs.
    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        let params = self.params.entries.iter().map(|e| (format!("param.{}", e.name), e.tensor.clone().with_requires_grad(false)));
        let buffers = self.buffers.entries.iter().map(|e| (format!("buffer.{}", e.name), e.tensor.clone()));
        params.chain(buffers).collect()
    }

    /// Inverse of [`Network::state`]. Every entry must be present exactly once.
    pub fn load_state(&mut self, state: &[(String, Tensor<T>)]) -> Result<()> {
        let expected = self.params.len() + self.buffers.len();
        let mut seen = BTreeMap::new();
        for (name, t) in state {
            if seen.insert(name.as_str(), ()).is_some() {
                return Err(Error::Config(format!("duplicate tensor {name}")));
            }
            if let Some(p) = name.strip_prefix("param.") {
                self.params.set(p, t.clone())?;
            } else if let Some(b) = name.strip_prefix("buffer.") {
                self.buffers.set(b, t.clone())?;
            } else {
                return Err(Error::UnknownParam(name.clone()));
            }
        }
        if seen.len() != expected {
            return Err(Error::Config(format!("state holds {} of {} tensors", seen.len(), expected)));
        }
        Ok(())
    }

    /// Deterministic re-initialization of every parameter and buffer.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for store in [&mut self.params, &mut self.buffers] {
            for e in &mut store.entries {
                let shape = e.tensor.shape();
                e.tensor = match e.init {
                    Init::FanIn { fan_in, gain } => {
                        Tensor::randn(shape, gain * crate::math::sqrt(2.0 / fan_in as f64), &mut rng)
                    }
                    Init::Zeros => Tensor::zeros(shape),
                    Init::Ones => Tensor::full(shape, T::one()),
                    Init::RunningStats => {
                        let c = shape.c();
                        Tensor::from_fn(shape, |i| if i < c { T::zero() } else { T::one() })
                    }
                };
            }
        }
    }

    /// Insert the parameters into `g`, as variables when `trainable`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .entries
            .iter()
            .map(|e| if trainable { g.variable(e.tensor.clone()) } else { g.constant(e.tensor.clone()) })
            .collect();
        Bound { vars }
    }

    fn ctx<'a>(&'a mut self, bound: &'a Bound, mode: NormMode) -> Result<(Ctx<'a, T>, &'a [Layer], &'a [Layer], &'a [Layer])> {
        if bound.vars.len() != self.params.len() {
            return Err(Error::invalid("Network::forward", "bound parameter count differs from the network"));
        }
        let ctx = Ctx { params: &self.params, bound, buffers: &mut self.buffers, mode, bn: self.bn, taps: Vec::new() };
        Ok((ctx, &self.body, &self.head, &self.projection))
    }

    /// Run trunk then head.
    pub fn forward(&mut self, g: &mut Graph<T>, bound: &Bound, x: Var, mode: NormMode) -> Result<Forward> {
        let (mut ctx, body, head, _) = self.ctx(bound, mode)?;
        let trunk = ctx.run(g, body, x)?;
        let out = ctx.run(g, head, trunk)?;
        Ok(Forward { out, taps: ctx.taps })
    }

    /// Same architecture with parameters and buffers converted to `U`.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            arch: self.arch.clone(),
            body: self.body.clone(),
            head: self.head.clone(),
            projection: self.projection.clone(),
            params: self.params.cast(),
            buffers: self.buffers.cast(),
            bn: self.bn,
        }
    }
}

fn lrelu() -> Layer {
    Layer::Act(Activation::LeakyRelu(LEAKY_SLOPE))
}

fn check_batch(g: &Graph<impl Scalar>, x: Var, what: &'static str) -> Result<Shape> {
    let s = g.shape(x);
    if s.c() != 1 {
        return Err(Error::ShapeMismatch { op: what, axis: "C", expected: 1, found: s.c() });
    }
    if s.n() == 0 {
        return Err(Error::EmptyOutput { op: what, shape: s.0 });
    }
    Ok(s)
}
