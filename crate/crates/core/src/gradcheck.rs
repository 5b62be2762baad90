//! Central finite-difference verification of analytic gradients (`f64`).

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::losses::{adv_loss_d, adv_loss_g, class_balanced_ce, generator_objective, perceptual_loss, pixel_mse, CbLossParams, LossWeights};
use crate::math;
use crate::nn::{Bound, DiscriminatorConfig, GeneratorConfig, GeneratorKind, Network, VggConfig, VGG_BLOCKS, VGG_MIN_EXTENT};
use crate::ops::{Activation, BatchNormConfig, Conv3dParams, NormMode};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |a - n| / max(|a|, |n|, 1e-8)` over the checked coordinates.
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Coordinates where no step down to `1e-9` stayed on one linear piece.
    pub coords_skipped: usize,
    /// `(input index, element index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Smallest step tried when a difference straddles a kink.
const MIN_STEP: f64 = 1e-9;

fn relative_error(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs()).max(1e-8);
    (a - n).abs() / denom
}

/// Check every coordinate of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    grad_check_sampled(f, inputs, eps, None, 0).map(|r| r.max_rel_error)
}

/// Check at most `max_coords` randomly chosen coordinates per input (all of
/// them when `None`). The function must be deterministic.
pub fn grad_check_sampled<F>(
    mut f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    max_coords: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::invalid("grad_check", "eps must lie in [1e-7, 1e-3]"));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| g.grad(*v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let mut eval = |ts: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok((g.item(out), g.branch_signature()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport { max_rel_error: 0.0, coords_checked: 0, coords_skipped: 0, worst: None };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = match max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for j in coords {
            let orig = input.data()[j];
            let mut h = eps;
            let mut numeric = None;
            // a difference straddling a ReLU kink or a max-pool tie is not a
            // derivative; shrink the step until both sides share a branch
            while h >= MIN_STEP {
                work[i].data_mut()[j] = orig + h;
                let (fp, sp) = eval(&work)?;
                work[i].data_mut()[j] = orig - h;
                let (fm, sm) = eval(&work)?;
                work[i].data_mut()[j] = orig;
                if sp == sm {
                    numeric = Some((fp - fm) / (2.0 * h));
                    break;
                }
                h /= 10.0;
            }
            let Some(numeric) = numeric else {
                report.coords_skipped += 1;
                continue;
            };
            let a = analytic[i][j];
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((i, j, a, numeric));
            }
        }
    }
    Ok(report)
}

/// Absolute tolerance for single operations.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for whole networks.
pub const NET_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub coords_checked: usize,
    pub coords_skipped: usize,
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn randn(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Entries bounded away from zero by at least `margin`.
fn away_from_zero(shape: Shape, margin: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.random_range(margin..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

/// `sum(y * r)` with a fixed random `r`, a scalar head that exercises every
/// output coordinate with a distinct weight.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.constant(Tensor::randn(g.shape(y), 1.0, &mut rng));
    let p = g.mul(y, r)?;
    g.sum(p)
}

fn with_params(net: &Network<f64>, mut inputs: Vec<Tensor<f64>>) -> Vec<Tensor<f64>> {
    inputs.extend(net.params().entries().iter().map(|e| e.tensor.clone()));
    inputs
}

/// Finite-difference checks of every differentiable op, every loss and the
/// networks at tiny extents, in double precision.
pub fn run_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let eps = 1e-6;
    let mut push = |name: &str, tol: f64, r: GradCheckReport| {
        out.push(SuiteEntry { name: name.into(), max_rel_error: r.max_rel_error, tolerance: tol, coords_checked: r.coords_checked, coords_skipped: r.coords_skipped, worst: r.worst });
    };

    let x = randn(Shape::new(2, 2, 4, 5, 3), &mut rng);
    let k = randn(Shape::new(3, 2, 3, 3, 3), &mut rng);
    let b = randn(Shape::vector(3), &mut rng);
    let p = Conv3dParams { stride: [1, 2, 1], padding: [1, 0, 1] };
    let r = grad_check_sampled(|g, v| { let y = g.conv3d(v[0], v[1], Some(v[2]), p)?; project(g, y, 1) }, &[x, k, b], eps, None, 0)?;
    push("conv3d", OP_TOLERANCE, r);

    let x = randn(Shape::new(2, 3, 3, 2, 4), &mut rng);
    let k = randn(Shape::new(2, 3, 1, 1, 1), &mut rng);
    let r = grad_check_sampled(|g, v| { let y = g.conv3d(v[0], v[1], None, Conv3dParams::unit())?; project(g, y, 2) }, &[x, k], eps, None, 0)?;
    push("conv3d_pointwise", OP_TOLERANCE, r);

    let x = randn(Shape::new(3, 2, 2, 3, 2), &mut rng);
    let gamma = randn(Shape::vector(2), &mut rng);
    let beta = randn(Shape::vector(2), &mut rng);
    let r = grad_check_sampled(
        |g, v| {
            let (mut m, mut s) = ([0.0; 2], [1.0; 2]);
            let y = g.batch_norm3d(v[0], v[1], v[2], &mut m, &mut s, BatchNormConfig::default(), NormMode::Train)?;
            project(g, y, 3)
        },
        &[x, gamma, beta],
        eps,
        None,
        0,
    )?;
    push("batchnorm3d_train", OP_TOLERANCE, r);

    for (name, act) in [("relu", Activation::Relu), ("leaky_relu", Activation::LeakyRelu(0.2)), ("sigmoid", Activation::Sigmoid)] {
        let x = away_from_zero(Shape::new(2, 2, 2, 2, 2), 100.0 * eps, &mut rng);
        let r = grad_check_sampled(|g, v| { let y = g.activation(v[0], act)?; project(g, y, 4) }, &[x], eps, None, 0)?;
        push(name, OP_TOLERANCE, r);
    }

    let x = randn(Shape::new(3, 2, 2, 1, 2), &mut rng);
    let w = randn(Shape::new(5, 2, 2, 1, 2), &mut rng);
    let b = randn(Shape::vector(5), &mut rng);
    let r = grad_check_sampled(|g, v| { let y = g.linear(v[0], v[1], Some(v[2]))?; project(g, y, 5) }, &[x, w, b], eps, None, 0)?;
    push("linear", OP_TOLERANCE, r);

    let x = randn(Shape::new(2, 2, 2, 3, 2), &mut rng);
    let r = grad_check_sampled(|g, v| { let y = g.upsample_nearest3d(v[0], [2, 1, 3])?; project(g, y, 6) }, &[x.clone()], eps, None, 0)?;
    push("upsample_nearest3d", OP_TOLERANCE, r);
    let r = grad_check_sampled(|g, v| { let y = g.trilinear_upsample(v[0], [2, 2, 1])?; project(g, y, 7) }, &[x.clone()], eps, None, 0)?;
    push("trilinear_upsample", OP_TOLERANCE, r);
    let r = grad_check_sampled(|g, v| { let y = g.global_avg_pool3d(v[0])?; project(g, y, 8) }, &[x], eps, None, 0)?;
    push("global_avg_pool3d", OP_TOLERANCE, r);

    // distinct values so the pooled maximum is unique
    let mut vals: Vec<f64> = (0..64).map(|i| i as f64 * 0.05).collect();
    vals.shuffle(&mut rng);
    let x = Tensor::new(Shape::new(1, 2, 4, 2, 4), vals)?;
    let r = grad_check_sampled(|g, v| { let y = g.max_pool3d(v[0], [2, 2, 2])?; project(g, y, 9) }, &[x], eps, None, 0)?;
    push("max_pool3d", OP_TOLERANCE, r);

    let a = randn(Shape::new(2, 1, 2, 2, 2), &mut rng);
    let c = randn(Shape::new(2, 3, 2, 2, 2), &mut rng);
    let r = grad_check_sampled(
        |g, v| {
            let s = g.sub(v[0], v[0])?;
            let m = g.mul(v[0], v[0])?;
            let a = g.add(s, m)?;
            let y = g.concat_channels(&[a, v[1]])?;
            let y = g.scale(y, 0.7)?;
            project(g, y, 10)
        },
        &[a, c],
        eps,
        None,
        0,
    )?;
    push("elementwise_concat", OP_TOLERANCE, r);

    // projection discriminator, w.r.t. x, y and every parameter
    let dcfg = DiscriminatorConfig { base_channels: 2, scale: [2, 2, 1], ..Default::default() };
    let mut pd = Network::<f64>::discriminator(&dcfg)?;
    pd.init_params(seed);
    let x = randn(Shape::new(2, 1, 4, 4, 3), &mut rng);
    let y = randn(Shape::new(2, 1, 2, 2, 3), &mut rng);
    let inputs = with_params(&pd, alloc::vec![x, y]);
    let r = grad_check_sampled(
        |g, v| {
            let bound = Bound::from_vars(v[2..].to_vec());
            let f = pd.projection_disc_forward(g, &bound, v[0], v[1], NormMode::Train)?;
            project(g, f, 11)
        },
        &inputs,
        eps,
        None,
        0,
    )?;
    push("projection_disc_forward", OP_TOLERANCE, r);

    let sr = randn(Shape::new(2, 1, 3, 2, 2), &mut rng);
    let hr = randn(Shape::new(2, 1, 3, 2, 2), &mut rng);
    let r = grad_check_sampled(|g, v| pixel_mse(g, v[0], v[1]), &[sr.clone(), hr.clone()], eps, None, 0)?;
    push("pixel_mse", OP_TOLERANCE, r);
    let real = randn(Shape::new(4, 1, 1, 1, 1), &mut rng);
    let fake = randn(Shape::new(4, 1, 1, 1, 1), &mut rng);
    let r = grad_check_sampled(|g, v| adv_loss_d(g, v[0], v[1]), &[real, fake.clone()], eps, None, 0)?;
    push("adv_loss_d", OP_TOLERANCE, r);
    let r = grad_check_sampled(|g, v| adv_loss_g(g, v[0]), &[fake.clone()], eps, None, 0)?;
    push("adv_loss_g", OP_TOLERANCE, r);

    let logits = randn(Shape::new(5, 3, 1, 1, 1), &mut rng);
    let labels = [0usize, 2, 1, 2, 2];
    let cb = CbLossParams::new(0.99, alloc::vec![3, 4, 40])?;
    let r = grad_check_sampled(|g, v| class_balanced_ce(g, v[0], &labels, &cb), &[logits], eps, None, 0)?;
    push("class_balanced_ce", OP_TOLERANCE, r);

    let mut vgg = Network::<f64>::vgg3d(&VggConfig { first_channels: 1 })?;
    vgg.init_params(seed);
    let shape = Shape::new(1, 1, VGG_MIN_EXTENT, VGG_MIN_EXTENT, VGG_MIN_EXTENT);
    let hr_v = Tensor::<f64>::uniform(shape, 0.0, 1.0, &mut rng);
    let sr_v = Tensor::from_fn(shape, |i| hr_v.data()[i] + 0.1 * math::sin(i as f64 * 0.37));
    let taps = [0.2; VGG_BLOCKS];
    let r = grad_check_sampled(
        |g, v| {
            let hr = g.constant(hr_v.clone());
            perceptual_loss(g, &mut vgg, v[0], hr, &taps)
        },
        &[sr_v],
        1e-5,
        Some(48),
        seed,
    )?;
    push("perceptual_loss", OP_TOLERANCE, r);

    let weights = LossWeights { lambda_pix: 1.0, lambda_adv: 0.3, lambda_perc: 0.0, ..Default::default() };
    let r = grad_check_sampled(
        |g, v| {
            let hr = g.constant(hr.clone());
            Ok(generator_objective(g, v[0], hr, Some(v[1]), None, &weights)?.total)
        },
        &[sr, fake],
        eps,
        None,
        0,
    )?;
    push("generator_objective", OP_TOLERANCE, r);

    for (name, kind, scale) in [
        ("srresnet_isotropic", GeneratorKind::Srresnet, [2, 2, 2]),
        ("srresnet_anisotropic", GeneratorKind::Srresnet, [2, 1, 1]),
        ("rdn_isotropic", GeneratorKind::Rdn, [2, 2, 2]),
    ] {
        let cfg = GeneratorConfig {
            kind,
            base_channels: 3,
            num_blocks: 2,
            reduce_channels: 2,
            rdn_layers_per_block: 2,
            rdn_growth: 2,
            scale,
        };
        let mut net = Network::<f64>::generator(&cfg)?;
        net.init_params(seed);
        let lr = Tensor::<f64>::uniform(Shape::new(2, 1, 3, 3, 3), 0.0, 1.0, &mut rng);
        let inputs = with_params(&net, alloc::vec![lr]);
        let r = grad_check_sampled(
            |g, v| {
                let bound = Bound::from_vars(v[1..].to_vec());
                let y = net.generator_forward(g, &bound, v[0], NormMode::Train)?;
                let y = project(g, y, 12)?;
                g.scale(y, 0.01)
            },
            &inputs,
            1e-4,
            Some(24),
            seed,
        )?;
        push(name, NET_TOLERANCE, r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::full(Shape::new(1, 1, 1, 1, 3), 0.5);
        let err = grad_check(
            |g, _| Ok(g.constant(Tensor::scalar(4.0))),
            &[x],
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn eps_out_of_range_is_rejected() {
        let x = Tensor::full(Shape::new(1, 1, 1, 1, 1), 0.5);
        assert!(grad_check(|g, v| g.sum(v[0]), &[x], 1e-2).is_err());
    }

    #[test]
    fn square_sum_matches() {
        let x = Tensor::from_fn(Shape::new(1, 1, 1, 1, 4), |i| i as f64 + 0.5);
        let ok = grad_check(|g, v| { let s = g.mul(v[0], v[0])?; g.sum(s) }, &[x.clone()], 1e-5).unwrap();
        assert!(ok < 1e-8);
    }
}
