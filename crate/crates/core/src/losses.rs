//! Training objectives built from graph ops.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::math;
use crate::nn::{Network, VGG_BLOCKS};
use crate::ops::NormMode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_pix: f64,
    pub lambda_adv: f64,
    pub lambda_perc: f64,
    /// Weights of the five VGG block taps.
    pub tap_weights: [f64; VGG_BLOCKS],
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_pix: 1.0, lambda_adv: 1e-3, lambda_perc: 6e-3, tap_weights: [0.2; VGG_BLOCKS] }
    }
}

impl LossWeights {
    pub fn mse_only() -> Self {
        LossWeights { lambda_adv: 0.0, lambda_perc: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_pix, self.lambda_adv, self.lambda_perc];
        if all.iter().chain(&self.tap_weights).any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::Config("at least one loss weight must be > 0".into()));
        }
        Ok(())
    }
}

/// Class-balancing parameters: `beta` in `[0, 1)` and one count per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CbLossParams {
    pub beta: f64,
    pub counts: Vec<usize>,
}

impl CbLossParams {
    pub fn new(beta: f64, counts: Vec<usize>) -> Result<Self> {
        let p = CbLossParams { beta, counts };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config("class-balance beta must lie in [0, 1)".into()));
        }
        if self.counts.is_empty() || self.counts.contains(&0) {
            return Err(Error::Config("every class needs a count >= 1".into()));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    /// `(1 - beta) / (1 - beta^n)` for one class count.
    pub fn weight_for(beta: f64, n: usize) -> f64 {
        let one_minus = 1.0 - beta;
        // 1 - beta^n without cancellation near beta = 1
        let denom = -math::exp_m1(n as f64 * math::ln_1p(-one_minus));
        one_minus / denom
    }

    pub fn weights(&self) -> Vec<f64> {
        self.counts.iter().map(|n| Self::weight_for(self.beta, *n)).collect()
    }
}

fn check_same(g: &Graph<impl Scalar>, a: Var, b: Var, op: &'static str) -> Result<()> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    for (i, axis) in ["N", "C", "D", "H", "W"].into_iter().enumerate() {
        if sa.0[i] != sb.0[i] {
            return Err(Error::ShapeMismatch { op, axis, expected: sa.0[i], found: sb.0[i] });
        }
    }
    Ok(())
}

/// Mean squared difference over all elements.
pub fn pixel_mse<T: Scalar>(g: &mut Graph<T>, sr: Var, hr: Var) -> Result<Var> {
    check_same(g, sr, hr, "pixel_mse")?;
    let d = g.sub(sr, hr)?;
    let sq = g.mul(d, d)?;
    g.mean(sq)
}

/// `mean(-log sigmoid(real)) + mean(-log(1 - sigmoid(fake)))`.
pub fn adv_loss_d<T: Scalar>(g: &mut Graph<T>, real: Var, fake: Var) -> Result<Var> {
    let neg = g.scale(real, -1.0)?;
    let a = g.softplus(neg)?;
    let a = g.mean(a)?;
    let b = g.softplus(fake)?;
    let b = g.mean(b)?;
    g.add(a, b)
}

/// Non-saturating generator loss `mean(-log sigmoid(fake))`.
pub fn adv_loss_g<T: Scalar>(g: &mut Graph<T>, fake: Var) -> Result<Var> {
    let neg = g.scale(fake, -1.0)?;
    let s = g.softplus(neg)?;
    g.mean(s)
}

/// `sum_t w_t * MSE(tap_t(sr), tap_t(hr))` through a frozen VGG in eval
/// mode. Taps with weight 0 are skipped.
pub fn perceptual_loss<T: Scalar>(
    g: &mut Graph<T>,
    vgg: &mut Network<T>,
    sr: Var,
    hr: Var,
    tap_weights: &[f64; VGG_BLOCKS],
) -> Result<Var> {
    check_same(g, sr, hr, "perceptual_loss")?;
    if tap_weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Config("tap weights must be >= 0".into()));
    }
    if tap_weights.iter().all(|w| *w == 0.0) {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    let bound = vgg.bind(g, false);
    let fs = vgg.vgg_features(g, &bound, sr, NormMode::Eval)?;
    let fh = vgg.vgg_features(g, &bound, hr, NormMode::Eval)?;
    let mut total: Option<Var> = None;
    for ((w, (_, a)), (_, b)) in tap_weights.iter().zip(fs).zip(fh) {
        if *w == 0.0 {
            continue;
        }
        let m = pixel_mse(g, a, b)?;
        let m = g.scale(m, *w)?;
        total = Some(match total {
            Some(t) => g.add(t, m)?,
            None => m,
        });
    }
    Ok(total.expect("at least one tap weight is positive"))
}

/// Mean over the batch of the class-balanced softmax cross-entropy.
pub fn class_balanced_ce<T: Scalar>(g: &mut Graph<T>, logits: Var, labels: &[usize], params: &CbLossParams) -> Result<Var> {
    params.validate()?;
    let classes = g.shape(logits).per_sample();
    if classes != params.num_classes() {
        return Err(Error::ShapeMismatch { op: "class_balanced_ce", axis: "C", expected: params.num_classes(), found: classes });
    }
    if let Some(&label) = labels.iter().find(|l| **l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let w = params.weights();
    let per_sample: Vec<f64> = labels.iter().map(|l| w[*l]).collect();
    g.softmax_cross_entropy(logits, labels, &per_sample)
}

/// Graph handles of the generator objective and its weighted parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveTerms {
    pub total: Var,
    pub pixel: Option<Var>,
    pub adversarial: Option<Var>,
    pub perceptual: Option<Var>,
}

/// Unweighted term values of one objective evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TermValues {
    pub total: f64,
    pub pixel: Option<f64>,
    pub adversarial: Option<f64>,
    pub perceptual: Option<f64>,
}

impl ObjectiveTerms {
    pub fn values<T: Scalar>(&self, g: &Graph<T>) -> TermValues {
        let get = |v: Option<Var>| v.map(|v| g.item(v).f64());
        TermValues { total: g.item(self.total).f64(), pixel: get(self.pixel), adversarial: get(self.adversarial), perceptual: get(self.perceptual) }
    }
}

/// `lambda_pix * MSE + lambda_adv * L_G + lambda_perc * PL`. Terms with a
/// zero weight are not built, so their inputs may be absent.
pub fn generator_objective<T: Scalar>(
    g: &mut Graph<T>,
    sr: Var,
    hr: Var,
    fake_logits: Option<Var>,
    vgg: Option<&mut Network<T>>,
    weights: &LossWeights,
) -> Result<ObjectiveTerms> {
    weights.validate()?;
    let pixel = if weights.lambda_pix > 0.0 { Some(pixel_mse(g, sr, hr)?) } else { None };
    let adversarial = if weights.lambda_adv > 0.0 {
        let f = fake_logits.ok_or(Error::Config("lambda_adv > 0 needs discriminator logits".into()))?;
        Some(adv_loss_g(g, f)?)
    } else {
        None
    };
    let perceptual = if weights.lambda_perc > 0.0 {
        let vgg = vgg.ok_or(Error::Config("lambda_perc > 0 needs a VGG".into()))?;
        Some(perceptual_loss(g, vgg, sr, hr, &weights.tap_weights)?)
    } else {
        None
    };
    let mut total: Option<Var> = None;
    for (term, lambda) in [(pixel, weights.lambda_pix), (adversarial, weights.lambda_adv), (perceptual, weights.lambda_perc)] {
        let Some(term) = term else { continue };
        let t = if lambda == 1.0 { term } else { g.scale(term, lambda)? };
        total = Some(match total {
            Some(acc) => g.add(acc, t)?,
            None => t,
        });
    }
    Ok(ObjectiveTerms { total: total.expect("validated weights"), pixel, adversarial, perceptual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn symmetric_point_of_d_loss() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::zeros(Shape::new(4, 1, 1, 1, 1)));
        let d = adv_loss_d(&mut g, z, z).unwrap();
        let gl = adv_loss_g(&mut g, z).unwrap();
        assert!((g.item(d) - 2.0 * core::f64::consts::LN_2).abs() < 1e-12);
        assert!((g.item(gl) - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let mut g = Graph::<f32>::new();
        let real = g.constant(Tensor::from_fn(Shape::new(2, 1, 1, 1, 1), |i| if i == 0 { 100.0 } else { -100.0 }));
        let fake = g.constant(Tensor::from_fn(Shape::new(2, 1, 1, 1, 1), |i| if i == 0 { -100.0 } else { 100.0 }));
        let d = adv_loss_d(&mut g, real, fake).unwrap();
        assert!(g.item(d).is_finite());
        let good = g.constant(Tensor::full(Shape::new(1, 1, 1, 1, 1), 50.0));
        let bad = g.constant(Tensor::full(Shape::new(1, 1, 1, 1, 1), -50.0));
        let d = adv_loss_d(&mut g, good, bad).unwrap();
        assert!(g.item(d) < 1e-20);
    }

    #[test]
    fn constant_difference_mse() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::full(Shape::new(1, 1, 2, 2, 2), 0.3));
        let b = g.constant(Tensor::full(Shape::new(1, 1, 2, 2, 2), 0.2));
        let m = pixel_mse(&mut g, a, b).unwrap();
        assert!((g.item(m) - 0.01).abs() < 1e-15);
        let c = g.constant(Tensor::zeros(Shape::new(1, 1, 2, 2, 3)));
        assert!(matches!(pixel_mse(&mut g, a, c), Err(Error::ShapeMismatch { axis: "W", .. })));
    }

    #[test]
    fn beta_zero_weights_are_one() {
        let p = CbLossParams::new(0.0, alloc::vec![1, 5, 300]).unwrap();
        assert_eq!(p.weights(), alloc::vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn weights_decrease_with_count() {
        let p = CbLossParams::new(0.999, alloc::vec![23, 23, 250]).unwrap();
        let w = p.weights();
        assert_eq!(w[0], w[1]);
        assert!(w[2] < w[0]);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(CbLossParams::new(1.0, alloc::vec![1]).is_err());
        assert!(CbLossParams::new(0.5, alloc::vec![1, 0]).is_err());
    }

    #[test]
    fn objective_with_only_pixel_term() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::full(Shape::new(1, 1, 2, 2, 2), 0.5));
        let b = g.constant(Tensor::zeros(Shape::new(1, 1, 2, 2, 2)));
        let o = generator_objective(&mut g, a, b, None, None, &LossWeights::mse_only()).unwrap();
        assert_eq!(o.total, o.pixel.unwrap());
        assert!(o.adversarial.is_none() && o.perceptual.is_none());
        let zero = LossWeights { lambda_pix: 0.0, ..LossWeights::mse_only() };
        assert!(generator_objective(&mut g, a, b, None, None, &zero).is_err());
    }
}
