use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxsr_core::nn::{
    ConvSpec, DiscriminatorConfig, DiscriminatorKind, GeneratorConfig, GeneratorKind, Network, VggConfig,
};
use voxsr_core::ops::NormMode;
use voxsr_core::{Error, Graph, Shape, Tensor};

fn small_generator(kind: GeneratorKind, scale: [usize; 3]) -> GeneratorConfig {
    GeneratorConfig { kind, base_channels: 4, num_blocks: 1, reduce_channels: 3, rdn_layers_per_block: 2, rdn_growth: 2, scale }
}

fn run_generator(net: &mut Network<f64>, x: Tensor<f64>, mode: NormMode) -> Result<Tensor<f64>, Error> {
    let mut g = Graph::new();
    let b = net.bind(&mut g, false);
    let xv = g.constant(x);
    let y = net.generator_forward(&mut g, &b, xv, mode)?;
    Ok(g.value(y).clone())
}

#[test]
fn generator_output_is_input_times_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for scale in [[2, 2, 2], [2, 1, 1]] {
        for kind in [GeneratorKind::Srresnet, GeneratorKind::Rdn] {
            let mut net = Network::<f64>::generator(&small_generator(kind, scale)).unwrap();
            net.init_params(1);
            for _ in 0..20 {
                let n = rng.random_range(1..=2);
                let ext: [usize; 3] = [rng.random_range(3..=7), rng.random_range(3..=7), rng.random_range(3..=7)];
                let x = Tensor::randn(Shape::new(n, 1, ext[0], ext[1], ext[2]), 1.0, &mut rng);
                let y = run_generator(&mut net, x, NormMode::Eval).unwrap();
                assert_eq!(y.shape(), Shape::new(n, 1, ext[0] * scale[0], ext[1] * scale[1], ext[2] * scale[2]));
            }
        }
    }
}

#[test]
fn listed_generator_shapes() {
    let mut net = Network::<f32>::generator(&GeneratorConfig { num_blocks: 1, ..GeneratorConfig::default() }).unwrap();
    net.init_params(0);
    let mut g = Graph::new();
    let b = net.bind(&mut g, false);
    let x = g.constant(Tensor::zeros(Shape::new(1, 1, 8, 8, 8)));
    let y = net.generator_forward(&mut g, &b, x, NormMode::Eval).unwrap();
    assert_eq!(g.shape(y), Shape::new(1, 1, 16, 16, 16));

    let mut net = Network::<f32>::generator(&GeneratorConfig { num_blocks: 1, scale: [2, 1, 1], ..GeneratorConfig::default() }).unwrap();
    net.init_params(0);
    let mut g = Graph::new();
    let b = net.bind(&mut g, false);
    let x = g.constant(Tensor::zeros(Shape::new(1, 1, 8, 16, 16)));
    let y = net.generator_forward(&mut g, &b, x, NormMode::Eval).unwrap();
    assert_eq!(g.shape(y), Shape::new(1, 1, 16, 16, 16));
}

#[test]
fn generator_rejects_bad_scale_and_tiny_inputs() {
    assert!(Network::<f64>::generator(&GeneratorConfig { scale: [3, 1, 1], ..GeneratorConfig::default() }).is_err());
    assert!(Network::<f64>::generator(&GeneratorConfig { scale: [0, 1, 1], ..GeneratorConfig::default() }).is_err());
    let mut net = Network::<f64>::generator(&small_generator(GeneratorKind::Srresnet, [4, 2, 1])).unwrap();
    let y = run_generator(&mut net, Tensor::zeros(Shape::new(1, 1, 3, 4, 5)), NormMode::Eval).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 1, 12, 8, 5));
    let err = run_generator(&mut net, Tensor::zeros(Shape::new(1, 1, 2, 4, 4)), NormMode::Eval).unwrap_err();
    assert!(matches!(err, Error::ExtentTooSmall { .. }));
    assert!(run_generator(&mut net, Tensor::zeros(Shape::new(1, 2, 4, 4, 4)), NormMode::Eval).is_err());
}

#[test]
fn eval_forward_is_deterministic() {
    let mut net = Network::<f32>::generator(&small_generator(GeneratorKind::Rdn, [2, 2, 2])).unwrap();
    net.init_params(5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::<f32>::randn(Shape::new(1, 1, 5, 5, 5), 1.0, &mut rng);
    let run = |net: &mut Network<f32>| {
        let mut g = Graph::new();
        let b = net.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = net.generator_forward(&mut g, &b, xv, NormMode::Eval).unwrap();
        g.value(y).data().to_vec()
    };
    assert_eq!(run(&mut net), run(&mut net));
}

fn conv(cin: usize, cout: usize, k: usize) -> usize {
    k * k * k * cin * cout + cout
}

fn srresnet_count(c: &GeneratorConfig) -> usize {
    let (b, r) = (c.base_channels, c.reduce_channels);
    let block = 2 * conv(b, b, 3) + 2 * 2 * b;
    conv(1, b, 3) + c.num_blocks * block + conv(b, b, 1) + conv(b, r, 3) + c.upsample_stages() * conv(r, r, 3) + conv(r, 1, 3)
}

fn rdn_count(c: &GeneratorConfig) -> usize {
    let (b, r, l, gr) = (c.base_channels, c.reduce_channels, c.rdn_layers_per_block, c.rdn_growth);
    let dense: usize = (0..l).map(|j| conv(b + j * gr, gr, 3)).sum();
    let block = dense + conv(b + l * gr, b, 1);
    conv(1, b, 3) + c.num_blocks * block + conv(b, b, 1) + conv(b, r, 3) + c.upsample_stages() * conv(r, r, 3) + conv(r, 1, 3)
}

#[test]
fn parameter_counts_match_closed_forms() {
    let d = GeneratorConfig::default();
    assert_eq!(srresnet_count(&d), 1_862_369);
    assert_eq!(Network::<f32>::generator(&d).unwrap().param_count(), 1_862_369);
    let rdn = GeneratorConfig { kind: GeneratorKind::Rdn, ..d.clone() };
    assert_eq!(rdn_count(&rdn), 1_372_897);
    assert_eq!(Network::<f32>::generator(&rdn).unwrap().param_count(), 1_372_897);
    for scale in [[2, 1, 1], [4, 4, 2]] {
        let s = GeneratorConfig { scale, ..small_generator(GeneratorKind::Srresnet, scale) };
        assert_eq!(Network::<f32>::generator(&s).unwrap().param_count(), srresnet_count(&s));
        let r = GeneratorConfig { kind: GeneratorKind::Rdn, ..s };
        assert_eq!(Network::<f32>::generator(&r).unwrap().param_count(), rdn_count(&r));
    }

    let ch = [64, 128, 256, 512, 1024];
    let mut vgg = 0;
    let mut cin = 1;
    for c in ch {
        vgg += conv(cin, c, 3) + 2 * c;
        cin = c;
    }
    vgg += 1024 * 512 + 512 + 512 * 128 + 128 + 128 * 3 + 3;
    assert_eq!(vgg, 19_399_171);
    let net = Network::<f32>::vgg3d(&VggConfig::default()).unwrap();
    assert_eq!(net.param_count(), vgg);

    assert_eq!(Network::<f32>::empty().param_count(), 0);
    assert_eq!(Network::<f32>::sequential(vec![ConvSpec::new("c", 1, 1, 3).into_layer()]).unwrap().param_count(), 28);
}

#[test]
fn init_is_deterministic_per_seed() {
    let cfg = small_generator(GeneratorKind::Rdn, [2, 2, 2]);
    let mut a = Network::<f32>::generator(&cfg).unwrap();
    let mut b = Network::<f32>::generator(&cfg).unwrap();
    a.init_params(9);
    b.init_params(9);
    assert_eq!(a, b);
    b.init_params(10);
    assert_ne!(a.params(), b.params());
    for e in a.params().entries() {
        if e.name.ends_with(".bias") {
            assert!(e.tensor.data().iter().all(|v| *v == 0.0));
        }
    }
}

#[test]
fn fresh_generator_stays_close_to_the_trilinear_skip() {
    for kind in [GeneratorKind::Srresnet, GeneratorKind::Rdn] {
        for seed in 0..3 {
            let mut net = Network::<f32>::generator(&GeneratorConfig { kind, ..GeneratorConfig::default() }).unwrap();
            net.init_params(seed);
            let mut g = Graph::new();
            let b = net.bind(&mut g, false);
            let x = g.constant(Tensor::full(Shape::new(1, 1, 6, 6, 6), 0.5));
            let y = net.generator_forward(&mut g, &b, x, NormMode::Eval).unwrap();
            let drift = g.value(y).data().iter().map(|v| (v - 0.5).abs()).fold(0.0f32, f32::max);
            assert!(drift <= 0.5, "{kind:?} seed {seed}: {drift}");
        }
    }
}

#[test]
fn generator_output_is_unbounded() {
    let mut net = Network::<f32>::generator(&small_generator(GeneratorKind::Srresnet, [2, 2, 2])).unwrap();
    net.init_params(2);
    let mut g = Graph::new();
    let b = net.bind(&mut g, false);
    let x = g.constant(Tensor::full(Shape::new(1, 1, 4, 4, 4), -40.0));
    let y = net.generator_forward(&mut g, &b, x, NormMode::Eval).unwrap();
    assert!(g.value(y).data().iter().any(|v| v.abs() > 1.0));
}

fn pd_config(scale: [usize; 3], base: usize) -> DiscriminatorConfig {
    DiscriminatorConfig { kind: DiscriminatorKind::Pd, base_channels: base, scale, ..DiscriminatorConfig::default() }
}

fn randomize(net: &mut Network<f64>, rng: &mut ChaCha8Rng) {
    let names: Vec<(String, Shape)> = net.params().entries().iter().map(|e| (e.name.clone(), e.tensor.shape())).collect();
    for (name, shape) in names {
        net.params_mut().set(&name, Tensor::randn(shape, 0.4, rng)).unwrap();
    }
}

/// `sum_i y_i * (sum_c V_c phi_c,i) + (W . mean_i phi_i + b)`, per sample.
fn eq2_oracle(phi: &Tensor<f64>, y: &Tensor<f64>, v: &[f64], w: &[f64], bias: f64) -> (Vec<f64>, Vec<f64>) {
    let [n, c, d, h, wd] = phi.shape().0;
    let vox = d * h * wd;
    let mut f = Vec::new();
    let mut proj = Vec::new();
    for s in 0..n {
        let mut inner = 0.0;
        for i in 0..vox {
            let fi: f64 = (0..c).map(|ch| v[ch] * phi.data()[(s * c + ch) * vox + i]).sum();
            proj.push(fi);
            inner += y.data()[s * vox + i] * fi;
        }
        let psi: f64 = bias + (0..c).map(|ch| w[ch] * phi.data()[(s * c + ch) * vox..(s * c + ch + 1) * vox].iter().sum::<f64>() / vox as f64).sum::<f64>();
        f.push(inner + psi);
    }
    (f, proj)
}

struct PdRun {
    f: Vec<f64>,
    dfdy: Vec<f64>,
    phi: Tensor<f64>,
}

fn run_pd(net: &mut Network<f64>, x: &Tensor<f64>, y: &Tensor<f64>) -> PdRun {
    let mut g = Graph::new();
    let b = net.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let yv = g.variable(y.clone());
    let f = net.projection_disc_forward(&mut g, &b, xv, yv, NormMode::Eval).unwrap();
    let total = g.sum(f).unwrap();
    g.backward(total).unwrap();
    let out = PdRun { f: g.value(f).data().to_vec(), dfdy: g.grad(yv).unwrap().to_vec(), phi: Tensor::zeros(Shape::new(1, 1, 1, 1, 1)) };
    let mut g2 = Graph::new();
    let b2 = net.bind(&mut g2, false);
    let xv = g2.constant(x.clone());
    let phi = net.pd_features(&mut g2, &b2, xv, NormMode::Eval).unwrap();
    PdRun { phi: g2.value(phi).clone(), ..out }
}

#[test]
fn projection_discriminator_matches_brute_force_sum() {
    let scales = [[2, 2, 2], [2, 1, 1], [1, 1, 1], [4, 2, 2], [1, 2, 4]];
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = scales[seed as usize % scales.len()];
        let lr: [usize; 3] = scale.map(|s| rng.random_range(1..=8 / s));
        let n = rng.random_range(1..=2);
        let mut net = Network::<f64>::discriminator(&pd_config(scale, rng.random_range(1..=3))).unwrap();
        randomize(&mut net, &mut rng);
        let x = Tensor::randn(Shape::new(n, 1, lr[0] * scale[0], lr[1] * scale[1], lr[2] * scale[2]), 1.0, &mut rng);
        let y = Tensor::randn(Shape::new(n, 1, lr[0], lr[1], lr[2]), 1.0, &mut rng);
        let run = run_pd(&mut net, &x, &y);
        assert_eq!(run.phi.shape().spatial(), lr, "seed {seed}");
        let p = net.params();
        let (want, proj) = eq2_oracle(&run.phi, &y, p.get("v.weight").unwrap().data(), p.get("psi.weight").unwrap().data(), p.get("psi.bias").unwrap().data()[0]);
        for (a, b) in run.f.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "seed {seed}: {a} vs {b}");
        }
        for (a, b) in run.dfdy.iter().zip(&proj) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn zero_conditioning_leaves_only_psi() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut net = Network::<f64>::discriminator(&pd_config([2, 2, 2], 2)).unwrap();
    randomize(&mut net, &mut rng);
    let x = Tensor::randn(Shape::new(2, 1, 8, 8, 8), 1.0, &mut rng);
    let run = run_pd(&mut net, &x, &Tensor::zeros(Shape::new(2, 1, 4, 4, 4)));
    let mut g = Graph::new();
    let b = net.bind(&mut g, false);
    let xv = g.constant(x);
    let psi = net.forward(&mut g, &b, xv, NormMode::Eval).unwrap().out;
    assert_eq!(run.f, g.value(psi).data());
}

#[test]
fn single_voxel_grid_is_one_product_plus_psi() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut net = Network::<f64>::discriminator(&pd_config([2, 2, 2], 3)).unwrap();
    randomize(&mut net, &mut rng);
    let x = Tensor::randn(Shape::new(1, 1, 2, 2, 2), 1.0, &mut rng);
    let y = Tensor::scalar(0.7);
    let run = run_pd(&mut net, &x, &y);
    let phi = run.phi.data();
    let p = net.params();
    let v = p.get("v.weight").unwrap().data();
    let w = p.get("psi.weight").unwrap().data();
    let f0: f64 = phi.iter().zip(v).map(|(a, b)| a * b).sum();
    let psi: f64 = p.get("psi.bias").unwrap().data()[0] + phi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    assert!((run.f[0] - (0.7 * f0 + psi)).abs() < 1e-12);
    assert!((run.dfdy[0] - f0).abs() < 1e-12);
}

#[test]
fn projection_discriminator_rejects_misaligned_grids() {
    let mut net = Network::<f64>::discriminator(&pd_config([2, 1, 1], 2)).unwrap();
    for (xs, ys) in [([8, 8, 8], [4, 4, 4]), ([8, 8, 8], [4, 8, 7]), ([6, 4, 4], [4, 4, 4])] {
        let mut g = Graph::new();
        let b = net.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(Shape::new(1, 1, xs[0], xs[1], xs[2])));
        let y = g.constant(Tensor::zeros(Shape::new(1, 1, ys[0], ys[1], ys[2])));
        let err = net.projection_disc_forward(&mut g, &b, x, y, NormMode::Eval).unwrap_err();
        assert!(matches!(err, Error::GridMismatch { .. }), "{err}");
    }
    let mut g = Graph::new();
    let b = net.bind(&mut g, false);
    let x = g.constant(Tensor::zeros(Shape::new(2, 1, 8, 8, 8)));
    let y = g.constant(Tensor::zeros(Shape::new(1, 1, 4, 8, 8)));
    assert!(net.projection_disc_forward(&mut g, &b, x, y, NormMode::Eval).is_err());
}

#[test]
fn discriminator_stage_arithmetic() {
    let pd = pd_config([2, 2, 2], 32);
    assert_eq!(pd.stage_strides(), vec![[2, 2, 2]]);
    assert_eq!(pd_config([2, 1, 1], 32).stage_strides(), vec![[2, 1, 1]]);
    assert_eq!(pd_config([4, 2, 1], 32).stage_strides(), vec![[2, 2, 1], [2, 1, 1]]);
    let sd = DiscriminatorConfig { kind: DiscriminatorKind::Sd, ..DiscriminatorConfig::default() };
    assert_eq!(sd.stage_strides(), vec![[2, 2, 2], [2, 2, 2]]);
    assert!(Network::<f32>::discriminator(&DiscriminatorConfig { spectral_norm: true, ..sd.clone() }).is_err());

    let mut net = Network::<f64>::discriminator(&DiscriminatorConfig { base_channels: 2, ..sd }).unwrap();
    net.init_params(1);
    let mut g = Graph::new();
    let b = net.bind(&mut g, false);
    let x = g.constant(Tensor::zeros(Shape::new(3, 1, 16, 16, 16)));
    let logits = net.sd_forward(&mut g, &b, x, NormMode::Eval).unwrap();
    assert_eq!(g.shape(logits), Shape::new(3, 1, 1, 1, 1));
    let bad = g.constant(Tensor::zeros(Shape::new(1, 1, 8, 16, 16)));
    assert!(net.sd_forward(&mut g, &b, bad, NormMode::Eval).is_err());
}

#[test]
fn vgg_taps_and_logits() {
    let mut net = Network::<f32>::vgg3d(&VggConfig { first_channels: 2 }).unwrap();
    net.init_params(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::<f32>::randn(Shape::new(2, 1, 32, 32, 32), 1.0, &mut rng);
    let run = |net: &mut Network<f32>| {
        let mut g = Graph::new();
        let b = net.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = net.vgg_forward(&mut g, &b, xv, NormMode::Eval).unwrap();
        let grids: Vec<(String, Shape)> = out.taps.iter().map(|(n, v)| (n.clone(), g.shape(*v))).collect();
        (g.value(out.out).clone(), grids)
    };
    let (logits, taps) = run(&mut net);
    assert_eq!(logits.shape(), Shape::new(2, 3, 1, 1, 1));
    let names: Vec<&str> = taps.iter().map(|t| t.0.as_str()).collect();
    assert_eq!(names, VggConfig::tap_names());
    for ((_, s), (e, c)) in taps.iter().zip([32, 16, 8, 4, 2].into_iter().zip([2, 4, 8, 16, 32])) {
        assert_eq!(*s, Shape::new(2, c, e, e, e));
    }
    assert_eq!(run(&mut net).0, logits);
    assert_eq!(VggConfig::default().channels(), [64, 128, 256, 512, 1024]);

    let mut g = Graph::new();
    let b = net.bind(&mut g, false);
    let small = g.constant(Tensor::zeros(Shape::new(1, 1, 32, 31, 32)));
    assert!(matches!(net.vgg_forward(&mut g, &b, small, NormMode::Eval), Err(Error::ExtentTooSmall { .. })));
}
