use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use voxsr_core::degradation::Task;
use voxsr_core::metrics::{SsimParams, PSNR_CAP_DB};
use voxsr_core::nn::{ConvSpec, DiscriminatorConfig, DiscriminatorKind, GeneratorConfig, GeneratorKind, Network, VggConfig};
use voxsr_core::ops::NormMode;
use voxsr_core::optim::{Adam, AdamConfig, StepOutcome};
use voxsr_core::train::{
    class_corpus, evaluate_generator, evaluate_with, phantom_pairs, phantom_splits, pretrain_vgg, run_ablation, AblationConfig,
    CellSpec, ClassCorpusConfig, GanTrainer, Pair, PairCorpusConfig, RowStatus, Split, TrainConfig, VggTrainConfig,
};
use voxsr_core::{Error, Graph, Shape, Tensor};

#[test]
fn adam_matches_scalar_recurrence() {
    let mut net = Network::<f64>::sequential(vec![ConvSpec::new("c", 1, 1, 1).into_layer()]).unwrap();
    let cfg = AdamConfig { lr: 0.05, beta1: 0.8, beta2: 0.99, eps: 1e-8 };
    let mut adam = Adam::new(cfg, net.params());
    let mut w = net.params().tensor(0).data()[0];
    let (mut m, mut v) = (0.0f64, 0.0f64);
    for t in 1..=10 {
        let gw = (t as f64 * 0.7).sin() * 3.0;
        let gb = 0.1 * t as f64;
        assert_eq!(adam.step(net.params_mut(), &[&[gw], &[gb]]).unwrap(), StepOutcome::Applied);
        m = 0.8 * m + 0.2 * gw;
        v = 0.99 * v + 0.01 * gw * gw;
        let mh = m / (1.0 - 0.8f64.powi(t));
        let vh = v / (1.0 - 0.99f64.powi(t));
        w -= 0.05 * mh / (vh.sqrt() + 1e-8);
        assert!((net.params().tensor(0).data()[0] - w).abs() < 1e-9, "step {t}");
    }
    assert_eq!(adam.steps(), 10);
    let before = net.params().clone();
    assert_eq!(adam.step(net.params_mut(), &[&[f64::INFINITY], &[0.0]]).unwrap(), StepOutcome::SkippedNonFinite);
    assert_eq!(net.params(), &before);
    assert_eq!(adam.steps(), 10);
    assert!(adam.step(net.params_mut(), &[&[0.0]]).is_err());
}

fn tiny_generator(scale: [usize; 3]) -> GeneratorConfig {
    GeneratorConfig { kind: GeneratorKind::Srresnet, base_channels: 4, num_blocks: 1, reduce_channels: 4, scale, ..Default::default() }
}

fn tiny_config(task: Task, disc: Option<DiscriminatorKind>) -> TrainConfig {
    TrainConfig {
        generator: tiny_generator(task.factors()),
        discriminator: disc.map(|kind| DiscriminatorConfig {
            kind,
            base_channels: 2,
            scale: task.factors(),
            hr_extent: [8; 3],
            spectral_norm: false,
        }),
        lr: 1e-3,
        batch_size: 2,
        steps: 4,
        seed: 5,
        task,
        ..Default::default()
    }
}

fn tiny_pairs(task: Task, n: usize) -> Vec<Pair> {
    let cfg = PairCorpusConfig { hr_extent: [8; 3], train: n, val: 0, test: 0, ..Default::default() };
    phantom_pairs(&cfg, &tiny_config(task, None).degradation_spec(), Split::Train).unwrap()
}

#[test]
fn training_is_deterministic() {
    let pairs = tiny_pairs(Task::Isotropic, 4);
    let run = || {
        let mut t = GanTrainer::new(tiny_config(Task::Isotropic, Some(DiscriminatorKind::Pd)), None).unwrap();
        let recs: Vec<_> = (0..3).map(|_| t.train_step(&pairs).unwrap()).collect();
        (recs, t.snapshot())
    };
    assert_eq!(run(), run());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    for disc in [None, Some(DiscriminatorKind::Pd), Some(DiscriminatorKind::Sd)] {
        let pairs = tiny_pairs(Task::Isotropic, 5);
        let cfg = tiny_config(Task::Isotropic, disc);
        let mut full = GanTrainer::new(cfg.clone(), None).unwrap();
        let full_recs: Vec<_> = (0..4).map(|_| full.train_step(&pairs).unwrap()).collect();

        let mut first = GanTrainer::new(cfg, None).unwrap();
        let mut recs: Vec<_> = (0..2).map(|_| first.train_step(&pairs).unwrap()).collect();
        let snap = first.snapshot();
        drop(first);
        let mut resumed = GanTrainer::from_snapshot(&snap, None).unwrap();
        assert_eq!(resumed.step(), 2);
        recs.extend((0..2).map(|_| resumed.train_step(&pairs).unwrap()));
        assert_eq!(recs, full_recs, "{disc:?}");
        assert_eq!(resumed.snapshot(), full.snapshot(), "{disc:?}");
    }
}

#[test]
fn snapshot_must_be_complete() {
    let pairs = tiny_pairs(Task::Isotropic, 2);
    let mut t = GanTrainer::new(tiny_config(Task::Isotropic, Some(DiscriminatorKind::Pd)), None).unwrap();
    t.train_step(&pairs).unwrap();
    let mut snap = t.snapshot();
    snap.tensors.pop();
    assert!(GanTrainer::from_snapshot(&snap, None).is_err());
    let mut snap = t.snapshot();
    let extra = snap.tensors[0].clone();
    snap.tensors.push((format!("{}x", extra.0), extra.1));
    assert!(GanTrainer::from_snapshot(&snap, None).is_err());
}

#[test]
fn logged_total_is_the_weighted_sum() {
    let pairs = tiny_pairs(Task::Anisotropic, 4);
    let cfg = tiny_config(Task::Anisotropic, Some(DiscriminatorKind::Pd));
    let w = cfg.effective_weights();
    let mut t = GanTrainer::new(cfg, None).unwrap();
    for _ in 0..3 {
        let r = t.train_step(&pairs).unwrap();
        let (pix, adv) = (r.g_pixel.unwrap(), r.g_adv.unwrap());
        assert!(r.g_perc.is_none());
        assert!((r.g_total - (w.lambda_pix * pix + w.lambda_adv * adv)).abs() < 1e-6);
        assert!(r.d_loss.unwrap().is_finite());
        assert_eq!(r.d_skipped, Some(false));
    }
}

#[test]
fn mse_only_run_has_no_discriminator_entries() {
    let pairs = tiny_pairs(Task::Isotropic, 3);
    let mut t = GanTrainer::new(tiny_config(Task::Isotropic, None), None).unwrap();
    let r = t.train_step(&pairs).unwrap();
    assert!(r.d_loss.is_none() && r.d_skipped.is_none() && r.g_adv.is_none());
    assert_eq!(r.g_total, r.g_pixel.unwrap());
    assert!(t.discriminator().is_none());
}

#[test]
fn config_mismatches_are_rejected() {
    let mut cfg = tiny_config(Task::Anisotropic, None);
    cfg.generator.scale = [2, 2, 2];
    assert!(matches!(GanTrainer::new(cfg, None), Err(Error::Config(_))));
    let mut cfg = tiny_config(Task::Isotropic, Some(DiscriminatorKind::Pd));
    cfg.discriminator.as_mut().unwrap().scale = [2, 1, 1];
    assert!(matches!(GanTrainer::new(cfg, None), Err(Error::Config(_))));
    let mut cfg = tiny_config(Task::Isotropic, None);
    cfg.use_perceptual = true;
    assert!(matches!(GanTrainer::new(cfg, None), Err(Error::Config(_))));

    let mut t = GanTrainer::new(tiny_config(Task::Isotropic, None), None).unwrap();
    assert!(t.train_step(&tiny_pairs(Task::Anisotropic, 2)).is_err());
    assert!(t.train_step(&[]).is_err());
}

fn logits(net: &mut Network<f32>, x: &Tensor<f32>, lr: &Tensor<f32>) -> Vec<f32> {
    let mut g = Graph::new();
    let b = net.bind(&mut g, false);
    let (xv, lv) = (g.constant(x.clone()), g.constant(lr.clone()));
    let out = net.discriminate(&mut g, &b, xv, lv, NormMode::Eval).unwrap();
    g.value(out).data().to_vec()
}

#[test]
fn only_the_projection_discriminator_reads_the_conditioning() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let hr = Tensor::<f32>::randn(Shape::new(2, 1, 8, 8, 8), 1.0, &mut rng);
    let lr = Tensor::<f32>::randn(Shape::new(2, 1, 4, 4, 4), 1.0, &mut rng);
    let half = lr.data().len() / 2;
    let swapped = Tensor::new(lr.shape(), [&lr.data()[half..], &lr.data()[..half]].concat()).unwrap();

    let cfg = tiny_config(Task::Isotropic, Some(DiscriminatorKind::Pd)).discriminator.unwrap();
    let mut pd = Network::<f32>::discriminator(&cfg).unwrap();
    pd.init_params(9);
    assert_ne!(logits(&mut pd, &hr, &lr), logits(&mut pd, &hr, &swapped));

    let cfg = tiny_config(Task::Isotropic, Some(DiscriminatorKind::Sd)).discriminator.unwrap();
    let mut sd = Network::<f32>::discriminator(&cfg).unwrap();
    sd.init_params(9);
    let a = logits(&mut sd, &hr, &lr);
    assert_eq!(a, logits(&mut sd, &hr, &swapped));
    assert_eq!(a, logits(&mut sd, &hr, &Tensor::zeros(Shape::new(2, 1, 1, 1, 1))));
}

#[test]
fn evaluation_of_identity_and_repeatability() {
    let cfg = PairCorpusConfig { hr_extent: [16; 3], train: 0, val: 0, test: 2, ..Default::default() };
    let spec = tiny_config(Task::Isotropic, None).degradation_spec();
    let test = phantom_splits(&cfg, &spec).unwrap().test;
    let same: Vec<Pair> = test.iter().map(|p| Pair { lr: p.hr.clone(), hr: p.hr.clone() }).collect();
    let ssim = SsimParams::default();
    let row = evaluate_with("identity", Task::Isotropic, &same, &ssim, |v| Ok(v.clone())).unwrap();
    assert_eq!(row.ssim, 1.0);
    assert_eq!(row.psnr_db, PSNR_CAP_DB);
    assert_eq!((row.n_volumes, row.status), (2, RowStatus::Ok));
    assert!(evaluate_with("empty", Task::Isotropic, &[], &ssim, |v| Ok(v.clone())).is_err());

    let mut g = Network::<f32>::generator(&tiny_generator([2, 2, 2])).unwrap();
    g.init_params(1);
    let a = evaluate_generator(&mut g, "g", Task::Isotropic, &test, &ssim).unwrap();
    let b = evaluate_generator(&mut g, "g", Task::Isotropic, &test, &ssim).unwrap();
    assert_eq!(a, b);
    assert!(a.ssim.is_finite() && a.psnr_db.is_finite());
}

#[test]
fn classifier_pretraining_checks() {
    let corpus_cfg = ClassCorpusConfig { extent: [32; 3], counts: [2, 2, 3], ..Default::default() };
    let corpus = class_corpus(&corpus_cfg, corpus_cfg.counts, Split::Train).unwrap();
    let cfg = VggTrainConfig { vgg: VggConfig { first_channels: 2 }, steps: 1, batch_size: 2, lr: 0.0, ..Default::default() };
    let net = pretrain_vgg(&cfg, &corpus, &mut |_| {}).unwrap();
    let mut fresh = Network::<f32>::vgg3d(&cfg.vgg).unwrap();
    fresh.init_params(voxsr_core::degradation::mix_seed(cfg.seed, 1));
    assert_eq!(net.params(), fresh.params());

    let mut seen = Vec::new();
    pretrain_vgg(&VggTrainConfig { steps: 3, lr: 1e-3, ..cfg.clone() }, &corpus, &mut |r| seen.push(r.step)).unwrap();
    assert_eq!(seen.last(), Some(&3));

    let missing = class_corpus(&corpus_cfg, [2, 0, 3], Split::Train).unwrap();
    assert!(matches!(pretrain_vgg(&cfg, &missing, &mut |_| {}), Err(Error::MissingClass(_))));
}

#[test]
fn single_cell_grid_yields_baseline_and_cell_rows() {
    let mut cfg = AblationConfig {
        tasks: vec![Task::Anisotropic],
        cells: vec![CellSpec { generator: GeneratorKind::Srresnet, discriminator: Some(DiscriminatorKind::Pd), perceptual: false }],
        ..Default::default()
    };
    cfg.data = PairCorpusConfig { hr_extent: [16; 3], train: 2, val: 0, test: 1, ..cfg.data };
    cfg.train.steps = 2;
    let mut calls = 0;
    let rows = run_ablation(&cfg, None, &mut |_, err| {
        assert!(err.is_none());
        calls += 1;
    })
    .unwrap();
    assert_eq!(calls, 2);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].experiment, "Bicubic");
    assert_eq!(rows[1].experiment, "SRResNet + PD");
    assert!(rows.iter().all(|r| r.status == RowStatus::Ok && r.task == Task::Anisotropic && r.n_volumes == 1));
}
