use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxsr::checkpoint::{Checkpoint, CheckpointError, VggCheckpoint};
use voxsr::table::{csv_string, format_table, read_csv, CSV_HEADER};
use voxsr::trainlog::{parse_log, LogRecord};
use voxsr::volfile::{decode_vol, encode_vol, read_vol, write_vol, VolError, VolFormatError};
use voxsr_core::degradation::Task;
use voxsr_core::nn::{GeneratorConfig, VggConfig};
use voxsr_core::train::{GanTrainer, MetricsRow, RowStatus, StepRecord, TrainConfig, VggTrainConfig};
use voxsr_core::{ClassLabel, Volume};

fn random_volume(rng: &mut ChaCha8Rng) -> Volume {
    let ext = [rng.random_range(1..7), rng.random_range(1..7), rng.random_range(1..7)];
    let spacing = [rng.random_range(0.1..5.0), rng.random_range(0.1..5.0), rng.random_range(0.1..5.0)];
    let label = ClassLabel::from_index(rng.random_range(0..4));
    Volume::from_fn(ext, spacing, |_, _, _| f32::from_bits(rng.random())).unwrap().with_label(label)
}

fn bits(v: &Volume) -> Vec<u32> {
    v.data().iter().map(|x| x.to_bits()).collect()
}

#[test]
fn vol_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..50 {
        // arbitrary bit patterns, NaN payloads included
        let v = random_volume(&mut rng);
        let path = dir.path().join(format!("{i}.vol"));
        write_vol(&v, &path).unwrap();
        let back = read_vol(&path).unwrap();
        assert_eq!(back.extents(), v.extents());
        assert_eq!(back.spacing_mm().map(f64::to_bits), v.spacing_mm().map(f64::to_bits));
        assert_eq!(back.label(), v.label());
        assert_eq!(bits(&back), bits(&v));
        assert_eq!(encode_vol(&back), std::fs::read(&path).unwrap());
    }
}

#[test]
fn vol_errors_are_distinct() {
    let v = Volume::filled([2, 3, 4], [1.0; 3], 0.5).unwrap();
    let good = encode_vol(&v);

    let mut bad = good.clone();
    bad[7] = b'2';
    assert!(matches!(decode_vol(&bad), Err(VolFormatError::BadMagic { .. })));
    assert!(matches!(decode_vol(b"VOX"), Err(VolFormatError::BadMagic { .. })));

    assert!(matches!(decode_vol(&good[..good.len() - 1]), Err(VolFormatError::Truncated { expected: 96, found: 95 })));
    let mut long = good.clone();
    long.extend_from_slice(&[0; 4]);
    assert!(matches!(decode_vol(&long), Err(VolFormatError::ExtentMismatch { expected: 96, found: 100, .. })));

    for header in [
        &b"VOXSRV01{\"d\":2}\n"[..],
        b"VOXSRV01not json\n",
        b"VOXSRV01{\"d\":0,\"h\":1,\"w\":1,\"spacing_mm\":[1,1,1],\"label\":null}\n",
        b"VOXSRV01{\"d\":1,\"h\":1,\"w\":1,\"spacing_mm\":[1,-1,1],\"label\":null}\n\0\0\0\0",
        b"VOXSRV01{\"d\":1,\"h\":1,\"w\":1,\"spacing_mm\":[1,1,1],\"label\":\"pd\"}\n\0\0\0\0",
        b"VOXSRV01{\"d\":1,\"h\":1,\"w\":1,\"spacing_mm\":[1,1,1],\"label\":null}",
    ] {
        assert!(matches!(decode_vol(header), Err(VolFormatError::MalformedHeader(_))), "{}", String::from_utf8_lossy(header));
    }

    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(read_vol(dir.path().join("missing.vol")), Err(VolError::Io { .. })));
    let p = dir.path().join("t.vol");
    std::fs::write(&p, &good[..20]).unwrap();
    let err = read_vol(&p).unwrap_err();
    assert!(err.to_string().contains("t.vol"), "{err}");
}

fn tiny_trainer() -> GanTrainer {
    let cfg = TrainConfig {
        generator: GeneratorConfig { base_channels: 2, num_blocks: 1, reduce_channels: 2, scale: [2, 1, 1], ..Default::default() },
        task: Task::Anisotropic,
        steps: 1,
        ..Default::default()
    };
    GanTrainer::new(cfg, None).unwrap()
}

#[test]
fn checkpoint_round_trip() {
    let snap = tiny_trainer().snapshot();
    let ck = Checkpoint::Gan(snap.clone());
    let bytes = ck.to_bytes();
    assert_eq!(&bytes[..9], b"VOXSRCK1\x01");
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.ckpt");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap().into_gan().unwrap();
    assert_eq!(loaded.generator().unwrap().params(), tiny_trainer().generator().params());

    let train = VggTrainConfig { vgg: VggConfig { first_channels: 2 }, ..Default::default() };
    let mut net = voxsr_core::nn::Network::<f32>::vgg3d(&train.vgg).unwrap();
    net.init_params(3);
    let vgg = Checkpoint::Vgg(VggCheckpoint::from_network(&net, &train));
    let back = Checkpoint::from_bytes(&vgg.to_bytes()).unwrap();
    assert_eq!(back.clone().into_vgg().unwrap().network().unwrap().params(), net.params());
    assert!(matches!(back.into_gan(), Err(CheckpointError::WrongKind { .. })));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = Checkpoint::Gan(tiny_trainer().snapshot()).to_bytes();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(&bad).unwrap_err().contains("magic"));
    let mut bad = bytes.clone();
    bad[8] = 9;
    assert!(Checkpoint::from_bytes(&bad).unwrap_err().contains("version"));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err().contains("truncated"));
    let mut long = bytes.clone();
    long.push(0);
    assert!(Checkpoint::from_bytes(&long).unwrap_err().contains("trailing"));

    let mut snap = tiny_trainer().snapshot();
    snap.tensors.retain(|(n, _)| !n.starts_with("generator.param."));
    assert!(snap.generator().is_err());
}

fn row(name: &str, task: Task, ssim: f64, psnr: f64) -> MetricsRow {
    MetricsRow { experiment: name.into(), task, ssim, psnr_db: psnr, n_volumes: 4, status: RowStatus::Ok }
}

#[test]
fn csv_schema_and_round_trip() {
    let rows = vec![
        row("Bicubic", Task::Isotropic, 0.81234, 27.0912),
        row("SRResNet + PD + PL", Task::Isotropic, 0.9, 31.5),
        MetricsRow::failed("RDN + SD", Task::Anisotropic),
    ];
    let text = csv_string(&rows);
    let lines: Vec<&str> = text.split('\n').collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines[1], "Bicubic,isotropic,0.81234,27.0912,4,ok");
    assert_eq!(lines[3], "RDN + SD,anisotropic,NaN,NaN,0,error");
    assert_eq!(lines.len(), 5);
    assert!(!text.contains('\r'));

    let back = read_csv(text.as_bytes()).unwrap();
    assert_eq!(back[..2], rows[..2]);
    assert!(back[2].ssim.is_nan() && back[2].status == RowStatus::Error);
    assert_eq!(csv_string(&back), text);

    let odd = vec![row("a, \"quoted\" name", Task::Isotropic, 0.5, 10.0)];
    assert_eq!(read_csv(csv_string(&odd).as_bytes()).unwrap(), odd);
}

#[test]
fn table_has_one_line_per_experiment() {
    let rows = vec![
        row("Bicubic", Task::Isotropic, 0.8, 27.0),
        row("RDN + PD", Task::Isotropic, 0.9, 30.0),
        row("Bicubic", Task::Anisotropic, 0.85, 29.0),
        MetricsRow::failed("RDN + PD", Task::Anisotropic),
    ];
    let t = format_table(&rows);
    let lines: Vec<&str> = t.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].contains("isotropic") && lines[0].contains("anisotropic"));
    assert!(lines[3].starts_with("Bicubic") && lines[3].contains("0.8000") && lines[3].contains("29.00"));
    assert!(lines[4].starts_with("RDN + PD") && lines[4].contains("error"));
}

#[test]
fn log_lines_parse_back() {
    let rec = StepRecord { step: 3, lr: 1e-4, g_total: 0.5, g_pixel: Some(0.4), g_adv: Some(100.0), d_loss: Some(1.3), d_skipped: Some(false), ..Default::default() };
    let mut buf = Vec::new();
    LogRecord::from_step(&rec, 17).write_line(&mut buf).unwrap();
    let val = voxsr_core::train::ValMetrics { mse: 0.01, psnr_db: 20.0, ssim: 0.9 };
    LogRecord::from_val(4, val, 20).write_line(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with(r#"{"step":3,"lr":0.0001,"wall_ms":17,"terms":{"g_total":0.5,"g_pixel":0.4,"g_adv":100.0,"d_loss":1.3,"d_skipped":false}}"#));
    let parsed = parse_log(&text).unwrap();
    assert_eq!(parsed.len(), 2);
    assert_eq!(parsed[1].val, Some(val));
}
