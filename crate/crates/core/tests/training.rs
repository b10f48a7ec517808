use mimofuse::backbones::{BackboneConfig, BackboneRegistry, Checkpoint};
use mimofuse::data::{generate_synthetic_dataset, stratified_kfold, Dataset, MimoBatch, ModalitySpec, SynthConfig};
use mimofuse::eval::{confidence_probe, predict_indices, ProbeMode};
use mimofuse::fusion::{FusionModel, LateFusion, Strategy};
use mimofuse::losses::{cross_entropy_sum, LogitsBundle, Temperature};
use mimofuse::train::{
    fusion_model, run_cross_validation, train_early_kd, train_late, train_mimo, train_mimo_kd,
    train_single, CvOptions, TrainConfig,
};

fn dataset(n: usize, ratios: Vec<f64>, informativeness: f64, seed: u64) -> Dataset {
    let k = ratios.len();
    generate_synthetic_dataset(&SynthConfig {
        n_samples: n,
        class_ratios: ratios,
        class_names: (0..k).map(|c| format!("c{c}")).collect(),
        spec: ModalitySpec::new(4, 3, 16).unwrap(),
        informativeness: vec![informativeness; 4],
        noise_std: 0.1,
        seed,
    })
    .unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        learning_rate: 0.02,
        backbone: BackboneConfig::desknet(3, 16),
        ..TrainConfig::default()
    }
}

fn all(ds: &Dataset) -> Vec<usize> {
    (0..ds.len()).collect()
}

fn teachers(ds: &Dataset, cfg: &TrainConfig) -> (Vec<Checkpoint>, LateFusion) {
    let ckpts: Vec<Checkpoint> = train_late(ds, &all(ds), cfg, &BackboneRegistry::default())
        .unwrap()
        .into_iter()
        .map(|o| o.checkpoint)
        .collect();
    let late = LateFusion::from_checkpoints(&ckpts, 4).unwrap();
    (ckpts, late)
}

#[test]
fn untrained_mimo_starts_near_uniform() {
    let ds = dataset(200, vec![0.2; 5], 1.0, 1);
    let reg = BackboneRegistry::default();
    let cfg = quick(1);
    let spec = ds.spec();
    let net = reg
        .build(
            &cfg.backbone.with_in_channels(spec.fused_channels()),
            Strategy::Mimo.head_plan(&spec, 5).unwrap(),
            3,
        )
        .unwrap();
    let idx = all(&ds);
    let batch = MimoBatch::aligned(&ds, &idx).unwrap();
    let logits = LogitsBundle::from_output(&net.forward(&batch.concat_input).unwrap(), net.head_plan()).unwrap();
    let l_m = cross_entropy_sum(&logits, &batch.labels).unwrap().total;
    let expected = 4.0 * 5f64.ln();
    assert!((l_m - expected).abs() <= 0.05 * expected, "{l_m} vs {expected}");

    let profile = confidence_probe(&net, &ds, &idx, ProbeMode::AllModalities).unwrap();
    for mean in profile.means() {
        assert!((mean - 0.2).abs() <= 0.15, "{mean}");
    }
}

#[test]
fn single_network_fits_separable_data() {
    let ds = dataset(120, vec![0.5, 0.3, 0.2], 1.0, 2);
    let out = train_single(1, &ds, &all(&ds), &quick(12), &BackboneRegistry::default()).unwrap();
    let model = fusion_model(&out.checkpoint, Strategy::Single(1)).unwrap();
    let pred = predict_indices(&model, &ds, &all(&ds)).unwrap();
    let correct = pred
        .classes()
        .iter()
        .zip(ds.labels())
        .filter(|(p, y)| **p == *y)
        .count();
    assert!(correct as f64 / ds.len() as f64 >= 0.99, "{correct}/{}", ds.len());
}

#[test]
fn training_is_deterministic_and_checkpoints_are_stable() {
    let ds = dataset(60, vec![0.5, 0.5], 1.0, 3);
    let reg = BackboneRegistry::default();
    let cfg = quick(2);
    let a = train_mimo(&ds, &all(&ds), &cfg, &reg).unwrap();
    let b = train_mimo(&ds, &all(&ds), &cfg, &reg).unwrap();
    let bytes = a.checkpoint.to_bytes().unwrap();
    assert_eq!(bytes, b.checkpoint.to_bytes().unwrap());
    assert_eq!(a.steps, b.steps);
    let c = train_mimo(&ds, &all(&ds), &TrainConfig { seed: 1, ..cfg }, &reg).unwrap();
    assert_ne!(bytes, c.checkpoint.to_bytes().unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    a.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(back.network, a.checkpoint.network);
}

#[test]
fn late_members_do_not_depend_on_training_order() {
    let ds = dataset(40, vec![0.5, 0.5], 1.0, 4);
    let reg = BackboneRegistry::default();
    let cfg = quick(1);
    let late = train_late(&ds, &all(&ds), &cfg, &reg).unwrap();
    let alone = train_single(2, &ds, &all(&ds), &cfg, &reg).unwrap();
    assert_eq!(late[2].checkpoint.to_bytes().unwrap(), alone.checkpoint.to_bytes().unwrap());
    assert_ne!(late[1].checkpoint.to_bytes().unwrap(), late[2].checkpoint.to_bytes().unwrap());
}

#[test]
fn distillation_leaves_teachers_untouched_and_logs_exact_totals() {
    let ds = dataset(60, vec![0.4, 0.3, 0.3], 1.0, 5);
    let reg = BackboneRegistry::default();
    let cfg = quick(1);
    let (ckpts, late) = teachers(&ds, &cfg);
    let before: Vec<Vec<u8>> = ckpts.iter().map(|c| c.to_bytes().unwrap()).collect();
    for t in [1.0, 2.0, 4.0, 8.0] {
        let kd_cfg = TrainConfig {
            temperature: Temperature::new(t).unwrap(),
            ..cfg.with_strategy(Strategy::MimoKd)
        };
        let out = train_mimo_kd(&ds, &all(&ds), &kd_cfg, &late, &reg).unwrap();
        for s in &out.steps {
            assert_eq!(s.temperature, t);
            assert_eq!(s.l_total, s.l_m + t * t * s.l_kd);
            assert_eq!(s.ce_per_head.len(), 4);
            assert!(s.l_kd >= 0.0);
        }
        let early = train_early_kd(&ds, &all(&ds), &TrainConfig { strategy: Strategy::EarlyKd, ..kd_cfg }, &late, &reg).unwrap();
        assert!(early.steps.iter().all(|s| s.l_total == s.l_m + t * t * s.l_kd));
    }
    let members: Vec<Vec<u8>> = late
        .members()
        .iter()
        .zip(&ckpts)
        .map(|(n, c)| Checkpoint::new(n.clone(), c.meta.clone()).to_bytes().unwrap())
        .collect();
    assert_eq!(members, before);
}

#[test]
fn plain_mimo_logs_zero_distillation() {
    let ds = dataset(40, vec![0.5, 0.5], 1.0, 6);
    let out = train_mimo(&ds, &all(&ds), &quick(1), &BackboneRegistry::default()).unwrap();
    assert!(out.steps.iter().all(|s| s.l_kd == 0.0 && s.l_total == s.l_m));
}

#[test]
fn misconfigured_distillation_is_rejected() {
    let ds = dataset(40, vec![0.5, 0.5], 1.0, 7);
    let reg = BackboneRegistry::default();
    let cfg = quick(1);
    let with_teachers = TrainConfig {
        teachers: vec!["t0.ckpt".into()],
        ..cfg.clone()
    };
    assert!(train_mimo(&ds, &all(&ds), &with_teachers, &reg).is_err());

    let (ckpts, _) = teachers(&ds, &cfg);
    assert!(LateFusion::from_checkpoints(&ckpts[..3], 4).is_err());
    let dup = vec![ckpts[0].clone(), ckpts[1].clone(), ckpts[1].clone(), ckpts[3].clone()];
    assert!(LateFusion::from_checkpoints(&dup, 4).is_err());

    let three = dataset(60, vec![0.4, 0.3, 0.3], 1.0, 7);
    let (_, wrong_k) = teachers(&three, &cfg);
    let kd = cfg.with_strategy(Strategy::MimoKd);
    assert!(train_mimo_kd(&ds, &all(&ds), &kd, &wrong_k, &reg).is_err());
}

#[test]
fn cross_validation_emits_the_full_ladder() {
    let ds = dataset(60, vec![0.5, 0.3, 0.2], 0.9, 8);
    let plan = stratified_kfold(&ds.labels(), 2, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = CvOptions {
        out_root: Some(dir.path().to_path_buf()),
        ..CvOptions::default()
    };
    let result = run_cross_validation(&ds, &plan, &quick(1), &BackboneRegistry::default(), &opts).unwrap();
    assert_eq!(result.table.rows.len(), 9);
    assert_eq!(result.records.len(), 18);
    assert!(result.table.rows.iter().all(|r| r.runs == 2 && r.f1.is_some()));
    let late = result.table.row(Strategy::Late).unwrap();
    let single = result.table.row(Strategy::Single(0)).unwrap();
    assert_eq!(late.flops, 4 * single.flops);
    let runs: Vec<_> = std::fs::read_dir(dir.path().join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 18);
    let text = result.table.to_text();
    assert!(text.contains("MM-MIMO + KD") && text.contains(" ± "));

    // The saved single-modality checkpoints serve as teachers on a rerun.
    let reuse = CvOptions {
        strategies: vec![Strategy::MimoKd],
        reuse_teachers: Some(dir.path().to_path_buf()),
        ..CvOptions::default()
    };
    let again = run_cross_validation(&ds, &plan, &quick(1), &BackboneRegistry::default(), &reuse).unwrap();
    assert_eq!(again.table.rows.len(), 1);
    let missing = CvOptions {
        reuse_teachers: Some(dir.path().join("nowhere")),
        ..reuse
    };
    assert!(run_cross_validation(&ds, &plan, &quick(1), &BackboneRegistry::default(), &missing).is_err());
}

#[test]
fn late_fusion_handles_independent_batches() {
    let ds = dataset(40, vec![0.5, 0.5], 1.0, 9);
    let (_, late) = teachers(&ds, &quick(1));
    let slots = vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]];
    let batch = MimoBatch::gather(&ds, &slots, None).unwrap();
    let per_member = late.member_logits(&batch).unwrap();
    for (m, logits) in per_member.iter().enumerate() {
        let direct = late.members()[m].forward(&batch.slot_input(m).unwrap()).unwrap();
        let direct: Vec<f64> = direct.data().iter().map(|&v| v as f64).collect();
        assert_eq!(logits.data(), &direct[..]);
    }
    assert!(FusionModel::Late(late).predict(&batch).is_err());
}
