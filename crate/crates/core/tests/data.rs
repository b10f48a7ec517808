use mimofuse::data::{
    generate_synthetic_dataset, make_aligned_batch, make_independent_batch, modality_templates,
    read_dataset, stratified_kfold, write_dataset, Dataset, ModalitySpec, SynthConfig,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(n: usize, ratios: Vec<f64>, informativeness: f64, noise: f64, seed: u64) -> SynthConfig {
    let k = ratios.len();
    SynthConfig {
        n_samples: n,
        class_ratios: ratios,
        class_names: (0..k).map(|c| format!("c{c}")).collect(),
        spec: ModalitySpec::new(4, 3, 16).unwrap(),
        informativeness: vec![informativeness; 4],
        noise_std: noise,
        seed,
    }
}

fn reference_labels() -> Vec<usize> {
    [962usize, 445, 68, 12, 5]
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect()
}

#[test]
fn reference_scaled_counts() {
    let ds = generate_synthetic_dataset(&SynthConfig::reference_scaled()).unwrap();
    assert_eq!(ds.manifest().class_counts, vec![962, 445, 68, 12, 5]);
    assert_eq!(ds.len(), 1492);
    let mut seen = vec![0; 5];
    for s in ds.samples() {
        seen[s.label] += 1;
    }
    assert_eq!(seen, ds.manifest().class_counts);
}

#[test]
fn same_seed_same_dataset() {
    let a = generate_synthetic_dataset(&config(60, vec![0.5, 0.3, 0.2], 0.9, 0.1, 4)).unwrap();
    let b = generate_synthetic_dataset(&config(60, vec![0.5, 0.3, 0.2], 0.9, 0.1, 4)).unwrap();
    let c = generate_synthetic_dataset(&config(60, vec![0.5, 0.3, 0.2], 0.9, 0.1, 5)).unwrap();
    assert_eq!(a.samples(), b.samples());
    assert_ne!(a.samples(), c.samples());
}

/// Correlation against every template of the modality; with full
/// informativeness and no noise the best match is always the label.
#[test]
fn nearest_template_oracle_is_exact() {
    let cfg = config(200, vec![0.4, 0.3, 0.2, 0.1], 1.0, 0.0, 8);
    let ds = generate_synthetic_dataset(&cfg).unwrap();
    let templates = modality_templates(cfg.seed, 4, 4, 3, 16).unwrap();
    for s in ds.samples() {
        for (m, img) in s.images.iter().enumerate() {
            let scores: Vec<f64> = templates[m]
                .iter()
                .map(|t| {
                    t.iter()
                        .zip(&img.data)
                        .map(|(&tv, &px)| tv as f64 * (px as f64 - 0.5))
                        .sum()
                })
                .collect();
            let best = (0..scores.len())
                .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
                .unwrap();
            assert_eq!(best, s.label, "sample {} modality {m}", s.specimen_id);
        }
    }
}

#[test]
fn aligned_batch_shape_and_labels() {
    let ds = generate_synthetic_dataset(&config(8, vec![0.5, 0.5], 1.0, 0.0, 1)).unwrap();
    let one = make_aligned_batch(&[ds.sample(0)]).unwrap();
    assert_eq!(one.concat_input.shape(), &[1, 12, 16, 16]);
    let all: Vec<_> = ds.samples().iter().collect();
    let batch = make_aligned_batch(&all).unwrap();
    assert_eq!(batch.labels.len(), 4);
    assert!(batch.labels.iter().all(|l| l.len() == 8 && *l == batch.labels[0]));
}

#[test]
fn single_sample_dataset_fills_every_slot() {
    let ds = generate_synthetic_dataset(&config(2, vec![0.5, 0.5], 1.0, 0.0, 1)).unwrap();
    let one = ds.subset(&[1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch = make_independent_batch(&one, 3, &mut rng).unwrap();
    assert!(batch.is_aligned());
    assert!(batch.specimens.iter().flatten().all(|s| *s == one.sample(0).specimen_id));
}

fn independent_slot_labels(ds: &Dataset, draws: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut slots = vec![Vec::with_capacity(draws); 4];
    while slots[0].len() < draws {
        let batch = make_independent_batch(ds, 64, &mut rng).unwrap();
        for (m, l) in batch.labels.iter().enumerate() {
            slots[m].extend(l);
        }
    }
    slots
}

#[test]
fn slot_agreement_matches_independence() {
    let ds = generate_synthetic_dataset(&config(1000, vec![0.5, 0.3, 0.2], 1.0, 0.0, 2)).unwrap();
    let counts = &ds.manifest().class_counts;
    let r: Vec<f64> = counts.iter().map(|&c| c as f64 / ds.len() as f64).collect();
    let expected: f64 = r.iter().map(|p| p.powi(4)).sum();
    let draws = 20_032;
    let slots = independent_slot_labels(&ds, draws);
    let agree = (0..draws)
        .filter(|&i| (1..4).all(|m| slots[m][i] == slots[0][i]))
        .count() as f64
        / draws as f64;
    let sigma = (expected * (1.0 - expected) / draws as f64).sqrt();
    assert!(
        (agree - expected).abs() <= 3.0 * sigma,
        "agreement {agree} vs {expected} ± {sigma}"
    );
}

#[test]
fn slot_marginals_follow_class_ratios() {
    let ds = generate_synthetic_dataset(&config(1000, vec![0.5, 0.3, 0.15, 0.05], 1.0, 0.0, 3)).unwrap();
    let r: Vec<f64> = ds.manifest().class_counts.iter().map(|&c| c as f64 / ds.len() as f64).collect();
    // Draws within one batch are without replacement, so use one item per
    // batch to keep the samples independent.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 4000;
    let mut observed = vec![vec![0usize; 4]; 4];
    for _ in 0..n {
        let batch = make_independent_batch(&ds, 1, &mut rng).unwrap();
        for m in 0..4 {
            observed[m][batch.labels[m][0]] += 1;
        }
    }
    // χ²(3) upper 1% point.
    let critical = 11.345;
    for (m, obs) in observed.iter().enumerate() {
        let chi2: f64 = obs
            .iter()
            .zip(&r)
            .map(|(&o, &p)| (o as f64 - n as f64 * p).powi(2) / (n as f64 * p))
            .sum();
        assert!(chi2 < critical, "slot {m}: chi2 {chi2}");
    }
}

#[test]
fn reference_scale_folds_spread_the_rarest_class() {
    let labels = reference_labels();
    let plan = stratified_kfold(&labels, 5, 0).unwrap();
    plan.check(&labels, 5).unwrap();
    let counts = plan.class_counts(&labels, 5);
    assert!(counts.iter().all(|f| f[4] == 1));
}

#[test]
fn dataset_round_trips_through_disk() {
    let ds = generate_synthetic_dataset(&config(30, vec![0.6, 0.4], 0.8, 0.2, 9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    write_dataset(&root, &ds, false).unwrap();
    for m in 0..4 {
        assert!(root.join(format!("mod{m}")).join("s00000.png").exists());
    }
    let back = read_dataset(&root).unwrap();
    assert_eq!(back.samples(), ds.samples());
    assert_eq!(back.manifest(), ds.manifest());
    assert!(write_dataset(&root, &ds, false).is_err());
    write_dataset(&root, &ds, true).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition_and_stratify(
        labels in prop::collection::vec(0usize..4, 10..200),
        n_folds in 2usize..7,
        seed in any::<u64>(),
    ) {
        let plan = stratified_kfold(&labels, n_folds, seed).unwrap();
        let k = labels.iter().max().unwrap() + 1;
        prop_assert!(plan.check(&labels, k).is_ok());
        let mut seen = vec![0; labels.len()];
        for f in 0..n_folds {
            for i in plan.validation_indices(f) {
                seen[i] += 1;
            }
            let train = plan.train_indices(f);
            let val = plan.validation_indices(f);
            prop_assert_eq!(train.len() + val.len(), labels.len());
            prop_assert!(mimofuse::train::check_disjoint(&train, &val).is_ok());
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }
}
