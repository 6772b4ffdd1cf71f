//! End-to-end runs on a tiny synthetic dataset.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use octroi::eval::{auroc, confusion_metrics};
use octroi::experiment::{read_scores, DatasetSource, ExperimentConfig, RoiSet, Runner};
use octroi::nn::{AugmentConfig, ModelConfig, TrainConfig};
use octroi::roi::{RoiKind, RoiRequest};
use octroi::synth::SynthConfig;

fn tiny(out: &Path, variants: Vec<RoiRequest>) -> ExperimentConfig {
    let synth = SynthConfig {
        subjects_per_class: 5,
        bscans_per_subject: 4,
        seed: 11,
        ..SynthConfig::default()
    };
    let mut cfg = ExperimentConfig {
        dataset: DatasetSource::Synth(synth),
        keep_fraction: 1.0,
        roi_variants: variants,
        model: ModelConfig {
            input_size: [24, 32],
            block_channels: vec![2, 4],
            convs_per_block: vec![1, 1],
            dense_sizes: vec![4],
        },
        train: TrainConfig {
            learning_rate: 1e-2,
            batch_size: 8,
            max_epochs: 2,
            patience: 2,
            augmentation: AugmentConfig::default(),
            ..TrainConfig::default()
        },
        output_dir: out.to_path_buf(),
        seed: 5,
        ..ExperimentConfig::default()
    }
    .with_input_size(24, 32);
    cfg.eval.bootstrap_b = 100;
    cfg
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn single_variant_has_empty_comparison_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), vec![RoiRequest::new(RoiKind::WholeImage, None)]);
    let res = Runner::create(cfg).unwrap().run().unwrap();
    assert_eq!(res.evaluation.variants.len(), 1);
    assert!(res.evaluation.comparisons.is_empty());
    let t2 = csv_rows(&res.run_dir.join("reports/table2.csv"));
    assert_eq!(t2, vec![vec!["model".to_string()]]);
}

#[test]
fn eight_variants_share_split_and_reports_match_scores() {
    let dir = tempfile::tempdir().unwrap();
    let res = Runner::create(tiny(dir.path(), RoiRequest::paper_variants()))
        .unwrap()
        .run()
        .unwrap();
    let ev = &res.evaluation;
    assert_eq!(ev.variants.len(), 8);
    assert_eq!(ev.comparisons.len(), 28);
    let pairs: BTreeSet<(String, String)> = ev
        .comparisons
        .iter()
        .map(|c| {
            let (a, b) = (c.a.clone(), c.b.clone());
            if a < b {
                (a, b)
            } else {
                (b, a)
            }
        })
        .collect();
    assert_eq!(pairs.len(), 28);

    let runner = Runner::open(&res.run_dir).unwrap();
    let mut subjects: Option<Vec<(String, String, usize)>> = None;
    for name in runner.variant_names() {
        let rows = read_scores(&runner.scores_path(&name)).unwrap();
        let ids: Vec<_> = rows
            .iter()
            .map(|r| (r.subject_id.clone(), r.volume_id.clone(), r.index_in_volume))
            .collect();
        match &subjects {
            None => subjects = Some(ids),
            Some(s) => assert_eq!(s, &ids, "{name} scored a different test set"),
        }
    }

    let table = csv_rows(&res.run_dir.join("reports/table1.csv"));
    let scores = runner.load_scores().unwrap();
    for (row, (name, set)) in table.iter().skip(1).zip(&scores) {
        assert_eq!(&row[0], name);
        let (acc, sens, spec) = confusion_metrics(set, 0.5);
        let want = [auroc(set).unwrap(), acc, sens, spec];
        for (k, w) in want.iter().enumerate() {
            assert_eq!(row[3 + 3 * k], format!("{w:.3}"), "{name} column {}", 3 + 3 * k);
        }
        assert_eq!(row[15], set.n_pos().to_string());
        assert_eq!(row[16], set.n_neg().to_string());
    }

    for name in runner.variant_names() {
        let set: RoiSet = runner.load_roi_set(&name).unwrap();
        assert_eq!(set.samples.len(), 40, "{name}");
        assert!(runner.model_dir(&name).join("model.bin").exists());
        assert!(res.run_dir.join(format!("reports/history_{name}.csv")).exists());
        assert!(res.run_dir.join(format!("reports/roc_{name}.csv")).exists());
    }
    assert!(res.run_dir.join("reports/roc.svg").exists());
}

#[test]
fn rerun_and_threads_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let variants = vec![
        RoiRequest::new(RoiKind::WholeImage, None),
        RoiRequest::cropping(RoiKind::BmCho),
        RoiRequest::new(RoiKind::RpeBmMaskOnly, None),
    ];
    let first = Runner::create(tiny(dir.path(), variants.clone()))
        .unwrap()
        .run()
        .unwrap();
    let second = Runner::create(tiny(dir.path(), variants.clone()))
        .unwrap()
        .run()
        .unwrap();
    let threaded = Runner::create(ExperimentConfig {
        threads: 3,
        ..tiny(dir.path(), variants)
    })
    .unwrap()
    .run()
    .unwrap();
    assert_ne!(first.run_dir, second.run_dir);
    let read = |d: &Path| fs::read(d.join("metrics.json")).unwrap();
    assert_eq!(read(&first.run_dir), read(&second.run_dir));
    assert_eq!(read(&first.run_dir), read(&threaded.run_dir));
}

#[test]
fn stages_rerun_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), vec![RoiRequest::masking(RoiKind::RpeBm)]);
    let full = Runner::create(cfg).unwrap().run().unwrap();
    let runner = Runner::open(&full.run_dir).unwrap();
    let name = "masking-rpe-bm";
    let (model, _) = runner.load_model(name).unwrap();
    let set = runner.load_roi_set(name).unwrap();
    let before = fs::read(runner.scores_path(name)).unwrap();
    runner.score_variant(&model, &set).unwrap();
    assert_eq!(before, fs::read(runner.scores_path(name)).unwrap());
    let scores = runner.load_scores().unwrap();
    let ev = runner.evaluate(&scores).unwrap();
    assert_eq!(ev, full.evaluation);
}

#[test]
fn bad_manifest_fails_in_dataset_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        dataset: DatasetSource::Manifest(dir.path().join("missing/manifest.json")),
        ..tiny(dir.path(), vec![RoiRequest::new(RoiKind::WholeImage, None)])
    };
    let err = Runner::create(cfg).unwrap().run().unwrap_err();
    assert!(!err.is_validation());
    assert!(err.to_string().contains("dataset"), "{err}");
}
