use std::collections::BTreeMap;

use somno_core::feature::names;
use somno_core::ingest::Recording;
use somno_core::nn::NamedTensor;
use somno_core::synthetic::{compact_config, generate, SyntheticSpec};
use somno_core::train::checkpoint::groups;
use somno_core::train::{
    fine_tune, labeled, load_feature_net, sequences, train_classifier_stage, train_pipeline,
    unlabeled, Checkpoint, ClassifierTrainer, EpochLog, FeatureData, FeatureTrainer,
    PipelineConfig, PipelineData, SequenceSet, FINE_TUNE_PREFIXES,
};

fn data(subjects: usize, first: usize, seed: u64) -> Vec<Recording> {
    generate(&SyntheticSpec {
        subjects,
        first_subject: first,
        epochs_per_recording: 60,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn config(feature_epochs: usize, classifier_epochs: usize) -> PipelineConfig {
    let mut c = compact_config(4);
    c.train.feature_epochs = feature_epochs;
    c.train.classifier_epochs = classifier_epochs;
    c
}

fn by_name(ts: Vec<NamedTensor>) -> BTreeMap<String, NamedTensor> {
    ts.into_iter().map(|t| (t.name.clone(), t)).collect()
}

fn timeless(log: &[EpochLog]) -> Vec<EpochLog> {
    log.iter().map(EpochLog::without_timing).collect()
}

#[test]
fn feature_stage_resume_matches_uninterrupted_run() {
    let cfg = config(3, 0);
    let train = labeled(&data(3, 0, 0));
    let val = labeled(&data(1, 3, 0));
    let fd = FeatureData {
        train: &train,
        val: &val,
        unlabeled: &[],
    };

    let mut straight = FeatureTrainer::new(&cfg, &fd).unwrap();
    let mut log_a = Vec::new();
    while !straight.should_stop() {
        log_a.push(EpochLog::Feature(straight.run_epoch(&fd).unwrap()));
    }
    let full = straight.checkpoint().unwrap();

    let mut first = FeatureTrainer::new(&cfg, &fd).unwrap();
    let mut log_b = Vec::new();
    for _ in 0..2 {
        log_b.push(EpochLog::Feature(first.run_epoch(&fd).unwrap()));
    }
    let dir = tempfile::tempdir().unwrap();
    first.checkpoint().unwrap().save(dir.path()).unwrap();
    drop(first);
    let mut resumed =
        FeatureTrainer::resume(&cfg, &Checkpoint::load(dir.path()).unwrap(), None).unwrap();
    while !resumed.should_stop() {
        log_b.push(EpochLog::Feature(resumed.run_epoch(&fd).unwrap()));
    }
    let again = resumed.checkpoint().unwrap();
    assert_eq!(full.id(), again.id());
    assert_eq!(
        full.tensors, again.tensors,
        "optimiser and best-so-far state match too"
    );
    assert_eq!(timeless(&log_a), timeless(&log_b));
}

#[test]
fn classifier_stage_resume_matches_and_keeps_encoder_frozen() {
    let mut cfg = config(1, 10);
    cfg.train.sequence_length = 5;
    cfg.train.sequence_stride = 5;
    let pd = PipelineData {
        train: data(3, 0, 0),
        val: data(1, 3, 0),
        unlabeled: vec![],
    };
    let train_l = labeled(&pd.train);
    let val_l = labeled(&pd.val);
    let fd = FeatureData {
        train: &train_l,
        val: &val_l,
        unlabeled: &[],
    };
    let mut ft = FeatureTrainer::new(&cfg, &fd).unwrap();
    ft.run_epoch(&fd).unwrap();
    let (_, feature_ckpt) = ft.finish().unwrap();
    let feature_before = by_name(feature_ckpt.model_tensors());

    let net = || load_feature_net(&feature_ckpt).unwrap();
    let seqs = |recs: &[Recording]| sequences(recs, 5, 5).unwrap();
    let train = SequenceSet::encode(&net(), &seqs(&pd.train))
        .unwrap()
        .unwrap();
    let val = SequenceSet::encode(&net(), &seqs(&pd.val)).unwrap();

    let mut straight = ClassifierTrainer::new(&cfg, net(), feature_ckpt.id().into()).unwrap();
    let mut losses = Vec::new();
    while !straight.should_stop() {
        losses.push(straight.run_epoch(&train, val.as_ref()).unwrap().train_loss);
    }
    let full = straight.checkpoint().unwrap();
    assert!(losses[9] < losses[0], "stage-2 NLL should fall: {losses:?}");

    let mut part = ClassifierTrainer::new(&cfg, net(), feature_ckpt.id().into()).unwrap();
    for _ in 0..4 {
        part.run_epoch(&train, val.as_ref()).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    part.checkpoint().unwrap().save(dir.path()).unwrap();
    let mut resumed =
        ClassifierTrainer::resume(&cfg, &Checkpoint::load(dir.path()).unwrap()).unwrap();
    while !resumed.should_stop() {
        resumed.run_epoch(&train, val.as_ref()).unwrap();
    }
    assert_eq!(full.tensors, resumed.checkpoint().unwrap().tensors);

    // The sleep encoder carried by the classifier checkpoint is bit-identical
    // to the feature checkpoint's.
    let (_, final_ckpt) = straight.finish().unwrap();
    let frozen = final_ckpt.group(groups::FEATURE);
    assert!(!frozen.is_empty());
    for t in &frozen {
        assert!(t.name.starts_with(names::ENCODER_SLEEP));
        assert_eq!(&feature_before[&t.name], t, "{} changed", t.name);
    }
    assert_eq!(
        final_ckpt.manifest.parent.as_deref(),
        Some(feature_ckpt.id())
    );
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let cfg = config(2, 2);
    let pd = PipelineData {
        train: data(3, 0, 0),
        val: data(1, 3, 0),
        unlabeled: data(2, 10, 7),
    };
    let run = |c: &PipelineConfig| {
        let mut log = Vec::new();
        let out = train_pipeline(c, &pd, &mut log).unwrap();
        (
            out.feature_checkpoint.id().to_string(),
            out.classifier_checkpoint.id().to_string(),
            timeless(&log),
        )
    };
    let a = run(&cfg);
    assert_eq!(a, run(&cfg));
    let mut other = cfg.clone();
    other.train.seed = 1;
    let b = run(&other);
    assert_ne!(a.0, b.0);
}

#[test]
fn unlabeled_data_changes_only_the_representation_stage() {
    let cfg = config(2, 2);
    let base = PipelineData {
        train: data(3, 0, 0),
        val: data(1, 3, 0),
        unlabeled: vec![],
    };
    let with = PipelineData {
        unlabeled: data(2, 10, 7),
        ..base.clone()
    };
    assert!(!unlabeled(&with.unlabeled).is_empty());
    let mut log = Vec::new();
    let a = train_pipeline(&cfg, &base, &mut log).unwrap();
    let b = train_pipeline(&cfg, &with, &mut log).unwrap();
    assert_ne!(a.feature_checkpoint.id(), b.feature_checkpoint.id());
    // Stage 2 started from the same feature checkpoint is the same computation.
    let (_, c) = train_classifier_stage(
        &cfg,
        load_feature_net(&b.feature_checkpoint).unwrap(),
        &b.feature_checkpoint,
        &base,
        &mut log,
    )
    .unwrap();
    assert_eq!(c.id(), b.classifier_checkpoint.id());
}

#[test]
fn fine_tuning_updates_only_the_sleep_path() {
    let cfg = config(1, 1);
    let source = PipelineData {
        train: data(3, 0, 0),
        val: vec![],
        unlabeled: vec![],
    };
    let mut log = Vec::new();
    let src = train_pipeline(&cfg, &source, &mut log).unwrap();
    let target = PipelineData {
        train: data(2, 20, 3),
        val: vec![],
        unlabeled: vec![],
    };
    let (out, report) = fine_tune(
        &src.classifier_checkpoint,
        &src.feature_checkpoint,
        &cfg,
        &target,
        &mut log,
    )
    .unwrap();
    assert!(report.reinitialized.is_empty());

    let before = by_name(src.feature_checkpoint.model_tensors());
    let after = by_name(out.feature_checkpoint.model_tensors());
    assert_eq!(
        before.keys().collect::<Vec<_>>(),
        after.keys().collect::<Vec<_>>()
    );
    let mut changed = 0;
    for (name, t) in &before {
        let tuned = FINE_TUNE_PREFIXES.iter().any(|p| name.starts_with(p));
        if tuned {
            changed += usize::from(t.data != after[name].data);
        } else {
            assert_eq!(t.data, after[name].data, "{name} should be untouched");
        }
    }
    assert!(changed > 0);
    assert_eq!(
        out.classifier_checkpoint.manifest.parent.as_deref(),
        Some(out.feature_checkpoint.id())
    );
}
