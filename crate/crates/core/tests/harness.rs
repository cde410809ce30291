use std::collections::BTreeMap;
use std::path::Path;

use vcas_core::harness::{
    compute_stats, evaluate_dataset, generate_scene, load_manifest, synth_dataset, EvalOptions, FrameMetrics,
    FrameRecord, Manifest, SceneSpec, Split, Track,
};
use vcas_core::label::{encode_panoptic_png, LabelMap};
use vcas_core::metrics::{match_instances, CaCounts, MatchOptions, VoidPolicy};
use vcas_core::openset::{train, EmbeddingMap, TrainConfig};

fn perfect_spec() -> SceneSpec {
    SceneSpec {
        iou_range: [1.0, 1.0],
        miss_rate: 0.0,
        false_positives: 0,
        ..Default::default()
    }
}

fn write_labels(dir: &Path, name: &str, map: &LabelMap) -> String {
    std::fs::write(dir.join(name), encode_panoptic_png(map).unwrap()).unwrap();
    name.to_string()
}

fn opts(workers: usize) -> EvalOptions {
    EvalOptions {
        workers: Some(workers),
        ..Default::default()
    }
}

#[test]
fn perfect_predictions_score_100() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_dataset(3, 5, &perfect_spec(), dir.path()).unwrap();
    let ca = evaluate_dataset(&m, Track::Ca, &opts(2)).unwrap().to_csv();
    let all = ca.lines().find(|l| l.starts_with("all,")).unwrap();
    assert!(all.starts_with("all,5,0,100.0,100.0,100.0,"), "{ca}");
    let pan = evaluate_dataset(&m, Track::Panoptic, &opts(2)).unwrap().to_csv();
    assert!(pan.lines().any(|l| l == "all,5,0,100.0,100.0,100.0"), "{pan}");
    let os = evaluate_dataset(&m, Track::Openset, &opts(2)).unwrap().to_csv();
    assert!(os.lines().any(|l| l == "all,5,0,100.0,100.0"), "{os}");
}

#[test]
fn two_partial_matches_and_two_misses() {
    // IoUs 0.8 and 0.6, two unmatched gt instances: SQ 0.7, RQ 0.5.
    let dir = tempfile::tempdir().unwrap();
    let gt = LabelMap::from_fn(40, 40, |x, y| match (x / 20, y / 20, x % 20 < 10 && y % 20 < 10) {
        (cx, cy, true) => 1 + cx as u32 + 2 * cy as u32,
        _ => 0,
    });
    let pred = LabelMap::from_fn(40, 40, |x, y| match gt.get(x, y) {
        1 if y < 8 => 7,
        2 if y < 6 => 9,
        _ => 0,
    });
    let mut m = Manifest::new(dir.path());
    let mut f = FrameRecord::new("f", Split::Test);
    f.ca_gt = Some(write_labels(dir.path(), "gt.png", &gt));
    f.ca_pred = Some(write_labels(dir.path(), "pred.png", &pred));
    m.frames.push(f);
    let r = evaluate_dataset(&m, Track::Ca, &opts(1)).unwrap();
    let csv = r.to_csv();
    assert!(csv.lines().any(|l| l == "all,1,0,70.0,50.0,35.0,2,0,2"), "{csv}");
}

#[test]
fn ego_flow_suppression_on_static_scene() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec {
        moving_fraction: 0.0,
        ..Default::default()
    };
    let m = synth_dataset(9, 4, &spec, dir.path()).unwrap();
    let with = evaluate_dataset(&m, Track::Ca, &EvalOptions { efs: true, ..opts(1) }).unwrap();
    let without = evaluate_dataset(&m, Track::Ca, &opts(1)).unwrap();
    let mut raw_total = 0.0;
    for (a, b) in with.frames.iter().zip(&without.frames) {
        let (Some(FrameMetrics::Ca { flow: Some(fa), .. }), Some(FrameMetrics::Ca { flow: Some(fb), .. })) = (&a.metrics, &b.metrics)
        else {
            panic!("missing flow diagnostics");
        };
        assert!(fa.suppressed && !fb.suppressed);
        for i in &fa.instances {
            assert_eq!(i.mean_flow, Some(0.0), "instance {} of {}", i.id, a.id);
        }
        raw_total += fb.instances.iter().filter_map(|i| i.mean_flow).sum::<f64>();
    }
    assert!(raw_total > 1.0, "camera motion should show up without suppression");
    let row = with.aggregate.last().unwrap().flow.as_ref().unwrap();
    assert_eq!(row.residual_static, Some(0.0));
    assert_eq!(row.moving_instances, 0);
    assert!(with.to_csv().lines().last().unwrap().contains(",yes,0.000,-,"));
}

#[test]
fn suppression_isolates_moving_objects() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec {
        moving_fraction: 0.5,
        things: 6,
        ..Default::default()
    };
    let m = synth_dataset(21, 6, &spec, dir.path()).unwrap();
    let with = evaluate_dataset(&m, Track::Ca, &EvalOptions { efs: true, ..opts(1) }).unwrap();
    let without = evaluate_dataset(&m, Track::Ca, &opts(1)).unwrap();
    let a = with.aggregate.last().unwrap().flow.clone().unwrap();
    let b = without.aggregate.last().unwrap().flow.clone().unwrap();
    assert_eq!(a.residual_static, Some(0.0));
    assert!(a.residual_moving.unwrap() >= 1.0 - 1.0 / 64.0);
    assert!(a.flow_motion_iou > b.flow_motion_iou);
}

#[test]
fn failures_are_reported_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = synth_dataset(4, 3, &SceneSpec::default(), dir.path()).unwrap();
    m.frames[1].ca_pred = None;
    let r = evaluate_dataset(&m, Track::Ca, &opts(2)).unwrap();
    assert_eq!(r.frames.len(), 3);
    assert_eq!(r.failures, 1);
    assert!(r.frames[1].error.as_ref().unwrap().contains("ca_pred"));
    assert_eq!(r.aggregate.last().unwrap().failed, 1);
    // EFS without depth is a per-frame failure too.
    m.frames[1].ca_pred = m.frames[0].ca_pred.clone();
    m.frames[2].depth = None;
    let r = evaluate_dataset(&m, Track::Ca, &EvalOptions { efs: true, ..opts(2) }).unwrap();
    assert_eq!(r.failures, 1);
    assert!(r.frames[2].error.as_ref().unwrap().contains("depth"));
}

#[test]
fn aggregate_equals_stacked_frames() {
    let spec = SceneSpec::default();
    let dir = tempfile::tempdir().unwrap();
    let m = synth_dataset(17, 6, &spec, dir.path()).unwrap();
    let r = evaluate_dataset(&m, Track::Ca, &opts(3)).unwrap();
    // Stack every frame vertically with disjoint ids and match once.
    let scenes: Vec<(LabelMap, LabelMap)> = m
        .frames
        .iter()
        .map(|f| {
            let load = |rel: &Option<String>| vcas_core::harness::load_label_map(&m, rel.as_ref().unwrap()).unwrap();
            (load(&f.ca_gt), load(&f.ca_pred))
        })
        .collect();
    let (w, h) = scenes[0].0.dims();
    let stack = |pick: fn(&(LabelMap, LabelMap)) -> &LabelMap| {
        LabelMap::from_fn(w, h * scenes.len(), |x, y| {
            let id = pick(&scenes[y / h]).get(x, y % h);
            if id == 0 { 0 } else { id + 100 * (y / h) as u32 }
        })
    };
    let mr = match_instances(
        &stack(|s| &s.1),
        &stack(|s| &s.0),
        MatchOptions {
            class_aware: false,
            void_policy: VoidPolicy::Background,
        },
    )
    .unwrap();
    let whole = CaCounts::from_match(&mr).report();
    let agg = r.aggregate.last().unwrap().ca.unwrap();
    assert_eq!((agg.tp, agg.fp, agg.fn_), (whole.tp, whole.fp, whole.fn_));
    assert!((agg.sq - whole.sq).abs() < 1e-12 && (agg.caq - whole.caq).abs() < 1e-12);
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_dataset(5, 12, &SceneSpec::default(), dir.path()).unwrap();
    for track in [Track::Ca, Track::Panoptic, Track::Openset] {
        let base = evaluate_dataset(&m, track, &EvalOptions { efs: track == Track::Ca, ..opts(1) }).unwrap();
        for w in [2, 5] {
            let r = evaluate_dataset(&m, track, &EvalOptions { efs: track == Track::Ca, ..opts(w) }).unwrap();
            assert_eq!(r.to_json().unwrap(), base.to_json().unwrap());
            assert_eq!(r.to_csv(), base.to_csv());
        }
    }
}

#[test]
fn split_rows_and_filter() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_dataset(8, 10, &SceneSpec::default(), dir.path()).unwrap();
    let r = evaluate_dataset(&m, Track::Ca, &opts(1)).unwrap();
    let splits: Vec<&str> = r.aggregate.iter().map(|a| a.split.as_str()).collect();
    assert_eq!(splits, ["train", "test", "all"]);
    assert_eq!((r.aggregate[0].frames, r.aggregate[1].frames), (8, 2));
    let t = evaluate_dataset(&m, Track::Ca, &EvalOptions { split: Some(Split::Test), ..opts(1) }).unwrap();
    assert_eq!(t.frames.len(), 2);
}

#[test]
fn stats_count_flags_and_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let empty = Manifest::new(dir.path());
    assert_eq!(compute_stats(&empty).unwrap(), Default::default());

    let mut m = Manifest::new(dir.path());
    let mut f = FrameRecord::new("a", Split::Train);
    f.motion = Some(BTreeMap::from([(1, true), (2, true), (3, false)]));
    m.frames.push(f);
    let mut f = FrameRecord::new("b", Split::Test);
    f.motion = Some(BTreeMap::from([(1, true), (2, false)]));
    m.frames.push(f);
    let s = compute_stats(&m).unwrap();
    assert_eq!((s.total.moving, s.total.static_), (3, 2));
    assert_eq!((s.train.moving, s.test.static_), (2, 1));

    m.frames.push(FrameRecord::new("c", Split::Test));
    assert!(compute_stats(&m).is_err());
}

#[test]
fn stats_match_construction() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec::default();
    let m = synth_dataset(2, 4, &spec, dir.path()).unwrap();
    let s = compute_stats(&m).unwrap();
    let mut moving = 0;
    let mut pixels = 0u64;
    let mut seed_rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(2);
    for _ in 0..4 {
        let scene = generate_scene(rand::Rng::random(&mut seed_rng), &spec).unwrap();
        moving += scene.objects.iter().filter(|o| o.moving).count() as u64;
        pixels += scene.panoptic_gt.ids().iter().filter(|&&i| i != 0).count() as u64;
    }
    assert_eq!(s.total.moving, moving);
    assert_eq!(s.total.total(), 4 * (spec.things + spec.unknowns) as u64);
    assert_eq!(s.class_pixels.values().sum::<u64>(), pixels);
}

#[test]
fn open_set_checkpoint_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_dataset(6, 10, &SceneSpec::default(), dir.path()).unwrap();
    let c = m.num_known_classes.unwrap();
    let batches: Vec<EmbeddingMap> = m
        .frames_in(Some(Split::Train))
        .map(|f| {
            let feats = vcas_core::harness::load_features(&m, f.embeddings.as_ref().unwrap()).unwrap();
            let labels = vcas_core::harness::load_label_map(&m, f.semantic_gt.as_ref().unwrap()).unwrap();
            EmbeddingMap::from_label_map(feats, &labels, c).unwrap()
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 10,
        milestones: vec![8],
        max_per_class: 16,
        ..Default::default()
    };
    let out = train(&batches, c, &cfg).unwrap();
    let r = evaluate_dataset(
        &m,
        Track::Openset,
        &EvalOptions {
            checkpoint: Some(out.params),
            split: Some(Split::Test),
            ..opts(1)
        },
    )
    .unwrap();
    let o = r.aggregate.last().unwrap().openset.clone().unwrap();
    assert!(o.miou.unwrap() > 0.9 && o.ca_iou > 0.8, "{o:?}");
}

#[test]
fn manifest_written_by_synth_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_dataset(1, 3, &SceneSpec::default(), dir.path()).unwrap();
    assert_eq!(load_manifest(dir.path().join("manifest.json")).unwrap(), m);
    let again = tempfile::tempdir().unwrap();
    synth_dataset(1, 3, &SceneSpec::default(), again.path()).unwrap();
    for f in &m.frames {
        for rel in [&f.ca_gt, &f.flow, &f.embeddings] {
            let rel = rel.as_ref().unwrap();
            assert_eq!(std::fs::read(dir.path().join(rel)).unwrap(), std::fs::read(again.path().join(rel)).unwrap());
        }
    }
}
