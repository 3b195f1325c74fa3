use std::fs;

use graspswarm::dataset::{
    evaluate, extract_labeled_patches, load_cornell, write_cornell_example, EvalMode, EvalOptions, ExampleError,
    GraspExample, MANIFEST_NAME,
};
use graspswarm::imaging::{load_image, Raster};
use graspswarm::GraspRect;

fn frame(seed: usize) -> Raster {
    Raster::from_fn(640, 480, 3, move |c, r, ch| ((c * 7 + r * 3 + ch * 11 + seed) % 256) as f64 / 255.0)
}

fn raw_label() -> GraspRect {
    GraspRect::new(330.0, 250.0, 35.0, 30.0, 80.0).unwrap()
}

/// Center crop 640x480 -> 300x300 at (170, 90), then scale by 224/300 with
/// pixel centers aligned.
fn expected_mapping(r: &GraspRect) -> [f64; 5] {
    let s = 224.0 / 300.0;
    [
        (r.x - 170.0 + 0.5) * s - 0.5,
        (r.y - 90.0 + 0.5) * s - 0.5,
        r.theta,
        r.h * s,
        r.w * s,
    ]
}

#[test]
fn load_maps_labels_into_search_frame() {
    let dir = tempfile::tempdir().unwrap();
    let neg = GraspRect::new(300.0, 200.0, 120.0, 20.0, 50.0).unwrap();
    write_cornell_example(dir.path(), "pcd0100", &frame(0), &[raw_label()], &[neg]).unwrap();
    write_cornell_example(dir.path(), "pcd0101", &frame(1), &[raw_label()], &[]).unwrap();
    fs::write(dir.path().join("objects.txt"), "pcd0100 mug\npcd0101 mug\n").unwrap();

    let set = load_cornell(dir.path()).unwrap();
    assert!(set.failures.is_empty());
    assert_eq!(set.skipped_rects, 0);
    let ids: Vec<_> = set.examples.iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids, ["pcd0100", "pcd0101"]);
    let ex = &set.examples[0];
    assert_eq!((ex.image.width(), ex.image.height()), (224, 224));
    assert_eq!(ex.object_id.as_deref(), Some("mug"));
    for (got, want) in ex.positives[0].to_vector().iter().zip(expected_mapping(&raw_label())) {
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
    assert_eq!(ex.negatives.len(), 1);
    assert!(set.examples[1].negatives.is_empty());
}

#[test]
fn per_example_failures_are_collected() {
    let dir = tempfile::tempdir().unwrap();
    write_cornell_example(dir.path(), "a", &frame(0), &[raw_label()], &[]).unwrap();
    write_cornell_example(dir.path(), "b", &frame(0), &[raw_label()], &[]).unwrap();
    write_cornell_example(dir.path(), "c", &frame(0), &[raw_label()], &[]).unwrap();
    fs::remove_file(dir.path().join("bcneg.txt")).unwrap();
    fs::write(dir.path().join("cr.png"), b"not a png").unwrap();
    let mut labels = fs::read_to_string(dir.path().join("acpos.txt")).unwrap();
    labels.push_str("NaN 1\n2 2\n3 3\n4 4\n");
    fs::write(dir.path().join("acpos.txt"), labels).unwrap();

    let set = load_cornell(dir.path()).unwrap();
    assert_eq!(set.examples.len(), 1);
    assert_eq!(set.skipped_rects, 1);
    assert_eq!(set.failures.len(), 2);
    assert!(matches!(set.failures[0], (ref id, ExampleError::MissingLabelFile(_)) if id == "b"));
    assert!(matches!(set.failures[1], (ref id, ExampleError::UnreadableImage { .. }) if id == "c"));
}

#[test]
fn empty_directory_gives_empty_set() {
    let dir = tempfile::tempdir().unwrap();
    let set = load_cornell(dir.path()).unwrap();
    assert!(set.examples.is_empty() && set.failures.is_empty());
    assert!(load_cornell(dir.path().join("missing")).is_err());
}

#[test]
fn patch_export_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let outside = GraspRect::new(180.0, 100.0, 0.0, 20.0, 60.0).unwrap();
    write_cornell_example(dir.path(), "x1", &frame(3), &[raw_label(), outside], &[raw_label().translated(-20.0, 5.0)])
        .unwrap();
    let set = load_cornell(dir.path()).unwrap();

    let out_a = tempfile::tempdir().unwrap();
    let out_b = tempfile::tempdir().unwrap();
    let n = extract_labeled_patches(&set.examples, out_a.path()).unwrap();
    assert_eq!(n, 2, "the label left of the crop is skipped");
    extract_labeled_patches(&set.examples, out_b.path()).unwrap();

    let manifest = fs::read_to_string(out_a.path().join(MANIFEST_NAME)).unwrap();
    assert_eq!(manifest, "x1,1,patches/x1_p000.ppm\nx1,0,patches/x1_n000.ppm\n");
    assert_eq!(manifest, fs::read_to_string(out_b.path().join(MANIFEST_NAME)).unwrap());
    for line in manifest.lines() {
        let rel = line.split(',').nth(2).unwrap();
        let a = fs::read(out_a.path().join(rel)).unwrap();
        assert_eq!(a, fs::read(out_b.path().join(rel)).unwrap());
        let img = load_image(out_a.path().join(rel)).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (24, 24, 3));
    }
}

fn examples(n: usize) -> Vec<GraspExample> {
    let label = GraspRect::new(100.0, 110.0, 20.0, 20.0, 40.0).unwrap();
    (0..n)
        .map(|i| GraspExample {
            id: format!("e{i}"),
            object_id: None,
            image: Raster::filled(224, 224, 3, 0.5),
            positives: vec![label.translated(i as f64, 0.0)],
            negatives: vec![],
        })
        .collect()
}

#[test]
fn oracle_detector_scores_perfectly() {
    let exs = examples(6);
    let oracle = |ex: &GraspExample, _: usize| Ok(vec![ex.positives[0]]);
    let report = evaluate(&oracle, &exs, EvalOptions::default()).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(report.successes, 6);
    assert!(report.timing.is_some());
    assert!(report.clone().without_timing().timing.is_none());
}

#[test]
fn single_mode_counts_first_prediction_only() {
    let exs = examples(4);
    let miss = GraspRect::new(20.0, 20.0, 100.0, 10.0, 30.0).unwrap();
    let det = |ex: &GraspExample, i: usize| {
        if i == 3 {
            Err("search failed".to_string())
        } else {
            Ok(vec![miss, ex.positives[0]])
        }
    };
    let single = evaluate(&det, &exs, EvalOptions::default()).unwrap();
    assert_eq!(single.successes, 0);
    assert_eq!(single.records[3].error.as_deref(), Some("search failed"));
    let multi = evaluate(&det, &exs, EvalOptions { mode: EvalMode::Multi, ..Default::default() }).unwrap();
    assert_eq!(multi.successes, 3);
    assert_eq!(multi.accuracy, 0.75);
    let par = evaluate(&det, &exs, EvalOptions { mode: EvalMode::Multi, parallel: true, ..Default::default() }).unwrap();
    assert_eq!(par.clone().without_timing().records, multi.clone().without_timing().records);
}
