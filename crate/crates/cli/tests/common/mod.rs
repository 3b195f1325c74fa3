#![allow(dead_code)]

use std::path::{Path, PathBuf};

use graspswarm::dataset::write_cornell_example;
use graspswarm::imaging::{save_png, FrameTransform};
use graspswarm::{GraspRect, Raster};
use serde_json::Value;

pub const SCHEMA_BASE: &str = "https://graspswarm.example/schemas/";

pub fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas")
}

fn read_schema(name: &str) -> Value {
    let text = std::fs::read_to_string(schema_dir().join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Validates `doc` against `schemas/<name>`, panicking with every error.
pub fn assert_valid(name: &str, doc: &Value) {
    let mut opts = jsonschema::options();
    for shared in ["rect.schema.json", "config.schema.json"] {
        let res = jsonschema::Resource::from_contents(read_schema(shared)).unwrap();
        opts = opts.with_resource(format!("{SCHEMA_BASE}{shared}"), res);
    }
    let validator = opts.build(&read_schema(name)).unwrap();
    let errors: Vec<String> = validator.iter_errors(doc).map(|e| format!("{e} at {}", e.instance_path)).collect();
    assert!(errors.is_empty(), "{name}: {errors:#?}");
}

/// Runs the library entry point and parses its stdout as JSON.
pub fn run_json(args: &[&str]) -> anyhow::Result<Value> {
    let mut out = Vec::new();
    let mut full = vec!["graspswarm"];
    full.extend_from_slice(args);
    graspswarm_cli::run(full, &mut out)?;
    Ok(serde_json::from_slice(&out)?)
}

pub fn run_text(args: &[&str]) -> anyhow::Result<String> {
    let mut out = Vec::new();
    let mut full = vec!["graspswarm"];
    full.extend_from_slice(args);
    graspswarm_cli::run(full, &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

pub fn gray_png(dir: &Path, name: &str, w: usize, h: usize) -> PathBuf {
    let path = dir.join(name);
    save_png(&Raster::filled(w, h, 3, 0.5), &path).unwrap();
    path
}

/// Search-frame target shared by the scorer and the dataset labels.
pub fn target() -> GraspRect {
    GraspRect::new(112.0, 104.0, 35.0, 28.0, 52.0).unwrap()
}

pub fn target_spec() -> String {
    let t = target();
    format!("synthetic:{},{},{},{},{}", t.x, t.y, t.theta, t.h, t.w)
}

pub const TWO_PEAKS: &str = "synthetic:72,112,30,25,45;152,112,120,25,45";

/// `n` raw 640x480 frames, each with a dark blob under the target and a
/// different background, labeled with the target mapped back to the frame.
pub fn synthetic_dataset(dir: &Path, n: usize) -> GraspRect {
    let t = target();
    let tf = FrameTransform::for_frame(640, 480).unwrap();
    let raw = tf.unmap_rect(&t);
    for i in 0..n {
        let bg = 0.55 + 0.03 * i as f64;
        let img = Raster::from_fn(640, 480, 3, |c, r, ch| {
            let (dx, dy) = (c as f64 - raw.x, r as f64 - raw.y);
            if dx.abs() < 30.0 && dy.abs() < 30.0 {
                0.1
            } else {
                (bg + 0.02 * ch as f64 + 0.01 * ((c + r) % 5) as f64).min(1.0)
            }
        });
        let neg = raw.translated(60.0, 40.0);
        write_cornell_example(dir, &format!("pcd{:04}", 100 + i), &img, &[raw], &[neg]).unwrap();
    }
    t
}
