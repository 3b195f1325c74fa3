//! Cornell-layout datasets: loading, label conversion, patch export and
//! rectangle-metric evaluation.
//!
//! A dataset directory holds, per example `<id>`, an image `<id>r.png` (or
//! `<id>r.ppm`, `<id>.png`, `<id>.ppm`) and label files `<id>cpos.txt` /
//! `<id>cneg.txt` with one `x y` vertex per line, four lines per rectangle.
//! An optional `objects.txt` maps `<id> <object-id>` for object-wise splits.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GraspRect, MatchCriteria, Point};
use crate::imaging::{self, extract_patch, preprocess, FrameTransform, ImagingError, Raster};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{0}: not a directory")]
    NotADirectory(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("no examples to evaluate")]
    Empty,
}

/// Why four vertices do not make a usable rectangle.
#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum VertexError {
    #[error("degenerate rectangle (edge lengths {0:.3}, {1:.3})")]
    DegenerateRect(f64, f64),
    #[error("non-finite vertex coordinates")]
    SkippedRect,
}

/// Per-example load failure; the example is dropped and loading continues.
#[derive(Debug, Error)]
pub enum ExampleError {
    #[error("missing label file {0}")]
    MissingLabelFile(PathBuf),
    #[error("unreadable image for {id}: {reason}")]
    UnreadableImage { id: String, reason: String },
}

/// One labeled image, already preprocessed to the search frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspExample {
    pub id: String,
    pub object_id: Option<String>,
    pub image: Raster,
    pub positives: Vec<GraspRect>,
    pub negatives: Vec<GraspRect>,
}

/// Converts four edge-adjacent vertices into a grasp rectangle.
///
/// The center is the centroid, `theta` and `w` come from the edge `p1 -> p2`,
/// and `h` from `p2 -> p3`. This inverts [`GraspRect::corners`].
pub fn rect_from_vertices(p: &[Point; 4]) -> Result<GraspRect, VertexError> {
    if p.iter().flatten().any(|v| !v.is_finite()) {
        return Err(VertexError::SkippedRect);
    }
    let e1 = [p[1][0] - p[0][0], p[1][1] - p[0][1]];
    let e2 = [p[2][0] - p[1][0], p[2][1] - p[1][1]];
    let w = e1[0].hypot(e1[1]);
    let h = e2[0].hypot(e2[1]);
    // height measured perpendicular to the first edge catches collinear input
    let h_perp = if w > 0.0 {
        (e1[0] * e2[1] - e1[1] * e2[0]).abs() / w
    } else {
        0.0
    };
    if w < 1.0 || h < 1.0 || h_perp < 1.0 {
        return Err(VertexError::DegenerateRect(w, h_perp));
    }
    let cx = p.iter().map(|q| q[0]).sum::<f64>() / 4.0;
    let cy = p.iter().map(|q| q[1]).sum::<f64>() / 4.0;
    let theta = e1[1].atan2(e1[0]).to_degrees();
    GraspRect::new(cx, cy, theta, h, w).map_err(|_| VertexError::DegenerateRect(w, h))
}

/// Parsed label file: rectangles in raw frame coordinates plus the number of
/// rectangles that were skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelFile {
    pub rects: Vec<GraspRect>,
    pub skipped: usize,
}

pub fn parse_labels(text: &str) -> LabelFile {
    let mut out = LabelFile::default();
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    for chunk in lines.chunks(4) {
        if chunk.len() < 4 {
            out.skipped += 1;
            continue;
        }
        let mut pts = [[f64::NAN; 2]; 4];
        for (pt, line) in pts.iter_mut().zip(chunk) {
            let mut it = line.split_whitespace().map(|t| t.parse::<f64>().unwrap_or(f64::NAN));
            *pt = [it.next().unwrap_or(f64::NAN), it.next().unwrap_or(f64::NAN)];
        }
        match rect_from_vertices(&pts) {
            Ok(r) => out.rects.push(r),
            Err(_) => out.skipped += 1,
        }
    }
    out
}

/// Writes rectangles as Cornell vertex lines.
pub fn format_labels(rects: &[GraspRect]) -> String {
    let mut s = String::new();
    for r in rects {
        for [x, y] in r.corners() {
            s.push_str(&format!("{x} {y}\n"));
        }
    }
    s
}

#[derive(Debug, Default)]
pub struct LoadedDataset {
    pub examples: Vec<GraspExample>,
    /// Rectangles dropped for NaN or degenerate vertices.
    pub skipped_rects: usize,
    pub failures: Vec<(String, ExampleError)>,
}

fn find_image(dir: &Path, id: &str) -> Option<PathBuf> {
    [format!("{id}r.png"), format!("{id}r.ppm"), format!("{id}.png"), format!("{id}.ppm")]
        .into_iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
}

fn read_objects(dir: &Path) -> BTreeMap<String, String> {
    let Ok(text) = fs::read_to_string(dir.join("objects.txt")) else {
        return BTreeMap::new();
    };
    text.lines()
        .filter_map(|l| {
            let mut it = l.split_whitespace();
            Some((it.next()?.to_string(), it.next()?.to_string()))
        })
        .collect()
}

fn load_one(dir: &Path, id: &str, objects: &BTreeMap<String, String>) -> Result<(GraspExample, usize), ExampleError> {
    let read_labels = |suffix: &str| {
        let path = dir.join(format!("{id}{suffix}"));
        fs::read_to_string(&path)
            .map(|t| parse_labels(&t))
            .map_err(|_| ExampleError::MissingLabelFile(path))
    };
    let pos = read_labels("cpos.txt")?;
    let neg = read_labels("cneg.txt")?;
    let unreadable = |reason: String| ExampleError::UnreadableImage {
        id: id.to_string(),
        reason,
    };
    let path = find_image(dir, id).ok_or_else(|| unreadable("no image file".into()))?;
    let raw = imaging::load_image(&path).map_err(|e| unreadable(e.to_string()))?;
    let transform = FrameTransform::for_frame(raw.width(), raw.height()).map_err(|e| unreadable(e.to_string()))?;
    let image = preprocess(&raw).map_err(|e| unreadable(e.to_string()))?;
    Ok((
        GraspExample {
            id: id.to_string(),
            object_id: objects.get(id).cloned(),
            image,
            positives: pos.rects.iter().map(|r| transform.map_rect(r)).collect(),
            negatives: neg.rects.iter().map(|r| transform.map_rect(r)).collect(),
        },
        pos.skipped + neg.skipped,
    ))
}

/// Loads every example in `dir`, sorted by id. Per-example failures are
/// collected rather than returned as errors.
pub fn load_cornell(dir: impl AsRef<Path>) -> Result<LoadedDataset, DatasetError> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(DatasetError::NotADirectory(dir.to_path_buf()));
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix("cpos.txt") {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    let objects = read_objects(dir);
    let results: Vec<_> = ids.par_iter().map(|id| (id.clone(), load_one(dir, id, &objects))).collect();
    let mut out = LoadedDataset::default();
    for (id, r) in results {
        match r {
            Ok((ex, skipped)) => {
                out.skipped_rects += skipped;
                out.examples.push(ex);
            }
            Err(e) => out.failures.push((id, e)),
        }
    }
    Ok(out)
}

/// Writes one example in the on-disk layout read by [`load_cornell`]. Label
/// rectangles are in raw frame coordinates.
pub fn write_cornell_example(
    dir: impl AsRef<Path>,
    id: &str,
    image: &Raster,
    positives: &[GraspRect],
    negatives: &[GraspRect],
) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    imaging::save_png(image, dir.join(format!("{id}r.png")))?;
    fs::write(dir.join(format!("{id}cpos.txt")), format_labels(positives))?;
    fs::write(dir.join(format!("{id}cneg.txt")), format_labels(negatives))?;
    Ok(())
}

/// Name of the manifest written by [`extract_labeled_patches`].
pub const MANIFEST_NAME: &str = "manifest.csv";

/// Writes a 24x24 PPM per in-bounds label rectangle under `out_dir/patches/`
/// and a manifest of `id,label,relative-path` lines (label 1 = positive).
/// Returns the number of patches written.
pub fn extract_labeled_patches(examples: &[GraspExample], out_dir: impl AsRef<Path>) -> Result<usize, DatasetError> {
    let out_dir = out_dir.as_ref();
    let patch_dir = out_dir.join("patches");
    fs::create_dir_all(&patch_dir)?;
    let mut manifest = String::new();
    let mut count = 0;
    for ex in examples {
        let labeled = ex
            .positives
            .iter()
            .map(|r| (1, "p", r))
            .enumerate()
            .chain(ex.negatives.iter().map(|r| (0, "n", r)).enumerate());
        for (idx, (label, tag, rect)) in labeled {
            let Ok(patch) = extract_patch(&ex.image, rect) else {
                continue;
            };
            let rel = format!("patches/{}_{tag}{idx:03}.ppm", ex.id);
            imaging::save_ppm(patch.raster(), out_dir.join(&rel))?;
            manifest.push_str(&format!("{},{label},{rel}\n", ex.id));
            count += 1;
        }
    }
    let mut f = fs::File::create(out_dir.join(MANIFEST_NAME))?;
    f.write_all(manifest.as_bytes())?;
    Ok(count)
}

/// Assigns examples to `k` folds so that all images of one object share a
/// fold. Examples without an object id form their own group.
pub fn object_folds(examples: &[GraspExample], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let k = k.max(1);
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        let key = ex.object_id.clone().unwrap_or_else(|| format!("#{}", ex.id));
        groups.entry(key).or_default().push(i);
    }
    let mut keys: Vec<String> = groups.keys().cloned().collect();
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (n, key) in keys.iter().enumerate() {
        folds[n % k].extend(&groups[key]);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Only the first prediction counts.
    #[default]
    Single,
    /// Success if any prediction matches.
    Multi,
}

/// Anything that proposes grasps for a dataset example.
pub trait Detector: Sync {
    /// `index` is the example's position in the evaluated sequence, usable
    /// for seeding.
    fn detect(&self, example: &GraspExample, index: usize) -> Result<Vec<GraspRect>, String>;
}

impl<F> Detector for F
where
    F: Fn(&GraspExample, usize) -> Result<Vec<GraspRect>, String> + Sync,
{
    fn detect(&self, example: &GraspExample, index: usize) -> Result<Vec<GraspRect>, String> {
        self(example, index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub success: bool,
    pub predictions: Vec<GraspRect>,
    /// Index of the first positive label matched.
    pub matched_label: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub max_ms: f64,
    /// False when detections ran concurrently and times are per call.
    pub sequential: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mode: EvalMode,
    pub criteria: MatchCriteria,
    pub total: usize,
    pub successes: usize,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
    pub records: Vec<ExampleRecord>,
}

impl EvaluationReport {
    /// Drops wall-clock fields, leaving only seed-determined content.
    pub fn without_timing(mut self) -> Self {
        self.timing = None;
        for r in &mut self.records {
            r.elapsed_ms = None;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub mode: EvalMode,
    pub criteria: MatchCriteria,
    pub parallel: bool,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Runs the detector on each example and scores it with the rectangle metric.
pub fn evaluate(
    detector: &dyn Detector,
    examples: &[GraspExample],
    opts: EvalOptions,
) -> Result<EvaluationReport, DatasetError> {
    if examples.is_empty() {
        return Err(DatasetError::Empty);
    }
    let run_one = |(i, ex): (usize, &GraspExample)| {
        let start = Instant::now();
        let out = detector.detect(ex, i);
        let ms = start.elapsed().as_secs_f64() * 1e3;
        let (predictions, error) = match out {
            Ok(p) => (p, None),
            Err(e) => (Vec::new(), Some(e)),
        };
        let considered = match opts.mode {
            EvalMode::Single => &predictions[..predictions.len().min(1)],
            EvalMode::Multi => &predictions[..],
        };
        let matched_label = ex
            .positives
            .iter()
            .position(|label| considered.iter().any(|p| opts.criteria.matches(p, label)));
        ExampleRecord {
            id: ex.id.clone(),
            success: matched_label.is_some(),
            predictions,
            matched_label,
            error,
            elapsed_ms: Some(ms),
        }
    };
    let records: Vec<ExampleRecord> = if opts.parallel {
        examples.par_iter().enumerate().map(run_one).collect()
    } else {
        examples.iter().enumerate().map(run_one).collect()
    };
    let successes = records.iter().filter(|r| r.success).count();
    let mut times: Vec<f64> = records.iter().filter_map(|r| r.elapsed_ms).collect();
    times.sort_by(f64::total_cmp);
    let timing = Timing {
        mean_ms: times.iter().sum::<f64>() / times.len() as f64,
        p50_ms: percentile(&times, 0.5),
        p90_ms: percentile(&times, 0.9),
        max_ms: *times.last().unwrap(),
        sequential: !opts.parallel,
    };
    Ok(EvaluationReport {
        mode: opts.mode,
        criteria: opts.criteria,
        total: records.len(),
        successes,
        accuracy: successes as f64 / records.len() as f64,
        timing: Some(timing),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x: f64, y: f64, t: f64, h: f64, w: f64) -> GraspRect {
        GraspRect::new(x, y, t, h, w).unwrap()
    }

    #[test]
    fn vertices_round_trip() {
        let r = rect(50.0, 60.0, 0.0, 10.0, 20.0);
        let back = rect_from_vertices(&r.corners()).unwrap();
        for (a, b) in r.to_vector().iter().zip(back.to_vector()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn vertices_quarter_turn_canonical() {
        let r = rect(50.0, 60.0, 90.0, 10.0, 20.0);
        let back = rect_from_vertices(&r.corners()).unwrap();
        // w is the first edge, so the stored orientation survives
        assert!((back.theta - 90.0).abs() < 1e-9);
        assert!((back.w - 20.0).abs() < 1e-9 && (back.h - 10.0).abs() < 1e-9);
    }

    #[test]
    fn collinear_vertices_degenerate() {
        let pts = [[0.0, 0.0], [10.0, 0.0], [20.0, 0.0], [30.0, 0.0]];
        assert!(matches!(rect_from_vertices(&pts), Err(VertexError::DegenerateRect(..))));
        let tiny = [[0.0, 0.0], [0.5, 0.0], [0.5, 10.0], [0.0, 10.0]];
        assert!(matches!(rect_from_vertices(&tiny), Err(VertexError::DegenerateRect(..))));
    }

    #[test]
    fn nan_vertices_skipped() {
        let pts = [[0.0, 0.0], [f64::NAN, 0.0], [20.0, 5.0], [0.0, 5.0]];
        assert_eq!(rect_from_vertices(&pts), Err(VertexError::SkippedRect));
        let text = "0 0\n20 0\n20 10\n0 10\nNaN NaN\n5 5\n6 6\n7 7\n";
        let parsed = parse_labels(text);
        assert_eq!(parsed.rects.len(), 1);
        assert_eq!(parsed.skipped, 1);
    }

    #[test]
    fn label_text_round_trip() {
        let rs = vec![rect(100.0, 200.0, 33.0, 15.0, 40.0), rect(300.5, 250.25, 170.0, 20.0, 60.0)];
        let parsed = parse_labels(&format_labels(&rs));
        assert_eq!(parsed.skipped, 0);
        for (a, b) in rs.iter().zip(&parsed.rects) {
            for (u, v) in a.to_vector().iter().zip(b.to_vector()) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn folds_keep_objects_together() {
        let img = Raster::filled(2, 2, 1, 0.0);
        let examples: Vec<GraspExample> = (0..12)
            .map(|i| GraspExample {
                id: format!("e{i:02}"),
                object_id: Some(format!("o{}", i / 3)),
                image: img.clone(),
                positives: vec![],
                negatives: vec![],
            })
            .collect();
        let folds = object_folds(&examples, 5, 7);
        assert_eq!(folds.iter().map(Vec::len).sum::<usize>(), 12);
        for f in &folds {
            let objs: std::collections::BTreeSet<_> = f.iter().map(|&i| i / 3).collect();
            for o in objs {
                assert!((0..3).all(|j| f.contains(&(o * 3 + j))));
            }
        }
        assert_eq!(folds, object_folds(&examples, 5, 7));
    }

    #[test]
    fn empty_evaluation_is_error() {
        let det = |_: &GraspExample, _: usize| Ok(vec![]);
        assert!(matches!(evaluate(&det, &[], EvalOptions::default()), Err(DatasetError::Empty)));
    }
}
