//! Command-line front end: detection, multigrasp, dataset evaluation, patch
//! export and weight inspection. Every command prints one JSON report (or a
//! text table for `weights-info`).

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use graspswarm::dataset::{self, EvalMode, EvalOptions, EvaluationReport, GraspExample};
use graspswarm::imaging::{self, draw_rect, FrameTransform, Raster};
use graspswarm::nn::{LayerKind, WeightsBundle};
use graspswarm::pso::{self, PsoError, UpdateRule};
use graspswarm::GraspRect;
use serde::Serialize;

pub use config::{FileConfig, MultiSettings, RunConfig, ScorerSpec};

pub const SEED_ENV: &str = "GRASP_PSO_SEED";

#[derive(Debug, Parser)]
#[command(name = "graspswarm", version, about = "Grasp rectangle detection by particle swarm search")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find the best grasp in one image.
    Detect {
        image: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Report several separated grasps from one search.
    Multigrasp {
        image: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        multi: MultiArgs,
    },
    /// Score detections on a labeled dataset with the rectangle metric.
    Evaluate {
        dataset: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        multi: MultiArgs,
        /// `single` judges the top grasp, `multi` any of the multigrasp output.
        #[arg(long)]
        mode: Option<String>,
        /// Drop wall-clock fields from the report.
        #[arg(long)]
        omit_timing: bool,
    },
    /// Write a 24x24 patch per label rectangle plus a manifest.
    ExtractPatches { dataset: PathBuf, out_dir: PathBuf },
    /// Print the layer table of a weight file.
    WeightsInfo { path: PathBuf },
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML file with defaults for any of these options.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Shorthand for `--scorer cnn:<path>`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// `cnn:<weights>` or `synthetic:x,y,theta,h,w[;...]`.
    #[arg(long)]
    pub scorer: Option<String>,
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Stop once the best score reaches this.
    #[arg(long)]
    pub prob: Option<f64>,
    /// Score the initial swarm must reach.
    #[arg(long)]
    pub init: Option<f64>,
    #[arg(long)]
    pub max_init: Option<usize>,
    /// `standard-difference` or `as-printed`.
    #[arg(long)]
    pub update_rule: Option<String>,
    /// `global` or `ring:<radius>`.
    #[arg(long)]
    pub topology: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Search the image as given instead of center-cropping and resizing it.
    #[arg(long)]
    pub no_preprocess: bool,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the search image with the found grasps drawn on it (PPM).
    #[arg(long)]
    pub annotate: Option<PathBuf>,
    /// Write the per-iteration best as JSON lines.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct MultiArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub floor: Option<f64>,
    #[arg(long = "min-sep")]
    pub min_sep: Option<f64>,
}

impl RunArgs {
    /// Effective configuration: flags over the config file over defaults.
    pub fn resolve(&self, multi: Option<&MultiArgs>) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let scorer = config::select_scorer(self.scorer.as_deref(), self.weights.as_deref())?
            .map(Ok)
            .or_else(|| {
                config::select_scorer(file.scorer.as_deref(), file.weights.as_deref()).transpose()
            })
            .transpose()?
            .ok_or_else(|| anyhow!("no scorer selected; pass --scorer or --weights"))?;
        let mut cfg = RunConfig::new(scorer);
        if let Some(s) = file.swarm {
            cfg.swarm = s;
        }
        if let Some(v) = file.preprocess {
            cfg.preprocess = v;
        }
        if let Some(v) = file.synthetic_scales {
            cfg.synthetic_scales = v;
        }
        if let Some(v) = file.multigrasp {
            cfg.multigrasp = v;
        }
        if let Some(v) = file.evaluation {
            cfg.evaluation = v;
        }
        let sw = &mut cfg.swarm;
        macro_rules! flag {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        flag!(self.particles => sw.n_particles);
        flag!(self.iters => sw.max_iter);
        flag!(self.prob => sw.prob_threshold);
        flag!(self.init => sw.init_threshold);
        flag!(self.max_init => sw.max_init);
        flag!(self.workers => sw.workers);
        if let Some(r) = &self.update_rule {
            sw.update_rule = r.parse::<UpdateRule>().map_err(|e| anyhow!(e))?;
        }
        if let Some(t) = &self.topology {
            sw.topology = config::parse_topology(t)?;
        }
        let seed = self.seed.unwrap_or(sw.seed);
        sw.validate()?;
        if self.no_preprocess {
            cfg.preprocess = false;
        }
        if let Some(m) = multi {
            flag!(m.k => cfg.multigrasp.k);
            flag!(m.floor => cfg.multigrasp.floor);
            flag!(m.min_sep => cfg.multigrasp.min_separation);
        }
        cfg.outputs = config::OutputPaths {
            out: self.out.clone(),
            annotate: self.annotate.clone(),
            trajectory: self.trajectory.clone(),
        };
        Ok(cfg.with_seed(seed))
    }
}

/// True when the error is a failed swarm initialization.
pub fn is_init_failure(err: &anyhow::Error) -> bool {
    matches!(err.downcast_ref::<PsoError>(), Some(PsoError::InitFailed { .. }))
}

/// Process exit status for a command error: 2 for a failed initialization,
/// 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if is_init_failure(err) {
        2
    } else {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RectOut {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub h: f64,
    pub w: f64,
}

impl From<GraspRect> for RectOut {
    fn from(r: GraspRect) -> Self {
        Self {
            x: r.x,
            y: r.y,
            theta: r.theta,
            h: r.h,
            w: r.w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectReport {
    pub command: &'static str,
    #[serde(flatten)]
    pub rect: RectOut,
    pub score: f64,
    pub iterations: usize,
    pub initializations: usize,
    pub seed: u64,
    /// The grasp in original image coordinates, when the image was
    /// preprocessed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame: Option<RectOut>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraspOut {
    #[serde(flatten)]
    pub rect: RectOut,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame: Option<RectOut>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultigraspReport {
    pub command: &'static str,
    pub grasps: Vec<GraspOut>,
    pub iterations: usize,
    pub initializations: usize,
    pub seed: u64,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluateReport {
    pub command: &'static str,
    pub dataset: PathBuf,
    pub skipped_rects: usize,
    pub load_failures: Vec<LoadFailure>,
    #[serde(flatten)]
    pub evaluation: EvaluationReport,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractReport {
    pub command: &'static str,
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub examples: usize,
    pub patches: usize,
    pub manifest: PathBuf,
    pub skipped_rects: usize,
    pub load_failures: Vec<LoadFailure>,
}

struct SearchImage {
    image: Raster,
    transform: Option<FrameTransform>,
}

fn load_search_image(path: &Path, preprocess: bool) -> Result<SearchImage> {
    let raw = imaging::load_image(path).with_context(|| format!("reading {}", path.display()))?;
    if !preprocess {
        return Ok(SearchImage {
            image: raw,
            transform: None,
        });
    }
    let transform = FrameTransform::for_frame(raw.width(), raw.height())?;
    Ok(SearchImage {
        image: imaging::preprocess(&raw)?,
        transform: Some(transform),
    })
}

fn write_annotation(path: &Path, img: &Raster, rects: &[GraspRect]) -> Result<()> {
    const COLORS: [[f64; 3]; 4] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.4, 1.0], [1.0, 1.0, 0.0]];
    let mut canvas = img.to_rgb();
    for (i, r) in rects.iter().enumerate() {
        canvas = draw_rect(&canvas, r, COLORS[i % COLORS.len()]);
    }
    imaging::save_ppm(&canvas, path).with_context(|| format!("writing {}", path.display()))
}

fn write_trajectory(path: &Path, result: &pso::SearchResult) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    result.write_trajectory_jsonl(&mut f)?;
    f.flush()?;
    Ok(())
}

pub fn cmd_detect(image: &Path, cfg: &RunConfig) -> Result<DetectReport> {
    let scorer = cfg.build_scorer()?;
    let input = load_search_image(image, cfg.preprocess)?;
    let result = pso::search(&input.image, &scorer, &cfg.swarm)?;
    if let Some(p) = &cfg.outputs.annotate {
        write_annotation(p, &input.image, &[result.best])?;
    }
    if let Some(p) = &cfg.outputs.trajectory {
        write_trajectory(p, &result)?;
    }
    Ok(DetectReport {
        command: "detect",
        rect: result.best.into(),
        score: result.best_score,
        iterations: result.iterations_used,
        initializations: result.initializations_used,
        seed: result.seed,
        frame: input.transform.map(|t| t.unmap_rect(&result.best).into()),
        config: cfg.clone(),
    })
}

pub fn cmd_multigrasp(image: &Path, cfg: &RunConfig) -> Result<MultigraspReport> {
    let scorer = cfg.build_scorer()?;
    let input = load_search_image(image, cfg.preprocess)?;
    let m = cfg.multigrasp;
    let out = pso::multigrasp(&input.image, &scorer, &cfg.swarm, m.k, m.floor, m.min_separation)?;
    if let Some(p) = &cfg.outputs.annotate {
        let rects: Vec<GraspRect> = out.grasps.iter().map(|g| g.rect).collect();
        write_annotation(p, &input.image, &rects)?;
    }
    if let Some(p) = &cfg.outputs.trajectory {
        write_trajectory(p, &out.search)?;
    }
    Ok(MultigraspReport {
        command: "multigrasp",
        grasps: out
            .grasps
            .iter()
            .map(|g| GraspOut {
                rect: g.rect.into(),
                score: g.score,
                frame: input.transform.map(|t| t.unmap_rect(&g.rect).into()),
            })
            .collect(),
        iterations: out.search.iterations_used,
        initializations: out.search.initializations_used,
        seed: out.search.seed,
        config: cfg.clone(),
    })
}

fn failures(list: Vec<(String, dataset::ExampleError)>) -> Vec<LoadFailure> {
    list.into_iter()
        .map(|(id, e)| LoadFailure {
            id,
            error: e.to_string(),
        })
        .collect()
}

/// Runs the configured detector on every example of a dataset directory.
/// Example `i` is searched with seed `seed + i`.
pub fn cmd_evaluate(dataset_dir: &Path, cfg: &RunConfig) -> Result<EvaluateReport> {
    let scorer = cfg.build_scorer()?;
    let set = dataset::load_cornell(dataset_dir)?;
    let m = cfg.multigrasp;
    let mode = cfg.evaluation.mode;
    let detector = |ex: &GraspExample, i: usize| -> Result<Vec<GraspRect>, String> {
        let mut swarm = cfg.swarm.clone();
        swarm.seed = cfg.seed.wrapping_add(i as u64);
        match mode {
            EvalMode::Single => pso::search(&ex.image, &scorer, &swarm)
                .map(|r| vec![r.best])
                .map_err(|e| e.to_string()),
            EvalMode::Multi => pso::multigrasp(&ex.image, &scorer, &swarm, m.k, m.floor, m.min_separation)
                .map(|r| r.grasps.into_iter().map(|g| g.rect).collect())
                .map_err(|e| e.to_string()),
        }
    };
    let opts = EvalOptions {
        mode,
        criteria: cfg.evaluation.criteria,
        parallel: false,
    };
    let mut evaluation = dataset::evaluate(&detector, &set.examples, opts)
        .with_context(|| format!("evaluating {}", dataset_dir.display()))?;
    if cfg.evaluation.omit_timing {
        evaluation = evaluation.without_timing();
    }
    Ok(EvaluateReport {
        command: "evaluate",
        dataset: dataset_dir.to_path_buf(),
        skipped_rects: set.skipped_rects,
        load_failures: failures(set.failures),
        evaluation,
        config: cfg.clone(),
    })
}

pub fn cmd_extract_patches(dataset_dir: &Path, out_dir: &Path) -> Result<ExtractReport> {
    let set = dataset::load_cornell(dataset_dir)?;
    let patches = dataset::extract_labeled_patches(&set.examples, out_dir)?;
    Ok(ExtractReport {
        command: "extract-patches",
        dataset: dataset_dir.to_path_buf(),
        out_dir: out_dir.to_path_buf(),
        examples: set.examples.len(),
        patches,
        manifest: out_dir.join(dataset::MANIFEST_NAME),
        skipped_rects: set.skipped_rects,
        load_failures: failures(set.failures),
    })
}

/// Text table of a weight bundle, one row per layer.
pub fn weights_table(w: &WeightsBundle) -> String {
    let mut s = format!(
        "format GNWB v{}  layers {}  bn_eps {:e}\n",
        graspswarm::nn::FORMAT_VERSION,
        w.layers.len(),
        w.bn_eps
    );
    s.push_str(&format!(
        "{:>3}  {:<7}  {:<4}  {:>6}  {:>4}  {:>4}  {:>6}  {:>8}\n",
        "#", "kind", "act", "stride", "in", "out", "kernel", "params"
    ));
    let mut total = 0;
    for (i, l) in w.layers.iter().enumerate() {
        let kind = match l.kind {
            LayerKind::ConvBn => "conv_bn",
            LayerKind::Conv => "conv",
        };
        let act = match l.activation {
            graspswarm::nn::Activation::None => "none",
            graspswarm::nn::Activation::Relu => "relu",
        };
        let params = l.parameter_count();
        total += params;
        s.push_str(&format!(
            "{i:>3}  {kind:<7}  {act:<4}  {:>6}  {:>4}  {:>4}  {:>6}  {params:>8}\n",
            l.stride,
            l.in_channels,
            l.out_channels,
            format!("{}x{}", l.kernel_h, l.kernel_w),
        ));
    }
    s.push_str(&format!("total parameters {total}\n"));
    s
}

pub fn cmd_weights_info(path: &Path) -> Result<String> {
    let w = graspswarm::nn::load_weights(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(weights_table(&w))
}

fn emit_json<T: Serialize>(report: &T, out_file: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    let text = serde_json::to_string_pretty(report)? + "\n";
    if let Some(p) = out_file {
        fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?;
    }
    stdout.write_all(text.as_bytes())?;
    Ok(())
}

/// Parses arguments (including the program name) and runs one command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Detect { image, run } => {
            let cfg = run.resolve(None)?;
            let report = cmd_detect(&image, &cfg)?;
            emit_json(&report, cfg.outputs.out.as_deref(), stdout)
        }
        Command::Multigrasp { image, run, multi } => {
            let cfg = run.resolve(Some(&multi))?;
            let report = cmd_multigrasp(&image, &cfg)?;
            emit_json(&report, cfg.outputs.out.as_deref(), stdout)
        }
        Command::Evaluate {
            dataset,
            run,
            multi,
            mode,
            omit_timing,
        } => {
            let mut cfg = run.resolve(Some(&multi))?;
            if let Some(m) = mode {
                cfg.evaluation.mode = match m.as_str() {
                    "single" => EvalMode::Single,
                    "multi" => EvalMode::Multi,
                    other => return Err(anyhow!("unknown mode {other:?}; expected single or multi")),
                };
            }
            cfg.evaluation.omit_timing |= omit_timing;
            let report = cmd_evaluate(&dataset, &cfg)?;
            emit_json(&report, cfg.outputs.out.as_deref(), stdout)
        }
        Command::ExtractPatches { dataset, out_dir } => {
            let report = cmd_extract_patches(&dataset, &out_dir)?;
            emit_json(&report, None, stdout)
        }
        Command::WeightsInfo { path } => {
            stdout.write_all(cmd_weights_info(&path)?.as_bytes())?;
            Ok(())
        }
    }
}
