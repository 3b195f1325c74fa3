use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use graspswarm::dataset::EvalMode;
use graspswarm::nn::load_weights;
use graspswarm::pso::{SwarmConfig, Topology};
use graspswarm::scorer::ScoreScales;
use graspswarm::{CnnScorer, GraspRect, MatchCriteria, Scorer, SyntheticScorer};
use serde::{Deserialize, Serialize, Serializer};

/// The scorer selection, written `cnn:<weights-path>` or
/// `synthetic:x,y,theta,h,w` (several targets separated by `;`).
#[derive(Debug, Clone, PartialEq)]
pub enum ScorerSpec {
    Cnn(PathBuf),
    Synthetic(Vec<GraspRect>),
}

impl FromStr for ScorerSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix("cnn:") {
            if path.is_empty() {
                bail!("cnn scorer needs a weights path");
            }
            return Ok(ScorerSpec::Cnn(path.into()));
        }
        let Some(list) = s.strip_prefix("synthetic:") else {
            bail!("unknown scorer {s:?}; expected cnn:<path> or synthetic:x,y,theta,h,w");
        };
        let targets = list
            .split(';')
            .map(|t| {
                let v: Vec<f64> = t
                    .split(',')
                    .map(|n| n.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .with_context(|| format!("bad synthetic target {t:?}"))?;
                let [x, y, theta, h, w] = v[..] else {
                    bail!("synthetic target {t:?} needs 5 values, got {}", v.len());
                };
                GraspRect::new(x, y, theta, h, w).map_err(|e| anyhow!("synthetic target {t:?}: {e}"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScorerSpec::Synthetic(targets))
    }
}

impl fmt::Display for ScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScorerSpec::Cnn(p) => write!(f, "cnn:{}", p.display()),
            ScorerSpec::Synthetic(ts) => {
                let parts: Vec<String> = ts
                    .iter()
                    .map(|t| format!("{},{},{},{},{}", t.x, t.y, t.theta, t.h, t.w))
                    .collect();
                write!(f, "synthetic:{}", parts.join(";"))
            }
        }
    }
}

impl Serialize for ScorerSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl ScorerSpec {
    pub fn build(&self, scales: ScoreScales) -> Result<Box<dyn Scorer>> {
        Ok(match self {
            ScorerSpec::Cnn(path) => {
                let w = load_weights(path).with_context(|| format!("loading weights {}", path.display()))?;
                Box::new(CnnScorer::new(&w)?)
            }
            ScorerSpec::Synthetic(ts) => Box::new(SyntheticScorer::with_peaks(ts.clone(), scales)),
        })
    }
}

/// `global` or `ring:<radius>`.
pub fn parse_topology(s: &str) -> Result<Topology> {
    if s == "global" {
        return Ok(Topology::Global);
    }
    let radius = s
        .strip_prefix("ring:")
        .and_then(|r| r.parse().ok())
        .ok_or_else(|| anyhow!("unknown topology {s:?}; expected global or ring:<radius>"))?;
    Ok(Topology::Ring { radius })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiSettings {
    pub k: usize,
    pub floor: f64,
    pub min_separation: f64,
}

impl Default for MultiSettings {
    fn default() -> Self {
        Self {
            k: 3,
            floor: 0.5,
            min_separation: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub mode: EvalMode,
    pub criteria: MatchCriteria,
    /// Leave wall-clock fields out so reruns are byte-identical.
    pub omit_timing: bool,
}

/// Contents of a `--config` TOML file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub scorer: Option<String>,
    pub weights: Option<PathBuf>,
    pub preprocess: Option<bool>,
    pub synthetic_scales: Option<ScoreScales>,
    pub swarm: Option<SwarmConfig>,
    pub multigrasp: Option<MultiSettings>,
    pub evaluation: Option<EvalSettings>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OutputPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotate: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<PathBuf>,
}

/// The effective configuration of one run, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub scorer: ScorerSpec,
    pub seed: u64,
    pub preprocess: bool,
    pub synthetic_scales: ScoreScales,
    pub swarm: SwarmConfig,
    pub multigrasp: MultiSettings,
    pub evaluation: EvalSettings,
    pub outputs: OutputPaths,
}

impl RunConfig {
    /// A configuration with built-in defaults for the given scorer.
    pub fn new(scorer: ScorerSpec) -> Self {
        Self {
            scorer,
            seed: 0,
            preprocess: true,
            synthetic_scales: ScoreScales::default(),
            swarm: SwarmConfig::default(),
            multigrasp: MultiSettings::default(),
            evaluation: EvalSettings::default(),
            outputs: OutputPaths::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.swarm.seed = seed;
        self
    }

    pub fn build_scorer(&self) -> Result<Box<dyn Scorer>> {
        self.scorer.build(self.synthetic_scales)
    }
}

/// Picks the single scorer from a `--scorer`/`--weights` pair; giving both
/// is an error unless they agree.
pub fn select_scorer(scorer: Option<&str>, weights: Option<&Path>) -> Result<Option<ScorerSpec>> {
    let from_weights = weights.map(|p| ScorerSpec::Cnn(p.to_path_buf()));
    match (scorer.map(ScorerSpec::from_str).transpose()?, from_weights) {
        (Some(a), Some(b)) if a != b => bail!("both {a} and {b} selected; choose one scorer"),
        (a, b) => Ok(a.or(b)),
    }
}
