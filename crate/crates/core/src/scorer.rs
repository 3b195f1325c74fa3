//! Grasp-quality scoring: the objective the swarm maximizes.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{angle_diff, GraspRect};
use crate::imaging::{extract_patch, Raster};
use crate::nn::{GraspNet, NnError, WeightsBundle};

/// Outcome of scoring one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Fitness {
    /// A score in `[0, 1]`.
    Score(f64),
    /// The candidate cannot be evaluated (its patch leaves the image) and
    /// must be replaced, not merely penalized.
    Invalid,
}

impl Fitness {
    pub fn value(self) -> Option<f64> {
        match self {
            Fitness::Score(v) => Some(v),
            Fitness::Invalid => None,
        }
    }

    pub fn is_valid(self) -> bool {
        matches!(self, Fitness::Score(_))
    }
}

/// Rates a grasp rectangle on an image. Implementations must be deterministic
/// and safe to call concurrently.
pub trait Scorer: Send + Sync {
    fn score(&self, img: &Raster, r: &GraspRect) -> Fitness;
}

impl<S: Scorer + ?Sized> Scorer for Arc<S> {
    fn score(&self, img: &Raster, r: &GraspRect) -> Fitness {
        (**self).score(img, r)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn score(&self, img: &Raster, r: &GraspRect) -> Fitness {
        (**self).score(img, r)
    }
}

/// Scores by the identification network's graspable probability.
#[derive(Debug, Clone)]
pub struct CnnScorer {
    net: GraspNet,
}

impl CnnScorer {
    pub fn new(weights: &WeightsBundle) -> Result<Self, NnError> {
        Ok(Self {
            net: GraspNet::new(weights)?,
        })
    }

    pub fn network(&self) -> &GraspNet {
        &self.net
    }
}

impl Scorer for CnnScorer {
    fn score(&self, img: &Raster, r: &GraspRect) -> Fitness {
        let Ok(patch) = extract_patch(img, r) else {
            return Fitness::Invalid;
        };
        match self.net.graspable_probability(&patch) {
            Ok(p) if p.is_finite() => Fitness::Score(p.clamp(0.0, 1.0)),
            _ => Fitness::Invalid,
        }
    }
}

/// Tolerance scales of [`SyntheticScorer`], one per dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreScales {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub h: f64,
    pub w: f64,
}

impl Default for ScoreScales {
    fn default() -> Self {
        Self {
            x: 12.0,
            y: 12.0,
            theta: 15.0,
            h: 10.0,
            w: 15.0,
        }
    }
}

/// A deterministic objective with a known maximizer: a separable Gaussian
/// bump around each target, `prod_i exp(-(d_i / s_i)^2)`, taking the maximum
/// over targets. Orientation distance uses [`angle_diff`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScorer {
    pub targets: Vec<GraspRect>,
    pub scales: ScoreScales,
}

impl SyntheticScorer {
    pub fn new(target: GraspRect, scales: ScoreScales) -> Self {
        Self {
            targets: vec![target],
            scales,
        }
    }

    /// Several bumps; the score is the max over them.
    pub fn with_peaks(targets: Vec<GraspRect>, scales: ScoreScales) -> Self {
        assert!(!targets.is_empty());
        Self { targets, scales }
    }

    /// The score without the image-bounds check.
    pub fn value(&self, r: &GraspRect) -> f64 {
        self.targets
            .iter()
            .map(|t| bump(t, r, &self.scales))
            .fold(0.0, f64::max)
    }
}

fn bump(t: &GraspRect, r: &GraspRect, s: &ScoreScales) -> f64 {
    let terms = [
        (r.x - t.x) / s.x,
        (r.y - t.y) / s.y,
        angle_diff(r.theta, t.theta) / s.theta,
        (r.h - t.h) / s.h,
        (r.w - t.w) / s.w,
    ];
    (-terms.iter().map(|d| d * d).sum::<f64>()).exp()
}

impl Scorer for SyntheticScorer {
    fn score(&self, img: &Raster, r: &GraspRect) -> Fitness {
        if !r.fits_within(img.width(), img.height()) {
            return Fitness::Invalid;
        }
        Fitness::Score(self.value(r))
    }
}
