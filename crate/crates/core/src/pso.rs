//! Particle swarm candidate estimator.
//!
//! A particle is a grasp rectangle `[x, y, theta, h, w]`. The swarm is first
//! initialized (possibly several times) until some particle clears the
//! `init_threshold` gate, then iterated until the best score reaches
//! `prob_threshold` or `max_iter` steps have run.
//!
//! All random draws happen serially in particle order before a generation is
//! scored, so results depend only on the seed and never on `workers`.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_theta, signed_angle_delta, GraspRect, Point};
use crate::imaging::{estimate_object_scale, Interval, Raster, ScaleConfig, ScaleEstimate};
use crate::scorer::{Fitness, Scorer};

pub type Position = [f64; 5];

const THETA: usize = 2;
const H: usize = 3;
const W: usize = 4;
/// Relative slack when checking aspect and area limits.
const LIMIT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PsoError {
    #[error("initialization failed after {rounds} rounds: best score {best_score:.4} below gate {threshold}")]
    InitFailed {
        rounds: usize,
        best_score: f64,
        threshold: f64,
    },
    #[error("invalid swarm configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateRule {
    /// `v' = w v + c1 r1 (p_best - x) + c2 r2 (g_best - x)`.
    #[default]
    StandardDifference,
    /// `v' = w v + c1 r1 p_best + c2 r2 g_best`, exactly as the formula is
    /// commonly printed. Kept for comparison; positions drift unboundedly
    /// without the velocity clamp.
    AsPrinted,
}

impl std::str::FromStr for UpdateRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard-difference" | "standard" => Ok(UpdateRule::StandardDifference),
            "as-printed" => Ok(UpdateRule::AsPrinted),
            other => Err(format!("unknown update rule {other:?}")),
        }
    }
}

/// Which best position supplies the social term of the velocity update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// Every particle follows the swarm-wide best.
    #[default]
    Global,
    /// Particle `i` follows the best personal best among particles
    /// `i - radius ..= i + radius` (indices wrap). Slower to converge, but
    /// separate peaks keep their own followers.
    Ring { radius: usize },
}

/// What happens when no initialization round reaches `init_threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitGate {
    /// Fail with [`PsoError::InitFailed`].
    #[default]
    Required,
    /// Continue with the best round, failing only if nothing scored at all.
    BestEffort,
}

/// Feasible gripper geometry. `aspect` is `w / h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizeLimits {
    pub h: Interval,
    pub w: Interval,
    pub aspect: Interval,
    pub area: Interval,
}

impl Default for SizeLimits {
    fn default() -> Self {
        Self {
            h: Interval::new(10.0, 70.0),
            w: Interval::new(30.0, 100.0),
            aspect: Interval::new(0.4, 10.0),
            area: Interval::new(300.0, 7000.0),
        }
    }
}

impl SizeLimits {
    pub fn admits(&self, h: f64, w: f64) -> bool {
        let loose = |i: &Interval, v: f64| v >= i.lo * (1.0 - LIMIT_TOL) && v <= i.hi * (1.0 + LIMIT_TOL);
        self.h.contains(h) && self.w.contains(w) && loose(&self.aspect, w / h) && loose(&self.area, w * h)
    }

    /// The feasible set in `(ln h, ln w)`, where every limit is a half-plane.
    fn log_region(&self) -> Vec<Point> {
        let (a0, a1) = (self.h.lo.ln(), self.h.hi.ln());
        let (b0, b1) = (self.w.lo.ln(), self.w.hi.ln());
        let mut poly = vec![[a0, b0], [a1, b0], [a1, b1], [a0, b1]];
        // each constraint is n . p <= c
        let (r0, r1) = (self.aspect.lo.ln(), self.aspect.hi.ln());
        let (s0, s1) = (self.area.lo.ln(), self.area.hi.ln());
        for (n, c) in [
            ([-1.0, 1.0], r1),
            ([1.0, -1.0], -r0),
            ([1.0, 1.0], s1),
            ([-1.0, -1.0], -s0),
        ] {
            poly = clip_half_plane(&poly, n, c);
        }
        poly
    }

    fn validate(&self) -> Result<(), String> {
        for (name, i) in [("h", self.h), ("w", self.w), ("aspect", self.aspect), ("area", self.area)] {
            if !i.is_valid() || i.lo <= 0.0 {
                return Err(format!("{name} limits must be a positive interval, got [{}, {}]", i.lo, i.hi));
            }
        }
        if self.log_region().is_empty() {
            return Err("size, aspect and area limits are mutually infeasible".into());
        }
        Ok(())
    }
}

fn clip_half_plane(poly: &[Point], n: Point, c: f64) -> Vec<Point> {
    let side = |p: Point| c - (n[0] * p[0] + n[1] * p[1]);
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        let (sp, sq) = (side(p), side(q));
        if sp >= 0.0 {
            out.push(p);
        }
        if (sp >= 0.0) != (sq >= 0.0) {
            let t = sp / (sp - sq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out
}

/// Returns `(h, w)` moved back into the limits by multiplicative correction
/// factors. A size outside one bound alone is rescaled by `bound / value`;
/// combined violations take the nearest feasible point in log space.
#[derive(Debug, Clone)]
pub struct SizeCorrector {
    limits: SizeLimits,
    region: Vec<Point>,
}

impl SizeCorrector {
    pub fn new(limits: SizeLimits) -> Result<Self, PsoError> {
        limits.validate().map_err(PsoError::InvalidConfig)?;
        Ok(Self {
            region: limits.log_region(),
            limits,
        })
    }

    pub fn correct(&self, h: f64, w: f64) -> (f64, f64) {
        if self.limits.admits(h, w) {
            return (h, w);
        }
        let p = [h.max(f64::MIN_POSITIVE).ln(), w.max(f64::MIN_POSITIVE).ln()];
        let mut best = self.region[0];
        let mut best_d = f64::INFINITY;
        for i in 0..self.region.len() {
            let a = self.region[i];
            let b = self.region[(i + 1) % self.region.len()];
            let q = nearest_on_segment(p, a, b);
            let d = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
            if d < best_d {
                best_d = d;
                best = q;
            }
        }
        let (mut h2, mut w2) = (best[0].exp(), best[1].exp());
        // a one-sided size violation lands exactly on the bound
        if !self.limits.h.contains(h) && self.limits.w.contains(w) && (best[1] - p[1]).abs() < 1e-12 {
            (h2, w2) = (h * (self.limits.h.clamp(h) / h), w);
        } else if !self.limits.w.contains(w) && self.limits.h.contains(h) && (best[0] - p[0]).abs() < 1e-12 {
            (h2, w2) = (h, w * (self.limits.w.clamp(w) / w));
        }
        (self.limits.h.clamp(h2), self.limits.w.clamp(w2))
    }

    pub fn limits(&self) -> &SizeLimits {
        &self.limits
    }
}

fn nearest_on_segment(p: Point, a: Point, b: Point) -> Point {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    if len2 == 0.0 {
        return a;
    }
    let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    [a[0] + t * d[0], a[1] + t * d[1]]
}

/// Swarm parameters. Every field has a default; see [`SwarmConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwarmConfig {
    pub n_particles: usize,
    /// Inertia factor `w`.
    pub inertia: f64,
    /// Cognitive acceleration `c1`.
    pub c1: f64,
    /// Social acceleration `c2`.
    pub c2: f64,
    pub seed: u64,
    /// Initialization repeats until the best score reaches this.
    pub init_threshold: f64,
    /// Search stops once the best score reaches this.
    pub prob_threshold: f64,
    pub max_init: usize,
    pub max_iter: usize,
    pub update_rule: UpdateRule,
    pub topology: Topology,
    pub init_gate: InitGate,
    /// Side of the centered box initial particle centers are drawn from, as a
    /// fraction of the image side.
    pub center_region_fraction: f64,
    /// Per-dimension velocity bound as a fraction of that dimension's range.
    pub velocity_fraction: f64,
    pub limits: SizeLimits,
    pub scale: ScaleConfig,
    /// Redraws allowed when a replacement particle falls off the image.
    pub replace_attempts: usize,
    /// Scoring threads: 0 uses the global rayon pool, 1 scores serially.
    pub workers: usize,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            n_particles: 40,
            inertia: 0.7,
            c1: 1.5,
            c2: 1.5,
            seed: 0,
            init_threshold: 0.7,
            prob_threshold: 0.95,
            max_init: 20,
            max_iter: 100,
            update_rule: UpdateRule::StandardDifference,
            topology: Topology::Global,
            init_gate: InitGate::Required,
            center_region_fraction: 0.5,
            velocity_fraction: 0.1,
            limits: SizeLimits::default(),
            scale: ScaleConfig::default(),
            replace_attempts: 32,
            workers: 1,
        }
    }
}

impl SwarmConfig {
    pub fn validate(&self) -> Result<(), PsoError> {
        let bad = |m: String| Err(PsoError::InvalidConfig(m));
        if self.n_particles == 0 {
            return bad("n_particles must be at least 1".into());
        }
        for (name, v) in [("init_threshold", self.init_threshold), ("prob_threshold", self.prob_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.max_init == 0 || self.max_iter == 0 {
            return bad("max_init and max_iter must be at least 1".into());
        }
        if !(self.center_region_fraction > 0.0 && self.center_region_fraction <= 1.0) {
            return bad(format!(
                "center_region_fraction must lie in (0, 1], got {}",
                self.center_region_fraction
            ));
        }
        for (name, v) in [
            ("inertia", self.inertia),
            ("c1", self.c1),
            ("c2", self.c2),
            ("velocity_fraction", self.velocity_fraction),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        self.limits.validate().map_err(PsoError::InvalidConfig)?;
        Ok(())
    }
}

/// Best position a particle has visited and its score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub position: Position,
    pub fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: Position,
    pub velocity: Position,
    /// `None` until the particle has been scored at a valid position.
    pub best: Option<BestRecord>,
    /// False when no in-image placement could be drawn; dead particles are
    /// not scored.
    pub alive: bool,
    pub last: Option<Fitness>,
}

impl Particle {
    pub fn rect(&self) -> GraspRect {
        GraspRect::from_vector(&self.position)
    }

    pub fn p_fit(&self) -> f64 {
        self.best.map_or(0.0, |b| b.fitness)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub iteration: usize,
    pub g_fit: f64,
    pub g_best: Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: GraspRect,
    pub best_score: f64,
    pub iterations_used: usize,
    pub initializations_used: usize,
    pub seed: u64,
    pub trajectory: Vec<TrajectoryRecord>,
}

impl SearchResult {
    /// One JSON object per iteration: `{"iteration", "g_fit", "g_best"}`.
    pub fn write_trajectory_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for rec in &self.trajectory {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Geometry shared by every draw and update for one image.
#[derive(Debug, Clone)]
struct SearchSpace {
    width: usize,
    height: usize,
    x_range: Interval,
    y_range: Interval,
    center_x: Interval,
    center_y: Interval,
    scale: ScaleEstimate,
    v_max: Position,
    corrector: SizeCorrector,
}

impl SearchSpace {
    fn new(img: &Raster, cfg: &SwarmConfig) -> Result<Self, PsoError> {
        let (width, height) = (img.width(), img.height());
        if width < 2 || height < 2 {
            return Err(PsoError::InvalidConfig(format!("image {width}x{height} is too small to search")));
        }
        let x_range = Interval::new(0.0, (width - 1) as f64);
        let y_range = Interval::new(0.0, (height - 1) as f64);
        let centered = |r: Interval| {
            let mid = (r.lo + r.hi) / 2.0;
            let half = r.width() * cfg.center_region_fraction / 2.0;
            Interval::new(mid - half, mid + half)
        };
        let scale = estimate_object_scale(img, &cfg.scale).unwrap_or_else(|_| cfg.scale.fallback());
        let corrector = SizeCorrector::new(cfg.limits)?;
        let f = cfg.velocity_fraction;
        let v_max = [
            f * x_range.width(),
            f * y_range.width(),
            f * 180.0,
            f * cfg.limits.h.width(),
            f * cfg.limits.w.width(),
        ];
        Ok(Self {
            width,
            height,
            center_x: centered(x_range),
            center_y: centered(y_range),
            x_range,
            y_range,
            scale,
            v_max,
            corrector,
        })
    }

    fn fits(&self, p: &Position) -> bool {
        GraspRect::from_vector(p).fits_within(self.width, self.height)
    }

    fn uniform(rng: &mut ChaCha8Rng, i: Interval) -> f64 {
        if i.width() > 0.0 {
            rng.random_range(i.lo..=i.hi)
        } else {
            i.lo
        }
    }

    /// Draws a fresh particle with an in-image placement if one is found
    /// within `attempts` tries.
    fn draw(&self, rng: &mut ChaCha8Rng, attempts: usize) -> Particle {
        let mut position = [0.0; 5];
        let mut alive = false;
        for _ in 0..attempts.max(1) {
            let x = Self::uniform(rng, self.center_x);
            let y = Self::uniform(rng, self.center_y);
            let theta: f64 = rng.random_range(0.0..180.0);
            let h = Self::uniform(rng, self.scale.h_range);
            let w = Self::uniform(rng, self.scale.w_range);
            let (h, w) = self.corrector.correct(h, w);
            position = [x, y, theta, h, w];
            if self.fits(&position) {
                alive = true;
                break;
            }
        }
        let mut velocity = [0.0; 5];
        for (v, &m) in velocity.iter_mut().zip(&self.v_max) {
            *v = if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        }
        Particle {
            position,
            velocity,
            best: None,
            alive,
            last: None,
        }
    }

    /// Brings a moved position back into the feasible set: theta wraps,
    /// sizes are corrected, the center is clamped to the image.
    fn project(&self, p: &mut Position) {
        p[0] = self.x_range.clamp(p[0]);
        p[1] = self.y_range.clamp(p[1]);
        p[THETA] = normalize_theta(p[THETA]);
        let (h, w) = self.corrector.correct(p[H], p[W]);
        p[H] = h;
        p[W] = w;
    }
}

/// Velocity and position update for one particle. `r1`, `r2` are the
/// particle's random draws for this step. Orientation differences take the
/// short way around the 180-degree circle under the difference rule.
pub fn update_particle(
    position: &Position,
    velocity: &Position,
    p_best: &Position,
    g_best: &Position,
    r1: f64,
    r2: f64,
    cfg: &SwarmConfig,
    v_max: Option<&Position>,
) -> (Position, Position) {
    let mut v = [0.0; 5];
    let mut x = [0.0; 5];
    for d in 0..5 {
        v[d] = match cfg.update_rule {
            UpdateRule::StandardDifference => {
                let (dp, dg) = if d == THETA {
                    (
                        signed_angle_delta(position[d], p_best[d]),
                        signed_angle_delta(position[d], g_best[d]),
                    )
                } else {
                    (p_best[d] - position[d], g_best[d] - position[d])
                };
                cfg.inertia * velocity[d] + cfg.c1 * r1 * dp + cfg.c2 * r2 * dg
            }
            UpdateRule::AsPrinted => cfg.inertia * velocity[d] + cfg.c1 * r1 * p_best[d] + cfg.c2 * r2 * g_best[d],
        };
        if let Some(m) = v_max {
            v[d] = v[d].clamp(-m[d], m[d]);
        }
        x[d] = position[d] + v[d];
    }
    (x, v)
}

enum Evaluator {
    Serial,
    Global,
    Pool(Arc<rayon::ThreadPool>),
}

impl Evaluator {
    fn new(workers: usize) -> Self {
        match workers {
            1 => Evaluator::Serial,
            0 => Evaluator::Global,
            n => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => Evaluator::Pool(Arc::new(pool)),
                Err(_) => Evaluator::Serial,
            },
        }
    }

    fn score_all(&self, img: &Raster, scorer: &dyn Scorer, particles: &[Particle]) -> Vec<Option<Fitness>> {
        let one = |p: &Particle| p.alive.then(|| scorer.score(img, &p.rect()));
        match self {
            Evaluator::Serial => particles.iter().map(one).collect(),
            Evaluator::Global => particles.par_iter().map(one).collect(),
            Evaluator::Pool(pool) => pool.install(|| particles.par_iter().map(one).collect()),
        }
    }
}

/// Live search state for one image.
pub struct Swarm {
    particles: Vec<Particle>,
    g_best: Option<BestRecord>,
    retired: Vec<BestRecord>,
    rng: ChaCha8Rng,
    space: SearchSpace,
    evaluator: Evaluator,
    iteration: usize,
    initializations: usize,
    trajectory: Vec<TrajectoryRecord>,
    seed: u64,
}

impl fmt::Debug for Swarm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Swarm")
            .field("particles", &self.particles.len())
            .field("g_best", &self.g_best)
            .field("iteration", &self.iteration)
            .field("initializations", &self.initializations)
            .finish()
    }
}

impl Swarm {
    /// Draws and scores whole swarms until the best score clears
    /// `init_threshold` or `max_init` rounds are used, keeping the best round.
    pub fn initialize(img: &Raster, scorer: &dyn Scorer, cfg: &SwarmConfig) -> Result<Self, PsoError> {
        cfg.validate()?;
        let space = SearchSpace::new(img, cfg)?;
        let evaluator = Evaluator::new(cfg.workers);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut kept: Option<(Vec<Particle>, Option<BestRecord>)> = None;
        let mut rounds = 0;
        loop {
            let mut particles: Vec<Particle> = (0..cfg.n_particles)
                .map(|_| space.draw(&mut rng, cfg.replace_attempts))
                .collect();
            let scores = evaluator.score_all(img, scorer, &particles);
            let mut round_best: Option<BestRecord> = None;
            for (p, s) in particles.iter_mut().zip(scores) {
                absorb(p, s, &mut round_best);
            }
            rounds += 1;
            let better = match (&kept, &round_best) {
                (None, _) => true,
                (Some((_, None)), Some(_)) => true,
                (Some((_, Some(k))), Some(r)) => r.fitness > k.fitness,
                _ => false,
            };
            if better {
                kept = Some((particles, round_best));
            }
            let g_fit = kept.as_ref().and_then(|k| k.1).map_or(0.0, |b| b.fitness);
            let scored = kept.as_ref().is_some_and(|k| k.1.is_some());
            if (scored && g_fit >= cfg.init_threshold) || rounds >= cfg.max_init {
                break;
            }
        }
        let (particles, g_best) = kept.expect("at least one round");
        let g_fit = g_best.map_or(0.0, |b| b.fitness);
        let gate_failed = g_best.is_none() || (cfg.init_gate == InitGate::Required && g_fit < cfg.init_threshold);
        if gate_failed {
            return Err(PsoError::InitFailed {
                rounds,
                best_score: g_fit,
                threshold: cfg.init_threshold,
            });
        }
        Ok(Self {
            particles,
            g_best,
            retired: Vec::new(),
            rng,
            space,
            evaluator,
            iteration: 0,
            initializations: rounds,
            trajectory: Vec::new(),
            seed: cfg.seed,
        })
    }

    /// One generation: move every particle, replace the ones that leave the
    /// image, score, and update personal and global bests.
    pub fn step(&mut self, img: &Raster, scorer: &dyn Scorer, cfg: &SwarmConfig) {
        let g_best = self.g_best.expect("initialized swarm has a global best").position;
        let attractors = self.social_attractors(cfg.topology, g_best);
        let mut next = Vec::with_capacity(self.particles.len());
        for (p, social) in std::mem::take(&mut self.particles).into_iter().zip(attractors) {
            let needs_replacement = !p.alive || p.last == Some(Fitness::Invalid);
            let moved = if needs_replacement {
                None
            } else {
                let r1: f64 = self.rng.random();
                let r2: f64 = self.rng.random();
                let p_best = p.best.map_or(p.position, |b| b.position);
                let (mut x, v) =
                    update_particle(&p.position, &p.velocity, &p_best, &social, r1, r2, cfg, Some(&self.space.v_max));
                self.space.project(&mut x);
                self.space.fits(&x).then_some(Particle {
                    position: x,
                    velocity: v,
                    ..p.clone()
                })
            };
            match moved {
                Some(q) => next.push(q),
                None => {
                    if let Some(b) = p.best {
                        self.retired.push(b);
                    }
                    next.push(self.space.draw(&mut self.rng, cfg.replace_attempts));
                }
            }
        }
        let scores = self.evaluator.score_all(img, scorer, &next);
        let mut g = self.g_best;
        for (p, s) in next.iter_mut().zip(scores) {
            absorb(p, s, &mut g);
        }
        self.g_best = g;
        self.particles = next;
        self.iteration += 1;
        let best = self.g_best.expect("global best persists");
        self.trajectory.push(TrajectoryRecord {
            iteration: self.iteration,
            g_fit: best.fitness,
            g_best: best.position,
        });
    }

    fn social_attractors(&self, topology: Topology, g_best: Position) -> Vec<Position> {
        let n = self.particles.len();
        match topology {
            Topology::Global => vec![g_best; n],
            Topology::Ring { radius } => (0..n)
                .map(|i| {
                    let mut best: Option<BestRecord> = None;
                    for off in 0..=2 * radius.min(n / 2) {
                        let j = (i + n + off - radius.min(n / 2)) % n;
                        if let Some(b) = self.particles[j].best {
                            if best.is_none_or(|cur| b.fitness > cur.fitness) {
                                best = Some(b);
                            }
                        }
                    }
                    best.map_or(g_best, |b| b.position)
                })
                .collect(),
        }
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn g_best(&self) -> Option<BestRecord> {
        self.g_best
    }

    pub fn g_fit(&self) -> f64 {
        self.g_best.map_or(0.0, |b| b.fitness)
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn initializations(&self) -> usize {
        self.initializations
    }

    pub fn scale_estimate(&self) -> &ScaleEstimate {
        &self.space.scale
    }

    /// Velocity bound per dimension.
    pub fn v_max(&self) -> Position {
        self.space.v_max
    }

    /// Overwrites particle state, e.g. to start from a known configuration.
    /// The global best is recomputed from the particles' bests.
    pub fn set_particles(&mut self, particles: Vec<Particle>) {
        self.particles = particles;
        let mut g: Option<BestRecord> = None;
        for p in &self.particles {
            if let Some(b) = p.best {
                if g.is_none_or(|cur| b.fitness > cur.fitness) {
                    g = Some(b);
                }
            }
        }
        self.g_best = g;
    }

    /// Every personal best ever held, including those of replaced particles,
    /// led by the global best.
    pub fn candidate_pool(&self) -> Vec<BestRecord> {
        let mut pool: Vec<BestRecord> = self.g_best.into_iter().collect();
        pool.extend(self.particles.iter().filter_map(|p| p.best));
        pool.extend(self.retired.iter().copied());
        pool
    }

    pub fn result(&self) -> SearchResult {
        let best = self.g_best.expect("initialized swarm has a global best");
        SearchResult {
            best: GraspRect::from_vector(&best.position),
            best_score: best.fitness,
            iterations_used: self.iteration,
            initializations_used: self.initializations,
            seed: self.seed,
            trajectory: self.trajectory.clone(),
        }
    }
}

fn absorb(p: &mut Particle, s: Option<Fitness>, g: &mut Option<BestRecord>) {
    p.last = s;
    if let Some(Fitness::Score(v)) = s {
        if p.best.is_none_or(|b| v > b.fitness) {
            p.best = Some(BestRecord {
                position: p.position,
                fitness: v,
            });
        }
        if g.is_none_or(|b| v > b.fitness) {
            *g = Some(BestRecord {
                position: p.position,
                fitness: v,
            });
        }
    }
}

fn run(img: &Raster, scorer: &dyn Scorer, cfg: &SwarmConfig) -> Result<Swarm, PsoError> {
    let mut swarm = Swarm::initialize(img, scorer, cfg)?;
    while swarm.g_fit() < cfg.prob_threshold && swarm.iteration() < cfg.max_iter {
        swarm.step(img, scorer, cfg);
    }
    Ok(swarm)
}

/// Runs the candidate estimator and returns the best grasp found.
pub fn search(img: &Raster, scorer: &dyn Scorer, cfg: &SwarmConfig) -> Result<SearchResult, PsoError> {
    Ok(run(img, scorer, cfg)?.result())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredGrasp {
    pub rect: GraspRect,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultigraspResult {
    pub grasps: Vec<ScoredGrasp>,
    pub search: SearchResult,
}

/// Greedy selection by descending score, skipping candidates whose center
/// lies within `min_separation` of one already chosen. Ties keep pool order.
pub fn select_separated(pool: &[BestRecord], k: usize, score_floor: f64, min_separation: f64) -> Vec<ScoredGrasp> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| pool[b].fitness.total_cmp(&pool[a].fitness).then(a.cmp(&b)));
    let mut chosen: Vec<ScoredGrasp> = Vec::new();
    for i in order {
        if chosen.len() >= k {
            break;
        }
        let c = pool[i];
        if c.fitness < score_floor {
            break;
        }
        let clash = chosen.iter().any(|s| {
            let d = ((s.rect.x - c.position[0]).powi(2) + (s.rect.y - c.position[1]).powi(2)).sqrt();
            d < min_separation || s.rect.to_vector() == GraspRect::from_vector(&c.position).to_vector()
        });
        if !clash {
            chosen.push(ScoredGrasp {
                rect: GraspRect::from_vector(&c.position),
                score: c.fitness,
            });
        }
    }
    chosen
}

/// Runs one search and reports up to `k` high-scoring, spatially separated
/// grasps drawn from the swarm's personal bests.
pub fn multigrasp(
    img: &Raster,
    scorer: &dyn Scorer,
    cfg: &SwarmConfig,
    k: usize,
    score_floor: f64,
    min_separation: f64,
) -> Result<MultigraspResult, PsoError> {
    if k == 0 {
        return Err(PsoError::InvalidConfig("k must be at least 1".into()));
    }
    let swarm = run(img, scorer, cfg)?;
    Ok(MultigraspResult {
        grasps: select_separated(&swarm.candidate_pool(), k, score_floor, min_separation),
        search: swarm.result(),
    })
}
