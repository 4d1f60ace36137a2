//! Synthetic scene generator: ground-truth tracks from simple motion models,
//! noisy detections, rigidly co-moving interest-point trajectories, and
//! per-target appearance signatures — a desk-scale oracle for end-to-end
//! testing.
//!
//! Everything is drawn from one seeded stream in a fixed order, so a scenario
//! is byte-identical across runs of the same build. Coordinates are generated
//! in a fixed world arena; a linear camera drift is added per frame on
//! output, so emitted boxes and points live in drifting image coordinates.
//! The optional flat-color renderer paints the world arena (the two agree
//! when the drift is zero).

use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::appearance::{
    chroma_bin, srgb_to_lab, ColorHistogram, HistogramStore, RgbImage, AB_BINS, CELLS, HIST_LEN,
};
use crate::error::{Error, Result};
use crate::io::{parse_kv_str, Flavor, SequenceBundle};
use crate::ipt::IptStore;
use crate::scalar::Real;
use crate::types::{BoundingBox, Detection, DetectionSet, LabeledBox};

/// Ground-truth motion law for synthetic targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionModel {
    /// Horizontal lanes with per-target constant speed, bouncing off walls.
    ConstantVelocity,
    /// Smooth quadratic (Bezier) paths through random control points.
    Polynomial,
    /// Lane-sharing pairs that repeatedly meet and swap sides.
    CrossingPairs,
}

impl std::fmt::Display for MotionModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MotionModel::ConstantVelocity => "cv",
            MotionModel::Polynomial => "poly",
            MotionModel::CrossingPairs => "crossing",
        })
    }
}

impl FromStr for MotionModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cv" | "constant-velocity" => Ok(MotionModel::ConstantVelocity),
            "poly" | "polynomial" => Ok(MotionModel::Polynomial),
            "crossing" | "crossing-pairs" => Ok(MotionModel::CrossingPairs),
            other => Err(Error::InvalidInput(format!("unknown motion model {other:?}"))),
        }
    }
}

/// One interval during which a target is hidden behind another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Occlusion {
    pub target: usize,
    pub from: usize,
    /// Inclusive.
    pub to: usize,
}

/// Full description of a synthetic scenario. `generate` is a pure function
/// of this value.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec<T> {
    pub seed: u64,
    pub n_targets: usize,
    pub frames: usize,
    pub arena_w: T,
    pub arena_h: T,
    pub motion: MotionModel,
    /// Nominal box size; each target varies it by up to ±15%.
    pub box_w: T,
    pub box_h: T,
    /// Nominal speed in pixels per frame.
    pub speed: T,
    pub pos_noise_std: T,
    pub size_noise_std: T,
    /// Probability that a visible target yields no detection on a frame.
    pub miss_rate: T,
    /// Per-target per-frame probability of one clutter detection.
    pub fp_rate: T,
    /// Uniform score range of true detections.
    pub tp_score: (T, T),
    /// Uniform score range of clutter detections (kept low).
    pub fp_score: (T, T),
    /// Interest points maintained inside each visible box.
    pub ipt_density: usize,
    pub ipt_noise_std: T,
    /// Probability that a spawned point tracks the background or another
    /// target instead of its own box.
    pub ipt_outlier_rate: T,
    /// Uniform range of point lifetimes, in frames.
    pub ipt_life: (usize, usize),
    /// Hand-placed occlusion intervals (the nearest other target occludes).
    pub occlusions: Vec<Occlusion>,
    /// For crossing pairs: hide the odd member for this many frames around
    /// every meeting point (0 disables).
    pub occlusion_len: usize,
    /// Linear image drift per frame (camera pan).
    pub camera_drift: (T, T),
    /// Distinct target colors; targets reuse them cyclically.
    pub palette_size: usize,
    /// Per-detection appearance perturbation mass (relative to the signature).
    pub appearance_noise: T,
    pub fps: T,
}

impl<T: Real> Default for ScenarioSpec<T> {
    fn default() -> Self {
        ScenarioSpec {
            seed: 1,
            n_targets: 5,
            frames: 100,
            arena_w: T::of(800.0),
            arena_h: T::of(600.0),
            motion: MotionModel::ConstantVelocity,
            box_w: T::of(36.0),
            box_h: T::of(64.0),
            speed: T::of(3.0),
            pos_noise_std: T::of(1.0),
            size_noise_std: T::of(0.5),
            miss_rate: T::of(0.05),
            fp_rate: T::of(0.05),
            tp_score: (T::of(0.7), T::of(1.0)),
            fp_score: (T::of(0.05), T::of(0.4)),
            ipt_density: 12,
            ipt_noise_std: T::of(0.5),
            ipt_outlier_rate: T::of(0.05),
            ipt_life: (30, 60),
            occlusions: Vec::new(),
            occlusion_len: 0,
            camera_drift: (T::zero(), T::zero()),
            palette_size: 8,
            appearance_noise: T::of(0.2),
            fps: T::of(10.0),
        }
    }
}

impl<T: Real> ScenarioSpec<T> {
    /// Perfect-sensor scenario: laned constant-velocity targets, zero noise,
    /// no misses or clutter, box size scaled so lanes never overlap.
    pub fn noiseless(n_targets: usize, frames: usize, seed: u64) -> Self {
        let mut spec = ScenarioSpec::default();
        spec.seed = seed;
        spec.n_targets = n_targets;
        spec.frames = frames;
        let lane = 600.0 / n_targets.max(1) as f64;
        spec.box_h = T::of((lane * 0.6).floor().max(8.0));
        spec.box_w = T::of((lane * 0.4).floor().max(6.0));
        // Slow enough that a 200-frame path fits the arena even at the top
        // of the per-target speed jitter, so no target ever reflects.
        spec.speed = T::of(3.0);
        spec.pos_noise_std = T::zero();
        spec.size_noise_std = T::zero();
        spec.miss_rate = T::zero();
        spec.fp_rate = T::zero();
        spec.ipt_noise_std = T::zero();
        spec.ipt_outlier_rate = T::zero();
        spec.appearance_noise = T::zero();
        spec
    }

    /// Lane-sharing pairs that repeatedly cross, hidden for five frames at
    /// every meeting, with mild sensor noise: the identity-maintenance
    /// stress scenario.
    pub fn crossing(seed: u64) -> Self {
        let mut spec = ScenarioSpec::default();
        spec.seed = seed;
        spec.motion = MotionModel::CrossingPairs;
        spec.n_targets = 6;
        spec.frames = 160;
        spec.box_w = T::of(34.0);
        spec.box_h = T::of(56.0);
        spec.speed = T::of(5.0);
        spec.occlusion_len = 5;
        spec.miss_rate = T::of(0.1);
        spec.fp_rate = T::of(0.05);
        spec.pos_noise_std = T::of(1.0);
        spec.ipt_density = 14;
        spec.palette_size = 6;
        spec
    }

    /// Constant-velocity targets filmed by a panning camera, with a small
    /// palette so appearance alone is ambiguous: the affinity-ablation
    /// scenario. Lanes are packed tighter than a box height and the vertical
    /// pan covers about one lane per 20 frames, so raw box location becomes
    /// misleading at long frame gaps while staying reliable at short ones.
    pub fn moving_camera(seed: u64) -> Self {
        let mut spec = ScenarioSpec::default();
        spec.seed = seed;
        spec.n_targets = 12;
        spec.frames = 150;
        spec.arena_w = T::of(500.0);
        spec.arena_h = T::of(360.0);
        spec.box_w = T::of(26.0);
        spec.box_h = T::of(40.0);
        spec.speed = T::of(3.0);
        spec.camera_drift = (T::of(3.0), T::of(2.0));
        spec.palette_size = 4;
        spec.appearance_noise = T::of(0.25);
        spec.ipt_density = 15;
        spec.ipt_noise_std = T::of(0.5);
        spec.miss_rate = T::of(0.05);
        spec.fp_rate = T::of(0.1);
        spec
    }

    /// Checks ranges and interval sanity.
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: T| -> Result<()> {
            if v < T::zero() || v > T::one() || !v.is_finite() {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
            Ok(())
        };
        let nonneg = |name: &str, v: T| -> Result<()> {
            if v < T::zero() || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
            Ok(())
        };
        unit("miss_rate", self.miss_rate)?;
        unit("fp_rate", self.fp_rate)?;
        unit("ipt_outlier_rate", self.ipt_outlier_rate)?;
        nonneg("pos_noise_std", self.pos_noise_std)?;
        nonneg("size_noise_std", self.size_noise_std)?;
        nonneg("ipt_noise_std", self.ipt_noise_std)?;
        nonneg("appearance_noise", self.appearance_noise)?;
        nonneg("speed", self.speed)?;
        if self.n_targets == 0 {
            return Err(Error::Config("n_targets must be >= 1".into()));
        }
        if self.frames == 0 {
            return Err(Error::Config("frames must be >= 1".into()));
        }
        if !(self.box_w > T::zero() && self.box_h > T::zero()) {
            return Err(Error::Config("box size must be positive".into()));
        }
        if self.arena_w < self.box_w * T::of(2.0) || self.arena_h < self.box_h * T::of(2.0) {
            return Err(Error::Config("arena must fit at least two boxes per axis".into()));
        }
        if self.tp_score.0 > self.tp_score.1 || self.fp_score.0 > self.fp_score.1 {
            return Err(Error::Config("score ranges must satisfy lo <= hi".into()));
        }
        if self.ipt_life.0 == 0 || self.ipt_life.0 > self.ipt_life.1 {
            return Err(Error::Config("ipt_life must satisfy 1 <= lo <= hi".into()));
        }
        if self.palette_size == 0 {
            return Err(Error::Config("palette_size must be >= 1".into()));
        }
        let mut by_target: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.n_targets];
        for occ in &self.occlusions {
            if occ.target >= self.n_targets {
                return Err(Error::Config(format!(
                    "occlusion names target {} of {}",
                    occ.target, self.n_targets
                )));
            }
            if occ.from > occ.to || occ.to >= self.frames {
                return Err(Error::Config(format!(
                    "occlusion interval {}..={} outside 0..{}",
                    occ.from, occ.to, self.frames
                )));
            }
            if self.n_targets < 2 {
                return Err(Error::Config("occlusions need a second target to occlude".into()));
            }
            by_target[occ.target].push((occ.from, occ.to));
        }
        for intervals in &mut by_target {
            intervals.sort_unstable();
            if intervals.windows(2).any(|w| w[0].1 >= w[1].0) {
                return Err(Error::Config("occlusion intervals of one target overlap".into()));
            }
        }
        Ok(())
    }
}

/// Evenly spaced saturated palette colors.
fn palette(n: usize) -> Vec<(u8, u8, u8)> {
    (0..n)
        .map(|k| {
            let h = k as f64 / n as f64 * 360.0;
            hsv_to_rgb(h, 0.75, 0.9)
        })
        .collect()
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (u8, u8, u8) {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to8 = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    (to8(r), to8(g), to8(b))
}

/// Ground truth in world coordinates plus visibility bookkeeping.
struct Scene<T> {
    /// `boxes[target][frame]`.
    boxes: Vec<Vec<BoundingBox<T>>>,
    visible: Vec<Vec<bool>>,
    /// During an occlusion: who is in front, and when it started.
    occluder: Vec<Vec<Option<(usize, usize)>>>,
    colors: Vec<(u8, u8, u8)>,
}

fn build_scene<T: Real>(spec: &ScenarioSpec<T>, rng: &mut ChaCha8Rng) -> Scene<T> {
    let n = spec.n_targets;
    let frames = spec.frames;
    let (aw, ah) = (spec.arena_w.to_f64_(), spec.arena_h.to_f64_());

    // Per-target box size (fixed over time).
    let sizes: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let s = rng.random_range(0.85..1.15);
            (spec.box_w.to_f64_() * s, spec.box_h.to_f64_() * s)
        })
        .collect();

    let mut boxes: Vec<Vec<BoundingBox<T>>> = Vec::with_capacity(n);
    match spec.motion {
        MotionModel::ConstantVelocity => {
            for i in 0..n {
                let (w, h) = sizes[i];
                let lane = (i as f64 + 0.5) / n as f64 * ah - h / 2.0;
                let y = lane.clamp(0.0, (ah - h).max(0.0));
                let span = (aw - w).max(1.0);
                let mut vx = spec.speed.to_f64_()
                    * rng.random_range(0.75..1.25)
                    * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                // When the whole path fits the arena, start so it never has
                // to reflect: the motion then stays genuinely constant-
                // velocity. Longer paths start anywhere and bounce.
                let runway = vx.abs() * frames.saturating_sub(1) as f64;
                let mut x = if runway < span {
                    let lo = if vx >= 0.0 { 0.0 } else { runway };
                    let hi = if vx >= 0.0 { span - runway } else { span };
                    rng.random_range(lo..=hi)
                } else {
                    rng.random_range(0.0..span)
                };
                let mut track = Vec::with_capacity(frames);
                for _ in 0..frames {
                    track.push(bb::<T>(x, y, w, h));
                    x += vx;
                    bounce(&mut x, &mut vx, (aw - w).max(0.0));
                }
                boxes.push(track);
            }
        }
        MotionModel::Polynomial => {
            for i in 0..n {
                let (w, h) = sizes[i];
                let ctrl: Vec<(f64, f64)> = (0..3)
                    .map(|_| {
                        (
                            rng.random_range(0.0..(aw - w).max(1.0)),
                            rng.random_range(0.0..(ah - h).max(1.0)),
                        )
                    })
                    .collect();
                let mut track = Vec::with_capacity(frames);
                for t in 0..frames {
                    let u = if frames > 1 { t as f64 / (frames - 1) as f64 } else { 0.0 };
                    let b0 = (1.0 - u) * (1.0 - u);
                    let b1 = 2.0 * u * (1.0 - u);
                    let b2 = u * u;
                    let x = b0 * ctrl[0].0 + b1 * ctrl[1].0 + b2 * ctrl[2].0;
                    let y = b0 * ctrl[0].1 + b1 * ctrl[1].1 + b2 * ctrl[2].1;
                    track.push(bb::<T>(x, y, w, h));
                }
                boxes.push(track);
            }
        }
        MotionModel::CrossingPairs => {
            let pairs = n.div_ceil(2);
            for i in 0..n {
                let (w, h) = sizes[i];
                let pair = i / 2;
                let lane = (pair as f64 + 0.5) / pairs as f64 * ah - h / 2.0;
                // A tiny offset keeps pair members distinct at the meeting.
                let y = (lane + if i % 2 == 1 { 3.0 } else { 0.0 }).clamp(0.0, (ah - h).max(0.0));
                let range = (aw - w).max(1.0);
                let (mut x, mut vx) = if i % 2 == 0 {
                    (rng.random_range(0.0..range / 4.0), spec.speed.to_f64_())
                } else {
                    (rng.random_range(3.0 * range / 4.0..range), -spec.speed.to_f64_())
                };
                vx *= rng.random_range(0.9..1.1);
                let mut track = Vec::with_capacity(frames);
                for _ in 0..frames {
                    track.push(bb::<T>(x, y, w, h));
                    x += vx;
                    bounce(&mut x, &mut vx, (aw - w).max(0.0));
                }
                boxes.push(track);
            }
        }
    }

    let mut visible = vec![vec![true; frames]; n];
    let mut occluder: Vec<Vec<Option<(usize, usize)>>> = vec![vec![None; frames]; n];
    let mut apply = |target: usize, front: usize, from: usize, to: usize| {
        for f in from..=to {
            visible[target][f] = false;
            occluder[target][f] = Some((front, from));
        }
    };

    // Automatic occlusions where crossing pairs meet: the odd member hides
    // behind its partner.
    if spec.motion == MotionModel::CrossingPairs && spec.occlusion_len > 0 {
        for pair in 0..n / 2 {
            let (a, b) = (2 * pair, 2 * pair + 1);
            let mut last_end: Option<usize> = None;
            for t in 1..frames {
                let da = center_dx(&boxes[a][t - 1], &boxes[b][t - 1]);
                let db = center_dx(&boxes[a][t], &boxes[b][t]);
                if da.signum() != db.signum() {
                    let from = t.saturating_sub(spec.occlusion_len / 2);
                    let to = (from + spec.occlusion_len - 1).min(frames - 1);
                    if last_end.is_some_and(|e| from <= e) {
                        continue;
                    }
                    apply(b, a, from, to);
                    last_end = Some(to);
                }
            }
        }
    }

    // Hand-placed occlusions: the nearest other target is the front one.
    for occ in &spec.occlusions {
        let (cx, cy) = boxes[occ.target][occ.from].center();
        let front = (0..n)
            .filter(|&j| j != occ.target)
            .min_by(|&a, &b| {
                let da = dist2(boxes[a][occ.from].center(), (cx, cy));
                let db = dist2(boxes[b][occ.from].center(), (cx, cy));
                da.partial_cmp(&db).expect("finite distances").then(a.cmp(&b))
            })
            .expect("validated: a second target exists");
        apply(occ.target, front, occ.from, occ.to);
    }

    let colors = palette(spec.palette_size);
    let colors = (0..n).map(|i| colors[i % colors.len()]).collect();
    Scene { boxes, visible, occluder, colors }
}

fn bb<T: Real>(x: f64, y: f64, w: f64, h: f64) -> BoundingBox<T> {
    BoundingBox::new(T::of(x), T::of(y), T::of(w), T::of(h))
}

/// Reflects a 1-D position into `[0, hi]`, flipping the velocity on impact.
fn bounce(x: &mut f64, v: &mut f64, hi: f64) {
    if *x < 0.0 {
        *x = -*x;
        *v = -*v;
    }
    if *x > hi {
        *x = 2.0 * hi - *x;
        *v = -*v;
    }
    *x = x.clamp(0.0, hi);
}

fn center_dx<T: Real>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> f64 {
    (a.center().0 - b.center().0).to_f64_()
}

fn dist2<T: Real>(a: (T, T), b: (T, T)) -> f64 {
    let dx = (a.0 - b.0).to_f64_();
    let dy = (a.1 - b.1).to_f64_();
    dx * dx + dy * dy
}

/// Appearance signature of `color` with `noise` extra mass per layer spread
/// on randomly chosen bins.
fn signature_counts<T: Real>(
    color: (u8, u8, u8),
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> ColorHistogram<T> {
    let (_, a, b) = srgb_to_lab::<f64>(color.0, color.1, color.2);
    let ab = chroma_bin(a) * AB_BINS + chroma_bin(b);
    let cell = AB_BINS * AB_BINS;
    let mut counts = vec![0.0f64; HIST_LEN];
    for c in 0..CELLS {
        counts[c * cell + ab] += 1.0;
        counts[c * cell + rng.random_range(0..cell)] += noise;
    }
    ColorHistogram::from_counts(counts.into_iter().map(T::of).collect())
        .expect("signature layers carry mass")
}

/// What a synthetic interest point is attached to.
enum Anchor {
    /// Rides its owner's box at a fixed relative location.
    OwnBox,
    /// Stuck to the static background at this world position.
    Background((f64, f64)),
    /// Mistakenly tracks a different target at a fixed relative location.
    OtherBox(usize, (f64, f64)),
}

struct SimPoint<T> {
    owner: usize,
    rel: (f64, f64),
    born: usize,
    dies: usize,
    anchor: Anchor,
    samples: Vec<(T, T)>,
}

fn rel_to_world<T: Real>(b: &BoundingBox<T>, rel: (f64, f64)) -> (f64, f64) {
    (b.x.to_f64_() + rel.0 * b.w.to_f64_(), b.y.to_f64_() + rel.1 * b.h.to_f64_())
}

fn world_to_rel<T: Real>(b: &BoundingBox<T>, p: (f64, f64)) -> (f64, f64) {
    ((p.0 - b.x.to_f64_()) / b.w.to_f64_(), (p.1 - b.y.to_f64_()) / b.h.to_f64_())
}

fn simulate_points<T: Real>(
    spec: &ScenarioSpec<T>,
    scene: &Scene<T>,
    rng: &mut ChaCha8Rng,
) -> Result<IptStore<T>> {
    let n = spec.n_targets;
    let noise = Normal::new(0.0, spec.ipt_noise_std.to_f64_()).expect("validated std");
    let (dx, dy) = (spec.camera_drift.0.to_f64_(), spec.camera_drift.1.to_f64_());
    let mut points: Vec<SimPoint<T>> = Vec::new();
    let mut live_count = vec![0usize; n];

    for t in 0..spec.frames {
        // Retire the dead.
        for p in &points {
            if p.dies == t {
                live_count[p.owner] -= 1;
            }
        }
        // Replenish every visible target up to the density.
        for owner in 0..n {
            if !scene.visible[owner][t] {
                continue;
            }
            while live_count[owner] < spec.ipt_density {
                let rel = (rng.random_range(0.05..0.95), rng.random_range(0.05..0.95));
                let life = rng.random_range(spec.ipt_life.0..=spec.ipt_life.1);
                let world = rel_to_world(&scene.boxes[owner][t], rel);
                let anchor = if rng.random_bool(spec.ipt_outlier_rate.to_f64_().min(1.0)) {
                    if n > 1 && rng.random_bool(0.5) {
                        let mut other = rng.random_range(0..n - 1);
                        if other >= owner {
                            other += 1;
                        }
                        Anchor::OtherBox(other, world_to_rel(&scene.boxes[other][t], world))
                    } else {
                        Anchor::Background(world)
                    }
                } else {
                    Anchor::OwnBox
                };
                points.push(SimPoint {
                    owner,
                    rel,
                    born: t,
                    dies: t + life,
                    anchor,
                    samples: Vec::with_capacity(life),
                });
                live_count[owner] += 1;
            }
        }
        // Advance everything alive at t.
        for p in &mut points {
            if !(p.born <= t && t < p.dies) {
                continue;
            }
            let world = match &p.anchor {
                Anchor::OwnBox => {
                    if scene.visible[p.owner][t] {
                        rel_to_world(&scene.boxes[p.owner][t], p.rel)
                    } else {
                        // Hidden: the point slides onto the front target,
                        // keeping the offset it had when the occlusion began.
                        let (front, since) =
                            scene.occluder[p.owner][t].expect("invisible implies occluded");
                        let at_start = rel_to_world(&scene.boxes[p.owner][since], p.rel);
                        let rel_front = world_to_rel(&scene.boxes[front][since], at_start);
                        rel_to_world(&scene.boxes[front][t], rel_front)
                    }
                }
                Anchor::Background(w) => *w,
                Anchor::OtherBox(other, rel) => rel_to_world(&scene.boxes[*other][t], *rel),
            };
            let ix = world.0 + noise.sample(rng) + dx * t as f64;
            let iy = world.1 + noise.sample(rng) + dy * t as f64;
            p.samples.push((T::of(ix), T::of(iy)));
        }
    }

    let mut store = IptStore::new();
    for (id, p) in points.iter().enumerate() {
        store.insert_track(id, p.born, p.samples.clone())?;
    }
    Ok(store)
}

/// Generates the full bundle: ground truth, detections, interest points and
/// appearance histograms, all in drifting image coordinates.
pub fn generate<T: Real>(spec: &ScenarioSpec<T>) -> Result<SequenceBundle<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scene = build_scene(spec, &mut rng);
    let n = spec.n_targets;
    let (dx, dy) = (spec.camera_drift.0.to_f64_(), spec.camera_drift.1.to_f64_());
    let shift = |b: &BoundingBox<T>, t: usize| -> BoundingBox<T> {
        BoundingBox::new(
            b.x + T::of(dx * t as f64),
            b.y + T::of(dy * t as f64),
            b.w,
            b.h,
        )
    };

    let mut gt = Vec::with_capacity(n * spec.frames);
    for t in 0..spec.frames {
        for i in 0..n {
            gt.push(LabeledBox { track_id: i + 1, frame: t, bbox: shift(&scene.boxes[i][t], t) });
        }
    }

    let pos_noise = Normal::new(0.0, spec.pos_noise_std.to_f64_()).expect("validated std");
    let size_noise = Normal::new(0.0, spec.size_noise_std.to_f64_()).expect("validated std");
    let mut dets = DetectionSet::new();
    let mut hists = HistogramStore::new();
    let mut next_id = 0usize;
    let app_noise = spec.appearance_noise.to_f64_();
    let pal = palette(spec.palette_size);
    for t in 0..spec.frames {
        for i in 0..n {
            if !scene.visible[i][t] {
                continue;
            }
            if rng.random_bool(spec.miss_rate.to_f64_().min(1.0)) {
                continue;
            }
            let b = shift(&scene.boxes[i][t], t);
            let x = b.x.to_f64_() + pos_noise.sample(&mut rng);
            let y = b.y.to_f64_() + pos_noise.sample(&mut rng);
            let w = (b.w.to_f64_() + size_noise.sample(&mut rng)).max(2.0);
            let h = (b.h.to_f64_() + size_noise.sample(&mut rng)).max(2.0);
            let score =
                rng.random_range(spec.tp_score.0.to_f64_()..=spec.tp_score.1.to_f64_());
            dets.push(Detection {
                id: next_id,
                frame: t,
                bbox: bb(x, y, w, h),
                score: T::of(score),
            })?;
            hists.insert(next_id, signature_counts(scene.colors[i], app_noise, &mut rng));
            next_id += 1;
        }
        for _ in 0..n {
            if !rng.random_bool(spec.fp_rate.to_f64_().min(1.0)) {
                continue;
            }
            let s = rng.random_range(0.7..1.3);
            let w = spec.box_w.to_f64_() * s;
            let h = spec.box_h.to_f64_() * s;
            let x = rng.random_range(0.0..(spec.arena_w.to_f64_() - w).max(1.0))
                + dx * t as f64;
            let y = rng.random_range(0.0..(spec.arena_h.to_f64_() - h).max(1.0))
                + dy * t as f64;
            let score =
                rng.random_range(spec.fp_score.0.to_f64_()..=spec.fp_score.1.to_f64_());
            let color = pal[rng.random_range(0..spec.palette_size)];
            dets.push(Detection {
                id: next_id,
                frame: t,
                bbox: bb(x, y, w, h),
                score: T::of(score),
            })?;
            hists.insert(next_id, signature_counts(color, app_noise, &mut rng));
            next_id += 1;
        }
    }

    let ipts = simulate_points(spec, &scene, &mut rng)?;

    let mut bundle = SequenceBundle::new(dets, spec.fps, Flavor::Synth);
    bundle.frames = spec.frames;
    bundle.gt = Some(gt);
    bundle.ipts = Some(ipts);
    bundle.hists = Some(hists);
    bundle.validate()?;
    Ok(bundle)
}

/// Renders the scenario's world arena as flat-color frames: gray background,
/// each visible target a filled rectangle of its palette color.
pub fn render_frames<T: Real>(spec: &ScenarioSpec<T>) -> Result<Vec<RgbImage>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scene = build_scene(spec, &mut rng);
    let (w, h) = (spec.arena_w.to_f64_() as usize, spec.arena_h.to_f64_() as usize);
    let mut frames = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut img = RgbImage::new(w, h);
        for py in 0..h {
            for px in 0..w {
                img.set_pixel(px, py, (128, 128, 128));
            }
        }
        for i in 0..spec.n_targets {
            if !scene.visible[i][t] {
                continue;
            }
            let b = &scene.boxes[i][t];
            let x0 = b.x.to_f64_().max(0.0) as usize;
            let y0 = b.y.to_f64_().max(0.0) as usize;
            let x1 = (b.right().to_f64_().min(w as f64 - 1.0)) as usize;
            let y1 = (b.bottom().to_f64_().min(h as f64 - 1.0)) as usize;
            for py in y0..=y1.min(h - 1) {
                for px in x0..=x1.min(w - 1) {
                    img.set_pixel(px, py, scene.colors[i]);
                }
            }
        }
        frames.push(img);
    }
    Ok(frames)
}

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

/// Renders the spec as `key=value` text (the [`scenario_from_str`] format).
pub fn scenario_to_string<T: Real>(spec: &ScenarioSpec<T>) -> String {
    let occ = spec
        .occlusions
        .iter()
        .map(|o| format!("{}:{}-{}", o.target, o.from, o.to))
        .collect::<Vec<_>>()
        .join(";");
    format!(
        "seed={}\nn_targets={}\nframes={}\narena_w={:.6}\narena_h={:.6}\nmotion={}\n\
         box_w={:.6}\nbox_h={:.6}\nspeed={:.6}\npos_noise_std={:.6}\nsize_noise_std={:.6}\n\
         miss_rate={:.6}\nfp_rate={:.6}\ntp_score_lo={:.6}\ntp_score_hi={:.6}\n\
         fp_score_lo={:.6}\nfp_score_hi={:.6}\nipt_density={}\nipt_noise_std={:.6}\n\
         ipt_outlier_rate={:.6}\nipt_life_lo={}\nipt_life_hi={}\nocclusions={}\n\
         occlusion_len={}\ncamera_drift_x={:.6}\ncamera_drift_y={:.6}\npalette_size={}\n\
         appearance_noise={:.6}\nfps={:.6}\n",
        spec.seed,
        spec.n_targets,
        spec.frames,
        spec.arena_w,
        spec.arena_h,
        spec.motion,
        spec.box_w,
        spec.box_h,
        spec.speed,
        spec.pos_noise_std,
        spec.size_noise_std,
        spec.miss_rate,
        spec.fp_rate,
        spec.tp_score.0,
        spec.tp_score.1,
        spec.fp_score.0,
        spec.fp_score.1,
        spec.ipt_density,
        spec.ipt_noise_std,
        spec.ipt_outlier_rate,
        spec.ipt_life.0,
        spec.ipt_life.1,
        occ,
        spec.occlusion_len,
        spec.camera_drift.0,
        spec.camera_drift.1,
        spec.palette_size,
        spec.appearance_noise,
        spec.fps,
    )
}

/// Parses a scenario file; unknown keys are errors, unlisted keys keep their
/// defaults. The result is validated.
pub fn scenario_from_str<T: Real>(text: &str, path: &Path) -> Result<ScenarioSpec<T>> {
    let mut spec = ScenarioSpec::default();
    for (key, value, line_no) in parse_kv_str(text, path)? {
        let bad = |what: &str| Error::parse(path, line_no, format!("bad {what}: {value:?}"));
        let real = |what: &str| -> Result<T> {
            value.parse::<f64>().map(T::of).map_err(|_| bad(what))
        };
        let int = |what: &str| -> Result<usize> { value.parse().map_err(|_| bad(what)) };
        match key.as_str() {
            "seed" => spec.seed = value.parse().map_err(|_| bad("seed"))?,
            "n_targets" => spec.n_targets = int("n_targets")?,
            "frames" => spec.frames = int("frames")?,
            "arena_w" => spec.arena_w = real("arena_w")?,
            "arena_h" => spec.arena_h = real("arena_h")?,
            "motion" => spec.motion = value.parse().map_err(|_| bad("motion"))?,
            "box_w" => spec.box_w = real("box_w")?,
            "box_h" => spec.box_h = real("box_h")?,
            "speed" => spec.speed = real("speed")?,
            "pos_noise_std" => spec.pos_noise_std = real("pos_noise_std")?,
            "size_noise_std" => spec.size_noise_std = real("size_noise_std")?,
            "miss_rate" => spec.miss_rate = real("miss_rate")?,
            "fp_rate" => spec.fp_rate = real("fp_rate")?,
            "tp_score_lo" => spec.tp_score.0 = real("tp_score_lo")?,
            "tp_score_hi" => spec.tp_score.1 = real("tp_score_hi")?,
            "fp_score_lo" => spec.fp_score.0 = real("fp_score_lo")?,
            "fp_score_hi" => spec.fp_score.1 = real("fp_score_hi")?,
            "ipt_density" => spec.ipt_density = int("ipt_density")?,
            "ipt_noise_std" => spec.ipt_noise_std = real("ipt_noise_std")?,
            "ipt_outlier_rate" => spec.ipt_outlier_rate = real("ipt_outlier_rate")?,
            "ipt_life_lo" => spec.ipt_life.0 = int("ipt_life_lo")?,
            "ipt_life_hi" => spec.ipt_life.1 = int("ipt_life_hi")?,
            "occlusions" => {
                spec.occlusions = value
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(|item| {
                        let (target, span) = item.split_once(':').ok_or_else(|| bad("occlusions"))?;
                        let (from, to) = span.split_once('-').ok_or_else(|| bad("occlusions"))?;
                        Ok(Occlusion {
                            target: target.parse().map_err(|_| bad("occlusions"))?,
                            from: from.parse().map_err(|_| bad("occlusions"))?,
                            to: to.parse().map_err(|_| bad("occlusions"))?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
            }
            "occlusion_len" => spec.occlusion_len = int("occlusion_len")?,
            "camera_drift_x" => spec.camera_drift.0 = real("camera_drift_x")?,
            "camera_drift_y" => spec.camera_drift.1 = real("camera_drift_y")?,
            "palette_size" => spec.palette_size = int("palette_size")?,
            "appearance_noise" => spec.appearance_noise = real("appearance_noise")?,
            "fps" => spec.fps = real("fps")?,
            other => {
                return Err(Error::parse(path, line_no, format!("unknown scenario key {other:?}")))
            }
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// Reads a scenario file from disk.
pub fn read_scenario<T: Real>(path: &Path) -> Result<ScenarioSpec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    scenario_from_str(&text, path)
}

/// Writes a scenario file.
pub fn write_scenario<T: Real>(spec: &ScenarioSpec<T>, path: &Path) -> Result<()> {
    std::fs::write(path, scenario_to_string(spec)).map_err(|e| Error::io(path, e))
}
