//! Core data model: boxes, detections, targets and configuration.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Axis-aligned bounding box in image coordinates, `(x, y)` top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox<T> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

impl<T: Real> BoundingBox<T> {
    pub fn new(x: T, y: T, w: T, h: T) -> Self {
        BoundingBox { x, y, w, h }
    }

    #[inline]
    pub fn right(&self) -> T {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> T {
        self.y + self.h
    }

    #[inline]
    pub fn area(&self) -> T {
        self.w * self.h
    }

    #[inline]
    pub fn center(&self) -> (T, T) {
        let half = T::of(0.5);
        (self.x + self.w * half, self.y + self.h * half)
    }

    /// Middle of the bottom edge; a stable ground-plane proxy for pedestrians.
    #[inline]
    pub fn bottom_center(&self) -> (T, T) {
        (self.x + self.w * T::of(0.5), self.y + self.h)
    }

    /// Membership test with closed intervals on all four edges.
    #[inline]
    pub fn contains(&self, px: T, py: T) -> bool {
        px >= self.x && px <= self.right() && py >= self.y && py <= self.bottom()
    }

    /// Finite coordinates and strictly positive extent.
    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > T::zero()
            && self.h > T::zero()
    }
}

/// Intersection-over-union of two boxes; zero when the union is degenerate.
pub fn iou<T: Real>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    let ix = (a.right().min(b.right()) - a.x.max(b.x)).max(T::zero());
    let iy = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(T::zero());
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        T::zero()
    } else {
        inter / union
    }
}

/// Squared-and-doubled overlap `2 * IoU^2`, zero when either box is absent.
///
/// The squaring sharpens the preference for well-aligned boxes; the factor of
/// two puts the maximum on par with other potential magnitudes.
pub fn o2<T: Real>(a: Option<&BoundingBox<T>>, b: Option<&BoundingBox<T>>) -> T {
    match (a, b) {
        (Some(a), Some(b)) => {
            let v = iou(a, b);
            T::of(2.0) * v * v
        }
        _ => T::zero(),
    }
}

/// One detector response: a scored box on one frame, with a set-unique id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection<T> {
    pub id: usize,
    pub frame: usize,
    pub bbox: BoundingBox<T>,
    pub score: T,
}

/// A box owned by a track on one frame (ground truth or tracker output).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledBox<T> {
    pub track_id: usize,
    pub frame: usize,
    pub bbox: BoundingBox<T>,
}

/// Indexed collection of detections with unique ids.
#[derive(Debug, Clone, Default)]
pub struct DetectionSet<T> {
    dets: Vec<Detection<T>>,
    index: HashMap<usize, usize>,
    by_frame: Vec<Vec<usize>>,
}

impl<T: Real> DetectionSet<T> {
    pub fn new() -> Self {
        DetectionSet { dets: Vec::new(), index: HashMap::new(), by_frame: Vec::new() }
    }

    pub fn from_vec(dets: Vec<Detection<T>>) -> Result<Self> {
        let mut set = Self::new();
        for d in dets {
            set.push(d)?;
        }
        Ok(set)
    }

    /// Adds a detection; its id must be new and its box valid.
    pub fn push(&mut self, det: Detection<T>) -> Result<()> {
        if self.index.contains_key(&det.id) {
            return Err(Error::InvalidInput(format!("duplicate detection id {}", det.id)));
        }
        if !det.bbox.is_valid() {
            return Err(Error::InvalidInput(format!(
                "detection {} has a degenerate box ({:?})",
                det.id, det.bbox
            )));
        }
        if self.by_frame.len() <= det.frame {
            self.by_frame.resize(det.frame + 1, Vec::new());
        }
        self.by_frame[det.frame].push(det.id);
        self.index.insert(det.id, self.dets.len());
        self.dets.push(det);
        Ok(())
    }

    pub fn get(&self, id: usize) -> Option<&Detection<T>> {
        self.index.get(&id).map(|&i| &self.dets[i])
    }

    /// Accessor for ids known to exist; panics otherwise.
    #[inline]
    pub fn by_id(&self, id: usize) -> &Detection<T> {
        self.get(id).expect("detection id out of set")
    }

    /// Ids of the detections on `frame`, in insertion order.
    pub fn at_frame(&self, frame: usize) -> &[usize] {
        self.by_frame.get(frame).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Detection<T>> {
        self.dets.iter()
    }

    pub fn len(&self) -> usize {
        self.dets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dets.is_empty()
    }

    /// Largest frame index carrying a detection.
    pub fn max_frame(&self) -> Option<usize> {
        (0..self.by_frame.len()).rev().find(|&f| !self.by_frame[f].is_empty())
    }
}

/// One target: a partial function from frames to detection ids, plus the
/// bookkeeping needed to report association latency.
///
/// Within a target every frame maps to at most one detection and a detection
/// id appears at most once; the engine maintains the global counterpart (no
/// detection owned by two targets) across all targets per step.
#[derive(Debug, Clone)]
pub struct Target {
    pub id: usize,
    assoc: BTreeMap<usize, usize>,
    last_assoc: HashMap<usize, usize>,
}

impl Target {
    pub fn new(id: usize) -> Self {
        Target { id, assoc: BTreeMap::new(), last_assoc: HashMap::new() }
    }

    /// Detection id associated on `frame`, if any.
    pub fn detection_at(&self, frame: usize) -> Option<usize> {
        self.assoc.get(&frame).copied()
    }

    /// Associates `det_id` on `frame`, replacing a previous association there.
    pub fn set(&mut self, frame: usize, det_id: usize) {
        self.assoc.insert(frame, det_id);
    }

    /// Drops the association on `frame` (no-op when empty).
    pub fn remove_frame(&mut self, frame: usize) -> Option<usize> {
        self.assoc.remove(&frame)
    }

    /// Frame-ordered view of the associations.
    pub fn assoc(&self) -> &BTreeMap<usize, usize> {
        &self.assoc
    }

    pub fn first_frame(&self) -> Option<usize> {
        self.assoc.keys().next().copied()
    }

    pub fn last_frame(&self) -> Option<usize> {
        self.assoc.keys().next_back().copied()
    }

    pub fn len(&self) -> usize {
        self.assoc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assoc.is_empty()
    }

    /// Step at which `det_id` last entered this target, if it is a member.
    pub fn last_assoc_time(&self, det_id: usize) -> Option<usize> {
        self.last_assoc.get(&det_id).copied()
    }

    /// Records that `det_id` (re-)entered the target at step `t`.
    pub fn set_last_assoc(&mut self, det_id: usize, t: usize) {
        self.last_assoc.insert(det_id, t);
    }

    /// Drops latency bookkeeping for detections no longer associated.
    pub fn retain_last_assoc(&mut self) {
        let live: std::collections::HashSet<usize> = self.assoc.values().copied().collect();
        self.last_assoc.retain(|det, _| live.contains(det));
    }

    /// Copy of this target with every association at `from` or later removed
    /// (the revisable window stripped before re-association); latency
    /// bookkeeping is kept only for the surviving detections.
    pub fn cleaned(&self, from: usize) -> Target {
        let mut t = Target {
            id: self.id,
            assoc: self.assoc.range(..from).map(|(&f, &d)| (f, d)).collect(),
            last_assoc: self.last_assoc.clone(),
        };
        t.retain_last_assoc();
        t
    }

    /// Expands the associations into labeled boxes using the detection set.
    pub fn to_labeled_boxes<T: Real>(&self, dets: &DetectionSet<T>) -> Vec<LabeledBox<T>> {
        self.assoc
            .iter()
            .map(|(&frame, &det_id)| LabeledBox {
                track_id: self.id,
                frame,
                bbox: dets.by_id(det_id).bbox,
            })
            .collect()
    }
}

/// Engine configuration. Field defaults reproduce the published operating
/// point; `validate` enforces the documented ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct Config<T> {
    /// Temporal window radius in frames: frames `< t - tau` are immutable.
    pub tau: usize,
    /// Regularizer added to the descriptor pair count during normalization.
    pub lambda: T,
    /// Weight of the overlap term in the exclusion potential.
    pub alpha: T,
    /// Weight of the shared-detection term in the exclusion potential.
    pub beta: T,
    /// Weight of the motion-smoothness part of the high-order potential.
    pub gamma: T,
    /// Weight of the appearance part of the high-order potential.
    pub epsilon: T,
    /// Appearance-similarity offset inside the high-order potential.
    pub theta: T,
    /// Per-frame decay of the target consistency reward.
    pub eta: T,
    /// Frame gaps at which descriptor weights are trained and consulted.
    pub neighbor_set: Vec<usize>,
    /// Minimum affinity for extending a tracklet during greedy growth.
    pub tracklet_affinity_min: T,
    /// Minimum predicted-box IoU for admitting a tracklet into a hypothesis set.
    pub gating_iou_min: T,
    /// Frames a target may go without associations before it stops hypothesizing.
    pub t_active: usize,
    /// Order of the polynomial motion model (1 or 2).
    pub poly_order: usize,
    /// Descriptor grid resolution per axis.
    pub grid_n: usize,
    /// Sequence frame rate; only used to derive time-based defaults.
    pub fps: T,
    /// Worker threads for the parallel stages (0 = all available cores).
    pub workers: usize,
    /// Measurement noise (pixels) of the output smoother.
    pub kalman_measurement_std: T,
    /// Process noise of the output smoother.
    pub kalman_process_std: T,
    /// Cap on joint-table entries before exact inference falls back to ICM.
    pub solver_budget: u128,
}

impl<T: Real> Default for Config<T> {
    fn default() -> Self {
        Config {
            tau: 10,
            lambda: T::of(20.0),
            alpha: T::of(0.5),
            beta: T::of(100.0),
            gamma: T::of(20.0),
            epsilon: T::of(0.4),
            theta: T::of(0.8),
            eta: T::of(0.98),
            neighbor_set: vec![1, 2, 5, 10, 20],
            tracklet_affinity_min: T::of(0.4),
            gating_iou_min: T::of(0.1),
            t_active: 10,
            poly_order: 1,
            grid_n: 4,
            fps: T::of(10.0),
            workers: 1,
            kalman_measurement_std: T::one(),
            kalman_process_std: T::of(0.5),
            solver_budget: 10_000_000,
        }
    }
}

impl<T: Real> Config<T> {
    /// Default configuration with time-based values derived from `fps`
    /// (`t_active` covers one second of footage).
    pub fn with_fps(fps: T) -> Self {
        let mut cfg = Self::default();
        cfg.fps = fps;
        cfg.t_active = fps.round().to_f64_() as usize;
        cfg
    }

    /// Checks documented ranges; returns the offending field in the message.
    pub fn validate(&self) -> Result<()> {
        fn nonneg<T: Real>(name: &str, v: T) -> Result<()> {
            if v < T::zero() || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
            Ok(())
        }
        nonneg("lambda", self.lambda)?;
        nonneg("alpha", self.alpha)?;
        nonneg("beta", self.beta)?;
        nonneg("gamma", self.gamma)?;
        nonneg("epsilon", self.epsilon)?;
        nonneg("theta", self.theta)?;
        nonneg("eta", self.eta)?;
        nonneg("tracklet_affinity_min", self.tracklet_affinity_min)?;
        nonneg("gating_iou_min", self.gating_iou_min)?;
        if self.tau < 1 {
            return Err(Error::Config("tau must be >= 1".into()));
        }
        if self.neighbor_set.is_empty() {
            return Err(Error::Config("neighbor_set must not be empty".into()));
        }
        if !self.neighbor_set.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!(
                "neighbor_set must be strictly ascending, got {:?}",
                self.neighbor_set
            )));
        }
        if self.neighbor_set[0] == 0 {
            return Err(Error::Config("neighbor_set gaps must be >= 1".into()));
        }
        if !(self.poly_order == 1 || self.poly_order == 2) {
            return Err(Error::Config(format!("poly_order must be 1 or 2, got {}", self.poly_order)));
        }
        if self.grid_n < 1 {
            return Err(Error::Config("grid_n must be >= 1".into()));
        }
        if !(self.fps > T::zero()) || !self.fps.is_finite() {
            return Err(Error::Config(format!("fps must be finite and > 0, got {}", self.fps)));
        }
        if self.kalman_measurement_std <= T::zero() {
            return Err(Error::Config("kalman_measurement_std must be > 0".into()));
        }
        if self.kalman_process_std < T::zero() {
            return Err(Error::Config("kalman_process_std must be >= 0".into()));
        }
        if self.solver_budget == 0 {
            return Err(Error::Config("solver_budget must be >= 1".into()));
        }
        Ok(())
    }

    /// Largest trained frame gap.
    pub fn max_gap(&self) -> usize {
        self.neighbor_set.last().copied().unwrap_or(1)
    }
}
