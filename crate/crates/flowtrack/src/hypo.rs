//! Hypothesis generation: greedy tracklet growth on the descriptor affinity,
//! polynomial motion prediction, predictor-gated hypothesis sets for existing
//! targets and NMS-filtered sets for new targets.

use std::collections::{HashMap, HashSet};

use crate::alfd::{AffinityCache, AlfdModel};
use crate::error::{Error, Result};
use crate::ipt::IptStore;
use crate::scalar::Real;
use crate::types::{iou, BoundingBox, Config, Detection, DetectionSet, Target};

/// A short detection chain inside the window: at most one detection per
/// frame, stored as `(frame, detection id)` ascending in frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tracklet {
    entries: Vec<(usize, usize)>,
}

impl Tracklet {
    /// Builds a tracklet from detection ids; frames must be distinct.
    pub fn from_ids<T: Real>(ids: &[usize], dets: &DetectionSet<T>) -> Self {
        let mut entries: Vec<(usize, usize)> =
            ids.iter().map(|&id| (dets.by_id(id).frame, id)).collect();
        entries.sort_unstable();
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0), "one detection per frame");
        Tracklet { entries }
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn det_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(_, id)| id)
    }

    pub fn at_frame(&self, frame: usize) -> Option<usize> {
        self.entries.iter().find(|&&(f, _)| f == frame).map(|&(_, id)| id)
    }

    pub fn first_frame(&self) -> Option<usize> {
        self.entries.first().map(|&(f, _)| f)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical identity for exact-set deduplication.
    pub fn key(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.det_ids().collect();
        ids.sort_unstable();
        ids
    }

    /// Summed detection scores; the tracklet-NMS ranking.
    pub fn score<T: Real>(&self, dets: &DetectionSet<T>) -> T {
        self.det_ids().map(|id| dets.by_id(id).score).sum()
    }
}

/// A candidate window association for one target; empty means termination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hypothesis {
    entries: Vec<(usize, usize)>,
}

impl Hypothesis {
    pub fn empty() -> Self {
        Hypothesis { entries: Vec::new() }
    }

    pub fn from_tracklet(t: &Tracklet) -> Self {
        Hypothesis { entries: t.entries().to_vec() }
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn at_frame(&self, frame: usize) -> Option<usize> {
        self.entries.iter().find(|&&(f, _)| f == frame).map(|&(_, id)| id)
    }

    pub fn det_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(_, id)| id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Whose hypotheses a set holds: an existing target or a prospective new one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetRef {
    Existing(usize),
    New(usize),
}

/// All candidate hypotheses for one target; index 0 is always termination.
#[derive(Debug, Clone)]
pub struct HypothesisSet {
    pub target_ref: TargetRef,
    pub hypotheses: Vec<Hypothesis>,
}

impl HypothesisSet {
    /// Builds a set from non-empty candidates, prepending the empty
    /// hypothesis and dropping duplicates.
    pub fn new(target_ref: TargetRef, candidates: Vec<Hypothesis>) -> Self {
        let mut hypotheses = vec![Hypothesis::empty()];
        for h in candidates {
            if !h.is_empty() && !hypotheses.contains(&h) {
                hypotheses.push(h);
            }
        }
        HypothesisSet { target_ref, hypotheses }
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }
}

/// Per-coordinate polynomial least-squares motion model.
///
/// Fits x, y, w, h independently against the frame index (centered for
/// conditioning). Falls back to a constant (the last box) when there are
/// fewer points than coefficients or the normal equations degenerate.
#[derive(Debug, Clone)]
pub struct PolyPredictor<T> {
    t0: T,
    order: usize,
    coeffs: [[T; 3]; 4],
}

impl<T: Real> PolyPredictor<T> {
    /// Least-squares fit over `(frame, box)` samples with distinct frames.
    pub fn fit(points: &[(usize, BoundingBox<T>)], order: usize) -> Self {
        assert!(!points.is_empty(), "predictor needs at least one point");
        assert!(order >= 1 && order <= 2, "order must be 1 or 2");
        let n = points.len();
        let eff = order.min(n - 1);
        let t0 = points.iter().map(|&(f, _)| T::of_usize(f)).sum::<T>() / T::of_usize(n);
        let last = points[points.len() - 1].1;
        let mut coeffs = [[T::zero(); 3]; 4];
        let fallback = [last.x, last.y, last.w, last.h];
        if eff == 0 {
            for (c, &v) in coeffs.iter_mut().zip(&fallback) {
                c[0] = v;
            }
            return PolyPredictor { t0, order, coeffs };
        }
        // Shared normal-equation matrix: moments of the centered abscissa.
        let dim = eff + 1;
        let mut moments = [T::zero(); 5];
        for &(f, _) in points {
            let u = T::of_usize(f) - t0;
            let mut p = T::one();
            for m in moments.iter_mut().take(2 * eff + 1) {
                *m += p;
                p *= u;
            }
        }
        for coord in 0..4 {
            let mut a = [[T::zero(); 3]; 3];
            let mut b = [T::zero(); 3];
            for r in 0..dim {
                for c in 0..dim {
                    a[r][c] = moments[r + c];
                }
            }
            for &(f, bx) in points {
                let u = T::of_usize(f) - t0;
                let y = [bx.x, bx.y, bx.w, bx.h][coord];
                let mut p = T::one();
                for bi in b.iter_mut().take(dim) {
                    *bi += y * p;
                    p *= u;
                }
            }
            match solve_small(&mut a, &mut b, dim) {
                Some(sol) => coeffs[coord][..dim].copy_from_slice(&sol[..dim]),
                None => {
                    coeffs[coord] = [T::zero(); 3];
                    coeffs[coord][0] = fallback[coord];
                }
            }
        }
        PolyPredictor { t0, order, coeffs }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Extrapolated/interpolated box at `frame`.
    pub fn predict(&self, frame: usize) -> BoundingBox<T> {
        let u = T::of_usize(frame) - self.t0;
        let eval = |c: &[T; 3]| c[0] + u * (c[1] + u * c[2]);
        BoundingBox::new(
            eval(&self.coeffs[0]),
            eval(&self.coeffs[1]),
            eval(&self.coeffs[2]),
            eval(&self.coeffs[3]),
        )
    }
}

/// Gaussian elimination with partial pivoting on a `dim`-sized system.
fn solve_small<T: Real>(a: &mut [[T; 3]; 3], b: &mut [T; 3], dim: usize) -> Option<[T; 3]> {
    for col in 0..dim {
        let pivot = (col..dim).max_by(|&i, &j| {
            a[i][col].abs().partial_cmp(&a[j][col].abs()).expect("finite moments")
        })?;
        if a[pivot][col].abs() < T::of(1e-12) {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..dim {
            let f = a[row][col] / a[col][col];
            for k in col..dim {
                a[row][k] = a[row][k] - f * a[col][k];
            }
            b[row] = b[row] - f * b[col];
        }
    }
    let mut x = [T::zero(); 3];
    for col in (0..dim).rev() {
        let mut s = b[col];
        for k in col + 1..dim {
            s = s - a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

/// Fits a predictor over a target's most recent `2 * tau` associated frames.
pub fn fit_predictor<T: Real>(
    target: &Target,
    dets: &DetectionSet<T>,
    cfg: &Config<T>,
) -> Result<PolyPredictor<T>> {
    if target.is_empty() {
        return Err(Error::InvalidInput(format!("target {} has no associations to fit", target.id)));
    }
    let take = 2 * cfg.tau;
    let mut points: Vec<(usize, BoundingBox<T>)> = target
        .assoc()
        .iter()
        .rev()
        .take(take)
        .map(|(&f, &id)| (f, dets.by_id(id).bbox))
        .collect();
    points.reverse();
    Ok(PolyPredictor::fit(&points, cfg.poly_order))
}

/// Dense symmetric affinity lookup over the window's detections. Pairs whose
/// frame gap is not in the neighbor set have no defined affinity.
#[derive(Debug, Clone)]
pub struct WindowAffinity<T> {
    pos: HashMap<usize, usize>,
    aff: Vec<Option<T>>,
    n: usize,
}

impl<T: Real> WindowAffinity<T> {
    /// Computes affinities for all neighbor-gap pairs of detections in frames
    /// `[lo, hi]`, reusing `cache` across steps.
    pub fn build(
        dets: &DetectionSet<T>,
        lo: usize,
        hi: usize,
        model: &AlfdModel<T>,
        store: &IptStore<T>,
        cache: &AffinityCache<T>,
        cfg: &Config<T>,
    ) -> Result<Self> {
        let mut ids: Vec<usize> = (lo..=hi).flat_map(|f| dets.at_frame(f).iter().copied()).collect();
        ids.sort_unstable();
        let n = ids.len();
        let pos: HashMap<usize, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut aff = vec![None; n * n];
        for i in 0..n {
            let d_i = dets.by_id(ids[i]);
            for j in i + 1..n {
                let d_j = dets.by_id(ids[j]);
                let gap = d_i.frame.abs_diff(d_j.frame);
                if cfg.neighbor_set.binary_search(&gap).is_ok() {
                    let a = cache.affinity(model, store, d_i, d_j, cfg.lambda)?;
                    aff[i * n + j] = Some(a);
                    aff[j * n + i] = Some(a);
                }
            }
        }
        Ok(WindowAffinity { pos, aff, n })
    }

    /// Hand-scripted lookup for tests and small harnesses.
    pub fn from_pairs(entries: &[(usize, usize, T)]) -> Self {
        let mut ids: Vec<usize> = entries
            .iter()
            .flat_map(|&(a, b, _)| [a, b])
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        ids.sort_unstable();
        let n = ids.len();
        let pos: HashMap<usize, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut aff = vec![None; n * n];
        for &(a, b, v) in entries {
            let (i, j) = (pos[&a], pos[&b]);
            aff[i * n + j] = Some(v);
            aff[j * n + i] = Some(v);
        }
        WindowAffinity { pos, aff, n }
    }

    /// Affinity between two detection ids, when defined.
    #[inline]
    pub fn get(&self, a: usize, b: usize) -> Option<T> {
        let i = *self.pos.get(&a)?;
        let j = *self.pos.get(&b)?;
        self.aff[i * self.n + j]
    }
}

/// Greedily grows a tracklet from a confident seed: repeatedly admits the
/// detection (in a frame not yet covered) with the highest affinity to any
/// current member, until that best affinity drops below the threshold or the
/// window is exhausted. Score ties prefer the lowest detection id.
pub fn grow_tracklet<T: Real>(
    seed: &Detection<T>,
    dets: &DetectionSet<T>,
    lo: usize,
    hi: usize,
    aff: &WindowAffinity<T>,
    cfg: &Config<T>,
) -> Tracklet {
    debug_assert!(seed.score > T::zero(), "seeds must be confident detections");
    let mut members = vec![seed.id];
    let mut covered: HashSet<usize> = HashSet::from([seed.frame]);

    // (det id, frame, best affinity to the current members), id-ascending.
    let mut cands: Vec<(usize, usize, Option<T>)> = (lo..=hi)
        .filter(|&f| f != seed.frame)
        .flat_map(|f| dets.at_frame(f).iter().map(move |&id| (id, f)))
        .map(|(id, f)| (id, f, aff.get(id, seed.id)))
        .collect();
    cands.sort_unstable_by_key(|&(id, _, _)| id);

    loop {
        let mut best: Option<(usize, T)> = None; // (candidate index, score)
        for (k, &(_, _, score)) in cands.iter().enumerate() {
            if let Some(s) = score {
                if best.map_or(true, |(_, bs)| s > bs) {
                    best = Some((k, s));
                }
            }
        }
        let Some((k, s)) = best else { break };
        if s < cfg.tracklet_affinity_min {
            break;
        }
        let (new_id, new_frame, _) = cands[k];
        members.push(new_id);
        covered.insert(new_frame);
        cands.retain(|&(_, f, _)| f != new_frame);
        if covered.len() == hi - lo + 1 {
            break;
        }
        for c in &mut cands {
            if let Some(a) = aff.get(c.0, new_id) {
                c.2 = Some(match c.2 {
                    Some(old) if old >= a => old,
                    _ => a,
                });
            }
        }
    }
    Tracklet::from_ids(&members, dets)
}

/// The unique tracklet set for one step: one grown tracklet per confident
/// window detection, plus each target's residual window associations,
/// deduplicated by exact detection-set equality (first occurrence wins).
pub fn generate_tracklets<T: Real>(
    dets: &DetectionSet<T>,
    targets: &[Target],
    lo: usize,
    hi: usize,
    aff: &WindowAffinity<T>,
    cfg: &Config<T>,
) -> Vec<Tracklet> {
    let mut out: Vec<Tracklet> = Vec::new();
    let mut seen: HashSet<Vec<usize>> = HashSet::new();

    let mut seeds: Vec<usize> = (lo..=hi)
        .flat_map(|f| dets.at_frame(f).iter().copied())
        .filter(|&id| dets.by_id(id).score > T::zero())
        .collect();
    seeds.sort_unstable();
    for seed in seeds {
        let t = grow_tracklet(dets.by_id(seed), dets, lo, hi, aff, cfg);
        if seen.insert(t.key()) {
            out.push(t);
        }
    }

    for target in targets {
        let residual: Vec<usize> = target
            .assoc()
            .range(lo..=hi)
            .map(|(_, &id)| id)
            .collect();
        if residual.is_empty() {
            continue;
        }
        let t = Tracklet::from_ids(&residual, dets);
        if seen.insert(t.key()) {
            out.push(t);
        }
    }
    out
}

/// Hypothesis set for an existing target: termination plus every tracklet
/// whose detections overlap the motion prediction (IoU above the gate) on at
/// least one window frame. Inactive targets (nothing associated within
/// `tau + t_active` frames of `t`) get no set. `index` is the target's
/// position in the caller's target list, echoed in the set's reference.
pub fn hypotheses_for_target<T: Real>(
    target: &Target,
    index: usize,
    t: usize,
    tracklets: &[Tracklet],
    predictor: &PolyPredictor<T>,
    dets: &DetectionSet<T>,
    cfg: &Config<T>,
) -> Option<HypothesisSet> {
    let horizon = t.saturating_sub(cfg.tau + cfg.t_active);
    if target.last_frame().map_or(true, |f| f < horizon) {
        return None;
    }
    let gated: Vec<Hypothesis> = tracklets
        .iter()
        .filter(|tr| {
            tr.entries().iter().any(|&(f, id)| {
                iou(&predictor.predict(f), &dets.by_id(id).bbox) > cfg.gating_iou_min
            })
        })
        .map(Hypothesis::from_tracklet)
        .collect();
    Some(HypothesisSet::new(TargetRef::Existing(index), gated))
}

/// New-target hypothesis sets: tracklet NMS (rank by summed detection score,
/// greedily keep, suppress any candidate sharing more than half of its own
/// detections with a kept one), then one `{empty, tracklet}` set per
/// survivor. Slots are numbered after the existing sets.
pub fn new_target_sets<T: Real>(
    tracklets: &[Tracklet],
    existing: &[HypothesisSet],
    dets: &DetectionSet<T>,
) -> Vec<HypothesisSet> {
    let mut ranked: Vec<&Tracklet> = tracklets.iter().collect();
    ranked.sort_by(|a, b| {
        b.score(dets)
            .partial_cmp(&a.score(dets))
            .expect("finite scores")
            .then_with(|| a.first_frame().cmp(&b.first_frame()))
            .then_with(|| a.key().cmp(&b.key()))
    });
    let mut kept: Vec<&Tracklet> = Vec::new();
    for cand in ranked {
        let cand_ids: HashSet<usize> = cand.det_ids().collect();
        let suppressed = kept.iter().any(|k| {
            let shared = k.det_ids().filter(|id| cand_ids.contains(id)).count();
            2 * shared > cand.len()
        });
        if !suppressed {
            kept.push(cand);
        }
    }
    kept.iter()
        .enumerate()
        .map(|(slot, tr)| {
            HypothesisSet::new(TargetRef::New(existing.len() + slot), vec![Hypothesis::from_tracklet(tr)])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn det(id: usize, frame: usize, x: f64, score: f64) -> Detection<f64> {
        Detection { id, frame, bbox: BoundingBox::new(x, 0.0, 10.0, 10.0), score }
    }

    fn det_set(dets: Vec<Detection<f64>>) -> DetectionSet<f64> {
        DetectionSet::from_vec(dets).unwrap()
    }

    #[test]
    fn tracklet_orders_and_keys() {
        let dets = det_set(vec![det(5, 2, 0.0, 1.0), det(3, 0, 0.0, 1.0), det(4, 1, 0.0, 1.0)]);
        let t = Tracklet::from_ids(&[5, 3, 4], &dets);
        assert_eq!(t.entries(), &[(0, 3), (1, 4), (2, 5)]);
        assert_eq!(t.key(), vec![3, 4, 5]);
        assert_eq!(t.at_frame(1), Some(4));
        assert_eq!(t.at_frame(9), None);
        assert_eq!(t.score(&dets), 3.0);
    }

    #[test]
    fn hypothesis_set_always_contains_termination_first() {
        let dets = det_set(vec![det(0, 0, 0.0, 1.0)]);
        let t = Tracklet::from_ids(&[0], &dets);
        let h = Hypothesis::from_tracklet(&t);
        let set = HypothesisSet::new(TargetRef::Existing(7), vec![h.clone(), h.clone()]);
        assert_eq!(set.len(), 2);
        assert!(set.hypotheses[0].is_empty());
        assert_eq!(set.hypotheses[1], h);
    }

    fn boxes_moving(dx: f64, n: usize) -> Vec<(usize, BoundingBox<f64>)> {
        (0..n).map(|k| (k, BoundingBox::new(10.0 + dx * k as f64, 5.0, 10.0, 20.0))).collect()
    }

    #[test]
    fn predictor_constant_fit_is_exact() {
        let pts = boxes_moving(0.0, 4);
        let p = PolyPredictor::fit(&pts, 1);
        for f in [0usize, 7, 30] {
            let b = p.predict(f);
            assert_relative_eq!(b.x, 10.0, epsilon = 1e-9);
            assert_relative_eq!(b.y, 5.0, epsilon = 1e-9);
            assert_relative_eq!(b.w, 10.0, epsilon = 1e-9);
            assert_relative_eq!(b.h, 20.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn predictor_linear_fit_extrapolates() {
        // +5 px/frame in x over frames 0..=5; prediction at 7 is +10 past 5.
        let pts = boxes_moving(5.0, 6);
        let p = PolyPredictor::fit(&pts, 1);
        let b = p.predict(7);
        assert_relative_eq!(b.x, 10.0 + 5.0 * 7.0, epsilon = 1e-9);
    }

    #[test]
    fn predictor_quadratic_fit_recovers_parabola() {
        let pts: Vec<(usize, BoundingBox<f64>)> = (0..7)
            .map(|k| {
                let kf = k as f64;
                (k, BoundingBox::new(2.0 + 3.0 * kf + 0.5 * kf * kf, 0.0, 10.0, 10.0))
            })
            .collect();
        let p = PolyPredictor::fit(&pts, 2);
        let b = p.predict(10);
        assert_relative_eq!(b.x, 2.0 + 30.0 + 50.0, epsilon = 1e-7);
    }

    #[test]
    fn predictor_single_point_falls_back_to_constant() {
        let pts = vec![(3usize, BoundingBox::new(1.0, 2.0, 3.0, 4.0))];
        let p = PolyPredictor::fit(&pts, 2);
        let b = p.predict(9);
        assert_eq!((b.x, b.y, b.w, b.h), (1.0, 2.0, 3.0, 4.0));
    }

    #[test]
    fn fit_predictor_uses_recent_associations_only() {
        // 30 associations; the first 10 are far away, the last 20 on a line.
        let mut cfg = Config::<f64>::default();
        cfg.poly_order = 1;
        let mut dets = DetectionSet::new();
        let mut target = Target::new(0);
        for f in 0..30usize {
            let x = if f < 10 { 1000.0 } else { f as f64 * 2.0 };
            dets.push(Detection {
                id: f,
                frame: f,
                bbox: BoundingBox::new(x, 0.0, 10.0, 10.0),
                score: 1.0,
            })
            .unwrap();
            target.set(f, f);
        }
        let p = fit_predictor(&target, &dets, &cfg).unwrap();
        assert_relative_eq!(p.predict(31).x, 62.0, epsilon = 1e-9);
        // Empty target errors.
        assert!(fit_predictor(&Target::new(1), &dets, &cfg).is_err());
    }

    #[test]
    fn grow_stops_below_threshold() {
        let dets = det_set(vec![det(0, 0, 0.0, 1.0), det(1, 1, 0.0, 1.0), det(2, 2, 0.0, 1.0)]);
        let cfg = Config::<f64>::default();
        // 0-1 strong, anything to 2 weak (0.39 < 0.4).
        let aff = WindowAffinity::from_pairs(&[(0, 1, 0.9), (1, 2, 0.39), (0, 2, 0.1)]);
        let t = grow_tracklet(dets.by_id(0), &dets, 0, 2, &aff, &cfg);
        assert_eq!(t.key(), vec![0, 1]);
        // Exactly at the threshold the candidate is still admitted.
        let aff = WindowAffinity::from_pairs(&[(0, 1, 0.9), (1, 2, 0.4)]);
        let t = grow_tracklet(dets.by_id(0), &dets, 0, 2, &aff, &cfg);
        assert_eq!(t.key(), vec![0, 1, 2]);
    }

    #[test]
    fn grow_without_candidates_returns_seed() {
        let dets = det_set(vec![det(0, 0, 0.0, 1.0)]);
        let cfg = Config::<f64>::default();
        let aff = WindowAffinity::from_pairs(&[]);
        let t = grow_tracklet(dets.by_id(0), &dets, 0, 5, &aff, &cfg);
        assert_eq!(t.key(), vec![0]);
    }

    #[test]
    fn grow_prefers_highest_affinity_then_lowest_id() {
        let dets = det_set(vec![
            det(0, 1, 0.0, 1.0),
            det(1, 0, 0.0, 1.0),
            det(2, 0, 5.0, 1.0),
            det(3, 2, 0.0, 1.0),
        ]);
        let cfg = Config::<f64>::default();
        // Both frame-0 candidates tie at 0.8: lowest id (1) wins; frame 0 is
        // then covered, so 2 is out; 3 is pulled in by its link to 1.
        let aff =
            WindowAffinity::from_pairs(&[(0, 1, 0.8), (0, 2, 0.8), (1, 3, 0.7), (0, 3, 0.1)]);
        let t = grow_tracklet(dets.by_id(0), &dets, 0, 2, &aff, &cfg);
        assert_eq!(t.key(), vec![0, 1, 3]);
    }

    #[test]
    fn grow_covers_clean_window() {
        // Chain affinities 0.9 along one target across the whole window.
        let n = 11usize;
        let dets = det_set((0..n).map(|f| det(f, f, 0.0, 1.0)).collect());
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                for gap in [1usize, 2, 5, 10] {
                    if j - i == gap {
                        pairs.push((i, j, 0.9));
                    }
                }
            }
        }
        let cfg = Config::<f64>::default();
        let aff = WindowAffinity::from_pairs(&pairs);
        let t = grow_tracklet(dets.by_id(5), &dets, 0, n - 1, &aff, &cfg);
        assert_eq!(t.len(), n);
    }

    #[test]
    fn generate_tracklets_dedups_and_adds_residuals() {
        let dets = det_set(vec![
            det(0, 0, 0.0, 1.0),
            det(1, 1, 0.0, 1.0),
            det(2, 2, 500.0, -0.5), // unconfident: no seed
        ]);
        let cfg = Config::<f64>::default();
        let aff = WindowAffinity::from_pairs(&[(0, 1, 0.9)]);
        // Both seeds 0 and 1 grow to {0, 1}: one survives dedup. Target 9
        // holds {2} in-window, so its residual appears as a tracklet.
        let mut target = Target::new(9);
        target.set(2, 2);
        let ts = generate_tracklets(&dets, &[target], 0, 2, &aff, &cfg);
        let keys: Vec<Vec<usize>> = ts.iter().map(|t| t.key()).collect();
        assert_eq!(keys, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn generate_tracklets_empty_inputs() {
        let dets = det_set(vec![det(0, 0, 0.0, -1.0)]);
        let cfg = Config::<f64>::default();
        let aff = WindowAffinity::from_pairs(&[]);
        assert!(generate_tracklets(&dets, &[], 0, 5, &aff, &cfg).is_empty());
    }

    #[test]
    fn gating_admits_overlapping_tracklets_only() {
        let cfg = Config::<f64>::default();
        // Prediction stays at x = 0; tracklet A overlaps it, B is far away.
        let mut target = Target::new(4);
        let mut hist_dets = Vec::new();
        for f in 0..10usize {
            hist_dets.push(det(100 + f, f, 0.0, 1.0));
        }
        let mut all = hist_dets.clone();
        all.push(det(0, 18, 2.0, 1.0));
        all.push(det(1, 19, 300.0, 1.0));
        let dets = det_set(all);
        for f in 0..10usize {
            target.set(f, 100 + f);
        }
        let predictor = fit_predictor(&target, &dets, &cfg).unwrap();
        let tracklets =
            vec![Tracklet::from_ids(&[0], &dets), Tracklet::from_ids(&[1], &dets)];
        let set = hypotheses_for_target(&target, 0, 20, &tracklets, &predictor, &dets, &cfg).unwrap();
        assert_eq!(set.len(), 2); // empty + tracklet A
        assert_eq!(set.hypotheses[1].at_frame(18), Some(0));
    }

    #[test]
    fn gating_low_iou_excluded() {
        let mut cfg = Config::<f64>::default();
        cfg.gating_iou_min = 0.1;
        // Prediction box (0,0,10,10); candidate shifted so IoU ~ 0.05.
        let dets = det_set(vec![det(0, 0, 0.0, 1.0), det(1, 1, 9.1, 1.0)]);
        let mut target = Target::new(0);
        target.set(0, 0);
        let predictor = fit_predictor(&target, &dets, &cfg).unwrap();
        let iou_val = iou(&predictor.predict(1), &dets.by_id(1).bbox);
        assert!(iou_val < 0.1, "setup: iou {iou_val}");
        let tracklets = vec![Tracklet::from_ids(&[1], &dets)];
        let set = hypotheses_for_target(&target, 0, 1, &tracklets, &predictor, &dets, &cfg).unwrap();
        assert_eq!(set.len(), 1); // only the empty hypothesis
    }

    #[test]
    fn inactive_targets_get_no_set() {
        let cfg = Config::<f64>::default(); // tau 10, t_active 10
        let dets = det_set(vec![det(0, 0, 0.0, 1.0)]);
        let mut target = Target::new(0);
        target.set(0, 0);
        let predictor = fit_predictor(&target, &dets, &cfg).unwrap();
        // Last association at frame 0; horizon at t=21 is 21-20 = 1 > 0.
        assert!(hypotheses_for_target(&target, 0, 21, &[], &predictor, &dets, &cfg).is_none());
        assert!(hypotheses_for_target(&target, 0, 20, &[], &predictor, &dets, &cfg).is_some());
    }

    #[test]
    fn new_target_nms_suppresses_majority_overlap() {
        let dets = det_set(vec![
            det(0, 0, 0.0, 2.0),
            det(1, 1, 0.0, 2.0),
            det(2, 2, 0.0, 2.0),
            det(3, 3, 0.0, 1.0),
        ]);
        let strong = Tracklet::from_ids(&[0, 1, 2], &dets); // score 6
        let weak = Tracklet::from_ids(&[1, 2], &dets); // score 4, shares 2/2 > half
        let rival = Tracklet::from_ids(&[2, 3], &dets); // score 3, shares 1/2 = half: kept
        let sets = new_target_sets(&[strong, weak, rival], &[], &dets);
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].target_ref, TargetRef::New(0));
        assert_eq!(sets[1].target_ref, TargetRef::New(1));
        let first: Vec<usize> = sets[0].hypotheses[1].det_ids().collect();
        assert_eq!(first, vec![0, 1, 2]);
        let second: Vec<usize> = sets[1].hypotheses[1].det_ids().collect();
        assert_eq!(second, vec![2, 3]);
        // Each set is {empty, tracklet}.
        assert!(sets.iter().all(|s| s.len() == 2 && s.hypotheses[0].is_empty()));
    }

    #[test]
    fn new_target_slots_follow_existing_sets() {
        let dets = det_set(vec![det(0, 0, 0.0, 1.0)]);
        let existing = vec![
            HypothesisSet::new(TargetRef::Existing(3), vec![]),
            HypothesisSet::new(TargetRef::Existing(8), vec![]),
        ];
        let t = Tracklet::from_ids(&[0], &dets);
        let sets = new_target_sets(&[t], &existing, &dets);
        assert_eq!(sets[0].target_ref, TargetRef::New(2));
    }

    #[test]
    fn works_in_f32() {
        let pts: Vec<(usize, BoundingBox<f32>)> =
            (0..5).map(|k| (k, BoundingBox::new(k as f32 * 2.0, 0.0, 4.0, 4.0))).collect();
        let p = PolyPredictor::fit(&pts, 1);
        assert_relative_eq!(p.predict(6).x, 12.0f32, epsilon = 1e-3);
    }
}
