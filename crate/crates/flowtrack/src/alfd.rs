//! Aggregated local flow descriptor (ALFD) and its learned affinity.
//!
//! For a detection pair `(d_i, d_j)` on frames `t_i != t_j`, the descriptor
//! histograms where interest-point trajectories anchored inside one box land
//! relative to the other box. Trajectories that stay in corresponding grid
//! cells are evidence for "same object"; trajectories that exit the box are
//! evidence against. A per-gap linear model turns the histogram into an
//! affinity in `[-1, 1]`.
//!
//! Layout: with grid resolution `G` there are `G^2` anchor cells and
//! `G^2 + 2` landing bins (the `G^2` in-box cells, one near-outside bin, one
//! far-outside bin), flattened as `anchor * (G^2 + 2) + landing`.

use std::collections::{BTreeMap, HashMap};

use dashmap::DashMap;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ipt::IptStore;
use crate::scalar::Real;
use crate::types::{iou, BoundingBox, Detection, DetectionSet, LabeledBox};

/// Descriptor length for grid resolution `g`.
#[inline]
pub fn descriptor_len(g: usize) -> usize {
    g * g * (g * g + 2)
}

/// Position of a point relative to a box, in box-size units. Points inside
/// the box (closed intervals) map into `[0, 1] x [0, 1]`.
#[inline]
pub fn relative_location<T: Real>(bbox: &BoundingBox<T>, px: T, py: T) -> (T, T) {
    ((px - bbox.x) / bbox.w, (py - bbox.y) / bbox.h)
}

/// Grid cell of a relative location, clamped to the box, row-major.
#[inline]
pub fn anchor_cell<T: Real>(g: usize, rx: T, ry: T) -> usize {
    let gi = T::of_usize(g);
    let clamp = |r: T| -> usize {
        let c = (r * gi).floor().to_f64_() as isize;
        c.clamp(0, g as isize - 1) as usize
    };
    clamp(ry) * g + clamp(rx)
}

/// Landing bin of a point relative to `bbox`: an in-box grid cell, the
/// near-outside bin `g^2` (within a quarter box size of the edges) or the
/// far-outside bin `g^2 + 1`.
pub fn target_bin<T: Real>(g: usize, bbox: &BoundingBox<T>, px: T, py: T) -> usize {
    if bbox.contains(px, py) {
        let (rx, ry) = relative_location(bbox, px, py);
        return anchor_cell(g, rx, ry);
    }
    let hdist = (bbox.x - px).max(px - bbox.right()).max(T::zero());
    let vdist = (bbox.y - py).max(py - bbox.bottom()).max(T::zero());
    let quarter = T::of(0.25);
    if hdist < bbox.w * quarter && vdist < bbox.h * quarter {
        g * g
    } else {
        g * g + 1
    }
}

/// Unnormalized one-directional histogram `rho'(d_i, d_j)`: counts over
/// trajectories anchored in `d_i` at its frame and alive at `d_j`'s frame.
/// Returns the counts and the number of contributing trajectories.
pub fn unidirectional<T: Real>(
    store: &IptStore<T>,
    d_i: &Detection<T>,
    d_j: &Detection<T>,
    g: usize,
) -> (Vec<T>, usize) {
    let mut bins = vec![T::zero(); descriptor_len(g)];
    let ids = store.query(&d_i.bbox, d_i.frame, d_j.frame);
    for id in &ids {
        let ipt = store.get(*id).expect("query returned a stored id");
        let (ax, ay) = ipt.pos(d_i.frame).expect("query guarantees a sample at t_i");
        let (tx, ty) = ipt.pos(d_j.frame).expect("query guarantees a sample at t_j");
        let (rx, ry) = relative_location(&d_i.bbox, ax, ay);
        let anchor = anchor_cell(g, rx, ry);
        let landing = target_bin(g, &d_j.bbox, tx, ty);
        bins[anchor * (g * g + 2) + landing] += T::one();
    }
    (bins, ids.len())
}

/// Normalized, symmetric descriptor for a detection pair.
#[derive(Debug, Clone)]
pub struct AlfdDescriptor<T> {
    /// `(rho'(i,j) + rho'(j,i)) / (|K_ij| + |K_ji| + lambda)`.
    pub bins: Vec<T>,
    /// Total number of contributing trajectories `|K_ij| + |K_ji|`.
    pub support: usize,
}

impl<T: Real> AlfdDescriptor<T> {
    pub fn l1_norm(&self) -> T {
        self.bins.iter().copied().sum()
    }
}

/// Computes the descriptor `rho(d_i, d_j)`; symmetric in its arguments.
pub fn descriptor<T: Real>(
    store: &IptStore<T>,
    d_i: &Detection<T>,
    d_j: &Detection<T>,
    g: usize,
    lambda: T,
) -> AlfdDescriptor<T> {
    let (fwd, k_ij) = unidirectional(store, d_i, d_j, g);
    let (bwd, k_ji) = unidirectional(store, d_j, d_i, g);
    let support = k_ij + k_ji;
    let n = T::of_usize(support) + lambda;
    let bins = fwd.into_iter().zip(bwd).map(|(a, b)| (a + b) / n).collect();
    AlfdDescriptor { bins, support }
}

/// Per-gap linear models over the descriptor.
#[derive(Debug, Clone)]
pub struct AlfdModel<T> {
    grid_n: usize,
    weights: BTreeMap<usize, Vec<T>>,
}

impl<T: Real> AlfdModel<T> {
    pub fn new(grid_n: usize) -> Self {
        AlfdModel { grid_n, weights: BTreeMap::new() }
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    /// Installs the weight vector for frame gap `delta_t`.
    pub fn set_weights(&mut self, delta_t: usize, weights: Vec<T>) -> Result<()> {
        if delta_t == 0 {
            return Err(Error::InvalidInput("frame gap must be >= 1".into()));
        }
        let expect = descriptor_len(self.grid_n);
        if weights.len() != expect {
            return Err(Error::GridMismatch { expected: expect, found: weights.len() });
        }
        self.weights.insert(delta_t, weights);
        Ok(())
    }

    pub fn weights_for(&self, delta_t: usize) -> Option<&[T]> {
        self.weights.get(&delta_t).map(Vec::as_slice)
    }

    /// Frame gaps with trained weights, ascending.
    pub fn trained_gaps(&self) -> Vec<usize> {
        self.weights.keys().copied().collect()
    }

    /// Learned affinity for a detection pair; symmetric, in `[-1, 1]`.
    /// Fails when no weights exist for the pair's frame gap.
    pub fn affinity(
        &self,
        store: &IptStore<T>,
        d_i: &Detection<T>,
        d_j: &Detection<T>,
        lambda: T,
    ) -> Result<T> {
        let delta_t = d_i.frame.abs_diff(d_j.frame);
        let Some(w) = self.weights.get(&delta_t) else {
            return Err(Error::UntrainedDelta { delta_t });
        };
        let rho = descriptor(store, d_i, d_j, self.grid_n, lambda);
        Ok(w.iter().zip(&rho.bins).map(|(&wk, &rk)| wk * rk).sum())
    }
}

/// Labels each detection with the ground-truth track it best overlaps, when
/// that best overlap exceeds one half. Ties go to the lowest track id.
pub fn label_detections<T: Real>(
    dets: &DetectionSet<T>,
    gt: &[LabeledBox<T>],
) -> HashMap<usize, (usize, T)> {
    let mut gt_by_frame: HashMap<usize, Vec<&LabeledBox<T>>> = HashMap::new();
    for row in gt {
        gt_by_frame.entry(row.frame).or_default().push(row);
    }
    for rows in gt_by_frame.values_mut() {
        rows.sort_by_key(|r| r.track_id);
    }
    let half = T::of(0.5);
    let mut labels = HashMap::new();
    for det in dets.iter() {
        let Some(rows) = gt_by_frame.get(&det.frame) else { continue };
        let mut best: Option<(usize, T)> = None;
        for row in rows {
            let o = iou(&det.bbox, &row.bbox);
            if best.map_or(true, |(_, bo)| o > bo) {
                best = Some((row.track_id, o));
            }
        }
        if let Some((tid, o)) = best {
            if o > half {
                labels.insert(det.id, (tid, o));
            }
        }
    }
    labels
}

/// Learns the weight vector for one frame gap from labeled detections.
///
/// Every pair of positively labeled detections `delta_t` frames apart votes
/// with margin `(o_i - 0.5) * (o_j - 0.5)`, positive when both carry the same
/// track label and negative otherwise. The weight per bin is the ratio of
/// signed to absolute accumulated votes, zero where nothing voted, hence
/// bounded to `[-1, 1]` bin-wise.
pub fn learn_weights<T: Real>(
    dets: &DetectionSet<T>,
    gt: &[LabeledBox<T>],
    store: &IptStore<T>,
    delta_t: usize,
    g: usize,
) -> Result<Vec<T>> {
    if delta_t == 0 {
        return Err(Error::InvalidInput("frame gap must be >= 1".into()));
    }
    let labels = label_detections(dets, gt);
    let len = descriptor_len(g);
    let half = T::of(0.5);
    let last_frame = dets.max_frame().unwrap_or(0);

    // Accumulate per start frame in parallel, then reduce in frame order so
    // the result does not depend on the worker count.
    let per_frame: Vec<(Vec<T>, Vec<T>)> = (0..=last_frame.saturating_sub(delta_t))
        .into_par_iter()
        .map(|t| {
            let mut num = vec![T::zero(); len];
            let mut den = vec![T::zero(); len];
            for &i in dets.at_frame(t) {
                let Some(&(id_i, o_i)) = labels.get(&i) else { continue };
                for &j in dets.at_frame(t + delta_t) {
                    let Some(&(id_j, o_j)) = labels.get(&j) else { continue };
                    let mut m = (o_i - half) * (o_j - half);
                    if id_i != id_j {
                        m = -m;
                    }
                    let d_i = dets.by_id(i);
                    let d_j = dets.by_id(j);
                    let (fwd, _) = unidirectional(store, d_i, d_j, g);
                    let (bwd, _) = unidirectional(store, d_j, d_i, g);
                    let am = m.abs();
                    for k in 0..len {
                        let s = fwd[k] + bwd[k];
                        if s > T::zero() {
                            num[k] += m * s;
                            den[k] += am * s;
                        }
                    }
                }
            }
            (num, den)
        })
        .collect();

    let mut num = vec![T::zero(); len];
    let mut den = vec![T::zero(); len];
    for (n, d) in per_frame {
        for k in 0..len {
            num[k] += n[k];
            den[k] += d[k];
        }
    }
    if den.iter().all(|&d| d == T::zero()) {
        log::warn!("no labeled detection pairs at gap {delta_t}; weights are all zero");
    }
    Ok((0..len)
        .map(|k| if den[k] > T::zero() { num[k] / den[k] } else { T::zero() })
        .collect())
}

/// Learns one weight vector per configured frame gap.
pub fn learn_model<T: Real>(
    dets: &DetectionSet<T>,
    gt: &[LabeledBox<T>],
    store: &IptStore<T>,
    gaps: &[usize],
    g: usize,
) -> Result<AlfdModel<T>> {
    let mut model = AlfdModel::new(g);
    for &dt in gaps {
        let w = learn_weights(dets, gt, store, dt, g)?;
        model.set_weights(dt, w)?;
    }
    Ok(model)
}

/// Merges per-sequence vote accumulators: learning over several sequences
/// sums numerators and denominators before the final ratio. This helper
/// recomputes weights from raw accumulators produced by `accumulate_votes`.
pub fn weights_from_votes<T: Real>(num: &[T], den: &[T]) -> Vec<T> {
    num.iter()
        .zip(den)
        .map(|(&n, &d)| if d > T::zero() { n / d } else { T::zero() })
        .collect()
}

/// Raw signed/absolute vote accumulators for one sequence and gap, so
/// multi-sequence training can pool evidence before dividing.
pub fn accumulate_votes<T: Real>(
    dets: &DetectionSet<T>,
    gt: &[LabeledBox<T>],
    store: &IptStore<T>,
    delta_t: usize,
    g: usize,
) -> Result<(Vec<T>, Vec<T>)> {
    if delta_t == 0 {
        return Err(Error::InvalidInput("frame gap must be >= 1".into()));
    }
    let labels = label_detections(dets, gt);
    let len = descriptor_len(g);
    let half = T::of(0.5);
    let last_frame = dets.max_frame().unwrap_or(0);
    let mut num = vec![T::zero(); len];
    let mut den = vec![T::zero(); len];
    for t in 0..=last_frame.saturating_sub(delta_t) {
        for &i in dets.at_frame(t) {
            let Some(&(id_i, o_i)) = labels.get(&i) else { continue };
            for &j in dets.at_frame(t + delta_t) {
                let Some(&(id_j, o_j)) = labels.get(&j) else { continue };
                let mut m = (o_i - half) * (o_j - half);
                if id_i != id_j {
                    m = -m;
                }
                let d_i = dets.by_id(i);
                let d_j = dets.by_id(j);
                let (fwd, _) = unidirectional(store, d_i, d_j, g);
                let (bwd, _) = unidirectional(store, d_j, d_i, g);
                let am = m.abs();
                for k in 0..len {
                    let s = fwd[k] + bwd[k];
                    if s > T::zero() {
                        num[k] += m * s;
                        den[k] += am * s;
                    }
                }
            }
        }
    }
    Ok((num, den))
}

/// Memoized symmetric affinities keyed by detection id pairs.
#[derive(Debug, Default)]
pub struct AffinityCache<T> {
    map: DashMap<(usize, usize), T>,
}

impl<T: Real> AffinityCache<T> {
    pub fn new() -> Self {
        AffinityCache { map: DashMap::new() }
    }

    /// Cached affinity; computes and stores it on a miss. Errors only on an
    /// untrained frame gap.
    pub fn affinity(
        &self,
        model: &AlfdModel<T>,
        store: &IptStore<T>,
        d_i: &Detection<T>,
        d_j: &Detection<T>,
        lambda: T,
    ) -> Result<T> {
        let key = (d_i.id.min(d_j.id), d_i.id.max(d_j.id));
        if let Some(v) = self.map.get(&key) {
            return Ok(*v);
        }
        let v = model.affinity(store, d_i, d_j, lambda)?;
        self.map.insert(key, v);
        Ok(v)
    }

    /// Drops entries touching detections on frames before `min_frame`.
    pub fn evict_before(&self, dets: &DetectionSet<T>, min_frame: usize) {
        self.map.retain(|&(a, b), _| {
            let fa = dets.get(a).map_or(0, |d| d.frame);
            let fb = dets.get(b).map_or(0, |d| d.frame);
            fa >= min_frame && fb >= min_frame
        });
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
