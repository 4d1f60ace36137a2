//! Tracking evaluation: the CLEAR MOT protocol and the pairwise-affinity
//! ablation harness.
//!
//! Counting conventions (these differ between toolkits, so ours are fixed
//! here): an identity switch is counted when a ground-truth track's matched
//! hypothesis id differs from the id of its previous match, however long ago
//! that was; a fragmentation is counted each time a track goes
//! matched → unmatched → matched over the frames where it exists. Matching
//! uses an overlap gate with hysteresis: a pair matched on the previous
//! frame is kept while its overlap stays above the gate, and only the
//! remainder is re-assigned by minimum-cost matching on (1 − IoU).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;

use crate::alfd::{label_detections, AlfdModel};
use crate::appearance::{normalized_kernel, HistogramStore};
use crate::assign::min_cost_assignment;
use crate::error::{Error, Result};
use crate::ipt::IptStore;
use crate::scalar::Real;
use crate::types::{iou, Detection, DetectionSet, LabeledBox};

/// CLEAR MOT scores. `misses` is the false-negative count (FN).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotReport<T> {
    pub mota: T,
    /// Mean IoU over matched pairs (overlap convention).
    pub motp: T,
    /// Fraction of ground-truth tracks covered on ≥ 80% of their frames.
    pub mt: T,
    /// Fraction covered on ≤ 20% of their frames.
    pub ml: T,
    pub ids: usize,
    pub frag: usize,
    pub fp: usize,
    pub misses: usize,
    pub gt_count: usize,
    pub gt_tracks: usize,
    pub recall: T,
    pub precision: T,
    pub f1: T,
}

impl<T: Real> MotReport<T> {
    /// Aligned human-readable table.
    pub fn table(&self) -> String {
        format!(
            "{:<10}{:>10}\n{:<10}{:>10}\n{:<10}{:>10}\n{:<10}{:>10}\n{:<10}{:>10}\n\
             {:<10}{:>10}\n{:<10}{:>10}\n{:<10}{:>10}\n{:<10}{:>10}\n{:<10}{:>10}\n\
             {:<10}{:>10}\n{:<10}{:>10}",
            "MOTA",
            format!("{:.4}", self.mota),
            "MOTP",
            format!("{:.4}", self.motp),
            "MT",
            format!("{:.4}", self.mt),
            "ML",
            format!("{:.4}", self.ml),
            "IDS",
            self.ids,
            "FRAG",
            self.frag,
            "FP",
            self.fp,
            "FN",
            self.misses,
            "GT",
            self.gt_count,
            "Recall",
            format!("{:.4}", self.recall),
            "Precision",
            format!("{:.4}", self.precision),
            "F1",
            format!("{:.4}", self.f1),
        )
    }

    /// Machine-readable `key=value` lines.
    pub fn to_kv(&self) -> String {
        format!(
            "mota={:.6}\nmotp={:.6}\nmt={:.6}\nml={:.6}\nids={}\nfrag={}\nfp={}\nfn={}\n\
             gt={}\ngt_tracks={}\nrecall={:.6}\nprecision={:.6}\nf1={:.6}\n",
            self.mota,
            self.motp,
            self.mt,
            self.ml,
            self.ids,
            self.frag,
            self.fp,
            self.misses,
            self.gt_count,
            self.gt_tracks,
            self.recall,
            self.precision,
            self.f1,
        )
    }
}

fn index_rows<T: Real>(rows: &[LabeledBox<T>], what: &str) -> Result<BTreeMap<usize, Vec<(usize, crate::types::BoundingBox<T>)>>> {
    let mut by_frame: BTreeMap<usize, Vec<(usize, crate::types::BoundingBox<T>)>> = BTreeMap::new();
    for row in rows {
        let frame_rows = by_frame.entry(row.frame).or_default();
        if frame_rows.iter().any(|&(id, _)| id == row.track_id) {
            return Err(Error::InvalidInput(format!(
                "{what} track {} appears twice on frame {}",
                row.track_id, row.frame
            )));
        }
        frame_rows.push((row.track_id, row.bbox));
    }
    for frame_rows in by_frame.values_mut() {
        frame_rows.sort_by_key(|&(id, _)| id);
    }
    Ok(by_frame)
}

/// Scores hypothesized tracks against ground truth per the CLEAR MOT
/// protocol with an IoU gate (`iou_min`, conventionally 0.5).
pub fn clear_mot<T: Real>(
    gt: &[LabeledBox<T>],
    hyp: &[LabeledBox<T>],
    iou_min: T,
) -> Result<MotReport<T>> {
    if gt.is_empty() {
        return Err(Error::InvalidInput(
            "ground truth is empty: tracking accuracy is undefined".into(),
        ));
    }
    let gt_by_frame = index_rows(gt, "ground-truth")?;
    let hyp_by_frame = index_rows(hyp, "hypothesis")?;

    let frames: BTreeSet<usize> =
        gt_by_frame.keys().chain(hyp_by_frame.keys()).copied().collect();

    let mut carry: HashMap<usize, usize> = HashMap::new(); // gt id -> hyp id while valid
    let mut last_matched: HashMap<usize, usize> = HashMap::new(); // gt id -> last hyp id ever
    let mut in_gap: BTreeSet<usize> = BTreeSet::new(); // matched before, currently unmatched
    let mut span: HashMap<usize, usize> = HashMap::new(); // gt id -> frames present
    let mut covered: HashMap<usize, usize> = HashMap::new(); // gt id -> frames matched

    let (mut fp, mut misses, mut ids, mut frag) = (0usize, 0usize, 0usize, 0usize);
    let mut n_matches = 0usize;
    let mut iou_sum = T::zero();
    let big = T::of(1e6);

    let empty = Vec::new();
    for &f in &frames {
        let gts = gt_by_frame.get(&f).unwrap_or(&empty);
        let hyps = hyp_by_frame.get(&f).unwrap_or(&empty);
        for &(gid, _) in gts {
            *span.entry(gid).or_insert(0) += 1;
        }

        let hyp_pos: HashMap<usize, usize> =
            hyps.iter().enumerate().map(|(j, &(hid, _))| (hid, j)).collect();

        // Hysteresis: keep still-valid previous matches.
        let mut matched_g = vec![false; gts.len()];
        let mut matched_h = vec![false; hyps.len()];
        let mut frame_matches: Vec<(usize, usize)> = Vec::new(); // (gt idx, hyp idx)
        for (gi, &(gid, gbox)) in gts.iter().enumerate() {
            let Some(&hid) = carry.get(&gid) else { continue };
            match hyp_pos.get(&hid) {
                Some(&hj) if !matched_h[hj] && iou(&gbox, &hyps[hj].1) >= iou_min => {
                    matched_g[gi] = true;
                    matched_h[hj] = true;
                    frame_matches.push((gi, hj));
                }
                _ => {
                    carry.remove(&gid);
                }
            }
        }

        // Re-assign the remainder by min-cost matching on 1 − IoU.
        let free_g: Vec<usize> = (0..gts.len()).filter(|&gi| !matched_g[gi]).collect();
        let free_h: Vec<usize> = (0..hyps.len()).filter(|&hj| !matched_h[hj]).collect();
        if !free_g.is_empty() && !free_h.is_empty() {
            let cost: Vec<Vec<T>> = free_g
                .iter()
                .map(|&gi| {
                    free_h
                        .iter()
                        .map(|&hj| {
                            let o = iou(&gts[gi].1, &hyps[hj].1);
                            if o >= iou_min {
                                T::one() - o
                            } else {
                                big
                            }
                        })
                        .collect()
                })
                .collect();
            for (row, &col) in min_cost_assignment(&cost).iter().enumerate() {
                let Some(col) = col else { continue };
                let (gi, hj) = (free_g[row], free_h[col]);
                if iou(&gts[gi].1, &hyps[hj].1) >= iou_min {
                    frame_matches.push((gi, hj));
                    matched_g[gi] = true;
                    matched_h[hj] = true;
                }
            }
        }

        frame_matches.sort_unstable();
        for &(gi, hj) in &frame_matches {
            let (gid, gbox) = gts[gi];
            let (hid, hbox) = hyps[hj];
            n_matches += 1;
            iou_sum += iou(&gbox, &hbox);
            *covered.entry(gid).or_insert(0) += 1;
            if let Some(&prev) = last_matched.get(&gid) {
                if prev != hid {
                    ids += 1;
                }
            }
            if in_gap.remove(&gid) {
                frag += 1;
            }
            last_matched.insert(gid, hid);
            carry.insert(gid, hid);
        }
        for (gi, &(gid, _)) in gts.iter().enumerate() {
            if !matched_g[gi] {
                misses += 1;
                if last_matched.contains_key(&gid) {
                    in_gap.insert(gid);
                }
            }
        }
        fp += matched_h.iter().filter(|&&m| !m).count();
    }

    let gt_count = gt.len();
    let gt_tracks = span.len();
    let ratio = |num: usize, den: usize| -> T {
        if den == 0 {
            T::zero()
        } else {
            T::of_usize(num) / T::of_usize(den)
        }
    };
    let mut mt = 0usize;
    let mut ml = 0usize;
    for (gid, &present) in &span {
        let c = covered.get(gid).copied().unwrap_or(0);
        let r = ratio(c, present);
        if r >= T::of(0.8) {
            mt += 1;
        }
        if r <= T::of(0.2) {
            ml += 1;
        }
    }

    let recall = ratio(gt_count - misses, gt_count);
    let tp = gt_count - misses;
    let precision = ratio(tp, tp + fp);
    let pr = precision + recall;
    let f1 = if pr > T::zero() { T::of(2.0) * precision * recall / pr } else { T::zero() };
    Ok(MotReport {
        mota: T::one() - ratio(fp + misses + ids, gt_count),
        motp: if n_matches == 0 { T::zero() } else { iou_sum / T::of_usize(n_matches) },
        mt: ratio(mt, gt_tracks),
        ml: ratio(ml, gt_tracks),
        ids,
        frag,
        fp,
        misses,
        gt_count,
        gt_tracks,
        recall,
        precision,
        f1,
    })
}

/// Which pairwise affinity an ablation curve belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AffinityMetric {
    /// The learned flow-descriptor affinity.
    Alfd,
    /// Negated bottom-center distance normalized by the pair's mean height.
    NDist2,
    /// Color-histogram intersection kernel.
    HistIK,
}

impl std::fmt::Display for AffinityMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AffinityMetric::Alfd => "ALFD",
            AffinityMetric::NDist2 => "NDist2",
            AffinityMetric::HistIK => "HistIK",
        })
    }
}

/// One ROC curve: same-target detection pairs at frame gap `delta_t` scored
/// by one affinity metric.
#[derive(Debug, Clone)]
pub struct AffinityRoc<T> {
    pub metric: AffinityMetric,
    pub delta_t: usize,
    /// (false-positive rate, true-positive rate), ascending, from (0,0) to (1,1).
    pub points: Vec<(T, T)>,
    pub auc: T,
}

/// Baseline affinity: negated L2 distance between the boxes' bottom centers,
/// normalized by the mean of the two heights.
pub fn ndist2<T: Real>(a: &Detection<T>, b: &Detection<T>) -> T {
    let half = T::of(0.5);
    let (ax, ay) = (a.bbox.x + a.bbox.w * half, a.bbox.y + a.bbox.h);
    let (bx, by) = (b.bbox.x + b.bbox.w * half, b.bbox.y + b.bbox.h);
    let (dx, dy) = (ax - bx, ay - by);
    let mean_h = (a.bbox.h + b.bbox.h) * half;
    -((dx * dx + dy * dy).sqrt() / mean_h)
}

/// ROC points and AUC from labeled scores. Equal scores step diagonally in
/// one move, which makes the trapezoidal AUC equal the pairwise-comparison
/// (rank) estimator. `None` when either class is absent.
pub fn roc_curve<T: Real>(scored: &[(T, bool)]) -> Option<(Vec<(T, T)>, T)> {
    let p = scored.iter().filter(|&&(_, y)| y).count();
    let n = scored.len() - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut sorted: Vec<(T, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite affinity scores"));

    let mut points: Vec<(T, T)> = vec![(T::zero(), T::zero())];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = T::zero();
    let (pn, nn) = (T::of_usize(p), T::of_usize(n));
    let mut k = 0;
    while k < sorted.len() {
        let mut j = k;
        let (mut dp, mut dn) = (0usize, 0usize);
        while j < sorted.len() && sorted[j].0 == sorted[k].0 {
            if sorted[j].1 {
                dp += 1;
            } else {
                dn += 1;
            }
            j += 1;
        }
        let (x0, y0) = *points.last().expect("seeded with the origin");
        let x1 = T::of_usize(fp + dn) / nn;
        let y1 = T::of_usize(tp + dp) / pn;
        auc += (x1 - x0) * (y0 + y1) * T::of(0.5);
        points.push((x1, y1));
        tp += dp;
        fp += dn;
        k = j;
    }
    Some((points, auc))
}

/// Runs the pairwise-affinity ablation: detections are labeled by best
/// ground-truth overlap, all labeled pairs at each requested frame gap are
/// scored by each metric, and a ROC/AUC is produced per (metric, gap).
/// Combinations without both classes, or metrics missing their inputs, are
/// omitted with a logged warning.
pub fn affinity_ablation<T: Real>(
    dets: &DetectionSet<T>,
    gt: &[LabeledBox<T>],
    store: &IptStore<T>,
    hists: Option<&HistogramStore<T>>,
    model: &AlfdModel<T>,
    deltas: &[usize],
    lambda: T,
) -> Vec<AffinityRoc<T>> {
    let labels = label_detections(dets, gt);
    let mut ids: Vec<usize> = labels.keys().copied().collect();
    ids.sort_unstable();

    let mut by_frame: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &id in &ids {
        by_frame.entry(dets.by_id(id).frame).or_default().push(id);
    }

    let mut out = Vec::new();
    for &dt in deltas {
        let mut pairs: Vec<(usize, usize, bool)> = Vec::new();
        for (&f, early) in &by_frame {
            let Some(late) = by_frame.get(&(f + dt)) else { continue };
            for &i in early {
                for &j in late {
                    pairs.push((i, j, labels[&i].0 == labels[&j].0));
                }
            }
        }
        if pairs.is_empty() {
            log::warn!("no labeled detection pairs at frame gap {dt}; skipping");
            continue;
        }

        let alfd_scores: Option<Vec<(T, bool)>> = if model.weights_for(dt).is_some() {
            Some(
                pairs
                    .par_iter()
                    .map(|&(i, j, y)| {
                        let a = model
                            .affinity(store, dets.by_id(i), dets.by_id(j), lambda)
                            .expect("gap is trained");
                        (a, y)
                    })
                    .collect(),
            )
        } else {
            log::warn!("model has no weights for frame gap {dt}; skipping its curve");
            None
        };
        let ndist_scores: Vec<(T, bool)> = pairs
            .iter()
            .map(|&(i, j, y)| (ndist2(dets.by_id(i), dets.by_id(j)), y))
            .collect();
        let hist_scores: Option<Vec<(T, bool)>> = hists.and_then(|h| {
            let scored: Vec<(T, bool)> = pairs
                .iter()
                .filter_map(|&(i, j, y)| {
                    let (a, b) = (h.get(i)?, h.get(j)?);
                    Some((normalized_kernel(a, b).ok()?, y))
                })
                .collect();
            if scored.len() < pairs.len() {
                log::warn!(
                    "appearance histograms missing for {} of {} pairs at gap {dt}",
                    pairs.len() - scored.len(),
                    pairs.len()
                );
            }
            (!scored.is_empty()).then_some(scored)
        });

        let curves = [
            (AffinityMetric::Alfd, alfd_scores),
            (AffinityMetric::NDist2, Some(ndist_scores)),
            (AffinityMetric::HistIK, hist_scores),
        ];
        for (metric, scores) in curves {
            let Some(scores) = scores else { continue };
            match roc_curve(&scores) {
                Some((points, auc)) => {
                    out.push(AffinityRoc { metric, delta_t: dt, points, auc })
                }
                None => log::warn!(
                    "only one class among {} pairs at gap {dt} for {metric}; curve omitted",
                    scores.len()
                ),
            }
        }
    }
    out
}
