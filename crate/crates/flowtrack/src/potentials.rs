//! Energy terms of the window CRF.
//!
//! Per target, a hypothesis is scored by single-target consistency: unary
//! terms tying each hypothesis detection to the target's history (descriptor
//! affinity `mu_A` against recent associations, or decayed dynamics `mu_T`
//! against the motion prediction), pairwise descriptor terms inside the
//! hypothesis, and a high-order term penalizing rough motion and appearance
//! changes over the whole augmented target. Across targets, an exclusion
//! term penalizes box overlap and forbids duplicate detection use.

use crate::alfd::{AffinityCache, AlfdModel};
use crate::appearance::{HistogramStore, KernelCache};
use crate::hypo::{Hypothesis, PolyPredictor};
use crate::ipt::IptStore;
use crate::scalar::Real;
use crate::types::{o2, Config, Detection, DetectionSet, Target};

/// Everything the potential functions need to look at, bundled so call sites
/// stay readable. All fields are shared immutably; the caches are interior-
/// mutable and value-deterministic.
pub struct EnergyContext<'a, T: Real> {
    pub dets: &'a DetectionSet<T>,
    pub model: &'a AlfdModel<T>,
    pub store: &'a IptStore<T>,
    pub hists: Option<&'a HistogramStore<T>>,
    pub affinities: &'a AffinityCache<T>,
    pub kernels: &'a KernelCache<T>,
    pub cfg: &'a Config<T>,
    /// Current step frame; the window is `[t - tau, t]`.
    pub t: usize,
}

impl<'a, T: Real> EnergyContext<'a, T> {
    fn affinity(&self, d_i: &Detection<T>, d_j: &Detection<T>) -> T {
        self.affinities
            .affinity(self.model, self.store, d_i, d_j, self.cfg.lambda)
            .expect("model must be trained for every configured neighbor gap")
    }
}

/// Descriptor-based association cost: negated sum of affinities between
/// `d_i` and the target's detections at the configured frame gaps before it.
/// Gaps with no associated detection contribute nothing.
pub fn mu_a<T: Real>(ctx: &EnergyContext<T>, target: &Target, d_i: &Detection<T>) -> T {
    let mut sum = T::zero();
    for &gap in &ctx.cfg.neighbor_set {
        if gap > d_i.frame {
            continue;
        }
        if let Some(prev_id) = target.detection_at(d_i.frame - gap) {
            sum += ctx.affinity(ctx.dets.by_id(prev_id), d_i);
        }
    }
    -sum
}

/// Dynamics-based association cost: infinite unless the motion prediction
/// overlaps `d_i` decisively (`o2 >= 0.5`), otherwise a reward decayed by
/// the frame gap since the target's last association.
pub fn mu_t<T: Real>(
    ctx: &EnergyContext<T>,
    target: &Target,
    predictor: Option<&PolyPredictor<T>>,
    d_i: &Detection<T>,
) -> T {
    let (Some(predictor), Some(last)) = (predictor, target.last_frame()) else {
        return T::infinity();
    };
    let overlap = o2(Some(&predictor.predict(d_i.frame)), Some(&d_i.bbox));
    if overlap < T::of(0.5) {
        return T::infinity();
    }
    let gap = d_i.frame.saturating_sub(last);
    -ctx.cfg.eta.powi(gap as i32) * overlap
}

/// Unary potential: the better of the two association costs, minus the
/// detection score. Empty targets have no history, leaving exactly `-s_i`.
pub fn psi_u<T: Real>(
    ctx: &EnergyContext<T>,
    target: &Target,
    predictor: Option<&PolyPredictor<T>>,
    d_i: &Detection<T>,
) -> T {
    if target.is_empty() {
        return -d_i.score;
    }
    mu_a(ctx, target, d_i).min(mu_t(ctx, target, predictor, d_i)) - d_i.score
}

/// Pairwise potential inside one hypothesis: negated affinity at neighbor
/// frame gaps, zero elsewhere.
pub fn psi_p<T: Real>(ctx: &EnergyContext<T>, d_i: &Detection<T>, d_j: &Detection<T>) -> T {
    let gap = d_i.frame.abs_diff(d_j.frame);
    if ctx.cfg.neighbor_set.binary_search(&gap).is_ok() {
        -ctx.affinity(d_i, d_j)
    } else {
        T::zero()
    }
}

/// High-order potential over the augmented target `A ∪ H`.
///
/// Smoothness: a polynomial predictor is refit on the union (most recent
/// `2 * tau` frames) and each hypothesis detection pays the squared
/// (x, y, height) deviation from it, normalized by the squared mean
/// predicted height over the window. Appearance: every unordered pair of
/// union detections within the last `3 * tau` frames pays
/// `epsilon * (theta - K)` with the normalized intersection kernel `K`;
/// the term is skipped when no histograms are available.
pub fn psi_h<T: Real>(ctx: &EnergyContext<T>, target: &Target, hyp: &Hypothesis) -> T {
    let tau = ctx.cfg.tau;
    let bound = ctx.t.saturating_sub(3 * tau);
    // Only the newest history can matter: the refit wants the union's last
    // 2*tau entries and the appearance sum its last 3*tau frames, so collect
    // the shortest target suffix covering both instead of the whole track.
    let mut union: Vec<(usize, usize)> = Vec::new();
    for (&f, &id) in target.assoc().iter().rev() {
        if union.len() >= 2 * tau && f < bound {
            break;
        }
        union.push((f, id));
    }
    union.reverse();
    union.extend(hyp.entries().iter().copied());
    union.sort_unstable();
    if union.is_empty() {
        return T::zero();
    }

    let mut energy = T::zero();

    if !hyp.is_empty() {
        let take = 2 * tau;
        let start = union.len().saturating_sub(take);
        let points: Vec<(usize, crate::types::BoundingBox<T>)> =
            union[start..].iter().map(|&(f, id)| (f, ctx.dets.by_id(id).bbox)).collect();
        let predictor = PolyPredictor::fit(&points, ctx.cfg.poly_order);
        let lo = ctx.t.saturating_sub(tau);
        let mut mh = T::zero();
        for f in lo..=ctx.t {
            mh += predictor.predict(f).h;
        }
        mh /= T::of_usize(ctx.t - lo + 1);
        let norm = (mh * mh).max(T::of(1e-12));
        for &(f, id) in hyp.entries() {
            let p = predictor.predict(f);
            let d = ctx.dets.by_id(id).bbox;
            let dx = p.x - d.x;
            let dy = p.y - d.y;
            let dh = p.h - d.h;
            energy += ctx.cfg.gamma * (dx * dx + dy * dy + dh * dh) / norm;
        }
    }

    if let Some(hists) = ctx.hists {
        let recent: Vec<usize> =
            union.iter().filter(|&&(f, _)| f >= bound).map(|&(_, id)| id).collect();
        for i in 0..recent.len() {
            for j in i + 1..recent.len() {
                if let Some(k) = ctx.kernels.normalized(hists, recent[i], recent[j]) {
                    energy += ctx.cfg.epsilon * (ctx.cfg.theta - k);
                }
            }
        }
    }
    energy
}

/// Single-target consistency of one hypothesis (the node cost): unary terms
/// per hypothesis detection, pairwise terms per hypothesis pair, plus the
/// high-order term.
pub fn node_cost<T: Real>(
    ctx: &EnergyContext<T>,
    target: &Target,
    predictor: Option<&PolyPredictor<T>>,
    hyp: &Hypothesis,
) -> T {
    let mut e = T::zero();
    let entries = hyp.entries();
    for &(_, id) in entries {
        e += psi_u(ctx, target, predictor, ctx.dets.by_id(id));
    }
    for i in 0..entries.len() {
        for j in i + 1..entries.len() {
            e += psi_p(ctx, ctx.dets.by_id(entries[i].1), ctx.dets.by_id(entries[j].1));
        }
    }
    e + psi_h(ctx, target, hyp)
}

/// Mutual exclusion between two hypotheses of different targets: per shared
/// frame, a squared-overlap penalty, plus a large constant if they claim the
/// same detection.
pub fn phi<T: Real>(ctx: &EnergyContext<T>, h_m: &Hypothesis, h_l: &Hypothesis) -> T {
    let (mut i, mut j) = (0, 0);
    let (em, el) = (h_m.entries(), h_l.entries());
    let mut e = T::zero();
    while i < em.len() && j < el.len() {
        let (fm, dm) = em[i];
        let (fl, dl) = el[j];
        if fm < fl {
            i += 1;
        } else if fl < fm {
            j += 1;
        } else {
            let bm = &ctx.dets.by_id(dm).bbox;
            let bl = &ctx.dets.by_id(dl).bbox;
            e += ctx.cfg.alpha * o2(Some(bm), Some(bl));
            if dm == dl {
                e += ctx.cfg.beta;
            }
            i += 1;
            j += 1;
        }
    }
    e
}

/// Itemized window energy of a joint selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown<T> {
    pub unary: T,
    pub pairwise: T,
    pub high_order: T,
    pub exclusion: T,
    pub total: T,
}

/// Full energy of one hypothesis per target: per-target consistency plus
/// exclusion over all target pairs, itemized by term family.
pub fn total_energy<T: Real>(
    ctx: &EnergyContext<T>,
    items: &[(&Target, Option<&PolyPredictor<T>>, &Hypothesis)],
) -> EnergyBreakdown<T> {
    let mut unary = T::zero();
    let mut pairwise = T::zero();
    let mut high_order = T::zero();
    let mut exclusion = T::zero();
    for &(target, predictor, hyp) in items {
        let entries = hyp.entries();
        for &(_, id) in entries {
            unary += psi_u(ctx, target, predictor, ctx.dets.by_id(id));
        }
        for i in 0..entries.len() {
            for j in i + 1..entries.len() {
                pairwise += psi_p(ctx, ctx.dets.by_id(entries[i].1), ctx.dets.by_id(entries[j].1));
            }
        }
        high_order += psi_h(ctx, target, hyp);
    }
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            exclusion += phi(ctx, items[i].2, items[j].2);
        }
    }
    EnergyBreakdown {
        unary,
        pairwise,
        high_order,
        exclusion,
        total: unary + pairwise + high_order + exclusion,
    }
}
