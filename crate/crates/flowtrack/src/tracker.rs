//! The near-online tracking loop and the per-frame Hungarian baseline.
//!
//! Each step re-decides the trailing window: targets are stripped of their
//! window associations, candidate tracklets are grown from the window's
//! detections, per-target hypothesis sets are gated by motion prediction, and
//! the window CRF is solved exactly. Associations older than the window are
//! never touched again, which bounds every detection's association latency.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::alfd::{AffinityCache, AlfdModel};
use crate::appearance::{HistogramStore, KernelCache};
use crate::assign::min_cost_assignment;
use crate::error::{Error, Result};
use crate::hypo::{
    fit_predictor, generate_tracklets, hypotheses_for_target, new_target_sets, Hypothesis,
    HypothesisSet, PolyPredictor, TargetRef, WindowAffinity,
};
use crate::infer::{build_graph, solve_with_stats, AssociationGraph};
use crate::ipt::IptStore;
use crate::kalman::smooth_series;
use crate::potentials::{psi_u, EnergyContext};
use crate::scalar::Real;
use crate::types::{BoundingBox, Config, Detection, DetectionSet, LabeledBox, Target};

/// Wall time spent in each step stage: descriptor affinities over the window
/// (`ipt`), detection/appearance ingestion and cache upkeep (`chist`),
/// tracklet growth and hypothesis-set assembly (`hypos`), and graph
/// construction plus MAP solving (`infer`).
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimings {
    pub ipt: Duration,
    pub chist: Duration,
    pub hypos: Duration,
    pub infer: Duration,
}

impl StageTimings {
    fn absorb(&mut self, other: &StageTimings) {
        self.ipt += other.ipt;
        self.chist += other.chist;
        self.hypos += other.hypos;
        self.infer += other.infer;
    }
}

/// Everything one step decided, for diagnostics and harnesses.
#[derive(Debug, Clone)]
pub struct StepReport<T> {
    pub frame: usize,
    pub n_window_dets: usize,
    pub n_tracklets: usize,
    pub n_sets: usize,
    pub n_hypotheses: usize,
    pub n_components: usize,
    pub n_fallbacks: usize,
    /// Energy of the selected joint state (cross-checked on the graph).
    pub energy: T,
    /// Selected hypothesis index per set, aligned with the step's sets.
    pub states: Vec<usize>,
    pub timings: StageTimings,
    /// The solved graph, kept only when graph recording is enabled.
    pub graph: Option<AssociationGraph<T>>,
}

/// Aggregated per-run counters and stage times.
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub frames: usize,
    pub tracklets: usize,
    pub hypotheses: usize,
    pub components: usize,
    pub fallbacks: usize,
    pub timings: StageTimings,
    pub wall: Duration,
}

impl RunLog {
    fn absorb(&mut self, report: &StepReport<impl Real>, wall: Duration) {
        self.frames += 1;
        self.tracklets += report.n_tracklets;
        self.hypotheses += report.n_hypotheses;
        self.components += report.n_components;
        self.fallbacks += report.n_fallbacks;
        self.timings.absorb(&report.timings);
        self.wall += wall;
    }

    /// One-paragraph human-readable rendering.
    pub fn summary(&self) -> String {
        let secs = self.wall.as_secs_f64();
        let fps = if secs > 0.0 { self.frames as f64 / secs } else { f64::INFINITY };
        format!(
            "frames: {} | tracklets: {} | hypotheses: {} | components: {} | fallbacks: {}\n\
             stage ms (total): ipt {:.1}, chist {:.1}, hypos {:.1}, infer {:.1}\n\
             wall: {:.2} s ({:.1} fps)",
            self.frames,
            self.tracklets,
            self.hypotheses,
            self.components,
            self.fallbacks,
            self.timings.ipt.as_secs_f64() * 1e3,
            self.timings.chist.as_secs_f64() * 1e3,
            self.timings.hypos.as_secs_f64() * 1e3,
            self.timings.infer.as_secs_f64() * 1e3,
            secs,
            fps,
        )
    }
}

/// Distribution of association latency: frames between a detection's
/// appearance and the last time an association decision touched it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyReport<T> {
    pub mean: T,
    pub std: T,
    pub zero_fraction: T,
    pub max: usize,
    pub count: usize,
}

/// The tracking engine: owns the accumulated detections, the interest-point
/// store, the trained affinity model, optional appearance histograms, and
/// the evolving target set.
pub struct Tracker<T: Real> {
    cfg: Config<T>,
    model: AlfdModel<T>,
    store: IptStore<T>,
    hists: Option<HistogramStore<T>>,
    dets: DetectionSet<T>,
    targets: Vec<Target>,
    frame: Option<usize>,
    next_target_id: usize,
    affinities: AffinityCache<T>,
    kernels: KernelCache<T>,
    keep_graphs: bool,
    log: RunLog,
    pool: Arc<rayon::ThreadPool>,
}

impl<T: Real> std::fmt::Debug for Tracker<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tracker")
            .field("frame", &self.frame)
            .field("targets", &self.targets.len())
            .field("detections", &self.dets.len())
            .finish_non_exhaustive()
    }
}

impl<T: Real> Tracker<T> {
    /// Builds a tracker; the model must cover every configured neighbor gap
    /// at the configured grid resolution.
    pub fn new(cfg: Config<T>, model: AlfdModel<T>, store: IptStore<T>) -> Result<Self> {
        cfg.validate()?;
        if model.grid_n() != cfg.grid_n {
            return Err(Error::Config(format!(
                "model grid {} does not match configured grid {}",
                model.grid_n(),
                cfg.grid_n
            )));
        }
        for &gap in &cfg.neighbor_set {
            if model.weights_for(gap).is_none() {
                return Err(Error::UntrainedDelta { delta_t: gap });
            }
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        Ok(Tracker {
            cfg,
            model,
            store,
            hists: None,
            dets: DetectionSet::new(),
            targets: Vec::new(),
            frame: None,
            next_target_id: 0,
            affinities: AffinityCache::new(),
            kernels: KernelCache::new(),
            keep_graphs: false,
            log: RunLog::default(),
            pool: Arc::new(pool),
        })
    }

    /// Attaches per-detection appearance histograms, enabling the appearance
    /// part of the high-order potential.
    pub fn with_histograms(mut self, hists: HistogramStore<T>) -> Self {
        self.hists = Some(hists);
        self
    }

    /// Keeps each step's solved graph in its report (for harnesses that
    /// cross-check energies); costs memory, off by default.
    pub fn record_graphs(mut self, keep: bool) -> Self {
        self.keep_graphs = keep;
        self
    }

    pub fn config(&self) -> &Config<T> {
        &self.cfg
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn detections(&self) -> &DetectionSet<T> {
        &self.dets
    }

    pub fn run_log(&self) -> &RunLog {
        &self.log
    }

    /// Frames processed so far (the last accepted step frame).
    pub fn frame(&self) -> Option<usize> {
        self.frame
    }

    fn accept_frame(&self, t: usize) -> Result<()> {
        if let Some(last) = self.frame {
            if t <= last {
                return Err(Error::InvalidInput(format!(
                    "frames must be presented in increasing order: got {t} after {last}"
                )));
            }
        }
        Ok(())
    }

    fn ingest(&mut self, t: usize, new_dets: Vec<Detection<T>>) -> Result<()> {
        for d in new_dets {
            if d.frame > t {
                return Err(Error::InvalidInput(format!(
                    "detection {} lives on frame {} which is after the step frame {t}",
                    d.id, d.frame
                )));
            }
            self.dets.push(d)?;
        }
        Ok(())
    }

    /// One near-online step: re-decides all associations in `[t - tau, t]`
    /// given the detections seen so far (which may include new ones for any
    /// frame up to `t`). Frames must strictly increase across calls.
    pub fn step(&mut self, t: usize, new_dets: Vec<Detection<T>>) -> Result<StepReport<T>> {
        let wall = Instant::now();
        self.accept_frame(t)?;

        let chist_start = Instant::now();
        self.ingest(t, new_dets)?;
        let keep_from = t.saturating_sub(4 * self.cfg.tau + self.cfg.max_gap());
        self.affinities.evict_before(&self.dets, keep_from);
        self.kernels.evict_before(|id| self.dets.get(id).map_or(0, |d| d.frame), keep_from);
        let chist = chist_start.elapsed();

        let pool = Arc::clone(&self.pool);
        let mut report = pool.install(|| self.associate(t))?;
        report.timings.chist = chist;

        self.frame = Some(t);
        self.log.absorb(&report, wall.elapsed());
        Ok(report)
    }

    /// The window re-association at frame `t` (runs inside the worker pool).
    fn associate(&mut self, t: usize) -> Result<StepReport<T>> {
        let lo = t.saturating_sub(self.cfg.tau);

        let ipt_start = Instant::now();
        let waff = WindowAffinity::build(
            &self.dets,
            lo,
            t,
            &self.model,
            &self.store,
            &self.affinities,
            &self.cfg,
        )?;
        let ipt = ipt_start.elapsed();

        let hypos_start = Instant::now();
        let tracklets = generate_tracklets(&self.dets, &self.targets, lo, t, &waff, &self.cfg);

        // Targets idle for longer than tau + t_active can never be associated
        // again: they are retired from hypothesis generation (but stay in the
        // target list for output), so per-step work tracks the active count.
        let horizon = t.saturating_sub(self.cfg.tau + self.cfg.t_active);
        let active: Vec<bool> = self
            .targets
            .iter()
            .map(|tg| tg.last_frame().is_some_and(|f| f >= horizon))
            .collect();

        // Gating predictors use the targets as they stood before cleaning, so
        // short-lived targets whose whole history sits inside the window are
        // still predictable.
        let mut sets: Vec<HypothesisSet> = Vec::new();
        for (i, target) in self.targets.iter().enumerate() {
            if !active[i] {
                continue;
            }
            let predictor = fit_predictor(target, &self.dets, &self.cfg)?;
            if let Some(set) =
                hypotheses_for_target(target, i, t, &tracklets, &predictor, &self.dets, &self.cfg)
            {
                sets.push(set);
            }
        }
        sets.extend(new_target_sets(&tracklets, &sets, &self.dets));
        let n_hypotheses: usize = sets.iter().map(|s| s.hypotheses.len()).sum();
        let hypos = hypos_start.elapsed();

        let infer_start = Instant::now();
        // Retired targets get an id-only placeholder: nothing references
        // their clean history, and skipping the clone keeps steps cheap.
        let clean: Vec<Target> = self
            .targets
            .iter()
            .enumerate()
            .map(|(i, tg)| if active[i] { tg.cleaned(lo) } else { Target::new(tg.id) })
            .collect();
        let clean_predictors: Vec<Option<PolyPredictor<T>>> = clean
            .iter()
            .enumerate()
            .map(|(i, tg)| {
                if active[i] {
                    fit_predictor(tg, &self.dets, &self.cfg).ok()
                } else {
                    None
                }
            })
            .collect();
        let ctx = EnergyContext {
            dets: &self.dets,
            model: &self.model,
            store: &self.store,
            hists: self.hists.as_ref(),
            affinities: &self.affinities,
            kernels: &self.kernels,
            cfg: &self.cfg,
            t,
        };
        let graph = build_graph(&ctx, &sets, &clean, &clean_predictors);
        let (solution, stats) = solve_with_stats(&graph, self.cfg.solver_budget);
        let infer = infer_start.elapsed();

        // Augment: replace each participating target with its cleaned history
        // plus the chosen hypothesis; spawn targets for adopted new sets.
        let mut spawned: Vec<&Hypothesis> = Vec::new();
        for (k, set) in sets.iter().enumerate() {
            let hyp = &set.hypotheses[solution.states[k]];
            match set.target_ref {
                TargetRef::Existing(i) => {
                    let mut tg = clean[i].clone();
                    for &(f, d) in hyp.entries() {
                        debug_assert!(f >= lo && f <= t, "hypotheses stay inside the window");
                        let kept = self.targets[i].detection_at(f) == Some(d);
                        tg.set(f, d);
                        let when = if kept {
                            self.targets[i].last_assoc_time(d).unwrap_or(t)
                        } else {
                            t
                        };
                        tg.set_last_assoc(d, when);
                    }
                    self.targets[i] = tg;
                }
                TargetRef::New(_) => {
                    if !hyp.is_empty() {
                        spawned.push(hyp);
                    }
                }
            }
        }
        // Fresh identities in a reproducible order: first appearance, then
        // summed score (strongest first), then the detection ids themselves.
        spawned.sort_by(|a, b| {
            let (fa, fb) = (a.entries()[0].0, b.entries()[0].0);
            let score = |h: &Hypothesis| -> T { h.det_ids().map(|d| self.dets.by_id(d).score).sum() };
            fa.cmp(&fb)
                .then_with(|| score(b).partial_cmp(&score(a)).expect("finite scores"))
                .then_with(|| a.entries().cmp(b.entries()))
        });
        for hyp in spawned {
            let mut tg = Target::new(self.next_target_id);
            self.next_target_id += 1;
            for &(f, d) in hyp.entries() {
                tg.set(f, d);
                tg.set_last_assoc(d, t);
            }
            self.targets.push(tg);
        }

        #[cfg(debug_assertions)]
        {
            let mut seen = HashSet::new();
            for tg in &self.targets {
                for (_, &d) in tg.assoc().range(lo..=t) {
                    assert!(seen.insert(d), "detection {d} assigned to two targets");
                }
            }
        }

        Ok(StepReport {
            frame: t,
            n_window_dets: (lo..=t).map(|f| self.dets.at_frame(f).len()).sum(),
            n_tracklets: tracklets.len(),
            n_sets: sets.len(),
            n_hypotheses,
            n_components: stats.components,
            n_fallbacks: stats.fallbacks,
            energy: solution.energy,
            states: solution.states,
            timings: StageTimings { ipt, chist: Duration::ZERO, hypos, infer },
            graph: self.keep_graphs.then_some(graph),
        })
    }

    /// One step of the per-frame Hungarian baseline: match recently-active
    /// targets against frame-`t` detections on the unary cost, void matches
    /// costing more than −0.5, spawn targets from unmatched confident
    /// detections. Associations are never revisited.
    pub fn step_hm(&mut self, t: usize, new_dets: Vec<Detection<T>>) -> Result<()> {
        self.accept_frame(t)?;
        self.ingest(t, new_dets)?;

        let frame_dets: Vec<usize> = self.dets.at_frame(t).to_vec();
        let active: Vec<usize> = self
            .targets
            .iter()
            .enumerate()
            .filter(|(_, tg)| tg.last_frame().is_some_and(|f| f + self.cfg.t_active >= t))
            .map(|(i, _)| i)
            .collect();

        if !frame_dets.is_empty() && !active.is_empty() {
            let ctx = EnergyContext {
                dets: &self.dets,
                model: &self.model,
                store: &self.store,
                hists: self.hists.as_ref(),
                affinities: &self.affinities,
                kernels: &self.kernels,
                cfg: &self.cfg,
                t,
            };
            let pool = Arc::clone(&self.pool);
            let cost: Vec<Vec<T>> = pool.install(|| {
                active
                    .par_iter()
                    .map(|&i| {
                        let tg = &self.targets[i];
                        let pred = fit_predictor(tg, &self.dets, &self.cfg).ok();
                        frame_dets
                            .iter()
                            .map(|&d| psi_u(&ctx, tg, pred.as_ref(), self.dets.by_id(d)))
                            .collect()
                    })
                    .collect()
            });
            let assignment = min_cost_assignment(&cost);
            let mut used = HashSet::new();
            for (row, &col) in assignment.iter().enumerate() {
                let Some(col) = col else { continue };
                if cost[row][col] > T::of(-0.5) {
                    continue;
                }
                let (i, d) = (active[row], frame_dets[col]);
                self.targets[i].set(t, d);
                self.targets[i].set_last_assoc(d, t);
                used.insert(d);
            }
            for &d in &frame_dets {
                if !used.contains(&d) && self.dets.by_id(d).score > T::zero() {
                    self.spawn_single(t, d);
                }
            }
        } else {
            for &d in &frame_dets {
                if self.dets.by_id(d).score > T::zero() {
                    self.spawn_single(t, d);
                }
            }
        }
        self.frame = Some(t);
        Ok(())
    }

    fn spawn_single(&mut self, t: usize, det_id: usize) {
        let mut tg = Target::new(self.next_target_id);
        self.next_target_id += 1;
        tg.set(t, det_id);
        tg.set_last_assoc(det_id, t);
        self.targets.push(tg);
    }

    /// Output filtering: drops targets with a single detection or a median
    /// detection score below zero, and renumbers survivors contiguously
    /// from 1.
    pub fn finalize(&self) -> Vec<Target> {
        let mut kept: Vec<Target> = self
            .targets
            .iter()
            .filter(|tg| {
                if tg.len() <= 1 {
                    return false;
                }
                let mut scores: Vec<T> =
                    tg.assoc().values().map(|&d| self.dets.by_id(d).score).collect();
                scores.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
                let n = scores.len();
                let median = if n % 2 == 1 {
                    scores[n / 2]
                } else {
                    (scores[n / 2 - 1] + scores[n / 2]) / T::of(2.0)
                };
                median >= T::zero()
            })
            .cloned()
            .collect();
        for (k, tg) in kept.iter_mut().enumerate() {
            tg.id = k + 1;
        }
        kept
    }

    /// Finalized targets expanded to raw labeled boxes, frame-major.
    pub fn output(&self) -> Vec<LabeledBox<T>> {
        let mut rows: Vec<LabeledBox<T>> =
            self.finalize().iter().flat_map(|tg| tg.to_labeled_boxes(&self.dets)).collect();
        rows.sort_by(|a, b| (a.frame, a.track_id).cmp(&(b.frame, b.track_id)));
        rows
    }

    /// Finalized targets smoothed into per-frame continuous trajectories.
    pub fn smoothed_output(&self) -> Vec<LabeledBox<T>> {
        let mut rows: Vec<LabeledBox<T>> =
            self.finalize().iter().flat_map(|tg| smooth(tg, &self.dets, &self.cfg)).collect();
        rows.sort_by(|a, b| (a.frame, a.track_id).cmp(&(b.frame, b.track_id)));
        rows
    }

    /// Association latency over every detection currently owned by a target:
    /// the gap between its frame and the last step that (re-)associated it.
    pub fn latency_report(&self) -> LatencyReport<T> {
        let mut latencies: Vec<usize> = Vec::new();
        for tg in &self.targets {
            for (&f, &d) in tg.assoc() {
                let when = tg.last_assoc_time(d).unwrap_or(f);
                latencies.push(when.saturating_sub(f));
            }
        }
        if latencies.is_empty() {
            return LatencyReport {
                mean: T::zero(),
                std: T::zero(),
                zero_fraction: T::one(),
                max: 0,
                count: 0,
            };
        }
        let n = T::of_usize(latencies.len());
        let mean = latencies.iter().map(|&l| T::of_usize(l)).sum::<T>() / n;
        let var = latencies
            .iter()
            .map(|&l| {
                let d = T::of_usize(l) - mean;
                d * d
            })
            .sum::<T>()
            / n;
        LatencyReport {
            mean,
            std: var.sqrt(),
            zero_fraction: T::of_usize(latencies.iter().filter(|&&l| l == 0).count()) / n,
            max: latencies.iter().copied().max().unwrap_or(0),
            count: latencies.len(),
        }
    }
}

/// Constant-velocity smoothing of one target: the four box coordinates are
/// filtered independently over the target's span, detections acting as
/// measurements and gap frames as pure predictions, then smoothed backward.
/// Returns one box per frame from the first to the last associated frame.
pub fn smooth<T: Real>(
    target: &Target,
    dets: &DetectionSet<T>,
    cfg: &Config<T>,
) -> Vec<LabeledBox<T>> {
    let Some(first) = target.first_frame() else {
        return Vec::new();
    };
    let series = |pick: fn(&BoundingBox<T>) -> T| -> Vec<(usize, T)> {
        target.assoc().iter().map(|(&f, &d)| (f, pick(&dets.by_id(d).bbox))).collect()
    };
    let (m, q) = (cfg.kalman_measurement_std, cfg.kalman_process_std);
    let xs = smooth_series(&series(|b| b.x), m, q);
    let ys = smooth_series(&series(|b| b.y), m, q);
    let ws = smooth_series(&series(|b| b.w), m, q);
    let hs = smooth_series(&series(|b| b.h), m, q);
    xs.into_iter()
        .zip(ys)
        .zip(ws.into_iter().zip(hs))
        .enumerate()
        .map(|(k, ((x, y), (w, h)))| LabeledBox {
            track_id: target.id,
            frame: first + k,
            bbox: BoundingBox::new(x, y, w, h),
        })
        .collect()
}
