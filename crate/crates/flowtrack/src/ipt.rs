//! Interest-point trajectories (IPTs): long-term point tracks that carry the
//! low-level motion evidence the descriptor in [`crate::alfd`] aggregates.
//!
//! An IPT is a contiguous sequence of subpixel positions, one per frame from
//! its start frame to its termination. The store keeps a per-frame index so
//! box queries stay cheap, and owns the lifecycle rules: forward/backward
//! flow verification on extension and a minimum spacing for newly spawned
//! points.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::types::BoundingBox;

/// Maximum forward/backward flow disagreement (pixels) before termination.
pub const FB_DISAGREEMENT_MAX: f64 = 10.0;

/// Minimum distance (pixels) between a new point and any live trajectory.
pub const MIN_SPACING: f64 = 4.0;

/// One trajectory: contiguous samples starting at `start`.
#[derive(Debug, Clone)]
pub struct Ipt<T> {
    pub id: usize,
    start: usize,
    points: Vec<(T, T)>,
}

impl<T: Real> Ipt<T> {
    pub fn start(&self) -> usize {
        self.start
    }

    /// Last frame carrying a sample.
    pub fn last_frame(&self) -> usize {
        self.start + self.points.len() - 1
    }

    /// Position at `frame`, `None` outside the sampled range.
    #[inline]
    pub fn pos(&self, frame: usize) -> Option<(T, T)> {
        if frame < self.start {
            return None;
        }
        self.points.get(frame - self.start).copied()
    }

    #[inline]
    pub fn has_frame(&self, frame: usize) -> bool {
        frame >= self.start && frame - self.start < self.points.len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Samples as `(frame, x, y)` in frame order.
    pub fn samples(&self) -> impl Iterator<Item = (usize, T, T)> + '_ {
        self.points.iter().enumerate().map(move |(i, &(x, y))| (self.start + i, x, y))
    }
}

/// Forward flow at `t-1` and the backward flow measured at its endpoint.
#[derive(Debug, Clone, Copy)]
pub struct Flow<T> {
    /// Displacement from the position at `t-1` to the proposed one at `t`.
    pub forward: (T, T),
    /// Displacement measured back from the proposed position to `t-1`.
    pub backward: (T, T),
}

/// What one [`IptStore::advance`] call did.
#[derive(Debug, Clone, Default)]
pub struct AdvanceSummary {
    /// Ids of trajectories spawned at the new frame.
    pub spawned: Vec<usize>,
    /// Ids of trajectories terminated by the flow consistency check.
    pub terminated: Vec<usize>,
}

/// Collection of IPTs with an id index and a per-frame spatial index.
#[derive(Debug, Clone, Default)]
pub struct IptStore<T> {
    ipts: Vec<Ipt<T>>,
    index: HashMap<usize, usize>,
    by_frame: Vec<Vec<usize>>,
    next_id: usize,
}

impl<T: Real> IptStore<T> {
    pub fn new() -> Self {
        IptStore { ipts: Vec::new(), index: HashMap::new(), by_frame: Vec::new(), next_id: 0 }
    }

    /// Inserts a complete trajectory (e.g. from a file or a synthesizer).
    /// The id must be unused and the samples non-empty.
    pub fn insert_track(&mut self, id: usize, start: usize, points: Vec<(T, T)>) -> Result<()> {
        if self.index.contains_key(&id) {
            return Err(Error::InvalidInput(format!("duplicate ipt id {id}")));
        }
        if points.is_empty() {
            return Err(Error::InvalidInput(format!("ipt {id} has no samples")));
        }
        let idx = self.ipts.len();
        let last = start + points.len() - 1;
        if self.by_frame.len() <= last {
            self.by_frame.resize(last + 1, Vec::new());
        }
        for f in start..=last {
            self.by_frame[f].push(idx);
        }
        self.index.insert(id, idx);
        self.ipts.push(Ipt { id, start, points });
        self.next_id = self.next_id.max(id + 1);
        Ok(())
    }

    pub fn get(&self, id: usize) -> Option<&Ipt<T>> {
        self.index.get(&id).map(|&i| &self.ipts[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Ipt<T>> {
        self.ipts.iter()
    }

    pub fn len(&self) -> usize {
        self.ipts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ipts.is_empty()
    }

    /// Ids of trajectories whose sample at `t_i` lies inside `bbox` (closed
    /// intervals) and which also carry a sample at `t_j`; ascending by id.
    pub fn query(&self, bbox: &BoundingBox<T>, t_i: usize, t_j: usize) -> Vec<usize> {
        let Some(frame) = self.by_frame.get(t_i) else {
            return Vec::new();
        };
        let mut out: Vec<usize> = frame
            .iter()
            .filter_map(|&idx| {
                let ipt = &self.ipts[idx];
                let (x, y) = ipt.pos(t_i)?;
                (bbox.contains(x, y) && ipt.has_frame(t_j)).then_some(ipt.id)
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Ids of trajectories alive (sampled) at `frame`, ascending.
    pub fn alive_at(&self, frame: usize) -> Vec<usize> {
        let Some(idxs) = self.by_frame.get(frame) else {
            return Vec::new();
        };
        let mut out: Vec<usize> = idxs.iter().map(|&i| self.ipts[i].id).collect();
        out.sort_unstable();
        out
    }

    /// Advances the store to frame `t`.
    ///
    /// Every trajectory ending at `t-1` must come with a [`Flow`]; it is
    /// extended by the forward flow unless the backward flow misses the
    /// origin by more than [`FB_DISAGREEMENT_MAX`] pixels, in which case it
    /// terminates at `t-1`. Afterwards each point in `new_points` (in input
    /// order) spawns a fresh trajectory at `t` unless it lands within
    /// [`MIN_SPACING`] pixels of a trajectory already live at `t`.
    pub fn advance(
        &mut self,
        t: usize,
        new_points: &[(T, T)],
        flows: &HashMap<usize, Flow<T>>,
    ) -> Result<AdvanceSummary> {
        if t == 0 && !flows.is_empty() {
            return Err(Error::InvalidInput("flows supplied at frame 0".into()));
        }
        let live: Vec<usize> = if t == 0 {
            Vec::new()
        } else {
            (0..self.ipts.len()).filter(|&i| self.ipts[i].last_frame() == t - 1).collect()
        };
        for id in flows.keys() {
            match self.index.get(id) {
                None => return Err(Error::InvalidInput(format!("flow for unknown ipt id {id}"))),
                Some(&idx) if t == 0 || self.ipts[idx].last_frame() != t - 1 => {
                    return Err(Error::InvalidInput(format!("flow for ipt {id} not live at {}", t.saturating_sub(1))));
                }
                _ => {}
            }
        }

        let mut summary = AdvanceSummary::default();
        let max_dev = T::of(FB_DISAGREEMENT_MAX);
        let mut extended: Vec<(usize, T, T)> = Vec::new();
        for &idx in &live {
            let ipt = &self.ipts[idx];
            let flow = flows.get(&ipt.id).ok_or_else(|| {
                Error::InvalidInput(format!("missing flow for live ipt {}", ipt.id))
            })?;
            let (x, y) = ipt.pos(t - 1).expect("live ipt has sample at t-1");
            let fx = x + flow.forward.0;
            let fy = y + flow.forward.1;
            let rx = fx + flow.backward.0;
            let ry = fy + flow.backward.1;
            let dev = ((rx - x) * (rx - x) + (ry - y) * (ry - y)).sqrt();
            if dev > max_dev {
                summary.terminated.push(self.ipts[idx].id);
            } else {
                extended.push((idx, fx, fy));
            }
        }
        if self.by_frame.len() <= t {
            self.by_frame.resize(t + 1, Vec::new());
        }
        for &(idx, fx, fy) in &extended {
            self.ipts[idx].points.push((fx, fy));
            self.by_frame[t].push(idx);
        }

        // Spawn new points, greedily enforcing the spacing rule against
        // everything already live at t (including points spawned just above).
        let min_space2 = T::of(MIN_SPACING) * T::of(MIN_SPACING);
        let mut live_at_t: Vec<(T, T)> =
            self.by_frame[t].iter().map(|&i| self.ipts[i].pos(t).unwrap()).collect();
        for &(x, y) in new_points {
            let crowded = live_at_t
                .iter()
                .any(|&(lx, ly)| (lx - x) * (lx - x) + (ly - y) * (ly - y) < min_space2);
            if crowded {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            let idx = self.ipts.len();
            self.ipts.push(Ipt { id, start: t, points: vec![(x, y)] });
            self.index.insert(id, idx);
            self.by_frame[t].push(idx);
            live_at_t.push((x, y));
            summary.spawned.push(id);
        }
        summary.terminated.sort_unstable();
        Ok(summary)
    }
}
