//! Near-online multi-target tracking on aggregated local flow descriptors.
//!
//! The engine consumes per-frame detections plus interest-point trajectories
//! (IPTs) and associates detections into targets inside a sliding temporal
//! window. Affinities between detections are measured by a learned flow
//! descriptor ([`alfd`]); candidate target extensions are scored by an energy
//! model ([`potentials`]) and resolved jointly by exact MAP inference on the
//! resulting CRF ([`infer`]). Past decisions inside the window may be revised
//! at every step, which is what makes the method *near*-online.
//!
//! Numeric modules are generic over the scalar type (`f32` or `f64`) through
//! the [`scalar::Real`] trait; the crate root exports `f64` aliases which the
//! I/O layer, the synthesizer and the CLI use.
//!
//! Module map:
//! - [`types`]: boxes, detections, targets, configuration.
//! - [`ipt`]: interest-point trajectories, their lifecycle and spatial lookup.
//! - [`alfd`]: the aggregated local flow descriptor, affinity and learning.
//! - [`appearance`]: color histograms and the intersection kernel.
//! - [`hypo`]: tracklets, hypothesis generation, polynomial motion prediction.
//! - [`potentials`]: unary / pairwise / high-order / exclusion energies.
//! - [`infer`]: CRF construction and exact MAP by variable elimination.
//! - [`tracker`]: the sliding-window engine, a Hungarian baseline, output
//!   smoothing and latency accounting.
//! - [`metrics`]: CLEAR-MOT evaluation and affinity-metric ablation.
//! - [`io`]: text formats (MOT / KITTI / IPT / model / config / PPM).
//! - [`synth`]: seeded synthetic-scene generation.

pub mod alfd;
pub mod appearance;
pub mod assign;
pub mod error;
pub mod hypo;
pub mod infer;
pub mod io;
pub mod ipt;
pub mod kalman;
pub mod metrics;
pub mod potentials;
pub mod scalar;
pub mod synth;
pub mod tracker;
pub mod types;

pub use error::Error;
pub use scalar::Real;

/// Scalar type used by the file formats, the synthesizer and the CLI.
pub type Scalar = f64;

/// `f64` bounding box.
pub type BoundingBox = types::BoundingBox<Scalar>;
/// `f64` detection.
pub type Detection = types::Detection<Scalar>;
/// `f64` detection set.
pub type DetectionSet = types::DetectionSet<Scalar>;
/// `f64` labeled (tracked) box.
pub type LabeledBox = types::LabeledBox<Scalar>;
/// `f64` engine configuration.
pub type Config = types::Config<Scalar>;
/// `f64` IPT store.
pub type IptStore = ipt::IptStore<Scalar>;
/// `f64` descriptor model.
pub type AlfdModel = alfd::AlfdModel<Scalar>;
/// `f64` color-histogram store.
pub type HistogramStore = appearance::HistogramStore<Scalar>;
/// `f64` tracker.
pub type Tracker = tracker::Tracker<Scalar>;
