//! File formats: detection/track tables (MOT CSV and KITTI), the IPT CSV,
//! appearance histogram tables, affinity model files, flat key=value
//! configuration, binary PPM images, and the on-disk sequence bundle that
//! groups them under a manifest.
//!
//! Every writer emits floating values with six decimal places, and every
//! parser is an exact inverse on the writer's own output. See
//! `docs/FORMATS.md` for byte-level examples.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::alfd::{descriptor_len, AlfdModel};
use crate::appearance::{ColorHistogram, HistogramStore, RgbImage, HIST_LEN};
use crate::error::{Error, Result};
use crate::ipt::IptStore;
use crate::scalar::Real;
use crate::types::{BoundingBox, Config, Detection, DetectionSet, LabeledBox};

/// KITTI object classes this crate understands (beyond `DontCare`, which is
/// dropped silently). Rows with any other type are skipped with a warning.
pub const KITTI_CLASSES: [&str; 8] =
    ["Car", "Van", "Truck", "Pedestrian", "Person_sitting", "Cyclist", "Tram", "Misc"];

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn finish(mut w: BufWriter<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

fn field<F: FromStr>(path: &Path, line_no: usize, raw: &str, what: &str) -> Result<F> {
    raw.trim()
        .parse()
        .map_err(|_| Error::parse(path, line_no, format!("bad {what}: {raw:?}")))
}

/// Rows of a detection/track table: anonymous detections (ids assigned in
/// file order, starting at 0) alongside identity-carrying track boxes.
#[derive(Debug, Clone)]
pub struct TrackTable<T> {
    pub detections: DetectionSet<T>,
    pub tracks: Vec<LabeledBox<T>>,
}

impl<T: Real> Default for TrackTable<T> {
    fn default() -> Self {
        TrackTable { detections: DetectionSet::new(), tracks: Vec::new() }
    }
}

// ---------------------------------------------------------------------------
// MOT CSV
// ---------------------------------------------------------------------------

/// Reads a MOT Challenge CSV (`frame,id,x,y,w,h,conf,...`). Frames are
/// 1-based in the file and 0-based in memory; rows with id −1 become
/// detections, all others track boxes.
pub fn read_mot<T: Real>(path: &Path) -> Result<TrackTable<T>> {
    let text = read_to_string(path)?;
    let mut out = TrackTable::default();
    let mut next_det = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() < 7 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected at least 7 comma-separated fields, got {}", parts.len()),
            ));
        }
        let frame1: usize = field(path, line_no, parts[0], "frame")?;
        if frame1 == 0 {
            return Err(Error::parse(path, line_no, "MOT frames are 1-based; got 0"));
        }
        let frame = frame1 - 1;
        let id: i64 = field(path, line_no, parts[1], "id")?;
        let x: f64 = field(path, line_no, parts[2], "x")?;
        let y: f64 = field(path, line_no, parts[3], "y")?;
        let w: f64 = field(path, line_no, parts[4], "w")?;
        let h: f64 = field(path, line_no, parts[5], "h")?;
        let conf: f64 = field(path, line_no, parts[6], "conf")?;
        let bbox = BoundingBox::new(T::of(x), T::of(y), T::of(w), T::of(h));
        if id < 0 {
            out.detections
                .push(Detection { id: next_det, frame, bbox, score: T::of(conf) })
                .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
            next_det += 1;
        } else {
            out.tracks.push(LabeledBox { track_id: id as usize, frame, bbox });
        }
    }
    Ok(out)
}

/// Writes detections as MOT CSV rows with id −1, in iteration order.
pub fn write_mot_detections<T: Real>(path: &Path, dets: &DetectionSet<T>) -> Result<()> {
    let mut text = String::new();
    for d in dets.iter() {
        writeln!(
            text,
            "{},-1,{:.6},{:.6},{:.6},{:.6},{:.6},-1,-1,-1",
            d.frame + 1,
            d.bbox.x,
            d.bbox.y,
            d.bbox.w,
            d.bbox.h,
            d.score
        )
        .expect("string formatting");
    }
    write_text(path, &text)
}

/// Writes track boxes as MOT CSV rows (conf 1).
pub fn write_mot_tracks<T: Real>(path: &Path, rows: &[LabeledBox<T>]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        writeln!(
            text,
            "{},{},{:.6},{:.6},{:.6},{:.6},1,-1,-1,-1",
            r.frame + 1,
            r.track_id,
            r.bbox.x,
            r.bbox.y,
            r.bbox.w,
            r.bbox.h
        )
        .expect("string formatting");
    }
    write_text(path, &text)
}

// ---------------------------------------------------------------------------
// KITTI tracking labels
// ---------------------------------------------------------------------------

/// Reads a KITTI tracking label file (space-separated, boxes as
/// left/top/right/bottom, 0-based frames, optional trailing score).
/// `DontCare` rows are dropped; rows of unknown type are skipped with a
/// warning; `class_filter`, when given, keeps only the listed classes.
pub fn read_kitti<T: Real>(path: &Path, class_filter: Option<&[String]>) -> Result<TrackTable<T>> {
    let text = read_to_string(path)?;
    let mut out = TrackTable::default();
    let mut next_det = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() < 17 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected at least 17 space-separated fields, got {}", parts.len()),
            ));
        }
        let class = parts[2];
        if class == "DontCare" {
            continue;
        }
        if !KITTI_CLASSES.contains(&class) {
            log::warn!("{}:{}: unknown object type {:?}; row skipped", path.display(), line_no, class);
            continue;
        }
        if let Some(filter) = class_filter {
            if !filter.iter().any(|c| c == class) {
                continue;
            }
        }
        let frame: usize = field(path, line_no, parts[0], "frame")?;
        let id: i64 = field(path, line_no, parts[1], "track id")?;
        let left: f64 = field(path, line_no, parts[6], "bbox left")?;
        let top: f64 = field(path, line_no, parts[7], "bbox top")?;
        let right: f64 = field(path, line_no, parts[8], "bbox right")?;
        let bottom: f64 = field(path, line_no, parts[9], "bbox bottom")?;
        let score: f64 =
            if parts.len() > 17 { field(path, line_no, parts[17], "score")? } else { 1.0 };
        let bbox =
            BoundingBox::new(T::of(left), T::of(top), T::of(right - left), T::of(bottom - top));
        if id < 0 {
            out.detections
                .push(Detection { id: next_det, frame, bbox, score: T::of(score) })
                .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
            next_det += 1;
        } else {
            out.tracks.push(LabeledBox { track_id: id as usize, frame, bbox });
        }
    }
    Ok(out)
}

fn kitti_row<T: Real>(frame: usize, id: i64, class: &str, bbox: &BoundingBox<T>, score: T) -> String {
    format!(
        "{frame} {id} {class} 0 0 0.000000 {:.6} {:.6} {:.6} {:.6} \
         -1.000000 -1.000000 -1.000000 -1000.000000 -1000.000000 -1000.000000 -10.000000 {:.6}\n",
        bbox.x,
        bbox.y,
        bbox.right(),
        bbox.bottom(),
        score
    )
}

/// Writes detections in KITTI label format with track id −1.
pub fn write_kitti_detections<T: Real>(
    path: &Path,
    dets: &DetectionSet<T>,
    class: &str,
) -> Result<()> {
    let mut text = String::new();
    for d in dets.iter() {
        text.push_str(&kitti_row(d.frame, -1, class, &d.bbox, d.score));
    }
    write_text(path, &text)
}

/// Writes track boxes in KITTI label format (score 1).
pub fn write_kitti_tracks<T: Real>(path: &Path, rows: &[LabeledBox<T>], class: &str) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&kitti_row(r.frame, r.track_id as i64, class, &r.bbox, T::one()));
    }
    write_text(path, &text)
}

// ---------------------------------------------------------------------------
// IPT CSV
// ---------------------------------------------------------------------------

/// Reads the IPT CSV (`id,frame,x,y` per line). Each id's samples must cover
/// a contiguous frame interval with no duplicates.
pub fn parse_ipt<T: Real>(path: &Path) -> Result<IptStore<T>> {
    let text = read_to_string(path)?;
    let mut grouped: BTreeMap<usize, BTreeMap<usize, (T, T)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 4 comma-separated fields, got {}", parts.len()),
            ));
        }
        let id: usize = field(path, line_no, parts[0], "ipt id")?;
        let frame: usize = field(path, line_no, parts[1], "frame")?;
        let x: f64 = field(path, line_no, parts[2], "x")?;
        let y: f64 = field(path, line_no, parts[3], "y")?;
        if grouped.entry(id).or_default().insert(frame, (T::of(x), T::of(y))).is_some() {
            return Err(Error::parse(path, line_no, format!("ipt {id} repeats frame {frame}")));
        }
    }
    let mut store = IptStore::new();
    for (id, samples) in grouped {
        let first = *samples.keys().next().expect("group is non-empty");
        let last = *samples.keys().next_back().expect("group is non-empty");
        if last - first + 1 != samples.len() {
            return Err(Error::InvalidInput(format!(
                "ipt {id} skips frames inside [{first}, {last}]: trajectories must be contiguous"
            )));
        }
        store.insert_track(id, first, samples.into_values().collect())?;
    }
    Ok(store)
}

/// Writes the store as IPT CSV, ids ascending, frames ascending.
pub fn write_ipt<T: Real>(store: &IptStore<T>, path: &Path) -> Result<()> {
    let mut ids: Vec<usize> = store.iter().map(|t| t.id).collect();
    ids.sort_unstable();
    let mut text = String::new();
    for id in ids {
        let track = store.get(id).expect("id came from the store");
        for (frame, x, y) in track.samples() {
            writeln!(text, "{id},{frame},{x:.6},{y:.6}").expect("string formatting");
        }
    }
    write_text(path, &text)
}

// ---------------------------------------------------------------------------
// Appearance histograms
// ---------------------------------------------------------------------------

/// Reads per-detection histograms (`det_id,b0,...,b159`). Values are stored
/// as written (already layer-normalized); each layer's mass must be within
/// 1% of 1.
pub fn read_histograms<T: Real>(path: &Path) -> Result<HistogramStore<T>> {
    let text = read_to_string(path)?;
    let mut store = HistogramStore::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != HIST_LEN + 1 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected {} fields, got {}", HIST_LEN + 1, parts.len()),
            ));
        }
        let det_id: usize = field(path, line_no, parts[0], "detection id")?;
        let mut bins = Vec::with_capacity(HIST_LEN);
        for raw in &parts[1..] {
            let v: f64 = field(path, line_no, raw, "bin value")?;
            bins.push(T::of(v));
        }
        let cell = crate::appearance::AB_BINS * crate::appearance::AB_BINS;
        let full: T = bins[..cell].iter().copied().sum();
        let grid: T = bins[cell..].iter().copied().sum();
        let tol = T::of(0.01);
        if (full - T::one()).abs() > tol || (grid - T::one()).abs() > tol {
            return Err(Error::parse(
                path,
                line_no,
                format!("histogram layers must sum to 1, got {full} and {grid}"),
            ));
        }
        store.insert(det_id, ColorHistogram { bins });
    }
    Ok(store)
}

/// Writes the store as histogram CSV, detection ids ascending.
pub fn write_histograms<T: Real>(store: &HistogramStore<T>, path: &Path) -> Result<()> {
    let mut ids: Vec<usize> = store.iter().map(|(id, _)| id).collect();
    ids.sort_unstable();
    let mut text = String::new();
    for id in ids {
        let hist = store.get(id).expect("id came from the store");
        write!(text, "{id}").expect("string formatting");
        for v in &hist.bins {
            write!(text, ",{v:.6}").expect("string formatting");
        }
        text.push('\n');
    }
    write_text(path, &text)
}

// ---------------------------------------------------------------------------
// Affinity model files
// ---------------------------------------------------------------------------

/// Reads an affinity model: a `grid <n>` header line, then one line per
/// trained gap (`<delta_t> <w0> ... <w_{k-1}>`, space-separated).
pub fn read_model<T: Real>(path: &Path) -> Result<AlfdModel<T>> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((i0, header)) = lines.next() else {
        return Err(Error::parse(path, 1, "empty model file"));
    };
    let header_parts: Vec<&str> = header.split_whitespace().collect();
    if header_parts.len() != 2 || header_parts[0] != "grid" {
        return Err(Error::parse(path, i0 + 1, "model files start with a \"grid <n>\" line"));
    }
    let g: usize = field(path, i0 + 1, header_parts[1], "grid size")?;
    let mut model = AlfdModel::new(g);
    let expected = descriptor_len(g);
    for (i, line) in lines {
        let line_no = i + 1;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != expected + 1 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected a gap and {expected} weights, got {} fields", parts.len()),
            ));
        }
        let delta_t: usize = field(path, line_no, parts[0], "frame gap")?;
        let mut weights = Vec::with_capacity(expected);
        for raw in &parts[1..] {
            let v: f64 = field(path, line_no, raw, "weight")?;
            weights.push(T::of(v));
        }
        model.set_weights(delta_t, weights)?;
    }
    Ok(model)
}

/// Writes an affinity model, gaps ascending.
pub fn write_model<T: Real>(model: &AlfdModel<T>, path: &Path) -> Result<()> {
    let mut text = format!("grid {}\n", model.grid_n());
    for gap in model.trained_gaps() {
        write!(text, "{gap}").expect("string formatting");
        for w in model.weights_for(gap).expect("gap is trained") {
            write!(text, " {w:.6}").expect("string formatting");
        }
        text.push('\n');
    }
    write_text(path, &text)
}

// ---------------------------------------------------------------------------
// Flat key=value files (configuration, manifests, scenario specs)
// ---------------------------------------------------------------------------

/// Reads a flat `key=value` file: one pair per line, `#` comments and blank
/// lines ignored. Duplicate keys are errors; consumers reject unknown keys.
pub fn read_kv(path: &Path) -> Result<Vec<(String, String, usize)>> {
    parse_kv_str(&read_to_string(path)?, path)
}

/// [`read_kv`] over in-memory text (`path` only labels errors).
pub fn parse_kv_str(text: &str, path: &Path) -> Result<Vec<(String, String, usize)>> {
    let mut out: Vec<(String, String, usize)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::parse(path, line_no, format!("expected key=value, got {line:?}")));
        };
        let key = key.trim().to_string();
        if out.iter().any(|(k, _, _)| *k == key) {
            return Err(Error::parse(path, line_no, format!("duplicate key {key:?}")));
        }
        out.push((key, value.trim().to_string(), line_no));
    }
    Ok(out)
}

fn parse_usize_list(path: &Path, line_no: usize, raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|p| field(path, line_no, p, "list entry"))
        .collect()
}

/// Reads an engine configuration. Every key must name a known field;
/// unlisted fields keep their defaults. The result is validated.
pub fn read_config<T: Real>(path: &Path) -> Result<Config<T>> {
    config_from_str(&read_to_string(path)?, path)
}

/// [`read_config`] over in-memory text.
pub fn config_from_str<T: Real>(text: &str, path: &Path) -> Result<Config<T>> {
    let mut cfg = Config::default();
    for (key, value, line_no) in parse_kv_str(text, path)? {
        let real = |what| -> Result<T> {
            let v: f64 = field(path, line_no, &value, what)?;
            Ok(T::of(v))
        };
        match key.as_str() {
            "tau" => cfg.tau = field(path, line_no, &value, "tau")?,
            "lambda" => cfg.lambda = real("lambda")?,
            "alpha" => cfg.alpha = real("alpha")?,
            "beta" => cfg.beta = real("beta")?,
            "gamma" => cfg.gamma = real("gamma")?,
            "epsilon" => cfg.epsilon = real("epsilon")?,
            "theta" => cfg.theta = real("theta")?,
            "eta" => cfg.eta = real("eta")?,
            "neighbor_set" => cfg.neighbor_set = parse_usize_list(path, line_no, &value)?,
            "tracklet_affinity_min" => cfg.tracklet_affinity_min = real("tracklet_affinity_min")?,
            "gating_iou_min" => cfg.gating_iou_min = real("gating_iou_min")?,
            "t_active" => cfg.t_active = field(path, line_no, &value, "t_active")?,
            "poly_order" => cfg.poly_order = field(path, line_no, &value, "poly_order")?,
            "grid_n" => cfg.grid_n = field(path, line_no, &value, "grid_n")?,
            "fps" => cfg.fps = real("fps")?,
            "workers" => cfg.workers = field(path, line_no, &value, "workers")?,
            "kalman_measurement_std" => {
                cfg.kalman_measurement_std = real("kalman_measurement_std")?
            }
            "kalman_process_std" => cfg.kalman_process_std = real("kalman_process_std")?,
            "solver_budget" => cfg.solver_budget = field(path, line_no, &value, "solver_budget")?,
            other => {
                return Err(Error::parse(path, line_no, format!("unknown config key {other:?}")))
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Renders a configuration as `key=value` text (the [`read_config`] format).
pub fn config_to_string<T: Real>(cfg: &Config<T>) -> String {
    let list =
        cfg.neighbor_set.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(",");
    format!(
        "tau={}\nlambda={:.6}\nalpha={:.6}\nbeta={:.6}\ngamma={:.6}\nepsilon={:.6}\n\
         theta={:.6}\neta={:.6}\nneighbor_set={}\ntracklet_affinity_min={:.6}\n\
         gating_iou_min={:.6}\nt_active={}\npoly_order={}\ngrid_n={}\nfps={:.6}\nworkers={}\n\
         kalman_measurement_std={:.6}\nkalman_process_std={:.6}\nsolver_budget={}\n",
        cfg.tau,
        cfg.lambda,
        cfg.alpha,
        cfg.beta,
        cfg.gamma,
        cfg.epsilon,
        cfg.theta,
        cfg.eta,
        list,
        cfg.tracklet_affinity_min,
        cfg.gating_iou_min,
        cfg.t_active,
        cfg.poly_order,
        cfg.grid_n,
        cfg.fps,
        cfg.workers,
        cfg.kalman_measurement_std,
        cfg.kalman_process_std,
        cfg.solver_budget,
    )
}

/// Writes a configuration file.
pub fn write_config<T: Real>(cfg: &Config<T>, path: &Path) -> Result<()> {
    write_text(path, &config_to_string(cfg))
}

// ---------------------------------------------------------------------------
// PPM (P6) images
// ---------------------------------------------------------------------------

/// Reads a binary PPM (P6) image with a maxval of 255.
pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let mut token = |what: &str| -> Result<String> {
        // Skip whitespace and '#' comments between tokens.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(path, 1, format!("truncated header: missing {what}")));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token("magic")?;
    if magic != "P6" {
        return Err(Error::parse(path, 1, format!("not a binary PPM: magic {magic:?}")));
    }
    let width: usize = token("width")?
        .parse()
        .map_err(|_| Error::parse(path, 1, "bad width"))?;
    let height: usize = token("height")?
        .parse()
        .map_err(|_| Error::parse(path, 1, "bad height"))?;
    let maxval: usize = token("maxval")?
        .parse()
        .map_err(|_| Error::parse(path, 1, "bad maxval"))?;
    if maxval != 255 {
        return Err(Error::parse(path, 1, format!("only maxval 255 is supported, got {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(Error::parse(
            path,
            1,
            format!("raster truncated: need {need} bytes, have {}", bytes.len().saturating_sub(pos)),
        ));
    }
    RgbImage::from_raw(width, height, bytes[pos..pos + need].to_vec())
}

/// Writes a binary PPM (P6) image.
pub fn write_ppm(img: &RgbImage, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    write!(w, "P6\n{} {}\n255\n", img.width, img.height).map_err(|e| Error::io(path, e))?;
    w.write_all(img.raw()).map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

// ---------------------------------------------------------------------------
// Sequence bundles
// ---------------------------------------------------------------------------

/// Dataset flavor of a bundle; decides the detection/track file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    Kitti,
    Mot,
    Synth,
}

impl std::fmt::Display for Flavor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Flavor::Kitti => "KITTI",
            Flavor::Mot => "MOT",
            Flavor::Synth => "SYNTH",
        })
    }
}

impl FromStr for Flavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "KITTI" => Ok(Flavor::Kitti),
            "MOT" => Ok(Flavor::Mot),
            "SYNTH" => Ok(Flavor::Synth),
            other => Err(Error::InvalidInput(format!("unknown dataset flavor {other:?}"))),
        }
    }
}

/// One sequence's worth of inputs: detections plus whichever side channels
/// exist (ground truth, IPTs, appearance, images).
#[derive(Debug, Clone)]
pub struct SequenceBundle<T> {
    pub detections: DetectionSet<T>,
    pub gt: Option<Vec<LabeledBox<T>>>,
    pub ipts: Option<IptStore<T>>,
    pub hists: Option<HistogramStore<T>>,
    /// Per-frame image paths (PPM), one per frame when present.
    pub images: Option<Vec<PathBuf>>,
    pub fps: T,
    /// Frame count; all indices lie in `0..frames`.
    pub frames: usize,
    pub flavor: Flavor,
}

impl<T: Real> SequenceBundle<T> {
    /// New bundle around a detection set; frame count from its last frame.
    pub fn new(detections: DetectionSet<T>, fps: T, flavor: Flavor) -> Self {
        let frames = detections.max_frame().map_or(0, |f| f + 1);
        SequenceBundle {
            detections,
            gt: None,
            ipts: None,
            hists: None,
            images: None,
            fps,
            frames,
            flavor,
        }
    }

    /// Frame-range and rate invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > T::zero()) || !self.fps.is_finite() {
            return Err(Error::InvalidInput(format!("fps must be > 0, got {}", self.fps)));
        }
        let beyond = |f: usize| f >= self.frames;
        if self.detections.iter().any(|d| beyond(d.frame)) {
            return Err(Error::InvalidInput(format!(
                "detection beyond the declared {} frames",
                self.frames
            )));
        }
        if let Some(gt) = &self.gt {
            if gt.iter().any(|r| beyond(r.frame)) {
                return Err(Error::InvalidInput(format!(
                    "ground-truth box beyond the declared {} frames",
                    self.frames
                )));
            }
        }
        if let Some(ipts) = &self.ipts {
            if ipts.iter().any(|t| beyond(t.last_frame())) {
                return Err(Error::InvalidInput(format!(
                    "ipt sample beyond the declared {} frames",
                    self.frames
                )));
            }
        }
        if let Some(images) = &self.images {
            if images.len() != self.frames {
                return Err(Error::InvalidInput(format!(
                    "{} image paths for {} frames",
                    images.len(),
                    self.frames
                )));
            }
        }
        Ok(())
    }
}

fn detections_file(flavor: Flavor) -> &'static str {
    match flavor {
        Flavor::Kitti => "detections.txt",
        Flavor::Mot | Flavor::Synth => "detections.csv",
    }
}

fn gt_file(flavor: Flavor) -> &'static str {
    match flavor {
        Flavor::Kitti => "gt.txt",
        Flavor::Mot | Flavor::Synth => "gt.csv",
    }
}

/// Writes a bundle into `dir`: the part files plus a `manifest.cfg` naming
/// them. Image files are copied into `dir/images/` unless already there.
pub fn write_bundle<T: Real>(dir: &Path, bundle: &SequenceBundle<T>) -> Result<()> {
    bundle.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut manifest = format!(
        "flavor={}\nfps={:.6}\nframes={}\n",
        bundle.flavor, bundle.fps, bundle.frames
    );

    let det_name = detections_file(bundle.flavor);
    match bundle.flavor {
        Flavor::Kitti => write_kitti_detections(&dir.join(det_name), &bundle.detections, "Car")?,
        Flavor::Mot | Flavor::Synth => {
            write_mot_detections(&dir.join(det_name), &bundle.detections)?
        }
    }
    writeln!(manifest, "detections={det_name}").expect("string formatting");

    if let Some(gt) = &bundle.gt {
        let name = gt_file(bundle.flavor);
        match bundle.flavor {
            Flavor::Kitti => write_kitti_tracks(&dir.join(name), gt, "Car")?,
            Flavor::Mot | Flavor::Synth => write_mot_tracks(&dir.join(name), gt)?,
        }
        writeln!(manifest, "gt={name}").expect("string formatting");
    }
    if let Some(ipts) = &bundle.ipts {
        write_ipt(ipts, &dir.join("ipts.csv"))?;
        manifest.push_str("ipts=ipts.csv\n");
    }
    if let Some(hists) = &bundle.hists {
        write_histograms(hists, &dir.join("histograms.csv"))?;
        manifest.push_str("histograms=histograms.csv\n");
    }
    if let Some(images) = &bundle.images {
        let img_dir = dir.join("images");
        fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        for (frame, src) in images.iter().enumerate() {
            let dst = img_dir.join(format!("{frame:06}.ppm"));
            if src != &dst {
                fs::copy(src, &dst).map_err(|e| Error::io(src, e))?;
            }
        }
        manifest.push_str("images=images\n");
    }

    write_text(&dir.join("manifest.cfg"), &manifest)
}

/// Reads a bundle written by [`write_bundle`] (or assembled by hand around
/// the same manifest keys).
pub fn read_bundle<T: Real>(dir: &Path) -> Result<SequenceBundle<T>> {
    let manifest_path = dir.join("manifest.cfg");
    let mut flavor: Option<Flavor> = None;
    let mut fps: Option<T> = None;
    let mut frames: Option<usize> = None;
    let mut det_name: Option<String> = None;
    let mut gt_name: Option<String> = None;
    let mut ipt_name: Option<String> = None;
    let mut hist_name: Option<String> = None;
    let mut images_name: Option<String> = None;
    for (key, value, line_no) in read_kv(&manifest_path)? {
        match key.as_str() {
            "flavor" => flavor = Some(value.parse()?),
            "fps" => {
                let v: f64 = field(&manifest_path, line_no, &value, "fps")?;
                fps = Some(T::of(v));
            }
            "frames" => frames = Some(field(&manifest_path, line_no, &value, "frames")?),
            "detections" => det_name = Some(value),
            "gt" => gt_name = Some(value),
            "ipts" => ipt_name = Some(value),
            "histograms" => hist_name = Some(value),
            "images" => images_name = Some(value),
            other => {
                return Err(Error::parse(
                    &manifest_path,
                    line_no,
                    format!("unknown manifest key {other:?}"),
                ))
            }
        }
    }
    let flavor = flavor
        .ok_or_else(|| Error::parse(&manifest_path, 1, "manifest is missing \"flavor\""))?;
    let fps =
        fps.ok_or_else(|| Error::parse(&manifest_path, 1, "manifest is missing \"fps\""))?;
    let frames = frames
        .ok_or_else(|| Error::parse(&manifest_path, 1, "manifest is missing \"frames\""))?;
    let det_name = det_name
        .ok_or_else(|| Error::parse(&manifest_path, 1, "manifest is missing \"detections\""))?;

    let det_path = dir.join(&det_name);
    let table: TrackTable<T> = match flavor {
        Flavor::Kitti => read_kitti(&det_path, None)?,
        Flavor::Mot | Flavor::Synth => read_mot(&det_path)?,
    };
    let mut bundle = SequenceBundle {
        detections: table.detections,
        gt: None,
        ipts: None,
        hists: None,
        images: None,
        fps,
        frames,
        flavor,
    };
    if let Some(name) = gt_name {
        let path = dir.join(&name);
        let table: TrackTable<T> = match flavor {
            Flavor::Kitti => read_kitti(&path, None)?,
            Flavor::Mot | Flavor::Synth => read_mot(&path)?,
        };
        bundle.gt = Some(table.tracks);
    }
    if let Some(name) = ipt_name {
        bundle.ipts = Some(parse_ipt(&dir.join(&name))?);
    }
    if let Some(name) = hist_name {
        bundle.hists = Some(read_histograms(&dir.join(&name))?);
    }
    if let Some(name) = images_name {
        let img_dir = dir.join(&name);
        let mut paths = Vec::with_capacity(frames);
        for frame in 0..frames {
            let p = img_dir.join(format!("{frame:06}.ppm"));
            if !p.exists() {
                return Err(Error::InvalidInput(format!(
                    "bundle lists images but frame {frame} has none at {}",
                    p.display()
                )));
            }
            paths.push(p);
        }
        bundle.images = Some(paths);
    }
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use tempfile::tempdir;

    fn q6(v: f64) -> f64 {
        (v * 1e6).round() / 1e6
    }

    #[test]
    fn mot_spec_row_and_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dets.csv");
        fs::write(&path, "1,-1,10,20,30,40,0.9,-1,-1,-1\n3,7,1,2,3,4,1,-1,-1,-1\n").unwrap();
        let table: TrackTable<f64> = read_mot(&path).unwrap();
        assert_eq!(table.detections.len(), 1);
        let d = table.detections.by_id(0);
        assert_eq!(d.frame, 0);
        assert_eq!((d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h), (10.0, 20.0, 30.0, 40.0));
        assert_relative_eq!(d.score, 0.9);
        assert_eq!(table.tracks, vec![LabeledBox {
            track_id: 7,
            frame: 2,
            bbox: BoundingBox::new(1.0, 2.0, 3.0, 4.0)
        }]);

        // Round trip both kinds.
        let det_path = dir.path().join("out.csv");
        write_mot_detections(&det_path, &table.detections).unwrap();
        let again: TrackTable<f64> = read_mot(&det_path).unwrap();
        assert_eq!(
            again.detections.iter().copied().collect::<Vec<_>>(),
            table.detections.iter().copied().collect::<Vec<_>>()
        );
        let trk_path = dir.path().join("trk.csv");
        write_mot_tracks(&trk_path, &table.tracks).unwrap();
        assert_eq!(read_mot::<f64>(&trk_path).unwrap().tracks, table.tracks);
    }

    #[test]
    fn mot_rejects_bad_rows() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "1,-1,10,20,30,40,0.9,-1,-1,-1\n2,-1,1,2,3\n").unwrap();
        match read_mot::<f64>(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected a parse error, got {other:?}"),
        }
        fs::write(&path, "").unwrap();
        let table: TrackTable<f64> = read_mot(&path).unwrap();
        assert_eq!(table.detections.len(), 0);
        assert!(table.tracks.is_empty());
        fs::write(&path, "0,-1,1,2,3,4,1\n").unwrap();
        assert!(read_mot::<f64>(&path).is_err(), "frame 0 is invalid in 1-based MOT files");
    }

    #[test]
    fn kitti_parses_filters_and_skips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("labels.txt");
        let row = |frame: usize, id: i64, class: &str, score: &str| {
            format!("{frame} {id} {class} 0 0 0.0 0.0 0.0 10.0 20.0 -1 -1 -1 -1000 -1000 -1000 -10{score}\n")
        };
        let mut text = String::new();
        text.push_str(&row(0, -1, "Car", " -0.25"));
        text.push_str(&row(0, -1, "Pedestrian", " 0.5"));
        text.push_str(&row(1, 4, "Car", ""));
        text.push_str(&row(1, 0, "DontCare", ""));
        text.push_str(&row(1, 1, "Spaceship", ""));
        fs::write(&path, &text).unwrap();

        let table: TrackTable<f64> = read_kitti(&path, None).unwrap();
        assert_eq!(table.detections.len(), 2, "DontCare and unknown types are dropped");
        let d = table.detections.by_id(0);
        assert_eq!((d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h), (0.0, 0.0, 10.0, 20.0));
        assert_eq!(d.score, -0.25, "negative scores are retained");
        assert_eq!(table.tracks.len(), 1);
        assert_eq!(table.tracks[0].track_id, 4);

        let cars: TrackTable<f64> = read_kitti(&path, Some(&["Car".to_string()])).unwrap();
        assert_eq!(cars.detections.len(), 1);
        assert_eq!(cars.detections.by_id(0).score, -0.25);

        // Round trip tracks through the writer.
        let out = dir.path().join("tracks.txt");
        write_kitti_tracks(&out, &table.tracks, "Car").unwrap();
        assert_eq!(read_kitti::<f64>(&out, None).unwrap().tracks, table.tracks);
    }

    #[test]
    fn ipt_spec_row_contiguity_and_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ipts.csv");
        fs::write(&path, "7,3,100.5,200.25\n7,4,101.5,201.25\n").unwrap();
        let store: IptStore<f64> = parse_ipt(&path).unwrap();
        assert_eq!(store.get(7).unwrap().pos(3), Some((100.5, 200.25)));

        fs::write(&path, "7,3,1,1\n7,5,2,2\n").unwrap();
        assert!(parse_ipt::<f64>(&path).is_err(), "frame gap inside one id");

        // Random store, 6-decimal values: exact round trip.
        let mut rng = StdRng::seed_from_u64(5);
        let mut store = IptStore::<f64>::new();
        for id in 0..20 {
            let start = rng.random_range(0..30);
            let n = rng.random_range(1..40);
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    (q6(rng.random_range(-50.0..2000.0)), q6(rng.random_range(-50.0..2000.0)))
                })
                .collect();
            store.insert_track(id * 3, start, pts).unwrap();
        }
        let out = dir.path().join("rt.csv");
        write_ipt(&store, &out).unwrap();
        let back: IptStore<f64> = parse_ipt(&out).unwrap();
        assert_eq!(back.len(), store.len());
        for t in store.iter() {
            let b = back.get(t.id).unwrap();
            assert_eq!(b.start(), t.start());
            assert_eq!(b.samples().collect::<Vec<_>>(), t.samples().collect::<Vec<_>>());
        }
    }

    #[test]
    fn histograms_round_trip_and_validate() {
        let dir = tempdir().unwrap();
        let mut store = HistogramStore::<f64>::new();
        let mut counts = vec![0.0; HIST_LEN];
        counts[0] = 1.0;
        counts[3] = 3.0;
        counts[16] = 2.0;
        counts[40] = 2.0;
        store.insert(9, ColorHistogram::from_counts(counts).unwrap());
        let path = dir.path().join("h.csv");
        write_histograms(&store, &path).unwrap();
        let back: HistogramStore<f64> = read_histograms(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.get(9).unwrap(), store.get(9).unwrap());

        fs::write(&path, format!("3{}\n", ",0.5".repeat(HIST_LEN))).unwrap();
        assert!(read_histograms::<f64>(&path).is_err(), "layers must sum to one");
    }

    #[test]
    fn model_round_trip_preserves_grid_and_gaps() {
        let dir = tempdir().unwrap();
        let mut model = AlfdModel::<f64>::new(4);
        let mut rng = StdRng::seed_from_u64(2);
        for gap in [1usize, 5, 20] {
            let w: Vec<f64> =
                (0..descriptor_len(4)).map(|_| q6(rng.random_range(-1.0..1.0))).collect();
            model.set_weights(gap, w).unwrap();
        }
        let path = dir.path().join("model.txt");
        write_model(&model, &path).unwrap();
        let back: AlfdModel<f64> = read_model(&path).unwrap();
        assert_eq!(back.grid_n(), 4);
        assert_eq!(back.trained_gaps(), vec![1, 5, 20]);
        for gap in [1usize, 5, 20] {
            assert_eq!(back.weights_for(gap).unwrap(), model.weights_for(gap).unwrap());
        }
        assert!(back.weights_for(2).is_none());
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let dir = tempdir().unwrap();
        let mut cfg = Config::<f64>::default();
        cfg.tau = 7;
        cfg.neighbor_set = vec![1, 3, 9];
        cfg.eta = 0.95;
        cfg.workers = 4;
        cfg.solver_budget = 123_456_789_012;
        let path = dir.path().join("cfg.txt");
        write_config(&cfg, &path).unwrap();
        let back: Config<f64> = read_config(&path).unwrap();
        assert_eq!(back, cfg);

        fs::write(&path, "tau=5\nbetaa=3\n").unwrap();
        match read_config::<f64>(&path) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("betaa"), "{msg}");
            }
            other => panic!("expected unknown-key parse error, got {other:?}"),
        }

        // Comments and blanks are fine; invalid values fail validation.
        fs::write(&path, "# comment\n\ntau=0\n").unwrap();
        assert!(matches!(read_config::<f64>(&path), Err(Error::Config(_))));
    }

    #[test]
    fn ppm_round_trip_and_header_quirks() {
        let dir = tempdir().unwrap();
        let mut img = RgbImage::new(3, 2);
        for y in 0..2 {
            for x in 0..3 {
                img.set_pixel(x, y, ((x * 40) as u8, (y * 90) as u8, 200));
            }
        }
        let path = dir.path().join("img.ppm");
        write_ppm(&img, &path).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!((back.width, back.height), (3, 2));
        assert_eq!(back.raw(), img.raw());

        // Comments in the header are legal PPM.
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        fs::write(&path, &bytes).unwrap();
        let img = read_ppm(&path).unwrap();
        assert_eq!(img.pixel(1, 0), (4, 5, 6));

        fs::write(&path, b"P5\n1 1\n255\n\0").unwrap();
        assert!(read_ppm(&path).is_err());
        fs::write(&path, b"P6\n4 4\n255\n\0\0\0").unwrap();
        assert!(read_ppm(&path).is_err(), "truncated raster");
    }

    #[test]
    fn bundle_round_trip_with_all_parts() {
        let dir = tempdir().unwrap();
        let mut dets = DetectionSet::<f64>::new();
        for f in 0..3usize {
            dets.push(Detection {
                id: f,
                frame: f,
                bbox: BoundingBox::new(q6(1.5 + f as f64), 2.0, 10.0, 12.0),
                score: q6(0.25 + 0.1 * f as f64),
            })
            .unwrap();
        }
        let mut bundle = SequenceBundle::new(dets, 10.0, Flavor::Synth);
        bundle.gt = Some(vec![
            LabeledBox { track_id: 1, frame: 0, bbox: BoundingBox::new(1.0, 2.0, 10.0, 12.0) },
            LabeledBox { track_id: 1, frame: 1, bbox: BoundingBox::new(2.0, 2.0, 10.0, 12.0) },
        ]);
        let mut ipts = IptStore::new();
        ipts.insert_track(0, 0, vec![(5.0, 5.0), (6.0, 5.0), (7.0, 5.0)]).unwrap();
        bundle.ipts = Some(ipts);
        let mut hists = HistogramStore::new();
        let mut counts = vec![0.0; HIST_LEN];
        counts[2] = 1.0;
        counts[20] = 1.0;
        hists.insert(0, ColorHistogram::from_counts(counts).unwrap());
        bundle.hists = Some(hists);

        let img = RgbImage::new(4, 4);
        let img_src = dir.path().join("src.ppm");
        write_ppm(&img, &img_src).unwrap();
        bundle.images = Some(vec![img_src.clone(), img_src.clone(), img_src.clone()]);

        let bdir = dir.path().join("bundle");
        write_bundle(&bdir, &bundle).unwrap();
        let back: SequenceBundle<f64> = read_bundle(&bdir).unwrap();
        assert_eq!(back.flavor, Flavor::Synth);
        assert_eq!(back.frames, 3);
        assert_eq!(back.fps, 10.0);
        assert_eq!(
            back.detections.iter().copied().collect::<Vec<_>>(),
            bundle.detections.iter().copied().collect::<Vec<_>>()
        );
        assert_eq!(back.gt, bundle.gt);
        assert_eq!(back.ipts.as_ref().unwrap().len(), 1);
        assert_eq!(back.hists.as_ref().unwrap().len(), 1);
        let images = back.images.unwrap();
        assert_eq!(images.len(), 3);
        assert!(images.iter().all(|p| p.exists()));

        // Unknown manifest keys are rejected.
        let manifest = bdir.join("manifest.cfg");
        let mut text = fs::read_to_string(&manifest).unwrap();
        text.push_str("mystery=1\n");
        fs::write(&manifest, text).unwrap();
        assert!(read_bundle::<f64>(&bdir).is_err());
    }

    #[test]
    fn kitti_flavor_bundle_uses_kitti_files() {
        let dir = tempdir().unwrap();
        let mut dets = DetectionSet::<f64>::new();
        dets.push(Detection {
            id: 0,
            frame: 0,
            bbox: BoundingBox::new(0.0, 0.0, 10.0, 20.0),
            score: -0.5,
        })
        .unwrap();
        let bundle = SequenceBundle::new(dets, 10.0, Flavor::Kitti);
        let bdir = dir.path().join("kb");
        write_bundle(&bdir, &bundle).unwrap();
        assert!(bdir.join("detections.txt").exists());
        let back: SequenceBundle<f64> = read_bundle(&bdir).unwrap();
        assert_eq!(back.detections.by_id(0).score, -0.5);
    }
}
