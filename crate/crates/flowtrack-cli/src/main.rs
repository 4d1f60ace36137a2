//! Command-line front end for the tracking engine.
//!
//! Subcommands: `track` (near-online tracker), `baseline-hm` (frame-by-frame
//! Hungarian baseline), `learn-weights` (descriptor training), `ablate`
//! (affinity-metric ROC comparison), `eval` (CLEAR MOT scoring) and `synth`
//! (synthetic sequence generation). All file formats are the plain-text ones
//! implemented in `flowtrack::io`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use flowtrack::alfd::{accumulate_votes, descriptor_len, weights_from_votes};
use flowtrack::io::{self, Flavor, SequenceBundle, TrackTable};
use flowtrack::metrics::{affinity_ablation, clear_mot, AffinityMetric};
use flowtrack::synth::{self, ScenarioSpec};
use flowtrack::{
    AlfdModel, Config, Detection, HistogramStore, IptStore, LabeledBox, Scalar, Tracker,
};

/// `outln!` that tolerates a closed stdout (e.g. piping into `head`).
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(
    name = "flowtrack",
    version,
    about = "Near-online multi-target tracking on aggregated local flow descriptors",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the near-online tracker over one sequence
    Track(TrackArgs),
    /// Run the frame-by-frame Hungarian baseline over one sequence
    BaselineHm(TrackArgs),
    /// Learn per-gap descriptor weights from sequences with ground truth
    LearnWeights(LearnWeightsArgs),
    /// Compare affinity metrics on labeled pairs: ROC curves and AUC
    Ablate(AblateArgs),
    /// Score a track file against ground truth (CLEAR MOT)
    Eval(EvalArgs),
    /// Generate a synthetic sequence bundle from a scenario file
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrackArgs {
    /// Sequence bundle directory (contains manifest.cfg); alternative to --dets/--ipts
    #[arg(long, value_name = "DIR", conflicts_with_all = ["dets", "ipts", "hists"])]
    bundle: Option<PathBuf>,
    /// Detection file: KITTI when it ends in .txt, MOT CSV otherwise
    #[arg(long, value_name = "FILE", requires = "ipts")]
    dets: Option<PathBuf>,
    /// Interest-point trajectory CSV
    #[arg(long, value_name = "FILE")]
    ipts: Option<PathBuf>,
    /// Appearance histogram CSV
    #[arg(long, value_name = "FILE")]
    hists: Option<PathBuf>,
    /// Trained affinity model (required for track; baseline-hm ignores the weights)
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Engine configuration, flat key=value; defaults apply when omitted
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output track file, written in the input dataset's flavor
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Override the output flavor (KITTI | MOT | SYNTH); with --dets it also picks the parser
    #[arg(long, value_name = "FLAVOR")]
    flavor: Option<String>,
    /// Write Kalman-smoothed boxes instead of raw associated detections
    #[arg(long)]
    smooth: bool,
    /// Override the configured worker-thread count (0 = one per core)
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

#[derive(Args)]
struct LearnWeightsArgs {
    /// Training bundle directory with ground truth and IPTs (repeat per sequence)
    #[arg(long = "bundle", value_name = "DIR", required = true)]
    bundles: Vec<PathBuf>,
    /// Engine configuration; supplies the frame gaps and grid size
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Frame gaps to train, comma separated (defaults to the configured neighbor set)
    #[arg(long, value_name = "GAPS", value_delimiter = ',')]
    gaps: Vec<usize>,
    /// Output model file
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// Bundle directory with detections, ground truth and IPTs
    #[arg(long, value_name = "DIR")]
    bundle: PathBuf,
    /// Trained affinity model file
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Engine configuration (lambda and the default gaps)
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Frame gaps to evaluate, comma separated (defaults to the configured neighbor set)
    #[arg(long, value_name = "GAPS", value_delimiter = ',')]
    deltas: Vec<usize>,
    /// Directory that receives one ROC CSV per (metric, gap)
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth track file, or a bundle directory with a gt part
    #[arg(long, value_name = "PATH")]
    gt: PathBuf,
    /// Hypothesis track file to score
    #[arg(long, value_name = "FILE")]
    tracks: PathBuf,
    /// IoU gate below which a box pair cannot match
    #[arg(long, value_name = "IOU", default_value_t = 0.5)]
    iou: Scalar,
    /// Force the file flavor (KITTI | MOT | SYNTH) instead of guessing by extension
    #[arg(long, value_name = "FLAVOR")]
    flavor: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario file, flat key=value
    #[arg(long, value_name = "FILE")]
    scenario: PathBuf,
    /// Output bundle directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Also render flat-color PPM frames into the bundle
    #[arg(long)]
    render: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Engine {
    Nomt,
    Hungarian,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Track(args) => run_track(args, Engine::Nomt),
        Command::BaselineHm(args) => run_track(args, Engine::Hungarian),
        Command::LearnWeights(args) => run_learn(args),
        Command::Ablate(args) => run_ablate(args),
        Command::Eval(args) => run_eval(args),
        Command::Synth(args) => run_synth(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// shared input plumbing

/// Flavor by file extension: `.txt` reads as KITTI, anything else as MOT CSV.
fn flavor_for(path: &Path) -> Flavor {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("txt") => Flavor::Kitti,
        _ => Flavor::Mot,
    }
}

fn parse_flavor_flag(flag: &Option<String>) -> Result<Option<Flavor>> {
    flag.as_deref().map(|v| v.parse::<Flavor>().map_err(Into::into)).transpose()
}

fn read_table(path: &Path, flavor: Flavor) -> Result<TrackTable<Scalar>> {
    let table = match flavor {
        Flavor::Kitti => io::read_kitti(path, None),
        Flavor::Mot | Flavor::Synth => io::read_mot(path),
    };
    table.with_context(|| format!("reading {}", path.display()))
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        Some(p) => io::read_config(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(Config::default()),
    }
}

struct Sequence {
    dets: flowtrack::DetectionSet,
    ipts: IptStore,
    hists: Option<HistogramStore>,
    flavor: Flavor,
    frames: usize,
    fps: Option<Scalar>,
}

fn load_sequence(args: &TrackArgs) -> Result<Sequence> {
    if let Some(dir) = &args.bundle {
        let bundle: SequenceBundle<Scalar> = io::read_bundle(dir)
            .with_context(|| format!("reading bundle {}", dir.display()))?;
        let ipts = bundle.ipts.ok_or_else(|| {
            anyhow!("bundle {} has no interest points; the tracker requires them", dir.display())
        })?;
        return Ok(Sequence {
            dets: bundle.detections,
            ipts,
            hists: bundle.hists,
            flavor: bundle.flavor,
            frames: bundle.frames,
            fps: Some(bundle.fps),
        });
    }
    let (Some(dets_path), Some(ipts_path)) = (&args.dets, &args.ipts) else {
        bail!("missing input: pass either --bundle DIR or both --dets FILE and --ipts FILE (see --help)");
    };
    let flavor = parse_flavor_flag(&args.flavor)?.unwrap_or_else(|| flavor_for(dets_path));
    let table = read_table(dets_path, flavor)?;
    if table.detections.is_empty() {
        bail!("{} contains no detection rows", dets_path.display());
    }
    if !table.tracks.is_empty() {
        log::warn!(
            "{} also carries {} labeled track rows; they are ignored",
            dets_path.display(),
            table.tracks.len()
        );
    }
    let ipts = io::parse_ipt(ipts_path)
        .with_context(|| format!("reading interest points {}", ipts_path.display()))?;
    let hists = args
        .hists
        .as_ref()
        .map(|p| {
            io::read_histograms(p).with_context(|| format!("reading histograms {}", p.display()))
        })
        .transpose()?;
    let frames = table.detections.max_frame().map_or(0, |f| f + 1);
    Ok(Sequence { dets: table.detections, ipts, hists, flavor, frames, fps: None })
}

fn write_tracks(path: &Path, rows: &[LabeledBox], flavor: Flavor) -> Result<()> {
    match flavor {
        Flavor::Kitti => io::write_kitti_tracks(path, rows, "Car"),
        Flavor::Mot | Flavor::Synth => io::write_mot_tracks(path, rows),
    }
    .with_context(|| format!("writing {}", path.display()))
}

/// All-zero weights over the configured gaps: lets the Hungarian baseline run
/// without a trained model (it scores by overlap, not by the descriptor).
fn zero_model(cfg: &Config) -> AlfdModel {
    let mut model = AlfdModel::new(cfg.grid_n);
    let len = descriptor_len(cfg.grid_n);
    for &gap in &cfg.neighbor_set {
        model.set_weights(gap, vec![0.0; len]).expect("fresh model accepts every gap");
    }
    model
}

// ---------------------------------------------------------------------------
// track / baseline-hm

fn run_track(args: TrackArgs, engine: Engine) -> Result<()> {
    let seq = load_sequence(&args)?;
    let mut cfg = load_config(&args.config)?;
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    if let Some(fps) = seq.fps {
        cfg.fps = fps;
    }

    let model = match (&args.model, engine) {
        (Some(path), _) => io::read_model(path)
            .with_context(|| format!("reading model {}", path.display()))?,
        (None, Engine::Hungarian) => zero_model(&cfg),
        (None, Engine::Nomt) => {
            bail!("missing input: --model FILE is required for `track` (see --help)")
        }
    };

    let mut by_frame: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
    for det in seq.dets.iter() {
        by_frame.entry(det.frame).or_default().push(*det);
    }

    let mut tracker = Tracker::new(cfg, model, seq.ipts)?;
    if let Some(hists) = seq.hists {
        tracker = tracker.with_histograms(hists);
    }

    let frames = seq.frames.max(1);
    for t in 0..frames {
        let batch = by_frame.remove(&t).unwrap_or_default();
        match engine {
            Engine::Nomt => {
                tracker.step(t, batch)?;
            }
            Engine::Hungarian => tracker.step_hm(t, batch)?,
        }
    }

    let rows = if args.smooth { tracker.smoothed_output() } else { tracker.output() };
    let out_flavor = parse_flavor_flag(&args.flavor)?.unwrap_or(seq.flavor);
    write_tracks(&args.out, &rows, out_flavor)?;

    let n_tracks = rows.iter().map(|r| r.track_id).collect::<BTreeSet<_>>().len();
    outln!(
        "{frames} frames -> {} boxes in {n_tracks} tracks -> {}",
        rows.len(),
        args.out.display()
    );
    if engine == Engine::Nomt {
        outln!("{}", tracker.run_log().summary());
        let lat = tracker.latency_report();
        if lat.count > 0 {
            outln!(
                "association latency: mean {:.2} frames, std {:.2}, max {}, \
                 zero-latency {:.1}% over {} detections",
                lat.mean,
                lat.std,
                lat.max,
                lat.zero_fraction * 100.0,
                lat.count
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// learn-weights

fn run_learn(args: LearnWeightsArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let gaps: Vec<usize> = if args.gaps.is_empty() {
        cfg.neighbor_set.clone()
    } else {
        let mut gaps = args.gaps.clone();
        gaps.sort_unstable();
        gaps.dedup();
        if gaps.first() == Some(&0) {
            bail!("frame gaps must be >= 1");
        }
        gaps
    };
    if gaps.is_empty() {
        bail!("no frame gaps to train: the neighbor set is empty");
    }

    // One thread per training sequence; results are merged in argument order
    // so the written model never depends on scheduling.
    type Votes = Vec<(Vec<Scalar>, Vec<Scalar>)>; // per gap: (signed, absolute)
    let per_bundle: Vec<Votes> = thread::scope(|scope| {
        let handles: Vec<_> = args
            .bundles
            .iter()
            .map(|dir| {
                let gaps = &gaps;
                let grid_n = cfg.grid_n;
                scope.spawn(move || -> Result<Votes> {
                    let bundle: SequenceBundle<Scalar> = io::read_bundle(dir)
                        .with_context(|| format!("reading bundle {}", dir.display()))?;
                    let gt = bundle.gt.as_deref().ok_or_else(|| {
                        anyhow!("bundle {} has no ground truth to learn from", dir.display())
                    })?;
                    let ipts = bundle.ipts.as_ref().ok_or_else(|| {
                        anyhow!("bundle {} has no interest points", dir.display())
                    })?;
                    gaps.iter()
                        .map(|&gap| {
                            accumulate_votes(&bundle.detections, gt, ipts, gap, grid_n)
                                .map_err(Into::into)
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect::<Result<Vec<Votes>>>()
    })?;

    let len = descriptor_len(cfg.grid_n);
    let mut model = AlfdModel::new(cfg.grid_n);
    for (k, &gap) in gaps.iter().enumerate() {
        let mut num = vec![0.0; len];
        let mut den = vec![0.0; len];
        for votes in &per_bundle {
            for i in 0..len {
                num[i] += votes[k].0[i];
                den[i] += votes[k].1[i];
            }
        }
        if den.iter().all(|&d| d == 0.0) {
            log::warn!("no labeled detection pairs at frame gap {gap}; its weights are all zero");
        }
        let weights = weights_from_votes(&num, &den);
        let voted = weights.iter().filter(|&&w| w != 0.0).count();
        outln!("gap {gap:>3}: {voted} of {len} bins received votes");
        model.set_weights(gap, weights)?;
    }
    io::write_model(&model, &args.out)
        .with_context(|| format!("writing model {}", args.out.display()))?;
    outln!(
        "trained {} gaps from {} sequences -> {}",
        gaps.len(),
        args.bundles.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate

fn metric_slug(metric: AffinityMetric) -> &'static str {
    match metric {
        AffinityMetric::Alfd => "alfd",
        AffinityMetric::NDist2 => "ndist2",
        AffinityMetric::HistIK => "histik",
    }
}

fn run_ablate(args: AblateArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let bundle: SequenceBundle<Scalar> = io::read_bundle(&args.bundle)
        .with_context(|| format!("reading bundle {}", args.bundle.display()))?;
    let gt = bundle.gt.as_deref().ok_or_else(|| {
        anyhow!("bundle {} has no ground truth to label pairs with", args.bundle.display())
    })?;
    let ipts = bundle
        .ipts
        .as_ref()
        .ok_or_else(|| anyhow!("bundle {} has no interest points", args.bundle.display()))?;
    let model = io::read_model(&args.model)
        .with_context(|| format!("reading model {}", args.model.display()))?;
    let deltas: Vec<usize> = if args.deltas.is_empty() {
        cfg.neighbor_set.clone()
    } else {
        let mut deltas = args.deltas.clone();
        deltas.sort_unstable();
        deltas.dedup();
        deltas
    };

    let curves = affinity_ablation(
        &bundle.detections,
        gt,
        ipts,
        bundle.hists.as_ref(),
        &model,
        &deltas,
        cfg.lambda,
    );
    if curves.is_empty() {
        bail!("no ROC curves could be computed: no labeled pairs of both classes at the requested gaps");
    }

    outln!("{:<8}{:>8}{:>10}{:>9}", "metric", "delta_t", "auc", "points");
    for curve in &curves {
        outln!(
            "{:<8}{:>8}{:>10.4}{:>9}",
            curve.metric.to_string(),
            curve.delta_t,
            curve.auc,
            curve.points.len()
        );
    }

    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for curve in &curves {
            let name = format!("roc_{}_dt{}.csv", metric_slug(curve.metric), curve.delta_t);
            let mut text = String::from("fpr,tpr\n");
            for &(fpr, tpr) in &curve.points {
                writeln!(text, "{fpr:.6},{tpr:.6}").expect("string formatting");
            }
            let path = dir.join(name);
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        outln!("wrote {} ROC files to {}", curves.len(), dir.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

fn read_track_rows(path: &Path, flavor: Option<Flavor>) -> Result<Vec<LabeledBox>> {
    if path.is_dir() {
        let bundle: SequenceBundle<Scalar> =
            io::read_bundle(path).with_context(|| format!("reading bundle {}", path.display()))?;
        return bundle
            .gt
            .ok_or_else(|| anyhow!("bundle {} has no ground truth", path.display()));
    }
    let table = read_table(path, flavor.unwrap_or_else(|| flavor_for(path)))?;
    if table.tracks.is_empty() {
        bail!("{} contains no labeled track rows", path.display());
    }
    if !table.detections.is_empty() {
        log::warn!(
            "{}: ignoring {} unlabeled detection rows",
            path.display(),
            table.detections.len()
        );
    }
    Ok(table.tracks)
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let flavor = parse_flavor_flag(&args.flavor)?;
    let gt = read_track_rows(&args.gt, flavor)?;
    let hyp = read_track_rows(&args.tracks, flavor)?;
    let report = clear_mot(&gt, &hyp, args.iou)?;
    outln!("{}", report.table());
    Ok(())
}

// ---------------------------------------------------------------------------
// synth

fn run_synth(args: SynthArgs) -> Result<()> {
    let spec: ScenarioSpec<Scalar> = synth::read_scenario(&args.scenario)
        .with_context(|| format!("reading scenario {}", args.scenario.display()))?;
    let mut bundle = synth::generate(&spec)?;
    if args.render {
        let images = synth::render_frames(&spec)?;
        let dir = args.out.join("images");
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut paths = Vec::with_capacity(images.len());
        for (frame, image) in images.iter().enumerate() {
            let path = dir.join(format!("{frame:06}.ppm"));
            io::write_ppm(image, &path)?;
            paths.push(path);
        }
        bundle.images = Some(paths);
    }
    io::write_bundle(&args.out, &bundle)
        .with_context(|| format!("writing bundle {}", args.out.display()))?;
    outln!(
        "generated {} frames, {} targets: {} detections, {} gt boxes, {} ipt tracks -> {}",
        bundle.frames,
        spec.n_targets,
        bundle.detections.len(),
        bundle.gt.as_ref().map_or(0, |g| g.len()),
        bundle.ipts.as_ref().map_or(0, |s| s.iter().count()),
        args.out.display()
    );
    Ok(())
}
