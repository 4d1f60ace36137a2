use std::collections::BTreeMap;
use std::path::Path;

use flowtrack::alfd::AffinityCache;
use flowtrack::appearance::KernelCache;
use flowtrack::hypo::{
    fit_predictor, generate_tracklets, hypotheses_for_target, new_target_sets, HypothesisSet,
    TargetRef, WindowAffinity,
};
use flowtrack::io;
use flowtrack::tracker::Tracker;
use flowtrack::types::{Config, Detection, Target};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let bundle_dir = &args[1];
    let model_path = &args[2];
    let f_lo: usize = args[3].parse().unwrap();
    let f_hi: usize = args[4].parse().unwrap();
    // internal target indices to report in detail (optional, default: all)
    let watch: Vec<usize> = args.get(5).map_or(Vec::new(), |s| {
        s.split(',').map(|v| v.parse().unwrap()).collect()
    });

    let bundle = io::read_bundle::<f64>(Path::new(bundle_dir)).unwrap();
    let model = io::read_model::<f64>(Path::new(model_path)).unwrap();
    let cfg = Config::default();
    let store = bundle.ipts.clone().expect("bundle has ipts");
    let affinities = AffinityCache::new();
    let _kernels = KernelCache::<f64>::new();

    let mut by_frame: BTreeMap<usize, Vec<Detection<f64>>> = BTreeMap::new();
    for det in bundle.detections.iter() {
        by_frame.entry(det.frame).or_default().push(*det);
    }
    let frames = 1 + by_frame.keys().next_back().copied().unwrap_or(0);

    let mut tracker =
        Tracker::new(cfg.clone(), model.clone(), bundle.ipts.clone().unwrap()).unwrap();
    if let Some(h) = bundle.hists.clone() {
        tracker = tracker.with_histograms(h);
    }
    tracker = tracker.record_graphs(true);

    for t in 0..frames {
        let pre_targets: Vec<Target> = tracker.targets().to_vec();
        let batch = by_frame.remove(&t).unwrap_or_default();
        let report = tracker.step(t, batch).unwrap();
        if t < f_lo || t > f_hi {
            continue;
        }

        // Reconstruct the sets the step used, from the pre-step state.
        let lo = t.saturating_sub(cfg.tau);
        let waff = WindowAffinity::build(
            tracker.detections(),
            lo,
            t,
            &model,
            &store,
            &affinities,
            &cfg,
        )
        .unwrap();
        let tracklets =
            generate_tracklets(tracker.detections(), &pre_targets, lo, t, &waff, &cfg);
        let horizon = t.saturating_sub(cfg.tau + cfg.t_active);
        let mut sets: Vec<HypothesisSet> = Vec::new();
        for (i, target) in pre_targets.iter().enumerate() {
            if !target.last_frame().is_some_and(|f| f >= horizon) {
                continue;
            }
            let predictor = fit_predictor(target, tracker.detections(), &cfg).unwrap();
            if let Some(set) = hypotheses_for_target(
                target,
                i,
                t,
                &tracklets,
                &predictor,
                tracker.detections(),
                &cfg,
            ) {
                sets.push(set);
            }
        }
        let news = new_target_sets(&tracklets, &sets, tracker.detections());
        sets.extend(news);

        // Affinity table among window dets inside the focus region, to see
        // what tracklet growth saw.
        if std::env::var("DBGX_AFF").is_ok() {
            let mut focus: Vec<(usize, usize, f64, f64)> = Vec::new();
            for f in lo..=t {
                for &id in tracker.detections().at_frame(f) {
                    let b = tracker.detections().by_id(id).bbox;
                    if (300.0..=400.0).contains(&b.x) && (60.0..=100.0).contains(&b.y) {
                        focus.push((id, f, b.x, b.y));
                    }
                }
            }
            focus.sort_by_key(|&(_, f, _, _)| f);
            println!("  focus dets:");
            for &(id, f, x, y) in &focus {
                println!("    id{id} f{f} ({x:.0},{y:.0})");
            }
            println!("  affinities (row -> col):");
            for &(a, fa, xa, _) in &focus {
                for &(b, fb, xb, _) in &focus {
                    if fb > fa {
                        if let Some(v) = waff.get(a, b) {
                            println!(
                                "    f{fa}({xa:.0}) -> f{fb}({xb:.0}): {v:+.4}"
                            );
                        }
                    }
                }
            }
        }

        let graph = report.graph.as_ref().expect("graphs recorded");
        println!(
            "== t={t} window=[{lo},{t}] tracklets={} sets={} graph_nodes={} energy={:.4}",
            tracklets.len(),
            sets.len(),
            graph.node_costs.len(),
            report.energy
        );
        if sets.len() != graph.node_costs.len() {
            println!("!! RECONSTRUCTION MISMATCH: set count");
            continue;
        }
        for (k, set) in sets.iter().enumerate() {
            if graph.node_costs[k].len() != set.hypotheses.len() {
                println!("!! node {k}: state count mismatch");
                continue;
            }
            let label = match set.target_ref {
                TargetRef::Existing(i) => format!(
                    "tgt#{} (internal idx {i}, last_f {:?})",
                    pre_targets[i].id,
                    pre_targets[i].last_frame()
                ),
                TargetRef::New(_) => "NEW".to_string(),
            };
            let chosen = report.states[k];
            let detail = match set.target_ref {
                TargetRef::Existing(i) => watch.is_empty() || watch.contains(&pre_targets[i].id),
                TargetRef::New(_) => !watch.is_empty(),
            };
            if !detail {
                continue;
            }
            println!("  node {k} [{label}] chosen={chosen}");
            for (s, hyp) in set.hypotheses.iter().enumerate() {
                let span = if hyp.is_empty() {
                    "EMPTY".to_string()
                } else {
                    let e = hyp.entries();
                    let xs: Vec<String> = e
                        .iter()
                        .map(|&(f, id)| {
                            let b = tracker.detections().by_id(id).bbox;
                            format!("{f}:({:.0},{:.0})", b.x, b.y)
                        })
                        .collect();
                    xs.join(" ")
                };
                let mark = if s == chosen { ">" } else { " " };
                println!(
                    "   {mark} s{s} cost {:+9.4}  {span}",
                    graph.node_costs[k][s]
                );
            }
        }
    }
}
