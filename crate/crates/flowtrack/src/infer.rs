//! MAP inference over the window CRF.
//!
//! One node per hypothesis set; node costs are the single-target
//! consistencies and edges carry the pairwise exclusion tables. The graph
//! decomposes into connected components that are solved independently:
//! singletons by argmin, larger components exactly by variable elimination
//! (min-fill order) with argmin traceback. Components whose elimination
//! cliques would exceed the configured entry budget fall back to iterated
//! conditional modes from the all-empty start, with a logged warning.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hypo::{HypothesisSet, PolyPredictor, TargetRef};
use crate::potentials::{node_cost, phi, EnergyContext};
use crate::scalar::Real;
use crate::types::Target;

/// Tie-break surcharge on every non-empty state of a prospective new target,
/// so that an exact energy tie between extending an existing identity and
/// minting a fresh one resolves to the existing identity. Small enough to
/// never override a real energy difference at the model's scale.
pub const NEW_TARGET_PENALTY: f64 = 1e-6;

/// Pairwise exclusion table between two nodes, row-major over the states of
/// `m` then `l`, with `m < l`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEdge<T> {
    pub m: usize,
    pub l: usize,
    pub table: Vec<T>,
}

impl<T: Real> GraphEdge<T> {
    #[inline]
    pub fn cost(&self, s_m: usize, s_l: usize, card_l: usize) -> T {
        self.table[s_m * card_l + s_l]
    }
}

/// The window CRF: per-node state costs plus sparse pairwise tables. Node
/// indices align with the hypothesis-set slice the graph was built from.
#[derive(Debug, Clone)]
pub struct AssociationGraph<T> {
    pub node_costs: Vec<Vec<T>>,
    pub edges: Vec<GraphEdge<T>>,
    adj: Vec<Vec<usize>>,
}

/// A joint state selection and its graph energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T> {
    pub states: Vec<usize>,
    pub energy: T,
}

impl<T: Real> AssociationGraph<T> {
    /// Assembles a graph, checking the structural invariants: ordered
    /// endpoints, no self-edges, table dimensions matching the state counts.
    pub fn new(node_costs: Vec<Vec<T>>, edges: Vec<GraphEdge<T>>) -> Self {
        let mut adj = vec![Vec::new(); node_costs.len()];
        for (idx, e) in edges.iter().enumerate() {
            assert!(e.m < e.l, "edge endpoints must be ordered and distinct");
            assert!(e.l < node_costs.len(), "edge endpoint out of range");
            assert_eq!(
                e.table.len(),
                node_costs[e.m].len() * node_costs[e.l].len(),
                "edge table must be |states(m)| x |states(l)|"
            );
            adj[e.m].push(idx);
            adj[e.l].push(idx);
        }
        AssociationGraph { node_costs, edges, adj }
    }

    pub fn len(&self) -> usize {
        self.node_costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_costs.is_empty()
    }

    /// Edge indices incident to `v`.
    pub fn incident(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    /// Energy of a full joint selection: node costs plus edge-table entries.
    pub fn evaluate(&self, states: &[usize]) -> T {
        assert_eq!(states.len(), self.len(), "one state per node");
        let mut e = T::zero();
        for (v, &s) in states.iter().enumerate() {
            e += self.node_costs[v][s];
        }
        for edge in &self.edges {
            e += edge.cost(states[edge.m], states[edge.l], self.node_costs[edge.l].len());
        }
        e
    }

    /// Plain-text rendering for offline inspection: one `node` line per node
    /// with its state costs, then one block per edge with the cost table,
    /// one row per state of the lower-indexed endpoint. Values use six
    /// decimal places.
    pub fn dump(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "nodes: {}", self.len());
        for (v, costs) in self.node_costs.iter().enumerate() {
            let cs: Vec<String> = costs.iter().map(|c| format!("{c:.6}")).collect();
            let _ = writeln!(out, "node {v}: {} states, costs: {}", costs.len(), cs.join(" "));
        }
        let _ = writeln!(out, "edges: {}", self.edges.len());
        for e in &self.edges {
            let (cm, cl) = (self.node_costs[e.m].len(), self.node_costs[e.l].len());
            let _ = writeln!(out, "edge {} -- {} ({cm}x{cl}):", e.m, e.l);
            for row in 0..cm {
                let cells: Vec<String> =
                    (0..cl).map(|col| format!("{:.6}", e.table[row * cl + col])).collect();
                let _ = writeln!(out, "  {}", cells.join(" "));
            }
        }
        out
    }
}

/// Builds the CRF from the window's hypothesis sets. Existing targets index
/// into `targets`/`predictors`; prospective new targets rank against an
/// empty history. Node costs are computed in parallel across sets, edge
/// tables across pairs; an edge is kept only if some state pair excludes.
pub fn build_graph<T: Real>(
    ctx: &EnergyContext<T>,
    sets: &[HypothesisSet],
    targets: &[Target],
    predictors: &[Option<PolyPredictor<T>>],
) -> AssociationGraph<T> {
    let fresh = Target::new(usize::MAX);
    let node_costs: Vec<Vec<T>> = sets
        .par_iter()
        .map(|set| {
            let (target, predictor) = match set.target_ref {
                TargetRef::Existing(i) => (&targets[i], predictors[i].as_ref()),
                TargetRef::New(_) => (&fresh, None),
            };
            let is_new = matches!(set.target_ref, TargetRef::New(_));
            set.hypotheses
                .iter()
                .enumerate()
                .map(|(k, h)| {
                    let mut c = node_cost(ctx, target, predictor, h);
                    if is_new && k > 0 {
                        c += T::of(NEW_TARGET_PENALTY);
                    }
                    c
                })
                .collect()
        })
        .collect();

    let pairs: Vec<(usize, usize)> =
        (0..sets.len()).flat_map(|m| (m + 1..sets.len()).map(move |l| (m, l))).collect();
    let edges: Vec<GraphEdge<T>> = pairs
        .par_iter()
        .filter_map(|&(m, l)| {
            let (hm, hl) = (&sets[m].hypotheses, &sets[l].hypotheses);
            let mut table = vec![T::zero(); hm.len() * hl.len()];
            let mut any = false;
            for (i, a) in hm.iter().enumerate() {
                for (j, b) in hl.iter().enumerate() {
                    let v = phi(ctx, a, b);
                    if v != T::zero() {
                        any = true;
                        table[i * hl.len() + j] = v;
                    }
                }
            }
            any.then_some(GraphEdge { m, l, table })
        })
        .collect();

    AssociationGraph::new(node_costs, edges)
}

/// Connected components of the graph, each ascending, ordered by smallest
/// member.
pub fn connected_components<T: Real>(graph: &AssociationGraph<T>) -> Vec<Vec<usize>> {
    let n = graph.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], v: usize) -> usize {
        let mut root = v;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = v;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for e in &graph.edges {
        let (a, b) = (find(&mut parent, e.m), find(&mut parent, e.l));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for v in 0..n {
        let root = find(&mut parent, v);
        groups.entry(root).or_default().push(v);
    }
    let mut comps: Vec<Vec<usize>> = groups.into_values().collect();
    comps.sort_unstable_by_key(|c| c[0]);
    comps
}

/// A cost table over an ascending subset of nodes, row-major with the last
/// scope variable fastest.
struct Factor<T> {
    scope: Vec<usize>,
    card: Vec<usize>,
    table: Vec<T>,
}

fn strides(card: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; card.len()];
    for i in (0..card.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * card[i + 1];
    }
    s
}

/// Exact MAP over one connected component by variable elimination in
/// min-fill order with argmin traceback. Errors if any intermediate joint
/// table would exceed `budget` entries.
pub fn solve_subgraph<T: Real>(
    graph: &AssociationGraph<T>,
    nodes: &[usize],
    budget: u128,
) -> Result<Vec<(usize, usize)>> {
    if let [v] = nodes {
        let costs = &graph.node_costs[*v];
        let mut best = 0;
        for (s, &c) in costs.iter().enumerate() {
            if c < costs[best] {
                best = s;
            }
        }
        return Ok(vec![(*v, best)]);
    }

    let card = |v: usize| graph.node_costs[v].len();
    let in_comp: BTreeSet<usize> = nodes.iter().copied().collect();

    let mut factors: Vec<Factor<T>> = Vec::new();
    for &v in nodes {
        factors.push(Factor {
            scope: vec![v],
            card: vec![card(v)],
            table: graph.node_costs[v].clone(),
        });
    }
    let mut adj: HashMap<usize, BTreeSet<usize>> =
        nodes.iter().map(|&v| (v, BTreeSet::new())).collect();
    for e in &graph.edges {
        if in_comp.contains(&e.m) {
            debug_assert!(in_comp.contains(&e.l), "edges never cross components");
            factors.push(Factor {
                scope: vec![e.m, e.l],
                card: vec![card(e.m), card(e.l)],
                table: e.table.clone(),
            });
            adj.get_mut(&e.m).unwrap().insert(e.l);
            adj.get_mut(&e.l).unwrap().insert(e.m);
        }
    }

    let order = min_fill_order(nodes, adj);

    struct Elim {
        var: usize,
        scope: Vec<usize>,
        strides: Vec<usize>,
        argmin: Vec<usize>,
    }
    let mut trace: Vec<Elim> = Vec::with_capacity(order.len());

    for &v in &order {
        let (with_v, rest): (Vec<Factor<T>>, Vec<Factor<T>>) =
            factors.into_iter().partition(|f| f.scope.binary_search(&v).is_ok());
        factors = rest;

        let mut scope: BTreeSet<usize> = BTreeSet::new();
        for f in &with_v {
            scope.extend(f.scope.iter().copied());
        }
        let scope: Vec<usize> = scope.into_iter().collect();
        let cards: Vec<usize> = scope.iter().map(|&u| card(u)).collect();
        let mut size: u128 = 1;
        for &c in &cards {
            size = size.checked_mul(c as u128).unwrap_or(u128::MAX);
        }
        if size > budget {
            return Err(Error::SolverBudget { required: size, budget });
        }

        // Sum the factors into the joint table over the union scope.
        let n = size as usize;
        let joint_strides = strides(&cards);
        let mut joint = vec![T::zero(); n];
        for f in &with_v {
            let f_strides = strides(&f.card);
            let map: Vec<usize> = scope
                .iter()
                .map(|u| f.scope.binary_search(u).map_or(0, |p| f_strides[p]))
                .collect();
            for (idx, slot) in joint.iter_mut().enumerate() {
                let mut fi = 0;
                for (k, &stride) in map.iter().enumerate() {
                    if stride != 0 {
                        fi += ((idx / joint_strides[k]) % cards[k]) * stride;
                    }
                }
                *slot += f.table[fi];
            }
        }

        // Minimize over v, keeping the argmin per reduced assignment.
        let pv = scope.binary_search(&v).expect("v is in its own clique");
        let (sv, cv) = (joint_strides[pv], cards[pv]);
        let block = sv * cv;
        let reduced_scope: Vec<usize> =
            scope.iter().copied().filter(|&u| u != v).collect();
        let reduced_cards: Vec<usize> = reduced_scope.iter().map(|&u| card(u)).collect();
        let rn = n / cv;
        let mut best = vec![T::infinity(); rn];
        let mut arg = vec![0usize; rn];
        for (idx, &val) in joint.iter().enumerate() {
            let s_v = (idx / sv) % cv;
            let r = (idx / block) * sv + idx % sv;
            if val < best[r] {
                best[r] = val;
                arg[r] = s_v;
            }
        }
        trace.push(Elim {
            var: v,
            scope: reduced_scope.clone(),
            strides: strides(&reduced_cards),
            argmin: arg,
        });
        factors.push(Factor { scope: reduced_scope, card: reduced_cards, table: best });
    }

    let mut state: HashMap<usize, usize> = HashMap::with_capacity(nodes.len());
    for e in trace.iter().rev() {
        let idx: usize =
            e.scope.iter().zip(&e.strides).map(|(&u, &stride)| state[&u] * stride).sum();
        state.insert(e.var, e.argmin[idx]);
    }
    Ok(nodes.iter().map(|&v| (v, state[&v])).collect())
}

/// Min-fill elimination order: repeatedly pick the node whose elimination
/// adds the fewest fill edges (ties: fewest neighbors, then lowest index).
fn min_fill_order(nodes: &[usize], mut adj: HashMap<usize, BTreeSet<usize>>) -> Vec<usize> {
    let mut remaining: BTreeSet<usize> = nodes.iter().copied().collect();
    let mut order = Vec::with_capacity(nodes.len());
    while !remaining.is_empty() {
        let mut best: Option<(usize, usize, usize)> = None;
        for &v in &remaining {
            let nb: Vec<usize> = adj[&v].iter().copied().collect();
            let mut fill = 0;
            for i in 0..nb.len() {
                for j in i + 1..nb.len() {
                    if !adj[&nb[i]].contains(&nb[j]) {
                        fill += 1;
                    }
                }
            }
            let key = (fill, nb.len(), v);
            if best.is_none_or(|b| key < b) {
                best = Some(key);
            }
        }
        let (_, _, v) = best.expect("remaining is non-empty");
        let nb: Vec<usize> = adj[&v].iter().copied().collect();
        for i in 0..nb.len() {
            for j in i + 1..nb.len() {
                adj.get_mut(&nb[i]).unwrap().insert(nb[j]);
                adj.get_mut(&nb[j]).unwrap().insert(nb[i]);
            }
        }
        for &u in &nb {
            adj.get_mut(&u).unwrap().remove(&v);
        }
        adj.remove(&v);
        remaining.remove(&v);
        order.push(v);
    }
    order
}

/// Iterated conditional modes over one component from the all-empty start:
/// sweep nodes in ascending order, greedily re-selecting each state given
/// its neighbors, until a full sweep changes nothing.
pub fn icm<T: Real>(graph: &AssociationGraph<T>, nodes: &[usize]) -> Vec<(usize, usize)> {
    const MAX_SWEEPS: usize = 100;
    let mut state: HashMap<usize, usize> = nodes.iter().map(|&v| (v, 0)).collect();
    for _ in 0..MAX_SWEEPS {
        let mut changed = false;
        for &v in nodes {
            let mut best_s = 0;
            let mut best_c = T::infinity();
            for s in 0..graph.node_costs[v].len() {
                let mut c = graph.node_costs[v][s];
                for &ei in graph.incident(v) {
                    let e = &graph.edges[ei];
                    let cl = graph.node_costs[e.l].len();
                    c += if e.m == v {
                        e.cost(s, state[&e.l], cl)
                    } else {
                        e.cost(state[&e.m], s, cl)
                    };
                }
                if c < best_c {
                    best_c = c;
                    best_s = s;
                }
            }
            if state[&v] != best_s {
                state.insert(v, best_s);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    nodes.iter().map(|&v| (v, state[&v])).collect()
}

/// Counters from one `solve` call, for run diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub components: usize,
    pub fallbacks: usize,
}

/// MAP over the whole graph: solve components independently (in parallel),
/// falling back to local search on a budget overflow, and cross-check the
/// energy of the merged selection against the graph.
pub fn solve<T: Real>(graph: &AssociationGraph<T>, budget: u128) -> Solution<T> {
    solve_with_stats(graph, budget).0
}

/// `solve`, additionally reporting how many components were processed and how
/// many of them overran the budget and used the local-search fallback.
pub fn solve_with_stats<T: Real>(
    graph: &AssociationGraph<T>,
    budget: u128,
) -> (Solution<T>, SolveStats) {
    let comps = connected_components(graph);
    let partials: Vec<(Vec<(usize, usize)>, bool)> = comps
        .par_iter()
        .map(|comp| match solve_subgraph(graph, comp, budget) {
            Ok(states) => (states, false),
            Err(err) => {
                log::warn!(
                    "exact inference over a {}-node component fell back to local search: {err}",
                    comp.len()
                );
                (icm(graph, comp), true)
            }
        })
        .collect();
    let stats = SolveStats {
        components: comps.len(),
        fallbacks: partials.iter().filter(|(_, fb)| *fb).count(),
    };
    let mut states = vec![0usize; graph.len()];
    for (v, s) in partials.into_iter().flat_map(|(p, _)| p) {
        states[v] = s;
    }
    let energy = graph.evaluate(&states);
    (Solution { states, energy }, stats)
}
