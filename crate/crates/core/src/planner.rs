//! Topology scoring, criteria audit and construct/deconstruct planning.
//!
//! The planning objective is `λ_max − η·λ₂` of the Laplacian. A plan is a set
//! of links to construct and links to deconstruct; the revised graph must stay
//! connected, keep or lower the objective, respect the degree cap, contain an
//! odd cycle and make progress on the neighbor-structure or diameter criteria.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::spectral::{self, laplacian_spectrum};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Weight of `λ₂` in the objective.
    pub eta: f64,
    pub max_degree_cap: usize,
    /// Graphs with at most this many nodes are planned exhaustively.
    pub brute_force_cap: usize,
    /// Maximum number of edge edits in a plan.
    pub edit_budget: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { eta: 1.0, max_degree_cap: 3, brute_force_cap: 8, edit_budget: 4 }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidArgument(format!("eta must be >= 0, got {}", self.eta)));
        }
        if self.max_degree_cap < 2 {
            return Err(Error::InvalidArgument(format!(
                "max_degree_cap must be >= 2, got {}",
                self.max_degree_cap
            )));
        }
        Ok(())
    }
}

/// `λ_max − η·λ₂` of a connected graph.
pub fn p1_score(g: &Graph, cfg: &PlannerConfig) -> Result<f64> {
    let s = laplacian_spectrum(g);
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    Ok(s.lambda_max - cfg.eta * s.lambda2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriteriaAudit {
    pub degree_ok: bool,
    /// Node attaining the maximum degree, with that degree.
    pub worst_node: (usize, usize),
    /// True when the graph contains an odd cycle.
    pub odd_cycle_ok: bool,
    /// Node pairs at the largest BFS distance, as `(u, v, distance)` with `u < v`.
    pub diameter_pairs: Vec<(usize, usize, usize)>,
    /// `(node, (a, b))`: edge `a–b` joins two neighbors of `node`.
    pub singleton_violations: Vec<(usize, (usize, usize))>,
}

impl CriteriaAudit {
    /// Degree, odd-cycle and singleton criteria all hold.
    pub fn all_satisfied(&self) -> bool {
        self.degree_ok && self.odd_cycle_ok && self.singleton_violations.is_empty()
    }
}

pub fn criteria_audit(g: &Graph, cfg: &PlannerConfig) -> CriteriaAudit {
    let n = g.node_count();
    let (worst, d_max) = (0..n)
        .map(|i| (i, g.degree(i)))
        .fold((0, 0), |best, cur| if cur.1 > best.1 { cur } else { best });

    let mut diameter = 0;
    let mut diameter_pairs = Vec::new();
    for u in 0..n {
        let dist = g.bfs_distances(u);
        for (v, d) in dist.into_iter().enumerate().skip(u + 1) {
            let Some(d) = d else { continue };
            if d > diameter {
                diameter = d;
                diameter_pairs.clear();
            }
            if d == diameter && d > 0 {
                diameter_pairs.push((u, v, d));
            }
        }
    }

    CriteriaAudit {
        degree_ok: d_max <= cfg.max_degree_cap,
        worst_node: (worst, d_max),
        odd_cycle_ok: !g.is_bipartite(),
        diameter_pairs,
        singleton_violations: singleton_violations(g),
    }
}

/// Every `(node, edge)` where the edge joins two neighbors of the node.
pub fn singleton_violations(g: &Graph) -> Vec<(usize, (usize, usize))> {
    let mut out = Vec::new();
    for i in 0..g.node_count() {
        let nbrs = g.mask(i);
        for a in g.neighbors(i) {
            let mut m = g.mask(a) & nbrs;
            while m != 0 {
                let b = m.trailing_zeros() as usize;
                m &= m - 1;
                if a < b {
                    out.push((i, (a, b)));
                }
            }
        }
    }
    out
}

/// Links to construct and deconstruct; pairs are stored as `(u, v)` with `u < v`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LinkPlan {
    pub construct: BTreeSet<(usize, usize)>,
    pub deconstruct: BTreeSet<(usize, usize)>,
}

fn ordered(u: usize, v: usize) -> (usize, usize) {
    (u.min(v), u.max(v))
}

impl LinkPlan {
    pub fn new(construct: &[(usize, usize)], deconstruct: &[(usize, usize)]) -> Self {
        Self {
            construct: construct.iter().map(|&(u, v)| ordered(u, v)).collect(),
            deconstruct: deconstruct.iter().map(|&(u, v)| ordered(u, v)).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.construct.is_empty() && self.deconstruct.is_empty()
    }

    pub fn len(&self) -> usize {
        self.construct.len() + self.deconstruct.len()
    }

    /// Checks the plan against `g`: disjoint sets, constructs absent, deconstructs present.
    pub fn validate(&self, g: &Graph) -> Result<()> {
        let n = g.node_count();
        for &(u, v) in self.construct.iter().chain(&self.deconstruct) {
            if u >= n || v >= n || u == v {
                return Err(Error::InvalidArgument(format!("plan link ({u}, {v}) invalid for {n} nodes")));
            }
        }
        if let Some(p) = self.construct.intersection(&self.deconstruct).next() {
            return Err(Error::InvalidArgument(format!("link {p:?} both constructed and deconstructed")));
        }
        if let Some(p) = self.construct.iter().find(|&&(u, v)| g.has_edge(u, v)) {
            return Err(Error::InvalidArgument(format!("construct link {p:?} already present")));
        }
        if let Some(p) = self.deconstruct.iter().find(|&&(u, v)| !g.has_edge(u, v)) {
            return Err(Error::InvalidArgument(format!("deconstruct link {p:?} not present")));
        }
        Ok(())
    }

    /// The revised graph: constructs added, then deconstructs removed.
    pub fn apply(&self, g: &Graph) -> Result<Graph> {
        self.validate(g)?;
        let mut out = g.clone();
        for &(u, v) in &self.construct {
            out.add_edge(u, v);
        }
        for &(u, v) in &self.deconstruct {
            out.remove_edge(u, v);
        }
        Ok(out)
    }

    /// Text form: `C u v` and `D u v` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (u, v) in &self.construct {
            let _ = writeln!(s, "C {u} {v}");
        }
        for (u, v) in &self.deconstruct {
            let _ = writeln!(s, "D {u} {v}");
        }
        s
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut plan = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { line: idx + 1, msg };
            let parts: Vec<_> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(err(format!("expected `C|D u v`, got `{line}`")));
            }
            let u: usize = parts[1].parse().map_err(|_| err(format!("bad node `{}`", parts[1])))?;
            let v: usize = parts[2].parse().map_err(|_| err(format!("bad node `{}`", parts[2])))?;
            let target = match parts[0] {
                "C" => &mut plan.construct,
                "D" => &mut plan.deconstruct,
                other => return Err(err(format!("unknown link kind `{other}`"))),
            };
            target.insert(ordered(u, v));
        }
        Ok(plan)
    }
}

/// Ordering key for candidate revisions; smaller is better.
///
/// Floats are quantized so that the key is a total order and parallel
/// searches merge deterministically.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct CandidateKey {
    p1: i64,
    neg_lambda2: i64,
    d_max: usize,
    edits: usize,
    /// Negated sum of original BFS distances over constructed links.
    neg_reach: i64,
    toggles: Vec<(usize, usize)>,
}

fn quantize(x: f64) -> i64 {
    (x * 1e9).round() as i64
}

/// What the post-condition needs to know about the original graph.
struct Baseline<'a> {
    graph: &'a Graph,
    cfg: &'a PlannerConfig,
    p1: f64,
    violations: usize,
    diameter_pairs: Vec<(usize, usize)>,
    linked_diameter: usize,
    distances: Vec<Vec<usize>>,
}

impl<'a> Baseline<'a> {
    fn new(g: &'a Graph, cfg: &'a PlannerConfig, audit: &CriteriaAudit) -> Result<Self> {
        let n = g.node_count();
        let diameter_pairs: Vec<_> = audit.diameter_pairs.iter().map(|&(u, v, _)| (u, v)).collect();
        let linked_diameter = diameter_pairs.iter().filter(|&&(u, v)| g.has_edge(u, v)).count();
        let distances = (0..n)
            .map(|u| g.bfs_distances(u).into_iter().map(|d| d.unwrap_or(n)).collect())
            .collect();
        Ok(Self {
            graph: g,
            cfg,
            p1: p1_score(g, cfg)?,
            violations: audit.singleton_violations.len(),
            diameter_pairs,
            linked_diameter,
            distances,
        })
    }

    /// Connectivity plus the degree cap on every constructed link.
    fn structurally_ok(&self, revised: &Graph, toggles: &[(usize, usize)]) -> bool {
        let cap = self.cfg.max_degree_cap;
        toggles.iter().all(|&(u, v)| {
            self.graph.has_edge(u, v) || (revised.degree(u) <= cap && revised.degree(v) <= cap)
        }) && revised.is_connected()
    }

    /// Scores a revision; `admissible` is the full post-condition.
    fn evaluate(&self, revised: &Graph, toggles: &[(usize, usize)]) -> Option<(CandidateKey, bool, f64)> {
        if !self.structurally_ok(revised, toggles) {
            return None;
        }
        let s = laplacian_spectrum(revised);
        let p1 = s.lambda_max - self.cfg.eta * s.lambda2;
        let progress = singleton_violations(revised).len() < self.violations
            || self.diameter_pairs.iter().filter(|&&(u, v)| revised.has_edge(u, v)).count()
                > self.linked_diameter;
        let admissible = !toggles.is_empty()
            && p1 <= self.p1 + 1e-9
            && !revised.is_bipartite()
            && progress;
        let reach: usize = toggles
            .iter()
            .filter(|&&(u, v)| !self.graph.has_edge(u, v))
            .map(|&(u, v)| self.distances[u][v])
            .sum();
        let key = CandidateKey {
            p1: quantize(p1),
            neg_lambda2: -quantize(s.lambda2),
            d_max: revised.max_degree(),
            edits: toggles.len(),
            neg_reach: -(reach as i64),
            toggles: toggles.to_vec(),
        };
        Some((key, admissible, p1))
    }

    fn plan_from(&self, toggles: &[(usize, usize)]) -> LinkPlan {
        let mut plan = LinkPlan::default();
        for &(u, v) in toggles {
            if self.graph.has_edge(u, v) {
                plan.deconstruct.insert((u, v));
            } else {
                plan.construct.insert((u, v));
            }
        }
        plan
    }
}

fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for u in 0..n {
        for v in u + 1..n {
            out.push((u, v));
        }
    }
    out
}

/// Plans a revision of `g`. Graphs within `brute_force_cap` nodes are searched
/// exhaustively over `edit_budget` edits; larger ones use [`greedy_plan`].
/// Returns the empty plan if `g` already meets every criterion or no
/// admissible revision exists.
pub fn plan_revision(g: &Graph, cfg: &PlannerConfig) -> Result<LinkPlan> {
    if g.node_count() <= cfg.brute_force_cap {
        exhaustive_plan(g, cfg)
    } else {
        greedy_plan(g, cfg)
    }
}

fn precheck(g: &Graph, cfg: &PlannerConfig) -> Result<Option<CriteriaAudit>> {
    cfg.validate()?;
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let audit = criteria_audit(g, cfg);
    Ok((!audit.all_satisfied()).then_some(audit))
}

/// Best admissible revision among all edit sets of size `1..=edit_budget`.
pub fn exhaustive_plan(g: &Graph, cfg: &PlannerConfig) -> Result<LinkPlan> {
    let Some(audit) = precheck(g, cfg)? else { return Ok(LinkPlan::default()) };
    let base = Baseline::new(g, cfg, &audit)?;
    let pairs = all_pairs(g.node_count());
    let budget = cfg.edit_budget.min(pairs.len());

    fn recurse(
        base: &Baseline<'_>,
        pairs: &[(usize, usize)],
        start: usize,
        budget: usize,
        current: &mut Graph,
        toggles: &mut Vec<(usize, usize)>,
        best: &mut Option<CandidateKey>,
    ) {
        for idx in start..pairs.len() {
            let (u, v) = pairs[idx];
            current.toggle_edge(u, v);
            toggles.push((u, v));
            if let Some((key, true, _)) = base.evaluate(current, toggles) {
                if best.as_ref().is_none_or(|b| key < *b) {
                    *best = Some(key);
                }
            }
            if toggles.len() < budget {
                recurse(base, pairs, idx + 1, budget, current, toggles, best);
            }
            toggles.pop();
            current.toggle_edge(u, v);
        }
    }

    if budget == 0 {
        return Ok(LinkPlan::default());
    }
    let best = (0..pairs.len())
        .into_par_iter()
        .filter_map(|first| {
            let mut current = g.clone();
            let (u, v) = pairs[first];
            current.toggle_edge(u, v);
            let mut toggles = vec![(u, v)];
            let mut best = None;
            if let Some((key, true, _)) = base.evaluate(&current, &toggles) {
                best = Some(key);
            }
            if budget > 1 {
                recurse(&base, &pairs, first + 1, budget, &mut current, &mut toggles, &mut best);
            }
            best
        })
        .min();
    Ok(best.map(|k| base.plan_from(&k.toggles)).unwrap_or_default())
}

/// Pair moves are only enumerated when there are at most this many.
const MAX_PAIR_MOVES: usize = 20_000;

/// Greedy steepest descent over edge edits.
///
/// Each step evaluates every single edit and, while the neighborhood stays
/// small, every pair of edits not yet touched, then takes the best move that
/// strictly lowers the objective. The returned plan is the best admissible
/// revision seen anywhere during the descent.
pub fn greedy_plan(g: &Graph, cfg: &PlannerConfig) -> Result<LinkPlan> {
    let Some(audit) = precheck(g, cfg)? else { return Ok(LinkPlan::default()) };
    let base = Baseline::new(g, cfg, &audit)?;
    let pairs = all_pairs(g.node_count());

    let mut current = g.clone();
    let mut current_p1 = base.p1;
    let mut toggles: Vec<(usize, usize)> = Vec::new();
    let mut incumbent: Option<CandidateKey> = None;

    while toggles.len() < cfg.edit_budget {
        let free: Vec<_> = pairs.iter().copied().filter(|p| !toggles.contains(p)).collect();
        let mut moves: Vec<Vec<(usize, usize)>> = free.iter().map(|&p| vec![p]).collect();
        let n_pairs = free.len() * free.len().saturating_sub(1) / 2;
        if cfg.edit_budget - toggles.len() >= 2 && n_pairs <= MAX_PAIR_MOVES {
            for i in 0..free.len() {
                for j in i + 1..free.len() {
                    moves.push(vec![free[i], free[j]]);
                }
            }
        }

        let scored: Vec<_> = moves
            .par_iter()
            .filter_map(|mv| {
                let mut revised = current.clone();
                let mut all = toggles.clone();
                for &(u, v) in mv {
                    revised.toggle_edge(u, v);
                    all.push((u, v));
                }
                all.sort_unstable();
                base.evaluate(&revised, &all).map(|(key, ok, p1)| (key, ok, p1, mv.clone()))
            })
            .collect();

        for (key, ok, _, _) in &scored {
            if *ok && incumbent.as_ref().is_none_or(|b| key < b) {
                incumbent = Some(key.clone());
            }
        }
        let Some((_, _, p1, mv)) = scored.into_iter().min_by(|a, b| a.0.cmp(&b.0)) else { break };
        if p1 >= current_p1 - 1e-12 {
            break;
        }
        for (u, v) in mv {
            current.toggle_edge(u, v);
            toggles.push((u, v));
        }
        current_p1 = p1;
    }
    Ok(incumbent.map(|k| base.plan_from(&k.toggles)).unwrap_or_default())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateThresholds {
    /// Minimum rate a constructed link must carry, `2Λλ_max/π` bits/s.
    pub r_upper: f64,
    /// Maximum rate a deconstructed link may keep, bits/s.
    pub r_lower: f64,
    /// Shared model size `Λ` in bits.
    pub traffic_volume: f64,
}

impl RateThresholds {
    pub fn new(traffic_volume: f64, lambda_max: f64, r_lower: f64) -> Result<Self> {
        if !(traffic_volume > 0.0) {
            return Err(Error::InvalidArgument("traffic volume must be positive".into()));
        }
        let r_upper = upper_rate(traffic_volume, lambda_max)?;
        let t = Self { r_upper, r_lower, traffic_volume };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_lower >= 0.0) || !(self.r_upper > self.r_lower) {
            return Err(Error::InvalidArgument(format!(
                "need r_upper > r_lower >= 0, got {} and {}",
                self.r_upper, self.r_lower
            )));
        }
        Ok(())
    }
}

/// `2Λλ_max/π`, the rate that delivers `Λ` bits within the tolerable delay.
pub fn upper_rate(traffic_volume: f64, lambda_max: f64) -> Result<f64> {
    spectral::tolerable_delay(lambda_max)?;
    Ok(2.0 * traffic_volume * lambda_max / PI)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RateTarget {
    /// Rate must be at least this many bits/s.
    AtLeast(f64),
    /// Rate must be at most this many bits/s.
    AtMost(f64),
}

impl RateTarget {
    pub fn threshold(&self) -> f64 {
        match *self {
            RateTarget::AtLeast(r) | RateTarget::AtMost(r) => r,
        }
    }

    pub fn is_met(&self, rate: f64) -> bool {
        match *self {
            RateTarget::AtLeast(r) => rate >= r,
            RateTarget::AtMost(r) => rate <= r,
        }
    }
}

/// Per-link rate targets for a plan given the revised graph's `λ_max`.
pub fn required_rates(
    plan: &LinkPlan,
    lambda_max_revised: f64,
    thresholds: &RateThresholds,
) -> Result<BTreeMap<(usize, usize), RateTarget>> {
    thresholds.validate()?;
    let mut out = BTreeMap::new();
    if plan.is_empty() {
        return Ok(out);
    }
    let r_upper = upper_rate(thresholds.traffic_volume, lambda_max_revised)?;
    for &p in &plan.construct {
        out.insert(p, RateTarget::AtLeast(r_upper));
    }
    for &p in &plan.deconstruct {
        out.insert(p, RateTarget::AtMost(thresholds.r_lower));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::presets;

    fn cfg(eta: f64, cap: usize) -> PlannerConfig {
        PlannerConfig { eta, max_degree_cap: cap, ..PlannerConfig::default() }
    }

    #[test]
    fn p1_examples() {
        // C8: λ_max = 4 (even cycle), λ₂ = 2 − 2cos(π/4)
        let c8 = p1_score(&Graph::cycle(8).unwrap(), &cfg(1.0, 3)).unwrap();
        assert!((c8 - (4.0 - (2.0 - 2.0 * (PI / 4.0).cos()))).abs() < 1e-9);
        assert!((c8 - 3.414214).abs() < 1e-6);
        let star = p1_score(&Graph::star(7).unwrap(), &cfg(1.0, 3)).unwrap();
        assert!((star - 7.0).abs() < 1e-9);
        let k4 = Graph::complete(4).unwrap();
        assert!((p1_score(&k4, &cfg(0.0, 3)).unwrap() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn p1_rejects_disconnected() {
        let g = Graph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        assert!(matches!(p1_score(&g, &cfg(1.0, 3)), Err(Error::Disconnected)));
    }

    #[test]
    fn audit_examples() {
        let c4 = criteria_audit(&Graph::cycle(4).unwrap(), &cfg(1.0, 3));
        assert!(!c4.odd_cycle_ok);
        let p3 = criteria_audit(&Graph::path(3).unwrap(), &cfg(1.0, 2));
        assert_eq!(p3.diameter_pairs, vec![(0, 2, 2)]);
        assert!(p3.degree_ok);
        let star = criteria_audit(&Graph::star(7).unwrap(), &cfg(1.0, 3));
        assert!(!star.degree_ok);
        assert_eq!(star.worst_node, (0, 7));
    }

    #[test]
    fn audit_flags_triangle_in_initial_platoon() {
        // one-based cars 1, 2, 3 are nodes 0, 1, 2
        let a = criteria_audit(&presets::fig3a_candidate(), &PlannerConfig::default());
        assert!(a.singleton_violations.contains(&(1, (0, 2))));
    }

    #[test]
    fn path_plan_closes_triangle() {
        let g = Graph::path(3).unwrap();
        let c = cfg(1.0, 2);
        let plan = plan_revision(&g, &c).unwrap();
        assert_eq!(plan, LinkPlan::new(&[(0, 2)], &[]));
        let revised = plan.apply(&g).unwrap();
        assert!((p1_score(&g, &c).unwrap() - 2.0).abs() < 1e-9);
        assert!(p1_score(&revised, &c).unwrap().abs() < 1e-9);
        assert_eq!(greedy_plan(&g, &c).unwrap(), plan);
    }

    #[test]
    fn criteria_optimal_graph_is_a_fixed_point() {
        // C5: odd cycle, degree 2, no triangles
        let g = Graph::cycle(5).unwrap();
        assert!(criteria_audit(&g, &cfg(1.0, 3)).all_satisfied());
        assert!(plan_revision(&g, &cfg(1.0, 3)).unwrap().is_empty());
    }

    #[test]
    fn plan_rejects_disconnected() {
        let g = Graph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        assert!(plan_revision(&g, &cfg(1.0, 3)).is_err());
    }

    #[test]
    fn plan_validation() {
        let g = Graph::path(3).unwrap();
        assert!(LinkPlan::new(&[(0, 1)], &[]).validate(&g).is_err());
        assert!(LinkPlan::new(&[], &[(0, 2)]).validate(&g).is_err());
        assert!(LinkPlan::new(&[(0, 2)], &[(0, 2)]).validate(&g).is_err());
        assert!(LinkPlan::new(&[(2, 0)], &[(1, 0)]).validate(&g).is_ok());
    }

    #[test]
    fn plan_text_round_trip() {
        let plan = LinkPlan::new(&[(2, 6), (1, 5)], &[(0, 2)]);
        let text = plan.to_text();
        assert_eq!(text, "C 1 5\nC 2 6\nD 0 2\n");
        assert_eq!(LinkPlan::parse_text(&text).unwrap(), plan);
        assert!(LinkPlan::parse_text("X 1 2").is_err());
    }

    #[test]
    fn rate_examples() {
        let t = RateThresholds::new(1e6, 8.0, 0.0).unwrap();
        assert!((t.r_upper - 5.0930e6).abs() < 1e2);
        let plan = LinkPlan::new(&[(0, 1)], &[(1, 2)]);
        let rates = required_rates(&plan, 8.0, &t).unwrap();
        assert_eq!(rates[&(0, 1)], RateTarget::AtLeast(t.r_upper));
        assert_eq!(rates[&(1, 2)], RateTarget::AtMost(0.0));
        assert!(required_rates(&LinkPlan::default(), 8.0, &t).unwrap().is_empty());

        // 6.2 MiB model against the revised platoon's 0.2901 s budget
        let volume = 52.0e6;
        let lambda = PI / (2.0 * 0.2901);
        let r = upper_rate(volume, lambda).unwrap();
        assert!((r - volume / 0.2901).abs() / r < 1e-12);
        assert!((r - 1.7925e8).abs() < 1e5);
    }

    #[test]
    fn thresholds_validate_ordering() {
        assert!(RateThresholds::new(1.0, 1.0, 10.0).is_err());
        assert!(RateThresholds::new(1e6, 1.0, -1.0).is_err());
        assert!(RateThresholds::new(1e6, 0.0, 0.0).is_err());
    }
}
