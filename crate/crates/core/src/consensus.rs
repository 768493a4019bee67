//! Delayed neighbor-averaging dynamics.
//!
//! Two readings of the aggregation protocol live here. The continuous one,
//! `dv_i/dt = Σ_{j∈N_i} [v_j(t−τ_ij) − v_i(t−τ_ij)]`, is integrated with
//! explicit Euler and is stable exactly when the uniform delay stays below
//! `π / (2 λ_max)`. The discrete one is a step-scaled round used when nodes
//! swap model parameters.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::spectral::laplacian_spectrum;

/// A trace is diverged once its deviation exceeds this multiple of the initial one.
pub const DIVERGE_FACTOR: f64 = 1e3;
/// A trace is converged if its final deviation is below this times `max(1, initial)`.
pub const CONVERGE_FACTOR: f64 = 1e-6;
/// Integration stops early past this multiple of the initial deviation.
const BLOWUP_FACTOR: f64 = 1e12;
/// Envelope samples below this fraction of the initial deviation sit in round-off and are skipped.
pub const ENVELOPE_FLOOR: f64 = 1e-9;

/// Symmetric per-link transmission delays in seconds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DelayModel {
    per_link: BTreeMap<(usize, usize), f64>,
    uniform: Option<f64>,
}

impl DelayModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn uniform(tau: f64) -> Result<Self> {
        check_delay(tau)?;
        Ok(Self { per_link: BTreeMap::new(), uniform: Some(tau) })
    }

    /// Overrides the delay of link `(i, j)` in both directions.
    pub fn with_link(mut self, i: usize, j: usize, tau: f64) -> Result<Self> {
        check_delay(tau)?;
        self.per_link.insert((i.min(j), i.max(j)), tau);
        Ok(self)
    }

    pub fn delay(&self, i: usize, j: usize) -> f64 {
        self.per_link
            .get(&(i.min(j), i.max(j)))
            .copied()
            .or(self.uniform)
            .unwrap_or(0.0)
    }

    /// Smallest nonzero delay over the edges of `g`.
    pub fn min_positive_delay(&self, g: &Graph) -> Option<f64> {
        g.edges()
            .into_iter()
            .map(|(i, j)| self.delay(i, j))
            .filter(|&d| d > 0.0)
            .min_by(f64::total_cmp)
    }

    pub fn max_delay(&self, g: &Graph) -> f64 {
        g.edges().into_iter().map(|(i, j)| self.delay(i, j)).fold(0.0, f64::max)
    }
}

fn check_delay(tau: f64) -> Result<()> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("delay must be finite and >= 0, got {tau}")));
    }
    Ok(())
}

/// States sampled every Euler step.
#[derive(Clone, Debug)]
pub struct ConsensusTrace {
    pub dt: f64,
    pub times: Vec<f64>,
    /// `states[t][node][component]`.
    pub states: Vec<Vec<Vec<f64>>>,
    pub initial_mean: Vec<f64>,
    /// `‖v(t) − v̄‖` over all nodes and components.
    pub deviation: Vec<f64>,
    /// Largest link delay the run used; zero for delay-free runs.
    pub max_delay: f64,
    pub diverge_factor: f64,
    pub converge_factor: f64,
}

impl ConsensusTrace {
    /// Builds a trace from raw states, filling in the mean and deviations.
    pub fn from_states(dt: f64, states: Vec<Vec<Vec<f64>>>, max_delay: f64) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| Error::InvalidArgument("trace needs at least one state".into()))?;
        let initial_mean = node_mean(first);
        let deviation = states.iter().map(|s| deviation_from(s, &initial_mean)).collect();
        let times = (0..states.len()).map(|k| k as f64 * dt).collect();
        Ok(Self {
            dt,
            times,
            states,
            initial_mean,
            deviation,
            max_delay,
            diverge_factor: DIVERGE_FACTOR,
            converge_factor: CONVERGE_FACTOR,
        })
    }

    pub fn final_state(&self) -> &[Vec<f64>] {
        self.states.last().expect("trace is non-empty")
    }

    /// Long format: `time,node_id,component_id,value`.
    pub fn write_states_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "node_id", "component_id", "value"])?;
        for (t, state) in self.times.iter().zip(&self.states) {
            for (i, node) in state.iter().enumerate() {
                for (c, v) in node.iter().enumerate() {
                    w.write_record([t.to_string(), i.to_string(), c.to_string(), v.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `time,deviation`.
    pub fn write_deviation_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "deviation"])?;
        for (t, d) in self.times.iter().zip(&self.deviation) {
            w.write_record([t.to_string(), d.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Component-wise average over nodes.
pub fn node_mean(state: &[Vec<f64>]) -> Vec<f64> {
    let dim = state.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; dim];
    for node in state {
        for (m, v) in mean.iter_mut().zip(node) {
            *m += v;
        }
    }
    let n = state.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

fn deviation_from(state: &[Vec<f64>], mean: &[f64]) -> f64 {
    state
        .iter()
        .flat_map(|node| node.iter().zip(mean).map(|(v, m)| (v - m) * (v - m)))
        .sum::<f64>()
        .sqrt()
}

fn check_state(g: &Graph, state: &[Vec<f64>]) -> Result<usize> {
    if state.len() != g.node_count() {
        return Err(Error::InvalidArgument(format!(
            "{} node vectors for a {}-node graph",
            state.len(),
            g.node_count()
        )));
    }
    let dim = state[0].len();
    if state.iter().any(|v| v.len() != dim) {
        return Err(Error::InvalidArgument("node vectors differ in length".into()));
    }
    Ok(dim)
}

/// `min(1e-3, 0.005/λ_max, min_delay/10)`.
pub fn default_dt(g: &Graph, delays: &DelayModel) -> f64 {
    let lambda_max = laplacian_spectrum(g).lambda_max.max(f64::MIN_POSITIVE);
    let mut dt = 1e-3f64.min(0.005 / lambda_max);
    if let Some(d) = delays.min_positive_delay(g) {
        dt = dt.min(d / 10.0);
    }
    dt
}

/// Explicit-Euler integration of the delayed protocol with constant pre-history.
///
/// Each link delay is rounded up to a whole number of steps. Integration
/// stops early if the deviation blows past `1e12` times its initial value.
pub fn simulate_ode(
    g: &Graph,
    delays: &DelayModel,
    init: &[Vec<f64>],
    dt: f64,
    horizon: f64,
) -> Result<ConsensusTrace> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    check_state(g, init)?;
    let lambda_max = laplacian_spectrum(g).lambda_max;
    if !(dt > 0.0) || dt > 0.01 / lambda_max * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "dt = {dt} exceeds 0.01/λ_max = {}",
            0.01 / lambda_max
        )));
    }
    if let Some(d) = delays.min_positive_delay(g) {
        if dt > d / 10.0 * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!("dt = {dt} exceeds min_delay/10 = {}", d / 10.0)));
        }
    }
    if horizon < 50.0 * dt {
        return Err(Error::InvalidArgument(format!("horizon {horizon} shorter than 50 steps")));
    }

    let n = g.node_count();
    // lag in steps per directed neighbor entry
    let links: Vec<Vec<(usize, usize)>> = (0..n)
        .map(|i| {
            g.neighbors(i)
                .map(|j| (j, (delays.delay(i, j) / dt - 1e-9).ceil().max(0.0) as usize))
                .collect()
        })
        .collect();

    let steps = (horizon / dt).round() as usize;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(init.to_vec());
    let mean = node_mean(init);
    let limit = BLOWUP_FACTOR * deviation_from(init, &mean).max(f64::MIN_POSITIVE);

    for k in 0..steps {
        let current: &Vec<Vec<f64>> = &states[k];
        let mut next = current.clone();
        for (i, nbrs) in links.iter().enumerate() {
            for &(j, lag) in nbrs {
                let past = &states[k.saturating_sub(lag)];
                for (c, x) in next[i].iter_mut().enumerate() {
                    *x += dt * (past[j][c] - past[i][c]);
                }
            }
        }
        let blown = deviation_from(&next, &mean);
        states.push(next);
        if !(blown <= limit) {
            break;
        }
    }
    ConsensusTrace::from_states(dt, states, delays.max_delay(g))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stability {
    Converged,
    Diverged,
    Undecided,
}

impl Stability {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stability::Converged => "converged",
            Stability::Diverged => "diverged",
            Stability::Undecided => "undecided",
        }
    }
}

pub fn classify_stability(trace: &ConsensusTrace) -> Stability {
    let initial = trace.deviation[0];
    let last = *trace.deviation.last().expect("trace is non-empty");
    if initial > 0.0 && trace.deviation.iter().any(|&d| !(d <= trace.diverge_factor * initial)) {
        return Stability::Diverged;
    }
    if last < trace.converge_factor * initial.max(1.0) {
        Stability::Converged
    } else {
        Stability::Undecided
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayReport {
    /// `max_t ‖ε(t)‖ / (‖ε(0)‖ e^{−λ₂t})` over samples above the round-off floor.
    pub max_ratio: f64,
    pub violated: bool,
}

/// Compares a delay-free trace against the `‖ε(0)‖ e^{−λ₂t}` envelope.
pub fn decay_bound_check(trace: &ConsensusTrace, lambda2: f64) -> Result<DecayReport> {
    if trace.max_delay > 0.0 {
        return Err(Error::InvalidArgument("decay envelope only applies to delay-free traces".into()));
    }
    let d0 = trace.deviation[0];
    if d0 == 0.0 {
        return Ok(DecayReport { max_ratio: 0.0, violated: false });
    }
    let mut max_ratio: f64 = 0.0;
    for (t, d) in trace.times.iter().zip(&trace.deviation) {
        let envelope = d0 * (-lambda2 * t).exp();
        if envelope < ENVELOPE_FLOOR * d0 {
            break;
        }
        max_ratio = max_ratio.max(d / envelope);
    }
    Ok(DecayReport { max_ratio, violated: max_ratio > 1.0 + 1e-3 })
}

fn check_step(g: &Graph, step: f64) -> Result<()> {
    let limit = 1.0 / (g.max_degree() as f64 + 1.0);
    if !(step > 0.0) || step > limit + 1e-15 {
        return Err(Error::InvalidArgument(format!("consensus step {step} outside (0, {limit}]")));
    }
    Ok(())
}

/// One synchronous round `v_i ← v_i + step·Σ_{j∈N_i}(v_j − v_i)`.
pub fn consensus_round(params: &[Vec<f64>], g: &Graph, step: f64) -> Result<Vec<Vec<f64>>> {
    check_state(g, params)?;
    check_step(g, step)?;
    Ok(mix(params, params, g, step))
}

/// `current + step·L`-style update where the differences come from `lagged`.
fn mix(current: &[Vec<f64>], lagged: &[Vec<f64>], g: &Graph, step: f64) -> Vec<Vec<f64>> {
    let mut next = current.to_vec();
    for (i, out) in next.iter_mut().enumerate() {
        for j in g.neighbors(i) {
            for (c, x) in out.iter_mut().enumerate() {
                *x += step * (lagged[j][c] - lagged[i][c]);
            }
        }
    }
    next
}

/// Discrete rounds where every exchange arrives `staleness` rounds late.
///
/// `v_i(k+1) = v_i(k) + step·Σ_j [v_j(k−s) − v_i(k−s)]`, with the history
/// before round 0 held at the initial state.
#[derive(Clone, Debug)]
pub struct StaleConsensus {
    staleness: usize,
    history: Vec<Vec<Vec<f64>>>,
}

impl StaleConsensus {
    pub fn new(staleness: usize) -> Self {
        Self { staleness, history: Vec::new() }
    }

    pub fn staleness(&self) -> usize {
        self.staleness
    }

    /// Runs `rounds` delayed rounds starting from `params`. History from
    /// previous calls is discarded because local training moved the models.
    pub fn run(&mut self, params: &[Vec<f64>], g: &Graph, step: f64, rounds: usize) -> Result<Vec<Vec<f64>>> {
        check_state(g, params)?;
        check_step(g, step)?;
        self.history.clear();
        self.history.push(params.to_vec());
        for k in 0..rounds {
            let lagged = &self.history[k.saturating_sub(self.staleness)];
            let next = mix(&self.history[k], lagged, g, step);
            self.history.push(next);
        }
        Ok(self.history.last().cloned().expect("history is non-empty"))
    }
}

/// Delay sweep result for one uniform delay.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub delay: f64,
    pub stability: Stability,
    pub final_deviation: f64,
}

/// Runs one simulation per delay in parallel; results keep the input order.
pub fn stability_sweep(
    g: &Graph,
    delays: &[f64],
    init: &[Vec<f64>],
    horizon: f64,
) -> Result<Vec<SweepPoint>> {
    delays
        .par_iter()
        .map(|&tau| {
            let model = DelayModel::uniform(tau)?;
            let dt = default_dt(g, &model);
            let trace = simulate_ode(g, &model, init, dt, horizon)?;
            Ok(SweepPoint {
                delay: tau,
                stability: classify_stability(&trace),
                final_deviation: *trace.deviation.last().unwrap(),
            })
        })
        .collect()
}

/// Scalar initial state `v_i = i`, a simple non-consensus start.
pub fn ramp_init(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| vec![i as f64]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalars(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn delay_free_path_reaches_mean() {
        let g = Graph::path(3).unwrap();
        let delays = DelayModel::none();
        let dt = default_dt(&g, &delays);
        // λ₂ = 1 for P3
        let trace = simulate_ode(&g, &delays, &scalars(&[0.0, 3.0, 6.0]), dt, 20.0).unwrap();
        for node in trace.final_state() {
            assert!((node[0] - 3.0).abs() < 1e-6);
        }
        assert_eq!(classify_stability(&trace), Stability::Converged);
    }

    #[test]
    fn star_brackets_tolerable_delay() {
        let g = Graph::star(7).unwrap();
        let tau_star = std::f64::consts::PI / 16.0;
        let init = ramp_init(8);
        for (factor, want) in [(0.9, Stability::Converged), (1.1, Stability::Diverged)] {
            let delays = DelayModel::uniform(factor * tau_star).unwrap();
            let trace = simulate_ode(&g, &delays, &init, default_dt(&g, &delays), 60.0).unwrap();
            assert_eq!(classify_stability(&trace), want, "factor {factor}");
        }
    }

    #[test]
    fn rejects_coarse_steps() {
        let g = Graph::star(7).unwrap();
        let init = ramp_init(8);
        assert!(simulate_ode(&g, &DelayModel::none(), &init, 0.01, 10.0).is_err());
        let delays = DelayModel::uniform(0.005).unwrap();
        assert!(simulate_ode(&g, &delays, &init, 0.001, 10.0).is_err());
        assert!(simulate_ode(&g, &DelayModel::none(), &init, 1e-4, 1e-3).is_err());
    }

    #[test]
    fn classify_constant_trace() {
        let trace = ConsensusTrace::from_states(0.1, vec![scalars(&[2.0, 2.0]); 2], 0.0).unwrap();
        assert_eq!(classify_stability(&trace), Stability::Converged);
    }

    #[test]
    fn decay_check_on_consensus_state_passes() {
        let trace = ConsensusTrace::from_states(0.1, vec![scalars(&[1.0, 1.0]); 3], 0.0).unwrap();
        let r = decay_bound_check(&trace, 2.0).unwrap();
        assert!(!r.violated && r.max_ratio == 0.0);
    }

    #[test]
    fn decay_check_rejects_delayed_trace() {
        let trace = ConsensusTrace::from_states(0.1, vec![scalars(&[0.0, 1.0]); 3], 0.2).unwrap();
        assert!(decay_bound_check(&trace, 2.0).is_err());
    }

    #[test]
    fn round_examples() {
        let single = Graph::empty(1).unwrap();
        assert_eq!(consensus_round(&scalars(&[4.0]), &single, 1.0).unwrap(), scalars(&[4.0]));

        let k2 = Graph::complete(2).unwrap();
        assert_eq!(consensus_round(&scalars(&[0.0, 2.0]), &k2, 0.5).unwrap(), scalars(&[1.0, 1.0]));

        let p3 = Graph::path(3).unwrap();
        let out = consensus_round(&scalars(&[0.0, 3.0, 6.0]), &p3, 0.25).unwrap();
        assert_eq!(out, scalars(&[0.75, 3.0, 5.25]));
    }

    #[test]
    fn round_rejects_large_steps() {
        let p3 = Graph::path(3).unwrap();
        assert!(consensus_round(&scalars(&[0.0, 3.0, 6.0]), &p3, 0.5).is_err());
        assert!(consensus_round(&scalars(&[0.0, 3.0, 6.0]), &p3, 0.0).is_err());
    }

    #[test]
    fn stale_rounds_without_delay_match_plain_rounds() {
        let g = Graph::cycle(5).unwrap();
        let init = ramp_init(5);
        let mut plain = init.clone();
        for _ in 0..7 {
            plain = consensus_round(&plain, &g, 0.2).unwrap();
        }
        let stale = StaleConsensus::new(0).run(&init, &g, 0.2, 7).unwrap();
        assert_eq!(plain, stale);
    }

    #[test]
    fn delay_model_is_symmetric() {
        let d = DelayModel::uniform(0.1).unwrap().with_link(3, 1, 0.3).unwrap();
        assert_eq!(d.delay(1, 3), 0.3);
        assert_eq!(d.delay(3, 1), 0.3);
        assert_eq!(d.delay(0, 2), 0.1);
        assert!(DelayModel::uniform(-1.0).is_err());
    }

    #[test]
    fn csv_exports() {
        let trace = ConsensusTrace::from_states(0.5, vec![scalars(&[0.0, 2.0]), scalars(&[1.0, 1.0])], 0.0).unwrap();
        let mut buf = Vec::new();
        trace.write_deviation_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("time,deviation"));
        assert_eq!(text.lines().count(), 3);
        let mut buf = Vec::new();
        trace.write_states_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }
}
