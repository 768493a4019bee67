//! DDPG agent that chooses RIS phases to meet a link plan's rate targets.
//!
//! The environment is a frozen channel realization per episode. An action is
//! a phase vector; the next state holds the normalized rates it produced and
//! the action itself.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use ndarray::{s, Array1, Array2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::channel::{self, ChannelParams, ChannelSet, Geometry, PhaseShiftVector};
use crate::error::{Error, Result};
use crate::nn::{Adam, Grads, Mlp};
use crate::planner::{LinkPlan, RateTarget, RateThresholds};

/// One rate-constrained directed link `tx → rx`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkTarget {
    pub tx: usize,
    pub rx: usize,
    pub target: RateTarget,
}

impl LinkTarget {
    pub fn is_constructive(&self) -> bool {
        matches!(self.target, RateTarget::AtLeast(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardConfig {
    pub gamma_penalty: f64,
    pub thresholds: RateThresholds,
    pub plan: LinkPlan,
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_penalty >= 0.0) {
            return Err(Error::InvalidArgument("gamma_penalty must be >= 0".into()));
        }
        self.thresholds.validate()
    }

    /// Constructed links first, then deconstructed ones, each pair directed
    /// from its smaller to its larger node id.
    pub fn targets(&self) -> Vec<LinkTarget> {
        let up = self.plan.construct.iter().map(|&(tx, rx)| LinkTarget {
            tx,
            rx,
            target: RateTarget::AtLeast(self.thresholds.r_upper),
        });
        let down = self.plan.deconstruct.iter().map(|&(tx, rx)| LinkTarget {
            tx,
            rx,
            target: RateTarget::AtMost(self.thresholds.r_lower),
        });
        up.chain(down).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardBreakdown {
    pub bonus: f64,
    pub penalty: f64,
    pub total: f64,
}

/// `Σ R_constructed − Σ R_deconstructed − γ·(Σ [R_up − R]⁺ + Σ [R − R_low]⁺)`
/// with `rates[k]` belonging to `targets[k]`.
pub fn reward(targets: &[LinkTarget], rates: &[f64], gamma_penalty: f64) -> RewardBreakdown {
    let (mut bonus, mut penalty) = (0.0, 0.0);
    for (t, &r) in targets.iter().zip(rates) {
        match t.target {
            RateTarget::AtLeast(up) => {
                bonus += r;
                penalty += (up - r).max(0.0);
            }
            RateTarget::AtMost(low) => {
                bonus -= r;
                penalty += (r - low).max(0.0);
            }
        }
    }
    RewardBreakdown { bonus, penalty, total: bonus - gamma_penalty * penalty }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MdpState {
    pub normalized_rates: Vec<f64>,
    /// `(re, im)` pairs of the previous phases.
    pub prev_phase: Vec<f64>,
}

impl MdpState {
    pub fn to_array(&self) -> Array1<f64> {
        self.normalized_rates.iter().chain(&self.prev_phase).copied().collect()
    }

    pub fn prev_phases(&self) -> PhaseShiftVector {
        PhaseShiftVector::project(&deinterleave(&self.prev_phase))
    }
}

/// Rates are clamped into `[min, max]` and rescaled to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateBounds {
    pub min: f64,
    pub max: f64,
}

pub fn encode_state(rates: &[f64], prev: &PhaseShiftVector, bounds: RateBounds) -> Result<MdpState> {
    if !(bounds.max > bounds.min) {
        return Err(Error::InvalidArgument("rate bounds need max > min".into()));
    }
    let span = bounds.max - bounds.min;
    Ok(MdpState {
        normalized_rates: rates.iter().map(|&r| ((r - bounds.min) / span).clamp(0.0, 1.0)).collect(),
        prev_phase: interleave(prev.coefficients()),
    })
}

pub fn interleave(c: &[Complex64]) -> Vec<f64> {
    c.iter().flat_map(|z| [z.re, z.im]).collect()
}

pub fn deinterleave(x: &[f64]) -> Vec<Complex64> {
    x.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

/// Normalizes each `(re, im)` pair; `(0, 0)` becomes `(1, 0)`.
pub fn project_pairs(raw: &[f64]) -> Vec<f64> {
    interleave(PhaseShiftVector::project(&deinterleave(raw)).coefficients())
}

/// Channel model, link plan and reward for one scenario.
#[derive(Clone, Debug)]
pub struct RisEnv {
    pub geometry: Geometry,
    pub params: ChannelParams,
    pub reward: RewardConfig,
    pub bounds: RateBounds,
    targets: Vec<LinkTarget>,
}

impl RisEnv {
    pub fn new(geometry: Geometry, params: ChannelParams, reward: RewardConfig, bounds: RateBounds) -> Result<Self> {
        geometry.validate()?;
        params.validate()?;
        reward.validate()?;
        let n = geometry.car_count();
        let targets = reward.targets();
        if targets.is_empty() {
            return Err(Error::InvalidArgument("link plan has no rate targets".into()));
        }
        if targets.iter().any(|t| t.tx >= n || t.rx >= n) {
            return Err(Error::InvalidArgument("plan references a car outside the geometry".into()));
        }
        if !(bounds.max > bounds.min) {
            return Err(Error::InvalidArgument("rate bounds need max > min".into()));
        }
        Ok(Self { geometry, params, reward, bounds, targets })
    }

    pub fn targets(&self) -> &[LinkTarget] {
        &self.targets
    }

    pub fn ris_elements(&self) -> usize {
        self.geometry.ris_elements
    }

    pub fn state_dim(&self) -> usize {
        2 * self.ris_elements() + self.targets.len()
    }

    pub fn action_dim(&self) -> usize {
        2 * self.ris_elements()
    }

    pub fn sample(&self, seed: u64) -> Result<ChannelSet> {
        channel::sample_channels(&self.geometry, &self.params, seed)
    }

    pub fn rates(&self, ch: &ChannelSet, phi: &PhaseShiftVector) -> Vec<f64> {
        self.targets.iter().map(|t| channel::link_rate(ch, phi, t.tx, t.rx, &self.params)).collect()
    }

    /// Rates, reward and next state for playing `phi` on `ch`.
    pub fn step(&self, ch: &ChannelSet, phi: &PhaseShiftVector) -> (Vec<f64>, RewardBreakdown, MdpState) {
        let rates = self.rates(ch, phi);
        let r = reward(&self.targets, &rates, self.reward.gamma_penalty);
        let state = encode_state(&rates, phi, self.bounds).expect("bounds checked at construction");
        (rates, r, state)
    }

    /// State seen before the first action: phases all zero.
    pub fn initial_state(&self, ch: &ChannelSet) -> MdpState {
        self.step(ch, &PhaseShiftVector::identity(self.ris_elements())).2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DdpgConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub discount: f64,
    pub soft_tau: f64,
    pub replay_capacity: usize,
    pub batch: usize,
    /// Transitions stored before learning starts; `None` means `max(batch, 1000)`.
    pub warmup: Option<usize>,
    pub noise_sigma: f64,
    pub noise_decay: f64,
    /// Rewards are divided by this before entering the critic, bits/s;
    /// `None` uses the scenario's `r_upper`.
    pub reward_unit: Option<f64>,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            actor_hidden: vec![300, 200],
            critic_hidden: vec![200, 300],
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            discount: 0.9,
            soft_tau: 0.01,
            replay_capacity: 10_000,
            batch: 32,
            warmup: None,
            noise_sigma: 0.2,
            noise_decay: 0.999,
            reward_unit: None,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("ddpg: {m}")));
        if self.batch == 0 || self.replay_capacity < self.batch {
            return bad("need 0 < batch <= replay_capacity");
        }
        if !(self.actor_lr >= 0.0 && self.critic_lr >= 0.0) {
            return bad("learning rates must be >= 0");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.soft_tau) {
            return bad("soft_tau must be in [0, 1]");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_decay > 0.0 && self.reward_unit.is_none_or(|u| u > 0.0)) {
            return bad("noise and reward scale must be positive");
        }
        if self.warmup.is_some_and(|w| w > self.replay_capacity) {
            return bad("warmup cannot exceed replay capacity");
        }
        Ok(())
    }

    pub fn effective_warmup(&self) -> usize {
        self.warmup.unwrap_or(self.batch.max(1000))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Array1<f64>,
    pub action: Array1<f64>,
    pub reward: f64,
    pub next_state: Array1<f64>,
}

/// Fixed-capacity FIFO experience store.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, items: VecDeque::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn sample(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Transition> {
        (0..batch).map(|_| self.items[rng.random_range(0..self.items.len())].clone()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainStats {
    pub critic_loss: f64,
    /// Mean critic value of the actor's actions before the update.
    pub actor_objective: f64,
    /// False when the replay buffer was too small and nothing changed.
    pub updated: bool,
}

#[derive(Clone, Debug)]
pub struct DdpgAgent {
    pub cfg: DdpgConfig,
    pub actor: Mlp,
    pub target_actor: Mlp,
    pub critic: Mlp,
    pub target_critic: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    pub replay: ReplayBuffer,
    rng: ChaCha8Rng,
    pub noise_sigma: f64,
}

struct Batch {
    s: Array2<f64>,
    a: Array2<f64>,
    r: Array1<f64>,
    s2: Array2<f64>,
}

fn stack(rows: impl Iterator<Item = Array1<f64>>, width: usize) -> Array2<f64> {
    let rows: Vec<_> = rows.collect();
    let mut out = Array2::zeros((rows.len(), width));
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(&src);
    }
    out
}

fn concat_cols(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("row counts agree")
}

/// Row-wise pair normalization and its Jacobian applied to `grad`
/// (gradient w.r.t. the normalized output) to give the gradient w.r.t. `raw`.
fn project_rows(raw: &Array2<f64>) -> Array2<f64> {
    let mut out = raw.clone();
    for mut row in out.rows_mut() {
        let p = project_pairs(row.as_slice().expect("standard layout"));
        row.assign(&Array1::from(p));
    }
    out
}

fn project_rows_backward(raw: &Array2<f64>, grad: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(raw.raw_dim());
    for ((r, g), mut o) in raw.rows().into_iter().zip(grad.rows()).zip(out.rows_mut()) {
        for k in 0..r.len() / 2 {
            let (x, y) = (r[2 * k], r[2 * k + 1]);
            let n = (x * x + y * y).sqrt();
            if n == 0.0 || !n.is_finite() {
                continue;
            }
            let (ux, uy) = (x / n, y / n);
            let (gx, gy) = (g[2 * k], g[2 * k + 1]);
            // (I − u uᵀ)/n · g
            let dot = ux * gx + uy * gy;
            o[2 * k] = (gx - ux * dot) / n;
            o[2 * k + 1] = (gy - uy * dot) / n;
        }
    }
    out
}

impl DdpgAgent {
    pub fn new(cfg: DdpgConfig, state_dim: usize, action_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if action_dim == 0 || action_dim % 2 != 0 {
            return Err(Error::InvalidArgument("action dimension must be a positive even number".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![state_dim];
        sizes.extend(&cfg.actor_hidden);
        sizes.push(action_dim);
        let actor = Mlp::new(&sizes, 3e-3, &mut rng);
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend(&cfg.critic_hidden);
        sizes.push(1);
        let critic = Mlp::new(&sizes, 3e-3, &mut rng);
        Ok(Self {
            actor_opt: Adam::new(&actor, cfg.actor_lr),
            critic_opt: Adam::new(&critic, cfg.critic_lr),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            replay: ReplayBuffer::new(cfg.replay_capacity),
            noise_sigma: cfg.noise_sigma,
            rng,
            cfg,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }

    /// Actor output (plus Gaussian noise when exploring), projected to unit modulus.
    pub fn act(&mut self, state: &MdpState, explore: bool) -> PhaseShiftVector {
        let mut raw = self.actor.predict(&state.to_array());
        if explore && self.noise_sigma > 0.0 {
            for v in raw.iter_mut() {
                let z: f64 = self.rng.sample(StandardNormal);
                *v += self.noise_sigma * z;
            }
        }
        PhaseShiftVector::project(&deinterleave(raw.as_slice().expect("contiguous")))
    }

    fn batch(&self, items: &[Transition]) -> Batch {
        let sd = self.state_dim();
        let ad = self.action_dim();
        Batch {
            s: stack(items.iter().map(|t| t.state.clone()), sd),
            a: stack(items.iter().map(|t| t.action.clone()), ad),
            r: items.iter().map(|t| t.reward).collect(),
            s2: stack(items.iter().map(|t| t.next_state.clone()), sd),
        }
    }

    /// Bellman targets `r + discount·Q′(s′, μ′(s′))`.
    fn targets(&self, b: &Batch) -> Array1<f64> {
        let a2 = project_rows(&self.target_actor.forward(&b.s2).output);
        let q2 = self.target_critic.forward(&concat_cols(&b.s2, &a2)).output;
        &b.r + &(q2.column(0).to_owned() * self.cfg.discount)
    }

    /// Mean squared Bellman error and its parameter gradient.
    pub fn critic_loss_and_grads(&self, items: &[Transition]) -> (f64, Grads) {
        let b = self.batch(items);
        let y = self.targets(&b);
        let trace = self.critic.forward(&concat_cols(&b.s, &b.a));
        let resid = &trace.output.column(0) - &y;
        let n = items.len() as f64;
        let loss = resid.mapv(|d| d * d).sum() / n;
        let g_out = (resid * (2.0 / n)).insert_axis(Axis(1));
        (loss, self.critic.backward(&trace, &g_out).0)
    }

    /// Mean `Q(s, μ(s))` and the gradient of its negation w.r.t. actor parameters.
    pub fn actor_objective_and_grads(&self, items: &[Transition]) -> (f64, Grads) {
        let b = self.batch(items);
        let n = items.len() as f64;
        let a_trace = self.actor.forward(&b.s);
        let a = project_rows(&a_trace.output);
        let c_trace = self.critic.forward(&concat_cols(&b.s, &a));
        let objective = c_trace.output.sum() / n;
        let g_q = Array2::from_elem((items.len(), 1), -1.0 / n);
        let (_, g_in) = self.critic.backward(&c_trace, &g_q);
        let g_a = g_in.slice(s![.., self.state_dim()..]).to_owned();
        let g_raw = project_rows_backward(&a_trace.output, &g_a);
        (objective, self.actor.backward(&a_trace, &g_raw).0)
    }

    /// One critic and one actor update on `items`.
    pub fn train_on(&mut self, items: &[Transition]) -> TrainStats {
        let (critic_loss, cg) = self.critic_loss_and_grads(items);
        self.critic_opt.apply(&mut self.critic, &cg);
        let (actor_objective, ag) = self.actor_objective_and_grads(items);
        self.actor_opt.apply(&mut self.actor, &ag);
        TrainStats { critic_loss, actor_objective, updated: true }
    }

    /// Samples a batch once the replay buffer is warm and trains on it.
    pub fn train_step(&mut self) -> TrainStats {
        if self.replay.len() < self.cfg.effective_warmup().max(self.cfg.batch) {
            return TrainStats { critic_loss: 0.0, actor_objective: 0.0, updated: false };
        }
        let items = self.replay.sample(self.cfg.batch, &mut self.rng);
        self.train_on(&items)
    }

    pub fn soft_update(&mut self) {
        let tau = self.cfg.soft_tau;
        self.target_actor.soft_update_from(&self.actor, tau);
        self.target_critic.soft_update_from(&self.critic, tau);
    }

    /// Writes a text checkpoint: a header line per network with its layer
    /// sizes, then every parameter on its own line.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        let nets = self.networks();
        writeln!(out, "ristopo-ddpg 1")?;
        for (name, net) in &nets {
            let sizes: Vec<String> = net.sizes().iter().map(usize::to_string).collect();
            writeln!(out, "{name} {}", sizes.join(" "))?;
        }
        for (_, net) in &nets {
            for p in net.flat_params() {
                writeln!(out, "{p:?}")?;
            }
        }
        Ok(())
    }

    /// Restores parameters saved by [`DdpgAgent::save`] into an agent of the same shape.
    pub fn load<R: BufRead>(&mut self, input: R) -> Result<()> {
        let mut lines = input.lines().enumerate();
        let mut next = || -> Result<(usize, String)> {
            match lines.next() {
                Some((i, l)) => Ok((i + 1, l?)),
                None => Err(Error::Parse { line: 0, msg: "checkpoint ended early".into() }),
            }
        };
        let (line, header) = next()?;
        if header.trim() != "ristopo-ddpg 1" {
            return Err(Error::Parse { line, msg: "not a ristopo-ddpg checkpoint".into() });
        }
        let expected: Vec<(&str, Vec<usize>)> = self.networks().iter().map(|(n, m)| (*n, m.sizes())).collect();
        for (name, sizes) in &expected {
            let (line, l) = next()?;
            let mut parts = l.split_whitespace();
            let got: Vec<usize> = parts.by_ref().skip(1).map(|p| p.parse().unwrap_or(usize::MAX)).collect();
            if !l.starts_with(name) || &got != sizes {
                return Err(Error::Parse { line, msg: format!("shape mismatch for {name}") });
            }
        }
        let mut flats = Vec::new();
        for (_, net) in self.networks() {
            let mut v = Vec::with_capacity(net.param_count());
            for _ in 0..net.param_count() {
                let (line, l) = next()?;
                v.push(l.trim().parse::<f64>().map_err(|_| Error::Parse { line, msg: "bad parameter".into() })?);
            }
            flats.push(v);
        }
        for (net, flat) in
            [&mut self.actor, &mut self.target_actor, &mut self.critic, &mut self.target_critic].into_iter().zip(flats)
        {
            net.set_flat_params(&flat)?;
        }
        Ok(())
    }

    fn networks(&self) -> [(&'static str, &Mlp); 4] {
        [
            ("actor", &self.actor),
            ("target_actor", &self.target_actor),
            ("critic", &self.critic),
            ("target_critic", &self.target_critic),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeStats {
    pub episode: usize,
    /// Mean reward per step in bits/s.
    pub mean_reward: f64,
    /// Fraction of steps with at least one missed target.
    pub penalty_rate: f64,
}

/// Seed of the channel draw used by training episode `episode`.
pub fn episode_seed(master: u64, episode: usize) -> u64 {
    master.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(episode as u64 + 1)
}

/// Runs `episodes × steps` environment interactions with learning once
/// the replay buffer is warm. Channel draws come from `episode_seed`.
/// `on_action` sees every emitted phase vector.
pub fn train_with(
    env: &RisEnv,
    agent: &mut DdpgAgent,
    episodes: usize,
    steps: usize,
    master_seed: u64,
    mut on_action: impl FnMut(&PhaseShiftVector),
) -> Result<Vec<EpisodeStats>> {
    if agent.state_dim() != env.state_dim() || agent.action_dim() != env.action_dim() {
        return Err(Error::InvalidArgument("agent shape does not match the environment".into()));
    }
    let unit = agent.cfg.reward_unit.unwrap_or(env.reward.thresholds.r_upper);
    let mut curve = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let ch = env.sample(episode_seed(master_seed, episode))?;
        let mut state = env.initial_state(&ch);
        let (mut total, mut violations) = (0.0, 0usize);
        for _ in 0..steps {
            let phi = agent.act(&state, true);
            on_action(&phi);
            let (_, r, next) = env.step(&ch, &phi);
            total += r.total;
            violations += usize::from(r.penalty > 0.0);
            agent.replay.push(Transition {
                state: state.to_array(),
                action: Array1::from(interleave(phi.coefficients())),
                reward: r.total / unit,
                next_state: next.to_array(),
            });
            if agent.train_step().updated {
                agent.soft_update();
            }
            state = next;
        }
        agent.noise_sigma *= agent.cfg.noise_decay;
        let denom = steps.max(1) as f64;
        curve.push(EpisodeStats { episode, mean_reward: total / denom, penalty_rate: violations as f64 / denom });
    }
    Ok(curve)
}

pub fn train(
    env: &RisEnv,
    agent: &mut DdpgAgent,
    episodes: usize,
    steps: usize,
    master_seed: u64,
) -> Result<Vec<EpisodeStats>> {
    train_with(env, agent, episodes, steps, master_seed, |_| {})
}

pub fn write_curve_csv<W: Write>(curve: &[EpisodeStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "mean_reward", "penalty_rate"])?;
    for e in curve {
        w.write_record([e.episode.to_string(), e.mean_reward.to_string(), e.penalty_rate.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkOutcome {
    pub tx: usize,
    pub rx: usize,
    pub constructive: bool,
    pub rate: f64,
    pub threshold: f64,
    pub met: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DrawOutcome {
    pub seed: u64,
    pub links: Vec<LinkOutcome>,
    pub phases: PhaseShiftVector,
    /// `|h + cascade|` on each deconstructed link under the agent's phases.
    pub agent_residuals: Vec<f64>,
    /// The same quantity under [`channel::direct_control`].
    pub baseline_residuals: Vec<f64>,
}

impl DrawOutcome {
    pub fn all_met(&self) -> bool {
        self.links.iter().all(|l| l.met)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub draws: Vec<DrawOutcome>,
}

impl EvalReport {
    pub fn success_rate(&self) -> f64 {
        if self.draws.is_empty() {
            return 0.0;
        }
        self.draws.iter().filter(|d| d.all_met()).count() as f64 / self.draws.len() as f64
    }

    /// Fraction of draws where the agent's worst deconstruction residual is
    /// below the baseline's.
    pub fn beats_baseline_rate(&self) -> f64 {
        let wins = self
            .draws
            .iter()
            .filter(|d| {
                let worst = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
                !d.agent_residuals.is_empty() && worst(&d.agent_residuals) < worst(&d.baseline_residuals)
            })
            .count();
        wins as f64 / self.draws.len().max(1) as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["draw", "link", "target_type", "achieved_rate", "threshold", "met"])?;
        for d in &self.draws {
            for l in &d.links {
                w.write_record([
                    d.seed.to_string(),
                    format!("{}-{}", l.tx, l.rx),
                    if l.constructive { "construct" } else { "deconstruct" }.to_string(),
                    l.rate.to_string(),
                    l.threshold.to_string(),
                    l.met.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Rolls the greedy policy for `steps` steps on each held-out draw, starting
/// from zero phases, and keeps the highest-reward action it emitted.
pub fn evaluate(env: &RisEnv, agent: &DdpgAgent, seeds: &[u64], steps: usize) -> Result<EvalReport> {
    let draws = seeds
        .par_iter()
        .map(|&seed| -> Result<DrawOutcome> {
            let ch = env.sample(seed)?;
            let mut local = agent.clone();
            let mut state = env.initial_state(&ch);
            let mut best: Option<(f64, PhaseShiftVector)> = None;
            for _ in 0..steps.max(1) {
                let phi = local.act(&state, false);
                let (_, r, next) = env.step(&ch, &phi);
                if best.as_ref().is_none_or(|(b, _)| r.total > *b) {
                    best = Some((r.total, phi));
                }
                state = next;
            }
            let phases = best.expect("at least one step").1;
            outcome(env, &ch, seed, phases)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { draws })
}

/// Scores a fixed phase vector on one draw against targets and the baseline.
pub fn outcome(env: &RisEnv, ch: &ChannelSet, seed: u64, phases: PhaseShiftVector) -> Result<DrawOutcome> {
    let rates = env.rates(ch, &phases);
    let links = env
        .targets()
        .iter()
        .zip(&rates)
        .map(|(t, &rate)| LinkOutcome {
            tx: t.tx,
            rx: t.rx,
            constructive: t.is_constructive(),
            rate,
            threshold: t.target.threshold(),
            met: t.target.is_met(rate),
        })
        .collect();
    let decon: Vec<(usize, usize)> = env.reward.plan.deconstruct.iter().copied().collect();
    let agent_residuals = decon.iter().map(|&(a, b)| channel::effective_gain(ch, &phases, a, b).norm()).collect();
    let baseline_residuals = if decon.is_empty() {
        Vec::new()
    } else {
        channel::direct_control(ch, &env.reward.plan)?.residuals.into_iter().map(|(_, r)| r).collect()
    };
    Ok(DrawOutcome { seed, links, phases, agent_residuals, baseline_residuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Obstruction;

    fn thresholds(up: f64, low: f64) -> RateThresholds {
        RateThresholds { r_upper: up, r_lower: low, traffic_volume: 1.0 }
    }

    #[test]
    fn reward_hand_example() {
        let t = |tx, target| LinkTarget { tx, rx: 9, target };
        let targets = [t(0, RateTarget::AtLeast(9.0)), t(1, RateTarget::AtLeast(9.0)), t(2, RateTarget::AtMost(1.0))];
        let r = reward(&targets, &[10.0, 8.0, 2.0], 0.5);
        assert_eq!(r.total, 15.0);
        assert_eq!(r.bonus, 16.0);
        assert_eq!(r.penalty, 2.0);

        let r = reward(&targets, &[10.0, 9.5, 0.5], 0.5);
        assert_eq!(r.penalty, 0.0);
        let r = reward(&targets, &[1.0, 1.0, 7.0], 0.0);
        assert_eq!(r.total, r.bonus);
    }

    #[test]
    fn state_encoding() {
        let s = encode_state(&[5.0, 5.0], &PhaseShiftVector::identity(2), RateBounds { min: 0.0, max: 5.0 }).unwrap();
        assert_eq!(s.normalized_rates, vec![1.0, 1.0]);
        assert_eq!(s.prev_phase, vec![1.0, 0.0, 1.0, 0.0]);
        let phi = PhaseShiftVector::from_angles(&[0.3, -2.0, 1.0]);
        let s = encode_state(&[0.0], &phi, RateBounds { min: 0.0, max: 1.0 }).unwrap();
        assert_eq!(s.prev_phases(), phi);
        assert_eq!(s.to_array().len(), 2 * 3 + 1);
        assert!(encode_state(&[0.0], &phi, RateBounds { min: 1.0, max: 1.0 }).is_err());
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_pairs(&[2.0, 0.0, 0.0, 3.0]), vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(project_pairs(&[0.0, 0.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn replay_is_fifo() {
        let mut rb = ReplayBuffer::new(3);
        for i in 0..5 {
            rb.push(Transition {
                state: Array1::from(vec![i as f64]),
                action: Array1::zeros(2),
                reward: 0.0,
                next_state: Array1::zeros(1),
            });
        }
        assert_eq!(rb.len(), 3);
        assert_eq!(rb.get(0).unwrap().state[0], 2.0);
        assert_eq!(rb.get(2).unwrap().state[0], 4.0);
    }

    fn tiny_env() -> RisEnv {
        let geometry = Geometry {
            car_positions: vec![[0.0, -20.0, 1.5], [0.0, 20.0, 1.5]],
            ris_position: [8.0, 0.0, 5.0],
            obstructions: vec![Obstruction { min: [-5.0, -3.0, 0.0], max: [5.0, 3.0, 20.0] }],
            ris_elements: 4,
            element_spacing_m: 0.05,
        };
        let reward = RewardConfig {
            gamma_penalty: 1.0,
            thresholds: thresholds(40e6, 1e6),
            plan: LinkPlan::new(&[(0, 1)], &[]),
        };
        RisEnv::new(geometry, ChannelParams::default(), reward, RateBounds { min: 0.0, max: 60e6 }).unwrap()
    }

    fn small_cfg() -> DdpgConfig {
        DdpgConfig { actor_hidden: vec![16, 12], critic_hidden: vec![16, 12], warmup: Some(8), ..DdpgConfig::default() }
    }

    fn frozen_batch(env: &RisEnv, agent: &mut DdpgAgent) -> Vec<Transition> {
        let ch = env.sample(1).unwrap();
        let mut state = env.initial_state(&ch);
        let mut out = Vec::new();
        for _ in 0..8 {
            let phi = agent.act(&state, true);
            let (_, r, next) = env.step(&ch, &phi);
            out.push(Transition {
                state: state.to_array(),
                action: Array1::from(interleave(phi.coefficients())),
                reward: r.total / 1e7,
                next_state: next.to_array(),
            });
            state = next;
        }
        out
    }

    fn assert_fd(analytic: &[f64], net: &mut Mlp, mut f: impl FnMut(&Mlp) -> f64) {
        let mut flat = net.flat_params();
        let h = 1e-6;
        for k in 0..flat.len() {
            let orig = flat[k];
            flat[k] = orig + h;
            net.set_flat_params(&flat).unwrap();
            let up = f(net);
            flat[k] = orig - h;
            net.set_flat_params(&flat).unwrap();
            let down = f(net);
            flat[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let scale = fd.abs().max(analytic[k].abs()).max(1e-6);
            assert!((fd - analytic[k]).abs() <= 1e-4 * scale, "param {k}: fd {fd} analytic {}", analytic[k]);
        }
        net.set_flat_params(&flat).unwrap();
    }

    #[test]
    fn critic_and_actor_gradients_match_finite_differences() {
        let env = tiny_env();
        let mut agent = DdpgAgent::new(small_cfg(), env.state_dim(), env.action_dim(), 4).unwrap();
        // perturb so targets and online nets differ and outputs are not tiny
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for net in [&mut agent.actor, &mut agent.critic] {
            let p: Vec<f64> = net.flat_params().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
            net.set_flat_params(&p).unwrap();
        }
        let batch = frozen_batch(&env, &mut agent);

        let (_, g) = agent.critic_loss_and_grads(&batch);
        let mut probe = agent.clone();
        let mut critic = probe.critic.clone();
        assert_fd(&g.flat(), &mut critic, |c| {
            probe.critic = c.clone();
            probe.critic_loss_and_grads(&batch).0
        });

        let (_, g) = agent.actor_objective_and_grads(&batch);
        let mut probe = agent.clone();
        let mut actor = probe.actor.clone();
        assert_fd(&g.flat(), &mut actor, |a| {
            probe.actor = a.clone();
            -probe.actor_objective_and_grads(&batch).0
        });
    }

    #[test]
    fn zero_reward_zero_target_gives_mean_q_squared() {
        let env = tiny_env();
        let mut agent = DdpgAgent::new(small_cfg(), env.state_dim(), env.action_dim(), 2).unwrap();
        let mut batch = frozen_batch(&env, &mut agent);
        for t in &mut batch {
            t.reward = 0.0;
        }
        let zero = vec![0.0; agent.target_critic.param_count()];
        agent.target_critic.set_flat_params(&zero).unwrap();
        let (loss, _) = agent.critic_loss_and_grads(&batch);
        let q: Vec<f64> = batch
            .iter()
            .map(|t| {
                let x: Array1<f64> = t.state.iter().chain(&t.action).copied().collect();
                agent.critic.predict(&x)[0]
            })
            .collect();
        let mean_sq = q.iter().map(|v| v * v).sum::<f64>() / q.len() as f64;
        assert!((loss - mean_sq).abs() <= 1e-12 * mean_sq.max(1e-300));
    }

    #[test]
    fn train_step_changes_actor() {
        let env = tiny_env();
        let mut agent = DdpgAgent::new(small_cfg(), env.state_dim(), env.action_dim(), 2).unwrap();
        assert!(!agent.train_step().updated);
        let batch = frozen_batch(&env, &mut agent);
        let before = agent.actor.flat_params();
        agent.train_on(&batch);
        assert_ne!(agent.actor.flat_params(), before);
    }

    #[test]
    fn greedy_actions_are_deterministic() {
        let env = tiny_env();
        let mut agent = DdpgAgent::new(small_cfg(), env.state_dim(), env.action_dim(), 2).unwrap();
        let ch = env.sample(0).unwrap();
        let s = env.initial_state(&ch);
        assert_eq!(agent.act(&s, false), agent.act(&s, false));
    }

    #[test]
    fn zero_episodes_is_a_no_op() {
        let env = tiny_env();
        let mut agent = DdpgAgent::new(small_cfg(), env.state_dim(), env.action_dim(), 2).unwrap();
        let before = agent.actor.clone();
        assert!(train(&env, &mut agent, 0, 10, 1).unwrap().is_empty());
        assert_eq!(agent.actor, before);
    }

    #[test]
    fn training_is_reproducible_and_unit_modulus() {
        let env = tiny_env();
        let run = || {
            let mut agent = DdpgAgent::new(small_cfg(), env.state_dim(), env.action_dim(), 5).unwrap();
            let mut all_unit = true;
            let curve = train_with(&env, &mut agent, 3, 10, 8, |phi| all_unit &= phi.is_unit_modulus()).unwrap();
            assert!(all_unit);
            (curve, agent.actor.flat_params())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_round_trip() {
        let env = tiny_env();
        let mut agent = DdpgAgent::new(small_cfg(), env.state_dim(), env.action_dim(), 5).unwrap();
        train(&env, &mut agent, 2, 10, 3).unwrap();
        let mut buf = Vec::new();
        agent.save(&mut buf).unwrap();
        let mut other = DdpgAgent::new(small_cfg(), env.state_dim(), env.action_dim(), 6).unwrap();
        other.load(buf.as_slice()).unwrap();
        assert_eq!(other.actor, agent.actor);
        assert_eq!(other.target_critic, agent.target_critic);
        let mut wrong = DdpgAgent::new(DdpgConfig::default(), env.state_dim(), env.action_dim(), 6).unwrap();
        assert!(wrong.load(buf.as_slice()).is_err());
    }

    #[test]
    fn tiny_scenario_learns() {
        let env = tiny_env();
        let mut agent = DdpgAgent::new(DdpgConfig::default(), env.state_dim(), env.action_dim(), 11).unwrap();
        let curve = train(&env, &mut agent, 200, 50, 13).unwrap();
        let mean = |s: &[EpisodeStats]| s.iter().map(|e| e.mean_reward).sum::<f64>() / s.len() as f64;
        let (first, last) = (mean(&curve[..100]), mean(&curve[100..]));
        assert!(last > first, "first {first} last {last}");
    }
}
