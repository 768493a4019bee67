//! Config-driven experiment runs.
//!
//! A scenario file is TOML with dotted sections (`channel.rice_factor = 10`).
//! Every key has a default and unknown keys are rejected. Stages write CSV
//! artifacts into an output directory alongside `manifest.txt`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{presets as geometry_presets, ChannelParams, Geometry, Obstruction, Point};
use crate::consensus::{self, Stability};
use crate::controller::{self, DdpgAgent, DdpgConfig, RateBounds, RewardConfig, RisEnv};
use crate::error::{Error, Result};
use crate::flbench::{self, DatasetSpec, FlConfig, FlMode, TrainSettings};
use crate::graph::{presets, Graph};
use crate::planner::{self, LinkPlan, PlannerConfig, RateThresholds};
use crate::spectral::{self, DEFAULT_BRUTE_FORCE_CAP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Spectrum,
    Audit,
    Plan,
    #[serde(alias = "consensus")]
    ConsensusSweep,
    TrainRis,
    #[serde(alias = "eval-ris")]
    EvaluateRis,
    #[serde(alias = "fl")]
    FlBench,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Spectrum,
        Stage::Audit,
        Stage::Plan,
        Stage::ConsensusSweep,
        Stage::TrainRis,
        Stage::EvaluateRis,
        Stage::FlBench,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Spectrum => "spectrum",
            Stage::Audit => "audit",
            Stage::Plan => "plan",
            Stage::ConsensusSweep => "consensus-sweep",
            Stage::TrainRis => "train-ris",
            Stage::EvaluateRis => "evaluate-ris",
            Stage::FlBench => "fl-bench",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphSection {
    /// `star8`, `ring8`, `path-N`, `fig3a-candidate` or `fig3b-candidate`.
    pub preset: String,
    /// Edge-list file; overrides `preset` when set. Relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge_list: Option<PathBuf>,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self { preset: "fig3a-candidate".into(), edge_list: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusSection {
    /// Absolute delays to sweep. Empty means `delay_factors × τ*`.
    pub delays: Vec<f64>,
    pub delay_factors: Vec<f64>,
    pub horizon: f64,
}

impl Default for ConsensusSection {
    fn default() -> Self {
        Self { delays: Vec::new(), delay_factors: vec![0.5, 0.8, 0.9, 1.1, 1.2, 1.5], horizon: 200.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySection {
    /// `platoon`, or empty to use the explicit positions below.
    pub preset: String,
    pub ris_elements: usize,
    pub element_spacing_m: f64,
    pub car_positions: Vec<Point>,
    pub ris_position: Point,
    pub obstructions: Vec<Obstruction>,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            preset: "platoon".into(),
            ris_elements: 16,
            element_spacing_m: 0.05,
            car_positions: Vec::new(),
            ris_position: [0.0; 3],
            obstructions: Vec::new(),
        }
    }
}

impl GeometrySection {
    pub fn build(&self) -> Result<Geometry> {
        let g = match self.preset.as_str() {
            "platoon" => Geometry { element_spacing_m: self.element_spacing_m, ..geometry_presets::platoon(self.ris_elements) },
            "" => Geometry {
                car_positions: self.car_positions.clone(),
                ris_position: self.ris_position,
                obstructions: self.obstructions.clone(),
                ris_elements: self.ris_elements,
                element_spacing_m: self.element_spacing_m,
            },
            other => return Err(Error::Config(format!("geometry.preset: unknown preset '{other}'"))),
        };
        g.validate()?;
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdSection {
    /// Model size shared per exchange, bits.
    pub traffic_volume: f64,
    /// Rate a deconstructed link may keep, bits/s.
    pub r_lower: f64,
}

impl Default for ThresholdSection {
    fn default() -> Self {
        Self { traffic_volume: 7.25e6, r_lower: 20e6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RisSection {
    /// Explicit plan; when both lists are empty the planner's output is used.
    pub construct: Vec<[usize; 2]>,
    pub deconstruct: Vec<[usize; 2]>,
    pub gamma_penalty: f64,
    pub episodes: usize,
    pub steps: usize,
    pub eval_draws: usize,
    pub eval_steps: usize,
    /// Held-out channel seeds are `eval_seed_base + k`.
    pub eval_seed_base: u64,
    /// Upper end of the rate normalization, as a multiple of `r_upper`.
    pub rate_ceiling: f64,
}

impl Default for RisSection {
    fn default() -> Self {
        Self {
            construct: Vec::new(),
            deconstruct: Vec::new(),
            gamma_penalty: 1.0,
            episodes: 300,
            steps: 50,
            eval_draws: 50,
            eval_steps: 20,
            eval_seed_base: 1_000_000,
            rate_ceiling: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpgSection {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub discount: f64,
    pub soft_tau: f64,
    pub replay_capacity: usize,
    pub batch: usize,
    /// 0 means `max(batch, 1000)`.
    pub warmup: usize,
    pub noise_sigma: f64,
    pub noise_decay: f64,
    /// 0 means the scenario's `r_upper`.
    pub reward_unit: f64,
}

impl Default for DdpgSection {
    fn default() -> Self {
        let d = DdpgConfig::default();
        Self {
            actor_hidden: d.actor_hidden,
            critic_hidden: d.critic_hidden,
            actor_lr: d.actor_lr,
            critic_lr: d.critic_lr,
            discount: d.discount,
            soft_tau: d.soft_tau,
            replay_capacity: d.replay_capacity,
            batch: d.batch,
            warmup: 0,
            noise_sigma: d.noise_sigma,
            noise_decay: d.noise_decay,
            reward_unit: 0.0,
        }
    }
}

impl DdpgSection {
    pub fn to_config(&self) -> DdpgConfig {
        DdpgConfig {
            actor_hidden: self.actor_hidden.clone(),
            critic_hidden: self.critic_hidden.clone(),
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            discount: self.discount,
            soft_tau: self.soft_tau,
            replay_capacity: self.replay_capacity,
            batch: self.batch,
            warmup: (self.warmup > 0).then_some(self.warmup),
            noise_sigma: self.noise_sigma,
            noise_decay: self.noise_decay,
            reward_unit: (self.reward_unit > 0.0).then_some(self.reward_unit),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlSection {
    pub modes: Vec<String>,
    pub repeats: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub hidden: usize,
    pub n_samples: usize,
    pub dim: usize,
    pub classes: usize,
    pub latent_dim: usize,
    pub noise: f64,
    pub train_fraction: f64,
    pub sharing_step: f64,
    pub sharing_horizon: f64,
    /// Link delay during sharing as a multiple of each topology's `τ*`.
    pub delay_factor: f64,
}

impl Default for FlSection {
    fn default() -> Self {
        let c = FlConfig::default();
        let d = DatasetSpec::default();
        Self {
            modes: FlMode::ALL.iter().map(|m| m.as_str().to_string()).collect(),
            repeats: 5,
            rounds: c.rounds,
            local_epochs: c.local_epochs,
            lr: c.train.lr,
            batch: c.train.batch,
            hidden: c.hidden,
            n_samples: d.n_samples,
            dim: d.dim,
            classes: d.classes,
            latent_dim: d.latent_dim,
            noise: d.noise,
            train_fraction: d.train_fraction,
            sharing_step: c.sharing_step,
            sharing_horizon: c.sharing_horizon,
            delay_factor: 0.9,
        }
    }
}

impl FlSection {
    pub fn to_config(&self, delay: f64) -> FlConfig {
        FlConfig {
            dataset: DatasetSpec {
                n_samples: self.n_samples,
                dim: self.dim,
                classes: self.classes,
                latent_dim: self.latent_dim,
                noise: self.noise,
                train_fraction: self.train_fraction,
            },
            hidden: self.hidden,
            train: TrainSettings { lr: self.lr, batch: self.batch },
            local_epochs: self.local_epochs,
            rounds: self.rounds,
            sharing_step: self.sharing_step,
            sharing_horizon: self.sharing_horizon,
            delay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub stages: Vec<Stage>,
    pub graph: GraphSection,
    pub planner: PlannerConfig,
    pub consensus: ConsensusSection,
    pub channel: ChannelParams,
    pub geometry: GeometrySection,
    pub thresholds: ThresholdSection,
    pub ris: RisSection,
    pub ddpg: DdpgSection,
    pub fl: FlSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            stages: Vec::new(),
            graph: GraphSection::default(),
            planner: PlannerConfig::default(),
            consensus: ConsensusSection::default(),
            channel: ChannelParams::default(),
            geometry: GeometrySection::default(),
            thresholds: ThresholdSection::default(),
            ris: RisSection::default(),
            ddpg: DdpgSection::default(),
            fl: FlSection::default(),
        }
    }
}

/// A parsed config plus the dotted keys the file set explicitly.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedConfig {
    pub config: ScenarioConfig,
    pub explicit_keys: BTreeSet<String>,
    /// Directory that relative paths in the config resolve against.
    pub base_dir: PathBuf,
}

fn leaf_keys(prefix: &str, value: &toml::Value, out: &mut BTreeSet<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaf_keys(&key, v, out);
            }
        }
        _ => {
            out.insert(prefix.to_string());
        }
    }
}

impl ScenarioConfig {
    /// Parses TOML text. Errors carry the line and field from the parser.
    pub fn parse(text: &str) -> Result<LoadedConfig> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let table: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut explicit_keys = BTreeSet::new();
        leaf_keys("", &table, &mut explicit_keys);
        config.validate()?;
        Ok(LoadedConfig { config, explicit_keys, base_dir: PathBuf::from(".") })
    }

    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut loaded = Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        loaded.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(loaded)
    }

    /// Semantic checks beyond what the parser enforces.
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, e: Error| Error::Config(format!("{name}: {e}"));
        // TOML integers are signed 64-bit
        if self.seed > i64::MAX as u64 || self.ris.eval_seed_base > i64::MAX as u64 {
            return Err(Error::Config(format!("seed: must be at most {}", i64::MAX)));
        }
        self.planner.validate().map_err(|e| field("planner", e))?;
        self.channel.validate().map_err(|e| field("channel", e))?;
        self.ddpg.to_config().validate().map_err(|e| field("ddpg", e))?;
        if self.graph.edge_list.is_none() {
            presets::by_name(&self.graph.preset).map_err(|e| field("graph.preset", e))?;
        }
        if !(self.consensus.horizon > 0.0) {
            return Err(Error::Config("consensus.horizon: must be positive".into()));
        }
        if self.consensus.delays.iter().chain(&self.consensus.delay_factors).any(|d| !(*d >= 0.0)) {
            return Err(Error::Config("consensus.delays: values must be >= 0".into()));
        }
        if !(self.thresholds.traffic_volume > 0.0) || !(self.thresholds.r_lower >= 0.0) {
            return Err(Error::Config("thresholds: traffic_volume must be > 0 and r_lower >= 0".into()));
        }
        if !(self.ris.gamma_penalty >= 0.0) || !(self.ris.rate_ceiling > 0.0) {
            return Err(Error::Config("ris: gamma_penalty must be >= 0 and rate_ceiling > 0".into()));
        }
        for m in &self.fl.modes {
            FlMode::parse(m).map_err(|e| field("fl.modes", e))?;
        }
        if !(self.fl.delay_factor >= 0.0) || !(self.fl.sharing_step > 0.0) || self.fl.repeats == 0 {
            return Err(Error::Config("fl: delay_factor >= 0, sharing_step > 0 and repeats > 0 required".into()));
        }
        Ok(())
    }

    /// Canonical TOML of the effective config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Dotted keys that take their default value because the file left them out.
    pub fn defaults_not_set(explicit: &BTreeSet<String>) -> Vec<String> {
        let full = toml::Value::try_from(ScenarioConfig::default()).expect("config serializes");
        let mut all = BTreeSet::new();
        leaf_keys("", &full, &mut all);
        all.into_iter().filter(|k| !explicit.contains(k)).collect()
    }
}

/// Failure while running a stage, tagged with the stage name.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {} failed: {}", self.stage.as_str(), self.source)
    }
}

impl std::error::Error for StageError {}

/// Everything a run needs: config, where relative paths resolve, output dir.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub loaded: LoadedConfig,
    pub out_dir: PathBuf,
}

impl Scenario {
    pub fn new(loaded: LoadedConfig, out_dir: impl Into<PathBuf>) -> Self {
        Self { loaded, out_dir: out_dir.into() }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.loaded.config
    }

    pub fn graph(&self) -> Result<Graph> {
        let gs = &self.config().graph;
        match &gs.edge_list {
            Some(p) => {
                let path = self.loaded.base_dir.join(p);
                let text = fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("graph.edge_list: {}: {e}", path.display())))?;
                Graph::parse_edge_list(&text)
            }
            None => presets::by_name(&gs.preset),
        }
    }

    /// The configured plan, or the planner's output when none is configured.
    pub fn ris_plan(&self) -> Result<LinkPlan> {
        let r = &self.config().ris;
        if r.construct.is_empty() && r.deconstruct.is_empty() {
            return planner::plan_revision(&self.graph()?, &self.config().planner);
        }
        let pairs = |v: &[[usize; 2]]| v.iter().map(|p| (p[0], p[1])).collect::<Vec<_>>();
        Ok(LinkPlan::new(&pairs(&r.construct), &pairs(&r.deconstruct)))
    }

    pub fn ris_env(&self) -> Result<RisEnv> {
        let cfg = self.config();
        let g = self.graph()?;
        let plan = self.ris_plan()?;
        let revised = plan.apply(&g)?;
        let lambda_max = spectral::laplacian_spectrum(&revised).lambda_max;
        let thresholds = RateThresholds::new(cfg.thresholds.traffic_volume, lambda_max, cfg.thresholds.r_lower)?;
        let reward = RewardConfig { gamma_penalty: cfg.ris.gamma_penalty, thresholds, plan };
        let bounds = RateBounds { min: 0.0, max: cfg.ris.rate_ceiling * thresholds.r_upper };
        RisEnv::new(cfg.geometry.build()?, cfg.channel.clone(), reward, bounds)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<String> {
        fs::write(self.path(name), bytes)?;
        Ok(name.to_string())
    }

    /// Runs `stages` in order, then writes the manifest. Returns the files written.
    pub fn run(&self, stages: &[Stage]) -> std::result::Result<Vec<String>, StageError> {
        fs::create_dir_all(&self.out_dir)
            .map_err(|e| StageError { stage: stages.first().copied().unwrap_or(Stage::Spectrum), source: e.into() })?;
        let mut files = Vec::new();
        for &stage in stages {
            let out = self.run_stage(stage).map_err(|source| StageError { stage, source })?;
            files.extend(out);
        }
        let manifest = self.manifest(stages, &files);
        self.write("manifest.txt", manifest)
            .map_err(|source| StageError { stage: stages.last().copied().unwrap_or(Stage::Spectrum), source })?;
        Ok(files)
    }

    pub fn manifest(&self, stages: &[Stage], files: &[String]) -> String {
        let cfg = self.config();
        let mut m = String::new();
        let _ = writeln!(m, "tool = ristopo {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(m, "config_sha256 = {}", cfg.hash());
        let _ = writeln!(m, "seed = {}", cfg.seed);
        let names: Vec<&str> = stages.iter().map(|s| s.as_str()).collect();
        let _ = writeln!(m, "stages = [{}]", names.join(", "));
        for f in files {
            let _ = writeln!(m, "file = {f}");
        }
        for k in ScenarioConfig::defaults_not_set(&self.loaded.explicit_keys) {
            let _ = writeln!(m, "default = {k}");
        }
        m.push_str("\n[effective config]\n");
        m.push_str(&cfg.to_toml());
        m
    }

    pub fn run_stage(&self, stage: Stage) -> Result<Vec<String>> {
        match stage {
            Stage::Spectrum => self.stage_spectrum(),
            Stage::Audit => self.stage_audit(),
            Stage::Plan => self.stage_plan(),
            Stage::ConsensusSweep => self.stage_consensus(),
            Stage::TrainRis => self.stage_train_ris(),
            Stage::EvaluateRis => self.stage_eval_ris(),
            Stage::FlBench => self.stage_fl(),
        }
    }

    fn stage_spectrum(&self) -> Result<Vec<String>> {
        let g = self.graph()?;
        let s = spectral::laplacian_spectrum(&g);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["quantity", "value"])?;
        let mut row = |k: &str, v: f64| w.write_record([k.to_string(), v.to_string()]);
        row("lambda2", s.lambda2)?;
        row("lambda_max", s.lambda_max)?;
        if s.lambda_max > 0.0 {
            row("tolerable_delay", spectral::tolerable_delay(s.lambda_max)?)?;
        }
        if g.is_connected() && g.node_count() >= 2 && g.node_count() <= DEFAULT_BRUTE_FORCE_CAP {
            let c = spectral::cheeger_bounds(&g, DEFAULT_BRUTE_FORCE_CAP)?;
            row("lambda2_normalized", c.lambda2_normalized)?;
            row("cheeger_lower", c.lower)?;
            row("conductance", c.phi)?;
            row("cheeger_upper", c.upper)?;
        }
        for (k, v) in s.eigenvalues.iter().enumerate() {
            row(&format!("eigenvalue_{k}"), *v)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(vec![self.write("spectrum.csv", bytes)?])
    }

    fn stage_audit(&self) -> Result<Vec<String>> {
        let g = self.graph()?;
        let a = planner::criteria_audit(&g, &self.config().planner);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["criterion", "satisfied", "detail"])?;
        w.write_record([
            "degree_cap",
            &a.degree_ok.to_string(),
            &format!("node {} has degree {}", a.worst_node.0, a.worst_node.1),
        ])?;
        w.write_record(["odd_cycle", &a.odd_cycle_ok.to_string(), ""])?;
        let pairs: Vec<String> = a.diameter_pairs.iter().map(|(u, v, d)| format!("{u}-{v}:{d}")).collect();
        w.write_record(["diameter_pairs", &a.diameter_pairs.is_empty().to_string(), &pairs.join(" ")])?;
        let viol: Vec<String> = a.singleton_violations.iter().map(|(n, (x, y))| format!("{n}:{x}-{y}")).collect();
        w.write_record(["singleton_neighbors", &a.singleton_violations.is_empty().to_string(), &viol.join(" ")])?;
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(vec![self.write("audit.csv", bytes)?])
    }

    fn stage_plan(&self) -> Result<Vec<String>> {
        let g = self.graph()?;
        let cfg = &self.config().planner;
        let plan = planner::plan_revision(&g, cfg)?;
        let revised = plan.apply(&g)?;
        let (before, after) = (spectral::laplacian_spectrum(&g), spectral::laplacian_spectrum(&revised));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["quantity", "before", "after"])?;
        let pairs = [
            ("lambda2", before.lambda2, after.lambda2),
            ("lambda_max", before.lambda_max, after.lambda_max),
            ("p1", planner::p1_score(&g, cfg)?, planner::p1_score(&revised, cfg)?),
            (
                "tolerable_delay",
                spectral::tolerable_delay(before.lambda_max)?,
                spectral::tolerable_delay(after.lambda_max)?,
            ),
        ];
        for (k, b, a) in pairs {
            w.write_record([k.to_string(), b.to_string(), a.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(vec![
            self.write("plan.txt", plan.to_text())?,
            self.write("plan_summary.csv", bytes)?,
            self.write("revised_graph.txt", revised.to_edge_list())?,
        ])
    }

    fn stage_consensus(&self) -> Result<Vec<String>> {
        let g = self.graph()?;
        let c = &self.config().consensus;
        let s = spectral::laplacian_spectrum(&g);
        let bound = spectral::tolerable_delay(s.lambda_max)?;
        let delays: Vec<f64> = if c.delays.is_empty() {
            c.delay_factors.iter().map(|f| f * bound).collect()
        } else {
            c.delays.clone()
        };
        let points = consensus::stability_sweep(&g, &delays, &consensus::ramp_init(g.node_count()), c.horizon)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["delay", "delay_over_bound", "stability", "final_deviation"])?;
        for p in &points {
            w.write_record([
                p.delay.to_string(),
                (p.delay / bound).to_string(),
                p.stability.as_str().to_string(),
                p.final_deviation.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(vec![self.write("consensus_sweep.csv", bytes)?])
    }

    fn new_agent(&self, env: &RisEnv) -> Result<DdpgAgent> {
        DdpgAgent::new(self.config().ddpg.to_config(), env.state_dim(), env.action_dim(), self.config().seed)
    }

    fn stage_train_ris(&self) -> Result<Vec<String>> {
        let env = self.ris_env()?;
        let mut agent = self.new_agent(&env)?;
        let r = &self.config().ris;
        let curve = controller::train(&env, &mut agent, r.episodes, r.steps, self.config().seed)?;
        let mut curve_csv = Vec::new();
        controller::write_curve_csv(&curve, &mut curve_csv)?;
        let mut ckpt = Vec::new();
        agent.save(&mut ckpt)?;
        Ok(vec![
            self.write("ris_plan.txt", env.reward.plan.to_text())?,
            self.write("ddpg_curve.csv", curve_csv)?,
            self.write("ddpg_checkpoint.txt", ckpt)?,
        ])
    }

    fn stage_eval_ris(&self) -> Result<Vec<String>> {
        let env = self.ris_env()?;
        let mut agent = self.new_agent(&env)?;
        let ckpt = self.path("ddpg_checkpoint.txt");
        let file = fs::File::open(&ckpt)
            .map_err(|e| Error::Config(format!("{}: {e} (run train-ris first)", ckpt.display())))?;
        agent.load(std::io::BufReader::new(file))?;
        let r = &self.config().ris;
        let seeds: Vec<u64> = (0..r.eval_draws as u64).map(|k| r.eval_seed_base + k).collect();
        let report = controller::evaluate(&env, &agent, &seeds, r.eval_steps)?;
        let mut eval_csv = Vec::new();
        report.write_csv(&mut eval_csv)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["draw", "link", "ddpg_residual", "direct_residual"])?;
        let decon: Vec<(usize, usize)> = env.reward.plan.deconstruct.iter().copied().collect();
        for d in &report.draws {
            for (k, (a, b)) in decon.iter().enumerate() {
                w.write_record([
                    d.seed.to_string(),
                    format!("{a}-{b}"),
                    d.agent_residuals[k].to_string(),
                    d.baseline_residuals[k].to_string(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(vec![self.write("ris_eval.csv", eval_csv)?, self.write("ris_residuals.csv", bytes)?])
    }

    /// Graph used by an FL mode: the planned revision, the configured graph,
    /// or a ring on the same node count.
    pub fn fl_graph(&self, mode: FlMode) -> Result<Graph> {
        let g = self.graph()?;
        match mode {
            FlMode::Revised => self.ris_plan()?.apply(&g),
            FlMode::Ring => Graph::cycle(g.node_count()),
            FlMode::Initial | FlMode::Star | FlMode::None => Ok(g),
        }
    }

    fn stage_fl(&self) -> Result<Vec<String>> {
        let fl = &self.config().fl;
        let modes: Vec<FlMode> = fl.modes.iter().map(|m| FlMode::parse(m)).collect::<Result<_>>()?;
        let mut runs = Vec::new();
        let mut summary = csv::Writer::from_writer(Vec::new());
        summary.write_record(["mode", "seed", "delay", "staleness", "final_accuracy"])?;
        for mode in modes {
            let g = self.fl_graph(mode)?;
            let delay = match mode {
                FlMode::Star | FlMode::None => 0.0,
                _ => fl.delay_factor * spectral::tolerable_delay(spectral::laplacian_spectrum(&g).lambda_max)?,
            };
            let cfg = fl.to_config(delay);
            for r in 0..fl.repeats as u64 {
                let seed = self.config().seed.wrapping_add(r);
                let run = flbench::run_fl(&cfg, &g, mode, seed)?;
                summary.write_record([
                    mode.as_str().to_string(),
                    seed.to_string(),
                    delay.to_string(),
                    run.sharing.staleness.to_string(),
                    run.final_accuracy().to_string(),
                ])?;
                runs.push((seed, run));
            }
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["seed", "round", "node", "mode", "accuracy"])?;
        for (seed, run) in &runs {
            for p in &run.curve {
                w.write_record([
                    seed.to_string(),
                    p.round.to_string(),
                    p.node.to_string(),
                    p.mode.as_str().to_string(),
                    p.accuracy.to_string(),
                ])?;
            }
        }
        let acc = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        let sum = summary.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(vec![self.write("fl_accuracy.csv", acc)?, self.write("fl_summary.csv", sum)?])
    }
}

fn read_rows(path: &Path) -> Result<Option<Vec<BTreeMap<String, String>>>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect());
    }
    Ok(Some(rows))
}

fn num(row: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    row.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse { line: 0, msg: format!("missing or bad column '{key}'") })
}

/// Summary of a report: files written and the text of `summary.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportOutput {
    pub files: Vec<String>,
    pub summary: String,
    pub gaps: Vec<String>,
}

/// Turns the artifacts in `dir` into per-figure CSVs and a pass/fail summary.
/// Missing artifacts are listed as gaps rather than treated as errors.
pub fn report(dir: &Path) -> Result<ReportOutput> {
    let mut files = Vec::new();
    let mut gaps = Vec::new();
    let mut summary = String::new();
    let mut check = |name: &str, ok: bool, detail: String| {
        let _ = writeln!(summary, "{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    };
    let write = |name: &str, bytes: Vec<u8>, files: &mut Vec<String>| -> Result<()> {
        fs::write(dir.join(name), bytes)?;
        files.push(name.to_string());
        Ok(())
    };

    match read_rows(&dir.join("spectrum.csv"))? {
        Some(rows) => {
            let get = |k: &str| rows.iter().find(|r| r["quantity"] == k).map(|r| num(r, "value")).transpose();
            if let (Some(l2), Some(lm)) = (get("lambda2")?, get("lambda_max")?) {
                check("spectrum", l2 >= -1e-9 && lm >= l2, format!("lambda2 = {l2:.6}, lambda_max = {lm:.6}"));
            }
        }
        None => gaps.push("spectrum.csv".to_string()),
    }

    match read_rows(&dir.join("consensus_sweep.csv"))? {
        Some(rows) => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["delay", "delay_over_bound", "label"])?;
            let mut consistent = true;
            for r in &rows {
                let ratio = num(r, "delay_over_bound")?;
                let label = r["stability"].as_str();
                w.write_record([r["delay"].as_str(), r["delay_over_bound"].as_str(), label])?;
                let expect = if ratio < 1.0 { Stability::Converged } else { Stability::Diverged };
                // points within 5% of the bound are too slow to classify either way
                if (ratio - 1.0).abs() > 0.05 && label != expect.as_str() {
                    consistent = false;
                }
            }
            write("fig5-family.csv", w.into_inner().map_err(|e| Error::Config(e.to_string()))?, &mut files)?;
            check("delay bound", consistent, format!("{} sweep points agree with pi/(2 lambda_max)", rows.len()));
        }
        None => gaps.push("consensus_sweep.csv".to_string()),
    }

    match read_rows(&dir.join("ris_eval.csv"))? {
        Some(rows) => {
            let mut per_link: BTreeMap<(String, String), (f64, f64, usize, usize)> = BTreeMap::new();
            let mut draws: BTreeMap<String, bool> = BTreeMap::new();
            for r in &rows {
                let e = per_link.entry((r["link"].clone(), r["target_type"].clone())).or_insert((0.0, 0.0, 0, 0));
                e.0 += num(r, "achieved_rate")?;
                e.1 = num(r, "threshold")?;
                e.2 += 1;
                let met = r["met"] == "true";
                e.3 += usize::from(met);
                *draws.entry(r["draw"].clone()).or_insert(true) &= met;
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["link", "target_type", "mean_rate", "threshold", "met_fraction"])?;
            for ((link, kind), (sum, thr, n, met)) in &per_link {
                w.write_record([
                    link.clone(),
                    kind.clone(),
                    (sum / *n as f64).to_string(),
                    thr.to_string(),
                    (*met as f64 / *n as f64).to_string(),
                ])?;
            }
            write("fig6-family.csv", w.into_inner().map_err(|e| Error::Config(e.to_string()))?, &mut files)?;
            let ok = draws.values().filter(|&&v| v).count() as f64 / draws.len().max(1) as f64;
            check("ris targets", ok >= 0.8, format!("all targets met on {:.0}% of draws", 100.0 * ok));
        }
        None => gaps.push("ris_eval.csv".to_string()),
    }

    if let Some(rows) = read_rows(&dir.join("ris_residuals.csv"))? {
        let mut wins = 0usize;
        for r in &rows {
            wins += usize::from(num(r, "ddpg_residual")? < num(r, "direct_residual")?);
        }
        check("deconstruction residual", wins * 2 > rows.len(), format!("ddpg below direct control on {wins}/{} rows", rows.len()));
    }

    match read_rows(&dir.join("ddpg_curve.csv"))? {
        Some(rows) => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["episode", "mean_reward", "moving_average_25", "penalty_rate"])?;
            let rewards: Vec<f64> = rows.iter().map(|r| num(r, "mean_reward")).collect::<Result<_>>()?;
            for (k, r) in rows.iter().enumerate() {
                let lo = k.saturating_sub(24);
                let ma = rewards[lo..=k].iter().sum::<f64>() / (k - lo + 1) as f64;
                w.write_record([r["episode"].clone(), r["mean_reward"].clone(), ma.to_string(), r["penalty_rate"].clone()])?;
            }
            write("fig7-family.csv", w.into_inner().map_err(|e| Error::Config(e.to_string()))?, &mut files)?;
            if rewards.len() >= 2 {
                let k = (rewards.len() / 3).clamp(1, 100);
                let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
                let (first, last) = (mean(&rewards[..k]), mean(&rewards[rewards.len() - k..]));
                check("ddpg progress", last > first, format!("first-{k} mean {first:.4e}, last-{k} mean {last:.4e}"));
            }
        }
        None => gaps.push("ddpg_curve.csv".to_string()),
    }

    match read_rows(&dir.join("fl_accuracy.csv"))? {
        Some(rows) => {
            let mut acc: BTreeMap<(String, usize), (f64, usize)> = BTreeMap::new();
            for r in &rows {
                let e = acc.entry((r["mode"].clone(), num(r, "round")? as usize)).or_insert((0.0, 0));
                e.0 += num(r, "accuracy")?;
                e.1 += 1;
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["mode", "round", "mean_accuracy"])?;
            let mut finals: BTreeMap<String, (usize, f64)> = BTreeMap::new();
            for ((mode, round), (sum, n)) in &acc {
                let mean = sum / *n as f64;
                w.write_record([mode.clone(), round.to_string(), mean.to_string()])?;
                let f = finals.entry(mode.clone()).or_insert((0, 0.0));
                if *round >= f.0 {
                    *f = (*round, mean);
                }
            }
            write("fig10-family.csv", w.into_inner().map_err(|e| Error::Config(e.to_string()))?, &mut files)?;
            if let (Some(rev), Some(none)) = (finals.get("revised"), finals.get("none")) {
                check(
                    "fl sharing gain",
                    rev.1 >= none.1 + 0.02,
                    format!("revised {:.4} vs none {:.4}", rev.1, none.1),
                );
            }
        }
        None => gaps.push("fl_accuracy.csv".to_string()),
    }

    for g in &gaps {
        let _ = writeln!(summary, "GAP {g}: artifact missing");
    }
    fs::write(dir.join("summary.txt"), &summary)?;
    files.push("summary.txt".to_string());
    Ok(ReportOutput { files, summary, gaps })
}
