//! Multi-view federated learning on synthetic data.
//!
//! Each class has a latent vector; each view maps it through its own linear
//! map and adds Gaussian noise. Nodes hold one view each, train a small
//! classifier locally and periodically mix parameters over a topology.

use std::io::Write;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::consensus::StaleConsensus;
use crate::error::{Error, Result};
use crate::graph::{presets, Graph};
use crate::nn::Mlp;

pub const VIEW_NAMES: [&str; 4] = ["front", "side", "back", "vertical"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum View {
    Front,
    Side,
    Back,
    Vertical,
}

impl View {
    pub const ALL: [View; 4] = [View::Front, View::Side, View::Back, View::Vertical];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        VIEW_NAMES[self.index()]
    }
}

/// Samples as rows of `x` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn select(&self, idx: &[usize]) -> Samples {
        Samples { x: self.x.select(Axis(0), idx), y: idx.iter().map(|&i| self.y[i]).collect() }
    }

    fn concat(parts: &[&Samples]) -> Samples {
        let views: Vec<_> = parts.iter().map(|p| p.x.view()).collect();
        Samples {
            x: ndarray::concatenate(Axis(0), &views).expect("equal widths"),
            y: parts.iter().flat_map(|p| p.y.iter().copied()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewData {
    pub view: View,
    pub train: Samples,
    pub test: Samples,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewDataset {
    pub views: Vec<ViewData>,
    pub classes: usize,
    pub dim: usize,
}

impl MultiViewDataset {
    /// Test samples of every view stacked together.
    pub fn union_test(&self) -> Samples {
        Samples::concat(&self.views.iter().map(|v| &v.test).collect::<Vec<_>>())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetSpec {
    pub n_samples: usize,
    pub dim: usize,
    pub classes: usize,
    pub latent_dim: usize,
    pub noise: f64,
    pub train_fraction: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self { n_samples: 5000, dim: 32, classes: 5, latent_dim: 8, noise: 2.0, train_fraction: 0.7 }
    }
}

/// `n_samples` split evenly over views and classes. Deterministic per seed.
pub fn gen_multiview_dataset(seed: u64, spec: &DatasetSpec) -> Result<MultiViewDataset> {
    let views = View::ALL.len();
    if spec.classes < 2 || spec.dim == 0 || spec.latent_dim == 0 {
        return Err(Error::InvalidArgument("need >= 2 classes and positive dimensions".into()));
    }
    if spec.n_samples == 0 || spec.n_samples % (spec.classes * views) != 0 {
        return Err(Error::InvalidArgument(format!(
            "n_samples {} must be a positive multiple of classes x views = {}",
            spec.n_samples,
            spec.classes * views
        )));
    }
    if !(spec.noise >= 0.0) || !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidArgument("noise must be >= 0 and train_fraction in (0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid");
    let latents = Array2::from_shape_simple_fn((spec.classes, spec.latent_dim), || std_normal.sample(&mut rng));
    let map_scale = 1.0 / (spec.latent_dim as f64).sqrt();
    let per_class = spec.n_samples / (spec.classes * views);
    let mut out = Vec::with_capacity(views);
    for view in View::ALL {
        let map = Array2::from_shape_simple_fn((spec.dim, spec.latent_dim), || map_scale * std_normal.sample(&mut rng));
        let means = latents.dot(&map.t());
        let n = per_class * spec.classes;
        let mut x = Array2::zeros((n, spec.dim));
        let mut y = Vec::with_capacity(n);
        for (row, mut dst) in x.rows_mut().into_iter().enumerate() {
            let c = row / per_class;
            y.push(c);
            for (d, v) in dst.iter_mut().enumerate() {
                *v = means[[c, d]] + spec.noise * std_normal.sample(&mut rng);
            }
        }
        let all = Samples { x, y };
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let cut = (n as f64 * spec.train_fraction).round() as usize;
        let (tr, te) = idx.split_at(cut);
        out.push(ViewData { view, train: all.select(tr), test: all.select(te) });
    }
    Ok(MultiViewDataset { views: out, classes: spec.classes, dim: spec.dim })
}

/// Eight nodes follow the fixed platoon layout (side: 1, 5; front: 2, 6;
/// vertical: 3, 7; back: 0, 4). Any other count cycles through the views.
pub fn assign_views(nodes: &Graph) -> Vec<View> {
    let n = nodes.node_count();
    if n == 8 {
        use View::*;
        vec![Back, Side, Front, Vertical, Back, Side, Front, Vertical]
    } else {
        (0..n).map(|i| View::ALL[i % View::ALL.len()]).collect()
    }
}

/// Each node gets an equal, disjoint slice of its view's training split.
pub fn node_shards(data: &MultiViewDataset, views: &[View]) -> Vec<Samples> {
    let mut shards = Vec::with_capacity(views.len());
    for (node, &view) in views.iter().enumerate() {
        let holders: Vec<usize> = (0..views.len()).filter(|&j| views[j] == view).collect();
        let rank = holders.iter().position(|&j| j == node).expect("node holds its own view");
        let train = &data.views[view.index()].train;
        let idx: Vec<usize> = (0..train.len()).filter(|i| i % holders.len() == rank).collect();
        shards.push(train.select(&idx));
    }
    shards
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSettings {
    pub lr: f64,
    pub batch: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { lr: 0.005, batch: 32 }
    }
}

pub fn new_model(dim: usize, hidden: usize, classes: usize, seed: u64) -> Mlp {
    Mlp::new(&[dim, hidden, classes], 1.0 / (hidden as f64).sqrt(), &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Mean cross-entropy and its gradient with respect to the logits.
fn cross_entropy(logits: &Array2<f64>, y: &[usize]) -> (f64, Array2<f64>) {
    let n = y.len() as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (mut row, &label) in grad.rows_mut().into_iter().zip(y) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row /= z;
        loss -= row[label].ln();
        row[label] -= 1.0;
    }
    grad /= n;
    (loss / n, grad)
}

/// Mean cross-entropy of `model` on `data`.
pub fn loss(model: &Mlp, data: &Samples) -> f64 {
    cross_entropy(&model.forward(&data.x).output, &data.y).0
}

/// Gradient of [`loss`] as a flat vector in [`Mlp::flat_params`] order.
pub fn loss_gradient(model: &Mlp, data: &Samples) -> Vec<f64> {
    let trace = model.forward(&data.x);
    let (_, g) = cross_entropy(&trace.output, &data.y);
    model.backward(&trace, &g).0.flat()
}

/// Mini-batch SGD on cross-entropy, reshuffling every epoch.
pub fn local_train(model: &mut Mlp, shard: &Samples, epochs: usize, settings: TrainSettings, seed: u64) -> Result<()> {
    if shard.is_empty() {
        return Err(Error::InvalidArgument("empty training shard".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..shard.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(settings.batch.max(1)) {
            let batch = shard.select(chunk);
            let trace = model.forward(&batch.x);
            let (_, g_out) = cross_entropy(&trace.output, &batch.y);
            let (g, _) = model.backward(&trace, &g_out);
            for (layer, (gw, gb)) in model.layers.iter_mut().zip(g.w.iter().zip(&g.b)) {
                layer.w.scaled_add(-settings.lr, gw);
                layer.b.scaled_add(-settings.lr, gb);
            }
        }
    }
    Ok(())
}

/// Fraction of correct argmax predictions. Rows with any non-finite logit
/// count as predicting class 0.
pub fn evaluate(model: &Mlp, test: &Samples) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let logits = model.forward(&test.x).output;
    let correct = logits
        .rows()
        .into_iter()
        .zip(&test.y)
        .filter(|(row, &label)| predict_row(row.as_slice().expect("contiguous")) == label)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

fn predict_row(row: &[f64]) -> usize {
    if row.iter().any(|v| !v.is_finite()) {
        return 0;
    }
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FlMode {
    /// Consensus over the planned topology.
    Revised,
    /// Consensus over the topology before planning.
    Initial,
    /// Central averaging.
    Star,
    Ring,
    None,
}

impl FlMode {
    pub const ALL: [FlMode; 5] = [FlMode::Revised, FlMode::Initial, FlMode::Star, FlMode::Ring, FlMode::None];

    pub fn as_str(self) -> &'static str {
        match self {
            FlMode::Revised => "revised",
            FlMode::Initial => "initial",
            FlMode::Star => "star",
            FlMode::Ring => "ring",
            FlMode::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown FL mode '{s}'")))
    }

    /// Topology used for mixing in the eight-node platoon.
    pub fn platoon_graph(self) -> Option<Graph> {
        match self {
            FlMode::Revised => Some(presets::fig3b_candidate()),
            FlMode::Initial => Some(presets::fig3a_candidate()),
            FlMode::Ring => Some(Graph::cycle(8).expect("8 nodes")),
            FlMode::Star | FlMode::None => None,
        }
    }
}

/// How parameters are mixed at a sharing event.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SharingSettings {
    /// Consensus step per iteration.
    pub step: f64,
    /// Iterations per sharing event.
    pub iterations: usize,
    /// Exchanges arrive this many iterations late.
    pub staleness: usize,
}

impl SharingSettings {
    /// Iterations of length `step` spanning `horizon` time units, with a
    /// uniform link delay `delay` rounded up to whole iterations.
    pub fn from_delay(step: f64, horizon: f64, delay: f64) -> Result<Self> {
        if !(step > 0.0) || !(horizon >= 0.0) || !(delay >= 0.0) {
            return Err(Error::InvalidArgument("sharing step must be > 0, horizon and delay >= 0".into()));
        }
        Ok(Self {
            step,
            iterations: (horizon / step).round() as usize,
            staleness: (delay / step - 1e-9).ceil().max(0.0) as usize,
        })
    }
}

/// Mixes every node's parameters once according to `mode`.
pub fn federated_round(models: &[Mlp], g: Option<&Graph>, mode: FlMode, sharing: SharingSettings) -> Result<Vec<Mlp>> {
    let flat: Vec<Vec<f64>> = models.iter().map(Mlp::flat_params).collect();
    if flat.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(Error::InvalidArgument("models have different parameter counts".into()));
    }
    let mixed = match mode {
        FlMode::None => return Ok(models.to_vec()),
        FlMode::Star => {
            let mean = crate::consensus::node_mean(&flat);
            vec![mean; models.len()]
        }
        FlMode::Revised | FlMode::Initial | FlMode::Ring => {
            let g = g.ok_or_else(|| Error::InvalidArgument(format!("mode {} needs a graph", mode.as_str())))?;
            StaleConsensus::new(sharing.staleness).run(&flat, g, sharing.step, sharing.iterations)?
        }
    };
    models
        .iter()
        .zip(mixed)
        .map(|(m, p)| {
            let mut out = m.clone();
            out.set_flat_params(&p)?;
            Ok(out)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlConfig {
    pub dataset: DatasetSpec,
    pub hidden: usize,
    pub train: TrainSettings,
    /// Local epochs between sharing events.
    pub local_epochs: usize,
    pub rounds: usize,
    pub sharing_step: f64,
    /// Time spanned by one sharing event.
    pub sharing_horizon: f64,
    /// Uniform link delay during sharing.
    pub delay: f64,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            hidden: 16,
            train: TrainSettings::default(),
            local_epochs: 10,
            rounds: 10,
            sharing_step: 0.005,
            sharing_horizon: 2.0,
            delay: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyPoint {
    pub round: usize,
    pub node: usize,
    pub mode: FlMode,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlRun {
    pub mode: FlMode,
    pub curve: Vec<AccuracyPoint>,
    pub sharing: SharingSettings,
}

impl FlRun {
    /// Mean accuracy over nodes after the last round.
    pub fn final_accuracy(&self) -> f64 {
        let last = self.curve.iter().map(|p| p.round).max().unwrap_or(0);
        let pts: Vec<f64> = self.curve.iter().filter(|p| p.round == last).map(|p| p.accuracy).collect();
        pts.iter().sum::<f64>() / pts.len().max(1) as f64
    }
}

/// One experiment: every round trains each node locally, mixes, then scores
/// every node on the union of all views' test sets. All nodes start from the
/// same initial model.
pub fn run_fl(cfg: &FlConfig, g: &Graph, mode: FlMode, seed: u64) -> Result<FlRun> {
    let data = gen_multiview_dataset(seed, &cfg.dataset)?;
    let shards = node_shards(&data, &assign_views(g));
    let test = data.union_test();
    let sharing = SharingSettings::from_delay(cfg.sharing_step, cfg.sharing_horizon, cfg.delay)?;
    let init = new_model(cfg.dataset.dim, cfg.hidden, cfg.dataset.classes, seed ^ 0x5EED);
    let mut models = vec![init; g.node_count()];
    let mut curve = Vec::new();
    for round in 0..cfg.rounds {
        models
            .par_iter_mut()
            .zip(&shards)
            .enumerate()
            .try_for_each(|(node, (m, shard))| {
                let s = seed.wrapping_mul(1_000_003).wrapping_add((round * 64 + node) as u64);
                local_train(m, shard, cfg.local_epochs, cfg.train, s)
            })?;
        models = federated_round(&models, Some(g), mode, sharing)?;
        for (node, m) in models.iter().enumerate() {
            curve.push(AccuracyPoint { round, node, mode, accuracy: evaluate(m, &test)? });
        }
    }
    Ok(FlRun { mode, curve, sharing })
}

pub fn write_accuracy_csv<W: Write>(runs: &[FlRun], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "node", "mode", "accuracy"])?;
    for run in runs {
        for p in &run.curve {
            w.write_record([p.round.to_string(), p.node.to_string(), p.mode.as_str().into(), p.accuracy.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Trains one model on a whole view's training split and scores it on the
/// same view's test split.
pub fn single_view_accuracy(data: &MultiViewDataset, view: View, cfg: &FlConfig, epochs: usize, seed: u64) -> Result<f64> {
    let mut m = new_model(data.dim, cfg.hidden, data.classes, seed);
    let vd = &data.views[view.index()];
    local_train(&mut m, &vd.train, epochs, cfg.train, seed)?;
    evaluate(&m, &vd.test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(noise: f64) -> DatasetSpec {
        DatasetSpec { n_samples: 400, noise, ..DatasetSpec::default() }
    }

    #[test]
    fn dataset_is_deterministic_and_split() {
        let a = gen_multiview_dataset(3, &small_spec(1.0)).unwrap();
        assert_eq!(a, gen_multiview_dataset(3, &small_spec(1.0)).unwrap());
        assert_eq!(a.views.len(), 4);
        assert_eq!(a.views[0].train.len(), 70);
        assert_eq!(a.views[0].test.len(), 30);
        assert!(gen_multiview_dataset(3, &DatasetSpec { n_samples: 401, ..small_spec(1.0) }).is_err());
    }

    #[test]
    fn noiseless_views_are_learnable() {
        let data = gen_multiview_dataset(1, &small_spec(0.0)).unwrap();
        let cfg = FlConfig { train: TrainSettings { lr: 0.05, batch: 32 }, ..FlConfig::default() };
        for view in View::ALL {
            let vd = &data.views[view.index()];
            let mut m = new_model(data.dim, cfg.hidden, data.classes, 2);
            local_train(&mut m, &vd.train, 300, cfg.train, 2).unwrap();
            assert!(evaluate(&m, &vd.train).unwrap() > 0.95, "{}", view.name());
        }
    }

    #[test]
    fn default_noise_is_informative_but_not_perfect() {
        let data = gen_multiview_dataset(1, &DatasetSpec::default()).unwrap();
        let acc = single_view_accuracy(&data, View::Side, &FlConfig::default(), 30, 4).unwrap();
        assert!(acc > 1.0 / 5.0 && acc < 1.0, "{acc}");
    }

    #[test]
    fn platoon_view_layout() {
        let v = assign_views(&presets::fig3a_candidate());
        // cars 2 and 8 in one-based numbering
        assert_eq!(v[1], View::Side);
        assert_eq!(v[7], View::Vertical);
        assert_eq!(v[2], View::Front);
        assert_eq!(v[0], View::Back);
        let ring = assign_views(&Graph::cycle(5).unwrap());
        assert_eq!(ring, vec![View::Front, View::Side, View::Back, View::Vertical, View::Front]);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let data = gen_multiview_dataset(2, &small_spec(1.0)).unwrap();
        let batch = data.views[0].train.select(&(0..8).collect::<Vec<_>>());
        let mut m = new_model(data.dim, 6, data.classes, 1);
        let g = loss_gradient(&m, &batch);
        let mut p = m.flat_params();
        let h = 1e-6;
        for k in 0..p.len() {
            let orig = p[k];
            p[k] = orig + h;
            m.set_flat_params(&p).unwrap();
            let up = loss(&m, &batch);
            p[k] = orig - h;
            m.set_flat_params(&p).unwrap();
            let down = loss(&m, &batch);
            p[k] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-4 * fd.abs().max(g[k].abs()).max(1e-6), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn zero_epochs_leaves_model() {
        let data = gen_multiview_dataset(2, &small_spec(1.0)).unwrap();
        let mut m = new_model(data.dim, 16, data.classes, 1);
        let before = m.clone();
        local_train(&mut m, &data.views[0].train, 0, TrainSettings::default(), 0).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn constant_predictor_hits_chance() {
        let data = gen_multiview_dataset(2, &small_spec(1.0)).unwrap();
        let mut m = new_model(data.dim, 4, data.classes, 1);
        let zeros = vec![0.0; m.param_count()];
        m.set_flat_params(&zeros).unwrap();
        // a balanced set: every class appears equally often
        let all = Samples::concat(&[&data.views[0].train, &data.views[0].test]);
        assert!((evaluate(&m, &all).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn rounds_by_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let models: Vec<Mlp> = (0..2).map(|_| Mlp::new(&[3, 2, 2], 1.0, &mut rng)).collect();
        let g = Graph::path(2).unwrap();
        let sharing = SharingSettings { step: 0.5, iterations: 1, staleness: 0 };
        assert_eq!(federated_round(&models, Some(&g), FlMode::None, sharing).unwrap(), models);
        let star = federated_round(&models, None, FlMode::Star, sharing).unwrap();
        let (v, w) = (models[0].flat_params(), models[1].flat_params());
        for (k, p) in star[0].flat_params().iter().enumerate() {
            assert!((p - (v[k] + w[k]) / 2.0).abs() < 1e-15);
        }
        assert_eq!(star[0], star[1]);
        // step 1/2 on a single edge is exact averaging too
        let mixed = federated_round(&models, Some(&g), FlMode::Ring, sharing).unwrap();
        assert!((mixed[0].flat_params()[0] - (v[0] + w[0]) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn averaging_identical_models_keeps_accuracy() {
        let data = gen_multiview_dataset(2, &small_spec(1.0)).unwrap();
        let m = new_model(data.dim, 8, data.classes, 1);
        let sharing = SharingSettings { step: 0.1, iterations: 5, staleness: 2 };
        let g = Graph::cycle(4).unwrap();
        let out = federated_round(&vec![m.clone(); 4], Some(&g), FlMode::Ring, sharing).unwrap();
        let test = data.union_test();
        assert_eq!(evaluate(&out[2], &test).unwrap(), evaluate(&m, &test).unwrap());
    }

    #[test]
    fn sharing_from_delay() {
        let s = SharingSettings::from_delay(0.005, 2.0, 0.26).unwrap();
        assert_eq!(s.iterations, 400);
        assert_eq!(s.staleness, 52);
        assert_eq!(SharingSettings::from_delay(0.01, 1.0, 0.0).unwrap().staleness, 0);
    }
}
