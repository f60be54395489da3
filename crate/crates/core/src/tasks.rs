//! Downstream heads, losses and the online training loop.
//!
//! A [`Model`] is an encoder (TAA, or mean fusion with optional alignment
//! corrections) over precomputed trajectories, plus an optional linear
//! classifier head. Training is mini-batch AdamW with early stopping on a
//! validation metric.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, AlignConfig, AlignParams, Corrections, ShallowCache};
use crate::error::{Error, Result};
use crate::mag::Mag;
use crate::numerics::{cosine, dot, gemm_nn, gemm_nt, gemm_tn, DenseMatrix};
use crate::params::{prefixed, ParamSet};
use crate::seed;
use crate::taa::{self, TaaConfig, TaaOutput, TaaParams};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-4,
            epochs: 200,
            patience: 40,
            batch_size: 512,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("lr and weight_decay must be finite and nonnegative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.patience > self.epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("moment coefficients must lie in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// Linear `2d → C` projection with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub w: DenseMatrix,
    pub b: DenseMatrix,
}

impl ClassifierHead {
    pub fn init(input: usize, classes: usize, seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!("classifier needs at least 2 classes, got {classes}")));
        }
        let mut rng = seed::rng(seed);
        let limit = (6.0 / (input + classes) as f64).sqrt();
        Ok(Self {
            w: DenseMatrix::from_fn(input, classes, |_, _| rng.random_range(-limit..=limit)),
            b: DenseMatrix::zeros(1, classes),
        })
    }

    pub fn classes(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        if z.cols() != self.w.rows() {
            return Err(Error::Shape(format!(
                "head expects {} inputs, got {}",
                self.w.rows(),
                z.cols()
            )));
        }
        let c = self.classes();
        let mut out = DenseMatrix::from_fn(z.rows(), c, |_, j| self.b.get(0, j));
        gemm_nn(z.data(), self.w.data(), z.rows(), z.cols(), c, out.data_mut());
        Ok(out)
    }

    /// Returns `(parameter gradients, ∂loss/∂z)`.
    pub fn backward(&self, z: &DenseMatrix, grad_logits: &DenseMatrix) -> (ClassifierHead, DenseMatrix) {
        let (n, k, c) = (z.rows(), z.cols(), self.classes());
        let mut gw = DenseMatrix::zeros(k, c);
        gemm_tn(z.data(), grad_logits.data(), n, k, c, gw.data_mut());
        let mut gb = DenseMatrix::zeros(1, c);
        for r in 0..n {
            gb.data_mut()
                .iter_mut()
                .zip(grad_logits.row(r))
                .for_each(|(a, b)| *a += b);
        }
        let mut dz = DenseMatrix::zeros(n, k);
        gemm_nt(grad_logits.data(), self.w.data(), n, c, k, dz.data_mut());
        (ClassifierHead { w: gw, b: gb }, dz)
    }
}

impl ParamSet for ClassifierHead {
    fn named(&self) -> Vec<(String, &DenseMatrix)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Mean negative log-likelihood over the rows in `mask`, and its gradient
/// `(softmax − onehot)/|mask|` (zero outside the mask).
pub fn cross_entropy(logits: &DenseMatrix, labels: &[Option<usize>], mask: &[usize]) -> Result<(f64, DenseMatrix)> {
    if mask.is_empty() {
        return Err(Error::Config("cross-entropy over an empty mask".into()));
    }
    if labels.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    let c = logits.cols();
    let scale = 1.0 / mask.len() as f64;
    let mut grad = DenseMatrix::zeros(logits.rows(), c);
    let mut loss = 0.0;
    for &r in mask {
        let y = labels
            .get(r)
            .copied()
            .flatten()
            .filter(|&y| y < c)
            .ok_or_else(|| Error::Index(format!("row {r} has no usable label")))?;
        let row = logits.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        let g = grad.row_mut(r);
        for j in 0..c {
            g[j] = (row[j] - lse).exp() * scale;
        }
        g[y] -= scale;
    }
    Ok((loss * scale, grad))
}

/// Which encoder a model uses; the string keys are the config vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "campa")]
    Campa,
    /// Aligned trajectories with uniform hop averaging instead of TAA.
    #[serde(rename = "campa-mean")]
    CampaMean,
    #[serde(rename = "msgc")]
    Msgc,
    #[serde(rename = "msgc+alignp")]
    MsgcAlignP,
    #[serde(rename = "msgc+aligna")]
    MsgcAlignA,
    #[serde(rename = "msgc+alignp+aligna")]
    MsgcAlignPA,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Campa,
        ModelKind::CampaMean,
        ModelKind::Msgc,
        ModelKind::MsgcAlignP,
        ModelKind::MsgcAlignA,
        ModelKind::MsgcAlignPA,
    ];

    pub fn key(self) -> &'static str {
        match self {
            ModelKind::Campa => "campa",
            ModelKind::CampaMean => "campa-mean",
            ModelKind::Msgc => "msgc",
            ModelKind::MsgcAlignP => "msgc+alignp",
            ModelKind::MsgcAlignA => "msgc+aligna",
            ModelKind::MsgcAlignPA => "msgc+alignp+aligna",
        }
    }

    /// Whether trajectories come from aligned propagation (vs plain diffusion).
    pub fn uses_cap(self) -> bool {
        matches!(self, ModelKind::Campa | ModelKind::CampaMean)
    }

    pub fn corrections(self) -> Corrections {
        Corrections {
            align_p: matches!(self, ModelKind::MsgcAlignP | ModelKind::MsgcAlignPA),
            align_a: matches!(self, ModelKind::MsgcAlignA | ModelKind::MsgcAlignPA),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.key() == s)
            .ok_or_else(|| {
                let keys: Vec<&str> = ModelKind::ALL.iter().map(|m| m.key()).collect();
                Error::Config(format!("unknown model {s:?}; expected one of {keys:?}"))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Taa(TaaParams),
    Shallow(AlignParams),
}

impl Encoder {
    fn zeros_like(&self) -> Self {
        match self {
            Encoder::Taa(p) => Encoder::Taa(p.zeros_like()),
            Encoder::Shallow(p) => Encoder::Shallow(p.zeros_like()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub encoder: Encoder,
    pub head: Option<ClassifierHead>,
}

impl Model {
    /// Fresh model; `classes = None` builds an encoder-only model (link
    /// prediction).
    pub fn init(kind: ModelKind, taa_cfg: &TaaConfig, align: &AlignConfig, classes: Option<usize>, seed_value: u64) -> Result<Self> {
        let d = taa_cfg.d;
        let encoder = match kind {
            ModelKind::Campa => Encoder::Taa(TaaParams::init(taa_cfg, seed::derive(seed_value, 10))?),
            _ => Encoder::Shallow(AlignParams::init(align, d, seed::derive(seed_value, 11))?),
        };
        let head = classes
            .map(|c| ClassifierHead::init(2 * d, c, seed::derive(seed_value, 12)))
            .transpose()?;
        Ok(Self { kind, encoder, head })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            kind: self.kind,
            encoder: self.encoder.zeros_like(),
            head: self.head.as_ref().map(|h| ClassifierHead {
                w: DenseMatrix::zeros(h.w.rows(), h.w.cols()),
                b: DenseMatrix::zeros(1, h.b.cols()),
            }),
        }
    }

    pub fn d(&self) -> usize {
        match &self.encoder {
            Encoder::Taa(p) => p.d(),
            Encoder::Shallow(p) => p.d(),
        }
    }
}

impl ParamSet for Model {
    fn named(&self) -> Vec<(String, &DenseMatrix)> {
        let mut v = match &self.encoder {
            Encoder::Taa(p) => prefixed("taa", p.named()),
            Encoder::Shallow(p) => prefixed("align", p.named()),
        };
        if let Some(h) = &self.head {
            v.extend(prefixed("head", h.named()));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut v = match &mut self.encoder {
            Encoder::Taa(p) => p.tensors_mut(),
            Encoder::Shallow(p) => p.tensors_mut(),
        };
        if let Some(h) = &mut self.head {
            v.extend(h.tensors_mut());
        }
        v
    }
}

/// Encoder intermediates for one batch.
#[derive(Debug)]
pub enum EncoderCache {
    Taa(Box<TaaOutput>),
    Shallow(ShallowCache),
}

/// Embeddings (`nodes.len() × 2d`) for the listed nodes.
pub fn encode(model: &Model, traj_t: &Trajectory, traj_i: &Trajectory, nodes: &[usize], keep_cache: bool) -> Result<(DenseMatrix, Option<EncoderCache>)> {
    match &model.encoder {
        Encoder::Taa(p) => {
            let out = taa::forward_nodes(traj_t, traj_i, nodes, p, keep_cache)?;
            let z = out.z.clone();
            Ok((z, keep_cache.then(|| EncoderCache::Taa(Box::new(out)))))
        }
        Encoder::Shallow(p) => {
            let (z, cache) = baselines::shallow_embed(traj_t, traj_i, nodes, model.kind.corrections(), p)?;
            Ok((z, keep_cache.then_some(EncoderCache::Shallow(cache))))
        }
    }
}

fn encode_backward(model: &Model, cache: EncoderCache, grad_z: &DenseMatrix) -> Result<Encoder> {
    match (&model.encoder, cache) {
        (Encoder::Taa(p), EncoderCache::Taa(mut out)) => Ok(Encoder::Taa(taa::backward(&mut out, grad_z, p, false)?.params)),
        (Encoder::Shallow(p), EncoderCache::Shallow(c)) => Ok(Encoder::Shallow(baselines::shallow_backward(
            &c,
            grad_z,
            model.kind.corrections(),
            p,
        )?)),
        _ => Err(Error::State("encoder cache does not match the model".into())),
    }
}

/// Full-graph embedding `Z = Z_t ∥ Z_i`.
pub fn embed(model: &Model, traj_t: &Trajectory, traj_i: &Trajectory) -> Result<DenseMatrix> {
    let nodes: Vec<usize> = (0..traj_t.n()).collect();
    Ok(encode(model, traj_t, traj_i, &nodes, false)?.0)
}

/// Argmax class per listed node (lowest index wins ties).
pub fn predict(model: &Model, traj_t: &Trajectory, traj_i: &Trajectory, nodes: &[usize]) -> Result<Vec<usize>> {
    let head = model
        .head
        .as_ref()
        .ok_or_else(|| Error::State("model has no classifier head".into()))?;
    let (z, _) = encode(model, traj_t, traj_i, nodes, false)?;
    let logits = head.forward(&z)?;
    Ok((0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect())
}

/// Adaptive moments with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: TrainConfig,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig, params: &impl ParamSet) -> Self {
        let shapes: Vec<usize> = params.named().iter().map(|(_, t)| t.data().len()).collect();
        Self {
            cfg: *cfg,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let gs: Vec<&DenseMatrix> = grads.named().into_iter().map(|(_, g)| g).collect();
        for (k, p) in params.tensors_mut().into_iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((x, &g), mi), vi) in p.data_mut().iter_mut().zip(gs[k].data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * g;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * g * g;
                *x -= c.lr * c.weight_decay * *x;
                *x -= c.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + c.eps);
            }
        }
    }
}

/// One history line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_metric: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation snapshot.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
}

/// History as JSON lines.
pub fn history_jsonl(history: &[EpochRecord]) -> Result<String> {
    let mut s = String::new();
    for r in history {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

/// Epoch loop with divergence detection and early stopping. `epoch_fn`
/// performs one pass and returns the mean training loss.
fn fit<E, V>(mut model: Model, cfg: &TrainConfig, mut epoch_fn: E, mut validate: V) -> Result<TrainOutcome>
where
    E: FnMut(&mut Model, &mut AdamW, &mut seed::Rng) -> Result<f64>,
    V: FnMut(&Model) -> Result<f64>,
{
    cfg.validate()?;
    let mut opt = AdamW::new(cfg, &model);
    let mut rng = seed::rng(seed::derive(cfg.seed, 1));
    let mut best = (validate(&model)?, 0usize, model.clone());
    let mut history = Vec::new();
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let loss = epoch_fn(&mut model, &mut opt, &mut rng)?;
        if !loss.is_finite() || !model.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let val = validate(&model)?;
        history.push(EpochRecord {
            epoch,
            loss,
            val_metric: val,
            seconds: start.elapsed().as_secs_f64(),
        });
        if val > best.0 {
            best = (val, epoch, model.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best.2,
        history,
        best_epoch: best.1,
        best_val: best.0,
    })
}

fn labeled(mag: &Mag, nodes: &[usize]) -> Vec<usize> {
    let labels = mag.labels().unwrap_or(&[]);
    nodes
        .iter()
        .copied()
        .filter(|&v| labels.get(v).copied().flatten().is_some())
        .collect()
}

/// Node-classification accuracy over `nodes`.
pub fn node_accuracy(model: &Model, mag: &Mag, traj_t: &Trajectory, traj_i: &Trajectory, nodes: &[usize]) -> Result<f64> {
    let labels = mag
        .labels()
        .ok_or_else(|| Error::Config("graph has no labels".into()))?;
    let nodes = labeled(mag, nodes);
    if nodes.is_empty() {
        return Err(Error::Config("no labeled nodes to evaluate".into()));
    }
    let pred = predict(model, traj_t, traj_i, &nodes)?;
    let correct = pred
        .iter()
        .zip(&nodes)
        .filter(|(p, &v)| labels[v] == Some(**p))
        .count();
    Ok(correct as f64 / nodes.len() as f64)
}

/// Node classification: cross-entropy on the train split, validation
/// accuracy for early stopping.
pub fn train_node_classifier(mag: &Mag, traj_t: &Trajectory, traj_i: &Trajectory, model: Model, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let splits = mag
        .splits()
        .ok_or_else(|| Error::Config("node classification needs train/val/test splits".into()))?;
    let labels = mag
        .labels()
        .ok_or_else(|| Error::Config("node classification needs labels".into()))?;
    if model.head.is_none() {
        return Err(Error::Config("node classification needs a classifier head".into()));
    }
    let train = labeled(mag, &splits.train);
    if train.is_empty() {
        return Err(Error::Config("no labeled training nodes".into()));
    }
    let val = labeled(mag, &splits.val);
    let val_nodes = if val.is_empty() { train.clone() } else { val };
    let batch = cfg.batch_size.min(train.len());
    let epoch_fn = |model: &mut Model, opt: &mut AdamW, rng: &mut seed::Rng| -> Result<f64> {
        let mut order = train.clone();
        order.shuffle(rng);
        let mut total = 0.0;
        for nodes in order.chunks(batch) {
            let (z, cache) = encode(model, traj_t, traj_i, nodes, true)?;
            let head = model.head.as_ref().expect("checked above");
            let logits = head.forward(&z)?;
            let batch_labels: Vec<Option<usize>> = nodes.iter().map(|&v| labels[v]).collect();
            let rows: Vec<usize> = (0..nodes.len()).collect();
            let (loss, dlogits) = cross_entropy(&logits, &batch_labels, &rows)?;
            let (head_grad, dz) = head.backward(&z, &dlogits);
            let enc_grad = encode_backward(model, cache.expect("cache requested"), &dz)?;
            let grads = Model {
                kind: model.kind,
                encoder: enc_grad,
                head: Some(head_grad),
            };
            opt.step(model, &grads);
            total += loss * nodes.len() as f64;
        }
        Ok(total / train.len() as f64)
    };
    let validate = |m: &Model| node_accuracy(m, mag, traj_t, traj_i, &val_nodes);
    fit(model, cfg, epoch_fn, validate)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Seeded held-out edge split: returns the graph without the held-out edges
/// and the held-out `(u, v)` pairs (`u < v`).
pub fn split_edges(mag: &Mag, holdout: f64, seed_value: u64) -> Result<(Mag, Vec<(usize, usize)>)> {
    if !(holdout > 0.0 && holdout < 1.0) {
        return Err(Error::Config(format!("holdout fraction must lie in (0, 1), got {holdout}")));
    }
    let mut edges = mag.edge_pairs();
    edges.shuffle(&mut seed::rng(seed_value));
    let k = ((edges.len() as f64) * holdout).round() as usize;
    let held: Vec<(usize, usize)> = edges[..k].to_vec();
    let kept = &edges[k..];
    let g = Mag::from_edges(
        mag.n(),
        kept,
        mag.features(crate::mag::Modality::Text).clone(),
        mag.features(crate::mag::Modality::Image).clone(),
        mag.labels().map(|l| l.to_vec()),
    )?;
    let g = match mag.splits() {
        Some(s) => g.with_splits(s.clone())?,
        None => g,
    };
    Ok((g, held))
}

/// Per-query negatives: `count` distinct nodes that are neither the source,
/// the positive, nor in `known` adjacency of the source.
pub fn sample_negatives(n: usize, queries: &[(usize, usize)], known: &HashSet<(usize, usize)>, count: usize, seed_value: u64) -> Result<Vec<Vec<usize>>> {
    let mut rng = seed::rng(seed_value);
    queries
        .iter()
        .map(|&(u, v)| {
            let mut picked = HashSet::new();
            let mut out = Vec::with_capacity(count);
            let mut attempts = 0usize;
            while out.len() < count {
                attempts += 1;
                if attempts > 100 * count + 1000 {
                    return Err(Error::Config(format!(
                        "could not draw {count} negatives for query ({u}, {v})"
                    )));
                }
                let w = rng.random_range(0..n);
                if w == u || w == v || known.contains(&(u.min(w), u.max(w))) || !picked.insert(w) {
                    continue;
                }
                out.push(w);
            }
            Ok(out)
        })
        .collect()
}

/// Rank (1-based) of each positive among its negatives by dot-product score.
/// Ties go to the lower candidate id.
pub fn score_links(z: &DenseMatrix, edges_pos: &[(usize, usize)], edges_neg: &[Vec<usize>]) -> Result<Vec<usize>> {
    if edges_pos.len() != edges_neg.len() {
        return Err(Error::Shape("one negative list per positive is required".into()));
    }
    let n = z.rows();
    edges_pos
        .iter()
        .zip(edges_neg)
        .map(|(&(u, v), negs)| {
            if let Some(&bad) = [u, v].iter().chain(negs).find(|&&x| x >= n) {
                return Err(Error::Index(format!("endpoint {bad} outside 0..{n}")));
            }
            let sp = dot(z.row(u), z.row(v));
            let ahead = negs
                .iter()
                .filter(|&&w| {
                    let s = dot(z.row(u), z.row(w));
                    s > sp || (s == sp && w < v)
                })
                .count();
            Ok(ahead + 1)
        })
        .collect()
}

/// Link prediction: binary cross-entropy on dot products with one seeded
/// negative per positive; validation MRR on `val_edges` against
/// `val_negatives`.
#[allow(clippy::too_many_arguments)]
pub fn train_link_predictor(
    mag: &Mag,
    traj_t: &Trajectory,
    traj_i: &Trajectory,
    model: Model,
    cfg: &TrainConfig,
    val_edges: &[(usize, usize)],
    val_negatives: &[Vec<usize>],
) -> Result<TrainOutcome> {
    let val_set: HashSet<(usize, usize)> = val_edges.iter().copied().collect();
    let train: Vec<(usize, usize)> = mag
        .edge_pairs()
        .into_iter()
        .filter(|e| !val_set.contains(e))
        .collect();
    if train.is_empty() {
        return Err(Error::Config("no training edges".into()));
    }
    let n = mag.n();
    let batch = cfg.batch_size.min(train.len());
    let epoch_fn = |model: &mut Model, opt: &mut AdamW, rng: &mut seed::Rng| -> Result<f64> {
        let mut order = train.clone();
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut pairs: Vec<(usize, usize, f64)> = chunk.iter().map(|&(u, v)| (u, v, 1.0)).collect();
            for &(u, _) in chunk {
                pairs.push((u, rng.random_range(0..n), 0.0));
            }
            let mut nodes: Vec<usize> = pairs.iter().flat_map(|&(u, v, _)| [u, v]).collect();
            nodes.sort_unstable();
            nodes.dedup();
            let pos = |x: usize| nodes.binary_search(&x).expect("node listed");
            let (z, cache) = encode(model, traj_t, traj_i, &nodes, true)?;
            let mut dz = DenseMatrix::zeros(z.rows(), z.cols());
            let scale = 1.0 / pairs.len() as f64;
            let mut loss = 0.0;
            for &(u, v, y) in &pairs {
                let (ru, rv) = (pos(u), pos(v));
                let s = dot(z.row(ru), z.row(rv));
                loss += if y > 0.5 { softplus(-s) } else { softplus(s) };
                let g = (sigmoid(s) - y) * scale;
                let (zu, zv) = (z.row(ru).to_vec(), z.row(rv).to_vec());
                dz.row_mut(ru).iter_mut().zip(&zv).for_each(|(a, b)| *a += g * b);
                dz.row_mut(rv).iter_mut().zip(&zu).for_each(|(a, b)| *a += g * b);
            }
            let enc_grad = encode_backward(model, cache.expect("cache requested"), &dz)?;
            let grads = Model {
                kind: model.kind,
                encoder: enc_grad,
                head: None,
            };
            opt.step(model, &grads);
            total += loss * scale * chunk.len() as f64;
        }
        Ok(total / train.len() as f64)
    };
    let validate = |m: &Model| -> Result<f64> {
        if val_edges.is_empty() {
            return Ok(0.0);
        }
        let z = embed(m, traj_t, traj_i)?;
        let ranks = score_links(&z, val_edges, val_negatives)?;
        Ok(crate::metrics::mrr_hits(&ranks, &[])?.0)
    };
    fit(model, cfg, epoch_fn, validate)
}

/// Cross-modal retrieval ranks over `nodes`: each node's text half queries
/// the image halves of all listed nodes (and vice versa); the matching node
/// is the positive. Returns `(text→image, image→text)` ranks.
pub fn retrieval_ranks(z: &DenseMatrix, nodes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    if !z.cols().is_multiple_of(2) {
        return Err(Error::Shape("embedding width must be even".into()));
    }
    if let Some(&bad) = nodes.iter().find(|&&v| v >= z.rows()) {
        return Err(Error::Index(format!("node {bad} outside 0..{}", z.rows())));
    }
    let d = z.cols() / 2;
    let half = |v: usize, h: usize| &z.row(v)[h * d..(h + 1) * d];
    let rank = |from: usize, to: usize| -> Vec<usize> {
        nodes
            .iter()
            .map(|&q| {
                let sp = cosine(half(q, from), half(q, to));
                1 + nodes
                    .iter()
                    .filter(|&&c| {
                        if c == q {
                            return false;
                        }
                        let s = cosine(half(q, from), half(c, to));
                        s > sp || (s == sp && c < q)
                    })
                    .count()
            })
            .collect()
    };
    Ok((rank(0, 1), rank(1, 0)))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means with k-means++ seeding; best inertia over `restarts`.
pub fn kmeans(x: &DenseMatrix, k: usize, restarts: usize, seed_value: u64) -> Result<Vec<usize>> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::Config(format!("cannot form {k} clusters from {n} points")));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 0..restarts.max(1) {
        let mut rng = seed::rng(seed::derive(seed_value, r as u64));
        let mut centers: Vec<Vec<f64>> = vec![x.row(rng.random_range(0..n)).to_vec()];
        let mut d2: Vec<f64> = (0..n).map(|v| sq_dist(x.row(v), &centers[0])).collect();
        while centers.len() < k {
            let total: f64 = d2.iter().sum();
            let pick = if total > 0.0 {
                let mut t = rng.random::<f64>() * total;
                let mut idx = n - 1;
                for (v, &w) in d2.iter().enumerate() {
                    if t < w {
                        idx = v;
                        break;
                    }
                    t -= w;
                }
                idx
            } else {
                rng.random_range(0..n)
            };
            centers.push(x.row(pick).to_vec());
            for v in 0..n {
                d2[v] = d2[v].min(sq_dist(x.row(v), centers.last().expect("nonempty")));
            }
        }
        let mut assign = vec![0usize; n];
        for _ in 0..100 {
            let mut changed = false;
            for v in 0..n {
                let c = (0..k).fold(0, |b, c| {
                    if sq_dist(x.row(v), &centers[c]) < sq_dist(x.row(v), &centers[b]) {
                        c
                    } else {
                        b
                    }
                });
                if c != assign[v] {
                    assign[v] = c;
                    changed = true;
                }
            }
            let mut sums = vec![vec![0.0; x.cols()]; k];
            let mut counts = vec![0usize; k];
            for v in 0..n {
                counts[assign[v]] += 1;
                sums[assign[v]].iter_mut().zip(x.row(v)).for_each(|(a, b)| *a += b);
            }
            for c in 0..k {
                // empty clusters keep their previous center
                if counts[c] > 0 {
                    centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = (0..n).map(|v| sq_dist(x.row(v), &centers[assign[v]])).sum();
        if best.as_ref().is_none_or(|b| inertia < b.0) {
            best = Some((inertia, assign));
        }
    }
    Ok(best.expect("at least one restart").1)
}
