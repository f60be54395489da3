//! Trajectory-aligned aggregation.
//!
//! Each node carries a `(K+1) × d` token sequence per modality (its hop
//! trajectory). The module runs, per node and independently of every other
//! node:
//!
//! 1. self-attention over the hop axis with a residual MLP,
//! 2. cross-attention with queries from one modality and keys/values from
//!    the other (both directions read the pre-update tensors),
//! 3. a per-hop cosine consistency signal between the two modalities,
//! 4. a gate network scoring `[g ∥ c]` per hop, softmaxed over hops, that
//!    weights the hop slices into one embedding per modality.
//!
//! Backward is written out by hand. All per-node buffers are row-major with
//! the hop index as the row.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine, gemm_nn, gemm_nt, gemm_tn, norm2, softmax_in_place, DenseMatrix};
use crate::params::{prefixed, ParamSet};
use crate::par;
use crate::seed;
use crate::trajectory::Trajectory;

/// Nodes per gradient partial sum; fixed so results do not depend on the
/// number of threads.
const GRAD_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaaConfig {
    pub d: usize,
    #[serde(default = "default_hidden")]
    pub hidden_attn: usize,
    #[serde(default = "default_hidden")]
    pub hidden_gate: usize,
    /// Only a single head is implemented.
    #[serde(default = "default_heads")]
    pub heads: usize,
}

fn default_hidden() -> usize {
    32
}

fn default_heads() -> usize {
    1
}

impl TaaConfig {
    pub fn new(d: usize, hidden_attn: usize, hidden_gate: usize) -> Self {
        Self {
            d,
            hidden_attn,
            hidden_gate,
            heads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.hidden_attn == 0 || self.hidden_gate == 0 {
            return Err(Error::Config("taa dimensions must be positive".into()));
        }
        if self.heads != 1 {
            return Err(Error::Config(format!(
                "heads = {} requested; only single-head attention is implemented",
                self.heads
            )));
        }
        Ok(())
    }
}

/// One-hidden-layer ReLU network applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: DenseMatrix,
    pub b1: DenseMatrix,
    pub w2: DenseMatrix,
    pub b2: DenseMatrix,
}

fn xavier(rows: usize, cols: usize, rng: &mut seed::Rng) -> DenseMatrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..=limit))
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: DenseMatrix::zeros(input, hidden),
            b1: DenseMatrix::zeros(1, hidden),
            w2: DenseMatrix::zeros(hidden, output),
            b2: DenseMatrix::zeros(1, output),
        }
    }

    fn init(input: usize, hidden: usize, output: usize, rng: &mut seed::Rng) -> Self {
        let w1 = xavier(input, hidden, rng);
        let w2 = xavier(hidden, output, rng);
        Self {
            w1,
            b1: DenseMatrix::zeros(1, hidden),
            w2,
            b2: DenseMatrix::zeros(1, output),
        }
    }

    pub fn input(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn output(&self) -> usize {
        self.w2.cols()
    }

    fn named(&self) -> Vec<(String, &DenseMatrix)> {
        vec![
            ("w1".into(), &self.w1),
            ("b1".into(), &self.b1),
            ("w2".into(), &self.w2),
            ("b2".into(), &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// `y += MLP(x)` for `rows` input rows; fills the hidden caches.
    fn forward(&self, x: &[f64], rows: usize, hpre: &mut Vec<f64>, hact: &mut Vec<f64>, y: &mut [f64]) {
        let (inp, h, out) = (self.input(), self.hidden(), self.output());
        hpre.clear();
        for _ in 0..rows {
            hpre.extend_from_slice(self.b1.data());
        }
        gemm_nn(x, self.w1.data(), rows, inp, h, hpre);
        hact.clear();
        hact.extend(hpre.iter().map(|&v| v.max(0.0)));
        for r in 0..rows {
            y[r * out..(r + 1) * out]
                .iter_mut()
                .zip(self.b2.data())
                .for_each(|(a, b)| *a += b);
        }
        gemm_nn(hact, self.w2.data(), rows, h, out, y);
    }

    /// Accumulates parameter gradients into `g` and input gradients into `dx`.
    #[allow(clippy::too_many_arguments)]
    fn backward(&self, g: &mut Mlp, x: &[f64], hpre: &[f64], hact: &[f64], dy: &[f64], rows: usize, dx: &mut [f64]) {
        let (inp, h, out) = (self.input(), self.hidden(), self.output());
        gemm_tn(hact, dy, rows, h, out, g.w2.data_mut());
        for r in 0..rows {
            g.b2.data_mut()
                .iter_mut()
                .zip(&dy[r * out..(r + 1) * out])
                .for_each(|(a, b)| *a += b);
        }
        let mut dh = vec![0.0; rows * h];
        gemm_nt(dy, self.w2.data(), rows, out, h, &mut dh);
        // subgradient 0 at the kink
        dh.iter_mut().zip(hpre).for_each(|(d, &p)| {
            if p <= 0.0 {
                *d = 0.0;
            }
        });
        gemm_tn(x, &dh, rows, inp, h, g.w1.data_mut());
        for r in 0..rows {
            g.b1.data_mut()
                .iter_mut()
                .zip(&dh[r * h..(r + 1) * h])
                .for_each(|(a, b)| *a += b);
        }
        gemm_nt(&dh, self.w1.data(), rows, h, inp, dx);
    }
}

/// Single-head attention with a residual MLP: `out = q_src + MLP(softmax(QKᵀ/√d)V)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub wq: DenseMatrix,
    pub wk: DenseMatrix,
    pub wv: DenseMatrix,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, Default)]
struct AttnCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    p: Vec<f64>,
    att: Vec<f64>,
    hpre: Vec<f64>,
    hact: Vec<f64>,
}

impl AttentionBlock {
    pub fn zeros(d: usize, hidden: usize) -> Self {
        Self {
            wq: DenseMatrix::zeros(d, d),
            wk: DenseMatrix::zeros(d, d),
            wv: DenseMatrix::zeros(d, d),
            mlp: Mlp::zeros(d, hidden, d),
        }
    }

    fn init(d: usize, hidden: usize, rng: &mut seed::Rng) -> Self {
        let wq = xavier(d, d, rng);
        let wk = xavier(d, d, rng);
        let wv = xavier(d, d, rng);
        Self {
            wq,
            wk,
            wv,
            mlp: Mlp::init(d, hidden, d, rng),
        }
    }

    fn d(&self) -> usize {
        self.wq.rows()
    }

    fn named(&self) -> Vec<(String, &DenseMatrix)> {
        let mut v = vec![
            ("wq".to_string(), &self.wq),
            ("wk".to_string(), &self.wk),
            ("wv".to_string(), &self.wv),
        ];
        v.extend(prefixed("mlp", self.mlp.named()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut v = vec![&mut self.wq, &mut self.wk, &mut self.wv];
        v.extend(self.mlp.tensors_mut());
        v
    }

    fn forward(&self, q_src: &[f64], kv_src: &[f64], l: usize, out: &mut [f64], c: &mut AttnCache) {
        let d = self.d();
        let scale = 1.0 / (d as f64).sqrt();
        for (buf, w, src) in [
            (&mut c.q, &self.wq, q_src),
            (&mut c.k, &self.wk, kv_src),
            (&mut c.v, &self.wv, kv_src),
        ] {
            buf.clear();
            buf.resize(l * d, 0.0);
            gemm_nn(src, w.data(), l, d, d, buf);
        }
        c.p.clear();
        c.p.resize(l * l, 0.0);
        gemm_nt(&c.q, &c.k, l, d, l, &mut c.p);
        for row in c.p.chunks_mut(l) {
            row.iter_mut().for_each(|s| *s *= scale);
            softmax_in_place(row);
        }
        c.att.clear();
        c.att.resize(l * d, 0.0);
        gemm_nn(&c.p, &c.v, l, l, d, &mut c.att);
        out.copy_from_slice(q_src);
        self.mlp.forward(&c.att, l, &mut c.hpre, &mut c.hact, out);
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        g: &mut AttentionBlock,
        c: &AttnCache,
        q_src: &[f64],
        kv_src: &[f64],
        dout: &[f64],
        l: usize,
        dq_src: &mut [f64],
        dkv_src: &mut [f64],
    ) {
        let d = self.d();
        let scale = 1.0 / (d as f64).sqrt();
        dq_src.iter_mut().zip(dout).for_each(|(a, b)| *a += b);
        let mut datt = vec![0.0; l * d];
        self.mlp
            .backward(&mut g.mlp, &c.att, &c.hpre, &c.hact, dout, l, &mut datt);
        let mut dp = vec![0.0; l * l];
        gemm_nt(&datt, &c.v, l, d, l, &mut dp);
        let mut dv = vec![0.0; l * d];
        gemm_tn(&c.p, &datt, l, l, d, &mut dv);
        // softmax backward, then the 1/√d scaling
        for (drow, prow) in dp.chunks_mut(l).zip(c.p.chunks(l)) {
            let s: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
            drow.iter_mut()
                .zip(prow)
                .for_each(|(dv, &pv)| *dv = pv * (*dv - s) * scale);
        }
        let mut dq = vec![0.0; l * d];
        gemm_nn(&dp, &c.k, l, l, d, &mut dq);
        let mut dk = vec![0.0; l * d];
        gemm_tn(&dp, &c.q, l, l, d, &mut dk);

        gemm_tn(q_src, &dq, l, d, d, g.wq.data_mut());
        gemm_nt(&dq, self.wq.data(), l, d, d, dq_src);
        gemm_tn(kv_src, &dk, l, d, d, g.wk.data_mut());
        gemm_nt(&dk, self.wk.data(), l, d, d, dkv_src);
        gemm_tn(kv_src, &dv, l, d, d, g.wv.data_mut());
        gemm_nt(&dv, self.wv.data(), l, d, d, dkv_src);
    }
}

/// Parameters owned by one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityParams {
    pub self_attn: AttentionBlock,
    /// Queries from this modality, keys/values from the other.
    pub cross_attn: AttentionBlock,
    /// `(d+1) → h_g → 1` hop scorer.
    pub gate: Mlp,
}

impl ModalityParams {
    fn zeros(cfg: &TaaConfig) -> Self {
        Self {
            self_attn: AttentionBlock::zeros(cfg.d, cfg.hidden_attn),
            cross_attn: AttentionBlock::zeros(cfg.d, cfg.hidden_attn),
            gate: Mlp::zeros(cfg.d + 1, cfg.hidden_gate, 1),
        }
    }

    fn init(cfg: &TaaConfig, rng: &mut seed::Rng) -> Self {
        let self_attn = AttentionBlock::init(cfg.d, cfg.hidden_attn, rng);
        let cross_attn = AttentionBlock::init(cfg.d, cfg.hidden_attn, rng);
        let gate = Mlp::init(cfg.d + 1, cfg.hidden_gate, 1, rng);
        Self {
            self_attn,
            cross_attn,
            gate,
        }
    }

    fn named(&self) -> Vec<(String, &DenseMatrix)> {
        let mut v = prefixed("self", self.self_attn.named());
        v.extend(prefixed("cross", self.cross_attn.named()));
        v.extend(prefixed("gate", self.gate.named()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut v = self.self_attn.tensors_mut();
        v.extend(self.cross_attn.tensors_mut());
        v.extend(self.gate.tensors_mut());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaaParams {
    cfg: TaaConfig,
    pub t: ModalityParams,
    pub i: ModalityParams,
}

impl TaaParams {
    pub fn zeros(cfg: &TaaConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: *cfg,
            t: ModalityParams::zeros(cfg),
            i: ModalityParams::zeros(cfg),
        })
    }

    /// Scaled-uniform weights, zero biases.
    pub fn init(cfg: &TaaConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng(seed);
        let t = ModalityParams::init(cfg, &mut rng);
        let i = ModalityParams::init(cfg, &mut rng);
        Ok(Self { cfg: *cfg, t, i })
    }

    /// Same draw for both modalities.
    pub fn tied(cfg: &TaaConfig, seed: u64) -> Result<Self> {
        let mut p = Self::init(cfg, seed)?;
        p.i = p.t.clone();
        Ok(p)
    }

    pub fn config(&self) -> &TaaConfig {
        &self.cfg
    }

    pub fn d(&self) -> usize {
        self.cfg.d
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            cfg: self.cfg,
            t: ModalityParams::zeros(&self.cfg),
            i: ModalityParams::zeros(&self.cfg),
        }
    }
}

impl ParamSet for TaaParams {
    fn named(&self) -> Vec<(String, &DenseMatrix)> {
        let mut v = prefixed("t", self.t.named());
        v.extend(prefixed("i", self.i.named()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut v = self.t.tensors_mut();
        v.extend(self.i.tensors_mut());
        v
    }
}

/// `N × (K+1) × d` tensor stored as an `N × (K+1)·d` matrix, hop-major per row.
#[derive(Debug, Clone, PartialEq)]
pub struct HopStack {
    hops: usize,
    d: usize,
    data: DenseMatrix,
}

impl HopStack {
    pub fn new(hops: usize, d: usize, data: DenseMatrix) -> Result<Self> {
        if hops == 0 || d == 0 || data.cols() != hops * d {
            return Err(Error::Shape(format!(
                "stack of {hops} hops × {d} needs {} columns, got {}",
                hops * d,
                data.cols()
            )));
        }
        Ok(Self { hops, d, data })
    }

    pub fn zeros(n: usize, hops: usize, d: usize) -> Self {
        Self {
            hops,
            d,
            data: DenseMatrix::zeros(n, hops * d),
        }
    }

    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let (n, d, hops) = (traj.n(), traj.d(), traj.len());
        let mut data = DenseMatrix::zeros(n, hops * d);
        par::for_each_row_mut(data.data_mut(), hops * d, |r, row| traj.node_block(r, row));
        Self { hops, d, data }
    }

    pub fn n(&self) -> usize {
        self.data.rows()
    }

    pub fn hops(&self) -> usize {
        self.hops
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// All hop slices of one node.
    pub fn node(&self, n: usize) -> &[f64] {
        self.data.row(n)
    }

    pub fn slice(&self, n: usize, k: usize) -> &[f64] {
        &self.data.row(n)[k * self.d..(k + 1) * self.d]
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.data
    }

    /// Hop `k` of every node as an `N × d` matrix.
    pub fn hop_matrix(&self, k: usize) -> DenseMatrix {
        DenseMatrix::from_fn(self.n(), self.d, |r, j| self.data.get(r, k * self.d + j))
    }

    fn shape(&self) -> (usize, usize, usize) {
        (self.n(), self.hops, self.d)
    }
}

#[derive(Debug, Clone, Default)]
struct GateCache {
    x: Vec<f64>,
    hpre: Vec<f64>,
    hact: Vec<f64>,
    a: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct NodeCache {
    h_t: Vec<f64>,
    h_i: Vec<f64>,
    self_t: AttnCache,
    self_i: AttnCache,
    f_t: Vec<f64>,
    f_i: Vec<f64>,
    cross_t: AttnCache,
    cross_i: AttnCache,
    g_t: Vec<f64>,
    g_i: Vec<f64>,
    c: Vec<f64>,
    gate_t: GateCache,
    gate_i: GateCache,
    z_t: Vec<f64>,
    z_i: Vec<f64>,
}

/// Forward result. The cache is present only after [`forward`] /
/// [`forward_nodes`] with caching and is consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct TaaOutput {
    pub z_t: DenseMatrix,
    pub z_i: DenseMatrix,
    pub z: DenseMatrix,
    pub hop_weights_t: DenseMatrix,
    pub hop_weights_i: DenseMatrix,
    pub consistency: DenseMatrix,
    /// Post-cross-attention tensors.
    pub g_t: HopStack,
    pub g_i: HopStack,
    cache: Option<Vec<NodeCache>>,
}

impl TaaOutput {
    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn n(&self) -> usize {
        self.z.rows()
    }
}

/// Gradients from [`backward`]; input gradients only when requested.
#[derive(Debug, Clone)]
pub struct TaaGrads {
    pub params: TaaParams,
    pub traj_t: Option<HopStack>,
    pub traj_i: Option<HopStack>,
}

/// Softmax-weighted sum of hop slices: `z = Σ_k softmax(scores)_k g[k]`.
pub fn hop_fusion(g: &[f64], scores: &[f64], d: usize, z: &mut [f64], weights: &mut [f64]) {
    weights.copy_from_slice(scores);
    softmax_in_place(weights);
    z.fill(0.0);
    for (k, &a) in weights.iter().enumerate() {
        z.iter_mut()
            .zip(&g[k * d..(k + 1) * d])
            .for_each(|(o, v)| *o += a * v);
    }
}

fn gate_forward(gate: &Mlp, g: &[f64], c: &[f64], l: usize, d: usize, cache: &mut GateCache, z: &mut [f64]) {
    cache.x.clear();
    for k in 0..l {
        cache.x.extend_from_slice(&g[k * d..(k + 1) * d]);
        cache.x.push(c[k]);
    }
    let mut scores = vec![0.0; l];
    gate.forward(&cache.x, l, &mut cache.hpre, &mut cache.hact, &mut scores);
    cache.a.clear();
    cache.a.resize(l, 0.0);
    hop_fusion(g, &scores, d, z, &mut cache.a);
}

/// Accumulates into `dg` (hop slices) and `dc` (consistency signal).
#[allow(clippy::too_many_arguments)]
fn gate_backward(
    gate: &Mlp,
    grad: &mut Mlp,
    cache: &GateCache,
    g: &[f64],
    dz: &[f64],
    l: usize,
    d: usize,
    dg: &mut [f64],
    dc: &mut [f64],
) {
    let a = &cache.a;
    let mut da = vec![0.0; l];
    for k in 0..l {
        let gk = &g[k * d..(k + 1) * d];
        da[k] = gk.iter().zip(dz).map(|(x, y)| x * y).sum();
        dg[k * d..(k + 1) * d]
            .iter_mut()
            .zip(dz)
            .for_each(|(o, y)| *o += a[k] * y);
    }
    let s: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
    let ds: Vec<f64> = a.iter().zip(&da).map(|(x, y)| x * (y - s)).collect();
    let mut dx = vec![0.0; l * (d + 1)];
    gate.backward(grad, &cache.x, &cache.hpre, &cache.hact, &ds, l, &mut dx);
    for k in 0..l {
        let row = &dx[k * (d + 1)..(k + 1) * (d + 1)];
        dg[k * d..(k + 1) * d]
            .iter_mut()
            .zip(&row[..d])
            .for_each(|(o, v)| *o += v);
        dc[k] += row[d];
    }
}

fn consistency_row(g_t: &[f64], g_i: &[f64], l: usize, d: usize, out: &mut [f64]) {
    for k in 0..l {
        out[k] = cosine(&g_t[k * d..(k + 1) * d], &g_i[k * d..(k + 1) * d]);
    }
}

/// Gradient of `cos(a, b)` w.r.t. `a`, scaled by `dc`, accumulated into `da`.
fn cosine_grad(a: &[f64], b: &[f64], c: f64, dc: f64, da: &mut [f64]) {
    let (na, nb) = (norm2(a), norm2(b));
    if na == 0.0 || nb == 0.0 || dc == 0.0 {
        return;
    }
    let inv = 1.0 / (na * nb);
    let ca = c / (na * na);
    for ((o, &x), &y) in da.iter_mut().zip(a).zip(b) {
        *o += dc * (y * inv - ca * x);
    }
}

fn node_forward(p: &TaaParams, h_t: Vec<f64>, h_i: Vec<f64>, l: usize) -> NodeCache {
    let d = p.d();
    let mut c = NodeCache {
        f_t: vec![0.0; l * d],
        f_i: vec![0.0; l * d],
        g_t: vec![0.0; l * d],
        g_i: vec![0.0; l * d],
        c: vec![0.0; l],
        z_t: vec![0.0; d],
        z_i: vec![0.0; d],
        ..NodeCache::default()
    };
    p.t.self_attn.forward(&h_t, &h_t, l, &mut c.f_t, &mut c.self_t);
    p.i.self_attn.forward(&h_i, &h_i, l, &mut c.f_i, &mut c.self_i);
    p.t.cross_attn.forward(&c.f_t, &c.f_i, l, &mut c.g_t, &mut c.cross_t);
    p.i.cross_attn.forward(&c.f_i, &c.f_t, l, &mut c.g_i, &mut c.cross_i);
    consistency_row(&c.g_t, &c.g_i, l, d, &mut c.c);
    gate_forward(&p.t.gate, &c.g_t, &c.c, l, d, &mut c.gate_t, &mut c.z_t);
    gate_forward(&p.i.gate, &c.g_i, &c.c, l, d, &mut c.gate_i, &mut c.z_i);
    c.h_t = h_t;
    c.h_i = h_i;
    c
}

/// Returns `(dh_t, dh_i)`; parameter gradients accumulate into `g`.
fn node_backward(p: &TaaParams, g: &mut TaaParams, c: &NodeCache, dz_t: &[f64], dz_i: &[f64], l: usize) -> (Vec<f64>, Vec<f64>) {
    let d = p.d();
    let mut dg_t = vec![0.0; l * d];
    let mut dg_i = vec![0.0; l * d];
    let mut dc = vec![0.0; l];
    gate_backward(&p.t.gate, &mut g.t.gate, &c.gate_t, &c.g_t, dz_t, l, d, &mut dg_t, &mut dc);
    gate_backward(&p.i.gate, &mut g.i.gate, &c.gate_i, &c.g_i, dz_i, l, d, &mut dg_i, &mut dc);
    for k in 0..l {
        let (a, b) = (&c.g_t[k * d..(k + 1) * d], &c.g_i[k * d..(k + 1) * d]);
        cosine_grad(a, b, c.c[k], dc[k], &mut dg_t[k * d..(k + 1) * d]);
        cosine_grad(b, a, c.c[k], dc[k], &mut dg_i[k * d..(k + 1) * d]);
    }
    let mut df_t = vec![0.0; l * d];
    let mut df_i = vec![0.0; l * d];
    p.t.cross_attn.backward(&mut g.t.cross_attn, &c.cross_t, &c.f_t, &c.f_i, &dg_t, l, &mut df_t, &mut df_i);
    p.i.cross_attn.backward(&mut g.i.cross_attn, &c.cross_i, &c.f_i, &c.f_t, &dg_i, l, &mut df_i, &mut df_t);
    let mut dh_t = vec![0.0; l * d];
    let mut dh_i = vec![0.0; l * d];
    let mut scratch = vec![0.0; l * d];
    p.t.self_attn.backward(&mut g.t.self_attn, &c.self_t, &c.h_t, &c.h_t, &df_t, l, &mut dh_t, &mut scratch);
    dh_t.iter_mut().zip(&scratch).for_each(|(a, b)| *a += b);
    scratch.fill(0.0);
    p.i.self_attn.backward(&mut g.i.self_attn, &c.self_i, &c.h_i, &c.h_i, &df_i, l, &mut dh_i, &mut scratch);
    dh_i.iter_mut().zip(&scratch).for_each(|(a, b)| *a += b);
    (dh_t, dh_i)
}

fn check_pair(traj_t: &Trajectory, traj_i: &Trajectory, params: &TaaParams) -> Result<()> {
    if traj_t.n() != traj_i.n() || traj_t.len() != traj_i.len() || traj_t.d() != traj_i.d() {
        return Err(Error::Shape("text and image trajectories differ in shape".into()));
    }
    if traj_t.d() != params.d() {
        return Err(Error::Shape(format!(
            "trajectory width {} does not match model width {}",
            traj_t.d(),
            params.d()
        )));
    }
    Ok(())
}

fn assemble(caches: Vec<NodeCache>, l: usize, d: usize, keep: bool) -> TaaOutput {
    let n = caches.len();
    let mut z_t = DenseMatrix::zeros(n, d);
    let mut z_i = DenseMatrix::zeros(n, d);
    let mut z = DenseMatrix::zeros(n, 2 * d);
    let mut w_t = DenseMatrix::zeros(n, l);
    let mut w_i = DenseMatrix::zeros(n, l);
    let mut cons = DenseMatrix::zeros(n, l);
    let mut g_t = HopStack::zeros(n, l, d);
    let mut g_i = HopStack::zeros(n, l, d);
    for (r, c) in caches.iter().enumerate() {
        z_t.row_mut(r).copy_from_slice(&c.z_t);
        z_i.row_mut(r).copy_from_slice(&c.z_i);
        z.row_mut(r)[..d].copy_from_slice(&c.z_t);
        z.row_mut(r)[d..].copy_from_slice(&c.z_i);
        w_t.row_mut(r).copy_from_slice(&c.gate_t.a);
        w_i.row_mut(r).copy_from_slice(&c.gate_i.a);
        cons.row_mut(r).copy_from_slice(&c.c);
        g_t.data.row_mut(r).copy_from_slice(&c.g_t);
        g_i.data.row_mut(r).copy_from_slice(&c.g_i);
    }
    TaaOutput {
        z_t,
        z_i,
        z,
        hop_weights_t: w_t,
        hop_weights_i: w_i,
        consistency: cons,
        g_t,
        g_i,
        cache: keep.then_some(caches),
    }
}

/// Full pipeline for the listed nodes (output row `r` is node `nodes[r]`).
pub fn forward_nodes(
    traj_t: &Trajectory,
    traj_i: &Trajectory,
    nodes: &[usize],
    params: &TaaParams,
    keep_cache: bool,
) -> Result<TaaOutput> {
    check_pair(traj_t, traj_i, params)?;
    if let Some(&bad) = nodes.iter().find(|&&v| v >= traj_t.n()) {
        return Err(Error::Index(format!("node {bad} out of range for {} nodes", traj_t.n())));
    }
    let (l, d) = (traj_t.len(), params.d());
    let caches = par::map_indices(nodes.len(), |r| {
        let mut h_t = vec![0.0; l * d];
        let mut h_i = vec![0.0; l * d];
        traj_t.node_block(nodes[r], &mut h_t);
        traj_i.node_block(nodes[r], &mut h_i);
        node_forward(params, h_t, h_i, l)
    });
    Ok(assemble(caches, l, d, keep_cache))
}

/// Self-attention → cross-attention → consistency → gated fusion over all
/// nodes, caching intermediates for [`backward`].
pub fn forward(traj_t: &Trajectory, traj_i: &Trajectory, params: &TaaParams) -> Result<TaaOutput> {
    let nodes: Vec<usize> = (0..traj_t.n()).collect();
    forward_nodes(traj_t, traj_i, &nodes, params, true)
}

/// Reverse pass for `loss` with `∂loss/∂z = grad_z`. Consumes the cache.
pub fn backward(
    output: &mut TaaOutput,
    grad_z: &DenseMatrix,
    params: &TaaParams,
    input_grads: bool,
) -> Result<TaaGrads> {
    let caches = output
        .cache
        .take()
        .ok_or_else(|| Error::State("backward called without a forward cache".into()))?;
    let n = caches.len();
    let d = params.d();
    if grad_z.shape() != (n, 2 * d) {
        output.cache = Some(caches);
        return Err(Error::Shape(format!(
            "grad_z is {:?}, expected {:?}",
            grad_z.shape(),
            (n, 2 * d)
        )));
    }
    let l = output.g_t.hops();
    let partials = par::map_chunks(n, GRAD_CHUNK, |range| {
        let mut g = params.zeros_like();
        let mut dh = Vec::new();
        for r in range {
            let row = grad_z.row(r);
            let (a, b) = node_backward(params, &mut g, &caches[r], &row[..d], &row[d..], l);
            if input_grads {
                dh.push((a, b));
            }
        }
        (g, dh)
    });
    let mut total = params.zeros_like();
    let mut dt = input_grads.then(|| HopStack::zeros(n, l, d));
    let mut di = input_grads.then(|| HopStack::zeros(n, l, d));
    let mut r = 0;
    for (g, dh) in partials {
        total.accumulate(&g);
        for (a, b) in dh {
            if let (Some(dt), Some(di)) = (dt.as_mut(), di.as_mut()) {
                dt.data.row_mut(r).copy_from_slice(&a);
                di.data.row_mut(r).copy_from_slice(&b);
            }
            r += 1;
        }
    }
    Ok(TaaGrads {
        params: total,
        traj_t: dt,
        traj_i: di,
    })
}

/// Hop-axis self-attention for one modality.
pub fn self_attend(traj: &Trajectory, block: &AttentionBlock) -> Result<HopStack> {
    if traj.d() != block.d() {
        return Err(Error::Shape(format!(
            "trajectory width {} does not match block width {}",
            traj.d(),
            block.d()
        )));
    }
    let h = HopStack::from_trajectory(traj);
    let (l, d) = (h.hops, h.d);
    let mut out = HopStack::zeros(h.n(), l, d);
    par::for_each_row_mut(out.data.data_mut(), l * d, |r, row| {
        let mut c = AttnCache::default();
        block.forward(h.node(r), h.node(r), l, row, &mut c);
    });
    Ok(out)
}

/// Both cross-attention directions from the same pre-update tensors.
pub fn cross_attend(f_t: &HopStack, f_i: &HopStack, params: &TaaParams) -> Result<(HopStack, HopStack)> {
    if f_t.shape() != f_i.shape() || f_t.d != params.d() {
        return Err(Error::Shape(format!(
            "cross-attention inputs {:?} and {:?} with model width {}",
            f_t.shape(),
            f_i.shape(),
            params.d()
        )));
    }
    let (l, d) = (f_t.hops, f_t.d);
    let mut g_t = HopStack::zeros(f_t.n(), l, d);
    let mut g_i = HopStack::zeros(f_t.n(), l, d);
    par::for_each_row_mut(g_t.data.data_mut(), l * d, |r, row| {
        params.t.cross_attn.forward(f_t.node(r), f_i.node(r), l, row, &mut AttnCache::default());
    });
    par::for_each_row_mut(g_i.data.data_mut(), l * d, |r, row| {
        params.i.cross_attn.forward(f_i.node(r), f_t.node(r), l, row, &mut AttnCache::default());
    });
    Ok((g_t, g_i))
}

/// Per node and hop cosine between the two modalities.
pub fn consistency(g_t: &HopStack, g_i: &HopStack) -> Result<DenseMatrix> {
    if g_t.shape() != g_i.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", g_t.shape(), g_i.shape())));
    }
    let (l, d) = (g_t.hops, g_t.d);
    let mut out = DenseMatrix::zeros(g_t.n(), l);
    par::for_each_row_mut(out.data_mut(), l, |r, row| {
        consistency_row(g_t.node(r), g_i.node(r), l, d, row)
    });
    Ok(out)
}

/// Gated hop fusion (no cache is kept).
pub fn fuse(g_t: &HopStack, g_i: &HopStack, c: &DenseMatrix, params: &TaaParams) -> Result<TaaOutput> {
    if g_t.shape() != g_i.shape() || c.shape() != (g_t.n(), g_t.hops) || g_t.d != params.d() {
        return Err(Error::Shape("fusion inputs have inconsistent shapes".into()));
    }
    let (l, d) = (g_t.hops, g_t.d);
    let caches = par::map_indices(g_t.n(), |r| {
        let mut nc = NodeCache {
            g_t: g_t.node(r).to_vec(),
            g_i: g_i.node(r).to_vec(),
            c: c.row(r).to_vec(),
            z_t: vec![0.0; d],
            z_i: vec![0.0; d],
            ..NodeCache::default()
        };
        gate_forward(&params.t.gate, &nc.g_t, &nc.c, l, d, &mut nc.gate_t, &mut nc.z_t);
        gate_forward(&params.i.gate, &nc.g_i, &nc.c, l, d, &mut nc.gate_i, &mut nc.z_i);
        nc
    });
    Ok(assemble(caches, l, d, false))
}
