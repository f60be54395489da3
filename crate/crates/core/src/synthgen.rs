//! Synthetic multimodal graphs with a tunable modal-conflict dial.
//!
//! Topology is a stochastic block model over balanced classes. Text features
//! are class centroids plus Gaussian noise. Image centroids interpolate
//! between the text centroid directions (`conflict = 0`) and a disjoint
//! subspace whose class assignment is permuted (`conflict = 1`), rescaled so
//! every pair of centroids in either modality sits exactly `margin` apart.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baselines::simple_aggregate;
use crate::error::{Error, Result};
use crate::mag::Mag;
use crate::numerics::{cosine, DenseMatrix};
use crate::seed;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub c: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub d_t: usize,
    pub d_i: usize,
    pub conflict: f64,
    pub noise_sigma: f64,
    pub margin: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 500,
            c: 4,
            p_in: 0.05,
            p_out: 0.005,
            d_t: 32,
            d_i: 32,
            conflict: 0.0,
            noise_sigma: 0.5,
            margin: 2.0,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.conflict >= 0.0 && self.conflict <= 1.0) {
            return Err(Error::Config(format!("conflict must lie in [0, 1], got {}", self.conflict)));
        }
        if !(self.p_in > 0.0 && self.p_in <= 1.0 && self.p_out >= 0.0 && self.p_out < self.p_in) {
            return Err(Error::Config(format!(
                "need 0 <= p_out < p_in <= 1, got p_in = {}, p_out = {}",
                self.p_in, self.p_out
            )));
        }
        if self.c < 2 || self.n < 4 * self.c {
            return Err(Error::Config(format!(
                "need at least 2 classes and 4 nodes per class, got n = {}, c = {}",
                self.n, self.c
            )));
        }
        if self.d_t < self.c || self.d_i < 2 * self.c {
            return Err(Error::Config(format!(
                "text needs >= {} dims and image >= {} dims",
                self.c,
                2 * self.c
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) || !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config("noise_sigma must be >= 0 and margin > 0".into()));
        }
        Ok(())
    }
}

/// Calls `emit` with the positions in `0..count` kept by independent
/// Bernoulli(`p`) trials, using geometric skips.
fn bernoulli_positions(count: u64, p: f64, rng: &mut seed::Rng, mut emit: impl FnMut(u64)) {
    if p <= 0.0 || count == 0 {
        return;
    }
    if p >= 1.0 {
        (0..count).for_each(emit);
        return;
    }
    let log_q = (1.0 - p).ln();
    let mut pos: u64 = 0;
    let mut first = true;
    loop {
        let u: f64 = rng.random();
        let skip = ((1.0 - u).ln() / log_q).floor();
        if !skip.is_finite() || skip >= count as f64 {
            return;
        }
        let step = skip as u64 + u64::from(!first);
        first = false;
        pos = match pos.checked_add(step) {
            Some(v) if v < count => v,
            _ => return,
        };
        emit(pos);
    }
}

/// `k`-th pair `(i, j)`, `i < j`, in column order (0,1), (0,2), (1,2), (0,3), …
fn triangular_pair(k: u64) -> (u64, u64) {
    let mut j = ((1.0 + (1.0 + 8.0 * k as f64).sqrt()) / 2.0).floor() as u64;
    while j * (j - 1) / 2 > k {
        j -= 1;
    }
    while (j + 1) * j / 2 <= k {
        j += 1;
    }
    (k - j * (j - 1) / 2, j)
}

/// Block-model edges for the given class assignment.
pub fn sbm_edges(classes: &[Vec<usize>], p_in: f64, p_out: f64, rng: &mut seed::Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for a in 0..classes.len() {
        let ca = &classes[a];
        let m = ca.len() as u64;
        bernoulli_positions(m * m.saturating_sub(1) / 2, p_in, rng, |k| {
            let (i, j) = triangular_pair(k);
            edges.push((ca[i as usize], ca[j as usize]));
        });
        for cb in &classes[a + 1..] {
            let w = cb.len() as u64;
            bernoulli_positions(m * w, p_out, rng, |k| {
                edges.push((ca[(k / w) as usize], cb[(k % w) as usize]));
            });
        }
    }
    edges
}

/// Text and image class centroids (`c × d_t`, `c × d_i`).
pub fn centroids(spec: &SynthSpec, perm: &[usize]) -> (DenseMatrix, DenseMatrix) {
    let r = spec.margin / std::f64::consts::SQRT_2;
    let k = spec.conflict;
    let norm = ((1.0 - k).powi(2) + k * k).sqrt();
    let text = DenseMatrix::from_fn(spec.c, spec.d_t, |c, j| if j == c { r } else { 0.0 });
    let image = DenseMatrix::from_fn(spec.c, spec.d_i, |c, j| {
        let shared = if j == c { 1.0 - k } else { 0.0 };
        let rotated = if j == spec.c + perm[c] { k } else { 0.0 };
        r * (shared + rotated) / norm
    });
    (text, image)
}

/// Seeded synthetic graph; labels are balanced over `c` classes.
pub fn generate(spec: &SynthSpec) -> Result<Mag> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let mut labels: Vec<usize> = (0..spec.n).map(|v| v % spec.c).collect();
    labels.shuffle(&mut rng);
    let mut perm: Vec<usize> = (0..spec.c).collect();
    perm.shuffle(&mut rng);
    let mut classes = vec![Vec::new(); spec.c];
    for (v, &y) in labels.iter().enumerate() {
        classes[y].push(v);
    }
    let edges = sbm_edges(&classes, spec.p_in, spec.p_out, &mut rng);
    let (mu_t, mu_i) = centroids(spec, &perm);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut sample = |mu: &DenseMatrix, d: usize| {
        let mut out = DenseMatrix::zeros(spec.n, d);
        for (v, &y) in labels.iter().enumerate() {
            for (o, m) in out.row_mut(v).iter_mut().zip(mu.row(y)) {
                *o = m + noise.sample(&mut rng);
            }
        }
        out
    };
    let ft = sample(&mu_t, spec.d_t);
    let fi = sample(&mu_i, spec.d_i);
    Mag::from_edges(spec.n, &edges, ft, fi, Some(labels.into_iter().map(Some).collect()))
}

/// Per-hop mean cosines: each modality against its own hop 0, and text
/// against image at the same hop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftRow {
    pub hop: usize,
    pub cos_tt: f64,
    pub cos_ii: f64,
    pub cos_ti: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub drift: Vec<DriftRow>,
    /// Pearson correlations among (text, image, fused) embeddings.
    pub correlation: [[f64; 3]; 3],
}

pub const DRIFT_HEADER: &str = "hop,cos_tt,cos_ii,cos_ti";

impl ProbeReport {
    pub fn drift_csv(&self) -> String {
        let mut s = format!("{DRIFT_HEADER}\n");
        for r in &self.drift {
            let _ = writeln!(s, "{},{},{},{}", r.hop, r.cos_tt, r.cos_ii, r.cos_ti);
        }
        s
    }

    pub fn correlation_csv(&self) -> String {
        let names = ["text", "image", "fused"];
        let mut s = String::from(",text,image,fused\n");
        for (name, row) in names.iter().zip(&self.correlation) {
            let _ = writeln!(s, "{name},{},{},{}", row[0], row[1], row[2]);
        }
        s
    }
}

fn mean_row_cosine(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let n = a.rows();
    (0..n).map(|v| cosine(a.row(v), b.row(v))).sum::<f64>() / n as f64
}

/// Pearson correlation of two equally shaped matrices read as flat samples.
pub fn pearson(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let n = a.data().len() as f64;
    let ma = a.data().iter().sum::<f64>() / n;
    let mb = b.data().iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.data().iter().zip(b.data()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Drift curve over the trajectories, plus the correlation matrix of
/// `(z_t, z_i, (z_t + z_i)/2)`. Without explicit embeddings the hop means
/// stand in for `z_t`, `z_i`.
pub fn conflict_probe(
    traj_t: &Trajectory,
    traj_i: &Trajectory,
    embeddings: Option<(&DenseMatrix, &DenseMatrix)>,
) -> Result<ProbeReport> {
    if traj_t.len() != traj_i.len() || traj_t.hop(0).shape() != traj_i.hop(0).shape() {
        return Err(Error::Shape("trajectories disagree in shape".into()));
    }
    if traj_t.n() == 0 {
        return Err(Error::Shape("probe needs at least one node".into()));
    }
    let drift = (0..traj_t.len())
        .map(|k| DriftRow {
            hop: k,
            cos_tt: mean_row_cosine(traj_t.hop(k), traj_t.hop(0)),
            cos_ii: mean_row_cosine(traj_i.hop(k), traj_i.hop(0)),
            cos_ti: mean_row_cosine(traj_t.hop(k), traj_i.hop(k)),
        })
        .collect();
    let (zt, zi) = match embeddings {
        Some((a, b)) => (a.clone(), b.clone()),
        None => (simple_aggregate(traj_t), simple_aggregate(traj_i)),
    };
    if zt.shape() != zi.shape() {
        return Err(Error::Shape("embedding halves differ in shape".into()));
    }
    let mut fused = zt.clone();
    fused.data_mut().iter_mut().zip(zi.data()).for_each(|(a, b)| *a = 0.5 * (*a + b));
    let reps = [&zt, &zi, &fused];
    let mut correlation = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            correlation[a][b] = if a == b { 1.0 } else { pearson(reps[a], reps[b]) };
        }
    }
    Ok(ProbeReport { drift, correlation })
}
