//! Executable certificates for the propagation stability results and the
//! fusion bound.
//!
//! Each verifier draws independent random instances, one per trial, with the
//! trial seed `seed::derive(master, trial)` (a SplitMix64 mix of the master
//! seed and the trial index). Trials run in parallel and the certificate is
//! all-or-nothing: one failing trial fails it.
//!
//! Inequalities are checked with an absolute slack of [`SLACK`] (1e-9),
//! which only absorbs 64-bit rounding on graphs of at most 64 nodes.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cap::{self, AlignedOperators};
use crate::error::{Error, Result};
use crate::mag::{Mag, Modality, PropagationConfig};
use crate::numerics::{norm2, DenseMatrix};
use crate::par;
use crate::params::ParamSet;
use crate::seed;
use crate::taa::{self, TaaConfig, TaaParams};
use crate::trajectory::Trajectory;

pub const SLACK: f64 = 1e-9;
/// Largest graph the dense fixed-point oracle is used on.
pub const MAX_VERIFY_NODES: usize = 64;
/// Hops over which the per-step ratio is checked.
pub const CONTRACTION_STEPS: usize = 50;
/// Hops after which the iterate must sit on the closed-form fixed point.
pub const CONVERGENCE_HOPS: usize = 200;
pub const CONVERGENCE_TOL: f64 = 1e-8;
/// Below `RATIO_FLOOR · max(1, ‖X*‖)` the iterate error is rounding noise and
/// the per-step ratio is not evaluated; the error must stay below the floor.
pub const RATIO_FLOOR: f64 = 1e-12;
pub const WEIGHT_SUM_TOL: f64 = 1e-10;
pub const SLOPE_BAND: (f64, f64) = (0.8, 1.25);
pub const TAA_K_RATIO_MIN: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorstCase {
    pub trial_seed: u64,
    pub observed: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Certificate {
    pub theorem: String,
    pub trials: usize,
    pub seed: u64,
    pub pass: bool,
    pub worst_case: WorstCase,
}

/// One inequality `observed ≤ bound`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub observed: f64,
    pub bound: f64,
}

impl Check {
    fn new(observed: f64, bound: f64) -> Self {
        Self { observed, bound }
    }

    pub fn holds(&self) -> bool {
        self.observed <= self.bound
    }

    /// Tightness; above 1 means violated.
    fn tightness(&self) -> f64 {
        if self.bound > 0.0 {
            self.observed / self.bound
        } else if self.observed <= 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Per-trial outcome kept alongside a certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_seed: u64,
    pub pass: bool,
    /// Contraction factor of the sampled configuration (0 where unused).
    pub rho: f64,
    /// Largest measured per-step ratio, or the largest LHS/RHS ratio.
    pub worst_ratio: f64,
    /// Final distance to the fixed point (0 where unused).
    pub final_residual: f64,
    /// The tightest (or first violated) inequality of the trial.
    pub worst: Check,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub certificate: Certificate,
    pub records: Vec<TrialRecord>,
}

impl CertificateReport {
    /// Per-trial records as JSON lines.
    pub fn records_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }
}

fn assemble(theorem: &str, master: u64, records: Vec<TrialRecord>) -> CertificateReport {
    let pass = records.iter().all(|r| r.pass);
    // a failing trial is always reported; otherwise the tightest one
    let worst = records
        .iter()
        .max_by(|a, b| {
            (!a.pass)
                .cmp(&!b.pass)
                .then(a.worst.tightness().total_cmp(&b.worst.tightness()))
        })
        .map(|r| WorstCase {
            trial_seed: r.trial_seed,
            observed: r.worst.observed,
            bound: r.worst.bound,
        })
        .unwrap_or(WorstCase {
            trial_seed: master,
            observed: 0.0,
            bound: 0.0,
        });
    CertificateReport {
        certificate: Certificate {
            theorem: theorem.to_string(),
            trials: records.len(),
            seed: master,
            pass,
            worst_case: worst,
        },
        records,
    }
}

/// Seed of trial `index` under `master`.
pub fn trial_seed(master: u64, index: usize) -> u64 {
    seed::derive(master, index as u64)
}

/// A random propagation problem small enough for the dense oracle.
#[derive(Debug, Clone)]
pub struct Instance {
    pub ops: AlignedOperators,
    pub cfg: PropagationConfig,
    pub x0_t: DenseMatrix,
    pub x0_i: DenseMatrix,
}

impl Instance {
    pub fn from_mag(mag: &Mag, cfg: PropagationConfig) -> Result<Self> {
        Ok(Self {
            ops: cap::build_priors(mag)?,
            cfg,
            x0_t: mag.features(Modality::Text).clone(),
            x0_i: mag.features(Modality::Image).clone(),
        })
    }
}

/// Random graph (edge probability 0.3), uniform features in `[-1, 1]` and
/// per-modality coefficients with `γ ∈ [0.05, 1]`.
pub fn random_instance(n_max: usize, seed_value: u64) -> Result<Instance> {
    if !(2..=MAX_VERIFY_NODES).contains(&n_max) {
        return Err(Error::Config(format!(
            "n_max must lie in 2..={MAX_VERIFY_NODES}, got {n_max}"
        )));
    }
    let mut rng = seed::rng(seed_value);
    let n = rng.random_range(2..=n_max);
    let d = rng.random_range(1..=4);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < 0.3 {
                edges.push((u, v));
            }
        }
    }
    let mut feat = || DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..=1.0));
    let (ft, fi) = (feat(), feat());
    let mut coeffs = || {
        let gamma = rng.random_range(0.05..=1.0);
        let split = rng.random::<f64>();
        let alpha = (1.0 - gamma) * split;
        (alpha, 1.0 - gamma - alpha, gamma)
    };
    let (ct, ci) = (coeffs(), coeffs());
    let cfg = PropagationConfig::new(CONVERGENCE_HOPS, ct, ci)?;
    let mag = Mag::from_edges(n, &edges, ft, fi, None)?;
    Instance::from_mag(&mag, cfg)
}

/// Signature of one propagation hop: `(ops, cfg, H_t, H_i, H⁰_t, H⁰_i) → (H_t', H_i')`.
pub type StepFn = dyn Fn(&AlignedOperators, &PropagationConfig, &DenseMatrix, &DenseMatrix, &DenseMatrix, &DenseMatrix) -> (DenseMatrix, DenseMatrix)
    + Sync;

fn diff_norm(a_t: &DenseMatrix, b_t: &DenseMatrix, a_i: &DenseMatrix, b_i: &DenseMatrix) -> f64 {
    let sq = |a: &DenseMatrix, b: &DenseMatrix| -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
    };
    sq(a_t, b_t).max(sq(a_i, b_i)).sqrt()
}

/// Runs the contraction checks on one instance with the given hop function.
/// Configurations with `ρ ≥ 1` are outside the theorem and rejected with
/// [`Error::ContractViolation`].
pub fn contraction_trial(inst: &Instance, step: &StepFn, trial_seed: u64) -> Result<TrialRecord> {
    let rho = inst.cfg.rho();
    let (xs_t, xs_i) = cap::fixed_point(&inst.ops, &inst.cfg, &inst.x0_t, &inst.x0_i)?;
    let floor = RATIO_FLOOR * cap::block_norm(&xs_t, &xs_i).max(1.0);
    let mut checks = Vec::new();
    let mut worst_ratio: f64 = 0.0;
    let (mut h_t, mut h_i) = (inst.x0_t.clone(), inst.x0_i.clone());
    let initial = diff_norm(&h_t, &xs_t, &h_i, &xs_i);
    let mut err = initial;
    for hop in 1..=CONVERGENCE_HOPS {
        let (nt, ni) = step(&inst.ops, &inst.cfg, &h_t, &h_i, &inst.x0_t, &inst.x0_i);
        h_t = nt;
        h_i = ni;
        let next = diff_norm(&h_t, &xs_t, &h_i, &xs_i);
        if hop <= CONTRACTION_STEPS {
            if err > floor {
                let ratio = next / err;
                worst_ratio = worst_ratio.max(ratio);
                checks.push(Check::new(ratio, rho + SLACK));
            } else {
                checks.push(Check::new(next, floor));
            }
        }
        if hop == CONTRACTION_STEPS {
            checks.push(Check::new(next, rho.powi(CONTRACTION_STEPS as i32) * initial + CONVERGENCE_TOL));
        }
        err = next;
    }
    checks.push(Check::new(err, CONVERGENCE_TOL));
    let pass = checks.iter().all(Check::holds) && err.is_finite();
    let worst = *checks
        .iter()
        .max_by(|a, b| (!a.holds()).cmp(&!b.holds()).then(a.tightness().total_cmp(&b.tightness())))
        .expect("at least one check");
    Ok(TrialRecord {
        trial_seed,
        pass,
        rho,
        worst_ratio,
        final_residual: err,
        worst,
    })
}

fn aligned_step(
    ops: &AlignedOperators,
    cfg: &PropagationConfig,
    h_t: &DenseMatrix,
    h_i: &DenseMatrix,
    h0_t: &DenseMatrix,
    h0_i: &DenseMatrix,
) -> (DenseMatrix, DenseMatrix) {
    cap::step(ops, cfg, h_t, h_i, h0_t, h0_i)
}

/// Contraction and convergence certificate using the production hop.
pub fn verify_contraction(trials: usize, n_max: usize, master: u64) -> Result<CertificateReport> {
    verify_contraction_with(trials, n_max, master, &aligned_step)
}

/// Same as [`verify_contraction`] with a substitute hop function.
pub fn verify_contraction_with(trials: usize, n_max: usize, master: u64, step: &StepFn) -> Result<CertificateReport> {
    let records = par::map_indices(trials, |t| {
        let s = trial_seed(master, t);
        let inst = random_instance(n_max, s)?;
        contraction_trial(&inst, step, s)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(assemble("contraction", master, records))
}

/// `‖X*‖ ≤ max(γ)/(1 − ρ) · ‖X⁰‖` in the block norm.
pub fn magnitude_trial(inst: &Instance, trial_seed: u64) -> Result<TrialRecord> {
    let rho = inst.cfg.rho();
    let (xs_t, xs_i) = cap::fixed_point(&inst.ops, &inst.cfg, &inst.x0_t, &inst.x0_i)?;
    let lhs = cap::block_norm(&xs_t, &xs_i);
    let rhs = inst.cfg.max_gamma() / (1.0 - rho) * cap::block_norm(&inst.x0_t, &inst.x0_i);
    let check = Check::new(lhs, rhs + SLACK);
    Ok(TrialRecord {
        trial_seed,
        pass: check.holds(),
        rho,
        worst_ratio: if rhs > 0.0 { lhs / rhs } else { 0.0 },
        final_residual: 0.0,
        worst: check,
    })
}

pub fn verify_magnitude_bound(trials: usize, master: u64) -> Result<CertificateReport> {
    let records = par::map_indices(trials, |t| {
        let s = trial_seed(master, t);
        magnitude_trial(&random_instance(16, s)?, s)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(assemble("magnitude", master, records))
}

/// Fusion-bound checks for one node given its post-interaction hop slices
/// (`L × d`, row-major) and hop weights. Returns the checks in order:
/// weight simplex (both modalities), convex-hull reconstruction and norm
/// bound (both), the discrepancy bound and its swap.
pub fn fusion_checks(g_t: &[f64], g_i: &[f64], a_t: &[f64], a_i: &[f64], z_t: &[f64], z_i: &[f64]) -> Vec<Check> {
    let l = a_t.len();
    let d = z_t.len();
    let slice = |g: &[f64], k: usize| g[k * d..(k + 1) * d].to_vec();
    let mut checks = Vec::new();
    for (a, g, z) in [(a_t, g_t, z_t), (a_i, g_i, z_i)] {
        let min = a.iter().copied().fold(f64::INFINITY, f64::min);
        checks.push(Check::new(-min, 0.0));
        checks.push(Check::new((a.iter().sum::<f64>() - 1.0).abs(), WEIGHT_SUM_TOL));
        let mut recon = vec![0.0; d];
        for k in 0..l {
            recon.iter_mut().zip(slice(g, k)).for_each(|(r, v)| *r += a[k] * v);
        }
        let gap: Vec<f64> = recon.iter().zip(z).map(|(r, v)| r - v).collect();
        checks.push(Check::new(norm2(&gap), SLACK));
        let max_g = (0..l).map(|k| norm2(&slice(g, k))).fold(0.0, f64::max);
        checks.push(Check::new(norm2(z), max_g + SLACK));
    }
    let bound = |a_x: &[f64], a_y: &[f64], g_x: &[f64], g_y: &[f64]| -> f64 {
        (0..l)
            .map(|k| {
                let (gx, gy) = (slice(g_x, k), slice(g_y, k));
                let diff: Vec<f64> = gx.iter().zip(&gy).map(|(p, q)| p - q).collect();
                a_x[k] * norm2(&diff) + (a_x[k] - a_y[k]).abs() * norm2(&gy)
            })
            .sum()
    };
    let gap: Vec<f64> = z_t.iter().zip(z_i).map(|(p, q)| p - q).collect();
    let lhs = norm2(&gap);
    checks.push(Check::new(lhs, bound(a_t, a_i, g_t, g_i) + SLACK));
    checks.push(Check::new(lhs, bound(a_i, a_t, g_i, g_t) + SLACK));
    checks
}

fn random_trajectory(m: Modality, n: usize, hops: usize, d: usize, scale: f64, rng: &mut seed::Rng) -> Result<Trajectory> {
    let mats = (0..hops)
        .map(|_| DenseMatrix::from_fn(n, d, |_, _| scale * rng.random_range(-1.0..=1.0)))
        .collect();
    Trajectory::new(m, mats)
}

const FUSION_NODES: usize = 3;

/// One random instance: random parameters and trajectories run through the
/// full forward pass, then the same interacted slices fused with adversarial
/// one-hot gates that put each modality on a different hop.
pub fn fusion_trial(trial_seed: u64) -> Result<TrialRecord> {
    let mut rng = seed::rng(trial_seed);
    let d = rng.random_range(2..=6);
    let hops = rng.random_range(2..=5);
    let cfg = TaaConfig::new(d, rng.random_range(2..=8), rng.random_range(2..=8));
    let mut params = TaaParams::init(&cfg, seed::derive(trial_seed, 1))?;
    let gain = rng.random_range(0.5..=4.0);
    params.tensors_mut().into_iter().for_each(|t| t.scale(gain));
    let scale = rng.random_range(0.1..=10.0);
    let traj_t = random_trajectory(Modality::Text, FUSION_NODES, hops, d, scale, &mut rng)?;
    let traj_i = random_trajectory(Modality::Image, FUSION_NODES, hops, d, scale, &mut rng)?;
    let out = taa::forward_nodes(&traj_t, &traj_i, &(0..FUSION_NODES).collect::<Vec<_>>(), &params, false)?;
    let mut checks = Vec::new();
    for v in 0..FUSION_NODES {
        let (g_t, g_i) = (out.g_t.node(v), out.g_i.node(v));
        checks.extend(fusion_checks(
            g_t,
            g_i,
            out.hop_weights_t.row(v),
            out.hop_weights_i.row(v),
            out.z_t.row(v),
            out.z_i.row(v),
        ));
        let kt = rng.random_range(0..hops);
        let ki = (kt + rng.random_range(1..hops)) % hops;
        let one_hot = |k: usize| -> Vec<f64> { (0..hops).map(|j| if j == k { 1e3 } else { -1e3 }).collect() };
        let (mut zt, mut zi) = (vec![0.0; d], vec![0.0; d]);
        let (mut at, mut ai) = (vec![0.0; hops], vec![0.0; hops]);
        taa::hop_fusion(g_t, &one_hot(kt), d, &mut zt, &mut at);
        taa::hop_fusion(g_i, &one_hot(ki), d, &mut zi, &mut ai);
        checks.extend(fusion_checks(g_t, g_i, &at, &ai, &zt, &zi));
    }
    let pass = checks.iter().all(Check::holds);
    // report the discrepancy bounds, which carry the content of the result
    let worst = *checks
        .iter()
        .enumerate()
        .filter(|(i, c)| !c.holds() || i % 10 >= 8)
        .map(|(_, c)| c)
        .max_by(|a, b| (!a.holds()).cmp(&!b.holds()).then(a.tightness().total_cmp(&b.tightness())))
        .expect("checks present");
    Ok(TrialRecord {
        trial_seed,
        pass,
        rho: 0.0,
        worst_ratio: worst.tightness(),
        final_residual: 0.0,
        worst,
    })
}

pub fn verify_fusion_bound(trials: usize, master: u64) -> Result<CertificateReport> {
    let records = par::map_indices(trials, |t| fusion_trial(trial_seed(master, t)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble("fusion", master, records))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub stage: &'static str,
    pub k: usize,
    pub edges: usize,
    pub nodes: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityReport {
    pub rows: Vec<TimingRow>,
    /// Least-squares slope of log(time) against log(|E|) for propagation.
    pub slope: f64,
    /// TAA epoch time at the larger depth over the smaller one.
    pub taa_ratio: f64,
    pub pass: bool,
    pub seed: u64,
}

impl ComplexityReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("stage,k,edges,nodes,seconds\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{:.6e}", r.stage, r.k, r.edges, r.nodes, r.seconds);
        }
        s
    }

    pub fn certificate(&self) -> Certificate {
        let (lo, hi) = SLOPE_BAND;
        let bound = if self.slope < lo { lo } else { hi };
        Certificate {
            theorem: "complexity".into(),
            trials: self.rows.len(),
            seed: self.seed,
            pass: self.pass,
            worst_case: WorstCase {
                trial_seed: self.seed,
                observed: self.slope,
                bound,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexitySpec {
    /// Target undirected edge counts, strictly increasing.
    pub sizes: Vec<usize>,
    pub k: usize,
    pub d: usize,
    pub avg_degree: usize,
    /// TAA depths compared (smaller first) and the node count used.
    pub taa_depths: (usize, usize),
    pub taa_nodes: usize,
    pub repeats: usize,
}

impl Default for ComplexitySpec {
    fn default() -> Self {
        Self {
            sizes: vec![10_000, 31_623, 100_000, 316_228, 1_000_000],
            k: 3,
            d: 32,
            avg_degree: 10,
            taa_depths: (2, 4),
            taa_nodes: 256,
            repeats: 3,
        }
    }
}

/// Random graph with about `edges` undirected edges at the given average
/// degree, and uniform features.
pub fn random_graph(edges: usize, avg_degree: usize, d: usize, seed_value: u64) -> Result<Mag> {
    let n = (2 * edges / avg_degree.max(1)).max(2);
    let mut rng = seed::rng(seed_value);
    let pairs: Vec<(usize, usize)> = (0..edges)
        .map(|_| {
            let u = rng.random_range(0..n);
            let v = (u + rng.random_range(1..n)) % n;
            (u, v)
        })
        .collect();
    let mut feat = || DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..=1.0));
    let (ft, fi) = (feat(), feat());
    Mag::from_edges(n, &pairs, ft, fi, None)
}

fn best_of<F: FnMut() -> Result<()>>(repeats: usize, mut f: F) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        f()?;
        best = best.min(start.elapsed().as_secs_f64());
    }
    Ok(best)
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Times propagation precompute (priors plus `k` hops) across graph sizes,
/// and one TAA training step (forward and backward) at two depths.
pub fn verify_complexity(spec: &ComplexitySpec, master: u64) -> Result<ComplexityReport> {
    if spec.sizes.len() < 2 || spec.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("complexity sizes must be strictly increasing with at least two entries".into()));
    }
    let cfg = PropagationConfig::shared(spec.k, 0.5, 0.3)?;
    let mut rows = Vec::new();
    for (i, &size) in spec.sizes.iter().enumerate() {
        let mag = random_graph(size, spec.avg_degree, spec.d, trial_seed(master, i))?;
        let seconds = best_of(spec.repeats, || {
            let ops = cap::build_priors(&mag)?;
            cap::propagate(&mag, &ops, &cfg).map(|_| ())
        })?;
        rows.push(TimingRow {
            stage: "cap",
            k: spec.k,
            edges: mag.num_edges(),
            nodes: mag.n(),
            seconds,
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| (r.edges as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.seconds.ln()).collect();
    let slope = fit_slope(&x, &y);

    let taa_cfg = TaaConfig::new(spec.d, spec.d, spec.d);
    let params = TaaParams::init(&taa_cfg, trial_seed(master, 1000))?;
    let nodes: Vec<usize> = (0..spec.taa_nodes).collect();
    let mut taa_times = Vec::new();
    for k in [spec.taa_depths.0, spec.taa_depths.1] {
        let mut rng = seed::rng(trial_seed(master, 2000 + k));
        let t = random_trajectory(Modality::Text, spec.taa_nodes, k + 1, spec.d, 1.0, &mut rng)?;
        let im = random_trajectory(Modality::Image, spec.taa_nodes, k + 1, spec.d, 1.0, &mut rng)?;
        let grad = DenseMatrix::from_fn(spec.taa_nodes, 2 * spec.d, |_, _| 1.0);
        let seconds = best_of(spec.repeats, || {
            let mut out = taa::forward_nodes(&t, &im, &nodes, &params, true)?;
            taa::backward(&mut out, &grad, &params, false).map(|_| ())
        })?;
        taa_times.push(seconds);
        rows.push(TimingRow {
            stage: "taa",
            k,
            edges: 0,
            nodes: spec.taa_nodes,
            seconds,
        });
    }
    let taa_ratio = taa_times[1] / taa_times[0];
    let pass = (SLOPE_BAND.0..=SLOPE_BAND.1).contains(&slope) && taa_ratio > TAA_K_RATIO_MIN;
    Ok(ComplexityReport {
        rows,
        slope,
        taa_ratio,
        pass,
        seed: master,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trial_seeds_are_distinct_and_stable() {
        assert_eq!(trial_seed(42, 3), trial_seed(42, 3));
        assert_ne!(trial_seed(42, 3), trial_seed(42, 4));
        assert_ne!(trial_seed(42, 3), trial_seed(43, 3));
    }

    #[test]
    fn slope_of_exact_power_law() {
        let x: Vec<f64> = (1..6).map(|v| (v as f64).ln()).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.5 * v + 0.3).collect();
        assert!((fit_slope(&x, &y) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn random_instances_have_positive_residual_weight() {
        for s in 0..50 {
            let inst = random_instance(16, s).unwrap();
            assert!(inst.cfg.gamma_t >= 0.05 && inst.cfg.gamma_i >= 0.05);
            assert!(inst.cfg.rho() < 1.0);
            assert!(inst.ops.n() <= 16);
        }
        assert!(random_instance(65, 0).is_err());
    }
}
