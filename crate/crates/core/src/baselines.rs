//! Decoupled comparison models: independent per-modality diffusion (MSGC)
//! with mean-over-hops fusion, optionally corrected by same-hop projection
//! mixing (AlignP) and/or aggregate-level mixing (AlignA).

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cap;
use crate::error::{Error, Result};
use crate::mag::{Mag, PropagationConfig};
use crate::numerics::{gemm_nn, gemm_nt, gemm_tn, DenseMatrix};
use crate::params::ParamSet;
use crate::seed;
use crate::trajectory::Trajectory;

/// Scale of the seeded perturbation added to identity projections.
pub const PROJECTION_NOISE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignConfig {
    #[serde(default = "default_lambda")]
    pub lambda_p: f64,
    #[serde(default = "default_lambda")]
    pub lambda_a: f64,
}

fn default_lambda() -> f64 {
    0.3
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            lambda_p: default_lambda(),
            lambda_a: default_lambda(),
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_p", self.lambda_p), ("lambda_a", self.lambda_a)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Mixing weights plus the four learnable `d × d` projections. Row vectors
/// are multiplied on the left: `H_i · P_{i→t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignParams {
    pub lambda_p: f64,
    pub lambda_a: f64,
    pub p_i2t: DenseMatrix,
    pub p_t2i: DenseMatrix,
    pub q_i2t: DenseMatrix,
    pub q_t2i: DenseMatrix,
}

impl AlignParams {
    pub fn identity(cfg: &AlignConfig, d: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            lambda_p: cfg.lambda_p,
            lambda_a: cfg.lambda_a,
            p_i2t: DenseMatrix::identity(d),
            p_t2i: DenseMatrix::identity(d),
            q_i2t: DenseMatrix::identity(d),
            q_t2i: DenseMatrix::identity(d),
        })
    }

    /// Identity plus uniform noise in `±PROJECTION_NOISE`.
    pub fn init(cfg: &AlignConfig, d: usize, seed: u64) -> Result<Self> {
        let mut p = Self::identity(cfg, d)?;
        let mut rng = seed::rng(seed);
        for t in p.tensors_mut() {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v += rng.random_range(-PROJECTION_NOISE..=PROJECTION_NOISE));
        }
        Ok(p)
    }

    pub fn d(&self) -> usize {
        self.p_i2t.rows()
    }

    pub fn zeros_like(&self) -> Self {
        let d = self.d();
        Self {
            lambda_p: self.lambda_p,
            lambda_a: self.lambda_a,
            p_i2t: DenseMatrix::zeros(d, d),
            p_t2i: DenseMatrix::zeros(d, d),
            q_i2t: DenseMatrix::zeros(d, d),
            q_t2i: DenseMatrix::zeros(d, d),
        }
    }
}

impl ParamSet for AlignParams {
    fn named(&self) -> Vec<(String, &DenseMatrix)> {
        vec![
            ("p_i2t".into(), &self.p_i2t),
            ("p_t2i".into(), &self.p_t2i),
            ("q_i2t".into(), &self.q_i2t),
            ("q_t2i".into(), &self.q_t2i),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        vec![
            &mut self.p_i2t,
            &mut self.p_t2i,
            &mut self.q_i2t,
            &mut self.q_t2i,
        ]
    }
}

/// Independent diffusion `H^(k+1) = Norm(A) H^(k)` for each modality, for
/// `cfg.k` hops. Other coefficients in `cfg` are ignored.
pub fn msgc_propagate(mag: &Mag, cfg: &PropagationConfig) -> Result<(Trajectory, Trajectory)> {
    let plain = PropagationConfig::new(cfg.k, (1.0, 0.0, 0.0), (1.0, 0.0, 0.0))?;
    cap::propagate(mag, &cap::plain_operators(mag), &plain)
}

/// `(1 − λ) a + λ b P`, row-wise.
fn mix(a: &DenseMatrix, b: &DenseMatrix, p: &DenseMatrix, lambda: f64) -> DenseMatrix {
    let (n, d) = a.shape();
    let mut out = a.clone();
    out.scale(1.0 - lambda);
    if lambda != 0.0 {
        let mut bp = vec![0.0; n * d];
        gemm_nn(b.data(), p.data(), n, d, d, &mut bp);
        out.data_mut()
            .iter_mut()
            .zip(&bp)
            .for_each(|(o, v)| *o += lambda * v);
    }
    out
}

fn check_same(a: &DenseMatrix, b: &DenseMatrix, d: usize) -> Result<()> {
    if a.shape() != b.shape() || a.cols() != d {
        return Err(Error::Shape(format!(
            "inputs {:?} and {:?} with projection width {d}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Same-hop cross-modal correction applied to every hop.
pub fn align_p(traj_t: &Trajectory, traj_i: &Trajectory, p: &AlignParams) -> Result<(Trajectory, Trajectory)> {
    if traj_t.len() != traj_i.len() {
        return Err(Error::Shape("trajectories differ in depth".into()));
    }
    let mut hops_t = Vec::with_capacity(traj_t.len());
    let mut hops_i = Vec::with_capacity(traj_t.len());
    for (ht, hi) in traj_t.hops().iter().zip(traj_i.hops()) {
        check_same(ht, hi, p.d())?;
        hops_t.push(mix(ht, hi, &p.p_i2t, p.lambda_p));
        hops_i.push(mix(hi, ht, &p.p_t2i, p.lambda_p));
    }
    Ok((
        Trajectory::new(traj_t.modality(), hops_t)?,
        Trajectory::new(traj_i.modality(), hops_i)?,
    ))
}

/// Aggregate-level refinement; returns `(ẑ_t, ẑ_i, ẑ_t ∥ ẑ_i)`.
pub fn align_a(z_t: &DenseMatrix, z_i: &DenseMatrix, p: &AlignParams) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix)> {
    check_same(z_t, z_i, p.d())?;
    let zt = mix(z_t, z_i, &p.q_i2t, p.lambda_a);
    let zi = mix(z_i, z_t, &p.q_t2i, p.lambda_a);
    let z = zt.hstack(&zi)?;
    Ok((zt, zi, z))
}

/// Unweighted mean over the hop slices.
pub fn simple_aggregate(traj: &Trajectory) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(traj.n(), traj.d());
    for h in traj.hops() {
        out.data_mut()
            .iter_mut()
            .zip(h.data())
            .for_each(|(o, v)| *o += v);
    }
    out.scale(1.0 / traj.len() as f64);
    out
}

/// Which corrections a shallow (mean-fusion) model applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Corrections {
    pub align_p: bool,
    pub align_a: bool,
}

impl Corrections {
    pub const NONE: Corrections = Corrections {
        align_p: false,
        align_a: false,
    };
}

/// Intermediates kept for [`shallow_backward`].
#[derive(Debug, Clone)]
pub struct ShallowCache {
    m_t: DenseMatrix,
    m_i: DenseMatrix,
    z_t: DenseMatrix,
    z_i: DenseMatrix,
}

/// Mean fusion with optional AlignP / AlignA for the given nodes; returns the
/// `n × 2d` embedding.
///
/// AlignP commutes with the hop mean, so it is applied to the means here;
/// [`align_p`] followed by [`simple_aggregate`] gives the same values up to
/// rounding.
pub fn shallow_embed(
    traj_t: &Trajectory,
    traj_i: &Trajectory,
    nodes: &[usize],
    corr: Corrections,
    p: &AlignParams,
) -> Result<(DenseMatrix, ShallowCache)> {
    if traj_t.len() != traj_i.len() {
        return Err(Error::Shape("trajectories differ in depth".into()));
    }
    let m_t = simple_aggregate(&traj_t.select_nodes(nodes));
    let m_i = simple_aggregate(&traj_i.select_nodes(nodes));
    check_same(&m_t, &m_i, p.d())?;
    let (z_t, z_i) = if corr.align_p {
        (mix(&m_t, &m_i, &p.p_i2t, p.lambda_p), mix(&m_i, &m_t, &p.p_t2i, p.lambda_p))
    } else {
        (m_t.clone(), m_i.clone())
    };
    let z = if corr.align_a {
        align_a(&z_t, &z_i, p)?.2
    } else {
        z_t.hstack(&z_i)?
    };
    Ok((z, ShallowCache { m_t, m_i, z_t, z_i }))
}

/// Gradients of the projections given `∂loss/∂z`. Unused projections get
/// zero gradients.
pub fn shallow_backward(cache: &ShallowCache, grad_z: &DenseMatrix, corr: Corrections, p: &AlignParams) -> Result<AlignParams> {
    let (n, d) = cache.m_t.shape();
    if grad_z.shape() != (n, 2 * d) {
        return Err(Error::Shape(format!(
            "grad_z is {:?}, expected {:?}",
            grad_z.shape(),
            (n, 2 * d)
        )));
    }
    let mut g = p.zeros_like();
    let split = |half: usize| DenseMatrix::from_fn(n, d, |r, j| grad_z.get(r, half * d + j));
    let (dzh_t, dzh_i) = (split(0), split(1));
    let (dz_t, dz_i) = if corr.align_a {
        let la = p.lambda_a;
        gemm_tn(cache.z_i.data(), dzh_t.data(), n, d, d, g.q_i2t.data_mut());
        gemm_tn(cache.z_t.data(), dzh_i.data(), n, d, d, g.q_t2i.data_mut());
        g.q_i2t.scale(la);
        g.q_t2i.scale(la);
        let mut dz_t = dzh_t.clone();
        dz_t.scale(1.0 - la);
        let mut dz_i = dzh_i.clone();
        dz_i.scale(1.0 - la);
        let mut back_t = vec![0.0; n * d];
        gemm_nt(dzh_i.data(), p.q_t2i.data(), n, d, d, &mut back_t);
        let mut back_i = vec![0.0; n * d];
        gemm_nt(dzh_t.data(), p.q_i2t.data(), n, d, d, &mut back_i);
        dz_t.data_mut().iter_mut().zip(&back_t).for_each(|(a, b)| *a += la * b);
        dz_i.data_mut().iter_mut().zip(&back_i).for_each(|(a, b)| *a += la * b);
        (dz_t, dz_i)
    } else {
        (dzh_t, dzh_i)
    };
    if corr.align_p {
        gemm_tn(cache.m_i.data(), dz_t.data(), n, d, d, g.p_i2t.data_mut());
        gemm_tn(cache.m_t.data(), dz_i.data(), n, d, d, g.p_t2i.data_mut());
        g.p_i2t.scale(p.lambda_p);
        g.p_t2i.scale(p.lambda_p);
    }
    Ok(g)
}
