//! Cross-modal aligned propagation.
//!
//! For every observed edge `(p, q)` and modality pair `(u, v)` the prior is
//! `S_uv[p, q] = (1 + cos(H_u[p], H_v[q])) / 2`. The weighted matrix
//! `B = A ⊙ S_uv` is normalized as `D_r^{-1/2} B D_c^{-1/2}` using its row
//! and column sums; for the symmetric intra-modal operators this is the usual
//! symmetric normalization, and for the cross-modal pair it keeps
//! `Ã_it = Ã_tiᵀ` and `‖Ã‖₂ ≤ 1`. Rows (columns) with zero weighted degree
//! are left at zero.
//!
//! One propagation hop updates both modalities from the hop-`k` state:
//!
//! ```text
//! H_u' = α_u Ã_uu H_u + β_u Ã_uū H_ū + γ_u H_u⁰
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::mag::{Mag, Modality, PropagationConfig};
use crate::numerics::{dense_solve, dot, spmm_row, CsrMatrix, DenseMatrix};
use crate::par;
use crate::trajectory::Trajectory;

/// Largest block system `fixed_point` will assemble densely.
pub const FIXED_POINT_MAX_DIM: usize = 2048;

const ROWS_PER_BLOCK: usize = 64;

/// The four prior-weighted, normalized propagation operators.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedOperators {
    pub tt: CsrMatrix,
    pub ii: CsrMatrix,
    pub ti: CsrMatrix,
    pub it: CsrMatrix,
}

impl AlignedOperators {
    /// Operator applied to modality `v` when updating modality `u`.
    pub fn get(&self, u: Modality, v: Modality) -> &CsrMatrix {
        match (u, v) {
            (Modality::Text, Modality::Text) => &self.tt,
            (Modality::Image, Modality::Image) => &self.ii,
            (Modality::Text, Modality::Image) => &self.ti,
            (Modality::Image, Modality::Text) => &self.it,
        }
    }

    pub fn n(&self) -> usize {
        self.tt.rows()
    }
}

/// Edge-wise similarity priors for the four modality pairs, in the sparsity
/// pattern of the adjacency.
#[derive(Debug, Clone)]
pub struct SemanticPriors {
    pub tt: CsrMatrix,
    pub ii: CsrMatrix,
    pub ti: CsrMatrix,
    pub it: CsrMatrix,
}

/// Rows scaled to unit length; zero rows stay zero.
fn unit_rows(m: &DenseMatrix) -> DenseMatrix {
    let mut out = m.clone();
    par::for_each_row_mut(out.data_mut(), m.cols(), |_, row| {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    });
    out
}

/// Prior from two unit (or zero) rows.
fn prior(a: &[f64], b: &[f64]) -> f64 {
    (1.0 + dot(a, b).clamp(-1.0, 1.0)) / 2.0
}

/// `S_uv` on observed edges.
pub fn semantic_priors(mag: &Mag) -> Result<SemanticPriors> {
    let (ht, hi) = (mag.features(Modality::Text), mag.features(Modality::Image));
    if ht.cols() != hi.cols() {
        return Err(Error::Shape(format!(
            "priors need a shared feature dimension, got text {} vs image {}",
            ht.cols(),
            hi.cols()
        )));
    }
    let (ht, hi) = (unit_rows(ht), unit_rows(hi));
    let a = mag.adjacency();
    let rows: Vec<[Vec<f64>; 4]> = par::map_indices(a.rows(), |p| {
        let (cols, _) = a.row(p);
        let mut out: [Vec<f64>; 4] = Default::default();
        for &q in cols {
            out[0].push(prior(ht.row(p), ht.row(q)));
            out[1].push(prior(hi.row(p), hi.row(q)));
            out[2].push(prior(ht.row(p), hi.row(q)));
            out[3].push(prior(hi.row(p), ht.row(q)));
        }
        out
    });
    let mut vals: [Vec<f64>; 4] = Default::default();
    for r in rows {
        for (dst, src) in vals.iter_mut().zip(r) {
            dst.extend(src);
        }
    }
    let [tt, ii, ti, it] = vals.map(|v| {
        CsrMatrix::new(
            a.rows(),
            a.cols(),
            a.row_ptr().to_vec(),
            a.col_idx().to_vec(),
            v,
        )
        .expect("pattern copied from a valid adjacency")
    });
    Ok(SemanticPriors { tt, ii, ti, it })
}

/// `D_r^{-1/2} B D_c^{-1/2}`, zero where a degree vanishes.
pub fn normalize(b: &CsrMatrix) -> CsrMatrix {
    let inv_sqrt = |s: Vec<f64>| -> Vec<f64> {
        s.into_iter()
            .map(|x| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 })
            .collect()
    };
    let r = inv_sqrt(b.row_sums());
    let c = inv_sqrt(b.col_sums());
    b.map_values(|p, q, v| r[p] * v * c[q])
}

/// Entrywise product of two matrices sharing one sparsity pattern.
fn weighted(a: &CsrMatrix, s: &CsrMatrix) -> CsrMatrix {
    debug_assert_eq!(a.col_idx(), s.col_idx());
    let vals = a.vals().iter().zip(s.vals()).map(|(x, y)| x * y).collect();
    CsrMatrix::new(a.rows(), a.cols(), a.row_ptr().to_vec(), a.col_idx().to_vec(), vals)
        .expect("pattern copied from a valid matrix")
}

/// Builds the four aligned operators from the (projected) input features.
pub fn build_priors(mag: &Mag) -> Result<AlignedOperators> {
    let s = semantic_priors(mag)?;
    let a = mag.adjacency();
    // A is binary, so A ⊙ S has S's values on A's pattern; keep the general
    // product for weighted adjacencies.
    let norm = |s: &CsrMatrix| normalize(&weighted(a, s));
    Ok(AlignedOperators {
        tt: norm(&s.tt),
        ii: norm(&s.ii),
        ti: norm(&s.ti),
        it: norm(&s.it),
    })
}

/// Operators with every prior fixed to 1: all four equal `Norm(A)`.
pub fn plain_operators(mag: &Mag) -> AlignedOperators {
    let n = normalize(mag.adjacency());
    AlignedOperators {
        tt: n.clone(),
        ii: n.clone(),
        ti: n.clone(),
        it: n,
    }
}

/// One propagation hop for a single modality `u`, written into `out`.
fn step_modality(
    ops: &AlignedOperators,
    cfg: &PropagationConfig,
    u: Modality,
    h_u: &DenseMatrix,
    h_other: &DenseMatrix,
    h0_u: &DenseMatrix,
) -> DenseMatrix {
    let (alpha, beta, gamma) = cfg.coefficients(u);
    let intra = ops.get(u, u);
    let cross = ops.get(u, u.other());
    let d = h_u.cols();
    let mut out = DenseMatrix::zeros(h_u.rows(), d);
    par::for_each_row_block_mut(out.data_mut(), d, ROWS_PER_BLOCK, |first, block| {
        let mut scratch = vec![0.0; d];
        for (off, row) in block.chunks_mut(d).enumerate() {
            let p = first + off;
            spmm_row(intra, h_u, p, row);
            scratch.iter_mut().for_each(|x| *x = 0.0);
            spmm_row(cross, h_other, p, &mut scratch);
            let h0 = h0_u.row(p);
            for j in 0..d {
                row[j] = alpha * row[j] + beta * scratch[j] + gamma * h0[j];
            }
        }
    });
    out
}

/// One aligned hop for both modalities; both outputs read only the inputs.
pub fn step(
    ops: &AlignedOperators,
    cfg: &PropagationConfig,
    h_t: &DenseMatrix,
    h_i: &DenseMatrix,
    h0_t: &DenseMatrix,
    h0_i: &DenseMatrix,
) -> (DenseMatrix, DenseMatrix) {
    let next_t = step_modality(ops, cfg, Modality::Text, h_t, h_i, h0_t);
    let next_i = step_modality(ops, cfg, Modality::Image, h_i, h_t, h0_i);
    (next_t, next_i)
}

fn check_inputs(ops: &AlignedOperators, x0_t: &DenseMatrix, x0_i: &DenseMatrix) -> Result<()> {
    if x0_t.shape() != x0_i.shape() {
        return Err(Error::Shape(format!(
            "text {:?} vs image {:?} features",
            x0_t.shape(),
            x0_i.shape()
        )));
    }
    if x0_t.rows() != ops.n() {
        return Err(Error::Shape(format!(
            "operators are {0}x{0} but features have {1} rows",
            ops.n(),
            x0_t.rows()
        )));
    }
    Ok(())
}

/// Runs `cfg.k` aligned hops from explicit starting features.
pub fn propagate_features(
    ops: &AlignedOperators,
    cfg: &PropagationConfig,
    x0_t: &DenseMatrix,
    x0_i: &DenseMatrix,
) -> Result<(Trajectory, Trajectory)> {
    cfg.validate()?;
    check_inputs(ops, x0_t, x0_i)?;
    let mut hops_t = vec![x0_t.clone()];
    let mut hops_i = vec![x0_i.clone()];
    for k in 0..cfg.k {
        let (nt, ni) = step(ops, cfg, &hops_t[k], &hops_i[k], x0_t, x0_i);
        if !nt.is_finite() {
            return Err(Error::NonFinite {
                hop: k + 1,
                modality: Modality::Text.tag(),
            });
        }
        if !ni.is_finite() {
            return Err(Error::NonFinite {
                hop: k + 1,
                modality: Modality::Image.tag(),
            });
        }
        hops_t.push(nt);
        hops_i.push(ni);
    }
    Ok((
        Trajectory::new(Modality::Text, hops_t)?,
        Trajectory::new(Modality::Image, hops_i)?,
    ))
}

/// Aligned multi-hop diffusion of the graph's own features.
pub fn propagate(
    mag: &Mag,
    ops: &AlignedOperators,
    cfg: &PropagationConfig,
) -> Result<(Trajectory, Trajectory)> {
    propagate_features(
        ops,
        cfg,
        mag.features(Modality::Text),
        mag.features(Modality::Image),
    )
}

/// Assembles the block operator `P` (2N×2N) of the stacked recursion
/// `X' = P X + R X⁰`.
pub fn block_operator(ops: &AlignedOperators, cfg: &PropagationConfig) -> DenseMatrix {
    let n = ops.n();
    let mut p = DenseMatrix::zeros(2 * n, 2 * n);
    let blocks = [
        (0, 0, &ops.tt, cfg.alpha_t),
        (0, n, &ops.ti, cfg.beta_t),
        (n, 0, &ops.it, cfg.beta_i),
        (n, n, &ops.ii, cfg.alpha_i),
    ];
    for (r0, c0, m, w) in blocks {
        for r in 0..n {
            let (cols, vals) = m.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                p.set(r0 + r, c0 + c, w * v);
            }
        }
    }
    p
}

/// Closed-form fixed point `X* = (I − P)⁻¹ R X⁰` by dense solve. Intended for
/// verification on small graphs.
pub fn fixed_point(
    ops: &AlignedOperators,
    cfg: &PropagationConfig,
    x0_t: &DenseMatrix,
    x0_i: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let rho = cfg.rho();
    if rho >= 1.0 {
        return Err(Error::ContractViolation { rho });
    }
    check_inputs(ops, x0_t, x0_i)?;
    let n = ops.n();
    if 2 * n > FIXED_POINT_MAX_DIM {
        return Err(Error::Capacity(format!(
            "dense fixed point needs a {0}x{0} system; limit is {FIXED_POINT_MAX_DIM}",
            2 * n
        )));
    }
    let mut system = block_operator(ops, cfg);
    system.scale(-1.0);
    for i in 0..2 * n {
        system.set(i, i, system.get(i, i) + 1.0);
    }
    let d = x0_t.cols();
    let rhs = DenseMatrix::from_fn(2 * n, d, |r, j| {
        if r < n {
            cfg.gamma_t * x0_t.get(r, j)
        } else {
            cfg.gamma_i * x0_i.get(r - n, j)
        }
    });
    let x = dense_solve(&system, &rhs)?;
    let top = DenseMatrix::from_fn(n, d, |r, j| x.get(r, j));
    let bottom = DenseMatrix::from_fn(n, d, |r, j| x.get(n + r, j));
    Ok((top, bottom))
}

/// Block norm `max(‖X_t‖_F, ‖X_i‖_F)`.
pub fn block_norm(x_t: &DenseMatrix, x_i: &DenseMatrix) -> f64 {
    crate::numerics::frobenius_norm(x_t).max(crate::numerics::frobenius_norm(x_i))
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredFile {
    pub name: String,
    pub modality: Modality,
    pub hop: usize,
    pub sha256: String,
}

/// Present only for stores built with cross-modal operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossOperatorMeta {
    pub beta_t: f64,
    pub beta_i: f64,
    pub semantic_priors: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreManifest {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub model: String,
    pub coefficients: PropagationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_operators: Option<CrossOperatorMeta>,
    pub files: Vec<StoredFile>,
}

/// Handle on a trajectory directory (`traj_{modality}_{hop}.magf` files plus
/// `manifest.json`).
#[derive(Debug, Clone)]
pub struct TrajectoryStore {
    pub path: PathBuf,
    pub manifest: StoreManifest,
}

pub fn trajectory_file_name(m: Modality, hop: usize) -> String {
    format!("traj_{}_{}.magf", m.tag(), hop)
}

impl TrajectoryStore {
    /// Serializes both trajectories and writes the manifest last.
    pub fn write(
        path: &Path,
        model: &str,
        cfg: &PropagationConfig,
        cross_operators: Option<CrossOperatorMeta>,
        traj_t: &Trajectory,
        traj_i: &Trajectory,
    ) -> Result<Self> {
        if traj_t.len() != traj_i.len() || traj_t.hop(0).shape() != traj_i.hop(0).shape() {
            return Err(Error::Shape("trajectories disagree in length or shape".into()));
        }
        fs::create_dir_all(path).map_err(|e| Error::storage(path, e))?;
        let mut files = Vec::new();
        for traj in [traj_t, traj_i] {
            for (k, h) in traj.hops().iter().enumerate() {
                let name = trajectory_file_name(traj.modality(), k);
                let bytes = io::write_magf(&path.join(&name), h, io::Dtype::F64)?;
                files.push(StoredFile {
                    name,
                    modality: traj.modality(),
                    hop: k,
                    sha256: io::sha256_hex(&bytes),
                });
            }
        }
        let manifest = StoreManifest {
            n: traj_t.n(),
            d: traj_t.d(),
            k: traj_t.depth(),
            model: model.to_string(),
            coefficients: *cfg,
            cross_operators,
            files,
        };
        let mpath = path.join(MANIFEST_FILE);
        fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::storage(&mpath, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            manifest,
        })
    }

    pub fn open(path: &Path) -> Result<Self> {
        let mpath = path.join(MANIFEST_FILE);
        let text = fs::read(&mpath).map_err(|e| Error::storage(&mpath, e))?;
        let manifest: StoreManifest = serde_json::from_slice(&text)?;
        Ok(Self {
            path: path.to_path_buf(),
            manifest,
        })
    }

    /// Reads both trajectories, checking every file against its checksum.
    pub fn load(&self) -> Result<(Trajectory, Trajectory)> {
        let mut hops_t = vec![None; self.manifest.k + 1];
        let mut hops_i = vec![None; self.manifest.k + 1];
        for f in &self.manifest.files {
            let p = self.path.join(&f.name);
            let bytes = fs::read(&p).map_err(|e| Error::storage(&p, e))?;
            let digest = io::sha256_hex(&bytes);
            if digest != f.sha256 {
                return Err(Error::Integrity(format!(
                    "{} has checksum {digest}, manifest records {}",
                    f.name, f.sha256
                )));
            }
            let (m, _) = io::decode_magf(&bytes, &p)?;
            if m.shape() != (self.manifest.n, self.manifest.d) {
                return Err(Error::Integrity(format!("{} has shape {:?}", f.name, m.shape())));
            }
            let slot = match f.modality {
                Modality::Text => &mut hops_t,
                Modality::Image => &mut hops_i,
            };
            *slot
                .get_mut(f.hop)
                .ok_or_else(|| Error::Integrity(format!("hop {} beyond k", f.hop)))? = Some(m);
        }
        let collect = |hops: Vec<Option<DenseMatrix>>, m: Modality| -> Result<Trajectory> {
            let hops = hops
                .into_iter()
                .enumerate()
                .map(|(k, h)| h.ok_or_else(|| Error::Integrity(format!("missing {m} hop {k}"))))
                .collect::<Result<Vec<_>>>()?;
            Trajectory::new(m, hops)
        };
        Ok((collect(hops_t, Modality::Text)?, collect(hops_i, Modality::Image)?))
    }
}

/// Propagates with the given operators and writes the result as a store.
pub fn propagate_into_store(
    mag: &Mag,
    ops: &AlignedOperators,
    cfg: &PropagationConfig,
    path: &Path,
) -> Result<TrajectoryStore> {
    let (t, i) = propagate(mag, ops, cfg)?;
    TrajectoryStore::write(
        path,
        "campa",
        cfg,
        Some(CrossOperatorMeta {
            beta_t: cfg.beta_t,
            beta_i: cfg.beta_i,
            semantic_priors: true,
        }),
        &t,
        &i,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{frobenius_norm, spmm};
    use rand::Rng;

    fn path2(ft: &[f64], fi: &[f64]) -> Mag {
        let col = |v: &[f64]| DenseMatrix::new(v.len(), 1, v.to_vec()).unwrap();
        Mag::from_edges(2, &[(0, 1)], col(ft), col(fi), None).unwrap()
    }

    fn random_mag(n: usize, d: usize, p: f64, seed: u64) -> Mag {
        let mut rng = crate::seed::rng(seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        let ft = DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let fi = DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        Mag::from_edges(n, &edges, ft, fi, None).unwrap()
    }

    #[test]
    fn constant_features_give_unit_priors() {
        let g = Mag::from_edges(
            2,
            &[(0, 1)],
            DenseMatrix::filled(2, 2, 1.0),
            DenseMatrix::filled(2, 2, 1.0),
            None,
        )
        .unwrap();
        let ops = build_priors(&g).unwrap();
        let want = DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        for m in [&ops.tt, &ops.ii, &ops.ti, &ops.it] {
            assert!(m.to_dense().max_abs_diff(&want) < 1e-15);
        }
    }

    #[test]
    fn anti_aligned_features_give_zero_operator() {
        let g = path2(&[1.0, -1.0], &[1.0, 1.0]);
        let s = semantic_priors(&g).unwrap();
        assert_eq!(s.tt.get(0, 1), 0.0);
        let ops = build_priors(&g).unwrap();
        assert!(ops.tt.vals().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_coefficients_reduce_to_plain_diffusion() {
        let g = random_mag(7, 3, 0.4, 1);
        let ops = build_priors(&g).unwrap();
        let cfg = PropagationConfig::new(3, (1.0, 0.0, 0.0), (1.0, 0.0, 0.0)).unwrap();
        let (t, i) = propagate(&g, &ops, &cfg).unwrap();
        let mut ht = g.features(Modality::Text).clone();
        let mut hi = g.features(Modality::Image).clone();
        for k in 1..=3 {
            ht = spmm(&ops.tt, &ht).unwrap();
            hi = spmm(&ops.ii, &hi).unwrap();
            assert_eq!(t.hop(k), &ht);
            assert_eq!(i.hop(k), &hi);
        }
    }

    #[test]
    fn constant_vector_is_fixed() {
        let g = Mag::from_edges(
            2,
            &[(0, 1)],
            DenseMatrix::filled(2, 1, 1.0),
            DenseMatrix::filled(2, 1, 1.0),
            None,
        )
        .unwrap();
        let ops = build_priors(&g).unwrap();
        let cfg = PropagationConfig::shared(4, 0.5, 0.3).unwrap();
        let (t, i) = propagate(&g, &ops, &cfg).unwrap();
        for k in 0..=4 {
            assert!(t.hop(k).data().iter().all(|&x| (x - 1.0).abs() < 1e-15));
            assert!(i.hop(k).data().iter().all(|&x| (x - 1.0).abs() < 1e-15));
        }
        let (xt, xi) = fixed_point(&ops, &cfg, t.hop(0), i.hop(0)).unwrap();
        assert!(xt.data().iter().chain(xi.data()).all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn pure_residual_fixed_point_is_input() {
        let g = random_mag(6, 2, 0.5, 2);
        let ops = build_priors(&g).unwrap();
        let cfg = PropagationConfig::shared(1, 0.0, 0.0).unwrap();
        let (xt, xi) = fixed_point(&ops, &cfg, g.features(Modality::Text), g.features(Modality::Image)).unwrap();
        assert!(xt.max_abs_diff(g.features(Modality::Text)) < 1e-14);
        assert!(xi.max_abs_diff(g.features(Modality::Image)) < 1e-14);
    }

    #[test]
    fn iterates_converge_to_fixed_point() {
        let g = random_mag(8, 3, 0.4, 5);
        let ops = build_priors(&g).unwrap();
        let cfg = PropagationConfig::shared(200, 0.5, 0.3).unwrap();
        let (t, i) = propagate(&g, &ops, &cfg).unwrap();
        let (xt, xi) = fixed_point(&ops, &cfg, t.hop(0), i.hop(0)).unwrap();
        let dist = block_norm(&t.hop(200).sub(&xt).unwrap(), &i.hop(200).sub(&xi).unwrap());
        assert!(dist <= 1e-8, "distance {dist}");
    }

    #[test]
    fn fixed_point_preconditions() {
        let g = random_mag(4, 2, 0.5, 6);
        let ops = build_priors(&g).unwrap();
        let cfg = PropagationConfig::shared(1, 0.6, 0.4).unwrap();
        let r = fixed_point(&ops, &cfg, g.features(Modality::Text), g.features(Modality::Image));
        assert!(matches!(r, Err(Error::ContractViolation { .. })));

        let big = DenseMatrix::zeros(1100, 1);
        let ops_big = AlignedOperators {
            tt: CsrMatrix::identity(1100),
            ii: CsrMatrix::identity(1100),
            ti: CsrMatrix::identity(1100),
            it: CsrMatrix::identity(1100),
        };
        let cfg = PropagationConfig::shared(1, 0.5, 0.3).unwrap();
        assert!(matches!(
            fixed_point(&ops_big, &cfg, &big, &big),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn cross_operators_are_transposes_and_bounded() {
        let g = random_mag(12, 4, 0.35, 9);
        let ops = build_priors(&g).unwrap();
        assert!(ops.ti.transpose().to_dense().max_abs_diff(&ops.it.to_dense()) < 1e-15);
        assert!(ops.tt.is_symmetric(1e-15) && ops.ii.is_symmetric(1e-15));
        for m in [&ops.tt, &ops.ii, &ops.ti, &ops.it] {
            assert!(m.vals().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(m.spectral_norm_estimate(500) <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn isolated_node_keeps_residual_only() {
        let g = Mag::from_edges(
            3,
            &[(0, 1)],
            DenseMatrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap(),
            DenseMatrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap(),
            None,
        )
        .unwrap();
        let ops = build_priors(&g).unwrap();
        let cfg = PropagationConfig::shared(2, 0.5, 0.3).unwrap();
        let (t, _) = propagate(&g, &ops, &cfg).unwrap();
        assert!((t.hop(2).get(2, 0) - 0.2 * 3.0).abs() < 1e-15);
    }

    #[test]
    fn store_roundtrip_and_integrity() {
        let g = random_mag(6, 2, 0.5, 3);
        let ops = build_priors(&g).unwrap();
        let cfg = PropagationConfig::shared(2, 0.5, 0.3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let store = propagate_into_store(&g, &ops, &cfg, dir.path()).unwrap();
        assert_eq!(store.manifest.files.len(), 6);
        let (t, i) = TrajectoryStore::open(dir.path()).unwrap().load().unwrap();
        assert_eq!((t, i), propagate(&g, &ops, &cfg).unwrap());

        let dir2 = tempfile::tempdir().unwrap();
        let store2 = propagate_into_store(&g, &ops, &cfg, dir2.path()).unwrap();
        assert_eq!(store.manifest.files, store2.manifest.files);

        let victim = dir.path().join(trajectory_file_name(Modality::Image, 1));
        let mut bytes = fs::read(&victim).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&victim, bytes).unwrap();
        let err = TrajectoryStore::open(dir.path()).unwrap().load().unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn magnitude_bound_holds_on_example() {
        let g = random_mag(10, 3, 0.4, 4);
        let ops = build_priors(&g).unwrap();
        let cfg = PropagationConfig::new(1, (0.4, 0.3, 0.3), (0.6, 0.2, 0.2)).unwrap();
        let (x0t, x0i) = (g.features(Modality::Text), g.features(Modality::Image));
        let (xt, xi) = fixed_point(&ops, &cfg, x0t, x0i).unwrap();
        let lhs = block_norm(&xt, &xi);
        let rhs = cfg.max_gamma() / (1.0 - cfg.rho()) * block_norm(x0t, x0i);
        assert!(lhs <= rhs + 1e-9);
        assert!(frobenius_norm(&xt) > 0.0);
    }
}
