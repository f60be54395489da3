//! Reference implementations for the acceptance checks. Everything here is
//! written from the definitions with plain loops over `Vec`s and shares no
//! code path with `magd_core` beyond reading its inputs.

use magd_core::mag::PropagationConfig;
use magd_core::numerics::DenseMatrix;
use magd_core::{seed, Mag};
use rand::Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn to_dense(m: &DenseMatrix) -> Dense {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

pub fn max_diff(a: &Dense, b: &DenseMatrix) -> f64 {
    a.iter()
        .enumerate()
        .flat_map(|(r, row)| row.iter().enumerate().map(move |(c, v)| (v - b.get(r, c)).abs()))
        .fold(0.0, f64::max)
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// `D_r^{-1/2} (A ⊙ S) D_c^{-1/2}`, `S_pq = (1 + cos(hu_p, hv_q)) / 2`.
pub fn aligned_operator(adj: &Dense, hu: &Dense, hv: &Dense) -> Dense {
    let n = adj.len();
    let b: Dense = (0..n)
        .map(|p| (0..n).map(|q| adj[p][q] * (1.0 + cos(&hu[p], &hv[q])) / 2.0).collect())
        .collect();
    let dr: Vec<f64> = (0..n).map(|p| b[p].iter().sum()).collect();
    let dc: Vec<f64> = (0..n).map(|q| (0..n).map(|p| b[p][q]).sum()).collect();
    let inv = |x: f64| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 };
    (0..n)
        .map(|p| (0..n).map(|q| inv(dr[p]) * b[p][q] * inv(dc[q])).collect())
        .collect()
}

fn matmul(a: &Dense, b: &Dense) -> Dense {
    (0..a.len())
        .map(|i| (0..b[0].len()).map(|j| (0..b.len()).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

fn combine(parts: [(&Dense, f64); 3]) -> Dense {
    let (rows, cols) = (parts[0].0.len(), parts[0].0[0].len());
    (0..rows)
        .map(|r| (0..cols).map(|c| parts.iter().map(|(m, w)| w * m[r][c]).sum()).collect())
        .collect()
}

/// Final hop of the aligned recursion, both modalities reading hop `k`.
pub fn aligned_propagate(adj: &Dense, xt: &Dense, xi: &Dense, cfg: &PropagationConfig) -> (Dense, Dense) {
    let tt = aligned_operator(adj, xt, xt);
    let ii = aligned_operator(adj, xi, xi);
    let ti = aligned_operator(adj, xt, xi);
    let it = aligned_operator(adj, xi, xt);
    let (mut ht, mut hi) = (xt.clone(), xi.clone());
    for _ in 0..cfg.k {
        let nt = combine([(&matmul(&tt, &ht), cfg.alpha_t), (&matmul(&ti, &hi), cfg.beta_t), (xt, cfg.gamma_t)]);
        let ni = combine([(&matmul(&ii, &hi), cfg.alpha_i), (&matmul(&it, &ht), cfg.beta_i), (xi, cfg.gamma_i)]);
        ht = nt;
        hi = ni;
    }
    (ht, hi)
}

/// Erdős–Rényi graph with uniform features, plus its dense adjacency.
pub fn random_mag(n: usize, p: f64, d: usize, s: u64) -> (Mag, Dense) {
    let mut rng = seed::rng(s);
    let mut edges = Vec::new();
    let mut adj = vec![vec![0.0; n]; n];
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
                adj[u][v] = 1.0;
                adj[v][u] = 1.0;
            }
        }
    }
    let mut feat = || DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..=1.0));
    let (ft, fi) = (feat(), feat());
    (Mag::from_edges(n, &edges, ft, fi, None).expect("valid graph"), adj)
}

fn distinct(xs: &[usize]) -> Vec<usize> {
    let mut v = xs.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// NMI with arithmetic-mean normalization, from entropies over label values.
pub fn nmi(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let (pv, tv) = (distinct(pred), distinct(truth));
    let count = |xs: &[usize], v: usize| xs.iter().filter(|&&x| x == v).count() as f64;
    let entropy = |xs: &[usize], vs: &[usize]| -> f64 {
        vs.iter()
            .map(|&v| {
                let p = count(xs, v) / n;
                -p * p.ln()
            })
            .sum()
    };
    let (hp, ht) = (entropy(pred, &pv), entropy(truth, &tv));
    if hp + ht == 0.0 {
        return 1.0;
    }
    let mut mi = 0.0;
    for &a in &pv {
        for &b in &tv {
            let joint = pred.iter().zip(truth).filter(|(&x, &y)| x == a && y == b).count() as f64;
            if joint > 0.0 {
                let pj = joint / n;
                mi += pj * (pj / ((count(pred, a) / n) * (count(truth, b) / n))).ln();
            }
        }
    }
    2.0 * mi / (hp + ht)
}

/// ARI by walking every unordered pair of samples.
pub fn ari(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len();
    let (mut both, mut same_p, mut same_t, mut total) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            total += 1;
            let sp = pred[i] == pred[j];
            let st = truth[i] == truth[j];
            same_p += sp as u64;
            same_t += st as u64;
            both += (sp && st) as u64;
        }
    }
    if total == 0 {
        return 1.0;
    }
    let expected = same_p as f64 * same_t as f64 / total as f64;
    let max = 0.5 * (same_p + same_t) as f64;
    if max == expected {
        return if both as f64 == expected { 1.0 } else { 0.0 };
    }
    (both as f64 - expected) / (max - expected)
}

/// MRR by fully sorting each query's candidates (score descending, then id
/// ascending) and locating the positive.
pub fn mrr(z: &DenseMatrix, pos: &[(usize, usize)], negs: &[Vec<usize>]) -> f64 {
    let score = |u: usize, w: usize| -> f64 { z.row(u).iter().zip(z.row(w)).map(|(a, b)| a * b).sum() };
    let mut total = 0.0;
    for (&(u, v), cand) in pos.iter().zip(negs) {
        let mut all: Vec<(f64, usize)> = cand.iter().map(|&w| (score(u, w), w)).collect();
        all.push((score(u, v), v));
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let rank = all.iter().position(|&(_, w)| w == v).unwrap() + 1;
        total += 1.0 / rank as f64;
    }
    total / pos.len() as f64
}
