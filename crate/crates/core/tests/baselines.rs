use magd_core::baselines::{self, AlignConfig, AlignParams, Corrections};
use magd_core::cap;
use magd_core::mag::{Mag, Modality, PropagationConfig};
use magd_core::numerics::DenseMatrix;
use magd_core::params::ParamSet;
use magd_core::taa::{self, HopStack, TaaConfig, TaaParams};
use magd_core::{seed, Trajectory};
use rand::Rng;

fn random_mag(n: usize, d: usize, p: f64, s: u64) -> Mag {
    let mut rng = seed::rng(s);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let ft = DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    let fi = DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
    Mag::from_edges(n, &edges, ft, fi, None).unwrap()
}

fn scalar(m: Modality, v: &[f64]) -> Trajectory {
    Trajectory::new(m, v.iter().map(|&x| DenseMatrix::filled(1, 1, x)).collect()).unwrap()
}

fn align(lp: f64, la: f64, d: usize) -> AlignParams {
    AlignParams::identity(&AlignConfig { lambda_p: lp, lambda_a: la }, d).unwrap()
}

#[test]
fn msgc_is_the_degenerate_cap_run() {
    let mag = random_mag(10, 3, 0.3, 4);
    let cfg = PropagationConfig::shared(3, 0.5, 0.2).unwrap();
    let (t, i) = baselines::msgc_propagate(&mag, &cfg).unwrap();
    let plain = PropagationConfig::new(3, (1.0, 0.0, 0.0), (1.0, 0.0, 0.0)).unwrap();
    let (ct, ci) = cap::propagate(&mag, &cap::plain_operators(&mag), &plain).unwrap();
    assert_eq!((t, i), (ct, ci));
}

#[test]
fn msgc_matches_dense_powers() {
    let mag = random_mag(6, 2, 0.5, 3);
    let cfg = PropagationConfig::shared(3, 0.5, 0.2).unwrap();
    let (t, _) = baselines::msgc_propagate(&mag, &cfg).unwrap();
    let a = mag.adjacency().to_dense();
    let deg: Vec<f64> = (0..6).map(|r| a.row(r).iter().sum()).collect();
    let norm = DenseMatrix::from_fn(6, 6, |r, c| {
        if a.get(r, c) == 0.0 { 0.0 } else { a.get(r, c) / (deg[r] * deg[c]).sqrt() }
    });
    let mut h = mag.features(Modality::Text).clone();
    for k in 1..=3 {
        h = norm.matmul(&h).unwrap();
        assert!(t.hop(k).max_abs_diff(&h) <= 1e-12);
    }
}

#[test]
fn msgc_preserves_constants_on_cycles() {
    let n = 7;
    let edges: Vec<(usize, usize)> = (0..n).map(|u| (u, (u + 1) % n)).collect();
    let f = DenseMatrix::filled(n, 2, 0.7);
    let mag = Mag::from_edges(n, &edges, f.clone(), f, None).unwrap();
    let (t, _) = baselines::msgc_propagate(&mag, &PropagationConfig::shared(4, 0.5, 0.1).unwrap()).unwrap();
    for h in t.hops() {
        assert!(h.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }
}

#[test]
fn align_p_endpoints() {
    let (t, i) = (scalar(Modality::Text, &[2.0, 1.0]), scalar(Modality::Image, &[4.0, -1.0]));
    let (a, b) = baselines::align_p(&t, &i, &align(0.0, 0.0, 1)).unwrap();
    assert_eq!((&a, &b), (&t, &i));
    let (a, b) = baselines::align_p(&t, &i, &align(1.0, 0.0, 1)).unwrap();
    assert_eq!(a.hops(), i.hops());
    assert_eq!(b.hops(), t.hops());
    let (a, b) = baselines::align_p(&t, &i, &align(0.5, 0.0, 1)).unwrap();
    assert_eq!(a.hop(0).get(0, 0), 3.0);
    assert_eq!(b.hop(0).get(0, 0), 3.0);
}

#[test]
fn align_a_endpoints() {
    let zt = DenseMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
    let zi = DenseMatrix::from_rows(&[[-3.0, 0.5]]).unwrap();
    let (a, b, z) = baselines::align_a(&zt, &zi, &align(0.0, 0.0, 2)).unwrap();
    assert_eq!((a, b), (zt.clone(), zi.clone()));
    assert_eq!(z.row(0), &[1.0, 2.0, -3.0, 0.5]);
    let (a, b, _) = baselines::align_a(&zt, &zi, &align(0.0, 1.0, 2)).unwrap();
    assert_eq!((a, b), (zi.clone(), zt.clone()));
    let (a, b, _) = baselines::align_a(&zt, &zt, &align(0.0, 0.5, 2)).unwrap();
    assert_eq!((a, b), (zt.clone(), zt));
    assert!(AlignParams::identity(&AlignConfig { lambda_p: 1.5, lambda_a: 0.0 }, 2).is_err());
}

#[test]
fn simple_aggregate_examples() {
    let one = scalar(Modality::Text, &[5.0]);
    assert_eq!(baselines::simple_aggregate(&one).get(0, 0), 5.0);
    assert_eq!(baselines::simple_aggregate(&scalar(Modality::Text, &[0.0, 2.0])).get(0, 0), 1.0);
}

#[test]
fn simple_aggregate_equals_uniform_gate_fusion() {
    let mut rng = seed::rng(6);
    let hops: Vec<DenseMatrix> = (0..4).map(|_| DenseMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0))).collect();
    let t = Trajectory::new(Modality::Text, hops).unwrap();
    let zero = TaaParams::zeros(&TaaConfig::new(3, 2, 2)).unwrap();
    let g = HopStack::from_trajectory(&t);
    let c = DenseMatrix::zeros(5, 4);
    let fused = taa::fuse(&g, &g, &c, &zero).unwrap();
    assert!(fused.z_t.max_abs_diff(&baselines::simple_aggregate(&t)) <= 1e-12);
}

#[test]
fn shallow_embed_matches_composed_ops() {
    let mag = random_mag(9, 3, 0.4, 12);
    let (t, i) = baselines::msgc_propagate(&mag, &PropagationConfig::shared(3, 0.5, 0.2).unwrap()).unwrap();
    let p = AlignParams::init(&AlignConfig { lambda_p: 0.4, lambda_a: 0.3 }, 3, 12).unwrap();
    let nodes: Vec<usize> = (0..9).collect();
    let both = Corrections { align_p: true, align_a: true };
    let (z, _) = baselines::shallow_embed(&t, &i, &nodes, both, &p).unwrap();
    let (at, ai) = baselines::align_p(&t, &i, &p).unwrap();
    let (_, _, want) = baselines::align_a(&baselines::simple_aggregate(&at), &baselines::simple_aggregate(&ai), &p).unwrap();
    assert!(z.max_abs_diff(&want) <= 1e-12);
}

#[test]
fn shallow_gradients_match_differences() {
    let mag = random_mag(8, 3, 0.4, 17);
    let (t, i) = baselines::msgc_propagate(&mag, &PropagationConfig::shared(2, 0.5, 0.2).unwrap()).unwrap();
    let nodes: Vec<usize> = (0..8).collect();
    let mut rng = seed::rng(17);
    let r = DenseMatrix::from_fn(8, 6, |_, _| rng.random_range(-1.0..1.0));
    for corr in [
        Corrections { align_p: true, align_a: false },
        Corrections { align_p: false, align_a: true },
        Corrections { align_p: true, align_a: true },
    ] {
        let mut p = AlignParams::init(&AlignConfig { lambda_p: 0.4, lambda_a: 0.3 }, 3, 17).unwrap();
        let loss = |p: &AlignParams| -> f64 {
            let (z, _) = baselines::shallow_embed(&t, &i, &nodes, corr, p).unwrap();
            z.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = baselines::shallow_embed(&t, &i, &nodes, corr, &p).unwrap();
        let g = baselines::shallow_backward(&cache, &r, corr, &p).unwrap();
        let analytic: Vec<Vec<f64>> = g.named().iter().map(|(_, m)| m.data().to_vec()).collect();
        for (ti, ga) in analytic.iter().enumerate() {
            for e in 0..ga.len() {
                let orig = p.tensors_mut()[ti].data()[e];
                p.tensors_mut()[ti].data_mut()[e] = orig + 1e-5;
                let lp = loss(&p);
                p.tensors_mut()[ti].data_mut()[e] = orig - 1e-5;
                let lm = loss(&p);
                p.tensors_mut()[ti].data_mut()[e] = orig;
                let num = (lp - lm) / 2e-5;
                assert!((num - ga[e]).abs() <= 1e-4 * num.abs().max(ga[e].abs()).max(1e-6), "{corr:?} tensor {ti}[{e}]");
            }
        }
    }
}
