use magd_core::cap;
use magd_core::mag::{Mag, Modality, PropagationConfig};
use magd_core::numerics::{cosine, DenseMatrix};
use magd_core::synthgen::{self, SynthSpec};

fn spec(conflict: f64, noise: f64) -> SynthSpec {
    SynthSpec {
        n: 400,
        c: 4,
        p_in: 0.05,
        p_out: 0.005,
        d_t: 16,
        d_i: 16,
        conflict,
        noise_sigma: noise,
        margin: 2.0,
        seed: 1,
    }
}

/// Mean over classes of the cosine between the two modalities' class means.
fn class_mean_cosine(mag: &Mag) -> f64 {
    let labels = mag.labels().unwrap();
    let c = mag.num_classes();
    let mut total = 0.0;
    for k in 0..c {
        let members: Vec<usize> = (0..mag.n()).filter(|&v| labels[v] == Some(k)).collect();
        let mean = |m: &DenseMatrix| -> Vec<f64> {
            let mut acc = vec![0.0; m.cols()];
            for &v in &members {
                acc.iter_mut().zip(m.row(v)).for_each(|(a, b)| *a += b);
            }
            acc
        };
        total += cosine(&mean(mag.features(Modality::Text)), &mean(mag.features(Modality::Image)));
    }
    total / c as f64
}

#[test]
fn agreement_and_conflict_extremes() {
    let agree = synthgen::generate(&spec(0.0, 0.1)).unwrap();
    assert!(class_mean_cosine(&agree) >= 0.9);
    let clash = synthgen::generate(&spec(1.0, 0.1)).unwrap();
    assert!(class_mean_cosine(&clash).abs() <= 0.1);
}

#[test]
fn generation_is_deterministic() {
    let a = synthgen::generate(&spec(0.5, 0.3)).unwrap();
    let b = synthgen::generate(&spec(0.5, 0.3)).unwrap();
    assert_eq!(a, b);
    let mut other = spec(0.5, 0.3);
    other.seed = 2;
    assert_ne!(a, synthgen::generate(&other).unwrap());
}

#[test]
fn invalid_specs_rejected() {
    let mut s = spec(1.5, 0.1);
    assert!(synthgen::generate(&s).is_err());
    s = spec(0.5, 0.1);
    s.p_in = 0.0;
    s.p_out = 0.0;
    assert!(synthgen::generate(&s).is_err());
    s = spec(0.5, 0.1);
    s.n = 10;
    assert!(synthgen::generate(&s).is_err());
}

#[test]
fn topology_is_symmetric_with_binomial_densities() {
    let mut s = spec(0.3, 0.2);
    s.n = 800;
    let mag = synthgen::generate(&s).unwrap();
    let a = mag.adjacency();
    assert!(a.is_symmetric(0.0));
    assert!((0..mag.n()).all(|v| a.get(v, v) == 0.0));
    let labels = mag.labels().unwrap();
    let (mut intra, mut inter) = (0u64, 0u64);
    for (u, v) in mag.edge_pairs() {
        if labels[u] == labels[v] {
            intra += 1;
        } else {
            inter += 1;
        }
    }
    let per = (s.n / s.c) as f64;
    let intra_pairs = s.c as f64 * per * (per - 1.0) / 2.0;
    let inter_pairs = (s.n as f64 * (s.n as f64 - 1.0) / 2.0) - intra_pairs;
    for (count, pairs, p) in [(intra, intra_pairs, s.p_in), (inter, inter_pairs, s.p_out)] {
        let sd = (pairs * p * (1.0 - p)).sqrt();
        assert!((count as f64 - pairs * p).abs() <= 3.0 * sd, "{count} vs {}", pairs * p);
    }
}

#[test]
fn probe_on_identical_modalities_is_flat() {
    let mag = synthgen::generate(&spec(0.0, 0.2)).unwrap();
    let same = mag.features(Modality::Text).clone();
    let mag = mag.with_features(same.clone(), same).unwrap();
    let cfg = PropagationConfig::shared(4, 0.6, 0.0).unwrap();
    let (t, i) = cap::propagate(&mag, &cap::build_priors(&mag).unwrap(), &cfg).unwrap();
    let report = synthgen::conflict_probe(&t, &i, None).unwrap();
    assert!(report.drift.iter().all(|r| (r.cos_ti - 1.0).abs() < 1e-12));
    assert!(report.drift_csv().starts_with("hop,cos_tt,cos_ii,cos_ti\n"));
    assert_eq!(report.drift.len(), 5);
}

#[test]
fn cross_term_raises_cross_modal_cosine_under_conflict() {
    let mag = synthgen::generate(&spec(1.0, 0.3)).unwrap();
    let ops = cap::build_priors(&mag).unwrap();
    let run = |beta: f64| {
        let cfg = PropagationConfig::shared(4, 0.6, beta).unwrap();
        let (t, i) = cap::propagate(&mag, &ops, &cfg).unwrap();
        synthgen::conflict_probe(&t, &i, None).unwrap()
    };
    let (plain, aligned) = (run(0.0), run(0.3));
    assert!(plain.drift.iter().all(|r| r.cos_ti.abs() <= 0.1));
    for k in 1..5 {
        assert!(aligned.drift[k].cos_ti > plain.drift[k].cos_ti);
    }
    let corr = aligned.correlation_csv();
    assert!(corr.starts_with(",text,image,fused\n"));
}
