use std::time::{Duration, Instant};

use magd_core::cap::{self, AlignedOperators};
use magd_core::mag::PropagationConfig;
use magd_core::numerics::DenseMatrix;
use magd_core::params::ParamSet;
use magd_core::taa::{self, TaaConfig, TaaParams};
use magd_core::verify::{self, ComplexitySpec, Instance};
use magd_core::{Error, Mag, Modality, Trajectory};

/// Aligned hop with the residual sign flipped.
fn flipped_residual(
    ops: &AlignedOperators,
    cfg: &PropagationConfig,
    h_t: &DenseMatrix,
    h_i: &DenseMatrix,
    h0_t: &DenseMatrix,
    h0_i: &DenseMatrix,
) -> (DenseMatrix, DenseMatrix) {
    let mut neg_t = h0_t.clone();
    neg_t.scale(-1.0);
    let mut neg_i = h0_i.clone();
    neg_i.scale(-1.0);
    cap::step(ops, cfg, h_t, h_i, &neg_t, &neg_i)
}

#[test]
fn contraction_certificate_passes() {
    let start = Instant::now();
    let report = verify::verify_contraction(100, 16, 42).unwrap();
    assert!(start.elapsed() < Duration::from_secs(30));
    let cert = &report.certificate;
    assert!(cert.pass, "{cert:?}");
    assert_eq!((cert.theorem.as_str(), cert.trials, cert.seed), ("contraction", 100, 42));
    for r in &report.records {
        assert!(r.worst_ratio <= r.rho + verify::SLACK);
        assert!(r.final_residual <= verify::CONVERGENCE_TOL);
    }
    assert!(cert.worst_case.observed <= cert.worst_case.bound);
}

#[test]
fn certificates_reproduce_from_their_seed() {
    let a = verify::verify_contraction(20, 12, 5).unwrap();
    let b = verify::verify_contraction(20, 12, 5).unwrap();
    assert_eq!(a, b);
    let json = serde_json::to_value(&a.certificate).unwrap();
    let keys: Vec<&String> = json.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["pass", "seed", "theorem", "trials", "worst_case"]);
    let wc: Vec<&String> = json["worst_case"].as_object().unwrap().keys().collect();
    assert_eq!(wc, ["bound", "observed", "trial_seed"]);
    let single = verify::random_instance(12, a.records[7].trial_seed).unwrap();
    let rec = verify::contraction_trial(&single, &cap::step, a.records[7].trial_seed).unwrap();
    assert_eq!(rec, a.records[7]);
}

#[test]
fn residual_sign_flip_fails_the_certificate() {
    let report = verify::verify_contraction_with(100, 16, 42, &flipped_residual).unwrap();
    assert!(!report.certificate.pass);
    let failing = report.records.iter().filter(|r| !r.pass).count();
    assert!(failing > 0);
    assert!(report.certificate.worst_case.observed > report.certificate.worst_case.bound);
}

#[test]
fn rho_one_is_out_of_scope() {
    let inst = verify::random_instance(8, 3).unwrap();
    let edge = Instance {
        cfg: PropagationConfig::new(10, (0.6, 0.4, 0.0), (0.5, 0.5, 0.0)).unwrap(),
        ..inst
    };
    assert!(matches!(
        verify::contraction_trial(&edge, &cap::step, 3),
        Err(Error::ContractViolation { rho }) if rho == 1.0
    ));
}

#[test]
fn constant_two_node_graph_starts_at_the_fixed_point() {
    let ones = DenseMatrix::from_fn(2, 3, |_, _| 1.0);
    let mag = Mag::from_edges(2, &[(0, 1)], ones.clone(), ones, None).unwrap();
    let inst = Instance::from_mag(&mag, PropagationConfig::shared(5, 0.5, 0.3).unwrap()).unwrap();
    let rec = verify::contraction_trial(&inst, &cap::step, 0).unwrap();
    assert!(rec.pass);
    assert_eq!(rec.worst_ratio, 0.0);
    assert!(rec.final_residual < 1e-14);
}

#[test]
fn magnitude_bound_holds_with_slack() {
    let report = verify::verify_magnitude_bound(100, 7).unwrap();
    assert!(report.certificate.pass);
    let max_ratio = report.records.iter().map(|r| r.worst_ratio).fold(0.0, f64::max);
    assert!(max_ratio < 1.0, "{max_ratio}");
    assert!(max_ratio > 0.0);
}

#[test]
fn magnitude_bound_is_tight_for_pure_residual() {
    let inst = verify::random_instance(10, 11).unwrap();
    let pure = Instance {
        cfg: PropagationConfig::shared(3, 0.0, 0.0).unwrap(),
        ..inst
    };
    let rec = verify::magnitude_trial(&pure, 11).unwrap();
    assert!(rec.pass);
    assert_eq!(rec.worst.observed, rec.worst.bound - verify::SLACK);
    assert_eq!(rec.worst_ratio, 1.0);
}

#[test]
fn fusion_bound_holds_on_random_and_adversarial_instances() {
    let report = verify::verify_fusion_bound(1000, 9).unwrap();
    assert!(report.certificate.pass, "{:?}", report.certificate);
    assert_eq!(report.certificate.trials, 1000);
}

#[test]
fn identical_tied_trajectories_have_zero_gap() {
    let cfg = TaaConfig::new(3, 4, 4);
    let params = TaaParams::tied(&cfg, 2).unwrap();
    let hops: Vec<DenseMatrix> = (0..3)
        .map(|k| DenseMatrix::from_fn(4, 3, |r, c| ((r * 7 + c * 3 + k) % 5) as f64 - 2.0))
        .collect();
    let t = Trajectory::new(Modality::Text, hops.clone()).unwrap();
    let i = Trajectory::new(Modality::Image, hops).unwrap();
    let out = taa::forward(&t, &i, &params).unwrap();
    for v in 0..4 {
        let checks = verify::fusion_checks(
            out.g_t.node(v),
            out.g_i.node(v),
            out.hop_weights_t.row(v),
            out.hop_weights_i.row(v),
            out.z_t.row(v),
            out.z_i.row(v),
        );
        let n = checks.len();
        for c in &checks[n - 2..] {
            assert_eq!(c.observed, 0.0);
            assert_eq!(c.bound, verify::SLACK);
        }
        assert!(checks.iter().all(|c| c.holds()));
    }
}

#[test]
fn fusion_checks_catch_a_broken_fusion() {
    let g_t = [1.0, 0.0, 0.0, 1.0];
    let g_i = [1.0, 0.0, 0.0, 1.0];
    let a = [0.5, 0.5];
    // outside the hull of the hop slices
    let checks = verify::fusion_checks(&g_t, &g_i, &a, &a, &[2.0, 2.0], &[0.5, 0.5]);
    assert!(checks.iter().any(|c| !c.holds()));
    let bad_weights = [0.7, 0.7];
    let checks = verify::fusion_checks(&g_t, &g_i, &bad_weights, &a, &[0.7, 0.7], &[0.5, 0.5]);
    assert!(!checks[1].holds());
}

#[test]
fn parameter_scaling_keeps_bound() {
    // large gains saturate the gates without breaking the bound
    let cfg = TaaConfig::new(2, 3, 3);
    let mut params = TaaParams::init(&cfg, 4).unwrap();
    params.tensors_mut().into_iter().for_each(|t| t.scale(50.0));
    let hops: Vec<DenseMatrix> = (0..4)
        .map(|k| DenseMatrix::from_fn(2, 2, |r, c| (k + r) as f64 - c as f64))
        .collect();
    let t = Trajectory::new(Modality::Text, hops.clone()).unwrap();
    let hops_i: Vec<DenseMatrix> = hops.iter().rev().cloned().collect();
    let i = Trajectory::new(Modality::Image, hops_i).unwrap();
    let out = taa::forward(&t, &i, &params).unwrap();
    for v in 0..2 {
        let checks = verify::fusion_checks(
            out.g_t.node(v),
            out.g_i.node(v),
            out.hop_weights_t.row(v),
            out.hop_weights_i.row(v),
            out.z_t.row(v),
            out.z_i.row(v),
        );
        assert!(checks.iter().all(|c| c.holds()));
    }
}

#[test]
fn tiny_graph_propagates_quickly() {
    let f = DenseMatrix::from_fn(3, 4, |r, c| (r + c) as f64);
    let mag = Mag::from_edges(3, &[(0, 1), (1, 2)], f.clone(), f, None).unwrap();
    let cfg = PropagationConfig::shared(3, 0.5, 0.3).unwrap();
    let ops = cap::build_priors(&mag).unwrap();
    cap::propagate(&mag, &ops, &cfg).unwrap();
    let start = Instant::now();
    let ops = cap::build_priors(&mag).unwrap();
    cap::propagate(&mag, &ops, &cfg).unwrap();
    assert!(start.elapsed() < Duration::from_millis(1));
}

#[test]
fn complexity_report_shape() {
    let spec = ComplexitySpec {
        sizes: vec![2_000, 4_000, 8_000],
        d: 8,
        taa_nodes: 32,
        repeats: 1,
        ..ComplexitySpec::default()
    };
    let report = verify::verify_complexity(&spec, 1).unwrap();
    assert_eq!(report.rows.len(), 5);
    let csv = report.csv();
    assert!(csv.starts_with("stage,k,edges,nodes,seconds\n"));
    assert_eq!(csv.lines().count(), 6);
    assert!(report.slope.is_finite());
    let cert = report.certificate();
    assert_eq!(cert.theorem, "complexity");
    assert_eq!(cert.worst_case.observed, report.slope);

    let bad = ComplexitySpec {
        sizes: vec![100, 100],
        ..spec
    };
    assert!(matches!(verify::verify_complexity(&bad, 1), Err(Error::Config(_))));
}
