//! One function per subcommand.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::time::Instant;

use magd_core::baselines;
use magd_core::cap::{self, CrossOperatorMeta, TrajectoryStore};
use magd_core::config::ExperimentConfig;
use magd_core::io::{self, Dtype};
use magd_core::metrics::{self, MetricReport};
use magd_core::numerics::DenseMatrix;
use magd_core::params;
use magd_core::seed;
use magd_core::synthgen::{self, SynthSpec};
use magd_core::tasks::{self, Model, TrainConfig};
use magd_core::verify::{self, Certificate, ComplexitySpec};
use magd_core::{Error, Mag, Trajectory};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::overrides::resolve;
use crate::{
    note, BenchArgs, CliError, CliResult, EvalArgs, EvalTask, ExportArgs, PropagateArgs, SynthArgs, Theorem, TrainArgs,
    TrainTask, VerifyArgs,
};

pub const CONFIG_FILE: &str = "config.json";
pub const RUN_FILE: &str = "run.json";
pub const HISTORY_FILE: &str = "history.jsonl";

/// Fraction of edges held out for link prediction, split evenly into
/// validation and test.
const LP_HOLDOUT: f64 = 0.2;
const LP_NEGATIVES: usize = 100;
const KMEANS_RESTARTS: usize = 10;

/// Training summary stored next to a checkpoint.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunMeta {
    task: TrainTask,
    classes: Option<usize>,
    best_epoch: usize,
    best_val: f64,
    epochs_run: usize,
    train_seconds: f64,
    seconds_per_epoch: f64,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|source| {
        CliError::Core(Error::Storage {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|source| {
        CliError::Core(Error::Storage {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn print_json(value: &impl Serialize) -> CliResult<String> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    println!("{text}");
    Ok(text)
}

fn load_graph(dir: &Path, cfg: &ExperimentConfig) -> CliResult<Mag> {
    let mag = Mag::load_dir(dir)?;
    Ok(if cfg.self_loops { mag.with_self_loops() } else { mag })
}

fn open_store(path: &Path) -> CliResult<(TrajectoryStore, Trajectory, Trajectory)> {
    let store = TrajectoryStore::open(path)?;
    if store.manifest.n == 0 || store.manifest.files.is_empty() {
        return Err(CliError::Missing(format!("trajectory store {} is empty", path.display())));
    }
    let (t, i) = store.load()?;
    Ok((store, t, i))
}

fn check_store(store: &TrajectoryStore, mag: &Mag, cfg: &ExperimentConfig) -> CliResult<()> {
    let m = &store.manifest;
    if m.n != mag.n() {
        return Err(Error::Consistency(format!("store has {} nodes, graph has {}", m.n, mag.n())).into());
    }
    if m.d != cfg.d {
        return Err(Error::Consistency(format!("store width {} differs from config d = {}", m.d, cfg.d)).into());
    }
    if m.cross_operators.is_some() != cfg.model.uses_cap() {
        return Err(Error::Consistency(format!(
            "store was built for {}, config model is {}",
            m.model, cfg.model
        ))
        .into());
    }
    Ok(())
}

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    let spec = SynthSpec {
        n: a.n,
        c: a.classes,
        p_in: a.p_in,
        p_out: a.p_out,
        d_t: a.d_t,
        d_i: a.d_i,
        conflict: a.conflict,
        noise_sigma: a.noise,
        margin: a.margin,
        seed: a.seed,
    };
    let mag = synthgen::generate(&spec)?;
    mag.save(&a.out)?;
    print_json(&json!({
        "n": mag.n(),
        "edges": mag.num_edges(),
        "classes": spec.c,
        "conflict": spec.conflict,
        "seed": spec.seed,
        "out": a.out,
    }))?;
    Ok(())
}

pub fn propagate(a: &PropagateArgs) -> CliResult<()> {
    let cfg = resolve(&a.cfg, None)?;
    if a.out.join(cap::MANIFEST_FILE).exists() {
        if !a.force {
            return Err(CliError::Io(format!(
                "a trajectory store already exists at {}; pass --force to replace it",
                a.out.display()
            )));
        }
        note(format!("--force: replacing {}", a.out.display()));
        fs::remove_dir_all(&a.out).map_err(|source| Error::Storage {
            path: a.out.clone(),
            source,
        })?;
    }
    let mag = load_graph(&a.data, &cfg)?;
    let mag = magd_core::mag::project_features(&mag, cfg.d, cfg.seed)?;
    let p = &cfg.propagation;
    let start = Instant::now();
    let (t, i, cross, applications) = if cfg.model.uses_cap() {
        let ops = cap::build_priors(&mag)?;
        let (t, i) = cap::propagate(&mag, &ops, p)?;
        let meta = CrossOperatorMeta {
            beta_t: p.beta_t,
            beta_i: p.beta_i,
            semantic_priors: true,
        };
        (t, i, Some(meta), 4.0)
    } else {
        let (t, i) = baselines::msgc_propagate(&mag, p)?;
        (t, i, None, 2.0)
    };
    let seconds = start.elapsed().as_secs_f64();
    let store = TrajectoryStore::write(&a.out, cfg.model.key(), p, cross, &t, &i)?;
    write(&a.out.join(CONFIG_FILE), cfg.to_json()?)?;
    // one multiply-add per stored entry, per operator application, per hop
    let nnz = mag.adjacency().nnz() as f64;
    let predicted_flops = 2.0 * applications * p.k as f64 * nnz * cfg.d as f64;
    print_json(&json!({
        "model": cfg.model.key(),
        "n": mag.n(),
        "edges": mag.num_edges(),
        "k": p.k,
        "d": cfg.d,
        "files": store.manifest.files.len(),
        "precompute_seconds": seconds,
        "predicted_flops": predicted_flops,
        "observed_gflops": predicted_flops / seconds.max(1e-12) / 1e9,
        "config_hash": cfg.hash(),
    }))?;
    Ok(())
}

struct LinkSplit {
    train_graph: Mag,
    val: Vec<(usize, usize)>,
    val_negatives: Vec<Vec<usize>>,
    test: Vec<(usize, usize)>,
    test_negatives: Vec<Vec<usize>>,
}

fn link_split(mag: &Mag, seed_value: u64) -> CliResult<LinkSplit> {
    let (train_graph, held) = tasks::split_edges(mag, LP_HOLDOUT, seed::derive(seed_value, 20))?;
    if held.len() < 2 {
        return Err(CliError::Usage(format!("{} edges are too few for a link split", mag.num_edges())));
    }
    let (val, test) = held.split_at(held.len() / 2);
    let known: HashSet<(usize, usize)> = mag.edge_pairs().into_iter().collect();
    let count = LP_NEGATIVES.min(mag.n().saturating_sub(2) / 2).max(1);
    let val_negatives = tasks::sample_negatives(mag.n(), val, &known, count, seed::derive(seed_value, 21))?;
    let test_negatives = tasks::sample_negatives(mag.n(), test, &known, count, seed::derive(seed_value, 22))?;
    Ok(LinkSplit {
        train_graph,
        val: val.to_vec(),
        val_negatives,
        test: test.to_vec(),
        test_negatives,
    })
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let cfg = resolve(&a.cfg, Some(&a.store.join(CONFIG_FILE)))?;
    let (store, t, i) = open_store(&a.store)?;
    let mag = load_graph(&a.data, &cfg)?;
    check_store(&store, &mag, &cfg)?;
    let taa = cfg.taa_config();
    let start = Instant::now();
    let (outcome, classes) = match a.task {
        TrainTask::Nc => {
            let mag = magd_core::mag::make_splits(&mag, &cfg.split)?;
            let classes = mag.num_classes();
            let model = Model::init(cfg.model, &taa, &cfg.align, Some(classes), cfg.seed)?;
            (tasks::train_node_classifier(&mag, &t, &i, model, &cfg.train)?, Some(classes))
        }
        TrainTask::Lp => {
            let split = link_split(&mag, cfg.seed)?;
            let model = Model::init(cfg.model, &taa, &cfg.align, None, cfg.seed)?;
            let outcome = tasks::train_link_predictor(
                &split.train_graph,
                &t,
                &i,
                model,
                &cfg.train,
                &split.val,
                &split.val_negatives,
            )?;
            (outcome, None)
        }
    };
    let train_seconds = start.elapsed().as_secs_f64();
    params::save_checkpoint(&a.out, &outcome.model, cfg.seed, &cfg.hash())?;
    write(&a.out.join(HISTORY_FILE), tasks::history_jsonl(&outcome.history)?)?;
    write(&a.out.join(CONFIG_FILE), cfg.to_json()?)?;
    let epochs_run = outcome.history.len();
    let meta = RunMeta {
        task: a.task,
        classes,
        best_epoch: outcome.best_epoch,
        best_val: outcome.best_val,
        epochs_run,
        train_seconds,
        seconds_per_epoch: outcome.history.iter().map(|r| r.seconds).sum::<f64>() / epochs_run.max(1) as f64,
    };
    write(&a.out.join(RUN_FILE), serde_json::to_string_pretty(&meta).map_err(Error::from)?)?;
    print_json(&meta)?;
    Ok(())
}

fn load_model(dir: &Path) -> CliResult<(ExperimentConfig, RunMeta, Model)> {
    let cfg = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    let run_path = dir.join(RUN_FILE);
    let text = fs::read_to_string(&run_path).map_err(|source| Error::Storage { path: run_path, source })?;
    let meta: RunMeta = serde_json::from_str(&text).map_err(Error::from)?;
    let mut model = Model::init(cfg.model, &cfg.taa_config(), &cfg.align, meta.classes, cfg.seed)?;
    params::load_checkpoint(dir, &mut model)?;
    Ok((cfg, meta, model))
}

fn rows_of(z: &DenseMatrix, nodes: &[usize]) -> DenseMatrix {
    DenseMatrix::from_fn(nodes.len(), z.cols(), |r, c| z.get(nodes[r], c))
}

fn labeled(mag: &Mag, nodes: impl IntoIterator<Item = usize>) -> Vec<(usize, usize)> {
    let labels = mag.labels().unwrap_or(&[]);
    nodes
        .into_iter()
        .filter_map(|v| labels.get(v).copied().flatten().map(|y| (v, y)))
        .collect()
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let (cfg, _, model) = load_model(&a.checkpoint)?;
    let (store, t, i) = open_store(&a.store)?;
    let mag = load_graph(&a.data, &cfg)?;
    check_store(&store, &mag, &cfg)?;
    let report = |task: &str, metric: &str, value: f64, n: usize| MetricReport {
        task: task.into(),
        metric: metric.into(),
        value,
        n,
        seed: cfg.seed,
    };
    let reports = match a.task {
        EvalTask::Nc => {
            if model.head.is_none() {
                return Err(CliError::Usage("checkpoint has no classifier head; train with --task nc".into()));
            }
            let mag = magd_core::mag::make_splits(&mag, &cfg.split)?;
            let test = labeled(&mag, mag.splits().expect("splits set").test.iter().copied());
            let nodes: Vec<usize> = test.iter().map(|&(v, _)| v).collect();
            let truth: Vec<usize> = test.iter().map(|&(_, y)| y).collect();
            let pred = tasks::predict(&model, &t, &i, &nodes)?;
            let (acc, f1) = metrics::accuracy_f1(&pred, &truth)?;
            vec![report("nc", "accuracy", acc, nodes.len()), report("nc", "macro_f1", f1, nodes.len())]
        }
        EvalTask::Lp => {
            let split = link_split(&mag, cfg.seed)?;
            let z = tasks::embed(&model, &t, &i)?;
            let ranks = tasks::score_links(&z, &split.test, &split.test_negatives)?;
            let (mrr, hits) = metrics::mrr_hits(&ranks, &[3, 10])?;
            let n = ranks.len();
            vec![
                report("lp", "mrr", mrr, n),
                report("lp", "hits@3", hits[0], n),
                report("lp", "hits@10", hits[1], n),
            ]
        }
        EvalTask::Cluster => {
            let nodes = labeled(&mag, 0..mag.n());
            if nodes.is_empty() {
                return Err(CliError::Missing("clustering needs labels".into()));
            }
            let ids: Vec<usize> = nodes.iter().map(|&(v, _)| v).collect();
            let truth: Vec<usize> = nodes.iter().map(|&(_, y)| y).collect();
            let z = rows_of(&tasks::embed(&model, &t, &i)?, &ids);
            let pred = tasks::kmeans(&z, mag.num_classes(), KMEANS_RESTARTS, cfg.seed)?;
            let n = ids.len();
            vec![
                report("cluster", "nmi", metrics::nmi(&pred, &truth)?, n),
                report("cluster", "ari", metrics::ari(&pred, &truth)?, n),
            ]
        }
        EvalTask::Retrieval => {
            let nodes: Vec<usize> = if mag.labels().is_some() {
                let mag = magd_core::mag::make_splits(&mag, &cfg.split)?;
                mag.splits().expect("splits set").test.clone()
            } else {
                (0..mag.n()).collect()
            };
            let z = tasks::embed(&model, &t, &i)?;
            let (t2i, i2t) = tasks::retrieval_ranks(&z, &nodes)?;
            let n = nodes.len();
            vec![
                report("retrieval", "t2i_mrr", metrics::mrr_hits(&t2i, &[])?.0, n),
                report("retrieval", "i2t_mrr", metrics::mrr_hits(&i2t, &[])?.0, n),
            ]
        }
    };
    let text = print_json(&reports)?;
    if let Some(out) = &a.out {
        write(out, text + "\n")?;
    }
    Ok(())
}

fn summarize(c: &Certificate) -> String {
    format!(
        "{}: {} (trials {}, seed {}; worst trial {} observed {:.6e} bound {:.6e})",
        c.theorem,
        if c.pass { "PASS" } else { "FAIL" },
        c.trials,
        c.seed,
        c.worst_case.trial_seed,
        c.worst_case.observed,
        c.worst_case.bound
    )
}

pub fn verify(a: &VerifyArgs) -> CliResult<()> {
    let selected = match a.only {
        Some(t) => vec![t],
        None => vec![Theorem::Contraction, Theorem::Magnitude, Theorem::Fusion, Theorem::Complexity],
    };
    create_dir(&a.out)?;
    let mut failed = Vec::new();
    for theorem in selected {
        let cert = match theorem {
            Theorem::Complexity => {
                let defaults = ComplexitySpec::default();
                let spec = ComplexitySpec {
                    sizes: a.sizes.clone().unwrap_or(defaults.sizes.clone()),
                    ..defaults
                };
                let report = verify::verify_complexity(&spec, a.seed)?;
                write(&a.out.join("complexity.csv"), report.csv())?;
                note(format!("complexity slope {:.3}, TAA depth ratio {:.2}", report.slope, report.taa_ratio));
                report.certificate()
            }
            _ => {
                let report = match theorem {
                    Theorem::Contraction => verify::verify_contraction(a.trials, a.n_max, a.seed)?,
                    Theorem::Magnitude => verify::verify_magnitude_bound(a.trials, a.seed)?,
                    _ => verify::verify_fusion_bound(a.trials, a.seed)?,
                };
                let name = &report.certificate.theorem;
                write(&a.out.join(format!("{name}.records.jsonl")), report.records_jsonl()?)?;
                report.certificate
            }
        };
        let text = serde_json::to_string_pretty(&cert).map_err(Error::from)?;
        write(&a.out.join(format!("{}.json", cert.theorem)), text + "\n")?;
        println!("{}", summarize(&cert));
        if !cert.pass {
            failed.push(cert.theorem);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("failed certificates: {}", failed.join(", "))))
    }
}

fn best_of<T>(repeats: usize, mut f: impl FnMut() -> CliResult<T>) -> CliResult<(f64, T)> {
    let mut best: Option<(f64, T)> = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let out = f()?;
        let s = start.elapsed().as_secs_f64();
        if best.as_ref().is_none_or(|(b, _)| s < *b) {
            best = Some((s, out));
        }
    }
    Ok(best.expect("at least one repeat"))
}

pub fn bench(a: &BenchArgs) -> CliResult<()> {
    let c = 4;
    if a.n < 2 * c {
        return Err(CliError::Usage(format!("--n must be at least {}", 2 * c)));
    }
    // expected degree p_in (n/c) + p_out (n - n/c) with p_out = p_in / 10
    let p_in = (a.avg_degree / (a.n as f64 * (1.0 / c as f64 + 0.1 * (1.0 - 1.0 / c as f64)))).min(1.0);
    let spec = SynthSpec {
        n: a.n,
        c,
        p_in,
        p_out: p_in / 10.0,
        d_t: a.d,
        d_i: a.d,
        conflict: 0.5,
        seed: a.seed,
        ..SynthSpec::default()
    };
    let mag = synthgen::generate(&spec)?;
    let cfg = magd_core::mag::PropagationConfig::shared(a.k, 0.5, 0.3)?;
    let precompute = || -> CliResult<(Trajectory, Trajectory)> {
        let ops = cap::build_priors(&mag)?;
        Ok(cap::propagate(&mag, &ops, &cfg)?)
    };
    let (par_s, par_out) = best_of(a.repeats, precompute)?;
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let (seq_s, seq_out) = single.install(|| best_of(a.repeats, precompute))?;
    let identical = par_out == seq_out;

    let split = magd_core::mag::make_splits(&mag, &Default::default())?;
    let taa = magd_core::taa::TaaConfig::new(a.d, 32, 32);
    let model = Model::init(tasks::ModelKind::Campa, &taa, &Default::default(), Some(c), a.seed)?;
    let one_epoch = TrainConfig {
        epochs: 1,
        patience: 1,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let (t, i) = &par_out;
    let (_, outcome) = best_of(a.repeats, || {
        Ok(tasks::train_node_classifier(&split, t, i, model.clone(), &one_epoch)?)
    })?;
    let epoch_s = outcome.history.first().map_or(0.0, |r| r.seconds);

    let (mut bytes64, mut bytes32, mut err32) = (0usize, 0usize, 0.0f64);
    for h in t.hops().iter().chain(i.hops()) {
        bytes64 += io::encode_magf(h, Dtype::F64).len();
        let enc = io::encode_magf(h, Dtype::F32);
        bytes32 += enc.len();
        let (back, _) = io::decode_magf(&enc, Path::new("<memory>"))?;
        err32 = err32.max(back.max_abs_diff(h));
    }
    let text = print_json(&json!({
        "n": mag.n(),
        "edges": mag.num_edges(),
        "k": a.k,
        "d": a.d,
        "threads": rayon::current_num_threads(),
        "parallel_build": cfg!(feature = "parallel"),
        "precompute_seconds_parallel": par_s,
        "precompute_seconds_sequential": seq_s,
        "speedup": seq_s / par_s.max(1e-12),
        "identical": identical,
        "epoch_seconds": epoch_s,
        "store_bytes_f64": bytes64,
        "store_bytes_f32": bytes32,
        "f32_max_abs_error": err32,
    }))?;
    if let Some(out) = &a.out {
        write(out, text + "\n")?;
    }
    if !identical {
        return Err(Error::State("parallel and single-thread propagation disagree".into()).into());
    }
    Ok(())
}

pub fn export_correlations(a: &ExportArgs) -> CliResult<()> {
    let (_, t, i) = open_store(&a.store)?;
    let halves = match &a.checkpoint {
        Some(dir) => {
            let (_, _, model) = load_model(dir)?;
            let z = tasks::embed(&model, &t, &i)?;
            let d = z.cols() / 2;
            let zt = DenseMatrix::from_fn(z.rows(), d, |r, c| z.get(r, c));
            let zi = DenseMatrix::from_fn(z.rows(), d, |r, c| z.get(r, d + c));
            Some((zt, zi))
        }
        None => None,
    };
    let probe = synthgen::conflict_probe(&t, &i, halves.as_ref().map(|(a, b)| (a, b)))?;
    create_dir(&a.out)?;
    let drift = probe.drift_csv();
    write(&a.out.join("drift.csv"), &drift)?;
    write(&a.out.join("correlation.csv"), probe.correlation_csv())?;
    print!("{drift}");
    Ok(())
}
