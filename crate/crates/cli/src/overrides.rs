//! Config resolution: file (or a fallback) first, then flags. Every flag that
//! changes a key is logged.

use std::path::Path;

use magd_core::config::ExperimentConfig;
use magd_core::mag::PropagationConfig;

use crate::{note, CliError, CliResult, ConfigArgs};

fn current(cfg: &ExperimentConfig, key: &str) -> String {
    let doc = serde_json::to_value(cfg).unwrap_or_default();
    let pointer = format!("/{}", key.replace('.', "/"));
    doc.pointer(&pointer).map(|v| v.to_string()).unwrap_or_else(|| "?".into())
}

fn apply(cfg: &mut ExperimentConfig, flag: &str, key: &str, raw: &str) -> CliResult<()> {
    let before = current(cfg, key);
    cfg.set(key, raw)?;
    let after = current(cfg, key);
    if before != after {
        note(format!("{flag} overrides {key}: {before} -> {after}"));
    }
    Ok(())
}

/// Loads `args.config`, or `fallback` when no file is given and the fallback
/// exists, or the defaults. Then applies flag overrides.
pub fn resolve(args: &ConfigArgs, fallback: Option<&Path>) -> CliResult<ExperimentConfig> {
    let mut cfg = match (&args.config, fallback) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(p)) if p.exists() => {
            note(format!("config from {}", p.display()));
            ExperimentConfig::load(p)?
        }
        _ => ExperimentConfig::default(),
    };
    for entry in &args.set {
        let (key, raw) = entry
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {entry:?}")))?;
        apply(&mut cfg, "--set", key.trim(), raw.trim())?;
    }
    if let Some(m) = args.model {
        apply(&mut cfg, "--model", "model", m.key())?;
    }
    if let Some(s) = args.seed {
        for key in ["seed", "split.seed", "train.seed"] {
            apply(&mut cfg, "--seed", key, &s.to_string())?;
        }
    }
    if args.k.is_some() || args.alpha.is_some() || args.beta.is_some() {
        let p = cfg.propagation;
        let k = args.k.unwrap_or(p.k);
        let alpha = args.alpha.unwrap_or(p.alpha_t);
        let beta = args.beta.unwrap_or(p.beta_t);
        let next = PropagationConfig::shared(k, alpha, beta)?;
        let raw = serde_json::to_string(&next).map_err(magd_core::Error::from)?;
        apply(&mut cfg, "--k/--alpha/--beta", "propagation", &raw)?;
    }
    if let Some(e) = args.epochs {
        if e < cfg.train.patience {
            apply(&mut cfg, "--epochs", "train.patience", &e.to_string())?;
        }
        apply(&mut cfg, "--epochs", "train.epochs", &e.to_string())?;
    }
    if let Some(lr) = args.lr {
        apply(&mut cfg, "--lr", "train.lr", &lr.to_string())?;
    }
    Ok(cfg)
}
