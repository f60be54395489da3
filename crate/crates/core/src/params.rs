//! Named parameter sets: shared plumbing for optimizers and checkpoints.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::numerics::DenseMatrix;

/// A fixed, ordered collection of named tensors.
pub trait ParamSet {
    fn named(&self) -> Vec<(String, &DenseMatrix)>;
    fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix>;

    fn zero(&mut self) {
        self.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
    }

    fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.data().len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    /// `self += other`, tensor by tensor (same layout required).
    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let src: Vec<&DenseMatrix> = other.named().into_iter().map(|(_, t)| t).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            dst.data_mut()
                .iter_mut()
                .zip(s.data())
                .for_each(|(a, b)| *a += b);
        }
    }
}

pub fn prefixed<'a>(prefix: &str, inner: Vec<(String, &'a DenseMatrix)>) -> Vec<(String, &'a DenseMatrix)> {
    inner
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

pub const PARAMS_MANIFEST: &str = "params_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsManifest {
    pub seed: u64,
    pub config_hash: String,
    pub tensors: Vec<TensorEntry>,
}

/// Writes every tensor as a MAGF file plus `params_manifest.json`.
pub fn save_checkpoint(dir: &Path, params: &impl ParamSet, seed: u64, config_hash: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::storage(dir, e))?;
    let mut tensors = Vec::new();
    for (k, (name, t)) in params.named().into_iter().enumerate() {
        let file = format!("p{k:03}.magf");
        io::write_magf(&dir.join(&file), t, io::Dtype::F64)?;
        tensors.push(TensorEntry {
            name,
            file,
            rows: t.rows(),
            cols: t.cols(),
        });
    }
    let manifest = ParamsManifest {
        seed,
        config_hash: config_hash.to_string(),
        tensors,
    };
    let p = dir.join(PARAMS_MANIFEST);
    fs::write(&p, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::storage(&p, e))
}

/// Loads tensors into `params`, which must already have the saved layout.
pub fn load_checkpoint(dir: &Path, params: &mut impl ParamSet) -> Result<ParamsManifest> {
    let p = dir.join(PARAMS_MANIFEST);
    let text = fs::read(&p).map_err(|e| Error::storage(&p, e))?;
    let manifest: ParamsManifest = serde_json::from_slice(&text)?;
    let names: Vec<(String, (usize, usize))> = params
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.shape()))
        .collect();
    if names.len() != manifest.tensors.len() {
        return Err(Error::Consistency(format!(
            "checkpoint has {} tensors, model expects {}",
            manifest.tensors.len(),
            names.len()
        )));
    }
    let mut loaded = Vec::with_capacity(names.len());
    for ((name, shape), entry) in names.iter().zip(&manifest.tensors) {
        if *name != entry.name || *shape != (entry.rows, entry.cols) {
            return Err(Error::Consistency(format!(
                "checkpoint tensor {} {:?} does not match model tensor {name} {shape:?}",
                entry.name,
                (entry.rows, entry.cols)
            )));
        }
        loaded.push(io::read_magf(&dir.join(&entry.file))?);
    }
    for (dst, src) in params.tensors_mut().into_iter().zip(loaded) {
        *dst = src;
    }
    Ok(manifest)
}
