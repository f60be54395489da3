use crate::error::{Error, Result};
use crate::mag::Modality;
use crate::numerics::DenseMatrix;

/// Hop-indexed stack of propagated features for one modality; `hops[0]` is
/// the input feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    modality: Modality,
    hops: Vec<DenseMatrix>,
}

impl Trajectory {
    pub fn new(modality: Modality, hops: Vec<DenseMatrix>) -> Result<Self> {
        let Some(first) = hops.first() else {
            return Err(Error::Shape("trajectory needs at least one hop".into()));
        };
        let shape = first.shape();
        for (k, h) in hops.iter().enumerate() {
            if h.shape() != shape {
                return Err(Error::Shape(format!(
                    "hop {k} is {:?}, hop 0 is {shape:?}",
                    h.shape()
                )));
            }
            if !h.is_finite() {
                return Err(Error::NonFinite {
                    hop: k,
                    modality: modality.tag(),
                });
            }
        }
        Ok(Self { modality, hops })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn hops(&self) -> &[DenseMatrix] {
        &self.hops
    }

    pub fn hop(&self, k: usize) -> &DenseMatrix {
        &self.hops[k]
    }

    /// Number of hop slices (`K + 1`).
    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    /// Propagation depth `K`.
    pub fn depth(&self) -> usize {
        self.hops.len() - 1
    }

    pub fn n(&self) -> usize {
        self.hops[0].rows()
    }

    pub fn d(&self) -> usize {
        self.hops[0].cols()
    }

    /// Row `node` of every hop, stacked hop-major into a `(K+1)·d` buffer.
    pub fn node_block(&self, node: usize, out: &mut [f64]) {
        let d = self.d();
        for (k, h) in self.hops.iter().enumerate() {
            out[k * d..(k + 1) * d].copy_from_slice(h.row(node));
        }
    }

    /// Same trajectory restricted to (and reordered by) `nodes`.
    pub fn select_nodes(&self, nodes: &[usize]) -> Trajectory {
        Trajectory {
            modality: self.modality,
            hops: self.hops.iter().map(|h| h.select_rows(nodes)).collect(),
        }
    }
}
