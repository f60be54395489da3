//! Multimodal attributed graph: shared topology, one feature matrix per
//! modality, optional labels and splits, plus the propagation config.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::numerics::{orthonormal_columns, CsrMatrix, DenseMatrix};
use crate::seed;

/// The two modalities handled by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "t")]
    Text,
    #[serde(rename = "i")]
    Image,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::Text, Modality::Image];

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Text => "t",
            Modality::Image => "i",
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Text => Modality::Image,
            Modality::Image => Modality::Text,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Disjoint train/validation/test node sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self> {
        let s = Self {
            train,
            val,
            test,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Config(format!("split fractions must be positive, got {f:?}")));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must sum to 1, got {f:?}")));
        }
        Ok(())
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 0,
        }
    }
}

/// Multimodal attributed graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Mag {
    adjacency: CsrMatrix,
    features_t: DenseMatrix,
    features_i: DenseMatrix,
    labels: Option<Vec<Option<usize>>>,
    splits: Option<Splits>,
    self_loops: bool,
}

impl Mag {
    /// Builds a graph from raw (possibly directed, duplicated) pairs. Edges
    /// are symmetrized, deduplicated and stripped of self-loops.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        features_t: DenseMatrix,
        features_i: DenseMatrix,
        labels: Option<Vec<Option<usize>>>,
    ) -> Result<Self> {
        let mut trip = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Consistency(format!(
                    "edge ({u}, {v}) references a node outside 0..{n}"
                )));
            }
            if u != v {
                trip.push((u, v, 1.0));
                trip.push((v, u, 1.0));
            }
        }
        let summed = CsrMatrix::from_triplets(n, n, trip)?;
        let adjacency = summed.map_values(|_, _, _| 1.0);
        Self::new(adjacency, features_t, features_i, labels)
    }

    /// Validating constructor over an already-built adjacency.
    pub fn new(
        adjacency: CsrMatrix,
        features_t: DenseMatrix,
        features_i: DenseMatrix,
        labels: Option<Vec<Option<usize>>>,
    ) -> Result<Self> {
        let n = adjacency.rows();
        if adjacency.cols() != n {
            return Err(Error::Consistency("adjacency must be square".into()));
        }
        if !adjacency.is_symmetric(0.0) {
            return Err(Error::Consistency("adjacency must be symmetric".into()));
        }
        if (0..n).any(|i| adjacency.get(i, i) != 0.0) {
            return Err(Error::Consistency("adjacency has self-loops".into()));
        }
        for (name, f) in [("text", &features_t), ("image", &features_i)] {
            if f.rows() != n {
                return Err(Error::Consistency(format!(
                    "{name} features have {} rows but the graph has {n} nodes",
                    f.rows()
                )));
            }
            if !f.is_finite() {
                return Err(Error::Consistency(format!("{name} features contain non-finite values")));
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Consistency(format!(
                    "{} labels for {n} nodes",
                    l.len()
                )));
            }
        }
        Ok(Self {
            adjacency,
            features_t,
            features_i,
            labels,
            splits: None,
            self_loops: false,
        })
    }

    pub fn n(&self) -> usize {
        self.adjacency.rows()
    }

    /// Number of undirected edges (self-loops counted once).
    pub fn num_edges(&self) -> usize {
        let loops = if self.self_loops { self.n() } else { 0 };
        (self.adjacency.nnz() - loops) / 2 + loops
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn features(&self, m: Modality) -> &DenseMatrix {
        match m {
            Modality::Text => &self.features_t,
            Modality::Image => &self.features_i,
        }
    }

    pub fn labels(&self) -> Option<&[Option<usize>]> {
        self.labels.as_deref()
    }

    pub fn splits(&self) -> Option<&Splits> {
        self.splits.as_ref()
    }

    pub fn has_self_loops(&self) -> bool {
        self.self_loops
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().flatten().max().map(|m| m + 1))
            .unwrap_or(0)
    }

    /// Undirected edges as `(u, v)` with `u < v`.
    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.adjacency.nnz() / 2);
        for u in 0..self.n() {
            for &v in self.adjacency.row(u).0 {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Adds a unit self-loop to every node.
    pub fn with_self_loops(mut self) -> Self {
        if self.self_loops {
            return self;
        }
        let n = self.n();
        let mut trip: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
        for r in 0..n {
            let (cols, vals) = self.adjacency.row(r);
            trip.extend(cols.iter().zip(vals).map(|(&c, &v)| (r, c, v)));
        }
        self.adjacency = CsrMatrix::from_triplets(n, n, trip).expect("indices in range");
        self.self_loops = true;
        self
    }

    pub fn with_features(mut self, features_t: DenseMatrix, features_i: DenseMatrix) -> Result<Self> {
        if features_t.rows() != self.n() || features_i.rows() != self.n() {
            return Err(Error::Consistency("replacement features have the wrong row count".into()));
        }
        self.features_t = features_t;
        self.features_i = features_i;
        Ok(self)
    }

    pub fn with_splits(mut self, splits: Splits) -> Result<Self> {
        let n = self.n();
        let mut seen = vec![false; n];
        for &v in splits.train.iter().chain(&splits.val).chain(&splits.test) {
            if v >= n {
                return Err(Error::Index(format!("split node {v} outside 0..{n}")));
            }
            if std::mem::replace(&mut seen[v], true) {
                return Err(Error::Consistency(format!("node {v} appears in two splits")));
            }
        }
        self.splits = Some(splits);
        Ok(self)
    }

    /// Writes `graph.tsv`, `feat_t.magf`, `feat_i.magf` and (if labeled)
    /// `labels.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::storage(dir, e))?;
        io::write_edge_list(&dir.join(GRAPH_FILE), self.n(), &self.edge_pairs())?;
        io::write_magf(&dir.join(FEAT_T_FILE), &self.features_t, io::Dtype::F64)?;
        io::write_magf(&dir.join(FEAT_I_FILE), &self.features_i, io::Dtype::F64)?;
        if let Some(l) = &self.labels {
            io::write_labels(&dir.join(LABELS_FILE), l)?;
        }
        Ok(())
    }

    /// Loads the layout written by [`Mag::save`].
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let labels = dir.join(LABELS_FILE);
        load_mag(
            &dir.join(GRAPH_FILE),
            &dir.join(FEAT_T_FILE),
            &dir.join(FEAT_I_FILE),
            labels.exists().then_some(labels.as_path()),
        )
    }
}

pub const GRAPH_FILE: &str = "graph.tsv";
pub const FEAT_T_FILE: &str = "feat_t.magf";
pub const FEAT_I_FILE: &str = "feat_i.magf";
pub const LABELS_FILE: &str = "labels.txt";

pub fn load_mag(
    graph_path: &Path,
    feat_t_path: &Path,
    feat_i_path: &Path,
    labels_path: Option<&Path>,
) -> Result<Mag> {
    let edges = io::read_edge_list(graph_path)?;
    let ft = io::read_magf(feat_t_path)?;
    let fi = io::read_magf(feat_i_path)?;
    let n = edges.node_count();
    let labels = labels_path.map(io::read_labels).transpose()?;
    Mag::from_edges(n, &edges.edges, ft, fi, labels)
}

/// Maps each modality to `d` columns with a frozen, seeded matrix with
/// orthonormal columns. Modalities already at `d` columns are untouched.
/// When both modalities share an input width they share the projection, so
/// cross-modal cosines stay meaningful.
pub fn project_features(mag: &Mag, d: usize, seed: u64) -> Result<Mag> {
    let (dt, di) = (mag.features_t.cols(), mag.features_i.cols());
    if d == 0 {
        return Err(Error::Config("projection dimension must be at least 1".into()));
    }
    if d > dt.min(di) {
        return Err(Error::Config(format!(
            "projection dimension {d} exceeds the smallest input dimension {}",
            dt.min(di)
        )));
    }
    let project = |m: &DenseMatrix, stream: u64| -> Result<DenseMatrix> {
        if m.cols() == d {
            return Ok(m.clone());
        }
        let mut rng = seed::rng(seed::derive(seed, stream));
        let w = orthonormal_columns(m.cols(), d, &mut rng)?;
        m.matmul(&w)
    };
    let ft = project(&mag.features_t, 0)?;
    let fi = project(&mag.features_i, if dt == di { 0 } else { 1 })?;
    mag.clone().with_features(ft, fi)
}

/// Seeded train/val/test split over labeled nodes. When there are at least
/// `3·C` labeled nodes, classes are shuffled separately and interleaved so
/// every prefix of the ordering is close to class-balanced.
pub fn make_splits(mag: &Mag, spec: &SplitSpec) -> Result<Mag> {
    spec.validate()?;
    let labels = mag
        .labels()
        .ok_or_else(|| Error::Config("splits require labels".into()))?;
    let labeled: Vec<usize> = (0..mag.n()).filter(|&v| labels[v].is_some()).collect();
    if labeled.is_empty() {
        return Err(Error::Config("no labeled nodes to split".into()));
    }
    let mut rng = seed::rng(spec.seed);
    let c = mag.num_classes();
    let order: Vec<usize> = if labeled.len() >= 3 * c {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
        for &v in &labeled {
            by_class[labels[v].unwrap()].push(v);
        }
        for b in by_class.iter_mut() {
            b.shuffle(&mut rng);
        }
        let longest = by_class.iter().map(Vec::len).max().unwrap_or(0);
        let mut order = Vec::with_capacity(labeled.len());
        for k in 0..longest {
            order.extend(by_class.iter().filter_map(|b| b.get(k).copied()));
        }
        order
    } else {
        let mut l = labeled.clone();
        l.shuffle(&mut rng);
        l
    };
    let total = order.len();
    let n_train = (spec.train * total as f64).round() as usize;
    let n_val = ((spec.val * total as f64).round() as usize).min(total - n_train);
    let splits = Splits {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    };
    mag.clone().with_splits(splits)
}

/// Propagation coefficients and depth; `alpha + beta + gamma = 1` per modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawPropagationConfig")]
pub struct PropagationConfig {
    pub k: usize,
    pub alpha_t: f64,
    pub beta_t: f64,
    pub gamma_t: f64,
    pub alpha_i: f64,
    pub beta_i: f64,
    pub gamma_i: f64,
    pub tolerance: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPropagationConfig {
    k: usize,
    alpha_t: f64,
    beta_t: f64,
    gamma_t: f64,
    alpha_i: f64,
    beta_i: f64,
    gamma_i: f64,
    #[serde(default = "default_tolerance")]
    tolerance: f64,
}

fn default_tolerance() -> f64 {
    1e-12
}

impl TryFrom<RawPropagationConfig> for PropagationConfig {
    type Error = Error;

    fn try_from(r: RawPropagationConfig) -> Result<Self> {
        let cfg = PropagationConfig {
            k: r.k,
            alpha_t: r.alpha_t,
            beta_t: r.beta_t,
            gamma_t: r.gamma_t,
            alpha_i: r.alpha_i,
            beta_i: r.beta_i,
            gamma_i: r.gamma_i,
            tolerance: r.tolerance,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl PropagationConfig {
    /// Per-modality `(alpha, beta, gamma)` triples for text and image.
    pub fn new(k: usize, text: (f64, f64, f64), image: (f64, f64, f64)) -> Result<Self> {
        let cfg = Self {
            k,
            alpha_t: text.0,
            beta_t: text.1,
            gamma_t: text.2,
            alpha_i: image.0,
            beta_i: image.1,
            gamma_i: image.2,
            tolerance: default_tolerance(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Same `(alpha, beta)` for both modalities; `gamma = 1 - alpha - beta`.
    pub fn shared(k: usize, alpha: f64, beta: f64) -> Result<Self> {
        let gamma = 1.0 - alpha - beta;
        Self::new(k, (alpha, beta, gamma), (alpha, beta, gamma))
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("propagation depth k must be at least 1".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance <= 1e-6) {
            return Err(Error::Config(format!(
                "simplex tolerance must be in (0, 1e-6], got {}",
                self.tolerance
            )));
        }
        for m in Modality::BOTH {
            let (a, b, g) = self.coefficients(m);
            if [a, b, g].iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::Config(format!(
                    "coefficients for modality {m} must be finite and nonnegative, got ({a}, {b}, {g})"
                )));
            }
            if (a + b + g - 1.0).abs() > self.tolerance {
                return Err(Error::Config(format!(
                    "coefficients for modality {m} must sum to 1, got {}",
                    a + b + g
                )));
            }
        }
        Ok(())
    }

    pub fn coefficients(&self, m: Modality) -> (f64, f64, f64) {
        match m {
            Modality::Text => (self.alpha_t, self.beta_t, self.gamma_t),
            Modality::Image => (self.alpha_i, self.beta_i, self.gamma_i),
        }
    }

    /// Contraction factor `max(alpha_t + beta_t, alpha_i + beta_i)`.
    pub fn rho(&self) -> f64 {
        (self.alpha_t + self.beta_t).max(self.alpha_i + self.beta_i)
    }

    pub fn max_gamma(&self) -> f64 {
        self.gamma_t.max(self.gamma_i)
    }

    pub fn with_k(mut self, k: usize) -> Result<Self> {
        self.k = k;
        self.validate()?;
        Ok(self)
    }
}
