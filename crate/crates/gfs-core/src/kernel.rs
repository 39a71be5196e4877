//! Propagation-kernel similarity between graphs.
//!
//! Node states (label distributions and/or standardized attributes) are
//! propagated over the row-normalized adjacency; each iteration contributes a
//! sum of node-pair kernels, accumulated for `t_max` iterations into a raw
//! Gram matrix, then cosine-normalized into `[0, 1]`.
//!
//! Two node-kernel schemes are supported: `hashed` bins each state row with a
//! one-dimensional random-hyperplane hash per iteration (pair terms become
//! bucket-count inner products, linear in nodes), and `rbf` evaluates
//! `exp(-γ‖p_u − p_v‖²)` exactly (quadratic, used as a deterministic
//! cross-check). All kernel arithmetic is performed in `f64` regardless of
//! the model scalar type: bucket assignment is bit-sensitive and the cache
//! file format is double precision.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bytes::{
    read_exact_f64, read_u32, read_u64, read_u8, write_f64, write_u32, write_u64, write_u8,
};
use crate::error::{GfsError, Result};
use crate::graph::{Graph, GraphDataset};
use crate::scalar::Scalar;

/// Node-kernel scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelScheme {
    /// Locality-sensitive hash binning; node kernel is the hash-collision
    /// indicator. Pair terms are computed by bucket counting.
    Hashed,
    /// Gaussian node kernel, evaluated pairwise.
    Rbf,
}

impl KernelScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelScheme::Hashed => "hashed",
            KernelScheme::Rbf => "rbf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hashed" => Ok(KernelScheme::Hashed),
            "rbf" => Ok(KernelScheme::Rbf),
            other => Err(GfsError::InvalidConfig(format!(
                "unknown kernel scheme {other:?} (expected hashed or rbf)"
            ))),
        }
    }
}

/// State channel: label distributions or attribute vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Label,
    Attribute,
}

/// Propagation-kernel configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    /// Number of propagation iterations contributing to the kernel.
    pub t_max: usize,
    pub scheme: KernelScheme,
    /// Hash bin width for the label channel (hashed scheme).
    pub hash_width_label: f64,
    /// Hash bin width for the attribute channel (hashed scheme); attributes
    /// are standardized first, so 1.0 is a natural default.
    pub hash_width_attr: f64,
    /// RBF bandwidth; `None` defaults to 1/dim per channel.
    pub rbf_gamma: Option<f64>,
    pub seed: u64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            t_max: 5,
            scheme: KernelScheme::Hashed,
            hash_width_label: 1e-3,
            hash_width_attr: 1.0,
            rbf_gamma: None,
            seed: 0,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_max < 1 {
            return Err(GfsError::InvalidConfig("t_max must be >= 1".into()));
        }
        if self.hash_width_label <= 0.0 || self.hash_width_attr <= 0.0 {
            return Err(GfsError::InvalidConfig(
                "hash bin widths must be > 0".into(),
            ));
        }
        if let Some(g) = self.rbf_gamma {
            if g <= 0.0 {
                return Err(GfsError::InvalidConfig("rbf bandwidth must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Stable digest of the configuration, stored in model checkpoints so a
    /// cache/model mismatch is detectable.
    pub fn digest(&self) -> u64 {
        let mut bytes = Vec::new();
        write_u32(&mut bytes, self.t_max as u32);
        write_u8(&mut bytes, matches!(self.scheme, KernelScheme::Rbf) as u8);
        write_f64(&mut bytes, self.hash_width_label);
        write_f64(&mut bytes, self.hash_width_attr);
        write_f64(&mut bytes, self.rbf_gamma.unwrap_or(f64::NAN));
        write_u64(&mut bytes, self.seed);
        crate::bytes::fnv1a(&bytes)
    }
}

/// Node states after one propagation iteration: row `u` is the state of node
/// `u`. Label-channel rows are probability distributions; attribute-channel
/// rows are unconstrained reals.
#[derive(Debug, Clone)]
pub struct PropagationState {
    pub distributions: Array2<f64>,
    pub t: usize,
}

/// Per-iteration LSH parameters: one random direction and offset shared
/// dataset-wide, derived from the seed and iteration index only.
#[derive(Debug, Clone)]
pub struct HashParams {
    pub direction: Vec<f64>,
    pub offset: f64,
    pub width: f64,
}

impl HashParams {
    fn bin(&self, row: &[f64]) -> i64 {
        debug_assert_eq!(row.len(), self.direction.len());
        let dot: f64 = row.iter().zip(&self.direction).map(|(x, r)| x * r).sum();
        ((dot + self.offset) / self.width).floor() as i64
    }
}

fn channel_rng(seed: u64, channel: Channel, t: usize) -> ChaCha8Rng {
    let channel_id: u64 = match channel {
        Channel::Label => 1,
        Channel::Attribute => 2,
    };
    let mixed = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(channel_id.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(t as u64);
    ChaCha8Rng::seed_from_u64(mixed)
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniforms; keeps the dependency surface small.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn make_hash_params(seed: u64, channel: Channel, t: usize, dim: usize, width: f64) -> HashParams {
    let mut rng = channel_rng(seed, channel, t);
    let direction = (0..dim).map(|_| standard_normal(&mut rng)).collect();
    let offset = rng.gen::<f64>() * width;
    HashParams {
        direction,
        offset,
        width,
    }
}

/// Dataset-level kernel context: configuration plus the fitted preprocessing
/// (node-label alphabet, attribute standardization) and the per-iteration
/// hash parameters. Everything needed to evaluate the kernel on unseen
/// graphs, so rule bases embed it.
#[derive(Debug, Clone)]
pub struct KernelContext {
    config: KernelConfig,
    label_alphabet: Option<Vec<i64>>,
    attr_mean: Vec<f64>,
    attr_std: Vec<f64>,
    has_attr_channel: bool,
    label_hash: Vec<HashParams>,
    attr_hash: Vec<HashParams>,
}

impl KernelContext {
    /// Fits the context on a dataset: collects the node-label alphabet,
    /// standardization statistics, and derives hash parameters.
    pub fn fit<T: Scalar>(dataset: &GraphDataset<T>, config: KernelConfig) -> Result<Self> {
        config.validate()?;
        let all_labeled = dataset.graphs.iter().all(|g| g.node_labels().is_some());
        let any_labeled = dataset.graphs.iter().any(|g| g.node_labels().is_some());
        if any_labeled && !all_labeled {
            return Err(GfsError::InvalidConfig(
                "node labels present on some graphs but not all".into(),
            ));
        }
        let label_alphabet = if all_labeled {
            let mut alphabet: Vec<i64> = dataset
                .graphs
                .iter()
                .flat_map(|g| g.node_labels().unwrap().iter().copied())
                .collect();
            alphabet.sort_unstable();
            alphabet.dedup();
            Some(alphabet)
        } else {
            None
        };
        let has_attr_channel = dataset.has_attributes;
        if label_alphabet.is_none() && !has_attr_channel {
            return Err(GfsError::InvalidConfig(
                "dataset provides neither node labels nor attributes".into(),
            ));
        }

        let d_attr = if has_attr_channel {
            dataset.feature_dim
        } else {
            0
        };
        let (attr_mean, attr_std) = if has_attr_channel {
            let mut mean = vec![0.0f64; d_attr];
            let mut count = 0usize;
            for g in &dataset.graphs {
                for row in g.node_features().rows() {
                    for (j, x) in row.iter().enumerate() {
                        mean[j] += x.to_f64_lossless();
                    }
                }
                count += g.node_count();
            }
            for m in &mut mean {
                *m /= count as f64;
            }
            let mut var = vec![0.0f64; d_attr];
            for g in &dataset.graphs {
                for row in g.node_features().rows() {
                    for (j, x) in row.iter().enumerate() {
                        let d = x.to_f64_lossless() - mean[j];
                        var[j] += d * d;
                    }
                }
            }
            let std = var
                .iter()
                .map(|v| {
                    let s = (v / count as f64).sqrt();
                    if s < 1e-12 {
                        1.0
                    } else {
                        s
                    }
                })
                .collect();
            (mean, std)
        } else {
            (Vec::new(), Vec::new())
        };

        Ok(Self::assemble(
            config,
            label_alphabet,
            attr_mean,
            attr_std,
            has_attr_channel,
        ))
    }

    /// Rebuilds a context from its serialized pieces (checkpoint loading).
    pub(crate) fn assemble(
        config: KernelConfig,
        label_alphabet: Option<Vec<i64>>,
        attr_mean: Vec<f64>,
        attr_std: Vec<f64>,
        has_attr_channel: bool,
    ) -> Self {
        let label_hash = match &label_alphabet {
            Some(alphabet) => (1..=config.t_max)
                .map(|t| {
                    make_hash_params(
                        config.seed,
                        Channel::Label,
                        t,
                        alphabet.len(),
                        config.hash_width_label,
                    )
                })
                .collect(),
            None => Vec::new(),
        };
        let attr_hash = if has_attr_channel {
            (1..=config.t_max)
                .map(|t| {
                    make_hash_params(
                        config.seed,
                        Channel::Attribute,
                        t,
                        attr_mean.len(),
                        config.hash_width_attr,
                    )
                })
                .collect()
        } else {
            Vec::new()
        };
        Self {
            config,
            label_alphabet,
            attr_mean,
            attr_std,
            has_attr_channel,
            label_hash,
            attr_hash,
        }
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn has_channel(&self, channel: Channel) -> bool {
        match channel {
            Channel::Label => self.label_alphabet.is_some(),
            Channel::Attribute => self.has_attr_channel,
        }
    }

    pub fn label_alphabet(&self) -> Option<&[i64]> {
        self.label_alphabet.as_deref()
    }

    pub fn attr_stats(&self) -> (&[f64], &[f64]) {
        (&self.attr_mean, &self.attr_std)
    }

    /// The `(direction, offset, width)` hash parameters for iteration `t`
    /// (1-based), exposed so independent oracles can re-evaluate the hash.
    pub fn hash_params(&self, t: usize, channel: Channel) -> &HashParams {
        assert!(t >= 1 && t <= self.config.t_max, "t out of range");
        match channel {
            Channel::Label => &self.label_hash[t - 1],
            Channel::Attribute => &self.attr_hash[t - 1],
        }
    }

    fn rbf_gamma(&self, channel: Channel) -> f64 {
        if let Some(g) = self.config.rbf_gamma {
            return g;
        }
        let dim = match channel {
            Channel::Label => self.label_alphabet.as_ref().map_or(1, Vec::len),
            Channel::Attribute => self.attr_mean.len().max(1),
        };
        1.0 / dim as f64
    }

    /// Initial node states for one channel: one-hot label distributions, or
    /// standardized attribute rows.
    fn initial_state<T: Scalar>(&self, graph: &Graph<T>, channel: Channel) -> Array2<f64> {
        match channel {
            Channel::Label => {
                let alphabet = self
                    .label_alphabet
                    .as_ref()
                    .expect("label channel requested but not fitted");
                let labels = graph
                    .node_labels()
                    .expect("graph lacks node labels required by the kernel context");
                let m = alphabet.len();
                let mut p0 = Array2::zeros((graph.node_count(), m));
                for (u, &label) in labels.iter().enumerate() {
                    match alphabet.binary_search(&label) {
                        Ok(slot) => p0[[u, slot]] = 1.0,
                        // A label never seen at fit time carries no
                        // information: give it the uninformative uniform
                        // distribution so rows still sum to one.
                        Err(_) => {
                            for slot in 0..m {
                                p0[[u, slot]] = 1.0 / m as f64;
                            }
                        }
                    }
                }
                p0
            }
            Channel::Attribute => {
                assert!(self.has_attr_channel, "attribute channel not fitted");
                let d = self.attr_mean.len();
                let features = graph.node_features();
                assert_eq!(features.ncols(), d, "feature dimension mismatch");
                Array2::from_shape_fn((graph.node_count(), d), |(u, j)| {
                    (features[[u, j]].to_f64_lossless() - self.attr_mean[j]) / self.attr_std[j]
                })
            }
        }
    }

    /// Runs the propagation `p_{t+1} = T·p_t` with `T` the row-normalized
    /// adjacency (isolated nodes keep their state), returning states for
    /// `t = 0..=t_max`.
    pub fn propagate<T: Scalar>(
        &self,
        graph: &Graph<T>,
        channel: Channel,
    ) -> Vec<PropagationState> {
        assert!(graph.node_count() >= 1, "graph must have at least one node");
        let neighbors = graph.neighbor_lists();
        let mut states = Vec::with_capacity(self.config.t_max + 1);
        let mut current = self.initial_state(graph, channel);
        states.push(PropagationState {
            distributions: current.clone(),
            t: 0,
        });
        for t in 1..=self.config.t_max {
            let mut next = Array2::zeros(current.dim());
            for (u, nbrs) in neighbors.iter().enumerate() {
                if nbrs.is_empty() {
                    for j in 0..current.ncols() {
                        next[[u, j]] = current[[u, j]];
                    }
                } else {
                    let inv = 1.0 / nbrs.len() as f64;
                    for &v in nbrs {
                        for j in 0..current.ncols() {
                            next[[u, j]] += current[[v, j]] * inv;
                        }
                    }
                }
            }
            states.push(PropagationState {
                distributions: next.clone(),
                t,
            });
            current = next;
        }
        states
    }

    /// Single-channel node kernel on one iteration's state rows.
    ///
    /// Hashed scheme: 1 if the LSH bins match, else 0. RBF scheme:
    /// `exp(-γ‖p_u − p_v‖²)`. Panics on a dimension mismatch.
    pub fn node_kernel(&self, t: usize, channel: Channel, p_u: &[f64], p_v: &[f64]) -> f64 {
        assert_eq!(p_u.len(), p_v.len(), "node state dimension mismatch");
        match self.config.scheme {
            KernelScheme::Hashed => {
                let params = self.hash_params(t, channel);
                if params.bin(p_u) == params.bin(p_v) {
                    1.0
                } else {
                    0.0
                }
            }
            KernelScheme::Rbf => {
                let gamma = self.rbf_gamma(channel);
                let dist2: f64 = p_u.iter().zip(p_v).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * dist2).exp()
            }
        }
    }

    /// Per-node signature used by the hashed scheme: the pair of LSH bins
    /// (label, attribute) at one iteration, with `i64::MIN` marking an absent
    /// channel.
    fn signatures(&self, states: &GraphChannelStates, t: usize) -> Vec<(i64, i64)> {
        let n = states.node_count;
        let mut sigs = Vec::with_capacity(n);
        for u in 0..n {
            let label_bin = states.label.as_ref().map_or(i64::MIN, |s| {
                let row = s[t].distributions.row(u);
                self.hash_params(t, Channel::Label)
                    .bin(row.as_slice().unwrap())
            });
            let attr_bin = states.attr.as_ref().map_or(i64::MIN, |s| {
                let row = s[t].distributions.row(u);
                self.hash_params(t, Channel::Attribute)
                    .bin(row.as_slice().unwrap())
            });
            sigs.push((label_bin, attr_bin));
        }
        sigs
    }

    fn precompute<T: Scalar>(&self, graph: &Graph<T>) -> GraphKernelData {
        let states = GraphChannelStates {
            node_count: graph.node_count(),
            label: self
                .has_channel(Channel::Label)
                .then(|| self.propagate(graph, Channel::Label)),
            attr: self
                .has_channel(Channel::Attribute)
                .then(|| self.propagate(graph, Channel::Attribute)),
        };
        match self.config.scheme {
            KernelScheme::Hashed => {
                let buckets = (1..=self.config.t_max)
                    .map(|t| {
                        let mut counts: HashMap<(i64, i64), u64> = HashMap::new();
                        for sig in self.signatures(&states, t) {
                            *counts.entry(sig).or_insert(0) += 1;
                        }
                        counts
                    })
                    .collect();
                GraphKernelData::Hashed { buckets }
            }
            KernelScheme::Rbf => GraphKernelData::Rbf { states },
        }
    }

    fn pair_from_data(&self, a: &GraphKernelData, b: &GraphKernelData) -> f64 {
        match (a, b) {
            (GraphKernelData::Hashed { buckets: ba }, GraphKernelData::Hashed { buckets: bb }) => {
                // Integer collision counts: sum of c_a(bucket)·c_b(bucket),
                // order-independent by construction.
                let mut total: u64 = 0;
                for (ca, cb) in ba.iter().zip(bb) {
                    let (small, big) = if ca.len() <= cb.len() {
                        (ca, cb)
                    } else {
                        (cb, ca)
                    };
                    for (sig, &c1) in small {
                        if let Some(&c2) = big.get(sig) {
                            total += c1 * c2;
                        }
                    }
                }
                total as f64
            }
            (GraphKernelData::Rbf { states: sa }, GraphKernelData::Rbf { states: sb }) => {
                let mut total = 0.0f64;
                for t in 1..=self.config.t_max {
                    for u in 0..sa.node_count {
                        for v in 0..sb.node_count {
                            let mut k = 1.0f64;
                            if let (Some(la), Some(lb)) = (&sa.label, &sb.label) {
                                k *= self.node_kernel(
                                    t,
                                    Channel::Label,
                                    la[t].distributions.row(u).as_slice().unwrap(),
                                    lb[t].distributions.row(v).as_slice().unwrap(),
                                );
                            }
                            if let (Some(aa), Some(ab)) = (&sa.attr, &sb.attr) {
                                k *= self.node_kernel(
                                    t,
                                    Channel::Attribute,
                                    aa[t].distributions.row(u).as_slice().unwrap(),
                                    ab[t].distributions.row(v).as_slice().unwrap(),
                                );
                            }
                            total += k;
                        }
                    }
                }
                total
            }
            _ => unreachable!("mixed kernel data"),
        }
    }

    /// Raw pair kernel `Σ_{t=1..t_max} Σ_{u∈G_i} Σ_{v∈G_j} k(u, v)`,
    /// symmetric in its arguments.
    pub fn graph_pair_kernel<T: Scalar>(&self, g_i: &Graph<T>, g_j: &Graph<T>) -> f64 {
        let a = self.precompute(g_i);
        let b = self.precompute(g_j);
        self.pair_from_data(&a, &b)
    }

    /// Raw self-similarity `K(G, G)`; strictly positive (every node matches
    /// itself at every iteration).
    pub fn self_kernel<T: Scalar>(&self, g: &Graph<T>) -> f64 {
        let a = self.precompute(g);
        self.pair_from_data(&a, &a)
    }

    /// Full Gram matrix over a dataset. The upper triangle is computed once
    /// (in parallel) and mirrored; per-iteration hash parameters derive from
    /// the seed, so the result is independent of worker count.
    pub fn kernel_matrix<T: Scalar>(&self, dataset: &GraphDataset<T>) -> Result<KernelCache> {
        let n = dataset.len();
        let data: Vec<GraphKernelData> = dataset
            .graphs
            .par_iter()
            .map(|g| self.precompute(g))
            .collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (i..n)
                    .map(|j| self.pair_from_data(&data[i], &data[j]))
                    .collect()
            })
            .collect();
        let mut raw = Array2::zeros((n, n));
        for (i, row) in rows.iter().enumerate() {
            for (offset, &v) in row.iter().enumerate() {
                let j = i + offset;
                raw[[i, j]] = v;
                raw[[j, i]] = v;
            }
        }
        KernelCache::from_raw(raw)
    }
}

/// Propagated states of one graph for each available channel.
struct GraphChannelStates {
    node_count: usize,
    label: Option<Vec<PropagationState>>,
    attr: Option<Vec<PropagationState>>,
}

/// Precomputed per-graph payload for pair evaluation.
enum GraphKernelData {
    Hashed {
        buckets: Vec<HashMap<(i64, i64), u64>>,
    },
    Rbf {
        states: GraphChannelStates,
    },
}

/// Symmetric Gram matrix of raw pair kernels plus its cosine-normalized form
/// (`normalized[i][j] = raw[i][j] / √(raw[i][i]·raw[j][j])`).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCache {
    raw: Array2<f64>,
    normalized: Array2<f64>,
}

impl KernelCache {
    /// Validates symmetry and a strictly positive diagonal, then computes the
    /// normalized form (diagonal pinned to exactly 1).
    pub fn from_raw(raw: Array2<f64>) -> Result<Self> {
        let n = raw.nrows();
        assert_eq!(raw.ncols(), n, "gram matrix must be square");
        for i in 0..n {
            let diag = raw[[i, i]];
            if diag.is_nan() || diag <= 0.0 {
                return Err(GfsError::DegenerateKernel {
                    index: i,
                    value: diag,
                });
            }
            for j in (i + 1)..n {
                assert_eq!(raw[[i, j]], raw[[j, i]], "gram matrix must be symmetric");
            }
        }
        let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / raw[[i, i]].sqrt()).collect();
        let mut normalized = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                normalized[[i, j]] = if i == j {
                    1.0
                } else {
                    raw[[i, j]] * inv_sqrt[i] * inv_sqrt[j]
                };
            }
        }
        Ok(Self { raw, normalized })
    }

    pub fn len(&self) -> usize {
        self.raw.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.nrows() == 0
    }

    pub fn raw(&self) -> &Array2<f64> {
        &self.raw
    }

    pub fn normalized(&self) -> &Array2<f64> {
        &self.normalized
    }

    /// Serializes to a binary file: header (N, scheme, seed, remaining
    /// configuration) followed by the row-major double-precision lower
    /// triangle of the raw matrix.
    pub fn save(&self, path: &Path, config: &KernelConfig) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(b"GFSK");
        write_u32(&mut out, 1); // version
        write_u64(&mut out, self.len() as u64);
        write_u8(&mut out, matches!(config.scheme, KernelScheme::Rbf) as u8);
        write_u64(&mut out, config.seed);
        write_u32(&mut out, config.t_max as u32);
        write_f64(&mut out, config.hash_width_label);
        write_f64(&mut out, config.hash_width_attr);
        write_f64(&mut out, config.rbf_gamma.unwrap_or(f64::NAN));
        for i in 0..self.len() {
            for j in 0..=i {
                write_f64(&mut out, self.raw[[i, j]]);
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&out)?;
        Ok(())
    }

    /// Loads a cache file written by [`KernelCache::save`].
    pub fn load(path: &Path) -> Result<(Self, KernelConfig)> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cursor = &bytes[..];
        let bad = |message: &str| GfsError::FileFormat {
            kind: "kernel cache",
            message: message.to_string(),
        };
        let mut magic = [0u8; 4];
        cursor
            .read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != b"GFSK" {
            return Err(bad("bad magic"));
        }
        if read_u32(&mut cursor)? != 1 {
            return Err(bad("unsupported version"));
        }
        let n = read_u64(&mut cursor)? as usize;
        let scheme = if read_u8(&mut cursor)? == 1 {
            KernelScheme::Rbf
        } else {
            KernelScheme::Hashed
        };
        let seed = read_u64(&mut cursor)?;
        let t_max = read_u32(&mut cursor)? as usize;
        let hash_width_label = read_exact_f64(&mut cursor)?;
        let hash_width_attr = read_exact_f64(&mut cursor)?;
        let gamma = read_exact_f64(&mut cursor)?;
        let config = KernelConfig {
            t_max,
            scheme,
            hash_width_label,
            hash_width_attr,
            rbf_gamma: if gamma.is_nan() { None } else { Some(gamma) },
            seed,
        };
        let mut raw = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let v = read_exact_f64(&mut cursor)?;
                raw[[i, j]] = v;
                raw[[j, i]] = v;
            }
        }
        Ok((Self::from_raw(raw)?, config))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use ndarray::array;

    fn labeled_graph(n: usize, edges: &[(usize, usize)], labels: Vec<i64>) -> Graph<f64> {
        let features = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64 * 0.5 - 1.0);
        Graph::new(n, edges, features, Some(labels), 0).unwrap()
    }

    fn two_graph_dataset() -> GraphDataset<f64> {
        let g1 = labeled_graph(2, &[(0, 1)], vec![0, 1]);
        let g2 = labeled_graph(3, &[(0, 1), (1, 2)], vec![0, 1, 1]);
        GraphDataset::new("kern", vec![g1, g2], 1, true).unwrap()
    }

    #[test]
    fn edgeless_graph_states_are_constant() {
        let ds = two_graph_dataset();
        let ctx = KernelContext::fit(&ds, KernelConfig::default()).unwrap();
        let iso = labeled_graph(2, &[], vec![0, 1]);
        let states = ctx.propagate(&iso, Channel::Label);
        for state in &states {
            assert_eq!(state.distributions, states[0].distributions);
        }
    }

    #[test]
    fn single_edge_swaps_one_hot_states() {
        let ds = two_graph_dataset();
        let ctx = KernelContext::fit(&ds, KernelConfig::default()).unwrap();
        let g = labeled_graph(2, &[(0, 1)], vec![0, 1]);
        let states = ctx.propagate(&g, Channel::Label);
        assert_eq!(states[0].distributions, array![[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(states[1].distributions, array![[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(states[2].distributions, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn propagation_matches_matrix_power_oracle() {
        // Dense oracle: T³·p0 with T the row-normalized adjacency.
        let ds = two_graph_dataset();
        let ctx = KernelContext::fit(&ds, KernelConfig::default()).unwrap();
        let g = labeled_graph(3, &[(0, 1), (1, 2)], vec![0, 1, 0]);
        let states = ctx.propagate(&g, Channel::Label);
        let t_mat = array![[0.0, 1.0, 0.0], [0.5, 0.0, 0.5], [0.0, 1.0, 0.0]];
        let mut expected = states[0].distributions.clone();
        for _ in 0..3 {
            expected = t_mat.dot(&expected);
        }
        let got = &states[3].distributions;
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn label_rows_stay_stochastic() {
        let ds = two_graph_dataset();
        let ctx = KernelContext::fit(&ds, KernelConfig::default()).unwrap();
        let g = labeled_graph(4, &[(0, 1), (1, 2), (2, 3), (0, 3)], vec![0, 1, 1, 0]);
        for state in ctx.propagate(&g, Channel::Label) {
            for row in state.distributions.rows() {
                let sum: f64 = row.sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn node_kernel_identity_and_limits() {
        let ds = two_graph_dataset();
        let hashed = KernelContext::fit(&ds, KernelConfig::default()).unwrap();
        let p = [0.25, 0.75];
        assert_eq!(hashed.node_kernel(1, Channel::Label, &p, &p), 1.0);

        let rbf_cfg = KernelConfig {
            scheme: KernelScheme::Rbf,
            rbf_gamma: Some(1e-12),
            ..KernelConfig::default()
        };
        let rbf = KernelContext::fit(&ds, rbf_cfg).unwrap();
        assert_eq!(rbf.node_kernel(1, Channel::Label, &p, &p), 1.0);
        // γ→0 sends every pair kernel to 1.
        let q = [0.9, 0.1];
        assert!((rbf.node_kernel(1, Channel::Label, &p, &q) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn hash_bin_matches_scalar_oracle() {
        let ds = two_graph_dataset();
        let cfg = KernelConfig {
            hash_width_label: 1.0,
            ..KernelConfig::default()
        };
        let ctx = KernelContext::fit(&ds, cfg).unwrap();
        let params = ctx.hash_params(2, Channel::Label);
        let p_u = [0.2, 0.8];
        let p_v = [0.25, 0.75];
        // Scalar oracle: evaluate r·p + b by hand and compare floors.
        let hash = |p: &[f64]| -> i64 {
            let dot = params.direction[0] * p[0] + params.direction[1] * p[1];
            ((dot + params.offset) / params.width).floor() as i64
        };
        let expected = (hash(&p_u) == hash(&p_v)) as u8 as f64;
        assert_eq!(ctx.node_kernel(2, Channel::Label, &p_u, &p_v), expected);
    }

    #[test]
    fn single_node_self_kernel_is_t_max() {
        let g = labeled_graph(1, &[], vec![0]);
        let ds = GraphDataset::new("one", vec![g.clone()], 1, true).unwrap();
        for scheme in [KernelScheme::Hashed, KernelScheme::Rbf] {
            let ctx = KernelContext::fit(
                &ds,
                KernelConfig {
                    scheme,
                    ..KernelConfig::default()
                },
            )
            .unwrap();
            assert_eq!(ctx.self_kernel(&g), 5.0);
        }
    }

    #[test]
    fn pair_kernel_is_symmetric() {
        let ds = two_graph_dataset();
        for scheme in [KernelScheme::Hashed, KernelScheme::Rbf] {
            let ctx = KernelContext::fit(
                &ds,
                KernelConfig {
                    scheme,
                    ..KernelConfig::default()
                },
            )
            .unwrap();
            let a = ctx.graph_pair_kernel(&ds.graphs[0], &ds.graphs[1]);
            let b = ctx.graph_pair_kernel(&ds.graphs[1], &ds.graphs[0]);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rbf_pair_matches_nested_loop_oracle() {
        // Naive triple sum over iterations and node pairs.
        let ds = two_graph_dataset();
        let cfg = KernelConfig {
            scheme: KernelScheme::Rbf,
            ..KernelConfig::default()
        };
        let ctx = KernelContext::fit(&ds, cfg).unwrap();
        let (g1, g2) = (&ds.graphs[0], &ds.graphs[1]);
        let l1 = ctx.propagate(g1, Channel::Label);
        let l2 = ctx.propagate(g2, Channel::Label);
        let a1 = ctx.propagate(g1, Channel::Attribute);
        let a2 = ctx.propagate(g2, Channel::Attribute);
        let gamma_l = 0.5; // 1/|alphabet| = 1/2
        let gamma_a = 0.5; // 1/d_in = 1/2
        let mut expected = 0.0;
        for t in 1..=5 {
            for u in 0..g1.node_count() {
                for v in 0..g2.node_count() {
                    let dl: f64 = (0..2)
                        .map(|j| {
                            let d = l1[t].distributions[[u, j]] - l2[t].distributions[[v, j]];
                            d * d
                        })
                        .sum();
                    let da: f64 = (0..2)
                        .map(|j| {
                            let d = a1[t].distributions[[u, j]] - a2[t].distributions[[v, j]];
                            d * d
                        })
                        .sum();
                    expected += (-gamma_l * dl).exp() * (-gamma_a * da).exp();
                }
            }
        }
        let got = ctx.graph_pair_kernel(g1, g2);
        assert!(
            (got - expected).abs() <= 1e-12 * expected.abs().max(1.0),
            "{got} vs {expected}"
        );
    }

    #[test]
    fn kernel_matrix_single_graph_normalizes_to_one() {
        let g = labeled_graph(1, &[], vec![0]);
        let ds = GraphDataset::new("one", vec![g], 1, true).unwrap();
        let ctx = KernelContext::fit(&ds, KernelConfig::default()).unwrap();
        let cache = ctx.kernel_matrix(&ds).unwrap();
        assert_eq!(cache.normalized(), &array![[1.0]]);
    }

    #[test]
    fn duplicated_graph_normalizes_to_one() {
        let g = labeled_graph(3, &[(0, 1), (1, 2)], vec![0, 1, 0]);
        let ds = GraphDataset::new("dup", vec![g.clone(), g], 1, true).unwrap();
        let ctx = KernelContext::fit(&ds, KernelConfig::default()).unwrap();
        let cache = ctx.kernel_matrix(&ds).unwrap();
        assert!((cache.normalized()[[0, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hashed_accumulation_is_monotone_in_t_max() {
        let ds = two_graph_dataset();
        let mut last = 0.0;
        for t_max in 1..=6 {
            let ctx = KernelContext::fit(
                &ds,
                KernelConfig {
                    t_max,
                    ..KernelConfig::default()
                },
            )
            .unwrap();
            let v = ctx.graph_pair_kernel(&ds.graphs[0], &ds.graphs[1]);
            assert!(v >= last, "t_max={t_max}: {v} < {last}");
            last = v;
        }
    }

    #[test]
    fn identical_seed_reproduces_cache_exactly() {
        let ds = two_graph_dataset();
        let ctx1 = KernelContext::fit(&ds, KernelConfig::default()).unwrap();
        let ctx2 = KernelContext::fit(&ds, KernelConfig::default()).unwrap();
        let c1 = ctx1.kernel_matrix(&ds).unwrap();
        let c2 = ctx2.kernel_matrix(&ds).unwrap();
        assert_eq!(c1.raw(), c2.raw());
    }

    #[test]
    fn save_load_round_trip_bit_exact() {
        let ds = two_graph_dataset();
        let ctx = KernelContext::fit(&ds, KernelConfig::default()).unwrap();
        let cache = ctx.kernel_matrix(&ds).unwrap();
        let path = std::env::temp_dir().join(format!("gfs-kernel-{}.bin", std::process::id()));
        cache.save(&path, ctx.config()).unwrap();
        let (loaded, config) = KernelCache::load(&path).unwrap();
        assert_eq!(&loaded, &cache);
        assert_eq!(&config, ctx.config());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn from_raw_rejects_non_positive_diagonal() {
        let raw = array![[1.0, 0.5], [0.5, 0.0]];
        assert!(matches!(
            KernelCache::from_raw(raw).unwrap_err(),
            GfsError::DegenerateKernel { index: 1, .. }
        ));
    }
}
