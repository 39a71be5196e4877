//! Graph consequent processing units and the fused decision function.
//!
//! Every rule's consequent has the same shape: three GNN layers (GCN,
//! single-head GAT, or GraphSAGE with GCN-style aggregation), a sum readout,
//! and a three-layer MLP producing per-graph logits. The fused model output
//! is the firing-strength-weighted sum of the per-rule logits; class
//! probabilities are the row softmax of the fused logits.

use std::io::Read;
use std::path::Path;
use std::rc::Rc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::antecedent::RuleBase;
use crate::autodiff::{Parameter, Value};
use crate::bytes::{
    read_exact_f64, read_i64, read_str, read_u32, read_u64, read_u8, write_f64, write_i64,
    write_str, write_u32, write_u64, write_u8,
};
use crate::error::{GfsError, Result};
use crate::graph::{BatchedGraph, Graph};
use crate::kernel::{Channel, KernelConfig, KernelContext, KernelScheme};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

/// LeakyReLU negative slope used in attention scoring.
const ATTENTION_SLOPE: f64 = 0.2;

/// Which GNN realizes the aggregation stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GnnVariant {
    Gcn,
    Gat,
    Sage,
}

impl GnnVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            GnnVariant::Gcn => "gcn",
            GnnVariant::Gat => "gat",
            GnnVariant::Sage => "sage",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(GnnVariant::Gcn),
            "gat" => Ok(GnnVariant::Gat),
            "sage" | "graphsage" => Ok(GnnVariant::Sage),
            other => Err(GfsError::InvalidConfig(format!(
                "unknown variant {other:?} (expected gcn, gat or sage)"
            ))),
        }
    }
}

/// Layer widths of one model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub d_in: usize,
    pub d_h: usize,
    pub d_mlp: usize,
    pub num_classes: usize,
}

/// Optional GraphSAGE neighborhood sampling (off by default; full
/// neighborhoods reproduce GCN aggregation exactly).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SageSampling {
    pub neighbors: usize,
    pub seed: u64,
}

/// Parameters of one rule's consequent unit.
pub struct GcpuParams<T: Scalar> {
    pub variant: GnnVariant,
    /// Three GNN weight matrices: d_in×d_h, d_h×d_h, d_h×d_h.
    pub gnn_weights: Vec<Parameter<T>>,
    /// Three attention vectors of shape (2·d_h)×1; empty unless GAT.
    pub gat_attention: Vec<Parameter<T>>,
    /// Three MLP weight matrices: d_h×d_mlp, d_mlp×d_mlp, d_mlp×C.
    pub mlp_weights: Vec<Parameter<T>>,
    /// Three bias rows matching the MLP widths.
    pub mlp_biases: Vec<Parameter<T>>,
    pub sage_sampling: Option<SageSampling>,
}

fn glorot<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| {
        T::of((rng.gen::<f64>() * 2.0 - 1.0) * bound)
    })
}

impl<T: Scalar> GcpuParams<T> {
    /// Fresh parameters for rule `rule`: Glorot-uniform weights, zero biases.
    pub fn init(rule: usize, variant: GnnVariant, dims: ModelDims, rng: &mut ChaCha8Rng) -> Self {
        let widths = [
            (dims.d_in, dims.d_h),
            (dims.d_h, dims.d_h),
            (dims.d_h, dims.d_h),
        ];
        let gnn_weights = widths
            .iter()
            .enumerate()
            .map(|(l, &(r, c))| {
                Parameter::new(format!("rule{rule}.gnn{l}.weight"), glorot(rng, r, c))
            })
            .collect();
        let gat_attention = if variant == GnnVariant::Gat {
            (0..3)
                .map(|l| {
                    Parameter::new(
                        format!("rule{rule}.gat{l}.attention"),
                        glorot(rng, 2 * dims.d_h, 1),
                    )
                })
                .collect()
        } else {
            Vec::new()
        };
        let mlp_dims = [
            (dims.d_h, dims.d_mlp),
            (dims.d_mlp, dims.d_mlp),
            (dims.d_mlp, dims.num_classes),
        ];
        let mut mlp_weights = Vec::with_capacity(3);
        let mut mlp_biases = Vec::with_capacity(3);
        for (l, &(r, c)) in mlp_dims.iter().enumerate() {
            mlp_weights.push(Parameter::new(
                format!("rule{rule}.mlp{l}.weight"),
                glorot(rng, r, c),
            ));
            mlp_biases.push(Parameter::new(
                format!("rule{rule}.mlp{l}.bias"),
                Array2::zeros((1, c)),
            ));
        }
        Self {
            variant,
            gnn_weights,
            gat_attention,
            mlp_weights,
            mlp_biases,
            sage_sampling: None,
        }
    }

    /// All trainable parameters, in a fixed order.
    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut out: Vec<&Parameter<T>> = self.gnn_weights.iter().collect();
        out.extend(self.gat_attention.iter());
        for (w, b) in self.mlp_weights.iter().zip(&self.mlp_biases) {
            out.push(w);
            out.push(b);
        }
        out
    }
}

/// Symmetric degree-normalized adjacency with self-loops,
/// `D̃^{-1/2}(A + I)D̃^{-1/2}`, kept sparse.
pub struct NormalizedAdjacency<T> {
    matrix: Rc<CsrMatrix<T>>,
}

impl<T: Scalar> NormalizedAdjacency<T> {
    pub fn matrix(&self) -> &Rc<CsrMatrix<T>> {
        &self.matrix
    }

    pub fn to_dense(&self) -> Array2<T> {
        self.matrix.to_dense()
    }
}

/// Builds `Â` for a batch: self-loops guarantee positive degrees.
pub fn normalize_adjacency<T: Scalar>(batch: &BatchedGraph<T>) -> NormalizedAdjacency<T> {
    let n = batch.total_nodes();
    let adj = &batch.block_adjacency;
    let mut degree = vec![T::one(); n]; // self-loop counts 1
    for (i, d) in degree.iter_mut().enumerate() {
        for (_, v) in adj.row_iter(i) {
            *d += v;
        }
    }
    let inv_sqrt: Vec<T> = degree.iter().map(|&d| T::one() / d.sqrt()).collect();
    let mut triplets = Vec::with_capacity(adj.nnz() + n);
    for i in 0..n {
        triplets.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
        for (j, v) in adj.row_iter(i) {
            triplets.push((i, j, v * inv_sqrt[i] * inv_sqrt[j]));
        }
    }
    NormalizedAdjacency {
        matrix: Rc::new(CsrMatrix::from_triplets(n, n, &triplets)),
    }
}

/// Attention neighborhoods as a boolean mask: graph neighbors plus self.
pub fn attention_mask<T: Scalar>(batch: &BatchedGraph<T>) -> Rc<Array2<bool>> {
    let n = batch.total_nodes();
    let mut mask = Array2::from_elem((n, n), false);
    for i in 0..n {
        mask[[i, i]] = true;
        for (j, _) in batch.block_adjacency.row_iter(i) {
            mask[[i, j]] = true;
        }
    }
    Rc::new(mask)
}

/// Three GCN layers: `H = σ(Â σ(Â σ(Â X W⁰) W¹) W²)`.
pub fn gcn_forward<T: Scalar>(
    adjacency: &NormalizedAdjacency<T>,
    x: &Value<T>,
    params: &GcpuParams<T>,
) -> Value<T> {
    let mut h = x.clone();
    for w in &params.gnn_weights {
        h = Value::sparse_matmul(adjacency.matrix(), &h.matmul(w.value())).relu();
    }
    h
}

/// Three single-head GAT layers. Per layer: scores
/// `e_ij = LeakyReLU(aᵀ[H_iW ‖ H_jW])` over neighbors-plus-self, row softmax
/// into attention coefficients, then `H' = σ(α·(HW))`.
pub fn gat_forward<T: Scalar>(
    mask: &Rc<Array2<bool>>,
    x: &Value<T>,
    params: &GcpuParams<T>,
) -> Value<T> {
    assert_eq!(params.gat_attention.len(), 3, "GAT needs attention vectors");
    let n = x.dim().0;
    let ones_row = Value::constant(Array2::ones((1, n)));
    let ones_col = Value::constant(Array2::ones((n, 1)));
    let slope = T::of(ATTENTION_SLOPE);
    let mut h = x.clone();
    for (w, a) in params.gnn_weights.iter().zip(&params.gat_attention) {
        let d_h = w.data().ncols();
        let hw = h.matmul(w.value());
        let a_src = a.value().slice_rows(0, d_h);
        let a_dst = a.value().slice_rows(d_h, d_h);
        let s_src = hw.matmul(&a_src); // n×1: aᵀ_src · (HW)_i
        let s_dst = hw.matmul(&a_dst);
        let scores = s_src
            .matmul(&ones_row)
            .add(&ones_col.matmul(&s_dst.transpose()))
            .leaky_relu(slope);
        let attention = scores.masked_row_softmax(mask);
        h = attention.matmul(&hw).relu();
    }
    h
}

/// Builds the sampled self-looped normalized adjacency for one SAGE layer:
/// each node keeps at most `neighbors` of its neighbors (chosen
/// deterministically from the sampling seed and layer index).
fn sampled_adjacency<T: Scalar>(
    batch: &BatchedGraph<T>,
    sampling: SageSampling,
    layer: usize,
) -> Rc<CsrMatrix<T>> {
    let n = batch.total_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed.wrapping_add(layer as u64));
    let mut triplets: Vec<(usize, usize, T)> = Vec::new();
    let mut kept: Vec<Vec<usize>> = Vec::with_capacity(n);
    for u in 0..n {
        let mut nbrs: Vec<usize> = batch.block_adjacency.row_iter(u).map(|(j, _)| j).collect();
        if nbrs.len() > sampling.neighbors {
            for pick in 0..sampling.neighbors {
                let swap = rng.gen_range(pick..nbrs.len());
                nbrs.swap(pick, swap);
            }
            nbrs.truncate(sampling.neighbors);
            nbrs.sort_unstable();
        }
        kept.push(nbrs);
    }
    let mut degree = vec![T::one(); n];
    for (u, nbrs) in kept.iter().enumerate() {
        degree[u] += T::of(nbrs.len() as f64);
    }
    let inv_sqrt: Vec<T> = degree.iter().map(|&d| T::one() / d.sqrt()).collect();
    for (u, nbrs) in kept.iter().enumerate() {
        triplets.push((u, u, inv_sqrt[u] * inv_sqrt[u]));
        for &v in nbrs {
            triplets.push((u, v, inv_sqrt[u] * inv_sqrt[v]));
        }
    }
    Rc::new(CsrMatrix::from_triplets(n, n, &triplets))
}

/// Three GraphSAGE layers with GCN-style aggregation. With sampling off the
/// full neighborhood is used and the result coincides with [`gcn_forward`].
pub fn sage_forward<T: Scalar>(
    batch: &BatchedGraph<T>,
    x: &Value<T>,
    params: &GcpuParams<T>,
) -> Value<T> {
    match params.sage_sampling {
        None => gcn_forward(&normalize_adjacency(batch), x, params),
        Some(sampling) => {
            let mut h = x.clone();
            for (layer, w) in params.gnn_weights.iter().enumerate() {
                let adj = sampled_adjacency(batch, sampling, layer);
                h = Value::sparse_matmul(&adj, &h.matmul(w.value())).relu();
            }
            h
        }
    }
}

/// Sum readout: per-graph sum of node feature rows.
pub fn sum_readout<T: Scalar>(h: &Value<T>, graph_index: &Rc<Vec<usize>>) -> Value<T> {
    h.segment_sum(graph_index)
}

fn mlp_forward<T: Scalar>(h: &Value<T>, params: &GcpuParams<T>) -> Value<T> {
    let mut out = h.clone();
    for (l, (w, b)) in params
        .mlp_weights
        .iter()
        .zip(&params.mlp_biases)
        .enumerate()
    {
        out = out.matmul(w.value()).add_row_broadcast(b.value());
        if l < 2 {
            out = out.relu();
        }
    }
    out
}

/// Shared per-batch structures, built once and reused by every rule.
struct BatchStructures<T: Scalar> {
    adjacency: Option<NormalizedAdjacency<T>>,
    mask: Option<Rc<Array2<bool>>>,
    segments: Rc<Vec<usize>>,
}

impl<T: Scalar> BatchStructures<T> {
    fn build(batch: &BatchedGraph<T>, variant: GnnVariant) -> Self {
        Self {
            adjacency: matches!(variant, GnnVariant::Gcn | GnnVariant::Sage)
                .then(|| normalize_adjacency(batch)),
            mask: matches!(variant, GnnVariant::Gat).then(|| attention_mask(batch)),
            segments: Rc::new(batch.graph_index.clone()),
        }
    }
}

fn gcpu_forward_with<T: Scalar>(
    batch: &BatchedGraph<T>,
    structures: &BatchStructures<T>,
    x: &Value<T>,
    params: &GcpuParams<T>,
) -> Value<T> {
    let h = match params.variant {
        GnnVariant::Gcn => gcn_forward(structures.adjacency.as_ref().unwrap(), x, params),
        GnnVariant::Gat => gat_forward(structures.mask.as_ref().unwrap(), x, params),
        GnnVariant::Sage => match params.sage_sampling {
            None => gcn_forward(structures.adjacency.as_ref().unwrap(), x, params),
            Some(_) => sage_forward(batch, x, params),
        },
    };
    mlp_forward(&sum_readout(&h, &structures.segments), params)
}

/// One rule's consequent on a batch: GNN aggregation, sum readout, MLP.
/// Returns per-graph logits (no final activation; probabilities are produced
/// at fusion).
pub fn gcpu_forward<T: Scalar>(batch: &BatchedGraph<T>, params: &GcpuParams<T>) -> Value<T> {
    let structures = BatchStructures::build(batch, params.variant);
    let x = Value::constant(batch.stacked_features.clone());
    gcpu_forward_with(batch, &structures, &x, params)
}

/// Per-column standardization of node features, fitted on the training
/// split and carried in the checkpoint. Raw attribute scales (atom
/// coordinates, for instance) otherwise saturate the softmax through the sum
/// readout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    /// Column means and standard deviations over every node of the dataset;
    /// near-constant columns keep unit scale.
    pub fn fit<T: Scalar>(dataset: &crate::graph::GraphDataset<T>) -> Self {
        let d = dataset.feature_dim;
        let mut mean = vec![0.0f64; d];
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
        let mut var = vec![0.0f64; d];
        for g in &dataset.graphs {
            for row in g.node_features().rows() {
                for (j, x) in row.iter().enumerate() {
                    let delta = x.to_f64_lossless() - mean[j];
                    var[j] += delta * delta;
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
        Self { mean, std }
    }

    pub fn apply<T: Scalar>(&self, features: &Array2<T>) -> Array2<T> {
        assert_eq!(
            features.ncols(),
            self.mean.len(),
            "scaler dimension mismatch"
        );
        Array2::from_shape_fn(features.dim(), |(i, j)| {
            T::of((features[[i, j]].to_f64_lossless() - self.mean[j]) / self.std[j])
        })
    }
}

/// The trained model: rule base plus one GCPU per rule.
pub struct GfsModel<T: Scalar> {
    pub rulebase: RuleBase<T>,
    pub gcpus: Vec<GcpuParams<T>>,
    pub dims: ModelDims,
    pub variant: GnnVariant,
    pub seed: u64,
    /// Input standardization applied before the consequent units.
    pub feature_scaler: Option<FeatureScaler>,
}

impl<T: Scalar> GfsModel<T> {
    /// Initializes K consequent units (one per rule) from `seed`.
    pub fn new(rulebase: RuleBase<T>, variant: GnnVariant, dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gcpus = (0..rulebase.num_rules())
            .map(|k| GcpuParams::init(k, variant, dims, &mut rng))
            .collect();
        Self {
            rulebase,
            gcpus,
            dims,
            variant,
            seed,
            feature_scaler: None,
        }
    }

    pub fn num_rules(&self) -> usize {
        self.gcpus.len()
    }

    /// Every trainable parameter of every rule, in checkpoint order.
    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        self.gcpus.iter().flat_map(|g| g.parameters()).collect()
    }

    pub fn zero_grads(&self) {
        for p in self.parameters() {
            p.zero_grad();
        }
    }
}

/// Fused decision function on a batch: per-rule logits combined with the
/// per-graph firing strengths (`strengths` is B×K, rows summing to one), plus
/// the row-softmax probabilities derived from the fused logits.
pub fn gfs_forward<T: Scalar>(
    batch: &BatchedGraph<T>,
    model: &GfsModel<T>,
    strengths: &Array2<T>,
) -> (Value<T>, Value<T>) {
    let b = batch.num_graphs();
    assert_eq!(
        strengths.dim(),
        (b, model.num_rules()),
        "strength matrix must be batch×rules"
    );
    let structures = BatchStructures::build(batch, model.variant);
    let features = match &model.feature_scaler {
        Some(scaler) => scaler.apply(&batch.stacked_features),
        None => batch.stacked_features.clone(),
    };
    let x = Value::constant(features);
    let c = model.dims.num_classes;
    let mut fused: Option<Value<T>> = None;
    for (k, gcpu) in model.gcpus.iter().enumerate() {
        let logits = gcpu_forward_with(batch, &structures, &x, gcpu);
        let weights = Array2::from_shape_fn((b, c), |(row, _)| strengths[[row, k]]);
        let weighted = logits.elementwise_mul(&Value::constant(weights));
        fused = Some(match fused {
            None => weighted,
            Some(acc) => acc.add(&weighted),
        });
    }
    let fused = fused.expect("model has at least one rule");
    let probabilities = fused.row_softmax();
    (fused, probabilities)
}

// --- checkpoint format ----------------------------------------------------

fn variant_tag(variant: GnnVariant) -> u8 {
    match variant {
        GnnVariant::Gcn => 0,
        GnnVariant::Gat => 1,
        GnnVariant::Sage => 2,
    }
}

fn variant_from_tag(tag: u8) -> Result<GnnVariant> {
    match tag {
        0 => Ok(GnnVariant::Gcn),
        1 => Ok(GnnVariant::Gat),
        2 => Ok(GnnVariant::Sage),
        other => Err(GfsError::FileFormat {
            kind: "checkpoint",
            message: format!("unknown variant tag {other}"),
        }),
    }
}

fn write_matrix<T: Scalar>(out: &mut Vec<u8>, m: &Array2<T>) {
    write_u32(out, m.nrows() as u32);
    write_u32(out, m.ncols() as u32);
    for &v in m.iter() {
        write_f64(out, v.to_f64_lossless());
    }
}

fn read_matrix<T: Scalar, R: Read>(r: &mut R) -> Result<Array2<T>> {
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let mut m = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            m[[i, j]] = T::of(read_exact_f64(r)?);
        }
    }
    Ok(m)
}

fn write_graph<T: Scalar>(out: &mut Vec<u8>, g: &Graph<T>) {
    write_u32(out, g.node_count() as u32);
    write_u32(out, g.graph_label() as u32);
    write_u32(out, g.edges().len() as u32);
    for &(u, v) in g.edges() {
        write_u32(out, u as u32);
        write_u32(out, v as u32);
    }
    write_matrix(out, g.node_features());
    match g.node_labels() {
        Some(labels) => {
            write_u8(out, 1);
            for &l in labels {
                write_i64(out, l);
            }
        }
        None => write_u8(out, 0),
    }
}

fn read_graph<T: Scalar, R: Read>(r: &mut R) -> Result<Graph<T>> {
    let n = read_u32(r)? as usize;
    let label = read_u32(r)? as usize;
    let edge_count = read_u32(r)? as usize;
    let mut edges = Vec::with_capacity(edge_count);
    for _ in 0..edge_count {
        let u = read_u32(r)? as usize;
        let v = read_u32(r)? as usize;
        edges.push((u, v));
    }
    let features = read_matrix(r)?;
    let labels = if read_u8(r)? == 1 {
        let mut l = Vec::with_capacity(n);
        for _ in 0..n {
            l.push(read_i64(r)?);
        }
        Some(l)
    } else {
        None
    };
    Graph::new(n, &edges, features, labels, label)
}

fn write_kernel_context(out: &mut Vec<u8>, ctx: &KernelContext) {
    let config = ctx.config();
    write_u32(out, config.t_max as u32);
    write_u8(out, matches!(config.scheme, KernelScheme::Rbf) as u8);
    write_f64(out, config.hash_width_label);
    write_f64(out, config.hash_width_attr);
    write_f64(out, config.rbf_gamma.unwrap_or(f64::NAN));
    write_u64(out, config.seed);
    match ctx.label_alphabet() {
        Some(alphabet) => {
            write_u8(out, 1);
            write_u32(out, alphabet.len() as u32);
            for &l in alphabet {
                write_i64(out, l);
            }
        }
        None => write_u8(out, 0),
    }
    if ctx.has_channel(Channel::Attribute) {
        let (mean, std) = ctx.attr_stats();
        write_u8(out, 1);
        write_u32(out, mean.len() as u32);
        for &m in mean {
            write_f64(out, m);
        }
        for &s in std {
            write_f64(out, s);
        }
    } else {
        write_u8(out, 0);
    }
}

fn read_kernel_context<R: Read>(r: &mut R) -> Result<KernelContext> {
    let t_max = read_u32(r)? as usize;
    let scheme = if read_u8(r)? == 1 {
        KernelScheme::Rbf
    } else {
        KernelScheme::Hashed
    };
    let hash_width_label = read_exact_f64(r)?;
    let hash_width_attr = read_exact_f64(r)?;
    let gamma = read_exact_f64(r)?;
    let seed = read_u64(r)?;
    let config = KernelConfig {
        t_max,
        scheme,
        hash_width_label,
        hash_width_attr,
        rbf_gamma: if gamma.is_nan() { None } else { Some(gamma) },
        seed,
    };
    let label_alphabet = if read_u8(r)? == 1 {
        let len = read_u32(r)? as usize;
        let mut alphabet = Vec::with_capacity(len);
        for _ in 0..len {
            alphabet.push(read_i64(r)?);
        }
        Some(alphabet)
    } else {
        None
    };
    let (attr_mean, attr_std, has_attr) = if read_u8(r)? == 1 {
        let dim = read_u32(r)? as usize;
        let mut mean = Vec::with_capacity(dim);
        for _ in 0..dim {
            mean.push(read_exact_f64(r)?);
        }
        let mut std = Vec::with_capacity(dim);
        for _ in 0..dim {
            std.push(read_exact_f64(r)?);
        }
        (mean, std, true)
    } else {
        (Vec::new(), Vec::new(), false)
    };
    Ok(KernelContext::assemble(
        config,
        label_alphabet,
        attr_mean,
        attr_std,
        has_attr,
    ))
}

impl<T: Scalar> GfsModel<T> {
    /// Serializes the model: header, named parameter blobs in row-major
    /// double precision, and the embedded rule base (prototype graph
    /// payloads included, so inference needs no training data). The byte
    /// stream is deterministic, giving bit-exact round-trips.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(b"GFSM");
        write_u32(&mut out, 1); // version
        write_u8(&mut out, variant_tag(self.variant));
        write_u32(&mut out, self.num_rules() as u32);
        write_u32(&mut out, self.dims.d_in as u32);
        write_u32(&mut out, self.dims.d_h as u32);
        write_u32(&mut out, self.dims.d_mlp as u32);
        write_u32(&mut out, self.dims.num_classes as u32);
        write_u64(&mut out, self.seed);
        write_u64(&mut out, self.rulebase.kernel().config().digest());
        match self.gcpus[0].sage_sampling {
            Some(s) => {
                write_u8(&mut out, 1);
                write_u32(&mut out, s.neighbors as u32);
                write_u64(&mut out, s.seed);
            }
            None => write_u8(&mut out, 0),
        }
        let params = self.parameters();
        write_u32(&mut out, params.len() as u32);
        for p in params {
            write_str(&mut out, p.name());
            write_matrix(&mut out, &p.data());
        }
        match &self.feature_scaler {
            Some(scaler) => {
                write_u8(&mut out, 1);
                write_u32(&mut out, scaler.mean.len() as u32);
                for &m in &scaler.mean {
                    write_f64(&mut out, m);
                }
                for &s in &scaler.std {
                    write_f64(&mut out, s);
                }
            }
            None => write_u8(&mut out, 0),
        }
        write_kernel_context(&mut out, self.rulebase.kernel());
        write_u32(&mut out, self.rulebase.num_rules() as u32);
        for k in 0..self.rulebase.num_rules() {
            write_u64(&mut out, self.rulebase.prototype_indices()[k] as u64);
            write_f64(&mut out, self.rulebase.prototype_self_kernels()[k]);
            write_graph(&mut out, self.rulebase.prototype(k));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Loads a checkpoint written by [`GfsModel::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut r = &bytes[..];
        let bad = |message: String| GfsError::FileFormat {
            kind: "checkpoint",
            message,
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header".into()))?;
        if &magic != b"GFSM" {
            return Err(bad("bad magic".into()));
        }
        if read_u32(&mut r)? != 1 {
            return Err(bad("unsupported version".into()));
        }
        let variant = variant_from_tag(read_u8(&mut r)?)?;
        let k = read_u32(&mut r)? as usize;
        let dims = ModelDims {
            d_in: read_u32(&mut r)? as usize,
            d_h: read_u32(&mut r)? as usize,
            d_mlp: read_u32(&mut r)? as usize,
            num_classes: read_u32(&mut r)? as usize,
        };
        let seed = read_u64(&mut r)?;
        let stored_digest = read_u64(&mut r)?;
        let sage_sampling = if read_u8(&mut r)? == 1 {
            Some(SageSampling {
                neighbors: read_u32(&mut r)? as usize,
                seed: read_u64(&mut r)?,
            })
        } else {
            None
        };
        let param_count = read_u32(&mut r)? as usize;
        let mut blobs = Vec::with_capacity(param_count);
        for _ in 0..param_count {
            let name = read_str(&mut r)?;
            let matrix: Array2<T> = read_matrix(&mut r)?;
            blobs.push((name, matrix));
        }
        let feature_scaler = if read_u8(&mut r)? == 1 {
            let dim = read_u32(&mut r)? as usize;
            let mut mean = Vec::with_capacity(dim);
            for _ in 0..dim {
                mean.push(read_exact_f64(&mut r)?);
            }
            let mut std = Vec::with_capacity(dim);
            for _ in 0..dim {
                std.push(read_exact_f64(&mut r)?);
            }
            Some(FeatureScaler { mean, std })
        } else {
            None
        };
        let kernel = read_kernel_context(&mut r)?;
        if kernel.config().digest() != stored_digest {
            return Err(bad("kernel config digest mismatch".into()));
        }
        let rule_count = read_u32(&mut r)? as usize;
        if rule_count != k {
            return Err(bad(format!("rule count {rule_count} != K {k}")));
        }
        let mut prototype_indices = Vec::with_capacity(k);
        let mut self_kernels = Vec::with_capacity(k);
        let mut prototypes = Vec::with_capacity(k);
        for _ in 0..k {
            prototype_indices.push(read_u64(&mut r)? as usize);
            self_kernels.push(read_exact_f64(&mut r)?);
            prototypes.push(read_graph(&mut r)?);
        }
        let rulebase = RuleBase::from_parts(prototypes, prototype_indices, kernel, self_kernels);

        let mut model = GfsModel::new(rulebase, variant, dims, seed);
        model.feature_scaler = feature_scaler;
        for gcpu in &mut model.gcpus {
            gcpu.sage_sampling = sage_sampling;
        }
        let params = model.parameters();
        if params.len() != blobs.len() {
            return Err(bad(format!(
                "parameter count mismatch: {} stored, {} expected",
                blobs.len(),
                params.len()
            )));
        }
        for (p, (name, matrix)) in params.iter().zip(blobs) {
            if p.name() != name {
                return Err(bad(format!(
                    "parameter name mismatch: {name:?} vs expected {:?}",
                    p.name()
                )));
            }
            if p.data().dim() != matrix.dim() {
                return Err(bad(format!("parameter {name:?} has wrong shape")));
            }
            p.set_data(matrix);
        }
        Ok(model)
    }
}
