//! Graph and dataset data model, block-diagonal batching, stratified splits.
//!
//! A [`Graph`] is one attributed undirected graph: symmetric 0/1 adjacency
//! with zero diagonal, an `n × d_in` node feature matrix, optional integer
//! node labels and a class label. A [`GraphDataset`] is an ordered collection
//! sharing one feature dimension and one class count.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GfsError, Result};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

/// One attributed undirected graph.
///
/// Adjacency is stored as a deduplicated edge list with `u < v`; accessors
/// materialize dense or CSR forms on demand. Self-loops are rejected at
/// construction (normalization adds them transiently where needed).
#[derive(Debug, Clone, PartialEq)]
pub struct Graph<T> {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    node_features: Array2<T>,
    node_labels: Option<Vec<i64>>,
    graph_label: usize,
}

impl<T: Scalar> Graph<T> {
    /// Builds a graph from an undirected edge list.
    ///
    /// Edges may be listed in either orientation and repeatedly; they are
    /// symmetrized and deduplicated. Errors on zero nodes, out-of-range
    /// endpoints, self-loops, or a feature matrix with the wrong row count.
    pub fn new(
        node_count: usize,
        edges: &[(usize, usize)],
        node_features: Array2<T>,
        node_labels: Option<Vec<i64>>,
        graph_label: usize,
    ) -> Result<Self> {
        if node_count == 0 {
            return Err(GfsError::EmptyGraph { graph: 0 });
        }
        if node_features.nrows() != node_count {
            return Err(GfsError::InvalidConfig(format!(
                "feature matrix has {} rows for {} nodes",
                node_features.nrows(),
                node_count
            )));
        }
        if let Some(labels) = &node_labels {
            if labels.len() != node_count {
                return Err(GfsError::InvalidConfig(format!(
                    "node label vector has {} entries for {} nodes",
                    labels.len(),
                    node_count
                )));
            }
        }
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(GfsError::NodeIdOutOfRange {
                    file: "<edges>".into(),
                    id: u.max(v) + 1,
                    max: node_count,
                });
            }
            if u == v {
                return Err(GfsError::SelfLoop { node: u });
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        canon.dedup();
        Ok(Self {
            node_count,
            edges: canon,
            node_features,
            node_labels,
            graph_label,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Undirected edges, deduplicated, with `u < v`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_features(&self) -> &Array2<T> {
        &self.node_features
    }

    pub fn node_labels(&self) -> Option<&[i64]> {
        self.node_labels.as_deref()
    }

    pub fn graph_label(&self) -> usize {
        self.graph_label
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.ncols()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(u, v)| u == node || v == node)
            .count()
    }

    /// Neighbor lists for every node.
    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Dense symmetric 0/1 adjacency with zero diagonal.
    pub fn dense_adjacency(&self) -> Array2<T> {
        let mut a = Array2::zeros((self.node_count, self.node_count));
        for &(u, v) in &self.edges {
            a[[u, v]] = T::one();
            a[[v, u]] = T::one();
        }
        a
    }

    /// CSR adjacency (both orientations stored, zero diagonal).
    pub fn csr_adjacency(&self) -> CsrMatrix<T> {
        let mut triplets = Vec::with_capacity(self.edges.len() * 2);
        for &(u, v) in &self.edges {
            triplets.push((u, v, T::one()));
            triplets.push((v, u, T::one()));
        }
        CsrMatrix::from_triplets(self.node_count, self.node_count, &triplets)
    }
}

/// Ordered collection of graphs with a shared feature dimension and class count.
#[derive(Debug, Clone)]
pub struct GraphDataset<T> {
    pub graphs: Vec<Graph<T>>,
    pub name: String,
    /// Node feature dimension, uniform across the dataset.
    pub feature_dim: usize,
    /// Number of categories; every graph label lies in `[0, num_classes)`.
    pub num_classes: usize,
    /// Whether node features came from real-valued attributes (as opposed to
    /// a one-hot encoding synthesized from node labels). Decides whether the
    /// propagation kernel gets an attribute channel.
    pub has_attributes: bool,
}

impl<T: Scalar> GraphDataset<T> {
    pub fn new(
        name: impl Into<String>,
        graphs: Vec<Graph<T>>,
        num_classes: usize,
        has_attributes: bool,
    ) -> Result<Self> {
        let name = name.into();
        if graphs.is_empty() {
            return Err(GfsError::InvalidConfig(format!("dataset {name} is empty")));
        }
        let feature_dim = graphs[0].feature_dim();
        for (i, g) in graphs.iter().enumerate() {
            if g.feature_dim() != feature_dim {
                return Err(GfsError::MixedFeatureDims {
                    expected: feature_dim,
                    graph: i,
                    got: g.feature_dim(),
                });
            }
            if g.graph_label() >= num_classes {
                return Err(GfsError::InvalidConfig(format!(
                    "graph {i} has label {} but dataset {name} has {num_classes} classes",
                    g.graph_label()
                )));
            }
        }
        Ok(Self {
            graphs,
            name,
            feature_dim,
            num_classes,
            has_attributes,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.graph_label()).collect()
    }

    /// Per-class sample counts (length `num_classes`).
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.num_classes];
        for g in &self.graphs {
            hist[g.graph_label()] += 1;
        }
        hist
    }

    /// New dataset holding clones of the graphs at `indices`, same metadata.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let graphs = indices.iter().map(|&i| self.graphs[i].clone()).collect();
        GraphDataset::new(
            self.name.clone(),
            graphs,
            self.num_classes,
            self.has_attributes,
        )
    }
}

/// Several graphs batched as one block-diagonal graph.
///
/// Nodes of different graphs share no edges; `graph_index` maps each stacked
/// node row back to its graph and is non-decreasing.
#[derive(Debug, Clone)]
pub struct BatchedGraph<T> {
    pub block_adjacency: CsrMatrix<T>,
    pub stacked_features: Array2<T>,
    pub graph_index: Vec<usize>,
    pub labels: Vec<usize>,
    /// Start offset of each graph's node block, plus the total as a sentinel.
    pub node_offsets: Vec<usize>,
}

impl<T: Scalar> BatchedGraph<T> {
    pub fn num_graphs(&self) -> usize {
        self.labels.len()
    }

    pub fn total_nodes(&self) -> usize {
        self.graph_index.len()
    }

    /// Splits a per-node row matrix back into per-graph blocks; exact inverse
    /// of stacking.
    pub fn unbatch_rows(&self, per_node: &Array2<T>) -> Vec<Array2<T>> {
        assert_eq!(per_node.nrows(), self.total_nodes(), "row count mismatch");
        (0..self.num_graphs())
            .map(|b| {
                per_node
                    .slice(ndarray::s![
                        self.node_offsets[b]..self.node_offsets[b + 1],
                        ..
                    ])
                    .to_owned()
            })
            .collect()
    }
}

/// Stacks graphs into one block-diagonal [`BatchedGraph`].
pub fn batch_graphs<T: Scalar>(graphs: &[&Graph<T>]) -> Result<BatchedGraph<T>> {
    if graphs.is_empty() {
        return Err(GfsError::InvalidConfig("cannot batch zero graphs".into()));
    }
    let d_in = graphs[0].feature_dim();
    for (i, g) in graphs.iter().enumerate() {
        if g.feature_dim() != d_in {
            return Err(GfsError::MixedFeatureDims {
                expected: d_in,
                graph: i,
                got: g.feature_dim(),
            });
        }
    }
    let total: usize = graphs.iter().map(|g| g.node_count()).sum();
    let mut features = Array2::zeros((total, d_in));
    let mut graph_index = Vec::with_capacity(total);
    let mut node_offsets = Vec::with_capacity(graphs.len() + 1);
    let mut triplets = Vec::new();
    let mut labels = Vec::with_capacity(graphs.len());
    let mut offset = 0usize;
    for (b, g) in graphs.iter().enumerate() {
        node_offsets.push(offset);
        for v in 0..g.node_count() {
            for (j, &x) in g.node_features().row(v).iter().enumerate() {
                features[[offset + v, j]] = x;
            }
            graph_index.push(b);
        }
        for &(u, v) in g.edges() {
            triplets.push((offset + u, offset + v, T::one()));
            triplets.push((offset + v, offset + u, T::one()));
        }
        labels.push(g.graph_label());
        offset += g.node_count();
    }
    node_offsets.push(offset);
    Ok(BatchedGraph {
        block_adjacency: CsrMatrix::from_triplets(total, total, &triplets),
        stacked_features: features,
        graph_index,
        labels,
        node_offsets,
    })
}

/// Ratios for a train/validation/test split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        if self.train <= 0.0 || self.val <= 0.0 || self.test <= 0.0 {
            return Err(GfsError::InvalidSplit("ratios must be positive".into()));
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(GfsError::InvalidSplit(format!(
                "ratios sum to {sum}, not 1"
            )));
        }
        Ok(())
    }
}

/// Stratified train/val/test split, deterministic under `seed`.
///
/// Per class, indices are shuffled and allotted by largest remainder, so each
/// split's class proportions match the global proportions within ±1 graph per
/// class. Errors if any class has fewer samples than the three splits.
pub fn stratified_split<T: Scalar>(
    dataset: &GraphDataset<T>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<(GraphDataset<T>, GraphDataset<T>, GraphDataset<T>)> {
    ratios.validate()?;
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, g) in dataset.graphs.iter().enumerate() {
        per_class[g.graph_label()].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let fractions = [ratios.train, ratios.val, ratios.test];
    for (class, indices) in per_class.iter().enumerate() {
        if indices.is_empty() {
            continue;
        }
        if indices.len() < 3 {
            return Err(GfsError::ClassTooSmall {
                class,
                count: indices.len(),
                splits: 3,
            });
        }
        let mut shuffled = indices.clone();
        shuffled.shuffle(&mut rng);
        let counts = largest_remainder(indices.len(), &fractions);
        let mut cursor = 0usize;
        for (s, &count) in counts.iter().enumerate() {
            splits[s].extend_from_slice(&shuffled[cursor..cursor + count]);
            cursor += count;
        }
    }
    for split in &mut splits {
        split.sort_unstable();
    }
    let [train, val, test] = splits;
    Ok((
        dataset.subset(&train)?,
        dataset.subset(&val)?,
        dataset.subset(&test)?,
    ))
}

/// Integer apportionment of `n` items over `fractions` (largest remainder,
/// ties resolved in slot order). Guarantees at least one item per slot when
/// `n >= fractions.len()`.
fn largest_remainder(n: usize, fractions: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = fractions.iter().map(|f| (f * n as f64) as usize).collect();
    // Reserve one per slot before distributing the remainder.
    for c in counts.iter_mut() {
        if *c == 0 {
            *c = 1;
        }
    }
    let mut assigned: usize = counts.iter().sum();
    while assigned > n {
        let i = (0..counts.len())
            .max_by(|&a, &b| {
                let ra = counts[a] as f64 - fractions[a] * n as f64;
                let rb = counts[b] as f64 - fractions[b] * n as f64;
                ra.partial_cmp(&rb).unwrap().then(b.cmp(&a))
            })
            .unwrap();
        counts[i] -= 1;
        assigned -= 1;
    }
    while assigned < n {
        let i = (0..counts.len())
            .max_by(|&a, &b| {
                let ra = fractions[a] * n as f64 - counts[a] as f64;
                let rb = fractions[b] * n as f64 - counts[b] as f64;
                ra.partial_cmp(&rb).unwrap().then(b.cmp(&a))
            })
            .unwrap();
        counts[i] += 1;
        assigned += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny(n: usize, edges: &[(usize, usize)], label: usize) -> Graph<f64> {
        let features = Array2::from_shape_fn((n, 2), |(i, j)| (i + j) as f64);
        Graph::new(n, edges, features, None, label).unwrap()
    }

    #[test]
    fn edges_symmetrize_and_dedup() {
        let g = tiny(3, &[(0, 1), (1, 0), (2, 1), (1, 2)], 0);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        let a = g.dense_adjacency();
        assert_eq!(a, a.t());
        for i in 0..3 {
            assert_eq!(a[[i, i]], 0.0);
        }
    }

    #[test]
    fn self_loop_rejected() {
        let features = Array2::<f64>::zeros((2, 1));
        let err = Graph::new(2, &[(1, 1)], features, None, 0).unwrap_err();
        assert!(matches!(err, GfsError::SelfLoop { node: 1 }));
    }

    #[test]
    fn zero_node_graph_rejected() {
        let err = Graph::<f64>::new(0, &[], Array2::zeros((0, 1)), None, 0).unwrap_err();
        assert!(matches!(err, GfsError::EmptyGraph { .. }));
    }

    #[test]
    fn batch_of_one_is_identity() {
        let g = tiny(3, &[(0, 1), (1, 2)], 1);
        let batch = batch_graphs(&[&g]).unwrap();
        assert_eq!(batch.stacked_features, *g.node_features());
        assert_eq!(batch.block_adjacency.to_dense(), g.dense_adjacency());
        assert_eq!(batch.graph_index, vec![0, 0, 0]);
        assert_eq!(batch.labels, vec![1]);
    }

    #[test]
    fn batch_two_graphs_has_zero_off_blocks() {
        let g1 = tiny(2, &[(0, 1)], 0);
        let g2 = tiny(3, &[(0, 2)], 1);
        let batch = batch_graphs(&[&g1, &g2]).unwrap();
        let a = batch.block_adjacency.to_dense();
        assert_eq!(a.dim(), (5, 5));
        for i in 0..2 {
            for j in 2..5 {
                assert_eq!(a[[i, j]], 0.0);
                assert_eq!(a[[j, i]], 0.0);
            }
        }
        assert_eq!(a[[0, 1]], 1.0);
        assert_eq!(a[[2, 4]], 1.0);
        assert_eq!(batch.graph_index, vec![0, 0, 1, 1, 1]);
    }

    #[test]
    fn unbatch_inverts_stacking() {
        let g1 = tiny(2, &[(0, 1)], 0);
        let g2 = tiny(4, &[], 1);
        let batch = batch_graphs(&[&g1, &g2]).unwrap();
        let parts = batch.unbatch_rows(&batch.stacked_features);
        assert_eq!(parts[0], *g1.node_features());
        assert_eq!(parts[1], *g2.node_features());
    }

    #[test]
    fn batch_rejects_mixed_dims() {
        let g1 = tiny(2, &[], 0);
        let g2 = Graph::new(2, &[], array![[1.0], [2.0]], None, 0).unwrap();
        assert!(matches!(
            batch_graphs(&[&g1, &g2]).unwrap_err(),
            GfsError::MixedFeatureDims { .. }
        ));
    }

    fn labeled_dataset(counts: &[usize]) -> GraphDataset<f64> {
        let mut graphs = Vec::new();
        for (label, &count) in counts.iter().enumerate() {
            for _ in 0..count {
                graphs.push(tiny(2, &[(0, 1)], label));
            }
        }
        GraphDataset::new("toy", graphs, counts.len(), true).unwrap()
    }

    #[test]
    fn split_sizes_match_ratios() {
        let ds = labeled_dataset(&[1000, 1000]);
        let (train, val, test) = stratified_split(&ds, SplitRatios::default(), 7).unwrap();
        assert_eq!(train.len(), 1600);
        assert_eq!(val.len(), 200);
        assert_eq!(test.len(), 200);
    }

    #[test]
    fn split_deterministic_under_seed() {
        let ds = labeled_dataset(&[40, 60]);
        let (a1, b1, c1) = stratified_split(&ds, SplitRatios::default(), 3).unwrap();
        let (a2, b2, c2) = stratified_split(&ds, SplitRatios::default(), 3).unwrap();
        assert_eq!(a1.labels(), a2.labels());
        assert_eq!(b1.labels(), b2.labels());
        assert_eq!(c1.labels(), c2.labels());
        let (a3, _, _) = stratified_split(&ds, SplitRatios::default(), 4).unwrap();
        // A different seed permutes membership even if counts agree.
        assert_eq!(a1.len(), a3.len());
    }

    #[test]
    fn split_class_proportions_within_one() {
        // Counting oracle: per-class histogram of each split vs exact share.
        let ds = labeled_dataset(&[37, 83, 20]);
        let (train, val, test) = stratified_split(&ds, SplitRatios::default(), 11).unwrap();
        let global = ds.class_histogram();
        for (split, frac) in [(&train, 0.8), (&val, 0.1), (&test, 0.1)] {
            let hist = split.class_histogram();
            for c in 0..3 {
                let expected = global[c] as f64 * frac;
                assert!(
                    (hist[c] as f64 - expected).abs() <= 1.0 + 1e-9,
                    "class {c}: got {} want ~{expected}",
                    hist[c]
                );
            }
        }
    }

    #[test]
    fn split_rejects_tiny_class() {
        let ds = labeled_dataset(&[2, 50]);
        assert!(matches!(
            stratified_split(&ds, SplitRatios::default(), 0).unwrap_err(),
            GfsError::ClassTooSmall { class: 0, .. }
        ));
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let ds = labeled_dataset(&[10, 10]);
        let bad = SplitRatios {
            train: 0.5,
            val: 0.2,
            test: 0.2,
        };
        assert!(stratified_split(&ds, bad, 0).is_err());
    }
}
