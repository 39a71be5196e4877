//! Synthetic graph datasets for tests, examples and smoke runs.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, GraphDataset};
use crate::scalar::Scalar;

/// Options for [`two_family_dataset`].
#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub graphs_per_class: usize,
    pub seed: u64,
    pub feature_dim: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Mean offset applied with opposite sign per class; larger values make
    /// the families more separable.
    pub feature_shift: f64,
    pub feature_noise: f64,
    pub with_node_labels: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            graphs_per_class: 10,
            seed: 0,
            feature_dim: 4,
            min_nodes: 5,
            max_nodes: 8,
            feature_shift: 1.0,
            feature_noise: 0.2,
            with_node_labels: true,
        }
    }
}

/// Two structurally and featurally distinct families of graphs.
///
/// Class 0 graphs are cycles whose node features center at `+shift`; class 1
/// graphs are stars centered at `-shift`. Node labels (when enabled) also
/// differ per family, so both kernel channels separate the classes and a sum
/// readout makes them linearly separable.
pub fn two_family_dataset<T: Scalar>(options: &SynthOptions) -> GraphDataset<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut graphs = Vec::with_capacity(options.graphs_per_class * 2);
    for class in 0..2usize {
        for _ in 0..options.graphs_per_class {
            let n = rng.gen_range(options.min_nodes..=options.max_nodes);
            let edges: Vec<(usize, usize)> = if class == 0 {
                // Cycle.
                (0..n).map(|v| (v, (v + 1) % n)).collect()
            } else {
                // Star around node 0.
                (1..n).map(|v| (0, v)).collect()
            };
            let shift = if class == 0 {
                options.feature_shift
            } else {
                -options.feature_shift
            };
            let features = Array2::from_shape_fn((n, options.feature_dim), |_| {
                T::of(shift + options.feature_noise * (rng.gen::<f64>() * 2.0 - 1.0))
            });
            let labels = options.with_node_labels.then(|| {
                (0..n)
                    .map(|v| {
                        if class == 0 {
                            (v % 2) as i64
                        } else {
                            2 + (v == 0) as i64
                        }
                    })
                    .collect()
            });
            graphs.push(Graph::new(n, &edges, features, labels, class).expect("valid synth graph"));
        }
    }
    GraphDataset::new("synth-two-family", graphs, 2, true).expect("valid synth dataset")
}

/// One random graph: `n` nodes, each possible edge kept with `edge_prob`,
/// features uniform in `[-1, 1]`, node labels drawn from a 3-letter alphabet.
pub fn random_graph<T: Scalar>(
    rng: &mut ChaCha8Rng,
    min_nodes: usize,
    max_nodes: usize,
    feature_dim: usize,
    label: usize,
) -> Graph<T> {
    let n = rng.gen_range(min_nodes..=max_nodes);
    let edge_prob = rng.gen_range(0.2..0.8);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.gen::<f64>() < edge_prob {
                edges.push((u, v));
            }
        }
    }
    let features = Array2::from_shape_fn((n, feature_dim), |_| T::of(rng.gen::<f64>() * 2.0 - 1.0));
    let labels = (0..n).map(|_| rng.gen_range(0..3i64)).collect();
    Graph::new(n, &edges, features, Some(labels), label).expect("valid random graph")
}

/// Dataset of [`random_graph`]s with alternating class labels.
pub fn random_dataset<T: Scalar>(
    count: usize,
    min_nodes: usize,
    max_nodes: usize,
    feature_dim: usize,
    num_classes: usize,
    seed: u64,
) -> GraphDataset<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs = (0..count)
        .map(|i| random_graph(&mut rng, min_nodes, max_nodes, feature_dim, i % num_classes))
        .collect();
    GraphDataset::new("synth-random", graphs, num_classes, true).expect("valid random dataset")
}
