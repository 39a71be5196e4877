//! Property tests over randomly generated graphs and datasets.

use ndarray::Array2;
use proptest::prelude::*;

use gfs_core::antecedent::normalize_strengths;
use gfs_core::graph::{batch_graphs, Graph, GraphDataset};
use gfs_core::kernel::{KernelConfig, KernelContext, KernelScheme};
use gfs_core::tu::{parse_tu_dataset, write_tu_dataset};

#[derive(Debug, Clone)]
struct ArbGraph {
    n: usize,
    edge_bits: u32,
    features: Vec<f64>,
    labels: Vec<i64>,
    class: usize,
}

const FEATURE_DIM: usize = 3;

fn arb_graph() -> impl Strategy<Value = ArbGraph> {
    (1usize..=6).prop_flat_map(|n| {
        let pairs = n * (n.saturating_sub(1)) / 2;
        (
            Just(n),
            0u32..(1u32 << pairs.max(1)),
            proptest::collection::vec(-2.0f64..2.0, n * FEATURE_DIM),
            proptest::collection::vec(0i64..3, n),
            0usize..2,
        )
            .prop_map(|(n, edge_bits, features, labels, class)| ArbGraph {
                n,
                edge_bits,
                features,
                labels,
                class,
            })
    })
}

fn build(g: &ArbGraph) -> Graph<f64> {
    let mut edges = Vec::new();
    let mut bit = 0;
    for u in 0..g.n {
        for v in (u + 1)..g.n {
            if g.edge_bits >> bit & 1 == 1 {
                edges.push((u, v));
            }
            bit += 1;
        }
    }
    let features =
        Array2::from_shape_fn((g.n, FEATURE_DIM), |(i, j)| g.features[i * FEATURE_DIM + j]);
    Graph::new(g.n, &edges, features, Some(g.labels.clone()), g.class).unwrap()
}

fn arb_dataset(max_graphs: usize) -> impl Strategy<Value = GraphDataset<f64>> {
    proptest::collection::vec(arb_graph(), 1..=max_graphs)
        .prop_map(|gs| GraphDataset::new("prop", gs.iter().map(build).collect(), 2, true).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adjacency_is_symmetric_with_zero_diagonal(g in arb_graph()) {
        let graph = build(&g);
        let a = graph.dense_adjacency();
        prop_assert_eq!(&a, &a.t().to_owned());
        for i in 0..graph.node_count() {
            prop_assert_eq!(a[[i, i]], 0.0);
        }
    }

    #[test]
    fn tu_round_trip_is_element_wise_identical(ds in arb_dataset(5)) {
        let dir = std::env::temp_dir().join(format!(
            "gfs-prop-rt-{}-{}",
            std::process::id(),
            rand::random::<u64>()
        ));
        write_tu_dataset(&ds, &dir).unwrap();
        let parsed: GraphDataset<f64> = parse_tu_dataset(&dir, &ds.name).unwrap();
        std::fs::remove_dir_all(&dir).ok();
        prop_assert_eq!(ds.len(), parsed.len());
        for (a, b) in ds.graphs.iter().zip(&parsed.graphs) {
            prop_assert_eq!(a.edges(), b.edges());
            prop_assert_eq!(a.node_features(), b.node_features());
            prop_assert_eq!(a.node_labels(), b.node_labels());
        }
    }

    #[test]
    fn batching_inverts_exactly(ds in arb_dataset(4)) {
        let refs: Vec<&Graph<f64>> = ds.graphs.iter().collect();
        let batch = batch_graphs(&refs).unwrap();
        // graph_index is non-decreasing and segment sizes recover node counts.
        prop_assert!(batch.graph_index.windows(2).all(|w| w[0] <= w[1]));
        let parts = batch.unbatch_rows(&batch.stacked_features);
        for (part, g) in parts.iter().zip(&ds.graphs) {
            prop_assert_eq!(part, g.node_features());
        }
        // Block-diagonal structure: no cross-graph edges.
        let dense = batch.block_adjacency.to_dense();
        for (i, &gi) in batch.graph_index.iter().enumerate() {
            for (j, &gj) in batch.graph_index.iter().enumerate() {
                if gi != gj {
                    prop_assert_eq!(dense[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn kernel_matrix_is_symmetric_and_self_maximal(ds in arb_dataset(5), rbf in any::<bool>()) {
        let config = KernelConfig {
            scheme: if rbf { KernelScheme::Rbf } else { KernelScheme::Hashed },
            seed: 11,
            ..KernelConfig::default()
        };
        let ctx = KernelContext::fit(&ds, config).unwrap();
        let cache = ctx.kernel_matrix(&ds).unwrap();
        let raw = cache.raw();
        let norm = cache.normalized();
        for i in 0..ds.len() {
            prop_assert_eq!(norm[[i, i]], 1.0);
            for j in 0..ds.len() {
                prop_assert_eq!(raw[[i, j]], raw[[j, i]]);
                prop_assert!(norm[[i, j]] <= 1.0 + 1e-9, "normalized {} > 1", norm[[i, j]]);
                prop_assert!(norm[[i, j]] >= -1e-9);
            }
        }
    }

    #[test]
    fn kernel_matrix_ignores_worker_count(ds in arb_dataset(4)) {
        let ctx = KernelContext::fit(&ds, KernelConfig::default()).unwrap();
        let parallel = ctx.kernel_matrix(&ds).unwrap();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| ctx.kernel_matrix(&ds).unwrap());
        prop_assert_eq!(parallel.raw(), single.raw());
    }

    #[test]
    fn strengths_normalize_and_ignore_positive_scaling(
        mu in proptest::collection::vec(0.0f64..1.0, 1..6),
        scale in 0.25f64..8.0,
    ) {
        let w = normalize_strengths(&mu);
        let sum: f64 = w.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        let scaled: Vec<f64> = mu.iter().map(|m| m * scale).collect();
        let w2 = normalize_strengths(&scaled);
        for (a, b) in w.iter().zip(&w2) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
