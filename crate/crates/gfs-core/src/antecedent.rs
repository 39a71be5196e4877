//! Graph fuzzy rule base: prototype graphs, memberships and firing strengths.
//!
//! A rule base holds the K prototype graphs chosen by clustering together
//! with the kernel context that produced them. Membership of a graph in rule
//! `k` is its cosine-normalized propagation-kernel similarity to prototype
//! `k`; firing strengths are the memberships normalized to sum to one.
//! Antecedents are frozen once built — consequent training never touches
//! them.

use ndarray::Array2;

use crate::cluster::ClusterModel;
use crate::error::{GfsError, Result};
use crate::graph::{Graph, GraphDataset};
use crate::kernel::{KernelCache, KernelContext};
use crate::scalar::Scalar;

/// K graph fuzzy rules' antecedents: prototype graphs plus the kernel needed
/// to evaluate membership of any graph. Self-contained — inference does not
/// need the training dataset.
#[derive(Debug, Clone)]
pub struct RuleBase<T> {
    prototype_graphs: Vec<Graph<T>>,
    /// Dataset indices the prototypes were copied from (provenance).
    prototype_indices: Vec<usize>,
    kernel: KernelContext,
    prototype_self_kernels: Vec<f64>,
}

impl<T: Scalar> RuleBase<T> {
    /// Assembles a rule base from explicit parts (checkpoint loading and
    /// tests). Panics if the self-kernel vector disagrees in length.
    pub fn from_parts(
        prototype_graphs: Vec<Graph<T>>,
        prototype_indices: Vec<usize>,
        kernel: KernelContext,
        prototype_self_kernels: Vec<f64>,
    ) -> Self {
        assert_eq!(prototype_graphs.len(), prototype_self_kernels.len());
        assert_eq!(prototype_graphs.len(), prototype_indices.len());
        assert!(
            !prototype_graphs.is_empty(),
            "rule base needs at least one rule"
        );
        assert!(
            prototype_self_kernels.iter().all(|&s| s > 0.0),
            "prototype self-kernels must be positive"
        );
        Self {
            prototype_graphs,
            prototype_indices,
            kernel,
            prototype_self_kernels,
        }
    }

    pub fn num_rules(&self) -> usize {
        self.prototype_graphs.len()
    }

    pub fn prototype(&self, k: usize) -> &Graph<T> {
        &self.prototype_graphs[k]
    }

    pub fn prototype_indices(&self) -> &[usize] {
        &self.prototype_indices
    }

    pub fn kernel(&self) -> &KernelContext {
        &self.kernel
    }

    pub fn prototype_self_kernels(&self) -> &[f64] {
        &self.prototype_self_kernels
    }

    /// Membership of `graph` in rule `k`: raw pair kernel against prototype
    /// `k`, cosine-normalized by both self-kernels.
    pub fn membership(&self, graph: &Graph<T>, k: usize) -> f64 {
        let self_kernel = self.kernel.self_kernel(graph);
        assert!(self_kernel > 0.0, "zero self-kernel");
        self.membership_with_self(graph, k, self_kernel)
    }

    fn membership_with_self(&self, graph: &Graph<T>, k: usize, self_kernel: f64) -> f64 {
        let raw = self
            .kernel
            .graph_pair_kernel(graph, &self.prototype_graphs[k]);
        raw / (self_kernel * self.prototype_self_kernels[k]).sqrt()
    }

    /// All K memberships of one graph.
    pub fn memberships(&self, graph: &Graph<T>) -> Vec<f64> {
        let self_kernel = self.kernel.self_kernel(graph);
        assert!(self_kernel > 0.0, "zero self-kernel");
        (0..self.num_rules())
            .map(|k| self.membership_with_self(graph, k, self_kernel))
            .collect()
    }

    /// Normalized firing strengths of one graph: non-negative, summing to 1.
    pub fn firing_strengths(&self, graph: &Graph<T>) -> Vec<f64> {
        normalize_strengths(&self.memberships(graph))
    }

    /// Firing-strength matrix (rows = graphs, columns = rules) for a whole
    /// dataset.
    pub fn strength_matrix(&self, dataset: &GraphDataset<T>) -> Array2<f64> {
        let k = self.num_rules();
        let mut out = Array2::zeros((dataset.len(), k));
        for (i, g) in dataset.graphs.iter().enumerate() {
            for (j, w) in self.firing_strengths(g).into_iter().enumerate() {
                out[[i, j]] = w;
            }
        }
        out
    }
}

/// Normalizes raw memberships into firing strengths summing to one. When
/// every membership underflows to zero the uniform vector is returned.
pub fn normalize_strengths(memberships: &[f64]) -> Vec<f64> {
    let total: f64 = memberships.iter().sum();
    if total <= 0.0 {
        return vec![1.0 / memberships.len() as f64; memberships.len()];
    }
    memberships.iter().map(|w| w / total).collect()
}

/// Output of [`build_rulebase`]: the rule base plus the cached memberships
/// and firing strengths of every training graph (rows = graphs).
#[derive(Debug, Clone)]
pub struct RuleBaseBuild<T> {
    pub rulebase: RuleBase<T>,
    pub train_memberships: Array2<f64>,
    pub train_strengths: Array2<f64>,
}

/// Builds the rule base from a clustering result, copying the prototype
/// graphs out of the dataset and precomputing memberships of every training
/// graph. When the training Gram matrix is supplied the cached memberships
/// are read from its normalized form instead of being recomputed pairwise.
pub fn build_rulebase<T: Scalar>(
    dataset: &GraphDataset<T>,
    cluster: &ClusterModel,
    kernel: KernelContext,
    cache: Option<&KernelCache>,
) -> Result<RuleBaseBuild<T>> {
    let n = dataset.len();
    for &p in &cluster.prototypes {
        if p >= n {
            return Err(GfsError::PrototypeOutOfRange { index: p, n });
        }
    }
    let k = cluster.prototypes.len();
    let prototype_graphs: Vec<Graph<T>> = cluster
        .prototypes
        .iter()
        .map(|&p| dataset.graphs[p].clone())
        .collect();
    let self_kernels: Vec<f64> = match cache {
        Some(cache) => cluster
            .prototypes
            .iter()
            .map(|&p| cache.raw()[[p, p]])
            .collect(),
        None => prototype_graphs
            .iter()
            .map(|g| kernel.self_kernel(g))
            .collect(),
    };
    let rulebase = RuleBase::from_parts(
        prototype_graphs,
        cluster.prototypes.clone(),
        kernel,
        self_kernels,
    );

    let mut memberships = Array2::zeros((n, k));
    match cache {
        Some(cache) => {
            let norm = cache.normalized();
            for i in 0..n {
                for (j, &p) in cluster.prototypes.iter().enumerate() {
                    memberships[[i, j]] = norm[[i, p]];
                }
            }
        }
        None => {
            for (i, g) in dataset.graphs.iter().enumerate() {
                for (j, mu) in rulebase.memberships(g).into_iter().enumerate() {
                    memberships[[i, j]] = mu;
                }
            }
        }
    }
    let mut strengths = Array2::zeros((n, k));
    for i in 0..n {
        let row: Vec<f64> = (0..k).map(|j| memberships[[i, j]]).collect();
        for (j, w) in normalize_strengths(&row).into_iter().enumerate() {
            strengths[[i, j]] = w;
        }
    }
    Ok(RuleBaseBuild {
        rulebase,
        train_memberships: memberships,
        train_strengths: strengths,
    })
}
