//! Kernel K-prototype graph clustering.
//!
//! Coordinate ascent over a precomputed raw Gram matrix: graphs are assigned
//! to the prototype of greatest similarity, prototypes are refreshed as the
//! medoid of each cluster (largest within-cluster similarity sum), and the
//! loop stops once the objective repeats.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GfsError, Result};
use crate::kernel::KernelCache;

/// Result of a clustering run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    /// Dataset indices of the prototype graphs, one per cluster.
    pub prototypes: Vec<usize>,
    /// Cluster index of every graph.
    pub assignments: Vec<usize>,
    /// Objective value recorded at each iteration.
    pub objective_history: Vec<f64>,
    pub iterations_run: usize,
}

/// Options for [`run_k2pgc`].
#[derive(Debug, Clone)]
pub struct ClusterOptions {
    pub max_iter: usize,
    /// Farthest-first seeding instead of uniform random initialization.
    pub farthest_first_init: bool,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            farthest_first_init: false,
        }
    }
}

/// Assigns every graph to its most similar prototype (raw kernel), ties
/// broken by the smallest cluster index.
pub fn assign_clusters(cache: &KernelCache, prototypes: &[usize]) -> Vec<usize> {
    let raw = cache.raw();
    let n = cache.len();
    (0..n)
        .map(|j| {
            let mut best = 0usize;
            let mut best_sim = raw[[prototypes[0], j]];
            for (k, &p) in prototypes.iter().enumerate().skip(1) {
                let sim = raw[[p, j]];
                if sim > best_sim {
                    best = k;
                    best_sim = sim;
                }
            }
            best
        })
        .collect()
}

/// Refreshes each cluster's prototype as its medoid: the member with the
/// largest within-cluster similarity sum, ties broken by the smallest index.
///
/// A cluster left empty by the assignment is re-seeded with the graph whose
/// maximum similarity to the prototypes chosen so far is smallest
/// (farthest-point heuristic).
pub fn update_prototypes(cache: &KernelCache, assignments: &[usize], k: usize) -> Vec<usize> {
    let raw = cache.raw();
    let n = cache.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in assignments.iter().enumerate() {
        members[c].push(i);
    }
    let mut prototypes: Vec<Option<usize>> = vec![None; k];
    for c in 0..k {
        if members[c].is_empty() {
            continue;
        }
        let mut best = members[c][0];
        let mut best_sum = f64::NEG_INFINITY;
        for &i in &members[c] {
            let sum: f64 = members[c].iter().map(|&j| raw[[i, j]]).sum();
            if sum > best_sum {
                best = i;
                best_sum = sum;
            }
        }
        prototypes[c] = Some(best);
    }
    for c in 0..k {
        if prototypes[c].is_some() {
            continue;
        }
        let chosen: Vec<usize> = prototypes.iter().flatten().copied().collect();
        let mut pick = None;
        let mut pick_score = f64::INFINITY;
        for i in 0..n {
            if prototypes.iter().flatten().any(|&p| p == i) {
                continue;
            }
            let score = chosen
                .iter()
                .map(|&p| raw[[i, p]])
                .fold(f64::NEG_INFINITY, f64::max);
            if score < pick_score {
                pick = Some(i);
                pick_score = score;
            }
        }
        prototypes[c] = pick;
    }
    prototypes
        .into_iter()
        .map(|p| p.expect("more clusters than graphs"))
        .collect()
}

/// Clustering objective: each graph's raw similarity to its own cluster's
/// prototype, summed in index order.
pub fn objective(cache: &KernelCache, prototypes: &[usize], assignments: &[usize]) -> f64 {
    let raw = cache.raw();
    assignments
        .iter()
        .enumerate()
        .map(|(i, &c)| raw[[i, prototypes[c]]])
        .sum()
}

/// Runs the clustering loop: random prototype initialization, alternating
/// assignment and medoid updates, recording the objective each iteration and
/// stopping after two consecutive equal values or `max_iter` iterations.
/// Deterministic under `seed`.
pub fn run_k2pgc(
    cache: &KernelCache,
    k: usize,
    seed: u64,
    options: &ClusterOptions,
) -> Result<ClusterModel> {
    let n = cache.len();
    if k == 0 || k > n {
        return Err(GfsError::KTooLarge { k, n });
    }
    if options.max_iter == 0 {
        return Err(GfsError::InvalidConfig("max_iter must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prototypes: Vec<usize> = if options.farthest_first_init {
        farthest_first_seeds(cache, k, &mut rng)
    } else {
        let mut indices: Vec<usize> = (0..n).collect();
        indices.shuffle(&mut rng);
        indices.truncate(k);
        indices.sort_unstable();
        indices
    };

    let mut assignments = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0usize;
    for _ in 0..options.max_iter {
        iterations += 1;
        assignments = assign_clusters(cache, &prototypes);
        prototypes = update_prototypes(cache, &assignments, k);
        history.push(objective(cache, &prototypes, &assignments));
        let len = history.len();
        if len >= 2 && history[len - 1] == history[len - 2] {
            break;
        }
    }
    let model = ClusterModel {
        k,
        prototypes,
        assignments,
        objective_history: history,
        iterations_run: iterations,
    };
    // A prototype can land outside its own cluster when the raw kernel row
    // is not diagonal-dominant; surface it rather than hiding it.
    let violations = model.prototype_membership_violations();
    if !violations.is_empty() {
        eprintln!(
            "warning: prototypes of clusters {violations:?} are not members of their own cluster \
             (raw self-similarity is not dominant)"
        );
    }
    Ok(model)
}

/// Farthest-first seeding on the normalized kernel: the first seed is the
/// graph with the largest normalized similarity sum, each further seed the
/// graph least similar to those already chosen.
fn farthest_first_seeds(cache: &KernelCache, k: usize, _rng: &mut ChaCha8Rng) -> Vec<usize> {
    let norm = cache.normalized();
    let n = cache.len();
    let mut seeds = Vec::with_capacity(k);
    let first = (0..n)
        .max_by(|&a, &b| {
            let sa: f64 = (0..n).map(|j| norm[[a, j]]).sum();
            let sb: f64 = (0..n).map(|j| norm[[b, j]]).sum();
            sa.partial_cmp(&sb).unwrap().then(b.cmp(&a))
        })
        .unwrap();
    seeds.push(first);
    while seeds.len() < k {
        let next = (0..n)
            .filter(|i| !seeds.contains(i))
            .min_by(|&a, &b| {
                let ma = seeds
                    .iter()
                    .map(|&s| norm[[a, s]])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mb = seeds
                    .iter()
                    .map(|&s| norm[[b, s]])
                    .fold(f64::NEG_INFINITY, f64::max);
                ma.partial_cmp(&mb).unwrap().then(a.cmp(&b))
            })
            .unwrap();
        seeds.push(next);
    }
    seeds.sort_unstable();
    seeds
}

impl ClusterModel {
    /// Clusters whose prototype is assigned to a different cluster. Empty
    /// whenever every prototype's kernel row is diagonal-dominant among the
    /// prototypes.
    pub fn prototype_membership_violations(&self) -> Vec<usize> {
        (0..self.k)
            .filter(|&c| self.assignments[self.prototypes[c]] != c)
            .collect()
    }

    /// Text report: cluster count, prototype indices, assignment vector and
    /// objective history, in a line-oriented key/value form.
    pub fn to_report(&self) -> String {
        let join = |items: &[String]| items.join(",");
        let mut out = String::new();
        out.push_str("k2pgc v1\n");
        out.push_str(&format!("k {}\n", self.k));
        out.push_str(&format!("iterations {}\n", self.iterations_run));
        out.push_str(&format!(
            "prototypes {}\n",
            join(
                &self
                    .prototypes
                    .iter()
                    .map(|p| p.to_string())
                    .collect::<Vec<_>>()
            )
        ));
        out.push_str(&format!(
            "assignments {}\n",
            join(
                &self
                    .assignments
                    .iter()
                    .map(|a| a.to_string())
                    .collect::<Vec<_>>()
            )
        ));
        out.push_str(&format!(
            "objective_history {}\n",
            join(
                &self
                    .objective_history
                    .iter()
                    .map(|o| format!("{o}"))
                    .collect::<Vec<_>>()
            )
        ));
        out
    }

    pub fn from_report(text: &str) -> Result<Self> {
        let bad = |message: String| GfsError::FileFormat {
            kind: "cluster report",
            message,
        };
        let mut k = None;
        let mut iterations = None;
        let mut prototypes = None;
        let mut assignments = None;
        let mut history = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if lineno == 0 {
                if line != "k2pgc v1" {
                    return Err(bad(format!("unexpected header {line:?}")));
                }
                continue;
            }
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| bad(format!("malformed line {line:?}")))?;
            let parse_list = |v: &str| -> Result<Vec<usize>> {
                v.split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<usize>()
                            .map_err(|_| bad(format!("bad index {s:?}")))
                    })
                    .collect()
            };
            match key {
                "k" => k = Some(value.parse::<usize>().map_err(|_| bad("bad k".into()))?),
                "iterations" => {
                    iterations = Some(
                        value
                            .parse::<usize>()
                            .map_err(|_| bad("bad iterations".into()))?,
                    )
                }
                "prototypes" => prototypes = Some(parse_list(value)?),
                "assignments" => assignments = Some(parse_list(value)?),
                "objective_history" => {
                    history = Some(
                        value
                            .split(',')
                            .map(|s| {
                                s.trim()
                                    .parse::<f64>()
                                    .map_err(|_| bad(format!("bad value {s:?}")))
                            })
                            .collect::<Result<Vec<f64>>>()?,
                    )
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        Ok(Self {
            k: k.ok_or_else(|| bad("missing k".into()))?,
            prototypes: prototypes.ok_or_else(|| bad("missing prototypes".into()))?,
            assignments: assignments.ok_or_else(|| bad("missing assignments".into()))?,
            objective_history: history.ok_or_else(|| bad("missing objective_history".into()))?,
            iterations_run: iterations.ok_or_else(|| bad("missing iterations".into()))?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_report())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_report(&fs::read_to_string(path)?)
    }
}
