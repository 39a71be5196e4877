//! TU-format dataset ingestion and export.
//!
//! The on-disk layout is the public benchmark distribution: a directory with
//! `{name}_A.txt` (comma-separated edge list of 1-based global node ids),
//! `{name}_graph_indicator.txt` (node → graph map), `{name}_graph_labels.txt`,
//! and at least one of `{name}_node_attributes.txt` /
//! `{name}_node_labels.txt`. Node ids are global across the dataset; the
//! parser converts them to per-graph 0-based indices.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{GfsError, Result};
use crate::graph::{Graph, GraphDataset};
use crate::scalar::Scalar;

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> GfsError {
    GfsError::Parse {
        file: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Parses a TU-format dataset directory.
///
/// Edges are symmetrized and deduplicated, graph labels are remapped to a
/// contiguous `[0, C)`, and when only node labels exist the node features are
/// their one-hot encoding.
pub fn parse_tu_dataset<T: Scalar>(directory: &Path, name: &str) -> Result<GraphDataset<T>> {
    let file = |suffix: &str| -> PathBuf { directory.join(format!("{name}_{suffix}.txt")) };

    let indicator_path = file("graph_indicator");
    if !indicator_path.is_file() {
        return Err(GfsError::MissingFile(indicator_path));
    }
    let edges_path = file("A");
    if !edges_path.is_file() {
        return Err(GfsError::MissingFile(edges_path));
    }
    let labels_path = file("graph_labels");
    if !labels_path.is_file() {
        return Err(GfsError::MissingFile(labels_path));
    }

    // Node → graph map (1-based graph ids in the file).
    let mut node_graph: Vec<usize> = Vec::new();
    for (lineno, line) in read_lines(&indicator_path)?.iter().enumerate() {
        let gid: usize = line.parse().map_err(|_| {
            parse_err(
                &indicator_path,
                lineno + 1,
                format!("bad graph id {line:?}"),
            )
        })?;
        if gid == 0 {
            return Err(parse_err(
                &indicator_path,
                lineno + 1,
                "graph ids are 1-based",
            ));
        }
        node_graph.push(gid - 1);
    }
    let num_nodes = node_graph.len();
    if num_nodes == 0 {
        return Err(parse_err(&indicator_path, 1, "dataset has no nodes"));
    }
    let num_graphs = node_graph.iter().max().unwrap() + 1;

    // Per-graph local index of every global node, in ascending global order.
    let mut local_index = vec![0usize; num_nodes];
    let mut graph_sizes = vec![0usize; num_graphs];
    for (node, &g) in node_graph.iter().enumerate() {
        local_index[node] = graph_sizes[g];
        graph_sizes[g] += 1;
    }
    for (g, &size) in graph_sizes.iter().enumerate() {
        if size == 0 {
            return Err(GfsError::EmptyGraph { graph: g + 1 });
        }
    }

    // Graph labels, remapped to contiguous [0, C).
    let raw_graph_labels: Vec<i64> = {
        let lines = read_lines(&labels_path)?;
        if lines.len() != num_graphs {
            return Err(parse_err(
                &labels_path,
                lines.len(),
                format!("{} labels for {num_graphs} graphs", lines.len()),
            ));
        }
        lines
            .iter()
            .enumerate()
            .map(|(lineno, l)| {
                l.parse::<i64>()
                    .map_err(|_| parse_err(&labels_path, lineno + 1, format!("bad label {l:?}")))
            })
            .collect::<Result<_>>()?
    };
    let mut distinct: Vec<i64> = raw_graph_labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let num_classes = distinct.len();
    let graph_labels: Vec<usize> = raw_graph_labels
        .iter()
        .map(|l| distinct.binary_search(l).unwrap())
        .collect();

    // Edge list: 1-based global ids, both endpoints in the same graph.
    let mut per_graph_edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (lineno, line) in read_lines(&edges_path)?.iter().enumerate() {
        let mut parts = line.split(',').map(str::trim);
        let (u, v) = match (parts.next(), parts.next(), parts.next()) {
            (Some(u), Some(v), None) => (u, v),
            _ => {
                return Err(parse_err(
                    &edges_path,
                    lineno + 1,
                    format!("bad edge {line:?}"),
                ))
            }
        };
        let parse_id = |s: &str| -> Result<usize> {
            let id: usize = s
                .parse()
                .map_err(|_| parse_err(&edges_path, lineno + 1, format!("bad node id {s:?}")))?;
            if id == 0 || id > num_nodes {
                return Err(GfsError::NodeIdOutOfRange {
                    file: edges_path.display().to_string(),
                    id,
                    max: num_nodes,
                });
            }
            Ok(id - 1)
        };
        let u = parse_id(u)?;
        let v = parse_id(v)?;
        if node_graph[u] != node_graph[v] {
            return Err(parse_err(
                &edges_path,
                lineno + 1,
                format!(
                    "edge joins graphs {} and {}",
                    node_graph[u] + 1,
                    node_graph[v] + 1
                ),
            ));
        }
        if u == v {
            return Err(GfsError::SelfLoop { node: u + 1 });
        }
        per_graph_edges[node_graph[u]].push((local_index[u], local_index[v]));
    }

    // Optional node attributes.
    let attributes_path = file("node_attributes");
    let node_attributes: Option<Vec<Vec<f64>>> = if attributes_path.is_file() {
        let lines = read_lines(&attributes_path)?;
        if lines.len() != num_nodes {
            return Err(parse_err(
                &attributes_path,
                lines.len(),
                format!("{} attribute rows for {num_nodes} nodes", lines.len()),
            ));
        }
        let mut rows = Vec::with_capacity(num_nodes);
        let mut width: Option<usize> = None;
        for (lineno, line) in lines.iter().enumerate() {
            let row: Vec<f64> = line
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| {
                        parse_err(&attributes_path, lineno + 1, format!("bad attribute {s:?}"))
                    })
                })
                .collect::<Result<_>>()?;
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(GfsError::RaggedAttributes {
                        node: lineno + 1,
                        got: row.len(),
                        expected: w,
                    })
                }
                _ => {}
            }
            rows.push(row);
        }
        Some(rows)
    } else {
        None
    };

    // Optional node labels.
    let node_labels_path = file("node_labels");
    let node_labels: Option<Vec<i64>> = if node_labels_path.is_file() {
        let lines = read_lines(&node_labels_path)?;
        if lines.len() != num_nodes {
            return Err(parse_err(
                &node_labels_path,
                lines.len(),
                format!("{} node labels for {num_nodes} nodes", lines.len()),
            ));
        }
        Some(
            lines
                .iter()
                .enumerate()
                .map(|(lineno, l)| {
                    l.parse::<i64>().map_err(|_| {
                        parse_err(
                            &node_labels_path,
                            lineno + 1,
                            format!("bad node label {l:?}"),
                        )
                    })
                })
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    if node_attributes.is_none() && node_labels.is_none() {
        return Err(GfsError::MissingFile(attributes_path));
    }

    // One-hot alphabet when labels must stand in for features.
    let label_alphabet: Vec<i64> = match (&node_attributes, &node_labels) {
        (None, Some(labels)) => {
            let mut alphabet = labels.clone();
            alphabet.sort_unstable();
            alphabet.dedup();
            alphabet
        }
        _ => Vec::new(),
    };

    let mut graphs = Vec::with_capacity(num_graphs);
    let mut node_cursor = vec![Vec::new(); num_graphs];
    for (node, &g) in node_graph.iter().enumerate() {
        node_cursor[g].push(node);
    }
    for g in 0..num_graphs {
        let nodes = &node_cursor[g];
        let n = nodes.len();
        let features: Array2<T> = match &node_attributes {
            Some(rows) => {
                let d = rows[0].len();
                Array2::from_shape_fn((n, d), |(i, j)| T::of(rows[nodes[i]][j]))
            }
            None => {
                let labels = node_labels.as_ref().unwrap();
                let d = label_alphabet.len();
                let mut one_hot = Array2::zeros((n, d));
                for (i, &node) in nodes.iter().enumerate() {
                    let slot = label_alphabet.binary_search(&labels[node]).unwrap();
                    one_hot[[i, slot]] = T::one();
                }
                one_hot
            }
        };
        let labels = node_labels
            .as_ref()
            .map(|all| nodes.iter().map(|&node| all[node]).collect::<Vec<_>>());
        graphs.push(Graph::new(
            n,
            &per_graph_edges[g],
            features,
            labels,
            graph_labels[g],
        )?);
    }

    GraphDataset::new(name, graphs, num_classes, node_attributes.is_some())
}

/// Writes a dataset back to TU format.
///
/// Each undirected edge is listed in both orientations, matching the public
/// distribution. Feature values print in shortest round-trip form, so
/// re-parsing yields element-wise identical graphs.
pub fn write_tu_dataset<T: Scalar>(dataset: &GraphDataset<T>, directory: &Path) -> Result<()> {
    fs::create_dir_all(directory)?;
    let name = &dataset.name;
    let file = |suffix: &str| directory.join(format!("{name}_{suffix}.txt"));

    let mut indicator = String::new();
    let mut edges = String::new();
    let mut labels = String::new();
    let mut attributes = String::new();
    let mut node_labels = String::new();
    let mut has_node_labels = true;

    let mut offset = 1usize; // global ids are 1-based
    for (g, graph) in dataset.graphs.iter().enumerate() {
        for v in 0..graph.node_count() {
            indicator.push_str(&format!("{}\n", g + 1));
            if dataset.has_attributes {
                let row: Vec<String> = graph
                    .node_features()
                    .row(v)
                    .iter()
                    .map(|x| format!("{}", x.to_f64_lossless()))
                    .collect();
                attributes.push_str(&row.join(", "));
                attributes.push('\n');
            }
            match graph.node_labels() {
                Some(l) => node_labels.push_str(&format!("{}\n", l[v])),
                None => has_node_labels = false,
            }
        }
        for &(u, v) in graph.edges() {
            edges.push_str(&format!("{}, {}\n", offset + u, offset + v));
            edges.push_str(&format!("{}, {}\n", offset + v, offset + u));
        }
        labels.push_str(&format!("{}\n", graph.graph_label()));
        offset += graph.node_count();
    }

    fs::write(file("graph_indicator"), indicator)?;
    fs::write(file("A"), edges)?;
    fs::write(file("graph_labels"), labels)?;
    if dataset.has_attributes {
        fs::write(file("node_attributes"), attributes)?;
    }
    if has_node_labels {
        fs::write(file("node_labels"), node_labels)?;
    }
    Ok(())
}
