use std::fs;
use std::path::Path;

use gthna_autodiff::Tensor;

use super::Graph;
use crate::error::{Error, Result};

/// What `load_graph` had to clean up.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub self_loops_dropped: usize,
    pub duplicate_edges: usize,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads the header-less CSV triple: features per node, `src,dst` edges and
/// optional 0/1 labels.
pub fn load_graph(nodes: &Path, edges: &Path, labels: Option<&Path>) -> Result<(Graph, LoadStats)> {
    let text = read(nodes)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in data_lines(&text) {
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(nodes, ln, format!("bad feature value: {e}")))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Shape(format!(
                    "{}:{ln}: {} features, expected {}",
                    nodes.display(),
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let features = Tensor::from_rows(&rows)?;

    let text = read(edges)?;
    let mut edge_list = Vec::new();
    let mut stats = LoadStats::default();
    let mut seen = std::collections::HashSet::new();
    for (ln, line) in data_lines(&text) {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [a, b] = fields[..] else {
            return Err(parse_err(edges, ln, format!("expected `src,dst`, got `{line}`")));
        };
        let parse = |s: &str| s.parse::<usize>().map_err(|e| parse_err(edges, ln, format!("bad node id `{s}`: {e}")));
        let (a, b) = (parse(a)?, parse(b)?);
        for id in [a, b] {
            if id >= n {
                return Err(Error::NodeRange {
                    file: edges.to_path_buf(),
                    line: ln,
                    id,
                    n,
                });
            }
        }
        if a == b {
            stats.self_loops_dropped += 1;
            continue;
        }
        if !seen.insert((a.min(b), a.max(b))) {
            stats.duplicate_edges += 1;
            continue;
        }
        edge_list.push((a, b));
    }
    if stats.self_loops_dropped > 0 {
        log::warn!("{}: dropped {} self-loops", edges.display(), stats.self_loops_dropped);
    }

    let labels = match labels {
        None => None,
        Some(path) => {
            let text = read(path)?;
            let mut out = Vec::new();
            for (ln, line) in data_lines(&text) {
                match line {
                    "0" => out.push(0),
                    "1" => out.push(1),
                    other => return Err(parse_err(path, ln, format!("label must be 0 or 1, got `{other}`"))),
                }
            }
            if out.len() != n {
                return Err(Error::Shape(format!("{}: {} labels for {n} nodes", path.display(), out.len())));
            }
            Some(out)
        }
    };
    Ok((Graph::new(features, &edge_list, labels)?, stats))
}

/// Writes a graph in the same three-file layout `load_graph` reads.
/// Floats use the shortest representation that parses back exactly.
pub fn write_graph(g: &Graph, nodes: &Path, edges: &Path, labels: Option<&Path>) -> Result<()> {
    let mut text = String::new();
    for i in 0..g.num_nodes() {
        let row: Vec<String> = g.features().row(i).iter().map(|v| v.to_string()).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(nodes, text).map_err(|e| Error::io(nodes, e))?;

    let text: String = g.edges().iter().map(|(a, b)| format!("{a},{b}\n")).collect();
    fs::write(edges, text).map_err(|e| Error::io(edges, e))?;

    if let (Some(path), Some(l)) = (labels, g.labels()) {
        let text: String = l.iter().map(|v| format!("{v}\n")).collect();
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
