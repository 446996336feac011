//! Node-level datasets on disk and synthetic generators.
//!
//! All files are tab-separated with `#` comments:
//!
//! | file     | line                          |
//! |----------|-------------------------------|
//! | edges    | `src<TAB>dst`                 |
//! | features | `id<TAB>f1<TAB>f2...`         |
//! | labels   | `id<TAB>class`                |
//! | targets  | `id<TAB>t1<TAB>t2...`         |
//! | splits   | `id<TAB>train\|val\|test`     |
//!
//! Node ids are arbitrary strings. Dense indices follow the order of the
//! features file.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_float;
use crate::graph::Graph;
use crate::rng::Rng;
use crate::tensor::Matrix;
use crate::training::{SplitSpec, Targets};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    /// Original id of each dense index.
    pub node_ids: Vec<String>,
    pub features: Matrix,
    pub targets: Option<Targets>,
    pub splits: Option<SplitSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub targets: Option<PathBuf>,
    #[serde(default)]
    pub splits: Option<PathBuf>,
}

impl DatasetPaths {
    /// The file names [`Dataset::save`] writes into `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            edges: dir.join("edges.tsv"),
            features: dir.join("features.tsv"),
            labels: Some(dir.join("labels.tsv")),
            targets: Some(dir.join("targets.tsv")),
            splits: Some(dir.join("splits.tsv")),
        }
    }

    /// Same as [`in_dir`](Self::in_dir) but keeps only optional files that
    /// exist.
    pub fn existing_in_dir(dir: &Path) -> Self {
        let mut p = Self::in_dir(dir);
        for slot in [&mut p.labels, &mut p.targets, &mut p.splits] {
            if slot.as_ref().is_some_and(|f| !f.exists()) {
                *slot = None;
            }
        }
        p
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Non-comment lines as `(line number, fields)`.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(n, line)| {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            None
        } else {
            Some((n + 1, line.split('\t').map(str::trim).collect()))
        }
    })
}

fn parse_err(path: &Path, line: usize, message: impl std::fmt::Display) -> Error {
    Error::Parse {
        line,
        message: format!("{}: {message}", path.display()),
    }
}

fn parse_floats(path: &Path, line: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| parse_err(path, line, format!("not a number: {f:?}")))
        })
        .collect()
}

/// Per-node rows keyed by id. Every node must appear exactly once.
fn read_node_rows<'a>(
    path: &Path,
    text: &'a str,
    index: &HashMap<String, usize>,
    what: &str,
) -> Result<Vec<(usize, usize, Vec<&'a str>)>> {
    let mut seen = vec![false; index.len()];
    let mut rows = Vec::new();
    for (line, fields) in records(text) {
        if fields.len() < 2 {
            return Err(parse_err(
                path,
                line,
                format!("expected \"id<TAB>value\", got {} field(s)", fields.len()),
            ));
        }
        let i = *index
            .get(fields[0])
            .ok_or_else(|| parse_err(path, line, format!("unknown node id {:?}", fields[0])))?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(parse_err(path, line, format!("duplicate node id {:?}", fields[0])));
        }
        rows.push((line, i, fields[1..].to_vec()));
    }
    if rows.len() != index.len() {
        return Err(Error::CountMismatch {
            what: what.into(),
            found: rows.len(),
            expected: index.len(),
        });
    }
    Ok(rows)
}

/// Loads and validates a dataset. The node set is the union of ids in the
/// features and edges files, so the features file must list every node.
pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let feat_text = read(&paths.features)?;
    let mut node_ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut feat_rows: Vec<Vec<f64>> = Vec::new();
    for (line, fields) in records(&feat_text) {
        if fields.len() < 2 {
            return Err(parse_err(
                &paths.features,
                line,
                "expected an id followed by at least one feature",
            ));
        }
        if index.contains_key(fields[0]) {
            return Err(parse_err(
                &paths.features,
                line,
                format!("duplicate node id {:?}", fields[0]),
            ));
        }
        let row = parse_floats(&paths.features, line, &fields[1..])?;
        if let Some(first) = feat_rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    &paths.features,
                    line,
                    format!("{} features, previous rows have {}", row.len(), first.len()),
                ));
            }
        }
        index.insert(fields[0].to_string(), node_ids.len());
        node_ids.push(fields[0].to_string());
        feat_rows.push(row);
    }
    let num_feature_rows = node_ids.len();

    let edge_text = read(&paths.edges)?;
    let mut pairs = Vec::new();
    for (line, fields) in records(&edge_text) {
        if fields.len() != 2 {
            return Err(parse_err(&paths.edges, line, "expected \"src<TAB>dst\""));
        }
        let mut ends = [0usize; 2];
        for (k, id) in fields.iter().enumerate() {
            ends[k] = match index.get(*id) {
                Some(&i) => i,
                None => {
                    index.insert(id.to_string(), node_ids.len());
                    node_ids.push(id.to_string());
                    node_ids.len() - 1
                }
            };
        }
        if ends[0] == ends[1] {
            return Err(parse_err(&paths.edges, line, format!("self-loop on {:?}", fields[0])));
        }
        pairs.push((ends[0], ends[1]));
    }
    let v = node_ids.len();
    if num_feature_rows != v {
        return Err(Error::CountMismatch {
            what: "features".into(),
            found: num_feature_rows,
            expected: v,
        });
    }
    if v == 0 {
        return Err(Error::InvalidArgument("dataset has no nodes".into()));
    }
    let graph = Graph::from_edge_list(&pairs, v)?;
    let m = feat_rows[0].len();
    let features = Matrix::from_vec(v, m, feat_rows.concat());

    let targets = match (&paths.labels, &paths.targets) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidArgument(
                "give either labels or regression targets, not both".into(),
            ))
        }
        (Some(p), None) => {
            let text = read(p)?;
            let mut labels = vec![0usize; v];
            for (line, i, rest) in read_node_rows(p, &text, &index, "labels")? {
                if rest.len() != 1 {
                    return Err(parse_err(p, line, "expected \"id<TAB>class\""));
                }
                labels[i] = rest[0].parse().map_err(|_| {
                    parse_err(
                        p,
                        line,
                        format!("class must be a nonnegative integer, got {:?}", rest[0]),
                    )
                })?;
            }
            let num_classes = labels.iter().max().map_or(0, |&c| c + 1);
            Some(Targets::Classes { labels, num_classes })
        }
        (None, Some(p)) => {
            let text = read(p)?;
            let rows = read_node_rows(p, &text, &index, "targets")?;
            let width = rows[0].2.len();
            let mut t = Matrix::zeros(v, width);
            for (line, i, rest) in rows {
                if rest.len() != width {
                    return Err(parse_err(p, line, format!("{} targets, expected {width}", rest.len())));
                }
                t.row_mut(i).copy_from_slice(&parse_floats(p, line, &rest)?);
            }
            Some(Targets::Values(t))
        }
        (None, None) => None,
    };

    let splits = match &paths.splits {
        Some(p) => {
            let text = read(p)?;
            let mut s = SplitSpec {
                train: vec![],
                val: vec![],
                test: vec![],
            };
            for (line, fields) in records(&text) {
                if fields.len() != 2 {
                    return Err(parse_err(p, line, "expected \"id<TAB>train|val|test\""));
                }
                let i = *index
                    .get(fields[0])
                    .ok_or_else(|| parse_err(p, line, format!("unknown node id {:?}", fields[0])))?;
                match fields[1] {
                    "train" => s.train.push(i),
                    "val" => s.val.push(i),
                    "test" => s.test.push(i),
                    other => return Err(parse_err(p, line, format!("unknown split {other:?}"))),
                }
            }
            for part in [&mut s.train, &mut s.val, &mut s.test] {
                part.sort_unstable();
            }
            s.validate(v)?;
            Some(s)
        }
        None => None,
    };

    Ok(Dataset {
        graph,
        node_ids,
        features,
        targets,
        splits,
    })
}

impl Dataset {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.targets {
            Some(Targets::Classes { num_classes, .. }) => Some(*num_classes),
            _ => None,
        }
    }

    /// Writes the files named by [`DatasetPaths::in_dir`]; optional parts
    /// that are absent are not written.
    pub fn save(&self, dir: &Path) -> Result<DatasetPaths> {
        std::fs::create_dir_all(dir)?;
        let mut paths = DatasetPaths::in_dir(dir);
        let id = |i: usize| self.node_ids[i].as_str();

        let mut s = String::new();
        for (i, j) in self.graph.edge_list() {
            let _ = writeln!(s, "{}\t{}", id(i), id(j));
        }
        std::fs::write(&paths.edges, s)?;

        std::fs::write(&paths.features, rows_text(&self.node_ids, &self.features))?;

        match &self.targets {
            Some(Targets::Classes { labels, .. }) => {
                let mut s = String::new();
                for (i, c) in labels.iter().enumerate() {
                    let _ = writeln!(s, "{}\t{c}", id(i));
                }
                std::fs::write(paths.labels.as_ref().unwrap(), s)?;
                paths.targets = None;
            }
            Some(Targets::Values(t)) => {
                std::fs::write(paths.targets.as_ref().unwrap(), rows_text(&self.node_ids, t))?;
                paths.labels = None;
            }
            None => {
                paths.labels = None;
                paths.targets = None;
            }
        }

        match &self.splits {
            Some(sp) => {
                let mut s = String::new();
                for (name, part) in [("train", &sp.train), ("val", &sp.val), ("test", &sp.test)] {
                    for &i in part {
                        let _ = writeln!(s, "{}\t{name}", id(i));
                    }
                }
                std::fs::write(paths.splits.as_ref().unwrap(), s)?;
            }
            None => paths.splits = None,
        }
        Ok(paths)
    }

    /// `id<TAB>index` for every node.
    pub fn write_node_map(&self, path: &Path) -> Result<()> {
        let mut s = String::from("# id\tindex\n");
        for (i, id) in self.node_ids.iter().enumerate() {
            let _ = writeln!(s, "{id}\t{i}");
        }
        std::fs::write(path, s)?;
        Ok(())
    }
}

fn rows_text(ids: &[String], m: &Matrix) -> String {
    let mut s = String::new();
    for (i, id) in ids.iter().enumerate() {
        s.push_str(id);
        for &x in m.row(i) {
            s.push('\t');
            s.push_str(&fmt_float(x));
        }
        s.push('\n');
    }
    s
}

fn default_ids(v: usize) -> Vec<String> {
    (0..v).map(|i| i.to_string()).collect()
}

/// Stochastic block model with `k` equal-sized communities (node `i` is in
/// community `i·k/v`). Features are the one-hot community plus `N(0, 0.5²)`
/// noise. Splits are 50/25/25.
pub fn gen_sbm(v: usize, k: usize, p_in: f64, p_out: f64, seed: u64) -> Result<Dataset> {
    for (name, p) in [("p_in", p_in), ("p_out", p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {p}")));
        }
    }
    if k == 0 || v < k {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= communities <= nodes, got {k} and {v}"
        )));
    }
    let mut rng = Rng::new(seed);
    let labels: Vec<usize> = (0..v).map(|i| i * k / v).collect();
    let mut pairs = Vec::new();
    for i in 0..v {
        for j in i + 1..v {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.uniform() < p {
                pairs.push((i, j));
            }
        }
    }
    let graph = Graph::from_edge_list(&pairs, v)?;
    let features = Matrix::from_fn(
        v,
        k,
        |i, c| if labels[i] == c { 1.0 } else { 0.0 } + 0.5 * rng.gaussian(),
    );
    let splits = SplitSpec::random(v, 0.5, 0.25, &mut rng);
    Ok(Dataset {
        graph,
        node_ids: default_ids(v),
        features,
        targets: Some(Targets::Classes { labels, num_classes: k }),
        splits: Some(splits),
    })
}

/// `width x height` lattice with `U[0,1]` features and no targets.
pub fn gen_grid(width: usize, height: usize, feature_width: usize, seed: u64) -> Result<Dataset> {
    let graph = Graph::grid(width, height)?;
    let mut rng = Rng::new(seed);
    let features = Matrix::from_fn(graph.num_nodes(), feature_width, |_, _| rng.uniform());
    Ok(Dataset {
        node_ids: default_ids(graph.num_nodes()),
        graph,
        features,
        targets: None,
        splits: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn two_node_toy() {
        let d = tempfile::tempdir().unwrap();
        let paths = DatasetPaths {
            edges: write(d.path(), "e", "# toy\nalice\tbob\n"),
            features: write(d.path(), "f", "bob\t1.5\t2\nalice\t-1\t0\n"),
            labels: Some(write(d.path(), "l", "alice\t1\nbob\t0\n")),
            targets: None,
            splits: Some(write(d.path(), "s", "alice\ttrain\nbob\ttest\n")),
        };
        let ds = load_dataset(&paths).unwrap();
        assert_eq!(ds.num_nodes(), 2);
        assert_eq!(ds.node_ids, ["bob", "alice"]);
        assert!(ds.graph.has_edge(0, 1));
        assert_eq!(ds.features.row(0), &[1.5, 2.0]);
        assert_eq!(
            ds.targets,
            Some(Targets::Classes {
                labels: vec![0, 1],
                num_classes: 2
            })
        );
        assert_eq!(ds.splits.unwrap().train, vec![1]);
    }

    #[test]
    fn feature_count_mismatch_names_both_counts() {
        let d = tempfile::tempdir().unwrap();
        let paths = DatasetPaths {
            edges: write(d.path(), "e", "a\tb\nb\tc\n"),
            features: write(d.path(), "f", "a\t1\nb\t2\n"),
            labels: None,
            targets: None,
            splits: None,
        };
        let err = load_dataset(&paths).unwrap_err();
        assert!(
            matches!(
                err,
                Error::CountMismatch {
                    found: 2,
                    expected: 3,
                    ..
                }
            ),
            "{err}"
        );
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('3'), "{msg}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let d = tempfile::tempdir().unwrap();
        let paths = DatasetPaths {
            edges: write(d.path(), "e", "a\tb\n"),
            features: write(d.path(), "f", "# header\na\t1\nb\tx\n"),
            labels: None,
            targets: None,
            splits: None,
        };
        assert!(matches!(load_dataset(&paths), Err(Error::Parse { line: 3, .. })));

        let paths = DatasetPaths {
            features: write(d.path(), "f2", "a\t1\nb\t2\n"),
            labels: Some(write(d.path(), "l", "a\t0\nb\t-1\n")),
            ..paths
        };
        assert!(matches!(load_dataset(&paths), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn missing_labels_are_a_count_mismatch() {
        let d = tempfile::tempdir().unwrap();
        let paths = DatasetPaths {
            edges: write(d.path(), "e", "a\tb\n"),
            features: write(d.path(), "f", "a\t1\nb\t2\n"),
            labels: Some(write(d.path(), "l", "a\t0\n")),
            targets: None,
            splits: None,
        };
        assert!(matches!(
            load_dataset(&paths),
            Err(Error::CountMismatch {
                found: 1,
                expected: 2,
                ..
            })
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let ds = gen_sbm(30, 3, 0.4, 0.05, 7).unwrap();
        let paths = ds.save(d.path()).unwrap();
        assert_eq!(load_dataset(&paths).unwrap(), ds);
        assert_eq!(load_dataset(&DatasetPaths::existing_in_dir(d.path())).unwrap(), ds);

        let mut reg = gen_grid(3, 3, 2, 1).unwrap();
        reg.node_ids = (0..9).map(|i| format!("n{i}")).collect();
        reg.targets = Some(Targets::Values(Matrix::from_fn(9, 2, |i, c| (i * c) as f64 / 7.0)));
        let d2 = tempfile::tempdir().unwrap();
        let paths = reg.save(d2.path()).unwrap();
        assert_eq!(load_dataset(&paths).unwrap(), reg);
    }

    #[test]
    fn sbm_extremes_are_cliques() {
        let ds = gen_sbm(10, 2, 1.0, 0.0, 3).unwrap();
        assert_eq!(ds.graph.num_edges(), 2 * 10);
        for i in 0..10 {
            for j in 0..10 {
                assert_eq!(ds.graph.has_edge(i, j), i != j && (i < 5) == (j < 5));
            }
        }
    }

    #[test]
    fn sbm_is_deterministic_and_rejects_bad_probabilities() {
        assert_eq!(
            gen_sbm(200, 2, 0.1, 0.01, 42).unwrap(),
            gen_sbm(200, 2, 0.1, 0.01, 42).unwrap()
        );
        assert!(gen_sbm(10, 2, 1.5, 0.0, 0).is_err());
        assert!(gen_sbm(10, 2, 0.5, -0.1, 0).is_err());
        assert!(gen_sbm(10, 2, f64::NAN, 0.1, 0).is_err());
    }

    #[test]
    fn sbm_edge_count_matches_binomial() {
        let (v, p_in, p_out) = (200usize, 0.1, 0.01);
        let same = 2 * (100 * 99 / 2);
        let cross = 100 * 100;
        let mean = same as f64 * p_in + cross as f64 * p_out;
        let var = same as f64 * p_in * (1.0 - p_in) + cross as f64 * p_out * (1.0 - p_out);
        let seeds = 20;
        let total: usize = (0..seeds)
            .map(|s| gen_sbm(v, 2, p_in, p_out, s).unwrap().graph.num_edges())
            .sum();
        let avg = total as f64 / seeds as f64;
        let sd_of_mean = (var / seeds as f64).sqrt();
        assert!((avg - mean).abs() <= 3.0 * sd_of_mean, "{avg} vs {mean} ± {sd_of_mean}");
    }
}
