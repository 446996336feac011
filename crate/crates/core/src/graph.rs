//! Undirected graphs in CSR form, normalized adjacency views and the
//! Dirichlet energy.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Undirected graph stored as a symmetric CSR adjacency without self-loops.
///
/// Every undirected edge `{i, j}` appears twice, once as `i -> j` and once as
/// `j -> i`. Neighbour lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

impl Graph {
    /// Builds a graph from undirected pairs. Duplicates and reversed pairs
    /// collapse; the order of `pairs` does not matter.
    pub fn from_edge_list(pairs: &[(usize, usize)], num_nodes: usize) -> Result<Self> {
        let mut directed = Vec::with_capacity(pairs.len() * 2);
        for &(i, j) in pairs {
            if i >= num_nodes || j >= num_nodes {
                return Err(Error::NodeOutOfRange {
                    node: i.max(j),
                    num_nodes,
                });
            }
            if i == j {
                return Err(Error::SelfLoop(i));
            }
            directed.push((i, j));
            directed.push((j, i));
        }
        directed.sort_unstable();
        directed.dedup();

        let mut row_offsets = vec![0usize; num_nodes + 1];
        for &(i, _) in &directed {
            row_offsets[i + 1] += 1;
        }
        for i in 0..num_nodes {
            row_offsets[i + 1] += row_offsets[i];
        }
        let col_indices = directed.into_iter().map(|(_, j)| j).collect();
        Ok(Self {
            num_nodes,
            row_offsets,
            col_indices,
        })
    }

    /// `width x height` lattice with 4-neighbour connectivity. Node id is
    /// `row * width + col`.
    pub fn grid(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        let mut pairs = Vec::new();
        for r in 0..height {
            for c in 0..width {
                let i = r * width + c;
                if c + 1 < width {
                    pairs.push((i, i + 1));
                }
                if r + 1 < height {
                    pairs.push((i, i + width));
                }
            }
        }
        Self::from_edge_list(&pairs, width * height)
    }

    /// Cycle on `n` nodes. `n = 2` gives a single edge, `n = 1` an isolated node.
    pub fn ring(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("ring needs at least one node".into()));
        }
        let pairs: Vec<_> = match n {
            1 => vec![],
            2 => vec![(0, 1)],
            _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        };
        Self::from_edge_list(&pairs, n)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of directed pairs (twice the undirected edge count).
    pub fn num_directed_pairs(&self) -> usize {
        self.col_indices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.col_indices.len() / 2
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// Undirected edges with `i < j`, sorted.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        (0..self.num_nodes)
            .flat_map(|i| self.neighbors(i).iter().filter(move |&&j| i < j).map(move |&j| (i, j)))
            .collect()
    }

    pub fn degrees(&self, with_self_loops: bool) -> Vec<usize> {
        let extra = usize::from(with_self_loops);
        (0..self.num_nodes).map(|i| self.neighbors(i).len() + extra).collect()
    }

    /// Neighbourhoods with a self-loop inserted in every row.
    pub fn with_self_loops(&self) -> Neighborhoods {
        let mut row_offsets = Vec::with_capacity(self.num_nodes + 1);
        let mut sources = Vec::with_capacity(self.col_indices.len() + self.num_nodes);
        row_offsets.push(0);
        for i in 0..self.num_nodes {
            let mut row: Vec<usize> = self.neighbors(i).to_vec();
            row.push(i);
            row.sort_unstable();
            sources.extend(row);
            row_offsets.push(sources.len());
        }
        let mut targets = Vec::with_capacity(sources.len());
        for i in 0..self.num_nodes {
            targets.extend(std::iter::repeat_n(i, row_offsets[i + 1] - row_offsets[i]));
        }
        Neighborhoods {
            num_nodes: self.num_nodes,
            row_offsets,
            sources,
            targets,
        }
    }

    pub fn normalized_adjacency(&self, kind: NormKind) -> NormalizedAdjacency {
        NormalizedAdjacency::new(self, kind)
    }

    /// Dense 0/1 adjacency (no self-loops). Intended for small graphs and oracles.
    pub fn dense_adjacency(&self) -> Matrix {
        let n = self.num_nodes;
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for &j in self.neighbors(i) {
                a[(i, j)] = 1.0;
            }
        }
        a
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let pairs: Vec<_> = self.edge_list().into_iter().map(|(i, j)| (perm[i], perm[j])).collect();
        Self::from_edge_list(&pairs, self.num_nodes)
    }

    /// Reads a tab-separated edge list. Lines starting with `#` and blank
    /// lines are skipped. Node ids must already be dense and 0-based.
    pub fn read_edge_list(path: &Path, num_nodes: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let pairs = parse_edge_lines(&text)?;
        Self::from_edge_list(&pairs, num_nodes)
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, j) in self.edge_list() {
            out.push_str(&format!("{i}\t{j}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

pub(crate) fn parse_edge_lines(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let parse = |s: Option<&str>| -> Result<usize> {
            s.and_then(|s| s.trim().parse().ok()).ok_or_else(|| Error::Parse {
                line: lineno + 1,
                message: format!("expected \"src<TAB>dst\", got {line:?}"),
            })
        };
        let i = parse(parts.next())?;
        let j = parse(parts.next())?;
        pairs.push((i, j));
    }
    Ok(pairs)
}

/// CSR layout of `N(i) ∪ {i}` for every node. Pair `p` runs from
/// `sources[p]` into `targets[p]`; rows are grouped by target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhoods {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    sources: Vec<usize>,
    targets: Vec<usize>,
}

impl Neighborhoods {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_pairs(&self) -> usize {
        self.sources.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.row_offsets[i]..self.row_offsets[i + 1]
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// `D̂^{-1/2} Â D̂^{-1/2}` with `Â = A + I`.
    SymGcn,
    /// `D̂^{-1} Â`.
    RowStochastic,
}

/// Self-loop-augmented adjacency with one weight per pair of the
/// [`Neighborhoods`] layout.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    kind: NormKind,
    layout: Arc<Neighborhoods>,
    weights: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn new(g: &Graph, kind: NormKind) -> Self {
        let layout = g.with_self_loops();
        let deg: Vec<f64> = g.degrees(true).into_iter().map(|d| d as f64).collect();
        let weights = layout
            .sources
            .iter()
            .zip(&layout.targets)
            .map(|(&j, &i)| match kind {
                NormKind::SymGcn => 1.0 / (deg[i] * deg[j]).sqrt(),
                NormKind::RowStochastic => 1.0 / deg[i],
            })
            .collect();
        Self {
            kind,
            layout: Arc::new(layout),
            weights,
        }
    }

    pub fn kind(&self) -> NormKind {
        self.kind
    }

    pub fn layout(&self) -> &Neighborhoods {
        &self.layout
    }

    pub fn shared_layout(&self) -> Arc<Neighborhoods> {
        Arc::clone(&self.layout)
    }

    pub fn num_nodes(&self) -> usize {
        self.layout.num_nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight of `i <- j`, zero if the pair is absent.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let row = self.layout.row(i);
        match self.layout.sources[row.clone()].binary_search(&j) {
            Ok(k) => self.weights[row.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let n = self.num_nodes();
        let mut a = Matrix::zeros(n, n);
        for p in 0..self.weights.len() {
            a[(self.layout.targets[p], self.layout.sources[p])] = self.weights[p];
        }
        a
    }

    /// `y_i = Σ_j w_ij x_j` on plain matrices.
    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut y = Matrix::zeros(x.rows(), x.cols());
        for p in 0..self.weights.len() {
            let (i, j, w) = (self.layout.targets[p], self.layout.sources[p], self.weights[p]);
            for c in 0..x.cols() {
                y[(i, c)] += w * x[(j, c)];
            }
        }
        y
    }
}

/// `E(X) = (1/v) Σ_i Σ_{j ∈ N(i)} ‖X_i - X_j‖²`, summed over directed pairs
/// so each undirected edge contributes twice.
pub fn dirichlet_energy(g: &Graph, x: &Matrix) -> Result<f64> {
    if x.rows() != g.num_nodes() {
        return Err(Error::Shape(format!(
            "dirichlet energy: features have {} rows, graph has {} nodes",
            x.rows(),
            g.num_nodes()
        )));
    }
    if g.num_nodes() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..g.num_nodes() {
        let xi = x.row(i);
        for &j in g.neighbors(i) {
            total += xi.iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    Ok(total / g.num_nodes() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path2() -> Graph {
        Graph::from_edge_list(&[(0, 1)], 2).unwrap()
    }

    #[test]
    fn smallest_edge_and_dedup() {
        let g = path2();
        assert_eq!(g.num_directed_pairs(), 2);
        assert!(g.has_edge(0, 1) && g.has_edge(1, 0));
        let h = Graph::from_edge_list(&[(0, 1), (1, 0)], 2).unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Graph::from_edge_list(&[(0, 2)], 2),
            Err(Error::NodeOutOfRange { .. })
        ));
        assert!(matches!(Graph::from_edge_list(&[(1, 1)], 2), Err(Error::SelfLoop(1))));
        assert!(Graph::grid(0, 3).is_err());
    }

    #[test]
    fn grid_counts() {
        let g = Graph::grid(2, 1).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges()), (2, 1));
        let g = Graph::grid(10, 10).unwrap();
        assert_eq!(g.num_nodes(), 100);
        assert_eq!(g.num_edges(), 10 * 9 + 10 * 9);
        assert_eq!(g.num_directed_pairs(), 360);
        let g = Graph::grid(3, 3).unwrap();
        let d = g.degrees(false);
        assert_eq!(d[0], 2);
        assert_eq!(d[4], 4);
        assert_eq!(g.degrees(true)[4], 5);
    }

    #[test]
    fn degrees_of_path() {
        assert_eq!(path2().degrees(false), vec![1, 1]);
        assert_eq!(path2().degrees(true), vec![2, 2]);
    }

    #[test]
    fn normalized_path_of_two() {
        let sym = path2().normalized_adjacency(NormKind::SymGcn);
        assert_eq!(sym.weights().len(), 4);
        assert!(sym.weights().iter().all(|&w| (w - 0.5).abs() < 1e-15));
        let row = path2().normalized_adjacency(NormKind::RowStochastic);
        let dense = row.to_dense();
        assert_eq!(dense.data(), &[0.5, 0.5, 0.5, 0.5]);
        let iso = Graph::from_edge_list(&[], 1).unwrap();
        for kind in [NormKind::SymGcn, NormKind::RowStochastic] {
            assert_eq!(iso.normalized_adjacency(kind).weights(), &[1.0]);
        }
    }

    #[test]
    fn normalization_invariants_on_grid() {
        let g = Graph::grid(4, 3).unwrap();
        let row = g.normalized_adjacency(NormKind::RowStochastic).to_dense();
        for i in 0..g.num_nodes() {
            let s: f64 = row.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let sym = g.normalized_adjacency(NormKind::SymGcn).to_dense();
        for i in 0..g.num_nodes() {
            for j in 0..g.num_nodes() {
                assert_eq!(sym[(i, j)], sym[(j, i)]);
            }
        }
    }

    #[test]
    fn dirichlet_hand_values() {
        let g = path2();
        let x = Matrix::from_vec(2, 1, vec![0.0, 1.0]);
        assert_eq!(dirichlet_energy(&g, &x).unwrap(), 1.0);
        let c = Matrix::from_vec(2, 2, vec![3.0, 1.0, 3.0, 1.0]);
        assert_eq!(dirichlet_energy(&g, &c).unwrap(), 0.0);
        assert!(dirichlet_energy(&g, &Matrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn dirichlet_matches_dense_double_loop() {
        let g = Graph::grid(10, 10).unwrap();
        let mut rng = crate::rng::Rng::new(7);
        let x = Matrix::from_fn(100, 3, |_, _| rng.uniform());
        let a = g.dense_adjacency();
        let mut oracle = 0.0;
        for i in 0..100 {
            for j in 0..100 {
                if a[(i, j)] == 1.0 {
                    for c in 0..3 {
                        oracle += (x[(i, c)] - x[(j, c)]).powi(2);
                    }
                }
            }
        }
        oracle /= 100.0;
        let e = dirichlet_energy(&g, &x).unwrap();
        assert!((e - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }

    #[test]
    fn dirichlet_zero_iff_constant_on_connected() {
        let g = Graph::ring(5).unwrap();
        let x = Matrix::from_vec(5, 1, vec![1.0, 1.0, 1.0, 1.0, 1.0 + 1e-9]);
        assert!(dirichlet_energy(&g, &x).unwrap() > 0.0);
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (2usize..12).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..30).prop_map(move |pairs| {
                let pairs: Vec<_> = pairs.into_iter().filter(|(i, j)| i != j).collect();
                Graph::from_edge_list(&pairs, n).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn csr_round_trip(g in arb_graph()) {
            let h = Graph::from_edge_list(&g.edge_list(), g.num_nodes()).unwrap();
            prop_assert_eq!(&g, &h);
            for i in 0..g.num_nodes() {
                for &j in g.neighbors(i) {
                    prop_assert!(g.has_edge(j, i));
                    prop_assert!(i != j);
                }
            }
        }

        #[test]
        fn dirichlet_translation_invariant(g in arb_graph(), shift in -5.0f64..5.0, seed in 0u64..1000) {
            let mut rng = crate::rng::Rng::new(seed);
            let x = Matrix::from_fn(g.num_nodes(), 2, |_, _| rng.uniform());
            let y = Matrix::from_fn(g.num_nodes(), 2, |i, c| x[(i, c)] + shift * (c as f64 + 1.0));
            let ex = dirichlet_energy(&g, &x).unwrap();
            let ey = dirichlet_energy(&g, &y).unwrap();
            prop_assert!((ex - ey).abs() <= 1e-12 * ex.max(1.0) * 10.0);
        }

        #[test]
        fn row_stochastic_rows_sum_to_one(g in arb_graph()) {
            let a = g.normalized_adjacency(NormKind::RowStochastic);
            let d = a.to_dense();
            for i in 0..g.num_nodes() {
                let s: f64 = d.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
            let s = g.normalized_adjacency(NormKind::SymGcn);
            for i in 0..g.num_nodes() {
                for j in 0..g.num_nodes() {
                    prop_assert_eq!(s.weight(i, j), s.weight(j, i));
                }
            }
        }
    }
}
