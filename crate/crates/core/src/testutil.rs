use crate::graph::Graph;
use crate::rng::Rng;
use crate::tensor::Matrix;

/// Erdős–Rényi graph on `n` nodes.
pub fn random_graph(rng: &mut Rng, n: usize, p: f64) -> Graph {
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.uniform() < p {
                pairs.push((i, j));
            }
        }
    }
    Graph::from_edge_list(&pairs, n).unwrap()
}

pub fn rand_matrix(rng: &mut Rng, r: usize, c: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.uniform_in(lo, hi))
}
