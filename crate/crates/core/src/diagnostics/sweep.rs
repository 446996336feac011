//! Layer-1 weight-gradient statistics across depths.

use serde::{Deserialize, Serialize};

use super::bounds::gradient_bound_terms;
use super::scalar::{ScalarModel, ScalarVariant};
use crate::autodiff::Activation;
use crate::error::Result;
use crate::graph::Graph;
use crate::rng::{split_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// `Δt = 1/N`.
    InverseDepth,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthSweepSpec {
    pub depths: Vec<usize>,
    pub num_nodes: usize,
    /// Probability of each extra chord on top of the ring.
    pub chord_prob: f64,
    pub step: StepMode,
    /// Oscillator weights are drawn from `U[-w, w]`.
    pub graphcon_weight: f64,
    /// Stacked weights are drawn from `U[-w, w]`; `w < 1` makes every layer
    /// a contraction.
    pub baseline_weight: f64,
}

impl Default for DepthSweepSpec {
    fn default() -> Self {
        Self {
            depths: vec![10, 20, 40, 80],
            num_nodes: 8,
            chord_prob: 0.3,
            step: StepMode::InverseDepth,
            graphcon_weight: 1.0,
            baseline_weight: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthGradientRow {
    pub n_layers: usize,
    pub model: String,
    /// `max_k |∂J/∂wₖ¹|`.
    pub max_grad: f64,
    /// `min_k |∂J/∂wₖ¹|` over nonzero entries; zero if all vanish.
    pub min_nonzero_grad: f64,
    /// Gradient bound, when its step-size precondition holds.
    pub bound: Option<f64>,
}

/// Ring on `v` nodes plus independent chords with probability `p`.
pub fn ring_with_chords(v: usize, p: f64, rng: &mut Rng) -> Result<Graph> {
    let mut pairs: Vec<(usize, usize)> = (0..v).map(|i| (i, (i + 1) % v)).filter(|(i, j)| i != j).collect();
    for i in 0..v {
        for j in i + 2..v {
            if !(i == 0 && j == v - 1) && rng.uniform() < p {
                pairs.push((i, j));
            }
        }
    }
    Graph::from_edge_list(&pairs, v)
}

/// The graph, initial state and target are shared across depths; weights
/// are drawn per depth from an independent stream.
pub fn depth_gradient_sweep(spec: &DepthSweepSpec, seed: u64) -> Result<Vec<DepthGradientRow>> {
    let mut rng = Rng::new(seed);
    let g = ring_with_chords(spec.num_nodes, spec.chord_prob, &mut rng)?;
    let v = spec.num_nodes;
    let x0: Vec<f64> = (0..v).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let y0: Vec<f64> = (0..v).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let target: Vec<f64> = (0..v).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let mut rows = Vec::new();
    for (idx, &n) in spec.depths.iter().enumerate() {
        let dt = match spec.step {
            StepMode::InverseDepth => 1.0 / n as f64,
            StepMode::Fixed(dt) => dt,
        };
        let mut wrng = Rng::new(split_seed(seed, idx as u64));
        for (variant, w_max, name, step) in [
            (ScalarVariant::Oscillator, spec.graphcon_weight, "graphcon", dt),
            (ScalarVariant::Stacked, spec.baseline_weight, "baseline", 1.0),
        ] {
            let weights = (0..n)
                .map(|_| (0..v).map(|_| wrng.uniform_in(-w_max, w_max)).collect())
                .collect();
            let model =
                ScalarModel::new(g.clone(), weights, step, Activation::Tanh, target.clone())?.with_variant(variant);
            let (_, grads) = model.weight_gradients(&x0, &y0)?;
            let first = &grads[0];
            let max_grad = first.iter().map(|x| x.abs()).fold(0.0, f64::max);
            let min_nonzero_grad = first
                .iter()
                .map(|x| x.abs())
                .filter(|&x| x > 0.0)
                .fold(f64::INFINITY, f64::min);
            let bound = (variant == ScalarVariant::Oscillator)
                .then(|| gradient_bound_terms(&model, &x0, &y0))
                .filter(|t| t.precondition_holds())
                .map(|t| t.rhs());
            rows.push(DepthGradientRow {
                n_layers: n,
                model: name.to_string(),
                max_grad,
                min_nonzero_grad: if min_nonzero_grad.is_finite() {
                    min_nonzero_grad
                } else {
                    0.0
                },
                bound,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_with_chords_contains_ring() {
        let mut rng = Rng::new(0);
        let g = ring_with_chords(8, 0.3, &mut rng).unwrap();
        for i in 0..8 {
            assert!(g.has_edge(i, (i + 1) % 8));
        }
        let empty = ring_with_chords(5, 0.0, &mut rng).unwrap();
        assert_eq!(empty.num_edges(), 5);
    }

    #[test]
    fn single_layer_is_finite() {
        let spec = DepthSweepSpec {
            depths: vec![1],
            ..DepthSweepSpec::default()
        };
        let rows = depth_gradient_sweep(&spec, 3).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.max_grad.is_finite() && r.max_grad > 0.0));
    }

    #[test]
    fn contractive_stack_vanishes_and_oscillator_does_not() {
        let spec = DepthSweepSpec {
            depths: vec![20, 40],
            ..DepthSweepSpec::default()
        };
        let rows = depth_gradient_sweep(&spec, 11).unwrap();
        let get = |n: usize, m: &str| rows.iter().find(|r| r.n_layers == n && r.model == m).unwrap().max_grad;
        assert!(get(40, "baseline") / get(20, "baseline") < 0.1);
        let ratio = get(40, "graphcon") / get(20, "graphcon");
        assert!(ratio > 0.1 && ratio < 10.0);
    }
}
