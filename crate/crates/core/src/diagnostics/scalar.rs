//! Scalar-feature oscillator model with one learnable weight per node and
//! layer, used for exact gradient analysis.
//!
//! With `α = γ = 1` and self-loop-inclusive degrees `d̂`:
//!
//! ```text
//! Cᵢⁿ⁻¹ = wᵢⁿXᵢⁿ⁻¹/d̂ᵢ + Σ_{j∈N(i)} wⱼⁿXⱼⁿ⁻¹/√(d̂ᵢd̂ⱼ)
//! Yᵢⁿ   = (1 − Δt)Yᵢⁿ⁻¹ + Δt·σ(Cᵢⁿ⁻¹) − Δt·Xᵢⁿ⁻¹
//! Xᵢⁿ   = Xᵢⁿ⁻¹ + Δt·Yᵢⁿ
//! J     = (1/2v) Σᵢ (Xᵢᴺ − X̄ᵢ)²
//! ```
//!
//! Jacobians use the interleaved state `Z = [X₁, Y₁, …, X_v, Y_v]`.

use std::sync::Arc;

use crate::autodiff::{Activation, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{Graph, NormKind, NormalizedAdjacency};
use crate::rng::Rng;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarVariant {
    /// The oscillator update above.
    Oscillator,
    /// Plain stacked convolution `Xⁿ = σ(Cⁿ⁻¹)`.
    Stacked,
}

#[derive(Debug, Clone)]
pub struct ScalarModel {
    graph: Graph,
    adj: Arc<NormalizedAdjacency>,
    degrees: Vec<f64>,
    /// `weights[n - 1][i]` is `wᵢⁿ`.
    pub weights: Vec<Vec<f64>>,
    pub dt: f64,
    pub activation: Activation,
    pub target: Vec<f64>,
    pub variant: ScalarVariant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarTrajectory {
    pub xs: Vec<Vec<f64>>,
    /// Empty for the stacked variant.
    pub ys: Vec<Vec<f64>>,
    /// `cs[n - 1]` is `Cⁿ⁻¹`.
    pub cs: Vec<Vec<f64>>,
}

/// Leaves and states of a scalar rollout recorded on a tape.
#[derive(Debug, Clone)]
pub struct ScalarTape {
    pub weights: Vec<Var>,
    pub x0: Var,
    pub y0: Var,
    pub xs: Vec<Var>,
    pub ys: Vec<Var>,
    pub loss: Var,
}

fn vec_of(m: &Matrix) -> Vec<f64> {
    m.data().to_vec()
}

impl ScalarModel {
    pub fn new(
        graph: Graph,
        weights: Vec<Vec<f64>>,
        dt: f64,
        activation: Activation,
        target: Vec<f64>,
    ) -> Result<Self> {
        let v = graph.num_nodes();
        if weights.iter().any(|w| w.len() != v) || target.len() != v {
            return Err(Error::Shape(format!(
                "scalar model on {v} nodes needs weight and target vectors of length {v}"
            )));
        }
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dt must be finite and nonnegative, got {dt}"
            )));
        }
        let adj = Arc::new(graph.normalized_adjacency(NormKind::SymGcn));
        let degrees = graph.degrees(true).into_iter().map(|d| d as f64).collect();
        Ok(Self {
            graph,
            adj,
            degrees,
            weights,
            dt,
            activation,
            target,
            variant: ScalarVariant::Oscillator,
        })
    }

    /// Weights drawn from `U[-w_max, w_max]` and targets from `U[-1, 1]`.
    pub fn random(
        graph: Graph,
        n_layers: usize,
        dt: f64,
        activation: Activation,
        w_max: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let v = graph.num_nodes();
        let weights = (0..n_layers)
            .map(|_| (0..v).map(|_| rng.uniform_in(-w_max, w_max)).collect())
            .collect();
        let target = (0..v).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        Self::new(graph, weights, dt, activation, target)
    }

    pub fn with_variant(mut self, variant: ScalarVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Self-loop-inclusive degrees.
    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    fn check_state(&self, x: &[f64], y: &[f64]) -> Result<()> {
        let v = self.num_nodes();
        if x.len() != v || y.len() != v {
            return Err(Error::Shape(format!(
                "initial state lengths {} and {} for {v} nodes",
                x.len(),
                y.len()
            )));
        }
        Ok(())
    }

    /// `Cⁿ⁻¹` for layer `n` (1-based) evaluated at `x`.
    pub fn preactivation(&self, n: usize, x: &[f64]) -> Vec<f64> {
        let w = &self.weights[n - 1];
        let d = &self.degrees;
        (0..self.num_nodes())
            .map(|i| {
                let mut c = w[i] * x[i] / d[i];
                for &j in self.graph.neighbors(i) {
                    c += w[j] * x[j] / (d[i] * d[j]).sqrt();
                }
                c
            })
            .collect()
    }

    pub fn forward(&self, x0: &[f64], y0: &[f64]) -> Result<ScalarTrajectory> {
        self.check_state(x0, y0)?;
        let dt = self.dt;
        let mut xs = vec![x0.to_vec()];
        let mut ys = vec![y0.to_vec()];
        let mut cs = Vec::with_capacity(self.num_layers());
        for n in 1..=self.num_layers() {
            let x = &xs[n - 1];
            let c = self.preactivation(n, x);
            let sig: Vec<f64> = c.iter().map(|&z| self.activation.apply(z)).collect();
            match self.variant {
                ScalarVariant::Oscillator => {
                    let y = &ys[n - 1];
                    let y_new: Vec<f64> = (0..x.len())
                        .map(|i| (1.0 - dt) * y[i] + dt * sig[i] - dt * x[i])
                        .collect();
                    let x_new: Vec<f64> = (0..x.len()).map(|i| x[i] + dt * y_new[i]).collect();
                    ys.push(y_new);
                    xs.push(x_new);
                }
                ScalarVariant::Stacked => xs.push(sig),
            }
            if !xs[n].iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { layer: n });
            }
            cs.push(c);
        }
        if self.variant == ScalarVariant::Stacked {
            ys.clear();
        }
        Ok(ScalarTrajectory { xs, ys, cs })
    }

    pub fn loss(&self, tr: &ScalarTrajectory) -> f64 {
        let xn = tr.xs.last().expect("trajectory is never empty");
        let v = self.num_nodes() as f64;
        xn.iter().zip(&self.target).map(|(x, t)| (x - t) * (x - t)).sum::<f64>() / (2.0 * v)
    }

    /// Records the rollout and its loss on `tape`.
    pub fn tape_forward(&self, tape: &Tape, x0: &[f64], y0: &[f64]) -> Result<ScalarTape> {
        self.check_state(x0, y0)?;
        let dt = self.dt;
        let weights: Vec<Var> = self.weights.iter().map(|w| tape.leaf(Matrix::column(w))).collect();
        let x0v = tape.leaf(Matrix::column(x0));
        let y0v = tape.leaf(Matrix::column(y0));
        let (mut x, mut y) = (x0v, y0v);
        let mut xs = vec![x];
        let mut ys = vec![y];
        for w in &weights {
            let c = tape.spmm(&self.adj, tape.hadamard(*w, x)?)?;
            let s = tape.activation(c, self.activation);
            match self.variant {
                ScalarVariant::Oscillator => {
                    let rate = tape.lincomb(&[(1.0, s), (-1.0, x), (-1.0, y)])?;
                    y = tape.lincomb(&[(1.0, y), (dt, rate)])?;
                    x = tape.lincomb(&[(1.0, x), (dt, y)])?;
                    ys.push(y);
                }
                ScalarVariant::Stacked => x = s,
            }
            xs.push(x);
        }
        if self.variant == ScalarVariant::Stacked {
            ys.clear();
        }
        let loss = tape.mse_loss(x, &Matrix::column(&self.target), None)?;
        Ok(ScalarTape {
            weights,
            x0: x0v,
            y0: y0v,
            xs,
            ys,
            loss,
        })
    }

    /// `(J, ∂J/∂wⁿ)` with `grads[n - 1][k] = ∂J/∂wₖⁿ`.
    pub fn weight_gradients(&self, x0: &[f64], y0: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
        let tape = Tape::new();
        let st = self.tape_forward(&tape, x0, y0)?;
        let g = tape.backward(st.loss)?;
        let loss = tape.value(st.loss)[(0, 0)];
        Ok((loss, st.weights.iter().map(|&w| vec_of(&g.get(w))).collect()))
    }

    /// Exact `∂Zⁿ/∂Zⁿ⁻¹ = I + Δt·E + Δt²·F` for layer `n` (1-based).
    pub fn layer_jacobian_exact(&self, n: usize, tr: &ScalarTrajectory) -> Matrix {
        let (e, f) = self.jacobian_parts(n, tr);
        let dt = self.dt;
        let mut j = Matrix::identity(2 * self.num_nodes());
        j.axpy(dt, &e);
        j.axpy(dt * dt, &f);
        j
    }

    /// The `E` and `F` matrices of layer `n` (1-based).
    pub fn jacobian_parts(&self, n: usize, tr: &ScalarTrajectory) -> (Matrix, Matrix) {
        let v = self.num_nodes();
        let w = &self.weights[n - 1];
        let c = &tr.cs[n - 1];
        let d = &self.degrees;
        let mut e = Matrix::zeros(2 * v, 2 * v);
        let mut f = Matrix::zeros(2 * v, 2 * v);
        for i in 0..v {
            let (xi, yi) = (2 * i, 2 * i + 1);
            let sp = self.activation.derivative(c[i]);
            let self_term = -1.0 + sp * w[i] / d[i];
            e[(xi, yi)] = 1.0;
            e[(yi, yi)] = -1.0;
            e[(yi, xi)] = self_term;
            f[(xi, xi)] = self_term;
            f[(xi, yi)] = -1.0;
            for &j in self.graph.neighbors(i) {
                let cross = sp * w[j] / (d[i] * d[j]).sqrt();
                e[(yi, 2 * j)] = cross;
                f[(xi, 2 * j)] = cross;
            }
        }
        (e, f)
    }

    /// `∂Zᴺ/∂Zˡ` as the ordered product of exact layer Jacobians.
    pub fn jacobian_product(&self, from_layer: usize, tr: &ScalarTrajectory) -> Result<Matrix> {
        let mut acc = Matrix::identity(2 * self.num_nodes());
        for n in from_layer + 1..=self.num_layers() {
            acc = self.layer_jacobian_exact(n, tr).matmul(&acc)?;
        }
        Ok(acc)
    }

    /// `∂Zᴺ/∂Z⁰` by reverse passes over the tape, one per output entry.
    pub fn tape_jacobian(&self, x0: &[f64], y0: &[f64]) -> Result<Matrix> {
        self.require_oscillator()?;
        let v = self.num_nodes();
        let tape = Tape::new();
        let st = self.tape_forward(&tape, x0, y0)?;
        let (xn, yn) = (*st.xs.last().unwrap(), *st.ys.last().unwrap());
        let mut jac = Matrix::zeros(2 * v, 2 * v);
        for r in 0..2 * v {
            let (out, node) = if r % 2 == 0 { (xn, r / 2) } else { (yn, r / 2) };
            let mut seed = Matrix::zeros(v, 1);
            seed[(node, 0)] = 1.0;
            let g = tape.backward_from(out, seed)?;
            let (gx, gy) = (g.get(st.x0), g.get(st.y0));
            for i in 0..v {
                jac[(r, 2 * i)] = gx[(i, 0)];
                jac[(r, 2 * i + 1)] = gy[(i, 0)];
            }
        }
        Ok(jac)
    }

    /// `∂Zᴺ/∂Z⁰` by central differences of the plain rollout.
    pub fn fd_jacobian(&self, x0: &[f64], y0: &[f64], h: f64) -> Result<Matrix> {
        self.require_oscillator()?;
        let v = self.num_nodes();
        let final_state = |x: &[f64], y: &[f64]| -> Result<Vec<f64>> {
            let tr = self.forward(x, y)?;
            let (xn, yn) = (tr.xs.last().unwrap(), tr.ys.last().unwrap());
            Ok((0..2 * v)
                .map(|r| if r % 2 == 0 { xn[r / 2] } else { yn[r / 2] })
                .collect())
        };
        let mut jac = Matrix::zeros(2 * v, 2 * v);
        for col in 0..2 * v {
            let mut plus = (x0.to_vec(), y0.to_vec());
            let mut minus = plus.clone();
            let (node, is_y) = (col / 2, col % 2 == 1);
            if is_y {
                plus.1[node] += h;
                minus.1[node] -= h;
            } else {
                plus.0[node] += h;
                minus.0[node] -= h;
            }
            let zp = final_state(&plus.0, &plus.1)?;
            let zm = final_state(&minus.0, &minus.1)?;
            for r in 0..2 * v {
                jac[(r, col)] = (zp[r] - zm[r]) / (2.0 * h);
            }
        }
        Ok(jac)
    }

    fn require_oscillator(&self) -> Result<()> {
        match self.variant {
            ScalarVariant::Oscillator => Ok(()),
            ScalarVariant::Stacked => Err(Error::InvalidArgument("stacked model has no velocity state".into())),
        }
    }
}
