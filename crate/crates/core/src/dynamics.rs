//! Time integration of graph-coupled oscillators.
//!
//! The layer update advances the velocity first and then the position with
//! the new velocity:
//!
//! ```text
//! Yⁿ = Yⁿ⁻¹ + Δt·(σ(F(Xⁿ⁻¹)) − γ·Xⁿ⁻¹ − α·Yⁿ⁻¹)
//! Xⁿ = Xⁿ⁻¹ + Δt·Yⁿ
//! ```
//!
//! The stacked baseline is `Xⁿ = (Δt/γ)·σ(F(Xⁿ⁻¹))`. A classical RK4
//! integrator for the continuous system serves as a high-accuracy reference.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Tape, Var};
use crate::coupling::{Coupling, CouplingParams, CouplingVars};
use crate::error::{Error, Result};
use crate::format::fmt_float;
use crate::graph::NormalizedAdjacency;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Y0Mode {
    /// `Y⁰ = X⁰`.
    #[default]
    CopyX0,
    Zero,
}

fn one() -> f64 {
    1.0
}

fn relu() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "one")]
    pub dt: f64,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    pub n_layers: usize,
    #[serde(default = "relu")]
    pub activation: Activation,
    #[serde(default)]
    pub y0_mode: Y0Mode,
}

impl IntegratorConfig {
    pub fn new(dt: f64, alpha: f64, gamma: f64, n_layers: usize, activation: Activation) -> Self {
        Self {
            dt,
            alpha,
            gamma,
            n_layers,
            activation,
            y0_mode: Y0Mode::CopyX0,
        }
    }

    /// `Δt = 0` is accepted and yields the identity map.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt >= 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dt must be finite and nonnegative, got {}",
                self.dt
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be finite and nonnegative, got {}",
                self.gamma
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be nonnegative, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Per-layer states as plain values. Baseline runs carry no velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub xs: Vec<Matrix>,
    pub ys: Option<Vec<Matrix>>,
    /// Time of each recorded state.
    pub times: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn last_x(&self) -> &Matrix {
        self.xs.last().expect("trajectory is never empty")
    }

    /// CSV with header `layer,node,feature_index,x,y`; `y` is empty for
    /// position-only trajectories.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "node", "feature_index", "x", "y"])?;
        for (n, x) in self.xs.iter().enumerate() {
            for i in 0..x.rows() {
                for c in 0..x.cols() {
                    let y = match &self.ys {
                        Some(ys) => fmt_float(ys[n][(i, c)]),
                        None => String::new(),
                    };
                    w.write_record([n.to_string(), i.to_string(), c.to_string(), fmt_float(x[(i, c)]), y])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Per-layer states recorded on a tape.
#[derive(Debug, Clone)]
pub struct TapeTrajectory {
    pub xs: Vec<Var>,
    pub ys: Vec<Var>,
}

impl TapeTrajectory {
    pub fn last_x(&self) -> Var {
        *self.xs.last().expect("trajectory is never empty")
    }

    pub fn values(&self, tape: &Tape, dt: f64) -> Trajectory {
        Trajectory {
            xs: self.xs.iter().map(|&v| tape.value_cloned(v)).collect(),
            ys: (!self.ys.is_empty()).then(|| self.ys.iter().map(|&v| tape.value_cloned(v)).collect()),
            times: (0..self.xs.len()).map(|n| n as f64 * dt).collect(),
        }
    }
}

fn check_finite(tape: &Tape, v: Var, layer: usize) -> Result<()> {
    if tape.value(v).all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { layer })
    }
}

/// Differentiable rollout of `cfg.n_layers` oscillator layers. `y0 = None`
/// derives the initial velocity from `cfg.y0_mode`.
pub fn graphcon_forward(
    tape: &Tape,
    coupling: &Coupling,
    vars: &CouplingVars,
    x0: Var,
    y0: Option<Var>,
    cfg: &IntegratorConfig,
) -> Result<TapeTrajectory> {
    cfg.validate()?;
    let y0 = match (y0, cfg.y0_mode) {
        (Some(y), _) => {
            if y.shape() != x0.shape() {
                return Err(Error::Shape(format!("Y0 {:?} vs X0 {:?}", y.shape(), x0.shape())));
            }
            y
        }
        (None, Y0Mode::CopyX0) => x0,
        (None, Y0Mode::Zero) => tape.leaf(Matrix::zeros(x0.rows(), x0.cols())),
    };
    let (dt, a, g) = (cfg.dt, cfg.alpha, cfg.gamma);
    let mut xs = vec![x0];
    let mut ys = vec![y0];
    let (mut x, mut y) = (x0, y0);
    for n in 1..=cfg.n_layers {
        let f = coupling.apply(tape, vars, x, n - 1)?;
        let s = tape.activation(f, cfg.activation);
        let rate = tape.lincomb(&[(1.0, s), (-g, x), (-a, y)])?;
        y = tape.lincomb(&[(1.0, y), (dt, rate)])?;
        x = tape.lincomb(&[(1.0, x), (dt, y)])?;
        check_finite(tape, y, n)?;
        check_finite(tape, x, n)?;
        xs.push(x);
        ys.push(y);
    }
    Ok(TapeTrajectory { xs, ys })
}

/// Differentiable stacked-GNN rollout `Xⁿ = (Δt/γ)·σ(F(Xⁿ⁻¹))`.
pub fn baseline_forward(
    tape: &Tape,
    coupling: &Coupling,
    vars: &CouplingVars,
    x0: Var,
    cfg: &IntegratorConfig,
) -> Result<TapeTrajectory> {
    cfg.validate()?;
    if cfg.gamma == 0.0 {
        return Err(Error::InvalidArgument("the stacked model needs gamma > 0".into()));
    }
    let c = cfg.dt / cfg.gamma;
    let mut xs = vec![x0];
    let mut x = x0;
    for n in 1..=cfg.n_layers {
        let f = coupling.apply(tape, vars, x, n - 1)?;
        let s = tape.activation(f, cfg.activation);
        x = tape.scale(s, c);
        check_finite(tape, x, n)?;
        xs.push(x);
    }
    Ok(TapeTrajectory { xs, ys: Vec::new() })
}

/// Value-only oscillator rollout with fixed parameters.
pub fn simulate_graphcon(
    coupling: &Coupling,
    params: &CouplingParams,
    x0: &Matrix,
    y0: Option<&Matrix>,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let tape = Tape::new();
    let vars = params.to_tape(&tape);
    let x = tape.leaf(x0.clone());
    let y = y0.map(|m| tape.leaf(m.clone()));
    let tr = graphcon_forward(&tape, coupling, &vars, x, y, cfg)?;
    Ok(tr.values(&tape, cfg.dt))
}

/// Value-only stacked-GNN rollout with fixed parameters.
pub fn simulate_baseline(
    coupling: &Coupling,
    params: &CouplingParams,
    x0: &Matrix,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let tape = Tape::new();
    let vars = params.to_tape(&tape);
    let x = tape.leaf(x0.clone());
    let tr = baseline_forward(&tape, coupling, &vars, x, cfg)?;
    Ok(tr.values(&tape, cfg.dt))
}

/// Exact solution of `X'' = −X`: `(X⁰cos t + Y⁰sin t, −X⁰sin t + Y⁰cos t)`.
pub fn closed_form_uncoupled(x0: &Matrix, y0: &Matrix, t: f64) -> (Matrix, Matrix) {
    let (s, c) = t.sin_cos();
    let x = x0.zip_map(y0, |x, y| x * c + y * s);
    let y = x0.zip_map(y0, |x, y| -x * s + y * c);
    (x, y)
}

/// RK4 for `X' = Y`, `Y' = force(X) − γX − αY` on `[0, t_end]`. The step is
/// adjusted to `t_end / round(t_end / dt)` so the grid ends exactly at
/// `t_end`; every step is recorded.
pub fn reference_rk4_forward(
    x0: &Matrix,
    y0: &Matrix,
    force: &dyn Fn(&Matrix) -> Result<Matrix>,
    alpha: f64,
    gamma: f64,
    dt: f64,
    t_end: f64,
) -> Result<Trajectory> {
    if x0.shape() != y0.shape() {
        return Err(Error::Shape(format!("X0 {:?} vs Y0 {:?}", x0.shape(), y0.shape())));
    }
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need dt > 0 and t_end >= 0, got {dt}, {t_end}"
        )));
    }
    let steps = (t_end / dt).round().max(if t_end > 0.0 { 1.0 } else { 0.0 }) as usize;
    let h = if steps == 0 { 0.0 } else { t_end / steps as f64 };
    let rhs = |x: &Matrix, y: &Matrix| -> Result<(Matrix, Matrix)> {
        let mut dy = force(x)?;
        dy.axpy(-gamma, x);
        dy.axpy(-alpha, y);
        Ok((y.clone(), dy))
    };
    let stage = |base: &Matrix, k: &Matrix, c: f64| {
        let mut out = base.clone();
        out.axpy(c, k);
        out
    };
    let mut xs = Vec::with_capacity(steps + 1);
    let mut ys = Vec::with_capacity(steps + 1);
    let mut times = Vec::with_capacity(steps + 1);
    let (mut x, mut y) = (x0.clone(), y0.clone());
    xs.push(x.clone());
    ys.push(y.clone());
    times.push(0.0);
    for n in 1..=steps {
        let (k1x, k1y) = rhs(&x, &y)?;
        let (k2x, k2y) = rhs(&stage(&x, &k1x, h / 2.0), &stage(&y, &k1y, h / 2.0))?;
        let (k3x, k3y) = rhs(&stage(&x, &k2x, h / 2.0), &stage(&y, &k2y, h / 2.0))?;
        let (k4x, k4y) = rhs(&stage(&x, &k3x, h), &stage(&y, &k3y, h))?;
        for (state, k) in [(&mut x, [k1x, k2x, k3x, k4x]), (&mut y, [k1y, k2y, k3y, k4y])] {
            state.axpy(h / 6.0, &k[0]);
            state.axpy(h / 3.0, &k[1]);
            state.axpy(h / 3.0, &k[2]);
            state.axpy(h / 6.0, &k[3]);
        }
        if !x.all_finite() || !y.all_finite() {
            return Err(Error::NonFinite { layer: n });
        }
        xs.push(x.clone());
        ys.push(y.clone());
        times.push(n as f64 * h);
    }
    Ok(Trajectory {
        xs,
        ys: Some(ys),
        times,
    })
}

/// RK4 rollout of the linearization about a constant steady state:
/// `X̂' = Ŷ`, `Ŷ' = ÂX̂ − X̂ − αŶ`.
pub fn linearized_perturbation_forward(
    xhat0: &Matrix,
    yhat0: &Matrix,
    ahat: &NormalizedAdjacency,
    alpha: f64,
    dt: f64,
    t_end: f64,
) -> Result<Trajectory> {
    if xhat0.rows() != ahat.num_nodes() {
        return Err(Error::Shape(format!(
            "perturbation has {} rows, adjacency has {} nodes",
            xhat0.rows(),
            ahat.num_nodes()
        )));
    }
    reference_rk4_forward(xhat0, yhat0, &|x| Ok(ahat.apply(x)), alpha, 1.0, dt, t_end)
}
