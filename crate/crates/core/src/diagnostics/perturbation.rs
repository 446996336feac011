//! Perturbations of a constant steady state under the linearised dynamics.

use serde::Serialize;

use super::energy::lsq_slope;
use crate::dynamics::{linearized_perturbation_forward, Trajectory};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationIdentityReport {
    /// `max_t |LHS − (T₁ + T₂ + T₃)| / max(LHS, 1e-12)`.
    pub max_residual: f64,
    /// `max_t |T₃|`.
    pub max_t3: f64,
    pub steps: usize,
}

fn check_row_stochastic(a: &NormalizedAdjacency) -> Result<()> {
    let layout = a.layout();
    for i in 0..a.num_nodes() {
        let s: f64 = a.weights()[layout.row(i)].iter().sum();
        if (s - 1.0).abs() > 1e-12 || a.weights()[layout.row(i)].iter().any(|&w| w < 0.0) {
            return Err(Error::Precondition(format!(
                "row {i} of the adjacency is not stochastic (sum {s})"
            )));
        }
    }
    Ok(())
}

/// Rolls out the linearised system and compares the perturbation energy
/// with the damped-production-transport decomposition
///
/// ```text
/// (1/v)(Σ‖Ŷᵢ‖² + S(t)) = e^{-2αt}(1/v)(Σ‖Ŷᵢ(0)‖² + S(0))
///     + (2α/v) ∫₀ᵗ S(s) e^{2α(s−t)} ds
///     + (1/v) Σᵢ Σ_{j∈N(i)} ½(Âᵢⱼ − Âⱼᵢ) ∫₀ᵗ (Ŷᵢ + Ŷⱼ)ᵀ(X̂ⱼ − X̂ᵢ) e^{2α(s−t)} ds
/// ```
///
/// with `S = Σᵢ Σ_{j∈N(i)} ¼(Âᵢⱼ + Âⱼᵢ)‖X̂ⱼ − X̂ᵢ‖²`. Integrals use the
/// trapezoid rule on the integrator grid.
pub fn perturbation_identity_check(
    ahat: &NormalizedAdjacency,
    alpha: f64,
    xhat0: &Matrix,
    yhat0: &Matrix,
    t_end: f64,
    dt: f64,
) -> Result<PerturbationIdentityReport> {
    check_row_stochastic(ahat)?;
    let tr = linearized_perturbation_forward(xhat0, yhat0, ahat, alpha, dt, t_end)?;
    let ys = tr.ys.as_ref().expect("rk4 trajectories carry velocities");
    let v = ahat.num_nodes() as f64;
    let layout = ahat.layout();

    // S(t) and the transport integrand at every grid point
    let terms = |x: &Matrix, y: &Matrix| -> (f64, f64) {
        let (mut s, mut q) = (0.0, 0.0);
        for p in 0..layout.num_pairs() {
            let (i, j) = (layout.targets()[p], layout.sources()[p]);
            if i == j {
                continue;
            }
            let (aij, aji) = (ahat.weights()[p], ahat.weight(j, i));
            let (xi, xj, yi, yj) = (x.row(i), x.row(j), y.row(i), y.row(j));
            let mut dist = 0.0;
            let mut flux = 0.0;
            for c in 0..x.cols() {
                let dx = xj[c] - xi[c];
                dist += dx * dx;
                flux += (yi[c] + yj[c]) * dx;
            }
            s += 0.25 * (aij + aji) * dist;
            q += 0.5 * (aij - aji) * flux;
        }
        (s, q)
    };

    let mut max_residual: f64 = 0.0;
    let mut max_t3: f64 = 0.0;
    let (s0, q0) = terms(&tr.xs[0], &ys[0]);
    let lhs0 = (ys[0].sq_norm() + s0) / v;
    // running ∫₀ᵗ f(s) e^{2α(s−t)} ds, rescaled each step to stay bounded
    let (mut int_s, mut int_q) = (0.0, 0.0);
    let (mut prev_s, mut prev_q) = (s0, q0);
    for n in 1..tr.len() {
        let h = tr.times[n] - tr.times[n - 1];
        let decay = (-2.0 * alpha * h).exp();
        let (s, q) = terms(&tr.xs[n], &ys[n]);
        int_s = int_s * decay + 0.5 * h * (prev_s * decay + s);
        int_q = int_q * decay + 0.5 * h * (prev_q * decay + q);
        prev_s = s;
        prev_q = q;
        let t = tr.times[n];
        let lhs = (ys[n].sq_norm() + s) / v;
        let t1 = lhs0 * (-2.0 * alpha * t).exp();
        let t2 = 2.0 * alpha / v * int_s;
        let t3 = int_q / v;
        max_t3 = max_t3.max(t3.abs());
        max_residual = max_residual.max((lhs - (t1 + t2 + t3)).abs() / lhs.max(1e-12));
    }
    Ok(PerturbationIdentityReport {
        max_residual,
        max_t3,
        steps: tr.len() - 1,
    })
}

/// Least-squares slope of `ln(‖X̂‖² + ‖Ŷ‖²)` against time over the whole
/// trajectory. Negative values mean exponential decay.
pub fn perturbation_decay_rate(tr: &Trajectory) -> Result<f64> {
    let ys = tr
        .ys
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("trajectory has no velocities".into()))?;
    let (ts, logs): (Vec<f64>, Vec<f64>) = tr
        .xs
        .iter()
        .zip(ys)
        .zip(&tr.times)
        .map(|((x, y), &t)| (t, x.sq_norm() + y.sq_norm()))
        .filter(|&(_, e)| e > 0.0)
        .map(|(t, e)| (t, e.ln()))
        .unzip();
    if ts.len() < 2 {
        return Err(Error::InvalidArgument(
            "perturbation energy vanishes identically".into(),
        ));
    }
    Ok(lsq_slope(&ts, &logs))
}
