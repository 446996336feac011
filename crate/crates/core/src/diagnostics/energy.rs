//! Layer-wise Dirichlet energy profiles and the oscillator energy.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{dirichlet_energy, Graph, NormalizedAdjacency};
use crate::tensor::Matrix;

/// Log-slope threshold for the oversmoothing classification.
pub const OVERSMOOTHING_SLOPE: f64 = -0.05;
/// Terminal-to-initial energy ratio threshold for the classification.
pub const OVERSMOOTHING_RATIO: f64 = 1e-4;
/// Energies below this are treated as vanished and left out of the fit.
pub const ENERGY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    pub energies: Vec<f64>,
    /// Least-squares slope of `ln E(Xⁿ)` over `n ∈ [N/2, N]`; `-inf` when
    /// the energies vanish.
    pub slope: f64,
    /// `E(X^N) / E(X⁰)`.
    pub terminal_ratio: f64,
    pub oversmoothing: bool,
}

/// Least-squares slope of `ys` against `xs`.
pub fn lsq_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

/// Classifies a sequence of per-layer energies.
pub fn classify_energies(energies: Vec<f64>) -> Result<EnergyReport> {
    if energies.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "energy profile needs at least 10 layers, got {}",
            energies.len()
        )));
    }
    let n_last = energies.len() - 1;
    let (xs, ys): (Vec<f64>, Vec<f64>) = (n_last / 2..=n_last)
        .filter(|&n| energies[n] >= ENERGY_FLOOR)
        .map(|n| (n as f64, energies[n].ln()))
        .unzip();
    let slope = if xs.len() >= 2 {
        lsq_slope(&xs, &ys)
    } else {
        f64::NEG_INFINITY
    };
    let (e0, en) = (energies[0], energies[n_last]);
    let terminal_ratio = if e0 > 0.0 {
        en / e0
    } else if en > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let oversmoothing = slope <= OVERSMOOTHING_SLOPE && terminal_ratio <= OVERSMOOTHING_RATIO;
    Ok(EnergyReport {
        energies,
        slope,
        terminal_ratio,
        oversmoothing,
    })
}

pub fn dirichlet_profile(xs: &[Matrix], g: &Graph) -> Result<EnergyReport> {
    let energies = xs.iter().map(|x| dirichlet_energy(g, x)).collect::<Result<Vec<_>>>()?;
    classify_energies(energies)
}

/// `Σᵢ‖Yᵢ‖² + ½ Σᵢ Σ_{j∈N(i)} Aᵢⱼ‖Xᵢ − Xⱼ‖²`: the neighbour sum runs once
/// per undirected edge, which is the normalisation under which the energy
/// is conserved. Self-loop entries of `a` contribute nothing.
pub fn energy_functional(x: &Matrix, y: &Matrix, a: &NormalizedAdjacency) -> Result<f64> {
    if x.shape() != y.shape() || x.rows() != a.num_nodes() {
        return Err(Error::Shape(format!(
            "energy: X {:?}, Y {:?}, {} nodes",
            x.shape(),
            y.shape(),
            a.num_nodes()
        )));
    }
    Ok(y.sq_norm() + 0.5 * pair_sum(x, a, |_, _| 1.0))
}

/// `Σᵢ Σ_{j∈N(i), j≠i} Aᵢⱼ·f(i, j)·‖Xᵢ − Xⱼ‖²` over directed pairs.
pub(crate) fn pair_sum(x: &Matrix, a: &NormalizedAdjacency, f: impl Fn(usize, usize) -> f64) -> f64 {
    let layout = a.layout();
    let mut total = 0.0;
    for p in 0..layout.num_pairs() {
        let (i, j) = (layout.targets()[p], layout.sources()[p]);
        if i == j {
            continue;
        }
        let d: f64 = x.row(i).iter().zip(x.row(j)).map(|(u, v)| (u - v) * (u - v)).sum();
        total += a.weights()[p] * f(i, j) * d;
    }
    total
}
