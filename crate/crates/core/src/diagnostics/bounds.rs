//! Gradient upper bound, leading-order gradient and hidden-state bound.

use serde::Serialize;

use super::scalar::{ScalarModel, ScalarTrajectory, ScalarVariant};
use crate::dynamics::{IntegratorConfig, Trajectory};
use crate::error::{Error, Result};

/// Constants entering the weight-gradient bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientBoundTerms {
    /// `sup |σ|`.
    pub beta: f64,
    /// `sup |σ'|`.
    pub beta_prime: f64,
    /// `max 1/√(d̂ᵢd̂ⱼ)`.
    pub d_hat: f64,
    /// `Γ = 6 + 4β'D̂·maxₙ‖wⁿ‖₁`.
    pub gamma_const: f64,
    pub n_layers: usize,
    pub dt: f64,
    pub num_nodes: usize,
    /// `maxᵢ(|Xᵢ⁰| + |Yᵢ⁰|)`.
    pub initial_max: f64,
    /// `maxᵢ|X̄ᵢ|`.
    pub target_max: f64,
}

impl GradientBoundTerms {
    pub fn rhs(&self) -> f64 {
        let n = self.n_layers as f64;
        let pre =
            self.beta_prime * self.d_hat * self.dt * (1.0 + self.gamma_const * n * self.dt) / self.num_nodes as f64;
        let drift = self.target_max + self.beta * (n * self.dt).sqrt();
        pre * self.initial_max + pre * drift * drift
    }

    /// `(1 + ΓΔt/2)ᵏ ≤ 1 + kΓΔt` for `k = 0..N-1`.
    pub fn precondition_holds(&self) -> bool {
        let g = self.gamma_const * self.dt;
        (0..self.n_layers).all(|k| (1.0 + g / 2.0).powi(k as i32) <= 1.0 + k as f64 * g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientBoundReport {
    pub terms: GradientBoundTerms,
    pub max_gradient: f64,
    pub rhs: f64,
    pub pass: bool,
}

pub fn gradient_bound_terms(model: &ScalarModel, x0: &[f64], y0: &[f64]) -> GradientBoundTerms {
    let (beta, beta_prime) = model.activation.bounds();
    let d_min = model.degrees().iter().cloned().fold(f64::INFINITY, f64::min);
    let d_hat = 1.0 / d_min;
    let w1 = model
        .weights
        .iter()
        .map(|w| w.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    GradientBoundTerms {
        beta,
        beta_prime,
        d_hat,
        gamma_const: 6.0 + 4.0 * beta_prime * d_hat * w1,
        n_layers: model.num_layers(),
        dt: model.dt,
        num_nodes: model.num_nodes(),
        initial_max: x0.iter().zip(y0).map(|(x, y)| x.abs() + y.abs()).fold(0.0, f64::max),
        target_max: model.target.iter().map(|x| x.abs()).fold(0.0, f64::max),
    }
}

/// Compares every `|∂J/∂wₖⁿ|` with the bound. Refuses unbounded activations
/// and step sizes outside the bound's precondition.
pub fn gradient_bound_check(model: &ScalarModel, x0: &[f64], y0: &[f64]) -> Result<GradientBoundReport> {
    if model.variant != ScalarVariant::Oscillator {
        return Err(Error::InvalidArgument(
            "gradient bound applies to the oscillator model".into(),
        ));
    }
    let terms = gradient_bound_terms(model, x0, y0);
    if !terms.beta.is_finite() {
        return Err(Error::Precondition(format!(
            "activation {:?} is unbounded; the gradient bound needs a bounded σ",
            model.activation
        )));
    }
    if !terms.precondition_holds() {
        return Err(Error::Precondition(format!(
            "(1 + ΓΔt/2)^k > 1 + kΓΔt for some k < N with Γ = {}, Δt = {}, N = {}",
            terms.gamma_const, terms.dt, terms.n_layers
        )));
    }
    let (_, grads) = model.weight_gradients(x0, y0)?;
    let max_gradient = grads.iter().flatten().map(|g| g.abs()).fold(0.0, f64::max);
    let rhs = terms.rhs();
    Ok(GradientBoundReport {
        terms,
        max_gradient,
        rhs,
        pass: max_gradient <= rhs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LeadingOrderForm {
    /// `(2Δt²/v) Σ_{j∈N(k)} σ'(Cⱼˡ⁻¹) Xⱼˡ⁻¹ rⱼ / √(d̂ⱼd̂ₖ)`.
    NeighborSum,
    /// `(Δt²/v)(N − ℓ + 1) Σ_{j∈N(k)∪{k}} σ'(Cⱼˡ⁻¹) Xₖˡ⁻¹ rⱼ / √(d̂ⱼd̂ₖ)`, whose
    /// remainder is `O(Δt³)`.
    Complete,
}

/// Leading-order approximation of `∂J/∂wₖˡ` (layer `ℓ` 1-based, node `k`
/// 0-based) with residual `r = Xᴺ − X̄`.
pub fn leading_order_gradient(
    model: &ScalarModel,
    tr: &ScalarTrajectory,
    layer: usize,
    k: usize,
    form: LeadingOrderForm,
) -> f64 {
    let v = model.num_nodes() as f64;
    let dt = model.dt;
    let d = model.degrees();
    let xn = tr.xs.last().expect("trajectory is never empty");
    let xprev = &tr.xs[layer - 1];
    let c = &tr.cs[layer - 1];
    let term = |j: usize, feature: f64| {
        model.activation.derivative(c[j]) * feature * (xn[j] - model.target[j]) / (d[j] * d[k]).sqrt()
    };
    match form {
        LeadingOrderForm::NeighborSum => {
            let s: f64 = model.graph().neighbors(k).iter().map(|&j| term(j, xprev[j])).sum();
            2.0 * dt * dt / v * s
        }
        LeadingOrderForm::Complete => {
            let s: f64 = model
                .graph()
                .neighbors(k)
                .iter()
                .chain(std::iter::once(&k))
                .map(|&j| term(j, xprev[k]))
                .sum();
            dt * dt / v * (model.num_layers() - layer + 1) as f64 * s
        }
    }
}

/// `max_{ℓ,k} |∂J/∂wₖˡ − leading term|`.
pub fn leading_order_residual(model: &ScalarModel, x0: &[f64], y0: &[f64], form: LeadingOrderForm) -> Result<f64> {
    let tr = model.forward(x0, y0)?;
    let (_, grads) = model.weight_gradients(x0, y0)?;
    let mut worst: f64 = 0.0;
    for (l, gl) in grads.iter().enumerate() {
        for (k, g) in gl.iter().enumerate() {
            worst = worst.max((g - leading_order_gradient(model, &tr, l + 1, k, form)).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HiddenStateReport {
    pub checked: usize,
    pub violations: usize,
    /// Largest `‖Xᵢⁿ‖² / bound`.
    pub worst_ratio: f64,
}

/// `‖Xᵢⁿ‖² ≤ ‖Xᵢ⁰‖² + ‖Yᵢ⁰‖²/γ + mβ²tₙ / (2γ(α − γΔt))` for every node and
/// layer. Requires `Δt < min(α/γ, 1/α)`.
pub fn hidden_state_bound_check(tr: &Trajectory, cfg: &IntegratorConfig, beta: f64) -> Result<HiddenStateReport> {
    let (dt, a, g) = (cfg.dt, cfg.alpha, cfg.gamma);
    let limit = (a / g).min(if a > 0.0 { 1.0 / a } else { f64::INFINITY });
    if !(dt < limit) || a - g * dt <= 0.0 {
        return Err(Error::Precondition(format!(
            "hidden-state bound needs Δt < min(α/γ, 1/α); got Δt = {dt}, α = {a}, γ = {g}"
        )));
    }
    if !beta.is_finite() {
        return Err(Error::Precondition(
            "hidden-state bound needs a bounded activation".into(),
        ));
    }
    let ys = tr
        .ys
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("trajectory has no velocities".into()))?;
    let (x0, y0) = (&tr.xs[0], &ys[0]);
    let m = x0.cols() as f64;
    let row_sq = |mat: &crate::tensor::Matrix, i: usize| mat.row(i).iter().map(|x| x * x).sum::<f64>();
    let mut report = HiddenStateReport {
        checked: 0,
        violations: 0,
        worst_ratio: 0.0,
    };
    for (n, x) in tr.xs.iter().enumerate() {
        let tn = n as f64 * dt;
        for i in 0..x.rows() {
            let bound = row_sq(x0, i) + row_sq(y0, i) / g + m * beta * beta * tn / (2.0 * g * (a - g * dt));
            let lhs = row_sq(x, i);
            report.checked += 1;
            if lhs > bound {
                report.violations += 1;
            }
            if bound > 0.0 {
                report.worst_ratio = report.worst_ratio.max(lhs / bound);
            } else if lhs > 0.0 {
                report.worst_ratio = f64::INFINITY;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Activation;
    use crate::graph::Graph;
    use crate::rng::Rng;
    use crate::tensor::Matrix;

    fn ring_model(rng: &mut Rng, v: usize, n: usize, dt: f64) -> ScalarModel {
        ScalarModel::random(Graph::ring(v).unwrap(), n, dt, Activation::Tanh, 1.0, rng).unwrap()
    }

    #[test]
    fn zero_model_has_zero_gradient_under_positive_bound() {
        let g = Graph::ring(6).unwrap();
        let m = ScalarModel::new(g, vec![vec![0.0; 6]; 5], 0.01, Activation::Tanh, vec![0.0; 6]).unwrap();
        let r = gradient_bound_check(&m, &[0.0; 6], &[0.0; 6]).unwrap();
        assert_eq!(r.max_gradient, 0.0);
        assert!(r.rhs > 0.0 && r.pass);
    }

    #[test]
    fn ring_model_satisfies_bound() {
        let mut rng = Rng::new(20);
        let m = ring_model(&mut rng, 8, 20, 0.01);
        let x0: Vec<f64> = (0..8).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let y0: Vec<f64> = (0..8).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let r = gradient_bound_check(&m, &x0, &y0).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn rhs_re_evaluation_and_depth_scaling() {
        let t = GradientBoundTerms {
            beta: 1.0,
            beta_prime: 1.0,
            d_hat: 1.0 / 3.0,
            gamma_const: 8.0,
            n_layers: 10,
            dt: 0.01,
            num_nodes: 4,
            initial_max: 1.5,
            target_max: 0.5,
        };
        let pre = (1.0 / 3.0) * 0.01 * (1.0 + 8.0 * 10.0 * 0.01) / 4.0;
        let expect = pre * 1.5 + pre * (0.5 + (0.1f64).sqrt()).powi(2);
        assert!((t.rhs() - expect).abs() < 1e-16);
        let t2 = GradientBoundTerms { n_layers: 20, ..t };
        let pre2 = (1.0 / 3.0) * 0.01 * (1.0 + 8.0 * 20.0 * 0.01) / 4.0;
        let expect2 = pre2 * 1.5 + pre2 * (0.5 + (0.2f64).sqrt()).powi(2);
        assert!((t2.rhs() - expect2).abs() < 1e-16);
    }

    #[test]
    fn refuses_unbounded_activation_and_large_steps() {
        let mut rng = Rng::new(2);
        let mut m = ring_model(&mut rng, 6, 10, 0.01);
        m.activation = Activation::Relu;
        assert!(matches!(
            gradient_bound_check(&m, &[0.1; 6], &[0.0; 6]),
            Err(Error::Precondition(_))
        ));
        let m = ring_model(&mut rng, 6, 50, 0.5);
        assert!(matches!(
            gradient_bound_check(&m, &[0.1; 6], &[0.0; 6]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn leading_order_vanishes_in_trivial_cases() {
        let g = Graph::from_edge_list(&[(0, 1)], 3).unwrap();
        let mut rng = Rng::new(3);
        let m = ScalarModel::random(g, 4, 0.05, Activation::Tanh, 1.0, &mut rng).unwrap();
        let tr = m.forward(&[0.3, -0.4, 0.8], &[0.1, 0.0, 0.2]).unwrap();
        assert_eq!(
            leading_order_gradient(&m, &tr, 2, 2, LeadingOrderForm::NeighborSum),
            0.0
        );
        let mut exact = m.clone();
        exact.target = tr.xs.last().unwrap().clone();
        for form in [LeadingOrderForm::NeighborSum, LeadingOrderForm::Complete] {
            for k in 0..3 {
                assert_eq!(leading_order_gradient(&exact, &tr, 1, k, form), 0.0);
            }
        }
    }

    #[test]
    fn complete_leading_term_has_third_order_remainder() {
        let mut rng = Rng::new(7);
        let mut base = ring_model(&mut rng, 6, 10, 0.01);
        let x0: Vec<f64> = (0..6).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let y0: Vec<f64> = (0..6).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let r1 = leading_order_residual(&base, &x0, &y0, LeadingOrderForm::Complete).unwrap();
        base.dt = 0.005;
        let r2 = leading_order_residual(&base, &x0, &y0, LeadingOrderForm::Complete).unwrap();
        let ratio = r1 / r2;
        assert!((6.0..=10.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn hidden_state_bound_examples() {
        let tr = Trajectory {
            xs: vec![Matrix::zeros(3, 2); 4],
            ys: Some(vec![Matrix::zeros(3, 2); 4]),
            times: vec![0.0, 0.1, 0.2, 0.3],
        };
        let cfg = IntegratorConfig::new(0.1, 1.0, 1.0, 3, Activation::Tanh);
        let r = hidden_state_bound_check(&tr, &cfg, 1.0).unwrap();
        assert_eq!((r.checked, r.violations), (12, 0));
        let degenerate = IntegratorConfig::new(0.1, 0.1, 1.0, 3, Activation::Tanh);
        assert!(matches!(
            hidden_state_bound_check(&tr, &degenerate, 1.0),
            Err(Error::Precondition(_))
        ));
    }
}
