//! End-to-end acceptance suite. Prints one line per criterion and exits
//! nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use graphcon::autodiff::DEFAULT_LEAKY_SLOPE;
use graphcon::checks::{
    conserve_check, grad_bound_trials, hidden_state_trials, jacobian_check, leading_order_trials, perturbation_check,
    perturbation_decay_rates, ConserveConfig, GradBoundConfig, HiddenStateConfig, JacobianConfig, LeadingOrderConfig,
    PerturbationConfig,
};
use graphcon::coupling::{Coupling, CouplingConfig, CouplingKind, CouplingParams};
use graphcon::diagnostics::{depth_gradient_sweep, DepthSweepSpec};
use graphcon::dynamics::{closed_form_uncoupled, simulate_graphcon, IntegratorConfig};
use graphcon::experiments::{cmd_depth_sweep, energy_profile, EnergyProfileConfig, ExperimentConfig};
use graphcon::training::{Architecture, Model, ModelConfig, Targets, Task};
use graphcon::{Activation, Graph, Matrix, NormKind, Rng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn oversmoothing_dichotomy() -> Outcome {
    let cfg = EnergyProfileConfig::default();
    // (model, alpha) -> runs classified as expected
    let mut hits: Vec<(String, usize)> = Vec::new();
    for seed in 0..20 {
        for c in energy_profile(&cfg, seed).unwrap() {
            let key = match c.alpha {
                Some(a) => format!("{} alpha={a}", c.model),
                None => c.model.clone(),
            };
            let expected = c.alpha.is_none() == c.report.oversmoothing;
            match hits.iter_mut().find(|(k, _)| *k == key) {
                Some((_, n)) => *n += expected as usize,
                None => hits.push((key, expected as usize)),
            }
        }
    }
    let pass = hits.len() == 6 && hits.iter().all(|(_, n)| *n >= 19);
    let detail: Vec<String> = hits.iter().map(|(k, n)| format!("{k} {n}/20")).collect();
    outcome(pass, detail.join(", "))
}

fn uncoupled_error(dt: f64) -> f64 {
    let t = std::f64::consts::FRAC_PI_2;
    let n = (t / dt).round() as usize;
    let g = Graph::ring(10).unwrap();
    let mut ccfg = CouplingConfig::new(CouplingKind::Gcn, 2, 1);
    ccfg.share_weights = true;
    let coupling = Coupling::new(ccfg.clone(), &g).unwrap();
    let params = CouplingParams::scaled_identity(&ccfg, 0.0);
    let mut rng = Rng::new(5);
    let x0 = Matrix::from_fn(10, 2, |_, _| rng.uniform_in(-1.0, 1.0));
    let y0 = Matrix::from_fn(10, 2, |_, _| rng.uniform_in(-1.0, 1.0));
    let icfg = IntegratorConfig::new(t / n as f64, 0.0, 1.0, n, Activation::Tanh);
    let tr = simulate_graphcon(&coupling, &params, &x0, Some(&y0), &icfg).unwrap();
    let (x, _) = closed_form_uncoupled(&x0, &y0, t);
    tr.last_x().max_abs_diff(&x)
}

fn closed_form_convergence() -> Outcome {
    let errs: Vec<f64> = [1e-2, 5e-3, 2.5e-3].iter().map(|&dt| uncoupled_error(dt)).collect();
    let ratios = [errs[0] / errs[1], errs[1] / errs[2]];
    let pass = ratios.iter().all(|r| (1.8..=2.2).contains(r));
    outcome(pass, format!("error ratios {:.3}, {:.3}", ratios[0], ratios[1]))
}

fn energy_conservation() -> Outcome {
    let r = conserve_check(&ConserveConfig::default(), 0).unwrap();
    outcome(
        r.pass,
        format!("relative drift {:.2e} (limit {:.0e})", r.observed, r.bound),
    )
}

fn jacobian_oracle() -> Outcome {
    let rs = jacobian_check(&JacobianConfig::default(), 0).unwrap();
    outcome(
        rs.iter().all(|r| r.pass),
        format!(
            "product error {:.2e}, finite-difference error {:.2e}",
            rs[0].observed, rs[1].observed
        ),
    )
}

fn gradient_upper_bound() -> Outcome {
    let r = grad_bound_trials(&GradBoundConfig::default(), 0).unwrap();
    outcome(
        r.pass,
        format!("worst gradient/bound ratio {:.3} over 100 trials", r.observed),
    )
}

fn leading_order_gradient() -> Outcome {
    let r = leading_order_trials(&LeadingOrderConfig::default(), 0).unwrap();
    outcome(
        r.pass,
        format!("{:.0}% of 50 trials shrink by 6-10x", 100.0 * r.observed),
    )
}

fn hidden_state_bound() -> Outcome {
    let r = hidden_state_trials(&HiddenStateConfig::default(), 0).unwrap();
    outcome(r.pass, format!("{} violations", r.observed))
}

fn perturbation_identity() -> Outcome {
    let rs = perturbation_check(&PerturbationConfig::default(), 0).unwrap();
    outcome(
        rs.iter().all(|r| r.pass),
        format!("residual {:.2e}, halved step {:.2e}", rs[0].observed, rs[1].observed),
    )
}

fn no_exponential_stability() -> Outcome {
    let mut worst = f64::INFINITY;
    let mut detail = Vec::new();
    for alpha in [0.5, 1.0] {
        let rates = perturbation_decay_rates(alpha, 20, 20.0, 1e-3, 0).unwrap();
        let below = rates.iter().filter(|&&r| r < -0.01).count();
        let min = rates.iter().cloned().fold(f64::INFINITY, f64::min);
        worst = worst.min(min);
        detail.push(format!("alpha={alpha}: {below}/20 rates below -0.01, min {min:.3}"));
    }
    outcome(worst >= -0.01, detail.join("; "))
}

fn depth_trend() -> Outcome {
    let rows = cmd_depth_sweep(&ExperimentConfig::default(), 1).unwrap();
    let acc = |model: &str, n: f64| {
        rows.iter()
            .find(|r| r.model == model && r.value == n)
            .map(|r| r.test_metric)
            .unwrap()
    };
    let (g5, g20) = (acc("graphcon_gcn", 5.0), acc("graphcon_gcn", 20.0));
    let (b5, b20) = (acc("gcn", 5.0), acc("gcn", 20.0));
    let pass = g20 >= g5 - 0.02 && b20 <= b5 && g20 >= 0.90;
    outcome(
        pass,
        format!("oscillator {g5} -> {g20}, stacked {b5} -> {b20} (N=5 -> N=20)"),
    )
}

fn gradient_stability_sweep() -> Outcome {
    let rows = depth_gradient_sweep(&DepthSweepSpec::default(), 0).unwrap();
    let series = |model: &str| -> Vec<f64> { rows.iter().filter(|r| r.model == model).map(|r| r.max_grad).collect() };
    let osc = series("graphcon");
    let base = series("baseline");
    let spread = osc.iter().cloned().fold(0.0, f64::max) / osc.iter().cloned().fold(f64::INFINITY, f64::min);
    let shrink = base[0] / base[base.len() - 1];
    outcome(
        spread < 10.0 && shrink > 100.0,
        format!("oscillator spread {spread:.2}x, stacked shrink {shrink:.2e}x"),
    )
}

fn model_config(arch: Architecture, kind: CouplingKind, act: Activation, task: Task) -> ModelConfig {
    ModelConfig {
        raw_width: 3,
        hidden_width: 4,
        outputs: if task == Task::Classification { 3 } else { 1 },
        task,
        architecture: arch,
        coupling: kind,
        share_weights: false,
        leaky_slope: DEFAULT_LEAKY_SLOPE,
        adjacency: NormKind::SymGcn,
        integrator: IntegratorConfig::new(0.5, 0.3, 1.0, 3, act),
    }
}

fn end_to_end_gradients() -> Outcome {
    let mut rng = Rng::new(23);
    let g = Graph::from_edge_list(&[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3), (1, 4)], 6).unwrap();
    let x = Matrix::from_fn(6, 3, |_, _| rng.uniform_in(-1.0, 1.0));
    let classes = Targets::Classes {
        labels: (0..6).map(|i| i % 3).collect(),
        num_classes: 3,
    };
    let values = Targets::Values(Matrix::from_fn(6, 1, |_, _| rng.uniform_in(-1.0, 1.0)));
    let mask = [0, 2, 3, 5];
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = 0;
    for arch in [Architecture::Graphcon, Architecture::Baseline] {
        for kind in [CouplingKind::Gcn, CouplingKind::Gat] {
            for act in [Activation::Tanh, Activation::Relu, Activation::Identity] {
                for task in [Task::Classification, Task::Regression] {
                    let t = if task == Task::Classification {
                        &classes
                    } else {
                        &values
                    };
                    let model = Model::new(model_config(arch, kind, act, task), &g).unwrap();
                    let p = model.init_params(&mut rng).unwrap();
                    let (_, grads, _) = model.loss_and_gradients(&p, &x, t, &mask).unwrap();
                    for (k, grad) in grads.iter().enumerate() {
                        for i in 0..grad.len() {
                            let loss = |delta: f64| {
                                let mut q = p.clone();
                                q.tensors_mut()[k].data_mut()[i] += delta;
                                model.loss_and_gradients(&q, &x, t, &mask).unwrap().0
                            };
                            let (lp, lm, l0) = (loss(h), loss(-h), loss(0.0));
                            // A kink inside [-h, h] shows up as one-sided
                            // slopes that disagree; skip those entries.
                            let (right, left) = ((lp - l0) / h, (l0 - lm) / h);
                            if act == Activation::Relu && (right - left).abs() > 1e-3 * (1.0 + right.abs()) {
                                skipped += 1;
                                continue;
                            }
                            let fd = (lp - lm) / (2.0 * h);
                            let an = grad.data()[i];
                            worst = worst.max((fd - an).abs() / (1.0 + an.abs()));
                            checked += 1;
                        }
                    }
                }
            }
        }
    }
    outcome(
        worst < 1e-5,
        format!("worst relative error {worst:.2e} over {checked} entries, {skipped} skipped at kinks"),
    )
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        (
            "oversmoothing dichotomy",
            Duration::from_secs(60),
            oversmoothing_dichotomy,
        ),
        (
            "closed-form oscillator convergence",
            Duration::from_secs(1),
            closed_form_convergence,
        ),
        ("energy conservation", Duration::from_secs(5), energy_conservation),
        ("jacobian oracle", Duration::from_secs(5), jacobian_oracle),
        ("gradient upper bound", Duration::from_secs(30), gradient_upper_bound),
        (
            "leading-order gradient",
            Duration::from_secs(30),
            leading_order_gradient,
        ),
        ("hidden-state bound", Duration::from_secs(10), hidden_state_bound),
        ("perturbation identity", Duration::from_secs(10), perturbation_identity),
        (
            "no exponential stability",
            Duration::from_secs(10),
            no_exponential_stability,
        ),
        ("depth trend", Duration::from_secs(300), depth_trend),
        (
            "gradient stability sweep",
            Duration::from_secs(120),
            gradient_stability_sweep,
        ),
        (
            "end-to-end gradient check",
            Duration::from_secs(10),
            end_to_end_gradients,
        ),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run));
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass && elapsed <= *limit, o.detail),
            Err(_) => (false, "panicked".to_string()),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<36} {}  {} [{:.2}s, limit {}s]",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
