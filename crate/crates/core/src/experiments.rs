//! Experiment configuration and the commands behind the CLI.

use std::io::Write;
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, DEFAULT_LEAKY_SLOPE};
use crate::checks::ChecksConfig;
use crate::coupling::{init_params, Coupling, CouplingConfig, CouplingKind};
use crate::dataset::{gen_sbm, load_dataset, Dataset, DatasetPaths};
use crate::diagnostics::{dirichlet_profile, DepthGradientRow, DepthSweepSpec, EnergyReport};
use crate::dynamics::{simulate_baseline, simulate_graphcon, IntegratorConfig, Y0Mode};
use crate::error::{Error, Result};
use crate::format::fmt_float;
use crate::graph::{Graph, NormKind};
use crate::rng::{split_seed, Rng};
use crate::tensor::Matrix;
use crate::training::{train, Architecture, Model, ModelConfig, SplitSpec, Targets, Task, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmConfig {
    pub num_nodes: usize,
    pub communities: usize,
    pub p_in: f64,
    pub p_out: f64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            num_nodes: 200,
            communities: 2,
            p_in: 0.1,
            p_out: 0.03,
        }
    }
}

/// Files on disk take precedence over the synthetic generator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSource {
    pub files: Option<DatasetPaths>,
    pub sbm: SbmConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_width: usize,
    pub architecture: Architecture,
    pub coupling: CouplingKind,
    pub share_weights: bool,
    pub leaky_slope: f64,
    pub adjacency: NormKind,
    pub integrator: IntegratorConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden_width: 16,
            architecture: Architecture::Graphcon,
            coupling: CouplingKind::Gcn,
            share_weights: false,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            adjacency: NormKind::SymGcn,
            integrator: IntegratorConfig::new(0.25, 1.0, 1.0, 20, Activation::Relu),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub features: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            width: 10,
            height: 10,
            features: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyProfileConfig {
    pub grid: GridConfig,
    pub layers: usize,
    pub activation: Activation,
    /// Oscillator step; the stacked baselines always use `Δt = γ = 1`.
    pub dt: f64,
    pub alphas: Vec<f64>,
    pub gamma: f64,
}

impl Default for EnergyProfileConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            layers: 100,
            activation: Activation::Tanh,
            dt: 0.1,
            alphas: vec![0.0, 0.5],
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthTrainConfig {
    pub depths: Vec<usize>,
}

impl Default for DepthTrainConfig {
    fn default() -> Self {
        Self {
            depths: vec![5, 10, 15, 20],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            min: 0.0,
            max: 2.0,
            points: 11,
        }
    }
}

/// Top-level JSON document. Every section is optional and unknown keys are
/// rejected at every level.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSource,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub grid: GridConfig,
    pub energy_profile: EnergyProfileConfig,
    pub checks: ChecksConfig,
    pub depth_sweep: DepthTrainConfig,
    pub gradient_sweep: DepthSweepSpec,
    pub sensitivity: SensitivityConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Maps `f` over `0..n` on a pool of `jobs` threads, keeping index order.
pub fn run_cells<T, F>(n: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if jobs <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

pub fn load_or_generate(src: &DatasetSource, seed: u64) -> Result<Dataset> {
    match &src.files {
        Some(paths) => load_dataset(paths),
        None => gen_sbm(
            src.sbm.num_nodes,
            src.sbm.communities,
            src.sbm.p_in,
            src.sbm.p_out,
            seed,
        ),
    }
}

pub fn model_config(section: &ModelSection, ds: &Dataset) -> Result<ModelConfig> {
    let (task, outputs) = match &ds.targets {
        Some(Targets::Classes { num_classes, .. }) => (Task::Classification, *num_classes),
        Some(Targets::Values(t)) => (Task::Regression, t.cols()),
        None => return Err(Error::InvalidArgument("dataset has no labels or targets".into())),
    };
    Ok(ModelConfig {
        raw_width: ds.features.cols(),
        hidden_width: section.hidden_width,
        outputs,
        task,
        architecture: section.architecture,
        coupling: section.coupling,
        share_weights: section.share_weights,
        leaky_slope: section.leaky_slope,
        adjacency: section.adjacency,
        integrator: section.integrator.clone(),
    })
}

fn dataset_splits(ds: &Dataset, seed: u64) -> SplitSpec {
    ds.splits
        .clone()
        .unwrap_or_else(|| SplitSpec::random(ds.num_nodes(), 0.5, 0.25, &mut Rng::new(seed)))
}

/// One training run with parameters initialised from `seed`.
pub fn train_once(section: &ModelSection, train_cfg: &TrainConfig, ds: &Dataset, seed: u64) -> Result<TrainOutcome> {
    let cfg = model_config(section, ds)?;
    let model = Model::new(cfg, &ds.graph)?;
    let params = model.init_params(&mut Rng::new(seed))?;
    let targets = ds.targets.as_ref().expect("checked by model_config");
    train(
        &model,
        params,
        &ds.features,
        targets,
        &dataset_splits(ds, seed),
        train_cfg,
    )
}

/// Dataset from `seed`, parameters from `split_seed(seed, 0)`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<(Dataset, ModelConfig, TrainOutcome)> {
    let ds = load_or_generate(&cfg.dataset, cfg.seed)?;
    let mcfg = model_config(&cfg.model, &ds)?;
    let out = train_once(&cfg.model, &cfg.train, &ds, split_seed(cfg.seed, 0))?;
    info!(
        "best epoch {} val {} test {}",
        out.best_epoch, out.best_val_metric, out.test_metric
    );
    Ok((ds, mcfg, out))
}

#[derive(Debug, Clone)]
pub struct EnergyCurve {
    pub model: String,
    /// `None` for stacked baselines.
    pub alpha: Option<f64>,
    pub gamma: f64,
    pub report: EnergyReport,
}

/// Layer-wise Dirichlet energies on a lattice with `U[0,1]` features for
/// stacked GCN and GAT and for the oscillator with both couplings at every
/// configured `α`.
pub fn energy_profile(cfg: &EnergyProfileConfig, seed: u64) -> Result<Vec<EnergyCurve>> {
    let g = Graph::grid(cfg.grid.width, cfg.grid.height)?;
    let m = cfg.grid.features;
    let mut rng = Rng::new(seed);
    let x0 = Matrix::from_fn(g.num_nodes(), m, |_, _| rng.uniform());
    let mut curves = Vec::new();
    for (k, kind) in [CouplingKind::Gcn, CouplingKind::Gat].into_iter().enumerate() {
        let ccfg = CouplingConfig::new(kind, m, cfg.layers);
        let coupling = Coupling::new(ccfg.clone(), &g)?;
        let params = init_params(&ccfg, &mut Rng::new(split_seed(seed, k as u64)))?;
        let name = match kind {
            CouplingKind::Gcn => "gcn",
            CouplingKind::Gat => "gat",
        };
        let base = IntegratorConfig::new(1.0, 0.0, 1.0, cfg.layers, cfg.activation);
        let tr = simulate_baseline(&coupling, &params, &x0, &base)?;
        curves.push(EnergyCurve {
            model: name.into(),
            alpha: None,
            gamma: 1.0,
            report: dirichlet_profile(&tr.xs, &g)?,
        });
        for &alpha in &cfg.alphas {
            let mut icfg = IntegratorConfig::new(cfg.dt, alpha, cfg.gamma, cfg.layers, cfg.activation);
            icfg.y0_mode = Y0Mode::CopyX0;
            let tr = simulate_graphcon(&coupling, &params, &x0, None, &icfg)?;
            curves.push(EnergyCurve {
                model: format!("graphcon_{name}"),
                alpha: Some(alpha),
                gamma: cfg.gamma,
                report: dirichlet_profile(&tr.xs, &g)?,
            });
        }
    }
    Ok(curves)
}

/// CSV `layer,model,alpha,gamma,energy` for layers `1..=N`; `alpha` is empty
/// for stacked baselines.
pub fn write_energy_csv<W: Write>(curves: &[EnergyCurve], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["layer", "model", "alpha", "gamma", "energy"])?;
    let layers = curves.iter().map(|c| c.report.energies.len()).max().unwrap_or(0);
    for layer in 1..layers {
        for c in curves {
            w.write_record([
                layer.to_string(),
                c.model.clone(),
                c.alpha.map(fmt_float).unwrap_or_default(),
                fmt_float(c.gamma),
                fmt_float(c.report.energies[layer]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: String,
    pub parameter: String,
    pub value: f64,
    pub best_epoch: usize,
    pub val_metric: f64,
    pub test_metric: f64,
}

fn arch_name(section: &ModelSection) -> String {
    let c = match section.coupling {
        CouplingKind::Gcn => "gcn",
        CouplingKind::Gat => "gat",
    };
    match section.architecture {
        Architecture::Graphcon => format!("graphcon_{c}"),
        Architecture::Baseline => c.to_string(),
    }
}

fn sweep_row(section: &ModelSection, parameter: &str, value: f64, out: &TrainOutcome) -> SweepRow {
    SweepRow {
        model: arch_name(section),
        parameter: parameter.into(),
        value,
        best_epoch: out.best_epoch,
        val_metric: out.best_val_metric,
        test_metric: out.test_metric,
    }
}

/// Trains the configured oscillator model and a plain stacked GCN/GAT
/// (`Δt = γ = 1`) at every depth. All cells share the dataset; cell `k`
/// initialises from `split_seed(seed, k)`.
pub fn cmd_depth_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<SweepRow>> {
    let ds = load_or_generate(&cfg.dataset, cfg.seed)?;
    let mut cells = Vec::new();
    for arch in [Architecture::Graphcon, Architecture::Baseline] {
        for &n in &cfg.depth_sweep.depths {
            let mut s = cfg.model.clone();
            s.architecture = arch;
            s.integrator.n_layers = n;
            if arch == Architecture::Baseline {
                s.integrator.dt = 1.0;
                s.integrator.gamma = 1.0;
            }
            cells.push(s);
        }
    }
    run_cells(cells.len(), jobs, |k| {
        let s = &cells[k];
        let out = train_once(s, &cfg.train, &ds, split_seed(cfg.seed, k as u64))?;
        info!("{} N={} test {}", arch_name(s), s.integrator.n_layers, out.test_metric);
        Ok(sweep_row(s, "n_layers", s.integrator.n_layers as f64, &out))
    })
}

/// Sweeps `α` with `γ` fixed, then `γ` with `α` fixed, over an even grid.
pub fn cmd_sensitivity_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<SweepRow>> {
    let sc = &cfg.sensitivity;
    if sc.points < 2 || !(sc.max > sc.min) {
        return Err(Error::InvalidArgument(
            "sensitivity grid needs at least 2 points and max > min".into(),
        ));
    }
    let ds = load_or_generate(&cfg.dataset, cfg.seed)?;
    let grid: Vec<f64> = (0..sc.points)
        .map(|i| sc.min + (sc.max - sc.min) * i as f64 / (sc.points - 1) as f64)
        .collect();
    let mut cells = Vec::new();
    for param in ["alpha", "gamma"] {
        for &value in &grid {
            let mut s = cfg.model.clone();
            match param {
                "alpha" => s.integrator.alpha = value,
                _ => s.integrator.gamma = value,
            }
            cells.push((param, value, s));
        }
    }
    run_cells(cells.len(), jobs, |k| {
        let (param, value, s) = &cells[k];
        let out = train_once(s, &cfg.train, &ds, split_seed(cfg.seed, k as u64))?;
        Ok(sweep_row(s, param, *value, &out))
    })
}

/// CSV `model,parameter,value,best_epoch,val_metric,test_metric`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "parameter", "value", "best_epoch", "val_metric", "test_metric"])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.parameter.clone(),
            fmt_float(r.value),
            r.best_epoch.to_string(),
            fmt_float(r.val_metric),
            fmt_float(r.test_metric),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// CSV `n_layers,model,max_grad,min_nonzero_grad,bound`; `bound` is empty
/// where the step-size precondition fails or for the stacked model.
pub fn write_gradient_sweep_csv<W: Write>(rows: &[DepthGradientRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n_layers", "model", "max_grad", "min_nonzero_grad", "bound"])?;
    for r in rows {
        w.write_record([
            r.n_layers.to_string(),
            r.model.clone(),
            fmt_float(r.max_grad),
            fmt_float(r.min_nonzero_grad),
            r.bound.map(fmt_float).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
