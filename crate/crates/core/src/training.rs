//! Encoder, oscillator or stacked propagation, and linear readout, trained
//! full-batch on node-level tasks.

use std::io::Write;
use std::path::Path;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, DEFAULT_LEAKY_SLOPE};
use crate::checkpoint::Checkpoint;
use crate::coupling::{init_params, Coupling, CouplingConfig, CouplingKind, CouplingParams, CouplingVars};
use crate::dynamics::{baseline_forward, graphcon_forward, IntegratorConfig, TapeTrajectory};
use crate::error::{Error, Result};
use crate::format::fmt_float;
use crate::graph::{Graph, NormKind};
use crate::rng::Rng;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Oscillator layers.
    Graphcon,
    /// Stacked `Xⁿ = (Δt/γ)σ(F(Xⁿ⁻¹))` layers.
    Baseline,
}

fn default_slope() -> f64 {
    DEFAULT_LEAKY_SLOPE
}

fn default_norm() -> NormKind {
    NormKind::SymGcn
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub raw_width: usize,
    pub hidden_width: usize,
    /// Classes for classification, 1 for regression.
    pub outputs: usize,
    pub task: Task,
    pub architecture: Architecture,
    pub coupling: CouplingKind,
    #[serde(default)]
    pub share_weights: bool,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    #[serde(default = "default_norm")]
    pub adjacency: NormKind,
    pub integrator: IntegratorConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.raw_width == 0 || self.hidden_width == 0 || self.outputs == 0 {
            return Err(Error::InvalidArgument("model widths must be positive".into()));
        }
        if self.task == Task::Classification && self.outputs < 2 {
            return Err(Error::InvalidArgument("classification needs at least 2 classes".into()));
        }
        self.integrator.validate()
    }

    pub fn coupling_config(&self) -> CouplingConfig {
        CouplingConfig {
            kind: self.coupling,
            width: self.hidden_width,
            num_layers: self.integrator.n_layers,
            share_weights: self.share_weights,
            leaky_slope: self.leaky_slope,
            adjacency: self.adjacency,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

fn d_lr() -> f64 {
    0.01
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_momentum() -> f64 {
    0.9
}
fn d_epochs() -> usize {
    200
}
fn d_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    /// Stop after this many epochs without validation improvement.
    #[serde(default)]
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: d_optimizer(),
            learning_rate: d_lr(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            eps: d_eps(),
            momentum: d_momentum(),
            weight_decay: 0.0,
            epochs: d_epochs(),
            patience: None,
        }
    }
}

impl TrainConfig {
    /// `lr = 0` is accepted so a run can leave parameters untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut seen = vec![false; num_nodes];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= num_nodes {
                return Err(Error::NodeOutOfRange { node: i, num_nodes });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument(format!(
                    "node {i} appears in more than one split"
                )));
            }
        }
        if self.train.is_empty() {
            return Err(Error::InvalidArgument("training split is empty".into()));
        }
        Ok(())
    }

    /// Shuffled split with the given train and validation fractions; the
    /// remainder is the test set.
    pub fn random(num_nodes: usize, train_frac: f64, val_frac: f64, rng: &mut Rng) -> Self {
        let mut order: Vec<usize> = (0..num_nodes).collect();
        rng.shuffle(&mut order);
        let n_train = (train_frac * num_nodes as f64).round() as usize;
        let n_val = (val_frac * num_nodes as f64).round() as usize;
        let mut train = order[..n_train].to_vec();
        let mut val = order[n_train..n_train + n_val].to_vec();
        let mut test = order[n_train + n_val..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Self { train, val, test }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, num_classes: usize },
    Values(Matrix),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `raw_width x hidden_width`.
    pub encoder: Matrix,
    pub coupling: CouplingParams,
    /// `hidden_width x outputs`.
    pub readout: Matrix,
}

impl ModelParams {
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.encoder];
        for l in &self.coupling.layers {
            out.push(&l.w);
            if let Some(a) = &l.att {
                out.push(a);
            }
        }
        out.push(&self.readout);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.encoder];
        for l in &mut self.coupling.layers {
            out.push(&mut l.w);
            if let Some(a) = &mut l.att {
                out.push(a);
            }
        }
        out.push(&mut self.readout);
        out
    }

    pub fn to_tape(&self, tape: &Tape) -> ModelVars {
        ModelVars {
            encoder: tape.leaf(self.encoder.clone()),
            coupling: self.coupling.to_tape(tape),
            readout: tape.leaf(self.readout.clone()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new();
        ck.push("encoder", &self.encoder);
        self.coupling.write_checkpoint("coupling.", &mut ck);
        ck.push("readout", &self.readout);
        ck.save(path)
    }

    pub fn load(cfg: &ModelConfig, path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let encoder = ck.get("encoder")?;
        let readout = ck.get("readout")?;
        if encoder.shape() != (cfg.raw_width, cfg.hidden_width) || readout.shape() != (cfg.hidden_width, cfg.outputs) {
            return Err(Error::Shape("checkpoint does not match the model configuration".into()));
        }
        let coupling = CouplingParams::read_checkpoint(&cfg.coupling_config(), "coupling.", &ck)?;
        Ok(Self {
            encoder,
            coupling,
            readout,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ModelVars {
    pub encoder: Var,
    pub coupling: CouplingVars,
    pub readout: Var,
}

impl ModelVars {
    /// Same order as [`ModelParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.encoder];
        for l in &self.coupling.layers {
            out.push(l.w);
            if let Some(a) = l.att {
                out.push(a);
            }
        }
        out.push(self.readout);
        out
    }
}

/// A model bound to a graph.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    coupling: Coupling,
}

#[derive(Debug, Clone)]
pub struct ForwardRecord {
    pub hidden0: Var,
    pub states: TapeTrajectory,
    pub output: Var,
}

impl Model {
    pub fn new(cfg: ModelConfig, g: &Graph) -> Result<Self> {
        cfg.validate()?;
        let coupling = Coupling::new(cfg.coupling_config(), g)?;
        Ok(Self { cfg, coupling })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    /// Encoder and readout `U[-1/√fan_in, 1/√fan_in]`; coupling as in
    /// [`init_params`].
    pub fn init_params(&self, rng: &mut Rng) -> Result<ModelParams> {
        let (r, m, c) = (self.cfg.raw_width, self.cfg.hidden_width, self.cfg.outputs);
        let se = 1.0 / (r as f64).sqrt();
        let encoder = Matrix::from_fn(r, m, |_, _| rng.uniform_in(-se, se));
        let coupling = init_params(&self.coupling.config().clone(), rng)?;
        let sr = 1.0 / (m as f64).sqrt();
        let readout = Matrix::from_fn(m, c, |_, _| rng.uniform_in(-sr, sr));
        Ok(ModelParams {
            encoder,
            coupling,
            readout,
        })
    }

    /// `readout(X^N)` with `X⁰ = features · encoder`.
    pub fn forward(&self, tape: &Tape, vars: &ModelVars, features: Var) -> Result<ForwardRecord> {
        if features.cols() != self.cfg.raw_width {
            return Err(Error::Shape(format!(
                "features have {} columns, model expects {}",
                features.cols(),
                self.cfg.raw_width
            )));
        }
        let hidden0 = tape.matmul(features, vars.encoder)?;
        let states = match self.cfg.architecture {
            Architecture::Graphcon => graphcon_forward(
                tape,
                &self.coupling,
                &vars.coupling,
                hidden0,
                None,
                &self.cfg.integrator,
            )?,
            Architecture::Baseline => {
                baseline_forward(tape, &self.coupling, &vars.coupling, hidden0, &self.cfg.integrator)?
            }
        };
        let output = tape.matmul(states.last_x(), vars.readout)?;
        Ok(ForwardRecord {
            hidden0,
            states,
            output,
        })
    }

    /// Value-only predictions.
    pub fn predict(&self, params: &ModelParams, features: &Matrix) -> Result<Matrix> {
        let tape = Tape::new();
        let vars = params.to_tape(&tape);
        let x = tape.leaf(features.clone());
        let rec = self.forward(&tape, &vars, x)?;
        let out = tape.value_cloned(rec.output);
        Ok(out)
    }

    fn loss(&self, tape: &Tape, output: Var, targets: &Targets, mask: &[usize]) -> Result<Var> {
        match (self.cfg.task, targets) {
            (Task::Classification, Targets::Classes { labels, .. }) => tape.cross_entropy_loss(output, labels, mask),
            (Task::Regression, Targets::Values(t)) => tape.mse_loss(output, t, Some(mask)),
            _ => Err(Error::InvalidArgument("targets do not match the model task".into())),
        }
    }

    /// Loss over `mask` and gradients for every parameter, in
    /// [`ModelParams::tensors`] order.
    pub fn loss_and_gradients(
        &self,
        params: &ModelParams,
        features: &Matrix,
        targets: &Targets,
        mask: &[usize],
    ) -> Result<(f64, Vec<Matrix>, Matrix)> {
        let tape = Tape::new();
        let vars = params.to_tape(&tape);
        let x = tape.leaf(features.clone());
        let rec = self.forward(&tape, &vars, x)?;
        let loss = self.loss(&tape, rec.output, targets, mask)?;
        let g = tape.backward(loss)?;
        let value = tape.value(loss)[(0, 0)];
        let output = tape.value_cloned(rec.output);
        Ok((value, vars.vars().into_iter().map(|v| g.get(v)).collect(), output))
    }

    /// `‖∂J/∂Zˡ‖∞` for `ℓ = 1..N`, where `Zˡ` is `(Xˡ, Yˡ)` for oscillator
    /// layers and `Xˡ` for stacked ones.
    pub fn grad_norm_profile(
        &self,
        params: &ModelParams,
        features: &Matrix,
        targets: &Targets,
        mask: &[usize],
    ) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let vars = params.to_tape(&tape);
        let x = tape.leaf(features.clone());
        let rec = self.forward(&tape, &vars, x)?;
        let loss = self.loss(&tape, rec.output, targets, mask)?;
        let g = tape.backward(loss)?;
        let n = rec.states.xs.len() - 1;
        Ok((1..=n)
            .map(|l| {
                let mut norm = g.get(rec.states.xs[l]).max_abs();
                if let Some(&y) = rec.states.ys.get(l) {
                    norm = norm.max(g.get(y).max_abs());
                }
                norm
            })
            .collect())
    }
}

/// Accuracy over `mask` for classification; mean absolute error for
/// regression.
pub fn metric(task: Task, output: &Matrix, targets: &Targets, mask: &[usize]) -> f64 {
    if mask.is_empty() {
        return f64::NAN;
    }
    match (task, targets) {
        (Task::Classification, Targets::Classes { labels, .. }) => {
            let correct = mask
                .iter()
                .filter(|&&i| {
                    let row = output.row(i);
                    let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
                    best == labels[i]
                })
                .count();
            correct as f64 / mask.len() as f64
        }
        (Task::Regression, Targets::Values(t)) => {
            let mut total = 0.0;
            for &i in mask {
                for c in 0..t.cols() {
                    total += (output[(i, c)] - t[(i, c)]).abs();
                }
            }
            total / (mask.len() * t.cols()) as f64
        }
        _ => f64::NAN,
    }
}

fn better(task: Task, candidate: f64, best: f64) -> bool {
    match task {
        Task::Classification => candidate > best,
        Task::Regression => candidate < best,
    }
}

/// Adam or SGD with momentum over a flat list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: TrainConfig,
    step: i32,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, shapes: &[(usize, usize)]) -> Self {
        let zeros = || shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        Self {
            cfg: cfg.clone(),
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) {
        self.step += 1;
        let c = &self.cfg;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let mut g = g.clone();
            if c.weight_decay != 0.0 {
                g.axpy(c.weight_decay, p);
            }
            match c.optimizer {
                OptimizerKind::Adam => {
                    let bc1 = 1.0 - c.beta1.powi(self.step);
                    let bc2 = 1.0 - c.beta2.powi(self.step);
                    let (m, v) = (&mut self.first[k], &mut self.second[k]);
                    for i in 0..g.len() {
                        let gi = g.data()[i];
                        let mi = c.beta1 * m.data()[i] + (1.0 - c.beta1) * gi;
                        let vi = c.beta2 * v.data()[i] + (1.0 - c.beta2) * gi * gi;
                        m.data_mut()[i] = mi;
                        v.data_mut()[i] = vi;
                        p.data_mut()[i] -= c.learning_rate * (mi / bc1) / ((vi / bc2).sqrt() + c.eps);
                    }
                }
                OptimizerKind::SgdMomentum => {
                    let buf = &mut self.first[k];
                    for i in 0..g.len() {
                        let b = c.momentum * buf.data()[i] + g.data()[i];
                        buf.data_mut()[i] = b;
                        p.data_mut()[i] -= c.learning_rate * b;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    pub test_metric: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochMetrics>,
    /// Parameters with the best validation metric.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub best_val_metric: f64,
    /// Test metric of the restored parameters.
    pub test_metric: f64,
}

/// Full-batch training. Each epoch evaluates the current parameters on all
/// splits, then takes one optimizer step on the training loss.
pub fn train(
    model: &Model,
    init: ModelParams,
    features: &Matrix,
    targets: &Targets,
    splits: &SplitSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    splits.validate(features.rows())?;
    if targets.len() != features.rows() {
        return Err(Error::CountMismatch {
            what: "targets".into(),
            found: targets.len(),
            expected: features.rows(),
        });
    }
    let task = model.config().task;
    let mut params = init;
    let shapes: Vec<_> = params.tensors().iter().map(|m| m.shape()).collect();
    let mut opt = Optimizer::new(cfg, &shapes);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_val = match task {
        Task::Classification => f64::NEG_INFINITY,
        Task::Regression => f64::INFINITY,
    };
    let mut best_test = f64::NAN;
    let mut since_best = 0;
    let val_mask = if splits.val.is_empty() {
        &splits.train
    } else {
        &splits.val
    };

    for epoch in 1..=cfg.epochs {
        let (train_loss, grads, output) = match model.loss_and_gradients(&params, features, targets, &splits.train) {
            Ok(r) => r,
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch }),
            Err(e) => return Err(e),
        };
        if !train_loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::Diverged { epoch });
        }
        let val_loss = eval_loss(model, &output, targets, val_mask)?;
        let val_metric = metric(task, &output, targets, val_mask);
        let test_metric = metric(task, &output, targets, &splits.test);
        debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} metric {val_metric:.4}");
        history.push(EpochMetrics {
            epoch,
            train_loss,
            val_loss,
            val_metric,
            test_metric,
        });
        if better(task, val_metric, best_val) {
            best_val = val_metric;
            best = params.clone();
            best_epoch = epoch;
            best_test = test_metric;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                info!("early stop at epoch {epoch}");
                break;
            }
        }
        opt.step(&mut params.tensors_mut(), &grads);
    }
    Ok(TrainOutcome {
        history,
        best,
        best_epoch,
        best_val_metric: best_val,
        test_metric: best_test,
    })
}

fn eval_loss(model: &Model, output: &Matrix, targets: &Targets, mask: &[usize]) -> Result<f64> {
    let tape = Tape::new();
    let o = tape.leaf(output.clone());
    let l = model.loss(&tape, o, targets, mask)?;
    let v = tape.value(l)[(0, 0)];
    Ok(v)
}

/// CSV with header `epoch,train_loss,val_loss,val_metric,test_metric`.
pub fn write_history_csv<W: Write>(history: &[EpochMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "val_loss", "val_metric", "test_metric"])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            fmt_float(h.train_loss),
            fmt_float(h.val_loss),
            fmt_float(h.val_metric),
            fmt_float(h.test_metric),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Activation;
    use crate::testutil::{rand_matrix, random_graph};

    fn config(arch: Architecture, kind: CouplingKind, act: Activation, n: usize, task: Task) -> ModelConfig {
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
            integrator: IntegratorConfig::new(0.5, 0.3, 1.0, n, act),
        }
    }

    #[test]
    fn zero_encoder_and_readout_predict_zero() {
        let g = Graph::ring(5).unwrap();
        let cfg = config(
            Architecture::Graphcon,
            CouplingKind::Gcn,
            Activation::Tanh,
            3,
            Task::Regression,
        );
        let model = Model::new(cfg, &g).unwrap();
        let mut p = model.init_params(&mut Rng::new(0)).unwrap();
        p.encoder = Matrix::zeros(3, 4);
        p.readout = Matrix::zeros(4, 1);
        let out = model.predict(&p, &Matrix::filled(5, 3, 1.0)).unwrap();
        assert_eq!(out, Matrix::zeros(5, 1));
    }

    #[test]
    fn zero_layers_compose_encoder_and_readout() {
        let g = Graph::ring(6).unwrap();
        let mut rng = Rng::new(1);
        for arch in [Architecture::Graphcon, Architecture::Baseline] {
            let cfg = config(arch, CouplingKind::Gat, Activation::Relu, 0, Task::Classification);
            let model = Model::new(cfg, &g).unwrap();
            let p = model.init_params(&mut rng).unwrap();
            let x = rand_matrix(&mut rng, 6, 3, -1.0, 1.0);
            let expect = x.matmul(&p.encoder).unwrap().matmul(&p.readout).unwrap();
            assert_eq!(model.predict(&p, &x).unwrap(), expect);
        }
    }

    #[test]
    fn forward_matches_manual_composition() {
        let mut rng = Rng::new(8);
        let g = random_graph(&mut rng, 8, 0.4);
        let cfg = config(
            Architecture::Graphcon,
            CouplingKind::Gcn,
            Activation::Tanh,
            2,
            Task::Regression,
        );
        let model = Model::new(cfg.clone(), &g).unwrap();
        let p = model.init_params(&mut rng).unwrap();
        let x = rand_matrix(&mut rng, 8, 3, -1.0, 1.0);
        let h0 = x.matmul(&p.encoder).unwrap();
        let tr = crate::dynamics::simulate_graphcon(model.coupling(), &p.coupling, &h0, None, &cfg.integrator).unwrap();
        let expect = tr.last_x().matmul(&p.readout).unwrap();
        assert_eq!(model.predict(&p, &x).unwrap(), expect);
    }

    #[test]
    fn masked_loss_ignores_unmasked_targets() {
        let mut rng = Rng::new(2);
        let g = random_graph(&mut rng, 6, 0.5);
        let cfg = config(
            Architecture::Graphcon,
            CouplingKind::Gcn,
            Activation::Tanh,
            2,
            Task::Regression,
        );
        let model = Model::new(cfg, &g).unwrap();
        let p = model.init_params(&mut rng).unwrap();
        let x = rand_matrix(&mut rng, 6, 3, -1.0, 1.0);
        let t = rand_matrix(&mut rng, 6, 1, -1.0, 1.0);
        let mask = [0, 2, 3];
        let (l1, g1, _) = model
            .loss_and_gradients(&p, &x, &Targets::Values(t.clone()), &mask)
            .unwrap();
        let mut t2 = t.clone();
        t2[(1, 0)] += 100.0;
        t2[(5, 0)] -= 7.0;
        let (l2, g2, _) = model.loss_and_gradients(&p, &x, &Targets::Values(t2), &mask).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn optimizer_steps_match_closed_form() {
        // J(p) = ½‖p‖², gradient p
        let p0 = Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let mut p = p0.clone();
        let mut opt = Optimizer::new(&cfg, &[(1, 3)]);
        opt.step(&mut [&mut p], std::slice::from_ref(&p0));
        // first Adam step moves each entry by lr·g/(|g| + eps')
        for (a, b) in p.data().iter().zip(p0.data()) {
            let expect = b - 0.1 * b / (b.abs() + 1e-8);
            assert!((a - expect).abs() < 1e-12);
        }

        let cfg = TrainConfig {
            optimizer: OptimizerKind::SgdMomentum,
            learning_rate: 0.1,
            momentum: 0.5,
            ..TrainConfig::default()
        };
        let mut p = p0.clone();
        let mut opt = Optimizer::new(&cfg, &[(1, 3)]);
        let g0 = p.clone();
        opt.step(&mut [&mut p], &[g0]);
        let g1 = p.clone();
        opt.step(&mut [&mut p], std::slice::from_ref(&g1));
        for i in 0..3 {
            let x0 = p0.data()[i];
            let x1 = x0 - 0.1 * x0;
            let x2 = x1 - 0.1 * (0.5 * x0 + x1);
            assert!((p.data()[i] - x2).abs() < 1e-12);
        }
    }

    fn toy_task(rng: &mut Rng) -> (Graph, Matrix, Targets, SplitSpec) {
        let g = random_graph(rng, 12, 0.3);
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let x = Matrix::from_fn(
            12,
            3,
            |i, c| if labels[i] == c { 1.0 } else { 0.0 } + 0.3 * rng.gaussian(),
        );
        let splits = SplitSpec::random(12, 0.5, 0.25, rng);
        (g, x, Targets::Classes { labels, num_classes: 3 }, splits)
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut rng = Rng::new(4);
        let (g, x, t, s) = toy_task(&mut rng);
        let cfg = config(
            Architecture::Graphcon,
            CouplingKind::Gcn,
            Activation::Relu,
            3,
            Task::Classification,
        );
        let model = Model::new(cfg, &g).unwrap();
        let p = model.init_params(&mut rng).unwrap();
        let tc = TrainConfig {
            learning_rate: 0.0,
            epochs: 5,
            ..TrainConfig::default()
        };
        let out = train(&model, p.clone(), &x, &t, &s, &tc).unwrap();
        assert_eq!(out.best, p);
        assert!(out.history.windows(2).all(|w| w[0].train_loss == w[1].train_loss));
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let run = || {
            let mut rng = Rng::new(5);
            let (g, x, t, s) = toy_task(&mut rng);
            let cfg = config(
                Architecture::Graphcon,
                CouplingKind::Gat,
                Activation::Relu,
                3,
                Task::Classification,
            );
            let model = Model::new(cfg, &g).unwrap();
            let p = model.init_params(&mut rng).unwrap();
            let tc = TrainConfig {
                epochs: 60,
                ..TrainConfig::default()
            };
            train(&model, p, &x, &t, &s, &tc).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.best, b.best);
        assert!(a.history.last().unwrap().train_loss < a.history[0].train_loss);
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let mut rng = Rng::new(6);
        let (g, x, _, s) = toy_task(&mut rng);
        let mut cfg = config(
            Architecture::Baseline,
            CouplingKind::Gcn,
            Activation::Identity,
            2,
            Task::Regression,
        );
        cfg.integrator.dt = 1.0;
        let model = Model::new(cfg, &g).unwrap();
        let mut p = model.init_params(&mut rng).unwrap();
        p.encoder = Matrix::filled(3, 4, 1e160);
        let t = Targets::Values(Matrix::zeros(12, 1));
        let r = train(&model, p, &x, &t, &s, &TrainConfig::default());
        assert!(matches!(r, Err(Error::Diverged { epoch: 1 })), "{r:?}");
    }

    #[test]
    fn grad_norm_profile_has_one_entry_per_layer() {
        let mut rng = Rng::new(7);
        let (g, x, t, s) = toy_task(&mut rng);
        for n in [1, 4] {
            let cfg = config(
                Architecture::Graphcon,
                CouplingKind::Gcn,
                Activation::Tanh,
                n,
                Task::Classification,
            );
            let model = Model::new(cfg, &g).unwrap();
            let p = model.init_params(&mut rng).unwrap();
            let prof = model.grad_norm_profile(&p, &x, &t, &s.train).unwrap();
            assert_eq!(prof.len(), n);
            assert!(prof.iter().all(|v| v.is_finite() && *v > 0.0));
        }
    }

    #[test]
    fn checkpoint_round_trip_and_history_csv() {
        let mut rng = Rng::new(9);
        let g = Graph::ring(4).unwrap();
        let cfg = config(
            Architecture::Graphcon,
            CouplingKind::Gat,
            Activation::Tanh,
            2,
            Task::Classification,
        );
        let model = Model::new(cfg.clone(), &g).unwrap();
        let p = model.init_params(&mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        p.save(&path).unwrap();
        assert_eq!(ModelParams::load(&cfg, &path).unwrap(), p);

        let mut buf = Vec::new();
        let h = vec![EpochMetrics {
            epoch: 1,
            train_loss: 0.5,
            val_loss: 0.25,
            val_metric: 1.0,
            test_metric: 0.75,
        }];
        write_history_csv(&h, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,train_loss,val_loss,val_metric,test_metric\n1,0.5,0.25,1,0.75\n"
        );
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        let mut rng = Rng::new(11);
        let g = random_graph(&mut rng, 6, 0.5);
        let x = rand_matrix(&mut rng, 6, 3, -1.0, 1.0);
        let labels: Vec<usize> = (0..6).map(|i| i % 3).collect();
        let classes = Targets::Classes { labels, num_classes: 3 };
        let values = Targets::Values(rand_matrix(&mut rng, 6, 1, -1.0, 1.0));
        let mask = [0, 1, 3, 4];
        for arch in [Architecture::Graphcon, Architecture::Baseline] {
            for kind in [CouplingKind::Gcn, CouplingKind::Gat] {
                for act in [Activation::Tanh, Activation::Relu, Activation::Identity] {
                    for task in [Task::Classification, Task::Regression] {
                        let t = if task == Task::Classification {
                            &classes
                        } else {
                            &values
                        };
                        let model = Model::new(config(arch, kind, act, 3, task), &g).unwrap();
                        let p = model.init_params(&mut rng).unwrap();
                        let (_, grads, _) = model.loss_and_gradients(&p, &x, t, &mask).unwrap();
                        let h = 1e-6;
                        for (k, grad) in grads.iter().enumerate() {
                            for i in 0..grad.len() {
                                let mut plus = p.clone();
                                plus.tensors_mut()[k].data_mut()[i] += h;
                                let mut minus = p.clone();
                                minus.tensors_mut()[k].data_mut()[i] -= h;
                                let lp = model.loss_and_gradients(&plus, &x, t, &mask).unwrap().0;
                                let lm = model.loss_and_gradients(&minus, &x, t, &mask).unwrap().0;
                                let fd = (lp - lm) / (2.0 * h);
                                let an = grad.data()[i];
                                assert!(
                                    (fd - an).abs() <= 1e-5 * (1.0 + an.abs()),
                                    "{arch:?} {kind:?} {act:?} {task:?} tensor {k} entry {i}: {fd} vs {an}"
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn split_validation() {
        assert!(SplitSpec {
            train: vec![0, 1],
            val: vec![1],
            test: vec![]
        }
        .validate(3)
        .is_err());
        assert!(SplitSpec {
            train: vec![0, 5],
            val: vec![],
            test: vec![]
        }
        .validate(3)
        .is_err());
        let s = SplitSpec::random(10, 0.6, 0.2, &mut Rng::new(0));
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        s.validate(10).unwrap();
    }
}
