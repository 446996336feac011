//! Learnable one-hop couplings: graph convolution and single-head attention.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, DEFAULT_LEAKY_SLOPE};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::graph::{Graph, Neighborhoods, NormKind, NormalizedAdjacency};
use crate::rng::Rng;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    Gcn,
    Gat,
}

impl std::str::FromStr for CouplingKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(CouplingKind::Gcn),
            "gat" => Ok(CouplingKind::Gat),
            other => Err(Error::InvalidArgument(format!("unknown coupling {other:?}"))),
        }
    }
}

fn default_slope() -> f64 {
    DEFAULT_LEAKY_SLOPE
}

fn default_norm() -> NormKind {
    NormKind::SymGcn
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub kind: CouplingKind,
    pub width: usize,
    pub num_layers: usize,
    #[serde(default)]
    pub share_weights: bool,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    #[serde(default = "default_norm")]
    pub adjacency: NormKind,
}

impl CouplingConfig {
    pub fn new(kind: CouplingKind, width: usize, num_layers: usize) -> Self {
        Self {
            kind,
            width,
            num_layers,
            share_weights: false,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            adjacency: NormKind::SymGcn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::InvalidArgument("coupling width must be at least 1".into()));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::InvalidArgument("leaky slope must be finite".into()));
        }
        Ok(())
    }

    /// Number of distinct parameter sets.
    pub fn num_param_sets(&self) -> usize {
        if self.share_weights {
            1
        } else {
            self.num_layers
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `m x m`.
    pub w: Matrix,
    /// `2m x 1`, attention only.
    pub att: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingParams {
    pub layers: Vec<LayerParams>,
}

/// `W ~ U[-1/√m, 1/√m]`, `a ~ U[-1/√(2m), 1/√(2m)]`, drawn layer by layer.
pub fn init_params(cfg: &CouplingConfig, rng: &mut Rng) -> Result<CouplingParams> {
    cfg.validate()?;
    let m = cfg.width;
    let s = 1.0 / (m as f64).sqrt();
    let sa = 1.0 / ((2 * m) as f64).sqrt();
    let layers = (0..cfg.num_param_sets())
        .map(|_| {
            let w = Matrix::from_fn(m, m, |_, _| rng.uniform_in(-s, s));
            let att =
                (cfg.kind == CouplingKind::Gat).then(|| Matrix::from_fn(2 * m, 1, |_, _| rng.uniform_in(-sa, sa)));
            LayerParams { w, att }
        })
        .collect();
    Ok(CouplingParams { layers })
}

impl CouplingParams {
    /// Every layer gets `W = c·I` and zero attention vectors where applicable.
    pub fn scaled_identity(cfg: &CouplingConfig, c: f64) -> Self {
        let m = cfg.width;
        let layers = (0..cfg.num_param_sets())
            .map(|_| LayerParams {
                w: Matrix::identity(m).scaled(c),
                att: (cfg.kind == CouplingKind::Gat).then(|| Matrix::zeros(2 * m, 1)),
            })
            .collect();
        Self { layers }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.all_finite() && l.att.as_ref().is_none_or(Matrix::all_finite))
    }

    /// Records every parameter as a tape leaf.
    pub fn to_tape(&self, tape: &Tape) -> CouplingVars {
        CouplingVars {
            layers: self
                .layers
                .iter()
                .map(|l| LayerVars {
                    w: tape.leaf(l.w.clone()),
                    att: l.att.as_ref().map(|a| tape.leaf(a.clone())),
                })
                .collect(),
        }
    }

    pub fn write_checkpoint(&self, prefix: &str, ck: &mut Checkpoint) {
        for (n, l) in self.layers.iter().enumerate() {
            ck.push(format!("{prefix}layer{n}.w"), &l.w);
            if let Some(a) = &l.att {
                ck.push(format!("{prefix}layer{n}.att"), a);
            }
        }
    }

    pub fn read_checkpoint(cfg: &CouplingConfig, prefix: &str, ck: &Checkpoint) -> Result<Self> {
        let m = cfg.width;
        let mut layers = Vec::new();
        for n in 0..cfg.num_param_sets() {
            let w = ck.get(&format!("{prefix}layer{n}.w"))?;
            if w.shape() != (m, m) {
                return Err(Error::Shape(format!(
                    "layer {n} weight is {:?}, expected ({m}, {m})",
                    w.shape()
                )));
            }
            let att = match cfg.kind {
                CouplingKind::Gat => {
                    let a = ck.get(&format!("{prefix}layer{n}.att"))?;
                    if a.len() != 2 * m {
                        return Err(Error::Shape(format!("layer {n} attention has {} entries", a.len())));
                    }
                    Some(a)
                }
                CouplingKind::Gcn => None,
            };
            layers.push(LayerParams { w, att });
        }
        Ok(Self { layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new();
        self.write_checkpoint("", &mut ck);
        ck.save(path)
    }

    pub fn load(cfg: &CouplingConfig, path: &Path) -> Result<Self> {
        Self::read_checkpoint(cfg, "", &Checkpoint::load(path)?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub w: Var,
    pub att: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct CouplingVars {
    pub layers: Vec<LayerVars>,
}

/// A coupling bound to a fixed graph.
#[derive(Debug, Clone)]
pub struct Coupling {
    cfg: CouplingConfig,
    adj: Arc<NormalizedAdjacency>,
    layout: Arc<Neighborhoods>,
}

impl Coupling {
    pub fn new(cfg: CouplingConfig, g: &Graph) -> Result<Self> {
        cfg.validate()?;
        let adj = Arc::new(g.normalized_adjacency(cfg.adjacency));
        let layout = adj.shared_layout();
        Ok(Self { cfg, adj, layout })
    }

    pub fn config(&self) -> &CouplingConfig {
        &self.cfg
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.num_nodes()
    }

    pub fn adjacency(&self) -> &Arc<NormalizedAdjacency> {
        &self.adj
    }

    fn layer_vars(&self, vars: &CouplingVars, layer: usize) -> Result<LayerVars> {
        let idx = if self.cfg.share_weights { 0 } else { layer };
        if !self.cfg.share_weights && layer >= self.cfg.num_layers {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} requested from a {}-layer coupling",
                self.cfg.num_layers
            )));
        }
        vars.layers
            .get(idx)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no parameters for layer {layer}")))
    }

    /// `F(X)` for layer `layer` (0-based).
    pub fn apply(&self, tape: &Tape, vars: &CouplingVars, x: Var, layer: usize) -> Result<Var> {
        if x.rows() != self.num_nodes() {
            return Err(Error::Shape(format!(
                "coupling input has {} rows, graph has {} nodes",
                x.rows(),
                self.num_nodes()
            )));
        }
        let lv = self.layer_vars(vars, layer)?;
        let xw = tape.matmul(x, lv.w)?;
        match self.cfg.kind {
            CouplingKind::Gcn => tape.spmm(&self.adj, xw),
            CouplingKind::Gat => {
                let att = lv
                    .att
                    .ok_or_else(|| Error::InvalidArgument("attention coupling without attention vector".into()))?;
                let scores = tape.edge_scores(xw, att, &self.layout, self.cfg.leaky_slope)?;
                let alpha = tape.neighbor_softmax(scores, &self.layout)?;
                tape.attn_aggregate(alpha, xw, &self.layout)
            }
        }
    }

    /// Value-only evaluation with fixed parameters.
    pub fn eval(&self, params: &CouplingParams, x: &Matrix, layer: usize) -> Result<Matrix> {
        let tape = Tape::new();
        let vars = params.to_tape(&tape);
        let xv = tape.leaf(x.clone());
        let y = self.apply(&tape, &vars, xv, layer)?;
        let out = tape.value_cloned(y);
        Ok(out)
    }
}
