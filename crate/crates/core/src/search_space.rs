//! Candidate operations, the cell DAG, softmax-relaxed mixed operations and
//! discretization of the architecture encoding.
//!
//! A denoiser is `stem -> cell_0 .. cell_{K-1} -> head`. Cell `k` reads the
//! outputs of the two cells before it (the stem output stands in for both
//! predecessors of the first cell). Inside a cell, every intermediate node
//! sums one operation per incoming edge, and the cell output is a 1x1
//! projection of all intermediate nodes concatenated along channels.
//!
//! The supernet evaluates all eight candidates on every edge, weighted by a
//! row-wise softmax of the shared logits `[E, 8]`; a discrete architecture
//! keeps one candidate per edge.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, Graph, ParamSet, Var};
use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// The eight candidate operations, in tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    #[serde(rename = "std_conv_3")]
    StdConv3,
    #[serde(rename = "std_conv_5")]
    StdConv5,
    #[serde(rename = "std_conv_7")]
    StdConv7,
    #[serde(rename = "sep_conv_3")]
    SepConv3,
    #[serde(rename = "sep_conv_5")]
    SepConv5,
    #[serde(rename = "sep_conv_7")]
    SepConv7,
    #[serde(rename = "dil2_conv_3")]
    Dil2Conv3,
    #[serde(rename = "dil3_conv_3")]
    Dil3Conv3,
}

pub const NUM_OPS: usize = 8;

impl OpKind {
    pub const ALL: [OpKind; NUM_OPS] = [
        OpKind::StdConv3,
        OpKind::StdConv5,
        OpKind::StdConv7,
        OpKind::SepConv3,
        OpKind::SepConv5,
        OpKind::SepConv7,
        OpKind::Dil2Conv3,
        OpKind::Dil3Conv3,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::StdConv3 => "std_conv_3",
            OpKind::StdConv5 => "std_conv_5",
            OpKind::StdConv7 => "std_conv_7",
            OpKind::SepConv3 => "sep_conv_3",
            OpKind::SepConv5 => "sep_conv_5",
            OpKind::SepConv7 => "sep_conv_7",
            OpKind::Dil2Conv3 => "dil2_conv_3",
            OpKind::Dil3Conv3 => "dil3_conv_3",
        }
    }

    pub fn kernel_size(self) -> usize {
        match self {
            OpKind::StdConv5 | OpKind::SepConv5 => 5,
            OpKind::StdConv7 | OpKind::SepConv7 => 7,
            _ => 3,
        }
    }

    pub fn dilation(self) -> usize {
        match self {
            OpKind::Dil2Conv3 => 2,
            OpKind::Dil3Conv3 => 3,
            _ => 1,
        }
    }

    pub fn is_separable(self) -> bool {
        matches!(self, OpKind::SepConv3 | OpKind::SepConv5 | OpKind::SepConv7)
    }

    /// Parameter suffixes and shapes for `channels -> channels`.
    pub fn param_shapes(self, channels: usize) -> Vec<(&'static str, Vec<usize>)> {
        let k = self.kernel_size();
        if self.is_separable() {
            vec![("dw", vec![channels, 1, k, k]), ("pw", vec![channels, channels, 1, 1])]
        } else {
            vec![("w", vec![channels, channels, k, k])]
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown operation `{s}`")))
    }
}

/// Directed acyclic edge list of one cell.
///
/// Nodes `0` and `1` are the cell inputs; nodes `2..2+n` are intermediate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellTopology {
    pub num_inputs: usize,
    pub num_intermediate: usize,
    pub edges: Vec<(usize, usize)>,
}

impl CellTopology {
    /// Fully connected topology: every earlier node feeds every
    /// intermediate node.
    pub fn dense(num_intermediate: usize) -> Result<Self> {
        if num_intermediate == 0 {
            return Err(Error::Construction(
                "a cell needs at least one intermediate node".into(),
            ));
        }
        let edges = (0..num_intermediate)
            .flat_map(|m| (0..2 + m).map(move |i| (i, 2 + m)))
            .collect();
        Self::from_edges(num_intermediate, edges)
    }

    pub fn from_edges(num_intermediate: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let nodes = 2 + num_intermediate;
        for &(i, j) in &edges {
            if j < 2 {
                return Err(Error::Construction(format!("edge ({i},{j}) enters an input node")));
            }
            if i >= j || j >= nodes {
                return Err(Error::Construction(format!(
                    "edge ({i},{j}) is not a forward edge among {nodes} nodes"
                )));
            }
        }
        for j in 2..nodes {
            if !edges.iter().any(|&(_, t)| t == j) {
                return Err(Error::Construction(format!("node {j} has no incoming edge")));
            }
        }
        Ok(Self {
            num_inputs: 2,
            num_intermediate,
            edges,
        })
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
}

/// Shape hyper-parameters of the denoiser.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub channels: usize,
    pub cells: usize,
    pub nodes: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            channels: 16,
            cells: 3,
            nodes: 2,
        }
    }
}

/// Architecture logits `[E, 8]`, shared by every cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchEncoding {
    pub logits: Tensor,
}

impl ArchEncoding {
    /// All-zero logits (uniform mixture on every edge).
    pub fn uniform(num_edges: usize) -> Self {
        Self {
            logits: Tensor::zeros(&[num_edges, NUM_OPS]),
        }
    }

    pub fn new(logits: Tensor) -> Result<Self> {
        let s = logits.shape();
        if s.len() != 2 || s[1] != NUM_OPS {
            return dim_err(format!("architecture logits must be [E, {NUM_OPS}], got {s:?}"));
        }
        Ok(Self { logits })
    }

    pub fn num_edges(&self) -> usize {
        self.logits.shape()[0]
    }

    pub fn row(&self, e: usize) -> &[f64] {
        &self.logits.data()[e * NUM_OPS..(e + 1) * NUM_OPS]
    }

    /// Row-wise softmax probabilities.
    pub fn probabilities(&self) -> Vec<[f64; NUM_OPS]> {
        (0..self.num_edges())
            .map(|e| {
                let r = self.row(e);
                let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut p = [0.0; NUM_OPS];
                let mut z = 0.0;
                for (o, v) in r.iter().enumerate() {
                    p[o] = (v - m).exp();
                    z += p[o];
                }
                p.iter_mut().for_each(|x| *x /= z);
                p
            })
            .collect()
    }
}

/// One chosen operation per edge, after discretization.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteArch {
    pub chosen: Vec<OpKind>,
    pub topology: CellTopology,
    pub channels: usize,
    pub cells: usize,
}

impl DiscreteArch {
    pub fn shape(&self) -> ModelShape {
        ModelShape {
            channels: self.channels,
            cells: self.cells,
            nodes: self.topology.num_intermediate,
        }
    }
}

/// Per-edge argmax; ties resolve to the lowest operation index.
pub fn argmax_ops(arch: &ArchEncoding) -> Result<Vec<OpKind>> {
    if !arch.logits.is_finite() {
        return Err(Error::InvalidEncoding("logits contain NaN or infinite values".into()));
    }
    Ok((0..arch.num_edges())
        .map(|e| {
            let row = arch.row(e);
            let mut best = 0;
            for (o, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = o;
                }
            }
            OpKind::ALL[best]
        })
        .collect())
}

/// Collapse the relaxed encoding into a discrete architecture.
pub fn discretize(arch: &ArchEncoding, shape: &ModelShape) -> Result<DiscreteArch> {
    let topology = CellTopology::dense(shape.nodes)?;
    if arch.num_edges() != topology.num_edges() {
        return dim_err(format!(
            "encoding has {} edges but topology has {}",
            arch.num_edges(),
            topology.num_edges()
        ));
    }
    Ok(DiscreteArch {
        chosen: argmax_ops(arch)?,
        topology,
        channels: shape.channels,
        cells: shape.cells,
    })
}

/// Which operations a denoiser instantiates on its edges.
#[derive(Clone, Debug, PartialEq)]
pub enum DenoiserKind {
    /// All candidates on every edge, mixed by softmax of the logits.
    Supernet,
    /// One operation per edge (shared by all cells).
    Discrete(Vec<OpKind>),
}

/// Stem, stacked cells and head; maps `[N, 2, H, W]` to `[N, 2, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    pub shape: ModelShape,
    pub topology: CellTopology,
    pub kind: DenoiserKind,
}

/// Bound weights of one candidate operation.
#[derive(Clone, Copy, Debug)]
pub struct OpWeights {
    pub kind: OpKind,
    pub kernel: Var,
    pub pointwise: Option<Var>,
}

pub(crate) fn edge_prefix(cell: usize, edge: usize, op: OpKind) -> String {
    format!("cell{cell:02}.e{edge:02}.{}", op.name())
}

impl OpWeights {
    pub fn bind(kind: OpKind, params: &BoundParams, prefix: &str) -> Result<Self> {
        if kind.is_separable() {
            Ok(Self {
                kind,
                kernel: params.get(&format!("{prefix}.dw"))?,
                pointwise: Some(params.get(&format!("{prefix}.pw"))?),
            })
        } else {
            Ok(Self {
                kind,
                kernel: params.get(&format!("{prefix}.w"))?,
                pointwise: None,
            })
        }
    }
}

/// One candidate: its convolution followed by ReLU.
pub fn op_forward(g: &mut Graph, x: Var, op: &OpWeights) -> Result<Var> {
    let y = if op.kind.is_separable() {
        let channels = g.value(x).shape().get(1).copied().unwrap_or(0);
        let dw = g.conv2d(x, op.kernel, 1, channels)?;
        let pw = op
            .pointwise
            .ok_or_else(|| Error::Construction(format!("{} needs pointwise weights", op.kind)))?;
        g.conv2d(dw, pw, 1, 1)?
    } else {
        g.conv2d(x, op.kernel, op.kind.dilation(), 1)?
    };
    Ok(g.relu(y))
}

/// `sum_o weights[o] * op_o(x)` where `weights` are already normalized
/// one-element vars.
fn weighted_ops(g: &mut Graph, x: Var, weights: &[Var], ops: &[OpWeights]) -> Result<Var> {
    let mut terms = Vec::with_capacity(ops.len());
    for (w, op) in weights.iter().zip(ops) {
        let y = op_forward(g, x, op)?;
        terms.push(g.mul_scalar(y, *w)?);
    }
    g.add_all(&terms)
}

/// Softmax-weighted sum of the given candidate ops on one edge.
///
/// `edge_logits` must have one entry per op in `ops`; passing a subset of
/// the candidates restricts the mixture to that subset.
pub fn mixed_op_forward(g: &mut Graph, x: Var, edge_logits: Var, ops: &[OpWeights]) -> Result<Var> {
    let n = g.value(edge_logits).len();
    if n != ops.len() {
        return dim_err(format!("{n} logits for {} operations", ops.len()));
    }
    let p = g.softmax(edge_logits)?;
    let weights = (0..n).map(|o| g.select(p, o)).collect::<Result<Vec<_>>>()?;
    weighted_ops(g, x, &weights, ops)
}

/// Per-edge operation weights for one forward pass.
enum EdgeMix {
    /// Softmaxed logits `[E, 8]`.
    Soft(Var),
    Hard(Vec<OpKind>),
}

impl Denoiser {
    pub fn supernet(shape: ModelShape) -> Result<Self> {
        Ok(Self {
            topology: CellTopology::dense(shape.nodes)?,
            shape,
            kind: DenoiserKind::Supernet,
        })
    }

    pub fn discrete(arch: &DiscreteArch) -> Result<Self> {
        if arch.chosen.len() != arch.topology.num_edges() {
            return Err(Error::Construction(format!(
                "{} chosen ops for {} edges",
                arch.chosen.len(),
                arch.topology.num_edges()
            )));
        }
        Ok(Self {
            shape: arch.shape(),
            topology: arch.topology.clone(),
            kind: DenoiserKind::Discrete(arch.chosen.clone()),
        })
    }

    pub fn is_supernet(&self) -> bool {
        matches!(self.kind, DenoiserKind::Supernet)
    }

    pub fn num_edges(&self) -> usize {
        self.topology.num_edges()
    }

    fn ops_on_edge(&self, edge: usize) -> Vec<OpKind> {
        match &self.kind {
            DenoiserKind::Supernet => OpKind::ALL.to_vec(),
            DenoiserKind::Discrete(ch) => vec![ch[edge]],
        }
    }

    /// Parameter names and shapes, in no particular order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.shape.channels;
        let mut out = vec![
            ("stem.w".to_string(), vec![c, 2, 3, 3]),
            ("head.w".to_string(), vec![2, c, 3, 3]),
        ];
        for cell in 0..self.shape.cells {
            for e in 0..self.num_edges() {
                for op in self.ops_on_edge(e) {
                    let prefix = edge_prefix(cell, e, op);
                    for (suffix, shape) in op.param_shapes(c) {
                        out.push((format!("{prefix}.{suffix}"), shape));
                    }
                }
            }
            out.push((
                format!("cell{cell:02}.proj.w"),
                vec![c, self.topology.num_intermediate * c, 1, 1],
            ));
        }
        out
    }

    /// He-normal kernels; the head is scaled down so the residual
    /// denoiser starts close to the identity.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamSet> {
        let mut shapes = self.param_shapes();
        shapes.sort_by(|a, b| a.0.cmp(&b.0));
        let mut ps = ParamSet::new();
        for (name, shape) in shapes {
            let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
            let std = if name == "head.w" {
                0.1 * (1.0 / fan_in).sqrt()
            } else if name.ends_with(".proj.w") || name == "stem.w" {
                (1.0 / fan_in).sqrt()
            } else {
                (2.0 / fan_in).sqrt()
            };
            ps.insert(name, Tensor::randn(&shape, std, rng))?;
        }
        Ok(ps)
    }

    fn check_channels(&self, g: &Graph, v: Var, what: &str) -> Result<()> {
        let s = g.value(v).shape();
        if s.len() != 4 || s[1] != self.shape.channels {
            return dim_err(format!("{what} must be [N, {}, H, W], got {s:?}", self.shape.channels));
        }
        Ok(())
    }

    fn edge_forward(
        &self,
        g: &mut Graph,
        mix: &EdgeMix,
        cell: usize,
        edge: usize,
        x: Var,
        params: &BoundParams,
    ) -> Result<Var> {
        match mix {
            EdgeMix::Soft(p) => {
                let ops = OpKind::ALL
                    .iter()
                    .map(|&k| OpWeights::bind(k, params, &edge_prefix(cell, edge, k)))
                    .collect::<Result<Vec<_>>>()?;
                let weights = (0..NUM_OPS)
                    .map(|o| g.select(*p, edge * NUM_OPS + o))
                    .collect::<Result<Vec<_>>>()?;
                weighted_ops(g, x, &weights, &ops)
            }
            EdgeMix::Hard(chosen) => {
                let k = chosen[edge];
                let op = OpWeights::bind(k, params, &edge_prefix(cell, edge, k))?;
                op_forward(g, x, &op)
            }
        }
    }

    fn mix(&self, g: &mut Graph, alpha: Option<Var>) -> Result<EdgeMix> {
        match (&self.kind, alpha) {
            (DenoiserKind::Supernet, Some(a)) => {
                let s = g.value(a).shape();
                if s != [self.num_edges(), NUM_OPS] {
                    return dim_err(format!(
                        "architecture logits {s:?} do not match {} edges",
                        self.num_edges()
                    ));
                }
                Ok(EdgeMix::Soft(g.softmax(a)?))
            }
            (DenoiserKind::Supernet, None) => {
                Err(Error::Contract("supernet forward requires architecture logits".into()))
            }
            (DenoiserKind::Discrete(ch), _) => Ok(EdgeMix::Hard(ch.clone())),
        }
    }

    fn cell_with_mix(
        &self,
        g: &mut Graph,
        cell: usize,
        in_a: Var,
        in_b: Var,
        params: &BoundParams,
        mix: &EdgeMix,
    ) -> Result<Var> {
        self.check_channels(g, in_a, "cell input a")?;
        self.check_channels(g, in_b, "cell input b")?;
        let mut nodes = vec![in_a, in_b];
        for j in 2..2 + self.topology.num_intermediate {
            let mut incoming = Vec::new();
            for (e, &(src, dst)) in self.topology.edges.iter().enumerate() {
                if dst == j {
                    incoming.push(self.edge_forward(g, mix, cell, e, nodes[src], params)?);
                }
            }
            nodes.push(g.add_all(&incoming)?);
        }
        let cat = g.concat_channels(&nodes[2..])?;
        let proj = params.get(&format!("cell{cell:02}.proj.w"))?;
        g.conv2d(cat, proj, 1, 1)
    }

    /// Forward pass of cell `cell` on its two inputs.
    pub fn cell_forward(
        &self,
        g: &mut Graph,
        cell: usize,
        in_a: Var,
        in_b: Var,
        params: &BoundParams,
        alpha: Option<Var>,
    ) -> Result<Var> {
        let mix = self.mix(g, alpha)?;
        self.cell_with_mix(g, cell, in_a, in_b, params, &mix)
    }

    /// Non-residual network output `head(cells(stem(x)))`.
    pub fn forward(&self, g: &mut Graph, x: Var, params: &BoundParams, alpha: Option<Var>) -> Result<Var> {
        let s = g.value(x).shape();
        if s.len() != 4 || s[1] != 2 {
            return dim_err(format!("denoiser input must be [N, 2, H, W], got {s:?}"));
        }
        let mix = self.mix(g, alpha)?;
        let stem = g.conv2d(x, params.get("stem.w")?, 1, 1)?;
        let (mut prev2, mut prev1) = (stem, stem);
        for cell in 0..self.shape.cells {
            let out = self.cell_with_mix(g, cell, prev2, prev1, params, &mix)?;
            prev2 = prev1;
            prev1 = out;
        }
        g.conv2d(prev1, params.get("head.w")?, 1, 1)
    }
}
