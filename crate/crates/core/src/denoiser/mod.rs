//! Graph-transformer denoiser predicting clean node and edge categories from a
//! noisy graph, with its cross-entropy loss, gradients and Adam optimizer.

mod adam;
mod checkpoint;
pub mod tape;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::{FeaturePack, GRAPH_EXTRA, NODE_EXTRA};
use crate::molgraph::{AtomVocab, MolGraph, NodeTag};
use crate::noise::{CleanPrediction, FrozenMask};

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointError, NamedModel,
    CHECKPOINT_VERSION,
};
use tape::{Tape, Tensor, Var};

pub const BOND_CLASSES: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum DenoiserError {
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: usize },
    #[error("non-finite gradient for tensor {name}")]
    NonFiniteGradient { name: String },
    #[error("no supervised positions")]
    NothingSupervised,
}

/// Layer count and channel widths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arch {
    pub n_layer: usize,
    pub node_width: usize,
    pub edge_width: usize,
    pub global_width: usize,
    pub heads: usize,
    /// Atom categories including the dummy slot.
    pub atom_classes: usize,
}

impl Arch {
    /// Four blocks, widths 64/32/32, four heads.
    pub fn desk(atom_classes: usize) -> Self {
        Arch { n_layer: 4, node_width: 64, edge_width: 32, global_width: 32, heads: 4, atom_classes }
    }

    pub fn node_input(&self) -> usize {
        self.atom_classes + 1 + NODE_EXTRA
    }

    pub fn validate(&self) -> Result<(), DenoiserError> {
        let bad = |m: &str| Err(DenoiserError::Arch(m.to_string()));
        if self.n_layer == 0 {
            return bad("n_layer must be at least 1");
        }
        if self.node_width == 0 || self.edge_width == 0 || self.global_width == 0 {
            return bad("widths must be positive");
        }
        if self.heads == 0 || self.node_width % self.heads != 0 {
            return bad("node_width must be a multiple of heads");
        }
        if self.atom_classes < 2 {
            return bad("need at least one real atom class");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Mlp {
    first: Linear,
    second: Linear,
}

#[derive(Clone, Copy, Debug)]
struct Film {
    w1: usize,
    w2: usize,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gain: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct Block {
    query: Linear,
    key: Linear,
    value: Linear,
    attn_film: Film,
    attn_out: Linear,
    node_film: Film,
    node_norm: [Norm; 2],
    node_ffn: Mlp,
    edge_out: Linear,
    edge_film: Film,
    edge_norm: [Norm; 2],
    edge_ffn: Mlp,
    global_lin: Linear,
    pna_nodes: usize,
    pna_edges: usize,
    global_norm: [Norm; 2],
    global_ffn: Mlp,
}

#[derive(Clone, Debug)]
struct Layout {
    enc_nodes: Mlp,
    enc_edges: Mlp,
    enc_global: Mlp,
    blocks: Vec<Block>,
    dec_nodes: Mlp,
    dec_edges: Mlp,
}

#[derive(Clone, Copy)]
enum Init {
    Glorot,
    Zeros,
    Ones,
}

struct Spec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

#[derive(Default)]
struct LayoutBuilder {
    specs: Vec<Spec>,
}

impl LayoutBuilder {
    fn tensor(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push(Spec { name, rows, cols, init });
        self.specs.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.tensor(format!("{name}.w"), fan_in, fan_out, Init::Glorot),
            b: self.tensor(format!("{name}.b"), 1, fan_out, Init::Zeros),
        }
    }

    fn mlp(&mut self, name: &str, fan_in: usize, hidden: usize, fan_out: usize) -> Mlp {
        Mlp { first: self.linear(&format!("{name}.0"), fan_in, hidden), second: self.linear(&format!("{name}.1"), hidden, fan_out) }
    }

    fn film(&mut self, name: &str, cond: usize, width: usize) -> Film {
        Film {
            w1: self.tensor(format!("{name}.w1"), cond, width, Init::Glorot),
            w2: self.tensor(format!("{name}.w2"), width, width, Init::Glorot),
        }
    }

    fn norm(&mut self, name: &str, width: usize) -> Norm {
        Norm {
            gain: self.tensor(format!("{name}.gain"), 1, width, Init::Ones),
            bias: self.tensor(format!("{name}.bias"), 1, width, Init::Zeros),
        }
    }
}

fn build_layout(arch: &Arch) -> (Layout, Vec<Spec>) {
    let (dx, de, dy) = (arch.node_width, arch.edge_width, arch.global_width);
    let mut b = LayoutBuilder::default();
    let enc_nodes = b.mlp("enc.nodes", arch.node_input(), dx, dx);
    let enc_edges = b.mlp("enc.edges", BOND_CLASSES, de, de);
    let enc_global = b.mlp("enc.global", GRAPH_EXTRA, dy, dy);
    let blocks = (0..arch.n_layer)
        .map(|l| {
            let p = format!("block{l}");
            Block {
                query: b.linear(&format!("{p}.query"), dx, dx),
                key: b.linear(&format!("{p}.key"), dx, dx),
                value: b.linear(&format!("{p}.value"), dx, dx),
                attn_film: b.film(&format!("{p}.attn_film"), de, dx),
                attn_out: b.linear(&format!("{p}.attn_out"), dx, dx),
                node_film: b.film(&format!("{p}.node_film"), dy, dx),
                node_norm: [b.norm(&format!("{p}.node_norm0"), dx), b.norm(&format!("{p}.node_norm1"), dx)],
                node_ffn: b.mlp(&format!("{p}.node_ffn"), dx, 2 * dx, dx),
                edge_out: b.linear(&format!("{p}.edge_out"), dx, de),
                edge_film: b.film(&format!("{p}.edge_film"), dy, de),
                edge_norm: [b.norm(&format!("{p}.edge_norm0"), de), b.norm(&format!("{p}.edge_norm1"), de)],
                edge_ffn: b.mlp(&format!("{p}.edge_ffn"), de, 2 * de, de),
                global_lin: b.linear(&format!("{p}.global_lin"), dy, dy),
                pna_nodes: b.tensor(format!("{p}.pna_nodes.w"), 4 * dx, dy, Init::Glorot),
                pna_edges: b.tensor(format!("{p}.pna_edges.w"), 4 * de, dy, Init::Glorot),
                global_norm: [b.norm(&format!("{p}.global_norm0"), dy), b.norm(&format!("{p}.global_norm1"), dy)],
                global_ffn: b.mlp(&format!("{p}.global_ffn"), dy, 2 * dy, dy),
            }
        })
        .collect();
    let dec_nodes = b.mlp("dec.nodes", dx, dx, arch.atom_classes);
    let dec_edges = b.mlp("dec.edges", de, de, BOND_CLASSES);
    (Layout { enc_nodes, enc_edges, enc_global, blocks, dec_nodes, dec_edges }, b.specs)
}

/// Rounds to the nearest value representable in 32-bit float storage.
pub(crate) fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// All learnable tensors of one denoiser, addressed by hierarchical name.
#[derive(Clone, Debug)]
pub struct DenoiserParams {
    arch: Arch,
    seed: u64,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    layout: Layout,
}

impl PartialEq for DenoiserParams {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.names == other.names && self.tensors == other.tensors
    }
}

impl DenoiserParams {
    /// Glorot-uniform weights, zero biases, unit norm gains.
    pub fn init(arch: Arch, seed: u64) -> Result<Self, DenoiserError> {
        arch.validate()?;
        let (layout, specs) = build_layout(&arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for s in specs {
            let data = match s.init {
                Init::Zeros => vec![0.0; s.rows * s.cols],
                Init::Ones => vec![1.0; s.rows * s.cols],
                Init::Glorot => {
                    let bound = (6.0 / (s.rows + s.cols) as f64).sqrt();
                    (0..s.rows * s.cols).map(|_| round_f32(rng.gen_range(-bound..bound))).collect()
                }
            };
            names.push(s.name);
            tensors.push(Tensor::from_vec(s.rows, s.cols, data));
        }
        Ok(DenoiserParams { arch, seed, names, tensors, layout })
    }

    /// Rebuilds from stored tensors, checking names and shapes against the architecture.
    pub fn from_tensors(arch: Arch, seed: u64, named: Vec<(String, Tensor)>) -> Result<Self, DenoiserError> {
        arch.validate()?;
        let (layout, specs) = build_layout(&arch);
        if specs.len() != named.len() {
            return Err(DenoiserError::Shape(format!("expected {} tensors, got {}", specs.len(), named.len())));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (s, (name, t)) in specs.iter().zip(named) {
            if s.name != name || (s.rows, s.cols) != (t.rows, t.cols) {
                return Err(DenoiserError::Shape(format!("tensor {name} does not match {}", s.name)));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(DenoiserParams { arch, seed, names, tensors, layout })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors.iter().map(|t| (t.rows, t.cols)).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Network input: one row per node, one per ordered node pair, and one global row.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserInput {
    pub n: usize,
    pub nodes: Tensor,
    pub edges: Tensor,
    pub global: Tensor,
}

/// Node rows: atom one-hot, product-condition bit, structural extras.
/// Edge rows: bond one-hot. Global row: graph extras (including t/T).
pub fn encode_input(g: &MolGraph, vocab: &AtomVocab, features: &FeaturePack) -> Result<DenoiserInput, DenoiserError> {
    let n = g.n();
    if features.n != n {
        return Err(DenoiserError::Shape(format!("features for {} nodes, graph has {n}", features.n)));
    }
    let width = vocab.len() + 1 + NODE_EXTRA;
    let mut nodes = Tensor::zeros(n, width);
    for i in 0..n {
        let row = &mut nodes.data[i * width..(i + 1) * width];
        let c = vocab.index_of(g.atom(i)).ok_or_else(|| DenoiserError::Shape(format!("atom {i} outside vocabulary")))?;
        row[c] = 1.0;
        row[vocab.len()] = if g.tag(i) == NodeTag::Product { 1.0 } else { 0.0 };
        row[vocab.len() + 1..].copy_from_slice(features.node_row(i));
    }
    let edges = Tensor::from_vec(n * n, BOND_CLASSES, g.edge_one_hot());
    let global = Tensor::from_vec(1, GRAPH_EXTRA, features.graph_extra.clone());
    Ok(DenoiserInput { n, nodes, edges, global })
}

/// Unnormalized scores over clean categories.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub n: usize,
    /// `n × atom_classes`.
    pub node_logits: Tensor,
    /// `n² × 4`, exactly symmetric in the node pair.
    pub edge_logits: Tensor,
}

fn softmax_rows(t: &Tensor) -> Vec<f64> {
    let mut out = Vec::with_capacity(t.len());
    for r in 0..t.rows {
        let row = t.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
        out.extend(row.iter().map(|x| (x - m).exp() / z));
    }
    out
}

impl Prediction {
    pub fn probabilities(&self) -> CleanPrediction {
        CleanPrediction {
            n: self.n,
            nodes: softmax_rows(&self.node_logits),
            node_dim: self.node_logits.cols,
            edges: softmax_rows(&self.edge_logits),
            edge_dim: self.edge_logits.cols,
        }
    }
}

struct Graph {
    tape: Tape,
    node_logits: Var,
    edge_logits: Var,
}

impl DenoiserParams {
    fn p(&self, tape: &mut Tape, idx: usize) -> Var {
        tape.param(idx, &self.tensors[idx])
    }

    fn linear(&self, tape: &mut Tape, x: Var, l: Linear) -> Var {
        let w = self.p(tape, l.w);
        let b = self.p(tape, l.b);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }

    fn mlp(&self, tape: &mut Tape, x: Var, m: Mlp, relu_out: bool) -> Var {
        let h = self.linear(tape, x, m.first);
        let h = tape.relu(h);
        let y = self.linear(tape, h, m.second);
        if relu_out {
            tape.relu(y)
        } else {
            y
        }
    }

    /// `cond·W1 + (x·W2) ⊙ x + x`; a single-row `cond` is broadcast over the rows of `x`.
    fn film(&self, tape: &mut Tape, cond: Var, x: Var, f: Film) -> Var {
        let w1 = self.p(tape, f.w1);
        let w2 = self.p(tape, f.w2);
        let shift = tape.matmul(cond, w1);
        let scale = tape.matmul(x, w2);
        let modulated = tape.mul(scale, x);
        let y = tape.add(modulated, x);
        if tape.value(shift).rows == 1 && tape.value(y).rows != 1 {
            tape.add_row(y, shift)
        } else {
            tape.add(y, shift)
        }
    }

    fn norm(&self, tape: &mut Tape, x: Var, n: Norm) -> Var {
        let g = self.p(tape, n.gain);
        let b = self.p(tape, n.bias);
        tape.layer_norm(x, g, b)
    }

    fn residual(&self, tape: &mut Tape, x: Var, update: Var, norm: Norm) -> Var {
        let s = tape.add(x, update);
        self.norm(tape, s, norm)
    }

    fn build(&self, input: &DenoiserInput) -> Result<Graph, DenoiserError> {
        let arch = &self.arch;
        let n = input.n;
        if input.nodes.cols != arch.node_input()
            || input.nodes.rows != n
            || input.edges.rows != n * n
            || input.edges.cols != BOND_CLASSES
            || input.global.cols != GRAPH_EXTRA
        {
            return Err(DenoiserError::Shape("input does not match architecture".into()));
        }
        let lay = &self.layout;
        let mut tape = Tape::new();
        let x0 = tape.input(input.nodes.clone());
        let e0 = tape.input(input.edges.clone());
        let y0 = tape.input(input.global.clone());
        let mut x = self.mlp(&mut tape, x0, lay.enc_nodes, true);
        let mut e = self.mlp(&mut tape, e0, lay.enc_edges, true);
        let mut y = self.mlp(&mut tape, y0, lay.enc_global, true);
        let scale = 1.0 / ((arch.node_width / arch.heads) as f64).sqrt();

        for (layer, blk) in lay.blocks.iter().enumerate() {
            let q = self.linear(&mut tape, x, blk.query);
            let k = self.linear(&mut tape, x, blk.key);
            let v = self.linear(&mut tape, x, blk.value);
            let pair = tape.pair_product(q, k, n, scale);
            let pair = self.film(&mut tape, e, pair, blk.attn_film);
            let scores = tape.head_sum(pair, arch.heads);
            let attn = tape.attn_softmax(scores, n);
            let att_nodes = tape.attn_apply(attn, v, n);
            let att_nodes = self.linear(&mut tape, att_nodes, blk.attn_out);

            let node_upd = self.film(&mut tape, y, att_nodes, blk.node_film);
            let x_new = self.residual(&mut tape, x, node_upd, blk.node_norm[0]);
            let ffn = self.mlp(&mut tape, x_new, blk.node_ffn, false);
            let x_new = self.residual(&mut tape, x_new, ffn, blk.node_norm[1]);

            let att_edges = self.linear(&mut tape, pair, blk.edge_out);
            let edge_upd = self.film(&mut tape, y, att_edges, blk.edge_film);
            let e_new = self.residual(&mut tape, e, edge_upd, blk.edge_norm[0]);
            let ffn = self.mlp(&mut tape, e_new, blk.edge_ffn, false);
            let e_new = self.residual(&mut tape, e_new, ffn, blk.edge_norm[1]);

            let from_y = self.linear(&mut tape, y, blk.global_lin);
            let pool_x = tape.pna_pool(x);
            let wx = self.p(&mut tape, blk.pna_nodes);
            let pool_x = tape.matmul(pool_x, wx);
            let pool_e = tape.pna_pool(e);
            let we = self.p(&mut tape, blk.pna_edges);
            let pool_e = tape.matmul(pool_e, we);
            let glob_upd = tape.add(from_y, pool_x);
            let glob_upd = tape.add(glob_upd, pool_e);
            let y_new = self.residual(&mut tape, y, glob_upd, blk.global_norm[0]);
            let ffn = self.mlp(&mut tape, y_new, blk.global_ffn, false);
            let y_new = self.residual(&mut tape, y_new, ffn, blk.global_norm[1]);

            if ![x_new, e_new, y_new].iter().all(|&v| tape.value(v).is_finite()) {
                return Err(DenoiserError::NonFinite { layer });
            }
            (x, e, y) = (x_new, e_new, y_new);
        }
        let node_logits = self.mlp(&mut tape, x, lay.dec_nodes, false);
        let edge_raw = self.mlp(&mut tape, e, lay.dec_edges, false);
        let edge_logits = tape.symmetrize(edge_raw, n);
        if !tape.value(node_logits).is_finite() || !tape.value(edge_logits).is_finite() {
            return Err(DenoiserError::NonFinite { layer: arch.n_layer });
        }
        Ok(Graph { tape, node_logits, edge_logits })
    }

    /// Which ReLU units are active for `input`. Finite differences are only
    /// meaningful when a perturbation leaves this pattern unchanged.
    pub fn activation_pattern(&self, input: &DenoiserInput) -> Result<Vec<bool>, DenoiserError> {
        Ok(self.build(input)?.tape.relu_pattern())
    }

    pub fn forward(&self, input: &DenoiserInput) -> Result<Prediction, DenoiserError> {
        let g = self.build(input)?;
        Ok(Prediction {
            n: input.n,
            node_logits: g.tape.value(g.node_logits).clone(),
            edge_logits: g.tape.value(g.edge_logits).clone(),
        })
    }
}

/// Supervised positions and their clean targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub n: usize,
    pub nodes: Vec<usize>,
    pub node_supervised: Vec<bool>,
    /// `n²` bond classes.
    pub edges: Vec<usize>,
    /// Supervised unordered pairs `(i, j)`, `i < j`.
    pub edge_pairs: Vec<(usize, usize)>,
}

impl Targets {
    /// Free (non-frozen) positions of `mask` supervised toward `target`.
    pub fn from_graph(target: &MolGraph, vocab: &AtomVocab, mask: &FrozenMask) -> Result<Self, DenoiserError> {
        let n = target.n();
        let nodes = (0..n)
            .map(|i| vocab.index_of(target.atom(i)).ok_or_else(|| DenoiserError::Shape(format!("atom {i} outside vocabulary"))))
            .collect::<Result<Vec<_>, _>>()?;
        let mut edges = vec![0; n * n];
        for i in 0..n {
            for j in 0..n {
                edges[i * n + j] = target.bond(i, j).index();
            }
        }
        Ok(Targets {
            n,
            nodes,
            node_supervised: (0..n).map(|i| !mask.node(i)).collect(),
            edges,
            edge_pairs: mask.free_edges().collect(),
        })
    }

    pub fn atom_positions(&self) -> usize {
        self.node_supervised.iter().filter(|&&s| s).count()
    }

    pub fn bond_positions(&self) -> usize {
        self.edge_pairs.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub atom_ce: f64,
    pub bond_ce: f64,
    pub total: f64,
    pub atom_positions: usize,
    pub bond_positions: usize,
}

fn row_ce(logits: &Tensor, row: usize, target: usize) -> f64 {
    let r = logits.row(row);
    let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = r.iter().map(|x| (x - m).exp()).sum();
    z.ln() + m - r[target]
}

/// Mean cross-entropies over supervised positions; `total = mu·atom_ce + bond_ce`.
pub fn loss(pred: &Prediction, targets: &Targets, mu: f64) -> Result<LossReport, DenoiserError> {
    let atoms: Vec<usize> = (0..targets.n).filter(|&i| targets.node_supervised[i]).collect();
    if atoms.is_empty() && targets.edge_pairs.is_empty() {
        return Err(DenoiserError::NothingSupervised);
    }
    let mean = |xs: Vec<f64>| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    let atom_ce = mean(atoms.iter().map(|&i| row_ce(&pred.node_logits, i, targets.nodes[i])).collect());
    let n = targets.n;
    let bond_ce = mean(
        targets.edge_pairs.iter().map(|&(i, j)| row_ce(&pred.edge_logits, i * n + j, targets.edges[i * n + j])).collect(),
    );
    Ok(LossReport {
        atom_ce,
        bond_ce,
        total: mu * atom_ce + bond_ce,
        atom_positions: atoms.len(),
        bond_positions: targets.edge_pairs.len(),
    })
}

impl DenoiserParams {
    /// Loss and exact gradients of `LossReport::total` for every tensor.
    pub fn loss_and_gradients(
        &self,
        input: &DenoiserInput,
        targets: &Targets,
        mu: f64,
    ) -> Result<(LossReport, Vec<Tensor>), DenoiserError> {
        let Graph { mut tape, node_logits, edge_logits } = self.build(input)?;
        let pred = Prediction {
            n: input.n,
            node_logits: tape.value(node_logits).clone(),
            edge_logits: tape.value(edge_logits).clone(),
        };
        let report = loss(&pred, targets, mu)?;
        let n = targets.n;
        let atom_weight = if report.atom_positions > 0 { mu / report.atom_positions as f64 } else { 0.0 };
        let node_w = targets.node_supervised.iter().map(|&s| if s { atom_weight } else { 0.0 }).collect();
        let node_ce = tape.cross_entropy(node_logits, targets.nodes.clone(), node_w);
        let mut edge_w = vec![0.0; n * n];
        if report.bond_positions > 0 {
            let w = 1.0 / report.bond_positions as f64;
            for &(i, j) in &targets.edge_pairs {
                edge_w[i * n + j] = w;
            }
        }
        let edge_ce = tape.cross_entropy(edge_logits, targets.edges.clone(), edge_w);
        let total = tape.add(node_ce, edge_ce);
        let grads = tape.backward(total, self.tensors.len(), &self.shapes());
        for (g, name) in grads.iter().zip(&self.names) {
            if !g.is_finite() {
                return Err(DenoiserError::NonFiniteGradient { name: name.clone() });
            }
        }
        Ok((report, grads))
    }
}

/// One supervised training example.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub input: DenoiserInput,
    pub targets: Targets,
}

/// Averages losses and gradients over a batch.
pub fn batch_gradients(
    params: &DenoiserParams,
    batch: &[TrainItem],
    mu: f64,
) -> Result<(LossReport, Vec<Tensor>), DenoiserError> {
    let mut sum: Vec<Tensor> = params.shapes().iter().map(|&(r, c)| Tensor::zeros(r, c)).collect();
    let mut report = LossReport { atom_ce: 0.0, bond_ce: 0.0, total: 0.0, atom_positions: 0, bond_positions: 0 };
    for item in batch {
        let (r, g) = params.loss_and_gradients(&item.input, &item.targets, mu)?;
        report.atom_ce += r.atom_ce;
        report.bond_ce += r.bond_ce;
        report.atom_positions += r.atom_positions;
        report.bond_positions += r.bond_positions;
        for (s, g) in sum.iter_mut().zip(&g) {
            for (a, b) in s.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
    }
    let k = batch.len().max(1) as f64;
    report.atom_ce /= k;
    report.bond_ce /= k;
    report.total = mu * report.atom_ce + report.bond_ce;
    for s in &mut sum {
        s.data.iter_mut().for_each(|x| *x /= k);
    }
    Ok((report, sum))
}
