//! Categorical diffusion: cosine schedule, transition kernels, forward
//! noising, the Bayes posterior and the prediction-marginalized reverse step.

use rand::Rng;
use thiserror::Error;

use crate::molgraph::{AtomVocab, BondOrder, MolGraph};

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("step {t} outside 0..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("schedule needs at least one step and a positive offset")]
    BadSchedule,
    #[error("kernel needs at least two categories, got {0}")]
    TooFewCategories(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("impossible pair x_t={xt}, x0={x0} at step {t}")]
    ImpossiblePair { xt: usize, x0: usize, t: usize },
    #[error("prediction row {row} is not a distribution")]
    InvalidPrediction { row: usize },
    #[error("category not in vocabulary at node {0}")]
    UnknownCategory(usize),
}

/// Limit distribution of the forward chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PriorKind {
    /// All mass on category 0 (the dummy slot).
    #[default]
    Absorbing,
    Uniform,
}

impl PriorKind {
    pub fn name(self) -> &'static str {
        match self {
            PriorKind::Absorbing => "ABSORBING",
            PriorKind::Uniform => "UNIFORM",
        }
    }

    pub fn from_name(s: &str) -> Option<PriorKind> {
        match s.to_ascii_uppercase().as_str() {
            "ABSORBING" => Some(PriorKind::Absorbing),
            "UNIFORM" => Some(PriorKind::Uniform),
            _ => None,
        }
    }
}

pub fn cosine_alpha_bar(t: usize, steps: usize, offset: f64) -> Result<f64, NoiseError> {
    if steps == 0 || offset <= 0.0 {
        return Err(NoiseError::BadSchedule);
    }
    if t > steps {
        return Err(NoiseError::StepOutOfRange { t, steps });
    }
    let x = 0.5 * std::f64::consts::PI * (t as f64 / steps as f64 + offset) / (1.0 + offset);
    Ok(x.cos().powi(2))
}

pub const DEFAULT_OFFSET: f64 = 0.008;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    offset: f64,
    alpha_bar: Vec<f64>,
    alpha: Vec<f64>,
}

impl NoiseSchedule {
    pub fn cosine(steps: usize, offset: f64) -> Result<Self, NoiseError> {
        let alpha_bar = (0..=steps)
            .map(|t| cosine_alpha_bar(t, steps, offset))
            .collect::<Result<Vec<_>, _>>()?;
        let mut alpha = vec![1.0; steps + 1];
        for t in 1..=steps {
            let prev = if t == 1 { 1.0 } else { alpha_bar[t - 1] };
            alpha[t] = (alpha_bar[t] / prev).clamp(0.0, 1.0);
        }
        Ok(NoiseSchedule { steps, offset, alpha_bar, alpha })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Per-step retention; `alpha(0)` is 1 by convention.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    /// Retention of the clean state after `t` steps. Step 0 is the clean graph
    /// itself, so this is 1 at `t = 0` and the cosine value afterwards.
    pub fn retained(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t]
        }
    }
}

/// `Q_t = α_t I + (1 − α_t) 1 vᵀ` and its closed-form cumulative product.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionKernel {
    dim: usize,
    limit: Vec<f64>,
    prior: PriorKind,
    schedule: NoiseSchedule,
}

impl TransitionKernel {
    pub fn new(schedule: NoiseSchedule, dim: usize, prior: PriorKind) -> Result<Self, NoiseError> {
        if dim < 2 {
            return Err(NoiseError::TooFewCategories(dim));
        }
        let limit = match prior {
            PriorKind::Absorbing => {
                let mut v = vec![0.0; dim];
                v[0] = 1.0;
                v
            }
            PriorKind::Uniform => vec![1.0 / dim as f64; dim],
        };
        Ok(TransitionKernel { dim, limit, prior, schedule })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn limit(&self) -> &[f64] {
        &self.limit
    }

    pub fn prior(&self) -> PriorKind {
        self.prior
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps
    }

    fn mix(&self, keep: f64, from: usize, to: usize) -> f64 {
        let stay = if from == to { keep } else { 0.0 };
        stay + (1.0 - keep) * self.limit[to]
    }

    /// `Q_t[from, to]`.
    pub fn step_prob(&self, t: usize, from: usize, to: usize) -> f64 {
        self.mix(self.schedule.alpha(t), from, to)
    }

    /// `Q̄_t[from, to]`.
    pub fn cumulative_prob(&self, t: usize, from: usize, to: usize) -> f64 {
        self.mix(self.schedule.retained(t), from, to)
    }

    pub fn step_matrix(&self, t: usize) -> Vec<f64> {
        self.matrix(|i, j| self.step_prob(t, i, j))
    }

    pub fn cumulative_matrix(&self, t: usize) -> Vec<f64> {
        self.matrix(|i, j| self.cumulative_prob(t, i, j))
    }

    pub fn cumulative_row(&self, t: usize, from: usize) -> Vec<f64> {
        (0..self.dim).map(|j| self.cumulative_prob(t, from, j)).collect()
    }

    /// `Q̄_t` obtained by multiplying step matrices from scratch.
    /// The closed form is used everywhere else; this exists as a cross-check.
    pub fn accumulated_cumulative(&self, t: usize) -> Vec<f64> {
        let mut acc = self.matrix(|i, j| if i == j { 1.0 } else { 0.0 });
        for s in 1..=t {
            acc = matmul(&acc, &self.step_matrix(s), self.dim);
        }
        acc
    }

    fn matrix(&self, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        let d = self.dim;
        (0..d * d).map(|k| f(k / d, k % d)).collect()
    }

    /// Draw from the limit distribution.
    pub fn sample_prior<R: Rng>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.limit, rng)
    }

    /// Draw `x_t ~ Q̄_t[x0, ·]`.
    pub fn sample_forward<R: Rng>(&self, x0: usize, t: usize, rng: &mut R) -> usize {
        sample_categorical(&self.cumulative_row(t, x0), rng)
    }

    /// Normalized `q(x_{t−1} | x_t, x0) ∝ Q_t[·, x_t] ⊙ Q̄_{t−1}[x0, ·]`.
    pub fn posterior(&self, xt: usize, x0: usize, t: usize) -> Result<Vec<f64>, NoiseError> {
        self.check_step(t)?;
        self.check_category(xt)?;
        self.check_category(x0)?;
        let mut p: Vec<f64> = (0..self.dim)
            .map(|j| self.step_prob(t, j, xt) * self.cumulative_prob(t - 1, x0, j))
            .collect();
        let z: f64 = p.iter().sum();
        if z <= 0.0 {
            return Err(NoiseError::ImpossiblePair { xt, x0, t });
        }
        p.iter_mut().for_each(|x| *x /= z);
        Ok(p)
    }

    /// `Σ_{x0} q(x_{t−1} | x_t, x0) · pred0[x0]`. Terms with an impossible
    /// `(x_t, x0)` pair are dropped and the remaining weight renormalized.
    pub fn reverse_mixture(&self, xt: usize, pred0: &[f64], t: usize) -> Result<Vec<f64>, NoiseError> {
        if pred0.len() != self.dim {
            return Err(NoiseError::DimensionMismatch { expected: self.dim, got: pred0.len() });
        }
        let mut out = vec![0.0; self.dim];
        let mut weight = 0.0;
        for (x0, &w) in pred0.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            match self.posterior(xt, x0, t) {
                Ok(p) => {
                    weight += w;
                    out.iter_mut().zip(&p).for_each(|(o, &q)| *o += w * q);
                }
                Err(NoiseError::ImpossiblePair { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        if weight <= 0.0 {
            return Err(NoiseError::ImpossiblePair { xt, x0: argmax(pred0), t });
        }
        out.iter_mut().for_each(|o| *o /= weight);
        Ok(out)
    }

    fn check_step(&self, t: usize) -> Result<(), NoiseError> {
        if t == 0 || t > self.schedule.steps {
            return Err(NoiseError::StepOutOfRange { t, steps: self.schedule.steps });
        }
        Ok(())
    }

    fn check_category(&self, c: usize) -> Result<(), NoiseError> {
        if c >= self.dim {
            return Err(NoiseError::DimensionMismatch { expected: self.dim, got: c + 1 });
        }
        Ok(())
    }
}

fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

pub fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    // Rounding left `u` just past the end: fall back to the last positive entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Positions held fixed by forward and reverse steps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrozenMask {
    n: usize,
    nodes: Vec<bool>,
    edges: Vec<bool>,
}

impl FrozenMask {
    pub fn none(n: usize) -> Self {
        FrozenMask { n, nodes: vec![false; n], edges: vec![false; n * n] }
    }

    pub fn all(n: usize) -> Self {
        FrozenMask { n, nodes: vec![true; n], edges: vec![true; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn node(&self, i: usize) -> bool {
        self.nodes[i]
    }

    pub fn edge(&self, i: usize, j: usize) -> bool {
        self.edges[i * self.n + j]
    }

    pub fn set_node(&mut self, i: usize, frozen: bool) {
        self.nodes[i] = frozen;
    }

    pub fn set_edge(&mut self, i: usize, j: usize, frozen: bool) {
        self.edges[i * self.n + j] = frozen;
        self.edges[j * self.n + i] = frozen;
    }

    pub fn free_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(|&i| !self.nodes[i])
    }

    /// Free upper-triangle pairs `(i, j)`, `i < j`.
    pub fn free_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| !self.edge(i, j))
    }
}

/// Per-position clean-category distributions predicted by the denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanPrediction {
    pub n: usize,
    /// `n × node_dim`, row-major.
    pub nodes: Vec<f64>,
    pub node_dim: usize,
    /// `n × n × edge_dim`, row-major and symmetric in the first two indices.
    pub edges: Vec<f64>,
    pub edge_dim: usize,
}

impl CleanPrediction {
    pub fn node_row(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.node_dim..(i + 1) * self.node_dim]
    }

    pub fn edge_row(&self, i: usize, j: usize) -> &[f64] {
        let k = (i * self.n + j) * self.edge_dim;
        &self.edges[k..k + self.edge_dim]
    }
}

fn node_category(g: &MolGraph, vocab: &AtomVocab, i: usize) -> Result<usize, NoiseError> {
    vocab.index_of(g.atom(i)).ok_or(NoiseError::UnknownCategory(i))
}

fn check_dims(kx: &TransitionKernel, ke: &TransitionKernel, vocab: &AtomVocab) -> Result<(), NoiseError> {
    if kx.dim() != vocab.len() {
        return Err(NoiseError::DimensionMismatch { expected: vocab.len(), got: kx.dim() });
    }
    if ke.dim() != BondOrder::ALL.len() {
        return Err(NoiseError::DimensionMismatch { expected: BondOrder::ALL.len(), got: ke.dim() });
    }
    Ok(())
}

/// Draws `G_t ~ q(G_t | G_0)` independently per free node and free
/// upper-triangle edge; frozen positions are copied.
pub fn forward_sample<R: Rng>(
    g0: &MolGraph,
    t: usize,
    kx: &TransitionKernel,
    ke: &TransitionKernel,
    vocab: &AtomVocab,
    mask: &FrozenMask,
    rng: &mut R,
) -> Result<MolGraph, NoiseError> {
    check_dims(kx, ke, vocab)?;
    if mask.n() != g0.n() {
        return Err(NoiseError::DimensionMismatch { expected: g0.n(), got: mask.n() });
    }
    for steps in [kx.steps(), ke.steps()] {
        if t > steps {
            return Err(NoiseError::StepOutOfRange { t, steps });
        }
    }
    let mut g = g0.clone();
    for i in mask.free_nodes() {
        let x = kx.sample_forward(node_category(g0, vocab, i)?, t, rng);
        g.set_atom(i, vocab.atom(x));
    }
    for (i, j) in mask.free_edges() {
        let e = ke.sample_forward(g0.bond(i, j).index(), t, rng);
        g.set_bond(i, j, BondOrder::ALL[e]);
    }
    Ok(g)
}

fn check_row(row: &[f64], index: usize) -> Result<(), NoiseError> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
        return Err(NoiseError::InvalidPrediction { row: index });
    }
    Ok(())
}

/// One reverse transition `G_t → G_{t−1}` at free positions.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step<R: Rng>(
    gt: &MolGraph,
    pred: &CleanPrediction,
    kx: &TransitionKernel,
    ke: &TransitionKernel,
    t: usize,
    vocab: &AtomVocab,
    mask: &FrozenMask,
    rng: &mut R,
) -> Result<MolGraph, NoiseError> {
    check_dims(kx, ke, vocab)?;
    if pred.n != gt.n() || mask.n() != gt.n() {
        return Err(NoiseError::DimensionMismatch { expected: gt.n(), got: pred.n });
    }
    let mut g = gt.clone();
    for i in mask.free_nodes() {
        let row = pred.node_row(i);
        check_row(row, i)?;
        let mix = kx.reverse_mixture(node_category(gt, vocab, i)?, row, t)?;
        g.set_atom(i, vocab.atom(sample_categorical(&mix, rng)));
    }
    for (i, j) in mask.free_edges() {
        let row = pred.edge_row(i, j);
        check_row(row, i * gt.n() + j)?;
        let mix = ke.reverse_mixture(gt.bond(i, j).index(), row, t)?;
        g.set_bond(i, j, BondOrder::ALL[sample_categorical(&mix, rng)]);
    }
    Ok(g)
}
