//! Staged generation: the external group is denoised with the product frozen,
//! then the external bonds with group and product frozen, then rule-based
//! post-adaptation assembles the reactants.

mod adapt;
mod config;
mod trace;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::denoiser::{
    adam_step, batch_gradients, encode_input, AdamState, Arch, Checkpoint, DenoiserError, DenoiserParams, NamedModel,
    Targets, TrainItem,
};
use crate::features::{compute_features, FeatureError};
use crate::molgraph::{splice, strip_dummies, Atom, AtomVocab, BondOrder, GraphError, MolGraph, NodeTag};
use crate::noise::{
    forward_sample, reverse_step, CleanPrediction, FrozenMask, NoiseError, NoiseSchedule, PriorKind, TransitionKernel,
};
use crate::reaction::SupervisionTarget;

pub use adapt::{adapt_sites, post_adapt, AdaptOutcome, AdaptReport};
pub use config::{ConfigError, StageConfig, StageOrder};
pub use trace::{parse_mgf, render_svg, write_mgf, TraceStep};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("model has no parameters for the {0} stage")]
    MissingStage(&'static str),
    #[error("no training examples fit the group budget")]
    NoExamples,
    #[error("frozen position changed during sampling at step {t}")]
    FrozenViolated { t: usize },
}

/// Which positions a stage denoises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StageKind {
    /// Group atoms and group-internal bonds.
    Group,
    /// Group-to-product (external) bonds.
    Bond,
    /// Everything the other two cover.
    Joint,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::Group => "group",
            StageKind::Bond => "bond",
            StageKind::Joint => "joint",
        }
    }

    pub fn from_name(s: &str) -> Option<StageKind> {
        [StageKind::Group, StageKind::Bond, StageKind::Joint].into_iter().find(|k| k.name() == s)
    }

    fn covers_group(self) -> bool {
        matches!(self, StageKind::Group | StageKind::Joint)
    }

    fn covers_cross(self) -> bool {
        matches!(self, StageKind::Bond | StageKind::Joint)
    }
}

impl StageOrder {
    pub fn stages(self) -> &'static [StageKind] {
        match self {
            StageOrder::GroupThenBond => &[StageKind::Group, StageKind::Bond],
            StageOrder::BondThenGroup => &[StageKind::Bond, StageKind::Group],
            StageOrder::Joint => &[StageKind::Joint],
        }
    }
}

/// Frozen mask for a graph of `n_x` product nodes followed by `n_g` group slots.
pub fn stage_mask(n_x: usize, n_g: usize, kind: StageKind) -> FrozenMask {
    let n = n_x + n_g;
    let mut mask = FrozenMask::all(n);
    if kind.covers_group() {
        for i in n_x..n {
            mask.set_node(i, false);
            for j in i + 1..n {
                mask.set_edge(i, j, false);
            }
        }
    }
    if kind.covers_cross() {
        for g in n_x..n {
            for p in 0..n_x {
                mask.set_edge(g, p, false);
            }
        }
    }
    mask
}

/// Node and edge kernels for both horizons.
#[derive(Clone, Debug)]
pub struct Kernels {
    pub nodes: TransitionKernel,
    pub edges_long: TransitionKernel,
    pub edges_short: TransitionKernel,
}

impl Kernels {
    pub fn new(config: &StageConfig, atom_classes: usize) -> Result<Self, PipelineError> {
        config.validate()?;
        let long = NoiseSchedule::cosine(config.t1, config.offset)?;
        let short = NoiseSchedule::cosine(config.t2, config.offset)?;
        Ok(Kernels {
            nodes: TransitionKernel::new(long.clone(), atom_classes, config.prior)?,
            edges_long: TransitionKernel::new(long, BondOrder::ALL.len(), config.prior)?,
            edges_short: TransitionKernel::new(short, BondOrder::ALL.len(), config.prior)?,
        })
    }

    /// `(node kernel, edge kernel)` used by a stage; the bond stage runs on the short horizon.
    pub fn for_stage(&self, kind: StageKind) -> (&TransitionKernel, &TransitionKernel) {
        match kind {
            StageKind::Bond => (&self.nodes, &self.edges_short),
            _ => (&self.nodes, &self.edges_long),
        }
    }

    pub fn steps(&self, kind: StageKind) -> usize {
        self.for_stage(kind).1.steps()
    }
}

/// Product plus a group padded to exactly `n_g` slots and the external bonds.
#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub product: MolGraph,
    pub group: MolGraph,
    /// `(group slot, product node, order)`.
    pub cross: Vec<(usize, usize, BondOrder)>,
}

impl Template {
    /// `None` when the group exceeds the budget or a bond endpoint is out of range.
    pub fn new(
        product: &MolGraph,
        group: &MolGraph,
        external_bonds: &[(usize, usize, BondOrder)],
        n_g: usize,
    ) -> Option<Template> {
        if group.n() > n_g || external_bonds.iter().any(|&(g, p, _)| g >= group.n() || p >= product.n()) {
            return None;
        }
        let mut group = group.clone();
        for i in 0..group.n() {
            group.set_tag(i, NodeTag::Group);
        }
        while group.n() < n_g {
            group.add_atom(Atom::Dummy, NodeTag::Group);
        }
        let mut product = product.clone();
        for i in 0..product.n() {
            product.set_tag(i, NodeTag::Product);
        }
        let cross = external_bonds.iter().filter(|e| !e.2.is_none()).copied().collect();
        Some(Template { product, group, cross })
    }

    /// `None` when the group exceeds the budget.
    pub fn from_supervision(product: &MolGraph, target: &SupervisionTarget, n_g: usize) -> Option<Template> {
        Template::new(product, &target.group, &target.external_bonds, n_g)
    }

    pub fn n_x(&self) -> usize {
        self.product.n()
    }

    pub fn n_g(&self) -> usize {
        self.group.n()
    }

    /// Product, group and external bonds spliced into one graph.
    pub fn graph(&self) -> MolGraph {
        let n_x = self.n_x();
        let cross: Vec<_> = self.cross.iter().map(|&(g, p, o)| (n_x + g, p, o)).collect();
        splice(&[&self.product, &self.group], &cross).expect("template indices are in range")
    }

    /// Reads group slots and external bonds back out of a stage graph.
    pub fn from_graph(g: &MolGraph, n_x: usize) -> Template {
        let product = g.subgraph(&(0..n_x).collect::<Vec<_>>());
        let group = g.subgraph(&(n_x..g.n()).collect::<Vec<_>>());
        let mut cross = Vec::new();
        for s in n_x..g.n() {
            for p in 0..n_x {
                let o = g.bond(s, p);
                if !o.is_none() {
                    cross.push((s - n_x, p, o));
                }
            }
        }
        Template { product, group, cross }
    }
}

/// Positions not yet generated when `kind` runs are replaced by prior draws.
pub(crate) fn stage_context<R: rand::Rng>(
    template: &Template,
    order: StageOrder,
    kind: StageKind,
    kernels: &Kernels,
    vocab: &AtomVocab,
    rng: &mut R,
) -> MolGraph {
    let mut g = template.graph();
    let stages = order.stages();
    let pos = stages.iter().position(|&k| k == kind).unwrap_or(0);
    let later = &stages[pos + 1..];
    let (n_x, n) = (template.n_x(), g.n());
    if later.iter().any(|k| k.covers_group()) {
        for i in n_x..n {
            g.set_atom(i, vocab.atom(kernels.nodes.sample_prior(rng)));
            for j in i + 1..n {
                g.set_bond(i, j, BondOrder::ALL[kernels.edges_long.sample_prior(rng)]);
            }
        }
    }
    if later.iter().any(|k| k.covers_cross()) {
        for s in n_x..n {
            for p in 0..n_x {
                g.set_bond(s, p, BondOrder::ALL[kernels.edges_short.sample_prior(rng)]);
            }
        }
    }
    g
}

/// Source of clean-category predictions for a noisy stage graph.
pub trait CleanPredictor {
    fn predict(&self, kind: StageKind, graph: &MolGraph, t: usize, steps: usize) -> Result<CleanPrediction, PipelineError>;
}

/// Predicts the prior's limit distribution everywhere: the degenerate, untrained model.
#[derive(Clone, Debug)]
pub struct PriorPredictor {
    pub atom_classes: usize,
    pub prior: PriorKind,
}

impl CleanPredictor for PriorPredictor {
    fn predict(&self, _: StageKind, graph: &MolGraph, _: usize, _: usize) -> Result<CleanPrediction, PipelineError> {
        let row = |d: usize| -> Vec<f64> {
            match self.prior {
                PriorKind::Absorbing => (0..d).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect(),
                PriorKind::Uniform => vec![1.0 / d as f64; d],
            }
        };
        let n = graph.n();
        let edge_dim = BondOrder::ALL.len();
        Ok(CleanPrediction {
            n,
            nodes: row(self.atom_classes).repeat(n),
            node_dim: self.atom_classes,
            edges: row(edge_dim).repeat(n * n),
            edge_dim,
        })
    }
}

/// Vocabulary, stage configuration and one denoiser per stage.
#[derive(Clone, Debug, PartialEq)]
pub struct RetroModel {
    pub vocab: AtomVocab,
    pub config: StageConfig,
    pub stages: Vec<NamedModel>,
}

impl RetroModel {
    /// Fresh parameters for each stage of `config.order`, all from the same seed.
    pub fn new(vocab: AtomVocab, config: StageConfig, arch: Arch, seed: u64) -> Result<Self, PipelineError> {
        config.validate()?;
        if arch.atom_classes != vocab.len() {
            return Err(DenoiserError::Arch(format!(
                "atom_classes {} does not match vocabulary size {}",
                arch.atom_classes,
                vocab.len()
            ))
            .into());
        }
        let params = DenoiserParams::init(arch, seed)?;
        let stages = config
            .order
            .stages()
            .iter()
            .map(|k| NamedModel { prefix: k.name().to_string(), adam: AdamState::new(&params), params: params.clone() })
            .collect();
        Ok(RetroModel { vocab, config, stages })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint { vocab: self.vocab.clone(), config: self.config.clone(), models: self.stages.clone() }
    }

    /// Fails if the checkpoint lacks a model for a stage of its own order.
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, PipelineError> {
        ck.config.validate()?;
        for kind in ck.config.order.stages() {
            if ck.model(kind.name()).is_none() {
                return Err(PipelineError::MissingStage(kind.name()));
            }
        }
        Ok(RetroModel { vocab: ck.vocab, config: ck.config, stages: ck.models })
    }

    pub fn stage(&self, kind: StageKind) -> Result<&NamedModel, PipelineError> {
        self.stages.iter().find(|m| m.prefix == kind.name()).ok_or(PipelineError::MissingStage(kind.name()))
    }

    fn stage_mut(&mut self, kind: StageKind) -> Result<&mut NamedModel, PipelineError> {
        self.stages.iter_mut().find(|m| m.prefix == kind.name()).ok_or(PipelineError::MissingStage(kind.name()))
    }

    pub fn kernels(&self) -> Result<Kernels, PipelineError> {
        Kernels::new(&self.config, self.vocab.len())
    }

    /// Network input for a noisy stage graph at step `t` of `steps`.
    pub fn input(&self, graph: &MolGraph, t: usize, steps: usize) -> Result<crate::denoiser::DenoiserInput, PipelineError> {
        let features = compute_features(graph, t, steps)?;
        Ok(encode_input(graph, &self.vocab, &features)?)
    }
}

impl CleanPredictor for RetroModel {
    fn predict(&self, kind: StageKind, graph: &MolGraph, t: usize, steps: usize) -> Result<CleanPrediction, PipelineError> {
        let input = self.input(graph, t, steps)?;
        Ok(self.stage(kind)?.params.forward(&input)?.probabilities())
    }
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Feed the bond stage a group predicted by the group stage instead of the ground truth.
    pub self_condition: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { batch_size: 8, lr: 3e-4, seed: 0, self_condition: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLogRow {
    pub stage: StageKind,
    pub step: usize,
    pub atom_ce: f64,
    pub bond_ce: f64,
    pub total: f64,
}

/// Templates for every record whose group fits the budget, and the number skipped.
pub fn prepare_templates(
    products: &[&MolGraph],
    targets: &[SupervisionTarget],
    n_g: usize,
) -> (Vec<Template>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for (p, t) in products.iter().zip(targets) {
        match Template::from_supervision(p, t, n_g) {
            Some(tpl) => out.push(tpl),
            None => {
                log::warn!("group of size {} exceeds budget {n_g}; record skipped", t.group_size());
                skipped += 1;
            }
        }
    }
    (out, skipped)
}

/// Noised stage graph, its mask and supervision for one template at step `t`.
pub fn stage_example<R: rand::Rng>(
    model: &RetroModel,
    kernels: &Kernels,
    template: &Template,
    kind: StageKind,
    t: usize,
    rng: &mut R,
) -> Result<(MolGraph, FrozenMask, Targets), PipelineError> {
    let clean = stage_context(template, model.config.order, kind, kernels, &model.vocab, rng);
    let mask = stage_mask(template.n_x(), template.n_g(), kind);
    let (kx, ke) = kernels.for_stage(kind);
    let noisy = forward_sample(&clean, t, kx, ke, &model.vocab, &mask, rng)?;
    let targets = Targets::from_graph(&clean, &model.vocab, &mask)?;
    Ok((noisy, mask, targets))
}

/// Atom-term weight used by a stage.
pub fn stage_mu(config: &StageConfig, kind: StageKind) -> f64 {
    match kind {
        StageKind::Bond => 0.0,
        _ => config.mu,
    }
}

/// Sequential trainer; owns the model and the sampling RNG.
pub struct Trainer<'a> {
    pub model: RetroModel,
    templates: &'a [Template],
    kernels: Kernels,
    options: TrainOptions,
    rng: ChaCha8Rng,
    steps_done: Vec<(StageKind, usize)>,
    pub log: Vec<TrainLogRow>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: RetroModel, templates: &'a [Template], options: TrainOptions) -> Result<Self, PipelineError> {
        if templates.is_empty() {
            return Err(PipelineError::NoExamples);
        }
        let kernels = model.kernels()?;
        let rng = ChaCha8Rng::seed_from_u64(options.seed);
        Ok(Trainer { model, templates, kernels, options, rng, steps_done: Vec::new(), log: Vec::new() })
    }

    pub fn steps_done(&self, kind: StageKind) -> usize {
        self.steps_done.iter().find(|s| s.0 == kind).map_or(0, |s| s.1)
    }

    pub fn total_steps(&self) -> usize {
        self.steps_done.iter().map(|s| s.1).sum()
    }

    /// Before its first step, a later stage starts from the current weights of
    /// the stage preceding it.
    fn warm_start(&mut self, kind: StageKind) -> Result<(), PipelineError> {
        if self.steps_done(kind) > 0 {
            return Ok(());
        }
        let stages = self.model.config.order.stages();
        let Some(pos) = stages.iter().position(|&k| k == kind) else {
            return Err(PipelineError::MissingStage(kind.name()));
        };
        if pos > 0 && self.steps_done(stages[pos - 1]) > 0 {
            let params = self.model.stage(stages[pos - 1])?.params.clone();
            let m = self.model.stage_mut(kind)?;
            m.adam = AdamState::new(&params);
            m.params = params;
        }
        Ok(())
    }

    fn self_conditioned(&mut self, template: &Template) -> Result<Template, PipelineError> {
        let steps = self.kernels.steps(StageKind::Group);
        let t = rand::Rng::gen_range(&mut self.rng, 1..=steps);
        let (noisy, _, _) =
            stage_example(&self.model, &self.kernels, template, StageKind::Group, t, &mut self.rng)?;
        let pred = self.model.predict(StageKind::Group, &noisy, t, steps)?;
        let mut guess = template.clone();
        let n_x = template.n_x();
        let argmax = |row: &[f64]| (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
        for s in 0..template.n_g() {
            guess.group.set_atom(s, self.model.vocab.atom(argmax(pred.node_row(n_x + s))));
            for r in s + 1..template.n_g() {
                guess.group.set_bond(s, r, BondOrder::ALL[argmax(pred.edge_row(n_x + s, n_x + r))]);
            }
        }
        Ok(guess)
    }

    /// Runs `steps` optimizer steps on one stage.
    pub fn train_stage(&mut self, kind: StageKind, steps: usize) -> Result<(), PipelineError> {
        self.warm_start(kind)?;
        let horizon = self.kernels.steps(kind);
        let mu = stage_mu(&self.model.config, kind);
        for _ in 0..steps {
            let mut batch = Vec::with_capacity(self.options.batch_size);
            for _ in 0..self.options.batch_size {
                let idx = rand::Rng::gen_range(&mut self.rng, 0..self.templates.len());
                let mut template = self.templates[idx].clone();
                if kind == StageKind::Bond && self.options.self_condition && self.steps_done(StageKind::Group) > 0 {
                    template = self.self_conditioned(&template)?;
                }
                let t = rand::Rng::gen_range(&mut self.rng, 1..=horizon);
                let (noisy, _, targets) = stage_example(&self.model, &self.kernels, &template, kind, t, &mut self.rng)?;
                if targets.atom_positions() + targets.bond_positions() == 0 {
                    continue;
                }
                batch.push(TrainItem { input: self.model.input(&noisy, t, horizon)?, targets });
            }
            if batch.is_empty() {
                continue;
            }
            let lr = self.options.lr;
            let stage = self.model.stage_mut(kind)?;
            let (report, grads) = batch_gradients(&stage.params, &batch, mu)?;
            adam_step(&mut stage.params, &grads, &mut stage.adam, lr);
            let done = match self.steps_done.iter_mut().find(|s| s.0 == kind) {
                Some(s) => {
                    s.1 += 1;
                    s.1
                }
                None => {
                    self.steps_done.push((kind, 1));
                    1
                }
            };
            self.log.push(TrainLogRow {
                stage: kind,
                step: done,
                atom_ce: report.atom_ce,
                bond_ce: report.bond_ce,
                total: report.total,
            });
        }
        Ok(())
    }
}

/// Result of one sampling run.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTrace {
    /// Initial state plus one snapshot per reverse step, when recording.
    pub steps: Vec<TraceStep>,
    /// Index into `steps` of the state each stage starts from (all 0 when not recording).
    pub stage_starts: Vec<usize>,
    /// Final stage graph before dummy removal.
    pub template: Template,
    /// Group after dummy removal and the external bonds re-indexed onto it.
    pub group: MolGraph,
    pub external_bonds: Vec<(usize, usize, BondOrder)>,
    /// Non-NONE edges that touched a dummy slot and were dropped.
    pub inconsistent_edges: usize,
    pub reactants: MolGraph,
    pub report: AdaptReport,
}

/// Initial stage graph: product plus `n_g` slots drawn from the priors.
fn initial_graph<R: rand::Rng>(product: &MolGraph, n_g: usize, kernels: &Kernels, vocab: &AtomVocab, rng: &mut R) -> MolGraph {
    let mut p = product.clone();
    for i in 0..p.n() {
        p.set_tag(i, NodeTag::Product);
    }
    let slots = MolGraph::from_atoms(vec![Atom::Dummy; n_g], NodeTag::Group);
    let mut g = splice(&[&p, &slots], &[]).expect("no cross edges");
    let n_x = p.n();
    for i in n_x..g.n() {
        g.set_atom(i, vocab.atom(kernels.nodes.sample_prior(rng)));
        for j in i + 1..g.n() {
            g.set_bond(i, j, BondOrder::ALL[kernels.edges_long.sample_prior(rng)]);
        }
        for q in 0..n_x {
            g.set_bond(i, q, BondOrder::ALL[kernels.edges_short.sample_prior(rng)]);
        }
    }
    g
}

/// Full staged sampling for one product.
pub fn sample<P: CleanPredictor>(
    predictor: &P,
    vocab: &AtomVocab,
    config: &StageConfig,
    product: &MolGraph,
    seed: u64,
    record: bool,
) -> Result<SampleTrace, PipelineError> {
    let kernels = Kernels::new(config, vocab.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_x = product.n();
    let mut g = initial_graph(product, config.n_g, &kernels, vocab, &mut rng);
    let mut steps = Vec::new();
    let mut stage_starts = Vec::new();
    if record {
        steps.push(TraceStep { stage: config.order.stages()[0], t: kernels.steps(config.order.stages()[0]), graph: g.clone() });
    }
    for &kind in config.order.stages() {
        stage_starts.push(steps.len().saturating_sub(1));
        let mask = stage_mask(n_x, config.n_g, kind);
        let (kx, ke) = kernels.for_stage(kind);
        let horizon = kernels.steps(kind);
        for t in (1..=horizon).rev() {
            let pred = predictor.predict(kind, &g, t, horizon)?;
            let next = reverse_step(&g, &pred, kx, ke, t, vocab, &mask, &mut rng)?;
            if !frozen_unchanged(&g, &next, &mask) {
                return Err(PipelineError::FrozenViolated { t });
            }
            g = next;
            if record {
                steps.push(TraceStep { stage: kind, t: t - 1, graph: g.clone() });
            }
        }
    }
    finish(g, n_x, steps, stage_starts)
}

fn frozen_unchanged(before: &MolGraph, after: &MolGraph, mask: &FrozenMask) -> bool {
    let n = before.n();
    (0..n).all(|i| !mask.node(i) || before.atom(i) == after.atom(i))
        && (0..n).all(|i| (i + 1..n).all(|j| !mask.edge(i, j) || before.bond(i, j) == after.bond(i, j)))
}

/// Drops dummy slots and applies post-adaptation to a final stage graph.
pub fn finish(
    g: MolGraph,
    n_x: usize,
    steps: Vec<TraceStep>,
    stage_starts: Vec<usize>,
) -> Result<SampleTrace, PipelineError> {
    let template = Template::from_graph(&g, n_x);
    let (stripped, strip) = strip_dummies(&g);
    let group = stripped.subgraph(&(n_x..stripped.n()).collect::<Vec<_>>());
    let mut external_bonds = Vec::new();
    for s in n_x..stripped.n() {
        for p in 0..n_x {
            let o = stripped.bond(s, p);
            if !o.is_none() {
                external_bonds.push((s - n_x, p, o));
            }
        }
    }
    let outcome = post_adapt(&template.product, &group, &external_bonds)?;
    Ok(SampleTrace {
        steps,
        stage_starts,
        template,
        group,
        external_bonds,
        inconsistent_edges: strip.inconsistent_edges.len(),
        reactants: outcome.reactants,
        report: outcome.report,
    })
}

#[cfg(test)]
mod tests;
