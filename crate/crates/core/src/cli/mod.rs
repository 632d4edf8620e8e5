//! Command-line surface: `train`, `sample`, `eval` and `inspect`.
//!
//! Every command returns the text it would print; [`main_with_args`] adds the
//! exit-status convention. Failures print one line,
//! `error: <class>: <message>`, and exit with status 1 (2 for usage errors).

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{parse_pairs, RunConfig, KEYS};

use crate::denoiser::{read_checkpoint, save_checkpoint, CheckpointError};
use crate::evalrank::{case_records, propose, rank_and_evaluate, sample_seed, EvalCase, EvalError, Proposal};
use crate::molgraph::{parse_molecule, write_molecule, AtomVocab, MolGraph, SmilesError};
use crate::pipeline::{
    prepare_templates, render_svg, sample, write_mgf, CleanPredictor, ConfigError, PipelineError, PriorPredictor,
    RetroModel, StageConfig, Trainer,
};
use crate::reaction::{
    extract_supervision, group_budget, is_reconstructable, load_corpus, ReactionError, ReactionRecord,
    SupervisionTarget,
};

/// Group budget used by `sample` when neither a checkpoint nor `n_g` is given.
pub const FALLBACK_N_G: usize = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Corpus {
        path: PathBuf,
        #[source]
        source: ReactionError,
    },
    #[error("product: {0}")]
    Product(#[from] SmilesError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl CliError {
    /// Stable machine-readable class name.
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Corpus { .. } => "corpus",
            CliError::Product(_) => "product",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Pipeline(_) => "pipeline",
            CliError::Eval(_) => "eval",
        }
    }

    /// `error: <class>: <message>` on a single line.
    pub fn line(&self) -> String {
        let msg = self.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error: {}: {msg}", self.class())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Parser)]
#[command(name = "retrodiff", about = "Staged graph diffusion for single-step retrosynthesis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Flat key=value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for evaluation
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override one config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the stage denoisers on a corpus
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sample and rank reactants for one product
    Sample {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        product: String,
        #[arg(long)]
        num_samples: Option<usize>,
        /// Write the best candidate's trajectory as trace.mgf and trace.svg
        #[arg(long)]
        trace: bool,
        /// Keep every n-th step in the SVG strip
        #[arg(long, default_value_t = 1)]
        trace_every: usize,
    },
    /// Evaluate top-k accuracy and validity on a test corpus
    Eval {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Describe a checkpoint or a corpus file
    Inspect { path: PathBuf },
}

/// Defaults, then the config file, then `--set`, then dedicated flags.
pub fn resolve_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_text(&fs::read_to_string(path).map_err(io_err(path))?)?;
    }
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = common.jobs {
        cfg.set("jobs", &jobs.to_string())?;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn required<'a>(field: &str, p: &'a Option<PathBuf>) -> Result<&'a PathBuf, CliError> {
    let p = p.as_ref().ok_or_else(|| ConfigError::Missing(field.to_string()))?;
    if !p.exists() {
        return Err(ConfigError::field(field, format!("{} does not exist", p.display())).into());
    }
    Ok(p)
}

fn read_corpus(path: &Path) -> Result<Vec<ReactionRecord>, CliError> {
    load_corpus(path).map_err(|source| CliError::Corpus { path: path.to_path_buf(), source })
}

fn supervision(path: &Path, records: &[ReactionRecord]) -> Result<Vec<SupervisionTarget>, CliError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            extract_supervision(r).map_err(|e| CliError::Corpus {
                path: path.to_path_buf(),
                source: ReactionError::Line { line: i + 1, source: Box::new(e) },
            })
        })
        .collect()
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Trains every stage of the configured order and writes `model.rdck`,
/// `train_log.tsv`, `run_config.txt` and periodic checkpoints to `out`.
pub fn cmd_train(cfg: &RunConfig) -> Result<String, CliError> {
    let corpus = required("corpus", &cfg.corpus)?;
    let records = read_corpus(corpus)?;
    let targets = supervision(corpus, &records)?;
    let budget = group_budget(&targets).map_err(|source| CliError::Corpus { path: corpus.clone(), source })?;
    let mut stage = cfg.stage.clone();
    if stage.n_g == 0 {
        stage.n_g = budget.n_g.max(1);
    }
    stage.validate()?;

    let kept: Vec<usize> = (0..records.len()).filter(|&i| !budget.excludes(targets[i].group_size())).collect();
    let products: Vec<&MolGraph> = kept.iter().map(|&i| &records[i].product).collect();
    let kept_targets: Vec<SupervisionTarget> = kept.iter().map(|&i| targets[i].clone()).collect();
    let (templates, skipped) = prepare_templates(&products, &kept_targets, stage.n_g);
    let vocab = crate::reaction::build_vocab(&records);

    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let arch = cfg.arch(vocab.len());
    let model = RetroModel::new(vocab, stage.clone(), arch, cfg.seed)?;
    let mut trainer = Trainer::new(model, &templates, cfg.train_options())?;
    for (&kind, &steps) in stage.order.stages().iter().zip(&cfg.stage_steps()) {
        let chunk = if cfg.checkpoint_every == 0 { steps.max(1) } else { cfg.checkpoint_every };
        let mut done = 0;
        while done < steps {
            let n = chunk.min(steps - done);
            trainer.train_stage(kind, n)?;
            done += n;
            if cfg.checkpoint_every > 0 {
                let path = cfg.out.join(format!("checkpoint_{}_{done:06}.rdck", kind.name()));
                save_checkpoint(&trainer.model.to_checkpoint(), &path)?;
            }
            log::info!("{} stage: {done}/{steps} steps", kind.name());
        }
    }

    let mut log_text = String::from("stage\tstep\tatom_ce\tbond_ce\ttotal\n");
    for row in &trainer.log {
        let _ = writeln!(
            log_text,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            row.stage.name(),
            row.step,
            row.atom_ce,
            row.bond_ce,
            row.total
        );
    }
    write(&cfg.out.join("train_log.tsv"), &log_text)?;
    let effective = RunConfig { stage: stage.clone(), ..cfg.clone() };
    write(&cfg.out.join("run_config.txt"), effective.to_text())?;
    let model_path = cfg.out.join("model.rdck");
    save_checkpoint(&trainer.model.to_checkpoint(), &model_path)?;

    let mut out = String::new();
    let _ = writeln!(out, "records={}", records.len());
    let _ = writeln!(out, "excluded_outliers={}", records.len() - kept.len());
    let _ = writeln!(out, "skipped_over_budget={skipped}");
    let _ = writeln!(out, "templates={}", templates.len());
    let _ = writeln!(out, "n_g={}", stage.n_g);
    let _ = writeln!(out, "steps={}", trainer.total_steps());
    if let Some(last) = trainer.log.last() {
        let _ = writeln!(out, "final_loss={:.6}", last.total);
    }
    let _ = writeln!(out, "checkpoint={}", model_path.display());
    Ok(out)
}

fn load_model(path: &Path) -> Result<RetroModel, CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(RetroModel::from_checkpoint(read_checkpoint(&bytes)?)?)
}

fn check_covered(vocab: &AtomVocab, g: &MolGraph, what: &str) -> Result<(), CliError> {
    match g.atoms().iter().find(|&&a| vocab.index_of(a).is_none()) {
        None => Ok(()),
        Some(a) => Err(CheckpointError::Incompatible(format!(
            "{what} contains {} outside the vocabulary [{}]",
            a.symbol(),
            vocab.symbols().join(",")
        ))
        .into()),
    }
}

fn smiles(g: &MolGraph) -> String {
    write_molecule(g).unwrap_or_else(|e| format!("<{e}>"))
}

fn ranked_lines<P: CleanPredictor>(
    predictor: &P,
    vocab: &AtomVocab,
    config: &StageConfig,
    product: &MolGraph,
    seed: u64,
    samples: usize,
    timesteps: usize,
) -> Result<(Proposal, String), CliError> {
    let proposal = propose(predictor, vocab, config, product, seed, samples, timesteps)?;
    let mut out = String::from("rank\tscore\tatom_term\tbond_term\tcopies\tvalid\treactants\n");
    for (r, c) in proposal.ranked.iter().enumerate() {
        let s = c.candidate.score;
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}",
            r + 1,
            s.score,
            s.atom_term,
            s.bond_term,
            c.copies,
            c.candidate.valid,
            smiles(&c.candidate.reactants)
        );
    }
    Ok((proposal, out))
}

fn write_trace<P: CleanPredictor>(
    predictor: &P,
    vocab: &AtomVocab,
    config: &StageConfig,
    product: &MolGraph,
    seed: u64,
    every: usize,
    out_dir: &Path,
) -> Result<(), CliError> {
    let trace = sample(predictor, vocab, config, product, seed, true)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write(&out_dir.join("trace.mgf"), write_mgf(&trace.steps))?;
    write(&out_dir.join("trace.svg"), render_svg(&trace.steps, every))
}

/// Options of the `sample` command beyond the shared config.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRequest {
    pub product: String,
    pub num_samples: usize,
    pub trace: bool,
    pub trace_every: usize,
}

/// Samples, ranks and prints candidates for one product. Without a checkpoint
/// the untrained prior predictor is used, so the product comes back unchanged
/// under the absorbing prior.
pub fn cmd_sample(cfg: &RunConfig, req: &SampleRequest) -> Result<String, CliError> {
    if req.num_samples == 0 {
        return Err(ConfigError::field("num_samples", "must be at least 1").into());
    }
    let product = parse_molecule(req.product.trim())?.graph;
    let seed = cfg.seed;
    let (proposal, mut text, best) = match &cfg.checkpoint {
        Some(path) => {
            let model = load_model(path)?;
            check_covered(&model.vocab, &product, "product")?;
            let (p, t) = ranked_lines(&model, &model.vocab, &model.config, &product, seed, req.num_samples, cfg.timesteps)?;
            if req.trace {
                let best = p.ranked[0].candidate.sample;
                write_trace(&model, &model.vocab, &model.config, &product, sample_seed(seed, best), req.trace_every, &cfg.out)?;
            }
            (p, t, path.display().to_string())
        }
        None => {
            let vocab = AtomVocab::full();
            let stage = StageConfig { n_g: if cfg.stage.n_g == 0 { FALLBACK_N_G } else { cfg.stage.n_g }, ..cfg.stage.clone() };
            stage.validate()?;
            let prior = PriorPredictor { atom_classes: vocab.len(), prior: stage.prior };
            let (p, t) = ranked_lines(&prior, &vocab, &stage, &product, seed, req.num_samples, cfg.timesteps)?;
            if req.trace {
                let best = p.ranked[0].candidate.sample;
                write_trace(&prior, &vocab, &stage, &product, sample_seed(seed, best), req.trace_every, &cfg.out)?;
            }
            (p, t, format!("prior:{}", stage.prior.name()))
        }
    };
    let head = format!(
        "product={}\nmodel={best}\nsamples={}\ndistinct={}\n",
        smiles(&product),
        req.num_samples,
        proposal.ranked.len()
    );
    text.insert_str(0, &head);
    Ok(text)
}

/// Evaluates a checkpoint on the test corpus; writes `eval_report.txt` and
/// `eval_cases.jsonl` to `out` and returns the report.
pub fn cmd_eval(cfg: &RunConfig) -> Result<String, CliError> {
    let ck = required("checkpoint", &cfg.checkpoint)?;
    let corpus = match &cfg.test_corpus {
        Some(_) => required("test_corpus", &cfg.test_corpus)?,
        None => required("corpus", &cfg.corpus)?,
    };
    let model = load_model(ck)?;
    let records = read_corpus(corpus)?;
    let mut cases = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let case = EvalCase::from_record(r).map_err(|e| CliError::Corpus {
            path: corpus.clone(),
            source: ReactionError::Line { line: i + 1, source: Box::new(e) },
        })?;
        check_covered(&model.vocab, &case.product, &format!("test record {}", i + 1))?;
        cases.push(case);
    }
    let options = cfg.eval_options();
    let (report, results) = rank_and_evaluate(&model, &model.vocab, &model.config, &cases, &options)?;
    let text = report.to_text();
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    write(&cfg.out.join("eval_report.txt"), &text)?;
    write(&cfg.out.join("eval_cases.jsonl"), case_records(&cases, &results, &options.ks))?;
    Ok(text)
}

fn inspect_checkpoint(bytes: &[u8]) -> Result<String, CliError> {
    let ck = read_checkpoint(bytes)?;
    let mut out = String::from("kind=checkpoint\n");
    let _ = writeln!(out, "bytes={}", bytes.len());
    let _ = writeln!(out, "crc32={:08x}", u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap()));
    let _ = writeln!(out, "vocab={}", ck.vocab.symbols().join(","));
    for (k, v) in ck.config.to_pairs() {
        let _ = writeln!(out, "{k}={v}");
    }
    let prefixes: Vec<&str> = ck.models.iter().map(|m| m.prefix.as_str()).collect();
    let _ = writeln!(out, "models={}", prefixes.join(","));
    for m in &ck.models {
        let a = m.params.arch();
        let p = &m.prefix;
        let _ = writeln!(
            out,
            "{p}.arch=n_layer:{} node:{} edge:{} global:{} heads:{} classes:{}",
            a.n_layer, a.node_width, a.edge_width, a.global_width, a.heads, a.atom_classes
        );
        let _ = writeln!(out, "{p}.seed={}", m.params.seed());
        let _ = writeln!(out, "{p}.adam_step={}", m.adam.step);
        let _ = writeln!(out, "{p}.parameters={}", m.params.parameter_count());
        for (name, t) in m.params.names().iter().zip(m.params.tensors()) {
            let mut h = crc32fast::Hasher::new();
            for &x in &t.data {
                h.update(&(x as f32).to_le_bytes());
            }
            let _ = writeln!(out, "tensor {p}.{name} {}x{} crc32={:08x}", t.rows, t.cols, h.finalize());
        }
    }
    Ok(out)
}

fn inspect_corpus(path: &Path) -> Result<String, CliError> {
    let records = read_corpus(path)?;
    let targets = supervision(path, &records)?;
    let budget = group_budget(&targets).map_err(|source| CliError::Corpus { path: path.to_path_buf(), source })?;
    let mut sizes = BTreeMap::new();
    let mut elements = BTreeMap::new();
    let mut classes = BTreeMap::new();
    let mut groups = BTreeMap::new();
    let mut unreconstructable = 0;
    for (r, t) in records.iter().zip(&targets) {
        *sizes.entry(r.product.n()).or_insert(0usize) += 1;
        for a in r.product.atoms().iter().chain(r.reactants.atoms()) {
            *elements.entry(a.symbol()).or_insert(0usize) += 1;
        }
        if let Some(c) = r.class_label {
            *classes.entry(c).or_insert(0usize) += 1;
        }
        *groups.entry(t.group_size()).or_insert(0usize) += 1;
        unreconstructable += usize::from(!is_reconstructable(&r.product, t));
    }
    let mut out = String::from("kind=corpus\n");
    let _ = writeln!(out, "records={}", records.len());
    for (n, c) in &sizes {
        let _ = writeln!(out, "product_atoms.{n}={c}");
    }
    for (e, c) in &elements {
        let _ = writeln!(out, "element.{e}={c}");
    }
    for (k, c) in &classes {
        let _ = writeln!(out, "class.{k}={c}");
    }
    for (s, c) in &groups {
        let mark = if budget.excludes(*s) { " excluded" } else { "" };
        let _ = writeln!(out, "group_size.{s}={c}{mark}");
    }
    let _ = writeln!(out, "group_size.mean={:.6}", budget.mean);
    let _ = writeln!(out, "group_size.std={:.6}", budget.std);
    let _ = writeln!(out, "group_size.cutoff={:.6}", budget.mean + 3.0 * budget.std);
    let _ = writeln!(out, "excluded_outliers={}", budget.excluded_count);
    let _ = writeln!(out, "n_g={}", budget.n_g);
    let _ = writeln!(out, "unreconstructable={unreconstructable}");
    Ok(out)
}

/// Dumps a checkpoint (recognized by its magic bytes) or corpus statistics.
pub fn cmd_inspect(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.starts_with(b"RDCK") {
        inspect_checkpoint(&bytes)
    } else {
        inspect_corpus(path)
    }
}

/// Runs one parsed command line and returns its standard output.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Train { common } => cmd_train(&resolve_config(&common)?),
        Command::Sample { common, product, num_samples, trace, trace_every } => {
            let cfg = resolve_config(&common)?;
            let req = SampleRequest { product, num_samples: num_samples.unwrap_or(10), trace, trace_every };
            cmd_sample(&cfg, &req)
        }
        Command::Eval { common } => cmd_eval(&resolve_config(&common)?),
        Command::Inspect { path } => cmd_inspect(&path),
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit status after printing output or the error line.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            let err = CliError::Usage(first.to_string());
            eprintln!("{}", err.line());
            return err.exit_code();
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests;
