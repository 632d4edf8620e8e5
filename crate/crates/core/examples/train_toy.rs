//! Trains both stages on a reaction corpus through the library API and saves
//! a checkpoint.
//!
//! ```text
//! cargo run --release --example train_toy -- data/toy20.rxn toy20.rdck
//! ```
//!
//! `GROUP_STEPS` and `BOND_STEPS` set the step counts (defaults 3000 and 1500).

use std::path::PathBuf;
use std::time::Instant;

use retrodiff::denoiser::{save_checkpoint, Arch};
use retrodiff::molgraph::MolGraph;
use retrodiff::pipeline::{prepare_templates, RetroModel, StageConfig, StageKind, TrainOptions, Trainer};
use retrodiff::reaction::{build_vocab, extract_supervision, group_budget, load_corpus};

fn env_steps(key: &str, default: usize) -> usize {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let corpus = args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data/toy20.rxn"));
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("toy20.rdck"));

    let records = load_corpus(&corpus)?;
    let targets = records.iter().map(extract_supervision).collect::<Result<Vec<_>, _>>()?;
    let budget = group_budget(&targets)?;
    let products: Vec<&MolGraph> = records.iter().map(|r| &r.product).collect();
    let (templates, skipped) = prepare_templates(&products, &targets, budget.n_g);
    let vocab = build_vocab(&records);
    println!("{} records, n_g = {}, {} over budget, vocabulary {:?}", records.len(), budget.n_g, skipped, vocab.symbols());

    let config = StageConfig::new(budget.n_g);
    let model = RetroModel::new(vocab.clone(), config, Arch::desk(vocab.len()), 0)?;
    let mut trainer = Trainer::new(model, &templates, TrainOptions::default())?;
    let start = Instant::now();
    for (kind, steps) in [(StageKind::Group, env_steps("GROUP_STEPS", 3000)), (StageKind::Bond, env_steps("BOND_STEPS", 1500))] {
        for chunk in 0..steps.div_ceil(500) {
            trainer.train_stage(kind, 500.min(steps - chunk * 500))?;
            let recent = &trainer.log[trainer.log.len().saturating_sub(100)..];
            let mean = recent.iter().map(|r| r.total).sum::<f64>() / recent.len() as f64;
            println!("{:>5} {} steps, mean loss {mean:.4} [{:.0}s]", trainer.steps_done(kind), kind.name(), start.elapsed().as_secs_f64());
        }
    }
    save_checkpoint(&trainer.model.to_checkpoint(), &out)?;
    println!("saved {}", out.display());
    Ok(())
}
