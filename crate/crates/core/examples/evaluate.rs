//! Top-k accuracy and validity of a checkpoint on a reaction corpus.
//!
//! ```text
//! cargo run --release --example evaluate -- toy20.rdck data/toy20.rxn 10
//! ```

use retrodiff::denoiser::load_checkpoint;
use retrodiff::evalrank::{rank_and_evaluate, EvalCase, EvalOptions};
use retrodiff::molgraph::write_molecule;
use retrodiff::pipeline::RetroModel;
use retrodiff::reaction::load_corpus;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let checkpoint = args.next().unwrap_or_else(|| "toy20.rdck".to_string());
    let corpus = args.next().unwrap_or_else(|| "data/toy20.rxn".to_string());
    let samples: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);

    let model = RetroModel::from_checkpoint(load_checkpoint(checkpoint.as_ref())?)?;
    let records = load_corpus(corpus.as_ref())?;
    let cases = records.iter().map(EvalCase::from_record).collect::<Result<Vec<_>, _>>()?;
    let options = EvalOptions { samples_per_case: samples, ..EvalOptions::default() };
    let (metrics, results) = rank_and_evaluate(&model, &model.vocab, &model.config, &cases, &options)?;

    for r in results.iter().filter(|r| r.reconstructable && !r.hit(1)) {
        let truth = write_molecule(&cases[r.index].reactants).unwrap_or_default();
        let top = r.ranked.first().map(|c| write_molecule(&c.candidate.reactants).unwrap_or_default());
        println!("miss: case {} truth {truth} top-1 {}", r.index, top.unwrap_or_default());
    }
    print!("{}", metrics.to_text());
    Ok(())
}
