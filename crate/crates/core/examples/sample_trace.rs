//! Samples reactant candidates for one product, ranks them, and writes the
//! denoising trajectory of the best one as MGF text and an SVG strip.
//!
//! ```text
//! cargo run --release --example sample_trace -- toy20.rdck 'CC(C)CO' 10
//! ```

use retrodiff::denoiser::load_checkpoint;
use retrodiff::evalrank::{propose, sample_seed};
use retrodiff::molgraph::{parse_molecule, write_molecule};
use retrodiff::pipeline::{render_svg, sample, write_mgf, RetroModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let checkpoint = args.next().unwrap_or_else(|| "toy20.rdck".to_string());
    let smiles = args.next().unwrap_or_else(|| "CC(C)CO".to_string());
    let samples: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);

    let model = RetroModel::from_checkpoint(load_checkpoint(checkpoint.as_ref())?)?;
    let product = parse_molecule(&smiles)?.graph;
    let seed = 0;
    let proposal = propose(&model, &model.vocab, &model.config, &product, seed, samples, 50)?;
    println!("rank\tscore\tcopies\tvalid\treactants");
    for (rank, c) in proposal.ranked.iter().enumerate() {
        let text = write_molecule(&c.candidate.reactants).unwrap_or_default();
        println!("{}\t{:.4}\t{}\t{}\t{text}", rank + 1, c.candidate.score.score, c.copies, c.candidate.valid);
    }

    let best = &proposal.ranked[0].candidate;
    let trace = sample(&model, &model.vocab, &model.config, &product, sample_seed(seed, best.sample), true)?;
    std::fs::write("trace.mgf", write_mgf(&trace.steps))?;
    std::fs::write("trace.svg", render_svg(&trace.steps, 25))?;
    println!("wrote trace.mgf and trace.svg ({} states)", trace.steps.len());
    Ok(())
}
