//! Times one forward pass and one forward+backward pass of the desk-scale denoiser.
//!
//! `PRODUCT` (kekulized SMILES), `SLOTS` (group budget) and `REPS` override the defaults.

use std::time::Instant;

use retrodiff::denoiser::{encode_input, Arch, DenoiserParams, Targets};
use retrodiff::features::compute_features;
use retrodiff::molgraph::{parse_molecule, splice, Atom, AtomVocab, Element, MolGraph, NodeTag};
use retrodiff::noise::FrozenMask;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = AtomVocab::new([Element::C, Element::N, Element::O, Element::Cl, Element::Br]);
    let smiles = std::env::var("PRODUCT").unwrap_or_else(|_| "CC(=O)NC1=CC=C(O)C=C1".to_string());
    let product = parse_molecule(&smiles)?.graph;
    let n_g = std::env::var("SLOTS").ok().and_then(|v| v.parse().ok()).unwrap_or(6);
    let slots = MolGraph::from_atoms(vec![Atom::Dummy; n_g], NodeTag::Group);
    let g = splice(&[&product, &slots], &[])?;
    let params = DenoiserParams::init(Arch::desk(vocab.len()), 0)?;
    println!("nodes {}, parameters {}", g.n(), params.parameter_count());

    let reps = std::env::var("REPS").ok().and_then(|v| v.parse().ok()).unwrap_or(50);
    let start = Instant::now();
    for t in 1..=reps {
        let features = compute_features(&g, t, 500)?;
        let input = encode_input(&g, &vocab, &features)?;
        params.forward(&input)?;
    }
    println!("forward: {:.2} ms", start.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let targets = Targets::from_graph(&g, &vocab, &FrozenMask::none(g.n()))?;
    let start = Instant::now();
    for t in 1..=reps {
        let features = compute_features(&g, t, 500)?;
        let input = encode_input(&g, &vocab, &features)?;
        params.loss_and_gradients(&input, &targets, 0.2)?;
    }
    println!("forward+backward: {:.2} ms", start.elapsed().as_secs_f64() * 1e3 / reps as f64);
    Ok(())
}
