//! Regenerates the shipped data files from the synthetic corpus builders.
//!
//! ```text
//! cargo run --example make_corpora -- crates/core/data
//! ```

use std::path::PathBuf;

use retrodiff::synth;

fn main() -> std::io::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"));
    std::fs::create_dir_all(&dir)?;
    let files = [
        ("toy20.rxn", synth::toy_corpus(synth::TOY_SEED)),
        ("corpus200.rxn", synth::mixed_corpus(synth::MIXED_SEED)),
        ("smiles200.txt", synth::smiles_text(synth::SMILES_SEED)),
    ];
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, &text)?;
        println!("{} ({} lines)", path.display(), text.lines().count());
    }
    Ok(())
}
