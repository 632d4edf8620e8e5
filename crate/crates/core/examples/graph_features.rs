//! Structural and chemical side features of a molecule: cycle counts,
//! Laplacian spectrum summaries, valence and the diffusion-time channel.
//!
//! ```text
//! cargo run --example graph_features -- 'C1CC2CCC1C2O'
//! ```

use retrodiff::features::{adjacency, compute_features, cycle_counts, laplacian_spectrum, NODE_EXTRA};
use retrodiff::molgraph::parse_molecule;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let smiles = std::env::args().nth(1).unwrap_or_else(|| "C1CC2CCC1C2O".to_string());
    let g = parse_molecule(&smiles)?.graph;
    let (a, d) = adjacency(&g);

    let cycles = cycle_counts(&a, &d);
    println!("graph cycles: 3:{} 4:{} 5:{} 6:{}", cycles.y3, cycles.y4, cycles.y5, cycles.y6);
    let spectrum = laplacian_spectrum(&a)?;
    println!("connected components (zero eigenvalues): {}", spectrum.zero_multiplicity());
    let values: Vec<String> = spectrum.values.iter().map(|v| format!("{v:.3}")).collect();
    println!("Laplacian spectrum: {}", values.join(" "));

    let features = compute_features(&g, 250, 500)?;
    println!("\nnode\tatom\tx3\tx4\tx5\textras ({NODE_EXTRA} per node)");
    for i in 0..g.n() {
        let row: Vec<String> = features.node_row(i).iter().map(|v| format!("{v:.3}")).collect();
        println!("{i}\t{}\t{}\t{}\t{}\t{}", g.atom(i), cycles.x3[i], cycles.x4[i], cycles.x5[i], row.join(" "));
    }
    let global: Vec<String> = features.graph_extra.iter().map(|v| format!("{v:.3}")).collect();
    println!("graph extras: {}", global.join(" "));
    Ok(())
}
