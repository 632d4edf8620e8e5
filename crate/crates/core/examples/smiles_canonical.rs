//! Parses SMILES strings, writes them back and groups them by canonical form.
//!
//! ```text
//! cargo run --example smiles_canonical -- 'OCC' 'C(O)C' 'CC=O'
//! ```

use std::collections::BTreeMap;

use retrodiff::molgraph::{canonical_form, is_valid, parse_molecule, write_molecule};

fn main() {
    let mut inputs: Vec<String> = std::env::args().skip(1).collect();
    if inputs.is_empty() {
        inputs = ["OCC", "C(O)C", "CC=O", "C1=CC=CC=C1", "C1CC1Cl", "[CH3:1][OH:2]"].map(String::from).to_vec();
    }
    let mut classes: BTreeMap<Vec<u8>, Vec<String>> = BTreeMap::new();
    for s in &inputs {
        match parse_molecule(s) {
            Ok(parsed) => {
                let g = parsed.graph;
                let written = write_molecule(&g).unwrap_or_else(|e| format!("<{e}>"));
                println!("{s:<16} -> {written:<16} atoms {} bonds {} valid {}", g.n(), g.bond_count(), is_valid(&g));
                classes.entry(canonical_form(&g).as_bytes().to_vec()).or_default().push(s.clone());
            }
            Err(e) => println!("{s:<16} -> error: {e}"),
        }
    }
    println!("\n{} distinct molecules", classes.len());
    for members in classes.values() {
        println!("  {}", members.join("  "));
    }
}
