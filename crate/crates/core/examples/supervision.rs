//! Splits an atom-mapped reaction into product, external group, external
//! bonds and broken bonds, then rebuilds the reactants by post-adaptation.
//!
//! ```text
//! cargo run --example supervision -- 'CC(=O)[NH:1][CH3:2]>>[NH2:1][CH3:2]'
//! ```

use std::collections::BTreeSet;

use retrodiff::molgraph::{canonical_form, write_molecule};
use retrodiff::pipeline::{adapt_sites, post_adapt};
use retrodiff::reaction::{extract_supervision, is_reconstructable, ReactionRecord};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let line = std::env::args().nth(1).unwrap_or_else(|| "Cl[CH2:1][CH2:2][CH2:3]Br>>[CH3:1][CH2:2][CH3:3]".to_string());
    let record = ReactionRecord::from_line(&line)?;
    let target = extract_supervision(&record)?;
    println!("product    {}", write_molecule(&record.product)?);
    println!("reactants  {}", write_molecule(&record.reactants)?);
    println!("group      {} ({} atoms)", write_molecule(&target.group)?, target.group_size());
    println!("external   {:?}", target.external_bonds);
    println!("sites      {:?}", target.reaction_sites());
    println!("broken     {:?}", target.broken_bonds);
    println!("changed    {:?}", target.changed_bonds);

    let sites: BTreeSet<usize> = target.reaction_sites().into_iter().collect();
    let report = adapt_sites(&record.product, &sites);
    println!("rule-broken {:?}, invalid sites {}", report.broken_bonds, report.invalid_sites);

    let rebuilt = post_adapt(&record.product, &target.group, &target.external_bonds)?;
    let same = canonical_form(&rebuilt.reactants) == canonical_form(&record.reactants);
    println!("rebuilt    {}", write_molecule(&rebuilt.reactants)?);
    println!("matches reactants: {same}; reconstructable: {}", is_reconstructable(&record.product, &target));
    Ok(())
}
