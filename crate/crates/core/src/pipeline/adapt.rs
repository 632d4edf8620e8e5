//! Rule-based post-adaptation: product atoms touched by an external bond are
//! reaction sites, and a product bond joining two sites is broken.

use std::collections::BTreeSet;

use crate::molgraph::{splice, BondOrder, GraphError, MolGraph};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AdaptReport {
    /// Product atoms carrying at least one external bond, ascending.
    pub sites: Vec<usize>,
    /// Deleted product bonds `(u, v)`, `u < v`, ascending.
    pub broken_bonds: Vec<(usize, usize)>,
    /// Two or more sites, at least one of which has no adjacent site.
    pub invalid_sites: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptOutcome {
    /// Product with broken bonds removed, followed by the group atoms and external bonds.
    pub reactants: MolGraph,
    pub report: AdaptReport,
}

/// Site and bond-breaking decisions for a product and a set of site atoms.
pub fn adapt_sites(product: &MolGraph, sites: &BTreeSet<usize>) -> AdaptReport {
    let mut broken = Vec::new();
    let mut paired = BTreeSet::new();
    for (u, v, _) in product.bonds() {
        if sites.contains(&u) && sites.contains(&v) {
            broken.push((u.min(v), u.max(v)));
            paired.insert(u);
            paired.insert(v);
        }
    }
    broken.sort_unstable();
    AdaptReport {
        sites: sites.iter().copied().collect(),
        broken_bonds: broken,
        invalid_sites: sites.len() >= 2 && paired.len() < sites.len(),
    }
}

/// Applies the rules and assembles the reactant graph.
///
/// `external_bonds` are `(group node, product node, order)` with group nodes
/// indexed within `group`.
pub fn post_adapt(
    product: &MolGraph,
    group: &MolGraph,
    external_bonds: &[(usize, usize, BondOrder)],
) -> Result<AdaptOutcome, GraphError> {
    let n = product.n();
    for &(g, p, _) in external_bonds {
        if p >= n {
            return Err(GraphError::NodeOutOfRange { index: p, n });
        }
        if g >= group.n() {
            return Err(GraphError::NodeOutOfRange { index: g, n: group.n() });
        }
    }
    let sites: BTreeSet<usize> = external_bonds.iter().filter(|e| !e.2.is_none()).map(|e| e.1).collect();
    let report = adapt_sites(product, &sites);
    let mut cut = product.clone();
    for &(u, v) in &report.broken_bonds {
        cut.set_bond(u, v, BondOrder::None);
    }
    let cross: Vec<_> =
        external_bonds.iter().filter(|e| !e.2.is_none()).map(|&(g, p, o)| (n + g, p, o)).collect();
    let reactants = splice(&[&cut, group], &cross)?;
    Ok(AdaptOutcome { reactants, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{parse_molecule, Atom, Element, NodeTag};

    fn halide() -> MolGraph {
        MolGraph::from_atoms([Atom::Real(Element::Cl)], NodeTag::Group)
    }

    #[test]
    fn adjacent_sites_break() {
        let p = parse_molecule("CCOC").unwrap().graph;
        let group = MolGraph::from_atoms([Atom::Real(Element::Cl), Atom::Real(Element::Br)], NodeTag::Group);
        let out = post_adapt(&p, &group, &[(0, 1, BondOrder::Single), (1, 2, BondOrder::Single)]).unwrap();
        assert_eq!(out.report.broken_bonds, vec![(1, 2)]);
        assert!(!out.report.invalid_sites);
        assert_eq!(out.reactants.bond(1, 2), BondOrder::None);
        assert_eq!(out.reactants.bond(4, 1), BondOrder::Single);
        assert_eq!(out.reactants.components().len(), 2);
    }

    #[test]
    fn single_site_is_neither_broken_nor_flagged() {
        let p = parse_molecule("CCO").unwrap().graph;
        let out = post_adapt(&p, &halide(), &[(0, 2, BondOrder::Single)]).unwrap();
        assert!(out.report.broken_bonds.is_empty());
        assert!(!out.report.invalid_sites);
        assert_eq!(out.reactants.bond_count(), 3);
    }

    #[test]
    fn non_adjacent_sites_are_flagged() {
        let p = parse_molecule("CCCC").unwrap().graph;
        let group = MolGraph::from_atoms([Atom::Real(Element::Cl), Atom::Real(Element::Cl)], NodeTag::Group);
        let out = post_adapt(&p, &group, &[(0, 0, BondOrder::Single), (1, 3, BondOrder::Single)]).unwrap();
        assert!(out.report.broken_bonds.is_empty());
        assert!(out.report.invalid_sites);
    }

    #[test]
    fn out_of_range_bond_is_rejected() {
        let p = parse_molecule("CC").unwrap().graph;
        assert!(post_adapt(&p, &halide(), &[(0, 5, BondOrder::Single)]).is_err());
        assert!(post_adapt(&p, &halide(), &[(3, 0, BondOrder::Single)]).is_err());
    }
}
